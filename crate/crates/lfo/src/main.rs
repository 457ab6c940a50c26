fn main() {
    if let Err(e) = lfo::cli::run(std::env::args_os()) {
        eprintln!("lfo: {e}");
        std::process::exit(e.exit_code());
    }
}
