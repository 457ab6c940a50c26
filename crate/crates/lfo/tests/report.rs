use lfo::report::*;
use lfo::HarnessError;

fn sample() -> Report {
    let mut r = Report::default();
    let mut t = Table::new(["a", "b"]);
    t.push("first", vec![1.0, 0.5], "s", vec![7]);
    t.push("second <&>", vec![2.0 / 3.0, -1e-7], "s", vec![7, 8]);
    r.tables.insert("t".into(), t);
    r.curves.insert(
        "c".into(),
        Curves {
            x_label: "x & y".into(),
            y_label: "value".into(),
            series: vec![
                Series {
                    name: "one".into(),
                    points: vec![(0.0, 1.0), (1.0, 2.0), (2.0, 1.5)],
                },
                Series {
                    name: "<two>".into(),
                    points: vec![(0.0, 0.0), (2.0, 3.0)],
                },
            ],
            stage: "s".into(),
            seeds: vec![7],
        },
    );
    r
}

#[test]
fn svg_is_well_formed_and_self_contained() {
    let svg = curves_svg("title \"quoted\"", &sample().curves["c"]);
    let doc = roxmltree::Document::parse(&svg).unwrap();
    let lines = doc
        .descendants()
        .filter(|n| n.has_tag_name("polyline"))
        .count();
    assert_eq!(lines, 2);
    assert!(!svg.contains("href"));
}

#[test]
fn emitted_files() {
    let dir = tempfile::tempdir().unwrap();
    let written = emit_report(&sample(), dir.path()).unwrap();
    assert_eq!(written.len(), 4);
    let table = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("a,b,row,stage,seed"));
    assert_eq!(lines.next(), Some("1.00000,0.500000,first,s,7"));
    assert_eq!(lines.next(), Some("0.666667,-1.00000e-7,second <&>,s,7;8"));
    let curves = std::fs::read_to_string(dir.path().join("c.csv")).unwrap();
    assert_eq!(curves.lines().count(), 6);
    assert!(curves.starts_with("series,x,y,stage,seed\none,0.00000,1.00000,s,7"));
}

#[test]
fn empty_report_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        emit_report(&Report::default(), dir.path()),
        Err(HarnessError::Report(_))
    ));
}

#[test]
fn unwritable_directory_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("file");
    std::fs::write(&file, b"x").unwrap();
    assert!(matches!(
        emit_report(&sample(), &file.join("sub")),
        Err(HarnessError::Io { .. })
    ));
}
