use nslog_core::{run_suite, suite_csv};

#[test]
fn every_module_check_passes() {
    let rows = run_suite(None).unwrap();
    let modules: Vec<&str> = rows.iter().map(|r| r.module).collect();
    for m in [
        "grid",
        "field",
        "spectral",
        "spaces",
        "quad",
        "time",
        "duhamel",
        "families",
        "io",
        "mild",
        "perturbed",
        "galerkin",
        "splitting",
    ] {
        assert!(modules.contains(&m), "no check covers module {m}");
    }
    for r in &rows {
        assert!(
            r.pass,
            "{}/{} fails: {:.3e} > {:.3e}",
            r.module, r.name, r.value, r.threshold
        );
        assert!(r.value.is_finite() && r.value >= 0.0);
    }
}

#[test]
fn filter_selects_one_module_and_csv_is_parseable() {
    let rows = run_suite(Some("galerkin")).unwrap();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r.module == "galerkin"));

    let csv = suite_csv(&rows);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("module,name,value,threshold,pass"));
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols.len(), 5, "bad row: {line}");
        let value: f64 = cols[2].parse().unwrap();
        let thr: f64 = cols[3].parse().unwrap();
        assert!(value.is_finite() && thr.is_finite());
        assert!(cols[4] == "true" || cols[4] == "false");
    }

    assert!(run_suite(Some("no_such_module")).unwrap().is_empty());
}
