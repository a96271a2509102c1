use dcff_core::gradsuite;

#[test]
fn every_case_passes() {
    let reports = gradsuite::run(None).unwrap();
    assert_eq!(reports.len(), gradsuite::cases().len());
    for r in &reports {
        println!("{:<32} {:.3e}", r.op, r.max_rel_err());
        assert!(r.passed(), "{r:?}");
    }
}

#[test]
fn filter_selects_by_substring() {
    let reports = gradsuite::run(Some("softmax")).unwrap();
    assert_eq!(reports.len(), 2);
}
