//! Frozen HTML rendering.

use std::path::PathBuf;

use cohkern::explain::{normalize_intensity, render_html, write_html, ExplanationDoc, WeightMode};

fn doc() -> ExplanationDoc<f64> {
    ExplanationDoc {
        tokens: vec!["a".into(), "<superb>".into()],
        predicted: 1,
        class_name: Some("positive".into()),
        probability: 0.875,
        words: normalize_intensity(&[0.0, 3.5]),
        mode: WeightMode::Unit,
    }
}

#[test]
fn matches_golden_file() {
    let d = doc();
    assert_eq!(d.words.intensities, vec![0, 255]);
    let golden = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/explain_golden.html");
    if std::env::var_os("COHKERN_BLESS").is_some() {
        std::fs::write(&golden, render_html(std::slice::from_ref(&d))).unwrap();
    }
    let want = std::fs::read_to_string(&golden).unwrap();
    assert_eq!(render_html(std::slice::from_ref(&d)), want);

    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("e.html");
    write_html(&[d], &out).unwrap();
    assert_eq!(std::fs::read_to_string(&out).unwrap(), want);
    assert!(write_html(&[doc()], &dir.path().join("missing/e.html")).is_err());
}
