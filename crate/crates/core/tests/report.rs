mod common;

use common::fixture_report;
use fti_core::eval::report::*;
use fti_core::eval::Protocol;

#[test]
fn jsonl_round_trip_is_exact() {
    let rep = fixture_report();
    let text = rep.to_jsonl().unwrap();
    assert_eq!(text.lines().count(), 4);
    let back = Report::from_jsonl(&text).unwrap();
    assert_eq!(back, rep);
    assert_eq!(back.to_jsonl().unwrap(), text);
    assert!(text.contains("0.19997557997703552"));
}

#[test]
fn markdown_round_trip_is_byte_stable() {
    let rep = fixture_report();
    let md = rep.to_markdown().unwrap();
    let back = Report::from_markdown(&md).unwrap();
    assert_eq!(back.to_markdown().unwrap(), md);
    assert_eq!(back.records.len(), rep.records.len());
    assert!(md.contains("0.9937"));
    assert!(md.contains("65.23"));
    assert!(md.contains("0.2087"));
    assert!(md.contains("0.19997558"));
}

#[test]
fn markdown_values_survive_at_printed_precision() {
    let back = Report::from_markdown(&fixture_report().to_markdown().unwrap()).unwrap();
    for r in &back.records {
        match r {
            Record::Verification(v) => {
                assert_eq!(v.tar, 0.9937);
                assert_eq!(v.far, 0.001);
                assert_eq!(v.protocol, Protocol::Type1);
                assert_eq!((v.f_database.as_str(), v.f_loss.as_str()), ("ArcFace", "ElasticFace"));
            }
            Record::Transfer(t) => {
                assert!((t.tar - 0.6523).abs() < 1e-12);
                assert_eq!(t.f_target, "HRNet");
            }
            Record::RegionSimilarity(g) => {
                let eyes = g.regions.iter().find(|s| s.region == "eyes").unwrap();
                assert_eq!(eyes.value, 0.2087);
                assert_eq!(g.regions.len(), 5);
            }
            Record::Threshold(t) => {
                assert!((t.threshold - 0.19997557997703552).abs() < 5e-9);
                assert_eq!(t.dataset, "CelebA-HQ");
            }
            Record::Ablation(_) => panic!("unexpected ablation row"),
        }
    }
}

#[test]
fn ablation_rows_render_missing_metrics() {
    let mut rep = Report::new();
    rep.push(Record::Ablation(AblationRow {
        table: "Ablation".into(),
        variant: "Full".into(),
        type1: Some(0.5),
        train_loss: Some(1.25),
        ..Default::default()
    }));
    rep.push(Record::Ablation(AblationRow {
        table: "Ablation".into(),
        variant: "w/o attention".into(),
        type1: Some(0.25),
        ..Default::default()
    }));
    let md = rep.to_markdown().unwrap();
    assert!(md.contains("n/a"));
    let back = Report::from_markdown(&md).unwrap();
    assert_eq!(back.to_markdown().unwrap(), md);
    assert_eq!(Report::from_jsonl(&rep.to_jsonl().unwrap()).unwrap(), rep);
}

#[test]
fn save_and_load() {
    let dir = tempfile::tempdir().unwrap();
    let (j, m) = (dir.path().join("metrics.jsonl"), dir.path().join("tables.md"));
    let rep = fixture_report();
    rep.save(&j, &m).unwrap();
    assert_eq!(Report::load_jsonl(&j).unwrap(), rep);
    assert_eq!(std::fs::read_to_string(&m).unwrap(), rep.to_markdown().unwrap());
}

#[test]
fn malformed_input_rejected() {
    assert!(Report::from_jsonl("{\"kind\":\"nope\"}").is_err());
    assert!(Report::from_jsonl("not json").is_err());
    assert!(Report::from_markdown("### Mystery\n\n| a |\n|---|\n| 1 |\n").is_err());
}
