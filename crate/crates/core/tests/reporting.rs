use std::path::PathBuf;

use camscope::cam::CamMethod;
use camscope::dataset::ClassRegistry;
use camscope::metrics::{confusion, report, Averaging, MetricsReport};
use camscope::reporting::{
    comparison_table, confusion_image, explanation_panel, performance_chart, png_bytes, round_half_even, write_json,
    ReportError, RunArtifact, RunLayout, RunMetrics, LABEL_BAND, TABLE_PLACES,
};
use camscope::training::{EpochRecord, TrainLog};
use image::{Rgb, RgbImage};

fn metrics(acc: f64, f1: f64) -> MetricsReport {
    let reg = ClassRegistry::new(vec!["a".into(), "b".into()]).unwrap();
    let mut r = report(&confusion(&[0, 1], &[0, 1], &reg).unwrap(), Averaging::Weighted).unwrap();
    r.accuracy = acc;
    r.precision = acc;
    r.recall = acc;
    r.f1 = f1;
    r.jaccard = f1 / (2.0 - f1);
    r
}

fn artifact(name: &str, acc: f64, f1: f64) -> RunArtifact {
    RunArtifact {
        model: name.into(),
        run_dir: PathBuf::from(name),
        checkpoint: PathBuf::from(name).join("checkpoint"),
        metrics: metrics(acc, f1),
        train_log: TrainLog::from_records(vec![]),
        explanations: vec![],
    }
}

#[test]
fn table_flags_and_formats() {
    let t = comparison_table(&[artifact("solo", 1.0, 1.0)]).unwrap();
    assert!(t.rows[0].best);
    assert_eq!(t.rows[0].formatted(), ["1.0000"; 5].map(String::from));

    let t = comparison_table(&[
        artifact("DenseNet169", 0.9983, 0.9983),
        artifact("MobileNetV3", 0.9258, 0.9262),
    ])
    .unwrap();
    assert!(t.rows[0].best && !t.rows[1].best);
    assert!(t.to_text().contains("DenseNet169 *"));

    let t = comparison_table(&[
        artifact("b", 0.9, 0.80),
        artifact("a", 0.9, 0.80),
        artifact("c", 0.9, 0.85),
        artifact("d", 0.8, 0.99),
    ])
    .unwrap();
    assert_eq!(t.best().model, "c");
    let t = comparison_table(&[artifact("b", 0.9, 0.8), artifact("a", 0.9, 0.8)]).unwrap();
    assert_eq!(t.best().model, "a");

    assert!(matches!(comparison_table(&[]), Err(ReportError::NoArtifacts(1))));
}

#[test]
fn printed_numbers_are_half_even_roundings_of_the_report() {
    let arts = [artifact("x", 0.99665, 0.92575), artifact("y", 0.123_449_9, 0.5)];
    let t = comparison_table(&arts).unwrap();
    let csv = t.to_csv();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "Model,Accuracy,Precision,Recall,F1-Score,Jaccard Score,Best"
    );
    for (line, a) in lines.zip(&arts) {
        let cells: Vec<&str> = line.split(',').collect();
        let m = &a.metrics;
        for (cell, v) in cells[1..6]
            .iter()
            .zip([m.accuracy, m.precision, m.recall, m.f1, m.jaccard])
        {
            assert_eq!(cell.len(), 6);
            assert_eq!(cell.parse::<f64>().unwrap(), round_half_even(v, TABLE_PLACES));
        }
    }
    assert!(csv.contains("x,0.9966,0.9966,0.9966,0.9258,"));
    let text = t.to_text();
    let widths: Vec<usize> = text.lines().take(4).skip(2).map(|l| l.len()).collect();
    assert_eq!(widths[0], widths[1]);
}

fn overlay(seed: u8, side: u32) -> RgbImage {
    RgbImage::from_fn(side, side, |x, y| Rgb([seed, (x * 3) as u8, (y * 5) as u8]))
}

#[test]
fn panel_layout_and_determinism() {
    let side = 40;
    let same: Vec<(CamMethod, RgbImage)> = CamMethod::ALL.iter().map(|m| (*m, overlay(7, side))).collect();
    let p = explanation_panel(&same).unwrap();
    assert_eq!(p.dimensions(), (2 * side, 2 * (side + LABEL_BAND)));
    let quadrant = |qx: u32, qy: u32| {
        let oy = qy * (side + LABEL_BAND) + LABEL_BAND;
        image::imageops::crop_imm(&p, qx * side, oy, side, side).to_image()
    };
    let q0 = quadrant(0, 0);
    assert_eq!(q0, overlay(7, side));
    for (qx, qy) in [(1, 0), (0, 1), (1, 1)] {
        assert_eq!(quadrant(qx, qy), q0);
    }
    let again = explanation_panel(&same).unwrap();
    assert_eq!(png_bytes(&p).unwrap(), png_bytes(&again).unwrap());

    let missing: Vec<_> = same
        .iter()
        .filter(|(m, _)| *m != CamMethod::ScoreCam)
        .cloned()
        .collect();
    let err = explanation_panel(&missing).unwrap_err();
    assert!(err.to_string().contains("ScoreCAM"));
}

#[test]
fn chart_bars_and_determinism() {
    let t = comparison_table(&[artifact("m1", 0.95, 0.9), artifact("m2", 1.3, 0.5)]).unwrap();
    let c = performance_chart(&t).unwrap();
    assert_eq!(c.bars.len(), 10);
    let top = c
        .bars
        .iter()
        .find(|b| b.model == "m2" && b.metric == "Accuracy")
        .unwrap();
    assert_eq!(top.value, 1.0);
    let full = c.bars.iter().map(|b| b.h).max().unwrap();
    assert_eq!(top.h, full);
    let again = performance_chart(&t).unwrap();
    assert_eq!(png_bytes(&c.image).unwrap(), png_bytes(&again.image).unwrap());
    let one = comparison_table(&[artifact("m1", 0.95, 0.9)]).unwrap();
    assert!(matches!(performance_chart(&one), Err(ReportError::NoArtifacts(2))));
}

#[test]
fn confusion_grid_is_deterministic() {
    let reg = ClassRegistry::new(vec!["glioma".into(), "menin".into(), "tumor".into()]).unwrap();
    let cm = confusion(&[0, 0, 1, 2, 2, 2], &[0, 1, 1, 2, 2, 0], &reg).unwrap();
    let a = confusion_image(&cm);
    let b = confusion_image(&cm);
    assert_eq!(png_bytes(&a).unwrap(), png_bytes(&b).unwrap());
    assert!(a.width() > 3 * 56 && a.height() > 3 * 56);
}

#[test]
fn run_artifact_loads_from_a_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let layout = RunLayout::new(dir.path());
    assert!(matches!(
        RunArtifact::load(dir.path()),
        Err(ReportError::MalformedRun { .. })
    ));

    let log = TrainLog::from_records(vec![EpochRecord {
        epoch: 0,
        train_loss: 1.0,
        train_accuracy: 0.5,
        val_loss: 0.9,
        val_accuracy: 0.6,
        wall_time_s: 0.1,
    }]);
    std::fs::write(layout.trainlog(), log.to_jsonl()).unwrap();
    std::fs::write(layout.checkpoint(), b"x").unwrap();
    let m = RunMetrics {
        model: "ResNet50".into(),
        split: "test".into(),
        n_items: 2,
        report: metrics(0.5, 0.5),
    };
    write_json(&layout.metrics(), &m).unwrap();
    let a = RunArtifact::load(dir.path()).unwrap();
    assert_eq!(a.model, "ResNet50");
    assert_eq!(a.metrics, m.report);
    assert_eq!(a.train_log, log);

    std::fs::write(layout.metrics(), "{").unwrap();
    let err = RunArtifact::load(dir.path()).unwrap_err();
    assert!(err.to_string().contains(&dir.path().display().to_string()));
}
