mod common;

use common::*;
use scr_core::harness::{
    self, compare_summary, plot_series, ExperimentConfig, ExperimentKind, Variant, MANIFEST_FILE, SUMMARY_FILE,
};
use scr_core::metrics::{MetricReport, ReportMetadata};
use scr_core::ScrError;

fn report(model_id: &str, seed: u64, grid: &[f64], values: &[f64]) -> MetricReport {
    MetricReport {
        name: "consistency_vs_length".into(),
        grid_name: "seq_len".into(),
        value_name: "score".into(),
        grid: grid.to_vec(),
        values: values.to_vec(),
        metadata: ReportMetadata { seed, model_id: model_id.into(), config_hash: "h".into() },
    }
}

#[test]
fn shipped_configs_parse_and_validate() {
    for kind in ExperimentKind::ALL {
        let c = ExperimentConfig::load(&config_path(kind)).unwrap();
        assert_eq!(c.experiment, kind);
        c.validate().unwrap();
        let again = ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.hash(), c.hash());
    }
}

#[test]
fn config_errors() {
    let mut c = tiny_experiment(ExperimentKind::ConsistencyVsLength, &[0]);
    let h = c.hash();
    c.seeds.clear();
    assert!(matches!(c.validate(), Err(ScrError::Config(_))));
    c.seeds = vec![0];
    c.train.learning_rate += 0.01;
    assert_ne!(c.hash(), h);

    let mut long = tiny_experiment(ExperimentKind::ConsistencyVsLength, &[0]);
    long.grid.lengths = Some(vec![64, 512]);
    assert!(matches!(long.validate(), Err(ScrError::Config(_))));

    let text = std::fs::read_to_string(config_path(ExperimentKind::EntropyProfile)).unwrap();
    assert!(matches!(ExperimentConfig::from_toml(&(text + "\nbogus = 1\n")), Err(ScrError::Config(_))));
}

#[test]
fn plot_single_and_multiple_series() {
    let grid: Vec<f64> = (1..=6).map(f64::from).collect();
    let vals = [0.1, 1.0 / 3.0, 2.5, 1e-12, 7.0, 42.125];
    let one = report("scr", 0, &grid, &vals);
    let text = plot_series(std::slice::from_ref(&one)).unwrap();
    assert_eq!(text.lines().count(), 6);
    let csv_rows: Vec<String> = one.to_csv().lines().skip(1).map(|l| l.replace(',', " ")).collect();
    assert_eq!(text.lines().collect::<Vec<_>>(), csv_rows);

    let three: Vec<MetricReport> = ["baseline", "scr", "other"].iter().map(|m| report(m, 1, &grid, &vals)).collect();
    let text = plot_series(&three).unwrap();
    let blocks: Vec<&str> = text.split("\n\n").collect();
    assert_eq!(blocks.len(), 3);
    for (b, m) in blocks.iter().zip(["baseline", "scr", "other"]) {
        let mut lines = b.lines();
        assert_eq!(lines.next().unwrap(), format!("# {m} seed1"));
        assert_eq!(lines.filter(|l| !l.is_empty()).count(), 6);
    }

    let bad = [one.clone(), report("scr", 1, &grid[..5], &vals[..5])];
    assert!(matches!(plot_series(&bad), Err(ScrError::Data(_))));
}

#[test]
fn compare_examples() {
    let grid = [1.0, 2.0, 3.0];
    let a = report("baseline", 0, &grid, &[1.0, 2.0, 3.0]);
    let s = compare_summary(std::slice::from_ref(&a), std::slice::from_ref(&a)).unwrap();
    assert!(s.rows.iter().all(|r| r.delta == 0.0));
    let b = report("scr", 0, &grid, &[2.0, 3.0, 4.0]);
    let s = compare_summary(&[a], &[b]).unwrap();
    assert!(s.rows.iter().all(|r| r.delta == 1.0));
    assert_eq!(s.mean_delta, 1.0);

    let base = [
        report("baseline", 0, &grid, &[1.0, 5.0, 0.0]),
        report("baseline", 1, &grid, &[2.0, 6.0, 0.5]),
        report("baseline", 2, &grid, &[6.0, 7.0, 1.0]),
    ];
    let scr = [
        report("scr", 0, &grid, &[0.0, 9.0, 1.0]),
        report("scr", 1, &grid, &[0.0, 9.0, 1.0]),
        report("scr", 2, &grid, &[3.0, 9.0, 1.0]),
    ];
    let s = compare_summary(&base, &scr).unwrap();
    assert_eq!(s.seeds, 3);
    let want = [(3.0, 1.0), (6.0, 9.0), (0.5, 1.0)];
    for (r, (b, c)) in s.rows.iter().zip(want) {
        assert!((r.baseline - b).abs() < 1e-12 && (r.scr - c).abs() < 1e-12);
        assert!((r.delta - (c - b)).abs() < 1e-12);
    }
    assert!(s.to_markdown("t").contains("| seq_len | baseline | scr | delta |"));
}

#[test]
fn variants_share_the_initialization() {
    let mut c = tiny_experiment(ExperimentKind::ConsistencyVsLength, &[4]);
    c.train.warmup_steps = 0;
    c.train.finetune_steps = 0;
    let a = harness::train_variant(&c, 4, Variant::Baseline).unwrap();
    let b = harness::train_variant(&c, 4, Variant::Scr).unwrap();
    assert_eq!(a.params, b.params);
    let other = harness::train_variant(&c, 5, Variant::Scr).unwrap();
    assert_ne!(a.params, other.params);
}

#[test]
fn run_is_reproducible() {
    let c = tiny_experiment(ExperimentKind::ConsistencyVsLength, &[0, 1]);
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let m1 = harness::run_experiment(&c, d1.path()).unwrap();
    let m2 = harness::run_experiment(&c, d2.path()).unwrap();
    assert_eq!(m1, m2);
    assert!(m1.files.contains(&SUMMARY_FILE.to_string()));
    for f in m1.files.iter().map(String::as_str).chain([MANIFEST_FILE]) {
        let a = std::fs::read(d1.path().join(f)).unwrap();
        assert_eq!(a, std::fs::read(d2.path().join(f)).unwrap(), "{f}");
    }
    let (base, scr) = harness::load_reports(&c, d1.path()).unwrap();
    assert_eq!(base.len(), 2);
    assert!(scr.iter().all(|r| r.grid == [64.0, 128.0, 256.0] && r.metadata.model_id == "scr"));
}
