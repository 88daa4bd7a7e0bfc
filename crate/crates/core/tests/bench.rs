use romt_core::bench::{
    compare_modes, saving_percent, scaled_sphere_suite, BenchConfig, BenchMode, BenchReport, BenchRow,
};
use romt_core::RomtConfig;
use tempfile::tempdir;

fn row(scale: f64, mode: BenchMode, secs: f64) -> BenchRow {
    BenchRow {
        scale,
        dims: [25; 3],
        mode,
        wall_seconds: secs,
        gn_iters: 1,
        pcg_iters_total: 1,
        workers: 1,
        final_cost: 0.0,
        error: None,
    }
}

#[test]
fn saving_arithmetic() {
    assert!((saving_percent(100.0, 9.0) - 91.0).abs() < 1e-12);
    assert_eq!(saving_percent(5.0, 5.0), 0.0);

    let report = BenchReport {
        rows: vec![
            row(0.5, BenchMode::Naive, 100.0),
            row(0.5, BenchMode::Cached, 9.0),
            row(0.75, BenchMode::Cached, 3.0),
        ],
    };
    let (savings, notes) = compare_modes(&report);
    assert_eq!(savings.len(), 1);
    assert!((savings[0].percent - 91.0).abs() < 1e-12);
    assert_eq!(notes.len(), 1);
    assert!(notes[0].contains("0.75"));
}

#[test]
fn mode_names_parse() {
    for m in BenchMode::ALL {
        assert_eq!(m.name().parse::<BenchMode>().unwrap(), m);
    }
    assert!("fast".parse::<BenchMode>().is_err());
}

#[test]
fn small_suite_runs_every_mode() {
    let cfg = BenchConfig {
        romt: RomtConfig {
            m: 2,
            max_gn_iters: 2,
            ..RomtConfig::default()
        },
        frames: 3,
        workers: 2,
    };
    let report = scaled_sphere_suite(&[0.2], &BenchMode::ALL, &cfg).unwrap();
    assert_eq!(report.rows.len(), 3);
    for r in &report.rows {
        assert_eq!(r.dims, [10, 10, 10]);
        assert!(r.wall_seconds > 0.0);
        assert!(r.error.is_none());
    }
    let naive = report.row(0.2, BenchMode::Naive).unwrap();
    let cached = report.row(0.2, BenchMode::Cached).unwrap();
    assert_eq!(naive.final_cost, cached.final_cost);
    assert_eq!(naive.pcg_iters_total, cached.pcg_iters_total);
    assert_eq!(report.row(0.2, BenchMode::CachedParallel).unwrap().workers, 2);

    let dir = tempdir().unwrap();
    let path = dir.path().join("bench.csv");
    report.write_csv(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("scale,dims,mode,wall_seconds,gn_iters,pcg_iters_total,workers,final_cost,error"));
    assert_eq!(text.lines().count(), 4);

    assert!(scaled_sphere_suite(&[0.0], &[BenchMode::Cached], &cfg).is_err());
}

#[test]
fn failed_runs_are_recorded() {
    let cfg = BenchConfig {
        romt: RomtConfig {
            k_t: -1.0,
            ..RomtConfig::default()
        },
        frames: 2,
        workers: 1,
    };
    let report = scaled_sphere_suite(&[0.2], &[BenchMode::Cached], &cfg).unwrap();
    assert_eq!(report.rows.len(), 1);
    assert!(report.rows[0].error.is_some());
    let (savings, notes) = compare_modes(&report);
    assert!(savings.is_empty());
    assert_eq!(notes.len(), 1);
}
