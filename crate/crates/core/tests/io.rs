mod common;

use std::fs;
use std::path::Path;

use common::rng;
use rand::Rng;
use romt_core::io::{
    export_pathlines, gen_gaussian_spheres, import_nifti, load_frames, load_velocity_stack, load_volume,
    load_volume_stack, read_cost_history, read_series_outputs, save_velocity_stack, save_volume, save_volume_stack,
    sidecar_path, write_series_outputs, PathlineFormat, RunConfig, SphereSynthConfig,
};
use romt_core::lagrangian::Pathline;
use romt_core::solver::run_series;
use romt_core::{ChainMode, Grid, RomtConfig, RomtError, VelocityStack, Volume};
use tempfile::tempdir;

fn f32_volume(r: &mut impl Rng, grid: Grid) -> Volume {
    Volume::new(grid, (0..grid.len()).map(|_| r.random_range(0.0f32..10.0) as f64).collect()).unwrap()
}

#[test]
fn volume_round_trip_is_bit_exact() {
    let dir = tempdir().unwrap();
    let mut r = rng(1);
    let grid = Grid::with_spacing([8, 8, 8], 0.5, 0.125).unwrap();
    let vol = f32_volume(&mut r, grid);
    let path = dir.path().join("v.raw");
    save_volume(&vol, &path).unwrap();
    assert!(sidecar_path(&path).exists());
    let back = load_volume(&path).unwrap();
    assert_eq!(back.grid(), vol.grid());
    assert!(back.data().iter().zip(vol.data()).all(|(a, b)| a.to_bits() == b.to_bits()));

    let bytes = fs::read(&path).unwrap();
    let again = dir.path().join("again.raw");
    save_volume(&back, &again).unwrap();
    assert_eq!(fs::read(&again).unwrap(), bytes);
}

#[test]
fn header_spacing_round_trips_exactly() {
    let dir = tempdir().unwrap();
    let mut r = rng(11);
    let path = dir.path().join("s.raw");
    for _ in 0..200 {
        let h: f64 = r.random_range(0.01..5.0);
        let grid = Grid::with_spacing([2, 2, 2], h, h * h * h).unwrap();
        save_volume(&Volume::zeros(grid), &path).unwrap();
        assert_eq!(load_volume(&path).unwrap().grid(), &grid, "spacing {h:e}");
    }
}

#[test]
fn stacks_round_trip() {
    let dir = tempdir().unwrap();
    let mut r = rng(2);
    let grid = Grid::new([4, 3, 5]).unwrap();
    let v = VelocityStack::new(grid, 3, (0..9 * grid.len()).map(|_| r.random_range(-1.0f32..1.0) as f64).collect()).unwrap();
    save_velocity_stack(&v, dir.path().join("vel.raw")).unwrap();
    assert_eq!(load_velocity_stack(dir.path().join("vel.raw")).unwrap(), v);

    let vols: Vec<Volume> = (0..4).map(|_| f32_volume(&mut r, grid)).collect();
    save_volume_stack(&vols, dir.path().join("interp.raw")).unwrap();
    assert_eq!(load_volume_stack(dir.path().join("interp.raw")).unwrap(), vols);
    assert!(matches!(load_volume(dir.path().join("interp.raw")), Err(RomtError::Format { .. })));
}

fn write_fixture(dir: &Path, name: &str, header: &str, floats: usize) -> std::path::PathBuf {
    let path = dir.join(format!("{name}.raw"));
    let payload: Vec<u8> = (0..floats).flat_map(|i| (i as f32).to_le_bytes()).collect();
    fs::write(&path, payload).unwrap();
    fs::write(dir.join(format!("{name}.json")), header).unwrap();
    path
}

#[test]
fn fixture_payload_sizes() {
    let dir = tempdir().unwrap();
    let header = r#"{"dims": [2, 3, 4], "spacing": 1.0, "dtype": "float32_le", "order": "x_fastest"}"#;
    let ok = write_fixture(dir.path(), "ok", header, 24);
    let vol = load_volume(&ok).unwrap();
    assert_eq!(vol.grid().dims(), [2, 3, 4]);
    assert_eq!(vol.get(1, 2, 3), 23.0);
    assert_eq!(vol.get(1, 0, 0), 1.0);
    assert_eq!(vol.get(0, 1, 0), 2.0);

    let short = write_fixture(dir.path(), "short", header, 23);
    match load_volume(&short) {
        Err(RomtError::Format { msg, .. }) => {
            assert!(msg.contains("92") && msg.contains("96"), "{msg}");
        }
        other => panic!("expected format error, got {other:?}"),
    }
}

#[test]
fn corrupt_files_are_rejected() {
    let dir = tempdir().unwrap();
    let mut r = rng(3);
    let vol = f32_volume(&mut r, Grid::new([4, 4, 4]).unwrap());
    let path = dir.path().join("v.raw");
    save_volume(&vol, &path).unwrap();

    let mut bytes = fs::read(&path).unwrap();
    bytes.truncate(bytes.len() - 4);
    fs::write(&path, &bytes).unwrap();
    assert!(matches!(load_volume(&path), Err(RomtError::Format { .. })));

    bytes.extend_from_slice(&7.0f32.to_le_bytes());
    fs::write(&path, &bytes).unwrap();
    match load_volume(&path) {
        Err(RomtError::Format { msg, .. }) => assert!(msg.contains("checksum"), "{msg}"),
        other => panic!("expected checksum error, got {other:?}"),
    }

    fs::remove_file(sidecar_path(&path)).unwrap();
    assert!(matches!(load_volume(&path), Err(RomtError::Format { .. })));

    let header = r#"{"dims": [2, 2, 2], "spacing": 1.0, "dtype": "float64_le", "order": "x_fastest"}"#;
    let bad = write_fixture(dir.path(), "f64", header, 8);
    assert!(matches!(load_volume(&bad), Err(RomtError::UnsupportedFormat { field: "dtype", .. })));
}

#[allow(clippy::too_many_arguments)]
fn nifti_bytes(dims: [i16; 3], datatype: i16, bitpix: i16, pixdim: f32, slope: f32, inter: f32, payload: &[u8]) -> Vec<u8> {
    let mut h = vec![0u8; 352];
    h[0..4].copy_from_slice(&348i32.to_le_bytes());
    h[40..42].copy_from_slice(&3i16.to_le_bytes());
    for (d, v) in dims.iter().enumerate() {
        h[42 + 2 * d..44 + 2 * d].copy_from_slice(&v.to_le_bytes());
    }
    for d in 3..7 {
        h[42 + 2 * d..44 + 2 * d].copy_from_slice(&1i16.to_le_bytes());
    }
    h[70..72].copy_from_slice(&datatype.to_le_bytes());
    h[72..74].copy_from_slice(&bitpix.to_le_bytes());
    h[76..80].copy_from_slice(&1.0f32.to_le_bytes());
    for d in 1..4 {
        h[76 + 4 * d..80 + 4 * d].copy_from_slice(&pixdim.to_le_bytes());
    }
    h[108..112].copy_from_slice(&352.0f32.to_le_bytes());
    h[112..116].copy_from_slice(&slope.to_le_bytes());
    h[116..120].copy_from_slice(&inter.to_le_bytes());
    h[344..348].copy_from_slice(b"n+1\0");
    h.extend_from_slice(payload);
    h
}

#[test]
fn nifti_float_fixture() {
    let dir = tempdir().unwrap();
    let values: Vec<f32> = (0..27).map(|i| i as f32 * 0.5 - 3.0).collect();
    let payload: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    let path = dir.path().join("f.nii");
    fs::write(&path, nifti_bytes([3, 3, 3], 16, 32, 2.0, 0.0, 0.0, &payload)).unwrap();
    let vol = import_nifti(&path).unwrap();
    assert_eq!(vol.grid().dims(), [3, 3, 3]);
    assert_eq!(vol.grid().spacing(), 2.0);
    for k in 0..3 {
        for j in 0..3 {
            for i in 0..3 {
                assert_eq!(vol.get(i, j, k), values[i + 3 * j + 9 * k] as f64);
            }
        }
    }
}

#[test]
fn nifti_int16_scaling() {
    let dir = tempdir().unwrap();
    let values: Vec<i16> = (0..24).map(|i| i as i16 - 5).collect();
    let payload: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    let path = dir.path().join("i.nii");
    fs::write(&path, nifti_bytes([2, 3, 4], 4, 16, 1.0, 2.0, 1.0, &payload)).unwrap();
    let vol = import_nifti(&path).unwrap();
    for (got, v) in vol.data().iter().zip(&values) {
        assert_eq!(*got, 2.0 * *v as f64 + 1.0);
    }
}

#[test]
fn nifti_rejections() {
    let dir = tempdir().unwrap();
    let payload = vec![0u8; 27 * 4];
    let mut bad_magic = nifti_bytes([3, 3, 3], 16, 32, 1.0, 0.0, 0.0, &payload);
    bad_magic[344..348].copy_from_slice(b"ni1\0");
    let p = dir.path().join("magic.nii");
    fs::write(&p, bad_magic).unwrap();
    assert!(matches!(import_nifti(&p), Err(RomtError::Format { .. })));

    let p = dir.path().join("f64.nii");
    fs::write(&p, nifti_bytes([3, 3, 3], 64, 64, 1.0, 0.0, 0.0, &vec![0u8; 27 * 8])).unwrap();
    assert!(matches!(import_nifti(&p), Err(RomtError::UnsupportedFormat { field: "datatype", .. })));

    let p = dir.path().join("g.nii.gz");
    fs::write(&p, [0x1f, 0x8b, 8, 0, 0, 0]).unwrap();
    assert!(matches!(import_nifti(&p), Err(RomtError::UnsupportedFormat { field: "compression", .. })));

    let p = dir.path().join("short.nii");
    fs::write(&p, nifti_bytes([3, 3, 3], 16, 32, 1.0, 0.0, 0.0, &payload[..100])).unwrap();
    assert!(matches!(import_nifti(&p), Err(RomtError::Format { .. })));
}

fn two_point_line() -> Pathline {
    Pathline {
        seed: [1.0, 2.0, 3.0],
        points: vec![[1.0, 2.0, 3.0], [1.123456789012, 2.5, 3.25]],
        speeds: vec![0.5, 0.75],
        peclets: vec![10.0, f64::INFINITY],
    }
}

#[test]
fn pathline_exports() {
    let dir = tempdir().unwrap();
    let csv_path = dir.path().join("p.csv");
    export_pathlines(&[two_point_line()], &csv_path, PathlineFormat::Csv).unwrap();
    let text = fs::read_to_string(&csv_path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "line_id,point_idx,x,y,z,speed,peclet");
    assert_eq!(lines.len(), 3);
    let row: Vec<&str> = lines[2].split(',').collect();
    assert_eq!(&row[..2], &["0", "1"]);
    let x: f64 = row[2].parse().unwrap();
    assert!((x - 1.123456789012).abs() <= 5e-9 * 1.123456789012);
    let mantissa = row[2].split('e').next().unwrap();
    assert_eq!(mantissa.chars().filter(char::is_ascii_digit).count(), 9);
    assert_eq!(row[6].parse::<f64>().unwrap(), f64::INFINITY);

    let vtk_path = dir.path().join("p.vtk");
    export_pathlines(&[two_point_line()], &vtk_path, PathlineFormat::VtkAscii).unwrap();
    let vtk = fs::read_to_string(&vtk_path).unwrap();
    assert!(vtk.contains("DATASET POLYDATA"));
    assert!(vtk.contains("POINTS 2 double"));
    assert!(vtk.contains("LINES 1 3\n2 0 1\n"));
    assert!(vtk.contains("POINT_DATA 2"));
    assert!(vtk.contains("SCALARS speed double 1"));
    assert!(vtk.contains("SCALARS peclet double 1"));
    assert!(!vtk.contains("inf"));

    let empty = dir.path().join("none.csv");
    assert!(export_pathlines(&[], &empty, PathlineFormat::Csv).is_err());
    assert!(!empty.exists());
}

#[test]
fn csv_reparse_recovers_f32_coordinates() {
    let dir = tempdir().unwrap();
    let mut r = rng(4);
    let lines: Vec<Pathline> = (0..5)
        .map(|_| {
            let points: Vec<[f64; 3]> = (0..6)
                .map(|_| std::array::from_fn(|_| r.random_range(0.0f32..49.0) as f64))
                .collect();
            Pathline {
                seed: points[0],
                speeds: vec![1.0; 6],
                peclets: vec![2.0; 6],
                points,
            }
        })
        .collect();
    let path = dir.path().join("p.csv");
    export_pathlines(&lines, &path, PathlineFormat::Csv).unwrap();
    let mut reader = csv::Reader::from_path(&path).unwrap();
    for rec in reader.records() {
        let rec = rec.unwrap();
        let id: usize = rec[0].parse().unwrap();
        let p: usize = rec[1].parse().unwrap();
        for a in 0..3 {
            let x: f64 = rec[2 + a].parse().unwrap();
            assert_eq!(x as f32, lines[id].points[p][a] as f32);
        }
    }
}

#[test]
fn sphere_examples() {
    let still = SphereSynthConfig {
        dims: [12, 12, 12],
        frames: 3,
        center: [5.5, 5.5, 5.5],
        drift: [0.0; 3],
        growth: 0.0,
        std: 2.0,
        amplitude: 1.0,
    };
    let frames = gen_gaussian_spheres(&still).unwrap();
    assert_eq!(frames.len(), 3);
    assert!(frames.windows(2).all(|w| w[0] == w[1]));

    let default = SphereSynthConfig::default();
    let frames = gen_gaussian_spheres(&default).unwrap();
    assert_eq!(frames.len(), 5);
    let mass0 = frames[0].total_mass();
    for (t, f) in frames.iter().enumerate() {
        assert_eq!(f.grid().dims(), [50, 50, 50]);
        assert!((f.total_mass() - mass0).abs() <= 1e-10 * mass0);
        let argmax = f.data().iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        let c = f.grid().coords(argmax);
        let expect = default.center_at(t);
        for a in 0..3 {
            assert!((c[a] as f64 - expect[a]).abs() <= 0.5, "frame {t}: peak {c:?} vs center {expect:?}");
        }
    }

    let small = SphereSynthConfig::scaled(0.5).unwrap();
    assert_eq!(small.dims, [25, 25, 25]);
    for f in gen_gaussian_spheres(&small).unwrap() {
        assert!(f.data().iter().all(|x| *x >= 0.0));
    }

    assert!(gen_gaussian_spheres(&SphereSynthConfig { dims: [7, 8, 8], ..still.clone() }).is_err());
    assert!(gen_gaussian_spheres(&SphereSynthConfig { frames: 1, ..still.clone() }).is_err());
    assert!(gen_gaussian_spheres(&SphereSynthConfig { std: 0.0, ..still }).is_err());
}

#[test]
fn run_config_parsing() {
    let base = Path::new("/data/run");
    let text = r#"{
        "sigma": 0.01, "beta": 100.0, "m": 4, "k_t": 0.25, "k_s": 1.0,
        "mode": "parallel",
        "inputs": ["a.raw", "/abs/b.nii"],
        "output_dir": "out",
        "workers": 3
    }"#;
    let cfg = RunConfig::from_json(text, base).unwrap();
    assert_eq!(cfg.romt.sigma, 0.01);
    assert_eq!(cfg.romt.m, 4);
    assert_eq!(cfg.romt.chain_mode, ChainMode::Parallel);
    assert_eq!(cfg.romt.max_gn_iters, RomtConfig::default().max_gn_iters);
    assert_eq!(cfg.inputs[0], base.join("a.raw"));
    assert_eq!(cfg.inputs[1], Path::new("/abs/b.nii"));
    assert_eq!(cfg.output_dir, base.join("out"));
    assert_eq!(cfg.workers, Some(3));
    assert_eq!(cfg.mask, None);

    let round = RunConfig::from_json(&cfg.to_json().to_string(), Path::new("/elsewhere")).unwrap();
    assert_eq!(round, cfg);

    assert!(RunConfig::from_json(r#"{"inputs": [], "output_dir": "o", "sigmaa": 1}"#, base).is_err());
    assert!(RunConfig::from_json(r#"{"sigma": 1}"#, base).is_err());
}

#[test]
fn series_outputs_round_trip() {
    let dir = tempdir().unwrap();
    let spheres = SphereSynthConfig {
        dims: [8, 8, 8],
        frames: 3,
        center: [3.0, 3.5, 3.5],
        drift: [0.5, 0.0, 0.0],
        std: 1.2,
        growth: 0.05,
        amplitude: 1.0,
    };
    let frames = gen_gaussian_spheres(&spheres).unwrap();
    let cfg = RomtConfig {
        m: 2,
        max_gn_iters: 2,
        ..RomtConfig::default()
    };
    let results = run_series(&frames, &cfg).unwrap();
    write_series_outputs(dir.path(), &results, &cfg, &[]).unwrap();

    let history = read_cost_history(dir.path().join("cost_history.csv")).unwrap();
    let rows: usize = results.iter().map(|r| r.cost_history.len()).sum();
    assert_eq!(history.len(), rows);

    let (summary, back) = read_series_outputs(dir.path()).unwrap();
    assert_eq!(summary.config, cfg);
    assert_eq!(back.len(), 2);
    for (a, b) in results.iter().zip(&back) {
        assert_eq!(a.stop_reason, b.stop_reason);
        assert_eq!(b.rho_interp.len(), 2);
        for (x, y) in a.v_final.data().iter().zip(b.v_final.data()) {
            assert_eq!(*x as f32 as f64, *y);
        }
        for (x, y) in a.cost_history.iter().zip(&b.cost_history) {
            assert!((x.total() - y.total()).abs() <= 1e-8 * x.total().abs().max(1e-300));
        }
    }
    let (grid, f) = load_frames(dir.path().join("pair_001").join("velocity.raw")).unwrap();
    assert_eq!(grid.dims(), [8, 8, 8]);
    assert_eq!(f.len(), 6);
}
