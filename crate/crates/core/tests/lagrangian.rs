mod common;

use std::collections::HashMap;

use common::rng;
use rand::Rng;
use romt_core::lagrangian::{
    attach_speed_peclet, augmented_velocity, flux_vectors, median, peclet_samples_by_pair, rasterize, seed_points,
    trace_pathlines, MapKind, Pathline, TraceConfig,
};
use romt_core::{Grid, RomtError, VectorField, Volume};

fn rotation(grid: Grid, omega: f64, center: [f64; 2]) -> VectorField {
    let n = grid.len();
    let mut data = vec![0.0; 3 * n];
    for idx in 0..n {
        let c = grid.coords(idx);
        data[idx] = -omega * (c[1] as f64 - center[1]);
        data[n + idx] = omega * (c[0] as f64 - center[0]);
    }
    VectorField::new(grid, data).unwrap()
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

#[test]
fn augmented_velocity_examples() {
    let grid = Grid::new([6, 5, 4]).unwrap();
    let mut r = rng(1);
    let v = VectorField::new(grid, (0..3 * grid.len()).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap();
    let rho = Volume::from_fn(grid, |i, j, k| 1.0 + (i + 2 * j + 3 * k) as f64);

    assert_eq!(augmented_velocity(&v, &rho, 0.0, 1e-8).unwrap(), v);
    let flat = Volume::from_fn(grid, |_, _, _| 2.5);
    assert_eq!(augmented_velocity(&v, &flat, 0.3, 1e-8).unwrap(), v);

    // log of exp(x/h) is linear, so the correction is exactly sigma/h along x
    let h = 0.5;
    let grid = Grid::with_spacing([6, 5, 4], h, h * h * h).unwrap();
    let v = VectorField::zeros(grid);
    let rho = Volume::from_fn(grid, |i, _, _| (i as f64 * h / h).exp());
    let sigma = 0.002;
    let aug = augmented_velocity(&v, &rho, sigma, 1e-8).unwrap();
    for x in aug.component(0) {
        assert!((x + sigma / h).abs() < 1e-12);
    }
    assert!(aug.component(1).iter().chain(aug.component(2)).all(|x| x.abs() < 1e-15));

    assert!(matches!(augmented_velocity(&v, &rho, sigma, 0.0), Err(RomtError::Argument(_))));
}

#[test]
fn floor_bounds_log_gradient_on_empty_voxels() {
    let grid = Grid::new([5, 3, 3]).unwrap();
    let rho = Volume::from_fn(grid, |i, _, _| if i < 2 { 1.0 } else { 0.0 });
    let aug = augmented_velocity(&VectorField::zeros(grid), &rho, 1.0, 1e-8).unwrap();
    assert!(aug.data().iter().all(|x| x.is_finite()));
    assert!(aug.component(0).iter().any(|x| *x > 0.0));
}

#[test]
fn seed_examples() {
    let grid = Grid::new([7, 6, 5]).unwrap();
    let mut r = rng(2);
    let rho = Volume::new(grid, (0..grid.len()).map(|_| r.random_range(0.0..1.0)).collect()).unwrap();

    let all = seed_points(&rho, 0.0, 1, None).unwrap();
    assert_eq!(all.len(), grid.len());
    for (idx, s) in all.iter().enumerate() {
        let c = grid.coords(idx);
        assert_eq!(*s, [c[0] as f64, c[1] as f64, c[2] as f64]);
    }

    let top = seed_points(&rho, 1.0, 1, None).unwrap();
    let argmax = rho.data().iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
    let c = grid.coords(argmax);
    assert_eq!(top, vec![[c[0] as f64, c[1] as f64, c[2] as f64]]);

    let sphere = Volume::from_fn(grid, |i, j, k| {
        let d2 = (i as f64 - 3.0).powi(2) + (j as f64 - 2.5).powi(2) + (k as f64 - 2.0).powi(2);
        (-d2 / 4.0).exp()
    });
    let max = sphere.data().iter().copied().fold(0.0, f64::max);
    let expect = sphere.data().iter().filter(|x| **x >= 0.1 * max).count();
    assert_eq!(seed_points(&sphere, 0.1, 1, None).unwrap().len(), expect);

    let strided = seed_points(&rho, 0.0, 2, None).unwrap();
    assert_eq!(strided.len(), 4 * 3 * 3);
    assert!(strided.iter().all(|s| s.iter().all(|x| (*x as usize).is_multiple_of(2))));

    let mask = Volume::from_fn(grid, |i, _, _| if i == 3 { 1.0 } else { 0.0 });
    let masked = seed_points(&rho, 0.0, 1, Some(&mask)).unwrap();
    assert_eq!(masked.len(), 30);
    assert!(masked.iter().all(|s| s[0] == 3.0));

    assert!(seed_points(&Volume::zeros(grid), 0.5, 1, Some(&Volume::zeros(grid))).unwrap().is_empty());
    assert!(seed_points(&rho, 1.5, 1, None).is_err());
    assert!(seed_points(&rho, 0.5, 0, None).is_err());
}

#[test]
fn trace_in_zero_and_constant_fields() {
    let grid = Grid::new([10, 10, 10]).unwrap();
    let seeds = vec![[2.0, 3.0, 4.0], [5.5, 5.0, 1.25]];
    let cfg = TraceConfig { k_t: 0.4, n_sub: 1 };

    let still = trace_pathlines(&seeds, &vec![VectorField::zeros(grid); 5], &cfg).unwrap();
    for (line, seed) in still.iter().zip(&seeds) {
        assert_eq!(line.points.len(), 6);
        assert!(line.points.iter().all(|p| p == seed));
    }

    let c = [1.0, -0.5, 0.25];
    let field = VectorField::uniform(grid, c);
    let reference = trace_pathlines(&seeds, &vec![field.clone(); 5], &cfg).unwrap();
    for (line, seed) in reference.iter().zip(&seeds) {
        assert_eq!(line.points[0], *seed);
        for (p, q) in line.points.iter().enumerate() {
            for a in 0..3 {
                assert!((q[a] - (seed[a] + p as f64 * 0.4 * c[a])).abs() < 1e-12);
            }
        }
    }

    // refinement leaves constant-field pathlines unchanged at interval ends
    let fine = trace_pathlines(&seeds, &vec![field; 5], &TraceConfig { k_t: 0.4, n_sub: 4 }).unwrap();
    for (a, b) in reference.iter().zip(&fine) {
        assert_eq!(b.points.len(), 21);
        for (p, q) in a.points.iter().enumerate() {
            assert!(dist(*q, b.points[4 * p]) < 1e-12);
        }
    }
}

#[test]
fn trace_respects_spacing_and_hull() {
    let grid = Grid::with_spacing([6, 6, 6], 2.0, 8.0).unwrap();
    let field = VectorField::uniform(grid, [5.0, 0.0, -1.0]);
    let lines = trace_pathlines(&[[1.0, 1.0, 1.0]], &vec![field; 4], &TraceConfig { k_t: 0.4, n_sub: 1 }).unwrap();
    let pts = &lines[0].points;
    assert!((pts[1][0] - 2.0).abs() < 1e-12);
    assert!((pts[1][2] - 0.8).abs() < 1e-12);
    assert!(dist(pts[4], [5.0, 1.0, 0.2]) < 1e-12);
    assert!(pts.iter().all(|p| p.iter().all(|x| (0.0..=5.0).contains(x))));
}

#[test]
fn rotation_matches_refined_reference() {
    let grid = Grid::new([15, 15, 3]).unwrap();
    let field = rotation(grid, 0.25, [7.0, 7.0]);
    let series = vec![field; 10];
    let seeds = vec![[10.0, 7.0, 1.0], [7.0, 4.0, 1.0], [9.0, 9.0, 1.0]];
    for n_sub in [1, 2] {
        let coarse = trace_pathlines(&seeds, &series, &TraceConfig { k_t: 0.4, n_sub }).unwrap();
        let fine = trace_pathlines(&seeds, &series, &TraceConfig { k_t: 0.4, n_sub: 16 * n_sub }).unwrap();
        for (a, b) in coarse.iter().zip(&fine) {
            for (p, q) in a.points.iter().enumerate() {
                assert!(dist(*q, b.points[16 * p]) < 0.25, "n_sub {n_sub}, point {p}");
            }
        }
    }
}

#[test]
fn full_rotation_returns_and_is_pruned() {
    let grid = Grid::new([15, 15, 3]).unwrap();
    let m = 20;
    let k_t = 0.4;
    let omega = 2.0 * std::f64::consts::PI / (m as f64 * k_t);
    let series = vec![rotation(grid, omega, [7.0, 7.0]); m];
    let lines = trace_pathlines(&[[10.0, 7.0, 1.0]], &series, &TraceConfig { k_t, n_sub: 200 }).unwrap();
    let arc: f64 = lines[0].points.windows(2).map(|w| dist(w[0], w[1])).sum();
    assert!(arc > 15.0);
    assert!(lines[0].displacement() < 0.5);
    assert!(flux_vectors(&lines, 0.5).is_empty());
}

#[test]
fn non_finite_velocity_stops_pathline() {
    let grid = Grid::new([5, 5, 5]).unwrap();
    let mut bad = VectorField::uniform(grid, [1.0, 0.0, 0.0]);
    bad.data_mut().fill(f64::NAN);
    let series = vec![VectorField::uniform(grid, [1.0, 0.0, 0.0]), bad];
    let lines = trace_pathlines(&[[1.0, 1.0, 1.0]], &series, &TraceConfig { k_t: 0.5, n_sub: 1 }).unwrap();
    assert_eq!(lines[0].points.len(), 2);
}

#[test]
fn speed_and_peclet_examples() {
    let grid = Grid::new([6, 6, 6]).unwrap();
    let cfg = TraceConfig { k_t: 0.4, n_sub: 1 };
    let seeds = vec![[2.0, 2.0, 2.0], [3.5, 1.0, 4.0]];
    let rho = Volume::from_fn(grid, |i, j, _| 1.0 + (i + j) as f64);

    let zero = vec![VectorField::zeros(grid); 3];
    let mut lines = trace_pathlines(&seeds, &zero, &cfg).unwrap();
    attach_speed_peclet(&mut lines, &zero, &[&rho; 3], 0.002, 1e-8, 1e-12, &cfg).unwrap();
    for l in &lines {
        assert_eq!(l.speeds.len(), l.points.len());
        assert!(l.speeds.iter().chain(&l.peclets).all(|x| *x == 0.0));
    }

    let v = vec![VectorField::uniform(grid, [0.6, 0.8, 0.0]); 3];
    let flat = Volume::from_fn(grid, |_, _, _| 3.0);
    let mut lines = trace_pathlines(&seeds, &v, &cfg).unwrap();
    attach_speed_peclet(&mut lines, &v, &[&flat; 3], 0.002, 1e-8, 1e-12, &cfg).unwrap();
    for l in &lines {
        for (s, pe) in l.speeds.iter().zip(&l.peclets) {
            assert!((s - 1.0).abs() < 1e-12);
            assert!((pe - 1.0 / 1e-12).abs() <= 1e-6 / 1e-12);
        }
    }

    // |v| = 2, sigma = 0.002, |grad log rho| = 10
    let steep = Volume::from_fn(grid, |i, _, _| (10.0 * i as f64).exp());
    let v = vec![VectorField::uniform(grid, [0.0, 2.0, 0.0])];
    let mut lines = trace_pathlines(&[[2.0, 1.0, 3.0]], &v, &cfg).unwrap();
    attach_speed_peclet(&mut lines, &v, &[&steep], 0.002, 1e-8, 1e-12, &cfg).unwrap();
    let expect = 2.0 / (0.02 + 1e-12);
    for pe in &lines[0].peclets {
        assert!((pe - expect).abs() < 1e-9 * expect);
        assert!((pe - 100.0).abs() < 1e-6);
    }

    let mut lines = trace_pathlines(&seeds, &v, &cfg).unwrap();
    attach_speed_peclet(&mut lines, &v, &[&steep], 0.0, 1e-8, 1e-12, &cfg).unwrap();
    assert!(lines.iter().flat_map(|l| &l.peclets).all(|pe| *pe == f64::INFINITY));
}

#[test]
fn samples_use_the_interval_that_moved_the_point() {
    let grid = Grid::new([8, 8, 8]).unwrap();
    let cfg = TraceConfig { k_t: 0.5, n_sub: 2 };
    let v = vec![VectorField::uniform(grid, [1.0, 0.0, 0.0]), VectorField::uniform(grid, [0.0, 3.0, 0.0])];
    let rho = Volume::from_fn(grid, |_, _, _| 1.0);
    let mut lines = trace_pathlines(&[[1.0, 1.0, 1.0]], &v, &cfg).unwrap();
    attach_speed_peclet(&mut lines, &v, &[&rho, &rho], 0.1, 1e-8, 1e-12, &cfg).unwrap();
    assert_eq!(lines[0].speeds, vec![1.0, 1.0, 1.0, 3.0, 3.0]);
    assert_eq!(lines[0].points[2], [1.5, 1.0, 1.0]);
    assert_eq!(lines[0].points[4], [1.5, 2.5, 1.0]);

    let groups = peclet_samples_by_pair(&lines, 1, &cfg);
    assert_eq!(groups.len(), 2);
    assert_eq!(groups[0].len(), 3);
    assert_eq!(groups[1].len(), 2);
}

#[test]
fn peclet_scales_with_velocity() {
    let grid = Grid::new([6, 6, 6]).unwrap();
    let cfg = TraceConfig { k_t: 0.4, n_sub: 1 };
    let mut r = rng(3);
    let rho = Volume::new(grid, (0..grid.len()).map(|_| r.random_range(0.5..2.0)).collect()).unwrap();
    let base = VectorField::new(grid, (0..3 * grid.len()).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap();
    let scaled = VectorField::new(grid, base.data().iter().map(|x| 3.0 * x).collect()).unwrap();
    let seeds = seed_points(&rho, 0.0, 2, None).unwrap();
    let mut a = trace_pathlines(&seeds, &[VectorField::zeros(grid)], &cfg).unwrap();
    let mut b = a.clone();
    attach_speed_peclet(&mut a, &[base], &[&rho], 0.002, 1e-8, 1e-12, &cfg).unwrap();
    attach_speed_peclet(&mut b, &[scaled], &[&rho], 0.002, 1e-8, 1e-12, &cfg).unwrap();
    for (x, y) in a.iter().flat_map(|l| &l.peclets).zip(b.iter().flat_map(|l| &l.peclets)) {
        assert!((y - 3.0 * x).abs() <= 1e-10 * y.abs());
    }
}

fn line(points: Vec<[f64; 3]>, value: f64) -> Pathline {
    let len = points.len();
    Pathline {
        seed: points[0],
        points,
        speeds: vec![value; len],
        peclets: vec![2.0 * value; len],
    }
}

#[test]
fn flux_vector_examples() {
    let still = line(vec![[1.0, 1.0, 1.0]; 4], 0.0);
    let straight = line(vec![[0.0, 0.0, 0.0], [1.0, 2.0, 2.0], [2.0, 4.0, 4.0]], 0.0);
    let flux = flux_vectors(&[still, straight], 0.5);
    assert_eq!(flux.len(), 1);
    assert_eq!(flux[0].start, [0.0, 0.0, 0.0]);
    assert_eq!(flux[0].end, [2.0, 4.0, 4.0]);
    assert!((flux[0].length - 6.0).abs() < 1e-12);
}

#[test]
fn rasterize_examples() {
    let grid = Grid::new([5, 5, 5]).unwrap();
    let one = rasterize(&[line(vec![[2.2, 1.0, 3.4]], 3.0)], MapKind::Speed, &grid).unwrap();
    let idx = grid.linear_index(2, 1, 3).unwrap();
    for (i, v) in one.data().iter().enumerate() {
        assert_eq!(*v, if i == idx { 3.0 } else { 0.0 });
    }

    let two = vec![line(vec![[1.1, 1.0, 1.0]], 2.0), line(vec![[0.9, 1.2, 0.8]], 4.0)];
    let map = rasterize(&two, MapKind::Speed, &grid).unwrap();
    assert_eq!(map.get(1, 1, 1), 3.0);
    assert_eq!(rasterize(&two, MapKind::Peclet, &grid).unwrap().get(1, 1, 1), 6.0);

    let constant = vec![line(vec![[0.0, 0.0, 0.0], [4.4, 4.0, 3.6], [2.0, 2.0, 2.0]], 7.5)];
    let map = rasterize(&constant, MapKind::Speed, &grid).unwrap();
    assert_eq!(map.data().iter().filter(|v| **v == 7.5).count(), 3);
    assert!(map.data().iter().all(|v| *v == 0.0 || *v == 7.5));
}

#[test]
fn rasterize_matches_bucket_oracle() {
    let grid = Grid::new([6, 5, 4]).unwrap();
    let mut r = rng(4);
    let lines: Vec<Pathline> = (0..20)
        .map(|_| {
            let pts: Vec<[f64; 3]> = (0..8)
                .map(|_| [r.random_range(-0.5..5.5), r.random_range(-0.5..4.5), r.random_range(-0.5..3.5)])
                .collect();
            let len = pts.len();
            Pathline {
                seed: pts[0],
                points: pts,
                speeds: (0..len).map(|_| r.random_range(0.0..5.0)).collect(),
                peclets: vec![0.0; len],
            }
        })
        .collect();
    let mut buckets: HashMap<(i64, i64, i64), Vec<f64>> = HashMap::new();
    for l in &lines {
        for (p, s) in l.points.iter().zip(&l.speeds) {
            let key = (
                p[0].round().clamp(0.0, 5.0) as i64,
                p[1].round().clamp(0.0, 4.0) as i64,
                p[2].round().clamp(0.0, 3.0) as i64,
            );
            buckets.entry(key).or_default().push(*s);
        }
    }
    let map = rasterize(&lines, MapKind::Speed, &grid).unwrap();
    for k in 0..4 {
        for j in 0..5 {
            for i in 0..6 {
                let expect = buckets
                    .get(&(i as i64, j as i64, k as i64))
                    .map_or(0.0, |v| v.iter().sum::<f64>() / v.len() as f64);
                assert!((map.get(i, j, k) - expect).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn median_of_samples() {
    assert_eq!(median(&[]), None);
    assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
    assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
    assert_eq!(median(&[f64::NAN, 5.0]), Some(5.0));
}
