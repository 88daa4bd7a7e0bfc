//! Solves the synthetic sphere series and prints per-pair costs and Péclet medians.
//!
//! `cargo run --release -p romt-core --example sphere_series -- [factor]`

use std::time::Instant;

use romt_core::io::{gen_gaussian_spheres, SphereSynthConfig};
use romt_core::lagrangian::{analyze_series, median, peclet_samples_by_pair, LagrangianConfig};
use romt_core::solver::run_series;
use romt_core::RomtConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let factor: f64 = std::env::args().nth(1).map_or(Ok(0.5), |s| s.parse())?;
    let frames = gen_gaussian_spheres(&SphereSynthConfig::scaled(factor)?)?;
    let cfg = RomtConfig::default();

    let start = Instant::now();
    let results = run_series(&frames, &cfg)?;
    println!("solved {} pairs in {:.1}s", results.len(), start.elapsed().as_secs_f64());
    for (p, r) in results.iter().enumerate() {
        let first = r.cost_history[0];
        let last = r.final_cost();
        println!(
            "pair {p}: {} GN iters ({:?}), fit {:.4e} -> {:.4e}, energy {:.4e}",
            r.gn_iterations, r.stop_reason, first.fit, last.fit, last.energy
        );
    }

    let lag = LagrangianConfig::default();
    let out = analyze_series(&results, cfg.sigma, cfg.k_t, &lag, None)?;
    for (p, samples) in peclet_samples_by_pair(&out.pathlines, cfg.m, &out.trace).iter().enumerate() {
        println!("pair {p}: median Pe {:.4e} over {} samples", median(samples).unwrap_or(f64::NAN), samples.len());
    }
    println!("{} flux vectors", out.glyphs.flux_vectors.len());
    Ok(())
}
