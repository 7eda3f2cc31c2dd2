//! Computes Lipschitz bounds of a trained field, the perturbation growth
//! constants built from them, and checks the resulting derivative bound
//! along perturbed trajectories.
//!
//! cargo run --release --example lipschitz_diagnostic -- [epochs] [seed]

use tiode::analysis::{empirical_lyapunov_check, latent_probes, lipschitz_diagnostic, robustness_experiment, Probes, RobustnessConfig};
use tiode::config::RunConfig;
use tiode::datagen::generate_dataset;
use tiode::model::Variant;
use tiode::seed::tagged_rng;
use tiode::train::train;

fn main() -> tiode::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let mut cfg = RunConfig::desk();
    cfg.train.epochs = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let seed = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1);
    let ds = generate_dataset(&cfg.sim, cfg.splits, cfg.condition_len, cfg.prediction_len)?;
    let model = train(&ds, &cfg.model, &cfg.train, seed, 1)?.model;
    let reference = train(&ds, &cfg.model.variant(Variant::Unified), &cfg.train, seed, 1)?.model;

    let (_, trajs) = robustness_experiment(&[("ti_ode", &model)], &ds, &RobustnessConfig::default(), seed)?;
    let d = &cfg.diagnostic;
    let mut probes = latent_probes(&model, &ds, d.box_samples, d.probes, d.margin, &mut tagged_rng(seed, "probes", 0))?;
    for t in &trajs[0] {
        probes.extend(&Probes::from_trajectory(t));
    }
    let report = lipschitz_diagnostic(&model, ds.test.nodes, &probes, Some(&reference))?;
    println!("aggregator bound L_a = {:.4}", report.l_a);
    println!("  k    L_r,k    L_w,k    C_r,k    C_w,k      L^k    alpha_k");
    for (k, b) in report.bases.iter().enumerate() {
        println!(
            "{k:>3} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>10.3}",
            b.l_r, b.l_w, b.c_r, b.c_w, b.l_k, b.alpha
        );
    }
    println!(
        "sum L^k = {:.4} vs unified L_r = {:.4}: condition {}",
        report.sum_l_k,
        report.reference_l_r.unwrap_or(f64::NAN),
        if report.verdict == Some(true) { "holds" } else { "does not hold" }
    );
    let mut worst = f64::INFINITY;
    let mut passed = 0;
    for t in &trajs[0] {
        let c = empirical_lyapunov_check(&model, t, &report)?;
        worst = worst.min(c.worst_margin);
        passed += usize::from(c.passed);
    }
    println!("derivative bound held on {passed}/{} trajectories (smallest margin {worst:.3e})", trajs[0].len());
    Ok(())
}
