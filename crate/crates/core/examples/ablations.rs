//! Trains the full model and its ablations on the same data and reports
//! test error for each.
//!
//! cargo run --release --example ablations -- [epochs] [seed]

use tiode::config::RunConfig;
use tiode::datagen::generate_dataset;
use tiode::model::Variant;
use tiode::train::{evaluate, train};

fn main() -> tiode::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let mut cfg = RunConfig::desk();
    cfg.train.epochs = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let seed = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1);
    let ds = generate_dataset(&cfg.sim, cfg.splits, cfg.condition_len, cfg.prediction_len)?;
    println!("variant   params  test mse  test mae");
    for v in [Variant::Full, Variant::NoW, Variant::NoR, Variant::NoO, Variant::Unified] {
        let out = train(&ds, &cfg.model.variant(v), &cfg.train, seed, 1)?;
        let m = evaluate(&out.model, &ds, cfg.prediction_len, 1)?;
        println!(
            "{:<8} {:>7}  {:.5}   {:.5}",
            v.name(),
            out.model.store.num_scalars(),
            m.mse,
            m.mae
        );
    }
    Ok(())
}
