//! Trains the full model on the desk-scale spring benchmark and compares it
//! with repeating the last observed frame.
//!
//! cargo run --release --example train_springs -- [epochs] [seed] [jobs]

use std::time::Instant;

use tiode::config::RunConfig;
use tiode::datagen::generate_dataset;
use tiode::model::Model;
use tiode::train::{copy_last_baseline, evaluate, train};

fn main() -> tiode::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let arg = |i: usize, default: u64| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(default);
    let mut cfg = RunConfig::desk();
    cfg.train.epochs = arg(1, 40) as usize;
    let seed = arg(2, 1);
    let jobs = arg(3, 1) as usize;
    let ds = generate_dataset(&cfg.sim, cfg.splits, cfg.condition_len, cfg.prediction_len)?;

    let start = Instant::now();
    let out = train(&ds, &cfg.model, &cfg.train, seed, jobs)?;
    println!("epoch  train loss  valid mse");
    for r in &out.curve {
        println!("{:>5}  {:>10.3}  {:.5}", r.epoch, r.train_loss, r.valid_mse);
    }
    println!("trained in {:.1}s, best epoch {}", start.elapsed().as_secs_f64(), out.best_epoch);

    let model = out.model;
    let dir = tempfile_dir()?;
    model.save(&dir)?;
    let reloaded = Model::load(&dir)?;
    let m = evaluate(&reloaded, &ds, cfg.prediction_len, jobs)?;
    let base = copy_last_baseline(&ds, cfg.prediction_len)?;
    println!("test  mse {:.5}  mae {:.5}", m.mse, m.mae);
    println!("copy-last  mse {:.5}  mae {:.5}", base.mse, base.mae);
    println!("improvement over copy-last: {:.1}%", 100.0 * (1.0 - m.mse / base.mse));
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}

fn tempfile_dir() -> std::io::Result<std::path::PathBuf> {
    let dir = std::env::temp_dir().join(format!("tiode-example-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}
