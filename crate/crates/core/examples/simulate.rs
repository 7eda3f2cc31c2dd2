//! Simulates spring and charged-particle datasets, writes one to disk and
//! reads it back.
//!
//! cargo run --release --example simulate -- [out_dir]

use tiode::datagen::{generate_dataset, load_dataset, simulate, write_dataset, SimConfig, SplitSizes, System};

fn main() -> tiode::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "simulated-springs".into());
    for system in [System::Springs, System::Charged] {
        let cfg = SimConfig {
            system,
            n_samples: 3,
            n_particles: 5,
            ..SimConfig::default()
        };
        let set = simulate(&cfg)?;
        let first = set.frame(0, 0);
        let last = set.frame(0, set.timesteps - 1);
        println!(
            "{}: {} samples x {} frames x {} particles x {} features",
            system.name(),
            set.samples,
            set.timesteps,
            set.nodes,
            set.features
        );
        println!("  particle 0 start (x, y, vx, vy) = {:.3?}", &first[..4]);
        println!("  particle 0 end   (x, y, vx, vy) = {:.3?}", &last[..4]);
    }

    let cfg = SimConfig {
        n_particles: 5,
        n_timesteps: 24,
        ..SimConfig::default()
    };
    let ds = generate_dataset(&cfg, SplitSizes { train: 20, valid: 5, test: 5 }, 12, 12)?;
    let dir = std::path::Path::new(&out);
    std::fs::create_dir_all(dir)?;
    write_dataset(&ds, dir)?;
    let back = load_dataset(dir)?;
    println!(
        "wrote and reloaded {}: splits {}/{}/{}, feature means {:.3?}",
        dir.display(),
        back.train.samples,
        back.valid.samples,
        back.test.samples,
        back.normalizer.mean
    );
    Ok(())
}
