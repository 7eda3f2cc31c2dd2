//! Builds the temporal graph of one condition window and shows how the
//! frozen random networks refine the primary posterior over initial states.
//!
//! cargo run --release --example encode_posterior

use tiode::config::RunConfig;
use tiode::datagen::generate_dataset;
use tiode::model::{Model, Variant};
use tiode::numeric::Tape;

fn main() -> tiode::Result<()> {
    let cfg = RunConfig::desk();
    let ds = generate_dataset(&cfg.sim, cfg.splits, cfg.condition_len, cfg.prediction_len)?;
    let model = Model::new(&cfg.model, 7)?;
    let sample = model.sample(&ds.test, 0, cfg.condition_len, cfg.prediction_len)?;
    let n = ds.test.nodes;
    let spatial = sample.graph.edges.iter().filter(|e| e.src % n != e.dst % n).count();
    println!(
        "temporal graph: {} instances ({} nodes x {} steps), {} spatial and {} temporal edges",
        sample.graph.instances(),
        sample.graph.nodes,
        sample.graph.steps,
        spatial,
        sample.graph.edges.len() - spatial
    );

    let mut tape = Tape::new();
    let enc = model.encode(&mut tape, &sample, None)?;
    let primary = enc.primary.value(&tape);
    let refined = enc.refined.value(&tape);
    println!("node 0 primary mean[..4] {:.4?}", &primary.mean.row_slice(0)[..4]);
    println!("node 0 refined mean[..4] {:.4?}", &refined.mean.row_slice(0)[..4]);
    println!("node 0 primary std[..4]  {:.4?}", &primary.std.row_slice(0)[..4]);
    println!("node 0 refined std[..4]  {:.4?}", &refined.std.row_slice(0)[..4]);

    let plain = Model::new(&cfg.model.variant(Variant::NoR), 7)?;
    let mut tape = Tape::new();
    let enc = plain.encode(&mut tape, &sample, None)?;
    let same = enc.primary.value(&tape) == enc.refined.value(&tape);
    println!("without random networks the refined posterior equals the primary one: {same}");
    Ok(())
}
