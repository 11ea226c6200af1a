//! Runs one round of each protocol on the same shards and prints the
//! message sequence of one batch, plus the totals.
//!
//!     cargo run --example sl_vs_unicon_messages

use std::sync::Arc;

use unicon::components::DimConfig;
use unicon::data::{synth_generate, SynthGenerator, Triplet};
use unicon::losses::InfoNceConfig;
use unicon::numerics::{AdamHyper, LrSchedule};
use unicon::protocol::{
    messages_by_batch, transport_stats, SlModel, SlSession, TrainSpec, TransportLog, UniconModel,
    UniconSession,
};

fn show(name: &str, log: &TransportLog) {
    let st = transport_stats(log);
    println!(
        "{name}: {} messages up, {} down, {} batches, {} round trips per batch",
        st.messages_up, st.messages_down, st.batches, st.round_trips_per_batch
    );
    if let Some(((k, b), msgs)) = messages_by_batch(log).into_iter().next() {
        println!("  client {k}, batch {b}:");
        for m in msgs {
            println!(
                "    {:<16} {} -> {}  payload {}x{}",
                m.kind.name(),
                m.sender,
                m.receiver,
                m.rows,
                m.cols
            );
        }
    }
}

fn main() -> anyhow::Result<()> {
    let classes = 4;
    let dims = DimConfig {
        vocab_size: SynthGenerator::vocab_needed(classes),
        ..DimConfig::default()
    };
    let ds = synth_generate(1, 32, classes, &dims, 0.5)?;
    let task = Arc::new(ds.task);
    let shards: Vec<Vec<Triplet>> = ds.triplets.chunks(16).map(|c| c.to_vec()).collect();
    let spec = TrainSpec {
        local_epochs: 1,
        batch_size: 8,
        seed: 1,
        adam: AdamHyper::default(),
        schedule: LrSchedule::constant(1e-3),
        infonce: InfoNceConfig::default(),
    };

    let mut u = UniconSession::new(
        task.clone(),
        shards.clone(),
        UniconModel::init(&dims, false, 1),
        spec.clone(),
    )?;
    u.run_round()?;
    show("unicon", u.log());

    let mut s = SlSession::new(task, shards, SlModel::init(&dims, classes, 1), spec)?;
    s.run_round()?;
    show("split learning", s.log());
    Ok(())
}
