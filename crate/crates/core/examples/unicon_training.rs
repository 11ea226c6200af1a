//! Trains UniCon with two clients on the synthetic task through the library
//! API and reports loss, validation accuracy and message counts per round.
//!
//!     cargo run --release --example unicon_training

use std::sync::Arc;

use unicon::components::DimConfig;
use unicon::data::{shard_dataset, ShardStrategy, SynthGenerator};
use unicon::eval::{val_accuracy, AnswerBank};
use unicon::losses::InfoNceConfig;
use unicon::numerics::{AdamHyper, LrSchedule};
use unicon::protocol::{transport_stats, TrainSpec, UniconModel, UniconSession};
use unicon::seed::Stream;

fn main() -> anyhow::Result<()> {
    env_logger::init();
    let seed = 17;
    let classes = 16;
    let dims = DimConfig {
        vocab_size: SynthGenerator::vocab_needed(classes),
        ..DimConfig::default()
    };
    let generator = SynthGenerator::new(seed, classes, &dims)?;
    let train = generator.generate(1024, 0.5, Stream::TrainData)?;
    let val = generator.generate(256, 0.5, Stream::ValData)?;
    let task = Arc::new(generator.into_task());

    let shards = shard_dataset(&train, 2, seed, ShardStrategy::Iid)?
        .into_iter()
        .map(|s| s.triplets)
        .collect();
    let spec = TrainSpec {
        local_epochs: 1,
        batch_size: 32,
        seed,
        adam: AdamHyper::default(),
        schedule: LrSchedule {
            base_lr: 5e-4,
            warmup_steps: 50,
            ..LrSchedule::constant(5e-4)
        },
        infonce: InfoNceConfig::default(),
    };
    let model = UniconModel::init(&dims, false, seed);
    let mut session = UniconSession::new(task.clone(), shards, model, spec)?;

    for _ in 0..15 {
        let stats = session.run_round()?;
        let global = session.global_model()?;
        let bank = AnswerBank::build(&task, &global.apn, &global.lta)?;
        let acc = val_accuracy(&global.vqa, &global.nha, &bank, &task, &val)?;
        println!(
            "round {:>2}  loss {:>10.3}  val_acc {:.3}  up {:>3}  down {:>3}",
            stats.round, stats.mean_loss, acc.accuracy, stats.messages_up, stats.messages_down
        );
    }
    let st = transport_stats(session.log());
    println!(
        "{} batches, {:.0} round trip per batch, {} messages logged",
        st.batches,
        st.round_trips_per_batch,
        session.log().len()
    );
    Ok(())
}
