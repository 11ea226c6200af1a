//! Generates the synthetic VQA task, splits it over three clients and
//! prints one batch's shapes and a few answers.
//!
//!     cargo run --example synth_data

use unicon::components::{DimConfig, PAD};
use unicon::data::{
    dataset_digest, epoch_batches, shard_dataset, ShardStrategy, SynthGenerator, Triplet,
};
use unicon::seed::Stream;

fn main() -> anyhow::Result<()> {
    let classes = 6;
    let dims = DimConfig {
        vocab_size: SynthGenerator::vocab_needed(classes),
        ..DimConfig::default()
    };
    let generator = SynthGenerator::new(11, classes, &dims)?;
    let train = generator.generate(120, 0.5, Stream::TrainData)?;
    let task = generator.task();
    println!(
        "{} triplets, digest {}",
        train.len(),
        &dataset_digest(&train)[..16]
    );
    println!("answers: {:?}", task.answers);

    for strategy in [ShardStrategy::Iid, ShardStrategy::LabelSkew] {
        let shards = shard_dataset(&train, 3, 11, strategy)?;
        for s in &shards {
            let mut labels: Vec<&str> = s.triplets.iter().map(|t| t.answer.as_str()).collect();
            labels.sort_unstable();
            labels.dedup();
            println!(
                "{strategy:?} client {}: {} examples, {} distinct answers",
                s.client,
                s.len(),
                labels.len()
            );
        }
    }

    let order = epoch_batches(train.len(), 8, 11, 0, 0);
    let refs: Vec<&Triplet> = order[0].iter().map(|&i| &train[i]).collect();
    let batch = task.batch(&refs)?;
    println!(
        "first batch: images {:?}, questions {}x{}, answers {}x{}",
        batch.images.shape(),
        batch.questions.len(),
        batch.questions[0].len(),
        batch.answers.len(),
        batch.answers[0].len()
    );
    println!("batch classes: {:?}", batch.classes);
    for t in refs.iter().take(3) {
        let words: Vec<&str> = t
            .question
            .iter()
            .filter(|&&tok| tok != PAD)
            .filter_map(|&tok| task.vocab.word(tok))
            .collect();
        println!("  q: {:<32} a: {}", words.join(" "), t.answer);
    }
    Ok(())
}
