//! Synthetic image/question/answer triplets, client sharding, batching and
//! the line-delimited dataset format.
//!
//! Each class `c` has a fixed image prototype, a question template ending in
//! the class topic word, and the single-token answer `ans{c}`. Images are
//! the prototype plus Gaussian noise; each question gets one random filler
//! word appended.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::components::{tokenize, Apn, DimConfig, Lta, Vocab};
use crate::error::{Error, Result};
use crate::eval::AnswerBank;
use crate::numerics::Matrix;
use crate::seed::{rng_for, Stream};

const TEMPLATE: [&str; 3] = ["what", "is", "the"];
const FILLERS: [&str; 8] = [
    "here", "shown", "picture", "image", "now", "please", "exactly", "visible",
];

/// One training example.
#[derive(Debug, Clone, PartialEq)]
pub struct Triplet {
    pub image: Vec<f64>,
    pub question: Vec<usize>,
    pub answer: String,
    /// Latent class, kept only as evaluation metadata.
    pub class_id: usize,
}

/// Vocabulary, answer list and widths shared by every party.
#[derive(Debug, Clone)]
pub struct Task {
    pub vocab: Vocab,
    pub answers: Vec<String>,
    pub dims: DimConfig,
    answer_index: HashMap<String, usize>,
}

impl Task {
    pub fn new(vocab: Vocab, answers: Vec<String>, dims: DimConfig) -> Result<Self> {
        if vocab.len() > dims.vocab_size {
            return Err(Error::Config(format!(
                "vocabulary has {} entries but dims.vocab_size is {}",
                vocab.len(),
                dims.vocab_size
            )));
        }
        let answer_index = answers
            .iter()
            .enumerate()
            .map(|(i, a)| (a.clone(), i))
            .collect();
        Ok(Self {
            vocab,
            answers,
            dims,
            answer_index,
        })
    }

    pub fn answer_id(&self, answer: &str) -> Result<usize> {
        self.answer_index
            .get(answer)
            .copied()
            .ok_or_else(|| Error::Data(format!("answer {answer:?} is not in the answer list")))
    }

    pub fn tokenize_answer(&self, answer: &str) -> Vec<usize> {
        tokenize(answer, self.dims.answer_len, &self.vocab)
    }

    /// Stacks the given triplets into model inputs.
    pub fn batch(&self, triplets: &[&Triplet]) -> Result<Batch> {
        let v = self.dims.image_dim;
        let mut images = Matrix::zeros(triplets.len(), v);
        let mut questions = Vec::with_capacity(triplets.len());
        let mut answers = Vec::with_capacity(triplets.len());
        let mut targets = Vec::with_capacity(triplets.len());
        let mut classes = Vec::with_capacity(triplets.len());
        for (r, t) in triplets.iter().enumerate() {
            if t.image.len() != v {
                return Err(Error::Data(format!(
                    "image of width {} for image_dim {v}",
                    t.image.len()
                )));
            }
            images.row_mut(r).copy_from_slice(&t.image);
            questions.push(t.question.clone());
            answers.push(self.tokenize_answer(&t.answer));
            targets.push(self.answer_id(&t.answer)?);
            classes.push(t.class_id);
        }
        Ok(Batch {
            images,
            questions,
            answers,
            targets,
            classes,
        })
    }
}

/// Model-ready inputs for a batch of triplets.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub images: Matrix,
    pub questions: Vec<Vec<usize>>,
    pub answers: Vec<Vec<usize>>,
    /// Index of each answer in the task's answer list.
    pub targets: Vec<usize>,
    pub classes: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n: usize,
    pub n_val: usize,
    pub classes: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 2048,
            n_val: 512,
            classes: 16,
            noise: 0.5,
            seed: 17,
        }
    }
}

/// Class prototypes and templates for one task; draws any number of
/// triplets from independent streams.
#[derive(Debug, Clone)]
pub struct SynthGenerator {
    task: Task,
    prototypes: Vec<Vec<f64>>,
    templates: Vec<Vec<usize>>,
    fillers: Vec<usize>,
    seed: u64,
}

impl SynthGenerator {
    /// Tokens needed: pad, unknown, the three template words, eight fillers,
    /// one topic word and one answer word per class.
    pub fn vocab_needed(classes: usize) -> usize {
        2 + TEMPLATE.len() + FILLERS.len() + 2 * classes
    }

    pub fn new(seed: u64, classes: usize, dims: &DimConfig) -> Result<Self> {
        dims.validate()?;
        if classes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, got {classes}"
            )));
        }
        if Self::vocab_needed(classes) > dims.vocab_size {
            return Err(Error::Config(format!(
                "{classes} classes need a vocabulary of {} but dims.vocab_size is {}",
                Self::vocab_needed(classes),
                dims.vocab_size
            )));
        }
        if dims.question_len < 2 {
            return Err(Error::Config("question_len must be at least 2".into()));
        }
        let mut vocab = Vocab::new();
        let base: Vec<usize> = TEMPLATE.iter().map(|w| vocab.add(w)).collect();
        let fillers: Vec<usize> = FILLERS.iter().map(|w| vocab.add(w)).collect();
        let mut templates = Vec::with_capacity(classes);
        for c in 0..classes {
            let topic = vocab.add(&format!("topic{c}"));
            let mut t = base.clone();
            t.push(topic);
            // leave room for the filler token
            t.truncate(dims.question_len - 1);
            if !t.contains(&topic) {
                *t.last_mut().expect("non-empty template") = topic;
            }
            templates.push(t);
        }
        let answers: Vec<String> = (0..classes).map(|c| format!("ans{c}")).collect();
        for a in &answers {
            vocab.add(a);
        }

        let mut rng = rng_for(seed, Stream::Prototypes);
        let prototypes = (0..classes)
            .map(|_| {
                (0..dims.image_dim)
                    .map(|_| rng.random_range(-1.0..=1.0))
                    .collect()
            })
            .collect();
        Ok(Self {
            task: Task::new(vocab, answers, *dims)?,
            prototypes,
            templates,
            fillers,
            seed,
        })
    }

    pub fn task(&self) -> &Task {
        &self.task
    }

    pub fn into_task(self) -> Task {
        self.task
    }

    pub fn generate(&self, n: usize, noise: f64, stream: Stream) -> Result<Vec<Triplet>> {
        if n < 1 {
            return Err(Error::Config("dataset size must be at least 1".into()));
        }
        if !(noise >= 0.0 && noise.is_finite()) {
            return Err(Error::Config(format!(
                "noise must be non-negative, got {noise}"
            )));
        }
        let mut rng = rng_for(self.seed, stream);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let classes = self.prototypes.len();
        let q_len = self.task.dims.question_len;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let c = rng.random_range(0..classes);
            let image = self.prototypes[c]
                .iter()
                .map(|p| p + noise * normal.sample(&mut rng))
                .collect();
            let mut question = self.templates[c].clone();
            question.push(self.fillers[rng.random_range(0..self.fillers.len())]);
            question.resize(q_len, crate::components::PAD);
            out.push(Triplet {
                image,
                question,
                answer: self.task.answers[c].clone(),
                class_id: c,
            });
        }
        Ok(out)
    }
}

/// A generated dataset with its task description.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub task: Task,
    pub triplets: Vec<Triplet>,
}

impl Dataset {
    pub fn answers(&self) -> &[String] {
        &self.task.answers
    }
}

/// `n` triplets over `classes` classes from the training stream of `seed`.
pub fn synth_generate(
    seed: u64,
    n: usize,
    classes: usize,
    dims: &DimConfig,
    noise: f64,
) -> Result<Dataset> {
    let generator = SynthGenerator::new(seed, classes, dims)?;
    let triplets = generator.generate(n, noise, Stream::TrainData)?;
    Ok(Dataset {
        task: generator.into_task(),
        triplets,
    })
}

/// One client's disjoint slice of the training data.
#[derive(Debug, Clone, PartialEq)]
pub struct Shard {
    pub client: usize,
    pub triplets: Vec<Triplet>,
}

impl Shard {
    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShardStrategy {
    /// Random permutation, then contiguous near-equal pieces.
    #[default]
    Iid,
    /// Sorted by class before splitting, so each client sees few labels.
    LabelSkew,
}

/// Splits `triplets` into `k` disjoint shards whose sizes differ by at most
/// one; the first `n % k` shards get the extra element.
pub fn shard_dataset(
    triplets: &[Triplet],
    k: usize,
    seed: u64,
    strategy: ShardStrategy,
) -> Result<Vec<Shard>> {
    if k < 1 {
        return Err(Error::Config("number of clients must be at least 1".into()));
    }
    let n = triplets.len();
    if k > n {
        return Err(Error::Config(format!("{k} clients for only {n} examples")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(seed, Stream::Sharding));
    if strategy == ShardStrategy::LabelSkew {
        order.sort_by_key(|&i| triplets[i].class_id);
    }
    let (base, extra) = (n / k, n % k);
    let mut shards = Vec::with_capacity(k);
    let mut start = 0;
    for client in 0..k {
        let size = base + usize::from(client < extra);
        shards.push(Shard {
            client,
            triplets: order[start..start + size]
                .iter()
                .map(|&i| triplets[i].clone())
                .collect(),
        });
        start += size;
    }
    Ok(shards)
}

/// Shuffled batch index lists for one epoch of a shard. A trailing batch
/// with fewer than two examples is dropped.
pub fn epoch_batches(
    len: usize,
    batch_size: usize,
    seed: u64,
    client: usize,
    epoch: usize,
) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng_for(seed, Stream::Shuffle { client, epoch }));
    let mut batches: Vec<Vec<usize>> = order
        .chunks(batch_size.max(1))
        .map(<[usize]>::to_vec)
        .collect();
    if batches.last().is_some_and(|b| b.len() < 2) {
        let dropped = batches.pop().map_or(0, |b| b.len());
        log::warn!("client {client} epoch {epoch}: dropping final batch of {dropped} example(s)");
    }
    batches
}

/// Number of batches [`epoch_batches`] yields.
pub fn batches_per_epoch(len: usize, batch_size: usize) -> usize {
    let b = batch_size.max(1);
    let full = len / b;
    if len % b >= 2 {
        full + 1
    } else {
        full
    }
}

/// Encodes each answer with APN then LTA.
pub fn build_answer_bank(task: &Task, apn: &Apn, lta: &Lta) -> Result<AnswerBank> {
    AnswerBank::build(task, apn, lta)
}

/// Writes one triplet per line:
/// `class_id<TAB>answer<TAB>space-separated token indices<TAB>comma-separated image values`.
pub fn write_triplets<W: Write>(mut w: W, triplets: &[Triplet]) -> Result<()> {
    for t in triplets {
        let q: Vec<String> = t.question.iter().map(usize::to_string).collect();
        let img: Vec<String> = t.image.iter().map(f64::to_string).collect();
        writeln!(
            w,
            "{}\t{}\t{}\t{}",
            t.class_id,
            t.answer,
            q.join(" "),
            img.join(",")
        )?;
    }
    Ok(())
}

pub fn read_triplets<R: BufRead>(r: R) -> Result<Vec<Triplet>> {
    let mut out = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |what: &str| Error::Data(format!("line {}: {what}", lineno + 1));
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(bad("expected 4 tab-separated fields"));
        }
        let class_id = fields[0].parse().map_err(|_| bad("bad class id"))?;
        if fields[1].is_empty() {
            return Err(bad("empty answer"));
        }
        let question = fields[2]
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<Vec<usize>, _>>()
            .map_err(|_| bad("bad token index"))?;
        let image = fields[3]
            .split(',')
            .map(str::parse)
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|_| bad("bad image value"))?;
        out.push(Triplet {
            image,
            question,
            answer: fields[1].to_string(),
            class_id,
        });
    }
    Ok(out)
}

/// SHA-256 over the line-delimited encoding.
pub fn dataset_digest(triplets: &[Triplet]) -> String {
    use sha2::{Digest, Sha256};
    let mut buf = Vec::new();
    write_triplets(&mut buf, triplets).expect("writing to a Vec cannot fail");
    hex::encode(Sha256::digest(&buf))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> DimConfig {
        DimConfig::default()
    }

    #[test]
    fn zero_noise_images_equal_prototype() {
        let ds = synth_generate(3, 200, 4, &dims(), 0.0).unwrap();
        let mut seen: HashMap<usize, &Vec<f64>> = HashMap::new();
        for t in &ds.triplets {
            let first = seen.entry(t.class_id).or_insert(&t.image);
            assert_eq!(*first, &t.image);
        }
        assert_eq!(seen.len(), 4);
    }

    #[test]
    fn generation_is_reproducible() {
        let a = synth_generate(9, 1000, 16, &dims(), 0.5).unwrap();
        let b = synth_generate(9, 1000, 16, &dims(), 0.5).unwrap();
        assert_eq!(dataset_digest(&a.triplets), dataset_digest(&b.triplets));
        let c = synth_generate(10, 1000, 16, &dims(), 0.5).unwrap();
        assert_ne!(dataset_digest(&a.triplets), dataset_digest(&c.triplets));
    }

    #[test]
    fn classes_are_balanced_within_three_sigma() {
        let (n, c) = (1000usize, 16usize);
        let ds = synth_generate(1, n, c, &dims(), 0.5).unwrap();
        let mut counts = vec![0usize; c];
        for t in &ds.triplets {
            counts[t.class_id] += 1;
        }
        let p = 1.0 / c as f64;
        let mean = n as f64 * p;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for (k, &cnt) in counts.iter().enumerate() {
            assert!((cnt as f64 - mean).abs() <= 3.0 * sigma, "class {k}: {cnt}");
        }
    }

    #[test]
    fn questions_carry_template_and_filler() {
        let ds = synth_generate(2, 20, 3, &dims(), 0.1).unwrap();
        let v = &ds.task.vocab;
        for t in &ds.triplets {
            assert_eq!(t.question.len(), 8);
            assert_eq!(t.question[3], v.get(&format!("topic{}", t.class_id)));
            assert!(FILLERS.iter().any(|f| v.get(f) == t.question[4]));
            assert_eq!(&t.question[5..], &[0, 0, 0]);
            assert_eq!(t.answer, format!("ans{}", t.class_id));
        }
    }

    #[test]
    fn invalid_generation_requests() {
        assert!(synth_generate(1, 0, 4, &dims(), 0.1).is_err());
        assert!(synth_generate(1, 10, 40, &dims(), 0.1).is_err());
        assert!(synth_generate(1, 10, 4, &dims(), -1.0).is_err());
    }

    #[test]
    fn shard_sizes_follow_remainder_rule() {
        let ds = synth_generate(1, 10, 2, &dims(), 0.1).unwrap();
        let one = shard_dataset(&ds.triplets, 1, 5, ShardStrategy::Iid).unwrap();
        assert_eq!(one.len(), 1);
        let mut sorted_a = one[0].triplets.clone();
        let mut sorted_b = ds.triplets.clone();
        let key = |t: &Triplet| format!("{:?}", t);
        sorted_a.sort_by_key(key);
        sorted_b.sort_by_key(key);
        assert_eq!(sorted_a, sorted_b);

        let two = shard_dataset(&ds.triplets, 2, 5, ShardStrategy::Iid).unwrap();
        assert_eq!(two.iter().map(Shard::len).collect::<Vec<_>>(), [5, 5]);
        let three = shard_dataset(&ds.triplets, 3, 5, ShardStrategy::Iid).unwrap();
        assert_eq!(three.iter().map(Shard::len).collect::<Vec<_>>(), [4, 3, 3]);

        assert!(shard_dataset(&ds.triplets, 0, 5, ShardStrategy::Iid).is_err());
        assert!(shard_dataset(&ds.triplets, 11, 5, ShardStrategy::Iid).is_err());
    }

    #[test]
    fn shards_partition_the_dataset() {
        let ds = synth_generate(4, 97, 5, &dims(), 0.3).unwrap();
        for strategy in [ShardStrategy::Iid, ShardStrategy::LabelSkew] {
            let shards = shard_dataset(&ds.triplets, 4, 8, strategy).unwrap();
            let mut joined: Vec<String> = shards
                .iter()
                .flat_map(|s| s.triplets.iter().map(|t| format!("{t:?}")))
                .collect();
            let mut all: Vec<String> = ds.triplets.iter().map(|t| format!("{t:?}")).collect();
            joined.sort();
            all.sort();
            assert_eq!(joined, all);
        }
    }

    #[test]
    fn epoch_batches_drop_singletons() {
        let b = epoch_batches(9, 4, 1, 0, 0);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), [4, 4]);
        assert_eq!(batches_per_epoch(9, 4), 2);
        let b = epoch_batches(10, 4, 1, 0, 0);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), [4, 4, 2]);
        assert_eq!(batches_per_epoch(10, 4), 3);
        assert_ne!(epoch_batches(10, 4, 1, 0, 0), epoch_batches(10, 4, 1, 0, 1));
    }

    #[test]
    fn dataset_text_round_trip() {
        let ds = synth_generate(6, 25, 3, &dims(), 0.7).unwrap();
        let mut buf = Vec::new();
        write_triplets(&mut buf, &ds.triplets).unwrap();
        let back = read_triplets(buf.as_slice()).unwrap();
        assert_eq!(back, ds.triplets);
        assert!(read_triplets("1\tans1\t1 2\n".as_bytes()).is_err());
    }

    #[test]
    fn batch_assembly() {
        let ds = synth_generate(6, 6, 3, &dims(), 0.2).unwrap();
        let refs: Vec<&Triplet> = ds.triplets.iter().take(4).collect();
        let batch = ds.task.batch(&refs).unwrap();
        assert_eq!(batch.images.shape(), (4, 16));
        assert_eq!(batch.answers[0].len(), 8);
        assert_eq!(batch.targets, batch.classes);
    }

    #[test]
    fn zero_noise_classes_are_linearly_separable() {
        // nearest-prototype, a linear rule, recovers every class when noise is 0
        let gen = SynthGenerator::new(12, 16, &dims()).unwrap();
        let data = gen.generate(300, 0.0, Stream::TrainData).unwrap();
        for t in &data {
            let best = (0..16)
                .map(|c| {
                    let p = &gen.prototypes[c];
                    let score: f64 = p.iter().zip(&t.image).map(|(a, b)| a * b).sum::<f64>()
                        - 0.5 * p.iter().map(|a| a * a).sum::<f64>();
                    (c, score)
                })
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap()
                .0;
            assert_eq!(best, t.class_id);
        }
    }
}
