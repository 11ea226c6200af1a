//! Experiment runner: reads a TOML config, trains with the chosen protocol
//! and writes metrics, the message log, similarity matrices and
//! checkpoints.
//!
//! Output files in `out_dir`:
//!
//! * `metrics.csv`: `t,loss,val_acc,mean_diag,mean_offdiag,msgs_up,msgs_down,ms`,
//!   one line per round, flushed as it is written. `val_acc` is empty for
//!   rounds skipped by `eval_every`; `ms` is 0 unless `record_wall_clock` is
//!   set, which keeps the file reproducible.
//! * `transport.csv`: the full message log.
//! * `simmatrix_first.csv` / `simmatrix_last.csv`: the probe batch's
//!   similarity matrix before training and after the last round.
//! * `<component>.ckpt`: final global parameters in the binary checkpoint
//!   format.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::components::{Component, ComponentKind, DimConfig};
use crate::data::{shard_dataset, ShardStrategy, SynthConfig, SynthGenerator, Task, Triplet};
use crate::error::{Error, Result};
use crate::eval::{similarity_matrix, val_accuracy, AnswerBank, SimilarityMatrix};
use crate::losses::InfoNceConfig;
use crate::numerics::{AdamHyper, LrSchedule, Matrix, ParamSet};
use crate::protocol::reference::CentralizedUnicon;
use crate::protocol::{
    thread_budget, SlModel, SlSession, TrainSpec, TransportLog, UniconModel, UniconSession,
};
use crate::seed::Stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    #[default]
    Unicon,
    SlBaseline,
    /// UniCon's model and loss trained in one process with no protocol.
    Centralized,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::Unicon => "unicon",
            Protocol::SlBaseline => "sl_baseline",
            Protocol::Centralized => "centralized",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "unicon" => Ok(Protocol::Unicon),
            "sl_baseline" => Ok(Protocol::SlBaseline),
            "centralized" => Ok(Protocol::Centralized),
            other => Err(format!(
                "unknown protocol {other:?} (expected unicon, sl_baseline or centralized)"
            )),
        }
    }
}

/// Adam and learning-rate schedule settings. Defaults are the full-scale
/// training values; desk-scale configs raise the rate and shorten the warmup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub base_lr: f64,
    pub warmup_steps: u64,
    pub decay_rate: f64,
    /// Zero-based epochs at which the rate is multiplied by `decay_rate`.
    pub decay_epochs: Vec<u64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            base_lr: 1e-4,
            warmup_steps: 10_000,
            decay_rate: 0.2,
            decay_epochs: vec![10, 15],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub protocol: Protocol,
    /// K
    pub clients: usize,
    /// T
    pub rounds: usize,
    /// E
    pub local_epochs: usize,
    /// B
    pub batch_size: usize,
    /// Evaluate validation accuracy every this many rounds (and always
    /// after the last one).
    pub eval_every: usize,
    pub out_dir: PathBuf,
    /// Worker threads for clients; also capped by `UNICON_THREADS`.
    pub threads: Option<usize>,
    pub record_wall_clock: bool,
    /// Exclude padding positions from the APN max-pool.
    pub mask_pad_in_pool: bool,
    pub shard: ShardStrategy,
    pub dims: DimConfig,
    pub infonce: InfoNceConfig,
    pub optimizer: OptimizerConfig,
    /// `dataset.seed` is the master seed for data, initialisation and
    /// shuffling.
    pub dataset: SynthConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            protocol: Protocol::Unicon,
            clients: 2,
            rounds: 30,
            local_epochs: 1,
            batch_size: 32,
            eval_every: 1,
            out_dir: PathBuf::from("runs/default"),
            threads: None,
            record_wall_clock: false,
            mask_pad_in_pool: false,
            shard: ShardStrategy::Iid,
            dims: DimConfig {
                vocab_size: SynthGenerator::vocab_needed(SynthConfig::default().classes),
                ..DimConfig::default()
            },
            infonce: InfoNceConfig::default(),
            optimizer: OptimizerConfig::default(),
            dataset: SynthConfig::default(),
        }
    }
}

/// A configuration problem, with the 1-based line it refers to when known.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

fn line_of_offset(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].matches('\n').count() + 1
}

/// Line of the first `key = ...` assignment, optionally inside `[section]`.
fn line_of_key(src: &str, section: Option<&str>, key: &str) -> Option<usize> {
    let mut current: Option<String> = None;
    for (i, raw) in src.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = Some(name.trim().to_string());
            continue;
        }
        let Some((k, _)) = line.split_once('=') else {
            continue;
        };
        if k.trim() == key && current.as_deref() == section {
            return Some(i + 1);
        }
    }
    None
}

impl ExperimentConfig {
    /// Parses and validates. Errors carry the line of the offending key.
    pub fn from_toml_str(src: &str) -> std::result::Result<Self, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(src).map_err(|e| ConfigError {
            line: e.span().map(|s| line_of_offset(src, s.start)),
            message: e.message().trim().to_string(),
        })?;
        cfg.validate()
            .map_err(|(section, key, message)| ConfigError {
                line: line_of_key(src, section, key),
                message,
            })?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> std::result::Result<Self, ConfigError> {
        let src = std::fs::read_to_string(path).map_err(|e| ConfigError {
            line: None,
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        Self::from_toml_str(&src)
    }

    /// Checks cross-field constraints. On failure returns the section and
    /// key to blame along with the message.
    pub fn validate(
        &self,
    ) -> std::result::Result<(), (Option<&'static str>, &'static str, String)> {
        let top = |key, msg: String| Err((None, key, msg));
        if self.clients < 1 {
            return top("clients", "clients must be at least 1".into());
        }
        if self.protocol == Protocol::Centralized && self.clients != 1 {
            return top(
                "clients",
                format!(
                    "protocol centralized requires clients = 1, got {}",
                    self.clients
                ),
            );
        }
        if self.local_epochs < 1 {
            return top("local_epochs", "local_epochs must be at least 1".into());
        }
        if self.batch_size < 2 {
            return top(
                "batch_size",
                format!("batch_size must be at least 2, got {}", self.batch_size),
            );
        }
        if self.eval_every < 1 {
            return top("eval_every", "eval_every must be at least 1".into());
        }
        if self.threads == Some(0) {
            return top("threads", "threads must be at least 1".into());
        }
        if let Err(e) = self.dims.validate() {
            return Err((Some("dims"), dims_key(&e), e.to_string()));
        }
        let need = SynthGenerator::vocab_needed(self.dataset.classes);
        if self.dims.vocab_size < need {
            return Err((
                Some("dims"),
                "vocab_size",
                format!(
                    "{} classes need dims.vocab_size >= {need}, got {}",
                    self.dataset.classes, self.dims.vocab_size
                ),
            ));
        }
        if self.dataset.classes < 2 {
            return Err((
                Some("dataset"),
                "classes",
                "dataset.classes must be at least 2".into(),
            ));
        }
        if self.dataset.n < self.clients {
            return Err((
                Some("dataset"),
                "n",
                format!(
                    "{} examples cannot be split over {} clients",
                    self.dataset.n, self.clients
                ),
            ));
        }
        if self.dataset.n_val < 2 {
            return Err((
                Some("dataset"),
                "n_val",
                "dataset.n_val must be at least 2".into(),
            ));
        }
        if !(self.dataset.noise.is_finite() && self.dataset.noise >= 0.0) {
            return Err((
                Some("dataset"),
                "noise",
                "dataset.noise must be non-negative".into(),
            ));
        }
        if let Err(e) = self.infonce.validate() {
            return Err((Some("infonce"), "temperature", e.to_string()));
        }
        let o = &self.optimizer;
        if !(o.base_lr.is_finite() && o.base_lr > 0.0) {
            return Err((
                Some("optimizer"),
                "base_lr",
                "optimizer.base_lr must be positive".into(),
            ));
        }
        if !(o.decay_rate.is_finite() && o.decay_rate > 0.0) {
            return Err((
                Some("optimizer"),
                "decay_rate",
                "optimizer.decay_rate must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) {
            return Err((
                Some("optimizer"),
                "beta1",
                "Adam betas must lie in [0, 1)".into(),
            ));
        }
        if !(o.eps.is_finite() && o.eps > 0.0) {
            return Err((
                Some("optimizer"),
                "eps",
                "optimizer.eps must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn train_spec(&self) -> TrainSpec {
        let o = &self.optimizer;
        TrainSpec {
            local_epochs: self.local_epochs,
            batch_size: self.batch_size,
            seed: self.dataset.seed,
            adam: AdamHyper {
                beta1: o.beta1,
                beta2: o.beta2,
                eps: o.eps,
            },
            schedule: LrSchedule {
                base_lr: o.base_lr,
                warmup_steps: o.warmup_steps,
                decay_rate: o.decay_rate,
                decay_epochs: o.decay_epochs.clone(),
                steps_per_epoch: 1,
            },
            infonce: self.infonce,
        }
    }
}

fn dims_key(e: &Error) -> &'static str {
    let msg = e.to_string();
    [
        "image_dim",
        "question_len",
        "answer_len",
        "embed_dim",
        "apn_dim",
        "vqa_dim",
        "shared_dim",
        "nha_hidden",
        "sl_hidden",
        "vocab_size",
    ]
    .into_iter()
    .find(|k| msg.contains(k))
    .unwrap_or("vocab_size")
}

/// One line of `metrics.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    pub round: usize,
    pub loss: f64,
    pub val_acc: Option<f64>,
    pub mean_diag: f64,
    pub mean_offdiag: f64,
    pub msgs_up: usize,
    pub msgs_down: usize,
    pub ms: u64,
}

pub const METRICS_HEADER: &str = "t,loss,val_acc,mean_diag,mean_offdiag,msgs_up,msgs_down,ms";

/// Appends one report line and flushes. Floats use the shortest text that
/// parses back to the same value.
pub fn emit_metrics<W: Write>(report: &RoundReport, sink: &mut W) -> Result<()> {
    let acc = report.val_acc.map(|a| a.to_string()).unwrap_or_default();
    writeln!(
        sink,
        "{},{},{},{},{},{},{},{}",
        report.round,
        report.loss,
        acc,
        report.mean_diag,
        report.mean_offdiag,
        report.msgs_up,
        report.msgs_down,
        report.ms
    )?;
    sink.flush()?;
    Ok(())
}

/// What a finished run produced.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub reports: Vec<RoundReport>,
    /// Probe-batch similarity before training and after the last round.
    pub first: SimilarityMatrix,
    pub last: SimilarityMatrix,
    /// Checkpoint file name and sha256 of its contents.
    pub checkpoints: Vec<(String, String)>,
    pub out_dir: PathBuf,
}

impl RunSummary {
    pub fn final_val_acc(&self) -> Option<f64> {
        self.reports.iter().rev().find_map(|r| r.val_acc)
    }
}

/// Why a run stopped. Configuration problems exit with 2, anything else
/// with 1.
#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("invalid configuration: {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Runtime(#[from] Error),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Runtime(_) => 1,
        }
    }
}

/// Everything the protocols need, generated from the config.
struct Prepared {
    task: Arc<Task>,
    train: Vec<Triplet>,
    val: Vec<Triplet>,
    probe: Vec<Triplet>,
}

fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let d = &cfg.dataset;
    let generator = SynthGenerator::new(d.seed, d.classes, &cfg.dims)?;
    let train = generator.generate(d.n, d.noise, Stream::TrainData)?;
    let val = generator.generate(d.n_val, d.noise, Stream::ValData)?;
    let probe = val
        .iter()
        .take(cfg.batch_size.min(val.len()))
        .cloned()
        .collect();
    Ok(Prepared {
        task: Arc::new(generator.into_task()),
        train,
        val,
        probe,
    })
}

fn client_shards(cfg: &ExperimentConfig, train: &[Triplet]) -> Result<Vec<Vec<Triplet>>> {
    let shards = shard_dataset(train, cfg.clients, cfg.dataset.seed, cfg.shard)?;
    Ok(shards.into_iter().map(|s| s.triplets).collect())
}

fn unicon_similarity(
    model: &UniconModel,
    task: &Task,
    probe: &[Triplet],
) -> Result<SimilarityMatrix> {
    let refs: Vec<&Triplet> = probe.iter().collect();
    let batch = task.batch(&refs)?;
    let (v_vqa, _) = model.vqa.forward(&batch.images, &batch.questions)?;
    let v_nha = model.nha.infer(&v_vqa)?;
    let (v_apn, _) = model.apn.forward(&batch.answers)?;
    let (v_lta, _) = model.lta.forward(&v_apn)?;
    similarity_matrix(&v_nha, &v_lta)
}

/// For the baseline, entry `(i, j)` is sample `i`'s logit for sample `j`'s
/// answer, the classifier's counterpart of a similarity score.
fn sl_similarity(model: &SlModel, task: &Task, probe: &[Triplet]) -> Result<SimilarityMatrix> {
    let refs: Vec<&Triplet> = probe.iter().collect();
    let batch = task.batch(&refs)?;
    let (h, _) = model.head.forward(&batch.images, &batch.questions)?;
    let (g, _) = model.global.forward(&h)?;
    let (logits, _) = model.tail.forward(&g)?;
    let b = batch.len();
    let mut m = Matrix::zeros(b, b);
    for i in 0..b {
        for (j, &target) in batch.targets.iter().enumerate() {
            m.row_mut(i)[j] = logits[(i, target)];
        }
    }
    let identity = Matrix::identity(b);
    let sim = similarity_matrix(&m, &identity)?;
    Ok(sim)
}

fn unicon_accuracy(model: &UniconModel, task: &Task, val: &[Triplet]) -> Result<f64> {
    let bank = AnswerBank::build(task, &model.apn, &model.lta)?;
    Ok(val_accuracy(&model.vqa, &model.nha, &bank, task, val)?.accuracy)
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

fn write_checkpoints(
    dir: &Path,
    sets: &[(ComponentKind, &ParamSet)],
) -> Result<Vec<(String, String)>> {
    let mut out = Vec::with_capacity(sets.len());
    for (kind, params) in sets {
        let name = format!("{}.ckpt", kind.name());
        std::fs::write(dir.join(&name), params.to_bytes())?;
        out.push((name, params.digest()));
    }
    Ok(out)
}

/// Trains according to `cfg` and writes every output file.
pub fn run_experiment(cfg: &ExperimentConfig) -> std::result::Result<RunSummary, RunError> {
    cfg.validate().map_err(|(_, _, message)| ConfigError {
        line: None,
        message,
    })?;
    let prep = prepare(cfg)?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(Error::from)?;
    let dir = cfg.out_dir.as_path();
    let mut metrics = BufWriter::new(File::create(dir.join("metrics.csv")).map_err(Error::from)?);
    writeln!(metrics, "{METRICS_HEADER}").map_err(Error::from)?;
    metrics.flush().map_err(Error::from)?;

    let spec = cfg.train_spec();
    let seed = cfg.dataset.seed;
    let threads = thread_budget(cfg.clients).min(cfg.threads.unwrap_or(usize::MAX));
    let evaluate = |t: usize| t.is_multiple_of(cfg.eval_every) || t == cfg.rounds;
    let mut reports = Vec::with_capacity(cfg.rounds);

    let mut record = |reports: &mut Vec<RoundReport>, r: RoundReport| -> Result<()> {
        log::info!(
            "round {}: loss {:.4} val_acc {} gap {:.4}",
            r.round,
            r.loss,
            r.val_acc.map_or("-".to_string(), |a| format!("{a:.4}")),
            r.mean_diag - r.mean_offdiag
        );
        emit_metrics(&r, &mut metrics)?;
        reports.push(r);
        Ok(())
    };

    let (first, last, log, checkpoints) = match cfg.protocol {
        Protocol::Unicon | Protocol::Centralized => {
            let model = UniconModel::init(&cfg.dims, cfg.mask_pad_in_pool, seed);
            let first = unicon_similarity(&model, &prep.task, &prep.probe)?;
            let (model, log) = if cfg.protocol == Protocol::Unicon {
                let shards = client_shards(cfg, &prep.train)?;
                let mut session = UniconSession::new(prep.task.clone(), shards, model, spec)?;
                session.set_threads(threads);
                for t in 1..=cfg.rounds {
                    let start = Instant::now();
                    let stats = session.run_round()?;
                    let global = session.global_model()?;
                    let sim = unicon_similarity(&global, &prep.task, &prep.probe)?;
                    let val_acc = if evaluate(t) {
                        Some(unicon_accuracy(&global, &prep.task, &prep.val)?)
                    } else {
                        None
                    };
                    let ms = if cfg.record_wall_clock {
                        start.elapsed().as_millis() as u64
                    } else {
                        0
                    };
                    record(
                        &mut reports,
                        RoundReport {
                            round: t,
                            loss: stats.mean_loss,
                            val_acc,
                            mean_diag: sim.mean_diag,
                            mean_offdiag: sim.mean_offdiag,
                            msgs_up: stats.messages_up,
                            msgs_down: stats.messages_down,
                            ms,
                        },
                    )?;
                }
                (session.global_model()?, session.log().clone())
            } else {
                // The single shard holds every example in the same order a
                // one-client session would see them.
                let all = client_shards(cfg, &prep.train)?.remove(0);
                let mut trainer = CentralizedUnicon::new(model, all, spec)?;
                for t in 1..=cfg.rounds {
                    let start = Instant::now();
                    let loss = trainer.run_round(&prep.task)?;
                    let sim = unicon_similarity(&trainer.model, &prep.task, &prep.probe)?;
                    let val_acc = if evaluate(t) {
                        Some(unicon_accuracy(&trainer.model, &prep.task, &prep.val)?)
                    } else {
                        None
                    };
                    let ms = if cfg.record_wall_clock {
                        start.elapsed().as_millis() as u64
                    } else {
                        0
                    };
                    record(
                        &mut reports,
                        RoundReport {
                            round: t,
                            loss,
                            val_acc,
                            mean_diag: sim.mean_diag,
                            mean_offdiag: sim.mean_offdiag,
                            msgs_up: 0,
                            msgs_down: 0,
                            ms,
                        },
                    )?;
                }
                (trainer.model, TransportLog::new())
            };
            let last = unicon_similarity(&model, &prep.task, &prep.probe)?;
            let ckpts = write_checkpoints(
                dir,
                &[
                    (ComponentKind::Vqa, model.vqa.params()),
                    (ComponentKind::Apn, model.apn.params()),
                    (ComponentKind::Nha, model.nha.params()),
                    (ComponentKind::Lta, model.lta.params()),
                ],
            )?;
            (first, last, log, ckpts)
        }
        Protocol::SlBaseline => {
            let model = SlModel::init(&cfg.dims, cfg.dataset.classes, seed);
            let first = sl_similarity(&model, &prep.task, &prep.probe)?;
            let shards = client_shards(cfg, &prep.train)?;
            let mut session = SlSession::new(prep.task.clone(), shards, model, spec)?;
            session.set_threads(threads);
            for t in 1..=cfg.rounds {
                let start = Instant::now();
                let stats = session.run_round()?;
                let global = session.global_model()?;
                let sim = sl_similarity(&global, &prep.task, &prep.probe)?;
                let val_acc = if evaluate(t) {
                    Some(global.accuracy(&prep.task, &prep.val)?)
                } else {
                    None
                };
                let ms = if cfg.record_wall_clock {
                    start.elapsed().as_millis() as u64
                } else {
                    0
                };
                record(
                    &mut reports,
                    RoundReport {
                        round: t,
                        loss: stats.mean_loss,
                        val_acc,
                        mean_diag: sim.mean_diag,
                        mean_offdiag: sim.mean_offdiag,
                        msgs_up: stats.messages_up,
                        msgs_down: stats.messages_down,
                        ms,
                    },
                )?;
            }
            let model = session.global_model()?;
            let last = sl_similarity(&model, &prep.task, &prep.probe)?;
            let ckpts = write_checkpoints(
                dir,
                &[
                    (ComponentKind::SlHead, model.head.params()),
                    (ComponentKind::SlGlobal, model.global.params()),
                    (ComponentKind::SlTail, model.tail.params()),
                ],
            )?;
            (first, last, session.log().clone(), ckpts)
        }
    };

    write_file(&dir.join("transport.csv"), |w| log.write_csv(w))?;
    write_file(&dir.join("simmatrix_first.csv"), |w| first.write_csv(w))?;
    write_file(&dir.join("simmatrix_last.csv"), |w| last.write_csv(w))?;
    Ok(RunSummary {
        reports,
        first,
        last,
        checkpoints,
        out_dir: cfg.out_dir.clone(),
    })
}
