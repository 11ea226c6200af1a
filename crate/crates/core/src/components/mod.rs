//! Model components at configurable scale: the toy VQA backbone, the answer
//! projection network (APN), the nonlinear head adapter (NHA), the linear
//! tail adapter (LTA), and the two extra pieces used by the classical
//! split-learning baseline.
//!
//! Every component owns a [`ParamSet`]; `forward` returns an owned cache and
//! `backward` consumes a cache and accumulates into the component's own
//! gradient buffers.

mod apn;
mod lta;
mod nha;
mod sl;
mod vocab;
mod vqa;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, ParamSet};

pub use apn::{Apn, ApnCache};
pub use lta::{Lta, LtaCache};
pub use nha::{Nha, NhaCache};
pub use sl::{SlClassifier, SlClassifierCache, SlGlobal, SlGlobalCache};
pub use vocab::{tokenize, Vocab, PAD, UNK};
pub use vqa::{ToyVqa, ToyVqaCache};

/// Layer widths shared by every component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DimConfig {
    /// Image feature width.
    pub image_dim: usize,
    /// Maximum question tokens.
    pub question_len: usize,
    /// Maximum answer tokens.
    pub answer_len: usize,
    /// Word-embedding width.
    pub embed_dim: usize,
    /// APN output width.
    pub apn_dim: usize,
    /// VQA backbone output width; must be even (image and question halves).
    pub vqa_dim: usize,
    /// Shared projection width of NHA and LTA.
    pub shared_dim: usize,
    /// NHA hidden width.
    pub nha_hidden: usize,
    /// Hidden width of the baseline's server-side MLP.
    pub sl_hidden: usize,
    pub vocab_size: usize,
}

impl Default for DimConfig {
    fn default() -> Self {
        Self {
            image_dim: 16,
            question_len: 8,
            answer_len: 8,
            embed_dim: 16,
            apn_dim: 32,
            vqa_dim: 32,
            shared_dim: 16,
            nha_hidden: 32,
            sl_hidden: 32,
            vocab_size: 64,
        }
    }
}

impl DimConfig {
    /// Full-scale widths: 300-d word vectors, 512-d APN output, 512-d NHA
    /// hidden layer and a 256-d shared space.
    pub fn paper_scale(vocab_size: usize) -> Self {
        Self {
            image_dim: 2048,
            question_len: 14,
            answer_len: 8,
            embed_dim: 300,
            apn_dim: 512,
            vqa_dim: 1024,
            shared_dim: 256,
            nha_hidden: 512,
            sl_hidden: 512,
            vocab_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let named = [
            ("image_dim", self.image_dim),
            ("question_len", self.question_len),
            ("answer_len", self.answer_len),
            ("embed_dim", self.embed_dim),
            ("apn_dim", self.apn_dim),
            ("vqa_dim", self.vqa_dim),
            ("shared_dim", self.shared_dim),
            ("nha_hidden", self.nha_hidden),
            ("sl_hidden", self.sl_hidden),
        ];
        for (name, v) in named {
            if v == 0 {
                return Err(Error::Config(format!("dims.{name} must be at least 1")));
            }
        }
        if !self.vqa_dim.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "dims.vqa_dim must be even, got {}",
                self.vqa_dim
            )));
        }
        if self.vocab_size < 2 {
            return Err(Error::Config(
                "dims.vocab_size must cover the pad and unknown tokens".into(),
            ));
        }
        Ok(())
    }
}

/// Which of the four UniCon components (or the baseline's three) a parameter
/// set belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ComponentKind {
    Vqa,
    Apn,
    Nha,
    Lta,
    SlHead,
    SlGlobal,
    SlTail,
}

impl ComponentKind {
    pub const UNICON: [ComponentKind; 4] = [Self::Vqa, Self::Apn, Self::Nha, Self::Lta];

    /// Components that live on clients; their deltas go to the auxiliary
    /// server, everything else to the main server.
    pub fn is_client_side(self) -> bool {
        matches!(self, Self::Vqa | Self::Apn | Self::SlHead | Self::SlTail)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Vqa => "vqa",
            Self::Apn => "apn",
            Self::Nha => "nha",
            Self::Lta => "lta",
            Self::SlHead => "sl_head",
            Self::SlGlobal => "sl_global",
            Self::SlTail => "sl_tail",
        }
    }
}

/// Common access to a component's parameters.
pub trait Component {
    const KIND: ComponentKind;

    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;
}

/// Weight uniform in `±sqrt(1/fan_in)`, bias zero.
pub(crate) fn init_linear<R: Rng + ?Sized>(
    params: &mut ParamSet,
    prefix: &str,
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) {
    let bound = (1.0 / fan_in as f64).sqrt();
    params.insert(
        format!("{prefix}.weight"),
        Matrix::uniform(fan_in, fan_out, bound, rng),
    );
    params.insert(format!("{prefix}.bias"), Matrix::zeros(1, fan_out));
}

/// Embedding table uniform in `±0.1` with the pad row zeroed.
pub(crate) fn init_embedding<R: Rng + ?Sized>(vocab: usize, dim: usize, rng: &mut R) -> Matrix {
    let mut table = Matrix::uniform(vocab, dim, 0.1, rng);
    table.row_mut(PAD).fill(0.0);
    table
}

pub(crate) fn check_tokens(tokens: &[Vec<usize>], width: usize, vocab: usize) -> Result<()> {
    for row in tokens {
        if row.len() != width {
            return Err(Error::shape(
                "token batch",
                format!("row of {} tokens, expected {width}", row.len()),
            ));
        }
        if let Some(&bad) = row.iter().find(|&&t| t >= vocab) {
            return Err(Error::IndexOutOfRange {
                what: "vocabulary",
                index: bad,
                len: vocab,
            });
        }
    }
    Ok(())
}

pub(crate) fn check_cols(x: &Matrix, cols: usize, op: &'static str) -> Result<()> {
    if x.cols() != cols {
        return Err(Error::shape(
            op,
            format!("input has {} columns, expected {cols}", x.cols()),
        ));
    }
    Ok(())
}
