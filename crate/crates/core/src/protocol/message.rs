use std::fmt;

use serde::{Deserialize, Serialize};

use crate::aggregation::DeltaRecord;
use crate::components::ComponentKind;
use crate::numerics::{Matrix, ParamSet};

/// A protocol participant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Party {
    Client(usize),
    /// Holds the global (server-side) components and runs the loss.
    MainServer,
    /// Averages client-component deltas.
    AuxServer,
    /// The main server's per-client working copy of the global components.
    MainWorker(usize),
}

impl Party {
    pub fn is_client(self) -> bool {
        matches!(self, Party::Client(_))
    }

    pub fn is_server(self) -> bool {
        !self.is_client()
    }
}

impl fmt::Display for Party {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Party::Client(k) => write!(f, "client{k}"),
            Party::MainServer => write!(f, "main"),
            Party::AuxServer => write!(f, "aux"),
            Party::MainWorker(k) => write!(f, "main_worker{k}"),
        }
    }
}

/// Both client-side representations of one batch, computed before any
/// server interaction.
#[derive(Debug, Clone, PartialEq)]
pub struct UniconRepUp {
    pub client: usize,
    pub round: usize,
    pub epoch: usize,
    pub batch_id: u64,
    pub v_vqa: Matrix,
    pub v_apn: Matrix,
}

/// Loss gradients with respect to the uploaded representations.
#[derive(Debug, Clone, PartialEq)]
pub struct UniconGradDown {
    pub client: usize,
    pub batch_id: u64,
    pub loss: f64,
    pub d_v_vqa: Matrix,
    pub d_v_apn: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlRepUp {
    pub client: usize,
    pub round: usize,
    pub epoch: usize,
    pub batch_id: u64,
    pub v_c1: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlRepDown {
    pub client: usize,
    pub batch_id: u64,
    pub v_g: Matrix,
}

/// Gradient of the client loss with respect to the server output.
#[derive(Debug, Clone, PartialEq)]
pub struct SlGradUp {
    pub client: usize,
    pub batch_id: u64,
    pub d_v_g: Matrix,
}

/// Gradient propagated back to the client head's output.
#[derive(Debug, Clone, PartialEq)]
pub struct SlGradDown {
    pub client: usize,
    pub batch_id: u64,
    pub d_v_c1: Matrix,
}

/// Round-start copy of a component's aggregated parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamDown {
    pub component: ComponentKind,
    pub round: usize,
    pub client: usize,
    pub params: ParamSet,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProtocolMessage {
    UniconRepUp(UniconRepUp),
    UniconGradDown(UniconGradDown),
    SlRepUp(SlRepUp),
    SlRepDown(SlRepDown),
    SlGradUp(SlGradUp),
    SlGradDown(SlGradDown),
    DeltaUp(DeltaRecord),
    ParamDown(ParamDown),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MessageKind {
    UniconRepUp,
    UniconGradDown,
    SlRepUp,
    SlRepDown,
    SlGradUp,
    SlGradDown,
    DeltaUp,
    ParamDown,
}

impl MessageKind {
    /// Messages exchanged per batch, as opposed to round-level parameter
    /// traffic.
    pub fn is_training(self) -> bool {
        !matches!(self, MessageKind::DeltaUp | MessageKind::ParamDown)
    }

    pub fn name(self) -> &'static str {
        match self {
            MessageKind::UniconRepUp => "unicon_rep_up",
            MessageKind::UniconGradDown => "unicon_grad_down",
            MessageKind::SlRepUp => "sl_rep_up",
            MessageKind::SlRepDown => "sl_rep_down",
            MessageKind::SlGradUp => "sl_grad_up",
            MessageKind::SlGradDown => "sl_grad_down",
            MessageKind::DeltaUp => "delta_up",
            MessageKind::ParamDown => "param_down",
        }
    }
}

impl ProtocolMessage {
    pub fn kind(&self) -> MessageKind {
        match self {
            ProtocolMessage::UniconRepUp(_) => MessageKind::UniconRepUp,
            ProtocolMessage::UniconGradDown(_) => MessageKind::UniconGradDown,
            ProtocolMessage::SlRepUp(_) => MessageKind::SlRepUp,
            ProtocolMessage::SlRepDown(_) => MessageKind::SlRepDown,
            ProtocolMessage::SlGradUp(_) => MessageKind::SlGradUp,
            ProtocolMessage::SlGradDown(_) => MessageKind::SlGradDown,
            ProtocolMessage::DeltaUp(_) => MessageKind::DeltaUp,
            ProtocolMessage::ParamDown(_) => MessageKind::ParamDown,
        }
    }

    /// Logged payload shape. Paired representations are reported side by
    /// side (`B x (H + P)`), parameter payloads as `1 x scalar_count`, and
    /// deltas as `2 x scalar_count` (value and residual).
    pub fn payload_shape(&self) -> (usize, usize) {
        let pair = |a: &Matrix, b: &Matrix| (a.rows(), a.cols() + b.cols());
        match self {
            ProtocolMessage::UniconRepUp(m) => pair(&m.v_vqa, &m.v_apn),
            ProtocolMessage::UniconGradDown(m) => pair(&m.d_v_vqa, &m.d_v_apn),
            ProtocolMessage::SlRepUp(m) => m.v_c1.shape(),
            ProtocolMessage::SlRepDown(m) => m.v_g.shape(),
            ProtocolMessage::SlGradUp(m) => m.d_v_g.shape(),
            ProtocolMessage::SlGradDown(m) => m.d_v_c1.shape(),
            ProtocolMessage::DeltaUp(r) => (2, r.delta.num_scalars()),
            ProtocolMessage::ParamDown(p) => (1, p.params.num_scalars()),
        }
    }

    pub fn component(&self) -> Option<ComponentKind> {
        match self {
            ProtocolMessage::DeltaUp(r) => Some(r.component),
            ProtocolMessage::ParamDown(p) => Some(p.component),
            _ => None,
        }
    }

    pub fn batch_id(&self) -> Option<u64> {
        match self {
            ProtocolMessage::UniconRepUp(m) => Some(m.batch_id),
            ProtocolMessage::UniconGradDown(m) => Some(m.batch_id),
            ProtocolMessage::SlRepUp(m) => Some(m.batch_id),
            ProtocolMessage::SlRepDown(m) => Some(m.batch_id),
            ProtocolMessage::SlGradUp(m) => Some(m.batch_id),
            ProtocolMessage::SlGradDown(m) => Some(m.batch_id),
            _ => None,
        }
    }

    /// Whether every matrix in the payload is finite.
    pub fn is_finite(&self) -> bool {
        match self {
            ProtocolMessage::UniconRepUp(m) => m.v_vqa.is_finite() && m.v_apn.is_finite(),
            ProtocolMessage::UniconGradDown(m) => m.d_v_vqa.is_finite() && m.d_v_apn.is_finite(),
            ProtocolMessage::SlRepUp(m) => m.v_c1.is_finite(),
            ProtocolMessage::SlRepDown(m) => m.v_g.is_finite(),
            ProtocolMessage::SlGradUp(m) => m.d_v_g.is_finite(),
            ProtocolMessage::SlGradDown(m) => m.d_v_c1.is_finite(),
            ProtocolMessage::DeltaUp(r) => r.delta.all_finite() && r.residual.all_finite(),
            ProtocolMessage::ParamDown(p) => p.params.all_finite(),
        }
    }
}
