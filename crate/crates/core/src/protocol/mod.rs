//! Client and server state machines for UniCon and the split-learning
//! baseline, run over an in-process transport that logs every message.
//!
//! Within a round every client trains against its own copy of the global
//! components. Rounds end with the two-server delta aggregation in
//! [`crate::aggregation`]. Clients of one round may run on worker threads.
//! Each worker buffers its log records, and the buffers are merged in
//! client order, so logs and parameters do not depend on the thread count.

mod message;
pub mod reference;
pub mod sl;
mod transport;
pub mod unicon;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use message::{
    MessageKind, ParamDown, Party, ProtocolMessage, SlGradDown, SlGradUp, SlRepDown, SlRepUp,
    UniconGradDown, UniconRepUp,
};
pub use sl::{SlClient, SlMainServer, SlModel, SlSession};
pub use transport::{
    check_model_partition, messages_by_batch, transport_stats, Envelope, LogRecord, Transport,
    TransportLog, TransportStats,
};
pub use unicon::{UniconClient, UniconMainServer, UniconModel, UniconSession, UniconSlot};

use crate::aggregation::{aggregate_deltas, apply_aggregate, DeltaRecord};
use crate::components::ComponentKind;
use crate::error::{Error, Result};
use crate::losses::InfoNceConfig;
use crate::numerics::{AdamHyper, LrSchedule, ParamSet};

/// Environment variable capping the number of client worker threads.
pub const THREADS_ENV: &str = "UNICON_THREADS";

/// Training hyperparameters shared by every party.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSpec {
    /// Local epochs per round.
    pub local_epochs: usize,
    pub batch_size: usize,
    /// Master seed for batch shuffling.
    pub seed: u64,
    pub adam: AdamHyper,
    /// `steps_per_epoch` is replaced per client by its own batch count.
    pub schedule: LrSchedule,
    pub infonce: InfoNceConfig,
}

impl TrainSpec {
    pub fn validate(&self) -> Result<()> {
        if self.local_epochs == 0 {
            return Err(Error::Config("local_epochs must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch_size must be at least 2, got {}",
                self.batch_size
            )));
        }
        if !(self.schedule.base_lr.is_finite() && self.schedule.base_lr > 0.0) {
            return Err(Error::Config("base_lr must be positive".into()));
        }
        self.infonce.validate()
    }

    pub(crate) fn schedule_for(&self, shard_len: usize) -> LrSchedule {
        LrSchedule {
            steps_per_epoch: crate::data::batches_per_epoch(shard_len, self.batch_size) as u64,
            ..self.schedule.clone()
        }
    }

    /// Zero-based epoch index used for shuffling, counted across rounds.
    pub(crate) fn global_epoch(&self, round: usize, epoch: usize) -> usize {
        (round - 1) * self.local_epochs + epoch
    }
}

/// What one round did.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundStats {
    pub round: usize,
    /// Mean batch loss over every client batch of the round.
    pub mean_loss: f64,
    pub batches: usize,
    pub messages_up: usize,
    pub messages_down: usize,
}

/// Per-client outcome of one round of local training.
#[derive(Debug, Default)]
pub(crate) struct ClientRoundOutcome {
    pub loss_sum: f64,
    pub batches: usize,
    pub transport: Transport,
    pub deltas: Vec<DeltaRecord>,
}

/// Holds the global client-side components and averages their deltas. It
/// never receives server-side parameters.
#[derive(Debug, Clone)]
pub struct AuxServer {
    globals: BTreeMap<ComponentKind, ParamSet>,
}

impl AuxServer {
    pub fn new(globals: impl IntoIterator<Item = (ComponentKind, ParamSet)>) -> Result<Self> {
        let globals: BTreeMap<_, _> = globals.into_iter().collect();
        if let Some(kind) = globals.keys().find(|k| !k.is_client_side()) {
            return Err(Error::Config(format!(
                "auxiliary server cannot hold {} parameters",
                kind.name()
            )));
        }
        Ok(Self { globals })
    }

    pub fn global(&self, kind: ComponentKind) -> Option<&ParamSet> {
        self.globals.get(&kind)
    }

    /// Sends the current globals to client `k` for `round`.
    pub(crate) fn distribute(
        &self,
        k: usize,
        round: usize,
        transport: &mut Transport,
    ) -> Result<Vec<ParamDown>> {
        let mut out = Vec::with_capacity(self.globals.len());
        for (&component, params) in &self.globals {
            let msg = ProtocolMessage::ParamDown(ParamDown {
                component,
                round,
                client: k,
                params: params.clone(),
            });
            let env = transport.send(Party::AuxServer, Party::Client(k), round, msg)?;
            let ProtocolMessage::ParamDown(p) = env.message else {
                unreachable!("sent a ParamDown")
            };
            out.push(p);
        }
        Ok(out)
    }

    /// Averages the round's deltas for every held component.
    pub fn aggregate(&mut self, records: &[DeltaRecord], k: usize) -> Result<()> {
        for (kind, global) in self.globals.iter_mut() {
            let mine: Vec<DeltaRecord> = records
                .iter()
                .filter(|r| r.component == *kind)
                .cloned()
                .collect();
            *global = apply_aggregate(global, &aggregate_deltas(&mine, k)?)?;
        }
        Ok(())
    }
}

/// Merges per-client outcomes into the shared log in client order and
/// routes every delta through the transport.
pub(crate) fn merge_outcomes(
    outcomes: Vec<ClientRoundOutcome>,
    log: &mut TransportLog,
    round: usize,
) -> Result<(crate::aggregation::Routed, f64, usize)> {
    let mut loss_sum = 0.0;
    let mut batches = 0;
    let mut deltas = Vec::new();
    for mut o in outcomes {
        o.transport.flush_into(log);
        loss_sum += o.loss_sum;
        batches += o.batches;
        deltas.extend(o.deltas);
    }
    let mut t = Transport::new();
    let routed = crate::aggregation::route_deltas(deltas, &mut t)?;
    t.flush_into(log);
    debug_assert!(routed
        .to_aux
        .iter()
        .chain(&routed.to_main)
        .all(|r| r.round == round));
    Ok((routed, loss_sum, batches))
}

/// Worker threads to use: the `UNICON_THREADS` cap if set, else the
/// available parallelism, never more than `clients`.
pub fn thread_budget(clients: usize) -> usize {
    let cap = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    cap.min(clients).max(1)
}

/// Runs `work` on every `(client, slot)` pair, spreading pairs over at most
/// `threads` scoped threads. Results come back indexed by pair position.
pub(crate) fn run_parallel<C, S, F>(
    pairs: Vec<(&mut C, &mut S)>,
    threads: usize,
    work: F,
) -> Vec<Result<ClientRoundOutcome>>
where
    C: Send,
    S: Send,
    F: Fn(&mut C, &mut S) -> Result<ClientRoundOutcome> + Sync,
{
    if threads <= 1 || pairs.len() <= 1 {
        return pairs.into_iter().map(|(c, s)| work(c, s)).collect();
    }
    let n = pairs.len();
    let per = n.div_ceil(threads);
    let mut indexed: Vec<(usize, (&mut C, &mut S))> = pairs.into_iter().enumerate().collect();
    let mut results: Vec<Option<Result<ClientRoundOutcome>>> = (0..n).map(|_| None).collect();
    std::thread::scope(|scope| {
        let work = &work;
        let mut handles = Vec::new();
        while !indexed.is_empty() {
            let take = per.min(indexed.len());
            let chunk: Vec<_> = indexed.drain(..take).collect();
            handles.push(scope.spawn(move || {
                chunk
                    .into_iter()
                    .map(|(i, (c, s))| (i, work(c, s)))
                    .collect::<Vec<_>>()
            }));
        }
        for h in handles {
            for (i, r) in h.join().expect("client worker panicked") {
                results[i] = Some(r);
            }
        }
    });
    results
        .into_iter()
        .map(|r| r.expect("every client ran"))
        .collect()
}

/// Validates an execution order: a permutation of `0..k`.
pub(crate) fn check_order(order: &[usize], k: usize) -> Result<()> {
    let mut seen = vec![false; k];
    for &i in order {
        if i >= k || std::mem::replace(&mut seen[i], true) {
            return Err(Error::Config(format!(
                "client order {order:?} is not a permutation of 0..{k}"
            )));
        }
    }
    if order.len() != k {
        return Err(Error::Config(format!(
            "client order {order:?} is not a permutation of 0..{k}"
        )));
    }
    Ok(())
}
