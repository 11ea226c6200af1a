//! In-process transport: stamps every message with a per-channel sequence
//! number and records a summary in an append-only log.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;

use super::message::{MessageKind, Party, ProtocolMessage};
use crate::components::ComponentKind;
use crate::error::{Error, Result};

/// A delivered message with its routing header.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub seq: u64,
    pub sender: Party,
    pub receiver: Party,
    pub message: ProtocolMessage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub ordinal: u64,
    pub kind: MessageKind,
    pub sender: Party,
    pub receiver: Party,
    pub seq: u64,
    pub rows: usize,
    pub cols: usize,
    pub round: usize,
    pub batch_id: Option<u64>,
    pub component: Option<ComponentKind>,
}

impl LogRecord {
    /// The client this record concerns, if any.
    pub fn client(&self) -> Option<usize> {
        match (self.sender, self.receiver) {
            (Party::Client(k), _) | (_, Party::Client(k)) => Some(k),
            (Party::MainWorker(k), _) | (_, Party::MainWorker(k)) => Some(k),
            _ => None,
        }
    }

    pub fn bytes(&self) -> usize {
        self.rows * self.cols * 8
    }
}

/// Append-only message log with dense ordinals from zero.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TransportLog {
    records: Vec<LogRecord>,
}

impl TransportLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn push(&mut self, mut record: LogRecord) {
        record.ordinal = self.records.len() as u64;
        self.records.push(record);
    }

    /// Appends records from a worker's buffer, renumbering ordinals.
    pub fn absorb(&mut self, buffer: &mut Vec<LogRecord>) {
        for r in buffer.drain(..) {
            self.push(r);
        }
    }

    /// `ordinal,kind,sender,receiver,rows,cols` with a header line.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "ordinal,kind,sender,receiver,rows,cols")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.ordinal,
                r.kind.name(),
                r.sender,
                r.receiver,
                r.rows,
                r.cols
            )?;
        }
        Ok(())
    }
}

/// Sequence-number state for a set of channels plus a buffer of records
/// not yet merged into a [`TransportLog`].
#[derive(Debug, Clone, Default)]
pub struct Transport {
    seqs: HashMap<(Party, Party), u64>,
    pending: Vec<LogRecord>,
}

impl Transport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn send(
        &mut self,
        sender: Party,
        receiver: Party,
        round: usize,
        message: ProtocolMessage,
    ) -> Result<Envelope> {
        if !message.is_finite() {
            return Err(Error::ProtocolOrder(format!(
                "{} from {sender} to {receiver} carries non-finite values",
                message.kind().name()
            )));
        }
        let seq = self.seqs.entry((sender, receiver)).or_insert(0);
        let this = *seq;
        *seq += 1;
        let (rows, cols) = message.payload_shape();
        self.pending.push(LogRecord {
            ordinal: 0,
            kind: message.kind(),
            sender,
            receiver,
            seq: this,
            rows,
            cols,
            round,
            batch_id: message.batch_id(),
            component: message.component(),
        });
        Ok(Envelope {
            seq: this,
            sender,
            receiver,
            message,
        })
    }

    /// Moves buffered records into `log`.
    pub fn flush_into(&mut self, log: &mut TransportLog) {
        log.absorb(&mut self.pending);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TransportStats {
    pub messages_up: usize,
    pub messages_down: usize,
    pub training_up: usize,
    pub training_down: usize,
    /// Distinct (client, batch) pairs with training traffic.
    pub batches: usize,
    /// Server replies per (client, batch); each reply closes one round trip.
    pub round_trips_per_batch: f64,
    pub bytes: usize,
}

/// Exact counts over a log. Up means addressed to a server, down means
/// addressed to a client.
pub fn transport_stats(log: &TransportLog) -> TransportStats {
    let mut s = TransportStats::default();
    let mut batches = BTreeSet::new();
    for r in log.records() {
        let up = r.receiver.is_server();
        if up {
            s.messages_up += 1;
        } else {
            s.messages_down += 1;
        }
        if r.kind.is_training() {
            if up {
                s.training_up += 1;
            } else {
                s.training_down += 1;
            }
            if let (Some(k), Some(b)) = (r.client(), r.batch_id) {
                batches.insert((k, b));
            }
        }
        s.bytes += r.bytes();
    }
    s.batches = batches.len();
    if s.batches > 0 {
        s.round_trips_per_batch = s.training_down as f64 / s.batches as f64;
    }
    s
}

/// Training messages grouped by (client, batch), in log order.
pub fn messages_by_batch(log: &TransportLog) -> BTreeMap<(usize, u64), Vec<&LogRecord>> {
    let mut out: BTreeMap<(usize, u64), Vec<&LogRecord>> = BTreeMap::new();
    for r in log.records().iter().filter(|r| r.kind.is_training()) {
        if let (Some(k), Some(b)) = (r.client(), r.batch_id) {
            out.entry((k, b)).or_default().push(r);
        }
    }
    out
}

/// Checks that parameter traffic never reveals the whole model to one
/// party: the main server only receives server-side components, the
/// auxiliary server only client-side ones, and no receiver collects every
/// component kind that appears in the log.
pub fn check_model_partition(log: &TransportLog) -> Result<()> {
    let mut seen: BTreeMap<Party, BTreeSet<ComponentKind>> = BTreeMap::new();
    let mut all = BTreeSet::new();
    for r in log.records() {
        let Some(c) = r.component else { continue };
        all.insert(c);
        match r.receiver {
            Party::MainServer if c.is_client_side() => {
                return Err(Error::ProtocolOrder(format!(
                    "main server received {} parameters (ordinal {})",
                    c.name(),
                    r.ordinal
                )));
            }
            Party::AuxServer if !c.is_client_side() => {
                return Err(Error::ProtocolOrder(format!(
                    "auxiliary server received {} parameters (ordinal {})",
                    c.name(),
                    r.ordinal
                )));
            }
            _ => {}
        }
        seen.entry(r.receiver).or_default().insert(c);
    }
    if all.len() > 1 {
        if let Some((party, _)) = seen.iter().find(|(_, kinds)| **kinds == all) {
            return Err(Error::ProtocolOrder(format!(
                "{party} received parameters of every component"
            )));
        }
    }
    Ok(())
}
