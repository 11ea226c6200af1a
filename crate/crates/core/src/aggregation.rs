//! Round-end aggregation of parameter deltas with dual-server routing.
//!
//! Each party reports `theta_end - theta_start` for the round. The averaged
//! delta is added back onto the round-start parameters, which equals
//! averaging the end-of-round parameters since every client starts from the
//! same values. Client-side components (VQA, APN and the baseline's head and
//! tail) go to the auxiliary server; NHA, LTA and the baseline's middle go to
//! the main server.

use crate::components::ComponentKind;
use crate::error::{Error, Result};
use crate::numerics::ParamSet;
use crate::protocol::{Party, ProtocolMessage, Transport};

/// One party's parameter change over a round.
///
/// `delta` is the rounded difference `end - start` and `residual` the
/// rounding error of that subtraction, so `start + delta + residual` equals
/// `end` exactly. Carrying the residual keeps single-client and
/// identical-client aggregation bit-exact; without it, the last-bit errors
/// of `start + (end - start)` get amplified by ReLU and max-pool switches
/// over later steps.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaRecord {
    pub component: ComponentKind,
    pub client: usize,
    pub round: usize,
    pub delta: ParamSet,
    pub residual: ParamSet,
}

/// Error-free sum: `s + e == a + b` exactly.
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let e = (a - (s - bb)) + (b - bb);
    (s, e)
}

/// Applies `f` elementwise to matching entries of `a` and `b`, returning
/// both outputs with `a`'s layout and flags.
fn zip_pairs(
    a: &ParamSet,
    b: &ParamSet,
    f: impl Fn(f64, f64) -> (f64, f64),
) -> Result<(ParamSet, ParamSet)> {
    if !a.same_layout(b) {
        return Err(Error::Aggregation(
            "parameter sets differ in names or shapes".into(),
        ));
    }
    let mut hi = a.clone();
    let mut lo = a.clone();
    lo.zero_grad();
    hi.zero_grad();
    let rows = hi.iter_mut().zip(lo.iter_mut()).zip(b.iter());
    for (((_, h), (_, l)), (_, q)) in rows {
        for ((x, y), &bq) in h
            .value
            .as_mut_slice()
            .iter_mut()
            .zip(l.value.as_mut_slice())
            .zip(q.value.as_slice())
        {
            (*x, *y) = f(*x, bq);
        }
    }
    Ok((hi, lo))
}

impl DeltaRecord {
    /// A record with no rounding residual.
    pub fn new(component: ComponentKind, client: usize, round: usize, delta: ParamSet) -> Self {
        let mut residual = delta.clone();
        residual.scale_values(0.0);
        Self {
            component,
            client,
            round,
            delta,
            residual,
        }
    }

    /// The record for `end - start`.
    pub fn between(
        component: ComponentKind,
        client: usize,
        round: usize,
        start: &ParamSet,
        end: &ParamSet,
    ) -> Result<Self> {
        let (delta, residual) = zip_pairs(end, start, |e, s| two_sum(e, -s))?;
        Ok(Self {
            component,
            client,
            round,
            delta,
            residual,
        })
    }

    pub fn sender(&self) -> Party {
        if self.component.is_client_side() {
            Party::Client(self.client)
        } else {
            Party::MainWorker(self.client)
        }
    }

    pub fn destination(&self) -> Party {
        if self.component.is_client_side() {
            Party::AuxServer
        } else {
            Party::MainServer
        }
    }
}

/// Mean of a round's deltas, held as a rounded value plus residual.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragedDelta {
    pub mean: ParamSet,
    pub residual: ParamSet,
}

/// Elementwise mean of one delta per client `0..k`. Records are summed in
/// client order whatever order they arrive in, in double-f64 precision.
pub fn aggregate_deltas(records: &[DeltaRecord], k: usize) -> Result<AveragedDelta> {
    let first = records
        .first()
        .ok_or_else(|| Error::Aggregation("no delta records".into()))?;
    if records.len() != k {
        return Err(Error::Aggregation(format!(
            "expected {k} records for {}, got {}",
            first.component.name(),
            records.len()
        )));
    }
    let mut by_client: Vec<Option<&DeltaRecord>> = vec![None; k];
    for r in records {
        if r.component != first.component || r.round != first.round {
            return Err(Error::Aggregation(format!(
                "mixed records: {} round {} with {} round {}",
                first.component.name(),
                first.round,
                r.component.name(),
                r.round
            )));
        }
        if !r.delta.same_layout(&first.delta) || !r.residual.same_layout(&first.delta) {
            return Err(Error::Aggregation(format!(
                "client {} sent a {} delta of a different shape",
                r.client,
                r.component.name()
            )));
        }
        let slot = by_client
            .get_mut(r.client)
            .ok_or_else(|| Error::Aggregation(format!("client {} outside 0..{k}", r.client)))?;
        if slot.replace(r).is_some() {
            return Err(Error::Aggregation(format!(
                "duplicate record from client {}",
                r.client
            )));
        }
    }
    let mut hi = first.delta.clone();
    hi.zero_grad();
    hi.scale_values(0.0);
    let mut lo = hi.clone();
    for (client, r) in by_client.iter().enumerate() {
        let r =
            r.ok_or_else(|| Error::Aggregation(format!("missing record from client {client}")))?;
        let entries = hi
            .iter_mut()
            .zip(lo.iter_mut())
            .zip(r.delta.iter().zip(r.residual.iter()));
        for (((_, h), (_, l)), ((_, d), (_, e))) in entries {
            let cells = h
                .value
                .as_mut_slice()
                .iter_mut()
                .zip(l.value.as_mut_slice());
            for ((sh, sl), (&dh, &dl)) in
                cells.zip(d.value.as_slice().iter().zip(e.value.as_slice()))
            {
                let (s, err) = two_sum(*sh, dh);
                (*sh, *sl) = two_sum(s, *sl + dl + err);
            }
        }
    }
    let kf = k as f64;
    let (mean, residual) = zip_pairs(&hi, &lo, |h, l| {
        let q = h / kf;
        let rem = (-q).mul_add(kf, h);
        two_sum(q, (rem + l) / kf)
    })?;
    Ok(AveragedDelta { mean, residual })
}

/// `base + delta`, keeping `base`'s trainable flags.
pub fn apply_aggregate(base: &ParamSet, delta: &AveragedDelta) -> Result<ParamSet> {
    let (with_mean, carry) = zip_pairs(base, &delta.mean, two_sum)?;
    let (fix, _) = zip_pairs(&carry, &delta.residual, |c, r| (c + r, 0.0))?;
    let (out, _) = zip_pairs(&with_mean, &fix, |a, b| (a + b, 0.0))?;
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Routed {
    pub to_aux: Vec<DeltaRecord>,
    pub to_main: Vec<DeltaRecord>,
}

/// Partitions records by destination and sends each as a `DeltaUp`.
pub fn route_deltas(records: Vec<DeltaRecord>, transport: &mut Transport) -> Result<Routed> {
    let mut routed = Routed::default();
    for r in records {
        let (sender, receiver, round) = (r.sender(), r.destination(), r.round);
        let envelope = transport.send(sender, receiver, round, ProtocolMessage::DeltaUp(r))?;
        let ProtocolMessage::DeltaUp(r) = envelope.message else {
            unreachable!("sent a DeltaUp")
        };
        match receiver {
            Party::AuxServer => routed.to_aux.push(r),
            _ => routed.to_main.push(r),
        }
    }
    Ok(routed)
}

/// Collects records for one component until every client has reported.
#[derive(Debug, Clone)]
pub struct Aggregator {
    component: ComponentKind,
    k: usize,
    buffer: Vec<DeltaRecord>,
}

impl Aggregator {
    pub fn new(component: ComponentKind, k: usize) -> Self {
        Self {
            component,
            k,
            buffer: Vec::with_capacity(k),
        }
    }

    pub fn submit(&mut self, record: DeltaRecord) -> Result<()> {
        if record.component != self.component {
            return Err(Error::Aggregation(format!(
                "{} aggregator got a {} record",
                self.component.name(),
                record.component.name()
            )));
        }
        self.buffer.push(record);
        Ok(())
    }

    pub fn is_ready(&self) -> bool {
        self.buffer.len() == self.k
    }

    /// Averages and applies to `base`, emptying the buffer.
    pub fn finish(&mut self, base: &ParamSet) -> Result<ParamSet> {
        if !self.is_ready() {
            return Err(Error::Aggregation(format!(
                "{}: {} of {} clients reported",
                self.component.name(),
                self.buffer.len(),
                self.k
            )));
        }
        let mean = aggregate_deltas(&self.buffer, self.k)?;
        self.buffer.clear();
        apply_aggregate(base, &mean)
    }
}
