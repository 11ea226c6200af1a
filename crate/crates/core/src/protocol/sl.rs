//! Split learning without label sharing: the client runs the head and the
//! classifier tail, the server runs the middle. Each batch needs two round
//! trips.

use std::sync::Arc;

use crate::aggregation::{aggregate_deltas, apply_aggregate, DeltaRecord};
use crate::components::{
    Component, ComponentKind, DimConfig, SlClassifier, SlClassifierCache, SlGlobal, SlGlobalCache,
    ToyVqa, ToyVqaCache,
};
use crate::data::{epoch_batches, Batch, Task, Triplet};
use crate::error::{Error, Result};
use crate::losses::softmax_nll;
use crate::numerics::{Adam, AdamHyper, LrSchedule, Matrix, ParamSet};
use crate::seed::{rng_for, Stream};

use super::{
    check_order, merge_outcomes, run_parallel, thread_budget, AuxServer, ClientRoundOutcome,
    ParamDown, Party, ProtocolMessage, RoundStats, SlGradDown, SlGradUp, SlRepDown, SlRepUp,
    TrainSpec, Transport, TransportLog,
};

/// Head, server-side middle and classifier tail of the baseline.
#[derive(Debug, Clone)]
pub struct SlModel {
    pub head: ToyVqa,
    pub global: SlGlobal,
    pub tail: SlClassifier,
}

impl SlModel {
    /// Initialises all three components from the `Init` stream of `seed`.
    pub fn init(dims: &DimConfig, classes: usize, seed: u64) -> Self {
        let mut rng = rng_for(seed, Stream::Init);
        let head = ToyVqa::new(dims, &mut rng);
        let global = SlGlobal::new(dims, &mut rng);
        let tail = SlClassifier::new(dims, classes, &mut rng);
        Self { head, global, tail }
    }

    pub fn params(&self, kind: ComponentKind) -> Option<&ParamSet> {
        match kind {
            ComponentKind::SlHead => Some(self.head.params()),
            ComponentKind::SlGlobal => Some(self.global.params()),
            ComponentKind::SlTail => Some(self.tail.params()),
            _ => None,
        }
    }

    pub fn max_abs_diff(&self, other: &SlModel) -> Result<f64> {
        let mut worst = 0.0f64;
        for kind in [
            ComponentKind::SlHead,
            ComponentKind::SlGlobal,
            ComponentKind::SlTail,
        ] {
            worst = worst.max(
                self.params(kind)
                    .unwrap()
                    .max_abs_diff(other.params(kind).unwrap())?,
            );
        }
        Ok(worst)
    }

    /// Classifier accuracy on `triplets`.
    pub fn accuracy(&self, task: &Task, triplets: &[Triplet]) -> Result<f64> {
        if triplets.is_empty() {
            return Err(Error::Data("no examples to score".into()));
        }
        let mut correct = 0;
        for chunk in triplets.chunks(256) {
            let refs: Vec<&Triplet> = chunk.iter().collect();
            let batch = task.batch(&refs)?;
            let (h, _) = self.head.forward(&batch.images, &batch.questions)?;
            let (g, _) = self.global.forward(&h)?;
            let (logits, _) = self.tail.forward(&g)?;
            for (r, &target) in batch.targets.iter().enumerate() {
                let row = logits.row(r);
                let best = (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
                correct += usize::from(best == target);
            }
        }
        Ok(correct as f64 / triplets.len() as f64)
    }
}

#[derive(Debug, Clone)]
enum Stage {
    Idle,
    /// Head output uploaded, waiting for the server's forward result.
    AwaitRep {
        batch_id: u64,
        head: ToyVqaCache,
        targets: Vec<usize>,
    },
    /// Tail updated and gradient uploaded, waiting for the head gradient.
    AwaitGrad {
        batch_id: u64,
        head: ToyVqaCache,
    },
}

/// Client state: head, tail, their optimisers, and the batch in flight.
#[derive(Debug, Clone)]
pub struct SlClient {
    id: usize,
    shuffle_key: usize,
    shard: Vec<Triplet>,
    head: ToyVqa,
    tail: SlClassifier,
    head_opt: Adam,
    tail_opt: Adam,
    schedule: LrSchedule,
    steps: u64,
    stage: Stage,
    round_start: Option<(ParamSet, ParamSet)>,
}

impl SlClient {
    pub fn new(
        id: usize,
        shard: Vec<Triplet>,
        head: ToyVqa,
        tail: SlClassifier,
        spec: &TrainSpec,
    ) -> Self {
        let head_opt = Adam::new(head.params(), spec.adam);
        let tail_opt = Adam::new(tail.params(), spec.adam);
        Self {
            id,
            shuffle_key: id,
            schedule: spec.schedule_for(shard.len()),
            shard,
            head,
            tail,
            head_opt,
            tail_opt,
            steps: 0,
            stage: Stage::Idle,
            round_start: None,
        }
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn set_shuffle_key(&mut self, key: usize) {
        self.shuffle_key = key;
    }

    pub fn head(&self) -> &ToyVqa {
        &self.head
    }

    pub fn tail(&self) -> &SlClassifier {
        &self.tail
    }

    pub fn current_lr(&self) -> f64 {
        self.schedule.lr_at(self.steps)
    }

    pub fn receive(&mut self, params: &[ParamDown]) -> Result<()> {
        for p in params {
            if p.client != self.id {
                return Err(Error::ProtocolOrder(format!(
                    "client {} got parameters addressed to client {}",
                    self.id, p.client
                )));
            }
            match p.component {
                ComponentKind::SlHead => self.head.params_mut().copy_values_from(&p.params)?,
                ComponentKind::SlTail => self.tail.params_mut().copy_values_from(&p.params)?,
                other => {
                    return Err(Error::ProtocolOrder(format!(
                        "client {} cannot hold {} parameters",
                        self.id,
                        other.name()
                    )))
                }
            }
        }
        self.round_start = Some((self.head.params().clone(), self.tail.params().clone()));
        Ok(())
    }

    /// Head forward; the first upload of a batch.
    pub fn sl_client_forward(
        &mut self,
        batch: &Batch,
        round: usize,
        epoch: usize,
    ) -> Result<Option<SlRepUp>> {
        if batch.len() < 2 {
            log::warn!(
                "client {}: skipping batch of {} example(s)",
                self.id,
                batch.len()
            );
            return Ok(None);
        }
        if !matches!(self.stage, Stage::Idle) {
            return Err(Error::ProtocolOrder(format!(
                "client {} started a batch with another in flight",
                self.id
            )));
        }
        let (v_c1, head) = self.head.forward(&batch.images, &batch.questions)?;
        let batch_id = self.steps;
        self.stage = Stage::AwaitRep {
            batch_id,
            head,
            targets: batch.targets.clone(),
        };
        Ok(Some(SlRepUp {
            client: self.id,
            round,
            epoch,
            batch_id,
            v_c1,
        }))
    }

    /// Tail forward, loss, tail backward and tail update. Returns the loss
    /// and the gradient upload for the server output.
    pub fn sl_client_loss_backward(&mut self, rep: &SlRepDown, lr: f64) -> Result<(f64, SlGradUp)> {
        let Stage::AwaitRep {
            batch_id,
            head,
            targets,
        } = std::mem::replace(&mut self.stage, Stage::Idle)
        else {
            return Err(Error::ProtocolOrder(format!(
                "client {} got a server representation it did not ask for",
                self.id
            )));
        };
        if rep.batch_id != batch_id || rep.client != self.id {
            self.stage = Stage::AwaitRep {
                batch_id,
                head,
                targets,
            };
            return Err(Error::ProtocolOrder(format!(
                "client {} expected batch {batch_id}, got client {} batch {}",
                self.id, rep.client, rep.batch_id
            )));
        }
        let (logits, tail_cache): (Matrix, SlClassifierCache) = self.tail.forward(&rep.v_g)?;
        let nll = softmax_nll(&logits, &targets)?;
        let d_v_g = self.tail.backward(&tail_cache, &nll.d_logits)?;
        self.tail_opt.step(self.tail.params_mut(), lr)?;
        self.stage = Stage::AwaitGrad { batch_id, head };
        Ok((
            nll.loss,
            SlGradUp {
                client: self.id,
                batch_id,
                d_v_g,
            },
        ))
    }

    /// Head backward and update from the server's gradient.
    pub fn apply_head_grad(&mut self, grad: &SlGradDown, lr: f64) -> Result<()> {
        let Stage::AwaitGrad { batch_id, head } = std::mem::replace(&mut self.stage, Stage::Idle)
        else {
            return Err(Error::ProtocolOrder(format!(
                "client {} got a head gradient it did not ask for",
                self.id
            )));
        };
        if grad.batch_id != batch_id || grad.client != self.id {
            self.stage = Stage::AwaitGrad { batch_id, head };
            return Err(Error::ProtocolOrder(format!(
                "client {} expected batch {batch_id}, got client {} batch {}",
                self.id, grad.client, grad.batch_id
            )));
        }
        self.head.backward(&head, &grad.d_v_c1)?;
        self.head_opt.step(self.head.params_mut(), lr)?;
        self.steps += 1;
        Ok(())
    }

    pub fn round_deltas(&self, round: usize) -> Result<Vec<DeltaRecord>> {
        let (head0, tail0) = self.round_start.as_ref().ok_or_else(|| {
            Error::ProtocolOrder(format!("client {} has no round-start parameters", self.id))
        })?;
        Ok(vec![
            DeltaRecord::between(
                ComponentKind::SlHead,
                self.id,
                round,
                head0,
                self.head.params(),
            )?,
            DeltaRecord::between(
                ComponentKind::SlTail,
                self.id,
                round,
                tail0,
                self.tail.params(),
            )?,
        ])
    }
}

/// Per-client working copy of the server middle.
#[derive(Debug, Clone)]
pub struct SlSlot {
    client: usize,
    global: SlGlobal,
    opt: Adam,
    pending: Option<(u64, SlGlobalCache)>,
}

impl SlSlot {
    pub fn new(client: usize, global: SlGlobal, adam: AdamHyper) -> Self {
        let opt = Adam::new(global.params(), adam);
        Self {
            client,
            global,
            opt,
            pending: None,
        }
    }

    pub fn global(&self) -> &SlGlobal {
        &self.global
    }

    pub fn sl_server_forward(&mut self, msg: &SlRepUp) -> Result<SlRepDown> {
        if msg.client != self.client {
            return Err(Error::ProtocolOrder(format!(
                "slot for client {} got an upload from client {}",
                self.client, msg.client
            )));
        }
        let (v_g, cache) = self.global.forward(&msg.v_c1)?;
        self.pending = Some((msg.batch_id, cache));
        Ok(SlRepDown {
            client: msg.client,
            batch_id: msg.batch_id,
            v_g,
        })
    }

    pub fn sl_server_backprop(&mut self, msg: &SlGradUp, lr: f64) -> Result<SlGradDown> {
        let (batch_id, cache) = self.pending.take().ok_or_else(|| {
            Error::ProtocolOrder(format!(
                "server got a gradient for client {} with no forward",
                self.client
            ))
        })?;
        if batch_id != msg.batch_id || msg.client != self.client {
            self.pending = Some((batch_id, cache));
            return Err(Error::ProtocolOrder(format!(
                "server expected client {} batch {batch_id}, got client {} batch {}",
                self.client, msg.client, msg.batch_id
            )));
        }
        let d_v_c1 = self.global.backward(&cache, &msg.d_v_g)?;
        self.opt.step(self.global.params_mut(), lr)?;
        Ok(SlGradDown {
            client: msg.client,
            batch_id,
            d_v_c1,
        })
    }
}

/// Global middle component plus one slot per client.
#[derive(Debug, Clone)]
pub struct SlMainServer {
    global: SlGlobal,
    slots: Vec<SlSlot>,
}

impl SlMainServer {
    pub fn new(global: SlGlobal, clients: usize, adam: AdamHyper) -> Self {
        let slots = (0..clients)
            .map(|k| SlSlot::new(k, global.clone(), adam))
            .collect();
        Self { global, slots }
    }

    pub fn global(&self) -> &SlGlobal {
        &self.global
    }

    fn begin_round(&mut self) -> Result<()> {
        for slot in &mut self.slots {
            slot.global
                .params_mut()
                .copy_values_from(self.global.params())?;
        }
        Ok(())
    }

    pub fn aggregate(&mut self, records: &[DeltaRecord]) -> Result<()> {
        let avg = aggregate_deltas(records, self.slots.len())?;
        let next = apply_aggregate(self.global.params(), &avg)?;
        self.global.params_mut().copy_values_from(&next)
    }
}

fn client_round(
    client: &mut SlClient,
    slot: &mut SlSlot,
    task: &Task,
    spec: &TrainSpec,
    round: usize,
) -> Result<ClientRoundOutcome> {
    let k = client.id;
    let mut out = ClientRoundOutcome::default();
    let (me, server) = (Party::Client(k), Party::MainServer);
    for e in 0..spec.local_epochs {
        let epoch = spec.global_epoch(round, e);
        let wrap = |err: Error| err.in_party(round, e + 1, k);
        for idx in epoch_batches(
            client.shard.len(),
            spec.batch_size,
            spec.seed,
            client.shuffle_key,
            epoch,
        ) {
            let refs: Vec<&Triplet> = idx.iter().map(|&i| &client.shard[i]).collect();
            let batch = task.batch(&refs).map_err(wrap)?;
            let Some(up) = client
                .sl_client_forward(&batch, round, e + 1)
                .map_err(wrap)?
            else {
                continue;
            };
            let lr = client.current_lr();
            let t = &mut out.transport;
            let ProtocolMessage::SlRepUp(up) = t
                .send(me, server, round, ProtocolMessage::SlRepUp(up))
                .map_err(wrap)?
                .message
            else {
                unreachable!()
            };
            let down = slot.sl_server_forward(&up).map_err(wrap)?;
            let ProtocolMessage::SlRepDown(down) = t
                .send(server, me, round, ProtocolMessage::SlRepDown(down))
                .map_err(wrap)?
                .message
            else {
                unreachable!()
            };
            let (loss, grad_up) = client.sl_client_loss_backward(&down, lr).map_err(wrap)?;
            let ProtocolMessage::SlGradUp(grad_up) = t
                .send(me, server, round, ProtocolMessage::SlGradUp(grad_up))
                .map_err(wrap)?
                .message
            else {
                unreachable!()
            };
            let grad_down = slot.sl_server_backprop(&grad_up, lr).map_err(wrap)?;
            let ProtocolMessage::SlGradDown(grad_down) = t
                .send(server, me, round, ProtocolMessage::SlGradDown(grad_down))
                .map_err(wrap)?
                .message
            else {
                unreachable!()
            };
            client.apply_head_grad(&grad_down, lr).map_err(wrap)?;
            out.loss_sum += loss;
            out.batches += 1;
        }
    }
    out.deltas = client.round_deltas(round)?;
    Ok(out)
}

/// A full split-learning deployment with K clients.
#[derive(Debug)]
pub struct SlSession {
    task: Arc<Task>,
    spec: TrainSpec,
    clients: Vec<SlClient>,
    main: SlMainServer,
    aux: AuxServer,
    log: TransportLog,
    round: usize,
    threads: usize,
    order: Vec<usize>,
}

impl SlSession {
    pub fn new(
        task: Arc<Task>,
        shards: Vec<Vec<Triplet>>,
        model: SlModel,
        spec: TrainSpec,
    ) -> Result<Self> {
        spec.validate()?;
        if shards.is_empty() {
            return Err(Error::Config("at least one client is required".into()));
        }
        let k = shards.len();
        let clients = shards
            .into_iter()
            .enumerate()
            .map(|(i, s)| SlClient::new(i, s, model.head.clone(), model.tail.clone(), &spec))
            .collect();
        let aux = AuxServer::new([
            (ComponentKind::SlHead, model.head.params().clone()),
            (ComponentKind::SlTail, model.tail.params().clone()),
        ])?;
        Ok(Self {
            task,
            main: SlMainServer::new(model.global, k, spec.adam),
            spec,
            clients,
            aux,
            log: TransportLog::new(),
            round: 0,
            threads: thread_budget(k),
            order: (0..k).collect(),
        })
    }

    pub fn clients(&self) -> &[SlClient] {
        &self.clients
    }

    pub fn clients_mut(&mut self) -> &mut [SlClient] {
        &mut self.clients
    }

    pub fn log(&self) -> &TransportLog {
        &self.log
    }

    pub fn rounds_completed(&self) -> usize {
        self.round
    }

    pub fn set_threads(&mut self, threads: usize) {
        self.threads = threads.max(1);
    }

    pub fn set_client_order(&mut self, order: Vec<usize>) -> Result<()> {
        check_order(&order, self.clients.len())?;
        self.order = order;
        Ok(())
    }

    pub fn global_model(&self) -> Result<SlModel> {
        let mut head = self.clients[0].head.clone();
        let mut tail = self.clients[0].tail.clone();
        head.params_mut().copy_values_from(
            self.aux
                .global(ComponentKind::SlHead)
                .expect("aux holds head"),
        )?;
        tail.params_mut().copy_values_from(
            self.aux
                .global(ComponentKind::SlTail)
                .expect("aux holds tail"),
        )?;
        Ok(SlModel {
            head,
            global: self.main.global.clone(),
            tail,
        })
    }

    pub fn run_round(&mut self) -> Result<RoundStats> {
        let round = self.round + 1;
        let k = self.clients.len();
        let before = self.log.len();

        let mut t = Transport::new();
        for &i in &self.order {
            let params = self.aux.distribute(i, round, &mut t)?;
            self.clients[i].receive(&params)?;
        }
        t.flush_into(&mut self.log);
        self.main.begin_round()?;

        let mut pairs: Vec<Option<(&mut SlClient, &mut SlSlot)>> = self
            .clients
            .iter_mut()
            .zip(self.main.slots.iter_mut())
            .map(Some)
            .collect();
        let ordered: Vec<_> = self
            .order
            .iter()
            .map(|&i| pairs[i].take().expect("permutation"))
            .collect();
        let (task, spec) = (&*self.task, &self.spec);
        let results = run_parallel(ordered, self.threads, |c, s| {
            client_round(c, s, task, spec, round)
        });
        let mut outcomes = Vec::with_capacity(k);
        for (pos, r) in results.into_iter().enumerate() {
            let mut o = r?;
            let i = self.order[pos];
            o.deltas.push(DeltaRecord::between(
                ComponentKind::SlGlobal,
                i,
                round,
                self.main.global.params(),
                self.main.slots[i].global.params(),
            )?);
            outcomes.push(o);
        }
        let (routed, loss_sum, batches) = merge_outcomes(outcomes, &mut self.log, round)?;
        self.aux.aggregate(&routed.to_aux, k)?;
        self.main.aggregate(&routed.to_main)?;
        self.round = round;

        let new = &self.log.records()[before..];
        let up = new.iter().filter(|r| r.receiver.is_server()).count();
        Ok(RoundStats {
            round,
            mean_loss: if batches > 0 {
                loss_sum / batches as f64
            } else {
                0.0
            },
            batches,
            messages_up: up,
            messages_down: new.len() - up,
        })
    }
}
