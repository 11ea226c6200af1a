//! UniCon: each client uploads both of its representations in one message
//! and gets both representation gradients back in one reply.

use std::sync::Arc;

use crate::aggregation::{aggregate_deltas, apply_aggregate, DeltaRecord};
use crate::components::{
    Apn, ApnCache, Component, ComponentKind, DimConfig, Lta, Nha, ToyVqa, ToyVqaCache,
};
use crate::data::{epoch_batches, Batch, Task, Triplet};
use crate::error::{Error, Result};
use crate::losses::{info_nce, InfoNceConfig};
use crate::numerics::{Adam, AdamHyper, LrSchedule, Mode, ParamSet};
use crate::seed::{rng_for, Stream};

use super::{
    check_order, merge_outcomes, run_parallel, thread_budget, AuxServer, ClientRoundOutcome,
    ParamDown, Party, ProtocolMessage, RoundStats, TrainSpec, Transport, TransportLog,
    UniconGradDown, UniconRepUp,
};

/// The four UniCon components.
#[derive(Debug, Clone)]
pub struct UniconModel {
    pub vqa: ToyVqa,
    pub apn: Apn,
    pub nha: Nha,
    pub lta: Lta,
}

impl UniconModel {
    /// Initialises all four components from the `Init` stream of `seed`.
    pub fn init(dims: &DimConfig, mask_pad_in_pool: bool, seed: u64) -> Self {
        let mut rng = rng_for(seed, Stream::Init);
        let vqa = ToyVqa::new(dims, &mut rng);
        let apn = Apn::new(dims, mask_pad_in_pool, &mut rng);
        let nha = Nha::new(dims, &mut rng);
        let lta = Lta::new(dims, &mut rng);
        Self { vqa, apn, nha, lta }
    }

    pub fn params(&self, kind: ComponentKind) -> Option<&ParamSet> {
        match kind {
            ComponentKind::Vqa => Some(self.vqa.params()),
            ComponentKind::Apn => Some(self.apn.params()),
            ComponentKind::Nha => Some(self.nha.params()),
            ComponentKind::Lta => Some(self.lta.params()),
            _ => None,
        }
    }

    /// Largest parameter difference across all four components.
    pub fn max_abs_diff(&self, other: &UniconModel) -> Result<f64> {
        let mut worst = 0.0f64;
        for kind in ComponentKind::UNICON {
            let (a, b) = (self.params(kind).unwrap(), other.params(kind).unwrap());
            worst = worst.max(a.max_abs_diff(b)?);
        }
        Ok(worst)
    }
}

#[derive(Debug, Clone)]
struct PendingBatch {
    batch_id: u64,
    vqa: ToyVqaCache,
    apn: ApnCache,
}

/// Client state: local VQA and APN, their optimisers, and the activations
/// of the batch awaiting its server reply.
#[derive(Debug, Clone)]
pub struct UniconClient {
    id: usize,
    shuffle_key: usize,
    shard: Vec<Triplet>,
    vqa: ToyVqa,
    apn: Apn,
    vqa_opt: Adam,
    apn_opt: Adam,
    schedule: LrSchedule,
    steps: u64,
    pending: Option<PendingBatch>,
    round_start: Option<(ParamSet, ParamSet)>,
}

impl UniconClient {
    pub fn new(id: usize, shard: Vec<Triplet>, vqa: ToyVqa, apn: Apn, spec: &TrainSpec) -> Self {
        let vqa_opt = Adam::new(vqa.params(), spec.adam);
        let apn_opt = Adam::new(apn.params(), spec.adam);
        Self {
            id,
            shuffle_key: id,
            schedule: spec.schedule_for(shard.len()),
            shard,
            vqa,
            apn,
            vqa_opt,
            apn_opt,
            steps: 0,
            pending: None,
            round_start: None,
        }
    }

    pub fn id(&self) -> usize {
        self.id
    }

    /// Overrides the key that seeds this client's batch order. Two clients
    /// with the same shard and key see identical batches.
    pub fn set_shuffle_key(&mut self, key: usize) {
        self.shuffle_key = key;
    }

    pub fn shard(&self) -> &[Triplet] {
        &self.shard
    }

    pub fn vqa(&self) -> &ToyVqa {
        &self.vqa
    }

    pub fn apn(&self) -> &Apn {
        &self.apn
    }

    /// Completed local updates.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Learning rate for the next local update.
    pub fn current_lr(&self) -> f64 {
        self.schedule.lr_at(self.steps)
    }

    /// Loads round-start globals for VQA and APN.
    pub fn receive(&mut self, params: &[ParamDown]) -> Result<()> {
        for p in params {
            if p.client != self.id {
                return Err(Error::ProtocolOrder(format!(
                    "client {} got parameters addressed to client {}",
                    self.id, p.client
                )));
            }
            match p.component {
                ComponentKind::Vqa => self.vqa.params_mut().copy_values_from(&p.params)?,
                ComponentKind::Apn => self.apn.params_mut().copy_values_from(&p.params)?,
                other => {
                    return Err(Error::ProtocolOrder(format!(
                        "client {} cannot hold {} parameters",
                        self.id,
                        other.name()
                    )))
                }
            }
        }
        self.round_start = Some((self.vqa.params().clone(), self.apn.params().clone()));
        Ok(())
    }

    /// Runs both local forwards and builds the upload. Returns `None` for a
    /// batch with fewer than two examples.
    pub fn forward_batch(
        &mut self,
        batch: &Batch,
        round: usize,
        epoch: usize,
    ) -> Result<Option<UniconRepUp>> {
        if batch.len() < 2 {
            log::warn!(
                "client {}: skipping batch of {} example(s)",
                self.id,
                batch.len()
            );
            return Ok(None);
        }
        if let Some(p) = &self.pending {
            return Err(Error::ProtocolOrder(format!(
                "client {} started a batch while batch {} awaits its gradients",
                self.id, p.batch_id
            )));
        }
        let (v_vqa, vqa_cache) = self.vqa.forward(&batch.images, &batch.questions)?;
        let (v_apn, apn_cache) = self.apn.forward(&batch.answers)?;
        let batch_id = self.steps;
        self.pending = Some(PendingBatch {
            batch_id,
            vqa: vqa_cache,
            apn: apn_cache,
        });
        Ok(Some(UniconRepUp {
            client: self.id,
            round,
            epoch,
            batch_id,
            v_vqa,
            v_apn,
        }))
    }

    /// Backpropagates the returned gradients and takes one Adam step on
    /// each local component.
    pub fn apply(&mut self, grads: &UniconGradDown, lr: f64) -> Result<()> {
        let pending = self.pending.take().ok_or_else(|| {
            Error::ProtocolOrder(format!(
                "client {} got gradients for batch {} with no batch in flight",
                self.id, grads.batch_id
            ))
        })?;
        if grads.batch_id != pending.batch_id || grads.client != self.id {
            let msg = format!(
                "client {} expected gradients for batch {}, got client {} batch {}",
                self.id, pending.batch_id, grads.client, grads.batch_id
            );
            self.pending = Some(pending);
            return Err(Error::ProtocolOrder(msg));
        }
        self.vqa.backward(&pending.vqa, &grads.d_v_vqa)?;
        self.apn.backward(&pending.apn, &grads.d_v_apn)?;
        self.vqa_opt.step(self.vqa.params_mut(), lr)?;
        self.apn_opt.step(self.apn.params_mut(), lr)?;
        self.steps += 1;
        Ok(())
    }

    /// Parameter changes since [`UniconClient::receive`].
    pub fn round_deltas(&self, round: usize) -> Result<Vec<DeltaRecord>> {
        let (vqa0, apn0) = self.round_start.as_ref().ok_or_else(|| {
            Error::ProtocolOrder(format!("client {} has no round-start parameters", self.id))
        })?;
        Ok(vec![
            DeltaRecord::between(ComponentKind::Vqa, self.id, round, vqa0, self.vqa.params())?,
            DeltaRecord::between(ComponentKind::Apn, self.id, round, apn0, self.apn.params())?,
        ])
    }
}

/// The main server's working copy of NHA and LTA for one client. The
/// optimiser state persists across rounds; the parameters are reset to the
/// globals at every round start.
#[derive(Debug, Clone)]
pub struct UniconSlot {
    client: usize,
    nha: Nha,
    lta: Lta,
    nha_opt: Adam,
    lta_opt: Adam,
}

impl UniconSlot {
    pub fn new(client: usize, nha: Nha, lta: Lta, adam: AdamHyper) -> Self {
        let nha_opt = Adam::new(nha.params(), adam);
        let lta_opt = Adam::new(lta.params(), adam);
        Self {
            client,
            nha,
            lta,
            nha_opt,
            lta_opt,
        }
    }

    pub fn nha(&self) -> &Nha {
        &self.nha
    }

    pub fn lta(&self) -> &Lta {
        &self.lta
    }

    /// Adam step counts for NHA and LTA.
    pub fn adam_steps(&self) -> (u64, u64) {
        (self.nha_opt.steps(), self.lta_opt.steps())
    }

    /// Computes the contrastive loss for an upload, updates NHA and LTA and
    /// returns the gradients with respect to both uploaded representations.
    pub fn handle(
        &mut self,
        msg: &UniconRepUp,
        cfg: &InfoNceConfig,
        lr: f64,
    ) -> Result<UniconGradDown> {
        if msg.client != self.client {
            return Err(Error::ProtocolOrder(format!(
                "slot for client {} got an upload from client {}",
                self.client, msg.client
            )));
        }
        let (v_nha, nha_cache) = self.nha.forward(&msg.v_vqa, Mode::Train)?;
        let (v_lta, lta_cache) = self.lta.forward(&msg.v_apn)?;
        let out = info_nce(&v_nha, &v_lta, cfg)?;
        let d_v_vqa = self.nha.backward(&nha_cache, &out.d_nha)?;
        let d_v_apn = self.lta.backward(&lta_cache, &out.d_lta)?;
        self.nha_opt.step(self.nha.params_mut(), lr)?;
        self.lta_opt.step(self.lta.params_mut(), lr)?;
        Ok(UniconGradDown {
            client: msg.client,
            batch_id: msg.batch_id,
            loss: out.loss,
            d_v_vqa,
            d_v_apn,
        })
    }
}

/// Holds the global NHA and LTA plus one working slot per client. It never
/// sees VQA or APN parameters.
#[derive(Debug, Clone)]
pub struct UniconMainServer {
    nha: Nha,
    lta: Lta,
    slots: Vec<UniconSlot>,
}

impl UniconMainServer {
    pub fn new(nha: Nha, lta: Lta, clients: usize, spec: &TrainSpec) -> Self {
        let slots = (0..clients)
            .map(|k| UniconSlot::new(k, nha.clone(), lta.clone(), spec.adam))
            .collect();
        Self { nha, lta, slots }
    }

    pub fn nha(&self) -> &Nha {
        &self.nha
    }

    pub fn lta(&self) -> &Lta {
        &self.lta
    }

    pub fn slots(&self) -> &[UniconSlot] {
        &self.slots
    }

    fn begin_round(&mut self) -> Result<()> {
        for slot in &mut self.slots {
            slot.nha.params_mut().copy_values_from(self.nha.params())?;
            slot.lta.params_mut().copy_values_from(self.lta.params())?;
        }
        Ok(())
    }

    fn slot_deltas(&self, k: usize, round: usize) -> Result<Vec<DeltaRecord>> {
        let slot = &self.slots[k];
        Ok(vec![
            DeltaRecord::between(
                ComponentKind::Nha,
                k,
                round,
                self.nha.params(),
                slot.nha.params(),
            )?,
            DeltaRecord::between(
                ComponentKind::Lta,
                k,
                round,
                self.lta.params(),
                slot.lta.params(),
            )?,
        ])
    }

    /// Averages the round's NHA and LTA deltas into the globals.
    pub fn aggregate(&mut self, records: &[DeltaRecord]) -> Result<()> {
        let k = self.slots.len();
        for kind in [ComponentKind::Nha, ComponentKind::Lta] {
            let mine: Vec<DeltaRecord> = records
                .iter()
                .filter(|r| r.component == kind)
                .cloned()
                .collect();
            let avg = aggregate_deltas(&mine, k)?;
            let params = match kind {
                ComponentKind::Nha => self.nha.params_mut(),
                _ => self.lta.params_mut(),
            };
            let next = apply_aggregate(params, &avg)?;
            params.copy_values_from(&next)?;
        }
        Ok(())
    }
}

/// Runs every batch of one client's round against its server slot.
fn client_round(
    client: &mut UniconClient,
    slot: &mut UniconSlot,
    task: &Task,
    spec: &TrainSpec,
    round: usize,
) -> Result<ClientRoundOutcome> {
    let k = client.id;
    let mut out = ClientRoundOutcome::default();
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
            let Some(up) = client.forward_batch(&batch, round, e + 1).map_err(wrap)? else {
                continue;
            };
            let lr = client.current_lr();
            let env = out
                .transport
                .send(
                    Party::Client(k),
                    Party::MainServer,
                    round,
                    ProtocolMessage::UniconRepUp(up),
                )
                .map_err(wrap)?;
            let ProtocolMessage::UniconRepUp(up) = env.message else {
                unreachable!("sent an upload")
            };
            let down = slot.handle(&up, &spec.infonce, lr).map_err(wrap)?;
            out.loss_sum += down.loss;
            out.batches += 1;
            let env = out
                .transport
                .send(
                    Party::MainServer,
                    Party::Client(k),
                    round,
                    ProtocolMessage::UniconGradDown(down),
                )
                .map_err(wrap)?;
            let ProtocolMessage::UniconGradDown(down) = env.message else {
                unreachable!("sent a gradient reply")
            };
            client.apply(&down, lr).map_err(wrap)?;
        }
    }
    out.deltas = client.round_deltas(round)?;
    Ok(out)
}

/// A full UniCon deployment: K clients, the main server and the auxiliary
/// server, plus the message log.
#[derive(Debug)]
pub struct UniconSession {
    task: Arc<Task>,
    spec: TrainSpec,
    clients: Vec<UniconClient>,
    main: UniconMainServer,
    aux: AuxServer,
    log: TransportLog,
    round: usize,
    threads: usize,
    order: Vec<usize>,
}

impl UniconSession {
    /// Every client and server starts from `model`.
    pub fn new(
        task: Arc<Task>,
        shards: Vec<Vec<Triplet>>,
        model: UniconModel,
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
            .map(|(i, s)| UniconClient::new(i, s, model.vqa.clone(), model.apn.clone(), &spec))
            .collect();
        let main = UniconMainServer::new(model.nha, model.lta, k, &spec);
        let aux = AuxServer::new([
            (ComponentKind::Vqa, model.vqa.params().clone()),
            (ComponentKind::Apn, model.apn.params().clone()),
        ])?;
        Ok(Self {
            task,
            spec,
            clients,
            main,
            aux,
            log: TransportLog::new(),
            round: 0,
            threads: thread_budget(k),
            order: (0..k).collect(),
        })
    }

    pub fn clients(&self) -> &[UniconClient] {
        &self.clients
    }

    pub fn clients_mut(&mut self) -> &mut [UniconClient] {
        &mut self.clients
    }

    pub fn main_server(&self) -> &UniconMainServer {
        &self.main
    }

    pub fn aux_server(&self) -> &AuxServer {
        &self.aux
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

    /// Order in which clients are scheduled and their messages logged.
    pub fn set_client_order(&mut self, order: Vec<usize>) -> Result<()> {
        check_order(&order, self.clients.len())?;
        self.order = order;
        Ok(())
    }

    /// The aggregated global model.
    pub fn global_model(&self) -> Result<UniconModel> {
        let mut vqa = self.clients[0].vqa.clone();
        let mut apn = self.clients[0].apn.clone();
        vqa.params_mut()
            .copy_values_from(self.aux.global(ComponentKind::Vqa).expect("aux holds vqa"))?;
        apn.params_mut()
            .copy_values_from(self.aux.global(ComponentKind::Apn).expect("aux holds apn"))?;
        Ok(UniconModel {
            vqa,
            apn,
            nha: self.main.nha.clone(),
            lta: self.main.lta.clone(),
        })
    }

    /// Distribute, train E local epochs per client, aggregate.
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

        let mut pairs: Vec<Option<(&mut UniconClient, &mut UniconSlot)>> = self
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
            o.deltas
                .extend(self.main.slot_deltas(self.order[pos], round)?);
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthGenerator};
    use crate::losses::InfoNceConfig;
    use crate::numerics::{AdamHyper, LrSchedule, Matrix};

    fn spec() -> TrainSpec {
        TrainSpec {
            local_epochs: 1,
            batch_size: 4,
            seed: 3,
            adam: AdamHyper::default(),
            schedule: LrSchedule::constant(1e-3),
            infonce: InfoNceConfig::default(),
        }
    }

    fn setup(k: usize, n: usize) -> (Arc<Task>, Vec<Vec<Triplet>>, UniconModel) {
        let dims = DimConfig {
            vocab_size: SynthGenerator::vocab_needed(4),
            ..DimConfig::default()
        };
        let ds = synth_generate(5, n, 4, &dims, 0.3).unwrap();
        let shards = (0..k)
            .map(|c| ds.triplets.iter().skip(c).step_by(k).cloned().collect())
            .collect();
        (
            Arc::new(ds.task),
            shards,
            UniconModel::init(&dims, false, 5),
        )
    }

    fn first4(task: &Task, shard: &[Triplet]) -> Batch {
        let refs: Vec<&Triplet> = shard.iter().take(4).collect();
        task.batch(&refs).unwrap()
    }

    #[test]
    fn upload_shapes_follow_dims() {
        let (task, shards, model) = setup(1, 8);
        let mut c = UniconClient::new(0, shards[0].clone(), model.vqa, model.apn, &spec());
        let up = c
            .forward_batch(&first4(&task, &shards[0]), 1, 1)
            .unwrap()
            .unwrap();
        assert_eq!(up.v_vqa.shape(), (4, 32));
        assert_eq!(up.v_apn.shape(), (4, 32));
    }

    #[test]
    fn undersized_batch_is_skipped() {
        let (task, shards, model) = setup(1, 8);
        let mut c = UniconClient::new(0, shards[0].clone(), model.vqa, model.apn, &spec());
        let one = task.batch(&[&shards[0][0]]).unwrap();
        assert!(c.forward_batch(&one, 1, 1).unwrap().is_none());
    }

    #[test]
    fn stale_gradients_are_rejected() {
        let (task, shards, model) = setup(1, 8);
        let mut c = UniconClient::new(0, shards[0].clone(), model.vqa, model.apn, &spec());
        let up = c
            .forward_batch(&first4(&task, &shards[0]), 1, 1)
            .unwrap()
            .unwrap();
        let mut down = UniconGradDown {
            client: 0,
            batch_id: up.batch_id + 7,
            loss: 0.0,
            d_v_vqa: Matrix::zeros(4, 32),
            d_v_apn: Matrix::zeros(4, 32),
        };
        assert!(matches!(c.apply(&down, 1e-3), Err(Error::ProtocolOrder(_))));
        down.batch_id = up.batch_id;
        c.apply(&down, 1e-3).unwrap();
        assert!(matches!(c.apply(&down, 1e-3), Err(Error::ProtocolOrder(_))));
    }

    #[test]
    fn zero_gradients_leave_client_unchanged() {
        let (task, shards, model) = setup(1, 8);
        let mut c = UniconClient::new(
            0,
            shards[0].clone(),
            model.vqa.clone(),
            model.apn.clone(),
            &spec(),
        );
        let up = c
            .forward_batch(&first4(&task, &shards[0]), 1, 1)
            .unwrap()
            .unwrap();
        let down = UniconGradDown {
            client: 0,
            batch_id: up.batch_id,
            loss: 0.0,
            d_v_vqa: Matrix::zeros(4, 32),
            d_v_apn: Matrix::zeros(4, 32),
        };
        c.apply(&down, 1e-3).unwrap();
        assert_eq!(c.vqa().params().digest(), model.vqa.params().digest());
        assert_eq!(c.apn().params().digest(), model.apn.params().digest());
    }

    #[test]
    fn one_handled_message_steps_both_server_optimisers() {
        let (task, shards, model) = setup(1, 8);
        let mut c = UniconClient::new(
            0,
            shards[0].clone(),
            model.vqa.clone(),
            model.apn.clone(),
            &spec(),
        );
        let mut slot = UniconSlot::new(0, model.nha, model.lta, AdamHyper::default());
        let up = c
            .forward_batch(&first4(&task, &shards[0]), 1, 1)
            .unwrap()
            .unwrap();
        slot.handle(&up, &InfoNceConfig::default(), 1e-3).unwrap();
        assert_eq!(slot.adam_steps(), (1, 1));
    }

    #[test]
    fn zero_rounds_send_nothing() {
        let (task, shards, model) = setup(2, 16);
        let s = UniconSession::new(task, shards, model.clone(), spec()).unwrap();
        assert!(s.log().is_empty());
        assert!(s.global_model().unwrap().max_abs_diff(&model).unwrap() == 0.0);
    }

    #[test]
    fn threads_do_not_change_results() {
        let (task, shards, model) = setup(3, 30);
        let mut a =
            UniconSession::new(task.clone(), shards.clone(), model.clone(), spec()).unwrap();
        let mut b = UniconSession::new(task, shards, model, spec()).unwrap();
        a.set_threads(1);
        b.set_threads(3);
        for _ in 0..2 {
            let (ra, rb) = (a.run_round().unwrap(), b.run_round().unwrap());
            assert_eq!(ra, rb);
        }
        assert_eq!(a.log(), b.log());
        assert_eq!(
            a.global_model()
                .unwrap()
                .max_abs_diff(&b.global_model().unwrap())
                .unwrap(),
            0.0
        );
    }

    #[test]
    fn client_order_does_not_change_parameters() {
        let (task, shards, model) = setup(3, 30);
        let mut a =
            UniconSession::new(task.clone(), shards.clone(), model.clone(), spec()).unwrap();
        let mut b = UniconSession::new(task, shards, model, spec()).unwrap();
        b.set_client_order(vec![2, 0, 1]).unwrap();
        assert!(b.set_client_order(vec![0, 0, 1]).is_err());
        a.run_round().unwrap();
        b.run_round().unwrap();
        let (ga, gb) = (a.global_model().unwrap(), b.global_model().unwrap());
        for kind in ComponentKind::UNICON {
            assert_eq!(
                ga.params(kind).unwrap().digest(),
                gb.params(kind).unwrap().digest()
            );
        }
    }
}
