//! Single-process trainers with no protocol in the way. With one client and
//! one local epoch the protocol sessions must reproduce them exactly.

use crate::components::Component;
use crate::data::{epoch_batches, Batch, Task, Triplet};
use crate::error::Result;
use crate::losses::{info_nce, softmax_nll};
use crate::numerics::{Adam, LrSchedule, Mode};

use super::{SlModel, TrainSpec, UniconModel};

/// Trains all four UniCon components directly on the whole dataset.
#[derive(Debug, Clone)]
pub struct CentralizedUnicon {
    pub model: UniconModel,
    opts: [Adam; 4],
    spec: TrainSpec,
    schedule: LrSchedule,
    steps: u64,
    data: Vec<Triplet>,
    rounds: usize,
}

impl CentralizedUnicon {
    pub fn new(model: UniconModel, data: Vec<Triplet>, spec: TrainSpec) -> Result<Self> {
        spec.validate()?;
        let opts = [
            Adam::new(model.vqa.params(), spec.adam),
            Adam::new(model.apn.params(), spec.adam),
            Adam::new(model.nha.params(), spec.adam),
            Adam::new(model.lta.params(), spec.adam),
        ];
        Ok(Self {
            schedule: spec.schedule_for(data.len()),
            model,
            opts,
            spec,
            steps: 0,
            data,
            rounds: 0,
        })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One optimisation step on `batch`; returns its loss.
    pub fn step(&mut self, batch: &Batch) -> Result<f64> {
        let lr = self.schedule.lr_at(self.steps);
        let m = &mut self.model;
        let (v_vqa, vqa_cache) = m.vqa.forward(&batch.images, &batch.questions)?;
        let (v_apn, apn_cache) = m.apn.forward(&batch.answers)?;
        let (v_nha, nha_cache) = m.nha.forward(&v_vqa, Mode::Train)?;
        let (v_lta, lta_cache) = m.lta.forward(&v_apn)?;
        let out = info_nce(&v_nha, &v_lta, &self.spec.infonce)?;
        let d_vqa = m.nha.backward(&nha_cache, &out.d_nha)?;
        let d_apn = m.lta.backward(&lta_cache, &out.d_lta)?;
        m.vqa.backward(&vqa_cache, &d_vqa)?;
        m.apn.backward(&apn_cache, &d_apn)?;
        let [o_vqa, o_apn, o_nha, o_lta] = &mut self.opts;
        o_nha.step(m.nha.params_mut(), lr)?;
        o_lta.step(m.lta.params_mut(), lr)?;
        o_vqa.step(m.vqa.params_mut(), lr)?;
        o_apn.step(m.apn.params_mut(), lr)?;
        self.steps += 1;
        Ok(out.loss)
    }

    /// `local_epochs` passes over the data, shuffled exactly as a single
    /// protocol client would be. Returns the mean batch loss.
    pub fn run_round(&mut self, task: &Task) -> Result<f64> {
        self.rounds += 1;
        let round = self.rounds;
        let (mut sum, mut n) = (0.0, 0usize);
        for e in 0..self.spec.local_epochs {
            let epoch = self.spec.global_epoch(round, e);
            for idx in epoch_batches(
                self.data.len(),
                self.spec.batch_size,
                self.spec.seed,
                0,
                epoch,
            ) {
                let refs: Vec<&Triplet> = idx.iter().map(|&i| &self.data[i]).collect();
                let batch = task.batch(&refs)?;
                sum += self.step(&batch)?;
                n += 1;
            }
        }
        Ok(if n > 0 { sum / n as f64 } else { 0.0 })
    }
}

/// Trains head, middle and classifier tail directly with softmax NLL.
#[derive(Debug, Clone)]
pub struct CentralizedSupervised {
    pub model: SlModel,
    opts: [Adam; 3],
    spec: TrainSpec,
    schedule: LrSchedule,
    steps: u64,
    data: Vec<Triplet>,
    rounds: usize,
}

impl CentralizedSupervised {
    pub fn new(model: SlModel, data: Vec<Triplet>, spec: TrainSpec) -> Result<Self> {
        spec.validate()?;
        let opts = [
            Adam::new(model.head.params(), spec.adam),
            Adam::new(model.global.params(), spec.adam),
            Adam::new(model.tail.params(), spec.adam),
        ];
        Ok(Self {
            schedule: spec.schedule_for(data.len()),
            model,
            opts,
            spec,
            steps: 0,
            data,
            rounds: 0,
        })
    }

    pub fn step(&mut self, batch: &Batch) -> Result<f64> {
        let lr = self.schedule.lr_at(self.steps);
        let m = &mut self.model;
        let (h, head_cache) = m.head.forward(&batch.images, &batch.questions)?;
        let (g, global_cache) = m.global.forward(&h)?;
        let (logits, tail_cache) = m.tail.forward(&g)?;
        let nll = softmax_nll(&logits, &batch.targets)?;
        let d_g = m.tail.backward(&tail_cache, &nll.d_logits)?;
        let d_h = m.global.backward(&global_cache, &d_g)?;
        m.head.backward(&head_cache, &d_h)?;
        let [o_head, o_global, o_tail] = &mut self.opts;
        o_tail.step(m.tail.params_mut(), lr)?;
        o_global.step(m.global.params_mut(), lr)?;
        o_head.step(m.head.params_mut(), lr)?;
        self.steps += 1;
        Ok(nll.loss)
    }

    pub fn run_round(&mut self, task: &Task) -> Result<f64> {
        self.rounds += 1;
        let round = self.rounds;
        let (mut sum, mut n) = (0.0, 0usize);
        for e in 0..self.spec.local_epochs {
            let epoch = self.spec.global_epoch(round, e);
            for idx in epoch_batches(
                self.data.len(),
                self.spec.batch_size,
                self.spec.seed,
                0,
                epoch,
            ) {
                let refs: Vec<&Triplet> = idx.iter().map(|&i| &self.data[i]).collect();
                let batch = task.batch(&refs)?;
                sum += self.step(&batch)?;
                n += 1;
            }
        }
        Ok(if n > 0 { sum / n as f64 } else { 0.0 })
    }
}
