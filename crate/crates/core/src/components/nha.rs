use rand::Rng;

use super::{check_cols, init_linear, Component, ComponentKind, DimConfig};
use crate::error::Result;
use crate::numerics::layers::BatchNormCache;
use crate::numerics::{
    batchnorm1d, batchnorm1d_backward, matmul_bias, matmul_bias_backward, relu, relu_backward,
    Matrix, Mode, ParamSet, RunningStats,
};

const L1_W: &str = "fc1.weight";
const L1_B: &str = "fc1.bias";
const L2_W: &str = "fc2.weight";
const GAMMA: &str = "bn.gamma";
const BETA: &str = "bn.beta";
const RUN_MEAN: &str = "bn.running_mean";
const RUN_VAR: &str = "bn.running_var";

/// Nonlinear head adapter: linear, ReLU, bias-free linear, batch norm.
#[derive(Debug, Clone)]
pub struct Nha {
    params: ParamSet,
    input_dim: usize,
}

#[derive(Debug, Clone)]
pub struct NhaCache {
    input: Matrix,
    h1_pre: Matrix,
    h1: Matrix,
    bn: BatchNormCache,
}

impl Nha {
    pub fn new<R: Rng + ?Sized>(dims: &DimConfig, rng: &mut R) -> Self {
        let mut params = ParamSet::new();
        init_linear(&mut params, "fc1", dims.vqa_dim, dims.nha_hidden, rng);
        // No bias on fc2: batch norm subtracts the batch mean, so a bias
        // there would get an exactly zero gradient.
        let bound = (1.0 / dims.nha_hidden as f64).sqrt();
        params.insert(
            L2_W,
            Matrix::uniform(dims.nha_hidden, dims.shared_dim, bound, rng),
        );
        params.insert(GAMMA, Matrix::filled(1, dims.shared_dim, 1.0));
        params.insert(BETA, Matrix::zeros(1, dims.shared_dim));
        let stats = RunningStats::new(dims.shared_dim);
        params.insert_buffer(RUN_MEAN, stats.mean);
        params.insert_buffer(RUN_VAR, stats.var);
        Self {
            params,
            input_dim: dims.vqa_dim,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.params.value(GAMMA).cols()
    }

    pub fn running_stats(&self) -> RunningStats {
        RunningStats {
            mean: self.params.value(RUN_MEAN).clone(),
            var: self.params.value(RUN_VAR).clone(),
        }
    }

    pub fn set_running_stats(&mut self, stats: RunningStats) {
        *self.params.value_mut(RUN_MEAN) = stats.mean;
        *self.params.value_mut(RUN_VAR) = stats.var;
    }

    /// Train mode needs at least two rows and updates the running
    /// statistics; eval mode normalises with them.
    pub fn forward(&mut self, x: &Matrix, mode: Mode) -> Result<(Matrix, NhaCache)> {
        check_cols(x, self.input_dim, "nha_forward")?;
        let h1_pre = matmul_bias(x, self.params.value(L1_W), self.params.value(L1_B))?;
        let h1 = relu(&h1_pre);
        let h2 = h1.matmul(self.params.value(L2_W))?;
        let mut stats = self.running_stats();
        let (out, bn) = batchnorm1d(
            &h2,
            self.params.value(GAMMA),
            self.params.value(BETA),
            mode,
            &mut stats,
        )?;
        if mode == Mode::Train {
            self.set_running_stats(stats);
        }
        Ok((
            out,
            NhaCache {
                input: x.clone(),
                h1_pre,
                h1,
                bn,
            },
        ))
    }

    /// Eval-mode forward that leaves the component untouched.
    pub fn infer(&self, x: &Matrix) -> Result<Matrix> {
        self.clone().forward(x, Mode::Eval).map(|(out, _)| out)
    }

    pub fn backward(&mut self, cache: &NhaCache, d_out: &Matrix) -> Result<Matrix> {
        let gbn = batchnorm1d_backward(&cache.bn, self.params.value(GAMMA), d_out)?;
        self.params.accumulate(GAMMA, &gbn.d_gamma)?;
        self.params.accumulate(BETA, &gbn.d_beta)?;
        let g2 = matmul_bias_backward(&cache.h1, self.params.value(L2_W), &gbn.d_x)?;
        self.params.accumulate(L2_W, &g2.d_w)?;
        let d_h1_pre = relu_backward(&cache.h1_pre, &g2.d_x)?;
        let g1 = matmul_bias_backward(&cache.input, self.params.value(L1_W), &d_h1_pre)?;
        self.params.accumulate(L1_W, &g1.d_w)?;
        self.params.accumulate(L1_B, &g1.d_b)?;
        Ok(g1.d_x)
    }
}

impl Component for Nha {
    const KIND: ComponentKind = ComponentKind::Nha;

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }
}
