use rand::Rng;

use super::{check_cols, init_linear, Component, ComponentKind, DimConfig};
use crate::error::Result;
use crate::numerics::{matmul_bias, matmul_bias_backward, Matrix, ParamSet};

const W: &str = "proj.weight";
const B: &str = "proj.bias";

/// Linear tail adapter: a single linear map from the APN width to the
/// shared width.
#[derive(Debug, Clone)]
pub struct Lta {
    params: ParamSet,
}

#[derive(Debug, Clone)]
pub struct LtaCache {
    input: Matrix,
}

impl Lta {
    pub fn new<R: Rng + ?Sized>(dims: &DimConfig, rng: &mut R) -> Self {
        let mut params = ParamSet::new();
        init_linear(&mut params, "proj", dims.apn_dim, dims.shared_dim, rng);
        Self { params }
    }

    pub fn output_dim(&self) -> usize {
        self.params.value(W).cols()
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, LtaCache)> {
        check_cols(x, self.params.value(W).rows(), "lta_forward")?;
        let out = matmul_bias(x, self.params.value(W), self.params.value(B))?;
        Ok((out, LtaCache { input: x.clone() }))
    }

    pub fn backward(&mut self, cache: &LtaCache, d_out: &Matrix) -> Result<Matrix> {
        let g = matmul_bias_backward(&cache.input, self.params.value(W), d_out)?;
        self.params.accumulate(W, &g.d_w)?;
        self.params.accumulate(B, &g.d_b)?;
        Ok(g.d_x)
    }
}

impl Component for Lta {
    const KIND: ComponentKind = ComponentKind::Lta;

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }
}
