use rand::Rng;

use super::{check_cols, init_linear, Component, ComponentKind, DimConfig};
use crate::error::Result;
use crate::numerics::{matmul_bias, matmul_bias_backward, relu, relu_backward, Matrix, ParamSet};

/// Server-held middle of the baseline split model: linear, ReLU, linear.
#[derive(Debug, Clone)]
pub struct SlGlobal {
    params: ParamSet,
}

#[derive(Debug, Clone)]
pub struct SlGlobalCache {
    input: Matrix,
    h_pre: Matrix,
    h: Matrix,
}

impl SlGlobal {
    pub fn new<R: Rng + ?Sized>(dims: &DimConfig, rng: &mut R) -> Self {
        let mut params = ParamSet::new();
        init_linear(&mut params, "fc1", dims.vqa_dim, dims.sl_hidden, rng);
        init_linear(&mut params, "fc2", dims.sl_hidden, dims.shared_dim, rng);
        Self { params }
    }

    pub fn output_dim(&self) -> usize {
        self.params.value("fc2.weight").cols()
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, SlGlobalCache)> {
        check_cols(
            x,
            self.params.value("fc1.weight").rows(),
            "sl_global_forward",
        )?;
        let h_pre = matmul_bias(
            x,
            self.params.value("fc1.weight"),
            self.params.value("fc1.bias"),
        )?;
        let h = relu(&h_pre);
        let out = matmul_bias(
            &h,
            self.params.value("fc2.weight"),
            self.params.value("fc2.bias"),
        )?;
        Ok((
            out,
            SlGlobalCache {
                input: x.clone(),
                h_pre,
                h,
            },
        ))
    }

    pub fn backward(&mut self, cache: &SlGlobalCache, d_out: &Matrix) -> Result<Matrix> {
        let g2 = matmul_bias_backward(&cache.h, self.params.value("fc2.weight"), d_out)?;
        self.params.accumulate("fc2.weight", &g2.d_w)?;
        self.params.accumulate("fc2.bias", &g2.d_b)?;
        let d_h = relu_backward(&cache.h_pre, &g2.d_x)?;
        let g1 = matmul_bias_backward(&cache.input, self.params.value("fc1.weight"), &d_h)?;
        self.params.accumulate("fc1.weight", &g1.d_w)?;
        self.params.accumulate("fc1.bias", &g1.d_b)?;
        Ok(g1.d_x)
    }
}

impl Component for SlGlobal {
    const KIND: ComponentKind = ComponentKind::SlGlobal;

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }
}

/// Client-held tail of the baseline: a linear classifier over `C` answers.
#[derive(Debug, Clone)]
pub struct SlClassifier {
    params: ParamSet,
}

#[derive(Debug, Clone)]
pub struct SlClassifierCache {
    input: Matrix,
}

impl SlClassifier {
    pub fn new<R: Rng + ?Sized>(dims: &DimConfig, classes: usize, rng: &mut R) -> Self {
        let mut params = ParamSet::new();
        init_linear(&mut params, "head", dims.shared_dim, classes, rng);
        Self { params }
    }

    pub fn classes(&self) -> usize {
        self.params.value("head.weight").cols()
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, SlClassifierCache)> {
        check_cols(
            x,
            self.params.value("head.weight").rows(),
            "sl_classifier_forward",
        )?;
        let logits = matmul_bias(
            x,
            self.params.value("head.weight"),
            self.params.value("head.bias"),
        )?;
        Ok((logits, SlClassifierCache { input: x.clone() }))
    }

    pub fn backward(&mut self, cache: &SlClassifierCache, d_logits: &Matrix) -> Result<Matrix> {
        let g = matmul_bias_backward(&cache.input, self.params.value("head.weight"), d_logits)?;
        self.params.accumulate("head.weight", &g.d_w)?;
        self.params.accumulate("head.bias", &g.d_b)?;
        Ok(g.d_x)
    }
}

impl Component for SlClassifier {
    const KIND: ComponentKind = ComponentKind::SlTail;

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }
}
