use rand::Rng;

use super::{check_tokens, init_embedding, init_linear, Component, ComponentKind, DimConfig, PAD};
use crate::error::Result;
use crate::numerics::layers::{row_maxpool_masked, MaxPool};
use crate::numerics::{
    matmul_bias, matmul_bias_backward, relu, relu_backward, row_maxpool_backward, Matrix, ParamSet,
};

const EMBED: &str = "embedding";
const PROJ_W: &str = "proj.weight";
const PROJ_B: &str = "proj.bias";

/// Answer projection network: embed each answer token, project every token
/// with one shared linear layer plus ReLU, then max-pool over the token
/// positions.
#[derive(Debug, Clone)]
pub struct Apn {
    params: ParamSet,
    answer_len: usize,
    mask_pad_in_pool: bool,
}

#[derive(Debug, Clone)]
pub struct ApnCache {
    tokens: Vec<Vec<usize>>,
    embedded: Matrix,
    pre_act: Matrix,
    pools: Vec<MaxPool>,
}

impl Apn {
    pub fn new<R: Rng + ?Sized>(dims: &DimConfig, mask_pad_in_pool: bool, rng: &mut R) -> Self {
        let mut params = ParamSet::new();
        params.insert(EMBED, init_embedding(dims.vocab_size, dims.embed_dim, rng));
        init_linear(&mut params, "proj", dims.embed_dim, dims.apn_dim, rng);
        Self {
            params,
            answer_len: dims.answer_len,
            mask_pad_in_pool,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.params.value(PROJ_W).cols()
    }

    /// `answers` is `B` rows of exactly `answer_len` token indices.
    pub fn forward(&self, answers: &[Vec<usize>]) -> Result<(Matrix, ApnCache)> {
        let table = self.params.value(EMBED);
        check_tokens(answers, self.answer_len, table.rows())?;
        let flat: Vec<usize> = answers.iter().flatten().copied().collect();
        let embedded = table.select_rows(&flat);
        let pre_act = matmul_bias(
            &embedded,
            self.params.value(PROJ_W),
            self.params.value(PROJ_B),
        )?;
        let act = relu(&pre_act);

        let a = self.answer_len;
        let mut out = Matrix::zeros(answers.len(), self.output_dim());
        let mut pools = Vec::with_capacity(answers.len());
        for (b, row) in answers.iter().enumerate() {
            let idx: Vec<usize> = (b * a..(b + 1) * a).collect();
            let block = act.select_rows(&idx);
            let mask: Option<Vec<bool>> = self
                .mask_pad_in_pool
                .then(|| row.iter().map(|&t| t != PAD).collect());
            let pool = row_maxpool_masked(&block, mask.as_deref())?;
            out.row_mut(b).copy_from_slice(pool.out.as_slice());
            pools.push(pool);
        }
        Ok((
            out,
            ApnCache {
                tokens: answers.to_vec(),
                embedded,
                pre_act,
                pools,
            },
        ))
    }

    /// Accumulates parameter gradients and returns nothing: the APN input is
    /// discrete. The pad row of the embedding never receives gradient.
    pub fn backward(&mut self, cache: &ApnCache, d_out: &Matrix) -> Result<()> {
        let a = self.answer_len;
        let p = self.output_dim();
        let mut d_act = Matrix::zeros(cache.pre_act.rows(), p);
        for (b, pool) in cache.pools.iter().enumerate() {
            let d_row = Matrix::row_vector(d_out.row(b));
            let d_block = row_maxpool_backward(pool, &d_row)?;
            for r in 0..a {
                d_act.row_mut(b * a + r).copy_from_slice(d_block.row(r));
            }
        }
        let d_pre = relu_backward(&cache.pre_act, &d_act)?;
        let g = matmul_bias_backward(&cache.embedded, self.params.value(PROJ_W), &d_pre)?;
        self.params.accumulate(PROJ_W, &g.d_w)?;
        self.params.accumulate(PROJ_B, &g.d_b)?;

        let table = self.params.get_mut(EMBED).expect("embedding entry");
        for (i, &tok) in cache.tokens.iter().flatten().enumerate() {
            if tok == PAD {
                continue;
            }
            for (dst, src) in table.grad.row_mut(tok).iter_mut().zip(g.d_x.row(i)) {
                *dst += src;
            }
        }
        Ok(())
    }
}

impl Component for Apn {
    const KIND: ComponentKind = ComponentKind::Apn;

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_difference_gradient, relative_error};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_dims() -> DimConfig {
        DimConfig {
            answer_len: 3,
            embed_dim: 4,
            apn_dim: 5,
            vocab_size: 7,
            ..DimConfig::default()
        }
    }

    #[test]
    fn all_padding_depends_only_on_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut apn = Apn::new(&small_dims(), false, &mut rng);
        let bias = Matrix::from_rows(&[[0.3, -0.2, 0.0, 1.5, -4.0]]);
        apn.params_mut().value_mut(PROJ_B).clone_from(&bias);
        let (out, _) = apn.forward(&[vec![0, 0, 0]]).unwrap();
        assert_eq!(out, relu(&bias));
    }

    #[test]
    fn hand_sized_pipeline() {
        // E=2, P=2, A=1: out = relu(e W + b) for the single token
        let dims = DimConfig {
            answer_len: 1,
            embed_dim: 2,
            apn_dim: 2,
            vocab_size: 3,
            ..DimConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut apn = Apn::new(&dims, false, &mut rng);
        let p = apn.params_mut();
        *p.value_mut(EMBED) = Matrix::from_rows(&[[0.0, 0.0], [0.0, 0.0], [1.0, -2.0]]);
        *p.value_mut(PROJ_W) = Matrix::from_rows(&[[0.5, 1.0], [0.25, 1.0]]);
        *p.value_mut(PROJ_B) = Matrix::from_rows(&[[0.1, 0.2]]);
        let (out, _) = apn.forward(&[vec![2]]).unwrap();
        // [1*0.5 - 2*0.25 + 0.1, 1*1 - 2*1 + 0.2] = [0.1, -0.8] -> relu
        assert!(out.max_abs_diff(&Matrix::from_rows(&[[0.1, 0.0]])) < 1e-15);
    }

    #[test]
    fn out_of_range_token_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let apn = Apn::new(&small_dims(), false, &mut rng);
        assert!(apn.forward(&[vec![1, 2, 7]]).is_err());
        assert!(apn.forward(&[vec![1, 2]]).is_err());
    }

    #[test]
    fn masked_pool_ignores_padding() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut apn = Apn::new(&small_dims(), true, &mut rng);
        apn.params_mut().value_mut(PROJ_B).fill(10.0);
        let (masked, _) = apn.forward(&[vec![0, 0, 0]]).unwrap();
        assert_eq!(masked, Matrix::zeros(1, 5));
    }

    #[test]
    fn embedding_gradient_matches_finite_differences() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut apn = Apn::new(&small_dims(), false, &mut rng);
            let answers = vec![vec![2, 3, 0], vec![6, 2, 5]];
            let readout = Matrix::uniform(2, 5, 1.0, &mut rng);
            let (_, cache) = apn.forward(&answers).unwrap();
            apn.backward(&cache, &readout).unwrap();
            let analytic = apn.params().grad(EMBED).clone();
            let base = apn.clone();
            let numeric = finite_difference_gradient(
                |table| {
                    let mut probe = base.clone();
                    *probe.params_mut().value_mut(EMBED) = table.clone();
                    let (out, _) = probe.forward(&answers).unwrap();
                    crate::numerics::dot(out.as_slice(), readout.as_slice())
                },
                base.params().value(EMBED),
                1e-6,
            );
            // pad row is frozen, so compare everything except row 0
            let keep: Vec<usize> = (1..7).collect();
            let err = relative_error(&analytic.select_rows(&keep), &numeric.select_rows(&keep));
            assert!(err < 1e-5, "seed {seed}: {err}");
            assert_eq!(analytic.row(0), &[0.0; 4]);
        }
    }
}
