use rand::Rng;

use super::{
    check_cols, check_tokens, init_embedding, init_linear, Component, ComponentKind, DimConfig, PAD,
};
use crate::error::{Error, Result};
use crate::numerics::{matmul_bias, matmul_bias_backward, relu, relu_backward, Matrix, ParamSet};

const EMBED: &str = "q_embedding";
const IMG_W: &str = "image.weight";
const IMG_B: &str = "image.bias";
const Q_W: &str = "question.weight";
const Q_B: &str = "question.bias";
const FUSE_W: &str = "fusion.weight";
const FUSE_B: &str = "fusion.bias";

/// Desk-scale stand-in for a VQA backbone. The image branch and the
/// question branch (mean of non-pad token embeddings) each produce half of
/// the width; a fusion layer mixes the concatenation.
#[derive(Debug, Clone)]
pub struct ToyVqa {
    params: ParamSet,
    image_dim: usize,
    question_len: usize,
}

#[derive(Debug, Clone)]
pub struct ToyVqaCache {
    image: Matrix,
    tokens: Vec<Vec<usize>>,
    /// Non-pad token count per question.
    counts: Vec<usize>,
    q_mean: Matrix,
    img_pre: Matrix,
    q_pre: Matrix,
    joint: Matrix,
    fuse_pre: Matrix,
}

impl ToyVqa {
    pub fn new<R: Rng + ?Sized>(dims: &DimConfig, rng: &mut R) -> Self {
        let half = dims.vqa_dim / 2;
        let mut params = ParamSet::new();
        params.insert(EMBED, init_embedding(dims.vocab_size, dims.embed_dim, rng));
        init_linear(&mut params, "image", dims.image_dim, half, rng);
        init_linear(&mut params, "question", dims.embed_dim, half, rng);
        init_linear(&mut params, "fusion", 2 * half, dims.vqa_dim, rng);
        Self {
            params,
            image_dim: dims.image_dim,
            question_len: dims.question_len,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.params.value(FUSE_W).cols()
    }

    pub fn forward(
        &self,
        image: &Matrix,
        questions: &[Vec<usize>],
    ) -> Result<(Matrix, ToyVqaCache)> {
        check_cols(image, self.image_dim, "toyvqa_forward")?;
        if image.rows() != questions.len() {
            return Err(Error::shape(
                "toyvqa_forward",
                format!("{} images but {} questions", image.rows(), questions.len()),
            ));
        }
        let table = self.params.value(EMBED);
        check_tokens(questions, self.question_len, table.rows())?;

        let mut q_mean = Matrix::zeros(questions.len(), table.cols());
        let mut counts = Vec::with_capacity(questions.len());
        for (b, q) in questions.iter().enumerate() {
            let n = q.iter().filter(|&&t| t != PAD).count();
            counts.push(n);
            if n == 0 {
                continue;
            }
            let row = q_mean.row_mut(b);
            for &t in q.iter().filter(|&&t| t != PAD) {
                for (dst, src) in row.iter_mut().zip(table.row(t)) {
                    *dst += src;
                }
            }
            row.iter_mut().for_each(|v| *v /= n as f64);
        }

        let img_pre = matmul_bias(image, self.params.value(IMG_W), self.params.value(IMG_B))?;
        let q_pre = matmul_bias(&q_mean, self.params.value(Q_W), self.params.value(Q_B))?;
        let joint = relu(&img_pre).hconcat(&relu(&q_pre))?;
        let fuse_pre = matmul_bias(&joint, self.params.value(FUSE_W), self.params.value(FUSE_B))?;
        let out = relu(&fuse_pre);
        Ok((
            out,
            ToyVqaCache {
                image: image.clone(),
                tokens: questions.to_vec(),
                counts,
                q_mean,
                img_pre,
                q_pre,
                joint,
                fuse_pre,
            },
        ))
    }

    /// Accumulates parameter gradients and returns the gradient with respect
    /// to the image input.
    pub fn backward(&mut self, cache: &ToyVqaCache, d_out: &Matrix) -> Result<Matrix> {
        let d_fuse = relu_backward(&cache.fuse_pre, d_out)?;
        let g = matmul_bias_backward(&cache.joint, self.params.value(FUSE_W), &d_fuse)?;
        self.params.accumulate(FUSE_W, &g.d_w)?;
        self.params.accumulate(FUSE_B, &g.d_b)?;

        let (d_img_act, d_q_act) = g.d_x.hsplit(cache.img_pre.cols())?;
        let d_img_pre = relu_backward(&cache.img_pre, &d_img_act)?;
        let gi = matmul_bias_backward(&cache.image, self.params.value(IMG_W), &d_img_pre)?;
        self.params.accumulate(IMG_W, &gi.d_w)?;
        self.params.accumulate(IMG_B, &gi.d_b)?;

        let d_q_pre = relu_backward(&cache.q_pre, &d_q_act)?;
        let gq = matmul_bias_backward(&cache.q_mean, self.params.value(Q_W), &d_q_pre)?;
        self.params.accumulate(Q_W, &gq.d_w)?;
        self.params.accumulate(Q_B, &gq.d_b)?;

        let table = self.params.get_mut(EMBED).expect("question embedding");
        for (b, q) in cache.tokens.iter().enumerate() {
            let n = cache.counts[b];
            if n == 0 {
                continue;
            }
            let inv = 1.0 / n as f64;
            for &t in q.iter().filter(|&&t| t != PAD) {
                for (dst, src) in table.grad.row_mut(t).iter_mut().zip(gq.d_x.row(b)) {
                    *dst += src * inv;
                }
            }
        }
        Ok(gi.d_x)
    }
}

impl Component for ToyVqa {
    const KIND: ComponentKind = ComponentKind::Vqa;

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
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dims() -> DimConfig {
        DimConfig {
            image_dim: 3,
            question_len: 4,
            embed_dim: 3,
            vqa_dim: 6,
            vocab_size: 9,
            ..DimConfig::default()
        }
    }

    #[test]
    fn zero_image_and_empty_question_use_bias_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut vqa = ToyVqa::new(&dims(), &mut rng);
        let p = vqa.params_mut();
        *p.value_mut(IMG_B) = Matrix::from_rows(&[[0.5, -1.0, 0.25]]);
        *p.value_mut(Q_B) = Matrix::from_rows(&[[-0.5, 2.0, 0.0]]);
        let fuse_b = Matrix::from_rows(&[[0.1, -0.1, 0.2, 0.0, 0.3, -0.3]]);
        *p.value_mut(FUSE_B) = fuse_b.clone();
        let (out, _) = vqa.forward(&Matrix::zeros(1, 3), &[vec![0; 4]]).unwrap();

        let joint = Matrix::from_rows(&[[0.5, 0.0, 0.25, 0.0, 2.0, 0.0]]);
        let expect = relu(&matmul_bias(&joint, vqa.params().value(FUSE_W), &fuse_b).unwrap());
        assert_eq!(out, expect);
    }

    #[test]
    fn identical_rows_give_identical_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let vqa = ToyVqa::new(&dims(), &mut rng);
        let img = Matrix::from_rows(&[[0.3, -0.7, 0.9], [0.3, -0.7, 0.9]]);
        let q = vec![vec![2, 5, 0, 0], vec![2, 5, 0, 0]];
        let (out, _) = vqa.forward(&img, &q).unwrap();
        assert_eq!(out.row(0), out.row(1));
    }

    #[test]
    fn mismatched_batch_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let vqa = ToyVqa::new(&dims(), &mut rng);
        assert!(vqa.forward(&Matrix::zeros(2, 3), &[vec![0; 4]]).is_err());
        assert!(vqa.forward(&Matrix::zeros(1, 4), &[vec![0; 4]]).is_err());
    }
}
