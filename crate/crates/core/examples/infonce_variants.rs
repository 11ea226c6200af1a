//! The two InfoNCE variants on a two-row batch, then on a random batch with
//! both reductions and the symmetric option.
//!
//!     cargo run --example infonce_variants

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use unicon::losses::{info_nce, InfoNceConfig, InfoNceVariant, Reduction};
use unicon::numerics::Matrix;

fn main() -> anyhow::Result<()> {
    let v = Matrix::from_rows(&[[1.0], [-1.0]]);
    for variant in [InfoNceVariant::PaperExact, InfoNceVariant::Standard] {
        let cfg = InfoNceConfig {
            temperature: 1.0,
            variant,
            ..InfoNceConfig::default()
        };
        let out = info_nce(&v, &v, &cfg)?;
        println!("{variant:?}: loss {:.6}", out.loss);
    }
    // Without the positive in the denominator the loss is unbounded below:
    // scaling both towers up keeps lowering it.
    for scale in [1.0, 2.0, 4.0] {
        let s = v.scale(scale);
        let cfg = InfoNceConfig {
            temperature: 1.0,
            ..InfoNceConfig::default()
        };
        println!(
            "paper_exact at scale {scale}: {:.3}",
            info_nce(&s, &s, &cfg)?.loss
        );
    }

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = Matrix::uniform(8, 16, 1.0, &mut rng);
    let b = Matrix::uniform(8, 16, 1.0, &mut rng);
    for reduction in [Reduction::Sum, Reduction::Mean] {
        for symmetric in [false, true] {
            for l2_normalize in [false, true] {
                let cfg = InfoNceConfig {
                    variant: InfoNceVariant::Standard,
                    reduction,
                    symmetric,
                    l2_normalize,
                    ..InfoNceConfig::default()
                };
                let out = info_nce(&a, &b, &cfg)?;
                println!(
                    "standard {reduction:?} symmetric={symmetric} l2={l2_normalize}: loss {:.4}, |d_nha| {:.4}",
                    out.loss,
                    out.d_nha.frobenius_norm()
                );
            }
        }
    }
    Ok(())
}
