//! Compares the hand-written backward pass of the nonlinear head adapter
//! against central finite differences.
//!
//!     cargo run --example gradient_check

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use unicon::components::{Component, DimConfig, Nha};
use unicon::numerics::{dot, finite_difference_gradient, relative_error, Matrix, Mode};

fn main() -> anyhow::Result<()> {
    let dims = DimConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut nha = Nha::new(&dims, &mut rng);
    let x = Matrix::uniform(6, dims.vqa_dim, 1.0, &mut rng);
    // A fixed random readout turns the output into a scalar loss.
    let readout = Matrix::uniform(6, dims.shared_dim, 1.0, &mut rng);

    let base = nha.clone();
    let (_, cache) = nha.forward(&x, Mode::Train)?;
    let d_x = nha.backward(&cache, &readout)?;
    let loss = |m: &Nha, x: &Matrix| {
        let mut probe = m.clone();
        let (out, _) = probe.forward(x, Mode::Train).expect("forward");
        dot(out.as_slice(), readout.as_slice())
    };

    let numeric = finite_difference_gradient(|v| loss(&base, v), &x, 1e-6);
    println!(
        "{:<14} rel err {:.2e}",
        "input",
        relative_error(&d_x, &numeric)
    );

    for (name, p) in nha.params().iter().filter(|(_, p)| p.trainable) {
        let numeric = finite_difference_gradient(
            |v| {
                let mut probe = base.clone();
                *probe.params_mut().value_mut(name) = v.clone();
                loss(&probe, &x)
            },
            base.params().value(name),
            1e-6,
        );
        println!(
            "{name:<14} rel err {:.2e}",
            relative_error(&p.grad, &numeric)
        );
    }
    Ok(())
}
