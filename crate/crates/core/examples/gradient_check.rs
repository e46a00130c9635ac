//! Compares backpropagated gradients of a small conv network against
//! central finite differences.

use millwatch::nn::{backprop_network, BatchNorm1d, Conv1d, Layer, Linear, Network};
use millwatch::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> millwatch::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let net = Network::new(vec![
        Layer::Conv1d(Conv1d::new(1, 3, &mut rng)),
        Layer::MaxPool1d,
        Layer::Relu,
        Layer::BatchNorm1d(BatchNorm1d::new(3)),
        Layer::Linear(Linear::new(3 * 4, 4, &mut rng)),
    ]);
    let x = Tensor::new(
        &[4, 1, 8],
        (0..32).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )?;
    let labels = [0, 1, 2, 3];

    let (loss, grads) = backprop_network(&mut net.clone(), &x, &labels)?;
    println!("loss {loss:.6}");

    let h = 1e-5;
    let loss_at = |n: &Network| backprop_network(&mut n.clone(), &x, &labels).map(|(l, _)| l);
    let mut worst: f64 = 0.0;
    for (p, analytic) in grads.flat().into_iter().enumerate() {
        for (i, &a) in analytic.iter().enumerate() {
            let mut plus = net.clone();
            plus.params_mut()[p][i] += h;
            let mut minus = net.clone();
            minus.params_mut()[p][i] -= h;
            let numeric = (loss_at(&plus)? - loss_at(&minus)?) / (2.0 * h);
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
        }
    }
    println!(
        "{} parameters checked, worst relative error {worst:.2e}",
        grads.flat_len()
    );
    Ok(())
}
