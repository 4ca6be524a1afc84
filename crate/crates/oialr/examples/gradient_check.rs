//! Check the analytic square-factor gradient against central finite
//! differences on a mixed full-rank / factored network.

use oialr::linalg::Matrix;
use oialr::nn::loss::cross_entropy_loss;
use oialr::nn::{Activation, LayerMode, SequentialModel, WeightGrad};

fn loss_of(model: &SequentialModel, x: &Matrix, y: &[usize]) -> f64 {
    let (logits, _) = model.forward(x).unwrap();
    cross_entropy_loss(&logits, y, 0.0).unwrap().0
}

fn main() -> oialr::Result<()> {
    let mut model = SequentialModel::mlp(&[6, 5, 4], Activation::Gelu, 42)?;
    // Factor the hidden layer, keep the output layer dense.
    model.convert_to_low_rank(false, true)?;

    let x = Matrix::from_rows(&[
        &[0.3, -0.8, 0.5, 0.1, -0.2, 0.9],
        &[-0.4, 0.2, -0.6, 0.7, 0.0, -0.1],
        &[0.8, 0.5, 0.2, -0.3, 0.4, -0.7],
    ]);
    let targets = vec![1usize, 3, 0];

    let (logits, cache) = model.forward(&x)?;
    let (_, loss_grad) = cross_entropy_loss(&logits, &targets, 0.0)?;
    let grads = model.backward(&cache, &loss_grad)?;

    let WeightGrad::Sigma(analytic) = &grads[0].weight else {
        panic!("hidden layer should be factored");
    };

    let eps = 1e-6;
    let mut worst = 0.0f64;
    let rank = analytic.rows();
    for i in 0..rank {
        for j in 0..rank {
            let probe = |delta: f64, model: &mut SequentialModel| -> f64 {
                let layer = model.dense_layers_mut().next().unwrap();
                let LayerMode::LowRank(w) = &mut layer.mode else {
                    unreachable!()
                };
                let old = w.sigma().get(i, j);
                w.sigma_mut().set(i, j, old + delta);
                let value = loss_of(model, &x, &targets);
                let layer = model.dense_layers_mut().next().unwrap();
                let LayerMode::LowRank(w) = &mut layer.mode else {
                    unreachable!()
                };
                w.sigma_mut().set(i, j, old);
                value
            };
            let up = probe(eps, &mut model);
            let down = probe(-eps, &mut model);
            let fd = (up - down) / (2.0 * eps);
            let g = analytic.get(i, j);
            let rel = (g - fd).abs() / fd.abs().max(1e-6);
            worst = worst.max(rel);
        }
    }
    println!(
        "checked {}x{rank} square-factor entries, worst relative error {worst:.3e}",
        rank
    );
    Ok(())
}
