//! Compares back-propagated gradients of a small network with central
//! finite differences.

use casa_sid::cnn::{cnn_loss_and_gradients, init_cnn, mean_loss, CnnSpec, ConvBlock, Example};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> casa_sid::Result<()> {
    let spec = CnnSpec {
        input_height: 10,
        input_width: 10,
        blocks: vec![ConvBlock::square(3, 3)],
        fc: vec![6],
        n_classes: 3,
        aux_inputs: 2,
    };
    let model = init_cnn(&spec, 4)?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let batch: Vec<Example> = (0..4)
        .map(|i| Example {
            patch: (0..spec.patch_len()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            aux: (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            label: i % 3,
        })
        .collect();
    let (loss, grad) = cnn_loss_and_gradients(&batch, &model)?;
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..model.params.len() {
        let (mut plus, mut minus) = (model.clone(), model.clone());
        plus.params[i] += h;
        minus.params[i] -= h;
        let fd = (mean_loss(&batch, &plus)? - mean_loss(&batch, &minus)?) / (2.0 * h);
        worst = worst.max((grad[i] - fd).abs() / grad[i].abs().max(fd.abs()).max(1e-6));
    }
    println!("{} parameters, loss {loss:.4}, worst relative error {worst:.2e}", model.params.len());
    Ok(())
}
