//! Fits a two-component mixture to 1-D data and prints the EM trace.

use casa_sid::gmm::{train_gmm, GmmConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> casa_sid::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let left = Normal::new(-2.0, 0.5).expect("valid");
    let right = Normal::new(2.0, 0.5).expect("valid");
    let frames: Vec<Vec<f64>> = (0..2000)
        .map(|i| vec![if i % 2 == 0 { left.sample(&mut rng) } else { right.sample(&mut rng) }])
        .collect();
    let fit = train_gmm(&frames, &GmmConfig { components: 2, ..GmmConfig::default() })?;
    println!("converged {} after {} iterations", fit.converged, fit.iterations());
    for (w, (m, v)) in fit.tag.weights.iter().zip(fit.tag.means.iter().zip(&fit.tag.variances)) {
        println!("weight {w:.3}  mean {:+.3}  variance {:.3}", m[0], v[0]);
    }
    let trace: Vec<String> = fit.trace.iter().take(6).map(|l| format!("{l:.1}")).collect();
    println!("log-likelihood {} ...", trace.join(" "));
    Ok(())
}
