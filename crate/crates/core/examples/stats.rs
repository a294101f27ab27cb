//! Normality and paired-difference tests on seeded samples.

use casa_sid::eval::{ks_normality, wilcoxon_signed_rank, DEFAULT_ALPHA};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() -> casa_sid::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let normal: Vec<f64> = (0..500).map(|_| rng.sample(StandardNormal)).collect();
    let uniform: Vec<f64> = (0..500).map(|_| rng.gen::<f64>()).collect();
    for (name, x) in [("normal", &normal), ("uniform", &uniform)] {
        let ks = ks_normality(x, DEFAULT_ALPHA)?;
        println!("KS {name:<8} D = {:.4}  p = {:.4}  reject = {}", ks.statistic, ks.p_value, ks.reject);
    }
    let a: Vec<f64> = (0..10).map(|_| rng.gen_range(70.0..90.0)).collect();
    let b: Vec<f64> = a.iter().map(|v| v - rng.gen_range(-1.0..6.0)).collect();
    let w = wilcoxon_signed_rank(&a, &b, DEFAULT_ALPHA)?;
    println!(
        "Wilcoxon W = {} (W+ {}, W- {})  p = {:.4}  exact = {}  different = {}",
        w.statistic, w.w_plus, w.w_minus, w.p_value, w.exact, w.different
    );
    Ok(())
}
