//! Compares the analytic loss gradient of the default-size network with
//! central differences, in f64, on a random subset of parameters.
//!
//!     cargo run --release --example gradient_check -- [coordinates]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparseg::model::{ModelConfig, ResidualTransformer};
use sparseg::nn::{relative_error, softmax_cross_entropy};
use sparseg::sampler::DESCRIPTOR_LEN;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let count: usize = std::env::args().nth(1).map_or(Ok(30), |s| s.parse())?;
    let h = 1e-3;
    let mut m = ResidualTransformer::<f64>::new(ModelConfig::default())?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x: Vec<f64> = (0..DESCRIPTOR_LEN).map(|_| rng.random_range(0.0..1.0)).collect();
    let c = m.class_count();
    let targets: Vec<u8> = (0..125).map(|_| rng.random_range(0..c as u8)).collect();
    let loss = |m: &ResidualTransformer<f64>| {
        let y = m.forward(&x).unwrap();
        softmax_cross_entropy(&y.reshape(&[125, c]).unwrap(), &targets).unwrap().0
    };

    let (y, cache) = m.forward_cached(&x)?;
    let shape = y.shape().to_vec();
    let (l0, g) = softmax_cross_entropy(&y.reshape(&[125, c])?, &targets)?;
    m.zero_grad();
    m.backward(&cache, &g.reshape(&shape)?)?;
    drop(cache);
    println!("loss {l0:.6}, {} parameters", m.parameter_count());

    let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
    for _ in 0..count {
        let p = rng.random_range(0..m.params().len());
        let i = rng.random_range(0..m.params()[p].len());
        let orig = m.params()[p].value.data()[i];
        m.params_mut()[p].value.data_mut()[i] = orig + h;
        let plus = loss(&m);
        m.params_mut()[p].value.data_mut()[i] = orig - h;
        let minus = loss(&m);
        m.params_mut()[p].value.data_mut()[i] = orig;
        let (a, n) = (m.params()[p].grad.data()[i], (plus - minus) / (2.0 * h));
        println!("{:<24} [{i:>7}] analytic {a:+.6e} numeric {n:+.6e}", m.params()[p].name);
        analytic.push(a);
        numeric.push(n);
    }
    println!("relative error {:.3e}", relative_error(&analytic, &numeric));
    Ok(())
}
