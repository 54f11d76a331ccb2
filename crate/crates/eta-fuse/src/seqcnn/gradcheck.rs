//! Finite-difference oracles for each layer type in isolation.
//!
//! Each check builds a small random instance, reduces the layer output to a
//! scalar through fixed random coefficients, and compares the analytic
//! parameter/input gradients against central differences. All checks are
//! deterministic in their seed and return the max relative error with
//! denominator `max(|analytic|, |numeric|, 1e-8)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{mape_loss, max_pool_with_argmax, ConvBank, Embedding, Mlp};
use super::tensor::Tensor;

pub const DEFAULT_EPSILON: f64 = 1e-5;

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
}

/// d/dx of `sum(coef * embedding_rows)` w.r.t. the table entries.
pub fn check_embedding(seed: u64, epsilon: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut emb = Embedding::new("gc_emb", 7, 4, false, &mut rng);
    let tokens = [2usize, 5, 2, 0, 6];
    let coef = random_vec(&mut rng, tokens.len() * 4);

    let objective = |e: &Embedding| -> f64 {
        let out = e.forward(&tokens);
        out.data().iter().zip(&coef).map(|(o, c)| o * c).sum()
    };

    // analytic
    emb.table.zero_grad();
    for (i, &t) in tokens.iter().enumerate() {
        emb.accumulate_grad(t, &coef[i * 4..(i + 1) * 4]);
    }
    let grads = emb.table.g.clone();

    let mut max_err: f64 = 0.0;
    for idx in 0..emb.table.len() {
        let orig = emb.table.w[idx];
        emb.table.w[idx] = orig + epsilon;
        let plus = objective(&emb);
        emb.table.w[idx] = orig - epsilon;
        let minus = objective(&emb);
        emb.table.w[idx] = orig;
        max_err = max_err.max(rel_err(grads[idx], (plus - minus) / (2.0 * epsilon)));
    }
    max_err
}

fn conv_objective(bank: &ConvBank, input: &Tensor, n_valid: usize, coefs: &[Vec<f64>]) -> f64 {
    let fwd = bank.forward(input, n_valid);
    fwd.per_size
        .iter()
        .zip(coefs)
        .map(|(s, c)| s.out.iter().zip(c).map(|(o, k)| o * k).sum::<f64>())
        .sum()
}

fn conv_check_impl(seed: u64, epsilon: f64, corrupt_weight_grads: bool) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, k, f, stride) = (9usize, 3usize, 2usize, 1usize);
    let mut bank = ConvBank::new("gc_conv", vec![2, 3, 4, 5], stride, k, f, &mut rng);
    let input = Tensor::new(vec![n, k], random_vec(&mut rng, n * k));
    let coefs: Vec<Vec<f64>> = bank
        .sizes
        .iter()
        .map(|&h| random_vec(&mut rng, ((n - h) / stride + 1) * f))
        .collect();

    // analytic: backward with d_out = coefs
    let fwd = bank.forward(&input, n);
    for p in bank.params_mut() {
        p.zero_grad();
    }
    let mut d_input = vec![0.0; n * k];
    bank.backward(&fwd, &coefs, n, &mut d_input, k);
    let mut weight_grads: Vec<Vec<f64>> = bank.weights.iter().map(|p| p.g.clone()).collect();
    let bias_grads: Vec<Vec<f64>> = bank.biases.iter().map(|p| p.g.clone()).collect();
    if corrupt_weight_grads {
        for g in &mut weight_grads {
            for x in g.iter_mut() {
                *x *= 1.05;
            }
        }
    }

    let mut max_err: f64 = 0.0;
    // parameters
    for si in 0..bank.sizes.len() {
        for idx in 0..bank.weights[si].len() {
            let orig = bank.weights[si].w[idx];
            bank.weights[si].w[idx] = orig + epsilon;
            let plus = conv_objective(&bank, &input, n, &coefs);
            bank.weights[si].w[idx] = orig - epsilon;
            let minus = conv_objective(&bank, &input, n, &coefs);
            bank.weights[si].w[idx] = orig;
            max_err = max_err.max(rel_err(
                weight_grads[si][idx],
                (plus - minus) / (2.0 * epsilon),
            ));
        }
        for idx in 0..bank.biases[si].len() {
            let orig = bank.biases[si].w[idx];
            bank.biases[si].w[idx] = orig + epsilon;
            let plus = conv_objective(&bank, &input, n, &coefs);
            bank.biases[si].w[idx] = orig - epsilon;
            let minus = conv_objective(&bank, &input, n, &coefs);
            bank.biases[si].w[idx] = orig;
            max_err = max_err.max(rel_err(
                bias_grads[si][idx],
                (plus - minus) / (2.0 * epsilon),
            ));
        }
    }
    // inputs
    let mut input = input;
    for idx in 0..n * k {
        let orig = input.data()[idx];
        input.data_mut()[idx] = orig + epsilon;
        let plus = conv_objective(&bank, &input, n, &coefs);
        input.data_mut()[idx] = orig - epsilon;
        let minus = conv_objective(&bank, &input, n, &coefs);
        input.data_mut()[idx] = orig;
        max_err = max_err.max(rel_err(d_input[idx], (plus - minus) / (2.0 * epsilon)));
    }
    max_err
}

/// Convolution bank: weight, bias, and input gradients.
pub fn check_conv(seed: u64, epsilon: f64) -> f64 {
    conv_check_impl(seed, epsilon, false)
}

/// Negative control: the same check with the analytic weight gradients
/// deliberately scaled by 1.05 must report a large error.
pub fn check_conv_corrupted(seed: u64, epsilon: f64) -> f64 {
    conv_check_impl(seed, epsilon, true)
}

/// Max pooling: d objective / d map via the argmax route.
pub fn check_pool(seed: u64, epsilon: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (positions, channels) = (7usize, 5usize);
    let mut map = random_vec(&mut rng, positions * channels);
    let coef = random_vec(&mut rng, channels);

    let objective = |m: &[f64]| -> f64 {
        let (vals, _) = max_pool_with_argmax(m, positions, channels);
        vals.iter().zip(&coef).map(|(v, c)| v * c).sum()
    };

    let (_, argmax) = max_pool_with_argmax(&map, positions, channels);
    let mut analytic = vec![0.0; positions * channels];
    for c in 0..channels {
        analytic[argmax[c] * channels + c] += coef[c];
    }

    let mut max_err: f64 = 0.0;
    for idx in 0..map.len() {
        let orig = map[idx];
        map[idx] = orig + epsilon;
        let plus = objective(&map);
        map[idx] = orig - epsilon;
        let minus = objective(&map);
        map[idx] = orig;
        max_err = max_err.max(rel_err(analytic[idx], (plus - minus) / (2.0 * epsilon)));
    }
    max_err
}

/// MLP stack: parameter and input gradients through the rectifiers.
pub fn check_mlp(seed: u64, epsilon: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let in_dim = 6;
    let mut mlp = Mlp::new("gc_mlp", in_dim, &[5, 4], &mut rng);
    let x = random_vec(&mut rng, in_dim);
    let coef = random_vec(&mut rng, mlp.out_dim());

    let objective = |m: &Mlp, x: &[f64]| -> f64 {
        let (out, _) = m.forward(x);
        out.iter().zip(&coef).map(|(o, c)| o * c).sum()
    };

    let (_, acts) = mlp.forward(&x);
    for p in mlp.params_mut() {
        p.zero_grad();
    }
    let mut d_in = vec![0.0; in_dim];
    mlp.backward(&acts, &coef, &mut d_in);
    let param_grads: Vec<Vec<f64>> = mlp
        .layers
        .iter()
        .flat_map(|l| [l.w.g.clone(), l.b.g.clone()])
        .collect();

    let mut max_err: f64 = 0.0;
    let n_layers = mlp.layers.len();
    for li in 0..n_layers {
        for (which, grads) in [
            (0usize, &param_grads[li * 2]),
            (1, &param_grads[li * 2 + 1]),
        ] {
            let len = if which == 0 {
                mlp.layers[li].w.len()
            } else {
                mlp.layers[li].b.len()
            };
            for idx in 0..len {
                let orig = {
                    let p = if which == 0 {
                        &mut mlp.layers[li].w
                    } else {
                        &mut mlp.layers[li].b
                    };
                    let orig = p.w[idx];
                    p.w[idx] = orig + epsilon;
                    orig
                };
                let plus = objective(&mlp, &x);
                {
                    let p = if which == 0 {
                        &mut mlp.layers[li].w
                    } else {
                        &mut mlp.layers[li].b
                    };
                    p.w[idx] = orig - epsilon;
                }
                let minus = objective(&mlp, &x);
                {
                    let p = if which == 0 {
                        &mut mlp.layers[li].w
                    } else {
                        &mut mlp.layers[li].b
                    };
                    p.w[idx] = orig;
                }
                max_err = max_err.max(rel_err(grads[idx], (plus - minus) / (2.0 * epsilon)));
            }
        }
    }
    let mut x = x;
    for idx in 0..in_dim {
        let orig = x[idx];
        x[idx] = orig + epsilon;
        let plus = objective(&mlp, &x);
        x[idx] = orig - epsilon;
        let minus = objective(&mlp, &x);
        x[idx] = orig;
        max_err = max_err.max(rel_err(d_in[idx], (plus - minus) / (2.0 * epsilon)));
    }
    max_err
}

/// MAPE head: loss and `d loss / d z` through the positive output transform
/// `pred = simple_eta * exp(tau * z)`.
pub fn check_mape_head(seed: u64, epsilon: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tau = 0.25;
    let mut max_err: f64 = 0.0;
    for _ in 0..50 {
        let simple_eta = 100.0 + rng.random::<f64>() * 500.0;
        let target = 100.0 + rng.random::<f64>() * 500.0;
        let z = rng.random::<f64>() * 4.0 - 2.0;

        let loss_at = |z: f64| -> f64 {
            let pred = simple_eta * (tau * z).exp();
            mape_loss(pred, target).unwrap().0
        };
        let pred = simple_eta * (tau * z).exp();
        let (_, d_pred) = mape_loss(pred, target).unwrap();
        let analytic = d_pred * pred * tau;
        let numeric = (loss_at(z + epsilon) - loss_at(z - epsilon)) / (2.0 * epsilon);
        max_err = max_err.max(rel_err(analytic, numeric));
    }
    max_err
}

/// All per-layer checks by name.
pub fn layer_checks(seed: u64, epsilon: f64) -> Vec<(&'static str, f64)> {
    vec![
        ("embedding", check_embedding(seed, epsilon)),
        ("conv", check_conv(seed.wrapping_add(1), epsilon)),
        ("pool", check_pool(seed.wrapping_add(2), epsilon)),
        ("mlp", check_mlp(seed.wrapping_add(3), epsilon)),
        ("mape_head", check_mape_head(seed.wrapping_add(4), epsilon)),
    ]
}
