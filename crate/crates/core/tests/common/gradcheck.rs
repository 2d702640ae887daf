//! Analytic gradients against central finite differences in f64.

use iwo::nn::{mlp_forward_backward, mse_loss, BatchNorm, Dense, HeadSpec, InitScheme, MlpHead, LINEAR_GAIN, RELU_GAIN};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-6;
pub const ABS_TOL: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-3;

pub type Check = Result<(), String>;

fn close(analytic: f64, numeric: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= ABS_TOL.max(REL_TOL * analytic.abs().max(numeric.abs()))
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect()
}

/// Central difference of `f` with respect to every entry of `x`.
fn numeric_grad(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut xs = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = xs[i];
            xs[i] = orig + H;
            let up = f(&xs);
            xs[i] = orig - H;
            let down = f(&xs);
            xs[i] = orig;
            (up - down) / (2.0 * H)
        })
        .collect()
}

fn compare(what: &str, analytic: &[f64], numeric: &[f64]) -> Check {
    if analytic.len() != numeric.len() {
        return Err(format!("{what}: {} analytic vs {} numeric entries", analytic.len(), numeric.len()));
    }
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        if !close(*a, *n) {
            return Err(format!("{what}[{i}]: analytic {a} vs numeric {n}"));
        }
    }
    Ok(())
}

/// Projection loss `sum(y * w)` for a fixed random weighting `w`.
fn weighted_sum(y: &[f64], w: &[f64]) -> f64 {
    y.iter().zip(w).map(|(a, b)| a * b).sum()
}

pub fn dense_layer() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (bias, batch) in [(true, 5), (false, 3)] {
        let layer = Dense::<f64>::kaiming(4, 6, RELU_GAIN, bias, &mut rng);
        let mut layer = if bias {
            let b = random_vec(&mut rng, 4);
            Dense::new(layer.weight.value.clone(), 4, 6, Some(b))
        } else {
            layer
        };
        let x = random_vec(&mut rng, batch * 6);
        let w = random_vec(&mut rng, batch * 4);
        layer.forward(&x, batch);
        let dx = layer.backward(&w, batch);

        let num_x = numeric_grad(&x, |xs| weighted_sum(&layer.apply(xs, batch), &w));
        compare("dense dx", &dx, &num_x)?;

        let base = layer.clone();
        let num_w = numeric_grad(&base.weight.value, |ws| {
            let l = Dense::new(ws.to_vec(), 4, 6, base.bias.as_ref().map(|b| b.value.clone()));
            weighted_sum(&l.apply(&x, batch), &w)
        });
        compare("dense dW", &layer.weight.grad, &num_w)?;
        if let Some(b) = &layer.bias {
            let num_b = numeric_grad(&b.value, |bs| {
                let l = Dense::new(base.weight.value.clone(), 4, 6, Some(bs.to_vec()));
                weighted_sum(&l.apply(&x, batch), &w)
            });
            compare("dense db", &b.grad, &num_b)?;
        }
    }
    Ok(())
}

fn bn_with(gamma: &[f64], beta: &[f64]) -> BatchNorm<f64> {
    let mut bn = BatchNorm::new(gamma.len());
    bn.gamma.value = gamma.to_vec();
    bn.beta.value = beta.to_vec();
    bn
}

pub fn batch_norm() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (f, batch) = (3, 7);
    let gamma: Vec<f64> = random_vec(&mut rng, f);
    let beta = random_vec(&mut rng, f);
    let x = random_vec(&mut rng, batch * f);
    let w = random_vec(&mut rng, batch * f);

    for train in [true, false] {
        let mut bn = bn_with(&gamma, &beta);
        if !train {
            bn.running_mean = random_vec(&mut rng, f);
            bn.running_var = random_vec(&mut rng, f).iter().map(|v| v.abs() + 0.3).collect();
        }
        let frozen = bn.clone();
        bn.forward(&x, batch, train);
        let dx = bn.backward(&w, batch);

        let num_x = numeric_grad(&x, |xs| weighted_sum(&frozen.clone().forward(xs, batch, train), &w));
        compare("bn dx", &dx, &num_x)?;
        let num_g = numeric_grad(&gamma, |gs| {
            let mut b = frozen.clone();
            b.gamma.value = gs.to_vec();
            weighted_sum(&b.forward(&x, batch, train), &w)
        });
        compare("bn dgamma", &bn.gamma.grad, &num_g)?;
        let num_b = numeric_grad(&beta, |bs| {
            let mut b = frozen.clone();
            b.beta.value = bs.to_vec();
            weighted_sum(&b.forward(&x, batch, train), &w)
        });
        compare("bn dbeta", &bn.beta.grad, &num_b)?;
    }
    Ok(())
}

pub fn mse() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = random_vec(&mut rng, 9);
    let t = random_vec(&mut rng, 9);
    let (_, g) = mse_loss(&p, &t);
    let num = numeric_grad(&p, |ps| mse_loss(ps, &t).0);
    compare("mse", &g, &num)
}

fn head_loss(head: &MlpHead<f64>, x: &[f64], t: &[f64]) -> f64 {
    let mut h = head.clone();
    let pred = h.forward(x, t.len(), true);
    mse_loss(&pred, t).0
}

pub fn mlp_head() -> Check {
    for (seed, batch_norm) in [(4, false), (5, true)] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = HeadSpec { hidden: vec![6, 5], batch_norm, init: InitScheme::FanIn };
        let mut head = MlpHead::<f64>::new(3, &spec, &mut rng);
        let batch = 8;
        let x = random_vec(&mut rng, batch * 3);
        let t = random_vec(&mut rng, batch);
        let frozen = head.clone();
        let (_, dx) = mlp_forward_backward(&mut head, &x, &t, true).map_err(|e| e.to_string())?;

        let num_x = numeric_grad(&x, |xs| head_loss(&frozen, xs, &t));
        compare("head dx", &dx, &num_x)?;

        let analytic: Vec<Vec<f64>> = head.params_mut().iter().map(|p| p.grad.clone()).collect();
        for (idx, grad) in analytic.iter().enumerate() {
            let values = frozen.clone().params_mut()[idx].value.clone();
            let num = numeric_grad(&values, |vs| {
                let mut h = frozen.clone();
                h.params_mut()[idx].value = vs.to_vec();
                head_loss(&h, &x, &t)
            });
            compare(&format!("head param {idx}"), grad, &num)?;
        }
    }
    Ok(())
}

/// Linear spine feeding a head at each level, summed loss, as in training.
pub fn spine_with_heads() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let levels = [4usize, 3, 2, 1];
    let spec = HeadSpec { hidden: vec![5], batch_norm: false, init: InitScheme::Kaiming };
    let spine: Vec<Dense<f64>> = levels
        .windows(2)
        .map(|w| Dense::kaiming(w[1], w[0], LINEAR_GAIN, false, &mut rng))
        .collect();
    let heads: Vec<MlpHead<f64>> = levels.iter().map(|&d| MlpHead::new(d, &spec, &mut rng)).collect();
    let batch = 6;
    let x = random_vec(&mut rng, batch * 4);
    let t = random_vec(&mut rng, batch);

    let total = |spine: &[Dense<f64>], x: &[f64]| {
        let mut h = x.to_vec();
        let mut loss = head_loss(&heads[0], &h, &t);
        for (i, layer) in spine.iter().enumerate() {
            h = layer.apply(&h, batch);
            loss += head_loss(&heads[i + 1], &h, &t);
        }
        loss
    };

    // analytic: same composition as the trainer
    let mut sp = spine.clone();
    let mut hd = heads.clone();
    let mut hs = vec![x.clone()];
    for layer in sp.iter_mut() {
        let next = layer.forward(hs.last().expect("non-empty"), batch);
        hs.push(next);
    }
    let mut dxs = Vec::new();
    for (i, h) in hd.iter_mut().enumerate() {
        dxs.push(mlp_forward_backward(h, &hs[i], &t, true).map_err(|e| e.to_string())?.1);
    }
    let mut g = dxs.pop().expect("non-empty");
    for (layer, above) in sp.iter_mut().rev().zip(dxs.into_iter().rev()) {
        let mut up = layer.backward(&g, batch);
        up.iter_mut().zip(&above).for_each(|(u, a)| *u += a);
        g = up;
    }
    let num_x = numeric_grad(&x, |xs| total(&spine, xs));
    compare("spine dx", &g, &num_x)?;
    for i in 0..spine.len() {
        let num = numeric_grad(&spine[i].weight.value, |ws| {
            let mut s = spine.clone();
            s[i].weight.value = ws.to_vec();
            total(&s, &x)
        });
        compare(&format!("spine W{i}"), &sp[i].weight.grad, &num)?;
    }
    Ok(())
}

/// Every check, by name.
pub fn all() -> Vec<(&'static str, Check)> {
    vec![
        ("dense", dense_layer()),
        ("batch_norm", batch_norm()),
        ("mse", mse()),
        ("mlp_head", mlp_head()),
        ("spine_with_heads", spine_with_heads()),
    ]
}
