//! Statistical and closed-form checks of the diffusion module.

#![allow(clippy::needless_range_loop)]

use diffail::diffusion::{
    diff_loss, discriminate, discriminate_value, forward_noise, reward_from_losses, standard_normal, DenoiserConfig,
    DenoiserNet, DiffusionSchedule, NoiseDraw, PairBatch, PairMode, D_CEIL, D_FLOOR,
};
use diffail::numerics::{Activation, MlpParams, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Worst mean and variance deviation, in standard errors, of `x_t` over `n`
/// draws at fixed `x0` for each `t` of the default schedule.
pub fn marginal_deviation(n: usize, seed: u64) -> (f64, f64) {
    let sched = DiffusionSchedule::linear(10, 1e-4, 2e-2).unwrap();
    let x0 = [0.7, -1.3, 2.0];
    let d = x0.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut worst_mean, mut worst_var) = (0.0f64, 0.0f64);
    for t in [1, 5, 10] {
        let rows = Tensor::from_rows(&vec![x0.to_vec(); n]);
        let draw = NoiseDraw {
            t: vec![t; n],
            eps: standard_normal(n, d, &mut rng),
        };
        let xt = forward_noise(&rows, &draw, &sched).unwrap();
        let ab = sched.alpha_bar(t);
        let var_true = 1.0 - ab;
        for j in 0..d {
            let col: Vec<f64> = (0..n).map(|i| xt.get(i, j)).collect();
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let se_mean = (var_true / n as f64).sqrt();
            // Var of the sample variance of a Gaussian: 2σ⁴/(n−1).
            let se_var = var_true * (2.0 / (n - 1) as f64).sqrt();
            worst_mean = worst_mean.max((mean - ab.sqrt() * x0[j]).abs() / se_mean);
            worst_var = worst_var.max((var - var_true).abs() / se_var);
        }
    }
    (worst_mean, worst_var)
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

/// Each closed-form example with whether it reproduced.
#[allow(clippy::approx_constant)]
pub fn closed_form_examples() -> Vec<(&'static str, bool)> {
    let mut out = Vec::new();
    let s = DiffusionSchedule::linear(1, 0.5, 0.5).unwrap();
    out.push(("single-step schedule", close(s.alpha_bar(1), 0.5, 1e-15)));
    let s = DiffusionSchedule::linear(2, 0.1, 0.2).unwrap();
    out.push((
        "two-step schedule",
        close(s.alpha_bar(1), 0.9, 1e-15) && close(s.alpha_bar(2), 0.72, 1e-15),
    ));
    let s = DiffusionSchedule::linear(10, 1e-4, 2e-2).unwrap();
    out.push(("alpha_bar decreases", s.alpha_bar(10) < s.alpha_bar(1)));

    let s = DiffusionSchedule::from_beta_values(vec![0.75]).unwrap();
    let draw = NoiseDraw {
        t: vec![1],
        eps: Tensor::row(vec![0.0, 1.0]),
    };
    let xt = forward_noise(&Tensor::row(vec![1.0, 0.0]), &draw, &s).unwrap();
    out.push((
        "forward noise at alpha_bar 0.25",
        close(xt.get(0, 0), 0.5, 1e-15) && close(xt.get(0, 1), 0.8660254, 1e-7),
    ));

    let d = discriminate(&Tensor::column(vec![0.0, 4f64.ln(), 100.0])).unwrap();
    out.push(("D at zero loss", d.data()[0] == D_CEIL));
    out.push(("D at ln 4", close(d.data()[1], 0.25, 1e-15)));
    out.push(("D at 100", d.data()[2] == D_FLOOR));
    out.push(("negative loss rejected", discriminate(&Tensor::column(vec![-1e-3])).is_err()));

    out.push(("reward T=1 ln 2", close(reward_from_losses(&[2f64.ln()]), 0.693147, 1e-6)));
    out.push((
        "reward T=2 (ln 2, ln 4)",
        close(reward_from_losses(&[2f64.ln(), 4f64.ln()]), 0.490415, 1e-6),
    ));
    out.push((
        "reward floor",
        close(reward_from_losses(&[100.0; 10]), 1e-7, 1e-12),
    ));
    out.push(("loss of a zero predictor", zero_predictor_loss()));
    out.push(("straight-line loss oracle", straight_line_loss_err() <= 1e-10));
    out
}

/// A denoiser whose last layer is zero predicts 0, so the loss is ‖ε‖².
fn zero_predictor_loss() -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut den = DenoiserNet::new(
        3,
        DenoiserConfig {
            hidden: 4,
            hidden_layers: 1,
            time_embed_dim: 2,
        },
        &mut rng,
    );
    let last = den.body.layers.last_mut().unwrap();
    last.weight.data_mut().iter_mut().for_each(|w| *w = 0.0);
    last.bias.data_mut().iter_mut().for_each(|b| *b = 0.0);
    let eps = Tensor::row(vec![1.0, 1.5, (3.7f64 - 1.0 - 2.25).sqrt()]);
    let draw = NoiseDraw { t: vec![1], eps };
    let sched = DiffusionSchedule::linear(2, 0.1, 0.2).unwrap();
    let x0 = PairBatch {
        x0: Tensor::row(vec![0.3, -0.2, 0.9]),
        mode: PairMode::StateAction,
    };
    close(diff_loss(&den, &x0, &draw, &sched).unwrap().item(), 3.7, 1e-12)
}

fn ref_mish(x: f64) -> f64 {
    x * x.exp().ln_1p().tanh()
}

fn ref_mlp(net: &MlpParams, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    for layer in &net.layers {
        let (i_dim, o_dim) = (layer.weight.rows(), layer.weight.cols());
        let mut next = vec![0.0; o_dim];
        for o in 0..o_dim {
            let mut z = layer.bias.data()[o];
            for i in 0..i_dim {
                z += h[i] * layer.weight.data()[i * o_dim + o];
            }
            next[o] = match layer.activation {
                Activation::Identity => z,
                Activation::Relu => z.max(0.0),
                Activation::Tanh => z.tanh(),
                Activation::Mish => ref_mish(z),
            };
        }
        h = next;
    }
    h
}

/// Largest gap between `diff_loss` and a loop-by-loop recomputation.
pub fn straight_line_loss_err() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let den = DenoiserNet::new(
        4,
        DenoiserConfig {
            hidden: 6,
            hidden_layers: 2,
            time_embed_dim: 3,
        },
        &mut rng,
    );
    let sched = DiffusionSchedule::linear(7, 1e-3, 5e-2).unwrap();
    let x0 = standard_normal(12, 4, &mut rng);
    let draw = NoiseDraw::sample(12, 4, 7, &mut rng);
    let got = diff_loss(
        &den,
        &PairBatch {
            x0: x0.clone(),
            mode: PairMode::StateAction,
        },
        &draw,
        &sched,
    )
    .unwrap();
    let mut worst = 0.0f64;
    for r in 0..12 {
        let t = draw.t[r];
        let mut ab = 1.0;
        for k in 1..=t {
            ab *= 1.0 - (1e-3 + (5e-2 - 1e-3) * (k - 1) as f64 / 6.0);
        }
        let xt: Vec<f64> = (0..4)
            .map(|j| ab.sqrt() * x0.get(r, j) + (1.0 - ab).sqrt() * draw.eps.get(r, j))
            .collect();
        let emb = ref_mlp(&den.time_embed, &[t as f64 / 7.0]);
        let mut input = xt;
        input.extend(emb);
        let pred = ref_mlp(&den.body, &input);
        let loss: f64 = (0..4).map(|j| (draw.eps.get(r, j) - pred[j]).powi(2)).sum();
        worst = worst.max((loss - got.data()[r]).abs());
    }
    worst
}

/// Violations of `a < b ⇒ D(a) ≥ D(b)` over `n` random loss pairs, and of
/// reward antitonicity in each per-step loss.
pub fn antitone_violations(n: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    for _ in 0..n {
        // Spread over the clamp regions and the interior.
        let a: f64 = 10f64.powf(rng.random_range(-9.0..2.5));
        let b: f64 = 10f64.powf(rng.random_range(-9.0..2.5));
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        if lo < hi {
            let (dl, dh) = (discriminate_value(lo), discriminate_value(hi));
            let interior = (-hi).exp() > D_FLOOR && (-lo).exp() < D_CEIL;
            if dl < dh || (interior && dl == dh) {
                bad += 1;
            }
        }
        let mut losses: Vec<f64> = (0..4).map(|_| 10f64.powf(rng.random_range(-3.0..1.5))).collect();
        let r0 = reward_from_losses(&losses);
        let k = rng.random_range(0..4);
        losses[k] *= 1.5;
        let r1 = reward_from_losses(&losses);
        if r1 > r0 || !(r0 > 0.0 && r0 <= -(1.0 - D_CEIL).ln() + 1e-12) {
            bad += 1;
        }
    }
    bad
}
