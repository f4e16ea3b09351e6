//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use dapolicy::dataset::SynthConfig;
use dapolicy::dqn::{init_params, loss_and_gradient, AgentConfig, Architecture, DuelingNetParams};
use dapolicy::env::Transition;
use dapolicy::harness::{DataSource, ExperimentConfig};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves the bias-augmented hinge-loss SVM dual by projected gradient
/// descent with a fixed 1/L step. Returns `(weights, bias)`.
pub fn projected_gradient_svm(
    samples: &[Vec<f64>],
    labels: &[i8],
    c: f64,
    iters: usize,
) -> (Vec<f64>, f64) {
    let n = samples.len();
    let aug: Vec<Vec<f64>> = samples
        .iter()
        .map(|x| x.iter().copied().chain(std::iter::once(1.0)).collect())
        .collect();
    let mut q = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            q[i][j] = labels[i] as f64 * labels[j] as f64 * dot(&aug[i], &aug[j]);
        }
    }
    // Frobenius norm bounds the largest eigenvalue.
    let lip = q.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
    let step = 1.0 / lip;
    let mut alpha = vec![0.0; n];
    for _ in 0..iters {
        let grad: Vec<f64> = (0..n).map(|i| dot(&q[i], &alpha) - 1.0).collect();
        for i in 0..n {
            alpha[i] = (alpha[i] - step * grad[i]).clamp(0.0, c);
        }
    }
    let dim = samples[0].len();
    let mut w = vec![0.0; dim + 1];
    for i in 0..n {
        for d in 0..=dim {
            w[d] += alpha[i] * labels[i] as f64 * aug[i][d];
        }
    }
    let bias = w.pop().unwrap();
    (w, bias)
}

/// `1/2 (|w|^2 + b^2) + C * sum max(0, 1 - y (w.x + b))`.
pub fn primal(w: &[f64], b: f64, samples: &[Vec<f64>], labels: &[i8], c: f64) -> f64 {
    let reg = 0.5 * (dot(w, w) + b * b);
    let hinge: f64 = samples
        .iter()
        .zip(labels)
        .map(|(x, &y)| (1.0 - y as f64 * (dot(w, x) + b)).max(0.0))
        .sum();
    reg + c * hinge
}

/// Two Gaussian blobs in the plane separated by a clear margin.
pub fn separable_2d(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<i8>) {
    let mut r = rng(seed);
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for i in 0..n {
        let y: i8 = if i % 2 == 0 { 1 } else { -1 };
        let cx = 2.5 * y as f64;
        xs.push(vec![
            cx + r.random_range(-1.0..1.0),
            0.5 * cx + r.random_range(-1.0..1.0),
        ]);
        ys.push(y);
    }
    (xs, ys)
}

/// Histogram oracle: loops over classes first, bins by linear search.
pub fn naive_state(pos_conf: &[Vec<f64>], cand_conf: &[Vec<f64>], n_bin: usize) -> Vec<f64> {
    let n = pos_conf[0].len();
    let mut out = Vec::new();
    for c in 0..n {
        let mut hist = vec![0usize; n_bin];
        for p in pos_conf {
            let mut b = n_bin - 1;
            for k in 0..n_bin {
                if p[c] < (k + 1) as f64 / n_bin as f64 {
                    b = k;
                    break;
                }
            }
            hist[b] += 1;
        }
        out.extend(hist.iter().map(|&h| h as f64 / pos_conf.len() as f64));
    }
    for c in cand_conf {
        out.extend_from_slice(c);
    }
    out
}

/// A small synthetic experiment that trains in well under a second.
pub fn small_config(seed: u64, iters: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        seed,
        data: DataSource::Synthetic(SynthConfig {
            n_classes: 3,
            dim: 6,
            samples_per_class_source: 30,
            samples_per_class_target: 40,
            ..SynthConfig::default()
        }),
        n_classes: 3,
        k_per_class: 2,
        l: 20,
        ..ExperimentConfig::default()
    };
    cfg.env.n_cand = 5;
    cfg.env.episode_length = 10;
    cfg.agent.total_iters = iters;
    cfg.agent.eps_decay_iters = iters / 2;
    cfg.agent.advantage_hidden = vec![16, 16];
    cfg
}

pub fn tiny_agent() -> AgentConfig {
    AgentConfig {
        advantage_hidden: vec![8, 8],
        ..AgentConfig::default()
    }
}

pub fn random_transition(r: &mut impl Rng, dim: usize, n_actions: usize) -> Transition {
    let mut v = || {
        (0..dim)
            .map(|_| r.random_range(-1.0..1.0))
            .collect::<Vec<f64>>()
    };
    let state = v();
    let next_state = v();
    Transition {
        state,
        next_state,
        action: r.random_range(0..n_actions),
        reward: r.random_range(-0.2..0.2),
        done: r.random_bool(0.2),
    }
}

/// `|a - b| / max(|a|, |b|, 1e-6)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Every weight and bias uniform in [-1, 1]. Zero biases would put ReLU
/// units exactly on their kink whenever the layer below is fully inactive.
pub fn random_params(arch: &Architecture, r: &mut impl Rng) -> DuelingNetParams {
    DuelingNetParams {
        arch: arch.clone(),
        data: (0..arch.num_params)
            .map(|_| r.random_range(-1.0..1.0))
            .collect(),
    }
}

/// Largest relative error between backprop and central differences
/// (h = 1e-5) over `n` random transitions on a tiny network.
pub fn max_gradient_error(n: u64, seed: u64) -> f64 {
    let cfg = tiny_agent();
    let arch = cfg.architecture(6, 3);
    let mut r = rng(seed);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let online = random_params(&arch, &mut r);
        let target = random_params(&arch, &mut r);
        let t = random_transition(&mut r, 6, 3);
        let (_, grad) = loss_and_gradient(&online, &target, &[&t], &cfg).unwrap();
        let mut probe = online.clone();
        for (i, &g) in grad.iter().enumerate() {
            let w = online.data[i];
            probe.data[i] = w + h;
            let up = loss_and_gradient(&probe, &target, &[&t], &cfg).unwrap().0;
            probe.data[i] = w - h;
            let down = loss_and_gradient(&probe, &target, &[&t], &cfg).unwrap().0;
            probe.data[i] = w;
            worst = worst.max(rel_err(g, (up - down) / (2.0 * h)));
        }
    }
    worst
}

/// Largest `|mean(pre_q) - V|` over `n` random networks and states.
pub fn max_dueling_gap(n: u64, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for k in 0..n {
        let arch = tiny_agent().architecture(r.random_range(2..10), r.random_range(2..8));
        let p = init_params(&arch, seed.wrapping_mul(1_000_003) + k).unwrap();
        let s: Vec<f64> = (0..arch.state_dim)
            .map(|_| r.random_range(-3.0..3.0))
            .collect();
        let pass = p.forward_pass(&s).unwrap();
        let mean = pass.pre_q.iter().sum::<f64>() / pass.pre_q.len() as f64;
        worst = worst.max((mean - pass.value).abs());
    }
    worst
}
