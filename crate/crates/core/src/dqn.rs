//! Dueling Q-network with sigmoid-bounded outputs, trained online with Adam.
//!
//! The network has two independent fully connected streams over the state:
//!
//! ```text
//! value:      state -> [state_dim] -> 1
//! advantage:  state -> [512] -> [512] -> n_actions
//! Q(s, .) = sigmoid(V(s) + A(s, .) - mean(A(s, .)))
//! ```
//!
//! Hidden layers use rectifiers. All parameters live in one flat buffer so the
//! optimizer, target synchronization and checkpoints can treat them uniformly.
//! The flat order is: value-stream layers, then advantage-stream layers; each
//! layer stores its weights row-major (`out x in`) followed by its biases.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::Transition;
use crate::error::{Error, Result};
use crate::linsvm::argmax;
use crate::vecops::{axpy, dot};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DQNC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayConfig {
    pub capacity: usize,
    pub batch_size: usize,
}

fn default_advantage_hidden() -> Vec<usize> {
    vec![512, 512]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub learning_rate: f64,
    pub gamma: f64,
    pub weight_decay: f64,
    pub sync_period: usize,
    pub eps_start: f64,
    pub eps_end: f64,
    pub eps_decay_iters: usize,
    pub total_iters: usize,
    pub hidden_activation: Activation,
    /// Evaluate the bootstrap target at the online network's argmax.
    pub double_q: bool,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Width of the value stream's hidden layer; the state dimension when unset.
    pub value_hidden: Option<usize>,
    #[serde(default = "default_advantage_hidden")]
    pub advantage_hidden: Vec<usize>,
    /// Off by default: one update per transition, as it arrives.
    pub replay: Option<ReplayConfig>,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            gamma: 0.99,
            weight_decay: 1e-4,
            sync_period: 10,
            eps_start: 1.0,
            eps_end: 0.0,
            eps_decay_iters: 2000,
            total_iters: 20000,
            hidden_activation: Activation::Relu,
            double_q: false,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            value_hidden: None,
            advantage_hidden: default_advantage_hidden(),
            replay: None,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!(
                "gamma {} outside [0, 1]",
                self.gamma
            )));
        }
        if self.sync_period < 1 {
            return Err(Error::Config("sync_period must be at least 1".into()));
        }
        if self.eps_decay_iters > self.total_iters {
            return Err(Error::Config("eps_decay_iters exceeds total_iters".into()));
        }
        if self.learning_rate.is_nan()
            || self.learning_rate <= 0.0
            || self.weight_decay.is_nan()
            || self.weight_decay < 0.0
        {
            return Err(Error::Config(
                "learning_rate must be positive and weight_decay nonnegative".into(),
            ));
        }
        for e in [self.eps_start, self.eps_end] {
            if !(0.0..=1.0).contains(&e) {
                return Err(Error::Config(format!("epsilon {e} outside [0, 1]")));
            }
        }
        if self.advantage_hidden.contains(&0) || self.value_hidden == Some(0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        if let Some(r) = self.replay {
            if r.capacity == 0 || r.batch_size == 0 {
                return Err(Error::Config(
                    "replay capacity and batch size must be positive".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn architecture(&self, state_dim: usize, n_actions: usize) -> Architecture {
        Architecture::new(
            state_dim,
            n_actions,
            &[self.value_hidden.unwrap_or(state_dim)],
            &self.advantage_hidden,
        )
    }
}

/// Linear schedule from `eps_start` to `eps_end` over `eps_decay_iters`.
pub fn epsilon_at(cfg: &AgentConfig, iteration: usize) -> f64 {
    let frac = if cfg.eps_decay_iters == 0 {
        1.0
    } else {
        (iteration as f64 / cfg.eps_decay_iters as f64).min(1.0)
    };
    cfg.eps_start + (cfg.eps_end - cfg.eps_start) * frac
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerShape {
    pub n_in: usize,
    pub n_out: usize,
    pub offset: usize,
}

impl LayerShape {
    fn weights(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.n_in * self.n_out
    }

    fn biases(&self) -> std::ops::Range<usize> {
        let start = self.offset + self.n_in * self.n_out;
        start..start + self.n_out
    }

    fn len(&self) -> usize {
        (self.n_in + 1) * self.n_out
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Architecture {
    pub state_dim: usize,
    pub n_actions: usize,
    pub value_layers: Vec<LayerShape>,
    pub advantage_layers: Vec<LayerShape>,
    pub num_params: usize,
}

impl Architecture {
    pub fn new(
        state_dim: usize,
        n_actions: usize,
        value_hidden: &[usize],
        advantage_hidden: &[usize],
    ) -> Self {
        let mut offset = 0;
        let mut stream = |hidden: &[usize], out: usize| {
            let mut layers = Vec::new();
            let mut n_in = state_dim;
            for &n_out in hidden.iter().chain(std::iter::once(&out)) {
                let l = LayerShape {
                    n_in,
                    n_out,
                    offset,
                };
                offset += l.len();
                layers.push(l);
                n_in = n_out;
            }
            layers
        };
        let value_layers = stream(value_hidden, 1);
        let advantage_layers = stream(advantage_hidden, n_actions);
        Self {
            state_dim,
            n_actions,
            value_layers,
            advantage_layers,
            num_params: offset,
        }
    }

    pub fn value_hidden(&self) -> Vec<usize> {
        hidden_widths(&self.value_layers)
    }

    pub fn advantage_hidden(&self) -> Vec<usize> {
        hidden_widths(&self.advantage_layers)
    }

    fn layers(&self) -> impl Iterator<Item = &LayerShape> {
        self.value_layers.iter().chain(&self.advantage_layers)
    }
}

fn hidden_widths(layers: &[LayerShape]) -> Vec<usize> {
    layers[..layers.len() - 1].iter().map(|l| l.n_out).collect()
}

/// Weights and biases of both streams in one flat buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct DuelingNetParams {
    pub arch: Architecture,
    pub data: Vec<f64>,
}

/// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` weights and zero biases.
pub fn init_params(arch: &Architecture, seed: u64) -> Result<DuelingNetParams> {
    if arch.state_dim == 0 || arch.n_actions == 0 {
        return Err(Error::Config("network dimensions must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = vec![0.0; arch.num_params];
    for l in arch.layers() {
        let bound = 1.0 / (l.n_in as f64).sqrt();
        for w in &mut data[l.weights()] {
            *w = rng.random_range(-bound..bound);
        }
    }
    Ok(DuelingNetParams {
        arch: arch.clone(),
        data,
    })
}

/// Intermediate values of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    pub value: f64,
    pub advantage: Vec<f64>,
    /// `V + A - mean(A)` before the sigmoid.
    pub pre_q: Vec<f64>,
    pub q: Vec<f64>,
    value_acts: Vec<Vec<f64>>,
    advantage_acts: Vec<Vec<f64>>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Runs one stream; returns the post-activation input to every layer plus the output.
fn stream_forward(data: &[f64], layers: &[LayerShape], input: &[f64]) -> Vec<Vec<f64>> {
    let mut acts = Vec::with_capacity(layers.len() + 1);
    acts.push(input.to_vec());
    for (k, l) in layers.iter().enumerate() {
        let x = &acts[k];
        let w = &data[l.weights()];
        let b = &data[l.biases()];
        let last = k + 1 == layers.len();
        let out: Vec<f64> = (0..l.n_out)
            .map(|o| {
                let row = &w[o * l.n_in..(o + 1) * l.n_in];
                let z = dot(row, x) + b[o];
                if last {
                    z
                } else {
                    z.max(0.0)
                }
            })
            .collect();
        acts.push(out);
    }
    acts
}

/// Accumulates parameter gradients of one stream given the gradient at its output.
fn stream_backward(
    data: &[f64],
    layers: &[LayerShape],
    acts: &[Vec<f64>],
    out_grad: Vec<f64>,
    grad: &mut [f64],
) {
    let mut delta = out_grad;
    for (k, l) in layers.iter().enumerate().rev() {
        let x = &acts[k];
        let w = &data[l.weights()];
        let wr = l.weights();
        let br = l.biases();
        {
            let gw = &mut grad[wr];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &mut gw[o * l.n_in..(o + 1) * l.n_in];
                axpy(d, x, row);
            }
        }
        grad[br].iter_mut().zip(&delta).for_each(|(g, d)| *g += d);
        if k == 0 {
            break;
        }
        let mut prev = vec![0.0; l.n_in];
        for (o, &d) in delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let row = &w[o * l.n_in..(o + 1) * l.n_in];
            axpy(d, row, &mut prev);
        }
        // Rectifier derivative, taken from the layer's (post-activation) input.
        prev.iter_mut().zip(x).for_each(|(p, &a)| {
            if a <= 0.0 {
                *p = 0.0
            }
        });
        delta = prev;
    }
}

impl DuelingNetParams {
    pub fn state_dim(&self) -> usize {
        self.arch.state_dim
    }

    pub fn n_actions(&self) -> usize {
        self.arch.n_actions
    }

    pub fn squared_norm(&self) -> f64 {
        dot(&self.data, &self.data)
    }

    pub fn forward_pass(&self, state: &[f64]) -> Result<ForwardPass> {
        if state.len() != self.arch.state_dim {
            return Err(Error::DimMismatch {
                expected: self.arch.state_dim,
                got: state.len(),
            });
        }
        let value_acts = stream_forward(&self.data, &self.arch.value_layers, state);
        let advantage_acts = stream_forward(&self.data, &self.arch.advantage_layers, state);
        let value = value_acts.last().unwrap()[0];
        let advantage = advantage_acts.last().unwrap().clone();
        let mean = advantage.iter().sum::<f64>() / advantage.len() as f64;
        let pre_q: Vec<f64> = advantage.iter().map(|a| value + (a - mean)).collect();
        if !value.is_finite() || pre_q.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite Q-network output".into()));
        }
        let q = pre_q.iter().map(|&z| sigmoid(z)).collect();
        Ok(ForwardPass {
            value,
            advantage,
            pre_q,
            q,
            value_acts,
            advantage_acts,
        })
    }

    /// Bounded Q values for every action.
    pub fn forward(&self, state: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_pass(state)?.q)
    }

    /// Adds the gradient of `dL/dpre_q[action] = g` to `grad`.
    fn backward(&self, pass: &ForwardPass, action: usize, g: f64, grad: &mut [f64]) {
        let n = self.arch.n_actions as f64;
        let adv_grad: Vec<f64> = (0..self.arch.n_actions)
            .map(|j| {
                if j == action {
                    g * (1.0 - 1.0 / n)
                } else {
                    -g / n
                }
            })
            .collect();
        stream_backward(
            &self.data,
            &self.arch.value_layers,
            &pass.value_acts,
            vec![g],
            grad,
        );
        stream_backward(
            &self.data,
            &self.arch.advantage_layers,
            &pass.advantage_acts,
            adv_grad,
            grad,
        );
    }

    pub fn write_params(&self, w: &mut impl Write) -> Result<()> {
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }
}

/// Greedy action, lowest index on ties.
pub fn greedy_action(params: &DuelingNetParams, state: &[f64]) -> Result<usize> {
    Ok(argmax(&params.forward(state)?))
}

/// Uniform random action with probability `epsilon`, greedy otherwise.
pub fn select_action<R: Rng + ?Sized>(
    params: &DuelingNetParams,
    state: &[f64],
    epsilon: f64,
    rng: &mut R,
) -> Result<usize> {
    if rng.random::<f64>() < epsilon {
        Ok(rng.random_range(0..params.n_actions()))
    } else {
        greedy_action(params, state)
    }
}

/// Adam moment estimates for every parameter.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Reused gradient buffer.
    scratch: Vec<f64>,
}

impl PartialEq for AdamState {
    fn eq(&self, other: &Self) -> bool {
        self.step == other.step && self.m == other.m && self.v == other.v
    }
}

impl AdamState {
    pub fn new(num_params: usize) -> Self {
        Self::from_moments(0, vec![0.0; num_params], vec![0.0; num_params])
    }

    pub fn from_moments(step: u64, m: Vec<f64>, v: Vec<f64>) -> Self {
        Self {
            step,
            m,
            v,
            scratch: Vec::new(),
        }
    }

    fn apply(&mut self, params: &mut [f64], grad: &[f64], cfg: &AgentConfig) {
        self.step += 1;
        let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let step = cfg.learning_rate / c1;
        let inv_c2 = 1.0 / c2;
        let eps = cfg.adam_eps;
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = flush(b1 * *m + (1.0 - b1) * g);
            *v = flush(b2 * *v + (1.0 - b2) * g * g);
            *p = flush(*p - step * *m / ((*v * inv_c2).sqrt() + eps));
        }
    }
}

/// Treats subnormal floats as zero on the current thread until dropped.
///
/// Only has an effect on x86_64; elsewhere [`AdamState`] still rounds its own
/// buffers.
pub struct FlushDenormals {
    #[cfg(target_arch = "x86_64")]
    prev: u32,
}

impl FlushDenormals {
    #[cfg(target_arch = "x86_64")]
    pub fn enable() -> Self {
        const FTZ_DAZ: u32 = (1 << 15) | (1 << 6);
        let mut prev: u32 = 0;
        // SAFETY: reads and writes this thread's SSE control register; only
        // the denormal-handling bits change.
        unsafe {
            std::arch::asm!("stmxcsr [{}]", in(reg) &mut prev, options(nostack));
            let next = prev | FTZ_DAZ;
            std::arch::asm!("ldmxcsr [{}]", in(reg) &next, options(nostack, readonly));
        }
        Self { prev }
    }

    #[cfg(not(target_arch = "x86_64"))]
    pub fn enable() -> Self {
        Self {}
    }
}

impl Drop for FlushDenormals {
    fn drop(&mut self) {
        #[cfg(target_arch = "x86_64")]
        // SAFETY: restores the value saved in `enable`.
        unsafe {
            std::arch::asm!("ldmxcsr [{}]", in(reg) &self.prev, options(nostack, readonly));
        }
    }
}

/// Rounds subnormals to zero. Weight decay drives unused parameters toward
/// zero geometrically, and subnormal arithmetic is orders of magnitude slower.
#[inline]
fn flush(x: f64) -> f64 {
    if x.abs() < f64::MIN_POSITIVE {
        0.0
    } else {
        x
    }
}

/// Bootstrap target for one transition.
pub fn td_target(
    online: &DuelingNetParams,
    target: &DuelingNetParams,
    t: &Transition,
    cfg: &AgentConfig,
) -> Result<f64> {
    if t.done || cfg.gamma == 0.0 {
        return Ok(t.reward);
    }
    let q_next = target.forward(&t.next_state)?;
    let bootstrap = if cfg.double_q {
        q_next[greedy_action(online, &t.next_state)?]
    } else {
        q_next.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    };
    Ok(t.reward + cfg.gamma * bootstrap)
}

/// Loss and its gradient with respect to the online parameters, for a batch of
/// transitions: `mean_i (y_i - Q(s_i, a_i))^2 + weight_decay * |w|^2`.
pub fn loss_and_gradient(
    online: &DuelingNetParams,
    target: &DuelingNetParams,
    batch: &[&Transition],
    cfg: &AgentConfig,
) -> Result<(f64, Vec<f64>)> {
    let mut grad = Vec::new();
    let loss = loss_and_gradient_into(online, target, batch, cfg, &mut grad)?;
    Ok((loss, grad))
}

/// As [`loss_and_gradient`], writing the gradient into `grad`.
pub fn loss_and_gradient_into(
    online: &DuelingNetParams,
    target: &DuelingNetParams,
    batch: &[&Transition],
    cfg: &AgentConfig,
    grad: &mut Vec<f64>,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("transition batch".into()));
    }
    let n_actions = online.n_actions();
    if target.arch != online.arch {
        return Err(Error::Consistency(
            "online and target networks differ in shape".into(),
        ));
    }
    let scale = 1.0 / batch.len() as f64;
    grad.clear();
    grad.resize(online.data.len(), 0.0);
    let mut loss = 0.0;
    for t in batch {
        if t.action >= n_actions {
            return Err(Error::ActionOutOfRange {
                action: t.action,
                max: n_actions - 1,
            });
        }
        let y = td_target(online, target, t, cfg)?;
        let pass = online.forward_pass(&t.state)?;
        let q = pass.q[t.action];
        let err = y - q;
        loss += scale * err * err;
        let g = scale * -2.0 * err * q * (1.0 - q);
        online.backward(&pass, t.action, g, grad);
    }
    if cfg.weight_decay > 0.0 {
        loss += cfg.weight_decay * online.squared_norm();
        let k = 2.0 * cfg.weight_decay;
        grad.iter_mut()
            .zip(&online.data)
            .for_each(|(g, w)| *g += k * w);
    }
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite loss or gradient (loss = {loss})"
        )));
    }
    Ok(loss)
}

/// One Adam step on the temporal-difference loss of a single transition.
/// Returns the loss before the step.
pub fn td_update(
    online: &mut DuelingNetParams,
    target: &DuelingNetParams,
    t: &Transition,
    cfg: &AgentConfig,
    adam: &mut AdamState,
) -> Result<f64> {
    td_update_batch(online, target, &[t], cfg, adam)
}

pub fn td_update_batch(
    online: &mut DuelingNetParams,
    target: &DuelingNetParams,
    batch: &[&Transition],
    cfg: &AgentConfig,
    adam: &mut AdamState,
) -> Result<f64> {
    let mut grad = std::mem::take(&mut adam.scratch);
    let loss = loss_and_gradient_into(online, target, batch, cfg, &mut grad);
    if loss.is_ok() {
        adam.apply(&mut online.data, &grad, cfg);
    }
    adam.scratch = grad;
    let loss = loss?;
    Ok(loss)
}

/// Copies the online parameters into the target network.
pub fn sync_target(online: &DuelingNetParams, target: &mut DuelingNetParams) {
    target.arch.clone_from(&online.arch);
    target.data.copy_from_slice(&online.data);
}

/// Fixed-capacity FIFO of transitions.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            items: VecDeque::with_capacity(capacity),
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<&Transition> {
        (0..n)
            .map(|_| &self.items[rng.random_range(0..self.items.len())])
            .collect()
    }
}

/// Online and target networks, optimizer state and the synchronization schedule.
#[derive(Clone, Debug)]
pub struct Agent {
    pub cfg: AgentConfig,
    pub online: DuelingNetParams,
    pub target: DuelingNetParams,
    pub adam: AdamState,
    /// Number of completed updates.
    pub iterations: u64,
    replay: Option<ReplayBuffer>,
}

impl Agent {
    /// Initializes the online network from `seed`; the target starts as a copy.
    pub fn new(state_dim: usize, n_actions: usize, cfg: AgentConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let online = init_params(&cfg.architecture(state_dim, n_actions), seed)?;
        let target = online.clone();
        let adam = AdamState::new(online.data.len());
        let replay = cfg.replay.map(|r| ReplayBuffer::new(r.capacity));
        Ok(Self {
            cfg,
            online,
            target,
            adam,
            iterations: 0,
            replay,
        })
    }

    pub fn act<R: Rng + ?Sized>(&self, state: &[f64], epsilon: f64, rng: &mut R) -> Result<usize> {
        select_action(&self.online, state, epsilon, rng)
    }

    /// Learns from one transition, then synchronizes the target network when
    /// the update count reaches a multiple of the sync period.
    pub fn observe<R: Rng + ?Sized>(&mut self, t: Transition, rng: &mut R) -> Result<f64> {
        let loss = match (&mut self.replay, self.cfg.replay) {
            (Some(buf), Some(rc)) => {
                buf.push(t);
                let batch = buf.sample(rc.batch_size.min(buf.len()), rng);
                td_update_batch(
                    &mut self.online,
                    &self.target,
                    &batch,
                    &self.cfg,
                    &mut self.adam,
                )?
            }
            _ => td_update(
                &mut self.online,
                &self.target,
                &t,
                &self.cfg,
                &mut self.adam,
            )?,
        };
        self.iterations += 1;
        if self.iterations.is_multiple_of(self.cfg.sync_period as u64) {
            sync_target(&self.online, &mut self.target);
        }
        Ok(loss)
    }

    /// Writes the networks' shape, online parameters and Adam state.
    ///
    /// ```text
    /// "DQNC" | version u32 | state_dim u32 | n_actions u32
    /// | n_value_hidden u32 | widths u32... | n_advantage_hidden u32 | widths u32...
    /// | num_params u64 | params f64... | adam_step u64 | m f64... | v f64...
    /// ```
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        let arch = &self.online.arch;
        w.write_all(CHECKPOINT_MAGIC)?;
        let mut header = vec![
            CHECKPOINT_VERSION,
            arch.state_dim as u32,
            arch.n_actions as u32,
        ];
        for widths in [arch.value_hidden(), arch.advantage_hidden()] {
            header.push(widths.len() as u32);
            header.extend(widths.iter().map(|&v| v as u32));
        }
        for v in header {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&(arch.num_params as u64).to_le_bytes())?;
        self.online.write_params(&mut w)?;
        w.write_all(&self.adam.step.to_le_bytes())?;
        for v in self.adam.m.iter().chain(&self.adam.v) {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    /// Restores an agent; the target network is set equal to the online one.
    pub fn load_checkpoint(path: &Path, cfg: AgentConfig) -> Result<Self> {
        let mut bytes = Vec::new();
        BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
        let mut cur = Cursor {
            bytes: &bytes,
            pos: 0,
        };
        if cur.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a DQNC checkpoint".into()));
        }
        let version = cur.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let state_dim = cur.u32()? as usize;
        let n_actions = cur.u32()? as usize;
        let mut widths = || -> Result<Vec<usize>> {
            let n = cur.u32()? as usize;
            (0..n).map(|_| Ok(cur.u32()? as usize)).collect()
        };
        let value_hidden = widths()?;
        let advantage_hidden = widths()?;
        let arch = Architecture::new(state_dim, n_actions, &value_hidden, &advantage_hidden);
        let num_params = cur.u64()? as usize;
        if num_params != arch.num_params {
            return Err(Error::Format("parameter count does not match shape".into()));
        }
        let data = cur.f64s(num_params)?;
        let step = cur.u64()?;
        let m = cur.f64s(num_params)?;
        let v = cur.f64s(num_params)?;
        if cur.pos != bytes.len() {
            return Err(Error::Format("trailing bytes in checkpoint".into()));
        }
        let online = DuelingNetParams { arch, data };
        let cfg = AgentConfig {
            value_hidden: Some(value_hidden[0]),
            advantage_hidden,
            ..cfg
        };
        cfg.validate()?;
        Ok(Self {
            replay: cfg.replay.map(|r| ReplayBuffer::new(r.capacity)),
            cfg,
            target: online.clone(),
            online,
            adam: AdamState::from_moments(step, m, v),
            iterations: step,
        })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Format("truncated checkpoint".into()));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        Ok(self
            .take(n * 8)?
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }
}
