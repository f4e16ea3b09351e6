//! The sample-selection MDP.
//!
//! Each step offers `n_cand` target samples drawn with replacement from the
//! pool. The agent either picks one (it joins the positive set with its
//! source-classifier label and is flagged for the rest of the episode) or
//! passes. The target classifier is retrained from scratch on the positive set
//! and the reward is the change in its reward-set accuracy.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linsvm::{self, train_multiclass, MulticlassModel, SvmParams};
use crate::partition::{LabeledId, PartitionResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub n_cand: usize,
    pub n_bin: usize,
    pub episode_length: usize,
    pub skip_retrain_on_noop: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            n_cand: 20,
            n_bin: 10,
            episode_length: 50,
            skip_retrain_on_noop: true,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_cand < 1 {
            return Err(Error::Config("n_cand must be at least 1".into()));
        }
        if self.n_bin < 2 {
            return Err(Error::Config("n_bin must be at least 2".into()));
        }
        if self.episode_length < 1 {
            return Err(Error::Config("episode_length must be at least 1".into()));
        }
        Ok(())
    }

    pub fn state_dim(&self, n_classes: usize) -> usize {
        n_classes * (self.n_bin + self.n_cand)
    }

    /// One action per candidate plus the no-op.
    pub fn n_actions(&self) -> usize {
        self.n_cand + 1
    }
}

/// Everything an environment reads but never mutates.
#[derive(Clone, Debug)]
pub struct Task {
    pub target: Dataset,
    /// Source-classifier prediction for every target id.
    pub noisy_labels: Vec<usize>,
    pub partition: PartitionResult,
    pub n_classes: usize,
    pub svm: SvmParams,
}

impl Task {
    pub fn new(
        target: Dataset,
        noisy_labels: Vec<usize>,
        partition: PartitionResult,
        n_classes: usize,
        svm: SvmParams,
    ) -> Result<Self> {
        if noisy_labels.len() != target.len() {
            return Err(Error::Consistency(format!(
                "{} noisy labels for {} target samples",
                noisy_labels.len(),
                target.len()
            )));
        }
        if partition.reward.is_empty() {
            return Err(Error::Empty("reward set".into()));
        }
        if partition.initial_positive.is_empty() {
            return Err(Error::Empty("initial positive set".into()));
        }
        Ok(Self {
            target,
            noisy_labels,
            partition,
            n_classes,
            svm,
        })
    }

    /// Trains the target classifier on a labeled subset of the target domain.
    pub fn train_target_classifier(&self, set: &[LabeledId]) -> Result<MulticlassModel> {
        let rows: Vec<&[f64]> = set.iter().map(|p| self.target.row(p.id)).collect();
        let labels: Vec<usize> = set.iter().map(|p| p.label).collect();
        train_multiclass(&rows, &labels, self.n_classes, &self.svm)
    }

    pub fn reward_accuracy(&self, model: &MulticlassModel) -> Result<f64> {
        evaluate_accuracy(model, &self.target, &self.partition.reward)
    }
}

/// Fraction of `set` whose prediction matches its attached label.
pub fn evaluate_accuracy(
    model: &MulticlassModel,
    data: &Dataset,
    set: &[LabeledId],
) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::Empty("reward set".into()));
    }
    let rows: Vec<&[f64]> = set.iter().map(|p| data.row(p.id)).collect();
    let labels: Vec<usize> = set.iter().map(|p| p.label).collect();
    linsvm::accuracy(model, &rows, &labels)
}

/// Flattened state: per-class confidence histograms over the positive set,
/// followed by each candidate's confidence vector.
pub fn build_state(
    c_tar: &MulticlassModel,
    pos: &[&[f64]],
    cand: &[&[f64]],
    n_bin: usize,
) -> Result<Vec<f64>> {
    if pos.is_empty() {
        return Err(Error::Empty("positive set".into()));
    }
    let n = c_tar.n_classes();
    let mut out = vec![0.0; n * n_bin];
    let unit = 1.0 / pos.len() as f64;
    for x in pos {
        for (c, p) in c_tar.confidence(x)?.into_iter().enumerate() {
            let bin = ((p * n_bin as f64) as usize).min(n_bin - 1);
            out[c * n_bin + bin] += unit;
        }
    }
    out.reserve(n * cand.len());
    for x in cand {
        out.extend(c_tar.confidence(x)?);
    }
    Ok(out)
}

/// Draws `n_cand` pool ids uniformly with replacement.
pub fn sample_candidates<R: Rng + ?Sized>(
    pool: &[usize],
    n_cand: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if pool.is_empty() {
        return Err(Error::ExhaustedPool);
    }
    Ok((0..n_cand)
        .map(|_| pool[rng.random_range(0..pool.len())])
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvState {
    pub vector: Vec<f64>,
    pub pos: Vec<LabeledId>,
    pub cand_ids: Vec<usize>,
    pub flagged: BTreeSet<usize>,
    pub step_index: usize,
    pub last_accuracy: f64,
    pub done: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
}

pub struct Environment<'a> {
    task: &'a Task,
    cfg: EnvConfig,
    /// Ids never offered as candidates: reward set plus current positives.
    blocked: Vec<bool>,
    c_tar: MulticlassModel,
    state: EnvState,
}

impl<'a> Environment<'a> {
    /// Creates the environment and performs an initial reset.
    pub fn new<R: Rng + ?Sized>(task: &'a Task, cfg: EnvConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let c_tar = task.train_target_classifier(&task.partition.initial_positive)?;
        let mut env = Self {
            task,
            cfg,
            blocked: vec![false; task.target.len()],
            c_tar,
            state: EnvState {
                vector: Vec::new(),
                pos: Vec::new(),
                cand_ids: Vec::new(),
                flagged: BTreeSet::new(),
                step_index: 0,
                last_accuracy: 0.0,
                done: false,
            },
        };
        env.reset(rng)?;
        Ok(env)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn task(&self) -> &Task {
        self.task
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn classifier(&self) -> &MulticlassModel {
        &self.c_tar
    }

    pub fn state_dim(&self) -> usize {
        self.cfg.state_dim(self.task.n_classes)
    }

    pub fn n_actions(&self) -> usize {
        self.cfg.n_actions()
    }

    /// Target ids currently eligible as candidates.
    pub fn pool(&self) -> Vec<usize> {
        (0..self.blocked.len())
            .filter(|&i| !self.blocked[i])
            .collect()
    }

    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<&EnvState> {
        self.blocked.iter_mut().for_each(|b| *b = false);
        for id in self.task.partition.reward_ids() {
            self.blocked[id] = true;
        }
        self.state.pos = self.task.partition.initial_positive.clone();
        for p in &self.state.pos {
            self.blocked[p.id] = true;
        }
        self.state.flagged.clear();
        self.c_tar = self.task.train_target_classifier(&self.state.pos)?;
        self.state.last_accuracy = self.task.reward_accuracy(&self.c_tar)?;
        self.state.cand_ids = sample_candidates(&self.pool(), self.cfg.n_cand, rng)?;
        self.state.step_index = 0;
        self.state.done = false;
        self.state.vector = self.current_vector()?;
        Ok(&self.state)
    }

    fn current_vector(&self) -> Result<Vec<f64>> {
        let data = &self.task.target;
        let pos: Vec<&[f64]> = self.state.pos.iter().map(|p| data.row(p.id)).collect();
        let cand: Vec<&[f64]> = self.state.cand_ids.iter().map(|&id| data.row(id)).collect();
        build_state(&self.c_tar, &pos, &cand, self.cfg.n_bin)
    }

    pub fn step<R: Rng + ?Sized>(&mut self, action: usize, rng: &mut R) -> Result<Transition> {
        if self.state.done {
            return Err(Error::EpisodeDone);
        }
        if action > self.cfg.n_cand {
            return Err(Error::ActionOutOfRange {
                action,
                max: self.cfg.n_cand,
            });
        }
        let state = std::mem::take(&mut self.state.vector);
        let reward = if action < self.cfg.n_cand {
            let id = self.state.cand_ids[action];
            self.state.pos.push(LabeledId {
                id,
                label: self.task.noisy_labels[id],
            });
            self.state.flagged.insert(id);
            self.blocked[id] = true;
            self.c_tar = self.task.train_target_classifier(&self.state.pos)?;
            let acc = self.task.reward_accuracy(&self.c_tar)?;
            let r = acc - self.state.last_accuracy;
            self.state.last_accuracy = acc;
            r
        } else if self.cfg.skip_retrain_on_noop {
            0.0
        } else {
            self.c_tar = self.task.train_target_classifier(&self.state.pos)?;
            let acc = self.task.reward_accuracy(&self.c_tar)?;
            let r = acc - self.state.last_accuracy;
            self.state.last_accuracy = acc;
            r
        };
        self.state.step_index += 1;
        self.state.done = self.state.step_index >= self.cfg.episode_length;
        match sample_candidates(&self.pool(), self.cfg.n_cand, rng) {
            Ok(c) => self.state.cand_ids = c,
            // Keep the stale candidates for the final observation and end the episode.
            Err(Error::ExhaustedPool) => self.state.done = true,
            Err(e) => return Err(e),
        }
        self.state.vector = self.current_vector()?;
        Ok(Transition {
            state,
            action,
            reward,
            next_state: self.state.vector.clone(),
            done: self.state.done,
        })
    }
}
