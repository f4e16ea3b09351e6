//! Splits the target domain into the annotated reward set, the initial
//! noisily labeled positive set, and the candidate pool, using distances to
//! the domain discriminator's hyperplane as sampling weights.

use std::collections::HashSet;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, GroundTruth};
use crate::error::{Error, Result};
use crate::linsvm::{signed_distance, LinearModel, MulticlassModel};

/// Distances are clamped to at least this before weighting.
pub const DISTANCE_FLOOR: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabeledId {
    pub id: usize,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionResult {
    /// Reward set with true labels.
    pub reward: Vec<LabeledId>,
    /// Initial positive set with source-classifier labels.
    pub initial_positive: Vec<LabeledId>,
    /// Target ids in neither of the above.
    pub pool_ids: Vec<usize>,
    pub seed: u64,
}

impl PartitionResult {
    pub fn reward_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.reward.iter().map(|r| r.id)
    }

    pub fn initial_positive_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.initial_positive.iter().map(|r| r.id)
    }
}

/// Draws `k` distinct indices one at a time, each proportional to the weights
/// still in the pool.
pub fn weighted_sample_without_replacement<R: Rng + ?Sized>(
    weights: &[f64],
    k: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(Error::Data(format!("invalid sampling weight {w}")));
    }
    let available = weights.iter().filter(|&&w| w > 0.0).count();
    if k > available {
        return Err(Error::InsufficientMass {
            requested: k,
            available,
        });
    }
    let mut remaining = weights.to_vec();
    let mut drawn = Vec::with_capacity(k);
    for _ in 0..k {
        let total: f64 = remaining.iter().sum();
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = None;
        for (i, &w) in remaining.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            acc += w;
            pick = Some(i);
            if target < acc {
                break;
            }
        }
        // `pick` falls through to the last positive weight on rounding.
        let i = pick.expect("positive mass remains");
        remaining[i] = 0.0;
        drawn.push(i);
    }
    Ok(drawn)
}

/// Signed distances of every target sample to the hyperplane.
pub fn distances(data: &Dataset, c_dom: &LinearModel) -> Result<Vec<f64>> {
    data.rows().map(|x| signed_distance(c_dom, x)).collect()
}

/// Flips the discriminator if needed so target samples sit on the positive side on average.
pub fn orient_discriminator(c_dom: &LinearModel, target: &Dataset) -> Result<LinearModel> {
    let d = distances(target, c_dom)?;
    let mean = d.iter().sum::<f64>() / d.len().max(1) as f64;
    Ok(if mean < 0.0 {
        c_dom.flipped()
    } else {
        c_dom.clone()
    })
}

/// Draws `k_per_class` annotated samples per true class, weighted by oriented
/// distance (far from the source side is more likely).
pub fn build_reward_set<R: Rng + ?Sized>(
    target: &Dataset,
    c_dom: &LinearModel,
    k_per_class: usize,
    n_classes: usize,
    truth: &GroundTruth,
    rng: &mut R,
) -> Result<Vec<LabeledId>> {
    if truth.len() != target.len() {
        return Err(Error::Consistency(format!(
            "{} true labels for {} target samples",
            truth.len(),
            target.len()
        )));
    }
    let d = distances(target, c_dom)?;
    let mut out = Vec::with_capacity(k_per_class * n_classes);
    for class in 0..n_classes {
        let members: Vec<usize> = target
            .ids()
            .iter()
            .copied()
            .filter(|&id| truth.label(id) == Some(class))
            .collect();
        if members.len() < k_per_class {
            return Err(Error::Budget(format!(
                "class {class} has {} annotated target samples, need {k_per_class}",
                members.len()
            )));
        }
        let weights: Vec<f64> = members
            .iter()
            .map(|&id| d[id].max(DISTANCE_FLOOR))
            .collect();
        for i in weighted_sample_without_replacement(&weights, k_per_class, rng)? {
            out.push(LabeledId {
                id: members[i],
                label: class,
            });
        }
    }
    Ok(out)
}

/// Draws `l` samples outside `excluded`, weighted by inverse distance to the
/// hyperplane, labeled by the source classifier.
pub fn build_initial_positive_set<R: Rng + ?Sized>(
    target: &Dataset,
    c_dom: &LinearModel,
    c_src: &MulticlassModel,
    l: usize,
    excluded: &HashSet<usize>,
    rng: &mut R,
) -> Result<Vec<LabeledId>> {
    let candidates: Vec<usize> = target
        .ids()
        .iter()
        .copied()
        .filter(|id| !excluded.contains(id))
        .collect();
    if candidates.len() < l {
        return Err(Error::Budget(format!(
            "only {} target samples outside the excluded set, need {l}",
            candidates.len()
        )));
    }
    let weights = candidates
        .iter()
        .map(|&id| {
            Ok(1.0
                / signed_distance(c_dom, target.row(id))?
                    .abs()
                    .max(DISTANCE_FLOOR))
        })
        .collect::<Result<Vec<f64>>>()?;
    weighted_sample_without_replacement(&weights, l, rng)?
        .into_iter()
        .map(|i| {
            let id = candidates[i];
            Ok(LabeledId {
                id,
                label: c_src.predict(target.row(id))?,
            })
        })
        .collect()
}

/// Builds the full partition from one seed.
pub fn partition(
    target: &Dataset,
    c_dom: &LinearModel,
    c_src: &MulticlassModel,
    truth: &GroundTruth,
    k_per_class: usize,
    l: usize,
    seed: u64,
) -> Result<PartitionResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_classes = c_src.n_classes();
    let reward = build_reward_set(target, c_dom, k_per_class, n_classes, truth, &mut rng)?;
    let excluded: HashSet<usize> = reward.iter().map(|r| r.id).collect();
    let initial_positive =
        build_initial_positive_set(target, c_dom, c_src, l, &excluded, &mut rng)?;
    let used: HashSet<usize> = excluded
        .iter()
        .copied()
        .chain(initial_positive.iter().map(|p| p.id))
        .collect();
    let pool_ids = target
        .ids()
        .iter()
        .copied()
        .filter(|id| !used.contains(id))
        .collect();
    Ok(PartitionResult {
        reward,
        initial_positive,
        pool_ids,
        seed,
    })
}
