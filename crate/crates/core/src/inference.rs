//! Posterior inference over channel-assignment configurations.
//!
//! A clique of M_S conversations has 2^M_S configurations. Each
//! configuration's log-likelihood (relative to the common all-different
//! reference, which cancels in the posterior) sums, over every speaker
//! occurring k >= 2 times, the averaged same-speaker link term
//! (2/k)·Σ λ(x, y) over that speaker's side pairs. Posteriors are
//! normalized with a max-shifted log-sum-exp.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::clique::{Clique, DEFAULT_COMPLEXITY_CAP};
use crate::corpus::{ReferenceAssignment, ScoreMatrix, SideId, SpeakerId};
use crate::error::{Error, Result};

/// Configurations whose log posterior is within this of the maximum are
/// reported as tied.
pub const TIE_TOLERANCE_NATS: f64 = 1e-9;

/// One assignment of every conversation's speaker pair to its two channels.
///
/// Bit i (of `index`) covers the clique's i-th conversation: 0 places the
/// first-listed speaker of the unordered pair in channel ℓ, 1 swaps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Configuration {
    index: u64,
    n_conversations: usize,
}

impl Configuration {
    pub fn new(index: u64, n_conversations: usize) -> Self {
        debug_assert!(n_conversations < 64 && index < (1u64 << n_conversations));
        Configuration {
            index,
            n_conversations,
        }
    }

    pub fn index(&self) -> u64 {
        self.index
    }

    pub fn n_conversations(&self) -> usize {
        self.n_conversations
    }

    /// True if the pair of conversation `i` is swapped (second-listed
    /// speaker in channel ℓ).
    pub fn bit(&self, i: usize) -> bool {
        debug_assert!(i < self.n_conversations);
        (self.index >> i) & 1 == 1
    }

    /// The global channel flip: every conversation swapped.
    pub fn flip(&self) -> Self {
        let mask = (1u64 << self.n_conversations) - 1;
        Configuration {
            index: self.index ^ mask,
            n_conversations: self.n_conversations,
        }
    }

    /// Channel of the first-listed speaker per conversation, e.g. `"lr"`.
    pub fn bits_string(&self) -> String {
        (0..self.n_conversations)
            .map(|i| if self.bit(i) { 'r' } else { 'l' })
            .collect()
    }
}

/// How to treat required score pairs absent from the matrix.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MissingScorePolicy {
    /// Refuse to run (the default): silent zeros would bias posteriors.
    #[default]
    Error,
    /// Substitute 0 ("no evidence").
    Zero,
}

/// Prior over configurations.
#[derive(Clone, Debug, Default)]
pub enum PriorSpec {
    /// π_i = 2^(−M_S); the prior cancels in the posterior.
    #[default]
    Uniform,
    /// Per-clique non-negative weights, indexed by configuration; cliques
    /// not listed fall back to uniform. Weights are normalized implicitly.
    PerClique(BTreeMap<String, Vec<f64>>),
}

impl PriorSpec {
    /// Log weights for a clique, or `None` for a uniform prior.
    fn log_weights(&self, clique: &Clique) -> Result<Option<Vec<f64>>> {
        let weights = match self {
            PriorSpec::Uniform => return Ok(None),
            PriorSpec::PerClique(map) => match map.get(clique.id()) {
                None => return Ok(None),
                Some(w) => w,
            },
        };
        let expected = 1usize << clique.n_conversations();
        if weights.len() != expected {
            return Err(Error::Domain(format!(
                "prior for clique {} has {} weights, expected {expected}",
                clique.id(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Domain(format!(
                "prior for clique {} has negative or non-finite weights",
                clique.id()
            )));
        }
        if weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Domain(format!(
                "prior for clique {} has zero total mass",
                clique.id()
            )));
        }
        Ok(Some(weights.iter().map(|w| w.ln()).collect()))
    }
}

/// Knobs for posterior computation.
#[derive(Clone, Copy, Debug)]
pub struct InferenceOptions {
    pub missing: MissingScorePolicy,
    pub complexity_cap: usize,
}

impl Default for InferenceOptions {
    fn default() -> Self {
        InferenceOptions {
            missing: MissingScorePolicy::Error,
            complexity_cap: DEFAULT_COMPLEXITY_CAP,
        }
    }
}

/// Per-clique posterior over all configurations.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorTable {
    pub clique_id: String,
    pub n_conversations: usize,
    /// Relative log-likelihoods in nats (common reference term omitted).
    pub log_likelihoods: Vec<f64>,
    /// Normalized posterior probabilities, summing to 1.
    pub posteriors: Vec<f64>,
    /// Argmax of the posterior; smallest index on exact ties.
    pub map_index: u64,
    /// All indices within [`TIE_TOLERANCE_NATS`] of the maximum log posterior.
    pub tie_group: Vec<u64>,
}

impl PosteriorTable {
    pub fn len(&self) -> usize {
        self.posteriors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.posteriors.is_empty()
    }

    pub fn configuration(&self, index: u64) -> Configuration {
        Configuration::new(index, self.n_conversations)
    }

    pub fn posterior_of(&self, config: Configuration) -> Option<f64> {
        if config.n_conversations() != self.n_conversations {
            return None;
        }
        self.posteriors.get(config.index() as usize).copied()
    }
}

/// All 2^M_S configurations of a clique in index order.
pub fn enumerate(clique: &Clique, complexity_cap: usize) -> Result<Vec<Configuration>> {
    let m = clique.n_conversations();
    if m > complexity_cap {
        return Err(Error::ComplexityCap {
            clique_id: clique.id().to_string(),
            m_s: m,
            cap: complexity_cap,
        });
    }
    Ok((0..1u64 << m).map(|i| Configuration::new(i, m)).collect())
}

/// Side positions per speaker under a configuration, in sorted speaker
/// order; positions are 2i (channel ℓ) and 2i+1 (channel r) of
/// conversation i, listed in conversation order.
fn speaker_positions(clique: &Clique, config: Configuration) -> Vec<(SpeakerId, Vec<usize>)> {
    let mut by_speaker: BTreeMap<&SpeakerId, Vec<usize>> = BTreeMap::new();
    for (i, conv) in clique.conversations().iter().enumerate() {
        let (in_l, in_r) = if config.bit(i) {
            (conv.speakers().second(), conv.speakers().first())
        } else {
            (conv.speakers().first(), conv.speakers().second())
        };
        by_speaker.entry(in_l).or_default().push(2 * i);
        by_speaker.entry(in_r).or_default().push(2 * i + 1);
    }
    by_speaker
        .into_iter()
        .map(|(s, p)| (s.clone(), p))
        .collect()
}

/// The side each speaker occupies in every conversation under `config`.
pub fn side_assignment(
    clique: &Clique,
    config: Configuration,
) -> BTreeMap<SpeakerId, Vec<SideId>> {
    speaker_positions(clique, config)
        .into_iter()
        .map(|(speaker, positions)| {
            let sides = positions.iter().map(|&p| position_side(clique, p)).collect();
            (speaker, sides)
        })
        .collect()
}

fn position_side(clique: &Clique, position: usize) -> SideId {
    let conv = &clique.conversations()[position / 2];
    if position % 2 == 0 {
        conv.side_l().clone()
    } else {
        conv.side_r().clone()
    }
}

/// Shared scoring rule: for every speaker occurring k >= 2 times, add
/// (2/k)·Σ λ over the speaker's side pairs (k−1 effective link
/// contributions). Speakers occurring once contribute nothing.
fn accumulate_ll(
    clique: &Clique,
    config: Configuration,
    mut lambda: impl FnMut(usize, usize) -> Result<f64>,
) -> Result<f64> {
    let mut total = 0.0;
    for (_, positions) in speaker_positions(clique, config) {
        let k = positions.len();
        if k < 2 {
            continue;
        }
        let mut sum = 0.0;
        for (i, &x) in positions.iter().enumerate() {
            for &y in &positions[i + 1..] {
                sum += lambda(x, y)?;
            }
        }
        total += (2.0 / k as f64) * sum;
    }
    Ok(total)
}

/// Relative log-likelihood of one configuration in nats.
pub fn config_log_likelihood(
    clique: &Clique,
    config: Configuration,
    scores: &ScoreMatrix,
    missing: MissingScorePolicy,
) -> Result<f64> {
    accumulate_ll(clique, config, |x, y| {
        let sx = position_side(clique, x);
        let sy = position_side(clique, y);
        match scores.score(&sx, &sy) {
            Some(s) => Ok(s),
            None => match missing {
                MissingScorePolicy::Zero => Ok(0.0),
                MissingScorePolicy::Error => Err(Error::MissingScores {
                    count: 1,
                    sample: format!("({sx}, {sy})"),
                }),
            },
        }
    })
}

/// Dense per-clique score table indexed by side position.
struct DenseScores {
    n_sides: usize,
    lambda: Vec<f64>,
}

impl DenseScores {
    /// Requires every cross-conversation pair of the clique up front, so a
    /// missing-score refusal does not depend on which configurations would
    /// have consumed the pair.
    fn build(clique: &Clique, scores: &ScoreMatrix, missing: MissingScorePolicy) -> Result<Self> {
        let m = clique.n_conversations();
        let n_sides = 2 * m;
        let mut lambda = vec![0.0; n_sides * n_sides];
        let mut absent: Vec<String> = Vec::new();
        for i in 0..m {
            for j in i + 1..m {
                for pi in [2 * i, 2 * i + 1] {
                    for pj in [2 * j, 2 * j + 1] {
                        let sx = position_side(clique, pi);
                        let sy = position_side(clique, pj);
                        let value = match scores.score(&sx, &sy) {
                            Some(s) => s,
                            None => {
                                absent.push(format!("({sx}, {sy})"));
                                0.0
                            }
                        };
                        lambda[pi * n_sides + pj] = value;
                        lambda[pj * n_sides + pi] = value;
                    }
                }
            }
        }
        if !absent.is_empty() && missing == MissingScorePolicy::Error {
            let sample = absent.iter().take(3).cloned().collect::<Vec<_>>().join(", ");
            return Err(Error::MissingScores {
                count: absent.len(),
                sample,
            });
        }
        Ok(DenseScores { n_sides, lambda })
    }

    fn get(&self, x: usize, y: usize) -> f64 {
        self.lambda[x * self.n_sides + y]
    }
}

/// Posterior over all configurations of one clique.
pub fn posterior(
    clique: &Clique,
    scores: &ScoreMatrix,
    prior: &PriorSpec,
    opts: InferenceOptions,
) -> Result<PosteriorTable> {
    let m = clique.n_conversations();
    if m > opts.complexity_cap {
        return Err(Error::ComplexityCap {
            clique_id: clique.id().to_string(),
            m_s: m,
            cap: opts.complexity_cap,
        });
    }
    let dense = DenseScores::build(clique, scores, opts.missing)?;
    let n = 1usize << m;
    let mut log_likelihoods = Vec::with_capacity(n);
    for index in 0..n as u64 {
        let config = Configuration::new(index, m);
        let ll = accumulate_ll(clique, config, |x, y| Ok(dense.get(x, y)))?;
        log_likelihoods.push(ll);
    }
    let log_prior = prior.log_weights(clique)?;
    let joint: Vec<f64> = match &log_prior {
        Some(lp) => log_likelihoods.iter().zip(lp).map(|(a, b)| a + b).collect(),
        None => log_likelihoods.clone(),
    };
    let (map_index, posteriors, tie_group) = normalize(&joint);
    Ok(PosteriorTable {
        clique_id: clique.id().to_string(),
        n_conversations: m,
        log_likelihoods,
        posteriors,
        map_index,
        tie_group,
    })
}

/// Max-shifted softmax plus MAP and tie extraction from joint log mass.
fn normalize(joint: &[f64]) -> (u64, Vec<f64>, Vec<u64>) {
    debug_assert!(!joint.is_empty());
    let mut map_index = 0usize;
    for (i, &x) in joint.iter().enumerate() {
        if x > joint[map_index] {
            map_index = i;
        }
    }
    let max = joint[map_index];
    let sum: f64 = joint.iter().map(|&x| (x - max).exp()).sum();
    let posteriors: Vec<f64> = joint.iter().map(|&x| (x - max).exp() / sum).collect();
    let tie_group: Vec<u64> = joint
        .iter()
        .enumerate()
        .filter(|&(_, &x)| max - x <= TIE_TOLERANCE_NATS)
        .map(|(i, _)| i as u64)
        .collect();
    (map_index as u64, posteriors, tie_group)
}

/// Independent per-clique posteriors; the joint posterior over the corpus is
/// their product and is never materialized. Cliques are processed in
/// parallel with order-stable output.
pub fn factorized_posterior(
    cliques: &[Clique],
    scores: &ScoreMatrix,
    prior: &PriorSpec,
    opts: InferenceOptions,
) -> Result<Vec<PosteriorTable>> {
    let results: Vec<Result<PosteriorTable>> = cliques
        .par_iter()
        .map(|clique| posterior(clique, scores, prior, opts))
        .collect();
    results.into_iter().collect()
}

/// The true configuration of a clique under a reference assignment.
pub fn reference_configuration(
    clique: &Clique,
    reference: &ReferenceAssignment,
) -> Result<Configuration> {
    let mut index = 0u64;
    for (i, conv) in clique.conversations().iter().enumerate() {
        let in_l = reference
            .speaker_in_l(conv.id())
            .ok_or_else(|| Error::Reference {
                conv_id: conv.id().to_string(),
                rule: "not covered by the reference assignment".into(),
            })?;
        if in_l == conv.speakers().second() {
            index |= 1 << i;
        } else if in_l != conv.speakers().first() {
            return Err(Error::Reference {
                conv_id: conv.id().to_string(),
                rule: format!("reference speaker {in_l} is not one of the labelled pair"),
            });
        }
    }
    Ok(Configuration::new(index, clique.n_conversations()))
}
