//! Synthetic corpora with controlled clique structure and well-calibrated
//! scores.
//!
//! Same-speaker pair scores are drawn from Normal(+σ²/2, σ²) and
//! different-speaker from Normal(−σ²/2, σ²): the unique equal-variance
//! Gaussian pair whose log-density ratio equals the score itself, so the
//! generated scores are true LLRs by construction. The analytic EER of this
//! model is Φ(−σ/2).

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::ContinuousCDF;

use crate::calibration::TrialSet;
use crate::corpus::{
    Conversation, ConversationLabelling, ReferenceAssignment, ScoreMatrix, SideId, SidePair,
    SpeakerId, SpeakerPair,
};
use crate::error::{Error, Result};

/// How conversations connect the speakers of one clique.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Topology {
    /// Speaker 0 talks in every conversation; partners cycle.
    Star,
    /// A random spanning tree plus random extra pairings.
    RandomPairing,
}

/// A batch of structurally identical cliques.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CliqueTemplate {
    pub n_speakers: usize,
    pub n_conversations: usize,
    pub count: usize,
}

/// Full description of a synthetic corpus; identical specs generate
/// bit-identical corpora.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub seed: u64,
    /// Standard deviation of the score distributions in nats.
    pub sigma: f64,
    pub topology: Topology,
    pub templates: Vec<CliqueTemplate>,
}

/// A generated corpus: labelling, full score matrix, and ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub labelling: ConversationLabelling,
    pub scores: ScoreMatrix,
    pub reference: ReferenceAssignment,
}

fn validate(spec: &GeneratorSpec) -> Result<()> {
    if !(spec.sigma.is_finite() && spec.sigma > 0.0) {
        return Err(Error::Domain(format!(
            "generator sigma must be positive, got {}",
            spec.sigma
        )));
    }
    for t in &spec.templates {
        if t.n_speakers < 2 {
            return Err(Error::Domain(format!(
                "template needs at least 2 speakers, got {}",
                t.n_speakers
            )));
        }
        if t.n_conversations < 1 {
            return Err(Error::Domain("template needs at least 1 conversation".into()));
        }
        if t.n_conversations < t.n_speakers - 1 {
            return Err(Error::Domain(format!(
                "{} conversations cannot connect {} speakers",
                t.n_conversations, t.n_speakers
            )));
        }
    }
    Ok(())
}

/// Random connected multigraph without self-loops: a random recursive tree
/// over the speakers plus uniform extra edges.
fn random_pairing(rng: &mut ChaCha20Rng, n_speakers: usize, n_conversations: usize) -> Vec<(usize, usize)> {
    let mut edges = Vec::with_capacity(n_conversations);
    for node in 1..n_speakers {
        edges.push((rng.random_range(0..node), node));
    }
    while edges.len() < n_conversations {
        let u = rng.random_range(0..n_speakers);
        let mut v = rng.random_range(0..n_speakers - 1);
        if v >= u {
            v += 1;
        }
        edges.push((u, v));
    }
    edges.truncate(n_conversations);
    edges
}

/// Generates a corpus: clique structure per the templates, a uniformly drawn
/// reference assignment, and a full score matrix over every side pair.
pub fn generate(spec: &GeneratorSpec) -> Result<SyntheticCorpus> {
    validate(spec)?;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);

    let mut conversations = Vec::new();
    let mut conv_counter = 0usize;
    let mut speaker_counter = 0usize;
    for template in &spec.templates {
        for _ in 0..template.count {
            let speakers: Vec<SpeakerId> = (0..template.n_speakers)
                .map(|_| {
                    speaker_counter += 1;
                    SpeakerId::new(format!("s{speaker_counter:06}"))
                })
                .collect();
            let edges = match spec.topology {
                Topology::Star => (0..template.n_conversations)
                    .map(|j| (0, 1 + j % (template.n_speakers - 1)))
                    .collect(),
                Topology::RandomPairing => {
                    random_pairing(&mut rng, template.n_speakers, template.n_conversations)
                }
            };
            for (u, v) in edges {
                conv_counter += 1;
                let conv_id = format!("c{conv_counter:06}");
                let pair = SpeakerPair::new(speakers[u].clone(), speakers[v].clone())
                    .expect("template speakers are distinct");
                conversations.push(
                    Conversation::new(
                        &conv_id,
                        SideId::new(format!("{conv_id}_l")),
                        SideId::new(format!("{conv_id}_r")),
                        pair,
                    )
                    .expect("generated sides are distinct"),
                );
            }
        }
    }
    let labelling = ConversationLabelling::new(conversations)?;

    let mut by_conv = BTreeMap::new();
    for conv in labelling.conversations() {
        let speaker = if rng.random_bool(0.5) {
            conv.speakers().first()
        } else {
            conv.speakers().second()
        };
        by_conv.insert(conv.id().to_string(), speaker.clone());
    }
    let reference = ReferenceAssignment::new(by_conv);
    let side_speakers = reference.side_speakers(&labelling)?;

    let mu = spec.sigma * spec.sigma / 2.0;
    let same = Normal::new(mu, spec.sigma).expect("valid normal");
    let diff = Normal::new(-mu, spec.sigma).expect("valid normal");
    let sides: Vec<&SideId> = side_speakers.keys().collect();
    let mut scores = ScoreMatrix::new();
    for (i, &x) in sides.iter().enumerate() {
        for &y in &sides[i + 1..] {
            let value = if side_speakers[x] == side_speakers[y] {
                same.sample(&mut rng)
            } else {
                diff.sample(&mut rng)
            };
            scores.insert(SidePair::new(x.clone(), y.clone())?, value)?;
        }
    }

    Ok(SyntheticCorpus {
        labelling,
        scores,
        reference,
    })
}

/// The sigma whose analytic EER Φ(−σ/2) equals `eer`.
pub fn sigma_for_eer(eer: f64) -> Result<f64> {
    if !(eer > 0.0 && eer < 0.5) {
        return Err(Error::Domain(format!(
            "EER must be in (0, 0.5), got {eer}"
        )));
    }
    let standard = statrs::distribution::Normal::new(0.0, 1.0).expect("standard normal");
    Ok(-2.0 * standard.inverse_cdf(eer))
}

/// Analytic EER of the calibrated Gaussian score model.
pub fn analytic_eer(sigma: f64) -> f64 {
    let standard = statrs::distribution::Normal::new(0.0, 1.0).expect("standard normal");
    standard.cdf(-sigma / 2.0)
}

/// Draws trials straight from the calibrated score model, without building a
/// corpus.
pub fn calibrated_trials(sigma: f64, n_per_class: usize, seed: u64) -> Result<TrialSet> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mu = sigma * sigma / 2.0;
    let same = Normal::new(mu, sigma).expect("valid normal");
    let diff = Normal::new(-mu, sigma).expect("valid normal");
    Ok(TrialSet {
        targets: (0..n_per_class).map(|_| same.sample(&mut rng)).collect(),
        nontargets: (0..n_per_class).map(|_| diff.sample(&mut rng)).collect(),
    })
}

/// A spec reproducing the complexity histogram of the paper's test corpus:
/// 8 cliques of one conversation, 61 three-speaker plus 4 two-speaker
/// cliques of two conversations, then 13/26/9/5 star cliques of 3..6
/// conversations. Sigma is set for a 7 % EER.
pub fn cgn_shape() -> GeneratorSpec {
    GeneratorSpec {
        seed: 0,
        sigma: sigma_for_eer(0.07).expect("valid EER"),
        topology: Topology::Star,
        templates: vec![
            CliqueTemplate { n_speakers: 2, n_conversations: 1, count: 8 },
            CliqueTemplate { n_speakers: 3, n_conversations: 2, count: 61 },
            CliqueTemplate { n_speakers: 2, n_conversations: 2, count: 4 },
            CliqueTemplate { n_speakers: 4, n_conversations: 3, count: 13 },
            CliqueTemplate { n_speakers: 5, n_conversations: 4, count: 26 },
            CliqueTemplate { n_speakers: 5, n_conversations: 5, count: 9 },
            CliqueTemplate { n_speakers: 5, n_conversations: 6, count: 5 },
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clique::{complexity_histogram, decompose};
    use crate::corpus::validate_scores;

    #[test]
    fn generation_is_deterministic() {
        let spec = GeneratorSpec {
            seed: 7,
            sigma: 2.0,
            topology: Topology::RandomPairing,
            templates: vec![CliqueTemplate {
                n_speakers: 4,
                n_conversations: 5,
                count: 3,
            }],
        };
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a, b);

        let other = generate(&GeneratorSpec { seed: 8, ..spec }).unwrap();
        assert_ne!(a.scores, other.scores);
    }

    #[test]
    fn star_template_makes_resolvable_cliques() {
        let spec = GeneratorSpec {
            seed: 1,
            sigma: 2.0,
            topology: Topology::Star,
            templates: vec![CliqueTemplate {
                n_speakers: 3,
                n_conversations: 2,
                count: 100,
            }],
        };
        let corpus = generate(&spec).unwrap();
        let cliques = decompose(&corpus.labelling);
        assert_eq!(cliques.len(), 100);
        for clique in &cliques {
            assert_eq!(clique.complexity(), 4);
            assert!(clique.is_resolvable());
        }
    }

    #[test]
    fn random_pairing_connects_all_speakers() {
        let spec = GeneratorSpec {
            seed: 3,
            sigma: 1.0,
            topology: Topology::RandomPairing,
            templates: vec![CliqueTemplate {
                n_speakers: 5,
                n_conversations: 7,
                count: 20,
            }],
        };
        let corpus = generate(&spec).unwrap();
        let cliques = decompose(&corpus.labelling);
        assert_eq!(cliques.len(), 20);
        for clique in &cliques {
            assert_eq!(clique.speakers().len(), 5);
            assert_eq!(clique.n_conversations(), 7);
        }
    }

    #[test]
    fn score_matrix_is_full() {
        let spec = GeneratorSpec {
            seed: 2,
            sigma: 2.0,
            topology: Topology::Star,
            templates: vec![CliqueTemplate {
                n_speakers: 3,
                n_conversations: 2,
                count: 4,
            }],
        };
        let corpus = generate(&spec).unwrap();
        let n_sides = 2 * corpus.labelling.len();
        assert_eq!(corpus.scores.len(), n_sides * (n_sides - 1) / 2);
        assert!(validate_scores(&corpus.labelling, &corpus.scores).is_complete());
    }

    #[test]
    fn cgn_shape_matches_published_histogram() {
        let corpus = generate(&cgn_shape()).unwrap();
        assert_eq!(corpus.labelling.len(), 356);
        let cliques = decompose(&corpus.labelling);
        let histogram = complexity_histogram(&cliques);
        assert_eq!(
            histogram,
            BTreeMap::from([(2u128, 8usize), (4, 65), (8, 13), (16, 26), (32, 9), (64, 5)])
        );
        let unresolvable = cliques.iter().filter(|c| !c.is_resolvable()).count();
        assert_eq!(unresolvable, 12);
        assert_eq!(cliques.len() - unresolvable, 114);
    }

    #[test]
    fn sigma_and_eer_are_inverse() {
        let sigma = sigma_for_eer(0.07).unwrap();
        assert!((sigma - 2.9516).abs() < 1e-3);
        assert!((analytic_eer(sigma) - 0.07).abs() < 1e-9);
        assert!(sigma_for_eer(0.0).is_err());
        assert!(sigma_for_eer(0.6).is_err());
    }

    #[test]
    fn rejects_invalid_specs() {
        let bad_sigma = GeneratorSpec {
            seed: 0,
            sigma: 0.0,
            topology: Topology::Star,
            templates: vec![],
        };
        assert!(generate(&bad_sigma).is_err());
        let disconnected = GeneratorSpec {
            seed: 0,
            sigma: 1.0,
            topology: Topology::Star,
            templates: vec![CliqueTemplate {
                n_speakers: 5,
                n_conversations: 2,
                count: 1,
            }],
        };
        assert!(generate(&disconnected).is_err());
    }
}
