//! Evaluation metrics: configuration cross entropy, per-conversation
//! averages, confusion, clique error rate, EER, and the grouped report.

use std::collections::BTreeMap;

use crate::calibration::TrialSet;
use crate::clique::Clique;
use crate::corpus::ReferenceAssignment;
use crate::error::{Error, Result};
use crate::inference::{self, Configuration, PosteriorTable};

const LN_2: f64 = std::f64::consts::LN_2;

/// Cross entropies above this are clamped (and flagged) so that aggregates
/// stay finite while catastrophic miscalibration remains visible.
pub const CROSS_ENTROPY_CLAMP_BITS: f64 = 60.0;

/// −log2 posterior of the true configuration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CrossEntropy {
    pub bits: f64,
    /// True when the posterior underflowed and the value was clamped.
    pub clamped: bool,
}

/// Logarithmic (strictly proper) score of a posterior table against the
/// true configuration.
pub fn cross_entropy(table: &PosteriorTable, truth: Configuration) -> Result<CrossEntropy> {
    if truth.n_conversations() != table.n_conversations
        || truth.index() as usize >= table.len()
    {
        return Err(Error::Domain(format!(
            "configuration {} is not in the posterior table of clique {}",
            truth.index(),
            table.clique_id
        )));
    }
    let p = table.posteriors[truth.index() as usize];
    let bits = -p.log2();
    if bits > CROSS_ENTROPY_CLAMP_BITS || !bits.is_finite() {
        Ok(CrossEntropy {
            bits: CROSS_ENTROPY_CLAMP_BITS,
            clamped: true,
        })
    } else {
        Ok(CrossEntropy {
            bits,
            clamped: false,
        })
    }
}

/// Average number of wrong alternatives for a per-conversation cross entropy
/// of `h_bar` bits: exp(h_bar·ln2) − 1. One bit of residual uncertainty per
/// conversation gives exactly one wrong alternative.
pub fn confusion(h_bar_bits: f64) -> Result<f64> {
    if !(h_bar_bits >= 0.0) {
        return Err(Error::Domain(format!(
            "confusion requires a non-negative entropy, got {h_bar_bits}"
        )));
    }
    Ok((h_bar_bits * LN_2).exp() - 1.0)
}

/// Per-clique evaluation record.
#[derive(Clone, Debug, PartialEq)]
pub struct CliqueEvaluation {
    pub clique_id: String,
    pub m_s: usize,
    pub resolvable: bool,
    pub h_cross_bits: f64,
    pub clamped: bool,
    /// MAP configuration equals the truth.
    pub map_correct: bool,
    /// More than one configuration ties for the maximum posterior.
    pub tie_ambiguous: bool,
}

impl CliqueEvaluation {
    /// A clique counts as an error when the MAP is wrong, or when the MAP is
    /// ambiguous (the tie group contains more than the truth alone).
    pub fn counted_error(&self) -> bool {
        !self.map_correct || self.tie_ambiguous
    }
}

/// Scores one clique's posterior table against the reference assignment.
pub fn evaluate_clique(
    clique: &Clique,
    table: &PosteriorTable,
    reference: &ReferenceAssignment,
) -> Result<CliqueEvaluation> {
    let truth = inference::reference_configuration(clique, reference)?;
    let ce = cross_entropy(table, truth)?;
    Ok(CliqueEvaluation {
        clique_id: clique.id().to_string(),
        m_s: clique.n_conversations(),
        resolvable: clique.is_resolvable(),
        h_cross_bits: ce.bits,
        clamped: ce.clamped,
        map_correct: table.map_index == truth.index(),
        tie_ambiguous: table.tie_group.len() > 1,
    })
}

/// Fraction of cliques whose MAP configuration is not (unambiguously) the
/// true one.
pub fn clique_error(evals: &[CliqueEvaluation]) -> Result<f64> {
    if evals.is_empty() {
        return Err(Error::Domain("clique error over an empty list".into()));
    }
    let errors = evals.iter().filter(|e| e.counted_error()).count();
    Ok(errors as f64 / evals.len() as f64)
}

/// Row label in the grouped report.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GroupLabel {
    /// Resolvable cliques of one complexity |C| = 2^M_S.
    Complexity(u128),
    /// All resolvable cliques pooled.
    AllResolvable,
    /// All unresolvable cliques pooled; the error rate is not applicable.
    Unresolvable,
}

/// One row of the grouped evaluation report.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupReport {
    pub label: GroupLabel,
    pub n_cliques: usize,
    pub n_conversations: usize,
    /// Conversation-weighted cross entropy Σ H_cross / Σ M_S in bits.
    pub h_bar_bits: f64,
    pub confusion: f64,
    /// None for the unresolvable row.
    pub error_rate: Option<f64>,
}

/// Which cliques the report covers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ReportFilter {
    #[default]
    All,
    ResolvableOnly,
    UnresolvableOnly,
}

fn group_row(label: GroupLabel, members: &[&CliqueEvaluation]) -> GroupReport {
    let n_conversations: usize = members.iter().map(|e| e.m_s).sum();
    let h_sum: f64 = members.iter().map(|e| e.h_cross_bits).sum();
    let h_bar = h_sum / n_conversations as f64;
    let error_rate = match label {
        GroupLabel::Unresolvable => None,
        _ => {
            let errors = members.iter().filter(|e| e.counted_error()).count();
            Some(errors as f64 / members.len() as f64)
        }
    };
    GroupReport {
        label,
        n_cliques: members.len(),
        n_conversations,
        h_bar_bits: h_bar,
        confusion: confusion(h_bar.max(0.0)).expect("non-negative"),
        error_rate,
    }
}

/// Builds the grouped report: one row per complexity over resolvable
/// cliques, an overall resolvable row, and a pooled unresolvable row.
pub fn grouped_report(evals: &[CliqueEvaluation], filter: ReportFilter) -> Vec<GroupReport> {
    let resolvable: Vec<&CliqueEvaluation> = evals.iter().filter(|e| e.resolvable).collect();
    let unresolvable: Vec<&CliqueEvaluation> = evals.iter().filter(|e| !e.resolvable).collect();
    let mut rows = Vec::new();
    if filter != ReportFilter::UnresolvableOnly {
        let mut by_complexity: BTreeMap<u128, Vec<&CliqueEvaluation>> = BTreeMap::new();
        for eval in &resolvable {
            let complexity = 1u128.checked_shl(eval.m_s as u32).unwrap_or(u128::MAX);
            by_complexity.entry(complexity).or_default().push(eval);
        }
        for (complexity, members) in &by_complexity {
            rows.push(group_row(GroupLabel::Complexity(*complexity), members));
        }
        if !resolvable.is_empty() {
            rows.push(group_row(GroupLabel::AllResolvable, &resolvable));
        }
    }
    if filter != ReportFilter::ResolvableOnly && !unresolvable.is_empty() {
        rows.push(group_row(GroupLabel::Unresolvable, &unresolvable));
    }
    rows
}

/// Equal error rate by threshold sweep over the sorted scores with linear
/// interpolation at the miss / false-alarm crossing.
pub fn equal_error_rate(trials: &TrialSet) -> Result<f64> {
    if trials.targets.is_empty() {
        return Err(Error::EmptyClass { class: "target" });
    }
    if trials.nontargets.is_empty() {
        return Err(Error::EmptyClass { class: "nontarget" });
    }
    let mut targets = trials.targets.clone();
    let mut nontargets = trials.nontargets.clone();
    targets.sort_by(f64::total_cmp);
    nontargets.sort_by(f64::total_cmp);
    let mut thresholds: Vec<f64> = targets.iter().chain(&nontargets).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();

    // miss(t) = fraction of targets < t (nondecreasing in t)
    // fa(t)   = fraction of nontargets >= t (nonincreasing in t)
    let miss = |t: f64| targets.partition_point(|&s| s < t) as f64 / targets.len() as f64;
    let fa = |t: f64| {
        (nontargets.len() - nontargets.partition_point(|&s| s < t)) as f64
            / nontargets.len() as f64
    };

    // Sentinels guarantee a sign change of miss − fa.
    let mut prev = (0.0f64, 1.0f64);
    for &t in &thresholds {
        let cur = (miss(t), fa(t));
        if cur.0 >= cur.1 {
            let (m1, f1) = prev;
            let (m2, f2) = cur;
            let denom = (m2 - m1) - (f2 - f1);
            let alpha = if denom.abs() < 1e-300 {
                0.0
            } else {
                ((f1 - m1) / denom).clamp(0.0, 1.0)
            };
            return Ok(m1 + alpha * (m2 - m1));
        }
        prev = cur;
    }
    // miss never reached fa within the scores; crossing sits at the top end.
    Ok(1.0f64.min(prev.1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clique::decompose;
    use crate::corpus::{
        Conversation, ConversationLabelling, ScoreMatrix, SideId, SidePair, SpeakerId,
        SpeakerPair,
    };
    use crate::inference::{posterior, InferenceOptions, PriorSpec};

    fn table(posteriors: Vec<f64>, map_index: u64, ties: Vec<u64>) -> PosteriorTable {
        let n = posteriors.len().trailing_zeros() as usize;
        PosteriorTable {
            clique_id: "t".into(),
            n_conversations: n,
            log_likelihoods: posteriors.iter().map(|p| p.max(1e-300).ln()).collect(),
            posteriors,
            map_index,
            tie_group: ties,
        }
    }

    #[test]
    fn cross_entropy_reference_points() {
        let uniform = table(vec![0.25; 4], 0, vec![0, 1, 2, 3]);
        let ce = cross_entropy(&uniform, Configuration::new(1, 2)).unwrap();
        assert_eq!(ce.bits, 2.0);
        assert!(!ce.clamped);

        let skewed = table(vec![0.5, 1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0], 0, vec![0]);
        let ce = cross_entropy(&skewed, Configuration::new(0, 2)).unwrap();
        assert!((ce.bits - 1.0).abs() < 1e-12);

        let sure = table(vec![1.0, 0.0, 0.0, 0.0], 0, vec![0]);
        let ce = cross_entropy(&sure, Configuration::new(0, 2)).unwrap();
        assert_eq!(ce.bits, 0.0);

        let ce = cross_entropy(&sure, Configuration::new(1, 2)).unwrap();
        assert_eq!(ce.bits, CROSS_ENTROPY_CLAMP_BITS);
        assert!(ce.clamped);

        assert!(cross_entropy(&sure, Configuration::new(1, 1)).is_err());
    }

    #[test]
    fn confusion_reference_points() {
        assert!((confusion(1.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((confusion(0.205).unwrap() - 0.153).abs() < 5e-4);
        assert_eq!(confusion(0.0).unwrap(), 0.0);
        assert!(confusion(-0.1).is_err());
    }

    fn eval(id: &str, m_s: usize, resolvable: bool, h: f64, correct: bool, tie: bool) -> CliqueEvaluation {
        CliqueEvaluation {
            clique_id: id.into(),
            m_s,
            resolvable,
            h_cross_bits: h,
            clamped: false,
            map_correct: correct,
            tie_ambiguous: tie,
        }
    }

    #[test]
    fn clique_error_counts_ties_as_errors() {
        let evals = vec![
            eval("a", 2, true, 0.1, true, false),
            eval("b", 2, true, 0.4, false, false),
        ];
        assert!((clique_error(&evals).unwrap() - 0.5).abs() < 1e-12);

        let all_correct = vec![eval("a", 2, true, 0.0, true, false)];
        assert_eq!(clique_error(&all_correct).unwrap(), 0.0);

        // Full tie (uniform posterior): counted as an error even though the
        // smallest-index MAP happens to equal the truth.
        let tied = vec![eval("a", 2, true, 2.0, true, true)];
        assert_eq!(clique_error(&tied).unwrap(), 1.0);

        assert!(clique_error(&[]).is_err());
    }

    #[test]
    fn grouped_report_shapes() {
        let evals = vec![
            eval("a", 2, true, 0.4, true, false),
            eval("b", 2, true, 0.0, true, false),
            eval("c", 1, false, 1.0, true, true),
        ];
        let rows = grouped_report(&evals, ReportFilter::All);
        assert_eq!(rows.len(), 3);
        let four = &rows[0];
        assert_eq!(four.label, GroupLabel::Complexity(4));
        assert_eq!(four.n_cliques, 2);
        // (0.4 + 0.0) / (2 + 2) = 0.1 bits per conversation.
        assert!((four.h_bar_bits - 0.1).abs() < 1e-12);
        assert_eq!(four.error_rate, Some(0.0));

        let overall = &rows[1];
        assert_eq!(overall.label, GroupLabel::AllResolvable);
        assert_eq!(overall.n_conversations, 4);

        let unresolvable = &rows[2];
        assert_eq!(unresolvable.label, GroupLabel::Unresolvable);
        assert!((unresolvable.h_bar_bits - 1.0).abs() < 1e-12);
        assert!((unresolvable.confusion - 1.0).abs() < 1e-12);
        assert_eq!(unresolvable.error_rate, None);

        let only_unresolvable = grouped_report(&evals, ReportFilter::UnresolvableOnly);
        assert_eq!(only_unresolvable.len(), 1);
        assert_eq!(only_unresolvable[0].label, GroupLabel::Unresolvable);
    }

    #[test]
    fn grouped_report_overall_is_weighted_combination() {
        let evals = vec![
            eval("a", 2, true, 0.4, true, false),
            eval("b", 3, true, 0.9, false, false),
            eval("c", 2, true, 0.2, true, false),
        ];
        let rows = grouped_report(&evals, ReportFilter::ResolvableOnly);
        let overall = rows.last().unwrap();
        assert_eq!(overall.label, GroupLabel::AllResolvable);
        let groups: Vec<&GroupReport> = rows[..rows.len() - 1].iter().collect();
        let h_sum: f64 = groups
            .iter()
            .map(|g| g.h_bar_bits * g.n_conversations as f64)
            .sum();
        let m_sum: usize = groups.iter().map(|g| g.n_conversations).sum();
        assert!((overall.h_bar_bits - h_sum / m_sum as f64).abs() < 1e-12);
    }

    #[test]
    fn uniform_posterior_cross_entropy_is_m_bits() {
        let labelling = ConversationLabelling::new(vec![
            Conversation::new(
                "c1",
                SideId::new("1l"),
                SideId::new("1r"),
                SpeakerPair::new(SpeakerId::new("a"), SpeakerId::new("b")).unwrap(),
            )
            .unwrap(),
            Conversation::new(
                "c2",
                SideId::new("2l"),
                SideId::new("2r"),
                SpeakerPair::new(SpeakerId::new("a"), SpeakerId::new("c")).unwrap(),
            )
            .unwrap(),
        ])
        .unwrap();
        let cliques = decompose(&labelling);
        let mut scores = ScoreMatrix::new();
        for (x, y) in [("1l", "2l"), ("1l", "2r"), ("1r", "2l"), ("1r", "2r")] {
            scores
                .insert(SidePair::new(SideId::new(x), SideId::new(y)).unwrap(), 0.0)
                .unwrap();
        }
        let t = posterior(
            &cliques[0],
            &scores,
            &PriorSpec::Uniform,
            InferenceOptions::default(),
        )
        .unwrap();
        let ce = cross_entropy(&t, Configuration::new(3, 2)).unwrap();
        assert_eq!(ce.bits, 2.0);
    }

    #[test]
    fn eer_reference_points() {
        let separable = TrialSet {
            targets: vec![1.0, 2.0, 3.0],
            nontargets: vec![-3.0, -2.0, -1.0],
        };
        assert_eq!(equal_error_rate(&separable).unwrap(), 0.0);

        let identical = TrialSet {
            targets: vec![-1.0, 1.0],
            nontargets: vec![-1.0, 1.0],
        };
        assert!((equal_error_rate(&identical).unwrap() - 0.5).abs() < 1e-12);

        let empty = TrialSet {
            targets: vec![],
            nontargets: vec![0.0],
        };
        assert!(equal_error_rate(&empty).is_err());
    }

    #[test]
    fn eer_invariant_under_increasing_affine_transforms() {
        let trials = TrialSet {
            targets: vec![0.3, 1.2, -0.4, 2.0, 0.9, 0.1],
            nontargets: vec![-1.0, -0.2, 0.5, -2.0, 0.0, -0.7],
        };
        let base = equal_error_rate(&trials).unwrap();
        for (a, b) in [(2.0, 0.0), (0.5, 3.0), (10.0, -5.0)] {
            let model = crate::calibration::CalibrationModel { a, b };
            let transformed = trials.transformed(&model);
            let eer = equal_error_rate(&transformed).unwrap();
            assert!((eer - base).abs() < 1e-12, "a={a}, b={b}");
        }
    }
}
