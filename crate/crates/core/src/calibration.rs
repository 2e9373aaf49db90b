//! Affine score calibration λ = a·s + b fitted by 2-class cross-entropy
//! (Cllr) minimization, and posterior-level re-calibration of the scale
//! factor over groups of cliques.

use serde::{Deserialize, Serialize};

use crate::clique::Clique;
use crate::corpus::{ConversationLabelling, ReferenceAssignment, ScoreMatrix};
use crate::error::{Error, Result};
use crate::inference::{self, InferenceOptions, PriorSpec};

const LN_2: f64 = std::f64::consts::LN_2;

/// Fitted scale is capped here; hitting the cap means the classes were
/// separable and the logistic fit diverges.
pub const SCALE_CAP: f64 = 1e3;

/// Gradient-norm threshold for fit convergence.
pub const FIT_GRAD_TOLERANCE: f64 = 1e-8;

/// Search bracket for the posterior-level scale refit.
pub const REFIT_BRACKET: (f64, f64) = (0.05, 20.0);

/// Bracket-width tolerance for the scale refit.
pub const REFIT_TOLERANCE: f64 = 1e-4;

/// Order-preserving affine transform turning raw scores into LLRs (nats).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationModel {
    pub a: f64,
    pub b: f64,
}

impl CalibrationModel {
    pub fn identity() -> Self {
        CalibrationModel { a: 1.0, b: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a.is_finite() && self.a > 0.0 && self.b.is_finite()) {
            return Err(Error::Domain(format!(
                "calibration model requires finite a > 0, got a={}, b={}",
                self.a, self.b
            )));
        }
        Ok(())
    }

    pub fn apply(&self, score: f64) -> f64 {
        self.a * score + self.b
    }

    pub fn apply_matrix(&self, matrix: &ScoreMatrix) -> ScoreMatrix {
        matrix.map_scores(|s| self.apply(s))
    }
}

/// Detection trials: same-speaker and different-speaker side-pair scores.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrialSet {
    pub targets: Vec<f64>,
    pub nontargets: Vec<f64>,
}

impl TrialSet {
    pub fn transformed(&self, model: &CalibrationModel) -> TrialSet {
        TrialSet {
            targets: self.targets.iter().map(|&s| model.apply(s)).collect(),
            nontargets: self.nontargets.iter().map(|&s| model.apply(s)).collect(),
        }
    }

    fn check_nonempty(&self) -> Result<()> {
        if self.targets.is_empty() {
            return Err(Error::EmptyClass { class: "target" });
        }
        if self.nontargets.is_empty() {
            return Err(Error::EmptyClass { class: "nontarget" });
        }
        Ok(())
    }
}

/// Labels every scored pair target/nontarget using the reference channel
/// assignment; the full matrix is used, including cross-clique pairs.
pub fn build_trials(
    labelling: &ConversationLabelling,
    scores: &ScoreMatrix,
    reference: &ReferenceAssignment,
) -> Result<TrialSet> {
    let side_speakers = reference.side_speakers(labelling)?;
    let mut trials = TrialSet::default();
    for (pair, score) in scores.iter() {
        let sa = side_speakers.get(pair.a()).ok_or_else(|| {
            Error::Domain(format!("scored side {} not in labelling", pair.a()))
        })?;
        let sb = side_speakers.get(pair.b()).ok_or_else(|| {
            Error::Domain(format!("scored side {} not in labelling", pair.b()))
        })?;
        if sa == sb {
            trials.targets.push(score);
        } else {
            trials.nontargets.push(score);
        }
    }
    Ok(trials)
}

/// Numerically stable log(1 + e^x).
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// 2-class cross entropy of LLR scores in bits:
/// (1/2)·[mean_targets log2(1+e^(−λ)) + mean_nontargets log2(1+e^(λ))].
/// 1.0 for a system that always outputs 0; 0 for perfect separation with
/// confident scores.
pub fn cllr(trials: &TrialSet) -> Result<f64> {
    trials.check_nonempty()?;
    let target_term: f64 = trials.targets.iter().map(|&s| softplus(-s)).sum::<f64>()
        / trials.targets.len() as f64;
    let nontarget_term: f64 = trials.nontargets.iter().map(|&s| softplus(s)).sum::<f64>()
        / trials.nontargets.len() as f64;
    Ok((target_term + nontarget_term) / (2.0 * LN_2))
}

/// Result of the affine Cllr fit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineFit {
    pub model: CalibrationModel,
    /// False when the fit hit the scale cap (separable data) or the
    /// iteration limit.
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm: f64,
    /// Cllr of the raw trials.
    pub cllr_raw: f64,
    /// Cllr after applying the fitted model.
    pub cllr_calibrated: f64,
}

/// Objective, gradient, and Hessian of cllr(a·s + b) in bits.
fn cllr_derivatives(trials: &TrialSet, a: f64, b: f64) -> (f64, [f64; 2], [[f64; 2]; 2]) {
    let mut value = 0.0;
    let mut grad = [0.0; 2];
    let mut hess = [[0.0; 2]; 2];
    let nt = trials.targets.len() as f64;
    let nn = trials.nontargets.len() as f64;
    for &s in &trials.targets {
        let lam = a * s + b;
        value += softplus(-lam) / nt;
        let g = -sigmoid(-lam) / nt;
        grad[0] += g * s;
        grad[1] += g;
        let w = sigmoid(lam) * sigmoid(-lam) / nt;
        hess[0][0] += w * s * s;
        hess[0][1] += w * s;
        hess[1][1] += w;
    }
    for &s in &trials.nontargets {
        let lam = a * s + b;
        value += softplus(lam) / nn;
        let g = sigmoid(lam) / nn;
        grad[0] += g * s;
        grad[1] += g;
        let w = sigmoid(lam) * sigmoid(-lam) / nn;
        hess[0][0] += w * s * s;
        hess[0][1] += w * s;
        hess[1][1] += w;
    }
    let c = 1.0 / (2.0 * LN_2);
    hess[1][0] = hess[0][1];
    (
        value * c,
        [grad[0] * c, grad[1] * c],
        [
            [hess[0][0] * c, hess[0][1] * c],
            [hess[1][0] * c, hess[1][1] * c],
        ],
    )
}

/// Fits (a, b) minimizing the Cllr of the transformed scores by damped
/// Newton iteration. The objective is convex; `a` is kept positive and
/// capped at [`SCALE_CAP`] when the classes are separable.
pub fn fit_affine(trials: &TrialSet) -> Result<AffineFit> {
    trials.check_nonempty()?;
    let first = trials.targets[0];
    let all_equal = trials
        .targets
        .iter()
        .chain(&trials.nontargets)
        .all(|&s| s == first);
    if all_equal {
        return Err(Error::DegenerateTrials);
    }

    let cllr_raw = cllr(trials)?;
    let mut a = 1.0f64;
    let mut b = 0.0f64;
    let mut converged = false;
    let mut iterations = 0;
    let mut grad_norm = f64::INFINITY;
    const MAX_ITERATIONS: usize = 200;

    while iterations < MAX_ITERATIONS {
        let (value, grad, hess) = cllr_derivatives(trials, a, b);
        grad_norm = (grad[0] * grad[0] + grad[1] * grad[1]).sqrt();
        if grad_norm < FIT_GRAD_TOLERANCE {
            converged = true;
            break;
        }
        if a >= SCALE_CAP {
            break;
        }
        // Newton direction with a small ridge against near-singular Hessians.
        let ridge = 1e-12 * (hess[0][0] + hess[1][1]).max(1.0);
        let h00 = hess[0][0] + ridge;
        let h11 = hess[1][1] + ridge;
        let det = h00 * h11 - hess[0][1] * hess[0][1];
        let (mut da, mut db) = if det.abs() > 0.0 && det.is_finite() {
            (
                -(h11 * grad[0] - hess[0][1] * grad[1]) / det,
                -(h00 * grad[1] - hess[0][1] * grad[0]) / det,
            )
        } else {
            (-grad[0], -grad[1])
        };
        // Backtrack until the objective decreases and a stays positive.
        let mut accepted = false;
        for _ in 0..60 {
            let (na, nb) = (a + da, b + db);
            if na > 0.0 {
                let (new_value, _, _) = cllr_derivatives(trials, na, nb);
                if new_value <= value {
                    a = na;
                    b = nb;
                    accepted = true;
                    break;
                }
            }
            da *= 0.5;
            db *= 0.5;
        }
        iterations += 1;
        if !accepted {
            // No descent step representable: treat the current point as
            // final.
            break;
        }
    }

    let model = CalibrationModel {
        a: a.min(SCALE_CAP),
        b,
    };
    let cllr_calibrated = cllr(&trials.transformed(&model))?;
    Ok(AffineFit {
        model,
        converged,
        iterations,
        grad_norm,
        cllr_raw,
        cllr_calibrated,
    })
}

/// Which cliques a scale refit runs over (resolvable cliques only).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RefitGroup {
    All,
    /// Only cliques with this many conversations (complexity 2^M_S).
    NConversations(usize),
}

impl RefitGroup {
    fn matches(&self, clique: &Clique) -> bool {
        match self {
            RefitGroup::All => true,
            RefitGroup::NConversations(m) => clique.n_conversations() == *m,
        }
    }
}

/// Result of the 1-D scale re-calibration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScaleRefit {
    /// The minimizing multiplier a_min/a (1.0 when no improvement exists).
    pub scale: f64,
    /// Group-average cross entropy at scale 1, bits/conversation.
    pub h_before_bits: f64,
    /// Group-average cross entropy at `scale`, bits/conversation.
    pub h_after_bits: f64,
    pub n_cliques: usize,
    pub n_conversations: usize,
}

/// Golden-section minimization of a unimodal function on [lo, hi].
fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        }
    }
    0.5 * (lo + hi)
}

/// Re-fits a global multiplier r on the (already calibrated) scores of the
/// selected resolvable cliques, minimizing the conversation-weighted average
/// cross entropy Σ H_cross / Σ M_S. Configuration log-likelihoods are linear
/// in the score scale, so the objective is evaluated from per-clique
/// log-likelihood vectors computed once; it is convex in r. r = 1 is always
/// a candidate, so the refit never reports a worse cross entropy.
pub fn refit_scale(
    cliques: &[Clique],
    scores: &ScoreMatrix,
    reference: &ReferenceAssignment,
    group: RefitGroup,
    opts: InferenceOptions,
) -> Result<ScaleRefit> {
    let selected: Vec<&Clique> = cliques
        .iter()
        .filter(|c| c.is_resolvable() && group.matches(c))
        .collect();
    if selected.is_empty() {
        return Err(Error::EmptyGroup);
    }
    let mut parts: Vec<(Vec<f64>, usize)> = Vec::with_capacity(selected.len());
    let mut n_conversations = 0usize;
    for clique in &selected {
        let table = inference::posterior(clique, scores, &PriorSpec::Uniform, opts)?;
        let truth = inference::reference_configuration(clique, reference)?;
        n_conversations += clique.n_conversations();
        parts.push((table.log_likelihoods, truth.index() as usize));
    }
    let objective = |r: f64| -> f64 {
        let mut h_total = 0.0;
        for (lls, truth) in &parts {
            let max = lls.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(r * x));
            let lse = max + lls.iter().map(|&x| (r * x - max).exp()).sum::<f64>().ln();
            h_total += (lse - r * lls[*truth]) / LN_2;
        }
        h_total / n_conversations as f64
    };
    let h_before = objective(1.0);
    let r_star = golden_section(&objective, REFIT_BRACKET.0, REFIT_BRACKET.1, REFIT_TOLERANCE);
    let h_star = objective(r_star);
    let (scale, h_after) = if h_before <= h_star {
        (1.0, h_before)
    } else {
        (r_star, h_star)
    };
    Ok(ScaleRefit {
        scale,
        h_before_bits: h_before,
        h_after_bits: h_after,
        n_cliques: selected.len(),
        n_conversations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clique::decompose;
    use crate::corpus::{
        Conversation, ConversationLabelling, SideId, SidePair, SpeakerId, SpeakerPair,
    };
    use std::collections::BTreeMap;

    fn conv(id: &str, l: &str, r: &str, a: &str, b: &str) -> Conversation {
        Conversation::new(
            id,
            SideId::new(l),
            SideId::new(r),
            SpeakerPair::new(SpeakerId::new(a), SpeakerId::new(b)).unwrap(),
        )
        .unwrap()
    }

    fn score(matrix: &mut ScoreMatrix, x: &str, y: &str, value: f64) {
        matrix
            .insert(
                SidePair::new(SideId::new(x), SideId::new(y)).unwrap(),
                value,
            )
            .unwrap();
    }

    #[test]
    fn cllr_reference_points() {
        let zeros = TrialSet {
            targets: vec![0.0; 4],
            nontargets: vec![0.0; 4],
        };
        assert!((cllr(&zeros).unwrap() - 1.0).abs() < 1e-12);

        let separated = TrialSet {
            targets: vec![1e6],
            nontargets: vec![-1e6],
        };
        assert!(cllr(&separated).unwrap() < 1e-12);

        let ln3 = TrialSet {
            targets: vec![3f64.ln()],
            nontargets: vec![-(3f64.ln())],
        };
        assert!((cllr(&ln3).unwrap() - (4f64 / 3.0).log2()).abs() < 1e-12);
    }

    #[test]
    fn cllr_requires_both_classes() {
        let t = TrialSet {
            targets: vec![],
            nontargets: vec![1.0],
        };
        assert!(matches!(cllr(&t), Err(Error::EmptyClass { class: "target" })));
    }

    #[test]
    fn build_trials_labels_by_reference() {
        let labelling = ConversationLabelling::new(vec![
            conv("c1", "1l", "1r", "a", "b"),
            conv("c2", "2l", "2r", "a", "c"),
        ])
        .unwrap();
        let mut scores = ScoreMatrix::new();
        score(&mut scores, "1l", "2l", 4.0); // a vs a: target
        score(&mut scores, "1l", "2r", -4.0); // a vs c: nontarget
        let reference = ReferenceAssignment::new(BTreeMap::from([
            ("c1".to_string(), SpeakerId::new("a")),
            ("c2".to_string(), SpeakerId::new("a")),
        ]));
        let trials = build_trials(&labelling, &scores, &reference).unwrap();
        assert_eq!(trials.targets, vec![4.0]);
        assert_eq!(trials.nontargets, vec![-4.0]);

        let empty = ReferenceAssignment::default();
        assert!(build_trials(&labelling, &scores, &empty).is_err());
    }

    #[test]
    fn fit_rejects_degenerate_trials() {
        let t = TrialSet {
            targets: vec![1.0, 1.0],
            nontargets: vec![1.0],
        };
        assert!(matches!(fit_affine(&t), Err(Error::DegenerateTrials)));
    }

    #[test]
    fn fit_caps_scale_for_separable_trials() {
        let t = TrialSet {
            targets: vec![1.0, 2.0],
            nontargets: vec![-2.0, -1.0],
        };
        let fit = fit_affine(&t).unwrap();
        assert!(!fit.converged);
        assert!(fit.model.a <= SCALE_CAP);
        assert!(fit.model.a >= SCALE_CAP * 0.99);
    }

    #[test]
    fn fit_improves_cllr_on_overlapping_trials() {
        // Deliberately miscalibrated: scores are 3x too large.
        let targets: Vec<f64> = (0..200).map(|i| 3.0 * (0.5 + (i % 40) as f64 * 0.05)).collect();
        let nontargets: Vec<f64> =
            (0..200).map(|i| 3.0 * (-0.5 - (i % 40) as f64 * 0.05)).collect();
        let t = TrialSet {
            targets,
            nontargets,
        };
        let fit = fit_affine(&t).unwrap();
        assert!(fit.converged, "grad_norm={}", fit.grad_norm);
        assert!(fit.model.a > 0.0);
        assert!(fit.cllr_calibrated <= fit.cllr_raw + 1e-12);

        // Convexity spot check: the fit beats random perturbations.
        let base = cllr(&t.transformed(&fit.model)).unwrap();
        for i in 0..100 {
            let da = ((i * 7919) % 200) as f64 / 100.0 - 1.0;
            let db = ((i * 104729) % 200) as f64 / 100.0 - 1.0;
            let a = (fit.model.a + 0.5 * da).max(1e-3);
            let b = fit.model.b + 0.5 * db;
            let perturbed = cllr(&t.transformed(&CalibrationModel { a, b })).unwrap();
            assert!(base <= perturbed + 1e-9);
        }
    }

    fn refit_fixture(factor: f64) -> (Vec<Clique>, ScoreMatrix, ReferenceAssignment) {
        // Three resolvable 2-conversation cliques with overconfident scores.
        let mut convs = Vec::new();
        let mut scores = ScoreMatrix::new();
        let mut reference = BTreeMap::new();
        for (i, (spk_a, spk_b, spk_c)) in
            [("a", "b", "c"), ("d", "e", "f"), ("g", "h", "i")].iter().enumerate()
        {
            let c1 = format!("c{}1", i);
            let c2 = format!("c{}2", i);
            convs.push(conv(&c1, &format!("{c1}_l"), &format!("{c1}_r"), spk_a, spk_b));
            convs.push(conv(&c2, &format!("{c2}_l"), &format!("{c2}_r"), spk_a, spk_c));
            // Truth: target speaker in channel l of both conversations, but
            // one clique has a misleading score so the optimum shifts.
            let strong = if i == 0 { -6.0 } else { 6.0 };
            score(&mut scores, &format!("{c1}_l"), &format!("{c2}_l"), factor * strong);
            score(&mut scores, &format!("{c1}_l"), &format!("{c2}_r"), factor * -1.0);
            score(&mut scores, &format!("{c1}_r"), &format!("{c2}_l"), factor * -1.0);
            score(&mut scores, &format!("{c1}_r"), &format!("{c2}_r"), factor * -1.0);
            reference.insert(c1.clone(), SpeakerId::new(*spk_a));
            reference.insert(c2.clone(), SpeakerId::new(*spk_a));
        }
        let labelling = ConversationLabelling::new(convs).unwrap();
        let cliques = decompose(&labelling);
        (cliques, scores, ReferenceAssignment::new(reference))
    }

    #[test]
    fn refit_never_worsens_and_scales_inversely() {
        let (cliques, scores, reference) = refit_fixture(1.0);
        let refit = refit_scale(
            &cliques,
            &scores,
            &reference,
            RefitGroup::All,
            InferenceOptions::default(),
        )
        .unwrap();
        assert_eq!(refit.n_cliques, 3);
        assert_eq!(refit.n_conversations, 6);
        assert!(refit.h_after_bits <= refit.h_before_bits);
        assert!(refit.scale < 1.0, "overconfident scores should shrink");

        // Doubling every input score halves the fitted multiplier.
        let (cliques2, scores2, reference2) = refit_fixture(2.0);
        let refit2 = refit_scale(
            &cliques2,
            &scores2,
            &reference2,
            RefitGroup::All,
            InferenceOptions::default(),
        )
        .unwrap();
        assert!(
            (refit2.scale - refit.scale / 2.0).abs() < 1e-3,
            "{} vs {}",
            refit2.scale,
            refit.scale / 2.0
        );
    }

    #[test]
    fn refit_returns_unity_on_flat_objective() {
        // Perfectly confident truth: H is ~0 for every scale, so keep r=1.
        let labelling = ConversationLabelling::new(vec![
            conv("c1", "1l", "1r", "a", "b"),
            conv("c2", "2l", "2r", "a", "c"),
        ])
        .unwrap();
        let cliques = decompose(&labelling);
        let mut scores = ScoreMatrix::new();
        score(&mut scores, "1l", "2l", 200.0);
        score(&mut scores, "1l", "2r", -200.0);
        score(&mut scores, "1r", "2l", -200.0);
        score(&mut scores, "1r", "2r", -200.0);
        let reference = ReferenceAssignment::new(BTreeMap::from([
            ("c1".to_string(), SpeakerId::new("a")),
            ("c2".to_string(), SpeakerId::new("a")),
        ]));
        let refit = refit_scale(
            &cliques,
            &scores,
            &reference,
            RefitGroup::All,
            InferenceOptions::default(),
        )
        .unwrap();
        assert_eq!(refit.scale, 1.0);
        assert!(refit.h_before_bits < 1e-12);
        assert_eq!(refit.h_after_bits, refit.h_before_bits);
    }

    #[test]
    fn refit_group_selection() {
        let (cliques, scores, reference) = refit_fixture(1.0);
        assert!(matches!(
            refit_scale(
                &cliques,
                &scores,
                &reference,
                RefitGroup::NConversations(5),
                InferenceOptions::default(),
            ),
            Err(Error::EmptyGroup)
        ));
        let only_two = refit_scale(
            &cliques,
            &scores,
            &reference,
            RefitGroup::NConversations(2),
            InferenceOptions::default(),
        )
        .unwrap();
        assert_eq!(only_two.n_cliques, 3);
    }
}
