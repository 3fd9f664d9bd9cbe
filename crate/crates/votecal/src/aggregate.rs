//! Answer-selection strategies: majority vote, best-of-n, vanilla and
//! calibrated weighted votes, the pass@n existence bound, the per-question
//! optimal aggregator, and the brute-force log-likelihood oracle it is
//! checked against.
//!
//! Every argmax over answers breaks ties toward the lexicographically
//! smallest canonical token.

use crate::calibrate::llm_signal_term;
use crate::data::{
    m_eff, tally, tally_with, unique_answers, AnswerTally, QuestionInstance, ScoredResponse,
    WeightFunction,
};
use crate::density::{fit_kde, log_density_ratio};
use crate::error::{Error, Result};

/// Reliability estimated from a single question's labels is clamped into
/// `[OPTIMAL_Q_EPS, 1 - OPTIMAL_Q_EPS]`; empirical per-question accuracy
/// can be exactly 0 or 1.
pub const OPTIMAL_Q_EPS: f64 = 1e-3;

/// Outcome of one selection strategy on one question.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationResult {
    pub chosen: String,
    pub tally: AnswerTally,
    pub method: String,
}

/// The most frequent answer, ignoring scores.
pub fn majority_vote(instance: &QuestionInstance) -> AggregationResult {
    let tally = tally(instance, &WeightFunction::ConstantOne);
    let chosen = tally.top_by_count().expect("L >= 1").0.to_string();
    AggregationResult {
        chosen,
        tally,
        method: "mv".into(),
    }
}

/// The answer of the single highest-scoring response; score ties go to the
/// earliest response.
pub fn best_of_n(instance: &QuestionInstance) -> AggregationResult {
    let mut best: &ScoredResponse = &instance.responses[0];
    for r in &instance.responses[1..] {
        if r.score > best.score {
            best = r;
        }
    }
    AggregationResult {
        chosen: best.answer.clone(),
        tally: tally(instance, &WeightFunction::RawScore),
        method: "bon".into(),
    }
}

/// Weighted vote with the raw score as the weight.
pub fn vanilla_weighted_vote(instance: &QuestionInstance) -> AggregationResult {
    let mut result = weighted_vote(instance, &WeightFunction::RawScore);
    result.method = "vanilla".into();
    result
}

/// Weighted vote under an arbitrary weight function. Negative weight sums
/// compete as-is: an answer whose every supporter carries negative weight
/// can still win when all sums are negative.
pub fn weighted_vote(instance: &QuestionInstance, w: &WeightFunction) -> AggregationResult {
    let tally = tally(instance, w);
    let chosen = tally.top_by_weight().expect("L >= 1").0.to_string();
    AggregationResult {
        chosen,
        tally,
        method: format!("wv:{}", w.kind()),
    }
}

/// Weighted vote with an explicit per-response weight.
pub fn weighted_vote_with<F>(
    instance: &QuestionInstance,
    method: &str,
    weight: F,
) -> AggregationResult
where
    F: Fn(&ScoredResponse) -> f64,
{
    let tally = tally_with(instance, weight);
    let chosen = tally.top_by_weight().expect("L >= 1").0.to_string();
    AggregationResult {
        chosen,
        tally,
        method: method.into(),
    }
}

/// Existence bound: true iff any response matches the gold answer.
pub fn pass_at_n(instance: &QuestionInstance) -> Result<bool> {
    let gold = instance.gold.as_deref().ok_or_else(|| Error::MissingGold {
        question_id: instance.question_id.clone(),
    })?;
    Ok(instance.responses.iter().any(|r| r.answer == gold))
}

/// Per-question optimal aggregation estimated from this instance's own
/// labels: class-conditional KDEs for the score signal and the labeled
/// accuracy for the reliability signal. When one correctness class is
/// unobserved the score term is dropped (a likelihood ratio with an
/// unobserved class is undefined) and only the reliability term remains.
pub fn optimal_aggregate(instance: &QuestionInstance) -> Result<AggregationResult> {
    let mut correct = Vec::new();
    let mut incorrect = Vec::new();
    for r in &instance.responses {
        match r.label {
            Some(true) => correct.push(r.score),
            Some(false) => incorrect.push(r.score),
            None => {
                return Err(Error::MissingLabel {
                    question_id: instance.question_id.clone(),
                })
            }
        }
    }
    let q = (correct.len() as f64 / instance.len() as f64)
        .clamp(OPTIMAL_Q_EPS, 1.0 - OPTIMAL_Q_EPS);
    let llm_term = llm_signal_term(q, m_eff(instance))?;

    let mut result = if correct.is_empty() || incorrect.is_empty() {
        weighted_vote_with(instance, "optimal", |_| llm_term)
    } else {
        let f1 = fit_kde(&correct, None)?;
        let f0 = fit_kde(&incorrect, None)?;
        weighted_vote_with(instance, "optimal", |r| {
            log_density_ratio(&f1, &f0, r.score) + llm_term
        })
    };
    result.method = "optimal".into();
    Ok(result)
}

/// Brute-force scorer over candidate answers, before any constant terms are
/// dropped: for candidate α, every response contributes its log density
/// under the correctness class implied by α, plus the count-weighted
/// consensus terms. Returns the argmax answer under the shared tie rule.
///
/// This is the independent reference the weighted vote is verified against:
/// both must select identical answers when the vote uses
/// `w(p) = log f1(p) - log f0(p) + ln(q·(m_eff-1)/(1-q))`.
pub fn loglik_oracle<F1, F0>(
    instance: &QuestionInstance,
    q_m: f64,
    log_density_correct: F1,
    log_density_incorrect: F0,
) -> Result<String>
where
    F1: Fn(f64) -> f64,
    F0: Fn(f64) -> f64,
{
    if !(q_m > 0.0 && q_m < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "q_m must be inside (0,1), got {q_m}"
        )));
    }
    let m = m_eff(instance) as f64;
    let total = instance.len() as f64;

    let mut candidates: Vec<&str> = unique_answers(instance);
    candidates.sort_unstable();

    let mut best: Option<(&str, f64)> = None;
    for candidate in candidates {
        let mut ll = 0.0;
        let mut votes = 0.0;
        for r in &instance.responses {
            if r.answer == candidate {
                ll += log_density_correct(r.score);
                votes += 1.0;
            } else {
                ll += log_density_incorrect(r.score);
            }
        }
        ll += votes * q_m.ln() + (total - votes) * ((1.0 - q_m) / (m - 1.0)).ln();
        match best {
            Some((_, b)) if ll <= b => {}
            _ => best = Some((candidate, ll)),
        }
    }
    Ok(best.expect("L >= 1").0.to_string())
}
