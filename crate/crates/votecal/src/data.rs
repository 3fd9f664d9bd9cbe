//! Domain types shared by every other module: scored responses, question
//! ensembles, datasets, vote tallies, and weighting functions.
//!
//! All types are immutable values after construction and safe to share
//! read-only across parallel workers.

use std::collections::{BTreeMap, HashSet};

use serde::Serialize;

use crate::calibrate::{estimate_q_m, llm_signal_term, BinnedCalibrator};
use crate::density::{logit_clamped, KdeModel};
use crate::error::{Error, Result};

/// Scores are clamped into `[SCORE_EPS, 1 - SCORE_EPS]` so the logit
/// transform stays bounded (|logit| ≤ ~13.8).
pub const SCORE_EPS: f64 = 1e-6;

/// Normalize a raw answer into a canonical token: trim surrounding
/// whitespace and collapse internal whitespace runs to single spaces.
/// Answers are compared as exact tokens after this; no mathematical
/// equivalence checking is attempted.
pub fn canonicalize_answer(raw: &str) -> Result<String> {
    let canonical = raw.split_whitespace().collect::<Vec<_>>().join(" ");
    if canonical.is_empty() {
        return Err(Error::InvalidAnswer(format!(
            "empty after trimming {raw:?}"
        )));
    }
    Ok(canonical)
}

/// Clamp a verifier score into `[SCORE_EPS, 1 - SCORE_EPS]`.
pub fn clamp_score(p: f64) -> Result<f64> {
    if !p.is_finite() {
        return Err(Error::InvalidScore(format!("{p} is not finite")));
    }
    Ok(p.clamp(SCORE_EPS, 1.0 - SCORE_EPS))
}

/// One candidate answer: canonical token, clamped verifier score, and an
/// optional correctness label. The reasoning text is carried verbatim and
/// never interpreted.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredResponse {
    pub answer: String,
    pub score: f64,
    pub label: Option<bool>,
    pub reasoning: Option<String>,
}

impl ScoredResponse {
    /// Canonicalizes the answer and clamps the score.
    pub fn new(
        raw_answer: &str,
        score: f64,
        label: Option<bool>,
        reasoning: Option<String>,
    ) -> Result<Self> {
        Ok(Self {
            answer: canonicalize_answer(raw_answer)?,
            score: clamp_score(score)?,
            label,
            reasoning,
        })
    }
}

/// One question's response ensemble, with an optional gold answer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuestionInstance {
    pub question_id: String,
    pub gold: Option<String>,
    pub responses: Vec<ScoredResponse>,
}

impl QuestionInstance {
    /// Validates the ensemble invariants: at least one response, gold
    /// canonicalized, and labels consistent with gold when both exist.
    pub fn new(
        question_id: impl Into<String>,
        responses: Vec<ScoredResponse>,
        gold: Option<&str>,
    ) -> Result<Self> {
        let question_id = question_id.into();
        if responses.is_empty() {
            return Err(Error::InvalidInput(format!(
                "question '{question_id}' has no responses"
            )));
        }
        let gold = match gold {
            Some(g) => Some(canonicalize_answer(g)?),
            None => None,
        };
        if let Some(gold) = &gold {
            for (i, r) in responses.iter().enumerate() {
                if let Some(label) = r.label {
                    if label != (r.answer == *gold) {
                        return Err(Error::InvalidInput(format!(
                            "question '{question_id}' response {i}: label {label} \
                             inconsistent with gold '{gold}' vs answer '{}'",
                            r.answer
                        )));
                    }
                }
            }
        }
        Ok(Self {
            question_id,
            gold,
            responses,
        })
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn fully_labeled(&self) -> bool {
        self.responses.iter().all(|r| r.label.is_some())
    }
}

/// Unique candidate answers in order of first appearance.
pub fn unique_answers(instance: &QuestionInstance) -> Vec<&str> {
    let mut seen = HashSet::new();
    let mut answers = Vec::new();
    for r in &instance.responses {
        if seen.insert(r.answer.as_str()) {
            answers.push(r.answer.as_str());
        }
    }
    answers
}

/// Number of unique answers floored at 2, keeping the consensus signal
/// term finite when every response agrees.
pub fn m_eff(instance: &QuestionInstance) -> usize {
    unique_answers(instance).len().max(2)
}

/// Dataset role. Calibration data must be fully labeled with gold answers
/// on every question; test data may omit either.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Calibration,
    Test,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::Calibration => "calibration",
            Role::Test => "test",
        }
    }
}

impl std::str::FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "calibration" => Ok(Role::Calibration),
            "test" => Ok(Role::Test),
            other => Err(Error::InvalidInput(format!(
                "unknown role '{other}' (expected 'calibration' or 'test')"
            ))),
        }
    }
}

/// A collection of question instances with a role and free-form
/// provenance metadata.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub instances: Vec<QuestionInstance>,
    pub role: Role,
    pub metadata: BTreeMap<String, String>,
}

impl Dataset {
    /// Validates dataset-level invariants: unique question ids and, for the
    /// calibration role, labels on every response and gold on every question.
    pub fn new(
        instances: Vec<QuestionInstance>,
        role: Role,
        metadata: BTreeMap<String, String>,
    ) -> Result<Self> {
        let mut ids = HashSet::new();
        for inst in &instances {
            if !ids.insert(inst.question_id.as_str()) {
                return Err(Error::InvalidInput(format!(
                    "duplicate question_id '{}'",
                    inst.question_id
                )));
            }
            if role == Role::Calibration {
                if inst.gold.is_none() {
                    return Err(Error::MissingGold {
                        question_id: inst.question_id.clone(),
                    });
                }
                if !inst.fully_labeled() {
                    return Err(Error::MissingLabel {
                        question_id: inst.question_id.clone(),
                    });
                }
            }
        }
        Ok(Self {
            instances,
            role,
            metadata,
        })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn fully_labeled(&self) -> bool {
        self.instances.iter().all(QuestionInstance::fully_labeled)
    }

    pub fn all_have_gold(&self) -> bool {
        self.instances.iter().all(|i| i.gold.is_some())
    }
}

/// Per-answer vote totals: response count and summed vote weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TallyEntry {
    pub count: usize,
    pub weight_sum: f64,
}

/// Map from answer token to its tally, ordered by token so iteration (and
/// therefore tie-breaking) is deterministic.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnswerTally {
    pub entries: BTreeMap<String, TallyEntry>,
}

impl AnswerTally {
    /// Answer with the highest summed weight; ties go to the
    /// lexicographically smallest token.
    pub fn top_by_weight(&self) -> Option<(&str, &TallyEntry)> {
        let mut best: Option<(&str, &TallyEntry)> = None;
        for (answer, entry) in &self.entries {
            match best {
                Some((_, b)) if entry.weight_sum <= b.weight_sum => {}
                _ => best = Some((answer, entry)),
            }
        }
        best
    }

    /// Answer with the highest count; ties go to the lexicographically
    /// smallest token.
    pub fn top_by_count(&self) -> Option<(&str, &TallyEntry)> {
        let mut best: Option<(&str, &TallyEntry)> = None;
        for (answer, entry) in &self.entries {
            match best {
                Some((_, b)) if entry.count <= b.count => {}
                _ => best = Some((answer, entry)),
            }
        }
        best
    }
}

/// A fitted mapping from verifier score to real-valued vote weight.
///
/// The density-ratio kind carries its own probability calibrator because
/// its consensus term is resolved per question at vote time; the other
/// kinds are pure functions of the score.
#[derive(Debug, Clone)]
pub enum WeightFunction {
    /// Every response votes 1; degenerates to majority vote.
    ConstantOne,
    /// The raw score is the weight.
    RawScore,
    /// `w(p) = p - b`; crosses zero exactly at `p = b`.
    LinearOffset { b: f64 },
    /// `w(p) = logit(p) - logit(b)`; crosses zero exactly at `p = b`.
    LogitOffset { b: f64 },
    /// `w(p) = log f̂₁(p) - log f̂₀(p) + log(q̂·(m_eff-1)/(1-q̂))` with the
    /// densities fitted globally and q̂ estimated per question.
    KdeRatio {
        correct: KdeModel,
        incorrect: KdeModel,
        calibrator: BinnedCalibrator,
    },
}

impl WeightFunction {
    pub fn kind(&self) -> &'static str {
        match self {
            WeightFunction::ConstantOne => "constant_one",
            WeightFunction::RawScore => "raw_score",
            WeightFunction::LinearOffset { .. } => "linear_offset",
            WeightFunction::LogitOffset { .. } => "logit_offset",
            WeightFunction::KdeRatio { .. } => "kde_ratio",
        }
    }

    /// Binds the instance-dependent part of the weight (the consensus term
    /// of the density-ratio kind) so evaluation is a pure `f(p)`.
    pub fn resolve(&self, instance: &QuestionInstance) -> ResolvedWeight<'_> {
        let inner = match self {
            WeightFunction::ConstantOne => Resolved::ConstantOne,
            WeightFunction::RawScore => Resolved::RawScore,
            WeightFunction::LinearOffset { b } => Resolved::Linear { b: *b },
            WeightFunction::LogitOffset { b } => Resolved::Logit {
                logit_b: logit_clamped(*b),
            },
            WeightFunction::KdeRatio {
                correct,
                incorrect,
                calibrator,
            } => {
                let q = estimate_q_m(calibrator, instance);
                let llm_term = llm_signal_term(q, m_eff(instance))
                    .expect("estimate_q_m output is clamped inside (0,1)");
                Resolved::Kde {
                    correct,
                    incorrect,
                    llm_term,
                }
            }
        };
        ResolvedWeight { inner }
    }
}

enum Resolved<'a> {
    ConstantOne,
    RawScore,
    Linear {
        b: f64,
    },
    Logit {
        logit_b: f64,
    },
    Kde {
        correct: &'a KdeModel,
        incorrect: &'a KdeModel,
        llm_term: f64,
    },
}

/// A weight function with any per-question terms already bound; evaluable
/// at any clamped score and always finite.
pub struct ResolvedWeight<'a> {
    inner: Resolved<'a>,
}

impl ResolvedWeight<'_> {
    pub fn eval(&self, p: f64) -> f64 {
        match &self.inner {
            Resolved::ConstantOne => 1.0,
            Resolved::RawScore => p,
            Resolved::Linear { b } => p - b,
            Resolved::Logit { logit_b } => logit_clamped(p) - logit_b,
            Resolved::Kde {
                correct,
                incorrect,
                llm_term,
            } => correct.log_density(p) - incorrect.log_density(p) + llm_term,
        }
    }
}

/// Tally an instance under a weight function: for every candidate answer,
/// the response count and the sum of `w(score)` over its supporters.
pub fn tally(instance: &QuestionInstance, w: &WeightFunction) -> AnswerTally {
    let resolved = w.resolve(instance);
    tally_with(instance, |r| resolved.eval(r.score))
}

/// Tally with an arbitrary per-response weight.
pub fn tally_with<F>(instance: &QuestionInstance, weight: F) -> AnswerTally
where
    F: Fn(&ScoredResponse) -> f64,
{
    let mut entries: BTreeMap<String, TallyEntry> = BTreeMap::new();
    for r in &instance.responses {
        let entry = entries.entry(r.answer.clone()).or_insert(TallyEntry {
            count: 0,
            weight_sum: 0.0,
        });
        entry.count += 1;
        entry.weight_sum += weight(r);
    }
    AnswerTally { entries }
}
