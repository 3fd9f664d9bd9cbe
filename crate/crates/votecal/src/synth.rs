//! Synthetic generator–verifier data with analytically known optimal
//! weights, used to verify calibration and aggregation end to end without
//! any real model outputs.
//!
//! Each question draws a reliability q; every response is independently
//! correct with probability q (answer "0", the gold token) or one of
//! `answer_universe - 1` uniform distractors. Scores come from per-class
//! Beta laws, so the exact density-ratio weight is available in closed
//! form via [`analytic_weight`].

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta as BetaDist, Continuous};

use crate::data::{clamp_score, Dataset, QuestionInstance, Role, ScoredResponse};
use crate::error::{Error, Result};

/// Parameters of a Beta score law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaParams {
    pub a: f64,
    pub b: f64,
}

impl BetaParams {
    fn validate(&self, what: &str) -> Result<()> {
        if !(self.a.is_finite() && self.b.is_finite() && self.a > 0.0 && self.b > 0.0) {
            return Err(Error::InvalidInput(format!(
                "{what}: Beta parameters must be positive reals, got ({}, {})",
                self.a, self.b
            )));
        }
        Ok(())
    }

    fn dist(&self) -> BetaDist {
        BetaDist::new(self.a, self.b).expect("validated parameters")
    }

    fn sampler(&self) -> rand_distr::Beta<f64> {
        rand_distr::Beta::new(self.a, self.b).expect("validated parameters")
    }
}

/// Per-question reliability law: a fixed value or a Beta distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    Fixed(f64),
    Beta { alpha: f64, beta: f64 },
}

/// Full generator configuration. Generation is deterministic given the
/// seed: every question draws from its own stream derived from
/// (seed, question index), so output is independent of scheduling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_questions: usize,
    pub responses_per_question: usize,
    pub difficulty: Difficulty,
    pub score_law_correct: BetaParams,
    pub score_law_incorrect: BetaParams,
    /// Number of distinct answers in the universe (gold plus distractors).
    pub answer_universe: usize,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_questions == 0 {
            return Err(Error::InvalidInput("num_questions must be >= 1".into()));
        }
        if self.responses_per_question == 0 {
            return Err(Error::InvalidInput(
                "responses_per_question must be >= 1".into(),
            ));
        }
        if self.answer_universe < 2 {
            return Err(Error::InvalidInput("answer_universe must be >= 2".into()));
        }
        match self.difficulty {
            Difficulty::Fixed(q) => {
                if !(q.is_finite() && (0.0..=1.0).contains(&q)) {
                    return Err(Error::InvalidInput(format!(
                        "fixed difficulty must lie in [0,1], got {q}"
                    )));
                }
            }
            Difficulty::Beta { alpha, beta } => {
                BetaParams { a: alpha, b: beta }.validate("difficulty")?;
            }
        }
        self.score_law_correct.validate("score_law_correct")?;
        self.score_law_incorrect.validate("score_law_incorrect")?;
        Ok(())
    }
}

/// Reliability values are kept away from 0 and 1 so a "certain" question
/// still produces a well-defined Bernoulli draw.
const DIFFICULTY_EPS: f64 = 1e-6;

/// Generate a fully labeled dataset (calibration role) from the config.
pub fn generate_dataset(config: &SynthConfig) -> Result<Dataset> {
    Ok(generate_with_difficulty(config)?.0)
}

/// As [`generate_dataset`], also returning the realized per-question
/// reliability draws, for tests that need the generative truth.
pub fn generate_with_difficulty(config: &SynthConfig) -> Result<(Dataset, Vec<f64>)> {
    config.validate()?;
    let pairs: Vec<(QuestionInstance, f64)> = (0..config.num_questions)
        .into_par_iter()
        .map(|idx| generate_question(config, idx))
        .collect();
    let (instances, qs): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    let mut metadata = BTreeMap::new();
    metadata.insert("generator".into(), "synth".into());
    metadata.insert("synth_seed".into(), config.seed.to_string());
    let dataset = Dataset::new(instances, Role::Calibration, metadata)?;
    Ok((dataset, qs))
}

fn generate_question(config: &SynthConfig, idx: usize) -> (QuestionInstance, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(idx as u64);

    let q = match config.difficulty {
        Difficulty::Fixed(q) => q,
        Difficulty::Beta { alpha, beta } => {
            let law = BetaParams { a: alpha, b: beta }.sampler();
            law.sample(&mut rng)
        }
    }
    .clamp(DIFFICULTY_EPS, 1.0 - DIFFICULTY_EPS);

    let correct_law = config.score_law_correct.sampler();
    let incorrect_law = config.score_law_incorrect.sampler();
    let responses = (0..config.responses_per_question)
        .map(|_| {
            let correct = rng.gen_bool(q);
            let answer = if correct {
                "0".to_string()
            } else {
                (1 + rng.gen_range(0..config.answer_universe - 1)).to_string()
            };
            let raw = if correct {
                correct_law.sample(&mut rng)
            } else {
                incorrect_law.sample(&mut rng)
            };
            let score = clamp_score(raw).expect("Beta samples are finite");
            ScoredResponse {
                answer,
                score,
                label: Some(correct),
                reasoning: None,
            }
        })
        .collect();

    let instance = QuestionInstance::new(format!("q{idx:06}"), responses, Some("0"))
        .expect("generated instances satisfy the invariants");
    (instance, q)
}

/// The exact optimal per-response weight on generated data: the closed-form
/// log ratio of the configured Beta score laws plus the consensus term for
/// the full answer universe.
pub fn analytic_weight(config: &SynthConfig, q: f64, p: f64) -> f64 {
    analytic_ratio(config, p) + (q * (config.answer_universe as f64 - 1.0) / (1.0 - q)).ln()
}

/// The score-signal part of [`analytic_weight`]:
/// `ln BetaPdf(p; a1,b1) - ln BetaPdf(p; a0,b0)`.
pub fn analytic_ratio(config: &SynthConfig, p: f64) -> f64 {
    let f1 = config.score_law_correct.dist();
    let f0 = config.score_law_incorrect.dist();
    f1.ln_pdf(p) - f0.ln_pdf(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::ContinuousCDF;

    fn base_config() -> SynthConfig {
        SynthConfig {
            num_questions: 50,
            responses_per_question: 8,
            difficulty: Difficulty::Fixed(0.6),
            score_law_correct: BetaParams { a: 2.0, b: 1.0 },
            score_law_incorrect: BetaParams { a: 1.0, b: 2.0 },
            answer_universe: 4,
            seed: 17,
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = base_config();
        let a = generate_dataset(&cfg).unwrap();
        let b = generate_dataset(&cfg).unwrap();
        assert_eq!(a.instances, b.instances);

        let mut other = cfg;
        other.seed = 18;
        let c = generate_dataset(&other).unwrap();
        assert_ne!(a.instances, c.instances);
    }

    #[test]
    fn labels_match_gold_membership() {
        let data = generate_dataset(&base_config()).unwrap();
        for inst in &data.instances {
            let gold = inst.gold.as_deref().unwrap();
            assert_eq!(gold, "0");
            for r in &inst.responses {
                assert_eq!(r.label, Some(r.answer == gold));
                if !r.label.unwrap() {
                    let distractor: usize = r.answer.parse().unwrap();
                    assert!((1..4).contains(&distractor));
                }
            }
        }
    }

    #[test]
    fn certain_difficulty_yields_all_correct() {
        let mut cfg = base_config();
        cfg.difficulty = Difficulty::Fixed(1.0);
        cfg.num_questions = 20;
        let data = generate_dataset(&cfg).unwrap();
        for inst in &data.instances {
            for r in &inst.responses {
                assert_eq!(r.label, Some(true));
                assert_eq!(r.answer, "0");
            }
        }
    }

    #[test]
    fn correct_fraction_tracks_fixed_difficulty() {
        let mut cfg = base_config();
        cfg.num_questions = 10_000;
        cfg.responses_per_question = 8;
        let data = generate_dataset(&cfg).unwrap();
        let total = 80_000.0;
        let correct: usize = data
            .instances
            .iter()
            .flat_map(|i| &i.responses)
            .filter(|r| r.label == Some(true))
            .count();
        let fraction = correct as f64 / total;
        let se = (0.6 * 0.4 / total).sqrt();
        assert!(
            (fraction - 0.6).abs() < 3.0 * se,
            "fraction = {fraction}, 3se = {}",
            3.0 * se
        );
    }

    #[test]
    fn conditional_scores_follow_the_beta_laws() {
        let mut cfg = base_config();
        cfg.num_questions = 25_000;
        cfg.responses_per_question = 8;
        let data = generate_dataset(&cfg).unwrap();
        let mut correct: Vec<f64> = Vec::new();
        let mut incorrect: Vec<f64> = Vec::new();
        for r in data.instances.iter().flat_map(|i| &i.responses) {
            if r.label.unwrap() {
                correct.push(r.score);
            } else {
                incorrect.push(r.score);
            }
        }
        assert!(correct.len() > 100_000);

        let ks = |samples: &mut Vec<f64>, law: BetaParams| {
            samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let dist = law.dist();
            let n = samples.len() as f64;
            samples
                .iter()
                .enumerate()
                .map(|(i, &x)| {
                    let cdf = dist.cdf(x);
                    let hi = (i + 1) as f64 / n - cdf;
                    let lo = cdf - i as f64 / n;
                    hi.max(lo)
                })
                .fold(0.0f64, f64::max)
        };
        let d1 = ks(&mut correct, cfg.score_law_correct);
        let d0 = ks(&mut incorrect, cfg.score_law_incorrect);
        assert!(d1 < 0.02, "correct-class KS = {d1}");
        assert!(d0 < 0.02, "incorrect-class KS = {d0}");
    }

    #[test]
    fn analytic_weight_closed_forms() {
        let cfg = base_config();
        // Beta(2,1) pdf = 2p, Beta(1,2) pdf = 2(1-p): ratio is logit(p)
        assert!((analytic_ratio(&cfg, 0.75) - 3.0f64.ln()).abs() < 1e-12);
        assert!(analytic_ratio(&cfg, 0.5).abs() < 1e-12);

        // identical laws: only the consensus term remains, constant in p
        let mut flat = cfg.clone();
        flat.score_law_incorrect = flat.score_law_correct;
        let w1 = analytic_weight(&flat, 0.3, 0.2);
        let w2 = analytic_weight(&flat, 0.3, 0.8);
        assert!((w1 - w2).abs() < 1e-12);

        // mirrored laws with the consensus term zeroed: weight(0.5) = 0
        // (q such that q·(m-1)/(1-q) = 1, i.e. q = 1/m)
        let q = 1.0 / flat.answer_universe as f64;
        let mut mirrored = cfg;
        mirrored.score_law_correct = BetaParams { a: 3.0, b: 5.0 };
        mirrored.score_law_incorrect = BetaParams { a: 5.0, b: 3.0 };
        assert!(analytic_weight(&mirrored, q, 0.5).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let mut cfg = base_config();
        cfg.num_questions = 0;
        assert!(cfg.validate().is_err());

        let mut cfg = base_config();
        cfg.answer_universe = 1;
        assert!(cfg.validate().is_err());

        let mut cfg = base_config();
        cfg.difficulty = Difficulty::Fixed(1.5);
        assert!(cfg.validate().is_err());

        let mut cfg = base_config();
        cfg.score_law_correct = BetaParams { a: 0.0, b: 1.0 };
        assert!(cfg.validate().is_err());
    }
}
