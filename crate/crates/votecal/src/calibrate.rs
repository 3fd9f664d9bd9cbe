//! Fitting of test-time weighting functions from a labeled calibration set:
//! the binned probability calibrator, the global density-ratio weight, and
//! grid-searched parametric offsets, plus artifact (de)serialization.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, QuestionInstance, Role, WeightFunction};
use crate::density::{fit_kde, KdeModel};
use crate::error::{Error, Result};

/// Estimated per-question reliability is clamped into
/// `[Q_EPS, 1 - Q_EPS]` so the consensus signal term stays finite.
pub const Q_EPS: f64 = 1e-3;

const NUM_BINS: usize = 10;

/// Equal-width binned estimate of P(correct | score) with Laplace
/// smoothing, so every rate is strictly inside (0,1). Empty bins fall back
/// to the smoothed global rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedCalibrator {
    pub bin_edges: Vec<f64>,
    pub bin_rates: Vec<f64>,
    pub global_rate: f64,
}

impl BinnedCalibrator {
    /// Calibrated correctness probability for a score. Bins are
    /// right-exclusive except the last, which is right-inclusive.
    pub fn rate(&self, p: f64) -> f64 {
        let idx = ((p * NUM_BINS as f64).floor() as usize).min(NUM_BINS - 1);
        self.bin_rates[idx]
    }
}

/// Fit the binned calibrator on every labeled response of the calibration
/// set, pooled across questions.
pub fn fit_binned_calibrator(cal: &Dataset) -> Result<BinnedCalibrator> {
    if cal.role != Role::Calibration {
        return Err(Error::InvalidInput(
            "calibrator must be fitted on a calibration-role dataset".into(),
        ));
    }
    let mut counts = [0usize; NUM_BINS];
    let mut correct = [0usize; NUM_BINS];
    let mut total = 0usize;
    let mut total_correct = 0usize;
    for inst in &cal.instances {
        for r in &inst.responses {
            let label = r.label.ok_or_else(|| Error::MissingLabel {
                question_id: inst.question_id.clone(),
            })?;
            let idx = ((r.score * NUM_BINS as f64).floor() as usize).min(NUM_BINS - 1);
            counts[idx] += 1;
            total += 1;
            if label {
                correct[idx] += 1;
                total_correct += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::InvalidInput(
            "calibration set has no labeled responses".into(),
        ));
    }
    let global_rate = (total_correct as f64 + 1.0) / (total as f64 + 2.0);
    let bin_rates = (0..NUM_BINS)
        .map(|j| {
            if counts[j] == 0 {
                global_rate
            } else {
                (correct[j] as f64 + 1.0) / (counts[j] as f64 + 2.0)
            }
        })
        .collect();
    let bin_edges = (0..=NUM_BINS).map(|j| j as f64 / NUM_BINS as f64).collect();
    Ok(BinnedCalibrator {
        bin_edges,
        bin_rates,
        global_rate,
    })
}

/// Estimated reliability of the generator on one question: the calibrated
/// correctness probabilities of its responses, averaged and clamped into
/// `[Q_EPS, 1 - Q_EPS]`.
pub fn estimate_q_m(calibrator: &BinnedCalibrator, instance: &QuestionInstance) -> f64 {
    let sum: f64 = instance.responses.iter().map(|r| calibrator.rate(r.score)).sum();
    let q = sum / instance.len() as f64;
    q.clamp(Q_EPS, 1.0 - Q_EPS)
}

/// Per-vote contribution of generator reliability:
/// `ln(q · (m_eff - 1) / (1 - q))`.
pub fn llm_signal_term(q_m: f64, m_eff: usize) -> Result<f64> {
    if !(q_m > 0.0 && q_m < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "q_m must be inside (0,1), got {q_m}"
        )));
    }
    Ok((q_m * (m_eff as f64 - 1.0) / (1.0 - q_m)).ln())
}

/// Parametric offset families searched by [`grid_search_offset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OffsetFamily {
    /// `w(p) = logit(p) - logit(b)`, b searched over (0,1).
    Logit,
    /// `w(p) = p - b`, b searched over [-1,1].
    Linear,
}

impl OffsetFamily {
    pub fn name(&self) -> &'static str {
        match self {
            OffsetFamily::Logit => "logit_offset",
            OffsetFamily::Linear => "linear_offset",
        }
    }

    /// Candidate offsets at 0.01 resolution. The logit grid excludes the
    /// endpoints 0 and 1 where logit(b) diverges.
    pub fn grid(&self) -> Vec<f64> {
        match self {
            OffsetFamily::Logit => (1..=99).map(|i| i as f64 / 100.0).collect(),
            OffsetFamily::Linear => (0..=200).map(|i| (i as f64 - 100.0) / 100.0).collect(),
        }
    }

    pub fn weight(&self, b: f64) -> WeightFunction {
        match self {
            OffsetFamily::Logit => WeightFunction::LogitOffset { b },
            OffsetFamily::Linear => WeightFunction::LinearOffset { b },
        }
    }
}

impl std::str::FromStr for OffsetFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logit" | "logit_offset" => Ok(OffsetFamily::Logit),
            "linear" | "linear_offset" => Ok(OffsetFamily::Linear),
            other => Err(Error::InvalidInput(format!(
                "unknown offset family '{other}' (expected 'logit' or 'linear')"
            ))),
        }
    }
}

/// Fitted weight parameters, tagged by kind in the serialized artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "weight_kind", content = "weight_params", rename_all = "snake_case")]
pub enum WeightParams {
    KdeRatio {
        kde_correct: KdeModel,
        kde_incorrect: KdeModel,
    },
    LogitOffset {
        b: f64,
    },
    LinearOffset {
        b: f64,
    },
}

pub const ARTIFACT_VERSION: u32 = 1;

/// Serializable bundle of a fitted weighting function: weight parameters,
/// the binned calibrator, and provenance metadata. Serialization is
/// canonical (fixed field order, sorted metadata keys), so loading and
/// re-saving a file reproduces it byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationArtifact {
    pub version: u32,
    #[serde(flatten)]
    pub weight: WeightParams,
    pub calibrator: BinnedCalibrator,
    pub metadata: BTreeMap<String, String>,
}

impl CalibrationArtifact {
    pub fn weight_kind(&self) -> &'static str {
        match self.weight {
            WeightParams::KdeRatio { .. } => "kde_ratio",
            WeightParams::LogitOffset { .. } => "logit_offset",
            WeightParams::LinearOffset { .. } => "linear_offset",
        }
    }

    /// Report/method name for votes weighted by this artifact.
    pub fn method_name(&self) -> &'static str {
        match self.weight {
            WeightParams::KdeRatio { .. } => "kde_wv",
            WeightParams::LogitOffset { .. } => "logit_wv",
            WeightParams::LinearOffset { .. } => "linear_wv",
        }
    }

    /// The weight function this artifact encodes.
    pub fn weight_function(&self) -> WeightFunction {
        match &self.weight {
            WeightParams::KdeRatio {
                kde_correct,
                kde_incorrect,
            } => WeightFunction::KdeRatio {
                correct: kde_correct.clone(),
                incorrect: kde_incorrect.clone(),
                calibrator: self.calibrator.clone(),
            },
            WeightParams::LogitOffset { b } => WeightFunction::LogitOffset { b: *b },
            WeightParams::LinearOffset { b } => WeightFunction::LinearOffset { b: *b },
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("artifact serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let version = value.get("version").and_then(|v| v.as_u64());
        if version != Some(ARTIFACT_VERSION as u64) {
            return Err(Error::Version(format!(
                "unsupported artifact version {version:?} (expected {ARTIFACT_VERSION})"
            )));
        }
        let kind = value.get("weight_kind").and_then(|v| v.as_str());
        match kind {
            Some("kde_ratio") | Some("logit_offset") | Some("linear_offset") => {}
            other => {
                return Err(Error::Version(format!(
                    "unknown weight_kind {other:?}"
                )))
            }
        }
        serde_json::from_value(value).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Atomic write: temp file in the target directory, then rename.
    pub fn save(&self, path: &Path) -> Result<()> {
        crate::jsonl::write_atomic(path, self.to_json().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }
}

fn require_calibration_set(cal: &Dataset) -> Result<()> {
    if cal.role != Role::Calibration {
        return Err(Error::InvalidInput(
            "fitting requires a calibration-role dataset".into(),
        ));
    }
    if cal.is_empty() {
        return Err(Error::InvalidInput("calibration set is empty".into()));
    }
    Ok(())
}

/// Fit the density-ratio weight: one KDE per correctness class, pooled over
/// all calibration questions, with Silverman bandwidths. The consensus term
/// is per-question and resolved at vote time from the stored calibrator.
pub fn fit_kde_weight(cal: &Dataset) -> Result<CalibrationArtifact> {
    require_calibration_set(cal)?;
    let mut correct = Vec::new();
    let mut incorrect = Vec::new();
    for inst in &cal.instances {
        for r in &inst.responses {
            match r.label {
                Some(true) => correct.push(r.score),
                Some(false) => incorrect.push(r.score),
                None => {
                    return Err(Error::MissingLabel {
                        question_id: inst.question_id.clone(),
                    })
                }
            }
        }
    }
    if correct.is_empty() {
        return Err(Error::CalibrationDegenerate { missing: "correct" });
    }
    if incorrect.is_empty() {
        return Err(Error::CalibrationDegenerate {
            missing: "incorrect",
        });
    }
    let calibrator = fit_binned_calibrator(cal)?;
    let kde_correct = fit_kde(&correct, None)?;
    let kde_incorrect = fit_kde(&incorrect, None)?;
    let mut metadata = cal.metadata.clone();
    metadata.insert("fit".into(), "kde_ratio".into());
    Ok(CalibrationArtifact {
        version: ARTIFACT_VERSION,
        weight: WeightParams::KdeRatio {
            kde_correct,
            kde_incorrect,
        },
        calibrator,
        metadata,
    })
}

/// Accuracy of the weighted vote on the calibration set for every offset in
/// the family's grid, in grid order.
pub fn sweep_offsets(cal: &Dataset, family: OffsetFamily) -> Result<Vec<(f64, f64)>> {
    require_calibration_set(cal)?;
    for inst in &cal.instances {
        if inst.gold.is_none() {
            return Err(Error::MissingGold {
                question_id: inst.question_id.clone(),
            });
        }
    }
    let num_questions = cal.len() as f64;
    let grid = family.grid();
    let rows: Vec<(f64, f64)> = grid
        .par_iter()
        .map(|&b| {
            let w = family.weight(b);
            let hits = cal
                .instances
                .iter()
                .filter(|inst| {
                    let chosen = crate::aggregate::weighted_vote(inst, &w).chosen;
                    inst.gold.as_deref() == Some(chosen.as_str())
                })
                .count();
            (b, hits as f64 / num_questions)
        })
        .collect();
    Ok(rows)
}

/// Grid search for the offset maximizing calibration accuracy; among
/// maximizers, the smallest offset wins. Also fits and stores the binned
/// calibrator for reliability reporting, though the parametric weight
/// itself does not use it.
pub fn grid_search_offset(cal: &Dataset, family: OffsetFamily) -> Result<CalibrationArtifact> {
    let rows = sweep_offsets(cal, family)?;
    let best_b = best_offset(&rows);
    let calibrator = fit_binned_calibrator(cal)?;
    let mut metadata = cal.metadata.clone();
    metadata.insert("fit".into(), family.name().into());
    metadata.insert("grid_points".into(), rows.len().to_string());
    Ok(CalibrationArtifact {
        version: ARTIFACT_VERSION,
        weight: match family {
            OffsetFamily::Logit => WeightParams::LogitOffset { b: best_b },
            OffsetFamily::Linear => WeightParams::LinearOffset { b: best_b },
        },
        calibrator,
        metadata,
    })
}

/// Smallest offset attaining the maximal accuracy; rows must be in grid
/// (ascending b) order.
pub fn best_offset(rows: &[(f64, f64)]) -> f64 {
    let mut best = rows[0];
    for &(b, acc) in &rows[1..] {
        if acc > best.1 {
            best = (b, acc);
        }
    }
    best.0
}
