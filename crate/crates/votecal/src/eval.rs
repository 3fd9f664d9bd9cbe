//! Evaluation harness: subsampled scaling curves, matched-compute
//! efficiency, offset sweeps, reliability-estimation error, and the
//! global-vs-per-question weight gap.
//!
//! Every output is a pure function of (dataset, method specs, ns, trials,
//! seed). Subsampling draws without replacement from each question's stored
//! responses using a stream derived from (seed, question_id, trial), so
//! results are identical regardless of worker count or scheduling.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aggregate::{
    best_of_n, majority_vote, optimal_aggregate, pass_at_n, vanilla_weighted_vote, weighted_vote,
    AggregationResult,
};
use crate::calibrate::{
    best_offset, estimate_q_m, sweep_offsets, BinnedCalibrator, CalibrationArtifact, OffsetFamily,
    WeightParams,
};
use crate::data::{Dataset, QuestionInstance, WeightFunction};
use crate::density::{fit_kde, log_density_ratio};
use crate::error::{Error, Result};

/// An answer-selection (or existence-bound) strategy under evaluation.
#[derive(Debug, Clone)]
pub enum Method {
    MajorityVote,
    BestOfN,
    VanillaWv,
    PassAtN,
    Optimal,
    Calibrated {
        name: &'static str,
        weight: WeightFunction,
    },
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::MajorityVote => "mv",
            Method::BestOfN => "bon",
            Method::VanillaWv => "vanilla",
            Method::PassAtN => "pass",
            Method::Optimal => "optimal",
            Method::Calibrated { name, .. } => name,
        }
    }

    pub fn from_artifact(artifact: &CalibrationArtifact) -> Method {
        Method::Calibrated {
            name: artifact.method_name(),
            weight: artifact.weight_function(),
        }
    }

    /// Parse a method spec: `mv|bon|vanilla|pass|optimal|artifact:<path>`.
    pub fn parse(spec: &str) -> Result<Method> {
        match spec {
            "mv" => Ok(Method::MajorityVote),
            "bon" => Ok(Method::BestOfN),
            "vanilla" => Ok(Method::VanillaWv),
            "pass" => Ok(Method::PassAtN),
            "optimal" => Ok(Method::Optimal),
            other => match other.strip_prefix("artifact:") {
                Some(path) => {
                    let artifact = CalibrationArtifact::load(Path::new(path))?;
                    Ok(Method::from_artifact(&artifact))
                }
                None => Err(Error::InvalidInput(format!(
                    "unknown method '{other}' \
                     (expected mv|bon|vanilla|pass|optimal|artifact:<path>)"
                ))),
            },
        }
    }

    /// Run the selection on one instance. Errors for `pass`, which bounds
    /// existence rather than selecting an answer.
    pub fn aggregate(&self, instance: &QuestionInstance) -> Result<AggregationResult> {
        match self {
            Method::MajorityVote => Ok(majority_vote(instance)),
            Method::BestOfN => Ok(best_of_n(instance)),
            Method::VanillaWv => Ok(vanilla_weighted_vote(instance)),
            Method::Optimal => optimal_aggregate(instance),
            Method::Calibrated { name, weight } => {
                let mut r = weighted_vote(instance, weight);
                r.method = (*name).into();
                Ok(r)
            }
            Method::PassAtN => Err(Error::InvalidInput(
                "'pass' is an existence bound, not a selection method".into(),
            )),
        }
    }

    /// Whether the method solves the instance: chosen answer equals gold,
    /// or for `pass`, any response equals gold.
    fn solves(&self, instance: &QuestionInstance) -> Result<bool> {
        if let Method::PassAtN = self {
            return pass_at_n(instance);
        }
        let gold = instance.gold.as_deref().ok_or_else(|| Error::MissingGold {
            question_id: instance.question_id.clone(),
        })?;
        Ok(self.aggregate(instance)?.chosen == gold)
    }
}

/// Powers of two not exceeding `l`, the default sample budgets.
pub fn default_ns(l: usize) -> Vec<usize> {
    let mut ns = Vec::new();
    let mut n = 1;
    while n <= l {
        ns.push(n);
        n *= 2;
    }
    ns
}

fn derived_rng(seed: u64, question_id: &str, trial: u32) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(trial.to_le_bytes());
    hasher.update(question_id.as_bytes());
    ChaCha8Rng::from_seed(hasher.finalize().into())
}

/// Draw `n` responses without replacement, preserving their original order.
/// Partial Fisher–Yates from one stream per (seed, question, trial): the
/// first i selections never depend on n, so budgets draw nested subsets and
/// pass@n is exactly monotone in n within a trial.
fn subsample(instance: &QuestionInstance, n: usize, seed: u64, trial: u32) -> QuestionInstance {
    let l = instance.len();
    let mut rng = derived_rng(seed, &instance.question_id, trial);
    let mut indices: Vec<usize> = (0..l).collect();
    for i in 0..n {
        let j = rng.gen_range(i..l);
        indices.swap(i, j);
    }
    indices.truncate(n);
    indices.sort_unstable();
    QuestionInstance {
        question_id: instance.question_id.clone(),
        gold: instance.gold.clone(),
        responses: indices.iter().map(|&i| instance.responses[i].clone()).collect(),
    }
}

fn check_gold_and_sizes(data: &Dataset, n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidInput("sample size n must be >= 1".into()));
    }
    for inst in &data.instances {
        if inst.gold.is_none() {
            return Err(Error::MissingGold {
                question_id: inst.question_id.clone(),
            });
        }
        if inst.len() < n {
            return Err(Error::InsufficientResponses {
                question_id: inst.question_id.clone(),
                have: inst.len(),
                need: n,
            });
        }
    }
    Ok(())
}

/// Mean and standard error of the method's accuracy over `trials` random
/// subsamples of size `n` per question. When `n` equals every instance's
/// ensemble size there is no sampling variation and trials collapse to 1.
pub fn subsample_accuracy(
    data: &Dataset,
    method: &Method,
    n: usize,
    trials: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let (mean, se, _) = subsample_accuracy_detail(data, method, n, trials, seed)?;
    Ok((mean, se))
}

fn subsample_accuracy_detail(
    data: &Dataset,
    method: &Method,
    n: usize,
    trials: usize,
    seed: u64,
) -> Result<(f64, f64, usize)> {
    check_gold_and_sizes(data, n)?;
    if data.is_empty() {
        return Err(Error::InvalidInput("dataset is empty".into()));
    }
    if trials == 0 {
        return Err(Error::InvalidInput("trials must be >= 1".into()));
    }
    let full_set = data.instances.iter().all(|i| i.len() == n);
    let trials = if full_set { 1 } else { trials };

    let counts = data
        .instances
        .par_iter()
        .map(|inst| -> Result<Vec<u32>> {
            let mut solved = vec![0u32; trials];
            for (t, slot) in solved.iter_mut().enumerate() {
                let hit = if inst.len() == n {
                    method.solves(inst)?
                } else {
                    method.solves(&subsample(inst, n, seed, t as u32))?
                };
                if hit {
                    *slot = 1;
                }
            }
            Ok(solved)
        })
        .try_reduce(
            || vec![0u32; trials],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                Ok(a)
            },
        )?;

    let q = data.len() as f64;
    let accs: Vec<f64> = counts.iter().map(|&c| c as f64 / q).collect();
    let mean = accs.iter().sum::<f64>() / trials as f64;
    let std_error = if trials == 1 {
        0.0
    } else {
        let var = accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>()
            / (trials as f64 - 1.0);
        (var / trials as f64).sqrt()
    };
    Ok((mean, std_error, trials))
}

/// One (method, sample size) point of a scaling curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub method: String,
    pub n: usize,
    pub mean_accuracy: f64,
    pub std_error: f64,
    pub trials: usize,
}

/// Accuracy-vs-sample-size table for a set of methods.
#[derive(Debug, Clone, Serialize)]
pub struct ScalingReport {
    pub rows: Vec<ScalingRow>,
    pub metadata: BTreeMap<String, String>,
}

impl ScalingReport {
    pub fn rows_for(&self, method: &str) -> Vec<&ScalingRow> {
        self.rows.iter().filter(|r| r.method == method).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,n,mean_accuracy,std_error,trials\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.method, r.n, r.mean_accuracy, r.std_error, r.trials
            ));
        }
        out
    }
}

/// Evaluate every method at every sample size. The existence bound `pass`
/// is always included, and the per-question optimal aggregator is included
/// whenever the dataset is fully labeled.
pub fn scaling_curve(
    data: &Dataset,
    methods: &[Method],
    ns: &[usize],
    trials: usize,
    seed: u64,
) -> Result<ScalingReport> {
    if ns.is_empty() {
        return Err(Error::InvalidInput("ns must not be empty".into()));
    }
    if !ns.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::InvalidInput(
            "ns must be strictly ascending".into(),
        ));
    }

    let mut all = methods.to_vec();
    if !all.iter().any(|m| matches!(m, Method::PassAtN)) {
        all.push(Method::PassAtN);
    }
    if !all.iter().any(|m| matches!(m, Method::Optimal)) && data.fully_labeled() {
        all.push(Method::Optimal);
    }

    let mut rows = Vec::with_capacity(all.len() * ns.len());
    for method in &all {
        for &n in ns {
            let (mean, se, eff_trials) =
                subsample_accuracy_detail(data, method, n, trials, seed)?;
            rows.push(ScalingRow {
                method: method.name().to_string(),
                n,
                mean_accuracy: mean,
                std_error: se,
                trials: eff_trials,
            });
        }
    }

    let mut metadata = data.metadata.clone();
    metadata.insert("seed".into(), seed.to_string());
    metadata.insert("trials".into(), trials.to_string());
    metadata.insert(
        "ns".into(),
        ns.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(","),
    );
    metadata.insert(
        "methods".into(),
        all.iter().map(|m| m.name()).collect::<Vec<_>>().join(","),
    );
    Ok(ScalingReport { rows, metadata })
}

/// Smallest sample budget at which `method_a` reaches `method_b`'s accuracy
/// at b's largest budget, or `None` if it never does.
pub fn matched_compute(
    report: &ScalingReport,
    method_a: &str,
    method_b: &str,
) -> Result<Option<usize>> {
    let rows_a = report.rows_for(method_a);
    let rows_b = report.rows_for(method_b);
    if rows_a.is_empty() {
        return Err(Error::InvalidInput(format!(
            "method '{method_a}' not present in report"
        )));
    }
    if rows_b.is_empty() {
        return Err(Error::InvalidInput(format!(
            "method '{method_b}' not present in report"
        )));
    }
    let target = rows_b
        .iter()
        .max_by_key(|r| r.n)
        .expect("non-empty")
        .mean_accuracy;
    Ok(rows_a
        .iter()
        .find(|r| r.mean_accuracy >= target)
        .map(|r| r.n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub b: f64,
    pub accuracy: f64,
}

/// Full calibration-accuracy table over an offset family's grid.
#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub family: String,
    pub rows: Vec<SweepRow>,
    pub best_b: f64,
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("b,accuracy\n");
        for r in &self.rows {
            out.push_str(&format!("{},{}\n", r.b, r.accuracy));
        }
        out
    }
}

/// Sweep the offset grid, reporting accuracy at every candidate and the
/// smallest maximizer (identical to what `grid_search_offset` fits).
pub fn offset_sweep(cal: &Dataset, family: OffsetFamily) -> Result<SweepReport> {
    let rows = sweep_offsets(cal, family)?;
    let best_b = best_offset(&rows);
    Ok(SweepReport {
        family: family.name().to_string(),
        rows: rows
            .into_iter()
            .map(|(b, accuracy)| SweepRow { b, accuracy })
            .collect(),
        best_b,
    })
}

/// Mean absolute error of the estimated per-question reliability, for the
/// calibrated estimator and for the fixed global-rate baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QmMaeReport {
    pub mae_calibrated: f64,
    pub mae_global: f64,
}

/// Compare estimated reliability against each question's labeled-correct
/// fraction. The baseline predicts the dataset-wide correct fraction for
/// every question.
pub fn qm_mae(data: &Dataset, calibrator: &BinnedCalibrator) -> Result<QmMaeReport> {
    if data.is_empty() {
        return Err(Error::InvalidInput("dataset is empty".into()));
    }
    let mut total_responses = 0usize;
    let mut total_correct = 0usize;
    for inst in &data.instances {
        for r in &inst.responses {
            match r.label {
                Some(true) => total_correct += 1,
                Some(false) => {}
                None => {
                    return Err(Error::MissingLabel {
                        question_id: inst.question_id.clone(),
                    })
                }
            }
            total_responses += 1;
        }
    }
    let global = total_correct as f64 / total_responses as f64;

    let mut sum_cal = 0.0;
    let mut sum_global = 0.0;
    for inst in &data.instances {
        let correct = inst
            .responses
            .iter()
            .filter(|r| r.label == Some(true))
            .count();
        let q_true = correct as f64 / inst.len() as f64;
        sum_cal += (estimate_q_m(calibrator, inst) - q_true).abs();
        sum_global += (global - q_true).abs();
    }
    let q = data.len() as f64;
    Ok(QmMaeReport {
        mae_calibrated: sum_cal / q,
        mae_global: sum_global / q,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionCurve {
    pub question_id: String,
    pub values: Vec<f64>,
}

/// The globally fitted density-ratio curve next to each question's own
/// per-question estimate, on a shared score grid. Questions with an
/// unobserved correctness class have no per-question ratio and are skipped.
#[derive(Debug, Clone, Serialize)]
pub struct WeightGapReport {
    pub grid: Vec<f64>,
    pub global: Vec<f64>,
    pub per_question: Vec<QuestionCurve>,
    pub skipped_degenerate: usize,
}

impl WeightGapReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("curve,score,value\n");
        for (p, v) in self.grid.iter().zip(&self.global) {
            out.push_str(&format!("global,{p},{v}\n"));
        }
        for qc in &self.per_question {
            for (p, v) in self.grid.iter().zip(&qc.values) {
                out.push_str(&format!("{},{p},{v}\n", qc.question_id));
            }
        }
        out
    }
}

pub fn weight_gap_report(
    data: &Dataset,
    artifact: &CalibrationArtifact,
    grid: &[f64],
) -> Result<WeightGapReport> {
    let (kde_correct, kde_incorrect) = match &artifact.weight {
        WeightParams::KdeRatio {
            kde_correct,
            kde_incorrect,
        } => (kde_correct, kde_incorrect),
        other => {
            return Err(Error::InvalidArtifact(format!(
                "weight-gap analysis needs a kde_ratio artifact, got {other:?}"
            )))
        }
    };
    if grid.is_empty() {
        return Err(Error::InvalidInput("score grid must not be empty".into()));
    }
    let global: Vec<f64> = grid
        .iter()
        .map(|&p| log_density_ratio(kde_correct, kde_incorrect, p))
        .collect();

    let curves: Vec<Option<QuestionCurve>> = data
        .instances
        .par_iter()
        .map(|inst| -> Result<Option<QuestionCurve>> {
            let mut correct = Vec::new();
            let mut incorrect = Vec::new();
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
            if correct.is_empty() || incorrect.is_empty() {
                return Ok(None);
            }
            let f1 = fit_kde(&correct, None)?;
            let f0 = fit_kde(&incorrect, None)?;
            let values = grid
                .iter()
                .map(|&p| log_density_ratio(&f1, &f0, p))
                .collect();
            Ok(Some(QuestionCurve {
                question_id: inst.question_id.clone(),
                values,
            }))
        })
        .collect::<Result<Vec<_>>>()?;

    let skipped_degenerate = curves.iter().filter(|c| c.is_none()).count();
    Ok(WeightGapReport {
        grid: grid.to_vec(),
        global,
        per_question: curves.into_iter().flatten().collect(),
        skipped_degenerate,
    })
}
