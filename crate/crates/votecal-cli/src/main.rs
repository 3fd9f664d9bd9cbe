//! Command-line front end: wires datasets, calibration, and evaluation into
//! reproducible batch runs. All outputs are written atomically (temp file +
//! rename) and report files embed the run's resolved, result-affecting
//! configuration; execution details such as thread count are excluded so
//! reruns compare byte-identical.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use votecal::calibrate::{
    fit_kde_weight, grid_search_offset, CalibrationArtifact, OffsetFamily,
};
use votecal::data::{Dataset, Role};
use votecal::eval::{
    default_ns, matched_compute, offset_sweep, qm_mae, scaling_curve, weight_gap_report, Method,
    QmMaeReport, ScalingReport, ScalingRow, SweepReport, WeightGapReport,
};
use votecal::jsonl;
use votecal::synth::{generate_dataset, BetaParams, Difficulty, SynthConfig};

#[derive(Parser)]
#[command(
    name = "votecal",
    version,
    about = "Calibrated weighted-vote aggregation over verifier-scored answer ensembles"
)]
struct Cli {
    /// Cap on worker threads (default: all available cores)
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a JSONL dataset against the format and role invariants
    Validate {
        /// Dataset to check
        #[arg(long)]
        data: PathBuf,
        /// Role whose invariants apply: calibration | test
        #[arg(long, default_value = "test")]
        role: String,
    },
    /// Generate a synthetic verifier-scored dataset
    Synth(SynthArgs),
    /// Fit a weighting-function artifact from a labeled calibration set
    Calibrate {
        /// Calibration dataset (JSONL, fully labeled with gold)
        #[arg(long)]
        data: PathBuf,
        /// Weight family to fit: kde | logit | linear
        #[arg(long)]
        family: String,
        /// Output artifact path (JSON)
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Apply one selection method to a dataset, writing per-question choices
    Aggregate {
        #[arg(long)]
        data: PathBuf,
        /// mv | bon | vanilla | optimal | artifact:<path>
        #[arg(long)]
        method: String,
        #[arg(long)]
        out: PathBuf,
        /// csv | json
        #[arg(long, default_value = "csv")]
        format: String,
    },
    /// Produce an accuracy-vs-sample-size scaling report (CSV + JSON)
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        /// Method spec, repeatable: mv | bon | vanilla | pass | optimal | artifact:<path>.
        /// Defaults to mv, bon, vanilla; pass and (when labeled) optimal are always added.
        #[arg(long = "method")]
        methods: Vec<String>,
        /// Comma-separated sample budgets, ascending (default: powers of two up to L)
        #[arg(long)]
        ns: Option<String>,
        /// Single sample budget; shorthand for --ns with one entry
        #[arg(long, conflicts_with = "ns")]
        n: Option<usize>,
        #[arg(long, default_value_t = 50)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output stem; writes <stem>.csv and <stem>.json
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep a parametric offset family over its full grid (CSV + JSON)
    Sweep {
        /// Calibration dataset (JSONL, fully labeled with gold)
        #[arg(long)]
        data: PathBuf,
        /// logit | linear
        #[arg(long)]
        family: String,
        /// Output stem; writes <stem>.csv and <stem>.json
        #[arg(long)]
        out: PathBuf,
    },
    /// Derived analyses over datasets and prior outputs
    Report {
        #[command(subcommand)]
        kind: ReportKind,
    },
}

#[derive(Args)]
struct SynthArgs {
    /// Generator configuration file (JSON); conflicts with the individual knobs
    #[arg(long, conflicts_with_all = ["questions", "responses", "q", "q_beta", "correct_beta", "incorrect_beta", "answers"])]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    questions: usize,
    #[arg(long, default_value_t = 8)]
    responses: usize,
    /// Fixed per-question reliability
    #[arg(long, conflicts_with = "q_beta")]
    q: Option<f64>,
    /// Beta(alpha,beta) law for per-question reliability, e.g. "4,4"
    #[arg(long)]
    q_beta: Option<String>,
    /// Beta score law for correct responses, e.g. "2,1"
    #[arg(long, default_value = "2,1")]
    correct_beta: String,
    /// Beta score law for incorrect responses, e.g. "1,2"
    #[arg(long, default_value = "1,2")]
    incorrect_beta: String,
    /// Size of the answer universe (gold plus distractors)
    #[arg(long, default_value_t = 4)]
    answers: usize,
    /// Generator seed; overrides the config file's seed when both are given
    #[arg(long)]
    seed: Option<u64>,
    /// Output dataset path (JSONL)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum ReportKind {
    /// Smallest budget at which method-a reaches method-b's final accuracy
    Matched {
        /// Scaling report JSON produced by `evaluate`
        #[arg(long)]
        scaling: PathBuf,
        #[arg(long)]
        method_a: String,
        #[arg(long)]
        method_b: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reliability-estimation error against labeled-correct fractions
    QmMae {
        #[arg(long)]
        data: PathBuf,
        /// Calibration artifact whose binned calibrator is evaluated
        #[arg(long)]
        calib: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Global vs per-question density-ratio curves on a score grid
    WeightGap {
        #[arg(long)]
        data: PathBuf,
        /// kde-family calibration artifact
        #[arg(long)]
        calib: PathBuf,
        /// Output stem; writes <stem>.csv and <stem>.json
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    version: u32,
    kind: String,
    metadata: BTreeMap<String, String>,
    #[serde(flatten)]
    body: T,
}

#[derive(Serialize, Deserialize)]
struct ScalingBody {
    rows: Vec<ScalingRow>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .is_err()
        {
            eprintln!("error: could not configure the thread pool");
            return ExitCode::FAILURE;
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Validate { data, role } => cmd_validate(&data, &role),
        Command::Synth(args) => cmd_synth(args),
        Command::Calibrate {
            data,
            family,
            out,
            seed,
        } => cmd_calibrate(&data, &family, &out, seed),
        Command::Aggregate {
            data,
            method,
            out,
            format,
        } => cmd_aggregate(&data, &method, &out, &format),
        Command::Evaluate {
            data,
            methods,
            ns,
            n,
            trials,
            seed,
            out,
        } => cmd_evaluate(&data, &methods, ns.as_deref(), n, trials, seed, &out),
        Command::Sweep { data, family, out } => cmd_sweep(&data, &family, &out),
        Command::Report { kind } => match kind {
            ReportKind::Matched {
                scaling,
                method_a,
                method_b,
                out,
            } => cmd_matched(&scaling, &method_a, &method_b, out.as_deref()),
            ReportKind::QmMae { data, calib, out } => cmd_qm_mae(&data, &calib, out.as_deref()),
            ReportKind::WeightGap { data, calib, out } => cmd_weight_gap(&data, &calib, &out),
        },
    }
}

fn parse_role(role: &str) -> anyhow::Result<Role> {
    role.parse::<Role>().map_err(Into::into)
}

fn load(path: &Path, role: Role) -> anyhow::Result<Dataset> {
    jsonl::load_dataset(path, role).with_context(|| format!("loading {}", path.display()))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    jsonl::write_atomic(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn envelope_json<T: Serialize>(kind: &str, metadata: BTreeMap<String, String>, body: T) -> String {
    let envelope = Envelope {
        version: 1,
        kind: kind.to_string(),
        metadata,
        body,
    };
    let mut s = serde_json::to_string_pretty(&envelope).expect("reports serialize");
    s.push('\n');
    s
}

/// Output stem: `--out` with a trailing .csv/.json extension stripped.
fn stem(path: &Path) -> PathBuf {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") | Some("json") => path.with_extension(""),
        _ => path.to_path_buf(),
    }
}

fn cmd_validate(data: &Path, role: &str) -> anyhow::Result<()> {
    let role = parse_role(role)?;
    let file = std::fs::File::open(data).with_context(|| format!("opening {}", data.display()))?;
    let summary = jsonl::validate(std::io::BufReader::new(file), role)?;
    if summary.is_valid() {
        println!(
            "{}: {} questions, {} responses ({} labeled), {} with gold — OK ({} role)",
            data.display(),
            summary.questions,
            summary.responses,
            summary.labeled_responses,
            summary.questions_with_gold,
            role.as_str(),
        );
        Ok(())
    } else {
        for d in &summary.diagnostics {
            eprintln!("{}:{}: {}", data.display(), d.line, d.message);
        }
        bail!(
            "{} invalid: {} problem(s) found",
            data.display(),
            summary.diagnostics.len()
        );
    }
}

fn parse_beta_pair(text: &str, what: &str) -> anyhow::Result<BetaParams> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        bail!("{what} must be two comma-separated numbers, got '{text}'");
    }
    let a: f64 = parts[0].parse().with_context(|| format!("{what}: '{}'", parts[0]))?;
    let b: f64 = parts[1].parse().with_context(|| format!("{what}: '{}'", parts[1]))?;
    Ok(BetaParams { a, b })
}

fn cmd_synth(args: SynthArgs) -> anyhow::Result<()> {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str::<SynthConfig>(&text)
                .with_context(|| format!("parsing {}", path.display()))?
        }
        None => {
            let difficulty = match (&args.q, &args.q_beta) {
                (_, Some(pair)) => {
                    let p = parse_beta_pair(pair, "--q-beta")?;
                    Difficulty::Beta {
                        alpha: p.a,
                        beta: p.b,
                    }
                }
                (Some(q), None) => Difficulty::Fixed(*q),
                (None, None) => Difficulty::Fixed(0.6),
            };
            SynthConfig {
                num_questions: args.questions,
                responses_per_question: args.responses,
                difficulty,
                score_law_correct: parse_beta_pair(&args.correct_beta, "--correct-beta")?,
                score_law_incorrect: parse_beta_pair(&args.incorrect_beta, "--incorrect-beta")?,
                answer_universe: args.answers,
                seed: 0,
            }
        }
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }

    let dataset = generate_dataset(&config)?;
    let mut bytes = Vec::new();
    jsonl::write_dataset(&dataset, &mut bytes)?;
    write_atomic(&args.out, &bytes)?;
    println!(
        "wrote {} questions x {} responses to {} (resolved config: {})",
        config.num_questions,
        config.responses_per_question,
        args.out.display(),
        serde_json::to_string(&config)?,
    );
    Ok(())
}

fn cmd_calibrate(data: &Path, family: &str, out: &Path, seed: u64) -> anyhow::Result<()> {
    let cal = load(data, Role::Calibration)?;
    let mut artifact = match family {
        "kde" | "kde_ratio" => fit_kde_weight(&cal)?,
        other => grid_search_offset(&cal, other.parse::<OffsetFamily>()?)?,
    };
    artifact.metadata.insert("seed".into(), seed.to_string());
    artifact.metadata.insert(
        "created_at".into(),
        time::OffsetDateTime::now_utc()
            .format(&time::format_description::well_known::Rfc3339)
            .unwrap_or_default(),
    );
    artifact.save(out)?;
    match &artifact.weight {
        votecal::calibrate::WeightParams::KdeRatio { .. } => {
            println!("fitted kde_ratio weight -> {}", out.display())
        }
        votecal::calibrate::WeightParams::LogitOffset { b } => {
            println!("fitted logit_offset weight (b = {b}) -> {}", out.display())
        }
        votecal::calibrate::WeightParams::LinearOffset { b } => {
            println!("fitted linear_offset weight (b = {b}) -> {}", out.display())
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct ChoiceRow {
    question_id: String,
    method: String,
    chosen: String,
    correct: Option<bool>,
}

#[derive(Serialize)]
struct ChoicesBody {
    rows: Vec<ChoiceRow>,
}

fn cmd_aggregate(data: &Path, method_spec: &str, out: &Path, format: &str) -> anyhow::Result<()> {
    if method_spec == "pass" {
        bail!("'pass' is an existence bound; choose mv|bon|vanilla|optimal|artifact:<path>");
    }
    let dataset = load(data, Role::Test)?;
    let method = Method::parse(method_spec)?;
    let mut rows = Vec::with_capacity(dataset.len());
    for inst in &dataset.instances {
        let result = method.aggregate(inst)?;
        let correct = inst.gold.as_deref().map(|g| g == result.chosen);
        rows.push(ChoiceRow {
            question_id: inst.question_id.clone(),
            method: method.name().to_string(),
            chosen: result.chosen,
            correct,
        });
    }

    let output = match format {
        "csv" => {
            let mut s = String::from("question_id,method,chosen,correct\n");
            for r in &rows {
                let correct = r.correct.map(|c| c.to_string()).unwrap_or_default();
                s.push_str(&format!(
                    "{},{},{},{}\n",
                    r.question_id, r.method, r.chosen, correct
                ));
            }
            s
        }
        "json" => {
            let metadata = run_metadata("aggregate", &dataset, None, &[method.name().to_string()]);
            envelope_json("choices", metadata, ChoicesBody { rows })
        }
        other => bail!("unknown format '{other}' (expected csv or json)"),
    };
    write_atomic(out, output.as_bytes())?;
    println!("wrote {} choice rows to {}", dataset.len(), out.display());
    Ok(())
}

/// Result-affecting run configuration embedded in report metadata. Input
/// files are identified by content hash rather than path.
fn run_metadata(
    command: &str,
    dataset: &Dataset,
    seed: Option<u64>,
    methods: &[String],
) -> BTreeMap<String, String> {
    let mut m = dataset.metadata.clone();
    m.insert("command".into(), command.to_string());
    if let Some(seed) = seed {
        m.insert("seed".into(), seed.to_string());
    }
    if !methods.is_empty() {
        m.insert("methods".into(), methods.join(","));
    }
    m
}

fn parse_ns(text: &str) -> anyhow::Result<Vec<usize>> {
    text.split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .with_context(|| format!("bad sample budget '{p}'"))
        })
        .collect()
}

fn cmd_evaluate(
    data: &Path,
    method_specs: &[String],
    ns: Option<&str>,
    n: Option<usize>,
    trials: usize,
    seed: u64,
    out: &Path,
) -> anyhow::Result<()> {
    let dataset = load(data, Role::Test)?;
    let specs: Vec<String> = if method_specs.is_empty() {
        ["mv", "bon", "vanilla"].map(String::from).to_vec()
    } else {
        method_specs.to_vec()
    };

    let mut methods = Vec::new();
    let mut artifact_ids = Vec::new();
    for spec in &specs {
        if let Some(path) = spec.strip_prefix("artifact:") {
            let artifact = CalibrationArtifact::load(Path::new(path))
                .with_context(|| format!("loading artifact {path}"))?;
            let cal_hash = artifact
                .metadata
                .get("dataset_sha256")
                .map(|h| &h[..h.len().min(12)])
                .unwrap_or("unknown");
            artifact_ids.push(format!("{}(cal={})", artifact.method_name(), cal_hash));
            methods.push(Method::from_artifact(&artifact));
        } else {
            methods.push(Method::parse(spec)?);
        }
    }

    let ns: Vec<usize> = match (ns, n) {
        (Some(list), _) => parse_ns(list)?,
        (None, Some(single)) => vec![single],
        (None, None) => {
            let min_l = dataset
                .instances
                .iter()
                .map(|i| i.len())
                .min()
                .unwrap_or(1);
            default_ns(min_l)
        }
    };

    let report = scaling_curve(&dataset, &methods, &ns, trials, seed)?;

    let mut metadata = report.metadata.clone();
    metadata.insert("command".into(), "evaluate".into());
    if !artifact_ids.is_empty() {
        metadata.insert("artifacts".into(), artifact_ids.join(","));
    }
    let report = ScalingReport {
        rows: report.rows,
        metadata,
    };

    let stem = stem(out);
    write_atomic(&stem.with_extension("csv"), report.to_csv().as_bytes())?;
    let json = envelope_json(
        "scaling",
        report.metadata.clone(),
        ScalingBody {
            rows: report.rows.clone(),
        },
    );
    write_atomic(&stem.with_extension("json"), json.as_bytes())?;
    println!(
        "wrote scaling report ({} rows) to {}.csv / {}.json",
        report.rows.len(),
        stem.display(),
        stem.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct SweepBody {
    family: String,
    best_b: f64,
    rows: Vec<votecal::eval::SweepRow>,
}

fn cmd_sweep(data: &Path, family: &str, out: &Path) -> anyhow::Result<()> {
    let cal = load(data, Role::Calibration)?;
    let family: OffsetFamily = family.parse()?;
    let report: SweepReport = offset_sweep(&cal, family)?;

    let metadata = run_metadata("sweep", &cal, None, &[]);
    let stem = stem(out);
    write_atomic(&stem.with_extension("csv"), report.to_csv().as_bytes())?;
    let json = envelope_json(
        "sweep",
        metadata,
        SweepBody {
            family: report.family.clone(),
            best_b: report.best_b,
            rows: report.rows.clone(),
        },
    );
    write_atomic(&stem.with_extension("json"), json.as_bytes())?;
    println!(
        "swept {} offsets (best b = {}) -> {}.csv / {}.json",
        report.rows.len(),
        report.best_b,
        stem.display(),
        stem.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct MatchedBody {
    method_a: String,
    method_b: String,
    target_accuracy: f64,
    matched_n: Option<usize>,
}

fn cmd_matched(
    scaling: &Path,
    method_a: &str,
    method_b: &str,
    out: Option<&Path>,
) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(scaling)
        .with_context(|| format!("reading {}", scaling.display()))?;
    let envelope: Envelope<ScalingBody> =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", scaling.display()))?;
    if envelope.kind != "scaling" {
        bail!(
            "{} is a '{}' report, expected 'scaling'",
            scaling.display(),
            envelope.kind
        );
    }
    let report = ScalingReport {
        rows: envelope.body.rows,
        metadata: envelope.metadata.clone(),
    };
    let target = report
        .rows_for(method_b)
        .iter()
        .max_by_key(|r| r.n)
        .map(|r| r.mean_accuracy)
        .unwrap_or(f64::NAN);
    let matched = matched_compute(&report, method_a, method_b)?;
    match matched {
        Some(n) => println!(
            "{method_a} reaches {method_b}'s final accuracy ({target}) at n = {n}"
        ),
        None => println!("{method_a} never reaches {method_b}'s final accuracy ({target})"),
    }
    if let Some(out) = out {
        let mut metadata = envelope.metadata;
        metadata.insert("command".into(), "report matched".into());
        let json = envelope_json(
            "matched_compute",
            metadata,
            MatchedBody {
                method_a: method_a.to_string(),
                method_b: method_b.to_string(),
                target_accuracy: target,
                matched_n: matched,
            },
        );
        write_atomic(out, json.as_bytes())?;
    }
    Ok(())
}

fn cmd_qm_mae(data: &Path, calib: &Path, out: Option<&Path>) -> anyhow::Result<()> {
    let dataset = load(data, Role::Test)?;
    let artifact = CalibrationArtifact::load(calib)
        .with_context(|| format!("loading artifact {}", calib.display()))?;
    let report: QmMaeReport = qm_mae(&dataset, &artifact.calibrator)?;
    println!(
        "mae_calibrated = {}, mae_global = {}",
        report.mae_calibrated, report.mae_global
    );
    if let Some(out) = out {
        let metadata = run_metadata("report qm-mae", &dataset, None, &[]);
        let json = envelope_json("qm_mae", metadata, report);
        write_atomic(out, json.as_bytes())?;
    }
    Ok(())
}

fn cmd_weight_gap(data: &Path, calib: &Path, out: &Path) -> anyhow::Result<()> {
    let dataset = load(data, Role::Test)?;
    let artifact = CalibrationArtifact::load(calib)
        .with_context(|| format!("loading artifact {}", calib.display()))?;
    let grid: Vec<f64> = (1..=99).map(|i| i as f64 / 100.0).collect();
    let report: WeightGapReport = weight_gap_report(&dataset, &artifact, &grid)?;

    let metadata = run_metadata("report weight-gap", &dataset, None, &[]);
    let stem = stem(out);
    write_atomic(&stem.with_extension("csv"), report.to_csv().as_bytes())?;
    let json = envelope_json("weight_gap", metadata, &report);
    write_atomic(&stem.with_extension("json"), json.as_bytes())?;
    println!(
        "wrote weight-gap report ({} per-question curves, {} degenerate skipped) to {}.csv / {}.json",
        report.per_question.len(),
        report.skipped_degenerate,
        stem.display(),
        stem.display()
    );
    Ok(())
}
