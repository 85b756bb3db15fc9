use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use numevent::age::{self, AgeError, Document, RoundOptions, RuleBackend};
use numevent::dynamics::{self, ControlsSpec, DiffSeries, DynamicsError};
use numevent::evaluator::{monthly_report, EvalError, MatchRule, MonthlyReport, ScoredSample};
use numevent::formats::{self, atomic_write, EventRecord, FormatError, SampleRecord};
use numevent::generator::{self, GeneratorConfigFile, GeneratorError};
use numevent::hawkes::{self, FitOptions, HawkesError};
use numevent::vocab::{validate_event, SlotKind, Verdict, VocabError, Vocabulary};

/// Exit status plus what to tell the user.
#[derive(Debug)]
pub struct CommandOutcome {
    pub code: i32,
    pub message: String,
    pub report: Option<PathBuf>,
}

impl CommandOutcome {
    fn ok(message: String, report: Option<PathBuf>) -> Self {
        CommandOutcome {
            code: 0,
            message,
            report,
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    Io { path: PathBuf, message: String },
    Validation(String),
    Numerical(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Io { .. } => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Io { path, message } => write!(f, "{}: {message}", path.display()),
            CliError::Validation(m) => write!(f, "invalid input: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        match e {
            FormatError::Hawkes(h) => h.into(),
            FormatError::Dynamics(d) => d.into(),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<HawkesError> for CliError {
    fn from(e: HawkesError) -> Self {
        match e {
            HawkesError::ExplosionGuard { .. } | HawkesError::NonFiniteLikelihood { .. } => {
                CliError::Numerical(e.to_string())
            }
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<DynamicsError> for CliError {
    fn from(e: DynamicsError) -> Self {
        match e {
            DynamicsError::RankDeficient { .. } => CliError::Numerical(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<GeneratorError> for CliError {
    fn from(e: GeneratorError) -> Self {
        match e {
            GeneratorError::Hawkes(h) => h.into(),
            GeneratorError::Dynamics(d) => d.into(),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<VocabError> for CliError {
    fn from(e: VocabError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<AgeError> for CliError {
    fn from(e: AgeError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Validation(e.to_string())
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    atomic_write(path, text.as_bytes()).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io {
        path: dir.to_path_buf(),
        message: e.to_string(),
    })
}

fn pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

fn load_vocab(path: &Path) -> Result<Vocabulary, CliError> {
    Ok(Vocabulary::from_json(&read(path)?)?)
}

pub struct ExtractArgs<'a> {
    pub corpus: &'a Path,
    pub vocab: &'a Path,
    pub rules: Option<&'a Path>,
    pub backend: &'a str,
    pub threshold: f64,
    pub max_rounds: usize,
    pub bucket_width: f64,
    pub out: &'a Path,
}

#[derive(Serialize)]
struct RoundRow {
    round: usize,
    accepted: usize,
    rejected: usize,
    vocabulary_version: u64,
    added: Vec<AddedToken>,
    pending: usize,
}

#[derive(Serialize)]
struct AddedToken {
    slot: SlotKind,
    token: String,
}

#[derive(Serialize)]
struct ExtractReport {
    backend: String,
    threshold: f64,
    initial_version: u64,
    final_version: u64,
    fixed_point: bool,
    rounds: Vec<RoundRow>,
}

pub fn cmd_extract(a: &ExtractArgs) -> Result<CommandOutcome, CliError> {
    let docs: Vec<Document> = formats::read_jsonl(&read(a.corpus)?)?;
    let v0 = load_vocab(a.vocab)?;
    let rules = match a.rules {
        Some(p) => Some(RuleBackend::from_json(&read(p)?)?),
        None => None,
    };
    let backend = age::backend_by_name(a.backend, rules)?;
    let options = RoundOptions {
        threshold: a.threshold,
        bucket_width: a.bucket_width,
    };
    let rounds = age::run_loop(&docs, &v0, backend.as_ref(), &options, a.max_rounds)?;
    let last = rounds.last().expect("at least one round");
    let events: Vec<_> = last.accepted_events().cloned().collect();

    ensure_dir(a.out)?;
    let report = ExtractReport {
        backend: backend.name().to_string(),
        threshold: a.threshold,
        initial_version: v0.version(),
        final_version: last.vocabulary_after.version(),
        fixed_point: last.added.is_empty(),
        rounds: rounds
            .iter()
            .map(|r| RoundRow {
                round: r.round_index,
                accepted: r.accepted_count(),
                rejected: r.rejected_count,
                vocabulary_version: r.vocabulary_after.version(),
                added: r
                    .added
                    .iter()
                    .map(|(slot, token)| AddedToken {
                        slot: *slot,
                        token: token.to_string(),
                    })
                    .collect(),
                pending: r.pending.len(),
            })
            .collect(),
    };
    write(&a.out.join("events.jsonl"), &formats::write_events(&events))?;
    write(&a.out.join("vocab.json"), &last.vocabulary_after.to_json())?;
    let report_path = a.out.join("rounds.json");
    write(&report_path, &pretty(&report))?;
    Ok(CommandOutcome::ok(
        format!(
            "{} events after {} round(s), vocabulary version {}",
            events.len(),
            rounds.len(),
            last.vocabulary_after.version()
        ),
        Some(report_path),
    ))
}

pub fn cmd_fit_hawkes(
    events: &Path,
    k: usize,
    horizon: Option<f64>,
    max_iter: usize,
    out: &Path,
) -> Result<CommandOutcome, CliError> {
    let seq = formats::read_arrivals(&read(events)?, horizon)?;
    seq.check_types(k)?;
    let options = FitOptions {
        max_iter,
        ..FitOptions::default()
    };
    let fit = hawkes::fit(&seq, k, None, options)?;
    if !fit.converged {
        return Err(CliError::Numerical(format!(
            "fit did not converge in {} iterations (log-likelihood {:.6})",
            fit.iterations, fit.log_likelihood
        )));
    }
    write(out, &fit.params.to_json())?;
    Ok(CommandOutcome::ok(
        format!(
            "log-likelihood {:.6} after {} iterations",
            fit.log_likelihood, fit.iterations
        ),
        Some(out.to_path_buf()),
    ))
}

pub fn load_series(path: &Path, differenced: bool) -> Result<DiffSeries, CliError> {
    Ok(formats::parse_series_csv(&read(path)?, differenced)?)
}

pub struct IrfArgs<'a> {
    pub series: &'a Path,
    pub events: &'a Path,
    pub differenced: bool,
    pub k: Option<usize>,
    pub horizon: usize,
    pub lags: usize,
    pub kernel_controls: bool,
    pub count_events: bool,
    pub out: &'a Path,
}

pub fn cmd_estimate_irf(a: &IrfArgs) -> Result<CommandOutcome, CliError> {
    let series = load_series(a.series, a.differenced)?;
    let end = series.times().last().copied().unwrap_or(0.0);
    let seq = formats::read_arrivals(&read(a.events)?, None)?;
    let seq = hawkes::EventSequence::new(seq.events().to_vec(), seq.horizon().max(end))?;
    let k = a.k.unwrap_or_else(|| seq.type_count());
    seq.check_types(k)?;
    let controls = ControlsSpec {
        dy_lags: a.lags,
        kernel_indicators: a.kernel_controls,
        count_events: a.count_events,
        exogenous: Vec::new(),
    };
    let kernel = dynamics::estimate_irf(&series, &seq, k, a.horizon, &controls)?;
    write(a.out, &pretty(&kernel))?;
    Ok(CommandOutcome::ok(
        format!("estimated {k} x {} kernel", a.horizon + 1),
        Some(a.out.to_path_buf()),
    ))
}

pub fn cmd_fit_ar(series: &Path, differenced: bool, out: &Path) -> Result<CommandOutcome, CliError> {
    let s = load_series(series, differenced)?;
    let fit = dynamics::fit_ar(&s)?;
    write(out, &pretty(&fit))?;
    let phi = fit.params.phi;
    let mut message = format!(
        "phi {:.4} {:.4} {:.4} {:.4} sigma {:.4}",
        phi[0], phi[1], phi[2], phi[3], fit.params.sigma
    );
    for w in &fit.warnings {
        message.push_str(&format!("\nwarning: {w:?}"));
    }
    Ok(CommandOutcome::ok(message, Some(out.to_path_buf())))
}

pub fn cmd_generate(config: &Path, seed: Option<u64>, out: &Path) -> Result<CommandOutcome, CliError> {
    let file: GeneratorConfigFile = serde_json::from_str(&read(config)?)
        .map_err(|e| CliError::Validation(format!("{}: {e}", config.display())))?;
    let base = config.parent().unwrap_or(Path::new("."));
    let vocab_path = base.join(&file.vocabulary);
    let mut cfg = file.resolve(load_vocab(&vocab_path)?);
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let data = generator::generate(&cfg)?;

    ensure_dir(out)?;
    let records: Vec<SampleRecord> = data.samples.iter().map(SampleRecord::from).collect();
    write(&out.join("dataset.jsonl"), &formats::write_jsonl(&records))?;
    write(&out.join("events.jsonl"), &formats::write_events(&data.events))?;
    // y0 sits one step before the first difference so that row t holds the
    // level after step t, the same clock as the event times.
    let times: Vec<f64> = (0..=data.levels.len()).map(|i| i as f64 - 1.0).collect();
    let mut levels = vec![data.y0];
    levels.extend_from_slice(&data.levels);
    write(
        &out.join("series.csv"),
        &formats::write_series_csv(("t", "y"), &times, &levels),
    )?;
    let prov = out.join("provenance.json");
    write(&prov, &pretty(&data.provenance))?;
    Ok(CommandOutcome::ok(
        format!(
            "{} samples from {} arrivals (seed {})",
            data.samples.len(),
            data.provenance.arrivals,
            cfg.seed
        ),
        Some(prov),
    ))
}

fn two_dp(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.2}"))
}

pub fn evaluate_files(pred: &str, gold: &str, min_slots: usize) -> Result<MonthlyReport, CliError> {
    let rule = MatchRule::new(min_slots)?;
    let samples: Vec<SampleRecord> = formats::read_jsonl(gold)?;
    let mut by_id: BTreeMap<usize, ScoredSample> = BTreeMap::new();
    for s in &samples {
        let golds = s.gold_events()?;
        let prev = by_id.insert(
            s.id,
            ScoredSample {
                month: s.month.clone(),
                preds: Vec::new(),
                golds,
            },
        );
        if prev.is_some() {
            return Err(CliError::Validation(format!("duplicate sample id {}", s.id)));
        }
    }
    let preds: Vec<EventRecord> = formats::read_jsonl(pred)?;
    for (i, r) in preds.iter().enumerate() {
        let id = r
            .sample_id
            .ok_or_else(|| CliError::Validation(format!("prediction line {} has no sample_id", i + 1)))?;
        let sample = by_id
            .get_mut(&id)
            .ok_or_else(|| CliError::Validation(format!("prediction line {} names unknown sample {id}", i + 1)))?;
        sample.preds.push(r.to_event(i + 1)?);
    }
    let scored: Vec<ScoredSample> = by_id.into_values().collect();
    Ok(monthly_report(&scored, rule))
}

pub fn cmd_evaluate(
    pred: &Path,
    gold: &Path,
    min_slots: usize,
    out: Option<&Path>,
) -> Result<CommandOutcome, CliError> {
    let report = evaluate_files(&read(pred)?, &read(gold)?, min_slots)?;
    if let Some(p) = out {
        write(p, &pretty(&report))?;
    }
    Ok(CommandOutcome::ok(
        format!(
            "precision {} recall {}",
            two_dp(report.overall.precision),
            two_dp(report.overall.recall)
        ),
        out.map(Path::to_path_buf),
    ))
}

pub fn cmd_vocab_validate(vocab: &Path, events: Option<&Path>) -> Result<CommandOutcome, CliError> {
    let v = load_vocab(vocab)?;
    let mut message = format!(
        "vocabulary version {} with {} tokens and {} rules",
        v.version(),
        v.len(),
        v.constraints().len()
    );
    if let Some(p) = events {
        let evs = formats::read_events(&read(p)?)?;
        let mut rejected = Vec::new();
        for (i, e) in evs.iter().enumerate() {
            if let Verdict::Reject(why) = validate_event(e, &v) {
                rejected.push(format!("line {}: {e} ({why:?})", i + 1));
            }
        }
        if !rejected.is_empty() {
            return Err(CliError::Validation(format!(
                "{} of {} events rejected\n{}",
                rejected.len(),
                evs.len(),
                rejected.join("\n")
            )));
        }
        message.push_str(&format!("; all {} events accepted", evs.len()));
    }
    Ok(CommandOutcome::ok(message, None))
}
