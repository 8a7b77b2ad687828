mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

use squeezelab::autolock::OperationMode;
use squeezelab::campaign::{run_campaign, CampaignError, CampaignResult, DEFAULT_THRESHOLDS_DB};
use squeezelab::characterize::duty::DEFAULT_BIN_WIDTH_DB;
use squeezelab::characterize::{
    duty_cycle_report, fit_pump_sweep, model_curve, read_sweep, read_trace, summarize_trace, validate_trace,
    write_trace, CharacterizeError, FitOptions, ThresholdMode,
};
use squeezelab::opa_model::{consistency_report, ModelParams};

use config::FileConfig;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration or malformed input file.
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Runtime(_) => 1,
            CliError::Config(_) => 2,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<CampaignError> for CliError {
    fn from(e: CampaignError) -> Self {
        match e {
            CampaignError::Config { .. } => CliError::Config(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

fn input_error(path: &Path, e: CharacterizeError) -> CliError {
    let msg = format!("{}: {e}", path.display());
    match e {
        CharacterizeError::Io(_) | CharacterizeError::NonConvergence { .. } => CliError::Runtime(msg),
        _ => CliError::Config(msg),
    }
}

#[derive(Parser)]
#[command(name = "squeezelab", version, about = "Simulate, control and characterize a squeezed-light OPA")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulated campaign and write trace, event log and summary.
    Simulate(SimulateArgs),
    /// Fit efficiency and phase jitter to a pump-power sweep.
    Fit(FitArgs),
    /// Duty-cycle report and histogram of a trace.
    Analyze(AnalyzeArgs),
    /// Compare the model against the reference cavity and squeezing figures.
    Consistency(ConsistencyArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    AutoRelock,
    DriftComp,
}

impl From<ModeArg> for OperationMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::AutoRelock => OperationMode::AutoRelock,
            ModeArg::DriftComp => OperationMode::DriftCompensation,
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// TOML file with [campaign], [plant] and [supervisor] sections.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Simulated duration in hours.
    #[arg(long)]
    hours: Option<f64>,
    /// One or more seeds; several seeds run in parallel.
    #[arg(long, value_delimiter = ',')]
    seed: Vec<u64>,
    /// Override any config field, e.g. `--set plant.drift.angle_walk_rad_per_sqrt_s=1e-3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    /// CSV with pump_ratio, v_minus_dB, v_plus_dB and optionally sigma_dB.
    sweep: PathBuf,
    /// Fit the threshold power instead of holding it fixed.
    #[arg(long)]
    free_threshold: bool,
    /// Threshold power the pump ratios refer to, mW.
    #[arg(long)]
    p_thr_mw: Option<f64>,
    /// Cavity decay rate, rad/s.
    #[arg(long)]
    decay_rate: Option<f64>,
    #[arg(long)]
    fourier_freq_hz: Option<f64>,
    /// Points in the model curve over pump ratio 0 to 0.95.
    #[arg(long, default_value_t = 96)]
    curve_points: usize,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    trace: PathBuf,
    /// Comma-separated squeezing thresholds, dB.
    #[arg(long, value_delimiter = ',')]
    thresholds: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_BIN_WIDTH_DB)]
    bin_width: f64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct ConsistencyArgs {
    #[arg(long)]
    eta: Option<f64>,
    /// Rms phase jitter, mrad.
    #[arg(long)]
    theta_mrad: Option<f64>,
    /// Threshold power, mW.
    #[arg(long)]
    p_thr_mw: Option<f64>,
    #[arg(long)]
    decay_rate: Option<f64>,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::Analyze(a) => analyze(a),
        Command::Consistency(a) => consistency(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn resolve_config(a: &SimulateArgs) -> Result<FileConfig, CliError> {
    let base = match &a.config {
        Some(p) => config::load_file(p)?,
        None => FileConfig::default(),
    };
    let mut overrides = config::env_overrides(std::env::vars());
    for s in &a.sets {
        overrides.push(config::parse_set(s)?);
    }
    let mut cfg = config::apply_overrides(base, &overrides)?;
    if let Some(m) = a.mode {
        cfg.supervisor.mode = m.into();
    }
    if let Some(h) = a.hours {
        cfg.campaign.duration_s = h * 3600.0;
    }
    Ok(cfg)
}

#[derive(Serialize)]
struct SimulateReport<'a> {
    config: &'a FileConfig,
    summary: &'a squeezelab::campaign::CampaignSummary,
}

fn simulate(a: SimulateArgs) -> Result<ExitCode, CliError> {
    let base = resolve_config(&a)?;
    let seeds = if a.seed.is_empty() { vec![base.campaign.seed] } else { a.seed.clone() };
    let configs: Vec<FileConfig> = seeds
        .iter()
        .map(|&s| {
            let mut c = base.clone();
            c.campaign.seed = s;
            c
        })
        .collect();
    for c in &configs {
        c.to_campaign()
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    fs::create_dir_all(&a.out)?;

    let started = Instant::now();
    let results: Vec<Result<CampaignResult, CampaignError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = configs
            .iter()
            .map(|c| scope.spawn(move || run_campaign(&c.to_campaign())))
            .collect();
        handles.into_iter().map(|h| h.join().expect("campaign worker panicked")).collect()
    });

    for (cfg, result) in configs.iter().zip(results) {
        let r = result?;
        let seed = cfg.campaign.seed;
        write_trace(create(&a.out.join(format!("trace_seed{seed}.csv")))?, &r.trace)
            .map_err(|e| CliError::Runtime(e.to_string()))?
            .flush()?;
        let mut log = create(&a.out.join(format!("events_seed{seed}.jsonl")))?;
        for e in &r.events {
            serde_json::to_writer(&mut log, e).map_err(|e| CliError::Runtime(e.to_string()))?;
            log.write_all(b"\n")?;
        }
        log.flush()?;
        let s = &r.summary;
        write_json(
            &a.out.join(format!("summary_seed{seed}.json")),
            &SimulateReport { config: cfg, summary: s },
        )?;
        println!(
            "seed {seed}: {:.1} h, lock fraction {:.4}, duty(10 dB) {:.4}, relocks {}, probe runs {}, mean {:.3} dB, max {:.3} dB",
            s.duration_s / 3600.0,
            s.duty.lock_fraction,
            s.duty.duty_at(10.0).unwrap_or(f64::NAN),
            s.relock_count,
            s.probe_runs,
            s.trace.mean_db_of_db,
            s.trace.max_db
        );
    }
    eprintln!("simulated in {:.2} s wall time", started.elapsed().as_secs_f64());
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct FitReport<'a> {
    input: String,
    options: &'a FitOptions,
    result: &'a squeezelab::characterize::FitResult,
}

fn fit(a: FitArgs) -> Result<ExitCode, CliError> {
    let file = File::open(&a.sweep).map_err(|e| CliError::Config(format!("{}: {e}", a.sweep.display())))?;
    let points = read_sweep(file).map_err(|e| input_error(&a.sweep, e))?;
    if points.is_empty() {
        return Err(CliError::Config(format!("{}: sweep has no data rows", a.sweep.display())));
    }
    let mut opts = FitOptions::default();
    if let Some(p) = a.p_thr_mw {
        opts.p_thr_w = p * 1e-3;
    }
    if let Some(g) = a.decay_rate {
        opts.decay_rate = g;
    }
    if let Some(f) = a.fourier_freq_hz {
        opts.fourier_freq_hz = f;
    }
    if a.free_threshold {
        opts.threshold = ThresholdMode::Free;
    }
    if !(opts.p_thr_w > 0.0 && opts.decay_rate > 0.0 && opts.fourier_freq_hz >= 0.0) {
        return Err(CliError::Config("threshold power and decay rate must be positive".into()));
    }
    if a.curve_points < 2 {
        return Err(CliError::Config("--curve-points must be at least 2".into()));
    }
    let result = fit_pump_sweep(&points, &opts).map_err(|e| input_error(&a.sweep, e))?;

    fs::create_dir_all(&a.out)?;
    write_json(
        &a.out.join("fit.json"),
        &FitReport {
            input: a.sweep.display().to_string(),
            options: &opts,
            result: &result,
        },
    )?;
    // A fitted threshold rescales the pump axis of the curve.
    let mut curve_opts = opts;
    if let Some(p) = &result.p_thr_mw {
        curve_opts.p_thr_w = p.value * 1e-3;
    }
    let curve = model_curve(
        result.eta_total.value,
        result.theta_jitter.value,
        &curve_opts,
        0.95,
        a.curve_points,
    );
    let mut w = csv::Writer::from_writer(create(&a.out.join("model_curve.csv"))?);
    w.write_record(["pump_ratio", "v_minus_dB", "v_plus_dB"])
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    for (r, m, p) in curve {
        w.write_record([format!("{r:.4}"), format!("{m:.6}"), format!("{p:.6}")])
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    w.flush()?;

    println!(
        "eta_total = {:.4} +/- {:.4}, theta_jitter = {:.3} +/- {:.3} mrad (95% interval {:.3} to {:.3} mrad), residual rms {:.4} dB over {} points",
        result.eta_total.value,
        result.eta_total.sigma,
        result.theta_jitter.value * 1e3,
        result.theta_jitter.sigma * 1e3,
        result.theta_interval_95.0 * 1e3,
        result.theta_interval_95.1 * 1e3,
        result.residual_rms,
        result.n_points
    );
    if let Some(p) = &result.p_thr_mw {
        println!("p_thr = {:.1} +/- {:.1} mW", p.value, p.sigma);
    }
    if result.eta_at_bound {
        println!("warning: efficiency pegged at its bound");
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct AnalyzeReport<'a> {
    input: String,
    thresholds_db: &'a [f64],
    bin_width_db: f64,
    report: &'a squeezelab::characterize::DutyCycleReport,
    summary: &'a squeezelab::characterize::TraceSummary,
}

fn analyze(a: AnalyzeArgs) -> Result<ExitCode, CliError> {
    let file = File::open(&a.trace).map_err(|e| CliError::Config(format!("{}: {e}", a.trace.display())))?;
    let records = read_trace(file).map_err(|e| input_error(&a.trace, e))?;
    validate_trace(&records).map_err(|e| input_error(&a.trace, e))?;
    let thresholds: Vec<f64> = if a.thresholds.is_empty() {
        DEFAULT_THRESHOLDS_DB.to_vec()
    } else {
        a.thresholds.clone()
    };
    if !(a.bin_width > 0.0 && a.bin_width.is_finite()) {
        return Err(CliError::Config(format!("--bin-width must be positive, got {}", a.bin_width)));
    }
    let report = duty_cycle_report(&records, &thresholds, a.bin_width).map_err(|e| input_error(&a.trace, e))?;
    let summary = summarize_trace(&records).map_err(|e| input_error(&a.trace, e))?;

    fs::create_dir_all(&a.out)?;
    write_json(
        &a.out.join("duty_report.json"),
        &AnalyzeReport {
            input: a.trace.display().to_string(),
            thresholds_db: &thresholds,
            bin_width_db: a.bin_width,
            report: &report,
            summary: &summary,
        },
    )?;
    let mut w = csv::Writer::from_writer(create(&a.out.join("histogram.csv"))?);
    w.write_record(["bin_low_dB", "bin_high_dB", "count"])
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let h = &report.histogram;
    for (edges, count) in h.bin_edges_db.windows(2).zip(&h.counts) {
        w.write_record([format!("{:.4}", edges[0]), format!("{:.4}", edges[1]), count.to_string()])
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    w.flush()?;

    println!(
        "{:.1} h, {} samples, lock fraction {:.4}, mean {:.3} dB (dB of mean variance {:.3}), max {:.3} dB, relocks {}",
        report.total_duration_s / 3600.0,
        report.n_samples,
        report.lock_fraction,
        summary.mean_db_of_db,
        summary.db_of_mean_variance,
        summary.max_db,
        summary.relock_count
    );
    for p in &report.cumulative {
        println!(
            "  >= {:5.1} dB: {:.4} of time ({:.4} of locked time)",
            p.threshold_db, p.duty, p.duty_of_locked
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn num(v: f64) -> String {
    if v != 0.0 && !(1e-3..1e4).contains(&v.abs()) {
        format!("{v:.4e}")
    } else {
        format!("{v:.4}")
    }
}

#[derive(Serialize)]
struct ConsistencyOutput<'a> {
    params: &'a ModelParams,
    all_enforced_pass: bool,
    checks: &'a [squeezelab::opa_model::AnchorCheck],
}

fn consistency(a: ConsistencyArgs) -> Result<ExitCode, CliError> {
    let bad = |e: squeezelab::opa_model::ModelError| CliError::Config(e.to_string());
    let mut params = ModelParams::default();
    if let Some(eta) = a.eta {
        params = params.with_efficiency(eta).map_err(bad)?;
    }
    if let Some(t) = a.theta_mrad {
        params = params.with_phase_jitter(t * 1e-3).map_err(bad)?;
    }
    if let Some(p) = a.p_thr_mw {
        params.threshold_power_w = p * 1e-3;
        params.validate().map_err(bad)?;
    }
    if let Some(g) = a.decay_rate {
        params = params.with_decay_rate(g).map_err(bad)?;
    }
    let report = consistency_report(&params).map_err(bad)?;
    let pass = report.all_enforced_pass();
    if a.json {
        let out = ConsistencyOutput {
            params: &params,
            all_enforced_pass: pass,
            checks: &report.checks,
        };
        println!(
            "{}",
            serde_json::to_string_pretty(&out).map_err(|e| CliError::Runtime(e.to_string()))?
        );
    } else {
        for c in &report.checks {
            let verdict = match (c.enforced, c.passed) {
                (true, true) => "PASS",
                (true, false) => "FAIL",
                (false, true) => "info",
                (false, false) => "info (outside band)",
            };
            println!(
                "{:<32} {:>12} {:<6} reference {:<10} band [{}, {}]  {verdict}",
                c.name,
                num(c.value),
                c.unit,
                num(c.reference),
                num(c.lower),
                num(c.upper)
            );
        }
        println!("{}", if pass { "all enforced checks pass" } else { "some enforced checks fail" });
    }
    Ok(if pass { ExitCode::SUCCESS } else { ExitCode::from(1) })
}
