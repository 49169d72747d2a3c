use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use score_kit::io::{read_calibration, read_features, read_tests};
use score_kit::models::{LogisticFitConfig, LogisticWeightModel, Method, ScoreMode};
use score_kit::simulate::{
    fmt_f64, run_experiment, write_metrics_csv, BoostMode, DgpSetting, ExperimentConfig,
    RewardKind, RiskKind, ShiftModel, WeightSource,
};
use score_kit::testing::{boost_hete, boost_homo, ebh, sample_xi, BoostDraws, SelectionResult};
use score_kit::{
    boosted_mdr_decide, mdr_decide, sdr_evalues, sdr_evalues_conservative, weighted_mdr_decide,
    weighted_sdr_evalues, CalibSample, Levels, ScoreError, SdrEvalueSet, TestPoint,
};

#[derive(Parser)]
#[command(
    name = "score-kit",
    version,
    about = "Selective conformal risk control with e-values"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decide which test points to deploy.
    Select(SelectArgs),
    /// Print per-test-point SDR e-values.
    Evalues(EvalueArgs),
    /// Run a synthetic benchmark and write a metrics CSV.
    Simulate(SimulateArgs),
    /// Fit a density-ratio model and write per-row weights.
    EstimateWeights(WeightArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Mdr,
    Sdr,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Mdr => Method::Mdr,
            MethodArg::Sdr => Method::Sdr,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BoostArg {
    None,
    Hete,
    Homo,
}

impl From<BoostArg> for BoostMode {
    fn from(b: BoostArg) -> Self {
        match b {
            BoostArg::None => BoostMode::None,
            BoostArg::Hete => BoostMode::Hete,
            BoostArg::Homo => BoostMode::Homo,
        }
    }
}

#[derive(Args)]
struct SelectArgs {
    /// Calibration CSV with columns `score,risk[,weight]`.
    calib: PathBuf,
    /// Test CSV with columns `score[,weight]`.
    test: PathBuf,
    #[arg(long, value_enum, default_value = "sdr")]
    method: MethodArg,
    #[arg(long)]
    alpha: f64,
    /// Calibration level; defaults to `--alpha`.
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, value_enum, default_value = "none")]
    boost: BoostArg,
    /// Use the weight columns of both files.
    #[arg(long)]
    weighted: bool,
    /// Use the conservative SDR e-values.
    #[arg(long)]
    conservative: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalueArgs {
    calib: PathBuf,
    test: PathBuf,
    #[arg(long)]
    gamma: f64,
    #[arg(long)]
    weighted: bool,
    /// Conservative construction at level `--gamma`.
    #[arg(long)]
    conservative: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum RiskArg {
    Excess,
    L2,
    Sigmoid,
    Binary,
    BinaryAllOne,
    Zero,
}

#[derive(Clone, Copy, ValueEnum)]
enum RewardArg {
    Constant,
    Squared,
}

#[derive(Clone, Copy, ValueEnum)]
enum ShiftArg {
    None,
    W1,
    W2,
    W3,
}

#[derive(Clone, Copy, ValueEnum)]
enum WeightArg {
    Estimated,
    True,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScoreModeArg {
    RiskPrediction,
    RiskRewardRatio,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=6))]
    setting: u8,
    /// Risk function; defaults to the one paired with the setting.
    #[arg(long, value_enum)]
    risk: Option<RiskArg>,
    #[arg(long, value_enum, default_value = "constant")]
    reward: RewardArg,
    #[arg(long, value_enum, default_value = "none")]
    shift: ShiftArg,
    /// Weight source under shift.
    #[arg(long, value_enum, default_value = "estimated")]
    weighted: WeightArg,
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long, default_value_t = 100)]
    m: usize,
    #[arg(long, default_value_t = 100)]
    reps: usize,
    /// Comma-separated levels.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "0.05,0.1,0.15,0.2,0.25,0.3,0.35,0.4,0.45,0.5"
    )]
    alphas: Vec<f64>,
    #[arg(long, value_enum, default_value = "sdr")]
    method: MethodArg,
    #[arg(long, value_enum, default_value = "none")]
    boost: BoostArg,
    #[arg(long, value_enum, default_value = "risk-prediction")]
    score_mode: ScoreModeArg,
    /// Also report the concentration-bound baselines.
    #[arg(long)]
    baselines: bool,
    #[arg(long)]
    conservative: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct WeightArgs {
    /// Source-population features (one numeric column per feature).
    source: PathBuf,
    /// Target-population features with the same columns.
    target: PathBuf,
    /// Rows to score; defaults to the source file.
    #[arg(long)]
    query: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 500)]
    iters: usize,
    /// Output bounds `lo,hi`.
    #[arg(long, value_parser = parse_clip, default_value = "0.05,20")]
    clip: (f64, f64),
}

fn parse_clip(raw: &str) -> Result<(f64, f64), String> {
    let parts: Vec<&str> = raw.split(',').map(str::trim).collect();
    let [lo, hi] = parts[..] else {
        return Err(format!("expected `lo,hi`, got {raw:?}"));
    };
    let num = |v: &str| {
        v.parse::<f64>()
            .map_err(|_| format!("cannot parse {v:?} as a number"))
    };
    Ok((num(lo)?, num(hi)?))
}

enum CliError {
    Usage(String),
    Data(String),
    Internal(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Internal(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Internal(m) => m,
        }
    }
}

impl From<ScoreError> for CliError {
    fn from(e: ScoreError) -> Self {
        let msg = e.to_string();
        match e {
            ScoreError::InvalidAlpha(_)
            | ScoreError::InvalidGamma(_)
            | ScoreError::InvalidConfig(_)
            | ScoreError::InvalidDraws
            | ScoreError::InvalidGrid(_)
            | ScoreError::UnknownSetting(_)
            | ScoreError::KTooLarge { .. } => CliError::Usage(msg),
            ScoreError::DivergedFit | ScoreError::SamplingStalled { .. } => CliError::Internal(msg),
            _ => CliError::Data(msg),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {}", e.message());
        return ExitCode::from(e.code());
    }
    let result = match cli.command {
        Command::Select(a) => cmd_select(a),
        Command::Evalues(a) => cmd_evalues(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::EstimateWeights(a) => cmd_estimate_weights(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var("SCORE_KIT_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::Usage(format!(
            "SCORE_KIT_THREADS must be a positive integer, got {raw:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Internal(e.to_string()))
}

/// The given seed, or a fresh one that is echoed for replay.
fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let s = rand::random::<u64>();
        eprintln!("seed: {s}");
        s
    })
}

fn open(path: &Path) -> CliResult<File> {
    File::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn with_path<T>(path: &Path, r: score_kit::Result<T>) -> CliResult<T> {
    r.map_err(|e| {
        let err = CliError::from(e);
        match err {
            CliError::Data(m) => CliError::Data(format!("{}: {m}", path.display())),
            other => other,
        }
    })
}

fn output(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_err(e: io::Error) -> CliError {
    CliError::Data(format!("write failed: {e}"))
}

fn load_inputs(
    calib: &Path,
    test: &Path,
    weighted: bool,
) -> CliResult<(Vec<CalibSample>, Vec<TestPoint>)> {
    let calib_text = io::read_to_string(open(calib)?)
        .map_err(|e| CliError::Data(format!("{}: {e}", calib.display())))?;
    let test_text = io::read_to_string(open(test)?)
        .map_err(|e| CliError::Data(format!("{}: {e}", test.display())))?;
    if weighted {
        for (path, text) in [(calib, &calib_text), (test, &test_text)] {
            let header = text.lines().next().unwrap_or("");
            if !header
                .split(',')
                .any(|h| h.trim().eq_ignore_ascii_case("weight"))
            {
                return Err(CliError::Data(format!(
                    "{}: line 1: missing column `weight`",
                    path.display()
                )));
            }
        }
    }
    let c = with_path(calib, read_calibration(calib_text.as_bytes()))?;
    let t = with_path(test, read_tests(test_text.as_bytes()))?;
    Ok((c, t))
}

fn compute_evalues(
    calib: &[CalibSample],
    tests: &[TestPoint],
    level: f64,
    weighted: bool,
    conservative: bool,
) -> CliResult<SdrEvalueSet> {
    Ok(match (conservative, weighted) {
        (true, true) => {
            return Err(CliError::Usage(
                "--conservative cannot be combined with --weighted".into(),
            ))
        }
        (true, false) => sdr_evalues_conservative(calib, tests, level)?,
        (false, true) => weighted_sdr_evalues(calib, tests, level)?,
        (false, false) => sdr_evalues(calib, tests, level)?,
    })
}

fn cmd_select(a: SelectArgs) -> CliResult<()> {
    let levels = Levels::with_gamma(a.alpha, a.gamma.unwrap_or(a.alpha))?;
    let (calib, tests) = load_inputs(&a.calib, &a.test, a.weighted)?;
    let boost = BoostMode::from(a.boost);
    let mut rng = match boost {
        BoostMode::None => None,
        _ => Some(ChaCha8Rng::seed_from_u64(resolve_seed(a.seed))),
    };
    let mut out = output(a.out.as_deref())?;

    match a.method {
        MethodArg::Mdr => {
            if a.conservative {
                return Err(CliError::Usage(
                    "--conservative applies to --method sdr only".into(),
                ));
            }
            // The homogeneous divisor is drawn once per invocation.
            let shared_xi = match (boost, rng.as_mut()) {
                (BoostMode::Homo, Some(r)) => Some(sample_xi(r)),
                _ => None,
            };
            writeln!(out, "index,score,deploy").map_err(write_err)?;
            for (j, t) in tests.iter().enumerate() {
                let point = if a.weighted {
                    *t
                } else {
                    TestPoint::new(t.score)
                };
                let xi = match (boost, rng.as_mut()) {
                    (BoostMode::Hete, Some(r)) => Some(sample_xi(r)),
                    _ => shared_xi,
                };
                let d = match xi {
                    Some(xi) => boosted_mdr_decide(&calib, point, levels, xi, a.weighted)?,
                    None if a.weighted => weighted_mdr_decide(&calib, point, levels)?,
                    None => mdr_decide(&calib, t.score, levels)?,
                };
                writeln!(out, "{j},{},{}", fmt_f64(t.score), u8::from(d.deploy))
                    .map_err(write_err)?;
            }
        }
        MethodArg::Sdr => {
            let level = if a.conservative {
                levels.alpha()
            } else {
                levels.gamma()
            };
            let set = compute_evalues(&calib, &tests, level, a.weighted, a.conservative)?;
            let selection: SelectionResult = match (boost, rng.as_mut()) {
                (BoostMode::Hete, Some(r)) => {
                    boost_hete(&set.evalues, a.alpha, &BoostDraws::sample(tests.len(), r))?
                }
                (BoostMode::Homo, Some(r)) => boost_homo(&set.evalues, a.alpha, sample_xi(r))?,
                _ => ebh(&set.evalues, a.alpha)?,
            };
            writeln!(out, "index,score,evalue,selected").map_err(write_err)?;
            for (j, t) in tests.iter().enumerate() {
                let e = fmt_f64(set.evalues[j].get());
                writeln!(
                    out,
                    "{j},{},{e},{}",
                    fmt_f64(t.score),
                    u8::from(selection.is_selected(j))
                )
                .map_err(write_err)?;
            }
        }
    }
    out.flush().map_err(write_err)
}

fn cmd_evalues(a: EvalueArgs) -> CliResult<()> {
    let (calib, tests) = load_inputs(&a.calib, &a.test, a.weighted)?;
    let set = compute_evalues(&calib, &tests, a.gamma, a.weighted, a.conservative)?;
    let mut out = output(a.out.as_deref())?;
    let opt = |t: Option<f64>| t.map(fmt_f64).unwrap_or_default();
    writeln!(out, "index,score,evalue,threshold_at_0,threshold_at_1").map_err(write_err)?;
    for (j, t) in tests.iter().enumerate() {
        writeln!(
            out,
            "{j},{},{},{},{}",
            fmt_f64(t.score),
            fmt_f64(set.evalues[j].get()),
            opt(set.thresholds_at_0[j]),
            opt(set.thresholds_at_1[j])
        )
        .map_err(write_err)?;
    }
    out.flush().map_err(write_err)
}

fn cmd_simulate(a: SimulateArgs) -> CliResult<()> {
    let setting = DgpSetting::new(a.setting)?;
    let risk = match a.risk {
        None => setting.default_risk(),
        Some(RiskArg::Excess) => RiskKind::Excess { c: 2.0 },
        Some(RiskArg::L2) => match setting.default_risk() {
            l2 @ RiskKind::L2 { .. } => l2,
            _ => RiskKind::L2 { c: 0.5 },
        },
        Some(RiskArg::Sigmoid) => RiskKind::Sigmoid { tau: 10.0 },
        Some(RiskArg::Binary) => RiskKind::Binary { c: 0.0 },
        Some(RiskArg::BinaryAllOne) => RiskKind::Binary { c: f64::INFINITY },
        Some(RiskArg::Zero) => RiskKind::Binary {
            c: f64::NEG_INFINITY,
        },
    };
    let cfg = ExperimentConfig {
        risk,
        reward: match a.reward {
            RewardArg::Constant => RewardKind::Constant,
            RewardArg::Squared => RewardKind::Squared,
        },
        shift: match a.shift {
            ShiftArg::None => ShiftModel::None,
            ShiftArg::W1 => ShiftModel::W1,
            ShiftArg::W2 => ShiftModel::W2,
            ShiftArg::W3 => ShiftModel::W3,
        },
        weights: match a.weighted {
            WeightArg::Estimated => WeightSource::Estimated,
            WeightArg::True => WeightSource::True,
        },
        n: a.n,
        m: a.m,
        reps: a.reps,
        alpha_grid: a.alphas,
        boost: a.boost.into(),
        score_mode: match a.score_mode {
            ScoreModeArg::RiskPrediction => ScoreMode::RiskPrediction,
            ScoreModeArg::RiskRewardRatio => ScoreMode::RiskRewardRatio,
        },
        conservative: a.conservative,
        baselines: a.baselines,
        seed: resolve_seed(a.seed),
        ..ExperimentConfig::new(a.setting, a.method.into())?
    };
    let rows = run_experiment(&cfg)?;
    let out = output(a.out.as_deref())?;
    write_metrics_csv(&rows, out)?;
    Ok(())
}

fn cmd_estimate_weights(a: WeightArgs) -> CliResult<()> {
    let config = LogisticFitConfig {
        lr: a.lr,
        iters: a.iters,
        clip: a.clip,
    };
    let read = |p: &Path| with_path(p, read_features(open(p)?));
    let (src_header, source) = read(&a.source)?;
    let (tgt_header, target) = read(&a.target)?;
    if src_header != tgt_header {
        return Err(CliError::Data(format!(
            "{}: columns {:?} do not match {}: {:?}",
            a.target.display(),
            tgt_header,
            a.source.display(),
            src_header
        )));
    }
    let query = match &a.query {
        Some(q) => {
            let (h, rows) = read(q)?;
            if h != src_header {
                return Err(CliError::Data(format!(
                    "{}: columns {h:?} do not match the source columns",
                    q.display()
                )));
            }
            rows
        }
        None => source.clone(),
    };
    let model = LogisticWeightModel::fit(&source, &target, config)?;
    eprintln!("final loss: {}", fmt_f64(model.final_loss));
    let weights = model.predict_many(&query)?;
    let mut out = output(a.out.as_deref())?;
    writeln!(out, "index,weight").map_err(write_err)?;
    for (i, w) in weights.iter().enumerate() {
        writeln!(out, "{i},{}", fmt_f64(*w)).map_err(write_err)?;
    }
    out.flush().map_err(write_err)
}
