use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use drmpc::config::{load_config, SimConfig};
use drmpc::conic::Settings;
use drmpc::dpmm::{MixtureEstimate, Posterior};
use drmpc::mpc::Mpc;
use drmpc::regulator::synthesize;
use drmpc::sim::{metrics, read_samples_csv, run_all, write_log_csv, ControllerMode, SimError};
use drmpc::tightening::{solve_eta, worst_case_eta, AmbiguitySet};

#[derive(Parser)]
#[command(name = "drmpc", version, about = "Online-learning risk-averse stochastic MPC toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the closed-loop study of a scenario and write per-run CSV logs
    /// plus a JSON summary.
    Sim(SimArgs),
    /// Tightening parameters for a mixture given as JSON.
    Tighten(TightenArgs),
    /// Fit the mixture learner to a sample CSV and print the mixture JSON.
    Learn(LearnArgs),
    /// Terminal set in the polytope text format.
    Mrpi(MrpiArgs),
    /// LQR gain, Riccati solution and closed loop of the scenario plant.
    Lqr(LqrArgs),
}

#[derive(Args)]
struct Common {
    /// Scenario configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Solver tolerance override.
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Args)]
struct SimArgs {
    #[command(flatten)]
    common: Common,
    /// Number of closed-loop runs.
    #[arg(long)]
    runs: Option<usize>,
    /// Base seed of the per-run random streams.
    #[arg(long)]
    seed: Option<u64>,
    /// Controller variant.
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Output directory (defaults to the config's out_dir, then ".").
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TightenArgs {
    #[command(flatten)]
    common: Common,
    /// Mixture JSON file.
    mixture: PathBuf,
    /// Output file (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LearnArgs {
    #[command(flatten)]
    common: Common,
    /// Sample CSV, one disturbance per line.
    samples: PathBuf,
    /// Output file (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MrpiArgs {
    #[command(flatten)]
    common: Common,
    /// Mixture JSON; the terminal set for its tightening is computed.
    /// Without it the worst-case terminal set is printed.
    mixture: Option<PathBuf>,
    /// Output file (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LqrArgs {
    #[command(flatten)]
    common: Common,
    /// Output file (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    OnlineLearning,
    GlobalMoment,
    NoLearning,
}

impl From<Mode> for ControllerMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::OnlineLearning => ControllerMode::OnlineLearning,
            Mode::GlobalMoment => ControllerMode::GlobalMoment,
            Mode::NoLearning => ControllerMode::NoLearning,
        }
    }
}

/// Mixture on disk: matrices as nested row arrays.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MixtureJson {
    m: usize,
    gamma: Vec<f64>,
    mu: Vec<Vec<f64>>,
    #[serde(rename = "Sigma")]
    sigma: Vec<Vec<Vec<f64>>>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl From<&MixtureEstimate> for MixtureJson {
    fn from(mix: &MixtureEstimate) -> Self {
        MixtureJson {
            m: mix.m(),
            gamma: mix.gamma.clone(),
            mu: mix.mu.iter().map(|v| v.iter().copied().collect()).collect(),
            sigma: mix.sigma.iter().map(rows).collect(),
        }
    }
}

impl MixtureJson {
    fn into_estimate(self) -> Result<MixtureEstimate, Failure> {
        let bad = |s: &str| Failure::Input(format!("mixture: {s}"));
        if self.gamma.len() != self.m || self.mu.len() != self.m || self.sigma.len() != self.m {
            return Err(bad("m does not match the component lists"));
        }
        let mut sigma = Vec::with_capacity(self.m);
        for s in &self.sigma {
            let n = s.len();
            if s.iter().any(|r| r.len() != n) {
                return Err(bad("Sigma entries must be square"));
            }
            sigma.push(DMatrix::from_fn(n, n, |i, j| s[i][j]));
        }
        Ok(MixtureEstimate { gamma: self.gamma, mu: self.mu.into_iter().map(DVector::from_vec).collect(), sigma })
    }
}

#[derive(Serialize)]
struct LqrJson {
    #[serde(rename = "K")]
    k: Vec<Vec<f64>>,
    #[serde(rename = "P")]
    p: Vec<Vec<f64>>,
    #[serde(rename = "Phi")]
    phi: Vec<Vec<f64>>,
    #[serde(rename = "PsiTilde")]
    psi_tilde: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct TightenJson {
    eta: Vec<f64>,
    eta0: Vec<f64>,
    status: Vec<String>,
    dual_objective: Vec<Option<f64>>,
    fallback: Vec<bool>,
}

enum Failure {
    Config(String),
    Input(String),
    InitialInfeasible(String),
    Run(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::InitialInfeasible(_) => 2,
            _ => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Input(m) | Failure::InitialInfeasible(m) | Failure::Run(m) => m,
        }
    }
}

fn load(common: &Common) -> Result<SimConfig, Failure> {
    let mut cfg = load_config(&common.config).map_err(|e| Failure::Config(e.to_string()))?;
    if let Some(tol) = common.tol {
        if !(tol > 0.0 && tol.is_finite()) {
            return Err(Failure::Config(format!("--tol must be positive, got {tol}")));
        }
        let max_iter = cfg.scenario.cfg.solver.max_iter;
        cfg.scenario.cfg.solver = Settings { max_iter, ..Settings::with_tol(tol) };
    }
    Ok(cfg)
}

fn emit(text: &str, out: Option<&Path>) -> Result<(), Failure> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| Failure::Input(format!("cannot write {}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("plain data serializes");
    s.push('\n');
    s
}

fn read_mixture(path: &Path) -> Result<MixtureEstimate, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Input(format!("cannot read {}: {e}", path.display())))?;
    let json: MixtureJson =
        serde_json::from_str(&text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    json.into_estimate()
}

fn cmd_sim(args: SimArgs) -> Result<(), Failure> {
    let cfg = load(&args.common)?;
    let mut scn = cfg.scenario.clone();
    if let Some(r) = args.runs {
        scn.runs = r;
    }
    if let Some(s) = args.seed {
        scn.seed = s;
    }
    if let Some(m) = args.mode {
        scn.mode = m.into();
    }
    scn.validate().map_err(|e| Failure::Config(e.to_string()))?;
    let out = args.out.or(cfg.out_dir).unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&out).map_err(|e| Failure::Input(format!("cannot create {}: {e}", out.display())))?;

    let results = run_all(&scn).map_err(|e| Failure::Run(e.to_string()))?;
    let mut logs = Vec::with_capacity(results.len());
    let mut first_err: Option<(usize, SimError)> = None;
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(log) => {
                let path = out.join(format!("{}_{i}.csv", scn.name));
                let file = fs::File::create(&path).map_err(|e| Failure::Input(format!("cannot write {}: {e}", path.display())))?;
                write_log_csv(&log, file).map_err(|e| Failure::Input(e.to_string()))?;
                logs.push(log);
            }
            Err(e) => {
                if first_err.is_none() {
                    first_err = Some((i, e));
                }
            }
        }
    }
    let summary = metrics(&logs, &scn);
    let path = out.join(format!("{}_summary.json", scn.name));
    emit(&to_json(&summary), Some(&path))?;
    println!(
        "{}: {} runs, mean cost {}, violation {:?}%",
        scn.name, summary.runs, summary.mean_cost, summary.violation_pct
    );
    match first_err {
        None => Ok(()),
        Some((i, SimError::InitialInfeasible)) => {
            Err(Failure::InitialInfeasible(format!("run {i}: {}", SimError::InitialInfeasible)))
        }
        Some((i, e)) => Err(Failure::Run(format!("run {i}: {e}"))),
    }
}

fn cmd_tighten(args: TightenArgs) -> Result<(), Failure> {
    let cfg = load(&args.common)?;
    let mpc = &cfg.scenario.cfg;
    let mix = read_mixture(&args.mixture)?;
    let amb = AmbiguitySet::new(mpc.w_set.clone(), mix).map_err(|e| Failure::Input(e.to_string()))?;
    let res = solve_eta(&amb, mpc.h(), &mpc.eps, mpc.beta_nonneg, &mpc.solver).map_err(|e| Failure::Run(e.to_string()))?;
    let eta0 = worst_case_eta(&mpc.w_set, mpc.h()).map_err(|e| Failure::Run(e.to_string()))?;
    let json = TightenJson {
        eta: res.eta.iter().copied().collect(),
        eta0: eta0.iter().copied().collect(),
        status: res.status.iter().map(|s| format!("{s:?}")).collect(),
        dual_objective: res.dual_objective.iter().map(|d| d.is_finite().then_some(*d)).collect(),
        fallback: res.fallback,
    };
    emit(&to_json(&json), args.out.as_deref())
}

fn cmd_learn(args: LearnArgs) -> Result<(), Failure> {
    let cfg = load(&args.common)?;
    let file = fs::File::open(&args.samples)
        .map_err(|e| Failure::Input(format!("cannot read {}: {e}", args.samples.display())))?;
    let samples = read_samples_csv(file).map_err(|e| Failure::Input(format!("{}: {e}", args.samples.display())))?;
    let n = cfg.scenario.cfg.n();
    if let Some(s) = samples.iter().find(|s| s.len() != n) {
        return Err(Failure::Input(format!("samples have {} columns, the plant has {n} states", s.len())));
    }
    let mut post = Posterior::with_settings(cfg.scenario.prior.clone(), cfg.scenario.learner)
        .map_err(|e| Failure::Config(e.to_string()))?;
    post.observe(&samples).map_err(|e| Failure::Run(e.to_string()))?;
    let mix = post.extract(&cfg.scenario.cfg.w_set).map_err(|e| Failure::Run(e.to_string()))?;
    emit(&to_json(&MixtureJson::from(&mix)), args.out.as_deref())
}

fn cmd_mrpi(args: MrpiArgs) -> Result<(), Failure> {
    let cfg = load(&args.common)?;
    let mpc = Mpc::new(cfg.scenario.cfg.clone()).map_err(|e| Failure::Run(e.to_string()))?;
    let set = match &args.mixture {
        None => mpc.fallback_terminal().clone(),
        Some(p) => {
            let mix = read_mixture(p)?;
            let res = mpc.tighten(&mix).map_err(|e| Failure::Run(e.to_string()))?;
            let mut online = cfg.scenario.cfg.clone();
            online.terminal_mode = drmpc::mpc::TerminalMode::OnlineMrpi;
            let online = Mpc::new(online).map_err(|e| Failure::Run(e.to_string()))?;
            online.build_sets(&res.eta, 0).map_err(|e| Failure::Run(e.to_string()))?.zf
        }
    };
    emit(&set.to_string(), args.out.as_deref())
}

fn cmd_lqr(args: LqrArgs) -> Result<(), Failure> {
    let cfg = load(&args.common)?;
    let reg = synthesize(&cfg.scenario.cfg.plant).map_err(|e| Failure::Run(e.to_string()))?;
    let json = LqrJson { k: rows(&reg.k), p: rows(&reg.p), phi: rows(&reg.phi), psi_tilde: rows(&reg.psi_tilde) };
    emit(&to_json(&json), args.out.as_deref())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Sim(a) => cmd_sim(a),
        Command::Tighten(a) => cmd_tighten(a),
        Command::Learn(a) => cmd_learn(a),
        Command::Mrpi(a) => cmd_mrpi(a),
        Command::Lqr(a) => cmd_lqr(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
