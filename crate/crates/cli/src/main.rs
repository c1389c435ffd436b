use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use momentshift::channels::{NoiseModel, NoiseSpec};
use momentshift::estimator::{self, EstimationRun};
use momentshift::hubbard::{self, HubbardModel, PurityExperiment};
use momentshift::moments::{moment, moment_observable};
use momentshift::overhead::{self, OverheadMethod, SweepConfig, SynthesisSource};
use momentshift::protocols::{noisy_copies, RetrievalProtocol};
use momentshift::random::seeded_density;
use momentshift::verify::{self, Suite};
use momentshift::{Error, Operator};

mod format;

use format::g12;

#[derive(Parser, Debug)]
#[command(name = "momentshift", version, about = "Noise-resilient estimation of state moments tr[rho^k]")]
struct Cli {
    /// Write machine-readable output here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Output format; each command has its own default.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Solver tolerance.
    #[arg(long, global = true, default_value_t = 1e-7)]
    tol: f64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum NoiseArg {
    Depolarizing,
    AmplitudeDamping,
}

impl From<NoiseArg> for NoiseModel {
    fn from(n: NoiseArg) -> Self {
        match n {
            NoiseArg::Depolarizing => NoiseModel::Depolarizing,
            NoiseArg::AmplitudeDamping => NoiseModel::AmplitudeDamping,
        }
    }
}

#[derive(Args, Debug)]
struct NoiseArgs {
    #[arg(long, value_enum)]
    noise: NoiseArg,
    #[arg(long)]
    eps: f64,
    /// Qubits per copy.
    #[arg(long, default_value_t = 1)]
    n: usize,
}

impl NoiseArgs {
    fn spec(&self) -> momentshift::Result<NoiseSpec> {
        NoiseSpec::new(self.noise.into(), self.eps, self.n)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a retrieval protocol and write it as JSON.
    Synthesize {
        #[command(flatten)]
        noise: NoiseArgs,
        #[arg(long, default_value_t = 2)]
        k: usize,
        /// Solve the observable-shift program even when a closed form exists.
        #[arg(long)]
        force_sdp: bool,
    },
    /// Compare sampling overheads of the mitigation methods across noise levels.
    OverheadSweep {
        #[arg(long, value_enum)]
        noise: NoiseArg,
        #[arg(long, default_value_t = 1)]
        n: usize,
        #[arg(long, default_value_t = 2)]
        k: usize,
        /// Explicit comma-separated noise levels; overrides the range flags.
        #[arg(long, value_delimiter = ',')]
        eps: Vec<f64>,
        #[arg(long, default_value_t = 0.0)]
        eps_min: f64,
        #[arg(long, default_value_t = 0.3)]
        eps_max: f64,
        #[arg(long, default_value_t = 7)]
        points: usize,
        #[arg(long, value_delimiter = ',', default_value = "shift,inverse,recover")]
        methods: Vec<String>,
    },
    /// Estimate tr[rho^k] from a protocol file by simulated sampling.
    Estimate {
        #[arg(long)]
        protocol: PathBuf,
        /// `random`, `mixed`, `hubbard`, or a path to a JSON matrix.
        #[arg(long, default_value = "random")]
        state: String,
        /// Noise override; defaults to the noise recorded in the protocol.
        #[arg(long, value_enum, requires = "eps")]
        noise: Option<NoiseArg>,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long, default_value_t = 1)]
        n: usize,
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
        #[arg(long, default_value_t = 0.05)]
        fail_prob: f64,
        /// Fixed shot count instead of the Hoeffding plan.
        #[arg(long)]
        shots: Option<u64>,
        /// Evaluate exactly instead of sampling.
        #[arg(long)]
        exact: bool,
        /// Also report the Renyi entropy of this order.
        #[arg(long)]
        renyi: Option<u32>,
    },
    /// Run the built-in consistency checks.
    Verify {
        #[arg(long, value_enum, default_value = "all")]
        suite: SuiteArg,
    },
    /// Raw versus mitigated purity estimates on a Hubbard ground state.
    HubbardDemo {
        #[arg(long, default_value_t = 0.1)]
        eps: f64,
        /// Qubits of subsystem A (modes ordered site-major, spin up first).
        #[arg(long, value_delimiter = ',', default_value = "0,1")]
        subsystem: Vec<usize>,
        #[arg(long, default_value_t = 10_000)]
        shots: u64,
        #[arg(long, default_value_t = 200)]
        trials: u64,
        /// Also write the JSON summary here (CSV output only).
        #[arg(long)]
        summary: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SuiteArg {
    All,
    Sdp,
    Protocols,
    Moments,
    Hubbard,
}

impl From<SuiteArg> for Suite {
    fn from(s: SuiteArg) -> Self {
        match s {
            SuiteArg::All => Suite::All,
            SuiteArg::Sdp => Suite::Sdp,
            SuiteArg::Protocols => Suite::Protocols,
            SuiteArg::Moments => Suite::Moments,
            SuiteArg::Hubbard => Suite::Hubbard,
        }
    }
}

/// Exit codes.
const USAGE: u8 = 1;
const INFEASIBLE: u8 = 2;
const NOT_CONVERGED: u8 = 3;
const CHECK_FAILED: u8 = 4;

#[derive(Debug)]
enum Failure {
    Lib(Error),
    Io(String),
    Checks(usize),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

struct Output {
    path: Option<PathBuf>,
}

impl Output {
    fn write(&self, text: &str) -> io::Result<()> {
        match &self.path {
            Some(p) => fs::write(p, text),
            None => io::stdout().lock().write_all(text.as_bytes()),
        }
    }

    fn json<T: Serialize>(&self, value: &T) -> CmdResult {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        Ok(self.write(&s)?)
    }

    fn csv(&self, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> CmdResult {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for r in rows {
            w.write_record(&r)?;
        }
        let bytes = w.into_inner().map_err(|e| Failure::Io(e.to_string()))?;
        Ok(self.write(&String::from_utf8_lossy(&bytes))?)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Lib(e)) => {
            let code = match e {
                Error::Infeasible(_) => INFEASIBLE,
                Error::NotConverged(_) => NOT_CONVERGED,
                _ => USAGE,
            };
            eprintln!("error: {e}");
            ExitCode::from(code)
        }
        Err(Failure::Io(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(USAGE)
        }
        Err(Failure::Checks(n)) => {
            eprintln!("{n} check(s) failed");
            ExitCode::from(CHECK_FAILED)
        }
    }
}

fn run(cli: Cli) -> CmdResult {
    if !(cli.tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance {} must be positive", cli.tol)).into());
    }
    let out = Output { path: cli.out.clone() };
    match cli.command {
        Command::Synthesize { ref noise, k, force_sdp } => synthesize(&cli, &out, noise, k, force_sdp),
        Command::OverheadSweep { noise, n, k, ref eps, eps_min, eps_max, points, ref methods } => {
            let grid = if eps.is_empty() { overhead::linspace(eps_min, eps_max, points) } else { eps.clone() };
            let methods = methods.iter().map(|m| m.parse()).collect::<Result<Vec<OverheadMethod>, _>>()?;
            let cfg = SweepConfig { model: noise.into(), n, k, eps: grid, methods, tol: cli.tol };
            sweep(&cli, &out, &cfg)
        }
        Command::Estimate { ref protocol, ref state, noise, eps, n, delta, fail_prob, shots, exact, renyi } => {
            let noise = match (noise, eps) {
                (Some(m), Some(e)) => Some(NoiseSpec::new(m.into(), e, n)?),
                _ => None,
            };
            let opts = EstimateOpts { state, noise, delta, fail_prob, shots, exact, renyi };
            estimate(&cli, &out, protocol, &opts)
        }
        Command::Verify { suite } => {
            let report = verify::verify(suite.into());
            for c in &report.checks {
                eprintln!("{} {}/{}: {} (tol {})", if c.passed { "PASS" } else { "FAIL" }, c.suite, c.name, g12(c.value), g12(c.tolerance));
            }
            out.json(&report)?;
            let failed = report.checks.iter().filter(|c| !c.passed).count();
            if failed > 0 {
                return Err(Failure::Checks(failed));
            }
            Ok(())
        }
        Command::HubbardDemo { eps, ref subsystem, shots, trials, ref summary } => {
            let cfg = PurityExperiment { eps, subsystem: subsystem.clone(), shots, trials, seed: cli.seed };
            hubbard_demo(&cli, &out, &cfg, summary.as_deref())
        }
    }
}

fn synthesize(cli: &Cli, out: &Output, noise: &NoiseArgs, k: usize, force_sdp: bool) -> CmdResult {
    if cli.format == Some(Format::Csv) {
        return Err(Failure::Io("protocol files are JSON only".into()));
    }
    let spec = noise.spec()?;
    let s = overhead::synthesize(&spec, k, force_sdp, cli.tol)?;
    let source = match s.source {
        SynthesisSource::ClosedForm => "closed-form",
        SynthesisSource::Sdp => "sdp",
    };
    eprintln!("protocol  {}", s.protocol.label);
    eprintln!("source    {source}");
    eprintln!("f         {}", g12(s.protocol.f));
    eprintln!("t         {}", g12(s.protocol.t));
    match &s.solution {
        Some(sol) => {
            eprintln!("status    {:?}", sol.status);
            eprintln!("residuals primal {} dual {} after {} iterations", g12(sol.primal_residual), g12(sol.dual_residual), sol.iterations);
        }
        None => eprintln!("status    exact"),
    }
    Ok(out.write(&(s.protocol.to_json()? + "\n"))?)
}

fn sweep(cli: &Cli, out: &Output, cfg: &SweepConfig) -> CmdResult {
    let rows = overhead::overhead_sweep(cfg)?;
    for r in &rows {
        eprintln!("eps {:<8} {:<8} {} ({})", g12(r.eps), r.method, g12(r.overhead), r.status);
    }
    match cli.format.unwrap_or(Format::Csv) {
        Format::Json => out.json(&rows),
        Format::Csv => out.csv(
            &["eps", "method", "overhead", "status"],
            rows.iter().map(|r| vec![g12(r.eps), r.method.to_string(), g12(r.overhead), r.status.clone()]),
        ),
    }
}

struct EstimateOpts<'a> {
    state: &'a str,
    noise: Option<NoiseSpec>,
    delta: f64,
    fail_prob: f64,
    shots: Option<u64>,
    exact: bool,
    renyi: Option<u32>,
}

fn load_state(source: &str, d: usize, seed: u64) -> Result<Operator, Failure> {
    match source {
        "random" => Ok(seeded_density(d, seed)),
        "mixed" => Ok(Operator::identity(d).scale(1.0 / d as f64)),
        "hubbard" => {
            let h = hubbard::build_hamiltonian(&HubbardModel::reference_chain())?;
            let rho = hubbard::reduced_state(&hubbard::ground_state(&h)?, &hubbard::site_qubits(0))?;
            if rho.dim() != d {
                return Err(Error::DimensionMismatch(format!("Hubbard site state has dimension 4, protocol expects {d}")).into());
            }
            Ok(rho.with_dims(vec![d])?)
        }
        path => {
            let text = fs::read_to_string(path).map_err(|e| Failure::Io(format!("{path}: {e}")))?;
            let rows: Vec<Vec<[f64; 2]>> = serde_json::from_str(&text)?;
            let rho = Operator::from_pair_rows(&rows)?;
            if rho.dim() != d {
                return Err(Error::DimensionMismatch(format!("state has dimension {}, protocol expects {d}", rho.dim())).into());
            }
            if !rho.is_psd(1e-9) || (rho.trace().re - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidParameter(format!("{path} is not a density matrix")).into());
            }
            Ok(rho)
        }
    }
}

#[derive(Serialize)]
struct ExactReport {
    protocol: String,
    zeta: f64,
    f: f64,
    t: f64,
    estimate: f64,
    moment: f64,
}

fn estimate(cli: &Cli, out: &Output, path: &Path, opts: &EstimateOpts) -> CmdResult {
    let text = fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    let protocol = RetrievalProtocol::from_json(&text)?;
    let spec = opts
        .noise
        .or(protocol.noise)
        .ok_or_else(|| Error::InvalidParameter("protocol records no noise; pass --noise and --eps".into()))?;
    let noise = spec.channel()?;
    let rho = load_state(opts.state, protocol.copy_dim, cli.seed)?;
    let truth = moment(&rho, protocol.k);
    let value = if opts.exact {
        let h = moment_observable::<f64>(protocol.k, protocol.copy_dim)?.matrix;
        let zeta = protocol.exact_expectation(&noisy_copies(&noise, &rho, protocol.k)?, &h)?;
        let report = ExactReport { protocol: protocol.label.clone(), zeta, f: protocol.f, t: protocol.t, estimate: protocol.estimate_from(zeta), moment: truth };
        eprintln!("zeta      {}", g12(zeta));
        eprintln!("estimate  {}", g12(report.estimate));
        eprintln!("truth     {}", g12(truth));
        out.json(&report)?;
        report.estimate
    } else {
        let shots = match opts.shots {
            Some(s) => s,
            None => estimator::plan_shots(opts.delta, opts.fail_prob, protocol.f)?.shots,
        };
        let run = estimator::run(&protocol, &rho, &noise, shots, cli.seed).map_err(|e| match e {
            Error::Unsupported(m) => Error::Unsupported(format!("{m} (pass --exact)")),
            other => other,
        })?;
        eprintln!("shots     {}", run.shots);
        eprintln!("zeta_bar  {}", g12(run.zeta_bar));
        eprintln!("estimate  {} +/- {}", g12(run.estimate), g12(opts.delta));
        eprintln!("truth     {}", g12(truth));
        write_run(cli, out, &run)?;
        run.estimate
    };
    if let Some(alpha) = opts.renyi {
        match estimator::renyi_entropy(value, alpha, false) {
            Ok(hv) => eprintln!("renyi_{alpha}   {}", g12(hv)),
            Err(e) => eprintln!("renyi_{alpha}   undefined: {e}"),
        }
    }
    Ok(())
}

fn write_run(cli: &Cli, out: &Output, run: &EstimationRun) -> CmdResult {
    match cli.format.unwrap_or(Format::Json) {
        Format::Json => out.json(run),
        Format::Csv => out.csv(
            &["shot_index", "component", "outcome", "value"],
            (0..run.per_shot.len()).map(|i| {
                vec![i.to_string(), run.components[i].to_string(), run.outcomes[i].to_string(), g12(run.per_shot[i])]
            }),
        ),
    }
}

fn hubbard_demo(cli: &Cli, out: &Output, cfg: &PurityExperiment, summary_path: Option<&Path>) -> CmdResult {
    let result = hubbard::purity_experiment(&HubbardModel::reference_chain(), cfg)?;
    let s = &result.summary;
    if s.degenerate {
        eprintln!("warning: degenerate ground space; using the lowest-index eigenvector");
    }
    eprintln!("exact      {}", g12(s.exact));
    eprintln!("biased     {}", g12(s.biased));
    eprintln!("raw        {} +/- {}", g12(s.raw_mean), g12(s.raw_std_error));
    eprintln!("mitigated  {} +/- {}", g12(s.mitigated_mean), g12(s.mitigated_std_error));
    if let Ok(h2) = estimator::renyi_entropy(s.mitigated_mean, 2, false) {
        eprintln!("renyi_2    {} (exact {})", g12(h2), g12(-s.exact.ln()));
    }
    match cli.format.unwrap_or(Format::Csv) {
        Format::Json => out.json(&result),
        Format::Csv => {
            if let Some(p) = summary_path {
                fs::write(p, serde_json::to_string_pretty(s)? + "\n")?;
            }
            out.csv(
                &["trial_index", "method", "estimate"],
                result.records.iter().map(|r| vec![r.trial_index.to_string(), r.method.to_string(), g12(r.estimate)]),
            )
        }
    }
}
