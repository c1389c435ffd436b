//! Protocol synthesis and sampling-overhead comparisons across noise levels.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::channels::{Channel, NoiseModel, NoiseSpec};
use crate::error::{Error, Result};
use crate::moments::moment_observable;
use crate::protocols::{ad_second_moment, de_kth_moment, de_second_moment, de_second_moment_nqubit, from_sdp_solution, RetrievalProtocol};
use crate::sdp::{build_fmin, build_gmin, build_info_recover, gmin_power, solve, SdpSolution, Status};

/// Iteration cap used for every program solved here.
pub const MAX_ITERS: usize = 200_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthesisSource {
    ClosedForm,
    Sdp,
}

#[derive(Clone, Debug)]
pub struct Synthesis {
    pub protocol: RetrievalProtocol,
    pub source: SynthesisSource,
    /// Solver report, present only for the programmatic path.
    pub solution: Option<SdpSolution>,
}

fn moment_obs(d: usize, k: usize) -> Result<crate::operator::Operator<f64>> {
    let n = d.pow(k as u32);
    moment_observable::<f64>(k, d)?.matrix.with_dims(vec![n])
}

fn check_invertible(noise: &Channel<f64>) -> Result<()> {
    if !noise.is_invertible(1e-9) {
        return Err(Error::Infeasible(format!("{} has a singular channel matrix", noise.label())));
    }
    Ok(())
}

fn status_error(sol: &SdpSolution) -> Option<Error> {
    match sol.status {
        Status::Optimal => None,
        Status::Infeasible => Some(Error::Infeasible(format!("{}: {}", "observable-shift program infeasible", sol.message))),
        Status::MaxIters => Some(Error::NotConverged(format!("{} iterations: {}", sol.iterations, sol.message))),
    }
}

fn closed_form(spec: &NoiseSpec, k: usize) -> Option<Result<RetrievalProtocol>> {
    let d = spec.copy_dim();
    match (spec.model, k, spec.n) {
        (NoiseModel::Depolarizing, 2, 1) => Some(de_second_moment(spec.eps)),
        (NoiseModel::Depolarizing, 2, n) => Some(de_second_moment_nqubit(spec.eps, n)),
        (NoiseModel::AmplitudeDamping, 2, 1) => Some(ad_second_moment(spec.eps)),
        (NoiseModel::Depolarizing, k, _) if k >= 3 && d.pow(k as u32) <= crate::protocols::RECURSIVE_DIM_CAP => {
            Some(de_kth_moment(spec.eps, k, d))
        }
        _ => None,
    }
}

/// Builds a `k`-th moment protocol for `spec`: a closed-form construction when
/// one exists for the (model, k, n) combination, the observable-shift program
/// otherwise or when `force_sdp` is set.
pub fn synthesize(spec: &NoiseSpec, k: usize, force_sdp: bool, tol: f64) -> Result<Synthesis> {
    if k < 2 {
        return Err(Error::InvalidParameter(format!("moment order k = {k} must be at least 2")));
    }
    let noise = spec.channel()?;
    check_invertible(&noise)?;
    if !force_sdp {
        if let Some(p) = closed_form(spec, k) {
            return Ok(Synthesis { protocol: p?, source: SynthesisSource::ClosedForm, solution: None });
        }
    }
    let h = moment_obs(spec.copy_dim(), k)?;
    let sol = solve(&build_fmin(&noise, k, &h)?, tol, MAX_ITERS)?;
    if let Some(e) = status_error(&sol) {
        return Err(e);
    }
    let mut protocol = from_sdp_solution(&sol, k, &h)?;
    protocol.noise = Some(*spec);
    protocol.label = format!("sdp_{}(eps={}, k={k}, n={})", model_name(spec.model), spec.eps, spec.n);
    Ok(Synthesis { protocol, source: SynthesisSource::Sdp, solution: Some(sol) })
}

pub fn model_name(m: NoiseModel) -> &'static str {
    match m {
        NoiseModel::Depolarizing => "depolarizing",
        NoiseModel::AmplitudeDamping => "amplitude-damping",
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OverheadMethod {
    /// Observable shift with a single physical retriever.
    Shift,
    /// Quasi-probability simulation of the inverse noise on every copy.
    Inverse,
    /// Quasi-probability retriever targeting the moment observable only.
    Recover,
}

impl OverheadMethod {
    pub const ALL: [OverheadMethod; 3] = [OverheadMethod::Shift, OverheadMethod::Inverse, OverheadMethod::Recover];
}

impl fmt::Display for OverheadMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OverheadMethod::Shift => "shift",
            OverheadMethod::Inverse => "inverse",
            OverheadMethod::Recover => "recover",
        })
    }
}

impl FromStr for OverheadMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shift" => Ok(OverheadMethod::Shift),
            "inverse" => Ok(OverheadMethod::Inverse),
            "recover" => Ok(OverheadMethod::Recover),
            other => Err(Error::InvalidParameter(format!("unknown overhead method {other:?}"))),
        }
    }
}

/// Objective of a solved program, or the error its status implies.
fn optimum(sol: SdpSolution) -> Result<f64> {
    match status_error(&sol) {
        Some(e) => Err(e),
        None => Ok(sol.objective_value),
    }
}

/// Optimal observable-shift overhead for `k` copies.
pub fn shift_overhead(spec: &NoiseSpec, k: usize, tol: f64) -> Result<f64> {
    let noise = spec.channel()?;
    let h = moment_obs(spec.copy_dim(), k)?;
    optimum(solve(&build_fmin(&noise, k, &h)?, tol, MAX_ITERS)?)
}

/// Single-copy inverse-simulation cost raised to the `k`-th power.
pub fn inverse_overhead(spec: &NoiseSpec, k: usize, tol: f64) -> Result<f64> {
    let noise = spec.channel()?;
    Ok(gmin_power(optimum(solve(&build_gmin(&noise)?, tol, MAX_ITERS)?)?, k))
}

/// Cheapest quasi-probability retriever reproducing the moment observable.
pub fn recover_overhead(spec: &NoiseSpec, k: usize, tol: f64) -> Result<f64> {
    let noise = spec.channel()?.tensor_power(k)?;
    let h = moment_obs(spec.copy_dim(), k)?;
    optimum(solve(&build_info_recover(&noise, &h)?, tol, MAX_ITERS)?)
}

pub fn overhead(spec: &NoiseSpec, k: usize, method: OverheadMethod, tol: f64) -> Result<f64> {
    match method {
        OverheadMethod::Shift => shift_overhead(spec, k, tol),
        OverheadMethod::Inverse => inverse_overhead(spec, k, tol),
        OverheadMethod::Recover => recover_overhead(spec, k, tol),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub eps: f64,
    pub method: OverheadMethod,
    /// NaN when the program failed; see `status`.
    pub overhead: f64,
    pub status: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub model: NoiseModel,
    pub n: usize,
    pub k: usize,
    pub eps: Vec<f64>,
    pub methods: Vec<OverheadMethod>,
    pub tol: f64,
}

fn status_label(e: &Error) -> String {
    match e {
        Error::Infeasible(_) => "infeasible".into(),
        Error::NotConverged(_) => "not-converged".into(),
        other => format!("error: {other}"),
    }
}

/// One row per (eps, method), grid-major. Failures become NaN rows.
pub fn overhead_sweep(cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    if cfg.k < 2 {
        return Err(Error::InvalidParameter(format!("moment order k = {} must be at least 2", cfg.k)));
    }
    if cfg.eps.is_empty() || cfg.methods.is_empty() {
        return Err(Error::InvalidParameter("sweep needs at least one noise level and one method".into()));
    }
    let specs: Vec<NoiseSpec> = cfg.eps.iter().map(|&e| NoiseSpec::new(cfg.model, e, cfg.n)).collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(specs.len() * cfg.methods.len());
    for spec in &specs {
        for &method in &cfg.methods {
            let (overhead, status) = match overhead(spec, cfg.k, method, cfg.tol) {
                Ok(v) => (v, "optimal".to_string()),
                Err(e) => (f64::NAN, status_label(&e)),
            };
            rows.push(SweepRow { eps: spec.eps, method, overhead, status });
        }
    }
    Ok(rows)
}

/// `n` evenly spaced points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}
