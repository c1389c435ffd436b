//! Self-checks runnable from the command line. Each suite evaluates a handful
//! of identities with fixed seeds and reports the measured error.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channels::Channel;
use crate::error::{Error, Result};
use crate::hubbard::{self, HubbardModel};
use crate::moments::{moment, moment_observable, permutation_eigenprojectors};
use crate::operator::Operator;
use crate::protocols;
use crate::random;
use crate::sdp::{self, Status};

type Op = Operator<f64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    All,
    Sdp,
    Protocols,
    Moments,
    Hubbard,
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Suite::All => "all",
            Suite::Sdp => "sdp",
            Suite::Protocols => "protocols",
            Suite::Moments => "moments",
            Suite::Hubbard => "hubbard",
        })
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Suite::All),
            "sdp" => Ok(Suite::Sdp),
            "protocols" => Ok(Suite::Protocols),
            "moments" => Ok(Suite::Moments),
            "hubbard" => Ok(Suite::Hubbard),
            other => Err(Error::InvalidParameter(format!("unknown suite {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub suite: Suite,
    pub name: String,
    pub passed: bool,
    /// Measured error, or the checked quantity for ordering checks.
    pub value: f64,
    pub tolerance: f64,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub suite: Suite,
    pub passed: bool,
    pub checks: Vec<Check>,
}

struct Recorder {
    suite: Suite,
    checks: Vec<Check>,
}

impl Recorder {
    /// Records `error <= tol`. Errors propagated from the computation fail the check.
    fn error(&mut self, name: &str, tol: f64, r: Result<f64>) {
        let (passed, value, detail) = match r {
            Ok(v) => (v.is_finite() && v <= tol, v, String::new()),
            Err(e) => (false, f64::NAN, e.to_string()),
        };
        self.checks.push(Check { suite: self.suite, name: name.into(), passed, value, tolerance: tol, detail });
    }

    fn flag(&mut self, name: &str, r: Result<bool>, detail: &str) {
        let (passed, detail) = match r {
            Ok(b) => (b, detail.to_string()),
            Err(e) => (false, e.to_string()),
        };
        self.checks.push(Check { suite: self.suite, name: name.into(), passed, value: f64::NAN, tolerance: 0.0, detail });
    }
}

fn h(k: usize, d: usize) -> Result<Op> {
    Ok(moment_observable::<f64>(k, d)?.matrix)
}

fn moments_suite(rec: &mut Recorder) {
    for k in 2..=5 {
        rec.error(&format!("cyclic_spectrum_k{k}"), 1e-12, (|| {
            let spec = permutation_eigenprojectors::<f64>(k, 2)?;
            let s = crate::moments::cyclic_permutation::<f64>(k, 2)?;
            Ok(spec.reconstruct().max_abs_diff(&s))
        })());
    }
    for k in 2..=4 {
        rec.error(&format!("moment_identity_k{k}"), 1e-10, (|| {
            let mut rng = ChaCha8Rng::seed_from_u64(k as u64);
            let hk = h(k, 2)?;
            let mut worst = hk.hermitian_deviation();
            for _ in 0..10 {
                let rho = random::random_density::<f64>(2, &mut rng);
                let lhs = rho.tensor_power(k).with_dims(vec![2; k])?.expectation(&hk);
                worst = worst.max((lhs - moment(&rho, k)).abs());
            }
            Ok(worst)
        })());
    }
    rec.flag("projector_ranks_sum", (|| {
        let spec = permutation_eigenprojectors::<f64>(4, 3)?;
        Ok(spec.ranks().iter().sum::<usize>() == 81)
    })(), "ranks of the cyclic eigenprojectors add up to d^k");
}

fn sdp_suite(rec: &mut Recorder) {
    let h2 = match h(2, 2) {
        Ok(m) => m,
        Err(e) => return rec.error("observable", 0.0, Err(e)),
    };
    for eps in [0.1f64, 0.2] {
        let exact = 1.0 / (1.0 - eps).powi(2);
        for (name, noise) in [("depolarizing", Channel::depolarizing(eps, 2)), ("amplitude_damping", Channel::amplitude_damping(eps))] {
            let run = || -> Result<(f64, f64, f64)> {
                let noise = noise.clone()?;
                let primal = sdp::solve(&sdp::build_fmin(&noise, 2, &h2)?, 1e-7, 200_000)?;
                let dual = sdp::solve(&sdp::build_dual_fmin(&noise, 2, &h2)?, 1e-7, 200_000)?;
                let g = sdp::solve(&sdp::build_gmin(&noise)?, 1e-7, 200_000)?;
                if !(primal.is_optimal() && dual.is_optimal() && g.is_optimal()) {
                    return Err(Error::NotConverged(format!("{:?} / {:?} / {:?}", primal.status, dual.status, g.status)));
                }
                Ok((primal.objective_value, dual.objective_value, sdp::gmin_power(g.objective_value, 2)))
            };
            match run() {
                Ok((p, d, g)) => {
                    rec.error(&format!("fmin_{name}_{eps}"), 1e-4, Ok((p - exact).abs()));
                    rec.error(&format!("duality_gap_{name}_{eps}"), 1e-4, Ok((p - d).abs()));
                    rec.error(&format!("shift_below_inverse_{name}_{eps}"), 1e-6, Ok((p - g).max(0.0)));
                }
                Err(e) => rec.error(&format!("programs_{name}_{eps}"), 0.0, Err(e)),
            }
            let cert = if name == "depolarizing" { sdp::de_certificate(eps) } else { sdp::ad_certificate(eps) };
            rec.error(&format!("certificate_{name}_{eps}"), 1e-9, (|| {
                let chk = sdp::check_certificate(&cert, &noise.clone()?, 2, &h2)?;
                if !chk.feasible {
                    return Err(Error::Infeasible(format!("certificate slack min eigenvalue {:e}", chk.min_eigenvalue)));
                }
                Ok((chk.objective - exact).abs())
            })());
        }
    }
    rec.flag("singular_noise_infeasible", (|| {
        let sol = sdp::solve(&sdp::build_fmin(&Channel::depolarizing(1.0, 2)?, 2, &h2)?, 1e-7, 200_000)?;
        Ok(sol.status == Status::Infeasible)
    })(), "fully depolarizing noise admits no retriever");
}

fn protocols_suite(rec: &mut Recorder) {
    rec.error("transfer_condition_k3_to_k100", 1e-9, (|| {
        let mut worst = 0.0f64;
        for k in 3..=100 {
            let (q, qt) = protocols::transfer_coefficients(k)?;
            if q.min() < -1e-12 || qt.min() < -1e-12 {
                return Err(Error::InvalidParameter(format!("negative transfer weight at k = {k}")));
            }
            worst = worst.max(protocols::transfer_condition_residual(&q, k, 1.0));
            worst = worst.max(protocols::transfer_condition_residual(&qt, k, -1.0));
        }
        Ok(worst)
    })());
    rec.error("transfer_maps_k3_to_k5", 1e-9, (|| {
        let mut worst = 0.0f64;
        for k in 3..=5 {
            let pair = protocols::transfer_maps(k, 2)?;
            let target = h(k - 1, 2)?.tensor(&Op::identity(2).scale(0.5));
            let hk = h(k, 2)?;
            worst = worst.max(pair.forward.apply(&hk)?.max_abs_diff(&target));
            worst = worst.max((&pair.negated.apply(&hk)? + &target).max_abs());
        }
        Ok(worst)
    })());
    rec.flag("twirl_unitaries", protocols::check_de_twirl().map(|_| true), "mixed-unitary twirl reproduces the two-copy retriever");
    let cases: Vec<(&str, Result<protocols::RetrievalProtocol>, Result<Channel<f64>>)> = vec![
        ("de_second_moment", protocols::de_second_moment(0.2), Channel::depolarizing(0.2, 2)),
        ("ad_second_moment", protocols::ad_second_moment(0.2), Channel::amplitude_damping(0.2)),
        ("de_second_moment_2q", protocols::de_second_moment_nqubit(0.2, 2), Channel::depolarizing(0.2, 4)),
        ("de_kth_moment_k3", protocols::de_kth_moment(0.2, 3, 2), Channel::depolarizing(0.2, 2)),
        ("de_kth_moment_k4", protocols::de_kth_moment(0.2, 4, 2), Channel::depolarizing(0.2, 2)),
    ];
    for (name, p, noise) in cases {
        rec.error(&format!("recovery_{name}"), 1e-9, (|| {
            let (p, noise) = (p?, noise?);
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let mut worst = 0.0f64;
            for _ in 0..10 {
                let rho = random::random_density::<f64>(p.copy_dim, &mut rng);
                worst = worst.max(p.contract_residual(&noise, &rho)?);
            }
            Ok(worst)
        })());
    }
}

fn hubbard_suite(rec: &mut Recorder) {
    rec.error("canonical_anticommutation", 1e-12, (|| {
        let modes = 6;
        let a: Vec<Op> = (0..modes).map(|p| hubbard::annihilation(p, modes)).collect::<Result<_>>()?;
        let id = Op::identity(1 << modes);
        let mut worst = 0.0f64;
        for p in 0..modes {
            for q in 0..modes {
                let ad = a[q].adjoint();
                let anti = &(&a[p] * &ad) + &(&ad * &a[p]);
                worst = worst.max(if p == q { anti.max_abs_diff(&id) } else { anti.max_abs() });
            }
        }
        Ok(worst)
    })());
    let model = HubbardModel::reference_chain();
    rec.error("particle_number_conserved", 1e-10, (|| {
        let hm = hubbard::build_hamiltonian(&model)?;
        let n = hubbard::particle_number(model.sites, None)?;
        Ok((&(&hm * &n) - &(&n * &hm)).max_abs())
    })());
    rec.error("ground_state_residual", 1e-9, (|| {
        let hm = hubbard::build_hamiltonian(&model)?;
        let g = hubbard::ground_state(&hm)?;
        Ok(hubbard::eigen_residual(&hm, &g))
    })());
}

fn run_one(suite: Suite, out: &mut Vec<Check>) {
    let mut rec = Recorder { suite, checks: Vec::new() };
    match suite {
        Suite::Moments => moments_suite(&mut rec),
        Suite::Sdp => sdp_suite(&mut rec),
        Suite::Protocols => protocols_suite(&mut rec),
        Suite::Hubbard => hubbard_suite(&mut rec),
        Suite::All => {}
    }
    out.extend(rec.checks);
}

pub fn verify(suite: Suite) -> VerifyReport {
    let mut checks = Vec::new();
    let suites: &[Suite] = match suite {
        Suite::All => &[Suite::Moments, Suite::Sdp, Suite::Protocols, Suite::Hubbard],
        _ => std::slice::from_ref(&suite),
    };
    for &s in suites {
        run_one(s, &mut checks);
    }
    VerifyReport { suite, passed: checks.iter().all(|c| c.passed), checks }
}
