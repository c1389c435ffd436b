//! One-dimensional Fermi-Hubbard chain on qubits, its ground state, and a
//! finite-shot purity experiment on a subsystem of that ground state.
//!
//! Fermionic modes are ordered site-major with spin up before spin down:
//! mode `2 * site + spin` lives on qubit `2 * site + spin` (sites counted from
//! zero here, from one in the local potential). Occupation `1` is `|1>`, and
//! the Jordan-Wigner parity string runs over all lower-numbered modes.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::channels::Channel;
use crate::error::{Error, Result};
use crate::estimator::ShotSampler;
use crate::moments::{moment, moment_observable};
use crate::operator::Operator;
use crate::protocols::de_second_moment_nqubit;
use crate::scalar::C;

type Op = Operator<f64>;

/// Dense qubit cap for the Hamiltonian.
pub const MAX_QUBITS: usize = 8;
/// Largest subsystem (in qubits) for the purity experiment.
pub const MAX_SUBSYSTEM_QUBITS: usize = 2;
/// Spectral gap below which the ground space is reported as degenerate.
pub const DEGENERACY_TOL: f64 = 1e-10;

pub const UP: usize = 0;
pub const DOWN: usize = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HubbardModel {
    pub sites: usize,
    /// Nearest-neighbour tunneling amplitude.
    pub hopping: f64,
    /// On-site repulsion between opposite spins.
    pub repulsion: f64,
    /// Depth of the Gaussian well, indexed by spin.
    pub well_depth: [f64; 2],
    /// Centre of the Gaussian well in one-based site units.
    pub well_center: [f64; 2],
    /// Width of the Gaussian well.
    pub well_width: [f64; 2],
}

impl HubbardModel {
    /// The three-site chain used in the demo.
    pub fn reference_chain() -> Self {
        Self { sites: 3, hopping: 2.0, repulsion: 3.0, well_depth: [3.0, 0.1], well_center: [3.0, 3.0], well_width: [1.0, 1.0] }
    }

    /// Hopping and repulsion only, with no local potential.
    pub fn uniform(sites: usize, hopping: f64, repulsion: f64) -> Self {
        Self { sites, hopping, repulsion, well_depth: [0.0; 2], well_center: [1.0; 2], well_width: [1.0; 2] }
    }

    pub fn num_qubits(&self) -> usize {
        2 * self.sites
    }

    pub fn validate(&self) -> Result<()> {
        if self.sites == 0 {
            return Err(Error::InvalidParameter("chain needs at least one site".into()));
        }
        if self.well_width.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::InvalidParameter(format!("well widths {:?} must be positive", self.well_width)));
        }
        let all = [self.hopping, self.repulsion, self.well_depth[0], self.well_depth[1], self.well_center[0], self.well_center[1]];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("model parameters must be finite".into()));
        }
        if self.num_qubits() > MAX_QUBITS {
            return Err(Error::DimensionCap { dim: 1 << self.num_qubits(), cap: 1 << MAX_QUBITS });
        }
        Ok(())
    }

    /// Local energy of spin `spin` on zero-based site `site`.
    pub fn local_potential(&self, site: usize, spin: usize) -> f64 {
        let j = (site + 1) as f64;
        let z = (j - self.well_center[spin]) / self.well_width[spin];
        -self.well_depth[spin] * (-0.5 * z * z).exp()
    }
}

pub fn mode(site: usize, spin: usize) -> usize {
    2 * site + spin
}

/// Qubits holding both spin modes of `site`.
pub fn site_qubits(site: usize) -> Vec<usize> {
    vec![mode(site, UP), mode(site, DOWN)]
}

/// Jordan-Wigner image of the annihilation operator of mode `p` among `modes`.
pub fn annihilation(p: usize, modes: usize) -> Result<Op> {
    if p >= modes {
        return Err(Error::InvalidSubsystem { index: p, count: modes });
    }
    if modes > MAX_QUBITS {
        return Err(Error::DimensionCap { dim: 1 << modes, cap: 1 << MAX_QUBITS });
    }
    let dim = 1usize << modes;
    let bit = |q: usize| 1usize << (modes - 1 - q);
    let mut m = DMatrix::<C<f64>>::zeros(dim, dim);
    for x in 0..dim {
        if x & bit(p) == 0 {
            continue;
        }
        let parity = (0..p).filter(|&q| x & bit(q) != 0).count();
        let sign = if parity % 2 == 0 { 1.0 } else { -1.0 };
        m[(x ^ bit(p), x)] = C::new(sign, 0.0);
    }
    Op::new(m, vec![2; modes])
}

pub fn number(p: usize, modes: usize) -> Result<Op> {
    let a = annihilation(p, modes)?;
    Ok(&a.adjoint() * &a)
}

/// Total particle number, optionally restricted to one spin species.
pub fn particle_number(sites: usize, spin: Option<usize>) -> Result<Op> {
    let modes = 2 * sites;
    let mut n = Op::zeros_with_dims(vec![2; modes]);
    for s in 0..sites {
        for sp in [UP, DOWN] {
            if spin.is_none_or(|want| want == sp) {
                n += &number(mode(s, sp), modes)?;
            }
        }
    }
    Ok(n)
}

/// Hopping, on-site repulsion and Gaussian local potential on an open chain.
pub fn build_hamiltonian(model: &HubbardModel) -> Result<Op> {
    model.validate()?;
    let modes = model.num_qubits();
    let a: Vec<Op> = (0..modes).map(|p| annihilation(p, modes)).collect::<Result<_>>()?;
    let n: Vec<Op> = a.iter().map(|ap| &ap.adjoint() * ap).collect();
    let mut h = Op::zeros_with_dims(vec![2; modes]);
    for i in 0..model.sites.saturating_sub(1) {
        for spin in [UP, DOWN] {
            let (p, q) = (mode(i, spin), mode(i + 1, spin));
            let hop = &a[p].adjoint() * &a[q];
            let both = &hop + &hop.adjoint();
            h += &both.scale(-model.hopping);
        }
    }
    for s in 0..model.sites {
        let (u, d) = (mode(s, UP), mode(s, DOWN));
        h += &(&n[u] * &n[d]).scale(model.repulsion);
        for spin in [UP, DOWN] {
            h += &n[mode(s, spin)].scale(model.local_potential(s, spin));
        }
    }
    Ok(h)
}

#[derive(Clone, Debug)]
pub struct GroundStateResult {
    pub energy: f64,
    pub vector: nalgebra::DVector<C<f64>>,
    /// Pure-state density matrix, with the Hamiltonian's subsystem layout.
    pub state: Op,
    /// Distance to the first excited level, zero for a one-dimensional space.
    pub degeneracy_gap: f64,
    pub degenerate: bool,
}

/// Lowest eigenvector of `h`. Degenerate ground spaces are flagged and the
/// lowest-index eigenvector returned.
pub fn ground_state(h: &Op) -> Result<GroundStateResult> {
    let eig = h.hermitian_eig(1e-9)?;
    let energy = eig.values[0];
    let degeneracy_gap = eig.values.get(1).map_or(0.0, |e1| e1 - energy);
    let vector = eig.vectors.column(0).into_owned();
    let state = Op::new(Op::projector(&vector).into_matrix(), h.dims().to_vec())?;
    Ok(GroundStateResult { energy, vector, state, degeneracy_gap, degenerate: eig.values.len() > 1 && degeneracy_gap < DEGENERACY_TOL })
}

/// `|| H psi - E psi ||`.
pub fn eigen_residual(h: &Op, g: &GroundStateResult) -> f64 {
    (h.matrix() * &g.vector - g.vector.scale(g.energy)).norm()
}

pub fn reduced_state(g: &GroundStateResult, subsystem: &[usize]) -> Result<Op> {
    g.state.partial_trace(subsystem)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Raw,
    Mitigated,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Raw => "raw",
            Method::Mitigated => "mitigated",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PurityExperiment {
    pub eps: f64,
    /// Qubits of the chain forming subsystem A.
    pub subsystem: Vec<usize>,
    pub shots: u64,
    pub trials: u64,
    pub seed: u64,
}

impl PurityExperiment {
    /// Site 1 (both spins) of the chain.
    pub fn default_for(eps: f64, shots: u64, trials: u64, seed: u64) -> Self {
        Self { eps, subsystem: site_qubits(0), shots, trials, seed }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_index: u64,
    pub method: Method,
    pub estimate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PuritySummary {
    /// `tr[rho_A^2]` of the noiseless reduced state.
    pub exact: f64,
    /// Expected value of the raw estimator under the noise.
    pub biased: f64,
    pub raw_mean: f64,
    pub raw_std_error: f64,
    pub mitigated_mean: f64,
    pub mitigated_std_error: f64,
    pub f: f64,
    pub t: f64,
    pub ground_energy: f64,
    pub degenerate: bool,
    pub params: PurityExperiment,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PurityResult {
    pub records: Vec<TrialRecord>,
    pub summary: PuritySummary,
}

fn mean_and_error(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// `(1 - eps)^2 P + 2 eps (1 - eps) / D + eps^2 / D` for global depolarizing
/// noise of strength `eps` on a `D`-dimensional state of purity `P`.
pub fn depolarized_purity(purity: f64, eps: f64, dim: usize) -> f64 {
    let d = dim as f64;
    (1.0 - eps).powi(2) * purity + 2.0 * eps * (1.0 - eps) / d + eps * eps / d
}

/// Repeated raw and mitigated purity estimates of subsystem A under global
/// depolarizing noise. Trial `i` uses shot streams `i * shots ..` for the raw
/// estimator and `(trials + i) * shots ..` for the mitigated one.
pub fn purity_experiment(model: &HubbardModel, cfg: &PurityExperiment) -> Result<PurityResult> {
    let n = cfg.subsystem.len();
    if n == 0 || n > MAX_SUBSYSTEM_QUBITS {
        return Err(Error::DimensionCap { dim: 1 << (2 * n.min(16)), cap: 1 << (2 * MAX_SUBSYSTEM_QUBITS) });
    }
    if cfg.shots == 0 || cfg.trials == 0 {
        return Err(Error::InvalidParameter("shots and trials must be positive".into()));
    }
    let h = build_hamiltonian(model)?;
    let g = ground_state(&h)?;
    let rho = reduced_state(&g, &cfg.subsystem)?;
    let dim = rho.dim();
    let exact = moment(&rho, 2);

    let noise = Channel::depolarizing(cfg.eps, dim)?;
    let noisy = noise.apply(&rho.clone().with_dims(vec![dim])?)?;
    let pair = noisy.tensor(&noisy).with_dims(vec![dim * dim])?;
    let swap_obs = moment_observable::<f64>(2, dim)?.matrix.with_dims(vec![dim * dim])?;
    let protocol = de_second_moment_nqubit(cfg.eps, n)?;

    let raw = ShotSampler::direct(&pair, &swap_obs)?;
    let mitigated = ShotSampler::new(&protocol, &pair, &swap_obs)?;

    let mut records = Vec::with_capacity(2 * cfg.trials as usize);
    let mut raw_est = Vec::with_capacity(cfg.trials as usize);
    let mut mit_est = Vec::with_capacity(cfg.trials as usize);
    for i in 0..cfg.trials {
        let r = raw.mean_of(cfg.seed, i * cfg.shots, cfg.shots);
        let m = protocol.f * mitigated.mean_of(cfg.seed, (cfg.trials + i) * cfg.shots, cfg.shots) - protocol.t;
        raw_est.push(r);
        mit_est.push(m);
        records.push(TrialRecord { trial_index: i, method: Method::Raw, estimate: r });
        records.push(TrialRecord { trial_index: i, method: Method::Mitigated, estimate: m });
    }
    let (raw_mean, raw_std_error) = mean_and_error(&raw_est);
    let (mitigated_mean, mitigated_std_error) = mean_and_error(&mit_est);
    Ok(PurityResult {
        records,
        summary: PuritySummary {
            exact,
            biased: depolarized_purity(exact, cfg.eps, dim),
            raw_mean,
            raw_std_error,
            mitigated_mean,
            mitigated_std_error,
            f: protocol.f,
            t: protocol.t,
            ground_energy: g.energy,
            degenerate: g.degenerate,
            params: cfg.clone(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{basis_ket, pauli};
    use crate::random;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn anticommutator(a: &Op, b: &Op) -> Op {
        &(a * b) + &(b * a)
    }

    #[test]
    fn canonical_anticommutation() {
        let modes = 4;
        let a: Vec<Op> = (0..modes).map(|p| annihilation(p, modes).unwrap()).collect();
        let id = Op::identity(1 << modes);
        let zero = Op::zeros(1 << modes);
        for p in 0..modes {
            for q in 0..modes {
                let want = if p == q { &id } else { &zero };
                assert!(anticommutator(&a[p], &a[q].adjoint()).max_abs_diff(want) < 1e-12);
                assert!(anticommutator(&a[p], &a[q]).max_abs() < 1e-12);
            }
        }
    }

    #[test]
    fn empty_model_is_zero() {
        let h = build_hamiltonian(&HubbardModel::uniform(2, 0.0, 0.0)).unwrap();
        assert_eq!(h.max_abs(), 0.0);
    }

    #[test]
    fn single_site_spectrum() {
        let h = build_hamiltonian(&HubbardModel::uniform(1, 0.0, 3.0)).unwrap();
        let e = h.hermitian_eig(1e-12).unwrap().values;
        for (got, want) in e.iter().zip([0.0, 0.0, 0.0, 3.0]) {
            assert_relative_eq!(*got, want, epsilon = 1e-12);
        }
        // Double occupancy is |11>.
        assert_relative_eq!(h.get(3, 3).re, 3.0);
    }

    #[test]
    fn two_site_hopping_matches_tight_binding() {
        // One spin species on two sites: single-particle energies -J and +J.
        let j = 1.3;
        let h = build_hamiltonian(&HubbardModel::uniform(2, j, 0.0)).unwrap();
        let e = h.hermitian_eig(1e-12).unwrap().values;
        assert_relative_eq!(e[0], -2.0 * j, epsilon = 1e-12);
    }

    #[test]
    fn reference_chain_conserves_particles() {
        let m = HubbardModel::reference_chain();
        let h = build_hamiltonian(&m).unwrap();
        assert_eq!(h.dim(), 64);
        assert!(h.hermitian_deviation() < 1e-14);
        for spin in [None, Some(UP), Some(DOWN)] {
            let n = particle_number(3, spin).unwrap();
            let comm = &(&h * &n) - &(&n * &h);
            assert!(comm.max_abs() < 1e-10);
        }
    }

    #[test]
    fn potential_profile() {
        let m = HubbardModel::reference_chain();
        assert_relative_eq!(m.local_potential(2, UP), -3.0);
        assert_relative_eq!(m.local_potential(0, DOWN), -0.1 * (-2.0f64).exp(), epsilon = 1e-15);
        assert!(m.local_potential(0, UP) > m.local_potential(1, UP));
    }

    #[test]
    fn caps_and_validation() {
        assert!(matches!(build_hamiltonian(&HubbardModel::uniform(5, 1.0, 1.0)), Err(Error::DimensionCap { .. })));
        assert!(build_hamiltonian(&HubbardModel::uniform(0, 1.0, 1.0)).is_err());
        let mut m = HubbardModel::reference_chain();
        m.well_width[1] = 0.0;
        assert!(build_hamiltonian(&m).is_err());
        assert!(annihilation(4, 4).is_err());
    }

    #[test]
    fn pauli_z_ground_state() {
        let g = ground_state(&pauli::z()).unwrap();
        assert_relative_eq!(g.energy, -1.0);
        assert!(g.state.max_abs_diff(&Op::projector(&basis_ket(2, 1))) < 1e-12);
        assert!(!g.degenerate);
        assert!(ground_state(&Op::identity(2)).unwrap().degenerate);
    }

    #[test]
    fn reference_ground_state() {
        let h = build_hamiltonian(&HubbardModel::reference_chain()).unwrap();
        let g = ground_state(&h).unwrap();
        assert!(eigen_residual(&h, &g) < 1e-9);
        assert_relative_eq!(g.state.trace().re, 1.0, epsilon = 1e-12);
        assert!(g.state.is_psd(1e-10));
        assert_relative_eq!(moment(&g.state, 2), 1.0, epsilon = 1e-10);
        assert_eq!(g.state.effective_rank(&[0, 1, 2, 3, 4, 5], 1e-10).unwrap(), 1);
        let full = reduced_state(&g, &[0, 1, 2, 3, 4, 5]).unwrap();
        assert!(full.max_abs_diff(&g.state) < 1e-15);
        let rho_a = reduced_state(&g, &site_qubits(0)).unwrap();
        let p = moment(&rho_a, 2);
        assert!(p > 0.25 - 1e-12 && p <= 1.0 + 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]
        #[test]
        fn ground_energy_is_variational(seed in any::<u64>()) {
            let h = build_hamiltonian(&HubbardModel::reference_chain()).unwrap();
            let e0 = ground_state(&h).unwrap().energy;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let psi = random::random_pure::<f64>(64, &mut rng);
            let e = (psi.adjoint() * h.matrix() * &psi)[(0, 0)].re;
            prop_assert!(e0 <= e + 1e-12);
        }
    }

    #[test]
    fn noiseless_experiment_is_centered() {
        let m = HubbardModel::reference_chain();
        let r = purity_experiment(&m, &PurityExperiment::default_for(0.0, 400, 60, 5)).unwrap();
        let s = &r.summary;
        assert_eq!(s.f, 1.0);
        assert!((s.raw_mean - s.exact).abs() < 3.0 * s.raw_std_error);
        assert!((s.mitigated_mean - s.exact).abs() < 3.0 * s.mitigated_std_error);
        assert_eq!(r.records.len(), 120);
    }

    #[test]
    fn depolarized_experiment_separates() {
        let m = HubbardModel::reference_chain();
        let r = purity_experiment(&m, &PurityExperiment::default_for(0.1, 10_000, 200, 17)).unwrap();
        let s = &r.summary;
        assert!((s.raw_mean - s.biased).abs() < 3.0 * s.raw_std_error, "{s:?}");
        assert!((s.mitigated_mean - s.exact).abs() < 3.0 * s.mitigated_std_error, "{s:?}");
        assert!((s.mitigated_mean - s.raw_mean).abs() >= 5.0 * s.raw_std_error.min(s.mitigated_std_error), "{s:?}");
        let again = purity_experiment(&m, &PurityExperiment::default_for(0.1, 10_000, 200, 17)).unwrap();
        assert_eq!(again, r);
    }

    #[test]
    fn experiment_caps() {
        let m = HubbardModel::reference_chain();
        let cfg = PurityExperiment { eps: 0.1, subsystem: vec![0, 1, 2], shots: 10, trials: 2, seed: 0 };
        assert!(matches!(purity_experiment(&m, &cfg), Err(Error::DimensionCap { .. })));
    }
}
