//! Finite-shot simulation of retrieval protocols.
//!
//! Every shot draws its randomness from its own ChaCha8 stream: the key is
//! derived from the run seed and the stream id is the shot index. Shots can
//! therefore be evaluated in any order with identical results.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channels::Channel;
use crate::error::{Error, Result};
use crate::operator::Operator;
use crate::protocols::{noisy_copies, Realization, RetrievalProtocol};

type Op = Operator<f64>;

/// Eigenvalues of the moment observable closer than this are merged.
pub const EIGENVALUE_MERGE_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub delta: f64,
    pub fail_prob: f64,
    pub f: f64,
    pub shots: u64,
}

/// Smallest `T` with `T >= f^2 (2 / delta^2) ln(2 / p)`. The factor 2 comes
/// from Hoeffding's inequality for outcomes in `[-1, 1]`.
pub fn plan_shots(delta: f64, fail_prob: f64, f: f64) -> Result<SamplingPlan> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidParameter(format!("tolerance delta = {delta} must be positive")));
    }
    if !(fail_prob > 0.0 && fail_prob < 1.0) {
        return Err(Error::InvalidParameter(format!("failure probability {fail_prob} outside (0, 1)")));
    }
    if !(f > 0.0 && f.is_finite()) {
        return Err(Error::InvalidParameter(format!("overhead f = {f} must be positive")));
    }
    let bound = f * f * (2.0 / (delta * delta)) * (2.0 / fail_prob).ln();
    if bound > u64::MAX as f64 / 2.0 {
        return Err(Error::InvalidParameter(format!("shot count {bound:e} is not representable")));
    }
    Ok(SamplingPlan { delta, fail_prob, f, shots: bound.ceil().max(1.0) as u64 })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimationRun {
    pub seed: u64,
    pub shots: u64,
    /// Mixture component (unitary index) for mixed-unitary protocols, otherwise 0.
    pub components: Vec<usize>,
    /// Measurement outcome index within the component.
    pub outcomes: Vec<usize>,
    pub per_shot: Vec<f64>,
    pub zeta_bar: f64,
    pub f: f64,
    pub t: f64,
    pub estimate: f64,
    pub protocol_ref: String,
}

impl EstimationRun {
    /// Standard error of `zeta_bar`.
    pub fn std_error(&self) -> f64 {
        let n = self.per_shot.len() as f64;
        if n < 2.0 {
            return f64::NAN;
        }
        let var = self.per_shot.iter().map(|v| (v - self.zeta_bar).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    }

    /// `f zeta_bar - t` recomputed from the stored fields.
    pub fn recompute_estimate(&self) -> f64 {
        self.f * self.zeta_bar - self.t
    }
}

/// Categorical distribution over `(value, probability)` pairs.
#[derive(Clone, Debug)]
struct Outcomes {
    values: Vec<f64>,
    cumulative: Vec<f64>,
}

impl Outcomes {
    fn new(values: Vec<f64>, probs: Vec<f64>) -> Self {
        let clipped: Vec<f64> = probs.iter().map(|p| p.max(0.0)).collect();
        let total: f64 = clipped.iter().sum();
        let mut acc = 0.0;
        let cumulative = clipped
            .iter()
            .map(|p| {
                acc += p / total;
                acc
            })
            .collect();
        Self { values, cumulative }
    }

    fn probabilities(&self) -> Vec<f64> {
        let mut prev = 0.0;
        self.cumulative
            .iter()
            .map(|&c| {
                let p = c - prev;
                prev = c;
                p
            })
            .collect()
    }

    fn sample(&self, u: f64) -> usize {
        self.cumulative.iter().position(|&c| u < c).unwrap_or(self.cumulative.len() - 1)
    }

    fn mean(&self) -> f64 {
        self.values.iter().zip(self.probabilities()).map(|(v, p)| v * p).sum()
    }
}

/// Precomputed shot distribution for one (protocol, input state) pair.
#[derive(Clone, Debug)]
pub struct ShotSampler {
    weights: Outcomes,
    components: Vec<Outcomes>,
}

/// Spectral projectors of `h`, grouped by distinct eigenvalue.
fn eigen_groups(h: &Op) -> Result<Vec<(f64, Op)>> {
    let eig = h.hermitian_eig(1e-9)?;
    let n = h.dim();
    let mut groups: Vec<(f64, Op)> = Vec::new();
    for (i, &lam) in eig.values.iter().enumerate() {
        let v = eig.vectors.column(i).into_owned();
        let proj = Op::from_matrix(&v * v.adjoint())?;
        match groups.iter_mut().find(|(val, _)| (val - lam).abs() <= EIGENVALUE_MERGE_TOL.max(1e-12 * lam.abs())) {
            Some((_, p)) => *p += &proj,
            None => groups.push((lam, proj)),
        }
    }
    debug_assert!(groups.iter().map(|(_, p)| p.trace().re).sum::<f64>() - n as f64 <= 1e-9);
    Ok(groups)
}

fn born(state: &Op, groups: &[(f64, Op)]) -> Outcomes {
    let values = groups.iter().map(|(v, _)| *v).collect();
    let probs = groups.iter().map(|(_, p)| state.trace_product(p).re).collect();
    Outcomes::new(values, probs)
}

impl ShotSampler {
    /// Measures `h` directly on `state`, with no retriever in between.
    pub fn direct(state: &Op, h: &Op) -> Result<Self> {
        if state.dim() != h.dim() {
            return Err(Error::DimensionMismatch(format!("state dimension {}, observable {}", state.dim(), h.dim())));
        }
        let groups = eigen_groups(h)?;
        Ok(Self { weights: Outcomes::new(vec![0.0], vec![1.0]), components: vec![born(state, &groups)] })
    }

    /// Builds the sampler for a `k`-copy noisy input and observable `h`.
    pub fn new(protocol: &RetrievalProtocol, noisy: &Op, h: &Op) -> Result<Self> {
        let n = protocol.total_dim();
        if noisy.dim() != n || h.dim() != n {
            return Err(Error::DimensionMismatch(format!(
                "protocol dimension {n}, state {}, observable {}",
                noisy.dim(),
                h.dim()
            )));
        }
        match &protocol.realization {
            Realization::MixedUnitary { probabilities, unitaries } => {
                let groups = eigen_groups(h)?;
                let components = unitaries
                    .iter()
                    .map(|u| {
                        let um = u.matrix();
                        let out = Op::from_matrix(um * noisy.matrix() * um.adjoint())?;
                        Ok(born(&out, &groups))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Self { weights: Outcomes::new((0..unitaries.len()).map(|j| j as f64).collect(), probabilities.clone()), components })
            }
            Realization::MeasurementBased { basis, values, .. } => {
                let probs = basis.iter().map(|b| (b.adjoint() * noisy.matrix() * b)[(0, 0)].re).collect();
                Ok(Self { weights: Outcomes::new(vec![0.0], vec![1.0]), components: vec![Outcomes::new(values.clone(), probs)] })
            }
            Realization::ChoiMap { trace_preserving: true, .. } => {
                let out = protocol.apply(noisy)?;
                let groups = eigen_groups(h)?;
                Ok(Self { weights: Outcomes::new(vec![0.0], vec![1.0]), components: vec![born(&out.with_dims(vec![n])?, &groups)] })
            }
            Realization::ChoiMap { trace_preserving: false, .. } | Realization::Recursive(_) => Err(Error::Unsupported(format!(
                "{} retriever is not trace preserving and has no finite-shot realization; use exact evaluation",
                protocol.realization.kind()
            ))),
        }
    }

    /// Exact expectation of a single shot value.
    pub fn expected_value(&self) -> f64 {
        self.weights.probabilities().iter().zip(&self.components).map(|(w, c)| w * c.mean()).sum()
    }

    /// Outcome probabilities of each mixture component.
    pub fn outcome_probabilities(&self) -> Vec<Vec<f64>> {
        self.components.iter().map(|c| c.probabilities()).collect()
    }

    /// Mean of the shot values with indices `first..first + count`.
    pub fn mean_of(&self, seed: u64, first: u64, count: u64) -> f64 {
        (first..first + count).map(|i| self.shot(seed, i).2).sum::<f64>() / count as f64
    }

    /// `(component, outcome, value)` of shot `index` under `seed`.
    pub fn shot(&self, seed: u64, index: u64) -> (usize, usize, f64) {
        let mut rng = shot_stream(seed, index);
        let u1: f64 = rng.gen();
        let u2: f64 = rng.gen();
        let j = if self.components.len() == 1 { 0 } else { self.weights.sample(u1) };
        let i = self.components[j].sample(u2);
        (j, i, self.components[j].values[i])
    }
}

/// Per-shot generator: ChaCha8 keyed by `seed`, stream `index`.
pub fn shot_stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn run_with(sampler: &ShotSampler, protocol: &RetrievalProtocol, shots: u64, seed: u64) -> EstimationRun {
    let mut components = Vec::with_capacity(shots as usize);
    let mut outcomes = Vec::with_capacity(shots as usize);
    let mut per_shot = Vec::with_capacity(shots as usize);
    for s in 0..shots {
        let (j, i, v) = sampler.shot(seed, s);
        components.push(j);
        outcomes.push(i);
        per_shot.push(v);
    }
    let zeta_bar = if shots == 0 { f64::NAN } else { per_shot.iter().sum::<f64>() / shots as f64 };
    EstimationRun {
        seed,
        shots,
        components,
        outcomes,
        per_shot,
        zeta_bar,
        f: protocol.f,
        t: protocol.t,
        estimate: protocol.f * zeta_bar - protocol.t,
        protocol_ref: protocol.label.clone(),
    }
}

fn prepare(protocol: &RetrievalProtocol, rho: &Op, noise: &Channel<f64>) -> Result<(Op, Op)> {
    let h = crate::moments::moment_observable::<f64>(protocol.k, protocol.copy_dim)?.matrix;
    let noisy = noisy_copies(noise, rho, protocol.k)?.with_dims(vec![protocol.total_dim()])?;
    Ok((noisy, h.with_dims(vec![protocol.total_dim()])?))
}

/// Simulates any protocol with a finite-shot realization.
pub fn run(protocol: &RetrievalProtocol, rho: &Op, noise: &Channel<f64>, shots: u64, seed: u64) -> Result<EstimationRun> {
    let (noisy, h) = prepare(protocol, rho, noise)?;
    let sampler = ShotSampler::new(protocol, &noisy, &h)?;
    Ok(run_with(&sampler, protocol, shots, seed))
}

/// Each shot applies a randomly drawn unitary and measures the moment observable.
pub fn run_mixed_unitary(protocol: &RetrievalProtocol, rho: &Op, noise: &Channel<f64>, shots: u64, seed: u64) -> Result<EstimationRun> {
    if !matches!(protocol.realization, Realization::MixedUnitary { .. }) {
        return Err(Error::Unsupported(format!("expected a mixed-unitary protocol, got {}", protocol.realization.kind())));
    }
    run(protocol, rho, noise, shots, seed)
}

/// Each shot measures in the protocol basis and records the outcome's value.
pub fn run_measurement_based(protocol: &RetrievalProtocol, rho: &Op, noise: &Channel<f64>, shots: u64, seed: u64) -> Result<EstimationRun> {
    if !matches!(protocol.realization, Realization::MeasurementBased { .. }) {
        return Err(Error::Unsupported(format!("expected a measurement-based protocol, got {}", protocol.realization.kind())));
    }
    run(protocol, rho, noise, shots, seed)
}

/// Measures the moment observable directly on `k` noisy copies, with no retriever.
pub fn run_unmitigated(rho: &Op, noise: &Channel<f64>, k: usize, shots: u64, seed: u64) -> Result<EstimationRun> {
    let d = noise.out_dim();
    let h = crate::moments::moment_observable::<f64>(k, d)?.matrix.with_dims(vec![d.pow(k as u32)])?;
    let noisy = noisy_copies(noise, rho, k)?.with_dims(vec![d.pow(k as u32)])?;
    let sampler = ShotSampler::direct(&noisy, &h)?;
    let identity = RetrievalProtocol {
        label: format!("unmitigated(k={k})"),
        k,
        copy_dim: d,
        f: 1.0,
        t: 0.0,
        noise: None,
        realization: Realization::ChoiMap { channel: Channel::identity(d.pow(k as u32)), trace_preserving: true },
    };
    Ok(run_with(&sampler, &identity, shots, seed))
}

/// `ln(m) / (1 - alpha)`, or the base-2 logarithm when `base2` is set.
pub fn renyi_entropy(moment_value: f64, alpha: u32, base2: bool) -> Result<f64> {
    if alpha < 2 {
        return Err(Error::InvalidParameter(format!("Renyi order {alpha} < 2")));
    }
    if !(moment_value > 0.0) {
        return Err(Error::InvalidParameter(format!("moment value {moment_value} must be positive")));
    }
    let ln = moment_value.ln() / (1.0 - alpha as f64);
    Ok(if base2 { ln / std::f64::consts::LN_2 } else { ln })
}
