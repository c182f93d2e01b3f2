//! Simulated homodyne bench: prepares the lossy squeezed-displaced probe,
//! applies Gaussian phase noise, and returns finite sample statistics.
//! Supports kick and drift perturbations of the control settings, plus a
//! noise-free analytic cost oracle for tests and landscape plots.
//!
//! Phase noise is drawn independently per sample on the measurement basis
//! (and optionally the displacement lock), zero-mean with the configured
//! RMS. Noise on the basis is equivalent to counter-rotating the state, so
//! sampling uses the exact normal marginal of the Gaussian state at the
//! jittered angle rather than trajectory-level physics.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};
use thiserror::Error;

use crate::fisher::{self, QuadratureDerivatives};
use crate::gaussian::{
    apply_gate, apply_loss, homodyne_moments, vacuum, Gate, GaussianError, GaussianState,
    LossChannel,
};

#[derive(Debug, Error, PartialEq)]
pub enum BenchError {
    #[error(transparent)]
    State(#[from] GaussianError),
    #[error("phase noise RMS {0} must be finite and non-negative")]
    InvalidPhaseNoise(f64),
    #[error("encoded phase {0} must be finite")]
    InvalidEncodedPhase(f64),
    #[error("sample count {0} is too small to estimate a variance")]
    TooFewSamples(u64),
}

/// Physical parameters of the simulated experiment. Defaults reproduce the
/// benchmark probe: r = 1.52, |α| = 5.2, η = 0.72, no thermal photons,
/// 0.03 rad of phase noise, 10⁴ samples per measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub r: f64,
    pub alpha: f64,
    pub eta: f64,
    pub n_bar: f64,
    /// RMS of the zero-mean Gaussian jitter on the measurement basis.
    pub phase_noise_rms: f64,
    /// RMS of independent jitter on the displacement lock angle.
    pub displacement_noise_rms: f64,
    /// Unknown phase the interferometer is estimating; rotates the probe
    /// after preparation. Cost and gradient estimates are derivatives with
    /// respect to this phase at the operating point.
    pub encoded_phase: f64,
    /// Draw one noise offset per measurement batch instead of per sample.
    pub batch_phase_noise: bool,
    pub samples_per_measurement: u64,
    pub rng_seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            r: 1.52,
            alpha: 5.2,
            eta: 0.72,
            n_bar: 0.0,
            phase_noise_rms: 0.03,
            displacement_noise_rms: 0.0,
            encoded_phase: 0.0,
            batch_phase_noise: false,
            samples_per_measurement: 10_000,
            rng_seed: 0,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        // Route parameter checks through the state machinery so the bench
        // rejects exactly what preparation would reject.
        let squeezed = apply_gate(&vacuum(), Gate::Squeeze { r: self.r })?;
        let displaced = apply_gate(&squeezed, Gate::Displace { alpha: self.alpha, phi: 0.0 })?;
        apply_loss(&displaced, LossChannel { eta: self.eta, n_bar: self.n_bar })?;
        for rms in [self.phase_noise_rms, self.displacement_noise_rms] {
            if !rms.is_finite() || rms < 0.0 {
                return Err(BenchError::InvalidPhaseNoise(rms));
            }
        }
        if !self.encoded_phase.is_finite() {
            return Err(BenchError::InvalidEncodedPhase(self.encoded_phase));
        }
        if self.samples_per_measurement < 2 {
            return Err(BenchError::TooFewSamples(self.samples_per_measurement));
        }
        Ok(())
    }
}

/// Sample statistics of one homodyne measurement batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub phi_hd_requested: f64,
    pub phi_alpha_requested: f64,
    pub sample_mean: f64,
    pub sample_var: f64,
    pub n_samples: u64,
    pub seed_used: u64,
}

/// The two control parameters the optimizers drive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlSettings {
    pub phi_hd: f64,
    pub phi_alpha: f64,
}

impl ControlSettings {
    pub fn new(phi_hd: f64, phi_alpha: f64) -> Self {
        ControlSettings { phi_hd, phi_alpha }
    }

    pub fn wrapped(self) -> Self {
        ControlSettings { phi_hd: wrap_angle(self.phi_hd), phi_alpha: wrap_angle(self.phi_alpha) }
    }
}

/// Wraps an angle to the principal interval (−π, π].
pub fn wrap_angle(x: f64) -> f64 {
    let mut y = x % TAU;
    if y <= -PI {
        y += TAU;
    } else if y > PI {
        y -= TAU;
    }
    y
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbationKind {
    /// One-shot offset applied exactly at `epoch`.
    Kick,
    /// Per-epoch offset applied every epoch strictly after `epoch`; an
    /// optimizer that adopts the perturbed settings accumulates it as a
    /// cumulative drift of rate · (epoch − start).
    DriftRate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub epoch: u64,
    pub delta_phi_hd: f64,
    pub delta_phi_alpha: f64,
    pub kind: PerturbationKind,
}

/// Control settings with the scheduled offsets for `epoch` added. Pure in
/// (settings, schedule, epoch), so trace replays reproduce the exact
/// requested settings.
pub fn apply_perturbations(
    settings: ControlSettings,
    schedule: &[Perturbation],
    epoch: u64,
) -> ControlSettings {
    let mut out = settings;
    for p in schedule {
        let applies = match p.kind {
            PerturbationKind::Kick => epoch == p.epoch,
            PerturbationKind::DriftRate => epoch > p.epoch,
        };
        if applies {
            out.phi_hd += p.delta_phi_hd;
            out.phi_alpha += p.delta_phi_alpha;
        }
    }
    out.wrapped()
}

/// Analytic homodyne moments and encoded-phase derivatives for the probe,
/// generalizing the vacuum-loss landscape to a thermal floor (1−η)(2n̄+1).
fn noiseless_quadrature_derivatives(
    cfg: &BenchConfig,
    phi_hd: f64,
    phi_alpha: f64,
) -> QuadratureDerivatives {
    let phi = phi_hd - cfg.encoded_phase;
    let (s, c) = phi.sin_cos();
    let floor = (1.0 - cfg.eta) * (2.0 * cfg.n_bar + 1.0);
    let var = cfg.eta * ((-2.0 * cfg.r).exp() * c * c + (2.0 * cfg.r).exp() * s * s) + floor;
    let root_eta = cfg.eta.sqrt();
    QuadratureDerivatives {
        mu: 2.0 * root_eta * cfg.alpha * (phi_alpha - phi).cos(),
        var,
        dmu_dphi: -2.0 * root_eta * cfg.alpha * (phi_alpha - phi).sin(),
        dvar_dphi: -2.0 * cfg.eta * (2.0 * cfg.r).sinh() * (2.0 * phi).sin(),
    }
}

/// Single-shot analytic cost at the requested settings: the noise-free
/// landscape oracle. Zero Fisher information yields the infinity sentinel.
/// At n̄ = 0 this is exactly the closed-form landscape of
/// [`fisher::analytic_fisher`].
pub fn true_cost(cfg: &BenchConfig, phi_hd: f64, phi_alpha: f64) -> f64 {
    let q = noiseless_quadrature_derivatives(cfg, phi_hd, phi_alpha);
    fisher::cost(&q, 1).expect("valid config gives positive variance")
}

/// [`true_cost`] with basis phase noise folded in as variance broadening:
/// V ← V + (∂μ/∂φ · σ_p)², the first-order effect of basis jitter on a
/// mean-sensitive quadrature.
pub fn true_cost_with_phase_noise(cfg: &BenchConfig, phi_hd: f64, phi_alpha: f64) -> f64 {
    let mut q = noiseless_quadrature_derivatives(cfg, phi_hd, phi_alpha);
    q.var += (q.dmu_dphi * cfg.phase_noise_rms).powi(2);
    fisher::cost(&q, 1).expect("valid config gives positive variance")
}

fn derive_call_seed(rng_seed: u64, call_index: u64) -> u64 {
    split_mix_64(split_mix_64(rng_seed).wrapping_add(call_index))
}

fn split_mix_64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The simulated experiment. Owns a call counter from which each
/// measurement derives its own RNG seed, so a bench is deterministic in
/// (config, call sequence) and each record can be replayed in isolation.
#[derive(Debug, Clone)]
pub struct VirtualBench {
    cfg: BenchConfig,
    calls: u64,
}

impl VirtualBench {
    pub fn new(cfg: BenchConfig) -> Result<Self, BenchError> {
        cfg.validate()?;
        Ok(VirtualBench { cfg, calls: 0 })
    }

    pub fn config(&self) -> &BenchConfig {
        &self.cfg
    }

    /// Total measurement calls issued so far; the resource accounting unit.
    pub fn calls(&self) -> u64 {
        self.calls
    }

    pub fn measure(
        &mut self,
        phi_hd: f64,
        phi_alpha: f64,
    ) -> Result<MeasurementRecord, BenchError> {
        self.measure_with_samples(phi_hd, phi_alpha, self.cfg.samples_per_measurement)
    }

    /// One measurement batch of `n_samples` homodyne outcomes at basis
    /// `phi_hd` with displacement angle `phi_alpha`.
    pub fn measure_with_samples(
        &mut self,
        phi_hd: f64,
        phi_alpha: f64,
        n_samples: u64,
    ) -> Result<MeasurementRecord, BenchError> {
        if n_samples < 2 {
            return Err(BenchError::TooFewSamples(n_samples));
        }
        let seed_used = derive_call_seed(self.cfg.rng_seed, self.calls);
        self.calls += 1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed_used);

        let cfg = self.cfg.clone();
        let basis_noise = noise_distribution(cfg.phase_noise_rms);
        let disp_noise = noise_distribution(cfg.displacement_noise_rms);
        let loss = LossChannel { eta: cfg.eta, n_bar: cfg.n_bar };
        let squeezed = apply_gate(&vacuum(), Gate::Squeeze { r: cfg.r })?;
        let prepare = |disp_angle: f64| -> Result<GaussianState, BenchError> {
            let displaced =
                apply_gate(&squeezed, Gate::Displace { alpha: cfg.alpha, phi: disp_angle })?;
            let lossy = apply_loss(&displaced, loss)?;
            Ok(apply_gate(&lossy, Gate::Rotate { phi: cfg.encoded_phase })?)
        };

        let (batch_basis, batch_disp) = if cfg.batch_phase_noise {
            (sample_noise(&mut rng, &basis_noise), sample_noise(&mut rng, &disp_noise))
        } else {
            (0.0, 0.0)
        };
        // The state only varies between samples when the displacement lock
        // jitters per sample; otherwise prepare it once.
        let fixed_state = if cfg.batch_phase_noise || disp_noise.is_none() {
            Some(prepare(phi_alpha + batch_disp)?)
        } else {
            None
        };

        let mut mean = 0.0;
        let mut m2 = 0.0;
        for i in 1..=n_samples {
            let (basis_offset, disp_offset) = if cfg.batch_phase_noise {
                (batch_basis, batch_disp)
            } else {
                (sample_noise(&mut rng, &basis_noise), sample_noise(&mut rng, &disp_noise))
            };
            let fresh_state;
            let state = match &fixed_state {
                Some(s) => s,
                None => {
                    fresh_state = prepare(phi_alpha + disp_offset)?;
                    &fresh_state
                }
            };
            let (mu, var) = homodyne_moments(state, phi_hd + basis_offset);
            let z: f64 = StandardNormal.sample(&mut rng);
            let x = mu + var.sqrt() * z;
            let delta = x - mean;
            mean += delta / i as f64;
            m2 += delta * (x - mean);
        }

        Ok(MeasurementRecord {
            phi_hd_requested: phi_hd,
            phi_alpha_requested: phi_alpha,
            sample_mean: mean,
            sample_var: m2 / (n_samples - 1) as f64,
            n_samples,
            seed_used,
        })
    }
}

fn noise_distribution(rms: f64) -> Option<Normal<f64>> {
    (rms > 0.0).then(|| Normal::new(0.0, rms).expect("validated rms"))
}

fn sample_noise(rng: &mut ChaCha8Rng, dist: &Option<Normal<f64>>) -> f64 {
    dist.as_ref().map_or(0.0, |d| d.sample(rng))
}
