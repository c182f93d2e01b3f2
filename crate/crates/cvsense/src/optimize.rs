//! Closed-loop optimizers over the two control angles: stochastic
//! gradient descent driven by the shift-rule gradient estimator, and a
//! surrogate-model search that fits a GP to measured costs and steps to
//! the expected-improvement maximum on a candidate grid.
//!
//! Traces record, per epoch, the measured settings and moments, the cost
//! in single-measurement units (directly comparable to the analytic
//! landscape), the noise-free landscape cost at those settings, and the
//! cumulative bench call count for resource accounting.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};
use thiserror::Error;

use crate::bench::{apply_perturbations, true_cost, ControlSettings, Perturbation, VirtualBench};
use crate::estimate::{estimate_cost, estimate_gradient, CostEstimate, EstimateError};
use crate::gp::{expected_improvement, gp_fit, GpError, GpModel, LengthscalePrior};

#[derive(Debug, Error)]
pub enum OptimizeError {
    #[error(transparent)]
    Estimate(#[from] EstimateError),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error("invalid optimizer config: {0}")]
    InvalidConfig(String),
    #[error("warm start needs at least 2 finite-cost points, have {0}")]
    WarmStartTooSmall(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    GradientDescent,
    SurrogateModel,
}

/// One optimization epoch. `cost` and `true_cost` are single-measurement
/// costs 1/F; infinities serialize as null.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRecord {
    pub epoch: u64,
    pub phi_hd: f64,
    pub phi_alpha: f64,
    #[serde(with = "inf_as_null")]
    pub cost: f64,
    pub fisher: f64,
    pub mu: f64,
    pub var: f64,
    #[serde(with = "inf_as_null")]
    pub true_cost: f64,
    /// Cumulative bench calls after this epoch.
    pub measurements: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub gradient_norm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ei_max: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub events: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizationTrace {
    pub optimizer: OptimizerKind,
    pub records: Vec<TraceRecord>,
    /// Set when the run stopped early; the records up to that point stand.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub aborted: Option<String>,
}

impl OptimizationTrace {
    /// Record with the lowest finite measured cost.
    pub fn best(&self) -> Option<&TraceRecord> {
        self.records.iter().filter(|r| r.cost.is_finite()).min_by(|a, b| a.cost.total_cmp(&b.cost))
    }

    pub fn final_settings(&self) -> Option<ControlSettings> {
        self.records.last().map(|r| ControlSettings::new(r.phi_hd, r.phi_alpha))
    }

    pub fn total_measurements(&self) -> u64 {
        self.records.last().map_or(0, |r| r.measurements)
    }
}

mod inf_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GdConfig {
    pub learning_rate: f64,
    /// Separate rate for the displacement angle. Near the benchmark
    /// optimum the cost curvature along φ_HD is roughly fifty times the
    /// curvature along φ_α (the squeezed variance stiffens one direction,
    /// the wide sin² displacement hill flattens the other), so a single
    /// rate cannot both damp φ_HD and track φ_α. None uses
    /// `learning_rate` for both.
    pub learning_rate_phi_alpha: Option<f64>,
    pub epochs: u64,
    pub initial_phi_hd: f64,
    pub initial_phi_alpha: f64,
    pub n_samples: u64,
    /// Displacement-angle shift for the gradient schedule.
    pub s_alpha: f64,
}

impl Default for GdConfig {
    fn default() -> Self {
        GdConfig {
            learning_rate: 0.05,
            learning_rate_phi_alpha: None,
            epochs: 50,
            initial_phi_hd: 0.0,
            initial_phi_alpha: FRAC_PI_2,
            n_samples: 10_000,
            s_alpha: FRAC_PI_2,
        }
    }
}

impl GdConfig {
    pub fn initial(&self) -> ControlSettings {
        ControlSettings::new(self.initial_phi_hd, self.initial_phi_alpha)
    }

    fn rates(&self) -> (f64, f64) {
        (self.learning_rate, self.learning_rate_phi_alpha.unwrap_or(self.learning_rate))
    }

    fn validate(&self) -> Result<(), OptimizeError> {
        for rate in [self.rates().0, self.rates().1] {
            if !rate.is_finite() || rate < 0.0 {
                return Err(OptimizeError::InvalidConfig(format!(
                    "learning rate {rate} must be finite and non-negative"
                )));
            }
        }
        if self.epochs == 0 {
            return Err(OptimizeError::InvalidConfig("epochs must be positive".into()));
        }
        Ok(())
    }
}

/// GD update from one epoch's estimates: a plain step against the cost
/// gradient, except that an epoch with no usable cost (flagged zero
/// Fisher) holds the settings and logs the event.
fn gd_update(
    settings: ControlSettings,
    estimate: &CostEstimate,
    gradient: Option<(f64, f64)>,
    rates: (f64, f64),
) -> (ControlSettings, Option<String>) {
    match gradient {
        Some((d_hd, d_alpha)) if estimate.cost.is_finite() => {
            let next = ControlSettings::new(
                settings.phi_hd - rates.0 * d_hd,
                settings.phi_alpha - rates.1 * d_alpha,
            )
            .wrapped();
            (next, None)
        }
        _ => (settings, Some("infinite cost estimate, settings held".into())),
    }
}

/// Runs stochastic gradient descent on the bench. Each epoch measures at
/// the scheduled-perturbation settings and adopts them for the update, so
/// kicks displace the optimizer once and drift accumulates per epoch.
pub fn run_gradient_descent(
    bench: &mut VirtualBench,
    cfg: &GdConfig,
    schedule: &[Perturbation],
) -> Result<OptimizationTrace, OptimizeError> {
    cfg.validate()?;
    let mut settings = cfg.initial().wrapped();
    let mut records = Vec::with_capacity(cfg.epochs as usize);
    for epoch in 0..cfg.epochs {
        let measured = apply_perturbations(settings, schedule, epoch);
        let mut events = Vec::new();
        if schedule
            .iter()
            .any(|p| p.kind == crate::bench::PerturbationKind::Kick && p.epoch == epoch)
        {
            events.push("kick applied".into());
        }
        let est = estimate_cost(bench, measured.phi_hd, measured.phi_alpha, cfg.n_samples)?;
        let gradient = if est.cost.is_finite() {
            let g = estimate_gradient(bench, &est, cfg.n_samples, cfg.s_alpha)?;
            Some((g.dc_dphi_hd, g.dc_dphi_alpha))
        } else {
            None
        };
        let (next, hold_event) = gd_update(measured, &est, gradient, cfg.rates());
        events.extend(hold_event);
        records.push(TraceRecord {
            epoch,
            phi_hd: measured.phi_hd,
            phi_alpha: measured.phi_alpha,
            cost: est.cost * est.records[0].n_samples as f64,
            fisher: est.fisher,
            mu: est.mu,
            var: est.var,
            true_cost: true_cost(bench.config(), measured.phi_hd, measured.phi_alpha),
            measurements: bench.calls(),
            gradient_norm: gradient.map(|(a, b)| a.hypot(b)),
            ei_max: None,
            events,
        });
        settings = next;
    }
    Ok(OptimizationTrace { optimizer: OptimizerKind::GradientDescent, records, aborted: None })
}

/// Hyperparameter regimes for the surrogate optimizer.
///
/// `Tuned` fits the hyperparameters by MAP under the default lengthscale
/// prior. The pathological presets instead pin the triple the way an
/// experimenter hard-coding bad values would: lengthscale at 100x the
/// default prior mean with a sloppy 15% nugget, or at 1/100x with a
/// near-interpolating one. Pinning is deliberate: expressed only as a
/// prior, either pathology is quietly rescued by the fit inflating the
/// noise term until the posterior is flat, which hides exactly the
/// instability these presets exist to show.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorPreset {
    /// Matched to the landscape's correlation length.
    Tuned,
    /// Lengthscale far beyond the domain width: interpolating unrelated
    /// observations through a near-singular kernel rings, and the ringing
    /// reshuffles with every new point, so the search strides around.
    TooLoose,
    /// Lengthscale far below the grid spacing: every candidate looks
    /// uncorrelated with the data and the search cannot generalize.
    TooStrict,
}

impl PriorPreset {
    pub fn prior(self) -> LengthscalePrior {
        LengthscalePrior::default()
    }

    /// Hard-coded (lengthscale, output_scale, noise_var) for the
    /// pathological presets, given the sample variance of the modeled
    /// outputs; None for the fitted preset.
    pub fn pinned_hyperparameters(self, output_var: f64) -> Option<(f64, f64, f64)> {
        let scale = output_var.max(1e-12);
        match self {
            PriorPreset::Tuned => None,
            PriorPreset::TooLoose => Some((100.0 * 0.3, scale, 0.15 * scale)),
            PriorPreset::TooStrict => Some((0.3 / 100.0, scale, 1e-6 * scale)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoConfig {
    pub epochs: u64,
    pub n_samples: u64,
    pub grid_size: (usize, usize),
    /// Candidate-grid bounds per axis (phi_hd, phi_alpha). The landscape
    /// repeats with period pi in each angle, so a narrower window around a
    /// known operating region avoids splitting the search across
    /// equivalent copies of the optimum.
    pub grid_lo: [f64; 2],
    pub grid_hi: [f64; 2],
    pub preset: PriorPreset,
}

impl Default for BoConfig {
    fn default() -> Self {
        BoConfig {
            epochs: 50,
            n_samples: 10_000,
            grid_size: (200, 200),
            grid_lo: [-PI, -PI],
            grid_hi: [PI, PI],
            preset: PriorPreset::Tuned,
        }
    }
}

impl BoConfig {
    fn validate(&self) -> Result<(), OptimizeError> {
        if self.epochs == 0 {
            return Err(OptimizeError::InvalidConfig("epochs must be positive".into()));
        }
        if self.grid_size.0 < 2 || self.grid_size.1 < 2 {
            return Err(OptimizeError::InvalidConfig(format!(
                "candidate grid {:?} must be at least 2x2",
                self.grid_size
            )));
        }
        for axis in 0..2 {
            if !(self.grid_lo[axis].is_finite()
                && self.grid_hi[axis].is_finite()
                && self.grid_lo[axis] < self.grid_hi[axis])
            {
                return Err(OptimizeError::InvalidConfig(format!(
                    "candidate grid bounds [{}, {}] are not an interval",
                    self.grid_lo[axis], self.grid_hi[axis]
                )));
            }
        }
        Ok(())
    }
}

/// Finite-cost (settings, single-measurement cost) pairs from a trace,
/// for warm-starting the surrogate.
pub fn warm_start_from_trace(trace: &OptimizationTrace) -> Vec<([f64; 2], f64)> {
    trace
        .records
        .iter()
        .filter(|r| r.cost.is_finite())
        .map(|r| ([r.phi_hd, r.phi_alpha], r.cost))
        .collect()
}

/// Measures `count` uniform random settings in (−π, π]² and returns the
/// warm-start pairs. Costs five bench calls per point.
pub fn random_warm_start(
    bench: &mut VirtualBench,
    count: u64,
    seed: u64,
    n_samples: u64,
) -> Result<Vec<([f64; 2], f64)>, OptimizeError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let phi_hd = rng.random_range(-PI..PI);
        let phi_alpha = rng.random_range(-PI..PI);
        let est = estimate_cost(bench, phi_hd, phi_alpha, n_samples)?;
        let cost = est.cost * n_samples as f64;
        if cost.is_finite() {
            out.push(([phi_hd, phi_alpha], cost));
        }
    }
    Ok(out)
}

/// Surrogate-model optimization: per epoch, fit the GP to all observations
/// in log cost, take the expected-improvement maximizer over a uniform
/// candidate grid spanning the configured window, measure there, and
/// append the observation.
///
/// The surrogate models log cost, not raw cost. Measured costs span
/// decades near the landscape's blind lines, and on raw values those
/// outliers set the fitted output scale, drowning the basin the search is
/// meant to refine. The zero prior mean is kept deliberately: in log
/// units it reads "unmeasured regions cost about 1", pessimistic for this
/// landscape, so the search sweeps uncertainty gaps only until a low
/// incumbent exists and then refines it instead of chasing the far field
/// forever. Log cost is monotone in cost, so the argmin and the best-seen
/// record are unchanged; traces and datasets keep raw costs.
///
/// A GP failure after the jitter ladder aborts the run and returns the
/// partial trace with `aborted` set.
pub fn run_bayesian_optimization(
    bench: &mut VirtualBench,
    cfg: &BoConfig,
    warm_start: &[([f64; 2], f64)],
) -> Result<OptimizationTrace, OptimizeError> {
    cfg.validate()?;
    let mut observations: Vec<([f64; 2], f64)> =
        warm_start.iter().copied().filter(|(_, y)| y.is_finite() && *y > 0.0).collect();
    if observations.len() < 2 {
        return Err(OptimizeError::WarmStartTooSmall(observations.len()));
    }
    let mut trace = OptimizationTrace {
        optimizer: OptimizerKind::SurrogateModel,
        records: Vec::with_capacity(cfg.epochs as usize),
        aborted: None,
    };
    for epoch in 0..cfg.epochs {
        let best_seen = observations.iter().map(|(_, y)| y.ln()).fold(f64::INFINITY, f64::min);
        let mut model = GpModel::new(cfg.preset.prior());
        for (x, y) in &observations {
            model.push(*x, y.ln())?;
        }
        let n = observations.len() as f64;
        let mean = observations.iter().map(|(_, y)| y.ln()).sum::<f64>() / n;
        let var = observations.iter().map(|(_, y)| (y.ln() - mean).powi(2)).sum::<f64>() / n;
        let fit_result = match cfg.preset.pinned_hyperparameters(var) {
            Some((lengthscale, output_scale, noise_var)) => {
                model.lengthscale = lengthscale;
                model.output_scale = output_scale;
                model.noise_var = noise_var;
                model.refresh()
            }
            None => gp_fit(&mut model),
        };
        if let Err(err) = fit_result {
            trace.aborted = Some(format!("surrogate fit failed at epoch {epoch}: {err}"));
            return Ok(trace);
        }

        let (nx, ny) = cfg.grid_size;
        let span = [cfg.grid_hi[0] - cfg.grid_lo[0], cfg.grid_hi[1] - cfg.grid_lo[1]];
        let mut best_candidate = ([0.0f64; 2], f64::NEG_INFINITY);
        for i in 0..nx {
            for j in 0..ny {
                let x = [
                    cfg.grid_lo[0] + span[0] * (i as f64 + 0.5) / nx as f64,
                    cfg.grid_lo[1] + span[1] * (j as f64 + 0.5) / ny as f64,
                ];
                let ei = expected_improvement(&model, x, best_seen)?;
                if ei > best_candidate.1 {
                    best_candidate = (x, ei);
                }
            }
        }

        let [phi_hd, phi_alpha] = best_candidate.0;
        let est = estimate_cost(bench, phi_hd, phi_alpha, cfg.n_samples)?;
        let cost = est.cost * cfg.n_samples as f64;
        let mut events = Vec::new();
        if cost.is_finite() {
            observations.push((best_candidate.0, cost));
        } else {
            events.push("infinite cost estimate, observation dropped".into());
        }
        trace.records.push(TraceRecord {
            epoch,
            phi_hd,
            phi_alpha,
            cost,
            fisher: est.fisher,
            mu: est.mu,
            var: est.var,
            true_cost: true_cost(bench.config(), phi_hd, phi_alpha),
            measurements: bench.calls(),
            gradient_norm: None,
            ei_max: Some(best_candidate.1),
            events,
        });
    }
    Ok(trace)
}
