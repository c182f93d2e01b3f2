//! Trace files and their summaries. A trace is NDJSON: one meta record
//! carrying the schema version and the resolved run context, then one
//! record per epoch. The summary a finished run stores in the manifest and
//! the summary `report` recomputes from the file are the same function of
//! the same records, so the two always agree.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use cvsense::bench::{BenchConfig, Perturbation, PerturbationKind};
use cvsense::fisher::shot_noise_limit_cost;
use cvsense::optimize::{OptimizationTrace, OptimizerKind, TraceRecord};

use crate::config::Mode;
use crate::{check_schema_version, CliError, SCHEMA_VERSION};

/// Leading NDJSON record: run context needed to interpret the epoch
/// records without the original config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    /// Discriminator, always "meta"; epoch records have no such field.
    pub record: String,
    pub schema_version: String,
    pub mode: Mode,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub bench: BenchConfig,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub perturbations: Vec<Perturbation>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub warm_start: Option<WarmSplit>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub aborted: Option<String>,
}

/// How a surrogate run's warm start was assembled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WarmSplit {
    pub trail_points: u64,
    pub random_points: u64,
}

impl TraceMeta {
    pub fn new(mode: Mode, seed: u64, bench: BenchConfig, trace: &OptimizationTrace) -> Self {
        TraceMeta {
            record: "meta".into(),
            schema_version: SCHEMA_VERSION.into(),
            mode,
            seed,
            optimizer: trace.optimizer,
            bench,
            perturbations: Vec::new(),
            warm_start: None,
            aborted: trace.aborted.clone(),
        }
    }
}

/// Serializes the meta record plus one line per epoch.
pub fn render_trace(meta: &TraceMeta, records: &[TraceRecord]) -> Result<String, CliError> {
    let mut out = serde_json::to_string(meta)?;
    out.push('\n');
    for rec in records {
        out.push_str(&serde_json::to_string(rec)?);
        out.push('\n');
    }
    Ok(out)
}

/// Parses a trace file: meta line first, epoch records after, schema
/// major checked before anything else is interpreted.
pub fn parse_trace(path: &Path) -> Result<(TraceMeta, Vec<TraceRecord>), CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Trace(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let head = lines.next().ok_or_else(|| CliError::Trace("empty trace file".into()))?;
    let meta: TraceMeta = serde_json::from_str(head)
        .map_err(|e| CliError::Trace(format!("malformed meta record: {e}")))?;
    if meta.record != "meta" {
        return Err(CliError::Trace(format!(
            "first record is {:?}, expected \"meta\"",
            meta.record
        )));
    }
    check_schema_version(&meta.schema_version)?;
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let rec: TraceRecord = serde_json::from_str(line)
            .map_err(|e| CliError::Trace(format!("malformed record on line {}: {e}", i + 2)))?;
        records.push(rec);
    }
    Ok((meta, records))
}

/// Cost threshold for counting a kicked run as re-converged, relative to
/// the best cost seen before the kick.
pub const RECOVERY_FACTOR: f64 = 1.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KickRecovery {
    pub kick_epoch: u64,
    /// First epoch at or after the kick back within RECOVERY_FACTOR of
    /// the pre-kick best; None when the trace never recovers.
    pub reconverged_epoch: Option<u64>,
}

/// Everything `report` prints, in machine-readable form. Also embedded in
/// the run manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub optimizer: OptimizerKind,
    pub epochs: u64,
    pub best_cost: f64,
    pub best_epoch: u64,
    pub final_phi_hd: f64,
    pub final_phi_alpha: f64,
    pub total_measurements: u64,
    pub shot_noise_limit: f64,
    pub below_snl: bool,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub reconvergence: Vec<KickRecovery>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub aborted: Option<String>,
}

/// Summarizes a trace. Errors on an empty trace and on a trace whose
/// every epoch had an infinite cost, since neither has a best record.
pub fn summarize(meta: &TraceMeta, records: &[TraceRecord]) -> Result<TraceSummary, CliError> {
    if records.is_empty() {
        return Err(CliError::Trace("trace has no epoch records".into()));
    }
    let best = records
        .iter()
        .filter(|r| r.cost.is_finite())
        .min_by(|a, b| a.cost.total_cmp(&b.cost))
        .ok_or_else(|| CliError::Trace("no epoch has a finite cost".into()))?;
    let last = records.last().expect("nonempty");
    let photons = meta.bench.alpha.powi(2) + meta.bench.r.sinh().powi(2);
    let snl = shot_noise_limit_cost(photons, 1)?;
    Ok(TraceSummary {
        optimizer: meta.optimizer,
        epochs: records.len() as u64,
        best_cost: best.cost,
        best_epoch: best.epoch,
        final_phi_hd: last.phi_hd,
        final_phi_alpha: last.phi_alpha,
        total_measurements: last.measurements,
        shot_noise_limit: snl,
        below_snl: best.cost < snl,
        reconvergence: scan_recoveries(&meta.perturbations, records),
        aborted: meta.aborted.clone(),
    })
}

pub fn summarize_file(path: &Path) -> Result<TraceSummary, CliError> {
    let (meta, records) = parse_trace(path)?;
    summarize(&meta, &records)
}

/// Threshold-crossing scan: for each scheduled kick, the first epoch at
/// or after it whose measured cost is back within RECOVERY_FACTOR of the
/// best cost seen strictly before the kick.
fn scan_recoveries(schedule: &[Perturbation], records: &[TraceRecord]) -> Vec<KickRecovery> {
    let mut kicks: Vec<u64> =
        schedule.iter().filter(|p| p.kind == PerturbationKind::Kick).map(|p| p.epoch).collect();
    kicks.sort_unstable();
    kicks.dedup();
    kicks
        .into_iter()
        .map(|kick_epoch| {
            let pre_best = records
                .iter()
                .filter(|r| r.epoch < kick_epoch && r.cost.is_finite())
                .map(|r| r.cost)
                .fold(f64::INFINITY, f64::min);
            let reconverged_epoch = records
                .iter()
                .filter(|r| r.epoch >= kick_epoch)
                .find(|r| r.cost <= RECOVERY_FACTOR * pre_best)
                .map(|r| r.epoch);
            KickRecovery { kick_epoch, reconverged_epoch }
        })
        .collect()
}

impl fmt::Display for TraceSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.optimizer {
            OptimizerKind::GradientDescent => "gradient-descent",
            OptimizerKind::SurrogateModel => "surrogate-model",
        };
        writeln!(f, "optimizer: {kind}")?;
        writeln!(f, "epochs: {}", self.epochs)?;
        writeln!(f, "best cost: {:.6e} (epoch {})", self.best_cost, self.best_epoch)?;
        writeln!(
            f,
            "final settings: phi_hd {:.6}, phi_alpha {:.6}",
            self.final_phi_hd, self.final_phi_alpha
        )?;
        writeln!(f, "total measurements: {}", self.total_measurements)?;
        writeln!(
            f,
            "shot-noise limit: {:.6e}; below SNL: {}",
            self.shot_noise_limit,
            if self.below_snl { "yes" } else { "no" }
        )?;
        for rec in &self.reconvergence {
            match rec.reconverged_epoch {
                Some(e) => writeln!(
                    f,
                    "kick at epoch {}: re-converged at epoch {} ({} epochs)",
                    rec.kick_epoch,
                    e,
                    e - rec.kick_epoch
                )?,
                None => writeln!(f, "kick at epoch {}: not re-converged", rec.kick_epoch)?,
            }
        }
        if let Some(msg) = &self.aborted {
            writeln!(f, "aborted: {msg}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use cvsense::bench::Perturbation;

    fn record(epoch: u64, cost: f64) -> TraceRecord {
        TraceRecord {
            epoch,
            phi_hd: 0.1 * epoch as f64,
            phi_alpha: 1.0,
            cost,
            fisher: 1.0 / cost,
            mu: 0.0,
            var: 1.0,
            true_cost: cost,
            measurements: 5 * (epoch + 1),
            gradient_norm: None,
            ei_max: None,
            events: Vec::new(),
        }
    }

    fn meta_with_kick(kick_epoch: u64) -> TraceMeta {
        let trace = OptimizationTrace {
            optimizer: OptimizerKind::GradientDescent,
            records: Vec::new(),
            aborted: None,
        };
        let mut meta = TraceMeta::new(Mode::Gd, 1, BenchConfig::default(), &trace);
        meta.perturbations.push(Perturbation {
            epoch: kick_epoch,
            delta_phi_hd: 0.5,
            delta_phi_alpha: 0.0,
            kind: PerturbationKind::Kick,
        });
        meta
    }

    #[test]
    fn recovery_scan_finds_the_threshold_crossing() {
        let meta = meta_with_kick(3);
        // Pre-kick best 0.010; kick spikes to 0.05, recovers at epoch 5.
        let costs = [0.012, 0.010, 0.011, 0.050, 0.030, 0.0108, 0.0107];
        let records: Vec<_> = costs.iter().enumerate().map(|(e, &c)| record(e as u64, c)).collect();
        let summary = summarize(&meta, &records).unwrap();
        assert_eq!(
            summary.reconvergence,
            vec![KickRecovery { kick_epoch: 3, reconverged_epoch: Some(5) }]
        );
        assert_eq!(summary.best_cost, 0.010);
        assert_eq!(summary.best_epoch, 1);
        assert_eq!(summary.total_measurements, 35);

        // A trace that never drops back stays unrecovered.
        let stuck: Vec<_> = [0.012, 0.010, 0.011, 0.05, 0.04, 0.04, 0.04]
            .iter()
            .enumerate()
            .map(|(e, &c)| record(e as u64, c))
            .collect();
        let summary = summarize(&meta, &stuck).unwrap();
        assert_eq!(summary.reconvergence[0].reconverged_epoch, None);
    }

    #[test]
    fn empty_and_all_infinite_traces_error() {
        let meta = meta_with_kick(0);
        assert!(summarize(&meta, &[]).is_err());
        let dead = vec![record(0, f64::INFINITY)];
        assert!(summarize(&meta, &dead).is_err());
    }

    #[test]
    fn below_snl_uses_the_probe_photon_budget() {
        let trace = OptimizationTrace {
            optimizer: OptimizerKind::GradientDescent,
            records: Vec::new(),
            aborted: None,
        };
        let meta = TraceMeta::new(Mode::Gd, 1, BenchConfig::default(), &trace);
        // Default probe: <n> = alpha^2 + sinh^2(r), SNL cost 1/(4<n>).
        let summary = summarize(&meta, &[record(0, 7.0e-3)]).unwrap();
        assert!((summary.shot_noise_limit - 7.867e-3).abs() < 1e-5);
        assert!(summary.below_snl);
        let summary = summarize(&meta, &[record(0, 8.0e-3)]).unwrap();
        assert!(!summary.below_snl);
    }
}
