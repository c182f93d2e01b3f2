//! Campaign execution: drive the optimizers from a config, write traces,
//! landscape grids, and the run manifest.

use std::fs;
use std::path::Path;
use std::thread;

use serde::{Deserialize, Serialize};

use cvsense::bench::{true_cost, BenchConfig, VirtualBench};
use cvsense::optimize::{
    random_warm_start, run_bayesian_optimization, run_gradient_descent, warm_start_from_trace,
    OptimizationTrace,
};

use crate::config::{CampaignConfig, LandscapeConfig, Mode};
use crate::summary::{render_trace, summarize, TraceMeta, TraceSummary, WarmSplit};
use crate::{CliError, SCHEMA_VERSION};

/// Manifest written next to the traces: the resolved config, the seeds
/// executed, and one entry per run with the summaries computed from the
/// in-memory traces (identical to what `report` recomputes from disk).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: String,
    pub config: CampaignConfig,
    pub seeds: Vec<u64>,
    pub runs: Vec<RunEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub seed: u64,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub traces: Vec<TraceFile>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub landscape: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub warm_start: Option<WarmSplit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceFile {
    pub file: String,
    pub summary: TraceSummary,
}

/// Executes the campaign for `parallel` consecutive seeds starting at the
/// config seed, writes all files under `out_dir`, and returns the
/// manifest that was written. Runs are fully independent: each gets its
/// own bench seeded with its own seed, so a parallel batch writes byte-
/// identical traces to the same seeds run one at a time.
pub fn run_campaign(
    cfg: &CampaignConfig,
    out_dir: &Path,
    parallel: u64,
) -> Result<Manifest, CliError> {
    if parallel == 0 {
        return Err(CliError::Config("--parallel must be at least 1".into()));
    }
    fs::create_dir_all(out_dir)?;
    let seeds: Vec<u64> = (0..parallel).map(|k| cfg.seed.wrapping_add(k)).collect();
    let multi = parallel > 1;

    let mut runs = Vec::with_capacity(seeds.len());
    let mut first_error: Option<CliError> = None;
    if multi {
        let results: Vec<Result<RunEntry, CliError>> = thread::scope(|scope| {
            let handles: Vec<_> = seeds
                .iter()
                .map(|&seed| scope.spawn(move || execute_run(cfg, seed, out_dir, multi)))
                .collect();
            handles.into_iter().map(|h| h.join().expect("run thread panicked")).collect()
        });
        for result in results {
            match result {
                Ok(entry) => runs.push(entry),
                Err(e) => first_error = first_error.or(Some(e)),
            }
        }
    } else {
        match execute_run(cfg, cfg.seed, out_dir, multi) {
            Ok(entry) => runs.push(entry),
            Err(e) => first_error = Some(e),
        }
    }

    // The manifest reflects whatever completed, so a failed batch still
    // leaves its finished traces accounted for.
    let manifest =
        Manifest { schema_version: SCHEMA_VERSION.into(), config: cfg.clone(), seeds, runs };
    let path = out_dir.join(&cfg.output.manifest);
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    match first_error {
        Some(e) => Err(e),
        None => Ok(manifest),
    }
}

/// One seed's worth of campaign: dispatches on mode, writes this run's
/// files, and returns its manifest entry.
fn execute_run(
    cfg: &CampaignConfig,
    seed: u64,
    out_dir: &Path,
    multi: bool,
) -> Result<RunEntry, CliError> {
    let mut bench_cfg = cfg.bench.clone();
    bench_cfg.rng_seed = seed;
    let name = |base: &str, stage: &str| file_name(base, stage, seed, multi);

    let mut entry = RunEntry { seed, traces: Vec::new(), landscape: None, warm_start: None };
    match cfg.mode {
        Mode::Gd => {
            let mut bench = VirtualBench::new(bench_cfg.clone())?;
            let trace = run_gradient_descent(&mut bench, &cfg.gd_or_default(), &cfg.perturbations)?;
            let mut meta = TraceMeta::new(cfg.mode, seed, bench_cfg, &trace);
            meta.perturbations = cfg.perturbations.clone();
            entry.traces.push(write_stage(out_dir, name(&cfg.output.trace, ""), &meta, &trace)?);
        }
        Mode::Bo => {
            let bo = cfg.bo_or_default();
            let mut bench = VirtualBench::new(bench_cfg.clone())?;
            let warm =
                random_warm_start(&mut bench, bo.random_warm_points, seed, bo.inner.n_samples)?;
            let split = WarmSplit { trail_points: 0, random_points: warm.len() as u64 };
            let trace = run_bayesian_optimization(&mut bench, &bo.inner, &warm)?;
            let mut meta = TraceMeta::new(cfg.mode, seed, bench_cfg, &trace);
            meta.warm_start = Some(split);
            entry.warm_start = Some(split);
            entry.traces.push(write_stage(out_dir, name(&cfg.output.trace, ""), &meta, &trace)?);
        }
        Mode::GdThenBo => {
            let bo = cfg.bo_or_default();
            let mut bench = VirtualBench::new(bench_cfg.clone())?;
            let gd_trace =
                run_gradient_descent(&mut bench, &cfg.gd_or_default(), &cfg.perturbations)?;
            let mut gd_meta = TraceMeta::new(cfg.mode, seed, bench_cfg.clone(), &gd_trace);
            gd_meta.perturbations = cfg.perturbations.clone();
            entry.traces.push(write_stage(
                out_dir,
                name(&cfg.output.trace, "-gd"),
                &gd_meta,
                &gd_trace,
            )?);

            let mut warm = warm_start_from_trace(&gd_trace);
            let trail = warm.len() as u64;
            warm.extend(random_warm_start(
                &mut bench,
                bo.random_warm_points,
                seed,
                bo.inner.n_samples,
            )?);
            let split = WarmSplit { trail_points: trail, random_points: warm.len() as u64 - trail };
            let bo_trace = run_bayesian_optimization(&mut bench, &bo.inner, &warm)?;
            let mut bo_meta = TraceMeta::new(cfg.mode, seed, bench_cfg, &bo_trace);
            bo_meta.warm_start = Some(split);
            entry.warm_start = Some(split);
            entry.traces.push(write_stage(
                out_dir,
                name(&cfg.output.trace, "-bo"),
                &bo_meta,
                &bo_trace,
            )?);
        }
        Mode::Landscape => {
            let file = name(&cfg.output.landscape, "");
            write_landscape(&bench_cfg, &cfg.landscape, &out_dir.join(&file))?;
            entry.landscape = Some(file);
            // The overlay reproduces the recorded campaign on the same
            // grid's coordinates: a descent run, kicks and all, plotted
            // over the landscape by external tooling.
            if cfg.gd.is_some() {
                let mut bench = VirtualBench::new(bench_cfg.clone())?;
                let trace =
                    run_gradient_descent(&mut bench, &cfg.gd_or_default(), &cfg.perturbations)?;
                let mut meta = TraceMeta::new(cfg.mode, seed, bench_cfg, &trace);
                meta.perturbations = cfg.perturbations.clone();
                entry.traces.push(write_stage(
                    out_dir,
                    name(&cfg.output.overlay, ""),
                    &meta,
                    &trace,
                )?);
            }
        }
    }
    Ok(entry)
}

/// Writes one stage's trace file and summarizes it. An aborted run still
/// flushes the partial trace before the error surfaces.
fn write_stage(
    out_dir: &Path,
    file: String,
    meta: &TraceMeta,
    trace: &OptimizationTrace,
) -> Result<TraceFile, CliError> {
    fs::write(out_dir.join(&file), render_trace(meta, &trace.records)?)?;
    if let Some(msg) = &trace.aborted {
        return Err(CliError::Aborted(msg.clone()));
    }
    let summary = summarize(meta, &trace.records)?;
    Ok(TraceFile { file, summary })
}

/// Dense true-cost grid over cell centers, one CSV row per cell. Cells on
/// the landscape's blind lines print inf.
fn write_landscape(
    bench: &BenchConfig,
    land: &LandscapeConfig,
    path: &Path,
) -> Result<(), CliError> {
    let [nx, ny] = land.grid;
    let mut out = String::with_capacity(nx * ny * 24);
    out.push_str("phi_hd,phi_alpha,true_cost\n");
    for i in 0..nx {
        let phi_hd = land.lo[0] + (land.hi[0] - land.lo[0]) * (i as f64 + 0.5) / nx as f64;
        for j in 0..ny {
            let phi_alpha = land.lo[1] + (land.hi[1] - land.lo[1]) * (j as f64 + 0.5) / ny as f64;
            let cost = true_cost(bench, phi_hd, phi_alpha);
            out.push_str(&format!("{phi_hd},{phi_alpha},{cost}\n"));
        }
    }
    Ok(fs::write(path, out)?)
}

/// Output file name for one stage of one run: stage tag before the
/// extension, then a seed tag when several seeds run in one batch.
fn file_name(base: &str, stage: &str, seed: u64, multi: bool) -> String {
    let mut tags = String::from(stage);
    if multi {
        tags.push_str(&format!("-seed{seed}"));
    }
    if tags.is_empty() {
        return base.to_string();
    }
    let path = Path::new(base);
    match (path.file_stem().and_then(|s| s.to_str()), path.extension().and_then(|e| e.to_str())) {
        (Some(stem), Some(ext)) => {
            let parent = path.parent().filter(|p| !p.as_os_str().is_empty());
            let name = format!("{stem}{tags}.{ext}");
            match parent {
                Some(dir) => dir.join(name).to_string_lossy().into_owned(),
                None => name,
            }
        }
        _ => format!("{base}{tags}"),
    }
}
