//! Campaign configuration: one TOML file describes the bench, the
//! optimizer mode, the perturbation schedule, and the output files.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use cvsense::bench::{BenchConfig, Perturbation};
use cvsense::optimize::{BoConfig, GdConfig};

use crate::{check_schema_version, CliError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Gd,
    Bo,
    GdThenBo,
    Landscape,
}

/// One campaign. The global seed is mandatory: every random draw in a run
/// flows from it, so there is no wall-clock seeding anywhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    pub schema_version: String,
    pub mode: Mode,
    pub seed: u64,
    #[serde(default)]
    pub bench: BenchConfig,
    /// Descent stage settings; also the overlay run of landscape mode.
    /// Absent in landscape mode means grid only, no overlay.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub gd: Option<GdConfig>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub bo: Option<BoSection>,
    #[serde(rename = "perturbation", skip_serializing_if = "Vec::is_empty", default)]
    pub perturbations: Vec<Perturbation>,
    #[serde(default)]
    pub landscape: LandscapeConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Surrogate stage settings plus the harness-level warm-start size. The
/// default random count tops a default-length descent trail up to 136
/// warm points for the combined mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoSection {
    #[serde(flatten)]
    pub inner: BoConfig,
    pub random_warm_points: u64,
}

impl Default for BoSection {
    fn default() -> Self {
        BoSection { inner: BoConfig::default(), random_warm_points: 86 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LandscapeConfig {
    pub grid: [usize; 2],
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

impl Default for LandscapeConfig {
    fn default() -> Self {
        LandscapeConfig { grid: [200, 200], lo: [-PI, -PI], hi: [PI, PI] }
    }
}

/// Output file names, resolved against the output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub trace: String,
    pub manifest: String,
    pub landscape: String,
    pub overlay: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            trace: "trace.ndjson".into(),
            manifest: "manifest.json".into(),
            landscape: "landscape.csv".into(),
            overlay: "overlay.ndjson".into(),
        }
    }
}

impl CampaignConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: CampaignConfig = toml::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        check_schema_version(&self.schema_version).map_err(|_| {
            CliError::Config(format!("unsupported schema_version {:?}", self.schema_version))
        })?;
        let [nx, ny] = self.landscape.grid;
        if nx < 2 || ny < 2 {
            return Err(CliError::Config(format!("landscape grid {nx}x{ny} is below 2x2")));
        }
        for axis in 0..2 {
            let (lo, hi) = (self.landscape.lo[axis], self.landscape.hi[axis]);
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(CliError::Config(format!(
                    "landscape bounds [{lo}, {hi}] are not an interval"
                )));
            }
        }
        Ok(())
    }

    /// Descent settings with the fallback applied: a missing [gd] section
    /// means defaults for the gd modes.
    pub fn gd_or_default(&self) -> GdConfig {
        self.gd.unwrap_or_default()
    }

    pub fn bo_or_default(&self) -> BoSection {
        self.bo.unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use cvsense::bench::PerturbationKind;
    use cvsense::optimize::PriorPreset;

    fn minimal(mode: &str) -> String {
        format!("schema_version = \"1.0\"\nmode = \"{mode}\"\nseed = 7\n")
    }

    #[test]
    fn minimal_configs_parse_with_defaults() {
        let cfg: CampaignConfig = toml::from_str(&minimal("gd")).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.mode, Mode::Gd);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.bench, BenchConfig::default());
        assert!(cfg.gd.is_none() && cfg.bo.is_none());
        assert_eq!(cfg.output.trace, "trace.ndjson");
        // Default combined-mode warm start: full descent trail plus the
        // random count, 50 + 86 = 136 points.
        let bo = cfg.bo_or_default();
        assert_eq!(cfg.gd_or_default().epochs + bo.random_warm_points, 136);
        assert_eq!(bo.inner.preset, PriorPreset::Tuned);
    }

    #[test]
    fn full_config_round_trips_through_toml() {
        let text = r#"
schema_version = "1.0"
mode = "gd-then-bo"
seed = 42

[bench]
r = 1.3
phase_noise_rms = 0.01

[gd]
epochs = 12
learning_rate = 1.5
learning_rate_phi_alpha = 20.0

[bo]
epochs = 9
grid_size = [60, 60]
grid_lo = [-1.5707963, 0.0]
grid_hi = [1.5707963, 3.1415926]
preset = "too-loose"
random_warm_points = 10

[[perturbation]]
epoch = 5
delta_phi_hd = 0.5
delta_phi_alpha = 0.5
kind = "kick"

[landscape]
grid = [30, 30]

[output]
trace = "t.ndjson"
"#;
        let cfg: CampaignConfig = toml::from_str(text).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.mode, Mode::GdThenBo);
        assert_eq!(cfg.bench.r, 1.3);
        assert_eq!(cfg.gd.unwrap().epochs, 12);
        let bo = cfg.bo.unwrap();
        assert_eq!(bo.inner.grid_size, (60, 60));
        assert_eq!(bo.inner.preset, PriorPreset::TooLoose);
        assert_eq!(bo.random_warm_points, 10);
        assert_eq!(cfg.perturbations.len(), 1);
        assert_eq!(cfg.perturbations[0].kind, PerturbationKind::Kick);
        assert_eq!(cfg.landscape.grid, [30, 30]);
        assert_eq!(cfg.output.trace, "t.ndjson");

        let echoed = toml::to_string(&cfg).unwrap();
        let back: CampaignConfig = toml::from_str(&echoed).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn bad_configs_are_rejected() {
        // Missing seed.
        assert!(
            toml::from_str::<CampaignConfig>("schema_version = \"1.0\"\nmode = \"gd\"\n").is_err()
        );
        // Unknown top-level key.
        let typo = format!("{}optimiser = 3\n", minimal("gd"));
        assert!(toml::from_str::<CampaignConfig>(&typo).is_err());
        // Future schema major.
        let future: CampaignConfig = toml::from_str(&minimal("gd").replace("1.0", "2.0")).unwrap();
        assert!(future.validate().is_err());
        // Degenerate landscape window.
        let mut cfg: CampaignConfig = toml::from_str(&minimal("landscape")).unwrap();
        cfg.landscape.lo = [1.0, 0.0];
        cfg.landscape.hi = [1.0, 1.0];
        assert!(cfg.validate().is_err());
    }
}
