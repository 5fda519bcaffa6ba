//! JSON experiment manifests. Unknown keys are rejected and the seed is
//! mandatory.

use std::path::PathBuf;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use rbslam_core::inference::FutureMethod;
use rbslam_core::simulation::{MagneticConfig, RadioLineConfig, RadioSquareConfig, ScenarioConfig, VisualConfig};

use crate::experiments::{Method, Settings};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentManifest {
    pub seed: u64,
    pub scenario: ScenarioConfig,
    pub methods: Vec<Method>,
    /// Monte Carlo repetitions per level.
    #[serde(default = "ExperimentManifest::default_runs")]
    pub runs: usize,
    /// Repetitions used with `--paper-scale`.
    #[serde(default = "ExperimentManifest::default_paper_runs")]
    pub paper_runs: usize,
    #[serde(default = "ExperimentManifest::default_particles")]
    pub particles: usize,
    /// Smoother iterations `K`.
    #[serde(default = "ExperimentManifest::default_iterations")]
    pub iterations: usize,
    /// Magnetometer bias for `magnetic_3d`, landmark initialization variance
    /// for `visual2d`; radio scenarios take the single level 0.
    #[serde(default = "ExperimentManifest::default_levels")]
    pub levels: Vec<f64>,
    #[serde(default = "ExperimentManifest::default_prune_nats")]
    pub prune_nats: f64,
    #[serde(default = "ExperimentManifest::default_future")]
    pub future: FutureMethod,
    #[serde(default = "ExperimentManifest::default_localize_jitter")]
    pub localize_jitter: f64,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Points per side of the exported map grids.
    #[serde(default = "ExperimentManifest::default_grid")]
    pub grid: usize,
    /// Map grids are exported for the first this many runs of every level.
    #[serde(default = "ExperimentManifest::default_map_runs")]
    pub map_runs: usize,
}

impl ExperimentManifest {
    fn default_runs() -> usize {
        20
    }
    fn default_paper_runs() -> usize {
        100
    }
    fn default_particles() -> usize {
        100
    }
    fn default_iterations() -> usize {
        10
    }
    fn default_levels() -> Vec<f64> {
        vec![0.0]
    }
    fn default_prune_nats() -> f64 {
        1000.0
    }
    fn default_future() -> FutureMethod {
        FutureMethod::Incremental
    }
    fn default_localize_jitter() -> f64 {
        0.05
    }
    fn default_grid() -> usize {
        60
    }
    fn default_map_runs() -> usize {
        1
    }

    /// A manifest with defaults for everything but the listed fields.
    pub fn new(seed: u64, scenario: ScenarioConfig, methods: Vec<Method>) -> Self {
        ExperimentManifest {
            seed,
            scenario,
            methods,
            runs: Self::default_runs(),
            paper_runs: Self::default_paper_runs(),
            particles: Self::default_particles(),
            iterations: Self::default_iterations(),
            levels: Self::default_levels(),
            prune_nats: Self::default_prune_nats(),
            future: Self::default_future(),
            localize_jitter: Self::default_localize_jitter(),
            workers: None,
            out: None,
            grid: Self::default_grid(),
            map_runs: Self::default_map_runs(),
        }
    }

    pub fn from_json(text: &str) -> anyhow::Result<Self> {
        let m: ExperimentManifest = serde_json::from_str(text).context("invalid manifest")?;
        m.validate()?;
        Ok(m)
    }

    pub fn from_path(path: &std::path::Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.methods.is_empty() {
            bail!("`methods` must not be empty");
        }
        if self.runs == 0 || self.paper_runs == 0 {
            bail!("`runs` and `paper_runs` must be positive");
        }
        if self.levels.is_empty() || self.levels.iter().any(|l| !l.is_finite()) {
            bail!("`levels` must be a non-empty list of finite numbers");
        }
        let particle = self.methods.iter().any(|m| matches!(m, Method::Pf | Method::Ps | Method::Localize));
        if particle && self.particles == 0 {
            bail!("`particles` must be positive");
        }
        if self.methods.contains(&Method::Ps) && self.iterations == 0 {
            bail!("`iterations` must be positive when PS is requested");
        }
        if !(self.prune_nats > 0.0) {
            bail!("`prune_nats` must be positive");
        }
        if !(self.localize_jitter >= 0.0) {
            bail!("`localize_jitter` must be non-negative");
        }
        if self.grid < 2 {
            bail!("`grid` must be at least 2");
        }
        if self.workers == Some(0) {
            bail!("`workers` must be positive");
        }
        let radio = matches!(self.scenario, ScenarioConfig::RadioSquare(_) | ScenarioConfig::RadioLine(_));
        if radio && self.levels != [0.0] {
            bail!("`levels` has no meaning for radio scenarios; use [0]");
        }
        if self.methods.contains(&Method::Localize) && !radio {
            bail!("`localize` needs a radio scenario");
        }
        let mut sorted = self.methods.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.methods.len() {
            bail!("`methods` lists a method twice");
        }
        Ok(())
    }

    pub fn settings(&self) -> Settings {
        Settings {
            particles: self.particles,
            iterations: self.iterations,
            prune_nats: self.prune_nats,
            future: self.future,
            methods: self.methods.clone(),
            localize_jitter: self.localize_jitter,
        }
    }

    /// The built-in desk-scale manifests behind `reproduce-figure`.
    pub fn figure(number: u32, seed: u64) -> anyhow::Result<Self> {
        use Method::*;
        let m = match number {
            4 => ExperimentManifest {
                iterations: 50,
                ..Self::new(seed, ScenarioConfig::RadioSquare(RadioSquareConfig::default()), vec![Pf, Ps])
            },
            5 => ExperimentManifest {
                iterations: 50,
                ..Self::new(seed, ScenarioConfig::RadioLine(RadioLineConfig::default()), vec![Pf, Ps])
            },
            7 => ExperimentManifest {
                runs: 10,
                levels: vec![0.0, 5.0],
                ..Self::new(seed, ScenarioConfig::Magnetic3d(MagneticConfig::default()), vec![Pf, Ps, Ekf, Eks])
            },
            8 => ExperimentManifest {
                paper_runs: 20,
                levels: vec![0.0, 0.5, 1.0, 2.0],
                ..Self::new(seed, ScenarioConfig::Visual2d(VisualConfig::default()), vec![Pf, Ps, Ekf, Eks])
            },
            _ => bail!("no built-in manifest for figure {number}; choose 4, 5, 7 or 8"),
        };
        m.validate()?;
        Ok(m)
    }

    /// Known-map localization on the square radio map. The sensor noise is
    /// sized to the spacing of the initial particles: with `N` particles
    /// spread uniformly over the map, the nearest one to the truth sits
    /// about `½ √(area / N)` away and must not be ruled out by the first
    /// measurement.
    pub fn localization(seed: u64) -> Self {
        let mut cfg = RadioSquareConfig::default();
        cfg.hyper.sigma_noise2 = 0.25;
        ExperimentManifest {
            particles: 500,
            ..Self::new(seed, ScenarioConfig::RadioSquare(cfg), vec![Method::Localize])
        }
    }
}
