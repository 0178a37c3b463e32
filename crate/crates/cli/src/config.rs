//! TOML run configuration and its translation into a concrete problem.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use robust_synth::benchmarks::{random_contractive_affine, scalar_decay, toy_1d, AffineSystem, MriBenchmark, MriParameters};
use robust_synth::bounds::{estimate_constants, read_constants, DEFAULT_MARGIN};
use robust_synth::{Constants, Cost, Error, Grid, Result, StateGrid, System, TerminalCost};
use rand::SeedableRng;
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemSection,
    pub grid: GridSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub cost: CostSection,
    #[serde(default)]
    pub constants: ConstantsSection,
    #[serde(default)]
    pub disturbance: DisturbanceSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    /// `mri`, `toy-1d`, `decay` or `random-affine`.
    pub benchmark: String,
    pub tau: Option<f64>,
    /// Control levels of `mri`.
    pub levels: Option<usize>,
    /// Dimension, mode count and seed of `random-affine`.
    pub dim: Option<usize>,
    pub modes: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub k_per_axis: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodName {
    #[default]
    Robust,
    Receding,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub horizon: Option<usize>,
    #[serde(default)]
    pub method: MethodName,
    /// Full initial states.
    pub initial_states: Option<Vec<Vec<f64>>>,
    /// `mri` only: `q2(0)` values, with `q1(0) = (0, 1)`.
    pub q2: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    /// Target point of the distance cost used by the non-`mri` systems.
    pub target: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstantsSource {
    #[default]
    Certified,
    Estimate,
    File,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantsSection {
    #[serde(default)]
    pub source: ConstantsSource,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_margin")]
    pub margin: f64,
    #[serde(default)]
    pub seed: u64,
    pub path: Option<PathBuf>,
}

fn default_samples() -> usize {
    2000
}

fn default_margin() -> f64 {
    DEFAULT_MARGIN
}

impl Default for ConstantsSection {
    fn default() -> Self {
        Self {
            source: ConstantsSource::Certified,
            samples: default_samples(),
            margin: default_margin(),
            seed: 0,
            path: None,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceSection {
    #[serde(default)]
    pub magnitude: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default = "yes")]
    pub cache: bool,
    #[serde(default)]
    pub force: bool,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

fn yes() -> bool {
    true
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: default_dir(),
            cache: true,
            force: false,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Format(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if self.grid.k_per_axis == 0 {
            return Err(Error::Validation("grid.k_per_axis must be at least 1".into()));
        }
        if let Some(tau) = self.system.tau {
            if !(tau > 0.0 && tau.is_finite()) {
                return Err(Error::Validation(format!("system.tau must be positive, got {tau}")));
            }
        }
        if !(self.disturbance.magnitude >= 0.0) {
            return Err(Error::Validation("disturbance.magnitude must be >= 0".into()));
        }
        if !(self.constants.margin >= 0.0) {
            return Err(Error::Validation("constants.margin must be >= 0".into()));
        }
        if self.constants.source == ConstantsSource::File && self.constants.path.is_none() {
            return Err(Error::Validation("constants.source = \"file\" needs constants.path".into()));
        }
        if self.run.q2.is_some() && self.run.initial_states.is_some() {
            return Err(Error::Validation("give either run.q2 or run.initial_states, not both".into()));
        }
        if self.run.q2.is_some() && self.system.benchmark != "mri" {
            return Err(Error::Validation("run.q2 only applies to the mri benchmark".into()));
        }
        match self.system.benchmark.as_str() {
            "mri" | "toy-1d" | "decay" | "random-affine" => Ok(()),
            other => Err(Error::Validation(format!(
                "unknown benchmark {other:?}; known: mri, toy-1d, decay, random-affine"
            ))),
        }
    }
}

/// A configured problem ready for synthesis.
pub struct Problem {
    pub system: System,
    pub cost: Cost,
    pub grid: Grid,
    pub horizon: usize,
    pub initial_states: Vec<Vec<f64>>,
    certified: Vec<Constants>,
}

impl Problem {
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        let sys = &cfg.system;
        let (system, certified, cost, horizon, default_y0) = match sys.benchmark.as_str() {
            "mri" => {
                let mut p = MriParameters::default();
                if let Some(tau) = sys.tau {
                    p.tau = tau;
                }
                if let Some(levels) = sys.levels {
                    p.levels = levels;
                }
                if let Some(a) = cfg.cost.alpha {
                    p.alpha = a;
                }
                if let Some(b) = cfg.cost.beta {
                    p.beta = b;
                }
                if let Some(h) = cfg.run.horizon {
                    p.horizon = h;
                }
                let bench = MriBenchmark::<f64>::new(p)?;
                let y0 = cfg
                    .run
                    .q2
                    .clone()
                    .unwrap_or_else(|| vec![[0.0, 1.0]])
                    .into_iter()
                    .map(|q| bench.initial_state(q))
                    .collect();
                let constants = bench.certified_constants()?;
                (bench.system().clone(), constants, bench.cost.clone(), bench.params.horizon, y0)
            }
            name => {
                let tau = sys.tau.unwrap_or(0.2);
                let affine: AffineSystem<f64> = match name {
                    "toy-1d" => toy_1d(tau)?,
                    "decay" => scalar_decay(tau)?,
                    _ => {
                        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(sys.seed.unwrap_or(0));
                        random_contractive_affine(&mut rng, sys.dim.unwrap_or(2), sys.modes.unwrap_or(2), tau)?
                    }
                };
                let dim = affine.system.dim();
                let target = cfg.cost.target.clone().unwrap_or_else(|| vec![0.0; dim]);
                if target.len() != dim {
                    return Err(Error::Validation(format!("cost.target needs {dim} entries")));
                }
                let constants = affine.certified_constants()?;
                let y0 = affine.system.domain().lo().to_vec();
                (affine.system, constants, TerminalCost::distance_to(target), cfg.run.horizon.unwrap_or(10), vec![y0])
            }
        };
        let initial_states = cfg.run.initial_states.clone().unwrap_or(default_y0);
        if initial_states.is_empty() {
            return Err(Error::Validation("no initial states given".into()));
        }
        for y in &initial_states {
            if y.len() != system.dim() {
                return Err(Error::Validation(format!(
                    "initial state {y:?} has {} entries, system dimension is {}",
                    y.len(),
                    system.dim()
                )));
            }
        }
        let grid = StateGrid::new(system.domain().clone(), cfg.grid.k_per_axis)?;
        Ok(Self {
            system,
            cost,
            grid,
            horizon,
            initial_states,
            certified,
        })
    }

    /// Per-mode constants according to `[constants]`.
    pub fn constants(&self, section: &ConstantsSection) -> Result<Vec<Constants>> {
        match section.source {
            ConstantsSource::Certified => Ok(self.certified.clone()),
            ConstantsSource::Estimate => self.estimated(section.samples, section.margin, section.seed),
            ConstantsSource::File => {
                let path = section.path.as_ref().expect("validated");
                let list = read_constants(BufReader::new(fs::File::open(path)?))?;
                if list.len() != self.system.mode_count() {
                    return Err(Error::Validation(format!(
                        "{} holds {} constant rows for {} modes",
                        path.display(),
                        list.len(),
                        self.system.mode_count()
                    )));
                }
                Ok(list)
            }
        }
    }

    pub fn estimated(&self, samples: usize, margin: f64, seed: u64) -> Result<Vec<Constants>> {
        self.system
            .mode_ids()
            .map(|u| estimate_constants(&self.system, u, samples, margin, seed))
            .collect()
    }
}
