//! Experiment configuration: a TOML document, optionally seeded from a named
//! preset, validated into a [`ResolvedExperiment`].

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use markov_circle::{CircleMap, FiniteKernel, MapFamily};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Syntax(String),
    #[error("config line {line}: {message}")]
    AtLine { line: usize, message: String },
    #[error("config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: Option<u32>,
    pub seed: Option<u64>,
    pub preset: Option<String>,
    pub kernel: Option<KernelSpec>,
    pub maps: Option<Vec<MapSpec>>,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub sync: SyncSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub verify: VerifySection,
}

/// Exactly one source must be given.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub matrix: Option<Vec<Vec<f64>>>,
    pub file: Option<PathBuf>,
    pub random: Option<RandomKernel>,
    pub iid: Option<Vec<f64>>,
    pub group_walk: Option<GroupWalk>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomKernel {
    pub states: usize,
}

/// Random walk on the circle group with step density
/// `1 + spread · cos(2π t)`, discretized into `cells` cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupWalk {
    pub cells: usize,
    #[serde(default)]
    pub spread: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MapSpec {
    Identity,
    Rotation { angle: f64 },
    Projective { matrix: [[f64; 2]; 2] },
    Hyperbolic { stretch: f64, attractor: f64 },
    PiecewiseLinear { breakpoints: Vec<f64>, images: Vec<f64> },
}

impl MapSpec {
    pub fn build(&self) -> markov_circle::Result<CircleMap> {
        match self {
            MapSpec::Identity => Ok(CircleMap::identity()),
            MapSpec::Rotation { angle } => Ok(CircleMap::rotation(*angle)),
            MapSpec::Projective { matrix } => CircleMap::projective(*matrix),
            MapSpec::Hyperbolic { stretch, attractor } => CircleMap::hyperbolic(*stretch, *attractor),
            MapSpec::PiecewiseLinear {
                breakpoints,
                images,
            } => CircleMap::piecewise_linear(breakpoints.clone(), images.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub n: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        Self { n: 256 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialMeasure {
    Uniform,
    /// Every fibre a point mass at `init_point`.
    Point,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub tol: f64,
    pub max_iter: usize,
    pub init: InitialMeasure,
    pub init_point: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 10_000,
            init: InitialMeasure::Uniform,
            init_point: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSection {
    pub trials: usize,
    pub steps: usize,
    pub burn_in: usize,
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self {
            trials: 10,
            steps: 101_000,
            burn_in: 1_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyncSection {
    pub trials: usize,
    pub steps: usize,
    pub delta0: f64,
    pub x: f64,
    pub threshold: f64,
    pub scan_points: usize,
    pub scan_trials: usize,
    pub scan_steps: usize,
    /// Monte Carlo samples for the exponent of the invariant measure.
    pub samples: usize,
}

impl Default for SyncSection {
    fn default() -> Self {
        Self {
            trials: 200,
            steps: 10_000,
            delta0: 0.125,
            x: 0.6,
            threshold: 0.9,
            scan_points: 32,
            scan_trials: 50,
            scan_steps: 2_000,
            samples: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Write the first sync trial's orbit as CSV (large).
    pub orbit_dump: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            orbit_dump: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    /// Replace the dual kernel by the forward kernel (negative control).
    pub corrupt_dual: bool,
}

/// Presets for the standard examples. Explicit `[kernel]` and `[[maps]]`
/// entries take precedence.
pub fn preset(name: &str) -> Option<(KernelSpec, Vec<MapSpec>)> {
    let worked_maps = vec![
        MapSpec::Hyperbolic {
            stretch: 2.0,
            attractor: 0.0,
        },
        MapSpec::Hyperbolic {
            stretch: 2.0,
            attractor: 0.25,
        },
    ];
    let worked_kernel = KernelSpec {
        matrix: Some(vec![vec![0.9, 0.1], vec![0.2, 0.8]]),
        ..KernelSpec::default()
    };
    match name {
        "bounded-pair" => Some((worked_kernel, worked_maps)),
        "iid-uniform" => Some((
            KernelSpec {
                iid: Some(vec![0.5, 0.5]),
                ..KernelSpec::default()
            },
            worked_maps,
        )),
        "finite-positive" => Some((
            KernelSpec {
                random: Some(RandomKernel { states: 3 }),
                ..KernelSpec::default()
            },
            (0..3)
                .map(|i| MapSpec::Hyperbolic {
                    stretch: 2.0,
                    attractor: i as f64 / 3.0,
                })
                .collect(),
        )),
        "random-walk-drive" => Some((
            KernelSpec {
                group_walk: Some(GroupWalk {
                    cells: 8,
                    spread: 0.0,
                }),
                ..KernelSpec::default()
            },
            (0..8)
                .map(|i| MapSpec::Hyperbolic {
                    stretch: 1.5,
                    attractor: i as f64 / 8.0,
                })
                .collect(),
        )),
        "rotations" => Some((
            worked_kernel,
            vec![
                MapSpec::Rotation { angle: 0.2071 },
                MapSpec::Rotation { angle: 0.6180 },
            ],
        )),
        _ => None,
    }
}

pub const PRESETS: [&str; 5] = [
    "bounded-pair",
    "iid-uniform",
    "finite-positive",
    "random-walk-drive",
    "rotations",
];

/// Command-line overrides, applied after parsing.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub env_seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub grid: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct ResolvedExperiment {
    /// Effective configuration after preset expansion and overrides.
    pub config: ExperimentConfig,
    pub seed: u64,
    pub kernel: FiniteKernel,
    pub family: MapFamily,
    /// SHA-256 of the canonical JSON form of `config`.
    pub hash: String,
    /// Where the seed came from, when not the document itself.
    pub seed_source: &'static str,
}

impl ResolvedExperiment {
    pub fn grid(&self) -> usize {
        self.config.grid.n
    }

    pub fn out_dir(&self) -> &Path {
        &self.config.output.dir
    }
}

/// Parses the document, reporting syntax errors with the parser's line and
/// column.
pub fn parse(text: &str) -> Result<ExperimentConfig, ConfigError> {
    toml::from_str(text).map_err(|e| {
        let mut msg = e.message().to_string();
        if let Some(span) = e.span() {
            let (line, col) = line_col(text, span.start);
            msg = format!("config line {line}, column {col}: {msg}");
        }
        ConfigError::Syntax(msg)
    })
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, col)
}

/// 1-based line of `key` inside `[section]` (or at top level when `section`
/// is empty); for arrays of tables, `index` picks the occurrence.
pub fn locate(text: &str, section: &str, index: usize, key: Option<&str>) -> Option<usize> {
    let mut seen = 0usize;
    let mut in_target = section.is_empty();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.starts_with('[') {
            let current = line.trim_matches(|c| c == '[' || c == ']').trim();
            in_target = false;
            if current == section {
                if seen == index {
                    in_target = true;
                    if key.is_none() {
                        return Some(n + 1);
                    }
                }
                seen += 1;
            }
            continue;
        }
        if in_target {
            if let Some(k) = key {
                let name = line.split('=').next().unwrap_or("").trim();
                if name == k {
                    return Some(n + 1);
                }
            }
        }
    }
    None
}

fn at(text: &str, section: &str, index: usize, key: Option<&str>, message: String) -> ConfigError {
    match locate(text, section, index, key).or_else(|| locate(text, section, index, None)) {
        Some(line) => ConfigError::AtLine { line, message },
        None => ConfigError::Invalid(message),
    }
}

fn build_kernel(
    spec: &KernelSpec,
    seed: u64,
    base_dir: &Path,
    text: &str,
) -> Result<FiniteKernel, ConfigError> {
    let sources = [
        spec.matrix.is_some(),
        spec.file.is_some(),
        spec.random.is_some(),
        spec.iid.is_some(),
        spec.group_walk.is_some(),
    ]
    .iter()
    .filter(|s| **s)
    .count();
    if sources != 1 {
        return Err(at(
            text,
            "kernel",
            0,
            None,
            format!("[kernel] needs exactly one of matrix, file, random, iid, group_walk; found {sources}"),
        ));
    }
    let kernel_err = |key: &str, e: markov_circle::Error| at(text, "kernel", 0, Some(key), e.to_string());
    if let Some(rows) = &spec.matrix {
        return FiniteKernel::new(rows.clone()).map_err(|e| kernel_err("matrix", e));
    }
    if let Some(file) = &spec.file {
        let path = base_dir.join(file);
        let body = std::fs::read_to_string(&path).map_err(|source| ConfigError::Io {
            path: path.clone(),
            source,
        })?;
        return body
            .parse::<FiniteKernel>()
            .map_err(|e| at(text, "kernel", 0, Some("file"), format!("{}: {e}", path.display())));
    }
    if let Some(random) = &spec.random {
        if random.states == 0 {
            return Err(at(text, "kernel", 0, Some("random"), "random kernel needs states >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        return Ok(FiniteKernel::random_positive(random.states, &mut rng));
    }
    if let Some(weights) = &spec.iid {
        let m = markov_circle::StationaryVector::new(weights.clone()).map_err(|e| kernel_err("iid", e))?;
        return Ok(FiniteKernel::iid(&m));
    }
    let walk = spec.group_walk.as_ref().expect("one source present");
    if !(walk.spread.abs() < 1.0) {
        return Err(at(
            text,
            "kernel",
            0,
            Some("group_walk"),
            format!("spread {} must satisfy |spread| < 1", walk.spread),
        ));
    }
    let spread = walk.spread;
    FiniteKernel::circle_group_walk(walk.cells, |t| {
        1.0 + spread * (std::f64::consts::TAU * t).cos()
    })
    .map_err(|e| kernel_err("group_walk", e))
}

/// Expands presets, applies overrides, checks every dimension and builds the
/// kernel and map family.
pub fn resolve(
    mut config: ExperimentConfig,
    text: &str,
    base_dir: &Path,
    overrides: &Overrides,
) -> Result<ResolvedExperiment, ConfigError> {
    let version = config.schema_version.unwrap_or(SCHEMA_VERSION);
    if version != SCHEMA_VERSION {
        return Err(at(
            text,
            "",
            0,
            Some("schema_version"),
            format!("unsupported schema_version {version}; expected {SCHEMA_VERSION}"),
        ));
    }
    config.schema_version = Some(SCHEMA_VERSION);

    if let Some(name) = &config.preset {
        let (kernel, maps) = preset(name).ok_or_else(|| {
            at(
                text,
                "",
                0,
                Some("preset"),
                format!("unknown preset {name:?}; known: {}", PRESETS.join(", ")),
            )
        })?;
        config.kernel.get_or_insert(kernel);
        config.maps.get_or_insert(maps);
    }

    let (seed, seed_source) = match (overrides.seed, overrides.env_seed, config.seed) {
        (Some(s), _, _) => (s, "command line"),
        (None, Some(s), _) => (s, "environment"),
        (None, None, Some(s)) => (s, "config"),
        (None, None, None) => {
            return Err(ConfigError::Invalid(
                "no seed: set `seed` in the config or pass --seed".into(),
            ))
        }
    };
    config.seed = Some(seed);
    if let Some(dir) = &overrides.out {
        config.output.dir = dir.clone();
    }
    if let Some(n) = overrides.grid {
        config.grid.n = n;
    }

    let kernel_spec = config
        .kernel
        .as_ref()
        .ok_or_else(|| ConfigError::Invalid("no [kernel] section and no preset".into()))?;
    let kernel = build_kernel(kernel_spec, seed, base_dir, text)?;
    let map_specs = config
        .maps
        .as_ref()
        .ok_or_else(|| ConfigError::Invalid("no [[maps]] entries and no preset".into()))?;
    if map_specs.len() != kernel.size() {
        return Err(at(
            text,
            "maps",
            map_specs.len().saturating_sub(1),
            None,
            format!(
                "{} maps declared but the kernel has {} states",
                map_specs.len(),
                kernel.size()
            ),
        ));
    }
    let maps = map_specs
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            spec.build()
                .map_err(|e| at(text, "maps", i, None, format!("map {i}: {e}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let family = MapFamily::new(maps).map_err(|e| ConfigError::Invalid(e.to_string()))?;

    check_positive(text, "grid", "n", config.grid.n as f64)?;
    if !(config.solver.tol > 0.0) {
        return Err(at(text, "solver", 0, Some("tol"), "tol must be positive".into()));
    }
    check_positive(text, "solver", "max_iter", config.solver.max_iter as f64)?;
    let sim = &config.simulation;
    if sim.trials > 0 && sim.burn_in >= sim.steps {
        return Err(at(
            text,
            "simulation",
            0,
            Some("burn_in"),
            format!("burn_in {} must be below steps {}", sim.burn_in, sim.steps),
        ));
    }
    let sync = &config.sync;
    if !(sync.delta0 > 0.0 && sync.delta0 <= 0.25) {
        return Err(at(text, "sync", 0, Some("delta0"), "delta0 must lie in (0, 1/4]".into()));
    }
    for (key, value, min) in [
        ("steps", sync.steps, 100),
        ("scan_steps", sync.scan_steps, 100),
        ("trials", sync.trials, 1),
        ("scan_trials", sync.scan_trials, 1),
        ("scan_points", sync.scan_points, 1),
        ("samples", sync.samples, 1),
    ] {
        if value < min {
            return Err(at(text, "sync", 0, Some(key), format!("{key} must be at least {min}")));
        }
    }
    if !(0.0..=1.0).contains(&sync.threshold) {
        return Err(at(text, "sync", 0, Some("threshold"), "threshold must lie in [0, 1]".into()));
    }

    let hash = config_hash(&config);
    Ok(ResolvedExperiment {
        config,
        seed,
        kernel,
        family,
        hash,
        seed_source,
    })
}

fn check_positive(text: &str, section: &str, key: &str, value: f64) -> Result<(), ConfigError> {
    if value > 0.0 {
        Ok(())
    } else {
        Err(at(text, section, 0, Some(key), format!("{key} must be positive")))
    }
}

/// The output directory is left out: where results land does not change them.
pub fn config_hash(config: &ExperimentConfig) -> String {
    let mut hashed = config.clone();
    hashed.output.dir = PathBuf::new();
    let canonical = serde_json::to_string(&hashed).expect("config serializes");
    let digest = Sha256::digest(canonical.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Reads and resolves a config file. Without one, `preset` (default
/// `bounded-pair`) is used with all defaults; the seed must then come from
/// the overrides.
pub fn load(
    path: Option<&Path>,
    preset: Option<&str>,
    overrides: &Overrides,
) -> Result<ResolvedExperiment, ConfigError> {
    let (text, base) = match path {
        Some(p) => (
            std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                path: p.to_path_buf(),
                source,
            })?,
            p.parent().map(Path::to_path_buf).unwrap_or_default(),
        ),
        None => (
            format!("preset = \"{}\"\n", preset.unwrap_or("bounded-pair")),
            PathBuf::new(),
        ),
    };
    let config = parse(&text)?;
    resolve(config, &text, &base, overrides)
}

/// Tolerances echoed into every output file.
pub fn tolerance_table(config: &ExperimentConfig) -> BTreeMap<&'static str, f64> {
    BTreeMap::from([
        ("solver_tol", config.solver.tol),
        ("stochastic", markov_circle::kernel::STOCHASTIC_TOL),
        ("stationary_residual", markov_circle::kernel::STATIONARY_RESIDUAL_TOL),
        ("uniqueness", markov_circle::kernel::UNIQUENESS_THRESHOLD),
        ("sandwich_slack", markov_circle::measure::SANDWICH_SLACK),
        ("sync_threshold", config.sync.threshold),
    ])
}
