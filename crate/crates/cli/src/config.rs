//! Run configuration: JSON schema, defaults and validation.

use std::fmt;
use std::path::{Path, PathBuf};

use mfgeo_core::curvature_mfg::StationaryOptions;
use mfgeo_core::discretization::ScalarFunction;
use mfgeo_core::geograph::{ConvergenceSpec, QuadratureSpec};
use mfgeo_core::geometry::{ChartGeometry, FourierMode};
use mfgeo_core::mfg::{Coupling, CouplingKind, Kernel, PicardOptions, Renormalization};
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    MfgSolve,
    CurvatureMfg,
    GraphCurvature,
    GraphConverge,
    SdeValidate,
    SelfCheck,
}

impl CommandKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::MfgSolve => "mfg-solve",
            Self::CurvatureMfg => "curvature-mfg",
            Self::GraphCurvature => "graph-curvature",
            Self::GraphConverge => "graph-converge",
            Self::SdeValidate => "sde-validate",
            Self::SelfCheck => "self-check",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GeometrySpec {
    FlatTorus {
        periods: Vec<f64>,
    },
    PoincareDisk {
        #[serde(default = "two")]
        dim: usize,
        r_max: f64,
    },
    ConformalTorus {
        periods: [f64; 2],
        modes: Vec<FourierMode>,
        #[serde(default = "lattice")]
        lattice: usize,
    },
}

fn two() -> usize {
    2
}

fn lattice() -> usize {
    64
}

impl GeometrySpec {
    pub fn build(&self) -> mfgeo_core::Result<ChartGeometry> {
        match self {
            Self::FlatTorus { periods } => ChartGeometry::flat_torus(periods.clone()),
            Self::PoincareDisk { dim, r_max } => ChartGeometry::poincare_disk(*dim, *r_max),
            Self::ConformalTorus {
                periods,
                modes,
                lattice,
            } => ChartGeometry::conformal_torus(*periods, modes.clone(), *lattice),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Numerics {
    #[serde(default = "resolution")]
    pub resolution: usize,
    #[serde(default = "horizon")]
    pub horizon: f64,
    #[serde(default = "steps")]
    pub steps: usize,
    #[serde(default)]
    pub picard: PicardOptions,
    #[serde(default)]
    pub stationary: StationaryOptions,
}

fn resolution() -> usize {
    64
}

fn horizon() -> f64 {
    0.5
}

fn steps() -> usize {
    100
}

impl Default for Numerics {
    fn default() -> Self {
        Self {
            resolution: resolution(),
            horizon: horizon(),
            steps: steps(),
            picard: PicardOptions::default(),
            stationary: StationaryOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingBlock {
    /// Initial density up to normalisation.
    #[serde(default = "uniform")]
    pub initial: ScalarFunction,
    #[serde(default = "Coupling::zero")]
    pub running: Coupling,
    #[serde(default = "Coupling::zero")]
    pub terminal: Coupling,
    /// Discount rate of the stationary curvature game.
    #[serde(default = "discount")]
    pub discount: f64,
}

fn uniform() -> ScalarFunction {
    ScalarFunction::Constant { value: 1.0 }
}

fn discount() -> f64 {
    1.0
}

impl Default for CouplingBlock {
    fn default() -> Self {
        Self {
            initial: uniform(),
            running: Coupling::zero(),
            terminal: Coupling::zero(),
            discount: discount(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MfgExperiment {
    /// Number of evenly spaced time slices written to the CSVs.
    #[serde(default = "snapshots")]
    pub snapshots: usize,
}

fn snapshots() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurvatureExperiment {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSpec {
    pub nodes: usize,
    /// Connection radius of the geometric graph.
    pub eps: f64,
    #[serde(default)]
    pub density: Option<ScalarFunction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuousSpec {
    pub point: Vec<f64>,
    /// Chart direction, normalised to unit length in the metric.
    pub direction: Vec<f64>,
    pub eps: Vec<f64>,
    #[serde(default = "half")]
    pub delta_ratio: f64,
    #[serde(default)]
    pub quadrature: QuadratureSpec,
}

fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphExperiment {
    /// Edge-list CSV, relative to the config file.
    #[serde(default)]
    pub edges: Option<PathBuf>,
    #[serde(default)]
    pub sample: Option<SampleSpec>,
    /// Ball radius; defaults to the sampling radius, or 1 for edge lists.
    #[serde(default)]
    pub eps: Option<f64>,
    /// Node pairs to evaluate; all edges when absent.
    #[serde(default)]
    pub pairs: Option<Vec<[usize; 2]>>,
    #[serde(default)]
    pub continuous: Option<ContinuousSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HolderSpec {
    /// Chart point carrying the initial Dirac mass.
    pub point: Vec<f64>,
    pub horizon: f64,
    pub steps: usize,
    /// Time-step indices; the first is the reference time.
    pub lags: Vec<usize>,
    #[serde(default = "holder_band")]
    pub band: [f64; 2],
    #[serde(default = "unit_block")]
    pub block: usize,
}

fn unit_block() -> usize {
    1
}

fn holder_band() -> [f64; 2] {
    [0.4, 0.6]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DriftSource {
    Zero,
    /// Optimal drift of the mean field game built from the coupling block.
    Mfg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdeExperiment {
    pub particles: Vec<usize>,
    pub seeds: Vec<u64>,
    #[serde(default = "drift_sources")]
    pub drifts: Vec<DriftSource>,
    #[serde(default = "substeps")]
    pub substeps: usize,
    /// Aggregation block (grid nodes per side) for the W1 comparison.
    #[serde(default = "block")]
    pub block: usize,
    /// Accepted range for `mean W1(smallest N) / mean W1(largest N)`.
    #[serde(default)]
    pub ratio_band: Option<[f64; 2]>,
    #[serde(default)]
    pub holder: Option<HolderSpec>,
}

fn drift_sources() -> Vec<DriftSource> {
    vec![DriftSource::Zero]
}

fn substeps() -> usize {
    4
}

fn block() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Experiment {
    Mfg(MfgExperiment),
    Curvature(CurvatureExperiment),
    Graph(GraphExperiment),
    Converge(ConvergenceSpec),
    Sde(SdeExperiment),
    None,
}

/// Fully resolved configuration, echoed with all defaults into the manifest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: CommandKind,
    pub geometry: Option<GeometrySpec>,
    pub numerics: Numerics,
    pub coupling: CouplingBlock,
    pub experiment: Experiment,
    pub output: PathBuf,
    pub seed: u64,
    /// Directory of the config file, for relative paths.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    command: Option<CommandKind>,
    #[serde(default)]
    geometry: Option<GeometrySpec>,
    #[serde(default)]
    numerics: Numerics,
    #[serde(default)]
    coupling: CouplingBlock,
    #[serde(default)]
    experiment: Option<Value>,
    #[serde(default)]
    output: Option<PathBuf>,
    #[serde(default)]
    seed: Option<u64>,
}

/// Every problem found in a config file.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub violations: Vec<String>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "invalid configuration ({} problem(s)):", self.violations.len())?;
        for v in &self.violations {
            writeln!(f, "  - {v}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

/// Removes the object key at a dotted path; false if nothing was removed.
fn remove_at(value: &mut Value, path: &[String], key: &str) -> bool {
    let mut cur = value;
    for seg in path {
        cur = match cur {
            Value::Object(map) => match map.get_mut(seg) {
                Some(v) => v,
                None => return false,
            },
            Value::Array(items) => match seg.parse::<usize>().ok().and_then(|i| items.get_mut(i)) {
                Some(v) => v,
                None => return false,
            },
            _ => return false,
        };
    }
    match cur {
        Value::Object(map) => map.remove(key).is_some(),
        _ => false,
    }
}

fn unknown_key(message: &str) -> Option<String> {
    let rest = message.strip_prefix("unknown field `")?;
    Some(rest[..rest.find('`')?].to_string())
}

/// Deserializes `value`, dropping and reporting unknown keys one at a time so
/// that all of them are listed. Other errors stop the pass.
fn parse_collecting<T: DeserializeOwned>(mut value: Value, prefix: &str, violations: &mut Vec<String>) -> Option<T> {
    loop {
        match serde_path_to_error::deserialize::<_, T>(value.clone()) {
            Ok(t) => return Some(t),
            Err(err) => {
                let mut segs: Vec<String> = err
                    .path()
                    .iter()
                    .map(|s| s.to_string())
                    .filter(|s| s != "?")
                    .collect();
                let message = err.inner().to_string();
                let at = |segs: &[String]| {
                    let mut p = prefix.to_string();
                    for s in segs {
                        if !p.is_empty() {
                            p.push('.');
                        }
                        p.push_str(s);
                    }
                    if p.is_empty() {
                        "<root>".to_string()
                    } else {
                        p
                    }
                };
                if let Some(key) = unknown_key(&message) {
                    // the reported path may end with the unknown key itself
                    if segs.last() == Some(&key) {
                        segs.pop();
                    }
                    let mut full = segs.clone();
                    full.push(key.clone());
                    violations.push(format!("{}: unknown key", at(&full)));
                    if remove_at(&mut value, &segs, &key) {
                        continue;
                    }
                    return None;
                }
                violations.push(format!("{}: {message}", at(&segs)));
                return None;
            }
        }
    }
}

fn positive(violations: &mut Vec<String>, field: &str, v: f64) {
    if !(v > 0.0 && v.is_finite()) {
        violations.push(format!("{field}: must be positive, got {v}"));
    }
}

fn check_kernel(violations: &mut Vec<String>, field: &str, k: &Kernel) {
    let (name, v, strict) = match *k {
        Kernel::Wendland { radius } => ("radius", radius, true),
        Kernel::Gaussian { width } => ("width", width, true),
        Kernel::Exponential { scale } => ("scale", scale, true),
        Kernel::Constant { value } => ("value", value, false),
        Kernel::Inverse { offset } => ("offset", offset, false),
    };
    let ok = if strict { v > 0.0 } else { v >= 0.0 } && v.is_finite();
    if !ok {
        violations.push(format!("{field}.kernel.{name}: out of range, got {v}"));
    }
}

impl RunConfig {
    fn validate(&self, violations: &mut Vec<String>) {
        let n = &self.numerics;
        if n.resolution < 8 {
            violations.push(format!("numerics.resolution: need at least 8, got {}", n.resolution));
        }
        positive(violations, "numerics.horizon", n.horizon);
        if n.steps == 0 {
            violations.push("numerics.steps: must be at least 1".into());
        }
        let p = &n.picard;
        if !(p.damping > 0.0 && p.damping <= 1.0) {
            violations.push(format!("numerics.picard.damping: must lie in (0, 1], got {}", p.damping));
        }
        positive(violations, "numerics.picard.tolerance", p.tolerance);
        positive(violations, "numerics.stationary.tolerance", n.stationary.tolerance);
        for (name, c) in [("coupling.running", &self.coupling.running), ("coupling.terminal", &self.coupling.terminal)] {
            check_kernel(violations, name, &c.kernel);
            if c.renormalization == Renormalization::KernelMass && c.kind != CouplingKind::Kernel {
                violations.push(format!("{name}.renormalization: only kernel couplings can be renormalised"));
            }
        }
        positive(violations, "coupling.discount", self.coupling.discount);
        let needs_geometry = !matches!(self.command, CommandKind::SelfCheck);
        let graph_from_edges = matches!(&self.experiment, Experiment::Graph(g) if g.edges.is_some() && g.continuous.is_none() && g.sample.is_none());
        if needs_geometry && !graph_from_edges && self.geometry.is_none() {
            violations.push("geometry: required for this command".into());
        }
        if let Some(g) = &self.geometry {
            match g {
                GeometrySpec::FlatTorus { periods } => periods
                    .iter()
                    .enumerate()
                    .for_each(|(k, &l)| positive(violations, &format!("geometry.periods.{k}"), l)),
                GeometrySpec::PoincareDisk { r_max, .. } => {
                    if !(*r_max > 0.0 && *r_max < 1.0) {
                        violations.push(format!("geometry.r_max: must lie in (0, 1), got {r_max}"));
                    }
                }
                GeometrySpec::ConformalTorus { periods, .. } => periods
                    .iter()
                    .enumerate()
                    .for_each(|(k, &l)| positive(violations, &format!("geometry.periods.{k}"), l)),
            }
        }
        match &self.experiment {
            Experiment::Mfg(e) => {
                if e.snapshots < 2 {
                    violations.push("experiment.snapshots: need at least 2".into());
                }
            }
            Experiment::Graph(e) => {
                if let Some(eps) = e.eps {
                    positive(violations, "experiment.eps", eps);
                }
                if let Some(s) = &e.sample {
                    positive(violations, "experiment.sample.eps", s.eps);
                    if s.nodes < 2 {
                        violations.push(format!("experiment.sample.nodes: need at least 2, got {}", s.nodes));
                    }
                }
                if e.edges.is_some() && e.sample.is_some() {
                    violations.push("experiment: give either `edges` or `sample`, not both".into());
                }
                if e.edges.is_none() && e.sample.is_none() && e.continuous.is_none() {
                    violations.push("experiment: need `edges`, `sample` or `continuous`".into());
                }
                if let Some(c) = &e.continuous {
                    c.eps.iter().enumerate().for_each(|(k, &v)| positive(violations, &format!("experiment.continuous.eps.{k}"), v));
                    positive(violations, "experiment.continuous.delta_ratio", c.delta_ratio);
                    if c.eps.is_empty() {
                        violations.push("experiment.continuous.eps: need at least one radius".into());
                    }
                }
            }
            Experiment::Converge(c) => {
                if c.sizes.is_empty() || c.sizes.iter().any(|&n| n <= 2) {
                    violations.push(format!("experiment.sizes: every size must exceed 2, got {:?}", c.sizes));
                }
                positive(violations, "experiment.eps_rule.constant", c.eps_rule.constant);
                positive(violations, "experiment.delta_ratio", c.delta_ratio);
                if c.seeds.is_empty() || c.trials == 0 {
                    violations.push("experiment: need at least one seed and one trial".into());
                }
            }
            Experiment::Sde(s) => {
                if s.particles.is_empty() || s.particles.contains(&0) {
                    violations.push(format!("experiment.particles: need positive counts, got {:?}", s.particles));
                }
                if s.seeds.is_empty() {
                    violations.push("experiment.seeds: need at least one seed".into());
                }
                if s.substeps == 0 || s.block == 0 {
                    violations.push("experiment: substeps and block must be positive".into());
                }
                if let Some(h) = &s.holder {
                    positive(violations, "experiment.holder.horizon", h.horizon);
                    if h.lags.len() < 3 || h.lags.iter().any(|&l| l > h.steps) {
                        violations.push("experiment.holder.lags: need a reference and two lags within the steps".into());
                    }
                }
            }
            Experiment::Curvature(_) | Experiment::None => {}
        }
    }

    /// Replaces the configured seeds by `seed, seed + 1, ...`.
    pub fn override_seed(&mut self, seed: u64) {
        self.seed = seed;
        match &mut self.experiment {
            Experiment::Converge(c) => {
                let k = c.seeds.len() as u64;
                c.seeds = (0..k).map(|i| seed + i).collect();
            }
            Experiment::Sde(s) => {
                let k = s.seeds.len() as u64;
                s.seeds = (0..k).map(|i| seed + i).collect();
            }
            _ => {}
        }
    }
}

/// Parses and validates a config for `command`, listing every violation.
pub fn parse_config(text: &str, command: CommandKind, base_dir: &Path) -> Result<RunConfig, ConfigError> {
    let mut violations = Vec::new();
    let value: Value = match serde_json::from_str(text) {
        Ok(v) => v,
        Err(e) => {
            return Err(ConfigError {
                violations: vec![format!("not valid JSON: {e}")],
            })
        }
    };
    let raw: Option<RawConfig> = parse_collecting(value, "", &mut violations);
    let Some(raw) = raw else {
        return Err(ConfigError { violations });
    };
    if let Some(c) = raw.command {
        if c != command {
            violations.push(format!("command: config is for `{}`, invoked as `{}`", c.name(), command.name()));
        }
    }
    let exp_value = raw.experiment.unwrap_or_else(|| Value::Object(Default::default()));
    let experiment = match command {
        CommandKind::MfgSolve => parse_collecting(exp_value, "experiment", &mut violations).map(Experiment::Mfg),
        CommandKind::CurvatureMfg => parse_collecting(exp_value, "experiment", &mut violations).map(Experiment::Curvature),
        CommandKind::GraphCurvature => parse_collecting(exp_value, "experiment", &mut violations).map(Experiment::Graph),
        CommandKind::GraphConverge => parse_collecting(exp_value, "experiment", &mut violations).map(Experiment::Converge),
        CommandKind::SdeValidate => parse_collecting(exp_value, "experiment", &mut violations).map(Experiment::Sde),
        CommandKind::SelfCheck => Some(Experiment::None),
    };
    let Some(experiment) = experiment else {
        return Err(ConfigError { violations });
    };
    let config = RunConfig {
        command,
        geometry: raw.geometry,
        numerics: raw.numerics,
        coupling: raw.coupling,
        experiment,
        output: raw.output.unwrap_or_else(|| PathBuf::from("out").join(command.name())),
        seed: raw.seed.unwrap_or(0),
        base_dir: base_dir.to_path_buf(),
    };
    config.validate(&mut violations);
    if violations.is_empty() {
        Ok(config)
    } else {
        Err(ConfigError { violations })
    }
}

pub fn load_config(path: &Path, command: CommandKind) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
        violations: vec![format!("cannot read {}: {e}", path.display())],
    })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_config(&text, command, &base)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str, command: CommandKind) -> Result<RunConfig, ConfigError> {
        parse_config(text, command, Path::new("."))
    }

    #[test]
    fn minimal_mfg_config_gets_defaults() {
        let c = parse(r#"{"geometry": {"type": "flat-torus", "periods": [1, 1]}}"#, CommandKind::MfgSolve).unwrap();
        assert_eq!(c.numerics, Numerics::default());
        assert_eq!(c.coupling, CouplingBlock::default());
        assert_eq!(c.output, PathBuf::from("out/mfg-solve"));
        let echo = serde_json::to_value(&c).unwrap();
        assert_eq!(echo["numerics"]["picard"]["max_iters"], 100);
        assert_eq!(echo["experiment"]["snapshots"], 5);
    }

    #[test]
    fn negative_eps_names_the_field() {
        let err = parse(r#"{"experiment": {"edges": "p3.csv", "eps": -1}}"#, CommandKind::GraphCurvature).unwrap_err();
        assert_eq!(err.violations.len(), 1);
        assert!(err.violations[0].starts_with("experiment.eps"), "{err}");
    }

    #[test]
    fn every_unknown_key_is_listed() {
        let err = parse(
            r#"{"geometry": {"type": "flat-torus", "periods": [1, 1]}, "bogus": 1,
                "numerics": {"steps": 10, "stepz": 3}, "experiment": {"snapshot": 2}}"#,
            CommandKind::MfgSolve,
        )
        .unwrap_err();
        let text = err.to_string();
        for key in ["bogus", "numerics.stepz", "experiment.snapshot"] {
            assert!(err.violations.iter().any(|v| v.starts_with(key)), "{key} missing from {text}");
        }
    }

    #[test]
    fn range_violations_are_collected_together() {
        let err = parse(
            r#"{"geometry": {"type": "poincare-disk", "r_max": 1.5},
                "numerics": {"resolution": 4, "horizon": -1}}"#,
            CommandKind::MfgSolve,
        )
        .unwrap_err();
        assert_eq!(err.violations.len(), 3, "{err}");
    }

    #[test]
    fn mismatched_command_is_rejected() {
        let err = parse(r#"{"command": "sde-validate", "geometry": {"type": "flat-torus", "periods": [1, 1]}}"#, CommandKind::MfgSolve)
            .unwrap_err();
        assert!(err.violations[0].starts_with("command"));
    }

    #[test]
    fn seed_override_shifts_seed_lists() {
        let mut c = parse(
            r#"{"geometry": {"type": "flat-torus", "periods": [1, 1]},
                "experiment": {"particles": [10], "seeds": [4, 9, 12]}}"#,
            CommandKind::SdeValidate,
        )
        .unwrap();
        c.override_seed(100);
        match c.experiment {
            Experiment::Sde(s) => assert_eq!(s.seeds, vec![100, 101, 102]),
            _ => unreachable!(),
        }
    }
}
