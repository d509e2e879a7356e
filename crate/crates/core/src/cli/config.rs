use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::scenarios::{find_scenario, ScenarioInfo, CHECKS};
use crate::condexp::RegressionBasis;
use crate::solver::SolverConfig;

/// A schema or validation failure, reported with the dotted path of the
/// offending field.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.field.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.field, self.message)
        }
    }
}

/// One experiment: scenario, model, driver, grid, Monte Carlo size, basis,
/// solver and the checks to run. Optional fields are filled with the
/// scenario's defaults by [`ExperimentConfig::resolve`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: String,
    pub checks: Option<Vec<String>>,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub node_summaries: bool,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub monte_carlo: MonteCarloConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub marks: Option<MarksConfig>,
    #[serde(default)]
    pub driver: DriverConfig,
    pub terminal: Option<TerminalConfig>,
    pub basis: Option<BasisConfig>,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub stability: StabilityConfig,
    #[serde(default)]
    pub comparison: ComparisonConfig,
    #[serde(default)]
    pub u_map: UMapConfig,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub horizon: f64,
    pub steps: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            steps: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloConfig {
    pub paths: Option<usize>,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_seed() -> u64 {
    1
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self {
            paths: None,
            seed: default_seed(),
        }
    }
}

/// `dX = drift dt + sigma dW + jump_scale ∫ e Ñ(dt, de)`, started at `x0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub drift: f64,
    pub sigma: f64,
    pub jump_scale: f64,
    pub x0: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            drift: 0.0,
            sigma: 1.0,
            jump_scale: 0.0,
            x0: 0.0,
        }
    }
}

/// One jump component: atoms as `[mark, weight]` pairs outside `cutoff`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarksConfig {
    pub cutoff: f64,
    pub atoms: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriverConfig {
    /// Exponent of the entropic driver.
    pub gamma: f64,
    /// `c` of `f = c·y`.
    pub coefficient: f64,
    /// Weight of the running-sup functional.
    pub delta: f64,
    /// Constant added to the upper driver of the comparison pair.
    pub shift: f64,
    /// Lag `θ` of the deferred-value functional.
    pub lag: f64,
    /// Weight `κ` of the deferred value.
    pub kappa: f64,
}

impl Default for DriverConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            coefficient: 1.0,
            delta: 0.5,
            shift: 0.5,
            lag: 0.5,
            kappa: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalKind {
    Constant,
    Sine,
    Cosine,
    Identity,
}

/// `ξ(x) = level + amplitude · shape(x_0)`; `constant` has no shape term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerminalConfig {
    pub kind: TerminalKind,
    #[serde(default)]
    pub level: f64,
    #[serde(default = "one")]
    pub amplitude: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKindConfig {
    Polynomial,
    PiecewiseLinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisConfig {
    pub kind: BasisKindConfig,
    #[serde(default = "default_degree")]
    pub degree: usize,
    #[serde(default = "default_knots")]
    pub knots: usize,
    #[serde(default = "default_ridge")]
    pub ridge: f64,
}

fn default_degree() -> usize {
    3
}

fn default_knots() -> usize {
    32
}

fn default_ridge() -> f64 {
    1e-8
}

impl BasisConfig {
    pub fn build(&self) -> crate::Result<RegressionBasis> {
        match self.kind {
            BasisKindConfig::Polynomial => RegressionBasis::new(self.degree, self.ridge),
            BasisKindConfig::PiecewiseLinear => RegressionBasis::piecewise_linear(self.knots, self.ridge),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub tolerance: f64,
    pub max_iter: usize,
    pub beta_weight: f64,
    pub window: Option<f64>,
    pub schedule: Vec<f64>,
    pub early_stop: bool,
    pub monitor_p: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        let c = SolverConfig::default();
        Self {
            tolerance: c.tolerance,
            max_iter: c.max_iter,
            beta_weight: c.beta_weight,
            window: c.window,
            schedule: c.schedule,
            early_stop: false,
            monitor_p: c.monitor_p,
        }
    }
}

impl SolverSection {
    pub fn build(&self) -> SolverConfig {
        SolverConfig {
            tolerance: self.tolerance,
            max_iter: self.max_iter,
            beta_weight: self.beta_weight,
            window: self.window,
            schedule: self.schedule.clone(),
            early_stop: self.early_stop,
            monitor_p: self.monitor_p,
        }
    }
}

/// Perturbation family `(ξ + ε·terminal_weight·cos(x_0), f + ε·generator_weight)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StabilityConfig {
    pub eps: Vec<f64>,
    pub p: f64,
    pub terminal_weight: f64,
    pub generator_weight: f64,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            eps: vec![0.0, 0.01, 0.02, 0.04],
            p: 2.0,
            terminal_weight: 1.0,
            generator_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ComparisonConfig {
    /// `None` uses `10⁻³` of the larger `S∞`.
    pub noise_floor: Option<f64>,
    pub probes: usize,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        Self {
            noise_floor: None,
            probes: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UMapConfig {
    pub times: Vec<f64>,
    pub states: Vec<f64>,
    pub paths: usize,
    pub seeds: Vec<u64>,
    pub rho: f64,
    pub alpha: f64,
    pub max_over_median: f64,
}

impl Default for UMapConfig {
    fn default() -> Self {
        Self {
            times: (0..10).map(|k| k as f64 / 10.0).collect(),
            states: (0..11).map(|k| -2.0 + 0.4 * k as f64).collect(),
            paths: 2000,
            seeds: vec![1, 2],
            rho: 0.0,
            alpha: 1.0,
            max_over_median: 10.0,
        }
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub out: Option<PathBuf>,
    pub checks: Option<Vec<String>>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| {
            let field = e.span().map(|s| locate(text, s.start)).unwrap_or_default();
            ConfigError::new(field, e.message().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.monte_carlo.seed = seed;
        }
        if let Some(paths) = o.paths {
            self.monte_carlo.paths = Some(paths);
        }
        if let Some(out) = &o.out {
            self.output_dir = out.clone();
        }
        if let Some(checks) = &o.checks {
            self.checks = Some(checks.clone());
        }
    }

    pub fn scenario_info(&self) -> Result<&'static ScenarioInfo, ConfigError> {
        find_scenario(&self.scenario).ok_or_else(|| {
            ConfigError::new("scenario", format!("unknown scenario {:?}; see list-scenarios", self.scenario))
        })
    }

    /// Fill scenario defaults and validate every field.
    pub fn resolve(mut self) -> Result<Self, ConfigError> {
        let info = self.scenario_info()?;
        if self.checks.is_none() {
            self.checks = Some(info.default_checks.iter().map(|s| s.to_string()).collect());
        }
        if self.monte_carlo.paths.is_none() {
            self.monte_carlo.paths = Some(info.default_paths);
        }
        if self.terminal.is_none() {
            self.terminal = Some(info.default_terminal());
        }
        if self.basis.is_none() {
            self.basis = Some(info.default_basis());
        }
        self.validate(info)?;
        Ok(self)
    }

    pub fn checks(&self) -> &[String] {
        self.checks.as_deref().unwrap_or(&[])
    }

    pub fn paths(&self) -> usize {
        self.monte_carlo.paths.unwrap_or(0)
    }

    pub fn terminal(&self) -> &TerminalConfig {
        self.terminal.as_ref().expect("resolved config has a terminal condition")
    }

    pub fn basis(&self) -> &BasisConfig {
        self.basis.as_ref().expect("resolved config has a basis")
    }

    fn validate(&self, info: &ScenarioInfo) -> Result<(), ConfigError> {
        let positive = |field: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(ConfigError::new(field, format!("must be positive and finite, got {v}")))
            }
        };
        let finite = |field: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(ConfigError::new(field, format!("must be finite, got {v}")))
            }
        };
        positive("grid.horizon", self.grid.horizon)?;
        if self.grid.steps == 0 {
            return Err(ConfigError::new("grid.steps", "must be at least 1"));
        }
        if self.paths() < 2 {
            return Err(ConfigError::new("monte_carlo.paths", "must be at least 2"));
        }
        finite("model.drift", self.model.drift)?;
        finite("model.sigma", self.model.sigma)?;
        finite("model.jump_scale", self.model.jump_scale)?;
        finite("model.x0", self.model.x0)?;
        if let Some(m) = &self.marks {
            positive("marks.cutoff", m.cutoff)?;
            if m.atoms.is_empty() {
                return Err(ConfigError::new("marks.atoms", "must list at least one [mark, weight] pair"));
            }
            for (k, [e, w]) in m.atoms.iter().enumerate() {
                if !(e.is_finite() && e.abs() >= m.cutoff) {
                    return Err(ConfigError::new(format!("marks.atoms[{k}]"), format!("mark {e} lies inside the cutoff")));
                }
                positive(&format!("marks.atoms[{k}]"), *w)?;
            }
        }
        positive("driver.gamma", self.driver.gamma)?;
        finite("driver.coefficient", self.driver.coefficient)?;
        if !(self.driver.delta >= 0.0 && self.driver.delta.is_finite()) {
            return Err(ConfigError::new("driver.delta", format!("must be nonnegative, got {}", self.driver.delta)));
        }
        if !(self.driver.shift >= 0.0 && self.driver.shift.is_finite()) {
            return Err(ConfigError::new("driver.shift", format!("must be nonnegative, got {}", self.driver.shift)));
        }
        positive("driver.lag", self.driver.lag)?;
        finite("driver.kappa", self.driver.kappa)?;
        let t = self.terminal();
        finite("terminal.level", t.level)?;
        finite("terminal.amplitude", t.amplitude)?;
        if t.kind == TerminalKind::Identity && !info.lipschitz {
            return Err(ConfigError::new(
                "terminal.kind",
                format!("an unbounded terminal condition needs a Lipschitz driver, not {}", info.name),
            ));
        }
        let b = self.basis();
        if !(b.ridge >= 0.0 && b.ridge.is_finite()) {
            return Err(ConfigError::new("basis.ridge", format!("must be nonnegative, got {}", b.ridge)));
        }
        if b.kind == BasisKindConfig::PiecewiseLinear && !(3..=512).contains(&b.knots) {
            return Err(ConfigError::new("basis.knots", format!("must lie in 3..=512, got {}", b.knots)));
        }
        if b.kind == BasisKindConfig::Polynomial && !(1..=8).contains(&b.degree) {
            return Err(ConfigError::new("basis.degree", format!("must lie in 1..=8, got {}", b.degree)));
        }
        self.solver.build().validate(self.grid.horizon).map_err(|e| ConfigError::new("solver", e.to_string()))?;
        for (k, c) in self.checks().iter().enumerate() {
            let field = format!("checks[{k}]");
            if !CHECKS.contains(&c.as_str()) {
                return Err(ConfigError::new(field, format!("unknown check {c:?}; known checks: {}", CHECKS.join(", "))));
            }
            if let Err(why) = info.supports(c, t) {
                return Err(ConfigError::new(field, why));
            }
        }
        if self.checks().iter().any(|c| c == "stability") {
            let s = &self.stability;
            if s.eps.iter().filter(|e| **e > 0.0).count() < 2 || s.eps.iter().any(|e| !(*e >= 0.0 && e.is_finite())) {
                return Err(ConfigError::new("stability.eps", "needs nonnegative sizes with at least two positive"));
            }
            if !(s.p >= 1.0) {
                return Err(ConfigError::new("stability.p", format!("must be at least 1, got {}", s.p)));
            }
        }
        if let Some(floor) = self.comparison.noise_floor {
            if !(floor >= 0.0) {
                return Err(ConfigError::new("comparison.noise_floor", format!("must be nonnegative, got {floor}")));
            }
        }
        if self.checks().iter().any(|c| c == "u_regularity") {
            let u = &self.u_map;
            if u.times.len() < 2 || u.states.len() < 2 {
                return Err(ConfigError::new("u_map", "needs at least two times and two states"));
            }
            if u.times.iter().any(|s| !(*s >= 0.0 && *s < self.grid.horizon)) {
                return Err(ConfigError::new("u_map.times", "must lie in [0, horizon)"));
            }
            if u.seeds.len() < 2 {
                return Err(ConfigError::new("u_map.seeds", "needs at least two seeds"));
            }
            if u.paths < 2 {
                return Err(ConfigError::new("u_map.paths", "must be at least 2"));
            }
        }
        Ok(())
    }
}

/// Dotted `section.key` path of the TOML token at byte `offset`.
fn locate(text: &str, offset: usize) -> String {
    let offset = offset.min(text.len());
    let mut section = String::new();
    let mut key = String::new();
    let mut pos = 0;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim();
        if trimmed.starts_with('[') {
            section = trimmed.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            key.clear();
        } else if let Some((k, _)) = trimmed.split_once('=') {
            key = k.trim().to_string();
        }
        if pos + line.len() > offset {
            break;
        }
        pos += line.len();
    }
    match (section.is_empty(), key.is_empty()) {
        (true, _) => key,
        (false, true) => section,
        (false, false) => format!("{section}.{key}"),
    }
}
