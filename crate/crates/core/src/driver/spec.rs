use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::functional::AnticipatedFunctional;
use super::params::StructureParams;
use crate::forward::{MarkMeasureSpec, TimeGrid};
use crate::{Error, Result};

/// Arguments of one driver evaluation. `anticipated` is the value of the
/// driver's path functional; `psi` holds ψ at the quadrature marks.
#[derive(Debug, Clone, Copy)]
pub struct DriverInput<'a> {
    pub t: f64,
    pub x: &'a [f64],
    pub anticipated: f64,
    pub y: f64,
    pub z: &'a [f64],
    pub psi: &'a [f64],
}

pub type GeneratorFn = Arc<dyn Fn(&DriverInput<'_>) -> f64 + Send + Sync>;
pub type TerminalFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type LocalLipschitzFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Bounded terminal condition `ξ = g(X_T)` with its Hölder data.
#[derive(Clone)]
pub struct TerminalCondition {
    name: String,
    eval: TerminalFn,
    sup: f64,
    holder_constant: f64,
    holder_exponent: f64,
}

impl fmt::Debug for TerminalCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TerminalCondition")
            .field("name", &self.name)
            .field("sup", &self.sup)
            .finish_non_exhaustive()
    }
}

impl TerminalCondition {
    pub fn new(name: impl Into<String>, eval: TerminalFn, sup: f64, holder_constant: f64, holder_exponent: f64) -> Self {
        Self {
            name: name.into(),
            eval,
            sup,
            holder_constant,
            holder_exponent,
        }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(format!("const({c})"), Arc::new(move |_| c), c.abs(), 0.0, 1.0)
    }

    /// `amplitude · sin(x_0)`.
    pub fn sine(amplitude: f64) -> Self {
        Self::new(
            format!("{amplitude}*sin(x0)"),
            Arc::new(move |x| amplitude * x[0].sin()),
            amplitude.abs(),
            amplitude.abs(),
            1.0,
        )
    }

    /// `amplitude · cos(x_0)`.
    pub fn cosine(amplitude: f64) -> Self {
        Self::new(
            format!("{amplitude}*cos(x0)"),
            Arc::new(move |x| amplitude * x[0].cos()),
            amplitude.abs(),
            amplitude.abs(),
            1.0,
        )
    }

    /// `ξ(x) = x_0`; unbounded, so only admissible for Lipschitz drivers.
    pub fn identity() -> Self {
        Self::new("x0", Arc::new(|x| x[0]), f64::INFINITY, 1.0, 1.0)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.eval)(x)
    }

    /// Declared `‖ξ‖_∞`.
    pub fn sup(&self) -> f64 {
        self.sup
    }

    pub fn holder(&self) -> (f64, f64) {
        (self.holder_constant, self.holder_exponent)
    }

    pub fn is_bounded(&self) -> bool {
        self.sup.is_finite()
    }

    /// `self + eps · other`, with sup and Hölder constant combined accordingly.
    pub fn perturbed(&self, eps: f64, other: &TerminalCondition) -> Self {
        let (a, b) = (self.eval.clone(), other.eval.clone());
        Self::new(
            format!("{}+{eps}*({})", self.name, other.name),
            Arc::new(move |x| a(x) + eps * b(x)),
            self.sup + eps.abs() * other.sup,
            self.holder_constant + eps.abs() * other.holder_constant,
            self.holder_exponent.min(other.holder_exponent),
        )
    }
}

/// Context handed to a Γ kernel: the common arguments and the probe pair `(ψ, ψ')`.
#[derive(Debug, Clone, Copy)]
pub struct GammaContext<'a> {
    pub t: f64,
    pub x: &'a [f64],
    pub anticipated: f64,
    pub y: f64,
    pub z: &'a [f64],
    pub psi: &'a [f64],
    pub psi_prime: &'a [f64],
}

pub type GammaFn = Arc<dyn Fn(&GammaContext<'_>, usize) -> f64 + Send + Sync>;

/// User-supplied kernel `Γ(e)` (evaluated per quadrature mark) with declared
/// bounds `C¹(1 ∧ |e|) ≤ Γ(e) ≤ C²(1 ∧ |e|)`.
#[derive(Clone)]
pub struct GammaKernel {
    pub kernel: GammaFn,
    pub lower: f64,
    pub upper: f64,
}

impl GammaKernel {
    pub fn new(kernel: GammaFn, lower: f64, upper: f64) -> Result<Self> {
        if !(lower > -1.0) {
            return Err(Error::invalid(format!("Γ lower constant must exceed -1, got {lower}")));
        }
        if !(upper >= 0.0) {
            return Err(Error::invalid(format!("Γ upper constant must be nonnegative, got {upper}")));
        }
        Ok(Self { kernel, lower, upper })
    }
}

/// Scratch buffers for clamped driver arguments.
#[derive(Debug, Default, Clone)]
pub struct DriverScratch {
    z: Vec<f64>,
    psi: Vec<f64>,
}

/// An anticipated driver with its structure data, terminal condition and flags.
#[derive(Clone)]
pub struct DriverSpec {
    name: String,
    generator: GeneratorFn,
    structure: StructureParams,
    functional: AnticipatedFunctional,
    local_lipschitz: LocalLipschitzFn,
    globally_lipschitz: bool,
    monotone_in_q: bool,
    gamma_kernel: Option<GammaKernel>,
    terminal: TerminalCondition,
    marks: Arc<MarkMeasureSpec>,
    brownian_dim: usize,
    truncation: Option<f64>,
}

impl fmt::Debug for DriverSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DriverSpec")
            .field("name", &self.name)
            .field("structure", &self.structure)
            .field("functional", &self.functional)
            .field("globally_lipschitz", &self.globally_lipschitz)
            .field("monotone_in_q", &self.monotone_in_q)
            .field("terminal", &self.terminal)
            .field("truncation", &self.truncation)
            .finish_non_exhaustive()
    }
}

impl DriverSpec {
    pub fn new(
        name: impl Into<String>,
        generator: GeneratorFn,
        structure: StructureParams,
        terminal: TerminalCondition,
        marks: Arc<MarkMeasureSpec>,
        brownian_dim: usize,
    ) -> Result<Self> {
        structure.validate()?;
        Ok(Self {
            name: name.into(),
            generator,
            structure,
            functional: AnticipatedFunctional::None,
            local_lipschitz: Arc::new(|_| f64::INFINITY),
            globally_lipschitz: false,
            monotone_in_q: false,
            gamma_kernel: None,
            terminal,
            marks,
            brownian_dim,
            truncation: None,
        })
    }

    pub fn with_functional(mut self, functional: AnticipatedFunctional) -> Self {
        self.functional = functional;
        self
    }

    pub fn with_local_lipschitz(mut self, k: LocalLipschitzFn) -> Self {
        self.local_lipschitz = k;
        self
    }

    pub fn with_global_lipschitz(mut self, flag: bool) -> Self {
        self.globally_lipschitz = flag;
        self
    }

    pub fn with_monotone_in_q(mut self, flag: bool) -> Self {
        self.monotone_in_q = flag;
        self
    }

    pub fn with_gamma_kernel(mut self, kernel: GammaKernel) -> Self {
        self.gamma_kernel = Some(kernel);
        self
    }

    pub fn with_terminal(mut self, terminal: TerminalCondition) -> Self {
        self.terminal = terminal;
        self
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// `f + c` with `l̄` raised by `|c|`; flags and truncation are kept.
    pub fn shifted(&self, c: f64) -> Result<Self> {
        if !c.is_finite() {
            return Err(Error::invalid(format!("generator shift {c} is not finite")));
        }
        let mut out = self.clone();
        let g = self.generator.clone();
        out.generator = Arc::new(move |inp| g(inp) + c);
        out.structure = StructureParams::new(
            self.structure.l_bar + c.abs(),
            self.structure.delta,
            self.structure.beta,
            self.structure.gamma,
        )?;
        out.name = format!("{}{c:+}", self.name);
        Ok(out)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn structure(&self) -> &StructureParams {
        &self.structure
    }

    pub fn functional(&self) -> &AnticipatedFunctional {
        &self.functional
    }

    pub fn terminal(&self) -> &TerminalCondition {
        &self.terminal
    }

    pub fn marks(&self) -> &MarkMeasureSpec {
        &self.marks
    }

    pub fn marks_arc(&self) -> Arc<MarkMeasureSpec> {
        self.marks.clone()
    }

    pub fn brownian_dim(&self) -> usize {
        self.brownian_dim
    }

    pub fn is_globally_lipschitz(&self) -> bool {
        self.globally_lipschitz
    }

    pub fn is_monotone_in_q(&self) -> bool {
        self.monotone_in_q
    }

    pub fn gamma_kernel(&self) -> Option<&GammaKernel> {
        self.gamma_kernel.as_ref()
    }

    /// `K_M` for the local Lipschitz condition.
    pub fn local_lipschitz(&self, m: f64) -> f64 {
        (self.local_lipschitz)(m)
    }

    /// Truncation level `m` when the driver has been regularised.
    pub fn truncation(&self) -> Option<f64> {
        self.truncation
    }

    pub fn generator(&self) -> &GeneratorFn {
        &self.generator
    }

    /// Functional of a future path, after the truncation clamp (if any).
    pub fn anticipated_value(&self, grid: &TimeGrid, node: usize, future: &[f64]) -> f64 {
        match self.truncation {
            Some(m) => {
                let clamped: Vec<f64> = future.iter().map(|v| v.clamp(-m, m)).collect();
                self.functional.evaluate(grid, node, &clamped)
            }
            None => self.functional.evaluate(grid, node, future),
        }
    }

    /// `f(t, x, a, y, z, ψ)` with the truncation clamps applied to `y`, `z`, `ψ`.
    pub fn evaluate_with(&self, input: &DriverInput<'_>, scratch: &mut DriverScratch) -> f64 {
        match self.truncation {
            None => (self.generator)(input),
            Some(m) => {
                scratch.z.clear();
                scratch.z.extend(input.z.iter().map(|v| v.clamp(-m, m)));
                scratch.psi.clear();
                let cut = 1.0 / m;
                scratch.psi.extend(
                    input
                        .psi
                        .iter()
                        .zip(self.marks.quadrature())
                        .map(|(v, q)| if q.mark.abs() >= cut { v.clamp(-m, m) } else { 0.0 }),
                );
                let clamped = DriverInput {
                    t: input.t,
                    x: input.x,
                    anticipated: input.anticipated,
                    y: input.y.clamp(-m, m),
                    z: &scratch.z,
                    psi: &scratch.psi,
                };
                (self.generator)(&clamped)
            }
        }
    }

    pub fn evaluate(&self, input: &DriverInput<'_>) -> f64 {
        self.evaluate_with(input, &mut DriverScratch::default())
    }

    /// Check declared bounds for consistency and probe `|ξ| ≤ ‖ξ‖_∞`.
    pub fn validate(&self, state_dim: usize) -> Result<()> {
        self.structure.validate()?;
        if let Some(g) = &self.gamma_kernel {
            GammaKernel::new(g.kernel.clone(), g.lower, g.upper)?;
        }
        let sup = self.terminal.sup();
        if sup.is_finite() {
            let mut rng = ChaCha8Rng::seed_from_u64(0x7e57);
            for _ in 0..256 {
                let x: Vec<f64> = (0..state_dim).map(|_| 20.0 * (2.0 * rng.random::<f64>() - 1.0)).collect();
                let v = self.terminal.eval(&x);
                if !(v.abs() <= sup * (1.0 + 1e-12)) {
                    return Err(Error::Precondition(format!(
                        "terminal condition {} reaches {v} above its declared bound {sup}",
                        self.terminal.name()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Regularised driver `f_m`: every argument clamped by `φ_m` componentwise and
/// ψ cut off on marks with `|e| < 1/m`.
///
/// The clamp on the anticipated argument acts on the future path before the
/// functional is applied. An infinite `m` leaves the driver unchanged.
pub fn regularize_driver(spec: &DriverSpec, m: f64) -> Result<DriverSpec> {
    if !(m > 0.0) {
        return Err(Error::invalid(format!("truncation level must be positive, got {m}")));
    }
    if m.is_infinite() {
        return Ok(spec.clone());
    }
    let level = spec.truncation.map_or(m, |prev| prev.min(m));
    let mut out = spec.clone();
    out.truncation = Some(level);
    out.globally_lipschitz = true;
    out.name = format!("{}|m={level}", spec.name);
    Ok(out)
}
