use serde::Serialize;

use crate::{Error, Result};

/// One atom of a discrete Lévy measure: mark value and its mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MarkAtom {
    pub mark: f64,
    pub weight: f64,
}

/// One jump component `i`, restricted to `{|e| >= cutoff}`.
///
/// The atoms double as the quadrature for `∫ · ν_i(de)` and as the support of
/// the mark sampler, so the intensity is the total atom mass.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarkComponent {
    cutoff: f64,
    atoms: Vec<MarkAtom>,
}

impl MarkComponent {
    pub fn new(cutoff: f64, atoms: Vec<MarkAtom>) -> Result<Self> {
        if !(cutoff > 0.0 && cutoff.is_finite()) {
            return Err(Error::invalid(format!("mark cutoff must be positive, got {cutoff}")));
        }
        for a in &atoms {
            if !(a.weight > 0.0 && a.weight.is_finite()) {
                return Err(Error::invalid(format!("quadrature weight must be positive, got {}", a.weight)));
            }
            if !a.mark.is_finite() || a.mark.abs() < cutoff {
                return Err(Error::invalid(format!(
                    "mark {} lies inside the small-jump cutoff {cutoff}",
                    a.mark
                )));
            }
        }
        Ok(Self { cutoff, atoms })
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    pub fn atoms(&self) -> &[MarkAtom] {
        &self.atoms
    }

    /// `λ_i = ν_i({|e| >= ε_i})`.
    pub fn intensity(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight).sum()
    }

    /// `Σ_q w_q e_q²`.
    pub fn second_moment(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight * a.mark * a.mark).sum()
    }
}

/// A quadrature mark flattened across components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadMark {
    pub component: usize,
    pub mark: f64,
    pub weight: f64,
}

/// The `k` jump components and their flattened quadrature.
///
/// Jump coefficients `ψ` are represented by their values at [`QuadMark`]s in
/// the order returned by [`MarkMeasureSpec::quadrature`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarkMeasureSpec {
    components: Vec<MarkComponent>,
    flat: Vec<QuadMark>,
    /// Offset of each component's atoms inside `flat`.
    offsets: Vec<usize>,
}

impl MarkMeasureSpec {
    pub fn new(components: Vec<MarkComponent>) -> Self {
        let mut flat = Vec::new();
        let mut offsets = Vec::with_capacity(components.len());
        for (i, c) in components.iter().enumerate() {
            offsets.push(flat.len());
            flat.extend(c.atoms.iter().map(|a| QuadMark {
                component: i,
                mark: a.mark,
                weight: a.weight,
            }));
        }
        Self {
            components,
            flat,
            offsets,
        }
    }

    /// No jumps at all (`k = 0`).
    pub fn none() -> Self {
        Self::new(Vec::new())
    }

    /// A single component given as `(mark, weight)` pairs.
    pub fn single(cutoff: f64, atoms: &[(f64, f64)]) -> Result<Self> {
        let atoms = atoms
            .iter()
            .map(|&(mark, weight)| MarkAtom { mark, weight })
            .collect();
        Ok(Self::new(vec![MarkComponent::new(cutoff, atoms)?]))
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[MarkComponent] {
        &self.components
    }

    /// Flattened quadrature marks.
    pub fn quadrature(&self) -> &[QuadMark] {
        &self.flat
    }

    pub fn n_marks(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    /// Flat index of atom `atom` of component `component`.
    pub fn flat_index(&self, component: usize, atom: usize) -> usize {
        self.offsets[component] + atom
    }

    pub fn total_intensity(&self) -> f64 {
        self.components.iter().map(MarkComponent::intensity).sum()
    }

    /// `Σ_q w_q g(e_q)` over all components.
    pub fn integrate(&self, g: impl Fn(&QuadMark) -> f64) -> f64 {
        self.flat.iter().map(|q| q.weight * g(q)).sum()
    }

    /// `‖ψ‖²_{L²(ν)} = Σ_q w_q ψ_q²` for ψ given at the quadrature marks.
    pub fn l2_norm_sq(&self, psi: &[f64]) -> f64 {
        self.flat
            .iter()
            .zip(psi)
            .map(|(q, p)| q.weight * p * p)
            .sum()
    }

    /// Select an atom of component `i` from a uniform draw `u ∈ [0, 1)`.
    pub(crate) fn sample_atom(&self, component: usize, u: f64) -> usize {
        let c = &self.components[component];
        let target = u * c.intensity();
        let mut acc = 0.0;
        for (j, a) in c.atoms.iter().enumerate() {
            acc += a.weight;
            if target < acc {
                return j;
            }
        }
        c.atoms.len() - 1
    }
}
