use rayon::prelude::*;

use super::config::{InitialGuess, SolverConfig};
use super::solution::{DiscreteSolution, WindowTrace};
use crate::condexp::{extract_psi, extract_z_fits, interleave, FitResult, Projector, RegressionBasis};
use crate::driver::{DriverInput, DriverScratch, DriverSpec};
use crate::field::NodeField;
use crate::forward::PathBundle;
use crate::stats::{ordered_sum, CHUNK};
use crate::{Error, Result};

/// Shared inputs of every sweep on one bundle.
pub(crate) struct SweepContext<'a> {
    pub bundle: &'a PathBundle,
    pub driver: &'a DriverSpec,
    pub basis: &'a RegressionBasis,
    terminal: Vec<f64>,
    terminal_fit: FitResult,
}

impl<'a> SweepContext<'a> {
    pub fn new(bundle: &'a PathBundle, driver: &'a DriverSpec, basis: &'a RegressionBasis) -> Result<Self> {
        basis.validate()?;
        if driver.marks() != bundle.marks() {
            return Err(Error::invalid("driver and path bundle use different mark quadratures"));
        }
        if driver.brownian_dim() != bundle.brownian_dim() {
            return Err(Error::invalid(format!(
                "driver expects {} Brownian components, bundle has {}",
                driver.brownian_dim(),
                bundle.brownian_dim()
            )));
        }
        let n = bundle.grid().n_steps();
        let dim = bundle.state_dim();
        let xs = bundle.states().node(n);
        let terminal: Vec<f64> = xs.chunks_exact(dim).map(|x| driver.terminal().eval(x)).collect();
        if let Some(p) = terminal.iter().position(|v| !v.is_finite()) {
            return Err(Error::ModelEvaluation {
                what: "terminal condition",
                t: bundle.grid().horizon(),
                path: p,
                state: bundle.state(n, p).to_vec(),
            });
        }
        let terminal_fit = Projector::new(xs, dim, basis)?.fit(&terminal)?;
        Ok(Self {
            bundle,
            driver,
            basis,
            terminal,
            terminal_fit,
        })
    }

    /// A solution whose only populated node is the terminal one.
    pub fn empty_solution(&self) -> DiscreteSolution {
        let grid = self.bundle.grid().clone();
        let nodes = grid.n_nodes();
        let paths = self.bundle.n_paths();
        let mut y = NodeField::zeros(nodes, paths, 1);
        y.node_mut(nodes - 1).copy_from_slice(&self.terminal);
        let mut y_fits = vec![None; nodes];
        y_fits[nodes - 1] = Some(self.terminal_fit.clone());
        DiscreteSolution {
            grid,
            start_node: self.bundle.start_node(),
            y,
            z: NodeField::zeros(nodes, paths, self.bundle.brownian_dim()),
            psi: NodeField::zeros(nodes, paths, self.driver.marks().n_marks()),
            driver_values: NodeField::zeros(nodes, paths, 1),
            y_fits,
            z_fits: vec![Vec::new(); nodes],
            traces: Vec::new(),
            truncation: self.driver.truncation(),
        }
    }

    /// Recompute nodes `hi − 1, …, lo` backward from the current `Y_hi`, with
    /// the anticipated argument read from `prev_y`.
    pub fn sweep_range(&self, sol: &mut DiscreteSolution, prev_y: &NodeField, lo: usize, hi: usize) -> Result<()> {
        let grid = self.bundle.grid();
        let start = self.bundle.start_node();
        let lo_active = lo.max(start);
        let functional = self.driver.functional();
        let anticipated_raw = if functional.is_none() || lo_active >= hi {
            None
        } else {
            Some(functional.pathwise_table(grid, prev_y, lo_active, hi, self.driver.truncation()))
        };
        let dim = self.bundle.state_dim();
        let d = self.bundle.brownian_dim();
        let q = self.driver.marks().n_marks();
        let paths = self.bundle.n_paths();
        for i in (lo_active..hi).rev() {
            let t = grid.time(i);
            let dt = grid.step(i);
            let xs = self.bundle.states().node(i);
            let proj = Projector::new(xs, dim, self.basis)?;
            let y_next = sol.y.node(i + 1).to_vec();
            let yhat = proj.project(&y_next)?;
            let centered: Vec<f64> = y_next.iter().zip(&yhat).map(|(a, b)| a - b).collect();
            let z_fits = extract_z_fits(&centered, self.bundle.increments().node(i), dt, &proj)?;
            let z = interleave(&proj, &z_fits);
            let psi = if q > 0 {
                let u_next = sol.y_fits[i + 1].as_ref().expect("fit of the next node is available");
                extract_psi(u_next, xs, t, self.bundle.model(), self.driver.marks())?
            } else {
                Vec::new()
            };
            let a = match &anticipated_raw {
                Some(raw) => proj.project(raw.node(i))?,
                None => vec![0.0; paths],
            };
            let mut f = vec![0.0; paths];
            f.par_chunks_mut(CHUNK).enumerate().try_for_each(|(c, block)| {
                let mut scratch = DriverScratch::default();
                for (r, slot) in block.iter_mut().enumerate() {
                    let p = c * CHUNK + r;
                    let input = DriverInput {
                        t,
                        x: &xs[p * dim..(p + 1) * dim],
                        anticipated: a[p],
                        y: yhat[p],
                        z: &z[p * d..(p + 1) * d],
                        psi: &psi[p * q..(p + 1) * q],
                    };
                    let v = self.driver.evaluate_with(&input, &mut scratch);
                    if !v.is_finite() {
                        return Err(Error::NonFiniteDriver {
                            node: i,
                            path: p,
                            detail: format!("f = {v} at {input:?}"),
                        });
                    }
                    *slot = v;
                }
                Ok(())
            })?;
            let target: Vec<f64> = y_next.iter().zip(&f).map(|(y, fv)| y + dt * fv).collect();
            let fit = proj.fit(&target)?;
            sol.y.node_mut(i).copy_from_slice(&proj.fitted(&fit));
            sol.z.node_mut(i).copy_from_slice(&z);
            sol.psi.node_mut(i).copy_from_slice(&psi);
            sol.driver_values.node_mut(i).copy_from_slice(&f);
            sol.y_fits[i] = Some(fit);
            sol.z_fits[i] = z_fits;
        }
        if lo < start {
            self.fill_frozen_prefix(sol, lo, hi.min(start));
        }
        Ok(())
    }

    /// `(Y_s, Z_s, ψ_s) ≡ (Y_t, 0, 0)` for nodes before the start node.
    fn fill_frozen_prefix(&self, sol: &mut DiscreteSolution, lo: usize, hi: usize) {
        let start = self.bundle.start_node();
        let y_start = sol.y.node(start).to_vec();
        for i in lo..hi {
            sol.y.node_mut(i).copy_from_slice(&y_start);
            sol.z.node_mut(i).fill(0.0);
            sol.psi.node_mut(i).fill(0.0);
            sol.driver_values.node_mut(i).fill(0.0);
            sol.y_fits[i] = sol.y_fits[start].clone();
            sol.z_fits[i].clear();
        }
    }

    /// Picard iteration on the window `[lo, hi]` with later nodes frozen.
    pub fn solve_window(
        &self,
        sol: &mut DiscreteSolution,
        lo: usize,
        hi: usize,
        config: &SolverConfig,
        guess: InitialGuess,
    ) -> Result<WindowTrace> {
        let grid = self.bundle.grid();
        let mut prev = sol.y.clone();
        let fill = match guess {
            InitialGuess::Zero => 0.0,
            InitialGuess::Constant(c) => c,
        };
        for i in lo..hi {
            prev.node_mut(i).fill(fill);
        }
        let mut trace = WindowTrace {
            start_node: lo,
            end_node: hi,
            start_time: grid.time(lo),
            end_time: grid.time(hi),
            sup_distances: Vec::new(),
            sp_distances: Vec::new(),
            converged: false,
        };
        let weights: Vec<f64> = (0..grid.n_nodes()).map(|i| (config.beta_weight * grid.time(i)).exp()).collect();
        for _ in 0..config.max_iter {
            self.sweep_range(sol, &prev, lo, hi)?;
            let (sup, sp) = window_distance(&sol.y, &prev, lo, hi, &weights, config.monitor_p);
            trace.sup_distances.push(sup);
            trace.sp_distances.push(sp);
            for i in lo..hi {
                prev.node_mut(i).copy_from_slice(sol.y.node(i));
            }
            // Without an anticipated argument the sweep does not read `prev`,
            // so one sweep is already the fixed point.
            if sup < config.tolerance || self.driver.functional().is_none() {
                trace.converged = true;
                return Ok(trace);
            }
        }
        Err(Error::NonConvergence {
            window_start: trace.start_time,
            window_end: trace.end_time,
            trace: trace.sup_distances,
        })
    }
}

/// Weighted sup distance and `S^p` distance over nodes `lo..hi`.
fn window_distance(a: &NodeField, b: &NodeField, lo: usize, hi: usize, weights: &[f64], p: f64) -> (f64, f64) {
    let paths = a.paths();
    let mut sup: f64 = 0.0;
    for i in lo..hi {
        let w = weights[i];
        for (x, y) in a.node(i).iter().zip(b.node(i)) {
            sup = sup.max(w * (x - y).abs());
        }
    }
    let mean = ordered_sum(paths, |k| {
        let m = (lo..hi).fold(0.0f64, |m, i| m.max((a.value(i, k) - b.value(i, k)).abs()));
        m.powf(p)
    }) / paths as f64;
    (sup, mean.powf(1.0 / p))
}

/// Window boundaries `0 = b_K < … < b_1 < b_0 = N` for windows of length `h`
/// counted backward from the horizon, returned from the last window backward.
pub(crate) fn window_bounds(grid: &crate::forward::TimeGrid, h: f64) -> Result<Vec<(usize, usize)>> {
    if h < grid.min_step() * (1.0 - 1e-9) {
        return Err(Error::WindowTooSmall {
            h,
            min_step: grid.min_step(),
        });
    }
    let n = grid.n_steps();
    let t_end = grid.horizon();
    let mut out = Vec::new();
    let mut hi = n;
    let mut k = 1;
    while hi > 0 {
        let target = t_end - k as f64 * h;
        let mut lo = if target <= 0.0 { 0 } else { grid.first_node_at_or_after(target) };
        if lo >= hi {
            lo = hi - 1;
        }
        out.push((lo, hi));
        hi = lo;
        k += 1;
    }
    Ok(out)
}

/// One backward induction over the whole grid with the anticipated argument
/// frozen at `prev_y`.
pub fn backward_sweep(
    bundle: &PathBundle,
    driver: &DriverSpec,
    prev_y: &NodeField,
    basis: &RegressionBasis,
) -> Result<DiscreteSolution> {
    let n = bundle.grid().n_nodes();
    if prev_y.nodes() != n || prev_y.paths() != bundle.n_paths() || prev_y.width() != 1 {
        return Err(Error::invalid("previous iterate does not match the bundle shape"));
    }
    let ctx = SweepContext::new(bundle, driver, basis)?;
    let mut sol = ctx.empty_solution();
    ctx.sweep_range(&mut sol, prev_y, 0, n - 1)?;
    Ok(sol)
}
