use rayon::prelude::*;

use super::basis::RegressionBasis;
use super::projector::{FitResult, PredictScratch, Projector};
use crate::driver::AnticipatedFunctional;
use crate::field::NodeField;
use crate::forward::{ForwardModel, MarkMeasureSpec, TimeGrid};
use crate::stats::CHUNK;
use crate::{Error, Result};

/// Regression estimate of `E[F((Y_v)_{v ≥ t_i}) | X_{t_i}]` per path, where the
/// functional is evaluated pathwise on the (optionally clamped) future of `y`
/// and then projected.
pub fn estimate_anticipated(
    y: &NodeField,
    functional: &AnticipatedFunctional,
    grid: &TimeGrid,
    node: usize,
    projector: &Projector,
    clamp: Option<f64>,
) -> Result<Vec<f64>> {
    if functional.is_none() {
        return Ok(vec![0.0; y.paths()]);
    }
    let raw = functional.pathwise_table(grid, y, node, node + 1, clamp);
    projector.project(raw.node(node))
}

/// As [`estimate_anticipated`], building the projector from `states`.
pub fn estimate_anticipated_on(
    y: &NodeField,
    functional: &AnticipatedFunctional,
    grid: &TimeGrid,
    node: usize,
    states: &[f64],
    dim: usize,
    basis: &RegressionBasis,
) -> Result<Vec<f64>> {
    if functional.is_none() {
        return Ok(vec![0.0; y.paths()]);
    }
    estimate_anticipated(y, functional, grid, node, &Projector::new(states, dim, basis)?, None)
}

/// Per-component fits of `Y_{i+1} ΔW_i / Δ_i` on the features of `X_i`.
pub fn extract_z_fits(y_next: &[f64], increments: &[f64], dt: f64, projector: &Projector) -> Result<Vec<FitResult>> {
    if !(dt > 0.0) {
        return Err(Error::invalid(format!("step size must be positive, got {dt}")));
    }
    let n = projector.n_samples();
    if y_next.len() != n || increments.len() % n.max(1) != 0 {
        return Err(Error::invalid("Y and increment buffers do not match the sample count"));
    }
    let d = increments.len() / n;
    let targets: Vec<f64> = (0..n * d).map(|k| y_next[k / d] * increments[k] / dt).collect();
    (0..d).map(|c| projector.fit_strided(&targets, d, c)).collect()
}

/// `Z_i ≈ E[Y_{i+1} ΔW_i^⊤ | X_i] / Δ_i`, one regression per Brownian component.
///
/// Returns `n_paths × d` values, row-major.
pub fn extract_z(y_next: &[f64], increments: &[f64], dt: f64, projector: &Projector) -> Result<Vec<f64>> {
    let fits = extract_z_fits(y_next, increments, dt, projector)?;
    Ok(interleave(projector, &fits))
}

/// Fitted values of several fits, interleaved as `n_samples × fits.len()`.
pub fn interleave(projector: &Projector, fits: &[FitResult]) -> Vec<f64> {
    let n = projector.n_samples();
    let d = fits.len();
    let mut out = vec![0.0; n * d];
    for (c, fit) in fits.iter().enumerate() {
        for (i, v) in projector.fitted(fit).into_iter().enumerate() {
            out[i * d + c] = v;
        }
    }
    out
}

/// As [`extract_z`], building the projector from `states`.
pub fn extract_z_on(
    y_next: &[f64],
    increments: &[f64],
    dt: f64,
    states: &[f64],
    dim: usize,
    basis: &RegressionBasis,
) -> Result<Vec<f64>> {
    extract_z(y_next, increments, dt, &Projector::new(states, dim, basis)?)
}

/// `ψ_i(e_q) = u_next(X_i + γ_X(t_i, X_i, e_q)) − u_next(X_i)` for every path
/// and quadrature mark. Returns `n_paths × n_marks`, row-major.
pub fn extract_psi(
    u_next: &FitResult,
    states: &[f64],
    t: f64,
    model: &ForwardModel,
    marks: &MarkMeasureSpec,
) -> Result<Vec<f64>> {
    let n_dim = model.state_dim();
    let q = marks.n_marks();
    let n = states.len() / n_dim;
    let mut out = vec![0.0; n * q];
    if q == 0 {
        return Ok(out);
    }
    let quad = marks.quadrature();
    out.par_chunks_mut(CHUNK * q)
        .enumerate()
        .try_for_each(|(c, block)| {
            let mut scratch = PredictScratch::default();
            let mut shift = vec![0.0; n_dim];
            let mut xs = vec![0.0; n_dim];
            for (r, row) in block.chunks_exact_mut(q).enumerate() {
                let p = c * CHUNK + r;
                let x = &states[p * n_dim..(p + 1) * n_dim];
                let base = u_next.predict_with(x, &mut scratch);
                for (slot, qm) in row.iter_mut().zip(quad) {
                    shift.iter_mut().for_each(|v| *v = 0.0);
                    model.jump(t, x, qm.component, qm.mark, &mut shift);
                    if shift.iter().all(|v| *v == 0.0) {
                        *slot = 0.0;
                        continue;
                    }
                    for k in 0..n_dim {
                        xs[k] = x[k] + shift[k];
                    }
                    if xs.iter().any(|v| !v.is_finite()) {
                        return Err(Error::ModelEvaluation {
                            what: "jump coefficient",
                            t,
                            path: p,
                            state: x.to_vec(),
                        });
                    }
                    *slot = u_next.predict_with(&xs, &mut scratch) - base;
                }
            }
            Ok(())
        })?;
    Ok(out)
}

/// `Σ_q w_q ψ(e_q)²` for one row of ψ values.
pub fn psi_l2_sq(marks: &MarkMeasureSpec, psi: &[f64]) -> f64 {
    marks.l2_norm_sq(psi)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    use super::*;
    use crate::forward::{simulate_paths, Start};
    use crate::stats::MeanEstimate;

    #[test]
    fn sup_of_constant_path_is_exact() {
        let grid = TimeGrid::uniform(1.0, 5).unwrap();
        let y = NodeField::filled(6, 50, 1, -1.25);
        let x: Vec<f64> = (0..50).map(|i| i as f64 / 7.0).collect();
        let v = estimate_anticipated_on(&y, &AnticipatedFunctional::RunningSupAbs, &grid, 2, &x, 1, &RegressionBasis::default())
            .unwrap();
        assert!(v.iter().all(|a| *a == 1.25));
    }

    #[test]
    fn none_functional_gives_zeros() {
        let grid = TimeGrid::uniform(1.0, 5).unwrap();
        let y = NodeField::filled(6, 10, 1, 3.0);
        let x = vec![0.0; 10];
        let v = estimate_anticipated_on(&y, &AnticipatedFunctional::None, &grid, 0, &x, 1, &RegressionBasis::default())
            .unwrap();
        assert_eq!(v, vec![0.0; 10]);
    }

    #[test]
    fn decreasing_deterministic_path_sup_is_next_value() {
        let grid = TimeGrid::uniform(1.0, 10).unwrap();
        let mut y = NodeField::zeros(11, 20, 1);
        for j in 0..11 {
            for p in 0..20 {
                y.set_value(j, p, 5.0 - j as f64 * 0.3);
            }
        }
        let x: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let v = estimate_anticipated_on(&y, &AnticipatedFunctional::RunningSupAbs, &grid, 4, &x, 1, &RegressionBasis::default())
            .unwrap();
        assert!(v.iter().all(|a| *a == y.value(5, 0)));
    }

    #[test]
    fn long_lag_reads_terminal_value() {
        let model = ForwardModel::arithmetic_brownian(0.0, 1.0);
        let grid = TimeGrid::uniform(1.0, 10).unwrap();
        let marks = MarkMeasureSpec::none();
        let b = simulate_paths(&model, &grid, &marks, &Start::origin(vec![0.0]), 20_000, 9).unwrap();
        let mut y = NodeField::zeros(11, 20_000, 1);
        for p in 0..20_000 {
            y.set_value(10, p, b.state(10, p)[0].sin());
        }
        let node = 6;
        let f = AnticipatedFunctional::DeferredValue { lag: 0.5 };
        let basis = RegressionBasis::new(5, 1e-8).unwrap();
        let v = estimate_anticipated_on(&y, &f, &grid, node, b.states().node(node), 1, &basis).unwrap();
        // E[sin(X_T) | X_t = x] = sin(x) e^{−(T−t)/2}
        let damp = (-0.5 * 0.4f64).exp();
        let err = MeanEstimate::from_fn(20_000, |p| (v[p] - b.state(node, p)[0].sin() * damp).powi(2));
        assert!(err.mean.sqrt() < 0.02, "{err:?}");
    }

    fn normals(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn z_of_constant_is_zero_within_noise() {
        let n = 50_000;
        let dt: f64 = 0.01;
        let x = normals(n, 1);
        let dw: Vec<f64> = normals(n, 2).into_iter().map(|g| g * dt.sqrt()).collect();
        let c = 2.0;
        let z = extract_z_on(&vec![c; n], &dw, dt, &x, 1, &RegressionBasis::default()).unwrap();
        let se = c / dt.sqrt() / (n as f64).sqrt();
        let m = MeanEstimate::from_values(&z);
        assert!(m.mean.abs() < 3.0 * se);
    }

    #[test]
    fn z_of_zero_increments_is_exactly_zero() {
        let x = normals(100, 3);
        let z = extract_z_on(&normals(100, 4), &vec![0.0; 200], 0.1, &x, 1, &RegressionBasis::default()).unwrap();
        assert!(z.iter().all(|v| *v == 0.0));
        assert_eq!(z.len(), 200);
    }

    #[test]
    fn z_of_brownian_state_is_one() {
        let model = ForwardModel::arithmetic_brownian(0.0, 1.0);
        let grid = TimeGrid::uniform(1.0, 50).unwrap();
        let b = simulate_paths(&model, &grid, &MarkMeasureSpec::none(), &Start::origin(vec![0.0]), 50_000, 3).unwrap();
        let i = 25;
        let dt = grid.step(i);
        let y_next: Vec<f64> = (0..50_000).map(|p| b.state(i + 1, p)[0]).collect();
        let p = Projector::new(b.states().node(i), 1, &RegressionBasis::default()).unwrap();
        let z = extract_z(&y_next, b.increments().node(i), dt, &p).unwrap();
        let m = MeanEstimate::from_values(&z);
        // Pathwise target X_{i+1} ΔW/Δ has variance ≈ (X_i²Δ + 3Δ²)/Δ² ≈ X_i²/Δ.
        let target_se = MeanEstimate::from_fn(50_000, |q| y_next[q] * b.increment(i, q)[0] / dt).std_error;
        assert!((m.mean - 1.0).abs() < 3.0 * target_se, "{m:?} se {target_se}");
    }

    #[test]
    fn synthetic_linear_martingale_recovers_z0() {
        let n = 40_000;
        let dt: f64 = 0.02;
        let x = normals(n, 5);
        let dw: Vec<f64> = normals(n, 6).into_iter().map(|g| g * dt.sqrt()).collect();
        for z0 in [-1.5, 0.3, 4.0] {
            let y: Vec<f64> = dw.iter().map(|w| 0.7 + z0 * w).collect();
            let z = extract_z_on(&y, &dw, dt, &x, 1, &RegressionBasis::default()).unwrap();
            let raw = MeanEstimate::from_fn(n, |i| y[i] * dw[i] / dt);
            let m = MeanEstimate::from_values(&z);
            assert!((m.mean - z0).abs() < 3.0 * raw.std_error, "z0 {z0}: {m:?}");
        }
    }

    fn linear_fit(a: f64, b: f64, dim: usize) -> FitResult {
        // Fit exactly a + b·x on a two-point sample.
        let states = [0.0, 1.0, 2.0];
        let targets: Vec<f64> = states.iter().map(|x| a + b * x).collect();
        crate::condexp::fit_conditional(&states, dim, &targets, &RegressionBasis::new(2, 0.0).unwrap()).unwrap()
    }

    #[test]
    fn psi_vanishes_without_jumps() {
        let model = ForwardModel::arithmetic_brownian(0.0, 1.0);
        let marks = MarkMeasureSpec::single(0.1, &[(0.5, 1.0)]).unwrap();
        let psi = extract_psi(&linear_fit(0.0, 1.0, 1), &[0.3, -1.0], 0.0, &model, &marks).unwrap();
        assert_eq!(psi, vec![0.0, 0.0]);
    }

    #[test]
    fn psi_of_identity_map_is_the_mark() {
        let model = ForwardModel::arithmetic_brownian(0.0, 1.0).with_additive_jumps(1.0);
        let marks = MarkMeasureSpec::single(0.1, &[(0.5, 1.0), (2.0, 0.25)]).unwrap();
        let psi = extract_psi(&linear_fit(0.0, 1.0, 1), &[0.3, -1.0], 0.0, &model, &marks).unwrap();
        for (k, v) in psi.iter().enumerate() {
            let e = marks.quadrature()[k % 2].mark;
            assert!((v - e).abs() < 1e-12);
        }
    }

    #[test]
    fn psi_of_square_map() {
        let model = ForwardModel::arithmetic_brownian(0.0, 1.0).with_additive_jumps(1.0);
        let marks = MarkMeasureSpec::single(0.1, &[(0.5, 1.0)]).unwrap();
        let states = [0.0, 1.0, 2.0];
        let sq: Vec<f64> = states.iter().map(|x| x * x).collect();
        let u = crate::condexp::fit_conditional(&states, 1, &sq, &RegressionBasis::new(2, 0.0).unwrap()).unwrap();
        let psi = extract_psi(&u, &[1.0], 0.0, &model, &marks).unwrap();
        assert!((psi[0] - 1.25).abs() < 1e-12);
    }
}
