//! Stationary curvature mean field game on compact geometries.
//!
//! With `m = e^{-v} dvol / Z` the Fokker-Planck equation holds identically and
//! the system reduces to
//!
//! ```text
//! E(v) = -r v - ½ |∇v|²_g + 3 Δ_g v + R^g = 0,
//! ```
//!
//! solved here by Newton's method with the exact Jacobian of the discrete
//! operator.

use serde::Serialize;

use crate::discretization::Grid;
use crate::error::{Error, Result};
use crate::linalg::{gmres, CsrMatrix, EnvelopeCholesky};

/// Coefficient of `Δ_g log m` in the mean-field scalar curvature used by the
/// reduction: `R^m = R^g - 2 Δ_g log m`.
pub const LOG_DENSITY_FACTOR: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StationaryOptions {
    pub tolerance: f64,
    pub max_newton: usize,
    /// Iterations of the damped fixed point used when Newton fails.
    pub max_fixed_point: usize,
}

impl Default for StationaryOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_newton: 30,
            max_fixed_point: 2000,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StationarySolution {
    pub v: Vec<f64>,
    /// Density with respect to the volume measure.
    pub m: Vec<f64>,
    pub scalar_curvature: Vec<f64>,
    pub mean_field_curvature: Vec<f64>,
    /// `sup |E(v)|`
    pub residual: f64,
    pub newton_iterations: usize,
    pub used_fallback: bool,
}

fn require_compact(grid: &Grid, r: f64) -> Result<()> {
    if !grid.geometry().is_periodic() {
        return Err(Error::InvalidParameter {
            name: "geometry",
            reason: "the stationary curvature game is defined on compact (periodic) geometries only".into(),
        });
    }
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "discount",
            reason: format!("must be positive, got {r}"),
        });
    }
    Ok(())
}

/// `E(v)` at every node.
pub fn elliptic_residual(grid: &Grid, r: f64, curvature: &[f64], v: &[f64]) -> Vec<f64> {
    let lap = grid.laplacian(v);
    let g2 = grid.grad_norm_sq(v);
    (0..grid.len())
        .map(|i| -r * v[i] - 0.5 * g2[i] + 3.0 * lap[i] + curvature[i])
        .collect()
}

/// `W E'(v)`: the Jacobian scaled by the node weights, which makes the
/// diffusion part the symmetric matrix `3 S`.
fn weighted_jacobian(grid: &Grid, r: f64, v: &[f64]) -> CsrMatrix {
    let n = grid.dim();
    let grad = grid.gradient(v);
    let h = grid.spacing();
    let w = grid.weights();
    let lam = grid.lambda();
    let mut rows: Vec<Vec<(usize, f64)>> = (0..grid.len()).map(|i| vec![(i, -r * w[i])]).collect();
    for (i, row) in rows.iter_mut().enumerate() {
        let s = w[i] / (lam[i] * lam[i]);
        for k in 0..n {
            let c = s * grad[i * n + k] / (2.0 * h[k]);
            let p = grid.neighbor(i, k, true).unwrap_or(i);
            let m = grid.neighbor(i, k, false).unwrap_or(i);
            row.push((p, -c));
            row.push((m, c));
        }
    }
    CsrMatrix::from_rows(grid.len(), rows).axpby(1.0, grid.stiffness(), 3.0)
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

/// Normalised `e^{-v}` as a density with respect to the volume measure.
pub fn gibbs_density(grid: &Grid, v: &[f64]) -> Vec<f64> {
    let vmin = v.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let e: Vec<f64> = v.iter().map(|x| (vmin - x).exp()).collect();
    let z = grid.integrate(&e);
    e.into_iter().map(|x| x / z).collect()
}

pub fn solve_stationary(grid: &Grid, r: f64, options: &StationaryOptions) -> Result<StationarySolution> {
    require_compact(grid, r)?;
    let geom = grid.geometry();
    let curvature = grid.sample(&|x: &[f64]| geom.scalar_curvature(x));
    let mean = grid.integrate(&curvature) / grid.total_volume();
    let mut v = vec![mean / r; grid.len()];
    let w = grid.weights();
    // SPD part of -W E'(v), used as preconditioner and fallback operator
    let base = grid.stiffness().scaled(-3.0).add_diagonal(&w.iter().map(|wi| r * wi).collect::<Vec<_>>());
    let base_factor = EnvelopeCholesky::factor(&base)?;

    let mut res = elliptic_residual(grid, r, &curvature, &v);
    let mut newton_iterations = 0;
    let mut ok = sup(&res) <= options.tolerance;
    while !ok && newton_iterations < options.max_newton {
        newton_iterations += 1;
        let j = weighted_jacobian(grid, r, &v);
        let rhs: Vec<f64> = res.iter().zip(w).map(|(e, wi)| -e * wi).collect();
        let mut delta = vec![0.0; grid.len()];
        // inexact Newton: a stalled inner solve still gives a usable step
        let _ = gmres(&j, &rhs, &mut delta, |x| base_factor.solve(x).into_iter().map(|y| -y).collect(), 50, 1e-11, 300);
        let prev = sup(&res);
        let mut step = 1.0;
        loop {
            let trial: Vec<f64> = v.iter().zip(&delta).map(|(a, d)| a + step * d).collect();
            let tr = elliptic_residual(grid, r, &curvature, &trial);
            if sup(&tr) < prev || step < 1e-3 {
                v = trial;
                res = tr;
                break;
            }
            step *= 0.5;
        }
        let now = sup(&res);
        ok = now <= options.tolerance;
        if !now.is_finite() || now >= prev {
            break;
        }
    }
    let mut used_fallback = false;
    if !ok {
        // damped fixed point: (r W - 3 S) v_new = W (R - ½ |∇v|²)
        used_fallback = true;
        v = vec![mean / r; grid.len()];
        for _ in 0..options.max_fixed_point {
            let g2 = grid.grad_norm_sq(&v);
            let rhs: Vec<f64> = (0..grid.len()).map(|i| w[i] * (curvature[i] - 0.5 * g2[i])).collect();
            let next = base_factor.solve(&rhs);
            for (a, b) in v.iter_mut().zip(&next) {
                *a = 0.5 * *a + 0.5 * b;
            }
            res = elliptic_residual(grid, r, &curvature, &v);
            if sup(&res) <= options.tolerance {
                ok = true;
                break;
            }
        }
    }
    let residual = sup(&res);
    if !ok {
        return Err(Error::InvalidParameter {
            name: "tolerance",
            reason: format!("stationary solve reached residual {residual:e} only"),
        });
    }
    let m = gibbs_density(grid, &v);
    let lap = grid.laplacian(&v);
    let mean_field_curvature = (0..grid.len()).map(|i| curvature[i] + LOG_DENSITY_FACTOR * lap[i]).collect();
    Ok(StationarySolution {
        v,
        m,
        scalar_curvature: curvature,
        mean_field_curvature,
        residual,
        newton_iterations,
        used_fallback,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FullSystemResidual {
    /// `sup |div(m ∇v) + Δ_g m|`
    pub fpk: f64,
    /// `sup |-r v - ½ |∇v|² + Δ_g v + R^m|` with `R^m = R^g - 2 Δ_g log m`.
    pub hjb: f64,
    /// `sup |Δ_g log m|`: the amount by which the hjb residual would change if
    /// `R^m` carried `Δ_g log m` once instead of twice.
    pub single_trace_gap: f64,
}

/// Residuals of the original two-equation system for a candidate pair.
pub fn verify_full_system(grid: &Grid, r: f64, v: &[f64], m: &[f64]) -> Result<FullSystemResidual> {
    require_compact(grid, r)?;
    grid.check_len(v.len())?;
    grid.check_len(m.len())?;
    let geom = grid.geometry();
    let curvature = grid.sample(&|x: &[f64]| geom.scalar_curvature(x));
    let a = grid.advection_matrix(&grid.drift_from_value(v));
    let adv = grid.adjoint_apply(&a, m);
    let lm = grid.laplacian(m);
    let fpk = sup(&adv.iter().zip(&lm).map(|(x, y)| x + y).collect::<Vec<_>>());
    let log_m: Vec<f64> = m.iter().map(|x| x.ln()).collect();
    let l_log = grid.laplacian(&log_m);
    let lap = grid.laplacian(v);
    let g2 = grid.grad_norm_sq(v);
    let hjb = (0..grid.len())
        .map(|i| {
            let rm = curvature[i] - LOG_DENSITY_FACTOR * l_log[i];
            (-r * v[i] - 0.5 * g2[i] + lap[i] + rm).abs()
        })
        .fold(0.0, f64::max);
    Ok(FullSystemResidual {
        fpk,
        hjb,
        single_trace_gap: sup(&l_log),
    })
}
