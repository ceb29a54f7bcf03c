//! Forward Fokker-Planck solver for `∂_t m + div_g(B m) - Δ_g m = 0`.
//!
//! One step is IMEX: explicit upwind advection with the adjoint generator
//! `A^* = W^{-1} A^T W` (substepped so each substep is a positive map),
//! followed by implicit Euler diffusion with the symmetric matrix `W - Δt S`.
//! Both stages preserve `Σ w_i m_i` exactly up to rounding.

use crate::discretization::Grid;
use crate::error::{Error, Result};
use crate::linalg::EnvelopeCholesky;

/// Largest tolerated mass defect per step.
pub const MASS_TOLERANCE: f64 = 1e-10;

/// Negative values above `-NEGATIVE_ROUNDING * max(m)` are rounding noise of
/// the triangular solves and are reset to zero.
const NEGATIVE_ROUNDING: f64 = 1e-13;

#[derive(Debug, Clone)]
pub struct ForwardProblem {
    pub horizon: f64,
    pub steps: usize,
    pub m0: Vec<f64>,
    /// Drift slices `B(t_n)`, chart components `[i * dim + k]`; slice `n`
    /// drives the step from `t_n` to `t_{n+1}`. Empty means zero drift.
    pub drift: Vec<Vec<f64>>,
}

impl ForwardProblem {
    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn validate(&self, grid: &Grid) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) || self.steps == 0 {
            return Err(Error::InvalidParameter {
                name: "horizon",
                reason: "need a positive horizon and at least one step".into(),
            });
        }
        grid.check_len(self.m0.len())?;
        if let Some((index, &value)) = self.m0.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
            return Err(Error::InvalidWeight { index, value });
        }
        let mass = grid.integrate(&self.m0);
        if (mass - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::InvalidParameter {
                name: "m0",
                reason: format!("initial density has mass {mass}, expected 1"),
            });
        }
        if !self.drift.is_empty() {
            if self.drift.len() < self.steps {
                return Err(Error::InvalidParameter {
                    name: "drift",
                    reason: format!("expected at least {} slices, got {}", self.steps, self.drift.len()),
                });
            }
            for d in &self.drift {
                grid.check_len(d.len() / grid.dim())?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize)]
pub struct FpkReport {
    pub max_mass_defect: f64,
    pub min_density: f64,
    /// `sup_t ∫ d(x_ref, x)^2 m_t dvol`.
    pub max_second_moment: f64,
    pub max_substeps: usize,
    pub rounding_resets: usize,
}

#[derive(Debug, Clone)]
pub struct ForwardSolution {
    pub m: Vec<Vec<f64>>,
    pub report: FpkReport,
}

/// Diffusion factorisation for one grid and step size.
#[derive(Debug, Clone)]
pub struct FpkSolver {
    dt: f64,
    factor: EnvelopeCholesky,
    reference_dist2: Vec<f64>,
}

impl FpkSolver {
    pub fn new(grid: &Grid, dt: f64) -> Result<Self> {
        let k = grid.stiffness().scaled(-dt).add_diagonal(grid.weights());
        let factor = EnvelopeCholesky::factor(&k)?;
        let geom = grid.geometry();
        let reference = reference_point(grid);
        let targets: Vec<&[f64]> = (0..grid.len()).map(|i| grid.node(i)).collect();
        let reference_dist2 = geom
            .distances_within(&reference, &targets, f64::INFINITY)
            .into_iter()
            .map(|d| d * d)
            .collect();
        Ok(Self {
            dt,
            factor,
            reference_dist2,
        })
    }

    pub fn solve(&self, grid: &Grid, problem: &ForwardProblem) -> Result<ForwardSolution> {
        problem.validate(grid)?;
        if (problem.dt() - self.dt).abs() > 1e-14 * self.dt {
            return Err(Error::InvalidParameter {
                name: "problem",
                reason: "time step differs from the prepared solver".into(),
            });
        }
        let mut report = FpkReport {
            min_density: problem.m0.iter().fold(f64::INFINITY, |a, &b| a.min(b)),
            max_second_moment: grid.integrate(
                &problem.m0.iter().zip(&self.reference_dist2).map(|(m, d)| m * d).collect::<Vec<_>>(),
            ),
            ..Default::default()
        };
        let mut m = Vec::with_capacity(problem.steps + 1);
        m.push(problem.m0.clone());
        for n in 0..problem.steps {
            let mut cur = m[n].clone();
            if let Some(drift) = problem.drift.get(n) {
                let a = grid.advection_matrix(drift);
                let rate = Grid::max_rate(&a);
                let sub = ((self.dt * rate).ceil() as usize).max(1);
                report.max_substeps = report.max_substeps.max(sub);
                let tau = self.dt / sub as f64;
                for _ in 0..sub {
                    let adv = grid.adjoint_apply(&a, &cur);
                    for (c, v) in cur.iter_mut().zip(&adv) {
                        *c += tau * v;
                    }
                }
            }
            let rhs: Vec<f64> = cur.iter().zip(grid.weights()).map(|(c, w)| c * w).collect();
            let mut next = self.factor.solve(&rhs);
            let peak = next.iter().fold(0.0f64, |a, &b| a.max(b));
            for (node, v) in next.iter_mut().enumerate() {
                if *v < 0.0 {
                    if *v < -NEGATIVE_ROUNDING * peak {
                        return Err(Error::NegativeDensity {
                            step: n + 1,
                            node,
                            value: *v,
                        });
                    }
                    *v = 0.0;
                    report.rounding_resets += 1;
                }
            }
            let mass = grid.integrate(&next);
            let defect = (mass - 1.0).abs();
            report.max_mass_defect = report.max_mass_defect.max(defect);
            if defect > MASS_TOLERANCE {
                return Err(Error::MassDefect { step: n + 1, defect });
            }
            report.min_density = next.iter().fold(report.min_density, |a, &b| a.min(b));
            let moment = grid.integrate(
                &next.iter().zip(&self.reference_dist2).map(|(m, d)| m * d).collect::<Vec<_>>(),
            );
            report.max_second_moment = report.max_second_moment.max(moment);
            m.push(next);
        }
        Ok(ForwardSolution { m, report })
    }
}

/// Origin of the disk, or the node nearest the centre of the torus box.
fn reference_point(grid: &Grid) -> Vec<f64> {
    match grid.geometry().periods() {
        None => vec![0.0; grid.dim()],
        Some(p) => p.iter().map(|l| 0.5 * l).collect(),
    }
}

pub fn solve_forward(grid: &Grid, problem: &ForwardProblem) -> Result<ForwardSolution> {
    FpkSolver::new(grid, problem.dt())?.solve(grid, problem)
}

/// Heat flow of `m0` (zero drift), the default initial flow of the Picard loop.
pub fn heat_flow(grid: &Grid, m0: &[f64], horizon: f64, steps: usize) -> Result<Vec<Vec<f64>>> {
    let p = ForwardProblem {
        horizon,
        steps,
        m0: m0.to_vec(),
        drift: Vec::new(),
    };
    Ok(solve_forward(grid, &p)?.m)
}
