//! Backward Hamilton-Jacobi-Bellman solver for `-∂_t u - Δ_g u + ½|∇u|²_g = F`.
//!
//! The default method solves the linear equation for `w = e^{-u/2}`,
//! `∂_t w + Δ_g w - ½ F w = 0`, by implicit Euler. With the shifted unknown
//! `w̃ = e^{½ C₀ t} w` each step reads
//!
//! ```text
//! (I - Δt L + ½ Δt (F^n + C₀)) w̃^n = w̃^{n+1},
//! ```
//!
//! whose matrix is an M-matrix because `F + C₀ ≥ 0`. The discrete maximum
//! principle then gives `e^{-½C₀(T-t+1)} ≤ w ≤ e^{½C₀(T-t+1)}` exactly, which
//! every step asserts.

use crate::discretization::Grid;
use crate::error::{Error, Result};
use crate::linalg::{pcg, CsrMatrix, EnvelopeCholesky};

/// Relative slack granted to the barrier checks for linear-solver error.
const BARRIER_SLACK: f64 = 1e-12;
const PCG_TOL: f64 = 1e-14;

/// Data of one backward solve. `sources[n]` is `F(m_{t_n})` at `t_n = n T / steps`.
#[derive(Debug, Clone)]
pub struct BackwardProblem {
    pub horizon: f64,
    pub steps: usize,
    pub sources: Vec<Vec<f64>>,
    pub terminal: Vec<f64>,
    pub c0: f64,
}

impl BackwardProblem {
    pub fn validate(&self, grid: &Grid) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "horizon",
                reason: format!("must be positive, got {}", self.horizon),
            });
        }
        if self.steps == 0 {
            return Err(Error::InvalidParameter {
                name: "steps",
                reason: "need at least one time step".into(),
            });
        }
        if self.sources.len() != self.steps + 1 {
            return Err(Error::InvalidParameter {
                name: "sources",
                reason: format!("expected {} slices, got {}", self.steps + 1, self.sources.len()),
            });
        }
        for s in self.sources.iter().chain(std::iter::once(&self.terminal)) {
            grid.check_len(s.len())?;
        }
        if !(self.c0 >= 0.0 && self.c0.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "c0",
                reason: format!("coupling bound must be finite and nonnegative, got {}", self.c0),
            });
        }
        let observed = sup_abs(self.sources.iter().flatten().chain(&self.terminal));
        if observed > self.c0 * (1.0 + 1e-12) {
            return Err(Error::InvalidParameter {
                name: "c0",
                reason: format!("coupling bound {} is below sup |F|, |G| = {observed}", self.c0),
            });
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, n: usize) -> f64 {
        self.horizon * n as f64 / self.steps as f64
    }

    pub fn lower_barrier(&self, n: usize) -> f64 {
        (-0.5 * self.c0 * (self.horizon - self.time(n) + 1.0)).exp()
    }

    pub fn upper_barrier(&self, n: usize) -> f64 {
        (0.5 * self.c0 * (self.horizon - self.time(n) + 1.0)).exp()
    }
}

fn sup_abs<'a>(it: impl Iterator<Item = &'a f64>) -> f64 {
    it.fold(0.0, |m, v| m.max(v.abs()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HjbMethod {
    ColeHopf,
    /// Implicit diffusion with an explicit central-difference Hamiltonian.
    Direct,
}

/// Bounds observed over a backward solve.
#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize)]
pub struct HjbReport {
    pub sup_abs_u: f64,
    /// `C₀ (T + 1)`.
    pub u_bound: f64,
    /// `min_{n,i} w / lower_n`; at least 1 when the lower barrier holds.
    pub lower_barrier_ratio: f64,
    /// `max_{n,i} w / upper_n`; at most 1 when the upper barrier holds.
    pub upper_barrier_ratio: f64,
    pub max_grad_norm: f64,
    pub linear_iterations: usize,
}

#[derive(Debug, Clone)]
pub struct HjbSolution {
    /// `u[n]` at `t_n`.
    pub u: Vec<Vec<f64>>,
    /// Cole-Hopf variable `w[n] = e^{-u[n]/2}`.
    pub w: Vec<Vec<f64>>,
    /// Optimal drift `B = -∇_g u` per slice, chart components `[i * dim + k]`.
    pub drift: Vec<Vec<f64>>,
    pub report: HjbReport,
}

pub fn cole_hopf(u: &[f64]) -> Vec<f64> {
    u.iter().map(|v| (-0.5 * v).exp()).collect()
}

pub fn inverse_cole_hopf(w: &[f64]) -> Result<Vec<f64>> {
    w.iter()
        .enumerate()
        .map(|(node, &value)| {
            if value > 0.0 {
                Ok(-2.0 * value.ln())
            } else {
                Err(Error::NonPositiveColeHopf { node, value })
            }
        })
        .collect()
}

/// Factorisations reusable across solves on one grid with one step size.
#[derive(Debug, Clone)]
pub struct HjbSolver {
    dt: f64,
    c0: f64,
    /// `W - Δt S`, the weighted form of `I - Δt L`.
    base: CsrMatrix,
    base_factor: EnvelopeCholesky,
    shifted_factor: EnvelopeCholesky,
}

impl HjbSolver {
    pub fn new(grid: &Grid, dt: f64, c0: f64) -> Result<Self> {
        let base = grid.stiffness().scaled(-dt).add_diagonal(grid.weights());
        let base_factor = EnvelopeCholesky::factor(&base)?;
        let shift: Vec<f64> = grid.weights().iter().map(|w| 0.5 * dt * c0 * w).collect();
        let shifted_factor = if c0 > 0.0 {
            EnvelopeCholesky::factor(&base.add_diagonal(&shift))?
        } else {
            base_factor.clone()
        };
        Ok(Self {
            dt,
            c0,
            base,
            base_factor,
            shifted_factor,
        })
    }

    fn check(&self, problem: &BackwardProblem) -> Result<()> {
        if (problem.dt() - self.dt).abs() > 1e-14 * self.dt || problem.c0 != self.c0 {
            return Err(Error::InvalidParameter {
                name: "problem",
                reason: "time step or coupling bound differs from the prepared solver".into(),
            });
        }
        Ok(())
    }

    /// Trajectory `w[n]`, `n = 0..=steps`, of the linear backward equation.
    pub fn solve_linear(&self, grid: &Grid, problem: &BackwardProblem) -> Result<(Vec<Vec<f64>>, usize)> {
        problem.validate(grid)?;
        self.check(problem)?;
        let steps = problem.steps;
        let dt = self.dt;
        let c0 = self.c0;
        let wts = grid.weights();
        let mut w = vec![Vec::new(); steps + 1];
        w[steps] = cole_hopf(&problem.terminal);
        check_barrier(problem, steps, &w[steps])?;
        let mut tilde = w[steps].iter().map(|v| v * (0.5 * c0 * problem.horizon).exp()).collect::<Vec<_>>();
        let mut iterations = 0;
        for n in (0..steps).rev() {
            let diag: Vec<f64> = problem.sources[n]
                .iter()
                .zip(wts)
                .map(|(f, wi)| 0.5 * dt * (f + c0) * wi)
                .collect();
            let a = self.base.add_diagonal(&diag);
            let rhs: Vec<f64> = tilde.iter().zip(wts).map(|(v, wi)| v * wi).collect();
            let mut x = tilde.clone();
            iterations += pcg(&a, &rhs, &mut x, &self.shifted_factor, PCG_TOL, 500)?;
            tilde = x;
            let scale = (-0.5 * c0 * problem.time(n)).exp();
            w[n] = tilde.iter().map(|v| v * scale).collect();
            check_barrier(problem, n, &w[n])?;
        }
        Ok((w, iterations))
    }

    pub fn solve(&self, grid: &Grid, problem: &BackwardProblem, method: HjbMethod) -> Result<HjbSolution> {
        let (u, w, iterations) = match method {
            HjbMethod::ColeHopf => {
                let (w, it) = self.solve_linear(grid, problem)?;
                let u = w.iter().map(|s| inverse_cole_hopf(s)).collect::<Result<Vec<_>>>()?;
                (u, w, it)
            }
            HjbMethod::Direct => {
                let u = self.solve_direct(grid, problem)?;
                let w: Vec<Vec<f64>> = u.iter().map(|s| cole_hopf(s)).collect();
                for (n, s) in w.iter().enumerate() {
                    check_barrier(problem, n, s)?;
                }
                (u, w, 0)
            }
        };
        let drift: Vec<Vec<f64>> = u.iter().map(|s| grid.drift_from_value(s)).collect();
        let mut report = HjbReport {
            sup_abs_u: sup_abs(u.iter().flatten()),
            u_bound: problem.c0 * (problem.horizon + 1.0),
            lower_barrier_ratio: f64::INFINITY,
            upper_barrier_ratio: 0.0,
            max_grad_norm: 0.0,
            linear_iterations: iterations,
        };
        for (n, s) in w.iter().enumerate() {
            let (lo, hi) = (problem.lower_barrier(n), problem.upper_barrier(n));
            for &v in s {
                report.lower_barrier_ratio = report.lower_barrier_ratio.min(v / lo);
                report.upper_barrier_ratio = report.upper_barrier_ratio.max(v / hi);
            }
        }
        for s in &u {
            let g = grid.grad_norm_sq(s);
            report.max_grad_norm = report.max_grad_norm.max(g.iter().fold(0.0f64, |m, v| m.max(*v)).sqrt());
        }
        if report.sup_abs_u > report.u_bound * (1.0 + BARRIER_SLACK) {
            return Err(Error::InvalidParameter {
                name: "c0",
                reason: format!(
                    "sup |u| = {} exceeds C0 (T + 1) = {}",
                    report.sup_abs_u, report.u_bound
                ),
            });
        }
        Ok(HjbSolution { u, w, drift, report })
    }

    /// `(I - Δt L) u^n = u^{n+1} + Δt (F^n - ½ |∇u^{n+1}|²_g)`.
    fn solve_direct(&self, grid: &Grid, problem: &BackwardProblem) -> Result<Vec<Vec<f64>>> {
        problem.validate(grid)?;
        self.check(problem)?;
        let steps = problem.steps;
        let dt = self.dt;
        let wts = grid.weights();
        let mut u = vec![Vec::new(); steps + 1];
        u[steps] = problem.terminal.clone();
        for n in (0..steps).rev() {
            let next = &u[n + 1];
            let h = grid.grad_norm_sq(next);
            // Linearised, the explicit Hamiltonian is central advection with
            // velocity ∇_g u against unit implicit diffusion: stable for
            // Δt |∇u|²_g ≤ 2.
            let peak = h.iter().fold(0.0f64, |m, v| m.max(*v));
            if dt * peak > 2.0 {
                return Err(Error::TimeStepTooLarge { dt, limit: 2.0 / peak });
            }
            let rhs: Vec<f64> = (0..grid.len())
                .map(|i| wts[i] * (next[i] + dt * (problem.sources[n][i] - 0.5 * h[i])))
                .collect();
            u[n] = self.base_factor.solve(&rhs);
        }
        Ok(u)
    }
}

fn check_barrier(problem: &BackwardProblem, n: usize, w: &[f64]) -> Result<()> {
    let lower = problem.lower_barrier(n);
    let upper = problem.upper_barrier(n);
    for (node, &value) in w.iter().enumerate() {
        if !(value >= lower * (1.0 - BARRIER_SLACK) && value <= upper * (1.0 + BARRIER_SLACK)) {
            if value <= 0.0 {
                return Err(Error::NonPositiveColeHopf { node, value });
            }
            return Err(Error::BarrierViolation {
                step: n,
                node,
                value,
                lower,
                upper,
                dt: problem.dt(),
            });
        }
    }
    Ok(())
}

/// Solves the HJB equation with a freshly prepared solver.
pub fn solve_hjb(grid: &Grid, problem: &BackwardProblem, method: HjbMethod) -> Result<HjbSolution> {
    HjbSolver::new(grid, problem.dt(), problem.c0)?.solve(grid, problem, method)
}

/// Solves the linear backward equation for `w` with a freshly prepared solver.
pub fn solve_linear_parabolic_backward(grid: &Grid, problem: &BackwardProblem) -> Result<Vec<Vec<f64>>> {
    Ok(HjbSolver::new(grid, problem.dt(), problem.c0)?
        .solve_linear(grid, problem)?
        .0)
}
