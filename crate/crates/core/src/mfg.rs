//! Kernel couplings and the damped Picard loop for the coupled
//! HJB / Fokker-Planck system
//!
//! ```text
//! -∂_t u - Δ_g u + ½ |∇u|²_g = F(m_t),   u(T) = G(m_T)
//!  ∂_t m - Δ_g m - div_g(m ∇_g u) = 0,   m(0) = m_0
//! ```

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discretization::{Grid, ScalarFunction};
use crate::error::{Error, Result};
use crate::fpk::{heat_flow, FpkReport, FpkSolver, ForwardProblem};
use crate::hjb::{BackwardProblem, HjbMethod, HjbReport, HjbSolver};
use crate::linalg::CsrMatrix;
use crate::transport::w1_tree_upper;

/// Interaction kernel `λ(d)` of the geodesic distance. All shapes are
/// nonincreasing, so `λ(0)` is the supremum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Kernel {
    /// `(1 - d/R)^4_+ (4 d/R + 1)`
    Wendland { radius: f64 },
    Gaussian { width: f64 },
    Exponential { scale: f64 },
    Constant { value: f64 },
    /// `1 / (d + offset)`
    Inverse { offset: f64 },
}

/// Relative size below which Gaussian and exponential tails are dropped.
const KERNEL_TAIL: f64 = 1e-16;

impl Kernel {
    pub fn eval(&self, d: f64) -> f64 {
        match *self {
            Self::Wendland { radius } => {
                let r = d / radius;
                if r >= 1.0 {
                    0.0
                } else {
                    (1.0 - r).powi(4) * (4.0 * r + 1.0)
                }
            }
            Self::Gaussian { width } => (-0.5 * d * d / (width * width)).exp(),
            Self::Exponential { scale } => (-d / scale).exp(),
            Self::Constant { value } => value,
            Self::Inverse { offset } => 1.0 / (d + offset),
        }
    }

    /// Distance beyond which the kernel is treated as zero.
    pub fn support_radius(&self) -> f64 {
        match *self {
            Self::Wendland { radius } => radius,
            Self::Gaussian { width } => width * (-2.0 * KERNEL_TAIL.ln()).sqrt(),
            Self::Exponential { scale } => -scale * KERNEL_TAIL.ln(),
            Self::Constant { .. } | Self::Inverse { .. } => f64::INFINITY,
        }
    }

    /// Lipschitz constant of `d ↦ λ(d)`.
    pub fn lipschitz(&self) -> f64 {
        match *self {
            Self::Wendland { radius } => 2.109375 / radius,
            Self::Gaussian { width } => (-0.5f64).exp() / width,
            Self::Exponential { scale } => 1.0 / scale,
            Self::Constant { .. } => 0.0,
            Self::Inverse { offset } => 1.0 / (offset * offset),
        }
    }

    fn validate(&self, diameter: f64) -> Result<()> {
        let (name, v, positive) = match *self {
            Self::Wendland { radius } => ("radius", radius, true),
            Self::Gaussian { width } => ("width", width, true),
            Self::Exponential { scale } => ("scale", scale, true),
            Self::Constant { value } => ("value", value, false),
            Self::Inverse { offset } => ("offset", offset, false),
        };
        if !(v.is_finite() && v >= 0.0 && (v > 0.0 || !positive)) {
            return Err(Error::InvalidParameter {
                name,
                reason: format!("kernel parameter out of range: {v}"),
            });
        }
        for d in [0.0, diameter] {
            let l = self.eval(d);
            if !l.is_finite() || l < 0.0 {
                return Err(Error::NonFiniteKernel { distance: d });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CouplingKind {
    /// `F(m)(x) = s ∫ λ(d(x, y)) f(y) m(dy)`
    Kernel,
    /// `F(m)(x) = f(x) + s ∫ λ(d(x, y)) m(dy)`
    Anchored,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Renormalization {
    #[default]
    None,
    /// Divide the kernel average by `∫ λ(d(x, y)) m(dy)`.
    KernelMass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Coupling {
    pub kind: CouplingKind,
    pub kernel: Kernel,
    /// Payoff `f` (kernel kind) or anchor `f` (anchored kind).
    pub profile: ScalarFunction,
    #[serde(default = "unit")]
    pub strength: f64,
    #[serde(default)]
    pub renormalization: Renormalization,
}

fn unit() -> f64 {
    1.0
}

impl Coupling {
    /// The zero coupling.
    pub fn zero() -> Self {
        Self {
            kind: CouplingKind::Anchored,
            kernel: Kernel::Constant { value: 0.0 },
            profile: ScalarFunction::Constant { value: 0.0 },
            strength: 0.0,
            renormalization: Renormalization::None,
        }
    }
}

/// A coupling prepared on one grid: sampled profile and kernel matrix.
#[derive(Debug, Clone)]
pub struct CouplingOperator {
    coupling: Coupling,
    profile: Vec<f64>,
    /// `None` for the constant kernel, which is applied as a rank-one map.
    kernel: Option<CsrMatrix>,
    bound: f64,
    lipschitz: Option<f64>,
}

impl CouplingOperator {
    pub fn new(coupling: &Coupling, grid: &Grid) -> Result<Self> {
        let geom = grid.geometry();
        coupling.profile.validate(geom)?;
        coupling.kernel.validate(geom.diameter_bound())?;
        if !coupling.strength.is_finite() {
            return Err(Error::InvalidParameter {
                name: "strength",
                reason: "must be finite".into(),
            });
        }
        if coupling.kind == CouplingKind::Anchored && coupling.renormalization != Renormalization::None {
            return Err(Error::InvalidParameter {
                name: "renormalization",
                reason: "only kernel couplings can be renormalised".into(),
            });
        }
        let profile = grid.sample_function(&coupling.profile)?;
        let kernel = match coupling.kernel {
            Kernel::Constant { .. } => None,
            k => Some(kernel_matrix(grid, &k)),
        };
        let s = coupling.strength.abs();
        let l0 = coupling.kernel.eval(0.0);
        let sup_f = coupling.profile.sup_bound();
        let lip_f = coupling.profile.lipschitz_bound(geom) / geom.conformal_factor_bounds().0;
        let (bound, lipschitz) = match (coupling.kind, coupling.renormalization) {
            (CouplingKind::Kernel, Renormalization::None) => {
                (s * l0 * sup_f, Some(s * (coupling.kernel.lipschitz() * sup_f + l0 * lip_f)))
            }
            (CouplingKind::Kernel, Renormalization::KernelMass) => (s * sup_f, None),
            (CouplingKind::Anchored, _) => (sup_f + s * l0, Some(s * coupling.kernel.lipschitz())),
        };
        Ok(Self {
            coupling: coupling.clone(),
            profile,
            kernel,
            // mass of a density is 1 only up to the conservation tolerance
            bound: bound * (1.0 + 1e-9),
            lipschitz,
        })
    }

    pub fn coupling(&self) -> &Coupling {
        &self.coupling
    }

    /// Upper bound on `sup |F(m)|` over probability densities.
    pub fn bound(&self) -> f64 {
        self.bound
    }

    /// Lipschitz constant of `m ↦ F(m)` from W1 into the sup norm, when known.
    pub fn lipschitz(&self) -> Option<f64> {
        self.lipschitz
    }

    /// `C_0`: the larger of the bound and the Lipschitz constant.
    pub fn c0(&self) -> f64 {
        self.bound.max(self.lipschitz.unwrap_or(0.0))
    }

    fn smooth(&self, v: &[f64]) -> Vec<f64> {
        match (&self.kernel, self.coupling.kernel) {
            (Some(k), _) => k.mul_vec(v),
            (None, Kernel::Constant { value }) => {
                let total: f64 = v.iter().sum();
                vec![value * total; v.len()]
            }
            (None, _) => unreachable!(),
        }
    }

    pub fn apply(&self, grid: &Grid, m: &[f64]) -> Result<Vec<f64>> {
        grid.check_len(m.len())?;
        let s = self.coupling.strength;
        let mw: Vec<f64> = m.iter().zip(grid.weights()).map(|(a, w)| a * w).collect();
        Ok(match self.coupling.kind {
            CouplingKind::Anchored => {
                let k = self.smooth(&mw);
                self.profile.iter().zip(&k).map(|(f, k)| f + s * k).collect()
            }
            CouplingKind::Kernel => {
                let fmw: Vec<f64> = mw.iter().zip(&self.profile).map(|(a, f)| a * f).collect();
                let num = self.smooth(&fmw);
                match self.coupling.renormalization {
                    Renormalization::None => num.into_iter().map(|v| s * v).collect(),
                    Renormalization::KernelMass => {
                        let den = self.smooth(&mw);
                        num.iter()
                            .zip(&den)
                            .map(|(n, d)| if *d > 0.0 { s * n / d } else { 0.0 })
                            .collect()
                    }
                }
            }
        })
    }
}

/// Sparse matrix `K_ij = λ(d(x_i, x_j))`, entries beyond the support dropped.
fn kernel_matrix(grid: &Grid, kernel: &Kernel) -> CsrMatrix {
    let geom = grid.geometry();
    let targets: Vec<&[f64]> = (0..grid.len()).map(|i| grid.node(i)).collect();
    let cutoff = kernel.support_radius();
    let rows: Vec<Vec<(usize, f64)>> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            geom.distances_within(grid.node(i), &targets, cutoff)
                .into_iter()
                .enumerate()
                .filter(|(_, d)| d.is_finite())
                .map(|(j, d)| (j, kernel.eval(d)))
                .filter(|&(_, v)| v != 0.0)
                .collect()
        })
        .collect();
    CsrMatrix::from_rows(grid.len(), rows)
}

/// `F(m)` with a freshly prepared operator.
pub fn eval_kernel_coupling(coupling: &Coupling, grid: &Grid, m: &[f64]) -> Result<Vec<f64>> {
    CouplingOperator::new(coupling, grid)?.apply(grid, m)
}

/// `∫ (F(μ) - F(ν)) d(μ - ν)`; nonnegative for monotone couplings.
pub fn monotonicity_gap<F>(coupling: F, grid: &Grid, mu: &[f64], nu: &[f64]) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    grid.check_len(mu.len())?;
    grid.check_len(nu.len())?;
    let a = coupling(mu)?;
    let b = coupling(nu)?;
    let integrand: Vec<f64> = (0..grid.len()).map(|i| (a[i] - b[i]) * (mu[i] - nu[i])).collect();
    Ok(grid.integrate(&integrand))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialFlow {
    /// Heat flow of `m_0`.
    HeatFlow,
    /// `m_0` at every time.
    Frozen,
    /// The uniform density at every time.
    Uniform,
    /// The given density at every time.
    Density(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct MfgProblem {
    pub horizon: f64,
    pub steps: usize,
    pub m0: Vec<f64>,
    pub running: Coupling,
    pub terminal: Coupling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PicardOptions {
    #[serde(default = "default_damping")]
    pub damping: f64,
    /// Factor applied to the damping when the residual grows.
    #[serde(default = "default_backoff")]
    pub backoff: f64,
    #[serde(default = "default_min_damping")]
    pub min_damping: f64,
    /// Tolerance on `sup_t W1(Ψ(m)_t, m_t)`.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_method")]
    pub method: HjbMethod,
    #[serde(default = "default_initial")]
    pub initial: InitialFlow,
}

fn default_tolerance() -> f64 {
    1e-6
}
fn default_max_iters() -> usize {
    100
}
fn default_damping() -> f64 {
    0.5
}
fn default_backoff() -> f64 {
    0.5
}
fn default_min_damping() -> f64 {
    0.05
}
fn default_method() -> HjbMethod {
    HjbMethod::ColeHopf
}
fn default_initial() -> InitialFlow {
    InitialFlow::HeatFlow
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self {
            damping: default_damping(),
            backoff: default_backoff(),
            min_damping: default_min_damping(),
            tolerance: default_tolerance(),
            max_iters: default_max_iters(),
            method: default_method(),
            initial: default_initial(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationRecord {
    /// `sup_t` of the tree upper bound on `W1(Ψ(m^k)_t, m^k_t)`.
    pub fixed_point: f64,
    /// `sup |Ψ(m^k) - m^k|`
    pub density_change: f64,
    /// `sup |u^k - u^{k-1}|`, infinite on the first iteration.
    pub value_change: f64,
    pub damping: f64,
}

#[derive(Debug, Clone)]
pub struct MfgSolution {
    pub u: Vec<Vec<f64>>,
    pub m: Vec<Vec<f64>>,
    pub drift: Vec<Vec<f64>>,
    pub history: Vec<IterationRecord>,
    pub converged: bool,
    pub c0: f64,
    pub hjb: HjbReport,
    pub fpk: FpkReport,
    /// `max W1(m_s, m_t) / sqrt(t - s)` over dyadic lags, from tree bounds.
    pub holder_constant: f64,
}

impl MfgSolution {
    pub fn iterations(&self) -> usize {
        self.history.len()
    }

    pub fn last_residual(&self) -> f64 {
        self.history.last().map_or(f64::INFINITY, |r| r.fixed_point)
    }
}

/// Grid-bound solvers and coupling operators for repeated Picard maps.
pub struct MfgSolver<'a> {
    grid: &'a Grid,
    problem: &'a MfgProblem,
    running: CouplingOperator,
    terminal: CouplingOperator,
    c0: f64,
    hjb: HjbSolver,
    fpk: FpkSolver,
}

struct MapOutput {
    u: Vec<Vec<f64>>,
    drift: Vec<Vec<f64>>,
    m: Vec<Vec<f64>>,
    hjb: HjbReport,
    fpk: FpkReport,
}

impl<'a> MfgSolver<'a> {
    pub fn new(grid: &'a Grid, problem: &'a MfgProblem) -> Result<Self> {
        if !(problem.horizon > 0.0) || problem.steps == 0 {
            return Err(Error::InvalidParameter {
                name: "horizon",
                reason: "need a positive horizon and at least one step".into(),
            });
        }
        let running = CouplingOperator::new(&problem.running, grid)?;
        let terminal = CouplingOperator::new(&problem.terminal, grid)?;
        let c0 = running.c0().max(terminal.c0());
        let dt = problem.horizon / problem.steps as f64;
        Ok(Self {
            grid,
            problem,
            running,
            terminal,
            c0,
            hjb: HjbSolver::new(grid, dt, c0)?,
            fpk: FpkSolver::new(grid, dt)?,
        })
    }

    pub fn c0(&self) -> f64 {
        self.c0
    }

    /// One evaluation of the best-response map `Ψ`.
    fn map(&self, flow: &[Vec<f64>], method: HjbMethod) -> Result<MapOutput> {
        let grid = self.grid;
        let sources = flow
            .par_iter()
            .map(|m| self.running.apply(grid, m))
            .collect::<Result<Vec<_>>>()?;
        let terminal = self.terminal.apply(grid, flow.last().unwrap())?;
        let backward = BackwardProblem {
            horizon: self.problem.horizon,
            steps: self.problem.steps,
            sources,
            terminal,
            c0: self.c0,
        };
        let h = self.hjb.solve(grid, &backward, method)?;
        let forward = ForwardProblem {
            horizon: self.problem.horizon,
            steps: self.problem.steps,
            m0: self.problem.m0.clone(),
            drift: h.drift[..self.problem.steps].to_vec(),
        };
        let f = self.fpk.solve(grid, &forward)?;
        Ok(MapOutput {
            u: h.u,
            drift: h.drift,
            m: f.m,
            hjb: h.report,
            fpk: f.report,
        })
    }

    fn initial_flow(&self, initial: &InitialFlow) -> Result<Vec<Vec<f64>>> {
        let p = self.problem;
        let n = p.steps + 1;
        Ok(match initial {
            InitialFlow::HeatFlow => heat_flow(self.grid, &p.m0, p.horizon, p.steps)?,
            InitialFlow::Frozen => vec![p.m0.clone(); n],
            InitialFlow::Uniform => vec![self.grid.uniform_density(); n],
            InitialFlow::Density(d) => {
                self.grid.check_len(d.len())?;
                vec![d.clone(); n]
            }
        })
    }

    /// Damped Picard iteration `m ← (1 - α) m + α Ψ(m)`.
    pub fn picard(&self, options: &PicardOptions) -> Result<MfgSolution> {
        if !(options.damping > 0.0 && options.damping <= 1.0) {
            return Err(Error::InvalidParameter {
                name: "damping",
                reason: format!("must lie in (0, 1], got {}", options.damping),
            });
        }
        if !(options.tolerance > 0.0) {
            return Err(Error::InvalidParameter {
                name: "tolerance",
                reason: format!("must be positive, got {}", options.tolerance),
            });
        }
        let grid = self.grid;
        let mut flow = self.initial_flow(&options.initial)?;
        let mut alpha = options.damping;
        let mut history: Vec<IterationRecord> = Vec::new();
        let mut last: Option<MapOutput> = None;
        let mut converged = false;
        for _ in 0..options.max_iters {
            let out = self.map(&flow, options.method)?;
            let fixed_point = sup_w1(grid, &out.m, &flow)?;
            let density_change = sup_diff(&out.m, &flow);
            let value_change = last.as_ref().map_or(f64::INFINITY, |l| sup_diff(&out.u, &l.u));
            if let Some(prev) = history.last() {
                if fixed_point > prev.fixed_point {
                    alpha = (alpha * options.backoff).max(options.min_damping);
                }
            }
            history.push(IterationRecord {
                fixed_point,
                density_change,
                value_change,
                damping: alpha,
            });
            if fixed_point <= options.tolerance {
                converged = true;
                last = Some(out);
                break;
            }
            for (cur, new) in flow.iter_mut().zip(&out.m) {
                for (c, n) in cur.iter_mut().zip(new) {
                    *c = (1.0 - alpha) * *c + alpha * n;
                }
            }
            last = Some(out);
        }
        let solution = match last {
            Some(out) => MfgSolution {
                holder_constant: holder_constant(grid, &out.m, self.problem.horizon)?,
                u: out.u,
                m: out.m,
                drift: out.drift,
                history,
                converged,
                c0: self.c0,
                hjb: out.hjb,
                fpk: out.fpk,
            },
            None => MfgSolution {
                u: Vec::new(),
                m: flow,
                drift: Vec::new(),
                history,
                converged: false,
                c0: self.c0,
                hjb: HjbReport {
                    sup_abs_u: 0.0,
                    u_bound: self.c0 * (self.problem.horizon + 1.0),
                    lower_barrier_ratio: f64::NAN,
                    upper_barrier_ratio: f64::NAN,
                    max_grad_norm: 0.0,
                    linear_iterations: 0,
                },
                fpk: FpkReport::default(),
                holder_constant: f64::NAN,
            },
        };
        if solution.converged {
            Ok(solution)
        } else {
            Err(Error::NotConverged(Box::new(solution)))
        }
    }

    /// Residuals of a candidate pair: the HJB scheme residual of `u` against
    /// `F(m)`, the FPK scheme residual of `m` under the drift of `u`, and the
    /// fixed-point residual `sup_t W1(Ψ(m)_t, m_t)`.
    pub fn equilibrium_residual(&self, solution: &MfgSolution, method: HjbMethod) -> Result<EquilibriumResidual> {
        let grid = self.grid;
        let p = self.problem;
        let dt = p.horizon / p.steps as f64;
        if solution.u.len() != p.steps + 1 || solution.m.len() != p.steps + 1 {
            return Err(Error::InvalidParameter {
                name: "solution",
                reason: "trajectories must have steps + 1 slices".into(),
            });
        }
        let sources = solution
            .m
            .par_iter()
            .map(|m| self.running.apply(grid, m))
            .collect::<Result<Vec<_>>>()?;
        let terminal = self.terminal.apply(grid, solution.m.last().unwrap())?;
        let u = &solution.u;
        let mut hjb = sup_diff(&[terminal], &u[p.steps..]);
        for n in 0..p.steps {
            let r: Vec<f64> = match method {
                HjbMethod::Direct => {
                    let lu = grid.laplacian(&u[n]);
                    let h = grid.grad_norm_sq(&u[n + 1]);
                    (0..grid.len())
                        .map(|i| (u[n][i] - u[n + 1][i]) / dt - lu[i] - sources[n][i] + 0.5 * h[i])
                        .collect()
                }
                HjbMethod::ColeHopf => {
                    // the scheme is linear in w = exp(-u/2)
                    let w: Vec<f64> = u[n].iter().map(|v| (-0.5 * v).exp()).collect();
                    let w1: Vec<f64> = u[n + 1].iter().map(|v| (-0.5 * v).exp()).collect();
                    let lw = grid.laplacian(&w);
                    let e = (0.5 * self.c0 * dt).exp();
                    (0..grid.len())
                        .map(|i| {
                            let r = (w[i] - e * w1[i]) / dt - lw[i] + 0.5 * (sources[n][i] + self.c0) * w[i];
                            // back to the scale of u
                            -2.0 * r / w[i]
                        })
                        .collect()
                }
            };
            hjb = hjb.max(r.iter().fold(0.0f64, |a, v| a.max(v.abs())));
        }
        let drift: Vec<Vec<f64>> = u[..p.steps].iter().map(|s| grid.drift_from_value(s)).collect();
        let forward = ForwardProblem {
            horizon: p.horizon,
            steps: p.steps,
            m0: solution.m[0].clone(),
            drift,
        };
        let replay = self.fpk.solve(grid, &forward)?;
        let fpk = sup_diff(&replay.m, &solution.m) / dt;
        let psi = self.map(&solution.m, method)?;
        let fixed_point = sup_w1(grid, &psi.m, &solution.m)?;
        Ok(EquilibriumResidual { hjb, fpk, fixed_point })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EquilibriumResidual {
    pub hjb: f64,
    pub fpk: f64,
    pub fixed_point: f64,
}

/// Solves the MFG system by damped Picard iteration.
pub fn picard_solve(grid: &Grid, problem: &MfgProblem, options: &PicardOptions) -> Result<MfgSolution> {
    MfgSolver::new(grid, problem)?.picard(options)
}

fn sup_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

fn sup_w1(grid: &Grid, a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let vals = a
        .par_iter()
        .zip(b)
        .map(|(x, y)| w1_tree_upper(grid, x, y))
        .collect::<Result<Vec<_>>>()?;
    Ok(vals.into_iter().fold(0.0, f64::max))
}

fn holder_constant(grid: &Grid, m: &[Vec<f64>], horizon: f64) -> Result<f64> {
    let steps = m.len() - 1;
    let dt = horizon / steps as f64;
    let mut pairs = Vec::new();
    let mut lag = 1;
    while lag <= steps {
        pairs.push((0, lag));
        pairs.push((steps - lag, steps));
        lag *= 2;
    }
    let vals = pairs
        .par_iter()
        .map(|&(s, t)| Ok(w1_tree_upper(grid, &m[s], &m[t])? / ((t - s) as f64 * dt).sqrt()))
        .collect::<Result<Vec<f64>>>()?;
    Ok(vals.into_iter().fold(0.0, f64::max))
}
