//! Model Riemannian manifolds presented in a single global chart.
//!
//! Three geometries are provided, all conformally flat (`g = e^{2σ} δ`):
//!
//! * the Poincaré ball of any dimension, `g_ij = 4 δ_ij / (1 - |x|^2)^2`,
//!   truncated to `|x| < r_max`;
//! * the flat torus with arbitrary periods;
//! * a two dimensional torus with metric `e^{2φ} δ`, where `φ` is a
//!   truncated Fourier series.
//!
//! Every metric quantity the solvers need (inverse metric, volume weight,
//! Christoffel symbols, curvature, distances, exponential map) is derived
//! from the log-conformal factor `σ` and its first two derivatives.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One term `cos_coef * cos(θ) + sin_coef * sin(θ)` with
/// `θ = 2π (k0 x0 / L0 + k1 x1 / L1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourierMode {
    pub k: [i32; 2],
    #[serde(default)]
    pub cos: f64,
    #[serde(default)]
    pub sin: f64,
}

/// Smooth periodic potential on a 2-torus given by finitely many Fourier modes.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierPotential {
    modes: Vec<FourierMode>,
    periods: [f64; 2],
}

impl FourierPotential {
    pub fn new(modes: Vec<FourierMode>, periods: [f64; 2]) -> Self {
        Self { modes, periods }
    }

    pub fn modes(&self) -> &[FourierMode] {
        &self.modes
    }

    fn wavevector(&self, m: &FourierMode) -> [f64; 2] {
        [
            2.0 * PI * m.k[0] as f64 / self.periods[0],
            2.0 * PI * m.k[1] as f64 / self.periods[1],
        ]
    }

    /// Value, gradient and Hessian (row-major 2x2).
    pub fn jet(&self, x: &[f64]) -> (f64, [f64; 2], [f64; 4]) {
        let mut val = 0.0;
        let mut grad = [0.0; 2];
        let mut hess = [0.0; 4];
        for m in &self.modes {
            let q = self.wavevector(m);
            let theta = q[0] * x[0] + q[1] * x[1];
            let (s, c) = theta.sin_cos();
            val += m.cos * c + m.sin * s;
            let d1 = -m.cos * s + m.sin * c;
            let d2 = -(m.cos * c + m.sin * s);
            for i in 0..2 {
                grad[i] += d1 * q[i];
                for j in 0..2 {
                    hess[2 * i + j] += d2 * q[i] * q[j];
                }
            }
        }
        (val, grad, hess)
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.jet(x).0
    }

    pub fn laplacian(&self, x: &[f64]) -> f64 {
        let h = self.jet(x).2;
        h[0] + h[3]
    }
}

/// Log-conformal factor `σ` with gradient and Hessian (row-major `n x n`).
#[derive(Debug, Clone)]
pub struct ConformalJet {
    pub sigma: f64,
    pub grad: Vec<f64>,
    pub hess: Vec<f64>,
}

/// Metric tensor, its inverse, and the Riemannian volume weight `sqrt(det g)`.
#[derive(Debug, Clone)]
pub struct MetricData {
    pub g: DMatrix<f64>,
    pub g_inv: DMatrix<f64>,
    pub vol_weight: f64,
}

/// Coefficients of the chart generator `g^{ij} ∂_ij f + c^k ∂_k f` of `Δ_g`.
#[derive(Debug, Clone)]
pub struct GeneratorCoeffs {
    pub diffusion: DMatrix<f64>,
    /// `-g^{ij} Γ^k_{ij}`
    pub drift_correction: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvatureData {
    pub scalar: f64,
    pub ricci: Option<f64>,
    /// Uniform bound `K2 >= 0` with `Ric >= -K2 g` on the whole manifold.
    pub ricci_lower_bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoincareDisk {
    dim: usize,
    r_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlatTorus {
    periods: Vec<f64>,
}

/// Two dimensional torus with metric `e^{2φ} δ`.
#[derive(Debug, Clone)]
pub struct ConformalTorus {
    periods: [f64; 2],
    phi: FourierPotential,
    lattice: Arc<DistanceLattice>,
    ricci_lower_bound: f64,
}

/// A model manifold in one global chart.
#[derive(Debug, Clone)]
pub enum ChartGeometry {
    PoincareDisk(PoincareDisk),
    FlatTorus(FlatTorus),
    ConformalTorus(ConformalTorus),
}

pub const DEFAULT_R_MAX: f64 = 0.95;

impl ChartGeometry {
    pub fn poincare_disk(dim: usize, r_max: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter {
                name: "dim",
                reason: "dimension must be positive".into(),
            });
        }
        if !(r_max > 0.0 && r_max < 1.0) {
            return Err(Error::InvalidParameter {
                name: "r_max",
                reason: format!("truncation radius must lie in (0, 1), got {r_max}"),
            });
        }
        Ok(Self::PoincareDisk(PoincareDisk { dim, r_max }))
    }

    pub fn flat_torus(periods: Vec<f64>) -> Result<Self> {
        if periods.is_empty() || periods.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::InvalidParameter {
                name: "periods",
                reason: format!("torus periods must be positive, got {periods:?}"),
            });
        }
        Ok(Self::FlatTorus(FlatTorus { periods }))
    }

    /// `lattice` is the number of nodes per axis of the shortest-path
    /// lattice used for distances.
    pub fn conformal_torus(
        periods: [f64; 2],
        modes: Vec<FourierMode>,
        lattice: usize,
    ) -> Result<Self> {
        if periods.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::InvalidParameter {
                name: "periods",
                reason: format!("torus periods must be positive, got {periods:?}"),
            });
        }
        if lattice < 8 {
            return Err(Error::InvalidParameter {
                name: "distance_lattice",
                reason: format!("need at least 8 lattice nodes per axis, got {lattice}"),
            });
        }
        let phi = FourierPotential::new(modes, periods);
        let lattice = Arc::new(DistanceLattice::new(&phi, periods, lattice));
        // Gaussian curvature K = -e^{-2φ} Δφ sampled on a fine lattice.
        let samples = 128;
        let mut min_k = 0.0f64;
        for i in 0..samples {
            for j in 0..samples {
                let x = [
                    periods[0] * i as f64 / samples as f64,
                    periods[1] * j as f64 / samples as f64,
                ];
                let (p, _, h) = phi.jet(&x);
                let k = -(-2.0 * p).exp() * (h[0] + h[3]);
                min_k = min_k.min(k);
            }
        }
        Ok(Self::ConformalTorus(ConformalTorus {
            periods,
            phi,
            lattice,
            ricci_lower_bound: -min_k,
        }))
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::PoincareDisk(d) => d.dim,
            Self::FlatTorus(t) => t.periods.len(),
            Self::ConformalTorus(_) => 2,
        }
    }

    pub fn is_periodic(&self) -> bool {
        !matches!(self, Self::PoincareDisk(_))
    }

    /// Periods of a torus, `None` for the disk.
    pub fn periods(&self) -> Option<Vec<f64>> {
        match self {
            Self::PoincareDisk(_) => None,
            Self::FlatTorus(t) => Some(t.periods.clone()),
            Self::ConformalTorus(t) => Some(t.periods.to_vec()),
        }
    }

    pub fn r_max(&self) -> Option<f64> {
        match self {
            Self::PoincareDisk(d) => Some(d.r_max),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::PoincareDisk(_) => "poincare-disk",
            Self::FlatTorus(_) => "flat-torus",
            Self::ConformalTorus(_) => "conformal-torus",
        }
    }

    pub fn potential(&self) -> Option<&FourierPotential> {
        match self {
            Self::ConformalTorus(t) => Some(&t.phi),
            _ => None,
        }
    }

    /// Checks that `x` is an admissible chart point.
    pub fn check_point(&self, x: &[f64]) -> Result<()> {
        let n = self.dim();
        if x.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::OutsideDomain {
                point: x.to_vec(),
                reason: "non-finite coordinate".into(),
            });
        }
        if let Self::PoincareDisk(d) = self {
            let r2 = norm_sq(x);
            if r2 >= 1.0 {
                return Err(Error::NonFiniteMetric { point: x.to_vec() });
            }
            if r2 >= d.r_max * d.r_max {
                return Err(Error::OutsideDomain {
                    point: x.to_vec(),
                    reason: format!("|x| = {} >= r_max = {}", r2.sqrt(), d.r_max),
                });
            }
        }
        Ok(())
    }

    /// Reduces a torus point into the fundamental box; identity on the disk.
    pub fn wrap(&self, x: &mut [f64]) {
        if let Some(periods) = self.periods() {
            for (xi, l) in x.iter_mut().zip(periods) {
                *xi = xi.rem_euclid(l);
                if *xi >= l {
                    *xi = 0.0;
                }
            }
        }
    }

    /// Chart displacement `y - x`, taking the shortest periodic image on tori.
    pub fn chart_difference(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        match self.periods() {
            Some(periods) => x
                .iter()
                .zip(y)
                .zip(periods)
                .map(|((a, b), l)| {
                    let d = b - a;
                    d - l * (d / l).round()
                })
                .collect(),
            None => y.iter().zip(x).map(|(b, a)| b - a).collect(),
        }
    }

    /// `σ = log λ` together with its gradient and Hessian, without domain checks.
    pub fn conformal_jet(&self, x: &[f64]) -> ConformalJet {
        let n = self.dim();
        match self {
            Self::PoincareDisk(_) => {
                let s = 1.0 - norm_sq(x);
                let grad = x.iter().map(|&xi| 2.0 * xi / s).collect();
                let mut hess = vec![0.0; n * n];
                for i in 0..n {
                    for j in 0..n {
                        let delta = if i == j { 2.0 / s } else { 0.0 };
                        hess[i * n + j] = delta + 4.0 * x[i] * x[j] / (s * s);
                    }
                }
                ConformalJet {
                    sigma: (2.0 / s).ln(),
                    grad,
                    hess,
                }
            }
            Self::FlatTorus(_) => ConformalJet {
                sigma: 0.0,
                grad: vec![0.0; n],
                hess: vec![0.0; n * n],
            },
            Self::ConformalTorus(t) => {
                let (v, g, h) = t.phi.jet(x);
                ConformalJet {
                    sigma: v,
                    grad: g.to_vec(),
                    hess: h.to_vec(),
                }
            }
        }
    }

    /// Conformal factor `λ` with `g = λ^2 δ` (no domain checks).
    pub fn conformal_factor(&self, x: &[f64]) -> f64 {
        match self {
            Self::PoincareDisk(_) => 2.0 / (1.0 - norm_sq(x)),
            Self::FlatTorus(_) => 1.0,
            Self::ConformalTorus(t) => t.phi.value(x).exp(),
        }
    }

    /// `sqrt(det g) = λ^n` (no domain checks).
    pub fn volume_weight(&self, x: &[f64]) -> f64 {
        self.conformal_factor(x).powi(self.dim() as i32)
    }

    pub fn metric_data_at(&self, x: &[f64]) -> Result<MetricData> {
        self.check_point(x)?;
        let n = self.dim();
        let lambda = self.conformal_factor(x);
        let l2 = lambda * lambda;
        Ok(MetricData {
            g: DMatrix::identity(n, n) * l2,
            g_inv: DMatrix::identity(n, n) / l2,
            vol_weight: lambda.powi(n as i32),
        })
    }

    /// Christoffel symbols `Γ^k_{ij}` stored at `[(k * n + i) * n + j]`.
    pub fn christoffel(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let jet = self.conformal_jet(x);
        let s = &jet.grad;
        let mut gamma = vec![0.0; n * n * n];
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let mut v = 0.0;
                    if i == k {
                        v += s[j];
                    }
                    if j == k {
                        v += s[i];
                    }
                    if i == j {
                        v -= s[k];
                    }
                    gamma[(k * n + i) * n + j] = v;
                }
            }
        }
        gamma
    }

    pub fn generator_coeffs_at(&self, x: &[f64]) -> Result<GeneratorCoeffs> {
        self.check_point(x)?;
        let n = self.dim();
        let jet = self.conformal_jet(x);
        let inv_l2 = (-2.0 * jet.sigma).exp();
        // For g = e^{2σ} δ: g^{ij} Γ^k_{ij} = (2 - n) e^{-2σ} ∂_k σ.
        let drift_correction = jet
            .grad
            .iter()
            .map(|&sk| (n as f64 - 2.0) * inv_l2 * sk)
            .collect();
        Ok(GeneratorCoeffs {
            diffusion: DMatrix::identity(n, n) * inv_l2,
            drift_correction,
        })
    }

    /// `|∇u|^2_g = g^{ij} p_i p_j` for a chart covector `p`.
    pub fn grad_norm_sq_at(&self, x: &[f64], p: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        if p.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: p.len(),
            });
        }
        let l = self.conformal_factor(x);
        Ok(norm_sq(p) / (l * l))
    }

    /// `g_x(v, v)` for a chart vector `v`.
    pub fn norm_sq_at(&self, x: &[f64], v: &[f64]) -> f64 {
        let l = self.conformal_factor(x);
        l * l * norm_sq(v)
    }

    pub fn geodesic_distance(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        self.check_point(y)?;
        Ok(self.distance_unchecked(x, y))
    }

    /// Geodesic distance without admissibility checks (callers guarantee it).
    pub fn distance_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            Self::PoincareDisk(_) => {
                let diff: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                if diff == 0.0 {
                    return 0.0;
                }
                let denom = ((1.0 - norm_sq(x)) * (1.0 - norm_sq(y))).sqrt();
                2.0 * (diff.sqrt() / denom).asinh()
            }
            Self::FlatTorus(_) => norm_sq(&self.chart_difference(x, y)).sqrt(),
            Self::ConformalTorus(t) => t.lattice.distance(x, y),
        }
    }

    /// Distances from `x` to each of `targets`; entries farther than `cutoff`
    /// are reported as `f64::INFINITY`.
    ///
    /// Gives the same values as [`Self::distance_unchecked`], but the
    /// conformal torus runs one truncated search instead of one per target.
    pub fn distances_within(&self, x: &[f64], targets: &[&[f64]], cutoff: f64) -> Vec<f64> {
        let clip = |d: f64| if d <= cutoff { d } else { f64::INFINITY };
        match self {
            Self::ConformalTorus(t) => t.lattice.distances_within(x, targets, cutoff),
            _ => targets
                .iter()
                .map(|y| clip(self.distance_unchecked(x, y)))
                .collect(),
        }
    }

    /// Upper bound on `λ` over the domain (used for Lipschitz estimates).
    pub fn conformal_factor_bounds(&self) -> (f64, f64) {
        match self {
            Self::PoincareDisk(d) => (2.0, 2.0 / (1.0 - d.r_max * d.r_max)),
            Self::FlatTorus(_) => (1.0, 1.0),
            Self::ConformalTorus(t) => (t.lattice.lambda_min, t.lattice.lambda_max),
        }
    }

    pub fn curvature_data_at(&self, x: &[f64], v: Option<&[f64]>) -> Result<CurvatureData> {
        self.check_point(x)?;
        let n = self.dim();
        let nf = n as f64;
        let jet = self.conformal_jet(x);
        let inv_l2 = (-2.0 * jet.sigma).exp();
        let s = &jet.grad;
        let grad_sq = norm_sq(s);
        let lap: f64 = (0..n).map(|i| jet.hess[i * n + i]).sum();
        let scalar = inv_l2 * (-2.0 * (nf - 1.0) * lap - (nf - 2.0) * (nf - 1.0) * grad_sq);
        let ricci = match v {
            None => None,
            Some(v) => {
                if v.len() != n {
                    return Err(Error::DimensionMismatch {
                        expected: n,
                        got: v.len(),
                    });
                }
                let nrm = self.norm_sq_at(x, v);
                if (nrm - 1.0).abs() > 1e-10 {
                    return Err(Error::NonUnitVector { norm_sq: nrm });
                }
                // Ric_ij = -(n-2)(σ_ij - σ_i σ_j) - (Δσ + (n-2)|∇σ|^2) δ_ij
                let mut ric = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        let mut rij = -(nf - 2.0) * (jet.hess[i * n + j] - s[i] * s[j]);
                        if i == j {
                            rij -= lap + (nf - 2.0) * grad_sq;
                        }
                        ric += rij * v[i] * v[j];
                    }
                }
                Some(ric)
            }
        };
        let ricci_lower_bound = match self {
            Self::PoincareDisk(_) => nf - 1.0,
            Self::FlatTorus(_) => 0.0,
            Self::ConformalTorus(t) => t.ricci_lower_bound.max(0.0),
        };
        Ok(CurvatureData {
            scalar,
            ricci,
            ricci_lower_bound,
        })
    }

    /// Scalar curvature without domain checks.
    pub fn scalar_curvature(&self, x: &[f64]) -> f64 {
        let n = self.dim();
        let nf = n as f64;
        let jet = self.conformal_jet(x);
        let lap: f64 = (0..n).map(|i| jet.hess[i * n + i]).sum();
        (-2.0 * jet.sigma).exp()
            * (-2.0 * (nf - 1.0) * lap - (nf - 2.0) * (nf - 1.0) * norm_sq(&jet.grad))
    }

    /// Exponential map `Exp_x(v)` for a chart tangent vector `v`.
    pub fn exp_map(&self, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        let y = match self {
            Self::PoincareDisk(_) => {
                let vn = norm_sq(v).sqrt();
                if vn == 0.0 {
                    return Ok(x.to_vec());
                }
                let lambda = 2.0 / (1.0 - norm_sq(x));
                let t = (0.5 * lambda * vn).tanh();
                let w: Vec<f64> = v.iter().map(|vi| vi * t / vn).collect();
                mobius_add(x, &w)
            }
            Self::FlatTorus(_) => {
                let mut y: Vec<f64> = x.iter().zip(v).map(|(a, b)| a + b).collect();
                self.wrap(&mut y);
                y
            }
            Self::ConformalTorus(_) => {
                let mut y = self.integrate_geodesic(x, v, 512);
                self.wrap(&mut y);
                y
            }
        };
        self.check_point(&y)?;
        Ok(y)
    }

    /// RK4 integration of `ẍ^k = -Γ^k_ij ẋ^i ẋ^j` over unit time.
    fn integrate_geodesic(&self, x: &[f64], v: &[f64], steps: usize) -> Vec<f64> {
        let n = self.dim();
        let accel = |p: &[f64], q: &[f64]| -> Vec<f64> {
            let s = self.conformal_jet(p).grad;
            let sv: f64 = s.iter().zip(q).map(|(a, b)| a * b).sum();
            let qq = norm_sq(q);
            (0..n).map(|k| -(2.0 * q[k] * sv - qq * s[k])).collect()
        };
        let h = 1.0 / steps as f64;
        let mut p = x.to_vec();
        let mut q = v.to_vec();
        for _ in 0..steps {
            let k1p = q.clone();
            let k1q = accel(&p, &q);
            let p2: Vec<f64> = (0..n).map(|i| p[i] + 0.5 * h * k1p[i]).collect();
            let q2: Vec<f64> = (0..n).map(|i| q[i] + 0.5 * h * k1q[i]).collect();
            let k2q = accel(&p2, &q2);
            let p3: Vec<f64> = (0..n).map(|i| p[i] + 0.5 * h * q2[i]).collect();
            let q3: Vec<f64> = (0..n).map(|i| q[i] + 0.5 * h * k2q[i]).collect();
            let k3q = accel(&p3, &q3);
            let p4: Vec<f64> = (0..n).map(|i| p[i] + h * q3[i]).collect();
            let q4: Vec<f64> = (0..n).map(|i| q[i] + h * k3q[i]).collect();
            let k4q = accel(&p4, &q4);
            for i in 0..n {
                p[i] += h / 6.0 * (k1p[i] + 2.0 * q2[i] + 2.0 * q3[i] + q4[i]);
                q[i] += h / 6.0 * (k1q[i] + 2.0 * k2q[i] + 2.0 * k3q[i] + k4q[i]);
            }
        }
        p
    }

    /// Largest geodesic distance between two admissible points, or an upper bound.
    pub fn diameter_bound(&self) -> f64 {
        match self {
            Self::PoincareDisk(d) => {
                let mut a = vec![0.0; d.dim];
                let mut b = vec![0.0; d.dim];
                a[0] = d.r_max;
                b[0] = -d.r_max;
                self.distance_unchecked(&a, &b)
            }
            Self::FlatTorus(t) => 0.5 * norm_sq(&t.periods).sqrt(),
            Self::ConformalTorus(t) => 0.5 * t.lattice.lambda_max * norm_sq(&t.periods).sqrt(),
        }
    }
}

pub(crate) fn norm_sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn mobius_add(x: &[f64], y: &[f64]) -> Vec<f64> {
    let xy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let x2 = norm_sq(x);
    let y2 = norm_sq(y);
    let den = 1.0 + 2.0 * xy + x2 * y2;
    x.iter()
        .zip(y)
        .map(|(a, b)| ((1.0 + 2.0 * xy + y2) * a + (1.0 - x2) * b) / den)
        .collect()
}

/// 8-connected periodic lattice carrying the shortest-path metric of a
/// conformal torus.
///
/// Query points attach to the four corners of their cell with weight
/// `Λ_cell |x - c|`, where `Λ_cell` bounds `λ` on the cell from above. Every
/// lattice edge inside a cell is no longer than `Λ_cell` times its Euclidean
/// length, so paths through an intermediate query point can always be
/// shortcut through the lattice and the triangle inequality holds exactly.
#[derive(Debug)]
pub struct DistanceLattice {
    m: usize,
    periods: [f64; 2],
    h: [f64; 2],
    /// Edge weights per node: +x, +y, +x+y, +x-y.
    edges: Vec<[f64; 4]>,
    cell_max: Vec<f64>,
    lambda_min: f64,
    lambda_max: f64,
}

#[derive(PartialEq)]
struct HeapItem {
    key: f64,
    dist: f64,
    node: usize,
}

impl Eq for HeapItem {}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .key
            .total_cmp(&self.key)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl DistanceLattice {
    fn new(phi: &FourierPotential, periods: [f64; 2], m: usize) -> Self {
        let h = [periods[0] / m as f64, periods[1] / m as f64];
        let lam = |a: f64, b: f64| phi.value(&[a, b]).exp();
        let mut edges = Vec::with_capacity(m * m);
        let mut cell_max = Vec::with_capacity(m * m);
        let mut lambda_min = f64::INFINITY;
        let mut lambda_max = 0.0f64;
        let diag = (h[0] * h[0] + h[1] * h[1]).sqrt();
        for i in 0..m {
            for j in 0..m {
                let x = i as f64 * h[0];
                let y = j as f64 * h[1];
                let ex = lam(x + 0.5 * h[0], y) * h[0];
                let ey = lam(x, y + 0.5 * h[1]) * h[1];
                let exy = lam(x + 0.5 * h[0], y + 0.5 * h[1]) * diag;
                let exmy = lam(x + 0.5 * h[0], y - 0.5 * h[1]) * diag;
                edges.push([ex, ey, exy, exmy]);
                // cell [x, x+h0] x [y, y+h1]: corners, edge midpoints, centre
                let mut cmax = 0.0f64;
                for a in 0..3 {
                    for b in 0..3 {
                        let v = lam(x + 0.5 * a as f64 * h[0], y + 0.5 * b as f64 * h[1]);
                        cmax = cmax.max(v);
                        lambda_min = lambda_min.min(v);
                        lambda_max = lambda_max.max(v);
                    }
                }
                cell_max.push(cmax);
            }
        }
        Self {
            m,
            periods,
            h,
            edges,
            cell_max,
            lambda_min,
            lambda_max,
        }
    }

    fn idx(&self, i: isize, j: isize) -> usize {
        let m = self.m as isize;
        (i.rem_euclid(m) * m + j.rem_euclid(m)) as usize
    }

    fn coords(&self, node: usize) -> [f64; 2] {
        [
            (node / self.m) as f64 * self.h[0],
            (node % self.m) as f64 * self.h[1],
        ]
    }

    fn wrapped_len(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut s = 0.0;
        for k in 0..2 {
            let d = b[k] - a[k];
            let d = d - self.periods[k] * (d / self.periods[k]).round();
            s += d * d;
        }
        s.sqrt()
    }

    /// Cell index and the four corner nodes of the cell containing `x`.
    fn cell(&self, x: &[f64]) -> (usize, [usize; 4]) {
        let i = (x[0].rem_euclid(self.periods[0]) / self.h[0]).floor() as isize;
        let j = (x[1].rem_euclid(self.periods[1]) / self.h[1]).floor() as isize;
        let c = self.idx(i, j);
        (
            c,
            [
                c,
                self.idx(i + 1, j),
                self.idx(i, j + 1),
                self.idx(i + 1, j + 1),
            ],
        )
    }

    fn neighbors(&self, node: usize) -> [(usize, f64); 8] {
        let i = (node / self.m) as isize;
        let j = (node % self.m) as isize;
        let e = &self.edges;
        let w = e[node];
        let left = self.idx(i - 1, j);
        let down = self.idx(i, j - 1);
        let ld = self.idx(i - 1, j - 1);
        let lu = self.idx(i - 1, j + 1);
        [
            (self.idx(i + 1, j), w[0]),
            (self.idx(i, j + 1), w[1]),
            (self.idx(i + 1, j + 1), w[2]),
            (self.idx(i + 1, j - 1), w[3]),
            (left, e[left][0]),
            (down, e[down][1]),
            (ld, e[ld][2]),
            (lu, e[lu][3]),
        ]
    }

    fn distances_within(&self, x: &[f64], targets: &[&[f64]], cutoff: f64) -> Vec<f64> {
        let (cx, corners_x) = self.cell(x);
        let lx = self.cell_max[cx];
        let mut dist = HashMap::new();
        let mut heap = BinaryHeap::new();
        for &c in &corners_x {
            let d = lx * self.wrapped_len(x, &self.coords(c));
            if d < *dist.get(&c).unwrap_or(&f64::INFINITY) {
                dist.insert(c, d);
                heap.push(HeapItem {
                    key: d,
                    dist: d,
                    node: c,
                });
            }
        }
        while let Some(HeapItem { dist: d, node, .. }) = heap.pop() {
            if d > cutoff {
                break;
            }
            if d > dist[&node] {
                continue;
            }
            for (nb, w) in self.neighbors(node) {
                let nd = d + w;
                if nd < *dist.get(&nb).unwrap_or(&f64::INFINITY) {
                    dist.insert(nb, nd);
                    heap.push(HeapItem {
                        key: nd,
                        dist: nd,
                        node: nb,
                    });
                }
            }
        }
        targets
            .iter()
            .map(|y| {
                if *y == x {
                    return 0.0;
                }
                let (cy, corners_y) = self.cell(y);
                let ly = self.cell_max[cy];
                let mut best = if cy == cx {
                    lx * self.wrapped_len(x, y)
                } else {
                    f64::INFINITY
                };
                for c in corners_y {
                    if let Some(&d) = dist.get(&c) {
                        if d <= cutoff {
                            best = best.min(d + ly * self.wrapped_len(&self.coords(c), y));
                        }
                    }
                }
                if best <= cutoff {
                    best
                } else {
                    f64::INFINITY
                }
            })
            .collect()
    }

    fn distance(&self, x: &[f64], y: &[f64]) -> f64 {
        if x == y {
            return 0.0;
        }
        let (cx, corners_x) = self.cell(x);
        let (cy, corners_y) = self.cell(y);
        let lx = self.cell_max[cx];
        let ly = self.cell_max[cy];
        let mut best = f64::INFINITY;
        if cx == cy {
            best = lx * self.wrapped_len(x, y);
        }
        let target_weight = |node: usize| -> Option<f64> {
            corners_y
                .iter()
                .any(|&c| c == node)
                .then(|| ly * self.wrapped_len(&self.coords(node), y))
        };
        let heuristic = |node: usize| self.lambda_min * self.wrapped_len(&self.coords(node), y);
        let mut dist = vec![f64::INFINITY; self.m * self.m];
        let mut heap = BinaryHeap::new();
        for &c in &corners_x {
            let d = lx * self.wrapped_len(x, &self.coords(c));
            if d < dist[c] {
                dist[c] = d;
                heap.push(HeapItem {
                    key: d + heuristic(c),
                    dist: d,
                    node: c,
                });
            }
        }
        while let Some(HeapItem { key, dist: d, node }) = heap.pop() {
            if key >= best {
                break;
            }
            if d > dist[node] {
                continue;
            }
            if let Some(tw) = target_weight(node) {
                best = best.min(d + tw);
            }
            for (nb, w) in self.neighbors(node) {
                let nd = d + w;
                if nd < dist[nb] {
                    dist[nb] = nd;
                    heap.push(HeapItem {
                        key: nd + heuristic(nb),
                        dist: nd,
                        node: nb,
                    });
                }
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn disk() -> ChartGeometry {
        ChartGeometry::poincare_disk(2, 0.95).unwrap()
    }

    fn bumpy_torus(lattice: usize) -> ChartGeometry {
        ChartGeometry::conformal_torus(
            [1.0, 1.0],
            vec![
                FourierMode {
                    k: [1, 0],
                    cos: 0.3,
                    sin: 0.0,
                },
                FourierMode {
                    k: [0, 1],
                    cos: 0.0,
                    sin: 0.2,
                },
            ],
            lattice,
        )
        .unwrap()
    }

    #[test]
    fn disk_metric_at_origin_and_half() {
        let g = disk();
        let m = g.metric_data_at(&[0.0, 0.0]).unwrap();
        assert_relative_eq!(m.g[(0, 0)], 4.0);
        assert_relative_eq!(m.g[(0, 1)], 0.0);
        assert_relative_eq!(m.vol_weight, 4.0);
        let m = g.metric_data_at(&[0.5, 0.0]).unwrap();
        assert_relative_eq!(m.g[(0, 0)], 4.0 / 0.5625, epsilon = 1e-12);
        assert_relative_eq!(m.g[(1, 1)], 7.111111111111111, epsilon = 1e-12);
        let prod = &m.g * &m.g_inv;
        assert!((prod - DMatrix::<f64>::identity(2, 2)).amax() < 1e-12);
        assert_relative_eq!(m.vol_weight, (2.0f64 / 0.75).powi(2), epsilon = 1e-12);
    }

    #[test]
    fn flat_torus_metric_is_identity() {
        let t = ChartGeometry::flat_torus(vec![1.0, 1.0]).unwrap();
        let m = t.metric_data_at(&[0.3, 0.7]).unwrap();
        assert_eq!(m.g, DMatrix::identity(2, 2));
        assert_eq!(m.vol_weight, 1.0);
        assert!(t.christoffel(&[0.3, 0.7]).iter().all(|&c| c == 0.0));
    }

    #[test]
    fn disk_rejects_boundary_points() {
        let g = disk();
        assert!(matches!(
            g.metric_data_at(&[1.0, 0.0]),
            Err(Error::NonFiniteMetric { .. })
        ));
        assert!(matches!(
            g.metric_data_at(&[0.96, 0.0]),
            Err(Error::OutsideDomain { .. })
        ));
    }

    #[test]
    fn generator_coefficients_match_expanded_disk_formula() {
        for n in [2usize, 3, 4] {
            let g = ChartGeometry::poincare_disk(n, 0.95).unwrap();
            let mut x = vec![0.0; n];
            x[0] = 0.3;
            x[n - 1] += -0.2;
            let c = g.generator_coeffs_at(&x).unwrap();
            let s = 1.0 - norm_sq(&x);
            for k in 0..n {
                let expected = (n as f64 - 2.0) * s / 2.0 * x[k];
                assert!((c.drift_correction[k] - expected).abs() < 1e-12);
                assert!((c.diffusion[(k, k)] - s * s / 4.0).abs() < 1e-12);
            }
        }
        let c = disk().generator_coeffs_at(&[0.4, -0.1]).unwrap();
        assert!(c.drift_correction.iter().all(|v| v.abs() < 1e-15));
        let flat_phi = ChartGeometry::conformal_torus([1.0, 1.0], vec![], 16).unwrap();
        let c = flat_phi.generator_coeffs_at(&[0.2, 0.9]).unwrap();
        assert_eq!(c.diffusion, DMatrix::identity(2, 2));
        assert!(c.drift_correction.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_norms() {
        let g = disk();
        assert_relative_eq!(g.grad_norm_sq_at(&[0.0, 0.0], &[1.0, 0.0]).unwrap(), 0.25);
        assert_relative_eq!(
            g.grad_norm_sq_at(&[0.5, 0.0], &[2.0, 0.0]).unwrap(),
            0.5625,
            epsilon = 1e-14
        );
        let t = ChartGeometry::flat_torus(vec![1.0, 1.0]).unwrap();
        assert_relative_eq!(t.grad_norm_sq_at(&[0.1, 0.1], &[3.0, 4.0]).unwrap(), 25.0);
        assert_eq!(t.grad_norm_sq_at(&[0.1, 0.1], &[0.0, 0.0]).unwrap(), 0.0);
    }

    /// Composite Simpson integral of the line element 2/(1-s^2) along the diameter.
    fn radial_length(r: f64) -> f64 {
        let n = 2000;
        let h = r / n as f64;
        let f = |s: f64| 2.0 / (1.0 - s * s);
        let mut acc = f(0.0) + f(r);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * f(i as f64 * h);
        }
        acc * h / 3.0
    }

    #[test]
    fn disk_distance_matches_line_element_quadrature() {
        let oracle = radial_length(0.5);
        assert!((oracle - 3.0f64.ln()).abs() < 1e-10);
        let d = disk().geodesic_distance(&[0.0, 0.0], &[0.5, 0.0]).unwrap();
        assert!((d - oracle).abs() < 1e-10);
        assert_eq!(disk().geodesic_distance(&[0.3, 0.2], &[0.3, 0.2]).unwrap(), 0.0);
    }

    #[test]
    fn torus_distance_wraps() {
        let t = ChartGeometry::flat_torus(vec![1.0, 1.0]).unwrap();
        let d = t.geodesic_distance(&[0.1, 0.0], &[0.9, 0.0]).unwrap();
        assert!((d - 0.2).abs() < 1e-12);
    }

    fn triangle_check(g: &ChartGeometry, samples: usize, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = g.dim();
        let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            match g {
                ChartGeometry::PoincareDisk(d) => loop {
                    let p: Vec<f64> = (0..n).map(|_| rng.random_range(-d.r_max..d.r_max)).collect();
                    if norm_sq(&p) < d.r_max * d.r_max {
                        break p;
                    }
                },
                _ => g
                    .periods()
                    .unwrap()
                    .iter()
                    .map(|&l| rng.random_range(0.0..l))
                    .collect(),
            }
        };
        for _ in 0..samples {
            let x = draw(&mut rng);
            let y = draw(&mut rng);
            let z = draw(&mut rng);
            let dxy = g.geodesic_distance(&x, &y).unwrap();
            let dyx = g.geodesic_distance(&y, &x).unwrap();
            let dxz = g.geodesic_distance(&x, &z).unwrap();
            let dzy = g.geodesic_distance(&z, &y).unwrap();
            assert!((dxy - dyx).abs() <= 1e-9 * (1.0 + dxy), "asymmetric {dxy} {dyx}");
            assert!(dxy <= dxz + dzy + 1e-9, "triangle: {dxy} > {dxz} + {dzy}");
            assert!(dxy > 0.0);
        }
    }

    #[test]
    fn triangle_inequality_on_random_triples() {
        triangle_check(&disk(), 10_000, 1);
        triangle_check(&ChartGeometry::flat_torus(vec![1.0, 2.0]).unwrap(), 10_000, 2);
        triangle_check(&bumpy_torus(64), 10_000, 3);
    }

    #[test]
    fn conformal_distance_converges_on_constant_factor() {
        // φ ≡ log 2 scales all lengths by 2.
        let g = ChartGeometry::conformal_torus(
            [1.0, 1.0],
            vec![FourierMode {
                k: [0, 0],
                cos: 2f64.ln(),
                sin: 0.0,
            }],
            64,
        )
        .unwrap();
        // axis-aligned and diagonal directions are exact on the 8-lattice
        let d = g.geodesic_distance(&[0.125, 0.125], &[0.375, 0.125]).unwrap();
        assert!((d - 0.5).abs() < 1e-9, "{d}");
        let d = g.geodesic_distance(&[0.125, 0.125], &[0.3125, 0.3125]).unwrap();
        assert!((d - 2.0 * 0.1875 * 2f64.sqrt()).abs() < 1e-9, "{d}");
        // off-lattice points are within the lattice resolution
        let d = g.geodesic_distance(&[0.1, 0.1], &[0.35, 0.1]).unwrap();
        assert!((d - 0.5).abs() < 4.0 / 64.0, "{d}");
    }

    /// Gaussian curvature by Brioschi's formula for an orthogonal metric
    /// E = G = g_11, evaluated by central finite differences of the metric alone.
    fn brioschi_curvature(g: &ChartGeometry, x: &[f64]) -> f64 {
        let k1 = brioschi_step(g, x, 2e-3);
        let k2 = brioschi_step(g, x, 1e-3);
        (4.0 * k2 - k1) / 3.0
    }

    fn brioschi_step(g: &ChartGeometry, x: &[f64], h: f64) -> f64 {
        let e = |a: f64, b: f64| g.metric_data_at(&[a, b]).unwrap().g[(0, 0)];
        let (u, v) = (x[0], x[1]);
        let sqrt_eg = e(u, v);
        let d_u = |f: &dyn Fn(f64, f64) -> f64, a: f64, b: f64| (f(a + h, b) - f(a - h, b)) / (2.0 * h);
        let d_v = |f: &dyn Fn(f64, f64) -> f64, a: f64, b: f64| (f(a, b + h) - f(a, b - h)) / (2.0 * h);
        // K = -1/(2 sqrt(EG)) [ ∂_u (G_u / sqrt(EG)) + ∂_v (E_v / sqrt(EG)) ]
        let gu_over = |a: f64, b: f64| d_u(&e, a, b) / e(a, b);
        let ev_over = |a: f64, b: f64| d_v(&e, a, b) / e(a, b);
        -(d_u(&gu_over, u, v) + d_v(&ev_over, u, v)) / (2.0 * sqrt_eg)
    }

    #[test]
    fn disk_curvature_matches_finite_difference_oracle() {
        let g = disk();
        for x in [[0.0, 0.0], [0.3, -0.4], [0.6, 0.1]] {
            let k = brioschi_curvature(&g, &x);
            assert!((k + 1.0).abs() < 1e-4, "oracle K = {k}");
            let lam = g.conformal_factor(&x);
            let v = [1.0 / lam, 0.0];
            let c = g.curvature_data_at(&x, Some(&v)).unwrap();
            assert_relative_eq!(c.scalar, -2.0, epsilon = 1e-10);
            assert_relative_eq!(c.ricci.unwrap(), -1.0, epsilon = 1e-10);
            assert_eq!(c.ricci_lower_bound, 1.0);
        }
    }

    #[test]
    fn conformal_torus_curvature_formula() {
        let g = bumpy_torus(16);
        for x in [[0.1, 0.2], [0.7, 0.4]] {
            let oracle = brioschi_curvature(&g, &x);
            let c = g.curvature_data_at(&x, None).unwrap();
            let rel = (c.scalar - 2.0 * oracle).abs() / c.scalar.abs().max(1.0);
            assert!(rel < 1e-4, "{} {}", c.scalar, 2.0 * oracle);
            let phi = g.potential().unwrap();
            let expected = -2.0 * (-2.0 * phi.value(&x)).exp() * phi.laplacian(&x);
            assert_relative_eq!(c.scalar, expected, epsilon = 1e-12);
        }
        let flat = ChartGeometry::flat_torus(vec![1.0, 1.0]).unwrap();
        let c = flat.curvature_data_at(&[0.5, 0.5], Some(&[1.0, 0.0])).unwrap();
        assert_eq!((c.scalar, c.ricci.unwrap()), (0.0, 0.0));
        let constant = ChartGeometry::conformal_torus(
            [1.0, 1.0],
            vec![FourierMode {
                k: [0, 0],
                cos: 0.7,
                sin: 0.0,
            }],
            16,
        )
        .unwrap();
        let lam = 0.7f64.exp();
        let c = constant.curvature_data_at(&[0.5, 0.5], Some(&[1.0 / lam, 0.0])).unwrap();
        assert_eq!(c.scalar, 0.0);
        assert_eq!(c.ricci.unwrap(), 0.0);
    }

    #[test]
    fn curvature_rejects_non_unit_direction() {
        assert!(matches!(
            disk().curvature_data_at(&[0.0, 0.0], Some(&[1.0, 0.0])),
            Err(Error::NonUnitVector { .. })
        ));
    }

    #[test]
    fn exp_map_travels_geodesic_distance() {
        let g = disk();
        let x = [0.2, -0.3];
        let lam = g.conformal_factor(&x);
        let v = [0.35 / lam, 0.2 / lam];
        let len = (0.35f64.powi(2) + 0.2f64.powi(2)).sqrt();
        let y = g.exp_map(&x, &v).unwrap();
        assert!((g.geodesic_distance(&x, &y).unwrap() - len).abs() < 1e-12);

        // numerical integrator agrees with the closed form on the disk
        let y_rk = g.integrate_geodesic(&x, &v, 512);
        assert!(y.iter().zip(&y_rk).all(|(a, b)| (a - b).abs() < 1e-10));
    }
}
