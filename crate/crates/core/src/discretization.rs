//! Tensor grids in chart coordinates and the finite-volume operators built on them.
//!
//! Every operator is assembled so that the discrete identities used by the
//! solvers hold to rounding error:
//!
//! * the Laplace-Beltrami operator is `L = W^{-1} S` with `S` symmetric and
//!   annihilating constants, so `L` is self-adjoint for the volume inner
//!   product `<u, v> = Σ w_i u_i v_i`;
//! * the gradient-form advection `A(B)` is an upwind Markov generator (rows
//!   sum to zero, nonnegative off-diagonals);
//! * the divergence-form advection is `-W^{-1} A^T W`, so its volume integral
//!   vanishes identically and it is exactly the negative adjoint of `A`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{norm_sq, ChartGeometry, FourierMode, FourierPotential};
use crate::linalg::CsrMatrix;

const NONE: usize = usize::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldKind {
    Value,
    Density,
}

/// One scalar per grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteField {
    pub kind: FieldKind,
    pub values: Vec<f64>,
}

impl DiscreteField {
    pub fn value(values: Vec<f64>) -> Self {
        Self {
            kind: FieldKind::Value,
            values,
        }
    }

    /// Validates nonnegativity and rescales to unit volume-weighted mass.
    pub fn density(grid: &Grid, mut values: Vec<f64>) -> Result<Self> {
        grid.check_len(values.len())?;
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
        {
            return Err(Error::InvalidWeight { index, value });
        }
        let mass = grid.integrate(&values);
        if !(mass > 0.0) {
            return Err(Error::InvalidParameter {
                name: "density",
                reason: "density has zero mass".into(),
            });
        }
        for v in &mut values {
            *v /= mass;
        }
        Ok(Self {
            kind: FieldKind::Density,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Analytic scalar functions used for payoffs, anchors and initial densities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ScalarFunction {
    Constant {
        value: f64,
    },
    /// Truncated Fourier series in two chart coordinates. Tori use their own
    /// periods; the disk uses unit periods.
    Fourier {
        #[serde(default)]
        constant: f64,
        modes: Vec<FourierMode>,
    },
    /// `amplitude * exp(-|x - center|^2 / (2 width^2))` with the periodic
    /// chart displacement.
    Bump {
        center: Vec<f64>,
        width: f64,
        #[serde(default = "one")]
        amplitude: f64,
        #[serde(default)]
        offset: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl ScalarFunction {
    pub fn validate(&self, geom: &ChartGeometry) -> Result<()> {
        match self {
            Self::Constant { value } if !value.is_finite() => Err(Error::InvalidParameter {
                name: "value",
                reason: "must be finite".into(),
            }),
            Self::Fourier { .. } if geom.dim() != 2 => Err(Error::DimensionMismatch {
                expected: 2,
                got: geom.dim(),
            }),
            Self::Bump { center, width, .. } => {
                if center.len() != geom.dim() {
                    return Err(Error::DimensionMismatch {
                        expected: geom.dim(),
                        got: center.len(),
                    });
                }
                if !(*width > 0.0) {
                    return Err(Error::InvalidParameter {
                        name: "width",
                        reason: format!("bump width must be positive, got {width}"),
                    });
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Returns a closure evaluating the function on `geom`.
    pub fn evaluator<'a>(&'a self, geom: &'a ChartGeometry) -> Box<dyn Fn(&[f64]) -> f64 + Sync + 'a> {
        match self {
            Self::Constant { value } => {
                let v = *value;
                Box::new(move |_| v)
            }
            Self::Fourier { constant, modes } => {
                let periods = geom
                    .periods()
                    .map(|p| [p[0], p[1]])
                    .unwrap_or([1.0, 1.0]);
                let pot = FourierPotential::new(modes.clone(), periods);
                let c = *constant;
                Box::new(move |x| c + pot.value(x))
            }
            Self::Bump {
                center,
                width,
                amplitude,
                offset,
            } => Box::new(move |x| {
                let d2 = norm_sq(&geom.chart_difference(center, x));
                offset + amplitude * (-0.5 * d2 / (width * width)).exp()
            }),
        }
    }

    /// Upper bound on `|f|` over the domain.
    pub fn sup_bound(&self) -> f64 {
        match self {
            Self::Constant { value } => value.abs(),
            Self::Fourier { constant, modes } => {
                constant.abs() + modes.iter().map(|m| m.cos.hypot(m.sin)).sum::<f64>()
            }
            Self::Bump {
                amplitude, offset, ..
            } => offset.abs() + amplitude.abs(),
        }
    }

    /// Upper bound on the Euclidean chart gradient `|∂f|`.
    pub fn lipschitz_bound(&self, geom: &ChartGeometry) -> f64 {
        match self {
            Self::Constant { .. } => 0.0,
            Self::Fourier { modes, .. } => {
                let p = geom.periods().map(|p| [p[0], p[1]]).unwrap_or([1.0, 1.0]);
                modes
                    .iter()
                    .map(|m| {
                        let kx = 2.0 * std::f64::consts::PI * m.k[0] as f64 / p[0];
                        let ky = 2.0 * std::f64::consts::PI * m.k[1] as f64 / p[1];
                        m.cos.hypot(m.sin) * kx.hypot(ky)
                    })
                    .sum()
            }
            Self::Bump { width, amplitude, .. } => amplitude.abs() * (-0.5f64).exp() / width,
        }
    }
}

/// Tensor grid in chart coordinates with per-node volume weights.
#[derive(Debug, Clone)]
pub struct Grid {
    geom: ChartGeometry,
    resolution: usize,
    /// Tensor nodes per axis (`resolution` on tori, `resolution + 1` on the disk).
    axis_len: usize,
    h: Vec<f64>,
    origin: Vec<f64>,
    coords: Vec<f64>,
    weights: Vec<f64>,
    lambda: Vec<f64>,
    tensor_of: Vec<usize>,
    node_of: Vec<usize>,
    /// `[node * 2n + 2k + s]`, `s = 0` for the minus side, `1` for plus.
    neighbors: Vec<usize>,
    boundary: Vec<bool>,
    stiffness: CsrMatrix,
}

/// Gauss-Legendre nodes and weights on [-1/2, 1/2].
const GAUSS3: [(f64, f64); 3] = [
    (-0.387_298_334_620_741_7, 5.0 / 18.0),
    (0.0, 8.0 / 18.0),
    (0.387_298_334_620_741_7, 5.0 / 18.0),
];

impl Grid {
    /// Builds the grid. Tori get `resolution` nodes per axis at `x_k = k L / resolution`;
    /// the disk gets the vertex-centred lattice `x_k = -r_max + k h`,
    /// `h = 2 r_max / resolution`, restricted to `|x| < r_max`.
    pub fn new(geom: ChartGeometry, resolution: usize) -> Result<Self> {
        if resolution < 8 {
            return Err(Error::InvalidParameter {
                name: "resolution",
                reason: format!("need at least 8 nodes per axis, got {resolution}"),
            });
        }
        let n = geom.dim();
        let (axis_len, h, origin) = match (geom.periods(), geom.r_max()) {
            (Some(p), _) => (
                resolution,
                p.iter().map(|l| l / resolution as f64).collect::<Vec<_>>(),
                vec![0.0; n],
            ),
            (None, Some(r)) => (resolution + 1, vec![2.0 * r / resolution as f64; n], vec![-r; n]),
            (None, None) => unreachable!("every geometry is periodic or truncated"),
        };
        let total = axis_len.pow(n as u32);
        let mut node_of = vec![NONE; total];
        let mut tensor_of = Vec::new();
        let mut coords = Vec::new();
        let mut x = vec![0.0; n];
        for t in 0..total {
            tensor_point(t, axis_len, &origin, &h, &mut x);
            if geom.check_point(&x).is_ok() {
                node_of[t] = tensor_of.len();
                tensor_of.push(t);
                coords.extend_from_slice(&x);
            }
        }
        let len = tensor_of.len();
        if len < 2usize.pow(n as u32) {
            return Err(Error::InvalidParameter {
                name: "resolution",
                reason: "truncation radius leaves too few grid nodes".into(),
            });
        }
        let periodic = geom.is_periodic();
        let mut neighbors = vec![NONE; len * 2 * n];
        let mut idx = vec![0usize; n];
        for (node, &t) in tensor_of.iter().enumerate() {
            tensor_multi(t, axis_len, &mut idx);
            for k in 0..n {
                for (s, step) in [(0usize, -1isize), (1, 1)] {
                    let mut j = idx.clone();
                    let v = j[k] as isize + step;
                    let v = if periodic {
                        v.rem_euclid(axis_len as isize)
                    } else if v < 0 || v >= axis_len as isize {
                        continue;
                    } else {
                        v
                    };
                    j[k] = v as usize;
                    let nb = node_of[tensor_flat(&j, axis_len)];
                    neighbors[node * 2 * n + 2 * k + s] = nb;
                }
            }
        }
        let boundary: Vec<bool> = (0..len)
            .map(|i| neighbors[i * 2 * n..(i + 1) * 2 * n].contains(&NONE))
            .collect();
        let lambda: Vec<f64> = (0..len)
            .map(|i| geom.conformal_factor(&coords[i * n..(i + 1) * n]))
            .collect();
        let cell: f64 = h.iter().product();
        let weights = match geom.r_max() {
            None => lambda.iter().map(|l| l.powi(n as i32) * cell).collect(),
            Some(r) => disk_weights(&geom, r, axis_len, &origin, &h, &node_of, &coords),
        };
        let mut trans = vec![0.0; len * n];
        let mut mid = vec![0.0; n];
        for i in 0..len {
            for k in 0..n {
                if neighbors[i * 2 * n + 2 * k + 1] == NONE {
                    continue;
                }
                mid.copy_from_slice(&coords[i * n..(i + 1) * n]);
                mid[k] += 0.5 * h[k];
                let lam = geom.conformal_factor(&mid);
                trans[i * n + k] = lam.powi(n as i32 - 2) * cell / (h[k] * h[k]);
            }
        }
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::with_capacity(2 * n + 1); len];
        for i in 0..len {
            rows[i].push((i, 0.0));
            for k in 0..n {
                let j = neighbors[i * 2 * n + 2 * k + 1];
                if j == NONE {
                    continue;
                }
                let t = trans[i * n + k];
                rows[i].push((j, t));
                rows[i].push((i, -t));
                rows[j].push((i, t));
                rows[j].push((j, -t));
            }
        }
        let stiffness = CsrMatrix::from_rows(len, rows);
        Ok(Self {
            geom,
            resolution,
            axis_len,
            h,
            origin,
            coords,
            weights,
            lambda,
            tensor_of,
            node_of,
            neighbors,
            boundary,
            stiffness,
        })
    }

    pub fn geometry(&self) -> &ChartGeometry {
        &self.geom
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn dim(&self) -> usize {
        self.geom.dim()
    }

    pub fn len(&self) -> usize {
        self.tensor_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensor_of.is_empty()
    }

    pub fn spacing(&self) -> &[f64] {
        &self.h
    }

    pub fn node(&self, i: usize) -> &[f64] {
        let n = self.dim();
        &self.coords[i * n..(i + 1) * n]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_volume(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Conformal factor at each node.
    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    /// True for nodes with a missing neighbour (no-flux boundary of the disk).
    pub fn is_boundary(&self, i: usize) -> bool {
        self.boundary[i]
    }

    pub fn neighbor(&self, i: usize, axis: usize, plus: bool) -> Option<usize> {
        let j = self.neighbors[i * 2 * self.dim() + 2 * axis + plus as usize];
        (j != NONE).then_some(j)
    }

    /// Symmetric stiffness `S = W L`.
    pub fn stiffness(&self) -> &CsrMatrix {
        &self.stiffness
    }

    /// Tensor nodes per axis and the tensor position of each node, for plotting.
    pub fn axis_len(&self) -> usize {
        self.axis_len
    }

    pub fn tensor_index(&self, i: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        tensor_multi(self.tensor_of[i], self.axis_len, &mut idx);
        idx
    }

    /// Node at a tensor position, if it lies in the domain.
    pub fn node_at(&self, idx: &[usize]) -> Option<usize> {
        let j = self.node_of[tensor_flat(idx, self.axis_len)];
        (j != NONE).then_some(j)
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    pub fn check_len(&self, got: usize) -> Result<()> {
        if got != self.len() {
            return Err(Error::GridMismatch {
                expected: self.len(),
                got,
            });
        }
        Ok(())
    }

    /// `Σ f_i w_i`, summed in node order.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        f.iter().zip(&self.weights).map(|(a, b)| a * b).sum()
    }

    pub fn integrate_volume(&self, field: &DiscreteField) -> Result<f64> {
        self.check_len(field.len())?;
        Ok(self.integrate(&field.values))
    }

    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        u.iter()
            .zip(v)
            .zip(&self.weights)
            .map(|((a, b), w)| a * b * w)
            .sum()
    }

    pub fn sample<F: Fn(&[f64]) -> f64 + ?Sized>(&self, f: &F) -> Vec<f64> {
        (0..self.len()).map(|i| f(self.node(i))).collect()
    }

    pub fn sample_function(&self, f: &ScalarFunction) -> Result<Vec<f64>> {
        f.validate(&self.geom)?;
        Ok(self.sample(&*f.evaluator(&self.geom)))
    }

    pub fn uniform_density(&self) -> Vec<f64> {
        vec![1.0 / self.total_volume(); self.len()]
    }

    /// `(Δ_g u)_i = w_i^{-1} Σ_faces T_f (u_j - u_i)`.
    pub fn laplacian(&self, u: &[f64]) -> Vec<f64> {
        let mut out = self.stiffness.mul_vec(u);
        for (o, w) in out.iter_mut().zip(&self.weights) {
            *o /= w;
        }
        out
    }

    pub fn apply_laplace_beltrami(&self, field: &DiscreteField) -> Result<DiscreteField> {
        self.check_len(field.len())?;
        Ok(DiscreteField {
            kind: field.kind,
            values: self.laplacian(&field.values),
        })
    }

    /// Chart partial derivatives by central differences, `[i * n + k]`.
    /// A missing neighbour is replaced by the node itself (homogeneous Neumann).
    pub fn gradient(&self, u: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut out = vec![0.0; self.len() * n];
        for i in 0..self.len() {
            for k in 0..n {
                let m = self.neighbor(i, k, false).map_or(u[i], |j| u[j]);
                let p = self.neighbor(i, k, true).map_or(u[i], |j| u[j]);
                out[i * n + k] = (p - m) / (2.0 * self.h[k]);
            }
        }
        out
    }

    /// `|∇u|^2_g = λ^{-2} |∂u|^2` per node.
    pub fn grad_norm_sq(&self, u: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let g = self.gradient(u);
        (0..self.len())
            .map(|i| norm_sq(&g[i * n..(i + 1) * n]) / (self.lambda[i] * self.lambda[i]))
            .collect()
    }

    /// Chart components of `B = -∇_g u`, i.e. `B^k = -g^{kj} ∂_j u`.
    pub fn drift_from_value(&self, u: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut g = self.gradient(u);
        for i in 0..self.len() {
            let s = -1.0 / (self.lambda[i] * self.lambda[i]);
            for v in &mut g[i * n..(i + 1) * n] {
                *v *= s;
            }
        }
        g
    }

    /// Upwind gradient-form advection `A(B) u ≈ B^k ∂_k u` as a generator
    /// matrix. `drift` holds chart components `[i * n + k]`; each face is
    /// upwinded with the mean of the drifts at its two nodes.
    pub fn advection_matrix(&self, drift: &[f64]) -> CsrMatrix {
        let n = self.dim();
        let rows = (0..self.len())
            .map(|i| {
                let mut row = vec![(i, 0.0)];
                let mut out = 0.0;
                for k in 0..n {
                    for plus in [false, true] {
                        let Some(j) = self.neighbor(i, k, plus) else {
                            continue;
                        };
                        let b = 0.5 * (drift[i * n + k] + drift[j * n + k]);
                        let rate = if plus { b } else { -b } / self.h[k];
                        if rate > 0.0 {
                            row.push((j, rate));
                            out += rate;
                        }
                    }
                }
                row[0].1 = -out;
                row
            })
            .collect();
        CsrMatrix::from_rows(self.len(), rows)
    }

    /// Largest total jump rate of a generator matrix.
    pub fn max_rate(a: &CsrMatrix) -> f64 {
        a.diagonal().iter().fold(0.0, |m, d| m.max(-d))
    }

    /// `A^* m = W^{-1} A^T W m`, the volume adjoint of a generator matrix.
    pub fn adjoint_apply(&self, a: &CsrMatrix, m: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        for i in 0..self.len() {
            let wm = self.weights[i] * m[i];
            if wm == 0.0 {
                continue;
            }
            for (j, v) in a.row(i) {
                out[j] += v * wm;
            }
        }
        for (o, w) in out.iter_mut().zip(&self.weights) {
            *o /= w;
        }
        out
    }

    pub fn apply_advection(
        &self,
        field: &DiscreteField,
        drift: &[f64],
        mode: AdvectionMode,
    ) -> Result<DiscreteField> {
        self.check_len(field.len())?;
        self.check_len(drift.len() / self.dim())?;
        let a = self.advection_matrix(drift);
        match (mode, field.kind) {
            (AdvectionMode::Gradient, FieldKind::Value) => Ok(DiscreteField::value(a.mul_vec(&field.values))),
            (AdvectionMode::Divergence, FieldKind::Density) => {
                let values = self
                    .adjoint_apply(&a, &field.values)
                    .into_iter()
                    .map(|v| -v)
                    .collect();
                Ok(DiscreteField {
                    kind: FieldKind::Density,
                    values,
                })
            }
            (mode, kind) => Err(Error::InvalidParameter {
                name: "mode",
                reason: format!("{mode:?} advection does not apply to a {kind:?} field"),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdvectionMode {
    /// `B · ∇u` acting on values.
    Gradient,
    /// `div_g(B m)` acting on densities.
    Divergence,
}

/// Largest normalised defect `|<L u, m> - <u, L^* m>|` over probe pairs, where
/// `L = Δ_g + A(B)` acts on values and `L^* = Δ_g + A^*` on densities.
///
/// Each defect is divided by the sum of the absolute summands of both inner
/// products, so the result measures rounding error only.
pub fn adjoint_pair_check(grid: &Grid, drift: &[f64], probes: &[(Vec<f64>, Vec<f64>)]) -> Result<f64> {
    let a = grid.advection_matrix(drift);
    let mut worst = 0.0f64;
    for (u, m) in probes {
        grid.check_len(u.len())?;
        grid.check_len(m.len())?;
        let lap_u = grid.laplacian(u);
        let adv_u = a.mul_vec(u);
        let lu: Vec<f64> = lap_u.iter().zip(&adv_u).map(|(x, y)| x + y).collect();
        let lap_m = grid.laplacian(m);
        let adv_m = grid.adjoint_apply(&a, m);
        let lm: Vec<f64> = lap_m.iter().zip(&adv_m).map(|(x, y)| x + y).collect();
        let w = grid.weights();
        let mut lhs = 0.0;
        let mut rhs = 0.0;
        let mut scale = 0.0;
        for i in 0..grid.len() {
            let p = w[i] * lu[i] * m[i];
            let q = w[i] * u[i] * lm[i];
            lhs += p;
            rhs += q;
            scale += p.abs() + q.abs();
        }
        if scale > 0.0 {
            worst = worst.max((lhs - rhs).abs() / scale);
        }
    }
    Ok(worst)
}

/// `(∂_i ∂_j f - Γ^k_ij ∂_k f) v^i v^j` by Richardson-extrapolated central differences.
pub fn covariant_hessian_quadratic<F: Fn(&[f64]) -> f64 + ?Sized>(
    geom: &ChartGeometry,
    f: &F,
    x: &[f64],
    v: &[f64],
) -> Result<f64> {
    geom.check_point(x)?;
    let n = geom.dim();
    if v.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: v.len(),
        });
    }
    let nrm = geom.norm_sq_at(x, v);
    if (nrm - 1.0).abs() > 1e-10 {
        return Err(Error::NonUnitVector { norm_sq: nrm });
    }
    let scale = geom
        .r_max()
        .map_or(1.0, |r| (r - norm_sq(x).sqrt()).min(1.0));
    let h = 1e-3 * scale;
    let (g1, h1) = fd_jet(f, x, h);
    let (g2, h2) = fd_jet(f, x, 0.5 * h);
    let grad: Vec<f64> = g1.iter().zip(&g2).map(|(a, b)| (4.0 * b - a) / 3.0).collect();
    let hess: Vec<f64> = h1.iter().zip(&h2).map(|(a, b)| (4.0 * b - a) / 3.0).collect();
    let gamma = geom.christoffel(x);
    let mut q = 0.0;
    for i in 0..n {
        for j in 0..n {
            let mut c = hess[i * n + j];
            for k in 0..n {
                c -= gamma[(k * n + i) * n + j] * grad[k];
            }
            q += c * v[i] * v[j];
        }
    }
    Ok(q)
}

fn fd_jet<F: Fn(&[f64]) -> f64 + ?Sized>(f: &F, x: &[f64], h: f64) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let at = |offs: &[(usize, f64)]| {
        let mut y = x.to_vec();
        for &(k, d) in offs {
            y[k] += d;
        }
        f(&y)
    };
    let f0 = f(x);
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n * n];
    for i in 0..n {
        let p = at(&[(i, h)]);
        let m = at(&[(i, -h)]);
        grad[i] = (p - m) / (2.0 * h);
        hess[i * n + i] = (p - 2.0 * f0 + m) / (h * h);
        for j in 0..i {
            let v = (at(&[(i, h), (j, h)]) - at(&[(i, h), (j, -h)]) - at(&[(i, -h), (j, h)])
                + at(&[(i, -h), (j, -h)]))
                / (4.0 * h * h);
            hess[i * n + j] = v;
            hess[j * n + i] = v;
        }
    }
    (grad, hess)
}

fn tensor_multi(mut t: usize, axis_len: usize, idx: &mut [usize]) {
    for k in (0..idx.len()).rev() {
        idx[k] = t % axis_len;
        t /= axis_len;
    }
}

fn tensor_flat(idx: &[usize], axis_len: usize) -> usize {
    idx.iter().fold(0, |acc, &i| acc * axis_len + i)
}

fn tensor_point(t: usize, axis_len: usize, origin: &[f64], h: &[f64], x: &mut [f64]) {
    let mut idx = vec![0; x.len()];
    tensor_multi(t, axis_len, &mut idx);
    for k in 0..x.len() {
        x[k] = origin[k] + idx[k] as f64 * h[k];
    }
}

/// Volume of each dual cell intersected with the ball `|x| < r`. Cells whose
/// centre falls outside the ball hand their share to the nearest kept node.
fn disk_weights(
    geom: &ChartGeometry,
    r: f64,
    axis_len: usize,
    origin: &[f64],
    h: &[f64],
    node_of: &[usize],
    coords: &[f64],
) -> Vec<f64> {
    let n = geom.dim();
    let len = coords.len() / n;
    let mut weights = vec![0.0; len];
    let cell: f64 = h.iter().product();
    let cut_q: usize = match n {
        1 | 2 => 24,
        3 => 8,
        _ => 4,
    };
    let mut x = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut idx = vec![0usize; n];
    for t in 0..node_of.len() {
        tensor_point(t, axis_len, origin, h, &mut x);
        let far: f64 = x
            .iter()
            .zip(h)
            .map(|(xi, hi)| (xi.abs() + 0.5 * hi).powi(2))
            .sum::<f64>()
            .sqrt();
        let near: f64 = x
            .iter()
            .zip(h)
            .map(|(xi, hi)| (xi.abs() - 0.5 * hi).max(0.0).powi(2))
            .sum::<f64>()
            .sqrt();
        if near >= r {
            continue;
        }
        let mass = if far < r {
            // Tensor Gauss rule; the cell lies inside the ball.
            let mut acc = 0.0;
            for q in 0..3usize.pow(n as u32) {
                let mut rest = q;
                let mut wq = 1.0;
                for k in 0..n {
                    let (s, a) = GAUSS3[rest % 3];
                    rest /= 3;
                    y[k] = x[k] + s * h[k];
                    wq *= a;
                }
                acc += wq * geom.volume_weight(&y);
            }
            acc * cell
        } else {
            let mut acc = 0.0;
            let per = 1.0 / cut_q as f64;
            for q in 0..cut_q.pow(n as u32) {
                let mut rest = q;
                for k in 0..n {
                    let s = (rest % cut_q) as f64;
                    rest /= cut_q;
                    y[k] = x[k] + ((s + 0.5) * per - 0.5) * h[k];
                }
                if norm_sq(&y) < r * r {
                    acc += geom.volume_weight(&y);
                }
            }
            acc * cell * per.powi(n as i32)
        };
        let target = if node_of[t] != NONE {
            node_of[t]
        } else {
            tensor_multi(t, axis_len, &mut idx);
            nearest_kept(&idx, axis_len, node_of, coords, &x, n)
        };
        weights[target] += mass;
    }
    weights
}

fn nearest_kept(
    idx: &[usize],
    axis_len: usize,
    node_of: &[usize],
    coords: &[f64],
    x: &[f64],
    n: usize,
) -> usize {
    for radius in 1..axis_len as isize {
        let side = (2 * radius + 1) as usize;
        let mut best = (f64::INFINITY, NONE);
        let mut j = vec![0usize; n];
        for q in 0..side.pow(n as u32) {
            let mut rest = q;
            let mut ok = true;
            for k in 0..n {
                let off = (rest % side) as isize - radius;
                rest /= side;
                let v = idx[k] as isize + off;
                if v < 0 || v >= axis_len as isize {
                    ok = false;
                    break;
                }
                j[k] = v as usize;
            }
            if !ok {
                continue;
            }
            let node = node_of[tensor_flat(&j, axis_len)];
            if node == NONE {
                continue;
            }
            let d: f64 = (0..n).map(|k| (coords[node * n + k] - x[k]).powi(2)).sum();
            if d < best.0 {
                best = (d, node);
            }
        }
        if best.1 != NONE {
            return best.1;
        }
    }
    unreachable!("grid has kept nodes")
}
