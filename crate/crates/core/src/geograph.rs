//! Geometric graphs, Ollivier coarse curvature on graphs and on manifolds,
//! and the convergence experiment of rescaled graph curvature.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::io::{Read, Write};

use gauss_quad::legendre::GaussLegendre;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discretization::{covariant_hessian_quadratic, ScalarFunction};
use crate::error::{Error, Result};
use crate::geometry::ChartGeometry;
use crate::transport::{w1_exact, TransportProblem};

/// Relative slack on closed-ball membership tests.
const BALL_SLACK: f64 = 1e-12;

/// Weighted undirected graph with optional chart positions.
#[derive(Debug, Clone)]
pub struct GeometricGraph {
    adjacency: Vec<Vec<(usize, f64)>>,
    positions: Option<Vec<Vec<f64>>>,
    eps: Option<f64>,
}

#[derive(PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl GeometricGraph {
    /// Abstract graph from `(i, j, weight)` edges.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut adjacency = vec![Vec::new(); n];
        for (index, &(i, j, w)) in edges.iter().enumerate() {
            if i >= n || j >= n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: i.max(j) + 1,
                });
            }
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::InvalidWeight { index, value: w });
            }
            if i != j {
                adjacency[i].push((j, w));
                adjacency[j].push((i, w));
            }
        }
        Ok(Self {
            adjacency,
            positions: None,
            eps: None,
        })
    }

    /// Connects every pair at geodesic distance at most `eps`, weighted by
    /// that distance.
    pub fn from_points(geom: &ChartGeometry, points: Vec<Vec<f64>>, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "eps",
                reason: format!("must be positive, got {eps}"),
            });
        }
        if points.len() < 2 {
            return Err(Error::InvalidParameter {
                name: "points",
                reason: format!("need at least 2 nodes, got {}", points.len()),
            });
        }
        for p in &points {
            geom.check_point(p)?;
        }
        let cells = CellIndex::new(geom, &points, eps);
        let adjacency: Vec<Vec<(usize, f64)>> = (0..points.len())
            .into_par_iter()
            .map(|i| {
                let candidates: Vec<usize> = cells.candidates(&points[i]).into_iter().filter(|&j| j != i).collect();
                let targets: Vec<&[f64]> = candidates.iter().map(|&j| points[j].as_slice()).collect();
                geom.distances_within(&points[i], &targets, eps)
                    .into_iter()
                    .zip(candidates)
                    .filter(|&(d, _)| d <= eps)
                    .map(|(d, j)| (j, d.max(f64::MIN_POSITIVE)))
                    .collect()
            })
            .collect();
        Ok(Self {
            adjacency,
            positions: Some(points),
            eps: Some(eps),
        })
    }

    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    pub fn eps(&self) -> Option<f64> {
        self.eps
    }

    pub fn positions(&self) -> Option<&[Vec<f64>]> {
        self.positions.as_deref()
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.adjacency[i]
    }

    /// Edges `(i, j, w)` with `i < j`, in index order.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for (i, row) in self.adjacency.iter().enumerate() {
            for &(j, w) in row {
                if i < j {
                    out.push((i, j, w));
                }
            }
        }
        out.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        out
    }

    pub fn average_degree(&self) -> f64 {
        self.adjacency.iter().map(|r| r.len()).sum::<usize>() as f64 / self.len() as f64
    }

    /// Shortest-path distances from `source`; entries beyond `cutoff` are
    /// infinite.
    pub fn shortest_paths(&self, source: usize, cutoff: f64) -> Vec<f64> {
        let mut dist = vec![f64::INFINITY; self.len()];
        let mut heap = BinaryHeap::new();
        dist[source] = 0.0;
        heap.push(Entry(0.0, source));
        while let Some(Entry(d, v)) = heap.pop() {
            if d > dist[v] {
                continue;
            }
            for &(u, w) in &self.adjacency[v] {
                let nd = d + w;
                if nd < dist[u] && nd <= cutoff {
                    dist[u] = nd;
                    heap.push(Entry(nd, u));
                }
            }
        }
        dist
    }

    pub fn is_connected(&self) -> bool {
        self.is_empty() || self.shortest_paths(0, f64::INFINITY).iter().all(|d| d.is_finite())
    }

    /// Uniform probability on the closed ball `{y : d_G(x, y) ≤ eps}`.
    pub fn ball_measure(&self, x: usize, eps: f64) -> Vec<(usize, f64)> {
        let limit = eps * (1.0 + BALL_SLACK);
        let dist = self.shortest_paths(x, limit);
        let nodes: Vec<usize> = (0..self.len()).filter(|&i| dist[i] <= limit).collect();
        let w = 1.0 / nodes.len() as f64;
        nodes.into_iter().map(|i| (i, w)).collect()
    }

    /// Dijkstra from `source` that stops once every node flagged in `wanted`
    /// is settled.
    fn settle(&self, source: usize, cutoff: f64, wanted: &[bool], mut remaining: usize) -> Vec<f64> {
        let mut dist = vec![f64::INFINITY; self.len()];
        let mut heap = BinaryHeap::new();
        dist[source] = 0.0;
        heap.push(Entry(0.0, source));
        while let Some(Entry(d, v)) = heap.pop() {
            if d > dist[v] {
                continue;
            }
            if wanted[v] {
                remaining -= 1;
                if remaining == 0 {
                    break;
                }
            }
            for &(u, w) in &self.adjacency[v] {
                let nd = d + w;
                if nd < dist[u] && nd <= cutoff {
                    dist[u] = nd;
                    heap.push(Entry(nd, u));
                }
            }
        }
        dist
    }

    /// `κ_G(x, y) = 1 - W1_G(η_x, η_y) / d_G(x, y)` with ball measures of radius `eps`.
    ///
    /// W1 only sees `η_x - η_y`, so mass shared by the two balls stays put and
    /// the transport runs between the positive and negative parts.
    pub fn ollivier_edge(&self, x: usize, y: usize, eps: f64) -> Result<f64> {
        if x == y {
            return Err(Error::CoincidentPoints);
        }
        let dxy = self.shortest_paths(x, f64::INFINITY)[y];
        if !dxy.is_finite() {
            return Err(Error::Disconnected { x, y });
        }
        let mut diff = vec![0.0; self.len()];
        for (i, w) in self.ball_measure(x, eps) {
            diff[i] += w;
        }
        for (j, w) in self.ball_measure(y, eps) {
            diff[j] -= w;
        }
        let plus: Vec<usize> = (0..self.len()).filter(|&i| diff[i] > 0.0).collect();
        let minus: Vec<usize> = (0..self.len()).filter(|&i| diff[i] < 0.0).collect();
        if plus.is_empty() || minus.is_empty() {
            return Ok(1.0);
        }
        // run the searches from the smaller side; the cost is symmetric
        let (rows_side, cols_side) = if plus.len() <= minus.len() {
            (&plus, &minus)
        } else {
            (&minus, &plus)
        };
        let mut wanted = vec![false; self.len()];
        cols_side.iter().for_each(|&j| wanted[j] = true);
        // any path between the balls is at most 2 eps + d(x, y) long
        let cutoff = (2.0 * eps + dxy) * (1.0 + BALL_SLACK);
        let rows: Vec<Vec<f64>> = rows_side
            .par_iter()
            .map(|&i| {
                let d = self.settle(i, cutoff, &wanted, cols_side.len());
                cols_side.iter().map(|&j| d[j]).collect()
            })
            .collect();
        let problem = TransportProblem {
            source: rows_side.iter().map(|&i| diff[i].abs()).collect(),
            target: cols_side.iter().map(|&j| diff[j].abs()).collect(),
            cost: rows.into_iter().flatten().collect(),
        };
        let w1 = w1_exact(&problem)?.cost;
        Ok(1.0 - w1 / dxy)
    }

    /// Reads `source,target,weight` rows; a header line is optional.
    pub fn read_edge_list<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(reader);
        let mut edges = Vec::new();
        let mut n = 0;
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::InvalidParameter {
                name: "edge_list",
                reason: e.to_string(),
            })?;
            let parsed = (
                rec.get(0).and_then(|s| s.parse::<usize>().ok()),
                rec.get(1).and_then(|s| s.parse::<usize>().ok()),
                rec.get(2).map_or(Some(1.0), |s| s.parse::<f64>().ok()),
            );
            match parsed {
                (Some(i), Some(j), Some(w)) => {
                    n = n.max(i + 1).max(j + 1);
                    edges.push((i, j, w));
                }
                _ if line == 0 => continue,
                _ => {
                    return Err(Error::InvalidParameter {
                        name: "edge_list",
                        reason: format!("row {} is not `source,target,weight`", line + 1),
                    })
                }
            }
        }
        Self::from_edges(n, &edges)
    }

    pub fn write_edge_list<W: Write>(&self, writer: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["source", "target", "weight"])?;
        for (i, j, wt) in self.edges() {
            w.write_record([i.to_string(), j.to_string(), format!("{wt:e}")])?;
        }
        w.flush()
    }
}

/// Buckets of chart coordinates with side `eps / λ_min`: two points at
/// geodesic distance at most `eps` lie in the same or adjacent buckets.
struct CellIndex {
    side: f64,
    /// Bucket counts per axis on periodic charts.
    wrap: Option<Vec<i64>>,
    buckets: HashMap<Vec<i64>, Vec<usize>>,
    all: Option<Vec<usize>>,
}

impl CellIndex {
    fn new(geom: &ChartGeometry, points: &[Vec<f64>], eps: f64) -> Self {
        let side = eps / geom.conformal_factor_bounds().0;
        let wrap = geom.periods().map(|p| p.iter().map(|l| (l / side).floor() as i64).collect::<Vec<_>>());
        if wrap.as_ref().is_some_and(|w| w.iter().any(|&c| c < 3)) {
            return Self {
                side,
                wrap,
                buckets: HashMap::new(),
                all: Some((0..points.len()).collect()),
            };
        }
        let mut index = Self {
            side,
            wrap,
            buckets: HashMap::new(),
            all: None,
        };
        for (i, p) in points.iter().enumerate() {
            let key = index.key(p);
            index.buckets.entry(key).or_default().push(i);
        }
        index
    }

    fn key(&self, p: &[f64]) -> Vec<i64> {
        let mut key: Vec<i64> = p.iter().map(|x| (x / self.side).floor() as i64).collect();
        if let Some(w) = &self.wrap {
            key.iter_mut().zip(w).for_each(|(k, c)| *k = k.rem_euclid(*c));
        }
        key
    }

    /// Sorted indices of the points in the 3^dim buckets around `p`.
    fn candidates(&self, p: &[f64]) -> Vec<usize> {
        if let Some(all) = &self.all {
            return all.clone();
        }
        let base = self.key(p);
        let dim = base.len();
        let mut out = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for code in 0..3usize.pow(dim as u32) {
            let mut key = base.clone();
            let mut c = code;
            for k in 0..dim {
                key[k] += (c % 3) as i64 - 1;
                c /= 3;
                if let Some(w) = &self.wrap {
                    key[k] = key[k].rem_euclid(w[k]);
                }
            }
            if seen.insert(key.clone()) {
                if let Some(b) = self.buckets.get(&key) {
                    out.extend_from_slice(b);
                }
            }
        }
        out.sort_unstable();
        out
    }
}

/// Samples `n` points with density `μ` relative to the Riemannian volume
/// (uniform when `density` is `None`) by rejection in the chart.
pub fn sample_points(
    geom: &ChartGeometry,
    n: usize,
    density: Option<&ScalarFunction>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<f64>>> {
    let dim = geom.dim();
    let eval = density.map(|f| f.evaluator(geom));
    let mu_max = density.map_or(1.0, |f| f.sup_bound());
    let vol_max = geom.conformal_factor_bounds().1.powi(dim as i32);
    let (lo, hi) = match geom.periods() {
        Some(p) => (vec![0.0; dim], p),
        None => {
            let r = geom.r_max().unwrap();
            (vec![-r; dim], vec![r; dim])
        }
    };
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let x: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| rng.random_range(*a..*b)).collect();
        if geom.check_point(&x).is_err() {
            continue;
        }
        let mu = eval.as_ref().map_or(1.0, |f| f(&x));
        if !(mu > 0.0) {
            return Err(Error::InvalidParameter {
                name: "density",
                reason: format!("sampling density must be positive, got {mu} at {x:?}"),
            });
        }
        let accept = geom.volume_weight(&x) / vol_max * mu / mu_max;
        if rng.random::<f64>() < accept {
            out.push(x);
        }
    }
    Ok(out)
}

/// `Ric^μ(v, v) = Ric^g(v, v) - Hess(log μ)(v, v)` and
/// `R^μ = R^g - Δ_g log μ` for a positive density `μ` and unit `v`.
pub fn weighted_ricci_target<F: Fn(&[f64]) -> f64 + ?Sized>(
    geom: &ChartGeometry,
    density: &F,
    x: &[f64],
    v: &[f64],
) -> Result<(f64, f64)> {
    let n = geom.dim();
    let mu = density(x);
    if !(mu > 0.0) {
        return Err(Error::InvalidParameter {
            name: "density",
            reason: format!("density must be positive at the target, got {mu}"),
        });
    }
    let curv = geom.curvature_data_at(x, Some(v))?;
    let log_mu = |p: &[f64]| {
        let m = density(p);
        if m > 0.0 {
            m.ln()
        } else {
            f64::NAN
        }
    };
    let hess_v = covariant_hessian_quadratic(geom, &log_mu, x, v)?;
    let l = geom.conformal_factor(x);
    let mut lap = 0.0;
    for k in 0..n {
        let mut e = vec![0.0; n];
        e[k] = 1.0 / l;
        lap += covariant_hessian_quadratic(geom, &log_mu, x, &e)?;
    }
    if !(hess_v.is_finite() && lap.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "density",
            reason: "density must be positive near the target".into(),
        });
    }
    Ok((curv.ricci.unwrap() - hess_v, curv.scalar - lap))
}

/// Geodesic from `x` with initial velocity `v` over unit time, transporting
/// `frame` in parallel. Returns the endpoint and the transported frame.
pub fn parallel_transport(
    geom: &ChartGeometry,
    x: &[f64],
    v: &[f64],
    frame: &[Vec<f64>],
    steps: usize,
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = geom.dim();
    let nv = frame.len();
    // state: position, velocity, frame vectors
    let mut s: Vec<f64> = x.iter().chain(v).copied().collect();
    for f in frame {
        s.extend_from_slice(f);
    }
    let rhs = |s: &[f64]| -> Vec<f64> {
        let p = &s[..n];
        let q = &s[n..2 * n];
        let gamma = geom.christoffel(p);
        let mut out = vec![0.0; s.len()];
        out[..n].copy_from_slice(q);
        for k in 0..n {
            let mut acc = 0.0;
            for i in 0..n {
                for j in 0..n {
                    acc += gamma[(k * n + i) * n + j] * q[i] * q[j];
                }
            }
            out[n + k] = -acc;
            for a in 0..nv {
                let w = &s[(2 + a) * n..(3 + a) * n];
                let mut acc = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        acc += gamma[(k * n + i) * n + j] * q[i] * w[j];
                    }
                }
                out[(2 + a) * n + k] = -acc;
            }
        }
        out
    };
    let h = 1.0 / steps as f64;
    let axpy = |a: &[f64], t: f64, b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x + t * y).collect() };
    for _ in 0..steps {
        let k1 = rhs(&s);
        let k2 = rhs(&axpy(&s, 0.5 * h, &k1));
        let k3 = rhs(&axpy(&s, 0.5 * h, &k2));
        let k4 = rhs(&axpy(&s, h, &k3));
        for i in 0..s.len() {
            s[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    let mut y = s[..n].to_vec();
    geom.wrap(&mut y);
    let frame = (0..nv).map(|a| s[(2 + a) * n..(3 + a) * n].to_vec()).collect();
    (y, frame)
}

/// Geodesic-polar quadrature of a ball: radial Gauss-Legendre nodes times
/// equispaced angles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratureSpec {
    pub radial: usize,
    pub angular: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            radial: 10,
            angular: 40,
        }
    }
}

/// Quadrature nodes `Exp_c(ρ (cos θ f_1 + sin θ f_2))` of the geodesic ball
/// of radius `eps` around `c` with normalised volume weights.
fn polar_ball(
    geom: &ChartGeometry,
    c: &[f64],
    frame: &[Vec<f64>],
    eps: f64,
    quad: &QuadratureSpec,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let outside = || Error::BallOutsideDomain {
        center: c.to_vec(),
        radius: eps,
    };
    let gl = GaussLegendre::new(quad.radial).map_err(|e| Error::InvalidParameter {
        name: "radial",
        reason: e.to_string(),
    })?;
    let exp = |rho: f64, theta: f64| -> Result<Vec<f64>> {
        let v: Vec<f64> = (0..2)
            .map(|k| rho * (theta.cos() * frame[0][k] + theta.sin() * frame[1][k]))
            .collect();
        geom.exp_map(c, &v).map_err(|_| outside())
    };
    let dtheta = 2.0 * std::f64::consts::PI / quad.angular as f64;
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for &(t, wt) in gl.as_node_weight_pairs() {
        let rho = 0.5 * eps * (t + 1.0);
        let hr = 1e-5 * eps;
        for j in 0..quad.angular {
            let theta = (j as f64 + 0.5) * dtheta;
            let p = exp(rho, theta)?;
            let dr = geom.chart_difference(&exp(rho - hr, theta)?, &exp(rho + hr, theta)?);
            let dt = geom.chart_difference(&exp(rho, theta - 1e-5)?, &exp(rho, theta + 1e-5)?);
            let jac = (dr[0] * dt[1] - dr[1] * dt[0]).abs() / (2.0 * hr * 2e-5);
            weights.push(0.5 * eps * wt * dtheta * jac * geom.volume_weight(&p));
            points.push(p);
        }
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Ok((points, weights))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoarseCurvature {
    pub eps: f64,
    pub delta: f64,
    pub kappa: f64,
    /// `2 (n + 2) κ / ε²`
    pub rescaled: f64,
    pub w1: f64,
}

/// Ollivier curvature `κ(x, Exp_x(δ v))` between volume measures on geodesic
/// balls of radius `eps`, for a unit vector `v` on a surface.
///
/// The ball around `Exp_x(δ v)` is sampled through the parallel-transported
/// frame, so both quadratures are images of one polar grid.
pub fn coarse_curvature_continuous(
    geom: &ChartGeometry,
    x: &[f64],
    v: &[f64],
    eps: f64,
    delta: f64,
    quad: &QuadratureSpec,
) -> Result<CoarseCurvature> {
    geom.check_point(x)?;
    if geom.dim() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: geom.dim(),
        });
    }
    if !(delta > 0.0) {
        return Err(Error::CoincidentPoints);
    }
    if !(eps > 0.0) || quad.radial == 0 || quad.angular < 3 {
        return Err(Error::InvalidParameter {
            name: "eps",
            reason: "need a positive radius and a nondegenerate quadrature".into(),
        });
    }
    let nrm = geom.norm_sq_at(x, v);
    if (nrm - 1.0).abs() > 1e-10 {
        return Err(Error::NonUnitVector { norm_sq: nrm });
    }
    let frame_x = vec![v.to_vec(), vec![-v[1], v[0]]];
    let dv: Vec<f64> = v.iter().map(|c| c * delta).collect();
    let (y, frame_y) = parallel_transport(geom, x, &dv, &frame_x, 256);
    geom.check_point(&y).map_err(|_| Error::BallOutsideDomain {
        center: x.to_vec(),
        radius: delta,
    })?;
    let (px, wx) = polar_ball(geom, x, &frame_x, eps, quad)?;
    let (py, wy) = polar_ball(geom, &y, &frame_y, eps, quad)?;
    let cost: Vec<f64> = px
        .par_iter()
        .flat_map_iter(|a| py.iter().map(move |b| geom.distance_unchecked(a, b)))
        .collect();
    let w1 = w1_exact(&TransportProblem {
        source: wx,
        target: wy,
        cost,
    })?
    .cost;
    let kappa = 1.0 - w1 / delta;
    let n = geom.dim() as f64;
    Ok(CoarseCurvature {
        eps,
        delta,
        kappa,
        rescaled: 2.0 * (n + 2.0) * kappa / (eps * eps),
        w1,
    })
}

/// Value at zero of the interpolating polynomial through `(xs, ys)`.
pub fn extrapolate_to_zero(xs: &[f64], ys: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..xs.len() {
        let mut l = 1.0;
        for j in 0..xs.len() {
            if i != j {
                l *= xs[j] / (xs[j] - xs[i]);
            }
        }
        total += ys[i] * l;
    }
    total
}

/// Rescaled coarse curvature at each `eps` with `δ = ratio · eps`, and its
/// polynomial extrapolation to `eps = 0`.
pub fn extrapolated_curvature(
    geom: &ChartGeometry,
    x: &[f64],
    v: &[f64],
    eps: &[f64],
    delta_ratio: f64,
    quad: &QuadratureSpec,
) -> Result<(Vec<CoarseCurvature>, f64)> {
    let values = eps
        .iter()
        .map(|&e| coarse_curvature_continuous(geom, x, v, e, delta_ratio * e, quad))
        .collect::<Result<Vec<_>>>()?;
    let ys: Vec<f64> = values.iter().map(|c| c.rescaled).collect();
    let limit = extrapolate_to_zero(eps, &ys);
    Ok((values, limit))
}

/// `ε(N) = c N^{-exponent}`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsRule {
    pub constant: f64,
    /// Defaults to `1 / (2 dim + 4)`.
    #[serde(default)]
    pub exponent: Option<f64>,
}

impl EpsRule {
    pub fn eps(&self, n: usize, dim: usize) -> f64 {
        let a = self.exponent.unwrap_or(1.0 / (2.0 * dim as f64 + 4.0));
        self.constant * (n as f64).powf(-a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceSpec {
    pub sizes: Vec<usize>,
    pub eps_rule: EpsRule,
    pub target: Vec<f64>,
    /// Chart direction at the target; normalised to unit length in `g`.
    pub direction: Vec<f64>,
    /// `d(x, y) = delta_ratio · ε`.
    #[serde(default = "half")]
    pub delta_ratio: f64,
    pub seeds: Vec<u64>,
    pub trials: usize,
    #[serde(default)]
    pub density: Option<ScalarFunction>,
}

fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrialRow {
    pub n: usize,
    pub seed: u64,
    pub trial: usize,
    pub eps: f64,
    pub kappa: f64,
    pub rescaled: f64,
    pub ball_x: usize,
    pub ball_y: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SizeSummary {
    pub n: usize,
    pub eps: f64,
    pub mean: f64,
    pub std_err: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub target: f64,
    pub bias: f64,
    pub trials: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub rows: Vec<TrialRow>,
    pub summary: Vec<SizeSummary>,
    pub target_ricci: f64,
}

/// One trial: `n - 2` random nodes plus the target `x` and `y = Exp_x(δ v)`.
fn convergence_trial(
    geom: &ChartGeometry,
    spec: &ConvergenceSpec,
    unit_v: &[f64],
    n: usize,
    seed: u64,
    trial: usize,
) -> Result<Option<TrialRow>> {
    let dim = geom.dim();
    let eps = spec.eps_rule.eps(n, dim);
    let delta = spec.delta_ratio * eps;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((n as u64) << 32) | trial as u64);
    let x = spec.target.clone();
    let y = geom.exp_map(&x, &unit_v.iter().map(|c| c * delta).collect::<Vec<_>>())?;
    let sample = sample_points(geom, n - 2, spec.density.as_ref(), &mut rng)?;
    // only nodes within 3 ε + δ of x can lie on paths between the two balls
    let reach = 3.0 * eps + delta;
    let mut points = vec![x.clone(), y];
    let targets: Vec<&[f64]> = sample.iter().map(|p| p.as_slice()).collect();
    let d = geom.distances_within(&x, &targets, reach * (1.0 + BALL_SLACK));
    points.extend(sample.iter().zip(&d).filter(|(_, d)| d.is_finite()).map(|(p, _)| p.clone()));
    let graph = GeometricGraph::from_points(geom, points, eps)?;
    let bx = graph.ball_measure(0, eps).len();
    let by = graph.ball_measure(1, eps).len();
    if bx < 3 || by < 3 {
        return Ok(None);
    }
    let kappa = graph.ollivier_edge(0, 1, eps)?;
    Ok(Some(TrialRow {
        n,
        seed,
        trial,
        eps,
        kappa,
        rescaled: 2.0 * (dim as f64 + 2.0) * kappa / (eps * eps),
        ball_x: bx,
        ball_y: by,
    }))
}

/// Rescaled graph curvature `2 (n + 2) κ_G / ε²` over sizes, seeds and
/// trials, against the weighted Ricci target.
pub fn convergence_experiment(geom: &ChartGeometry, spec: &ConvergenceSpec) -> Result<ConvergenceReport> {
    if spec.sizes.iter().any(|&n| n <= 2) || spec.sizes.is_empty() {
        return Err(Error::InvalidParameter {
            name: "sizes",
            reason: "every graph size must exceed 2".into(),
        });
    }
    if spec.seeds.is_empty() || spec.trials == 0 {
        return Err(Error::InvalidParameter {
            name: "trials",
            reason: "need at least one seed and one trial".into(),
        });
    }
    if !(spec.eps_rule.constant > 0.0) || !(spec.delta_ratio > 0.0 && spec.delta_ratio <= 1.0) {
        return Err(Error::InvalidParameter {
            name: "eps_rule",
            reason: "need c > 0 and 0 < delta_ratio <= 1".into(),
        });
    }
    geom.check_point(&spec.target)?;
    let l = geom.conformal_factor(&spec.target);
    let norm = spec.direction.iter().map(|c| c * c).sum::<f64>().sqrt() * l;
    if !(norm > 0.0) || spec.direction.len() != geom.dim() {
        return Err(Error::InvalidParameter {
            name: "direction",
            reason: "need a nonzero direction with one component per dimension".into(),
        });
    }
    let unit_v: Vec<f64> = spec.direction.iter().map(|c| c / norm).collect();
    let density_fn = spec.density.as_ref().map(|f| f.evaluator(geom));
    let target_ricci = match &density_fn {
        Some(f) => weighted_ricci_target(geom, f.as_ref(), &spec.target, &unit_v)?.0,
        None => geom.curvature_data_at(&spec.target, Some(&unit_v))?.ricci.unwrap(),
    };
    let jobs: Vec<(usize, u64, usize)> = spec
        .sizes
        .iter()
        .flat_map(|&n| spec.seeds.iter().flat_map(move |&s| (0..spec.trials).map(move |t| (n, s, t))))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(n, s, t)| convergence_trial(geom, spec, &unit_v, n, s, t))
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<TrialRow> = results.iter().flatten().copied().collect();
    let summary = spec
        .sizes
        .iter()
        .map(|&n| {
            let vals: Vec<f64> = rows.iter().filter(|r| r.n == n).map(|r| r.rescaled).collect();
            let k = vals.len();
            let mean = vals.iter().sum::<f64>() / k.max(1) as f64;
            let var = if k > 1 {
                vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64
            } else {
                f64::INFINITY
            };
            let std_err = (var / k.max(1) as f64).sqrt();
            SizeSummary {
                n,
                eps: spec.eps_rule.eps(n, geom.dim()),
                mean,
                std_err,
                ci_low: mean - 1.96 * std_err,
                ci_high: mean + 1.96 * std_err,
                target: target_ricci,
                bias: mean - target_ricci,
                trials: k,
                skipped: spec.seeds.len() * spec.trials - k,
            }
        })
        .collect();
    Ok(ConvergenceReport {
        rows,
        summary,
        target_ricci,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn path3() -> GeometricGraph {
        GeometricGraph::from_edges(3, &[(0, 1, 1.0), (1, 2, 1.0)]).unwrap()
    }

    fn complete(n: usize) -> GeometricGraph {
        let mut e = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                e.push((i, j, 1.0));
            }
        }
        GeometricGraph::from_edges(n, &e).unwrap()
    }

    fn cycle(n: usize) -> GeometricGraph {
        let e: Vec<_> = (0..n).map(|i| (i, (i + 1) % n, 1.0)).collect();
        GeometricGraph::from_edges(n, &e).unwrap()
    }

    #[test]
    fn collinear_points_give_a_path() {
        let geom = ChartGeometry::flat_torus(vec![10.0, 10.0]).unwrap();
        let pts = vec![vec![1.0, 1.0], vec![2.0, 1.0], vec![3.0, 1.0]];
        let g = GeometricGraph::from_points(&geom, pts, 1.0).unwrap();
        assert_eq!(g.edges(), vec![(0, 1, 1.0), (1, 2, 1.0)]);
    }

    #[test]
    fn large_radius_gives_complete_metric_graph() {
        let geom = ChartGeometry::poincare_disk(2, 0.9).unwrap();
        let pts = vec![vec![0.1, 0.2], vec![-0.5, 0.1], vec![0.3, -0.6], vec![0.0, 0.0]];
        let g = GeometricGraph::from_points(&geom, pts.clone(), geom.diameter_bound()).unwrap();
        let e = g.edges();
        assert_eq!(e.len(), 6);
        for (i, j, w) in e {
            assert_eq!(w, geom.distance_unchecked(&pts[i], &pts[j]));
        }
    }

    #[test]
    fn ball_measures_on_small_graphs() {
        let k = complete(5).ball_measure(2, 1.0);
        assert_eq!(k.len(), 5);
        assert!(k.iter().all(|&(_, w)| w == 0.2));
        let p = path3();
        assert_eq!(p.ball_measure(0, 1.0), vec![(0, 0.5), (1, 0.5)]);
        assert_eq!(p.ball_measure(1, 1.0).len(), 3);
    }

    #[test]
    fn small_graph_curvatures() {
        assert_eq!(complete(5).ollivier_edge(0, 1, 1.0).unwrap(), 1.0);
        assert!((path3().ollivier_edge(0, 1, 1.0).unwrap() - 0.5).abs() < 1e-12);
        assert!((cycle(4).ollivier_edge(0, 1, 1.0).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!(matches!(path3().ollivier_edge(1, 1, 1.0), Err(Error::CoincidentPoints)));
        let split = GeometricGraph::from_edges(4, &[(0, 1, 1.0), (2, 3, 1.0)]).unwrap();
        assert!(matches!(split.ollivier_edge(0, 2, 1.0), Err(Error::Disconnected { .. })));
    }

    #[test]
    fn edge_list_round_trip() {
        let g = cycle(5);
        let mut buf = Vec::new();
        g.write_edge_list(&mut buf).unwrap();
        let back = GeometricGraph::read_edge_list(buf.as_slice()).unwrap();
        assert_eq!(back.edges(), g.edges());
        let bad = GeometricGraph::read_edge_list("0,1,1\n1,x,2\n".as_bytes());
        assert!(bad.is_err());
    }

    #[test]
    fn average_degree_matches_ball_area() {
        let geom = ChartGeometry::flat_torus(vec![1.0, 1.0]).unwrap();
        let n = 2000;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts = sample_points(&geom, n, None, &mut rng).unwrap();
        let eps = 3.0 * (n as f64).powf(-0.25);
        let eps = eps.min(0.45);
        let g = GeometricGraph::from_points(&geom, pts, eps).unwrap();
        // direct count of expected neighbours: (N - 1) π ε² on the unit torus
        let expected = (n - 1) as f64 * std::f64::consts::PI * eps * eps;
        assert!((g.average_degree() / expected - 1.0).abs() < 0.2);
    }

    #[test]
    fn sampling_is_deterministic_and_inside() {
        let geom = ChartGeometry::poincare_disk(2, 0.9).unwrap();
        let a = sample_points(&geom, 200, None, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = sample_points(&geom, 200, None, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|p| geom.check_point(p).is_ok()));
    }

    #[test]
    fn weighted_ricci_targets() {
        let torus = ChartGeometry::flat_torus(vec![1.0, 1.0]).unwrap();
        let (ric, scal) = weighted_ricci_target(&torus, &|_: &[f64]| 1.0, &[0.3, 0.4], &[1.0, 0.0]).unwrap();
        assert!(ric.abs() < 1e-12 && scal.abs() < 1e-12);
        // log μ = cos(2πx) / 4 up to normalisation: Hess term -(2π)²/4 at x = 0
        let mu = |p: &[f64]| (0.25 * (2.0 * std::f64::consts::PI * p[0]).cos()).exp();
        let (ric, _) = weighted_ricci_target(&torus, &mu, &[0.0, 0.3], &[1.0, 0.0]).unwrap();
        let h = 1e-3;
        let lm = |x: f64| mu(&[x, 0.3]).ln();
        let fd = (lm(h) - 2.0 * lm(0.0) + lm(-h)) / (h * h);
        assert!((ric + fd).abs() < 1e-4, "{ric} {fd}");
        assert!((ric - std::f64::consts::PI.powi(2)).abs() < 1e-4);
        let disk = ChartGeometry::poincare_disk(2, 0.9).unwrap();
        let (ric, scal) = weighted_ricci_target(&disk, &|_: &[f64]| 1.0, &[0.0, 0.0], &[0.5, 0.0]).unwrap();
        assert!((ric + 1.0).abs() < 1e-6 && (scal + 2.0).abs() < 1e-6);
        assert!(weighted_ricci_target(&torus, &|_: &[f64]| -1.0, &[0.1, 0.1], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn parallel_transport_along_disk_diameter() {
        let disk = ChartGeometry::poincare_disk(2, 0.95).unwrap();
        let frame = vec![vec![0.5, 0.0], vec![0.0, 0.5]];
        let (y, f) = parallel_transport(&disk, &[0.0, 0.0], &[0.3, 0.0], &frame, 256);
        let exact = disk.exp_map(&[0.0, 0.0], &[0.3, 0.0]).unwrap();
        assert!((y[0] - exact[0]).abs() < 1e-10 && y[1].abs() < 1e-14);
        for v in &f {
            assert!((disk.norm_sq_at(&y, v) - 1.0).abs() < 1e-9);
        }
        assert!(f[0][1].abs() < 1e-14 && f[1][0].abs() < 1e-14);
    }

    #[test]
    fn flat_coarse_curvature_vanishes() {
        let torus = ChartGeometry::flat_torus(vec![1.0, 1.0]).unwrap();
        let c = coarse_curvature_continuous(&torus, &[0.5, 0.5], &[0.6, 0.8], 0.1, 0.05, &QuadratureSpec::default())
            .unwrap();
        assert!(c.kappa.abs() < 1e-10, "{c:?}");
        assert!(matches!(
            coarse_curvature_continuous(&torus, &[0.5, 0.5], &[1.0, 0.0], 0.1, 0.0, &QuadratureSpec::default()),
            Err(Error::CoincidentPoints)
        ));
    }

    #[test]
    fn hyperbolic_coarse_curvature_is_negative() {
        let disk = ChartGeometry::poincare_disk(2, 0.95).unwrap();
        let (values, limit) = extrapolated_curvature(
            &disk,
            &[0.0, 0.0],
            &[0.5, 0.0],
            &[0.2, 0.1, 0.05],
            0.5,
            &QuadratureSpec::default(),
        )
        .unwrap();
        assert!(values.iter().all(|c| c.kappa < 0.0), "{values:?}");
        assert!((limit + 1.0).abs() < 0.1, "{limit} {values:?}");
    }

    #[test]
    fn ball_leaving_the_chart_is_rejected() {
        let disk = ChartGeometry::poincare_disk(2, 0.5).unwrap();
        let r = coarse_curvature_continuous(&disk, &[0.0, 0.0], &[0.5, 0.0], 1.5, 0.1, &QuadratureSpec::default());
        assert!(matches!(r, Err(Error::BallOutsideDomain { .. })));
    }

    #[test]
    fn degenerate_experiment_is_rejected() {
        let torus = ChartGeometry::flat_torus(vec![1.0, 1.0]).unwrap();
        let spec = ConvergenceSpec {
            sizes: vec![2],
            eps_rule: EpsRule { constant: 0.3, exponent: None },
            target: vec![0.5, 0.5],
            direction: vec![1.0, 0.0],
            delta_ratio: 0.5,
            seeds: vec![1],
            trials: 1,
            density: None,
        };
        assert!(convergence_experiment(&torus, &spec).is_err());
    }

    fn random_graph(seed: u64) -> GeometricGraph {
        let geom = ChartGeometry::flat_torus(vec![1.0, 1.0]).unwrap();
        let pts = sample_points(&geom, 60, None, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        GeometricGraph::from_points(&geom, pts, 0.3).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn curvature_is_symmetric_and_bounded(seed in 0u64..500) {
            let g = random_graph(seed);
            let e = g.edges();
            let (x, y, _) = e[seed as usize % e.len()];
            let a = g.ollivier_edge(x, y, 0.3).unwrap();
            let b = g.ollivier_edge(y, x, 0.3).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!(a <= 1.0 + 1e-12);
        }

        #[test]
        fn scaling_weights_and_radius_keeps_curvature(seed in 0u64..500, c in 0.1f64..10.0) {
            let g = random_graph(seed);
            let e = g.edges();
            let scaled: Vec<_> = e.iter().map(|&(i, j, w)| (i, j, w * c)).collect();
            let h = GeometricGraph::from_edges(g.len(), &scaled).unwrap();
            let (x, y, _) = e[0];
            let a = g.ollivier_edge(x, y, 0.3).unwrap();
            let b = h.ollivier_edge(x, y, 0.3 * c).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn graph_distance_is_a_metric_above_the_base(seed in 0u64..500) {
            let g = random_graph(seed);
            let geom = ChartGeometry::flat_torus(vec![1.0, 1.0]).unwrap();
            let pos = g.positions().unwrap();
            let d: Vec<Vec<f64>> = (0..6).map(|i| g.shortest_paths(i, f64::INFINITY)).collect();
            for i in 0..6 {
                for j in 0..6 {
                    prop_assert!(d[i][j] == d[j][i] || (d[i][j] - d[j][i]).abs() < 1e-12);
                    if d[i][j].is_finite() {
                        prop_assert!(d[i][j] >= geom.distance_unchecked(&pos[i], &pos[j]) - 1e-12);
                    }
                    for k in 0..6 {
                        prop_assert!(d[i][j] <= d[i][k] + d[k][j] + 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn full_diameter_radius_gives_unit_curvature() {
        let g = random_graph(3);
        if g.is_connected() {
            let big = 100.0;
            for (x, y, _) in g.edges().into_iter().take(5) {
                assert_eq!(g.ollivier_edge(x, y, big).unwrap(), 1.0);
            }
        }
    }
}
