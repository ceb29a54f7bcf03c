//! Exact Wasserstein-1 distances between finite measures, and cheap
//! certified brackets for densities on grids.

use crate::discretization::Grid;
use crate::error::{Error, Result};
use crate::geometry::ChartGeometry;

/// Relative tolerance on the total masses of the two marginals.
const BALANCE_TOL: f64 = 1e-12;

/// Balanced transport problem with a dense row-major cost matrix.
#[derive(Debug, Clone)]
pub struct TransportProblem {
    pub source: Vec<f64>,
    pub target: Vec<f64>,
    /// `cost[i * target.len() + j]`.
    pub cost: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportSolution {
    pub cost: f64,
    /// `(source index, target index, mass)` with positive mass.
    pub plan: Vec<(usize, usize, f64)>,
    /// Kantorovich potentials: `ψ_j - φ_i ≤ c_ij` with equality on the plan.
    pub source_potential: Vec<f64>,
    pub target_potential: Vec<f64>,
    /// Largest dual-feasibility or complementary-slackness violation.
    pub slackness_defect: f64,
    /// Largest marginal violation of the plan.
    pub marginal_defect: f64,
}

impl TransportProblem {
    /// Builds the cost matrix from a metric on two point lists.
    pub fn from_metric<P, D: Fn(&P, &P) -> f64>(source: Vec<f64>, xs: &[P], target: Vec<f64>, ys: &[P], d: D) -> Self {
        let cost = xs.iter().flat_map(|x| ys.iter().map(|y| d(x, y)).collect::<Vec<_>>()).collect();
        Self { source, target, cost }
    }

    fn validate(&self) -> Result<()> {
        let (ns, nt) = (self.source.len(), self.target.len());
        if self.cost.len() != ns * nt {
            return Err(Error::DimensionMismatch {
                expected: ns * nt,
                got: self.cost.len(),
            });
        }
        for (index, &value) in self.source.iter().chain(&self.target).enumerate() {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(Error::InvalidWeight { index, value });
            }
        }
        for (index, &value) in self.cost.iter().enumerate() {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(Error::InvalidParameter {
                    name: "cost",
                    reason: format!("entry {index} is {value}; costs must be finite and nonnegative"),
                });
            }
        }
        let a: f64 = self.source.iter().sum();
        let b: f64 = self.target.iter().sum();
        if (a - b).abs() > BALANCE_TOL * a.max(b).max(1.0) || !(a > 0.0) {
            return Err(Error::UnbalancedMasses {
                source_mass: a,
                target_mass: b,
            });
        }
        Ok(())
    }
}

/// Primal network simplex on the complete bipartite graph plus an artificial
/// root. Tree arcs satisfy `c_ij + p_i - p_j = 0`; on return every arc has a
/// nonnegative reduced cost up to rounding.
///
/// Arc `i * nt + j` runs from source `i` to target `j`; arc `E + v` joins node
/// `v` to the root (upwards for sources, downwards for targets).
fn network_simplex<C: Fn(usize, usize) -> f64>(
    ns: usize,
    nt: usize,
    c: &C,
    supply: &[f64],
    demand: &[f64],
    flow_out: &mut [f64],
    pot_out: &mut [f64],
) {
    let nv = ns + nt;
    let root = nv;
    let e = ns * nt;
    let max_c = (0..ns)
        .flat_map(|i| (0..nt).map(move |j| (i, j)))
        .map(|(i, j)| c(i, j))
        .fold(0.0, f64::max);
    let big = (max_c + 1.0) * (nv as f64);
    let tol = 1e-13 * (max_c + 1.0);
    let tail = |a: usize| -> usize {
        if a < e {
            a / nt
        } else if a - e < ns {
            a - e
        } else {
            root
        }
    };
    let head = |a: usize| -> usize {
        if a < e {
            ns + a % nt
        } else if a - e < ns {
            root
        } else {
            a - e
        }
    };
    let cost = |a: usize| -> f64 {
        if a < e {
            c(a / nt, a % nt)
        } else if a - e < ns {
            0.0
        } else {
            big
        }
    };
    let mut flow = vec![0.0; e + nv];
    let mut tree_arcs: Vec<Vec<usize>> = vec![Vec::new(); nv + 1];
    for v in 0..nv {
        flow[e + v] = if v < ns { supply[v] } else { demand[v - ns] };
        tree_arcs[v].push(e + v);
        tree_arcs[root].push(e + v);
    }
    let mut parent = vec![usize::MAX; nv + 1];
    let mut parc = vec![usize::MAX; nv + 1];
    let mut depth = vec![0usize; nv + 1];
    let mut pot = vec![0.0; nv + 1];
    let mut queue = Vec::with_capacity(nv + 1);
    let rebuild = |tree_arcs: &[Vec<usize>],
                   parent: &mut [usize],
                   parc: &mut [usize],
                   depth: &mut [usize],
                   pot: &mut [f64],
                   queue: &mut Vec<usize>| {
        queue.clear();
        queue.push(root);
        parent[root] = usize::MAX;
        parc[root] = usize::MAX;
        let mut k = 0;
        while k < queue.len() {
            let v = queue[k];
            k += 1;
            for &a in &tree_arcs[v] {
                if a == parc[v] {
                    continue;
                }
                let (t, h) = (tail(a), head(a));
                let u = if t == v { h } else { t };
                parent[u] = v;
                parc[u] = a;
                depth[u] = depth[v] + 1;
                // c + p_t - p_h = 0
                pot[u] = if t == v { pot[v] + cost(a) } else { pot[v] - cost(a) };
                queue.push(u);
            }
        }
    };
    rebuild(&tree_arcs, &mut parent, &mut parc, &mut depth, &mut pot, &mut queue);

    let block = ((e as f64).sqrt().ceil() as usize).max(10);
    let mut next = 0usize;
    loop {
        // block pricing over the real arcs
        let mut entering = usize::MAX;
        let mut best = -tol;
        let mut scanned = 0;
        while scanned < e {
            let end = (scanned + block).min(e);
            for _ in scanned..end {
                let a = next;
                next = if next + 1 == e { 0 } else { next + 1 };
                let (i, j) = (a / nt, a % nt);
                let rc = c(i, j) + pot[i] - pot[ns + j];
                if rc < best {
                    best = rc;
                    entering = a;
                }
            }
            scanned = end;
            if entering != usize::MAX {
                break;
            }
        }
        if entering == usize::MAX {
            break;
        }
        let (u, w) = (tail(entering), head(entering));
        // apex of the cycle u -> w -> ... -> apex -> ... -> u
        let (mut x, mut y) = (u, w);
        while x != y {
            if depth[x] >= depth[y] {
                x = parent[x];
            } else {
                y = parent[y];
            }
        }
        let apex = x;
        // arcs on the w side are traversed child -> parent; those on the u
        // side parent -> child
        let against = |v: usize, w_side: bool| -> bool {
            let up = tail(parc[v]) == v;
            if w_side {
                !up
            } else {
                up
            }
        };
        let mut delta = f64::INFINITY;
        let mut leave_node = usize::MAX;
        // u side: the last blocking arc in cycle order is the one nearest u
        let mut v = u;
        while v != apex {
            if against(v, false) && flow[parc[v]] < delta {
                delta = flow[parc[v]];
                leave_node = v;
            }
            v = parent[v];
        }
        // w side comes later in cycle order; nearest the apex wins ties
        let mut v = w;
        while v != apex {
            if against(v, true) && flow[parc[v]] <= delta {
                delta = flow[parc[v]];
                leave_node = v;
            }
            v = parent[v];
        }
        flow[entering] += delta;
        for (start, w_side) in [(u, false), (w, true)] {
            let mut v = start;
            while v != apex {
                let a = parc[v];
                if against(v, w_side) {
                    flow[a] = if flow[a] == delta { 0.0 } else { flow[a] - delta };
                } else {
                    flow[a] += delta;
                }
                v = parent[v];
            }
        }
        let leaving = parc[leave_node];
        flow[leaving] = 0.0;
        for end in [tail(leaving), head(leaving)] {
            let list = &mut tree_arcs[end];
            let k = list.iter().position(|&a| a == leaving).unwrap();
            list.swap_remove(k);
        }
        tree_arcs[u].push(entering);
        tree_arcs[w].push(entering);
        rebuild(&tree_arcs, &mut parent, &mut parc, &mut depth, &mut pot, &mut queue);
    }
    flow_out.copy_from_slice(&flow[..e]);
    pot_out.copy_from_slice(&pot[..nv]);
}

/// Solves the transport problem exactly by successive shortest paths with
/// potentials on the bipartite residual graph.
pub fn w1_exact(problem: &TransportProblem) -> Result<TransportSolution> {
    problem.validate()?;
    let nt_full = problem.target.len();
    let src: Vec<usize> = (0..problem.source.len()).filter(|&i| problem.source[i] > 0.0).collect();
    let tgt: Vec<usize> = (0..nt_full).filter(|&j| problem.target[j] > 0.0).collect();
    let (ns, nt) = (src.len(), tgt.len());
    let c = |i: usize, j: usize| problem.cost[src[i] * nt_full + tgt[j]];
    let a_sum: f64 = src.iter().map(|&i| problem.source[i]).sum();
    let b_sum: f64 = tgt.iter().map(|&j| problem.target[j]).sum();
    let supply: Vec<f64> = src.iter().map(|&i| problem.source[i]).collect();
    let demand: Vec<f64> = tgt.iter().map(|&j| problem.target[j] * (a_sum / b_sum)).collect();

    let mut flow = vec![0.0; ns * nt];
    // Potentials: sources 0..ns, targets ns..ns+nt. Reduced cost of i -> j is
    // c_ij + p_i - p_j >= 0.
    let mut pot = vec![0.0; ns + nt];
    for j in 0..nt {
        pot[ns + j] = (0..ns).map(|i| c(i, j)).fold(f64::INFINITY, f64::min);
    }
    if ns == 1 || nt == 1 {
        for i in 0..ns {
            for j in 0..nt {
                flow[i * nt + j] = if ns == 1 { demand[j] } else { supply[i] };
            }
        }
        if ns == 1 {
            for j in 0..nt {
                pot[ns + j] = c(0, j);
            }
        } else {
            for i in 0..ns {
                pot[i] = -c(i, 0);
            }
            pot[ns] = 0.0;
        }
    } else {
        network_simplex(ns, nt, &c, &supply, &demand, &mut flow, &mut pot);
    }

    let mut cost = 0.0;
    let mut plan = Vec::new();
    let mut defect = 0.0f64;
    for i in 0..ns {
        for j in 0..nt {
            let rc = c(i, j) + pot[i] - pot[ns + j];
            defect = defect.max(-rc);
            let f = flow[i * nt + j];
            if f > 0.0 {
                cost += f * c(i, j);
                plan.push((src[i], tgt[j], f));
                defect = defect.max(rc.abs());
            }
        }
    }
    let mut row = vec![0.0; problem.source.len()];
    let mut col = vec![0.0; nt_full];
    for &(i, j, f) in &plan {
        row[i] += f;
        col[j] += f;
    }
    let marginal_defect = row
        .iter()
        .zip(&problem.source)
        .chain(col.iter().zip(&problem.target))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let mut source_potential = vec![0.0; problem.source.len()];
    let mut target_potential = vec![0.0; nt_full];
    for (k, &i) in src.iter().enumerate() {
        source_potential[i] = pot[k];
    }
    for (k, &j) in tgt.iter().enumerate() {
        target_potential[j] = pot[ns + k];
    }
    Ok(TransportSolution {
        cost,
        plan,
        source_potential,
        target_potential,
        slackness_defect: defect,
        marginal_defect,
    })
}

/// Subsampling used by [`w1_between_densities`].
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsampleSpec {
    /// Side (in grid nodes) of the aggregation blocks for the exact solve.
    pub block: usize,
    /// Whether to run the exact solve on the aggregated measures.
    pub exact: bool,
    /// Number of anchor points per axis for distance test functions.
    pub anchors: usize,
}

impl Default for SubsampleSpec {
    fn default() -> Self {
        Self {
            block: 4,
            exact: true,
            anchors: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct W1Bracket {
    pub lower: f64,
    pub upper: f64,
    /// Exact W1 between the block-aggregated measures, when requested.
    pub subsampled: Option<f64>,
}

/// Upper bound on W1 from the dyadic tree metric over the tensor grid.
///
/// Each cell `C` is joined to its parent `P` by an edge of length
/// `diam(P) / 2`, so the tree distance between two nodes is at least the
/// diameter of their lowest common cell and dominates the geodesic distance.
pub fn w1_tree_upper(grid: &Grid, m1: &[f64], m2: &[f64]) -> Result<f64> {
    grid.check_len(m1.len())?;
    grid.check_len(m2.len())?;
    let axis = grid.axis_len();
    let mut levels = 0;
    while (1usize << levels) < axis {
        levels += 1;
    }
    let mut diff: Vec<(Vec<usize>, f64, CellBox)> = (0..grid.len())
        .map(|i| {
            let idx = grid.tensor_index(i);
            let w = grid.weights()[i];
            let x = grid.node(i).to_vec();
            (idx, w * (m1[i] - m2[i]), CellBox { lo: x.clone(), hi: x })
        })
        .collect();
    let mut total = 0.0;
    for _ in 0..levels {
        // merge cells into parents keyed by halved tensor index
        let mut parents: std::collections::BTreeMap<Vec<usize>, (f64, CellBox, Vec<f64>)> = Default::default();
        for (idx, d, bx) in diff {
            let key: Vec<usize> = idx.iter().map(|v| v / 2).collect();
            let e = parents.entry(key).or_insert_with(|| (0.0, bx.clone(), Vec::new()));
            e.0 += d;
            e.1.merge(&bx);
            e.2.push(d);
        }
        diff = Vec::with_capacity(parents.len());
        for (key, (d, bx, children)) in parents {
            let diam = bx.diameter_bound(grid.geometry());
            total += 0.5 * diam * children.iter().map(|c| c.abs()).sum::<f64>();
            diff.push((key, d, bx));
        }
    }
    // root: all mass differences must cancel; any remaining imbalance is rounding
    Ok(total)
}

#[derive(Debug, Clone)]
struct CellBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl CellBox {
    fn merge(&mut self, o: &CellBox) {
        for k in 0..self.lo.len() {
            self.lo[k] = self.lo[k].min(o.lo[k]);
            self.hi[k] = self.hi[k].max(o.hi[k]);
        }
    }

    /// Upper bound on the distance between two grid nodes in the box.
    fn diameter_bound(&self, geom: &ChartGeometry) -> f64 {
        let e: f64 = self
            .lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| (b - a) * (b - a))
            .sum::<f64>()
            .sqrt();
        match geom {
            ChartGeometry::PoincareDisk(_) => {
                // d(x, y) = 2 asinh(|x - y| / sqrt((1 - |x|^2)(1 - |y|^2)))
                let far: f64 = self
                    .lo
                    .iter()
                    .zip(&self.hi)
                    .map(|(a, b)| a.abs().max(b.abs()).powi(2))
                    .sum();
                let far = far.min(geom.r_max().unwrap().powi(2));
                2.0 * (e / (1.0 - far)).asinh()
            }
            _ => geom.conformal_factor_bounds().1 * e,
        }
    }
}

/// Lower bound on W1 from 1-Lipschitz test functions: rescaled coordinate
/// functions and distance functions to anchor nodes.
pub fn w1_test_function_lower(grid: &Grid, m1: &[f64], m2: &[f64], anchors: usize) -> Result<f64> {
    grid.check_len(m1.len())?;
    grid.check_len(m2.len())?;
    let geom = grid.geometry();
    let n = grid.dim();
    let diff: Vec<f64> = m1.iter().zip(m2).map(|(a, b)| a - b).collect();
    let mut best = 0.0f64;
    let lam_min = geom.conformal_factor_bounds().0;
    match geom.periods() {
        Some(p) => {
            // |∇(L/2π sin(2πx/L))|_g ≤ 1/λ_min
            for k in 0..n {
                let l = p[k];
                for phase in [0.0, 0.25 * l] {
                    let f = grid.sample(&|x: &[f64]| {
                        lam_min * l / (2.0 * std::f64::consts::PI)
                            * (2.0 * std::f64::consts::PI * (x[k] + phase) / l).sin()
                    });
                    best = best.max(grid.integrate(&mul(&f, &diff)).abs());
                }
            }
        }
        None => {
            for k in 0..n {
                let f = grid.sample(&|x: &[f64]| lam_min * x[k]);
                best = best.max(grid.integrate(&mul(&f, &diff)).abs());
            }
        }
    }
    let targets: Vec<&[f64]> = (0..grid.len()).map(|i| grid.node(i)).collect();
    let axis = grid.axis_len();
    let anchors = anchors.clamp(1, axis);
    let mut idx = vec![0usize; n];
    for q in 0..anchors.pow(n as u32) {
        let mut rest = q;
        for v in idx.iter_mut() {
            *v = ((rest % anchors) * axis + axis / 2) / anchors;
            rest /= anchors;
        }
        let Some(node) = grid.node_at(&idx) else {
            continue;
        };
        let f = geom.distances_within(grid.node(node), &targets, f64::INFINITY);
        best = best.max(grid.integrate(&mul(&f, &diff)).abs());
    }
    // The densities' own difference peaks as anchors.
    for pick in [argmax(&diff), argmax(&diff.iter().map(|v| -v).collect::<Vec<_>>())] {
        let f = geom.distances_within(grid.node(pick), &targets, f64::INFINITY);
        best = best.max(grid.integrate(&mul(&f, &diff)).abs());
    }
    Ok(best)
}

fn mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

/// Aggregates a density into tensor blocks: returns block masses and the
/// mass-weighted representative node of each block.
pub fn aggregate(grid: &Grid, m: &[f64], block: usize) -> Vec<(Vec<usize>, f64, usize)> {
    let mut blocks: std::collections::BTreeMap<Vec<usize>, Vec<usize>> = Default::default();
    for i in 0..grid.len() {
        let key: Vec<usize> = grid.tensor_index(i).iter().map(|v| v / block).collect();
        blocks.entry(key).or_default().push(i);
    }
    blocks
        .into_iter()
        .map(|(key, nodes)| {
            let mass: f64 = nodes.iter().map(|&i| m[i] * grid.weights()[i]).sum();
            // representative: node nearest the block centre
            let centre: Vec<f64> = (0..grid.dim())
                .map(|k| key[k] as f64 * block as f64 + 0.5 * (block as f64 - 1.0))
                .collect();
            let rep = *nodes
                .iter()
                .min_by(|&&a, &&b| {
                    let da: f64 = grid.tensor_index(a).iter().zip(&centre).map(|(x, c)| (*x as f64 - c).powi(2)).sum();
                    let db: f64 = grid.tensor_index(b).iter().zip(&centre).map(|(x, c)| (*x as f64 - c).powi(2)).sum();
                    da.total_cmp(&db).then(a.cmp(&b))
                })
                .unwrap();
            (key, mass, rep)
        })
        .collect()
}

/// Exact W1 between block aggregates of two grid densities, with the largest
/// distance from a node to its block representative.
pub fn w1_subsampled(grid: &Grid, m1: &[f64], m2: &[f64], block: usize) -> Result<(f64, f64)> {
    let a1 = aggregate(grid, m1, block);
    let a2 = aggregate(grid, m2, block);
    let geom = grid.geometry();
    let reps: Vec<usize> = a1.iter().map(|b| b.2).collect();
    let source: Vec<f64> = a1.iter().map(|b| b.1.max(0.0)).collect();
    let target: Vec<f64> = a2.iter().map(|b| b.1.max(0.0)).collect();
    let problem = TransportProblem::from_metric(source, &reps, target, &reps, |&i, &j| {
        geom.distance_unchecked(grid.node(i), grid.node(j))
    });
    let sol = w1_exact(&problem)?;
    let mut radius = 0.0f64;
    for i in 0..grid.len() {
        let key: Vec<usize> = grid.tensor_index(i).iter().map(|v| v / block).collect();
        let b = a1.binary_search_by(|e| e.0.cmp(&key)).unwrap();
        radius = radius.max(geom.distance_unchecked(grid.node(i), grid.node(a1[b].2)));
    }
    Ok((sol.cost, radius))
}

/// Certified bracket on the geodesic W1 between two grid densities.
///
/// `lower` and `upper` bound the exact W1 of the grid measures. When the
/// block-aggregated exact value `s` is requested, the bracket is widened to
/// contain it as well; `s` itself is within twice the block radius of the
/// exact W1, which also tightens the bracket.
pub fn w1_between_densities(grid: &Grid, m1: &[f64], m2: &[f64], spec: &SubsampleSpec) -> Result<W1Bracket> {
    if m1 == m2 {
        grid.check_len(m1.len())?;
        return Ok(W1Bracket {
            lower: 0.0,
            upper: 0.0,
            subsampled: spec.exact.then_some(0.0),
        });
    }
    let mut lower = w1_test_function_lower(grid, m1, m2, spec.anchors)?;
    let mut upper = w1_tree_upper(grid, m1, m2)?;
    let mut subsampled = None;
    if spec.exact {
        let (s, r) = w1_subsampled(grid, m1, m2, spec.block.max(1))?;
        lower = lower.max(s - 2.0 * r);
        upper = upper.min(s + 2.0 * r);
        lower = lower.min(s);
        upper = upper.max(s);
        subsampled = Some(s);
    }
    Ok(W1Bracket {
        lower,
        upper,
        subsampled,
    })
}
