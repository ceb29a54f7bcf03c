//! Particle simulation of the chart diffusion with generator `B·∇_g + Δ_g`
//! and comparison of empirical laws with the grid Fokker-Planck flow.
//!
//! Euler-Maruyama on `dX^k = (B^k - g^{ij} Γ^k_ij) dt + (√2 / λ) dW^k`.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discretization::Grid;
use crate::error::{Error, Result};
use crate::geometry::ChartGeometry;
use crate::transport::w1_subsampled;

/// Reflections above this fraction of particle steps are flagged.
pub const REFLECTION_BUDGET: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParticleEnsemble {
    pub time: f64,
    pub dim: usize,
    /// Chart positions `[p * dim + k]`.
    pub positions: Vec<f64>,
}

impl ParticleEnsemble {
    pub fn len(&self) -> usize {
        self.positions.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn particle(&self, p: usize) -> &[f64] {
        &self.positions[p * self.dim..(p + 1) * self.dim]
    }

    /// Every particle at `x`.
    pub fn at_point(x: &[f64], n: usize) -> Self {
        Self {
            time: 0.0,
            dim: x.len(),
            positions: x.iter().copied().cycle().take(n * x.len()).collect(),
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["particle".to_string()];
        header.extend((0..self.dim).map(|k| format!("x{k}")));
        w.write_record(&header)?;
        for p in 0..self.len() {
            let mut row = vec![p.to_string()];
            row.extend(self.particle(p).iter().map(|v| format!("{v:e}")));
            w.write_record(&row)?;
        }
        w.flush()
    }
}

/// Draws `n` particles from a grid density (with respect to the volume):
/// a node with probability `m_i w_i`, then a uniform point of its cell.
pub fn sample_from_grid_density(grid: &Grid, m: &[f64], n: usize, seed: u64) -> Result<ParticleEnsemble> {
    grid.check_len(m.len())?;
    let geom = grid.geometry();
    let dim = grid.dim();
    let mut cumulative = Vec::with_capacity(grid.len());
    let mut total = 0.0;
    for (i, (&mi, &wi)) in m.iter().zip(grid.weights()).enumerate() {
        if !(mi >= 0.0 && mi.is_finite()) {
            return Err(Error::InvalidWeight { index: i, value: mi });
        }
        total += mi * wi;
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::InvalidParameter {
            name: "m0",
            reason: "density has no mass".into(),
        });
    }
    let h = grid.spacing();
    let positions: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|p| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(2 * p as u64);
            let u = rng.random::<f64>() * total;
            let node = cumulative.partition_point(|&c| c <= u).min(grid.len() - 1);
            loop {
                let mut x: Vec<f64> = grid
                    .node(node)
                    .iter()
                    .zip(h)
                    .map(|(c, hk)| c + (rng.random::<f64>() - 0.5) * hk)
                    .collect();
                geom.wrap(&mut x);
                if geom.check_point(&x).is_ok() {
                    return x;
                }
            }
        })
        .collect();
    Ok(ParticleEnsemble {
        time: 0.0,
        dim,
        positions: positions.concat(),
    })
}

/// Drift vector field `B(t, x)` in chart components.
#[derive(Debug, Clone)]
pub enum Drift<'a> {
    Zero,
    Constant(Vec<f64>),
    /// Grid slices as in [`crate::fpk::ForwardProblem`]: slice `n` acts on
    /// `[n dt, (n + 1) dt)`, interpolated multilinearly in space.
    Grid {
        grid: &'a Grid,
        slices: &'a [Vec<f64>],
        dt: f64,
    },
}

impl Drift<'_> {
    pub fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) {
        match self {
            Drift::Zero => out.iter_mut().for_each(|v| *v = 0.0),
            Drift::Constant(b) => out.copy_from_slice(b),
            Drift::Grid { grid, slices, dt } => {
                let n = ((t / dt + 1e-9).floor() as usize).min(slices.len() - 1);
                interpolate(grid, &slices[n], x, out);
            }
        }
    }
}

/// Multilinear interpolation of a node field with `out.len()` components per
/// node; corners outside the domain are dropped and the rest renormalised.
pub fn interpolate(grid: &Grid, field: &[f64], x: &[f64], out: &mut [f64]) {
    let dim = grid.dim();
    let comps = out.len();
    let h = grid.spacing();
    let o = grid.origin();
    let len = grid.axis_len() as isize;
    let periodic = grid.geometry().is_periodic();
    let mut base = vec![0isize; dim];
    let mut frac = vec![0.0; dim];
    for k in 0..dim {
        let s = (x[k] - o[k]) / h[k];
        let f = s.floor();
        base[k] = f as isize;
        frac[k] = s - f;
    }
    out.iter_mut().for_each(|v| *v = 0.0);
    let mut total = 0.0;
    let mut idx = vec![0usize; dim];
    for corner in 0..(1usize << dim) {
        let mut w = 1.0;
        let mut inside = true;
        for k in 0..dim {
            let up = (corner >> k) & 1 == 1;
            let mut j = base[k] + up as isize;
            w *= if up { frac[k] } else { 1.0 - frac[k] };
            if periodic {
                j = j.rem_euclid(len);
            } else if j < 0 || j >= len {
                inside = false;
            }
            idx[k] = j.max(0) as usize;
        }
        if !inside || w == 0.0 {
            continue;
        }
        if let Some(node) = grid.node_at(&idx) {
            total += w;
            for c in 0..comps {
                out[c] += w * field[node * comps + c];
            }
        }
    }
    if total > 0.0 {
        out.iter_mut().for_each(|v| *v /= total);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdeSpec {
    pub horizon: f64,
    pub steps: usize,
    /// Euler-Maruyama steps per drift step.
    #[serde(default = "one")]
    pub substeps: usize,
    pub seed: u64,
    /// Keep every `record_every`-th step (the final time is always kept).
    #[serde(default = "one")]
    pub record_every: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Serialize)]
pub struct SdeRun {
    pub snapshots: Vec<ParticleEnsemble>,
    pub reflections: u64,
    pub particle_steps: u64,
    /// More than [`REFLECTION_BUDGET`] of all particle steps were reflected.
    pub excess_reflections: bool,
}

/// Mirrors a disk position back through the truncation circle.
fn reflect(r_max: f64, x: &mut [f64]) -> bool {
    let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if r < r_max {
        return false;
    }
    let target = (2.0 * r_max - r).clamp(0.0, r_max * (1.0 - 1e-9));
    x.iter_mut().for_each(|v| *v *= target / r);
    true
}

/// Diffusion coefficient `√2 / λ` and Itô drift `-g^{ij} Γ^k_ij`.
fn local_coefficients(geom: &ChartGeometry, x: &[f64], ito: &mut [f64]) -> f64 {
    let n = x.len();
    let l = geom.conformal_factor(x);
    let gamma = geom.christoffel(x);
    let inv = 1.0 / (l * l);
    for (k, c) in ito.iter_mut().enumerate() {
        *c = -inv * (0..n).map(|i| gamma[(k * n + i) * n + i]).sum::<f64>();
    }
    std::f64::consts::SQRT_2 / l
}

pub fn simulate(geom: &ChartGeometry, initial: &ParticleEnsemble, drift: &Drift, spec: &SdeSpec) -> Result<SdeRun> {
    let dim = geom.dim();
    if initial.dim != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: initial.dim,
        });
    }
    if !(spec.horizon > 0.0 && spec.horizon.is_finite()) || spec.steps == 0 || spec.substeps == 0 || spec.record_every == 0 {
        return Err(Error::InvalidParameter {
            name: "sde",
            reason: "need a positive horizon and positive step counts".into(),
        });
    }
    if let Drift::Constant(b) = drift {
        if b.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: b.len(),
            });
        }
    }
    if let Drift::Grid { grid, slices, dt } = drift {
        if slices.is_empty() || slices.iter().any(|s| s.len() != grid.len() * dim) {
            return Err(Error::InvalidParameter {
                name: "drift",
                reason: "drift slices do not match the grid".into(),
            });
        }
        if !(*dt > 0.0) || (*dt * slices.len() as f64) < spec.horizon * (1.0 - 1e-9) {
            return Err(Error::InvalidParameter {
                name: "drift",
                reason: "drift slices do not cover the horizon".into(),
            });
        }
    }
    for p in 0..initial.len() {
        geom.check_point(initial.particle(p))?;
    }
    let n_particles = initial.len();
    let total_steps = spec.steps * spec.substeps;
    let h = spec.horizon / total_steps as f64;
    let sqrt_h = h.sqrt();
    let r_max = if geom.is_periodic() { None } else { geom.r_max() };
    let recorded: Vec<usize> = (1..=spec.steps)
        .filter(|s| s % spec.record_every == 0 || *s == spec.steps)
        .collect();

    // per particle: positions at every recorded step, and its reflection count
    let paths: Vec<(Vec<f64>, u64)> = (0..n_particles)
        .into_par_iter()
        .map(|p| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(2 * p as u64 + 1);
            let mut x = initial.particle(p).to_vec();
            let mut b = vec![0.0; dim];
            let mut ito = vec![0.0; dim];
            let mut out = Vec::with_capacity(recorded.len() * dim);
            let mut reflections = 0;
            let mut next_record = 0;
            for s in 0..total_steps {
                let t = s as f64 * h;
                drift.eval(t, &x, &mut b);
                let sigma = local_coefficients(geom, &x, &mut ito);
                for k in 0..dim {
                    let z: f64 = rng.sample(StandardNormal);
                    x[k] += (b[k] + ito[k]) * h + sigma * sqrt_h * z;
                }
                geom.wrap(&mut x);
                if let Some(r) = r_max {
                    if reflect(r, &mut x) {
                        reflections += 1;
                    }
                }
                if (s + 1) % spec.substeps == 0 && next_record < recorded.len() && recorded[next_record] == (s + 1) / spec.substeps {
                    out.extend_from_slice(&x);
                    next_record += 1;
                }
            }
            (out, reflections)
        })
        .collect();

    let reflections: u64 = paths.iter().map(|p| p.1).sum();
    let particle_steps = (n_particles * total_steps) as u64;
    let mut snapshots = vec![ParticleEnsemble {
        time: initial.time,
        ..initial.clone()
    }];
    for (r, &step) in recorded.iter().enumerate() {
        let mut positions = Vec::with_capacity(n_particles * dim);
        for path in &paths {
            positions.extend_from_slice(&path.0[r * dim..(r + 1) * dim]);
        }
        snapshots.push(ParticleEnsemble {
            time: initial.time + step as f64 * spec.horizon / spec.steps as f64,
            dim,
            positions,
        });
    }
    Ok(SdeRun {
        snapshots,
        reflections,
        particle_steps,
        excess_reflections: reflections as f64 > REFLECTION_BUDGET * particle_steps as f64,
    })
}

/// Nearest grid node of a chart point.
pub fn nearest_node(grid: &Grid, x: &[f64]) -> usize {
    let h = grid.spacing();
    let o = grid.origin();
    let len = grid.axis_len() as isize;
    let periodic = grid.geometry().is_periodic();
    let idx: Vec<usize> = (0..grid.dim())
        .map(|k| {
            let j = ((x[k] - o[k]) / h[k]).round() as isize;
            if periodic {
                j.rem_euclid(len) as usize
            } else {
                j.clamp(0, len - 1) as usize
            }
        })
        .collect();
    grid.node_at(&idx).unwrap_or_else(|| {
        (0..grid.len())
            .min_by(|&a, &b| {
                let da: f64 = grid.node(a).iter().zip(x).map(|(p, q)| (p - q).powi(2)).sum();
                let db: f64 = grid.node(b).iter().zip(x).map(|(p, q)| (p - q).powi(2)).sum();
                da.total_cmp(&db)
            })
            .unwrap()
    })
}

/// Empirical measure as a grid density (nearest-node binning).
pub fn empirical_density(grid: &Grid, ensemble: &ParticleEnsemble) -> Result<Vec<f64>> {
    if ensemble.dim != grid.dim() {
        return Err(Error::DimensionMismatch {
            expected: grid.dim(),
            got: ensemble.dim,
        });
    }
    if ensemble.is_empty() {
        return Err(Error::InvalidParameter {
            name: "ensemble",
            reason: "no particles".into(),
        });
    }
    let mut m = vec![0.0; grid.len()];
    let mass = 1.0 / ensemble.len() as f64;
    for p in 0..ensemble.len() {
        m[nearest_node(grid, ensemble.particle(p))] += mass;
    }
    Ok(m.iter().zip(grid.weights()).map(|(a, w)| a / w).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Discrepancy {
    pub time: f64,
    pub w1: f64,
    /// Largest distance from a node to its block representative.
    pub bin_radius: f64,
}

/// W1 between each snapshot and the grid density at the same time, both
/// aggregated into `block`-node bins. `flow[n]` is the density at `n dt`.
pub fn empirical_vs_fpk(
    grid: &Grid,
    snapshots: &[ParticleEnsemble],
    flow: &[Vec<f64>],
    dt: f64,
    block: usize,
) -> Result<Vec<Discrepancy>> {
    if block == 0 {
        return Err(Error::InvalidParameter {
            name: "block",
            reason: "must be positive".into(),
        });
    }
    snapshots
        .iter()
        .map(|s| {
            let step = s.time / dt;
            let n = step.round() as usize;
            if (step - n as f64).abs() > 1e-6 || n >= flow.len() {
                return Err(Error::InvalidParameter {
                    name: "flow",
                    reason: format!("no density at t = {}", s.time),
                });
            }
            grid.check_len(flow[n].len())?;
            let emp = empirical_density(grid, s)?;
            let (w1, bin_radius) = w1_subsampled(grid, &emp, &flow[n], block)?;
            Ok(Discrepancy {
                time: s.time,
                w1,
                bin_radius,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HolderFit {
    pub exponent: f64,
    pub prefactor: f64,
}

/// Least-squares fit of `value ≈ prefactor · lag^exponent` in log-log scale.
pub fn holder_fit(lags: &[f64], values: &[f64]) -> Result<HolderFit> {
    let pts: Vec<(f64, f64)> = lags
        .iter()
        .zip(values)
        .filter(|(l, v)| **l > 0.0 && **v > 0.0)
        .map(|(l, v)| (l.ln(), v.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::InvalidParameter {
            name: "lags",
            reason: "need two positive samples for a fit".into(),
        });
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let exponent = sxy / sxx;
    Ok(HolderFit {
        exponent,
        prefactor: (my - exponent * mx).exp(),
    })
}

/// `W1(m_{first}, m_k)` against `t_k - t_{first}` for a grid flow, and the
/// fitted Hölder exponent over the selected steps.
pub fn flow_holder(grid: &Grid, flow: &[Vec<f64>], dt: f64, steps: &[usize], block: usize) -> Result<(Vec<(f64, f64)>, HolderFit)> {
    let first = *steps.first().ok_or(Error::InvalidParameter {
        name: "steps",
        reason: "empty".into(),
    })?;
    let samples = steps[1..]
        .iter()
        .map(|&k| {
            let m = flow.get(k).ok_or(Error::InvalidParameter {
                name: "steps",
                reason: format!("step {k} beyond the flow"),
            })?;
            Ok(((k - first) as f64 * dt, w1_subsampled(grid, &flow[first], m, block)?.0))
        })
        .collect::<Result<Vec<_>>>()?;
    let (lags, values): (Vec<f64>, Vec<f64>) = samples.iter().copied().unzip();
    Ok((samples, holder_fit(&lags, &values)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fpk::heat_flow;
    use proptest::prelude::*;

    fn torus() -> ChartGeometry {
        ChartGeometry::flat_torus(vec![1.0, 1.0]).unwrap()
    }

    #[test]
    fn disk_coefficients_at_origin() {
        let disk = ChartGeometry::poincare_disk(2, 0.9).unwrap();
        let mut ito = vec![1.0; 2];
        let sigma = local_coefficients(&disk, &[0.0, 0.0], &mut ito);
        assert!((sigma - 1.0 / std::f64::consts::SQRT_2).abs() < 1e-15);
        // ½ σ² = g^{-1} = (1 - 0)² / 4
        assert!((0.5 * sigma * sigma - 0.25).abs() < 1e-15);
        assert!(ito.iter().all(|c| c.abs() < 1e-15));
        let sigma = local_coefficients(&disk, &[0.3, -0.4], &mut ito);
        assert!((sigma - std::f64::consts::SQRT_2 * (1.0 - 0.25) / 2.0).abs() < 1e-15);
        assert!(ito.iter().all(|c| c.abs() < 1e-14));
    }

    #[test]
    fn three_dimensional_disk_has_ito_drift() {
        let disk = ChartGeometry::poincare_disk(3, 0.9).unwrap();
        let x = [0.2, 0.1, -0.3];
        let mut ito = vec![0.0; 3];
        local_coefficients(&disk, &x, &mut ito);
        // -g^{ij} Γ^k_ij = (n - 2) λ^{-2} ∂_k log λ, ∂_k log λ = 2 x_k / (1 - |x|²)
        let r2 = 0.14;
        let l = 2.0 / (1.0 - r2);
        for k in 0..3 {
            let expected = (1.0 / (l * l)) * 2.0 * x[k] / (1.0 - r2);
            assert!((ito[k] - expected).abs() < 1e-12, "{k}: {} {expected}", ito[k]);
        }
    }

    #[test]
    fn flat_brownian_variance() {
        let geom = ChartGeometry::flat_torus(vec![100.0, 100.0]).unwrap();
        let init = ParticleEnsemble::at_point(&[50.0, 50.0], 4000);
        let spec = SdeSpec {
            horizon: 0.5,
            steps: 10,
            substeps: 1,
            seed: 3,
            record_every: 10,
        };
        let run = simulate(&geom, &init, &Drift::Zero, &spec).unwrap();
        let last = run.snapshots.last().unwrap();
        assert_eq!(last.time, 0.5);
        for k in 0..2 {
            let var: f64 = (0..last.len()).map(|p| (last.particle(p)[k] - 50.0).powi(2)).sum::<f64>() / last.len() as f64;
            // sample variance of 4000 draws: relative sd ≈ √(2/4000) ≈ 0.022
            assert!((var / 1.0 - 1.0).abs() < 0.1, "{var}");
        }
    }

    #[test]
    fn constant_drift_mean_displacement() {
        let geom = ChartGeometry::flat_torus(vec![100.0, 100.0]).unwrap();
        let init = ParticleEnsemble::at_point(&[50.0, 50.0], 2000);
        let spec = SdeSpec {
            horizon: 1.0,
            steps: 20,
            substeps: 1,
            seed: 11,
            record_every: 20,
        };
        let b = [0.7, -1.2];
        let run = simulate(&geom, &init, &Drift::Constant(b.to_vec()), &spec).unwrap();
        let last = run.snapshots.last().unwrap();
        // exact law N(x0 + bT, 2T): the mean has sd √(2 / 2000)
        let se = (2.0f64 / 2000.0).sqrt();
        for k in 0..2 {
            let mean = (0..last.len()).map(|p| last.particle(p)[k]).sum::<f64>() / last.len() as f64;
            assert!((mean - 50.0 - b[k]).abs() < 4.0 * se, "{mean}");
        }
    }

    #[test]
    fn runs_are_reproducible() {
        let geom = ChartGeometry::poincare_disk(2, 0.8).unwrap();
        let init = ParticleEnsemble::at_point(&[0.1, 0.0], 300);
        let spec = SdeSpec {
            horizon: 0.2,
            steps: 20,
            substeps: 2,
            seed: 5,
            record_every: 5,
        };
        let a = simulate(&geom, &init, &Drift::Zero, &spec).unwrap();
        let b = simulate(&geom, &init, &Drift::Zero, &spec).unwrap();
        assert_eq!(a.snapshots, b.snapshots);
        assert_eq!(a.snapshots.len(), 5);
        let mut c = spec;
        c.seed = 6;
        let c = simulate(&geom, &init, &Drift::Zero, &c).unwrap();
        assert_ne!(a.snapshots.last(), c.snapshots.last());
        assert!(a.snapshots.iter().all(|s| (0..s.len()).all(|p| geom.check_point(s.particle(p)).is_ok())));
    }

    #[test]
    fn reflections_are_counted_and_flagged() {
        let geom = ChartGeometry::poincare_disk(2, 0.3).unwrap();
        let init = ParticleEnsemble::at_point(&[0.29, 0.0], 200);
        let spec = SdeSpec {
            horizon: 0.5,
            steps: 50,
            substeps: 1,
            seed: 1,
            record_every: 50,
        };
        let run = simulate(&geom, &init, &Drift::Constant(vec![5.0, 0.0]), &spec).unwrap();
        assert!(run.reflections > 0);
        assert!(run.excess_reflections);
        let last = run.snapshots.last().unwrap();
        assert!((0..last.len()).all(|p| geom.check_point(last.particle(p)).is_ok()));
    }

    #[test]
    fn interpolation_reproduces_bilinear_fields() {
        let grid = Grid::new(torus(), 16).unwrap();
        let f = grid.sample(&|x: &[f64]| 2.0 * x[0] + 3.0 * x[1]);
        let mut out = [0.0];
        interpolate(&grid, &f, &[0.3, 0.41], &mut out);
        assert!((out[0] - (0.6 + 1.23)).abs() < 1e-12);
        interpolate(&grid, &f, &grid.node(37).to_vec(), &mut out);
        assert!((out[0] - f[37]).abs() < 1e-12);
    }

    #[test]
    fn sampling_at_time_zero_is_sampling_noise() {
        let grid = Grid::new(torus(), 32).unwrap();
        let m0 = grid.sample(&|x: &[f64]| 1.0 + 0.5 * (2.0 * std::f64::consts::PI * x[0]).cos());
        let mut errs = Vec::new();
        for n in [500, 8000] {
            let e = sample_from_grid_density(&grid, &m0, n, 2).unwrap();
            let d = empirical_vs_fpk(&grid, &[e], &[m0.clone()], 0.01, 4).unwrap();
            errs.push(d[0].w1);
        }
        // N^{-1/2} scaling: a factor 4 between the two sizes, within a margin
        assert!(errs[1] < errs[0] / 2.0, "{errs:?}");
    }

    #[test]
    fn heat_flow_matches_particles() {
        let grid = Grid::new(torus(), 32).unwrap();
        let m0 = grid.sample(&|x: &[f64]| 1.0 + 0.8 * (2.0 * std::f64::consts::PI * x[0]).cos());
        let flow = heat_flow(&grid, &m0, 0.1, 20).unwrap();
        let init = sample_from_grid_density(&grid, &m0, 4000, 9).unwrap();
        let spec = SdeSpec {
            horizon: 0.1,
            steps: 20,
            substeps: 1,
            seed: 9,
            record_every: 20,
        };
        let run = simulate(grid.geometry(), &init, &Drift::Zero, &spec).unwrap();
        let d = empirical_vs_fpk(&grid, &run.snapshots, &flow, 0.005, 4).unwrap();
        assert_eq!(d.len(), 2);
        assert!(d[1].w1 < 2.0 * d[0].w1.max(1e-3), "{d:?}");
        assert!(empirical_vs_fpk(&grid, &run.snapshots, &flow, 0.003, 4).is_err());
    }

    #[test]
    fn dirac_heat_flow_is_half_holder() {
        let grid = Grid::new(torus(), 64).unwrap();
        let mut m0 = vec![0.0; grid.len()];
        let centre = grid.node_at(&[32, 32]).unwrap();
        m0[centre] = 1.0 / grid.weights()[centre];
        let flow = heat_flow(&grid, &m0, 0.02, 100).unwrap();
        let (_, fit) = flow_holder(&grid, &flow, 0.0002, &[0, 20, 40, 60, 80, 100], 1).unwrap();
        assert!((fit.exponent - 0.5).abs() < 0.1, "{fit:?}");
    }

    #[test]
    fn csv_snapshot_has_one_row_per_particle() {
        let e = ParticleEnsemble::at_point(&[0.5, 0.25], 3);
        let mut buf = Vec::new();
        e.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("particle,x0,x1\n"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn holder_fit_recovers_power_laws(a in 0.1f64..2.0, c in 0.01f64..10.0) {
            let lags = [0.01, 0.02, 0.05, 0.1, 0.3];
            let vals: Vec<f64> = lags.iter().map(|l: &f64| c * l.powf(a)).collect();
            let fit = holder_fit(&lags, &vals).unwrap();
            prop_assert!((fit.exponent - a).abs() < 1e-10);
            prop_assert!((fit.prefactor / c - 1.0).abs() < 1e-9);
        }

        #[test]
        fn particles_stay_admissible(seed in 0u64..1000, bx in -3.0f64..3.0, by in -3.0f64..3.0) {
            let disk = ChartGeometry::poincare_disk(2, 0.7).unwrap();
            let init = ParticleEnsemble::at_point(&[0.6, 0.1], 20);
            let spec = SdeSpec { horizon: 0.3, steps: 15, substeps: 1, seed, record_every: 5 };
            let run = simulate(&disk, &init, &Drift::Constant(vec![bx, by]), &spec).unwrap();
            for s in &run.snapshots {
                for p in 0..s.len() {
                    prop_assert!(disk.check_point(s.particle(p)).is_ok());
                }
            }
        }
    }
}
