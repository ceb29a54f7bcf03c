//! Suite of closed-form sanity checks with trivially known answers.

use std::f64::consts::PI;
use std::path::Path;

use anyhow::{ensure, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use mfgeo_core::curvature_mfg::{solve_stationary, verify_full_system, StationaryOptions};
use mfgeo_core::discretization::{
    adjoint_pair_check, covariant_hessian_quadratic, AdvectionMode, DiscreteField, Grid, ScalarFunction,
};
use mfgeo_core::fpk::{solve_forward, ForwardProblem};
use mfgeo_core::geograph::{coarse_curvature_continuous, ConvergenceSpec, EpsRule, GeometricGraph, QuadratureSpec};
use mfgeo_core::geometry::{ChartGeometry, FourierMode};
use mfgeo_core::hjb::{cole_hopf, inverse_cole_hopf, solve_hjb, solve_linear_parabolic_backward, BackwardProblem, HjbMethod};
use mfgeo_core::mfg::{
    eval_kernel_coupling, monotonicity_gap, picard_solve, Coupling, CouplingKind, Kernel, MfgProblem, MfgSolver,
    PicardOptions, Renormalization,
};
use mfgeo_core::sde::{simulate, Drift, ParticleEnsemble, SdeSpec};
use mfgeo_core::transport::{w1_exact, w1_tree_upper, TransportProblem};
use mfgeo_core::Error;

use crate::config::{parse_config, CommandKind};

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

type CheckFn = fn() -> Result<String>;

fn torus() -> ChartGeometry {
    ChartGeometry::flat_torus(vec![1.0, 1.0]).unwrap()
}

fn disk() -> ChartGeometry {
    ChartGeometry::poincare_disk(2, 0.95).unwrap()
}

fn constant_conformal(c: f64) -> ChartGeometry {
    let modes = vec![FourierMode { k: [0, 0], cos: c, sin: 0.0 }];
    ChartGeometry::conformal_torus([1.0, 1.0], modes, 16).unwrap()
}

fn sup(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    sup(a.iter().zip(b).map(|(x, y)| x - y))
}

fn is_scaled_identity(n: usize, get: impl Fn(usize, usize) -> f64, s: f64, tol: f64) -> bool {
    (0..n).all(|i| (0..n).all(|j| (get(i, j) - if i == j { s } else { 0.0 }).abs() <= tol))
}

fn metric_is(geom: &ChartGeometry, x: &[f64], g: f64, vol: f64) -> Result<String> {
    let m = geom.metric_data_at(x)?;
    ensure!(is_scaled_identity(m.g.nrows(), |i, j| m.g[(i, j)], g, 1e-12 * g), "g = {}, expected {g} I", m.g);
    ensure!((m.vol_weight - vol).abs() <= 1e-12 * vol, "vol_weight {}, expected {vol}", m.vol_weight);
    Ok(format!("g = {g} I, vol_weight {}", m.vol_weight))
}

fn generator_is_flat(geom: &ChartGeometry) -> Result<String> {
    let c = geom.generator_coeffs_at(&[0.3, 0.7])?;
    ensure!(is_scaled_identity(c.diffusion.nrows(), |i, j| c.diffusion[(i, j)], 1.0, 1e-12), "diffusion {}", c.diffusion);
    ensure!(sup(c.drift_correction.iter().copied()) <= 1e-12, "drift correction {:?}", c.drift_correction);
    Ok("diffusion I, correction 0".into())
}

fn approx(got: f64, want: f64, tol: f64, what: &str) -> Result<String> {
    ensure!((got - want).abs() <= tol, "{what}: got {got}, expected {want} (tol {tol:e})");
    Ok(format!("{what} = {got}"))
}

fn grid(geom: ChartGeometry, n: usize) -> Grid {
    Grid::new(geom, n).unwrap()
}

fn node_nearest_origin(g: &Grid) -> usize {
    (0..g.len())
        .min_by(|&a, &b| {
            let na: f64 = g.node(a).iter().map(|x| x * x).sum();
            let nb: f64 = g.node(b).iter().map(|x| x * x).sum();
            na.total_cmp(&nb)
        })
        .unwrap()
}

fn zero_coupling_problem(m0: Vec<f64>) -> MfgProblem {
    MfgProblem {
        horizon: 0.2,
        steps: 20,
        m0,
        running: Coupling::zero(),
        terminal: Coupling::zero(),
    }
}

fn bump_density(g: &Grid) -> Vec<f64> {
    let m = g.sample(&|x: &[f64]| 1.0 + 0.5 * (2.0 * PI * x[0]).cos());
    let z = g.integrate(&m);
    m.into_iter().map(|v| v / z).collect()
}

fn constant_coupling(value: f64) -> Coupling {
    Coupling {
        kind: CouplingKind::Kernel,
        kernel: Kernel::Constant { value: 1.0 },
        profile: ScalarFunction::Constant { value },
        strength: 1.0,
        renormalization: Renormalization::None,
    }
}

const CHECKS: &[(&str, CheckFn)] = &[
    ("geometry: disk metric at the origin", || metric_is(&disk(), &[0.0, 0.0], 4.0, 4.0)),
    ("geometry: disk metric at (0.5, 0)", || {
        let g = 4.0 / 0.5625;
        metric_is(&disk(), &[0.5, 0.0], g, g)
    }),
    ("geometry: flat torus metric", || metric_is(&torus(), &[0.3, 0.8], 1.0, 1.0)),
    ("geometry: flat torus generator", || generator_is_flat(&torus())),
    ("geometry: conformal torus with zero potential", || {
        generator_is_flat(&ChartGeometry::conformal_torus([1.0, 1.0], Vec::new(), 16)?)
    }),
    ("geometry: disk gradient norm at (0.5, 0)", || {
        approx(disk().grad_norm_sq_at(&[0.5, 0.0], &[2.0, 0.0])?, 0.5625, 1e-12, "|grad u|^2")
    }),
    ("geometry: torus gradient norm", || {
        approx(torus().grad_norm_sq_at(&[0.1, 0.2], &[3.0, 4.0])?, 25.0, 1e-12, "|grad u|^2")
    }),
    ("geometry: distance from a point to itself", || {
        for geom in [torus(), disk(), constant_conformal(0.3)] {
            let d = geom.geodesic_distance(&[0.3, 0.4], &[0.3, 0.4])?;
            ensure!(d == 0.0, "{}: d(x, x) = {d}", geom.name());
        }
        Ok("0 on all geometries".into())
    }),
    ("geometry: torus distance wraps", || {
        approx(torus().geodesic_distance(&[0.1, 0.0], &[0.9, 0.0])?, 0.2, 1e-12, "d")
    }),
    ("geometry: flat torus curvature", || {
        let c = torus().curvature_data_at(&[0.2, 0.6], Some(&[1.0, 0.0]))?;
        ensure!(c.scalar == 0.0 && c.ricci == Some(0.0), "{c:?}");
        Ok("R = 0, Ric = 0".into())
    }),
    ("geometry: constant conformal potential curvature", || {
        let geom = constant_conformal(0.3);
        let unit = [(-0.3f64).exp(), 0.0];
        let c = geom.curvature_data_at(&[0.2, 0.6], Some(&unit))?;
        ensure!(c.scalar.abs() <= 1e-12 && c.ricci.map_or(false, |r| r.abs() <= 1e-12), "{c:?}");
        Ok("R = 0, Ric = 0".into())
    }),
    ("discretization: torus weights sum to one", || {
        approx(grid(torus(), 64).weights().iter().sum(), 1.0, 1e-13, "sum w")
    }),
    ("discretization: Laplacian of a constant", || {
        let mut worst: f64 = 0.0;
        for geom in [torus(), disk()] {
            let g = grid(geom, 32);
            worst = worst.max(sup(g.laplacian(&vec![3.0; g.len()])));
        }
        ensure!(worst <= 1e-10, "sup |L 3| = {worst:e}");
        Ok(format!("sup |L c| = {worst:e}"))
    }),
    ("discretization: torus Laplacian of sin(2 pi x)", || {
        let g = grid(torus(), 64);
        let u = g.sample(&|x: &[f64]| (2.0 * PI * x[0]).sin());
        let want = g.sample(&|x: &[f64]| -4.0 * PI * PI * (2.0 * PI * x[0]).sin());
        let err = sup_diff(&g.laplacian(&u), &want);
        // second order: 4 pi^2 (2 pi h)^2 / 12
        let h = 1.0 / 64.0;
        let bound = 2.0 * 4.0 * PI * PI * (2.0 * PI * h).powi(2) / 12.0;
        ensure!(err <= bound, "error {err:e} above {bound:e}");
        Ok(format!("sup error {err:e}"))
    }),
    ("discretization: disk Laplacian of |x|^2 near the origin", || {
        let g = grid(disk(), 64);
        let u = g.sample(&|x: &[f64]| x[0] * x[0] + x[1] * x[1]);
        let i = node_nearest_origin(&g);
        let r2: f64 = g.node(i).iter().map(|x| x * x).sum();
        approx(g.laplacian(&u)[i], (1.0 - r2).powi(2), 1e-2, "Lu")
    }),
    ("discretization: zero drift advection", || {
        let g = grid(torus(), 16);
        let f = DiscreteField::value(g.sample(&|x: &[f64]| x[0].sin()));
        let a = g.apply_advection(&f, &vec![0.0; 2 * g.len()], AdvectionMode::Gradient)?;
        ensure!(sup(a.values.iter().copied()) == 0.0, "nonzero output");
        Ok("zero".into())
    }),
    ("discretization: divergence form conserves mass", || {
        let g = grid(torus(), 32);
        let drift: Vec<f64> = (0..g.len())
            .flat_map(|i| {
                let x = g.node(i);
                [(2.0 * PI * x[1]).sin() + 0.3, (2.0 * PI * x[0]).cos()]
            })
            .collect();
        let m = DiscreteField::density(&g, bump_density(&g))?;
        let out = g.apply_advection(&m, &drift, AdvectionMode::Divergence)?;
        let total = g.integrate(&out.values);
        ensure!(total.abs() <= 1e-13, "sum = {total:e}");
        Ok(format!("weighted sum {total:e}"))
    }),
    ("discretization: integral of one on the torus", || {
        let g = grid(torus(), 32);
        approx(g.integrate(&vec![1.0; g.len()]), 1.0, 1e-13, "integral")
    }),
    ("discretization: density fields have unit mass", || {
        let g = grid(disk(), 32);
        let m = DiscreteField::density(&g, g.sample(&|x: &[f64]| 1.0 + x[0]))?;
        approx(g.integrate_volume(&m)?, 1.0, 1e-10, "mass")
    }),
    ("discretization: adjoint defect with zero drift", || {
        let g = grid(torus(), 32);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let probes: Vec<_> = (0..5)
            .map(|_| {
                use rand::Rng;
                let u: Vec<f64> = (0..g.len()).map(|_| rng.random::<f64>()).collect();
                let m: Vec<f64> = (0..g.len()).map(|_| rng.random::<f64>()).collect();
                (u, m)
            })
            .collect();
        let d = adjoint_pair_check(&g, &vec![0.0; 2 * g.len()], &probes)?;
        ensure!(d <= 1e-13, "defect {d:e}");
        Ok(format!("defect {d:e}"))
    }),
    ("discretization: covariant Hessian of a constant", || {
        approx(covariant_hessian_quadratic(&disk(), &|_: &[f64]| 2.0, &[0.0, 0.0], &[0.5, 0.0])?, 0.0, 1e-8, "Hess")
    }),
    ("discretization: covariant Hessian of x^2 on the torus", || {
        approx(covariant_hessian_quadratic(&torus(), &|x: &[f64]| x[0] * x[0], &[0.5, 0.5], &[1.0, 0.0])?, 2.0, 1e-6, "Hess")
    }),
    ("hjb: Cole-Hopf transform values", || {
        ensure!(cole_hopf(&[0.0]) == vec![1.0], "u = 0");
        approx(cole_hopf(&[2.0])[0], (-1.0f64).exp(), 1e-15, "w(u = 2)")?;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let u: Vec<f64> = (0..1000)
            .map(|_| {
                use rand::Rng;
                rng.random_range(-5.0..5.0)
            })
            .collect();
        let err = sup_diff(&inverse_cole_hopf(&cole_hopf(&u))?, &u);
        ensure!(err <= 1e-13, "round trip error {err:e}");
        Ok(format!("round trip error {err:e}"))
    }),
    ("hjb: linear equation with constant source", || {
        let g = grid(torus(), 16);
        let (t, steps, c) = (0.5, 20, 0.7);
        let mut worst: f64 = 0.0;
        for source in [0.0, c] {
            let p = BackwardProblem {
                horizon: t,
                steps,
                sources: vec![vec![source; g.len()]; steps + 1],
                terminal: vec![0.0; g.len()],
                c0: source + 1.0,
            };
            let w = solve_linear_parabolic_backward(&g, &p)?;
            for (n, wn) in w.iter().enumerate() {
                let want = (-source * (t - p.time(n)) / 2.0).exp();
                worst = worst.max(sup(wn.iter().map(|v| v - want)));
            }
        }
        // implicit Euler in time on a spatially constant solution
        ensure!(worst <= 1e-2, "max deviation {worst:e}");
        Ok(format!("max deviation from exp(-c (T - t) / 2): {worst:e}"))
    }),
    ("hjb: constant source gives u = c (T - t)", || {
        let g = grid(torus(), 16);
        let (t, steps) = (0.5, 100);
        let mut worst: f64 = 0.0;
        for c in [0.0, 0.7] {
            let p = BackwardProblem {
                horizon: t,
                steps,
                sources: vec![vec![c; g.len()]; steps + 1],
                terminal: vec![0.0; g.len()],
                c0: c + 1.0,
            };
            for method in [HjbMethod::ColeHopf, HjbMethod::Direct] {
                let s = solve_hjb(&g, &p, method)?;
                for (n, un) in s.u.iter().enumerate() {
                    worst = worst.max(sup(un.iter().map(|v| v - c * (t - p.time(n)))));
                }
            }
        }
        // first order in time
        ensure!(worst <= 1e-2, "max deviation {worst:e}");
        Ok(format!("max deviation {worst:e}"))
    }),
    ("fpk: uniform density is stationary", || {
        let g = grid(torus(), 32);
        let p = ForwardProblem {
            horizon: 0.2,
            steps: 20,
            m0: g.uniform_density(),
            drift: Vec::new(),
        };
        let s = solve_forward(&g, &p)?;
        let worst = s.m.iter().map(|m| sup_diff(m, &p.m0)).fold(0.0, f64::max);
        ensure!(worst <= 1e-12, "deviation {worst:e}");
        Ok(format!("deviation {worst:e}"))
    }),
    ("fpk: point mass spreads towards uniform", || {
        let g = grid(torus(), 32);
        let mut m0 = vec![0.0; g.len()];
        let c = g.node_at(&[16, 16]).unwrap();
        m0[c] = 1.0 / g.weights()[c];
        let p = ForwardProblem {
            horizon: 0.5,
            steps: 50,
            m0,
            drift: Vec::new(),
        };
        let s = solve_forward(&g, &p)?;
        let u = g.uniform_density();
        let dev: Vec<f64> = s.m.iter().map(|m| sup_diff(m, &u)).collect();
        ensure!(dev.windows(2).all(|w| w[1] <= w[0] + 1e-12), "distance to uniform not decreasing");
        ensure!(s.report.max_mass_defect <= 1e-10, "mass defect {:e}", s.report.max_mass_defect);
        ensure!(s.report.min_density >= 0.0, "negative density");
        Ok(format!("sup |m_T - 1| = {:e}", dev.last().unwrap()))
    }),
    ("fpk: drift of a constant value function", || {
        let g = grid(disk(), 16);
        ensure!(sup(g.drift_from_value(&vec![1.5; g.len()])) == 0.0, "nonzero drift");
        Ok("zero".into())
    }),
    ("fpk: torus drift of sin(2 pi x)", || {
        let g = grid(torus(), 64);
        let b = g.drift_from_value(&g.sample(&|x: &[f64]| (2.0 * PI * x[0]).sin()));
        let err = (0..g.len())
            .map(|i| {
                let x = g.node(i);
                (b[2 * i] + 2.0 * PI * (2.0 * PI * x[0]).cos()).abs().max(b[2 * i + 1].abs())
            })
            .fold(0.0, f64::max);
        ensure!(err <= 0.02, "error {err:e}");
        Ok(format!("sup error {err:e}"))
    }),
    ("fpk: disk drift of x_1 near the origin", || {
        let g = grid(disk(), 64);
        let b = g.drift_from_value(&g.sample(&|x: &[f64]| x[0]));
        let i = node_nearest_origin(&g);
        let r2: f64 = g.node(i).iter().map(|x| x * x).sum();
        approx(b[2 * i], -(1.0 - r2).powi(2) / 4.0, 1e-3, "B^1")
    }),
    ("mfg: constant kernel and payoff give F = 1", || {
        let g = grid(torus(), 16);
        let f = eval_kernel_coupling(&constant_coupling(1.0), &g, &bump_density(&g))?;
        ensure!(sup(f.iter().map(|v| v - 1.0)) <= 1e-12, "F != 1");
        Ok("F = 1".into())
    }),
    ("mfg: renormalised constant kernel averages the payoff", || {
        let g = grid(torus(), 16);
        let mut c = constant_coupling(0.0);
        c.profile = ScalarFunction::Fourier {
            constant: 0.2,
            modes: vec![FourierMode { k: [1, 0], cos: 1.0, sin: 0.0 }],
        };
        c.renormalization = Renormalization::KernelMass;
        let m = bump_density(&g);
        let f = eval_kernel_coupling(&c, &g, &m)?;
        let prof = g.sample(&|x: &[f64]| 0.2 + (2.0 * PI * x[0]).cos());
        let want = g.integrate(&prof.iter().zip(&m).map(|(a, b)| a * b).collect::<Vec<_>>());
        ensure!(sup(f.iter().map(|v| v - want)) <= 1e-12, "F not constant {want}");
        Ok(format!("F = {want}"))
    }),
    ("mfg: monotonicity gap of equal measures and of a rank-one coupling", || {
        let g = grid(torus(), 16);
        let mu = bump_density(&g);
        let nu = g.uniform_density();
        let phi = g.sample(&|x: &[f64]| (2.0 * PI * x[1]).sin() + 0.5);
        let rank_one = |m: &[f64]| -> mfgeo_core::Result<Vec<f64>> {
            let s = g.integrate(&phi.iter().zip(m).map(|(a, b)| a * b).collect::<Vec<_>>());
            Ok(phi.iter().map(|p| p * s).collect())
        };
        let zero = monotonicity_gap(rank_one, &g, &mu, &mu)?;
        ensure!(zero == 0.0, "gap(mu, mu) = {zero}");
        let gap = monotonicity_gap(rank_one, &g, &mu, &nu)?;
        let diff: Vec<f64> = phi.iter().zip(mu.iter().zip(&nu)).map(|(p, (a, b))| p * (a - b)).collect();
        approx(gap, g.integrate(&diff).powi(2), 1e-14, "gap")
    }),
    ("mfg: decoupled game is the heat flow", || {
        let g = grid(torus(), 16);
        let p = zero_coupling_problem(bump_density(&g));
        let s = picard_solve(&g, &p, &PicardOptions::default())?;
        ensure!(s.iterations() == 1, "{} iterations", s.iterations());
        ensure!(sup(s.u.iter().flatten().copied()) == 0.0, "u != 0");
        let heat = mfgeo_core::fpk::heat_flow(&g, &p.m0, p.horizon, p.steps)?;
        let d = s.m.iter().zip(&heat).map(|(a, b)| sup_diff(a, b)).fold(0.0, f64::max);
        ensure!(d <= 1e-14, "m differs from the heat flow by {d:e}");
        let r = MfgSolver::new(&g, &p)?.equilibrium_residual(&s, HjbMethod::ColeHopf)?;
        ensure!(r.hjb <= 1e-10 && r.fpk <= 1e-10 && r.fixed_point <= 1e-10, "{r:?}");
        Ok(format!("residuals {r:?}"))
    }),
    ("mfg: spatially constant coupling has no drift", || {
        let g = grid(torus(), 16);
        let mut p = zero_coupling_problem(bump_density(&g));
        p.running = constant_coupling(0.8);
        let s = picard_solve(&g, &p, &PicardOptions::default())?;
        let spread = s
            .u
            .iter()
            .map(|u| {
                let (lo, hi) = u.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, &v| (a.0.min(v), a.1.max(v)));
                hi - lo
            })
            .fold(0.0, f64::max);
        ensure!(spread <= 1e-12, "u varies by {spread:e}");
        ensure!(sup(s.drift.iter().flatten().copied()) <= 1e-10, "nonzero drift");
        Ok(format!("spatial spread of u {spread:e}"))
    }),
    ("mfg: one Picard step is reported as unconverged", || {
        let g = grid(torus(), 16);
        let mut p = zero_coupling_problem(bump_density(&g));
        p.running = Coupling {
            kind: CouplingKind::Anchored,
            kernel: Kernel::Wendland { radius: 0.3 },
            profile: ScalarFunction::Fourier {
                constant: 0.0,
                modes: vec![FourierMode { k: [1, 0], cos: 2.0, sin: 0.0 }],
            },
            strength: 1.0,
            renormalization: Renormalization::None,
        };
        let opts = PicardOptions {
            max_iters: 1,
            tolerance: 1e-8,
            ..Default::default()
        };
        match picard_solve(&g, &p, &opts) {
            Err(Error::NotConverged(s)) => {
                ensure!(s.last_residual() > opts.tolerance, "residual {}", s.last_residual());
                Ok(format!("residual {:e} reported", s.last_residual()))
            }
            Ok(_) => anyhow::bail!("converged in one step"),
            Err(e) => Err(e.into()),
        }
    }),
    ("curvature-mfg: constant conformal potential gives v = 0", || {
        let g = grid(constant_conformal(0.4), 16);
        let s = solve_stationary(&g, 1.0, &StationaryOptions::default())?;
        let v = sup(s.v.iter().copied());
        ensure!(v <= 1e-10, "sup|v| = {v:e}");
        Ok(format!("sup|v| = {v:e}"))
    }),
    ("curvature-mfg: flat pair solves the full system", || {
        let g = grid(torus(), 16);
        let r = verify_full_system(&g, 1.0, &vec![0.0; g.len()], &g.uniform_density())?;
        ensure!(r.fpk <= 1e-10 && r.hjb <= 1e-10, "{r:?}");
        Ok(format!("{r:?}"))
    }),
    ("curvature-mfg: perturbation grows the residual linearly", || {
        let g = grid(torus(), 16);
        let m = g.uniform_density();
        let bump = g.sample(&|x: &[f64]| (2.0 * PI * x[0]).sin());
        let res = |e: f64| -> mfgeo_core::Result<f64> {
            let v: Vec<f64> = bump.iter().map(|b| e * b).collect();
            Ok(verify_full_system(&g, 1.0, &v, &m)?.hjb)
        };
        let (a, b) = (res(1e-4)?, res(2e-4)?);
        approx(b / a, 2.0, 1e-2, "residual ratio")
    }),
    ("transport: two Dirac masses", || {
        let p = TransportProblem {
            source: vec![1.0, 0.0],
            target: vec![0.0, 1.0],
            cost: vec![0.0, 2.0, 2.0, 0.0],
        };
        let s = w1_exact(&p)?;
        ensure!(s.plan == vec![(0, 1, 1.0)], "plan {:?}", s.plan);
        approx(s.cost, 2.0, 1e-14, "W1")
    }),
    ("transport: identical measures", || {
        let p = TransportProblem {
            source: vec![0.25, 0.75],
            target: vec![0.25, 0.75],
            cost: vec![0.0, 1.0, 1.0, 0.0],
        };
        approx(w1_exact(&p)?.cost, 0.0, 1e-14, "W1")?;
        let g = grid(torus(), 16);
        let m = bump_density(&g);
        approx(w1_tree_upper(&g, &m, &m)?, 0.0, 1e-14, "tree bound")
    }),
    ("geograph: collinear points form a path", || {
        let pts = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![2.0, 0.0]];
        let big = ChartGeometry::flat_torus(vec![10.0, 10.0])?;
        let g = GeometricGraph::from_points(&big, pts.clone(), 1.0)?;
        ensure!(g.edges().len() == 2, "edges {:?}", g.edges());
        let k = GeometricGraph::from_points(&big, pts, 5.0)?;
        ensure!(k.edges().len() == 3, "complete graph expected, got {:?}", k.edges());
        Ok("P3 at eps = 1, K3 at eps = 5".into())
    }),
    ("geograph: ball measures", || {
        let p3 = GeometricGraph::from_edges(3, &[(0, 1, 1.0), (1, 2, 1.0)])?;
        let end = p3.ball_measure(0, 1.0);
        let mid = p3.ball_measure(1, 1.0);
        ensure!(end.len() == 2 && end.iter().all(|&(_, w)| (w - 0.5).abs() < 1e-15), "{end:?}");
        ensure!(mid.len() == 3 && mid.iter().all(|&(_, w)| (w - 1.0 / 3.0).abs() < 1e-15), "{mid:?}");
        let k4: Vec<_> = (0..4).flat_map(|i| (i + 1..4).map(move |j| (i, j, 1.0))).collect();
        let k4 = GeometricGraph::from_edges(4, &k4)?;
        ensure!(k4.ball_measure(2, 1.0).len() == 4, "K4 ball");
        Ok("uniform on closed balls".into())
    }),
    ("geograph: complete graph edge curvature", || {
        let edges: Vec<_> = (0..5).flat_map(|i| (i + 1..5).map(move |j| (i, j, 1.0))).collect();
        let k5 = GeometricGraph::from_edges(5, &edges)?;
        let k = k5.ollivier_edge(0, 3, 1.0)?;
        ensure!(k == 1.0, "kappa {k}");
        Ok("kappa = 1".into())
    }),
    ("geograph: coincident centres are rejected", || {
        let r = coarse_curvature_continuous(&torus(), &[0.5, 0.5], &[1.0, 0.0], 0.1, 0.0, &QuadratureSpec::default());
        ensure!(r.is_err(), "delta = 0 accepted");
        Ok("rejected".into())
    }),
    ("geograph: two-node experiment is rejected", || {
        let spec = ConvergenceSpec {
            sizes: vec![2],
            eps_rule: EpsRule {
                constant: 0.5,
                exponent: None,
            },
            target: vec![0.5, 0.5],
            direction: vec![1.0, 0.0],
            delta_ratio: 0.5,
            seeds: vec![1],
            trials: 1,
            density: None,
        };
        ensure!(mfgeo_core::geograph::convergence_experiment(&torus(), &spec).is_err(), "N = 2 accepted");
        Ok("rejected".into())
    }),
    ("sde: disk noise at the origin", || {
        let c = disk().generator_coeffs_at(&[0.0, 0.0])?;
        // Sigma = sqrt(2 g^{-1}) for a scalar diffusion matrix
        let sigma = (2.0 * c.diffusion[(0, 0)]).sqrt();
        approx(sigma, 1.0 / 2f64.sqrt(), 1e-15, "Sigma")?;
        ensure!(sup(c.drift_correction.iter().copied()) == 0.0, "correction {:?}", c.drift_correction);
        Ok("Sigma = I / sqrt 2, correction 0".into())
    }),
    ("sde: flat Brownian motion has variance 2t", || {
        let geom = ChartGeometry::flat_torus(vec![100.0, 100.0])?;
        let n = 20_000;
        let init = ParticleEnsemble::at_point(&[50.0, 50.0], n);
        let spec = SdeSpec {
            horizon: 0.1,
            steps: 10,
            substeps: 1,
            seed: 3,
            record_every: 10,
        };
        let run = simulate(&geom, &init, &Drift::Zero, &spec)?;
        let last = run.snapshots.last().unwrap();
        let var = (0..n).map(|p| (last.particle(p)[0] - 50.0).powi(2)).sum::<f64>() / n as f64;
        // standard error of the sample variance: 0.2 sqrt(2 / n)
        approx(var, 0.2, 5.0 * 0.2 * (2.0 / n as f64).sqrt(), "variance")
    }),
    ("cli: minimal config records defaults", || {
        let c = parse_config(
            r#"{"geometry": {"type": "flat-torus", "periods": [1, 1]}}"#,
            CommandKind::MfgSolve,
            Path::new("."),
        )
        .map_err(|e| anyhow::anyhow!("{e}"))?;
        ensure!(c.numerics.resolution == 64 && c.numerics.picard.max_iters == 100, "defaults missing");
        Ok("defaults recorded".into())
    }),
    ("cli: negative eps is named", || {
        let e = parse_config(
            r#"{"experiment": {"edges": "g.csv", "eps": -1}}"#,
            CommandKind::GraphCurvature,
            Path::new("."),
        )
        .expect_err("accepted");
        ensure!(e.violations.iter().any(|v| v.starts_with("experiment.eps")), "{e}");
        Ok(e.violations.join("; "))
    }),
    ("cli: unknown keys are listed", || {
        let e = parse_config(r#"{"geometry": {"type": "flat-torus", "periods": [1, 1]}, "colour": 3}"#, CommandKind::MfgSolve, Path::new("."))
            .expect_err("accepted");
        ensure!(e.violations.iter().any(|v| v.starts_with("colour")), "{e}");
        Ok(e.violations.join("; "))
    }),
];

pub fn run_checks() -> Vec<CheckResult> {
    CHECKS
        .par_iter()
        .map(|&(name, f)| {
            let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err(anyhow::anyhow!("panicked")));
            match outcome {
                Ok(detail) => CheckResult {
                    name,
                    passed: true,
                    detail,
                },
                Err(e) => CheckResult {
                    name,
                    passed: false,
                    detail: format!("{e:#}"),
                },
            }
        })
        .collect()
}

pub fn check_count() -> usize {
    CHECKS.len()
}
