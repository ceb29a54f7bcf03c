//! One function per experiment command.

use std::fs::File;

use anyhow::{anyhow, bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use mfgeo_core::curvature_mfg::{solve_stationary, verify_full_system};
use mfgeo_core::discretization::{Grid, ScalarFunction};
use mfgeo_core::fpk::{heat_flow, MASS_TOLERANCE};
use mfgeo_core::geograph::{
    convergence_experiment, extrapolated_curvature, sample_points, GeometricGraph,
};
use mfgeo_core::mfg::{picard_solve, MfgProblem, MfgSolver};
use mfgeo_core::sde::{empirical_vs_fpk, flow_holder, nearest_node, sample_from_grid_density, simulate, Drift, SdeSpec};
use mfgeo_core::Error;

use crate::config::{DriftSource, Experiment, GraphExperiment, HolderSpec, RunConfig};
use crate::manifest::Recorder;
use crate::svg::{heatmap, line_chart, Axes, Series};

/// Relative slack for comparisons against analytic bounds.
const BOUND_SLACK: f64 = 1e-12;

fn build_grid(cfg: &RunConfig) -> Result<Grid> {
    let spec = cfg.geometry.as_ref().ok_or_else(|| anyhow!("geometry block is required"))?;
    let geom = spec.build().context("building the geometry")?;
    Ok(Grid::new(geom, cfg.numerics.resolution)?)
}

fn initial_density(grid: &Grid, f: &ScalarFunction) -> Result<Vec<f64>> {
    f.validate(grid.geometry()).context("coupling.initial")?;
    let m = grid.sample_function(f)?;
    if m.iter().any(|&v| !(v >= 0.0)) {
        bail!("coupling.initial must be nonnegative on the grid");
    }
    let z = grid.integrate(&m);
    if !(z > 0.0) {
        bail!("coupling.initial has zero mass");
    }
    Ok(m.into_iter().map(|v| v / z).collect())
}

fn num(v: f64) -> String {
    format!("{v}")
}

/// Shortest decimal that rounds to `v` at twelve digits, e.g. `0.5`.
pub fn short(v: f64) -> String {
    let s = format!("{v:.12}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}

fn write_records(rec: &mut Recorder, name: &str, header: Vec<String>, rows: Vec<Vec<String>>) -> Result<()> {
    let path = rec.dir().join(name);
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(&header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    rec.write_text_registered(name);
    Ok(())
}

fn coord_header(grid: &Grid) -> Vec<String> {
    (0..grid.dim()).map(|k| format!("x{k}")).collect()
}

fn grid_heatmap(grid: &Grid, title: &str, field: &[f64]) -> Option<String> {
    if grid.dim() != 2 {
        return None;
    }
    let n = grid.axis_len();
    let cells: Vec<_> = field
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let idx = grid.tensor_index(i);
            (idx[0], idx[1], v)
        })
        .collect();
    Some(heatmap(title, n, n, &cells))
}

fn save_heatmap(rec: &mut Recorder, grid: &Grid, name: &str, title: &str, field: &[f64]) -> Result<()> {
    if let Some(svg) = grid_heatmap(grid, title, field) {
        rec.write_text(name, &svg)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct HistoryRow {
    iteration: usize,
    fixed_point: f64,
    density_change: f64,
    value_change: f64,
    damping: f64,
}

pub fn mfg_solve(cfg: &RunConfig, rec: &mut Recorder) -> Result<()> {
    let Experiment::Mfg(exp) = &cfg.experiment else {
        unreachable!("experiment block parsed for mfg-solve");
    };
    let grid = build_grid(cfg)?;
    let m0 = initial_density(&grid, &cfg.coupling.initial)?;
    let problem = MfgProblem {
        horizon: cfg.numerics.horizon,
        steps: cfg.numerics.steps,
        m0,
        running: cfg.coupling.running.clone(),
        terminal: cfg.coupling.terminal.clone(),
    };
    let opts = &cfg.numerics.picard;
    let (sol, converged) = match picard_solve(&grid, &problem, opts) {
        Ok(s) => (s, true),
        Err(Error::NotConverged(s)) => (*s, false),
        Err(e) => return Err(e.into()),
    };
    let residual = sol.last_residual();
    rec.observe("iterations", sol.iterations());
    rec.observe("fixed_point_residual", residual);
    rec.observe("c0", sol.c0);
    rec.observe("holder_constant", sol.holder_constant);
    rec.observe("hjb", sol.hjb);
    rec.observe("fpk", sol.fpk);
    rec.check(
        "picard converged",
        converged,
        format!(
            "fixed-point residual {residual:e} after {} iterations, tolerance {:e}",
            sol.iterations(),
            opts.tolerance
        ),
    );
    if converged {
        rec.say(format!("converged in {} iterations, residual {residual:e}", sol.iterations()));
    } else {
        rec.mark_not_converged();
        rec.say(format!("not converged: residual {residual:e} after {} iterations", sol.iterations()));
    }
    rec.write_csv(
        "history.csv",
        sol.history.iter().enumerate().map(|(k, h)| HistoryRow {
            iteration: k + 1,
            fixed_point: h.fixed_point,
            density_change: h.density_change,
            value_change: h.value_change,
            damping: h.damping,
        }),
    )?;
    if sol.u.is_empty() {
        return Ok(());
    }

    let h = &sol.hjb;
    rec.check(
        "sup|u| <= C0 (T + 1)",
        h.sup_abs_u <= h.u_bound * (1.0 + BOUND_SLACK),
        format!("sup|u| = {:e}, bound {:e}", h.sup_abs_u, h.u_bound),
    );
    rec.check(
        "lower barrier exp(-C0 (T - t + 1) / 2) <= w",
        h.lower_barrier_ratio >= 1.0 - BOUND_SLACK,
        format!("min w / lower = {}", h.lower_barrier_ratio),
    );
    rec.check(
        "upper barrier w <= exp(C0 (T - t + 1) / 2)",
        h.upper_barrier_ratio <= 1.0 + BOUND_SLACK,
        format!("max w / upper = {}", h.upper_barrier_ratio),
    );
    rec.check(
        "mass conservation",
        sol.fpk.max_mass_defect <= MASS_TOLERANCE,
        format!("max defect {:e}, tolerance {MASS_TOLERANCE:e}", sol.fpk.max_mass_defect),
    );
    rec.check(
        "density nonnegative",
        sol.fpk.min_density >= 0.0,
        format!("min density {:e}", sol.fpk.min_density),
    );
    if converged {
        let r = MfgSolver::new(&grid, &problem)?.equilibrium_residual(&sol, opts.method)?;
        rec.observe("equilibrium_residual", r);
    }

    let steps = cfg.numerics.steps;
    let dt = cfg.numerics.horizon / steps as f64;
    let k = exp.snapshots.max(2);
    let mut slices: Vec<usize> = (0..k).map(|j| (j * steps + (k - 1) / 2) / (k - 1)).collect();
    slices.dedup();
    let mut header = vec!["slice".to_string(), "time".into(), "node".into()];
    header.extend(coord_header(&grid));
    header.extend(["m".to_string(), "u".into()]);
    let mut rows = Vec::new();
    for &n in &slices {
        for i in 0..grid.len() {
            let mut r = vec![n.to_string(), num(n as f64 * dt), i.to_string()];
            r.extend(grid.node(i).iter().map(|&x| num(x)));
            r.push(num(sol.m[n][i]));
            r.push(num(sol.u[n][i]));
            rows.push(r);
        }
    }
    write_records(rec, "fields.csv", header, rows)?;
    save_heatmap(rec, &grid, "density_final.svg", "density at t = T", &sol.m[steps])?;
    save_heatmap(rec, &grid, "value_initial.svg", "value function at t = 0", &sol.u[0])?;
    let chart = line_chart(
        "Picard residual",
        Axes {
            x_label: "iteration",
            y_label: "sup_t W1 bound",
            log_y: true,
            ..Default::default()
        },
        &[Series {
            label: "fixed point".into(),
            points: sol.history.iter().enumerate().map(|(k, h)| ((k + 1) as f64, h.fixed_point)).collect(),
        }],
    );
    rec.write_text("residual.svg", &chart)?;
    Ok(())
}

fn argmax(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |b, i| if v[i] > v[b] { i } else { b })
}

fn argmin(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |b, i| if v[i] < v[b] { i } else { b })
}

pub fn curvature_mfg(cfg: &RunConfig, rec: &mut Recorder) -> Result<()> {
    let grid = build_grid(cfg)?;
    let r = cfg.coupling.discount;
    let opts = &cfg.numerics.stationary;
    let sol = solve_stationary(&grid, r, opts)?;
    let full = verify_full_system(&grid, r, &sol.v, &sol.m)?;
    let mass = grid.integrate(&sol.m);
    let min_m = sol.m.iter().copied().fold(f64::INFINITY, f64::min);
    let sup_v = sol.v.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    rec.observe("elliptic_residual", sol.residual);
    rec.observe("newton_iterations", sol.newton_iterations);
    rec.observe("used_fallback", sol.used_fallback);
    rec.observe("full_system", full);
    rec.observe("sup_abs_v", sup_v);
    rec.observe("mass", mass);
    rec.observe("min_density", min_m);
    rec.observe("density_mode", grid.node(argmax(&sol.m)));
    rec.observe("scalar_curvature_min", grid.node(argmin(&sol.scalar_curvature)));
    rec.check(
        "elliptic residual within tolerance",
        sol.residual <= opts.tolerance,
        format!("sup|E(v)| = {:e}, tolerance {:e}", sol.residual, opts.tolerance),
    );
    rec.check(
        "density normalised",
        (mass - 1.0).abs() <= MASS_TOLERANCE,
        format!("total mass {mass}"),
    );
    rec.check("density positive", min_m > 0.0, format!("min density {min_m:e}"));
    rec.say(format!(
        "residual {:e}, sup|v| {:e}, full-system residuals fpk {:e} hjb {:e}",
        sol.residual, sup_v, full.fpk, full.hjb
    ));

    let mut header = vec!["node".to_string()];
    header.extend(coord_header(&grid));
    header.extend(["v", "m", "scalar_curvature", "mean_field_curvature"].map(String::from));
    let rows = (0..grid.len())
        .map(|i| {
            let mut r = vec![i.to_string()];
            r.extend(grid.node(i).iter().map(|&x| num(x)));
            r.extend([sol.v[i], sol.m[i], sol.scalar_curvature[i], sol.mean_field_curvature[i]].map(num));
            r
        })
        .collect();
    write_records(rec, "fields.csv", header, rows)?;
    save_heatmap(rec, &grid, "density.svg", "stationary density", &sol.m)?;
    save_heatmap(rec, &grid, "value.svg", "stationary value", &sol.v)?;
    save_heatmap(rec, &grid, "scalar_curvature.svg", "scalar curvature", &sol.scalar_curvature)?;
    Ok(())
}

#[derive(Serialize)]
struct EdgeRow {
    source: usize,
    target: usize,
    distance: f64,
    kappa: f64,
}

fn load_graph(cfg: &RunConfig, exp: &GraphExperiment, rec: &mut Recorder) -> Result<Option<(GeometricGraph, f64)>> {
    if let Some(path) = &exp.edges {
        let path = if path.is_absolute() { path.clone() } else { cfg.base_dir.join(path) };
        let file = File::open(&path).with_context(|| format!("opening edge list {}", path.display()))?;
        let graph = GeometricGraph::read_edge_list(file).with_context(|| format!("reading {}", path.display()))?;
        return Ok(Some((graph, exp.eps.unwrap_or(1.0))));
    }
    let Some(sample) = &exp.sample else {
        return Ok(None);
    };
    let geom = cfg
        .geometry
        .as_ref()
        .ok_or_else(|| anyhow!("geometry block is required for sampled graphs"))?
        .build()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let points = sample_points(&geom, sample.nodes, sample.density.as_ref(), &mut rng)?;
    let graph = GeometricGraph::from_points(&geom, points, sample.eps)?;
    let mut buf = Vec::new();
    graph.write_edge_list(&mut buf)?;
    rec.write_text("graph.csv", std::str::from_utf8(&buf)?)?;
    let mut header = vec!["node".to_string()];
    header.extend((0..geom.dim()).map(|k| format!("x{k}")));
    let rows = graph
        .positions()
        .unwrap_or(&[])
        .iter()
        .enumerate()
        .map(|(i, p)| std::iter::once(i.to_string()).chain(p.iter().map(|&x| num(x))).collect())
        .collect();
    write_records(rec, "nodes.csv", header, rows)?;
    rec.observe("nodes", graph.len());
    rec.observe("average_degree", graph.average_degree());
    Ok(Some((graph, exp.eps.unwrap_or(sample.eps))))
}

/// At most this many edge curvatures are echoed to standard output.
const PRINT_LIMIT: usize = 20;

pub fn graph_curvature(cfg: &RunConfig, rec: &mut Recorder) -> Result<()> {
    let Experiment::Graph(exp) = &cfg.experiment else {
        unreachable!("experiment block parsed for graph-curvature");
    };
    if let Some((graph, eps)) = load_graph(cfg, exp, rec)? {
        let pairs: Vec<(usize, usize)> = match &exp.pairs {
            Some(p) => p.iter().map(|&[a, b]| (a, b)).collect(),
            None => graph.edges().iter().map(|&(a, b, _)| (a, b)).collect(),
        };
        if let Some(&(a, b)) = pairs.iter().find(|&&(a, b)| a >= graph.len() || b >= graph.len()) {
            bail!("experiment.pairs: pair ({a}, {b}) names a node beyond {}", graph.len());
        }
        let rows = pairs
            .par_iter()
            .map(|&(a, b)| {
                let kappa = graph.ollivier_edge(a, b, eps)?;
                let distance = graph.shortest_paths(a, f64::INFINITY)[b];
                Ok(EdgeRow {
                    source: a,
                    target: b,
                    distance,
                    kappa,
                })
            })
            .collect::<mfgeo_core::Result<Vec<_>>>()?;
        let max_kappa = rows.iter().map(|r| r.kappa).fold(f64::NEG_INFINITY, f64::max);
        let mean = rows.iter().map(|r| r.kappa).sum::<f64>() / rows.len().max(1) as f64;
        rec.observe("edges_evaluated", rows.len());
        rec.observe("mean_kappa", mean);
        rec.observe("ball_radius", eps);
        rec.check(
            "kappa <= 1",
            rows.iter().all(|r| r.kappa <= 1.0 + BOUND_SLACK),
            format!("max kappa {max_kappa}"),
        );
        for r in rows.iter().take(PRINT_LIMIT) {
            rec.say(format!("kappa({}, {}) = {}", r.source, r.target, short(r.kappa)));
        }
        if rows.len() > PRINT_LIMIT {
            rec.say(format!("... {} more, mean kappa {}", rows.len() - PRINT_LIMIT, short(mean)));
        }
        rec.write_csv("curvature.csv", rows)?;
    }
    if let Some(c) = &exp.continuous {
        let geom = cfg
            .geometry
            .as_ref()
            .ok_or_else(|| anyhow!("geometry block is required for continuous curvature"))?
            .build()?;
        let norm = geom.norm_sq_at(&c.point, &c.direction).sqrt();
        if !(norm > 0.0) {
            bail!("experiment.continuous.direction must be nonzero");
        }
        let v: Vec<f64> = c.direction.iter().map(|x| x / norm).collect();
        let target = geom
            .curvature_data_at(&c.point, Some(&v))?
            .ricci
            .ok_or_else(|| anyhow!("no Ricci curvature available for this geometry"))?;
        let (values, limit) = extrapolated_curvature(&geom, &c.point, &v, &c.eps, c.delta_ratio, &c.quadrature)?;
        rec.observe("continuous_extrapolated", limit);
        rec.observe("continuous_ricci", target);
        let tol = (0.1 * target.abs()).max(0.05);
        rec.check(
            "extrapolated coarse curvature matches Ricci",
            (limit - target).abs() <= tol,
            format!("limit {limit}, Ric(v, v) = {target}, tolerance {tol}"),
        );
        rec.say(format!("extrapolated rescaled curvature {} (Ric(v, v) = {})", short(limit), short(target)));
        let chart = line_chart(
            "rescaled coarse curvature",
            Axes {
                x_label: "eps",
                y_label: "2 (n + 2) kappa / eps^2",
                ..Default::default()
            },
            &[
                Series {
                    label: "quadrature".into(),
                    points: values.iter().map(|c| (c.eps, c.rescaled)).collect(),
                },
                Series {
                    label: "extrapolated".into(),
                    points: vec![(0.0, limit)],
                },
                Series {
                    label: "Ric(v, v)".into(),
                    points: vec![(0.0, target), (c.eps.iter().copied().fold(0.0, f64::max), target)],
                },
            ],
        );
        rec.write_csv("continuous.csv", values)?;
        rec.write_text("continuous.svg", &chart)?;
    }
    Ok(())
}

pub fn graph_converge(cfg: &RunConfig, rec: &mut Recorder) -> Result<()> {
    let Experiment::Converge(spec) = &cfg.experiment else {
        unreachable!("experiment block parsed for graph-converge");
    };
    let geom = cfg
        .geometry
        .as_ref()
        .ok_or_else(|| anyhow!("geometry block is required"))?
        .build()?;
    let report = convergence_experiment(&geom, spec)?;
    rec.observe("target_ricci", report.target_ricci);
    rec.observe("summary", &report.summary);
    let s = &report.summary;
    let biases: Vec<f64> = s.iter().map(|r| r.bias.abs()).collect();
    let trend = biases.windows(2).all(|w| w[1] <= w[0]);
    rec.check(
        "|bias| nonincreasing in N",
        trend,
        format!(
            "|bias| by N: {}",
            s.iter().map(|r| format!("{}: {:.4}", r.n, r.bias.abs())).collect::<Vec<_>>().join(", ")
        ),
    );
    if let Some(last) = s.last() {
        let covers = last.ci_low <= last.target && last.target <= last.ci_high;
        rec.observe("largest_n_ci_contains_target", covers);
        rec.check(
            "no empty balls at the largest N",
            last.trials > 0,
            format!("{} trials, {} skipped", last.trials, last.skipped),
        );
    }
    for r in s {
        rec.say(format!(
            "N = {}: eps {:.4}, mean {:.4} +- {:.4} (target {:.4}, {} trials, {} skipped)",
            r.n, r.eps, r.mean, r.std_err, r.target, r.trials, r.skipped
        ));
    }
    let chart = line_chart(
        "rescaled graph curvature",
        Axes {
            x_label: "N",
            y_label: "2 (n + 2) kappa_G / eps^2",
            log_x: true,
            ..Default::default()
        },
        &[
            Series {
                label: "mean".into(),
                points: s.iter().map(|r| (r.n as f64, r.mean)).collect(),
            },
            Series {
                label: "95% CI low".into(),
                points: s.iter().map(|r| (r.n as f64, r.ci_low)).collect(),
            },
            Series {
                label: "95% CI high".into(),
                points: s.iter().map(|r| (r.n as f64, r.ci_high)).collect(),
            },
            Series {
                label: "target".into(),
                points: s.iter().map(|r| (r.n as f64, r.target)).collect(),
            },
        ],
    );
    rec.write_csv("trials.csv", &report.rows)?;
    rec.write_csv("summary.csv", &report.summary)?;
    rec.write_text("convergence.svg", &chart)?;
    Ok(())
}

#[derive(Serialize)]
struct DiscrepancyRow {
    drift: &'static str,
    particles: usize,
    seed: u64,
    time: f64,
    w1: f64,
    bin_radius: f64,
    reflections: u64,
}

#[derive(Serialize)]
struct RatioRow {
    drift: &'static str,
    particles: usize,
    mean_w1: f64,
}

#[derive(Serialize)]
struct HolderRow {
    lag: f64,
    w1: f64,
}

fn drift_name(d: DriftSource) -> &'static str {
    match d {
        DriftSource::Zero => "zero",
        DriftSource::Mfg => "mfg",
    }
}

pub fn sde_validate(cfg: &RunConfig, rec: &mut Recorder) -> Result<()> {
    let Experiment::Sde(exp) = &cfg.experiment else {
        unreachable!("experiment block parsed for sde-validate");
    };
    let grid = build_grid(cfg)?;
    let m0 = initial_density(&grid, &cfg.coupling.initial)?;
    let (horizon, steps) = (cfg.numerics.horizon, cfg.numerics.steps);
    let dt = horizon / steps as f64;
    let mut rows = Vec::new();
    let mut means = Vec::new();
    for &source in &exp.drifts {
        let name = drift_name(source);
        let (flow, slices) = match source {
            DriftSource::Zero => (heat_flow(&grid, &m0, horizon, steps)?, Vec::new()),
            DriftSource::Mfg => {
                let problem = MfgProblem {
                    horizon,
                    steps,
                    m0: m0.clone(),
                    running: cfg.coupling.running.clone(),
                    terminal: cfg.coupling.terminal.clone(),
                };
                let sol = match picard_solve(&grid, &problem, &cfg.numerics.picard) {
                    Ok(s) => s,
                    Err(Error::NotConverged(s)) => {
                        rec.mark_not_converged();
                        rec.check(
                            "picard converged",
                            false,
                            format!("residual {:e} after {} iterations", s.last_residual(), s.iterations()),
                        );
                        return Ok(());
                    }
                    Err(e) => return Err(e.into()),
                };
                let sup_b = sol.drift.iter().flatten().fold(0.0f64, |a, b| a.max(b.abs()));
                rec.observe("mfg_max_drift_component", sup_b);
                rec.observe("mfg_iterations", sol.iterations());
                (sol.m, sol.drift)
            }
        };
        let drift = if slices.is_empty() {
            Drift::Zero
        } else {
            Drift::Grid {
                grid: &grid,
                slices: &slices,
                dt,
            }
        };
        for &n in &exp.particles {
            let mut finals = Vec::new();
            for &seed in &exp.seeds {
                let init = sample_from_grid_density(&grid, &m0, n, seed)?;
                let spec = SdeSpec {
                    horizon,
                    steps,
                    substeps: exp.substeps,
                    seed,
                    record_every: steps,
                };
                let run = simulate(grid.geometry(), &init, &drift, &spec)?;
                rec.check(
                    &format!("reflections within budget ({name}, N = {n}, seed {seed})"),
                    !run.excess_reflections,
                    format!("{} of {} particle steps", run.reflections, run.particle_steps),
                );
                let d = empirical_vs_fpk(&grid, &run.snapshots, &flow, dt, exp.block)?;
                finals.push(d.last().map_or(f64::NAN, |x| x.w1));
                if n == *exp.particles.iter().max().unwrap() && seed == exp.seeds[0] {
                    let path = rec.dir().join(format!("particles_{name}.csv"));
                    let file = File::create(&path).with_context(|| format!("writing {}", path.display()))?;
                    run.snapshots.last().unwrap().write_csv(file)?;
                    rec.write_text_registered(&format!("particles_{name}.csv"));
                }
                rows.extend(d.iter().map(|x| DiscrepancyRow {
                    drift: name,
                    particles: n,
                    seed,
                    time: x.time,
                    w1: x.w1,
                    bin_radius: x.bin_radius,
                    reflections: run.reflections,
                }));
            }
            means.push(RatioRow {
                drift: name,
                particles: n,
                mean_w1: finals.iter().sum::<f64>() / finals.len() as f64,
            });
        }
        let mine: Vec<&RatioRow> = means.iter().filter(|r| r.drift == name).collect();
        let lo = mine.iter().min_by_key(|r| r.particles).unwrap();
        let hi = mine.iter().max_by_key(|r| r.particles).unwrap();
        if hi.particles > lo.particles {
            let ratio = lo.mean_w1 / hi.mean_w1;
            rec.observe(&format!("w1_ratio_{name}"), ratio);
            rec.say(format!(
                "{name} drift: mean W1 at t = T {:.5} (N = {}) vs {:.5} (N = {}), ratio {:.3}",
                lo.mean_w1, lo.particles, hi.mean_w1, hi.particles, ratio
            ));
            if let Some([a, b]) = exp.ratio_band {
                rec.check(
                    &format!("W1 ratio in band ({name} drift)"),
                    ratio >= a && ratio <= b,
                    format!("ratio {ratio}, band [{a}, {b}]"),
                );
            }
        }
    }
    rec.write_csv("discrepancy.csv", &rows)?;
    rec.write_csv("ratios.csv", &means)?;
    let series: Vec<Series> = exp
        .drifts
        .iter()
        .map(|&d| Series {
            label: format!("{} drift", drift_name(d)),
            points: means
                .iter()
                .filter(|r| r.drift == drift_name(d))
                .map(|r| (r.particles as f64, r.mean_w1))
                .collect(),
        })
        .collect();
    let chart = line_chart(
        "W1(empirical, FPK) at t = T",
        Axes {
            x_label: "particles",
            y_label: "mean W1",
            log_x: true,
            log_y: true,
        },
        &series,
    );
    rec.write_text("discrepancy.svg", &chart)?;
    if let Some(h) = &exp.holder {
        holder(&grid, h, rec)?;
    }
    Ok(())
}

fn holder(grid: &Grid, h: &HolderSpec, rec: &mut Recorder) -> Result<()> {
    grid.geometry().check_point(&h.point)?;
    let centre = nearest_node(grid, &h.point);
    let mut m0 = vec![0.0; grid.len()];
    m0[centre] = 1.0 / grid.weights()[centre];
    let dt = h.horizon / h.steps as f64;
    let flow = heat_flow(grid, &m0, h.horizon, h.steps)?;
    let (samples, fit) = flow_holder(grid, &flow, dt, &h.lags, h.block)?;
    rec.observe("holder_exponent", fit.exponent);
    rec.observe("holder_prefactor", fit.prefactor);
    let [a, b] = h.band;
    rec.check(
        "Hoelder exponent of the PDE flow in band",
        fit.exponent >= a && fit.exponent <= b,
        format!("exponent {}, band [{a}, {b}]", fit.exponent),
    );
    rec.say(format!("Hoelder exponent of the heat flow {:.3}", fit.exponent));
    let chart = line_chart(
        "W1(m_s, m_t) against lag",
        Axes {
            x_label: "t - s",
            y_label: "W1",
            log_x: true,
            log_y: true,
        },
        &[Series {
            label: format!("slope {:.3}", fit.exponent),
            points: samples.clone(),
        }],
    );
    rec.write_csv("holder.csv", samples.iter().map(|&(lag, w1)| HolderRow { lag, w1 }))?;
    rec.write_text("holder.svg", &chart)?;
    Ok(())
}
