use mfgeo_core::discretization::{Grid, ScalarFunction};
use mfgeo_core::geometry::{ChartGeometry, FourierMode};
use mfgeo_core::mfg::*;
use mfgeo_core::sde::*;

fn normalised(grid: &Grid, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let m = grid.sample(&f);
    let z = grid.integrate(&m);
    m.into_iter().map(|v| v / z).collect()
}

#[test]
fn particles_follow_the_equilibrium_flow() {
    let grid = Grid::new(ChartGeometry::flat_torus(vec![1.0, 1.0]).unwrap(), 32).unwrap();
    let m0 = normalised(&grid, |x| 1.0 + 0.8 * (2.0 * std::f64::consts::PI * x[1]).sin());
    let running = Coupling {
        kind: CouplingKind::Anchored,
        kernel: Kernel::Wendland { radius: 0.2 },
        profile: ScalarFunction::Fourier {
            constant: 0.0,
            modes: vec![FourierMode {
                k: [1, 0],
                cos: 4.0,
                sin: 0.0,
            }],
        },
        strength: 0.5,
        renormalization: Renormalization::None,
    };
    let problem = MfgProblem {
        horizon: 0.5,
        steps: 25,
        m0: m0.clone(),
        running,
        terminal: Coupling::zero(),
    };
    let sol = picard_solve(&grid, &problem, &PicardOptions::default()).unwrap();
    let dt = problem.horizon / problem.steps as f64;
    let init = sample_from_grid_density(&grid, &m0, 4000, 7).unwrap();
    let spec = SdeSpec {
        horizon: 0.5,
        steps: 25,
        substeps: 4,
        seed: 7,
        record_every: 25,
    };
    let run = simulate(
        grid.geometry(),
        &init,
        &Drift::Grid {
            grid: &grid,
            slices: &sol.drift,
            dt,
        },
        &spec,
    )
    .unwrap();
    let d = empirical_vs_fpk(&grid, &run.snapshots, &sol.m, dt, 4).unwrap();
    // the drift moves mass by O(0.1); the residual mismatch is sampling noise
    let moved = mfgeo_core::transport::w1_subsampled(&grid, &sol.m[0], sol.m.last().unwrap(), 4).unwrap().0;
    assert!(moved > 3.0 * d[1].w1, "moved {moved}, mismatch {:?}", d);
    assert!(d[1].w1 < 2.0 * d[0].w1, "{d:?}");
}

#[test]
fn disk_particles_rarely_reflect() {
    // truncation at hyperbolic radius 2 atanh(0.95) ≈ 3.7
    let disk = ChartGeometry::poincare_disk(2, 0.95).unwrap();
    let init = ParticleEnsemble::at_point(&[0.0, 0.0], 2000);
    let spec = SdeSpec {
        horizon: 0.5,
        steps: 100,
        substeps: 1,
        seed: 2,
        record_every: 100,
    };
    let run = simulate(&disk, &init, &Drift::Zero, &spec).unwrap();
    assert!(!run.excess_reflections, "{} of {}", run.reflections, run.particle_steps);
}
