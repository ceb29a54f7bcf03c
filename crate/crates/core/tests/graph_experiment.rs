use mfgeo_core::discretization::ScalarFunction;
use mfgeo_core::geograph::*;
use mfgeo_core::geometry::{ChartGeometry, FourierMode};

fn torus() -> ChartGeometry {
    ChartGeometry::flat_torus(vec![1.0, 1.0]).unwrap()
}

fn spec(density: Option<ScalarFunction>, sizes: Vec<usize>, trials: usize) -> ConvergenceSpec {
    ConvergenceSpec {
        sizes,
        eps_rule: EpsRule {
            constant: 0.4,
            exponent: None,
        },
        target: vec![0.0, 0.5],
        direction: vec![1.0, 0.0],
        delta_ratio: 1.0,
        seeds: vec![1, 2, 3],
        trials,
        density,
    }
}

#[test]
fn nonuniform_density_sign_matches_weighted_ricci() {
    let density = ScalarFunction::Fourier {
        constant: 1.0,
        modes: vec![FourierMode {
            k: [1, 0],
            cos: 0.5,
            sin: 0.0,
        }],
    };
    let geom = torus();
    let report = convergence_experiment(&geom, &spec(Some(density), vec![2000], 10)).unwrap();
    // -(log μ)'' at the crest of 1 + cos(2πx)/2
    let expected = 0.5 * (2.0 * std::f64::consts::PI).powi(2) * 1.5 / 2.25;
    assert!((report.target_ricci - expected).abs() < 1e-5, "{}", report.target_ricci);
    let s = report.summary[0];
    assert_eq!(s.trials + s.skipped, 30);
    assert!(s.mean > 0.0, "{s:?}");
}

#[test]
fn experiment_is_deterministic() {
    let geom = torus();
    let a = convergence_experiment(&geom, &spec(None, vec![300, 600], 2)).unwrap();
    let b = convergence_experiment(&geom, &spec(None, vec![300, 600], 2)).unwrap();
    assert_eq!(a.rows, b.rows);
    assert_eq!(a.target_ricci, 0.0);
    assert_eq!(a.rows.len(), 12);
}

#[test]
fn edge_list_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p3.csv");
    std::fs::write(&path, "source,target,weight\n0,1,1\n1,2,1\n").unwrap();
    let g = GeometricGraph::read_edge_list(std::fs::File::open(&path).unwrap()).unwrap();
    assert_eq!(g.len(), 3);
    assert!((g.ollivier_edge(0, 1, 1.0).unwrap() - 0.5).abs() < 1e-12);
}

#[test]
fn sampled_disk_graph_has_negative_mean_curvature_trend() {
    // continuous check on the disk through the same quadrature route the CLI uses
    let disk = ChartGeometry::poincare_disk(2, 0.95).unwrap();
    let (values, limit) =
        extrapolated_curvature(&disk, &[0.0, 0.0], &[0.5, 0.0], &[0.2, 0.1, 0.05], 0.5, &QuadratureSpec::default()).unwrap();
    assert!(values.windows(2).all(|w| w[0].kappa < w[1].kappa));
    assert!(limit < -0.9 && limit > -1.1);
}
