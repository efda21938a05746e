//! The statistical checks and the end-to-end pipeline.

use perihom::model::builtin;
use perihom::verify::{check_etp1, check_etp2, check_gaussianity, full_report};
use perihom::{homogenize, simulate_paths, EffectiveLaw, Error, LevyTripletModel, PathEnsemble, RunConfig, SimulationConfig, TorusGrid};

fn ensembles(name: &str, eps: &[f64], n_paths: usize, seed: u64) -> (LevyTripletModel, TorusGrid, perihom::Homogenized, Vec<PathEnsemble>) {
    let m = LevyTripletModel::new(builtin::by_name(name).unwrap()).unwrap();
    let gr = TorusGrid::uniform(m.geometry().clone(), 64).unwrap();
    let h = homogenize(&m, &gr).unwrap();
    let ens = eps
        .iter()
        .map(|&e| simulate_paths(&m, &h.law, Some((&h.corrector, &gr)), &SimulationConfig::new(0.01, 1.0, e, n_paths, seed)).unwrap())
        .collect();
    (m, gr, h, ens)
}

fn config(model: &str, eps: &[f64], n_paths: usize) -> RunConfig {
    let mut c = RunConfig::default();
    c.model = model.into();
    c.grid = 64;
    c.sweep.eps = eps.to_vec();
    c.sweep.n_paths = n_paths;
    c
}

#[test]
fn sweeps_need_two_decreasing_eps() {
    let (_, _, h, ens) = ensembles("brownian", &[0.5, 0.25], 200, 1);
    assert!(matches!(check_etp2(&ens[..1], &h.law, 0.05), Err(Error::InsufficientEps(1))));
    let reversed: Vec<PathEnsemble> = ens.iter().rev().cloned().collect();
    assert!(matches!(check_etp2(&reversed, &h.law, 0.05), Err(Error::InsufficientEps(2))));
}

#[test]
fn noisy_characteristics_ask_for_more_paths() {
    let (_, _, h, ens) = ensembles("harmonic-mean", &[0.5, 0.25], 20, 1);
    assert!(matches!(check_etp2(&ens, &h.law, 1e-4), Err(Error::InsufficientPaths { .. })));
}

#[test]
fn constant_model_characteristic_matches_exactly() {
    let (_, _, h, ens) = ensembles("constant-levy", &[0.5, 0.25], 200, 1);
    let c = check_etp2(&ens, &h.law, 0.05).unwrap();
    assert!(c.passed);
    assert!(c.rows.iter().all(|r| r.discrepancy < 1e-12 && r.drift_characteristic == 0.0));
}

#[test]
fn gaussianity_needs_a_thousand_paths() {
    let (_, _, h, ens) = ensembles("brownian", &[0.5], 999, 1);
    assert!(matches!(check_gaussianity(&ens[0], &h.law, 0.01), Err(Error::Precondition(_))));
}

#[test]
fn degenerate_limit_is_a_vacuous_pass() {
    let (_, _, h, ens) = ensembles("deterministic", &[0.5], 1000, 1);
    let g = check_gaussianity(&ens[0], &h.law, 0.01).unwrap();
    assert!(g.vacuous && g.passed && g.rank == 0 && g.warning.is_some());
}

#[test]
fn wrong_sigma_is_rejected() {
    let (_, _, h, ens) = ensembles("brownian", &[0.5], 4000, 3);
    let wrong = EffectiveLaw::given("brownian", h.law.mean_drift.clone(), vec![vec![1.3]]);
    assert!(check_gaussianity(&ens[0], &h.law, 0.01).unwrap().passed);
    assert!(!check_gaussianity(&ens[0], &wrong, 0.01).unwrap().passed);
}

#[test]
fn jumps_below_the_cutoff_are_never_counted() {
    let (m, gr, h, _) = ensembles("asymmetric-atom", &[], 0, 0);
    let beta = h.corrector.sup_norm();
    let delta = 0.1;
    let cut = delta / (0.4 + 2.0 * beta);
    // above the cutoff the count grows like ε⁻², below it vanishes
    let eps = [0.3, 0.9 * cut, 0.5 * cut];
    let ens: Vec<PathEnsemble> = eps
        .iter()
        .map(|&e| {
            let cfg = SimulationConfig {
                deltas: vec![delta],
                ..SimulationConfig::new(0.01, 1.0, e, 300, 5)
            };
            simulate_paths(&m, &h.law, Some((&h.corrector, &gr)), &cfg).unwrap()
        })
        .collect();
    let c = check_etp1(&ens, &m, &gr, beta, None, 0.05).unwrap();
    let t = &c.thresholds[0];
    assert!((t.deterministic_cutoff - cut).abs() < 1e-15);
    assert!(t.zero_below_cutoff && t.decreasing && t.passed, "{c:?}");
    assert!(c.rows[0].cells[0].count.mean > 0.0);
    assert_eq!(c.rows[1].cells[0].count.mean, 0.0);
    assert_eq!(c.rows[2].cells[0].count.mean, 0.0);
}

#[test]
fn jump_free_models_pass_the_jump_check_vacuously() {
    let (m, gr, h, ens) = ensembles("harmonic-mean", &[0.5, 0.25], 100, 1);
    let c = check_etp1(&ens, &m, &gr, h.corrector.sup_norm(), None, 0.05).unwrap();
    assert!(c.vacuous && c.passed);
}

#[test]
fn harmonic_mean_end_to_end() {
    let r = full_report(&config("builtin:harmonic-mean", &[0.2, 0.1], 2000)).unwrap();
    assert!(r.etp2.passed, "{}", r.summary());
    assert!((r.sigma_solver[0][0] - 3f64.sqrt()).abs() < 1e-3);
    assert!(r.ergodicity.is_none());
}

#[test]
fn constant_model_end_to_end() {
    let r = full_report(&config("builtin:constant-levy", &[0.2, 0.1], 1000)).unwrap();
    assert!(r.passed, "{}", r.summary());
    assert!(r.law.reduced_path_used);
    assert!(r.ergodicity.is_some());
    assert!(r.etp1.rows.iter().all(|row| row.cells[0].envelope_rms.is_some()));
}

#[test]
fn pipeline_errors_name_their_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let broken = dir.join("broken.model");
    std::fs::write(&broken, "name = 3").unwrap();
    let e = full_report(&config(broken.to_str().unwrap(), &[0.2, 0.1], 1000)).unwrap_err();
    assert_eq!(e.stage(), Some("parse"));
    assert!(matches!(e.root(), Error::Parse(_)));

    let mut bad = builtin::asymmetric_atom();
    if let perihom::model::KernelSpec::FiniteActivity { atoms } = &mut bad.jumps {
        atoms[0].rate = perihom::model::TrigPoly::constant(1.0).sin(1.5, &[1]);
    }
    let bad_path = dir.join("bad.model");
    std::fs::write(&bad_path, perihom::model::serialize_model(&bad)).unwrap();
    let e = full_report(&config(bad_path.to_str().unwrap(), &[0.2, 0.1], 1000)).unwrap_err();
    assert_eq!(e.stage(), Some("validate"));

    let e = full_report(&config("builtin:brownian", &[0.2], 1000)).unwrap_err();
    assert_eq!(e.stage(), Some("etp2"));
}

#[test]
fn reports_are_reproducible() {
    let c = config("builtin:asymmetric-atom", &[0.5, 0.25], 1000);
    assert_eq!(full_report(&c).unwrap().to_json(), full_report(&c).unwrap().to_json());
}
