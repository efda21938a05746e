//! Monte Carlo engine against exact laws.

use perihom::model::builtin;
use perihom::simulate::{Initial, SmallJumps};
use perihom::stats::{chi_square_poisson, kolmogorov_pvalue, ks_standard_normal, Estimate};
use perihom::{homogenize, simulate_paths, Homogenized, LevyTripletModel, PathEnsemble, SimulationConfig, TorusGrid};

fn setup(spec: perihom::ModelSpec, n: usize) -> (LevyTripletModel, TorusGrid, Homogenized) {
    let m = LevyTripletModel::new(spec).unwrap();
    let gr = TorusGrid::uniform(m.geometry().clone(), n).unwrap();
    let h = homogenize(&m, &gr).unwrap();
    (m, gr, h)
}

fn run(m: &LevyTripletModel, gr: &TorusGrid, h: &Homogenized, cfg: &SimulationConfig) -> PathEnsemble {
    simulate_paths(m, &h.law, Some((&h.corrector, gr)), cfg).unwrap()
}

#[test]
fn brownian_endpoints_are_standard_normal() {
    let (m, gr, h) = setup(builtin::brownian(), 64);
    for eps in [1.0, 0.1] {
        let cfg = SimulationConfig::new(0.01, 1.0, eps, 10_000, 5);
        let e = run(&m, &gr, &h, &cfg);
        let y: Vec<f64> = e.endpoints.iter().map(|v| v[0]).collect();
        let mean = Estimate::of(y.iter().copied());
        assert!(mean.mean.abs() < 3.0 * mean.se, "ε = {eps}: {mean:?}");
        let var = Estimate::of(y.iter().map(|v| v * v));
        assert!((var.mean - 1.0).abs() < 3.0 * var.se, "ε = {eps}: {var:?}");
        assert!(kolmogorov_pvalue(ks_standard_normal(&y), y.len()) > 1e-3);
    }
}

#[test]
fn constant_rate_jump_counts_are_poisson() {
    // two atoms of rate 1 over unscaled time 5
    let (m, gr, h) = setup(builtin::constant_levy(), 32);
    let cfg = SimulationConfig::new(0.01, 5.0, 1.0, 10_000, 9);
    let e = run(&m, &gr, &h, &cfg);
    let n = e.n_paths() as f64;
    let mean = e.jump_counts.iter().sum::<u64>() as f64 / n;
    assert!((mean - 10.0).abs() < 3.0 * 10f64.sqrt() / n.sqrt(), "{mean}");
    let test = chi_square_poisson(&e.jump_counts, 10.0);
    assert!(test.p_value > 0.01, "{test:?}");
}

#[test]
fn constant_drift_is_cancelled_exactly() {
    let (m, gr, h) = setup(builtin::deterministic(), 32);
    for eps in [1.0, 0.2, 0.05] {
        let cfg = SimulationConfig::new(0.01, 1.0, eps, 20, 1);
        let e = run(&m, &gr, &h, &cfg);
        for y in &e.endpoints {
            assert!(y[0].abs() < 1e-9, "ε = {eps}: {}", y[0]);
        }
        for inc in &e.increments {
            assert!(inc.iter().all(|v| v.abs() < 1e-9));
        }
    }
}

#[test]
fn constant_model_characteristic_is_exact_and_symmetric() {
    let (m, gr, h) = setup(builtin::convolution_2d(), 16);
    let cfg = SimulationConfig::new(0.02, 0.5, 0.5, 50, 2);
    let e = run(&m, &gr, &h, &cfg);
    for c in &e.ctilde {
        assert!((c[1] - c[2]).abs() <= 1e-12 * c[0].abs().max(1.0));
        assert!(c[0] >= 0.0 && c[3] >= 0.0 && c[0] * c[3] >= c[1] * c[2] - 1e-12);
    }
}

#[test]
fn occupation_of_a_long_path_matches_pi() {
    let (m, gr, h) = setup(builtin::asymmetric_atom(), 32);
    let cfg = SimulationConfig {
        occupation: Some(32),
        initial: Initial::Point { x: vec![0.0] },
        ..SimulationConfig::new(0.002, 5000.0, 1.0, 1, 4)
    };
    let e = run(&m, &gr, &h, &cfg);
    let occ = e.occupation.unwrap();
    let tv: f64 = 0.5 * occ.iter().zip(&h.invariant.weights).map(|(a, b)| (a - b).abs()).sum::<f64>();
    assert!(tv < 0.03, "TV = {tv}");
}

#[test]
fn harmonic_characteristic_averages_to_root_three() {
    // small dt keeps the O(dt) invariant-measure bias of the Euler scheme
    // below the Monte Carlo band
    let (m, gr, h) = setup(builtin::harmonic_mean(), 256);
    let cfg = SimulationConfig::new(0.0005, 1.0, 0.2, 2000, 13);
    let e = run(&m, &gr, &h, &cfg);
    let c = Estimate::of(e.ctilde.iter().map(|c| c[0]));
    let target = 3f64.sqrt();
    assert!((c.mean - target).abs() < 3.0 * c.se, "{c:?} vs {target}");
}

#[test]
fn halving_the_small_jump_cutoff_stays_within_the_bias_bound() {
    let (m, gr, h) = setup(builtin::stable_like(), 128);
    let base = SimulationConfig::new(0.01, 1.0, 0.5, 4000, 21);
    let at = |cutoff: f64, mode: SmallJumps| {
        let cfg = SimulationConfig {
            small_jump_cutoff: cutoff,
            small_jumps: mode,
            ..base.clone()
        };
        run(&m, &gr, &h, &cfg)
    };
    let var = |e: &PathEnsemble| Estimate::of(e.endpoints.iter().map(|y| y[0] * y[0]));
    let coarse = at(0.2, SmallJumps::Gaussian);
    let fine = at(0.1, SmallJumps::Gaussian);
    let (a, b) = (var(&coarse), var(&fine));
    let bound = coarse.small_jumps.sup_second_moment_below * base.horizon;
    assert!((a.mean - b.mean).abs() <= bound + 3.0 * a.se.hypot(b.se), "{a:?} {b:?} bound {bound}");
    // dropping the small jumps loses at most their second moment
    let dropped = at(0.2, SmallJumps::Drop);
    let d = var(&dropped);
    assert!(d.mean <= a.mean + 3.0 * a.se.hypot(d.se));
    assert!(a.mean - d.mean <= bound + 3.0 * a.se.hypot(d.se));
}
