//! Statistical checks of the scaled process against the solver's effective
//! law: convergence of the modified second characteristic, vanishing of the
//! large-jump measure, and Gaussianity of the endpoints.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::effective::{homogenize, EffectiveLaw, Matrix};
use crate::error::{Error, Result};
use crate::grid::TorusGrid;
use crate::invariant::{estimate_ergodicity, ErgodicityEstimate};
use crate::model::{load_model, model_hash, validate, LevyTripletModel};
use crate::simulate::{simulate_paths, PathEnsemble};
use crate::stats::{self, ChiSquareTest, Estimate};

pub const SCHEMA_VERSION: u32 = 1;

/// Smallest ensemble accepted by [`check_gaussianity`].
pub const MIN_GAUSSIAN_PATHS: usize = 1000;

fn check_sweep(ensembles: &[PathEnsemble]) -> Result<()> {
    let decreasing = ensembles.windows(2).all(|w| w[1].config.eps < w[0].config.eps);
    if ensembles.len() < 2 || !decreasing {
        return Err(Error::InsufficientEps(ensembles.len()));
    }
    let h = ensembles[0].config.horizon;
    if ensembles.iter().any(|e| e.config.horizon != h) {
        return Err(Error::Precondition("ensembles use different horizons".into()));
    }
    Ok(())
}

fn max_abs(m: &Matrix) -> f64 {
    m.iter().flatten().fold(0.0, |a, v| a.max(v.abs()))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Etp2Row {
    pub eps: f64,
    pub mean: Matrix,
    pub se: Matrix,
    /// `max_ij |mean_ij − TΣ_ij|`
    pub discrepancy: f64,
    /// standard error of the entry attaining `discrepancy`
    pub discrepancy_se: f64,
    pub relative: f64,
    /// `max |B^ε_T|` over paths; zero by the centring
    pub drift_characteristic: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Etp2Check {
    pub horizon: f64,
    pub target: Matrix,
    pub tol: f64,
    pub rows: Vec<Etp2Row>,
    /// smallest-ε entries within `max(tol·|TΣ|, 3 se)`
    pub within_tolerance: bool,
    /// discrepancies non-increasing as ε decreases, up to one standard error
    /// of each consecutive difference
    pub monotone: bool,
    pub passed: bool,
}

/// Compares the ensemble mean of `C̃^ε_T` with `TΣ` along a decreasing `ε`
/// sweep.
pub fn check_etp2(ensembles: &[PathEnsemble], law: &EffectiveLaw, tol: f64) -> Result<Etp2Check> {
    check_sweep(ensembles)?;
    let d = law.dim();
    let horizon = ensembles[0].config.horizon;
    let target: Matrix = law.sigma.iter().map(|r| r.iter().map(|v| v * horizon).collect()).collect();
    let scale = max_abs(&target);
    let mut rows = Vec::new();
    for e in ensembles {
        if e.dim != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: e.dim,
            });
        }
        let mut mean = vec![vec![0.0; d]; d];
        let mut se = vec![vec![0.0; d]; d];
        let (mut disc, mut disc_se) = (0.0f64, 0.0);
        for i in 0..d {
            for j in 0..d {
                let est = Estimate::of(e.ctilde.iter().map(|c| c[i * d + j]));
                mean[i][j] = est.mean;
                se[i][j] = est.se;
                let gap = (est.mean - target[i][j]).abs();
                if gap > disc || (i == 0 && j == 0) {
                    disc = gap;
                    disc_se = est.se;
                }
            }
        }
        let worst_se = max_abs(&se);
        if worst_se > tol * scale {
            return Err(Error::InsufficientPaths {
                se: worst_se,
                limit: tol * scale,
            });
        }
        let drift = e.drift_characteristic.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
        rows.push(Etp2Row {
            eps: e.config.eps,
            mean,
            se,
            discrepancy: disc,
            discrepancy_se: disc_se,
            relative: if scale > 0.0 { disc / scale } else { disc },
            drift_characteristic: drift,
        });
    }
    let last = rows.last().expect("at least two rows");
    let within_tolerance = (0..d).all(|i| {
        (0..d).all(|j| (last.mean[i][j] - target[i][j]).abs() <= (tol * scale).max(3.0 * last.se[i][j]))
    });
    let monotone = rows.windows(2).all(|w| {
        let allowance = w[0].discrepancy_se.hypot(w[1].discrepancy_se);
        w[1].discrepancy <= w[0].discrepancy + allowance
    });
    Ok(Etp2Check {
        horizon,
        target,
        tol,
        within_tolerance,
        monotone,
        passed: within_tolerance && monotone,
        rows,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Etp1Cell {
    pub delta: f64,
    /// mean count of corrected scaled jumps with norm above `delta`
    pub count: Estimate,
    /// the same for the raw scaled jumps `εy`
    pub raw_count: Estimate,
    /// `128Γε²T/(γδ⁴) · (sup_x ∫_{|y|≥δ/2ε} |y|²ν)²`
    pub envelope_mean_square: Option<f64>,
    /// `(8√2 (Γ/γ)^{1/2} ε T^{1/2}/δ² + 4T/δ²) · sup_x ∫_{|y|≥δ/2ε} |y|²ν`
    pub envelope_rms: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Etp1Row {
    pub eps: f64,
    pub cells: Vec<Etp1Cell>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Etp1Threshold {
    pub delta: f64,
    /// Below this `ε` every corrected scaled jump is shorter than `delta`:
    /// `δ / (max |y| + 2‖β‖_∞)`.
    pub deterministic_cutoff: f64,
    pub zero_below_cutoff: bool,
    /// strictly decreasing while positive
    pub decreasing: bool,
    pub below_tol: bool,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Etp1Check {
    pub vacuous: bool,
    pub tol: f64,
    pub rows: Vec<Etp1Row>,
    pub thresholds: Vec<Etp1Threshold>,
    pub passed: bool,
}

/// `sup_x ∫_{|y| ≥ r} |y|² ν(x,dy)` over the grid nodes.
pub fn sup_tail_second_moment(model: &LevyTripletModel, grid: &TorusGrid, r: f64) -> f64 {
    let mut x = vec![0.0; model.dim()];
    let mut rates = Vec::new();
    let mut sup = 0.0f64;
    for idx in 0..grid.len() {
        grid.point(idx, &mut x);
        model.rates_at(&x, &mut rates);
        // `+ 0.0` turns an empty sum's -0.0 into 0.0
        sup = sup.max(model.kernel().second_moment_above(r, &x, model.freq(), &rates) + 0.0);
    }
    sup
}

/// Scores the large-jump counts recorded during simulation. `beta_sup` is
/// `‖β‖_∞`; `ergodicity` enables the reference envelope.
pub fn check_etp1(
    ensembles: &[PathEnsemble],
    model: &LevyTripletModel,
    grid: &TorusGrid,
    beta_sup: f64,
    ergodicity: Option<&ErgodicityEstimate>,
    tol: f64,
) -> Result<Etp1Check> {
    check_sweep(ensembles)?;
    let deltas = ensembles[0].config.deltas.clone();
    if ensembles.iter().any(|e| e.config.deltas != deltas) {
        return Err(Error::Precondition("ensembles log different jump thresholds".into()));
    }
    let vacuous = model.kernel().is_none();
    let horizon = ensembles[0].config.horizon;
    let rows: Vec<Etp1Row> = ensembles
        .iter()
        .map(|e| Etp1Row {
            eps: e.config.eps,
            cells: deltas
                .iter()
                .enumerate()
                .map(|(k, &delta)| {
                    let tail = (!vacuous).then(|| sup_tail_second_moment(model, grid, delta / (2.0 * e.config.eps)));
                    let env = ergodicity.zip(tail).map(|(erg, tail)| {
                        let eps = e.config.eps;
                        let ms = 128.0 * erg.big_gamma * eps * eps * horizon / (erg.gamma * delta.powi(4)) * tail * tail;
                        let rms = (8.0 * 2f64.sqrt() * (erg.big_gamma / erg.gamma).sqrt() * eps * horizon.sqrt()
                            / (delta * delta)
                            + 4.0 * horizon / (delta * delta))
                            * tail;
                        (ms, rms)
                    });
                    Etp1Cell {
                        delta,
                        count: Estimate::of(e.exceedances.iter().map(|c| c[k] as f64)),
                        raw_count: Estimate::of(e.raw_exceedances.iter().map(|c| c[k] as f64)),
                        envelope_mean_square: env.map(|v| v.0),
                        envelope_rms: env.map(|v| v.1),
                    }
                })
                .collect(),
        })
        .collect();
    let max_jump = model.kernel().max_jump();
    let thresholds: Vec<Etp1Threshold> = deltas
        .iter()
        .enumerate()
        .map(|(k, &delta)| {
            let cutoff = delta / (max_jump + 2.0 * beta_sup);
            let zero_below_cutoff = rows
                .iter()
                .filter(|r| r.eps < cutoff)
                .all(|r| r.cells[k].count.mean == 0.0);
            let decreasing = rows.windows(2).all(|w| {
                let (a, b) = (w[0].cells[k].count.mean, w[1].cells[k].count.mean);
                b < a || (a == 0.0 && b == 0.0)
            });
            let below_tol = rows.last().map_or(true, |r| r.cells[k].count.mean <= tol);
            Etp1Threshold {
                delta,
                deterministic_cutoff: cutoff,
                zero_below_cutoff,
                decreasing,
                below_tol,
                passed: vacuous || (zero_below_cutoff && decreasing && below_tol),
            }
        })
        .collect();
    let passed = thresholds.iter().all(|t| t.passed);
    Ok(Etp1Check {
        vacuous,
        tol,
        rows,
        thresholds,
        passed,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GaussianityCheck {
    pub eps: f64,
    pub n_paths: usize,
    /// rank of `Σ` used for whitening
    pub rank: usize,
    pub ks: Vec<KsResult>,
    pub wald: Option<ChiSquareTest>,
    pub alpha: f64,
    pub vacuous: bool,
    pub passed: bool,
    pub warning: Option<String>,
}

/// `Σ^{-1/2}` restricted to the range of `Σ` (rows are whitening
/// directions), and the rank.
fn whitening(sigma: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let d = sigma.nrows();
    let eig = SymmetricEigen::new(sigma.clone());
    let top = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..d).filter(|&i| top > 0.0 && eig.eigenvalues[i] > 1e-10 * top).collect();
    let mut w = DMatrix::zeros(keep.len(), d);
    for (r, &i) in keep.iter().enumerate() {
        let s = 1.0 / eig.eigenvalues[i].sqrt();
        for c in 0..d {
            w[(r, c)] = s * eig.eigenvectors[(c, i)];
        }
    }
    (w, keep.len())
}

/// Whitens `Y^ε_T / √T` by the solver's `Σ` and tests each marginal against
/// the standard normal (Kolmogorov–Smirnov) and the covariance against the
/// identity (Wald).
pub fn check_gaussianity(ensemble: &PathEnsemble, law: &EffectiveLaw, alpha: f64) -> Result<GaussianityCheck> {
    let n = ensemble.n_paths();
    if n < MIN_GAUSSIAN_PATHS {
        return Err(Error::Precondition(format!(
            "Gaussianity needs at least {MIN_GAUSSIAN_PATHS} paths, got {n}"
        )));
    }
    let (w, rank) = whitening(&law.sigma_matrix());
    let eps = ensemble.config.eps;
    if rank == 0 {
        return Ok(GaussianityCheck {
            eps,
            n_paths: n,
            rank,
            ks: Vec::new(),
            wald: None,
            alpha,
            vacuous: true,
            passed: true,
            warning: Some("Σ = 0: the limit is degenerate and there is nothing to test".into()),
        });
    }
    let root_t = ensemble.config.horizon.sqrt();
    let z: Vec<Vec<f64>> = ensemble
        .endpoints
        .iter()
        .map(|y| {
            let v = nalgebra::DVector::from_iterator(y.len(), y.iter().map(|v| v / root_t));
            (&w * v).iter().copied().collect()
        })
        .collect();
    let ks: Vec<KsResult> = (0..rank)
        .map(|k| {
            let col: Vec<f64> = z.iter().map(|r| r[k]).collect();
            let statistic = stats::ks_standard_normal(&col);
            KsResult {
                statistic,
                p_value: stats::kolmogorov_pvalue(statistic, n),
            }
        })
        .collect();
    let wald = stats::covariance_wald(&z);
    let passed = ks.iter().all(|k| k.p_value > alpha) && wald.p_value > alpha;
    let warning = (rank < law.dim()).then(|| format!("Σ has rank {rank} < {}; tested on its range", law.dim()));
    Ok(GaussianityCheck {
        eps,
        n_paths: n,
        rank,
        ks,
        wald: Some(wald),
        alpha,
        vacuous: false,
        passed,
        warning,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SigmaMc {
    pub eps: f64,
    /// sample covariance of `Y^ε_T / √T`
    pub value: Matrix,
    pub se: Matrix,
}

impl SigmaMc {
    pub fn of(ensemble: &PathEnsemble) -> SigmaMc {
        let root_t = ensemble.config.horizon.sqrt();
        let rows: Vec<Vec<f64>> = ensemble
            .endpoints
            .iter()
            .map(|y| y.iter().map(|v| v / root_t).collect())
            .collect();
        let (value, se) = stats::covariance(&rows);
        SigmaMc {
            eps: ensemble.config.eps,
            value,
            se,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VerificationReport {
    pub schema_version: u32,
    pub model: String,
    pub model_hash: String,
    pub config: RunConfig,
    pub law: EffectiveLaw,
    pub sigma_solver: Matrix,
    pub sigma_mc: SigmaMc,
    pub ergodicity: Option<ErgodicityEstimate>,
    pub etp2: Etp2Check,
    pub etp1: Etp1Check,
    pub gaussianity: GaussianityCheck,
    pub verdicts: Vec<Verdict>,
    pub passed: bool,
    pub warnings: Vec<String>,
}

impl VerificationReport {
    pub fn to_json(&self) -> String {
        crate::json::to_json(self)
    }

    /// Short human-readable summary.
    pub fn summary(&self) -> String {
        let mut s = format!("model {} ({})\n", self.model, &self.model_hash[..12]);
        s += &format!("Σ solver {:?}\n", self.sigma_solver);
        s += &format!("Σ Monte Carlo (ε = {}) {:?} ± {:?}\n", self.sigma_mc.eps, self.sigma_mc.value, self.sigma_mc.se);
        for r in &self.etp2.rows {
            s += &format!("  ε = {:<6} E C̃_T = {:?}  discrepancy {:.3e}\n", r.eps, r.mean, r.discrepancy);
        }
        for v in &self.verdicts {
            s += &format!("{:<12} {}\n", v.name, if v.passed { "pass" } else { "FAIL" });
        }
        for w in &self.warnings {
            s += &format!("warning: {w}\n");
        }
        s
    }
}

/// Runs the whole pipeline for `cfg`: load and validate the model, solve for
/// `π`, `β` and `Σ`, simulate the `ε` sweep and score it. Errors carry the
/// stage they came from.
pub fn full_report(cfg: &RunConfig) -> Result<VerificationReport> {
    let model = load_model(&cfg.model).map_err(|e| e.at("parse"))?;
    let grid = TorusGrid::uniform(model.geometry().clone(), cfg.grid).map_err(|e| e.at("validate"))?;
    let validation = validate(&model, &grid);
    if !validation.passed() {
        let failed: Vec<String> = validation.failures().map(|c| format!("{}: {}", c.name, c.detail)).collect();
        return Err(Error::InvalidModel(failed.join("; ")).at("validate"));
    }
    let h = homogenize(&model, &grid)?;
    let mut warnings = Vec::new();
    let ergodicity = if model.kernel().is_none() {
        None
    } else {
        match estimate_ergodicity(&h.generator, &h.invariant, cfg.tolerances.ergodicity_horizon) {
            Ok(e) => Some(e),
            Err(e) => {
                warnings.push(format!("no ergodicity estimate, jump envelope omitted: {e}"));
                None
            }
        }
    };
    let mut ensembles = Vec::new();
    for &eps in &cfg.sweep.eps {
        let sim = cfg.sweep.at(eps);
        let ens = simulate_paths(&model, &h.law, Some((&h.corrector, &grid)), &sim).map_err(|e| e.at("simulate"))?;
        ensembles.push(ens);
    }
    let etp2 = check_etp2(&ensembles, &h.law, cfg.tolerances.etp2).map_err(|e| e.at("etp2"))?;
    let etp1 = check_etp1(
        &ensembles,
        &model,
        &grid,
        h.corrector.sup_norm(),
        ergodicity.as_ref(),
        cfg.tolerances.etp1,
    )
    .map_err(|e| e.at("etp1"))?;
    let last = ensembles.last().expect("sweep has at least two values");
    let gaussianity = check_gaussianity(last, &h.law, cfg.tolerances.alpha).map_err(|e| e.at("gaussianity"))?;
    if let Some(w) = &gaussianity.warning {
        warnings.push(w.clone());
    }
    if h.law.t4_asymmetry > 1e-10 {
        warnings.push(format!("cross term asymmetry {:.3e}; Σ uses its symmetric part", h.law.t4_asymmetry));
    }
    let verdicts = vec![
        Verdict {
            name: "etp2".into(),
            passed: etp2.passed,
        },
        Verdict {
            name: "etp1".into(),
            passed: etp1.passed,
        },
        Verdict {
            name: "gaussianity".into(),
            passed: gaussianity.passed,
        },
    ];
    let passed = verdicts.iter().all(|v| v.passed);
    Ok(VerificationReport {
        schema_version: SCHEMA_VERSION,
        model: model.name().to_string(),
        model_hash: model_hash(&model),
        config: cfg.clone(),
        sigma_solver: h.law.sigma.clone(),
        sigma_mc: SigmaMc::of(last),
        law: h.law,
        ergodicity,
        etp2,
        etp1,
        gaussianity,
        verdicts,
        passed,
        warnings,
    })
}
