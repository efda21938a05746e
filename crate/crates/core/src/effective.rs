//! The homogenized law: effective drift `b̄*` and covariance `Σ`.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corrector::{solve_corrector, CorrectorField};
use crate::error::{Error, Result};
use crate::generator::{assemble, fold_radius, GeneratorMatrix};
use crate::grid::{Stencil, TorusGrid};
use crate::invariant::{pairwise_sum, solve_invariant, InvariantMeasure};
use crate::model::{LevyTripletModel, TrigPoly};

/// Largest corrector residual accepted by [`assemble_sigma`].
pub const MAX_CORRECTOR_RESIDUAL: f64 = 1e-6;

pub type Matrix = Vec<Vec<f64>>;

fn to_rows(flat: &[f64], d: usize) -> Matrix {
    flat.chunks(d).map(|r| r.to_vec()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmaTerms {
    /// `∫ (I − ∂β) c (I − ∂β)ᵀ dπ`
    pub t1: Matrix,
    /// `∫∫ y yᵀ ν dπ`
    pub t2: Matrix,
    /// `∫∫ Δβ Δβᵀ ν dπ` with `Δβ = β(x+y) − β(x)`
    pub t3: Matrix,
    /// `∫∫ y Δβᵀ ν dπ`
    pub t4: Matrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectiveLaw {
    pub model: String,
    pub resolution: Vec<usize>,
    pub mean_drift: Vec<f64>,
    pub sigma: Matrix,
    pub terms: SigmaTerms,
    pub reduced_path_used: bool,
    /// `max |T4_ij − T4_ji|`; `Σ` uses the symmetric part of `T4`.
    pub t4_asymmetry: f64,
    pub min_eigenvalue: f64,
    pub corrector_residual: f64,
    pub invariant_residual: f64,
}

impl EffectiveLaw {
    /// A law given directly, without a solve (e.g. for degenerate models).
    pub fn given(model: &str, mean_drift: Vec<f64>, sigma: Matrix) -> Self {
        let d = mean_drift.len();
        let zero = vec![vec![0.0; d]; d];
        let min = min_eigenvalue(&sigma);
        EffectiveLaw {
            model: model.into(),
            resolution: Vec::new(),
            mean_drift,
            terms: SigmaTerms {
                t1: sigma.clone(),
                t2: zero.clone(),
                t3: zero.clone(),
                t4: zero,
            },
            sigma,
            reduced_path_used: false,
            t4_asymmetry: 0.0,
            min_eigenvalue: min,
            corrector_residual: 0.0,
            invariant_residual: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean_drift.len()
    }

    pub fn sigma_matrix(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_fn(d, d, |i, j| self.sigma[i][j])
    }

    pub fn to_json(&self) -> String {
        crate::json::to_json(self)
    }
}

fn min_eigenvalue(m: &Matrix) -> f64 {
    let d = m.len();
    if d == 0 {
        return 0.0;
    }
    let a = DMatrix::from_fn(d, d, |i, j| 0.5 * (m[i][j] + m[j][i]));
    SymmetricEigen::new(a).eigenvalues.min()
}

/// Per-node contributions `[T1 | T2 | T3 | T4]`, each `d×d` row-major.
fn node_terms(
    model: &LevyTripletModel,
    grid: &TorusGrid,
    corr: &CorrectorField,
    fold: f64,
    full: bool,
    j: usize,
) -> Vec<f64> {
    let d = grid.dim();
    let dd = d * d;
    let mut out = vec![0.0; 4 * dd];
    let mut x = vec![0.0; d];
    grid.point(j, &mut x);
    let mut c = vec![0.0; dd];
    let mut rates = Vec::new();
    model.diffusion_at(&x, &mut c);
    model.rates_at(&x, &mut rates);

    // small-jump second moment: folded nodes plus the part below the quadrature
    let mut small = vec![0.0; dd];
    model.kernel().inner_covariance(&x, model.freq(), &mut small);

    // (I − ∂β)_{ik} and ∂β_{ik} = ∂_k β_i
    let mut db = vec![0.0; dd];
    if full {
        for i in 0..d {
            for k in 0..d {
                db[i * d + k] = corr.grad_beta[i][k][j];
            }
        }
    }
    let mut id_db = db.iter().map(|v| -v).collect::<Vec<_>>();
    for i in 0..d {
        id_db[i * d + i] += 1.0;
    }
    let (t1, rest) = out.split_at_mut(dd);
    let (t2, rest) = rest.split_at_mut(dd);
    let (t3, t4) = rest.split_at_mut(dd);
    for i in 0..d {
        for jj in 0..d {
            let mut s = 0.0;
            for k in 0..d {
                for l in 0..d {
                    s += id_db[i * d + k] * c[k * d + l] * id_db[jj * d + l];
                }
            }
            t1[i * d + jj] = s;
        }
    }

    let mut st = Stencil::default();
    let mut z = vec![0.0; d];
    let mut dbeta = vec![0.0; d];
    for (n, &w) in model.kernel().nodes().iter().zip(&rates) {
        if w == 0.0 {
            continue;
        }
        if n.norm < fold {
            for p in 0..d {
                for q in 0..d {
                    small[p * d + q] += w * n.y[p] * n.y[q];
                }
            }
            continue;
        }
        for p in 0..d {
            for q in 0..d {
                t2[p * d + q] += w * n.y[p] * n.y[q];
            }
        }
        if !full {
            continue;
        }
        for ((zk, xk), yk) in z.iter_mut().zip(&x).zip(&n.y) {
            *zk = xk + yk;
        }
        grid.locate(&z, &mut st);
        for (i, dbi) in dbeta.iter_mut().enumerate() {
            let b = &corr.beta[i];
            let at: f64 = st.nodes.iter().zip(&st.weights).map(|(&m, &wt)| wt * b[m]).sum();
            *dbi = at - b[j];
        }
        for p in 0..d {
            for q in 0..d {
                t3[p * d + q] += w * dbeta[p] * dbeta[q];
                t4[p * d + q] += w * n.y[p] * dbeta[q];
            }
        }
    }

    // linearized small jumps: Δβ ≈ ∂β y
    for p in 0..d {
        for q in 0..d {
            t2[p * d + q] += small[p * d + q];
            if full {
                let mut s3 = 0.0;
                let mut s4 = 0.0;
                for k in 0..d {
                    for l in 0..d {
                        s3 += db[p * d + k] * small[k * d + l] * db[q * d + l];
                    }
                    s4 += small[p * d + k] * db[q * d + k];
                }
                t3[p * d + q] += s3;
                t4[p * d + q] += s4;
            }
        }
    }
    out
}

fn check_inputs(
    model: &LevyTripletModel,
    grid: &TorusGrid,
    pi: &InvariantMeasure,
    corr: &CorrectorField,
) -> Result<()> {
    if grid.geometry() != model.geometry()
        || pi.len() != grid.len()
        || corr.dim() != grid.dim()
        || corr.beta.iter().any(|b| b.len() != grid.len())
    {
        return Err(Error::GridMismatch("π, corrector and grid disagree".into()));
    }
    if !(corr.residual_norm <= MAX_CORRECTOR_RESIDUAL) {
        return Err(Error::CorrectorResidualTooLarge {
            residual: corr.residual_norm,
            limit: MAX_CORRECTOR_RESIDUAL,
        });
    }
    Ok(())
}

/// `Σ = T1 + T2 + T3 − (T4 + T4ᵀ)`, falling back to the reduced form
/// `∫c dπ + ∫∫yyᵀν dπ` when the corrector vanishes identically.
pub fn assemble_sigma(
    model: &LevyTripletModel,
    grid: &TorusGrid,
    pi: &InvariantMeasure,
    corr: &CorrectorField,
) -> Result<EffectiveLaw> {
    let reduced = corr.is_zero();
    sigma_impl(model, grid, pi, corr, !reduced)
}

/// The four-term assembly, even when `β ≡ 0`.
pub fn assemble_sigma_full(
    model: &LevyTripletModel,
    grid: &TorusGrid,
    pi: &InvariantMeasure,
    corr: &CorrectorField,
) -> Result<EffectiveLaw> {
    sigma_impl(model, grid, pi, corr, true)
}

fn sigma_impl(
    model: &LevyTripletModel,
    grid: &TorusGrid,
    pi: &InvariantMeasure,
    corr: &CorrectorField,
    full: bool,
) -> Result<EffectiveLaw> {
    check_inputs(model, grid, pi, corr)?;
    let d = grid.dim();
    let dd = d * d;
    let fold = fold_radius(model, grid);
    let per_node: Vec<Vec<f64>> = (0..grid.len())
        .into_par_iter()
        .map(|j| {
            let mut t = node_terms(model, grid, corr, fold, full, j);
            t.iter_mut().for_each(|v| *v *= pi.weights[j]);
            t
        })
        .collect();
    let mut col = vec![0.0; grid.len()];
    let totals: Vec<f64> = (0..4 * dd)
        .map(|e| {
            for (c, t) in col.iter_mut().zip(&per_node) {
                *c = t[e];
            }
            pairwise_sum(&col)
        })
        .collect();
    let (t1, t2, t3, t4) = (&totals[..dd], &totals[dd..2 * dd], &totals[2 * dd..3 * dd], &totals[3 * dd..]);
    let mut sigma = vec![0.0; dd];
    let mut asym: f64 = 0.0;
    for i in 0..d {
        for j in 0..d {
            sigma[i * d + j] = t1[i * d + j] + t2[i * d + j] + t3[i * d + j] - (t4[i * d + j] + t4[j * d + i]);
            asym = asym.max((t4[i * d + j] - t4[j * d + i]).abs());
        }
    }
    let sigma = to_rows(&sigma, d);
    let max = sigma.iter().flatten().fold(0.0, |m: f64, v| m.max(v.abs()));
    let sym_defect = (0..d)
        .flat_map(|i| (0..d).map(move |j| (i, j)))
        .map(|(i, j)| (sigma[i][j] - sigma[j][i]).abs())
        .fold(0.0, f64::max);
    if sym_defect > 1e-10 * max {
        return Err(Error::InvalidCovariance(format!("Σ asymmetry {sym_defect:e}")));
    }
    let min_eig = min_eigenvalue(&sigma);
    let trace: f64 = (0..d).map(|i| sigma[i][i]).sum();
    if min_eig < -1e-10 * trace.abs() {
        return Err(Error::InvalidCovariance(format!(
            "Σ has eigenvalue {min_eig:e} (trace {trace:e})"
        )));
    }
    Ok(EffectiveLaw {
        model: model.name().into(),
        resolution: grid.resolution().to_vec(),
        mean_drift: corr.mean_drift.clone(),
        sigma,
        terms: SigmaTerms {
            t1: to_rows(t1, d),
            t2: to_rows(t2, d),
            t3: to_rows(t3, d),
            t4: to_rows(t4, d),
        },
        reduced_path_used: !full,
        t4_asymmetry: asym,
        min_eigenvalue: min_eig,
        corrector_residual: corr.residual_norm,
        invariant_residual: pi.residual,
    })
}

/// Everything the solver pipeline produces for one model and grid.
#[derive(Clone, Debug)]
pub struct Homogenized {
    pub generator: GeneratorMatrix,
    pub invariant: InvariantMeasure,
    pub corrector: CorrectorField,
    pub law: EffectiveLaw,
}

/// assemble → π → β → Σ, with errors tagged by stage.
pub fn homogenize(model: &LevyTripletModel, grid: &TorusGrid) -> Result<Homogenized> {
    let generator = assemble(model, grid).map_err(|e| e.at("assemble"))?;
    let invariant = solve_invariant(&generator).map_err(|e| e.at("invariant"))?;
    let corrector = solve_corrector(model, &generator, &invariant, grid).map_err(|e| e.at("corrector"))?;
    let law = assemble_sigma(model, grid, &invariant, &corrector).map_err(|e| e.at("sigma"))?;
    Ok(Homogenized {
        generator,
        invariant,
        corrector,
        law,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaledCheck {
    pub eps: f64,
    pub discrepancy: f64,
    /// False when `τ_k/ε` is not an integer for some `k`; the point set then
    /// does not sweep whole periods of `x/ε`.
    pub commensurate: bool,
}

/// `sup_x |L_ε f(x) − ε^{-1}⟨b̄*,∇f(x)⟩ − ½ Tr Σ∇²f(x)|` over `points`, where
/// `L_ε` is the generator of `εX_{ε^{-2}t}`:
/// `ε^{-1}⟨b(x/ε),∇f⟩ + ½Tr c(x/ε)∇²f + ε^{-2}∫(f(x+εy) − f(x) − ε⟨y,∇f⟩1_{|y|<1}) ν(x/ε,dy)`.
pub fn scaled_generator_check(
    model: &LevyTripletModel,
    law: &EffectiveLaw,
    f: &TrigPoly,
    f_freq: &[f64],
    points: &[Vec<f64>],
    eps: f64,
) -> Result<ScaledCheck> {
    let d = model.dim();
    if !(eps > 0.0) || f_freq.len() != d || law.dim() != d {
        return Err(Error::Precondition("scaled check needs ε > 0 and matching dimensions".into()));
    }
    let commensurate = model
        .geometry()
        .periods
        .iter()
        .all(|t| ((t / eps) - (t / eps).round()).abs() < 1e-9);
    let mut grad = vec![0.0; d];
    let mut hess = vec![0.0; d * d];
    let mut b = vec![0.0; d];
    let mut c = vec![0.0; d * d];
    let mut rates = Vec::new();
    let mut xs = vec![0.0; d];
    let mut z = vec![0.0; d];
    let mut worst: f64 = 0.0;
    for x in points {
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: x.len(),
            });
        }
        let scaled: Vec<f64> = x.iter().map(|v| v / eps).collect();
        model.geometry().wrap_into(&scaled, &mut xs);
        f.grad(x, f_freq, &mut grad);
        f.hessian(x, f_freq, &mut hess);
        let fx = f.eval(x, f_freq);
        model.drift_at(&xs, &mut b);
        model.diffusion_at(&xs, &mut c);
        model.kernel().inner_covariance(&xs, model.freq(), &mut c);
        model.rates_at(&xs, &mut rates);
        let mut v = 0.0;
        for k in 0..d {
            v += (b[k] - law.mean_drift[k]) * grad[k] / eps;
            for l in 0..d {
                v += 0.5 * (c[k * d + l] - law.sigma[k][l]) * hess[k * d + l];
            }
        }
        let mut jump = 0.0;
        for (n, &w) in model.kernel().nodes().iter().zip(&rates) {
            for ((zk, xk), yk) in z.iter_mut().zip(x).zip(&n.y) {
                *zk = xk + eps * yk;
            }
            let mut incr = f.eval(&z, f_freq) - fx;
            if n.norm < 1.0 {
                incr -= eps * n.y.iter().zip(&grad).map(|(a, g)| a * g).sum::<f64>();
            }
            jump += w * incr;
        }
        v += jump / (eps * eps);
        worst = worst.max(v.abs());
    }
    Ok(ScaledCheck {
        eps,
        discrepancy: worst,
        commensurate,
    })
}
