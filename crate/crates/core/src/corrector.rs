//! The corrector `β`: the π-centered periodic solution of `Lβ = b* − b̄*`.

use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::GeneratorMatrix;
use crate::grid::TorusGrid;
use crate::invariant::{pairwise_sum, BorderedSolver, InvariantMeasure, DENSE_SOLVE_LIMIT};
use crate::model::LevyTripletModel;

/// Relative tolerance on `⟨π, rhs⟩` for a Poisson right-hand side.
pub const COMPATIBILITY_TOL: f64 = 1e-10;

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m: f64, x| m.max(x.abs()))
}

fn check_sizes(g: &GeneratorMatrix, pi: &InvariantMeasure, len: usize) -> Result<()> {
    if pi.len() != g.len() {
        return Err(Error::GridMismatch(format!(
            "π has {} weights, generator has {} rows",
            pi.len(),
            g.len()
        )));
    }
    if len != g.len() {
        return Err(Error::DimensionMismatch {
            expected: g.len(),
            got: len,
        });
    }
    Ok(())
}

/// `b̄* = Σ_j π_j b*(x_j)`. A constant `b*` is returned unchanged.
pub fn mean_drift(model: &LevyTripletModel, pi: &InvariantMeasure, grid: &TorusGrid) -> Result<Vec<f64>> {
    if grid.geometry() != model.geometry() || pi.len() != grid.len() {
        return Err(Error::GridMismatch("π, grid and model do not describe the same torus".into()));
    }
    let values = effective_drift_on_grid(model, grid);
    Ok(values.iter().map(|v| weighted_mean(pi, v)).collect())
}

fn weighted_mean(pi: &InvariantMeasure, v: &[f64]) -> f64 {
    if v.iter().all(|x| *x == v[0]) {
        v[0]
    } else {
        pi.integrate(v)
    }
}

/// `b*_i(x_j)`, component-major.
fn effective_drift_on_grid(model: &LevyTripletModel, grid: &TorusGrid) -> Vec<Vec<f64>> {
    let d = grid.dim();
    let mut out = vec![vec![0.0; grid.len()]; d];
    let mut x = vec![0.0; d];
    let mut b = vec![0.0; d];
    let mut rates = Vec::new();
    for j in 0..grid.len() {
        grid.point(j, &mut x);
        model.rates_at(&x, &mut rates);
        model.effective_drift_at(&x, &rates, &mut b);
        for (o, v) in out.iter_mut().zip(&b) {
            o[j] = *v;
        }
    }
    out
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PoissonSolution {
    pub u: Vec<f64>,
    /// `‖Gu − rhs‖_∞ / ‖rhs‖_∞` after projection (0 for a zero rhs).
    pub residual: f64,
    /// `⟨π, rhs⟩` removed before solving.
    pub projection: f64,
}

/// Factorization of the bordered Poisson system `[G sπ; sπᵀ 0]`, reusable
/// across right-hand sides.
pub struct PoissonSolver<'a> {
    g: &'a GeneratorMatrix,
    pi: &'a InvariantMeasure,
    scale: f64,
    solver: BorderedSolver,
}

impl<'a> PoissonSolver<'a> {
    pub fn new(g: &'a GeneratorMatrix, pi: &'a InvariantMeasure) -> Result<Self> {
        check_sizes(g, pi, g.len())?;
        let n = g.len();
        if n > DENSE_SOLVE_LIMIT {
            return Err(Error::TooLarge {
                size: n,
                limit: DENSE_SOLVE_LIMIT,
            });
        }
        // border entries of the same order as the diagonal
        let scale = g.max_rate().max(f64::MIN_POSITIVE) * n as f64;
        let mut m = DMatrix::zeros(n + 1, n + 1);
        for (i, j, v) in g.matrix().iter() {
            m[(i, j)] += v;
        }
        for (i, p) in pi.weights.iter().enumerate() {
            m[(i, n)] = scale * p;
            m[(n, i)] = scale * p;
        }
        let solver = BorderedSolver::new(m)?;
        Ok(PoissonSolver { g, pi, scale, solver })
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<PoissonSolution> {
        check_sizes(self.g, self.pi, rhs.len())?;
        let n = rhs.len();
        let norm = sup(rhs);
        if norm == 0.0 {
            return Ok(PoissonSolution {
                u: vec![0.0; n],
                residual: 0.0,
                projection: 0.0,
            });
        }
        let mean = self.pi.integrate(rhs);
        let tol = COMPATIBILITY_TOL * norm;
        if mean.abs() > tol {
            return Err(Error::IncompatibleRhs { mean, tol });
        }
        let mut b: Vec<f64> = rhs.iter().map(|v| v - mean).collect();
        b.push(0.0);
        let (g, w, s) = (self.g, &self.pi.weights, self.scale);
        let apply = |x: &[f64], out: &mut [f64]| {
            g.matrix().mul_vec(&x[..n], &mut out[..n]);
            for (o, p) in out[..n].iter_mut().zip(w) {
                *o += s * p * x[n];
            }
            out[n] = s * pairwise_sum(&x[..n].iter().zip(w).map(|(a, p)| a * p).collect::<Vec<_>>());
        };
        let x = self.solver.solve(&b, apply)?;
        let u = x[..n].to_vec();
        let gu = g.apply(&u)?;
        let residual = sup(&gu.iter().zip(&b).map(|(a, c)| a - c).collect::<Vec<_>>()) / norm;
        Ok(PoissonSolution {
            u,
            residual,
            projection: mean,
        })
    }
}

/// Solves `G u = rhs` with `⟨π, u⟩ = 0`.
pub fn solve_poisson(g: &GeneratorMatrix, rhs: &[f64], pi: &InvariantMeasure) -> Result<PoissonSolution> {
    PoissonSolver::new(g, pi)?.solve(rhs)
}

/// `u_λ = (λI − G)^{-1} rhs`.
pub fn resolvent_sequence(g: &GeneratorMatrix, rhs: &[f64], pi: &InvariantMeasure, lambda: f64) -> Result<Vec<f64>> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidLambda(lambda));
    }
    check_sizes(g, pi, rhs.len())?;
    let n = rhs.len();
    if n > DENSE_SOLVE_LIMIT {
        return Err(Error::TooLarge {
            size: n,
            limit: DENSE_SOLVE_LIMIT,
        });
    }
    if sup(rhs) == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let mut m = DMatrix::from_diagonal_element(n, n, lambda);
    for (i, j, v) in g.matrix().iter() {
        m[(i, j)] -= v;
    }
    let lu = m.lu();
    let mut u = lu
        .solve(&nalgebra::DVector::from_column_slice(rhs))
        .ok_or_else(|| Error::SingularSystem("λI − G is singular".into()))?;
    for _ in 0..3 {
        let gu = g.apply(u.as_slice())?;
        let r: Vec<f64> = (0..n).map(|i| rhs[i] - (lambda * u[i] - gu[i])).collect();
        if let Some(du) = lu.solve(&nalgebra::DVector::from_column_slice(&r)) {
            u += du;
        }
    }
    Ok(u.as_slice().to_vec())
}

/// The Poisson solution recovered from the resolvent: since
/// `(λI − G)^{-1} → −G^{-1}` on π-mean-zero functions, `−(u_λ − ⟨π,u_λ⟩)`
/// approaches the centered solution of `Gu = rhs` with an `O(λ)` error.
pub fn resolvent_corrector(g: &GeneratorMatrix, rhs: &[f64], pi: &InvariantMeasure, lambda: f64) -> Result<Vec<f64>> {
    let u = resolvent_sequence(g, rhs, pi, lambda)?;
    let m = pi.integrate(&u);
    Ok(u.iter().map(|v| m - v).collect())
}

/// Richardson extrapolation `2v(λ) − v(2λ)` of [`resolvent_corrector`],
/// cancelling the leading `O(λ)` term.
pub fn resolvent_limit(g: &GeneratorMatrix, rhs: &[f64], pi: &InvariantMeasure, lambda: f64) -> Result<Vec<f64>> {
    let a = resolvent_corrector(g, rhs, pi, lambda)?;
    let b = resolvent_corrector(g, rhs, pi, 2.0 * lambda)?;
    Ok(a.iter().zip(&b).map(|(x, y)| 2.0 * x - y).collect())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorrectorField {
    pub mean_drift: Vec<f64>,
    /// `beta[i][j] = β_i(x_j)`.
    pub beta: Vec<Vec<f64>>,
    /// `grad_beta[i][k][j] = ∂_k β_i(x_j)`.
    pub grad_beta: Vec<Vec<Vec<f64>>>,
    /// `max_i ‖Gβ_i − (b*_i − b̄*_i)‖_∞`.
    pub residual_norm: f64,
    /// `max_i |⟨π, rhs_i⟩|` projected out before solving.
    pub projection: f64,
    /// `max_i |⟨π, β_i⟩| / ‖β_i‖_∞`.
    pub centering: f64,
    /// True when every right-hand side vanished identically, so `β ≡ 0`
    /// without a solve.
    pub vanishing: bool,
}

impl CorrectorField {
    pub fn dim(&self) -> usize {
        self.beta.len()
    }

    pub fn is_zero(&self) -> bool {
        self.beta.iter().flatten().all(|v| *v == 0.0)
    }

    pub fn sup_norm(&self) -> f64 {
        self.beta.iter().map(|b| sup(b)).fold(0.0, f64::max)
    }

    /// Writes `x_k…, beta_i…, dbeta_i_dk…` rows.
    pub fn write_csv<W: Write>(&self, grid: &TorusGrid, mut w: W) -> std::io::Result<()> {
        let d = self.dim();
        let mut cols: Vec<String> = (0..d).map(|k| format!("x{k}")).collect();
        cols.extend((0..d).map(|i| format!("beta{i}")));
        for i in 0..d {
            cols.extend((0..d).map(|k| format!("dbeta{i}_dx{k}")));
        }
        writeln!(w, "{}", cols.join(","))?;
        let mut p = vec![0.0; d];
        for j in 0..grid.len() {
            grid.point(j, &mut p);
            let mut row: Vec<String> = p.iter().map(|v| v.to_string()).collect();
            row.extend(self.beta.iter().map(|b| b[j].to_string()));
            for gi in &self.grad_beta {
                row.extend(gi.iter().map(|g| g[j].to_string()));
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Solves `Gβ_i = b*_i − b̄*_i` for every component and differentiates the
/// result with periodic central differences.
pub fn solve_corrector(
    model: &LevyTripletModel,
    g: &GeneratorMatrix,
    pi: &InvariantMeasure,
    grid: &TorusGrid,
) -> Result<CorrectorField> {
    if g.grid() != grid {
        return Err(Error::GridMismatch("generator was assembled on a different grid".into()));
    }
    let mean = mean_drift(model, pi, grid)?;
    let bstar = effective_drift_on_grid(model, grid);
    let rhs: Vec<Vec<f64>> = bstar
        .iter()
        .zip(&mean)
        .map(|(b, m)| b.iter().map(|v| v - m).collect())
        .collect();
    let vanishing = rhs.iter().flatten().all(|v| *v == 0.0);
    let d = grid.dim();
    let n = grid.len();
    let mut beta = vec![vec![0.0; n]; d];
    let (mut residual, mut projection, mut centering) = (0.0f64, 0.0f64, 0.0f64);
    if !vanishing {
        let solver = PoissonSolver::new(g, pi)?;
        for (i, r) in rhs.iter().enumerate() {
            let s = solver.solve(r)?;
            let gu = g.apply(&s.u)?;
            let abs_res = sup(&gu.iter().zip(r).map(|(a, b)| a - (b - s.projection)).collect::<Vec<_>>());
            residual = residual.max(abs_res);
            projection = projection.max(s.projection.abs());
            let norm = sup(&s.u);
            if norm > 0.0 {
                centering = centering.max(pi.integrate(&s.u).abs() / norm);
            }
            beta[i] = s.u;
        }
    }
    let grad_beta = beta
        .iter()
        .map(|b| (0..d).map(|k| grid.central_gradient(b, k)).collect())
        .collect();
    Ok(CorrectorField {
        mean_drift: mean,
        beta,
        grad_beta,
        residual_norm: residual,
        projection,
        centering,
        vanishing,
    })
}
