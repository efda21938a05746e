//! Invariant probability measure of the discretized generator and an estimate
//! of its exponential ergodicity rate.

use std::collections::VecDeque;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::GeneratorMatrix;
use crate::grid::TorusGrid;

/// Largest system solved with the dense bordered factorization.
pub const DENSE_SOLVE_LIMIT: usize = 4096;
/// Largest generator whose full spectrum is computed.
pub const EIGEN_LIMIT: usize = 512;
pub const POWER_ITERATION_CAP: usize = 1_000_000;
const CLAMP_TOL: f64 = 1e-14;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InvariantMethod {
    BorderedLu,
    PowerIteration { iterations: usize },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InvariantMeasure {
    pub weights: Vec<f64>,
    /// `‖πᵀG‖_∞ / ‖G‖_∞`.
    pub residual: f64,
    pub method: InvariantMethod,
    /// Most negative round-off weight set to zero (0 if none).
    pub clamped: f64,
}

impl InvariantMeasure {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// `Σ_j π_j f_j`.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        pairwise_sum(&self.weights.iter().zip(f).map(|(p, v)| p * v).collect::<Vec<_>>())
    }

    /// Writes `x_0,…,x_{d-1},weight` rows.
    pub fn write_csv<W: Write>(&self, grid: &TorusGrid, mut w: W) -> std::io::Result<()> {
        let header: Vec<String> = (0..grid.dim()).map(|k| format!("x{k}")).collect();
        writeln!(w, "{},weight", header.join(","))?;
        let mut p = vec![0.0; grid.dim()];
        for (i, pi) in self.weights.iter().enumerate() {
            grid.point(i, &mut p);
            let coords: Vec<String> = p.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{},{}", coords.join(","), pi)?;
        }
        Ok(())
    }
}

/// Deterministic pairwise summation.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        return v.iter().sum();
    }
    let (a, b) = v.split_at(v.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

fn reachable(n: usize, adj: &[Vec<usize>]) -> usize {
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    let mut count = 1;
    while let Some(i) = queue.pop_front() {
        for &j in &adj[i] {
            if !seen[j] {
                seen[j] = true;
                count += 1;
                queue.push_back(j);
            }
        }
    }
    count
}

/// Checks that the off-diagonal support of `G` is strongly connected.
pub fn check_irreducible(g: &GeneratorMatrix) -> Result<()> {
    let n = g.len();
    if n == 0 {
        return Err(Error::Precondition("empty generator".into()));
    }
    let mut fwd = vec![Vec::new(); n];
    let mut bwd = vec![Vec::new(); n];
    for (i, j, v) in g.matrix().iter() {
        if i != j && v != 0.0 {
            fwd[i].push(j);
            bwd[j].push(i);
        }
    }
    let (f, b) = (reachable(n, &fwd), reachable(n, &bwd));
    if f < n || b < n {
        return Err(Error::ReducibleGenerator(format!(
            "node 0 reaches {f} and is reached from {b} of {n} nodes"
        )));
    }
    Ok(())
}

fn stationarity_residual(g: &GeneratorMatrix, pi: &[f64]) -> f64 {
    let mut r = vec![0.0; pi.len()];
    g.matrix().transpose_mul_vec(pi, &mut r);
    let norm = g.matrix().norm_inf();
    let r = r.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
    if norm > 0.0 {
        r / norm
    } else {
        r
    }
}

/// Clamps round-off negatives and renormalizes. Larger negatives are an error.
fn finish(g: &GeneratorMatrix, mut w: Vec<f64>, method: InvariantMethod) -> Result<InvariantMeasure> {
    let min = w.iter().copied().fold(0.0, f64::min);
    if min < -CLAMP_TOL {
        return Err(Error::NegativeWeight(min));
    }
    w.iter_mut().for_each(|v| *v = v.max(0.0));
    let s = pairwise_sum(&w);
    w.iter_mut().for_each(|v| *v /= s);
    Ok(InvariantMeasure {
        residual: stationarity_residual(g, &w),
        weights: w,
        method,
        clamped: min,
    })
}

/// A factorized dense bordered system with iterative refinement.
pub(crate) struct BorderedSolver {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl BorderedSolver {
    pub(crate) fn new(m: DMatrix<f64>) -> Result<Self> {
        let lu = m.lu();
        let u = lu.u();
        let diag = u.diagonal();
        let max = diag.iter().fold(0.0, |a: f64, v| a.max(v.abs()));
        let min = diag.iter().fold(f64::INFINITY, |a: f64, v| a.min(v.abs()));
        if !(min > 1e-13 * max) {
            return Err(Error::SingularSystem(format!(
                "bordered matrix pivot ratio {:e}",
                min / max
            )));
        }
        Ok(BorderedSolver { lu })
    }

    /// Solves `M x = rhs`, refining with the exact residual `apply`.
    pub(crate) fn solve(&self, rhs: &[f64], apply: impl Fn(&[f64], &mut [f64])) -> Result<Vec<f64>> {
        let b = DVector::from_column_slice(rhs);
        let mut x = self
            .lu
            .solve(&b)
            .ok_or_else(|| Error::SingularSystem("LU solve failed".into()))?;
        let mut r = vec![0.0; rhs.len()];
        for _ in 0..3 {
            apply(x.as_slice(), &mut r);
            for (ri, bi) in r.iter_mut().zip(rhs) {
                *ri = bi - *ri;
            }
            if let Some(dx) = self.lu.solve(&DVector::from_column_slice(&r)) {
                x += dx;
            }
        }
        Ok(x.as_slice().to_vec())
    }
}

/// `πᵀG = 0`, `Σπ = 1`, via a dense LU of `[Gᵀ q1; q1ᵀ 0]`. Falls back to
/// power iteration when the factorization is numerically singular.
pub fn solve_invariant(g: &GeneratorMatrix) -> Result<InvariantMeasure> {
    check_irreducible(g)?;
    let n = g.len();
    if n > DENSE_SOLVE_LIMIT {
        return Err(Error::TooLarge {
            size: n,
            limit: DENSE_SOLVE_LIMIT,
        });
    }
    let q = g.max_rate().max(f64::MIN_POSITIVE);
    let mut m = DMatrix::zeros(n + 1, n + 1);
    for (i, j, v) in g.matrix().iter() {
        m[(j, i)] += v;
    }
    for i in 0..n {
        m[(i, n)] = q;
        m[(n, i)] = q;
    }
    let solver = match BorderedSolver::new(m) {
        Ok(s) => s,
        Err(_) => return solve_invariant_power(g, None, POWER_ITERATION_CAP),
    };
    let mut rhs = vec![0.0; n + 1];
    rhs[n] = q;
    let apply = |x: &[f64], out: &mut [f64]| {
        g.matrix().transpose_mul_vec(&x[..n], &mut out[..n]);
        for o in &mut out[..n] {
            *o += q * x[n];
        }
        out[n] = q * x[..n].iter().sum::<f64>();
    };
    let x = solver.solve(&rhs, apply)?;
    finish(g, x[..n].to_vec(), InvariantMethod::BorderedLu)
}

/// Power iteration on the uniformized chain `I + G/(2q)`, starting from `start`
/// (uniform if `None`).
pub fn solve_invariant_power(g: &GeneratorMatrix, start: Option<&[f64]>, cap: usize) -> Result<InvariantMeasure> {
    let n = g.len();
    let q = 2.0 * g.max_rate().max(f64::MIN_POSITIVE);
    let mut pi: Vec<f64> = match start {
        Some(s) if s.len() == n => s.to_vec(),
        Some(s) => {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: s.len(),
            })
        }
        None => vec![1.0 / n as f64; n],
    };
    let s: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|v| *v /= s);
    let mut next = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for it in 1..=cap {
        g.matrix().transpose_mul_vec(&pi, &mut next);
        for (nx, p) in next.iter_mut().zip(&pi) {
            *nx = p + *nx / q;
        }
        std::mem::swap(&mut pi, &mut next);
        if it % 64 == 0 {
            let s: f64 = pi.iter().sum();
            pi.iter_mut().for_each(|v| *v /= s);
            residual = stationarity_residual(g, &pi);
            if residual <= 1e-13 {
                return finish(g, pi, InvariantMethod::PowerIteration { iterations: it });
            }
        }
    }
    Err(Error::NoConvergence {
        iterations: cap,
        residual,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErgodicityMethod {
    SpectralGap,
    TvDecayFit,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ErgodicityEstimate {
    pub gamma: f64,
    #[serde(rename = "Gamma")]
    pub big_gamma: f64,
    pub method: ErgodicityMethod,
    /// Least-squares slope of `−log TV` on the decaying samples.
    pub gamma_fit: Option<f64>,
    pub spectral_gap: Option<f64>,
    /// `(t, sup_x ‖P_t(x,·) − π‖_TV)`.
    pub samples: Vec<(f64, f64)>,
}

/// Total variation below this is treated as round-off.
const TV_FLOOR: f64 = 1e-10;

fn sup_tv(p: &DMatrix<f64>, pi: &[f64]) -> f64 {
    p.row_iter()
        .map(|r| 0.5 * r.iter().zip(pi).map(|(a, b)| (a - b).abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Smallest `−Re λ` over the non-zero eigenvalues of `G`.
pub fn spectral_gap(g: &GeneratorMatrix) -> Option<f64> {
    let n = g.len();
    if n < 2 || n > EIGEN_LIMIT {
        return None;
    }
    let ev = g.matrix().to_dense().complex_eigenvalues();
    let mut vals: Vec<_> = ev.iter().copied().collect();
    vals.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
    vals[1..].iter().map(|z| -z.re).reduce(f64::min)
}

/// Samples `sup_x TV(P_t(x,·), π)` at `t = t0·2^k` and `1.5·t0·2^k` up to
/// `horizon`, fits `Γ e^{−γt}`, and prefers the spectral gap for `γ` when the
/// full spectrum is affordable. `Γ` is then the smallest prefactor for which
/// the curve dominates every sample.
pub fn estimate_ergodicity(g: &GeneratorMatrix, pi: &InvariantMeasure, horizon: f64) -> Result<ErgodicityEstimate> {
    if pi.len() != g.len() {
        return Err(Error::GridMismatch("π and G have different sizes".into()));
    }
    let q = g.max_rate();
    if q == 0.0 {
        return Err(Error::Precondition("generator has no transitions".into()));
    }
    let t0 = 1.0 / (2.0 * q);
    let base = g.build_transition(t0)?;
    let mut p = base.p.clone();
    let mut half: Option<DMatrix<f64>> = None;
    let mut t = t0;
    let mut samples = Vec::new();
    while t <= horizon {
        samples.push((t, sup_tv(&p, &pi.weights)));
        if let Some(h) = &half {
            let t15 = 1.5 * t;
            if t15 <= horizon {
                samples.push((t15, sup_tv(&(&p * h), &pi.weights)));
            }
        }
        let next = &p * &p;
        half = Some(std::mem::replace(&mut p, next));
        t *= 2.0;
    }
    let reached = samples.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    if !(reached < 0.5) {
        return Err(Error::HorizonTooShort {
            horizon,
            tv: reached,
        });
    }

    // past the minimum the distance only records accumulated round-off
    let floor_at = samples
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .map_or(0, |(i, _)| i);
    let decaying = &samples[..=floor_at];
    let tail: Vec<(f64, f64)> = decaying
        .iter()
        .copied()
        .filter(|&(_, tv)| tv <= 0.5 && tv > TV_FLOOR)
        .collect();
    let gamma_fit = if tail.len() >= 2 {
        let n = tail.len() as f64;
        let mt = tail.iter().map(|s| s.0).sum::<f64>() / n;
        let ml = tail.iter().map(|s| s.1.ln()).sum::<f64>() / n;
        let sxy: f64 = tail.iter().map(|s| (s.0 - mt) * (s.1.ln() - ml)).sum();
        let sxx: f64 = tail.iter().map(|s| (s.0 - mt).powi(2)).sum();
        Some(-sxy / sxx).filter(|v| *v > 0.0)
    } else {
        None
    };
    let gap = spectral_gap(g).filter(|v| *v > 0.0);
    let (gamma, method) = match (gap, gamma_fit) {
        (Some(v), _) => (v, ErgodicityMethod::SpectralGap),
        (None, Some(v)) => (v, ErgodicityMethod::TvDecayFit),
        (None, None) => {
            return Err(Error::HorizonTooShort {
                horizon,
                tv: reached,
            })
        }
    };
    let big_gamma = decaying
        .iter()
        .filter(|&&(_, tv)| tv > TV_FLOOR)
        .map(|&(t, tv)| tv * (gamma * t).exp())
        .fold(0.0, f64::max);
    Ok(ErgodicityEstimate {
        gamma,
        big_gamma,
        method,
        gamma_fit,
        spectral_gap: gap,
        samples,
    })
}
