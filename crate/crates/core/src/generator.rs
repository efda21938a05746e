//! Finite-difference / quadrature discretization of the generator
//! `L f = ⟨b,∇f⟩ + ½ Tr c∇²f + ∫ (f(x+y) − f(x) − ⟨y,∇f⟩ 1_{|y|<1}) ν(x,dy)`
//! on a periodic grid.

use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Stencil, TorusGrid};
use crate::model::{model_hash, KernelSpec, LevyTripletModel};
use crate::sparse::CsrMatrix;

/// Largest grid accepted by the dense transition builder.
pub const DENSE_TRANSITION_LIMIT: usize = 1024;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorMeta {
    pub stencil_order: u32,
    pub drift_scheme: String,
    pub jump_wrapping: String,
    /// Density-kernel nodes closer than this to the origin are folded into
    /// the diffusion matrix through their second moment.
    pub fold_radius: f64,
    pub folded_nodes: usize,
    pub resolved_nodes: usize,
    /// The diagonal is always reset to minus the off-diagonal row sum; this
    /// is the largest change that made, relative to the row's largest entry.
    pub row_sum_repair: f64,
    pub min_offdiagonal: f64,
}

#[derive(Clone, Debug)]
pub struct GeneratorMatrix {
    grid: TorusGrid,
    matrix: CsrMatrix,
    meta: GeneratorMeta,
    model_name: String,
    model_hash: String,
}

fn even_at_least(n: f64) -> usize {
    let n = (n.ceil() as usize).max(8);
    n + n % 2
}

fn check_resolution(model: &LevyTripletModel, grid: &TorusGrid) -> Result<()> {
    if grid.geometry() != model.geometry() {
        return Err(Error::GridMismatch("grid torus differs from the model torus".into()));
    }
    if let Some(&n) = grid.resolution().iter().find(|&&n| n < 8 || n % 2 == 1) {
        return Err(Error::ResolutionTooCoarse {
            reason: format!("resolution {n} must be even and at least 8"),
            suggested: even_at_least(n as f64),
        });
    }
    if let KernelSpec::FiniteActivity { atoms } = &model.spec().jumps {
        let hmax = grid.max_spacing();
        for a in atoms {
            let r = a.displacement.iter().map(|v| v * v).sum::<f64>().sqrt();
            if r > 0.0 && r < 2.0 * hmax {
                let tmax = model.geometry().periods.iter().copied().fold(0.0, f64::max);
                return Err(Error::ResolutionTooCoarse {
                    reason: format!(
                        "atom |y| = {r} is below two grid spacings ({}) and cannot be told apart from the compensator stencil",
                        2.0 * hmax
                    ),
                    suggested: even_at_least(2.0 * tmax / r),
                });
            }
        }
    }
    Ok(())
}

/// Radius below which density-kernel nodes are treated through their second
/// moment rather than resolved on the grid; 0 for atomic kernels.
pub fn fold_radius(model: &LevyTripletModel, grid: &TorusGrid) -> f64 {
    if model.kernel().is_density() {
        2.0 * grid.max_spacing()
    } else {
        0.0
    }
}

struct Row {
    entries: Vec<(usize, f64)>,
    repair: f64,
    folded: usize,
    resolved: usize,
}

fn assemble_row(model: &LevyTripletModel, grid: &TorusGrid, fold: f64, i: usize) -> Row {
    let d = grid.dim();
    let h = grid.spacing();
    let mut x = vec![0.0; d];
    grid.point(i, &mut x);
    let mut b = vec![0.0; d];
    let mut a = vec![0.0; d * d];
    let mut rates = Vec::new();
    model.drift_at(&x, &mut b);
    model.diffusion_at(&x, &mut a);
    model.rates_at(&x, &mut rates);
    let kernel = model.kernel();
    kernel.inner_covariance(&x, model.freq(), &mut a);

    let mut entries: Vec<(usize, f64)> = Vec::new();
    let mut natural_diag = 0.0;
    let (mut folded, mut resolved) = (0, 0);
    let mut st = Stencil::default();
    let mut z = vec![0.0; d];
    for (n, &w) in kernel.nodes().iter().zip(&rates) {
        if w == 0.0 {
            continue;
        }
        if n.norm < fold {
            // f(x+y) − f(x) − ⟨y,∇f⟩ ≈ ½ y'∇²f y
            for p in 0..d {
                for q in 0..d {
                    a[p * d + q] += w * n.y[p] * n.y[q];
                }
            }
            folded += 1;
            continue;
        }
        resolved += 1;
        if n.norm < 1.0 {
            for (bk, yk) in b.iter_mut().zip(&n.y) {
                *bk -= w * yk;
            }
        }
        for ((zk, xk), yk) in z.iter_mut().zip(&x).zip(&n.y) {
            *zk = xk + yk;
        }
        grid.locate(&z, &mut st);
        for (&j, &wt) in st.nodes.iter().zip(&st.weights) {
            if wt != 0.0 {
                entries.push((j, w * wt));
            }
        }
        natural_diag -= w;
    }

    for k in 0..d {
        let up = grid.shift(i, k, 1);
        let dn = grid.shift(i, k, -1);
        let v = b[k] / (2.0 * h[k]);
        let diff = a[k * d + k] / (2.0 * h[k] * h[k]);
        entries.push((up, v + diff));
        entries.push((dn, -v + diff));
        natural_diag -= 2.0 * diff;
        for l in k + 1..d {
            let akl = 0.5 * (a[k * d + l] + a[l * d + k]);
            if akl == 0.0 {
                continue;
            }
            let m = akl / (4.0 * h[k] * h[l]);
            entries.push((grid.shift(up, l, 1), m));
            entries.push((grid.shift(up, l, -1), -m));
            entries.push((grid.shift(dn, l, 1), -m));
            entries.push((grid.shift(dn, l, -1), m));
        }
    }

    let mut off = 0.0;
    let mut scale: f64 = 0.0;
    for &(j, v) in &entries {
        if j == i {
            natural_diag += v;
        } else {
            off += v;
        }
        scale = scale.max(v.abs());
    }
    entries.retain(|&(j, _)| j != i);
    entries.push((i, -off));
    scale = scale.max(off.abs());
    let repair = if scale > 0.0 {
        (natural_diag + off).abs() / scale
    } else {
        0.0
    };
    Row {
        entries,
        repair,
        folded,
        resolved,
    }
}

/// Assembles the generator matrix. Rows are built in parallel but the result
/// does not depend on the number of workers.
pub fn assemble(model: &LevyTripletModel, grid: &TorusGrid) -> Result<GeneratorMatrix> {
    check_resolution(model, grid)?;
    let fold = fold_radius(model, grid);
    let rows: Vec<Row> = (0..grid.len())
        .into_par_iter()
        .map(|i| assemble_row(model, grid, fold, i))
        .collect();
    let repair = rows.iter().map(|r| r.repair).fold(0.0, f64::max);
    let (folded, resolved) = rows.first().map_or((0, 0), |r| (r.folded, r.resolved));
    let matrix = CsrMatrix::from_rows(rows.into_iter().map(|r| r.entries).collect());
    let min_off = matrix
        .iter()
        .filter(|&(i, j, _)| i != j)
        .map(|(_, _, v)| v)
        .fold(f64::INFINITY, f64::min);
    Ok(GeneratorMatrix {
        grid: grid.clone(),
        matrix,
        meta: GeneratorMeta {
            stencil_order: 2,
            drift_scheme: "central".into(),
            jump_wrapping: "multilinear".into(),
            fold_radius: fold,
            folded_nodes: folded,
            resolved_nodes: resolved,
            row_sum_repair: repair,
            min_offdiagonal: if min_off.is_finite() { min_off } else { 0.0 },
        },
        model_name: model.name().into(),
        model_hash: model_hash(model),
    })
}

/// A row-stochastic approximation of `exp(Δt G)`.
#[derive(Clone, Debug)]
pub struct TransitionMatrix {
    pub p: DMatrix<f64>,
    pub dt: f64,
    /// `(I + Δt/2^m G)` was squared `m` times.
    pub squarings: u32,
    /// Most negative entry removed by clamping (0 if none).
    pub clamped: f64,
}

impl GeneratorMatrix {
    /// Wraps an explicit rate matrix, e.g. a coarse Markov chain.
    pub fn from_matrix(grid: TorusGrid, matrix: CsrMatrix) -> Result<Self> {
        if matrix.n() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                got: matrix.n(),
            });
        }
        let min_off = matrix
            .iter()
            .filter(|&(i, j, _)| i != j)
            .map(|(_, _, v)| v)
            .fold(0.0, f64::min);
        Ok(GeneratorMatrix {
            grid,
            matrix,
            meta: GeneratorMeta {
                stencil_order: 0,
                drift_scheme: "explicit".into(),
                jump_wrapping: "none".into(),
                fold_radius: 0.0,
                folded_nodes: 0,
                resolved_nodes: 0,
                row_sum_repair: 0.0,
                min_offdiagonal: min_off,
            },
            model_name: String::new(),
            model_hash: String::new(),
        })
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn meta(&self) -> &GeneratorMeta {
        &self.meta
    }

    pub fn model_hash(&self) -> &str {
        &self.model_hash
    }

    pub fn len(&self) -> usize {
        self.matrix.n()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.n() == 0
    }

    pub fn apply(&self, f: &[f64]) -> Result<Vec<f64>> {
        if f.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: f.len(),
            });
        }
        let mut out = vec![0.0; f.len()];
        self.matrix.mul_vec(f, &mut out);
        Ok(out)
    }

    /// `max_i |Σ_j G_ij| / max_ij |G_ij|`.
    pub fn row_sum_defect(&self) -> f64 {
        let m = self.matrix.max_abs();
        if m == 0.0 {
            return 0.0;
        }
        self.matrix
            .row_sums()
            .iter()
            .fold(0.0, |a: f64, s| a.max(s.abs()))
            / m
    }

    /// Largest exit rate `max_i |G_ii|`.
    pub fn max_rate(&self) -> f64 {
        (0..self.len())
            .map(|i| self.matrix.get(i, i).abs())
            .fold(0.0, f64::max)
    }

    /// `P_Δt ≈ (I + Δt/2^m · G)^{2^m}`, with `m ≥ 20` chosen so the one-step
    /// matrix has a non-negative diagonal.
    pub fn build_transition(&self, dt: f64) -> Result<TransitionMatrix> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Precondition(format!("time step {dt} must be positive")));
        }
        let n = self.len();
        if n > DENSE_TRANSITION_LIMIT {
            return Err(Error::TooLarge {
                size: n,
                limit: DENSE_TRANSITION_LIMIT,
            });
        }
        let q = self.max_rate();
        let need = if q * dt > 1.0 {
            (q * dt).log2().ceil() as u32
        } else {
            0
        };
        if need > 40 {
            return Err(Error::PositivityUnachievable(format!(
                "Δt·max rate = {:e} needs 2^{need} sub-steps (limit 2^40)",
                q * dt
            )));
        }
        let m = need.max(20);
        let s = dt / 2f64.powi(m as i32);
        let mut p = DMatrix::identity(n, n);
        for (i, j, v) in self.matrix.iter() {
            p[(i, j)] += s * v;
        }
        for _ in 0..m {
            p = &p * &p;
        }
        let min = p.iter().copied().fold(0.0, f64::min);
        if min < -1e-10 {
            return Err(Error::PositivityUnachievable(format!(
                "semigroup step has entry {min:e}; the central stencil is not monotone at this resolution"
            )));
        }
        if min < 0.0 {
            p.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        for mut row in p.row_iter_mut() {
            let s: f64 = row.iter().sum();
            row /= s;
        }
        Ok(TransitionMatrix {
            p,
            dt,
            squarings: m,
            clamped: min,
        })
    }

    /// Writes the matrix in MatrixMarket coordinate format (1-based indices)
    /// with a comment header describing its provenance.
    pub fn write_coordinate<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "% model {} sha256 {}", self.model_name, self.model_hash)?;
        writeln!(w, "% resolution {:?}", self.grid.resolution())?;
        writeln!(
            w,
            "% stencil order {} drift {} jumps {} fold_radius {:e} row_sum_repair {:e}",
            self.meta.stencil_order,
            self.meta.drift_scheme,
            self.meta.jump_wrapping,
            self.meta.fold_radius,
            self.meta.row_sum_repair
        )?;
        writeln!(w, "{} {} {}", self.len(), self.len(), self.matrix.nnz())?;
        for (i, j, v) in self.matrix.iter() {
            writeln!(w, "{} {} {:e}", i + 1, j + 1, v)?;
        }
        Ok(())
    }
}
