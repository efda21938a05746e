use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{KernelSpec, LevyTripletModel, DEFAULT_SECOND_MOMENT_BOUND};
use crate::grid::TorusGrid;

/// Relative tolerance of the numeric symmetry test, scaled by the kernel's
/// first absolute moment.
pub const SYMMETRY_TOL: f64 = 1e-10;
const PSD_TOL: f64 = 1e-12;
const PERIODICITY_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub model: String,
    pub checks: Vec<Check>,
    /// Numeric verdict of the symmetry test.
    pub symmetric: bool,
    pub sup_second_moment: f64,
    /// `sup_x ∫_{|y|<r_min} |y|² ν(x,dy)`, the part not carried by quadrature nodes.
    pub inner_second_moment: f64,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

fn push(checks: &mut Vec<Check>, name: &str, passed: bool, detail: String) {
    checks.push(Check {
        name: name.into(),
        passed,
        detail,
    });
}

fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(1.0))
        .fold(0.0, f64::max)
}

/// Runs the standing-assumption checks on every node of `grid`. Never fails:
/// problems are reported as failed checks.
pub fn validate(model: &LevyTripletModel, grid: &TorusGrid) -> ValidationReport {
    let mut checks = Vec::new();
    let d = model.dim();
    let spec = model.spec();
    let freq = model.freq();

    if grid.dim() != d || grid.geometry() != model.geometry() {
        push(&mut checks, "grid", false, "grid does not match the model torus".into());
        return ValidationReport {
            model: model.name().into(),
            checks,
            symmetric: false,
            sup_second_moment: f64::NAN,
            inner_second_moment: f64::NAN,
        };
    }
    push(
        &mut checks,
        "grid",
        true,
        format!("resolution {:?}", grid.resolution()),
    );

    let shifts: Vec<Vec<f64>> = {
        let mut s = Vec::new();
        for k in 0..d {
            for m in [-1.0, 1.0] {
                let mut v = vec![0.0; d];
                v[k] = m * model.geometry().periods[k];
                s.push(v);
            }
        }
        s.push(model.geometry().periods.iter().map(|t| 2.0 * t).collect());
        s
    };

    let mut periodic_dev: f64 = 0.0;
    let mut sym_dev: f64 = 0.0;
    let mut min_eig_rel = f64::INFINITY;
    let mut min_rate = f64::INFINITY;
    let mut alpha_range = (f64::INFINITY, f64::NEG_INFINITY);
    let mut sup_m2: f64 = 0.0;
    let mut sup_inner: f64 = 0.0;
    let mut sup_first: f64 = 0.0;
    let mut sup_abs_first: f64 = 0.0;

    let mut x = vec![0.0; d];
    let mut rates = Vec::new();
    for idx in 0..grid.len() {
        grid.point(idx, &mut x);

        let (b, c, r) = (model.drift(&x), model.diffusion(&x), model.jump_rates(&x));
        for s in &shifts {
            let xs: Vec<f64> = x.iter().zip(s).map(|(a, b)| a + b).collect();
            periodic_dev = periodic_dev
                .max(rel_diff(&b, &model.drift(&xs)))
                .max(rel_diff(&c, &model.diffusion(&xs)))
                .max(rel_diff(&r, &model.jump_rates(&xs)));
        }

        // evaluate both triangles independently to detect asymmetric input
        for i in 0..d {
            for j in 0..d {
                let cij = spec.diffusion[i][j].eval(&x, freq);
                let cji = spec.diffusion[j][i].eval(&x, freq);
                sym_dev = sym_dev.max((cij - cji).abs());
            }
        }
        let trace: f64 = (0..d).map(|i| c[i * d + i]).sum();
        let min_eig = if d == 1 {
            c[0]
        } else {
            let m = DMatrix::from_row_slice(d, d, &c);
            SymmetricEigen::new(m).eigenvalues.min()
        };
        let scale = trace.abs().max(f64::MIN_POSITIVE);
        min_eig_rel = min_eig_rel.min(if min_eig >= 0.0 { 0.0 } else { min_eig / scale });
        if min_eig < 0.0 && trace <= 0.0 {
            min_eig_rel = f64::NEG_INFINITY;
        }

        model.rates_at(&x, &mut rates);
        if let Some(m) = rates.iter().copied().reduce(f64::min) {
            min_rate = min_rate.min(m);
        }
        if let KernelSpec::StableLike(k) = &spec.jumps {
            let a = k.alpha.eval(&x, freq);
            alpha_range = (alpha_range.0.min(a), alpha_range.1.max(a));
        }

        let mut inner = vec![0.0; d * d];
        model.kernel().inner_covariance(&x, freq, &mut inner);
        let inner_tr: f64 = (0..d).map(|i| inner[i * d + i]).sum();
        let mut m2 = inner_tr;
        let mut first = vec![0.0; d];
        let mut abs_first = 0.0;
        for (n, &w) in model.kernel().nodes().iter().zip(&rates) {
            m2 += w * n.norm * n.norm;
            abs_first += w.abs() * n.norm;
            for (f, y) in first.iter_mut().zip(&n.y) {
                *f += w * y;
            }
        }
        sup_m2 = sup_m2.max(m2);
        sup_inner = sup_inner.max(inner_tr);
        sup_first = sup_first.max(first.iter().map(|v| v * v).sum::<f64>().sqrt());
        sup_abs_first = sup_abs_first.max(abs_first);
    }

    push(
        &mut checks,
        "periodicity",
        periodic_dev <= PERIODICITY_TOL,
        format!("max relative deviation under lattice shifts {periodic_dev:.3e}"),
    );
    push(
        &mut checks,
        "diffusion_symmetric",
        sym_dev == 0.0,
        format!("max |c_ij - c_ji| = {sym_dev:.3e}"),
    );
    push(
        &mut checks,
        "diffusion_psd",
        min_eig_rel >= -PSD_TOL,
        format!("min eigenvalue / trace = {min_eig_rel:.3e}"),
    );

    let skew_ok = match &spec.jumps {
        KernelSpec::StableLike(k) => k.skew.iter().map(|u| u * u).sum::<f64>() <= 1.0,
        _ => true,
    };
    let nonneg = (min_rate >= 0.0 || min_rate == f64::INFINITY) && skew_ok;
    push(
        &mut checks,
        "kernel_nonnegative",
        nonneg,
        if nonneg {
            "all kernel weights non-negative".into()
        } else if !skew_ok {
            "skew vector longer than 1 makes the angular density negative".into()
        } else {
            format!("negative kernel mass: min node rate {min_rate:.3e}")
        },
    );

    let origin_free = model.kernel().nodes().iter().all(|n| n.norm > 0.0);
    push(
        &mut checks,
        "no_mass_at_origin",
        origin_free,
        if origin_free {
            "no jump node at y = 0".into()
        } else {
            "a jump atom sits at the origin".into()
        },
    );

    if let KernelSpec::StableLike(_) = &spec.jumps {
        let ok = alpha_range.0 > 0.0 && alpha_range.1 < 2.0;
        push(
            &mut checks,
            "stability_index",
            ok,
            format!(
                "α(x) ∈ [{:.4}, {:.4}]{}",
                alpha_range.0,
                alpha_range.1,
                if ok { "" } else { ": second-moment/stability bound violated, need (0, 2)" }
            ),
        );
    }

    let bound = spec.second_moment_bound.unwrap_or(DEFAULT_SECOND_MOMENT_BOUND);
    let m2_ok = sup_m2.is_finite() && sup_m2 <= bound;
    push(
        &mut checks,
        "second_moment",
        m2_ok,
        format!(
            "sup_x ∫|y|²ν = {sup_m2:.6e} (bound {bound:.3e}; inner part below quadrature {sup_inner:.3e})"
        ),
    );

    let symmetric = sup_first <= SYMMETRY_TOL * sup_abs_first.max(f64::MIN_POSITIVE) || sup_abs_first == 0.0;
    let consistent = spec.declared_symmetric.is_none_or(|s| s == symmetric);
    push(
        &mut checks,
        "symmetry",
        consistent,
        format!(
            "detected {} (sup |∫yν| = {sup_first:.3e}){}",
            if symmetric { "symmetric" } else { "asymmetric" },
            match spec.declared_symmetric {
                Some(s) if s != symmetric => format!("; contradicts declared symmetric = {s}"),
                Some(s) => format!("; declared symmetric = {s}"),
                None => String::new(),
            }
        ),
    );

    ValidationReport {
        model: model.name().into(),
        checks,
        symmetric,
        sup_second_moment: sup_m2,
        inner_second_moment: sup_inner,
    }
}
