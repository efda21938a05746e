//! Periodic Lévy triplets `(b, c, ν)` and their pointwise evaluation.

pub mod builtin;
mod file;
mod geometry;
mod kernel;
mod trig;
mod validate;

pub use file::{load_model, model_hash, parse_model, serialize_model};
pub use geometry::TorusGeometry;
pub use kernel::{Atom, ConvolutionKernel, JumpKernel, JumpNode, KernelSpec, StableLikeKernel};
pub(crate) use kernel::dot;
pub use trig::{Harmonics, TrigPoly, TrigTerm, Wave};
pub use validate::{validate, Check, ValidationReport};

use nalgebra::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn is_default_bound(v: &Option<f64>) -> bool {
    v.is_none()
}

/// Serializable description of a model; the on-disk format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(default)]
    pub name: String,
    pub geometry: TorusGeometry,
    pub drift: Vec<TrigPoly>,
    pub diffusion: Vec<Vec<TrigPoly>>,
    #[serde(default)]
    pub jumps: KernelSpec,
    /// User assertion that `ν(x,·)` is symmetric; validation cross-checks it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub declared_symmetric: Option<bool>,
    /// Declared bound for `sup_x ∫|y|² ν(x,dy)`.
    #[serde(default, skip_serializing_if = "is_default_bound")]
    pub second_moment_bound: Option<f64>,
}

pub const DEFAULT_SECOND_MOMENT_BOUND: f64 = 1e3;

/// A Lévy-type process with τ-periodic coefficients. There is no killing
/// term: the type has nowhere to put one.
///
/// Every evaluation wraps its argument onto the fundamental domain first, so
/// coefficients are periodic by construction.
#[derive(Clone, Debug)]
pub struct LevyTripletModel {
    spec: ModelSpec,
    freq: Vec<f64>,
    kernel: JumpKernel,
}

impl LevyTripletModel {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        spec.geometry.check()?;
        let d = spec.geometry.dim();
        if spec.drift.len() != d {
            return Err(Error::InvalidModel(format!(
                "drift has {} components, expected {d}",
                spec.drift.len()
            )));
        }
        for (i, p) in spec.drift.iter().enumerate() {
            p.check_dim(d)
                .map_err(|e| Error::InvalidModel(format!("drift[{i}]: {e}")))?;
        }
        if spec.diffusion.len() != d || spec.diffusion.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidModel(format!("diffusion must be {d}×{d}")));
        }
        for (i, row) in spec.diffusion.iter().enumerate() {
            for (j, p) in row.iter().enumerate() {
                p.check_dim(d)
                    .map_err(|e| Error::InvalidModel(format!("diffusion[{i}][{j}]: {e}")))?;
            }
        }
        spec.jumps
            .check(d)
            .map_err(|e| Error::InvalidModel(format!("jumps: {e}")))?;
        let freq = spec.geometry.frequencies();
        let kernel = JumpKernel::new(spec.jumps.clone(), d);
        Ok(LevyTripletModel { spec, freq, kernel })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn dim(&self) -> usize {
        self.spec.geometry.dim()
    }

    pub fn geometry(&self) -> &TorusGeometry {
        &self.spec.geometry
    }

    pub fn kernel(&self) -> &JumpKernel {
        &self.kernel
    }

    pub(crate) fn freq(&self) -> &[f64] {
        &self.freq
    }

    pub fn wrap(&self, x: &[f64]) -> Vec<f64> {
        self.spec.geometry.wrap(x)
    }

    /// `b(x)` at an already wrapped point.
    #[inline]
    pub(crate) fn drift_at(&self, x: &[f64], out: &mut [f64]) {
        for (o, p) in out.iter_mut().zip(&self.spec.drift) {
            *o = p.eval(x, &self.freq);
        }
    }

    /// `c(x)` (row-major d×d) at an already wrapped point. Only the upper
    /// triangle is evaluated, so the result is symmetric bit-for-bit.
    #[inline]
    pub(crate) fn diffusion_at(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim();
        for i in 0..d {
            for j in i..d {
                let v = self.spec.diffusion[i][j].eval(x, &self.freq);
                out[i * d + j] = v;
                out[j * d + i] = v;
            }
        }
    }

    pub(crate) fn rates_at(&self, x: &[f64], out: &mut Vec<f64>) {
        self.kernel.rates_into(x, &self.freq, out);
    }

    pub fn drift(&self, x: &[f64]) -> Vec<f64> {
        let xw = self.wrap(x);
        let mut out = vec![0.0; self.dim()];
        self.drift_at(&xw, &mut out);
        out
    }

    pub fn diffusion(&self, x: &[f64]) -> Vec<f64> {
        let xw = self.wrap(x);
        let d = self.dim();
        let mut out = vec![0.0; d * d];
        self.diffusion_at(&xw, &mut out);
        out
    }

    /// Quadrature node rates `w_q(x)`, aligned with `kernel().nodes()`.
    pub fn jump_rates(&self, x: &[f64]) -> Vec<f64> {
        let xw = self.wrap(x);
        let mut out = Vec::new();
        self.rates_at(&xw, &mut out);
        out
    }

    /// `b*(x) = b(x) + ∫_{|y|≥1} y ν(x,dy)`. A model without jumps simply
    /// contributes no integral term.
    pub fn effective_drift_coefficient(&self, x: &[f64]) -> Vec<f64> {
        let xw = self.wrap(x);
        let mut rates = Vec::new();
        self.rates_at(&xw, &mut rates);
        let mut out = vec![0.0; self.dim()];
        self.effective_drift_at(&xw, &rates, &mut out);
        out
    }

    pub(crate) fn effective_drift_at(&self, x: &[f64], rates: &[f64], out: &mut [f64]) {
        self.drift_at(x, out);
        self.kernel
            .first_moment_between(1.0, f64::INFINITY, x, &self.freq, rates, out);
    }

    /// `q(x,ξ) = −i⟨ξ,b⟩ + ½⟨ξ,cξ⟩ + ∫(1 − e^{i⟨ξ,y⟩} + i⟨ξ,y⟩1_{|y|<1}) ν(x,dy)`.
    ///
    /// Kernel mass inside the quadrature's inner radius is treated as its
    /// Gaussian (second-moment) equivalent.
    pub fn eval_symbol(&self, x: &[f64], xi: &[f64]) -> Complex<f64> {
        let d = self.dim();
        let xw = self.wrap(x);
        let mut b = vec![0.0; d];
        let mut c = vec![0.0; d * d];
        self.drift_at(&xw, &mut b);
        self.diffusion_at(&xw, &mut c);
        self.kernel.inner_covariance(&xw, &self.freq, &mut c);
        let mut quad = 0.0;
        for i in 0..d {
            for j in 0..d {
                quad += xi[i] * c[i * d + j] * xi[j];
            }
        }
        let mut re = 0.5 * quad;
        let mut im = -dot(xi, &b);
        let mut rates = Vec::new();
        self.rates_at(&xw, &mut rates);
        for (n, &w) in self.kernel.nodes().iter().zip(&rates) {
            let p = dot(xi, &n.y);
            re += w * (1.0 - p.cos());
            let comp = if n.norm < 1.0 { p } else { 0.0 };
            im += w * (comp - p.sin());
        }
        Complex::new(re, im)
    }

    /// `∫ y y' ν(x,dy)` including the sub-quadrature part (row-major).
    pub fn jump_second_moment(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let xw = self.wrap(x);
        let mut rates = Vec::new();
        self.rates_at(&xw, &mut rates);
        let mut out = vec![0.0; d * d];
        self.kernel.inner_covariance(&xw, &self.freq, &mut out);
        for (n, &w) in self.kernel.nodes().iter().zip(&rates) {
            for i in 0..d {
                for j in 0..d {
                    out[i * d + j] += w * n.y[i] * n.y[j];
                }
            }
        }
        out
    }

    /// True when the drift is identically zero as a trig polynomial.
    pub fn has_zero_drift(&self) -> bool {
        self.spec.drift.iter().all(TrigPoly::is_zero)
    }

    /// True when every coefficient is constant in `x`.
    pub fn is_constant_coefficient(&self) -> bool {
        let consts = self.spec.drift.iter().all(TrigPoly::is_constant)
            && self.spec.diffusion.iter().flatten().all(TrigPoly::is_constant);
        consts
            && match &self.spec.jumps {
                KernelSpec::None => true,
                KernelSpec::FiniteActivity { atoms } => atoms.iter().all(|a| a.rate.is_constant()),
                KernelSpec::Convolution(k) => k.lambda.is_constant() && k.mu.is_constant(),
                KernelSpec::StableLike(k) => k.alpha.is_constant() && k.kappa.is_constant(),
            }
    }
}
