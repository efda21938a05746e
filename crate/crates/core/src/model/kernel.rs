//! Jump kernels `ν(x, dy)` and their quadrature.
//!
//! Every family is reduced to a fixed set of displacement nodes `y_q` whose
//! rates `w_q(x)` depend on the state, so `∫ g(y) ν(x,dy) ≈ Σ_q w_q(x) g(y_q)`.
//! Finite-activity kernels are represented exactly by their atoms. Density
//! kernels use a log-spaced radial trapezoid rule on `[r_min, r_cut]` times a
//! uniform angular rule; the mass inside `r_min` is not dropped but exposed
//! through [`JumpKernel::inner_covariance`].

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;
use std::f64::consts::{PI, TAU};

use super::trig::TrigPoly;

fn default_r_min() -> f64 {
    1e-3
}
fn default_radial() -> usize {
    64
}
fn default_angular() -> usize {
    16
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub rate: TrigPoly,
    pub displacement: Vec<f64>,
}

/// `ν(x,dy) = λ(x) μ(x+y) a(y) dy` with a centred Gaussian profile `a` of
/// standard deviation `scale`, truncated to `|y| ≤ r_cut`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvolutionKernel {
    pub lambda: TrigPoly,
    pub mu: TrigPoly,
    pub scale: f64,
    pub r_cut: f64,
    #[serde(default = "default_r_min")]
    pub r_min: f64,
    #[serde(default = "default_radial")]
    pub radial_nodes: usize,
    #[serde(default = "default_angular")]
    pub angular_nodes: usize,
}

/// `ν(x,dy) = κ(x) (1 + ⟨u, y/|y|⟩) |y|^{-d-α(x)} 1{|y| ≤ r_cut} dy`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StableLikeKernel {
    pub alpha: TrigPoly,
    pub kappa: TrigPoly,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skew: Vec<f64>,
    pub r_cut: f64,
    #[serde(default = "default_r_min")]
    pub r_min: f64,
    #[serde(default = "default_radial")]
    pub radial_nodes: usize,
    #[serde(default = "default_angular")]
    pub angular_nodes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum KernelSpec {
    None,
    FiniteActivity { atoms: Vec<Atom> },
    Convolution(ConvolutionKernel),
    StableLike(StableLikeKernel),
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec::None
    }
}

#[derive(Clone, Debug)]
pub struct JumpNode {
    pub y: Vec<f64>,
    pub norm: f64,
    /// unit direction `y/|y|`
    pub dir: Vec<f64>,
    geom: f64,
    ln_r: f64,
}

/// A jump kernel with its precomputed quadrature nodes.
#[derive(Clone, Debug)]
pub struct JumpKernel {
    spec: KernelSpec,
    dim: usize,
    nodes: Vec<JumpNode>,
}

/// `∫_lo^hi r^p dr`.
fn power_integral(p: f64, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    let q = p + 1.0;
    if q.abs() < 1e-12 {
        (hi / lo).ln()
    } else if lo == 0.0 {
        if q > 0.0 {
            hi.powf(q) / q
        } else {
            f64::INFINITY
        }
    } else {
        (hi.powf(q) - lo.powf(q)) / q
    }
}

fn unit_directions(dim: usize, angular: usize) -> Vec<(Vec<f64>, f64)> {
    match dim {
        1 => vec![(vec![1.0], 1.0), (vec![-1.0], 1.0)],
        _ => {
            // antipodal pairs are exact negations so symmetric kernels cancel exactly
            let half = angular / 2;
            let w = TAU / (2 * half) as f64;
            let mut first = Vec::with_capacity(half);
            for j in 0..half {
                let th = PI * j as f64 / half as f64;
                first.push((vec![th.cos(), th.sin()], w));
            }
            let second: Vec<_> = first
                .iter()
                .map(|(d, w)| (d.iter().map(|v| -v).collect(), *w))
                .collect();
            first.into_iter().chain(second).collect()
        }
    }
}

fn radial_rule(r_min: f64, r_cut: f64, n: usize) -> Vec<(f64, f64)> {
    // trapezoid in s = ln r: ∫ g(r) dr = ∫ g(e^s) e^s ds
    let (a, b) = (r_min.ln(), r_cut.ln());
    let ds = (b - a) / (n - 1) as f64;
    (0..n)
        .map(|k| {
            let s = if k == n - 1 { b } else { a + ds * k as f64 };
            let w = if k == 0 || k == n - 1 { 0.5 * ds } else { ds };
            (s.exp(), w)
        })
        .collect()
}

fn density_nodes(dim: usize, r_min: f64, r_cut: f64, radial: usize, angular: usize) -> Vec<JumpNode> {
    let dirs = unit_directions(dim, angular);
    let mut nodes = Vec::with_capacity(dirs.len() * radial);
    for (r, wr) in radial_rule(r_min, r_cut, radial) {
        for (dir, wa) in &dirs {
            nodes.push(JumpNode {
                y: dir.iter().map(|u| u * r).collect(),
                norm: r,
                dir: dir.clone(),
                // dy = r^{d-1} dr dθ and dr = r ds
                geom: r.powi(dim as i32) * wr * wa,
                ln_r: r.ln(),
            });
        }
    }
    nodes
}

fn sphere_mass(dim: usize) -> f64 {
    if dim == 1 {
        2.0
    } else {
        TAU
    }
}

/// `∫_{S^{d-1}} θ θ' dθ = sphere_second · I`.
fn sphere_second(dim: usize) -> f64 {
    if dim == 1 {
        2.0
    } else {
        PI
    }
}

impl KernelSpec {
    pub fn check(&self, dim: usize) -> Result<(), String> {
        match self {
            KernelSpec::None => Ok(()),
            KernelSpec::FiniteActivity { atoms } => {
                for (m, a) in atoms.iter().enumerate() {
                    a.rate.check_dim(dim).map_err(|e| format!("atom {m} rate: {e}"))?;
                    if a.displacement.len() != dim {
                        return Err(format!("atom {m} displacement has wrong dimension"));
                    }
                    if a.displacement.iter().any(|v| !v.is_finite()) {
                        return Err(format!("atom {m} displacement is not finite"));
                    }
                }
                Ok(())
            }
            KernelSpec::Convolution(k) => {
                k.lambda.check_dim(dim).map_err(|e| format!("lambda: {e}"))?;
                k.mu.check_dim(dim).map_err(|e| format!("mu: {e}"))?;
                if !(k.scale > 0.0) {
                    return Err("convolution profile scale must be positive".into());
                }
                check_rule(dim, k.r_min, k.r_cut, k.radial_nodes, k.angular_nodes)
            }
            KernelSpec::StableLike(k) => {
                k.alpha.check_dim(dim).map_err(|e| format!("alpha: {e}"))?;
                k.kappa.check_dim(dim).map_err(|e| format!("kappa: {e}"))?;
                if !k.skew.is_empty() && k.skew.len() != dim {
                    return Err("skew vector has wrong dimension".into());
                }
                check_rule(dim, k.r_min, k.r_cut, k.radial_nodes, k.angular_nodes)
            }
        }
    }
}

fn check_rule(dim: usize, r_min: f64, r_cut: f64, radial: usize, angular: usize) -> Result<(), String> {
    if dim > 2 {
        return Err(format!(
            "density kernels have a quadrature rule only for d ≤ 2 (got d = {dim})"
        ));
    }
    if !(r_min > 0.0 && r_cut > r_min && r_cut.is_finite()) {
        return Err(format!("need 0 < r_min < r_cut < ∞ (got {r_min}, {r_cut})"));
    }
    if radial < 2 {
        return Err("need at least 2 radial nodes".into());
    }
    if dim == 2 && (angular < 4 || angular % 2 == 1) {
        return Err("need an even number ≥ 4 of angular nodes".into());
    }
    Ok(())
}

impl JumpKernel {
    /// Builds the quadrature for a structurally valid spec (see [`KernelSpec::check`]).
    pub fn new(spec: KernelSpec, dim: usize) -> Self {
        let nodes = match &spec {
            KernelSpec::None => Vec::new(),
            KernelSpec::FiniteActivity { atoms } => atoms
                .iter()
                .map(|a| {
                    let norm = a.displacement.iter().map(|v| v * v).sum::<f64>().sqrt();
                    JumpNode {
                        y: a.displacement.clone(),
                        norm,
                        dir: a
                            .displacement
                            .iter()
                            .map(|v| if norm > 0.0 { v / norm } else { 0.0 })
                            .collect(),
                        geom: 1.0,
                        ln_r: norm.ln(),
                    }
                })
                .collect(),
            KernelSpec::Convolution(k) => {
                density_nodes(dim, k.r_min, k.r_cut, k.radial_nodes, k.angular_nodes)
            }
            KernelSpec::StableLike(k) => {
                density_nodes(dim, k.r_min, k.r_cut, k.radial_nodes, k.angular_nodes)
            }
        };
        JumpKernel { spec, dim, nodes }
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn nodes(&self) -> &[JumpNode] {
        &self.nodes
    }

    pub fn is_none(&self) -> bool {
        matches!(self.spec, KernelSpec::None) || self.nodes.is_empty()
    }

    pub fn is_density(&self) -> bool {
        matches!(self.spec, KernelSpec::Convolution(_) | KernelSpec::StableLike(_))
    }

    /// Largest node radius (0 for no jumps).
    pub fn max_jump(&self) -> f64 {
        self.nodes.iter().map(|n| n.norm).fold(0.0, f64::max)
    }

    /// Fills `out[q] = w_q(x)`; `x` must already be wrapped.
    pub fn rates_into(&self, x: &[f64], freq: &[f64], out: &mut Vec<f64>) {
        out.clear();
        match &self.spec {
            KernelSpec::None => {}
            KernelSpec::FiniteActivity { atoms } => {
                out.extend(atoms.iter().map(|a| a.rate.eval(x, freq)));
            }
            KernelSpec::Convolution(k) => {
                let lam = k.lambda.eval(x, freq);
                let norm = (TAU * k.scale * k.scale).powf(-0.5 * self.dim as f64);
                let inv2s2 = 0.5 / (k.scale * k.scale);
                let mut z = vec![0.0; self.dim];
                for n in &self.nodes {
                    for ((zi, xi), yi) in z.iter_mut().zip(x).zip(&n.y) {
                        *zi = xi + yi;
                    }
                    let a = norm * (-n.norm * n.norm * inv2s2).exp();
                    out.push(lam * k.mu.eval(&z, freq) * a * n.geom);
                }
            }
            KernelSpec::StableLike(k) => {
                let alpha = k.alpha.eval(x, freq);
                let kappa = k.kappa.eval(x, freq);
                let expo = -(self.dim as f64 + alpha);
                for n in &self.nodes {
                    let skew = 1.0 + dot(&k.skew, &n.dir);
                    out.push(kappa * skew * (expo * n.ln_r).exp() * n.geom);
                }
            }
        }
    }

    /// `∫_{|y| < r} y y' ν(x,dy)` for the part of the kernel *not* carried by
    /// quadrature nodes, i.e. `|y| < min(r, r_min)`. Added to `out` (d×d,
    /// row-major). Zero for finite-activity kernels.
    pub fn inner_covariance(&self, x: &[f64], freq: &[f64], out: &mut [f64]) {
        match &self.spec {
            KernelSpec::StableLike(k) => {
                let c = self.stable_second_moment(k, x, freq, 0.0, k.r_min);
                add_identity(out, self.dim, c);
            }
            KernelSpec::Convolution(k) => {
                // a, μ are smooth at the origin: freeze them at y = 0
                let d = self.dim as f64;
                let a0 = (TAU * k.scale * k.scale).powf(-0.5 * d);
                let dens = k.lambda.eval(x, freq) * k.mu.eval(x, freq) * a0;
                let c = dens * sphere_second(self.dim) * k.r_min.powf(d + 2.0) / (d + 2.0);
                add_identity(out, self.dim, c);
            }
            _ => {}
        }
    }

    /// Per-direction second moment `∫_{lo<|y|<hi}` for the stable-like family.
    fn stable_second_moment(&self, k: &StableLikeKernel, x: &[f64], freq: &[f64], lo: f64, hi: f64) -> f64 {
        let alpha = k.alpha.eval(x, freq);
        let kappa = k.kappa.eval(x, freq);
        kappa * sphere_second(self.dim) * power_integral(1.0 - alpha, lo, hi.min(k.r_cut))
    }

    /// Second moment of the whole `|y| < r` region, used by the simulator's
    /// Gaussian small-jump substitution. Adds into `out`.
    pub fn covariance_below(&self, r: f64, x: &[f64], freq: &[f64], rates: &[f64], out: &mut [f64]) {
        match &self.spec {
            KernelSpec::StableLike(k) => {
                let c = self.stable_second_moment(k, x, freq, 0.0, r);
                add_identity(out, self.dim, c);
            }
            KernelSpec::Convolution(k) => {
                self.inner_covariance(x, freq, out);
                if r > k.r_min {
                    self.node_second_moment(rates, |n| n.norm < r, out);
                }
            }
            KernelSpec::FiniteActivity { .. } => self.node_second_moment(rates, |n| n.norm < r, out),
            KernelSpec::None => {}
        }
    }

    fn node_second_moment(&self, rates: &[f64], keep: impl Fn(&JumpNode) -> bool, out: &mut [f64]) {
        let d = self.dim;
        for (n, &w) in self.nodes.iter().zip(rates) {
            if keep(n) {
                for i in 0..d {
                    for j in 0..d {
                        out[i * d + j] += w * n.y[i] * n.y[j];
                    }
                }
            }
        }
    }

    /// `∫_{lo ≤ |y| < hi} y ν(x,dy)`, added into `out`.
    pub fn first_moment_between(&self, lo: f64, hi: f64, x: &[f64], freq: &[f64], rates: &[f64], out: &mut [f64]) {
        match &self.spec {
            KernelSpec::StableLike(k) => {
                if k.skew.is_empty() {
                    return;
                }
                let alpha = k.alpha.eval(x, freq);
                let kappa = k.kappa.eval(x, freq);
                let radial = power_integral(-alpha, lo, hi.min(k.r_cut));
                // ∫ θ (1 + ⟨u,θ⟩) dθ = (sphere_second) u
                let c = kappa * sphere_second(self.dim) * radial;
                for (o, u) in out.iter_mut().zip(&k.skew) {
                    *o += c * u;
                }
            }
            _ => {
                for (n, &w) in self.nodes.iter().zip(rates) {
                    if n.norm >= lo && n.norm < hi {
                        for (o, y) in out.iter_mut().zip(&n.y) {
                            *o += w * y;
                        }
                    }
                }
            }
        }
    }

    /// Total rate of jumps with `|y| ≥ r` at `x`.
    pub fn mass_above(&self, r: f64, x: &[f64], freq: &[f64], rates: &[f64]) -> f64 {
        match &self.spec {
            KernelSpec::StableLike(k) => {
                let alpha = k.alpha.eval(x, freq);
                let kappa = k.kappa.eval(x, freq);
                kappa * sphere_mass(self.dim) * power_integral(-1.0 - alpha, r.max(1e-300), k.r_cut)
            }
            _ => self
                .nodes
                .iter()
                .zip(rates)
                .filter(|(n, _)| n.norm >= r)
                .map(|(_, w)| w)
                .sum(),
        }
    }

    /// `∫_{|y| ≥ r} |y|² ν(x,dy)`.
    pub fn second_moment_above(&self, r: f64, x: &[f64], freq: &[f64], rates: &[f64]) -> f64 {
        match &self.spec {
            KernelSpec::StableLike(k) => {
                let alpha = k.alpha.eval(x, freq);
                let kappa = k.kappa.eval(x, freq);
                kappa * sphere_mass(self.dim) * power_integral(1.0 - alpha, r, k.r_cut)
            }
            _ => self
                .nodes
                .iter()
                .zip(rates)
                .filter(|(n, _)| n.norm >= r)
                .map(|(n, w)| w * n.norm * n.norm)
                .sum(),
        }
    }

    /// Upper bound on the candidate rate used by the simulator for jumps of
    /// size at least `cutoff`, valid for every `x`.
    pub fn dominating_rate(&self, cutoff: f64) -> f64 {
        match &self.spec {
            KernelSpec::None => 0.0,
            KernelSpec::FiniteActivity { atoms } => atoms.iter().map(|a| a.rate.sup_bound()).sum(),
            KernelSpec::Convolution(k) => {
                k.lambda.sup_bound() * k.mu.sup_bound() * self.gaussian_annulus_mass(k, cutoff)
            }
            KernelSpec::StableLike(k) => {
                // rate = κ S ∫ r^{-1-α}: bound κ by its sup and the radial
                // integral by the worse of the two extreme exponents
                let (amin, amax) = (k.alpha.inf_bound(), k.alpha.sup_bound());
                let lo = cutoff.max(1e-300);
                let rad = power_integral(-1.0 - amin, lo, k.r_cut).max(power_integral(-1.0 - amax, lo, k.r_cut));
                k.kappa.sup_bound() * sphere_mass(self.dim) * rad
            }
        }
    }

    fn gaussian_annulus_mass(&self, k: &ConvolutionKernel, lo: f64) -> f64 {
        let s = k.scale;
        match self.dim {
            1 => erf(k.r_cut / (s * 2f64.sqrt())) - erf(lo / (s * 2f64.sqrt())),
            _ => (-lo * lo / (2.0 * s * s)).exp() - (-k.r_cut * k.r_cut / (2.0 * s * s)).exp(),
        }
    }

    /// Samples the jumps with `|y| ≥ cutoff` occurring during one Euler step of
    /// length `dt` frozen at state `x`. Each accepted displacement is passed to
    /// `emit`.
    pub fn sample_step<R: Rng + ?Sized>(
        &self,
        cutoff: f64,
        x: &[f64],
        freq: &[f64],
        rates: &[f64],
        dt: f64,
        rng: &mut R,
        scratch: &mut Vec<f64>,
        mut emit: impl FnMut(&[f64]),
    ) {
        match &self.spec {
            KernelSpec::None => {}
            KernelSpec::FiniteActivity { .. } => {
                for (n, &w) in self.nodes.iter().zip(rates) {
                    let k = poisson(w * dt, rng);
                    for _ in 0..k {
                        emit(&n.y);
                    }
                }
            }
            KernelSpec::StableLike(k) => {
                let alpha = k.alpha.eval(x, freq);
                let lam = self.mass_above(cutoff, x, freq, rates);
                let count = poisson(lam * dt, rng);
                let lo_pow = cutoff.powf(-alpha);
                let hi_pow = k.r_cut.powf(-alpha);
                let umax = 1.0 + k.skew.iter().map(|u| u * u).sum::<f64>().sqrt();
                scratch.resize(self.dim, 0.0);
                for _ in 0..count {
                    let u: f64 = rng.random();
                    let r = (lo_pow - u * (lo_pow - hi_pow)).powf(-1.0 / alpha);
                    loop {
                        self.random_direction(rng, scratch);
                        let accept = (1.0 + dot(&k.skew, scratch)) / umax;
                        if rng.random::<f64>() < accept {
                            break;
                        }
                    }
                    scratch.iter_mut().for_each(|v| *v *= r);
                    emit(scratch);
                }
            }
            KernelSpec::Convolution(k) => {
                let mubar = k.mu.sup_bound();
                let lam = k.lambda.eval(x, freq) * mubar * self.gaussian_annulus_mass(k, cutoff);
                let count = poisson(lam * dt, rng);
                scratch.resize(self.dim, 0.0);
                let mut z = vec![0.0; self.dim];
                for _ in 0..count {
                    loop {
                        for v in scratch.iter_mut() {
                            *v = k.scale * rng.sample::<f64, _>(rand_distr::StandardNormal);
                        }
                        let r = scratch.iter().map(|v| v * v).sum::<f64>().sqrt();
                        if r >= cutoff && r <= k.r_cut {
                            break;
                        }
                    }
                    for ((zi, xi), yi) in z.iter_mut().zip(x).zip(scratch.iter()) {
                        *zi = xi + yi;
                    }
                    if rng.random::<f64>() * mubar < k.mu.eval(&z, freq) {
                        emit(scratch);
                    }
                }
            }
        }
    }

    fn random_direction<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        if self.dim == 1 {
            out[0] = if rng.random::<bool>() { 1.0 } else { -1.0 };
        } else {
            let th = TAU * rng.random::<f64>();
            out[0] = th.cos();
            out[1] = th.sin();
        }
    }
}

fn add_identity(out: &mut [f64], dim: usize, c: f64) {
    for i in 0..dim {
        out[i * dim + i] += c;
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Poisson sample by sequential inversion; fine for the small means of one
/// Euler step.
pub(crate) fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    if mean > 30.0 {
        let d = rand_distr::Poisson::new(mean).expect("finite positive mean");
        return rand_distr::Distribution::<f64>::sample(&d, rng) as u64;
    }
    let u: f64 = rng.random();
    let mut p = (-mean).exp();
    let mut cdf = p;
    let mut k = 0u64;
    while u > cdf && p > 0.0 {
        k += 1;
        p *= mean / k as f64;
        cdf += p;
    }
    k
}
