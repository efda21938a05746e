//! Monte Carlo paths of the Lévy-type SDE under diffusive scaling.
//!
//! Each path runs an Euler scheme in unscaled time up to `ε^{-2}T` and reports
//! `Y^ε_t = εX_{ε^{-2}t} − ε^{-1}b̄*t` on a mesh, the modified second
//! characteristic `C̃^ε_T` of the corrected process (truncation `h(x) = x`) and
//! counts of its large jumps.
//!
//! Path `p` draws from `ChaCha8Rng::seed_from_u64(seed)` with stream number
//! `p`, so its output depends only on `(seed, p)` and never on scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corrector::CorrectorField;
use crate::effective::EffectiveLaw;
use crate::error::{Error, Result};
use crate::grid::{Stencil, TorusGrid};
use crate::model::{KernelSpec, LevyTripletModel, TorusGeometry};

/// Largest admissible per-step probability that a given atom fires.
pub const MAX_ATOM_STEP_PROBABILITY: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmallJumps {
    /// Replace jumps below the cutoff by a Gaussian increment with the same
    /// covariance.
    Gaussian,
    /// Drop them; the dropped second moment is reported.
    Drop,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Initial {
    Point { x: Vec<f64> },
    Uniform,
}

fn default_cutoff() -> f64 {
    0.1
}
fn default_small_jumps() -> SmallJumps {
    SmallJumps::Gaussian
}
fn default_initial() -> Initial {
    Initial::Uniform
}
fn default_mesh() -> usize {
    1
}
fn default_deltas() -> Vec<f64> {
    vec![0.5]
}
fn default_refinement() -> usize {
    2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    /// Euler step in unscaled time (shrunk slightly so steps hit `ε^{-2}T`).
    pub dt: f64,
    /// Scaled horizon `T`.
    pub horizon: f64,
    pub eps: f64,
    pub n_paths: usize,
    pub seed: u64,
    #[serde(default = "default_cutoff")]
    pub small_jump_cutoff: f64,
    #[serde(default = "default_small_jumps")]
    pub small_jumps: SmallJumps,
    #[serde(default = "default_initial")]
    pub initial: Initial,
    /// Number of equal mesh intervals on `[0, T]`.
    #[serde(default = "default_mesh")]
    pub mesh: usize,
    /// Thresholds for the jump log.
    #[serde(default = "default_deltas")]
    pub deltas: Vec<f64>,
    /// Lattice refinement over the corrector grid for tabulated integrands.
    #[serde(default = "default_refinement")]
    pub table_refinement: usize,
    /// Histogram the wrapped state on a lattice of this resolution.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub occupation: Option<usize>,
}

impl SimulationConfig {
    pub fn new(dt: f64, horizon: f64, eps: f64, n_paths: usize, seed: u64) -> Self {
        SimulationConfig {
            dt,
            horizon,
            eps,
            n_paths,
            seed,
            small_jump_cutoff: default_cutoff(),
            small_jumps: default_small_jumps(),
            initial: default_initial(),
            mesh: default_mesh(),
            deltas: default_deltas(),
            table_refinement: default_refinement(),
            occupation: None,
        }
    }

    pub fn check(&self, dim: usize) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive");
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad("horizon must be positive");
        }
        if !(self.eps > 0.0 && self.eps <= 1.0) {
            return bad("ε must lie in (0, 1]");
        }
        if self.n_paths == 0 {
            return bad("need at least one path");
        }
        if self.mesh == 0 || self.table_refinement == 0 {
            return bad("mesh and table refinement must be positive");
        }
        if !(self.small_jump_cutoff > 0.0) {
            return bad("small-jump cutoff must be positive");
        }
        if self.deltas.iter().any(|d| !(*d > 0.0)) {
            return bad("jump-log thresholds must be positive");
        }
        if let Initial::Point { x } = &self.initial {
            if x.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: x.len(),
                });
            }
        }
        if self.occupation == Some(0) {
            return bad("occupation resolution must be positive");
        }
        Ok(())
    }

    /// Step count and cost, available before launching.
    pub fn plan(&self) -> SimulationCost {
        let unscaled = self.horizon / (self.eps * self.eps);
        let per_mesh = (unscaled / (self.dt * self.mesh as f64)).ceil().max(1.0) as u64;
        let steps = per_mesh * self.mesh as u64;
        SimulationCost {
            unscaled_horizon: unscaled,
            steps_per_path: steps,
            dt_effective: unscaled / steps as f64,
            total_steps: steps as f64 * self.n_paths as f64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationCost {
    pub unscaled_horizon: f64,
    pub steps_per_path: u64,
    pub dt_effective: f64,
    pub total_steps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmallJumpReport {
    pub mode: SmallJumps,
    pub cutoff: f64,
    /// `sup_x tr ∫_{|y|<cutoff} yy' ν(x,dy)` over the lattice; zero when no
    /// jumps are aggregated. For `Drop` this is the missing variance rate.
    pub sup_second_moment_below: f64,
    /// Largest expected number of sampled jumps per step.
    pub max_jumps_per_step: f64,
}

/// Per-path output, all arrays path-major.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PathEnsemble {
    pub config: SimulationConfig,
    pub model: String,
    pub dim: usize,
    pub cost: SimulationCost,
    pub mean_drift: Vec<f64>,
    /// `Y^ε_T − Y^ε_0`.
    pub endpoints: Vec<Vec<f64>>,
    /// `Y^ε_{t_m} − Y^ε_{t_{m−1}}`, flattened `mesh × d`.
    pub increments: Vec<Vec<f64>>,
    /// First characteristic `B^ε_T`; zero by the centring.
    pub drift_characteristic: Vec<Vec<f64>>,
    /// `C̃^ε_T`, row-major `d × d`.
    pub ctilde: Vec<Vec<f64>>,
    /// Unscaled number of sampled jumps.
    pub jump_counts: Vec<u64>,
    /// Jumps of the corrected scaled process `ε(y − β(X+y) + β(X))` with
    /// norm above each `deltas[k]`.
    pub exceedances: Vec<Vec<u64>>,
    /// Same for the raw scaled jumps `εy`.
    pub raw_exceedances: Vec<Vec<u64>>,
    pub small_jumps: SmallJumpReport,
    /// Normalized occupation histogram of the wrapped state (lattice order).
    pub occupation: Option<Vec<f64>>,
}

impl PathEnsemble {
    pub fn n_paths(&self) -> usize {
        self.endpoints.len()
    }

    /// Writes one CSV row per path: endpoint, `C̃` entries, jump counts.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        let d = self.dim;
        let mut cols: Vec<String> = (0..d).map(|i| format!("y{i}")).collect();
        for i in 0..d {
            cols.extend((0..d).map(|j| format!("ctilde{i}{j}")));
        }
        cols.push("jumps".into());
        cols.extend(self.config.deltas.iter().map(|dl| format!("exceed_{dl}")));
        writeln!(w, "{}", cols.join(","))?;
        for p in 0..self.n_paths() {
            let mut row: Vec<String> = self.endpoints[p].iter().map(|v| v.to_string()).collect();
            row.extend(self.ctilde[p].iter().map(|v| v.to_string()));
            row.push(self.jump_counts[p].to_string());
            row.extend(self.exceedances[p].iter().map(|v| v.to_string()));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Corrector values on its grid, interpolated multilinearly.
struct CorrectorLookup<'a> {
    grid: &'a TorusGrid,
    field: &'a CorrectorField,
}

impl CorrectorLookup<'_> {
    fn beta(&self, x: &[f64], st: &mut Stencil, out: &mut [f64]) {
        self.grid.locate(x, st);
        for (o, b) in out.iter_mut().zip(&self.field.beta) {
            *o = weighted(st, b);
        }
    }

    /// `grad[i*d + k] = ∂_k β_i(x)`.
    fn grad(&self, x: &[f64], st: &mut Stencil, out: &mut [f64]) {
        self.grid.locate(x, st);
        let d = self.field.dim();
        for (i, gi) in self.field.grad_beta.iter().enumerate() {
            for (k, gik) in gi.iter().enumerate() {
                out[i * d + k] = weighted(st, gik);
            }
        }
    }
}

#[inline]
fn weighted(st: &Stencil, v: &[f64]) -> f64 {
    st.nodes.iter().zip(&st.weights).map(|(&i, &w)| w * v[i]).sum()
}

/// `(I − ∂β)(c + A_in)(I − ∂β)' + Σ_q w_q (y_q − Δβ_q)(y_q − Δβ_q)'` at `x`,
/// where `A_in` is the kernel mass below the quadrature and `Δβ_q` the
/// interpolated corrector difference across the jump.
fn integrand_at(model: &LevyTripletModel, corr: Option<&CorrectorLookup>, x: &[f64], out: &mut [f64]) {
    let d = model.dim();
    let freq = model.freq();
    let mut a = vec![0.0; d * d];
    model.diffusion_at(x, &mut a);
    model.kernel().inner_covariance(x, freq, &mut a);
    let mut rates = Vec::new();
    model.rates_at(x, &mut rates);
    out.iter_mut().for_each(|v| *v = 0.0);
    let mut st = Stencil::default();
    let mut m = vec![0.0; d * d];
    match corr {
        Some(c) => {
            let mut g = vec![0.0; d * d];
            c.grad(x, &mut st, &mut g);
            for (i, mi) in m.chunks_mut(d).enumerate() {
                for (k, v) in mi.iter_mut().enumerate() {
                    *v = f64::from(i == k) - g[i * d + k];
                }
            }
        }
        None => {
            for i in 0..d {
                m[i * d + i] = 1.0;
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let mut s = 0.0;
            for k in 0..d {
                for l in 0..d {
                    s += m[i * d + k] * a[k * d + l] * m[j * d + l];
                }
            }
            out[i * d + j] = s;
        }
    }
    let mut b0 = vec![0.0; d];
    let mut b1 = vec![0.0; d];
    let mut z = vec![0.0; d];
    if let Some(c) = corr {
        c.beta(x, &mut st, &mut b0);
    }
    for (n, &w) in model.kernel().nodes().iter().zip(&rates) {
        if let Some(c) = corr {
            for ((zk, xk), yk) in z.iter_mut().zip(x).zip(&n.y) {
                *zk = xk + yk;
            }
            c.beta(&z, &mut st, &mut b1);
        }
        for k in 0..d {
            z[k] = n.y[k] - (b1[k] - b0[k]);
        }
        for i in 0..d {
            for j in i..d {
                out[i * d + j] += w * z[i] * z[j];
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            out[i * d + j] = out[j * d + i];
        }
    }
}

fn default_lattice(geometry: &TorusGeometry) -> Result<TorusGrid> {
    let n = match geometry.dim() {
        1 => 512,
        2 => 64,
        _ => 16,
    };
    TorusGrid::uniform(geometry.clone(), n)
}

/// Per-point quantities on a lattice, interleaved so that one stencil serves
/// a whole step. Row layout: simulated drift (`d`), simulated diffusion
/// (`d²`), atom rates (`m`), `C̃` integrand (`d²`).
///
/// The simulated drift is `b` minus the compensator of every sampled jump
/// below unit size; the simulated diffusion adds the Gaussian stand-in for
/// aggregated small jumps when that mode is selected.
struct Tables {
    grid: TorusGrid,
    inv_h: Vec<f64>,
    width: usize,
    data: Vec<f64>,
    /// `sup_x tr ∫_{|y|<cutoff} yy' ν(x,dy)` over the lattice
    sup_cov_below: f64,
}

impl Tables {
    fn build(
        model: &LevyTripletModel,
        corr: Option<&CorrectorLookup>,
        cfg: &SimulationConfig,
        atoms: &[Atom],
    ) -> Result<Tables> {
        let grid = match corr {
            Some(c) => TorusGrid::new(
                c.grid.geometry().clone(),
                c.grid.resolution().iter().map(|n| n * cfg.table_refinement).collect(),
            )?,
            None => default_lattice(model.geometry())?,
        };
        let d = model.dim();
        let dd = d * d;
        let m = atoms.len();
        let width = d + dd + m + dd;
        let density = model.kernel().is_density();
        let gaussian = cfg.small_jumps == SmallJumps::Gaussian;
        let cutoff = cfg.small_jump_cutoff;
        let freq = model.freq();
        let rows: Vec<(Vec<f64>, f64)> = (0..grid.len())
            .into_par_iter()
            .map(|idx| {
                let mut x = vec![0.0; d];
                grid.point(idx, &mut x);
                let mut row = vec![0.0; width];
                let mut rates = Vec::new();
                model.rates_at(&x, &mut rates);
                let (b, rest) = row.split_at_mut(d);
                let (c, rest) = rest.split_at_mut(dd);
                let (lam, integ) = rest.split_at_mut(m);
                model.drift_at(&x, b);
                model.diffusion_at(&x, c);
                let mut below = 0.0;
                if density {
                    let mut corr_drift = vec![0.0; d];
                    model.kernel().first_moment_between(cutoff, 1.0, &x, freq, &rates, &mut corr_drift);
                    for (bi, v) in b.iter_mut().zip(&corr_drift) {
                        *bi -= v;
                    }
                    let mut cb = vec![0.0; dd];
                    model.kernel().covariance_below(cutoff, &x, freq, &rates, &mut cb);
                    below = (0..d).map(|i| cb[i * d + i]).sum();
                    if gaussian {
                        for (ci, v) in c.iter_mut().zip(&cb) {
                            *ci += v;
                        }
                    }
                } else {
                    for ((l, w), a) in lam.iter_mut().zip(&rates).zip(atoms) {
                        *l = *w;
                        if a.small {
                            for (bi, y) in b.iter_mut().zip(&a.y) {
                                *bi -= w * y;
                            }
                        }
                    }
                }
                integrand_at(model, corr, &x, integ);
                (row, below)
            })
            .collect();
        let mut data = Vec::with_capacity(rows.len() * width);
        let mut sup_cov_below = 0.0f64;
        for (r, below) in rows {
            data.extend(r);
            sup_cov_below = sup_cov_below.max(below);
        }
        Ok(Tables {
            inv_h: grid.spacing().iter().map(|h| 1.0 / h).collect(),
            grid,
            width,
            data,
            sup_cov_below,
        })
    }

    /// Stencil of an already wrapped point; specialised for `d ≤ 2`.
    #[inline]
    fn locate(&self, xw: &[f64], cell: &mut Cell) {
        let d = xw.len();
        if d > 2 {
            self.grid.locate(xw, &mut cell.fallback);
            cell.len = 0;
            return;
        }
        cell.len = 1 << d;
        cell.idx = [0; 4];
        cell.w = [1.0; 4];
        let mut stride = 1;
        for k in (0..d).rev() {
            let n = self.grid.resolution()[k];
            let s = xw[k] * self.inv_h[k];
            let mut i0 = s as usize;
            let frac = s - i0 as f64;
            if i0 >= n {
                i0 -= n;
            }
            let i1 = if i0 + 1 == n { 0 } else { i0 + 1 };
            let bit = 1 << k;
            for c in 0..cell.len {
                if c & bit == 0 {
                    cell.idx[c] += i0 * stride;
                    cell.w[c] *= 1.0 - frac;
                } else {
                    cell.idx[c] += i1 * stride;
                    cell.w[c] *= frac;
                }
            }
            stride *= n;
        }
    }

    #[inline]
    fn interpolate(&self, cell: &Cell, out: &mut [f64]) {
        let w = self.width;
        let (nodes, weights) = if cell.len > 0 {
            (&cell.idx[..cell.len], &cell.w[..cell.len])
        } else {
            (&cell.fallback.nodes[..], &cell.fallback.weights[..])
        };
        let first = &self.data[nodes[0] * w..(nodes[0] + 1) * w];
        for (o, v) in out.iter_mut().zip(first) {
            *o = weights[0] * v;
        }
        for (&i, &wt) in nodes.iter().zip(weights).skip(1) {
            for (o, v) in out.iter_mut().zip(&self.data[i * w..(i + 1) * w]) {
                *o += wt * v;
            }
        }
    }
}

#[derive(Default)]
struct Cell {
    idx: [usize; 4],
    w: [f64; 4],
    /// 0 when `fallback` holds the stencil
    len: usize,
    fallback: Stencil,
}

struct Atom {
    y: Vec<f64>,
    /// `|y| < 1`, so its mean is compensated in the drift
    small: bool,
}

struct Engine<'a> {
    model: &'a LevyTripletModel,
    corr: Option<CorrectorLookup<'a>>,
    tables: Tables,
    atoms: Vec<Atom>,
    density: bool,
    mean_drift: Vec<f64>,
}

struct PathOut {
    endpoint: Vec<f64>,
    increments: Vec<f64>,
    ctilde: Vec<f64>,
    jumps: u64,
    exceed: Vec<u64>,
    raw_exceed: Vec<u64>,
    occupation: Vec<u64>,
}

/// Brings `x` back to `[0, τ)`, counting whole periods in `winding`.
#[inline]
fn rewrap(x: &mut f64, winding: &mut f64, period: f64) {
    loop {
        if *x >= period {
            *x -= period;
            *winding += 1.0;
        } else if *x < 0.0 {
            *x += period;
            *winding -= 1.0;
        } else {
            break;
        }
    }
}

impl Engine<'_> {
    fn run_path(&self, cfg: &SimulationConfig, cost: &SimulationCost, occ: Option<&TorusGrid>, path: u64) -> Result<PathOut> {
        let model = self.model;
        let d = model.dim();
        let dd = d * d;
        let m = self.atoms.len();
        let freq = model.freq();
        let periods = &model.geometry().periods;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(path);

        let x0 = match &cfg.initial {
            Initial::Point { x } => x.clone(),
            Initial::Uniform => periods.iter().map(|t| t * rng.random::<f64>()).collect(),
        };
        // the state is xw + winding·τ with xw in the fundamental domain
        let mut xw = model.geometry().wrap(&x0);
        let mut winding: Vec<f64> = x0
            .iter()
            .zip(&xw)
            .zip(periods)
            .map(|((a, b), t)| ((a - b) / t).round())
            .collect();
        let eps = cfg.eps;
        let dt = cost.dt_effective;
        let sqdt = dt.sqrt();
        let steps = cost.steps_per_path;
        let per_mesh = steps / cfg.mesh as u64;
        let scaled = |xw: &[f64], winding: &[f64], k: u64, out: &mut Vec<f64>| {
            let s = k as f64 * dt;
            out.clear();
            for i in 0..xw.len() {
                out.push(eps * (xw[i] + winding[i] * periods[i]) - eps * self.mean_drift[i] * s);
            }
        };

        let mut coef = vec![0.0; self.tables.width];
        let mut l = vec![0.0; dd];
        let mut xi = vec![0.0; d];
        let mut dx = vec![0.0; d];
        let mut acc = vec![0.0; dd];
        let mut cell = Cell::default();
        let mut st = Stencil::default();
        // each atom fires when its integrated rate crosses an Exp(1) level,
        // giving Poisson(λ_m(X)dt) counts per step
        let mut clocks: Vec<f64> = (0..m).map(|_| rng.sample(Exp1)).collect();
        let mut jumps_now: Vec<f64> = Vec::new();
        let mut scratch = Vec::new();
        let mut b0 = vec![0.0; d];
        let mut b1 = vec![0.0; d];
        let mut z = vec![0.0; d];
        let mut exceed = vec![0u64; cfg.deltas.len()];
        let mut raw_exceed = vec![0u64; cfg.deltas.len()];
        let mut jumps = 0u64;
        let mut occupation = vec![0u64; occ.map_or(0, |g| g.len())];

        let mut y_prev = Vec::with_capacity(d);
        scaled(&xw, &winding, 0, &mut y_prev);
        let y0 = y_prev.clone();
        let mut y_now = Vec::with_capacity(d);
        let mut increments = Vec::with_capacity(cfg.mesh * d);
        let mut until_mesh = per_mesh;

        for k in 1..=steps {
            if let Some(g) = occ {
                occupation[nearest_node(g, &xw)] += 1;
            }
            self.tables.locate(&xw, &mut cell);
            self.tables.interpolate(&cell, &mut coef);
            let (b, rest) = coef.split_at(d);
            let (c, rest) = rest.split_at(dd);
            let (rates, integ) = rest.split_at(m);
            for (a, v) in acc.iter_mut().zip(integ) {
                *a += v;
            }
            cholesky_lower(c, d, &mut l).map_err(|pivot| Error::CholeskyFailure {
                point: xw.clone(),
                pivot,
            })?;
            for v in xi.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            for i in 0..d {
                let mut s = 0.0;
                for j in 0..=i {
                    s += l[i * d + j] * xi[j];
                }
                dx[i] = b[i] * dt + s * sqdt;
            }

            jumps_now.clear();
            for ((r, a), clock) in rates.iter().zip(&self.atoms).zip(clocks.iter_mut()) {
                *clock -= r * dt;
                while *clock <= 0.0 {
                    jumps_now.extend_from_slice(&a.y);
                    *clock += rng.sample::<f64, _>(Exp1);
                }
            }
            if self.density {
                model.kernel().sample_step(cfg.small_jump_cutoff, &xw, freq, &[], dt, &mut rng, &mut scratch, |y| {
                    jumps_now.extend_from_slice(y)
                });
            }
            if !jumps_now.is_empty() {
                if let Some(cl) = &self.corr {
                    cl.beta(&xw, &mut st, &mut b0);
                }
                for y in jumps_now.chunks(d) {
                    jumps += 1;
                    if let Some(cl) = &self.corr {
                        for ((zk, xk), yk) in z.iter_mut().zip(&xw).zip(y) {
                            *zk = xk + yk;
                        }
                        cl.beta(&z, &mut st, &mut b1);
                    }
                    let mut corrected = 0.0;
                    let mut raw = 0.0;
                    for i in 0..d {
                        let v = y[i] - (b1[i] - b0[i]);
                        corrected += v * v;
                        raw += y[i] * y[i];
                        dx[i] += y[i];
                    }
                    let (corrected, raw) = (eps * corrected.sqrt(), eps * raw.sqrt());
                    for (n, &dl) in cfg.deltas.iter().enumerate() {
                        exceed[n] += u64::from(corrected > dl);
                        raw_exceed[n] += u64::from(raw > dl);
                    }
                }
            }
            for i in 0..d {
                xw[i] += dx[i];
                rewrap(&mut xw[i], &mut winding[i], periods[i]);
            }

            until_mesh -= 1;
            if until_mesh == 0 {
                until_mesh = per_mesh;
                scaled(&xw, &winding, k, &mut y_now);
                increments.extend(y_now.iter().zip(&y_prev).map(|(a, b)| a - b));
                std::mem::swap(&mut y_now, &mut y_prev);
            }
        }
        let endpoint = y_prev.iter().zip(&y0).map(|(a, b)| a - b).collect();
        let scale = eps * eps * dt;
        Ok(PathOut {
            endpoint,
            increments,
            ctilde: acc.iter().map(|v| v * scale).collect(),
            jumps,
            exceed,
            raw_exceed,
            occupation,
        })
    }
}

fn nearest_node(g: &TorusGrid, x: &[f64]) -> usize {
    let mut idx = 0;
    let mut stride = 1;
    // last coordinate varies fastest, matching `TorusGrid::index`
    for k in (0..g.dim()).rev() {
        let n = g.resolution()[k];
        let i = ((x[k] / g.spacing()[k]).round() as usize) % n;
        idx += i * stride;
        stride *= n;
    }
    idx
}

/// Lower Cholesky factor of the symmetric matrix `c`. Pivots down to
/// `−1e-12·max(1, trace)` are treated as zero; anything more negative is
/// returned as the error value.
fn cholesky_lower(c: &[f64], d: usize, l: &mut [f64]) -> std::result::Result<(), f64> {
    if d == 1 {
        let v = c[0];
        if v < 0.0 {
            if v < -1e-12 {
                return Err(v);
            }
            l[0] = 0.0;
        } else {
            l[0] = v.sqrt();
        }
        return Ok(());
    }
    let trace: f64 = (0..d).map(|i| c[i * d + i].abs()).sum();
    let tol = 1e-12 * trace.max(1.0);
    l.iter_mut().for_each(|v| *v = 0.0);
    for j in 0..d {
        let mut s = c[j * d + j];
        for k in 0..j {
            s -= l[j * d + k] * l[j * d + k];
        }
        if s < -tol {
            return Err(s);
        }
        let ljj = s.max(0.0).sqrt();
        l[j * d + j] = ljj;
        for i in j + 1..d {
            let mut s = c[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            l[i * d + j] = if ljj > 0.0 { s / ljj } else { 0.0 };
        }
    }
    Ok(())
}

/// True when `b*` varies over the lattice, so the corrector is nontrivial.
fn needs_corrector(model: &LevyTripletModel, grid: &TorusGrid) -> bool {
    let d = model.dim();
    let mut x = vec![0.0; d];
    let mut first: Option<Vec<f64>> = None;
    for idx in 0..grid.len() {
        grid.point(idx, &mut x);
        let v = model.effective_drift_coefficient(&x);
        match &first {
            None => first = Some(v),
            Some(f) if *f != v => return true,
            _ => {}
        }
    }
    false
}

/// Simulates `cfg.n_paths` independent paths. `corrector` (with the grid it
/// lives on) is required whenever `b*` is not constant.
pub fn simulate_paths(
    model: &LevyTripletModel,
    law: &EffectiveLaw,
    corrector: Option<(&CorrectorField, &TorusGrid)>,
    cfg: &SimulationConfig,
) -> Result<PathEnsemble> {
    let d = model.dim();
    cfg.check(d)?;
    if law.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: law.dim(),
        });
    }
    let corr = match corrector {
        Some((field, grid)) => {
            if field.dim() != d || grid.dim() != d || field.beta.iter().any(|b| b.len() != grid.len()) {
                return Err(Error::GridMismatch("corrector does not live on the given grid".into()));
            }
            Some(CorrectorLookup { grid, field })
        }
        None => {
            if needs_corrector(model, &default_lattice(model.geometry())?) {
                return Err(Error::MissingCorrector);
            }
            None
        }
    };
    let cost = cfg.plan();
    let dt = cost.dt_effective;
    let mut atoms = Vec::new();
    if let KernelSpec::FiniteActivity { atoms: list } = &model.spec().jumps {
        for (m, a) in list.iter().enumerate() {
            let p = 1.0 - (-a.rate.sup_bound() * dt).exp();
            if p > MAX_ATOM_STEP_PROBABILITY {
                return Err(Error::StepTooLarge {
                    probability: p,
                    what: format!("atom {m}"),
                });
            }
            let norm = a.displacement.iter().map(|v| v * v).sum::<f64>().sqrt();
            atoms.push(Atom {
                y: a.displacement.clone(),
                small: norm < 1.0,
            });
        }
    }
    let tables = Tables::build(model, corr.as_ref(), cfg, &atoms)?;
    let density = model.kernel().is_density();
    let rate = model.kernel().dominating_rate(if density { cfg.small_jump_cutoff } else { 0.0 });
    let small = SmallJumpReport {
        mode: cfg.small_jumps,
        cutoff: cfg.small_jump_cutoff,
        sup_second_moment_below: tables.sup_cov_below,
        max_jumps_per_step: rate * dt,
    };
    let engine = Engine {
        model,
        corr,
        tables,
        atoms,
        density,
        mean_drift: law.mean_drift.clone(),
    };
    let occ_grid = match cfg.occupation {
        Some(n) => Some(TorusGrid::uniform(model.geometry().clone(), n)?),
        None => None,
    };

    let outs: Vec<PathOut> = (0..cfg.n_paths as u64)
        .into_par_iter()
        .map(|p| engine.run_path(cfg, &cost, occ_grid.as_ref(), p))
        .collect::<Result<_>>()?;

    let occupation = occ_grid.as_ref().map(|g| {
        let mut total = vec![0u64; g.len()];
        for o in &outs {
            for (t, v) in total.iter_mut().zip(&o.occupation) {
                *t += v;
            }
        }
        let n: u64 = total.iter().sum();
        total.iter().map(|&v| v as f64 / n as f64).collect()
    });
    let mut ens = PathEnsemble {
        config: cfg.clone(),
        model: model.name().to_string(),
        dim: d,
        cost,
        mean_drift: law.mean_drift.clone(),
        endpoints: Vec::with_capacity(outs.len()),
        increments: Vec::with_capacity(outs.len()),
        drift_characteristic: vec![vec![0.0; d]; outs.len()],
        ctilde: Vec::with_capacity(outs.len()),
        jump_counts: Vec::with_capacity(outs.len()),
        exceedances: Vec::with_capacity(outs.len()),
        raw_exceedances: Vec::with_capacity(outs.len()),
        small_jumps: small,
        occupation,
    };
    for o in outs {
        ens.endpoints.push(o.endpoint);
        ens.increments.push(o.increments);
        ens.ctilde.push(o.ctilde);
        ens.jump_counts.push(o.jumps);
        ens.exceedances.push(o.exceed);
        ens.raw_exceedances.push(o.raw_exceed);
    }
    Ok(ens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::effective::homogenize;
    use crate::model::builtin;

    fn law_for(m: &LevyTripletModel, sigma: f64) -> EffectiveLaw {
        EffectiveLaw::given(m.name(), vec![0.0; m.dim()], vec![vec![sigma]])
    }

    #[test]
    fn plan_hits_the_unscaled_horizon() {
        let cfg = SimulationConfig::new(0.03, 1.0, 0.1, 1, 0);
        let p = cfg.plan();
        assert_eq!(p.steps_per_path, 3334);
        assert!((p.dt_effective * p.steps_per_path as f64 - 100.0).abs() < 1e-10);
    }

    #[test]
    fn identical_seeds_reproduce_bitwise() {
        let m = LevyTripletModel::new(builtin::asymmetric_atom()).unwrap();
        let grid = TorusGrid::uniform(m.geometry().clone(), 64).unwrap();
        let h = homogenize(&m, &grid).unwrap();
        let mut cfg = SimulationConfig::new(0.05, 0.2, 0.2, 6, 11);
        cfg.mesh = 2;
        let a = simulate_paths(&m, &h.law, Some((&h.corrector, &grid)), &cfg).unwrap();
        let b = simulate_paths(&m, &h.law, Some((&h.corrector, &grid)), &cfg).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_ne!(a.endpoints[0], a.endpoints[1]);
        for (e, inc) in a.endpoints.iter().zip(&a.increments) {
            assert!((e[0] - inc[0] - inc[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn variable_drift_requires_corrector() {
        let m = LevyTripletModel::new(builtin::asymmetric_atom()).unwrap();
        let cfg = SimulationConfig::new(0.05, 0.1, 0.5, 1, 0);
        let law = law_for(&m, 1.0);
        assert!(matches!(simulate_paths(&m, &law, None, &cfg), Err(Error::MissingCorrector)));
    }

    #[test]
    fn coarse_steps_are_refused_for_atoms() {
        let m = LevyTripletModel::new(builtin::constant_levy()).unwrap();
        let cfg = SimulationConfig::new(0.2, 1.0, 1.0, 1, 0);
        let law = law_for(&m, 1.5);
        assert!(matches!(simulate_paths(&m, &law, None, &cfg), Err(Error::StepTooLarge { .. })));
    }

    #[test]
    fn constant_integrand_accumulates_exactly() {
        let m = LevyTripletModel::new(builtin::constant_levy()).unwrap();
        let cfg = SimulationConfig::new(0.01, 1.0, 0.5, 3, 1);
        let law = law_for(&m, 1.5);
        let e = simulate_paths(&m, &law, None, &cfg).unwrap();
        for c in &e.ctilde {
            assert!((c[0] - 1.5).abs() < 1e-12, "{}", c[0]);
        }
    }

    #[test]
    fn cholesky_factor_reproduces_matrix() {
        let c = [4.0, 2.0, 2.0, 3.0];
        let mut l = [0.0; 4];
        cholesky_lower(&c, 2, &mut l).unwrap();
        assert_eq!(l[0], 2.0);
        assert_eq!(l[2], 1.0);
        assert!((l[3] - 2f64.sqrt()).abs() < 1e-15);
        assert!(cholesky_lower(&[1.0, 2.0, 2.0, 1.0], 2, &mut l).is_err());
    }
}
