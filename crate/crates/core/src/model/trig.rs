use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};
use std::sync::OnceLock;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Wave {
    Sin,
    Cos,
}

/// One term `amp · sin|cos(Σ_k wave_k · 2π x_k / τ_k)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrigTerm {
    pub amp: f64,
    pub wave: Vec<i32>,
    pub kind: Wave,
}

const TURN_TABLE: usize = 256;

fn turn_table() -> &'static [(f64, f64)] {
    static T: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    T.get_or_init(|| {
        (0..TURN_TABLE)
            .map(|j| {
                let (s, c) = (TAU * j as f64 / TURN_TABLE as f64).sin_cos();
                (s, c)
            })
            .collect()
    })
}

/// `(sin 2πu, cos 2πu)` from a 256-entry table and the angle-addition
/// formula; the remainder angle is below π/256, where short Taylor series are
/// exact to round-off.
#[inline]
pub fn sin_cos_turns(u: f64) -> (f64, f64) {
    let scaled = u * TURN_TABLE as f64;
    let j = scaled.round();
    let b = (scaled - j) * (TAU / TURN_TABLE as f64);
    let b2 = b * b;
    let sb = b * (1.0 - b2 / 6.0 * (1.0 - b2 / 20.0));
    let cb = 1.0 - b2 / 2.0 * (1.0 - b2 / 12.0 * (1.0 - b2 / 30.0));
    let (sa, ca) = turn_table()[(j as i64 & (TURN_TABLE as i64 - 1)) as usize];
    (sa * cb + ca * sb, ca * cb - sa * sb)
}

/// Tables of `cos mθ_k`, `sin mθ_k` for `θ_k = 2π x_k/τ_k`, filled once per
/// point so that every polynomial in a model can be evaluated with one
/// table-assisted `sin_cos` per coordinate.
#[derive(Clone, Debug)]
pub struct Harmonics {
    order: Vec<usize>,
    table: Vec<Vec<(f64, f64)>>,
}

impl Harmonics {
    /// Tables large enough for every term of `polys`.
    pub fn for_polys<'a>(dim: usize, polys: impl IntoIterator<Item = &'a TrigPoly>) -> Self {
        let mut order = vec![0usize; dim];
        for p in polys {
            for t in &p.terms {
                for (o, k) in order.iter_mut().zip(&t.wave) {
                    *o = (*o).max(k.unsigned_abs() as usize);
                }
            }
        }
        let table = order.iter().map(|&m| vec![(1.0, 0.0); m + 1]).collect();
        Harmonics { order, table }
    }

    #[inline]
    pub fn fill(&mut self, x: &[f64], freq: &[f64]) {
        for ((tab, &m), (&xk, &w)) in self.table.iter_mut().zip(&self.order).zip(x.iter().zip(freq)) {
            if m == 0 {
                continue;
            }
            let (s, c) = sin_cos_turns(xk * w * (0.5 / PI));
            tab[1] = (c, s);
            for j in 2..=m {
                let (pc, ps) = tab[j - 1];
                tab[j] = (pc * c - ps * s, pc * s + ps * c);
            }
        }
    }
}

/// A real trigonometric polynomial on the torus. Integer wave vectors make
/// every instance τ-periodic by construction.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrigPoly {
    #[serde(default)]
    pub constant: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub terms: Vec<TrigTerm>,
}

impl TrigPoly {
    pub fn constant(c: f64) -> Self {
        TrigPoly {
            constant: c,
            terms: Vec::new(),
        }
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    pub fn with(mut self, amp: f64, kind: Wave, wave: &[i32]) -> Self {
        self.terms.push(TrigTerm {
            amp,
            wave: wave.to_vec(),
            kind,
        });
        self
    }

    pub fn sin(self, amp: f64, wave: &[i32]) -> Self {
        self.with(amp, Wave::Sin, wave)
    }

    pub fn cos(self, amp: f64, wave: &[i32]) -> Self {
        self.with(amp, Wave::Cos, wave)
    }

    /// Evaluates at `x` given angular frequencies `2π/τ_k`.
    #[inline]
    pub fn eval(&self, x: &[f64], freq: &[f64]) -> f64 {
        let mut v = self.constant;
        for t in &self.terms {
            let mut phase = 0.0;
            for ((&k, &xi), &w) in t.wave.iter().zip(x).zip(freq) {
                if k != 0 {
                    phase += k as f64 * w * xi;
                }
            }
            v += t.amp
                * match t.kind {
                    Wave::Sin => phase.sin(),
                    Wave::Cos => phase.cos(),
                };
        }
        v
    }

    /// Evaluates from precomputed harmonics; agrees with [`TrigPoly::eval`]
    /// up to round-off.
    #[inline]
    pub fn eval_harmonics(&self, h: &Harmonics) -> f64 {
        let mut v = self.constant;
        for t in &self.terms {
            let (mut re, mut im) = (1.0, 0.0);
            for (tab, &k) in h.table.iter().zip(&t.wave) {
                if k == 0 {
                    continue;
                }
                let (c, s) = tab[k.unsigned_abs() as usize];
                let s = if k < 0 { -s } else { s };
                (re, im) = (re * c - im * s, re * s + im * c);
            }
            v += t.amp
                * match t.kind {
                    Wave::Sin => im,
                    Wave::Cos => re,
                };
        }
        v
    }

    /// Gradient with respect to `x`.
    pub fn grad(&self, x: &[f64], freq: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for t in &self.terms {
            let phase: f64 = t
                .wave
                .iter()
                .zip(x)
                .zip(freq)
                .map(|((&k, &xi), &w)| k as f64 * w * xi)
                .sum();
            let d = match t.kind {
                Wave::Sin => phase.cos(),
                Wave::Cos => -phase.sin(),
            };
            for ((o, &k), &w) in out.iter_mut().zip(&t.wave).zip(freq) {
                *o += t.amp * d * k as f64 * w;
            }
        }
    }

    /// Hessian with respect to `x`, row-major `d×d`.
    pub fn hessian(&self, x: &[f64], freq: &[f64], out: &mut [f64]) {
        let d = x.len();
        out.iter_mut().for_each(|o| *o = 0.0);
        for t in &self.terms {
            let phase: f64 = t
                .wave
                .iter()
                .zip(x)
                .zip(freq)
                .map(|((&k, &xi), &w)| k as f64 * w * xi)
                .sum();
            // second derivative of sin is −sin, of cos is −cos
            let v = -t.amp
                * match t.kind {
                    Wave::Sin => phase.sin(),
                    Wave::Cos => phase.cos(),
                };
            for a in 0..d {
                for b in 0..d {
                    out[a * d + b] += v * t.wave[a] as f64 * freq[a] * t.wave[b] as f64 * freq[b];
                }
            }
        }
    }

    /// Upper bound on `sup |p|`.
    pub fn sup_bound(&self) -> f64 {
        self.constant.abs() + self.terms.iter().map(|t| t.amp.abs()).sum::<f64>()
    }

    /// Lower bound on `inf p`.
    pub fn inf_bound(&self) -> f64 {
        self.constant - self.terms.iter().map(|t| t.amp.abs()).sum::<f64>()
    }

    pub fn is_zero(&self) -> bool {
        self.constant == 0.0 && self.terms.iter().all(|t| t.amp == 0.0)
    }

    pub fn is_constant(&self) -> bool {
        self.terms
            .iter()
            .all(|t| t.amp == 0.0 || t.wave.iter().all(|&k| k == 0))
    }

    pub(crate) fn check_dim(&self, dim: usize) -> Result<(), String> {
        for t in &self.terms {
            if t.wave.len() != dim {
                return Err(format!(
                    "wave vector {:?} has length {}, expected {dim}",
                    t.wave,
                    t.wave.len()
                ));
            }
            if !t.amp.is_finite() {
                return Err("non-finite amplitude".into());
            }
        }
        if !self.constant.is_finite() {
            return Err("non-finite constant".into());
        }
        Ok(())
    }
}
