//! Oracles shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::TAU;

use perihom::{assemble, LevyTripletModel, ModelSpec, TorusGrid};

/// Trapezoid rule on [0, 1); exponentially accurate for smooth periodic f.
pub fn periodic_trapezoid(f: impl Fn(f64) -> f64, n: usize) -> f64 {
    (0..n).map(|i| f(i as f64 / n as f64)).sum::<f64>() / n as f64
}

/// Composite Simpson on [0, 1] with `n` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, n: usize) -> f64 {
    let h = 1.0 / n as f64;
    let mut s = f(0.0) + f(1.0);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
    }
    s * h / 3.0
}

/// Modified Bessel function I₀ by its power series.
pub fn bessel_i0(x: f64) -> f64 {
    let (mut term, mut sum) = (1.0, 1.0);
    for k in 1..60 {
        term *= (x / 2.0) * (x / 2.0) / (k * k) as f64;
        sum += term;
    }
    sum
}

/// `Lf` for `f = sin 2πx` computed from the coefficients by hand.
pub fn exact_sine_generator(name: &str, x: f64) -> f64 {
    let (f, df, d2f) = ((TAU * x).sin(), TAU * (TAU * x).cos(), -TAU * TAU * (TAU * x).sin());
    let s = (TAU * x).sin();
    let c = (TAU * x).cos();
    match name {
        "harmonic-mean" => 0.5 * (2.0 + s) * d2f,
        "sine-drift" => s * df + 0.5 * d2f,
        "asymmetric-atom" => {
            let y = 0.4;
            (0.3 + 0.2 * s) * df + 0.5 * (1.0 + 0.5 * c) * d2f
                + (1.0 + 0.5 * s) * ((TAU * (x + y)).sin() - f - y * df)
        }
        _ => unreachable!(),
    }
}

pub fn least_squares_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Observed order of `max_j |(Gf)_j − (Lf)(x_j)|` over n ∈ {32, …, 256}.
pub fn sine_consistency_order(spec: ModelSpec) -> (f64, Vec<f64>) {
    let m = LevyTripletModel::new(spec).unwrap();
    let mut errs = Vec::new();
    let mut pts = Vec::new();
    for n in [32, 64, 128, 256] {
        let gr = TorusGrid::uniform(m.geometry().clone(), n).unwrap();
        let g = assemble(&m, &gr).unwrap();
        let f: Vec<f64> = gr.points().iter().map(|p| (TAU * p[0]).sin()).collect();
        let gf = g.apply(&f).unwrap();
        let e = gr
            .points()
            .iter()
            .zip(&gf)
            .map(|(p, v)| (v - exact_sine_generator(m.name(), p[0])).abs())
            .fold(0.0, f64::max);
        errs.push(e);
        pts.push(((1.0 / n as f64).ln(), e.ln()));
    }
    (least_squares_slope(&pts), errs)
}
