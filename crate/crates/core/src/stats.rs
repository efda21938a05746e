//! Small statistical toolkit for the verification harness.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

/// A Monte Carlo mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    pub fn of(xs: impl IntoIterator<Item = f64>) -> Estimate {
        let xs: Vec<f64> = xs.into_iter().collect();
        let n = xs.len() as f64;
        if xs.is_empty() {
            return Estimate { mean: f64::NAN, se: f64::NAN };
        }
        let mean = xs.iter().sum::<f64>() / n;
        let se = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
        } else {
            f64::INFINITY
        };
        Estimate { mean, se }
    }
}

/// Sample covariance of row vectors, each entry with the standard error of
/// the corresponding product mean.
pub fn covariance(rows: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let d = rows.first().map_or(0, Vec::len);
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..d).map(|i| rows.iter().map(|r| r[i]).sum::<f64>() / n).collect();
    let mut cov = vec![vec![0.0; d]; d];
    let mut se = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in i..d {
            let e = Estimate::of(rows.iter().map(|r| (r[i] - mean[i]) * (r[j] - mean[j])));
            // unbiased normalization
            let c = e.mean * n / (n - 1.0);
            cov[i][j] = c;
            cov[j][i] = c;
            se[i][j] = e.se;
            se[j][i] = e.se;
        }
    }
    (cov, se)
}

/// Kolmogorov–Smirnov statistic of `xs` against the standard normal.
pub fn ks_standard_normal(xs: &[f64]) -> f64 {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal.cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic Kolmogorov p-value with Stephens' small-sample correction.
pub fn kolmogorov_pvalue(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lam = (sn + 0.12 + 0.11 / sn) * d;
    if lam < 1e-3 {
        return 1.0;
    }
    let mut p = 0.0;
    for k in 1..=200 {
        let term = (-2.0 * (k * k) as f64 * lam * lam).exp();
        p += if k % 2 == 1 { 2.0 * term } else { -2.0 * term };
        if term < 1e-17 {
            break;
        }
    }
    p.clamp(0.0, 1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Goodness of fit of integer counts against Poisson(`mean`), pooling tail
/// cells until every cell expects at least 5 observations.
pub fn chi_square_poisson(counts: &[u64], mean: f64) -> ChiSquareTest {
    let n = counts.len() as f64;
    let kmax = counts.iter().copied().max().unwrap_or(0) as usize;
    let mut observed = vec![0.0; kmax + 2];
    for &c in counts {
        observed[c as usize] += 1.0;
    }
    let mut probs = Vec::with_capacity(kmax + 2);
    let mut p = (-mean).exp();
    for k in 0..=kmax {
        probs.push(p);
        p *= mean / (k + 1) as f64;
    }
    let tail = 1.0 - probs.iter().sum::<f64>();
    probs.push(tail.max(0.0));
    // pool left to right, then fold a small final cell into its neighbour
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let (mut o, mut e) = (0.0, 0.0);
    for (ok, pk) in observed.iter().zip(&probs) {
        o += ok;
        e += pk * n;
        if e >= 5.0 {
            cells.push((o, e));
            o = 0.0;
            e = 0.0;
        }
    }
    if e > 0.0 || o > 0.0 {
        match cells.last_mut() {
            Some(last) => {
                last.0 += o;
                last.1 += e;
            }
            None => cells.push((o, e)),
        }
    }
    let statistic: f64 = cells.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    let dof = cells.len().saturating_sub(1);
    let p_value = if dof == 0 {
        1.0
    } else {
        1.0 - ChiSquared::new(dof as f64).expect("positive dof").cdf(statistic)
    };
    ChiSquareTest { statistic, dof, p_value }
}

/// Wald test of `Cov(z) = I` for whitened rows `z`, based on the empirical
/// covariance of the products `z_i z_j` (`i ≤ j`).
pub fn covariance_wald(rows: &[Vec<f64>]) -> ChiSquareTest {
    let d = rows.first().map_or(0, Vec::len);
    let pairs: Vec<(usize, usize)> = (0..d).flat_map(|i| (i..d).map(move |j| (i, j))).collect();
    let m = pairs.len();
    let n = rows.len();
    if m == 0 || n < 2 {
        return ChiSquareTest {
            statistic: 0.0,
            dof: 0,
            p_value: 1.0,
        };
    }
    let prods: Vec<DVector<f64>> = rows
        .iter()
        .map(|z| DVector::from_iterator(m, pairs.iter().map(|&(i, j)| z[i] * z[j] - f64::from(i == j))))
        .collect();
    let mean = prods.iter().fold(DVector::zeros(m), |a, p| a + p) / n as f64;
    let mut v = DMatrix::zeros(m, m);
    for p in &prods {
        let c = p - &mean;
        v += &c * c.transpose();
    }
    v /= (n - 1) as f64 * n as f64;
    let statistic = match v.clone().try_inverse() {
        Some(inv) => (mean.transpose() * inv * &mean)[(0, 0)],
        None => f64::INFINITY,
    };
    ChiSquareTest {
        statistic,
        dof: m,
        p_value: 1.0 - ChiSquared::new(m as f64).expect("positive dof").cdf(statistic),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kolmogorov_tail_values() {
        // P(K > 1.358) ≈ 0.05 and P(K > 1.628) ≈ 0.01 for the limiting law
        let big = 1_000_000;
        let s = (big as f64).sqrt();
        assert!((kolmogorov_pvalue(1.3581 / s, big) - 0.05).abs() < 1e-3);
        assert!((kolmogorov_pvalue(1.6276 / s, big) - 0.01).abs() < 1e-3);
        assert_eq!(kolmogorov_pvalue(0.0, 10), 1.0);
    }

    #[test]
    fn ks_of_exact_quantiles_is_small() {
        let normal = Normal::new(0.0, 1.0).unwrap();
        let n = 1000;
        let xs: Vec<f64> = (0..n).map(|i| normal.inverse_cdf((i as f64 + 0.5) / n as f64)).collect();
        let d = ks_standard_normal(&xs);
        assert!((d - 0.5 / n as f64).abs() < 1e-9);
    }

    #[test]
    fn estimate_matches_hand_computation() {
        let e = Estimate::of([1.0, 2.0, 3.0, 4.0]);
        assert_eq!(e.mean, 2.5);
        assert!((e.se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn exact_poisson_frequencies_fit() {
        // counts laid out in exact expected proportions
        let mean = 2.0;
        let mut counts = Vec::new();
        let mut p = (-mean as f64).exp();
        for k in 0..12u64 {
            let m = (p * 100_000.0).round() as usize;
            counts.extend(std::iter::repeat(k).take(m));
            p *= mean / (k + 1) as f64;
        }
        let t = chi_square_poisson(&counts, mean);
        assert!(t.p_value > 0.99, "{t:?}");
        let t = chi_square_poisson(&counts, 2.2);
        assert!(t.p_value < 1e-6);
    }
}
