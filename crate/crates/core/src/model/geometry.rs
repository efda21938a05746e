use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The torus `R^d / (τ_1 Z × … × τ_d Z)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TorusGeometry {
    pub periods: Vec<f64>,
}

impl TorusGeometry {
    pub fn new(periods: Vec<f64>) -> Result<Self> {
        let g = TorusGeometry { periods };
        g.check()?;
        Ok(g)
    }

    pub fn unit(dim: usize) -> Self {
        TorusGeometry {
            periods: vec![1.0; dim],
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.periods.is_empty() {
            return Err(Error::InvalidModel("torus dimension must be at least 1".into()));
        }
        if let Some(t) = self.periods.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
            return Err(Error::InvalidModel(format!("period {t} is not strictly positive")));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.periods.len()
    }

    /// Angular frequencies `2π/τ_k`.
    pub fn frequencies(&self) -> Vec<f64> {
        self.periods
            .iter()
            .map(|t| std::f64::consts::TAU / t)
            .collect()
    }

    /// Reduces one coordinate onto `[0, τ)`.
    #[inline]
    pub fn wrap_coord(x: f64, period: f64) -> f64 {
        let r = (-period).mul_add((x / period).floor(), x);
        if r >= period || r < 0.0 {
            // x sat within one ulp below a lattice point
            0.0
        } else {
            r
        }
    }

    pub fn wrap_into(&self, x: &[f64], out: &mut [f64]) {
        for ((o, &xi), &t) in out.iter_mut().zip(x).zip(&self.periods) {
            *o = Self::wrap_coord(xi, t);
        }
    }

    pub fn wrap(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.wrap_into(x, &mut out);
        out
    }

    pub fn volume(&self) -> f64 {
        self.periods.iter().product()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_bad_periods() {
        assert!(TorusGeometry::new(vec![]).is_err());
        assert!(TorusGeometry::new(vec![1.0, 0.0]).is_err());
        assert!(TorusGeometry::new(vec![-2.0]).is_err());
        assert!(TorusGeometry::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn wrap_lands_in_fundamental_domain() {
        let g = TorusGeometry::new(vec![1.0, 0.3]).unwrap();
        let w = g.wrap(&[-1e-300, 0.9]);
        assert!(w[0] >= 0.0 && w[0] < 1.0);
        assert!(w[1] >= 0.0 && w[1] < 0.3);
        assert_eq!(g.wrap(&[3.25, 0.0]), vec![0.25, 0.0]);
    }

    proptest! {
        // dyadic points and unit periods make x + k exactly representable,
        // so the shifted and unshifted wraps must agree bit-for-bit
        #[test]
        fn wrap_is_exactly_periodic(num in -4096i64..4096, k in -50i64..50) {
            let x = num as f64 / 512.0;
            let a = TorusGeometry::wrap_coord(x, 1.0);
            let b = TorusGeometry::wrap_coord(x + k as f64, 1.0);
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }

        #[test]
        fn wrap_is_periodic_up_to_roundoff(x in -10.0f64..10.0, k in -20i64..20, tau in 0.1f64..3.0) {
            let a = TorusGeometry::wrap_coord(x, tau);
            let b = TorusGeometry::wrap_coord(x + k as f64 * tau, tau);
            let d = (a - b).abs();
            prop_assert!(d < 1e-12 || (tau - d).abs() < 1e-12);
        }
    }
}
