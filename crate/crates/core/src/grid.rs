//! Uniform lattice on the torus with row-major node numbering.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TorusGeometry;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TorusGrid {
    geometry: TorusGeometry,
    resolution: Vec<usize>,
    spacing: Vec<f64>,
    strides: Vec<usize>,
    len: usize,
}

/// Corner indices and multilinear weights of the cell containing a point.
#[derive(Clone, Debug, Default)]
pub struct Stencil {
    pub nodes: Vec<usize>,
    pub weights: Vec<f64>,
}

impl TorusGrid {
    pub fn new(geometry: TorusGeometry, resolution: Vec<usize>) -> Result<Self> {
        geometry.check()?;
        if resolution.len() != geometry.dim() {
            return Err(Error::DimensionMismatch {
                expected: geometry.dim(),
                got: resolution.len(),
            });
        }
        if resolution.iter().any(|&n| n < 2) {
            return Err(Error::GridMismatch(format!(
                "resolution {resolution:?} must be at least 2 per dimension"
            )));
        }
        let spacing = geometry
            .periods
            .iter()
            .zip(&resolution)
            .map(|(t, &n)| t / n as f64)
            .collect();
        let mut strides = vec![1; resolution.len()];
        for k in (0..resolution.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * resolution[k + 1];
        }
        let len = resolution.iter().product();
        Ok(TorusGrid {
            geometry,
            resolution,
            spacing,
            strides,
            len,
        })
    }

    /// Same resolution `n` in every dimension.
    pub fn uniform(geometry: TorusGeometry, n: usize) -> Result<Self> {
        let d = geometry.dim();
        Self::new(geometry, vec![n; d])
    }

    pub fn geometry(&self) -> &TorusGeometry {
        &self.geometry
    }

    pub fn dim(&self) -> usize {
        self.resolution.len()
    }

    pub fn resolution(&self) -> &[usize] {
        &self.resolution
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn max_spacing(&self) -> f64 {
        self.spacing.iter().copied().fold(0.0, f64::max)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn index(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn multi_index(&self, mut idx: usize, out: &mut [usize]) {
        for (o, s) in out.iter_mut().zip(&self.strides) {
            *o = idx / s;
            idx %= s;
        }
    }

    pub fn point(&self, idx: usize, out: &mut [f64]) {
        let mut rem = idx;
        for ((o, s), h) in out.iter_mut().zip(&self.strides).zip(&self.spacing) {
            *o = (rem / s) as f64 * h;
            rem %= s;
        }
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        let mut p = vec![0.0; self.dim()];
        (0..self.len)
            .map(|i| {
                self.point(i, &mut p);
                p.clone()
            })
            .collect()
    }

    /// Periodic neighbour `idx ± steps·e_k`.
    pub fn shift(&self, idx: usize, k: usize, steps: isize) -> usize {
        let n = self.resolution[k] as isize;
        let s = self.strides[k];
        let i = ((idx / s) % self.resolution[k]) as isize;
        let j = (i + steps).rem_euclid(n) as usize;
        idx - i as usize * s + j * s
    }

    /// Multilinear interpolation stencil at an arbitrary point (wrapped
    /// internally). Corner `c` takes the upper neighbour in dimension `k`
    /// when bit `k` of `c` is set.
    pub fn locate(&self, x: &[f64], st: &mut Stencil) {
        let d = self.dim();
        let m = 1usize << d;
        st.nodes.clear();
        st.nodes.resize(m, 0);
        st.weights.clear();
        st.weights.resize(m, 1.0);
        for k in 0..d {
            let xw = TorusGeometry::wrap_coord(x[k], self.geometry.periods[k]);
            let s = xw / self.spacing[k];
            let fl = s.floor();
            let frac = s - fl;
            let n = self.resolution[k];
            let mut i0 = fl as usize;
            if i0 >= n {
                i0 -= n;
            }
            let i1 = if i0 + 1 == n { 0 } else { i0 + 1 };
            let (lo, hi) = (i0 * self.strides[k], i1 * self.strides[k]);
            let bit = 1usize << k;
            for (c, (node, w)) in st.nodes.iter_mut().zip(st.weights.iter_mut()).enumerate() {
                if c & bit == 0 {
                    *node += lo;
                    *w *= 1.0 - frac;
                } else {
                    *node += hi;
                    *w *= frac;
                }
            }
        }
    }

    /// Multilinear interpolant of a grid function at `x`.
    pub fn interpolate(&self, values: &[f64], x: &[f64], st: &mut Stencil) -> f64 {
        self.locate(x, st);
        st.nodes
            .iter()
            .zip(&st.weights)
            .map(|(&i, &w)| w * values[i])
            .sum()
    }

    /// Second-order periodic central difference `∂_k f` at every node.
    pub fn central_gradient(&self, f: &[f64], k: usize) -> Vec<f64> {
        let inv = 0.5 / self.spacing[k];
        (0..self.len)
            .map(|i| (f[self.shift(i, k, 1)] - f[self.shift(i, k, -1)]) * inv)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_major_indexing_is_bijective() {
        let g = TorusGrid::new(TorusGeometry::new(vec![1.0, 2.0, 0.5]).unwrap(), vec![3, 4, 5]).unwrap();
        let mut m = [0usize; 3];
        for i in 0..g.len() {
            g.multi_index(i, &mut m);
            assert_eq!(g.index(&m), i);
        }
        assert_eq!(g.index(&[1, 0, 0]), 20);
    }

    #[test]
    fn shifts_wrap() {
        let g = TorusGrid::uniform(TorusGeometry::unit(2), 4).unwrap();
        assert_eq!(g.shift(g.index(&[0, 3]), 1, 1), g.index(&[0, 0]));
        assert_eq!(g.shift(g.index(&[0, 0]), 0, -1), g.index(&[3, 0]));
        assert_eq!(g.shift(g.index(&[2, 1]), 0, 6), g.index(&[0, 1]));
    }

    #[test]
    fn interpolation_reproduces_linear_functions_inside_cells() {
        let g = TorusGrid::uniform(TorusGeometry::unit(2), 8).unwrap();
        let pts = g.points();
        let f: Vec<f64> = pts.iter().map(|p| 1.0 + 2.0 * p[0] - 3.0 * p[1]).collect();
        let mut st = Stencil::default();
        let x = [0.3, 0.55];
        let v = g.interpolate(&f, &x, &mut st);
        assert!((v - (1.0 + 0.6 - 1.65)).abs() < 1e-12);
        assert!((st.weights.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        // on a node the stencil collapses to that node
        let v = g.interpolate(&f, &pts[10], &mut st);
        assert!((v - f[10]).abs() < 1e-15);
    }

    #[test]
    fn rejects_degenerate_resolution() {
        assert!(TorusGrid::new(TorusGeometry::unit(1), vec![1]).is_err());
        assert!(TorusGrid::new(TorusGeometry::unit(2), vec![4]).is_err());
    }
}
