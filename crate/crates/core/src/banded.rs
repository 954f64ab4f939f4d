//! Banded LU factorisation without pivoting.
//!
//! Only used for the row-diagonally-dominant M-matrices `diag(σ) - Δ_h`
//! produced by the Neumann stencils, for which elimination without row
//! exchanges is stable and keeps fill-in inside the band.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct BandedMatrix {
    n: usize,
    /// Half bandwidth: entries `(i, j)` with `|i - j| <= w` may be nonzero.
    w: usize,
    /// Row-major band storage, row `i` holds columns `i - w ..= i + w`.
    data: Vec<f64>,
}

impl BandedMatrix {
    pub fn zeros(n: usize, half_bandwidth: usize) -> Self {
        Self {
            n,
            w: half_bandwidth,
            data: vec![0.0; n * (2 * half_bandwidth + 1)],
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(i.abs_diff(j) <= self.w, "({i}, {j}) outside band");
        i * (2 * self.w + 1) + (j + self.w - i)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i.abs_diff(j) > self.w {
            0.0
        } else {
            self.data[self.slot(i, j)]
        }
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.w);
                let hi = (i + self.w).min(self.n - 1);
                (lo..=hi).map(|j| self.data[self.slot(i, j)] * x[j]).sum()
            })
            .collect()
    }

    /// In-place Doolittle factorisation.
    pub fn factor(mut self) -> Result<BandedLu> {
        let (n, w) = (self.n, self.w);
        for k in 0..n {
            let pivot = self.data[self.slot(k, k)];
            if pivot.abs() < f64::MIN_POSITIVE || !pivot.is_finite() {
                return Err(Error::Numerical {
                    message: format!("zero or non-finite pivot at row {k}"),
                    residual: pivot,
                });
            }
            let last = (k + w).min(n - 1);
            for i in k + 1..=last {
                let sik = self.slot(i, k);
                let l = self.data[sik] / pivot;
                self.data[sik] = l;
                if l != 0.0 {
                    for j in k + 1..=last {
                        let skj = self.slot(k, j);
                        let sij = self.slot(i, j);
                        self.data[sij] -= l * self.data[skj];
                    }
                }
            }
        }
        Ok(BandedLu { m: self })
    }
}

#[derive(Debug, Clone)]
pub struct BandedLu {
    m: BandedMatrix,
}

impl BandedLu {
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let (n, w) = (self.m.n, self.m.w);
        assert_eq!(rhs.len(), n, "rhs length mismatch");
        let mut x = rhs.to_vec();
        for i in 0..n {
            let lo = i.saturating_sub(w);
            let mut s = x[i];
            for j in lo..i {
                s -= self.m.data[self.m.slot(i, j)] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let hi = (i + w).min(n - 1);
            let mut s = x[i];
            for j in i + 1..=hi {
                s -= self.m.data[self.m.slot(i, j)] * x[j];
            }
            x[i] = s / self.m.data[self.m.slot(i, i)];
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn solves_random_dominant_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (n, w) = (40, 5);
        let mut m = BandedMatrix::zeros(n, w);
        for i in 0..n {
            let mut off = 0.0;
            for j in i.saturating_sub(w)..=(i + w).min(n - 1) {
                if i != j {
                    let v: f64 = rng.gen_range(-1.0..1.0);
                    m.add(i, j, v);
                    off += v.abs();
                }
            }
            m.add(i, i, off + 1.0);
        }
        let x_true: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let b = m.mul_vec(&x_true);
        let lu = m.factor().unwrap();
        let x = lu.solve(&b);
        for (a, e) in x.iter().zip(&x_true) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_pivot_is_reported() {
        let m = BandedMatrix::zeros(3, 1);
        assert!(matches!(m.factor(), Err(Error::Numerical { .. })));
    }
}
