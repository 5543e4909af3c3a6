//! Banded LU with partial pivoting for the flow-line boundary-value systems.

use crate::error::{ChordError, Result};

/// Square matrix with `kl` sub- and `ku` super-diagonals. Rows keep room for
/// the `kl` extra super-diagonals created by row interchanges.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    // row i stores columns [i - kl, i + ku + kl]
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        BandMatrix { n, kl, ku, width, data: vec![0.0; n * width] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    fn slot(&self, i: usize, j: usize) -> Option<usize> {
        let off = j as isize - i as isize + self.kl as isize;
        if off < 0 || off as usize >= self.width {
            None
        } else {
            Some(i * self.width + off as usize)
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.slot(i, j).map(|k| self.data[k]).unwrap_or(0.0)
    }

    /// Adds `v` at `(i, j)`; panics outside the declared band.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let off = j as isize - i as isize;
        assert!(
            off >= -(self.kl as isize) && off <= self.ku as isize,
            "entry ({i}, {j}) outside band kl = {}, ku = {}",
            self.kl,
            self.ku
        );
        let k = self.slot(i, j).expect("inside band");
        self.data[k] += v;
    }

    /// In-place factorization and solve of `A x = b`.
    pub fn solve(mut self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.n;
        assert_eq!(b.len(), n);
        let mut x = b.to_vec();
        let kl = self.kl;
        let reach = self.ku + kl;
        let scale = self.data.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = self.get(k, k).abs();
            for i in k + 1..=last_row {
                let v = self.get(i, k).abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if !(best > 1e-15 * scale) {
                return Err(ChordError::Singular(format!("banded pivot {best:e} at column {k}")));
            }
            let last_col = (k + reach).min(n - 1);
            if p != k {
                for j in k..=last_col {
                    let a = self.get(k, j);
                    let c = self.get(p, j);
                    self.set_in_window(k, j, c);
                    self.set_in_window(p, j, a);
                }
                x.swap(k, p);
            }
            let piv = self.get(k, k);
            for i in k + 1..=last_row {
                let l = self.get(i, k) / piv;
                if l == 0.0 {
                    continue;
                }
                self.set_in_window(i, k, 0.0);
                for j in k + 1..=last_col {
                    let v = self.get(k, j);
                    if v != 0.0 {
                        let cur = self.get(i, j);
                        self.set_in_window(i, j, cur - l * v);
                    }
                }
                x[i] -= l * x[k];
            }
        }
        for k in (0..n).rev() {
            let last_col = (k + reach).min(n - 1);
            let mut s = x[k];
            for j in k + 1..=last_col {
                s -= self.get(k, j) * x[j];
            }
            x[k] = s / self.get(k, k);
        }
        Ok(x)
    }

    fn set_in_window(&mut self, i: usize, j: usize, v: f64) {
        match self.slot(i, j) {
            Some(k) => self.data[k] = v,
            None => debug_assert!(v == 0.0, "fill outside storage at ({i}, {j})"),
        }
    }
}
