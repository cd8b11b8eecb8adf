//! Small dense symmetric kernels for the grid Newton systems.

use crate::scalar::Real;

/// Dense symmetric matrix with full row-major storage.
#[derive(Clone, Debug)]
pub(crate) struct SymMatrix<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Real> SymMatrix<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![T::zero(); n * n],
        }
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.n + j] = v;
        self.data[j * self.n + i] = v;
    }

    #[cfg(test)]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.n + j]
    }

    pub fn mul_vec(&self, x: &[T], out: &mut [T]) {
        let n = self.n;
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.data[i * n..(i + 1) * n]
                .iter()
                .zip(x)
                .map(|(&a, &b)| a * b)
                .sum();
        }
    }

    /// Cholesky factor of `self + diag(shift)`, or `None` if not positive definite.
    pub fn cholesky_shifted(&self, shift: &[T]) -> Option<Cholesky<T>> {
        let n = self.n;
        let mut l = self.data.clone();
        for (i, &s) in shift.iter().enumerate() {
            l[i * n + i] += s;
        }
        for j in 0..n {
            let mut d = l[j * n + j];
            for k in 0..j {
                let v = l[j * n + k];
                d -= v * v;
            }
            if !(d > T::zero()) {
                return None;
            }
            let d = d.sqrt();
            l[j * n + j] = d;
            for i in (j + 1)..n {
                let mut s = l[i * n + j];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / d;
            }
        }
        Some(Cholesky { n, l })
    }
}

/// Lower-triangular factor `L` with `A = L Lᵀ` (only the lower part is meaningful).
#[derive(Clone, Debug)]
pub(crate) struct Cholesky<T> {
    n: usize,
    l: Vec<T>,
}

impl<T: Real> Cholesky<T> {
    /// Solves `A x = b` in place.
    #[allow(clippy::needless_range_loop)]
    pub fn solve_in_place(&self, b: &mut [T]) {
        let n = self.n;
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.l[i * n + k] * b[k];
            }
            b[i] = s / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in (i + 1)..n {
                s -= self.l[k * n + i] * b[k];
            }
            b[i] = s / self.l[i * n + i];
        }
    }
}
