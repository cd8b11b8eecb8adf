//! Sine-series discretization of `D = (0, 1)` with homogeneous Dirichlet data.
//!
//! A state is stored by its coefficients in the orthonormal eigenbasis
//! `e_k(ξ) = √2 sin(kπξ)` of the Dirichlet Laplacian, `−Δ e_k = (kπ)² e_k`.
//! In that basis the three norms of the Gelfand triple `H¹₀ ⊂ L² ⊂ H⁻¹` are
//! diagonal weights `λ_k^s` with `s = 1, 0, −1`. Pointwise nonlinearities are
//! evaluated at the `n` interior collocation nodes `ξ_j = j/(n+1)`, which the
//! discrete sine transform maps one-to-one onto the first `n` modes.

use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::linalg::SymMatrix;
use crate::scalar::Real;

/// Which member of the norm triple to measure in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Space {
    L2,
    H1,
    Hminus1,
}

impl Space {
    pub const ALL: [Space; 3] = [Space::L2, Space::H1, Space::Hminus1];
}

/// Dirichlet eigenvalue `λ_k = (kπ)²` for the 1-based mode index `k`.
#[inline]
pub fn eigenvalue<T: Real>(k: usize) -> T {
    let w = T::of_usize(k) * T::PI();
    w * w
}

#[inline]
fn weight<T: Real>(k: usize, space: Space) -> T {
    match space {
        Space::L2 => T::one(),
        Space::H1 => eigenvalue(k),
        Space::Hminus1 => eigenvalue::<T>(k).recip(),
    }
}

/// A field given by its first `n_modes` sine coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralField<T> {
    coeffs: Vec<T>,
}

impl<T: Real> SpectralField<T> {
    pub fn zeros(n_modes: usize) -> Self {
        Self {
            coeffs: vec![T::zero(); n_modes],
        }
    }

    /// The basis function `e_k`, `k` counted from 1.
    pub fn basis_vector(n_modes: usize, k: usize) -> Result<Self> {
        if k == 0 || k > n_modes {
            return Err(Error::out_of_range(
                "mode index",
                k as f64,
                format!("1..={n_modes}"),
            ));
        }
        let mut f = Self::zeros(n_modes);
        f.coeffs[k - 1] = T::one();
        Ok(f)
    }

    pub fn from_coeffs(coeffs: Vec<T>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::InvalidParameter("a field needs at least one mode".into()));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("spectral coefficients"));
        }
        Ok(Self { coeffs })
    }

    /// Builds a field from coefficients already known to be finite.
    pub(crate) fn from_coeffs_unchecked(coeffs: Vec<T>) -> Self {
        debug_assert!(coeffs.iter().all(|c| c.is_finite()));
        Self { coeffs }
    }

    pub fn n_modes(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeffs(&self) -> &[T] {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<T> {
        self.coeffs
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_finite())
    }

    pub fn norm(&self, space: Space) -> T {
        self.norm_sq(space).sqrt()
    }

    pub fn norm_sq(&self, space: Space) -> T {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(i, &c)| weight::<T>(i + 1, space) * c * c)
            .sum()
    }

    pub fn inner(&self, other: &Self, space: Space) -> Result<T> {
        self.check_same(other)?;
        Ok(self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .enumerate()
            .map(|(i, (&a, &b))| weight::<T>(i + 1, space) * a * b)
            .sum())
    }

    /// Orthogonal projection `P_m` onto the first `m` modes.
    pub fn project(&self, m: usize) -> Result<Self> {
        if m == 0 || m > self.n_modes() {
            return Err(Error::out_of_range(
                "projection rank",
                m as f64,
                format!("1..={}", self.n_modes()),
            ));
        }
        let mut out = self.clone();
        out.coeffs[m..].iter_mut().for_each(|c| *c = T::zero());
        Ok(out)
    }

    /// `−Δ x`, i.e. coefficients multiplied by `λ_k`.
    pub fn neg_laplacian(&self) -> Self {
        self.map_modes(|k, c| eigenvalue::<T>(k) * c)
    }

    /// `(−Δ)⁻¹ x`.
    pub fn inv_neg_laplacian(&self) -> Self {
        self.map_modes(|k, c| c / eigenvalue::<T>(k))
    }

    /// Applies `c_k ↦ g(k, c_k)` mode by mode, `k` counted from 1.
    pub fn map_modes(&self, mut g: impl FnMut(usize, T) -> T) -> Self {
        Self {
            coeffs: self
                .coeffs
                .iter()
                .enumerate()
                .map(|(i, &c)| g(i + 1, c))
                .collect(),
        }
    }

    pub fn scaled(&self, s: T) -> Self {
        self.map_modes(|_, c| c * s)
    }

    /// `self += s · other`.
    pub fn axpy(&mut self, s: T, other: &Self) {
        self.assert_same(other);
        for (a, &b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += s * b;
        }
    }

    /// Precision conversion, e.g. an `f64` noise mark into an `f32` state.
    pub fn cast<U: Real>(&self) -> SpectralField<U> {
        SpectralField {
            coeffs: self.coeffs.iter().map(|c| U::of(c.as_f64())).collect(),
        }
    }

    fn check_same(&self, other: &Self) -> Result<()> {
        if self.n_modes() != other.n_modes() {
            return Err(Error::DimensionMismatch {
                expected: self.n_modes(),
                found: other.n_modes(),
            });
        }
        Ok(())
    }

    fn assert_same(&self, other: &Self) {
        assert_eq!(
            self.n_modes(),
            other.n_modes(),
            "arithmetic between fields of different resolution"
        );
    }
}

impl<T: Real> Add for &SpectralField<T> {
    type Output = SpectralField<T>;
    fn add(self, rhs: Self) -> SpectralField<T> {
        let mut out = self.clone();
        out += rhs;
        out
    }
}

impl<T: Real> Sub for &SpectralField<T> {
    type Output = SpectralField<T>;
    fn sub(self, rhs: Self) -> SpectralField<T> {
        let mut out = self.clone();
        out -= rhs;
        out
    }
}

impl<T: Real> Add for SpectralField<T> {
    type Output = SpectralField<T>;
    fn add(mut self, rhs: Self) -> SpectralField<T> {
        self += &rhs;
        self
    }
}

impl<T: Real> Sub for SpectralField<T> {
    type Output = SpectralField<T>;
    fn sub(mut self, rhs: Self) -> SpectralField<T> {
        self -= &rhs;
        self
    }
}

impl<T: Real> AddAssign<&SpectralField<T>> for SpectralField<T> {
    fn add_assign(&mut self, rhs: &SpectralField<T>) {
        self.axpy(T::one(), rhs);
    }
}

impl<T: Real> SubAssign<&SpectralField<T>> for SpectralField<T> {
    fn sub_assign(&mut self, rhs: &SpectralField<T>) {
        self.axpy(-T::one(), rhs);
    }
}

impl<T: Real> Mul<T> for &SpectralField<T> {
    type Output = SpectralField<T>;
    fn mul(self, s: T) -> SpectralField<T> {
        self.scaled(s)
    }
}

impl<T: Real> Neg for &SpectralField<T> {
    type Output = SpectralField<T>;
    fn neg(self) -> SpectralField<T> {
        self.scaled(-T::one())
    }
}

/// Precomputed transform tables for one resolution.
///
/// `to_grid` evaluates `u_j = Σ_k c_k √2 sin(kπ ξ_j)`; since the sine matrix
/// `S` satisfies `SᵀS = (n+1) I`, `from_grid` is `c = Sᵀu / (n+1)`.
#[derive(Debug)]
pub struct Basis<T> {
    n: usize,
    // row-major, row = node j, column = mode k
    sine: Vec<T>,
    green: OnceLock<SymMatrix<T>>,
}

impl<T: Real> Basis<T> {
    pub fn new(n_modes: usize) -> Result<Self> {
        if n_modes == 0 {
            return Err(Error::InvalidParameter("basis needs at least one mode".into()));
        }
        let n = n_modes;
        let h = 1.0 / (n as f64 + 1.0);
        let sqrt2 = std::f64::consts::SQRT_2;
        let mut sine = Vec::with_capacity(n * n);
        for j in 1..=n {
            for k in 1..=n {
                // reduce the argument exactly in integers before the trig call
                let m = (j * k) % (2 * (n + 1));
                let s = (std::f64::consts::PI * m as f64 * h).sin();
                sine.push(T::of(sqrt2 * s));
            }
        }
        Ok(Self {
            n,
            sine,
            green: OnceLock::new(),
        })
    }

    pub fn n_modes(&self) -> usize {
        self.n
    }

    /// Interior nodes `ξ_j = j/(n+1)`.
    pub fn nodes(&self) -> Vec<T> {
        let h = T::one() / T::of_usize(self.n + 1);
        (1..=self.n).map(|j| T::of_usize(j) * h).collect()
    }

    pub fn to_grid(&self, field: &SpectralField<T>) -> Result<Vec<T>> {
        self.check(field.n_modes())?;
        let mut out = vec![T::zero(); self.n];
        self.synthesize(field.coeffs(), &mut out);
        Ok(out)
    }

    pub fn from_grid(&self, values: &[T]) -> Result<SpectralField<T>> {
        self.check(values.len())?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("grid values"));
        }
        let mut out = vec![T::zero(); self.n];
        self.analyze(values, &mut out);
        Ok(SpectralField::from_coeffs_unchecked(out))
    }

    /// Evaluates a profile `g(ξ)` at the nodes and transforms it.
    pub fn sample(&self, g: impl Fn(f64) -> f64) -> Result<SpectralField<T>> {
        let h = 1.0 / (self.n as f64 + 1.0);
        let values: Vec<T> = (1..=self.n).map(|j| T::of(g(j as f64 * h))).collect();
        self.from_grid(&values)
    }

    /// Applies a pointwise map on the grid and transforms back.
    pub fn map_pointwise(
        &self,
        field: &SpectralField<T>,
        g: impl Fn(T) -> T,
    ) -> Result<SpectralField<T>> {
        let mut grid = self.to_grid(field)?;
        grid.iter_mut().for_each(|v| *v = g(*v));
        self.from_grid(&grid)
    }

    pub(crate) fn synthesize(&self, coeffs: &[T], out: &mut [T]) {
        let n = self.n;
        for (j, o) in out.iter_mut().enumerate() {
            let row = &self.sine[j * n..(j + 1) * n];
            *o = row.iter().zip(coeffs).map(|(&s, &c)| s * c).sum();
        }
    }

    pub(crate) fn analyze(&self, values: &[T], out: &mut [T]) {
        let n = self.n;
        out.iter_mut().for_each(|o| *o = T::zero());
        for (j, &v) in values.iter().enumerate() {
            let row = &self.sine[j * n..(j + 1) * n];
            for (o, &s) in out.iter_mut().zip(row) {
                *o += s * v;
            }
        }
        let h = T::one() / T::of_usize(n + 1);
        out.iter_mut().for_each(|o| *o *= h);
    }

    /// Grid representation of `(−Δ)⁻¹`: `M = S Λ⁻¹ Sᵀ / (n+1)`.
    ///
    /// The collocated equation `c + τ Λ · analyze(φ(u)) = c_y` is equivalent
    /// on the grid to `M (u − u_y) + τ φ(u) = 0`.
    pub(crate) fn green(&self) -> &SymMatrix<T> {
        self.green.get_or_init(|| {
            let n = self.n;
            let h = T::one() / T::of_usize(n + 1);
            let inv_lambda: Vec<T> = (1..=n).map(|k| eigenvalue::<T>(k).recip()).collect();
            let mut m = SymMatrix::zeros(n);
            for i in 0..n {
                let ri = &self.sine[i * n..(i + 1) * n];
                for j in 0..=i {
                    let rj = &self.sine[j * n..(j + 1) * n];
                    let v: T = ri
                        .iter()
                        .zip(rj)
                        .zip(&inv_lambda)
                        .map(|((&a, &b), &w)| a * b * w)
                        .sum();
                    m.set(i, j, v * h);
                }
            }
            m
        })
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: len,
            });
        }
        Ok(())
    }
}
