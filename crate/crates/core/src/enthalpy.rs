//! Two-phase enthalpy nonlinearity.
//!
//! `β` maps enthalpy to temperature: slope `a` in the ice phase, a plateau of
//! width `ρ` (latent heat) at the melting temperature, slope 1 in water.

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::spectral::{Basis, SpectralField};

/// Material constants `a` (ice conductivity) and `ρ` (latent heat), plus the
/// regularization bound `ε₀ < min(a, 1)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnthalpyParams<T> {
    a: T,
    rho: T,
    eps0: T,
}

impl<T: Real> EnthalpyParams<T> {
    /// Uses the default `ε₀ = min(a, 1) / 2`.
    ///
    /// `ρ = 0` is accepted: `β` then has no plateau, and with `a = 1` it is the
    /// identity, which gives closed-form spectral oracles.
    pub fn new(a: T, rho: T) -> Result<Self> {
        let eps0 = a.min(T::one()) * T::of(0.5);
        Self::with_eps0(a, rho, eps0)
    }

    pub fn with_eps0(a: T, rho: T, eps0: T) -> Result<Self> {
        if !(a > T::zero()) || !a.is_finite() {
            return Err(Error::out_of_range("a", a.as_f64(), "(0, inf)"));
        }
        if !(rho >= T::zero()) || !rho.is_finite() {
            return Err(Error::out_of_range("rho", rho.as_f64(), "[0, inf)"));
        }
        let cap = a.min(T::one());
        if !(eps0 > T::zero() && eps0 < cap) {
            return Err(Error::out_of_range(
                "eps0",
                eps0.as_f64(),
                format!("(0, min(a,1) = {cap})"),
            ));
        }
        Ok(Self { a, rho, eps0 })
    }

    pub fn a(&self) -> T {
        self.a
    }

    pub fn rho(&self) -> T {
        self.rho
    }

    pub fn eps0(&self) -> T {
        self.eps0
    }

    /// Smallest Lipschitz constant of `β`: `K = max(a, 1)`.
    pub fn lipschitz(&self) -> T {
        self.a.max(T::one())
    }

    /// `γ = min(1/(a+ε₀), 1/(1+ε₀))`, the uniform lower slope of `(β+εI)⁻¹`.
    pub fn gamma(&self) -> T {
        (self.a + self.eps0)
            .recip()
            .min((T::one() + self.eps0).recip())
    }

    /// A constant `C` with `|(β+εI)⁻¹ r| ≤ C (1 + |r|)` for every `ε > 0`.
    pub fn linear_growth_constant(&self) -> T {
        self.a.recip().max(self.rho + T::one())
    }

    pub fn check_eps(&self, eps: T) -> Result<()> {
        if eps > T::zero() && eps < self.eps0 {
            Ok(())
        } else {
            Err(Error::out_of_range(
                "eps",
                eps.as_f64(),
                format!("(0, eps0 = {})", self.eps0),
            ))
        }
    }

    #[inline]
    pub fn beta(&self, r: T) -> T {
        if r < T::zero() {
            self.a * r
        } else if r <= self.rho {
            T::zero()
        } else {
            r - self.rho
        }
    }

    /// Generalized derivative used by Newton: right slope at the kinks.
    #[inline]
    pub fn beta_slope(&self, r: T) -> T {
        if r < T::zero() {
            self.a
        } else if r < self.rho {
            T::zero()
        } else {
            T::one()
        }
    }

    /// Antiderivative `B` of `β` with `B(0) = 0`; convex.
    #[inline]
    pub fn beta_potential(&self, r: T) -> T {
        let half = T::of(0.5);
        if r < T::zero() {
            half * self.a * r * r
        } else if r <= self.rho {
            T::zero()
        } else {
            let s = r - self.rho;
            half * s * s
        }
    }

    /// `(β + εI)⁻¹ r`, checked for `0 < ε < ε₀`.
    pub fn beta_eps_inverse(&self, r: T, eps: T) -> Result<T> {
        self.check_eps(eps)?;
        Ok(self.beta_eps_inverse_unchecked(r, eps))
    }

    #[inline]
    pub fn beta_eps_inverse_unchecked(&self, r: T, eps: T) -> T {
        if r < T::zero() {
            r / (self.a + eps)
        } else if r <= eps * self.rho {
            r / eps
        } else {
            (r + self.rho) / (T::one() + eps)
        }
    }

    /// `c₁, c₂` with `r β(r) ≥ c₁ r² − c₂` for all `r`, checked by a dense scan.
    ///
    /// With `c₁ = min(a,1)/2` the binding constraints are the plateau
    /// (`c₂ ≥ c₁ρ²`) and the minimum of `(1−c₁)r² − ρr` on `r > ρ`
    /// (`c₂ ≥ ρ²/(4(1−c₁))`). Without a plateau `c₁ = min(a,1)`, `c₂ = 0` is exact.
    pub fn coercivity_constants(&self) -> Result<(T, T)> {
        let (c1, c2) = if self.rho == T::zero() {
            (self.a.min(T::one()), T::zero())
        } else {
            let c1 = self.a.min(T::one()) * T::of(0.5);
            let rho2 = self.rho * self.rho;
            let c2 = (c1 * rho2).max(rho2 / (T::of(4.0) * (T::one() - c1)));
            (c1, c2)
        };
        self.verify_coercivity(c1, c2)?;
        Ok((c1, c2))
    }

    /// Dense scan of `r β(r) ≥ c₁ r² − c₂` over `|r| ≤ 10³(1+ρ)`, kinks included.
    pub fn verify_coercivity(&self, c1: T, c2: T) -> Result<()> {
        let span = T::of(1e3) * (T::one() + self.rho);
        let n = 200_000usize;
        let critical = [
            T::zero(),
            self.rho,
            self.rho / (T::of(2.0) * (T::one() - c1.min(T::of(0.5)))),
        ];
        let grid = (0..=n).map(|i| -span + span * T::of(2.0) * T::of_usize(i) / T::of_usize(n));
        for r in grid.chain(critical) {
            let lhs = r * self.beta(r);
            let rhs = c1 * r * r - c2;
            // relative slack covers rounding of r² at the scan edges
            let slack = T::epsilon() * T::of(16.0) * (T::one() + r * r);
            if lhs < rhs - slack {
                return Err(Error::CoercivityScan {
                    c1: c1.as_f64(),
                    c2: c2.as_f64(),
                    at: r.as_f64(),
                });
            }
        }
        Ok(())
    }

    pub fn apply_beta(&self, field: &SpectralField<T>, basis: &Basis<T>) -> Result<SpectralField<T>> {
        basis.map_pointwise(field, |r| self.beta(r))
    }

    pub fn apply_beta_eps_inverse(
        &self,
        field: &SpectralField<T>,
        eps: T,
        basis: &Basis<T>,
    ) -> Result<SpectralField<T>> {
        self.check_eps(eps)?;
        basis.map_pointwise(field, |r| self.beta_eps_inverse_unchecked(r, eps))
    }
}
