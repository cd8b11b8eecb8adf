//! Resolvents and Yosida-type approximations of `A = −Δβ` on `H⁻¹`.
//!
//! Every operator here reduces to one nonlinear elliptic problem
//!
//! ```text
//!     u + τ(−Δ)(β(u) + σu) = y
//! ```
//!
//! with `(τ, σ) = (ε, ε)` for `J_ε = (I + εG_ε)⁻¹`, `G_ε = −Δ(β+εI)`, and
//! `(τ, σ) = (ε, 0)` for `L_ε = (I + εA)⁻¹`. On the collocation grid it reads
//! `M(u − y) + τφ(u) = 0` with `M` the grid inverse Laplacian, which is the
//! gradient of the strictly convex energy
//! `½(u−y)ᵀM(u−y) + τΣ Φ(u_j)`. Newton steps use the generalized derivative
//! of the piecewise-linear `φ` and are globalized by an Armijo search on that
//! energy; a linear contraction sweep takes over if the search stalls.

use std::sync::Arc;

use crate::enthalpy::EnthalpyParams;
use crate::error::{Error, Result};
use crate::linalg::Cholesky;
use crate::scalar::Real;
use crate::spectral::{eigenvalue, Basis, Space, SpectralField};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverSettings<T> {
    /// Absolute tolerance on the `H⁻¹` norm of the equation residual.
    pub tol: T,
    pub max_iter: usize,
    /// Initial Newton step length in `(0, 1]`.
    pub damping: T,
}

impl<T: Real> Default for SolverSettings<T> {
    fn default() -> Self {
        Self {
            tol: T::default_tolerance(),
            max_iter: 200,
            damping: T::one(),
        }
    }
}

impl<T: Real> SolverSettings<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > T::zero()) {
            return Err(Error::out_of_range("tol", self.tol.as_f64(), "(0, inf)"));
        }
        if self.max_iter == 0 {
            return Err(Error::out_of_range("max_iter", 0.0, ">= 1"));
        }
        if !(self.damping > T::zero() && self.damping <= T::one()) {
            return Err(Error::out_of_range("damping", self.damping.as_f64(), "(0, 1]"));
        }
        Ok(())
    }
}

/// Outcome of a nonlinear solve. On failure `value` is the best iterate.
#[derive(Clone, Debug)]
pub struct ResolventResult<T> {
    pub value: SpectralField<T>,
    pub residual: T,
    pub iterations: usize,
    pub converged: bool,
}

impl<T: Real> ResolventResult<T> {
    pub fn into_converged(self, solver: &'static str) -> Result<SpectralField<T>> {
        if self.converged {
            Ok(self.value)
        } else {
            Err(Error::SolverFailed {
                solver,
                residual: self.residual.as_f64(),
                iterations: self.iterations,
            })
        }
    }
}

/// `J_ε y`, `Z_ε y = (β+εI)J_ε y` and `F_ε y = −ΔZ_ε y` from one solve.
#[derive(Clone, Debug)]
pub struct YosidaTriple<T> {
    pub j: SpectralField<T>,
    pub z: SpectralField<T>,
    pub f: SpectralField<T>,
    pub residual: T,
}

struct Solved<T> {
    result: ResolventResult<T>,
    /// `φ(u)` on the grid at the returned iterate.
    phi_grid: Vec<T>,
}

/// The operator family of the regularized Stefan problem at one resolution.
#[derive(Clone, Debug)]
pub struct StefanOperators<T> {
    basis: Arc<Basis<T>>,
    params: EnthalpyParams<T>,
    settings: SolverSettings<T>,
}

impl<T: Real> StefanOperators<T> {
    pub fn new(basis: Arc<Basis<T>>, params: EnthalpyParams<T>, settings: SolverSettings<T>) -> Result<Self> {
        settings.validate()?;
        Ok(Self {
            basis,
            params,
            settings,
        })
    }

    pub fn with_modes(n_modes: usize, params: EnthalpyParams<T>) -> Result<Self> {
        Self::new(Arc::new(Basis::new(n_modes)?), params, SolverSettings::default())
    }

    pub fn basis(&self) -> &Arc<Basis<T>> {
        &self.basis
    }

    pub fn params(&self) -> &EnthalpyParams<T> {
        &self.params
    }

    pub fn settings(&self) -> &SolverSettings<T> {
        &self.settings
    }

    pub fn n_modes(&self) -> usize {
        self.basis.n_modes()
    }

    /// `G_ε x = −Δ(β(x) + εx)`.
    pub fn apply_g_eps(&self, x: &SpectralField<T>, eps: T) -> Result<SpectralField<T>> {
        let bx = self.params.apply_beta(x, &self.basis)?;
        let mut out = bx;
        out.axpy(eps, x);
        Ok(out.neg_laplacian())
    }

    /// `J_ε y = (I + εG_ε)⁻¹ y`, requires `0 < ε < ε₀`.
    pub fn resolvent_j(&self, y: &SpectralField<T>, eps: T) -> Result<ResolventResult<T>> {
        self.params.check_eps(eps)?;
        Ok(self.solve(y, eps, eps)?.result)
    }

    pub fn yosida_triple(&self, y: &SpectralField<T>, eps: T) -> Result<YosidaTriple<T>> {
        self.params.check_eps(eps)?;
        let solved = self.solve(y, eps, eps)?;
        let residual = solved.result.residual;
        let j = solved.result.into_converged("resolvent J_eps")?;
        let z = self.basis.from_grid(&solved.phi_grid)?;
        let f = z.neg_laplacian();
        Ok(YosidaTriple { j, z, f, residual })
    }

    /// `Z_ε y = (β+εI) J_ε y`.
    pub fn apply_z(&self, y: &SpectralField<T>, eps: T) -> Result<SpectralField<T>> {
        Ok(self.yosida_triple(y, eps)?.z)
    }

    /// `F_ε y = −ΔZ_ε y`.
    pub fn apply_f(&self, y: &SpectralField<T>, eps: T) -> Result<SpectralField<T>> {
        Ok(self.yosida_triple(y, eps)?.f)
    }

    /// `F_ε y = (y − J_ε y)/ε`, the defining formula.
    pub fn apply_f_by_difference(&self, y: &SpectralField<T>, eps: T) -> Result<SpectralField<T>> {
        let j = self.resolvent_j(y, eps)?.into_converged("resolvent J_eps")?;
        Ok((y - &j).scaled(eps.recip()))
    }

    /// `L_ε y = (I + εA)⁻¹ y`, i.e. the solution of `u − εΔβ(u) = y`.
    ///
    /// This is also one implicit Euler step of `dX = −AX dt` with `dt = ε`.
    pub fn resolvent_l(&self, y: &SpectralField<T>, eps: T) -> Result<ResolventResult<T>> {
        if !(eps > T::zero()) || !eps.is_finite() {
            return Err(Error::out_of_range("eps", eps.as_f64(), "(0, inf)"));
        }
        Ok(self.solve(y, eps, T::zero())?.result)
    }

    /// `Ax = −Δβ(x)`.
    pub fn apply_a(&self, x: &SpectralField<T>) -> Result<SpectralField<T>> {
        Ok(self.params.apply_beta(x, &self.basis)?.neg_laplacian())
    }

    /// `‖β(x)‖₁`, equal to `‖Ax‖₋₁`.
    pub fn norm_a(&self, x: &SpectralField<T>) -> Result<T> {
        Ok(self.params.apply_beta(x, &self.basis)?.norm(Space::H1))
    }

    /// Yosida approximation `A_ε x = (x − L_ε x)/ε`.
    pub fn apply_a_eps(&self, x: &SpectralField<T>, eps: T) -> Result<SpectralField<T>> {
        let l = self.resolvent_l(x, eps)?.into_converged("resolvent L_eps")?;
        Ok((x - &l).scaled(eps.recip()))
    }

    /// `A_ε x = A L_ε x`, the second route.
    pub fn apply_a_eps_by_composition(&self, x: &SpectralField<T>, eps: T) -> Result<SpectralField<T>> {
        let l = self.resolvent_l(x, eps)?.into_converged("resolvent L_eps")?;
        self.apply_a(&l)
    }

    /// Solves `u + τ(−Δ)(β(u) + σu) = y`.
    fn solve(&self, y: &SpectralField<T>, tau: T, sigma: T) -> Result<Solved<T>> {
        let n = self.n_modes();
        if y.n_modes() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: y.n_modes(),
            });
        }
        let basis = &*self.basis;
        let green = basis.green();
        let p = &self.params;
        let phi = |r: T| p.beta(r) + sigma * r;
        let slope = |r: T| p.beta_slope(r) + sigma;
        let half = T::of(0.5);
        let potential = |r: T| p.beta_potential(r) + half * sigma * r * r;

        let mut y_grid = vec![T::zero(); n];
        basis.synthesize(y.coeffs(), &mut y_grid);

        let mut v = y_grid.clone();
        let mut diff = vec![T::zero(); n];
        let mut mdiff = vec![T::zero(); n];
        let mut grad = vec![T::zero(); n];
        let mut coef = vec![T::zero(); n];
        let mut step = vec![T::zero(); n];
        let mut trial = vec![T::zero(); n];
        let mut shifts = vec![T::zero(); n];
        let mut factor: Option<(Vec<T>, Cholesky<T>)> = None;
        let mut fallback: Option<Cholesky<T>> = None;

        // energy and gradient at v; mdiff = M(v − y)
        let eval = |v: &[T], diff: &mut [T], mdiff: &mut [T]| -> T {
            for ((d, &a), &b) in diff.iter_mut().zip(v).zip(&y_grid) {
                *d = a - b;
            }
            green.mul_vec(diff, mdiff);
            let quad: T = diff.iter().zip(mdiff.iter()).map(|(&a, &b)| a * b).sum();
            half * quad + tau * v.iter().map(|&r| potential(r)).sum::<T>()
        };

        let mut energy = eval(&v, &mut diff, &mut mdiff);
        let mut best: Option<(T, Vec<T>)> = None;
        let mut iterations = 0;
        let mut residual;
        loop {
            for ((g, &m), &r) in grad.iter_mut().zip(&mdiff).zip(&v) {
                *g = m + tau * phi(r);
            }
            basis.analyze(&grad, &mut coef);
            // the H⁻¹ residual of the coefficient equation is Λ·coef
            residual = coef
                .iter()
                .enumerate()
                .map(|(i, &c)| eigenvalue::<T>(i + 1) * c * c)
                .sum::<T>()
                .sqrt();
            if best.as_ref().is_none_or(|(r, _)| residual < *r) {
                best = Some((residual, v.clone()));
            }
            if residual <= self.settings.tol || iterations >= self.settings.max_iter {
                break;
            }
            iterations += 1;

            for (s, &r) in shifts.iter_mut().zip(&v) {
                *s = tau * slope(r);
            }
            let reuse = matches!(&factor, Some((prev, _)) if *prev == shifts);
            if !reuse {
                factor = green
                    .cholesky_shifted(&shifts)
                    .map(|c| (shifts.clone(), c));
            }
            let mut accepted = false;
            if let Some((_, chol)) = &factor {
                for (s, &g) in step.iter_mut().zip(&grad) {
                    *s = -g;
                }
                chol.solve_in_place(&mut step);
                let slope0: T = grad.iter().zip(&step).map(|(&g, &s)| g * s).sum();
                if slope0 < T::zero() {
                    let mut t = self.settings.damping;
                    let noise = T::epsilon() * T::of(64.0) * (T::one() + energy.abs());
                    for _ in 0..40 {
                        for ((w, &a), &s) in trial.iter_mut().zip(&v).zip(&step) {
                            *w = a + t * s;
                        }
                        let e = eval(&trial, &mut diff, &mut mdiff);
                        if e <= energy + T::of(1e-4) * t * slope0 + noise {
                            std::mem::swap(&mut v, &mut trial);
                            energy = e;
                            accepted = true;
                            break;
                        }
                        t *= half;
                    }
                }
            }
            if !accepted {
                // contraction sweep: (M + τK) u⁺ = M y + τ(K u − φ(u))
                let k = p.lipschitz() + sigma;
                let chol = fallback.get_or_insert_with(|| {
                    green
                        .cholesky_shifted(&vec![tau * k; n])
                        .expect("M + τK I is positive definite")
                });
                green.mul_vec(&y_grid, &mut trial);
                for (w, &r) in trial.iter_mut().zip(&v) {
                    *w += tau * (k * r - phi(r));
                }
                chol.solve_in_place(&mut trial);
                std::mem::swap(&mut v, &mut trial);
                energy = eval(&v, &mut diff, &mut mdiff);
            }
        }

        let converged = residual <= self.settings.tol;
        let (residual, v) = if converged {
            (residual, v)
        } else {
            best.expect("at least one residual evaluation")
        };
        basis.analyze(&v, &mut coef);
        if coef.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("resolvent iterate"));
        }
        let phi_grid = v.iter().map(|&r| phi(r)).collect();
        Ok(Solved {
            result: ResolventResult {
                value: SpectralField::from_coeffs_unchecked(coef),
                residual,
                iterations,
                converged,
            },
            phi_grid,
        })
    }
}

/// `‖β(x)‖₁` of one profile at successive resolutions `n, 2n, 4n, 8n`.
#[derive(Clone, Debug)]
pub struct DomainReport {
    pub n_modes: Vec<usize>,
    pub norms: Vec<f64>,
    /// Ratio of the finest to the coarsest norm.
    pub growth: f64,
    /// `growth > 2`: the profile behaves as if `β(x) ∉ H¹₀`.
    pub outside: bool,
}

/// Discrete stand-in for the test `‖Ax‖₋₁ < ∞`: sample `profile` on three
/// successive refinements of an `n_base` grid and watch `‖β(x)‖₁` grow.
pub fn domain_refinement(
    params: &EnthalpyParams<f64>,
    profile: impl Fn(f64) -> f64,
    n_base: usize,
) -> Result<DomainReport> {
    let n_modes: Vec<usize> = (0..4).map(|i| n_base << i).collect();
    let mut norms = Vec::with_capacity(4);
    for &n in &n_modes {
        let basis = Basis::<f64>::new(n)?;
        let x = basis.sample(&profile)?;
        norms.push(params.apply_beta(&x, &basis)?.norm(Space::H1));
    }
    let growth = if norms[0] > 0.0 {
        norms[3] / norms[0]
    } else if norms[3] > 0.0 {
        f64::INFINITY
    } else {
        1.0
    };
    Ok(DomainReport {
        n_modes,
        norms,
        growth,
        outside: growth > 2.0,
    })
}
