//! Randomized checks of the inequalities and identities the analysis relies on:
//! the enthalpy map, the Yosida-type operators and the Lyapunov functional.
//!
//! Each check reports how many samples violated it and the smallest margin
//! `bound + slack − value` seen, so a failing check says by how much.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::enthalpy::EnthalpyParams;
use crate::error::Result;
use crate::harness::{random_field, unit_hminus1};
use crate::levy::stream_rng;
use crate::lyapunov::LyapunovParams;
use crate::operators::StefanOperators;
use crate::spectral::{Space, SpectralField};

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub suite: &'static str,
    pub name: &'static str,
    pub samples: usize,
    pub violations: usize,
    /// Smallest `bound + slack − value`; negative exactly when something failed.
    pub worst_margin: f64,
}

impl CheckOutcome {
    fn new(suite: &'static str, name: &'static str) -> Self {
        Self {
            suite,
            name,
            samples: 0,
            violations: 0,
            worst_margin: f64::INFINITY,
        }
    }

    /// Records `value ≤ bound + slack`.
    fn le(&mut self, value: f64, bound: f64, slack: f64) {
        let margin = bound + slack - value;
        self.samples += 1;
        if !(margin >= 0.0) {
            self.violations += 1;
        }
        if margin < self.worst_margin || margin.is_nan() {
            self.worst_margin = margin;
        }
    }

    fn holds(&mut self, ok: bool) {
        self.le(if ok { 0.0 } else { 1.0 }, 0.0, 0.0);
    }

    pub fn passed(&self) -> bool {
        self.samples > 0 && self.violations == 0
    }
}

/// Looks a check up by name.
pub fn find<'a>(outcomes: &'a [CheckOutcome], name: &str) -> Option<&'a CheckOutcome> {
    outcomes.iter().find(|c| c.name == name)
}

// Floating-point slack for inequalities that are exact in real arithmetic.
fn ulps(scale: f64) -> f64 {
    16.0 * f64::EPSILON * scale
}

/// Enthalpy map over `n_pairs` random pairs `(r, s)` with `ε` drawn from `(0, ε₀)`.
pub fn enthalpy_suite(params: &EnthalpyParams<f64>, n_pairs: usize, seed: u64) -> Result<Vec<CheckOutcome>> {
    const S: &str = "enthalpy";
    let mut rng = stream_rng(seed, 0);
    let k = params.lipschitz();
    let rho = params.rho();
    let span = 10.0 * (1.0 + rho);
    let growth = (1.0 / params.a()).max(rho + 1.0);

    let mut round_trip = CheckOutcome::new(S, "inverse_round_trip");
    let mut lipschitz = CheckOutcome::new(S, "beta_lipschitz");
    let mut cocoercive = CheckOutcome::new(S, "beta_cocoercive");
    let mut monotone = CheckOutcome::new(S, "beta_monotone");
    let mut linear_growth = CheckOutcome::new(S, "inverse_linear_growth");

    for i in 0..n_pairs {
        // every third pair straddles the plateau [0, ρ]
        let (r, s) = if i % 3 == 0 {
            (rng.random_range(-0.5..rho + 0.5), rng.random_range(-0.5..rho + 0.5))
        } else {
            (rng.random_range(-span..span), rng.random_range(-span..span))
        };
        let eps = params.eps0() * rng.random_range(1e-6..1.0);
        let x = params.beta_eps_inverse(r, eps)?;
        round_trip.le((params.beta(x) + eps * x - r).abs(), 0.0, 1e-14 * r.abs().max(1.0));
        linear_growth.le(x.abs(), growth * (1.0 + r.abs()), ulps(1.0 + r.abs()));

        let (br, bs) = (params.beta(r), params.beta(s));
        let scale = r.abs() + s.abs() + rho;
        lipschitz.le((br - bs).abs(), k * (r - s).abs(), ulps(k * scale));
        cocoercive.le((br - bs) * (br - bs) / k, (br - bs) * (r - s), ulps(k * scale * scale));
        monotone.le(0.0, (br - bs) * (r - s), ulps(k * scale * scale));
    }

    let mut coercivity = CheckOutcome::new(S, "coercivity_scan");
    let (c1, c2) = params.coercivity_constants()?;
    coercivity.holds(params.verify_coercivity(c1, c2).is_ok());

    let mut surjective = CheckOutcome::new(S, "beta_unbounded_both_ways");
    let mut prev = (0.0, 0.0);
    for e in 0..=6 {
        let m = (1.0 + rho) * 10f64.powi(e);
        let (up, down) = (params.beta(m), params.beta(-m));
        surjective.holds(up > prev.0 && down < prev.1);
        prev = (up, down);
    }
    surjective.holds(prev.0 >= 1e5 && prev.1 <= -1e5);

    Ok(vec![round_trip, lipschitz, cocoercive, monotone, linear_growth, coercivity, surjective])
}

/// Tolerances for [`yosida_suite`] and [`resolvent_suite`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OperatorSlack {
    /// Absolute slack on norm inequalities.
    pub absolute: f64,
    /// Slack per unit magnitude on inner-product identities and coercivity.
    pub relative: f64,
    /// Multiple of the solver tolerance allowed between two routes to one operator.
    pub solver_multiple: f64,
}

impl Default for OperatorSlack {
    fn default() -> Self {
        Self {
            absolute: 1e-9,
            relative: 1e-9,
            solver_multiple: 10.0,
        }
    }
}

/// Draws the `i`-th test pair: `L²` fields of varying size; every other
/// second field is a small perturbation of the first.
fn field_pair<R: Rng>(n: usize, i: usize, rng: &mut R) -> (SpectralField<f64>, SpectralField<f64>) {
    let scale = [0.5, 2.0, 8.0][i % 3];
    let x1 = random_field::<f64, _>(n, scale, 0.5, rng);
    let x2 = if i.is_multiple_of(2) {
        random_field::<f64, _>(n, scale, 0.5, rng)
    } else {
        &x1 + &random_field::<f64, _>(n, 0.05 * scale, 0.5, rng)
    };
    (x1, x2)
}

/// Contraction, Lipschitz, identity and coercivity properties of `J_ε`,
/// `Z_ε`, `F_ε` over `n_fields` random pairs.
pub fn yosida_suite(
    ops: &StefanOperators<f64>,
    eps: f64,
    n_fields: usize,
    seed: u64,
    slack: OperatorSlack,
) -> Result<Vec<CheckOutcome>> {
    const S: &str = "yosida";
    ops.params().check_eps(eps)?;
    let n = ops.n_modes();
    let gamma = ops.params().gamma();
    let abs = slack.absolute;
    let rel = |m: f64| slack.relative * (1.0 + m.abs());
    let mut rng = stream_rng(seed, 1);

    let c = |name| CheckOutcome::new(S, name);
    let mut j_hm1 = c("j_contracts_hminus1");
    let mut j_l2 = c("j_contracts_l2");
    let mut j_lip_hm1 = c("j_lipschitz_hminus1");
    let mut j_lip_l2 = c("j_lipschitz_l2");
    let mut id_hm1 = c("identity_hminus1");
    let mut id_l2 = c("identity_l2");
    let mut coercive = c("coercivity");
    let mut f_z_norms = c("f_hminus1_equals_z_h1");
    let mut j_h1 = c("eps_j_h1_bound");

    for i in 0..n_fields {
        let (x1, x2) = field_pair(n, i, &mut rng);
        let t1 = ops.yosida_triple(&x1, eps)?;
        let t2 = ops.yosida_triple(&x2, eps)?;
        let d_hm1 = (&x1 - &x2).norm(Space::Hminus1);
        let d_l2 = (&x1 - &x2).norm(Space::L2);

        j_hm1.le(t1.j.norm(Space::Hminus1), x1.norm(Space::Hminus1), abs);
        j_l2.le(t1.j.norm(Space::L2), x1.norm(Space::L2), abs);
        j_lip_hm1.le((&t1.j - &t2.j).norm(Space::Hminus1), d_hm1, abs);
        j_lip_l2.le((&t1.j - &t2.j).norm(Space::L2), 2.0 / eps * d_l2, abs);

        let f_x_hm1 = t1.f.inner(&x1, Space::Hminus1)?;
        let rhs_hm1 = t1.z.inner(&t1.j, Space::L2)? + eps * t1.f.norm_sq(Space::Hminus1);
        id_hm1.le((f_x_hm1 - rhs_hm1).abs(), 0.0, rel(f_x_hm1));
        let f_x_l2 = t1.f.inner(&x1, Space::L2)?;
        let rhs_l2 = t1.z.neg_laplacian().inner(&t1.j, Space::L2)? + eps * t1.f.norm_sq(Space::L2);
        id_l2.le((f_x_l2 - rhs_l2).abs(), 0.0, rel(f_x_l2));
        coercive.le(
            gamma * t1.z.norm_sq(Space::H1) + eps * t1.f.norm_sq(Space::L2),
            f_x_l2,
            rel(f_x_l2),
        );

        let fz = t1.f.norm(Space::Hminus1);
        f_z_norms.le((fz - t1.z.norm(Space::H1)).abs(), 0.0, rel(fz));
        j_h1.le(eps * t1.j.norm(Space::H1), 0.5 * x1.norm(Space::L2), abs);
    }
    Ok(vec![j_hm1, j_l2, j_lip_hm1, j_lip_l2, id_hm1, id_l2, coercive, f_z_norms, j_h1])
}

/// Two-route consistency of `F_ε` and `A_ε`, nonexpansiveness of `L_ε`, and the
/// bounds comparing `F_ε`, `J_ε`, `A_ε` with `A` on smooth data.
pub fn resolvent_suite(
    ops: &StefanOperators<f64>,
    eps: f64,
    n_fields: usize,
    seed: u64,
    slack: OperatorSlack,
) -> Result<Vec<CheckOutcome>> {
    const S: &str = "resolvents";
    ops.params().check_eps(eps)?;
    let n = ops.n_modes();
    let tol = ops.settings().tol;
    let abs = slack.absolute;
    let routes = slack.solver_multiple * tol / eps;
    let mut rng = stream_rng(seed, 3);

    let c = |name| CheckOutcome::new(S, name);
    let mut f_routes = c("f_two_routes");
    let mut f_bound = c("f_bounded_by_a");
    let mut j_near = c("j_near_identity");
    let mut l_nonexp = c("l_nonexpansive");
    let mut yosida = c("a_eps_bounded_by_a");
    let mut a_routes = c("a_eps_two_routes");

    for i in 0..n_fields {
        let (x1, x2) = field_pair(n, i, &mut rng);
        let f = ops.apply_f(&x1, eps)?;
        f_routes.le((&ops.apply_f_by_difference(&x1, eps)? - &f).norm(Space::Hminus1), 0.0, routes);
        let l1 = ops.resolvent_l(&x1, eps)?.into_converged("resolvent L_eps")?;
        let l2 = ops.resolvent_l(&x2, eps)?.into_converged("resolvent L_eps")?;
        l_nonexp.le((&l1 - &l2).norm(Space::Hminus1), (&x1 - &x2).norm(Space::Hminus1), abs);

        // smooth data for the bounds that need β(x) ∈ H¹₀
        let s = random_field::<f64, _>(n, [0.5, 2.0, 8.0][i % 3], 2.0, &mut rng);
        let na = ops.norm_a(&s)?;
        let t = ops.yosida_triple(&s, eps)?;
        f_bound.le(t.f.norm(Space::Hminus1), na + s.norm(Space::L2), abs);
        j_near.le((&t.j - &s).norm(Space::Hminus1), eps * ops.apply_g_eps(&s, eps)?.norm(Space::Hminus1), abs);
        let a_eps = ops.apply_a_eps(&s, eps)?;
        yosida.le(a_eps.norm(Space::Hminus1), na, abs);
        let a_comp = ops.apply_a_eps_by_composition(&s, eps)?;
        a_routes.le((&a_eps - &a_comp).norm(Space::Hminus1), 0.0, routes);
    }
    Ok(vec![f_routes, f_bound, j_near, l_nonexp, yosida, a_routes])
}

/// Relative tolerance for the finite-difference derivative checks.
pub const DERIVATIVE_TOLERANCE: f64 = 1e-5;

/// Hölder/Lipschitz bounds, Hessian norm bound and symmetry over `n_pairs`
/// random pairs; derivative checks against central differences.
pub fn lyapunov_suite(lyap: &LyapunovParams, n_modes: usize, n_pairs: usize, seed: u64) -> Result<Vec<CheckOutcome>> {
    const S: &str = "lyapunov";
    let a = lyap.alpha();
    let mut rng = stream_rng(seed, 2);
    let c = |name| CheckOutcome::new(S, name);
    let mut holder_sqrt = c("holder_sqrt_difference");
    let mut holder = c("holder_distance");
    let mut lipschitz = c("lipschitz");
    let mut hessian_norm = c("hessian_norm_at_most_two");
    let mut symmetric = c("hessian_symmetric");
    let mut gradient_fd = c("gradient_matches_difference");
    let mut hessian_fd = c("hessian_matches_second_difference");
    let mut f_at_least_one = c("f_at_least_one");

    for i in 0..n_pairs {
        let size: f64 = 10f64.powf(rng.random_range(-2.0..2.0));
        let u = random_field::<f64, _>(n_modes, size, 0.0, &mut rng);
        let v = if i % 2 == 0 {
            random_field::<f64, _>(n_modes, size, 0.0, &mut rng)
        } else {
            &u + &random_field::<f64, _>(n_modes, 1e-3 * size, 0.0, &mut rng)
        };
        let (fu, fv) = (lyap.f_value(&u), lyap.f_value(&v));
        let d = (&u - &v).norm(Space::Hminus1);
        let qs = |x: &SpectralField<f64>| (1.0 + x.norm_sq(Space::Hminus1)).sqrt();
        let mid = (qs(&u) - qs(&v)).abs().powf(a);
        let tiny = ulps(fu.max(fv));
        holder_sqrt.le((fu - fv).abs(), mid, tiny);
        holder.le(mid, d.powf(a), ulps(mid.max(1.0)));
        lipschitz.le((fu - fv).abs(), a * d, tiny);
        f_at_least_one.le(1.0, fu, 0.0);

        let x = random_field::<f64, _>(n_modes, 1.0, 0.0, &mut rng);
        let y = random_field::<f64, _>(n_modes, 1.0, 0.0, &mut rng);
        let hx = lyap.f_hessian_apply(&u, &x)?;
        hessian_norm.le(hx.norm(Space::Hminus1), 2.0 * x.norm(Space::Hminus1), ulps(x.norm(Space::Hminus1)));
        let hy = lyap.f_hessian_apply(&u, &y)?;
        let (xy, yx) = (hx.inner(&y, Space::Hminus1)?, hy.inner(&x, Space::Hminus1)?);
        symmetric.le((xy - yx).abs(), 0.0, ulps(1.0 + xy.abs()) * n_modes as f64);

        // derivative checks at ‖u‖₋₁ and ‖x‖₋₁ of order one
        if i % 10 == 0 {
            let g: f64 = StandardNormal.sample(&mut rng);
            let u1 = unit_hminus1(&u).scaled(1.0 + 0.5 * g.abs());
            let dir = unit_hminus1(&x);
            let at = |h: f64| {
                let mut w = u1.clone();
                w.axpy(h, &dir);
                lyap.f_value(&w)
            };
            let scale = a;
            let h1 = 1e-5;
            let fd1 = (at(h1) - at(-h1)) / (2.0 * h1);
            let an1 = lyap.f_gradient(&u1).inner(&dir, Space::Hminus1)?;
            gradient_fd.le((fd1 - an1).abs(), 0.0, DERIVATIVE_TOLERANCE * an1.abs().max(scale));
            let h2 = 1e-3;
            let fd2 = (at(h2) - 2.0 * at(0.0) + at(-h2)) / (h2 * h2);
            let an2 = lyap.f_hessian_apply(&u1, &dir)?.inner(&dir, Space::Hminus1)?;
            hessian_fd.le((fd2 - an2).abs(), 0.0, DERIVATIVE_TOLERANCE * an2.abs().max(scale));
        }
    }
    Ok(vec![
        holder_sqrt,
        holder,
        lipschitz,
        hessian_norm,
        symmetric,
        gradient_fd,
        hessian_fd,
        f_at_least_one,
    ])
}

pub fn write_opcheck_csv<W: Write>(outcomes: &[CheckOutcome], out: &mut W) -> std::io::Result<()> {
    writeln!(out, "# stefan-sim opcheck v1")?;
    writeln!(out, "suite,check,samples,violations,worst_margin,status")?;
    for c in outcomes {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            c.suite,
            c.name,
            c.samples,
            c.violations,
            c.worst_margin,
            if c.passed() { "PASS" } else { "FAIL" }
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_all_pass(outcomes: &[CheckOutcome]) {
        for c in outcomes {
            assert!(c.passed(), "{}::{} failed: {:?}", c.suite, c.name, c);
        }
    }

    #[test]
    fn enthalpy_checks_pass() {
        let p = EnthalpyParams::new(2.0, 1.0).unwrap();
        assert_all_pass(&enthalpy_suite(&p, 2000, 3).unwrap());
        let linear = EnthalpyParams::new(1.0, 0.0).unwrap();
        assert_all_pass(&enthalpy_suite(&linear, 500, 3).unwrap());
    }

    #[test]
    fn operator_checks_pass() {
        let ops = StefanOperators::with_modes(16, EnthalpyParams::new(2.0, 1.0).unwrap()).unwrap();
        for eps in [1e-2, 1e-1] {
            assert_all_pass(&yosida_suite(&ops, eps, 20, 5, OperatorSlack::default()).unwrap());
            assert_all_pass(&resolvent_suite(&ops, eps, 20, 5, OperatorSlack::default()).unwrap());
        }
    }

    #[test]
    fn lyapunov_checks_pass() {
        for a in [0.3, 0.5, 1.0] {
            assert_all_pass(&lyapunov_suite(&LyapunovParams::new(a).unwrap(), 8, 500, 7).unwrap());
        }
    }

    #[test]
    fn margins_record_violations() {
        let mut c = CheckOutcome::new("t", "t");
        c.le(1.0, 2.0, 0.0);
        assert!(c.passed());
        c.le(3.0, 2.0, 0.5);
        assert_eq!(c.violations, 1);
        assert_eq!(c.worst_margin, -0.5);
        c.le(f64::NAN, 1.0, 0.0);
        assert_eq!(c.violations, 2);
        assert!(!CheckOutcome::new("t", "empty").passed());
    }

    #[test]
    fn table_lists_every_check() {
        let outcomes = lyapunov_suite(&LyapunovParams::default(), 8, 20, 1).unwrap();
        let mut buf = Vec::new();
        write_opcheck_csv(&outcomes, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), outcomes.len() + 2);
        assert!(text.contains("lyapunov,lipschitz,20,0,"));
    }
}
