use proptest::prelude::*;
use stefan_core::harness::random_field;
use stefan_core::levy::stream_rng;
use stefan_core::{EnthalpyParams, Field, LyapunovParams, Operators, Space};

const N: usize = 16;

fn ops() -> Operators {
    Operators::with_modes(N, EnthalpyParams::new(2.0, 1.0).unwrap()).unwrap()
}

fn fields(seed: u64, scale: f64) -> (Field, Field) {
    let mut rng = stream_rng(seed, 0);
    (random_field(N, scale, 0.5, &mut rng), random_field(N, scale, 0.5, &mut rng))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn resolvent_j_contracts(seed in any::<u64>(), scale in 0.1f64..10.0, eps in 1e-3f64..0.49) {
        let ops = ops();
        let (x, y) = fields(seed, scale);
        let jx = ops.resolvent_j(&x, eps).unwrap().value;
        let jy = ops.resolvent_j(&y, eps).unwrap().value;
        prop_assert!(jx.norm(Space::Hminus1) <= x.norm(Space::Hminus1) + 1e-9);
        prop_assert!(jx.norm(Space::L2) <= x.norm(Space::L2) + 1e-9);
        prop_assert!((&jx - &jy).norm(Space::Hminus1) <= (&x - &y).norm(Space::Hminus1) + 1e-9);
        prop_assert!((&jx - &jy).norm(Space::L2) <= 2.0 / eps * (&x - &y).norm(Space::L2) + 1e-9);
    }

    #[test]
    fn yosida_identity_and_coercivity(seed in any::<u64>(), scale in 0.1f64..10.0, eps in 1e-3f64..0.49) {
        let ops = ops();
        let params = *ops.params();
        let (x, _) = fields(seed, scale);
        let t = ops.yosida_triple(&x, eps).unwrap();
        // x = J x + ε F x, and F x = −Δ Z x
        let mut back = t.j.clone();
        back.axpy(eps, &t.f);
        prop_assert!((&back - &x).norm(Space::Hminus1) <= 1e-9 * (1.0 + x.norm(Space::Hminus1)));
        let fx = t.f.inner(&x, Space::L2).unwrap();
        let lower = params.gamma() * t.z.norm_sq(Space::H1) + eps * t.f.norm_sq(Space::L2);
        prop_assert!(fx + 1e-9 * (1.0 + fx.abs()) >= lower);
    }

    #[test]
    fn resolvent_l_is_nonexpansive(seed in any::<u64>(), scale in 0.1f64..10.0, h in 1e-3f64..1.0) {
        let ops = ops();
        let (x, y) = fields(seed, scale);
        let lx = ops.resolvent_l(&x, h).unwrap().value;
        let ly = ops.resolvent_l(&y, h).unwrap().value;
        prop_assert!((&lx - &ly).norm(Space::Hminus1) <= (&x - &y).norm(Space::Hminus1) + 1e-9);
    }

    #[test]
    fn lyapunov_function_is_holder_and_lipschitz(seed in any::<u64>(), scale in 0.01f64..100.0, alpha in 0.05f64..=1.0) {
        let lyap = LyapunovParams::new(alpha).unwrap();
        let (u, v) = fields(seed, scale);
        let d = (&u - &v).norm(Space::Hminus1);
        let (fu, fv) = (lyap.f_value(&u), lyap.f_value(&v));
        prop_assert!(fu >= 1.0 && fv >= 1.0);
        let su = (1.0 + u.norm_sq(Space::Hminus1)).sqrt();
        let sv = (1.0 + v.norm_sq(Space::Hminus1)).sqrt();
        let slack = 1e-12 * (1.0 + fu.max(fv));
        prop_assert!((fu - fv).abs() <= (su - sv).abs().powf(alpha) + slack);
        prop_assert!((su - sv).abs() <= d * (1.0 + 1e-12) + 1e-15);
        prop_assert!((fu - fv).abs() <= alpha * d + slack);
    }

    #[test]
    fn lyapunov_hessian_is_bounded_and_symmetric(seed in any::<u64>(), scale in 0.01f64..100.0, alpha in 0.05f64..=1.0) {
        let lyap = LyapunovParams::new(alpha).unwrap();
        let (u, x) = fields(seed, scale);
        let y = fields(seed ^ 1, 1.0).0;
        let hx = lyap.f_hessian_apply(&u, &x).unwrap();
        let hy = lyap.f_hessian_apply(&u, &y).unwrap();
        prop_assert!(hx.norm(Space::Hminus1) <= 2.0 * x.norm(Space::Hminus1) * (1.0 + 1e-12));
        let a = hx.inner(&y, Space::Hminus1).unwrap();
        let b = hy.inner(&x, Space::Hminus1).unwrap();
        prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()));
        // the gradient is a nonnegative multiple of u
        let g = lyap.f_gradient(&u);
        let c = g.inner(&u, Space::Hminus1).unwrap();
        prop_assert!(c >= 0.0);
        prop_assert!((c * c - g.norm_sq(Space::Hminus1) * u.norm_sq(Space::Hminus1)).abs() <= 1e-9 * c * c + 1e-300);
    }

    #[test]
    fn norms_are_ordered_on_the_sine_basis(seed in any::<u64>(), scale in 0.01f64..100.0) {
        // λ_k ≥ π² gives ‖x‖₋₁ ≤ |x|₂/π ≤ ‖x‖₁/π²
        let (x, _) = fields(seed, scale);
        let pi2 = std::f64::consts::PI.powi(2);
        prop_assert!(x.norm(Space::Hminus1) * pi2.sqrt() <= x.norm(Space::L2) * (1.0 + 1e-12));
        prop_assert!(x.norm(Space::L2) * pi2.sqrt() <= x.norm(Space::H1) * (1.0 + 1e-12));
    }
}
