//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
//!
//! Run a subset with `cargo test -p stefan-sim --test acceptance -- 3 7`.

use std::f64::consts::PI;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use stefan_core::harness::{
    self, cesaro_bound, dyadic_levels, envelope_rows, random_field, terminal_bound, unit_hminus1, Functional,
    OccupationRequest, TailMeasure,
};
use stefan_core::levy::stream_rng;
use stefan_core::opcheck::{self, CheckOutcome, OperatorSlack};
use stefan_core::spectral::eigenvalue;
use stefan_core::{
    EnthalpyParams, Field, Integrator, LyapunovParams, NoiseSpec, NoiseStream, Operators, SchemeKind,
    Setup, SolverSettings,
};
use stefan_sim::{run_experiment, ExperimentKind, SimConfig};

const SEED: u64 = 20240611;

const ROUND_TRIP_TOL: f64 = 1e-14;
const ENTHALPY_PAIRS: usize = 100_000;
const OPERATOR_FIELDS: usize = 1000;
const OPERATOR_MODES: usize = 128;
const OPERATOR_SLACK: f64 = 1e-9;
const OPERATOR_SOLVER_TOL: f64 = 1e-10;
const LINEAR_MODES: usize = 64;
const LINEAR_REL_TOL: f64 = 1e-8;
const CONTRACTION_SLACK: f64 = 1e-9;
const COUPLING_RATE_FRACTION: f64 = 0.8;
const COUPLING_MIN_R2: f64 = 0.9;
const CAUCHY_SLOPE: (f64, f64) = (0.7, 1.3);
const LYAPUNOV_PAIRS: usize = 100_000;
const ENVELOPE_SE: f64 = 3.0;
const CESARO_SE: f64 = 3.0;
const HITTING_PATHS: usize = 10_000;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn stefan_params() -> EnthalpyParams<f64> {
    EnthalpyParams::new(2.0, 1.0).unwrap()
}

fn example3(n: usize) -> NoiseSpec {
    NoiseSpec::example3(NoiseSpec::power_weights(n, 1.0, 1.0)).unwrap()
}

fn setup(n: usize, scheme: SchemeKind, eps: f64, dt: f64, noise: NoiseSpec) -> Setup {
    Setup {
        integrator: Integrator::new(Operators::with_modes(n, stefan_params()).unwrap()),
        noise,
        scheme,
        eps,
        dt,
        seed: SEED,
        lyapunov: LyapunovParams::new(0.5).unwrap(),
    }
}

fn two_phase(n: usize) -> Field {
    Operators::with_modes(n, stefan_params())
        .unwrap()
        .basis()
        .sample(|x| 2.0 * (PI * x).sin() - 1.0)
        .unwrap()
}

fn summarize(rows: &[CheckOutcome]) -> Verdict {
    let failed: Vec<String> = rows
        .iter()
        .filter(|c| !c.passed())
        .map(|c| format!("{}::{} ({} violations, margin {:e})", c.suite, c.name, c.violations, c.worst_margin))
        .collect();
    let samples: usize = rows.iter().map(|c| c.samples).sum();
    if failed.is_empty() {
        verdict(true, format!("{} checks, {samples} samples, zero violations", rows.len()))
    } else {
        verdict(false, failed.join("; "))
    }
}

fn enthalpy_identities() -> Verdict {
    let p = EnthalpyParams::with_eps0(2.0, 1.0, 0.75).unwrap();
    let eps = 0.5;
    let branches = [(-1.0, -0.4), (0.25, 0.5), (2.0, 2.0)];
    let exact = branches.iter().all(|&(r, want)| p.beta_eps_inverse(r, eps).unwrap() == want);
    let mut rng = stream_rng(SEED, 10);
    let mut worst: f64 = 0.0;
    for _ in 0..ENTHALPY_PAIRS {
        let r: f64 = rng.random_range(-20.0..20.0);
        let y = p.beta_eps_inverse(r, eps).unwrap();
        let back = p.beta(y) + eps * y;
        worst = worst.max((back - r).abs() / r.abs().max(1.0));
    }
    verdict(
        exact && worst <= ROUND_TRIP_TOL,
        format!("branches exact: {exact}; worst round-trip error {worst:e}"),
    )
}

fn enthalpy_suite() -> Verdict {
    summarize(&opcheck::enthalpy_suite(&stefan_params(), ENTHALPY_PAIRS, SEED).unwrap())
}

fn operator_rows() -> Vec<CheckOutcome> {
    let settings = SolverSettings {
        tol: OPERATOR_SOLVER_TOL,
        ..SolverSettings::default()
    };
    let basis = std::sync::Arc::new(stefan_core::Basis::new(OPERATOR_MODES).unwrap());
    let ops = Operators::new(basis, stefan_params(), settings).unwrap();
    let slack = OperatorSlack {
        absolute: OPERATOR_SLACK,
        relative: OPERATOR_SLACK,
        ..OperatorSlack::default()
    };
    [1e-3, 1e-2, 1e-1]
        .iter()
        .flat_map(|&eps| opcheck::yosida_suite(&ops, eps, OPERATOR_FIELDS, SEED, slack).unwrap())
        .collect()
}

fn yosida_suite(rows: &[CheckOutcome]) -> Verdict {
    let contraction: Vec<CheckOutcome> = rows.iter().filter(|c| c.name != "coercivity").cloned().collect();
    summarize(&contraction)
}

fn coercivity(rows: &[CheckOutcome]) -> Verdict {
    let c: Vec<CheckOutcome> = rows.iter().filter(|c| c.name == "coercivity").cloned().collect();
    summarize(&c)
}

/// Relative per-mode error of `got` against `symbol(k) · x_k`.
fn per_mode_error(got: &Field, x: &Field, symbol: impl Fn(f64) -> f64) -> f64 {
    got.coeffs()
        .iter()
        .zip(x.coeffs())
        .enumerate()
        .map(|(i, (g, xk))| {
            let want = symbol(eigenvalue::<f64>(i + 1)) * xk;
            (g - want).abs() / want.abs().max(f64::MIN_POSITIVE)
        })
        .fold(0.0, f64::max)
}

fn linear_oracle() -> Verdict {
    let n = LINEAR_MODES;
    let params = EnthalpyParams::new(1.0, 0.0).unwrap();
    let settings = SolverSettings {
        tol: 1e-13,
        ..SolverSettings::default()
    };
    let ops = Operators::new(std::sync::Arc::new(stefan_core::Basis::new(n).unwrap()), params, settings).unwrap();
    let mut rng = stream_rng(SEED, 11);
    let mut worst: f64 = 0.0;
    let mut report = Vec::new();
    for eps in [1e-3, 1e-2, 0.1, 0.4] {
        let x = random_field::<f64, _>(n, 1.0, 0.0, &mut rng);
        let d = 1.0 + eps;
        let errs = [
            ("J", per_mode_error(&ops.resolvent_j(&x, eps).unwrap().value, &x, |l| 1.0 / (1.0 + eps * d * l))),
            ("Z", per_mode_error(&ops.apply_z(&x, eps).unwrap(), &x, |l| d / (1.0 + eps * d * l))),
            ("F", per_mode_error(&ops.apply_f(&x, eps).unwrap(), &x, |l| d * l / (1.0 + eps * d * l))),
            ("L", per_mode_error(&ops.resolvent_l(&x, eps).unwrap().value, &x, |l| 1.0 / (1.0 + eps * l))),
            ("A_eps", per_mode_error(&ops.apply_a_eps(&x, eps).unwrap(), &x, |l| l / (1.0 + eps * l))),
            ("A", per_mode_error(&ops.apply_a(&x).unwrap(), &x, |l| l)),
        ];
        for (name, e) in errs {
            worst = worst.max(e);
            if e > LINEAR_REL_TOL {
                report.push(format!("{name} at eps {eps}: {e:e}"));
            }
        }
    }

    // both integrators over 200 steps of Example 3 noise, against the
    // per-mode recursion applied to the same noise plans
    let integ = Integrator::new(ops);
    let noise = NoiseSpec::example3(NoiseSpec::power_weights(n, 1.0, 1.0)).unwrap();
    let (dt, eps) = (0.002, 0.05);
    let x0 = random_field::<f64, _>(n, 1.0, 1.0, &mut rng);
    for scheme in [SchemeKind::ApproxSemiImplicit, SchemeKind::LimitImplicitEuler] {
        let mut stream = NoiseStream::new(&noise, dt, SEED, 0).unwrap();
        let mut x = x0.clone();
        let mut oracle: Vec<f64> = x0.coeffs().to_vec();
        let advance = |c: &mut [f64], h: f64, xi: Option<&Field>| {
            for (i, v) in c.iter_mut().enumerate() {
                let l = eigenvalue::<f64>(i + 1);
                let add = xi.map_or(0.0, |f| f.coeffs()[i]);
                *v = match scheme {
                    SchemeKind::LimitImplicitEuler => (*v + add) / (1.0 + h * l),
                    _ => {
                        let f = (1.0 + eps) * l / (1.0 + eps * (1.0 + eps) * l);
                        (*v - h * f * *v + add) / (1.0 + h * eps * l)
                    }
                };
            }
        };
        for _ in 0..200 {
            let plan = stream.next_plan::<f64>();
            x = integ.step(scheme, &x, eps, &plan).unwrap();
            let mut t = plan.t_start;
            for e in &plan.big_events {
                if e.time > t {
                    advance(&mut oracle, e.time - t, None);
                    t = e.time;
                }
                oracle.iter_mut().zip(e.mark.coeffs()).for_each(|(o, m)| *o += m);
            }
            advance(&mut oracle, (plan.t_start + plan.dt - t).max(0.0), Some(&plan.small_increment));
        }
        let e = x
            .coeffs()
            .iter()
            .zip(&oracle)
            .map(|(g, w)| (g - w).abs() / w.abs().max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max);
        worst = worst.max(e);
        if e > LINEAR_REL_TOL {
            report.push(format!("{} integrator: {e:e}", scheme.name()));
        }
    }
    verdict(
        report.is_empty(),
        if report.is_empty() {
            format!("worst per-mode relative error {worst:e}")
        } else {
            report.join("; ")
        },
    )
}

fn random_pairs(n: usize, count: usize, scale: f64, stream: u64) -> Vec<(Field, Field)> {
    let mut rng = stream_rng(SEED, stream);
    (0..count)
        .map(|_| (random_field(n, scale, 1.0, &mut rng), random_field(n, scale, 1.0, &mut rng)))
        .collect()
}

fn discrete_contraction() -> Verdict {
    let s = setup(16, SchemeKind::LimitImplicitEuler, 0.0, 1e-3, example3(16));
    let rep = harness::coupling_report(&s, &random_pairs(16, 100, 2.0, 12), 10.0, 100, CONTRACTION_SLACK).unwrap();
    verdict(
        rep.violations == 0,
        format!("{} pairs, {} increases beyond slack", rep.n_pairs, rep.violations),
    )
}

fn exponential_coupling() -> Verdict {
    let eps = 0.05;
    let s = setup(16, SchemeKind::ApproxSemiImplicit, eps, 0.0125, example3(16));
    let rep = harness::coupling_report(&s, &random_pairs(16, 100, 2.0, 13), 50.0, 8, f64::INFINITY).unwrap();
    let Some(fit) = rep.fit else {
        return verdict(false, "no fit");
    };
    verdict(
        fit.slope >= COUPLING_RATE_FRACTION * 2.0 * eps && fit.r_squared >= COUPLING_MIN_R2,
        format!(
            "rate {:.3} (need >= {:.3}), R^2 {:.4}, fit until t = {}",
            fit.slope,
            COUPLING_RATE_FRACTION * 2.0 * eps,
            fit.r_squared,
            rep.fit_until
        ),
    )
}

fn cauchy_rate() -> Verdict {
    let noise = NoiseSpec::example3(NoiseSpec::power_weights(16, 0.5, 1.0)).unwrap();
    let s = setup(16, SchemeKind::SmallJumpOnly, 0.05, 0.003125, noise);
    let rep = harness::cauchy_rate(&s, &two_phase(16), &[0.1, 0.05, 0.025, 0.0125], 1.0, 200).unwrap();
    let Some(fit) = rep.fit else {
        return verdict(false, "no fit");
    };
    let sups: Vec<f64> = rep.a_priori.iter().map(|r| r.1).collect();
    let (lo, hi) = sups.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
    verdict(
        (CAUCHY_SLOPE.0..=CAUCHY_SLOPE.1).contains(&fit.slope) && hi <= 1.5 * lo,
        format!(
            "slope {:.3} (R^2 {:.3}); a-priori sup |Y|^2 in [{lo:.3}, {hi:.3}], Kendall tau {:.2}",
            fit.slope, fit.r_squared, rep.a_priori_trend.0
        ),
    )
}

fn lyapunov_suite() -> Verdict {
    summarize(&opcheck::lyapunov_suite(&LyapunovParams::new(0.5).unwrap(), 16, LYAPUNOV_PAIRS, SEED).unwrap())
}

/// Halving checks of the rows whose tail mass is at most one half.
fn envelope_failures(label: &str, stats: &harness::OccupationStats, alpha: f64) -> (usize, Vec<String>) {
    let mut checked = 0;
    let mut bad = Vec::new();
    for r in envelope_rows(stats, alpha) {
        if r.tail > 0.5 {
            continue;
        }
        if let Some(h) = r.halves {
            checked += 1;
            if !h {
                bad.push(format!("{label} halving at {}: {:.4} -> ratio {:?}", r.level, r.tail, r.ratio_to_next));
            }
        }
        if !r.within_moment_bound {
            bad.push(format!("{label} moment bound at {}", r.level));
        }
    }
    (checked, bad)
}

fn envelopes() -> Verdict {
    let alpha = 0.5;
    let s = setup(16, SchemeKind::ApproxSemiImplicit, 0.05, 0.0125, example3(16));
    let mut req = OccupationRequest::new(200.0, 50.0, 50);
    req.functionals = vec![Functional::HminusOneNorm];
    req.tail_levels = dyadic_levels(0.25, 8);
    let (occ, _) = harness::occupation(&s, &two_phase(16), &req).unwrap();
    let (n_occ, mut bad) = envelope_failures("occupation", &occ, alpha);

    let coarse = setup(16, SchemeKind::LimitImplicitEuler, 0.0, 0.01, example3(16));
    let fine = setup(32, SchemeKind::LimitImplicitEuler, 0.0, 0.01, example3(32));
    req.tail_measure = TailMeasure::BetaH1;
    req.tail_levels = dyadic_levels(0.5, 8);
    let support = harness::support_diagnostic(&coarse, &fine, |x| 2.0 * (PI * x).sin() - 1.0, &req).unwrap();
    let (n_c, b_c) = envelope_failures("support n=16", &support.coarse.stats, alpha);
    let (n_f, b_f) = envelope_failures("support n=32", &support.fine.stats, alpha);
    bad.extend(b_c);
    bad.extend(b_f);
    let checked = n_occ + n_c + n_f;
    verdict(
        bad.is_empty() && n_occ > 0 && n_c + n_f > 0,
        if bad.is_empty() {
            format!("{checked} halving checks ({n_occ} occupation, {} support) within {ENVELOPE_SE} SE", n_c + n_f)
        } else {
            bad.join("; ")
        },
    )
}

fn ergodic_uniqueness() -> Verdict {
    let eps = 0.05;
    let s = setup(16, SchemeKind::ApproxSemiImplicit, eps, 0.0125, example3(16));
    let basis = s.integrator.operators().basis().clone();
    let x_a = two_phase(16);
    let d = unit_hminus1(&basis.sample(|x| (3.0 * PI * x).sin() + 0.5 * x * (1.0 - x)).unwrap());
    let mut x_b = x_a.clone();
    x_b.axpy(1.0, &d);
    let functionals = Functional::default_set();
    let (t0, t1) = (100.0, 400.0);
    let rep = harness::cesaro_compare(&s, &x_a, &x_b, &functionals, &[t0, t1], 50).unwrap();
    let mut bad = Vec::new();
    for f in &functionals {
        let (early, late) = (rep.row(t0, *f).unwrap(), rep.row(t1, *f).unwrap());
        let combined = (early.std_error.powi(2) + late.std_error.powi(2)).sqrt();
        if late.difference.abs() > early.difference.abs() + CESARO_SE * combined {
            bad.push(format!("{} grew: {:e} -> {:e}", f.name(), early.difference, late.difference));
        }
        if let Some(l) = f.lipschitz_hminus1(&s.lyapunov) {
            let cb = cesaro_bound(l, eps, t1, rep.initial_distance);
            if late.difference.abs() > cb + CESARO_SE * late.std_error {
                bad.push(format!("{} Cesaro {:e} above {cb:e}", f.name(), late.difference));
            }
            let tb = terminal_bound(l, eps, t1, rep.initial_distance);
            if late.terminal_difference.abs() > tb + CESARO_SE * late.terminal_std_error {
                bad.push(format!("{} terminal {:e} above {tb:e}", f.name(), late.terminal_difference));
            }
        }
    }
    verdict(
        bad.is_empty(),
        if bad.is_empty() {
            format!(
                "{} functionals, |x_A - x_B|_-1 = {:.3}, differences shrink from T = {t0} to T = {t1}",
                functionals.len(),
                rep.initial_distance
            )
        } else {
            bad.join("; ")
        },
    )
}

fn irreducibility() -> Verdict {
    let s = setup(16, SchemeKind::LimitImplicitEuler, 0.0, 0.01, example3(16));
    let mut rng = stream_rng(SEED, 14);
    let mut lows = Vec::new();
    for _ in 0..5 {
        let x0 = random_field::<f64, _>(16, 1.0, 1.0, &mut rng);
        let x1 = random_field::<f64, _>(16, 0.2, 1.0, &mut rng);
        let est = harness::hitting_probability(&s, &x0, &x1, 0.1, 1.0, HITTING_PATHS).unwrap();
        lows.push(est.wilson.0);
    }
    verdict(
        lows.iter().all(|&l| l > 0.0),
        format!("Wilson lower bounds {:?}", lows.iter().map(|l| format!("{l:.3}")).collect::<Vec<_>>()),
    )
}

fn outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| {
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            let mut body = std::fs::read(&p).unwrap();
            if name == "manifest.txt" {
                let text = String::from_utf8(body).unwrap();
                body = text
                    .lines()
                    .filter(|l| !l.starts_with("wall_time_seconds"))
                    .collect::<Vec<_>>()
                    .join("\n")
                    .into_bytes();
            }
            (name, body)
        })
        .collect();
    v.sort();
    v
}

fn determinism() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let mut differing = Vec::new();
    for kind in ExperimentKind::ALL {
        let mut c = SimConfig::with_kind(kind);
        c.model.n_modes = 12;
        c.time.dt = 0.003125;
        c.time.horizon = 2.0;
        c.run.n_paths = 6;
        c.run.seed = SEED;
        c.experiment.opcheck_samples = 50;
        c.run.output_dir = tmp.path().join(kind.name());
        let mut runs = Vec::new();
        for _ in 0..2 {
            run_experiment(&c).unwrap();
            runs.push(outputs(&c.run.output_dir));
        }
        if runs[0] != runs[1] {
            differing.push(kind.name());
        }
    }
    verdict(
        differing.is_empty(),
        if differing.is_empty() {
            format!("{} experiment kinds rerun byte-identically", ExperimentKind::ALL.len())
        } else {
            format!("outputs differ for {differing:?}")
        },
    )
}

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let selected = |i: usize| wanted.is_empty() || wanted.contains(&i);
    let mut operator_cache: Option<Vec<CheckOutcome>> = None;
    let mut ops = || operator_cache.get_or_insert_with(operator_rows).clone();

    let mut failures = 0;
    for i in 1..=13 {
        if !selected(i) {
            continue;
        }
        let started = Instant::now();
        let (name, v) = match i {
            1 => ("enthalpy identities", enthalpy_identities()),
            2 => ("enthalpy inequalities", enthalpy_suite()),
            3 => ("regularized resolvent bounds and identities", yosida_suite(&ops())),
            4 => ("regularized operator coercivity", coercivity(&ops())),
            5 => ("linear enthalpy spectral oracle", linear_oracle()),
            6 => ("discrete contraction of the limit scheme", discrete_contraction()),
            7 => ("exponential coupling of the regularized scheme", exponential_coupling()),
            8 => ("Cauchy rate in eps", cauchy_rate()),
            9 => ("Lyapunov function inequalities", lyapunov_suite()),
            10 => ("moment and tightness envelopes", envelopes()),
            11 => ("ergodic uniqueness probe", ergodic_uniqueness()),
            12 => ("irreducibility probe", irreducibility()),
            _ => ("end-to-end determinism", determinism()),
        };
        if !v.pass {
            failures += 1;
        }
        println!(
            "{} criterion {i:>2} {name}: {} [{:.1} s]",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            started.elapsed().as_secs_f64()
        );
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
