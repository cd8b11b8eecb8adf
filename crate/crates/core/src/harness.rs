//! Monte Carlo estimators for the long-time behaviour: occupation measures,
//! Cesàro averages, coupling decay, hitting probabilities, the e-property and
//! the support of the invariant measure.
//!
//! Every path `p` draws its noise from stream `p` of the master seed. Paths
//! run in parallel and are merged in path order, so results do not depend on
//! the number of threads.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::integrator::{Integrator, RunSettings, SchemeKind};
use crate::levy::{stream_rng, NoiseSpec};
use crate::lyapunov::LyapunovParams;
use crate::scalar::Real;
use crate::spectral::{Space, SpectralField};
use crate::stats::{exponential_decay_fit, kendall_trend, linear_fit, wilson_interval, LinearFit, Welford};

/// Scalar observables `φ(X_t)` averaged by the estimators.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Functional {
    HminusOneNorm,
    L2NormCapped(f64),
    LyapunovF,
    LyapunovFCapped(f64),
    BetaH1Capped(f64),
}

impl Functional {
    /// `{‖·‖₋₁, |·|₂∧10, f, ‖β(·)‖₁∧10}`.
    pub fn default_set() -> Vec<Functional> {
        vec![
            Functional::HminusOneNorm,
            Functional::L2NormCapped(10.0),
            Functional::LyapunovF,
            Functional::BetaH1Capped(10.0),
        ]
    }

    pub fn name(&self) -> String {
        match self {
            Functional::HminusOneNorm => "hminus1_norm".into(),
            Functional::L2NormCapped(c) => format!("l2_norm_cap{c}"),
            Functional::LyapunovF => "lyapunov_f".into(),
            Functional::LyapunovFCapped(c) => format!("lyapunov_f_cap{c}"),
            Functional::BetaH1Capped(c) => format!("beta_h1_norm_cap{c}"),
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        let capped = |prefix: &str| name.strip_prefix(prefix).and_then(|c| c.parse::<f64>().ok());
        match name {
            "hminus1_norm" => Some(Functional::HminusOneNorm),
            "lyapunov_f" => Some(Functional::LyapunovF),
            _ => capped("l2_norm_cap")
                .map(Functional::L2NormCapped)
                .or_else(|| capped("lyapunov_f_cap").map(Functional::LyapunovFCapped))
                .or_else(|| capped("beta_h1_norm_cap").map(Functional::BetaH1Capped)),
        }
    }

    /// Lipschitz constant with respect to `‖·‖₋₁`, where one is known.
    pub fn lipschitz_hminus1(&self, lyap: &LyapunovParams) -> Option<f64> {
        match self {
            Functional::HminusOneNorm => Some(1.0),
            Functional::LyapunovF | Functional::LyapunovFCapped(_) => Some(lyap.alpha()),
            _ => None,
        }
    }

    pub fn eval<T: Real>(&self, x: &SpectralField<T>, integ: &Integrator<T>, lyap: &LyapunovParams) -> Result<f64> {
        Ok(match *self {
            Functional::HminusOneNorm => x.norm(Space::Hminus1).as_f64(),
            Functional::L2NormCapped(c) => x.norm(Space::L2).as_f64().min(c),
            Functional::LyapunovF => lyap.f_value(x).as_f64(),
            Functional::LyapunovFCapped(c) => lyap.f_value(x).as_f64().min(c),
            Functional::BetaH1Capped(c) => integ.operators().norm_a(x)?.as_f64().min(c),
        })
    }
}

/// Everything that defines the dynamics being sampled.
#[derive(Clone, Debug)]
pub struct Setup<T> {
    pub integrator: Integrator<T>,
    pub noise: NoiseSpec,
    pub scheme: SchemeKind,
    pub eps: f64,
    pub dt: f64,
    pub seed: u64,
    pub lyapunov: LyapunovParams,
}

impl<T: Real> Setup<T> {
    fn settings(&self, horizon: f64, path_id: u64) -> RunSettings {
        RunSettings::new(self.dt, horizon)
            .with_eps(self.eps)
            .with_seed(self.seed, path_id)
    }

    fn validate(&self) -> Result<()> {
        if self.noise.n_modes() != self.integrator.n_modes() {
            return Err(Error::DimensionMismatch {
                expected: self.integrator.n_modes(),
                found: self.noise.n_modes(),
            });
        }
        if self.scheme.uses_eps() {
            self.integrator.operators().params().check_eps(T::of(self.eps))?;
        }
        if !(self.dt > 0.0) {
            return Err(Error::out_of_range("dt", self.dt, "(0, inf)"));
        }
        Ok(())
    }

    /// Runs one path, calling `observe(step, t, x)` at `t = 0` and after every step.
    pub fn simulate(
        &self,
        initial: &SpectralField<T>,
        path_id: u64,
        horizon: f64,
        mut observe: impl FnMut(usize, f64, &SpectralField<T>) -> Result<()>,
    ) -> Result<()> {
        let settings = self.settings(horizon, path_id);
        let mut stream = settings.noise_stream(&self.noise)?;
        let dt = settings.effective_dt();
        let eps = T::of(self.eps);
        let mut x = initial.clone();
        observe(0, 0.0, &x)?;
        for step in 1..=settings.n_steps() {
            let plan = stream.next_plan::<T>();
            let t = step as f64 * dt;
            x = self
                .integrator
                .step(self.scheme, &x, eps, &plan)
                .and_then(|y| if y.is_finite() { Ok(y) } else { Err(Error::NonFinite("state")) })
                .map_err(|e| step_error(step, t, e))?;
            observe(step, t, &x)?;
        }
        Ok(())
    }

    /// Like [`Setup::simulate`] for two initial data under one noise path.
    pub fn simulate_pair(
        &self,
        initial: (&SpectralField<T>, &SpectralField<T>),
        path_id: u64,
        horizon: f64,
        mut observe: impl FnMut(usize, f64, &SpectralField<T>, &SpectralField<T>) -> Result<()>,
    ) -> Result<()> {
        let settings = self.settings(horizon, path_id);
        let mut stream = settings.noise_stream(&self.noise)?;
        let dt = settings.effective_dt();
        let eps = T::of(self.eps);
        let (mut x, mut y) = (initial.0.clone(), initial.1.clone());
        observe(0, 0.0, &x, &y)?;
        for step in 1..=settings.n_steps() {
            let plan = stream.next_plan::<T>();
            let t = step as f64 * dt;
            let wrap = |e| step_error(step, t, e);
            x = self.integrator.step(self.scheme, &x, eps, &plan).map_err(wrap)?;
            y = self.integrator.step(self.scheme, &y, eps, &plan).map_err(wrap)?;
            if !(x.is_finite() && y.is_finite()) {
                return Err(step_error(step, t, Error::NonFinite("state")));
            }
            observe(step, t, &x, &y)?;
        }
        Ok(())
    }
}

fn step_error(step: usize, time: f64, e: Error) -> Error {
    match e {
        e @ Error::StepFailed { .. } => e,
        e => Error::StepFailed {
            step,
            time,
            message: e.to_string(),
        },
    }
}

fn par_paths<R: Send>(n_paths: usize, f: impl Fn(u64) -> Result<R> + Sync + Send) -> Result<Vec<R>> {
    (0..n_paths as u64).into_par_iter().map(f).collect()
}

/// Random field with coefficients `scale · N(0,1) / k^decay`.
pub fn random_field<T: Real, R: Rng + ?Sized>(n: usize, scale: f64, decay: f64, rng: &mut R) -> SpectralField<T> {
    let c = (1..=n)
        .map(|k| {
            let g: f64 = StandardNormal.sample(rng);
            T::of(scale * g / (k as f64).powf(decay))
        })
        .collect();
    SpectralField::from_coeffs(c).expect("finite by construction")
}

/// `x` rescaled to unit `‖·‖₋₁` (zero stays zero).
pub fn unit_hminus1<T: Real>(x: &SpectralField<T>) -> SpectralField<T> {
    let n = x.norm(Space::Hminus1);
    if n > T::zero() {
        x.scaled(n.recip())
    } else {
        x.clone()
    }
}

/// Counts over `[e_i, e_{i+1})` plus an overflow bin `[e_last, ∞)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        if edges.is_empty() || edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidParameter("histogram edges must be strictly increasing".into()));
        }
        let counts = vec![0; edges.len()];
        Ok(Self { edges, counts })
    }

    pub fn push(&mut self, v: f64) {
        let i = self.edges.partition_point(|&e| e <= v).saturating_sub(1);
        self.counts[i] += 1;
    }

    pub fn mass(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn merge(&mut self, other: &Self) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }
}

/// Which scalar the tail masses refer to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TailMeasure {
    /// `|X|₂`, the radius of the balls `B_R`.
    L2Norm,
    /// `‖β(X)‖₁ = ‖AX‖₋₁`.
    BetaH1,
}

impl TailMeasure {
    fn eval<T: Real>(self, x: &SpectralField<T>, integ: &Integrator<T>) -> Result<f64> {
        Ok(match self {
            TailMeasure::L2Norm => x.norm(Space::L2).as_f64(),
            TailMeasure::BetaH1 => integ.operators().norm_a(x)?.as_f64(),
        })
    }
}

/// Streaming summary of the occupation measure over `(burn_in, T]`.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupationStats {
    pub functionals: Vec<Functional>,
    /// Per functional: per-path time averages, aggregated across paths.
    pub averages: Vec<Welford>,
    pub tail_measure: TailMeasure,
    pub tail_levels: Vec<f64>,
    /// Per level: per-path fraction of time above the level.
    pub tails: Vec<Welford>,
    /// Per-path time average of `(tail measure)^α`.
    pub moment: Welford,
    pub histogram: Histogram,
    pub sample_count: u64,
    pub horizon: f64,
    pub burn_in: f64,
    pub n_paths: usize,
}

/// Dyadic levels `start · 2^i`, `i < count`.
pub fn dyadic_levels(start: f64, count: usize) -> Vec<f64> {
    (0..count).map(|i| start * 2f64.powi(i as i32)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct OccupationRequest {
    pub functionals: Vec<Functional>,
    pub horizon: f64,
    pub burn_in: f64,
    pub n_paths: usize,
    pub tail_measure: TailMeasure,
    pub tail_levels: Vec<f64>,
    pub histogram_edges: Vec<f64>,
    /// Keep every post-burn-in value of the tail measure (for quantiles).
    pub keep_values: bool,
}

impl OccupationRequest {
    pub fn new(horizon: f64, burn_in: f64, n_paths: usize) -> Self {
        Self {
            functionals: Functional::default_set(),
            horizon,
            burn_in,
            n_paths,
            tail_measure: TailMeasure::L2Norm,
            tail_levels: dyadic_levels(0.25, 8),
            histogram_edges: (0..=20).map(|i| i as f64 * 0.5).collect(),
            keep_values: false,
        }
    }
}

struct PathOccupation {
    averages: Vec<f64>,
    tails: Vec<f64>,
    moment: f64,
    histogram: Histogram,
    samples: u64,
    values: Vec<f64>,
}

/// Time averages over `(burn_in, T]` from `initial`, plus tail masses and a histogram.
pub fn occupation<T: Real>(
    setup: &Setup<T>,
    initial: &SpectralField<T>,
    req: &OccupationRequest,
) -> Result<(OccupationStats, Vec<f64>)> {
    setup.validate()?;
    if !(req.burn_in >= 0.0 && req.burn_in < req.horizon) {
        return Err(Error::InvalidParameter(format!(
            "burn-in {} must lie in [0, T = {})",
            req.burn_in, req.horizon
        )));
    }
    if req.n_paths == 0 {
        return Err(Error::InvalidParameter("n_paths must be positive".into()));
    }
    let hist0 = Histogram::new(req.histogram_edges.clone())?;
    let alpha = setup.lyapunov.alpha();
    let per_path = par_paths(req.n_paths, |p| {
        let mut sums = vec![0.0; req.functionals.len()];
        let mut above = vec![0u64; req.tail_levels.len()];
        let mut moment = 0.0;
        let mut hist = hist0.clone();
        let mut samples = 0u64;
        let mut values = Vec::new();
        setup.simulate(initial, p, req.horizon, |_, t, x| {
            if t <= req.burn_in {
                return Ok(());
            }
            for (s, f) in sums.iter_mut().zip(&req.functionals) {
                *s += f.eval(x, &setup.integrator, &setup.lyapunov)?;
            }
            let m = req.tail_measure.eval(x, &setup.integrator)?;
            for (c, &r) in above.iter_mut().zip(&req.tail_levels) {
                if m > r {
                    *c += 1;
                }
            }
            moment += m.powf(alpha);
            hist.push(x.norm(Space::L2).as_f64());
            if req.keep_values {
                values.push(m);
            }
            samples += 1;
            Ok(())
        })?;
        let n = samples.max(1) as f64;
        Ok(PathOccupation {
            averages: sums.iter().map(|s| s / n).collect(),
            tails: above.iter().map(|&c| c as f64 / n).collect(),
            moment: moment / n,
            histogram: hist,
            samples,
            values,
        })
    })?;

    let mut stats = OccupationStats {
        functionals: req.functionals.clone(),
        averages: vec![Welford::new(); req.functionals.len()],
        tail_measure: req.tail_measure,
        tail_levels: req.tail_levels.clone(),
        tails: vec![Welford::new(); req.tail_levels.len()],
        moment: Welford::new(),
        histogram: hist0,
        sample_count: 0,
        horizon: req.horizon,
        burn_in: req.burn_in,
        n_paths: req.n_paths,
    };
    let mut values = Vec::new();
    for p in per_path {
        for (w, a) in stats.averages.iter_mut().zip(&p.averages) {
            w.push(*a);
        }
        for (w, a) in stats.tails.iter_mut().zip(&p.tails) {
            w.push(*a);
        }
        stats.moment.push(p.moment);
        stats.histogram.merge(&p.histogram);
        stats.sample_count += p.samples;
        values.extend(p.values);
    }
    Ok((stats, values))
}

/// One row of the tail-envelope comparison at level `R`.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvelopeRow {
    pub level: f64,
    pub tail: f64,
    pub tail_se: f64,
    /// `Ĉ R^{−α}` with `Ĉ` the occupation average of the `α`-th moment.
    pub moment_bound: f64,
    /// `tail(2R) / tail(R)` when the next level is on the grid.
    pub ratio_to_next: Option<f64>,
    /// `tail(R) ≤ Ĉ R^{−α} + 3 SE`.
    pub within_moment_bound: bool,
    /// `tail(2R) ≤ 2^{−α} tail(R) + 3 SE` (combined SE).
    pub halves: Option<bool>,
}

pub fn envelope_rows(stats: &OccupationStats, alpha: f64) -> Vec<EnvelopeRow> {
    let c = stats.moment.mean();
    let se = |w: &Welford| {
        let s = w.std_error();
        if s.is_nan() {
            0.0
        } else {
            s
        }
    };
    let levels = &stats.tail_levels;
    (0..levels.len())
        .map(|i| {
            let r = levels[i];
            let tail = stats.tails[i].mean();
            let tail_se = se(&stats.tails[i]);
            let bound = c * r.powf(-alpha);
            let next = levels
                .iter()
                .position(|&l| (l - 2.0 * r).abs() <= 1e-12 * r)
                .map(|j| (stats.tails[j].mean(), se(&stats.tails[j])));
            EnvelopeRow {
                level: r,
                tail,
                tail_se,
                moment_bound: bound,
                ratio_to_next: next.and_then(|(t2, _)| if tail > 0.0 { Some(t2 / tail) } else { None }),
                within_moment_bound: tail <= bound + 3.0 * tail_se,
                halves: next.map(|(t2, s2)| t2 <= 2f64.powf(-alpha) * tail + 3.0 * (tail_se.powi(2) + s2.powi(2)).sqrt()),
            }
        })
        .collect()
}

/// Cesàro-average differences from two initial data at one horizon.
#[derive(Clone, Debug, PartialEq)]
pub struct CesaroRow {
    pub horizon: f64,
    pub functional: Functional,
    /// Mean over paths of `avg_A − avg_B`.
    pub difference: f64,
    pub std_error: f64,
    /// Mean over paths of `φ(X_A(T)) − φ(X_B(T))`.
    pub terminal_difference: f64,
    pub terminal_std_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CesaroReport {
    pub rows: Vec<CesaroRow>,
    pub initial_distance: f64,
    pub n_paths: usize,
}

impl CesaroReport {
    pub fn row(&self, horizon: f64, functional: Functional) -> Option<&CesaroRow> {
        self.rows
            .iter()
            .find(|r| r.horizon == horizon && r.functional == functional)
    }
}

/// `α e^{−εT} ‖x_A − x_B‖₋₁`, the bound at time `T` for `α`-Lipschitz observables.
pub fn terminal_bound(alpha: f64, eps: f64, horizon: f64, distance: f64) -> f64 {
    alpha * (-eps * horizon).exp() * distance
}

/// The same bound integrated over `[0, T]` and divided by `T`.
pub fn cesaro_bound(alpha: f64, eps: f64, horizon: f64, distance: f64) -> f64 {
    if horizon == 0.0 {
        alpha * distance
    } else {
        alpha * (1.0 - (-eps * horizon).exp()) / (eps * horizon) * distance
    }
}

/// Cesàro averages `(1/T)∫₀ᵀ φ(X_t) dt` from `x_A` and `x_B` with shared noise,
/// evaluated at each checkpoint horizon of one run.
pub fn cesaro_compare<T: Real>(
    setup: &Setup<T>,
    x_a: &SpectralField<T>,
    x_b: &SpectralField<T>,
    functionals: &[Functional],
    checkpoints: &[f64],
    n_paths: usize,
) -> Result<CesaroReport> {
    setup.validate()?;
    if checkpoints.is_empty() || checkpoints.iter().any(|&c| !(c > 0.0)) || n_paths == 0 {
        return Err(Error::InvalidParameter("need positive checkpoints and paths".into()));
    }
    let horizon = checkpoints.iter().cloned().fold(0.0, f64::max);
    let dt = setup.settings(horizon, 0).effective_dt();
    let check_steps: Vec<usize> = checkpoints.iter().map(|c| (c / dt).round() as usize).collect();
    let nf = functionals.len();
    let per_path = par_paths(n_paths, |p| {
        let mut sums = vec![0.0; nf];
        // per checkpoint, per functional: (cesaro diff, terminal diff)
        let mut out = vec![vec![(0.0, 0.0); nf]; checkpoints.len()];
        setup.simulate_pair((x_a, x_b), p, horizon, |step, _, x, y| {
            if step == 0 {
                return Ok(());
            }
            let mut terminal = vec![0.0; nf];
            for (i, f) in functionals.iter().enumerate() {
                let d = f.eval(x, &setup.integrator, &setup.lyapunov)? - f.eval(y, &setup.integrator, &setup.lyapunov)?;
                sums[i] += d;
                terminal[i] = d;
            }
            for (c, &s) in check_steps.iter().enumerate() {
                if s == step {
                    for i in 0..nf {
                        out[c][i] = (sums[i] / step as f64, terminal[i]);
                    }
                }
            }
            Ok(())
        })?;
        Ok(out)
    })?;
    let mut rows = Vec::new();
    for (c, &h) in checkpoints.iter().enumerate() {
        for (i, f) in functionals.iter().enumerate() {
            let mut w = Welford::new();
            let mut wt = Welford::new();
            for p in &per_path {
                w.push(p[c][i].0);
                wt.push(p[c][i].1);
            }
            rows.push(CesaroRow {
                horizon: h,
                functional: *f,
                difference: w.mean(),
                std_error: nan_to_zero(w.std_error()),
                terminal_difference: wt.mean(),
                terminal_std_error: nan_to_zero(wt.std_error()),
            });
        }
    }
    Ok(CesaroReport {
        rows,
        initial_distance: (x_a - x_b).norm(Space::Hminus1).as_f64(),
        n_paths,
    })
}

fn nan_to_zero(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HittingEstimate {
    pub hits: u64,
    pub n_paths: u64,
    pub probability: f64,
    /// 95% Wilson interval.
    pub wilson: (f64, f64),
}

/// `P(‖X(t, x0) − x1‖₋₁ ≤ r)`.
pub fn hitting_probability<T: Real>(
    setup: &Setup<T>,
    x0: &SpectralField<T>,
    x1: &SpectralField<T>,
    r: f64,
    t: f64,
    n_paths: usize,
) -> Result<HittingEstimate> {
    setup.validate()?;
    if !(r > 0.0) || !(t >= 0.0) || n_paths == 0 {
        return Err(Error::InvalidParameter("need r > 0, t >= 0 and n_paths > 0".into()));
    }
    let hits = par_paths(n_paths, |p| {
        let mut last = x0.clone();
        setup.simulate(x0, p, t, |_, _, x| {
            last = x.clone();
            Ok(())
        })?;
        Ok(u64::from((&last - x1).norm(Space::Hminus1).as_f64() <= r))
    })?
    .into_iter()
    .sum::<u64>();
    let n = n_paths as u64;
    Ok(HittingEstimate {
        hits,
        n_paths: n,
        probability: hits as f64 / n as f64,
        wilson: wilson_interval(hits, n, 1.959_963_984_540_054),
    })
}

/// Distribution summary of `‖β(X_t)‖₁` over the stationary window at one resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct SupportSummary {
    pub n_modes: usize,
    pub mean: f64,
    pub quantiles: Vec<(f64, f64)>,
    pub stats: OccupationStats,
}

impl SupportSummary {
    pub fn quantile(&self, q: f64) -> Option<f64> {
        self.quantiles.iter().find(|(p, _)| *p == q).map(|(_, v)| *v)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SupportReport {
    pub coarse: SupportSummary,
    pub fine: SupportSummary,
    /// Fine over coarse, per reported quantile.
    pub quantile_ratios: Vec<(f64, f64)>,
}

pub const SUPPORT_QUANTILES: [f64; 5] = [0.1, 0.25, 0.5, 0.75, 0.9];

/// Empirical quantile by linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn support_summary<T: Real>(
    setup: &Setup<T>,
    initial: &SpectralField<T>,
    req: &OccupationRequest,
) -> Result<SupportSummary> {
    let mut req = req.clone();
    req.tail_measure = TailMeasure::BetaH1;
    req.keep_values = true;
    let (stats, mut values) = occupation(setup, initial, &req)?;
    values.sort_by(f64::total_cmp);
    let mean = values.iter().sum::<f64>() / values.len().max(1) as f64;
    Ok(SupportSummary {
        n_modes: setup.integrator.n_modes(),
        mean,
        quantiles: SUPPORT_QUANTILES.iter().map(|&q| (q, quantile(&values, q))).collect(),
        stats,
    })
}

/// `‖β(X_t)‖₁` statistics at two resolutions (initial data given as a profile).
pub fn support_diagnostic<T: Real>(
    coarse: &Setup<T>,
    fine: &Setup<T>,
    profile: impl Fn(f64) -> f64,
    req: &OccupationRequest,
) -> Result<SupportReport> {
    let x_c = coarse.integrator.operators().basis().sample(&profile)?;
    let x_f = fine.integrator.operators().basis().sample(&profile)?;
    let coarse = support_summary(coarse, &x_c, req)?;
    let fine = support_summary(fine, &x_f, req)?;
    let quantile_ratios = coarse
        .quantiles
        .iter()
        .zip(&fine.quantiles)
        .map(|((q, a), (_, b))| (*q, b / a))
        .collect();
    Ok(SupportReport {
        coarse,
        fine,
        quantile_ratios,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EPropertyRow {
    pub radius: f64,
    /// `max_{t, z} |P_tψ(x) − P_tψ(z)|` over the time grid and probe points.
    pub estimate: f64,
    pub std_error: f64,
    pub bound: f64,
    /// Running maximum of the estimates up to this radius.
    pub envelope: f64,
}

/// Probes `|P_tψ(x) − P_tψ(z)|` for `z = x + r d` along random unit `H⁻¹`
/// directions `d`, with shared noise for `x` and `z`.
#[allow(clippy::too_many_arguments)]
pub fn e_property_probe<T: Real>(
    setup: &Setup<T>,
    psi: Functional,
    lipschitz: f64,
    x: &SpectralField<T>,
    radii: &[f64],
    times: &[f64],
    n_directions: usize,
    n_paths: usize,
) -> Result<Vec<EPropertyRow>> {
    setup.validate()?;
    if times.is_empty() || times.iter().any(|&t| !(t > 0.0)) || n_paths == 0 || n_directions == 0 {
        return Err(Error::InvalidParameter("need positive times, paths and directions".into()));
    }
    let horizon = times.iter().cloned().fold(0.0, f64::max);
    let dt = setup.settings(horizon, 0).effective_dt();
    let steps: Vec<usize> = times.iter().map(|t| (t / dt).round() as usize).collect();
    let mut dir_rng = stream_rng(setup.seed ^ 0xe9_0e_47_1e, u64::MAX);
    let directions: Vec<SpectralField<T>> = (0..n_directions)
        .map(|_| unit_hminus1(&random_field::<T, _>(x.n_modes(), 1.0, 0.0, &mut dir_rng)))
        .collect();
    let mut rows = Vec::new();
    let mut envelope: f64 = 0.0;
    for &r in radii {
        let mut best = (0.0f64, 0.0f64);
        for d in &directions {
            let z = {
                let mut z = x.clone();
                z.axpy(T::of(r), d);
                z
            };
            let per_path = par_paths(n_paths, |p| {
                let mut diffs = vec![0.0; steps.len()];
                setup.simulate_pair((x, &z), p, horizon, |step, _, a, b| {
                    for (k, &s) in steps.iter().enumerate() {
                        if s == step {
                            diffs[k] = psi.eval(a, &setup.integrator, &setup.lyapunov)?
                                - psi.eval(b, &setup.integrator, &setup.lyapunov)?;
                        }
                    }
                    Ok(())
                })?;
                Ok(diffs)
            })?;
            for k in 0..steps.len() {
                let mut w = Welford::new();
                per_path.iter().for_each(|v| w.push(v[k]));
                let est = w.mean().abs();
                if est >= best.0 {
                    best = (est, nan_to_zero(w.std_error()));
                }
            }
        }
        envelope = envelope.max(best.0);
        rows.push(EPropertyRow {
            radius: r,
            estimate: best.0,
            std_error: best.1,
            bound: lipschitz * r,
            envelope,
        });
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CouplingReport {
    pub times: Vec<f64>,
    /// Mean over pairs of `‖X¹_t − X²_t‖₋₁²`.
    pub mean_sq_distance: Vec<f64>,
    pub std_error: Vec<f64>,
    /// Fit of `log(mean_sq_distance) ≈ c − rate·t` over the fit window.
    pub fit: Option<LinearFit>,
    /// Last time included in the fit.
    pub fit_until: f64,
    /// Steps (over all pairs) where the distance grew by more than the slack.
    pub violations: usize,
    pub slack: f64,
    pub n_pairs: usize,
}

/// Relative level below which squared distances are treated as rounding noise.
pub const COUPLING_FLOOR: f64 = 1e-20;

/// Shared-noise coupling of random initial pairs (one noise path per pair).
pub fn coupling_report<T: Real>(
    setup: &Setup<T>,
    pairs: &[(SpectralField<T>, SpectralField<T>)],
    horizon: f64,
    sample_stride: usize,
    slack: f64,
) -> Result<CouplingReport> {
    setup.validate()?;
    if pairs.is_empty() || sample_stride == 0 {
        return Err(Error::InvalidParameter("need pairs and a positive stride".into()));
    }
    let settings = setup.settings(horizon, 0);
    let n_steps = settings.n_steps();
    let dt = settings.effective_dt();
    let per_path = pairs
        .par_iter()
        .enumerate()
        .map(|(p, (a, b))| {
            let mut series = Vec::new();
            let mut last = f64::INFINITY;
            let mut violations = 0usize;
            setup.simulate_pair((a, b), p as u64, horizon, |step, _, x, y| {
                let d = (x - y).norm(Space::Hminus1).as_f64();
                if d > last + slack {
                    violations += 1;
                }
                last = d;
                if step % sample_stride == 0 || step == n_steps {
                    series.push(d * d);
                }
                Ok(())
            })?;
            Ok((series, violations))
        })
        .collect::<Result<Vec<_>>>()?;
    let n_samples = per_path[0].0.len();
    let times: Vec<f64> = (0..=n_steps)
        .filter(|s| s % sample_stride == 0 || *s == n_steps)
        .map(|s| s as f64 * dt)
        .collect();
    let mut mean = Vec::with_capacity(n_samples);
    let mut se = Vec::with_capacity(n_samples);
    for k in 0..n_samples {
        let mut w = Welford::new();
        per_path.iter().for_each(|(s, _)| w.push(s[k]));
        mean.push(w.mean());
        se.push(nan_to_zero(w.std_error()));
    }
    let floor = mean[0] * COUPLING_FLOOR;
    let cut = mean.iter().position(|&m| m <= floor).unwrap_or(mean.len());
    let fit = exponential_decay_fit(&times[..cut], &mean[..cut]);
    Ok(CouplingReport {
        fit_until: times[cut.max(1) - 1],
        times,
        mean_sq_distance: mean,
        std_error: se,
        fit,
        violations: per_path.iter().map(|(_, v)| v).sum(),
        slack,
        n_pairs: pairs.len(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CauchyRow {
    pub eps: f64,
    pub lambda: f64,
    /// Mean over paths of `sup_t ‖Y_ε − Y_λ‖₋₁²`.
    pub mean_sup_distance_sq: f64,
    pub std_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CauchyReport {
    pub rows: Vec<CauchyRow>,
    /// Slope of `log mean_sup_distance_sq` against `log(ε + λ)` over
    /// neighbouring grid values `(ε_i, ε_{i+1})`.
    pub fit: Option<LinearFit>,
    /// Per `ε`: mean over paths of `sup_t |Y_ε|₂²` and its standard error.
    pub a_priori: Vec<(f64, f64, f64)>,
    /// Kendall trend of the a-priori means along the ε grid: `(tau, p-value)`.
    pub a_priori_trend: (f64, f64),
    pub n_paths: usize,
}

/// Runs the small-jump equation for every `ε` of the grid in lockstep on the
/// same noise path and records the pairwise sup-distances.
pub fn cauchy_rate<T: Real>(
    setup: &Setup<T>,
    initial: &SpectralField<T>,
    eps_grid: &[f64],
    horizon: f64,
    n_paths: usize,
) -> Result<CauchyReport> {
    if eps_grid.len() < 2 || n_paths == 0 {
        return Err(Error::InvalidParameter("need two eps values and at least one path".into()));
    }
    let params = setup.integrator.operators().params();
    for &e in eps_grid {
        params.check_eps(T::of(e))?;
    }
    let m = eps_grid.len();
    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|i| ((i + 1)..m).map(move |j| (i, j))).collect();
    let per_path = par_paths(n_paths, |p| {
        let settings = setup.settings(horizon, p);
        let mut stream = settings.noise_stream(&setup.noise)?;
        let dt = settings.effective_dt();
        let mut states = vec![initial.clone(); m];
        let mut sup_pair = vec![0.0f64; pairs.len()];
        let mut sup_l2 = vec![initial.norm_sq(Space::L2).as_f64(); m];
        for step in 1..=settings.n_steps() {
            let plan = stream.next_plan::<T>();
            for (s, &e) in states.iter_mut().zip(eps_grid) {
                *s = setup
                    .integrator
                    .step(SchemeKind::SmallJumpOnly, s, T::of(e), &plan)
                    .map_err(|err| step_error(step, step as f64 * dt, err))?;
            }
            for (v, &(i, j)) in sup_pair.iter_mut().zip(&pairs) {
                *v = v.max((&states[i] - &states[j]).norm_sq(Space::Hminus1).as_f64());
            }
            for (v, s) in sup_l2.iter_mut().zip(&states) {
                *v = v.max(s.norm_sq(Space::L2).as_f64());
            }
        }
        Ok((sup_pair, sup_l2))
    })?;
    let rows: Vec<CauchyRow> = pairs
        .iter()
        .enumerate()
        .map(|(k, &(i, j))| {
            let mut w = Welford::new();
            per_path.iter().for_each(|(s, _)| w.push(s[k]));
            CauchyRow {
                eps: eps_grid[i],
                lambda: eps_grid[j],
                mean_sup_distance_sq: w.mean(),
                std_error: nan_to_zero(w.std_error()),
            }
        })
        .collect();
    // Non-neighbouring pairs mix in the |ε − λ| dependence of the distance.
    let (lx, ly): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .zip(&pairs)
        .filter(|(r, &(i, j))| j == i + 1 && r.mean_sup_distance_sq > 0.0)
        .map(|(r, _)| r)
        .map(|r| ((r.eps + r.lambda).ln(), r.mean_sup_distance_sq.ln()))
        .unzip();
    let a_priori: Vec<(f64, f64, f64)> = (0..m)
        .map(|i| {
            let mut w = Welford::new();
            per_path.iter().for_each(|(_, s)| w.push(s[i]));
            (eps_grid[i], w.mean(), nan_to_zero(w.std_error()))
        })
        .collect();
    let trend = kendall_trend(&a_priori.iter().map(|a| a.1).collect::<Vec<_>>());
    Ok(CauchyReport {
        rows,
        fit: linear_fit(&lx, &ly),
        a_priori,
        a_priori_trend: trend,
        n_paths,
    })
}

pub fn write_occupation_csv<W: Write>(stats: &OccupationStats, alpha: f64, out: &mut W) -> std::io::Result<()> {
    writeln!(out, "# stefan-sim occupation v1")?;
    writeln!(out, "section,name,value,std_error,extra")?;
    for (f, w) in stats.functionals.iter().zip(&stats.averages) {
        writeln!(out, "average,{},{},{},", f.name(), w.mean(), nan_to_zero(w.std_error()))?;
    }
    for row in envelope_rows(stats, alpha) {
        writeln!(
            out,
            "tail,{},{},{},{}",
            row.level, row.tail, row.tail_se, row.moment_bound
        )?;
    }
    let edges = &stats.histogram.edges;
    for (i, c) in stats.histogram.counts.iter().enumerate() {
        let hi = edges.get(i + 1).map_or("inf".to_string(), |e| e.to_string());
        writeln!(out, "histogram,{},{},,{}", edges[i], c, hi)?;
    }
    writeln!(out, "meta,sample_count,{},,", stats.sample_count)?;
    writeln!(out, "meta,n_paths,{},,", stats.n_paths)?;
    Ok(())
}

pub fn write_cesaro_csv<W: Write>(rep: &CesaroReport, out: &mut W) -> std::io::Result<()> {
    writeln!(out, "# stefan-sim cesaro v1")?;
    writeln!(out, "horizon,functional,difference,std_error,terminal_difference,terminal_std_error")?;
    for r in &rep.rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.horizon,
            r.functional.name(),
            r.difference,
            r.std_error,
            r.terminal_difference,
            r.terminal_std_error
        )?;
    }
    Ok(())
}

pub fn write_coupling_csv<W: Write>(rep: &CouplingReport, out: &mut W) -> std::io::Result<()> {
    writeln!(out, "# stefan-sim coupling v1")?;
    writeln!(out, "time,mean_sq_distance,std_error")?;
    for i in 0..rep.times.len() {
        writeln!(out, "{},{},{}", rep.times[i], rep.mean_sq_distance[i], rep.std_error[i])?;
    }
    Ok(())
}

pub fn write_cauchy_csv<W: Write>(rep: &CauchyReport, out: &mut W) -> std::io::Result<()> {
    writeln!(out, "# stefan-sim cauchy_rate v1")?;
    writeln!(out, "eps,lambda,mean_sup_distance_sq,std_error")?;
    for r in &rep.rows {
        writeln!(out, "{},{},{},{}", r.eps, r.lambda, r.mean_sup_distance_sq, r.std_error)?;
    }
    if let Some(f) = rep.fit {
        writeln!(out, "# slope {} r_squared {}", f.slope, f.r_squared)?;
    }
    Ok(())
}

pub fn write_support_csv<W: Write>(rep: &SupportReport, out: &mut W) -> std::io::Result<()> {
    writeln!(out, "# stefan-sim support v1")?;
    writeln!(out, "n_modes,statistic,level,value,std_error")?;
    for s in [&rep.coarse, &rep.fine] {
        writeln!(out, "{},mean,,{},", s.n_modes, s.mean)?;
        for (q, v) in &s.quantiles {
            writeln!(out, "{},quantile,{},{},", s.n_modes, q, v)?;
        }
        for (m, w) in s.stats.tail_levels.iter().zip(&s.stats.tails) {
            writeln!(out, "{},tail,{},{},{}", s.n_modes, m, w.mean(), nan_to_zero(w.std_error()))?;
        }
    }
    for (q, r) in &rep.quantile_ratios {
        writeln!(out, "ratio,quantile,{q},{r},")?;
    }
    Ok(())
}

pub fn write_eproperty_csv<W: Write>(rows: &[EPropertyRow], out: &mut W) -> std::io::Result<()> {
    writeln!(out, "# stefan-sim eproperty v1")?;
    writeln!(out, "radius,estimate,std_error,bound,envelope")?;
    for r in rows {
        writeln!(out, "{},{},{},{},{}", r.radius, r.estimate, r.std_error, r.bound, r.envelope)?;
    }
    Ok(())
}

pub fn write_hitting_csv<W: Write>(h: &HittingEstimate, out: &mut W) -> std::io::Result<()> {
    writeln!(out, "# stefan-sim hitting v1")?;
    writeln!(out, "hits,n_paths,probability,wilson_low,wilson_high")?;
    writeln!(out, "{},{},{},{},{}", h.hits, h.n_paths, h.probability, h.wilson.0, h.wilson.1)
}
