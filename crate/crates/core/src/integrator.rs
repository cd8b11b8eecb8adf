//! Time stepping for the regularized equation and the limit equation.
//!
//! Each step of length `dt` is split at the arrival times of the big jumps in
//! its plan: the deterministic flow runs up to an arrival, the mark is added,
//! and the flow restarts. The aggregated small-jump increment enters the last
//! sub-step.

use std::io::Write;

use crate::error::{Error, Result};
use crate::levy::{NoiseIncrementPlan, NoiseSpec, NoiseStream};
use crate::operators::StefanOperators;
use crate::scalar::Real;
use crate::spectral::{eigenvalue, Space, SpectralField};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SchemeKind {
    /// `dX = εΔX dt − F_ε X dt + dL`: `εΔ` implicit, `F_ε` explicit.
    ApproxSemiImplicit,
    /// `dX = −AX dt + dL` by implicit Euler, one resolvent `L_dt` per step.
    LimitImplicitEuler,
    /// The regularized equation driven by the small jumps only.
    SmallJumpOnly,
}

impl SchemeKind {
    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::ApproxSemiImplicit => "approx",
            SchemeKind::LimitImplicitEuler => "limit",
            SchemeKind::SmallJumpOnly => "small_only",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "approx" => Some(SchemeKind::ApproxSemiImplicit),
            "limit" => Some(SchemeKind::LimitImplicitEuler),
            "small_only" => Some(SchemeKind::SmallJumpOnly),
            _ => None,
        }
    }

    /// Whether the scheme needs a regularization parameter `ε`.
    pub fn uses_eps(self) -> bool {
        !matches!(self, SchemeKind::LimitImplicitEuler)
    }

    /// Big jumps with `|mark|₂` above this cap are dropped.
    pub fn mark_cap(self) -> f64 {
        match self {
            SchemeKind::SmallJumpOnly => crate::levy::SMALL_JUMP_CUTOFF,
            _ => f64::INFINITY,
        }
    }
}

/// Steppers for one resolution and parameter set.
#[derive(Clone, Debug)]
pub struct Integrator<T> {
    ops: StefanOperators<T>,
}

impl<T: Real> Integrator<T> {
    pub fn new(ops: StefanOperators<T>) -> Self {
        Self { ops }
    }

    pub fn operators(&self) -> &StefanOperators<T> {
        &self.ops
    }

    pub fn n_modes(&self) -> usize {
        self.ops.n_modes()
    }

    /// Deterministic sub-step of length `h`, with an optional additive increment.
    ///
    /// Regularized schemes: `(I + hε(−Δ))⁻¹[x − hF_ε x + ξ]`. Limit scheme:
    /// `L_h(x + ξ)`.
    pub fn advance(
        &self,
        scheme: SchemeKind,
        state: &SpectralField<T>,
        h: T,
        eps: T,
        increment: Option<&SpectralField<T>>,
    ) -> Result<SpectralField<T>> {
        if !(h >= T::zero()) || !h.is_finite() {
            return Err(Error::out_of_range("sub-step", h.as_f64(), "[0, inf)"));
        }
        if h == T::zero() {
            let mut x = state.clone();
            if let Some(xi) = increment {
                x += xi;
            }
            return Ok(x);
        }
        match scheme {
            SchemeKind::ApproxSemiImplicit | SchemeKind::SmallJumpOnly => {
                let f = self.ops.yosida_triple(state, eps)?.f;
                let mut rhs = state.clone();
                rhs.axpy(-h, &f);
                if let Some(xi) = increment {
                    rhs += xi;
                }
                let he = h * eps;
                Ok(rhs.map_modes(|k, c| c / (T::one() + he * eigenvalue::<T>(k))))
            }
            SchemeKind::LimitImplicitEuler => {
                let mut y = state.clone();
                if let Some(xi) = increment {
                    y += xi;
                }
                self.ops.resolvent_l(&y, h)?.into_converged("resolvent L_eps")
            }
        }
    }

    /// One step of the regularized scheme with all big jumps interlaced.
    pub fn step_approx(&self, state: &SpectralField<T>, eps: T, plan: &NoiseIncrementPlan<T>) -> Result<SpectralField<T>> {
        self.step(SchemeKind::ApproxSemiImplicit, state, eps, plan)
    }

    /// One implicit Euler step of the limit equation with all big jumps interlaced.
    pub fn step_limit(&self, state: &SpectralField<T>, plan: &NoiseIncrementPlan<T>) -> Result<SpectralField<T>> {
        self.step(SchemeKind::LimitImplicitEuler, state, T::zero(), plan)
    }

    pub fn step(
        &self,
        scheme: SchemeKind,
        state: &SpectralField<T>,
        eps: T,
        plan: &NoiseIncrementPlan<T>,
    ) -> Result<SpectralField<T>> {
        self.step_capped(scheme, state, eps, plan, scheme.mark_cap())
    }

    /// Like [`Integrator::step`], keeping only big jumps with `|mark|₂ ≤ cap`.
    pub fn step_capped(
        &self,
        scheme: SchemeKind,
        state: &SpectralField<T>,
        eps: T,
        plan: &NoiseIncrementPlan<T>,
        cap: f64,
    ) -> Result<SpectralField<T>> {
        if state.n_modes() != self.n_modes() {
            return Err(Error::DimensionMismatch {
                expected: self.n_modes(),
                found: state.n_modes(),
            });
        }
        let end = plan.t_start + plan.dt;
        let mut t = plan.t_start;
        let mut x = state.clone();
        // ties keep plan order
        for e in plan.big_events.iter().filter(|e| e.mark.norm(Space::L2).as_f64() <= cap) {
            let h = e.time - t;
            if h > 0.0 {
                x = self.advance(scheme, &x, T::of(h), eps, None)?;
                t = e.time;
            }
            x += &e.mark;
        }
        self.advance(scheme, &x, T::of((end - t).max(0.0)), eps, Some(&plan.small_increment))
    }
}

/// Time grid, seeds and what to record for [`run`].
#[derive(Clone, Debug, PartialEq)]
pub struct RunSettings {
    pub dt: f64,
    pub horizon: f64,
    /// Regularization `ε`; ignored by the limit scheme.
    pub eps: f64,
    pub seed: u64,
    pub path_id: u64,
    /// Record every `sample_stride` steps (the final time is always recorded).
    pub sample_stride: usize,
    pub snapshot_stride: Option<usize>,
    /// Also record `‖X‖₁`, `‖Z_ε X‖₁`, `|F_ε X|₂` (regularized schemes only).
    pub record_drift: bool,
    /// Levels `M` whose first exceedance `τ_M` is tracked.
    pub tau_levels: Vec<f64>,
}

impl RunSettings {
    pub fn new(dt: f64, horizon: f64) -> Self {
        Self {
            dt,
            horizon,
            eps: 0.0,
            seed: 0,
            path_id: 0,
            sample_stride: 1,
            snapshot_stride: None,
            record_drift: false,
            tau_levels: Vec::new(),
        }
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    pub fn with_seed(mut self, seed: u64, path_id: u64) -> Self {
        self.seed = seed;
        self.path_id = path_id;
        self
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.sample_stride = stride;
        self
    }

    /// Number of steps; the step is shrunk so that they tile `[0, horizon]`.
    pub fn n_steps(&self) -> usize {
        if self.horizon == 0.0 {
            0
        } else {
            ((self.horizon / self.dt - 1e-9).ceil() as usize).max(1)
        }
    }

    pub fn effective_dt(&self) -> f64 {
        match self.n_steps() {
            0 => self.dt,
            n => self.horizon / n as f64,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::out_of_range("dt", self.dt, "(0, inf)"));
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(Error::out_of_range("horizon", self.horizon, "[0, inf)"));
        }
        if self.sample_stride == 0 || self.snapshot_stride == Some(0) {
            return Err(Error::InvalidParameter("strides must be positive".into()));
        }
        Ok(())
    }

    /// Opens the noise stream for this path.
    pub fn noise_stream(&self, noise: &NoiseSpec) -> Result<NoiseStream> {
        NoiseStream::new(noise, self.effective_dt(), self.seed, self.path_id)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub time: f64,
    pub grid: Vec<f64>,
}

/// Per-sample quantities needed by the drift diagnostics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DriftSample {
    pub l2: f64,
    pub hminus1: f64,
    pub h1: f64,
    pub z_h1: f64,
    pub f_l2: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunFailure {
    pub step: usize,
    pub time: f64,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub scheme: SchemeKind,
    pub eps: f64,
    pub dt: f64,
    pub n_modes: usize,
    pub times: Vec<f64>,
    pub l2: Vec<f64>,
    pub hminus1: Vec<f64>,
    pub h1_beta: Vec<f64>,
    /// Cumulative number of realized jumps (small and applied big).
    pub jump_count: Vec<u64>,
    pub snapshots: Vec<Snapshot>,
    pub drift: Vec<DriftSample>,
    /// `(M, τ_M)`: first time a big jump with `|z|₂ > M` arrived, if any.
    pub first_exceedance: Vec<(f64, Option<f64>)>,
    pub failure: Option<RunFailure>,
}

impl TrajectoryRecord {
    fn empty(scheme: SchemeKind, settings: &RunSettings, n_modes: usize) -> Self {
        Self {
            scheme,
            eps: settings.eps,
            dt: settings.effective_dt(),
            n_modes,
            times: Vec::new(),
            l2: Vec::new(),
            hminus1: Vec::new(),
            h1_beta: Vec::new(),
            jump_count: Vec::new(),
            snapshots: Vec::new(),
            drift: Vec::new(),
            first_exceedance: settings.tau_levels.iter().map(|&m| (m, None)).collect(),
            failure: None,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Turns a recorded failure into an error.
    pub fn into_result(self) -> Result<Self> {
        match self.failure {
            Some(f) => Err(Error::StepFailed {
                step: f.step,
                time: f.time,
                message: f.message,
            }),
            None => Ok(self),
        }
    }
}

struct Recorder<'a, T> {
    integ: &'a Integrator<T>,
    scheme: SchemeKind,
    settings: &'a RunSettings,
    eps: T,
}

impl<T: Real> Recorder<'_, T> {
    fn sample(&self, rec: &mut TrajectoryRecord, step: usize, t: f64, x: &SpectralField<T>, jumps: u64) -> Result<()> {
        let ops = &self.integ.ops;
        rec.times.push(t);
        rec.l2.push(x.norm(Space::L2).as_f64());
        rec.hminus1.push(x.norm(Space::Hminus1).as_f64());
        rec.h1_beta.push(ops.norm_a(x)?.as_f64());
        rec.jump_count.push(jumps);
        if let Some(s) = self.settings.snapshot_stride {
            if step.is_multiple_of(s) {
                let grid = ops.basis().to_grid(x)?.into_iter().map(|v| v.as_f64()).collect();
                rec.snapshots.push(Snapshot { time: t, grid });
            }
        }
        if self.settings.record_drift {
            let tr = ops.yosida_triple(x, self.eps)?;
            rec.drift.push(DriftSample {
                l2: x.norm(Space::L2).as_f64(),
                hminus1: x.norm(Space::Hminus1).as_f64(),
                h1: x.norm(Space::H1).as_f64(),
                z_h1: tr.z.norm(Space::H1).as_f64(),
                f_l2: tr.f.norm(Space::L2).as_f64(),
            });
        }
        Ok(())
    }
}

fn check_run(integ_n: usize, initial: &SpectralField<impl Real>, noise: &NoiseSpec, scheme: SchemeKind, settings: &RunSettings) -> Result<()> {
    settings.validate()?;
    if initial.n_modes() != integ_n {
        return Err(Error::DimensionMismatch {
            expected: integ_n,
            found: initial.n_modes(),
        });
    }
    if noise.n_modes() != integ_n {
        return Err(Error::DimensionMismatch {
            expected: integ_n,
            found: noise.n_modes(),
        });
    }
    if settings.record_drift && !scheme.uses_eps() {
        return Err(Error::InvalidParameter("drift diagnostics need a regularized scheme".into()));
    }
    Ok(())
}

fn failure(step: usize, t: f64, e: Error) -> RunFailure {
    RunFailure {
        step,
        time: t,
        message: e.to_string(),
    }
}

fn note_exceedances<T: Real>(rec: &mut TrajectoryRecord, plan: &NoiseIncrementPlan<T>) {
    for (m, tau) in rec.first_exceedance.iter_mut() {
        if tau.is_none() {
            *tau = plan
                .big_events
                .iter()
                .find(|e| e.mark.norm(Space::L2).as_f64() > *m)
                .map(|e| e.time);
        }
    }
}

fn applied_jumps<T: Real>(plan: &NoiseIncrementPlan<T>, cap: f64) -> u64 {
    let big = plan
        .big_events
        .iter()
        .filter(|e| e.mark.norm(Space::L2).as_f64() <= cap)
        .count();
    (plan.small_count + big) as u64
}

/// Simulates one path. Invalid inputs are errors; a failing step stops the
/// run and is reported in [`TrajectoryRecord::failure`] with what was recorded so far.
pub fn run<T: Real>(
    integ: &Integrator<T>,
    scheme: SchemeKind,
    initial: &SpectralField<T>,
    noise: &NoiseSpec,
    settings: &RunSettings,
) -> Result<TrajectoryRecord> {
    check_run(integ.n_modes(), initial, noise, scheme, settings)?;
    let eps = T::of(settings.eps);
    if scheme.uses_eps() {
        integ.ops.params().check_eps(eps)?;
    }
    let mut stream = settings.noise_stream(noise)?;
    let recorder = Recorder {
        integ,
        scheme,
        settings,
        eps,
    };
    let mut rec = TrajectoryRecord::empty(scheme, settings, integ.n_modes());
    let n_steps = settings.n_steps();
    let dt = settings.effective_dt();
    let cap = scheme.mark_cap();
    let mut x = initial.clone();
    let mut jumps = 0u64;
    if let Err(e) = recorder.sample(&mut rec, 0, 0.0, &x, 0) {
        rec.failure = Some(failure(0, 0.0, e));
        return Ok(rec);
    }
    for step in 1..=n_steps {
        let plan = stream.next_plan::<T>();
        note_exceedances(&mut rec, &plan);
        jumps += applied_jumps(&plan, cap);
        let t = step as f64 * dt;
        let next = integ
            .step(recorder.scheme, &x, eps, &plan)
            .and_then(|y| if y.is_finite() { Ok(y) } else { Err(Error::NonFinite("state")) });
        match next {
            Ok(y) => x = y,
            Err(e) => {
                rec.failure = Some(failure(step, t, e));
                return Ok(rec);
            }
        }
        if step % settings.sample_stride == 0 || step == n_steps {
            if let Err(e) = recorder.sample(&mut rec, step, t, &x, jumps) {
                rec.failure = Some(failure(step, t, e));
                return Ok(rec);
            }
        }
    }
    Ok(rec)
}

/// Two paths from different initial data driven by one shared noise path.
#[derive(Clone, Debug, PartialEq)]
pub struct CoupledRecord {
    pub first: TrajectoryRecord,
    pub second: TrajectoryRecord,
    /// `‖X¹_t − X²_t‖₋₁` at the sample times.
    pub distance: Vec<f64>,
}

pub fn run_coupled<T: Real>(
    integ: &Integrator<T>,
    scheme: SchemeKind,
    initial: (&SpectralField<T>, &SpectralField<T>),
    noise: &NoiseSpec,
    settings: &RunSettings,
) -> Result<CoupledRecord> {
    check_run(integ.n_modes(), initial.0, noise, scheme, settings)?;
    check_run(integ.n_modes(), initial.1, noise, scheme, settings)?;
    let eps = T::of(settings.eps);
    if scheme.uses_eps() {
        integ.ops.params().check_eps(eps)?;
    }
    let mut stream = settings.noise_stream(noise)?;
    let recorder = Recorder {
        integ,
        scheme,
        settings,
        eps,
    };
    let mut first = TrajectoryRecord::empty(scheme, settings, integ.n_modes());
    let mut second = first.clone();
    let mut distance = Vec::new();
    let (mut x, mut y) = (initial.0.clone(), initial.1.clone());
    let n_steps = settings.n_steps();
    let dt = settings.effective_dt();
    let cap = scheme.mark_cap();
    let mut jumps = 0u64;

    let mut sample = |first: &mut TrajectoryRecord,
                      second: &mut TrajectoryRecord,
                      step: usize,
                      t: f64,
                      x: &SpectralField<T>,
                      y: &SpectralField<T>,
                      jumps: u64|
     -> Result<()> {
        recorder.sample(first, step, t, x, jumps)?;
        recorder.sample(second, step, t, y, jumps)?;
        distance.push((x - y).norm(Space::Hminus1).as_f64());
        Ok(())
    };

    let mut failed = sample(&mut first, &mut second, 0, 0.0, &x, &y, 0).err().map(|e| failure(0, 0.0, e));
    if failed.is_none() {
        for step in 1..=n_steps {
            let plan = stream.next_plan::<T>();
            note_exceedances(&mut first, &plan);
            note_exceedances(&mut second, &plan);
            jumps += applied_jumps(&plan, cap);
            let t = step as f64 * dt;
            let next = integ
                .step(scheme, &x, eps, &plan)
                .and_then(|a| integ.step(scheme, &y, eps, &plan).map(|b| (a, b)))
                .and_then(|(a, b)| {
                    if a.is_finite() && b.is_finite() {
                        Ok((a, b))
                    } else {
                        Err(Error::NonFinite("state"))
                    }
                });
            match next {
                Ok((a, b)) => (x, y) = (a, b),
                Err(e) => {
                    failed = Some(failure(step, t, e));
                    break;
                }
            }
            if step % settings.sample_stride == 0 || step == n_steps {
                if let Err(e) = sample(&mut first, &mut second, step, t, &x, &y, jumps) {
                    failed = Some(failure(step, t, e));
                    break;
                }
            }
        }
    }
    first.failure = failed.clone();
    second.failure = failed;
    Ok(CoupledRecord {
        first,
        second,
        distance,
    })
}

pub fn write_trajectory_csv<W: Write>(rec: &TrajectoryRecord, out: &mut W) -> std::io::Result<()> {
    writeln!(out, "# stefan-sim trajectory v1")?;
    writeln!(out, "time,l2_norm,hminus1_norm,h1_beta_norm,jump_count")?;
    for i in 0..rec.times.len() {
        writeln!(
            out,
            "{},{},{},{},{}",
            rec.times[i], rec.l2[i], rec.hminus1[i], rec.h1_beta[i], rec.jump_count[i]
        )?;
    }
    Ok(())
}

/// Grid values per snapshot; columns are the collocation nodes.
pub fn write_snapshots_csv<W: Write>(rec: &TrajectoryRecord, out: &mut W) -> std::io::Result<()> {
    writeln!(out, "# stefan-sim snapshots v1")?;
    write!(out, "time")?;
    for j in 1..=rec.n_modes {
        write!(out, ",u{j}")?;
    }
    writeln!(out)?;
    for s in &rec.snapshots {
        write!(out, "{}", s.time)?;
        for v in &s.grid {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn write_coupled_csv<W: Write>(rec: &CoupledRecord, out: &mut W) -> std::io::Result<()> {
    writeln!(out, "# stefan-sim coupling v1")?;
    writeln!(out, "time,distance_hminus1,first_l2_norm,second_l2_norm")?;
    for (i, d) in rec.distance.iter().enumerate() {
        writeln!(out, "{},{},{},{}", rec.first.times[i], d, rec.first.l2[i], rec.second.l2[i])?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::enthalpy::EnthalpyParams;
    use crate::levy::{JumpEvent, SizeClass};
    use crate::operators::SolverSettings;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn linear(n: usize) -> Integrator<f64> {
        Integrator::new(StefanOperators::with_modes(n, EnthalpyParams::new(1.0, 0.0).unwrap()).unwrap())
    }

    fn stefan(n: usize) -> Integrator<f64> {
        Integrator::new(StefanOperators::with_modes(n, EnthalpyParams::new(2.0, 1.0).unwrap()).unwrap())
    }

    #[test]
    fn zero_is_an_equilibrium() {
        let integ = stefan(16);
        let plan = NoiseIncrementPlan::quiet(16, 0.0, 0.01);
        let zero = SpectralField::zeros(16);
        assert_eq!(integ.step_approx(&zero, 0.1, &plan).unwrap(), zero);
        assert_eq!(integ.step_limit(&zero, &plan).unwrap(), zero);
    }

    #[test]
    fn linear_one_step_closed_forms() {
        let integ = linear(16);
        let (dt, eps) = (0.01, 0.1);
        let plan = NoiseIncrementPlan::quiet(16, 0.0, dt);
        let e1 = SpectralField::basis_vector(16, 1).unwrap();
        let l1 = PI * PI;
        let approx = integ.step_approx(&e1, eps, &plan).unwrap();
        let want = (1.0 - dt * (1.0 + eps) * l1 / (1.0 + eps * (1.0 + eps) * l1)) / (1.0 + dt * eps * l1);
        assert!((approx.coeffs()[0] - want).abs() < 1e-12 * want);
        let lim = integ.step_limit(&e1, &plan).unwrap();
        assert!((lim.coeffs()[0] - 1.0 / (1.0 + dt * l1)).abs() < 1e-12);
        assert!(lim.coeffs()[1..].iter().all(|c| c.abs() < 1e-12));
    }

    #[test]
    fn jump_at_step_start_is_evolved() {
        let integ = stefan(16);
        let mark = integ.operators().basis().sample(|s| 2.0 * (PI * s).sin()).unwrap();
        let mut plan = NoiseIncrementPlan::quiet(16, 0.0, 0.01);
        plan.big_events.push(JumpEvent {
            time: 0.0,
            mark: mark.clone(),
            size_class: SizeClass::Big,
        });
        let zero = SpectralField::zeros(16);
        let quiet = NoiseIncrementPlan::quiet(16, 0.0, 0.01);
        for scheme in [SchemeKind::ApproxSemiImplicit, SchemeKind::LimitImplicitEuler] {
            let a = integ.step(scheme, &zero, 0.1, &plan).unwrap();
            let b = integ.step(scheme, &mark, 0.1, &quiet).unwrap();
            assert_eq!(a, b);
        }
        // suppressed entirely by the small-jump scheme
        let c = integ.step(SchemeKind::SmallJumpOnly, &zero, 0.1, &plan).unwrap();
        assert_eq!(c, zero);
    }

    #[test]
    fn zero_horizon_records_initial_sample() {
        let integ = stefan(8);
        let x = integ.operators().basis().sample(|s| s * (1.0 - s)).unwrap();
        let rec = run(
            &integ,
            SchemeKind::LimitImplicitEuler,
            &x,
            &NoiseSpec::zero(8),
            &RunSettings::new(0.01, 0.0),
        )
        .unwrap();
        assert_eq!(rec.times, vec![0.0]);
        assert_eq!(rec.l2[0], x.norm(Space::L2));
    }

    #[test]
    fn linear_decay_per_step() {
        let integ = linear(8);
        let e1 = SpectralField::basis_vector(8, 1).unwrap();
        let dt = 0.01;
        let rec = run(
            &integ,
            SchemeKind::LimitImplicitEuler,
            &e1,
            &NoiseSpec::zero(8),
            &RunSettings::new(dt, 0.2),
        )
        .unwrap();
        for (k, v) in rec.l2.iter().enumerate() {
            let want = (1.0 + dt * PI * PI).powi(-(k as i32));
            assert!((v - want).abs() < 1e-10 * want);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let integ = stefan(8);
        let noise = NoiseSpec::example3(NoiseSpec::power_weights(8, 1.0, 1.0)).unwrap();
        let x = integ.operators().basis().sample(|s| (2.0 * PI * s).sin()).unwrap();
        let s = RunSettings::new(0.005, 0.5).with_eps(0.1).with_seed(11, 3);
        let a = run(&integ, SchemeKind::ApproxSemiImplicit, &x, &noise, &s).unwrap();
        let b = run(&integ, SchemeKind::ApproxSemiImplicit, &x, &noise, &s).unwrap();
        assert_eq!(a, b);
        assert!(a.failure.is_none());
        assert!(a.times.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn coupled_identical_initials_stay_together() {
        let integ = stefan(8);
        let noise = NoiseSpec::example3(NoiseSpec::power_weights(8, 1.0, 1.0)).unwrap();
        let x = integ.operators().basis().sample(|s| (3.0 * PI * s).sin()).unwrap();
        let rec = run_coupled(
            &integ,
            SchemeKind::LimitImplicitEuler,
            (&x, &x),
            &noise,
            &RunSettings::new(0.01, 1.0).with_seed(2, 0),
        )
        .unwrap();
        assert!(rec.distance.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn coupled_limit_distance_nonincreasing() {
        let integ = stefan(12);
        let noise = NoiseSpec::example3(NoiseSpec::power_weights(12, 1.0, 1.0)).unwrap();
        let b = integ.operators().basis();
        let x = b.sample(|s| 3.0 * (PI * s).sin() - 1.0 * s).unwrap();
        let y = b.sample(|s| -2.0 * (2.0 * PI * s).sin()).unwrap();
        let rec = run_coupled(
            &integ,
            SchemeKind::LimitImplicitEuler,
            (&x, &y),
            &noise,
            &RunSettings::new(0.01, 2.0).with_seed(5, 1),
        )
        .unwrap();
        assert!(rec.distance.windows(2).all(|w| w[1] <= w[0] + 1e-9));
    }

    #[test]
    fn failure_keeps_partial_record() {
        let params = EnthalpyParams::new(2.0, 1.0).unwrap();
        let settings = SolverSettings {
            tol: 1e-30,
            max_iter: 1,
            damping: 1.0,
        };
        let ops = StefanOperators::new(Arc::new(crate::spectral::Basis::new(8).unwrap()), params, settings).unwrap();
        let integ = Integrator::new(ops);
        let x = integ.operators().basis().sample(|s| 4.0 * (PI * s).sin() - 1.0).unwrap();
        let rec = run(
            &integ,
            SchemeKind::LimitImplicitEuler,
            &x,
            &NoiseSpec::zero(8),
            &RunSettings::new(0.01, 0.1),
        )
        .unwrap();
        let f = rec.failure.clone().expect("step must fail");
        assert_eq!(f.step, 1);
        assert_eq!(rec.times, vec![0.0]);
        assert!(matches!(rec.into_result(), Err(Error::StepFailed { .. })));
    }

    #[test]
    fn drift_needs_regularized_scheme() {
        let integ = stefan(8);
        let mut s = RunSettings::new(0.01, 0.1);
        s.record_drift = true;
        let x = SpectralField::zeros(8);
        assert!(run(&integ, SchemeKind::LimitImplicitEuler, &x, &NoiseSpec::zero(8), &s).is_err());
        let rec = run(&integ, SchemeKind::ApproxSemiImplicit, &x, &NoiseSpec::zero(8), &s.with_eps(0.1)).unwrap();
        assert_eq!(rec.drift.len(), rec.len());
    }

    #[test]
    fn effective_step_tiles_horizon() {
        let s = RunSettings::new(0.003, 0.5);
        assert_eq!(s.n_steps(), 167);
        assert!((s.effective_dt() * 167.0 - 0.5).abs() < 1e-15);
        assert!(s.effective_dt() <= 0.003);
        assert_eq!(RunSettings::new(0.1, 1.0).n_steps(), 10);
    }

    #[test]
    fn csv_layout() {
        let integ = stefan(8);
        let mut s = RunSettings::new(0.05, 0.2);
        s.snapshot_stride = Some(2);
        let x = integ.operators().basis().sample(|v| v * (1.0 - v)).unwrap();
        let rec = run(&integ, SchemeKind::LimitImplicitEuler, &x, &NoiseSpec::zero(8), &s).unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&rec, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().nth(1), Some("time,l2_norm,hminus1_norm,h1_beta_norm,jump_count"));
        assert_eq!(text.lines().count(), 2 + 5);
        let mut buf = Vec::new();
        write_snapshots_csv(&rec, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 2 + 3);
    }
}
