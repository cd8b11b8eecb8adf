//! Pure-jump Lévy noise on the truncated sine basis.
//!
//! The Lévy measure `ν` is split at `|z|₂ = 1`: jumps with `|z|₂ > 1` ("big")
//! arrive as a compound Poisson stream with exact exponential inter-arrival
//! times and are handed to the integrator as individual events; jumps with
//! `|z|₂ ≤ 1` ("small") are aggregated per time step and compensated by
//! `Δt ∫ z ν(dz)` over the simulated part of `{|z|₂ ≤ 1}`.
//!
//! Small and big jumps use separate random streams, so suppressing the big
//! jumps leaves the small-jump path untouched.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Poisson, StandardNormal};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::spectral::{Space, SpectralField};

/// Threshold separating small from big jumps.
pub const SMALL_JUMP_CUTOFF: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Atom {
    pub value: f64,
    pub rate: f64,
}

/// One-dimensional intensity `μ` shared by every mode of a cylindrical process.
#[derive(Clone, Debug, PartialEq)]
pub enum Intensity {
    /// `μ(dx) = |x|^{−1−α} dx`.
    Stable { alpha: f64 },
    /// Finite sum of point masses.
    Atomic { atoms: Vec<Atom> },
}

#[derive(Clone, Debug, PartialEq)]
pub enum NoiseKind {
    /// `L(t) = Σ_i w_i L_i(t) e_i` with i.i.d. one-dimensional `L_i`.
    CylindricalLevy { weights: Vec<f64>, intensity: Intensity },
    /// `W_{S_t}`: a `Q`-Wiener process (eigenvalues `q`) time-changed by an
    /// `ᾱ/2`-stable subordinator.
    SubordinatedWiener { q: Vec<f64>, alpha_bar: f64 },
    /// Finitely many marks, each arriving at its own rate.
    CompoundPoisson { atoms: Vec<(SpectralField<f64>, f64)> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    /// Inner cutoff `δ` for simulating stable small jumps.
    pub truncation: f64,
    n_modes: usize,
}

impl NoiseSpec {
    pub fn new(kind: NoiseKind, n_modes: usize, truncation: f64) -> Result<Self> {
        let spec = Self {
            kind,
            truncation,
            n_modes,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// No noise at all.
    pub fn zero(n_modes: usize) -> Self {
        Self {
            kind: NoiseKind::CompoundPoisson { atoms: Vec::new() },
            truncation: 1e-3,
            n_modes,
        }
    }

    /// Cylindrical compound Poisson noise with `μ({1}) = μ({−√2}) = 1` per mode.
    pub fn example3(weights: Vec<f64>) -> Result<Self> {
        let n = weights.len();
        Self::new(
            NoiseKind::CylindricalLevy {
                weights,
                intensity: Intensity::Atomic {
                    atoms: vec![
                        Atom { value: 1.0, rate: 1.0 },
                        Atom {
                            value: -std::f64::consts::SQRT_2,
                            rate: 1.0,
                        },
                    ],
                },
            },
            n,
            1e-3,
        )
    }

    /// Weights `scale · i^{−decay}`, `i = 1..=n`.
    pub fn power_weights(n_modes: usize, scale: f64, decay: f64) -> Vec<f64> {
        (1..=n_modes).map(|i| scale * (i as f64).powf(-decay)).collect()
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidNoise(m));
        if self.n_modes == 0 {
            return bad("noise needs at least one mode".into());
        }
        if !(self.truncation > 0.0 && self.truncation <= SMALL_JUMP_CUTOFF) {
            return bad(format!("truncation {} outside (0, 1]", self.truncation));
        }
        match &self.kind {
            NoiseKind::CylindricalLevy { weights, intensity } => {
                if weights.len() != self.n_modes {
                    return bad(format!(
                        "{} weights for {} modes",
                        weights.len(),
                        self.n_modes
                    ));
                }
                if weights.iter().any(|w| !w.is_finite()) {
                    return bad("non-finite mode weight".into());
                }
                match intensity {
                    Intensity::Stable { alpha } => {
                        if !(*alpha > 0.0 && *alpha < 2.0) {
                            return bad(format!("stable index {alpha} outside (0, 2)"));
                        }
                    }
                    Intensity::Atomic { atoms } => check_atoms(atoms.iter().map(|a| (a.value, a.rate)))?,
                }
            }
            NoiseKind::SubordinatedWiener { q, alpha_bar } => {
                if q.len() != self.n_modes {
                    return bad(format!("{} covariance eigenvalues for {} modes", q.len(), self.n_modes));
                }
                if q.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                    return bad("covariance eigenvalues must be positive".into());
                }
                if !(*alpha_bar > 0.0 && *alpha_bar < 2.0) {
                    return bad(format!("subordinator index {alpha_bar} outside (0, 2)"));
                }
            }
            NoiseKind::CompoundPoisson { atoms } => {
                for (mark, _) in atoms {
                    if mark.n_modes() != self.n_modes {
                        return bad("compound Poisson mark has the wrong resolution".into());
                    }
                }
                check_atoms(atoms.iter().map(|(m, r)| (m.norm(Space::L2), *r)))?;
            }
        }
        Ok(())
    }

    /// `ν({|z|₂ > 1})`.
    pub fn big_jump_rate(&self) -> f64 {
        match &self.kind {
            NoiseKind::CylindricalLevy { weights, intensity } => match intensity {
                Intensity::Stable { alpha } => weights
                    .iter()
                    .map(|w| 2.0 * w.abs().powf(*alpha) / alpha)
                    .sum(),
                Intensity::Atomic { atoms } => weights
                    .iter()
                    .flat_map(|w| atoms.iter().map(move |a| (w * a.value, a.rate)))
                    .filter(|(m, _)| m.abs() > SMALL_JUMP_CUTOFF)
                    .map(|(_, r)| r)
                    .sum(),
            },
            // increments are drawn per step; there is no separate arrival stream
            NoiseKind::SubordinatedWiener { .. } => 0.0,
            NoiseKind::CompoundPoisson { atoms } => atoms
                .iter()
                .filter(|(m, _)| m.norm(Space::L2) > SMALL_JUMP_CUTOFF)
                .map(|(_, r)| r)
                .sum(),
        }
    }

    /// `∫_{|z|₂ ≤ δ} |z|₂² ν(dz)`: second moment of the jumps the simulation drops.
    pub fn discarded_variance(&self) -> f64 {
        match &self.kind {
            NoiseKind::CylindricalLevy {
                weights,
                intensity: Intensity::Stable { alpha },
            } => {
                let d = self.truncation;
                weights
                    .iter()
                    .filter(|w| **w != 0.0)
                    .map(|w| 2.0 * w * w * (d / w.abs()).powf(2.0 - alpha) / (2.0 - alpha))
                    .sum()
            }
            _ => 0.0,
        }
    }
}

fn check_atoms(atoms: impl Iterator<Item = (f64, f64)>) -> Result<()> {
    for (size, rate) in atoms {
        if !(rate >= 0.0 && rate.is_finite()) {
            return Err(Error::InvalidNoise(format!("atom rate {rate} must be finite and >= 0")));
        }
        if !size.is_finite() {
            return Err(Error::InvalidNoise("non-finite atom".into()));
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SizeClass {
    Small,
    Big,
}

impl SizeClass {
    pub fn of_norm(norm: f64) -> Self {
        if norm <= SMALL_JUMP_CUTOFF {
            SizeClass::Small
        } else {
            SizeClass::Big
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SizeClass::Small => "small",
            SizeClass::Big => "big",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct JumpEvent<T> {
    pub time: f64,
    pub mark: SpectralField<T>,
    pub size_class: SizeClass,
}

/// Noise realized over one time step `[t_start, t_start + dt)`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseIncrementPlan<T> {
    pub t_start: f64,
    pub dt: f64,
    /// Sum of small marks minus the compensator drift.
    pub small_increment: SpectralField<T>,
    pub small_count: usize,
    /// Individual small events; filled only when event recording is on and
    /// the small part is event-based (atomic intensities).
    pub small_events: Vec<JumpEvent<T>>,
    /// Big events in arrival order.
    pub big_events: Vec<JumpEvent<T>>,
}

impl<T: Real> NoiseIncrementPlan<T> {
    pub fn quiet(n_modes: usize, t_start: f64, dt: f64) -> Self {
        Self {
            t_start,
            dt,
            small_increment: SpectralField::zeros(n_modes),
            small_count: 0,
            small_events: Vec::new(),
            big_events: Vec::new(),
        }
    }
}

/// A finite atom list with a categorical picker.
#[derive(Clone, Debug)]
struct AtomTable {
    // (mode index or None for a full field, amplitude, full mark)
    marks: Vec<Mark>,
    cumulative: Vec<f64>,
    total: f64,
}

#[derive(Clone, Debug)]
enum Mark {
    Mode { mode: usize, amplitude: f64 },
    Field(SpectralField<f64>),
}

impl Mark {
    fn add_to(&self, target: &mut [f64], scale: f64) {
        match self {
            Mark::Mode { mode, amplitude } => target[*mode] += scale * amplitude,
            Mark::Field(f) => {
                for (t, c) in target.iter_mut().zip(f.coeffs()) {
                    *t += scale * c;
                }
            }
        }
    }

    fn norm(&self) -> f64 {
        match self {
            Mark::Mode { amplitude, .. } => amplitude.abs(),
            Mark::Field(f) => f.norm(Space::L2),
        }
    }
}

impl AtomTable {
    fn new(entries: Vec<(Mark, f64)>) -> Self {
        let mut marks = Vec::new();
        let mut cumulative = Vec::new();
        let mut total = 0.0;
        for (m, r) in entries {
            if r > 0.0 {
                total += r;
                marks.push(m);
                cumulative.push(total);
            }
        }
        Self {
            marks,
            cumulative,
            total,
        }
    }

    fn pick(&self, rng: &mut ChaCha8Rng) -> &Mark {
        let u = rng.random::<f64>() * self.total;
        let i = self.cumulative.partition_point(|&c| c <= u).min(self.marks.len() - 1);
        &self.marks[i]
    }
}

#[derive(Clone, Debug)]
enum SmallPart {
    None,
    Atomic { table: AtomTable, compensator: Vec<f64> },
    /// Per-mode symmetric stable jumps with `δ < |mark| ≤ 1`.
    Stable { alpha: f64, delta: f64, rates: Vec<f64> },
    Subordinated { q: Vec<f64>, index: f64 },
}

#[derive(Clone, Debug)]
enum BigPart {
    Atomic(AtomTable),
    Stable { alpha: f64, table: AtomTable },
}

impl BigPart {
    fn total(&self) -> f64 {
        match self {
            BigPart::Atomic(t) | BigPart::Stable { table: t, .. } => t.total,
        }
    }
}

/// Streaming sampler for one noise path.
#[derive(Clone, Debug)]
pub struct NoiseStream {
    n: usize,
    dt: f64,
    step: u64,
    record_events: bool,
    small: SmallPart,
    big: BigPart,
    rng_small: ChaCha8Rng,
    rng_big: ChaCha8Rng,
    next_small: f64,
    next_big: f64,
}

/// Independent random stream for `(seed, stream_id)`.
pub fn stream_rng(seed: u64, stream_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

impl NoiseStream {
    /// Path `path_id` of the noise family; uses streams `2·path_id` (small) and
    /// `2·path_id + 1` (big) of the master seed.
    pub fn new(spec: &NoiseSpec, dt: f64, seed: u64, path_id: u64) -> Result<Self> {
        spec.validate()?;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::out_of_range("dt", dt, "(0, inf)"));
        }
        let n = spec.n_modes;
        let (small, big) = match &spec.kind {
            NoiseKind::CylindricalLevy { weights, intensity } => match intensity {
                Intensity::Atomic { atoms } => {
                    let mut small = Vec::new();
                    let mut big = Vec::new();
                    for (mode, w) in weights.iter().enumerate() {
                        for a in atoms {
                            let m = Mark::Mode {
                                mode,
                                amplitude: w * a.value,
                            };
                            if m.norm() <= SMALL_JUMP_CUTOFF {
                                small.push((m, a.rate));
                            } else {
                                big.push((m, a.rate));
                            }
                        }
                    }
                    (atomic_small(small, n), BigPart::Atomic(AtomTable::new(big)))
                }
                Intensity::Stable { alpha } => {
                    let alpha = *alpha;
                    let delta = spec.truncation;
                    let big_rates: Vec<(Mark, f64)> = weights
                        .iter()
                        .enumerate()
                        .map(|(mode, w)| {
                            (
                                Mark::Mode {
                                    mode,
                                    amplitude: 1.0,
                                },
                                2.0 * w.abs().powf(alpha) / alpha,
                            )
                        })
                        .collect();
                    let small_rates = weights
                        .iter()
                        .map(|w| 2.0 * w.abs().powf(alpha) / alpha * (delta.powf(-alpha) - 1.0))
                        .collect();
                    (
                        SmallPart::Stable {
                            alpha,
                            delta,
                            rates: small_rates,
                        },
                        BigPart::Stable {
                            alpha,
                            table: AtomTable::new(big_rates),
                        },
                    )
                }
            },
            NoiseKind::SubordinatedWiener { q, alpha_bar } => (
                SmallPart::Subordinated {
                    q: q.clone(),
                    index: alpha_bar / 2.0,
                },
                BigPart::Atomic(AtomTable::new(Vec::new())),
            ),
            NoiseKind::CompoundPoisson { atoms } => {
                let mut small = Vec::new();
                let mut big = Vec::new();
                for (f, r) in atoms {
                    let m = Mark::Field(f.clone());
                    if m.norm() <= SMALL_JUMP_CUTOFF {
                        small.push((m, *r));
                    } else {
                        big.push((m, *r));
                    }
                }
                (atomic_small(small, n), BigPart::Atomic(AtomTable::new(big)))
            }
        };
        let big_total = big.total();
        if !big_total.is_finite() {
            return Err(Error::InvalidNoise("infinite big-jump rate".into()));
        }
        let mut s = Self {
            n,
            dt,
            step: 0,
            record_events: false,
            small,
            big,
            rng_small: stream_rng(seed, 2 * path_id),
            rng_big: stream_rng(seed, 2 * path_id + 1),
            next_small: f64::INFINITY,
            next_big: f64::INFINITY,
        };
        s.next_small = match &s.small {
            SmallPart::Atomic { table, .. } => exp_arrival(0.0, table.total, &mut s.rng_small),
            _ => f64::INFINITY,
        };
        s.next_big = exp_arrival(0.0, big_total, &mut s.rng_big);
        Ok(s)
    }

    /// Keep individual small events in the plans (atomic specs only).
    pub fn with_event_recording(mut self, on: bool) -> Self {
        self.record_events = on;
        self
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Plan for the next step of nominal length `dt`.
    pub fn next_plan<T: Real>(&mut self) -> NoiseIncrementPlan<T> {
        let t0 = self.step as f64 * self.dt;
        self.step += 1;
        let t1 = self.step as f64 * self.dt;
        let dt = t1 - t0;
        let n = self.n;
        let mut inc = vec![0.0; n];
        let mut small_count = 0;
        let mut small_events = Vec::new();

        match &self.small {
            SmallPart::None => {}
            SmallPart::Atomic { table, compensator } => {
                while self.next_small < t1 {
                    let m = table.pick(&mut self.rng_small);
                    m.add_to(&mut inc, 1.0);
                    small_count += 1;
                    if self.record_events {
                        small_events.push(JumpEvent {
                            time: self.next_small,
                            mark: mark_field(m, n),
                            size_class: SizeClass::Small,
                        });
                    }
                    self.next_small = exp_arrival(self.next_small, table.total, &mut self.rng_small);
                }
                for (v, c) in inc.iter_mut().zip(compensator) {
                    *v -= dt * c;
                }
            }
            SmallPart::Stable { alpha, delta, rates } => {
                let lo = delta.powf(-alpha);
                for (mode, &rate) in rates.iter().enumerate() {
                    let mean = rate * dt;
                    if mean <= 0.0 {
                        continue;
                    }
                    let count = Poisson::new(mean).map(|p| p.sample(&mut self.rng_small)).unwrap_or(0.0) as usize;
                    for _ in 0..count {
                        let u: f64 = self.rng_small.random();
                        // density ∝ a^{−1−α} on (δ, 1]
                        let a = (lo - u * (lo - 1.0)).powf(-1.0 / alpha);
                        let sign = if self.rng_small.random::<bool>() { 1.0 } else { -1.0 };
                        inc[mode] += sign * a;
                    }
                    small_count += count;
                }
            }
            SmallPart::Subordinated { q, index } => {
                let s = dt.powf(1.0 / index) * sample_positive_stable_unchecked(*index, &mut self.rng_small);
                let mut z = vec![0.0; n];
                for (zi, qi) in z.iter_mut().zip(q) {
                    let g: f64 = StandardNormal.sample(&mut self.rng_small);
                    *zi = (s * qi).sqrt() * g;
                }
                let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 0.0 {
                    small_count += 1;
                }
                if norm <= SMALL_JUMP_CUTOFF {
                    inc = z;
                } else {
                    // aggregated increment exceeding the cutoff: delivered as a
                    // big event at the end of the step
                    let mark = SpectralField::from_coeffs_unchecked(z);
                    let big = vec![JumpEvent {
                        time: t1,
                        mark: mark.cast(),
                        size_class: SizeClass::Big,
                    }];
                    return NoiseIncrementPlan {
                        t_start: t0,
                        dt,
                        small_increment: SpectralField::zeros(n),
                        small_count: 0,
                        small_events,
                        big_events: big,
                    };
                }
            }
        }

        let mut big_events = Vec::new();
        while self.next_big < t1 {
            let time = self.next_big;
            let mark = match &self.big {
                BigPart::Atomic(table) => mark_field(table.pick(&mut self.rng_big), n),
                BigPart::Stable { alpha, table } => {
                    let mode = match table.pick(&mut self.rng_big) {
                        Mark::Mode { mode, .. } => *mode,
                        Mark::Field(_) => unreachable!("stable tables hold mode marks"),
                    };
                    let u: f64 = self.rng_big.random();
                    // Pareto tail beyond the cutoff
                    let a = (1.0 - u).powf(-1.0 / alpha);
                    let sign = if self.rng_big.random::<bool>() { 1.0 } else { -1.0 };
                    let mut c = vec![0.0; n];
                    c[mode] = sign * a;
                    SpectralField::from_coeffs_unchecked(c)
                }
            };
            big_events.push(JumpEvent {
                time,
                mark: mark.cast(),
                size_class: SizeClass::Big,
            });
            self.next_big = exp_arrival(time, self.big.total(), &mut self.rng_big);
        }

        NoiseIncrementPlan {
            t_start: t0,
            dt,
            small_increment: SpectralField::from_coeffs_unchecked(inc).cast(),
            small_count,
            small_events,
            big_events,
        }
    }
}

fn atomic_small(entries: Vec<(Mark, f64)>, n: usize) -> SmallPart {
    let mut compensator = vec![0.0; n];
    for (m, r) in &entries {
        m.add_to(&mut compensator, *r);
    }
    let table = AtomTable::new(entries);
    if table.total > 0.0 {
        SmallPart::Atomic { table, compensator }
    } else {
        SmallPart::None
    }
}

fn mark_field<T: Real>(m: &Mark, n: usize) -> SpectralField<T> {
    let mut c = vec![0.0; n];
    m.add_to(&mut c, 1.0);
    SpectralField::from_coeffs_unchecked(c).cast()
}

fn exp_arrival(from: f64, rate: f64, rng: &mut ChaCha8Rng) -> f64 {
    if rate > 0.0 {
        let e: f64 = Exp1.sample(rng);
        from + e / rate
    } else {
        f64::INFINITY
    }
}

/// Plans covering `[0, horizon]` in steps of `dt` (the last step is not shortened).
pub fn sample_path(spec: &NoiseSpec, horizon: f64, dt: f64, seed: u64) -> Result<Vec<NoiseIncrementPlan<f64>>> {
    if !(horizon > 0.0) {
        return Err(Error::out_of_range("horizon", horizon, "(0, inf)"));
    }
    let mut stream = NoiseStream::new(spec, dt, seed, 0)?;
    let steps = (horizon / dt - 1e-9).ceil() as usize;
    Ok((0..steps).map(|_| stream.next_plan()).collect())
}

/// Symmetric α-stable variate with `E e^{itX} = exp(−|scale·t|^α)`
/// (Chambers–Mallows–Stuck).
pub fn sample_alpha_stable<R: Rng + ?Sized>(alpha: f64, scale: f64, rng: &mut R) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 2.0) {
        return Err(Error::out_of_range("alpha", alpha, "(0, 2)"));
    }
    if scale == 0.0 {
        return Ok(0.0);
    }
    let v = std::f64::consts::PI * (rng.random::<f64>() - 0.5);
    let w: f64 = Exp1.sample(rng);
    let x = if (alpha - 1.0).abs() < 1e-12 {
        v.tan()
    } else {
        (alpha * v).sin() / v.cos().powf(1.0 / alpha) * (((1.0 - alpha) * v).cos() / w).powf((1.0 - alpha) / alpha)
    };
    Ok(scale * x)
}

/// One-sided stable variate, `E e^{−λS} = exp(−λ^α)`, `α ∈ (0, 1)` (Kanter).
pub fn sample_positive_stable<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::out_of_range("alpha", alpha, "(0, 1)"));
    }
    Ok(sample_positive_stable_unchecked(alpha, rng))
}

fn sample_positive_stable_unchecked<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    let u = std::f64::consts::PI * rng.random::<f64>();
    let e: f64 = Exp1.sample(rng);
    let a = (alpha * u).sin() / u.sin().powf(1.0 / alpha);
    let b = (((1.0 - alpha) * u).sin() / e).powf((1.0 - alpha) / alpha);
    a * b
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum C1Verdict {
    Finite(f64),
    Infinite,
}

impl C1Verdict {
    pub fn is_finite(&self) -> bool {
        matches!(self, C1Verdict::Finite(_))
    }
}

/// The big-jump moment `∫_{|z|₂>1} |z|₂^α ν(dz)`.
pub fn check_c1(spec: &NoiseSpec, alpha: f64) -> Result<C1Verdict> {
    if !(alpha > 0.0 && alpha <= 2.0) {
        return Err(Error::out_of_range("alpha", alpha, "(0, 2]"));
    }
    let big = |size: f64, rate: f64| if size > SMALL_JUMP_CUTOFF { rate * size.powf(alpha) } else { 0.0 };
    Ok(match &spec.kind {
        NoiseKind::CylindricalLevy { weights, intensity } => match intensity {
            Intensity::Atomic { atoms } => C1Verdict::Finite(
                weights
                    .iter()
                    .flat_map(|w| atoms.iter().map(move |a| big((w * a.value).abs(), a.rate)))
                    .sum(),
            ),
            Intensity::Stable { alpha: s } => {
                if alpha < *s {
                    // per mode 2|w|^s/(s−α)
                    C1Verdict::Finite(weights.iter().map(|w| 2.0 * w.abs().powf(*s) / (s - alpha)).sum())
                } else {
                    C1Verdict::Infinite
                }
            }
        },
        NoiseKind::CompoundPoisson { atoms } => {
            C1Verdict::Finite(atoms.iter().map(|(m, r)| big(m.norm(Space::L2), *r)).sum())
        }
        NoiseKind::SubordinatedWiener { q, alpha_bar } => {
            if alpha >= *alpha_bar {
                C1Verdict::Infinite
            } else {
                // ν = ∫ N(0, sQ) ρ(ds), ρ(ds) = a/Γ(1−a) s^{−1−a} ds, a = ᾱ/2.
                // Integrating s out: (2/(ᾱ−α))·a/Γ(1−a)·E|G|^{ᾱ} with G ~ N(0, Q),
                // the last factor by a fixed-seed Monte Carlo average.
                let a = alpha_bar / 2.0;
                let mut rng = stream_rng(0x005e_edc1, 0);
                let samples = 100_000;
                let mut acc = 0.0;
                for _ in 0..samples {
                    let g2: f64 = q
                        .iter()
                        .map(|qi| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            qi * z * z
                        })
                        .sum();
                    acc += g2.powf(alpha_bar / 2.0);
                }
                let moment = acc / samples as f64;
                C1Verdict::Finite(2.0 / (alpha_bar - alpha) * a / statrs::function::gamma::gamma(1.0 - a) * moment)
            }
        }
    })
}

#[derive(Clone, Debug, PartialEq)]
pub enum C2Verdict {
    Satisfied,
    NotSatisfied(String),
    /// The spec is not one of the families with a known sufficient criterion.
    Undecidable,
}

/// Sufficient criteria for the density condition, per built-in family.
///
/// Cylindrical: nonzero weights and two support points `a < 0 < b` of `μ` with
/// `a/b` irrational. Subordinated Wiener: nondegenerate `Q`. Irrationality of a
/// floating-point ratio is judged by the absence of a rational approximation
/// `p/q`, `q ≤ 10⁴`, within relative distance `10⁻¹²`.
pub fn check_c2_examples(spec: &NoiseSpec) -> C2Verdict {
    match &spec.kind {
        NoiseKind::CylindricalLevy { weights, intensity } => {
            if weights.contains(&0.0) {
                return C2Verdict::NotSatisfied("a mode weight is zero".into());
            }
            match intensity {
                Intensity::Stable { .. } => C2Verdict::Satisfied,
                Intensity::Atomic { atoms } => {
                    let support: Vec<f64> = atoms.iter().filter(|a| a.rate > 0.0).map(|a| a.value).collect();
                    let found = support.iter().filter(|&&a| a < 0.0).any(|&a| {
                        support
                            .iter()
                            .filter(|&&b| b > 0.0)
                            .any(|&b| looks_irrational(a / b))
                    });
                    if found {
                        C2Verdict::Satisfied
                    } else {
                        C2Verdict::NotSatisfied("no support pair a < 0 < b with irrational a/b".into())
                    }
                }
            }
        }
        NoiseKind::SubordinatedWiener { q, .. } => {
            if q.iter().all(|&v| v > 0.0) {
                C2Verdict::Satisfied
            } else {
                C2Verdict::NotSatisfied("degenerate covariance".into())
            }
        }
        NoiseKind::CompoundPoisson { .. } => C2Verdict::Undecidable,
    }
}

/// Continued-fraction test: no `p/q` with `q ≤ 10⁴` within `10⁻¹²·|x|`.
pub fn looks_irrational(x: f64) -> bool {
    let target = x.abs();
    if target == 0.0 || !target.is_finite() {
        return false;
    }
    let (mut p0, mut q0, mut p1, mut q1) = (0.0f64, 1.0f64, 1.0f64, 0.0f64);
    let mut r = target;
    for _ in 0..64 {
        let a = r.floor();
        let (p2, q2) = (a * p1 + p0, a * q1 + q0);
        if q2 > 1e4 {
            return true;
        }
        if (p2 / q2 - target).abs() <= 1e-12 * target {
            return false;
        }
        (p0, q0, p1, q1) = (p1, q1, p2, q2);
        let frac = r - a;
        if frac <= 0.0 {
            return false;
        }
        r = 1.0 / frac;
    }
    true
}

/// CSV rows `time,size_class,mark_l2,c1..c8` for every event in the plans.
pub fn write_events_csv<T: Real, W: Write>(plans: &[NoiseIncrementPlan<T>], out: &mut W) -> std::io::Result<()> {
    writeln!(out, "# stefan-sim events v1")?;
    write!(out, "time,size_class,mark_l2")?;
    for k in 1..=8 {
        write!(out, ",c{k}")?;
    }
    writeln!(out)?;
    let mut events: Vec<&JumpEvent<T>> = plans
        .iter()
        .flat_map(|p| p.small_events.iter().chain(&p.big_events))
        .collect();
    events.sort_by(|a, b| a.time.total_cmp(&b.time));
    for e in events {
        write!(out, "{},{},{}", e.time, e.size_class.as_str(), e.mark.norm(Space::L2))?;
        for k in 0..8 {
            let c = e.mark.coeffs().get(k).map_or(0.0, |c| c.as_f64());
            write!(out, ",{c}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}
