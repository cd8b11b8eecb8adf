//! Lyapunov functionals `f(u) = (1+‖u‖₋₁²)^{α/2}`, `h(u) = (1+|u|₂²)^{α/2}` and
//! path averages of the drift terms they control.

use std::io::Write;

use crate::enthalpy::EnthalpyParams;
use crate::error::{Error, Result};
use crate::integrator::TrajectoryRecord;
use crate::scalar::Real;
use crate::spectral::{Space, SpectralField};
use crate::stats::Welford;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LyapunovParams {
    alpha: f64,
}

impl Default for LyapunovParams {
    fn default() -> Self {
        Self { alpha: 0.5 }
    }
}

impl LyapunovParams {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::out_of_range("alpha", alpha, "(0, 1]"));
        }
        Ok(Self { alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    fn a<T: Real>(&self) -> T {
        T::of(self.alpha)
    }

    pub fn f_value<T: Real>(&self, u: &SpectralField<T>) -> T {
        (T::one() + u.norm_sq(Space::Hminus1)).powf(self.a::<T>() * T::of(0.5))
    }

    pub fn h_value<T: Real>(&self, u: &SpectralField<T>) -> T {
        (T::one() + u.norm_sq(Space::L2)).powf(self.a::<T>() * T::of(0.5))
    }

    /// `Df(u) = αu/(1+‖u‖₋₁²)^{1−α/2}`, to be paired with directions in `⟨·,·⟩₋₁`.
    pub fn f_gradient<T: Real>(&self, u: &SpectralField<T>) -> SpectralField<T> {
        let a = self.a::<T>();
        let q = T::one() + u.norm_sq(Space::Hminus1);
        u.scaled(a / q.powf(T::one() - a * T::of(0.5)))
    }

    /// `[D²f(u)]x = αx/q^{1−α/2} − α(2−α)u⟨u,x⟩₋₁/q^{2−α/2}`, `q = 1+‖u‖₋₁²`.
    pub fn f_hessian_apply<T: Real>(&self, u: &SpectralField<T>, x: &SpectralField<T>) -> Result<SpectralField<T>> {
        let a = self.a::<T>();
        let half = a * T::of(0.5);
        let q = T::one() + u.norm_sq(Space::Hminus1);
        let ux = u.inner(x, Space::Hminus1)?;
        let mut out = x.scaled(a / q.powf(T::one() - half));
        out.axpy(-a * (T::of(2.0) - a) * ux / q.powf(T::of(2.0) - half), u);
        Ok(out)
    }
}

/// Time average of one drift quantity across paths.
#[derive(Clone, Debug, PartialEq)]
pub struct DriftQuantity {
    pub name: &'static str,
    pub time_average: f64,
    /// Standard error across paths; `NaN` for a single path.
    pub std_error: f64,
    pub n_paths: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DriftReport {
    pub quantities: Vec<DriftQuantity>,
    /// Constant used in `|u|₂^α ≤ C(1+|u|₂²)/(1+‖u‖₋₁²)^{1−α/2}`.
    pub comparison_constant: f64,
    /// Samples along the paths where that comparison failed.
    pub comparison_violations: usize,
}

pub const DRIFT_QUANTITIES: [&str; 3] = ["dissipation_hminus1", "l2_moment", "dissipation_l2"];

/// Averages over `(0, T]` of
/// `εα|X|₂²/(1+‖X‖₋₁²)^{1−α/2}`, `|X|₂^α` and
/// `(ε‖X‖₁² + γ‖Z_ε X‖₁² + ε|F_ε X|₂²)/(1+|X|₂²)^{1−α/2}`.
pub fn drift_report(
    records: &[TrajectoryRecord],
    params: &EnthalpyParams<f64>,
    lyap: &LyapunovParams,
) -> Result<DriftReport> {
    if records.is_empty() {
        return Err(Error::IncompatibleRecord("no records".into()));
    }
    let eps = records[0].eps;
    let a = lyap.alpha;
    let gamma = params.gamma();
    let c = 1.0;
    let mut acc = [Welford::new(), Welford::new(), Welford::new()];
    let mut violations = 0;
    for rec in records {
        if rec.drift.len() != rec.times.len() || rec.drift.is_empty() {
            return Err(Error::IncompatibleRecord("record lacks drift diagnostics".into()));
        }
        if rec.eps != eps {
            return Err(Error::IncompatibleRecord("records use different eps".into()));
        }
        let skip = usize::from(rec.times.len() > 1);
        let mut sums = [0.0f64; 3];
        let mut count = 0usize;
        for d in &rec.drift[skip..] {
            let qm = (1.0 + d.hminus1 * d.hminus1).powf(1.0 - a / 2.0);
            let q2 = (1.0 + d.l2 * d.l2).powf(1.0 - a / 2.0);
            let moment = d.l2.powf(a);
            sums[0] += eps * a * d.l2 * d.l2 / qm;
            sums[1] += moment;
            sums[2] += (eps * d.h1 * d.h1 + gamma * d.z_h1 * d.z_h1 + eps * d.f_l2 * d.f_l2) / q2;
            count += 1;
            if moment > c * (1.0 + d.l2 * d.l2) / qm * (1.0 + 1e-12) {
                violations += 1;
            }
        }
        for (w, s) in acc.iter_mut().zip(sums) {
            w.push(s / count as f64);
        }
    }
    let quantities = DRIFT_QUANTITIES
        .iter()
        .zip(&acc)
        .map(|(name, w)| DriftQuantity {
            name,
            time_average: w.mean(),
            std_error: w.std_error(),
            n_paths: w.count() as usize,
        })
        .collect();
    Ok(DriftReport {
        quantities,
        comparison_constant: c,
        comparison_violations: violations,
    })
}

pub fn write_drift_csv<W: Write>(report: &DriftReport, out: &mut W) -> std::io::Result<()> {
    writeln!(out, "# stefan-sim drift v1")?;
    writeln!(out, "quantity,time_average,std_error,n_paths")?;
    for q in &report.quantities {
        writeln!(out, "{},{},{},{}", q.name, q.time_average, q.std_error, q.n_paths)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::{run, Integrator, RunSettings, SchemeKind};
    use crate::levy::NoiseSpec;
    use crate::operators::StefanOperators;
    use std::f64::consts::{PI, SQRT_2};

    #[test]
    fn values() {
        let p = LyapunovParams::new(1.0).unwrap();
        let zero = SpectralField::<f64>::zeros(4);
        assert_eq!(p.f_value(&zero), 1.0);
        assert_eq!(p.h_value(&zero), 1.0);
        let u = SpectralField::basis_vector(4, 1).unwrap().scaled(PI);
        assert!((p.f_value(&u) - SQRT_2).abs() < 1e-15);
        assert!(p.f_value(&u.scaled(2.0)) >= p.f_value(&u));
        assert!(LyapunovParams::new(0.0).is_err());
        assert!(LyapunovParams::new(1.5).is_err());
        assert_eq!(LyapunovParams::default().alpha(), 0.5);
    }

    #[test]
    fn gradient_shape_and_directional_derivative() {
        let p = LyapunovParams::default();
        let zero = SpectralField::<f64>::zeros(4);
        assert_eq!(p.f_gradient(&zero), zero);
        let e1 = SpectralField::basis_vector(4, 1).unwrap();
        let u = e1.scaled(PI);
        let g = p.f_gradient(&u);
        assert!(g.coeffs()[0] > 0.0 && g.coeffs()[1..].iter().all(|&c| c == 0.0));
        let h = 1e-5;
        let fd = (p.f_value(&(&u + &e1.scaled(h))) - p.f_value(&(&u - &e1.scaled(h)))) / (2.0 * h);
        let an = g.inner(&e1, Space::Hminus1).unwrap();
        assert!((fd - an).abs() <= 1e-6 * an.abs());
    }

    #[test]
    fn hessian_at_origin_is_scaled_identity() {
        let p = LyapunovParams::new(0.7).unwrap();
        let zero = SpectralField::<f64>::zeros(3);
        let x = SpectralField::from_coeffs(vec![1.0, -2.0, 0.5]).unwrap();
        let hx = p.f_hessian_apply(&zero, &x).unwrap();
        for (a, b) in hx.coeffs().iter().zip(x.coeffs()) {
            assert!((a - 0.7 * b).abs() < 1e-15);
        }
    }

    #[test]
    fn drift_report_on_zero_path() {
        let integ = Integrator::new(StefanOperators::with_modes(8, EnthalpyParams::new(2.0, 1.0).unwrap()).unwrap());
        let mut s = RunSettings::new(0.01, 0.1).with_eps(0.1);
        s.record_drift = true;
        let zero = SpectralField::zeros(8);
        let rec = run(&integ, SchemeKind::ApproxSemiImplicit, &zero, &NoiseSpec::zero(8), &s).unwrap();
        let rep = drift_report(&[rec.clone(), rec], integ.operators().params(), &LyapunovParams::default()).unwrap();
        for q in &rep.quantities {
            assert_eq!(q.time_average, 0.0);
            assert_eq!(q.n_paths, 2);
        }
        assert_eq!(rep.comparison_violations, 0);
    }

    #[test]
    fn drift_report_rejects_plain_records() {
        let integ = Integrator::new(StefanOperators::with_modes(8, EnthalpyParams::new(2.0, 1.0).unwrap()).unwrap());
        let rec = run(
            &integ,
            SchemeKind::LimitImplicitEuler,
            &SpectralField::zeros(8),
            &NoiseSpec::zero(8),
            &RunSettings::new(0.01, 0.05),
        )
        .unwrap();
        let err = drift_report(&[rec], integ.operators().params(), &LyapunovParams::default());
        assert!(matches!(err, Err(Error::IncompatibleRecord(_))));
    }
}
