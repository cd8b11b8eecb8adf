//! Experiment configuration: TOML (`key = value` lines grouped in sections).
//!
//! Parsing fills every default in, so the echoed effective configuration
//! parses back to an identical [`SimConfig`].

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stefan_core::harness::Functional;
use stefan_core::levy::{Atom, Intensity, NoiseKind};
use stefan_core::{EnthalpyParams, Error, LyapunovParams, NoiseSpec, Result, SchemeKind, SpectralField};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Trajectory,
    Coupling,
    CauchyRate,
    Occupation,
    Cesaro,
    Hitting,
    Support,
    Eproperty,
    Opcheck,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 9] = [
        ExperimentKind::Trajectory,
        ExperimentKind::Coupling,
        ExperimentKind::CauchyRate,
        ExperimentKind::Occupation,
        ExperimentKind::Cesaro,
        ExperimentKind::Hitting,
        ExperimentKind::Support,
        ExperimentKind::Eproperty,
        ExperimentKind::Opcheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Trajectory => "trajectory",
            ExperimentKind::Coupling => "coupling",
            ExperimentKind::CauchyRate => "cauchy_rate",
            ExperimentKind::Occupation => "occupation",
            ExperimentKind::Cesaro => "cesaro",
            ExperimentKind::Hitting => "hitting",
            ExperimentKind::Support => "support",
            ExperimentKind::Eproperty => "eproperty",
            ExperimentKind::Opcheck => "opcheck",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeChoice {
    /// `approx` when `eps > 0`, `limit` when `eps = 0`.
    Auto,
    Approx,
    Limit,
    SmallOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub n_modes: usize,
    pub a: f64,
    pub rho: f64,
    /// `0` disables the regularization and selects the limit scheme under `auto`.
    pub eps: f64,
    /// Defaults to `min(a, 1) / 2`.
    pub eps0: Option<f64>,
    pub scheme: SchemeChoice,
    /// Lyapunov exponent `α ∈ (0, 1]`.
    pub alpha: f64,
    pub solver_tol: f64,
    pub solver_max_iter: usize,
    /// Accept `dt > eps / 4` for the semi-implicit scheme.
    pub allow_unstable_dt: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            n_modes: 16,
            a: 2.0,
            rho: 1.0,
            eps: 0.05,
            eps0: None,
            scheme: SchemeChoice::Auto,
            alpha: 0.5,
            solver_tol: 1e-10,
            solver_max_iter: 200,
            allow_unstable_dt: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeSection {
    pub dt: f64,
    pub horizon: f64,
    /// Defaults to `horizon / 4`.
    pub burn_in: Option<f64>,
}

impl Default for TimeSection {
    fn default() -> Self {
        Self {
            dt: 0.0125,
            horizon: 10.0,
            burn_in: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseFamily {
    /// Cylindrical compound Poisson with `μ({1}) = μ({−√2}) = 1`.
    Example3,
    CylindricalAtomic,
    CylindricalStable,
    Subordinated,
    CompoundPoisson,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    pub family: NoiseFamily,
    /// Mode weights `weight_scale · i^{−weight_decay}`.
    pub weight_scale: f64,
    pub weight_decay: f64,
    /// `[value, rate]` pairs of the one-dimensional intensity (`cylindrical_atomic`).
    pub atoms: Vec<[f64; 2]>,
    pub stable_alpha: f64,
    /// `Q` eigenvalues `q_scale · i^{−q_decay}` (`subordinated`).
    pub q_scale: f64,
    pub q_decay: f64,
    pub alpha_bar: f64,
    /// `[mode, amplitude, rate]`: mark `amplitude · e_mode` (`compound_poisson`).
    pub marks: Vec<[f64; 3]>,
    /// Inner cutoff for stable small jumps.
    pub truncation: f64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self {
            family: NoiseFamily::Example3,
            weight_scale: 1.0,
            weight_decay: 1.0,
            atoms: vec![[1.0, 1.0], [-std::f64::consts::SQRT_2, 1.0]],
            stable_alpha: 1.5,
            q_scale: 1.0,
            q_decay: 2.0,
            alpha_bar: 1.5,
            marks: vec![[1.0, 1.0, 1.0]],
            truncation: 1e-3,
        }
    }
}

/// Seeds above `i64::MAX` are written as strings (TOML integers are signed).
mod seed_format {
    use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(seed: &u64, s: S) -> Result<S::Ok, S::Error> {
        match i64::try_from(*seed) {
            Ok(v) => v.serialize(s),
            Err(_) => seed.to_string().serialize(s),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Int(i64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Int(v) => u64::try_from(v).map_err(|_| de::Error::custom("seed must be nonnegative")),
            Raw::Text(t) => t.parse().map_err(|_| de::Error::custom(format!("invalid seed `{t}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    #[serde(with = "seed_format")]
    pub seed: u64,
    pub n_paths: usize,
    pub output_dir: PathBuf,
    pub sample_stride: usize,
    /// `0` records no grid snapshots.
    pub snapshot_stride: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 2024,
            n_paths: 1,
            output_dir: PathBuf::from("stefan-sim-out"),
            sample_stride: 1,
            snapshot_stride: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialProfile {
    /// `amplitude · sin(πξ) − 1`: ice near the walls, water inside.
    TwoPhase,
    Sine,
    Zero,
    /// Coefficients `amplitude · N(0,1) / k`.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub initial: InitialProfile,
    pub initial_amplitude: f64,
    /// `H⁻¹` distance between the two initial data of `cesaro`.
    pub separation: f64,
    pub functionals: Vec<String>,
    pub eps_grid: Vec<f64>,
    /// Defaults to `[horizon / 4, horizon]`.
    pub checkpoints: Option<Vec<f64>>,
    pub tail_start: f64,
    pub tail_count: usize,
    pub histogram_max: f64,
    pub histogram_step: f64,
    pub coupling_slack: f64,
    pub hit_radius: f64,
    pub hit_target_scale: f64,
    pub hit_time: f64,
    pub radii: Vec<f64>,
    /// Defaults to `[horizon / 2, horizon]`.
    pub times: Option<Vec<f64>>,
    pub n_directions: usize,
    pub opcheck_samples: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            initial: InitialProfile::TwoPhase,
            initial_amplitude: 2.0,
            separation: 1.0,
            functionals: Functional::default_set().iter().map(|f| f.name()).collect(),
            eps_grid: vec![0.1, 0.05, 0.025, 0.0125],
            checkpoints: None,
            tail_start: 0.25,
            tail_count: 8,
            histogram_max: 10.0,
            histogram_step: 0.5,
            coupling_slack: 1e-9,
            hit_radius: 0.1,
            hit_target_scale: 0.2,
            hit_time: 1.0,
            radii: vec![0.05, 0.1, 0.2, 0.4],
            times: None,
            n_directions: 4,
            opcheck_samples: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub time: TimeSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
}

fn rule(rule: &'static str, message: impl Into<String>) -> Error {
    Error::ConfigRule {
        rule,
        message: message.into(),
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl SimConfig {
    /// Configuration of the given kind with section defaults; the derived
    /// defaults stay unset until [`SimConfig::resolve_defaults`].
    pub fn with_kind(kind: ExperimentKind) -> Self {
        Self {
            kind,
            model: ModelSection::default(),
            time: TimeSection::default(),
            noise: NoiseSection::default(),
            run: RunSection::default(),
            experiment: ExperimentSection::default(),
        }
    }

    pub fn parse_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_str(&text)
    }

    /// Parses, fills defaults in and validates.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut c: SimConfig = toml::from_str(text).map_err(|e| Error::ConfigParse {
            line: e.span().map_or(0, |s| line_of(text, s.start)),
            message: e.message().to_string(),
        })?;
        c.resolve_defaults();
        c.validate()?;
        Ok(c)
    }

    /// The effective configuration as TOML.
    pub fn echo(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Fills the defaults that depend on other fields (burn-in, checkpoints,
    /// probe times, `eps0`), as parsing does.
    pub fn resolve_defaults(&mut self) {
        let h = self.time.horizon;
        self.model.eps0.get_or_insert(self.model.a.min(1.0) / 2.0);
        self.time.burn_in.get_or_insert(h / 4.0);
        self.experiment.checkpoints.get_or_insert_with(|| vec![h / 4.0, h]);
        self.experiment.times.get_or_insert_with(|| vec![h / 2.0, h]);
    }

    pub fn eps0(&self) -> f64 {
        self.model.eps0.unwrap_or(self.model.a.min(1.0) / 2.0)
    }

    pub fn burn_in(&self) -> f64 {
        self.time.burn_in.unwrap_or(self.time.horizon / 4.0)
    }

    pub fn checkpoints(&self) -> Vec<f64> {
        let h = self.time.horizon;
        self.experiment.checkpoints.clone().unwrap_or_else(|| vec![h / 4.0, h])
    }

    pub fn times(&self) -> Vec<f64> {
        let h = self.time.horizon;
        self.experiment.times.clone().unwrap_or_else(|| vec![h / 2.0, h])
    }

    /// Scheme after resolving `auto`; `cauchy_rate` always runs the small-jump equation.
    pub fn scheme(&self) -> SchemeKind {
        if self.kind == ExperimentKind::CauchyRate {
            return SchemeKind::SmallJumpOnly;
        }
        match self.model.scheme {
            SchemeChoice::Auto if self.model.eps > 0.0 => SchemeKind::ApproxSemiImplicit,
            SchemeChoice::Auto | SchemeChoice::Limit => SchemeKind::LimitImplicitEuler,
            SchemeChoice::Approx => SchemeKind::ApproxSemiImplicit,
            SchemeChoice::SmallOnly => SchemeKind::SmallJumpOnly,
        }
    }

    pub fn enthalpy(&self) -> Result<EnthalpyParams<f64>> {
        EnthalpyParams::with_eps0(self.model.a, self.model.rho, self.eps0())
    }

    pub fn lyapunov(&self) -> Result<LyapunovParams> {
        LyapunovParams::new(self.model.alpha)
    }

    pub fn functionals(&self) -> Result<Vec<Functional>> {
        self.experiment
            .functionals
            .iter()
            .map(|name| {
                Functional::from_name(name).ok_or_else(|| rule("functional_name", format!("unknown functional `{name}`")))
            })
            .collect()
    }

    /// Noise at `n_modes` modes.
    pub fn noise_spec(&self, n_modes: usize) -> Result<NoiseSpec> {
        let ns = &self.noise;
        let weights = NoiseSpec::power_weights(n_modes, ns.weight_scale, ns.weight_decay);
        let atoms = || {
            ns.atoms
                .iter()
                .map(|&[value, rate]| Atom { value, rate })
                .collect::<Vec<_>>()
        };
        let kind = match ns.family {
            NoiseFamily::None => return Ok(NoiseSpec::zero(n_modes)),
            NoiseFamily::Example3 => {
                let mut spec = NoiseSpec::example3(weights)?;
                spec.truncation = ns.truncation;
                return Ok(spec);
            }
            NoiseFamily::CylindricalAtomic => NoiseKind::CylindricalLevy {
                weights,
                intensity: Intensity::Atomic { atoms: atoms() },
            },
            NoiseFamily::CylindricalStable => NoiseKind::CylindricalLevy {
                weights,
                intensity: Intensity::Stable { alpha: ns.stable_alpha },
            },
            NoiseFamily::Subordinated => NoiseKind::SubordinatedWiener {
                q: NoiseSpec::power_weights(n_modes, ns.q_scale, ns.q_decay),
                alpha_bar: ns.alpha_bar,
            },
            NoiseFamily::CompoundPoisson => {
                let mut marks = Vec::with_capacity(ns.marks.len());
                for &[mode, amplitude, rate] in &ns.marks {
                    if mode.fract() != 0.0 || mode < 1.0 || mode as usize > n_modes {
                        return Err(rule("noise_marks", format!("mark mode {mode} is not in 1..={n_modes}")));
                    }
                    let e = SpectralField::<f64>::basis_vector(n_modes, mode as usize)?;
                    marks.push((e.scaled(amplitude), rate));
                }
                NoiseKind::CompoundPoisson { atoms: marks }
            }
        };
        NoiseSpec::new(kind, n_modes, ns.truncation)
    }

    /// Checks every invariant; the error names the violated rule.
    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        let t = &self.time;
        let x = &self.experiment;
        if m.n_modes < 8 {
            return Err(rule("n_modes_min", format!("n_modes = {} must be at least 8", m.n_modes)));
        }
        if !(t.dt > 0.0 && t.dt.is_finite()) {
            return Err(rule("dt_positive", format!("dt = {} must be positive", t.dt)));
        }
        let burn_in = self.burn_in();
        if !(t.horizon.is_finite() && burn_in >= 0.0 && t.horizon > burn_in) {
            return Err(rule(
                "horizon_after_burn_in",
                format!("need horizon > burn_in >= 0, got horizon = {}, burn_in = {burn_in}", t.horizon),
            ));
        }
        let params = self.enthalpy().map_err(|e| rule("enthalpy_params", e.to_string()))?;
        self.lyapunov().map_err(|e| rule("alpha_range", e.to_string()))?;
        if !(m.solver_tol > 0.0) || m.solver_max_iter == 0 {
            return Err(rule("solver_settings", "solver_tol must be positive and solver_max_iter at least 1"));
        }
        if !(m.eps >= 0.0) {
            return Err(rule("eps_range", format!("eps = {} must be nonnegative", m.eps)));
        }
        let scheme = self.scheme();
        let eps_values: Vec<f64> = if self.kind == ExperimentKind::CauchyRate {
            if x.eps_grid.len() < 2 {
                return Err(rule("eps_grid", "cauchy_rate needs at least two eps values"));
            }
            x.eps_grid.clone()
        } else if scheme.uses_eps() {
            vec![m.eps]
        } else {
            Vec::new()
        };
        for &e in &eps_values {
            if params.check_eps(e).is_err() {
                return Err(rule(
                    "eps_range",
                    format!("eps = {e} must lie in (0, eps0 = {}) for the {} scheme", self.eps0(), scheme.name()),
                ));
            }
            if t.dt > e / 4.0 && !m.allow_unstable_dt {
                return Err(rule(
                    "dt_stability",
                    format!("dt = {} exceeds eps/4 = {}; set allow_unstable_dt = true to override", t.dt, e / 4.0),
                ));
            }
        }
        if self.run.n_paths == 0 {
            return Err(rule("n_paths_positive", "n_paths must be at least 1"));
        }
        if self.run.sample_stride == 0 {
            return Err(rule("sample_stride_positive", "sample_stride must be at least 1"));
        }
        self.noise_spec(m.n_modes).map_err(|e| match e {
            e @ Error::ConfigRule { .. } => e,
            e => rule("noise_spec", e.to_string()),
        })?;
        self.functionals()?;
        let positive = |v: &[f64]| !v.is_empty() && v.iter().all(|&c| c > 0.0 && c <= t.horizon);
        if !positive(&self.checkpoints()) {
            return Err(rule("checkpoints", "checkpoints must be nonempty and lie in (0, horizon]"));
        }
        if !positive(&self.times()) {
            return Err(rule("times", "times must be nonempty and lie in (0, horizon]"));
        }
        if !(x.tail_start > 0.0) || x.tail_count == 0 {
            return Err(rule("tail_levels", "tail_start must be positive and tail_count at least 1"));
        }
        if !(x.histogram_step > 0.0 && x.histogram_max > x.histogram_step) {
            return Err(rule("histogram", "need 0 < histogram_step < histogram_max"));
        }
        if !(x.hit_radius > 0.0 && x.hit_time > 0.0 && x.hit_target_scale >= 0.0) {
            return Err(rule("hitting", "hit_radius and hit_time must be positive"));
        }
        if x.radii.is_empty() || x.radii.iter().any(|&r| !(r >= 0.0)) || x.n_directions == 0 {
            return Err(rule("eproperty", "radii must be nonnegative and n_directions at least 1"));
        }
        if !(x.separation > 0.0) || !(x.initial_amplitude >= 0.0) {
            return Err(rule("initial_data", "separation must be positive and initial_amplitude nonnegative"));
        }
        if x.opcheck_samples == 0 {
            return Err(rule("opcheck_samples", "opcheck_samples must be at least 1"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rule_of(r: Result<SimConfig>) -> &'static str {
        match r {
            Err(Error::ConfigRule { rule, .. }) => rule,
            other => panic!("expected a rule violation, got {other:?}"),
        }
    }

    #[test]
    fn minimal_file_gets_documented_defaults() {
        let c = SimConfig::parse_str("kind = \"trajectory\"\n").unwrap();
        let mut d = SimConfig::with_kind(ExperimentKind::Trajectory);
        d.resolve_defaults();
        assert_eq!(c, d);
        assert_eq!(c.model.n_modes, 16);
        assert_eq!(c.model.eps0, Some(0.5));
        assert_eq!(c.time.burn_in, Some(2.5));
        assert_eq!(c.scheme(), SchemeKind::ApproxSemiImplicit);
        assert_eq!(c.run.seed, 2024);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = SimConfig::parse_str("kind = \"trajectory\"\n[model]\nepsilonn = 0.1\n").unwrap_err();
        match err {
            Error::ConfigParse { line, message } => {
                assert_eq!(line, 3);
                assert!(message.contains("epsilonn"), "{message}");
            }
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn syntax_error_has_line() {
        let err = SimConfig::parse_str("kind = \"trajectory\"\n\n[time]\ndt = = 1\n").unwrap_err();
        assert!(matches!(err, Error::ConfigParse { line: 4, .. }), "{err:?}");
    }

    #[test]
    fn stability_rule() {
        let text = "kind = \"trajectory\"\n[model]\neps = 0.05\n[time]\ndt = 0.02\n";
        assert_eq!(rule_of(SimConfig::parse_str(text)), "dt_stability");
        let ok = format!("{text}\n");
        let ok = ok.replace("eps = 0.05", "eps = 0.05\nallow_unstable_dt = true");
        assert!(SimConfig::parse_str(&ok).is_ok());
        // the limit scheme has no such restriction
        let limit = text.replace("eps = 0.05", "eps = 0.0");
        assert_eq!(SimConfig::parse_str(&limit).unwrap().scheme(), SchemeKind::LimitImplicitEuler);
    }

    #[test]
    fn named_rules() {
        let k = "kind = \"occupation\"\n";
        assert_eq!(rule_of(SimConfig::parse_str(&format!("{k}[model]\nn_modes = 4\n"))), "n_modes_min");
        assert_eq!(rule_of(SimConfig::parse_str(&format!("{k}[model]\neps = 0.7\n"))), "eps_range");
        assert_eq!(
            rule_of(SimConfig::parse_str(&format!("{k}[time]\nhorizon = 1.0\nburn_in = 2.0\n"))),
            "horizon_after_burn_in"
        );
        assert_eq!(rule_of(SimConfig::parse_str(&format!("{k}[model]\nalpha = 1.5\n"))), "alpha_range");
        assert_eq!(rule_of(SimConfig::parse_str(&format!("{k}[run]\nn_paths = 0\n"))), "n_paths_positive");
        assert_eq!(
            rule_of(SimConfig::parse_str(&format!("{k}[noise]\nfamily = \"cylindrical_stable\"\nstable_alpha = 2.5\n"))),
            "noise_spec"
        );
        assert_eq!(
            rule_of(SimConfig::parse_str(&format!("{k}[experiment]\nfunctionals = [\"nope\"]\n"))),
            "functional_name"
        );
        let cauchy = "kind = \"cauchy_rate\"\n[time]\ndt = 0.01\n";
        assert_eq!(rule_of(SimConfig::parse_str(cauchy)), "dt_stability");
    }

    #[test]
    fn echo_round_trips() {
        let text = r#"
kind = "cesaro"
[model]
n_modes = 12
eps = 0.03
[time]
dt = 0.005
horizon = 7.5
[noise]
family = "compound_poisson"
marks = [[2.0, 0.5, 3.0]]
[run]
seed = "18446744073709551615"
output_dir = "elsewhere"
[experiment]
checkpoints = [1.5, 7.5]
"#;
        let c = SimConfig::parse_str(text).unwrap();
        assert_eq!(c.run.seed, u64::MAX);
        let again = SimConfig::parse_str(&c.echo()).unwrap();
        assert_eq!(again, c);
        for kind in [ExperimentKind::Opcheck, ExperimentKind::Support, ExperimentKind::CauchyRate] {
            let mut c = SimConfig::with_kind(kind);
            c.time.dt = 0.003125;
            c.resolve_defaults();
            assert_eq!(SimConfig::parse_str(&c.echo()).unwrap(), c);
        }
    }

    #[test]
    fn noise_families_build() {
        for family in [
            NoiseFamily::Example3,
            NoiseFamily::CylindricalAtomic,
            NoiseFamily::CylindricalStable,
            NoiseFamily::Subordinated,
            NoiseFamily::CompoundPoisson,
            NoiseFamily::None,
        ] {
            let mut c = SimConfig::with_kind(ExperimentKind::Trajectory);
            c.noise.family = family;
            let spec = c.noise_spec(8).unwrap();
            assert_eq!(spec.n_modes(), 8);
        }
    }
}
