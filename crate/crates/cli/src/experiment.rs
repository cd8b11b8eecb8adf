//! Dispatch of a [`SimConfig`] to the simulation and estimator layers, and
//! persistence of the results.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;
use stefan_core::harness::{
    self, cesaro_bound, dyadic_levels, random_field, terminal_bound, unit_hminus1, Functional, OccupationRequest,
};
use stefan_core::integrator::{run, write_snapshots_csv, write_trajectory_csv};
use stefan_core::levy::{stream_rng, write_events_csv};
use stefan_core::lyapunov::{drift_report, write_drift_csv};
use stefan_core::opcheck::{self, CheckOutcome, OperatorSlack};
use stefan_core::{
    Basis, Error, Field, Integrator, NoiseStream, Operators, RunSettings, SolverSettings, TrajectoryRecord,
};

use crate::config::{ExperimentKind, InitialProfile, SimConfig};

/// Reserved stream of the master seed for random initial data and targets.
pub const INITIAL_DATA_STREAM: u64 = u64::MAX - 1;

pub const SOFTWARE: &str = concat!("stefan-sim ", env!("CARGO_PKG_VERSION"));

/// A failure, tagged with the stage that produced it.
#[derive(Debug, thiserror::Error)]
#[error("{stage}: {source}")]
pub struct ExperimentError {
    pub stage: String,
    #[source]
    pub source: Error,
}

#[derive(Serialize)]
struct ErrorRecord<'a> {
    status: &'static str,
    exit_code: i32,
    stage: &'a str,
    category: &'static str,
    message: String,
}

impl ExperimentError {
    pub fn new(stage: impl Into<String>, source: Error) -> Self {
        Self {
            stage: stage.into(),
            source,
        }
    }

    fn category(&self) -> &'static str {
        match self.source {
            Error::ConfigParse { .. } | Error::ConfigRule { .. } => "config",
            Error::Io(_) => "io",
            Error::InvalidParameter(_) | Error::OutOfRange { .. } | Error::InvalidNoise(_) if self.stage == "setup" => {
                "config"
            }
            _ => "solver",
        }
    }

    /// 2 configuration, 3 solver or simulation, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self.category() {
            "config" => 2,
            "io" => 4,
            _ => 3,
        }
    }

    /// One-line JSON description of the failure.
    pub fn record(&self) -> String {
        serde_json::to_string(&ErrorRecord {
            status: "error",
            exit_code: self.exit_code(),
            stage: &self.stage,
            category: self.category(),
            message: self.source.to_string(),
        })
        .expect("error record serializes")
    }
}

/// Where the outputs went.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub files: Vec<String>,
    /// Opcheck rows that failed (always empty for other kinds).
    pub failed_checks: Vec<String>,
    pub wall_seconds: f64,
}

struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    fn write(
        &mut self,
        name: &str,
        body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
    ) -> stefan_core::Result<()> {
        let mut w = BufWriter::new(File::create(self.dir.join(name))?);
        body(&mut w)?;
        w.flush()?;
        self.files.push(name.to_string());
        Ok(())
    }
}

/// Runs the configured experiment, writing `effective_config.txt`,
/// `<kind>_*.csv` and `manifest.txt` into `config.run.output_dir`.
pub fn run_experiment(config: &SimConfig) -> Result<RunSummary, ExperimentError> {
    let started = Instant::now();
    let mut config = config.clone();
    config.resolve_defaults();
    let config = &config;
    config.validate().map_err(|e| ExperimentError::new("config", e))?;
    let dir = config.run.output_dir.clone();
    std::fs::create_dir_all(&dir).map_err(|e| ExperimentError::new("output", Error::Io(e)))?;
    let mut out = Outputs { dir, files: Vec::new() };
    out.write("effective_config.txt", |w| w.write_all(config.echo().as_bytes()))
        .map_err(|e| ExperimentError::new("output", e))?;

    let kind = config.kind.name();
    let wrap = |e: Error| ExperimentError::new(kind, e);
    let failed_checks = match config.kind {
        ExperimentKind::Trajectory => trajectory(config, &mut out).map_err(wrap)?,
        ExperimentKind::Coupling => coupling(config, &mut out).map_err(wrap)?,
        ExperimentKind::CauchyRate => cauchy(config, &mut out).map_err(wrap)?,
        ExperimentKind::Occupation => occupation(config, &mut out).map_err(wrap)?,
        ExperimentKind::Cesaro => cesaro(config, &mut out).map_err(wrap)?,
        ExperimentKind::Hitting => hitting(config, &mut out).map_err(wrap)?,
        ExperimentKind::Support => support(config, &mut out).map_err(wrap)?,
        ExperimentKind::Eproperty => eproperty(config, &mut out).map_err(wrap)?,
        ExperimentKind::Opcheck => opcheck_tables(config, &mut out).map_err(wrap)?,
    };

    let wall_seconds = started.elapsed().as_secs_f64();
    let mut files = out.files.clone();
    files.push("manifest.txt".into());
    out.write("manifest.txt", |w| {
        writeln!(w, "# stefan-sim manifest v1")?;
        writeln!(w, "software = {SOFTWARE}")?;
        writeln!(w, "kind = {kind}")?;
        writeln!(w, "seed = {}", config.run.seed)?;
        writeln!(
            w,
            "streams = path p draws small jumps from ChaCha8 stream 2p and big jumps from stream 2p+1 of the seed; \
             random initial data use stream {INITIAL_DATA_STREAM}"
        )?;
        writeln!(w, "threads = {}", rayon::current_num_threads())?;
        writeln!(w, "outputs = {}", files.join(","))?;
        writeln!(w, "wall_time_seconds = {wall_seconds:.3}")
    })
    .map_err(|e| ExperimentError::new("output", e))?;
    Ok(RunSummary {
        output_dir: out.dir,
        files,
        failed_checks,
        wall_seconds,
    })
}

type Step = stefan_core::Result<Vec<String>>;

fn operators(config: &SimConfig, n_modes: usize) -> stefan_core::Result<Operators> {
    let settings = SolverSettings {
        tol: config.model.solver_tol,
        max_iter: config.model.solver_max_iter,
        ..SolverSettings::default()
    };
    Operators::new(Arc::new(Basis::new(n_modes)?), config.enthalpy()?, settings)
}

fn setup(config: &SimConfig, n_modes: usize) -> stefan_core::Result<harness::Setup<f64>> {
    Ok(harness::Setup {
        integrator: Integrator::new(operators(config, n_modes)?),
        noise: config.noise_spec(n_modes)?,
        scheme: config.scheme(),
        eps: config.model.eps,
        dt: config.time.dt,
        seed: config.run.seed,
        lyapunov: config.lyapunov()?,
    })
}

fn initial_field(config: &SimConfig, basis: &Basis<f64>) -> stefan_core::Result<Field> {
    let amp = config.experiment.initial_amplitude;
    let pi = std::f64::consts::PI;
    match config.experiment.initial {
        InitialProfile::TwoPhase => basis.sample(|x| amp * (pi * x).sin() - 1.0),
        InitialProfile::Sine => basis.sample(|x| amp * (pi * x).sin()),
        InitialProfile::Zero => Ok(Field::zeros(basis.n_modes())),
        InitialProfile::Random => {
            let mut rng = stream_rng(config.run.seed, INITIAL_DATA_STREAM);
            Ok(random_field(basis.n_modes(), amp, 1.0, &mut rng))
        }
    }
}

fn csv_name(config: &SimConfig, suffix: &str) -> String {
    format!("{}_{suffix}.csv", config.kind.name())
}

fn trajectory(config: &SimConfig, out: &mut Outputs) -> Step {
    let setup = setup(config, config.model.n_modes)?;
    let x0 = initial_field(config, setup.integrator.operators().basis())?;
    let scheme = setup.scheme;
    let records: Vec<TrajectoryRecord> = (0..config.run.n_paths as u64)
        .map(|p| {
            let mut s = RunSettings::new(config.time.dt, config.time.horizon)
                .with_eps(config.model.eps)
                .with_seed(config.run.seed, p)
                .with_stride(config.run.sample_stride);
            s.snapshot_stride = (config.run.snapshot_stride > 0).then_some(config.run.snapshot_stride);
            s.record_drift = scheme.uses_eps();
            run(&setup.integrator, scheme, &x0, &setup.noise, &s)?.into_result()
        })
        .collect::<stefan_core::Result<_>>()?;
    for (p, rec) in records.iter().enumerate() {
        out.write(&csv_name(config, &format!("path{p:04}")), |w| write_trajectory_csv(rec, w))?;
        if config.run.snapshot_stride > 0 {
            out.write(&csv_name(config, &format!("snapshots{p:04}")), |w| write_snapshots_csv(rec, w))?;
        }
    }
    let settings = RunSettings::new(config.time.dt, config.time.horizon);
    let mut stream = NoiseStream::new(&setup.noise, settings.effective_dt(), config.run.seed, 0)?.with_event_recording(true);
    let plans: Vec<_> = (0..settings.n_steps()).map(|_| stream.next_plan::<f64>()).collect();
    out.write(&csv_name(config, "events0000"), |w| write_events_csv(&plans, w))?;
    if scheme.uses_eps() {
        let report = drift_report(&records, setup.integrator.operators().params(), &setup.lyapunov)?;
        out.write(&csv_name(config, "drift"), |w| write_drift_csv(&report, w))?;
    }
    Ok(Vec::new())
}

fn coupling(config: &SimConfig, out: &mut Outputs) -> Step {
    let setup = setup(config, config.model.n_modes)?;
    let n = config.model.n_modes;
    let amp = config.experiment.initial_amplitude;
    let mut rng = stream_rng(config.run.seed, INITIAL_DATA_STREAM);
    let pairs: Vec<(Field, Field)> = (0..config.run.n_paths)
        .map(|_| (random_field(n, amp, 1.0, &mut rng), random_field(n, amp, 1.0, &mut rng)))
        .collect();
    let rep = harness::coupling_report(
        &setup,
        &pairs,
        config.time.horizon,
        config.run.sample_stride,
        config.experiment.coupling_slack,
    )?;
    out.write(&csv_name(config, "mean"), |w| harness::write_coupling_csv(&rep, w))?;
    out.write(&csv_name(config, "fit"), |w| {
        writeln!(w, "# stefan-sim coupling_fit v1")?;
        writeln!(w, "decay_rate,r_squared,fit_until,reference_rate,violations,slack,n_pairs")?;
        let (rate, r2) = rep.fit.map_or((f64::NAN, f64::NAN), |f| (f.slope, f.r_squared));
        let reference = if setup.scheme.uses_eps() { 2.0 * setup.eps } else { 0.0 };
        writeln!(
            w,
            "{rate},{r2},{},{reference},{},{},{}",
            rep.fit_until, rep.violations, rep.slack, rep.n_pairs
        )
    })?;
    Ok(Vec::new())
}

fn cauchy(config: &SimConfig, out: &mut Outputs) -> Step {
    let setup = setup(config, config.model.n_modes)?;
    let x0 = initial_field(config, setup.integrator.operators().basis())?;
    let rep = harness::cauchy_rate(
        &setup,
        &x0,
        &config.experiment.eps_grid,
        config.time.horizon,
        config.run.n_paths,
    )?;
    out.write(&csv_name(config, "pairs"), |w| harness::write_cauchy_csv(&rep, w))?;
    out.write(&csv_name(config, "a_priori"), |w| {
        writeln!(w, "# stefan-sim cauchy_a_priori v1")?;
        writeln!(w, "eps,mean_sup_l2_sq,std_error")?;
        for (e, m, s) in &rep.a_priori {
            writeln!(w, "{e},{m},{s}")?;
        }
        writeln!(w, "# kendall_tau {} p_value {}", rep.a_priori_trend.0, rep.a_priori_trend.1)
    })?;
    Ok(Vec::new())
}

fn occupation_request(config: &SimConfig) -> stefan_core::Result<OccupationRequest> {
    let x = &config.experiment;
    let mut req = OccupationRequest::new(config.time.horizon, config.burn_in(), config.run.n_paths);
    req.functionals = config.functionals()?;
    req.tail_levels = dyadic_levels(x.tail_start, x.tail_count);
    let bins = (x.histogram_max / x.histogram_step).round() as usize;
    req.histogram_edges = (0..=bins).map(|i| i as f64 * x.histogram_step).collect();
    Ok(req)
}

fn occupation(config: &SimConfig, out: &mut Outputs) -> Step {
    let setup = setup(config, config.model.n_modes)?;
    let x0 = initial_field(config, setup.integrator.operators().basis())?;
    let (stats, _) = harness::occupation(&setup, &x0, &occupation_request(config)?)?;
    let alpha = setup.lyapunov.alpha();
    out.write(&csv_name(config, "summary"), |w| harness::write_occupation_csv(&stats, alpha, w))?;
    out.write(&csv_name(config, "envelope"), |w| {
        writeln!(w, "# stefan-sim occupation_envelope v1")?;
        writeln!(w, "level,tail,tail_se,moment_bound,ratio_to_next,within_moment_bound,halves")?;
        for r in harness::envelope_rows(&stats, alpha) {
            let opt = |v: Option<String>| v.unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.level,
                r.tail,
                r.tail_se,
                r.moment_bound,
                opt(r.ratio_to_next.map(|v| v.to_string())),
                r.within_moment_bound,
                opt(r.halves.map(|v| v.to_string()))
            )?;
        }
        Ok(())
    })?;
    Ok(Vec::new())
}

/// Second initial datum at `H⁻¹` distance `separation` from the first.
pub fn separated_pair(basis: &Basis<f64>, x_a: &Field, separation: f64) -> stefan_core::Result<Field> {
    let pi = std::f64::consts::PI;
    let d = unit_hminus1(&basis.sample(|x| (3.0 * pi * x).sin() + 0.5 * x * (1.0 - x))?);
    let mut x_b = x_a.clone();
    x_b.axpy(separation, &d);
    Ok(x_b)
}

fn cesaro(config: &SimConfig, out: &mut Outputs) -> Step {
    let setup = setup(config, config.model.n_modes)?;
    let basis = setup.integrator.operators().basis().clone();
    let x_a = initial_field(config, &basis)?;
    let x_b = separated_pair(&basis, &x_a, config.experiment.separation)?;
    let functionals = config.functionals()?;
    let checkpoints = config.checkpoints();
    let rep = harness::cesaro_compare(&setup, &x_a, &x_b, &functionals, &checkpoints, config.run.n_paths)?;
    out.write(&csv_name(config, "differences"), |w| harness::write_cesaro_csv(&rep, w))?;
    out.write(&csv_name(config, "bounds"), |w| {
        writeln!(w, "# stefan-sim cesaro_bounds v1")?;
        writeln!(w, "horizon,functional,lipschitz,terminal_bound,cesaro_bound")?;
        let eps = if setup.scheme.uses_eps() { setup.eps } else { 0.0 };
        for &h in &checkpoints {
            for f in &functionals {
                if let Some(l) = f.lipschitz_hminus1(&setup.lyapunov) {
                    let (tb, cb) = if eps > 0.0 {
                        (
                            terminal_bound(l, eps, h, rep.initial_distance),
                            cesaro_bound(l, eps, h, rep.initial_distance),
                        )
                    } else {
                        (l * rep.initial_distance, l * rep.initial_distance)
                    };
                    writeln!(w, "{h},{},{l},{tb},{cb}", f.name())?;
                }
            }
        }
        Ok(())
    })?;
    Ok(Vec::new())
}

fn hitting(config: &SimConfig, out: &mut Outputs) -> Step {
    let setup = setup(config, config.model.n_modes)?;
    let n = config.model.n_modes;
    let x = &config.experiment;
    let mut rng = stream_rng(config.run.seed, INITIAL_DATA_STREAM);
    let x0 = random_field(n, x.initial_amplitude, 1.0, &mut rng);
    let x1 = random_field(n, x.hit_target_scale, 1.0, &mut rng);
    let est = harness::hitting_probability(&setup, &x0, &x1, x.hit_radius, x.hit_time, config.run.n_paths)?;
    out.write(&csv_name(config, "estimate"), |w| harness::write_hitting_csv(&est, w))?;
    Ok(Vec::new())
}

fn support(config: &SimConfig, out: &mut Outputs) -> Step {
    let n = config.model.n_modes;
    let coarse = setup(config, n)?;
    let fine = setup(config, 2 * n)?;
    let amp = config.experiment.initial_amplitude;
    let pi = std::f64::consts::PI;
    let profile = move |x: f64| match config.experiment.initial {
        InitialProfile::TwoPhase | InitialProfile::Random => amp * (pi * x).sin() - 1.0,
        InitialProfile::Sine => amp * (pi * x).sin(),
        InitialProfile::Zero => 0.0,
    };
    let rep = harness::support_diagnostic(&coarse, &fine, profile, &occupation_request(config)?)?;
    out.write(&csv_name(config, "quantiles"), |w| harness::write_support_csv(&rep, w))?;
    Ok(Vec::new())
}

fn eproperty(config: &SimConfig, out: &mut Outputs) -> Step {
    let setup = setup(config, config.model.n_modes)?;
    let x0 = initial_field(config, setup.integrator.operators().basis())?;
    let psi = config.functionals()?.into_iter().find(|f| f.lipschitz_hminus1(&setup.lyapunov).is_some());
    let psi = psi.unwrap_or(Functional::HminusOneNorm);
    let lipschitz = psi.lipschitz_hminus1(&setup.lyapunov).unwrap_or(1.0);
    let x = &config.experiment;
    let rows = harness::e_property_probe(
        &setup,
        psi,
        lipschitz,
        &x0,
        &x.radii,
        &config.times(),
        x.n_directions,
        config.run.n_paths,
    )?;
    out.write(&csv_name(config, "rows"), |w| write_eproperty(&rows, psi, w))?;
    Ok(Vec::new())
}

fn write_eproperty(rows: &[harness::EPropertyRow], psi: Functional, w: &mut impl Write) -> std::io::Result<()> {
    harness::write_eproperty_csv(rows, w)?;
    writeln!(w, "# functional {}", psi.name())
}

fn opcheck_tables(config: &SimConfig, out: &mut Outputs) -> Step {
    let samples = config.experiment.opcheck_samples;
    let seed = config.run.seed;
    let params = config.enthalpy()?;
    let ops = operators(config, config.model.n_modes)?;
    let eps = if config.model.eps > 0.0 && params.check_eps(config.model.eps).is_ok() {
        config.model.eps
    } else {
        params.eps0() / 2.0
    };
    let mut rows: Vec<CheckOutcome> = opcheck::enthalpy_suite(&params, samples, seed)?;
    rows.extend(opcheck::yosida_suite(&ops, eps, samples, seed, OperatorSlack::default())?);
    rows.extend(opcheck::resolvent_suite(&ops, eps, samples, seed, OperatorSlack::default())?);
    rows.extend(opcheck::lyapunov_suite(&config.lyapunov()?, config.model.n_modes, samples, seed)?);
    out.write(&csv_name(config, "table"), |w| opcheck::write_opcheck_csv(&rows, w))?;
    Ok(rows
        .iter()
        .filter(|c| !c.passed())
        .map(|c| format!("{}::{}", c.suite, c.name))
        .collect())
}

/// Reads the configuration, applies overrides and runs it.
pub fn run_from_file(
    path: &Path,
    output_dir: Option<PathBuf>,
    seed: Option<u64>,
) -> Result<RunSummary, ExperimentError> {
    let mut config = SimConfig::parse_file(path).map_err(|e| match e {
        Error::Io(io) => ExperimentError::new("config", Error::ConfigRule {
            rule: "config_file",
            message: format!("cannot read {}: {io}", path.display()),
        }),
        e => ExperimentError::new("config", e),
    })?;
    if let Some(dir) = output_dir {
        config.run.output_dir = dir;
    }
    if let Some(seed) = seed {
        config.run.seed = seed;
    }
    run_experiment(&config)
}
