//! One function per mode. Each writes its records and figures into the run
//! directory and returns the path of its key-value summary.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nvsr_core::coherence::{g2_time_integrated_ensemble, g2_zero_ensemble, g2_zero_gaussian};
use nvsr_core::error::Error as CoreError;
use nvsr_core::fitting::{
    compare_models, fit_superradiant, lifetime_1e, synthesize_trace, DecayTrace, FitResult, ForwardModel,
};
use nvsr_core::ladder::{bulk_gamma, bulk_isc_0, bulk_isc_1};
use nvsr_core::physics::{angular_factor, dipole_dipole_strength, isc_lifetime_ratio, mean_separation, DipoleGeometry};
use nvsr_core::units::{mhz_to_rate, nm, ns, rate_to_mhz, to_nm, to_ns};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Mode, ParamsSection, RunConfig};
use crate::csvio::{emit_decay_csv, ingest_decay_csv, write_file, write_table};
use crate::error::{CliError, CliResult};
use crate::plot::{Figure, Marker, Series};

/// Validates, prepares the run directory and dispatches on the mode.
pub fn run(cfg: &RunConfig) -> CliResult<PathBuf> {
    cfg.validate()?;
    let dir = cfg.out_dir.as_path();
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    write_file(&dir.join("config.toml"), cfg.to_toml_string().as_bytes())?;
    if matches!(cfg.mode, Mode::Fit | Mode::Compare) && cfg.input.as_ref().is_some_and(|p| p.is_dir()) {
        return batch(cfg, dir);
    }
    match cfg.mode {
        Mode::Simulate => simulate(cfg, dir),
        Mode::Fit => fit(cfg, dir),
        Mode::Compare => compare(cfg, dir),
        Mode::G2 => g2(cfg, dir),
        Mode::DdEstimate => dd_estimate(cfg, dir),
    }
}

#[derive(Serialize)]
struct BatchEntry {
    input: String,
    exit_code: i32,
    summary: Option<String>,
    error: Option<String>,
}

#[derive(Serialize)]
struct BatchSummary {
    traces: Vec<BatchEntry>,
}

/// Every `*.csv` in the input directory is processed in parallel into its
/// own subdirectory. The batch fails with the worst exit code of its traces.
fn batch(cfg: &RunConfig, dir: &Path) -> CliResult<PathBuf> {
    let input = cfg.input.as_ref().expect("checked by caller");
    let mut files: Vec<PathBuf> = std::fs::read_dir(input)
        .map_err(|e| CliError::io(input, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Validation(format!("input: no .csv files in {}", input.display())));
    }
    let outcomes: Vec<(PathBuf, CliResult<PathBuf>)> = files
        .par_iter()
        .map(|f| {
            let stem = f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let mut one = cfg.clone();
            one.input = Some(f.clone());
            one.out_dir = dir.join(stem);
            (f.clone(), run(&one))
        })
        .collect();
    let mut worst: Option<CliError> = None;
    let traces = outcomes
        .into_iter()
        .map(|(f, r)| match r {
            Ok(p) => BatchEntry { input: f.display().to_string(), exit_code: 0, summary: Some(p.display().to_string()), error: None },
            Err(e) => {
                let entry =
                    BatchEntry { input: f.display().to_string(), exit_code: e.exit_code(), summary: None, error: Some(e.to_string()) };
                if worst.as_ref().is_none_or(|w| e.exit_code() > w.exit_code()) {
                    worst = Some(e);
                }
                entry
            }
        })
        .collect();
    let path = write_summary(dir, "batch.toml", &BatchSummary { traces })?;
    match worst {
        None => Ok(path),
        Some(e) => Err(e),
    }
}

fn write_summary<T: Serialize>(dir: &Path, name: &str, value: &T) -> CliResult<PathBuf> {
    let path = dir.join(name);
    let text = toml::to_string(value).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    write_file(&path, text.as_bytes())?;
    Ok(path)
}

fn decay_figure(title: &str, trace: &DecayTrace, curves: &[(&str, &[f64])], markers: Vec<Marker>) -> Figure {
    let t: Vec<f64> = trace.centers().iter().map(|&c| to_ns(c)).collect();
    let mut series = vec![Series::line("counts", t.iter().copied().zip(trace.counts.iter().copied()).collect())];
    for (name, y) in curves {
        series.push(Series::line(*name, t.iter().copied().zip(y.iter().copied()).collect()));
    }
    Figure {
        title: title.into(),
        x_label: "time (ns)".into(),
        y_label: "counts per bin".into(),
        log_y: true,
        series,
        markers,
    }
}

#[derive(Serialize)]
struct SimulateSummary {
    n_bins: usize,
    bin_ps: f64,
    /// Single-exponential 1/e time over the first ns after the peak of the
    /// noiseless curve.
    lifetime_1e_ns: f64,
    /// The same on the noisy histogram.
    lifetime_1e_noisy_ns: Option<f64>,
    peak_time_ns: f64,
    total_counts: f64,
    trace_file: String,
    params: ParamsSection,
}

fn simulate(cfg: &RunConfig, dir: &Path) -> CliResult<PathBuf> {
    let p = cfg.model_params();
    let edges = cfg.grid.edges();
    let irf = cfg.irf_spec();
    let model = ForwardModel::new(&edges, &irf, cfg.initial_state.clone())?;
    let shape = model.expected(&p)?;
    let s = &cfg.synthetic;
    let seed = s.noise.then_some(cfg.seed);
    let trace = synthesize_trace(&shape, &edges, &irf, s.peak_counts, s.background, seed, "simulated")?;
    let expected = synthesize_trace(&shape, &edges, &irf, s.peak_counts, s.background, None, "expected")?;
    emit_decay_csv(&trace, &dir.join("trace.csv"))?;

    let tau = lifetime_1e(&expected)?;
    let noisy = if s.noise { lifetime_1e(&trace).ok().map(to_ns) } else { None };
    let t_peak = expected.centers()[expected.peak_index()];
    decay_figure(
        "simulated decay",
        &trace,
        &[("expected", &expected.counts)],
        vec![Marker::Vertical { name: format!("1/e at {:.3} ns", to_ns(tau)), x: to_ns(t_peak + tau) }],
    )
    .save(dir, "decay")?;
    write_summary(
        dir,
        "simulate.toml",
        &SimulateSummary {
            n_bins: trace.n_bins(),
            bin_ps: cfg.grid.bin_ps,
            lifetime_1e_ns: to_ns(tau),
            lifetime_1e_noisy_ns: noisy,
            peak_time_ns: to_ns(t_peak),
            total_counts: trace.counts.iter().sum(),
            trace_file: "trace.csv".into(),
            params: cfg.params.clone(),
        },
    )
}

fn input_trace(cfg: &RunConfig) -> CliResult<DecayTrace> {
    let path = cfg.input.as_ref().expect("validated");
    let mut trace = ingest_decay_csv(path)?;
    // a file without an IRF header takes the configured response
    if trace.irf == nvsr_core::propagator::IrfSpec::gaussian(0.0) {
        trace.irf = cfg.irf_spec();
    }
    Ok(trace)
}

/// Fit record in boundary units.
#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct FitRecord {
    pub model: String,
    pub converged: bool,
    pub n_max: usize,
    pub gamma_mhz: f64,
    pub gamma_d_0_mhz: f64,
    pub gamma_d_1_mhz: f64,
    pub p0: f64,
    pub loss: String,
    pub residual: f64,
    pub initial_residual: f64,
    pub sum_squares: f64,
    pub parameters: BTreeMap<String, f64>,
    pub per_model_scores: BTreeMap<String, f64>,
    pub covariance_labels: Vec<String>,
    pub covariance: Vec<Vec<f64>>,
    pub warnings: Vec<String>,
}

impl FitRecord {
    pub fn new(r: &FitResult, converged: bool) -> Self {
        FitRecord {
            model: r.model.clone(),
            converged,
            n_max: r.n_max,
            gamma_mhz: rate_to_mhz(r.gamma),
            gamma_d_0_mhz: rate_to_mhz(r.gamma_d_0),
            gamma_d_1_mhz: rate_to_mhz(r.gamma_d_1),
            p0: r.p0,
            loss: format!("{:?}", r.loss),
            residual: r.residual,
            initial_residual: r.initial_residual,
            sum_squares: r.sum_squares,
            parameters: r.parameters.clone(),
            per_model_scores: r.per_model_scores.clone(),
            covariance_labels: r.covariance_labels.clone(),
            covariance: r
                .covariance_estimate
                .as_ref()
                .map(|c| c.row_iter().map(|row| row.iter().copied().collect()).collect())
                .unwrap_or_default(),
            warnings: r.warnings.clone(),
        }
    }
}

fn fit(cfg: &RunConfig, dir: &Path) -> CliResult<PathBuf> {
    let trace = input_trace(cfg)?;
    let (result, failure) = match fit_superradiant(&trace, &cfg.fit_config()) {
        Ok(r) => (r, None),
        Err(e) => match e.root() {
            CoreError::Fit { best: Some(b), .. } => ((**b).clone(), Some(e.to_string())),
            _ => return Err(e.into()),
        },
    };
    let t: Vec<f64> = trace.centers().iter().map(|&c| to_ns(c)).collect();
    write_table(
        &dir.join("fit_curve.csv"),
        &["time_ns", "counts", "model"],
        t.iter()
            .zip(&trace.counts)
            .zip(&result.curve)
            .map(|((t, c), m)| vec![format!("{t}"), format!("{c}"), format!("{m}")]),
    )?;
    decay_figure("superradiant fit", &trace, &[("model", &result.curve)], Vec::new()).save(dir, "decay_fit")?;
    let path = write_summary(dir, "fit.toml", &FitRecord::new(&result, failure.is_none()))?;
    match failure {
        None => Ok(path),
        Some(msg) => Err(CliError::Fit(msg)),
    }
}

#[derive(Serialize)]
struct CompareSummary {
    scores: BTreeMap<String, f64>,
    sum_squares: BTreeMap<String, f64>,
    /// Score of each model over the superradiant score.
    ratios: BTreeMap<String, f64>,
    sum_squares_ratios: BTreeMap<String, f64>,
    errors: BTreeMap<String, String>,
    fits: BTreeMap<String, FitRecord>,
}

fn compare(cfg: &RunConfig, dir: &Path) -> CliResult<PathBuf> {
    let trace = input_trace(cfg)?;
    let cmp = compare_models(&trace, &cfg.fit_config())?;
    let models = ["superradiant", "biexponential", "deformed_exponential"];
    let cell = |m: &BTreeMap<String, f64>, k: &str| m.get(k).map_or(String::new(), |v| format!("{v}"));
    write_table(
        &dir.join("compare.csv"),
        &["model", "score", "sum_squares", "ratio", "sum_squares_ratio", "error"],
        models.iter().map(|&k| {
            vec![
                k.to_string(),
                cell(&cmp.scores, k),
                cell(&cmp.sum_squares, k),
                cell(&cmp.ratios, k),
                cell(&cmp.sum_squares_ratios, k),
                cmp.errors.get(k).cloned().unwrap_or_default(),
            ]
        }),
    )?;
    let curves: Vec<(&str, &[f64])> = models
        .iter()
        .filter_map(|&k| cmp.results.get(k).map(|r| (k, r.curve.as_slice())))
        .collect();
    decay_figure("model comparison", &trace, &curves, Vec::new()).save(dir, "compare")?;
    write_summary(
        dir,
        "compare.toml",
        &CompareSummary {
            scores: cmp.scores.clone(),
            sum_squares: cmp.sum_squares.clone(),
            ratios: cmp.ratios.clone(),
            sum_squares_ratios: cmp.sum_squares_ratios.clone(),
            errors: cmp.errors.clone(),
            fits: cmp
                .results
                .iter()
                .map(|(k, r)| (k.clone(), FitRecord::new(r, !cmp.errors.contains_key(k))))
                .collect(),
        },
    )
}

#[derive(Serialize)]
struct G2Summary {
    /// Gaussian ensemble with mean `params.n_max` and variance half of it.
    g2_zero_gaussian: f64,
    /// The configured ensemble (capped at `params.n_max`).
    g2_zero_ensemble: f64,
    mixed_state_limit: f64,
    taus_ns: Vec<f64>,
    g2_time_integrated: Vec<f64>,
}

fn g2(cfg: &RunConfig, dir: &Path) -> CliResult<PathBuf> {
    let p = cfg.model_params();
    let sweep: Vec<(f64, f64)> = (1..=cfg.g2.sweep_max_mean)
        .map(|n| Ok((n as f64, g2_zero_gaussian(n as f64)?)))
        .collect::<Result<_, CoreError>>()?;
    Figure {
        title: "ensemble g2(0) against mean domain size".into(),
        x_label: "mean domain size".into(),
        y_label: "g2(0)".into(),
        log_y: false,
        series: vec![Series::line("Gaussian ensemble", sweep.clone())],
        markers: vec![Marker::Horizontal { name: "mixed-state limit 6/5".into(), y: 1.2 }],
    }
    .save(dir, "g2_zero")?;

    let taus: Vec<f64> = cfg.g2.taus_ns.iter().map(|&t| ns(t)).collect();
    let curve = g2_time_integrated_ensemble(&p.ensemble()?, &p.rate_params(), &cfg.initial_state, &taus, ns(cfg.g2.window_ns))?;
    let points: Vec<(f64, f64)> = cfg.g2.taus_ns.iter().copied().zip(curve.values.iter().copied()).collect();
    Figure {
        title: "time-integrated g2".into(),
        x_label: "coincidence width (ns)".into(),
        y_label: "g2".into(),
        log_y: false,
        series: vec![Series::line("ensemble", points)],
        markers: vec![Marker::Horizontal { name: "uncorrelated".into(), y: 1.0 }],
    }
    .save(dir, "g2_tau")?;
    write_summary(
        dir,
        "g2.toml",
        &G2Summary {
            g2_zero_gaussian: g2_zero_gaussian(p.n_max as f64)?,
            g2_zero_ensemble: g2_zero_ensemble(&p.ensemble()?),
            mixed_state_limit: 1.2,
            taus_ns: cfg.g2.taus_ns.clone(),
            g2_time_integrated: curve.values,
        },
    )
}

#[derive(Serialize)]
struct DdSummary {
    separation_nm: f64,
    angular_factor: f64,
    gamma_mhz: f64,
    /// Coupling as an ordinary frequency, `V / 2π`.
    v_dd_mhz: f64,
    v_dd_rad_per_s: f64,
    /// `T_±1 / T_0` with bulk rates.
    isc_lifetime_ratio_bulk: f64,
    /// The same with the configured radiative and crossing rates.
    isc_lifetime_ratio: f64,
}

fn dd_estimate(cfg: &RunConfig, dir: &Path) -> CliResult<PathBuf> {
    let d = &cfg.dd;
    let separation = match d.density_per_nm3 {
        None => nm(d.separation_nm),
        Some(rho) => mean_separation(rho / nm(1.0).powi(3), d.convention)?,
    };
    let v = |a: [f64; 3]| nalgebra::Vector3::new(a[0], a[1], a[2]);
    let geom = DipoleGeometry::diamond(separation, v(d.d1), v(d.d2), v(d.n_hat), mhz_to_rate(d.gamma_mhz));
    let strength = dipole_dipole_strength(&geom)?;
    let gamma = mhz_to_rate(cfg.params.gamma_mhz);
    let (i0, i1) = cfg.isc();
    write_summary(
        dir,
        "dd.toml",
        &DdSummary {
            separation_nm: to_nm(separation),
            angular_factor: angular_factor(&geom.d1, &geom.d2, &geom.n_hat),
            gamma_mhz: d.gamma_mhz,
            v_dd_mhz: rate_to_mhz(strength),
            v_dd_rad_per_s: strength,
            isc_lifetime_ratio_bulk: isc_lifetime_ratio(bulk_isc_0() / bulk_gamma(), bulk_isc_1() / bulk_gamma())?,
            isc_lifetime_ratio: isc_lifetime_ratio(i0 / gamma, i1 / gamma)?,
        },
    )
}
