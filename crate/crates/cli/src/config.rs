//! Run configuration: one TOML file plus command-line overrides. File units
//! are ns, ps, MHz (ordinary frequency) and nm; everything is converted to
//! seconds and rad/s before it reaches the model.

use std::path::{Path, PathBuf};

use nvsr_core::fitting::{FitConfig, FitLoss, FixedParams, SuperradiantParams};
use nvsr_core::ladder::{bulk_isc_0, bulk_isc_1, InitialStateSpec, MAX_SPINS};
use nvsr_core::physics::SeparationConvention;
use nvsr_core::propagator::IrfSpec;
use nvsr_core::units::{mhz_to_rate, ns, ps};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Simulate,
    Fit,
    G2,
    Compare,
    #[serde(alias = "dd-estimate")]
    DdEstimate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamsSection {
    pub n_max: usize,
    pub gamma_mhz: f64,
    pub gamma_d_0_mhz: f64,
    pub gamma_d_1_mhz: f64,
    pub p0: f64,
    /// Intersystem crossing; bulk values when absent.
    pub isc_0_mhz: Option<f64>,
    pub isc_1_mhz: Option<f64>,
    /// Domain-size variance over `n_max`.
    pub variance_ratio: f64,
}

impl Default for ParamsSection {
    fn default() -> Self {
        ParamsSection {
            n_max: 10,
            gamma_mhz: 3.3,
            gamma_d_0_mhz: 39.0,
            gamma_d_1_mhz: 420.0,
            p0: 0.5,
            isc_0_mhz: None,
            isc_1_mhz: None,
            variance_ratio: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub t_start_ns: f64,
    pub t_end_ns: f64,
    pub bin_ps: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection { t_start_ns: -4.0, t_end_ns: 160.0, bin_ps: 16.0 }
    }
}

impl GridSection {
    /// Whole bins that fit in the window; a partial last bin is dropped.
    pub fn n_bins(&self) -> usize {
        ((self.t_end_ns - self.t_start_ns) * 1000.0 / self.bin_ps + 1e-6).floor() as usize
    }

    /// Edges computed in ns and converted once, so that they survive a trip
    /// through a CSV file unchanged.
    pub fn edges(&self) -> Vec<f64> {
        let w = self.bin_ps / 1000.0;
        (0..=self.n_bins()).map(|i| ns(self.t_start_ns + i as f64 * w)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IrfSection {
    /// Gaussian detector response; zero means none.
    pub fwhm_ps: f64,
}

impl Default for IrfSection {
    fn default() -> Self {
        IrfSection { fwhm_ps: 110.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSection {
    pub peak_counts: f64,
    pub background: f64,
    /// Poisson noise seeded by the run seed; off gives the expected counts.
    pub noise: bool,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        SyntheticSection { peak_counts: 1e5, background: 2.0, noise: true }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixedSection {
    pub n_max: Option<usize>,
    pub gamma_mhz: Option<f64>,
    pub gamma_d_0_mhz: Option<f64>,
    pub gamma_d_1_mhz: Option<f64>,
    pub p0: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    pub n_range: [usize; 2],
    pub dephasing_0_mhz: [f64; 2],
    pub dephasing_1_mhz: [f64; 2],
    pub polarization: [f64; 2],
    pub tail_window_ns: Option<[f64; 2]>,
    pub loss: FitLoss,
    pub fixed: FixedSection,
    pub max_iters: u64,
}

impl Default for FitSection {
    fn default() -> Self {
        FitSection {
            n_range: [1, 20],
            dephasing_0_mhz: [0.0, 2000.0],
            dephasing_1_mhz: [0.0, 2000.0],
            polarization: [0.0, 1.0],
            tail_window_ns: None,
            loss: FitLoss::default(),
            fixed: FixedSection::default(),
            max_iters: 400,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct G2Section {
    /// Ensemble `g²(0)` is swept over mean domain sizes `1..=sweep_max_mean`.
    pub sweep_max_mean: usize,
    /// Coincidence widths for the time-integrated curve.
    pub taus_ns: Vec<f64>,
    pub window_ns: f64,
}

impl Default for G2Section {
    fn default() -> Self {
        G2Section {
            sweep_max_mean: 60,
            taus_ns: vec![0.1, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 4.0, 5.0, 7.5, 10.0],
            window_ns: 25.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DdSection {
    pub separation_nm: f64,
    /// Emitter density per nm³; when given, the separation is derived from
    /// it instead.
    pub density_per_nm3: Option<f64>,
    pub convention: SeparationConvention,
    pub gamma_mhz: f64,
    pub d1: [f64; 3],
    pub d2: [f64; 3],
    pub n_hat: [f64; 3],
}

impl Default for DdSection {
    fn default() -> Self {
        DdSection {
            separation_nm: 10.0,
            density_per_nm3: None,
            convention: SeparationConvention::default(),
            gamma_mhz: 5.0,
            // parallel dipoles normal to the separation: unit angular factor
            d1: [1.0, 0.0, 0.0],
            d2: [1.0, 0.0, 0.0],
            n_hat: [0.0, 0.0, 1.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub seed: u64,
    /// Decay-trace CSV for fit and compare.
    pub input: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub params: ParamsSection,
    pub initial_state: InitialStateSpec,
    pub grid: GridSection,
    pub irf: IrfSection,
    pub synthetic: SyntheticSection,
    pub fit: FitSection,
    pub g2: G2Section,
    pub dd: DdSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: Mode::default(),
            seed: 0,
            input: None,
            out_dir: PathBuf::from("out"),
            params: ParamsSection::default(),
            initial_state: InitialStateSpec::default(),
            grid: GridSection::default(),
            irf: IrfSection::default(),
            synthetic: SyntheticSection::default(),
            fit: FitSection::default(),
            g2: G2Section::default(),
            dd: DdSection::default(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub mode: Option<Mode>,
    pub input: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub n_max: Option<usize>,
    pub gamma_mhz: Option<f64>,
    pub irf_ps: Option<f64>,
}

fn bad<T>(path: &str, msg: impl std::fmt::Display) -> CliResult<T> {
    Err(CliError::Validation(format!("{path}: {msg}")))
}

fn positive(path: &str, v: f64) -> CliResult<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        bad(path, format!("must be positive and finite, got {v}"))
    }
}

fn non_negative(path: &str, v: f64) -> CliResult<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        bad(path, format!("must be non-negative and finite, got {v}"))
    }
}

fn fraction(path: &str, v: f64) -> CliResult<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        bad(path, format!("must lie in [0, 1], got {v}"))
    }
}

fn interval(path: &str, v: [f64; 2]) -> CliResult<()> {
    if v[0].is_finite() && v[1].is_finite() && v[0] <= v[1] {
        Ok(())
    } else {
        bad(path, format!("[{}, {}] is not an interval", v[0], v[1]))
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            CliError::Validation(m) => CliError::Validation(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Flag values replace file values. `--n-max` and `--gamma-mhz` also pin
    /// the corresponding fit parameters.
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(m) = o.mode {
            self.mode = m;
        }
        if let Some(p) = &o.input {
            self.input = Some(p.clone());
        }
        if let Some(p) = &o.out_dir {
            self.out_dir = p.clone();
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(n) = o.n_max {
            self.params.n_max = n;
            self.fit.fixed.n_max = Some(n);
            self.fit.n_range = [self.fit.n_range[0].min(n), self.fit.n_range[1].max(n)];
        }
        if let Some(g) = o.gamma_mhz {
            self.params.gamma_mhz = g;
            self.fit.fixed.gamma_mhz = Some(g);
        }
        if let Some(w) = o.irf_ps {
            self.irf.fwhm_ps = w;
        }
    }

    /// Checks every section the mode will touch. Nothing is computed before
    /// this passes.
    pub fn validate(&self) -> CliResult<()> {
        let p = &self.params;
        if p.n_max == 0 || p.n_max > MAX_SPINS {
            return bad("params.n_max", format!("must lie in 1..={MAX_SPINS}, got {}", p.n_max));
        }
        positive("params.gamma_mhz", p.gamma_mhz)?;
        non_negative("params.gamma_d_0_mhz", p.gamma_d_0_mhz)?;
        non_negative("params.gamma_d_1_mhz", p.gamma_d_1_mhz)?;
        fraction("params.p0", p.p0)?;
        if let Some(v) = p.isc_0_mhz {
            non_negative("params.isc_0_mhz", v)?;
        }
        if let Some(v) = p.isc_1_mhz {
            non_negative("params.isc_1_mhz", v)?;
        }
        positive("params.variance_ratio", p.variance_ratio)?;
        self.initial_state
            .top_ladder_weights(p.n_max)
            .or_else(|e| bad("initial_state", e))?;
        non_negative("irf.fwhm_ps", self.irf.fwhm_ps)?;

        match self.mode {
            Mode::Simulate => {
                let g = &self.grid;
                positive("grid.bin_ps", g.bin_ps)?;
                if !(g.t_start_ns.is_finite() && g.t_end_ns.is_finite() && g.t_end_ns > 0.0 && g.t_start_ns < g.t_end_ns) {
                    return bad("grid", "need t_start_ns < t_end_ns with t_end_ns > 0");
                }
                if g.n_bins() < 2 || g.n_bins() > 5_000_000 {
                    return bad("grid", format!("{} bins is outside 2..=5000000", g.n_bins()));
                }
                positive("synthetic.peak_counts", self.synthetic.peak_counts)?;
                non_negative("synthetic.background", self.synthetic.background)?;
            }
            Mode::Fit | Mode::Compare => {
                if self.input.is_none() {
                    return bad("input", "fit and compare need an input trace (--input)");
                }
                let f = &self.fit;
                let [lo, hi] = f.n_range;
                if lo == 0 || lo > hi || hi > MAX_SPINS {
                    return bad("fit.n_range", format!("[{lo}, {hi}] must satisfy 1 <= lo <= hi <= {MAX_SPINS}"));
                }
                for (path, v) in [("fit.dephasing_0_mhz", f.dephasing_0_mhz), ("fit.dephasing_1_mhz", f.dephasing_1_mhz)] {
                    interval(path, v)?;
                    non_negative(path, v[0])?;
                    positive(path, v[1])?;
                }
                interval("fit.polarization", f.polarization)?;
                fraction("fit.polarization", f.polarization[0])?;
                fraction("fit.polarization", f.polarization[1])?;
                if let Some(w) = f.tail_window_ns {
                    if !(w[0] < w[1]) || !w[0].is_finite() || !w[1].is_finite() {
                        return bad("fit.tail_window_ns", format!("[{}, {}] is empty", w[0], w[1]));
                    }
                }
                if f.max_iters == 0 {
                    return bad("fit.max_iters", "must be positive");
                }
                let x = &f.fixed;
                if let Some(n) = x.n_max {
                    if n < lo || n > hi {
                        return bad("fit.fixed.n_max", format!("{n} lies outside fit.n_range"));
                    }
                }
                if let Some(g) = x.gamma_mhz {
                    positive("fit.fixed.gamma_mhz", g)?;
                }
                for (path, v, b) in [
                    ("fit.fixed.gamma_d_0_mhz", x.gamma_d_0_mhz, f.dephasing_0_mhz),
                    ("fit.fixed.gamma_d_1_mhz", x.gamma_d_1_mhz, f.dephasing_1_mhz),
                ] {
                    if let Some(v) = v {
                        if !(b[0]..=b[1]).contains(&v) {
                            return bad(path, format!("{v} lies outside its dephasing bounds"));
                        }
                    }
                }
                if let Some(v) = x.p0 {
                    if !(f.polarization[0]..=f.polarization[1]).contains(&v) {
                        return bad("fit.fixed.p0", format!("{v} lies outside fit.polarization"));
                    }
                }
            }
            Mode::G2 => {
                let g = &self.g2;
                if g.sweep_max_mean == 0 || g.sweep_max_mean > MAX_SPINS {
                    return bad("g2.sweep_max_mean", format!("must lie in 1..={MAX_SPINS}"));
                }
                positive("g2.window_ns", g.window_ns)?;
                if g.taus_ns.is_empty() {
                    return bad("g2.taus_ns", "needs at least one width");
                }
                for (i, &t) in g.taus_ns.iter().enumerate() {
                    if !(t >= 0.0) || t > g.window_ns {
                        return bad(&format!("g2.taus_ns[{i}]"), format!("{t} must lie in [0, window_ns]"));
                    }
                }
                if g.taus_ns.windows(2).any(|w| w[1] < w[0]) {
                    return bad("g2.taus_ns", "must be non-decreasing");
                }
            }
            Mode::DdEstimate => {
                let d = &self.dd;
                match d.density_per_nm3 {
                    None => positive("dd.separation_nm", d.separation_nm)?,
                    Some(rho) => positive("dd.density_per_nm3", rho)?,
                }
                positive("dd.gamma_mhz", d.gamma_mhz)?;
                for (path, v) in [("dd.d1", d.d1), ("dd.d2", d.d2), ("dd.n_hat", d.n_hat)] {
                    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                    if (norm - 1.0).abs() > 1e-9 {
                        return bad(path, format!("must be a unit vector, norm is {norm}"));
                    }
                }
            }
        }
        self.model_params().validate().or_else(|e| bad("params", e))?;
        Ok(())
    }

    pub fn isc(&self) -> (f64, f64) {
        (
            self.params.isc_0_mhz.map_or_else(bulk_isc_0, mhz_to_rate),
            self.params.isc_1_mhz.map_or_else(bulk_isc_1, mhz_to_rate),
        )
    }

    pub fn model_params(&self) -> SuperradiantParams {
        let p = &self.params;
        SuperradiantParams {
            n_max: p.n_max,
            gamma: mhz_to_rate(p.gamma_mhz),
            gamma_d_0: mhz_to_rate(p.gamma_d_0_mhz),
            gamma_d_1: mhz_to_rate(p.gamma_d_1_mhz),
            p0: p.p0,
            isc: self.isc(),
            variance_ratio: p.variance_ratio,
        }
    }

    pub fn irf_spec(&self) -> IrfSpec {
        IrfSpec::gaussian(ps(self.irf.fwhm_ps))
    }

    pub fn fit_config(&self) -> FitConfig {
        let f = &self.fit;
        let x = &f.fixed;
        let range = |v: [f64; 2]| (mhz_to_rate(v[0]), mhz_to_rate(v[1]));
        FitConfig {
            n_range: (f.n_range[0], f.n_range[1]),
            dephasing_bounds: [range(f.dephasing_0_mhz), range(f.dephasing_1_mhz)],
            polarization_bounds: (f.polarization[0], f.polarization[1]),
            tail_window: f.tail_window_ns.map(|w| (ns(w[0]), ns(w[1]))),
            loss: f.loss,
            fixed: FixedParams {
                n_max: x.n_max,
                gamma: x.gamma_mhz.map(mhz_to_rate),
                gamma_d_0: x.gamma_d_0_mhz.map(mhz_to_rate),
                gamma_d_1: x.gamma_d_1_mhz.map(mhz_to_rate),
                p0: x.p0,
            },
            isc: self.isc(),
            variance_ratio: self.params.variance_ratio,
            initial_state: self.initial_state.clone(),
            max_iters: f.max_iters,
        }
    }
}
