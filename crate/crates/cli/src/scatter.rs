//! Per-diamond summary statistics: decay rate against size, brightness and
//! NV density, and the fraction of diamonds that are both small and fast.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::csvio::write_file;
use crate::error::{CliError, CliResult};
use crate::plot::{Figure, Marker, Series};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatterRecord {
    pub diamond_id: String,
    pub diameter_nm: f64,
    /// Reciprocal lifetime, 1/ns.
    pub decay_rate_per_ns: f64,
    /// Peak brightness normalised to the brightest diamond.
    pub peak_brightness: f64,
    /// NV density in arbitrary units.
    pub nv_density: f64,
}

impl ScatterRecord {
    pub fn validate(&self) -> CliResult<()> {
        if !(self.diameter_nm > 0.0) || !self.diameter_nm.is_finite() {
            return Err(CliError::Validation(format!("{}: diameter must be positive", self.diamond_id)));
        }
        if !(self.decay_rate_per_ns > 0.0) || !self.decay_rate_per_ns.is_finite() {
            return Err(CliError::Validation(format!("{}: decay rate must be positive", self.diamond_id)));
        }
        if !self.peak_brightness.is_finite() || !self.nv_density.is_finite() {
            return Err(CliError::Validation(format!("{}: brightness and density must be finite", self.diamond_id)));
        }
        Ok(())
    }
}

/// A diamond is "small and fast" when it is below `max_diameter_nm` and
/// decays faster than `min_rate_per_ns`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatterCutoffs {
    pub max_diameter_nm: f64,
    pub min_rate_per_ns: f64,
}

impl Default for ScatterCutoffs {
    fn default() -> Self {
        ScatterCutoffs { max_diameter_nm: 100.0, min_rate_per_ns: 0.5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatterReport {
    pub n_records: usize,
    pub cutoffs: ScatterCutoffs,
    /// Fraction of diamonds inside the small-and-fast region.
    pub forbidden_fraction: f64,
    pub flagged: Vec<String>,
    /// Pearson correlation of the decay rate with each quantity.
    pub rate_vs_diameter: f64,
    pub rate_vs_brightness: f64,
    pub rate_vs_density: f64,
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx > 0.0 && syy > 0.0 {
        sxy / (sxx * syy).sqrt()
    } else {
        f64::NAN
    }
}

pub fn scatter_analysis(records: &[ScatterRecord], cutoffs: ScatterCutoffs) -> CliResult<ScatterReport> {
    if records.len() < 2 {
        return Err(CliError::Validation(format!("scatter analysis needs at least 2 records, got {}", records.len())));
    }
    if !(cutoffs.max_diameter_nm > 0.0 && cutoffs.min_rate_per_ns > 0.0) {
        return Err(CliError::Validation("scatter cutoffs must be positive".into()));
    }
    for r in records {
        r.validate()?;
    }
    let flagged: Vec<String> = records
        .iter()
        .filter(|r| r.diameter_nm < cutoffs.max_diameter_nm && r.decay_rate_per_ns > cutoffs.min_rate_per_ns)
        .map(|r| r.diamond_id.clone())
        .collect();
    let rate: Vec<f64> = records.iter().map(|r| r.decay_rate_per_ns).collect();
    let col = |f: fn(&ScatterRecord) -> f64| records.iter().map(f).collect::<Vec<f64>>();
    Ok(ScatterReport {
        n_records: records.len(),
        cutoffs,
        forbidden_fraction: flagged.len() as f64 / records.len() as f64,
        flagged,
        rate_vs_diameter: pearson(&col(|r| r.diameter_nm), &rate),
        rate_vs_brightness: pearson(&col(|r| r.peak_brightness), &rate),
        rate_vs_density: pearson(&col(|r| r.nv_density), &rate),
    })
}

/// Header `diamond_id,diameter_nm,decay_rate_per_ns,peak_brightness,nv_density`.
pub fn ingest_scatter_csv(path: &Path) -> CliResult<Vec<ScatterRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::io(path, e))?;
    let mut out = Vec::new();
    for row in reader.deserialize::<ScatterRecord>() {
        let r = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            CliError::Validation(format!("{}: line {line}: {e}", path.display()))
        })?;
        out.push(r);
    }
    Ok(out)
}

/// Three scatter plots plus a key-value summary in `dir`.
pub fn emit_scatter(records: &[ScatterRecord], report: &ScatterReport, dir: &Path) -> CliResult<()> {
    let rate = |f: fn(&ScatterRecord) -> f64| records.iter().map(|r| (f(r), r.decay_rate_per_ns)).collect();
    let figs = [
        ("rate_vs_diameter", "diameter (nm)", rate(|r| r.diameter_nm), true),
        ("rate_vs_brightness", "peak brightness (norm.)", rate(|r| r.peak_brightness), false),
        ("rate_vs_density", "NV density (arb.)", rate(|r| r.nv_density), false),
    ];
    for (stem, x_label, pts, with_cutoffs) in figs {
        let markers = if with_cutoffs {
            vec![
                Marker::Vertical { name: "size cutoff".into(), x: report.cutoffs.max_diameter_nm },
                Marker::Horizontal { name: "rate cutoff".into(), y: report.cutoffs.min_rate_per_ns },
            ]
        } else {
            Vec::new()
        };
        Figure {
            title: stem.replace('_', " "),
            x_label: x_label.into(),
            y_label: "decay rate (1/ns)".into(),
            log_y: false,
            series: vec![Series::points("diamonds", pts)],
            markers,
        }
        .save(dir, stem)?;
    }
    let text = toml::to_string(report).map_err(|e| CliError::Io(e.to_string()))?;
    write_file(&dir.join("scatter.toml"), text.as_bytes())
}
