use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::propagator::{convolve_samples, uniform_step, IrfSpec};

/// A photon-arrival histogram. Times in seconds relative to the excitation
/// pulse.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayTrace {
    /// `counts.len() + 1` strictly increasing edges.
    pub bin_edges: Vec<f64>,
    pub counts: Vec<f64>,
    pub irf: IrfSpec,
    /// Counts per bin; estimated from the pre-pulse bins when absent.
    pub background: Option<f64>,
    pub source_id: String,
}

impl DecayTrace {
    pub fn new(
        bin_edges: Vec<f64>,
        counts: Vec<f64>,
        irf: IrfSpec,
        background: Option<f64>,
        source_id: impl Into<String>,
    ) -> Result<Self> {
        let t = DecayTrace {
            bin_edges,
            counts,
            irf,
            background,
            source_id: source_id.into(),
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.counts.is_empty() {
            return invalid("decay trace has no bins");
        }
        if self.bin_edges.len() != self.counts.len() + 1 {
            return invalid(format!(
                "{} bin edges for {} bins",
                self.bin_edges.len(),
                self.counts.len()
            ));
        }
        if let Some(i) = self.bin_edges.windows(2).position(|w| !(w[1] > w[0]) || !w[0].is_finite() || !w[1].is_finite()) {
            return invalid(format!("bin edges must be finite and strictly increasing (edge {i})"));
        }
        if let Some(i) = self.counts.iter().position(|c| !c.is_finite() || *c < 0.0) {
            return invalid(format!("count in bin {i} is {} (must be finite and >= 0)", self.counts[i]));
        }
        if let Some(b) = self.background {
            if !(b >= 0.0) || !b.is_finite() {
                return invalid(format!("background {b} must be finite and >= 0"));
            }
        }
        self.irf.validate()
    }

    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    pub fn centers(&self) -> Vec<f64> {
        self.bin_edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// Width of a uniform binning.
    pub fn bin_width(&self) -> Result<f64> {
        uniform_step(&self.bin_edges)
    }

    /// Given background, or the mean of bins ending before the detector
    /// response can reach them, or zero if there are none.
    pub fn background_level(&self) -> f64 {
        if let Some(b) = self.background {
            return b;
        }
        let guard = match &self.irf {
            IrfSpec::Gaussian { fwhm } => 3.0 * fwhm,
            IrfSpec::Measured { dt, zero_index, .. } => *dt * (*zero_index as f64 + 1.0),
        };
        let pre: Vec<f64> = self
            .bin_edges
            .windows(2)
            .zip(&self.counts)
            .filter(|(w, _)| w[1] <= -guard)
            .map(|(_, c)| *c)
            .collect();
        if pre.is_empty() {
            0.0
        } else {
            pre.iter().sum::<f64>() / pre.len() as f64
        }
    }

    /// Index of the fullest bin.
    pub fn peak_index(&self) -> usize {
        let mut best = 0;
        for (i, c) in self.counts.iter().enumerate() {
            if *c > self.counts[best] {
                best = i;
            }
        }
        best
    }
}

/// Uniform binning starting at `t_start`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinLayout {
    pub t_start: f64,
    pub bin_width: f64,
    pub n_bins: usize,
}

impl BinLayout {
    pub fn validate(&self) -> Result<()> {
        if !(self.bin_width > 0.0) || !self.t_start.is_finite() || self.n_bins == 0 {
            return invalid("bin layout needs a positive width and at least one bin");
        }
        Ok(())
    }

    pub fn edges(&self) -> Vec<f64> {
        (0..=self.n_bins).map(|i| self.t_start + i as f64 * self.bin_width).collect()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n_bins).map(|i| self.t_start + (i as f64 + 0.5) * self.bin_width).collect()
    }
}

/// Samples a rate on the bin centres (zero before the pulse) and convolves it
/// with the detector response.
pub(crate) fn convolved_on_bins(
    centers: &[f64],
    dt: f64,
    irf: &IrfSpec,
    rate_at_nonnegative: &[f64],
) -> Result<Vec<f64>> {
    let first = centers.iter().position(|&t| t >= 0.0).unwrap_or(centers.len());
    if rate_at_nonnegative.len() != centers.len() - first {
        return invalid("rate samples do not cover the non-negative bin centres");
    }
    let mut x = vec![0.0; first];
    x.extend_from_slice(rate_at_nonnegative);
    let (kernel, zero) = irf.kernel(dt)?;
    Ok(convolve_samples(&x, &kernel, zero))
}

/// Poisson histogram whose noiseless shape `expected` (one value per bin) is
/// scaled to `peak_counts` at its maximum, on top of a flat `background`.
pub fn synthesize_trace(
    expected: &[f64],
    bin_edges: &[f64],
    irf: &IrfSpec,
    peak_counts: f64,
    background: f64,
    seed: Option<u64>,
    source_id: impl Into<String>,
) -> Result<DecayTrace> {
    if expected.len() + 1 != bin_edges.len() {
        return invalid(format!("{} samples for {} bin edges", expected.len(), bin_edges.len()));
    }
    if !(peak_counts > 0.0) || !(background >= 0.0) {
        return invalid("peak counts must be positive and background non-negative");
    }
    let peak = expected.iter().cloned().fold(0.0, f64::max);
    if !(peak > 0.0) {
        return invalid("expected shape has no positive samples");
    }
    let mean: Vec<f64> = expected.iter().map(|e| peak_counts * e.max(0.0) / peak + background).collect();
    let counts = match seed {
        None => mean,
        Some(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            mean.iter()
                .map(|&m| {
                    if m > 0.0 {
                        Poisson::new(m).map(|d| d.sample(&mut rng)).unwrap_or(m)
                    } else {
                        0.0
                    }
                })
                .collect()
        }
    };
    DecayTrace::new(bin_edges.to_vec(), counts, irf.clone(), Some(background), source_id)
}
