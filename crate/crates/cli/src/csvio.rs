//! Decay-trace CSV files.
//!
//! ```text
//! # irf_fwhm_ps=110
//! # background=2
//! # t_end_ns=160
//! time_ns,counts
//! -5,1
//! -4.984,3
//! ```
//!
//! Each row holds the left edge of a bin and its counts. The right edge of the
//! last bin comes from `t_end_ns` when present and is extrapolated from the
//! last two rows otherwise.

use std::io::Write;
use std::path::Path;

use nvsr_core::fitting::DecayTrace;
use nvsr_core::propagator::IrfSpec;
use nvsr_core::units::{ns, to_ps};

use crate::error::{CliError, CliResult};

fn invalid<T>(path: &Path, msg: impl std::fmt::Display) -> CliResult<T> {
    Err(CliError::Validation(format!("{}: {msg}", path.display())))
}

/// Shortest decimal `x` in ns with `ns(x) == t`, found by stepping a few
/// units in the last place around the direct conversion.
fn ns_repr(t: f64) -> f64 {
    let x0 = t * 1e9;
    if ns(x0) == t {
        return x0;
    }
    let (mut up, mut down) = (x0, x0);
    for _ in 0..16 {
        up = up.next_up();
        down = down.next_down();
        for x in [up, down] {
            if ns(x) == t {
                return x;
            }
        }
    }
    x0
}

pub fn ingest_decay_csv(path: &Path) -> CliResult<DecayTrace> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut irf_fwhm_ps = None;
    let mut background = None;
    let mut t_end_ns = None;
    let mut source_id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    for (k, line) in text.lines().enumerate() {
        let Some(comment) = line.trim_start().strip_prefix('#') else {
            continue;
        };
        let Some((key, value)) = comment.split_once('=') else {
            continue;
        };
        let (key, value) = (key.trim(), value.trim());
        let number = || -> CliResult<f64> {
            value
                .parse::<f64>()
                .or_else(|_| invalid(path, format!("line {}: `{key}` is not a number: {value}", k + 1)))
        };
        match key {
            "irf_fwhm_ps" => irf_fwhm_ps = Some(number()?),
            "background" => background = Some(number()?),
            "t_end_ns" => t_end_ns = Some(number()?),
            "source_id" => source_id = value.to_string(),
            _ => {}
        }
    }

    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    if headers.len() != 2 || &headers[0] != "time_ns" || &headers[1] != "counts" {
        return invalid(path, format!("header must be `time_ns,counts`, found `{}`", headers.iter().collect::<Vec<_>>().join(",")));
    }
    let mut times = Vec::new();
    let mut counts = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            CliError::Validation(format!("{}: line {line}: {e}", path.display()))
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 2 {
            return invalid(path, format!("line {line}: expected 2 fields, found {}", record.len()));
        }
        let t: f64 = record[0]
            .parse()
            .or_else(|_| invalid(path, format!("line {line}: time `{}` is not a number", &record[0])))?;
        let c: f64 = record[1]
            .parse()
            .or_else(|_| invalid(path, format!("line {line}: counts `{}` is not a number", &record[1])))?;
        if !t.is_finite() {
            return invalid(path, format!("line {line}: time is not finite"));
        }
        if !c.is_finite() || c < 0.0 {
            return invalid(path, format!("line {line}: counts must be finite and >= 0, got {c}"));
        }
        if let Some(&prev) = times.last() {
            if !(t > prev) {
                return invalid(path, format!("line {line}: time {t} does not increase"));
            }
        }
        times.push(t);
        counts.push(c);
    }
    if times.len() < 2 {
        return invalid(path, "need at least two bins");
    }
    let last = times[times.len() - 1];
    let end = match t_end_ns {
        Some(e) if e > last => e,
        Some(e) => return invalid(path, format!("t_end_ns {e} does not exceed the last time {last}")),
        None => 2.0 * last - times[times.len() - 2],
    };
    let mut edges: Vec<f64> = times.iter().map(|&t| ns(t)).collect();
    edges.push(ns(end));
    let irf = IrfSpec::gaussian(irf_fwhm_ps.map_or(0.0, nvsr_core::units::ps));
    let trace = DecayTrace::new(edges, counts, irf, background, source_id)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    // validates uniform binning
    trace.bin_width().map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    Ok(trace)
}

pub fn emit_decay_csv(trace: &DecayTrace, path: &Path) -> CliResult<()> {
    let mut out = String::new();
    match &trace.irf {
        IrfSpec::Gaussian { fwhm } => out.push_str(&format!("# irf_fwhm_ps={}\n", to_ps(*fwhm))),
        IrfSpec::Measured { .. } => {}
    }
    if let Some(b) = trace.background {
        out.push_str(&format!("# background={b}\n"));
    }
    if !trace.source_id.is_empty() && !trace.source_id.contains('\n') {
        out.push_str(&format!("# source_id={}\n", trace.source_id));
    }
    out.push_str(&format!("# t_end_ns={}\n", ns_repr(trace.bin_edges[trace.n_bins()])));
    out.push_str("time_ns,counts\n");
    for (edge, c) in trace.bin_edges.iter().zip(&trace.counts) {
        out.push_str(&format!("{},{}\n", ns_repr(*edge), c));
    }
    write_file(path, out.as_bytes())
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let mut f = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(bytes).map_err(|e| CliError::io(path, e))
}

/// Writes rows under a header with the `csv` writer.
pub(crate) fn write_table(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))?;
    w.write_record(header).map_err(|e| CliError::io(path, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}
