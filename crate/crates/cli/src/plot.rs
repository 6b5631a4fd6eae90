//! SVG line and scatter plots. Every figure is written next to a CSV of the
//! exact points drawn (`series,x,y`).

use std::path::Path;

use plotters::prelude::*;

use crate::csvio::write_table;
use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Style {
    Line,
    Points,
}

#[derive(Clone, Debug)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub style: Style,
}

impl Series {
    pub fn line(name: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Series { name: name.into(), points, style: Style::Line }
    }

    pub fn points(name: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Series { name: name.into(), points, style: Style::Points }
    }
}

/// Straight reference lines drawn across the whole plot.
#[derive(Clone, Debug)]
pub enum Marker {
    Vertical { name: String, x: f64 },
    Horizontal { name: String, y: f64 },
}

#[derive(Clone, Debug)]
pub struct Figure {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_y: bool,
    pub series: Vec<Series>,
    pub markers: Vec<Marker>,
}

const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(214, 39, 40),
    RGBColor(44, 160, 44),
    RGBColor(148, 103, 189),
    RGBColor(255, 127, 14),
    RGBColor(127, 127, 127),
];

fn plot_error(path: &Path, e: impl std::fmt::Debug) -> CliError {
    CliError::Io(format!("{}: plotting failed: {e:?}", path.display()))
}

impl Figure {
    fn finite_points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.series
            .iter()
            .flat_map(|s| s.points.iter().copied())
            .filter(move |&(x, y)| x.is_finite() && y.is_finite() && (!self.log_y || y > 0.0))
    }

    fn ranges(&self) -> ((f64, f64), (f64, f64)) {
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for (x, y) in self.finite_points() {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        for m in &self.markers {
            match *m {
                Marker::Vertical { x, .. } if x.is_finite() => {
                    x0 = x0.min(x);
                    x1 = x1.max(x);
                }
                Marker::Horizontal { y, .. } if y.is_finite() && (!self.log_y || y > 0.0) => {
                    y0 = y0.min(y);
                    y1 = y1.max(y);
                }
                _ => {}
            }
        }
        if !x0.is_finite() {
            (x0, x1) = (0.0, 1.0);
        }
        if !y0.is_finite() {
            (y0, y1) = if self.log_y { (0.1, 1.0) } else { (0.0, 1.0) };
        }
        if x1 <= x0 {
            x1 = x0 + 1.0;
        }
        if self.log_y {
            y0 *= 0.8;
            y1 *= 1.25;
            if y1 <= y0 {
                y1 = y0 * 10.0;
            }
        } else {
            let pad = 0.05 * (y1 - y0).max(1e-12 * y1.abs().max(1.0));
            y0 -= pad;
            y1 += pad;
        }
        ((x0, x1), (y0, y1))
    }

    /// Writes `<stem>.svg` and `<stem>.csv` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> CliResult<()> {
        let svg = dir.join(format!("{stem}.svg"));
        let csv = dir.join(format!("{stem}.csv"));
        let mut rows = Vec::new();
        for s in &self.series {
            for &(x, y) in &s.points {
                rows.push(vec![s.name.clone(), format!("{x}"), format!("{y}")]);
            }
        }
        for m in &self.markers {
            match m {
                Marker::Vertical { name, x } => rows.push(vec![name.clone(), format!("{x}"), String::new()]),
                Marker::Horizontal { name, y } => rows.push(vec![name.clone(), String::new(), format!("{y}")]),
            }
        }
        write_table(&csv, &["series", "x", "y"], rows)?;
        self.draw(&svg)
    }

    fn draw(&self, path: &Path) -> CliResult<()> {
        let ((x0, x1), (y0, y1)) = self.ranges();
        let root = SVGBackend::new(path, (900, 560)).into_drawing_area();
        root.fill(&WHITE).map_err(|e| plot_error(path, e))?;
        let mut builder = ChartBuilder::on(&root);
        builder
            .caption(&self.title, ("sans-serif", 22))
            .margin(12)
            .x_label_area_size(45)
            .y_label_area_size(70);
        if self.log_y {
            let mut chart = builder
                .build_cartesian_2d(x0..x1, (y0..y1).log_scale())
                .map_err(|e| plot_error(path, e))?;
            chart
                .configure_mesh()
                .x_desc(&self.x_label)
                .y_desc(&self.y_label)
                .draw()
                .map_err(|e| plot_error(path, e))?;
            self.draw_series(&mut chart, path, (x0, x1), (y0, y1))?;
        } else {
            let mut chart = builder.build_cartesian_2d(x0..x1, y0..y1).map_err(|e| plot_error(path, e))?;
            chart
                .configure_mesh()
                .x_desc(&self.x_label)
                .y_desc(&self.y_label)
                .draw()
                .map_err(|e| plot_error(path, e))?;
            self.draw_series(&mut chart, path, (x0, x1), (y0, y1))?;
        }
        root.present().map_err(|e| plot_error(path, e))
    }

    fn draw_series<'a, X, Y>(
        &self,
        chart: &mut ChartContext<'a, SVGBackend<'a>, Cartesian2d<X, Y>>,
        path: &Path,
        (x0, x1): (f64, f64),
        (y0, y1): (f64, f64),
    ) -> CliResult<()>
    where
        X: Ranged<ValueType = f64>,
        Y: Ranged<ValueType = f64>,
    {
        for (k, s) in self.series.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            let pts: Vec<(f64, f64)> = s
                .points
                .iter()
                .copied()
                .filter(|&(x, y)| x.is_finite() && y.is_finite() && (!self.log_y || y > 0.0))
                .collect();
            let anno = match s.style {
                Style::Line => chart
                    .draw_series(LineSeries::new(pts, color.stroke_width(2)))
                    .map_err(|e| plot_error(path, e))?,
                Style::Points => chart
                    .draw_series(pts.into_iter().map(|p| Circle::new(p, 3, color.filled())))
                    .map_err(|e| plot_error(path, e))?,
            };
            anno.label(s.name.clone())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
        }
        for m in &self.markers {
            let (name, line) = match *m {
                Marker::Vertical { ref name, x } => (name, vec![(x, y0), (x, y1)]),
                Marker::Horizontal { ref name, y } => (name, vec![(x0, y), (x1, y)]),
            };
            chart
                .draw_series(LineSeries::new(line, BLACK.stroke_width(1)))
                .map_err(|e| plot_error(path, e))?
                .label(name.clone())
                .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], BLACK.stroke_width(1)));
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.85))
            .border_style(BLACK)
            .draw()
            .map_err(|e| plot_error(path, e))
    }
}
