//! File emitters and parsers: datasets (csv and json), fit reports, budget
//! reports, Wigner grids and plots. Formatting is fixed-precision and
//! locale-independent so identical runs produce identical bytes.

use std::path::Path;

use qmem_core::fitting::FitResult;
use qmem_core::measurement::{Dataset, WignerGrid};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Dataset format selector for `--format`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum FileFormat {
    Csv,
    #[value(name = "json-like")]
    JsonLike,
}

impl FileFormat {
    pub fn extension(&self) -> &'static str {
        match self {
            FileFormat::Csv => "csv",
            FileFormat::JsonLike => "json",
        }
    }
}

/// On-disk dataset: the ideal probability trace plus the sampled shot
/// fractions when finite-shot readout was requested.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFile {
    pub sweep_name: String,
    pub shots_per_point: Option<u64>,
    pub sweep_values: Vec<f64>,
    pub probability: Vec<f64>,
    pub shot_fraction: Option<Vec<f64>>,
}

impl DatasetFile {
    pub fn new(ideal: &Dataset, sampled: Option<&Dataset>) -> Self {
        Self {
            sweep_name: ideal.sweep_name.clone(),
            shots_per_point: sampled.and_then(|s| s.shots_per_point),
            sweep_values: ideal.sweep_values.clone(),
            probability: ideal.trace.clone(),
            shot_fraction: sampled.map(|s| s.trace.clone()),
        }
    }

    /// The trace a fit should see: sampled fractions when present,
    /// otherwise the ideal probabilities.
    pub fn fitting_dataset(&self) -> Dataset {
        Dataset {
            sweep_name: self.sweep_name.clone(),
            sweep_values: self.sweep_values.clone(),
            trace: self
                .shot_fraction
                .clone()
                .unwrap_or_else(|| self.probability.clone()),
            shots_per_point: self.shots_per_point,
        }
    }

    pub fn render(&self, format: FileFormat) -> String {
        match format {
            FileFormat::Csv => self.to_csv(),
            FileFormat::JsonLike => self.to_json(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        if let Some(shots) = self.shots_per_point {
            out.push_str(&format!("# shots_per_point = {shots}\n"));
        }
        if self.shot_fraction.is_some() {
            out.push_str(&format!("{},probability,shot_fraction\n", self.sweep_name));
        } else {
            out.push_str(&format!("{},probability\n", self.sweep_name));
        }
        for (i, (t, p)) in self
            .sweep_values
            .iter()
            .zip(self.probability.iter())
            .enumerate()
        {
            match &self.shot_fraction {
                Some(fracs) => {
                    out.push_str(&format!("{t:.9e},{p:.12e},{:.12e}\n", fracs[i]));
                }
                None => out.push_str(&format!("{t:.9e},{p:.12e}\n")),
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("dataset serializes");
        text.push('\n');
        text
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        if text.trim_start().starts_with('{') {
            return serde_json::from_str(text)
                .map_err(|e| CliError::Config(format!("dataset json parse error: {e}")));
        }
        Self::parse_csv(text)
    }

    fn parse_csv(text: &str) -> Result<Self, CliError> {
        let mut shots_per_point = None;
        let mut header: Option<Vec<String>> = None;
        let mut sweep_values = Vec::new();
        let mut probability = Vec::new();
        let mut shot_fraction: Option<Vec<f64>> = None;
        for (line_no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                if let Some((key, value)) = comment.split_once('=') {
                    if key.trim() == "shots_per_point" {
                        shots_per_point = value.trim().parse::<u64>().ok();
                    }
                }
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            match &header {
                None => {
                    if fields.len() < 2 {
                        return Err(CliError::Config(format!(
                            "dataset line {}: header needs at least two columns",
                            line_no + 1
                        )));
                    }
                    if fields.len() >= 3 {
                        shot_fraction = Some(Vec::new());
                    }
                    header = Some(fields.iter().map(|s| s.to_string()).collect());
                }
                Some(cols) => {
                    if fields.len() != cols.len() {
                        return Err(CliError::Config(format!(
                            "dataset line {}: expected {} fields, got {}",
                            line_no + 1,
                            cols.len(),
                            fields.len()
                        )));
                    }
                    let parse = |s: &str| -> Result<f64, CliError> {
                        s.parse().map_err(|_| {
                            CliError::Config(format!(
                                "dataset line {}: cannot parse number '{s}'",
                                line_no + 1
                            ))
                        })
                    };
                    sweep_values.push(parse(fields[0])?);
                    probability.push(parse(fields[1])?);
                    if let Some(fracs) = shot_fraction.as_mut() {
                        fracs.push(parse(fields[2])?);
                    }
                }
            }
        }
        let header = header.ok_or_else(|| CliError::Config("dataset file is empty".into()))?;
        if sweep_values.is_empty() {
            return Err(CliError::Config("dataset has no data rows".into()));
        }
        Ok(Self {
            sweep_name: header[0].clone(),
            shots_per_point,
            sweep_values,
            probability,
            shot_fraction,
        })
    }
}

/// Render a fit result as a TOML document.
pub fn fit_report_toml(result: &FitResult) -> String {
    let model = match result.kind {
        qmem_core::fitting::FitModelKind::SingleExp => "single_exp",
        qmem_core::fitting::FitModelKind::CoherentVacuum => "coherent_vacuum",
        qmem_core::fitting::FitModelKind::RamseyFringe => "ramsey_fringe",
    };
    let mut out = String::new();
    out.push_str(&format!("model = \"{model}\"\n"));
    out.push_str(&format!("converged = {}\n", result.converged));
    out.push_str(&format!("iterations = {}\n", result.iterations));
    out.push_str(&format!("rss = {:.12e}\n", result.rss));
    out.push_str("\n[params]\n");
    for (name, value) in result.kind.param_names().iter().zip(result.params.iter()) {
        out.push_str(&format!("{name} = {value:.12e}\n"));
    }
    out.push_str("\n[stderr]\n");
    for (name, value) in result.kind.param_names().iter().zip(result.stderr.iter()) {
        out.push_str(&format!("{name} = {value:.12e}\n"));
    }
    out
}

/// Columnar Wigner grid: `re_alpha,im_alpha,wigner` per line.
pub fn wigner_csv(grid: &WignerGrid) -> String {
    let mut out = String::from("re_alpha,im_alpha,wigner\n");
    for (i, re) in grid.re_points.iter().enumerate() {
        for (j, im) in grid.im_points.iter().enumerate() {
            out.push_str(&format!("{re:.9e},{im:.9e},{:.12e}\n", grid.values[(i, j)]));
        }
    }
    out
}

/// Static heat-map plot of a Wigner grid with a symmetric diverging color
/// scale clipped at ±2/π.
pub fn wigner_svg(grid: &WignerGrid, title: &str) -> String {
    const CELL: f64 = 8.0;
    const MARGIN: f64 = 46.0;
    let nx = grid.re_points.len();
    let ny = grid.im_points.len();
    let width = MARGIN * 2.0 + CELL * nx as f64;
    let height = MARGIN * 2.0 + CELL * ny as f64 + 18.0;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" \
         viewBox=\"0 0 {width:.0} {height:.0}\">\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{:.0}\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" \
         font-size=\"14\">{title}</text>\n",
        width / 2.0
    ));
    let clip = std::f64::consts::FRAC_2_PI;
    for (i, _) in grid.re_points.iter().enumerate() {
        for (j, _) in grid.im_points.iter().enumerate() {
            let v = (grid.values[(i, j)] / clip).clamp(-1.0, 1.0);
            let (r, g, b) = diverging_color(v);
            let x = MARGIN + CELL * i as f64;
            // Flip the vertical axis so Im α increases upward.
            let y = MARGIN + CELL * (ny - 1 - j) as f64;
            svg.push_str(&format!(
                "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{CELL:.1}\" height=\"{CELL:.1}\" \
                 fill=\"rgb({r},{g},{b})\"/>\n"
            ));
        }
    }
    // Axis labels at the grid extremes.
    let re0 = grid.re_points[0];
    let re1 = grid.re_points[nx - 1];
    let im0 = grid.im_points[0];
    let im1 = grid.im_points[ny - 1];
    svg.push_str(&format!(
        "<text x=\"{:.0}\" y=\"{:.0}\" font-family=\"sans-serif\" font-size=\"11\" \
         text-anchor=\"middle\">Re α: {re0:.1} … {re1:.1}</text>\n",
        width / 2.0,
        height - 8.0
    ));
    svg.push_str(&format!(
        "<text x=\"14\" y=\"{:.0}\" font-family=\"sans-serif\" font-size=\"11\" \
         text-anchor=\"middle\" transform=\"rotate(-90 14 {:.0})\">Im α: {im0:.1} … {im1:.1}</text>\n",
        height / 2.0,
        height / 2.0
    ));
    svg.push_str("</svg>\n");
    svg
}

fn diverging_color(t: f64) -> (u8, u8, u8) {
    let white = (247.0, 247.0, 247.0);
    let blue = (33.0, 102.0, 172.0);
    let red = (178.0, 24.0, 43.0);
    let lerp = |a: (f64, f64, f64), b: (f64, f64, f64), s: f64| {
        (
            (a.0 + (b.0 - a.0) * s) as u8,
            (a.1 + (b.1 - a.1) * s) as u8,
            (a.2 + (b.2 - a.2) * s) as u8,
        )
    };
    if t < 0.0 {
        lerp(white, blue, -t)
    } else {
        lerp(white, red, t)
    }
}

/// Write a file, creating parent directories. Content is assembled in
/// memory first, so failed runs leave no partial files behind.
pub fn write_file(path: &Path, content: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
    }
    std::fs::write(path, content).map_err(|e| CliError::io(path, e))
}
