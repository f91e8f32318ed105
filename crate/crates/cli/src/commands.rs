//! Implementations of the five subcommands.

use std::path::{Path, PathBuf};

use num_complex::Complex64;
use qmem_core::dynamics::{
    apply_gate, protocols, run_sequence_threaded, snap_prepare_superposition01, DeviceModel,
    PulseSequence,
};
use qmem_core::fitting::{fit, FitModelKind, FitResult};
use qmem_core::hilbert::{coherent_state, fock_state, HilbertDims, QuantumState};
use qmem_core::lossbudget::{compute_budget, parse_budget, render_text_table};
use qmem_core::measurement::{nbar_estimate, sample_dataset, wigner, ReadoutModel, WignerGridSpec};

use crate::config::{
    device_model_from, load_config, ConfigFile, ExperimentKind, ExperimentSection, WignerState,
};
use crate::error::CliError;
use crate::output::{
    fit_report_toml, wigner_csv, wigner_svg, write_file, DatasetFile, FileFormat,
};

/// Worker count for sweep evaluation: `QMEM_THREADS`, else the available
/// parallelism capped at 8. Results are independent of the worker count.
pub fn worker_threads() -> usize {
    if let Ok(text) = std::env::var("QMEM_THREADS") {
        if let Ok(n) = text.trim().parse::<usize>() {
            return n.max(1);
        }
    }
    std::thread::available_parallelism()
        .map(|n| n.get().min(8))
        .unwrap_or(1)
}

/// Overrides from global CLI flags.
#[derive(Debug, Clone)]
pub struct Overrides {
    /// `--out`; falls back to the config's output dir, then "out".
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    /// `None`: no flag; `Some(None)`: `--shots none`; `Some(Some(n))`.
    pub shots: Option<Option<u64>>,
    pub format: FileFormat,
}

impl Overrides {
    fn resolve_out(&self, cfg: Option<&ConfigFile>) -> PathBuf {
        self.out_dir
            .clone()
            .or_else(|| {
                cfg.and_then(|c| c.output.as_ref())
                    .and_then(|o| o.dir.clone())
                    .map(PathBuf::from)
            })
            .unwrap_or_else(|| PathBuf::from("out"))
    }

    fn apply(&self, ro: &mut ReadoutModel) {
        if let Some(seed) = self.seed {
            ro.rng_seed = seed;
        }
        if let Some(shots) = self.shots {
            ro.shots = shots;
        }
    }
}

pub fn cmd_budget(input: &Path, over: &Overrides) -> Result<(), CliError> {
    let out_dir = over.resolve_out(None);
    let text = std::fs::read_to_string(input).map_err(|e| CliError::io(input, e))?;
    let parsed = parse_budget(&text)?;
    if parsed.channels.is_empty() {
        return Err(CliError::Config(format!(
            "{}: budget has no channels with quality numbers",
            input.display()
        )));
    }
    let report = compute_budget(&parsed.title, &parsed.channels, &parsed.unbudgeted)?;
    let table = render_text_table(&report);
    let machine = toml::to_string(&report)
        .map_err(|e| CliError::Config(format!("budget serialization failed: {e}")))?;
    write_file(&out_dir.join("budget.txt"), &table)?;
    write_file(&out_dir.join("budget.toml"), &machine)?;
    print!("{table}");
    println!(
        "wrote {} and {}",
        out_dir.join("budget.txt").display(),
        out_dir.join("budget.toml").display()
    );
    Ok(())
}

fn sweep_grid(section: &ExperimentSection, default_span: f64) -> Result<Vec<f64>, CliError> {
    let points = section.points.unwrap_or(41);
    if points < 2 {
        return Err(CliError::Config(format!(
            "sweep needs at least 2 points, got {points}"
        )));
    }
    let span = section.span.map(|t| t.0).unwrap_or(default_span);
    if !span.is_finite() || span <= 0.0 {
        return Err(CliError::Config(format!("sweep span must be positive, got {span}")));
    }
    Ok(protocols::linspace(span, points))
}

/// Build the pulse sequence and fit model for one of the decay protocols.
pub fn build_protocol(
    kind: ExperimentKind,
    section: &ExperimentSection,
    model: &DeviceModel,
    dims: HilbertDims,
) -> Result<(PulseSequence, FitModelKind), CliError> {
    match kind {
        ExperimentKind::T1Fock => {
            let delays = sweep_grid(section, 5.0 * model.cavity_t1)?;
            Ok((
                protocols::t1_fock_sequence(dims, delays),
                FitModelKind::SingleExp,
            ))
        }
        ExperimentKind::T1Coherent => {
            let alpha = section.alpha.unwrap_or(2.0f64.sqrt());
            let delays = sweep_grid(section, 5.0 * model.cavity_t1)?;
            Ok((
                protocols::t1_coherent_sequence(dims, Complex64::new(alpha, 0.0), delays),
                FitModelKind::CoherentVacuum,
            ))
        }
        ExperimentKind::T2Ramsey => {
            let delays = sweep_grid(section, 3.0 * model.cavity_t2())?;
            let span = *delays.last().expect("nonempty grid");
            let detuning = section.detuning.map(|f| f.0).unwrap_or(5.0 / span);
            Ok((
                protocols::t2_ramsey_sequence(dims, detuning, delays),
                FitModelKind::RamseyFringe,
            ))
        }
        ExperimentKind::Wigner | ExperimentKind::Nbar => Err(CliError::Config(format!(
            "experiment kind '{}' is not a swept protocol",
            kind.name()
        ))),
    }
}

fn simulate_protocol(
    kind: ExperimentKind,
    section: &ExperimentSection,
    model: &DeviceModel,
    dims: HilbertDims,
    ro: &ReadoutModel,
) -> Result<DatasetFile, CliError> {
    let (seq, _) = build_protocol(kind, section, model, dims)?;
    let ideal = run_sequence_threaded(&seq, model, dims, ro, worker_threads())?;
    let sampled = match ro.shots {
        Some(_) => Some(sample_dataset(&ideal, ro)?),
        None => None,
    };
    Ok(DatasetFile::new(&ideal, sampled.as_ref()))
}

pub fn cmd_simulate(config_path: &Path, over: &Overrides) -> Result<(), CliError> {
    let cfg = load_config(config_path)?;
    let out_dir = over.resolve_out(Some(&cfg));
    let dims = cfg.hilbert_dims()?;
    let model = cfg.device_model()?;
    let mut ro = cfg.readout_model()?;
    over.apply(&mut ro);
    ro.validate()?;
    let section = cfg.experiment()?;
    let kind = ExperimentKind::parse(&section.kind)?;

    match kind {
        ExperimentKind::T1Fock | ExperimentKind::T1Coherent | ExperimentKind::T2Ramsey => {
            let file = simulate_protocol(kind, section, &model, dims, &ro)?;
            let path = out_dir.join(format!("{}.{}", kind.name(), over.format.extension()));
            write_file(&path, &file.render(over.format))?;
            println!("wrote {}", path.display());
        }
        ExperimentKind::Nbar => {
            let estimate = nbar_estimate(&model, dims, &ro)?;
            let content = format!(
                "experiment = \"nbar\"\nnbar_estimate = {estimate:.9e}\n\
                 method = \"steady-state relaxation, inverse Poisson vacuum weight: nbar = -ln P(0)\"\n"
            );
            let path = out_dir.join("nbar.toml");
            write_file(&path, &content)?;
            println!("nbar estimate: {estimate:.6}");
            println!("wrote {}", path.display());
        }
        ExperimentKind::Wigner => {
            return Err(CliError::Config(
                "experiment kind 'wigner' is driven by the `wigner` subcommand".into(),
            ))
        }
    }
    Ok(())
}

pub fn parse_fit_model(text: &str) -> Result<FitModelKind, CliError> {
    match text {
        "single_exp" => Ok(FitModelKind::SingleExp),
        "coherent_vacuum" => Ok(FitModelKind::CoherentVacuum),
        "ramsey_fringe" => Ok(FitModelKind::RamseyFringe),
        other => Err(CliError::Config(format!(
            "unknown fit model '{other}' \
             (expected single_exp | coherent_vacuum | ramsey_fringe)"
        ))),
    }
}

fn model_file_name(kind: FitModelKind) -> &'static str {
    match kind {
        FitModelKind::SingleExp => "single_exp",
        FitModelKind::CoherentVacuum => "coherent_vacuum",
        FitModelKind::RamseyFringe => "ramsey_fringe",
    }
}

pub fn cmd_fit(dataset_path: &Path, model_text: &str, over: &Overrides) -> Result<(), CliError> {
    let out_dir = over.resolve_out(None);
    let kind = parse_fit_model(model_text)?;
    let text = std::fs::read_to_string(dataset_path).map_err(|e| CliError::io(dataset_path, e))?;
    let file = DatasetFile::parse(&text)?;
    let data = file.fitting_dataset();
    data.validate()?;
    let result = fit(kind, &data, None)?;
    if !result.converged {
        return Err(CliError::Fit(format!(
            "fit did not converge after {} iterations (rss = {:.3e})",
            result.iterations, result.rss
        )));
    }
    let report = fit_report_toml(&result);
    let path = out_dir.join(format!("fit_{}.toml", model_file_name(kind)));
    write_file(&path, &report)?;
    print!("{report}");
    println!("wrote {}", path.display());
    Ok(())
}

/// Build the Wigner target state from the config's `state` spec.
pub fn prepare_wigner_state(
    state: &WignerState,
    dims: HilbertDims,
) -> Result<QuantumState, CliError> {
    match state {
        WignerState::Vacuum => Ok(fock_state(0, dims)?),
        WignerState::Fock(n) => Ok(fock_state(*n, dims)?),
        WignerState::Coherent(alpha) => Ok(coherent_state(*alpha, dims)?),
        WignerState::Superposition01 => {
            let mut prepared = fock_state(0, dims)?;
            for step in snap_prepare_superposition01(dims) {
                prepared = apply_gate(&prepared, &step)?;
            }
            Ok(prepared)
        }
    }
}

pub fn cmd_wigner(config_path: &Path, over: &Overrides) -> Result<(), CliError> {
    let cfg = load_config(config_path)?;
    let out_dir = over.resolve_out(Some(&cfg));
    let dims = cfg.hilbert_dims()?;
    let section = cfg.experiment()?;
    let kind = ExperimentKind::parse(&section.kind)?;
    if kind != ExperimentKind::Wigner {
        return Err(CliError::Config(format!(
            "wigner subcommand requires experiment kind 'wigner', got '{}'",
            kind.name()
        )));
    }
    let state_spec = WignerState::parse(section.state.as_deref().unwrap_or("vacuum"))?;
    let state = prepare_wigner_state(&state_spec, dims)?;
    let spec = WignerGridSpec::square(
        section.grid_halfwidth.unwrap_or(2.5),
        section.grid_points.unwrap_or(61),
    );
    let grid = wigner(&state, &spec)?;

    let csv_path = out_dir.join("wigner.csv");
    write_file(&csv_path, &wigner_csv(&grid))?;
    let svg_path = out_dir.join("wigner.svg");
    let title = format!("Wigner map: {}", section.state.as_deref().unwrap_or("vacuum"));
    write_file(&svg_path, &wigner_svg(&grid, &title))?;
    println!(
        "wrote {} and {}",
        csv_path.display(),
        svg_path.display()
    );
    Ok(())
}

/// A fitted time constant in ms with its 1σ from the fit covariance.
#[derive(Debug, Clone, Copy)]
pub struct FittedMs {
    pub value: f64,
    pub stderr: f64,
}

/// One row of the pipeline summary. Values in ms except n̄; failures are
/// recorded per cell.
#[derive(Debug, Clone)]
pub struct PipelineRow {
    pub device: String,
    pub t1_fock_ms: Result<FittedMs, String>,
    pub t1_coherent_ms: Result<FittedMs, String>,
    pub t2_ms: Result<FittedMs, String>,
    pub nbar: Result<f64, String>,
}

impl PipelineRow {
    pub fn succeeded(&self) -> bool {
        self.t1_fock_ms.is_ok()
            && self.t1_coherent_ms.is_ok()
            && self.t2_ms.is_ok()
            && self.nbar.is_ok()
    }
}

#[allow(clippy::too_many_arguments)]
fn run_and_fit(
    kind: ExperimentKind,
    section: &ExperimentSection,
    model: &DeviceModel,
    dims: HilbertDims,
    ro: &ReadoutModel,
    out_dir: &Path,
    device: &str,
    format: FileFormat,
) -> Result<FitResult, CliError> {
    let file = simulate_protocol(kind, section, model, dims, ro)?;
    let path = out_dir.join(format!(
        "{device}_{}.{}",
        kind.name(),
        format.extension()
    ));
    write_file(&path, &file.render(format))?;
    let (_, fit_kind) = build_protocol(kind, section, model, dims)?;
    let result = fit(fit_kind, &file.fitting_dataset(), None)?;
    if !result.converged {
        return Err(CliError::Fit(format!(
            "{device} {}: fit did not converge",
            kind.name()
        )));
    }
    Ok(result)
}

pub fn cmd_pipeline(config_path: &Path, over: &Overrides) -> Result<(), CliError> {
    let cfg = load_config(config_path)?;
    let out_dir = over.resolve_out(Some(&cfg));
    if cfg.devices.is_empty() {
        return Err(CliError::Config(
            "pipeline requires at least one [[devices]] entry".into(),
        ));
    }
    let dims = cfg.hilbert_dims()?;
    let base_ro = {
        let mut ro = cfg.readout_model()?;
        over.apply(&mut ro);
        ro.validate()?;
        ro
    };
    let points = cfg.pipeline.as_ref().and_then(|p| p.points).unwrap_or(41);

    let mut rows = Vec::new();
    for (device_index, entry) in cfg.devices.iter().enumerate() {
        let row = pipeline_row(
            entry,
            device_index,
            dims,
            &base_ro,
            points,
            &out_dir,
            over.format,
        );
        rows.push(row);
    }

    let summary = render_pipeline_table(&rows);
    let machine = render_pipeline_toml(&rows);
    write_file(&out_dir.join("pipeline_summary.txt"), &summary)?;
    write_file(&out_dir.join("pipeline_summary.toml"), &machine)?;
    print!("{summary}");

    if rows.iter().any(|r| r.succeeded()) {
        Ok(())
    } else {
        Err(CliError::Simulation(
            "every pipeline row failed; see the summary for per-row errors".into(),
        ))
    }
}

fn pipeline_row(
    entry: &crate::config::NamedDeviceSection,
    device_index: usize,
    dims: HilbertDims,
    base_ro: &ReadoutModel,
    points: usize,
    out_dir: &Path,
    format: FileFormat,
) -> PipelineRow {
    let device = entry.name.clone();
    let model = match device_model_from(&entry.device) {
        Ok(m) => m,
        Err(e) => {
            let msg = e.to_string();
            return PipelineRow {
                device,
                t1_fock_ms: Err(msg.clone()),
                t1_coherent_ms: Err(msg.clone()),
                t2_ms: Err(msg.clone()),
                nbar: Err(msg),
            };
        }
    };
    let section_for = |kind: ExperimentKind| ExperimentSection {
        kind: kind.name().into(),
        points: Some(points),
        span: None,
        alpha: None,
        detuning: None,
        state: None,
        grid_points: None,
        grid_halfwidth: None,
    };
    // Decorrelate shot-noise streams across devices and protocols.
    let ro_for = |protocol_index: u64| {
        let mut ro = base_ro.clone();
        ro.rng_seed = ro
            .rng_seed
            .wrapping_add(device_index as u64 * 1009)
            .wrapping_add(protocol_index * 97);
        ro
    };

    let fit_ms = |kind: ExperimentKind, protocol_index: u64| -> Result<FittedMs, String> {
        run_and_fit(
            kind,
            &section_for(kind),
            &model,
            dims,
            &ro_for(protocol_index),
            out_dir,
            &device,
            format,
        )
        .map(|r| {
            let tc_index = r
                .kind
                .param_names()
                .iter()
                .position(|&n| n.starts_with("t1") || n.starts_with("t2"))
                .expect("decay models carry a time constant");
            FittedMs {
                value: r.time_constant() * 1e3,
                stderr: r.stderr[tc_index] * 1e3,
            }
        })
        .map_err(|e| e.to_string())
    };

    let t1_fock_ms = fit_ms(ExperimentKind::T1Fock, 0);
    let t1_coherent_ms = fit_ms(ExperimentKind::T1Coherent, 1);
    let t2_ms = fit_ms(ExperimentKind::T2Ramsey, 2);
    let nbar = nbar_estimate(&model, dims, &ro_for(3)).map_err(|e| e.to_string());

    PipelineRow {
        device,
        t1_fock_ms,
        t1_coherent_ms,
        t2_ms,
        nbar,
    }
}

fn cell(value: &Result<FittedMs, String>) -> String {
    match value {
        Ok(v) => format!("{:.3}", v.value),
        Err(_) => "failed".into(),
    }
}

pub fn render_pipeline_table(rows: &[PipelineRow]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<20} {:>10} {:>10} {:>10} {:>8}\n",
        "Device", "T1_F (ms)", "T1_C (ms)", "T2 (ms)", "nbar"
    ));
    for row in rows {
        out.push_str(&format!(
            "{:<20} {:>10} {:>10} {:>10} {:>8}\n",
            row.device,
            cell(&row.t1_fock_ms),
            cell(&row.t1_coherent_ms),
            cell(&row.t2_ms),
            match &row.nbar {
                Ok(v) => format!("{v:.4}"),
                Err(_) => "failed".into(),
            }
        ));
    }
    for row in rows {
        let failures = [
            ("t1_fock", row.t1_fock_ms.as_ref().err()),
            ("t1_coherent", row.t1_coherent_ms.as_ref().err()),
            ("t2_ramsey", row.t2_ms.as_ref().err()),
            ("nbar", row.nbar.as_ref().err()),
        ];
        for (label, error) in failures {
            if let Some(e) = error {
                out.push_str(&format!("# {} {}: {}\n", row.device, label, e));
            }
        }
    }
    out
}

fn toml_fitted(out: &mut String, name: &str, value: &Result<FittedMs, String>) {
    match value {
        Ok(v) => {
            out.push_str(&format!("{name} = {:.9e}\n", v.value));
            out.push_str(&format!("{name}_stderr = {:.9e}\n", v.stderr));
        }
        Err(e) => out.push_str(&format!("{name} = \"error: {}\"\n", e.replace('"', "'"))),
    }
}

pub fn render_pipeline_toml(rows: &[PipelineRow]) -> String {
    let mut out = String::new();
    for row in rows {
        out.push_str("[[rows]]\n");
        out.push_str(&format!("device = \"{}\"\n", row.device));
        toml_fitted(&mut out, "t1_fock_ms", &row.t1_fock_ms);
        toml_fitted(&mut out, "t1_coherent_ms", &row.t1_coherent_ms);
        toml_fitted(&mut out, "t2_ms", &row.t2_ms);
        match &row.nbar {
            Ok(v) => out.push_str(&format!("nbar = {v:.9e}\n\n")),
            Err(e) => out.push_str(&format!("nbar = \"error: {}\"\n\n", e.replace('"', "'"))),
        }
    }
    out
}
