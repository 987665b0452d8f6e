//! Subcommand implementations.

use anyhow::{anyhow, bail, Context, Result};
use log::info;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use nnmid::continuation::{
    continue_branch, physical_orbit, solution_at_amplitude, ContinuationOptions, IntegratorOptions, NnmBranch, StopRule,
};
use nnmid::excitation::{MultisineSpec, SteppedSineSchedule};
use nnmid::fnsi::{mac, Stability, StabilizationDiagram};
use nnmid::modal::ModalModel;
use nnmid::model::{modal_damping_ratios, FeModel, NonlinearBasis};
use nnmid::phaseres::{
    appropriation_sweep, backbone_of, compare_backbones, compare_curves, free_decay, wavelet_ridge,
    AppropriationOptions, AppropriationResult, ComparisonReport, DecayOptions, WaveletOptions, WaveletRidge,
};
use nnmid::pipeline::identify;
use nnmid::simulate::{
    add_noise, run_multisine_experiment, Channel, MultisineExperiment, NewmarkOptions, TimeSeriesRecord,
};

use crate::config::{Config, ConfigError, Loaded};
use crate::io::{peek_kind, read_csv, read_json, write_csv, write_json, Provenance};
use crate::plot::{write_svg, Figure, Series, Style};

/// One recorded channel of a dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelInfo {
    pub label: String,
    pub node: usize,
    pub dof: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub fs: f64,
    pub periods: usize,
    pub samples_per_period: usize,
    pub forcing_node: usize,
    pub forcing_dof: usize,
    pub channels: Vec<ChannelInfo>,
    pub noise_level: f64,
    /// Per-channel SNR (dB); absent for noise-free data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<Vec<f64>>,
    pub decimation: usize,
    pub config: Config,
}

/// Reference quantities of the simulated structure.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthBody {
    pub frequencies_hz: Vec<f64>,
    pub damping: Vec<f64>,
    pub nonlinear_node: usize,
    pub nonlinear_dof: usize,
    pub cubic: f64,
    pub quadratic: f64,
    pub modal_model: ModalModel,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModeSummary {
    pub frequency_hz: f64,
    pub damping: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoefficientSummary {
    pub label: String,
    pub mean_real: f64,
    pub mean_imag: f64,
    pub log_ratio: f64,
    /// Largest `|c h(q)|` over the measured displacement range (N).
    pub peak_force: f64,
    pub negligible: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelBody {
    pub dataset_config_hash: String,
    pub order: usize,
    pub block_rows: usize,
    pub modes: Vec<ModeSummary>,
    pub coefficients: Vec<CoefficientSummary>,
    pub basis: NonlinearBasis,
    pub state_space: nnmid::fnsi::StateSpaceModel,
    pub residue_fit_residual: f64,
    pub max_imaginary_ratio: f64,
    pub modal_model: ModalModel,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModeError {
    pub mode: usize,
    pub frequency_true_hz: f64,
    pub frequency_identified_hz: f64,
    pub frequency_error_percent: f64,
    pub damping_true: f64,
    pub damping_identified: f64,
    pub damping_error_percent: f64,
    pub mac: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentifyReport {
    pub order: usize,
    pub selected_by_rule: Option<usize>,
    pub modes: Vec<ModeSummary>,
    pub coefficients: Vec<CoefficientSummary>,
    /// Relative contribution below which a term counts as negligible.
    pub negligible_threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub errors: Option<Vec<ModeError>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_force_error: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BranchBody {
    /// Mode number from 1.
    pub mode: usize,
    pub designated_node: usize,
    pub designated_dof: usize,
    pub branch: NnmBranch,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackboneError {
    pub mode: usize,
    pub report: ComparisonReport,
    pub identified_dip_percent: f64,
    pub identified_shift_percent: f64,
    pub truth_dip_percent: f64,
    pub truth_shift_percent: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RidgeBody {
    pub mode: usize,
    pub designated_node: usize,
    pub designated_dof: usize,
    pub appropriated_frequency_hz: f64,
    pub appropriation: AppropriationResult,
    pub decay_samples: usize,
    pub ridge: WaveletRidge,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonBody {
    pub mode: usize,
    pub designated_node: usize,
    pub inputs: Vec<String>,
    pub report: ComparisonReport,
}

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    anyhow!(ConfigError(msg.into()))
}

fn ensure_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

fn node_of(fe: &FeModel, dof: usize) -> usize {
    fe.dof_map.iter().position(|d| d.translation == Some(dof)).unwrap_or(usize::MAX)
}

pub fn simulate(loaded: &Loaded, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let c = &loaded.config;
    let fe = loaded.fe_model()?;
    let basis = loaded.true_basis(&fe)?;
    let exp = MultisineExperiment {
        excitation: MultisineSpec {
            f_min: c.excitation.f_min,
            f_max: c.excitation.f_max,
            samples_per_period: c.excitation.samples_per_period,
            sample_rate: c.excitation.sample_rate,
            rms: c.excitation.rms,
            periods: c.excitation.periods,
            seed: c.excitation.seed,
        },
        decimation: c.simulation.decimation,
    };
    let options = NewmarkOptions { tolerance: c.simulation.newton_tolerance, ..Default::default() };
    info!("integrating {} samples", c.excitation.samples_per_period * c.excitation.periods);
    let clean = run_multisine_experiment(&fe, &basis, &exp, options)?;
    let ref_dof = Loaded::node_dof(&fe, c.simulation.noise_reference_node, "simulation.noise_reference_node")?;
    let ref_ch = clean
        .channel_index(ref_dof)
        .ok_or_else(|| config_error("simulation.noise_reference_node: node is not measured"))?;
    let (rec, snr) = add_noise(&clean, c.simulation.noise_level, ref_ch, c.simulation.noise_seed)?;
    let prov = Provenance { config_hash: loaded.hash.clone(), seeds: loaded.seeds() };
    let n = rec.len();
    let fs = rec.fs;
    write_csv(&out.join("force.csv"), &prov, &["time", "force"], (0..n).map(|i| vec![i as f64 / fs, rec.input[i]]))?;
    let mut header = vec!["time".to_string()];
    header.extend(rec.channels.iter().map(|ch| ch.label.clone()));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(
        &out.join("response.csv"),
        &prov,
        &header_refs,
        (0..n).map(|i| {
            let mut row = Vec::with_capacity(rec.channels.len() + 1);
            row.push(i as f64 / fs);
            row.extend(rec.channels.iter().map(|ch| ch.data[i]));
            row
        }),
    )?;
    let meta = DatasetMeta {
        fs,
        periods: rec.periods,
        samples_per_period: rec.samples_per_period,
        forcing_node: node_of(&fe, fe.forcing_dof),
        forcing_dof: fe.forcing_dof,
        channels: rec
            .channels
            .iter()
            .map(|ch| ChannelInfo { label: ch.label.clone(), node: node_of(&fe, ch.dof), dof: ch.dof })
            .collect(),
        noise_level: c.simulation.noise_level,
        snr_db: if c.simulation.noise_level > 0.0 { Some(snr) } else { None },
        decimation: c.simulation.decimation,
        config: c.clone(),
    };
    write_json(&out.join("metadata.json"), "dataset", &prov, &meta)?;
    let truth = truth_body(loaded, &fe)?;
    write_json(&out.join("truth.json"), "truth_model", &prov, &truth)?;
    Ok(())
}

/// Reference modal quantities: FE modes inside the identification band.
fn truth_body(loaded: &Loaded, fe: &FeModel) -> Result<TruthBody> {
    let c = &loaded.config;
    let ratios = modal_damping_ratios(fe)?;
    let band = c.identification.band;
    let n = ratios.iter().filter(|(w, _)| w / (2.0 * PI) <= band[1]).count().max(1);
    let basis = loaded.true_basis(fe)?;
    let nl_dof = basis.terms[0].dof;
    Ok(TruthBody {
        frequencies_hz: ratios.iter().take(n).map(|(w, _)| w / (2.0 * PI)).collect(),
        damping: ratios.iter().take(n).map(|(_, z)| *z).collect(),
        nonlinear_node: c.model.nonlinear_node,
        nonlinear_dof: nl_dof,
        cubic: c.model.cubic,
        quadratic: c.model.quadratic,
        modal_model: ModalModel::from_fe(fe, &basis, n)?,
    })
}

/// Rebuild the record written by [`simulate`].
pub fn load_dataset(dir: &Path) -> Result<(TimeSeriesRecord, DatasetMeta, Provenance)> {
    let doc = read_json::<DatasetMeta>(&dir.join("metadata.json"), "dataset")?;
    let meta = doc.body;
    let force = read_csv(&dir.join("force.csv"))?;
    let resp = read_csv(&dir.join("response.csv"))?;
    let mut channels = Vec::with_capacity(meta.channels.len());
    for info in &meta.channels {
        let data = resp
            .column(&info.label)
            .map_err(|_| anyhow!(nnmid::Error::Data(format!("response.csv lacks channel {}", info.label))))?;
        channels.push(Channel { label: info.label.clone(), dof: info.dof, data: data.to_vec() });
    }
    let rec = TimeSeriesRecord {
        fs: meta.fs,
        channels,
        input: force.column("force")?.to_vec(),
        forcing_dof: meta.forcing_dof,
        periods: meta.periods,
        samples_per_period: meta.samples_per_period,
    };
    rec.validate()?;
    Ok((rec, meta, doc.provenance))
}

pub fn identify_cmd(loaded: &Loaded, dataset: &Path, truth: Option<&Path>, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let (rec, meta, data_prov) = load_dataset(dataset)?;
    let c = &loaded.config;
    let nl = meta
        .channels
        .iter()
        .find(|ch| ch.node == c.model.nonlinear_node)
        .ok_or_else(|| config_error("model.nonlinear_node: node is not among the dataset channels"))?;
    let settings = loaded.identification_settings(nl.dof)?;
    let id = identify(&rec, &settings)?;
    let prov = Provenance { config_hash: loaded.hash.clone(), seeds: data_prov.seeds.clone() };
    if let Some(d) = &id.diagram {
        write_stabilization(out, &prov, d)?;
    }
    let nl_ch = rec.channel_index(nl.dof).expect("channel exists");
    let data = &rec.channels[nl_ch].data;
    let lo = data.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let input_rms = (rec.input.iter().map(|x| x * x).sum::<f64>() / rec.len() as f64).sqrt();
    let negligible_threshold = 0.01;
    let grid: Vec<f64> = (0..=400).map(|i| lo + (hi - lo) * i as f64 / 400.0).collect();
    let coefficients: Vec<CoefficientSummary> = id
        .coefficients
        .terms
        .iter()
        .enumerate()
        .map(|(a, t)| {
            let peak = grid.iter().map(|&q| (t.mean_real * id.basis.term_value(a, q).0).abs()).fold(0.0, f64::max);
            CoefficientSummary {
                label: t.label.clone(),
                mean_real: t.mean_real,
                mean_imag: t.mean_imag,
                log_ratio: t.log_ratio,
                peak_force: peak,
                negligible: peak < negligible_threshold * input_rms || !(t.log_ratio >= 1.0),
            }
        })
        .collect();
    write_csv(
        &out.join("coefficients.csv"),
        &prov,
        &["term", "mean_real", "mean_imag", "log_ratio", "peak_force", "negligible"],
        coefficients.iter().enumerate().map(|(a, s)| {
            vec![a as f64, s.mean_real, s.mean_imag, s.log_ratio, s.peak_force, if s.negligible { 1.0 } else { 0.0 }]
        }),
    )?;
    write_csv(
        &out.join("coefficient_spectra.csv"),
        &prov,
        &["term", "frequency_hz", "real", "imag"],
        id.coefficients.terms.iter().enumerate().flat_map(|(a, t)| {
            t.frequencies.iter().zip(&t.values).map(move |(&f, v)| vec![a as f64, f, v.re, v.im]).collect::<Vec<_>>()
        }),
    )?;
    let modes: Vec<ModeSummary> =
        id.modal.modes.iter().map(|m| ModeSummary { frequency_hz: m.frequency_hz(), damping: m.damping }).collect();
    let compiled = id.basis.compile();
    let identified_force: Vec<f64> =
        grid.iter().map(|&q| compiled.laws.iter().filter(|l| l.dof == nl.dof).map(|l| l.eval(q).0).sum()).collect();
    let mut report = IdentifyReport {
        order: id.order,
        selected_by_rule: id.selected_order,
        modes: modes.clone(),
        coefficients: coefficients.clone(),
        negligible_threshold,
        errors: None,
        max_force_error: None,
    };
    let mut force_rows: Vec<Vec<f64>> = grid.iter().zip(&identified_force).map(|(&q, &f)| vec![q, f]).collect();
    let mut force_header = vec!["displacement", "identified_force"];
    if let Some(tp) = truth {
        let tdoc = read_json::<TruthBody>(tp, "truth_model")?;
        let t = tdoc.body;
        let mut errs = Vec::new();
        for (k, (&ft, &zt)) in t.frequencies_hz.iter().zip(&t.damping).enumerate() {
            let Some(est) = id
                .modal
                .modes
                .iter()
                .min_by(|a, b| (a.frequency_hz() - ft).abs().total_cmp(&(b.frequency_hz() - ft).abs()))
            else {
                continue;
            };
            // Truth shapes are stored per truth output DOF; align by DOF.
            let mut a = Vec::new();
            let mut b = Vec::new();
            for (r, &dof) in id.state_space.output_dofs.iter().enumerate() {
                if let Some(tr) = t.modal_model.row_of(dof) {
                    a.push(est.shape[r]);
                    b.push(Complex64::new(t.modal_model.shapes[(tr, k)], 0.0));
                }
            }
            errs.push(ModeError {
                mode: k + 1,
                frequency_true_hz: ft,
                frequency_identified_hz: est.frequency_hz(),
                frequency_error_percent: 100.0 * (est.frequency_hz() / ft - 1.0),
                damping_true: zt,
                damping_identified: est.damping,
                damping_error_percent: 100.0 * (est.damping / zt - 1.0),
                mac: mac(&a, &b)?,
            });
        }
        let true_force: Vec<f64> = grid.iter().map(|&q| t.cubic * q * q * q + t.quadratic * q * q).collect();
        let err = identified_force.iter().zip(&true_force).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        report.errors = Some(errs);
        report.max_force_error = Some(err);
        for (row, f) in force_rows.iter_mut().zip(&true_force) {
            row.push(*f);
        }
        force_header.push("true_force");
    }
    write_csv(&out.join("restoring_force.csv"), &prov, &force_header, force_rows.clone())?;
    let mut series = vec![Series {
        name: "identified",
        points: force_rows.iter().map(|r| (r[0], r[1])).collect(),
        style: Style::Line,
    }];
    if force_header.len() == 3 {
        series.push(Series {
            name: "true",
            points: force_rows.iter().map(|r| (r[0], r[2])).collect(),
            style: Style::Line,
        });
    }
    write_svg(
        &out.join("restoring_force.svg"),
        &prov,
        &Figure { title: "Nonlinear restoring force", x_label: "displacement (m)", y_label: "force (N)", series },
    )?;
    let body = ModelBody {
        dataset_config_hash: data_prov.config_hash.clone(),
        order: id.order,
        block_rows: id.block_rows,
        modes,
        coefficients,
        basis: id.basis.clone(),
        state_space: id.state_space.clone(),
        residue_fit_residual: id.residues.relative_residual,
        max_imaginary_ratio: id.scaled.max_imag_ratio,
        modal_model: id.modal_model.clone(),
    };
    write_json(&out.join("model.json"), "identified_model", &prov, &body)?;
    write_json(&out.join("report.json"), "identification_report", &prov, &report)?;
    Ok(())
}

fn stability_code(s: Stability) -> f64 {
    match s {
        Stability::New => 0.0,
        Stability::Frequency => 1.0,
        Stability::Damping => 2.0,
        Stability::Full => 3.0,
    }
}

fn write_stabilization(out: &Path, prov: &Provenance, d: &StabilizationDiagram) -> Result<()> {
    let rows: Vec<Vec<f64>> = d
        .orders
        .iter()
        .flat_map(|o| {
            o.candidates
                .iter()
                .map(move |c| vec![o.order as f64, c.frequency_hz, c.damping, stability_code(c.stability)])
        })
        .collect();
    write_csv(&out.join("stabilization.csv"), prov, &["order", "frequency_hz", "damping", "stability"], rows.clone())?;
    let classes = [("new", 0.0), ("frequency", 1.0), ("damping", 2.0), ("stable", 3.0)];
    let series = classes
        .iter()
        .map(|&(name, code)| Series {
            name,
            points: rows.iter().filter(|r| r[3] == code).map(|r| (r[1], r[0])).collect(),
            style: Style::Points,
        })
        .collect();
    write_svg(
        &out.join("stabilization.svg"),
        prov,
        &Figure { title: "Stabilization diagram", x_label: "frequency (Hz)", y_label: "model order", series },
    )
}

/// Modal model and seeds from an identified-model or truth document.
fn load_modal(path: &Path) -> Result<(ModalModel, Provenance)> {
    #[derive(Deserialize)]
    struct HasModal {
        modal_model: ModalModel,
    }
    let kind = peek_kind(path)?;
    if kind != "identified_model" && kind != "truth_model" {
        bail!(ConfigError(format!("{}: '{kind}' documents carry no modal model", path.display())));
    }
    let doc = read_json::<HasModal>(path, &kind)?;
    let mut m = doc.body.modal_model;
    m.refresh();
    Ok((m, doc.provenance))
}

fn continuation_options(loaded: &Loaded) -> ContinuationOptions {
    let c = &loaded.config.continuation;
    ContinuationOptions {
        seed_amplitude: c.seed_amplitude,
        tolerance: c.tolerance,
        max_points: c.max_points,
        orbit_samples: c.orbit_samples,
        integrator: IntegratorOptions { rtol: c.integrator_rtol, ..Default::default() },
        ..Default::default()
    }
}

fn stop_rule(loaded: &Loaded) -> StopRule {
    let c = &loaded.config.continuation;
    match (c.max_amplitude, c.max_energy) {
        (Some(a), _) => StopRule::MaxAmplitude(a),
        (None, Some(e)) => StopRule::MaxEnergy(e),
        (None, None) => unreachable!("validated"),
    }
}

fn branch_rows(b: &NnmBranch) -> Vec<Vec<f64>> {
    b.points
        .iter()
        .map(|p| {
            vec![
                p.amplitude,
                p.fundamental_amplitude,
                p.energy,
                p.frequency_hz(),
                p.period,
                p.residual,
                p.max_floquet,
                p.monodromy_det,
            ]
        })
        .collect()
}

const BRANCH_HEADER: [&str; 8] = [
    "amplitude",
    "fundamental_amplitude",
    "energy",
    "frequency_hz",
    "period",
    "residual",
    "max_floquet",
    "monodromy_det",
];

/// Largest drop below and final shift above the first point, in percent.
fn dip_and_shift(b: &NnmBranch) -> (f64, f64) {
    let f0 = b.points[0].frequency_hz();
    let dip = b.points.iter().map(|p| p.frequency_hz() / f0 - 1.0).fold(0.0, f64::min);
    let shift = b.points.last().map(|p| p.frequency_hz() / f0 - 1.0).unwrap_or(0.0);
    (100.0 * dip, 100.0 * shift)
}

pub fn continue_cmd(loaded: &Loaded, model_path: &Path, truth: Option<&Path>, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let (model, in_prov) = load_modal(model_path)?;
    let fe = loaded.fe_model()?;
    let node = loaded.config.continuation.designated_node;
    let dof = Loaded::node_dof(&fe, node, "continuation.designated_node")?;
    let row =
        model.row_of(dof).ok_or_else(|| config_error("continuation.designated_node: node is not in the model"))?;
    let prov = Provenance { config_hash: loaded.hash.clone(), seeds: in_prov.seeds.clone() };
    let options = continuation_options(loaded);
    let truth_model = match truth {
        Some(p) => Some(load_modal(p)?.0),
        None => None,
    };
    for &mode in &loaded.config.continuation.modes {
        if mode > model.n_modes() {
            bail!(ConfigError(format!(
                "continuation.modes: mode {mode} exceeds the {} modes of the model",
                model.n_modes()
            )));
        }
        info!("continuing mode {mode}");
        let branch = continue_branch(&model, mode - 1, row, stop_rule(loaded), options)?;
        let rows = branch_rows(&branch);
        write_csv(&out.join(format!("backbone_mode{mode}.csv")), &prov, &BRANCH_HEADER, rows.clone())?;
        write_svg(
            &out.join(format!("backbone_mode{mode}.svg")),
            &prov,
            &Figure {
                title: &format!("Backbone of mode {mode}"),
                x_label: "frequency (Hz)",
                y_label: "amplitude (m)",
                series: vec![Series {
                    name: "max |x|",
                    points: rows.iter().map(|r| (r[3], r[0])).collect(),
                    style: Style::Line,
                }],
            },
        )?;
        for (i, &amp) in loaded.config.continuation.orbit_amplitudes.iter().enumerate() {
            let sol = match solution_at_amplitude(&model, &branch, amp) {
                Ok(s) => s,
                Err(nnmid::Error::Parameter(msg)) => {
                    log::warn!("mode {mode}: no orbit at amplitude {amp:e}: {msg}");
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            let n = loaded.config.continuation.orbit_samples;
            let orbit = physical_orbit(&model, &sol, n, options.integrator)?;
            let mut header = vec!["time".to_string()];
            header.extend(model.output_dofs.iter().map(|&d| format!("node{}", node_of(&fe, d))));
            let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
            write_csv(
                &out.join(format!("orbit_mode{mode}_{}.csv", i + 1)),
                &prov,
                &header_refs,
                (0..n).map(|s| {
                    let mut r = vec![sol.period * s as f64 / n as f64];
                    r.extend(orbit.row(s).iter().copied());
                    r
                }),
            )?;
        }
        let body = BranchBody { mode, designated_node: node, designated_dof: dof, branch: branch.clone() };
        write_json(&out.join(format!("branch_mode{mode}.json")), "branch", &prov, &body)?;
        if let Some(tm) = &truth_model {
            let trow = tm.row_of(dof).ok_or_else(|| config_error("truth model lacks the designated node"))?;
            let tb = continue_branch(tm, mode - 1, trow, stop_rule(loaded), options)?;
            let reference: Vec<(f64, f64)> = tb.points.iter().rev().map(|p| (p.amplitude, p.frequency_hz())).collect();
            let curve: Vec<(f64, f64)> = branch.points.iter().map(|p| (p.amplitude, p.frequency_hz())).collect();
            let report = compare_curves(&curve, &reference)?;
            let (idip, ishift) = dip_and_shift(&branch);
            let (tdip, tshift) = dip_and_shift(&tb);
            let rows: Vec<Vec<f64>> = report.pairs.iter().map(|&(a, f, fr)| vec![a, f, fr, f / fr - 1.0]).collect();
            write_csv(
                &out.join(format!("backbone_error_mode{mode}.csv")),
                &prov,
                &["amplitude", "identified_hz", "truth_hz", "relative_error"],
                rows.clone(),
            )?;
            write_svg(
                &out.join(format!("backbone_error_mode{mode}.svg")),
                &prov,
                &Figure {
                    title: &format!("Identified and true backbones, mode {mode}"),
                    x_label: "frequency (Hz)",
                    y_label: "amplitude (m)",
                    series: vec![
                        Series {
                            name: "identified",
                            points: rows.iter().map(|r| (r[1], r[0])).collect(),
                            style: Style::Line,
                        },
                        Series {
                            name: "true",
                            points: rows.iter().map(|r| (r[2], r[0])).collect(),
                            style: Style::Line,
                        },
                    ],
                },
            )?;
            let err = BackboneError {
                mode,
                report,
                identified_dip_percent: idip,
                identified_shift_percent: ishift,
                truth_dip_percent: tdip,
                truth_shift_percent: tshift,
            };
            write_json(&out.join(format!("backbone_error_mode{mode}.json")), "backbone_error", &prov, &err)?;
        }
    }
    Ok(())
}

pub fn phase_resonance(loaded: &Loaded, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let p = &loaded.config.phase_resonance;
    let fe = loaded.fe_model()?;
    let basis = loaded.true_basis(&fe)?;
    let dof = Loaded::node_dof(&fe, p.designated_node, "phase_resonance.designated_node")?;
    let schedule = SteppedSineSchedule {
        f_start: p.f_start,
        f_end: p.f_end,
        df: p.df,
        amplitude: p.amplitude,
        settle_periods: p.settle_periods,
        measure_periods: p.measure_periods,
    };
    let app_opts = AppropriationOptions {
        fs: p.sample_rate,
        steady_tolerance: p.steady_tolerance,
        min_indicator: p.min_indicator,
        ..Default::default()
    };
    let measured = fe.measured_dofs();
    let app = appropriation_sweep(&fe, &basis, &schedule, &measured, dof, app_opts)?;
    info!("appropriated at {:.3} Hz", app.frequency());
    let prov = Provenance { config_hash: loaded.hash.clone(), seeds: BTreeMap::new() };
    let rows: Vec<Vec<f64>> = (0..app.frequencies.len())
        .map(|i| {
            vec![
                app.frequencies[i],
                app.indicator[i].unwrap_or(f64::NAN),
                if app.indicator[i].is_some() { 1.0 } else { 0.0 },
                app.amplitude[i],
                app.phase_lag[i],
            ]
        })
        .collect();
    write_csv(
        &out.join("appropriation.csv"),
        &prov,
        &["frequency_hz", "indicator", "steady", "amplitude", "phase_lag"],
        rows.clone(),
    )?;
    write_svg(
        &out.join("appropriation.svg"),
        &prov,
        &Figure {
            title: "Appropriation indicator",
            x_label: "frequency (Hz)",
            y_label: "indicator",
            series: vec![Series {
                name: "indicator",
                points: rows.iter().map(|r| (r[0], r[1])).collect(),
                style: Style::Line,
            }],
        },
    )?;
    let decay_opts = DecayOptions {
        fs: p.sample_rate,
        floor: p.decay_floor,
        max_duration: p.max_decay_duration,
        ..Default::default()
    };
    let decay = free_decay(&fe, &basis, &app.state, &[dof], dof, decay_opts)?;
    let x = &decay.channels[0].data;
    write_csv(
        &out.join("decay.csv"),
        &prov,
        &["time", "displacement"],
        x.iter().enumerate().map(|(i, &v)| vec![(i + 1) as f64 / p.sample_rate, v]),
    )?;
    let ridge = wavelet_ridge(
        x,
        p.sample_rate,
        (p.wavelet_band[0], p.wavelet_band[1]),
        WaveletOptions {
            omega_c: p.omega_c,
            voices_per_octave: p.voices_per_octave,
            stride: p.ridge_stride,
            ..Default::default()
        },
    )?;
    let rrows: Vec<Vec<f64>> = (0..ridge.time.len())
        .map(|i| vec![ridge.time[i], ridge.frequency[i], ridge.amplitude[i], if ridge.valid[i] { 1.0 } else { 0.0 }])
        .collect();
    write_csv(&out.join("ridge.csv"), &prov, &["time", "frequency_hz", "amplitude", "valid"], rrows.clone())?;
    write_svg(
        &out.join("ridge.svg"),
        &prov,
        &Figure {
            title: "Wavelet ridge of the free decay",
            x_label: "frequency (Hz)",
            y_label: "amplitude (m)",
            series: vec![Series {
                name: "ridge",
                points: rrows.iter().filter(|r| r[3] == 1.0).map(|r| (r[1], r[2])).collect(),
                style: Style::Points,
            }],
        },
    )?;
    let body = RidgeBody {
        mode: p.mode,
        designated_node: p.designated_node,
        designated_dof: dof,
        appropriated_frequency_hz: app.frequency(),
        decay_samples: decay.len(),
        appropriation: app,
        ridge,
    };
    write_json(&out.join("ridge.json"), "ridge", &prov, &body)?;
    Ok(())
}

enum Curve {
    Branch(BranchBody),
    Ridge(RidgeBody),
}

impl Curve {
    fn load(path: &Path) -> Result<(Self, Provenance)> {
        match peek_kind(path)?.as_str() {
            "branch" => {
                let d = read_json::<BranchBody>(path, "branch")?;
                Ok((Curve::Branch(d.body), d.provenance))
            }
            "ridge" => {
                let d = read_json::<RidgeBody>(path, "ridge")?;
                Ok((Curve::Ridge(d.body), d.provenance))
            }
            other => bail!(ConfigError(format!("{}: cannot compare a '{other}' document", path.display()))),
        }
    }

    fn mode(&self) -> usize {
        match self {
            Curve::Branch(b) => b.mode,
            Curve::Ridge(r) => r.mode,
        }
    }

    fn node(&self) -> usize {
        match self {
            Curve::Branch(b) => b.designated_node,
            Curve::Ridge(r) => r.designated_node,
        }
    }
}

pub fn compare(loaded: &Loaded, first: &Path, second: &Path, out: &Path) -> Result<()> {
    let (a, pa) = Curve::load(first)?;
    let (b, pb) = Curve::load(second)?;
    if a.mode() != b.mode() {
        bail!(ConfigError(format!(
            "mode mismatch: {} describes mode {}, {} mode {}",
            first.display(),
            a.mode(),
            second.display(),
            b.mode()
        )));
    }
    if a.node() != b.node() {
        bail!(ConfigError(format!("designated node mismatch: {} vs {}", a.node(), b.node())));
    }
    let report = match (&a, &b) {
        (Curve::Branch(x), Curve::Ridge(r)) | (Curve::Ridge(r), Curve::Branch(x)) => {
            compare_backbones(&backbone_of(&x.branch), &r.ridge)?
        }
        (Curve::Branch(x), Curve::Branch(y)) => {
            let reference: Vec<(f64, f64)> = backbone_of(&y.branch).into_iter().rev().collect();
            compare_curves(&backbone_of(&x.branch), &reference)?
        }
        (Curve::Ridge(_), Curve::Ridge(_)) => bail!(ConfigError("compare needs at least one branch".into())),
    };
    ensure_dir(out)?;
    let mut seeds = pa.seeds.clone();
    seeds.extend(pb.seeds.clone());
    let prov = Provenance { config_hash: loaded.hash.clone(), seeds };
    let rows: Vec<Vec<f64>> = report.pairs.iter().map(|&(amp, f, fr)| vec![amp, f, fr, f / fr - 1.0]).collect();
    write_csv(
        &out.join("comparison.csv"),
        &prov,
        &["amplitude", "backbone_hz", "reference_hz", "relative_error"],
        rows.clone(),
    )?;
    write_svg(
        &out.join("comparison.svg"),
        &prov,
        &Figure {
            title: &format!("Backbone comparison, mode {}", a.mode()),
            x_label: "frequency (Hz)",
            y_label: "fundamental amplitude (m)",
            series: vec![
                Series { name: "backbone", points: rows.iter().map(|r| (r[1], r[0])).collect(), style: Style::Line },
                Series { name: "reference", points: rows.iter().map(|r| (r[2], r[0])).collect(), style: Style::Points },
            ],
        },
    )?;
    let body = ComparisonBody {
        mode: a.mode(),
        designated_node: a.node(),
        inputs: vec![first.display().to_string(), second.display().to_string()],
        report,
    };
    write_json(&out.join("comparison.json"), "comparison", &prov, &body)?;
    Ok(())
}

/// Output directory, defaulting to the current one.
pub fn out_dir(out: Option<PathBuf>) -> PathBuf {
    out.unwrap_or_else(|| PathBuf::from("."))
}
