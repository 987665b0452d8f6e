//! Identification chain from a measured record to the nonlinear modal model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fnsi::{
    build_spectra, default_block_rows, extract_modal_parameters, nonlinear_coefficients, select_order, stabilization,
    subspace_identify, ModalParameters, NonlinearCoefficients, StabilizationDiagram, StabilizationThresholds,
    StateSpaceModel, SubspaceOptions,
};
use crate::modal::{ModalModel, ResidueFit, ScaledModes};
use crate::model::{build_spline_basis, NonlinearBasis};
use crate::simulate::TimeSeriesRecord;

/// Family of nonlinear basis functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BasisKind {
    /// Cubic splines with `segments` knot intervals spanning the measured
    /// displacement range.
    Spline { segments: usize },
    /// Monomials of the listed degrees.
    Polynomial { degrees: Vec<u32> },
}

/// Identification settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentificationSettings {
    pub basis: BasisKind,
    /// Model DOF carrying the nonlinearity.
    pub nonlinear_dof: usize,
    pub band: (f64, f64),
    pub discard_periods: usize,
    /// Fixed model order; the stabilization rule chooses when absent.
    pub order: Option<usize>,
    /// Build the stabilization diagram even when the order is fixed.
    pub diagram: bool,
    pub max_order: usize,
    /// Block rows; the default rule applies when absent.
    pub block_rows: Option<usize>,
    pub weighting: bool,
    pub thresholds: StabilizationThresholds,
}

/// Everything produced by [`identify`].
#[derive(Debug, Clone)]
pub struct Identification {
    /// Basis with the identified coefficients attached.
    pub basis: NonlinearBasis,
    pub block_rows: usize,
    pub order: usize,
    /// Order chosen by the stabilization rule, if a diagram was built.
    pub selected_order: Option<usize>,
    pub diagram: Option<StabilizationDiagram>,
    pub state_space: StateSpaceModel,
    pub coefficients: NonlinearCoefficients,
    pub modal: ModalParameters,
    pub modal_model: ModalModel,
    pub residues: ResidueFit,
    pub scaled: ScaledModes,
}

/// Basis for a record: splines span the range of the nonlinear channel.
pub fn basis_for(record: &TimeSeriesRecord, kind: &BasisKind, dof: usize) -> Result<NonlinearBasis> {
    match kind {
        BasisKind::Spline { segments } => {
            let ch = record
                .channel_index(dof)
                .ok_or_else(|| Error::Config(format!("nonlinear DOF {dof} is not measured")))?;
            let data = &record.channels[ch].data;
            let lo = data.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            build_spline_basis((lo, hi), *segments, dof)
        }
        BasisKind::Polynomial { degrees } => {
            if degrees.is_empty() || degrees.iter().any(|&d| d < 2) {
                return Err(Error::Config("polynomial degrees must be at least 2".into()));
            }
            let terms: Vec<(u32, f64)> = degrees.iter().map(|&d| (d, 0.0)).collect();
            Ok(NonlinearBasis::polynomial(dof, &terms))
        }
    }
}

/// Run the identification chain on a record.
pub fn identify(record: &TimeSeriesRecord, settings: &IdentificationSettings) -> Result<Identification> {
    let basis = basis_for(record, &settings.basis, settings.nonlinear_dof)?;
    let spectra = build_spectra(record, &basis, settings.discard_periods, settings.band, settings.weighting)?;
    let n_meas = spectra.outputs.nrows();
    let block_rows = settings.block_rows.unwrap_or_else(|| default_block_rows(settings.max_order, n_meas));
    let options = SubspaceOptions { block_rows, weighting: settings.weighting, weighted_fit: false };
    let diagram = if settings.diagram || settings.order.is_none() {
        Some(stabilization(&spectra, settings.max_order, options, settings.thresholds)?)
    } else {
        None
    };
    let selected_order = diagram.as_ref().and_then(select_order);
    let order = match settings.order {
        Some(order) => order,
        None => selected_order.ok_or_else(|| Error::Numerical("no order satisfies the stabilization rule".into()))?,
    };
    let state_space = subspace_identify(&spectra, order, options)?;
    let coefficients = nonlinear_coefficients(&state_space, &spectra.frequencies)?;
    let values = coefficients.means();
    let modal = extract_modal_parameters(&state_space)?;
    let (modal_model, residues, scaled) = ModalModel::from_identified(&state_space, &basis, &values)?;
    Ok(Identification {
        basis: basis.with_coefficients(&values)?,
        block_rows,
        order,
        selected_order,
        diagram,
        state_space,
        coefficients,
        modal,
        modal_model,
        residues,
        scaled,
    })
}
