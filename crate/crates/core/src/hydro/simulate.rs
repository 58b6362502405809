use serde::{Deserialize, Serialize};

use super::{
    interpolate_profile, solve_flow_full, step_heat, ColumnConfig, ColumnState, ForcingSeries,
    HeatBoundary,
};
use crate::data::{FluxSeries, TemperatureField};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Full cell-temperature profile captured at one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSnapshot {
    pub time_index: usize,
    pub temp_c: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub flux: FluxSeries,
    pub temps: TemperatureField,
    pub cell_depths_m: Vec<f64>,
    pub snapshots: Vec<ProfileSnapshot>,
}

/// Runs the column through every forcing step.
///
/// Step 0 records the initial state (linear profiles between the first
/// boundary values). Every later step solves flow with the current
/// temperatures, then advances heat with that flux. Sensor temperatures
/// are interpolated linearly between cell centres and the boundary faces.
pub fn simulate(
    config: &ColumnConfig,
    forcing: &ForcingSeries,
    sample_depths: &[f64],
    snapshot_times: &[usize],
) -> Result<SimOutput> {
    let initial = ColumnState::linear(
        config,
        forcing.top_head_m[0],
        forcing.top_temp_c[0],
        forcing.bottom_head_m[0],
        forcing.bottom_temp_c[0],
    );
    simulate_from(config, forcing, initial, sample_depths, snapshot_times)
}

/// Like [`simulate`] but from an explicit initial state.
pub fn simulate_from(
    config: &ColumnConfig,
    forcing: &ForcingSeries,
    initial: ColumnState,
    sample_depths: &[f64],
    snapshot_times: &[usize],
) -> Result<SimOutput> {
    config.validate()?;
    forcing.validate()?;
    initial.validate(config)?;
    if sample_depths.is_empty() {
        return Err(Error::arg("at least one sample depth is required"));
    }
    if let Some(z) = sample_depths
        .iter()
        .find(|z| !(**z >= 0.0 && **z <= config.length_m))
    {
        return Err(Error::arg(format!(
            "sample depth {z} m outside the column [0, {}]",
            config.length_m
        )));
    }
    let n = forcing.len();
    if let Some(t) = snapshot_times.iter().find(|t| **t >= n) {
        return Err(Error::arg(format!("snapshot time {t} beyond forcing length {n}")));
    }

    let mut state = initial;
    let mut flux = Vec::with_capacity(n);
    let mut temps = Matrix::zeros(n, sample_depths.len());
    let mut snapshots = Vec::new();
    for step in 0..n {
        let flow = solve_flow_full(
            config,
            &state,
            forcing.top_head_m[step],
            forcing.bottom_head_m[step],
            forcing.dt_s,
        )?;
        let (top_c, bottom_c) = (forcing.top_temp_c[step], forcing.bottom_temp_c[step]);
        if step > 0 {
            state.temp_c = step_heat(
                config,
                &state.temp_c,
                &flow.face_flux,
                forcing.dt_s,
                HeatBoundary::Dirichlet { top_c, bottom_c },
            )?;
        }
        state.head_m = flow.head_m;
        flux.push(flow.face_flux[0]);
        for (d, &z) in sample_depths.iter().enumerate() {
            temps.set(step, d, interpolate_profile(config, &state.temp_c, top_c, bottom_c, z));
        }
        if snapshot_times.contains(&step) {
            snapshots.push(ProfileSnapshot {
                time_index: step,
                temp_c: state.temp_c.clone(),
            });
        }
    }
    Ok(SimOutput {
        flux: FluxSeries::new(forcing.dt_s, flux)?,
        temps: TemperatureField::new(forcing.dt_s, sample_depths.to_vec(), temps)?,
        cell_depths_m: config.cell_depths(),
        snapshots,
    })
}
