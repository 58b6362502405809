//! One-dimensional saturated column: Darcy flow with temperature-dependent
//! viscosity coupled to advective/conductive heat transport.
//!
//! Depth `z` is measured downward from the sediment-water interface
//! (`z = 0`) to the Dirichlet bottom boundary (`z = length_m`). Cells are
//! cell-centred with centres at `(i + 0.5) * cell_size_m`; both boundary
//! values sit on the outer faces, half a cell from the nearest centre.
//! Fluxes are positive upward (groundwater discharging to the river).

mod flow;
mod forcing;
mod heat;
pub mod io;
mod simulate;
mod tridiag;
mod viscosity;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use flow::{hydraulic_conductivity, solve_flow, solve_flow_full, FlowSolution};
pub use forcing::{generate_forcing, ForcingSpec};
pub use heat::{steady_profile, step_heat, HeatBoundary};
pub use simulate::{simulate, ProfileSnapshot, SimOutput};
pub use viscosity::viscosity;

/// Gravitational acceleration, m/s².
pub const GRAVITY: f64 = 9.81;

/// Observation depths used throughout the experiments (m).
pub const DEFAULT_SENSOR_DEPTHS: [f64; 4] = [0.005, 0.15, 0.255, 1.995];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnConfig {
    pub length_m: f64,
    pub cell_size_m: f64,
    pub porosity: f64,
    pub permeability_m2: f64,
    /// Only used when positive; zero gives a quasi-steady flow solve.
    pub specific_storage_per_m: f64,
    pub rock_density_kg_m3: f64,
    pub rock_heat_capacity_j_kgk: f64,
    pub water_heat_capacity_j_kgk: f64,
    pub bulk_thermal_conductivity_w_mk: f64,
    pub water_density_kg_m3: f64,
}

impl Default for ColumnConfig {
    fn default() -> Self {
        Self {
            length_m: 2.0,
            cell_size_m: 0.01,
            porosity: 0.3,
            permeability_m2: 1.0e-11,
            specific_storage_per_m: 0.0,
            rock_density_kg_m3: 2650.0,
            rock_heat_capacity_j_kgk: 800.0,
            water_heat_capacity_j_kgk: 4182.0,
            bulk_thermal_conductivity_w_mk: 1.8,
            water_density_kg_m3: 1000.0,
        }
    }
}

impl ColumnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.length_m.is_finite() && self.length_m > 0.0) {
            return Err(Error::arg("length_m must be positive"));
        }
        if !(self.cell_size_m.is_finite() && self.cell_size_m > 0.0) {
            return Err(Error::arg("cell_size_m must be positive"));
        }
        let ratio = self.length_m / self.cell_size_m;
        if (ratio - ratio.round()).abs() > 1e-6 * ratio.max(1.0) || ratio.round() < 1.0 {
            return Err(Error::arg(format!(
                "cell_size_m {} does not divide length_m {}",
                self.cell_size_m, self.length_m
            )));
        }
        if !(self.porosity > 0.0 && self.porosity < 1.0) {
            return Err(Error::arg("porosity must lie in (0, 1)"));
        }
        if !(self.specific_storage_per_m.is_finite() && self.specific_storage_per_m >= 0.0) {
            return Err(Error::arg("specific_storage_per_m must be non-negative"));
        }
        let positives = [
            ("permeability_m2", self.permeability_m2),
            ("rock_density_kg_m3", self.rock_density_kg_m3),
            ("rock_heat_capacity_j_kgk", self.rock_heat_capacity_j_kgk),
            ("water_heat_capacity_j_kgk", self.water_heat_capacity_j_kgk),
            (
                "bulk_thermal_conductivity_w_mk",
                self.bulk_thermal_conductivity_w_mk,
            ),
            ("water_density_kg_m3", self.water_density_kg_m3),
        ];
        for (name, v) in positives {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::arg(format!("{name} must be strictly positive")));
            }
        }
        Ok(())
    }

    pub fn n_cells(&self) -> usize {
        (self.length_m / self.cell_size_m).round() as usize
    }

    pub fn cell_depths(&self) -> Vec<f64> {
        (0..self.n_cells())
            .map(|i| (i as f64 + 0.5) * self.cell_size_m)
            .collect()
    }

    /// Volumetric heat capacity of water, J/m³/K.
    pub fn water_volumetric_heat_capacity(&self) -> f64 {
        self.water_density_kg_m3 * self.water_heat_capacity_j_kgk
    }

    /// Bulk volumetric heat capacity φ·ρ_w·c_w + (1−φ)·ρ_r·c_r, J/m³/K.
    pub fn bulk_heat_capacity(&self) -> f64 {
        self.porosity * self.water_volumetric_heat_capacity()
            + (1.0 - self.porosity) * self.rock_density_kg_m3 * self.rock_heat_capacity_j_kgk
    }

    /// Thermal Peclet number of the column for an upward Darcy flux `q_up`.
    ///
    /// Positive for downward flow, matching the orientation of
    /// [`steady_profile`] where depth increases toward the bottom boundary.
    pub fn peclet(&self, q_up: f64) -> f64 {
        -self.water_volumetric_heat_capacity() * q_up * self.length_m
            / self.bulk_thermal_conductivity_w_mk
    }
}

/// Boundary conditions for the column over time.
#[derive(Debug, Clone, PartialEq)]
pub struct ForcingSeries {
    pub dt_s: f64,
    pub top_head_m: Vec<f64>,
    pub top_temp_c: Vec<f64>,
    pub bottom_head_m: Vec<f64>,
    pub bottom_temp_c: Vec<f64>,
}

impl ForcingSeries {
    /// Constant boundary values held for `n` steps.
    pub fn constant(
        n: usize,
        dt_s: f64,
        top_head_m: f64,
        top_temp_c: f64,
        bottom_head_m: f64,
        bottom_temp_c: f64,
    ) -> Self {
        Self {
            dt_s,
            top_head_m: vec![top_head_m; n],
            top_temp_c: vec![top_temp_c; n],
            bottom_head_m: vec![bottom_head_m; n],
            bottom_temp_c: vec![bottom_temp_c; n],
        }
    }

    pub fn len(&self) -> usize {
        self.top_head_m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.top_head_m.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt_s.is_finite() && self.dt_s > 0.0) {
            return Err(Error::arg("forcing dt_s must be positive"));
        }
        let n = self.top_head_m.len();
        if n < 2 {
            return Err(Error::arg("forcing needs at least two steps"));
        }
        if self.top_temp_c.len() != n || self.bottom_head_m.len() != n || self.bottom_temp_c.len() != n
        {
            return Err(Error::arg("forcing series have unequal lengths"));
        }
        let heads = self.top_head_m.iter().chain(&self.bottom_head_m);
        if heads.into_iter().any(|h| !h.is_finite()) {
            return Err(Error::arg("forcing heads must be finite"));
        }
        for (name, series) in [("top_temp_C", &self.top_temp_c), ("bottom_temp_C", &self.bottom_temp_c)] {
            if let Some((i, t)) = series
                .iter()
                .enumerate()
                .find(|(_, t)| !(**t >= -5.0 && **t <= 60.0))
            {
                return Err(Error::arg(format!(
                    "{name}[{i}] = {t} outside [-5, 60] °C"
                )));
            }
        }
        Ok(())
    }
}

/// Per-cell prognostic state.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnState {
    pub temp_c: Vec<f64>,
    pub head_m: Vec<f64>,
}

impl ColumnState {
    /// Linear temperature and head profiles between the given boundary values.
    pub fn linear(
        config: &ColumnConfig,
        top_head_m: f64,
        top_temp_c: f64,
        bottom_head_m: f64,
        bottom_temp_c: f64,
    ) -> Self {
        let lerp = |a: f64, b: f64, z: f64| a + (b - a) * z / config.length_m;
        let depths = config.cell_depths();
        Self {
            temp_c: depths.iter().map(|&z| lerp(top_temp_c, bottom_temp_c, z)).collect(),
            head_m: depths.iter().map(|&z| lerp(top_head_m, bottom_head_m, z)).collect(),
        }
    }

    pub fn uniform(config: &ColumnConfig, temp_c: f64, head_m: f64) -> Self {
        let n = config.n_cells();
        Self {
            temp_c: vec![temp_c; n],
            head_m: vec![head_m; n],
        }
    }

    pub fn validate(&self, config: &ColumnConfig) -> Result<()> {
        let n = config.n_cells();
        if self.temp_c.len() != n || self.head_m.len() != n {
            return Err(Error::arg(format!(
                "state vectors have lengths {}/{} but the column has {n} cells",
                self.temp_c.len(),
                self.head_m.len()
            )));
        }
        if self.temp_c.iter().chain(&self.head_m).any(|v| !v.is_finite()) {
            return Err(Error::numerical("column state contains non-finite values"));
        }
        Ok(())
    }
}

/// Temperature at depth `z` by linear interpolation through the boundary
/// values and cell centres.
pub fn interpolate_profile(
    config: &ColumnConfig,
    temp_c: &[f64],
    top_temp_c: f64,
    bottom_temp_c: f64,
    z: f64,
) -> f64 {
    let dz = config.cell_size_m;
    let n = temp_c.len();
    let pos = z / dz - 0.5;
    if pos <= 0.0 {
        let w = (z / (0.5 * dz)).clamp(0.0, 1.0);
        return top_temp_c + w * (temp_c[0] - top_temp_c);
    }
    let i = pos.floor() as usize;
    if i + 1 >= n {
        let w = ((z - (n as f64 - 0.5) * dz) / (0.5 * dz)).clamp(0.0, 1.0);
        return temp_c[n - 1] + w * (bottom_temp_c - temp_c[n - 1]);
    }
    let w = pos - i as f64;
    temp_c[i] + w * (temp_c[i + 1] - temp_c[i])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_with_200_cells() {
        let c = ColumnConfig::default();
        c.validate().unwrap();
        assert_eq!(c.n_cells(), 200);
        let d = c.cell_depths();
        assert!((d[0] - 0.005).abs() < 1e-15);
        assert!((d[199] - 1.995).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_dividing_cell_size() {
        let c = ColumnConfig {
            length_m: 1.995,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn rejects_bad_porosity_and_constants() {
        for p in [0.0, 1.0, -0.1] {
            let c = ColumnConfig {
                porosity: p,
                ..Default::default()
            };
            assert!(c.validate().is_err());
        }
        let c = ColumnConfig {
            bulk_thermal_conductivity_w_mk: 0.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn forcing_validation() {
        let f = ForcingSeries::constant(1, 300.0, 0.0, 10.0, 0.0, 10.0);
        assert!(f.validate().is_err());
        let mut f = ForcingSeries::constant(3, 300.0, 0.0, 10.0, 0.0, 10.0);
        f.validate().unwrap();
        f.top_temp_c[1] = 75.0;
        assert!(f.validate().is_err());
        let mut f = ForcingSeries::constant(3, 300.0, 0.0, 10.0, 0.0, 10.0);
        f.bottom_head_m.pop();
        assert!(f.validate().is_err());
    }

    #[test]
    fn interpolation_hits_nodes_and_boundaries() {
        let c = ColumnConfig::default();
        let temps: Vec<f64> = c.cell_depths().iter().map(|z| 10.0 + z).collect();
        assert_eq!(interpolate_profile(&c, &temps, 10.0, 12.0, 0.0), 10.0);
        assert!((interpolate_profile(&c, &temps, 10.0, 12.0, 0.005) - 10.005).abs() < 1e-12);
        assert!((interpolate_profile(&c, &temps, 10.0, 12.0, 0.15) - 10.15).abs() < 1e-12);
        assert!((interpolate_profile(&c, &temps, 10.0, 12.0, 0.255) - 10.255).abs() < 1e-12);
        assert!((interpolate_profile(&c, &temps, 10.0, 12.0, 1.995) - 11.995).abs() < 1e-12);
        assert_eq!(interpolate_profile(&c, &temps, 10.0, 12.0, 2.0), 12.0);
    }
}
