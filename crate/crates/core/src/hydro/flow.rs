use super::{tridiag, viscosity, ColumnConfig, ColumnState, GRAVITY};
use crate::error::{Error, Result};

/// Hydraulic conductivity K(T) = k·ρ_w·g/μ_w(T) in m/s.
///
/// Viscosity is evaluated at saturation pressure, where the pressure term of
/// the correlation vanishes.
pub fn hydraulic_conductivity(config: &ColumnConfig, temp_c: f64) -> Result<f64> {
    let mu_pa_s = viscosity(temp_c + 273.15, 1.0, 1.0)? * 1.0e-7;
    Ok(config.permeability_m2 * config.water_density_kg_m3 * GRAVITY / mu_pa_s)
}

/// Solves the saturated flow equation for one step and returns the Darcy
/// flux on every face, top face first (`n_cells + 1` values, m/s, positive
/// upward).
///
/// With zero specific storage the solve is quasi-steady and every face
/// carries the same flux. With positive storage, `state.head_m` is the
/// previous-step head and `dt_s` the step length.
pub fn solve_flow(
    config: &ColumnConfig,
    state: &ColumnState,
    top_head_m: f64,
    bottom_head_m: f64,
    dt_s: f64,
) -> Result<Vec<f64>> {
    solve_flow_full(config, state, top_head_m, bottom_head_m, dt_s).map(|s| s.face_flux)
}

/// Cell heads and face fluxes from one flow solve.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSolution {
    pub head_m: Vec<f64>,
    pub face_flux: Vec<f64>,
}

/// Like [`solve_flow`] but also returns the solved cell heads.
pub fn solve_flow_full(
    config: &ColumnConfig,
    state: &ColumnState,
    top_head_m: f64,
    bottom_head_m: f64,
    dt_s: f64,
) -> Result<FlowSolution> {
    if !top_head_m.is_finite() || !bottom_head_m.is_finite() {
        return Err(Error::arg("boundary heads must be finite"));
    }
    state.validate(config)?;
    let n = config.n_cells();
    let dz = config.cell_size_m;

    let mut k = Vec::with_capacity(n);
    for &t in &state.temp_c {
        let ki = hydraulic_conductivity(config, t)?;
        if !(ki.is_finite() && ki > 0.0) {
            return Err(Error::numerical(format!(
                "zero or non-finite hydraulic conductivity ({ki}) at {t} °C"
            )));
        }
        k.push(ki);
    }

    // Face conductances (K / distance), harmonic between neighbouring cells.
    let mut cond = Vec::with_capacity(n + 1);
    cond.push(k[0] / (0.5 * dz));
    for i in 0..n - 1 {
        cond.push(1.0 / (0.5 * dz / k[i] + 0.5 * dz / k[i + 1]));
    }
    cond.push(k[n - 1] / (0.5 * dz));

    let storage = if config.specific_storage_per_m > 0.0 {
        if !(dt_s.is_finite() && dt_s > 0.0) {
            return Err(Error::arg("dt_s must be positive when storage is active"));
        }
        config.specific_storage_per_m * dz / dt_s
    } else {
        0.0
    };

    // Solve for heads relative to the top boundary so that a zero head
    // difference gives an exactly zero flux.
    let mut lower = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut upper = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    for i in 0..n {
        diag[i] = cond[i] + cond[i + 1] + storage;
        lower[i] = -cond[i];
        upper[i] = -cond[i + 1];
        rhs[i] = storage * (state.head_m[i] - top_head_m);
    }
    let drop = bottom_head_m - top_head_m;
    rhs[n - 1] += cond[n] * drop;
    let rel = tridiag::solve(&lower, &diag, &upper, &rhs)?;

    let mut flux = Vec::with_capacity(n + 1);
    flux.push(cond[0] * rel[0]);
    for i in 0..n - 1 {
        flux.push(cond[i + 1] * (rel[i + 1] - rel[i]));
    }
    flux.push(cond[n] * (drop - rel[n - 1]));
    Ok(FlowSolution {
        head_m: rel.into_iter().map(|h| h + top_head_m).collect(),
        face_flux: flux,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config_with_conductivity(length_m: f64, cell_size_m: f64, k_target: f64) -> ColumnConfig {
        let mut c = ColumnConfig {
            length_m,
            cell_size_m,
            permeability_m2: 1.0,
            ..Default::default()
        };
        let k_unit = hydraulic_conductivity(&c, 20.0).unwrap();
        c.permeability_m2 = k_target / k_unit;
        c
    }

    #[test]
    fn equal_heads_give_zero_flux() {
        let c = ColumnConfig::default();
        let s = ColumnState::uniform(&c, 15.0, 3.0);
        let q = solve_flow(&c, &s, 3.0, 3.0, 300.0).unwrap();
        assert_eq!(q.len(), c.n_cells() + 1);
        assert!(q.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn homogeneous_darcy_closed_form() {
        // K·Δh/L = 1e-4 · 0.1 / 1.995
        let c = config_with_conductivity(1.995, 0.005, 1.0e-4);
        let s = ColumnState::uniform(&c, 20.0, 0.0);
        let q = solve_flow(&c, &s, 0.0, 0.1, 300.0).unwrap();
        let expected = 1.0e-4 * 0.1 / 1.995;
        assert!((q[0] - expected).abs() / expected < 1e-10, "{} vs {expected}", q[0]);
        assert!((q[0] - 5.01e-6).abs() < 0.01e-6);
        // head higher at the top drives downward (negative) flux
        let q = solve_flow(&c, &s, 0.1, 0.0, 300.0).unwrap();
        assert!((q[0] + expected).abs() / expected < 1e-10);
    }

    #[test]
    fn two_layer_series_resistance() {
        let c = ColumnConfig::default();
        let n = c.n_cells();
        let mut s = ColumnState::uniform(&c, 10.0, 0.0);
        for t in s.temp_c.iter_mut().skip(n / 2) {
            *t = 30.0;
        }
        let ka = hydraulic_conductivity(&c, 10.0).unwrap();
        let kb = hydraulic_conductivity(&c, 30.0).unwrap();
        let half = c.length_m / 2.0;
        let expected = 0.05 / (half / ka + half / kb);
        let q = solve_flow(&c, &s, 0.0, 0.05, 300.0).unwrap();
        assert!((q[0] - expected).abs() / expected < 1e-10);
    }

    #[test]
    fn divergence_free_with_heterogeneous_temperature() {
        let c = ColumnConfig::default();
        let mut s = ColumnState::uniform(&c, 10.0, 0.0);
        for (i, t) in s.temp_c.iter_mut().enumerate() {
            *t = 8.0 + 10.0 * ((i as f64) * 0.37).sin().abs();
        }
        let q = solve_flow(&c, &s, 0.3, 0.1, 300.0).unwrap();
        let q0 = q[0];
        for v in &q {
            assert!((v - q0).abs() <= 1e-12 * q0.abs(), "{v} vs {q0}");
        }
    }

    #[test]
    fn warmer_column_conducts_more() {
        let c = ColumnConfig::default();
        let mut prev = 0.0;
        for t in [5.0, 10.0, 20.0, 30.0] {
            let s = ColumnState::uniform(&c, t, 0.0);
            let q = solve_flow(&c, &s, 0.0, 0.1, 300.0).unwrap()[0].abs();
            assert!(q > prev);
            prev = q;
        }
    }

    #[test]
    fn storage_relaxes_toward_steady_flux() {
        let c = ColumnConfig {
            specific_storage_per_m: 1e-4,
            ..Default::default()
        };
        let steady = solve_flow(&ColumnConfig::default(), &ColumnState::uniform(&c, 15.0, 0.0), 0.0, 0.1, 300.0)
            .unwrap()[0];
        let mut s = ColumnState::uniform(&c, 15.0, 0.0);
        let first = solve_flow_full(&c, &s, 0.0, 0.1, 1.0).unwrap();
        // the column is still filling from below, so less reaches the top
        assert!(first.face_flux[0] < steady);
        assert!(first.face_flux[c.n_cells()] > steady);
        for _ in 0..50 {
            s.head_m = solve_flow_full(&c, &s, 0.0, 0.1, 300.0).unwrap().head_m;
        }
        let q = solve_flow(&c, &s, 0.0, 0.1, 300.0).unwrap();
        assert!((q[0] - steady).abs() / steady < 1e-6);
    }

    #[test]
    fn frozen_conductivity_is_rejected() {
        let c = ColumnConfig::default();
        let s = ColumnState::uniform(&c, -133.0, 0.0);
        assert!(solve_flow(&c, &s, 0.0, 1.0, 300.0).is_err());
        let s = ColumnState::uniform(&c, -140.0, 0.0);
        assert!(solve_flow(&c, &s, 0.0, 1.0, 300.0).is_err());
    }
}
