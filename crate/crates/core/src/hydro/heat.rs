use super::{tridiag, ColumnConfig};
use crate::error::{Error, Result};

/// End conditions for the heat equation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HeatBoundary {
    /// Prescribed temperatures on the top and bottom faces.
    Dirichlet { top_c: f64, bottom_c: f64 },
    /// No heat crosses either end face, advective or conductive.
    Insulated,
}

/// Advances cell temperatures by one backward-Euler step of the
/// advection-conduction equation.
///
/// `face_flux` holds the upward Darcy flux on each of the `n + 1` faces.
/// Advection is first-order upwind, conduction central, and the resulting
/// tridiagonal system is an M-matrix so the step is unconditionally stable
/// and satisfies a discrete maximum principle.
pub fn step_heat(
    config: &ColumnConfig,
    temp_c: &[f64],
    face_flux: &[f64],
    dt_s: f64,
    boundary: HeatBoundary,
) -> Result<Vec<f64>> {
    let n = config.n_cells();
    if temp_c.len() != n || face_flux.len() != n + 1 {
        return Err(Error::arg(format!(
            "expected {n} cell temperatures and {} face fluxes, got {} and {}",
            n + 1,
            temp_c.len(),
            face_flux.len()
        )));
    }
    if !(dt_s.is_finite() && dt_s > 0.0) {
        return Err(Error::arg("dt_s must be positive"));
    }
    if temp_c.iter().chain(face_flux).any(|v| !v.is_finite()) {
        return Err(Error::numerical("non-finite temperature or flux passed to step_heat"));
    }
    if let HeatBoundary::Dirichlet { top_c, bottom_c } = boundary {
        if !top_c.is_finite() || !bottom_c.is_finite() {
            return Err(Error::numerical("non-finite boundary temperature"));
        }
    }

    let dz = config.cell_size_m;
    let rho_c_w = config.water_volumetric_heat_capacity();
    let kappa = config.bulk_thermal_conductivity_w_mk;
    let storage = config.bulk_heat_capacity() * dz / dt_s;

    // Flux across face f in the +depth direction:
    //   F_f = a_f·T_above − b_f·T_below
    // with a_f = ρc·v⁺ + g_f, b_f = ρc·v⁻ + g_f, v = −q_up.
    let mut a = vec![0.0; n + 1];
    let mut b = vec![0.0; n + 1];
    for f in 0..=n {
        let boundary_face = f == 0 || f == n;
        if boundary_face && boundary == HeatBoundary::Insulated {
            continue;
        }
        let v = -face_flux[f];
        let g = kappa / if boundary_face { 0.5 * dz } else { dz };
        a[f] = rho_c_w * v.max(0.0) + g;
        b[f] = rho_c_w * (-v).max(0.0) + g;
    }

    let mut lower = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut upper = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    for i in 0..n {
        diag[i] = storage + b[i] + a[i + 1];
        lower[i] = -a[i];
        upper[i] = -b[i + 1];
        rhs[i] = storage * temp_c[i];
    }
    if let HeatBoundary::Dirichlet { top_c, bottom_c } = boundary {
        rhs[0] += a[0] * top_c;
        rhs[n - 1] += b[n] * bottom_c;
    }
    tridiag::solve(&lower, &diag, &upper, &rhs)
}

/// Steady advection-conduction profile between fixed end temperatures.
///
/// `pe` is the column Peclet number, positive when flow is directed from
/// the `t_top` end toward the `t_bottom` end; `z_over_l` is the normalized
/// distance from the top end.
pub fn steady_profile(pe: f64, t_top: f64, t_bottom: f64, z_over_l: f64) -> f64 {
    let x = z_over_l;
    let shape = if pe == 0.0 {
        x
    } else if pe > 0.0 {
        // e^{Pe(x-1)}·(1 − e^{−Pe x})/(1 − e^{−Pe}), overflow-free for large Pe
        (pe * (x - 1.0)).exp() * (-(-pe * x).exp_m1()) / (-(-pe).exp_m1())
    } else {
        (pe * x).exp_m1() / pe.exp_m1()
    };
    t_top + (t_bottom - t_top) * shape
}

#[cfg(test)]
mod tests {
    use super::super::{interpolate_profile, ColumnState};
    use super::*;

    fn zero_flux(c: &ColumnConfig) -> Vec<f64> {
        vec![0.0; c.n_cells() + 1]
    }

    #[test]
    fn equilibrium_is_preserved() {
        let c = ColumnConfig::default();
        let t = vec![12.5; c.n_cells()];
        let bc = HeatBoundary::Dirichlet {
            top_c: 12.5,
            bottom_c: 12.5,
        };
        let out = step_heat(&c, &t, &zero_flux(&c), 300.0, bc).unwrap();
        for v in out {
            assert!((v - 12.5).abs() < 1e-12);
        }
    }

    #[test]
    fn conduction_converges_to_linear_profile() {
        let c = ColumnConfig {
            length_m: 0.5,
            ..Default::default()
        };
        let mut t = vec![5.0; c.n_cells()];
        let bc = HeatBoundary::Dirichlet {
            top_c: 10.0,
            bottom_c: 20.0,
        };
        for _ in 0..4000 {
            t = step_heat(&c, &t, &zero_flux(&c), 3600.0, bc).unwrap();
        }
        let max_dev = c
            .cell_depths()
            .iter()
            .zip(&t)
            .map(|(z, v)| (v - (10.0 + 10.0 * z / c.length_m)).abs())
            .fold(0.0, f64::max);
        assert!(max_dev < 1e-6, "{max_dev}");
    }

    #[test]
    fn insulated_column_conserves_enthalpy() {
        let c = ColumnConfig::default();
        let mut t: Vec<f64> = (0..c.n_cells()).map(|i| 10.0 + (i as f64 * 0.1).sin() * 4.0).collect();
        let enthalpy = |t: &[f64]| t.iter().sum::<f64>() * c.bulk_heat_capacity() * c.cell_size_m;
        let e0 = enthalpy(&t);
        for _ in 0..1000 {
            t = step_heat(&c, &t, &zero_flux(&c), 300.0, HeatBoundary::Insulated).unwrap();
        }
        assert!(((enthalpy(&t) - e0) / e0).abs() < 1e-6);
    }

    #[test]
    fn maximum_principle_under_strong_advection() {
        let c = ColumnConfig::default();
        let mut t: Vec<f64> = (0..c.n_cells()).map(|i| if i % 7 == 0 { 18.0 } else { 11.0 }).collect();
        let flux = vec![-4.0e-5; c.n_cells() + 1];
        let bc = HeatBoundary::Dirichlet {
            top_c: 5.0,
            bottom_c: 14.0,
        };
        for _ in 0..300 {
            t = step_heat(&c, &t, &flux, 300.0, bc).unwrap();
            assert!(t.iter().all(|v| (5.0 - 1e-12..=18.0 + 1e-12).contains(v)));
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let c = ColumnConfig::default();
        let t = vec![10.0; c.n_cells()];
        let bc = HeatBoundary::Insulated;
        assert!(step_heat(&c, &t, &zero_flux(&c), 0.0, bc).is_err());
        assert!(step_heat(&c, &t[1..], &zero_flux(&c), 300.0, bc).is_err());
        let mut bad = t.clone();
        bad[3] = f64::NAN;
        assert!(matches!(
            step_heat(&c, &bad, &zero_flux(&c), 300.0, bc),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn steady_profile_examples() {
        assert_eq!(steady_profile(0.0, 10.0, 20.0, 0.5), 15.0);
        // 10 + 10·(e^2.5 − 1)/(e^5 − 1)
        let expected = 10.0 + 10.0 * (2.5f64.exp() - 1.0) / (5f64.exp() - 1.0);
        assert!((steady_profile(5.0, 10.0, 20.0, 0.5) - expected).abs() < 1e-12);
        assert!((expected - 10.75).abs() < 0.01);
        assert!((steady_profile(1e-12, 10.0, 20.0, 0.3) - 13.0).abs() < 1e-9);
        assert!(steady_profile(800.0, 10.0, 20.0, 0.5).is_finite());
        assert!(steady_profile(-800.0, 10.0, 20.0, 0.5).is_finite());
    }

    #[test]
    fn steady_profile_reflection() {
        for &pe in &[-12.0, -3.0, -0.1, 0.0, 0.7, 4.0, 30.0] {
            for k in 0..=10 {
                let z = k as f64 / 10.0;
                let p = steady_profile(pe, 3.0, 17.0, z);
                // reversing flow and measuring from the other end
                let s = p + steady_profile(-pe, 3.0, 17.0, 1.0 - z);
                assert!((s - 20.0).abs() < 1e-10, "pe={pe} z={z} sum={s}");
                // the same physical profile seen from the bottom
                let mirrored = steady_profile(-pe, 17.0, 3.0, 1.0 - z);
                assert!((p - mirrored).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn advection_converges_to_exponential_profile() {
        let c = ColumnConfig::default();
        let q_up = -1.0e-6;
        let pe = c.peclet(q_up);
        let flux = vec![q_up; c.n_cells() + 1];
        let bc = HeatBoundary::Dirichlet {
            top_c: 12.0,
            bottom_c: 16.0,
        };
        let mut s = ColumnState::uniform(&c, 14.0, 0.0);
        for _ in 0..3000 {
            s.temp_c = step_heat(&c, &s.temp_c, &flux, 86400.0, bc).unwrap();
        }
        for k in 0..=20 {
            let z = k as f64 * c.length_m / 20.0;
            let sim = interpolate_profile(&c, &s.temp_c, 12.0, 16.0, z);
            let exact = steady_profile(pe, 12.0, 16.0, z / c.length_m);
            assert!((sim - exact).abs() < 0.05, "z={z} sim={sim} exact={exact}");
        }
    }
}
