use crate::error::{Error, Result};

/// Dynamic viscosity of water in micropoise (1 μP = 10⁻⁷ Pa·s).
///
/// `t_k` is absolute temperature; pressures are in bar, with `p_sat_bar`
/// the saturation pressure at `t_k`. The correlation has a pole at 140 K.
pub fn viscosity(t_k: f64, p_bar: f64, p_sat_bar: f64) -> Result<f64> {
    if !(t_k > 140.0) || !t_k.is_finite() {
        return Err(Error::Domain(format!(
            "viscosity undefined for T = {t_k} K: denominator (T - 140) must be positive"
        )));
    }
    if !p_bar.is_finite() || !p_sat_bar.is_finite() {
        return Err(Error::Domain("viscosity pressures must be finite".into()));
    }
    let base = 241.4 * 10f64.powf(247.8 / (t_k - 140.0));
    Ok(base * (1.0 + 1.0467e-6 * (p_bar - p_sat_bar) * (t_k - 305.0)))
}
