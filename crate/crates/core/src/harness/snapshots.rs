use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hydro::{ProfileSnapshot, SimOutput};

/// Full-column profiles around one centre step, with the flux at each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileWindow {
    pub center: usize,
    pub profiles: Vec<ProfileSnapshot>,
    pub flux: Vec<f64>,
}

/// Steps `c − half, c − half + every, …, c + half` for every centre,
/// sorted and deduplicated.
pub fn snapshot_times(centers: &[usize], half_window: usize, every: usize, n_steps: usize) -> Result<Vec<usize>> {
    if every == 0 {
        return Err(Error::arg("snapshot spacing must be positive"));
    }
    let mut out = Vec::new();
    for &c in centers {
        if c < half_window || c + half_window >= n_steps {
            return Err(Error::arg(format!(
                "snapshot centre {c} needs ±{half_window} steps inside 0..{n_steps}"
            )));
        }
        out.extend((c - half_window..=c + half_window).step_by(every));
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

/// Collects the recorded profiles around each centre. The simulation must
/// have been run with [`snapshot_times`] for the same arguments.
pub fn snapshot_profiles(
    sim: &SimOutput,
    centers: &[usize],
    half_window: usize,
    every: usize,
) -> Result<Vec<ProfileWindow>> {
    snapshot_times(centers, half_window, every, sim.flux.len())?;
    centers
        .iter()
        .map(|&c| {
            let mut profiles = Vec::new();
            let mut flux = Vec::new();
            for t in (c - half_window..=c + half_window).step_by(every) {
                let snap = sim
                    .snapshots
                    .iter()
                    .find(|s| s.time_index == t)
                    .ok_or_else(|| Error::arg(format!("no profile recorded at step {t}")))?;
                profiles.push(snap.clone());
                flux.push(sim.flux.values[t]);
            }
            Ok(ProfileWindow {
                center: c,
                profiles,
                flux,
            })
        })
        .collect()
}

/// `time_index,flux_m_s,T@<depth>...` with one row per profile.
pub fn write_profile_window<W: Write>(window: &ProfileWindow, cell_depths: &[f64], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| Error::Csv {
        path: "<profiles>".into(),
        message: e.to_string(),
    };
    let mut header = vec!["time_index".to_string(), "flux_m_s".to_string()];
    header.extend(cell_depths.iter().map(|z| format!("T@{z:.3}")));
    w.write_record(&header).map_err(csv_err)?;
    for (p, q) in window.profiles.iter().zip(&window.flux) {
        let mut rec = vec![p.time_index.to_string(), q.to_string()];
        rec.extend(p.temp_c.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("writing profiles", e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hydro::{simulate, ColumnConfig, ForcingSeries};

    fn run(forcing: &ForcingSeries, centers: &[usize]) -> SimOutput {
        let times = snapshot_times(centers, 100, 10, forcing.len()).unwrap();
        simulate(&ColumnConfig::default(), forcing, &[0.1], &times).unwrap()
    }

    #[test]
    fn twenty_one_profiles_per_centre() {
        let f = ForcingSeries::constant(400, 300.0, 1.0, 12.0, 1.0, 12.0);
        let sim = run(&f, &[150, 250]);
        let w = snapshot_profiles(&sim, &[150, 250], 100, 10).unwrap();
        assert_eq!(w.len(), 2);
        assert!(w.iter().all(|x| x.profiles.len() == 21 && x.flux.len() == 21));
        // Uniform steady state: every profile identical.
        let first = &w[0].profiles[0].temp_c;
        assert!(w.iter().flat_map(|x| &x.profiles).all(|p| &p.temp_c == first));
        let mut buf = Vec::new();
        write_profile_window(&w[0], &sim.cell_depths_m, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("time_index,flux_m_s,T@0.005,"));
        assert_eq!(text.lines().count(), 22);
    }

    #[test]
    fn downward_flux_profiles_are_monotone() {
        // Higher river stage drives water down; warm river over a cold bed.
        let f = ForcingSeries::constant(300, 300.0, 1.5, 16.0, 1.0, 10.0);
        let sim = run(&f, &[150]);
        assert!(sim.flux.values[1..].iter().all(|q| *q < 0.0));
        for p in &snapshot_profiles(&sim, &[150], 100, 10).unwrap()[0].profiles {
            assert!(p.temp_c.windows(2).all(|w| w[1] <= w[0] + 1e-12));
            assert!(p.temp_c.iter().all(|t| (10.0 - 1e-9..=16.0 + 1e-9).contains(t)));
        }
    }

    #[test]
    fn out_of_range_centre_is_an_error() {
        assert!(snapshot_times(&[50], 100, 10, 1000).is_err());
        assert!(snapshot_times(&[950], 100, 10, 1000).is_err());
        let f = ForcingSeries::constant(300, 300.0, 1.0, 12.0, 1.0, 12.0);
        let sim = run(&f, &[150]);
        assert!(snapshot_profiles(&sim, &[150], 100, 10).is_ok());
        assert!(snapshot_profiles(&sim, &[155], 100, 10).is_err());
    }
}
