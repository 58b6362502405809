//! CSV formats for forcing series and simulation output.
//!
//! Forcing: `time_s,top_head_m,top_temp_C,bottom_head_m,bottom_temp_C`.
//! Simulation output: `time_s,flux_m_s,temp_<depth>...` with depths in
//! metres to three decimals. Floats are written in shortest round-trip
//! form, so a write/read cycle is lossless.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::ForcingSeries;
use crate::data::{FluxSeries, TemperatureField};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

const FORCING_HEADER: [&str; 5] = [
    "time_s",
    "top_head_m",
    "top_temp_C",
    "bottom_head_m",
    "bottom_temp_C",
];

fn csv_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn parse_f64(path: &Path, row: usize, col: &str, s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| csv_err(path, format!("row {row}, column {col}: `{s}` is not a number")))
}

/// Infers the step from the first two time stamps.
fn infer_dt(path: &Path, times: &[f64]) -> Result<f64> {
    match times {
        [a, b, ..] if b > a => Ok(b - a),
        _ => Err(csv_err(path, "need at least two rows with increasing time_s")),
    }
}

pub fn write_forcing<W: Write>(forcing: &ForcingSeries, writer: W) -> Result<()> {
    let path = Path::new("<forcing>");
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(FORCING_HEADER).map_err(|e| csv_err(path, e))?;
    for i in 0..forcing.len() {
        w.write_record([
            (i as f64 * forcing.dt_s).to_string(),
            forcing.top_head_m[i].to_string(),
            forcing.top_temp_c[i].to_string(),
            forcing.bottom_head_m[i].to_string(),
            forcing.bottom_temp_c[i].to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io("flushing forcing csv", e))
}

pub fn read_forcing<R: Read>(reader: R, path: &Path) -> Result<ForcingSeries> {
    let mut r = csv::Reader::from_reader(reader);
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().map(str::trim).ne(FORCING_HEADER) {
        return Err(csv_err(
            path,
            format!("expected header `{}`", FORCING_HEADER.join(",")),
        ));
    }
    let mut cols: [Vec<f64>; 5] = Default::default();
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        for (c, name) in FORCING_HEADER.iter().enumerate() {
            let field = rec.get(c).ok_or_else(|| csv_err(path, format!("row {row} is short")))?;
            cols[c].push(parse_f64(path, row, name, field)?);
        }
    }
    let [times, top_head_m, top_temp_c, bottom_head_m, bottom_temp_c] = cols;
    let forcing = ForcingSeries {
        dt_s: infer_dt(path, &times)?,
        top_head_m,
        top_temp_c,
        bottom_head_m,
        bottom_temp_c,
    };
    forcing.validate()?;
    Ok(forcing)
}

pub fn write_sim<W: Write>(flux: &FluxSeries, temps: &TemperatureField, writer: W) -> Result<()> {
    let path = Path::new("<simulation>");
    if flux.len() != temps.n_times() {
        return Err(Error::arg("flux and temperature lengths differ"));
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["time_s".to_string(), "flux_m_s".to_string()];
    header.extend(temps.depths().iter().map(|d| format!("temp_{d:.3}")));
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for t in 0..flux.len() {
        let mut rec = vec![(t as f64 * flux.dt_s).to_string(), flux.values[t].to_string()];
        rec.extend(temps.values().row(t).iter().map(f64::to_string));
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io("flushing simulation csv", e))
}

pub fn read_sim<R: Read>(reader: R, path: &Path) -> Result<(FluxSeries, TemperatureField)> {
    let mut r = csv::Reader::from_reader(reader);
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.get(0) != Some("time_s") || header.get(1) != Some("flux_m_s") {
        return Err(csv_err(path, "expected header starting `time_s,flux_m_s`"));
    }
    let mut depths = Vec::new();
    for h in header.iter().skip(2) {
        let d = h
            .strip_prefix("temp_")
            .and_then(|d| d.parse::<f64>().ok())
            .ok_or_else(|| csv_err(path, format!("bad temperature column `{h}`")))?;
        depths.push(d);
    }
    if depths.is_empty() {
        return Err(csv_err(path, "no temperature columns"));
    }
    let (mut times, mut flux, mut temps) = (Vec::new(), Vec::new(), Vec::new());
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        if rec.len() != depths.len() + 2 {
            return Err(csv_err(path, format!("row {row} has {} fields", rec.len())));
        }
        times.push(parse_f64(path, row, "time_s", &rec[0])?);
        flux.push(parse_f64(path, row, "flux_m_s", &rec[1])?);
        for (c, f) in rec.iter().skip(2).enumerate() {
            temps.push(parse_f64(path, row, &header[c + 2], f)?);
        }
    }
    let dt = infer_dt(path, &times)?;
    let n = flux.len();
    let values = Matrix::from_vec(n, depths.len(), temps)?;
    Ok((FluxSeries::new(dt, flux)?, TemperatureField::new(dt, depths, values)?))
}

pub fn write_forcing_file(forcing: &ForcingSeries, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    write_forcing(forcing, f)
}

pub fn read_forcing_file(path: &Path) -> Result<ForcingSeries> {
    let f = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    read_forcing(f, path)
}

pub fn write_sim_file(flux: &FluxSeries, temps: &TemperatureField, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    write_sim(flux, temps, f)
}

pub fn read_sim_file(path: &Path) -> Result<(FluxSeries, TemperatureField)> {
    let f = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    read_sim(f, path)
}

#[cfg(test)]
mod tests {
    use super::super::{generate_forcing, simulate, ColumnConfig, ForcingSpec, DEFAULT_SENSOR_DEPTHS};
    use super::*;

    #[test]
    fn forcing_round_trip() {
        let f = generate_forcing(&ForcingSpec::default(), 300).unwrap();
        let mut buf = Vec::new();
        write_forcing(&f, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("time_s,top_head_m,top_temp_C,bottom_head_m,bottom_temp_C\n"));
        let back = read_forcing(buf.as_slice(), Path::new("mem")).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn sim_round_trip_and_header() {
        let c = ColumnConfig::default();
        let f = generate_forcing(&ForcingSpec::default(), 100).unwrap();
        let out = simulate(&c, &f, &DEFAULT_SENSOR_DEPTHS, &[]).unwrap();
        let mut buf = Vec::new();
        write_sim(&out.flux, &out.temps, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("time_s,flux_m_s,temp_0.005,temp_0.150,temp_0.255,temp_1.995\n"));
        let (flux, temps) = read_sim(buf.as_slice(), Path::new("mem")).unwrap();
        assert_eq!(flux, out.flux);
        assert_eq!(temps, out.temps);
    }

    #[test]
    fn malformed_inputs_are_rejected() {
        let bad_header = "time,top_head_m,top_temp_C,bottom_head_m,bottom_temp_C\n0,1,2,3,4\n300,1,2,3,4\n";
        assert!(read_forcing(bad_header.as_bytes(), Path::new("x")).is_err());
        let bad_num = "time_s,top_head_m,top_temp_C,bottom_head_m,bottom_temp_C\n0,1,2,3,4\n300,1,abc,3,4\n";
        let err = read_forcing(bad_num.as_bytes(), Path::new("x")).unwrap_err();
        assert!(err.to_string().contains("top_temp_C"));
        let one_row = "time_s,flux_m_s,temp_0.005\n0,1e-6,12\n";
        assert!(read_sim(one_row.as_bytes(), Path::new("x")).is_err());
    }
}
