//! Scenario files and CSV schemas.
//!
//! A scenario is a TOML file of scalars that points at two CSV series
//! (`slot,value`, 1-based slots, mandatory header): the non-EV demand in kW
//! and the ambient temperature in °C. Relative CSV paths resolve against
//! the directory of the TOML file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AmbientSeries, ThermalParams};
use crate::problem::{ChargingProfile, MemorylessCost, Scenario};
use crate::Trace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    slots: usize,
    delta_h: f64,
    v_max_kw: f64,
    nominal_kw: f64,
    #[serde(default = "default_joule_k")]
    joule_k: f64,
    #[serde(default)]
    fold_beta: bool,
    demands_kwh: Vec<f64>,
    nonev_csv: PathBuf,
    ambient_csv: PathBuf,
    thermal: ThermalSection,
    #[serde(default)]
    memoryless: MemorylessSection,
}

fn default_joule_k() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ThermalSection {
    a: f64,
    b1: f64,
    b2: f64,
    amb_gain: f64,
    amb_offset: f64,
    x0: f64,
    u0: f64,
    x_max: f64,
    alpha: f64,
    beta: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MemorylessSection {
    #[serde(default)]
    kind: MemorylessKind,
    #[serde(default)]
    coefficient: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum MemorylessKind {
    #[default]
    Zero,
    Quadratic,
}

impl From<&ThermalParams<f64>> for ThermalSection {
    fn from(p: &ThermalParams<f64>) -> Self {
        Self {
            a: p.a,
            b1: p.b1,
            b2: p.b2,
            amb_gain: p.amb_gain,
            amb_offset: p.amb_offset,
            x0: p.x0,
            u0: p.u0,
            x_max: p.x_max,
            alpha: p.alpha,
            beta: p.beta,
        }
    }
}

impl From<&ThermalSection> for ThermalParams<f64> {
    fn from(t: &ThermalSection) -> Self {
        Self {
            a: t.a,
            b1: t.b1,
            b2: t.b2,
            amb_gain: t.amb_gain,
            amb_offset: t.amb_offset,
            x0: t.x0,
            u0: t.u0,
            x_max: t.x_max,
            alpha: t.alpha,
            beta: t.beta,
        }
    }
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path, e: &csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    Error::Parse {
        path: path.to_path_buf(),
        line,
        reason: e.to_string(),
    }
}

fn toml_line(text: &str, e: &toml::de::Error) -> usize {
    e.span()
        .map(|span| text[..span.start.min(text.len())].lines().count().max(1))
        .unwrap_or(0)
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

#[derive(Debug, Deserialize)]
struct SeriesRow {
    slot: usize,
    value: f64,
}

/// Reads a `slot,value` series, requiring slots `1..=n` in order.
pub fn read_series(path: &Path) -> Result<Vec<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::Io {
                path: path.to_path_buf(),
                source: std::io::Error::other(e.to_string()),
            },
            _ => csv_err(path, &e),
        })?;
    let headers = reader.headers().map_err(|e| csv_err(path, &e))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["slot", "value"] {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            reason: format!(
                "expected header `slot,value`, found `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    let mut values = Vec::new();
    for record in reader.deserialize::<SeriesRow>() {
        let row = record.map_err(|e| csv_err(path, &e))?;
        let expected = values.len() + 1;
        if row.slot != expected {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: expected + 1,
                reason: format!("expected slot {expected}, found {}", row.slot),
            });
        }
        values.push(row.value);
    }
    Ok(values)
}

pub fn write_series(path: &Path, values: &[f64]) -> Result<()> {
    let mut out = String::from("slot,value\n");
    for (t, v) in values.iter().enumerate() {
        out.push_str(&format!("{},{}\n", t + 1, v));
    }
    fs::write(path, out).map_err(io_err(path))
}

/// Loads and validates a scenario file.
pub fn load_scenario(path: &Path) -> Result<Scenario<f64>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let file: ScenarioFile = toml::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: toml_line(&text, &e),
        reason: e.message().to_string(),
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let nonev_path = resolve(base, &file.nonev_csv);
    let ambient_path = resolve(base, &file.ambient_csv);
    let nonev = read_series(&nonev_path)?;
    let ambient = read_series(&ambient_path)?;
    if nonev.len() != file.slots {
        return Err(Error::validation(
            "scenario",
            format!(
                "{} has {} slots but the scenario declares {}",
                nonev_path.display(),
                nonev.len(),
                file.slots
            ),
        ));
    }
    if ambient.len() != file.slots {
        return Err(Error::validation(
            "scenario",
            format!(
                "{} has {} slots but the scenario declares {}",
                ambient_path.display(),
                ambient.len(),
                file.slots
            ),
        ));
    }
    let memoryless = match file.memoryless.kind {
        MemorylessKind::Zero => MemorylessCost::Zero,
        MemorylessKind::Quadratic => MemorylessCost::Quadratic {
            coefficient: file.memoryless.coefficient,
        },
    };
    let s = Scenario {
        delta_h: file.delta_h,
        demands_kwh: file.demands_kwh,
        v_max_kw: file.v_max_kw,
        nominal_kw: file.nominal_kw,
        nonev_kw: nonev,
        ambient: AmbientSeries(ambient),
        thermal: (&file.thermal).into(),
        memoryless,
        joule_k: file.joule_k,
        fold_beta: file.fold_beta,
    };
    s.validate()?;
    Ok(s)
}

/// Writes `path` plus `<stem>_nonev.csv` and `<stem>_ambient.csv` beside it.
pub fn save_scenario(path: &Path, s: &Scenario<f64>) -> Result<()> {
    s.validate()?;
    let stem = path
        .file_stem()
        .and_then(|x| x.to_str())
        .unwrap_or("scenario")
        .to_string();
    let dir = path.parent().unwrap_or(Path::new("."));
    let nonev_name = PathBuf::from(format!("{stem}_nonev.csv"));
    let ambient_name = PathBuf::from(format!("{stem}_ambient.csv"));
    write_series(&dir.join(&nonev_name), &s.nonev_kw)?;
    write_series(&dir.join(&ambient_name), s.ambient.slots())?;
    let (kind, coefficient) = match s.memoryless {
        MemorylessCost::Zero => (MemorylessKind::Zero, 0.0),
        MemorylessCost::Quadratic { coefficient } => (MemorylessKind::Quadratic, coefficient),
    };
    let file = ScenarioFile {
        slots: s.slots(),
        delta_h: s.delta_h,
        v_max_kw: s.v_max_kw,
        nominal_kw: s.nominal_kw,
        joule_k: s.joule_k,
        fold_beta: s.fold_beta,
        demands_kwh: s.demands_kwh.clone(),
        nonev_csv: nonev_name,
        ambient_csv: ambient_name,
        thermal: (&s.thermal).into(),
        memoryless: MemorylessSection { kind, coefficient },
    };
    let text = toml::to_string(&file).map_err(|e| Error::validation("scenario", e.to_string()))?;
    fs::write(path, text).map_err(io_err(path))
}

pub const PROFILE_HEADER: &str = "ev,slot,kw";
pub const TRACE_HEADER: &str = "slot,load_pu,temp_c,faa,joule_kwh";

/// Profile CSV, one row per (EV, slot), both 1-based, full precision.
pub fn profile_to_csv(v: &ChargingProfile<f64>) -> String {
    let mut out = format!("{PROFILE_HEADER}\n");
    for (i, row) in v.rows().enumerate() {
        for (t, p) in row.iter().enumerate() {
            out.push_str(&format!("{},{},{}\n", i + 1, t + 1, p));
        }
    }
    out
}

#[derive(Debug, Deserialize)]
struct ProfileRow {
    ev: usize,
    slot: usize,
    kw: f64,
}

/// Parses a profile CSV for a scenario with `evs` EVs and `slots` slots.
/// Every (EV, slot) cell must appear exactly once.
pub fn profile_from_csv(
    text: &str,
    origin: &Path,
    evs: usize,
    slots: usize,
    delta_h: f64,
) -> Result<ChargingProfile<f64>> {
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| csv_err(origin, &e))?.clone();
    if headers.iter().collect::<Vec<_>>().join(",") != PROFILE_HEADER {
        return Err(Error::Parse {
            path: origin.to_path_buf(),
            line: 1,
            reason: format!("expected header `{PROFILE_HEADER}`"),
        });
    }
    let mut rows = vec![vec![f64::NAN; slots]; evs];
    for (k, record) in reader.deserialize::<ProfileRow>().enumerate() {
        let line = k + 2;
        let r = record.map_err(|e| csv_err(origin, &e))?;
        let parse_err = |reason: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            reason,
        };
        if r.ev == 0 || r.ev > evs || r.slot == 0 || r.slot > slots {
            return Err(parse_err(format!(
                "cell ({}, {}) outside {evs} EVs x {slots} slots",
                r.ev, r.slot
            )));
        }
        let cell = &mut rows[r.ev - 1][r.slot - 1];
        if !cell.is_nan() {
            return Err(parse_err(format!("duplicate cell ({}, {})", r.ev, r.slot)));
        }
        *cell = r.kw;
    }
    if let Some((i, t)) = (0..evs)
        .flat_map(|i| (0..slots).map(move |t| (i, t)))
        .find(|&(i, t)| rows[i][t].is_nan())
    {
        return Err(Error::Parse {
            path: origin.to_path_buf(),
            line: 0,
            reason: format!("missing cell ({}, {})", i + 1, t + 1),
        });
    }
    ChargingProfile::from_rows(rows, slots, delta_h)
}

pub fn read_profile(path: &Path, s: &Scenario<f64>) -> Result<ChargingProfile<f64>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    profile_from_csv(&text, path, s.ev_count(), s.slots(), s.delta_h)
}

/// Trace CSV with per-slot load, hot-spot temperature, ageing and losses.
pub fn trace_to_csv(load_pu: &[f64], trace: &Trace) -> String {
    let mut out = format!("{TRACE_HEADER}\n");
    for (t, u) in load_pu.iter().enumerate().take(trace.len()) {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            t + 1,
            u,
            trace.temps[t],
            trace.faa[t],
            trace.joule[t]
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Scenario<f64> {
        Scenario::new(vec![3.5], vec![40.25, 61.0], AmbientSeries(vec![11.5, 9.0]))
    }

    #[test]
    fn scenario_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tiny.toml");
        let mut s = tiny();
        s.memoryless = MemorylessCost::Quadratic { coefficient: 0.125 };
        save_scenario(&path, &s).unwrap();
        assert_eq!(load_scenario(&path).unwrap(), s);
    }

    #[test]
    fn mismatched_series_length_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tiny.toml");
        save_scenario(&path, &tiny()).unwrap();
        write_series(&dir.path().join("tiny_nonev.csv"), &[1.0, 2.0, 3.0]).unwrap();
        let err = load_scenario(&path).unwrap_err();
        assert!(matches!(err, Error::Validation { .. }), "{err}");
    }

    #[test]
    fn negative_load_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tiny.toml");
        save_scenario(&path, &tiny()).unwrap();
        write_series(&dir.path().join("tiny_nonev.csv"), &[1.0, -2.0]).unwrap();
        assert!(matches!(
            load_scenario(&path),
            Err(Error::Validation { .. })
        ));
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("bad.csv");
        fs::write(&csv, "slot,value\n1,2.0\n2,abc\n").unwrap();
        match read_series(&csv).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }
        fs::write(&csv, "slot,value\n1,2.0\n3,1.0\n").unwrap();
        match read_series(&csv).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }
        fs::write(&csv, "t,v\n1,2.0\n").unwrap();
        assert!(matches!(
            read_series(&csv),
            Err(Error::Parse { line: 1, .. })
        ));

        let toml_path = dir.path().join("bad.toml");
        fs::write(&toml_path, "slots = 2\ndelta_h = \"half\"\n").unwrap();
        match load_scenario(&toml_path).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn profile_csv_rejects_missing_and_duplicate_cells() {
        let origin = Path::new("p.csv");
        let err = profile_from_csv("ev,slot,kw\n1,1,2.0\n", origin, 1, 2, 0.5).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
        let err = profile_from_csv("ev,slot,kw\n1,1,2.0\n1,1,2.0\n1,2,0\n", origin, 1, 2, 0.5)
            .unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }));
        let err = profile_from_csv("ev,slot,kw\n1,1,-2.0\n1,2,0\n", origin, 1, 2, 0.5).unwrap_err();
        assert!(matches!(err, Error::Validation { .. }));
    }
}
