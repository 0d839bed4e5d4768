//! Piecewise-linear power setpoint trajectories.
//!
//! On disk a profile is a CSV file with header `time_s,setpoint_spu`,
//! one knot per line, times strictly increasing from 0.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound on any setpoint; also the hard power trip level.
pub const MAX_SETPOINT: f64 = 110.0;
pub const START_SETPOINT: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadProfile {
    name: String,
    points: Vec<(f64, f64)>,
}

#[derive(Debug, Deserialize, Serialize)]
struct Knot {
    time_s: f64,
    setpoint_spu: f64,
}

impl LoadProfile {
    pub fn new(name: impl Into<String>, points: Vec<(f64, f64)>) -> Result<Self> {
        let name = name.into();
        if points.len() < 2 {
            return Err(Error::config(format!("profile `{name}` needs at least two knots")));
        }
        if points[0].0 != 0.0 {
            return Err(Error::config(format!("profile `{name}` must start at t = 0")));
        }
        if points[0].1 != START_SETPOINT {
            return Err(Error::config(format!(
                "profile `{name}` must start at {START_SETPOINT} SPU, got {}",
                points[0].1
            )));
        }
        for w in points.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::config(format!(
                    "profile `{name}`: times must increase strictly ({} then {})",
                    w[0].0, w[1].0
                )));
            }
        }
        for &(t, p) in &points {
            if !t.is_finite() || !(p > 0.0 && p <= MAX_SETPOINT) {
                return Err(Error::config(format!(
                    "profile `{name}`: setpoint {p} at t = {t} outside (0, {MAX_SETPOINT}]"
                )));
            }
        }
        Ok(Self { name, points })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn duration(&self) -> f64 {
        self.points.last().map(|p| p.0).unwrap_or(0.0)
    }

    /// Number of 1 s control steps in an episode.
    pub fn steps(&self) -> usize {
        self.duration().ceil() as usize
    }

    /// Setpoint at `t` seconds; clamps to the end values outside the knot
    /// range and returns knot values exactly at knots.
    pub fn setpoint(&self, t: f64) -> f64 {
        let pts = &self.points;
        if t <= pts[0].0 {
            return pts[0].1;
        }
        let last = pts[pts.len() - 1];
        if t >= last.0 {
            return last.1;
        }
        let idx = pts.partition_point(|&(tk, _)| tk <= t);
        let (t0, p0) = pts[idx - 1];
        if t == t0 {
            return p0;
        }
        let (t1, p1) = pts[idx];
        p0 + (p1 - p0) * (t - t0) / (t1 - t0)
    }

    pub fn min_setpoint(&self) -> f64 {
        self.points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min)
    }

    pub fn from_csv_reader<R: std::io::Read>(name: &str, reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.len() != 2 || &headers[0] != "time_s" || &headers[1] != "setpoint_spu" {
            return Err(Error::config(format!(
                "profile `{name}`: expected header `time_s,setpoint_spu`, got `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut points = Vec::new();
        for row in rdr.deserialize::<Knot>() {
            let k = row.map_err(|e| Error::config(format!("profile `{name}`: {e}")))?;
            points.push((k.time_s, k.setpoint_spu));
        }
        Self::new(name, points)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let name = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("profile")
            .to_string();
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(&name, file)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("time_s,setpoint_spu\n");
        for &(t, p) in &self.points {
            out.push_str(&format!("{t},{p}\n"));
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    /// Looks up a built-in profile by name, or loads a CSV path.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        match builtin(name_or_path) {
            Some(p) => Ok(p),
            None if Path::new(name_or_path).exists() => Self::load(name_or_path),
            None => Err(Error::config(format!(
                "unknown profile `{name_or_path}` (built-ins: {})",
                BUILTIN_NAMES.join(", ")
            ))),
        }
    }
}

pub const BUILTIN_NAMES: [&str; 4] = ["train", "test", "low-power", "long-test"];

const TRAIN_CSV: &str = include_str!("../../../profiles/train.csv");
const TEST_CSV: &str = include_str!("../../../profiles/test.csv");
const LOW_POWER_CSV: &str = include_str!("../../../profiles/low-power.csv");
const LONG_TEST_CSV: &str = include_str!("../../../profiles/long-test.csv");

pub fn builtin(name: &str) -> Option<LoadProfile> {
    let csv = match name {
        "train" => TRAIN_CSV,
        "test" => TEST_CSV,
        "low-power" => LOW_POWER_CSV,
        "long-test" => LONG_TEST_CSV,
        _ => return None,
    };
    Some(LoadProfile::from_csv_reader(name, csv.as_bytes()).expect("shipped profile is valid"))
}

/// The four shipped profiles in a fixed order.
pub fn builtin_profiles() -> Vec<LoadProfile> {
    BUILTIN_NAMES.iter().filter_map(|n| builtin(n)).collect()
}
