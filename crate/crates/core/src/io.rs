//! Plain-text data files: failure/event times and annual hazard rates.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::path::ObservedPath;
use crate::sampler::PiecewiseHazard;

/// Observed times with event (1) / censoring (0) flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventsFile {
    pub times: Vec<f64>,
    pub status: Vec<bool>,
}

#[derive(Debug, Deserialize)]
struct EventRow {
    time: f64,
    #[serde(default)]
    status: Option<u8>,
}

impl EventsFile {
    /// Parses `time,status` CSV (header required, `status` column optional)
    /// or, with `gaps`, one positive inter-event gap per line. Times are
    /// multiplied by `time_scale`.
    pub fn parse(text: &str, gaps: bool, time_scale: f64) -> Result<Self> {
        if !(time_scale > 0.0 && time_scale.is_finite()) {
            return Err(Error::Argument(format!("time scale must be positive, got {time_scale}")));
        }
        let (times, status) = if gaps {
            Self::parse_gaps(text)?
        } else {
            Self::parse_csv(text)?
        };
        let times: Vec<f64> = times.into_iter().map(|t| t * time_scale).collect();
        let mut prev = 0.0;
        for (i, &t) in times.iter().enumerate() {
            if !(t > prev) || !t.is_finite() {
                return Err(Error::Format(format!(
                    "time #{} = {t} is not strictly after the previous one ({prev})",
                    i + 1
                )));
            }
            prev = t;
        }
        Ok(Self { times, status })
    }

    fn parse_gaps(text: &str) -> Result<(Vec<f64>, Vec<bool>)> {
        let mut acc = 0.0;
        let mut times = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let gap: f64 = line.parse().map_err(|_| {
                Error::Format(format!("line {}: {line:?} is not a number", lineno + 1))
            })?;
            if !(gap > 0.0 && gap.is_finite()) {
                return Err(Error::Format(format!(
                    "line {}: gap {gap} must be positive",
                    lineno + 1
                )));
            }
            acc += gap;
            times.push(acc);
        }
        let status = vec![true; times.len()];
        Ok((times, status))
    }

    fn parse_csv(text: &str) -> Result<(Vec<f64>, Vec<bool>)> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let headers = reader.headers()?.clone();
        if !headers.iter().any(|h| h == "time") {
            return Err(Error::Format(format!(
                "missing `time` column in header {:?}",
                headers.iter().collect::<Vec<_>>()
            )));
        }
        let mut times = Vec::new();
        let mut status = Vec::new();
        for (i, row) in reader.deserialize::<EventRow>().enumerate() {
            let row = row.map_err(|e| Error::Format(format!("row {}: {e}", i + 1)))?;
            let flag = match row.status {
                None | Some(1) => true,
                Some(0) => false,
                Some(other) => {
                    return Err(Error::Format(format!("row {}: status {other} is not 0 or 1", i + 1)))
                }
            };
            times.push(row.time);
            status.push(flag);
        }
        Ok((times, status))
    }

    pub fn read(location: &Path, gaps: bool, time_scale: f64) -> Result<Self> {
        let text = fs::read_to_string(location)
            .map_err(|e| Error::Format(format!("cannot read {}: {e}", location.display())))?;
        Self::parse(&text, gaps, time_scale)
            .map_err(|e| Error::Format(format!("{}: {e}", location.display())))
    }

    pub fn from_path(path: &ObservedPath) -> Self {
        Self {
            times: path.times().to_vec(),
            status: path.status().to_vec(),
        }
    }

    /// Path on `[0, horizon]`; `horizon` defaults to the last time.
    pub fn into_path(self, n: usize, horizon: Option<f64>) -> Result<ObservedPath> {
        let horizon = match horizon {
            Some(h) => h,
            None => *self
                .times
                .last()
                .ok_or_else(|| Error::Format("no times and no horizon given".into()))?,
        };
        if let Some(&t) = self.times.last() {
            if t > horizon {
                return Err(Error::Range { t, horizon });
            }
        }
        ObservedPath::new(self.times, self.status, n, horizon)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["time", "status"])?;
        for (t, s) in self.times.iter().zip(&self.status) {
            w.write_record([format!("{t}"), if *s { "1".into() } else { "0".into() }])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Annual hazard rates by integer age.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatesFile {
    pub ages: Vec<i64>,
    pub rates: Vec<f64>,
}

#[derive(Debug, Deserialize)]
struct RateRow {
    age: i64,
    rate: f64,
}

impl RatesFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let mut ages = Vec::new();
        let mut rates = Vec::new();
        for (i, row) in reader.deserialize::<RateRow>().enumerate() {
            let row = row.map_err(|e| Error::Format(format!("row {}: {e}", i + 1)))?;
            if let Some(&prev) = ages.last() {
                if row.age != prev + 1 {
                    return Err(Error::Format(format!(
                        "row {}: age {} does not follow {prev}",
                        i + 1,
                        row.age
                    )));
                }
            }
            if !(row.rate >= 0.0 && row.rate.is_finite()) {
                return Err(Error::Format(format!("row {}: rate {} is negative", i + 1, row.rate)));
            }
            ages.push(row.age);
            rates.push(row.rate);
        }
        if ages.is_empty() {
            return Err(Error::Format("no rate rows".into()));
        }
        Ok(Self { ages, rates })
    }

    pub fn read(location: &Path) -> Result<Self> {
        let text = fs::read_to_string(location)
            .map_err(|e| Error::Format(format!("cannot read {}: {e}", location.display())))?;
        Self::parse(&text).map_err(|e| Error::Format(format!("{}: {e}", location.display())))
    }

    /// Hazard on `[age_0, age_last + 1)`, time measured from `age_0`.
    pub fn hazard(&self) -> Result<PiecewiseHazard> {
        PiecewiseHazard::annual(self.ages[0] as f64, self.rates.clone())
    }
}
