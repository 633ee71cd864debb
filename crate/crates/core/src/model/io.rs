//! On-disk formats: model templates as JSON documents, traces as CSV.
//!
//! Template JSON:
//! ```json
//! {
//!   "variables": ["i", "i_s", "G"],
//!   "inputs": ["u1", "u_unused", "u2"],
//!   "a_pattern": [["neg","zero","zero"], ["pos","neg","zero"], ["zero","neg","neg"]],
//!   "b_pattern": ["pos", "zero", "any"],
//!   "beta": [false, false, true]
//! }
//! ```
//!
//! Trace CSV: header row mandatory, first column `time_s`, one column per
//! signal, samples uniformly spaced.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use super::trace::{Trace, Trajectory};
use super::{ModelError, ModelTemplate};

impl ModelTemplate {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("template serializes")
    }

    pub fn from_json(json: &str) -> Result<Self, ModelError> {
        let t: ModelTemplate = serde_json::from_str(json)?;
        t.validate()?;
        Ok(t)
    }

    pub fn from_json_file(path: &Path) -> Result<Self, ModelError> {
        let mut buf = String::new();
        std::fs::File::open(path)?.read_to_string(&mut buf)?;
        Self::from_json(&buf)
    }

    pub fn to_json_file(&self, path: &Path) -> Result<(), ModelError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_json().as_bytes())?;
        f.write_all(b"\n")?;
        Ok(())
    }
}

pub const TIME_COLUMN: &str = "time_s";

impl Trace {
    pub fn to_csv<W: Write>(&self, out: W) -> Result<(), ModelError> {
        let mut w = csv::Writer::from_writer(out);
        let names: Vec<&str> = self.names().collect();
        let mut header = vec![TIME_COLUMN];
        header.extend(&names);
        w.write_record(&header)?;
        let t0 = self.t0();
        let tau = self.tau();
        for k in 0..self.len() {
            let mut record = Vec::with_capacity(names.len() + 1);
            record.push(format!("{}", t0 + k as f64 * tau));
            for name in &names {
                record.push(format!("{}", self.signal(name).unwrap().values()[k]));
            }
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_file(&self, path: &Path) -> Result<(), ModelError> {
        let f = std::fs::File::create(path)?;
        self.to_csv(std::io::BufWriter::new(f))
    }

    pub fn from_csv<R: Read>(input: R) -> Result<Self, ModelError> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        if header.is_empty() || &header[0] != TIME_COLUMN {
            return Err(ModelError::InvalidTrace(format!(
                "first CSV column must be `{TIME_COLUMN}`, got {:?}",
                header.iter().next().unwrap_or("")
            )));
        }
        let names: Vec<String> = header.iter().skip(1).map(|s| s.to_string()).collect();
        if names.is_empty() {
            return Err(ModelError::InvalidTrace("trace CSV has no signal columns".into()));
        }
        let mut times = Vec::new();
        let mut columns: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
        for record in r.records() {
            let record = record?;
            if record.len() != names.len() + 1 {
                return Err(ModelError::InvalidTrace(format!(
                    "row {} has {} fields, expected {}",
                    times.len() + 2,
                    record.len(),
                    names.len() + 1
                )));
            }
            let parse = |s: &str| -> Result<f64, ModelError> {
                let v: f64 = s
                    .trim()
                    .parse()
                    .map_err(|_| ModelError::InvalidTrace(format!("bad number `{s}`")))?;
                if !v.is_finite() {
                    return Err(ModelError::InvalidTrace(format!("non-finite value `{s}`")));
                }
                Ok(v)
            };
            times.push(parse(&record[0])?);
            for (i, field) in record.iter().skip(1).enumerate() {
                columns[i].push(parse(field)?);
            }
        }
        if times.len() < 2 {
            return Err(ModelError::InvalidTrace(format!(
                "trace needs at least 2 samples, got {}",
                times.len()
            )));
        }
        let t0 = times[0];
        let tau = times[1] - times[0];
        if !(tau > 0.0) {
            return Err(ModelError::InvalidTrace(format!(
                "non-increasing time axis: tau = {tau}"
            )));
        }
        for (k, &t) in times.iter().enumerate() {
            let expect = t0 + k as f64 * tau;
            if (t - expect).abs() > 1e-6 * tau.max(1.0) {
                return Err(ModelError::InvalidTrace(format!(
                    "samples not uniformly spaced at row {} (t = {t}, expected {expect})",
                    k + 2
                )));
            }
        }
        let mut signals = BTreeMap::new();
        for (name, values) in names.into_iter().zip(columns) {
            if signals
                .insert(name.clone(), Trajectory::new(t0, tau, values)?)
                .is_some()
            {
                return Err(ModelError::InvalidTrace(format!("duplicate column `{name}`")));
            }
        }
        Trace::new(signals)
    }

    pub fn from_csv_file(path: &Path) -> Result<Self, ModelError> {
        let f = std::fs::File::open(path)?;
        Self::from_csv(std::io::BufReader::new(f))
    }
}
