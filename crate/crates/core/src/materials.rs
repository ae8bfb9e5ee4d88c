//! Reflection-loss material database and material identification.
//!
//! Records hold reflection loss (dB, relative to a perfect mirror) sampled
//! over frequency. The database can be filled from curated values, from CSV
//! files, or from THz time-domain spectroscopy traces ratioed against a
//! mirror reference.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::estimator::MpcEstimate;
use crate::scene::TrxConfig;
use crate::sim::fspl_db;
use crate::{Error, Result, SPEED_OF_LIGHT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaterialCategory {
    Metal,
    Biological,
    Building,
    Functional,
}

impl fmt::Display for MaterialCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaterialCategory::Metal => "metal",
            MaterialCategory::Biological => "biological",
            MaterialCategory::Building => "building",
            MaterialCategory::Functional => "functional",
        })
    }
}

impl FromStr for MaterialCategory {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "metal" => Ok(MaterialCategory::Metal),
            "biological" => Ok(MaterialCategory::Biological),
            "building" => Ok(MaterialCategory::Building),
            "functional" => Ok(MaterialCategory::Functional),
            other => Err(format!("unknown material category '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialRecord {
    pub name: String,
    pub category: MaterialCategory,
    /// `(frequency Hz, reflection loss dB)`, strictly increasing in frequency.
    pub rl_db_at: Vec<(f64, f64)>,
}

impl MaterialRecord {
    pub fn new(
        name: impl Into<String>,
        category: MaterialCategory,
        rl_db_at: Vec<(f64, f64)>,
    ) -> Result<Self> {
        let r = MaterialRecord {
            name: name.into(),
            category,
            rl_db_at,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::validation("material name must not be empty"));
        }
        if self.rl_db_at.is_empty() {
            return Err(Error::validation(format!(
                "material '{}' has no samples",
                self.name
            )));
        }
        for &(f, rl) in &self.rl_db_at {
            if !f.is_finite() || !rl.is_finite() || f < 0.0 {
                return Err(Error::validation(format!(
                    "material '{}' has invalid sample",
                    self.name
                )));
            }
            if rl < 0.0 {
                return Err(Error::validation(format!(
                    "material '{}' has negative reflection loss",
                    self.name
                )));
            }
        }
        if self.rl_db_at.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(Error::validation(format!(
                "material '{}' frequencies are not strictly increasing",
                self.name
            )));
        }
        Ok(())
    }

    /// Reflection loss at `f`, linearly interpolated. A single-sample record
    /// is taken as frequency-flat; otherwise `f` must lie inside the sampled
    /// range.
    pub fn rl_at(&self, f: f64) -> Option<f64> {
        let s = &self.rl_db_at;
        if s.len() == 1 {
            return Some(s[0].1);
        }
        let (f0, f1) = (s[0].0, s[s.len() - 1].0);
        if !(f >= f0 && f <= f1) {
            return None;
        }
        let k = s.partition_point(|&(fk, _)| fk <= f).clamp(1, s.len() - 1) - 1;
        let (fa, ra) = s[k];
        let (fb, rb) = s[k + 1];
        Some(ra + (rb - ra) * (f - fa) / (fb - fa))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MaterialDb {
    records: Vec<MaterialRecord>,
}

const CSV_HEADER: [&str; 4] = ["name", "category", "frequency_hz", "rl_db"];

impl MaterialDb {
    pub fn new(records: Vec<MaterialRecord>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &records {
            r.validate()?;
            if !seen.insert(r.name.as_str()) {
                return Err(Error::validation(format!(
                    "duplicate material name '{}'",
                    r.name
                )));
            }
        }
        Ok(MaterialDb { records })
    }

    /// Reflection losses at 300 GHz of eight common indoor materials.
    pub fn seed() -> Self {
        use MaterialCategory::*;
        let rows: [(&str, MaterialCategory, f64); 8] = [
            ("Ti", Metal, 0.84),
            ("Sn", Metal, 1.72),
            ("Steel", Metal, 2.42),
            ("Cement", Building, 11.84),
            ("Ceramic", Building, 12.10),
            ("Fiber cement", Building, 13.09),
            ("Cardboard", Functional, 16.86),
            ("Wood", Building, 20.42),
        ];
        let records = rows
            .iter()
            .map(|&(n, c, rl)| MaterialRecord {
                name: n.to_string(),
                category: c,
                rl_db_at: vec![(300e9, rl)],
            })
            .collect();
        MaterialDb { records }
    }

    pub fn records(&self) -> &[MaterialRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&MaterialRecord> {
        self.records.iter().find(|r| r.name == name)
    }

    /// Adds or replaces a record.
    pub fn upsert(&mut self, record: MaterialRecord) -> Result<()> {
        record.validate()?;
        match self.records.iter_mut().find(|r| r.name == record.name) {
            Some(slot) => *slot = record,
            None => self.records.push(record),
        }
        Ok(())
    }

    pub fn reflection_loss(&self, name: &str, f: f64) -> Result<f64> {
        let rec = self
            .get(name)
            .ok_or_else(|| Error::validation(format!("material '{name}' not in database")))?;
        rec.rl_at(f)
            .ok_or_else(|| Error::validation(format!("material '{name}' has no data at {f:e} Hz")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file, path)
    }

    /// Parses the `name,category,frequency_hz,rl_db` CSV schema. Rows of one
    /// material must be contiguous; `origin` only labels diagnostics.
    pub fn from_reader<R: std::io::Read>(reader: R, origin: &Path) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            msg,
        };
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(reader);
        let header = rdr.headers().map_err(|e| err(1, e.to_string()))?.clone();
        if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
            return Ok(MaterialDb::default());
        }
        if header.iter().collect::<Vec<_>>() != CSV_HEADER {
            return Err(err(
                1,
                format!("expected header '{}'", CSV_HEADER.join(",")),
            ));
        }

        let mut records: Vec<MaterialRecord> = Vec::new();
        let mut closed: HashSet<String> = HashSet::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| {
                let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
                err(line, e.to_string())
            })?;
            let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
            if rec.len() != 4 {
                return Err(err(line, format!("expected 4 fields, found {}", rec.len())));
            }
            let name = rec[0].to_string();
            if name.is_empty() {
                return Err(err(line, "empty material name".into()));
            }
            let category: MaterialCategory = rec[1].parse().map_err(|e| err(line, e))?;
            let f: f64 = rec[2]
                .parse()
                .map_err(|e| err(line, format!("bad frequency_hz '{}': {e}", &rec[2])))?;
            let rl: f64 = rec[3]
                .parse()
                .map_err(|e| err(line, format!("bad rl_db '{}': {e}", &rec[3])))?;
            if !f.is_finite() || !rl.is_finite() || f < 0.0 || rl < 0.0 {
                return Err(err(
                    line,
                    "frequency and reflection loss must be finite and >= 0".into(),
                ));
            }

            match records.last_mut() {
                Some(last) if last.name == name => {
                    if last.category != category {
                        return Err(err(
                            line,
                            format!("category changes within material '{name}'"),
                        ));
                    }
                    if !(f > last
                        .rl_db_at
                        .last()
                        .map(|s| s.0)
                        .unwrap_or(f64::NEG_INFINITY))
                    {
                        return Err(err(
                            line,
                            format!("frequencies of '{name}' are not strictly increasing"),
                        ));
                    }
                    last.rl_db_at.push((f, rl));
                }
                _ => {
                    if let Some(last) = records.last() {
                        closed.insert(last.name.clone());
                    }
                    if closed.contains(&name) {
                        return Err(err(line, format!("duplicate material name '{name}'")));
                    }
                    records.push(MaterialRecord {
                        name,
                        category,
                        rl_db_at: vec![(f, rl)],
                    });
                }
            }
        }
        MaterialDb::new(records)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = Vec::new();
        self.write_csv(&mut out)
            .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> csv::Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(CSV_HEADER)?;
        for r in &self.records {
            for &(f, rl) in &r.rl_db_at {
                wtr.write_record([
                    r.name.clone(),
                    r.category.to_string(),
                    format!("{f:?}"),
                    format!("{rl:?}"),
                ])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedMatch {
    pub name: String,
    pub delta_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub ranked: Vec<RankedMatch>,
    /// Second-best minus best distance; `None` with fewer than two records.
    pub confidence_margin_db: Option<f64>,
}

impl MatchResult {
    pub fn best(&self) -> Option<&RankedMatch> {
        self.ranked.first()
    }
}

/// JSON identification report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentificationReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub surface: Option<String>,
    pub query_rl_db: f64,
    pub f_hz: f64,
    pub ranked: Vec<RankedMatch>,
    pub confidence_margin_db: Option<f64>,
}

impl IdentificationReport {
    pub fn new(query_rl_db: f64, f_hz: f64, m: MatchResult) -> Self {
        IdentificationReport {
            surface: None,
            query_rl_db,
            f_hz,
            ranked: m.ranked,
            confidence_margin_db: m.confidence_margin_db,
        }
    }
}

/// Ranks database records by `|rl_db − RL_record(f_query)|`, ties broken by name.
pub fn identify_material(rl_db: f64, db: &MaterialDb, f_query: f64) -> Result<MatchResult> {
    if db.is_empty() {
        return Err(Error::validation("material database is empty"));
    }
    let mut ranked = db
        .records()
        .iter()
        .map(|r| {
            r.rl_at(f_query)
                .map(|rl| RankedMatch {
                    name: r.name.clone(),
                    delta_db: (rl_db - rl).abs(),
                })
                .ok_or_else(|| {
                    Error::validation(format!(
                        "material '{}' has no data at {f_query:e} Hz",
                        r.name
                    ))
                })
        })
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(|a, b| {
        a.delta_db
            .total_cmp(&b.delta_db)
            .then_with(|| a.name.cmp(&b.name))
    });
    let confidence_margin_db = (ranked.len() >= 2).then(|| ranked[1].delta_db - ranked[0].delta_db);
    Ok(MatchResult {
        ranked,
        confidence_margin_db,
    })
}

/// Reflection loss implied by an echo, inverting the simulator link budget:
/// `RL = G_t + G_r − FSPL(c·τ, f_c) − 20·log10|α|`, assuming broadside
/// incidence (no diffuse falloff).
pub fn extract_reflection_loss(est: &MpcEstimate, trx: &TrxConfig, f_c: f64) -> Result<f64> {
    if !(est.tau > 0.0) {
        return Err(Error::validation("echo delay must be > 0"));
    }
    let mag = est.alpha.norm();
    if !(mag > 0.0) || !mag.is_finite() {
        return Err(Error::Numerical("echo amplitude is zero".into()));
    }
    let path = SPEED_OF_LIGHT * est.tau;
    Ok(2.0 * trx.antenna_gain_dbi - fspl_db(path, f_c) - 20.0 * mag.log10())
}

/// Time-domain spectroscopy field trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TdsTrace {
    pub e_field: Vec<f64>,
    /// Sample period, s.
    pub dt: f64,
    pub label: String,
}

impl TdsTrace {
    pub fn new(e_field: Vec<f64>, dt: f64, label: impl Into<String>) -> Result<Self> {
        let t = TdsTrace {
            e_field,
            dt,
            label: label.into(),
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.e_field.len() < 16 {
            return Err(Error::validation("TDS trace needs at least 16 samples"));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::validation("TDS sample period must be > 0"));
        }
        if self.e_field.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("TDS trace contains non-finite samples"));
        }
        Ok(())
    }

    /// Reads a `t_s,e_field` CSV; the time column must be uniformly spaced.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| err(0, e.to_string()))?;
        let (mut t, mut e) = (Vec::new(), Vec::new());
        for rec in rdr.records() {
            let rec = rec.map_err(|x| err(0, x.to_string()))?;
            let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
            let get = |k: usize| -> Result<f64> {
                rec.get(k)
                    .ok_or_else(|| err(line, "expected 2 fields".into()))?
                    .parse::<f64>()
                    .map_err(|x| err(line, x.to_string()))
            };
            t.push(get(0)?);
            e.push(get(1)?);
        }
        if t.len() < 2 {
            return Err(err(0, "trace needs at least 2 samples".into()));
        }
        let dt = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
        if t.windows(2)
            .any(|w| ((w[1] - w[0]) - dt).abs() > 1e-6 * dt.abs())
        {
            return Err(err(0, "time column is not uniformly spaced".into()));
        }
        let label = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        TdsTrace::new(e, dt, label)
    }

    fn spectrum(&self) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = self
            .e_field
            .iter()
            .map(|&v| Complex64::new(v, 0.0))
            .collect();
        FftPlanner::new()
            .plan_fft_forward(buf.len())
            .process(&mut buf);
        buf
    }
}

/// Reflection loss of `sample` against a mirror `reference` trace at
/// `f_query`: `20·log10(|E_ref| / |E_sample|)`, linearly interpolated between
/// DFT bins.
pub fn tds_reflection_loss(sample: &TdsTrace, reference: &TdsTrace, f_query: f64) -> Result<f64> {
    sample.validate()?;
    reference.validate()?;
    if sample.e_field.len() != reference.e_field.len() {
        return Err(Error::validation(
            "sample and reference traces differ in length",
        ));
    }
    if (sample.dt - reference.dt).abs() > 1e-12 * reference.dt {
        return Err(Error::validation(
            "sample and reference traces differ in sample period",
        ));
    }
    let n = sample.e_field.len();
    let df = 1.0 / (n as f64 * sample.dt);
    let nyquist = 0.5 / sample.dt;
    if !(f_query >= 0.0 && f_query < nyquist) {
        return Err(Error::validation(format!(
            "query frequency {f_query:e} Hz outside [0, {nyquist:e})"
        )));
    }
    let es = sample.spectrum();
    let er = reference.spectrum();
    let rl_bin = |k: usize| -> Result<f64> {
        let (s, r) = (es[k].norm(), er[k].norm());
        if !(s >= 1e-12 * r) || r == 0.0 {
            return Err(Error::Numerical(format!(
                "sample spectrum below dynamic range at {:e} Hz",
                k as f64 * df
            )));
        }
        Ok(20.0 * (r / s).log10())
    };
    let pos = f_query / df;
    let k0 = pos.floor() as usize;
    let frac = pos - k0 as f64;
    let k1 = (k0 + 1).min(n / 2);
    let a = rl_bin(k0)?;
    if frac == 0.0 || k1 == k0 {
        return Ok(a);
    }
    let b = rl_bin(k1)?;
    Ok(a + frac * (b - a))
}

/// Reflection-loss spectrum of `sample` at every DFT bin in `[f_lo, f_hi]`.
pub fn tds_reflection_spectrum(
    sample: &TdsTrace,
    reference: &TdsTrace,
    f_lo: f64,
    f_hi: f64,
) -> Result<Vec<(f64, f64)>> {
    let n = sample.e_field.len();
    let df = 1.0 / (n as f64 * sample.dt);
    let k_lo = (f_lo / df).ceil().max(0.0) as usize;
    let k_hi = ((f_hi / df).floor() as usize).min((n - 1) / 2);
    (k_lo..=k_hi)
        .map(|k| {
            let f = k as f64 * df;
            tds_reflection_loss(sample, reference, f).map(|rl| (f, rl.max(0.0)))
        })
        .collect()
}
