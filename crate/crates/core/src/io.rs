//! On-disk formats.
//!
//! Binary feature and head files start with a single-line compact JSON header
//! terminated by `\n`, followed by little-endian `f32` payloads:
//!
//! ```text
//! {"format":"ibshape-features","version":1,"rows":N,"cols":d,"dtype":"f32le","labels":true,"provenance":{}}\n
//! N·d f32 row-major values, then N label bytes (0 = ID, 1 = OOD) when "labels" is true
//!
//! {"format":"ibshape-head","version":1,"classes":C,"dim":d,"dtype":"f32le","provenance":{}}\n
//! C·d f32 row-major weights, then C f32 biases
//! ```
//!
//! Curves, scores, densities and traces are CSV with a header row. Every writer goes
//! through a temporary file and a rename, so a failed command leaves no partial output.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::densities::{DensityGrid, Grid1D};
use crate::detect::ClassifierHead;
use crate::error::{Error, Result};
use crate::shaping::{CurveShape, FeatureMatrix};
use crate::varopt::{GaussianRandomFeature, TraceRecord};

pub const FEATURE_FORMAT: &str = "ibshape-features";
pub const HEAD_FORMAT: &str = "ibshape-head";
pub const MANIFEST_FORMAT: &str = "ibshape-manifest";
pub const SWEEP_FORMAT: &str = "ibshape-sweep";
pub const FORMAT_VERSION: u32 = 1;
const DTYPE: &str = "f32le";
const MAX_HEADER: usize = 1 << 20;

/// Free-form notes carried in file headers.
pub type Provenance = BTreeMap<String, Value>;

/// Writes `bytes` to `path` atomically.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path.file_name().ok_or_else(|| Error::Usage(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

fn split_header(bytes: &[u8]) -> Result<(&[u8], &[u8])> {
    let end = bytes
        .iter()
        .take(MAX_HEADER)
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("missing header line".into()))?;
    Ok((&bytes[..end], &bytes[end + 1..]))
}

fn check_tag(format: &str, version: u32, dtype: &str, expected: &str) -> Result<()> {
    if format != expected {
        return Err(Error::Format(format!("expected format `{expected}`, found `{format}`")));
    }
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported {expected} version {version}")));
    }
    if dtype != DTYPE {
        return Err(Error::Format(format!("unsupported dtype `{dtype}`")));
    }
    Ok(())
}

fn parse_header<T: for<'de> Deserialize<'de>>(line: &[u8]) -> Result<T> {
    serde_json::from_slice(line).map_err(|e| Error::Format(format!("bad header: {e}")))
}

fn push_f32s(out: &mut Vec<u8>, values: &[f32]) {
    out.reserve(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn take_f32s(payload: &[u8], count: usize) -> Vec<f32> {
    payload[..count * 4].chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect()
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeatureHeader {
    format: String,
    version: u32,
    rows: usize,
    cols: usize,
    dtype: String,
    #[serde(default)]
    labels: bool,
    #[serde(default)]
    provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    pub matrix: FeatureMatrix,
    pub provenance: Provenance,
}

impl FeatureFile {
    pub fn new(matrix: FeatureMatrix) -> Self {
        FeatureFile { matrix, provenance: Provenance::new() }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let m = &self.matrix;
        let header = FeatureHeader {
            format: FEATURE_FORMAT.into(),
            version: FORMAT_VERSION,
            rows: m.rows(),
            cols: m.cols(),
            dtype: DTYPE.into(),
            labels: m.labels().is_some(),
            provenance: self.provenance.clone(),
        };
        let mut out = serde_json::to_vec(&header).expect("header serializes");
        out.push(b'\n');
        push_f32s(&mut out, m.values());
        if let Some(l) = m.labels() {
            out.extend_from_slice(l);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (line, payload) = split_header(bytes)?;
        let h: FeatureHeader = parse_header(line)?;
        check_tag(&h.format, h.version, &h.dtype, FEATURE_FORMAT)?;
        let count = h.rows.checked_mul(h.cols).ok_or_else(|| Error::Format("rows × cols overflows".into()))?;
        let expected = count * 4 + if h.labels { h.rows } else { 0 };
        if payload.len() != expected {
            return Err(Error::Format(format!("payload is {} bytes, header implies {expected}", payload.len())));
        }
        let values = take_f32s(payload, count);
        let labels = h.labels.then(|| payload[count * 4..].to_vec());
        let matrix = FeatureMatrix::new(h.rows, h.cols, values, labels).map_err(|e| Error::Format(e.to_string()))?;
        Ok(FeatureFile { matrix, provenance: h.provenance })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }
}

/// CSV features: columns `f0..f{d-1}`, plus a trailing `label` column when labeled.
pub fn features_to_csv(m: &FeatureMatrix) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = (0..m.cols()).map(|j| format!("f{j}")).collect();
    if m.labels().is_some() {
        header.push("label".into());
    }
    w.write_record(&header)?;
    for i in 0..m.rows() {
        let mut rec: Vec<String> = m.row(i).iter().map(|v| v.to_string()).collect();
        if let Some(l) = m.labels() {
            rec.push(l[i].to_string());
        }
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn features_from_csv(bytes: &[u8]) -> Result<FeatureMatrix> {
    let mut r = csv::Reader::from_reader(bytes);
    let header = r.headers()?.clone();
    let labeled = header.iter().next_back() == Some("label");
    let cols = header.len() - usize::from(labeled);
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec?;
        for j in 0..cols {
            values.push(parse_field::<f32>(&rec, j)?);
        }
        if labeled {
            labels.push(parse_field::<u8>(&rec, cols)?);
        }
        rows += 1;
    }
    FeatureMatrix::new(rows, cols, values, labeled.then_some(labels)).map_err(|e| Error::Format(e.to_string()))
}

fn parse_field<T: std::str::FromStr>(rec: &csv::StringRecord, j: usize) -> Result<T> {
    let s = rec.get(j).ok_or_else(|| Error::Format(format!("missing column {j}")))?;
    s.trim().parse().map_err(|_| Error::Format(format!("cannot parse `{s}` in column {j}")))
}

/// Feature file encodings selectable on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FeatureEncoding {
    #[default]
    Binary,
    Csv,
}

pub fn read_features(path: &Path, enc: FeatureEncoding) -> Result<FeatureFile> {
    let bytes = fs::read(path)?;
    match enc {
        FeatureEncoding::Binary => FeatureFile::from_bytes(&bytes),
        FeatureEncoding::Csv => Ok(FeatureFile::new(features_from_csv(&bytes)?)),
    }
}

pub fn write_features(path: &Path, file: &FeatureFile, enc: FeatureEncoding) -> Result<()> {
    match enc {
        FeatureEncoding::Binary => file.write(path),
        FeatureEncoding::Csv => write_atomic(path, &features_to_csv(&file.matrix)?),
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeadHeader {
    format: String,
    version: u32,
    classes: usize,
    dim: usize,
    dtype: String,
    #[serde(default)]
    provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadFile {
    pub head: ClassifierHead,
    pub provenance: Provenance,
}

impl HeadFile {
    pub fn new(head: ClassifierHead) -> Self {
        HeadFile { head, provenance: Provenance::new() }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let h = &self.head;
        let header = HeadHeader {
            format: HEAD_FORMAT.into(),
            version: FORMAT_VERSION,
            classes: h.classes(),
            dim: h.dim(),
            dtype: DTYPE.into(),
            provenance: self.provenance.clone(),
        };
        let mut out = serde_json::to_vec(&header).expect("header serializes");
        out.push(b'\n');
        push_f32s(&mut out, h.weights());
        push_f32s(&mut out, h.bias());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (line, payload) = split_header(bytes)?;
        let h: HeadHeader = parse_header(line)?;
        check_tag(&h.format, h.version, &h.dtype, HEAD_FORMAT)?;
        let nw = h.classes.checked_mul(h.dim).ok_or_else(|| Error::Format("classes × dim overflows".into()))?;
        let expected = (nw + h.classes) * 4;
        if payload.len() != expected {
            return Err(Error::Format(format!("payload is {} bytes, header implies {expected}", payload.len())));
        }
        let weights = take_f32s(payload, nw);
        let bias = take_f32s(&payload[nw * 4..], h.classes);
        let head = ClassifierHead::new(h.classes, h.dim, weights, bias).map_err(|e| Error::Format(e.to_string()))?;
        Ok(HeadFile { head, provenance: h.provenance })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }
}

/// Contents of a curve file: one `(z, mu, sigma_c)` row per grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveFile {
    pub z: Vec<f64>,
    pub mu: Vec<f64>,
    pub sigma_c: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CurveRow {
    z: f64,
    mu: f64,
    sigma_c: f64,
}

impl CurveFile {
    pub fn from_feature(f: &GaussianRandomFeature) -> Self {
        CurveFile { z: f.grid().points(), mu: f.mean().to_vec(), sigma_c: f.sigma().to_vec() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.z.len() < 2 || self.mu.len() != self.z.len() || self.sigma_c.len() != self.z.len() {
            return Err(Error::Format("curve needs at least two complete rows".into()));
        }
        if self.z.iter().chain(&self.mu).chain(&self.sigma_c).any(|v| !v.is_finite()) {
            return Err(Error::Format("curve values must be finite".into()));
        }
        if self.z.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Format("curve z must be strictly increasing".into()));
        }
        if self.sigma_c.iter().any(|&s| s <= 0.0) {
            return Err(Error::Format("curve sigma_c must be positive".into()));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for i in 0..self.z.len() {
            w.serialize(CurveRow { z: self.z[i], mu: self.mu[i], sigma_c: self.sigma_c[i] })?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = csv::Reader::from_reader(bytes);
        if r.headers()?.iter().collect::<Vec<_>>() != ["z", "mu", "sigma_c"] {
            return Err(Error::Format("curve header must be `z,mu,sigma_c`".into()));
        }
        let mut c = CurveFile { z: vec![], mu: vec![], sigma_c: vec![] };
        for row in r.deserialize() {
            let row: CurveRow = row.map_err(|e| Error::Format(e.to_string()))?;
            c.z.push(row.z);
            c.mu.push(row.mu);
            c.sigma_c.push(row.sigma_c);
        }
        c.validate()?;
        Ok(c)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.validate()?;
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn to_shape(&self) -> Result<CurveShape> {
        CurveShape::new(self.z.clone(), self.mu.clone())
    }

    /// Rebuilds the random feature; `z` must be uniformly spaced.
    pub fn to_feature(&self) -> Result<GaussianRandomFeature> {
        let grid = uniform_grid(&self.z)?;
        GaussianRandomFeature::new(grid, self.mu.clone(), self.sigma_c.clone())
    }
}

fn uniform_grid(z: &[f64]) -> Result<Grid1D> {
    let n = z.len();
    let grid = Grid1D::new(z[0], z[n - 1], n)?;
    let tol = 1e-9 * (z[n - 1] - z[0]);
    if z.iter().enumerate().any(|(i, &v)| (v - grid.point(i)).abs() > tol) {
        return Err(Error::Format("z values are not uniformly spaced".into()));
    }
    Ok(grid)
}

/// Density CSV `z,density` on a uniform grid, renormalized on read.
pub fn read_density_csv(bytes: &[u8]) -> Result<DensityGrid> {
    let mut r = csv::Reader::from_reader(bytes);
    if r.headers()?.iter().collect::<Vec<_>>() != ["z", "density"] {
        return Err(Error::Format("density header must be `z,density`".into()));
    }
    let (mut z, mut p) = (vec![], vec![]);
    for rec in r.records() {
        let rec = rec?;
        z.push(parse_field::<f64>(&rec, 0)?);
        p.push(parse_field::<f64>(&rec, 1)?);
    }
    if z.len() < 2 {
        return Err(Error::Format("density file needs at least two rows".into()));
    }
    if p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::Format("densities must be finite and nonnegative".into()));
    }
    DensityGrid::from_values(uniform_grid(&z)?, p)
}

pub fn density_to_csv(d: &DensityGrid) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["z", "density"])?;
    for (i, v) in d.values().iter().enumerate() {
        w.write_record([d.grid().point(i).to_string(), v.to_string()])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Scores CSV: a `score` column and, when known, a `label` column.
pub fn scores_to_csv(scores: &[f64], labels: Option<&[u8]>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    match labels {
        Some(l) => {
            w.write_record(["score", "label"])?;
            for (s, l) in scores.iter().zip(l) {
                w.write_record([s.to_string(), l.to_string()])?;
            }
        }
        None => {
            w.write_record(["score"])?;
            for s in scores {
                w.write_record([s.to_string()])?;
            }
        }
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Reads a scores CSV; labels are returned when a `label` column is present.
pub fn scores_from_csv(bytes: &[u8]) -> Result<(Vec<f64>, Option<Vec<u8>>)> {
    let mut r = csv::Reader::from_reader(bytes);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let labeled = match header.iter().map(String::as_str).collect::<Vec<_>>()[..] {
        ["score"] => false,
        ["score", "label"] => true,
        _ => return Err(Error::Format("scores header must be `score` or `score,label`".into())),
    };
    let (mut s, mut l) = (vec![], vec![]);
    for rec in r.records() {
        let rec = rec?;
        let v: f64 = parse_field(&rec, 0)?;
        if !v.is_finite() {
            return Err(Error::Format("scores must be finite".into()));
        }
        s.push(v);
        if labeled {
            let lab: u8 = parse_field(&rec, 1)?;
            if lab > 1 {
                return Err(Error::Format(format!("label {lab} is not 0 or 1")));
            }
            l.push(lab);
        }
    }
    Ok((s, labeled.then_some(l)))
}

pub fn trace_to_csv(trace: &[TraceRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in trace {
        w.serialize(r)?;
    }
    if trace.is_empty() {
        w.write_record(["iteration", "kl_sym", "i_zz", "i_zy", "total", "step"])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// A dataset file emitted by the extractor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub name: String,
    pub split: String,
    /// `id` or `ood`.
    pub role: String,
    /// Path of the feature file, relative to the manifest.
    pub features: String,
}

/// Index of an extraction run: one head file and any number of feature files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head: Option<String>,
    pub datasets: Vec<ManifestEntry>,
    #[serde(default)]
    pub provenance: Provenance,
}

impl Manifest {
    pub fn new(model: Option<String>, head: Option<String>, datasets: Vec<ManifestEntry>) -> Self {
        Manifest { format: MANIFEST_FORMAT.into(), version: FORMAT_VERSION, model, head, datasets, provenance: Provenance::new() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != MANIFEST_FORMAT {
            return Err(Error::Format(format!("expected format `{MANIFEST_FORMAT}`, found `{}`", self.format)));
        }
        if self.version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported manifest version {}", self.version)));
        }
        for e in &self.datasets {
            if e.role != "id" && e.role != "ood" {
                return Err(Error::Format(format!("dataset `{}` has role `{}`, expected id or ood", e.name, e.role)));
            }
            if e.features.is_empty() {
                return Err(Error::Format(format!("dataset `{}` has no feature path", e.name)));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("manifest serializes");
        out.push(b'\n');
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let m: Manifest = serde_json::from_slice(bytes).map_err(|e| Error::Format(format!("bad manifest: {e}")))?;
        m.validate()?;
        Ok(m)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.validate()?;
        write_atomic(path, &self.to_bytes())
    }

    /// Resolves a manifest-relative path against the manifest's directory.
    pub fn resolve(manifest_path: &Path, rel: &str) -> PathBuf {
        manifest_path.parent().unwrap_or(Path::new(".")).join(rel)
    }
}
