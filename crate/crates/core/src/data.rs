//! Dataset loading, train/val/test splits, and lookback windowing.
//!
//! Series are standardized per channel with statistics fitted on the train
//! partition only, then segmented into non-overlapping windows of fixed
//! length; the trailing remainder is dropped rather than padded so the
//! frequency analysis never sees artificial content.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::scalar::Scalar;

/// Degenerate-variance clamp for global standardization.
pub const EPS_STD: f64 = 1e-8;

/// A multivariate series: `values` is T x m, labels (when present) mark
/// anomalous time steps with 1.
#[derive(Clone, Debug)]
pub struct RawSeries<S> {
    pub values: Mat<S>,
    pub channel_names: Option<Vec<String>>,
    pub labels: Option<Vec<u8>>,
}

impl<S: Scalar> RawSeries<S> {
    pub fn new(values: Mat<S>, labels: Option<Vec<u8>>) -> Result<Self> {
        if !values.is_finite() {
            return Err(Error::DataQuality(
                "series contains NaN or infinite values".into(),
            ));
        }
        if let Some(l) = &labels {
            if l.len() != values.rows() {
                return Err(Error::DataQuality(format!(
                    "label length {} does not match series length {}",
                    l.len(),
                    values.rows()
                )));
            }
        }
        Ok(RawSeries {
            values,
            channel_names: None,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    /// Rows `start..end`, labels sliced alongside.
    pub fn slice(&self, start: usize, end: usize) -> RawSeries<S> {
        RawSeries {
            values: self.values.slice_rows(start, end - start),
            channel_names: self.channel_names.clone(),
            labels: self.labels.as_ref().map(|l| l[start..end].to_vec()),
        }
    }
}

/// Per-channel z-score statistics fitted on the train partition.
#[derive(Clone, Debug)]
pub struct Standardization<S> {
    pub mean: Vec<S>,
    pub std: Vec<S>,
}

impl<S: Scalar> Standardization<S> {
    pub fn fit(series: &RawSeries<S>) -> Self {
        let mean = series.values.col_mean();
        let std = series
            .values
            .col_std(&mean)
            .into_iter()
            .map(|s| s.max(S::of(EPS_STD)))
            .collect();
        Standardization { mean, std }
    }

    pub fn apply(&self, series: &RawSeries<S>) -> RawSeries<S> {
        let eps = S::of(EPS_STD);
        let mut values = series.values.clone();
        for i in 0..values.rows() {
            let row = values.row_mut(i);
            for ((x, &mu), &sd) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                // A clamped std marks a degenerate channel; mean-subtraction
                // rounding would otherwise be amplified by 1/eps.
                *x = if sd <= eps { S::zero() } else { (*x - mu) / sd };
            }
        }
        RawSeries {
            values,
            channel_names: series.channel_names.clone(),
            labels: series.labels.clone(),
        }
    }
}

/// Standardized train/val/test partitions.
#[derive(Clone, Debug)]
pub struct DatasetSplit<S> {
    pub train: RawSeries<S>,
    pub val: RawSeries<S>,
    pub test: RawSeries<S>,
    pub standardization: Standardization<S>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataFormat {
    Csv,
    NpyDir,
}

/// Mirrors the CLI flags `--data-path`, `--format`, `--dims`,
/// `--val-fraction`, `--test-fraction`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub path: PathBuf,
    pub format: DataFormat,
    pub dims: usize,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    /// Tail fraction of a single-file source held out as the test partition.
    /// Ignored for directory sources that ship a separate test file.
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    /// Replace non-finite values with the channel mean instead of rejecting.
    #[serde(default)]
    pub impute_nan: bool,
}

fn default_val_fraction() -> f64 {
    0.2
}

fn default_test_fraction() -> f64 {
    0.3
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dims == 0 {
            return Err(Error::Config("dims must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("val_fraction must be in [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::Config("test_fraction must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Load a dataset, partition it, and standardize all partitions with
/// train-fitted statistics.
pub fn load_dataset<S: Scalar>(spec: &DatasetSpec) -> Result<DatasetSplit<S>> {
    spec.validate()?;
    match spec.format {
        DataFormat::Csv => {
            let series = load_csv::<S>(&spec.path, spec.dims, spec.impute_nan)?;
            let total = series.len();
            let test_len = (total as f64 * spec.test_fraction).round() as usize;
            let train_end = total - test_len;
            let test = series.slice(train_end, total);
            let train_full = series.slice(0, train_end);
            split_from_series(train_full, None, test, spec.val_fraction)
        }
        DataFormat::NpyDir => {
            let train = load_npy_series::<S>(
                &spec.path.join("train.npy"),
                None,
                spec.dims,
                spec.impute_nan,
            )?;
            let label_path = spec.path.join("test_label.npy");
            let labels = if label_path.exists() {
                Some(read_npy_labels(&label_path)?)
            } else {
                None
            };
            let test = load_npy_series::<S>(
                &spec.path.join("test.npy"),
                labels,
                spec.dims,
                spec.impute_nan,
            )?;
            split_from_series(train, None, test, spec.val_fraction)
        }
    }
}

/// Assemble a split from already-loaded partitions. When `val` is absent it
/// is carved from the tail of `train`.
pub fn split_from_series<S: Scalar>(
    train_full: RawSeries<S>,
    val: Option<RawSeries<S>>,
    test: RawSeries<S>,
    val_fraction: f64,
) -> Result<DatasetSplit<S>> {
    if train_full.dim() != test.dim() {
        return Err(Error::DatasetDimension {
            declared: train_full.dim(),
            actual: test.dim(),
        });
    }
    let (train, val) = match val {
        Some(v) => (train_full, v),
        None => {
            let total = train_full.len();
            let val_len = (total as f64 * val_fraction).round() as usize;
            let train = train_full.slice(0, total - val_len);
            let val = train_full.slice(total - val_len, total);
            (train, val)
        }
    };
    if train.is_empty() {
        return Err(Error::DataQuality("empty train partition".into()));
    }
    let standardization = Standardization::fit(&train);
    Ok(DatasetSplit {
        train: standardization.apply(&train),
        val: standardization.apply(&val),
        test: standardization.apply(&test),
        standardization,
    })
}

/// Batched non-overlapping lookback windows.
#[derive(Clone, Debug)]
pub struct WindowBatch<S> {
    pub windows: Vec<Mat<S>>,
    pub origins: Vec<usize>,
    pub labels: Option<Vec<Vec<u8>>>,
    pub window_len: usize,
}

impl<S: Scalar> WindowBatch<S> {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.windows.first().map_or(0, |w| w.cols())
    }
}

/// Segment a series into `floor(T / L)` non-overlapping windows of length
/// `L`; the trailing remainder is dropped.
pub fn make_windows<S: Scalar>(series: &RawSeries<S>, window_len: usize) -> Result<WindowBatch<S>> {
    if window_len == 0 {
        return Err(Error::Windowing("window length must be positive".into()));
    }
    if series.len() < window_len {
        return Err(Error::Windowing(format!(
            "series length {} is shorter than window length {}",
            series.len(),
            window_len
        )));
    }
    let count = series.len() / window_len;
    let mut windows = Vec::with_capacity(count);
    let mut origins = Vec::with_capacity(count);
    let mut labels = series.labels.as_ref().map(|_| Vec::with_capacity(count));
    for w in 0..count {
        let start = w * window_len;
        windows.push(series.values.slice_rows(start, window_len));
        origins.push(start);
        if let (Some(out), Some(src)) = (labels.as_mut(), series.labels.as_ref()) {
            out.push(src[start..start + window_len].to_vec());
        }
    }
    Ok(WindowBatch {
        windows,
        origins,
        labels,
        window_len,
    })
}

/// Split a window into the shifted snapshot pair: `x_t` holds rows
/// `0..L-1`, `x_next` rows `1..L`.
pub fn shift_pair<S: Scalar>(window: &Mat<S>) -> Result<(Mat<S>, Mat<S>)> {
    let l = window.rows();
    if l < 2 {
        return Err(Error::Windowing(format!(
            "window length {l} too short to form a snapshot pair"
        )));
    }
    Ok((window.slice_rows(0, l - 1), window.slice_rows(1, l - 1)))
}

// ---------------------------------------------------------------------------
// CSV

/// Comma-separated, UTF-8, '.' decimal. An optional header row is
/// auto-detected; a column named `label` or `anomaly` (case-insensitive)
/// becomes the label vector.
fn load_csv<S: Scalar>(path: &Path, dims: usize, impute: bool) -> Result<RawSeries<S>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::DataQuality(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty()).peekable();

    let mut header: Option<Vec<String>> = None;
    if let Some(first) = lines.peek() {
        let is_header = first
            .split(',')
            .any(|f| f.trim().parse::<f64>().is_err() && !f.trim().is_empty());
        if is_header {
            header = Some(
                first
                    .split(',')
                    .map(|f| f.trim().to_string())
                    .collect::<Vec<_>>(),
            );
            lines.next();
        }
    }

    let label_col = header.as_ref().and_then(|h| {
        h.iter()
            .position(|name| matches!(name.to_ascii_lowercase().as_str(), "label" | "anomaly"))
    });

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<u8> = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let mut row = Vec::new();
        for (col, field) in line.split(',').enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::DataQuality(format!(
                    "unparseable value {:?} at data row {}, column {}",
                    field.trim(),
                    lineno,
                    col
                ))
            })?;
            if Some(col) == label_col {
                labels.push(if v != 0.0 { 1 } else { 0 });
            } else {
                row.push(v);
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::DataQuality(format!(
            "{} holds no data rows",
            path.display()
        )));
    }
    let actual = rows[0].len();
    if actual != dims {
        return Err(Error::DatasetDimension {
            declared: dims,
            actual,
        });
    }
    if let Some(bad) = rows.iter().position(|r| r.len() != actual) {
        return Err(Error::DataQuality(format!("ragged csv row at index {bad}")));
    }

    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let values = sanitize::<S>(flat, actual, impute)?;
    let mut series = RawSeries::new(values, label_col.map(|_| labels))?;
    series.channel_names = header.map(|h| {
        h.into_iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != label_col)
            .map(|(_, n)| n)
            .collect()
    });
    Ok(series)
}

/// Validate finiteness, imputing with the per-channel finite mean when
/// allowed.
fn sanitize<S: Scalar>(mut flat: Vec<f64>, cols: usize, impute: bool) -> Result<Mat<S>> {
    let has_bad = flat.iter().any(|v| !v.is_finite());
    if has_bad {
        if !impute {
            return Err(Error::DataQuality(
                "non-finite values present and imputation is disabled".into(),
            ));
        }
        let rows = flat.len() / cols;
        for c in 0..cols {
            let mut sum = 0.0;
            let mut count = 0usize;
            for r in 0..rows {
                let v = flat[r * cols + c];
                if v.is_finite() {
                    sum += v;
                    count += 1;
                }
            }
            let mean = if count > 0 { sum / count as f64 } else { 0.0 };
            for r in 0..rows {
                let v = &mut flat[r * cols + c];
                if !v.is_finite() {
                    *v = mean;
                }
            }
        }
    }
    let rows = flat.len() / cols;
    Ok(Mat::from_vec(
        rows,
        cols,
        flat.into_iter().map(S::of).collect(),
    ))
}

// ---------------------------------------------------------------------------
// NPY

struct NpyArray {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn load_npy_series<S: Scalar>(
    path: &Path,
    labels: Option<Vec<u8>>,
    dims: usize,
    impute: bool,
) -> Result<RawSeries<S>> {
    let arr = read_npy(path)?;
    let (rows, cols) = match arr.shape.as_slice() {
        [r] => (*r, 1),
        [r, c] => (*r, *c),
        other => {
            return Err(Error::DataQuality(format!(
                "{}: expected 1-D or 2-D array, got shape {:?}",
                path.display(),
                other
            )))
        }
    };
    if cols != dims {
        return Err(Error::DatasetDimension {
            declared: dims,
            actual: cols,
        });
    }
    let values = sanitize::<S>(arr.data, cols, impute)?;
    debug_assert_eq!(values.rows(), rows);
    RawSeries::new(values, labels)
}

fn read_npy_labels(path: &Path) -> Result<Vec<u8>> {
    let arr = read_npy(path)?;
    Ok(arr
        .data
        .into_iter()
        .map(|v| if v != 0.0 { 1 } else { 0 })
        .collect())
}

/// Minimal NPY v1/v2 reader: little-endian numeric dtypes, C order.
fn read_npy(path: &Path) -> Result<NpyArray> {
    let bytes =
        fs::read(path).map_err(|e| Error::DataQuality(format!("{}: {e}", path.display())))?;
    let bad = |msg: &str| Error::DataQuality(format!("{}: {msg}", path.display()));
    if bytes.len() < 10 || &bytes[..6] != b"\x93NUMPY" {
        return Err(bad("not an npy file"));
    }
    let major = bytes[6];
    let (header_len, header_start) = match major {
        1 => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        2 | 3 => (
            u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize,
            12,
        ),
        _ => return Err(bad("unsupported npy version")),
    };
    let header_end = header_start + header_len;
    if bytes.len() < header_end {
        return Err(bad("truncated header"));
    }
    let header = std::str::from_utf8(&bytes[header_start..header_end])
        .map_err(|_| bad("header is not utf-8"))?;

    let descr = dict_value(header, "descr").ok_or_else(|| bad("missing descr"))?;
    let descr = descr.trim_matches(|c| c == '\'' || c == '"').to_string();
    let fortran =
        dict_value(header, "fortran_order").ok_or_else(|| bad("missing fortran_order"))?;
    if fortran.trim() != "False" {
        return Err(bad("fortran-order arrays are not supported"));
    }
    let shape_str = dict_value(header, "shape").ok_or_else(|| bad("missing shape"))?;
    let shape: Vec<usize> = shape_str
        .trim_matches(|c| c == '(' || c == ')')
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse::<usize>().map_err(|_| bad("bad shape")))
        .collect::<Result<_>>()?;

    let count: usize = shape.iter().product::<usize>().max(1);
    let payload = &bytes[header_end..];
    let width = match descr.as_str() {
        "<f4" => 4,
        "<f8" => 8,
        "<i4" => 4,
        "<i8" => 8,
        "|b1" | "|u1" | "|i1" => 1,
        other => return Err(bad(&format!("unsupported dtype {other}"))),
    };
    if payload.len() < count * width {
        return Err(bad("payload shorter than shape requires"));
    }
    let mut data = Vec::with_capacity(count);
    for i in 0..count {
        let chunk = &payload[i * width..(i + 1) * width];
        let v = match descr.as_str() {
            "<f4" => f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as f64,
            "<f8" => f64::from_le_bytes([
                chunk[0], chunk[1], chunk[2], chunk[3], chunk[4], chunk[5], chunk[6], chunk[7],
            ]),
            "<i4" => i32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as f64,
            "<i8" => i64::from_le_bytes([
                chunk[0], chunk[1], chunk[2], chunk[3], chunk[4], chunk[5], chunk[6], chunk[7],
            ]) as f64,
            "|b1" | "|u1" => chunk[0] as f64,
            "|i1" => chunk[0] as i8 as f64,
            _ => unreachable!(),
        };
        data.push(v);
    }
    Ok(NpyArray { shape, data })
}

/// Pull `'key': value` out of the numpy header dict without a full parser.
fn dict_value<'a>(header: &'a str, key: &str) -> Option<&'a str> {
    let pat = format!("'{key}':");
    let start = header.find(&pat)? + pat.len();
    let rest = header[start..].trim_start();
    if rest.starts_with('(') {
        let end = rest.find(')')?;
        Some(&rest[..=end])
    } else {
        let end = rest.find(',').unwrap_or(rest.len());
        Some(rest[..end].trim())
    }
}

#[cfg(test)]
pub(crate) fn write_npy_f32(path: &Path, rows: usize, cols: usize, data: &[f32]) {
    let shape = if cols == 1 {
        format!("({rows},)")
    } else {
        format!("({rows}, {cols})")
    };
    let mut header = format!("{{'descr': '<f4', 'fortran_order': False, 'shape': {shape}, }}");
    let unpadded = 10 + header.len() + 1;
    let pad = (64 - unpadded % 64) % 64;
    header.push_str(&" ".repeat(pad));
    header.push('\n');
    let mut bytes = Vec::new();
    bytes.extend_from_slice(b"\x93NUMPY\x01\x00");
    bytes.extend_from_slice(&(header.len() as u16).to_le_bytes());
    bytes.extend_from_slice(header.as_bytes());
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).unwrap();
}
