//! Dataset ingestion, standardization, splitting and synthetic generation.
//!
//! CSV dialect: comma separated, optional single header line, `.` decimal
//! point, UTF-8, LF or CRLF line endings. Lines starting with `#` are comments
//! (synthetic files record their ground truth there).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::kernel::{sm_gram, SmParams};
use crate::linalg::cholesky_with_jitter;
use crate::rng::SplitRng;

/// Largest N accepted by the dense O(N^3) paths.
pub const DENSE_CAP: usize = 20_000;

/// Which column holds the regression target.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TargetColumn {
    Last,
    /// Zero-based column index.
    Index(usize),
    /// Header name; requires a header line.
    Name(String),
}

impl std::str::FromStr for TargetColumn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("last") || s == "-1" {
            return Ok(TargetColumn::Last);
        }
        Ok(match s.parse::<usize>() {
            Ok(i) => TargetColumn::Index(i),
            Err(_) => TargetColumn::Name(s.to_string()),
        })
    }
}

impl std::fmt::Display for TargetColumn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TargetColumn::Last => f.write_str("last"),
            TargetColumn::Index(i) => write!(f, "{i}"),
            TargetColumn::Name(n) => f.write_str(n),
        }
    }
}

/// Unstandardized numeric table split into inputs and target.
#[derive(Clone, Debug, PartialEq)]
pub struct RawTable {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub feature_names: Vec<String>,
    pub target_name: String,
    /// Rows dropped because they contained NaN or infinite values.
    pub rejected_rows: usize,
}

impl RawTable {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    fn select(&self, rows: &[usize]) -> RawTable {
        RawTable {
            x: DMatrix::from_fn(rows.len(), self.x.ncols(), |i, j| self.x[(rows[i], j)]),
            y: DVector::from_fn(rows.len(), |i, _| self.y[rows[i]]),
            feature_names: self.feature_names.clone(),
            target_name: self.target_name.clone(),
            rejected_rows: 0,
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, target: &TargetColumn, has_header: bool) -> Result<RawTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(file);
    let header: Option<Vec<String>> = if has_header {
        let h = reader
            .headers()
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        Some(h.iter().map(str::to_string).collect())
    } else {
        None
    };

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut rejected = 0;
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let row = record
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                cell.parse::<f64>().map_err(|_| Error::Parse {
                    row: r + 1,
                    col: c + 1,
                    msg: format!("{cell:?} is not a number"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if row.iter().all(|v| v.is_finite()) {
            rows.push(row);
        } else {
            rejected += 1;
        }
    }
    if rows.is_empty() {
        return Err(Error::Data(format!("{} has no usable rows", path.display())));
    }
    let width = rows[0].len();
    let names = header.unwrap_or_else(|| (0..width).map(|i| format!("c{i}")).collect());
    let target_idx = match target {
        TargetColumn::Last => width - 1,
        TargetColumn::Index(i) => *i,
        TargetColumn::Name(n) => names
            .iter()
            .position(|h| h == n)
            .ok_or_else(|| Error::Data(format!("no column named {n:?}")))?,
    };
    if target_idx >= width {
        return Err(Error::Data(format!("target column {target_idx} out of range for {width} columns")));
    }
    if width < 2 {
        return Err(Error::Data("need at least one input column besides the target".into()));
    }
    let feature_cols: Vec<usize> = (0..width).filter(|&c| c != target_idx).collect();
    let x = DMatrix::from_fn(rows.len(), feature_cols.len(), |i, j| rows[i][feature_cols[j]]);
    let y = DVector::from_fn(rows.len(), |i, _| rows[i][target_idx]);
    Ok(RawTable {
        x,
        y,
        feature_names: feature_cols.iter().map(|&c| names[c].clone()).collect(),
        target_name: names[target_idx].clone(),
        rejected_rows: rejected,
    })
}

/// Writes inputs then target as the last column, with `#` comment lines first.
/// Values use the shortest representation that parses back to the same bits.
pub fn write_csv(path: impl AsRef<Path>, table: &RawTable, comments: &[String]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    for c in comments {
        writeln!(out, "# {c}").map_err(io)?;
    }
    let mut header = table.feature_names.clone();
    header.push(table.target_name.clone());
    writeln!(out, "{}", header.join(",")).map_err(io)?;
    for i in 0..table.len() {
        let mut line = String::new();
        for j in 0..table.x.ncols() {
            line.push_str(&format!("{},", table.x[(i, j)]));
        }
        line.push_str(&format!("{}", table.y[i]));
        writeln!(out, "{line}").map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Affine standardization fitted on a training split.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    /// Indices (into the raw inputs) of the columns kept.
    pub kept_columns: Vec<usize>,
    /// Constant columns that were dropped.
    pub dropped_columns: Vec<usize>,
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    pub y_mean: f64,
    pub y_std: f64,
}

fn mean_std(v: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = v.clone().count() as f64;
    let mean = v.clone().sum::<f64>() / n;
    let var = v.map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl Standardizer {
    /// Population (1/N) statistics; constant input columns are dropped.
    pub fn fit(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::Data("cannot standardize an empty table".into()));
        }
        let mut kept = Vec::new();
        let mut dropped = Vec::new();
        let mut x_mean = Vec::new();
        let mut x_std = Vec::new();
        for j in 0..x.ncols() {
            let (m, s) = mean_std(x.column(j).iter().copied());
            if s > 0.0 && s.is_finite() {
                kept.push(j);
                x_mean.push(m);
                x_std.push(s);
            } else {
                dropped.push(j);
            }
        }
        if kept.is_empty() {
            return Err(Error::Data("every input column is constant".into()));
        }
        let (y_mean, y_std) = mean_std(y.iter().copied());
        let y_std = if y_std > 0.0 { y_std } else { 1.0 };
        Ok(Standardizer {
            kept_columns: kept,
            dropped_columns: dropped,
            x_mean,
            x_std,
            y_mean,
            y_std,
        })
    }

    pub fn apply_x(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), self.kept_columns.len(), |i, j| {
            (x[(i, self.kept_columns[j])] - self.x_mean[j]) / self.x_std[j]
        })
    }

    pub fn apply_y(&self, y: &DVector<f64>) -> DVector<f64> {
        y.map(|v| (v - self.y_mean) / self.y_std)
    }

    pub fn restore_y(&self, y: &DVector<f64>) -> DVector<f64> {
        y.map(|v| v * self.y_std + self.y_mean)
    }

    /// Converts standardized-unit kernel parameters to raw input/target units.
    pub fn restore_params(&self, params: &SmParams) -> SmParams {
        let s2 = self.y_std * self.y_std;
        SmParams {
            weights: params.weights.iter().map(|w| w * s2).collect(),
            means: DMatrix::from_fn(params.q(), params.dims(), |q, d| params.means[(q, d)] / self.x_std[d]),
            scales: DMatrix::from_fn(params.q(), params.dims(), |q, d| params.scales[(q, d)] / self.x_std[d]),
            noise_var: params.noise_var * s2,
        }
    }

    pub fn apply(&self, table: &RawTable, provenance: impl Into<String>) -> Dataset {
        Dataset {
            x: self.apply_x(&table.x),
            y: self.apply_y(&table.y),
            standardizer: self.clone(),
            provenance: provenance.into(),
            warnings: self
                .dropped_columns
                .iter()
                .map(|&c| {
                    let name = table.feature_names.get(c).map_or("?", String::as_str);
                    format!("dropped constant column {c} ({name})")
                })
                .collect(),
        }
    }
}

/// Standardized inputs and targets with the statistics that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub standardizer: Standardizer,
    pub provenance: String,
    pub warnings: Vec<String>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Standardizes a whole table with its own statistics.
pub fn standardize(table: &RawTable, provenance: impl Into<String>) -> Result<Dataset> {
    Ok(Standardizer::fit(&table.x, &table.y)?.apply(table, provenance))
}

/// Number of training rows for a split: `round_half_even(fraction * n)`.
pub fn train_size(n: usize, fraction: f64) -> usize {
    (fraction * n as f64).round_ties_even() as usize
}

/// Seeded shuffle split; standardization is fitted on the training rows only.
pub fn split(table: &RawTable, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!("train fraction {train_fraction} outside (0, 1)")));
    }
    let (train_idx, test_idx) = split_indices(table.len(), train_fraction, seed)?;
    let train = table.select(&train_idx);
    let test = table.select(&test_idx);
    let st = Standardizer::fit(&train.x, &train.y)?;
    Ok((
        st.apply(&train, format!("train split (seed {seed}, fraction {train_fraction})")),
        st.apply(&test, format!("test split (seed {seed}, fraction {train_fraction})")),
    ))
}

pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let n_train = train_size(n, train_fraction);
    if n_train == 0 || n_train >= n {
        return Err(Error::Data(format!(
            "split of {n} rows at fraction {train_fraction} leaves an empty side"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut SplitRng::new(seed));
    let test = idx.split_off(n_train);
    Ok((idx, test))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputLayout {
    /// `x_i = lo + i (hi - lo) / n`; one-dimensional only.
    Grid,
    /// Uniform on `[lo, hi)^D`.
    Uniform,
}

/// Draws `Y ~ N(0, K_SM + noise_var I)` at `n` inputs in `range`.
pub fn synth_sm(
    params: &SmParams,
    n: usize,
    range: (f64, f64),
    layout: InputLayout,
    seed: u64,
) -> Result<RawTable> {
    params.validate()?;
    if n == 0 {
        return Err(Error::Config("n must be positive".into()));
    }
    if n > DENSE_CAP {
        return Err(Error::TooLarge { n, cap: DENSE_CAP });
    }
    let d = params.dims();
    let (lo, hi) = range;
    let root = SplitRng::new(seed);
    let x = match layout {
        InputLayout::Grid => {
            if d != 1 {
                return Err(Error::Config("grid inputs are one-dimensional".into()));
            }
            DMatrix::from_fn(n, 1, |i, _| lo + i as f64 * (hi - lo) / n as f64)
        }
        InputLayout::Uniform => {
            let mut r = root.split(0);
            DMatrix::from_fn(n, d, |_, _| r.uniform(lo, hi))
        }
    };
    let mut k = sm_gram(params, &x)?;
    for i in 0..n {
        k[(i, i)] += params.noise_var;
    }
    let (chol, _) = cholesky_with_jitter(&k)?;
    let mut r = root.split(1);
    let z = DVector::from_fn(n, |_, _| r.standard_normal());
    let y = chol.l() * z;
    Ok(RawTable {
        x,
        y,
        feature_names: (0..d).map(|i| format!("x{i}")).collect(),
        target_name: "y".into(),
        rejected_rows: 0,
    })
}

/// Comment lines recording ground-truth parameters in a synthetic CSV.
pub fn provenance_comments(params: &SmParams, seed: u64) -> Vec<String> {
    let list = |v: &mut dyn Iterator<Item = f64>| v.map(|x| format!("{x}")).collect::<Vec<_>>().join(";");
    vec![
        format!("synthetic spectral-mixture data, seed={seed}"),
        format!("q={} d={}", params.q(), params.dims()),
        format!("weights={}", list(&mut params.weights.iter().copied())),
        format!("means={}", list(&mut params.means.transpose().iter().copied())),
        format!("scales={}", list(&mut params.scales.transpose().iter().copied())),
        format!("noise_var={}", params.noise_var),
    ]
}

/// Reads back the ground truth written by [`provenance_comments`].
pub fn parse_provenance(path: impl AsRef<Path>) -> Result<SmParams> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut fields = std::collections::HashMap::new();
    for line in text.lines().filter_map(|l| l.strip_prefix('#')) {
        for tok in line.split_whitespace() {
            if let Some((k, v)) = tok.split_once('=') {
                fields.insert(k.trim_end_matches(',').to_string(), v.trim_end_matches(',').to_string());
            }
        }
    }
    let get = |k: &str| fields.get(k).ok_or_else(|| Error::Data(format!("provenance lacks {k}")));
    let nums = |k: &str| -> Result<Vec<f64>> {
        get(k)?
            .split(';')
            .map(|s| s.parse::<f64>().map_err(|_| Error::Data(format!("bad {k} value {s:?}"))))
            .collect()
    };
    let q: usize = get("q")?.parse().map_err(|_| Error::Data("bad q".into()))?;
    let d: usize = get("d")?.parse().map_err(|_| Error::Data("bad d".into()))?;
    let means = nums("means")?;
    let scales = nums("scales")?;
    if means.len() != q * d || scales.len() != q * d {
        return Err(Error::Data("provenance shapes inconsistent".into()));
    }
    SmParams::new(
        nums("weights")?,
        DMatrix::from_row_slice(q, d, &means),
        DMatrix::from_row_slice(q, d, &scales),
        nums("noise_var")?.first().copied().unwrap_or(f64::NAN),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_with_header() {
        let f = write("a,b,t\n1,2,3\n4,5,6\n7,8,9\n");
        let t = load_csv(f.path(), &TargetColumn::Last, true).unwrap();
        assert_eq!(t.x.shape(), (3, 2));
        assert_eq!(t.y.as_slice(), &[3.0, 6.0, 9.0]);
        assert_eq!(t.target_name, "t");
        let t = load_csv(f.path(), &TargetColumn::Name("a".into()), true).unwrap();
        assert_eq!(t.y.as_slice(), &[1.0, 4.0, 7.0]);
    }

    #[test]
    fn crlf_and_comments() {
        let f = write("# note\r\na,t\r\n1,2\r\n3,4\r\n");
        let t = load_csv(f.path(), &TargetColumn::Index(1), true).unwrap();
        assert_eq!(t.y.as_slice(), &[2.0, 4.0]);
    }

    #[test]
    fn parse_error_names_cell() {
        let f = write("a,b,c,d,t\n1,2,3,4,5\n1,2,3,abc,5\n");
        match load_csv(f.path(), &TargetColumn::Last, true) {
            Err(Error::Parse { row, col, .. }) => assert_eq!((row, col), (2, 4)),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_rows_are_counted() {
        let f = write("1,2\nNaN,3\n4,inf\n5,6\n");
        let t = load_csv(f.path(), &TargetColumn::Last, false).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.rejected_rows, 2);
    }

    #[test]
    fn missing_and_empty() {
        assert!(matches!(
            load_csv("/nonexistent/file.csv", &TargetColumn::Last, true),
            Err(Error::Io { .. })
        ));
        let f = write("a,b\n");
        assert!(matches!(load_csv(f.path(), &TargetColumn::Last, true), Err(Error::Data(_))));
    }

    #[test]
    fn split_sizes_and_determinism() {
        let table = RawTable {
            x: DMatrix::from_fn(10, 2, |i, j| (i * 3 + j * 7 % 5) as f64),
            y: DVector::from_fn(10, |i, _| i as f64),
            feature_names: vec!["a".into(), "b".into()],
            target_name: "y".into(),
            rejected_rows: 0,
        };
        let (tr, te) = split(&table, 0.9, 3).unwrap();
        assert_eq!((tr.len(), te.len()), (9, 1));
        assert_eq!(split_indices(10, 0.9, 3).unwrap(), split_indices(10, 0.9, 3).unwrap());
        for j in 0..tr.x.ncols() {
            let (m, s) = mean_std(tr.x.column(j).iter().copied());
            assert!(m.abs() <= 1e-12);
            assert!((s - 1.0).abs() <= 1e-12);
        }
        assert!(split(&table, 0.99, 3).is_err());
        assert!(split(&table, 1.0, 3).is_err());
    }

    #[test]
    fn test_rows_do_not_leak_into_statistics() {
        let n = 20;
        let (train_idx, test_idx) = split_indices(n, 0.8, 11).unwrap();
        let mut x = DMatrix::zeros(n, 1);
        for &i in &train_idx {
            x[(i, 0)] = i as f64;
        }
        for &i in &test_idx {
            x[(i, 0)] = 1e9;
        }
        let table = RawTable {
            x,
            y: DVector::from_fn(n, |i, _| i as f64),
            feature_names: vec!["a".into()],
            target_name: "y".into(),
            rejected_rows: 0,
        };
        let (tr, _) = split(&table, 0.8, 11).unwrap();
        let expected_mean = train_idx.iter().map(|&i| i as f64).sum::<f64>() / train_idx.len() as f64;
        assert!((tr.standardizer.x_mean[0] - expected_mean).abs() < 1e-9);
        assert!(tr.standardizer.x_std[0] < 1e3);
    }

    #[test]
    fn constant_columns_dropped() {
        let table = RawTable {
            x: DMatrix::from_fn(5, 2, |i, j| if j == 0 { 1.0 } else { i as f64 }),
            y: DVector::from_fn(5, |i, _| i as f64),
            feature_names: vec!["const".into(), "b".into()],
            target_name: "y".into(),
            rejected_rows: 0,
        };
        let ds = standardize(&table, "test").unwrap();
        assert_eq!(ds.x.ncols(), 1);
        assert_eq!(ds.standardizer.dropped_columns, vec![0]);
        assert_eq!(ds.warnings.len(), 1);
    }

    #[test]
    fn csv_roundtrip_is_bit_exact() {
        let p = SmParams::one_dim(&[1.0], &[0.3], &[0.05], 0.01).unwrap();
        let table = synth_sm(&p, 50, (0.0, 10.0), InputLayout::Uniform, 4).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_csv(f.path(), &table, &provenance_comments(&p, 4)).unwrap();
        let back = load_csv(f.path(), &TargetColumn::Last, true).unwrap();
        assert_eq!(back.x, table.x);
        assert_eq!(back.y, table.y);
        assert_eq!(parse_provenance(f.path()).unwrap(), p);
    }

    #[test]
    fn synth_is_seeded() {
        let p = SmParams::one_dim(&[1.0], &[0.3], &[0.05], 0.01).unwrap();
        let a = synth_sm(&p, 30, (0.0, 1.0), InputLayout::Grid, 8).unwrap();
        let b = synth_sm(&p, 30, (0.0, 1.0), InputLayout::Grid, 8).unwrap();
        assert_eq!(a, b);
        assert!((a.x[(1, 0)] - 1.0 / 30.0).abs() < 1e-15);
        let too_big = synth_sm(&p, DENSE_CAP + 1, (0.0, 1.0), InputLayout::Grid, 8);
        assert!(matches!(too_big, Err(Error::TooLarge { .. })));
    }

    #[test]
    fn standardization_inverts() {
        let y = DVector::from_vec(vec![3.5, -1.25, 8.0, 0.1]);
        let x = DMatrix::from_column_slice(4, 1, &[1.0, 2.0, 4.0, 8.0]);
        let st = Standardizer::fit(&x, &y).unwrap();
        let back = st.restore_y(&st.apply_y(&y));
        for (a, b) in back.iter().zip(y.iter()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
}
