//! Observation matrices, CSV ingestion and standardization.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum StandardizationMode {
    #[default]
    None,
    /// Every observation (row) rescaled to mean 0 and standard deviation 1.
    RowsMeanZeroSdOne,
    /// Every variable (column) rescaled to mean 0 and standard deviation 1.
    ColumnsMeanZeroSdOne,
}

/// Statistics used by a standardization, kept so the transform can be
/// audited and replayed. Standard deviations use the `n - 1` divisor.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StandardizationRecord {
    pub mode: StandardizationMode,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl StandardizationRecord {
    /// Replays the recorded transform on a matrix of the original shape.
    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut out = x.clone();
        match self.mode {
            StandardizationMode::None => {}
            StandardizationMode::RowsMeanZeroSdOne => {
                if self.means.len() != x.nrows() {
                    return Err(Error::DimensionMismatch("record is for a different row count".into()));
                }
                for (i, mut row) in out.row_iter_mut().enumerate() {
                    row.apply(|v| *v = (*v - self.means[i]) / self.sds[i]);
                }
            }
            StandardizationMode::ColumnsMeanZeroSdOne => {
                if self.means.len() != x.ncols() {
                    return Err(Error::DimensionMismatch(
                        "record is for a different column count".into(),
                    ));
                }
                for (j, mut col) in out.column_iter_mut().enumerate() {
                    col.apply(|v| *v = (*v - self.means[j]) / self.sds[j]);
                }
            }
        }
        Ok(out)
    }
}

/// `n x p` observations with an optional response.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: Option<DVector<f64>>,
    column_names: Option<Vec<String>>,
    response_name: Option<String>,
    standardization: StandardizationRecord,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: Option<DVector<f64>>) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::DimensionMismatch("dataset has no observations or variables".into()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("observation matrix".into()));
        }
        if let Some(y) = &y {
            if y.len() != x.nrows() {
                return Err(Error::DimensionMismatch(format!(
                    "{} observations but {} responses",
                    x.nrows(),
                    y.len()
                )));
            }
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("response".into()));
            }
        }
        Ok(Self {
            x,
            y,
            column_names: None,
            response_name: None,
            standardization: StandardizationRecord::default(),
        })
    }

    /// Row-major convenience constructor.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::DimensionMismatch("ragged rows".into()));
        }
        Self::new(DMatrix::from_fn(n, p, |i, j| rows[i][j]), None)
    }

    pub fn with_names(mut self, columns: Vec<String>, response: Option<String>) -> Result<Self> {
        if columns.len() != self.p() {
            return Err(Error::DimensionMismatch(format!(
                "{} column names for {} variables",
                columns.len(),
                self.p()
            )));
        }
        self.column_names = Some(columns);
        self.response_name = response;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> Option<&DVector<f64>> {
        self.y.as_ref()
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.x.row(i).transpose()
    }

    pub fn column_names(&self) -> Option<&[String]> {
        self.column_names.as_deref()
    }

    pub fn response_name(&self) -> Option<&str> {
        self.response_name.as_deref()
    }

    pub fn standardization(&self) -> &StandardizationRecord {
        &self.standardization
    }

    /// The sample with observation `i` removed.
    pub fn without_row(&self, i: usize) -> Dataset {
        Dataset {
            x: self.x.clone().remove_row(i),
            y: self.y.as_ref().map(|y| y.clone().remove_row(i)),
            column_names: self.column_names.clone(),
            response_name: self.response_name.clone(),
            standardization: self.standardization.clone(),
        }
    }

    /// Rows reordered so that new row `k` is old row `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Dataset> {
        let n = self.n();
        let mut seen = vec![false; n];
        for &o in order {
            if o >= n || std::mem::replace(&mut seen[o], true) {
                return Err(Error::InvalidArgument("not a permutation".into()));
            }
        }
        if order.len() != n {
            return Err(Error::InvalidArgument("not a permutation".into()));
        }
        let x = DMatrix::from_fn(n, self.p(), |i, j| self.x[(order[i], j)]);
        let y = self.y.as_ref().map(|y| DVector::from_fn(n, |i, _| y[order[i]]));
        Ok(Dataset {
            x,
            y,
            ..self.clone()
        })
    }

    pub fn column_means(&self) -> DVector<f64> {
        self.x.row_mean().transpose()
    }

    /// Observations minus the column means.
    pub fn centered(&self) -> DMatrix<f64> {
        let mean = self.x.row_mean();
        let mut xc = self.x.clone();
        for mut row in xc.row_iter_mut() {
            row -= &mean;
        }
        xc
    }
}

/// Where to find the response column, if any.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ResponseColumn {
    Name(String),
    /// Zero-based column position.
    Index(usize),
}

#[derive(Debug, Clone)]
pub struct CsvOptions {
    pub delimiter: u8,
    pub has_header: bool,
    pub response: Option<ResponseColumn>,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            delimiter: b',',
            has_header: true,
            response: None,
        }
    }
}

/// Reads a rectangular numeric table. Row and column numbers in errors are
/// one-based and count data rows only.
pub fn load_csv(path: impl AsRef<Path>, options: &CsvOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(options.delimiter)
        .has_headers(options.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let format_err = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };

    let header: Option<Vec<String>> = if options.has_header {
        let h = reader.headers().map_err(|e| format_err(e.to_string()))?;
        Some(h.iter().map(str::to_owned).collect())
    } else {
        None
    };

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = header.as_ref().map(Vec::len).filter(|w| *w > 0);
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| format_err(e.to_string()))?;
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        let w = *width.get_or_insert(record.len());
        if record.len() != w {
            return Err(format_err(format!(
                "row {} has {} fields, expected {}",
                r + 1,
                record.len(),
                w
            )));
        }
        let mut row = Vec::with_capacity(w);
        for (c, cell) in record.iter().enumerate() {
            let parse_err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                row: r + 1,
                column: c + 1,
                message,
            };
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(format!("not a number: {cell:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(format!("non-finite value {cell:?}")));
            }
            row.push(v);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(format_err("no data rows".into()));
    }
    let width = rows[0].len();

    let response_idx = match &options.response {
        None => None,
        Some(ResponseColumn::Index(i)) if *i < width => Some(*i),
        Some(ResponseColumn::Index(i)) => {
            return Err(format_err(format!("response column {} out of range", i + 1)))
        }
        Some(ResponseColumn::Name(name)) => {
            let h = header
                .as_ref()
                .ok_or_else(|| format_err("response named but the file has no header".into()))?;
            Some(
                h.iter()
                    .position(|c| c == name)
                    .ok_or_else(|| format_err(format!("no column named {name:?}")))?,
            )
        }
    };
    let p = width - usize::from(response_idx.is_some());
    if p == 0 {
        return Err(format_err("no predictor columns".into()));
    }
    let keep: Vec<usize> = (0..width).filter(|c| Some(*c) != response_idx).collect();
    let n = rows.len();
    let x = DMatrix::from_fn(n, p, |i, j| rows[i][keep[j]]);
    let y = response_idx.map(|c| DVector::from_fn(n, |i, _| rows[i][c]));
    let mut data = Dataset::new(x, y)?;
    if let Some(h) = header {
        let names = keep.iter().map(|&c| h[c].clone()).collect();
        let response = response_idx.map(|c| h[c].clone());
        data = data.with_names(names, response)?;
    }
    Ok(data)
}

/// Writes the dataset with round-trip-exact decimal cells; the response, if
/// any, is the last column.
pub fn write_csv(data: &Dataset, path: impl AsRef<Path>, delimiter: u8) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let sep = char::from(delimiter);
    let io = |e| Error::io(path, e);

    let mut names: Vec<String> = match data.column_names() {
        Some(n) => n.to_vec(),
        None => (1..=data.p()).map(|j| format!("x{j}")).collect(),
    };
    if data.y().is_some() {
        names.push(data.response_name().unwrap_or("y").to_owned());
    }
    writeln!(out, "{}", names.join(&sep.to_string())).map_err(io)?;
    for i in 0..data.n() {
        let mut cells: Vec<String> = data.x().row(i).iter().map(|v| format!("{v:?}")).collect();
        if let Some(y) = data.y() {
            cells.push(format!("{:?}", y[i]));
        }
        writeln!(out, "{}", cells.join(&sep.to_string())).map_err(io)?;
    }
    out.flush().map_err(io)
}

fn mean_and_sd(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let ss: f64 = values.map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Returns a standardized copy. Units with (numerically) zero spread are
/// rejected.
pub fn standardize(data: &Dataset, mode: StandardizationMode) -> Result<(Dataset, StandardizationRecord)> {
    let x = data.x();
    let (means, sds) = match mode {
        StandardizationMode::None => (Vec::new(), Vec::new()),
        StandardizationMode::RowsMeanZeroSdOne => {
            if x.ncols() < 2 {
                return Err(Error::InvalidArgument("row standardization needs p >= 2".into()));
            }
            x.row_iter()
                .map(|r| mean_and_sd(r.iter().copied().collect::<Vec<_>>().into_iter()))
                .unzip()
        }
        StandardizationMode::ColumnsMeanZeroSdOne => {
            if x.nrows() < 2 {
                return Err(Error::InvalidArgument("column standardization needs n >= 2".into()));
            }
            x.column_iter().map(|c| mean_and_sd(c.iter().copied())).unzip()
        }
    };
    let unit = match mode {
        StandardizationMode::RowsMeanZeroSdOne => "row",
        _ => "column",
    };
    for (i, (&m, &s)) in means.iter().zip(&sds).enumerate() {
        let scale = m.abs().max(1.0);
        if !(s > 1e-12 * scale) {
            return Err(Error::ZeroVariance(format!("{unit} {}", i + 1)));
        }
    }
    let record = StandardizationRecord { mode, means, sds };
    let mut out = data.clone();
    out.x = record.apply(x)?;
    out.standardization = record.clone();
    Ok((out, record))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_file(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let path = dir.path().join(name);
        let mut f = File::create(&path).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        path
    }

    #[test]
    fn round_trip_through_csv() {
        let dir = tempfile::tempdir().unwrap();
        let data = Dataset::from_rows(&[
            vec![0.1, -2.5],
            vec![1.0 / 3.0, 4e-300],
            vec![123456789.123456789, f64::MIN_POSITIVE],
        ])
        .unwrap();
        let path = dir.path().join("d.csv");
        write_csv(&data, &path, b',').unwrap();
        let back = load_csv(&path, &CsvOptions::default()).unwrap();
        assert_eq!(back.x(), data.x());
        assert_eq!(back.column_names().unwrap(), &["x1".to_owned(), "x2".to_owned()]);
    }

    #[test]
    fn header_and_response_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(&dir, "d.csv", "a;resp;b\n1;10;2\n3;20;4\n");
        let opts = CsvOptions {
            delimiter: b';',
            has_header: true,
            response: Some(ResponseColumn::Name("resp".into())),
        };
        let d = load_csv(&path, &opts).unwrap();
        assert_eq!(d.p(), 2);
        assert_eq!(d.y().unwrap().as_slice(), &[10.0, 20.0]);
        assert_eq!(d.x()[(1, 1)], 4.0);
        assert_eq!(d.response_name(), Some("resp"));

        let out = dir.path().join("o.csv");
        write_csv(&d, &out, b';').unwrap();
        let again = load_csv(&out, &opts).unwrap();
        assert_eq!(again, d);
    }

    #[test]
    fn no_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(&dir, "d.csv", "1,2\n3,4\n5,6\n");
        let opts = CsvOptions {
            has_header: false,
            response: Some(ResponseColumn::Index(0)),
            ..CsvOptions::default()
        };
        let d = load_csv(&path, &opts).unwrap();
        assert_eq!((d.n(), d.p()), (3, 1));
        assert_eq!(d.y().unwrap().as_slice(), &[1.0, 3.0, 5.0]);
    }

    #[test]
    fn load_errors() {
        let dir = tempfile::tempdir().unwrap();
        let nan = write_file(&dir, "nan.csv", "a,b\n1,2\n3,NaN\n");
        match load_csv(&nan, &CsvOptions::default()) {
            Err(Error::Parse { row, column, .. }) => assert_eq!((row, column), (2, 2)),
            other => panic!("unexpected {other:?}"),
        }
        let word = write_file(&dir, "w.csv", "a,b\n1,x\n");
        assert!(matches!(
            load_csv(&word, &CsvOptions::default()),
            Err(Error::Parse { row: 1, column: 2, .. })
        ));
        let ragged = write_file(&dir, "r.csv", "a,b\n1,2\n3\n");
        assert!(matches!(load_csv(&ragged, &CsvOptions::default()), Err(Error::Format { .. })));
        let empty = write_file(&dir, "e.csv", "");
        assert!(load_csv(&empty, &CsvOptions::default()).is_err());
        assert!(matches!(
            load_csv(dir.path().join("missing.csv"), &CsvOptions::default()),
            Err(Error::Io { .. })
        ));
    }

    fn sample() -> Dataset {
        Dataset::from_rows(&[
            vec![1.0, 2.0, 4.0, 8.0],
            vec![-3.0, 0.5, 0.25, 7.0],
            vec![10.0, 11.0, 13.0, 12.0],
        ])
        .unwrap()
    }

    #[test]
    fn row_standardization() {
        let (d, rec) = standardize(&sample(), StandardizationMode::RowsMeanZeroSdOne).unwrap();
        for row in d.x().row_iter() {
            let (m, s) = mean_and_sd(row.iter().copied().collect::<Vec<_>>().into_iter());
            assert!(m.abs() <= 1e-12);
            assert!((s - 1.0).abs() <= 1e-12);
        }
        assert_eq!(&rec.apply(sample().x()).unwrap(), d.x());
        assert_eq!(d.standardization(), &rec);
        let (twice, _) = standardize(&d, StandardizationMode::RowsMeanZeroSdOne).unwrap();
        assert!((twice.x() - d.x()).amax() <= 1e-12);
    }

    #[test]
    fn column_standardization() {
        let (d, _) = standardize(&sample(), StandardizationMode::ColumnsMeanZeroSdOne).unwrap();
        for col in d.x().column_iter() {
            let (m, s) = mean_and_sd(col.iter().copied());
            assert!(m.abs() <= 1e-12);
            assert!((s - 1.0).abs() <= 1e-12);
        }
        let (twice, _) = standardize(&d, StandardizationMode::ColumnsMeanZeroSdOne).unwrap();
        assert!((twice.x() - d.x()).amax() <= 1e-12);
    }

    #[test]
    fn constant_unit_is_rejected() {
        let d = Dataset::from_rows(&[vec![1.0, 2.0], vec![5.0, 5.0]]).unwrap();
        assert!(matches!(
            standardize(&d, StandardizationMode::RowsMeanZeroSdOne),
            Err(Error::ZeroVariance(_))
        ));
        let d = Dataset::from_rows(&[vec![1.0, 2.0], vec![1.0, 3.0]]).unwrap();
        assert!(standardize(&d, StandardizationMode::ColumnsMeanZeroSdOne).is_err());
    }

    #[test]
    fn deletion_and_permutation() {
        let d = sample();
        let del = d.without_row(1);
        assert_eq!(del.n(), 2);
        assert_eq!(del.x()[(1, 0)], 10.0);
        let perm = d.permuted(&[2, 0, 1]).unwrap();
        assert_eq!(perm.x()[(0, 0)], 10.0);
        assert!(d.permuted(&[0, 0, 1]).is_err());
    }
}
