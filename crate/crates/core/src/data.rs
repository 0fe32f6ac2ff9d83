//! Response plus covariates, continuous columns first.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{QpmaError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Continuous,
    Discrete,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub y: Vec<f64>,
    /// Row-major `n × (p + q)`.
    pub x: Vec<f64>,
    pub names: Vec<String>,
    pub p: usize,
    pub q: usize,
}

impl Dataset {
    /// `x` rows must list the `p` continuous covariates before the `q`
    /// discrete ones.
    pub fn new(y: Vec<f64>, x: Vec<f64>, p: usize, q: usize) -> Result<Self> {
        let names = (1..=p + q).map(|j| format!("x{j}")).collect();
        Self::with_names(y, x, names, p, q)
    }

    pub fn with_names(y: Vec<f64>, x: Vec<f64>, names: Vec<String>, p: usize, q: usize) -> Result<Self> {
        let n = y.len();
        let width = p + q;
        if x.len() != n * width {
            return Err(QpmaError::DimensionMismatch { expected: n * width, got: x.len() });
        }
        if names.len() != width {
            return Err(QpmaError::DimensionMismatch { expected: width, got: names.len() });
        }
        if y.iter().chain(&x).any(|v| !v.is_finite()) {
            return Err(QpmaError::Data("non-finite value in data".into()));
        }
        Ok(Dataset { y, x, names, p, q })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn width(&self) -> usize {
        self.p + self.q
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.width();
        &self.x[i * w..(i + 1) * w]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n()).map(|i| self.x[i * self.width() + j]).collect()
    }

    pub fn kind(&self, j: usize) -> ColumnKind {
        if j < self.p {
            ColumnKind::Continuous
        } else {
            ColumnKind::Discrete
        }
    }

    /// Extra checks needed before fitting: `n ≥ 2` and non-constant
    /// continuous columns.
    pub fn validate_for_fit(&self) -> Result<()> {
        if self.n() < 2 {
            return Err(QpmaError::Data(format!("need at least 2 observations, got {}", self.n())));
        }
        if self.p == 0 {
            return Err(QpmaError::Data("no continuous covariates (p = 0)".into()));
        }
        for j in 0..self.p {
            let col = self.column(j);
            if col.iter().all(|&v| v == col[0]) {
                return Err(QpmaError::Data(format!(
                    "continuous column '{}' is constant",
                    self.names[j]
                )));
            }
        }
        Ok(())
    }

    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let w = self.width();
        let mut x = Vec::with_capacity(rows.len() * w);
        for &i in rows {
            x.extend_from_slice(self.row(i));
        }
        Dataset {
            y: rows.iter().map(|&i| self.y[i]).collect(),
            x,
            names: self.names.clone(),
            p: self.p,
            q: self.q,
        }
    }
}

/// Options controlling how a CSV file maps onto a [`Dataset`].
#[derive(Debug, Clone, Default)]
pub struct CsvOptions {
    pub response: String,
    /// Columns forced to be discrete.
    pub discrete: Vec<String>,
    /// Columns forced to be continuous.
    pub continuous: Vec<String>,
}

/// A raw numeric table with a header.
#[derive(Debug, Clone)]
pub struct Table {
    pub headers: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_path(path)
            .map_err(|e| QpmaError::Data(format!("cannot read {}: {e}", path.display())))?;
        let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        if headers.is_empty() {
            return Err(QpmaError::Data(format!("{}: empty header", path.display())));
        }
        let mut columns = vec![Vec::new(); headers.len()];
        for (line, record) in reader.records().enumerate() {
            let record = record?;
            if record.len() != headers.len() {
                return Err(QpmaError::Data(format!(
                    "{}: row {} has {} fields, header has {}",
                    path.display(),
                    line + 2,
                    record.len(),
                    headers.len()
                )));
            }
            for (j, field) in record.iter().enumerate() {
                let v: f64 = field.parse().map_err(|_| {
                    QpmaError::Data(format!(
                        "{}: row {}, column '{}': not a number: '{field}'",
                        path.display(),
                        line + 2,
                        headers[j]
                    ))
                })?;
                columns[j].push(v);
            }
        }
        Ok(Table { headers, columns })
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }
}

/// Discrete when the column holds at most 10 distinct integer values.
pub fn infer_kind(values: &[f64]) -> ColumnKind {
    if values.iter().any(|v| v.fract() != 0.0) {
        return ColumnKind::Continuous;
    }
    let mut distinct = BTreeSet::new();
    for &v in values {
        distinct.insert(v as i64);
        if distinct.len() > 10 {
            return ColumnKind::Continuous;
        }
    }
    ColumnKind::Discrete
}

/// Builds a dataset from a table: response column out, continuous covariates
/// first (in header order), discrete after.
pub fn dataset_from_table(table: &Table, opts: &CsvOptions) -> Result<Dataset> {
    let resp = table
        .index_of(&opts.response)
        .ok_or_else(|| QpmaError::Data(format!("missing response column '{}'", opts.response)))?;
    for name in opts.discrete.iter().chain(&opts.continuous) {
        if table.index_of(name).is_none() {
            return Err(QpmaError::Config(format!("unknown column '{name}' in kind override")));
        }
    }
    let mut cont = Vec::new();
    let mut disc = Vec::new();
    for (j, name) in table.headers.iter().enumerate() {
        if j == resp {
            continue;
        }
        let kind = if opts.discrete.contains(name) {
            ColumnKind::Discrete
        } else if opts.continuous.contains(name) {
            ColumnKind::Continuous
        } else {
            infer_kind(&table.columns[j])
        };
        match kind {
            ColumnKind::Continuous => cont.push(j),
            ColumnKind::Discrete => disc.push(j),
        }
    }
    let order: Vec<usize> = cont.iter().chain(&disc).copied().collect();
    let n = table.n_rows();
    let mut x = Vec::with_capacity(n * order.len());
    for i in 0..n {
        for &j in &order {
            x.push(table.columns[j][i]);
        }
    }
    let names = order.iter().map(|&j| table.headers[j].clone()).collect();
    Dataset::with_names(table.columns[resp].clone(), x, names, cont.len(), disc.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_inference() {
        assert_eq!(infer_kind(&[0.0, 1.0, 2.0, 1.0]), ColumnKind::Discrete);
        assert_eq!(infer_kind(&[0.5, 1.0]), ColumnKind::Continuous);
        let many: Vec<f64> = (0..11).map(f64::from).collect();
        assert_eq!(infer_kind(&many), ColumnKind::Continuous);
    }

    #[test]
    fn table_to_dataset_orders_continuous_first() {
        let table = Table {
            headers: vec!["d".into(), "y".into(), "c".into()],
            columns: vec![vec![0.0, 1.0, 1.0], vec![1.0, 2.0, 3.0], vec![0.1, 0.7, 0.3]],
        };
        let opts = CsvOptions { response: "y".into(), ..Default::default() };
        let ds = dataset_from_table(&table, &opts).unwrap();
        assert_eq!(ds.names, vec!["c", "d"]);
        assert_eq!((ds.p, ds.q), (1, 1));
        assert_eq!(ds.row(1), &[0.7, 1.0]);

        let forced = CsvOptions { response: "y".into(), continuous: vec!["d".into()], ..Default::default() };
        let ds = dataset_from_table(&table, &forced).unwrap();
        assert_eq!((ds.p, ds.q), (2, 0));

        let missing = CsvOptions { response: "resp".into(), ..Default::default() };
        let err = dataset_from_table(&table, &missing).unwrap_err().to_string();
        assert!(err.contains("resp"));
    }

    #[test]
    fn validation() {
        let ds = Dataset::new(vec![1.0, 2.0], vec![3.0, 3.0], 1, 0).unwrap();
        assert!(ds.validate_for_fit().is_err());
        assert!(Dataset::new(vec![1.0], vec![1.0, 2.0], 1, 0).is_err());
        let ds = Dataset::new(vec![1.0, 2.0], vec![0.0, 1.0], 0, 1).unwrap();
        assert!(ds.validate_for_fit().is_err());
    }
}
