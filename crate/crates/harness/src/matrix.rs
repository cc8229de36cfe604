//! Labelled score grids and their CSV form.
//!
//! The first row holds column labels after an empty corner cell; every other
//! row starts with its label. Empty cells are missing values.

use std::path::Path;

use crate::error::{HarnessError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledMatrix {
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
}

impl LabeledMatrix {
    pub fn new(rows: Vec<String>, cols: Vec<String>, values: Vec<Vec<Option<f64>>>) -> Result<Self> {
        if values.len() != rows.len() || values.iter().any(|r| r.len() != cols.len()) {
            return Err(HarnessError::data(
                "matrix",
                "row or column count does not match its labels",
            ));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn dense(rows: Vec<String>, cols: Vec<String>, values: &[Vec<f64>]) -> Result<Self> {
        Self::new(
            rows,
            cols,
            values.iter().map(|r| r.iter().map(|v| Some(*v)).collect()).collect(),
        )
    }

    pub fn present(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().flatten().filter_map(|v| *v)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let header: Vec<&str> = std::iter::once("")
            .chain(self.cols.iter().map(String::as_str))
            .collect();
        w.write_record(&header).expect("in-memory write");
        for (label, row) in self.rows.iter().zip(&self.values) {
            let cells: Vec<String> = std::iter::once(label.clone())
                .chain(row.iter().map(|v| v.map_or_else(String::new, |x| x.to_string())))
                .collect();
            w.write_record(&cells).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| HarnessError::io(path, e))
    }

    pub fn from_csv(text: &str, origin: &Path) -> Result<Self> {
        let bad = |m: String| HarnessError::data(origin, m);
        let mut r = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(text.as_bytes());
        let mut records = r.records();
        let header = records
            .next()
            .ok_or_else(|| bad("empty matrix file".into()))?
            .map_err(|e| bad(e.to_string()))?;
        let cols: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        if cols.is_empty() {
            return Err(bad("no columns".into()));
        }
        let (mut rows, mut values) = (Vec::new(), Vec::new());
        for (n, rec) in records.enumerate() {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            if rec.len() != cols.len() + 1 {
                return Err(bad(format!(
                    "row {} has {} cells, expected {}",
                    n + 1,
                    rec.len() - 1,
                    cols.len()
                )));
            }
            rows.push(rec[0].to_string());
            let row = rec
                .iter()
                .skip(1)
                .map(|c| match c.trim() {
                    "" => Ok(None),
                    v => v
                        .parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .map(Some)
                        .ok_or_else(|| bad(format!("row {}: `{v}` is not a number", n + 1))),
                })
                .collect::<Result<Vec<_>>>()?;
            values.push(row);
        }
        if rows.is_empty() {
            return Err(bad("no rows".into()));
        }
        Self::new(rows, cols, values)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_csv(&text, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_with_gaps() {
        let m = LabeledMatrix::new(
            vec!["a".into(), "b,c".into()],
            vec!["x".into(), "y".into()],
            vec![vec![Some(0.1), None], vec![Some(-2.5e-7), Some(1.0)]],
        )
        .unwrap();
        let back = LabeledMatrix::from_csv(&m.to_csv(), Path::new("m.csv")).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn ragged_rows_are_rejected() {
        let e = LabeledMatrix::from_csv(",x,y\na,1,2\nb,3\n", Path::new("m.csv")).unwrap_err();
        assert!(e.to_string().contains("row 2"), "{e}");
        assert!(LabeledMatrix::from_csv(",x\na,zz\n", Path::new("m.csv")).is_err());
    }
}
