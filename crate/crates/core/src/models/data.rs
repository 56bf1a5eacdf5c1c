use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Observations, one row each, with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub rows: Matrix,
    pub columns: Vec<String>,
    pub label: String,
    /// Data-generating parameter values, in the model's unconstrained coordinates, when known.
    pub truth: Option<Vec<f64>>,
}

impl Dataset {
    pub fn new(rows: Matrix, columns: Vec<String>, label: impl Into<String>) -> Result<Self> {
        if columns.len() != rows.cols() {
            return Err(Error::shape(format!("{} column names for {} columns", columns.len(), rows.cols())));
        }
        if rows.rows() == 0 {
            return Err(Error::Validation("dataset is empty".into()));
        }
        if !rows.is_finite() {
            return Err(Error::Validation("dataset contains non-finite values".into()));
        }
        Ok(Dataset { rows, columns, label: label.into(), truth: None })
    }

    pub fn len(&self) -> usize {
        self.rows.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.rows() == 0
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        self.columns.iter().position(|c| c == name).map(|j| self.rows.column(j))
    }

    /// Header row, then values in `%.16e` (17 significant digits).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.columns)?;
        for row in self.rows.iter_rows() {
            w.write_record(row.iter().map(|v| format!("{v:.16e}")))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R, label: impl Into<String>) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let columns: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let mut data = Vec::new();
        let mut n = 0;
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            for field in rec.iter() {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::Validation(format!("row {}: `{field}` is not a number", i + 1)))?;
                data.push(v);
            }
            n += 1;
        }
        Dataset::new(Matrix::from_vec(n, columns.len(), data)?, columns, label)
    }
}

/// A dataset split into `K` disjoint shards.
#[derive(Debug, Clone, PartialEq)]
pub struct ShardedData {
    pub shards: Vec<Dataset>,
    pub partition_seed: u64,
}

impl ShardedData {
    pub fn k(&self) -> usize {
        self.shards.len()
    }
}

/// Random permutation followed by a round-robin split, so shard sizes differ by at most one.
pub fn shard<R: Rng + ?Sized>(data: &Dataset, k: usize, partition_seed: u64, rng: &mut R) -> Result<ShardedData> {
    let n = data.len();
    if k == 0 || k > n {
        return Err(Error::Partition { n, k });
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let shards = (0..k)
        .map(|s| {
            let idx: Vec<usize> = perm.iter().skip(s).step_by(k).copied().collect();
            let mut part = Dataset::new(data.rows.select_rows(&idx), data.columns.clone(), format!("{}[{s}]", data.label))?;
            part.truth.clone_from(&data.truth);
            Ok(part)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ShardedData { shards, partition_seed })
}
