use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::LinearOperator;

/// One sparse feature row. Indices are 1-based, as in LIBSVM files.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRow {
    idx: Vec<u32>,
    val: Vec<f64>,
}

impl SparseRow {
    pub fn new(idx: Vec<u32>, val: Vec<f64>) -> Result<Self> {
        if idx.len() != val.len() {
            return Err(Error::DimensionMismatch {
                context: "sparse row values",
                expected: idx.len(),
                got: val.len(),
            });
        }
        if idx.first() == Some(&0) {
            return Err(Error::InvalidArgument("feature indices are 1-based".into()));
        }
        if idx.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("feature indices must be strictly increasing".into()));
        }
        Ok(SparseRow { idx, val })
    }

    pub fn indices(&self) -> &[u32] {
        &self.idx
    }

    pub fn values(&self) -> &[f64] {
        &self.val
    }

    pub fn max_index(&self) -> usize {
        self.idx.last().map_or(0, |&i| i as usize)
    }

    pub fn dot(&self, w: &[f64]) -> f64 {
        self.idx.iter().zip(&self.val).map(|(&i, v)| v * w[i as usize - 1]).sum()
    }

    pub fn axpy_into(&self, alpha: f64, out: &mut [f64]) {
        for (&i, v) in self.idx.iter().zip(&self.val) {
            out[i as usize - 1] += alpha * v;
        }
    }

    pub fn squared_norm(&self) -> f64 {
        self.val.iter().map(|v| v * v).sum()
    }
}

/// Labelled sparse rows held by one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct DataShard {
    rows: Vec<SparseRow>,
    labels: Vec<f64>,
    dim: usize,
}

impl DataShard {
    pub fn new(rows: Vec<SparseRow>, labels: Vec<f64>, dim: usize) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                context: "shard labels",
                expected: rows.len(),
                got: labels.len(),
            });
        }
        if let Some(r) = rows.iter().find(|r| r.max_index() > dim) {
            return Err(Error::InvalidArgument(format!(
                "row uses feature {} beyond declared dimension {dim}",
                r.max_index()
            )));
        }
        Ok(DataShard { rows, labels, dim })
    }

    pub fn rows(&self) -> &[SparseRow] {
        &self.rows
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Same rows viewed in a wider feature space (for padding shards to a
    /// common dimension).
    pub fn with_dim(mut self, dim: usize) -> Result<Self> {
        if dim < self.rows.iter().map(SparseRow::max_index).max().unwrap_or(0) {
            return Err(Error::InvalidArgument(format!("dimension {dim} is too small for the rows")));
        }
        self.dim = dim;
        Ok(self)
    }

    pub fn to_libsvm(&self) -> String {
        let mut s = String::new();
        for (row, y) in self.rows.iter().zip(&self.labels) {
            let _ = write!(s, "{}", if *y > 0.0 { "+1".to_string() } else { format!("{y}") });
            for (i, v) in row.idx.iter().zip(&row.val) {
                let _ = write!(s, " {i}:{v:?}");
            }
            s.push('\n');
        }
        s
    }
}

/// The data matrix with rows `a_j`.
impl LinearOperator for DataShard {
    fn rows(&self) -> usize {
        self.rows.len()
    }

    fn cols(&self) -> usize {
        self.dim
    }

    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, r) in out.iter_mut().zip(&self.rows) {
            *o = r.dot(x);
        }
    }

    fn apply_adjoint_into(&self, z: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (zj, r) in z.iter().zip(&self.rows) {
            r.axpy_into(*zj, out);
        }
    }

    fn norm(&self) -> f64 {
        crate::linalg::operator_norm(self, 1e-10).unwrap_or_else(|e| match e {
            Error::NormNotConverged { estimate, .. } => estimate,
            _ => f64::NAN,
        })
    }
}

/// Parses LIBSVM text (`label idx:val idx:val ...`). A label set contained
/// in `{0, 1}` is remapped to `{-1, +1}`.
pub fn parse_libsvm(text: &str, origin: &Path) -> Result<DataShard> {
    let err = |line: usize, message: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        message,
    };
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut dim = 0usize;
    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let label_tok = tokens.next().expect("non-empty line has a token");
        let label: f64 = label_tok
            .parse()
            .map_err(|_| err(line_no, format!("bad label `{label_tok}`")))?;
        if !label.is_finite() {
            return Err(err(line_no, format!("non-finite label `{label_tok}`")));
        }
        let mut idx = Vec::new();
        let mut val = Vec::new();
        for tok in tokens {
            let (i, v) = tok
                .split_once(':')
                .ok_or_else(|| err(line_no, format!("expected `index:value`, got `{tok}`")))?;
            let i: u32 = i.parse().map_err(|_| err(line_no, format!("bad feature index `{i}`")))?;
            if i == 0 {
                return Err(err(line_no, "feature indices are 1-based".into()));
            }
            if idx.last().is_some_and(|&last| last >= i) {
                return Err(err(line_no, format!("feature index {i} is not increasing")));
            }
            let v: f64 = v.parse().map_err(|_| err(line_no, format!("bad feature value `{v}`")))?;
            if !v.is_finite() {
                return Err(err(line_no, format!("non-finite feature value `{v}`")));
            }
            idx.push(i);
            val.push(v);
        }
        dim = dim.max(idx.last().copied().unwrap_or(0) as usize);
        rows.push(SparseRow { idx, val });
        labels.push(label);
    }
    if rows.is_empty() {
        return Err(err(1, "no data rows".into()));
    }
    if labels.iter().all(|&y| y == 0.0 || y == 1.0) && labels.contains(&0.0) {
        log::info!("{}: remapping labels {{0, 1}} to {{-1, +1}}", origin.display());
        for y in &mut labels {
            if *y == 0.0 {
                *y = -1.0;
            }
        }
    }
    DataShard::new(rows, labels, dim)
}

pub fn load_libsvm(path: &Path) -> Result<DataShard> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_libsvm(&text, path)
}

pub fn write_libsvm(shard: &DataShard, path: &Path) -> Result<()> {
    std::fs::write(path, shard.to_libsvm()).map_err(|e| Error::io(path, e))
}

/// Records how a dataset was partitioned over agents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardManifest {
    pub seed: u64,
    pub rows_per_agent: Vec<usize>,
}

/// Shuffles rows with `seed` and deals them into `m` contiguous parts whose
/// sizes differ by at most one (larger parts first).
pub fn split_shards(shard: &DataShard, m: usize, seed: u64) -> Result<(Vec<DataShard>, ShardManifest)> {
    if m == 0 {
        return Err(Error::InvalidArgument("cannot split into zero shards".into()));
    }
    let n = shard.len();
    if m > n {
        return Err(Error::InvalidArgument(format!("cannot split {n} rows over {m} agents")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let base = n / m;
    let extra = n % m;
    let mut shards = Vec::with_capacity(m);
    let mut sizes = Vec::with_capacity(m);
    let mut start = 0;
    for a in 0..m {
        let size = base + usize::from(a < extra);
        let picked = &order[start..start + size];
        start += size;
        shards.push(DataShard {
            rows: picked.iter().map(|&j| shard.rows[j].clone()).collect(),
            labels: picked.iter().map(|&j| shard.labels[j]).collect(),
            dim: shard.dim,
        });
        sizes.push(size);
    }
    Ok((
        shards,
        ShardManifest {
            seed,
            rows_per_agent: sizes,
        },
    ))
}
