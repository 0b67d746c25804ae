//! libsvm text parsing, serialization, and deterministic splits.
//!
//! Each non-empty line is `label idx:val idx:val ...` with 1-based feature
//! indices; anything after `#` is ignored. Labels `+1`/`1` map to `+1`, labels
//! `-1`/`0` map to `-1`.

use std::fmt::Write as _;
use std::io::BufRead;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;
use crate::sparse::{SparseRow, SparseVec};

/// Immutable sparse design matrix with ±1 labels, stored row-compressed.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    indptr: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<f64>,
    labels: Vec<f64>,
    dim: usize,
}

impl Dataset {
    pub fn new(rows: Vec<SparseVec>, labels: Vec<f64>, dim: usize) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if rows.len() != labels.len() {
            return Err(Error::LengthMismatch {
                expected: rows.len(),
                got: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l != 1.0 && l != -1.0) {
            return Err(Error::InvalidConfig(format!("label {bad} is not ±1")));
        }
        if dim > u32::MAX as usize {
            return Err(Error::InvalidConfig(format!(
                "dimension {dim} exceeds {}",
                u32::MAX
            )));
        }
        let nnz = rows.iter().map(SparseVec::nnz).sum();
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        indptr.push(0);
        for r in rows {
            let r = r.with_dim(dim)?;
            for (i, v) in r.iter() {
                indices.push(i as u32);
                values.push(v);
            }
            indptr.push(values.len());
        }
        Ok(Dataset {
            indptr,
            indices,
            values,
            labels,
            dim,
        })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    #[inline]
    pub fn row(&self, i: usize) -> SparseRow<'_> {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        SparseRow::new(&self.indices[a..b], &self.values[a..b], self.dim)
    }

    /// Hints the cache to load row `i`. No effect on other targets.
    #[inline]
    pub fn prefetch_row(&self, i: usize) {
        #[cfg(target_arch = "x86_64")]
        {
            use std::arch::x86_64::{_mm_prefetch, _MM_HINT_T0};
            let (a, b) = (self.indptr[i], self.indptr[i + 1]);
            if a < b {
                // SAFETY: prefetching is a hint; the pointers are in bounds
                unsafe {
                    _mm_prefetch::<_MM_HINT_T0>(self.indices[a..].as_ptr().cast());
                    _mm_prefetch::<_MM_HINT_T0>(self.values[a..].as_ptr().cast());
                    _mm_prefetch::<_MM_HINT_T0>(self.values[b - 1..].as_ptr().cast());
                }
            }
        }
        #[cfg(not(target_arch = "x86_64"))]
        let _ = i;
    }

    pub fn rows(&self) -> impl Iterator<Item = SparseRow<'_>> {
        (0..self.n()).map(|i| self.row(i))
    }

    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn max_row_norm(&self) -> f64 {
        self.rows().map(|r| r.norm()).fold(0.0, f64::max)
    }

    /// Rows at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Dataset> {
        let n = self.n();
        if let Some(&index) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::BatchIndex { index, n });
        }
        Dataset::new(
            indices.iter().map(|&i| self.row(i).to_sparse()).collect(),
            indices.iter().map(|&i| self.labels[i]).collect(),
            self.dim,
        )
    }

    /// Fraction of rows where `sign(<x, row>)` (ties predict -1) disagrees with the label.
    pub fn error_rate(&self, x: &[f64]) -> f64 {
        let wrong = crate::par::sum(self.n(), |r| {
            r.filter(|&i| {
                let pred = if self.row(i).dot(x) > 0.0 { 1.0 } else { -1.0 };
                pred != self.labels[i]
            })
            .count() as f64
        });
        wrong / self.n() as f64
    }

    /// Serializes back to libsvm text (1-based indices, shortest round-trip floats).
    pub fn to_libsvm(&self) -> String {
        let mut out = String::new();
        for (row, &label) in self.rows().zip(&self.labels) {
            out.push_str(if label > 0.0 { "+1" } else { "-1" });
            for (i, v) in row.iter() {
                let _ = write!(out, " {}:{}", i + 1, v);
            }
            out.push('\n');
        }
        out
    }
}

/// Parses libsvm text. `dim_override` fixes the feature dimension (it must
/// cover every index in the file); otherwise the dimension is the largest index.
pub fn parse_libsvm<R: BufRead>(reader: R, dim_override: Option<usize>) -> Result<Dataset> {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut max_end = 0usize;
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (label, row) = parse_line(content, lineno)?;
        max_end = max_end.max(row.support_end());
        rows.push(row);
        labels.push(label);
    }
    let dim = match dim_override {
        Some(d) if d < max_end => {
            return Err(Error::DimensionMismatch {
                index: max_end - 1,
                dim: d,
            });
        }
        Some(d) => d,
        None => max_end,
    };
    Dataset::new(rows, labels, dim)
}

pub fn parse_libsvm_str(text: &str, dim_override: Option<usize>) -> Result<Dataset> {
    parse_libsvm(text.as_bytes(), dim_override)
}

pub fn read_libsvm(path: &std::path::Path, dim_override: Option<usize>) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::Parse {
        line: 0,
        message: format!("{}: {e}", path.display()),
    })?;
    parse_libsvm(std::io::BufReader::new(file), dim_override)
}

fn parse_line(content: &str, line: usize) -> Result<(f64, SparseVec)> {
    let err = |message: String| Error::Parse { line, message };
    let mut tokens = content.split_whitespace();
    let label_tok = tokens.next().ok_or_else(|| err("missing label".into()))?;
    let raw: f64 = label_tok
        .parse()
        .map_err(|_| err(format!("label '{label_tok}' is not numeric")))?;
    let label = if raw == 1.0 {
        1.0
    } else if raw == -1.0 || raw == 0.0 {
        -1.0
    } else {
        return Err(err(format!(
            "label '{label_tok}' is not one of +1, -1, 0, 1"
        )));
    };
    let mut entries = Vec::new();
    for tok in tokens {
        let (idx, val) = tok
            .split_once(':')
            .ok_or_else(|| err(format!("malformed token '{tok}'")))?;
        let idx: usize = idx
            .parse()
            .map_err(|_| err(format!("malformed index in '{tok}'")))?;
        if idx == 0 {
            return Err(err(format!("index 0 in '{tok}' (indices are 1-based)")));
        }
        let val: f64 = val
            .parse()
            .map_err(|_| err(format!("non-numeric value in '{tok}'")))?;
        if !val.is_finite() {
            return Err(err(format!("non-finite value in '{tok}'")));
        }
        entries.push((idx - 1, val));
    }
    entries.sort_by_key(|&(i, _)| i);
    if let Some(w) = entries.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(err(format!("duplicate index {}", w[0].0 + 1)));
    }
    let dim = entries.last().map_or(0, |&(i, _)| i + 1);
    let row = SparseVec::new(dim, entries).map_err(|e| err(e.to_string()))?;
    Ok((label, row))
}

/// Shuffled index partition with `ceil(frac * n)` training indices. The
/// training size is clamped to `n - 1` so the test side is never empty.
pub fn split_indices(n: usize, frac: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::TooFewSamples { n, required: 2 });
    }
    if !(frac > 0.0 && frac < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "split fraction {frac} not in (0, 1)"
        )));
    }
    // the small offset keeps products like 0.7 * 10 from rounding up to 8
    let n_train = ((frac * n as f64 - 1e-9).ceil() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, rng::streams::SPLIT));
    let mut test = idx.split_off(n_train);
    idx.sort_unstable();
    test.sort_unstable();
    Ok((idx, test))
}

pub fn split_train_test(data: &Dataset, frac: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, test) = split_indices(data.n(), frac, seed)?;
    Ok((data.select(&train)?, data.select(&test)?))
}

/// Uniform subsample without replacement, keeping file order.
pub fn subsample(data: &Dataset, count: usize, seed: u64) -> Result<Dataset> {
    if count == 0 || count > data.n() {
        return Err(Error::InvalidConfig(format!(
            "subsample size {count} not in 1..={}",
            data.n()
        )));
    }
    let mut idx: Vec<usize> = (0..data.n()).collect();
    idx.shuffle(&mut rng::stream(seed, rng::streams::SUBSAMPLE));
    idx.truncate(count);
    idx.sort_unstable();
    data.select(&idx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_basic_line() {
        let d = parse_libsvm_str("+1 1:0.5 3:2\n", None).unwrap();
        assert_eq!(d.n(), 1);
        assert_eq!(d.label(0), 1.0);
        assert_eq!(d.row(0).to_sparse().entries(), &[(0, 0.5), (2, 2.0)]);
        assert!(d.dim() >= 3);
    }

    #[test]
    fn empty_row_and_zero_label() {
        let d = parse_libsvm_str("-1\n0 2:1\n1 1:3 # comment 9:9\n\n", None).unwrap();
        assert_eq!(d.n(), 3);
        assert!(d.row(0).is_empty());
        assert_eq!(d.labels(), &[-1.0, -1.0, 1.0]);
        assert_eq!(d.dim(), 2);
    }

    #[test]
    fn resorts_and_drops_zeros() {
        let d = parse_libsvm_str("+1 4:1 2:3 3:0\n", None).unwrap();
        assert_eq!(d.row(0).to_sparse().entries(), &[(1, 3.0), (3, 1.0)]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let cases = [
            "+1 1:1\n-1 2:x\n",
            "+1 1:1\n-1 2:1 2:3\n",
            "+1 1:1\n-1 abc\n",
            "+1 1:1\n7 1:1\n",
            "+1 1:1\n-1 0:1\n",
        ];
        for text in cases {
            match parse_libsvm_str(text, None) {
                Err(Error::Parse { line: 2, .. }) => {}
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn dim_override() {
        let d = parse_libsvm_str("+1 2:1\n", Some(10)).unwrap();
        assert_eq!(d.dim(), 10);
        assert!(parse_libsvm_str("+1 20:1\n", Some(10)).is_err());
    }

    #[test]
    fn empty_input_rejected() {
        assert!(matches!(
            parse_libsvm_str("# only\n\n", None),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn split_sizes() {
        let (a, b) = split_indices(10, 0.8, 3).unwrap();
        assert_eq!((a.len(), b.len()), (8, 2));
        let (a, b) = split_indices(10, 0.7, 3).unwrap();
        assert_eq!((a.len(), b.len()), (7, 3));
        assert!(split_indices(1, 0.5, 0).is_err());
        assert!(split_indices(5, 1.0, 0).is_err());
    }

    #[test]
    fn error_rate_counts_ties_as_negative() {
        let d = parse_libsvm_str("+1 1:1\n-1 1:-1\n+1 2:1\n", None).unwrap();
        // third row has margin 0 -> predicted -1 -> wrong
        assert!((d.error_rate(&[1.0, 0.0]) - 1.0 / 3.0).abs() < 1e-15);
    }
}
