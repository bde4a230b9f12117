//! Small dense row-major matrices with a textual persistence format.
//!
//! Everything in the workbench is desk scale (hundreds by tens), so a plain
//! `Vec<f64>` with explicit loops is simpler and easier to audit than an
//! external linear-algebra stack. Files are written as a `rows cols` header
//! line followed by one whitespace-separated row per line; `f64` display
//! round-trips exactly.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(Error::contract("ragged rows in matrix literal"));
        }
        Ok(Matrix {
            rows: nrows,
            cols: ncols,
            data: rows.into_iter().flatten().collect(),
        })
    }

    /// Entries drawn from N(0, sigma^2).
    pub fn seeded_normal(rows: usize, cols: usize, sigma: f64, rng: &mut impl Rng) -> Self {
        Matrix::from_fn(rows, cols, |_, _| {
            let z: f64 = rng.sample(StandardNormal);
            z * sigma
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.data.iter().copied()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `x . M` for a row vector `x` of length `rows`; output length `cols`.
    pub fn vec_mul(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.rows {
            return Err(Error::contract(format!(
                "vec_mul: vector length {} does not match {} rows",
                x.len(),
                self.rows
            )));
        }
        let mut out = vec![0.0; self.cols];
        for (r, &xv) in x.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let row = self.row(r);
            for (o, &m) in out.iter_mut().zip(row) {
                *o += xv * m;
            }
        }
        Ok(out)
    }

    /// `M . y` for a column vector `y` of length `cols`; output length `rows`.
    pub fn mul_vec(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.cols {
            return Err(Error::contract(format!(
                "mul_vec: vector length {} does not match {} cols",
                y.len(),
                self.cols
            )));
        }
        let mut out = vec![0.0; self.rows];
        for r in 0..self.rows {
            let row = self.row(r);
            out[r] = row.iter().zip(y).map(|(a, b)| a * b).sum();
        }
        Ok(out)
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::contract(format!(
                "matmul: {}x{} . {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(r, k);
                if a == 0.0 {
                    continue;
                }
                for c in 0..other.cols {
                    let v = out.get(r, c) + a * other.get(k, c);
                    out.set(r, c, v);
                }
            }
        }
        Ok(out)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} {}", self.rows, self.cols);
        for r in 0..self.rows {
            let row = self
                .row(r)
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(" ");
            let _ = writeln!(s, "{row}");
        }
        s
    }

    pub fn from_text(text: &str, origin: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| Error::Parse {
            path: origin.to_string(),
            line: 1,
            message: "empty matrix file".into(),
        })?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                path: origin.to_string(),
                line: 1,
                message: format!("bad dimensions header: {e}"),
            })?;
        if dims.len() != 2 {
            return Err(Error::Parse {
                path: origin.to_string(),
                line: 1,
                message: "dimensions header must be `rows cols`".into(),
            });
        }
        let (rows, cols) = (dims[0], dims[1]);
        let mut data = Vec::with_capacity(rows * cols);
        for (idx, line) in lines.take(rows) {
            for tok in line.split_whitespace() {
                let v: f64 = tok.parse().map_err(|e| Error::Parse {
                    path: origin.to_string(),
                    line: idx + 1,
                    message: format!("bad decimal `{tok}`: {e}"),
                })?;
                data.push(v);
            }
        }
        if data.len() != rows * cols {
            return Err(Error::Parse {
                path: origin.to_string(),
                line: 1,
                message: format!(
                    "expected {} entries for {}x{}, found {}",
                    rows * cols,
                    rows,
                    cols,
                    data.len()
                ),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Matrix::from_text(&text, &path.display().to_string())
    }
}
