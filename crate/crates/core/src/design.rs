//! Unbalanced two-way layouts.
//!
//! A [`Design`] records how many observations fall in each cell of a `g × h`
//! table. Cells are stored row-major with the column index varying fastest,
//! so cell `(i, j)` (0-based) sits at flat index `i * h + j`. Observations are
//! stacked the same way, cell after cell, which fixes the row/column order of
//! every `n × n` matrix built on top of a design.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Design {
    g: usize,
    h: usize,
    cells: Vec<usize>,
    offsets: Vec<usize>,
    n: usize,
    m_min: usize,
    m_max: usize,
}

impl Design {
    /// Builds a design from a flat row-major vector of `g * h` cell counts.
    pub fn new(g: usize, h: usize, cells: Vec<usize>) -> Result<Self> {
        if g == 0 || h == 0 {
            return Err(Error::InvalidDesign(format!("empty grid {g}x{h}")));
        }
        if cells.len() != g * h {
            return Err(Error::InvalidDesign(format!(
                "expected {} cell counts for a {g}x{h} grid, got {}",
                g * h,
                cells.len()
            )));
        }
        if let Some(c) = cells.iter().position(|&m| m == 0) {
            let (i, j) = (c / h, c % h);
            return Err(Error::InvalidDesign(format!(
                "cell ({}, {}) has no observations",
                i + 1,
                j + 1
            )));
        }
        let mut offsets = Vec::with_capacity(cells.len() + 1);
        let mut acc = 0;
        for &m in &cells {
            offsets.push(acc);
            acc += m;
        }
        offsets.push(acc);
        let m_min = *cells.iter().min().unwrap();
        let m_max = *cells.iter().max().unwrap();
        Ok(Self { g, h, cells, offsets, n: acc, m_min, m_max })
    }

    /// Builds a design from nested rows, `rows[i][j] = m_ij`.
    pub fn from_rows(rows: &[Vec<usize>]) -> Result<Self> {
        let g = rows.len();
        let h = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != h) {
            return Err(Error::InvalidDesign(format!(
                "row {} has {} entries, expected {h}",
                bad + 1,
                rows[bad].len()
            )));
        }
        Self::new(g, h, rows.concat())
    }

    /// Every cell holds `m` observations.
    pub fn balanced(g: usize, h: usize, m: usize) -> Result<Self> {
        Self::new(g, h, vec![m; g * h])
    }

    /// Cell counts drawn independently from the discrete uniform distribution
    /// on `{lo, ..., hi}`.
    pub fn sample_uniform(g: usize, h: usize, lo: usize, hi: usize, seed: u64) -> Result<Self> {
        if lo == 0 {
            return Err(Error::InvalidArgument("lower cell bound must be at least 1".into()));
        }
        if lo > hi {
            return Err(Error::InvalidArgument(format!("empty cell range {lo}..={hi}")));
        }
        if g == 0 || h == 0 {
            return Err(Error::InvalidDesign(format!("empty grid {g}x{h}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cells = (0..g * h).map(|_| rng.random_range(lo..=hi)).collect();
        Self::new(g, h, cells)
    }

    /// Cell counts uniform on `{m_min, ..., floor(m_min / (1 - delta_target))}`.
    ///
    /// The realized imbalance [`Design::delta`] of the draw is usually below
    /// `delta_target`.
    pub fn sample_delta(
        g: usize,
        h: usize,
        m_min: usize,
        delta_target: f64,
        seed: u64,
    ) -> Result<Self> {
        let hi = delta_upper_bound(m_min, delta_target)?;
        Self::sample_uniform(g, h, m_min, hi, seed)
    }

    pub fn g(&self) -> usize {
        self.g
    }

    pub fn h(&self) -> usize {
        self.h
    }

    /// Number of cells, `g * h`.
    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    /// Total number of observations.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m_min(&self) -> usize {
        self.m_min
    }

    pub fn m_max(&self) -> usize {
        self.m_max
    }

    /// `(m_U - m_L) / m_U`; zero exactly when the design is balanced.
    pub fn delta(&self) -> f64 {
        (self.m_max - self.m_min) as f64 / self.m_max as f64
    }

    pub fn is_balanced(&self) -> bool {
        self.m_min == self.m_max
    }

    /// Flat row-major cell counts.
    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    /// Count for 0-based cell `(i, j)`.
    pub fn cell(&self, i: usize, j: usize) -> usize {
        self.cells[self.flat_index(i, j)]
    }

    pub fn flat_index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.g && j < self.h);
        i * self.h + j
    }

    pub fn cell_coords(&self, c: usize) -> (usize, usize) {
        (c / self.h, c % self.h)
    }

    /// First observation index of each cell, with a trailing `n`.
    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    /// Observation index range of cell `c`.
    pub fn cell_range(&self, c: usize) -> std::ops::Range<usize> {
        self.offsets[c]..self.offsets[c + 1]
    }

    /// Cell index of each observation.
    pub fn cell_of_observation(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.n);
        for (c, &m) in self.cells.iter().enumerate() {
            out.extend(std::iter::repeat_n(c, m));
        }
        out
    }

    /// Cell counts as floating point, handy for kernel scalings.
    pub fn sizes_f64(&self) -> Vec<f64> {
        self.cells.iter().map(|&m| m as f64).collect()
    }
}

/// Largest cell count reachable for a target imbalance, `floor(m_min / (1 - delta))`.
pub fn delta_upper_bound(m_min: usize, delta_target: f64) -> Result<usize> {
    if m_min == 0 {
        return Err(Error::InvalidArgument("m_L must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&delta_target) {
        return Err(Error::InvalidArgument(format!(
            "target imbalance {delta_target} must lie in [0, 1)"
        )));
    }
    // guard against 19.999999 style round-off on exact quotients
    let hi = (m_min as f64 / (1.0 - delta_target) + 1e-9).floor() as usize;
    Ok(hi.max(m_min))
}

/// Plain-text format: first line `g h`, then `g` lines of `h` counts.
impl fmt::Display for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} {}", self.g, self.h)?;
        for row in self.cells.chunks(self.h) {
            let line: Vec<String> = row.iter().map(usize::to_string).collect();
            writeln!(f, "{}", line.join(" "))?;
        }
        Ok(())
    }
}

impl FromStr for Design {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut lines = s.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines.next().ok_or_else(|| Error::Parse("empty design file".into()))?;
        let dims = parse_counts(header, 1)?;
        if dims.len() != 2 {
            return Err(Error::Parse(format!("header must be `g h`, got `{header}`")));
        }
        let (g, h) = (dims[0], dims[1]);
        let mut rows = Vec::with_capacity(g);
        for (k, line) in lines.enumerate() {
            let row = parse_counts(line, k + 2)?;
            if row.len() != h {
                return Err(Error::Parse(format!(
                    "line {}: expected {h} counts, got {}",
                    k + 2,
                    row.len()
                )));
            }
            rows.push(row);
        }
        if rows.len() != g {
            return Err(Error::Parse(format!("expected {g} rows of counts, got {}", rows.len())));
        }
        Self::new(g, h, rows.concat())
    }
}

fn parse_counts(line: &str, lineno: usize) -> Result<Vec<usize>> {
    line.split_whitespace()
        .map(|tok| {
            tok.parse::<usize>()
                .map_err(|e| Error::Parse(format!("line {lineno}: `{tok}`: {e}")))
        })
        .collect()
}
