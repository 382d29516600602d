//! Compressed algebra of cell-block matrices.
//!
//! Every covariance-type matrix in a two-way crossed design has the shape
//!
//! ```text
//!     block(a, b) = d_a · I[a = b] + K_ab · s_a · s_b · J(m_a × m_b)
//! ```
//!
//! where `a, b` range over the `gh` cells, `J` is an all-ones block and the
//! per-cell scale `s_c` is `1/m_c` (bar normalization, `J̄_m`) or `1/√m_c`
//! (tilde normalization, `J̃_m`). The `n × n` matrix is therefore fully
//! described by a length-`gh` diagonal `d` and a `gh × gh` kernel `K`, and the
//! set of such matrices is closed under sums, products, cell-constant diagonal
//! scalings and inversion. All of those run in time polynomial in `gh` only.
//!
//! Products follow the Khatri–Rao identities
//!
//! ```text
//!     [(P⊗Q) ⊛ J̃_m] [(R⊗S) ⊛ J̃_m] = [(PR)⊗(QS)] ⊛ J̃_m
//!     [(P⊗Q) ⊛ J̄_m] [(R⊗S) ⊛ J̄_m] = [(P⊗Q) M⁻¹ (R⊗S)] ⊛ J̄_m
//! ```
//!
//! so that in bar form `R(d_A, K_A)·R(d_B, K_B)` has diagonal `d_A∘d_B` and
//! kernel `D_A K_B + K_A D_B + K_A M⁻¹ K_B`.

use std::sync::Arc;

use faer::linalg::solvers::Solve;
use faer::{Accum, Mat, Par};

use crate::dense::DenseMatrix;
use crate::design::Design;
use crate::error::{Error, Result};

/// Expansion rule for kernel entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Norm {
    /// Block `(a, b)` carries `K_ab / (m_a m_b)`, the averaging `J̄_m`.
    Bar,
    /// Block `(a, b)` carries `K_ab / √(m_a m_b)`, the projector-type `J̃_m`.
    Tilde,
}

/// Which side(s) a cell-constant diagonal is applied on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
    Both,
}

#[derive(Debug, Clone)]
pub struct CellBlockMatrix {
    design: Arc<Design>,
    diag: Vec<f64>,
    kernel: DenseMatrix,
    norm: Norm,
}

fn same_design(a: &Arc<Design>, b: &Arc<Design>) -> bool {
    Arc::ptr_eq(a, b) || **a == **b
}

impl CellBlockMatrix {
    pub fn new(design: Arc<Design>, diag: Vec<f64>, kernel: DenseMatrix, norm: Norm) -> Result<Self> {
        let k = design.num_cells();
        if diag.len() != k {
            return Err(Error::DimensionMismatch(format!(
                "diagonal has {} entries for {k} cells",
                diag.len()
            )));
        }
        if kernel.rows() != k || kernel.cols() != k {
            return Err(Error::DimensionMismatch(format!(
                "kernel is {}x{} for {k} cells",
                kernel.rows(),
                kernel.cols()
            )));
        }
        Ok(Self { design, diag, kernel, norm })
    }

    pub fn zeros(design: Arc<Design>, norm: Norm) -> Self {
        let k = design.num_cells();
        Self { design, diag: vec![0.0; k], kernel: DenseMatrix::zeros(k, k), norm }
    }

    pub fn identity(design: Arc<Design>) -> Self {
        Self::zeros(design, Norm::Bar).add_identity(1.0)
    }

    /// Block-diagonal `diag(w_c I_{m_c})`. An empty `w` means all zeros.
    pub fn cell_diagonal(design: Arc<Design>, w: Vec<f64>) -> Result<Self> {
        let k = design.num_cells();
        let diag = if w.is_empty() { vec![0.0; k] } else { w };
        Self::new(design, diag, DenseMatrix::zeros(k, k), Norm::Bar)
    }

    /// Matrix whose block `(a, b)` is `S_ab · J(m_a × m_b)` with unnormalized
    /// all-ones blocks (the `J_m` of the covariance formulas), stored in bar
    /// form as `K = M S M`.
    pub fn from_unnormalized_kernel(design: Arc<Design>, s: &DenseMatrix) -> Result<Self> {
        let m = design.sizes_f64();
        let k = m.len();
        if s.rows() != k || s.cols() != k {
            return Err(Error::DimensionMismatch(format!("kernel is {}x{} for {k} cells", s.rows(), s.cols())));
        }
        let kernel = DenseMatrix::from_fn(k, k, |a, b| m[a] * s[(a, b)] * m[b]);
        Self::new(design, vec![0.0; k], kernel, Norm::Bar)
    }

    pub fn design(&self) -> &Design {
        &self.design
    }

    pub fn design_arc(&self) -> &Arc<Design> {
        &self.design
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn kernel(&self) -> &DenseMatrix {
        &self.kernel
    }

    pub fn norm(&self) -> Norm {
        self.norm
    }

    /// Per-cell scale `s_c` of the expansion rule.
    fn cell_scales(&self) -> Vec<f64> {
        let m = self.design.cells();
        match self.norm {
            Norm::Bar => m.iter().map(|&x| 1.0 / x as f64).collect(),
            Norm::Tilde => m.iter().map(|&x| 1.0 / (x as f64).sqrt()).collect(),
        }
    }

    /// Same matrix, bar-normalized kernel.
    pub fn to_bar(&self) -> Self {
        match self.norm {
            Norm::Bar => self.clone(),
            Norm::Tilde => {
                let r: Vec<f64> = self.design.cells().iter().map(|&m| (m as f64).sqrt()).collect();
                self.rescaled_kernel(&r, Norm::Bar)
            }
        }
    }

    /// Same matrix, tilde-normalized kernel.
    pub fn to_tilde(&self) -> Self {
        match self.norm {
            Norm::Tilde => self.clone(),
            Norm::Bar => {
                let r: Vec<f64> = self.design.cells().iter().map(|&m| 1.0 / (m as f64).sqrt()).collect();
                self.rescaled_kernel(&r, Norm::Tilde)
            }
        }
    }

    pub fn to_norm(&self, norm: Norm) -> Self {
        match norm {
            Norm::Bar => self.to_bar(),
            Norm::Tilde => self.to_tilde(),
        }
    }

    fn rescaled_kernel(&self, r: &[f64], norm: Norm) -> Self {
        let k = r.len();
        let kernel = DenseMatrix::from_fn(k, k, |a, b| r[a] * self.kernel[(a, b)] * r[b]);
        Self { design: self.design.clone(), diag: self.diag.clone(), kernel, norm }
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if !same_design(&self.design, &other.design) {
            return Err(Error::DesignMismatch);
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_compatible(other)?;
        if self.norm != other.norm {
            return Err(Error::NormMismatch);
        }
        let diag = self.diag.iter().zip(&other.diag).map(|(a, b)| a + b).collect();
        Ok(Self {
            design: self.design.clone(),
            diag,
            kernel: self.kernel.add(&other.kernel)?,
            norm: self.norm,
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            design: self.design.clone(),
            diag: self.diag.iter().map(|d| d * s).collect(),
            kernel: self.kernel.scale(s),
            norm: self.norm,
        }
    }

    /// `self + s·I`.
    pub fn add_identity(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.diag.iter_mut().for_each(|d| *d += s);
        out
    }

    fn kernel_is_diagonal(&self) -> bool {
        let k = self.kernel.rows();
        (0..k).all(|b| self.kernel.0.col_as_slice(b).iter().enumerate().all(|(a, &v)| a == b || v == 0.0))
    }

    /// Product `self · other`, returned in bar form.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.check_compatible(other)?;
        let a = self.to_bar();
        let b = other.to_bar();
        let m = self.design.sizes_f64();
        let k = m.len();
        let (da, db) = (&a.diag, &b.diag);
        let (ka, kb) = (&a.kernel.0, &b.kernel.0);

        // K_A M⁻¹ K_B
        let mut kernel = if a.kernel_is_diagonal() {
            Mat::from_fn(k, k, |i, j| ka[(i, i)] / m[i] * kb[(i, j)])
        } else if b.kernel_is_diagonal() {
            Mat::from_fn(k, k, |i, j| ka[(i, j)] / m[j] * kb[(j, j)])
        } else {
            let scaled = Mat::from_fn(k, k, |i, j| ka[(i, j)] / m[j]);
            let mut out = Mat::zeros(k, k);
            faer::linalg::matmul::matmul(out.as_mut(), Accum::Replace, scaled.as_ref(), kb.as_ref(), 1.0, Par::Seq);
            out
        };
        for j in 0..k {
            for i in 0..k {
                kernel[(i, j)] += da[i] * kb[(i, j)] + ka[(i, j)] * db[j];
            }
        }
        Ok(Self {
            design: self.design.clone(),
            diag: da.iter().zip(db).map(|(x, y)| x * y).collect(),
            kernel: DenseMatrix(kernel),
            norm: Norm::Bar,
        })
    }

    /// Multiplies by `diag(w_c I_{m_c})` on the given side(s). Keeps the norm.
    pub fn cell_diag_sandwich(&self, w: &[f64], side: Side) -> Result<Self> {
        let k = self.design.num_cells();
        if w.len() != k {
            return Err(Error::DimensionMismatch(format!("{} weights for {k} cells", w.len())));
        }
        let (l, r): (Vec<f64>, Vec<f64>) = match side {
            Side::Left => (w.to_vec(), vec![1.0; k]),
            Side::Right => (vec![1.0; k], w.to_vec()),
            Side::Both => (w.to_vec(), w.to_vec()),
        };
        let diag = self.diag.iter().enumerate().map(|(c, d)| l[c] * d * r[c]).collect();
        let kernel = DenseMatrix::from_fn(k, k, |a, b| l[a] * self.kernel[(a, b)] * r[b]);
        Ok(Self { design: self.design.clone(), diag, kernel, norm: self.norm })
    }

    /// `y = R(d, K) x` in `O(n + (gh)²)`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n = self.design.n();
        if x.len() != n {
            return Err(Error::DimensionMismatch(format!("vector of length {} for n = {n}", x.len())));
        }
        let s = self.cell_scales();
        let t: Vec<f64> = (0..s.len())
            .map(|c| s[c] * x[self.design.cell_range(c)].iter().sum::<f64>())
            .collect();
        let kt = self.kernel.matvec(&t)?;
        let mut y = vec![0.0; n];
        for c in 0..s.len() {
            let shift = s[c] * kt[c];
            for p in self.design.cell_range(c) {
                y[p] = self.diag[c] * x[p] + shift;
            }
        }
        Ok(y)
    }

    /// `R(d, K) X` for a dense `n × k` right-hand side, column by column.
    pub fn apply_dense(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        let n = self.design.n();
        if x.rows() != n {
            return Err(Error::DimensionMismatch(format!("{} rows for n = {n}", x.rows())));
        }
        let mut out = DenseMatrix::zeros(n, x.cols());
        for j in 0..x.cols() {
            let y = self.matvec(x.0.col_as_slice(j))?;
            out.0.col_as_slice_mut(j).copy_from_slice(&y);
        }
        Ok(out)
    }

    /// Full `n × n` expansion.
    pub fn to_dense(&self) -> DenseMatrix {
        let n = self.design.n();
        let s = self.cell_scales();
        let k = s.len();
        let mut out = DenseMatrix::zeros(n, n);
        for b in 0..k {
            let cols = self.design.cell_range(b);
            for a in 0..k {
                let v = self.kernel[(a, b)] * s[a] * s[b];
                if v == 0.0 {
                    continue;
                }
                for q in cols.clone() {
                    for p in self.design.cell_range(a) {
                        out.0[(p, q)] = v;
                    }
                }
            }
            for p in cols {
                out.0[(p, p)] += self.diag[b];
            }
        }
        out
    }

    /// Inverse in the same algebra, `O((gh)³)` regardless of the cell sizes.
    ///
    /// With `A = R(d, K)` in bar form the inverse is `R(1/d, K')` where
    /// `(D_d + K M⁻¹) K' = −K D_{1/d}`.
    pub fn inverse(&self) -> Result<Self> {
        let a = self.to_bar();
        if let Some(c) = a.diag.iter().position(|&d| d == 0.0 || !d.is_finite()) {
            return Err(Error::Singular(format!("diagonal entry of cell {c} is {}", a.diag[c])));
        }
        let m = self.design.sizes_f64();
        let k = m.len();
        let inv_d: Vec<f64> = a.diag.iter().map(|d| 1.0 / d).collect();
        let kk = &a.kernel.0;

        let kernel = if a.kernel_is_diagonal() {
            let mut out = Mat::zeros(k, k);
            for c in 0..k {
                let denom = a.diag[c] + kk[(c, c)] / m[c];
                if denom.abs() <= 1e-14 * a.diag[c].abs().max((kk[(c, c)] / m[c]).abs()) {
                    return Err(Error::Singular(format!("reduced system is singular at cell {c}")));
                }
                out[(c, c)] = -kk[(c, c)] * inv_d[c] / denom;
            }
            out
        } else {
            let sys = Mat::from_fn(k, k, |i, j| kk[(i, j)] / m[j] + if i == j { a.diag[i] } else { 0.0 });
            let rhs = Mat::from_fn(k, k, |i, j| -kk[(i, j)] * inv_d[j]);
            let lu = sys.partial_piv_lu();
            let u = lu.U();
            let umax = (0..k).map(|i| u[(i, i)].abs()).fold(0.0f64, f64::max);
            if (0..k).any(|i| u[(i, i)].abs() <= umax * 1e-14) {
                return Err(Error::Singular("reduced cell system is numerically singular".into()));
            }
            lu.solve(rhs.as_ref())
        };
        let out = Self { design: self.design.clone(), diag: inv_d, kernel: DenseMatrix(kernel), norm: Norm::Bar };
        if out.kernel.0.col_iter().any(|c| c.iter().any(|v| !v.is_finite())) {
            return Err(Error::Singular("non-finite entries in the inverse".into()));
        }
        Ok(out)
    }

    /// Entries of block `(a, b)`: `(off-diagonal value, diagonal value)` for
    /// `a = b`, or the constant block value twice otherwise.
    fn block_values(&self, s: &[f64], a: usize, b: usize) -> (f64, f64) {
        let v = self.kernel[(a, b)] * s[a] * s[b];
        if a == b {
            (v, v + self.diag[a])
        } else {
            (v, v)
        }
    }

    /// Max-abs entry of `self - shift·I` without expanding.
    fn max_abs_shifted(&self, shift: f64) -> f64 {
        let s = self.cell_scales();
        let cells = self.design.cells();
        let k = s.len();
        let mut out = 0.0f64;
        for b in 0..k {
            for a in 0..k {
                let (off, on) = self.block_values(&s, a, b);
                if a == b {
                    out = out.max((on - shift).abs());
                    if cells[a] > 1 {
                        out = out.max(off.abs());
                    }
                } else {
                    out = out.max(off.abs());
                }
            }
        }
        out
    }

    /// Frobenius norm of `self - shift·I` without expanding.
    fn frobenius_shifted(&self, shift: f64) -> f64 {
        let s = self.cell_scales();
        let m = self.design.sizes_f64();
        let k = s.len();
        let mut acc = 0.0;
        for b in 0..k {
            for a in 0..k {
                let (off, on) = self.block_values(&s, a, b);
                if a == b {
                    acc += m[a] * (on - shift).powi(2) + (m[a] * m[a] - m[a]) * off * off;
                } else {
                    acc += m[a] * m[b] * off * off;
                }
            }
        }
        acc.sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.max_abs_shifted(0.0)
    }

    pub fn max_abs_from_identity(&self) -> f64 {
        self.max_abs_shifted(1.0)
    }

    pub fn frobenius(&self) -> f64 {
        self.frobenius_shifted(0.0)
    }

    pub fn frobenius_from_identity(&self) -> f64 {
        self.frobenius_shifted(1.0)
    }

    /// Max-abs entry of `self - other`, computed in compressed form.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        Ok(self.to_bar().sub(&other.to_bar())?.max_abs())
    }

    /// Largest `|K_ab - K_ba|`; zero means the represented matrix is symmetric.
    pub fn kernel_asymmetry(&self) -> f64 {
        self.kernel.asymmetry()
    }

    pub fn trace(&self) -> f64 {
        let s = self.cell_scales();
        let m = self.design.sizes_f64();
        (0..s.len()).map(|c| m[c] * (self.diag[c] + self.kernel[(c, c)] * s[c] * s[c])).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn design(rows: &[Vec<usize>]) -> Arc<Design> {
        Arc::new(Design::from_rows(rows).unwrap())
    }

    fn random_cbm(d: &Arc<Design>, norm: Norm, rng: &mut ChaCha8Rng) -> CellBlockMatrix {
        let k = d.num_cells();
        let diag = (0..k).map(|_| rng.random_range(0.5..2.0)).collect();
        let kernel = DenseMatrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
        CellBlockMatrix::new(d.clone(), diag, kernel, norm).unwrap()
    }

    /// Independent expansion straight from the block rule.
    fn expand_by_rule(a: &CellBlockMatrix) -> DenseMatrix {
        let d = a.design();
        let cell = d.cell_of_observation();
        let m = d.sizes_f64();
        let n = d.n();
        DenseMatrix::from_fn(n, n, |p, q| {
            let (ca, cb) = (cell[p], cell[q]);
            let scale = match a.norm() {
                Norm::Bar => 1.0 / (m[ca] * m[cb]),
                Norm::Tilde => 1.0 / (m[ca] * m[cb]).sqrt(),
            };
            a.kernel()[(ca, cb)] * scale + if p == q { a.diag()[ca] } else { 0.0 }
        })
    }

    #[test]
    fn dense_expansion_matches_rule() {
        let d = design(&[vec![2, 1, 3], vec![1, 2, 1]]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for norm in [Norm::Bar, Norm::Tilde] {
            let a = random_cbm(&d, norm, &mut rng);
            assert!(a.to_dense().max_abs_diff(&expand_by_rule(&a)).unwrap() < 1e-15);
        }
        let z = CellBlockMatrix::zeros(d.clone(), Norm::Bar);
        assert_eq!(z.to_dense().max_abs(), 0.0);
        let dg = CellBlockMatrix::cell_diagonal(d.clone(), vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let dense = dg.to_dense();
        assert_eq!(dense[(0, 0)], 1.0);
        assert_eq!(dense[(9, 9)], 6.0);
        assert_eq!(dense[(0, 1)], 0.0);
    }

    #[test]
    fn j_squared_is_m_j() {
        let d = design(&[vec![2]]);
        let a = CellBlockMatrix::new(d.clone(), vec![0.0], DenseMatrix::from_fn(1, 1, |_, _| 4.0), Norm::Bar).unwrap();
        let sq = a.mul(&a).unwrap();
        assert_eq!(sq.kernel()[(0, 0)], 8.0);
        assert_eq!(sq.diag()[0], 0.0);
    }

    #[test]
    fn identity_is_neutral() {
        let d = design(&[vec![2, 1], vec![3, 1]]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_cbm(&d, Norm::Bar, &mut rng);
        let i = CellBlockMatrix::identity(d.clone());
        assert!(i.mul(&a).unwrap().max_abs_diff(&a).unwrap() < 1e-15);
        assert_eq!(i.inverse().unwrap().max_abs_from_identity(), 0.0);
        let x: Vec<f64> = (0..d.n()).map(|p| p as f64).collect();
        assert_eq!(i.matvec(&x).unwrap(), x);
    }

    #[test]
    fn add_mismatches_are_errors() {
        let d1 = design(&[vec![2, 1]]);
        let d2 = design(&[vec![1, 2]]);
        let a = CellBlockMatrix::zeros(d1.clone(), Norm::Bar);
        assert_eq!(a.add(&CellBlockMatrix::zeros(d2, Norm::Bar)).unwrap_err(), Error::DesignMismatch);
        assert_eq!(a.add(&CellBlockMatrix::zeros(d1.clone(), Norm::Tilde)).unwrap_err(), Error::NormMismatch);
        assert!(a.cell_diag_sandwich(&[1.0], Side::Left).is_err());
        assert!(a.matvec(&[1.0]).is_err());
    }

    #[test]
    fn add_negation_is_zero() {
        let d = design(&[vec![3, 1], vec![2, 2]]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_cbm(&d, Norm::Tilde, &mut rng);
        assert_eq!(a.add(&a.scale(-1.0)).unwrap().max_abs(), 0.0);
        let z = CellBlockMatrix::zeros(d.clone(), Norm::Tilde);
        assert_eq!(a.add(&z).unwrap().max_abs_diff(&a).unwrap(), 0.0);
    }

    #[test]
    fn matvec_of_bar_ones_kernel() {
        // R(0, all-ones, BAR) · 1_n: each row of cell a sums K_ab/(m_a m_b) over m_b columns.
        let d = design(&[vec![2, 1, 3], vec![1, 2, 1]]);
        let k = d.num_cells();
        let a = CellBlockMatrix::new(d.clone(), vec![0.0; k], DenseMatrix::from_fn(k, k, |_, _| 1.0), Norm::Bar).unwrap();
        let y = a.matvec(&vec![1.0; d.n()]).unwrap();
        for c in 0..k {
            for p in d.cell_range(c) {
                assert!((y[p] - k as f64 / d.cells()[c] as f64).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn inverse_rejects_zero_diagonal() {
        let d = design(&[vec![2, 1]]);
        let a = CellBlockMatrix::cell_diagonal(d, vec![1.0, 0.0]).unwrap();
        assert!(matches!(a.inverse(), Err(Error::Singular(_))));
    }

    #[test]
    fn inverse_detects_singular_reduced_system() {
        // I - J̃ on a single cell of size 2 is a rank-1 projector complement.
        let d = design(&[vec![2]]);
        let a = CellBlockMatrix::new(d, vec![1.0], DenseMatrix::from_fn(1, 1, |_, _| -1.0), Norm::Tilde).unwrap();
        assert!(matches!(a.inverse(), Err(Error::Singular(_))));
    }

    #[test]
    fn structured_norms_match_dense() {
        let d = design(&[vec![2, 1, 3], vec![1, 2, 4]]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for norm in [Norm::Bar, Norm::Tilde] {
            let a = random_cbm(&d, norm, &mut rng);
            let dense = a.to_dense();
            assert!((a.max_abs() - dense.max_abs()).abs() < 1e-14);
            assert!((a.frobenius() - dense.frobenius()).abs() < 1e-12);
            assert!((a.max_abs_from_identity() - dense.max_abs_from_identity()).abs() < 1e-14);
            assert!((a.frobenius_from_identity() - dense.frobenius_from_identity()).abs() < 1e-12);
            assert!((a.trace() - dense.trace()).abs() < 1e-12);
        }
    }

    fn small_design() -> impl Strategy<Value = (usize, usize, Vec<usize>, u64)> {
        (1usize..=4, 1usize..=4).prop_flat_map(|(g, h)| {
            (Just(g), Just(h), proptest::collection::vec(1usize..=5, g * h), any::<u64>())
        })
    }

    fn rel_close(x: &DenseMatrix, y: &DenseMatrix, rtol: f64) -> bool {
        let scale = x.max_abs().max(y.max_abs()).max(1.0);
        x.max_abs_diff(y).unwrap() <= rtol * scale
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn dense_expansion_commutes_with_algebra((g, h, cells, seed) in small_design()) {
            let d = Arc::new(Design::new(g, h, cells).unwrap());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let na = if seed % 2 == 0 { Norm::Bar } else { Norm::Tilde };
            let a = random_cbm(&d, na, &mut rng);
            let b = random_cbm(&d, Norm::Tilde, &mut rng);
            let (da, db) = (a.to_dense(), b.to_dense());

            let sum = a.to_bar().add(&b.to_bar()).unwrap().to_dense();
            prop_assert!(rel_close(&sum, &da.add(&db).unwrap(), 1e-12));

            let prod = a.mul(&b).unwrap().to_dense();
            prop_assert!(rel_close(&prod, &da.matmul(&db).unwrap(), 1e-12));

            let w: Vec<f64> = (0..d.num_cells()).map(|_| rng.random_range(-2.0..2.0)).collect();
            let dw = DenseMatrix::from_diagonal(&d.cell_of_observation().iter().map(|&c| w[c]).collect::<Vec<_>>());
            let left = a.cell_diag_sandwich(&w, Side::Left).unwrap().to_dense();
            prop_assert!(rel_close(&left, &dw.matmul(&da).unwrap(), 1e-12));
            let right = a.cell_diag_sandwich(&w, Side::Right).unwrap().to_dense();
            prop_assert!(rel_close(&right, &da.matmul(&dw).unwrap(), 1e-12));
            let both = a.cell_diag_sandwich(&w, Side::Both).unwrap().to_dense();
            prop_assert!(rel_close(&both, &dw.matmul(&da).unwrap().matmul(&dw).unwrap(), 1e-12));

            let x: Vec<f64> = (0..d.n()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y = a.matvec(&x).unwrap();
            let y_dense = da.matvec(&x).unwrap();
            let err = y.iter().zip(&y_dense).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            prop_assert!(err <= 1e-12 * y_dense.iter().fold(1.0f64, |m, v| m.max(v.abs())));
        }

        #[test]
        fn norm_conversion_is_an_involution((g, h, cells, seed) in small_design()) {
            let d = Arc::new(Design::new(g, h, cells).unwrap());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_cbm(&d, Norm::Tilde, &mut rng);
            let back = a.to_bar().to_tilde();
            let scale = a.kernel().max_abs().max(1.0);
            prop_assert!(back.kernel().max_abs_diff(a.kernel()).unwrap() <= 1e-14 * scale);
            prop_assert!(rel_close(&a.to_bar().to_dense(), &a.to_dense(), 1e-14));
        }

        #[test]
        fn inverse_is_a_true_inverse((g, h, cells, seed) in small_design()) {
            let d = Arc::new(Design::new(g, h, cells).unwrap());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k = d.num_cells();
            // symmetric positive-definite: diag > 0 and kernel B Bᵀ
            let b = DenseMatrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
            let kernel = b.matmul(&b.transpose()).unwrap();
            let diag = (0..k).map(|_| rng.random_range(0.5..3.0)).collect();
            let a = CellBlockMatrix::new(d.clone(), diag, kernel, Norm::Bar).unwrap();
            let inv = a.inverse().unwrap();
            let prod = a.to_dense().matmul(&inv.to_dense()).unwrap();
            prop_assert!(prod.max_abs_from_identity() < 1e-10);
            prop_assert!(a.mul(&inv).unwrap().max_abs_from_identity() < 1e-10);
        }
    }
}
