//! Closed-form eigenstructure of `m_U · Ĩ_m V̌ Ĩ_m`.
//!
//! In tilde form the scaled matrix is `σ²_e I_n + m_U · S ⊛ J̃_m` with
//! `S = σ²_α (I_g⊗J_h) + σ²_β (J_g⊗I_h) + σ²_γ I_gh`. The four Kronecker
//! projectors built from `J̄_g` and `J̄_h` diagonalize `S`, and everything
//! orthogonal to the cell-constant vectors sees only `σ²_e`.
//!
//! | projector              | kernel                  | eigenvalue | rank          |
//! |------------------------|-------------------------|------------|---------------|
//! | grand mean             | `J̄_g ⊗ J̄_h`             | `λ₁`       | 1             |
//! | row contrasts          | `(I−J̄_g) ⊗ J̄_h`         | `λ₃`       | g − 1         |
//! | column contrasts       | `J̄_g ⊗ (I−J̄_h)`         | `λ₅`       | h − 1         |
//! | interaction contrasts  | `(I−J̄_g) ⊗ (I−J̄_h)`     | `λ₇`       | (g−1)(h−1)    |
//! | within-cell            | `I − Σ` of the above    | `λ₀`       | n − gh        |
//!
//! `λ₃ = λ₇ + h m_U σ²_α` belongs to the row-factor contrasts, which span a
//! `(g−1)`-dimensional space; likewise `λ₅ = λ₇ + g m_U σ²_β` has
//! multiplicity `h−1`.

use std::sync::Arc;

use crate::covariance::{build_v_check, VarianceComponents};
use crate::dense::DenseMatrix;
use crate::design::Design;
use crate::error::{Error, Result};
use crate::kr::{CellBlockMatrix, Norm, Side};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spectrum {
    pub lambda0: f64,
    pub lambda1: f64,
    pub lambda3: f64,
    pub lambda5: f64,
    pub lambda7: f64,
    pub mult0: usize,
    pub mult1: usize,
    pub mult3: usize,
    pub mult5: usize,
    pub mult7: usize,
}

impl Spectrum {
    /// `(value, multiplicity)` pairs in the order λ₀, λ₁, λ₃, λ₅, λ₇.
    pub fn pairs(&self) -> [(f64, usize); 5] {
        [
            (self.lambda0, self.mult0),
            (self.lambda1, self.mult1),
            (self.lambda3, self.mult3),
            (self.lambda5, self.mult5),
            (self.lambda7, self.mult7),
        ]
    }

    /// All `n` eigenvalues, repeated by multiplicity, ascending.
    pub fn multiset(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self
            .pairs()
            .iter()
            .flat_map(|&(v, k)| std::iter::repeat_n(v, k))
            .collect();
        out.sort_by(f64::total_cmp);
        out
    }

    pub fn total_multiplicity(&self) -> usize {
        self.pairs().iter().map(|p| p.1).sum()
    }

    /// Distinct values carrying positive multiplicity, ascending.
    pub fn distinct_values(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.pairs().iter().filter(|p| p.1 > 0).map(|p| p.0).collect();
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }
}

pub fn eigenvalue_spectrum(design: &Design, theta: &VarianceComponents) -> Result<Spectrum> {
    theta.validate()?;
    let (g, h) = (design.g(), design.h());
    let m_u = design.m_max() as f64;
    let lambda0 = theta.sigma2_e;
    let lambda7 = theta.sigma2_e + m_u * theta.sigma2_gamma;
    let lambda3 = lambda7 + h as f64 * m_u * theta.sigma2_alpha;
    let lambda5 = lambda7 + g as f64 * m_u * theta.sigma2_beta;
    Ok(Spectrum {
        lambda0,
        lambda1: lambda3 + lambda5 - lambda7,
        lambda3,
        lambda5,
        lambda7,
        mult0: design.n() - g * h,
        mult1: 1,
        mult3: g - 1,
        mult5: h - 1,
        mult7: (g - 1) * (h - 1),
    })
}

/// Orthonormal basis of the complement of `1_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastBasis {
    pub k: usize,
    pub vectors: Vec<Vec<f64>>,
}

/// Helmert contrasts: vector `i` has `i` leading entries `1/√(i(i+1))`, then
/// `−i/√(i(i+1))`, then zeros.
pub fn contrast_basis(k: usize) -> Result<ContrastBasis> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("contrast basis needs k >= 2, got {k}")));
    }
    let vectors = (1..k)
        .map(|i| {
            let s = ((i * (i + 1)) as f64).sqrt();
            (0..k)
                .map(|t| match t.cmp(&i) {
                    std::cmp::Ordering::Less => 1.0 / s,
                    std::cmp::Ordering::Equal => -(i as f64) / s,
                    std::cmp::Ordering::Greater => 0.0,
                })
                .collect()
        })
        .collect();
    Ok(ContrastBasis { k, vectors })
}

/// The four cell-level spectral projectors, in tilde form.
#[derive(Debug, Clone)]
pub struct Projectors {
    /// `(J̄_g⊗J̄_h) ⊛ J̃_m`, eigenvalue `λ₁`.
    pub grand_mean: CellBlockMatrix,
    /// `((I_g−J̄_g)⊗J̄_h) ⊛ J̃_m`, eigenvalue `λ₃`.
    pub row: CellBlockMatrix,
    /// `(J̄_g⊗(I_h−J̄_h)) ⊛ J̃_m`, eigenvalue `λ₅`.
    pub column: CellBlockMatrix,
    /// `((I_g−J̄_g)⊗(I_h−J̄_h)) ⊛ J̃_m`, eigenvalue `λ₇`.
    pub interaction: CellBlockMatrix,
}

impl Projectors {
    pub fn all(&self) -> [&CellBlockMatrix; 4] {
        [&self.grand_mean, &self.row, &self.column, &self.interaction]
    }
}

/// Entry `(a, b)` of `A ⊗ B` over cells, with `A` over rows and `B` over columns.
fn cell_kronecker(design: &Design, a: impl Fn(usize, usize) -> f64, b: impl Fn(usize, usize) -> f64) -> DenseMatrix {
    let k = design.num_cells();
    DenseMatrix::from_fn(k, k, |x, y| {
        let (i, j) = design.cell_coords(x);
        let (p, q) = design.cell_coords(y);
        a(i, p) * b(j, q)
    })
}

pub fn projectors(design: &Arc<Design>) -> Result<Projectors> {
    let (g, h) = (design.g() as f64, design.h() as f64);
    let mean_g = move |_: usize, _: usize| 1.0 / g;
    let mean_h = move |_: usize, _: usize| 1.0 / h;
    let centre_g = move |i: usize, p: usize| f64::from(i == p) - 1.0 / g;
    let centre_h = move |j: usize, q: usize| f64::from(j == q) - 1.0 / h;
    let k = design.num_cells();
    let build = |kernel: DenseMatrix| CellBlockMatrix::new(design.clone(), vec![0.0; k], kernel, Norm::Tilde);
    Ok(Projectors {
        grand_mean: build(cell_kronecker(design, mean_g, mean_h))?,
        row: build(cell_kronecker(design, centre_g, mean_h))?,
        column: build(cell_kronecker(design, mean_g, centre_h))?,
        interaction: build(cell_kronecker(design, centre_g, centre_h))?,
    })
}

/// `m_U · Ĩ_m V̌ Ĩ_m`, with `Ĩ_m = diag(m_c^{-1/2} I_{m_c})`.
pub fn scaled_v_check(design: &Arc<Design>, theta: &VarianceComponents) -> Result<CellBlockMatrix> {
    let w: Vec<f64> = design.sizes_f64().iter().map(|m| 1.0 / m.sqrt()).collect();
    let vc = build_v_check(design, theta)?;
    Ok(vc.cell_diag_sandwich(&w, Side::Both)?.scale(design.m_max() as f64))
}

/// `Σ λ_k P_k + λ₀ (I − Σ P_k)` in tilde form.
pub fn spectral_synthesis(design: &Arc<Design>, theta: &VarianceComponents) -> Result<CellBlockMatrix> {
    let s = eigenvalue_spectrum(design, theta)?;
    let p = projectors(design)?;
    let mut out = CellBlockMatrix::zeros(design.clone(), Norm::Tilde).add_identity(s.lambda0);
    for (proj, lambda) in p.all().into_iter().zip([s.lambda1, s.lambda3, s.lambda5, s.lambda7]) {
        out = out.add(&proj.scale(lambda - s.lambda0))?;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagonalizationReport {
    /// Max-abs entry of the scaled `V̌` minus its spectral synthesis.
    pub residual_max: f64,
    /// Max distance between sorted dense eigenvalues and the closed-form multiset.
    pub eig_mismatch: f64,
    pub lambda1: f64,
}

impl DiagonalizationReport {
    pub fn passes(&self, residual_tol: f64, eig_rel_tol: f64) -> bool {
        self.residual_max <= residual_tol && self.eig_mismatch <= eig_rel_tol * self.lambda1
    }
}

/// Checks the projector identity and the eigenvalue multiset against a dense
/// symmetric eigensolver.
pub fn verify_diagonalization(design: &Arc<Design>, theta: &VarianceComponents) -> Result<DiagonalizationReport> {
    let scaled = scaled_v_check(design, theta)?.to_dense();
    let synth = spectral_synthesis(design, theta)?.to_dense();
    let residual_max = scaled.max_abs_diff(&synth)?;
    let dense_eigs = scaled.symmetric_eigenvalues()?;
    let spectrum = eigenvalue_spectrum(design, theta)?;
    let eig_mismatch = multiset_distance(&dense_eigs, &spectrum.multiset());
    Ok(DiagonalizationReport { residual_max, eig_mismatch, lambda1: spectrum.lambda1 })
}

/// Max elementwise distance between two multisets after sorting; infinite on length mismatch.
pub fn multiset_distance(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
