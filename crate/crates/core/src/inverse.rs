//! Exact and approximate inverses of `V(θ)`.
//!
//! | function                       | result                                   | cost            |
//! |--------------------------------|------------------------------------------|-----------------|
//! | [`vcheck_inverse`]             | exact `V̌⁻¹`                               | `O((gh)²)`      |
//! | [`vcheck_inverse_truncated`]   | two leading terms of `V̌⁻¹`                | `O(gh)`         |
//! | [`balanced_inverse`]           | exact `V⁻¹`, balanced designs only        | `O((gh)²)`      |
//! | [`asymptotic_inverse`]         | block-diagonal approximation of `V⁻¹`     | `O(gh)`         |
//! | [`neumann_inverse`]            | `r`-th order expansion around `V̌⁻¹`       | `O(r (gh)²)`    |
//! | [`sherman_morrison_inverse`]   | exact `V⁻¹` by rank-one updates (dense)   | `O(n³)`         |
//! | [`exact_structured_inverse`]   | exact `V⁻¹` in the compressed algebra     | `O((gh)³)`      |
//! | [`dense_inverse_oracle`]       | exact `V⁻¹` by Cholesky                   | `O(n³)`         |
//!
//! The structured exact inverse is not one of the classical closed forms; it
//! follows from closure of the cell-block algebra under inversion.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::covariance::{build_v, i_delta_weights, VarianceComponents};
use crate::dense::DenseMatrix;
use crate::design::Design;
use crate::error::{Error, Result};
use crate::kr::{CellBlockMatrix, Norm};
use crate::spectral::{eigenvalue_spectrum, projectors, Spectrum};

/// Coefficients of the closed-form `V̌⁻¹` on the four cell-level Kronecker terms.
///
/// Subscripts follow the exponents of `J̄_g^{i₁} ⊗ J̄_h^{i₂}` read with the
/// column factor first: `delta01` multiplies `J̄_g ⊗ I_h` and `delta10`
/// multiplies `I_g ⊗ J̄_h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckInverseCoefficients {
    /// `1/λ₇ − 1/λ₀`, on `I_g ⊗ I_h`.
    pub delta00: f64,
    /// `1/λ₅ − 1/λ₇`, on `J̄_g ⊗ I_h`.
    pub delta01: f64,
    /// `1/λ₃ − 1/λ₇`, on `I_g ⊗ J̄_h`.
    pub delta10: f64,
    /// `1/λ₁ − 1/λ₃ − 1/λ₅ + 1/λ₇`, on `J̄_g ⊗ J̄_h`.
    pub delta11: f64,
}

impl CheckInverseCoefficients {
    pub fn from_spectrum(s: &Spectrum) -> Self {
        let inv = |x: f64| 1.0 / x;
        Self {
            delta00: inv(s.lambda7) - inv(s.lambda0),
            delta01: inv(s.lambda5) - inv(s.lambda7),
            delta10: inv(s.lambda3) - inv(s.lambda7),
            delta11: inv(s.lambda1) - inv(s.lambda3) - inv(s.lambda5) + inv(s.lambda7),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CheckInverse {
    pub matrix: CellBlockMatrix,
    pub spectrum: Spectrum,
    pub coefficients: CheckInverseCoefficients,
}

/// Closed-form `V̌⁻¹` with its spectrum and coefficients.
pub fn vcheck_inverse_report(design: &Arc<Design>, theta: &VarianceComponents) -> Result<CheckInverse> {
    let spectrum = eigenvalue_spectrum(design, theta)?;
    let c = CheckInverseCoefficients::from_spectrum(&spectrum);
    let m_u = design.m_max() as f64;
    let (g, h) = (design.g() as f64, design.h() as f64);
    let k = design.num_cells();
    let kernel = DenseMatrix::from_fn(k, k, |a, b| {
        let (i, j) = design.cell_coords(a);
        let (p, q) = design.cell_coords(b);
        let mut v = c.delta11 / (g * h);
        if j == q {
            v += c.delta01 / g;
        }
        if i == p {
            v += c.delta10 / h;
            if j == q {
                v += c.delta00;
            }
        }
        m_u * v
    });
    let diag = design.sizes_f64().iter().map(|m| m_u / (spectrum.lambda0 * m)).collect();
    let matrix = CellBlockMatrix::new(design.clone(), diag, kernel, Norm::Bar)?;
    Ok(CheckInverse { matrix, spectrum, coefficients: c })
}

/// Closed-form `V̌⁻¹`.
pub fn vcheck_inverse(design: &Arc<Design>, theta: &VarianceComponents) -> Result<CellBlockMatrix> {
    Ok(vcheck_inverse_report(design, theta)?.matrix)
}

/// `(m_U/λ₀) Ī_m + (m_U/λ₇ − m_U/λ₀) (I_g⊗I_h) ⊛ J̄_m`, block diagonal.
pub fn vcheck_inverse_truncated(design: &Arc<Design>, theta: &VarianceComponents) -> Result<CellBlockMatrix> {
    let s = eigenvalue_spectrum(design, theta)?;
    let m_u = design.m_max() as f64;
    let k = design.num_cells();
    let diag = design.sizes_f64().iter().map(|m| m_u / (s.lambda0 * m)).collect();
    let kernel = DenseMatrix::identity(k).scale(m_u * (1.0 / s.lambda7 - 1.0 / s.lambda0));
    CellBlockMatrix::new(design.clone(), diag, kernel, Norm::Bar)
}

/// Exact `V⁻¹` for a balanced design as a five-term projector expansion
///
/// ```text
///     V⁻¹ = λ₀⁻¹ (I − I_gh ⊗ J̄_m) + Σ_k λ_k⁻¹ Q_k ⊗ J̄_m
/// ```
///
/// over the Kronecker projectors `Q_k` of the cell grid.
pub fn balanced_inverse(design: &Arc<Design>, theta: &VarianceComponents) -> Result<CellBlockMatrix> {
    if !design.is_balanced() {
        return Err(Error::InvalidDesign(format!(
            "balanced inverse needs equal cell sizes, got m_L = {} and m_U = {}",
            design.m_min(),
            design.m_max()
        )));
    }
    let s = eigenvalue_spectrum(design, theta)?;
    let m = design.m_max() as f64;
    let k = design.num_cells();
    let p = projectors(design)?;
    let mut kernel = DenseMatrix::identity(k).scale(-1.0 / s.lambda0);
    for (proj, lambda) in p.all().into_iter().zip([s.lambda1, s.lambda3, s.lambda5, s.lambda7]) {
        kernel = kernel.add(&proj.kernel().scale(1.0 / lambda))?;
    }
    CellBlockMatrix::new(design.clone(), vec![1.0 / s.lambda0; k], kernel.scale(m), Norm::Bar)
}

/// Block-diagonal large-grid approximation
/// `σ_e⁻² I − (σ²_γ/σ²_e) diag[J_{m_c} / (σ²_e + m_c σ²_γ)]`.
pub fn asymptotic_inverse(design: &Arc<Design>, theta: &VarianceComponents) -> Result<CellBlockMatrix> {
    theta.validate()?;
    let (e, gam) = (theta.sigma2_e, theta.sigma2_gamma);
    let m = design.sizes_f64();
    let k = m.len();
    let kernel = DenseMatrix::from_diagonal(&m.iter().map(|&mc| -gam * mc * mc / (e * (e + mc * gam))).collect::<Vec<_>>());
    CellBlockMatrix::new(design.clone(), vec![1.0 / e; k], kernel, Norm::Bar)
}

#[derive(Debug, Clone)]
pub struct NeumannInverse {
    pub matrix: CellBlockMatrix,
    pub r: usize,
    pub delta: f64,
    /// Set when `Δ ≥ 1/2`, where the geometric error bound no longer applies.
    pub outside_theorem_hypothesis: bool,
}

/// Partial sums `V⁻¹_(0), …, V⁻¹_(r_max)` of
/// `Σ_{l} (−σ²_e)^l (V̌⁻¹ I^Δ_m)^l V̌⁻¹`, entirely in compressed form.
pub fn neumann_sequence(design: &Arc<Design>, theta: &VarianceComponents, r_max: usize) -> Result<Vec<CellBlockMatrix>> {
    let check = vcheck_inverse_report(design, theta)?;
    let base = check.matrix.clone();
    let w = i_delta_weights(design);
    let balanced = w.iter().all(|&x| x == 0.0);
    let mut term = base.clone();
    let mut out = Vec::with_capacity(r_max + 1);
    out.push(base.clone());
    for _ in 0..r_max {
        let prev = out.last().unwrap_or(&base).clone();
        if balanced {
            out.push(prev);
            continue;
        }
        term = check_inverse_step(&check, &w, -theta.sigma2_e, &term)?;
        out.push(prev.add(&term)?);
    }
    Ok(out)
}

/// Next Neumann term `s · V̌⁻¹ diag(w) B` in bar form, in one pass over the
/// kernel: the kernel of `V̌⁻¹` acts on each column through its row, column
/// and grand sums.
fn check_inverse_step(check: &CheckInverse, w: &[f64], s: f64, b: &CellBlockMatrix) -> Result<CellBlockMatrix> {
    let a = &check.matrix;
    let design = a.design();
    if design != b.design() {
        return Err(Error::DesignMismatch);
    }
    let b = b.to_bar();
    let c = &check.coefficients;
    let (g, h) = (design.g(), design.h());
    let k = design.num_cells();
    let m = design.sizes_f64();
    let m_u = design.m_max() as f64;
    let coords: Vec<(usize, usize)> = (0..k).map(|x| design.cell_coords(x)).collect();
    let (da, db) = (a.diag(), b.diag());
    let (c01, c10, c11) = (c.delta01 / g as f64, c.delta10 / h as f64, c.delta11 / (g * h) as f64);

    let mut kernel = DenseMatrix::zeros(k, k);
    let mut y = vec![0.0; k];
    let mut row_sum = vec![0.0; g];
    let mut col_sum = vec![0.0; h];
    for col in 0..k {
        let kb = b.kernel().0.col_as_slice(col);
        // y = (D_B + M⁻¹ K_B) e_col after the left weighting
        for x in 0..k {
            y[x] = w[x] * kb[x] / m[x];
        }
        y[col] += w[col] * db[col];
        row_sum.fill(0.0);
        col_sum.fill(0.0);
        for (x, &(i, j)) in coords.iter().enumerate() {
            row_sum[i] += y[x];
            col_sum[j] += y[x];
        }
        let total: f64 = row_sum.iter().sum();
        let out = kernel.0.col_as_slice_mut(col);
        for (x, &(i, j)) in coords.iter().enumerate() {
            let ky = c.delta00 * y[x] + c01 * col_sum[j] + c10 * row_sum[i] + c11 * total;
            out[x] = s * (da[x] * w[x] * kb[x] + m_u * ky);
        }
    }
    let diag = (0..k).map(|x| s * da[x] * w[x] * db[x]).collect();
    CellBlockMatrix::new(a.design_arc().clone(), diag, kernel, Norm::Bar)
}

/// `r`-th order expansion of `V⁻¹` around `V̌⁻¹`.
pub fn neumann_inverse_report(design: &Arc<Design>, theta: &VarianceComponents, r: usize) -> Result<NeumannInverse> {
    let matrix = neumann_sequence(design, theta, r)?.pop().ok_or_else(|| Error::InvalidArgument("empty expansion".into()))?;
    let delta = design.delta();
    Ok(NeumannInverse { matrix, r, delta, outside_theorem_hypothesis: delta >= 0.5 })
}

pub fn neumann_inverse(design: &Arc<Design>, theta: &VarianceComponents, r: usize) -> Result<CellBlockMatrix> {
    Ok(neumann_inverse_report(design, theta, r)?.matrix)
}

/// Exact `V⁻¹` from dense `V̌⁻¹` by one rank-one update per observation in a
/// cell below `m_U`, in lexicographic order.
pub fn sherman_morrison_inverse(design: &Arc<Design>, theta: &VarianceComponents) -> Result<DenseMatrix> {
    let mut w = vcheck_inverse(design, theta)?.to_dense();
    let weights = i_delta_weights(design);
    let n = design.n();
    let mut col = vec![0.0; n];
    for (c, &wc) in weights.iter().enumerate() {
        if wc == 0.0 {
            continue;
        }
        let e = theta.sigma2_e * wc;
        for p in design.cell_range(c) {
            let denom = 1.0 + e * w[(p, p)];
            if denom <= 0.0 || !denom.is_finite() {
                return Err(Error::DegenerateUpdate { index: p, denominator: denom });
            }
            let kappa = e / denom;
            col.copy_from_slice(w.0.col_as_slice(p));
            for j in 0..n {
                let s = kappa * col[j];
                if s != 0.0 {
                    for (dst, &src) in w.0.col_as_slice_mut(j).iter_mut().zip(&col) {
                        *dst -= s * src;
                    }
                }
            }
        }
    }
    Ok(w)
}

/// Exact `V⁻¹` through the compressed algebra.
pub fn exact_structured_inverse(design: &Arc<Design>, theta: &VarianceComponents) -> Result<CellBlockMatrix> {
    build_v(design, theta)?.inverse()
}

/// Exact `V⁻¹` by dense Cholesky.
pub fn dense_inverse_oracle(design: &Arc<Design>, theta: &VarianceComponents) -> Result<DenseMatrix> {
    build_v(design, theta)?.to_dense().spd_inverse()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    ExactDense,
    ExactStructured,
    ExactSm,
    Vcheck,
    VcheckTruncated,
    Asymptotic,
    Neumann(usize),
    Balanced,
}

impl Method {
    pub fn is_exact(&self) -> bool {
        matches!(self, Method::ExactDense | Method::ExactStructured | Method::ExactSm | Method::Balanced)
    }

    /// True when the result is an `n × n` dense matrix.
    pub fn is_dense(&self) -> bool {
        matches!(self, Method::ExactDense | Method::ExactSm)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Method::ExactDense => "exact-dense",
            Method::ExactStructured => "exact-structured",
            Method::ExactSm => "exact-sm",
            Method::Vcheck => "vcheck",
            Method::VcheckTruncated => "vcheck-truncated",
            Method::Asymptotic => "asymptotic",
            Method::Neumann(_) => "neumann",
            Method::Balanced => "balanced",
        }
    }

    pub fn compute(&self, design: &Arc<Design>, theta: &VarianceComponents) -> Result<InverseEstimate> {
        Ok(match *self {
            Method::ExactDense => InverseEstimate::Dense(dense_inverse_oracle(design, theta)?),
            Method::ExactSm => InverseEstimate::Dense(sherman_morrison_inverse(design, theta)?),
            Method::ExactStructured => InverseEstimate::Structured(exact_structured_inverse(design, theta)?),
            Method::Vcheck => InverseEstimate::Structured(vcheck_inverse(design, theta)?),
            Method::VcheckTruncated => InverseEstimate::Structured(vcheck_inverse_truncated(design, theta)?),
            Method::Asymptotic => InverseEstimate::Structured(asymptotic_inverse(design, theta)?),
            Method::Neumann(r) => InverseEstimate::Structured(neumann_inverse(design, theta, r)?),
            Method::Balanced => InverseEstimate::Structured(balanced_inverse(design, theta)?),
        })
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Neumann(r) => write!(f, "neumann-{r}"),
            m => f.write_str(m.name()),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    /// Accepts the plain names plus `neumann-R` / `neumann:R`; bare `neumann` means `r = 0`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if let Some(rest) = s.strip_prefix("neumann") {
            let rest = rest.trim_start_matches(['-', ':', '=']);
            if rest.is_empty() {
                return Ok(Method::Neumann(0));
            }
            return rest
                .parse()
                .map(Method::Neumann)
                .map_err(|_| Error::Parse(format!("bad neumann order in {s:?}")));
        }
        Ok(match s.as_str() {
            "exact-dense" => Method::ExactDense,
            "exact-structured" => Method::ExactStructured,
            "exact-sm" => Method::ExactSm,
            "vcheck" => Method::Vcheck,
            "vcheck-truncated" => Method::VcheckTruncated,
            "asymptotic" => Method::Asymptotic,
            "balanced" => Method::Balanced,
            _ => return Err(Error::Parse(format!("unknown method {s:?}"))),
        })
    }
}

#[derive(Debug, Clone)]
pub enum InverseEstimate {
    Structured(CellBlockMatrix),
    Dense(DenseMatrix),
}

impl InverseEstimate {
    pub fn to_dense(&self) -> DenseMatrix {
        match self {
            InverseEstimate::Structured(m) => m.to_dense(),
            InverseEstimate::Dense(m) => m.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::build_v_check;
    use crate::kr::Side;

    fn example() -> Arc<Design> {
        Arc::new(Design::from_rows(&[vec![2, 1, 3], vec![1, 2, 1]]).unwrap())
    }

    fn residual(a: &CellBlockMatrix, b: &DenseMatrix) -> f64 {
        a.to_dense().matmul(b).unwrap().max_abs_from_identity()
    }

    #[test]
    fn fused_neumann_step_matches_generic_product() {
        let d = Arc::new(Design::from_rows(&[vec![2, 1, 3, 4], vec![1, 2, 1, 5], vec![3, 3, 1, 2]]).unwrap());
        let theta = VarianceComponents::new(1.5, 0.7, 2.0, 0.9).unwrap();
        let check = vcheck_inverse_report(&d, &theta).unwrap();
        let w = i_delta_weights(&d);
        let v = build_v(&d, &theta).unwrap().to_tilde();
        let fast = check_inverse_step(&check, &w, -0.9, &v).unwrap();
        let slow = check.matrix.mul(&v.cell_diag_sandwich(&w, Side::Left).unwrap()).unwrap().scale(-0.9);
        assert!(fast.max_abs_diff(&slow).unwrap() < 1e-13);
    }

    #[test]
    fn vcheck_inverse_reference_case() {
        let d = example();
        let theta = VarianceComponents::default();
        let rep = vcheck_inverse_report(&d, &theta).unwrap();
        let c = rep.coefficients;
        assert!((c.delta00 - (1.0 / 13.0 - 0.25)).abs() < 1e-15);
        assert!((c.delta01 - (1.0 / 55.0 - 1.0 / 13.0)).abs() < 1e-15);
        assert!((c.delta10 - (1.0 / 58.0 - 1.0 / 13.0)).abs() < 1e-15);
        let vc = build_v_check(&d, &theta).unwrap();
        assert!(residual(&vc, &rep.matrix.to_dense()) <= 1e-10);
    }

    #[test]
    fn literal_coefficient_pairing_is_not_an_inverse() {
        // δ₀₁ on I_g⊗J̄_h and δ₁₀ on J̄_g⊗I_h leaves a visible residual.
        let d = example();
        let theta = VarianceComponents::default();
        let rep = vcheck_inverse_report(&d, &theta).unwrap();
        let c = rep.coefficients;
        let swapped = CheckInverseCoefficients { delta01: c.delta10, delta10: c.delta01, ..c };
        let m_u = d.m_max() as f64;
        let (g, h) = (d.g() as f64, d.h() as f64);
        let k = d.num_cells();
        let kernel = DenseMatrix::from_fn(k, k, |a, b| {
            let (i, j) = d.cell_coords(a);
            let (p, q) = d.cell_coords(b);
            m_u * (swapped.delta11 / (g * h)
                + if j == q { swapped.delta01 / g } else { 0.0 }
                + if i == p { swapped.delta10 / h } else { 0.0 }
                + if a == b { swapped.delta00 } else { 0.0 })
        });
        let wrong = CellBlockMatrix::new(d.clone(), rep.matrix.diag().to_vec(), kernel, Norm::Bar).unwrap();
        let vc = build_v_check(&d, &theta).unwrap();
        assert!(residual(&vc, &wrong.to_dense()) > 1e-3);
    }

    #[test]
    fn pure_error_inverse() {
        let d = example();
        let theta = VarianceComponents::new(0.0, 0.0, 0.0, 4.0).unwrap();
        let v = vcheck_inverse(&d, &theta).unwrap();
        // m_U/λ₀ Ī_m is diag(3/(4 m_c)); with V̌ = (4 m_c/3) I the product is I
        let vc = build_v_check(&d, &theta).unwrap();
        assert!(vc.mul(&v).unwrap().max_abs_from_identity() < 1e-15);
        let dense = dense_inverse_oracle(&d, &theta).unwrap();
        assert!(dense.max_abs_diff(&DenseMatrix::identity(d.n()).scale(0.25)).unwrap() < 1e-15);
    }

    #[test]
    fn truncated_equals_full_without_main_effects() {
        let d = example();
        let theta = VarianceComponents::new(0.0, 0.0, 3.0, 4.0).unwrap();
        let full = vcheck_inverse(&d, &theta).unwrap();
        let trunc = vcheck_inverse_truncated(&d, &theta).unwrap();
        assert!(full.max_abs_diff(&trunc).unwrap() < 1e-16);
        let theta = VarianceComponents::default();
        let gap = vcheck_inverse(&d, &theta).unwrap().max_abs_diff(&vcheck_inverse_truncated(&d, &theta).unwrap()).unwrap();
        assert!(gap > 0.0);
    }

    #[test]
    fn balanced_forms_agree() {
        let d = Arc::new(Design::balanced(3, 4, 5).unwrap());
        let theta = VarianceComponents::default();
        let b = balanced_inverse(&d, &theta).unwrap();
        let v = build_v(&d, &theta).unwrap().to_dense();
        assert!(v.matmul(&b.to_dense()).unwrap().max_abs_from_identity() <= 1e-10);
        assert!(b.max_abs_diff(&vcheck_inverse(&d, &theta).unwrap()).unwrap() <= 1e-12);
        assert!(matches!(balanced_inverse(&example(), &theta), Err(Error::InvalidDesign(_))));
        let flat = VarianceComponents::new(0.0, 0.0, 0.0, 2.0).unwrap();
        let b = balanced_inverse(&d, &flat).unwrap();
        assert!(b.scale(2.0).max_abs_from_identity() < 1e-15);
    }

    #[test]
    fn asymptotic_form() {
        let d = example();
        let theta = VarianceComponents::default().without_interaction();
        let a = asymptotic_inverse(&d, &theta).unwrap();
        assert!(a.scale(theta.sigma2_e).max_abs_from_identity() < 1e-15);
        // balanced cells: each block is the exact inverse of σ²_e I + σ²_γ J_m
        let d = Arc::new(Design::balanced(2, 2, 3).unwrap());
        let theta = VarianceComponents::default();
        let a = asymptotic_inverse(&d, &theta).unwrap().to_dense();
        let block = DenseMatrix::from_fn(3, 3, |p, q| theta.sigma2_gamma + if p == q { theta.sigma2_e } else { 0.0 });
        let expect = DenseMatrix::identity(4).kronecker(&block.spd_inverse().unwrap());
        assert!(a.max_abs_diff(&expect).unwrap() < 1e-15);
    }

    #[test]
    fn neumann_balanced_is_vcheck() {
        let d = Arc::new(Design::balanced(2, 3, 2).unwrap());
        let theta = VarianceComponents::default();
        for r in 0..4 {
            let n = neumann_inverse_report(&d, &theta, r).unwrap();
            assert!(!n.outside_theorem_hypothesis);
            assert_eq!(n.matrix.max_abs_diff(&vcheck_inverse(&d, &theta).unwrap()).unwrap(), 0.0);
        }
    }

    #[test]
    fn neumann_flags_large_imbalance() {
        let d = example();
        let rep = neumann_inverse_report(&d, &VarianceComponents::default(), 2).unwrap();
        assert!(rep.outside_theorem_hypothesis);
        assert_eq!(rep.r, 2);
    }

    #[test]
    fn neumann_improves_with_order() {
        let d = Arc::new(Design::from_rows(&[vec![4, 5, 6], vec![6, 5, 4]]).unwrap());
        let theta = VarianceComponents::default();
        let exact = dense_inverse_oracle(&d, &theta).unwrap();
        let mut prev = f64::INFINITY;
        for r in 0..=5 {
            let err = neumann_inverse(&d, &theta, r).unwrap().to_dense().max_abs_diff(&exact).unwrap();
            assert!(err < prev, "r = {r}: {err} >= {prev}");
            prev = err;
        }
    }

    #[test]
    fn exact_paths_agree() {
        let d = example();
        let theta = VarianceComponents::default();
        let dense = dense_inverse_oracle(&d, &theta).unwrap();
        let sm = sherman_morrison_inverse(&d, &theta).unwrap();
        let cbm = exact_structured_inverse(&d, &theta).unwrap().to_dense();
        assert!(sm.max_abs_diff(&dense).unwrap() < 1e-8);
        assert!(cbm.max_abs_diff(&dense).unwrap() < 1e-9);
        assert!(sm.asymmetry() < 1e-10);
        let v = build_v(&d, &theta).unwrap().to_dense();
        assert!(v.matmul(&sm).unwrap().max_abs_from_identity() <= 1e-8);
    }

    #[test]
    fn sherman_morrison_balanced_makes_no_updates() {
        let d = Arc::new(Design::balanced(2, 2, 3).unwrap());
        let theta = VarianceComponents::default();
        let sm = sherman_morrison_inverse(&d, &theta).unwrap();
        assert_eq!(sm.max_abs_diff(&vcheck_inverse(&d, &theta).unwrap().to_dense()).unwrap(), 0.0);
    }

    #[test]
    fn method_names_round_trip() {
        for m in [
            Method::ExactDense,
            Method::ExactStructured,
            Method::ExactSm,
            Method::Vcheck,
            Method::VcheckTruncated,
            Method::Asymptotic,
            Method::Neumann(3),
            Method::Balanced,
        ] {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
        assert_eq!("neumann".parse::<Method>().unwrap(), Method::Neumann(0));
        assert!("neumann-x".parse::<Method>().is_err());
        assert!("cholesky".parse::<Method>().is_err());
    }
}
