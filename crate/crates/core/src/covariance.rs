//! Model matrices of the crossed random-effects model
//!
//! ```text
//!     y_ijk = μ + α_i + β_j + γ_ij + e_ijk
//! ```
//!
//! with independent zero-mean effects of variances `θ = (σ²_α, σ²_β, σ²_γ, σ²_e)`.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dense::DenseMatrix;
use crate::design::Design;
use crate::error::{Error, Result};
use crate::kr::CellBlockMatrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceComponents {
    pub sigma2_alpha: f64,
    pub sigma2_beta: f64,
    pub sigma2_gamma: f64,
    pub sigma2_e: f64,
}

impl Default for VarianceComponents {
    /// The reference setting `(5, 7, 3, 4)` used throughout the simulations.
    fn default() -> Self {
        Self { sigma2_alpha: 5.0, sigma2_beta: 7.0, sigma2_gamma: 3.0, sigma2_e: 4.0 }
    }
}

impl VarianceComponents {
    pub fn new(sigma2_alpha: f64, sigma2_beta: f64, sigma2_gamma: f64, sigma2_e: f64) -> Result<Self> {
        let theta = Self { sigma2_alpha, sigma2_beta, sigma2_gamma, sigma2_e };
        theta.validate()?;
        Ok(theta)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sigma2_alpha", self.sigma2_alpha),
            ("sigma2_beta", self.sigma2_beta),
            ("sigma2_gamma", self.sigma2_gamma),
            ("sigma2_e", self.sigma2_e),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidVariance(format!("{name} = {v} must be finite and nonnegative")));
            }
        }
        if self.sigma2_e <= 0.0 {
            return Err(Error::InvalidVariance("sigma2_e must be positive".into()));
        }
        Ok(())
    }

    /// Same components with the interaction variance removed.
    pub fn without_interaction(&self) -> Self {
        Self { sigma2_gamma: 0.0, ..*self }
    }
}

/// `S = σ²_α (I_g⊗J_h) + σ²_β (J_g⊗I_h) + σ²_γ (I_g⊗I_h)`.
pub fn random_effects_kernel(design: &Design, theta: &VarianceComponents) -> DenseMatrix {
    let k = design.num_cells();
    DenseMatrix::from_fn(k, k, |a, b| {
        let (i, j) = design.cell_coords(a);
        let (p, q) = design.cell_coords(b);
        let mut s = 0.0;
        if i == p {
            s += theta.sigma2_alpha;
        }
        if j == q {
            s += theta.sigma2_beta;
        }
        if i == p && j == q {
            s += theta.sigma2_gamma;
        }
        s
    })
}

/// Random-effects covariance `D(θ)`, zero diagonal part.
pub fn build_d(design: &Arc<Design>, theta: &VarianceComponents) -> Result<CellBlockMatrix> {
    theta.validate()?;
    CellBlockMatrix::from_unnormalized_kernel(design.clone(), &random_effects_kernel(design, theta))
}

/// `V(θ) = σ²_e I_n + D(θ)`.
pub fn build_v(design: &Arc<Design>, theta: &VarianceComponents) -> Result<CellBlockMatrix> {
    Ok(build_d(design, theta)?.add_identity(theta.sigma2_e))
}

/// `V̌ = (σ²_e/m_U) diag(m_c I_{m_c}) + D(θ)`.
pub fn build_v_check(design: &Arc<Design>, theta: &VarianceComponents) -> Result<CellBlockMatrix> {
    let m_u = design.m_max() as f64;
    let w: Vec<f64> = design.sizes_f64().iter().map(|m| theta.sigma2_e * m / m_u).collect();
    let d = build_d(design, theta)?;
    CellBlockMatrix::cell_diagonal(design.clone(), w)?.add(&d)
}

/// Cell weights `1 − m_c/m_U` of `I^Δ_m`, so that `V = V̌ + σ²_e I^Δ_m`.
pub fn i_delta_weights(design: &Design) -> Vec<f64> {
    let m_u = design.m_max() as f64;
    design.sizes_f64().iter().map(|m| 1.0 - m / m_u).collect()
}

/// One draw of `y` in observation order, with Gaussian effects.
///
/// Draws `α` (g values), then `β` (h), then `γ` (gh, row-major), then `e` (n).
pub fn sample_responses(design: &Design, theta: &VarianceComponents, mu: f64, seed: u64) -> Result<Vec<f64>> {
    theta.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |var: f64, len: usize| -> Result<Vec<f64>> {
        let dist = Normal::new(0.0, var.sqrt()).map_err(|e| Error::InvalidVariance(e.to_string()))?;
        Ok((0..len).map(|_| dist.sample(&mut rng)).collect())
    };
    let alpha = draw(theta.sigma2_alpha, design.g())?;
    let beta = draw(theta.sigma2_beta, design.h())?;
    let gamma = draw(theta.sigma2_gamma, design.num_cells())?;
    let e = draw(theta.sigma2_e, design.n())?;
    let mut y = Vec::with_capacity(design.n());
    for c in 0..design.num_cells() {
        let (i, j) = design.cell_coords(c);
        let shift = mu + alpha[i] + beta[j] + gamma[c];
        y.extend(design.cell_range(c).map(|p| shift + e[p]));
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example() -> Arc<Design> {
        Arc::new(Design::from_rows(&[vec![2, 1, 3], vec![1, 2, 1]]).unwrap())
    }

    /// Covariance of two observations written straight from the model.
    fn cov_by_model(design: &Design, theta: &VarianceComponents, p: usize, q: usize) -> f64 {
        let cell = design.cell_of_observation();
        let (i, j) = design.cell_coords(cell[p]);
        let (k, l) = design.cell_coords(cell[q]);
        let mut v = 0.0;
        if i == k {
            v += theta.sigma2_alpha;
        }
        if j == l {
            v += theta.sigma2_beta;
        }
        if cell[p] == cell[q] {
            v += theta.sigma2_gamma;
        }
        if p == q {
            v += theta.sigma2_e;
        }
        v
    }

    #[test]
    fn validation() {
        assert!(VarianceComponents::new(1.0, 1.0, 1.0, 0.0).is_err());
        assert!(VarianceComponents::new(-1.0, 1.0, 1.0, 1.0).is_err());
        assert!(VarianceComponents::new(f64::NAN, 1.0, 1.0, 1.0).is_err());
        assert!(VarianceComponents::new(0.0, 0.0, 0.0, 1.0).is_ok());
        let t = VarianceComponents::default();
        assert_eq!((t.sigma2_alpha, t.sigma2_beta, t.sigma2_gamma, t.sigma2_e), (5.0, 7.0, 3.0, 4.0));
    }

    #[test]
    fn v_matches_model_covariance() {
        let d = example();
        let theta = VarianceComponents::default();
        let v = build_v(&d, &theta).unwrap().to_dense();
        let oracle = DenseMatrix::from_fn(d.n(), d.n(), |p, q| cov_by_model(&d, &theta, p, q));
        assert!(v.max_abs_diff(&oracle).unwrap() < 1e-12);
        assert_eq!(build_v(&d, &theta).unwrap().kernel_asymmetry(), 0.0);
    }

    #[test]
    fn pure_error_model() {
        let d = example();
        let theta = VarianceComponents::new(0.0, 0.0, 0.0, 4.0).unwrap();
        assert_eq!(build_d(&d, &theta).unwrap().max_abs(), 0.0);
        let v = build_v(&d, &theta).unwrap().to_dense();
        assert_eq!(v.max_abs_diff(&DenseMatrix::identity(d.n()).scale(4.0)).unwrap(), 0.0);
    }

    #[test]
    fn row_effect_only_on_unit_cells() {
        let d = Arc::new(Design::balanced(2, 3, 1).unwrap());
        let theta = VarianceComponents::new(1.0, 0.0, 0.0, 1.0).unwrap();
        let dd = build_d(&d, &theta).unwrap().to_dense();
        let expect = DenseMatrix::identity(2).kronecker(&DenseMatrix::from_fn(3, 3, |_, _| 1.0));
        assert_eq!(dd.max_abs_diff(&expect).unwrap(), 0.0);
    }

    #[test]
    fn d_is_psd_with_bounded_rank() {
        let d = example();
        let theta = VarianceComponents::new(0.3, 1.7, 2.2, 1.0).unwrap();
        let ev = build_d(&d, &theta).unwrap().to_dense().symmetric_eigenvalues().unwrap();
        let top = ev.last().copied().unwrap();
        assert!(ev[0] > -1e-12 * top);
        let rank = ev.iter().filter(|&&x| x > 1e-10 * top).count();
        assert!(rank <= d.g() + d.h() + d.num_cells());
        let v_ev = build_v(&d, &theta).unwrap().to_dense().symmetric_eigenvalues().unwrap();
        assert!(v_ev[0] >= theta.sigma2_e - 1e-10);
    }

    #[test]
    fn v_check_diagonal_and_gap() {
        let d = example();
        let theta = VarianceComponents::default();
        let vc = build_v_check(&d, &theta).unwrap();
        let expect = [8.0 / 3.0, 4.0 / 3.0, 4.0, 4.0 / 3.0, 8.0 / 3.0, 4.0 / 3.0];
        for (a, b) in vc.diag().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        let gap = build_v(&d, &theta).unwrap().sub(&vc).unwrap();
        assert_eq!(gap.kernel().max_abs(), 0.0);
        let w = i_delta_weights(&d);
        for (g, w) in gap.diag().iter().zip(&w) {
            assert!((g - theta.sigma2_e * w).abs() < 1e-15);
        }
    }

    #[test]
    fn balanced_v_check_equals_v() {
        let d = Arc::new(Design::balanced(3, 2, 4).unwrap());
        let theta = VarianceComponents::default();
        let v = build_v(&d, &theta).unwrap();
        let vc = build_v_check(&d, &theta).unwrap();
        assert_eq!(v.max_abs_diff(&vc).unwrap(), 0.0);
        assert!(i_delta_weights(&d).iter().all(|&w| w == 0.0));
    }

    #[test]
    fn i_delta_weights_small() {
        let d = Design::new(1, 2, vec![1, 3]).unwrap();
        let w = i_delta_weights(&d);
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-15 && w[1] == 0.0);
        let d = example();
        let max = i_delta_weights(&d).into_iter().fold(0.0, f64::max);
        assert!((max - d.delta()).abs() < 1e-15);
    }

    #[test]
    fn responses_are_reproducible() {
        let d = example();
        let theta = VarianceComponents::default();
        let a = sample_responses(&d, &theta, 1.5, 9).unwrap();
        assert_eq!(a, sample_responses(&d, &theta, 1.5, 9).unwrap());
        assert_ne!(a, sample_responses(&d, &theta, 1.5, 10).unwrap());
        let tiny = VarianceComponents::new(0.0, 0.0, 0.0, 1e-30).unwrap();
        let y = sample_responses(&d, &tiny, 2.0, 1).unwrap();
        assert!(y.iter().all(|v| (v - 2.0).abs() < 1e-12));
    }

    #[test]
    fn empirical_covariance_matches_v() {
        let d = Arc::new(Design::from_rows(&[vec![2, 1], vec![1, 1]]).unwrap());
        let theta = VarianceComponents::new(1.0, 2.0, 0.5, 1.5).unwrap();
        let v = build_v(&d, &theta).unwrap().to_dense();
        let n = d.n();
        let reps = 10_000;
        let mut acc = DenseMatrix::zeros(n, n);
        for r in 0..reps {
            let y = sample_responses(&d, &theta, 0.0, r as u64).unwrap();
            for q in 0..n {
                for p in 0..n {
                    acc[(p, q)] += y[p] * y[q];
                }
            }
        }
        let emp = acc.scale(1.0 / reps as f64);
        for q in 0..n {
            for p in 0..n {
                // var(y_p y_q) = V_pp V_qq + V_pq² for zero-mean Gaussians
                let se = ((v[(p, p)] * v[(q, q)] + v[(p, q)].powi(2)) / reps as f64).sqrt();
                assert!((emp[(p, q)] - v[(p, q)]).abs() < 5.0 * se, "entry ({p},{q})");
            }
        }
    }
}
