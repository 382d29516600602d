//! Numerical checks of the Khatri–Rao identities and of the matrix and
//! scalar inequalities behind the large-grid approximation.
//!
//! Every check builds one side by explicit dense Khatri–Rao assembly and the
//! other side independently (compressed algebra or direct summation), and
//! reports the discrepancy rather than asserting.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::covariance::VarianceComponents;
use crate::dense::{khatri_rao, DenseMatrix};
use crate::design::Design;
use crate::error::{Error, Result};
use crate::kr::{CellBlockMatrix, Norm, Side};
use crate::spectral::verify_diagonalization;

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

fn random_vec(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn kron_vec(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().flat_map(|x| b.iter().map(move |y| x * y)).collect()
}

/// `(v)_row ⊛ c` for a length-`gh` vector `v` and a length-`n` vector `c`.
fn row_kr(design: &Design, v: &[f64], c: &[f64]) -> Result<Vec<f64>> {
    let k = design.num_cells();
    let ones = vec![1; k];
    let out = khatri_rao(&DenseMatrix::column(v), &ones, &[1], &DenseMatrix::column(c), design.cells(), &[1])?;
    Ok((0..out.rows()).map(|p| out[(p, 0)]).collect())
}

/// `(K)_cell ⊛ R` for a `gh × gh` kernel and an `n × n` block matrix.
fn cell_kr(design: &Design, k: &DenseMatrix, r: &DenseMatrix) -> Result<DenseMatrix> {
    let ones = vec![1; design.num_cells()];
    khatri_rao(k, &ones, &ones, r, design.cells(), design.cells())
}

/// `1̃_m`, cellwise `1/√m_c`.
fn tilde_ones(design: &Design) -> Vec<f64> {
    let cell = design.cell_of_observation();
    let m = design.sizes_f64();
    cell.iter().map(|&c| 1.0 / m[c].sqrt()).collect()
}

/// `J̃_m = 1̃_m 1̃_mᵀ`.
fn j_tilde(design: &Design) -> DenseMatrix {
    let t = tilde_ones(design);
    DenseMatrix::from_fn(t.len(), t.len(), |p, q| t[p] * t[q])
}

/// `J̄_m`, entries `1/(m_a m_b)` between cells `a` and `b`.
fn j_bar(design: &Design) -> DenseMatrix {
    let cell = design.cell_of_observation();
    let m = design.sizes_f64();
    DenseMatrix::from_fn(cell.len(), cell.len(), |p, q| 1.0 / (m[cell[p]] * m[cell[q]]))
}

/// `I^f_m = diag(f_c I_{m_c})`.
fn i_f(design: &Design, f: &[f64]) -> DenseMatrix {
    let cell = design.cell_of_observation();
    DenseMatrix::from_diagonal(&cell.iter().map(|&c| f[c]).collect::<Vec<_>>())
}

fn max_abs_vec_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn bar_cbm(design: &Arc<Design>, kernel: DenseMatrix) -> Result<CellBlockMatrix> {
    CellBlockMatrix::new(design.clone(), vec![0.0; design.num_cells()], kernel, Norm::Bar)
}

/// Discrepancies of the five product identities, in the order
/// row-vector times tilde block, tilde times tilde, bar times bar, bar with
/// `I^f_m` on the right of the first factor, bar with `I^f_m` on the left.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lemma1Report {
    pub max_discrepancy: [f64; 5],
}

impl Lemma1Report {
    pub fn worst(&self) -> f64 {
        self.max_discrepancy.iter().copied().fold(0.0, f64::max)
    }
}

/// Inputs of the five product identities.
#[derive(Debug, Clone)]
pub struct Lemma1Inputs {
    pub p: DenseMatrix,
    pub q: DenseMatrix,
    pub r: DenseMatrix,
    pub s: DenseMatrix,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub f: Vec<f64>,
}

impl Lemma1Inputs {
    pub fn random(design: &Design, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (g, h) = (design.g(), design.h());
        Self {
            p: random_matrix(&mut rng, g, g, -1.0, 1.0),
            q: random_matrix(&mut rng, h, h, -1.0, 1.0),
            r: random_matrix(&mut rng, g, g, -1.0, 1.0),
            s: random_matrix(&mut rng, h, h, -1.0, 1.0),
            a: random_vec(&mut rng, g),
            b: random_vec(&mut rng, h),
            f: random_vec(&mut rng, design.num_cells()),
        }
    }
}

pub fn check_lemma1(design: &Arc<Design>, seed: u64) -> Result<Lemma1Report> {
    check_lemma1_with(design, &Lemma1Inputs::random(design, seed))
}

pub fn check_lemma1_with(design: &Arc<Design>, x: &Lemma1Inputs) -> Result<Lemma1Report> {
    let pq = x.p.kronecker(&x.q);
    let rs = x.r.kronecker(&x.s);
    let jt = j_tilde(design);
    let jb = j_bar(design);
    let k = design.num_cells();
    let mut out = [0.0; 5];

    // [(a⊗b)_row ⊛ 1̃]ᵀ [(P⊗Q) ⊛ J̃] = [(aᵀP)⊗(bᵀQ)]_col ⊛ 1̃ᵀ
    let lhs_vec = row_kr(design, &kron_vec(&x.a, &x.b), &tilde_ones(design))?;
    let lhs = cell_kr(design, &pq, &jt)?.transpose().matvec(&lhs_vec)?;
    let at_p = x.p.transpose().matvec(&x.a)?;
    let bt_q = x.q.transpose().matvec(&x.b)?;
    let rhs = row_kr(design, &kron_vec(&at_p, &bt_q), &tilde_ones(design))?;
    out[0] = max_abs_vec_diff(&lhs, &rhs);

    // tilde · tilde
    let lhs = cell_kr(design, &pq, &jt)?.matmul(&cell_kr(design, &rs, &jt)?)?;
    let zero = vec![0.0; k];
    let ta = CellBlockMatrix::new(design.clone(), zero.clone(), pq.clone(), Norm::Tilde)?;
    let tb = CellBlockMatrix::new(design.clone(), zero.clone(), rs.clone(), Norm::Tilde)?;
    out[1] = lhs.max_abs_diff(&ta.mul(&tb)?.to_dense())?;

    // bar · bar
    let lhs = cell_kr(design, &pq, &jb)?.matmul(&cell_kr(design, &rs, &jb)?)?;
    let ba = bar_cbm(design, pq.clone())?;
    let bb = bar_cbm(design, rs.clone())?;
    out[2] = lhs.max_abs_diff(&ba.mul(&bb)?.to_dense())?;

    // [(P⊗Q) ⊛ J̄ I^f] [(R⊗S) ⊛ J̄]
    let f_mat = i_f(design, &x.f);
    let lhs = cell_kr(design, &pq, &jb.matmul(&f_mat)?)?.matmul(&cell_kr(design, &rs, &jb)?)?;
    let rhs = ba.cell_diag_sandwich(&x.f, Side::Right)?.mul(&bb)?;
    out[3] = lhs.max_abs_diff(&rhs.to_dense())?;

    // [(P⊗Q) ⊛ I^f J̄] [(R⊗S) ⊛ J̄] = [(P⊗Q) M⁻¹ (R⊗S)] ⊛ (I^f J̄)
    let lhs = cell_kr(design, &pq, &f_mat.matmul(&jb)?)?.matmul(&cell_kr(design, &rs, &jb)?)?;
    let rhs = ba.cell_diag_sandwich(&x.f, Side::Left)?.mul(&bb)?;
    out[4] = lhs.max_abs_diff(&rhs.to_dense())?;

    Ok(Lemma1Report { max_discrepancy: out })
}

/// Discrepancies of bilinearity and the four inner/outer product formulas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lemma2Report {
    pub bilinearity: f64,
    /// `[(a⊗b)⊛c]ᵀ[(d⊗e)⊛f]` against the cellwise double sum.
    pub inner_product: f64,
    /// `[(a⊗b)⊛c][(d⊗e)⊛f]ᵀ` against `(adᵀ ⊗ beᵀ) ⊛ (c fᵀ)`.
    pub outer_product: f64,
    /// `[(a⊗b)⊛c]ᵀ[(P⊗Q)⊛R]` against its blockwise sum with weights `a_s b_t p_si q_tj`.
    pub row_times_matrix: f64,
    /// Quadratic form `[(a⊗b)⊛c]ᵀ[(P⊗Q)⊛R][(d⊗e)⊛f]` against its quadruple sum.
    pub quadratic_form: f64,
}

impl Lemma2Report {
    pub fn worst(&self) -> f64 {
        [self.bilinearity, self.inner_product, self.outer_product, self.row_times_matrix, self.quadratic_form]
            .into_iter()
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct Lemma2Inputs {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub d: Vec<f64>,
    pub e: Vec<f64>,
    pub f: Vec<f64>,
    pub p: DenseMatrix,
    pub p1: DenseMatrix,
    pub q: DenseMatrix,
    pub q1: DenseMatrix,
    pub r: DenseMatrix,
    pub r1: DenseMatrix,
}

impl Lemma2Inputs {
    pub fn random(design: &Design, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (g, h, n) = (design.g(), design.h(), design.n());
        Self {
            a: random_vec(&mut rng, g),
            b: random_vec(&mut rng, h),
            c: random_vec(&mut rng, n),
            d: random_vec(&mut rng, g),
            e: random_vec(&mut rng, h),
            f: random_vec(&mut rng, n),
            p: random_matrix(&mut rng, g, g, -1.0, 1.0),
            p1: random_matrix(&mut rng, g, g, -1.0, 1.0),
            q: random_matrix(&mut rng, h, h, -1.0, 1.0),
            q1: random_matrix(&mut rng, h, h, -1.0, 1.0),
            r: random_matrix(&mut rng, n, n, -1.0, 1.0),
            r1: random_matrix(&mut rng, n, n, -1.0, 1.0),
        }
    }
}

pub fn check_lemma2(design: &Arc<Design>, seed: u64) -> Result<Lemma2Report> {
    check_lemma2_with(design, &Lemma2Inputs::random(design, seed))
}

pub fn check_lemma2_with(design: &Arc<Design>, x: &Lemma2Inputs) -> Result<Lemma2Report> {
    let (g, h) = (design.g(), design.h());
    let ranges: Vec<_> = (0..design.num_cells()).map(|c| design.cell_range(c)).collect();

    // bilinearity in each argument
    let kr = |p: &DenseMatrix, q: &DenseMatrix, r: &DenseMatrix| cell_kr(design, &p.kronecker(q), r);
    let mut bilinearity = 0.0f64;
    for sign in [1.0, -1.0] {
        let q_sum = x.q.add(&x.q1.scale(sign))?;
        let lhs = kr(&x.p, &q_sum, &x.r)?;
        let rhs = kr(&x.p, &x.q, &x.r)?.add(&kr(&x.p, &x.q1, &x.r)?.scale(sign))?;
        bilinearity = bilinearity.max(lhs.max_abs_diff(&rhs)?);

        let p_sum = x.p.add(&x.p1.scale(sign))?;
        let lhs = kr(&p_sum, &x.q, &x.r)?;
        let rhs = kr(&x.p, &x.q, &x.r)?.add(&kr(&x.p1, &x.q, &x.r)?.scale(sign))?;
        bilinearity = bilinearity.max(lhs.max_abs_diff(&rhs)?);

        let r_sum = x.r.add(&x.r1.scale(sign))?;
        let lhs = kr(&x.p, &x.q, &r_sum)?;
        let rhs = kr(&x.p, &x.q, &x.r)?.add(&kr(&x.p, &x.q, &x.r1)?.scale(sign))?;
        bilinearity = bilinearity.max(lhs.max_abs_diff(&rhs)?);
    }

    let u = row_kr(design, &kron_vec(&x.a, &x.b), &x.c)?;
    let v = row_kr(design, &kron_vec(&x.d, &x.e), &x.f)?;
    let cell = |i: usize, j: usize| design.flat_index(i, j);
    let sub_dot = |c: usize, s: &[f64], t: &[f64]| -> f64 { ranges[c].clone().map(|p| s[p] * t[p]).sum() };

    // inner product
    let lhs: f64 = u.iter().zip(&v).map(|(s, t)| s * t).sum();
    let mut rhs = 0.0;
    for i in 0..g {
        for j in 0..h {
            rhs += x.a[i] * x.b[j] * x.d[i] * x.e[j] * sub_dot(cell(i, j), &x.c, &x.f);
        }
    }
    let inner_product = (lhs - rhs).abs();

    // outer product
    let lhs = DenseMatrix::column(&u).matmul(&DenseMatrix::column(&v).transpose())?;
    let ad = DenseMatrix::column(&x.a).matmul(&DenseMatrix::column(&x.d).transpose())?;
    let be = DenseMatrix::column(&x.b).matmul(&DenseMatrix::column(&x.e).transpose())?;
    let cf = DenseMatrix::column(&x.c).matmul(&DenseMatrix::column(&x.f).transpose())?;
    let outer_product = lhs.max_abs_diff(&cell_kr(design, &ad.kronecker(&be), &cf)?)?;

    // row vector times block matrix, block (i, j) of the result
    let big = kr(&x.p, &x.q, &x.r)?;
    let lhs = big.transpose().matvec(&u)?;
    let mut rhs = vec![0.0; design.n()];
    for i in 0..g {
        for j in 0..h {
            for col in ranges[cell(i, j)].clone() {
                let mut acc = 0.0;
                for s in 0..g {
                    for t in 0..h {
                        let w = x.a[s] * x.b[t] * x.p[(s, i)] * x.q[(t, j)];
                        acc += w * ranges[cell(s, t)].clone().map(|row| x.c[row] * x.r[(row, col)]).sum::<f64>();
                    }
                }
                rhs[col] = acc;
            }
        }
    }
    let row_times_matrix = max_abs_vec_diff(&lhs, &rhs);

    // quadratic form
    let lhs: f64 = u.iter().zip(big.matvec(&v)?).map(|(s, t)| s * t).sum();
    let mut rhs = 0.0;
    for i in 0..g {
        for j in 0..h {
            for s in 0..g {
                for t in 0..h {
                    let w = x.a[i] * x.b[j] * x.d[s] * x.e[t] * x.p[(i, s)] * x.q[(j, t)];
                    let mut block = 0.0;
                    for row in ranges[cell(i, j)].clone() {
                        for col in ranges[cell(s, t)].clone() {
                            block += x.c[row] * x.r[(row, col)] * x.f[col];
                        }
                    }
                    rhs += w * block;
                }
            }
        }
    }
    let quadratic_form = (lhs - rhs).abs();

    Ok(Lemma2Report { bilinearity, inner_product, outer_product, row_times_matrix, quadratic_form })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lemma3Report {
    pub dimension: usize,
    /// `AB ≤ CB` entrywise.
    pub monotone: bool,
    /// Per entry, `(AB)_ij < (CB)_ij` exactly when some `k` has
    /// `C_ik > A_ik` and `B_kj > 0`.
    pub strictness_matches: bool,
    /// Number of entries where the inequality is strict.
    pub strict_entries: usize,
}

impl Lemma3Report {
    pub fn holds(&self) -> bool {
        self.monotone && self.strictness_matches
    }
}

/// Nonnegative `A ≤ C` and `B`, with roughly a third of the gaps `C − A` and
/// of the entries of `B` set to zero; nonzero values are at least 0.1.
pub fn check_lemma3(dimension: usize, seed: u64) -> Result<Lemma3Report> {
    if dimension == 0 {
        return Err(Error::InvalidArgument("dimension must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = dimension;
    let sparse = |rng: &mut ChaCha8Rng| if rng.random_bool(1.0 / 3.0) { 0.0 } else { rng.random_range(0.1..1.0) };
    let a = random_matrix(&mut rng, n, n, 0.0, 1.0);
    let gap = DenseMatrix::from_fn(n, n, |_, _| sparse(&mut rng));
    let b = DenseMatrix::from_fn(n, n, |_, _| sparse(&mut rng));
    let c = a.add(&gap)?;
    check_lemma3_with(&a, &b, &c)
}

pub fn check_lemma3_with(a: &DenseMatrix, b: &DenseMatrix, c: &DenseMatrix) -> Result<Lemma3Report> {
    let n = a.rows();
    let ab = a.matmul(b)?;
    let cb = c.matmul(b)?;
    let scale = cb.max_abs().max(1.0);
    let tol = 1e-12 * scale;
    let mut monotone = true;
    let mut strictness_matches = true;
    let mut strict_entries = 0;
    for j in 0..n {
        for i in 0..n {
            let diff = cb[(i, j)] - ab[(i, j)];
            if diff < -tol {
                monotone = false;
            }
            let strict = diff > tol;
            strict_entries += usize::from(strict);
            let predicted = (0..n).any(|k| c[(i, k)] > a[(i, k)] && b[(k, j)] > 0.0);
            if strict != predicted {
                strictness_matches = false;
            }
        }
    }
    Ok(Lemma3Report { dimension: n, monotone, strictness_matches, strict_entries })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lemma4Report {
    /// `max_ij (T^l − bound_l)_ij` for `l = 1..=l_max`; nonpositive means the bound holds.
    pub max_excess: Vec<f64>,
}

impl Lemma4Report {
    pub fn holds(&self, tol: f64) -> bool {
        self.max_excess.iter().all(|&e| e <= tol)
    }
}

/// Powers of `T = (J̄_g⊗I_h)⊛J̄_m + (I_g⊗J̄_h)⊛J̄_m + (J̄_g⊗J̄_h)⊛J̄_m`
/// (with `J̄_g = J_g/g`) against
/// `m_L^{1−l} [(J̄_g⊗I_h)⊛J̄_m + (I_g⊗J̄_h)⊛J̄_m] + (3^l−2) m_L^{1−l} (J̄_g⊗J̄_h)⊛J̄_m`.
pub fn check_lemma4(design: &Arc<Design>, l_max: usize) -> Result<Lemma4Report> {
    let (g, h) = (design.g() as f64, design.h() as f64);
    let k = design.num_cells();
    let kernel = |f: &dyn Fn(usize, usize, usize, usize) -> f64| {
        DenseMatrix::from_fn(k, k, |x, y| {
            let (i, j) = design.cell_coords(x);
            let (p, q) = design.cell_coords(y);
            f(i, j, p, q)
        })
    };
    let mean_g_id_h = kernel(&|_, j, _, q| if j == q { 1.0 / g } else { 0.0 });
    let id_g_mean_h = kernel(&|i, _, p, _| if i == p { 1.0 / h } else { 0.0 });
    let mean_both = kernel(&|_, _, _, _| 1.0 / (g * h));
    let main = bar_cbm(design, mean_g_id_h.add(&id_g_mean_h)?)?.to_dense();
    let grand = bar_cbm(design, mean_both)?.to_dense();
    let t = main.add(&grand)?;
    let m_l = design.m_min() as f64;
    let mut power = t.clone();
    let mut max_excess = Vec::with_capacity(l_max);
    for l in 1..=l_max {
        if l > 1 {
            power = power.matmul(&t)?;
        }
        let s = m_l.powi(1 - l as i32);
        let bound = main.scale(s).add(&grand.scale((3f64.powi(l as i32) - 2.0) * s))?;
        let excess = power.sub(&bound)?;
        let worst = (0..excess.cols())
            .flat_map(|q| (0..excess.rows()).map(move |p| (p, q)))
            .map(|(p, q)| excess[(p, q)])
            .fold(f64::NEG_INFINITY, f64::max);
        max_excess.push(worst);
    }
    Ok(Lemma4Report { max_excess })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lemma5Report {
    pub d2: f64,
    pub epsilon: f64,
    /// `G_ε = exp((ln d₂)² / ε²)`.
    pub g_epsilon: f64,
    /// Smallest and largest `g` on the evaluation grid.
    pub verified_range: (f64, f64),
    pub points: usize,
    /// `g^{−1−ε} ≤ d₂^{√ln g}/g ≤ g^{−1+ε}` at every grid point `g ≥ G_ε`.
    pub holds: bool,
    /// The lower bound at every grid point, including `g < G_ε`.
    pub lower_holds_everywhere: bool,
}

/// Evaluates the sandwich bound in log space on a log-spaced grid of `g`
/// covering six decades above `max(G_ε, 2)`, plus a grid below `G_ε` for the
/// lower bound alone.
pub fn check_lemma5(d2: f64, epsilon: f64) -> Result<Lemma5Report> {
    if !(d2 > 1.0 && d2.is_finite()) {
        return Err(Error::InvalidArgument(format!("d2 must exceed 1, got {d2}")));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidArgument(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    let ln_d2 = d2.ln();
    let ln_g_eps = (ln_d2 / epsilon).powi(2);
    let points = 241;
    let lo = ln_g_eps.max(2f64.ln());
    let hi = lo + 6.0 * 10f64.ln();
    // log of the middle term and of both bounds, all relative to ln g
    let mid = |ln_g: f64| ln_g.sqrt() * ln_d2 - ln_g;
    let tol = |ln_g: f64| 1e-12 * ln_g.max(1.0);
    let mut holds = true;
    let mut lower_holds_everywhere = true;
    for s in 0..points {
        let ln_g = lo + (hi - lo) * s as f64 / (points - 1) as f64;
        let m = mid(ln_g);
        let (lower, upper) = (-(1.0 + epsilon) * ln_g, (-1.0 + epsilon) * ln_g);
        if m < lower - tol(ln_g) || m > upper + tol(ln_g) {
            holds = false;
        }
        let below = ln_g * s as f64 / (points - 1) as f64;
        if below > 0.0 && mid(below) < -(1.0 + epsilon) * below - tol(below) {
            lower_holds_everywhere = false;
        }
    }
    Ok(Lemma5Report {
        d2,
        epsilon,
        g_epsilon: ln_g_eps.exp(),
        verified_range: (lo.exp(), hi.exp()),
        points,
        holds,
        lower_holds_everywhere,
    })
}

/// Suites runnable from the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Lemma1,
    Lemma2,
    Lemma3,
    Lemma4,
    Lemma5,
    Spectral,
}

impl Suite {
    pub const ALL: [Suite; 6] = [Suite::Lemma1, Suite::Lemma2, Suite::Lemma3, Suite::Lemma4, Suite::Lemma5, Suite::Spectral];

    pub fn name(&self) -> &'static str {
        match self {
            Suite::Lemma1 => "lemma1",
            Suite::Lemma2 => "lemma2",
            Suite::Lemma3 => "lemma3",
            Suite::Lemma4 => "lemma4",
            Suite::Lemma5 => "lemma5",
            Suite::Spectral => "spectral",
        }
    }

    /// Parses a suite name; `all` expands to every suite.
    pub fn parse_list(s: &str) -> Result<Vec<Suite>> {
        if s.eq_ignore_ascii_case("all") {
            return Ok(Suite::ALL.to_vec());
        }
        Suite::ALL
            .iter()
            .find(|x| x.name().eq_ignore_ascii_case(s))
            .map(|x| vec![*x])
            .ok_or_else(|| Error::Parse(format!("unknown suite {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteOutcome {
    pub suite: Suite,
    pub instances: usize,
    /// Worst discrepancy or violation seen; meaning depends on the suite.
    pub worst: f64,
    pub passed: bool,
    /// Description of the first failing instance, if any.
    pub failure: Option<String>,
}

impl fmt::Display for SuiteOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<9} {:>4} instances  worst {:>10.3e}  {}",
            self.suite.name(),
            self.instances,
            self.worst,
            if self.passed { "PASS" } else { "FAIL" }
        )?;
        if let Some(msg) = &self.failure {
            write!(f, "  ({msg})")?;
        }
        Ok(())
    }
}

/// Random design with `g, h ∈ [1, max_gh]` (at least 2 when `min2`) and cells in `1..=max_m`.
fn random_design(rng: &mut ChaCha8Rng, max_gh: usize, max_m: usize) -> Result<Arc<Design>> {
    let g = rng.random_range(1..=max_gh);
    let h = rng.random_range(1..=max_gh);
    let cells = (0..g * h).map(|_| rng.random_range(1..=max_m)).collect();
    Ok(Arc::new(Design::new(g, h, cells)?))
}

/// Runs one suite over `instances` random instances derived from `seed`.
pub fn run_suite(suite: Suite, instances: usize, seed: u64) -> Result<SuiteOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (suite as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut worst = 0.0f64;
    let mut failure = None;
    let mut note = |ok: bool, value: f64, what: String, failure: &mut Option<String>| {
        worst = worst.max(value);
        if !ok && failure.is_none() {
            *failure = Some(what);
        }
    };
    for _ in 0..instances {
        let inst_seed: u64 = rng.random();
        match suite {
            Suite::Lemma1 => {
                let d = random_design(&mut rng, 4, 4)?;
                let r = check_lemma1(&d, inst_seed)?;
                note(r.worst() <= 1e-12, r.worst(), format!("design {:?} seed {inst_seed}", d.cells()), &mut failure);
            }
            Suite::Lemma2 => {
                let d = random_design(&mut rng, 4, 4)?;
                let r = check_lemma2(&d, inst_seed)?;
                note(r.worst() <= 1e-12, r.worst(), format!("design {:?} seed {inst_seed}", d.cells()), &mut failure);
            }
            Suite::Lemma3 => {
                let dim = rng.random_range(1..=20);
                let r = check_lemma3(dim, inst_seed)?;
                let bad = if r.holds() { 0.0 } else { 1.0 };
                note(r.holds(), bad, format!("dimension {dim} seed {inst_seed}"), &mut failure);
            }
            Suite::Lemma4 => {
                let d = random_design(&mut rng, 5, 4)?;
                let r = check_lemma4(&d, 4)?;
                let excess = r.max_excess.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                note(r.holds(1e-12), excess.max(0.0), format!("design {:?}", d.cells()), &mut failure);
            }
            Suite::Lemma5 => {
                let d2 = 1.0 + rng.random_range(1e-4..9.0);
                let eps = rng.random_range(0.05..0.95);
                let r = check_lemma5(d2, eps)?;
                let ok = r.holds && r.lower_holds_everywhere;
                note(ok, if ok { 0.0 } else { 1.0 }, format!("d2 {d2} epsilon {eps}"), &mut failure);
            }
            Suite::Spectral => {
                let d = random_design(&mut rng, 5, 5)?;
                let theta = VarianceComponents::new(
                    rng.random_range(0.1..10.0),
                    rng.random_range(0.1..10.0),
                    rng.random_range(0.1..10.0),
                    rng.random_range(0.1..10.0),
                )?;
                let r = verify_diagonalization(&d, &theta)?;
                let rel = (r.residual_max / 1e-10).max(r.eig_mismatch / (1e-8 * r.lambda1)) * 1e-10;
                note(r.passes(1e-10, 1e-8), rel, format!("design {:?} theta {theta:?}", d.cells()), &mut failure);
            }
        }
    }
    Ok(SuiteOutcome { suite, instances, worst, passed: failure.is_none(), failure })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example() -> Arc<Design> {
        Arc::new(Design::from_rows(&[vec![2, 1, 3], vec![1, 2, 1]]).unwrap())
    }

    #[test]
    fn lemma1_on_reference_layout() {
        let r = check_lemma1(&example(), 3).unwrap();
        assert!(r.worst() <= 1e-12, "{r:?}");
    }

    #[test]
    fn lemma1_identity_inputs_are_exact() {
        let d = example();
        let mut x = Lemma1Inputs::random(&d, 1);
        x.p = DenseMatrix::identity(2);
        x.r = DenseMatrix::identity(2);
        x.q = DenseMatrix::identity(3);
        x.s = DenseMatrix::identity(3);
        let r = check_lemma1_with(&d, &x).unwrap();
        assert!(r.max_discrepancy[1] <= 1e-15);
    }

    #[test]
    fn lemma1_unit_weights_reduce_to_plain_bar_product() {
        let d = example();
        let mut x = Lemma1Inputs::random(&d, 5);
        x.f = vec![1.0; d.num_cells()];
        let r = check_lemma1_with(&d, &x).unwrap();
        assert!((r.max_discrepancy[3] - r.max_discrepancy[2]).abs() <= 1e-15);
    }

    #[test]
    fn lemma2_on_reference_layout() {
        let r = check_lemma2(&example(), 11).unwrap();
        assert!(r.worst() <= 1e-12, "{r:?}");
    }

    #[test]
    fn lemma2_zero_vectors() {
        let d = example();
        let mut x = Lemma2Inputs::random(&d, 2);
        x.a = vec![0.0; 2];
        x.d = vec![0.0; 2];
        let r = check_lemma2_with(&d, &x).unwrap();
        assert_eq!(r.inner_product, 0.0);
        assert_eq!(r.quadratic_form, 0.0);
    }

    #[test]
    fn lemma2_unit_vectors() {
        let d = example();
        let mut x = Lemma2Inputs::random(&d, 4);
        x.d = x.a.clone();
        x.e = x.b.clone();
        x.f = x.c.clone();
        let u = row_kr(&d, &kron_vec(&x.a, &x.b), &x.c).unwrap();
        let norm2: f64 = u.iter().map(|v| v * v).sum();
        let mut expect = 0.0;
        for i in 0..2 {
            for j in 0..3 {
                let c2: f64 = d.cell_range(d.flat_index(i, j)).map(|p| x.c[p] * x.c[p]).sum();
                expect += x.a[i].powi(2) * x.b[j].powi(2) * c2;
            }
        }
        assert!((norm2 - expect).abs() < 1e-14);
        assert!(check_lemma2_with(&d, &x).unwrap().inner_product < 1e-14);
    }

    #[test]
    fn lemma3_cases() {
        let a = DenseMatrix::from_fn(4, 4, |i, j| (i + j) as f64 / 8.0);
        let b = DenseMatrix::from_fn(4, 4, |i, j| 0.5 + (i * j) as f64);
        let eq = check_lemma3_with(&a, &b, &a).unwrap();
        assert!(eq.holds() && eq.strict_entries == 0);
        let c = a.add(&DenseMatrix::from_fn(4, 4, |_, _| 0.25)).unwrap();
        let strict = check_lemma3_with(&a, &b, &c).unwrap();
        assert!(strict.holds() && strict.strict_entries == 16);
        let r = check_lemma3(20, 9).unwrap();
        assert!(r.holds(), "{r:?}");
        assert!(check_lemma3(0, 1).is_err());
    }

    #[test]
    fn lemma4_cases() {
        let r = check_lemma4(&example(), 4).unwrap();
        assert!(r.holds(1e-12), "{r:?}");
        // l = 1 is T against itself
        assert!(r.max_excess[0].abs() < 1e-15);
        let d = Arc::new(Design::balanced(3, 3, 2).unwrap());
        assert!(check_lemma4(&d, 4).unwrap().holds(1e-12));
        let d = Arc::new(Design::new(4, 4, (0..16).map(|c| 1 + c % 4).collect()).unwrap());
        assert!(check_lemma4(&d, 4).unwrap().holds(1e-12));
    }

    #[test]
    fn lemma5_cases() {
        let r = check_lemma5(1.0001, 0.5).unwrap();
        assert!(r.g_epsilon < 1.0 + 1e-6 && r.holds && r.lower_holds_everywhere);
        assert!(r.verified_range.0 <= 2.0 + 1e-12 && r.verified_range.1 >= 1e6);
        let r = check_lemma5(2.0, 0.9).unwrap();
        assert!(r.holds && r.lower_holds_everywhere);
        assert!(check_lemma5(1.0, 0.5).is_err());
        assert!(check_lemma5(2.0, 1.0).is_err());
    }

    #[test]
    fn lemma5_upper_bound_fails_below_threshold() {
        // at g = G_ε / 10 the upper bound is violated for d2 = 10, ε = 0.5
        let (d2, eps) = (10f64, 0.5);
        let ln_g = (d2.ln() / eps).powi(2) - 10f64.ln();
        assert!(ln_g.sqrt() * d2.ln() - ln_g > (-1.0 + eps) * ln_g);
    }

    #[test]
    fn suites_pass() {
        for suite in Suite::ALL {
            let out = run_suite(suite, 8, 42).unwrap();
            assert!(out.passed, "{out}");
        }
        assert_eq!(Suite::parse_list("all").unwrap().len(), 6);
        assert_eq!(Suite::parse_list("Lemma4").unwrap(), vec![Suite::Lemma4]);
        assert!(Suite::parse_list("lemma9").is_err());
    }
}
