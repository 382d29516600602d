//! Monte Carlo accuracy experiments.
//!
//! Case 1 grows the grid with cell sizes drawn uniformly from a fixed range
//! and scores the block-diagonal approximation. Case 2 fixes the grid and
//! scores Neumann truncations for a range of imbalance levels `Δ`. The score
//! is the per-replicate residual `(1/n) ‖V V̂⁻¹ − I‖_F`; its mean over
//! replicates is the AIR.
//!
//! Output rows are a pure function of the configuration: every replicate
//! draws its design from a seed mixed from `(seed, g, h, m_L index, Δ index,
//! replicate)`, and rows are sorted before being returned.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;

use crate::covariance::{build_v, VarianceComponents};
use crate::design::Design;
use crate::error::{Error, Result};
use crate::inverse::{neumann_sequence, InverseEstimate, Method};
use crate::kr::CellBlockMatrix;

pub const CSV_HEADER: &str = "case,g,h,m_L,delta_target,realized_delta,r,replicate,n,air,max_resid,elapsed_ms,method,seed";

/// Default `n` above which residuals are computed in compressed form.
pub const DEFAULT_DENSE_CAP: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Case {
    Case1,
    Case2,
}

impl Case {
    pub fn name(&self) -> &'static str {
        match self {
            Case::Case1 => "case1",
            Case::Case2 => "case2",
        }
    }
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Case {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "case1" | "1" => Ok(Case::Case1),
            "case2" | "2" => Ok(Case::Case2),
            other => Err(Error::Parse(format!("unknown case {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub case: Case,
    pub grid: Vec<(usize, usize)>,
    pub theta: VarianceComponents,
    pub replicates: usize,
    /// Inclusive cell-size range for case 1.
    pub cell_range: (usize, usize),
    pub m_l: Vec<usize>,
    pub deltas: Vec<f64>,
    pub r: Vec<usize>,
    pub seed: u64,
    pub method: Method,
    pub dense_cap: usize,
    /// When false, `elapsed_ms` is written as 0 so output is byte-stable.
    pub record_timing: bool,
    /// Worker count; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl SimConfig {
    /// Desk-scale case 1: grids (10,15), (20,25), (50,45), cells uniform on 1..=15, N = 20.
    pub fn case1() -> Self {
        Self {
            case: Case::Case1,
            grid: vec![(10, 15), (20, 25), (50, 45)],
            theta: VarianceComponents::default(),
            replicates: 20,
            cell_range: (1, 15),
            m_l: Vec::new(),
            deltas: Vec::new(),
            r: Vec::new(),
            seed: 2024,
            method: Method::Asymptotic,
            dense_cap: DEFAULT_DENSE_CAP,
            record_timing: false,
            threads: None,
        }
    }

    /// Desk-scale case 2: grid (10,15), m_L = 10, Δ ∈ {0.15, 0.25, 0.35, 0.45}, r = 0..=5, N = 20.
    pub fn case2() -> Self {
        Self {
            case: Case::Case2,
            grid: vec![(10, 15)],
            m_l: vec![10],
            deltas: vec![0.15, 0.25, 0.35, 0.45],
            r: (0..=5).collect(),
            method: Method::Neumann(0),
            ..Self::case1()
        }
    }

    pub fn for_case(case: Case) -> Self {
        match case {
            Case::Case1 => Self::case1(),
            Case::Case2 => Self::case2(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.theta.validate()?;
        if self.replicates == 0 {
            return Err(Error::InvalidArgument("at least one replicate is required".into()));
        }
        if self.grid.is_empty() {
            return Err(Error::InvalidArgument("grid list is empty".into()));
        }
        if self.grid.iter().any(|&(g, h)| g == 0 || h == 0) {
            return Err(Error::InvalidArgument("grid dimensions must be positive".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::InvalidArgument("thread count must be positive".into()));
        }
        match self.case {
            Case::Case1 => {
                let (lo, hi) = self.cell_range;
                if lo == 0 || lo > hi {
                    return Err(Error::InvalidArgument(format!("bad cell range {lo}..={hi}")));
                }
            }
            Case::Case2 => {
                if !matches!(self.method, Method::Neumann(_)) {
                    return Err(Error::InvalidArgument("case 2 scores Neumann truncations only".into()));
                }
                if self.r.is_empty() || self.m_l.is_empty() || self.deltas.is_empty() {
                    return Err(Error::InvalidArgument("case 2 needs nonempty r, m_L and delta lists".into()));
                }
                if self.m_l.contains(&0) {
                    return Err(Error::InvalidArgument("m_L must be positive".into()));
                }
                if let Some(d) = self.deltas.iter().find(|d| !(0.0..1.0).contains(*d)) {
                    return Err(Error::InvalidArgument(format!("delta {d} outside [0, 1)")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimRow {
    pub case: Case,
    pub g: usize,
    pub h: usize,
    /// `−1` when not applicable.
    pub m_l: i64,
    /// `−1` when not applicable.
    pub delta_target: f64,
    pub realized_delta: f64,
    /// `−1` when not applicable.
    pub r: i64,
    pub replicate: usize,
    pub n: usize,
    pub air: f64,
    pub max_resid: f64,
    pub elapsed_ms: f64,
    pub method: String,
    pub seed: u64,
}

impl SimRow {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{:e},{:e},{},{},{}",
            self.case,
            self.g,
            self.h,
            self.m_l,
            self.delta_target,
            self.realized_delta,
            self.r,
            self.replicate,
            self.n,
            self.air,
            self.max_resid,
            self.elapsed_ms,
            self.method,
            self.seed
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub case: Case,
    pub g: usize,
    pub h: usize,
    pub m_l: i64,
    pub delta_target: f64,
    pub r: i64,
    pub method: String,
    pub replicates: usize,
    pub mean_air: f64,
    pub sd_air: f64,
    pub mean_realized_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimReport {
    pub rows: Vec<SimRow>,
}

impl SimReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for row in &self.rows {
            writeln!(w, "{}", row.to_csv_line())?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is ascii")
    }

    /// Means and standard deviations of the residual over replicates,
    /// grouped by everything except the replicate index, in row order.
    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut out: Vec<SummaryRow> = Vec::new();
        let mut sums: Vec<(f64, f64, f64)> = Vec::new();
        for row in &self.rows {
            let pos = out.iter().position(|s| {
                s.case == row.case
                    && (s.g, s.h, s.m_l, s.r) == (row.g, row.h, row.m_l, row.r)
                    && s.delta_target == row.delta_target
                    && s.method == row.method
            });
            let i = pos.unwrap_or_else(|| {
                out.push(SummaryRow {
                    case: row.case,
                    g: row.g,
                    h: row.h,
                    m_l: row.m_l,
                    delta_target: row.delta_target,
                    r: row.r,
                    method: row.method.clone(),
                    replicates: 0,
                    mean_air: 0.0,
                    sd_air: 0.0,
                    mean_realized_delta: 0.0,
                });
                sums.push((0.0, 0.0, 0.0));
                out.len() - 1
            });
            out[i].replicates += 1;
            sums[i].0 += row.air;
            sums[i].1 += row.air * row.air;
            sums[i].2 += row.realized_delta;
        }
        for (s, (sum, sq, delta)) in out.iter_mut().zip(sums) {
            let k = s.replicates as f64;
            s.mean_air = sum / k;
            s.sd_air = if s.replicates > 1 { ((sq - sum * sum / k) / (k - 1.0)).max(0.0).sqrt() } else { 0.0 };
            s.mean_realized_delta = delta / k;
        }
        out
    }

    /// Mean residual over the rows selected by `keep`.
    pub fn mean_air(&self, keep: impl Fn(&SimRow) -> bool) -> Option<f64> {
        let (sum, count) = self.rows.iter().filter(|r| keep(r)).fold((0.0, 0usize), |(s, c), r| (s + r.air, c + 1));
        (count > 0).then(|| sum / count as f64)
    }
}

/// `V V̂⁻¹ − I` summarized as the scaled Frobenius norm and max-abs entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residual {
    /// `(1/n) ‖V V̂⁻¹ − I‖_F`.
    pub air: f64,
    pub max_resid: f64,
}

/// Residual of an inverse estimate, densely for `n ≤ dense_cap` and in
/// compressed form above it when the estimate is structured.
pub fn inversion_residual(v: &CellBlockMatrix, estimate: &InverseEstimate, dense_cap: usize) -> Result<Residual> {
    let n = v.design().n();
    if let InverseEstimate::Structured(est) = estimate {
        if n > dense_cap {
            let prod = v.mul(est)?;
            return Ok(Residual { air: prod.frobenius_from_identity() / n as f64, max_resid: prod.max_abs_from_identity() });
        }
    }
    let dense = estimate.to_dense();
    if dense.rows() != n || dense.cols() != n {
        return Err(Error::DimensionMismatch(format!("estimate is {}x{} for n = {n}", dense.rows(), dense.cols())));
    }
    let prod = v.apply_dense(&dense)?;
    Ok(Residual { air: prod.frobenius_from_identity() / n as f64, max_resid: prod.max_abs_from_identity() })
}

/// Per-replicate AIR contribution with the default dense cap.
pub fn air(v: &CellBlockMatrix, estimate: &InverseEstimate) -> Result<f64> {
    Ok(inversion_residual(v, estimate, DEFAULT_DENSE_CAP)?.air)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Replicate seed: successive splitmix64 absorption of
/// `(g, h, m_L index, Δ index, replicate)` into `seed`.
pub fn replicate_seed(seed: u64, g: usize, h: usize, m_l_index: usize, delta_index: usize, replicate: usize) -> u64 {
    [g, h, m_l_index, delta_index, replicate]
        .into_iter()
        .fold(splitmix64(seed), |acc, x| splitmix64(acc ^ x as u64))
}

fn with_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

fn elapsed_ms(start: Instant, record: bool) -> f64 {
    if record {
        start.elapsed().as_secs_f64() * 1e3
    } else {
        0.0
    }
}

pub fn run(config: &SimConfig) -> Result<SimReport> {
    match config.case {
        Case::Case1 => run_case1(config),
        Case::Case2 => run_case2(config),
    }
}

pub fn run_case1(config: &SimConfig) -> Result<SimReport> {
    config.validate()?;
    if config.case != Case::Case1 {
        return Err(Error::InvalidArgument("configuration is not for case 1".into()));
    }
    let tasks: Vec<(usize, usize, usize)> = config
        .grid
        .iter()
        .flat_map(|&(g, h)| (0..config.replicates).map(move |b| (g, h, b)))
        .collect();
    let theta = config.theta;
    let (lo, hi) = config.cell_range;
    let rows = with_pool(config.threads, || {
        tasks
            .par_iter()
            .map(|&(g, h, b)| -> Result<SimRow> {
                let seed = replicate_seed(config.seed, g, h, 0, 0, b);
                let design = Arc::new(Design::sample_uniform(g, h, lo, hi, seed)?);
                let v = build_v(&design, &theta)?;
                let start = Instant::now();
                let est = config.method.compute(&design, &theta)?;
                let elapsed = elapsed_ms(start, config.record_timing);
                let res = inversion_residual(&v, &est, config.dense_cap)?;
                Ok(SimRow {
                    case: Case::Case1,
                    g,
                    h,
                    m_l: -1,
                    delta_target: -1.0,
                    realized_delta: design.delta(),
                    r: match config.method {
                        Method::Neumann(r) => r as i64,
                        _ => -1,
                    },
                    replicate: b,
                    n: design.n(),
                    air: res.air,
                    max_resid: res.max_resid,
                    elapsed_ms: elapsed,
                    method: config.method.name().to_string(),
                    seed,
                })
            })
            .collect::<Result<Vec<_>>>()
    })??;
    Ok(SimReport { rows })
}

pub fn run_case2(config: &SimConfig) -> Result<SimReport> {
    config.validate()?;
    if config.case != Case::Case2 {
        return Err(Error::InvalidArgument("configuration is not for case 2".into()));
    }
    let mut tasks = Vec::new();
    for &(g, h) in &config.grid {
        for (li, &m_l) in config.m_l.iter().enumerate() {
            for (di, &delta) in config.deltas.iter().enumerate() {
                for b in 0..config.replicates {
                    tasks.push((g, h, li, m_l, di, delta, b));
                }
            }
        }
    }
    let theta = config.theta;
    let r_max = config.r.iter().copied().max().unwrap_or(0);
    let per_task = with_pool(config.threads, || {
        tasks
            .par_iter()
            .map(|&(g, h, li, m_l, di, delta, b)| -> Result<Vec<SimRow>> {
                let seed = replicate_seed(config.seed, g, h, li, di, b);
                let design = Arc::new(Design::sample_delta(g, h, m_l, delta, seed)?);
                let v = build_v(&design, &theta)?;
                let start = Instant::now();
                let sequence = neumann_sequence(&design, &theta, r_max)?;
                let elapsed = elapsed_ms(start, config.record_timing);
                config
                    .r
                    .iter()
                    .map(|&r| {
                        let est = InverseEstimate::Structured(sequence[r].clone());
                        let res = inversion_residual(&v, &est, config.dense_cap)?;
                        Ok(SimRow {
                            case: Case::Case2,
                            g,
                            h,
                            m_l: m_l as i64,
                            delta_target: delta,
                            realized_delta: design.delta(),
                            r: r as i64,
                            replicate: b,
                            n: design.n(),
                            air: res.air,
                            max_resid: res.max_resid,
                            elapsed_ms: elapsed,
                            method: Method::Neumann(r).name().to_string(),
                            seed,
                        })
                    })
                    .collect()
            })
            .collect::<Result<Vec<_>>>()
    })??;

    // canonical order: grid, m_L, Δ, r, replicate
    let mut keyed: Vec<((usize, usize, usize, usize, usize), SimRow)> = Vec::new();
    for (t, rows) in tasks.iter().zip(per_task) {
        let gi = config.grid.iter().position(|&x| x == (t.0, t.1)).unwrap_or(0);
        for (ri, row) in rows.into_iter().enumerate() {
            keyed.push(((gi, t.2, t.4, ri, t.6), row));
        }
    }
    keyed.sort_by_key(|(k, _)| *k);
    Ok(SimReport { rows: keyed.into_iter().map(|(_, r)| r).collect() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchEntry {
    pub method: Method,
    pub elapsed_ms: f64,
    pub max_resid: f64,
}

/// Wall-clock time of each method on one design. The dense oracle is added
/// when `n ≤ dense_cap` and not already listed.
pub fn bench_timing(
    design: &Arc<Design>,
    theta: &VarianceComponents,
    methods: &[Method],
    dense_cap: usize,
) -> Result<Vec<BenchEntry>> {
    let mut list = methods.to_vec();
    if design.n() <= dense_cap && !list.contains(&Method::ExactDense) {
        list.push(Method::ExactDense);
    }
    let v = build_v(design, theta)?;
    let mut out = Vec::with_capacity(list.len());
    for m in list {
        if m == Method::Balanced && !design.is_balanced() {
            continue;
        }
        if m.is_dense() && design.n() > dense_cap {
            continue;
        }
        let start = Instant::now();
        let est = m.compute(design, theta)?;
        let elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
        let max_resid = inversion_residual(&v, &est, dense_cap)?.max_resid;
        out.push(BenchEntry { method: m, elapsed_ms, max_resid });
    }
    Ok(out)
}
