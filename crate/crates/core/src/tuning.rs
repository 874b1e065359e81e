//! Data-driven choices of the three tuning quantities: truncation
//! dimensions (cumulative proportion of variance), the smoothing
//! parameter (generalized cross validation over a grid), and the
//! bootstrap block length (minimum volatility).

use nalgebra::DMatrix;

use crate::basis::BasisSet;
use crate::bootstrap::block_partial_sums;
use crate::error::{Error, Result};
use crate::estimator::{build_penalty, fit_penalized, ModelLayout};
use crate::fdata::{FunctionalDataSet, ScoreSet};

/// Default cumulative-variance threshold for the dimension cut.
pub const DEFAULT_CPV_THRESHOLD: f64 = 0.85;

/// Number of points in the default smoothing grid.
pub const DEFAULT_LAMBDA_POINTS: usize = 40;

/// Fewest block-length candidates the volatility criterion accepts:
/// two boundary points on each side plus at least one interior point.
pub const MIN_MV_CANDIDATES: usize = 5;

/// Tuning settings with optional fixed overrides; a `None` means the
/// corresponding data-driven selector runs.
#[derive(Debug, Clone)]
pub struct TuningConfig {
    pub cpv_threshold: f64,
    pub lambda_grid: Vec<f64>,
    /// Block-length candidates; `None` uses the default grid for the
    /// sample size at hand.
    pub m_grid: Option<Vec<usize>>,
    pub fixed_dims: Option<Vec<usize>>,
    pub fixed_lambda: Option<f64>,
    pub fixed_block_length: Option<usize>,
}

impl Default for TuningConfig {
    fn default() -> Self {
        Self {
            cpv_threshold: DEFAULT_CPV_THRESHOLD,
            lambda_grid: default_lambda_grid(),
            m_grid: None,
            fixed_dims: None,
            fixed_lambda: None,
            fixed_block_length: None,
        }
    }
}

/// Log-spaced smoothing grid spanning [1e-14, 1e-2].
pub fn default_lambda_grid() -> Vec<f64> {
    log_spaced_grid(1e-14, 1e-2, DEFAULT_LAMBDA_POINTS)
}

/// `count` points log-spaced from `lo` to `hi` inclusive.
pub fn log_spaced_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo && count >= 2, "bad grid request");
    let (la, lb) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| (la + (lb - la) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

/// Block-length candidates 2..=ceil(2 n^(1/3)), bracketing the
/// cube-root growth the block bootstrap assumes.
pub fn default_m_grid(n: usize) -> Vec<usize> {
    let hi = (2.0 * (n as f64).powf(1.0 / 3.0)).ceil() as usize;
    (2..=hi.max(2)).collect()
}

/// Smallest dimension whose leading eigenvalues reach `threshold` as a
/// fraction of the total; the returned truncation is twice that.
#[derive(Debug, Clone)]
pub struct CpvSelection {
    /// Sample spectrum, descending, as produced by the component extraction.
    pub eigenvalues: Vec<f64>,
    /// Leading component count reaching the threshold.
    pub components: usize,
    /// Model truncation, twice `components`.
    pub truncation: usize,
}

/// Applies the cumulative-fraction cut to a fixed spectrum.
pub fn cpv_cut(eigenvalues: &[f64], threshold: f64) -> Result<usize> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::Config(format!(
            "variance threshold {threshold} outside (0, 1]"
        )));
    }
    let total: f64 = eigenvalues.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Degenerate(
            "component spectrum has zero total variance".into(),
        ));
    }
    let mut running = 0.0;
    for (d, &value) in eigenvalues.iter().enumerate() {
        running += value;
        if running / total >= threshold {
            return Ok(d + 1);
        }
    }
    Ok(eigenvalues.len())
}

/// Selects predictor `j`'s truncation by the cumulative proportion of
/// variance of its sample principal component spectrum, computed against
/// `master`; returns the spectrum together with `c_j = 2 d_j`.
pub fn select_dim_cpv(
    data: &FunctionalDataSet,
    predictor: usize,
    master: &BasisSet,
    threshold: f64,
) -> Result<CpvSelection> {
    let fpc = data.principal_components(predictor, master, master.size())?;
    let eigenvalues: Vec<f64> = fpc.eigenvalues.iter().copied().collect();
    let components = cpv_cut(&eigenvalues, threshold).map_err(|e| match e {
        Error::Degenerate(_) => Error::Degenerate(format!(
            "predictor {} carries no variance; its curves are constant",
            predictor + 1
        )),
        other => other,
    })?;
    Ok(CpvSelection {
        eigenvalues,
        components,
        truncation: 2 * components,
    })
}

/// Grid search outcome for the smoothing parameter.
#[derive(Debug, Clone)]
pub struct GcvSelection {
    pub grid: Vec<f64>,
    /// Score per grid point; `None` where the fit failed.
    pub scores: Vec<Option<f64>>,
    pub chosen_index: usize,
}

impl GcvSelection {
    pub fn chosen_lambda(&self) -> f64 {
        self.grid[self.chosen_index]
    }

    pub fn chosen_score(&self) -> f64 {
        self.scores[self.chosen_index].expect("chosen index always has a score")
    }
}

/// Minimizes the generalized cross validation score over the grid,
/// breaking ties toward less smoothing. Individual grid points may fail
/// (singular or degenerate fits); the search errs only when all do.
pub fn select_lambda_gcv(
    data: &FunctionalDataSet,
    scores: &ScoreSet,
    bases: &[BasisSet],
    lambda_grid: &[f64],
) -> Result<GcvSelection> {
    if lambda_grid.is_empty() {
        return Err(Error::Config("empty smoothing grid".into()));
    }
    if lambda_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Config("smoothing grid must be sorted".into()));
    }
    if lambda_grid.iter().any(|&l| l < 0.0) {
        return Err(Error::Config("smoothing grid has a negative entry".into()));
    }
    if !data.is_centered() {
        return Err(Error::Config(
            "smoothing selection needs centered data".into(),
        ));
    }
    let layout = ModelLayout::from_scores(scores);
    if bases.len() != layout.p() {
        return Err(Error::Config(format!(
            "{} bases for {} predictors",
            bases.len(),
            layout.p()
        )));
    }
    let design = crate::estimator::build_design(scores);
    let raws: Vec<DMatrix<f64>> = bases
        .iter()
        .zip(layout.dims())
        .map(|(basis, &cj)| basis.raw_penalty_matrix(cj))
        .collect::<Result<_>>()?;

    let mut out_scores: Vec<Option<f64>> = Vec::with_capacity(lambda_grid.len());
    let mut failures: Vec<String> = Vec::new();
    let mut best: Option<(usize, f64)> = None;
    for (i, &lambda) in lambda_grid.iter().enumerate() {
        let attempt = build_penalty(&raws, &layout, lambda).and_then(|penalty| {
            fit_penalized(&design, data.responses(), &penalty, lambda, &layout)?
                .gcv_score()
        });
        match attempt {
            Ok(score) => {
                // Strict inequality keeps the earlier (smaller) lambda on ties.
                if best.is_none() || score < best.unwrap().1 {
                    best = Some((i, score));
                }
                out_scores.push(Some(score));
            }
            Err(e) => {
                failures.push(format!("lambda {lambda:.3e}: {e}"));
                out_scores.push(None);
            }
        }
    }
    match best {
        Some((chosen_index, _)) => Ok(GcvSelection {
            grid: lambda_grid.to_vec(),
            scores: out_scores,
            chosen_index,
        }),
        None => Err(Error::IllPosed(format!(
            "every smoothing candidate failed: {}",
            failures.join("; ")
        ))),
    }
}

/// Volatility search outcome for the block length.
#[derive(Debug, Clone)]
pub struct MvSelection {
    pub grid: Vec<usize>,
    /// Local volatility per grid point; `None` at the two boundary
    /// points on each side, where the centered window is undefined.
    pub volatility: Vec<Option<f64>>,
    pub chosen_index: usize,
}

impl MvSelection {
    pub fn chosen_block_length(&self) -> usize {
        self.grid[self.chosen_index]
    }
}

/// Block-sum covariance estimate
/// `Xi(m) = (1 / ((n - m + 1) m)) sum_j S_j S_j'`.
pub fn block_sum_covariance(z: &DMatrix<f64>, m: usize) -> Result<DMatrix<f64>> {
    let n = z.nrows();
    let sums = block_partial_sums(z, m)?;
    let blocks = n - m + 1;
    Ok(sums.transpose() * &sums / (blocks as f64 * m as f64))
}

/// Picks the block length whose covariance estimate is locally most
/// stable: minimizes the standard error of the five neighboring
/// `Xi(m)` in Frobenius norm, over interior candidates only; ties go
/// to the smaller length.
pub fn select_block_mv(z: &DMatrix<f64>, m_grid: &[usize]) -> Result<MvSelection> {
    let n = z.nrows();
    if m_grid.len() < MIN_MV_CANDIDATES {
        return Err(Error::Config(format!(
            "block-length search needs at least {MIN_MV_CANDIDATES} candidates, got {}",
            m_grid.len()
        )));
    }
    if m_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config(
            "block-length candidates must be strictly increasing".into(),
        ));
    }
    if m_grid[0] == 0 || *m_grid.last().unwrap() > n {
        return Err(Error::Config(format!(
            "block-length candidates must lie in 1..={n}"
        )));
    }
    let covariances: Vec<DMatrix<f64>> = m_grid
        .iter()
        .map(|&m| block_sum_covariance(z, m))
        .collect::<Result<_>>()?;
    let volatility = local_volatility(&covariances);
    let chosen_index = interior_minimum(&volatility)
        .expect("at least one interior candidate exists");
    Ok(MvSelection {
        grid: m_grid.to_vec(),
        volatility,
        chosen_index,
    })
}

/// Standard error, in Frobenius norm, of each five-candidate window of
/// covariance estimates around its local mean; `None` at the two
/// boundary candidates on each side.
pub fn local_volatility(covariances: &[DMatrix<f64>]) -> Vec<Option<f64>> {
    let mut volatility: Vec<Option<f64>> = vec![None; covariances.len()];
    if covariances.len() < MIN_MV_CANDIDATES {
        return volatility;
    }
    for i in 2..covariances.len() - 2 {
        let window = &covariances[i - 2..=i + 2];
        let mut mean = DMatrix::zeros(window[0].nrows(), window[0].ncols());
        for xi in window {
            mean += xi;
        }
        mean /= 5.0;
        let spread: f64 = window
            .iter()
            .map(|xi| (xi - &mean).norm_squared())
            .sum::<f64>()
            / 4.0;
        volatility[i] = Some(spread.sqrt());
    }
    volatility
}

/// Index of the smallest defined volatility, earliest on exact ties.
fn interior_minimum(volatility: &[Option<f64>]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, value) in volatility.iter().enumerate() {
        if let Some(v) = value {
            // Strict inequality keeps the earlier (smaller) candidate.
            if best.is_none() || *v < best.unwrap().1 {
                best = Some((i, *v));
            }
        }
    }
    best.map(|(i, _)| i)
}
