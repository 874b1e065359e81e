//! Block multiplier bootstrap of the score-residual process, data-driven
//! weight curves, max-deviation quantiles, and simultaneous band assembly.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::basis::BasisSet;
use crate::error::{Error, Result};
use crate::estimator::{coefficient_curves, PenalizedFit};
use crate::quadrature::{trapezoid_weights, unit_grid};
use crate::seeding::derive_seed;

/// Number of equispaced points in the default band evaluation grid.
pub const DEFAULT_EVAL_POINTS: usize = 201;

/// Minimum number of bootstrap replicates accepted by a plan.
pub const MIN_REPLICATES: usize = 100;

/// Minimum band evaluation grid size accepted by a plan.
pub const MIN_EVAL_POINTS: usize = 100;

/// How the weight curves entering the max deviation are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightMode {
    /// Flat weights, every curve weighted one.
    Unit,
    /// Pointwise bootstrap standard deviation, normalized to unit integral
    /// and lifted by the floor rule.
    StdDriven,
}

/// Everything a band construction run needs beyond the fit itself.
#[derive(Debug, Clone)]
pub struct BootstrapPlan {
    /// Bootstrap replicate count B.
    pub replicates: usize,
    /// Block length m for the multiplier block sums.
    pub block_length: usize,
    /// Simultaneous levels alpha, each strictly inside (0, 1).
    pub alpha_levels: Vec<f64>,
    pub weight_mode: WeightMode,
    /// Points where curves, weights, and the sup are evaluated.
    pub eval_grid: Vec<f64>,
    pub master_seed: u64,
    /// Predictors covered jointly by the band; `None` means all of them.
    pub group: Option<Vec<usize>>,
}

impl BootstrapPlan {
    /// Plan with the default levels (95% and 90%), standard-deviation
    /// weights, and the default evaluation grid.
    pub fn new(replicates: usize, block_length: usize, master_seed: u64) -> Self {
        Self {
            replicates,
            block_length,
            alpha_levels: vec![0.05, 0.10],
            weight_mode: WeightMode::StdDriven,
            eval_grid: default_eval_grid(),
            master_seed,
            group: None,
        }
    }

    /// Checks the plan against a sample size and predictor count and
    /// resolves the group to sorted indices.
    pub fn validate(&self, n: usize, p: usize) -> Result<Vec<usize>> {
        if self.replicates < MIN_REPLICATES {
            return Err(Error::Config(format!(
                "need at least {MIN_REPLICATES} bootstrap replicates, got {}",
                self.replicates
            )));
        }
        if self.block_length == 0 || self.block_length + 1 > n {
            return Err(Error::Config(format!(
                "block length {} outside 1..={} for sample size {}",
                self.block_length,
                n.saturating_sub(1),
                n
            )));
        }
        if self.alpha_levels.is_empty() {
            return Err(Error::Config("no band levels requested".into()));
        }
        for &alpha in &self.alpha_levels {
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(Error::Config(format!(
                    "band level {alpha} outside (0, 1)"
                )));
            }
        }
        if self.eval_grid.len() < MIN_EVAL_POINTS {
            return Err(Error::Config(format!(
                "evaluation grid needs at least {MIN_EVAL_POINTS} points, got {}",
                self.eval_grid.len()
            )));
        }
        if self.eval_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(
                "evaluation grid must be strictly increasing".into(),
            ));
        }
        if self.eval_grid[0] != 0.0 || *self.eval_grid.last().unwrap() != 1.0 {
            return Err(Error::Config(
                "evaluation grid must include both endpoints 0 and 1".into(),
            ));
        }
        let mut group = match &self.group {
            None => (0..p).collect::<Vec<_>>(),
            Some(members) => {
                if members.is_empty() {
                    return Err(Error::Config("band group is empty".into()));
                }
                for &j in members {
                    if j >= p {
                        return Err(Error::Config(format!(
                            "band group names predictor {} but the model has {}",
                            j + 1,
                            p
                        )));
                    }
                }
                members.clone()
            }
        };
        group.sort_unstable();
        group.dedup();
        if self.group.as_ref().is_some_and(|g| g.len() != group.len()) {
            return Err(Error::Config("band group has duplicate members".into()));
        }
        Ok(group)
    }
}

/// The default band evaluation grid: equispaced points spanning [0, 1].
pub fn default_eval_grid() -> Vec<f64> {
    unit_grid(DEFAULT_EVAL_POINTS).expect("default grid size is valid")
}

/// One simultaneous level of a band.
#[derive(Debug, Clone)]
pub struct BandLevel {
    pub alpha: f64,
    pub quantile: f64,
    /// Lower band curves, rows aligned with the band's predictors.
    pub lower: DMatrix<f64>,
    pub upper: DMatrix<f64>,
}

/// Simultaneous confidence bands for a group of coefficient curves,
/// together with the bootstrap artifacts that produced them.
#[derive(Debug, Clone)]
pub struct BandSet {
    grid: Vec<f64>,
    predictors: Vec<usize>,
    estimate: DMatrix<f64>,
    weights: DMatrix<f64>,
    levels: Vec<BandLevel>,
    deviations: Vec<f64>,
    plan: BootstrapPlan,
}

impl BandSet {
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// Predictors the band covers, ascending.
    pub fn predictors(&self) -> &[usize] {
        &self.predictors
    }

    /// Coefficient curve estimates, rows aligned with `predictors`.
    pub fn estimate(&self) -> &DMatrix<f64> {
        &self.estimate
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn levels(&self) -> &[BandLevel] {
        &self.levels
    }

    /// Max-deviation sample in replicate order.
    pub fn deviations(&self) -> &[f64] {
        &self.deviations
    }

    pub fn plan(&self) -> &BootstrapPlan {
        &self.plan
    }
}

/// Forms the score-residual rows `z_i = x_ci * eps_i`.
pub fn score_residual_vectors(
    design: &DMatrix<f64>,
    residuals: &DVector<f64>,
) -> DMatrix<f64> {
    let mut z = design.clone();
    for i in 0..z.nrows() {
        let e = residuals[i];
        for k in 0..z.ncols() {
            z[(i, k)] *= e;
        }
    }
    z
}

/// Sums of `m` consecutive rows of `z`, one row per window start.
///
/// Each window is summed directly in row order, so the result matches a
/// from-scratch reference summation bit for bit; at `m` of cube-root
/// order the extra work over a rolling update is negligible.
pub fn block_partial_sums(z: &DMatrix<f64>, m: usize) -> Result<DMatrix<f64>> {
    let n = z.nrows();
    if m == 0 || m > n {
        return Err(Error::Config(format!(
            "block length {m} outside 1..={n} for sample size {n}"
        )));
    }
    let blocks = n - m + 1;
    let mut sums = DMatrix::zeros(blocks, z.ncols());
    for j in 0..blocks {
        for i in j..j + m {
            for k in 0..z.ncols() {
                sums[(j, k)] += z[(i, k)];
            }
        }
    }
    Ok(sums)
}

/// The bootstrapped sum for one multiplier vector:
/// `U = (1 / sqrt(n - m + 1)) sum_j (1 / sqrt(m)) S_j u_j`.
pub fn block_multiplier_draw(
    z: &DMatrix<f64>,
    m: usize,
    normals: &DVector<f64>,
) -> Result<DVector<f64>> {
    let sums = block_partial_sums(z, m)?;
    if normals.len() != sums.nrows() {
        return Err(Error::Config(format!(
            "{} multipliers for {} blocks",
            normals.len(),
            sums.nrows()
        )));
    }
    Ok(draw_from_sums(&sums, m, normals))
}

fn draw_from_sums(sums: &DMatrix<f64>, m: usize, normals: &DVector<f64>) -> DVector<f64> {
    let blocks = sums.nrows() as f64;
    let scale = 1.0 / (blocks.sqrt() * (m as f64).sqrt());
    sums.transpose() * normals * scale
}

/// Maps one bootstrapped sum through the fitted model:
/// solves the penalized normal equations once, then applies the scaled
/// basis reconstruction on the grid. Rows cover every predictor.
pub fn bootstrap_process(
    fit: &PenalizedFit,
    bases: &[BasisSet],
    draw: &DVector<f64>,
    eval_grid: &[f64],
) -> Result<DMatrix<f64>> {
    let v = fit.solve_sigma(draw)?;
    coefficient_curves(fit.layout(), bases, &v, eval_grid)
}

/// Weight curves from a bootstrap sample of processes; rows follow the
/// process rows. StdDriven mode normalizes the pointwise standard
/// deviation (divisor B) by its trapezoid integral, then lifts values
/// below one hundredth of the row maximum up to that floor. A row whose
/// deviation integrates to zero falls back to flat weights.
pub fn estimate_weights(
    processes: &[DMatrix<f64>],
    grid: &[f64],
    mode: WeightMode,
) -> Result<DMatrix<f64>> {
    let b = processes.len();
    if b == 0 {
        return Err(Error::Config("no bootstrap processes given".into()));
    }
    let shape = processes[0].shape();
    if processes.iter().any(|q| q.shape() != shape) {
        return Err(Error::Config(
            "bootstrap processes have mismatched shapes".into(),
        ));
    }
    let (rows, cols) = shape;
    if cols != grid.len() {
        return Err(Error::Config(format!(
            "processes have {} columns but the grid has {} points",
            cols,
            grid.len()
        )));
    }
    if mode == WeightMode::Unit {
        return Ok(DMatrix::from_element(rows, cols, 1.0));
    }
    if b < 2 {
        return Err(Error::Config(
            "standard-deviation weights need at least 2 replicates".into(),
        ));
    }
    let quad = trapezoid_weights(grid)?;
    let bf = b as f64;
    let mut weights = DMatrix::zeros(rows, cols);
    for j in 0..rows {
        let mut sd = vec![0.0; cols];
        for (t, slot) in sd.iter_mut().enumerate() {
            let mean: f64 = processes.iter().map(|q| q[(j, t)]).sum::<f64>() / bf;
            let var: f64 = processes
                .iter()
                .map(|q| (q[(j, t)] - mean).powi(2))
                .sum::<f64>()
                / bf;
            *slot = var.sqrt();
        }
        let integral: f64 = sd.iter().zip(&quad).map(|(s, w)| s * w).sum();
        if integral <= 0.0 {
            for t in 0..cols {
                weights[(j, t)] = 1.0;
            }
            continue;
        }
        let floor = sd.iter().cloned().fold(0.0, f64::max) / (100.0 * integral);
        for t in 0..cols {
            weights[(j, t)] = (sd[t] / integral).max(floor);
        }
    }
    Ok(weights)
}

/// Largest weighted magnitude of one process over the grid and over the
/// listed rows.
pub fn max_deviation(
    process: &DMatrix<f64>,
    weights: &DMatrix<f64>,
    rows: &[usize],
) -> Result<f64> {
    if process.shape() != weights.shape() {
        return Err(Error::Config(format!(
            "process is {:?} but weights are {:?}",
            process.shape(),
            weights.shape()
        )));
    }
    let mut sup = 0.0f64;
    for &j in rows {
        if j >= process.nrows() {
            return Err(Error::Config(format!(
                "row {} outside the process with {} rows",
                j,
                process.nrows()
            )));
        }
        for t in 0..process.ncols() {
            sup = sup.max((process[(j, t)] / weights[(j, t)]).abs());
        }
    }
    Ok(sup)
}

/// The ceil((1 - alpha) B)-th order statistic of the max-deviation
/// sample, with a small guard against upward rounding at exact integers.
pub fn empirical_quantile(deviations: &[f64], alpha: f64) -> Result<f64> {
    let b = deviations.len();
    if b == 0 {
        return Err(Error::Config("empty max-deviation sample".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("level {alpha} outside (0, 1)")));
    }
    let rank = ((1.0 - alpha) * b as f64 - 1e-9).ceil() as usize;
    let rank = rank.clamp(1, b);
    let mut sorted = deviations.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    Ok(sorted[rank - 1])
}

/// Runs the full band construction: B block multiplier replicates with
/// per-replicate seeds derived from the master seed, weight estimation,
/// max-deviation quantiles, and bands
/// `estimate +- weight * quantile / sqrt(n)` at every requested level.
pub fn build_band(
    fit: &PenalizedFit,
    bases: &[BasisSet],
    plan: &BootstrapPlan,
) -> Result<BandSet> {
    let layout = fit.layout();
    let n = fit.n();
    let p = layout.p();
    if bases.len() != p {
        return Err(Error::Config(format!(
            "{} bases for {} predictors",
            bases.len(),
            p
        )));
    }
    let group = plan.validate(n, p)?;
    let grid = &plan.eval_grid;
    let cols = grid.len();

    let z = score_residual_vectors(fit.design(), fit.residuals());
    let sums = block_partial_sums(&z, plan.block_length)?;
    let blocks = sums.nrows();

    // Scaled basis rows for the group: entry (k, t) is alpha_k(t) / f_jk,
    // zero for excluded coordinates.
    let mut scaled_rows = Vec::with_capacity(group.len());
    for &j in &group {
        let cj = layout.dims()[j];
        if bases[j].size() < cj {
            return Err(Error::Config(format!(
                "basis {} has size {} but the layout needs {}",
                j + 1,
                bases[j].size(),
                cj
            )));
        }
        let values = bases[j].eval(grid)?;
        let scales = layout.scales(j);
        let excluded = layout.excluded(j);
        let mut rows = DMatrix::zeros(cj, cols);
        for k in 0..cj {
            if excluded[k] {
                continue;
            }
            for t in 0..cols {
                rows[(k, t)] = values[(k, t)] / scales[k];
            }
        }
        scaled_rows.push(rows);
    }

    let processes: Vec<DMatrix<f64>> = (0..plan.replicates)
        .into_par_iter()
        .map(|r| -> Result<DMatrix<f64>> {
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(plan.master_seed, r as u64));
            let normals =
                DVector::from_fn(blocks, |_, _| rng.sample::<f64, _>(StandardNormal));
            let draw = draw_from_sums(&sums, plan.block_length, &normals);
            let v = fit.solve_sigma(&draw)?;
            let mut q = DMatrix::zeros(group.len(), cols);
            for (row, &j) in group.iter().enumerate() {
                let segment = v.rows(layout.block_offset(j), layout.dims()[j]);
                let curve = segment.transpose() * &scaled_rows[row];
                q.row_mut(row).copy_from(&curve);
            }
            Ok(q)
        })
        .collect::<Result<Vec<_>>>()?;

    let weights = estimate_weights(&processes, grid, plan.weight_mode)?;
    let all_rows: Vec<usize> = (0..group.len()).collect();
    let deviations = processes
        .iter()
        .map(|q| max_deviation(q, &weights, &all_rows))
        .collect::<Result<Vec<f64>>>()?;

    let full_estimate = fit.reconstruct_beta(bases, grid)?;
    let estimate = full_estimate.select_rows(&group);

    let sqrt_n = (n as f64).sqrt();
    let mut levels = Vec::with_capacity(plan.alpha_levels.len());
    for &alpha in &plan.alpha_levels {
        let quantile = empirical_quantile(&deviations, alpha)?;
        let mut lower = estimate.clone();
        let mut upper = estimate.clone();
        for row in 0..group.len() {
            for t in 0..cols {
                let half = weights[(row, t)] * quantile / sqrt_n;
                lower[(row, t)] -= half;
                upper[(row, t)] += half;
            }
        }
        levels.push(BandLevel {
            alpha,
            quantile,
            lower,
            upper,
        });
    }

    Ok(BandSet {
        grid: grid.clone(),
        predictors: group,
        estimate,
        weights,
        levels,
        deviations,
        plan: plan.clone(),
    })
}
