//! Block design and penalty assembly, the penalized least squares solver,
//! coefficient-curve reconstruction, and generalized cross validation.
//!
//! The criterion minimized is
//! `(1/n) ||Y - X_c theta||^2 + theta' R(lambda) theta`;
//! the residual sum of squares is normalized by `n`, the penalty is not.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::basis::BasisSet;
use crate::error::{Error, Result};
use crate::fdata::ScoreSet;

/// Block structure of a fitted model: per-predictor truncation, scale
/// estimates, and the coordinates dropped by the scale floor.
#[derive(Debug, Clone)]
pub struct ModelLayout {
    dims: Vec<usize>,
    scales: Vec<DVector<f64>>,
    excluded: Vec<Vec<bool>>,
}

impl ModelLayout {
    pub fn new(
        dims: Vec<usize>,
        scales: Vec<DVector<f64>>,
        excluded: Vec<Vec<bool>>,
    ) -> Result<Self> {
        if dims.is_empty() || dims.len() != scales.len() || dims.len() != excluded.len() {
            return Err(Error::Config(
                "layout needs matching dims, scales, and exclusion masks".into(),
            ));
        }
        for j in 0..dims.len() {
            if dims[j] == 0 {
                return Err(Error::Config(format!(
                    "predictor {} has zero truncation",
                    j + 1
                )));
            }
            if scales[j].len() != dims[j] || excluded[j].len() != dims[j] {
                return Err(Error::Config(format!(
                    "predictor {} layout lengths disagree",
                    j + 1
                )));
            }
        }
        Ok(Self {
            dims,
            scales,
            excluded,
        })
    }

    pub fn from_scores(scores: &ScoreSet) -> Self {
        let p = scores.p();
        Self {
            dims: scores.dims().to_vec(),
            scales: (0..p).map(|j| scores.scales(j).clone()).collect(),
            excluded: (0..p).map(|j| scores.excluded(j).to_vec()).collect(),
        }
    }

    pub fn p(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn scales(&self, predictor: usize) -> &DVector<f64> {
        &self.scales[predictor]
    }

    pub fn excluded(&self, predictor: usize) -> &[bool] {
        &self.excluded[predictor]
    }

    pub fn total_dim(&self) -> usize {
        self.dims.iter().sum()
    }

    /// Column offset of predictor `j`'s block in the stacked design.
    pub fn block_offset(&self, predictor: usize) -> usize {
        self.dims[..predictor].iter().sum()
    }

    /// Global column indices that survive the scale floor.
    pub fn included_indices(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.total_dim());
        for j in 0..self.p() {
            let offset = self.block_offset(j);
            for k in 0..self.dims[j] {
                if !self.excluded[j][k] {
                    out.push(offset + k);
                }
            }
        }
        out
    }
}

/// Stacks standardized score blocks into the `n x c` design matrix,
/// block `j` occupying columns `offset_j .. offset_j + c_j`.
pub fn build_design(scores: &ScoreSet) -> DMatrix<f64> {
    let n = scores.n();
    let c = scores.total_dim();
    let mut design = DMatrix::zeros(n, c);
    let mut offset = 0;
    for j in 0..scores.p() {
        let block = scores.standardized(j);
        design.view_mut((0, offset), (n, block.ncols())).copy_from(block);
        offset += block.ncols();
    }
    design
}

/// Assembles the block-diagonal penalty: block `j` holds
/// `lambda * raw_j(k, l) / (f_jk f_jl)`, with rows and columns of excluded
/// coordinates zeroed (their coefficients are pinned to zero elsewhere).
pub fn build_penalty(
    raws: &[DMatrix<f64>],
    layout: &ModelLayout,
    lambda: f64,
) -> Result<DMatrix<f64>> {
    if lambda < 0.0 {
        return Err(Error::Config(format!(
            "smoothing parameter must be nonnegative, got {lambda}"
        )));
    }
    if raws.len() != layout.p() {
        return Err(Error::Config(format!(
            "{} penalty blocks for {} predictors",
            raws.len(),
            layout.p()
        )));
    }
    let c = layout.total_dim();
    let mut penalty = DMatrix::zeros(c, c);
    for j in 0..layout.p() {
        let cj = layout.dims()[j];
        if raws[j].nrows() != cj || raws[j].ncols() != cj {
            return Err(Error::Config(format!(
                "penalty block {} has shape {}x{}, expected {}x{}",
                j + 1,
                raws[j].nrows(),
                raws[j].ncols(),
                cj,
                cj
            )));
        }
        let scales = layout.scales(j);
        let excluded = layout.excluded(j);
        for k in 0..cj {
            if !excluded[k] && scales[k] <= 0.0 {
                return Err(Error::Internal(format!(
                    "predictor {} coordinate {} is included with zero scale",
                    j + 1,
                    k + 1
                )));
            }
        }
        let offset = layout.block_offset(j);
        for k in 0..cj {
            for l in 0..cj {
                if excluded[k] || excluded[l] {
                    continue;
                }
                penalty[(offset + k, offset + l)] =
                    lambda * raws[j][(k, l)] / (scales[k] * scales[l]);
            }
        }
    }
    Ok(penalty)
}

/// A solved penalized least squares problem, with everything later stages
/// need: coefficients, the penalized normal matrix and its factorization,
/// residuals, and the smoother trace.
#[derive(Debug, Clone)]
pub struct PenalizedFit {
    theta: DVector<f64>,
    sigma_tilde: DMatrix<f64>,
    lambda: f64,
    layout: ModelLayout,
    design: DMatrix<f64>,
    residuals: DVector<f64>,
    hat_trace: f64,
    factor: Cholesky<f64, Dyn>,
    included: Vec<usize>,
    equilibration: DVector<f64>,
}

/// Solves `[X'X/n + R(lambda)] theta = X'Y/n` over the included
/// coordinates by Cholesky factorization; excluded coordinates keep
/// coefficient zero. Fails when the penalized normal matrix is not
/// numerically positive definite.
pub fn fit_penalized(
    design: &DMatrix<f64>,
    responses: &DVector<f64>,
    penalty: &DMatrix<f64>,
    lambda: f64,
    layout: &ModelLayout,
) -> Result<PenalizedFit> {
    let n = design.nrows();
    let c = layout.total_dim();
    if n == 0 {
        return Err(Error::Config("empty design".into()));
    }
    if design.ncols() != c || penalty.nrows() != c || penalty.ncols() != c {
        return Err(Error::Config(format!(
            "design has {} columns and penalty is {}x{}, layout expects {}",
            design.ncols(),
            penalty.nrows(),
            penalty.ncols(),
            c
        )));
    }
    if responses.len() != n {
        return Err(Error::Config(format!(
            "{} responses for {} design rows",
            responses.len(),
            n
        )));
    }
    let included = layout.included_indices();
    if included.is_empty() {
        return Err(Error::Degenerate(
            "every coordinate was excluded by the scale floor".into(),
        ));
    }
    let nf = n as f64;
    let gram = design.transpose() * design / nf;
    let sigma_tilde = &gram + penalty;

    let r = included.len();
    let sigma_red = sigma_tilde.select_rows(&included).select_columns(&included);
    let gram_red = gram.select_rows(&included).select_columns(&included);

    // Diagonal equilibration puts the singularity check and the
    // factorization on a common scale; a heavily penalized coordinate
    // would otherwise swamp a trace-relative threshold.
    let mut scale = DVector::zeros(r);
    for i in 0..r {
        let d = sigma_red[(i, i)];
        if d <= 0.0 {
            return Err(Error::IllPosed(format!(
                "penalized normal matrix has nonpositive diagonal entry {d:.3e}; \
                 increase the smoothing parameter or reduce the truncation"
            )));
        }
        scale[i] = d.sqrt();
    }
    let equilibrated =
        DMatrix::from_fn(r, r, |i, j| sigma_red[(i, j)] / (scale[i] * scale[j]));
    let trace = equilibrated.trace();
    let min_eigen = equilibrated.clone().symmetric_eigenvalues().min();
    if min_eigen < 1e-12 * trace / r as f64 {
        return Err(Error::IllPosed(format!(
            "penalized normal matrix is numerically singular (min eigenvalue {:.3e}); \
             increase the smoothing parameter or reduce the truncation",
            min_eigen
        )));
    }
    let factor = Cholesky::new(equilibrated).ok_or_else(|| {
        Error::IllPosed(
            "penalized normal matrix is not positive definite; \
             increase the smoothing parameter or reduce the truncation"
                .into(),
        )
    })?;

    let rhs_full = design.transpose() * responses / nf;
    let rhs_red =
        DVector::from_iterator(r, included.iter().map(|&i| rhs_full[i]).enumerate().map(
            |(slot, v)| v / scale[slot],
        ));
    let theta_red = factor.solve(&rhs_red);
    let mut theta = DVector::zeros(c);
    for (slot, &i) in included.iter().enumerate() {
        theta[i] = theta_red[slot] / scale[slot];
    }

    let residuals = responses - design * &theta;
    // Trace(H) via the cyclic identity Trace(Sigma^-1 X'X/n); the
    // equilibration scales cancel inside the trace.
    let gram_scaled =
        DMatrix::from_fn(r, r, |i, j| gram_red[(i, j)] / (scale[i] * scale[j]));
    let hat_trace = factor.solve(&gram_scaled).trace();

    Ok(PenalizedFit {
        theta,
        sigma_tilde,
        lambda,
        layout: layout.clone(),
        design: design.clone(),
        residuals,
        hat_trace,
        factor,
        included,
        equilibration: scale,
    })
}

impl PenalizedFit {
    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    pub fn sigma_tilde(&self) -> &DMatrix<f64> {
        &self.sigma_tilde
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn layout(&self) -> &ModelLayout {
        &self.layout
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn dims(&self) -> &[usize] {
        self.layout.dims()
    }

    pub fn residuals(&self) -> &DVector<f64> {
        &self.residuals
    }

    pub fn hat_trace(&self) -> f64 {
        self.hat_trace
    }

    pub fn n(&self) -> usize {
        self.residuals.len()
    }

    /// Mean squared residual (divisor n).
    pub fn residual_variance(&self) -> f64 {
        self.residuals.norm_squared() / self.n() as f64
    }

    /// Solves `Sigma_tilde v = rhs` over the included coordinates with the
    /// cached factorization; excluded coordinates come back zero.
    pub fn solve_sigma(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        if rhs.len() != self.sigma_tilde.nrows() {
            return Err(Error::Config(format!(
                "right-hand side has length {}, expected {}",
                rhs.len(),
                self.sigma_tilde.nrows()
            )));
        }
        let red = DVector::from_iterator(
            self.included.len(),
            self.included
                .iter()
                .enumerate()
                .map(|(slot, &i)| rhs[i] / self.equilibration[slot]),
        );
        let solved = self.factor.solve(&red);
        let mut out = DVector::zeros(rhs.len());
        for (slot, &i) in self.included.iter().enumerate() {
            out[i] = solved[slot] / self.equilibration[slot];
        }
        Ok(out)
    }

    /// Reconstructs the coefficient curves on `points`:
    /// `beta_j(t) = sum_k (theta_jk / f_jk) alpha_k(t)`, excluded
    /// coordinates contributing zero.
    pub fn reconstruct_beta(
        &self,
        bases: &[BasisSet],
        points: &[f64],
    ) -> Result<DMatrix<f64>> {
        coefficient_curves(&self.layout, bases, &self.theta, points)
    }

    /// Generalized cross validation score:
    /// `(RSS/n) / (1 - Trace(H)/n)^2`.
    pub fn gcv_score(&self) -> Result<f64> {
        let n = self.n() as f64;
        if self.hat_trace >= n {
            return Err(Error::Degenerate(format!(
                "smoother trace {} reaches the sample size {}",
                self.hat_trace, n
            )));
        }
        let rss = self.residuals.norm_squared();
        let denom = 1.0 - self.hat_trace / n;
        Ok(rss / n / (denom * denom))
    }
}

/// Maps stacked block coefficients to curves: row `j` holds
/// `sum_k (coeffs_jk / f_jk) alpha_k(t)` over the included coordinates.
pub fn coefficient_curves(
    layout: &ModelLayout,
    bases: &[BasisSet],
    coeffs: &DVector<f64>,
    points: &[f64],
) -> Result<DMatrix<f64>> {
    if bases.len() != layout.p() {
        return Err(Error::Config(format!(
            "{} bases for {} predictors",
            bases.len(),
            layout.p()
        )));
    }
    if coeffs.len() != layout.total_dim() {
        return Err(Error::Config(format!(
            "coefficient vector has length {}, layout expects {}",
            coeffs.len(),
            layout.total_dim()
        )));
    }
    let mut out = DMatrix::zeros(layout.p(), points.len());
    for j in 0..layout.p() {
        let cj = layout.dims()[j];
        if bases[j].size() < cj {
            return Err(Error::Config(format!(
                "basis {} has size {} but the layout needs {}",
                j + 1,
                bases[j].size(),
                cj
            )));
        }
        let values = bases[j].eval(points)?;
        let scales = layout.scales(j);
        let excluded = layout.excluded(j);
        let offset = layout.block_offset(j);
        for k in 0..cj {
            if excluded[k] {
                continue;
            }
            let weight = coeffs[offset + k] / scales[k];
            for (i, _) in points.iter().enumerate() {
                out[(j, i)] += weight * values[(k, i)];
            }
        }
    }
    Ok(out)
}
