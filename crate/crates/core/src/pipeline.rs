//! End-to-end model construction: basis resolution, dimension and
//! smoothing selection, the penalized fit, and block-length selection,
//! in the order the band construction needs them.

use nalgebra::DMatrix;

use crate::basis::BasisSet;
use crate::bootstrap::score_residual_vectors;
use crate::error::{Error, Result};
use crate::estimator::{build_design, build_penalty, fit_penalized, ModelLayout, PenalizedFit};
use crate::fdata::{FunctionalDataSet, ScoreSet};
use crate::tuning::{
    default_m_grid, select_block_mv, select_dim_cpv, select_lambda_gcv, CpvSelection,
    GcvSelection, MvSelection, TuningConfig,
};

/// Size of the reference basis used for component extraction, dimension
/// selection, and the principal-component working basis.
pub const MASTER_BASIS_SIZE: usize = 25;

/// Which basis family a predictor's coefficient curve is expanded in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WorkingBasis {
    Fourier,
    Legendre,
    /// Estimated principal components of the predictor's own curves.
    Fpc,
}

/// Settings for one model construction run.
#[derive(Debug, Clone)]
pub struct PipelineSettings {
    /// One entry per predictor, or a single entry applied to all.
    pub bases: Vec<WorkingBasis>,
    pub tuning: TuningConfig,
}

impl PipelineSettings {
    pub fn uniform(basis: WorkingBasis) -> Self {
        Self {
            bases: vec![basis],
            tuning: TuningConfig::default(),
        }
    }
}

/// A fully tuned and fitted model, with every selection step's report.
#[derive(Debug, Clone)]
pub struct FittedModel {
    /// Centered copy of the data the fit used.
    pub data: FunctionalDataSet,
    pub scores: ScoreSet,
    pub bases: Vec<BasisSet>,
    /// Per-predictor spectrum reports; `None` when dimensions were fixed.
    pub cpv: Vec<Option<CpvSelection>>,
    pub dims: Vec<usize>,
    pub gcv: Option<GcvSelection>,
    pub lambda: f64,
    pub mv: Option<MvSelection>,
    pub block_length: usize,
    pub fit: PenalizedFit,
}

/// The reference basis shared by component extraction and dimension
/// selection.
pub fn master_basis() -> BasisSet {
    BasisSet::legendre(MASTER_BASIS_SIZE).expect("master basis size is valid")
}

/// Runs the full construction: center, pick dimensions (cumulative
/// variance unless fixed), build working bases, project scores, pick the
/// smoothing parameter (grid search unless fixed), fit, and pick the
/// bootstrap block length (minimum volatility unless fixed).
pub fn fit_pipeline(
    data: &FunctionalDataSet,
    settings: &PipelineSettings,
) -> Result<FittedModel> {
    let p = data.p();
    let n = data.n();
    let kinds: Vec<WorkingBasis> = if settings.bases.len() == 1 {
        vec![settings.bases[0]; p]
    } else if settings.bases.len() == p {
        settings.bases.clone()
    } else {
        return Err(Error::Config(format!(
            "{} basis choices for {} predictors",
            settings.bases.len(),
            p
        )));
    };
    let tuning = &settings.tuning;
    if let Some(dims) = &tuning.fixed_dims {
        if dims.len() != p {
            return Err(Error::Config(format!(
                "{} fixed dimensions for {} predictors",
                dims.len(),
                p
            )));
        }
    }

    let data = data.clone().center();
    let master = master_basis();

    let mut cpv: Vec<Option<CpvSelection>> = Vec::with_capacity(p);
    let mut dims: Vec<usize> = Vec::with_capacity(p);
    for j in 0..p {
        match &tuning.fixed_dims {
            Some(fixed) => {
                if fixed[j] == 0 {
                    return Err(Error::Config(format!(
                        "predictor {} has zero fixed dimension",
                        j + 1
                    )));
                }
                cpv.push(None);
                dims.push(fixed[j]);
            }
            None => {
                let selection = select_dim_cpv(&data, j, &master, tuning.cpv_threshold)?;
                dims.push(selection.truncation);
                cpv.push(Some(selection));
            }
        }
    }

    let mut bases: Vec<BasisSet> = Vec::with_capacity(p);
    for j in 0..p {
        let basis = match kinds[j] {
            WorkingBasis::Fourier => BasisSet::fourier(dims[j])?,
            WorkingBasis::Legendre => BasisSet::legendre(dims[j])?,
            WorkingBasis::Fpc => {
                if dims[j] > MASTER_BASIS_SIZE {
                    return Err(Error::Config(format!(
                        "predictor {} needs {} components but the reference basis has {}",
                        j + 1,
                        dims[j],
                        MASTER_BASIS_SIZE
                    )));
                }
                data.principal_components(j, &master, dims[j])?.basis
            }
        };
        bases.push(basis);
    }

    let scores = data.project_scores(&bases, &dims)?;
    let layout = ModelLayout::from_scores(&scores);
    let design = build_design(&scores);

    let (gcv, lambda) = match tuning.fixed_lambda {
        Some(lambda) => {
            if lambda < 0.0 {
                return Err(Error::Config(format!(
                    "fixed smoothing parameter {lambda} is negative"
                )));
            }
            (None, lambda)
        }
        None => {
            let selection = select_lambda_gcv(&data, &scores, &bases, &tuning.lambda_grid)?;
            let lambda = selection.chosen_lambda();
            (Some(selection), lambda)
        }
    };

    let raws: Vec<DMatrix<f64>> = bases
        .iter()
        .zip(&dims)
        .map(|(basis, &cj)| basis.raw_penalty_matrix(cj))
        .collect::<Result<_>>()?;
    let penalty = build_penalty(&raws, &layout, lambda)?;
    let fit = fit_penalized(&design, data.responses(), &penalty, lambda, &layout)?;

    let (mv, block_length) = match tuning.fixed_block_length {
        Some(m) => {
            if m == 0 || m + 1 > n {
                return Err(Error::Config(format!(
                    "fixed block length {m} outside 1..={} for sample size {n}",
                    n.saturating_sub(1)
                )));
            }
            (None, m)
        }
        None => {
            let m_grid = match &tuning.m_grid {
                Some(grid) => {
                    if grid.iter().any(|&m| m == 0 || 2 * m > n) {
                        return Err(Error::Config(format!(
                            "block-length candidates must lie in 1..={}",
                            n / 2
                        )));
                    }
                    grid.clone()
                }
                None => default_m_grid(n),
            };
            let z = score_residual_vectors(fit.design(), fit.residuals());
            let selection = select_block_mv(&z, &m_grid)?;
            let m = selection.chosen_block_length();
            (Some(selection), m)
        }
    };

    Ok(FittedModel {
        data,
        scores,
        bases,
        cpv,
        dims,
        gcv,
        lambda,
        mv,
        block_length,
        fit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::unit_grid;
    use nalgebra::{DMatrix, DVector};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn synthetic(n: usize, seed: u64) -> FunctionalDataSet {
        let grid = unit_grid(60).unwrap();
        let shapes = BasisSet::fourier(5).unwrap().eval(&grid).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut curves = DMatrix::zeros(n, 60);
        let mut responses = DVector::zeros(n);
        for i in 0..n {
            let mut scores = [0.0; 5];
            for (k, slot) in scores.iter_mut().enumerate() {
                *slot = (rng.random::<f64>() * 2.0 - 1.0) / (k + 1) as f64;
            }
            for g in 0..60 {
                for k in 0..5 {
                    curves[(i, g)] += scores[k] * shapes[(k, g)];
                }
            }
            responses[i] =
                0.9 * scores[0] - 0.4 * scores[1] + 0.1 * (rng.random::<f64>() - 0.5);
        }
        FunctionalDataSet::from_parts(grid, vec![curves], responses).unwrap()
    }

    #[test]
    fn full_pipeline_runs_on_each_basis_family() {
        let data = synthetic(150, 1);
        for kind in [WorkingBasis::Fourier, WorkingBasis::Legendre, WorkingBasis::Fpc] {
            let model = fit_pipeline(&data, &PipelineSettings::uniform(kind)).unwrap();
            assert_eq!(model.bases.len(), 1);
            assert_eq!(model.dims.len(), 1);
            assert!(model.dims[0] >= 2 && model.dims[0] % 2 == 0);
            assert!(model.cpv[0].is_some());
            assert!(model.gcv.is_some());
            assert!(model.mv.is_some());
            assert!(model.block_length >= 2);
            assert!(model.lambda > 0.0);
            assert_eq!(model.fit.dims(), model.dims.as_slice());
        }
    }

    #[test]
    fn fixed_overrides_bypass_the_selectors() {
        let data = synthetic(120, 2);
        let mut settings = PipelineSettings::uniform(WorkingBasis::Fourier);
        settings.tuning.fixed_dims = Some(vec![4]);
        settings.tuning.fixed_lambda = Some(3e-7);
        settings.tuning.fixed_block_length = Some(6);
        let model = fit_pipeline(&data, &settings).unwrap();
        assert_eq!(model.dims, vec![4]);
        assert_eq!(model.lambda, 3e-7);
        assert_eq!(model.block_length, 6);
        assert!(model.cpv[0].is_none());
        assert!(model.gcv.is_none());
        assert!(model.mv.is_none());
    }

    #[test]
    fn equal_settings_reproduce_the_same_model() {
        let data = synthetic(100, 3);
        let settings = PipelineSettings::uniform(WorkingBasis::Legendre);
        let first = fit_pipeline(&data, &settings).unwrap();
        let second = fit_pipeline(&data, &settings).unwrap();
        assert_eq!(first.dims, second.dims);
        assert_eq!(first.lambda, second.lambda);
        assert_eq!(first.block_length, second.block_length);
        assert_eq!(first.fit.theta(), second.fit.theta());
    }

    #[test]
    fn mismatched_basis_count_is_rejected() {
        let data = synthetic(80, 4);
        let settings = PipelineSettings {
            bases: vec![WorkingBasis::Fourier, WorkingBasis::Legendre],
            tuning: TuningConfig::default(),
        };
        match fit_pipeline(&data, &settings) {
            Err(Error::Config(message)) => {
                assert!(message.contains("basis choices"), "message: {message}")
            }
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn bad_fixed_values_are_rejected() {
        let data = synthetic(80, 5);
        let mut settings = PipelineSettings::uniform(WorkingBasis::Fourier);
        settings.tuning.fixed_dims = Some(vec![0]);
        assert!(fit_pipeline(&data, &settings).is_err());

        let mut settings = PipelineSettings::uniform(WorkingBasis::Fourier);
        settings.tuning.fixed_lambda = Some(-1.0);
        assert!(fit_pipeline(&data, &settings).is_err());

        let mut settings = PipelineSettings::uniform(WorkingBasis::Fourier);
        settings.tuning.fixed_block_length = Some(0);
        assert!(fit_pipeline(&data, &settings).is_err());

        let mut settings = PipelineSettings::uniform(WorkingBasis::Fourier);
        settings.tuning.m_grid = Some(vec![2, 3, 4, 5, 60]);
        assert!(fit_pipeline(&data, &settings).is_err());
    }

    #[test]
    fn uncentered_input_is_centered_internally() {
        let data = synthetic(90, 6);
        assert!(!data.is_centered());
        let model =
            fit_pipeline(&data, &PipelineSettings::uniform(WorkingBasis::Fourier)).unwrap();
        assert!(model.data.is_centered());
    }
}
