//! Synthetic functional time series and the Monte Carlo coverage harness.
//!
//! Predictor curves follow a first-order functional moving average: the
//! basis coordinates of curve i are D(eta_i + phi1 * eta_{i-1}) with
//! independent Gaussian innovation vectors eta_i whose k-th coordinate has
//! variance k^-2. Responses come from a known coefficient curve plus
//! either iid Gaussian noise or an autoregressive noise sequence scaled by
//! the curve's own leading component score. The harness fits the full
//! band construction on many independent replications and reports
//! empirical simultaneous coverage and average band width.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, StandardNormal};
use rayon::prelude::*;

use crate::basis::{BasisKind, BasisSet};
use crate::bootstrap::{build_band, default_eval_grid, BootstrapPlan, WeightMode};
use crate::error::{Error, Result};
use crate::fdata::FunctionalDataSet;
use crate::pipeline::{fit_pipeline, master_basis, PipelineSettings, WorkingBasis};
use crate::quadrature::trapezoid_weights;
use crate::seeding::derive_seed;
use crate::tuning::TuningConfig;

/// Default number of equispaced observation points per curve.
pub const DEFAULT_GRID_SIZE: usize = 100;

/// Default number of basis coordinates driving the generator.
pub const DEFAULT_COORDINATES: usize = 25;

/// Fewest replications the harness accepts.
pub const MIN_MC_REPS: usize = 50;

/// Below this many replications a report is flagged low precision.
pub const LOW_PRECISION_REPS: usize = 200;

// Seed streams split off a replication's seed, one per noise source.
const PREDICTOR_STREAM: u64 = 1;
const ERROR_STREAM: u64 = 2;
const BOOTSTRAP_STREAM: u64 = 3;

/// How innovation coordinates are mixed into curve coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DispersionMode {
    /// Identity mixing, coordinates stay independent.
    Diagonal,
    /// Unit diagonal with 1/5 on both first off-diagonals, so neighboring
    /// coordinates are correlated.
    Tridiagonal,
}

/// Which true coefficient curve generates the responses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BetaScenario {
    /// Coordinates 0.8, 0.5, -0.3, then k^-3 from the fourth on.
    Decay,
    /// The zero curve; responses are pure noise.
    Zero,
}

/// Which noise sequence is added to the responses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorScenario {
    /// Independent standard Gaussian errors.
    IidGaussian,
    /// An AR(1) sequence with coefficient 0.2 and unit-variance scaled
    /// t(8) innovations, multiplied by half the curve's estimated first
    /// principal component score. Errors are then dependent across time
    /// and conditionally heteroscedastic.
    ScoreDependent,
}

/// Full description of one synthetic data generating process.
#[derive(Debug, Clone)]
pub struct DgpConfig {
    /// Number of curves (sample size).
    pub n: usize,
    /// Observation points per curve, equispaced on [0, 1].
    pub grid_size: usize,
    /// Number of generator coordinates, at least 10 so the spectrum has a
    /// meaningful tail.
    pub coordinates: usize,
    /// Moving average weight on the previous innovation, nonnegative.
    pub phi1: f64,
    pub dispersion: DispersionMode,
    /// Basis whose functions carry the coordinates into curves.
    pub synthesis: BasisKind,
    pub beta: BetaScenario,
    pub errors: ErrorScenario,
    pub master_seed: u64,
}

impl DgpConfig {
    /// Config with the default grid, coordinate count, decaying
    /// coefficient curve, and score-dependent errors.
    pub fn new(
        n: usize,
        phi1: f64,
        dispersion: DispersionMode,
        synthesis: BasisKind,
        master_seed: u64,
    ) -> Self {
        Self {
            n,
            grid_size: DEFAULT_GRID_SIZE,
            coordinates: DEFAULT_COORDINATES,
            phi1,
            dispersion,
            synthesis,
            beta: BetaScenario::Decay,
            errors: ErrorScenario::ScoreDependent,
            master_seed,
        }
    }

    /// Checks every field against its documented range.
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("sample size must be positive".into()));
        }
        if self.grid_size < 20 {
            return Err(Error::Config(format!(
                "grid size {} is below the minimum of 20",
                self.grid_size
            )));
        }
        if self.coordinates < 10 {
            return Err(Error::Config(format!(
                "generator needs at least 10 coordinates, got {}",
                self.coordinates
            )));
        }
        if !self.phi1.is_finite() || self.phi1 < 0.0 {
            return Err(Error::Config(format!(
                "moving average weight must be finite and nonnegative, got {}",
                self.phi1
            )));
        }
        if self.synthesis == BasisKind::InMaster {
            return Err(Error::Config(
                "synthesis basis must be a closed-form family".into(),
            ));
        }
        Ok(())
    }

    fn synthesis_basis(&self) -> Result<BasisSet> {
        match self.synthesis {
            BasisKind::Fourier => BasisSet::fourier(self.coordinates),
            BasisKind::Legendre => BasisSet::legendre(self.coordinates),
            BasisKind::InMaster => Err(Error::Config(
                "synthesis basis must be a closed-form family".into(),
            )),
        }
    }
}

/// One generated sample: the observation grid, the curves evaluated on
/// it, and the exact basis coordinates behind them.
#[derive(Debug, Clone)]
pub struct Fma1Sample {
    pub grid: Vec<f64>,
    /// `n x grid_size` curve values.
    pub curves: DMatrix<f64>,
    /// `n x coordinates` generator coordinates.
    pub scores: DMatrix<f64>,
}

fn apply_dispersion(v: &DVector<f64>, mode: DispersionMode) -> DVector<f64> {
    match mode {
        DispersionMode::Diagonal => v.clone(),
        DispersionMode::Tridiagonal => {
            let k = v.len();
            let mut out = v.clone();
            for i in 0..k {
                if i > 0 {
                    out[i] += v[i - 1] / 5.0;
                }
                if i + 1 < k {
                    out[i] += v[i + 1] / 5.0;
                }
            }
            out
        }
    }
}

/// Draws the predictor curves. One extra innovation vector before the
/// sample gives the moving average its lagged term from the start.
pub fn gen_fma1(config: &DgpConfig) -> Result<Fma1Sample> {
    config.validate()?;
    let k = config.coordinates;
    let basis = config.synthesis_basis()?;
    let grid = crate::quadrature::unit_grid(config.grid_size)?;
    let shapes = basis.eval(&grid)?;

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.master_seed, PREDICTOR_STREAM));
    let draw_eta = |rng: &mut ChaCha8Rng| {
        DVector::from_fn(k, |row, _| {
            rng.sample::<f64, _>(StandardNormal) / (row + 1) as f64
        })
    };

    let mut prev = draw_eta(&mut rng);
    let mut scores = DMatrix::zeros(config.n, k);
    for i in 0..config.n {
        let eta = draw_eta(&mut rng);
        let mixed = apply_dispersion(&(&eta + config.phi1 * &prev), config.dispersion);
        scores.row_mut(i).copy_from(&mixed.transpose());
        prev = eta;
    }
    let curves = &scores * &shapes;
    Ok(Fma1Sample {
        grid,
        curves,
        scores,
    })
}

/// Coordinates of the true coefficient curve in the synthesis basis.
pub fn beta_coefficients(scenario: BetaScenario, count: usize) -> Vec<f64> {
    match scenario {
        BetaScenario::Zero => vec![0.0; count],
        BetaScenario::Decay => (1..=count)
            .map(|k| match k {
                1 => 0.8,
                2 => 0.5,
                3 => -0.3,
                _ => (k as f64).powi(-3),
            })
            .collect(),
    }
}

/// The true coefficient curve evaluated at `points`.
pub fn true_beta(scenario: BetaScenario, basis: &BasisSet, points: &[f64]) -> Result<DVector<f64>> {
    let coeffs = DVector::from_vec(beta_coefficients(scenario, basis.size()));
    let shapes = basis.eval(points)?;
    Ok(shapes.transpose() * coeffs)
}

/// One unit-variance scaled t(8) draw: sqrt(3/4) * z / sqrt(chi2_8 / 8).
fn scaled_t8(rng: &mut ChaCha8Rng, chi: &ChiSquared<f64>) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    let denom = (rng.sample::<f64, _>(chi) / 8.0).sqrt();
    (0.75f64).sqrt() * z / denom
}

/// Draws the response noise. Score-dependent errors need the estimated
/// first component scores of the same sample, passed as `first_scores`.
pub fn gen_errors(config: &DgpConfig, first_scores: Option<&DVector<f64>>) -> Result<DVector<f64>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.master_seed, ERROR_STREAM));
    match config.errors {
        ErrorScenario::IidGaussian => Ok(DVector::from_fn(config.n, |_, _| {
            rng.sample::<f64, _>(StandardNormal)
        })),
        ErrorScenario::ScoreDependent => {
            let scores = first_scores.ok_or_else(|| {
                Error::Config("score-dependent errors need first component scores".into())
            })?;
            if scores.len() != config.n {
                return Err(Error::Config(format!(
                    "{} scores for {} curves",
                    scores.len(),
                    config.n
                )));
            }
            let chi = ChiSquared::new(8.0)
                .map_err(|e| Error::Internal(format!("chi-squared setup: {e}")))?;
            // AR(1) with coefficient 0.2, burnt in from zero so the start
            // of the sample is already stationary.
            let mut s = 0.0;
            for _ in 0..50 {
                s = 0.2 * s + scaled_t8(&mut rng, &chi);
            }
            let mut out = DVector::zeros(config.n);
            for i in 0..config.n {
                s = 0.2 * s + scaled_t8(&mut rng, &chi);
                out[i] = 0.5 * s * scores[i];
            }
            Ok(out)
        }
    }
}

/// Centered estimated scores on the first principal component of one
/// predictor, extracted against the reference basis.
pub fn estimated_first_component_scores(
    data: &FunctionalDataSet,
    predictor: usize,
    master: &BasisSet,
) -> Result<DVector<f64>> {
    let fpc = data.principal_components(predictor, master, 1)?;
    let scores = data.project_scores(&[fpc.basis], &[1])?;
    Ok(scores.raw(predictor).column(0).into_owned())
}

/// Responses from exact coordinate inner products plus the noise vector.
/// Orthonormality of the synthesis basis makes the integral of the
/// coefficient curve against each curve a plain coordinate dot product.
pub fn gen_responses(
    config: &DgpConfig,
    sample: &Fma1Sample,
    noise: &DVector<f64>,
) -> Result<DVector<f64>> {
    if sample.scores.nrows() != config.n || noise.len() != config.n {
        return Err(Error::Config(format!(
            "sample of {} rows and {} noise values for n = {}",
            sample.scores.nrows(),
            noise.len(),
            config.n
        )));
    }
    let beta = DVector::from_vec(beta_coefficients(config.beta, config.coordinates));
    Ok(&sample.scores * beta + noise)
}

/// True if every curve value lies inside the band, across all rows and
/// grid points.
pub fn band_covers(truth: &DMatrix<f64>, lower: &DMatrix<f64>, upper: &DMatrix<f64>) -> bool {
    truth
        .iter()
        .zip(lower.iter().zip(upper.iter()))
        .all(|(t, (lo, hi))| *lo <= *t && *t <= *hi)
}

/// Band width integrated over the grid, averaged across rows.
pub fn mean_band_width(grid: &[f64], lower: &DMatrix<f64>, upper: &DMatrix<f64>) -> Result<f64> {
    let w = trapezoid_weights(grid)?;
    if lower.ncols() != grid.len() || upper.ncols() != grid.len() || lower.nrows() != upper.nrows()
    {
        return Err(Error::Config("band shape does not match the grid".into()));
    }
    let rows = lower.nrows();
    let mut total = 0.0;
    for j in 0..rows {
        for (t, wt) in w.iter().enumerate() {
            total += wt * (upper[(j, t)] - lower[(j, t)]);
        }
    }
    Ok(total / rows as f64)
}

/// Fitting and band settings shared by every replication of a harness
/// run.
#[derive(Debug, Clone)]
pub struct HarnessSettings {
    pub basis: WorkingBasis,
    pub weight_mode: WeightMode,
    /// Bootstrap replicate count B inside each replication.
    pub bootstrap_replicates: usize,
    pub alpha_levels: Vec<f64>,
    pub tuning: TuningConfig,
}

impl HarnessSettings {
    /// Settings with the default levels (95% and 90%) and fully automatic
    /// tuning.
    pub fn new(basis: WorkingBasis, weight_mode: WeightMode, bootstrap_replicates: usize) -> Self {
        Self {
            basis,
            weight_mode,
            bootstrap_replicates,
            alpha_levels: vec![0.05, 0.10],
            tuning: TuningConfig::default(),
        }
    }
}

/// Aggregated result of a Monte Carlo coverage run.
#[derive(Debug, Clone)]
pub struct SimulationReport {
    /// Simultaneous levels, in the order requested.
    pub levels: Vec<f64>,
    pub reps_requested: usize,
    /// Replications that produced a band.
    pub successes: usize,
    pub failures: usize,
    /// Set when more than one percent of replications failed; summary
    /// numbers are then not trustworthy.
    pub invalid: bool,
    /// Set when the run used fewer replications than needed for stable
    /// coverage estimates.
    pub low_precision: bool,
    /// Per level: fraction of successful replications whose band covered
    /// the true curve everywhere.
    pub coverage: Vec<f64>,
    /// Per level: mean integrated band width across successful
    /// replications.
    pub mean_width: Vec<f64>,
    /// Per level: binomial standard error of the coverage estimate.
    pub std_error: Vec<f64>,
    /// Per level, per successful replication: the coverage event.
    pub events: Vec<Vec<bool>>,
    /// Per level, per successful replication: the integrated width.
    pub widths: Vec<Vec<f64>>,
    /// One message per failed replication, with its index.
    pub failure_messages: Vec<String>,
}

struct RepOutcome {
    covered: Vec<bool>,
    widths: Vec<f64>,
}

fn run_replication(
    config: &DgpConfig,
    settings: &HarnessSettings,
    rep: usize,
) -> Result<RepOutcome> {
    let rep_seed = derive_seed(config.master_seed, rep as u64);
    let mut dgp = config.clone();
    dgp.master_seed = rep_seed;

    let sample = gen_fma1(&dgp)?;
    let noise = match dgp.errors {
        ErrorScenario::IidGaussian => gen_errors(&dgp, None)?,
        ErrorScenario::ScoreDependent => {
            // The score driving the noise is estimated from the curves
            // themselves, exactly as a user of the fitted model would.
            let probe = FunctionalDataSet::from_parts(
                sample.grid.clone(),
                vec![sample.curves.clone()],
                DVector::zeros(dgp.n),
            )?
            .center();
            let master = master_basis();
            let first = estimated_first_component_scores(&probe, 0, &master)?;
            gen_errors(&dgp, Some(&first))?
        }
    };
    let responses = gen_responses(&dgp, &sample, &noise)?;
    let data = FunctionalDataSet::from_parts(sample.grid.clone(), vec![sample.curves], responses)?;

    let pipeline_settings = PipelineSettings {
        bases: vec![settings.basis],
        tuning: settings.tuning.clone(),
    };
    let model = fit_pipeline(&data, &pipeline_settings)?;

    let plan = BootstrapPlan {
        replicates: settings.bootstrap_replicates,
        block_length: model.block_length,
        alpha_levels: settings.alpha_levels.clone(),
        weight_mode: settings.weight_mode,
        eval_grid: default_eval_grid(),
        master_seed: derive_seed(rep_seed, BOOTSTRAP_STREAM),
        group: None,
    };
    let band = build_band(&model.fit, &model.bases, &plan)?;

    let synthesis = dgp.synthesis_basis()?;
    let truth_curve = true_beta(dgp.beta, &synthesis, band.grid())?;
    let truth = DMatrix::from_rows(&[truth_curve.transpose()]);

    let mut covered = Vec::with_capacity(band.levels().len());
    let mut widths = Vec::with_capacity(band.levels().len());
    for level in band.levels() {
        covered.push(band_covers(&truth, &level.lower, &level.upper));
        widths.push(mean_band_width(band.grid(), &level.lower, &level.upper)?);
    }
    Ok(RepOutcome { covered, widths })
}

fn summarize(
    levels: &[f64],
    reps: usize,
    outcomes: Vec<Result<RepOutcome>>,
) -> Result<SimulationReport> {
    let mut events = vec![Vec::new(); levels.len()];
    let mut widths = vec![Vec::new(); levels.len()];
    let mut failure_messages = Vec::new();
    for (rep, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(out) => {
                for (l, (&c, &w)) in out.covered.iter().zip(out.widths.iter()).enumerate() {
                    events[l].push(c);
                    widths[l].push(w);
                }
            }
            Err(e) => failure_messages.push(format!("replication {rep}: {e}")),
        }
    }
    let failures = failure_messages.len();
    let successes = reps - failures;
    if successes == 0 {
        return Err(Error::Degenerate(format!(
            "every replication failed; first failure: {}",
            failure_messages[0]
        )));
    }
    let coverage: Vec<f64> = events
        .iter()
        .map(|ev| ev.iter().filter(|&&c| c).count() as f64 / successes as f64)
        .collect();
    let mean_width: Vec<f64> = widths
        .iter()
        .map(|ws| ws.iter().sum::<f64>() / successes as f64)
        .collect();
    let std_error: Vec<f64> = coverage
        .iter()
        .map(|&p| (p * (1.0 - p) / successes as f64).sqrt())
        .collect();
    Ok(SimulationReport {
        levels: levels.to_vec(),
        reps_requested: reps,
        successes,
        failures,
        invalid: failures as f64 > 0.01 * reps as f64,
        low_precision: reps < LOW_PRECISION_REPS,
        coverage,
        mean_width,
        std_error,
        events,
        widths,
        failure_messages,
    })
}

/// Runs `reps` independent replications of generate, fit, band, check.
///
/// Replications are independent down to their seeds, so results do not
/// depend on scheduling; failed replications are recorded and excluded
/// from the summary.
pub fn run_monte_carlo(
    config: &DgpConfig,
    settings: &HarnessSettings,
    reps: usize,
) -> Result<SimulationReport> {
    config.validate()?;
    if reps < MIN_MC_REPS {
        return Err(Error::Config(format!(
            "monte carlo needs at least {MIN_MC_REPS} replications, got {reps}"
        )));
    }
    // Surface plan-level mistakes (bad levels, too few bootstrap
    // replicates) once, up front, instead of as a failure of every
    // replication.
    let probe_plan = BootstrapPlan {
        replicates: settings.bootstrap_replicates,
        block_length: 1,
        alpha_levels: settings.alpha_levels.clone(),
        weight_mode: settings.weight_mode,
        eval_grid: default_eval_grid(),
        master_seed: 0,
        group: None,
    };
    probe_plan.validate(config.n.max(2), 1)?;

    let outcomes: Vec<Result<RepOutcome>> = (0..reps)
        .into_par_iter()
        .map(|rep| run_replication(config, settings, rep))
        .collect();
    summarize(&settings.alpha_levels, reps, outcomes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn base_config() -> DgpConfig {
        DgpConfig::new(40, 0.5, DispersionMode::Diagonal, BasisKind::Fourier, 11)
    }

    fn sample_variance(values: &[f64]) -> f64 {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
    }

    #[test]
    fn config_rejects_out_of_range_fields() {
        let mut c = base_config();
        c.n = 0;
        assert!(c.validate().is_err());

        let mut c = base_config();
        c.grid_size = 10;
        assert!(c.validate().is_err());

        let mut c = base_config();
        c.coordinates = 9;
        assert!(c.validate().is_err());

        let mut c = base_config();
        c.phi1 = -0.1;
        assert!(c.validate().is_err());

        let mut c = base_config();
        c.synthesis = BasisKind::InMaster;
        assert!(c.validate().is_err());

        assert!(base_config().validate().is_ok());
    }

    #[test]
    fn decay_coefficients_match_the_stated_profile() {
        let beta = beta_coefficients(BetaScenario::Decay, 6);
        assert_eq!(beta[0], 0.8);
        assert_eq!(beta[1], 0.5);
        assert_eq!(beta[2], -0.3);
        assert_eq!(beta[3], 0.015625);
        assert_relative_eq!(beta[4], 0.008, max_relative = 1e-15);
        assert_relative_eq!(beta[5], 1.0 / 216.0, max_relative = 1e-15);

        assert!(beta_coefficients(BetaScenario::Zero, 6)
            .iter()
            .all(|&b| b == 0.0));
    }

    #[test]
    fn true_beta_matches_a_hand_summed_fourier_series() {
        // Fourier functions at t, written out directly: 1, then
        // sqrt(2) cos(2 pi m t) and sqrt(2) sin(2 pi m t) in pairs.
        let basis = BasisSet::fourier(5).unwrap();
        let t = 0.3;
        let beta = beta_coefficients(BetaScenario::Decay, 5);
        let s = std::f64::consts::SQRT_2;
        let tau = 2.0 * std::f64::consts::PI;
        let expected = beta[0]
            + beta[1] * s * (tau * t).cos()
            + beta[2] * s * (tau * t).sin()
            + beta[3] * s * (2.0 * tau * t).cos()
            + beta[4] * s * (2.0 * tau * t).sin();
        let curve = true_beta(BetaScenario::Decay, &basis, &[t]).unwrap();
        assert_relative_eq!(curve[0], expected, max_relative = 1e-12);

        let zero = true_beta(BetaScenario::Zero, &basis, &[0.1, 0.9]).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn generator_is_deterministic_in_the_seed() {
        let config = base_config();
        let a = gen_fma1(&config).unwrap();
        let b = gen_fma1(&config).unwrap();
        assert_eq!(a.scores, b.scores);
        assert_eq!(a.curves, b.curves);

        let mut other = base_config();
        other.master_seed = 12;
        let c = gen_fma1(&other).unwrap();
        assert_ne!(a.scores, c.scores);
    }

    #[test]
    fn curves_are_the_coordinates_expanded_in_the_synthesis_basis() {
        let mut config = base_config();
        config.grid_size = 25;
        config.coordinates = 10;
        let sample = gen_fma1(&config).unwrap();
        let shapes = BasisSet::fourier(10).unwrap().eval(&sample.grid).unwrap();
        let rebuilt = &sample.scores * &shapes;
        assert_relative_eq!(
            (&sample.curves - rebuilt).norm(),
            0.0,
            epsilon = 1e-12 * sample.curves.norm()
        );
    }

    #[test]
    fn independent_coordinates_have_the_nominal_variances() {
        let mut config = base_config();
        config.n = 20000;
        config.grid_size = 20;
        config.coordinates = 10;
        config.phi1 = 0.0;
        let sample = gen_fma1(&config).unwrap();

        let col0: Vec<f64> = sample.scores.column(0).iter().copied().collect();
        assert_relative_eq!(sample_variance(&col0), 1.0, epsilon = 0.05);
        let col2: Vec<f64> = sample.scores.column(2).iter().copied().collect();
        assert_relative_eq!(sample_variance(&col2), 1.0 / 9.0, epsilon = 0.012);

        // With phi1 = 0 consecutive curves share no innovation, so the
        // lag-1 autocovariance is zero up to sampling noise.
        let mean = col0.iter().sum::<f64>() / col0.len() as f64;
        let lag1: f64 = col0
            .windows(2)
            .map(|w| (w[0] - mean) * (w[1] - mean))
            .sum::<f64>()
            / (col0.len() - 1) as f64;
        assert!(
            lag1.abs() < 5.0 / (config.n as f64).sqrt(),
            "lag-1 autocovariance {lag1} too large for an independent sequence"
        );
    }

    #[test]
    fn moving_average_inflates_the_first_coordinate_variance() {
        // Var = (1 + phi1^2) * 1 = 1.25 for phi1 = 0.5 under diagonal
        // mixing.
        let mut config = base_config();
        config.n = 50000;
        config.grid_size = 20;
        config.coordinates = 10;
        let sample = gen_fma1(&config).unwrap();
        let col0: Vec<f64> = sample.scores.column(0).iter().copied().collect();
        assert_relative_eq!(sample_variance(&col0), 1.25, epsilon = 0.04);
    }

    #[test]
    fn tridiagonal_mixing_adds_neighbor_variance() {
        let mut config = base_config();
        config.n = 50000;
        config.grid_size = 20;
        config.coordinates = 10;
        config.phi1 = 1.0;
        config.dispersion = DispersionMode::Tridiagonal;
        let sample = gen_fma1(&config).unwrap();

        // Coordinate k picks up 1/25 of each neighbor's innovation
        // variance; the moving average doubles everything at phi1 = 1.
        let expect = |k: usize| {
            let own = (k as f64).powi(-2);
            let left = if k > 1 {
                ((k - 1) as f64).powi(-2) / 25.0
            } else {
                0.0
            };
            let right = ((k + 1) as f64).powi(-2) / 25.0;
            2.0 * (own + left + right)
        };
        for k in [1usize, 3, 7] {
            let col: Vec<f64> = sample.scores.column(k - 1).iter().copied().collect();
            let target = expect(k);
            assert_relative_eq!(sample_variance(&col), target, max_relative = 0.05);
        }
    }

    #[test]
    fn score_dependent_errors_have_the_stationary_ar_variance() {
        // With every score pinned at 2 the error is exactly the AR(1)
        // sequence, whose stationary variance is 1 / (1 - 0.04).
        let mut config = base_config();
        config.n = 200000;
        let scores = DVector::from_element(config.n, 2.0);
        let errors = gen_errors(&config, Some(&scores)).unwrap();
        let values: Vec<f64> = errors.iter().copied().collect();
        assert_relative_eq!(sample_variance(&values), 1.0 / 0.96, epsilon = 0.025);
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        assert!(mean.abs() < 0.012, "error mean {mean} too far from zero");
    }

    #[test]
    fn iid_errors_are_standard_gaussian() {
        let mut config = base_config();
        config.n = 200000;
        config.errors = ErrorScenario::IidGaussian;
        let errors = gen_errors(&config, None).unwrap();
        let values: Vec<f64> = errors.iter().copied().collect();
        assert_relative_eq!(sample_variance(&values), 1.0, epsilon = 0.02);
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        assert!(mean.abs() < 0.01);
    }

    #[test]
    fn score_dependent_errors_need_matching_scores() {
        let config = base_config();
        assert!(gen_errors(&config, None).is_err());
        let short = DVector::from_element(config.n - 1, 1.0);
        assert!(gen_errors(&config, Some(&short)).is_err());
    }

    #[test]
    fn errors_are_deterministic_in_the_seed() {
        let mut config = base_config();
        config.errors = ErrorScenario::IidGaussian;
        let a = gen_errors(&config, None).unwrap();
        let b = gen_errors(&config, None).unwrap();
        assert_eq!(a, b);
        config.master_seed = 99;
        let c = gen_errors(&config, None).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn responses_sum_coordinates_against_the_coefficients() {
        let mut config = base_config();
        config.coordinates = 10;
        let sample = gen_fma1(&config).unwrap();
        let noise = DVector::from_element(config.n, 0.25);
        let responses = gen_responses(&config, &sample, &noise).unwrap();

        let beta = beta_coefficients(BetaScenario::Decay, 10);
        for i in [0usize, 7, config.n - 1] {
            let direct: f64 = (0..10).map(|k| beta[k] * sample.scores[(i, k)]).sum();
            assert_relative_eq!(responses[i], direct + 0.25, max_relative = 1e-12);
        }

        let mut zero = config.clone();
        zero.beta = BetaScenario::Zero;
        let pure = gen_responses(&zero, &sample, &noise).unwrap();
        assert_eq!(pure, noise);

        let short = DVector::from_element(config.n - 1, 0.0);
        assert!(gen_responses(&config, &sample, &short).is_err());
    }

    #[test]
    fn coverage_check_is_pointwise_and_everywhere() {
        let truth = DMatrix::from_row_slice(1, 3, &[0.0, 1.0, -1.0]);
        let lower = DMatrix::from_row_slice(1, 3, &[-0.5, 0.5, -1.5]);
        let upper = DMatrix::from_row_slice(1, 3, &[0.5, 1.5, -0.5]);
        assert!(band_covers(&truth, &lower, &upper));

        // One violated point anywhere breaks coverage.
        let mut tight = upper.clone();
        tight[(0, 1)] = 0.9;
        assert!(!band_covers(&truth, &lower, &tight));

        // An infinite band covers anything; a zero-width band away from
        // the truth covers nothing.
        let inf_lo = DMatrix::from_element(1, 3, f64::NEG_INFINITY);
        let inf_hi = DMatrix::from_element(1, 3, f64::INFINITY);
        assert!(band_covers(&truth, &inf_lo, &inf_hi));
        let flat = DMatrix::from_element(1, 3, 0.2);
        assert!(!band_covers(&truth, &flat, &flat));
        assert!(band_covers(&flat, &flat, &flat));
    }

    #[test]
    fn band_width_integrates_and_averages_rows() {
        let grid = vec![0.0, 0.25, 0.5, 0.75, 1.0];
        let lower = DMatrix::from_element(2, 5, 0.0);
        let mut upper = DMatrix::from_element(2, 5, 2.0);
        upper.row_mut(1).fill(4.0);
        // Row widths 2 and 4, exact under the trapezoid rule.
        let width = mean_band_width(&grid, &lower, &upper).unwrap();
        assert_relative_eq!(width, 3.0, max_relative = 1e-12);

        let bad = DMatrix::from_element(2, 4, 0.0);
        assert!(mean_band_width(&grid, &bad, &upper).is_err());
    }

    #[test]
    fn first_component_scores_recover_a_rank_one_signal() {
        // Curves a_i * shape(t) have exactly one component; the estimated
        // scores must correlate with the a_i up to the usual sign flip.
        let n = 30;
        let grid = crate::quadrature::unit_grid(40).unwrap();
        let shape_basis = BasisSet::legendre(2).unwrap();
        let shapes = shape_basis.eval(&grid).unwrap();
        let amplitudes: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin() + 0.1).collect();
        let mut curves = DMatrix::zeros(n, grid.len());
        for i in 0..n {
            for t in 0..grid.len() {
                curves[(i, t)] = amplitudes[i] * shapes[(1, t)];
            }
        }
        let data = FunctionalDataSet::from_parts(grid, vec![curves], DVector::zeros(n))
            .unwrap()
            .center();
        let scores = estimated_first_component_scores(&data, 0, &master_basis()).unwrap();

        let mean_a = amplitudes.iter().sum::<f64>() / n as f64;
        let centered: Vec<f64> = amplitudes.iter().map(|a| a - mean_a).collect();
        let dot: f64 = (0..n).map(|i| centered[i] * scores[i]).sum();
        let corr = dot
            / (centered.iter().map(|v| v * v).sum::<f64>().sqrt() * scores.norm());
        assert!(
            corr.abs() > 0.999,
            "estimated first scores barely correlate with the amplitudes: {corr}"
        );
    }

    #[test]
    fn summary_excludes_failures_and_flags_high_failure_rates() {
        let levels = [0.05, 0.10];
        let mut outcomes: Vec<Result<RepOutcome>> = Vec::new();
        for rep in 0..100 {
            if rep == 3 || rep == 40 {
                outcomes.push(Err(Error::IllPosed("synthetic failure".into())));
            } else {
                outcomes.push(Ok(RepOutcome {
                    covered: vec![rep % 2 == 0, rep % 4 == 0],
                    widths: vec![2.0, 1.5],
                }));
            }
        }
        let report = summarize(&levels, 100, outcomes).unwrap();
        assert_eq!(report.successes, 98);
        assert_eq!(report.failures, 2);
        assert!(report.invalid, "2 percent failures must invalidate the run");
        assert_eq!(report.events[0].len(), 98);
        assert_eq!(report.widths[1].len(), 98);
        assert!(report.failure_messages[0].contains("replication 3"));
        assert!(report.failure_messages[1].contains("replication 40"));

        // Coverage and its standard error recompute from the stored
        // events.
        for l in 0..2 {
            let p = report.events[l].iter().filter(|&&c| c).count() as f64 / 98.0;
            assert_relative_eq!(report.coverage[l], p, max_relative = 1e-12);
            assert_relative_eq!(
                report.std_error[l],
                (p * (1.0 - p) / 98.0).sqrt(),
                max_relative = 1e-12
            );
            assert_relative_eq!(report.mean_width[l], [2.0, 1.5][l], max_relative = 1e-12);
        }
    }

    #[test]
    fn summary_tolerates_a_single_failure_in_a_large_run() {
        let levels = [0.05];
        let outcomes: Vec<Result<RepOutcome>> = (0..200)
            .map(|rep| {
                if rep == 0 {
                    Err(Error::Degenerate("one bad draw".into()))
                } else {
                    Ok(RepOutcome {
                        covered: vec![true],
                        widths: vec![1.0],
                    })
                }
            })
            .collect();
        let report = summarize(&levels, 200, outcomes).unwrap();
        assert!(!report.invalid, "0.5 percent failures stay valid");
        assert!(!report.low_precision);
        assert_eq!(report.coverage, vec![1.0]);

        let all_bad: Vec<Result<RepOutcome>> =
            (0..50).map(|_| Err(Error::IllPosed("x".into()))).collect();
        let err = summarize(&levels, 50, all_bad).unwrap_err();
        assert!(err.to_string().contains("replication 0"));
    }

    fn fast_harness(basis: WorkingBasis) -> HarnessSettings {
        let mut settings = HarnessSettings::new(basis, WeightMode::Unit, 100);
        settings.tuning.fixed_dims = Some(vec![4]);
        settings.tuning.fixed_lambda = Some(1e-6);
        settings.tuning.fixed_block_length = Some(3);
        settings
    }

    fn fast_config(n: usize, errors: ErrorScenario) -> DgpConfig {
        let mut config =
            DgpConfig::new(n, 0.5, DispersionMode::Diagonal, BasisKind::Fourier, 2024);
        config.grid_size = 40;
        config.coordinates = 10;
        config.errors = errors;
        config
    }

    #[test]
    fn monte_carlo_smoke_run_has_coherent_summaries() {
        let config = fast_config(100, ErrorScenario::IidGaussian);
        let settings = fast_harness(WorkingBasis::Fourier);
        let report = run_monte_carlo(&config, &settings, 50).unwrap();

        assert_eq!(report.reps_requested, 50);
        assert_eq!(report.failures, 0, "{:?}", report.failure_messages);
        assert!(report.low_precision, "50 replications is a quick look");
        assert!(!report.invalid);
        for l in 0..2 {
            assert!(report.coverage[l] >= 0.0 && report.coverage[l] <= 1.0);
            assert!(report.mean_width[l] > 0.0);
            assert!(report.widths[l].iter().all(|&w| w > 0.0));
        }
        // A 95% band contains the 90% band, so its coverage events
        // dominate and its widths are strictly larger replication by
        // replication.
        for r in 0..report.successes {
            assert!(report.events[0][r] || !report.events[1][r]);
            assert!(report.widths[0][r] > report.widths[1][r]);
        }
        assert!(report.coverage[0] >= report.coverage[1]);
        // Coverage should be in a plausible band for a working method,
        // not a degenerate 0 or 1 split across all replications.
        assert!(report.coverage[0] > 0.5);

        let again = run_monte_carlo(&config, &settings, 50).unwrap();
        assert_eq!(report.events, again.events);
        assert_eq!(report.widths, again.widths);

        let mut reseeded_config = config.clone();
        reseeded_config.master_seed = 4096;
        let shifted = run_monte_carlo(&reseeded_config, &settings, 50).unwrap();
        assert_ne!(report.widths, shifted.widths);
    }

    #[test]
    fn monte_carlo_runs_the_score_dependent_scenario() {
        let config = fast_config(80, ErrorScenario::ScoreDependent);
        let settings = fast_harness(WorkingBasis::Fourier);
        let report = run_monte_carlo(&config, &settings, 50).unwrap();
        assert_eq!(report.failures, 0, "{:?}", report.failure_messages);
        assert!(report.coverage[0] > 0.5);
        assert!(report.mean_width[0] > report.mean_width[1]);
    }

    #[test]
    fn monte_carlo_rejects_thin_or_broken_plans() {
        let config = fast_config(100, ErrorScenario::IidGaussian);
        let settings = fast_harness(WorkingBasis::Fourier);
        assert!(matches!(
            run_monte_carlo(&config, &settings, 49),
            Err(Error::Config(_))
        ));

        let mut thin = settings.clone();
        thin.bootstrap_replicates = 50;
        assert!(run_monte_carlo(&config, &thin, 50).is_err());

        let mut bad_levels = settings;
        bad_levels.alpha_levels = vec![1.5];
        assert!(run_monte_carlo(&config, &bad_levels, 50).is_err());
    }
}
