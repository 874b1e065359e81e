//! Observed functional predictors with scalar responses: CSV ingestion,
//! centering, projection onto a basis with scale estimation, and
//! principal component extraction.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::basis::BasisSet;
use crate::error::{Error, Result};
use crate::quadrature::trapezoid_weights;

/// Minimum observation-grid resolution for quadrature-based projections.
const MIN_PROJECTION_GRID: usize = 20;

/// Relative floor under which a scale estimate is treated as zero and its
/// coordinate dropped from the standardized design.
const SCALE_FLOOR_RATIO: f64 = 1e-8;

/// `n` observations of `p` functional predictors on a common grid in
/// [0, 1], plus scalar responses. Rows are in time order; the block
/// bootstrap depends on it.
#[derive(Debug, Clone)]
pub struct FunctionalDataSet {
    grid: Vec<f64>,
    /// One `n x |grid|` matrix per predictor.
    curves: Vec<DMatrix<f64>>,
    responses: DVector<f64>,
    centered: bool,
}

/// Projected basis scores of a dataset: raw scores, their scales, and the
/// standardized scores entering the design matrix.
#[derive(Debug, Clone)]
pub struct ScoreSet {
    /// Per predictor: `n x c_j` raw projection coefficients.
    raw: Vec<DMatrix<f64>>,
    /// Per predictor: length-`c_j` scale estimates (standard deviation of
    /// each raw column, divisor n).
    scales: Vec<DVector<f64>>,
    /// Per predictor: raw scores divided by their scale; zero where the
    /// scale floor excluded the coordinate.
    std: Vec<DMatrix<f64>>,
    dims: Vec<usize>,
    /// Coordinates dropped by the scale floor.
    excluded: Vec<Vec<bool>>,
}

/// Principal component basis estimated from one predictor, with the
/// associated eigenvalue spectrum of the master-coefficient covariance.
#[derive(Debug, Clone)]
pub struct FpcResult {
    pub basis: BasisSet,
    /// All master-spectrum eigenvalues, sorted decreasing (not just the
    /// retained ones); the leading `rank` generate the basis.
    pub eigenvalues: DVector<f64>,
    pub warnings: Vec<String>,
}

impl FunctionalDataSet {
    /// Builds a dataset from in-memory parts. The grid must be strictly
    /// increasing inside [0, 1]; every curve matrix must be `n x |grid|`.
    pub fn from_parts(
        grid: Vec<f64>,
        curves: Vec<DMatrix<f64>>,
        responses: DVector<f64>,
    ) -> Result<Self> {
        if grid.len() < 2 {
            return Err(Error::Config("grid needs at least two points".into()));
        }
        if grid[0] < 0.0 || *grid.last().unwrap() > 1.0 {
            return Err(Error::Config("grid must lie inside [0, 1]".into()));
        }
        for pair in grid.windows(2) {
            if pair[1] <= pair[0] {
                return Err(Error::Config(format!(
                    "grid is not strictly increasing at {} -> {}",
                    pair[0], pair[1]
                )));
            }
        }
        if curves.is_empty() {
            return Err(Error::Config("at least one predictor is required".into()));
        }
        let n = responses.len();
        if n == 0 {
            return Err(Error::Config("at least one observation is required".into()));
        }
        for (j, m) in curves.iter().enumerate() {
            if m.nrows() != n || m.ncols() != grid.len() {
                return Err(Error::Config(format!(
                    "predictor {} has shape {}x{}, expected {}x{}",
                    j + 1,
                    m.nrows(),
                    m.ncols(),
                    n,
                    grid.len()
                )));
            }
        }
        Ok(Self {
            grid,
            curves,
            responses,
            centered: false,
        })
    }

    /// Reads curve and response files laid out as described in the crate
    /// documentation (wide curves CSV keyed by id, two-column responses).
    /// Observation order follows the curves file; responses are matched by
    /// id. The grid from the header is rescaled affinely onto [0, 1].
    pub fn load_curves(curves_path: &Path, responses_path: &Path) -> Result<Self> {
        let parsed = read_curves_csv(curves_path)?;
        let responses = read_responses_csv(responses_path)?;

        let n = parsed.ids.len();
        let mut y = DVector::zeros(n);
        for (i, id) in parsed.ids.iter().enumerate() {
            match responses.get(id) {
                Some(&value) => y[i] = value,
                None => {
                    return Err(Error::Parse {
                        path: responses_path.display().to_string(),
                        row: 1,
                        column: 1,
                        message: format!("no response for id {id}"),
                    })
                }
            }
        }
        if responses.len() != n {
            let extra = responses
                .keys()
                .find(|id| !parsed.ids.contains(id))
                .cloned()
                .unwrap_or_default();
            return Err(Error::Parse {
                path: responses_path.display().to_string(),
                row: 1,
                column: 1,
                message: format!("response id {extra} has no curves"),
            });
        }
        Self::from_parts(parsed.grid, parsed.curves, y)
    }

    pub fn n(&self) -> usize {
        self.responses.len()
    }

    pub fn p(&self) -> usize {
        self.curves.len()
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn curves(&self, predictor: usize) -> &DMatrix<f64> {
        &self.curves[predictor]
    }

    pub fn responses(&self) -> &DVector<f64> {
        &self.responses
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    /// Removes the pointwise mean curve from every predictor and the mean
    /// from the responses. Idempotent.
    pub fn center(&self) -> Self {
        let n = self.n() as f64;
        let mut curves = self.curves.clone();
        for m in &mut curves {
            for g in 0..m.ncols() {
                let mean = m.column(g).sum() / n;
                for i in 0..m.nrows() {
                    m[(i, g)] -= mean;
                }
            }
        }
        let y_mean = self.responses.sum() / n;
        let responses = self.responses.map(|v| v - y_mean);
        Self {
            grid: self.grid.clone(),
            curves,
            responses,
            centered: true,
        }
    }

    fn check_projection_grid(&self) -> Result<()> {
        if self.grid.len() < MIN_PROJECTION_GRID {
            return Err(Error::Config(format!(
                "projection needs at least {} grid points, got {}",
                MIN_PROJECTION_GRID,
                self.grid.len()
            )));
        }
        Ok(())
    }

    /// Projects every curve onto its predictor's basis by the trapezoid
    /// rule on the observation grid, estimates per-coordinate scales
    /// (standard deviation, divisor n), and standardizes. Coordinates whose
    /// scale falls under the floor are zeroed and marked excluded.
    pub fn project_scores(&self, bases: &[BasisSet], dims: &[usize]) -> Result<ScoreSet> {
        self.check_projection_grid()?;
        if bases.len() != self.p() || dims.len() != self.p() {
            return Err(Error::Config(format!(
                "need one basis and one dimension per predictor ({} given, {} predictors)",
                bases.len().min(dims.len()),
                self.p()
            )));
        }
        let weights = trapezoid_weights(&self.grid)?;
        let n = self.n() as f64;
        let mut raw = Vec::with_capacity(self.p());
        let mut scales = Vec::with_capacity(self.p());
        let mut std = Vec::with_capacity(self.p());
        let mut excluded = Vec::with_capacity(self.p());
        for j in 0..self.p() {
            let c = dims[j];
            if c == 0 {
                return Err(Error::Config(format!(
                    "predictor {} requests zero basis functions",
                    j + 1
                )));
            }
            if c > bases[j].size() {
                return Err(Error::Config(format!(
                    "predictor {} requests {} basis functions but the basis has {}",
                    j + 1,
                    c,
                    bases[j].size()
                )));
            }
            let values = bases[j].eval(&self.grid)?;
            // Quadrature of curve-basis products: (n x G) * (G x c).
            let mut weighted = values.rows(0, c).transpose().into_owned();
            for (g, &w) in weights.iter().enumerate() {
                weighted.row_mut(g).scale_mut(w);
            }
            let raw_j = &self.curves[j] * weighted;

            let mut scale_j = DVector::zeros(c);
            for k in 0..c {
                let col = raw_j.column(k);
                let mean = col.sum() / n;
                let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                scale_j[k] = var.sqrt();
            }
            let max_scale = scale_j.iter().fold(0.0f64, |a, &b| a.max(b));
            let excluded_j: Vec<bool> = (0..c)
                .map(|k| scale_j[k] <= 0.0 || scale_j[k] < SCALE_FLOOR_RATIO * max_scale)
                .collect();
            let mut std_j = raw_j.clone();
            for k in 0..c {
                if excluded_j[k] {
                    std_j.column_mut(k).fill(0.0);
                } else {
                    std_j.column_mut(k).scale_mut(1.0 / scale_j[k]);
                }
            }
            raw.push(raw_j);
            scales.push(scale_j);
            std.push(std_j);
            excluded.push(excluded_j);
        }
        Ok(ScoreSet {
            raw,
            scales,
            std,
            dims: dims.to_vec(),
            excluded,
        })
    }

    /// Estimates the leading `rank` principal components of one predictor:
    /// curves are projected onto the master basis, the covariance of the
    /// master coefficients is eigendecomposed, and the eigenvector rows
    /// become a basis over the master family. Signs are fixed so each
    /// component has positive integral against the first master function
    /// (first nonzero coefficient positive when that integral vanishes).
    pub fn principal_components(
        &self,
        predictor: usize,
        master: &BasisSet,
        rank: usize,
    ) -> Result<FpcResult> {
        self.check_projection_grid()?;
        if predictor >= self.p() {
            return Err(Error::Config(format!(
                "predictor index {} out of range (p = {})",
                predictor + 1,
                self.p()
            )));
        }
        if rank == 0 || rank > master.size() {
            return Err(Error::Config(format!(
                "component rank must be in 1..={}, got {}",
                master.size(),
                rank
            )));
        }
        let m = master.size();
        let weights = trapezoid_weights(&self.grid)?;
        let values = master.eval(&self.grid)?;
        let mut weighted = values.transpose();
        for (g, &w) in weights.iter().enumerate() {
            weighted.row_mut(g).scale_mut(w);
        }
        let scores = &self.curves[predictor] * weighted;

        let n = self.n() as f64;
        let means = scores.row_mean();
        let mut centered = scores;
        for i in 0..centered.nrows() {
            for k in 0..m {
                centered[(i, k)] -= means[k];
            }
        }
        let cov = centered.transpose() * &centered / n;
        let eigen = cov.symmetric_eigen();

        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| {
            eigen.eigenvalues[b]
                .partial_cmp(&eigen.eigenvalues[a])
                .unwrap()
        });
        let eigenvalues =
            DVector::from_iterator(m, order.iter().map(|&k| eigen.eigenvalues[k].max(0.0)));

        let mut warnings = Vec::new();
        for k in 0..rank.min(m - 1) {
            if (eigenvalues[k] - eigenvalues[k + 1]).abs() < 1e-10 {
                warnings.push(format!(
                    "eigenvalues {} and {} are within 1e-10 of each other; the corresponding components are not identified",
                    k + 1,
                    k + 2
                ));
            }
        }

        let mut coeffs = DMatrix::zeros(rank, m);
        for (row, &k) in order.iter().take(rank).enumerate() {
            let v = eigen.eigenvectors.column(k);
            let lead = v
                .iter()
                .find(|x| x.abs() > 0.0)
                .copied()
                .unwrap_or(1.0);
            let sign = if v[0] != 0.0 {
                v[0].signum()
            } else {
                lead.signum()
            };
            for l in 0..m {
                coeffs[(row, l)] = sign * v[l];
            }
        }
        let basis = BasisSet::from_master_coefficients(master.clone(), coeffs)?;
        Ok(FpcResult {
            basis,
            eigenvalues,
            warnings,
        })
    }
}

impl ScoreSet {
    pub fn p(&self) -> usize {
        self.dims.len()
    }

    pub fn n(&self) -> usize {
        self.raw[0].nrows()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// Total design dimension: sum of the per-predictor truncations.
    pub fn total_dim(&self) -> usize {
        self.dims.iter().sum()
    }

    pub fn raw(&self, predictor: usize) -> &DMatrix<f64> {
        &self.raw[predictor]
    }

    pub fn scales(&self, predictor: usize) -> &DVector<f64> {
        &self.scales[predictor]
    }

    pub fn standardized(&self, predictor: usize) -> &DMatrix<f64> {
        &self.std[predictor]
    }

    pub fn excluded(&self, predictor: usize) -> &[bool] {
        &self.excluded[predictor]
    }
}

struct ParsedCurves {
    grid: Vec<f64>,
    ids: Vec<String>,
    curves: Vec<DMatrix<f64>>,
}

fn parse_field(path: &Path, row: usize, column: usize, field: &str) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| Error::Parse {
        path: path.display().to_string(),
        row,
        column,
        message: format!("expected a number, found {field:?}"),
    })
}

fn open_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(file))
}

fn read_curves_csv(path: &Path) -> Result<ParsedCurves> {
    let mut reader = open_reader(path)?;
    let mut records = reader.records();
    let header = match records.next() {
        Some(record) => record.map_err(|e| csv_error(path, e))?,
        None => {
            return Err(Error::Parse {
                path: path.display().to_string(),
                row: 1,
                column: 1,
                message: "file is empty".into(),
            })
        }
    };
    if header.get(0).map(str::trim) != Some("id") {
        return Err(Error::Parse {
            path: path.display().to_string(),
            row: 1,
            column: 1,
            message: "curves header must start with `id`".into(),
        });
    }
    let has_pred = header.get(1).map(str::trim) == Some("pred");
    let grid_start = if has_pred { 2 } else { 1 };
    let mut grid_raw = Vec::new();
    for (offset, field) in header.iter().enumerate().skip(grid_start) {
        grid_raw.push(parse_field(path, 1, offset + 1, field)?);
    }
    if grid_raw.len() < 2 {
        return Err(Error::Parse {
            path: path.display().to_string(),
            row: 1,
            column: grid_start + 1,
            message: "curves header needs at least two grid points".into(),
        });
    }
    for (i, pair) in grid_raw.windows(2).enumerate() {
        if pair[1] <= pair[0] {
            return Err(Error::Parse {
                path: path.display().to_string(),
                row: 1,
                column: grid_start + i + 2,
                message: format!(
                    "grid header is not strictly increasing at {} -> {}",
                    pair[0], pair[1]
                ),
            });
        }
    }
    let lo = grid_raw[0];
    let span = grid_raw[grid_raw.len() - 1] - lo;
    let g = grid_raw.len();
    let grid: Vec<f64> = grid_raw
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            if i == g - 1 {
                1.0
            } else {
                (t - lo) / span
            }
        })
        .collect();

    let expected_fields = grid_start + g;
    let mut ids: Vec<String> = Vec::new();
    let mut index: HashMap<(String, usize), Vec<f64>> = HashMap::new();
    let mut max_pred = 1usize;
    for (data_row, record) in records.enumerate() {
        let row = data_row + 2;
        let record = record.map_err(|e| csv_error(path, e))?;
        if record.len() != expected_fields {
            return Err(Error::Parse {
                path: path.display().to_string(),
                row,
                column: record.len().min(expected_fields) + 1,
                message: format!(
                    "expected {} fields, found {}",
                    expected_fields,
                    record.len()
                ),
            });
        }
        let id = record.get(0).unwrap().trim().to_string();
        if id.is_empty() {
            return Err(Error::Parse {
                path: path.display().to_string(),
                row,
                column: 1,
                message: "empty id".into(),
            });
        }
        let pred = if has_pred {
            let field = record.get(1).unwrap();
            let value = field.trim().parse::<usize>().map_err(|_| Error::Parse {
                path: path.display().to_string(),
                row,
                column: 2,
                message: format!("expected a positive predictor index, found {field:?}"),
            })?;
            if value == 0 {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    row,
                    column: 2,
                    message: "predictor indices are 1-based".into(),
                });
            }
            value
        } else {
            1
        };
        max_pred = max_pred.max(pred);
        let mut values = Vec::with_capacity(g);
        for offset in grid_start..expected_fields {
            values.push(parse_field(path, row, offset + 1, record.get(offset).unwrap())?);
        }
        if !ids.contains(&id) {
            ids.push(id.clone());
        }
        if index.insert((id.clone(), pred), values).is_some() {
            return Err(Error::Parse {
                path: path.display().to_string(),
                row,
                column: 1,
                message: format!("duplicate curve for id {id}, predictor {pred}"),
            });
        }
    }
    if ids.is_empty() {
        return Err(Error::Parse {
            path: path.display().to_string(),
            row: 2,
            column: 1,
            message: "no curve rows".into(),
        });
    }
    let n = ids.len();
    let mut curves = Vec::with_capacity(max_pred);
    for pred in 1..=max_pred {
        let mut m = DMatrix::zeros(n, g);
        for (i, id) in ids.iter().enumerate() {
            let values = index.get(&(id.clone(), pred)).ok_or_else(|| Error::Parse {
                path: path.display().to_string(),
                row: 1,
                column: 1,
                message: format!("missing curve for id {id}, predictor {pred}"),
            })?;
            for (col, &v) in values.iter().enumerate() {
                m[(i, col)] = v;
            }
        }
        curves.push(m);
    }
    Ok(ParsedCurves { grid, ids, curves })
}

fn read_responses_csv(path: &Path) -> Result<HashMap<String, f64>> {
    let mut reader = open_reader(path)?;
    let mut records = reader.records();
    let header = match records.next() {
        Some(record) => record.map_err(|e| csv_error(path, e))?,
        None => {
            return Err(Error::Parse {
                path: path.display().to_string(),
                row: 1,
                column: 1,
                message: "file is empty".into(),
            })
        }
    };
    if header.get(0).map(str::trim) != Some("id") || header.get(1).map(str::trim) != Some("y") {
        return Err(Error::Parse {
            path: path.display().to_string(),
            row: 1,
            column: 1,
            message: "responses header must be `id,y`".into(),
        });
    }
    let mut out = HashMap::new();
    for (data_row, record) in records.enumerate() {
        let row = data_row + 2;
        let record = record.map_err(|e| csv_error(path, e))?;
        if record.len() != 2 {
            return Err(Error::Parse {
                path: path.display().to_string(),
                row,
                column: record.len().min(2) + 1,
                message: format!("expected 2 fields, found {}", record.len()),
            });
        }
        let id = record.get(0).unwrap().trim().to_string();
        let y = parse_field(path, row, 2, record.get(1).unwrap())?;
        if out.insert(id.clone(), y).is_some() {
            return Err(Error::Parse {
                path: path.display().to_string(),
                row,
                column: 1,
                message: format!("duplicate response for id {id}"),
            });
        }
    }
    Ok(out)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let row = e
        .position()
        .map(|pos| pos.line() as usize)
        .unwrap_or(0);
    Error::Parse {
        path: path.display().to_string(),
        row,
        column: 1,
        message: e.to_string(),
    }
}
