//! Orthonormal basis families on [0, 1]: Fourier, normalized Legendre, and
//! bases expressed as coefficient rows over a master family (used for
//! estimated principal components so second derivatives stay analytic).
//!
//! Function indexing is 1-based in documentation: row `k` of an evaluation
//! matrix holds the values of the k-th basis function.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::quadrature::QuadratureRule;

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Family tag for a basis set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisKind {
    /// 1, sqrt(2) cos(2 pi m t), sqrt(2) sin(2 pi m t), interleaved.
    Fourier,
    /// sqrt(2k - 1) P_{k-1}(2t - 1) with P the classical Legendre polynomial.
    Legendre,
    /// Rows of orthonormal coefficients over a stored master basis.
    InMaster,
}

/// An ordered family of orthonormal functions on [0, 1] with analytic
/// second derivatives, together with a quadrature rule sharp enough for
/// its inner products.
#[derive(Debug, Clone)]
pub struct BasisSet {
    kind: BasisKind,
    size: usize,
    master: Option<Box<BasisSet>>,
    master_coeffs: Option<DMatrix<f64>>,
    quadrature: QuadratureRule,
}

impl BasisSet {
    /// Fourier family: alpha_1 = 1, alpha_{2m} = sqrt(2) cos(2 pi m t),
    /// alpha_{2m+1} = sqrt(2) sin(2 pi m t).
    pub fn fourier(size: usize) -> Result<Self> {
        Self::check_size(size)?;
        Ok(Self {
            kind: BasisKind::Fourier,
            size,
            master: None,
            master_coeffs: None,
            quadrature: QuadratureRule::gauss_legendre(2 * size + 10)?,
        })
    }

    /// Normalized Legendre family: alpha_k = sqrt(2k - 1) P_{k-1}(2t - 1).
    pub fn legendre(size: usize) -> Result<Self> {
        Self::check_size(size)?;
        Ok(Self {
            kind: BasisKind::Legendre,
            size,
            master: None,
            master_coeffs: None,
            quadrature: QuadratureRule::gauss_legendre(2 * size + 10)?,
        })
    }

    /// Basis whose k-th function is the combination
    /// `sum_l coeffs[(k, l)] * master_l(t)`. Rows must be orthonormal so the
    /// resulting family is itself orthonormal.
    pub fn from_master_coefficients(master: BasisSet, coeffs: DMatrix<f64>) -> Result<Self> {
        let size = coeffs.nrows();
        Self::check_size(size)?;
        if coeffs.ncols() != master.size() {
            return Err(Error::Config(format!(
                "coefficient rows have length {} but the master basis has size {}",
                coeffs.ncols(),
                master.size()
            )));
        }
        let cross = &coeffs * coeffs.transpose();
        for k in 0..size {
            for l in 0..size {
                let target = if k == l { 1.0 } else { 0.0 };
                if (cross[(k, l)] - target).abs() > 1e-8 {
                    return Err(Error::Config(format!(
                        "coefficient rows {} and {} are not orthonormal (inner product {:.3e})",
                        k + 1,
                        l + 1,
                        cross[(k, l)]
                    )));
                }
            }
        }
        let quadrature = master.quadrature.clone();
        Ok(Self {
            kind: BasisKind::InMaster,
            size,
            master: Some(Box::new(master)),
            master_coeffs: Some(coeffs),
            quadrature,
        })
    }

    fn check_size(size: usize) -> Result<()> {
        if size == 0 {
            return Err(Error::Config("basis size must be positive".into()));
        }
        Ok(())
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Coefficient rows over the master basis; present only for
    /// `BasisKind::InMaster`.
    pub fn master_coeffs(&self) -> Option<&DMatrix<f64>> {
        self.master_coeffs.as_ref()
    }

    pub fn quadrature(&self) -> &QuadratureRule {
        &self.quadrature
    }

    fn check_points(points: &[f64]) -> Result<()> {
        for &t in points {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::DomainPoint(t));
            }
        }
        Ok(())
    }

    /// Evaluates all basis functions: entry (k, i) is alpha_{k+1}(points[i]).
    pub fn eval(&self, points: &[f64]) -> Result<DMatrix<f64>> {
        Self::check_points(points)?;
        Ok(self.eval_unchecked(points))
    }

    /// Second derivatives: entry (k, i) is alpha_{k+1}''(points[i]).
    pub fn eval_d2(&self, points: &[f64]) -> Result<DMatrix<f64>> {
        Self::check_points(points)?;
        Ok(self.eval_d2_unchecked(points))
    }

    fn eval_unchecked(&self, points: &[f64]) -> DMatrix<f64> {
        match self.kind {
            BasisKind::Fourier => self.eval_fourier(points, false),
            BasisKind::Legendre => self.eval_legendre(points, false),
            BasisKind::InMaster => {
                let master = self.master.as_ref().expect("in-master basis holds a master");
                self.master_coeffs.as_ref().unwrap() * master.eval_unchecked(points)
            }
        }
    }

    fn eval_d2_unchecked(&self, points: &[f64]) -> DMatrix<f64> {
        match self.kind {
            BasisKind::Fourier => self.eval_fourier(points, true),
            BasisKind::Legendre => self.eval_legendre(points, true),
            BasisKind::InMaster => {
                let master = self.master.as_ref().expect("in-master basis holds a master");
                self.master_coeffs.as_ref().unwrap() * master.eval_d2_unchecked(points)
            }
        }
    }

    fn eval_fourier(&self, points: &[f64], second_derivative: bool) -> DMatrix<f64> {
        let sqrt2 = std::f64::consts::SQRT_2;
        let mut out = DMatrix::zeros(self.size, points.len());
        for (i, &t) in points.iter().enumerate() {
            for k in 1..=self.size {
                let value = if k == 1 {
                    if second_derivative {
                        0.0
                    } else {
                        1.0
                    }
                } else {
                    let m = (k / 2) as f64;
                    let phase = TWO_PI * m * t;
                    let base = if k % 2 == 0 {
                        sqrt2 * phase.cos()
                    } else {
                        sqrt2 * phase.sin()
                    };
                    if second_derivative {
                        -(TWO_PI * m).powi(2) * base
                    } else {
                        base
                    }
                };
                out[(k - 1, i)] = value;
            }
        }
        out
    }

    fn eval_legendre(&self, points: &[f64], second_derivative: bool) -> DMatrix<f64> {
        let s = self.size;
        let mut out = DMatrix::zeros(s, points.len());
        let mut p = vec![0.0; s];
        let mut dp = vec![0.0; s];
        let mut ddp = vec![0.0; s];
        for (i, &t) in points.iter().enumerate() {
            let u = 2.0 * t - 1.0;
            p[0] = 1.0;
            dp[0] = 0.0;
            ddp[0] = 0.0;
            if s > 1 {
                p[1] = u;
                dp[1] = 1.0;
                ddp[1] = 0.0;
            }
            for k in 2..s {
                let kf = k as f64;
                p[k] = ((2.0 * kf - 1.0) * u * p[k - 1] - (kf - 1.0) * p[k - 2]) / kf;
                dp[k] = u * dp[k - 1] + kf * p[k - 1];
                ddp[k] = u * ddp[k - 1] + (kf + 1.0) * dp[k - 1];
            }
            for k in 0..s {
                let norm = (2.0 * (k as f64 + 1.0) - 1.0).sqrt();
                out[(k, i)] = if second_derivative {
                    // Chain rule for the [0, 1] -> [-1, 1] substitution.
                    norm * 4.0 * ddp[k]
                } else {
                    norm * p[k]
                };
            }
        }
        out
    }

    /// Gram matrix of inner products under the stored quadrature;
    /// identity up to tolerance for a valid orthonormal family.
    pub fn gram_matrix(&self) -> DMatrix<f64> {
        let values = self.eval_unchecked(self.quadrature.nodes());
        let mut weighted = values.clone();
        for (i, &w) in self.quadrature.weights().iter().enumerate() {
            weighted.column_mut(i).scale_mut(w);
        }
        let gram = &weighted * values.transpose();
        symmetrize(gram)
    }

    /// Matrix of second-derivative inner products for the first `size`
    /// functions: entry (k, l) is the integral of alpha_k'' alpha_l''.
    ///
    /// Fourier entries come from the closed form ((2 pi m)^4 diagonal, zero
    /// elsewhere by orthogonality of the derivative family); polynomial
    /// bases integrate exactly under the stored Gauss-Legendre rule.
    pub fn raw_penalty_matrix(&self, size: usize) -> Result<DMatrix<f64>> {
        if size > self.size {
            return Err(Error::Config(format!(
                "penalty block size {} exceeds basis size {}",
                size, self.size
            )));
        }
        let full = match self.kind {
            BasisKind::Fourier => {
                let mut out = DMatrix::zeros(size, size);
                for k in 2..=size {
                    let m = (k / 2) as f64;
                    out[(k - 1, k - 1)] = (TWO_PI * m).powi(4);
                }
                return Ok(out);
            }
            BasisKind::Legendre => {
                let d2 = self.eval_d2_unchecked(self.quadrature.nodes());
                let mut weighted = d2.clone();
                for (i, &w) in self.quadrature.weights().iter().enumerate() {
                    weighted.column_mut(i).scale_mut(w);
                }
                symmetrize(&weighted * d2.transpose())
            }
            BasisKind::InMaster => {
                let master = self.master.as_ref().expect("in-master basis holds a master");
                let master_raw = master.raw_penalty_matrix(master.size())?;
                let coeffs = self.master_coeffs.as_ref().unwrap();
                symmetrize(coeffs * master_raw * coeffs.transpose())
            }
        };
        Ok(full.view((0, 0), (size, size)).into_owned())
    }
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}
