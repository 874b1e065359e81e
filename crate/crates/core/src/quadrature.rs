//! Integration rules on the unit interval: Gauss-Legendre for basis
//! inner products and trapezoid weights for discretely observed curves.

use crate::error::{Error, Result};

/// A fixed quadrature rule on [0, 1]: paired nodes and positive weights.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    /// Builds the `n`-point Gauss-Legendre rule mapped to [0, 1].
    ///
    /// Exact for polynomials of degree up to `2n - 1`. Nodes are the roots
    /// of the degree-`n` Legendre polynomial, located by Newton iteration
    /// from the Chebyshev-angle initial guess.
    pub fn gauss_legendre(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config(
                "quadrature rule needs at least one node".into(),
            ));
        }
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n {
            // Root of P_n on [-1, 1]; the map 0.5 (1 - x) then lists the
            // [0, 1] nodes in increasing order.
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            for _ in 0..100 {
                let (p, d) = legendre_with_deriv(n, x);
                let step = p / d;
                x -= step;
                if step.abs() < 1e-15 {
                    break;
                }
            }
            let (_, dp) = legendre_with_deriv(n, x);
            // Weight on [-1, 1]: 2 / ((1 - x^2) P_n'(x)^2); halved by the
            // affine map onto [0, 1].
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = 0.5 * (1.0 - x);
            weights[i] = 0.5 * w;
        }
        Ok(Self { nodes, weights })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Integrates a function over [0, 1].
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    /// Integrates from values already evaluated at the rule's nodes.
    pub fn integrate_values(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.weights.len());
        values
            .iter()
            .zip(&self.weights)
            .map(|(&v, &w)| v * w)
            .sum()
    }
}

/// Value and derivative of the Legendre polynomial P_n at `x` in (-1, 1),
/// by the three-term recurrence.
fn legendre_with_deriv(n: usize, x: f64) -> (f64, f64) {
    let mut p_prev = 1.0;
    let mut p = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p_next = ((2.0 * kf - 1.0) * x * p - (kf - 1.0) * p_prev) / kf;
        p_prev = p;
        p = p_next;
    }
    let dp = n as f64 * (x * p - p_prev) / (x * x - 1.0);
    (p, dp)
}

/// Equispaced grid of `len` points covering [0, 1] inclusive.
pub fn unit_grid(len: usize) -> Result<Vec<f64>> {
    if len < 2 {
        return Err(Error::Config("grid needs at least two points".into()));
    }
    let step = 1.0 / (len - 1) as f64;
    Ok((0..len)
        .map(|i| if i == len - 1 { 1.0 } else { i as f64 * step })
        .collect())
}

/// Trapezoid-rule weights for a strictly increasing grid in [0, 1].
///
/// `sum_g w_g v(t_g)` approximates the integral of `v` over [t_0, t_{G-1}].
pub fn trapezoid_weights(grid: &[f64]) -> Result<Vec<f64>> {
    if grid.len() < 2 {
        return Err(Error::Config(
            "trapezoid rule needs at least two grid points".into(),
        ));
    }
    for pair in grid.windows(2) {
        if pair[1] <= pair[0] {
            return Err(Error::Config(format!(
                "grid is not strictly increasing at {} -> {}",
                pair[0], pair[1]
            )));
        }
    }
    let g = grid.len();
    let mut w = vec![0.0; g];
    for i in 0..g - 1 {
        let h = 0.5 * (grid[i + 1] - grid[i]);
        w[i] += h;
        w[i + 1] += h;
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_nodes_rejected() {
        assert!(QuadratureRule::gauss_legendre(0).is_err());
    }

    #[test]
    fn nodes_inside_unit_interval_weights_sum_to_one() {
        for n in [1, 2, 5, 20, 140] {
            let rule = QuadratureRule::gauss_legendre(n).unwrap();
            assert_eq!(rule.len(), n);
            for &x in rule.nodes() {
                assert!(x > 0.0 && x < 1.0);
            }
            for &w in rule.weights() {
                assert!(w > 0.0);
            }
            let total: f64 = rule.weights().iter().sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn nodes_strictly_increasing() {
        let rule = QuadratureRule::gauss_legendre(60).unwrap();
        for pair in rule.nodes().windows(2) {
            assert!(pair[1] > pair[0]);
        }
    }

    #[test]
    fn exact_for_monomials() {
        // Degree 2n - 1 exactness: with n = 8 every monomial up to x^15.
        let rule = QuadratureRule::gauss_legendre(8).unwrap();
        for k in 0..=15u32 {
            let value = rule.integrate(|x| x.powi(k as i32));
            assert_abs_diff_eq!(value, 1.0 / (k as f64 + 1.0), epsilon = 1e-14);
        }
    }

    #[test]
    fn oscillatory_integrands_near_machine_precision() {
        // The penalty and Gram integrands for a size-30 Fourier family
        // contain frequencies up to cos(2 pi 30 t); 140 nodes must resolve
        // them essentially exactly.
        let rule = QuadratureRule::gauss_legendre(140).unwrap();
        for m in [1, 7, 15, 30] {
            let omega = 2.0 * std::f64::consts::PI * m as f64;
            assert_abs_diff_eq!(rule.integrate(|t| (omega * t).cos()), 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(
                rule.integrate(|t| (omega * t).cos().powi(2)),
                0.5,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn integrate_values_matches_closure_path() {
        let rule = QuadratureRule::gauss_legendre(12).unwrap();
        let values: Vec<f64> = rule.nodes().iter().map(|&x| (3.0 * x).exp()).collect();
        assert_abs_diff_eq!(
            rule.integrate_values(&values),
            rule.integrate(|x| (3.0 * x).exp()),
            epsilon = 1e-15
        );
    }

    #[test]
    fn trapezoid_uniform_grid() {
        let grid: Vec<f64> = (0..101).map(|i| i as f64 / 100.0).collect();
        let w = trapezoid_weights(&grid).unwrap();
        assert_abs_diff_eq!(w[0], 0.005, epsilon = 1e-15);
        assert_abs_diff_eq!(w[100], 0.005, epsilon = 1e-15);
        for wi in &w[1..100] {
            assert_abs_diff_eq!(*wi, 0.01, epsilon = 1e-15);
        }
        let total: f64 = w.iter().sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn trapezoid_matches_direct_rule_on_uneven_grid() {
        let grid = [0.0, 0.1, 0.35, 0.6, 1.0];
        let f = |t: f64| t * t + 1.0;
        let w = trapezoid_weights(&grid).unwrap();
        let via_weights: f64 = grid.iter().zip(&w).map(|(&t, &wi)| wi * f(t)).sum();
        let mut direct = 0.0;
        for pair in grid.windows(2) {
            direct += 0.5 * (pair[1] - pair[0]) * (f(pair[0]) + f(pair[1]));
        }
        assert_abs_diff_eq!(via_weights, direct, epsilon = 1e-14);
    }

    #[test]
    fn trapezoid_rejects_bad_grids() {
        assert!(trapezoid_weights(&[0.5]).is_err());
        assert!(trapezoid_weights(&[0.0, 0.5, 0.5, 1.0]).is_err());
        assert!(trapezoid_weights(&[0.0, 0.6, 0.4, 1.0]).is_err());
    }
}
