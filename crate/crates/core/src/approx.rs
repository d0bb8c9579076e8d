//! Normal-binomial approximation to how often SRS splits pass the ad hoc
//! balance check.
//!
//! The per-covariate imbalance probability ignores the finite population
//! correction: `P(Δ_j ≥ δ) ≈ 2 − 2Φ(δ / sqrt(1/n + 1/m))`. The number of
//! imbalanced covariates is then treated as `Binomial(J, ·)`.

use serde::Serialize;
use statrs::function::erf::erfc;
use statrs::function::factorial::ln_binomial;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApproxQuery {
    pub n: u64,
    pub m: u64,
    pub delta: f64,
    pub j_dims: u64,
    pub r_max: u64,
}

impl ApproxQuery {
    fn validate(&self) -> Result<()> {
        check_sizes(self.n, self.m, self.delta)?;
        if self.j_dims == 0 {
            return Err(Error::InvalidArgument("number of covariates must be >= 1".into()));
        }
        Ok(())
    }
}

fn check_sizes(n: u64, m: u64, delta: f64) -> Result<()> {
    if n == 0 || m == 0 {
        return Err(Error::InvalidArgument(format!("arm sizes must be >= 1, got ({n}, {m})")));
    }
    if delta.is_nan() || delta <= 0.0 {
        return Err(Error::InvalidArgument(format!("cutoff must be positive, got {delta}")));
    }
    Ok(())
}

/// Standard normal upper tail `1 − Φ(x)`, via `erfc` so that small tails keep
/// full relative precision.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Approximate probability that a single covariate is declared imbalanced.
pub fn prob_dim_imbalanced(n: u64, m: u64, delta: f64) -> Result<f64> {
    check_sizes(n, m, delta)?;
    let scale = (1.0 / n as f64 + 1.0 / m as f64).sqrt();
    // 2 − 2Φ(z) = 2(1 − Φ(z))
    Ok(2.0 * normal_sf(delta / scale))
}

/// `P(Bin(J, p) ≤ r)` summed term by term in log space.
pub fn binomial_cdf(j: u64, p: f64, r: u64) -> f64 {
    if r >= j {
        return 1.0;
    }
    if p <= 0.0 {
        return 1.0;
    }
    if p >= 1.0 {
        return 0.0;
    }
    let (lp, lq) = (p.ln(), (-p).ln_1p());
    let total: f64 = (0..=r).map(|k| (ln_binomial(j, k) + k as f64 * lp + (j - k) as f64 * lq).exp()).sum();
    total.min(1.0)
}

/// Approximate probability that an SRS split is declared balanced.
pub fn prob_declared_balanced(q: &ApproxQuery) -> Result<f64> {
    q.validate()?;
    let p1 = prob_dim_imbalanced(q.n, q.m, q.delta)?;
    Ok(binomial_cdf(q.j_dims, p1, q.r_max))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Table1Row {
    pub delta: f64,
    pub g: u64,
    pub m: u64,
    pub p_dim: f64,
    pub p_bal_j10_r1: f64,
    pub p_bal_j20_r2: f64,
}

const TABLE1_SETTINGS: [(f64, u64, u64); 8] = [
    (0.2, 4, 40),
    (0.3, 4, 40),
    (0.2, 10, 10),
    (0.3, 10, 10),
    (0.2, 40, 40),
    (0.3, 40, 40),
    (0.2, 100, 100),
    (0.3, 100, 100),
];

/// The eight cutoff/size combinations, with `J = 10, r = 1` and `J = 20, r = 2`.
pub fn table1() -> Vec<Table1Row> {
    TABLE1_SETTINGS
        .iter()
        .map(|&(delta, g, m)| {
            let p_dim = prob_dim_imbalanced(g, m, delta).expect("static settings are valid");
            Table1Row {
                delta,
                g,
                m,
                p_dim,
                p_bal_j10_r1: binomial_cdf(10, p_dim, 1),
                p_bal_j20_r2: binomial_cdf(20, p_dim, 2),
            }
        })
        .collect()
}

pub const TABLE1_CSV_HEADER: &str = "delta,g,m,p_dim,p_bal_J10_r1,p_bal_J20_r2";

pub fn table1_csv(rows: &[Table1Row]) -> String {
    let mut out = String::from(TABLE1_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{},{},{},{},{},{}\n", r.delta, r.g, r.m, r.p_dim, r.p_bal_j10_r1, r.p_bal_j20_r2));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_cdf_reference_points() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-16);
        // Φ(1.959963984540054) = 0.975
        let d = normal_cdf(1.959963984540054) - 0.975;
        assert!(d.abs() < 1e-11, "{d}");
        // 1 − Φ(6) = 9.86587645037698e-10
        let r = normal_sf(6.0) / 9.86587645037698e-10 - 1.0;
        assert!(r.abs() < 1e-9, "{r}");
    }

    #[test]
    fn per_dimension_examples() {
        assert!((prob_dim_imbalanced(4, 40, 0.2).unwrap() - 0.703).abs() <= 0.001);
        assert!((prob_dim_imbalanced(100, 100, 0.3).unwrap() - 0.034).abs() <= 0.001);
        assert!(prob_dim_imbalanced(4, 40, 1e-12).unwrap() > 1.0 - 1e-9);
        assert!(prob_dim_imbalanced(0, 40, 0.2).is_err());
        assert!(prob_dim_imbalanced(4, 40, 0.0).is_err());
    }

    #[test]
    fn declared_balanced_examples() {
        let q = ApproxQuery { n: 4, m: 40, delta: 0.2, j_dims: 10, r_max: 1 };
        assert!((prob_declared_balanced(&q).unwrap() - 0.0001).abs() <= 5e-5);
        let q = ApproxQuery { n: 40, m: 40, delta: 0.3, j_dims: 20, r_max: 2 };
        assert!((prob_declared_balanced(&q).unwrap() - 0.276).abs() <= 0.005);
        let q = ApproxQuery { n: 40, m: 40, delta: 0.3, j_dims: 20, r_max: 20 };
        assert_eq!(prob_declared_balanced(&q).unwrap(), 1.0);
        let q = ApproxQuery { n: 4, m: 4, delta: 0.3, j_dims: 0, r_max: 0 };
        assert!(prob_declared_balanced(&q).is_err());
    }

    #[test]
    fn binomial_cdf_matches_direct_sum() {
        // Oracle: plain product form for small J.
        fn direct(j: u64, p: f64, r: u64) -> f64 {
            let mut total = 0.0;
            for k in 0..=r.min(j) {
                let mut c = 1.0;
                for i in 0..k {
                    c *= (j - i) as f64 / (i + 1) as f64;
                }
                total += c * p.powi(k as i32) * (1.0 - p).powi((j - k) as i32);
            }
            total
        }
        for &(j, p, r) in &[(10, 0.3, 1), (20, 0.178, 2), (17, 0.7, 5), (5, 0.5, 4)] {
            assert!((binomial_cdf(j, p, r) - direct(j, p, r)).abs() < 1e-13);
        }
        // Large J stays finite.
        let v = binomial_cdf(10_000, 0.01, 120);
        assert!(v.is_finite() && v > 0.9 && v <= 1.0);
    }

    #[test]
    fn table1_selected_rows() {
        let t = table1();
        assert_eq!(t.len(), 8);
        assert!((t[1].p_dim - 0.567).abs() <= 0.001);
        assert!((t[1].p_bal_j10_r1 - 0.003).abs() <= 0.0005);
        assert!((t[4].p_bal_j10_r1 - 0.067).abs() <= 0.005);
        assert!((t[4].p_bal_j20_r2 - 0.007).abs() <= 0.0005);
        assert!((t[7].p_bal_j10_r1 - 0.957).abs() <= 0.005);
        assert!((t[7].p_bal_j20_r2 - 0.971).abs() <= 0.005);
        let csv = table1_csv(&t);
        assert_eq!(csv.lines().count(), 9);
        assert!(csv.starts_with(TABLE1_CSV_HEADER));
    }
}
