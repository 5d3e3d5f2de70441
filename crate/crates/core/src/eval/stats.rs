//! Paired significance testing and correlation.

use std::collections::BTreeMap;

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::num::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TTest<T> {
    pub t_stat: T,
    pub p_value: T,
    pub significant: bool,
    pub n: usize,
    pub mean_difference: T,
}

/// Two-sided paired t-test on `a[i] − b[i]` with n − 1 degrees of freedom.
///
/// When every difference is equal the statistic is undefined: a zero mean
/// gives t = 0, p = 1; otherwise t = ±∞ and p is reported as machine epsilon.
pub fn paired_t_test_slices<T: Real>(a: &[T], b: &[T], alpha: f64) -> Result<TTest<T>> {
    if a.len() != b.len() {
        return Err(Error::Argument(format!("paired samples differ in length: {} vs {}", a.len(), b.len())));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::Argument(format!("paired t-test needs n ≥ 2, got {n}")));
    }
    let diffs: Vec<T> = a.iter().zip(b).map(|(x, y)| *x - *y).collect();
    let nn = T::from_count(n);
    let mean = diffs.iter().copied().sum::<T>() / nn;
    let var = diffs.iter().map(|d| (*d - mean).powi(2)).sum::<T>() / T::from_count(n - 1);
    if var == T::zero() {
        return Ok(if mean == T::zero() {
            TTest { t_stat: T::zero(), p_value: T::one(), significant: false, n, mean_difference: mean }
        } else {
            TTest {
                t_stat: T::infinity() * mean.signum(),
                p_value: T::epsilon(),
                significant: true,
                n,
                mean_difference: mean,
            }
        });
    }
    let t = mean / (var.sqrt() / nn.sqrt());
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .map_err(|e| Error::Argument(format!("student t: {e}")))?;
    let p = (2.0 * dist.cdf(-t.as_f64().abs())).min(1.0);
    Ok(TTest {
        t_stat: t,
        p_value: T::lit(p),
        significant: p < alpha,
        n,
        mean_difference: mean,
    })
}

/// Paired test over per-query values; both maps must cover the same queries.
pub fn paired_t_test<T: Real>(a: &BTreeMap<String, T>, b: &BTreeMap<String, T>, alpha: f64) -> Result<TTest<T>> {
    if a.len() != b.len() || a.keys().zip(b.keys()).any(|(x, y)| x != y) {
        return Err(Error::Argument("paired systems were evaluated on different query sets".into()));
    }
    let xs: Vec<T> = a.values().copied().collect();
    let ys: Vec<T> = b.values().copied().collect();
    paired_t_test_slices(&xs, &ys, alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Correlation<T> {
    pub rho: T,
    /// Set when either variable is constant (or n < 2); `rho` is then 0.
    pub degenerate: bool,
}

pub fn pearson<T: Real>(x: &[T], y: &[T]) -> Result<Correlation<T>> {
    if x.len() != y.len() {
        return Err(Error::Argument(format!("correlation inputs differ in length: {} vs {}", x.len(), y.len())));
    }
    let n = x.len();
    let degenerate = Correlation { rho: T::zero(), degenerate: true };
    if n < 2 {
        return Ok(degenerate);
    }
    let nn = T::from_count(n);
    let mx = x.iter().copied().sum::<T>() / nn;
    let my = y.iter().copied().sum::<T>() / nn;
    let (mut sxy, mut sxx, mut syy) = (T::zero(), T::zero(), T::zero());
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (*a - mx, *b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == T::zero() || syy == T::zero() {
        return Ok(degenerate);
    }
    let rho = (sxy / (sxx.sqrt() * syy.sqrt())).max(-T::one()).min(T::one());
    Ok(Correlation { rho, degenerate: false })
}
