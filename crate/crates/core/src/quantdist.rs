//! Quantile return distributions.
//!
//! A [`QuantileDist`] is a uniform mixture of N Diracs at locations
//! `θ_1..θ_N`, the i-th atom estimating the `τ̂_i = (2i - 1) / 2N`
//! quantile. Learned atoms are not required to be sorted; statistics treat
//! them as a multiset.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Huber threshold used when none is configured.
pub const DEFAULT_KAPPA: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuantError {
    #[error("number of quantiles must be at least 1, got {0}")]
    BadN(usize),
    #[error("alpha must lie in (0, 1], got {0}")]
    BadAlpha(f64),
    #[error("quantile atoms must be finite")]
    NonFinite,
}

/// Quantile midpoints `τ̂_i = (2i - 1) / 2N`, `i = 1..N`.
pub fn midpoints(n: usize) -> Result<Vec<f64>, QuantError> {
    if n == 0 {
        return Err(QuantError::BadN(n));
    }
    let two_n = 2.0 * n as f64;
    Ok((1..=n).map(|i| (2 * i - 1) as f64 / two_n).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QuantileDist {
    thetas: Vec<f64>,
}

impl QuantileDist {
    pub fn new(thetas: Vec<f64>) -> Result<Self, QuantError> {
        if thetas.is_empty() {
            return Err(QuantError::BadN(0));
        }
        if thetas.iter().any(|t| !t.is_finite()) {
            return Err(QuantError::NonFinite);
        }
        Ok(QuantileDist { thetas })
    }

    pub fn constant(value: f64, n: usize) -> Self {
        QuantileDist { thetas: vec![value; n.max(1)] }
    }

    pub fn atoms(&self) -> &[f64] {
        &self.thetas
    }

    pub fn n(&self) -> usize {
        self.thetas.len()
    }

    pub fn mean(&self) -> f64 {
        self.thetas.iter().sum::<f64>() / self.n() as f64
    }

    /// Population variance (divisor N).
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.thetas.iter().map(|t| (t - m) * (t - m)).sum::<f64>() / self.n() as f64
    }

    /// Raw second moment `(1/N) Σ θ_i²`.
    pub fn second_moment(&self) -> f64 {
        self.thetas.iter().map(|t| t * t).sum::<f64>() / self.n() as f64
    }

    pub fn sorted_atoms(&self) -> Vec<f64> {
        let mut v = self.thetas.clone();
        v.sort_by(f64::total_cmp);
        v
    }

    /// Mean of the `⌈alpha N⌉` smallest atoms.
    pub fn cvar(&self, alpha: f64) -> Result<f64, QuantError> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(QuantError::BadAlpha(alpha));
        }
        // Guard against alpha*N landing a hair above an integer.
        let k = ((alpha * self.n() as f64) - 1e-12).ceil().max(1.0) as usize;
        let sorted = self.sorted_atoms();
        Ok(sorted[..k].iter().sum::<f64>() / k as f64)
    }

    /// Integrated CDF `F⁽²⁾(z) = E[(z - X)⁺]`.
    pub fn integrated_cdf(&self, z: f64) -> f64 {
        self.thetas.iter().map(|&t| (z - t).max(0.0)).sum::<f64>() / self.n() as f64
    }
}

/// Huber loss `L_κ(u)`.
fn huber(u: f64, kappa: f64) -> f64 {
    if u.abs() <= kappa {
        0.5 * u * u
    } else {
        kappa * (u.abs() - 0.5 * kappa)
    }
}

/// Asymmetric weight `|τ - 1{u < 0}|`.
fn asymmetry(u: f64, tau: f64) -> f64 {
    if u < 0.0 {
        (tau - 1.0).abs()
    } else {
        tau
    }
}

/// Quantile Huber loss `ρ_τ^κ(u) = |τ - 1{u<0}| L_κ(u) / κ`.
pub fn quantile_huber(u: f64, tau: f64, kappa: f64) -> f64 {
    asymmetry(u, tau) * huber(u, kappa) / kappa
}

/// `d/du` of [`quantile_huber`]; zero at `u = 0`.
pub fn quantile_huber_grad(u: f64, tau: f64, kappa: f64) -> f64 {
    if u == 0.0 {
        return 0.0;
    }
    let w = asymmetry(u, tau);
    if u.abs() <= kappa {
        w * u / kappa
    } else {
        w * u.signum()
    }
}

/// Second-order stochastic dominance `a ⪰₂ b`: `F_a⁽²⁾(z) ≤ F_b⁽²⁾(z)` for
/// every real `z`.
///
/// Both integrated CDFs are piecewise linear with kinks at the atoms, so
/// the check is exact at the union of atoms plus the asymptotic slope
/// condition `mean(a) ≥ mean(b)` past the last atom.
pub fn ssd_dominates(a: &QuantileDist, b: &QuantileDist) -> bool {
    let scale = a
        .atoms()
        .iter()
        .chain(b.atoms())
        .fold(1.0_f64, |m, x| m.max(x.abs()));
    let eps = 1e-9 * scale;

    let sa = a.sorted_atoms();
    let sb = b.sorted_atoms();
    let mut breakpoints: Vec<f64> = sa.iter().chain(sb.iter()).copied().collect();
    breakpoints.sort_by(f64::total_cmp);
    breakpoints.dedup();

    // Sweep the breakpoints once, integrating each CDF exactly.
    let wa = 1.0 / sa.len() as f64;
    let wb = 1.0 / sb.len() as f64;
    let (mut ia, mut ib) = (0usize, 0usize);
    let (mut fa, mut fb) = (0.0_f64, 0.0_f64);
    let (mut f2a, mut f2b) = (0.0_f64, 0.0_f64);
    let mut prev = breakpoints[0];
    for &z in &breakpoints {
        let dz = z - prev;
        f2a += fa * dz;
        f2b += fb * dz;
        if f2a > f2b + eps {
            return false;
        }
        while ia < sa.len() && sa[ia] <= z {
            ia += 1;
            fa += wa;
        }
        while ib < sb.len() && sb[ib] <= z {
            ib += 1;
            fb += wb;
        }
        prev = z;
    }
    a.mean() >= b.mean() - eps
}
