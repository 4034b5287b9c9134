//! Correlation-weighted fusion of the user and keyword queries and of their
//! behavior sequences.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Distance variances below this make the weight 0.
pub const DEGENERATE_VARIANCE: f64 = 1e-12;

/// Fusion weight `gamma`, always in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct FusionWeight(f64);

impl FusionWeight {
    /// Clamps into `[0, 1]`; NaN becomes 0.
    pub fn new(gamma: f64) -> Self {
        if gamma.is_nan() {
            FusionWeight(0.0)
        } else {
            FusionWeight(gamma.clamp(0.0, 1.0))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Double-centered pairwise distance matrix of the coordinates of `x`, row-major.
fn centered_distances(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = (x[i] - x[j]).abs();
        }
    }
    let row_means: Vec<f64> = (0..n)
        .map(|i| a[i * n..(i + 1) * n].iter().sum::<f64>() / n as f64)
        .collect();
    // Distance matrices are symmetric, so column means equal row means.
    let grand = row_means.iter().sum::<f64>() / n as f64;
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] += grand - row_means[i] - row_means[j];
        }
    }
    a
}

fn mean_product(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / a.len() as f64
}

/// Distance correlation of two vectors, treating their `d` coordinates as
/// paired scalar samples.
pub fn distance_correlation(x: &[f64], y: &[f64]) -> Result<FusionWeight> {
    if x.len() != y.len() {
        return Err(Error::contract(format!(
            "distance correlation of vectors with lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::contract("distance correlation needs d >= 2"));
    }
    if !x.iter().chain(y).all(|v| v.is_finite()) {
        return Err(Error::numerical("distance_correlation", "non-finite input"));
    }
    let a = centered_distances(x);
    let b = centered_distances(y);
    let vxx = mean_product(&a, &a);
    let vyy = mean_product(&b, &b);
    if vxx < DEGENERATE_VARIANCE || vyy < DEGENERATE_VARIANCE {
        return Ok(FusionWeight(0.0));
    }
    let vxy = mean_product(&a, &b).max(0.0);
    // dCov = sqrt(V^2), gamma = dCov(x, y) / sqrt(dCov(x, x) dCov(y, y))
    let gamma = vxy.sqrt() / (vxx.sqrt() * vyy.sqrt()).sqrt();
    Ok(FusionWeight::new(gamma))
}

/// `gamma * e_u + (1 - gamma) * e_k`.
pub fn fuse_query(e_u: &[f64], e_k: &[f64], gamma: FusionWeight) -> Result<Vec<f64>> {
    if e_u.len() != e_k.len() {
        return Err(Error::contract(format!(
            "query vectors of lengths {} and {}",
            e_u.len(),
            e_k.len()
        )));
    }
    let g = gamma.value();
    Ok(e_u
        .iter()
        .zip(e_k)
        .map(|(u, k)| g * u + (1.0 - g) * k)
        .collect())
}

/// Fixed-length fused behavior sequence. Slots hold paper indices; `None` is PAD.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FusedBehavior {
    pub slots: Vec<Option<usize>>,
    pub from_user: usize,
    pub from_keyword: usize,
    pub padded: usize,
}

impl FusedBehavior {
    pub fn mask(&self) -> Vec<bool> {
        self.slots.iter().map(Option::is_some).collect()
    }

    /// Real entries, in slot order.
    pub fn papers(&self) -> impl Iterator<Item = usize> + '_ {
        self.slots.iter().flatten().copied()
    }

    pub fn n_real(&self) -> usize {
        self.from_user + self.from_keyword
    }
}

/// User quota before backfill.
pub fn user_quota(gamma: FusionWeight, l_h: usize) -> usize {
    ((gamma.value() * l_h as f64).floor() as usize).min(l_h)
}

/// Takes `floor(gamma * l_h)` of the most recent user behaviors and the rest
/// from keyword behaviors, backfilling either shortfall from the other
/// source and padding what remains. Inputs are most-recent-first.
pub fn fuse_behaviors(
    h_u: &[usize],
    h_k: &[usize],
    gamma: FusionWeight,
    l_h: usize,
) -> Result<FusedBehavior> {
    if l_h == 0 {
        return Err(Error::contract("l_h must be at least 1"));
    }
    let quota_u = user_quota(gamma, l_h);
    let mut n_u = quota_u.min(h_u.len());
    let mut n_k = (l_h - quota_u).min(h_k.len());
    n_u += (l_h - n_u - n_k).min(h_u.len() - n_u);
    n_k += (l_h - n_u - n_k).min(h_k.len() - n_k);
    let mut slots = Vec::with_capacity(l_h);
    slots.extend(h_u[..n_u].iter().map(|&p| Some(p)));
    slots.extend(h_k[..n_k].iter().map(|&p| Some(p)));
    let padded = l_h - n_u - n_k;
    slots.resize(l_h, None);
    Ok(FusedBehavior {
        slots,
        from_user: n_u,
        from_keyword: n_k,
        padded,
    })
}
