//! Percolation on complete b-ary trees of height h.
//!
//! Vertices are addressed implicitly: the children of index `i` are
//! `b*i + 1 ..= b*i + b`, so no tree is ever materialized.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::quad::kahan_sum;

/// Largest tree explored by [`simulate_regular`] (visits at most this many vertices).
pub const PRUNED_VERTEX_BUDGET: u64 = 1 << 36;
/// Largest tree for the full traversal, which stores one counter per vertex.
pub const FULL_VERTEX_BUDGET: u64 = 1 << 26;
/// Largest tree handled by [`exact_root_pmf`].
pub const EXACT_PMF_BUDGET: u64 = 10_000;

/// Number of vertices `(b^{h+1} - 1) / (b - 1)`.
pub fn regular_size(b: u64, h: u32) -> Result<u64> {
    if b < 2 {
        return Err(Error::Domain(format!("branch factor must be at least 2, got {b}")));
    }
    let mut total: u64 = 0;
    let mut level: u64 = 1;
    for k in 0..=h {
        total = total
            .checked_add(level)
            .ok_or_else(|| Error::Budget(format!("n_h overflows u64 for b = {b}, h = {h}")))?;
        if k < h {
            level = level
                .checked_mul(b)
                .ok_or_else(|| Error::Budget(format!("n_h overflows u64 for b = {b}, h = {h}")))?;
        }
    }
    Ok(total)
}

/// Retention probability `e^{-c/h}`.
pub fn regular_param(h: u32, c: f64) -> Result<f64> {
    if h == 0 || !(c >= 0.0) {
        return Err(Error::Domain(format!("need h >= 1 and c >= 0, got h = {h}, c = {c}")));
    }
    Ok((-c / h as f64).exp())
}

fn check_p(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("retention probability {p} outside [0, 1]")));
    }
    Ok(())
}

/// Size of the root cluster, exploring only retained edges.
pub fn simulate_regular<R: Rng + ?Sized>(b: u64, h: u32, p: f64, rng: &mut R) -> Result<u64> {
    check_p(p)?;
    let n_h = regular_size(b, h)?;
    if n_h > PRUNED_VERTEX_BUDGET {
        return Err(Error::Budget(format!("n_h = {n_h} exceeds {PRUNED_VERTEX_BUDGET}")));
    }
    let mut count = 1u64;
    let mut stack: Vec<u32> = Vec::with_capacity((h as usize + 1) * b as usize);
    stack.push(0);
    while let Some(d) = stack.pop() {
        if d == h {
            continue;
        }
        for _ in 0..b {
            if rng.random_bool(p) {
                count += 1;
                stack.push(d + 1);
            }
        }
    }
    Ok(count)
}

/// Outcome of a full traversal: every cluster is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RegularOutcome {
    pub root: u64,
    /// Largest cluster size other than the largest one.
    pub second: u64,
    pub clusters: u64,
}

/// Full traversal of all `n_h` vertices.
pub fn simulate_regular_full<R: Rng + ?Sized>(b: u64, h: u32, p: f64, rng: &mut R) -> Result<RegularOutcome> {
    check_p(p)?;
    let n_h = regular_size(b, h)?;
    if n_h > FULL_VERTEX_BUDGET {
        return Err(Error::Budget(format!("n_h = {n_h} exceeds {FULL_VERTEX_BUDGET} for full traversal")));
    }
    let mut size = vec![1u32; n_h as usize];
    let (mut first, mut second, mut clusters) = (0u64, 0u64, 1u64);
    let mut record = |s: u64| {
        if s > first {
            second = first;
            first = s;
        } else if s > second {
            second = s;
        }
    };
    for v in (1..n_h as usize).rev() {
        let parent = (v - 1) / b as usize;
        if rng.random_bool(p) {
            size[parent] += size[v];
        } else {
            clusters += 1;
            record(size[v] as u64);
        }
    }
    record(size[0] as u64);
    Ok(RegularOutcome { root: size[0] as u64, second, clusters })
}

/// Exact law of the root-cluster size: `pmf[k] = P(G = k)` for `k` in `0..=n_h`.
///
/// Uses `G_0 = 1` and `G_h = 1 + sum_{i<b} B_i G_{h-1}^{(i)}` with `B_i`
/// independent Bernoulli(p), evaluated by exact convolution.
pub fn exact_root_pmf(b: u64, h: u32, p: f64) -> Result<Vec<f64>> {
    check_p(p)?;
    let n_h = regular_size(b, h)?;
    if n_h > EXACT_PMF_BUDGET {
        return Err(Error::Budget(format!("n_h = {n_h} exceeds the exact pmf limit {EXACT_PMF_BUDGET}")));
    }
    let mut pmf = vec![0.0, 1.0];
    for _ in 0..h {
        let mut branch = vec![0.0; pmf.len()];
        branch[0] = 1.0 - p;
        for (k, &m) in pmf.iter().enumerate().skip(1) {
            branch[k] = p * m;
        }
        let mut sum = vec![1.0];
        for _ in 0..b {
            sum = convolve(&sum, &branch);
        }
        pmf = std::iter::once(0.0).chain(sum).collect();
    }
    pmf.resize(n_h as usize + 1, 0.0);
    Ok(pmf)
}

fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let len = a.len() + b.len() - 1;
    (0..len)
        .map(|k| {
            let lo = k.saturating_sub(b.len() - 1);
            let hi = k.min(a.len() - 1);
            kahan_sum((lo..=hi).map(|i| a[i] * b[k - i]))
        })
        .collect()
}

/// `(G / n_h - e^{-c}) h - c e^{-c} log_b h`.
pub fn theorem4_statistic(root_size: u64, b: u64, h: u32, c: f64) -> Result<f64> {
    if h < 2 {
        return Err(Error::Domain(format!("statistic needs h >= 2, got {h}")));
    }
    let n_h = regular_size(b, h)? as f64;
    let e = (-c).exp();
    let hf = h as f64;
    Ok((root_size as f64 / n_h - e) * hf - c * e * hf.ln() / (b as f64).ln())
}
