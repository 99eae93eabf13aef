//! Exponential renewal sums by branching random walk exploration.
//!
//! Each vertex of the infinite b-ary tree gives its children the weights
//! `-ln V_i` of one fresh split vector. The number of non-root vertices whose
//! root-path weight is at most `z` has expectation
//! `g(z) = sum_{k>=1} b^k P(S_k <= z)`.

use std::io::Write;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec::{replica_rng, seeded_rng, Executor, Stream};
use crate::quad::kahan_sum;
use crate::splitvec::{family_constants, ConstantsMethod, SplitFamily};
use crate::stats::Moments;

/// Largest number of vertices one exploration may visit.
pub const VISIT_BUDGET: u64 = 100_000_000;

fn check_family(family: &SplitFamily, b: usize) -> Result<()> {
    family.validate()?;
    if family.branching() != b {
        return Err(Error::Params(format!(
            "family {family} has {} children per vertex, but b = {b}",
            family.branching()
        )));
    }
    Ok(())
}

/// Counts of explored vertices at each threshold of an increasing grid,
/// sharing one realization of the weighted tree.
pub fn explore_counts<R: Rng + ?Sized>(family: &SplitFamily, grid: &[f64], rng: &mut R) -> Result<Vec<u64>> {
    let mut counts = vec![0u64; grid.len()];
    let Some(&z_max) = grid.last() else {
        return Ok(counts);
    };
    if z_max < 0.0 {
        return Ok(counts);
    }
    let b = family.branching();
    let mut split = vec![0.0; b];
    let mut stack: Vec<f64> = vec![0.0];
    let mut visits = 0u64;
    while let Some(base) = stack.pop() {
        family.sample_into(rng, &mut split);
        for &v in &split {
            let sum = base - v.ln();
            if sum <= z_max {
                visits += 1;
                if visits > VISIT_BUDGET {
                    return Err(Error::Budget(format!(
                        "exploration to z = {z_max} exceeded {VISIT_BUDGET} visits"
                    )));
                }
                // first grid point that counts this vertex
                let j = grid.partition_point(|&g| g < sum);
                counts[j] += 1;
                stack.push(sum);
            }
        }
    }
    for j in 1..counts.len() {
        counts[j] += counts[j - 1];
    }
    Ok(counts)
}

/// Number of non-root vertices with root-path weight at most `z` in one realization.
pub fn explore_count(family: &SplitFamily, b: usize, z: f64, seed: u64) -> Result<u64> {
    check_family(family, b)?;
    let mut rng = seeded_rng(seed);
    Ok(explore_counts(family, &[z], &mut rng)?[0])
}

/// Estimates of `g` on a grid together with the second-order integral.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RenewalProfile {
    pub z: Vec<f64>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub mu: f64,
    /// Trapezoid estimate of `int e^{-z} (g(z) - e^z / mu) dz` over the grid, from the mean profile.
    pub integral: f64,
    /// Standard error of the integral, from per-replica integrals.
    pub integral_stderr: f64,
    pub replicas: u64,
    pub failures: u64,
}

fn trapezoid(z: &[f64], g: &[f64], mu: f64) -> f64 {
    let f: Vec<f64> = z.iter().zip(g).map(|(&z, &g)| (-z).exp() * g - 1.0 / mu).collect();
    kahan_sum((1..z.len()).map(|i| 0.5 * (z[i] - z[i - 1]) * (f[i] + f[i - 1])))
}

/// Mean of `-ln V_1`, from the closed form when available.
pub fn renewal_mu(family: &SplitFamily) -> Result<f64> {
    match family_constants(family, ConstantsMethod::ClosedForm) {
        Ok(k) => Ok(k.mu),
        Err(Error::MethodUnavailable { .. }) => {
            Ok(family_constants(family, ConstantsMethod::Quadrature { tol: 1e-10 })?.mu)
        }
        Err(e) => Err(e),
    }
}

pub fn renewal_profile(
    family: &SplitFamily,
    b: usize,
    z_grid: &[f64],
    replicas: u64,
    seed: u64,
    exec: &Executor,
) -> Result<RenewalProfile> {
    check_family(family, b)?;
    if z_grid.is_empty() || z_grid.windows(2).any(|w| !(w[1] > w[0])) || z_grid.iter().any(|z| !z.is_finite()) {
        return Err(Error::Domain("z grid must be finite, nonempty and strictly increasing".into()));
    }
    if replicas == 0 {
        return Err(Error::Domain("renewal profile needs at least one replica".into()));
    }
    let mu = renewal_mu(family)?;
    let runs = exec.map(replicas, |i| {
        let mut rng = replica_rng(seed, Stream::Exploration, i);
        explore_counts(family, z_grid, &mut rng)
    });
    let mut points = vec![Moments::default(); z_grid.len()];
    let mut integrals = Moments::default();
    let mut failures = 0;
    for run in runs {
        match run {
            Ok(counts) => {
                let g: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
                for (m, &v) in points.iter_mut().zip(&g) {
                    m.push(v);
                }
                integrals.push(trapezoid(z_grid, &g, mu));
            }
            Err(Error::Budget(_)) => failures += 1,
            Err(e) => return Err(e),
        }
    }
    if failures == replicas {
        return Err(Error::Budget(format!("all {replicas} explorations exceeded the visit budget")));
    }
    let mean: Vec<f64> = points.iter().map(Moments::mean).collect();
    Ok(RenewalProfile {
        z: z_grid.to_vec(),
        integral: trapezoid(z_grid, &mean, mu),
        integral_stderr: integrals.stderr(),
        stderr: points.iter().map(Moments::stderr).collect(),
        mean,
        mu,
        replicas,
        failures,
    })
}

impl RenewalProfile {
    /// Writes `z,mean,stderr` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "z,mean,stderr")?;
        for i in 0..self.z.len() {
            writeln!(out, "{},{},{}", self.z[i], self.mean[i], self.stderr[i])?;
        }
        Ok(())
    }
}

/// Grid `0, step, 2 step, ...` up to and including `z_max`.
pub fn uniform_grid(z_max: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && z_max >= 0.0 && z_max.is_finite()) {
        return Err(Error::Domain(format!("need step > 0 and finite z_max >= 0, got {step}, {z_max}")));
    }
    let count = (z_max / step + 1e-9).floor() as usize;
    Ok((0..=count).map(|i| i as f64 * step).collect())
}
