//! Split-vector families and split-tree parameters.
//!
//! A split tree is driven by a random probability vector `(V_1, ..., V_b)`
//! drawn independently at every vertex. This module provides the preset
//! families, validates the integer parameters `(b, s, s0, s1)`, and computes
//! the constants that govern typical depths:
//!
//! * `mu = b E[-V_1 ln V_1]`
//! * `sigma2 = b E[V_1 ln^2 V_1] - mu^2`
//! * the lattice span `d` of `ln V_1`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma};
use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;

use crate::error::{Error, Result};
use crate::quad;

/// Euler-Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Preset split-vector laws. All coordinates are exchangeable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SplitFamily {
    /// `(U, 1 - U)` with `U` uniform on `[0, 1]`.
    BinarySearch,
    /// Uniform spacings of `[0, 1]` into `b` pieces; marginals Beta(1, b-1).
    Spacings(usize),
    /// The constant vector `(1/b, ..., 1/b)`.
    Deterministic(usize),
    /// Symmetric Dirichlet with concentration `a`.
    Dirichlet(usize, f64),
}

impl SplitFamily {
    pub fn branching(&self) -> usize {
        match *self {
            SplitFamily::BinarySearch => 2,
            SplitFamily::Spacings(b) | SplitFamily::Deterministic(b) | SplitFamily::Dirichlet(b, _) => b,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let b = self.branching();
        if b < 2 {
            return Err(Error::Family(format!("branch factor must be at least 2, got {b}")));
        }
        if let SplitFamily::Dirichlet(_, a) = *self {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::Family(format!("dirichlet concentration must be positive, got {a}")));
            }
        }
        Ok(())
    }

    /// Beta parameters of the marginal law of `V_1`, when it is continuous.
    pub fn beta_marginal(&self) -> Option<(f64, f64)> {
        match *self {
            SplitFamily::BinarySearch => Some((1.0, 1.0)),
            SplitFamily::Spacings(b) => Some((1.0, b as f64 - 1.0)),
            SplitFamily::Dirichlet(b, a) => Some((a, (b as f64 - 1.0) * a)),
            SplitFamily::Deterministic(_) => None,
        }
    }

    /// True when `ln V_1` is supported on a lattice. Declared per family.
    pub fn is_lattice(&self) -> bool {
        matches!(self, SplitFamily::Deterministic(_))
    }

    /// Lattice span of `ln V_1` (0 for non-lattice families).
    pub fn span(&self) -> f64 {
        match *self {
            SplitFamily::Deterministic(b) => (b as f64).ln(),
            _ => 0.0,
        }
    }

    /// Fills `out` (length `b`) with one draw of the split vector.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.branching());
        match *self {
            SplitFamily::BinarySearch => {
                let u: f64 = rng.random();
                out.copy_from_slice(&binary_split(u));
            }
            SplitFamily::Deterministic(b) => out.fill(1.0 / b as f64),
            SplitFamily::Spacings(_) => loop {
                for v in out.iter_mut() {
                    *v = Exp1.sample(rng);
                }
                if normalize(out) {
                    break;
                }
            },
            SplitFamily::Dirichlet(_, a) => {
                let gamma = Gamma::new(a, 1.0).expect("validated concentration");
                loop {
                    for v in out.iter_mut() {
                        *v = gamma.sample(rng);
                    }
                    if normalize(out) {
                        break;
                    }
                }
            }
        }
    }
}

fn normalize(v: &mut [f64]) -> bool {
    let total: f64 = v.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= total);
    true
}

/// The binary search tree split vector for a given uniform draw.
pub fn binary_split(u: f64) -> [f64; 2] {
    [u, 1.0 - u]
}

/// Draws one split vector.
pub fn sample_split_vector<R: Rng + ?Sized>(family: &SplitFamily, rng: &mut R) -> Vec<f64> {
    let mut out = vec![0.0; family.branching()];
    family.sample_into(rng, &mut out);
    out
}

impl fmt::Display for SplitFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            SplitFamily::BinarySearch => write!(f, "bst"),
            SplitFamily::Spacings(b) => write!(f, "spacings:{b}"),
            SplitFamily::Deterministic(b) => write!(f, "deterministic:{b}"),
            SplitFamily::Dirichlet(b, a) => write!(f, "dirichlet:{b}:{a}"),
        }
    }
}

impl FromStr for SplitFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let int = |p: &str| -> Result<usize> {
            p.parse::<usize>()
                .map_err(|_| Error::Family(format!("bad branch factor `{p}` in `{s}`")))
        };
        let family = match parts.as_slice() {
            ["bst"] => SplitFamily::BinarySearch,
            ["spacings", b] => SplitFamily::Spacings(int(b)?),
            ["deterministic", b] => SplitFamily::Deterministic(int(b)?),
            ["dirichlet", b, a] => {
                let a = a
                    .parse::<f64>()
                    .map_err(|_| Error::Family(format!("bad concentration `{a}` in `{s}`")))?;
                SplitFamily::Dirichlet(int(b)?, a)
            }
            _ => {
                return Err(Error::Family(format!(
                    "unknown family `{s}` (expected bst, spacings:b, deterministic:b or dirichlet:b:a)"
                )))
            }
        };
        family.validate()?;
        Ok(family)
    }
}

/// Checks `0 < s`, `0 <= s0 <= s` and `0 <= b*s1 <= s + 1 - s0`.
pub fn validate_params(b: usize, s: usize, s0: usize, s1: usize) -> Result<()> {
    if b < 2 {
        return Err(Error::Params(format!("branch factor b = {b} must be at least 2")));
    }
    if s == 0 {
        return Err(Error::Params("vertex capacity must satisfy 0 < s".into()));
    }
    if s0 > s {
        return Err(Error::Params(format!("s0 = {s0} exceeds s = {s}; need 0 <= s0 <= s")));
    }
    if b * s1 > s + 1 - s0 {
        return Err(Error::Params(format!(
            "b*s1 = {} exceeds s + 1 - s0 = {}; need 0 <= b*s1 <= s + 1 - s0",
            b * s1,
            s + 1 - s0
        )));
    }
    Ok(())
}

/// Full parameter set of a split-tree law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitParams {
    pub b: usize,
    pub s: usize,
    pub s0: usize,
    pub s1: usize,
    pub family: SplitFamily,
}

impl SplitParams {
    pub fn new(b: usize, s: usize, s0: usize, s1: usize, family: SplitFamily) -> Result<Self> {
        family.validate()?;
        if family.branching() != b {
            return Err(Error::Params(format!(
                "family {family} has {} coordinates but b = {b}",
                family.branching()
            )));
        }
        validate_params(b, s, s0, s1)?;
        Ok(SplitParams { b, s, s0, s1, family })
    }

    /// Binary search tree: `b = 2, s = s0 = 1, s1 = 0`, split `(U, 1-U)`.
    pub fn bst() -> Self {
        SplitParams { b: 2, s: 1, s0: 1, s1: 0, family: SplitFamily::BinarySearch }
    }

    /// Default parameters for a family: the binary search tree for `bst`,
    /// otherwise a trie (`s = 1, s0 = 0, s1 = 0`).
    pub fn preset(family: SplitFamily) -> Self {
        match family {
            SplitFamily::BinarySearch => Self::bst(),
            other => SplitParams { b: other.branching(), s: 1, s0: 0, s1: 0, family: other },
        }
    }
}

/// Analytic constants of a split family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FamilyConstants {
    /// `b E[-V_1 ln V_1]`, in nats.
    pub mu: f64,
    /// `b E[V_1 ln^2 V_1] - mu^2`.
    pub sigma2: f64,
    /// Lattice span of `ln V_1`.
    pub span_d: f64,
    /// Vertex-to-ball ratio `E[N] ~ alpha n`, when known.
    pub alpha: Option<f64>,
    /// Constant path-length correction for balls (non-lattice only), when known.
    pub varsigma: Option<f64>,
    /// Constant path-length correction for vertices, when known.
    pub zeta: Option<f64>,
}

/// How to evaluate [`FamilyConstants`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConstantsMethod {
    ClosedForm,
    /// Adaptive quadrature against the Beta marginal, absolute tolerance `tol`.
    Quadrature { tol: f64 },
    /// Sample means over `samples` split vectors.
    MonteCarlo { samples: usize, seed: u64 },
}

fn known_extras(family: &SplitFamily) -> (Option<f64>, Option<f64>, Option<f64>) {
    match family {
        SplitFamily::BinarySearch => {
            let c = 2.0 * EULER_GAMMA - 4.0;
            (Some(1.0), Some(c), Some(c))
        }
        _ => (None, None, None),
    }
}

/// Computes `mu`, `sigma2` and the span for `family`.
pub fn family_constants(family: &SplitFamily, method: ConstantsMethod) -> Result<FamilyConstants> {
    family.validate()?;
    let b = family.branching() as f64;
    let (alpha, varsigma, zeta) = known_extras(family);
    let span_d = family.span();
    let (mu, sigma2) = match (method, family) {
        (_, SplitFamily::Deterministic(_)) => (b.ln(), 0.0),
        (ConstantsMethod::ClosedForm, SplitFamily::BinarySearch) => (0.5, 0.25),
        (ConstantsMethod::ClosedForm, other) => {
            return Err(Error::MethodUnavailable { method: "closed-form", family: other.to_string() })
        }
        (ConstantsMethod::Quadrature { tol }, other) => {
            if !(tol > 0.0) {
                return Err(Error::Domain("quadrature tolerance must be positive".into()));
            }
            let (a, bb) = other.beta_marginal().expect("continuous family");
            let e1 = beta_expectation(a, bb, |v| -v * v.ln(), tol)?;
            let e2 = beta_expectation(a, bb, |v| v * v.ln() * v.ln(), tol)?;
            let mu = b * e1;
            (mu, b * e2 - mu * mu)
        }
        (ConstantsMethod::MonteCarlo { samples, seed }, other) => {
            if samples == 0 {
                return Err(Error::Domain("monte carlo budget must be positive".into()));
            }
            let mut rng = crate::exec::seeded_rng(seed);
            let mut v = vec![0.0; other.branching()];
            let (mut s1, mut s2) = (0.0, 0.0);
            for _ in 0..samples {
                other.sample_into(&mut rng, &mut v);
                for &x in &v {
                    if x > 0.0 {
                        let l = x.ln();
                        s1 -= x * l;
                        s2 += x * l * l;
                    }
                }
            }
            let mu = s1 / samples as f64;
            (mu, s2 / samples as f64 - mu * mu)
        }
    };
    Ok(FamilyConstants { mu, sigma2, span_d, alpha, varsigma, zeta })
}

/// `E[g(V)]` for `V ~ Beta(a, b)`, with `g` extended by continuity at 0 and 1.
fn beta_expectation<G: Fn(f64) -> f64>(a: f64, b: f64, g: G, tol: f64) -> Result<f64> {
    let ln_norm = ln_beta(a, b);
    let integrand = |v: f64| {
        if v <= 0.0 || v >= 1.0 {
            return 0.0;
        }
        g(v) * ((a - 1.0) * v.ln() + (b - 1.0) * (-v).ln_1p() - ln_norm).exp()
    };
    match quad::adaptive_gk(integrand, 0.0, 1.0, tol, 4000) {
        Ok(q) => Ok(q.value),
        // Strong endpoint singularities (a or b < 1) converge better under tanh-sinh.
        Err(_) => quad::tanh_sinh(integrand, 0.0, 1.0, tol).map(|q| q.value),
    }
}

/// Mellin transform `m(t) = E[V_1^t]`.
pub fn mellin(family: &SplitFamily, t: f64) -> f64 {
    match family.beta_marginal() {
        Some((a, b)) => (ln_beta(a + t, b) - ln_beta(a, b)).exp(),
        None => (family.branching() as f64).powf(-t),
    }
}
