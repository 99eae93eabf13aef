//! Limit laws of the giant-cluster fluctuations.
//!
//! Two base laws are supported:
//!
//! * the continuous Luria-Delbrück law `Z`, with characteristic function
//!   `exp(-(pi/2)|t| - i t ln|t|)`;
//! * `L_rho(c)`, the value at time `c` of the spectrally positive Lévy process
//!   whose Lévy measure has atoms of mass `b^k` at `b^{rho-k}`, `k` in Z.
//!
//! A [`LimitLaw`] is `loc + scale * base`. CDFs come from Gil-Pelaez
//! inversion, `F(x) = 1/2 - (1/pi) int_0^inf Im(e^{-itx} phi(t)) / t dt`,
//! computed with one of two independent quadrature schemes.
//!
//! The characteristic function of `L_rho(c)` is rough in `t` (its big-jump
//! part behaves like a Weierstrass function), so that law is inverted in two
//! pieces: the jumps of size at least 1 form a compound Poisson variable on
//! the lattice `b^rho N`, whose law is computed exactly by Panjer recursion,
//! and the compensated small jumps have an entire characteristic function
//! that is inverted numerically.

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::Write;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::quad::{self, kahan_sum};
use crate::splitvec::EULER_GAMMA;

/// Characteristic function of the continuous Luria-Delbrück law.
pub fn ld_cf(t: f64) -> Complex64 {
    ld_log_cf(t).exp()
}

fn ld_log_cf(t: f64) -> Complex64 {
    if t == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    Complex64::new(-FRAC_PI_2 * t.abs(), -t * t.abs().ln())
}

/// Closed-form tail `b^{floor(rho - log_b x) + 1} / (b - 1)` of `Lambda_rho`.
pub fn lambda_bar(rho: f64, b: u32, x: f64) -> f64 {
    let bf = b as f64;
    let e = (rho - x.ln() / bf.ln()).floor() + 1.0;
    bf.powf(e) / (bf - 1.0)
}

/// One atom `b^k` at `b^{rho-k}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevyAtom {
    pub k: i32,
    pub position: f64,
    pub mass: f64,
}

/// Truncated atomic Lévy measure `Lambda_rho`.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomicLevyMeasure {
    rho: f64,
    b: u32,
    atoms: Vec<LevyAtom>,
    /// Total mass of atoms omitted on the large-position side.
    omitted_large_mass: f64,
    /// Omitted `sum mass * x^2` on the small-position side.
    omitted_small_x2: f64,
}

/// Largest atom window accepted.
const MAX_ATOMS: usize = 1024;

fn check_rho_b(rho: f64, b: u32) -> Result<()> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::Domain(format!("rho must lie in [0, 1), got {rho}")));
    }
    if b < 2 {
        return Err(Error::Domain(format!("branch factor must be at least 2, got {b}")));
    }
    Ok(())
}

/// Builds `Lambda_rho` on the smallest window of `k` whose omitted
/// contributions to `int (1 ^ x^2) dLambda` are below `tail_tol`.
pub fn lambda_rho(rho: f64, b: u32, tail_tol: f64) -> Result<AtomicLevyMeasure> {
    check_rho_b(rho, b)?;
    if !(tail_tol > 0.0) {
        return Err(Error::Domain("tail tolerance must be positive".into()));
    }
    let bf = b as f64;
    let log_b = |v: f64| v.ln() / bf.ln();
    let half = 0.5 * tail_tol;
    // omitted large side: sum_{k < k_min} b^k = b^{k_min} / (b - 1)
    let k_min = log_b(half * (bf - 1.0)).floor() as i64;
    // omitted small side: sum_{k > k_max} b^{2 rho - k} = b^{2 rho - k_max} / (b - 1)
    let k_max = (2.0 * rho - log_b(half * (bf - 1.0))).ceil() as i64;
    let len = (k_max - k_min + 1).max(0) as usize;
    if len > MAX_ATOMS || !(k_min > i32::MIN as i64 && k_max < i32::MAX as i64) {
        return Err(Error::Budget(format!(
            "tail tolerance {tail_tol:e} needs {len} atoms (limit {MAX_ATOMS})"
        )));
    }
    let atoms = (k_min..=k_max)
        .map(|k| {
            let k = k as i32;
            let position = bf.powf(rho - k as f64);
            // Mass as the jump of the closed-form tail across the atom.
            let below = lambda_bar(rho, b, position * (1.0 - 1e-9));
            let above = lambda_bar(rho, b, position * (1.0 + 1e-9));
            LevyAtom { k, position, mass: below - above }
        })
        .collect();
    Ok(AtomicLevyMeasure {
        rho,
        b,
        atoms,
        omitted_large_mass: bf.powi(k_min as i32) / (bf - 1.0),
        omitted_small_x2: bf.powf(2.0 * rho - k_max as f64) / (bf - 1.0),
    })
}

impl AtomicLevyMeasure {
    pub fn atoms(&self) -> &[LevyAtom] {
        &self.atoms
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn branching(&self) -> u32 {
        self.b
    }

    /// `Lambda([x, inf))` from the retained atoms.
    pub fn tail(&self, x: f64) -> f64 {
        kahan_sum(self.atoms.iter().filter(|a| a.position >= x).map(|a| a.mass))
    }

    /// `int (1 ^ x^2) dLambda` over the retained atoms.
    pub fn truncated_moment(&self) -> f64 {
        kahan_sum(self.atoms.iter().map(|a| a.mass * a.position.powi(2).min(1.0)))
    }

    /// Upper bound on what the window leaves out of `int (1 ^ x^2) dLambda`.
    pub fn omitted_moment(&self) -> f64 {
        self.omitted_large_mass + self.omitted_small_x2
    }

    /// `Psi_rho(a) = int (e^{-ax} - 1 + a x 1{x<1}) dLambda`, `a >= 0`.
    pub fn laplace_exponent(&self, a: f64) -> f64 {
        let explicit = kahan_sum(self.atoms.iter().map(|at| {
            let y = a * at.position;
            let v = if at.position < 1.0 { exp_m1_minus_x(-y) } else { (-y).exp_m1() };
            at.mass * v
        }));
        explicit + 0.5 * a * a * self.omitted_small_x2
    }

    /// `int (e^{i theta x} - 1 - i theta x 1{x<1}) dLambda`.
    pub fn levy_exponent(&self, theta: f64) -> Complex64 {
        let mut re = Vec::with_capacity(self.atoms.len());
        let mut im = Vec::with_capacity(self.atoms.len());
        for at in &self.atoms {
            let y = theta * at.position;
            let (c, s) = if at.position < 1.0 { cis_m1_minus_iy(y) } else { cis_m1(y) };
            re.push(at.mass * c);
            im.push(at.mass * s);
        }
        Complex64::new(kahan_sum(re) - 0.5 * theta * theta * self.omitted_small_x2, kahan_sum(im))
    }
}

/// `e^y - 1 - y`, accurate for small `y`.
fn exp_m1_minus_x(y: f64) -> f64 {
    if y.abs() < 1e-2 {
        y * y * (0.5 + y * (1.0 / 6.0 + y * (1.0 / 24.0 + y / 120.0)))
    } else {
        y.exp_m1() - y
    }
}

/// `(cos y - 1, sin y)`.
fn cis_m1(y: f64) -> (f64, f64) {
    let s = (0.5 * y).sin();
    (-2.0 * s * s, y.sin())
}

/// `(cos y - 1, sin y - y)`, accurate for small `y`.
fn cis_m1_minus_iy(y: f64) -> (f64, f64) {
    let s = (0.5 * y).sin();
    let im = if y.abs() < 0.1 {
        let y2 = y * y;
        -y * y2 / 6.0 * (1.0 - y2 / 20.0 * (1.0 - y2 / 42.0 * (1.0 - y2 / 72.0)))
    } else {
        y.sin() - y
    };
    (-2.0 * s * s, im)
}

/// Quadrature scheme for Gil-Pelaez inversion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InversionScheme {
    /// Small-`t` series (or direct start), then adaptive Gauss-Kronrod on
    /// panels sized to the local oscillation rate.
    Adaptive,
    /// Tanh-sinh on the first quarter period, then fixed Gauss-Legendre
    /// panels summed until the CF modulus bound makes the tail negligible.
    TailSeries,
}

/// A characteristic function in the form needed by the inverter.
trait Spectrum {
    fn log_cf(&self, t: f64) -> Complex64;
    /// Bound on the phase rate of `phi` near `t`, for panel sizing.
    fn phase_rate(&self, t: f64) -> f64;
    /// `T` such that `int_T^inf |phi(t)|/t dt < eps`.
    fn truncation(&self, eps: f64) -> f64;
    /// Luria-Delbrück integrand has a log singularity at 0.
    fn log_singular(&self) -> bool;
}

struct LuriaDelbruckSpectrum;

impl Spectrum for LuriaDelbruckSpectrum {
    fn log_cf(&self, t: f64) -> Complex64 {
        ld_log_cf(t)
    }

    fn phase_rate(&self, t: f64) -> f64 {
        t.ln().abs() + 2.0
    }

    fn truncation(&self, eps: f64) -> f64 {
        // e^{-pi T/2} (2/pi) / T < eps
        let mut t = 1.0;
        while (-FRAC_PI_2 * t).exp() * 2.0 / (PI * t) >= eps {
            t *= 1.1;
        }
        t
    }

    fn log_singular(&self) -> bool {
        true
    }
}

/// Compensated small jumps of `L_rho(c)`: atoms at `b^{rho-k}` for `k >= 1`.
#[derive(Debug, Clone, PartialEq)]
struct SmallJumps {
    c: f64,
    rho: f64,
    b: f64,
}

/// Below this `theta x` the jump terms are summed by closed-form power series.
const SERIES_CUTOFF: f64 = 0.05;

impl SmallJumps {
    fn position(&self, k: i32) -> f64 {
        self.b.powf(self.rho - k as f64)
    }

    /// `sum_{k > kk} b^k x_k^m = b^{m rho - (m-1)(kk+1)} / (1 - b^{-(m-1)})`.
    fn moment_tail(&self, m: i32, kk: i32) -> f64 {
        let mf = m as f64;
        self.b.powf(mf * self.rho - (mf - 1.0) * (kk + 1) as f64) / (1.0 - self.b.powf(-(mf - 1.0)))
    }

    /// Last `k >= 1` summed explicitly for a given `|theta|`.
    fn explicit_range(&self, theta: f64) -> i32 {
        if theta <= 0.0 {
            return 0;
        }
        // theta b^{rho-k} >= cutoff  <=>  k <= rho + log_b(theta / cutoff)
        let kk = (self.rho + (theta / SERIES_CUTOFF).ln() / self.b.ln()).floor();
        kk.max(0.0) as i32
    }

    fn exponent(&self, theta: f64) -> Complex64 {
        let t = theta.abs();
        let kk = self.explicit_range(t);
        let mut re = 0.0;
        let mut im = 0.0;
        for k in 1..=kk {
            let x = self.position(k);
            let mass = self.b.powi(k);
            let (c, s) = cis_m1_minus_iy(t * x);
            re += mass * c;
            im += mass * s;
        }
        // sum_{m>=2} (i t)^m / m! * sum_{k>kk} b^k x_k^m
        let mut fact = 1.0;
        let mut tp = t;
        for m in 2..=7 {
            fact *= m as f64;
            tp *= t;
            let term = tp / fact * self.moment_tail(m, kk);
            match m % 4 {
                0 => re += term,
                1 => im += term,
                2 => re -= term,
                _ => im -= term,
            }
        }
        let z = Complex64::new(self.c * re, self.c * im);
        if theta < 0.0 {
            z.conj()
        } else {
            z
        }
    }

    /// `log E[e^{aS}]` bound for real `a` (an upper bound for the tail sum).
    fn log_mgf_upper(&self, a: f64) -> f64 {
        let t = a.abs();
        let kk = self.explicit_range(t);
        let mut sum = 0.0;
        for k in 1..=kk {
            let x = self.position(k);
            sum += self.b.powi(k) * exp_m1_minus_x(a * x);
        }
        // e^y - 1 - y <= y^2/2 e^{|y|} and |y| < cutoff on the tail
        sum += 0.5 * t * t * self.moment_tail(2, kk) * SERIES_CUTOFF.exp();
        self.c * sum
    }

    /// Smallest `y` with `P(S >= y) <= eps` (`upper`) or `P(S <= -y) <= eps`, by Chernoff.
    fn chernoff_bound(&self, eps: f64, upper: bool) -> f64 {
        let sign = if upper { 1.0 } else { -1.0 };
        let grid: Vec<(f64, f64)> = (0..200)
            .map(|i| 0.02 * 1.05f64.powi(i))
            .map(|a| (a, self.log_mgf_upper(sign * a)))
            .collect();
        let bound = |y: f64| -> f64 { grid.iter().map(|&(a, l)| l - a * y).fold(f64::INFINITY, f64::min) };
        let target = eps.ln();
        let mut hi = 1.0;
        while bound(hi) > target {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        for _ in 0..50 {
            let mid = 0.5 * (lo + hi);
            if bound(mid) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }
}

impl Spectrum for SmallJumps {
    fn log_cf(&self, t: f64) -> Complex64 {
        self.exponent(t)
    }

    fn phase_rate(&self, t: f64) -> f64 {
        let active = (t * self.b.powf(self.rho)).ln().max(0.0) / self.b.ln();
        self.c * self.b.powf(self.rho) * (2.0 * active + 3.0) + 1.0
    }

    fn truncation(&self, eps: f64) -> f64 {
        // |phi(t)| <= exp(-kappa t) with kappa = 2 c b^{rho-1} / pi for t > pi.
        let kappa = 2.0 * self.c * self.b.powf(self.rho - 1.0) / PI;
        let mut t = PI.max(1.0 / kappa);
        while (-kappa * t).exp() / (kappa * t) >= eps {
            t *= 1.1;
        }
        t
    }

    fn log_singular(&self) -> bool {
        false
    }
}

fn integrand<S: Spectrum>(spec: &S, y: f64, t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let l = spec.log_cf(t);
    l.re.exp() * (l.im - t * y).sin() / t
}

/// `int_0^{t0} e^{-pi t/2} sin(-t (ln t + y)) / t dt` by term-wise integration.
fn ld_near_zero(t0: f64, y: f64) -> f64 {
    let u0 = t0.ln() + y;
    let j0 = t0 * (u0 - 1.0);
    let j1 = t0 * t0 * (0.5 * u0 - 0.25);
    let j2a = t0.powi(3) * (u0 / 3.0 - 1.0 / 9.0);
    let j2b = t0.powi(3) * (u0.powi(3) / 3.0 - u0 * u0 / 3.0 + 2.0 * u0 / 9.0 - 2.0 / 27.0);
    -j0 + FRAC_PI_2 * j1 + j2b / 6.0 - PI * PI / 8.0 * j2a
}

/// `int_0^inf Im(e^{-ity} phi(t)) / t dt`.
fn gil_pelaez<S: Spectrum>(spec: &S, y: f64, tol: f64, scheme: InversionScheme) -> Result<f64> {
    let f = |t: f64| integrand(spec, y, t);
    let t_end = spec.truncation(tol / 100.0);
    let width = |t: f64, frac: f64, cap: f64| (frac * PI / (y.abs() + spec.phase_rate(t))).min(cap);
    let mut parts: Vec<f64> = Vec::new();
    match scheme {
        InversionScheme::Adaptive => {
            let mut t = 0.0;
            if spec.log_singular() {
                t = 1e-3 / y.abs().max(1.0);
                parts.push(ld_near_zero(t, y));
            }
            let budget = tol / 10.0;
            let mut err_total = 0.0;
            while t < t_end {
                let w = width(t.max(1e-300), 1.0, 0.5).min(t_end - t);
                let panel_tol = (budget * w / t_end).max(1e-15);
                let q = quad::adaptive_gk(f, t, t + w, panel_tol, 64)?;
                parts.push(q.value);
                err_total += q.error;
                t += w;
            }
            if err_total > tol {
                return Err(Error::NoConvergence { achieved: err_total, requested: tol });
            }
        }
        InversionScheme::TailSeries => {
            let first = width(1e-3, 0.5, 0.5).min(t_end);
            let q = quad::tanh_sinh(f, 0.0, first, tol / 100.0)?;
            parts.push(q.value);
            let rule = quad::gauss_legendre(20);
            let mut t = first;
            while t < t_end {
                let w = width(t, 0.5, 0.25).min(t_end - t);
                parts.push(quad::gl_panel(&f, t, t + w, &rule));
                t += w;
            }
        }
    }
    Ok(kahan_sum(parts))
}

fn cdf_from_integral(i: f64) -> f64 {
    (0.5 - i / PI).clamp(0.0, 1.0)
}

/// Internal pieces of `L_rho(c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LevyRhoLaw {
    c: f64,
    rho: f64,
    b: u32,
    measure: AtomicLevyMeasure,
    small: SmallJumps,
}

impl LevyRhoLaw {
    fn new(c: f64, rho: f64, b: u32, tail_tol: f64) -> Result<Self> {
        check_rho_b(rho, b)?;
        if !(c > 0.0 && c <= 200.0) {
            return Err(Error::Domain(format!("c must lie in (0, 200], got {c}")));
        }
        let measure = lambda_rho(rho, b, tail_tol)?;
        Ok(LevyRhoLaw { c, rho, b, measure, small: SmallJumps { c, rho, b: b as f64 } })
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn measure(&self) -> &AtomicLevyMeasure {
        &self.measure
    }

    /// CF of `L_rho(c)` from the atom window.
    pub fn cf(&self, theta: f64) -> Complex64 {
        (self.measure.levy_exponent(theta) * self.c).exp()
    }

    /// Big jumps in units of `b^rho`: `pmf[n] = P(B = n b^rho)`.
    ///
    /// Panjer recursion for a compound Poisson variable with jump `b^j`
    /// occurring at rate `c b^{-j}`: `f(n) = (c/n) sum_{b^j <= n} f(n - b^j)`.
    pub fn big_jump_pmf(&self, n_max: usize) -> Vec<f64> {
        let b = self.b as usize;
        let lambda = self.c * self.b as f64 / (self.b as f64 - 1.0);
        let mut f = vec![0.0; n_max + 1];
        f[0] = (-lambda).exp();
        for n in 1..=n_max {
            let mut acc = 0.0;
            let mut step = 1usize;
            while step <= n {
                acc += f[n - step];
                match step.checked_mul(b) {
                    Some(s) => step = s,
                    None => break,
                }
            }
            f[n] = self.c * acc / n as f64;
        }
        f
    }

    fn small_cdf(&self, y: f64, tol: f64, scheme: InversionScheme) -> Result<f64> {
        gil_pelaez(&self.small, y, tol, scheme).map(cdf_from_integral)
    }

    pub fn cdf(&self, y: f64, tol: f64, scheme: InversionScheme) -> Result<f64> {
        let eps = tol / 100.0;
        let lo = self.small.chernoff_bound(eps, false);
        let hi = self.small.chernoff_bound(eps, true);
        if y < -lo {
            return Ok(0.0);
        }
        let unit = (self.b as f64).powf(self.rho);
        let n_top = ((y + lo) / unit).floor() as usize;
        let pmf = self.big_jump_pmf(n_top);
        let mut parts = Vec::with_capacity(pmf.len());
        for (n, &mass) in pmf.iter().enumerate() {
            let z = y - n as f64 * unit;
            if z >= hi {
                parts.push(mass);
            } else if z > -lo {
                parts.push(mass * self.small_cdf(z, tol / 2.0, scheme)?);
            }
        }
        Ok(kahan_sum(parts).clamp(0.0, 1.0))
    }
}

/// Base variable of a [`LimitLaw`].
#[derive(Debug, Clone, PartialEq)]
pub enum BaseLaw {
    LuriaDelbruck,
    LevyRho(Box<LevyRhoLaw>),
}

impl BaseLaw {
    pub fn cf(&self, t: f64) -> Complex64 {
        match self {
            BaseLaw::LuriaDelbruck => ld_cf(t),
            BaseLaw::LevyRho(l) => l.cf(t),
        }
    }

    fn cdf(&self, y: f64, tol: f64, scheme: InversionScheme) -> Result<f64> {
        match self {
            BaseLaw::LuriaDelbruck => {
                gil_pelaez(&LuriaDelbruckSpectrum, y, tol, scheme).map(cdf_from_integral)
            }
            BaseLaw::LevyRho(l) => l.cdf(y, tol, scheme),
        }
    }
}

/// Law of `loc + scale * base`.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitLaw {
    pub base: BaseLaw,
    pub loc: f64,
    pub scale: f64,
    pub label: String,
}

impl LimitLaw {
    /// The continuous Luria-Delbrück law itself.
    pub fn luria_delbruck() -> Self {
        LimitLaw { base: BaseLaw::LuriaDelbruck, loc: 0.0, scale: 1.0, label: "Z".into() }
    }

    pub fn cf(&self, theta: f64) -> Complex64 {
        Complex64::new(0.0, theta * self.loc).exp() * self.base.cf(theta * self.scale)
    }

    /// CDF via the adaptive scheme.
    pub fn cdf(&self, x: f64, tol: f64) -> Result<f64> {
        self.cdf_with(x, tol, InversionScheme::Adaptive)
    }

    pub fn cdf_with(&self, x: f64, tol: f64, scheme: InversionScheme) -> Result<f64> {
        if !(tol > 0.0 && tol <= 1e-3) {
            return Err(Error::Domain(format!("tol must lie in (0, 1e-3], got {tol}")));
        }
        if self.scale == 0.0 {
            return Ok(if x >= self.loc { 1.0 } else { 0.0 });
        }
        let y = (x - self.loc) / self.scale;
        let f = self.base.cdf(y, tol, scheme)?;
        // Both base laws are atomless, so P(base >= y) = 1 - F(y).
        Ok(if self.scale > 0.0 { f } else { 1.0 - f })
    }

    /// Quantile by bisection to `10 tol` in units of `|scale|`.
    pub fn quantile(&self, q: f64, tol: f64) -> Result<f64> {
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::Domain(format!("quantile level must lie in (0, 1), got {q}")));
        }
        if self.scale == 0.0 {
            return Ok(self.loc);
        }
        let s = self.scale.abs();
        let (mut lo, mut hi) = (self.loc - 4.0 * s, self.loc + 4.0 * s);
        let mut guard = 0;
        while self.cdf(lo, tol)? > q {
            lo -= (hi - lo) * 2.0;
            guard += 1;
            if guard > 60 {
                return Err(Error::NoConvergence { achieved: f64::NAN, requested: tol });
            }
        }
        while self.cdf(hi, tol)? < q {
            hi += (hi - lo) * 2.0;
            guard += 1;
            if guard > 60 {
                return Err(Error::NoConvergence { achieved: f64::NAN, requested: tol });
            }
        }
        while hi - lo > 10.0 * tol * s {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid, tol)? < q {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    pub fn median(&self, tol: f64) -> Result<f64> {
        self.quantile(0.5, tol)
    }

    /// Tabulates the CDF on a grid that is dense near `center` and
    /// geometrically sparser towards `lo` and `hi`.
    pub fn tabulate(&self, lo: f64, hi: f64, center: f64, points: usize, tol: f64) -> Result<TabulatedCdf> {
        let s = self.scale.abs().max(f64::MIN_POSITIVE);
        let to_u = |x: f64| ((x - center) / s).asinh();
        let (ua, ub) = (to_u(lo), to_u(hi));
        let mut xs = Vec::with_capacity(points);
        let mut fs = Vec::with_capacity(points);
        for i in 0..points {
            let u = ua + (ub - ua) * i as f64 / (points - 1).max(1) as f64;
            let x = center + s * u.sinh();
            xs.push(x);
            fs.push(self.cdf(x, tol)?);
        }
        // enforce monotonicity against quadrature noise
        for i in 1..fs.len() {
            if fs[i] < fs[i - 1] {
                fs[i] = fs[i - 1];
            }
        }
        Ok(TabulatedCdf { xs, fs })
    }

    /// Writes `x,F(x)` rows.
    pub fn write_csv<W: Write>(&self, xs: &[f64], tol: f64, mut out: W) -> Result<()> {
        writeln!(out, "x,F")?;
        for &x in xs {
            writeln!(out, "{x},{}", self.cdf(x, tol)?)?;
        }
        Ok(())
    }
}

/// Piecewise-linear CDF table.
#[derive(Debug, Clone)]
pub struct TabulatedCdf {
    xs: Vec<f64>,
    fs: Vec<f64>,
}

impl TabulatedCdf {
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.fs[0];
        }
        if x >= self.xs[n - 1] {
            return self.fs[n - 1];
        }
        let i = self.xs.partition_point(|&v| v <= x);
        let (x0, x1) = (self.xs[i - 1], self.xs[i]);
        let w = (x - x0) / (x1 - x0);
        self.fs[i - 1] + w * (self.fs[i] - self.fs[i - 1])
    }
}

fn check_mu_c(c: f64, mu: f64) -> Result<()> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::Domain(format!("mu must be positive, got {mu}")));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::Domain(format!("c must be positive, got {c}")));
    }
    Ok(())
}

fn shift_terms(c: f64, mu: f64, sigma2: f64) -> f64 {
    (c / mu).ln() + (mu * mu - sigma2) * (c + mu) / (2.0 * mu * mu) - EULER_GAMMA + 1.0
}

/// Limit of the ball-count statistic for a non-lattice family.
pub fn theorem2_limit(c: f64, mu: f64, sigma2: f64, varsigma: f64) -> Result<LimitLaw> {
    check_mu_c(c, mu)?;
    let scale = -(c / mu) * (-c / mu).exp();
    let shift = shift_terms(c, mu, sigma2) + varsigma * mu;
    Ok(LimitLaw {
        base: BaseLaw::LuriaDelbruck,
        loc: scale * shift,
        scale,
        label: format!("ball fluctuation limit (c={c}, mu={mu}, sigma2={sigma2}, varsigma={varsigma})"),
    })
}

/// Limit of the vertex-count statistic.
pub fn theorem1_limit(c: f64, mu: f64, sigma2: f64, alpha: f64, zeta: f64) -> Result<LimitLaw> {
    check_mu_c(c, mu)?;
    if !(alpha > 0.0) {
        return Err(Error::Domain(format!("alpha must be positive, got {alpha}")));
    }
    let scale = -(c * alpha / mu) * (-c / mu).exp();
    let shift = shift_terms(c, mu, sigma2) + zeta * mu / alpha;
    Ok(LimitLaw {
        base: BaseLaw::LuriaDelbruck,
        loc: scale * shift,
        scale,
        label: format!("vertex fluctuation limit (c={c}, mu={mu}, alpha={alpha}, zeta={zeta})"),
    })
}

/// `L_rho(c)`; `tol` bounds the omitted atom contributions.
pub fn levy_rho_law(c: f64, rho: f64, b: u32, tol: f64) -> Result<LimitLaw> {
    let law = LevyRhoLaw::new(c, rho, b, tol)?;
    Ok(LimitLaw {
        base: BaseLaw::LevyRho(Box::new(law)),
        loc: 0.0,
        scale: 1.0,
        label: format!("L_rho(c) (c={c}, rho={rho}, b={b})"),
    })
}

/// Limit `-e^{-c} (L_rho(c b^{-rho}) + c rho - c/(b-1))` of the complete-tree
/// statistic.
///
/// A cut at depth `k` happens at rate `c b^k / h` and moves the statistic by
/// `h b^{-k}`, so with `h = b^{l + rho}` the jump `b^{rho - j}` has intensity
/// `c b^{j - rho}`. That is `Lambda_rho` run for time `c b^{-rho}`, which also
/// keeps the law unchanged under `rho -> rho + 1`.
pub fn theorem4_limit(c: f64, rho: f64, b: u32, tol: f64) -> Result<LimitLaw> {
    check_rho_b(rho, b)?;
    let law = LevyRhoLaw::new(c * (b as f64).powf(-rho), rho, b, tol)?;
    let scale = -(-c).exp();
    Ok(LimitLaw {
        base: BaseLaw::LevyRho(Box::new(law)),
        loc: scale * (c * rho - c / (b as f64 - 1.0)),
        scale,
        label: format!("complete-tree fluctuation limit (c={c}, rho={rho}, b={b})"),
    })
}

/// Fractional part of `log_b h`.
pub fn rho_of(h: u32, b: u32) -> f64 {
    let v = (h as f64).ln() / (b as f64).ln();
    let r = v - v.floor();
    // snap values within rounding of an integer
    if (1.0 - r) < 1e-12 {
        0.0
    } else {
        r
    }
}
