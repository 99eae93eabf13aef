//! Numerical integration on finite intervals.
//!
//! Three independent rules are provided so that results can be cross-checked:
//! globally adaptive Gauss-Kronrod (7/15 points), double-exponential
//! (tanh-sinh) quadrature for integrands with endpoint singularities, and
//! fixed-order Gauss-Legendre panels.

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Result of an integration: value and error estimate.
#[derive(Debug, Clone, Copy)]
pub struct Quadrature {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let pair = f(c - dx) + f(c + dx);
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

/// Globally adaptive Gauss-Kronrod integration of `f` on `[a, b]`.
///
/// Bisects the segment with the largest error estimate until the summed
/// estimate drops below `abs_tol` or `max_segments` is reached.
pub fn adaptive_gk<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    max_segments: usize,
) -> Result<Quadrature> {
    if a == b {
        return Ok(Quadrature { value: 0.0, error: 0.0, evaluations: 0 });
    }
    let (v, e) = gk15(&f, a, b);
    let mut segs = vec![Segment { a, b, value: v, error: e }];
    let mut evaluations = 15;
    loop {
        let total_err: f64 = segs.iter().map(|s| s.error).sum();
        if total_err <= abs_tol {
            break;
        }
        if segs.len() >= max_segments {
            return Err(Error::NoConvergence { achieved: total_err, requested: abs_tol });
        }
        let (idx, _) = segs
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.error.total_cmp(&y.1.error))
            .expect("nonempty");
        let s = segs.swap_remove(idx);
        let m = 0.5 * (s.a + s.b);
        if m <= s.a || m >= s.b {
            // Interval cannot be split further in floating point.
            return Err(Error::NoConvergence { achieved: total_err, requested: abs_tol });
        }
        let (v1, e1) = gk15(&f, s.a, m);
        let (v2, e2) = gk15(&f, m, s.b);
        evaluations += 30;
        segs.push(Segment { a: s.a, b: m, value: v1, error: e1 });
        segs.push(Segment { a: m, b: s.b, value: v2, error: e2 });
    }
    // Sum small-to-large for a little extra accuracy.
    let mut vals: Vec<f64> = segs.iter().map(|s| s.value).collect();
    vals.sort_by(|x, y| x.abs().total_cmp(&y.abs()));
    Ok(Quadrature {
        value: kahan_sum(vals.iter().copied()),
        error: segs.iter().map(|s| s.error).sum(),
        evaluations,
    })
}

/// Compensated summation.
pub fn kahan_sum<I: IntoIterator<Item = f64>>(it: I) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for x in it {
        let y = x - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    sum
}

/// Tanh-sinh quadrature on `[a, b]`.
///
/// Halves the step until two successive levels agree within `abs_tol`. The
/// integrand is never evaluated at the endpoints, so integrable endpoint
/// singularities (logarithmic, algebraic) are handled without special care.
pub fn tanh_sinh<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64) -> Result<Quadrature> {
    use std::f64::consts::FRAC_PI_2;
    let half = 0.5 * (b - a);
    let t_max = 4.0;
    // Evaluate f at the abscissa x(t), using the distance to the nearest
    // endpoint to avoid cancellation near a and b.
    let term = |t: f64| -> f64 {
        let s = FRAC_PI_2 * t.sinh();
        let cosh_s = s.cosh();
        let w = FRAC_PI_2 * t.cosh() / (cosh_s * cosh_s);
        // 1 - tanh(s) = 2 / (1 + e^{2s}) for s >= 0
        let dist = 2.0 / (1.0 + (2.0 * s.abs()).exp());
        if dist == 0.0 || w == 0.0 {
            return 0.0;
        }
        let x = if s >= 0.0 { b - half * dist } else { a + half * dist };
        if x <= a || x >= b {
            return 0.0;
        }
        let v = f(x) * w;
        if v.is_finite() {
            v
        } else {
            0.0
        }
    };
    let mut h = 0.5;
    let mut sum = term(0.0);
    let mut k = 1;
    while (k as f64) * h <= t_max {
        let t = k as f64 * h;
        sum += term(t) + term(-t);
        k += 1;
    }
    let mut prev = sum * h * half;
    let mut evaluations = 2 * k;
    let mut err = f64::INFINITY;
    for _level in 0..12 {
        h *= 0.5;
        let mut k = 1;
        while (k as f64) * h <= t_max {
            let t = k as f64 * h;
            sum += term(t) + term(-t);
            k += 2;
        }
        evaluations += k;
        let cur = sum * h * half;
        err = (cur - prev).abs();
        if err <= abs_tol {
            return Ok(Quadrature { value: cur, error: err, evaluations });
        }
        prev = cur;
    }
    Err(Error::NoConvergence { achieved: err, requested: abs_tol })
}

/// Gauss-Legendre nodes and weights of order `n` on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else { p1 };
            let pnm1 = p0;
            dp = n as f64 * (x * pn - pnm1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Fixed Gauss-Legendre rule applied on one panel `[a, b]`.
pub fn gl_panel<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, rule: &(Vec<f64>, Vec<f64>)) -> f64 {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    rule.0
        .iter()
        .zip(&rule.1)
        .map(|(x, w)| w * f(c + h * x))
        .sum::<f64>()
        * h
}
