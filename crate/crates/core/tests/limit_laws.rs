use splitperc::limitlaw::{
    lambda_rho, ld_cf, levy_rho_law, rho_of, theorem1_limit, theorem2_limit, theorem4_limit, InversionScheme,
    LimitLaw,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use splitperc::regtree::{exact_root_pmf, regular_param, theorem4_statistic};
use splitperc::splitvec::EULER_GAMMA;
use splitperc::stats::median;

const Z_MEDIAN: f64 = 1.35578;
const Z_Q25: f64 = -0.20464;
const Z_Q75: f64 = 4.45839;

fn bst_limit(c: f64) -> LimitLaw {
    theorem2_limit(c, 0.5, 0.25, 2.0 * EULER_GAMMA - 4.0).unwrap()
}

#[test]
fn frozen_quartiles_hold_under_both_schemes() {
    let z = LimitLaw::luria_delbruck();
    for (x, q) in [(Z_Q25, 0.25), (Z_MEDIAN, 0.5), (Z_Q75, 0.75)] {
        for scheme in [InversionScheme::Adaptive, InversionScheme::TailSeries] {
            let f = z.cdf_with(x, 1e-7, scheme).unwrap();
            // quartiles are frozen to 5 decimals and the density is below 0.3
            assert!((f - q).abs() < 3e-6, "{scheme:?} F({x}) = {f}");
        }
    }
    assert!((z.median(1e-7).unwrap() - Z_MEDIAN).abs() < 1e-5);
}

#[test]
fn cdf_limits_far_from_center() {
    let tol = 1e-4;
    for law in [LimitLaw::luria_delbruck(), bst_limit(1.0), theorem4_limit(1.0, 0.5, 2, 1e-14).unwrap()] {
        let s = law.scale.abs();
        assert!(law.cdf(law.loc - 1e6 * s, tol).unwrap() <= tol, "{}", law.label);
        assert!(law.cdf(law.loc + 1e6 * s, tol).unwrap() >= 1.0 - tol, "{}", law.label);
    }
}

#[test]
fn luria_delbruck_right_tail_is_one_over_x() {
    let z = LimitLaw::luria_delbruck();
    let ratios: Vec<f64> = [1e2, 1e3, 1e4].iter().map(|&x| x * (1.0 - z.cdf(x, 1e-9).unwrap())).collect();
    let (lo, hi) = ratios.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &r| (a.min(r), b.max(r)));
    assert!(hi / lo < 1.1, "{ratios:?}");
}

#[test]
fn cdfs_are_monotone_over_wide_grids() {
    let tol = 1e-4;
    for law in [
        LimitLaw::luria_delbruck(),
        bst_limit(1.0),
        theorem4_limit(1.0, 0.0, 2, 1e-14).unwrap(),
        theorem4_limit(0.5, rho_of(20, 2), 2, 1e-14).unwrap(),
    ] {
        let s = law.scale.abs();
        let mut prev = 0.0;
        for i in 0..100 {
            // symmetric in asinh so both tails and the center are sampled
            let u = -(1e4f64).asinh() + 2.0 * (1e4f64).asinh() * i as f64 / 99.0;
            let f = law.cdf(law.loc + s * u.sinh(), tol).unwrap();
            assert!(f >= prev - 2.0 * tol, "{}: F dropped from {prev} to {f}", law.label);
            prev = f;
        }
    }
}

#[test]
fn reflection_identity_for_negative_scale() {
    let law = bst_limit(1.0);
    assert!(law.scale < 0.0);
    let z = LimitLaw::luria_delbruck();
    for x in [-1.5, -0.8, -0.3, 0.0, 0.4] {
        let base_point = (x - law.loc) / law.scale;
        let want = 1.0 - z.cdf(base_point, 1e-8).unwrap();
        assert!((law.cdf(x, 1e-8).unwrap() - want).abs() < 1e-7);
    }
}

#[test]
fn bst_limit_constants() {
    let law = bst_limit(1.0);
    assert!((law.scale + 2.0 * (-2f64).exp()).abs() < 1e-15);
    assert!((law.scale - -0.270671).abs() < 1e-6);
    assert!((law.loc / law.scale - (2f64.ln() - 1.0)).abs() < 1e-12);
    assert!((law.loc / law.scale - -0.306853).abs() < 1e-6);
    let same = theorem1_limit(1.0, 0.5, 0.25, 1.0, 2.0 * EULER_GAMMA - 4.0).unwrap();
    assert_eq!((same.loc, same.scale), (law.loc, law.scale));
    let doubled = theorem1_limit(1.0, 0.5, 0.25, 2.0, 2.0 * (2.0 * EULER_GAMMA - 4.0)).unwrap();
    assert!((doubled.scale - 2.0 * law.scale).abs() < 1e-15);
    assert!((doubled.loc - 2.0 * law.loc).abs() < 1e-14);
    for c in [1e-3, 0.5, 2.0, 9.0] {
        assert!(bst_limit(c).scale < 0.0);
    }
    assert!(bst_limit(1e-9).scale.abs() < 1e-7);
    assert!(theorem2_limit(1.0, 0.0, 0.25, 0.0).is_err());
}

#[test]
fn luria_delbruck_cf_examples() {
    assert_eq!(ld_cf(0.0).re, 1.0);
    assert!((ld_cf(2.0).norm() - 0.0432139).abs() < 1e-7);
    for t in [0.1, 1.0, 5.0] {
        assert!((ld_cf(-t) - ld_cf(t).conj()).norm() < 1e-15);
    }
}

#[test]
fn atomic_measure_examples() {
    let m = lambda_rho(0.0, 2, 1e-15).unwrap();
    // the closed tail counts the atom at x itself
    assert!((m.tail(1.0) - 2.0).abs() < 1e-12);
    assert!((m.tail(1.0 + 1e-9) - 1.0).abs() < 1e-12);
    let mass_at = |x: f64| m.atoms().iter().find(|a| (a.position - x).abs() < 1e-15).unwrap().mass;
    for (x, want) in [(1.0, 1.0), (0.5, 2.0), (2.0, 0.5)] {
        assert!((mass_at(x) - want).abs() < 1e-12);
    }
    for x in [0.3f64, 0.9, 1.7] {
        let closed = 2f64.powf((-x.log2()).floor() + 1.0);
        assert!((m.tail(x) - closed).abs() < 1e-12);
    }
}

#[test]
fn levy_cf_is_hermitian() {
    let law = levy_rho_law(1.0, 0.5, 2, 1e-14).unwrap();
    assert!((law.cf(0.0).re - 1.0).abs() < 1e-15 && law.cf(0.0).im.abs() < 1e-15);
    for t in [0.5, 2.0] {
        assert!((law.cf(-t) - law.cf(t).conj()).norm() < 1e-12);
        assert!(law.cf(t).norm() <= 1.0 + 1e-12);
    }
}

#[test]
fn csv_export_has_header_and_rows() {
    let mut buf = Vec::new();
    LimitLaw::luria_delbruck().write_csv(&[-1.0, 0.0, 1.0], 1e-5, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "x,F");
    assert_eq!(lines.len(), 4);
}

#[test]
fn complete_tree_limit_is_periodic_in_rho() {
    let at_zero = theorem4_limit(1.0, 0.0, 2, 1e-14).unwrap();
    let near_one = theorem4_limit(1.0, 1.0 - 1e-9, 2, 1e-14).unwrap();
    for x in [-4.0, -1.5, -0.9, 0.0, 0.4] {
        let (f0, f1) = (at_zero.cdf(x, 1e-7).unwrap(), near_one.cdf(x, 1e-7).unwrap());
        assert!((f0 - f1).abs() < 1e-5, "F({x}): {f0} vs {f1}");
    }
}

/// Direct simulation of the limit: independent Poisson counts on the atoms
/// `b^{rho - j}` with intensity `c b^{j - rho}`, small atoms compensated.
fn poisson_atom_limit(c: f64, rho: f64, b: f64, draws: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    (0..draws)
        .map(|_| {
            let mut l = 0.0;
            for j in -50i32..=30 {
                let x = b.powf(rho - j as f64);
                let lambda = c * b.powf(j as f64 - rho);
                let k = Poisson::new(lambda).unwrap().sample(&mut rng);
                l += x * k;
                if x < 1.0 {
                    l -= x * lambda;
                }
            }
            -(-c).exp() * (l + c * rho - c / (b - 1.0))
        })
        .collect()
}

#[test]
fn complete_tree_limit_median_matches_poisson_atoms() {
    for rho in [rho_of(20, 2), 0.75] {
        let law = theorem4_limit(1.0, rho, 2, 1e-14).unwrap();
        let mc = median(&poisson_atom_limit(1.0, rho, 2.0, 100_000));
        let m = law.median(1e-6).unwrap();
        assert!((m - mc).abs() < 0.03, "rho={rho}: {m} vs {mc}");
    }
}

#[test]
fn exact_finite_height_medians_approach_the_complete_tree_limit() {
    let gaps: Vec<f64> = [5u32, 10, 12]
        .iter()
        .map(|&h| {
            let limit = theorem4_limit(1.0, rho_of(h, 2), 2, 1e-14).unwrap().median(1e-6).unwrap();
            let pmf = exact_root_pmf(2, h, regular_param(h, 1.0).unwrap()).unwrap();
            let mut acc = 0.0;
            let g = pmf.iter().position(|&q| { acc += q; acc >= 0.5 }).unwrap();
            (theorem4_statistic(g as u64, 2, h, 1.0).unwrap() - limit).abs()
        })
        .collect();
    assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
    assert!(gaps[1] < 0.4, "{gaps:?}");
}
