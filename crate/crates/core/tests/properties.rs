mod common;

use approx::{assert_abs_diff_eq, assert_relative_eq};
use nalgebra::DVector;
use proptest::prelude::*;
use rand::Rng;

use common::*;
use rerand::asymptotics::{
    decompose, gains_estimated, gains_sampling, sampling_distribution, sampling_distribution_gamma, Role, Scenario,
};
use rerand::design::{enumerate_assignments, mahalanobis, DesignSpec};
use rerand::dists::{chi2_quantile, mixture_quantile, norm_quantile, v_constant, MixtureDist};
use rerand::estimators::{adjusted_estimate, lin_fit, TrialData};
use rerand::inference::probability_limit;
use rerand::simlab::{gen_example1, run_on_population, EstimatorSpec};
use rerand::summarize;

fn close(a: f64, b: f64, rel: f64, scale: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(scale)
}

fn random_gamma(seed: u64, j: usize, spread: f64) -> DVector<f64> {
    let mut r = rng(seed);
    DVector::from_fn(j, |_, _| r.random_range(-spread..spread))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn coefficient_identities(seed in any::<u64>(), n in 12usize..40, k in 1usize..4, j in 1usize..4, r1 in 0.2f64..0.8) {
        let n = n - n % 2;
        let r1 = ((r1 * n as f64).round() / n as f64).clamp(2.0 / n as f64, 1.0 - 2.0 / n as f64);
        let pop = random_population(seed, n, k, j);
        let s = summarize(&pop, r1).unwrap();
        let combo = &s.beta1_tilde * (1.0 - r1) + &s.beta0_tilde * r1;
        let scale = s.gamma_tilde.norm().max(1.0);
        prop_assert!((combo - &s.gamma_tilde).norm() <= 1e-10 * scale);
        let lhs = &s.s2w_minus_x * (&s.gamma_tilde - &s.gamma_res) + &s.s2w_given_x * (&s.gamma_tilde - &s.gamma_proj);
        prop_assert!(lhs.norm() <= 1e-8 * scale * s.s2w.norm().max(1.0));
    }

    #[test]
    fn r2_quantities_are_proportions(seed in any::<u64>(), n in 12usize..40, k in 1usize..4, j in 1usize..4) {
        let n = n - n % 2;
        let pop = random_population(seed, n, k, j);
        let s = summarize(&pop, 0.5).unwrap();
        for v in [s.r2_tau_x, s.r2_tau_w, s.r2_proj, s.r2_res, s.rho2_x_minus_w] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn decomposition_matches_law(seed in any::<u64>(), n in 12usize..40, k in 1usize..4, j in 1usize..4) {
        let n = n - n % 2;
        let pop = random_population(seed, n, k, j);
        let d = DesignSpec::rem(n / 2, 1.5);
        let b1 = random_gamma(seed ^ 1, j, 2.0);
        let b0 = random_gamma(seed ^ 2, j, 2.0);
        let law = sampling_distribution(&pop, &d, &b1, &b0).unwrap();
        let (eps2, l2) = decompose(&pop, &d, &b1, &b0).unwrap();
        let (c_eps, c_l) = law.coefficients2();
        let v = law.scale2;
        prop_assert!(close(eps2, c_eps, 1e-8, 1e-8 * v), "{eps2} vs {c_eps}");
        prop_assert!(close(l2, c_l, 1e-8, 1e-8 * v), "{l2} vs {c_l}");
    }

    #[test]
    fn analyzer_richer_reductions(seed in any::<u64>(), n in 14usize..40, k in 1usize..3, extra in 0usize..3) {
        let n = n - n % 2;
        let pop = analyzer_richer(seed, n, k, extra);
        let s = summarize(&pop, 0.5).unwrap();
        prop_assert!((s.r2_proj - 1.0).abs() <= 1e-8 || s.r2_tau_x <= 1e-10);
        if s.r2_tau_x < 1.0 - 1e-6 {
            let want = (s.r2_tau_w - s.r2_tau_x) / (1.0 - s.r2_tau_x);
            prop_assert!((s.r2_res - want).abs() <= 1e-8, "{} vs {want}", s.r2_res);
        }
        // Adjusting with gamma_tilde removes the design-dependent component.
        let d = DesignSpec::rem(n / 2, 0.3);
        let at_opt = sampling_distribution_gamma(&pop, &d, &s.gamma_tilde).unwrap();
        let at_cre = sampling_distribution_gamma(&pop, &DesignSpec::cre(n / 2), &s.gamma_tilde).unwrap();
        prop_assert!(at_opt.r2 <= 1e-8);
        prop_assert!(close(at_opt.variance(), at_cre.variance(), 1e-10, 1e-12));
    }

    #[test]
    fn designer_richer_reductions(seed in any::<u64>(), n in 14usize..40, j in 1usize..3, extra in 0usize..3) {
        let n = n - n % 2;
        let pop = designer_richer(seed, n, j, extra);
        let s = summarize(&pop, 0.5).unwrap();
        prop_assert!(s.r2_res.abs() <= 1e-8);
        prop_assert!(s.s2w_minus_x.norm() <= 1e-8 * s.s2w.norm());
        if s.r2_tau_x > 1e-6 {
            prop_assert!((s.r2_proj - s.r2_tau_w / s.r2_tau_x).abs() <= 1e-8);
        }
    }

    #[test]
    fn v_constant_bounded_and_increasing(k in 1usize..8, a0 in 0.01f64..5.0) {
        let mut prev = 0.0;
        for i in 0..10 {
            let a = a0 * (1.0 + i as f64);
            let v = v_constant(k, a);
            prop_assert!(v <= 1.0 && v > prev);
            prev = v;
        }
    }

    #[test]
    fn mixture_quantile_symmetric(s2 in 0.1f64..10.0, r2 in 0.0f64..1.0, k in 1usize..6, a in 0.05f64..10.0, p in 0.51f64..0.999) {
        let m = MixtureDist::new(s2, r2, k, a).unwrap();
        let hi = mixture_quantile(&m, p).unwrap();
        let lo = mixture_quantile(&m, 1.0 - p).unwrap();
        prop_assert!((hi + lo).abs() <= 1e-8 * hi.abs().max(1.0));
    }

    #[test]
    fn quantile_range_monotone_in_coefficients(
        ce in 0.0f64..2.0, cl in 0.0f64..2.0, fe in 0.0f64..1.0, fl in 0.0f64..1.0,
        k in 1usize..5, a in 0.1f64..6.0, alpha in 0.01f64..0.5,
    ) {
        let law = |e: f64, l: f64| {
            let s2 = e * e + l * l;
            if s2 == 0.0 { return MixtureDist::gaussian(0.0); }
            MixtureDist::new(s2, l * l / s2, k, a).unwrap()
        };
        let big = law(ce, cl).quantile_range(alpha).unwrap();
        let small = law(ce * fe, cl * fl).quantile_range(alpha).unwrap();
        prop_assert!(small <= big * (1.0 + 1e-9) + 1e-12);
    }

    #[test]
    fn adjusted_estimate_shift_invariant(seed in any::<u64>(), c in -50.0f64..50.0) {
        let pop = random_population(seed, 20, 1, 2);
        let mut r = rng(seed);
        let z = rerand::design::draw_cre(20, 9, &mut r);
        let y = observed(&pop, &z);
        let b1 = random_gamma(seed ^ 3, 2, 1.0);
        let b0 = random_gamma(seed ^ 4, 2, 1.0);
        let d = TrialData::new(y.clone(), z.clone(), pop.w().clone(), None).unwrap();
        let shifted = TrialData::new(y.add_scalar(c), z, pop.w().clone(), None).unwrap();
        let a = adjusted_estimate(&d, &b1, &b0).unwrap();
        let b = adjusted_estimate(&shifted, &b1, &b0).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + c.abs()));
    }

    #[test]
    fn gains_are_nonnegative(seed in any::<u64>(), n in 16usize..40, p in 0.001f64..0.9) {
        let n = n - n % 2;
        let a = chi2_quantile(1, p).unwrap();
        let pop = analyzer_richer(seed, n, 1, 1);
        for role in [Role::Analyzer, Role::Designer] {
            let g = gains_sampling(&pop, 0.5, 1, a, Scenario::AnalyzerRicher, role).unwrap();
            prop_assert!(g.pct_var_reduction >= -1e-10);
            prop_assert!(g.pct_qr_reduction(0.05).unwrap() >= -1e-10);
            for knows in [true, false] {
                let g = gains_estimated(&pop, 0.5, 1, a, knows, role).unwrap();
                prop_assert!(g.pct_var_reduction >= -1e-10);
                prop_assert!(g.pct_qr_reduction(0.05).unwrap() >= -1e-10);
            }
        }
        let pop = designer_richer(seed, n, 1, 1);
        let a2 = chi2_quantile(2, p).unwrap();
        for role in [Role::Analyzer, Role::Designer] {
            let g = gains_sampling(&pop, 0.5, 2, a2, Scenario::DesignerRicher, role).unwrap();
            prop_assert!(g.pct_var_reduction >= -1e-10);
            prop_assert!(g.pct_qr_reduction(0.05).unwrap() >= -1e-10);
        }
    }

    #[test]
    fn estimated_law_is_conservative(seed in any::<u64>(), n in 14usize..40, k in 1usize..3, j in 1usize..3) {
        let n = n - n % 2;
        let pop = random_population(seed, n, k, j);
        let s = summarize(&pop, 0.5).unwrap();
        let d = DesignSpec::rem(n / 2, chi2_quantile(k, 0.05).unwrap());
        let b1 = random_gamma(seed ^ 5, j, 1.5);
        let b0 = random_gamma(seed ^ 6, j, 1.5);
        let truth = sampling_distribution(&pop, &d, &b1, &b0).unwrap();
        let full = probability_limit(&pop, &d, &b1, &b0, true).unwrap();
        let partial = probability_limit(&pop, &d, &b1, &b0, false).unwrap();
        prop_assert!(full.variance() >= truth.variance() * (1.0 - 1e-12) - 1e-12);
        prop_assert!(close(full.variance() - truth.variance(), s.s2_tau_minus_w, 1e-8, 1e-10));
        for alpha in [0.01, 0.05, 0.1, 0.2, 0.5] {
            let t = truth.quantile_range(alpha).unwrap();
            prop_assert!(partial.quantile_range(alpha).unwrap() >= t * (1.0 - 1e-9));
            prop_assert!(full.quantile_range(alpha).unwrap() >= t * (1.0 - 1e-9));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn gamma_tilde_is_optimal(seed in any::<u64>(), richer in any::<bool>()) {
        let (pop, k) = if richer { (analyzer_richer(seed, 30, 1, 1), 1) } else { (designer_richer(seed, 30, 1, 1), 2) };
        let d = DesignSpec::rem(15, chi2_quantile(k, 0.1).unwrap());
        let s = summarize(&pop, 0.5).unwrap();
        let opt = sampling_distribution_gamma(&pop, &d, &s.gamma_tilde).unwrap();
        let z = DVector::zeros(pop.j());
        let opt_full = probability_limit(&pop, &d, &s.gamma_tilde, &s.gamma_tilde, true).unwrap();
        let opt_part = probability_limit(&pop, &d, &s.gamma_tilde, &s.gamma_tilde, false).unwrap();
        for t in 0..50u64 {
            let g = &s.gamma_tilde + random_gamma(seed.wrapping_add(t), pop.j(), 3.0);
            let g = if t == 0 { z.clone() } else { g };
            let other = sampling_distribution_gamma(&pop, &d, &g).unwrap();
            let full = probability_limit(&pop, &d, &g, &g, true).unwrap();
            let part = probability_limit(&pop, &d, &g, &g, false).unwrap();
            for alpha in [0.05, 0.5] {
                prop_assert!(opt.quantile_range(alpha).unwrap() <= other.quantile_range(alpha).unwrap() * (1.0 + 1e-9));
                prop_assert!(opt_part.quantile_range(alpha).unwrap() <= part.quantile_range(alpha).unwrap() * (1.0 + 1e-9));
                if richer {
                    prop_assert!(opt_full.quantile_range(alpha).unwrap() <= full.quantile_range(alpha).unwrap() * (1.0 + 1e-9));
                }
            }
        }
    }
}

#[test]
fn mixture_tends_to_gaussian_for_large_threshold() {
    for (k, r2) in [(1usize, 0.5), (3, 0.9), (6, 1.0)] {
        let m = MixtureDist::new(2.5, r2, k, 1e6).unwrap();
        for p in [0.6, 0.9, 0.975, 0.999] {
            assert_abs_diff_eq!(m.quantile(p).unwrap(), 2.5f64.sqrt() * norm_quantile(p), epsilon = 1e-4);
        }
    }
}

#[test]
fn enumeration_is_unbiased_and_balances_covariates() {
    let pop = random_population(4, 8, 2, 1);
    let zs = enumerate_assignments(8, 4).unwrap();
    let taus: Vec<f64> = zs.iter().map(|z| mean_diff(observed(&pop, z).as_slice(), z)).collect();
    assert_abs_diff_eq!(moments(&taus).0, pop.tau(), epsilon = 1e-12);
    let ms: Vec<f64> = zs.iter().map(|z| mahalanobis(&pop, z).unwrap()).collect();
    let mut sorted = ms.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let a = sorted[sorted.len() / 2];
    for c in 0..2 {
        let col: Vec<f64> = pop.x().column(c).iter().copied().collect();
        let all: Vec<f64> = zs.iter().map(|z| mean_diff(&col, z)).collect();
        let kept: Vec<f64> = zs.iter().zip(&ms).filter(|(_, &m)| m <= a).map(|(z, _)| mean_diff(&col, z)).collect();
        assert!(moments(&kept).1 < moments(&all).1);
    }
}

#[test]
fn reports_do_not_depend_on_thread_count() {
    let pop = gen_example1(60, 0.5, 2).unwrap();
    let d = DesignSpec::rem(30, 0.5);
    let ests = [EstimatorSpec::Diff, EstimatorSpec::Lin];
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_on_population(&pop, &d, &ests, 500, 0.05, 9, false).unwrap())
    };
    let one = run(1);
    let four = run(4);
    assert_eq!(one, four);
    assert_eq!(serde_json::to_string(&one).unwrap(), serde_json::to_string(&four).unwrap());
}

#[test]
fn monte_carlo_mean_error_is_small() {
    let pop = gen_example1(200, 0.5, 6).unwrap();
    let a = chi2_quantile(1, 0.01).unwrap();
    for d in [DesignSpec::cre(100), DesignSpec::rem(100, a)] {
        let rep = run_on_population(&pop, &d, &[EstimatorSpec::Diff, EstimatorSpec::Lin], 4000, 0.05, 3, false).unwrap();
        for s in &rep.estimators {
            let se = s.sampling_sd / (200f64).sqrt() / (4000f64).sqrt();
            assert!(s.mean_error.abs() < 4.0 * se, "{:?}: {} vs se {se}", s.estimator, s.mean_error);
        }
    }
}

#[test]
fn rerandomization_tightens_the_unadjusted_estimator() {
    for rho in [0.0, 0.9] {
        let pop = gen_example1(300, rho, 12).unwrap();
        let a = chi2_quantile(1, 0.001).unwrap();
        let sd = |d: DesignSpec| {
            run_on_population(&pop, &d, &[EstimatorSpec::Diff], 3000, 0.05, 5, false).unwrap().estimators[0].sampling_sd
        };
        assert!(sd(DesignSpec::rem(150, a)) < sd(DesignSpec::cre(150)));
    }
}

#[test]
fn fitted_and_population_coefficients_agree_asymptotically() {
    // sqrt(n) |tauhat(beta_hat) - tauhat(beta_tilde)| shrinks as n grows.
    let mut prev = f64::INFINITY;
    for n in [100usize, 400, 1600] {
        let pop = random_population(77, n, 1, 2);
        let s = summarize(&pop, 0.5).unwrap();
        let mut r = rng(n as u64);
        let reps = 200;
        let mut total = 0.0;
        for _ in 0..reps {
            let z = rerand::design::draw_cre(n, n / 2, &mut r);
            let d = TrialData::new(observed(&pop, &z), z, pop.w().clone(), None).unwrap();
            let fitted = lin_fit(&d).unwrap().tau_hat;
            let oracle = adjusted_estimate(&d, &s.beta1_tilde, &s.beta0_tilde).unwrap();
            total += (n as f64).sqrt() * (fitted - oracle).abs();
        }
        let m = total / reps as f64;
        assert!(m < prev, "n = {n}: {m} not below {prev}");
        prev = m;
    }
    assert_relative_eq!(prev, 0.0, epsilon = 0.1);
}

/// `m` centered, mutually orthogonal columns with unit finite-population variance.
fn orthogonal_columns(seed: u64, n: usize, m: usize) -> Vec<DVector<f64>> {
    let raw = normal_matrix(&mut rng(seed), n, m);
    let centered = rerand::linalg::center_columns(&raw);
    let q = centered.qr().q();
    (0..m).map(|c| q.column(c) * ((n - 1) as f64).sqrt()).collect()
}

fn additive_population(y0: DVector<f64>, x: Vec<&DVector<f64>>, w: Vec<&DVector<f64>>) -> rerand::FinitePopulation {
    let cols = |v: &[&DVector<f64>]| nalgebra::DMatrix::from_columns(&v.iter().map(|c| (*c).clone()).collect::<Vec<_>>());
    rerand::FinitePopulation::new(y0.add_scalar(1.0), y0, cols(&x), cols(&w)).unwrap()
}

#[test]
fn gains_nondecreasing_in_their_r2() {
    let n = 60;
    let b = orthogonal_columns(21, n, 4);
    let a1 = chi2_quantile(1, 0.05).unwrap();
    let a2 = chi2_quantile(2, 0.05).unwrap();
    let grid: Vec<f64> = (0..=10).map(|i| i as f64 * 0.1).collect();
    let track = |vals: Vec<f64>, what: &str| {
        for p in vals.windows(2) {
            assert!(p[1] >= p[0] - 1e-10, "{what}: {vals:?}");
        }
    };

    // x = (b0); w = (b0, b1). R2_x stays fixed while R2_w grows with s.
    let (mut c9v, mut c9q, mut c12v, mut c12q, mut c13v) = (vec![], vec![], vec![], vec![], vec![]);
    for &s in &grid {
        let t = (1.0 - s * s).max(0.0).sqrt();
        let pop = additive_population(&b[0] + &b[1] * s + &b[2] * t, vec![&b[0]], vec![&b[0], &b[1]]);
        let g = gains_sampling(&pop, 0.5, 1, a1, Scenario::AnalyzerRicher, Role::Analyzer).unwrap();
        c9v.push(g.pct_var_reduction);
        c9q.push(g.pct_qr_reduction(0.05).unwrap());
        let g = gains_estimated(&pop, 0.5, 1, a1, true, Role::Analyzer).unwrap();
        c12v.push(g.pct_var_reduction);
        c12q.push(g.pct_qr_reduction(0.05).unwrap());
        c13v.push(gains_estimated(&pop, 0.5, 1, a1, false, Role::Analyzer).unwrap().pct_var_reduction);
    }
    track(c9v, "analyzer-richer variance gain");
    track(c9q, "analyzer-richer range gain");
    track(c12v, "full-knowledge variance gain");
    track(c12q, "full-knowledge range gain");
    track(c13v, "no-knowledge variance gain");

    // x = (b0, b1); w = (b0). R2_x fixed, R2_w grows with s.
    let (mut c10v, mut c10q) = (vec![], vec![]);
    for &s in &grid {
        let c = (1.0 - s * s).max(0.0).sqrt();
        let pop = additive_population(&b[0] * s + &b[1] * c + &b[2] * 0.8, vec![&b[0], &b[1]], vec![&b[0]]);
        let g = gains_sampling(&pop, 0.5, 2, a2, Scenario::DesignerRicher, Role::Analyzer).unwrap();
        c10v.push(g.pct_var_reduction);
        c10q.push(g.pct_qr_reduction(0.05).unwrap());
    }
    track(c10v, "designer-richer analyzer variance gain");
    track(c10q, "designer-richer analyzer range gain");

    // x = (b0, b1); w = (b0). R2_w fixed, R2_x grows with s.
    let (mut c11v, mut c11q) = (vec![], vec![]);
    for &s in &grid {
        let t = (1.0 - s * s).max(0.0).sqrt();
        let pop = additive_population(&b[0] * 0.7 + &b[1] * s + &b[2] * t, vec![&b[0], &b[1]], vec![&b[0]]);
        let g = gains_sampling(&pop, 0.5, 2, a2, Scenario::DesignerRicher, Role::Designer).unwrap();
        c11v.push(g.pct_var_reduction);
        c11q.push(g.pct_qr_reduction(0.05).unwrap());
    }
    track(c11v, "designer variance gain");
    track(c11q, "designer range gain");
}
