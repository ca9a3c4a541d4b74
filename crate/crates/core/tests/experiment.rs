//! Statistical checks of the experiment harness.

use proptest::prelude::*;
use topicforge_core::experiment::{
    date_window, rejection_rates, simulate_traffic, split_dates, student_t_cdf, two_sample_t, Alternative, Arm,
    Period, TrafficModel, Variant,
};

/// (df, upper-tail probability, quantile) from a standard printed t table.
const T_TABLE: [(f64, f64, f64); 20] = [
    (1.0, 0.025, 12.706),
    (2.0, 0.025, 4.303),
    (3.0, 0.025, 3.182),
    (4.0, 0.025, 2.776),
    (5.0, 0.025, 2.571),
    (10.0, 0.025, 2.228),
    (20.0, 0.025, 2.086),
    (30.0, 0.025, 2.042),
    (60.0, 0.025, 2.000),
    (120.0, 0.025, 1.980),
    (1.0, 0.05, 6.314),
    (2.0, 0.05, 2.920),
    (5.0, 0.05, 2.015),
    (10.0, 0.05, 1.812),
    (20.0, 0.05, 1.725),
    (30.0, 0.05, 1.697),
    (60.0, 0.05, 1.671),
    (10.0, 0.01, 2.764),
    (30.0, 0.01, 2.457),
    (8.0, 0.005, 3.355),
];

#[test]
fn cdf_matches_quantile_table() {
    for (df, tail, q) in T_TABLE {
        let got = student_t_cdf(q, df);
        assert!((got - (1.0 - tail)).abs() < 1e-3, "df {df} q {q}: {got}");
        assert!((student_t_cdf(-q, df) - tail).abs() < 1e-3);
    }
}

#[test]
fn one_sided_p_at_t_1_69() {
    // 30 + 30 observations, pooled: df 58
    let p = topicforge_core::experiment::student_t_sf(1.69, 58.0);
    assert!((p - 0.048).abs() < 0.003, "{p}");
}

#[test]
fn dates_land_in_test_half_the_time() {
    let window = date_window("2022-01-01", 120).unwrap();
    let mut hits = vec![0usize; 120];
    for seed in 0..1000 {
        let plan = split_dates(&window, seed).unwrap();
        for (i, a) in plan.assignments.iter().enumerate() {
            hits[i] += (a.arm == Arm::Test) as usize;
        }
    }
    for h in hits {
        let f = h as f64 / 1000.0;
        assert!((f - 0.5).abs() <= 0.05, "{f}");
    }
}

#[test]
fn simulated_mean_close_to_base() {
    let window = date_window("2000-01-01", 10_000).unwrap();
    let plan = split_dates(&window, 4).unwrap();
    let clicks = simulate_traffic(&plan, &TrafficModel { base_mean: 500.0, noise_sd: 50.0, lift: 0.0 }, 9).unwrap();
    let mean = clicks.values().sum::<f64>() / clicks.len() as f64;
    assert!((mean / 500.0 - 1.0).abs() < 0.01, "{mean}");
}

#[test]
fn aa_calibration_and_power() {
    let null = TrafficModel { base_mean: 10_000.0, noise_sd: 300.0, lift: 0.0 };
    let rates = rejection_rates(120, &null, Variant::Pooled, 0.05, 500, 2024).unwrap();
    assert!((rates.aa - 0.05).abs() <= 0.02, "AA rejection rate {}", rates.aa);

    let lifted = TrafficModel { lift: 0.11, ..null };
    let rates = rejection_rates(120, &lifted, Variant::Pooled, 0.05, 200, 2024).unwrap();
    assert!(rates.ab >= 0.95, "power {}", rates.ab);
    // AA dates never receive lift
    assert!((rates.aa - 0.05).abs() <= 0.03);
}

#[test]
fn welch_matches_pooled_for_equal_sizes_and_variances() {
    let a = [1.0, 2.0, 3.0, 4.0, 5.0];
    let b = [2.0, 3.0, 4.0, 5.0, 6.0];
    let p = two_sample_t(&a, &b, Variant::Pooled, Alternative::TwoSided).unwrap();
    let w = two_sample_t(&a, &b, Variant::Welch, Alternative::TwoSided).unwrap();
    assert!((p.t - w.t).abs() < 1e-12);
    assert!((p.df - w.df).abs() < 1e-9);
}

#[test]
fn report_periods_have_expected_sides() {
    let window = date_window("2022-01-01", 120).unwrap();
    let plan = split_dates(&window, 1).unwrap();
    let clicks = simulate_traffic(&plan, &TrafficModel { base_mean: 100.0, noise_sd: 3.0, lift: 0.04 }, 1).unwrap();
    let r = topicforge_core::experiment::analyze(&plan, &clicks, Variant::Pooled).unwrap();
    assert_eq!(r.period(Period::Aa).unwrap().alternative, Alternative::TwoSided);
    assert_eq!(r.period(Period::Ab).unwrap().alternative, Alternative::Greater);
    assert_eq!(r.period(Period::Ab).unwrap().n_control, 30);
}

fn arm() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1.0f64..1000.0, 2..40)
}

proptest! {
    #[test]
    fn swapping_arms_negates_t(a in arm(), b in arm(), welch in any::<bool>()) {
        let v = if welch { Variant::Welch } else { Variant::Pooled };
        let x = two_sample_t(&a, &b, v, Alternative::TwoSided).unwrap();
        let y = two_sample_t(&b, &a, v, Alternative::TwoSided).unwrap();
        prop_assert_eq!(x.t, -y.t);
        prop_assert_eq!(x.p, y.p);
    }

    #[test]
    fn scaling_leaves_t_unchanged(a in arm(), b in arm(), c in 0.01f64..100.0) {
        let x = two_sample_t(&a, &b, Variant::Pooled, Alternative::Greater).unwrap();
        let sa: Vec<f64> = a.iter().map(|v| v * c).collect();
        let sb: Vec<f64> = b.iter().map(|v| v * c).collect();
        let y = two_sample_t(&sa, &sb, Variant::Pooled, Alternative::Greater).unwrap();
        prop_assert!((x.t - y.t).abs() <= 1e-9 * x.t.abs().max(1.0));
        prop_assert!((x.p - y.p).abs() <= 1e-9);
    }

    #[test]
    fn cdf_is_monotone_and_symmetric(t in -20.0f64..20.0, dt in 0.0f64..5.0, df in 1.0f64..200.0) {
        let f = student_t_cdf(t, df);
        prop_assert!(student_t_cdf(t + dt, df) >= f - 1e-12);
        prop_assert!((f + student_t_cdf(-t, df) - 1.0).abs() < 1e-10);
    }
}
