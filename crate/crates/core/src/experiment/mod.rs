//! Date-split experiments: plans, a traffic simulator and t-test reports.
//!
//! A window of dates is cut into an AA half (no treatment anywhere) and an
//! AB half. Each half is split evenly and at random into control and test
//! dates. During AB the topic pages are live on test dates and paused on
//! control dates.

mod stats;

pub use stats::{incomplete_beta, student_t_cdf, student_t_sf, two_sample_t, Alternative, TTest, Variant};

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub const PAGE_GROUP: &str = "topic_pages";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExperimentError {
    #[error("window of {0} dates is not divisible by 4")]
    WindowLength(usize),
    #[error("invalid date {0:?} (expected YYYY-MM-DD)")]
    BadDate(String),
    #[error("duplicate date {0}")]
    DuplicateDate(String),
    #[error("clicks missing for dates: {}", .0.join(", "))]
    MissingDates(Vec<String>),
    #[error("each arm needs at least 2 observations (control {control}, test {test})")]
    TooFewObservations { control: usize, test: usize },
    #[error("invalid simulation parameters: {0}")]
    Simulation(String),
}

/// Days since 1970-01-01 for a proleptic Gregorian date.
fn days_from_civil(y: i64, m: u32, d: u32) -> i64 {
    let y = if m <= 2 { y - 1 } else { y };
    let era = y.div_euclid(400);
    let yoe = y - era * 400;
    let mp = (m as i64 + 9) % 12;
    let doy = (153 * mp + 2) / 5 + d as i64 - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    era * 146097 + doe - 719468
}

fn civil_from_days(z: i64) -> (i64, u32, u32) {
    let z = z + 719468;
    let era = z.div_euclid(146097);
    let doe = z - era * 146097;
    let yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = (doy - (153 * mp + 2) / 5 + 1) as u32;
    let m = if mp < 10 { mp + 3 } else { mp - 9 } as u32;
    (if m <= 2 { yoe + era * 400 + 1 } else { yoe + era * 400 }, m, d)
}

fn parse_date(s: &str) -> Option<i64> {
    let mut parts = s.split('-');
    let y: i64 = parts.next()?.parse().ok()?;
    let m: u32 = parts.next()?.parse().ok()?;
    let d: u32 = parts.next()?.parse().ok()?;
    if parts.next().is_some() || s.len() != 10 || !(1..=12).contains(&m) || d == 0 {
        return None;
    }
    let z = days_from_civil(y, m, d);
    (civil_from_days(z) == (y, m, d)).then_some(z)
}

/// `days` consecutive ISO dates starting at `start`.
pub fn date_window(start: &str, days: usize) -> Result<Vec<String>, ExperimentError> {
    let z = parse_date(start).ok_or_else(|| ExperimentError::BadDate(start.into()))?;
    Ok((0..days as i64)
        .map(|i| {
            let (y, m, d) = civil_from_days(z + i);
            format!("{y:04}-{m:02}-{d:02}")
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Period {
    Aa,
    Ab,
}

impl Period {
    pub fn label(self) -> &'static str {
        match self {
            Period::Aa => "AA",
            Period::Ab => "AB",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Control,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Active,
    Paused,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateAssignment {
    pub date: String,
    pub period: Period,
    pub arm: Arm,
    /// Page group → state on this date.
    pub actions: BTreeMap<String, Action>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub seed: u64,
    /// Every window date, in window order.
    pub assignments: Vec<DateAssignment>,
}

impl ExperimentPlan {
    pub fn dates(&self, period: Period, arm: Arm) -> Vec<&str> {
        self.assignments
            .iter()
            .filter(|a| a.period == period && a.arm == arm)
            .map(|a| a.date.as_str())
            .collect()
    }

    pub fn window(&self) -> Vec<&str> {
        self.assignments.iter().map(|a| a.date.as_str()).collect()
    }
}

/// First half of the window is AA, second half AB; each half is split
/// uniformly at random into equal control and test sets.
pub fn split_dates(window: &[String], seed: u64) -> Result<ExperimentPlan, ExperimentError> {
    if window.is_empty() || !window.len().is_multiple_of(4) {
        return Err(ExperimentError::WindowLength(window.len()));
    }
    let mut seen = BTreeSet::new();
    for d in window {
        if !seen.insert(d.as_str()) {
            return Err(ExperimentError::DuplicateDate(d.clone()));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = window.len() / 2;
    let mut assignments = Vec::with_capacity(window.len());
    for (period, dates) in [(Period::Aa, &window[..half]), (Period::Ab, &window[half..])] {
        let mut order: Vec<usize> = (0..dates.len()).collect();
        order.shuffle(&mut rng);
        let test: BTreeSet<usize> = order[..dates.len() / 2].iter().copied().collect();
        for (i, date) in dates.iter().enumerate() {
            let arm = if test.contains(&i) { Arm::Test } else { Arm::Control };
            let action = if period == Period::Ab && arm == Arm::Test {
                Action::Active
            } else {
                Action::Paused
            };
            assignments.push(DateAssignment {
                date: date.clone(),
                period,
                arm,
                actions: [(PAGE_GROUP.into(), action)].into_iter().collect(),
            });
        }
    }
    Ok(ExperimentPlan { seed, assignments })
}

pub type DailyClicks = BTreeMap<String, f64>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrafficModel {
    pub base_mean: f64,
    pub noise_sd: f64,
    /// Multiplicative lift applied to AB test dates.
    pub lift: f64,
}

/// Draws Normal(base_mean, noise_sd) per date in window order, clamped at 0,
/// with AB test dates scaled by (1 + lift).
pub fn simulate_traffic(plan: &ExperimentPlan, model: &TrafficModel, seed: u64) -> Result<DailyClicks, ExperimentError> {
    if !(model.base_mean > 0.0) || !(model.noise_sd >= 0.0) || !model.lift.is_finite() {
        return Err(ExperimentError::Simulation(format!(
            "need base_mean > 0 and noise_sd >= 0, got {} and {}",
            model.base_mean, model.noise_sd
        )));
    }
    let normal = Normal::new(model.base_mean, model.noise_sd).map_err(|e| ExperimentError::Simulation(format!("{e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(plan
        .assignments
        .iter()
        .map(|a| {
            let mut x = normal.sample(&mut rng).max(0.0);
            if a.period == Period::Ab && a.arm == Arm::Test {
                x *= 1.0 + model.lift;
            }
            (a.date.clone(), x)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodReport {
    pub period: Period,
    pub alternative: Alternative,
    pub n_control: usize,
    pub n_test: usize,
    pub control_mean: f64,
    pub test_mean: f64,
    /// Always 100.
    pub relative_control: f64,
    pub relative_test: f64,
    pub t: f64,
    pub p: f64,
    pub df: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub variant: Variant,
    pub periods: Vec<PeriodReport>,
}

/// AA is tested two-sided, AB one-sided in the improvement direction.
pub fn analyze(plan: &ExperimentPlan, clicks: &DailyClicks, variant: Variant) -> Result<TestReport, ExperimentError> {
    let missing: Vec<String> = plan
        .assignments
        .iter()
        .filter(|a| !clicks.contains_key(&a.date))
        .map(|a| a.date.clone())
        .collect();
    if !missing.is_empty() {
        return Err(ExperimentError::MissingDates(missing));
    }
    let mut periods = Vec::new();
    for (period, alternative) in [(Period::Aa, Alternative::TwoSided), (Period::Ab, Alternative::Greater)] {
        let values = |arm| -> Vec<f64> { plan.dates(period, arm).into_iter().map(|d| clicks[d]).collect() };
        let (control, test) = (values(Arm::Control), values(Arm::Test));
        let r = two_sample_t(&control, &test, variant, alternative)?;
        let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
        let (cm, tm) = (mean(&control), mean(&test));
        periods.push(PeriodReport {
            period,
            alternative,
            n_control: control.len(),
            n_test: test.len(),
            control_mean: cm,
            test_mean: tm,
            relative_control: 100.0,
            relative_test: 100.0 * tm / cm,
            t: r.t,
            p: r.p,
            df: r.df,
        });
    }
    Ok(TestReport { variant, periods })
}

impl TestReport {
    pub fn period(&self, period: Period) -> Option<&PeriodReport> {
        self.periods.iter().find(|p| p.period == period)
    }
}

/// Seed pair for simulation run `run` under a base seed.
pub fn run_seeds(base: u64, run: u64) -> (u64, u64) {
    let s = base.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(run);
    (s, s ^ 0xD1B5_4A32_D192_ED03)
}

/// One seeded simulated experiment over `days` consecutive days.
pub fn simulate_experiment(
    days: usize,
    model: &TrafficModel,
    variant: Variant,
    base_seed: u64,
    run: u64,
) -> Result<TestReport, ExperimentError> {
    let window = date_window("2020-01-01", days)?;
    let (split_seed, traffic_seed) = run_seeds(base_seed, run);
    let plan = split_dates(&window, split_seed)?;
    let clicks = simulate_traffic(&plan, model, traffic_seed)?;
    analyze(&plan, &clicks, variant)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RejectionRates {
    pub runs: usize,
    /// Fraction of runs with AA p ≤ alpha.
    pub aa: f64,
    /// Fraction of runs with AB p < alpha.
    pub ab: f64,
}

pub fn rejection_rates(
    days: usize,
    model: &TrafficModel,
    variant: Variant,
    alpha: f64,
    runs: usize,
    base_seed: u64,
) -> Result<RejectionRates, ExperimentError> {
    let (mut aa, mut ab) = (0usize, 0usize);
    for run in 0..runs as u64 {
        let r = simulate_experiment(days, model, variant, base_seed, run)?;
        aa += (r.periods[0].p <= alpha) as usize;
        ab += (r.periods[1].p < alpha) as usize;
    }
    Ok(RejectionRates {
        runs,
        aa: aa as f64 / runs as f64,
        ab: ab as f64 / runs as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerPoint {
    pub days: usize,
    pub lift: f64,
    pub power: f64,
}

/// Window lengths × lifts to simulate for a power curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerGrid {
    pub windows: Vec<usize>,
    pub lifts: Vec<f64>,
    pub base_mean: f64,
    pub noise_sd: f64,
    pub variant: Variant,
    pub alpha: f64,
    pub runs: usize,
    pub seed: u64,
}

/// Simulated AB power at every grid point.
pub fn power_curve(grid: &PowerGrid) -> Result<Vec<PowerPoint>, ExperimentError> {
    let mut out = Vec::new();
    for &days in &grid.windows {
        for &lift in &grid.lifts {
            let model = TrafficModel {
                base_mean: grid.base_mean,
                noise_sd: grid.noise_sd,
                lift,
            };
            let rates = rejection_rates(days, &model, grid.variant, grid.alpha, grid.runs, grid.seed)?;
            out.push(PowerPoint {
                days,
                lift,
                power: rates.ab,
            });
        }
    }
    Ok(out)
}
