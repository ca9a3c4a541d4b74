//! Two-sample t-tests and the Student-t distribution.

use serde::{Deserialize, Serialize};

use super::ExperimentError;

const CF_TOLERANCE: f64 = 1e-10;
const CF_MAX_ITER: usize = 500;
const TINY: f64 = 1e-300;

/// Regularized incomplete beta function I_x(a, b).
pub fn incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = libm::lgamma(a + b) - libm::lgamma(a) - libm::lgamma(b) + a * libm::log(x) + b * libm::log1p(-x);
    let front = libm::exp(ln_front);
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_fraction(x, a, b) / a
    } else {
        1.0 - front * beta_fraction(1.0 - x, b, a) / b
    }
}

/// Modified Lentz evaluation of the incomplete beta continued fraction.
fn beta_fraction(x: f64, a: f64, b: f64) -> f64 {
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < CF_TOLERANCE {
            break;
        }
    }
    h
}

/// P(T ≤ t) for Student's t with `df` degrees of freedom.
pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return if t > 0.0 { 1.0 } else { 0.0 };
    }
    let tail = 0.5 * incomplete_beta(df / (df + t * t), df / 2.0, 0.5);
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// P(T > t).
pub fn student_t_sf(t: f64, df: f64) -> f64 {
    student_t_cdf(-t, df)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    #[default]
    Pooled,
    Welch,
}

impl core::str::FromStr for Variant {
    type Err = alloc::string::String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pooled" => Ok(Variant::Pooled),
            "welch" => Ok(Variant::Welch),
            other => Err(alloc::format!("unknown t-test variant {other:?} (expected pooled or welch)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Alternative {
    TwoSided,
    /// Test arm mean exceeds control arm mean.
    Greater,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub df: f64,
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let ss = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
    (mean, ss / (n - 1.0))
}

/// t = (mean(test) − mean(control)) / SE.
///
/// Both arms constant with equal means gives t = 0; constant arms with
/// different means give an infinite t.
pub fn two_sample_t(control: &[f64], test: &[f64], variant: Variant, alternative: Alternative) -> Result<TTest, ExperimentError> {
    if control.len() < 2 || test.len() < 2 {
        return Err(ExperimentError::TooFewObservations {
            control: control.len(),
            test: test.len(),
        });
    }
    let (n1, n2) = (control.len() as f64, test.len() as f64);
    let (m1, v1) = mean_var(control);
    let (m2, v2) = mean_var(test);
    let (se, df) = match variant {
        Variant::Pooled => {
            let df = n1 + n2 - 2.0;
            let sp2 = ((n1 - 1.0) * v1 + (n2 - 1.0) * v2) / df;
            (libm::sqrt(sp2 * (1.0 / n1 + 1.0 / n2)), df)
        }
        Variant::Welch => {
            let (a, b) = (v1 / n1, v2 / n2);
            let se2 = a + b;
            let df = if se2 == 0.0 {
                n1 + n2 - 2.0
            } else {
                se2 * se2 / (a * a / (n1 - 1.0) + b * b / (n2 - 1.0))
            };
            (libm::sqrt(se2), df)
        }
    };
    let diff = m2 - m1;
    let t = if se == 0.0 {
        if diff == 0.0 {
            0.0
        } else {
            diff.signum() * f64::INFINITY
        }
    } else {
        diff / se
    };
    let p = match alternative {
        Alternative::TwoSided => {
            if t.is_infinite() {
                0.0
            } else {
                incomplete_beta(df / (df + t * t), df / 2.0, 0.5)
            }
        }
        Alternative::Greater => student_t_sf(t, df),
    };
    Ok(TTest { t, p, df })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_pooled() {
        let r = two_sample_t(&[1., 2., 3., 4., 5.], &[2., 3., 4., 5., 6.], Variant::Pooled, Alternative::TwoSided).unwrap();
        assert!((r.t - 1.0).abs() < 1e-9);
        assert_eq!(r.df, 8.0);
    }

    #[test]
    fn identical_arms() {
        let xs = [3.0, 1.0, 4.0, 1.0, 5.0];
        let r = two_sample_t(&xs, &xs, Variant::Pooled, Alternative::TwoSided).unwrap();
        assert_eq!(r.t, 0.0);
        assert!((r.p - 1.0).abs() < 1e-12);
        let c = two_sample_t(&[2.0, 2.0], &[2.0, 2.0, 2.0], Variant::Welch, Alternative::TwoSided).unwrap();
        assert_eq!(c.t, 0.0);
    }

    #[test]
    fn beta_known_values() {
        // I_x(1, 1) = x; I_x(2, 1) = x²; I_0.5(a, a) = 0.5
        assert!((incomplete_beta(0.3, 1.0, 1.0) - 0.3).abs() < 1e-12);
        assert!((incomplete_beta(0.7, 2.0, 1.0) - 0.49).abs() < 1e-12);
        assert!((incomplete_beta(0.5, 7.5, 7.5) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn cauchy_case() {
        // df = 1 is Cauchy: F(t) = 1/2 + atan(t)/π
        for t in [-3.0, -0.5, 0.0, 0.7, 2.0, 10.0] {
            let want = 0.5 + libm::atan(t) / core::f64::consts::PI;
            assert!((student_t_cdf(t, 1.0) - want).abs() < 1e-10, "{t}");
        }
    }

    #[test]
    fn too_few() {
        assert!(two_sample_t(&[1.0], &[1.0, 2.0], Variant::Pooled, Alternative::Greater).is_err());
    }
}
