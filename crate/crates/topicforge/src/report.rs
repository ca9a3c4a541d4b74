//! Human-readable summaries printed to standard output.

use topicforge_core::experiment::{Alternative, TestReport};

/// Relative clicks and t-test results per period, one row per arm.
pub fn experiment_table(report: &TestReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<7} {:<8} {:>5} {:>14} {:>10} {:>9} {:>9} {:>7}\n",
        "period", "arm", "days", "mean clicks", "relative", "t", "p", "df"
    ));
    for p in &report.periods {
        let side = match p.alternative {
            Alternative::TwoSided => "two-sided",
            Alternative::Greater => "one-sided",
        };
        out.push_str(&format!(
            "{:<7} {:<8} {:>5} {:>14.2} {:>9.2}% {:>9} {:>9} {:>7}\n",
            p.period.label(),
            "control",
            p.n_control,
            p.control_mean,
            p.relative_control,
            "",
            "",
            ""
        ));
        out.push_str(&format!(
            "{:<7} {:<8} {:>5} {:>14.2} {:>9.2}% {:>9.3} {:>9.4} {:>7.1}  ({side})\n",
            p.period.label(),
            "test",
            p.n_test,
            p.test_mean,
            p.relative_test,
            p.t,
            p.p,
            p.df
        ));
    }
    out.pop();
    out
}
