//! Stability verdicts over an ε-sweep. The theory only guarantees that the
//! constants exist, so these checks test boundedness across rows.

use serde::{Deserialize, Serialize};

use super::commands::SweepReport;

/// `log(e_i/e_{i+1}) / log(ε_i/ε_{i+1})` for consecutive rows.
pub fn observed_orders(eps: &[f64], errs: &[f64]) -> Vec<f64> {
    eps.windows(2)
        .zip(errs.windows(2))
        .map(|(e, r)| (r[0] / r[1]).ln() / (e[0] / e[1]).ln())
        .collect()
}

/// `max/min` over the values and `max/first`; NaN if any value is not
/// finite and positive.
pub fn spread(values: &[f64]) -> (f64, f64) {
    if values.is_empty() || values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return (f64::NAN, f64::NAN);
    }
    let hi = values.iter().copied().fold(f64::MIN, f64::max);
    let lo = values.iter().copied().fold(f64::MAX, f64::min);
    (hi / lo, hi / values[0])
}

/// Bounded-family test: spread ≤ 2 and never above 10× the first row.
pub fn uniformly_bounded(values: &[f64]) -> bool {
    let (s, f) = spread(values);
    s <= 2.0 && f <= 10.0
}

/// Every value within a factor 2 of the first.
pub fn within_factor_two_of_first(values: &[f64]) -> bool {
    match values.first() {
        Some(&v0) if v0.is_finite() && v0 > 0.0 => {
            values.iter().all(|v| v.is_finite() && *v >= 0.5 * v0 && *v <= 2.0 * v0)
        }
        _ => false,
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepChecks {
    pub verdicts: Vec<Verdict>,
}

impl SweepChecks {
    pub fn evaluate(report: &SweepReport, lemma_c1: f64) -> Self {
        let rows = &report.rows;
        let all_ok = rows.iter().all(|r| r.ok());
        let mut verdicts = Vec::new();
        let mut push = |name: &str, pass: bool, detail: String| {
            verdicts.push(Verdict { name: name.into(), pass: pass && all_ok, detail })
        };

        let h2: Vec<f64> = rows.iter().map(|r| r.sup_h2).collect();
        let (s, f) = spread(&h2);
        push("uniform H2 bound", uniformly_bounded(&h2), format!("spread {s:.3}, max/first {f:.3}"));
        if report.t_i == 0.0 {
            let full: Vec<f64> = rows.iter().map(|r| r.sup_full).collect();
            let (s, f) = spread(&full);
            push("uniform weighted bound", uniformly_bounded(&full), format!("spread {s:.3}, max/first {f:.3}"));
        }

        let orders = &report.orders;
        let min_order = orders.iter().copied().fold(f64::INFINITY, f64::min);
        let shown: Vec<String> = orders.iter().map(|o| format!("{o:.3}")).collect();
        push("first-profile order", !orders.is_empty() && min_order >= 1.8, format!("orders [{}]", shown.join(", ")));

        let mut stable = true;
        let mut bounded = true;
        let mut parts = Vec::new();
        for alpha in 0..3 {
            for (side, name) in ["low", "high"].iter().enumerate() {
                let v: Vec<f64> = rows.iter().map(|r| r.lemma[alpha][side]).collect();
                stable &= within_factor_two_of_first(&v);
                bounded &= v.iter().all(|x| *x <= lemma_c1);
                let cells: Vec<String> = v.iter().map(|x| format!("{x:.3}")).collect();
                parts.push(format!("a{alpha} {name} [{}]", cells.join(" ")));
            }
        }
        push("elliptic ratios stable", stable, parts.join("; "));
        push("elliptic ratios bounded", bounded, format!("C1 = {lemma_c1}"));
        SweepChecks { verdicts }
    }

    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }

    pub fn lines(&self) -> Vec<String> {
        self.verdicts
            .iter()
            .map(|v| format!("{} {}: {}", if v.pass { "PASS" } else { "FAIL" }, v.name, v.detail))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orders_of_power_laws() {
        let eps = [0.2, 0.1, 0.05];
        let errs: Vec<f64> = eps.iter().map(|e| 3.0 * e * e).collect();
        for o in observed_orders(&eps, &errs) {
            assert!((o - 2.0).abs() < 1e-12);
        }
        assert!(observed_orders(&[0.1], &[1.0]).is_empty());
    }

    #[test]
    fn boundedness_rules() {
        assert!(uniformly_bounded(&[1.0, 1.5, 1.9]));
        assert!(!uniformly_bounded(&[1.0, 2.5]));
        assert!(!uniformly_bounded(&[1.0, f64::NAN]));
        assert!(within_factor_two_of_first(&[2.0, 1.0, 4.0]));
        assert!(!within_factor_two_of_first(&[2.0, 0.9]));
    }
}
