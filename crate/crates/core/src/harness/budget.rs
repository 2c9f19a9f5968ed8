use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Annotation cost per object in seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetModel {
    pub extreme_seconds: f64,
    pub mask_seconds: f64,
}

impl Default for BudgetModel {
    fn default() -> Self {
        BudgetModel {
            extreme_seconds: 7.2,
            mask_seconds: 79.0,
        }
    }
}

impl BudgetModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.extreme_seconds > 0.0 && self.mask_seconds > 0.0) {
            return Err(Error::Invalid("annotation costs must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BudgetRow {
    pub method: String,
    pub objects: usize,
    pub seconds: f64,
    /// Model quality for this many annotated objects, when a curve is given.
    pub metric: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BudgetReport {
    pub n: usize,
    pub extreme_seconds: f64,
    pub mask_seconds: f64,
    pub ratio: f64,
    pub rows: Vec<BudgetRow>,
}

/// Shortest decimal with at most 6 fractional digits.
pub fn fmt_num(v: f64) -> String {
    let s = format!("{:.6}", v);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}

impl BudgetReport {
    pub fn summary(&self) -> String {
        format!(
            "{} s vs {} s (ratio {})",
            fmt_num(self.extreme_seconds),
            fmt_num(self.mask_seconds),
            fmt_num(self.ratio)
        )
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("method,objects,seconds,metric\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{}\n",
                r.method,
                r.objects,
                r.seconds,
                r.metric.map(|m| m.to_string()).unwrap_or_default()
            ));
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{}\n", self.summary());
        s.push_str(&format!(
            "{:<28}{:>9}{:>12}{:>9}\n",
            "method", "objects", "seconds", "metric"
        ));
        for r in &self.rows {
            s.push_str(&format!(
                "{:<28}{:>9}{:>12}{:>9}\n",
                r.method,
                r.objects,
                fmt_num(r.seconds),
                r.metric.map(fmt_num).unwrap_or_else(|| "-".into())
            ));
        }
        s
    }
}

/// Value of a quality curve at `n`: the entry with the largest count not above `n`.
fn curve_at(curve: &[(usize, f64)], n: usize) -> Option<f64> {
    curve
        .iter()
        .filter(|(k, _)| *k <= n)
        .max_by_key(|(k, _)| *k)
        .map(|&(_, v)| v)
}

/// Cost of annotating `n` objects by extreme clicks versus full masks, plus
/// how many objects the mask budget would buy with extreme clicks.
pub fn budget_report(
    n: usize,
    curve: &[(usize, f64)],
    model: &BudgetModel,
) -> Result<BudgetReport> {
    model.validate()?;
    if n == 0 {
        return Err(Error::Invalid("budget needs at least one object".into()));
    }
    let extreme_seconds = model.extreme_seconds * n as f64;
    let mask_seconds = model.mask_seconds * n as f64;
    let same_budget = (mask_seconds / model.extreme_seconds).floor() as usize;
    let rows = vec![
        BudgetRow {
            method: "extreme clicks".into(),
            objects: n,
            seconds: extreme_seconds,
            metric: curve_at(curve, n),
        },
        BudgetRow {
            method: "full masks".into(),
            objects: n,
            seconds: mask_seconds,
            metric: None,
        },
        BudgetRow {
            method: "extreme clicks, same budget".into(),
            objects: same_budget,
            seconds: model.extreme_seconds * same_budget as f64,
            metric: curve_at(curve, same_budget),
        },
    ];
    Ok(BudgetReport {
        n,
        extreme_seconds,
        mask_seconds,
        ratio: model.mask_seconds / model.extreme_seconds,
        rows,
    })
}
