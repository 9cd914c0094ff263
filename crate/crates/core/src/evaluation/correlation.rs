use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pearson {
    pub r: f64,
    /// Two-sided p-value from the t distribution with `n - 2` dof.
    pub p_value: f64,
}

/// Sample Pearson correlation with a two-sided t-test.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<Pearson> {
    if xs.len() != ys.len() {
        return Err(Error::InvalidArgument(format!(
            "pearson needs equal lengths, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    let n = xs.len();
    if n < 3 {
        return Err(Error::InvalidArgument(format!(
            "pearson needs at least 3 pairs, got {n}"
        )));
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let dx = x - mx;
        let dy = y - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Numerical(
            "pearson is undefined for a constant input".into(),
        ));
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let dof = (n - 2) as f64;
    let p_value = if r.abs() == 1.0 {
        0.0
    } else {
        let t = r * (dof / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, dof)
            .map_err(|e| Error::Numerical(format!("t distribution: {e}")))?;
        (2.0 * dist.sf(t.abs())).min(1.0)
    };
    Ok(Pearson { r, p_value })
}

/// One observation for the separability-vs-erasure analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub separability_score: f64,
    pub delta_acc: f64,
    pub method: String,
    pub run_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodCorrelation {
    pub method: String,
    pub r: f64,
    pub p: f64,
    pub n: usize,
}

/// Pearson r between separability and delta accuracy, per method (sorted
/// by method name).
pub fn correlate_by_method(rows: &[CorrelationRow]) -> Result<Vec<MethodCorrelation>> {
    let mut groups: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for row in rows {
        let g = groups.entry(row.method.as_str()).or_default();
        g.0.push(row.separability_score);
        g.1.push(row.delta_acc);
    }
    groups
        .into_iter()
        .map(|(method, (xs, ys))| {
            let p = pearson(&xs, &ys)?;
            Ok(MethodCorrelation {
                method: method.to_string(),
                r: p.r,
                p: p.p_value,
                n: xs.len(),
            })
        })
        .collect()
}
