//! Holm step-down and Benjamini-Hochberg step-up procedures.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Procedure {
    Holm,
    Bh,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdjustedResults {
    pub raw: Vec<f64>,
    pub rejected: Vec<bool>,
    pub procedure: Procedure,
    pub level: f64,
}

impl AdjustedResults {
    pub fn rejections(&self) -> usize {
        self.rejected.iter().filter(|&&r| r).count()
    }
}

fn validate(p: &[f64], level: f64) -> Result<Vec<usize>> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::BadLevel(level));
    }
    if let Some(bad) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidArgument(format!("p-value {bad} outside [0, 1]")));
    }
    // Stable: equal p-values keep their input order.
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
    Ok(order)
}

/// Holm's step-down procedure at family-wise level `alpha`.
pub fn holm(p: &[f64], alpha: f64) -> Result<AdjustedResults> {
    let order = validate(p, alpha)?;
    let m = p.len();
    let mut rejected = vec![false; m];
    for (i, &idx) in order.iter().enumerate() {
        if p[idx] <= alpha / (m - i) as f64 {
            rejected[idx] = true;
        } else {
            break;
        }
    }
    Ok(AdjustedResults {
        raw: p.to_vec(),
        rejected,
        procedure: Procedure::Holm,
        level: alpha,
    })
}

/// Benjamini-Hochberg step-up procedure at false discovery rate `q`.
pub fn bh(p: &[f64], q: f64) -> Result<AdjustedResults> {
    let order = validate(p, q)?;
    let m = p.len();
    let cutoff = (0..m)
        .rev()
        .find(|&i| p[order[i]] <= (i + 1) as f64 * q / m as f64);
    let mut rejected = vec![false; m];
    if let Some(last) = cutoff {
        for &idx in &order[..=last] {
            rejected[idx] = true;
        }
    }
    Ok(AdjustedResults {
        raw: p.to_vec(),
        rejected,
        procedure: Procedure::Bh,
        level: q,
    })
}

pub fn adjust(p: &[f64], procedure: Procedure, level: f64) -> Result<AdjustedResults> {
    match procedure {
        Procedure::Holm => holm(p, level),
        Procedure::Bh => bh(p, level),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn holm_examples() {
        assert_eq!(holm(&[0.01, 0.03, 0.04], 0.05).unwrap().rejected, vec![true, false, false]);
        assert_eq!(holm(&[1.0, 1.0], 0.05).unwrap().rejections(), 0);
        assert_eq!(holm(&[0.05], 0.05).unwrap().rejected, vec![true]);
        assert_eq!(holm(&[0.0501], 0.05).unwrap().rejected, vec![false]);
    }

    #[test]
    fn bh_examples() {
        assert_eq!(bh(&[0.01, 0.02, 0.05, 0.9], 0.1).unwrap().rejected, vec![true, true, true, false]);
        assert_eq!(bh(&[0.2, 0.3], 0.1).unwrap().rejections(), 0);
        assert_eq!(bh(&[0.001], 0.1).unwrap().rejected, vec![true]);
    }

    #[test]
    fn levels_and_inputs_are_checked() {
        assert_eq!(holm(&[0.1], 0.0), Err(Error::BadLevel(0.0)));
        assert_eq!(bh(&[0.1], 1.0), Err(Error::BadLevel(1.0)));
        assert!(bh(&[1.2], 0.1).is_err());
        assert!(holm(&[], 0.05).unwrap().rejected.is_empty());
    }
}
