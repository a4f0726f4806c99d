use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    F,
    L,
    Mcfree,
    GlassoMc,
    Oracle,
    Pc,
    Phi,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::F,
        Method::L,
        Method::Mcfree,
        Method::GlassoMc,
        Method::Oracle,
        Method::Pc,
        Method::Phi,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::F => "f",
            Method::L => "l",
            Method::Mcfree => "mcfree",
            Method::GlassoMc => "glasso-mc",
            Method::Oracle => "oracle",
            Method::Pc => "pc",
            Method::Phi => "phi",
        }
    }

    /// Whether the method needs a tuned `(lambda, b*)`.
    pub fn needs_tuning(self) -> bool {
        matches!(self, Method::L | Method::Mcfree | Method::GlassoMc | Method::Phi)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .iter()
            .copied()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown method '{s}'"))
    }
}

/// Seeds, tuning and branch information attached to a test result.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OutcomeMeta {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b_star: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tuning_seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mc_seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ge_count: Option<usize>,
    /// MC samples whose solver did not converge (counted as `>=`).
    #[serde(skip_serializing_if = "is_zero")]
    pub unconverged: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub branch: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub retained_components: Option<usize>,
}

fn is_zero(v: &usize) -> bool {
    *v == 0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub method: Method,
    pub statistic: f64,
    pub p_value: f64,
    pub mc_samples: Option<usize>,
    pub meta: OutcomeMeta,
}

impl TestOutcome {
    pub fn new(method: Method, statistic: f64, p_value: f64) -> Self {
        Self {
            method,
            statistic,
            p_value: p_value.clamp(0.0, 1.0),
            mc_samples: None,
            meta: OutcomeMeta::default(),
        }
    }

    pub fn rejects(&self, alpha: f64) -> bool {
        self.p_value <= alpha
    }
}
