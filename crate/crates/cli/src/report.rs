use serde::{Deserialize, Serialize};

use crate::format::sig9;

pub const REPORT_VERSION: u32 = 1;

/// Result of `pg2 benchmark`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub version: u32,
    pub seed: u64,
    pub pairs: usize,
    pub repetitions: u64,
    pub sigmas: Vec<f64>,
    pub iterations: Vec<u64>,
    pub entries: Vec<BenchmarkEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkEntry {
    pub method: String,
    pub iterations: u64,
    pub sigma: f64,
    pub nmae: f64,
    pub pairs: usize,
    /// Seconds spent in the exact computation over all pairs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_exact: Option<f64>,
    /// Seconds spent in the sampler over all pairs and repetitions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_sampler: Option<f64>,
}

impl BenchmarkReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,iterations,sigma,nmae\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{},{},{},{}\n",
                e.method,
                e.iterations,
                e.sigma,
                sig9(e.nmae)
            ));
        }
        out
    }
}
