//! Mean and range over replicates.

use privshield_core::metrics::MetricsReport;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

impl Summary {
    /// NaN everywhere for an empty slice.
    pub fn of(values: &[f64]) -> Summary {
        if values.is_empty() {
            return Summary { mean: f64::NAN, min: f64::NAN, max: f64::NAN, n: 0 };
        }
        Summary {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            n: values.len(),
        }
    }

    /// `mean,min,max` as CSV cells.
    pub fn cells(&self) -> String {
        format!("{},{},{}", self.mean, self.min, self.max)
    }
}

pub fn summarize_group(group: &[&MetricsReport], f: impl Fn(&MetricsReport) -> f64) -> Summary {
    Summary::of(&group.iter().map(|m| f(m)).collect::<Vec<_>>())
}
