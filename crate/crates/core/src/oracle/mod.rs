//! Slow reference implementations used to check the streaming engine.
//!
//! Nothing here shares code with the engine's update path: bins are found by
//! linear scan, histograms are dense vectors updated with the literal mixing
//! formula, and walks are sampled explicitly over stored adjacency.

mod replay;
mod truncated;
mod walks;

pub use replay::{max_state_discrepancy, naive_replay, ReplayCheckpoint};
pub use truncated::{chain_equivalence, truncated_sum, ChainReport};
pub use walks::{approximation_report, walk_sampler, write_report, ApproximationRow, WalkEstimate};

use crate::binning::BinEntry;
use crate::error::{Error, Result};
use crate::types::FeatureValue;

/// Bin index by scanning every interval in order.
pub fn linear_lookup(entry: &BinEntry, value: &FeatureValue) -> Result<usize> {
    match (entry, value) {
        (BinEntry::Numerical { cut_points }, FeatureValue::Num(v)) => {
            if v.is_nan() {
                return Err(Error::Data("NaN feature value".into()));
            }
            let mut bin = 0;
            for (i, &c) in cut_points.iter().enumerate() {
                if *v >= c {
                    bin = i + 1;
                }
            }
            Ok(bin)
        }
        (BinEntry::Categorical { categories, bin_count }, FeatureValue::Cat(tok)) => {
            for (name, &idx) in categories {
                if name == tok {
                    return Ok(idx);
                }
            }
            Ok(bin_count - 1)
        }
        _ => Err(Error::Data(format!("value `{value}` has the wrong kind for its feature"))),
    }
}

/// Dense one-hot vector of length `len` at `bin`.
pub(crate) fn one_hot(len: usize, bin: usize) -> Vec<f64> {
    let mut v = vec![0.0; len];
    v[bin] = 1.0;
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_lookup_conventions() {
        let e = BinEntry::Numerical {
            cut_points: vec![0.0, 1.0, 2.0],
        };
        let n = |v| FeatureValue::Num(v);
        assert_eq!(linear_lookup(&e, &n(1.5)).unwrap(), 2);
        assert_eq!(linear_lookup(&e, &n(-5.0)).unwrap(), 0);
        assert_eq!(linear_lookup(&e, &n(2.0)).unwrap(), 3);
        assert!(linear_lookup(&e, &n(f64::NAN)).is_err());
    }
}
