//! Histogram bin boundaries: fitting on a training prefix and value lookup.
//!
//! Numerical features use right-open intervals `[c_i, c_{i+1})` with both ends
//! clamped, so `n` cut points define `n + 1` bins and every non-NaN value lands
//! somewhere. Categorical features give each frequent token its own bin and
//! reserve the last bin for everything else, including tokens first seen after
//! fitting.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::engine::calibrate_derived;
use crate::error::{Error, Result};
use crate::types::{EdgeEvent, FeatureKind, FeatureSchema, FeatureSource, FeatureValue};

pub const DEFAULT_QUANTILE_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BinEntry {
    Numerical {
        cut_points: Vec<f64>,
    },
    Categorical {
        categories: BTreeMap<String, usize>,
        /// Includes the overflow bin, which is always `bin_count - 1`.
        bin_count: usize,
    },
}

impl BinEntry {
    pub fn bin_count(&self) -> usize {
        match self {
            BinEntry::Numerical { cut_points } => cut_points.len() + 1,
            BinEntry::Categorical { bin_count, .. } => *bin_count,
        }
    }

    pub fn kind(&self) -> FeatureKind {
        match self {
            BinEntry::Numerical { .. } => FeatureKind::Numerical,
            BinEntry::Categorical { .. } => FeatureKind::Categorical,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            BinEntry::Numerical { cut_points } => {
                if let Some(c) = cut_points.iter().find(|c| !c.is_finite()) {
                    return Err(Error::Binning(format!("cut point {c} is not finite")));
                }
                if cut_points.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::Binning(format!(
                        "cut points {cut_points:?} are not strictly increasing"
                    )));
                }
            }
            BinEntry::Categorical {
                categories,
                bin_count,
            } => {
                if *bin_count == 0 {
                    return Err(Error::Binning("categorical bin_count must be >= 1".into()));
                }
                let overflow = bin_count - 1;
                if let Some((tok, idx)) = categories.iter().find(|(_, &i)| i >= overflow) {
                    return Err(Error::Binning(format!(
                        "category `{tok}` maps to bin {idx}, but bins 0..{overflow} are available \
                         (bin {overflow} is the overflow bin)"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Bin index of a numeric value by binary search.
    #[inline]
    pub fn lookup_numeric(&self, value: f64) -> Result<usize> {
        match self {
            BinEntry::Numerical { cut_points } => numeric_bin(cut_points, value),
            BinEntry::Categorical { .. } => Err(Error::Data(format!(
                "numeric value {value} given for a categorical feature"
            ))),
        }
    }

    pub fn lookup(&self, value: &FeatureValue) -> Result<usize> {
        match (self, value) {
            (BinEntry::Numerical { cut_points }, FeatureValue::Num(v)) => numeric_bin(cut_points, *v),
            (BinEntry::Categorical { categories, bin_count }, FeatureValue::Cat(tok)) => {
                Ok(categories.get(tok.as_str()).copied().unwrap_or(bin_count - 1))
            }
            (BinEntry::Numerical { .. }, FeatureValue::Cat(tok)) => Err(Error::Data(format!(
                "token `{tok}` given for a numerical feature"
            ))),
            (BinEntry::Categorical { .. }, FeatureValue::Num(v)) => Err(Error::Data(format!(
                "numeric value {v} given for a categorical feature"
            ))),
        }
    }
}

#[inline]
fn numeric_bin(cut_points: &[f64], value: f64) -> Result<usize> {
    if value.is_nan() {
        return Err(Error::Data("NaN feature value".into()));
    }
    Ok(cut_points.partition_point(|&c| c <= value))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBins {
    pub name: String,
    #[serde(flatten)]
    pub bins: BinEntry,
}

/// Fitted bins for every schema feature, in schema order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinningSpec {
    pub features: Vec<FeatureBins>,
}

impl BinningSpec {
    pub fn validate_against(&self, schema: &FeatureSchema) -> Result<()> {
        if self.features.len() != schema.features.len() {
            return Err(Error::Binning(format!(
                "binning covers {} features, schema declares {}",
                self.features.len(),
                schema.features.len()
            )));
        }
        for (fb, def) in self.features.iter().zip(&schema.features) {
            if fb.name != def.name {
                return Err(Error::Binning(format!(
                    "binning entry `{}` found where schema expects `{}`",
                    fb.name, def.name
                )));
            }
            if fb.bins.kind() != def.kind {
                return Err(Error::Binning(format!(
                    "feature `{}` is {:?} in the schema but binned as {:?}",
                    def.name,
                    def.kind,
                    fb.bins.kind()
                )));
            }
            fb.bins.validate()?;
        }
        Ok(())
    }

    pub fn bin_counts(&self) -> Vec<usize> {
        self.features.iter().map(|f| f.bins.bin_count()).collect()
    }
}

/// Nearest-rank quantile cut points at `100 * i / n_bins` percent for
/// `i = 1..n_bins`, with repeated cut points collapsed. A constant feature
/// gets no cut points.
pub fn fit_quantile_bins(values: &[f64], n_bins: usize) -> Result<BinEntry> {
    if values.is_empty() {
        return Err(Error::Fit("no values to fit quantile bins on".into()));
    }
    if n_bins == 0 {
        return Err(Error::Fit("n_bins must be >= 1".into()));
    }
    if let Some((row, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::Data(format!("value {v} at row {row} is not finite")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if sorted[0] == sorted[n - 1] {
        // Constant feature: a single bin.
        return Ok(BinEntry::Numerical { cut_points: vec![] });
    }
    let mut cut_points: Vec<f64> = Vec::with_capacity(n_bins.saturating_sub(1));
    for i in 1..n_bins {
        // rank = ceil(i / n_bins * n), 1-based, computed exactly in integers.
        let rank = (i * n).div_ceil(n_bins).max(1);
        let c = sorted[rank - 1];
        if cut_points.last().is_none_or(|&last| c > last) {
            cut_points.push(c);
        }
    }
    Ok(BinEntry::Numerical { cut_points })
}

/// The `max_categories - 1` most frequent tokens get their own bins (ties
/// broken lexicographically); all others share the trailing overflow bin.
pub fn fit_categorical_bins<S: AsRef<str>>(tokens: &[S], max_categories: usize) -> Result<BinEntry> {
    if tokens.is_empty() {
        return Err(Error::Fit("no tokens to fit categorical bins on".into()));
    }
    if max_categories == 0 {
        return Err(Error::Fit("max_categories must be >= 1".into()));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in tokens {
        *counts.entry(t.as_ref()).or_default() += 1;
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(max_categories - 1);
    let categories: BTreeMap<String, usize> = ranked
        .iter()
        .enumerate()
        .map(|(i, (tok, _))| (tok.to_string(), i))
        .collect();
    let bin_count = categories.len() + 1;
    Ok(BinEntry::Categorical {
        categories,
        bin_count,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub n_bins: usize,
    pub max_categories: usize,
    /// Needed to replay the streaming degree counters for derived features.
    pub degree_timescale: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            n_bins: DEFAULT_QUANTILE_BINS,
            max_categories: 64,
            degree_timescale: 86_400.0,
        }
    }
}

/// Fits bins for every schema feature on a training prefix.
///
/// Derived features are fitted on the values the engine would bin while
/// replaying `events`; first-event time deltas (undefined) are skipped.
pub fn fit_from_events(
    events: &[EdgeEvent],
    schema: &FeatureSchema,
    opts: &FitOptions,
) -> Result<BinningSpec> {
    schema.validate()?;
    if events.is_empty() {
        return Err(Error::Fit("training prefix is empty".into()));
    }
    for (row, e) in events.iter().enumerate() {
        e.validate(schema)
            .map_err(|err| Error::Data(format!("event {row}: {err}")))?;
    }
    let derived = if schema.has_derived() {
        Some(calibrate_derived(events, opts.degree_timescale)?)
    } else {
        None
    };

    let mut features = Vec::with_capacity(schema.len());
    let mut edge_col = 0;
    for def in &schema.features {
        let bins = match def.source {
            FeatureSource::Edge => {
                let col = edge_col;
                edge_col += 1;
                match def.kind {
                    FeatureKind::Numerical => {
                        let mut xs = Vec::with_capacity(events.len());
                        for (row, e) in events.iter().enumerate() {
                            match &e.values[col] {
                                FeatureValue::Num(v) => xs.push(*v),
                                FeatureValue::Cat(t) => {
                                    return Err(Error::Data(format!(
                                        "event {row}: token `{t}` in numerical feature `{}`",
                                        def.name
                                    )))
                                }
                            }
                        }
                        fit_quantile_bins(&xs, opts.n_bins)
                            .map_err(|err| Error::Fit(format!("feature `{}`: {err}", def.name)))?
                    }
                    FeatureKind::Categorical => {
                        let toks: Vec<String> = events.iter().map(|e| e.values[col].to_string()).collect();
                        fit_categorical_bins(&toks, opts.max_categories)?
                    }
                }
            }
            src => {
                let samples = derived.as_ref().expect("derived samples computed above");
                let xs = match src {
                    FeatureSource::DerivedInDegree => &samples.in_degree,
                    FeatureSource::DerivedOutDegree => &samples.out_degree,
                    FeatureSource::DerivedTimeDelta => &samples.time_delta,
                    FeatureSource::Edge => unreachable!(),
                };
                if xs.is_empty() {
                    // Only first events seen: nothing to cut on.
                    BinEntry::Numerical { cut_points: vec![] }
                } else {
                    fit_quantile_bins(xs, opts.n_bins)?
                }
            }
        };
        features.push(FeatureBins {
            name: def.name.clone(),
            bins,
        });
    }
    let spec = BinningSpec { features };
    spec.validate_against(schema)?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Nearest-rank percentile straight from the definition: the smallest
    /// element such that at least p% of the data is <= it.
    fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
        let n = sorted.len();
        for (k, &x) in sorted.iter().enumerate() {
            if (k + 1) as f64 * 100.0 >= p * n as f64 - 1e-9 {
                return x;
            }
        }
        sorted[n - 1]
    }

    fn linear_bin(cuts: &[f64], v: f64) -> usize {
        if cuts.is_empty() || v < cuts[0] {
            return 0;
        }
        for i in 0..cuts.len() - 1 {
            if cuts[i] <= v && v < cuts[i + 1] {
                return i + 1;
            }
        }
        cuts.len()
    }

    fn cuts(entry: &BinEntry) -> &[f64] {
        match entry {
            BinEntry::Numerical { cut_points } => cut_points,
            _ => panic!("not numerical"),
        }
    }

    #[test]
    fn quantiles_of_one_to_ten() {
        let xs: Vec<f64> = (1..=10).map(f64::from).collect();
        let sorted = xs.clone();
        let oracle: Vec<f64> = (1..5).map(|i| nearest_rank(&sorted, 20.0 * i as f64)).collect();
        assert_eq!(oracle, vec![2.0, 4.0, 6.0, 8.0]);
        let entry = fit_quantile_bins(&xs, 5).unwrap();
        assert_eq!(cuts(&entry), oracle.as_slice());
        assert_eq!(entry.bin_count(), 5);
    }

    #[test]
    fn constant_feature_collapses() {
        let entry = fit_quantile_bins(&[7.0; 4], 10).unwrap();
        assert!(cuts(&entry).is_empty());
        assert_eq!(entry.bin_count(), 1);
    }

    #[test]
    fn two_values_two_bins() {
        assert_eq!(nearest_rank(&[0.0, 100.0], 50.0), 0.0);
        let entry = fit_quantile_bins(&[100.0, 0.0], 2).unwrap();
        assert_eq!(cuts(&entry), &[0.0]);
        assert_eq!(entry.bin_count(), 2);
    }

    #[test]
    fn quantile_errors() {
        assert!(matches!(fit_quantile_bins(&[], 10), Err(Error::Fit(_))));
        let err = fit_quantile_bins(&[1.0, f64::INFINITY], 10).unwrap_err();
        assert!(matches!(err, Error::Data(ref m) if m.contains("row 1")), "{err}");
    }

    #[test]
    fn categorical_below_cap() {
        let entry = fit_categorical_bins(&["a", "a", "b"], 10).unwrap();
        let BinEntry::Categorical { categories, bin_count } = &entry else { panic!() };
        assert_eq!(categories["a"], 0);
        assert_eq!(categories["b"], 1);
        assert_eq!(*bin_count, 3);
    }

    #[test]
    fn categorical_tie_break_and_overflow() {
        let entry = fit_categorical_bins(&["c", "b", "a", "b", "a"], 3).unwrap();
        assert_eq!(entry.lookup(&FeatureValue::Cat("a".into())).unwrap(), 0);
        assert_eq!(entry.lookup(&FeatureValue::Cat("b".into())).unwrap(), 1);
        assert_eq!(entry.lookup(&FeatureValue::Cat("c".into())).unwrap(), 2);
        assert_eq!(entry.lookup(&FeatureValue::Cat("z".into())).unwrap(), 2);
        assert_eq!(entry.bin_count(), 3);
        assert!(fit_categorical_bins::<&str>(&[], 3).is_err());
    }

    #[test]
    fn lookup_interval_convention() {
        let e = BinEntry::Numerical {
            cut_points: vec![0.0, 1.0, 2.0],
        };
        assert_eq!(e.lookup_numeric(1.5).unwrap(), 2);
        assert_eq!(e.lookup_numeric(-5.0).unwrap(), 0);
        assert_eq!(e.lookup_numeric(2.0).unwrap(), 3);
        assert_eq!(e.lookup_numeric(0.0).unwrap(), 1);
        assert_eq!(e.lookup_numeric(f64::INFINITY).unwrap(), 3);
        assert!(matches!(e.lookup_numeric(f64::NAN), Err(Error::Data(_))));
        assert!(e.lookup(&FeatureValue::Cat("x".into())).is_err());
    }

    #[test]
    fn validate_rejects_bad_entries() {
        let e = BinEntry::Numerical {
            cut_points: vec![1.0, 1.0],
        };
        assert!(e.validate().is_err());
        let mut categories = BTreeMap::new();
        categories.insert("a".to_string(), 1);
        let e = BinEntry::Categorical {
            categories,
            bin_count: 2,
        };
        assert!(e.validate().is_err());
    }

    proptest! {
        #[test]
        fn binary_search_matches_linear_scan(
            raw in prop::collection::vec(-100.0f64..100.0, 0..20),
            v in -150.0f64..150.0,
        ) {
            let mut cuts = raw;
            cuts.sort_by(f64::total_cmp);
            cuts.dedup();
            let e = BinEntry::Numerical { cut_points: cuts.clone() };
            prop_assert_eq!(e.lookup_numeric(v).unwrap(), linear_bin(&cuts, v));
            prop_assert_eq!(e.lookup_numeric(cuts.first().copied().unwrap_or(0.0)).unwrap(),
                            linear_bin(&cuts, cuts.first().copied().unwrap_or(0.0)));
        }

        #[test]
        fn quantile_fit_matches_oracle_and_covers_training(
            xs in prop::collection::vec(-1e3f64..1e3, 1..200),
            n_bins in 1usize..16,
        ) {
            let entry = fit_quantile_bins(&xs, n_bins).unwrap();
            let mut sorted = xs.clone();
            sorted.sort_by(f64::total_cmp);
            let mut expected: Vec<f64> = (1..n_bins)
                .map(|i| nearest_rank(&sorted, 100.0 * i as f64 / n_bins as f64))
                .collect();
            expected.dedup();
            if sorted[0] == sorted[sorted.len() - 1] {
                expected.clear();
            }
            prop_assert_eq!(cuts(&entry), expected.as_slice());
            prop_assert!(entry.bin_count() >= 1 && entry.bin_count() <= n_bins);
            for &x in &xs {
                prop_assert!(entry.lookup_numeric(x).unwrap() < entry.bin_count());
            }
        }

        #[test]
        fn quantile_fit_is_permutation_invariant(
            xs in prop::collection::vec(-1e3f64..1e3, 1..100),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = xs.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(fit_quantile_bins(&xs, 10).unwrap(), fit_quantile_bins(&shuffled, 10).unwrap());
        }
    }
}
