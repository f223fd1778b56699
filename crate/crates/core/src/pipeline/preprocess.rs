use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::FeatureMatrix;
use crate::cohort::{Cohort, EncounterRecord};
use crate::error::{Error, Result};
use crate::model::N_OUTCOMES;

/// Per continuous feature `(min, max)` of clipped training data.
pub type ScalerStats = Vec<(f64, f64)>;

pub const AGE_FEATURE: &str = "age";
pub const PROCEDURE_FEATURE: &str = "procedure";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuousStats {
    pub name: String,
    pub clip_low: f64,
    pub clip_high: f64,
    pub median: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    /// Values outside these bounds are implausible and treated as missing.
    pub hard_bounds: Option<(f64, f64)>,
}

impl ContinuousStats {
    /// Clip, impute and scale one raw value.
    pub fn apply(&self, raw: Option<f64>) -> f64 {
        let present = raw.filter(|v| self.hard_bounds.is_none_or(|(lo, hi)| (lo..=hi).contains(v)));
        let v = present.map_or(self.median, |v| v.clamp(self.clip_low, self.clip_high));
        let span = self.scale_max - self.scale_min;
        if span > 0.0 {
            ((v - self.scale_min) / span).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }
}

/// Category code → embedding index; index 0 is reserved for missing or
/// unseen codes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryMap {
    pub name: String,
    pub vocab: usize,
    pub index: BTreeMap<u32, usize>,
}

impl CategoryMap {
    /// Code `c` maps to `c + 1` for every code of a fixed catalog.
    pub fn catalog(name: &str, size: usize) -> Self {
        Self { name: name.into(), vocab: size + 1, index: (0..size as u32).map(|c| (c, c as usize + 1)).collect() }
    }

    /// Codes observed in training, in ascending order from index 1.
    pub fn observed(name: &str, codes: impl IntoIterator<Item = u32>) -> Self {
        let mut seen: Vec<u32> = codes.into_iter().collect();
        seen.sort_unstable();
        seen.dedup();
        let index: BTreeMap<u32, usize> = seen.into_iter().enumerate().map(|(i, c)| (c, i + 1)).collect();
        Self { name: name.into(), vocab: index.len() + 1, index }
    }

    pub fn lookup(&self, code: Option<u32>) -> usize {
        code.and_then(|c| self.index.get(&c).copied()).unwrap_or(0)
    }
}

/// Options of [`fit_preprocessor`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FitOptions {
    /// Global scale bounds replacing the site's own (federated mode).
    pub scaler_override: Option<ScalerStats>,
    /// Fixed catalog size per high-cardinality feature; observed codes otherwise.
    pub catalog: Option<Vec<usize>>,
    /// Plausibility bounds per continuous feature name.
    pub hard_bounds: BTreeMap<String, (f64, f64)>,
}

/// Site-local preprocessing state fitted on a training cohort.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub continuous: Vec<ContinuousStats>,
    pub binary: Vec<String>,
    pub categorical: Vec<CategoryMap>,
}

/// Linear-interpolation percentile of sorted values.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn continuous_value(r: &EncounterRecord, j: usize) -> Option<f64> {
    if j == 0 {
        Some(r.age)
    } else {
        r.continuous[j - 1]
    }
}

fn categorical_value(r: &EncounterRecord, k: usize) -> Option<u32> {
    if k == 0 {
        crate::cohort::index_surgery(&r.surgeries).map(|s| s.procedure_code)
    } else {
        r.categorical[k - 1]
    }
}

fn check_scaler(stats: &ScalerStats, n: usize) -> Result<()> {
    if stats.len() != n {
        return Err(Error::Dimension(format!("scaler has {} features, preprocessor {n}", stats.len())));
    }
    Ok(())
}

/// Fits clip bounds (1st/99th percentiles), medians and category maps on
/// `train`. Scale bounds come from the clipped training data unless an
/// override is given.
pub fn fit_preprocessor(train: &Cohort, opts: &FitOptions) -> Result<Preprocessor> {
    if train.is_empty() {
        return Err(Error::EmptyData(format!("{}: empty training cohort", train.site)));
    }
    let names: Vec<String> =
        std::iter::once(AGE_FEATURE.to_string()).chain(train.schema.continuous.iter().cloned()).collect();
    let mut continuous = Vec::with_capacity(names.len());
    for (j, name) in names.iter().enumerate() {
        let hard = opts.hard_bounds.get(name).copied();
        let mut values: Vec<f64> = train
            .records
            .iter()
            .filter_map(|r| continuous_value(r, j))
            .filter(|v| hard.is_none_or(|(lo, hi)| (lo..=hi).contains(v)))
            .collect();
        if values.is_empty() {
            return Err(Error::MissingFeature(format!(
                "{}: feature `{name}` is missing in every training row",
                train.site
            )));
        }
        values.sort_by(f64::total_cmp);
        let (lo, hi) = (percentile(&values, 0.01), percentile(&values, 0.99));
        continuous.push(ContinuousStats {
            name: name.clone(),
            clip_low: lo,
            clip_high: hi,
            median: percentile(&values, 0.5),
            scale_min: lo,
            scale_max: hi,
            hard_bounds: hard,
        });
    }
    let cat_names: Vec<String> =
        std::iter::once(PROCEDURE_FEATURE.to_string()).chain(train.schema.categorical.iter().cloned()).collect();
    let categorical = match &opts.catalog {
        Some(sizes) if sizes.len() != cat_names.len() => {
            return Err(Error::Config(format!(
                "{} catalog sizes for {} categorical features",
                sizes.len(),
                cat_names.len()
            )))
        }
        Some(sizes) => cat_names.iter().zip(sizes).map(|(n, &s)| CategoryMap::catalog(n, s)).collect(),
        None => cat_names
            .iter()
            .enumerate()
            .map(|(k, n)| CategoryMap::observed(n, train.records.iter().filter_map(|r| categorical_value(r, k))))
            .collect(),
    };
    let pp = Preprocessor { continuous, binary: train.schema.binary.clone(), categorical };
    match &opts.scaler_override {
        Some(s) => pp.with_scaler(s),
        None => Ok(pp),
    }
}

/// Envelope of per-site scale bounds.
pub fn merge_scaler_stats(per_site: &[ScalerStats]) -> Result<ScalerStats> {
    let first = per_site.first().ok_or_else(|| Error::EmptyData("no scaler statistics to merge".into()))?;
    let mut out = first.clone();
    for s in &per_site[1..] {
        if s.len() != out.len() {
            return Err(Error::Dimension(format!("scaler stats with {} vs {} features", s.len(), out.len())));
        }
        for (acc, &(lo, hi)) in out.iter_mut().zip(s) {
            acc.0 = acc.0.min(lo);
            acc.1 = acc.1.max(hi);
        }
    }
    Ok(out)
}

const ARTIFACT_HEADER: &str = "fedrisk-preprocessor v1";

impl Preprocessor {
    /// `(min, max)` of each continuous feature's clipped training values.
    pub fn scaler_stats(&self) -> ScalerStats {
        self.continuous.iter().map(|c| (c.clip_low, c.clip_high)).collect()
    }

    /// Scale bounds currently in use.
    pub fn scaler(&self) -> ScalerStats {
        self.continuous.iter().map(|c| (c.scale_min, c.scale_max)).collect()
    }

    pub fn with_scaler(&self, stats: &ScalerStats) -> Result<Self> {
        check_scaler(stats, self.continuous.len())?;
        let mut out = self.clone();
        for (c, &(lo, hi)) in out.continuous.iter_mut().zip(stats) {
            c.scale_min = lo;
            c.scale_max = hi;
        }
        Ok(out)
    }

    /// Embedding vocabulary (including the missing index) per categorical feature.
    pub fn vocab_sizes(&self) -> Vec<usize> {
        self.categorical.iter().map(|c| c.vocab).collect()
    }

    /// Clip, impute, scale continuous values; map categories; copy labels.
    pub fn transform(&self, cohort: &Cohort) -> Result<FeatureMatrix> {
        if cohort.schema.continuous.len() + 1 != self.continuous.len()
            || cohort.schema.binary.len() != self.binary.len()
            || cohort.schema.categorical.len() + 1 != self.categorical.len()
        {
            return Err(Error::Dimension(format!("{}: cohort schema does not match the preprocessor", cohort.site)));
        }
        let n = cohort.len();
        let (nc, nb) = (self.continuous.len(), self.binary.len());
        let mut m = FeatureMatrix {
            n_continuous: nc,
            n_binary: nb,
            continuous: Vec::with_capacity(n * nc),
            binary: Vec::with_capacity(n * nb),
            high_card: vec![Vec::with_capacity(n); self.categorical.len()],
            labels: Vec::with_capacity(n * N_OUTCOMES),
            encounter_ids: Vec::with_capacity(n),
            surgeon_ids: Vec::with_capacity(n),
        };
        for r in &cohort.records {
            for (j, stats) in self.continuous.iter().enumerate() {
                m.continuous.push(stats.apply(continuous_value(r, j)));
            }
            m.binary.extend(r.binary.iter().map(|&b| if b { 1.0 } else { 0.0 }));
            for (k, map) in self.categorical.iter().enumerate() {
                m.high_card[k].push(map.lookup(categorical_value(r, k)));
            }
            m.labels.extend(r.outcomes.iter().map(|&y| if y { 1.0 } else { 0.0 }));
            m.encounter_ids.push(r.encounter_id);
            m.surgeon_ids.push(r.surgeon_id);
        }
        Ok(m)
    }

    /// Tab-separated audit artifact.
    pub fn to_text(&self) -> String {
        let mut s = format!("{ARTIFACT_HEADER}\n");
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
        for c in &self.continuous {
            let _ = writeln!(
                s,
                "continuous\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                c.name,
                c.clip_low,
                c.clip_high,
                c.median,
                c.scale_min,
                c.scale_max,
                opt(c.hard_bounds.map(|b| b.0)),
                opt(c.hard_bounds.map(|b| b.1))
            );
        }
        for b in &self.binary {
            let _ = writeln!(s, "binary\t{b}");
        }
        for c in &self.categorical {
            let pairs: Vec<String> = c.index.iter().map(|(code, idx)| format!("{code}={idx}")).collect();
            let _ = writeln!(s, "categorical\t{}\t{}\t{}", c.name, c.vocab, pairs.join(","));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(ARTIFACT_HEADER) {
            return Err(Error::Format("not a preprocessor artifact (bad header)".into()));
        }
        let bad = |line: &str| Error::Format(format!("malformed preprocessor line `{line}`"));
        let num = |f: &str, line: &str| f.parse::<f64>().map_err(|_| bad(line));
        let mut pp = Preprocessor { continuous: Vec::new(), binary: Vec::new(), categorical: Vec::new() };
        for line in lines.filter(|l| !l.is_empty()) {
            let f: Vec<&str> = line.split('\t').collect();
            match (f[0], f.len()) {
                ("continuous", 9) => {
                    let hard = match (f[7], f[8]) {
                        ("", "") => None,
                        (lo, hi) => Some((num(lo, line)?, num(hi, line)?)),
                    };
                    pp.continuous.push(ContinuousStats {
                        name: f[1].into(),
                        clip_low: num(f[2], line)?,
                        clip_high: num(f[3], line)?,
                        median: num(f[4], line)?,
                        scale_min: num(f[5], line)?,
                        scale_max: num(f[6], line)?,
                        hard_bounds: hard,
                    });
                }
                ("binary", 2) => pp.binary.push(f[1].into()),
                ("categorical", 4) => {
                    let vocab = f[2].parse().map_err(|_| bad(line))?;
                    let mut index = BTreeMap::new();
                    for pair in f[3].split(',').filter(|p| !p.is_empty()) {
                        let (code, idx) = pair.split_once('=').ok_or_else(|| bad(line))?;
                        index.insert(code.parse().map_err(|_| bad(line))?, idx.parse().map_err(|_| bad(line))?);
                    }
                    pp.categorical.push(CategoryMap { name: f[1].into(), vocab, index });
                }
                _ => return Err(bad(line)),
            }
        }
        Ok(pp)
    }
}
