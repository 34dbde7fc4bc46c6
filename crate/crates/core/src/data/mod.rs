//! Samples, datasets, labels, splits, and ingestion of precomputed
//! embedding files plus the clinical tabular CSV.

mod emb1;
mod filter;
mod impute;
mod manifest;

pub use emb1::{read_matrix, write_matrix};
pub use filter::filter_report;
pub use impute::impute_mode;
pub use manifest::{load_dataset, write_dataset, Manifest};

use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Prognosis label from the NIH stroke scale: scores below 7 are a good
/// prognosis (1), 7 and above a poor one (0).
pub fn label_from_nihss(nihss: u32) -> u8 {
    if nihss < 7 {
        1
    } else {
        0
    }
}

/// One patient record with all three modality vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct TriModalSample {
    pub id: String,
    pub image_emb: Vec<f64>,
    pub text_emb: Vec<f64>,
    pub tabular: Vec<f64>,
    pub label: u8,
    pub site: String,
    pub nihss: Option<u32>,
}

/// An ordered collection of samples sharing per-modality dimensions.
#[derive(Debug, Clone)]
pub struct Dataset {
    samples: Vec<TriModalSample>,
    dims: (usize, usize, usize),
}

impl Dataset {
    /// Validates the collection: consistent dims, unique ids, finite
    /// features, binary labels consistent with any NIHSS score.
    pub fn new(samples: Vec<TriModalSample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::DimMismatch("dataset has no samples".into()));
        }
        let dims = (
            samples[0].image_emb.len(),
            samples[0].text_emb.len(),
            samples[0].tabular.len(),
        );
        let mut seen = std::collections::HashSet::new();
        for s in &samples {
            if (s.image_emb.len(), s.text_emb.len(), s.tabular.len()) != dims {
                return Err(Error::DimMismatch(format!(
                    "sample {} dims ({}, {}, {}) differ from ({}, {}, {})",
                    s.id,
                    s.image_emb.len(),
                    s.text_emb.len(),
                    s.tabular.len(),
                    dims.0,
                    dims.1,
                    dims.2
                )));
            }
            if !seen.insert(s.id.clone()) {
                return Err(Error::CorruptFile {
                    path: String::new(),
                    detail: format!("duplicate id {}", s.id),
                });
            }
            if s.label > 1 {
                return Err(Error::CorruptFile {
                    path: String::new(),
                    detail: format!("label {} for id {} is not binary", s.label, s.id),
                });
            }
            if let Some(n) = s.nihss {
                if s.label != label_from_nihss(n) {
                    return Err(Error::LabelMismatch {
                        id: s.id.clone(),
                        label: s.label,
                        nihss: n,
                    });
                }
            }
            for v in s.image_emb.iter().chain(&s.text_emb).chain(&s.tabular) {
                if !v.is_finite() {
                    return Err(Error::NonFinite {
                        op: "dataset ingestion",
                        context: format!(" (sample {})", s.id),
                    });
                }
            }
        }
        Ok(Dataset { samples, dims })
    }

    pub fn samples(&self) -> &[TriModalSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// (image, text, tabular) vector widths.
    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn labels(&self) -> Vec<u8> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn positive_rate(&self) -> f64 {
        self.samples.iter().filter(|s| s.label == 1).count() as f64 / self.len() as f64
    }

    /// Site names in first-appearance order with their sample counts.
    pub fn site_counts(&self) -> Vec<(String, usize)> {
        let mut order: Vec<String> = Vec::new();
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for s in &self.samples {
            if !counts.contains_key(s.site.as_str()) {
                order.push(s.site.clone());
            }
            *counts.entry(s.site.as_str()).or_insert(0) += 1;
        }
        order.into_iter().map(|name| {
            let c = counts[name.as_str()];
            (name, c)
        }).collect()
    }

    /// A new dataset holding only the given rows, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let samples = indices.iter().map(|&i| self.samples[i].clone()).collect();
        Dataset::new(samples)
    }

    pub(crate) fn push_unchecked(&mut self, sample: TriModalSample) {
        self.samples.push(sample);
    }
}

/// How to partition a dataset for an experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitSpec {
    pub kind: SplitKind,
    pub test_fraction: f64,
    pub val_fraction: f64,
    pub folds: usize,
    pub held_out_site: Option<String>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    Holdout,
    KFold,
    Loho,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            kind: SplitKind::Holdout,
            test_fraction: 0.2,
            val_fraction: 0.2,
            folds: 5,
            held_out_site: None,
            seed: 42,
        }
    }
}

/// Index partition produced by [`make_splits`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Splits {
    /// Train/val/test partition (also used for leave-one-hospital-out,
    /// where `test` is the held-out site in full).
    Holdout {
        train: Vec<usize>,
        val: Vec<usize>,
        test: Vec<usize>,
    },
    /// K disjoint folds; fold f validates on `folds[f]` and trains on the rest.
    Folds(Vec<Vec<usize>>),
}

/// Partitions a dataset per the spec: disjoint, exhaustive, stratified by
/// label (each part's positive ratio within one sample of the global ratio),
/// and deterministic for a given seed.
pub fn make_splits(ds: &Dataset, spec: &SplitSpec) -> Result<Splits> {
    if ds.is_empty() {
        return Err(Error::DimMismatch("cannot split an empty dataset".into()));
    }
    match spec.kind {
        SplitKind::Holdout => {
            check_fraction("test_fraction", spec.test_fraction)?;
            check_fraction("val_fraction", spec.val_fraction)?;
            let all: Vec<usize> = (0..ds.len()).collect();
            holdout_indices(ds, &all, spec.test_fraction, spec.val_fraction, spec.seed)
        }
        SplitKind::KFold => {
            if spec.folds < 2 {
                return Err(Error::OutOfRange {
                    what: "folds",
                    detail: format!("{} (need >= 2)", spec.folds),
                });
            }
            kfold_indices(ds, spec.folds, spec.seed)
        }
        SplitKind::Loho => {
            let site = spec.held_out_site.as_deref().ok_or(Error::InvalidConfig(
                "loho requires held_out_site".into(),
            ))?;
            let sites = ds.site_counts();
            if sites.len() < 2 {
                return Err(Error::SingleSite);
            }
            if !sites.iter().any(|(name, _)| name == site) {
                return Err(Error::MissingId(format!("site {site}")));
            }
            let (test, rest): (Vec<usize>, Vec<usize>) =
                (0..ds.len()).partition(|&i| ds.samples[i].site == site);
            ensure_both_classes(ds, &test, "loho test")?;
            check_fraction("val_fraction", spec.val_fraction)?;
            // remaining sites split train/val; no further test portion
            match holdout_indices(ds, &rest, 0.0, spec.val_fraction, spec.seed)? {
                Splits::Holdout { train, val, .. } => Ok(Splits::Holdout { train, val, test }),
                _ => unreachable!(),
            }
        }
    }
}

fn check_fraction(what: &'static str, x: f64) -> Result<()> {
    if !(x.is_finite() && (0.0..1.0).contains(&x)) {
        return Err(Error::OutOfRange {
            what: "split fraction",
            detail: format!("{what}={x}"),
        });
    }
    Ok(())
}

/// Class-stratified apportioning via cumulative rounding: the positive count
/// of test, then test+val, tracks the exact quota to within 0.5, which keeps
/// every part's positive ratio within one sample of the global ratio.
fn holdout_indices(
    ds: &Dataset,
    eligible: &[usize],
    test_fraction: f64,
    val_fraction: f64,
    seed: u64,
) -> Result<Splits> {
    let n = eligible.len();
    let mut pos: Vec<usize> = Vec::new();
    let mut neg: Vec<usize> = Vec::new();
    for &i in eligible {
        if ds.samples[i].label == 1 {
            pos.push(i);
        } else {
            neg.push(i);
        }
    }
    let mut rng = crate::Rng::seed_from_u64(seed);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);

    let n_test = (n as f64 * test_fraction).round() as usize;
    let n_val = ((n - n_test) as f64 * val_fraction).round() as usize;
    let p = pos.len() as f64 / n as f64;

    let clamp = |x: f64, hi: usize| -> usize { (x.round().max(0.0) as usize).min(hi) };
    let t_pos = clamp(n_test as f64 * p, pos.len()).min(n_test);
    let cum_pos = clamp((n_test + n_val) as f64 * p, pos.len()).min(n_test + n_val);
    let v_pos = cum_pos.saturating_sub(t_pos);
    let t_neg = n_test - t_pos;
    let v_neg = n_val - v_pos;
    if t_neg > neg.len() || v_neg > neg.len() - t_neg || v_pos > pos.len() - t_pos {
        return Err(Error::InsufficientClassSamples(format!(
            "cannot fill test={n_test}, val={n_val} from {} positives / {} negatives",
            pos.len(),
            neg.len()
        )));
    }

    let mut test: Vec<usize> = pos[..t_pos].iter().chain(&neg[..t_neg]).copied().collect();
    let mut val: Vec<usize> = pos[t_pos..t_pos + v_pos]
        .iter()
        .chain(&neg[t_neg..t_neg + v_neg])
        .copied()
        .collect();
    let mut train: Vec<usize> = pos[t_pos + v_pos..]
        .iter()
        .chain(&neg[t_neg + v_neg..])
        .copied()
        .collect();
    test.sort_unstable();
    val.sort_unstable();
    train.sort_unstable();

    for (name, part) in [("train", &train), ("val", &val), ("test", &test)] {
        // a deliberately empty part (fraction 0) is fine; a non-empty one
        // must contain both classes
        if !part.is_empty() {
            ensure_both_classes(ds, part, name)?;
        }
    }
    Ok(Splits::Holdout { train, val, test })
}

fn kfold_indices(ds: &Dataset, k: usize, seed: u64) -> Result<Splits> {
    let mut pos: Vec<usize> = Vec::new();
    let mut neg: Vec<usize> = Vec::new();
    for i in 0..ds.len() {
        if ds.samples[i].label == 1 {
            pos.push(i);
        } else {
            neg.push(i);
        }
    }
    let mut rng = crate::Rng::seed_from_u64(seed);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);

    let mut folds: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (j, &i) in pos.iter().enumerate() {
        folds[j % k].push(i);
    }
    for (j, &i) in neg.iter().enumerate() {
        folds[j % k].push(i);
    }
    for (f, fold) in folds.iter_mut().enumerate() {
        fold.sort_unstable();
        ensure_both_classes(ds, fold, &format!("fold {f}"))?;
    }
    Ok(Splits::Folds(folds))
}

fn ensure_both_classes(ds: &Dataset, part: &[usize], name: &str) -> Result<()> {
    let pos = part.iter().filter(|&&i| ds.samples[i].label == 1).count();
    if pos == 0 || pos == part.len() {
        return Err(Error::InsufficientClassSamples(format!(
            "{name} has {pos} positives out of {}",
            part.len()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests;
