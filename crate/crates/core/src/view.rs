//! Stable attribute views of the generator space.
//!
//! A raw corpus of (generator, attribute) pairs maps each attribute region to
//! hundreds of generator classes. A view keeps one class per attribute
//! cluster and replaces the surviving pairs by sub-cluster centroids, which
//! gives the translator a single-valued target.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::corpus_hash;
use crate::kmeans::{distinct_rows, kmeans, KMeansResult, DEFAULT_MAX_ITER};
use crate::persist;
use crate::types::{AttributeVector, GeneratorVector, SamplePair};

pub const DEFAULT_CLUSTERS: usize = 20;
pub const DEFAULT_SUBCLUSTERS: usize = 16;

const SELECTION_STREAM: u64 = 0x7365_6c65_6374;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewProvenance {
    pub n_k: usize,
    pub n_s: usize,
    pub seed: u64,
    pub corpus_hash: String,
    pub corpus_size: usize,
    /// Categories were supplied by the user rather than sampled per cluster.
    pub user_categories: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeView {
    #[serde(default = "format_version")]
    pub version: u32,
    pub provenance: ViewProvenance,
    /// Sorted, deduplicated class ids.
    pub retained_categories: Vec<usize>,
    /// Sub-cluster centroids, grouped by category in ascending id order.
    pub smoothed_pairs: Vec<SamplePair>,
    /// Number of surviving corpus pairs behind each smoothed pair.
    pub member_counts: Vec<usize>,
    /// Corpus indices of the pairs kept by category selection.
    pub survivors: Vec<usize>,
}

fn format_version() -> u32 {
    persist::FORMAT_VERSION
}

impl AttributeView {
    pub fn is_empty(&self) -> bool {
        self.smoothed_pairs.is_empty()
    }

    pub fn attribute_targets(&self) -> Vec<AttributeVector> {
        self.smoothed_pairs.iter().map(|p| p.attributes.clone()).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        persist::write_json(path, self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        persist::read_json(path, "attribute view")
    }
}

fn attribute_rows(pairs: &[SamplePair]) -> Vec<Vec<f64>> {
    pairs.iter().map(|p| p.attributes.0.clone()).collect()
}

/// The corpus-wide attribute clustering every view and histogram starts from.
pub fn cluster_attributes(pairs: &[SamplePair], n_k: usize, seed: u64) -> Result<KMeansResult> {
    kmeans(&attribute_rows(pairs), n_k, seed, DEFAULT_MAX_ITER)
}

/// Picks one class with probability proportional to its count.
/// `counts` is `(class_id, count)` in ascending class order.
pub fn sample_category(counts: &[(usize, usize)], rng: &mut ChaCha8Rng) -> Option<usize> {
    let weights: Vec<usize> = counts.iter().map(|&(_, c)| c).collect();
    let dist = WeightedIndex::new(&weights).ok()?;
    Some(counts[dist.sample(rng)].0)
}

fn class_counts<'a>(members: impl IntoIterator<Item = &'a SamplePair>) -> Vec<(usize, usize)> {
    let mut counts = BTreeMap::new();
    for p in members {
        *counts.entry(p.generator.class_id).or_insert(0usize) += 1;
    }
    counts.into_iter().collect()
}

/// Builds a view from a sample corpus.
///
/// Without `user_categories`, the attribute vectors are clustered into `n_k`
/// groups and each group keeps only the pairs of one class, sampled in
/// proportion to its count there. With `user_categories`, every pair of those
/// classes survives. Each retained class is then clustered into at most
/// `n_s` sub-clusters whose mean attribute and mean latent become the
/// smoothed training pairs.
pub fn build_attribute_view(
    pairs: &[SamplePair],
    n_k: usize,
    n_s: usize,
    seed: u64,
    user_categories: Option<&[usize]>,
) -> Result<AttributeView> {
    if n_s == 0 {
        return Err(Error::Precondition("N_S must be at least 1".into()));
    }
    if pairs.is_empty() {
        return Err(Error::InsufficientData("empty sample corpus".into()));
    }

    let survivors: Vec<usize> = match user_categories {
        Some(classes) => {
            let wanted: BTreeSet<usize> = classes.iter().copied().collect();
            let present: BTreeSet<usize> = pairs.iter().map(|p| p.generator.class_id).collect();
            if let Some(missing) = wanted.iter().find(|c| !present.contains(c)) {
                return Err(Error::Precondition(format!("category {missing} does not occur in the corpus")));
            }
            if wanted.is_empty() {
                return Err(Error::Precondition("user category list is empty".into()));
            }
            (0..pairs.len())
                .filter(|&i| wanted.contains(&pairs[i].generator.class_id))
                .collect()
        }
        None => {
            if pairs.len() < n_k {
                return Err(Error::InsufficientData(format!(
                    "{} pairs cannot form {} clusters",
                    pairs.len(),
                    n_k
                )));
            }
            let clustering = cluster_attributes(pairs, n_k, seed)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SELECTION_STREAM);
            let mut keep = Vec::new();
            for (cluster, members) in clustering.members().iter().enumerate() {
                let counts = class_counts(members.iter().map(|&i| &pairs[i]));
                let Some(chosen) = sample_category(&counts, &mut rng) else {
                    log::warn!("attribute cluster {cluster} is empty; skipped");
                    continue;
                };
                keep.extend(members.iter().copied().filter(|&i| pairs[i].generator.class_id == chosen));
            }
            keep.sort_unstable();
            keep
        }
    };

    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &i in &survivors {
        by_class.entry(pairs[i].generator.class_id).or_default().push(i);
    }

    let mut smoothed_pairs = Vec::new();
    let mut member_counts = Vec::new();
    for (&class_id, idx) in &by_class {
        let rows: Vec<Vec<f64>> = idx.iter().map(|&i| pairs[i].attributes.0.clone()).collect();
        let sub = kmeans(&rows, n_s.min(distinct_rows(&rows)), seed.wrapping_add(class_id as u64), DEFAULT_MAX_ITER)?;
        for members in sub.members() {
            if members.is_empty() {
                continue;
            }
            let group: Vec<&SamplePair> = members.iter().map(|&m| &pairs[idx[m]]).collect();
            smoothed_pairs.push(SamplePair {
                generator: GeneratorVector::new(class_id, mean_of(group.iter().map(|p| &p.generator.latent[..]))),
                attributes: AttributeVector(mean_of(group.iter().map(|p| &p.attributes.0[..]))),
            });
            member_counts.push(group.len());
        }
    }

    Ok(AttributeView {
        version: persist::FORMAT_VERSION,
        provenance: ViewProvenance {
            n_k,
            n_s,
            seed,
            corpus_hash: corpus_hash(pairs),
            corpus_size: pairs.len(),
            user_categories: user_categories.is_some(),
        },
        retained_categories: by_class.keys().copied().collect(),
        smoothed_pairs,
        member_counts,
        survivors,
    })
}

fn mean_of<'a>(rows: impl Iterator<Item = &'a [f64]>) -> Vec<f64> {
    let mut sum: Vec<f64> = Vec::new();
    let mut n = 0usize;
    for r in rows {
        if sum.is_empty() {
            sum = vec![0.0; r.len()];
        }
        for (s, v) in sum.iter_mut().zip(r) {
            *s += v;
        }
        n += 1;
    }
    sum.into_iter().map(|s| s / n as f64).collect()
}

/// Distinct class count in each of `n_k` attribute clusters.
pub fn instability_histogram(pairs: &[SamplePair], n_k: usize, seed: u64) -> Result<Vec<usize>> {
    let clustering = cluster_attributes(pairs, n_k, seed)?;
    Ok(distinct_classes_per_cluster(pairs, &clustering.assignments, n_k, None))
}

/// Distinct classes per cluster, optionally restricted to a subset of pair indices.
pub fn distinct_classes_per_cluster(
    pairs: &[SamplePair],
    assignments: &[usize],
    n_k: usize,
    subset: Option<&[usize]>,
) -> Vec<usize> {
    let mut sets = vec![BTreeSet::new(); n_k];
    let mut add = |i: usize| {
        sets[assignments[i]].insert(pairs[i].generator.class_id);
    };
    match subset {
        Some(idx) => idx.iter().for_each(|&i| add(i)),
        None => (0..pairs.len()).for_each(add),
    }
    sets.into_iter().map(|s| s.len()).collect()
}

/// Re-runs the corpus clustering with the view's seed and counts distinct
/// classes among the view's surviving pairs in every cluster that has any.
pub fn view_stability_counts(pairs: &[SamplePair], view: &AttributeView) -> Result<Vec<usize>> {
    let clustering = cluster_attributes(pairs, view.provenance.n_k, view.provenance.seed)?;
    Ok(distinct_classes_per_cluster(pairs, &clustering.assignments, view.provenance.n_k, Some(&view.survivors))
        .into_iter()
        .filter(|&c| c > 0)
        .collect())
}

pub fn median(values: &[usize]) -> f64 {
    let mut v = values.to_vec();
    v.sort_unstable();
    let n = v.len();
    if n == 0 {
        return 0.0;
    }
    if n % 2 == 1 {
        v[n / 2] as f64
    } else {
        (v[n / 2 - 1] + v[n / 2]) as f64 / 2.0
    }
}
