//! Permutation tests on a distance matrix: PERMANOVA pseudo-F and the mean
//! silhouette width.
//!
//! p-values are `(1 + #{null >= observed}) / (1 + n_perm)` for random
//! relabelings, and `#{null >= observed} / #labelings` when every distinct
//! labeling is enumerated. Null statistics within a relative `1e-12` of the
//! observed value count as exceedances.

use std::collections::HashMap;
use std::hash::Hash;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::distance::DistanceMatrix;
use crate::error::{Error, Result};
use crate::registry::{Named, Registry};

const TIE_REL: f64 = 1e-12;
/// Refuse exhaustive enumeration beyond this many labelings.
pub const MAX_EXHAUSTIVE: u128 = 2_000_000;

/// Maps arbitrary labels to dense group ids in order of first appearance.
pub fn encode_labels<T: Eq + Hash + Clone>(labels: &[T]) -> Vec<usize> {
    let mut ids: HashMap<T, usize> = HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = ids.len();
            *ids.entry(l.clone()).or_insert(next)
        })
        .collect()
}

fn group_sizes(labels: &[usize]) -> Vec<usize> {
    let g = labels.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0; g];
    for &l in labels {
        sizes[l] += 1;
    }
    sizes
}

fn check_groups(labels: &[usize], n: usize) -> Result<Vec<usize>> {
    if labels.len() != n {
        return Err(Error::Validation(format!(
            "{} labels for {n} observations",
            labels.len()
        )));
    }
    let labels = encode_labels(labels);
    let sizes = group_sizes(&labels);
    if sizes.len() < 2 {
        return Err(Error::Validation(
            "need at least 2 groups (one group spans the whole sample)".into(),
        ));
    }
    Ok(labels)
}

fn exceeds(null: f64, observed: f64) -> bool {
    null >= observed || (observed.is_finite() && null >= observed - TIE_REL * observed.abs().max(f64::MIN_POSITIVE))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PermutationTally {
    pub exceedances: usize,
    /// Null statistics evaluated.
    pub evaluated: usize,
    pub p_value: f64,
}

/// How null labelings are generated.
pub trait PermutationScheme: Named + Send + Sync {
    fn tally(
        &self,
        labels: &[usize],
        n_perm: usize,
        seed: u64,
        observed: f64,
        statistic: &(dyn Fn(&[usize]) -> f64 + Sync),
    ) -> Result<PermutationTally>;
}

/// `n_perm` independent uniform shuffles; replicate `i` draws from ChaCha
/// stream `i` of `seed`, so parallel and sequential runs agree exactly.
#[derive(Debug, Default)]
pub struct RandomPermutations;

impl Named for RandomPermutations {
    fn name(&self) -> &'static str {
        "random"
    }
}

pub fn replicate_labels(labels: &[usize], seed: u64, replicate: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    let mut perm = labels.to_vec();
    perm.shuffle(&mut rng);
    perm
}

impl PermutationScheme for RandomPermutations {
    fn tally(
        &self,
        labels: &[usize],
        n_perm: usize,
        seed: u64,
        observed: f64,
        statistic: &(dyn Fn(&[usize]) -> f64 + Sync),
    ) -> Result<PermutationTally> {
        if n_perm < 1 {
            return Err(Error::Config("n_permutations must be >= 1".into()));
        }
        let exceedances = (0..n_perm as u64)
            .into_par_iter()
            .filter(|&i| exceeds(statistic(&replicate_labels(labels, seed, i)), observed))
            .count();
        Ok(PermutationTally {
            exceedances,
            evaluated: n_perm,
            p_value: (1 + exceedances) as f64 / (1 + n_perm) as f64,
        })
    }
}

/// Every distinct labeling with the observed group sizes, identity included.
/// Ignores `n_perm` and `seed`.
#[derive(Debug, Default)]
pub struct ExhaustivePermutations;

impl Named for ExhaustivePermutations {
    fn name(&self) -> &'static str {
        "exhaustive"
    }
}

/// Number of distinct arrangements of a multiset with the given group sizes.
pub fn count_labelings(sizes: &[usize]) -> u128 {
    let mut total: u128 = 1;
    let mut placed: u128 = 0;
    for &s in sizes {
        // multiply by C(placed + s, s) incrementally; exact at every step
        for k in 1..=s as u128 {
            placed += 1;
            total = total.saturating_mul(placed) / k;
        }
    }
    total
}

fn next_permutation(v: &mut [usize]) -> bool {
    let n = v.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

impl PermutationScheme for ExhaustivePermutations {
    fn tally(
        &self,
        labels: &[usize],
        _n_perm: usize,
        _seed: u64,
        observed: f64,
        statistic: &(dyn Fn(&[usize]) -> f64 + Sync),
    ) -> Result<PermutationTally> {
        let total = count_labelings(&group_sizes(labels));
        if total > MAX_EXHAUSTIVE {
            return Err(Error::Config(format!(
                "{total} distinct labelings exceed the exhaustive limit {MAX_EXHAUSTIVE}"
            )));
        }
        let mut current = labels.to_vec();
        current.sort_unstable();
        let mut all = Vec::with_capacity(total as usize);
        loop {
            all.push(current.clone());
            if !next_permutation(&mut current) {
                break;
            }
        }
        let exceedances = all
            .par_iter()
            .filter(|l| exceeds(statistic(l), observed))
            .count();
        Ok(PermutationTally {
            exceedances,
            evaluated: all.len(),
            p_value: exceedances as f64 / all.len() as f64,
        })
    }
}

pub fn scheme_registry() -> Registry<dyn PermutationScheme> {
    Registry::<dyn PermutationScheme>::new("permutation scheme")
        .with(Arc::new(RandomPermutations))
        .with(Arc::new(ExhaustivePermutations))
}

/// Gower-centered matrix `G = J (-D^2 / 2) J` with `J = I - 11^T / n`.
fn gower(d: &DistanceMatrix) -> Vec<f64> {
    let n = d.len();
    let a: Vec<f64> = (0..n * n)
        .map(|k| -0.5 * d.get(k / n, k % n).powi(2))
        .collect();
    let row_mean: Vec<f64> = (0..n)
        .map(|i| a[i * n..(i + 1) * n].iter().sum::<f64>() / n as f64)
        .collect();
    let grand = row_mean.iter().sum::<f64>() / n as f64;
    (0..n * n)
        .map(|k| {
            let (i, j) = (k / n, k % n);
            a[k] - row_mean[i] - row_mean[j] + grand
        })
        .collect()
}

/// PERMANOVA sums of squares for one labeling, from a Gower matrix.
struct PermanovaCore {
    n: usize,
    g: Vec<f64>,
    ss_total: f64,
    groups: usize,
}

impl PermanovaCore {
    fn new(d: &DistanceMatrix, groups: usize) -> Self {
        let n = d.len();
        let g = gower(d);
        let ss_total = (0..n).map(|i| g[i * n + i]).sum();
        Self {
            n,
            g,
            ss_total,
            groups,
        }
    }

    fn ss_between(&self, labels: &[usize]) -> f64 {
        let n = self.n;
        let mut block = vec![0.0; self.groups];
        let mut size = vec![0usize; self.groups];
        for i in 0..n {
            size[labels[i]] += 1;
            let row = &self.g[i * n..(i + 1) * n];
            for j in 0..n {
                if labels[j] == labels[i] {
                    block[labels[i]] += row[j];
                }
            }
        }
        block
            .iter()
            .zip(&size)
            .filter(|(_, &s)| s > 0)
            .map(|(b, &s)| b / s as f64)
            .sum()
    }

    fn pseudo_f(&self, labels: &[usize]) -> f64 {
        let ss_b = self.ss_between(labels).max(0.0);
        let ss_w = (self.ss_total - ss_b).max(0.0);
        let df_b = (self.groups - 1) as f64;
        let df_w = (self.n - self.groups) as f64;
        if ss_b == 0.0 {
            0.0
        } else if ss_w == 0.0 {
            f64::INFINITY
        } else {
            (ss_b / df_b) / (ss_w / df_w)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PermanovaResult {
    pub pseudo_f: f64,
    pub p_value: f64,
    pub n_permutations: usize,
    pub seed: u64,
    pub scheme: &'static str,
    pub exceedances: usize,
    pub ss_total: f64,
    pub ss_within: f64,
    pub ss_between: f64,
    pub df_between: usize,
    pub df_within: usize,
}

pub fn permanova(
    d: &DistanceMatrix,
    labels: &[usize],
    n_perm: usize,
    seed: u64,
    scheme: &dyn PermutationScheme,
) -> Result<PermanovaResult> {
    let labels = check_groups(labels, d.len())?;
    let groups = group_sizes(&labels).len();
    if d.len() <= groups {
        return Err(Error::Validation(
            "PERMANOVA needs more observations than groups".into(),
        ));
    }
    let core = PermanovaCore::new(d, groups);
    let observed = core.pseudo_f(&labels);
    let ss_between = core.ss_between(&labels);
    let tally = scheme.tally(&labels, n_perm, seed, observed, &|l| core.pseudo_f(l))?;
    Ok(PermanovaResult {
        pseudo_f: observed,
        p_value: tally.p_value,
        n_permutations: tally.evaluated,
        seed,
        scheme: scheme.name(),
        exceedances: tally.exceedances,
        ss_total: core.ss_total,
        ss_within: core.ss_total - ss_between,
        ss_between,
        df_between: groups - 1,
        df_within: d.len() - groups,
    })
}

/// Per-sample silhouette widths; members of singleton clusters get 0.
pub fn silhouette_samples(d: &DistanceMatrix, labels: &[usize]) -> Vec<f64> {
    let n = d.len();
    let groups = group_sizes(labels);
    let mut out = Vec::with_capacity(n);
    let mut sums = vec![0.0; groups.len()];
    for i in 0..n {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            if j != i {
                sums[labels[j]] += d.get(i, j);
            }
        }
        let own = labels[i];
        if groups[own] <= 1 {
            out.push(0.0);
            continue;
        }
        let a = sums[own] / (groups[own] - 1) as f64;
        let b = groups
            .iter()
            .enumerate()
            .filter(|&(g, &size)| g != own && size > 0)
            .map(|(g, &size)| sums[g] / size as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        out.push(if denom > 0.0 { (b - a) / denom } else { 0.0 });
    }
    out
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SilhouetteResult {
    pub mean_silhouette: f64,
    pub per_sample: Vec<f64>,
    pub p_value: f64,
    pub n_permutations: usize,
    pub seed: u64,
    pub scheme: &'static str,
    pub exceedances: usize,
}

pub fn silhouette(
    d: &DistanceMatrix,
    labels: &[usize],
    n_perm: usize,
    seed: u64,
    scheme: &dyn PermutationScheme,
) -> Result<SilhouetteResult> {
    let labels = check_groups(labels, d.len())?;
    let per_sample = silhouette_samples(d, &labels);
    let observed = mean(&per_sample);
    let tally = scheme.tally(&labels, n_perm, seed, observed, &|l| {
        mean(&silhouette_samples(d, l))
    })?;
    Ok(SilhouetteResult {
        mean_silhouette: observed,
        per_sample,
        p_value: tally.p_value,
        n_permutations: tally.evaluated,
        seed,
        scheme: scheme.name(),
        exceedances: tally.exceedances,
    })
}
