//! Adaptive user clustering by popularity profile.
//!
//! Users are assigned to the centroid they correlate with best, centroids are
//! recomputed as member means, and the model grows one cluster at a time by
//! seeding a new centroid at the most atypical user of the most dispersed
//! cluster. Each candidate cluster count is scored with AIC and the best
//! model is kept.

use std::io::Write;

use log::warn;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::network::{catalog_size, PopularityProfile, SearchRange};
use crate::selection::{aic, select_model, LikelihoodForm, ModelScore};

/// Maximum assign/update rounds per convergence run.
pub const MAX_ITERATIONS: usize = 100;

/// Step used when the search range is extended past its upper bound.
pub const EXTENSION_STEP: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    /// Cluster of each user.
    pub assignment: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub counts: Vec<usize>,
    /// Mean squared distance of members to their centroid.
    pub variances: Vec<f64>,
    /// Centroid updates performed by the run that produced this model.
    pub iterations: usize,
    pub converged: bool,
}

impl ClusterModel {
    pub fn cluster_count(&self) -> usize {
        self.centroids.len()
    }

    pub fn catalog_size(&self) -> usize {
        self.centroids.first().map_or(0, Vec::len)
    }

    pub fn members(&self, cluster: usize) -> impl Iterator<Item = usize> + '_ {
        self.assignment
            .iter()
            .enumerate()
            .filter(move |(_, &c)| c == cluster)
            .map(|(u, _)| u)
    }

    /// Sum of squared distances of users to their own centroid.
    pub fn within_sum_of_squares(&self, profiles: &[PopularityProfile]) -> f64 {
        within_sum_of_squares(profiles, &self.assignment, &self.centroids)
    }
}

pub fn within_sum_of_squares(profiles: &[PopularityProfile], assignment: &[usize], centroids: &[Vec<f64>]) -> f64 {
    profiles
        .iter()
        .zip(assignment)
        .map(|(p, &c)| squared_distance(&p.probs, &centroids[c]))
        .sum()
}

#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Pearson correlation; `None` when either vector is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let dx = x - ma;
        let dy = y - mb;
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    if va == 0.0 || vb == 0.0 {
        None
    } else {
        Some(cov / (va * vb).sqrt())
    }
}

/// Assignment score of a user against a centroid. Falls back to negative
/// Euclidean distance when correlation is undefined.
pub fn affinity(profile: &[f64], centroid: &[f64]) -> f64 {
    pearson(profile, centroid).unwrap_or_else(|| -squared_distance(profile, centroid).sqrt())
}

fn best_centroid(profile: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (k, c) in centroids.iter().enumerate() {
        let s = affinity(profile, c);
        if s > best_score {
            best = k;
            best_score = s;
        }
    }
    best
}

/// Map every user to the centroid of highest affinity; ties go to the
/// lowest cluster index.
pub fn assign_users(profiles: &[PopularityProfile], centroids: &[Vec<f64>]) -> Result<Vec<usize>> {
    if centroids.is_empty() {
        return Err(Error::Empty("centroid list"));
    }
    let f = catalog_size(profiles)?;
    if let Some(c) = centroids.iter().find(|c| c.len() != f) {
        return Err(Error::DimensionMismatch {
            context: "centroid length",
            expected: f,
            actual: c.len(),
        });
    }
    Ok(profiles.par_iter().map(|p| best_centroid(&p.probs, centroids)).collect())
}

fn member_means(profiles: &[PopularityProfile], assignment: &[usize], k: usize, f: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut sums = vec![vec![0.0; f]; k];
    let mut counts = vec![0usize; k];
    for (p, &c) in profiles.iter().zip(assignment) {
        counts[c] += 1;
        sums[c].iter_mut().zip(&p.probs).for_each(|(s, v)| *s += v);
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        if n > 0 {
            s.iter_mut().for_each(|v| *v /= n as f64);
        }
    }
    (sums, counts)
}

/// Recompute centroids, counts and variances for `k` clusters.
///
/// An empty cluster takes over the user farthest from its own centroid
/// among clusters that can spare a member. Requires at least `k` users.
pub fn update_centroids(profiles: &[PopularityProfile], assignment: &[usize], k: usize) -> Result<ClusterModel> {
    let f = catalog_size(profiles)?;
    if assignment.len() != profiles.len() {
        return Err(Error::DimensionMismatch {
            context: "assignment length",
            expected: profiles.len(),
            actual: assignment.len(),
        });
    }
    if k == 0 || k > profiles.len() {
        return Err(Error::invalid(format!("cannot form {k} clusters from {} users", profiles.len())));
    }
    if let Some(&c) = assignment.iter().find(|&&c| c >= k) {
        return Err(Error::invalid(format!("assignment refers to cluster {c} but k = {k}")));
    }

    let mut assignment = assignment.to_vec();
    let (mut centroids, mut counts) = member_means(profiles, &assignment, k, f);
    while let Some(empty) = counts.iter().position(|&n| n == 0) {
        let donor = profiles
            .iter()
            .enumerate()
            .filter(|(u, _)| counts[assignment[*u]] > 1)
            .map(|(u, p)| (u, squared_distance(&p.probs, &centroids[assignment[u]])))
            .fold(None, |best: Option<(usize, f64)>, (u, d)| match best {
                Some((_, bd)) if bd >= d => best,
                _ => Some((u, d)),
            })
            .map(|(u, _)| u)
            .expect("k <= users guarantees a cluster with a spare member");
        assignment[donor] = empty;
        (centroids, counts) = member_means(profiles, &assignment, k, f);
    }

    let mut ss = vec![0.0; k];
    for (p, &c) in profiles.iter().zip(&assignment) {
        ss[c] += squared_distance(&p.probs, &centroids[c]);
    }
    let variances = ss.iter().zip(&counts).map(|(s, &n)| s / n as f64).collect();

    Ok(ClusterModel {
        assignment,
        centroids,
        counts,
        variances,
        iterations: 0,
        converged: false,
    })
}

/// Alternate assignment and centroid updates until the assignment repeats
/// or [`MAX_ITERATIONS`] updates have run. Hitting the cap is reported via
/// `converged = false`, not as an error.
pub fn iterate_to_convergence(profiles: &[PopularityProfile], initial_centroids: &[Vec<f64>]) -> Result<ClusterModel> {
    let k = initial_centroids.len();
    let mut assignment = assign_users(profiles, initial_centroids)?;
    let mut model = update_centroids(profiles, &assignment, k)?;
    model.iterations = 1;
    loop {
        assignment = model.assignment.clone();
        let next = assign_users(profiles, &model.centroids)?;
        if next == assignment {
            model.converged = true;
            return Ok(model);
        }
        if model.iterations >= MAX_ITERATIONS {
            warn!("clustering with {k} centroids stopped at the {MAX_ITERATIONS}-iteration cap");
            return Ok(model);
        }
        let iterations = model.iterations + 1;
        model = update_centroids(profiles, &next, k)?;
        model.iterations = iterations;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    /// Previous centroids followed by the new one.
    pub centroids: Vec<Vec<f64>>,
    pub split_cluster: usize,
    /// User whose profile seeds the new centroid.
    pub seed_user: usize,
    /// Set when every cluster had zero variance.
    pub degenerate: bool,
}

/// Add one centroid at the user farthest from its centroid inside the
/// cluster of greatest variance.
pub fn split_worst_cluster(model: &ClusterModel, profiles: &[PopularityProfile]) -> Result<Split> {
    if model.assignment.len() != profiles.len() {
        return Err(Error::DimensionMismatch {
            context: "model assignment length",
            expected: profiles.len(),
            actual: model.assignment.len(),
        });
    }
    let degenerate = model.variances.iter().all(|&v| v == 0.0);
    let target = if degenerate {
        argmax_first(model.counts.iter().map(|&n| n as f64))
    } else {
        argmax_first(model.variances.iter().copied())
    };

    let centroid = &model.centroids[target];
    let mut members: Vec<(usize, f64)> = model
        .members(target)
        .map(|u| (u, squared_distance(&profiles[u].probs, centroid)))
        .collect();
    // Farthest first, lower user id on ties.
    members.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

    let is_centroid = |u: usize| model.centroids.iter().any(|c| c == &profiles[u].probs);
    let seed_user = members
        .iter()
        .map(|&(u, _)| u)
        .find(|&u| !is_centroid(u))
        .or_else(|| (0..profiles.len()).find(|&u| !is_centroid(u)))
        .or_else(|| members.first().map(|&(u, _)| u))
        .ok_or(Error::Empty("cluster selected for splitting"))?;

    let mut centroids = model.centroids.clone();
    centroids.push(profiles[seed_user].probs.clone());
    Ok(Split {
        centroids,
        split_cluster: target,
        seed_user,
        degenerate,
    })
}

fn argmax_first(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusteringOptions {
    pub likelihood: LikelihoodForm,
    /// Keep growing past the upper bound while AIC is still falling there.
    pub extend_search: bool,
}

impl Default for ClusteringOptions {
    fn default() -> Self {
        ClusteringOptions {
            likelihood: LikelihoodForm::Standard,
            extend_search: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdaptiveClustering {
    pub best: ClusterModel,
    pub best_score: ModelScore,
    /// Score of every cluster count visited, in increasing order.
    pub trace: Vec<ModelScore>,
    /// Upper bound actually searched (differs from the requested one after extension).
    pub searched_max: usize,
    pub warnings: Vec<String>,
}

/// Grow a clustering from `range.min` to `range.max` centroids and keep the
/// model with the lowest AIC.
pub fn adaptive_cluster(
    profiles: &[PopularityProfile],
    range: SearchRange,
    seed: u64,
    options: ClusteringOptions,
) -> Result<AdaptiveClustering> {
    catalog_size(profiles)?;
    let n = profiles.len();
    if range.min == 0 || range.min > range.max {
        return Err(Error::invalid(format!("search range [{}, {}] is empty", range.min, range.max)));
    }
    if range.max > n {
        return Err(Error::invalid(format!("search upper bound {} exceeds user count {n}", range.max)));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids: Vec<Vec<f64>> = sample(&mut rng, n, range.min)
        .into_iter()
        .map(|u| profiles[u].probs.clone())
        .collect();

    let cap = n.min(4 * range.max);
    let mut upper = range.max;
    let mut trace: Vec<ModelScore> = Vec::new();
    let mut best: Option<(ClusterModel, ModelScore)> = None;
    let mut warnings = Vec::new();
    let mut i = range.min;

    loop {
        while i <= upper {
            let model = iterate_to_convergence(profiles, &centroids)?;
            if !model.converged {
                warnings.push(format!("{i} clusters: assignment still changing after {MAX_ITERATIONS} iterations"));
            }
            let score = aic(&model, profiles, options.likelihood)?;
            if !score.degenerate_clusters.is_empty() {
                warnings.push(format!(
                    "{i} clusters: degenerate variance in clusters {:?}",
                    score.degenerate_clusters
                ));
            }
            let better = best.as_ref().is_none_or(|(_, s)| score.aic < s.aic);
            trace.push(score.clone());
            if i < cap {
                let split = split_worst_cluster(&model, profiles)?;
                if split.degenerate {
                    warnings.push(format!("{i} clusters: all variances zero, split largest cluster"));
                }
                centroids = split.centroids;
            }
            if better {
                best = Some((model, score));
            }
            i += 1;
        }

        let still_falling = trace.len() >= 2 && {
            let last = &trace[trace.len() - 1];
            let prev = &trace[trace.len() - 2];
            last.aic < prev.aic && select_model(&trace)?.cluster_count == last.cluster_count
        };
        if !(options.extend_search && still_falling) {
            break;
        }
        if upper >= cap {
            let msg = format!("AIC still decreasing at {upper} clusters; search stopped at the extension cap");
            warn!("{msg}");
            warnings.push(msg);
            break;
        }
        upper = (upper + EXTENSION_STEP).min(cap);
    }

    let (best, best_score) = best.expect("search range is non-empty");
    Ok(AdaptiveClustering {
        best,
        best_score,
        trace,
        searched_max: upper,
        warnings,
    })
}

/// Chance-corrected agreement between two partitions of the same users.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "partitions must cover the same users");
    let n = a.len();
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0u64; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let pairs = |m: u64| (m * m.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = table.iter().flatten().map(|&m| pairs(m)).sum();
    let rows: f64 = table.iter().map(|r| pairs(r.iter().sum())).sum();
    let cols: f64 = (0..kb).map(|j| pairs(table.iter().map(|r| r[j]).sum())).sum();
    let total = pairs(n as u64);
    let expected = rows * cols / total;
    let max = (rows + cols) / 2.0;
    if max == expected {
        1.0
    } else {
        (index - expected) / (max - expected)
    }
}

/// Write `user_id,cluster_id` rows.
pub fn write_assignment_csv<W: Write>(model: &ClusterModel, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["user_id", "cluster_id"])?;
    for (u, c) in model.assignment.iter().enumerate() {
        w.write_record([u.to_string(), c.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Read `user_id,cluster_id` rows back into an assignment vector.
pub fn read_assignment_csv<R: std::io::Read>(reader: R) -> Result<Vec<usize>> {
    let mut r = csv::Reader::from_reader(reader);
    let headers = r.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["user_id", "cluster_id"] {
        return Err(Error::Format {
            what: "cluster csv",
            detail: format!("expected header user_id,cluster_id, got {:?}", headers),
        });
    }
    let mut rows: Vec<(usize, usize)> = Vec::new();
    for record in r.records() {
        let record = record?;
        let parse = |i: usize| {
            record.get(i).unwrap_or("").trim().parse::<usize>().map_err(|e| Error::Format {
                what: "cluster csv",
                detail: format!("{record:?}: {e}"),
            })
        };
        rows.push((parse(0)?, parse(1)?));
    }
    rows.sort_unstable();
    if rows.iter().enumerate().any(|(i, &(u, _))| u != i) {
        return Err(Error::Format {
            what: "cluster csv",
            detail: "user ids must be 0..n without gaps".into(),
        });
    }
    Ok(rows.into_iter().map(|(_, c)| c).collect())
}

/// Write the centroid matrix: `cluster_id` followed by one column per file.
pub fn write_centroids_csv<W: Write>(model: &ClusterModel, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let f = model.catalog_size();
    w.write_record(std::iter::once("cluster_id".to_string()).chain((0..f).map(|i| i.to_string())))?;
    for (k, c) in model.centroids.iter().enumerate() {
        w.write_record(std::iter::once(k.to_string()).chain(c.iter().map(|v| v.to_string())))?;
    }
    w.flush()?;
    Ok(())
}
