//! Network parameters, user popularity profiles and the planted-cluster
//! profile generator.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Region;

/// Tolerance on the sum of a popularity vector.
pub const PROFILE_SUM_TOLERANCE: f64 = 1e-9;

/// Standard deviation of the per-entry log-normal noise applied to
/// generated profiles.
pub const PROFILE_NOISE_SD: f64 = 0.05;

/// Inclusive range of candidate cluster counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchRange {
    pub min: usize,
    pub max: usize,
}

impl SearchRange {
    pub fn new(min: usize, max: usize) -> Result<Self> {
        if min == 0 || min > max {
            return Err(Error::invalid(format!("search range [{min}, {max}] must satisfy 1 <= min <= max")));
        }
        Ok(SearchRange { min, max })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// SBS intensity, per km².
    pub sbs_density: f64,
    /// User intensity, per km². Only the Monte Carlo user placement uses it.
    pub user_density: f64,
    pub region: Region,
    /// Serving radius, km.
    pub radius: f64,
    /// Files per SBS cache.
    pub cache_size: usize,
    /// Files in the catalog.
    pub catalog_size: usize,
    pub search_range: SearchRange,
    /// File length. Carried for completeness; no formula uses it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file_length: Option<f64>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            sbs_density: 10.0,
            user_density: 200.0 / 36.0,
            region: Region {
                width: 6.0,
                height: 6.0,
            },
            radius: 0.5,
            cache_size: 10,
            catalog_size: 100,
            search_range: SearchRange { min: 2, max: 12 },
            file_length: None,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        self.region.validate()?;
        if !(self.sbs_density.is_finite() && self.sbs_density >= 0.0) {
            return Err(Error::invalid(format!("sbs_density must be >= 0, got {}", self.sbs_density)));
        }
        if !(self.user_density.is_finite() && self.user_density >= 0.0) {
            return Err(Error::invalid(format!("user_density must be >= 0, got {}", self.user_density)));
        }
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return Err(Error::invalid(format!("radius must be > 0, got {}", self.radius)));
        }
        if self.cache_size == 0 || self.cache_size > self.catalog_size {
            return Err(Error::invalid(format!(
                "cache size {} must satisfy 1 <= M <= F = {}",
                self.cache_size, self.catalog_size
            )));
        }
        if self.search_range.min < 2 || self.search_range.min > self.search_range.max {
            return Err(Error::invalid(format!(
                "search range [{}, {}] must satisfy 2 <= min <= max",
                self.search_range.min, self.search_range.max
            )));
        }
        Ok(())
    }

    /// Mean number of SBSs in a disk of the serving radius: `λ_s π R²`.
    pub fn footprint(&self) -> f64 {
        footprint(self.sbs_density, self.radius)
    }
}

/// `λ_s π R²`, the expected SBS count in a serving disk.
pub fn footprint(sbs_density: f64, radius: f64) -> f64 {
    sbs_density * std::f64::consts::PI * radius * radius
}

/// One user's request distribution over the catalog.
#[derive(Debug, Clone, PartialEq)]
pub struct PopularityProfile {
    pub user_id: usize,
    pub probs: Vec<f64>,
}

impl PopularityProfile {
    pub fn new(user_id: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Empty("popularity vector"));
        }
        if let Some((i, p)) = probs.iter().enumerate().find(|(_, p)| !p.is_finite() || **p < 0.0) {
            return Err(Error::invalid(format!("user {user_id}: entry {i} is {p}")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > PROFILE_SUM_TOLERANCE {
            return Err(Error::invalid(format!("user {user_id}: probabilities sum to {sum}")));
        }
        Ok(PopularityProfile { user_id, probs })
    }

    pub fn catalog_size(&self) -> usize {
        self.probs.len()
    }
}

/// Catalog size shared by all profiles.
pub fn catalog_size(profiles: &[PopularityProfile]) -> Result<usize> {
    let first = profiles.first().ok_or(Error::Empty("profile list"))?;
    let f = first.catalog_size();
    for p in profiles {
        if p.catalog_size() != f {
            return Err(Error::DimensionMismatch {
                context: "profile catalog size",
                expected: f,
                actual: p.catalog_size(),
            });
        }
    }
    Ok(f)
}

/// Ground truth used to synthesize profiles with cluster structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedScenario {
    /// Preferred file subset of each planted cluster.
    pub preferred: Vec<Vec<usize>>,
    pub zipf_exponent: f64,
    /// Weight β on the preferred-subset component.
    pub bias: f64,
    /// Planted cluster of each user; drawn uniformly when absent.
    #[serde(default)]
    pub membership: Option<Vec<usize>>,
}

impl PlantedScenario {
    /// `clusters` disjoint preferred subsets of `subset_size` consecutive files.
    pub fn disjoint(clusters: usize, subset_size: usize, catalog_size: usize, zipf_exponent: f64, bias: f64) -> Result<Self> {
        if clusters == 0 || subset_size == 0 {
            return Err(Error::invalid("planted scenario needs >= 1 cluster and a non-empty subset"));
        }
        if clusters * subset_size > catalog_size {
            return Err(Error::invalid(format!(
                "{clusters} disjoint subsets of {subset_size} files exceed the catalog of {catalog_size}"
            )));
        }
        Ok(PlantedScenario {
            preferred: (0..clusters)
                .map(|c| (c * subset_size..(c + 1) * subset_size).collect())
                .collect(),
            zipf_exponent,
            bias,
            membership: None,
        })
    }

    pub fn cluster_count(&self) -> usize {
        self.preferred.len()
    }

    fn validate(&self, catalog_size: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.bias) {
            return Err(Error::invalid(format!("bias must lie in [0, 1], got {}", self.bias)));
        }
        if !self.zipf_exponent.is_finite() || self.zipf_exponent < 0.0 {
            return Err(Error::invalid(format!("zipf exponent must be >= 0, got {}", self.zipf_exponent)));
        }
        if self.preferred.is_empty() {
            return Err(Error::Empty("planted clusters"));
        }
        for (c, subset) in self.preferred.iter().enumerate() {
            if subset.is_empty() {
                return Err(Error::invalid(format!("planted cluster {c} has an empty preferred subset")));
            }
            if let Some(&f) = subset.iter().find(|&&f| f >= catalog_size) {
                return Err(Error::invalid(format!("planted cluster {c}: file {f} outside catalog of {catalog_size}")));
            }
        }
        Ok(())
    }
}

/// Generated profiles together with the planted membership that produced them.
#[derive(Debug, Clone)]
pub struct PlantedProfiles {
    pub profiles: Vec<PopularityProfile>,
    pub membership: Vec<usize>,
}

/// Zipf weights `r^-s / H` over ranks `1..=n`.
pub fn zipf_weights(n: usize, exponent: f64) -> Vec<f64> {
    let raw: Vec<f64> = (1..=n).map(|r| (r as f64).powf(-exponent)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Synthesize `n_users` profiles: β·Zipf over the user's preferred subset plus
/// (1−β)·uniform over the catalog, then per-entry `exp(ε)` noise and
/// renormalization.
pub fn generate_profiles(scenario: &PlantedScenario, n_users: usize, catalog_size: usize, seed: u64) -> Result<PlantedProfiles> {
    if n_users == 0 {
        return Err(Error::invalid("n_users must be >= 1"));
    }
    if catalog_size == 0 {
        return Err(Error::invalid("catalog must contain at least one file"));
    }
    scenario.validate(catalog_size)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = scenario.cluster_count();
    let membership = match &scenario.membership {
        Some(m) => {
            if m.len() != n_users {
                return Err(Error::DimensionMismatch {
                    context: "planted membership",
                    expected: n_users,
                    actual: m.len(),
                });
            }
            if let Some(&c) = m.iter().find(|&&c| c >= k) {
                return Err(Error::invalid(format!("membership refers to cluster {c}, only {k} planted")));
            }
            m.clone()
        }
        None => (0..n_users).map(|_| rng.random_range(0..k)).collect(),
    };

    // Clean (noise-free) mixture per planted cluster.
    let uniform = (1.0 - scenario.bias) / catalog_size as f64;
    let templates: Vec<Vec<f64>> = scenario
        .preferred
        .iter()
        .map(|subset| {
            let mut p = vec![uniform; catalog_size];
            for (&file, w) in subset.iter().zip(zipf_weights(subset.len(), scenario.zipf_exponent)) {
                p[file] += scenario.bias * w;
            }
            p
        })
        .collect();

    let noise = Normal::new(0.0, PROFILE_NOISE_SD).expect("valid normal");
    let profiles = membership
        .iter()
        .enumerate()
        .map(|(u, &c)| {
            let mut probs: Vec<f64> = templates[c].iter().map(|&p| p * noise.sample(&mut rng).exp()).collect();
            let total: f64 = probs.iter().sum();
            probs.iter_mut().for_each(|p| *p /= total);
            PopularityProfile { user_id: u, probs }
        })
        .collect();

    Ok(PlantedProfiles { profiles, membership })
}

/// Indices of the `m` largest entries, ties going to the lower index.
/// The result is ordered by decreasing value.
pub fn top_m(values: &[f64], m: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(m);
    idx
}

/// Element-wise mean of a set of profiles.
pub fn mean_profile<'a>(profiles: impl IntoIterator<Item = &'a PopularityProfile>) -> Result<Vec<f64>> {
    let mut iter = profiles.into_iter();
    let first = iter.next().ok_or(Error::Empty("profile subset"))?;
    let mut sum = first.probs.clone();
    let mut n = 1usize;
    for p in iter {
        if p.probs.len() != sum.len() {
            return Err(Error::DimensionMismatch {
                context: "profile catalog size",
                expected: sum.len(),
                actual: p.probs.len(),
            });
        }
        sum.iter_mut().zip(&p.probs).for_each(|(s, v)| *s += v);
        n += 1;
    }
    sum.iter_mut().for_each(|s| *s /= n as f64);
    Ok(sum)
}

/// The `m` files with the highest mean popularity over `profiles`.
pub fn cluster_top_m<'a>(profiles: impl IntoIterator<Item = &'a PopularityProfile>, m: usize) -> Result<Vec<usize>> {
    let mean = mean_profile(profiles)?;
    if m > mean.len() {
        return Err(Error::invalid(format!("cache size {m} exceeds catalog of {}", mean.len())));
    }
    Ok(top_m(&mean, m))
}

/// Write profiles as a CSV matrix: a header of file ids, one row per user.
pub fn write_profiles_csv<W: Write>(profiles: &[PopularityProfile], writer: W) -> Result<()> {
    let f = catalog_size(profiles)?;
    let mut w = csv::Writer::from_writer(writer);
    w.write_record((0..f).map(|i| i.to_string()))?;
    for p in profiles {
        w.write_record(p.probs.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Read a profile matrix written by [`write_profiles_csv`] (or produced
/// externally). Row `i` becomes user `i`; every row must be a distribution.
pub fn read_profiles_csv<R: Read>(reader: R) -> Result<Vec<PopularityProfile>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let f = r.headers()?.len();
    if f == 0 {
        return Err(Error::Format {
            what: "profile csv",
            detail: "header has no file columns".into(),
        });
    }
    let mut out = Vec::new();
    for (u, record) in r.records().enumerate() {
        let record = record?;
        if record.len() != f {
            return Err(Error::DimensionMismatch {
                context: "profile csv row",
                expected: f,
                actual: record.len(),
            });
        }
        let probs = record
            .iter()
            .map(|s| {
                s.trim().parse::<f64>().map_err(|e| Error::Format {
                    what: "profile csv",
                    detail: format!("row {u}: {s:?}: {e}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(PopularityProfile::new(u, probs)?);
    }
    if out.is_empty() {
        return Err(Error::Empty("profile csv has no rows"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(id: usize, probs: &[f64]) -> PopularityProfile {
        PopularityProfile::new(id, probs.to_vec()).unwrap()
    }

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn config_validation() {
        let mut cfg = NetworkConfig::default();
        cfg.validate().unwrap();
        cfg.cache_size = 0;
        assert!(cfg.validate().is_err());
        cfg.cache_size = 101;
        assert!(cfg.validate().is_err());
        cfg = NetworkConfig::default();
        cfg.search_range = SearchRange { min: 1, max: 4 };
        assert!(cfg.validate().is_err());
        cfg.search_range = SearchRange { min: 5, max: 4 };
        assert!(cfg.validate().is_err());
        cfg = NetworkConfig::default();
        cfg.radius = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn profile_invariants_enforced() {
        assert!(PopularityProfile::new(0, vec![0.5, 0.5]).is_ok());
        assert!(PopularityProfile::new(0, vec![0.6, 0.5]).is_err());
        assert!(PopularityProfile::new(0, vec![1.1, -0.1]).is_err());
        assert!(PopularityProfile::new(0, vec![]).is_err());
    }

    #[test]
    fn generator_rejects_bad_scenarios() {
        let mut s = PlantedScenario::disjoint(2, 5, 20, 1.0, 0.9).unwrap();
        s.bias = 1.5;
        assert!(generate_profiles(&s, 10, 20, 0).is_err());
        s.bias = -0.1;
        assert!(generate_profiles(&s, 10, 20, 0).is_err());
        s.bias = 0.5;
        s.preferred[1].clear();
        assert!(generate_profiles(&s, 10, 20, 0).is_err());
        let s = PlantedScenario::disjoint(2, 5, 20, 1.0, 0.9).unwrap();
        assert!(generate_profiles(&s, 0, 20, 0).is_err());
        assert!(PlantedScenario::disjoint(5, 5, 20, 1.0, 0.9).is_err());
    }

    #[test]
    fn generated_profiles_are_distributions() {
        let s = PlantedScenario::disjoint(4, 10, 100, 0.8, 0.9).unwrap();
        let out = generate_profiles(&s, 150, 100, 7).unwrap();
        assert_eq!(out.profiles.len(), 150);
        for p in &out.profiles {
            assert!(p.probs.iter().all(|&v| v >= 0.0));
            assert!((p.probs.iter().sum::<f64>() - 1.0).abs() < PROFILE_SUM_TOLERANCE);
        }
        let again = generate_profiles(&s, 150, 100, 7).unwrap();
        assert_eq!(out.profiles, again.profiles);
    }

    #[test]
    fn full_bias_flat_zipf_is_uniform_on_subset_before_noise() {
        // With β = 1 and exponent 0 the template is 1/M on the subset; the
        // log-normal noise keeps support and only perturbs magnitudes.
        let s = PlantedScenario::disjoint(2, 10, 40, 0.0, 1.0).unwrap();
        let out = generate_profiles(&s, 20, 40, 1).unwrap();
        for (p, &c) in out.profiles.iter().zip(&out.membership) {
            for (f, &v) in p.probs.iter().enumerate() {
                let in_subset = s.preferred[c].contains(&f);
                if in_subset {
                    assert!((v - 0.1).abs() < 0.05, "entry {v}");
                } else {
                    assert_eq!(v, 0.0);
                }
            }
        }
        let w = zipf_weights(10, 0.0);
        assert!(w.iter().all(|&x| (x - 0.1).abs() < 1e-15));
    }

    #[test]
    fn zero_bias_profiles_have_no_structure() {
        let s = PlantedScenario::disjoint(4, 10, 100, 1.0, 0.0).unwrap();
        let out = generate_profiles(&s, 40, 100, 3).unwrap();
        for p in &out.profiles {
            let max = p.probs.iter().cloned().fold(f64::MIN, f64::max);
            let min = p.probs.iter().cloned().fold(f64::MAX, f64::min);
            // Only the ±5% log-normal noise separates entries.
            assert!(max / min < (8.0 * PROFILE_NOISE_SD).exp() * 1.5);
        }
    }

    #[test]
    fn planted_clusters_correlate_within() {
        let s = PlantedScenario::disjoint(4, 10, 100, 0.8, 0.9).unwrap();
        let out = generate_profiles(&s, 80, 100, 21).unwrap();
        let n = out.profiles.len();
        let mut intra = Vec::new();
        let mut inter = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                let r = pearson(&out.profiles[a].probs, &out.profiles[b].probs);
                if out.membership[a] == out.membership[b] {
                    intra.push(r);
                } else {
                    inter.push(r);
                }
            }
        }
        let max_inter = inter.iter().cloned().fold(f64::MIN, f64::max);
        let ordered = intra.iter().filter(|&&r| r > max_inter).count();
        assert!(ordered as f64 >= 0.99 * intra.len() as f64);
    }

    #[test]
    fn top_m_cases() {
        let one = profile(0, &[0.4, 0.3, 0.2, 0.1]);
        assert_eq!(cluster_top_m([&one], 2).unwrap(), vec![0, 1]);

        // Means: [0.35, 0.25, 0.25, 0.15] -> file 0, then tie 1/2 -> 1.
        let a = profile(0, &[0.6, 0.3, 0.1, 0.0]);
        let b = profile(1, &[0.1, 0.2, 0.4, 0.3]);
        assert_eq!(cluster_top_m([&a, &b], 2).unwrap(), vec![0, 1]);
        assert_eq!(cluster_top_m([&a, &b], 3).unwrap(), vec![0, 1, 2]);

        let flat = profile(0, &[0.25; 4]);
        assert_eq!(cluster_top_m([&flat], 2).unwrap(), vec![0, 1]);

        let mut all = cluster_top_m([&a, &b], 4).unwrap();
        all.sort();
        assert_eq!(all, vec![0, 1, 2, 3]);
        assert!(cluster_top_m([&a], 5).is_err());
        assert!(cluster_top_m(std::iter::empty::<&PopularityProfile>(), 1).is_err());
    }

    #[test]
    fn csv_roundtrip_and_errors() {
        let s = PlantedScenario::disjoint(2, 3, 8, 1.0, 0.7).unwrap();
        let out = generate_profiles(&s, 5, 8, 2).unwrap();
        let mut buf = Vec::new();
        write_profiles_csv(&out.profiles, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("0,1,2,3,4,5,6,7\n"));
        let back = read_profiles_csv(buf.as_slice()).unwrap();
        assert_eq!(back, out.profiles);

        assert!(read_profiles_csv("0,1\n0.5,0.6\n".as_bytes()).is_err());
        assert!(read_profiles_csv("0,1\n0.5,x\n".as_bytes()).is_err());
        assert!(read_profiles_csv("0,1\n".as_bytes()).is_err());
    }
}
