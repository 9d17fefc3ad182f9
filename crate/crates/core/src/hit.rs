//! Cache-hit probability: the analytic expression, the most-popular
//! baseline, and a Monte Carlo estimator over PPP realizations.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{poisson_count, sample_ppp_with, GridIndex, Point};
use crate::network::{catalog_size, footprint, mean_profile, top_m, NetworkConfig, PopularityProfile};

/// Normal quantile for a two-sided 95% interval.
pub const Z_95: f64 = 1.959_963_984_540_054;

/// Retries allowed for a realization that places no users.
pub const MAX_EMPTY_RETRIES: usize = 1000;

/// What each cluster's SBSs cache and which share of SBSs serves it.
#[derive(Debug, Clone, PartialEq)]
pub struct CachePlacement {
    pub file_sets: Vec<Vec<usize>>,
    pub fractions: Vec<f64>,
}

impl CachePlacement {
    pub fn new(file_sets: Vec<Vec<usize>>, fractions: Vec<f64>) -> Result<Self> {
        if file_sets.len() != fractions.len() {
            return Err(Error::DimensionMismatch {
                context: "placement fractions",
                expected: file_sets.len(),
                actual: fractions.len(),
            });
        }
        if file_sets.is_empty() {
            return Err(Error::Empty("cache placement"));
        }
        if let Some(x) = fractions.iter().find(|x| !x.is_finite() || **x < 0.0) {
            return Err(Error::invalid(format!("fraction {x} is negative or not finite")));
        }
        let total: f64 = fractions.iter().sum();
        if total > 1.0 + 1e-9 {
            return Err(Error::invalid(format!("fractions sum to {total} > 1")));
        }
        Ok(CachePlacement { file_sets, fractions })
    }

    /// Single cluster caching `files` on every SBS.
    pub fn single(files: Vec<usize>) -> Self {
        CachePlacement {
            file_sets: vec![files],
            fractions: vec![1.0],
        }
    }

    /// Sum of pairwise intersection sizes between file sets.
    pub fn overlap(&self) -> usize {
        let mut total = 0;
        for a in 0..self.file_sets.len() {
            for b in a + 1..self.file_sets.len() {
                total += self.file_sets[a].iter().filter(|f| self.file_sets[b].contains(f)).count();
            }
        }
        total
    }

    /// Per file, the total SBS fraction caching it.
    pub fn coverage(&self, catalog_size: usize) -> Result<Vec<f64>> {
        let mut cov = vec![0.0; catalog_size];
        for (files, &x) in self.file_sets.iter().zip(&self.fractions) {
            for &f in files {
                *cov.get_mut(f)
                    .ok_or_else(|| Error::invalid(format!("file {f} outside catalog of {catalog_size}")))? += x;
            }
        }
        Ok(cov)
    }

    fn check(&self, f: usize) -> Result<()> {
        self.coverage(f).map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticHit {
    /// Printed sum clamped to `[0, 1]`.
    pub probability: f64,
    pub unclamped: f64,
    /// Sum of pairwise file-set intersections; non-zero means the sum
    /// double-counts some requests.
    pub overlap: usize,
}

impl AnalyticHit {
    pub fn overlap_warning(&self) -> bool {
        self.overlap > 0
    }
}

/// `(1/N_u) Σ_k Σ_u (Σ_{i∈Δ_k} p_iu)(1 − e^{−x_k λ_s π R²})`, evaluated as
/// written and clamped to `[0, 1]`.
pub fn analytic_hit(profiles: &[PopularityProfile], placement: &CachePlacement, sbs_density: f64, radius: f64) -> Result<AnalyticHit> {
    let f = catalog_size(profiles)?;
    placement.check(f)?;
    let lambda = footprint(sbs_density, radius);
    let n = profiles.len() as f64;
    let mut total = 0.0;
    for (files, &x) in placement.file_sets.iter().zip(&placement.fractions) {
        let mass: f64 = profiles.iter().map(|p| files.iter().map(|&i| p.probs[i]).sum::<f64>()).sum();
        total += mass * -(-x * lambda).exp_m1();
    }
    let unclamped = total / n;
    Ok(AnalyticHit {
        probability: unclamped.clamp(0.0, 1.0),
        unclamped,
        overlap: placement.overlap(),
    })
}

/// Hit probability of the thinning protocol itself:
/// `(1/N_u) Σ_u Σ_i p_iu (1 − e^{−c_i λ_s π R²})` with `c_i` the total
/// fraction of SBSs caching file `i`. Equals [`analytic_hit`] when the file
/// sets are disjoint.
pub fn analytic_hit_exact(profiles: &[PopularityProfile], placement: &CachePlacement, sbs_density: f64, radius: f64) -> Result<f64> {
    let f = catalog_size(profiles)?;
    let lambda = footprint(sbs_density, radius);
    let file_hit: Vec<f64> = placement.coverage(f)?.iter().map(|c| -(-c * lambda).exp_m1()).collect();
    let total: f64 = profiles
        .iter()
        .map(|p| p.probs.iter().zip(&file_hit).map(|(a, b)| a * b).sum::<f64>())
        .sum();
    Ok(total / profiles.len() as f64)
}

/// Files cached by every SBS when clustering is not used: the top `m` of
/// the network-wide mean profile.
pub fn baseline_files(profiles: &[PopularityProfile], m: usize) -> Result<Vec<usize>> {
    let mean = mean_profile(profiles)?;
    if m == 0 || m > mean.len() {
        return Err(Error::invalid(format!("cache size {m} must lie in 1..={}", mean.len())));
    }
    Ok(top_m(&mean, m))
}

/// Average mass of the baseline file set: the limit of the baseline hit
/// probability as SBS density grows.
pub fn baseline_saturation(profiles: &[PopularityProfile], m: usize) -> Result<f64> {
    let files = baseline_files(profiles, m)?;
    Ok(crate::allocation::cluster_mass(profiles, &files)? / profiles.len() as f64)
}

/// Hit probability when all SBSs cache the globally most popular `m` files.
pub fn analytic_hit_baseline(profiles: &[PopularityProfile], m: usize, sbs_density: f64, radius: f64) -> Result<f64> {
    let saturation = baseline_saturation(profiles, m)?;
    Ok(saturation * -(-footprint(sbs_density, radius)).exp_m1())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloEstimate {
    pub estimate: f64,
    pub halfwidth_95: f64,
    /// User requests simulated across all realizations.
    pub requests: u64,
    pub realizations: usize,
    /// Realizations redrawn because they placed no users.
    pub resampled: usize,
    /// True when the serving disk does not fit inside the region and users
    /// were placed over the whole region.
    pub edge_effects: bool,
}

/// Window in which users are placed: the region shrunk by the radius on
/// every side, so every serving disk lies inside the SBS region.
fn user_window(config: &NetworkConfig) -> (Point, Point, bool) {
    let r = config.radius;
    let w = config.region.width;
    let h = config.region.height;
    if 2.0 * r < w && 2.0 * r < h {
        (Point::new(r, r), Point::new(w - r, h - r), false)
    } else {
        (Point::new(0.0, 0.0), Point::new(w, h), true)
    }
}

/// Expected user requests per realization for `config`.
pub fn expected_requests_per_realization(config: &NetworkConfig) -> f64 {
    let (lo, hi, _) = user_window(config);
    config.user_density * (hi.x - lo.x) * (hi.y - lo.y)
}

fn cumulative(probs: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    probs
        .iter()
        .map(|p| {
            acc += p;
            acc
        })
        .collect()
}

fn draw_index(cdf: &[f64], u: f64) -> usize {
    let target = u * cdf[cdf.len() - 1];
    cdf.partition_point(|&c| c <= target).min(cdf.len() - 1)
}

/// Simulate `realizations` independent network snapshots.
///
/// Each snapshot draws the SBS PPP over the region, labels each SBS with
/// cluster `k` with probability `x_k` (or leaves it idle), places a PPP of
/// users inside the radius-shrunk window, gives each user a uniformly drawn
/// profile and one request from it, and records a hit when an SBS within
/// the radius caches the requested file. Snapshot `t` uses its own stream
/// of `seed`, so the result does not depend on the worker count.
///
/// The interval treats snapshots as the independent units (ratio
/// estimator), since users of one snapshot share its SBSs.
pub fn monte_carlo_hit(
    config: &NetworkConfig,
    profiles: &[PopularityProfile],
    placement: &CachePlacement,
    realizations: usize,
    seed: u64,
) -> Result<MonteCarloEstimate> {
    if realizations == 0 {
        return Err(Error::invalid("need at least one realization"));
    }
    config.region.validate()?;
    if !(config.radius.is_finite() && config.radius > 0.0) {
        return Err(Error::invalid(format!("radius must be > 0, got {}", config.radius)));
    }
    let f = catalog_size(profiles)?;
    placement.check(f)?;
    let (lo, hi, edge_effects) = user_window(config);
    let window_area = (hi.x - lo.x) * (hi.y - lo.y);
    if config.user_density * window_area <= 0.0 {
        return Err(Error::invalid("user density gives no users in the placement window"));
    }

    let k = placement.file_sets.len();
    let mut caches = vec![false; k * f];
    for (c, files) in placement.file_sets.iter().enumerate() {
        for &i in files {
            caches[c * f + i] = true;
        }
    }
    let label_cdf = cumulative(&placement.fractions);
    let profile_cdfs: Vec<Vec<f64>> = profiles.iter().map(|p| cumulative(&p.probs)).collect();

    let run = |t: usize| -> Result<(u64, u64, usize)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(t as u64);

        let sbs = sample_ppp_with(config.sbs_density, &config.region, &mut rng)?;
        let mut positions = Vec::with_capacity(sbs.len());
        let mut labels = Vec::with_capacity(sbs.len());
        for p in &sbs.positions {
            let u: f64 = rng.random();
            if let Some(c) = label_cdf.iter().position(|&edge| u < edge) {
                positions.push(*p);
                labels.push(c);
            }
        }
        let grid = GridIndex::build(&positions, &config.region, config.radius);

        let mut users = 0;
        let mut retries = 0;
        while users == 0 {
            users = poisson_count(config.user_density * window_area, &mut rng)?;
            if users == 0 {
                retries += 1;
                if retries > MAX_EMPTY_RETRIES {
                    return Err(Error::invalid("user process keeps producing empty realizations"));
                }
            }
        }

        let mut hits = 0u64;
        for _ in 0..users {
            let at = Point::new(lo.x + rng.random::<f64>() * (hi.x - lo.x), lo.y + rng.random::<f64>() * (hi.y - lo.y));
            let who = rng.random_range(0..profiles.len());
            let file = draw_index(&profile_cdfs[who], rng.random());
            if grid.any_within(&positions, at, config.radius, |s| caches[labels[s] * f + file]) {
                hits += 1;
            }
        }
        Ok((hits, users as u64, retries))
    };

    let per_realization: Vec<(u64, u64, usize)> = (0..realizations).into_par_iter().map(run).collect::<Result<_>>()?;

    let hits: u64 = per_realization.iter().map(|r| r.0).sum();
    let requests: u64 = per_realization.iter().map(|r| r.1).sum();
    let resampled = per_realization.iter().map(|r| r.2).sum();
    let estimate = hits as f64 / requests as f64;

    let halfwidth_95 = if realizations > 1 {
        let t = realizations as f64;
        let mean_users = requests as f64 / t;
        let s2 = per_realization
            .iter()
            .map(|&(h, n, _)| (h as f64 - estimate * n as f64).powi(2))
            .sum::<f64>()
            / (t - 1.0);
        Z_95 * (s2 / t).sqrt() / mean_users
    } else {
        Z_95 * (estimate * (1.0 - estimate) / requests as f64).sqrt()
    };

    Ok(MonteCarloEstimate {
        estimate,
        halfwidth_95,
        requests,
        realizations,
        resampled,
        edge_effects,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Clustered,
    Baseline,
}

impl Scheme {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scheme::Clustered => "clustered",
            Scheme::Baseline => "baseline",
        }
    }
}

/// One evaluated parameter point for one scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct HitReport {
    pub radius: f64,
    pub sbs_density: f64,
    pub cache_size: usize,
    pub scheme: Scheme,
    /// Printed analytic expression, clamped.
    pub analytic: f64,
    /// Overlap-aware analytic value (the protocol's true hit probability).
    pub analytic_exact: f64,
    pub monte_carlo: Option<MonteCarloEstimate>,
    /// Baseline analytic value at the same parameters.
    pub baseline_analytic: f64,
    pub overlap_warning: bool,
}

pub const HITS_HEADER: [&str; 11] = [
    "radius",
    "sbs_density",
    "cache_size",
    "scheme",
    "analytic",
    "mc_estimate",
    "mc_halfwidth",
    "n_trials",
    "overlap_warning",
    "analytic_exact",
    "baseline_analytic",
];

pub fn write_hit_row<W: Write>(w: &mut csv::Writer<W>, r: &HitReport) -> Result<()> {
    let (est, hw, n) = match &r.monte_carlo {
        Some(mc) => (mc.estimate.to_string(), mc.halfwidth_95.to_string(), mc.requests.to_string()),
        None => (String::new(), String::new(), "0".to_string()),
    };
    w.write_record([
        r.radius.to_string(),
        r.sbs_density.to_string(),
        r.cache_size.to_string(),
        r.scheme.as_str().to_string(),
        r.analytic.to_string(),
        est,
        hw,
        n,
        r.overlap_warning.to_string(),
        r.analytic_exact.to_string(),
        r.baseline_analytic.to_string(),
    ])?;
    Ok(())
}
