//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF, Continuous, Normal};

use cellcache::allocation::{cluster_mass, optimize_fractions, oracle, HitObjective, Method};
use cellcache::clustering::{adaptive_cluster, adjusted_rand_index, update_centroids, AdaptiveClustering, ClusteringOptions};
use cellcache::experiment::cluster_file_sets;
use cellcache::geometry::{sample_ppp, Region};
use cellcache::hit::{
    analytic_hit, analytic_hit_baseline, analytic_hit_exact, baseline_files, baseline_saturation,
    expected_requests_per_realization, monte_carlo_hit, CachePlacement,
};
use cellcache::network::{footprint, generate_profiles, NetworkConfig, PlantedProfiles, PlantedScenario, PopularityProfile, SearchRange};
use cellcache::selection::{log_likelihood, LikelihoodForm};

const F: usize = 100;
const M: usize = 10;
const USERS: usize = 200;
const PLANTED: usize = 4;

type Criterion = fn() -> (bool, String);

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
    elapsed: Duration,
}

fn planted(seed: u64) -> PlantedProfiles {
    let scenario = PlantedScenario::disjoint(PLANTED, 25, F, 0.0, 0.9).unwrap();
    generate_profiles(&scenario, USERS, F, seed).unwrap()
}

fn search(max: usize) -> SearchRange {
    SearchRange::new(2, max).unwrap()
}

fn cluster(profiles: &[PopularityProfile], seed: u64, extend: bool) -> AdaptiveClustering {
    let options = ClusteringOptions {
        extend_search: extend,
        ..ClusteringOptions::default()
    };
    adaptive_cluster(profiles, search(10), seed, options).unwrap()
}

fn clustered_placement(
    profiles: &[PopularityProfile],
    result: &AdaptiveClustering,
    m: usize,
    sbs_density: f64,
    radius: f64,
) -> CachePlacement {
    let sets = cluster_file_sets(&result.best, m);
    let masses: Vec<f64> = sets.iter().map(|s| cluster_mass(profiles, s).unwrap()).collect();
    let objective = HitObjective::new(masses, profiles.len(), sbs_density, radius).unwrap();
    let x = optimize_fractions(&objective).unwrap();
    CachePlacement::new(sets, x.fractions).unwrap()
}

fn network(radius: f64, sbs_density: f64) -> NetworkConfig {
    NetworkConfig {
        sbs_density,
        radius,
        cache_size: M,
        catalog_size: F,
        region: Region::square(6.0).unwrap(),
        ..NetworkConfig::default()
    }
}

fn monte_carlo_agreement() -> (bool, String) {
    let data = planted(11);
    let result = cluster(&data.profiles, 11, true);
    let cfg = network(0.5, 10.0);
    let placement = clustered_placement(&data.profiles, &result, M, cfg.sbs_density, cfg.radius);
    if placement.overlap() != 0 || result.best.cluster_count() != PLANTED {
        return (false, format!("setup: overlap {} clusters {}", placement.overlap(), result.best.cluster_count()));
    }
    let analytic = analytic_hit(&data.profiles, &placement, cfg.sbs_density, cfg.radius).unwrap().probability;
    let per_realization = expected_requests_per_realization(&cfg);
    // Request totals are Poisson; five standard deviations of headroom keeps
    // every batch at or above the target.
    let target: f64 = 1e5;
    let realizations = ((target + 5.0 * target.sqrt()) / per_realization).ceil() as usize;

    let start = Instant::now();
    let mut covered = 0;
    let mut min_requests = u64::MAX;
    for batch in 0..100u64 {
        let est = monte_carlo_hit(&cfg, &data.profiles, &placement, realizations, batch).unwrap();
        min_requests = min_requests.min(est.requests);
        if (est.estimate - analytic).abs() <= est.halfwidth_95 {
            covered += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    (
        covered >= 93 && min_requests as f64 >= target && secs < 120.0,
        format!(
            "{covered}/100 batches within the 95% halfwidth of {analytic:.5} \
             ({realizations} realizations, >= {min_requests} requests per batch, {secs:.1}s)"
        ),
    )
}

fn random_objective(rng: &mut ChaCha8Rng, spread: f64) -> HitObjective {
    let n = rng.random_range(2..=8);
    let lambda = rng.random_range(0.5..20.0);
    let masses = (0..n).map(|_| (spread * rng.random_range(-1.0..1.0f64)).exp()).collect();
    HitObjective::with_footprint(masses, 50, lambda).unwrap()
}

fn closed_form_oracle() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut interior = 0;
    let mut worst_dev = 0.0f64;
    while interior < 100 {
        let obj = random_objective(&mut rng, 1.0);
        let x = optimize_fractions(&obj).unwrap();
        if x.method != Method::ClosedForm || x.fractions.iter().any(|&v| v <= 0.0) {
            continue;
        }
        interior += 1;
        let o = oracle::maximize(&obj, 1e-12).unwrap();
        let dev = x.fractions.iter().zip(&o.fractions).fold(0.0f64, |a, (p, q)| a.max((p - q).abs()));
        worst_dev = worst_dev.max(dev);
    }

    let mut boundary = 0;
    let mut worst_gap = f64::NEG_INFINITY;
    while boundary < 100 {
        let obj = random_objective(&mut rng, 6.0);
        let x = optimize_fractions(&obj).unwrap();
        if x.method != Method::Projected {
            continue;
        }
        boundary += 1;
        let o = oracle::maximize(&obj, 1e-12).unwrap();
        worst_gap = worst_gap.max(obj.value(&o.fractions) - obj.value(&x.fractions));
    }
    (
        worst_dev <= 1e-6 && worst_gap <= 1e-8,
        format!("interior max deviation {worst_dev:.2e}; boundary oracle excess {worst_gap:.2e}"),
    )
}

fn closed_form_identities() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_sum = 0.0f64;
    let mut sum_ok = true;
    let mut symmetric = true;
    let mut worst_scale = 0.0f64;
    let mut worst_equal_sum = 0.0f64;
    for _ in 0..1000 {
        let obj = random_objective(&mut rng, 3.0);
        let n = obj.len();
        let x = optimize_fractions(&obj).unwrap();
        worst_sum = worst_sum.max((x.total() - 1.0).abs());
        sum_ok &= x.total() == 1.0;

        let c = 10f64.powf(rng.random_range(-3.0..3.0));
        let scaled = HitObjective::with_footprint(obj.masses.iter().map(|m| m * c).collect(), obj.n_users, obj.footprint).unwrap();
        let y = optimize_fractions(&scaled).unwrap();
        let dev = x.fractions.iter().zip(&y.fractions).fold(0.0f64, |a, (p, q)| a.max((p - q).abs()));
        worst_scale = worst_scale.max(dev);

        let m = rng.random_range(0.01..100.0);
        let equal = HitObjective::with_footprint(vec![m; n], obj.n_users, obj.footprint).unwrap();
        let z = optimize_fractions(&equal).unwrap();
        symmetric &= z.fractions.iter().all(|&v| v == 1.0 / n as f64);
        worst_equal_sum = worst_equal_sum.max((z.total() - 1.0).abs());
    }
    (
        sum_ok && symmetric && worst_equal_sum <= 8.0 * f64::EPSILON && worst_scale <= 1e-12,
        format!(
            "Σx == 1 exactly: {sum_ok} (max |Σx − 1| {worst_sum:.1e}); equal ψ gives exactly 1/N_c: {symmetric} \
             (sum within {worst_equal_sum:.1e}); scale deviation {worst_scale:.1e}"
        ),
    )
}

fn planted_recovery() -> (bool, String) {
    let mut correct = 0;
    let mut worst_ari = f64::INFINITY;
    for seed in 0..50 {
        let data = planted(1000 + seed);
        let result = cluster(&data.profiles, seed, true);
        if result.best.cluster_count() == PLANTED {
            correct += 1;
            worst_ari = worst_ari.min(adjusted_rand_index(&result.best.assignment, &data.membership));
        }
    }
    (
        correct >= 40 && worst_ari >= 0.9,
        format!("{correct}/50 runs select {PLANTED}; min ARI on those {worst_ari:.4}"),
    )
}

fn radius_direction() -> (bool, String) {
    let data = planted(21);
    let result = cluster(&data.profiles, 21, true);
    let mut always_ge = true;
    let mut best_ratio = 0.0f64;
    let mut best_r = 0.0;
    for step in 2..=12 {
        let r = step as f64 / 10.0;
        let placement = clustered_placement(&data.profiles, &result, M, 10.0, r);
        let clustered = analytic_hit(&data.profiles, &placement, 10.0, r).unwrap().probability;
        let baseline = analytic_hit_baseline(&data.profiles, M, 10.0, r).unwrap();
        always_ge &= clustered >= baseline;
        if (0.3..=1.0).contains(&r) && clustered / baseline > best_ratio {
            best_ratio = clustered / baseline;
            best_r = r;
        }
    }
    (
        always_ge && best_ratio >= 2.0,
        format!("clustered ≥ baseline at all R in 0.2..1.2: {always_ge}; best ratio {best_ratio:.2} at R = {best_r}"),
    )
}

fn density_shape() -> (bool, String) {
    let data = planted(31);
    let result = cluster(&data.profiles, 31, true);
    let r = 0.7;
    let densities: Vec<f64> = (0..=10).map(|i| 3.0 * 10f64.powf(i as f64 / 10.0)).collect();
    let saturation = baseline_saturation(&data.profiles, M).unwrap();
    let mut base = Vec::new();
    let mut clus = Vec::new();
    for &d in &densities {
        base.push(analytic_hit_baseline(&data.profiles, M, d, r).unwrap());
        let placement = clustered_placement(&data.profiles, &result, M, d, r);
        clus.push(analytic_hit(&data.profiles, &placement, d, r).unwrap().probability);
    }
    let base_gain = base[10] / base[0] - 1.0;
    let clus_gain = clus[10] / clus[0] - 1.0;
    let below = base.iter().all(|&b| b <= saturation);
    (
        base_gain < 0.02 && below && clus_gain >= 0.15,
        format!(
            "λ_s 3→30 at R = 0.7: baseline +{:.2}% (saturation {saturation:.4}, never exceeded: {below}), clustered +{:.1}%",
            100.0 * base_gain,
            100.0 * clus_gain
        ),
    )
}

fn cache_size_shape() -> (bool, String) {
    let data = planted(41);
    let result = cluster(&data.profiles, 41, true);
    let (r, d) = (0.5, 10.0);
    let bound = -(-footprint(d, r)).exp_m1();
    let mut prev = (0.0f64, 0.0f64);
    let mut violations = 0;
    let mut last = (0.0, 0.0);
    for m in 1..=F {
        let placement = clustered_placement(&data.profiles, &result, m, d, r);
        let c = analytic_hit_exact(&data.profiles, &placement, d, r).unwrap();
        let base = CachePlacement::single(baseline_files(&data.profiles, m).unwrap());
        let b = analytic_hit_exact(&data.profiles, &base, d, r).unwrap();
        if c < prev.0 - 1e-12 || b < prev.1 - 1e-12 {
            violations += 1;
        }
        prev = (c, b);
        last = (c, b);
    }
    let at_f = (last.0 - bound).abs().max((last.1 - bound).abs());
    (
        violations == 0 && at_f <= 1e-12,
        format!("decreases over M = 1..{F}: {violations}; |hit − (1 − e^(−λ_sπR²))| at M = F: {at_f:.1e}"),
    )
}

fn aic_minimum() -> (bool, String) {
    let runs = 20;
    let mut mean = [0.0; 9];
    let mut counts = Vec::new();
    for seed in 0..runs {
        let data = planted(5000 + seed);
        let result = cluster(&data.profiles, seed, false);
        for (acc, s) in mean.iter_mut().zip(&result.trace) {
            *acc += s.aic_normalized / runs as f64;
        }
        counts.push(result.trace.iter().map(|s| s.cluster_count).collect::<Vec<_>>());
    }
    let consistent = counts.iter().all(|c| *c == (2..=10).collect::<Vec<_>>());
    let argmin = (0..mean.len()).min_by(|&a, &b| mean[a].total_cmp(&mean[b])).unwrap() + 2;
    (
        consistent && argmin == PLANTED,
        format!("mean normalized AIC over {runs} seeds minimal at {argmin} ({:.2})", mean[argmin - 2]),
    )
}

fn ppp_statistics() -> (bool, String) {
    let region = Region::square(6.0).unwrap();
    let lambda = 10.0;
    let mu = lambda * region.area();
    let draws = 10_000;
    let side = 6;
    let mut cells = vec![0u64; side * side];
    let mut counts = Vec::with_capacity(draws);
    for seed in 0..draws as u64 {
        let set = sample_ppp(lambda, &region, seed).unwrap();
        counts.push(set.len() as f64);
        for p in &set.positions {
            let i = (p.x as usize).min(side - 1);
            let j = (p.y as usize).min(side - 1);
            cells[j * side + i] += 1;
        }
    }
    let n = draws as f64;
    let mean = counts.iter().sum::<f64>() / n;
    let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se_mean = (mu / n).sqrt();
    // Poisson: fourth central moment μ(1 + 3μ), so Var(s²) ≈ (μ + 2μ²)/n.
    let se_var = ((mu + 2.0 * mu * mu) / n).sqrt();

    let total: u64 = cells.iter().sum();
    let expected = total as f64 / cells.len() as f64;
    let chi2: f64 = cells.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
    let critical = ChiSquared::new((cells.len() - 1) as f64).unwrap().inverse_cdf(0.99);

    let mean_ok = (mean - mu).abs() <= 3.0 * se_mean;
    let var_ok = (var - mu).abs() <= 3.0 * se_var;
    (
        mean_ok && var_ok && chi2 <= critical,
        format!(
            "mean {mean:.2} vs {mu} (3SE {:.2}), variance {var:.1} (3SE {:.1}), χ² {chi2:.1} vs {critical:.1}",
            3.0 * se_mean,
            3.0 * se_var
        ),
    )
}

fn likelihood_oracle() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let f = rng.random_range(3..=20);
        let k = rng.random_range(1..=5);
        let n = 30;
        let profiles: Vec<PopularityProfile> = (0..n)
            .map(|u| {
                let raw: Vec<f64> = (0..f).map(|_| rng.random_range(0.01..1.0)).collect();
                let s: f64 = raw.iter().sum();
                PopularityProfile::new(u, raw.iter().map(|v| v / s).collect()).unwrap()
            })
            .collect();
        let mut assignment: Vec<usize> = (0..n).map(|u| u % k).collect();
        for slot in assignment.iter_mut().skip(2 * k) {
            *slot = rng.random_range(0..k);
        }
        let model = update_centroids(&profiles, &assignment, k).unwrap();
        let aggregated = log_likelihood(&model, &profiles, LikelihoodForm::Standard).unwrap();

        let mut direct = 0.0;
        for (p, &c) in profiles.iter().zip(&model.assignment) {
            let sd = model.variances[c].sqrt();
            direct += (model.counts[c] as f64 / n as f64).ln();
            for (v, m) in p.probs.iter().zip(&model.centroids[c]) {
                direct += Normal::new(*m, sd).unwrap().ln_pdf(*v);
            }
        }
        worst = worst.max((aggregated - direct).abs() / direct.abs());
    }
    (worst <= 1e-8, format!("max relative difference {worst:.1e} over 200 instances"))
}

fn main() -> ExitCode {
    let criteria: [(&'static str, Criterion); 10] = [
        ("analytic-simulation agreement", monte_carlo_agreement),
        ("closed form vs numerical oracle", closed_form_oracle),
        ("closed-form identities", closed_form_identities),
        ("planted-cluster recovery", planted_recovery),
        ("hit vs radius direction", radius_direction),
        ("hit vs SBS density shape", density_shape),
        ("hit vs cache size shape", cache_size_shape),
        ("normalized AIC minimum", aic_minimum),
        ("PPP sampler statistics", ppp_statistics),
        ("likelihood oracle", likelihood_oracle),
    ];
    let outcomes: Vec<Outcome> = criteria
        .iter()
        .map(|(name, run)| {
            let start = Instant::now();
            let (pass, detail) = run();
            Outcome {
                name,
                pass,
                detail,
                elapsed: start.elapsed(),
            }
        })
        .collect();

    for o in &outcomes {
        println!(
            "{} {}: {} [{:.1}s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.name,
            o.detail,
            o.elapsed.as_secs_f64()
        );
    }
    let failed = outcomes.iter().filter(|o| !o.pass).count();
    println!("acceptance: {} passed, {failed} failed", outcomes.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
