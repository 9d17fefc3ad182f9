//! End-to-end runs: generate profiles, cluster, allocate, evaluate, and
//! sweep one network parameter.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::allocation::{
    cluster_mass, optimize_fractions, uniform_fractions, write_allocation_rows, Allocation, HitObjective,
    ALLOCATION_HEADER,
};
use crate::clustering::{adaptive_cluster, write_assignment_csv, write_centroids_csv, AdaptiveClustering, ClusterModel, ClusteringOptions};
use crate::error::{Error, Result, Stage, StageExt};
use crate::hit::{
    analytic_hit, analytic_hit_baseline, analytic_hit_exact, baseline_files, monte_carlo_hit, write_hit_row,
    CachePlacement, HitReport, Scheme, HITS_HEADER,
};
use crate::network::{generate_profiles, top_m, NetworkConfig, PlantedProfiles, PlantedScenario, PopularityProfile};
use crate::selection::{write_trace_csv, LikelihoodForm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepVariable {
    Radius,
    SbsDensity,
    CacheSize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schemes {
    Clustered,
    Baseline,
    Both,
}

impl Schemes {
    fn includes(&self, s: Scheme) -> bool {
        matches!(
            (self, s),
            (Schemes::Both, _) | (Schemes::Clustered, Scheme::Clustered) | (Schemes::Baseline, Scheme::Baseline)
        )
    }
}

/// Planted-structure knobs for synthetic profiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub clusters: usize,
    /// Size of each cluster's (disjoint) preferred file subset.
    pub subset_size: usize,
    pub zipf_exponent: f64,
    pub bias: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            clusters: 4,
            subset_size: 25,
            zipf_exponent: 0.0,
            bias: 0.9,
        }
    }
}

impl ScenarioConfig {
    pub fn planted(&self, catalog_size: usize) -> Result<PlantedScenario> {
        PlantedScenario::disjoint(self.clusters, self.subset_size, catalog_size, self.zipf_exponent, self.bias)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub seed: u64,
    /// Profiles to generate (the clustered population).
    pub n_users: usize,
    /// Monte Carlo snapshots per sweep point and scheme; 0 skips simulation.
    pub mc_realizations: usize,
    pub schemes: Schemes,
    pub uniform_fractions: bool,
    pub likelihood: LikelihoodForm,
    pub extend_search: bool,
    pub network: NetworkConfig,
    pub scenario: ScenarioConfig,
    pub sweep: Sweep,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            seed: 1,
            n_users: 200,
            mc_realizations: 200,
            schemes: Schemes::Both,
            uniform_fractions: false,
            likelihood: LikelihoodForm::Standard,
            extend_search: true,
            network: NetworkConfig::default(),
            scenario: ScenarioConfig::default(),
            sweep: Sweep {
                variable: SweepVariable::Radius,
                values: vec![0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0],
            },
        }
    }
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Format {
            what: "config",
            detail: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        if self.n_users == 0 {
            return Err(Error::invalid("n_users must be >= 1"));
        }
        if self.sweep.values.is_empty() {
            return Err(Error::Empty("sweep values"));
        }
        if self.sweep.values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("sweep values must be strictly ascending"));
        }
        for &v in &self.sweep.values {
            let mut cfg = self.network.clone();
            apply_sweep_value(&mut cfg, self.sweep.variable, v)?;
            cfg.validate()?;
        }
        Ok(())
    }

    fn clustering_options(&self) -> ClusteringOptions {
        ClusteringOptions {
            likelihood: self.likelihood,
            extend_search: self.extend_search,
        }
    }
}

fn apply_sweep_value(cfg: &mut NetworkConfig, variable: SweepVariable, value: f64) -> Result<()> {
    match variable {
        SweepVariable::Radius => cfg.radius = value,
        SweepVariable::SbsDensity => cfg.sbs_density = value,
        SweepVariable::CacheSize => {
            if value.fract() != 0.0 || value < 1.0 {
                return Err(Error::invalid(format!("cache size sweep value {value} is not a positive integer")));
            }
            cfg.cache_size = value as usize;
        }
    }
    Ok(())
}

/// SplitMix64 finalizer; derives independent sub-seeds from the run seed.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const TAG_GENERATE: u64 = 1;
const TAG_CLUSTER: u64 = 2;
const TAG_MONTE_CARLO: u64 = 1000;

pub fn generate(spec: &ExperimentSpec) -> Result<PlantedProfiles> {
    let scenario = spec.scenario.planted(spec.network.catalog_size)?;
    generate_profiles(&scenario, spec.n_users, spec.network.catalog_size, derive_seed(spec.seed, TAG_GENERATE))
}

pub fn cluster(spec: &ExperimentSpec, profiles: &[PopularityProfile]) -> Result<AdaptiveClustering> {
    let result = adaptive_cluster(
        profiles,
        spec.network.search_range,
        derive_seed(spec.seed, TAG_CLUSTER),
        spec.clustering_options(),
    )?;
    for w in &result.warnings {
        info!("{w}");
    }
    info!(
        "selected {} clusters (AIC {:.3})",
        result.best_score.cluster_count, result.best_score.aic
    );
    Ok(result)
}

/// Cluster file sets `Δ_k`: the top `m` files of each centroid.
pub fn cluster_file_sets(model: &ClusterModel, m: usize) -> Vec<Vec<usize>> {
    model.centroids.iter().map(|c| top_m(c, m)).collect()
}

/// SBS fractions for `model` at the given network parameters.
pub fn allocate(
    profiles: &[PopularityProfile],
    model: &ClusterModel,
    config: &NetworkConfig,
    uniform: bool,
) -> Result<(Vec<Vec<usize>>, Allocation)> {
    let sets = cluster_file_sets(model, config.cache_size);
    let masses = sets.iter().map(|s| cluster_mass(profiles, s)).collect::<Result<Vec<_>>>()?;
    let objective = HitObjective::new(masses, profiles.len(), config.sbs_density, config.radius)?;
    let allocation = if uniform {
        uniform_fractions(&objective)
    } else {
        optimize_fractions(&objective)?
    };
    Ok((sets, allocation))
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub config: NetworkConfig,
    pub allocation: Option<Allocation>,
    pub reports: Vec<HitReport>,
}

impl SweepPoint {
    pub fn report(&self, scheme: Scheme) -> Option<&HitReport> {
        self.reports.iter().find(|r| r.scheme == scheme)
    }
}

/// Evaluate the requested schemes at one parameter point.
pub fn evaluate_point(
    spec: &ExperimentSpec,
    profiles: &[PopularityProfile],
    model: &ClusterModel,
    config: &NetworkConfig,
    allocation: Option<Allocation>,
    mc_seed: u64,
) -> Result<SweepPoint> {
    let baseline_analytic = analytic_hit_baseline(profiles, config.cache_size, config.sbs_density, config.radius)?;
    let mut reports = Vec::new();
    let mut kept_allocation = None;

    if spec.schemes.includes(Scheme::Clustered) {
        let (sets, alloc) = match allocation {
            Some(a) => (cluster_file_sets(model, config.cache_size), a),
            None => allocate(profiles, model, config, spec.uniform_fractions).stage(Stage::Allocate)?,
        };
        let placement = CachePlacement::new(sets, alloc.fractions.clone()).stage(Stage::Allocate)?;
        let printed = analytic_hit(profiles, &placement, config.sbs_density, config.radius)?;
        if printed.overlap_warning() {
            warn!(
                "cluster file sets overlap ({} shared entries) at R={}, λ_s={}, M={}",
                printed.overlap, config.radius, config.sbs_density, config.cache_size
            );
        }
        let exact = analytic_hit_exact(profiles, &placement, config.sbs_density, config.radius)?;
        let mc = (spec.mc_realizations > 0)
            .then(|| monte_carlo_hit(config, profiles, &placement, spec.mc_realizations, derive_seed(mc_seed, 0)))
            .transpose()?;
        reports.push(HitReport {
            radius: config.radius,
            sbs_density: config.sbs_density,
            cache_size: config.cache_size,
            scheme: Scheme::Clustered,
            analytic: printed.probability,
            analytic_exact: exact,
            monte_carlo: mc,
            baseline_analytic,
            overlap_warning: printed.overlap_warning(),
        });
        kept_allocation = Some(alloc);
    }

    if spec.schemes.includes(Scheme::Baseline) {
        let placement = CachePlacement::single(baseline_files(profiles, config.cache_size)?);
        let mc = (spec.mc_realizations > 0)
            .then(|| monte_carlo_hit(config, profiles, &placement, spec.mc_realizations, derive_seed(mc_seed, 1)))
            .transpose()?;
        reports.push(HitReport {
            radius: config.radius,
            sbs_density: config.sbs_density,
            cache_size: config.cache_size,
            scheme: Scheme::Baseline,
            analytic: baseline_analytic,
            analytic_exact: baseline_analytic,
            monte_carlo: mc,
            baseline_analytic,
            overlap_warning: false,
        });
    }

    Ok(SweepPoint {
        config: config.clone(),
        allocation: kept_allocation,
        reports,
    })
}

/// Evaluate every sweep value with the clustering held fixed; allocation is
/// recomputed per point.
pub fn sweep(spec: &ExperimentSpec, profiles: &[PopularityProfile], model: &ClusterModel) -> Result<Vec<SweepPoint>> {
    spec.sweep
        .values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let mut cfg = spec.network.clone();
            apply_sweep_value(&mut cfg, spec.sweep.variable, v).stage(Stage::Config)?;
            evaluate_point(spec, profiles, model, &cfg, None, derive_seed(spec.seed, TAG_MONTE_CARLO + i as u64))
                .stage(Stage::Evaluate)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub profiles: Vec<PopularityProfile>,
    /// Planted membership, when the profiles were generated here.
    pub membership: Option<Vec<usize>>,
    pub clustering: AdaptiveClustering,
    pub points: Vec<SweepPoint>,
    pub files: Vec<PathBuf>,
}

/// Run the whole chain. `profiles` replaces generation when given; CSV
/// artifacts are written when `out_dir` is set.
pub fn run_pipeline(spec: &ExperimentSpec, profiles: Option<Vec<PopularityProfile>>, out_dir: Option<&Path>) -> Result<PipelineRun> {
    spec.validate().stage(Stage::Config)?;
    let (profiles, membership) = match profiles {
        Some(p) => (p, None),
        None => {
            let g = generate(spec).stage(Stage::Generate)?;
            (g.profiles, Some(g.membership))
        }
    };
    if profiles[0].catalog_size() != spec.network.catalog_size {
        return Err(Error::DimensionMismatch {
            context: "profile catalog vs configured catalog_size",
            expected: spec.network.catalog_size,
            actual: profiles[0].catalog_size(),
        }
        .at(Stage::Config));
    }
    let clustering = cluster(spec, &profiles).stage(Stage::Cluster)?;
    let points = sweep(spec, &profiles, &clustering.best)?;

    let mut files = Vec::new();
    if let Some(dir) = out_dir {
        files = write_artifacts(dir, &clustering, &points).stage(Stage::Output)?;
    }
    Ok(PipelineRun {
        profiles,
        membership,
        clustering,
        points,
        files,
    })
}

fn create(dir: &Path, name: &str) -> Result<(PathBuf, BufWriter<File>)> {
    let path = dir.join(name);
    let file = File::create(&path)?;
    Ok((path, BufWriter::new(file)))
}

pub fn write_clustering(dir: &Path, clustering: &AdaptiveClustering) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let (p1, w) = create(dir, "aic_trace.csv")?;
    write_trace_csv(&clustering.trace, w)?;
    let (p2, w) = create(dir, "clusters.csv")?;
    write_assignment_csv(&clustering.best, w)?;
    let (p3, w) = create(dir, "centroids.csv")?;
    write_centroids_csv(&clustering.best, w)?;
    Ok(vec![p1, p2, p3])
}

pub fn write_allocations(dir: &Path, points: &[SweepPoint]) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let (path, w) = create(dir, "allocation.csv")?;
    let mut w = csv::Writer::from_writer(w);
    w.write_record(ALLOCATION_HEADER)?;
    for p in points {
        if let Some(a) = &p.allocation {
            write_allocation_rows(&mut w, p.config.radius, p.config.sbs_density, p.config.cache_size, a)?;
        }
    }
    w.flush()?;
    Ok(path)
}

pub fn write_hits(dir: &Path, points: &[SweepPoint]) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let (path, w) = create(dir, "hits.csv")?;
    let mut w = csv::Writer::from_writer(w);
    w.write_record(HITS_HEADER)?;
    for r in points.iter().flat_map(|p| &p.reports) {
        write_hit_row(&mut w, r)?;
    }
    w.flush()?;
    Ok(path)
}

fn write_artifacts(dir: &Path, clustering: &AdaptiveClustering, points: &[SweepPoint]) -> Result<Vec<PathBuf>> {
    let mut files = write_clustering(dir, clustering)?;
    files.push(write_allocations(dir, points)?);
    files.push(write_hits(dir, points)?);
    Ok(files)
}
