use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use cellcache::error::{Result, Stage, StageExt};
use cellcache::experiment::{self, ExperimentSpec, SweepVariable};
use cellcache::network::{read_profiles_csv, write_profiles_csv, PopularityProfile, SearchRange};
use cellcache::selection::LikelihoodForm;

#[derive(Parser)]
#[command(name = "cellcache", version, about = "Clustered proactive caching experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic popularity profiles (profiles.csv).
    Generate(Common),
    /// Cluster profiles and write aic_trace.csv, clusters.csv, centroids.csv.
    Cluster(Common),
    /// Cluster, then compute SBS fractions at the configured point.
    Allocate(Common),
    /// Full pipeline at the configured point, including hits.csv.
    Evaluate(Common),
    /// Full pipeline over the configured sweep.
    Sweep(Common),
}

#[derive(Args)]
struct Common {
    /// TOML experiment file; defaults are used for anything it omits.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Read profiles from this CSV instead of generating them.
    #[arg(long)]
    profiles: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Print the resolved configuration as TOML and exit.
    #[arg(long)]
    print_config: bool,
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    sbs_density: Option<f64>,
    #[arg(long)]
    cache_size: Option<usize>,
    #[arg(long)]
    catalog_size: Option<usize>,
    #[arg(long)]
    users: Option<usize>,
    #[arg(long)]
    min_clusters: Option<usize>,
    #[arg(long)]
    max_clusters: Option<usize>,
    /// Monte Carlo realizations per point and scheme (0 disables).
    #[arg(long)]
    trials: Option<usize>,
    /// Sweep variable: radius, sbs-density or cache-size.
    #[arg(long, value_parser = parse_variable)]
    sweep_variable: Option<SweepVariable>,
    /// Comma-separated sweep values.
    #[arg(long, value_delimiter = ',')]
    sweep_values: Option<Vec<f64>>,
    #[arg(long)]
    uniform_fractions: bool,
    #[arg(long)]
    paper_exact_likelihood: bool,
    /// Keep the search at the configured maximum even when AIC still falls.
    #[arg(long)]
    no_extend: bool,
}

fn parse_variable(s: &str) -> std::result::Result<SweepVariable, String> {
    match s {
        "radius" => Ok(SweepVariable::Radius),
        "sbs-density" => Ok(SweepVariable::SbsDensity),
        "cache-size" => Ok(SweepVariable::CacheSize),
        other => Err(format!("unknown sweep variable {other:?}")),
    }
}

impl Common {
    fn resolve(&self) -> Result<ExperimentSpec> {
        let mut spec = match &self.config {
            Some(path) => ExperimentSpec::load(path)?,
            None => ExperimentSpec::default(),
        };
        if let Some(v) = self.seed {
            spec.seed = v;
        }
        let net = &mut spec.network;
        if let Some(v) = self.radius {
            net.radius = v;
        }
        if let Some(v) = self.sbs_density {
            net.sbs_density = v;
        }
        if let Some(v) = self.cache_size {
            net.cache_size = v;
        }
        if let Some(v) = self.catalog_size {
            net.catalog_size = v;
        }
        if self.min_clusters.is_some() || self.max_clusters.is_some() {
            net.search_range = SearchRange::new(
                self.min_clusters.unwrap_or(net.search_range.min),
                self.max_clusters.unwrap_or(net.search_range.max),
            )?;
        }
        if let Some(v) = self.users {
            spec.n_users = v;
        }
        if let Some(v) = self.trials {
            spec.mc_realizations = v;
        }
        if let Some(v) = self.sweep_variable {
            spec.sweep.variable = v;
        }
        if let Some(v) = &self.sweep_values {
            spec.sweep.values = v.clone();
        }
        spec.uniform_fractions |= self.uniform_fractions;
        if self.paper_exact_likelihood {
            spec.likelihood = LikelihoodForm::PaperExact;
        }
        if self.no_extend {
            spec.extend_search = false;
        }
        spec.validate()?;
        Ok(spec)
    }

    fn load_profiles(&self, spec: &ExperimentSpec) -> Result<Vec<PopularityProfile>> {
        match &self.profiles {
            Some(path) => read_profiles_csv(BufReader::new(File::open(path)?)).stage(Stage::Generate),
            None => Ok(experiment::generate(spec).stage(Stage::Generate)?.profiles),
        }
    }
}

/// Collapse the sweep to the single configured network point.
fn single_point(spec: &mut ExperimentSpec) {
    spec.sweep.variable = SweepVariable::Radius;
    spec.sweep.values = vec![spec.network.radius];
}

fn report(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn run(cli: Cli) -> Result<()> {
    let (command, common) = match &cli.command {
        Command::Generate(c) => ("generate", c),
        Command::Cluster(c) => ("cluster", c),
        Command::Allocate(c) => ("allocate", c),
        Command::Evaluate(c) => ("evaluate", c),
        Command::Sweep(c) => ("sweep", c),
    };
    let mut spec = common.resolve().stage(Stage::Config)?;
    if command != "sweep" && command != "generate" {
        single_point(&mut spec);
    }
    if common.print_config {
        print!("{}", spec.to_toml());
        return Ok(());
    }
    let out: &Path = &common.out_dir;
    fs::create_dir_all(out).stage(Stage::Output)?;
    info!("{command}: seed {}, output in {}", spec.seed, out.display());

    match command {
        "generate" => {
            let profiles = common.load_profiles(&spec)?;
            let path = out.join("profiles.csv");
            write_profiles_csv(&profiles, File::create(&path).stage(Stage::Output)?).stage(Stage::Output)?;
            report(&[path]);
        }
        "cluster" | "allocate" => {
            let profiles = common.load_profiles(&spec)?;
            let clustering = experiment::cluster(&spec, &profiles).stage(Stage::Cluster)?;
            let mut files = experiment::write_clustering(out, &clustering).stage(Stage::Output)?;
            println!("selected {} clusters", clustering.best_score.cluster_count);
            if command == "allocate" {
                let (_, alloc) = experiment::allocate(&profiles, &clustering.best, &spec.network, spec.uniform_fractions)
                    .stage(Stage::Allocate)?;
                let point = experiment::SweepPoint {
                    config: spec.network.clone(),
                    allocation: Some(alloc),
                    reports: Vec::new(),
                };
                files.push(experiment::write_allocations(out, &[point]).stage(Stage::Output)?);
            }
            report(&files);
        }
        _ => {
            let profiles = match &common.profiles {
                Some(_) => Some(common.load_profiles(&spec)?),
                None => None,
            };
            let run = experiment::run_pipeline(&spec, profiles, Some(out))?;
            println!("selected {} clusters", run.clustering.best_score.cluster_count);
            for r in run.points.iter().flat_map(|p| &p.reports) {
                let mc = r
                    .monte_carlo
                    .map(|m| format!(", simulated {:.4} ± {:.4}", m.estimate, m.halfwidth_95))
                    .unwrap_or_default();
                println!(
                    "R={} λ_s={} M={} {}: analytic {:.4}{mc}",
                    r.radius,
                    r.sbs_density,
                    r.cache_size,
                    r.scheme.as_str(),
                    r.analytic_exact
                );
            }
            report(&run.files);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match e.stage() {
                Some(stage) => eprintln!("error [{stage}]: {}", innermost(&e)),
                None => eprintln!("error: {e}"),
            }
            ExitCode::FAILURE
        }
    }
}

fn innermost(e: &cellcache::Error) -> String {
    match e {
        cellcache::Error::Stage { source, .. } => innermost(source),
        other => other.to_string(),
    }
}
