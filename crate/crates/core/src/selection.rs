//! Spherical-Gaussian likelihood and Akaike Information Criterion for
//! clustering models.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::clustering::ClusterModel;
use crate::error::{Error, Result};
use crate::network::{catalog_size, PopularityProfile};

/// Lower bound applied to every variance entering the likelihood.
pub const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LikelihoodForm {
    /// Per-user spherical Gaussian density with mixing weights `N_k / N_u`.
    #[default]
    Standard,
    /// The aggregated per-cluster expression in its literal printed form,
    /// kept for side-by-side comparison. It rewards large variances.
    PaperExact,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelScore {
    pub cluster_count: usize,
    /// `i * (F + 1)`: one centroid and one variance per cluster.
    pub parameter_count: usize,
    pub log_likelihood: f64,
    pub aic: f64,
    /// `aic / N_u`.
    pub aic_normalized: f64,
    /// Clusters whose variance was unusable (singletons, zero spread) and
    /// was replaced by the pooled estimate or the floor.
    pub degenerate_clusters: Vec<usize>,
}

/// Variances used by the likelihood and the clusters that needed repair.
///
/// A cluster with one member, or with variance below [`VARIANCE_FLOOR`],
/// takes the pooled within-cluster variance `Σ SS_k / (N_u − i)`; if that is
/// unusable too, the floor.
pub fn likelihood_variances(model: &ClusterModel) -> (Vec<f64>, Vec<usize>) {
    let n: usize = model.counts.iter().sum();
    let i = model.cluster_count();
    let total_ss: f64 = model.variances.iter().zip(&model.counts).map(|(v, &c)| v * c as f64).sum();
    let pooled = if n > i { total_ss / (n - i) as f64 } else { 0.0 };
    let fallback = if pooled >= VARIANCE_FLOOR { pooled } else { VARIANCE_FLOOR };

    let mut degenerate = Vec::new();
    let vars = model
        .variances
        .iter()
        .zip(&model.counts)
        .enumerate()
        .map(|(k, (&v, &c))| {
            if c < 2 || v < VARIANCE_FLOOR {
                degenerate.push(k);
                fallback
            } else {
                v
            }
        })
        .collect();
    (vars, degenerate)
}

fn check_dims(model: &ClusterModel, profiles: &[PopularityProfile]) -> Result<usize> {
    let f = catalog_size(profiles)?;
    if model.catalog_size() != f {
        return Err(Error::DimensionMismatch {
            context: "model catalog size",
            expected: f,
            actual: model.catalog_size(),
        });
    }
    if model.assignment.len() != profiles.len() {
        return Err(Error::DimensionMismatch {
            context: "model assignment length",
            expected: profiles.len(),
            actual: model.assignment.len(),
        });
    }
    Ok(f)
}

/// Log-likelihood of the profiles under `model`.
///
/// Standard form, summed per cluster:
/// `−(N_k F / 2) ln(2π σ_k²) − SS_k / (2 σ_k²) + N_k ln(N_k / N_u)`.
pub fn log_likelihood(model: &ClusterModel, profiles: &[PopularityProfile], form: LikelihoodForm) -> Result<f64> {
    let f = check_dims(model, profiles)? as f64;
    let n = profiles.len() as f64;

    let mut ss = vec![0.0; model.cluster_count()];
    for (p, &c) in profiles.iter().zip(&model.assignment) {
        ss[c] += crate::clustering::squared_distance(&p.probs, &model.centroids[c]);
    }

    let value = match form {
        LikelihoodForm::Standard => {
            let (vars, _) = likelihood_variances(model);
            model
                .counts
                .iter()
                .zip(&vars)
                .zip(&ss)
                .map(|((&nk, &var), &s)| {
                    let nk = nk as f64;
                    -0.5 * nk * f * (2.0 * PI * var).ln() - s / (2.0 * var) + nk * (nk / n).ln()
                })
                .sum()
        }
        LikelihoodForm::PaperExact => model
            .counts
            .iter()
            .zip(&model.variances)
            .map(|(&nk, &var)| {
                let nk = nk as f64;
                let var = var.max(VARIANCE_FLOOR);
                -0.5 * nk * ((2.0 * PI).ln() - 1.0 + 2.0 * (nk / n).ln() - f * var.ln())
            })
            .sum(),
    };
    Ok(value)
}

/// Score `model` with `AIC = 2 k − 2 ln L`, `k = i (F + 1)`.
pub fn aic(model: &ClusterModel, profiles: &[PopularityProfile], form: LikelihoodForm) -> Result<ModelScore> {
    let f = check_dims(model, profiles)?;
    let i = model.cluster_count();
    let parameter_count = i * (f + 1);
    let log_likelihood = log_likelihood(model, profiles, form)?;
    let aic = 2.0 * parameter_count as f64 - 2.0 * log_likelihood;
    let degenerate_clusters = match form {
        LikelihoodForm::Standard => likelihood_variances(model).1,
        LikelihoodForm::PaperExact => (0..i).filter(|&k| model.variances[k] < VARIANCE_FLOOR).collect(),
    };
    Ok(ModelScore {
        cluster_count: i,
        parameter_count,
        log_likelihood,
        aic,
        aic_normalized: aic / profiles.len() as f64,
        degenerate_clusters,
    })
}

/// Lowest AIC; ties go to the smaller cluster count.
pub fn select_model(scores: &[ModelScore]) -> Result<&ModelScore> {
    scores
        .iter()
        .min_by(|a, b| a.aic.total_cmp(&b.aic).then(a.cluster_count.cmp(&b.cluster_count)))
        .ok_or(Error::Empty("model score list"))
}

/// `cluster_count,k_i,log_likelihood,aic,aic_normalized`
pub fn write_trace_csv<W: Write>(trace: &[ModelScore], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["cluster_count", "k_i", "log_likelihood", "aic", "aic_normalized"])?;
    for s in trace {
        w.write_record([
            s.cluster_count.to_string(),
            s.parameter_count.to_string(),
            s.log_likelihood.to_string(),
            s.aic.to_string(),
            s.aic_normalized.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
