//! Allocation of SBS fractions to clusters.
//!
//! The objective is the clustered hit probability
//! `(1/N_u) Σ_k m_k (1 − exp(−x_k Λ))` with `Λ = λ_s π R²` and cluster mass
//! `m_k = Σ_u Σ_{i∈Δ_k} p_iu`, maximized over `x ≥ 0, Σ x ≤ 1`. Interior
//! optima have the closed form
//!
//! ```text
//! x_s = (N_c ln ψ_s − Σ_k ln ψ_k + Λ) / (N_c Λ),   ψ_s = Λ m_s
//! ```
//!
//! When that goes negative for some cluster, the cluster is pinned to zero
//! and the closed form is re-solved over the rest.

use std::io::Write;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{footprint, PopularityProfile};

/// Total mass of a file set over all users: `Σ_u Σ_{i∈files} p_iu`.
pub fn cluster_mass(profiles: &[PopularityProfile], files: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    for p in profiles {
        for &i in files {
            total += *p.probs.get(i).ok_or_else(|| {
                Error::invalid(format!("file {i} outside catalog of {}", p.probs.len()))
            })?;
        }
    }
    Ok(total)
}

/// The concave hit-probability objective over SBS fractions.
#[derive(Debug, Clone, PartialEq)]
pub struct HitObjective {
    pub masses: Vec<f64>,
    pub n_users: usize,
    /// `λ_s π R²`.
    pub footprint: f64,
}

impl HitObjective {
    pub fn new(masses: Vec<f64>, n_users: usize, sbs_density: f64, radius: f64) -> Result<Self> {
        Self::with_footprint(masses, n_users, footprint(sbs_density, radius))
    }

    pub fn with_footprint(masses: Vec<f64>, n_users: usize, footprint: f64) -> Result<Self> {
        if masses.is_empty() {
            return Err(Error::Empty("cluster masses"));
        }
        if let Some(m) = masses.iter().find(|m| !m.is_finite() || **m < 0.0) {
            return Err(Error::invalid(format!("cluster mass must be finite and >= 0, got {m}")));
        }
        if n_users == 0 {
            return Err(Error::invalid("objective needs at least one user"));
        }
        if !(footprint.is_finite() && footprint > 0.0) {
            return Err(Error::invalid(format!("λ_s π R² must be positive, got {footprint}")));
        }
        Ok(HitObjective {
            masses,
            n_users,
            footprint,
        })
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.masses
            .iter()
            .zip(x)
            .map(|(m, xk)| m * -(-xk * self.footprint).exp_m1())
            .sum::<f64>()
            / self.n_users as f64
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.masses
            .iter()
            .zip(x)
            .map(|(m, xk)| m * self.footprint * (-xk * self.footprint).exp() / self.n_users as f64)
            .collect()
    }

    /// `ψ_k = Λ m_k`.
    pub fn psi(&self) -> Vec<f64> {
        self.masses.iter().map(|m| self.footprint * m).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    ClosedForm,
    Projected,
    Numerical,
    Uniform,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::ClosedForm => "closed-form",
            Method::Projected => "projected",
            Method::Numerical => "numerical",
            Method::Uniform => "uniform",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub fractions: Vec<f64>,
    pub psi: Vec<f64>,
    /// Lagrange multiplier of the budget constraint at the returned point.
    pub multiplier: f64,
    pub method: Method,
    pub warning: Option<String>,
}

impl Allocation {
    pub fn total(&self) -> f64 {
        self.fractions.iter().sum()
    }
}

/// Closed-form fractions over the clusters in `active` (all with positive ψ).
fn closed_form(log_psi: &[f64], active: &[usize], footprint: f64, out: &mut [f64]) {
    let n = active.len() as f64;
    // Mean of ln ψ taken around the first entry so equal inputs cancel exactly.
    let base = log_psi[active[0]];
    let mean = base + active.iter().map(|&k| log_psi[k] - base).sum::<f64>() / n;
    out.iter_mut().for_each(|x| *x = 0.0);
    for &k in active {
        out[k] = 1.0 / n + (log_psi[k] - mean) / footprint;
    }
}

/// Fold the rounding residual of `Σ x` into the largest active share so the
/// left-to-right sum is exactly 1. Equal shares are left alone: exact `1/N`
/// symmetry and an exact sum cannot both hold for every `N`.
fn close_budget(x: &mut [f64], active: &[usize]) {
    let first = x[active[0]];
    if active.iter().all(|&k| x[k] == first) {
        return;
    }
    let mut order = active.to_vec();
    order.sort_by(|&a, &b| x[b].total_cmp(&x[a]).then(a.cmp(&b)));
    let total = |x: &[f64]| x.iter().sum::<f64>();
    let residual = 1.0 - total(x);
    if residual == 0.0 {
        return;
    }
    // The partial sums round, so the direct correction can miss; search a
    // few ulps around it, largest share first.
    for &k in &order {
        let original = x[k];
        let start = original + residual;
        let (mut up, mut down) = (start, start);
        for _ in 0..16 {
            for candidate in [up, down] {
                x[k] = candidate;
                if total(x) == 1.0 {
                    return;
                }
            }
            up = up.next_up();
            down = down.next_down();
        }
        x[k] = original;
    }
}

/// Maximize the objective with the closed form, pinning clusters whose
/// closed-form share is negative to zero one at a time.
pub fn optimize_fractions(objective: &HitObjective) -> Result<Allocation> {
    let n = objective.len();
    let psi = objective.psi();
    let mut active: Vec<usize> = (0..n).filter(|&k| objective.masses[k] > 0.0).collect();
    if active.is_empty() {
        let msg = "every cluster has zero mass; objective is flat, using uniform fractions".to_string();
        warn!("{msg}");
        return Ok(Allocation {
            fractions: vec![1.0 / n as f64; n],
            psi,
            multiplier: 0.0,
            method: Method::Uniform,
            warning: Some(msg),
        });
    }

    let log_psi: Vec<f64> = psi.iter().map(|p| p.ln()).collect();
    let mut x = vec![0.0; n];
    let mut method = Method::ClosedForm;
    loop {
        closed_form(&log_psi, &active, objective.footprint, &mut x);
        let worst = active
            .iter()
            .copied()
            .filter(|&k| x[k] < 0.0)
            .min_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)));
        match worst {
            Some(k) => {
                active.retain(|&j| j != k);
                method = Method::Projected;
            }
            None => break,
        }
    }

    close_budget(&mut x, &active);

    let k = active[0];
    let multiplier = objective.gradient(&x)[k];
    Ok(Allocation {
        fractions: x,
        psi,
        multiplier,
        method,
        warning: None,
    })
}

/// Equal fractions `1/N_c` for every cluster.
pub fn uniform_fractions(objective: &HitObjective) -> Allocation {
    let n = objective.len();
    let x = vec![1.0 / n as f64; n];
    Allocation {
        psi: objective.psi(),
        multiplier: objective.gradient(&x).into_iter().fold(0.0, f64::max),
        fractions: x,
        method: Method::Uniform,
        warning: None,
    }
}

pub mod oracle {
    //! Projected gradient ascent on `{x ≥ 0, Σ x ≤ 1}`, independent of the
    //! closed form. Used to cross-check it.

    use super::{Allocation, HitObjective, Method};
    use crate::error::{Error, Result};

    pub const MAX_ITERATIONS: usize = 2_000_000;

    /// Euclidean projection onto `{x ≥ 0, Σ x ≤ 1}`.
    pub fn project_capped_simplex(v: &[f64]) -> Vec<f64> {
        let clipped: Vec<f64> = v.iter().map(|x| x.max(0.0)).collect();
        if clipped.iter().sum::<f64>() <= 1.0 {
            return clipped;
        }
        let mut u = v.to_vec();
        u.sort_by(|a, b| b.total_cmp(a));
        let mut cumulative = 0.0;
        let mut theta = 0.0;
        for (i, &ui) in u.iter().enumerate() {
            cumulative += ui;
            let t = (cumulative - 1.0) / (i + 1) as f64;
            if ui - t > 0.0 {
                theta = t;
            }
        }
        v.iter().map(|x| (x - theta).max(0.0)).collect()
    }

    /// Maximize `objective` until the projected-gradient step changes no
    /// component by more than `tolerance`.
    pub fn maximize(objective: &HitObjective, tolerance: f64) -> Result<Allocation> {
        let n = objective.len();
        let mut x = vec![1.0 / n as f64; n];
        let lipschitz = objective
            .masses
            .iter()
            .map(|m| m * objective.footprint * objective.footprint / objective.n_users as f64)
            .fold(f64::MIN_POSITIVE, f64::max);
        let mut step = 1.0 / lipschitz;
        let mut residual = f64::INFINITY;
        let mut g = objective.gradient(&x);

        for iteration in 0..MAX_ITERATIONS {
            // Backtracking on the gradient-based curvature test; objective
            // differences lose precision long before the iterates settle.
            loop {
                let trial: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi + step * gi).collect();
                let next = project_capped_simplex(&trial);
                let dx: Vec<f64> = next.iter().zip(&x).map(|(a, b)| a - b).collect();
                let g_next = objective.gradient(&next);
                let curvature: f64 = g.iter().zip(&g_next).zip(&dx).map(|((a, b), d)| (a - b) * d).sum();
                let sq: f64 = dx.iter().map(|d| d * d).sum();
                if curvature * step <= sq || step < 1e-300 {
                    residual = dx.iter().fold(0.0f64, |a, d| a.max(d.abs()));
                    x = next;
                    g = g_next;
                    break;
                }
                step *= 0.5;
            }
            if residual <= tolerance && iteration > 0 {
                return Ok(Allocation {
                    multiplier: objective.gradient(&x).into_iter().fold(0.0, f64::max),
                    psi: objective.psi(),
                    fractions: x,
                    method: Method::Numerical,
                    warning: None,
                });
            }
            step *= 1.25;
        }
        Err(Error::NoConvergence {
            iterations: MAX_ITERATIONS,
            residual,
        })
    }
}

/// `cluster_id,psi,fraction,method`, preceded by the sweep parameters that
/// produced the allocation.
pub fn write_allocation_rows<W: Write>(
    w: &mut csv::Writer<W>,
    radius: f64,
    sbs_density: f64,
    cache_size: usize,
    allocation: &Allocation,
) -> Result<()> {
    for (k, (psi, x)) in allocation.psi.iter().zip(&allocation.fractions).enumerate() {
        w.write_record([
            radius.to_string(),
            sbs_density.to_string(),
            cache_size.to_string(),
            k.to_string(),
            psi.to_string(),
            x.to_string(),
            allocation.method.as_str().to_string(),
        ])?;
    }
    Ok(())
}

pub const ALLOCATION_HEADER: [&str; 7] = [
    "radius",
    "sbs_density",
    "cache_size",
    "cluster_id",
    "psi",
    "fraction",
    "method",
];

/// Read fractions (in cluster order) from an allocation CSV holding a
/// single parameter point.
pub fn read_allocation_fractions<R: std::io::Read>(reader: R) -> Result<Vec<f64>> {
    let mut r = csv::Reader::from_reader(reader);
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Format {
            what: "allocation csv",
            detail: format!("missing column {name}"),
        })
    };
    let (ci, fi) = (col("cluster_id")?, col("fraction")?);
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let bad = |e: String| Error::Format {
            what: "allocation csv",
            detail: e,
        };
        let k: usize = rec[ci].parse().map_err(|e| bad(format!("cluster_id {:?}: {e}", &rec[ci])))?;
        let x: f64 = rec[fi].parse().map_err(|e| bad(format!("fraction {:?}: {e}", &rec[fi])))?;
        rows.push((k, x));
    }
    rows.sort_by_key(|r| r.0);
    if rows.is_empty() || rows.iter().enumerate().any(|(i, r)| r.0 != i) {
        return Err(Error::Format {
            what: "allocation csv",
            detail: "expected one row per cluster 0..n".into(),
        });
    }
    Ok(rows.into_iter().map(|r| r.1).collect())
}
