//! Wall-clock scaling of induction against the K-Means elbow path.

use std::hint::black_box;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{ExperimentSpec, Partitioner, SCHEMA_VERSION};
use crate::cutoff::apply_strategy;
use crate::embeddings::{generate_synthetic, l2_normalize, SentenceInstance, SyntheticSpec};
use crate::error::{Error, Result};
use crate::hac::linkage;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub schema_version: u32,
    /// `induce`, `kmeans-elbow` or `cutoff` (threshold selection alone).
    pub method: String,
    pub n: usize,
    pub dim: usize,
    pub instances: usize,
    pub reps: usize,
    pub min_seconds: f64,
    pub mean_seconds: f64,
    pub max_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingFit {
    pub schema_version: u32,
    pub method: String,
    /// Least-squares slope of `ln(min_seconds)` on `ln(n)`.
    pub slope: f64,
    pub intercept: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimingReport {
    pub rows: Vec<TimingRow>,
    pub fits: Vec<TimingFit>,
}

impl TimingReport {
    pub fn row(&self, method: &str, n: usize) -> Option<&TimingRow> {
        self.rows.iter().find(|r| r.method == method && r.n == n)
    }

    pub fn fit(&self, method: &str) -> Option<&TimingFit> {
        self.fits.iter().find(|f| f.method == method)
    }
}

/// `(slope, intercept)` of the least-squares line through `(ln x, ln y)`.
pub fn fit_loglog(points: &[(f64, f64)]) -> Result<(f64, f64)> {
    if points.len() < 2 || points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return Err(Error::DegenerateInput("log-log fit needs >= 2 positive points".into()));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let m = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / m;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateInput("log-log fit needs distinct x values".into()));
    }
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

fn measure(reps: usize, mut body: impl FnMut() -> Result<()>) -> Result<(f64, f64, f64)> {
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let start = Instant::now();
        body()?;
        times.push(start.elapsed().as_secs_f64());
    }
    let min = times.iter().copied().fold(f64::INFINITY, f64::min);
    let max = times.iter().copied().fold(0.0, f64::max);
    Ok((min, times.iter().sum::<f64>() / reps as f64, max))
}

/// `(min, mean, max)` seconds over `reps` passes of partitioning every
/// instance.
pub fn time_partitioner(
    instances: &[SentenceInstance],
    partitioner: &Partitioner,
    reps: usize,
) -> Result<(f64, f64, f64)> {
    measure(reps, || {
        for (i, inst) in instances.iter().enumerate() {
            black_box(partitioner.partition(inst, i as u64)?);
        }
        Ok(())
    })
}

fn instances_of_size(spec: &ExperimentSpec, n: usize) -> Result<Vec<SentenceInstance>> {
    let t = &spec.timing;
    let k_max = n.saturating_sub(1).clamp(1, 6);
    let synth = SyntheticSpec {
        num_instances: t.instances,
        min_tokens: n,
        max_tokens: n,
        dim: t.dim,
        min_clusters: k_max.min(2),
        max_clusters: k_max,
        num_classes: 3,
        cluster_separation: 10.0,
        noise_sigma: 0.5,
        seed: t.seed,
    };
    Ok(generate_synthetic(&synth)?.instances)
}

/// Sweeps `spec.timing.sizes`, timing `induce`, the K-Means elbow and the
/// cutoff step alone (on precomputed dendrograms). Runs on the calling thread.
pub fn run_timing(spec: &ExperimentSpec) -> Result<TimingReport> {
    spec.validate()?;
    let t = &spec.timing;
    let induce = Partitioner::Induce(spec.induction);
    let mut rows = Vec::new();
    for &n in &t.sizes {
        let instances = instances_of_size(spec, n)?;
        let dendrograms = instances
            .iter()
            .map(|i| {
                linkage(
                    &l2_normalize(&i.embeddings),
                    spec.induction.linkage,
                    spec.induction.metric,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let cells = [
            ("induce", time_partitioner(&instances, &induce, t.reps)?),
            (
                "kmeans-elbow",
                time_partitioner(&instances, &Partitioner::KMeansElbow, t.reps)?,
            ),
            (
                "cutoff",
                measure(t.reps, || {
                    for z in &dendrograms {
                        black_box(apply_strategy(z, spec.induction.strategy, &spec.induction.cutoff)?);
                    }
                    Ok(())
                })?,
            ),
        ];
        for (method, (min, mean, max)) in cells {
            rows.push(TimingRow {
                schema_version: SCHEMA_VERSION,
                method: method.into(),
                n,
                dim: t.dim,
                instances: t.instances,
                reps: t.reps,
                min_seconds: min,
                mean_seconds: mean,
                max_seconds: max,
            });
        }
    }
    let mut fits = Vec::new();
    if t.sizes.len() >= 2 {
        for method in ["induce", "kmeans-elbow"] {
            let points: Vec<(f64, f64)> = rows
                .iter()
                .filter(|r| r.method == method)
                .map(|r| (r.n as f64, r.min_seconds))
                .collect();
            let (slope, intercept) = fit_loglog(&points)?;
            fits.push(TimingFit {
                schema_version: SCHEMA_VERSION,
                method: method.into(),
                slope,
                intercept,
            });
        }
    }
    Ok(TimingReport { rows, fits })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loglog_recovers_power_law() {
        let pts: Vec<(f64, f64)> = [10.0, 20.0, 40.0].iter().map(|&n: &f64| (n, 3.0 * n.powi(2))).collect();
        let (slope, intercept) = fit_loglog(&pts).unwrap();
        assert!((slope - 2.0).abs() < 1e-12);
        assert!((intercept - 3f64.ln()).abs() < 1e-12);
        assert!(fit_loglog(&pts[..1]).is_err());
    }
}
