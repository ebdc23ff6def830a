//! Per-instance dendrogram threshold from the tail of the merge heights.
//!
//! The last `r = max(1, floor(rho * (n - 1)))` heights form the recent
//! window. When the window holds more than three heights and its second
//! differences `kappa_j = h[j+2] - 2 h[j+1] + h[j]` carry signal above
//! `epsilon`, the cut sits at the height anchoring the largest acceleration,
//! capped by the fallback `mean + lambda * std` of the window. Otherwise the
//! fallback alone is used.
//!
//! The acceleration branch requires both a long window and a strong signal.
//! `kappa_j` is anchored at the first height of its triple, so the chosen
//! height is `window[argmax kappa]`; ties resolve to the earliest index.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hac::LinkageMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutoffConfig {
    /// Fraction of merges in the recent window, in `(0, 1]`.
    pub rho: f64,
    /// Weight of the window's standard deviation in the fallback.
    pub lambda: f64,
    /// Minimum `max |kappa|` for the acceleration branch.
    pub epsilon: f64,
}

impl Default for CutoffConfig {
    fn default() -> Self {
        CutoffConfig {
            rho: 0.3,
            lambda: 1.0,
            epsilon: 1e-8,
        }
    }
}

impl CutoffConfig {
    /// `lambda = 0` is accepted so sensitivity sweeps can start at zero.
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::Config(format!("rho must lie in (0, 1], got {}", self.rho)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        if self.epsilon.is_nan() || self.epsilon < 0.0 {
            return Err(Error::Config(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CutoffBranch {
    /// `min(window[j*], fallback)`.
    AccelerationMin,
    /// `window[j*]` with no fallback cap (fixed-window ablation only).
    AccelerationOnly,
    FallbackOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutoffResult {
    pub delta_elbow: f64,
    pub branch: CutoffBranch,
    /// Window length.
    pub r: usize,
    pub kappa: Vec<f64>,
    /// Index into the window (and into `kappa`) of the chosen acceleration.
    pub j_star: Option<usize>,
    pub delta_fallback: f64,
}

impl CutoffResult {
    /// Result for a single-token instance, where no dendrogram exists.
    pub fn trivial() -> Self {
        CutoffResult {
            delta_elbow: 0.0,
            branch: CutoffBranch::FallbackOnly,
            r: 0,
            kappa: Vec::new(),
            j_star: None,
            delta_fallback: 0.0,
        }
    }
}

/// Threshold selection rules compared in the cutoff ablation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum CutoffStrategy {
    /// Acceleration-fallback criterion with the configured `rho`.
    Dynamic,
    /// Fallback threshold over the configured `rho` window.
    FallbackOnly,
    /// Acceleration elbow over a fixed-`rho` window, uncapped.
    AccelerationOnly(f64),
    /// `min(acceleration elbow, fallback)` over a fixed-`rho` window.
    AccelerationMin(f64),
}

impl CutoffStrategy {
    pub const FIXED_RHOS: [f64; 3] = [0.2, 0.5, 0.8];

    /// Dynamic, fallback-only and the two fixed families at each fixed rho.
    pub fn ablation_grid() -> Vec<CutoffStrategy> {
        let mut grid = vec![CutoffStrategy::Dynamic, CutoffStrategy::FallbackOnly];
        grid.extend(Self::FIXED_RHOS.iter().map(|&r| CutoffStrategy::AccelerationOnly(r)));
        grid.extend(Self::FIXED_RHOS.iter().map(|&r| CutoffStrategy::AccelerationMin(r)));
        grid
    }
}

impl fmt::Display for CutoffStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CutoffStrategy::Dynamic => f.write_str("dynamic"),
            CutoffStrategy::FallbackOnly => f.write_str("fallback"),
            CutoffStrategy::AccelerationOnly(rho) => write!(f, "accel@{rho}"),
            CutoffStrategy::AccelerationMin(rho) => write!(f, "accel-min@{rho}"),
        }
    }
}

impl FromStr for CutoffStrategy {
    type Err = Error;

    /// Accepts the [`Display`](fmt::Display) forms.
    fn from_str(s: &str) -> Result<Self> {
        let parse_rho = |v: &str| -> Result<f64> {
            let rho: f64 = v
                .parse()
                .map_err(|_| Error::Config(format!("bad rho in strategy `{s}`")))?;
            if rho > 0.0 && rho <= 1.0 {
                Ok(rho)
            } else {
                Err(Error::Config(format!("rho out of (0, 1] in strategy `{s}`")))
            }
        };
        match s.split_once('@') {
            None if s == "dynamic" => Ok(CutoffStrategy::Dynamic),
            None if s == "fallback" => Ok(CutoffStrategy::FallbackOnly),
            Some(("accel", rho)) => Ok(CutoffStrategy::AccelerationOnly(parse_rho(rho)?)),
            Some(("accel-min", rho)) => Ok(CutoffStrategy::AccelerationMin(parse_rho(rho)?)),
            _ => Err(Error::Config(format!("unknown cutoff strategy `{s}`"))),
        }
    }
}

/// Window length for `n - 1` merges.
pub fn window_len(merges: usize, rho: f64) -> usize {
    ((rho * merges as f64).floor() as usize).clamp(1, merges.max(1))
}

/// The last `r` merge heights, oldest first.
pub fn recent_window(z: &LinkageMatrix, rho: f64) -> Vec<f64> {
    let heights = z.heights();
    let r = window_len(heights.len(), rho);
    heights[heights.len() - r..].to_vec()
}

/// Second differences of consecutive triples; empty below three heights.
pub fn accelerations(window: &[f64]) -> Vec<f64> {
    window.windows(3).map(|t| t[2] - 2.0 * t[1] + t[0]).collect()
}

/// `mean + lambda * std` with the population standard deviation.
pub fn fallback_threshold(window: &[f64], lambda: f64) -> Result<f64> {
    if window.is_empty() {
        return Err(Error::DegenerateInput("fallback over an empty window".into()));
    }
    let r = window.len() as f64;
    let mean = window.iter().sum::<f64>() / r;
    let var = window.iter().map(|h| (h - mean) * (h - mean)).sum::<f64>() / r;
    Ok(mean + lambda * var.sqrt())
}

/// Earliest index of the maximum.
fn first_argmax(values: &[f64]) -> Option<usize> {
    values
        .iter()
        .enumerate()
        .fold(None, |best: Option<(usize, f64)>, (i, &v)| match best {
            Some((_, b)) if v <= b => best,
            _ => Some((i, v)),
        })
        .map(|(i, _)| i)
}

struct WindowAnalysis {
    window: Vec<f64>,
    kappa: Vec<f64>,
    fallback: f64,
    /// Present when the window is long enough and the signal strong enough.
    j_star: Option<usize>,
}

fn analyze(z: &LinkageMatrix, rho: f64, lambda: f64, epsilon: f64) -> Result<WindowAnalysis> {
    let window = recent_window(z, rho);
    let kappa = accelerations(&window);
    let fallback = fallback_threshold(&window, lambda)?;
    let strong = kappa.iter().any(|k| k.abs() > epsilon);
    let j_star = if window.len() > 3 && strong {
        first_argmax(&kappa)
    } else {
        None
    };
    Ok(WindowAnalysis {
        window,
        kappa,
        fallback,
        j_star,
    })
}

impl WindowAnalysis {
    fn into_result(self, capped: bool) -> CutoffResult {
        let (delta_elbow, branch) = match self.j_star {
            Some(j) if capped => (self.window[j].min(self.fallback), CutoffBranch::AccelerationMin),
            Some(j) => (self.window[j], CutoffBranch::AccelerationOnly),
            None => (self.fallback, CutoffBranch::FallbackOnly),
        };
        CutoffResult {
            delta_elbow,
            branch,
            r: self.window.len(),
            kappa: self.kappa,
            j_star: self.j_star,
            delta_fallback: self.fallback,
        }
    }
}

/// The acceleration-fallback threshold for one dendrogram.
pub fn compute_cutoff(z: &LinkageMatrix, cfg: &CutoffConfig) -> Result<CutoffResult> {
    cfg.validate()?;
    Ok(analyze(z, cfg.rho, cfg.lambda, cfg.epsilon)?.into_result(true))
}

/// Threshold under one of the ablation strategies.
pub fn apply_strategy(z: &LinkageMatrix, strategy: CutoffStrategy, cfg: &CutoffConfig) -> Result<CutoffResult> {
    cfg.validate()?;
    let fixed = |rho: f64| -> Result<WindowAnalysis> {
        CutoffConfig { rho, ..*cfg }.validate()?;
        analyze(z, rho, cfg.lambda, cfg.epsilon)
    };
    match strategy {
        CutoffStrategy::Dynamic => compute_cutoff(z, cfg),
        CutoffStrategy::FallbackOnly => {
            let mut analysis = analyze(z, cfg.rho, cfg.lambda, cfg.epsilon)?;
            analysis.j_star = None;
            Ok(analysis.into_result(true))
        }
        CutoffStrategy::AccelerationOnly(rho) => Ok(fixed(rho)?.into_result(false)),
        CutoffStrategy::AccelerationMin(rho) => Ok(fixed(rho)?.into_result(true)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hac::Merge;

    /// Chain dendrogram whose merge heights are exactly `heights`.
    pub(crate) fn chain(heights: &[f64]) -> LinkageMatrix {
        let n = heights.len() + 1;
        let mut merges = Vec::new();
        let mut current = 0;
        for (t, &h) in heights.iter().enumerate() {
            merges.push(Merge {
                left: current.min(t + 1),
                right: current.max(t + 1),
                height: h,
                size: t + 2,
            });
            current = n + t;
        }
        LinkageMatrix::new(n, merges).unwrap()
    }

    #[test]
    fn window_sizes() {
        let z = chain(&[1.0; 20]);
        assert_eq!(recent_window(&z, 0.2).len(), 4);
        assert_eq!(recent_window(&chain(&[3.0]), 0.7), vec![3.0]);
        assert_eq!(recent_window(&chain(&[1.0; 10]), 1.0).len(), 10);
        let z = chain(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(recent_window(&z, 0.3), vec![5.0, 6.0]);
    }

    #[test]
    fn acceleration_values() {
        assert_eq!(accelerations(&[1.0; 5]), vec![0.0; 3]);
        assert_eq!(accelerations(&[1.0, 2.0, 3.0, 10.0, 11.0]), vec![0.0, 6.0, -6.0]);
        assert!(accelerations(&[1.0, 2.0]).is_empty());
    }

    #[test]
    fn fallback_values() {
        assert_eq!(fallback_threshold(&[1.0; 4], 2.0).unwrap(), 1.0);
        let f = fallback_threshold(&[1.0, 2.0, 3.0, 10.0, 11.0], 1.0).unwrap();
        assert!((f - 9.623742416388575).abs() < 1e-12);
        assert_eq!(fallback_threshold(&[4.5], 3.0).unwrap(), 4.5);
        assert!(matches!(fallback_threshold(&[], 1.0), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn hand_window_takes_acceleration_branch() {
        let z = chain(&[1.0, 2.0, 3.0, 10.0, 11.0]);
        let cfg = CutoffConfig {
            rho: 1.0,
            ..CutoffConfig::default()
        };
        let res = compute_cutoff(&z, &cfg).unwrap();
        assert_eq!(res.branch, CutoffBranch::AccelerationMin);
        assert_eq!(res.j_star, Some(1));
        assert_eq!(res.delta_elbow, 2.0);
        assert_eq!(res.r, 5);
        let only = apply_strategy(&z, CutoffStrategy::AccelerationOnly(1.0), &cfg).unwrap();
        assert_eq!(only.delta_elbow, 2.0);
        assert_eq!(only.branch, CutoffBranch::AccelerationOnly);
    }

    #[test]
    fn weak_and_short_windows_fall_back() {
        let cfg = CutoffConfig {
            rho: 1.0,
            ..CutoffConfig::default()
        };
        let res = compute_cutoff(&chain(&[1.0; 5]), &cfg).unwrap();
        assert_eq!(res.branch, CutoffBranch::FallbackOnly);
        assert_eq!(res.delta_elbow, 1.0);

        // n = 8, rho = 0.3 -> r = 2.
        let res = compute_cutoff(&chain(&[0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 50.0]), &CutoffConfig::default()).unwrap();
        assert_eq!(res.r, 2);
        assert_eq!(res.branch, CutoffBranch::FallbackOnly);
        assert_eq!(res.delta_elbow, fallback_threshold(&[1.0, 50.0], 1.0).unwrap());
    }

    #[test]
    fn strategies_agree_where_defined() {
        let z = chain(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 2.0, 2.2, 2.3]);
        let cfg = CutoffConfig {
            rho: 0.5,
            ..CutoffConfig::default()
        };
        let dynamic = apply_strategy(&z, CutoffStrategy::Dynamic, &cfg).unwrap();
        assert_eq!(dynamic.branch, CutoffBranch::AccelerationMin);
        assert_eq!(
            dynamic,
            apply_strategy(&z, CutoffStrategy::AccelerationMin(0.5), &cfg).unwrap()
        );
        let fb = apply_strategy(&z, CutoffStrategy::FallbackOnly, &CutoffConfig { lambda: 2.0, ..cfg }).unwrap();
        assert_eq!(fb.branch, CutoffBranch::FallbackOnly);
        assert_eq!(fb.delta_elbow, fb.delta_fallback);
    }

    #[test]
    fn constant_window_fallback_strategy() {
        let cfg = CutoffConfig {
            lambda: 2.0,
            rho: 1.0,
            ..CutoffConfig::default()
        };
        let res = apply_strategy(&chain(&[1.0; 4]), CutoffStrategy::FallbackOnly, &cfg).unwrap();
        assert_eq!(res.delta_elbow, 1.0);
    }

    #[test]
    fn acceleration_only_is_total() {
        let res = apply_strategy(
            &chain(&[1.0, 2.0]),
            CutoffStrategy::AccelerationOnly(0.2),
            &CutoffConfig::default(),
        )
        .unwrap();
        assert_eq!(res.branch, CutoffBranch::FallbackOnly);
        assert_eq!(res.delta_elbow, res.delta_fallback);
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in CutoffStrategy::ablation_grid() {
            assert_eq!(s.to_string().parse::<CutoffStrategy>().unwrap(), s);
        }
        assert_eq!(CutoffStrategy::ablation_grid().len(), 8);
        assert!("accel@0".parse::<CutoffStrategy>().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(CutoffConfig {
            rho: 0.0,
            ..CutoffConfig::default()
        }
        .validate()
        .is_err());
        assert!(CutoffConfig {
            rho: 1.5,
            ..CutoffConfig::default()
        }
        .validate()
        .is_err());
        assert!(CutoffConfig {
            lambda: -1.0,
            ..CutoffConfig::default()
        }
        .validate()
        .is_err());
    }
}
