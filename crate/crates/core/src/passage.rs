//! Gambler's-ruin oracles and first-passage statistics for paths started
//! between two absorbing levels.

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::error::{domain, Error, Result};
use crate::kernels::{JensenConstants, TestFunctionParams};
use crate::martingale::{martingale_path, mass_functional};
use crate::noise::{next_open_unit, next_standard_normal, uniform_stream};
use crate::solver::{FieldState, SolverConfig};
use crate::stats::{proportion_se, wilson_interval};

/// Normal quantile for the reported 95% intervals.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Minimum ensemble size accepted by [`first_passage_mc`].
pub const MIN_PATHS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuinProblem {
    pub start: f64,
    pub lower: f64,
    pub upper: f64,
    /// Paths still inside `(lower, upper)` at this time count as failures.
    pub horizon: Option<f64>,
}

impl RuinProblem {
    pub fn new(start: f64, lower: f64, upper: f64, horizon: Option<f64>) -> Result<Self> {
        let p = Self {
            start,
            lower,
            upper,
            horizon,
        };
        p.validate()?;
        Ok(p)
    }

    /// Start 2, lower level 1, upper level `l`.
    pub fn doubling(l: f64) -> Result<Self> {
        Self::new(2.0, 1.0, l, None)
    }

    pub fn with_horizon(mut self, horizon: f64) -> Result<Self> {
        self.horizon = Some(horizon);
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        let finite = self.start.is_finite() && self.lower.is_finite() && self.upper.is_finite();
        if !finite || !(self.lower < self.start && self.start < self.upper) {
            return domain(format!(
                "need lower < start < upper, got {} < {} < {}",
                self.lower, self.start, self.upper
            ));
        }
        if let Some(h) = self.horizon {
            if !(h > 0.0) {
                return domain(format!("horizon must be positive, got {h}"));
            }
        }
        Ok(())
    }
}

/// Probability that a continuous martingale started at `start` reaches
/// `upper` before `lower`.
pub fn ruin_probability_analytic(p: &RuinProblem) -> Result<f64> {
    p.validate()?;
    Ok((p.start - p.lower) / (p.upper - p.lower))
}

/// `T(L) = 16 C₁⁻² L⁸`.
pub fn horizon(l: f64, consts: &JensenConstants) -> f64 {
    16.0 / (consts.c1 * consts.c1) * l.powi(8)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReflectionTail {
    /// `P(sup_{[0,s]} B < c) = P(|B_s| ≤ c)`.
    pub value: f64,
    /// `2c (2πs)^{-1/2}`.
    pub bound: f64,
}

pub fn reflection_tail(c: f64, s: f64) -> Result<ReflectionTail> {
    if !(c > 0.0) || !(s > 0.0) || s.is_infinite() {
        return domain(format!("need c > 0 and finite s > 0, got c = {c}, s = {s}"));
    }
    let value = if c.is_infinite() {
        1.0
    } else {
        erf(c / (2.0 * s).sqrt())
    };
    Ok(ReflectionTail {
        value,
        bound: 2.0 * c / (2.0 * std::f64::consts::PI * s).sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Passage {
    Upper,
    Lower,
    Timeout,
}

/// A family of paths indexed by `0..n`, each classified against a pair of
/// absorbing levels.
pub trait PathSource: Sync {
    fn first_passage(&self, p: &RuinProblem, index: u64) -> Result<Passage>;
}

/// Classifies a discretely sampled path: a barrier is hit when a sample
/// reaches it. Samples past the horizon are ignored.
pub fn classify_samples<I>(samples: I, p: &RuinProblem) -> Passage
where
    I: IntoIterator<Item = (f64, f64)>,
{
    let cap = p.horizon.unwrap_or(f64::INFINITY);
    for (t, m) in samples {
        if t > cap {
            break;
        }
        if m >= p.upper {
            return Passage::Upper;
        }
        if m <= p.lower {
            return Passage::Lower;
        }
    }
    Passage::Timeout
}

/// Euler-sampled Brownian motion `σB` with optional bridge crossing correction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BrownianPaths {
    pub dt: f64,
    pub sigma: f64,
    pub seed: u64,
    pub bridge_correction: bool,
}

impl BrownianPaths {
    pub fn new(dt: f64, seed: u64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return domain(format!("dt must be positive, got {dt}"));
        }
        Ok(Self {
            dt,
            sigma: 1.0,
            seed,
            bridge_correction: true,
        })
    }

    pub fn without_bridge(mut self) -> Self {
        self.bridge_correction = false;
        self
    }

    /// Walks path `index` from `start` until it leaves `(lower, upper)` or
    /// time reaches `cap`. Either barrier may be infinite.
    fn walk(&self, start: f64, lower: f64, upper: f64, cap: f64, index: u64) -> Passage {
        let mut rng = uniform_stream(self.seed, index);
        let (mut t, mut x) = (0.0, start);
        loop {
            if t >= cap {
                return Passage::Timeout;
            }
            let h = self.dt.min(cap - t);
            let var = self.sigma * self.sigma * h;
            let y = x + var.sqrt() * next_standard_normal(&mut rng);
            t += h;
            if y >= upper {
                return Passage::Upper;
            }
            if y <= lower {
                return Passage::Lower;
            }
            if self.bridge_correction {
                if let Some(hit) = bridge_crossing(&mut rng, x, y, lower, upper, var) {
                    return hit;
                }
            }
            x = y;
        }
    }

    /// Monte Carlo estimate of `P(sup_{[0,s]} B < c)` for `B(0) = 0`.
    pub fn sup_below_fraction(&self, c: f64, s: f64, n_paths: usize) -> Result<(f64, f64)> {
        if n_paths < MIN_PATHS {
            return Err(Error::InsufficientData(format!("need at least {MIN_PATHS} paths")));
        }
        let below = (0..n_paths as u64)
            .into_par_iter()
            .filter(|&k| self.walk(0.0, f64::NEG_INFINITY, c, s, k) == Passage::Timeout)
            .count();
        let f = below as f64 / n_paths as f64;
        Ok((f, proportion_se(f, n_paths as u64)))
    }
}

/// Decides whether the bridge between two inside samples touched a barrier.
fn bridge_crossing(
    rng: &mut ChaCha8Rng,
    x: f64,
    y: f64,
    lower: f64,
    upper: f64,
    var: f64,
) -> Option<Passage> {
    let up = if upper.is_finite() {
        (-2.0 * (upper - x) * (upper - y) / var).exp()
    } else {
        0.0
    };
    let down = if lower.is_finite() {
        (-2.0 * (x - lower) * (y - lower) / var).exp()
    } else {
        0.0
    };
    if up == 0.0 && down == 0.0 {
        return None;
    }
    let u = next_open_unit(rng);
    if u <= up {
        Some(Passage::Upper)
    } else if u <= up + down {
        Some(Passage::Lower)
    } else {
        None
    }
}

impl PathSource for BrownianPaths {
    fn first_passage(&self, p: &RuinProblem, index: u64) -> Result<Passage> {
        p.validate()?;
        let cap = p.horizon.unwrap_or(f64::INFINITY);
        Ok(self.walk(p.start, p.lower, p.upper, cap, index))
    }
}

/// Mass paths `M(t)` of the solver started from `u0` rescaled so `M(0)` equals
/// the problem's start value.
#[derive(Debug, Clone)]
pub struct SpdeMassPaths {
    pub cfg: SolverConfig,
    pub params: TestFunctionParams,
    pub consts: JensenConstants,
    pub seed: u64,
}

impl SpdeMassPaths {
    pub fn new(
        cfg: &SolverConfig,
        params: TestFunctionParams,
        consts: JensenConstants,
        seed: u64,
        start: f64,
    ) -> Result<Self> {
        let state = FieldState {
            time: 0.0,
            values: cfg.u0.clone(),
        };
        let m0 = mass_functional(&state, &params, cfg.lattice.dx)?;
        if !(m0 > 0.0) {
            return domain("initial mass must be positive to rescale");
        }
        let u0 = cfg.u0.iter().map(|u| u * start / m0).collect();
        Ok(Self {
            cfg: cfg.clone().with_u0(u0)?,
            params,
            consts,
            seed,
        })
    }

    pub fn initial_mass(&self) -> Result<f64> {
        let state = FieldState {
            time: 0.0,
            values: self.cfg.u0.clone(),
        };
        mass_functional(&state, &self.params, self.cfg.lattice.dx)
    }
}

impl PathSource for SpdeMassPaths {
    fn first_passage(&self, p: &RuinProblem, index: u64) -> Result<Passage> {
        let path = martingale_path(&self.cfg, self.params, self.consts, self.seed, index)?;
        Ok(classify_samples(
            path.times.iter().copied().zip(path.m_values.iter().copied()),
            p,
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassageEstimate {
    pub n_paths: usize,
    pub upper_hits: usize,
    pub lower_hits: usize,
    pub timeouts: usize,
    pub hit_fraction: f64,
    pub timeout_fraction: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub analytic: f64,
}

impl PassageEstimate {
    /// `|hit_fraction − analytic|` in units of the estimate's standard error.
    pub fn z_score(&self) -> f64 {
        let d = self.hit_fraction - self.analytic;
        if self.std_error == 0.0 {
            return if d == 0.0 { 0.0 } else { f64::INFINITY };
        }
        d.abs() / self.std_error
    }
}

pub const PASSAGE_CSV_HEADER: &str = "L,n_paths,hit_fraction,ci_low,ci_high,analytic,timeout_fraction";

impl PassageEstimate {
    pub fn csv_row(&self, l: f64) -> String {
        format!(
            "{l},{},{},{},{},{},{}",
            self.n_paths, self.hit_fraction, self.ci_low, self.ci_high, self.analytic, self.timeout_fraction
        )
    }
}

/// Classifies paths `0..n_paths` of `source` and summarizes the upper-hit rate.
pub fn first_passage_mc<S: PathSource + ?Sized>(
    source: &S,
    p: &RuinProblem,
    n_paths: usize,
) -> Result<PassageEstimate> {
    if n_paths < MIN_PATHS {
        return Err(Error::InsufficientData(format!(
            "first passage needs at least {MIN_PATHS} paths, got {n_paths}"
        )));
    }
    let analytic = ruin_probability_analytic(p)?;
    let outcomes: Vec<Passage> = (0..n_paths as u64)
        .into_par_iter()
        .map(|k| source.first_passage(p, k))
        .collect::<Result<_>>()?;
    let count = |which| outcomes.iter().filter(|&&o| o == which).count();
    let (upper_hits, lower_hits, timeouts) = (count(Passage::Upper), count(Passage::Lower), count(Passage::Timeout));
    let hit_fraction = upper_hits as f64 / n_paths as f64;
    let (ci_low, ci_high) = wilson_interval(upper_hits as u64, n_paths as u64, Z95);
    Ok(PassageEstimate {
        n_paths,
        upper_hits,
        lower_hits,
        timeouts,
        hit_fraction,
        timeout_fraction: timeouts as f64 / n_paths as f64,
        std_error: proportion_se(hit_fraction, n_paths as u64),
        ci_low,
        ci_high,
        analytic,
    })
}
