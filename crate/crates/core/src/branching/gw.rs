use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::kernels::{dirichlet_kernel, phi_unchecked, Domain, TestFunctionParams};
use crate::noise::uniform_stream;
use crate::solver::FieldState;
use crate::stats::{proportion_se, wilson_interval};

/// Both forms of the offspring mean at level `L`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GwMean {
    /// `L^{2γ-3}`.
    pub heuristic: f64,
    /// `K⁻¹ 4^{1-2γ} L^{2(γ-3/2)}`.
    pub bound: f64,
    pub heuristic_supercritical: bool,
    pub bound_supercritical: bool,
}

pub fn gw_mean(gamma: f64, l_level: f64, k_const: f64) -> Result<GwMean> {
    if !(l_level > 1.0 && k_const > 0.0 && gamma > 1.0) {
        return domain(format!("need L > 1, K > 0, γ > 1; got L = {l_level}, K = {k_const}, γ = {gamma}"));
    }
    let heuristic = l_level.powf(2.0 * gamma - 3.0);
    let bound = 4f64.powf(1.0 - 2.0 * gamma) * l_level.powf(2.0 * (gamma - 1.5)) / k_const;
    Ok(GwMean {
        heuristic,
        bound,
        heuristic_supercritical: heuristic > 1.0,
        bound_supercritical: bound > 1.0,
    })
}

/// Which functional of the field decides a successful escalation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuccessEvent {
    /// `∫ φ u dx ≥ L`; its probability is bounded below by the ruin estimate.
    PhiMass,
    /// `∫ G(2T, x, y) u(0, y) dy ≥ L` at the test function's center.
    KernelMass,
}

impl SuccessEvent {
    /// Value of the deciding functional for `state` on `domain`.
    pub fn functional(&self, state: &FieldState, p: &TestFunctionParams, domain: &Domain, dx: f64) -> Result<f64> {
        let nodes = (0..state.values.len()).map(|j| (j + 1) as f64 * dx);
        match self {
            Self::PhiMass => Ok(nodes
                .zip(&state.values)
                .map(|(x, u)| phi_unchecked(state.time.min(p.horizon), x, p) * u)
                .sum::<f64>()
                * dx),
            Self::KernelMass => nodes
                .zip(&state.values)
                .map(|(y, u)| dirichlet_kernel(2.0 * p.horizon, p.center, y, domain).map(|g| g * u))
                .sum::<Result<f64>>()
                .map(|s| s * dx),
        }
    }

    pub fn occurred(&self, value: f64, l_level: f64) -> bool {
        value >= l_level
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GwModel {
    pub p: f64,
    pub n_offspring: u64,
    pub k_const: f64,
    pub l_level: f64,
    pub gamma: f64,
}

impl GwModel {
    /// Binomial(N, p) offspring.
    pub fn binomial(n_offspring: u64, p: f64) -> Result<Self> {
        let m = Self {
            p,
            n_offspring,
            k_const: 1.0,
            l_level: f64::NAN,
            gamma: f64::NAN,
        };
        m.validate()?;
        Ok(m)
    }

    /// `p = 1/(2(L-1))` from the ruin estimate and `N = ⌊K⁻¹ L^{2(γ-1)}⌋ ∨ 1`.
    pub fn from_levels(gamma: f64, l_level: f64, k_const: f64) -> Result<Self> {
        if !(l_level > 2.0 && k_const > 0.0 && gamma > 1.0) {
            return domain(format!("need L > 2, K > 0, γ > 1; got L = {l_level}, K = {k_const}, γ = {gamma}"));
        }
        let n = (l_level.powf(2.0 * (gamma - 1.0)) / k_const).floor().max(1.0) as u64;
        let m = Self {
            p: 1.0 / (2.0 * (l_level - 1.0)),
            n_offspring: n,
            k_const,
            l_level,
            gamma,
        };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) || self.n_offspring == 0 {
            return domain(format!("need p ∈ [0,1] and N ≥ 1, got p = {}, N = {}", self.p, self.n_offspring));
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        self.p * self.n_offspring as f64
    }

    /// Offspring generating function `E[q^Z] = (1 - p + p q)^N`.
    pub fn pgf(&self, q: f64) -> f64 {
        (1.0 - self.p + self.p * q).powi(self.n_offspring as i32)
    }

    fn pgf_derivative(&self, q: f64) -> f64 {
        let n = self.n_offspring as f64;
        n * self.p * (1.0 - self.p + self.p * q).powi(self.n_offspring as i32 - 1)
    }

    fn degenerate(&self) -> bool {
        self.p == 1.0 && self.n_offspring == 1
    }
}

/// Smallest fixed point of `q = E[q^Z]` in `[0, 1]`.
pub fn gw_extinction(model: &GwModel) -> Result<f64> {
    model.validate()?;
    if model.degenerate() {
        return Ok(0.0);
    }
    if model.mean() <= 1.0 {
        return Ok(1.0);
    }
    let mut q = 0.0;
    for _ in 0..1_000_000 {
        let next = model.pgf(q);
        let done = (next - q).abs() < 1e-12;
        q = next;
        if done {
            break;
        }
    }
    // Newton polish; the root is simple and below 1 in the supercritical case.
    for _ in 0..20 {
        let step = (model.pgf(q) - q) / (model.pgf_derivative(q) - 1.0);
        let next = q - step;
        if !(0.0..1.0).contains(&next) {
            break;
        }
        q = next;
        if step.abs() < 1e-16 {
            break;
        }
    }
    Ok(q)
}

/// Population above which a tree counts as escaped.
pub const POPULATION_CAP: u64 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GwSimulation {
    pub n_trees: usize,
    pub generations: usize,
    pub survivors: usize,
    /// Survivors stopped at the population cap.
    pub truncated: usize,
    pub survival_fraction: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Fraction of `n_trees` trees with a living particle after `generations`;
/// tree `k` uses auxiliary stream `k` of `seed`.
pub fn gw_simulate(model: &GwModel, generations: usize, n_trees: usize, seed: u64) -> Result<GwSimulation> {
    model.validate()?;
    if generations == 0 {
        return domain("need at least one generation");
    }
    if n_trees == 0 {
        return Err(Error::InsufficientData("need at least one tree".into()));
    }
    let outcomes: Vec<(bool, bool)> = (0..n_trees as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = uniform_stream(seed, k);
            let mut pop = 1u64;
            for _ in 0..generations {
                let trials = pop * model.n_offspring;
                pop = Binomial::new(trials, model.p)
                    .map_err(|e| Error::Domain(e.to_string()))?
                    .sample(&mut rng);
                if pop == 0 {
                    return Ok((false, false));
                }
                if pop > POPULATION_CAP {
                    return Ok((true, true));
                }
            }
            Ok((true, false))
        })
        .collect::<Result<_>>()?;
    let survivors = outcomes.iter().filter(|o| o.0).count();
    let truncated = outcomes.iter().filter(|o| o.1).count();
    let f = survivors as f64 / n_trees as f64;
    let (ci_low, ci_high) = wilson_interval(survivors as u64, n_trees as u64, crate::passage::Z95);
    Ok(GwSimulation {
        n_trees,
        generations,
        survivors,
        truncated,
        survival_fraction: f,
        std_error: proportion_se(f, n_trees as u64),
        ci_low,
        ci_high,
    })
}

/// `(γ, L, K)` points of the default sweep, six sub- and six supercritical.
pub const DEFAULT_SWEEP: [(f64, f64, f64); 12] = [
    (1.25, 4.0, 1.0),
    (1.25, 8.0, 1.0),
    (1.25, 16.0, 2.0),
    (1.5, 4.0, 1.0),
    (1.5, 8.0, 2.0),
    (1.5, 16.0, 1.0),
    (1.75, 4.0, 1.0),
    (1.75, 16.0, 1.0),
    (1.75, 32.0, 2.0),
    (2.0, 4.0, 2.0),
    (2.0, 8.0, 1.0),
    (2.0, 16.0, 2.0),
];

pub const GW_CSV_HEADER: &str =
    "gamma,L,K,p,N,mean,extinction_prob,simulated_survival,ci_low,ci_high,truncated";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GwSweepRow {
    pub model: GwModel,
    pub extinction: f64,
    pub simulation: GwSimulation,
}

impl GwSweepRow {
    /// Distance between simulated and predicted survival in standard errors
    /// of the prediction; exact agreement when both are degenerate.
    pub fn z_score(&self) -> f64 {
        let s = 1.0 - self.extinction;
        let se = proportion_se(s, self.simulation.n_trees as u64);
        let d = (self.simulation.survival_fraction - s).abs();
        if se == 0.0 {
            return if d == 0.0 { 0.0 } else { f64::INFINITY };
        }
        d / se
    }

    pub fn csv_row(&self) -> String {
        let m = &self.model;
        let s = &self.simulation;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            m.gamma,
            m.l_level,
            m.k_const,
            m.p,
            m.n_offspring,
            m.mean(),
            self.extinction,
            s.survival_fraction,
            s.ci_low,
            s.ci_high,
            s.truncated
        )
    }
}

/// Extinction by fixed point and by simulation for each `(γ, L, K)`.
pub fn gw_sweep(points: &[(f64, f64, f64)], generations: usize, n_trees: usize, seed: u64) -> Result<Vec<GwSweepRow>> {
    points
        .iter()
        .enumerate()
        .map(|(i, &(g, l, k))| {
            let model = GwModel::from_levels(g, l, k)?;
            Ok(GwSweepRow {
                model,
                extinction: gw_extinction(&model)?,
                simulation: gw_simulate(&model, generations, n_trees, seed.wrapping_add(i as u64))?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn critical_exponent_is_exactly_one() {
        for l in [1.5, 2.0, 3.0, 10.0, 1e6] {
            assert_eq!(gw_mean(1.5, l, 1.0).unwrap().heuristic, 1.0);
        }
        assert_eq!(gw_mean(2.0, 128.0, 1.0).unwrap().bound, 2.0);
    }

    #[test]
    fn bound_decreases_below_critical() {
        let b: Vec<f64> = [4.0, 16.0, 64.0, 256.0].iter().map(|&l| gw_mean(1.25, l, 1.0).unwrap().bound).collect();
        assert!(b.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn binomial_four_half_matches_cubic_root() {
        // With s = (1+q)/2 the fixed point solves s³ + s² + s − 1 = 0;
        // Cardano on the depressed cubic t³ + (2/3)t − 34/27, s = t − 1/3.
        let (p, q): (f64, f64) = (2.0 / 3.0, -34.0 / 27.0);
        let d = (q * q / 4.0 + p * p * p / 27.0).sqrt();
        let s = (-q / 2.0 + d).cbrt() + (-q / 2.0 - d).cbrt() - 1.0 / 3.0;
        let q = gw_extinction(&GwModel::binomial(4, 0.5).unwrap()).unwrap();
        assert!((q - (2.0 * s - 1.0)).abs() < 1e-12, "{q} vs {}", 2.0 * s - 1.0);
    }

    #[test]
    fn degenerate_and_empty_laws() {
        let one = GwModel::binomial(1, 1.0).unwrap();
        assert_eq!(gw_extinction(&one).unwrap(), 0.0);
        assert_eq!(gw_simulate(&one, 10, 100, 1).unwrap().survival_fraction, 1.0);
        let none = GwModel::binomial(3, 0.0).unwrap();
        assert_eq!(gw_extinction(&none).unwrap(), 1.0);
        assert_eq!(gw_simulate(&none, 1, 100, 1).unwrap().survival_fraction, 0.0);
    }

    #[test]
    fn simulation_matches_fixed_point() {
        let m = GwModel::binomial(4, 0.5).unwrap();
        let q = gw_extinction(&m).unwrap();
        let sim = gw_simulate(&m, 50, 20_000, 9).unwrap();
        let se = proportion_se(1.0 - q, 20_000);
        assert!((sim.survival_fraction - (1.0 - q)).abs() <= 3.0 * se, "{sim:?} {q}");
    }

    #[test]
    fn simulation_is_deterministic() {
        let m = GwModel::binomial(3, 0.4).unwrap();
        assert_eq!(gw_simulate(&m, 20, 500, 4).unwrap(), gw_simulate(&m, 20, 500, 4).unwrap());
    }

    #[test]
    fn success_events_differ_but_agree_on_positivity() {
        let dom = Domain::new(4.0).unwrap();
        let p = TestFunctionParams::centered(0.5, 2.0).unwrap();
        let dx = 4.0 / 64.0;
        let state = FieldState { time: 0.0, values: vec![1.0; 63] };
        let a = SuccessEvent::PhiMass.functional(&state, &p, &dom, dx).unwrap();
        let b = SuccessEvent::KernelMass.functional(&state, &p, &dom, dx).unwrap();
        assert!(a > 0.0 && b > 0.0 && (a - b).abs() > 1e-6);
    }

    proptest! {
        #[test]
        fn survival_iff_supercritical(n in 1u64..40, p in 0.001f64..0.999) {
            let m = GwModel::binomial(n, p).unwrap();
            let q = gw_extinction(&m).unwrap();
            prop_assert!((0.0..=1.0).contains(&q));
            prop_assert_eq!(q < 1.0, m.mean() > 1.0);
            if m.mean() > 1.0 {
                prop_assert!((m.pgf(q) - q).abs() < 1e-10);
            }
        }
    }
}
