//! The renormalization map `ṽ(t,x) = L̄⁻¹ u(t L̄^{4(1-γ)}, x L̄^{2(1-γ)})`
//! and checks that the scheme and its ensembles respect it.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::kernels::Domain;
use crate::noise::{sample_noise_indexed, LatticeSpec, NoiseGrid, NoiseSource, NoiseStream};
use crate::solver::{
    advance, run_with_noise, DriftlessNonlinearity, FieldState, SnapshotPlan, SolverConfig,
    TrajectoryRecord, TrajectoryStatus,
};
pub use crate::stats::StatisticTest;
use crate::stats::{ks_two_sample, two_proportion_z, two_sided_p, Moments};

/// Exponents as integer multiples of `(1 - γ)`, plus the amplitude exponent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExponentCoefficients {
    pub time: i32,
    pub space: i32,
    pub noise: i32,
    pub domain: i32,
}

pub const EXPONENT_COEFFICIENTS: ExponentCoefficients = ExponentCoefficients {
    time: 4,
    space: 2,
    noise: -3,
    domain: -2,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingExponents {
    pub time: f64,
    pub space: f64,
    pub amplitude: f64,
    pub noise: f64,
    pub domain: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingMap {
    pub lbar: f64,
    pub gamma: f64,
}

impl ScalingMap {
    pub fn new(lbar: f64, gamma: f64) -> Result<Self> {
        if !(lbar > 0.0 && lbar.is_finite()) {
            return domain(format!("scale factor must be positive, got {lbar}"));
        }
        if !gamma.is_finite() {
            return domain(format!("gamma must be finite, got {gamma}"));
        }
        Ok(Self { lbar, gamma })
    }

    pub fn identity(gamma: f64) -> Self {
        Self { lbar: 1.0, gamma }
    }

    pub fn exponents(&self) -> ScalingExponents {
        let d = 1.0 - self.gamma;
        ScalingExponents {
            time: 4.0 * d,
            space: 2.0 * d,
            amplitude: -1.0,
            noise: 3.0 * (self.gamma - 1.0),
            domain: 2.0 * (self.gamma - 1.0),
        }
    }

    /// `map(a) ∘ map(b) = map(a·b)`.
    pub fn compose(&self, other: &Self) -> Result<Self> {
        if self.gamma != other.gamma {
            return domain("cannot compose maps with different exponents");
        }
        Self::new(self.lbar * other.lbar, self.gamma)
    }

    /// Factor applied to times and to `dt`: `L̄^{4(γ-1)}`.
    pub fn time_factor(&self) -> f64 {
        self.lbar.powf(-self.exponents().time)
    }

    /// Factor applied to positions, `dx` and the domain: `L̄^{2(γ-1)}`.
    pub fn space_factor(&self) -> f64 {
        self.lbar.powf(self.exponents().domain)
    }

    pub fn amplitude_factor(&self) -> f64 {
        1.0 / self.lbar
    }

    pub fn noise_factor(&self) -> f64 {
        self.lbar.powf(self.exponents().noise)
    }

    /// Ratio of transformed to original `∫ u dx`: amplitude times measure change.
    pub fn mass_factor(&self) -> f64 {
        self.space_factor() / self.lbar
    }

    /// Whether the space factor is a positive integer, so image nodes sit on
    /// multiples of the source spacing.
    pub fn is_aligned(&self) -> bool {
        let k = self.space_factor();
        k >= 1.0 - 1e-12 && (k - k.round()).abs() <= 1e-9 * k
    }

    pub fn scaled_lattice(&self, l: &LatticeSpec) -> Result<LatticeSpec> {
        LatticeSpec::new(l.nt, l.nx, l.dt * self.time_factor(), l.dx * self.space_factor())
    }

    /// Solver configuration of the scaled equation with `ṽ₀ = L̄⁻¹ u₀(x L̄^{2(1-γ)})`,
    /// cutoff and ladder divided by `L̄`.
    pub fn scaled_config(&self, cfg: &SolverConfig) -> Result<SolverConfig> {
        check_power(&cfg.nonlinearity)?;
        let a = self.amplitude_factor();
        let out = SolverConfig {
            domain: Domain::new(cfg.domain.length() * self.space_factor())?,
            lattice: self.scaled_lattice(&cfg.lattice)?,
            nonlinearity: cfg.nonlinearity.clone(),
            u0: cfg.u0.iter().map(|u| u * a).collect(),
            cutoff: cfg.cutoff * a,
            levels: cfg.levels.iter().map(|l| l * a).collect(),
            snapshots: scale_plan(&cfg.snapshots, self.time_factor()),
        };
        out.validate()?;
        Ok(out)
    }
}

fn scale_plan(plan: &SnapshotPlan, tf: f64) -> SnapshotPlan {
    match plan {
        SnapshotPlan::Times(ts) => SnapshotPlan::Times(ts.iter().map(|t| t * tf).collect()),
        other => other.clone(),
    }
}

fn check_power(g: &DriftlessNonlinearity) -> Result<()> {
    match g {
        DriftlessNonlinearity::General { label, .. } => domain(format!(
            "the scaling map needs a power-law nonlinearity, got {label}"
        )),
        _ => Ok(()),
    }
}

fn scale_status(s: TrajectoryStatus, tf: f64) -> TrajectoryStatus {
    match s {
        TrajectoryStatus::Completed => s,
        TrajectoryStatus::CutoffHit { time } => TrajectoryStatus::CutoffHit { time: time * tf },
        TrajectoryStatus::NumericalFailure { time } => TrajectoryStatus::NumericalFailure { time: time * tf },
    }
}

fn apply(traj: &TrajectoryRecord, map: &ScalingMap) -> TrajectoryRecord {
    let (tf, sf, a) = (map.time_factor(), map.space_factor(), map.amplitude_factor());
    TrajectoryRecord {
        config_hash: traj.config_hash,
        seed: traj.seed,
        index: traj.index,
        dt: traj.dt * tf,
        dx: traj.dx * sf,
        domain_length: traj.domain_length * sf,
        levels: traj.levels.iter().map(|l| l * a).collect(),
        hit_times: traj.hit_times.iter().map(|h| h.map(|t| t * tf)).collect(),
        snapshots: traj
            .snapshots
            .iter()
            .map(|s| FieldState {
                time: s.time * tf,
                values: s.values.iter().map(|u| u * a).collect(),
            })
            .collect(),
        status: scale_status(traj.status, tf),
        steps: traj.steps,
        clamp_events: traj.clamp_events,
    }
}

/// Transforms a trajectory to the scaled domain `[0, J L̄^{2(γ-1)}]`. The
/// record keeps the source configuration hash.
pub fn rescale_field(traj: &TrajectoryRecord, map: &ScalingMap) -> Result<TrajectoryRecord> {
    if !map.is_aligned() {
        return Err(Error::Alignment(format!(
            "space factor {} is not a positive integer",
            map.space_factor()
        )));
    }
    Ok(apply(traj, map))
}

/// Trapezoid `∫ u dx` of a snapshot on spacing `dx`.
pub fn plain_mass(state: &FieldState, dx: f64) -> f64 {
    state.values.iter().sum::<f64>() * dx
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    /// Max over steps of the relative one-step residual of the transformed
    /// path under the scaled scheme on the image lattice.
    pub exact_lattice_residual: f64,
    /// Zero-noise only: max local truncation residual, per unit time and
    /// relative to `sup ṽ₀`, of the scaled scheme on the sub-lattice coarsened
    /// 4× in time and 2× in space.
    pub stencil_residual: Option<f64>,
    pub steps: usize,
}

/// Runs one trajectory (stream 0 of `seed`, or zero noise for `None`),
/// transforms it, and evaluates the scaled scheme driven by the scaled noise
/// along the transformed path.
pub fn scaling_consistency_check(
    cfg: &SolverConfig,
    map: &ScalingMap,
    seed: Option<u64>,
) -> Result<ConsistencyReport> {
    consistency_with_exponent(cfg, map, seed, map.exponents().noise)
}

/// As [`scaling_consistency_check`] with an arbitrary noise exponent, for
/// negative controls.
pub fn scaling_consistency_check_with_noise_exponent(
    cfg: &SolverConfig,
    map: &ScalingMap,
    seed: Option<u64>,
    noise_exponent: f64,
) -> Result<ConsistencyReport> {
    consistency_with_exponent(cfg, map, seed, noise_exponent)
}

fn consistency_with_exponent(
    cfg: &SolverConfig,
    map: &ScalingMap,
    seed: Option<u64>,
    noise_exponent: f64,
) -> Result<ConsistencyReport> {
    check_power(&cfg.nonlinearity)?;
    let noise = match seed {
        Some(s) => sample_noise_indexed(cfg.lattice, s, 0)?,
        None => NoiseGrid::zeros(cfg.lattice)?,
    };
    let dense = cfg.clone().with_snapshots(SnapshotPlan::Every(1));
    let rec = run_with_noise(&dense, &noise, &mut ())?;
    let scaled = rescale_field(&rec, map)?;
    let target = map.scaled_config(cfg)?;
    let lat = target.lattice;
    let wf = map.lbar.powf(noise_exponent);

    let mut coeff = vec![0.0; lat.nx];
    let mut row = vec![0.0; lat.nx];
    let mut next = vec![0.0; lat.nx];
    let mut worst = 0.0_f64;
    for (n, pair) in scaled.snapshots.windows(2).enumerate() {
        for ((c, r), (&v, &w)) in coeff.iter_mut().zip(&mut row).zip(pair[0].values.iter().zip(noise.row(n))) {
            *c = target.nonlinearity.eval(v);
            *r = w * wf;
        }
        advance(&pair[0].values, &coeff, &row, &lat, &mut next)
            .ok_or(Error::NumericalFailure { time: pair[1].time })?;
        let scale = pair[1].sup().max(f64::MIN_POSITIVE);
        let err = next
            .iter()
            .zip(&pair[1].values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        worst = worst.max(err / scale);
    }

    let stencil_residual = match seed {
        None => stencil_residual(&scaled.snapshots, &lat)?,
        Some(_) => None,
    };
    Ok(ConsistencyReport {
        exact_lattice_residual: worst,
        stencil_residual,
        steps: scaled.snapshots.len().saturating_sub(1),
    })
}

/// Deterministic heat stencil on every other node and every fourth step.
fn stencil_residual(states: &[FieldState], lat: &LatticeSpec) -> Result<Option<f64>> {
    if lat.nx % 2 == 0 || lat.nx < 3 || states.len() < 5 {
        return Ok(None);
    }
    let coarse = |s: &FieldState| -> Vec<f64> { s.values.iter().skip(1).step_by(2).copied().collect() };
    let dt_c = 4.0 * lat.dt;
    let dx_c = 2.0 * lat.dx;
    let r = dt_c / (dx_c * dx_c);
    let scale = states[0].sup();
    if !(scale > 0.0) {
        return domain("stencil residual needs a nonzero initial field");
    }
    let mut worst = 0.0_f64;
    for pair in states.iter().step_by(4).collect::<Vec<_>>().windows(2) {
        let (a, b) = (coarse(pair[0]), coarse(pair[1]));
        let m = a.len();
        for j in 0..m {
            let left = if j == 0 { 0.0 } else { a[j - 1] };
            let right = if j + 1 == m { 0.0 } else { a[j + 1] };
            let pred = a[j] + r * (left - 2.0 * a[j] + right);
            worst = worst.max((b[j] - pred).abs() / dt_c);
        }
    }
    Ok(Some(worst / scale))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionReport {
    pub lbar: f64,
    pub gamma: f64,
    pub n_paths: usize,
    pub alpha: f64,
    /// Per-test level after Bonferroni correction.
    pub per_test_alpha: f64,
    pub noise_exponent: f64,
    pub tests: Vec<StatisticTest>,
}

impl DistributionReport {
    pub fn passed(&self) -> bool {
        self.tests.iter().all(|t| t.pass)
    }
}

pub const MIN_DISTRIBUTION_PATHS: usize = 1000;
pub const DISTRIBUTION_ALPHA: f64 = 0.01;
/// Checkpoints at these fractions of the lattice step count.
const CHECKPOINT_FRACTIONS: [usize; 3] = [1, 2, 3];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistributionSeeds {
    /// Seed of the directly simulated source ensemble (A).
    pub source: u64,
    /// Seed of the scaled-equation ensemble (B).
    pub scaled: u64,
}

/// Noise of the scaled equation built from a source-lattice stream with a
/// chosen amplitude exponent; the correct exponent gives white noise on the
/// scaled lattice.
struct ScaledStream {
    inner: NoiseStream,
    spec: LatticeSpec,
    factor: f64,
}

impl NoiseSource for ScaledStream {
    fn spec(&self) -> &LatticeSpec {
        &self.spec
    }

    fn fill_row(&self, n: usize, out: &mut [f64]) {
        self.inner.fill_row(n, out);
        out.iter_mut().for_each(|v| *v *= self.factor);
    }
}

/// Summary values of one path at the checkpoints, in scaled units.
struct PathSummary {
    center: Vec<f64>,
    l2: Vec<f64>,
    hit: bool,
}

fn summarize(rec: &TrajectoryRecord, steps: &[usize], dt: f64) -> PathSummary {
    let mut center = Vec::with_capacity(steps.len());
    let mut l2 = Vec::with_capacity(steps.len());
    for &s in steps {
        let t = s as f64 * dt;
        match rec.snapshots.iter().find(|st| (st.time - t).abs() <= 1e-9 * dt.max(t)) {
            Some(st) if rec.steps >= s => {
                center.push(st.values[st.values.len() / 2]);
                l2.push(st.values.iter().map(|v| v * v).sum::<f64>() * rec.dx);
            }
            // Stopped before the checkpoint: above every finite value.
            _ => {
                center.push(f64::INFINITY);
                l2.push(f64::INFINITY);
            }
        }
    }
    let hit = rec.hit_times.first().is_some_and(|h| h.is_some());
    PathSummary { center, l2, hit }
}

/// Compares (A) transformed direct simulations with (B) direct simulations
/// of the scaled equation from independent seeds.
///
/// Statistics, fixed in advance: two-sample KS on the mid-domain value and on
/// `∫ṽ² dx̃` at steps `nt/3, 2nt/3, nt`, and a two-proportion test on the
/// fraction of paths whose sampled supremum reaches `2 sup ṽ₀`.
pub fn scaling_distribution_check(
    cfg: &SolverConfig,
    map: &ScalingMap,
    n_paths: usize,
    seeds: DistributionSeeds,
) -> Result<DistributionReport> {
    distribution_with_exponent(cfg, map, n_paths, seeds, map.exponents().noise)
}

/// As [`scaling_distribution_check`] with ensemble B's noise amplitude
/// exponent replaced, for negative controls.
pub fn scaling_distribution_check_with_noise_exponent(
    cfg: &SolverConfig,
    map: &ScalingMap,
    n_paths: usize,
    seeds: DistributionSeeds,
    noise_exponent: f64,
) -> Result<DistributionReport> {
    distribution_with_exponent(cfg, map, n_paths, seeds, noise_exponent)
}

fn distribution_with_exponent(
    cfg: &SolverConfig,
    map: &ScalingMap,
    n_paths: usize,
    seeds: DistributionSeeds,
    noise_exponent: f64,
) -> Result<DistributionReport> {
    if n_paths < MIN_DISTRIBUTION_PATHS {
        return Err(Error::InsufficientData(format!(
            "distribution check needs at least {MIN_DISTRIBUTION_PATHS} paths, got {n_paths}"
        )));
    }
    let nt = cfg.lattice.nt;
    if nt < 3 {
        return domain("distribution check needs at least three lattice steps");
    }
    let steps: Vec<usize> = CHECKPOINT_FRACTIONS.iter().map(|f| f * nt / 3).collect();
    let plan = |dt: f64| SnapshotPlan::Times(steps.iter().map(|&s| s as f64 * dt).collect());
    // A single-rung ladder at twice the initial peak drives the hit statistic.
    let level = 2.0 * cfg.u0.iter().copied().fold(0.0, f64::max);
    let source = cfg
        .clone()
        .with_cutoff(cfg.cutoff.max(level), vec![level])?
        .with_snapshots(plan(cfg.lattice.dt));
    let target = map.scaled_config(&source)?;
    let target = target.clone().with_snapshots(plan(target.lattice.dt));
    let dt_b = target.lattice.dt;
    let factor = map.lbar.powf(noise_exponent);

    let summaries = |which: bool| -> Result<Vec<PathSummary>> {
        (0..n_paths as u64)
            .into_par_iter()
            .map(|k| {
                if which {
                    let noise = NoiseStream::new(source.lattice, seeds.source, k);
                    let rec = run_with_noise(&source, &noise, &mut ())?;
                    let rec = apply(&rec, map);
                    Ok(summarize(&rec, &steps, dt_b))
                } else {
                    let noise = ScaledStream {
                        inner: NoiseStream::new(source.lattice, seeds.scaled, k),
                        spec: target.lattice,
                        factor,
                    };
                    let rec = run_with_noise(&target, &noise, &mut ())?;
                    Ok(summarize(&rec, &steps, dt_b))
                }
            })
            .collect()
    };
    let a = summaries(true)?;
    let b = summaries(false)?;

    let n_tests = 2 * steps.len() + 1;
    let per_test_alpha = DISTRIBUTION_ALPHA / n_tests as f64;
    let mut tests = Vec::with_capacity(n_tests);
    for (c, &s) in steps.iter().enumerate() {
        let time = Some(s as f64 * dt_b);
        for (name, pick) in [
            ("center_value", (|p: &PathSummary, c: usize| p.center[c]) as fn(&PathSummary, usize) -> f64),
            ("l2_mass", |p: &PathSummary, c: usize| p.l2[c]),
        ] {
            let xa: Vec<f64> = a.iter().map(|p| pick(p, c)).collect();
            let xb: Vec<f64> = b.iter().map(|p| pick(p, c)).collect();
            let (d, p_value) = ks_two_sample(&xa, &xb);
            tests.push(StatisticTest {
                name: format!("{name}@{}", c + 1),
                time,
                mean_a: finite_mean(&xa),
                mean_b: finite_mean(&xb),
                statistic: d,
                p_value,
                pass: p_value >= per_test_alpha,
            });
        }
    }
    let ka = a.iter().filter(|p| p.hit).count() as u64;
    let kb = b.iter().filter(|p| p.hit).count() as u64;
    let n = n_paths as u64;
    let z = two_proportion_z(ka, n, kb, n);
    let p_value = two_sided_p(z);
    tests.push(StatisticTest {
        name: "level_hit_fraction".into(),
        time: None,
        mean_a: ka as f64 / n as f64,
        mean_b: kb as f64 / n as f64,
        statistic: z,
        p_value,
        pass: p_value >= per_test_alpha,
    });
    Ok(DistributionReport {
        lbar: map.lbar,
        gamma: map.gamma,
        n_paths,
        alpha: DISTRIBUTION_ALPHA,
        per_test_alpha,
        noise_exponent,
        tests,
    })
}

fn finite_mean(xs: &[f64]) -> f64 {
    let mut m = Moments::default();
    xs.iter().filter(|x| x.is_finite()).for_each(|&x| m.push(x));
    m.mean
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::{run_trajectory, InitialProfile};
    use proptest::prelude::*;

    fn cfg(nx: usize, horizon: f64, gamma: f64) -> SolverConfig {
        SolverConfig::standard(
            Domain::new(1.0).unwrap(),
            nx,
            0.25,
            horizon,
            DriftlessNonlinearity::power(gamma),
            &InitialProfile::Sine { amplitude: 1.0 },
        )
        .unwrap()
    }

    proptest! {
        #[test]
        fn exponent_bookkeeping(gamma in 0.5f64..4.0) {
            let e = ScalingMap::new(2.0, gamma).unwrap().exponents();
            prop_assert_eq!(e.time, 2.0 * e.space);
            prop_assert_eq!(e.noise, -1.5 * e.space);
            prop_assert_eq!(e.domain, -e.space);
        }

        #[test]
        fn composition_multiplies(a in 0.2f64..5.0, b in 0.2f64..5.0, gamma in 1.0f64..3.0) {
            let (ma, mb) = (ScalingMap::new(a, gamma).unwrap(), ScalingMap::new(b, gamma).unwrap());
            let ab = ma.compose(&mb).unwrap();
            let rel = |x: f64, y: f64| (x - y).abs() / y.abs();
            prop_assert!(rel(ma.time_factor() * mb.time_factor(), ab.time_factor()) < 1e-12);
            prop_assert!(rel(ma.space_factor() * mb.space_factor(), ab.space_factor()) < 1e-12);
            prop_assert!(rel(ma.noise_factor() * mb.noise_factor(), ab.noise_factor()) < 1e-12);
        }
    }

    #[test]
    fn integer_coefficients_satisfy_identities() {
        let c = EXPONENT_COEFFICIENTS;
        assert_eq!(c.time, 2 * c.space);
        assert_eq!(2 * c.noise, -3 * c.space);
        assert_eq!(c.domain, -c.space);
    }

    #[test]
    fn gamma_one_only_scales_amplitude() {
        let m = ScalingMap::new(3.0, 1.0).unwrap();
        assert_eq!((m.time_factor(), m.space_factor()), (1.0, 1.0));
        assert_eq!(m.amplitude_factor(), 1.0 / 3.0);
    }

    #[test]
    fn identity_map_is_identity() {
        let c = cfg(15, 0.01, 1.5).with_snapshots(SnapshotPlan::Every(5));
        let rec = run_trajectory(&c, 4).unwrap();
        assert_eq!(rescale_field(&rec, &ScalingMap::identity(1.5)).unwrap(), rec);
    }

    #[test]
    fn rescale_composes() {
        let c = cfg(15, 0.01, 1.5).with_snapshots(SnapshotPlan::Every(10));
        let rec = run_trajectory(&c, 9).unwrap();
        let (m2, m3) = (ScalingMap::new(2.0, 1.5).unwrap(), ScalingMap::new(3.0, 1.5).unwrap());
        let twice = rescale_field(&rescale_field(&rec, &m2).unwrap(), &m3).unwrap();
        let once = rescale_field(&rec, &m2.compose(&m3).unwrap()).unwrap();
        assert_eq!(twice.domain_length, once.domain_length);
        for (a, b) in twice.snapshots.iter().zip(&once.snapshots) {
            assert!((a.time - b.time).abs() <= 1e-14 * b.time.max(1e-300));
            for (x, y) in a.values.iter().zip(&b.values) {
                assert!((x - y).abs() <= 1e-15 * y.abs().max(1e-300));
            }
        }
    }

    #[test]
    fn misaligned_map_rejected() {
        let c = cfg(15, 0.001, 1.5);
        let rec = run_trajectory(&c, 1).unwrap();
        let m = ScalingMap::new(1.5, 1.5).unwrap();
        assert!(matches!(rescale_field(&rec, &m), Err(Error::Alignment(_))));
    }

    #[test]
    fn plain_mass_scales_by_predicted_factor() {
        let c = cfg(31, 0.005, 2.0).with_snapshots(SnapshotPlan::Every(20));
        let rec = run_trajectory(&c, 2).unwrap();
        let m = ScalingMap::new(2.0, 2.0).unwrap();
        let s = rescale_field(&rec, &m).unwrap();
        for (a, b) in rec.snapshots.iter().zip(&s.snapshots) {
            let want = plain_mass(a, rec.dx) * m.mass_factor();
            assert!((plain_mass(b, s.dx) - want).abs() <= 1e-12 * want);
        }
    }

    #[test]
    fn exact_lattice_commutes() {
        let c = cfg(31, 0.01, 1.5);
        let id = scaling_consistency_check(&c, &ScalingMap::identity(1.5), Some(3)).unwrap();
        assert_eq!(id.exact_lattice_residual, 0.0);
        let m = ScalingMap::new(2.0, 1.5).unwrap();
        let r = scaling_consistency_check(&c, &m, Some(3)).unwrap();
        assert!(r.exact_lattice_residual < 1e-12, "{r:?}");
        let wrong = scaling_consistency_check_with_noise_exponent(&c, &m, Some(3), 2.0 * 0.5).unwrap();
        assert!(wrong.exact_lattice_residual > 1e-3, "{wrong:?}");
    }

    #[test]
    fn stencil_residual_shrinks_under_refinement() {
        let m = ScalingMap::new(2.0, 1.5).unwrap();
        let coarse = scaling_consistency_check(&cfg(31, 0.02, 1.5), &m, None).unwrap();
        let fine = scaling_consistency_check(&cfg(63, 0.02, 1.5), &m, None).unwrap();
        let (a, b) = (coarse.stencil_residual.unwrap(), fine.stencil_residual.unwrap());
        assert!(a / b >= 3.0, "{a} vs {b}");
    }

    #[test]
    fn distribution_check_needs_paths() {
        let m = ScalingMap::new(2.0, 1.5).unwrap();
        let seeds = DistributionSeeds { source: 1, scaled: 2 };
        assert!(matches!(
            scaling_distribution_check(&cfg(15, 0.01, 1.5), &m, 10, seeds),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn general_nonlinearity_rejected() {
        let mut c = cfg(15, 0.01, 1.5);
        c.nonlinearity = DriftlessNonlinearity::General {
            gamma: 1.5,
            label: "custom".into(),
            g: std::sync::Arc::new(|u: f64| u.powf(1.5) + u * u),
        };
        assert!(ScalingMap::new(2.0, 1.5).unwrap().scaled_config(&c).is_err());
    }
}
