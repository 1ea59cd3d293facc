use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::noise::{NoiseSource, NoiseStream};
use crate::solver::{
    advance, power, run_trajectory_indexed, snapshot_steps, FieldState, LadderTracker,
    SnapshotPlan, SolverConfig, TrajectoryRecord, TrajectoryStatus,
};
use crate::stats::{two_sided_p, welch_z, Moments, StatisticTest};

/// `b(x, y) = √((x+y)^{2γ} − y^{2γ})`, the coefficient of component `x` given
/// the sum `y` of the components before it.
pub fn split_coefficient(x: f64, y: f64, gamma: f64) -> Result<f64> {
    if !(x >= 0.0 && y >= 0.0) {
        return domain(format!("split coefficient needs x, y ≥ 0, got {x}, {y}"));
    }
    Ok(coefficient(x, y, gamma))
}

#[inline]
fn coefficient(x: f64, y: f64, gamma: f64) -> f64 {
    if y == 0.0 {
        return power(x, gamma);
    }
    let two = 2.0 * gamma;
    (power(x + y, two) - power(y, two)).max(0.0).sqrt()
}

/// Relative defect of `Σᵢ b(uⁱ, Sᵢ₋₁)² = (Σᵢ uⁱ)^{2γ}` at one site.
pub fn telescoping_error(parts: &[f64], gamma: f64) -> Result<f64> {
    let mut s = 0.0;
    let mut total = 0.0;
    for &x in parts {
        let b = split_coefficient(x, s, gamma)?;
        total += b * b;
        s += x;
    }
    let want = power(s, 2.0 * gamma);
    Ok(if want == 0.0 { total } else { (total - want).abs() / want })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitTrajectory {
    /// The sum `ũ = Σ uⁱ`, recorded exactly as the direct solver records `u`.
    pub sum: TrajectoryRecord,
    /// Component fields at the snapshot steps of `sum`.
    pub components: Vec<Vec<FieldState>>,
    /// Trapezoid `∫ uⁱ dx` per component at the same steps.
    pub component_masses: Vec<Vec<f64>>,
    /// Whether each component reached the cutoff on its own.
    pub component_cutoff: Vec<bool>,
    /// Largest relative telescoping defect over all sites and steps.
    pub max_telescoping_error: f64,
}

/// Noise coefficient of each component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CoefficientRule {
    /// `b(uⁱ, Sᵢ₋₁)`.
    Telescoping,
    /// `(uⁱ)^γ`, ignoring the other components; only for negative controls.
    OwnPower,
}

/// Co-evolves `parts.len()` components on the lattice of `cfg`; component `i`
/// is driven by stream `index` of `seeds[i]` with coefficient `b(uⁱ, Sᵢ₋₁)`.
/// The system stops when the sum reaches the cutoff.
pub fn simulate_split_system(
    cfg: &SolverConfig,
    parts: &[Vec<f64>],
    seeds: &[u64],
    index: u64,
) -> Result<SplitTrajectory> {
    simulate_split_system_with(cfg, parts, seeds, index, CoefficientRule::Telescoping)
}

pub fn simulate_split_system_with(
    cfg: &SolverConfig,
    parts: &[Vec<f64>],
    seeds: &[u64],
    index: u64,
    rule: CoefficientRule,
) -> Result<SplitTrajectory> {
    cfg.validate()?;
    let l = cfg.lattice;
    let n = parts.len();
    if n == 0 || seeds.len() != n {
        return domain(format!("need one seed per component, got {} parts and {} seeds", n, seeds.len()));
    }
    if parts.iter().any(|p| p.len() != l.nx || p.iter().any(|v| !(*v >= 0.0 && v.is_finite()))) {
        return domain("parts must be finite, nonnegative and match the lattice");
    }
    for j in 0..l.nx {
        let s: f64 = parts.iter().map(|p| p[j]).sum();
        if (s - cfg.u0[j]).abs() > 1e-12 * cfg.u0[j].abs().max(1e-300) {
            return domain(format!("parts do not sum to u0 at node {j}"));
        }
    }
    let gamma = cfg.nonlinearity.gamma();
    let noises: Vec<NoiseStream> = seeds.iter().map(|&s| NoiseStream::new(l, s, index)).collect();

    let keep = snapshot_steps(&cfg.snapshots, &l);
    let mut keep_iter = keep.iter().peekable();
    let mut comps: Vec<Vec<f64>> = parts.to_vec();
    let mut sum = FieldState {
        time: 0.0,
        values: sum_of(&comps),
    };
    let mut snaps = Vec::new();
    let mut comp_snaps: Vec<Vec<FieldState>> = vec![Vec::new(); n];
    let take = |sum: &FieldState, comps: &[Vec<f64>], snaps: &mut Vec<FieldState>, cs: &mut Vec<Vec<FieldState>>| {
        snaps.push(sum.clone());
        for (c, v) in cs.iter_mut().zip(comps) {
            c.push(FieldState {
                time: sum.time,
                values: v.clone(),
            });
        }
    };
    let mut ladder = LadderTracker::new(&cfg.levels);
    ladder.update(sum.sup(), 0.0);
    if keep_iter.next_if_eq(&&0).is_some() {
        take(&sum, &comps, &mut snaps, &mut comp_snaps);
    }

    let mut row = vec![0.0; l.nx];
    let mut coeff = vec![0.0; l.nx];
    let mut partial = vec![0.0; l.nx];
    let mut next = vec![0.0; l.nx];
    let mut clamp_events = 0;
    let mut worst = 0.0_f64;
    let mut status = if sum.sup() >= cfg.cutoff {
        TrajectoryStatus::CutoffHit { time: 0.0 }
    } else {
        TrajectoryStatus::Completed
    };
    let mut component_cutoff = vec![false; n];
    let mut steps = 0;
    'time: while steps < l.nt && status == TrajectoryStatus::Completed {
        partial.iter_mut().for_each(|v| *v = 0.0);
        let mut squares = vec![0.0; l.nx];
        steps += 1;
        let time = steps as f64 * l.dt;
        let mut updated = Vec::with_capacity(n);
        for (comp, noise) in comps.iter().zip(&noises) {
            noise.fill_row(steps - 1, &mut row);
            for j in 0..l.nx {
                coeff[j] = match rule {
                    CoefficientRule::Telescoping => coefficient(comp[j], partial[j], gamma),
                    CoefficientRule::OwnPower => power(comp[j], gamma),
                };
                squares[j] += coeff[j] * coeff[j];
                partial[j] += comp[j];
            }
            match advance(comp, &coeff, &row, &l, &mut next) {
                Some(c) => clamp_events += c,
                None => {
                    status = TrajectoryStatus::NumericalFailure { time };
                    break 'time;
                }
            }
            updated.push(next.clone());
        }
        for (s, p) in squares.iter().zip(&partial) {
            let want = power(*p, 2.0 * gamma);
            let err = if want == 0.0 { *s } else { (s - want).abs() / want };
            worst = worst.max(err);
        }
        comps = updated;
        sum.values = sum_of(&comps);
        sum.time = time;
        let sup = sum.sup();
        ladder.update(sup, time);
        for (flag, c) in component_cutoff.iter_mut().zip(&comps) {
            *flag |= c.iter().any(|&v| v >= cfg.cutoff);
        }
        if keep_iter.next_if_eq(&&steps).is_some() {
            take(&sum, &comps, &mut snaps, &mut comp_snaps);
        }
        if sup >= cfg.cutoff {
            status = TrajectoryStatus::CutoffHit { time };
        }
    }
    if snaps.last().is_none_or(|s| s.time != sum.time) {
        take(&sum, &comps, &mut snaps, &mut comp_snaps);
    }
    let component_masses = comp_snaps
        .iter()
        .map(|c| c.iter().map(|s| s.values.iter().sum::<f64>() * l.dx).collect())
        .collect();
    Ok(SplitTrajectory {
        sum: TrajectoryRecord {
            config_hash: cfg.fingerprint(),
            seed: seeds[0],
            index,
            dt: l.dt,
            dx: l.dx,
            domain_length: cfg.domain.length(),
            levels: cfg.levels.clone(),
            hit_times: ladder.into_hits(),
            snapshots: snaps,
            status,
            steps,
            clamp_events,
        },
        components: comp_snaps,
        component_masses,
        component_cutoff,
        max_telescoping_error: worst,
    })
}

fn sum_of(comps: &[Vec<f64>]) -> Vec<f64> {
    let mut out = comps[0].clone();
    for c in &comps[1..] {
        out.iter_mut().zip(c).for_each(|(a, b)| *a += b);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub n_components: usize,
    pub n_paths: usize,
    pub alpha: f64,
    pub per_test_alpha: f64,
    pub max_telescoping_error: f64,
    pub tests: Vec<StatisticTest>,
}

impl EquivalenceReport {
    pub fn passed(&self) -> bool {
        self.tests.iter().all(|t| t.pass)
    }
}

/// Compares first and second moments of the mid-domain value of `ũ` (split
/// into `n` equal parts, component seeds `split_seed + i`) with those of `u`
/// from the direct solver (seed `direct_seed`) at steps `nt/3, 2nt/3, nt`.
/// Welch z-tests, Bonferroni-corrected at level `alpha`.
pub fn split_equivalence_check(
    cfg: &SolverConfig,
    n: usize,
    n_paths: usize,
    split_seed: u64,
    direct_seed: u64,
    alpha: f64,
) -> Result<EquivalenceReport> {
    if n == 0 {
        return domain("need at least one component");
    }
    if n_paths < 2 {
        return Err(Error::InsufficientData("need at least two paths per ensemble".into()));
    }
    let nt = cfg.lattice.nt;
    let steps: Vec<usize> = [1, 2, 3].iter().map(|f| f * nt / 3).collect();
    let plan = SnapshotPlan::Times(steps.iter().map(|&s| s as f64 * cfg.lattice.dt).collect());
    let cfg = cfg.clone().with_snapshots(plan);
    let parts: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            if i + 1 < n {
                cfg.u0.iter().map(|u| u / n as f64).collect()
            } else {
                // The last part absorbs rounding so the parts sum to u0.
                cfg.u0.iter().map(|u| u - (n - 1) as f64 * (u / n as f64)).collect()
            }
        })
        .collect();
    let seeds: Vec<u64> = (0..n as u64).map(|i| split_seed.wrapping_add(i)).collect();
    let dt = cfg.lattice.dt;
    let center = |rec: &TrajectoryRecord| -> Vec<f64> {
        steps
            .iter()
            .map(|&s| {
                let t = s as f64 * dt;
                rec.snapshots
                    .iter()
                    .find(|st| (st.time - t).abs() <= 1e-9 * t.max(dt))
                    .map_or(f64::NAN, |st| st.values[st.values.len() / 2])
            })
            .collect()
    };
    let split: Vec<(Vec<f64>, f64)> = (0..n_paths as u64)
        .into_par_iter()
        .map(|k| {
            let tr = simulate_split_system(&cfg, &parts, &seeds, k)?;
            Ok((center(&tr.sum), tr.max_telescoping_error))
        })
        .collect::<Result<_>>()?;
    let direct: Vec<Vec<f64>> = (0..n_paths as u64)
        .into_par_iter()
        .map(|k| run_trajectory_indexed(&cfg, direct_seed, k).map(|r| center(&r)))
        .collect::<Result<_>>()?;

    let n_tests = 2 * steps.len();
    let per_test_alpha = alpha / n_tests as f64;
    let mut tests = Vec::with_capacity(n_tests);
    for c in 0..steps.len() {
        for (name, f) in [("mean", (|x: f64| x) as fn(f64) -> f64), ("second_moment", |x: f64| x * x)] {
            // Paths stopped before the checkpoint are excluded from both sides.
            let pick = |v: &Vec<f64>| Some(v[c]).filter(|x| x.is_finite()).map(f);
            let a = Moments::from_slice(&split.iter().filter_map(|(v, _)| pick(v)).collect::<Vec<_>>());
            let b = Moments::from_slice(&direct.iter().filter_map(pick).collect::<Vec<_>>());
            let z = welch_z(&a, &b);
            let p_value = two_sided_p(z);
            tests.push(StatisticTest {
                name: format!("{name}@{}", c + 1),
                time: Some(steps[c] as f64 * dt),
                mean_a: a.mean,
                mean_b: b.mean,
                statistic: z,
                p_value,
                pass: p_value >= per_test_alpha,
            });
        }
    }
    Ok(EquivalenceReport {
        n_components: n,
        n_paths,
        alpha,
        per_test_alpha,
        max_telescoping_error: split.iter().map(|(_, e)| *e).fold(0.0, f64::max),
        tests,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::Domain;
    use crate::solver::{run_trajectory, DriftlessNonlinearity, InitialProfile};
    use proptest::prelude::*;

    fn cfg(gamma: f64) -> SolverConfig {
        SolverConfig::standard(
            Domain::new(1.0).unwrap(),
            31,
            0.25,
            0.05,
            DriftlessNonlinearity::power(gamma),
            &InitialProfile::Sine { amplitude: 1.0 },
        )
        .unwrap()
    }

    #[test]
    fn coefficient_examples() {
        assert_eq!(split_coefficient(1.7, 0.0, 1.5).unwrap(), power(1.7, 1.5));
        let (a, b) = (split_coefficient(1.0, 0.0, 1.0).unwrap(), split_coefficient(1.0, 1.0, 1.0).unwrap());
        assert!((a * a + b * b - 4.0).abs() < 1e-14);
        assert!(split_coefficient(-1.0, 0.0, 1.5).is_err());
    }

    proptest! {
        #[test]
        fn telescoping_identity(parts in prop::collection::vec(0.0f64..10.0, 1..8), gamma in 1.0f64..4.0) {
            prop_assert!(telescoping_error(&parts, gamma).unwrap() <= 1e-12);
        }

        #[test]
        fn coefficient_nondecreasing(x in 0.0f64..10.0, dx in 0.0f64..1.0, y in 0.0f64..10.0, gamma in 1.0f64..4.0) {
            prop_assert!(split_coefficient(x + dx, y, gamma).unwrap() >= split_coefficient(x, y, gamma).unwrap());
        }
    }

    #[test]
    fn single_component_is_the_direct_solver() {
        let c = cfg(1.5).with_snapshots(SnapshotPlan::Every(7));
        let direct = run_trajectory(&c, 21).unwrap();
        let split = simulate_split_system(&c, std::slice::from_ref(&c.u0), &[21], 0).unwrap();
        assert_eq!(split.sum, direct);
    }

    #[test]
    fn telescoping_holds_along_trajectory() {
        let c = cfg(2.0);
        let parts: Vec<Vec<f64>> = [0.2, 0.5, 0.3]
            .iter()
            .map(|w| c.u0.iter().map(|u| u * w).collect())
            .collect();
        let mut parts = parts;
        for j in 0..c.lattice.nx {
            parts[2][j] = c.u0[j] - parts[0][j] - parts[1][j];
        }
        let tr = simulate_split_system(&c, &parts, &[1, 2, 3], 0).unwrap();
        assert!(tr.max_telescoping_error <= 1e-12, "{}", tr.max_telescoping_error);
        assert_eq!(tr.components.len(), 3);
    }

    #[test]
    fn parts_must_sum_to_u0() {
        let c = cfg(1.5);
        let half: Vec<f64> = c.u0.iter().map(|u| u * 0.4).collect();
        assert!(simulate_split_system(&c, &[half.clone(), half], &[1, 2], 0).is_err());
    }
}
