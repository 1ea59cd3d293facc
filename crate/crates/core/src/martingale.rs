//! The weighted mass `M(t) = ∫ φ(t,x) u(t,x) dx`, its realized and predicted
//! quadratic variation, and the Jensen lower bound
//! `⟨M⟩_t ≥ C₁ T^{-1/2} ∫_0^t M(s)^{2γ} ds`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::kernels::{phi_unchecked, JensenConstants, TestFunctionParams};
use crate::noise::NoiseStream;
use crate::solver::{
    power, run_with_noise, DriftlessNonlinearity, FieldState, SolverConfig, StepObserver,
    TrajectoryRecord,
};
use crate::stats::Moments;

/// Relative slack allowed in the deterministic Jensen inequality.
pub const JENSEN_REL_TOL: f64 = 1e-6;

/// Test function centered mid-domain, the default weight for `M`.
pub fn centered_params(horizon: f64, domain_length: f64) -> Result<TestFunctionParams> {
    TestFunctionParams::centered(horizon, 0.5 * domain_length)
}

/// Node values of `φ(t, ·)` at the interior nodes.
fn phi_nodes(t: f64, p: &TestFunctionParams, dx: f64, nx: usize) -> Vec<f64> {
    (0..nx)
        .map(|j| phi_unchecked(t, (j + 1) as f64 * dx, p))
        .collect()
}

fn check_time(t: f64, p: &TestFunctionParams) -> Result<()> {
    if t > p.horizon * (1.0 + 1e-12) || t < 0.0 {
        return domain(format!("time {t} outside [0, {}]", p.horizon));
    }
    Ok(())
}

/// Trapezoid quadrature of `φ(t,·) u(t,·)` over `[0, J]`; boundary values vanish.
pub fn mass_functional(state: &FieldState, p: &TestFunctionParams, dx: f64) -> Result<f64> {
    check_time(state.time, p)?;
    let t = state.time.min(p.horizon);
    Ok(state
        .values
        .iter()
        .enumerate()
        .map(|(j, u)| phi_unchecked(t, (j + 1) as f64 * dx, p) * u)
        .sum::<f64>()
        * dx)
}

/// Time series of the mass martingale along one path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingalePath {
    pub times: Vec<f64>,
    pub m_values: Vec<f64>,
    /// Running sum of squared lattice-step increments of `M`.
    pub realized_qv: Vec<f64>,
    /// Running quadrature of `∫∫ g(u)² φ² dx ds`.
    pub theoretical_qv: Vec<f64>,
    /// Running quadrature of `∫∫ u^{2γ} φ² dx ds`.
    pub lower_qv: Vec<f64>,
    /// Running quadrature of `C₁ T^{-1/2} ∫ M^{2γ} ds`.
    pub jensen_bound: Vec<f64>,
}

impl MartingalePath {
    fn with_capacity(n: usize) -> Self {
        Self {
            times: Vec::with_capacity(n),
            m_values: Vec::with_capacity(n),
            realized_qv: Vec::with_capacity(n),
            theoretical_qv: Vec::with_capacity(n),
            lower_qv: Vec::with_capacity(n),
            jensen_bound: Vec::with_capacity(n),
        }
    }

    /// Whether `⟨M⟩ ≥ C₁T^{-1/2}∫M^{2γ}` holds at every recorded time.
    pub fn jensen_bound_holds(&self) -> bool {
        self.theoretical_qv
            .iter()
            .zip(&self.jensen_bound)
            .all(|(qv, bound)| *qv >= bound * (1.0 - JENSEN_REL_TOL))
    }
}

/// Accumulates a [`MartingalePath`] while the solver runs, using the state at
/// the left end of each lattice step for the time integrals.
pub struct MartingaleObserver<'a> {
    params: TestFunctionParams,
    consts: JensenConstants,
    g: &'a DriftlessNonlinearity,
    dt: f64,
    dx: f64,
    path: MartingalePath,
    pending: Option<(f64, f64, f64)>,
}

impl<'a> MartingaleObserver<'a> {
    pub fn new(cfg: &'a SolverConfig, params: TestFunctionParams, consts: JensenConstants) -> Self {
        Self {
            params,
            consts,
            g: &cfg.nonlinearity,
            dt: cfg.lattice.dt,
            dx: cfg.lattice.dx,
            path: MartingalePath::with_capacity(cfg.lattice.nt + 1),
            pending: None,
        }
    }

    pub fn finish(self) -> MartingalePath {
        self.path
    }
}

impl StepObserver for MartingaleObserver<'_> {
    fn observe(&mut self, _step: usize, state: &FieldState) {
        let t = state.time.min(self.params.horizon);
        let phi = phi_nodes(t, &self.params, self.dx, state.values.len());
        let gamma = self.g.gamma();
        let m: f64 = phi.iter().zip(&state.values).map(|(f, u)| f * u).sum::<f64>() * self.dx;
        let (mut theo, mut lower) = (0.0, 0.0);
        for (f, &u) in phi.iter().zip(&state.values) {
            let f2 = f * f;
            let g = self.g.eval(u);
            theo += g * g * f2;
            let uu = power(u, gamma);
            lower += uu * uu * f2;
        }
        theo *= self.dx;
        lower *= self.dx;
        let bound_rate = self.consts.c1 / self.params.horizon.sqrt() * m.powf(2.0 * gamma);
        let p = &mut self.path;
        match p.m_values.last() {
            None => {
                p.realized_qv.push(0.0);
                p.theoretical_qv.push(0.0);
                p.lower_qv.push(0.0);
                p.jensen_bound.push(0.0);
            }
            Some(&prev) => {
                let (theo_prev, lower_prev, bound_prev) = self.pending.unwrap_or_default();
                let d = m - prev;
                p.realized_qv.push(p.realized_qv.last().unwrap() + d * d);
                p.theoretical_qv
                    .push(p.theoretical_qv.last().unwrap() + self.dt * theo_prev);
                p.lower_qv.push(p.lower_qv.last().unwrap() + self.dt * lower_prev);
                p.jensen_bound
                    .push(p.jensen_bound.last().unwrap() + self.dt * bound_prev);
            }
        }
        p.times.push(state.time);
        p.m_values.push(m);
        self.pending = Some((theo, lower, bound_rate));
    }
}

/// Runs stream `index` of `seed` and returns its martingale path.
pub fn martingale_path(
    cfg: &SolverConfig,
    params: TestFunctionParams,
    consts: JensenConstants,
    seed: u64,
    index: u64,
) -> Result<MartingalePath> {
    if cfg.horizon() > params.horizon * (1.0 + 1e-12) {
        return domain(format!(
            "solver horizon {} exceeds test function horizon {}",
            cfg.horizon(),
            params.horizon
        ));
    }
    let noise = NoiseStream::new(cfg.lattice, seed, index);
    let mut obs = MartingaleObserver::new(cfg, params, consts);
    run_with_noise(cfg, &noise, &mut obs)?;
    Ok(obs.finish())
}

/// Martingale paths for stream indices `0..n_paths`, in index order.
pub fn martingale_ensemble(
    cfg: &SolverConfig,
    params: TestFunctionParams,
    consts: JensenConstants,
    seed: u64,
    n_paths: usize,
) -> Result<Vec<MartingalePath>> {
    (0..n_paths as u64)
        .into_par_iter()
        .map(|k| martingale_path(cfg, params, consts, seed, k))
        .collect()
}

/// Predicted quadratic variation and its `u^{2γ}` lower bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QvSeries {
    pub times: Vec<f64>,
    pub theoretical: Vec<f64>,
    pub lower: Vec<f64>,
}

/// Left-point time quadrature of `∫_I g(u)² φ² dx` over a record whose
/// snapshots include every lattice step.
pub fn qv_integral(
    record: &TrajectoryRecord,
    p: &TestFunctionParams,
    g: &DriftlessNonlinearity,
) -> Result<QvSeries> {
    let snaps = &record.snapshots;
    let dense = snaps.len() == record.steps + 1
        && snaps
            .windows(2)
            .all(|w| ((w[1].time - w[0].time) - record.dt).abs() <= 1e-9 * record.dt);
    if !dense {
        return Err(Error::InsufficientData(format!(
            "{} snapshots for {} steps; every lattice step is needed",
            snaps.len(),
            record.steps
        )));
    }
    let gamma = g.gamma();
    let mut out = QvSeries {
        times: vec![0.0],
        theoretical: vec![0.0],
        lower: vec![0.0],
    };
    for w in snaps.windows(2) {
        check_time(w[0].time, p)?;
        let phi = phi_nodes(w[0].time, p, record.dx, w[0].values.len());
        let (mut theo, mut lower) = (0.0, 0.0);
        for (f, &u) in phi.iter().zip(&w[0].values) {
            let gv = g.eval(u);
            let uu = power(u, gamma);
            theo += gv * gv * f * f;
            lower += uu * uu * f * f;
        }
        let step = record.dt * record.dx;
        out.times.push(w[1].time);
        out.theoretical.push(out.theoretical.last().unwrap() + step * theo);
        out.lower.push(out.lower.last().unwrap() + step * lower);
    }
    Ok(out)
}

/// Terms of the Jensen chain at one time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JensenCheck {
    /// `∫ u^{2γ} φ² dx`.
    pub lhs: f64,
    /// `‖φ^a‖^{1-2γ} (∫ u φ dx)^{2γ}` with the quadrature norm on the interval.
    pub middle: f64,
    /// `C₁ T^{-1/2} M^{2γ}`.
    pub rhs: f64,
    /// `lhs - rhs`.
    pub margin: f64,
}

impl JensenCheck {
    pub fn holds(&self) -> bool {
        self.margin >= -JENSEN_REL_TOL * self.lhs
    }
}

/// Evaluates the chain `∫u^{2γ}φ² ≥ ‖φ^a‖^{1-2γ}(∫uφ)^{2γ} ≥ C₁T^{-1/2}M^{2γ}`
/// for a nonnegative field by the same quadrature as [`mass_functional`].
pub fn jensen_chain_check(
    state: &FieldState,
    p: &TestFunctionParams,
    consts: &JensenConstants,
    dx: f64,
) -> Result<JensenCheck> {
    if state.values.iter().any(|v| !(*v >= 0.0)) {
        return domain("Jensen chain needs a nonnegative field");
    }
    check_time(state.time, p)?;
    let gamma = consts.gamma;
    let phi = phi_nodes(state.time.min(p.horizon), p, dx, state.values.len());
    let lhs = phi
        .iter()
        .zip(&state.values)
        .map(|(f, &u)| {
            let uu = power(u, gamma);
            uu * uu * f * f
        })
        .sum::<f64>()
        * dx;
    let mass = phi.iter().zip(&state.values).map(|(f, u)| f * u).sum::<f64>() * dx;
    let norm = phi.iter().map(|f| f.powf(consts.a)).sum::<f64>() * dx;
    let middle = if mass == 0.0 {
        0.0
    } else {
        norm.powf(1.0 - 2.0 * gamma) * mass.powf(2.0 * gamma)
    };
    let rhs = consts.c1 / p.horizon.sqrt() * mass.powf(2.0 * gamma);
    Ok(JensenCheck {
        lhs,
        middle,
        rhs,
        margin: lhs - rhs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub time: f64,
    pub mean_m: f64,
    /// `E[M(t)] - M(0)` estimate.
    pub drift: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// `drift ≤ 3·SE`.
    pub supermartingale_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleReport {
    pub n_paths: usize,
    pub m0: f64,
    pub checkpoints: Vec<Checkpoint>,
    pub mean_realized_qv: f64,
    pub mean_theoretical_qv: f64,
    /// Mean realized over mean predicted quadratic variation at the end.
    pub qv_ratio: f64,
    /// Fraction of paths on which the Jensen bound holds at every time.
    pub jensen_bound_fraction: f64,
}

impl MartingaleReport {
    pub fn supermartingale_ok(&self) -> bool {
        self.checkpoints.iter().all(|c| c.supermartingale_ok)
    }
}

/// Minimum ensemble size for [`martingale_diagnostics`].
pub const MIN_DIAGNOSTIC_PATHS: usize = 100;

/// Supermartingale direction at `n_checkpoints` equally spaced times, the
/// realized-to-predicted quadratic variation ratio, and the pathwise Jensen
/// bound pass fraction.
pub fn martingale_diagnostics(ensemble: &[MartingalePath], n_checkpoints: usize) -> Result<MartingaleReport> {
    if ensemble.len() < MIN_DIAGNOSTIC_PATHS {
        return Err(Error::InsufficientData(format!(
            "{} paths; at least {MIN_DIAGNOSTIC_PATHS} required",
            ensemble.len()
        )));
    }
    let len = ensemble[0].times.len();
    if len < 2 || ensemble.iter().any(|p| p.times.len() != len) {
        return Err(Error::InsufficientData("paths must share one time grid".into()));
    }
    let m0 = ensemble[0].m_values[0];
    let checkpoints = (1..=n_checkpoints.max(1))
        .map(|c| {
            let i = (c * (len - 1)) / n_checkpoints.max(1);
            let m = ensemble.iter().fold(Moments::default(), |mut acc, p| {
                acc.push(p.m_values[i]);
                acc
            });
            let drift = m.mean - m0;
            let se = m.std_error();
            Checkpoint {
                time: ensemble[0].times[i],
                mean_m: m.mean,
                drift,
                std_error: se,
                ci_low: drift - 3.0 * se,
                ci_high: drift + 3.0 * se,
                supermartingale_ok: drift <= 3.0 * se,
            }
        })
        .collect();
    let n = ensemble.len() as f64;
    let mean_realized_qv = ensemble.iter().map(|p| p.realized_qv[len - 1]).sum::<f64>() / n;
    let mean_theoretical_qv = ensemble.iter().map(|p| p.theoretical_qv[len - 1]).sum::<f64>() / n;
    let qv_ratio = if mean_theoretical_qv > 0.0 {
        mean_realized_qv / mean_theoretical_qv
    } else if mean_realized_qv == 0.0 {
        1.0
    } else {
        f64::INFINITY
    };
    let passing = ensemble.iter().filter(|p| p.jensen_bound_holds()).count();
    Ok(MartingaleReport {
        n_paths: ensemble.len(),
        m0,
        checkpoints,
        mean_realized_qv,
        mean_theoretical_qv,
        qv_ratio,
        jensen_bound_fraction: passing as f64 / n,
    })
}
