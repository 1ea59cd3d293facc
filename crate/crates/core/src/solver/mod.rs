//! Explicit finite-difference Euler–Maruyama integrator for
//! `u_t = u_xx + g(u) Ẇ` on `[0, J]` with zero Dirichlet data, plus
//! level-crossing detection used as the blow-up proxy.

mod mild;

pub use mild::{mild_solution_step_check, mild_solution_field, MildCheck};

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::Domain;
use crate::noise::{LatticeSpec, NoiseSource, NoiseStream};

/// Default overflow level treated as blow-up.
pub const DEFAULT_CUTOFF: f64 = 1e6;

/// `u^γ` for `u ≥ 0`. Half-integer exponents avoid `powf`; every code path
/// that needs `u^γ` goes through here so results are bit-comparable.
#[inline]
pub fn power(u: f64, gamma: f64) -> f64 {
    if u == 0.0 {
        return 0.0;
    }
    let twice = 2.0 * gamma;
    if twice == twice.trunc() && (0.0..=16.0).contains(&twice) {
        let whole = gamma.trunc() as i32;
        let base = u.powi(whole);
        if gamma == gamma.trunc() {
            base
        } else {
            base * u.sqrt()
        }
    } else {
        u.powf(gamma)
    }
}

/// Noise coefficient `g` with `g(0) = 0` and `g(u) ≥ u^γ`.
#[derive(Clone)]
pub enum DriftlessNonlinearity {
    Power { gamma: f64 },
    /// `factor · u^γ` with `factor ≥ 1`.
    Scaled { factor: f64, gamma: f64 },
    General {
        gamma: f64,
        label: String,
        g: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    },
}

impl fmt::Debug for DriftlessNonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl DriftlessNonlinearity {
    pub fn power(gamma: f64) -> Self {
        Self::Power { gamma }
    }

    pub fn gamma(&self) -> f64 {
        match self {
            Self::Power { gamma } | Self::Scaled { gamma, .. } | Self::General { gamma, .. } => *gamma,
        }
    }

    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        match self {
            Self::Power { gamma } => power(u, *gamma),
            Self::Scaled { factor, gamma } => factor * power(u, *gamma),
            Self::General { g, .. } => g(u),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::Power { gamma } => format!("u^{gamma}"),
            Self::Scaled { factor, gamma } => format!("{factor}*u^{gamma}"),
            Self::General { label, .. } => label.clone(),
        }
    }

    /// Checks `g(0) = 0` and `g(u) ≥ u^γ` on a log-spaced sample of `u > 0`.
    pub fn validate(&self) -> Result<()> {
        let gamma = self.gamma();
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::Config(format!("gamma must be positive, got {gamma}")));
        }
        if let Self::Scaled { factor, .. } = self {
            if !(*factor >= 1.0) {
                return Err(Error::Config(format!("scaled nonlinearity needs factor ≥ 1, got {factor}")));
            }
        }
        if self.eval(0.0) != 0.0 {
            return Err(Error::Config("nonlinearity must vanish at zero".into()));
        }
        for k in -60..=60 {
            let u = 10f64.powf(k as f64 / 10.0);
            let g = self.eval(u);
            if !(g >= power(u, gamma) * (1.0 - 1e-12)) {
                return Err(Error::Config(format!(
                    "nonlinearity {} falls below u^{gamma} at u = {u}",
                    self.label()
                )));
            }
        }
        Ok(())
    }
}

/// Initial data, evaluable anywhere so it can be resampled on scaled lattices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialProfile {
    /// `amplitude · sin(πx/J)`.
    Sine { amplitude: f64 },
    /// `amplitude · (1 - r²)²` with `r = (x - center)/half_width`, zero for `|r| ≥ 1`.
    Bump {
        amplitude: f64,
        center: f64,
        half_width: f64,
    },
}

impl InitialProfile {
    pub fn eval(&self, x: f64, domain: &Domain) -> f64 {
        match *self {
            Self::Sine { amplitude } => {
                let j = domain.length();
                if x <= 0.0 || x >= j {
                    0.0
                } else {
                    amplitude * (std::f64::consts::PI * x / j).sin()
                }
            }
            Self::Bump {
                amplitude,
                center,
                half_width,
            } => {
                let r = (x - center) / half_width;
                if r.abs() >= 1.0 || x <= 0.0 || x >= domain.length() {
                    0.0
                } else {
                    amplitude * (1.0 - r * r).powi(2)
                }
            }
        }
    }

    /// Values at the interior nodes `x_j = (j+1)·dx`.
    pub fn sample(&self, domain: &Domain, nx: usize, dx: f64) -> Vec<f64> {
        (0..nx).map(|j| self.eval((j + 1) as f64 * dx, domain)).collect()
    }
}

/// Which states to keep in a [`TrajectoryRecord`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SnapshotPlan {
    /// Initial and final state only.
    Endpoints,
    /// Every `k`-th lattice step (and the final state).
    Every(usize),
    /// Nearest lattice steps to the requested times.
    Times(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub domain: Domain,
    pub lattice: LatticeSpec,
    pub nonlinearity: DriftlessNonlinearity,
    /// Initial values at the interior nodes; boundary values are zero.
    pub u0: Vec<f64>,
    pub cutoff: f64,
    /// Detection ladder `L₁ < L₂ < … ≤ cutoff`.
    pub levels: Vec<f64>,
    pub snapshots: SnapshotPlan,
}

impl SolverConfig {
    /// Builds the standard lattice: `nx` interior nodes, `dx = J/(nx+1)`,
    /// `dt = dt_factor·dx²`, and as many steps as fit in `horizon`.
    pub fn standard(
        domain: Domain,
        nx: usize,
        dt_factor: f64,
        horizon: f64,
        nonlinearity: DriftlessNonlinearity,
        profile: &InitialProfile,
    ) -> Result<Self> {
        if nx == 0 {
            return Err(Error::Config("nx must be at least 1".into()));
        }
        if !(horizon > 0.0) {
            return Err(Error::Config(format!("horizon must be positive, got {horizon}")));
        }
        let dx = domain.length() / (nx + 1) as f64;
        let dt = dt_factor * dx * dx;
        // Largest step count not overshooting the horizon.
        let nt = (horizon / dt + 1e-9).floor().max(1.0) as usize;
        let lattice = LatticeSpec::new(nt, nx, dt, dx)?;
        let cfg = Self {
            domain,
            lattice,
            nonlinearity,
            u0: profile.sample(&domain, nx, dx),
            cutoff: DEFAULT_CUTOFF,
            levels: default_ladder(DEFAULT_CUTOFF),
            snapshots: SnapshotPlan::Endpoints,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_cutoff(mut self, cutoff: f64, levels: Vec<f64>) -> Result<Self> {
        self.cutoff = cutoff;
        self.levels = levels;
        self.validate()?;
        Ok(self)
    }

    pub fn with_snapshots(mut self, plan: SnapshotPlan) -> Self {
        self.snapshots = plan;
        self
    }

    pub fn with_u0(mut self, u0: Vec<f64>) -> Result<Self> {
        self.u0 = u0;
        self.validate()?;
        Ok(self)
    }

    pub fn horizon(&self) -> f64 {
        self.lattice.nt as f64 * self.lattice.dt
    }

    /// Node coordinate of interior index `j`.
    pub fn node(&self, j: usize) -> f64 {
        (j + 1) as f64 * self.lattice.dx
    }

    pub fn validate(&self) -> Result<()> {
        let l = &self.lattice;
        let bound = l.dx * l.dx / 2.0;
        if l.dt > bound * (1.0 + 1e-12) {
            return Err(Error::Config(format!(
                "CFL violated: dt = {} exceeds dx^2/2 = {bound}",
                l.dt
            )));
        }
        let span = l.dx * (l.nx + 1) as f64;
        if (span - self.domain.length()).abs() > 1e-9 * self.domain.length() {
            return Err(Error::Config(format!(
                "lattice spans {span} but the domain has length {}",
                self.domain.length()
            )));
        }
        if self.u0.len() != l.nx {
            return Err(Error::Config(format!(
                "u0 has {} values for {} interior nodes",
                self.u0.len(),
                l.nx
            )));
        }
        if self.u0.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config("u0 must be finite and nonnegative".into()));
        }
        if !self.u0.iter().any(|&v| v > 0.0) {
            return Err(Error::Config("u0 must not vanish identically".into()));
        }
        if !(self.cutoff > 0.0) {
            return Err(Error::Config(format!("cutoff must be positive, got {}", self.cutoff)));
        }
        if self.levels.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Config("levels must be strictly increasing".into()));
        }
        if self.levels.last().is_some_and(|&top| top > self.cutoff) {
            return Err(Error::Config("levels must not exceed the cutoff".into()));
        }
        self.nonlinearity.validate()
    }

    /// Stable FNV-1a hash of everything that determines a trajectory.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv::default();
        h.f64(self.domain.length());
        h.u64(self.lattice.nt as u64);
        h.u64(self.lattice.nx as u64);
        h.f64(self.lattice.dt);
        h.f64(self.lattice.dx);
        h.bytes(self.nonlinearity.label().as_bytes());
        self.u0.iter().for_each(|&v| h.f64(v));
        h.f64(self.cutoff);
        self.levels.iter().for_each(|&v| h.f64(v));
        h.0
    }
}

struct Fnv(u64);

impl Default for Fnv {
    fn default() -> Self {
        Self(0xcbf29ce484222325)
    }
}

impl Fnv {
    fn bytes(&mut self, b: &[u8]) {
        for &x in b {
            self.0 ^= x as u64;
            self.0 = self.0.wrapping_mul(0x100000001b3);
        }
    }
    fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.u64(v.to_bits());
    }
}

/// Decades `10, 100, …` up to and including `cutoff`.
pub fn default_ladder(cutoff: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (1..)
        .map(|k| 10f64.powi(k))
        .take_while(|&l| l < cutoff)
        .collect();
    v.push(cutoff);
    v
}

/// Solution values at the interior nodes at one time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldState {
    pub time: f64,
    pub values: Vec<f64>,
}

impl FieldState {
    pub fn sup(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TrajectoryStatus {
    Completed,
    CutoffHit { time: f64 },
    NumericalFailure { time: f64 },
}

impl TrajectoryStatus {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Completed => "completed",
            Self::CutoffHit { .. } => "cutoff_hit",
            Self::NumericalFailure { .. } => "numerical_failure",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub config_hash: u64,
    pub seed: u64,
    pub index: u64,
    pub dt: f64,
    pub dx: f64,
    pub domain_length: f64,
    pub levels: Vec<f64>,
    /// First time the spatial supremum reached each level.
    pub hit_times: Vec<Option<f64>>,
    pub snapshots: Vec<FieldState>,
    pub status: TrajectoryStatus,
    pub steps: usize,
    pub clamp_events: u64,
}

impl TrajectoryRecord {
    pub fn hit_cutoff(&self) -> bool {
        matches!(self.status, TrajectoryStatus::CutoffHit { .. })
    }

    /// Hit-time table as CSV: `level,hit_time,status`, one row per level.
    pub fn hit_table_csv(&self) -> String {
        let mut out = String::from("level,hit_time,status\n");
        for (level, hit) in self.levels.iter().zip(&self.hit_times) {
            let t = hit.map(|t| format!("{t:.12e}")).unwrap_or_default();
            out.push_str(&format!("{level:e},{t},{}\n", self.status.name()));
        }
        out
    }

    /// Snapshots as CSV: `time,x,u`, one row per interior node per snapshot.
    pub fn snapshots_csv(&self) -> String {
        let mut out = String::from("time,x,u\n");
        for s in &self.snapshots {
            for (j, v) in s.values.iter().enumerate() {
                let x = (j + 1) as f64 * self.dx;
                out.push_str(&format!("{:.12e},{:.12e},{:.12e}\n", s.time, x, v));
            }
        }
        out
    }

    /// Secondary blow-up evidence: if the gaps between successive ladder hit
    /// times shrink geometrically, the extrapolated limit of the hit times.
    pub fn extrapolated_blowup_time(&self) -> Option<f64> {
        let hits: Vec<f64> = self.hit_times.iter().map_while(|h| *h).collect();
        if hits.len() < 4 {
            return None;
        }
        let gaps: Vec<f64> = hits.windows(2).map(|w| w[1] - w[0]).collect();
        let tail = &gaps[gaps.len().saturating_sub(3)..];
        if tail.iter().any(|&g| g <= 0.0) {
            return None;
        }
        let ratios: Vec<f64> = tail.windows(2).map(|w| w[1] / w[0]).collect();
        let rho = ratios.iter().sum::<f64>() / ratios.len() as f64;
        if !(rho < 1.0) {
            return None;
        }
        Some(hits[hits.len() - 1] + tail[tail.len() - 1] * rho / (1.0 - rho))
    }
}

/// Receives every state the integrator produces, starting with the initial one.
pub trait StepObserver {
    fn observe(&mut self, step: usize, state: &FieldState);
}

impl StepObserver for () {
    fn observe(&mut self, _: usize, _: &FieldState) {}
}

/// One explicit update of the interior values.
///
/// `coeff[j]` is the noise coefficient at node `j`, `noise[j]` the cell
/// increment. Writes into `out`, clamps at zero and returns the number of
/// clamp events, or `None` if a value became non-finite.
#[inline]
pub(crate) fn advance(
    values: &[f64],
    coeff: &[f64],
    noise: &[f64],
    lattice: &LatticeSpec,
    out: &mut [f64],
) -> Option<u64> {
    let n = values.len();
    let r = lattice.dt / (lattice.dx * lattice.dx);
    let inv_dx = 1.0 / lattice.dx;
    let mut clamps = 0;
    let mut finite = true;
    for j in 0..n {
        let left = if j == 0 { 0.0 } else { values[j - 1] };
        let right = if j + 1 == n { 0.0 } else { values[j + 1] };
        let u = values[j];
        let next = u + r * (right - 2.0 * u + left) + coeff[j] * noise[j] * inv_dx;
        finite &= next.is_finite();
        if next < 0.0 {
            clamps += 1;
            out[j] = 0.0;
        } else {
            out[j] = next;
        }
    }
    finite.then_some(clamps)
}

/// Single step `u' = u + dt·Δ_h u + g(u)·ΔW/dx`, clamped at zero.
pub fn step(state: &FieldState, cfg: &SolverConfig, noise_row: &[f64]) -> Result<FieldState> {
    let l = &cfg.lattice;
    if state.values.len() != l.nx || noise_row.len() != l.nx {
        return Err(Error::Alignment("state or noise row does not match the lattice".into()));
    }
    let coeff: Vec<f64> = state.values.iter().map(|&u| cfg.nonlinearity.eval(u)).collect();
    let mut out = vec![0.0; l.nx];
    let time = state.time + l.dt;
    advance(&state.values, &coeff, noise_row, l, &mut out)
        .ok_or(Error::NumericalFailure { time })?;
    Ok(FieldState { time, values: out })
}

/// Tracks first hits of the level ladder.
#[derive(Debug, Clone)]
pub(crate) struct LadderTracker {
    levels: Vec<f64>,
    hits: Vec<Option<f64>>,
    next: usize,
}

impl LadderTracker {
    pub(crate) fn new(levels: &[f64]) -> Self {
        Self {
            levels: levels.to_vec(),
            hits: vec![None; levels.len()],
            next: 0,
        }
    }

    pub(crate) fn update(&mut self, sup: f64, time: f64) {
        while self.next < self.levels.len() && sup >= self.levels[self.next] {
            self.hits[self.next] = Some(time);
            self.next += 1;
        }
    }

    pub(crate) fn into_hits(self) -> Vec<Option<f64>> {
        self.hits
    }
}

pub(crate) fn snapshot_steps(plan: &SnapshotPlan, lattice: &LatticeSpec) -> Vec<usize> {
    match plan {
        SnapshotPlan::Endpoints => vec![0],
        SnapshotPlan::Every(k) => (0..=lattice.nt).step_by((*k).max(1)).collect(),
        SnapshotPlan::Times(ts) => {
            let mut v: Vec<usize> = ts
                .iter()
                .map(|t| ((t / lattice.dt).round().max(0.0) as usize).min(lattice.nt))
                .collect();
            v.sort_unstable();
            v.dedup();
            v
        }
    }
}

/// Integrates stream 0 of `seed`.
pub fn run_trajectory(cfg: &SolverConfig, seed: u64) -> Result<TrajectoryRecord> {
    run_trajectory_indexed(cfg, seed, 0)
}

/// Integrates stream `index` of `seed`; ensembles use the trajectory index.
pub fn run_trajectory_indexed(cfg: &SolverConfig, seed: u64, index: u64) -> Result<TrajectoryRecord> {
    let noise = NoiseStream::new(cfg.lattice, seed, index);
    let mut rec = run_with_noise(cfg, &noise, &mut ())?;
    rec.seed = seed;
    rec.index = index;
    Ok(rec)
}

/// Integrates with an explicit noise source until the horizon, the cutoff, or
/// a non-finite value. Numerical failure is reported in the record's status.
pub fn run_with_noise<N: NoiseSource + ?Sized, O: StepObserver>(
    cfg: &SolverConfig,
    noise: &N,
    observer: &mut O,
) -> Result<TrajectoryRecord> {
    cfg.validate()?;
    let l = cfg.lattice;
    if noise.spec().nx != l.nx || noise.spec().nt < l.nt {
        return Err(Error::Alignment(format!(
            "noise lattice {:?} does not cover solver lattice {:?}",
            noise.spec(),
            l
        )));
    }
    let keep = snapshot_steps(&cfg.snapshots, &l);
    let mut keep_iter = keep.iter().peekable();
    let mut snapshots = Vec::new();
    let mut state = FieldState {
        time: 0.0,
        values: cfg.u0.clone(),
    };
    let mut ladder = LadderTracker::new(&cfg.levels);
    ladder.update(state.sup(), 0.0);
    observer.observe(0, &state);
    if keep_iter.next_if_eq(&&0).is_some() {
        snapshots.push(state.clone());
    }

    let mut row = vec![0.0; l.nx];
    let mut coeff = vec![0.0; l.nx];
    let mut next = vec![0.0; l.nx];
    let mut clamp_events = 0;
    let mut status = if state.sup() >= cfg.cutoff {
        TrajectoryStatus::CutoffHit { time: 0.0 }
    } else {
        TrajectoryStatus::Completed
    };
    let mut steps = 0;
    while steps < l.nt && status == TrajectoryStatus::Completed {
        noise.fill_row(steps, &mut row);
        for (c, &u) in coeff.iter_mut().zip(&state.values) {
            *c = cfg.nonlinearity.eval(u);
        }
        steps += 1;
        let time = steps as f64 * l.dt;
        match advance(&state.values, &coeff, &row, &l, &mut next) {
            Some(c) => clamp_events += c,
            None => {
                status = TrajectoryStatus::NumericalFailure { time };
                break;
            }
        }
        std::mem::swap(&mut state.values, &mut next);
        state.time = time;
        let sup = state.sup();
        ladder.update(sup, time);
        observer.observe(steps, &state);
        if keep_iter.next_if_eq(&&steps).is_some() {
            snapshots.push(state.clone());
        }
        if sup >= cfg.cutoff {
            status = TrajectoryStatus::CutoffHit { time };
        }
    }
    // The final state is always kept. A failed step leaves `state` at the
    // last finite values.
    if snapshots.last().is_none_or(|s| s.time != state.time) {
        snapshots.push(state.clone());
    }
    Ok(TrajectoryRecord {
        config_hash: cfg.fingerprint(),
        seed: 0,
        index: 0,
        dt: l.dt,
        dx: l.dx,
        domain_length: cfg.domain.length(),
        levels: cfg.levels.clone(),
        hit_times: ladder.into_hits(),
        snapshots,
        status,
        steps,
        clamp_events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{sample_noise, ZeroNoise};
    use crate::stats::Moments;

    fn unit() -> Domain {
        Domain::new(1.0).unwrap()
    }

    fn sine_cfg(nx: usize, horizon: f64, gamma: f64) -> SolverConfig {
        SolverConfig::standard(
            unit(),
            nx,
            0.25,
            horizon,
            DriftlessNonlinearity::power(gamma),
            &InitialProfile::Sine { amplitude: 1.0 },
        )
        .unwrap()
    }

    #[test]
    fn power_fast_paths_agree_with_powf() {
        for &g in &[1.0, 1.5, 2.0, 2.5, 3.0] {
            for &u in &[1e-3, 0.3, 1.0, 7.5, 1e5] {
                let a = power(u, g);
                assert!((a - u.powf(g)).abs() <= 1e-14 * a, "{u}^{g}");
            }
        }
        assert_eq!(power(0.0, 1.5), 0.0);
        assert_eq!(power(2.0, 1.3), 2f64.powf(1.3));
    }

    #[test]
    fn cfl_and_u0_validation() {
        let cfg = sine_cfg(15, 0.01, 1.5);
        let mut bad = cfg.clone();
        bad.lattice.dt = bad.lattice.dx * bad.lattice.dx;
        assert!(matches!(bad.validate(), Err(Error::Config(m)) if m.contains("CFL")));
        assert!(cfg.clone().with_u0(vec![0.0; 15]).is_err());
        let mut neg = vec![0.1; 15];
        neg[3] = -0.1;
        assert!(cfg.clone().with_u0(neg).is_err());
        assert!(cfg.clone().with_cutoff(10.0, vec![1.0, 100.0]).is_err());
        assert!(cfg.with_cutoff(10.0, vec![5.0, 2.0]).is_err());
    }

    #[test]
    fn general_nonlinearity_validation() {
        let ok = DriftlessNonlinearity::General {
            gamma: 1.5,
            label: "u^1.5+u^2".into(),
            g: Arc::new(|u| power(u, 1.5) + u * u),
        };
        assert!(ok.validate().is_ok());
        let below = DriftlessNonlinearity::General {
            gamma: 1.5,
            label: "u^1.5/2".into(),
            g: Arc::new(|u| 0.5 * power(u, 1.5)),
        };
        assert!(below.validate().is_err());
        let offset = DriftlessNonlinearity::General {
            gamma: 1.5,
            label: "1+u^1.5".into(),
            g: Arc::new(|u| 1.0 + power(u, 1.5)),
        };
        assert!(offset.validate().is_err());
        assert!(DriftlessNonlinearity::Scaled { factor: 0.5, gamma: 2.0 }.validate().is_err());
    }

    #[test]
    fn zero_noise_matches_eigenfunction_decay() {
        let err = |nx: usize| {
            let cfg = sine_cfg(nx, 0.05, 1.5);
            let rec = run_with_noise(&cfg, &ZeroNoise::new(cfg.lattice), &mut ()).unwrap();
            let last = rec.snapshots.last().unwrap();
            let decay = (-std::f64::consts::PI.powi(2) * last.time).exp();
            last.values
                .iter()
                .enumerate()
                .map(|(j, v)| (v - decay * (std::f64::consts::PI * cfg.node(j)).sin()).abs())
                .fold(0.0, f64::max)
        };
        let coarse = err(15);
        let fine = err(31);
        assert!(coarse < 1e-3, "{coarse}");
        assert!(coarse / fine > 3.0, "{coarse} / {fine}");
    }

    #[test]
    fn zero_field_is_absorbing() {
        let cfg = sine_cfg(9, 0.01, 1.5);
        let zero = FieldState {
            time: 0.0,
            values: vec![0.0; 9],
        };
        let row = vec![0.5; 9];
        assert_eq!(step(&zero, &cfg, &row).unwrap().values, vec![0.0; 9]);
    }

    #[test]
    fn one_step_moments() {
        let cfg = sine_cfg(9, 0.01, 1.5);
        let c = 0.7;
        let state = FieldState {
            time: 0.0,
            values: vec![c; 9],
        };
        let mut m = Moments::default();
        let mut row = vec![0.0; 9];
        for seed in 0..40_000 {
            crate::noise::NoiseStream::new(cfg.lattice, seed, 0).fill_row(0, &mut row);
            m.push(step(&state, &cfg, &row).unwrap().values[4]);
        }
        let l = cfg.lattice;
        let var = power(c, 1.5).powi(2) * l.dt / l.dx;
        assert!((m.mean - c).abs() < 3.0 * m.std_error());
        assert!((m.variance() - var).abs() < 3.0 * var * (2.0f64 / 40_000.0).sqrt());
    }

    #[test]
    fn deterministic_records() {
        let cfg = sine_cfg(15, 0.02, 1.5).with_snapshots(SnapshotPlan::Every(10));
        let a = run_trajectory(&cfg, 3).unwrap();
        let b = run_trajectory(&cfg, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.snapshots, run_trajectory(&cfg, 4).unwrap().snapshots);
        for s in &a.snapshots {
            assert!(s.values.iter().all(|v| *v >= 0.0 && v.is_finite()));
        }
        // Stored grid and lazy stream drive identical paths.
        let grid = sample_noise(cfg.lattice, 3).unwrap();
        let c = run_with_noise(&cfg, &grid, &mut ()).unwrap();
        assert_eq!(a.snapshots, c.snapshots);
    }

    #[test]
    fn zero_noise_never_exceeds_initial_sup() {
        let cfg = sine_cfg(15, 0.05, 2.0)
            .with_cutoff(1e6, vec![0.5, 0.99, 1.01, 10.0])
            .unwrap();
        let rec = run_with_noise(&cfg, &ZeroNoise::new(cfg.lattice), &mut ()).unwrap();
        assert_eq!(rec.status, TrajectoryStatus::Completed);
        assert_eq!(rec.hit_times[0], Some(0.0));
        assert!(rec.hit_times[2].is_none() && rec.hit_times[3].is_none());
    }

    #[test]
    fn tiny_data_completes() {
        let cfg = SolverConfig::standard(
            unit(),
            31,
            0.25,
            0.1,
            DriftlessNonlinearity::power(1.5),
            &InitialProfile::Sine { amplitude: 0.01 },
        )
        .unwrap();
        for seed in 0..20 {
            let rec = run_trajectory(&cfg, seed).unwrap();
            assert_eq!(rec.status, TrajectoryStatus::Completed);
            assert!(rec.hit_times.iter().all(Option::is_none));
        }
    }

    #[test]
    fn cutoff_classification_and_ladder_order() {
        let cfg = SolverConfig::standard(
            unit(),
            31,
            0.25,
            1.0,
            DriftlessNonlinearity::power(2.5),
            &InitialProfile::Bump {
                amplitude: 20.0,
                center: 0.5,
                half_width: 0.1,
            },
        )
        .unwrap();
        let mut hits = 0;
        for seed in 0..40 {
            let rec = run_trajectory(&cfg, seed).unwrap();
            let times: Vec<f64> = rec.hit_times.iter().flatten().copied().collect();
            assert!(times.windows(2).all(|w| w[0] <= w[1]));
            if rec.hit_cutoff() {
                hits += 1;
                assert!(rec.hit_times.last().unwrap().is_some());
            }
            assert!(!matches!(rec.status, TrajectoryStatus::NumericalFailure { .. }));
        }
        assert!(hits > 0);
    }

    #[test]
    fn non_finite_values_are_numerical_failures() {
        let cfg = sine_cfg(5, 0.01, 1.5);
        let state = FieldState {
            time: 0.0,
            values: vec![1.0; 5],
        };
        let row = vec![f64::INFINITY; 5];
        assert!(matches!(step(&state, &cfg, &row), Err(Error::NumericalFailure { .. })));
    }

    #[test]
    fn extrapolation_of_geometric_gaps() {
        let rec = TrajectoryRecord {
            config_hash: 0,
            seed: 0,
            index: 0,
            dt: 0.1,
            dx: 0.1,
            domain_length: 1.0,
            levels: vec![1.0, 2.0, 3.0, 4.0, 5.0],
            hit_times: vec![Some(0.0), Some(0.5), Some(0.75), Some(0.875), None],
            snapshots: vec![],
            status: TrajectoryStatus::Completed,
            steps: 0,
            clamp_events: 0,
        };
        assert!((rec.extrapolated_blowup_time().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hit_table_has_one_row_per_level() {
        let cfg = sine_cfg(7, 0.01, 1.5);
        let rec = run_trajectory(&cfg, 1).unwrap();
        let csv = rec.hit_table_csv();
        assert_eq!(csv.lines().count(), 1 + cfg.levels.len());
        assert!(csv.starts_with("level,hit_time,status\n"));
    }
}
