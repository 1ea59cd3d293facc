//! Experiment configuration, run directories and manifests.
//!
//! A config is a TOML file with one section per module. Every physical
//! parameter has an explicit key; anything omitted takes the default below.
//!
//! ```toml
//! seed = 7
//! paths = 100
//!
//! [solver]
//! J = 1.0
//! nx = 128
//! dt_factor = 0.25
//! horizon = 0.05
//! gamma = 1.5
//! cutoff = 1e6
//! levels = [10.0, 100.0, 1000.0, 1e6]
//!
//! [solver.initial]
//! kind = "sine"
//! amplitude = 1.0
//! ```

use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use toml::Spanned;

use crate::branching::{gw_sweep, split_equivalence_check, DEFAULT_SWEEP, GW_CSV_HEADER};
use crate::error::{Error, Result};
use crate::kernels::{jensen_constants, Domain};
use crate::martingale::{centered_params, martingale_diagnostics, martingale_ensemble};
use crate::passage::{first_passage_mc, BrownianPaths, RuinProblem, PASSAGE_CSV_HEADER, Z95};
use crate::scaling::{scaling_consistency_check, scaling_distribution_check, DistributionSeeds, ScalingMap};
use crate::solver::{
    default_ladder, run_trajectory_indexed, DriftlessNonlinearity, InitialProfile, SnapshotPlan, SolverConfig,
    TrajectoryRecord, DEFAULT_CUTOFF,
};
use crate::stats::wilson_interval;

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const SWEEP_CSV_HEADER: &str = "gamma,L,n_paths,hits,hit_fraction,ci_low,ci_high,median_hit_time";
pub const SUMMARY_CSV_HEADER: &str = "index,status,steps,clamp_events,final_sup,extrapolated_blowup_time";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    #[serde(rename = "J")]
    pub domain_length: f64,
    pub nx: usize,
    pub dt_factor: f64,
    pub horizon: f64,
    pub gamma: f64,
    pub cutoff: f64,
    pub levels: Vec<f64>,
    pub initial: InitialProfile,
    /// Keep every k-th state in the trajectory CSVs; 0 keeps the endpoints.
    pub snapshot_every: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            domain_length: 1.0,
            nx: 128,
            dt_factor: 0.25,
            horizon: 0.05,
            gamma: 1.5,
            cutoff: DEFAULT_CUTOFF,
            levels: default_ladder(DEFAULT_CUTOFF),
            initial: InitialProfile::Sine { amplitude: 1.0 },
            snapshot_every: 0,
        }
    }
}

impl SolverSettings {
    pub fn build(&self) -> Result<SolverConfig> {
        let plan = match self.snapshot_every {
            0 => SnapshotPlan::Endpoints,
            k => SnapshotPlan::Every(k),
        };
        SolverConfig::standard(
            Domain::new(self.domain_length)?,
            self.nx,
            self.dt_factor,
            self.horizon,
            DriftlessNonlinearity::power(self.gamma),
            &self.initial,
        )?
        .with_cutoff(self.cutoff, self.levels.clone())
        .map(|c| c.with_snapshots(plan))
    }

    pub fn with_gamma(&self, gamma: f64) -> Self {
        Self { gamma, ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSettings {
    pub gammas: Vec<f64>,
    /// Levels `L` reported per exponent; defaults to the solver ladder.
    pub levels: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuinSettings {
    pub levels: Vec<f64>,
    pub dt: f64,
    pub bridge: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GwSettings {
    /// `(γ, L, K)` triples.
    pub points: Vec<[f64; 3]>,
    pub generations: usize,
    pub trees: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleSettings {
    pub checkpoints: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingSettings {
    pub lbar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplittingSettings {
    pub components: usize,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub paths: usize,
    pub solver: SolverSettings,
    pub sweep: SweepSettings,
    pub ruin: RuinSettings,
    pub gw: GwSettings,
    pub martingale: MartingaleSettings,
    pub scaling: ScalingSettings,
    pub splitting: SplittingSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            paths: 100,
            solver: SolverSettings::default(),
            sweep: SweepSettings {
                gammas: vec![1.0, 1.5, 2.0, 2.5],
                levels: None,
            },
            ruin: RuinSettings {
                levels: vec![3.0, 5.0, 10.0],
                dt: 0.01,
                bridge: true,
            },
            gw: GwSettings {
                points: DEFAULT_SWEEP.iter().map(|&(g, l, k)| [g, l, k]).collect(),
                generations: 50,
                trees: 10_000,
            },
            martingale: MartingaleSettings { checkpoints: 5 },
            scaling: ScalingSettings { lbar: 2.0 },
            splitting: SplittingSettings {
                components: 3,
                alpha: 0.01,
            },
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    seed: Option<Spanned<u64>>,
    paths: Option<Spanned<usize>>,
    solver: Option<RawSolver>,
    sweep: Option<RawSweep>,
    ruin: Option<RawRuin>,
    gw: Option<RawGw>,
    martingale: Option<RawMartingale>,
    scaling: Option<RawScaling>,
    splitting: Option<RawSplitting>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    #[serde(rename = "J")]
    domain_length: Option<Spanned<f64>>,
    nx: Option<Spanned<usize>>,
    dt_factor: Option<Spanned<f64>>,
    horizon: Option<Spanned<f64>>,
    gamma: Option<Spanned<f64>>,
    cutoff: Option<Spanned<f64>>,
    levels: Option<Spanned<Vec<f64>>>,
    initial: Option<InitialProfile>,
    snapshot_every: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    gammas: Option<Spanned<Vec<f64>>>,
    levels: Option<Spanned<Vec<f64>>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRuin {
    levels: Option<Spanned<Vec<f64>>>,
    dt: Option<Spanned<f64>>,
    bridge: Option<bool>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGw {
    points: Option<Spanned<Vec<[f64; 3]>>>,
    generations: Option<usize>,
    trees: Option<Spanned<usize>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMartingale {
    checkpoints: Option<Spanned<usize>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScaling {
    lbar: Option<Spanned<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSplitting {
    components: Option<Spanned<usize>>,
    alpha: Option<Spanned<f64>>,
}

fn line_at(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line of a `[name]` table header, if present.
fn header_line(text: &str, name: &str) -> Option<usize> {
    let target = format!("[{name}]");
    text.lines().position(|l| l.trim() == target).map(|i| i + 1)
}

struct Validator<'a> {
    text: &'a str,
}

impl Validator<'_> {
    fn fail<T>(&self, span: Range<usize>, msg: impl AsRef<str>) -> Result<T> {
        Err(Error::Config(format!("line {}: {}", line_at(self.text, span.start), msg.as_ref())))
    }

    fn take<T: Clone>(&self, v: Option<Spanned<T>>, default: T, ok: impl Fn(&T) -> Option<String>) -> Result<T> {
        match v {
            None => Ok(default),
            Some(s) => match ok(s.get_ref()) {
                None => Ok(s.get_ref().clone()),
                Some(msg) => self.fail(s.span(), msg),
            },
        }
    }
}

fn positive(name: &'static str) -> impl Fn(&f64) -> Option<String> {
    move |v| (!(*v > 0.0 && v.is_finite())).then(|| format!("{name} must be positive and finite, got {v}"))
}

fn nonempty_positive(name: &'static str) -> impl Fn(&Vec<f64>) -> Option<String> {
    move |v| {
        if v.is_empty() {
            Some(format!("{name} must not be empty"))
        } else {
            v.iter()
                .find(|x| !(**x > 0.0 && x.is_finite()))
                .map(|x| format!("{name} must contain positive finite values, got {x}"))
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| format!("line {}: ", line_at(text, s.start))).unwrap_or_default();
            Error::Config(format!("{line}{}", e.message().trim()))
        })?;
        let v = Validator { text };
        let d = Self::default();
        let at_least_one = |name: &'static str| move |n: &usize| (*n == 0).then(|| format!("{name} must be at least 1"));

        let seed = raw.seed.map(|s| s.into_inner()).unwrap_or(d.seed);
        let paths = v.take(raw.paths, d.paths, at_least_one("paths"))?;

        let solver = match raw.solver {
            None => d.solver.clone(),
            Some(s) => {
                let ds = &d.solver;
                let nx = v.take(s.nx, ds.nx, at_least_one("nx"))?;
                let cfl = |f: &f64| {
                    if !(*f > 0.0) {
                        Some(format!("dt_factor must be positive, got {f}"))
                    } else if *f > 0.5 {
                        Some(format!(
                            "dt_factor = {f} gives dt = {f}·dx² above the CFL bound dt ≤ dx²/2 of the explicit scheme"
                        ))
                    } else {
                        None
                    }
                };
                let cutoff = v.take(s.cutoff, ds.cutoff, positive("cutoff"))?;
                let levels_default = default_ladder(cutoff);
                let levels = v.take(s.levels, levels_default, |l: &Vec<f64>| {
                    nonempty_positive("levels")(l)
                        .or_else(|| l.windows(2).any(|w| w[0] >= w[1]).then(|| "levels must be strictly increasing".into()))
                        .or_else(|| l.iter().any(|&x| x > cutoff).then(|| format!("levels must not exceed the cutoff {cutoff}")))
                })?;
                SolverSettings {
                    domain_length: v.take(s.domain_length, ds.domain_length, positive("J"))?,
                    nx,
                    dt_factor: v.take(s.dt_factor, ds.dt_factor, cfl)?,
                    horizon: v.take(s.horizon, ds.horizon, positive("horizon"))?,
                    gamma: v.take(s.gamma, ds.gamma, |g: &f64| {
                        (!(*g >= 1.0 && g.is_finite())).then(|| format!("gamma must be finite and at least 1, got {g}"))
                    })?,
                    cutoff,
                    levels,
                    initial: s.initial.unwrap_or_else(|| ds.initial.clone()),
                    snapshot_every: s.snapshot_every.unwrap_or(ds.snapshot_every),
                }
            }
        };
        if let Err(e) = solver.build() {
            let line = header_line(text, "solver").or_else(|| header_line(text, "solver.initial"));
            let msg = match e {
                Error::Config(m) | Error::Domain(m) => m,
                other => other.to_string(),
            };
            return Err(Error::Config(match line {
                Some(l) => format!("line {l}: {msg}"),
                None => msg,
            }));
        }

        let sweep = match raw.sweep {
            None => d.sweep.clone(),
            Some(s) => SweepSettings {
                gammas: v.take(s.gammas, d.sweep.gammas.clone(), |g: &Vec<f64>| {
                    if g.is_empty() {
                        Some("gammas must not be empty".into())
                    } else {
                        g.iter().find(|x| !(**x >= 1.0 && x.is_finite())).map(|x| format!("gammas must be at least 1, got {x}"))
                    }
                })?,
                levels: match s.levels {
                    None => None,
                    Some(l) => Some(v.take(Some(l), vec![], nonempty_positive("levels"))?),
                },
            },
        };
        let ruin = match raw.ruin {
            None => d.ruin.clone(),
            Some(r) => RuinSettings {
                levels: v.take(r.levels, d.ruin.levels.clone(), |l: &Vec<f64>| {
                    nonempty_positive("levels")(l)
                        .or_else(|| l.iter().find(|&&x| x <= 2.0).map(|x| format!("ruin levels must exceed 2, got {x}")))
                })?,
                dt: v.take(r.dt, d.ruin.dt, positive("dt"))?,
                bridge: r.bridge.unwrap_or(d.ruin.bridge),
            },
        };
        let gw = match raw.gw {
            None => d.gw.clone(),
            Some(g) => GwSettings {
                points: v.take(g.points, d.gw.points.clone(), |p: &Vec<[f64; 3]>| {
                    if p.is_empty() {
                        Some("points must not be empty".into())
                    } else {
                        p.iter()
                            .find(|[gm, l, k]| !(*gm > 1.0 && *l > 2.0 && *k > 0.0))
                            .map(|p| format!("each point needs gamma > 1, L > 2, K > 0; got {p:?}"))
                    }
                })?,
                generations: g.generations.unwrap_or(d.gw.generations),
                trees: v.take(g.trees, d.gw.trees, at_least_one("trees"))?,
            },
        };
        let martingale = MartingaleSettings {
            checkpoints: v.take(
                raw.martingale.and_then(|m| m.checkpoints),
                d.martingale.checkpoints,
                at_least_one("checkpoints"),
            )?,
        };
        let scaling = ScalingSettings {
            lbar: v.take(raw.scaling.and_then(|s| s.lbar), d.scaling.lbar, |l: &f64| {
                (!(*l >= 1.0 && l.is_finite())).then(|| format!("lbar must be at least 1, got {l}"))
            })?,
        };
        let splitting = match raw.splitting {
            None => d.splitting.clone(),
            Some(s) => SplittingSettings {
                components: v.take(s.components, d.splitting.components, at_least_one("components"))?,
                alpha: v.take(s.alpha, d.splitting.alpha, |a: &f64| {
                    (!(*a > 0.0 && *a < 1.0)).then(|| format!("alpha must lie in (0, 1), got {a}"))
                })?,
            },
        };
        Ok(Self {
            seed,
            paths,
            solver,
            sweep,
            ruin,
            gw,
            martingale,
            scaling,
            splitting,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

/// Everything needed to regenerate a run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub artifact_version: String,
    pub seed: u64,
    pub paths: usize,
    pub config: ExperimentConfig,
    pub outputs: Vec<String>,
    pub threads: usize,
    pub wall_clock_seconds: f64,
    pub steps: u64,
    /// Verdict of commands that test a property.
    pub passed: Option<bool>,
}

struct RunDir {
    root: PathBuf,
    outputs: Vec<String>,
    start: Instant,
}

impl RunDir {
    fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            outputs: Vec::new(),
            start: Instant::now(),
        })
    }

    fn write(&mut self, rel: &str, contents: &str) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, contents)?;
        self.outputs.push(rel.to_string());
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let s = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
        self.write(rel, &(s + "\n"))
    }

    fn finish(mut self, command: &str, cfg: &ExperimentConfig, steps: u64, passed: Option<bool>) -> Result<RunManifest> {
        let m = RunManifest {
            command: command.into(),
            artifact_version: ARTIFACT_VERSION.into(),
            seed: cfg.seed,
            paths: cfg.paths,
            config: cfg.clone(),
            outputs: self.outputs.clone(),
            threads: rayon::current_num_threads(),
            wall_clock_seconds: self.start.elapsed().as_secs_f64(),
            steps,
            passed,
        };
        self.write_json("manifest.json", &m)?;
        Ok(m)
    }
}

fn ensemble(cfg: &SolverConfig, seed: u64, paths: usize) -> Result<Vec<TrajectoryRecord>> {
    (0..paths as u64)
        .into_par_iter()
        .map(|i| run_trajectory_indexed(cfg, seed, i))
        .collect()
}

fn summary_row(r: &TrajectoryRecord) -> String {
    let sup = r.snapshots.last().map(|s| s.sup()).unwrap_or(f64::NAN);
    let extra = r.extrapolated_blowup_time().map(|t| format!("{t:.12e}")).unwrap_or_default();
    format!("{},{},{},{},{sup:.12e},{extra}\n", r.index, r.status.name(), r.steps, r.clamp_events)
}

/// Runs `paths` trajectories and writes per-trajectory snapshot and hit-time
/// CSVs, a summary table and the manifest.
pub fn cmd_simulate(cfg: &ExperimentConfig, out: &Path) -> Result<RunManifest> {
    let solver = cfg.solver.build()?;
    let mut dir = RunDir::create(out)?;
    let records = ensemble(&solver, cfg.seed, cfg.paths)?;
    let mut summary = format!("{SUMMARY_CSV_HEADER}\n");
    for r in &records {
        dir.write(&format!("trajectories/traj_{:05}.csv", r.index), &r.snapshots_csv())?;
        dir.write(&format!("hits/hits_{:05}.csv", r.index), &r.hit_table_csv())?;
        summary.push_str(&summary_row(r));
    }
    dir.write("summary.csv", &summary)?;
    let steps = records.iter().map(|r| r.steps as u64).sum();
    dir.finish("simulate", cfg, steps, None)
}

/// One row of the exponent sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub gamma: f64,
    pub level: f64,
    pub n_paths: usize,
    pub hits: usize,
    pub hit_fraction: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Median of `σ_L` with misses counted as `+∞`; `None` when that is infinite.
    pub median_hit_time: Option<f64>,
}

impl SweepRow {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.gamma,
            self.level,
            self.n_paths,
            self.hits,
            self.hit_fraction,
            self.ci_low,
            self.ci_high,
            self.median_hit_time.map(|t| format!("{t:.12e}")).unwrap_or_default()
        )
    }
}

/// Per `(γ, L)` hit statistics; every exponent reuses the same seed and
/// trajectory indices, so rows are paired across `γ`.
pub fn sweep_gamma(cfg: &ExperimentConfig, gammas: &[f64], levels: Option<&[f64]>) -> Result<(Vec<SweepRow>, u64)> {
    if gammas.is_empty() {
        return Err(Error::Config("the exponent list is empty".into()));
    }
    let mut base = cfg.solver.clone();
    if let Some(l) = levels {
        if l.is_empty() {
            return Err(Error::Config("the level list is empty".into()));
        }
        let mut l = l.to_vec();
        l.sort_by(f64::total_cmp);
        l.dedup();
        base.cutoff = base.cutoff.max(l[l.len() - 1]);
        base.levels = l;
    }
    let mut rows = Vec::new();
    let mut steps = 0;
    for &gamma in gammas {
        let solver = base.with_gamma(gamma).build()?;
        let records = ensemble(&solver, cfg.seed, cfg.paths)?;
        steps += records.iter().map(|r| r.steps as u64).sum::<u64>();
        for (k, &level) in solver.levels.iter().enumerate() {
            let mut times: Vec<f64> = records
                .iter()
                .map(|r| r.hit_times[k].unwrap_or(f64::INFINITY))
                .collect();
            times.sort_by(f64::total_cmp);
            let hits = times.iter().filter(|t| t.is_finite()).count();
            let n = records.len();
            let (lo, hi) = wilson_interval(hits as u64, n as u64, Z95);
            let mid = times[(n - 1) / 2];
            rows.push(SweepRow {
                gamma,
                level,
                n_paths: n,
                hits,
                hit_fraction: hits as f64 / n as f64,
                ci_low: lo,
                ci_high: hi,
                median_hit_time: mid.is_finite().then_some(mid),
            });
        }
    }
    Ok((rows, steps))
}

pub fn cmd_sweep_gamma(cfg: &ExperimentConfig, out: &Path) -> Result<RunManifest> {
    let mut dir = RunDir::create(out)?;
    let (rows, steps) = sweep_gamma(cfg, &cfg.sweep.gammas, cfg.sweep.levels.as_deref())?;
    let mut csv = format!("{SWEEP_CSV_HEADER}\n");
    rows.iter().for_each(|r| {
        csv.push_str(&r.csv_row());
        csv.push('\n');
    });
    dir.write("sweep_gamma.csv", &csv)?;
    dir.finish("sweep-gamma", cfg, steps, None)
}

pub fn cmd_martingale_check(cfg: &ExperimentConfig, out: &Path) -> Result<RunManifest> {
    let solver = cfg.solver.build()?;
    let mut dir = RunDir::create(out)?;
    let params = centered_params(solver.horizon(), solver.domain.length())?;
    let consts = jensen_constants(cfg.solver.gamma)?;
    let paths = martingale_ensemble(&solver, params, consts, cfg.seed, cfg.paths)?;
    let report = martingale_diagnostics(&paths, cfg.martingale.checkpoints)?;
    let mut csv = String::from("time,mean_m,drift,std_error,ci_low,ci_high,supermartingale_ok\n");
    for c in &report.checkpoints {
        csv.push_str(&format!(
            "{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{}\n",
            c.time, c.mean_m, c.drift, c.std_error, c.ci_low, c.ci_high, c.supermartingale_ok
        ));
    }
    dir.write("martingale_checkpoints.csv", &csv)?;
    dir.write_json("martingale.json", &report)?;
    let passed = report.supermartingale_ok() && report.jensen_bound_fraction == 1.0;
    let steps = paths.iter().map(|p| p.times.len().saturating_sub(1) as u64).sum();
    dir.finish("martingale-check", cfg, steps, Some(passed))
}

pub fn cmd_ruin(cfg: &ExperimentConfig, out: &Path) -> Result<RunManifest> {
    let mut dir = RunDir::create(out)?;
    let mut src = BrownianPaths::new(cfg.ruin.dt, cfg.seed)?;
    if !cfg.ruin.bridge {
        src = src.without_bridge();
    }
    let mut csv = format!("{PASSAGE_CSV_HEADER}\n");
    let mut passed = true;
    for &l in &cfg.ruin.levels {
        let est = first_passage_mc(&src, &RuinProblem::doubling(l)?, cfg.paths)?;
        passed &= est.z_score() <= 3.0;
        csv.push_str(&est.csv_row(l));
        csv.push('\n');
    }
    dir.write("ruin.csv", &csv)?;
    dir.finish("ruin", cfg, 0, Some(passed))
}

pub fn cmd_scaling_check(cfg: &ExperimentConfig, out: &Path) -> Result<RunManifest> {
    let solver = cfg.solver.build()?;
    let map = ScalingMap::new(cfg.scaling.lbar, cfg.solver.gamma)?;
    let mut dir = RunDir::create(out)?;
    let consistency = scaling_consistency_check(&solver, &map, Some(cfg.seed))?;
    dir.write_json("scaling_consistency.json", &consistency)?;
    let seeds = DistributionSeeds {
        source: cfg.seed,
        scaled: cfg.seed.wrapping_add(1),
    };
    let dist = scaling_distribution_check(&solver, &map, cfg.paths, seeds)?;
    dir.write_json("scaling_distribution.json", &dist)?;
    let passed = consistency.exact_lattice_residual <= 1e-12 && dist.passed();
    dir.finish("scaling-check", cfg, 0, Some(passed))
}

pub fn cmd_splitting(cfg: &ExperimentConfig, out: &Path) -> Result<RunManifest> {
    let solver = cfg.solver.build()?;
    let mut dir = RunDir::create(out)?;
    let r = split_equivalence_check(
        &solver,
        cfg.splitting.components,
        cfg.paths,
        cfg.seed,
        cfg.seed.wrapping_add(1 << 32),
        cfg.splitting.alpha,
    )?;
    dir.write_json("splitting.json", &r)?;
    dir.finish("splitting", cfg, 0, Some(r.passed()))
}

pub fn cmd_gw(cfg: &ExperimentConfig, out: &Path) -> Result<RunManifest> {
    let mut dir = RunDir::create(out)?;
    let points: Vec<(f64, f64, f64)> = cfg.gw.points.iter().map(|&[g, l, k]| (g, l, k)).collect();
    let rows = gw_sweep(&points, cfg.gw.generations, cfg.gw.trees, cfg.seed)?;
    let mut csv = format!("{GW_CSV_HEADER}\n");
    rows.iter().for_each(|r| {
        csv.push_str(&r.csv_row());
        csv.push('\n');
    });
    dir.write("gw_sweep.csv", &csv)?;
    dir.finish("gw", cfg, 0, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_default() {
        assert_eq!(ExperimentConfig::from_toml_str("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn cfl_violation_names_line_and_bound() {
        let text = "seed = 3\n\n[solver]\nnx = 16\ndt_factor = 0.6\n";
        let Err(Error::Config(msg)) = ExperimentConfig::from_toml_str(text) else {
            panic!("expected config error")
        };
        assert!(msg.starts_with("line 5:"), "{msg}");
        assert!(msg.contains("CFL"), "{msg}");
    }

    #[test]
    fn syntax_and_unknown_keys_are_located() {
        let Err(Error::Config(msg)) = ExperimentConfig::from_toml_str("[solver]\nnx = 16\nbogus = 1\n") else {
            panic!()
        };
        assert!(msg.starts_with("line 3:"), "{msg}");
        let Err(Error::Config(msg)) = ExperimentConfig::from_toml_str("paths = \n") else { panic!() };
        assert!(msg.starts_with("line 1:"), "{msg}");
    }

    #[test]
    fn initial_profile_and_levels_parse() {
        let text = "[solver]\nlevels = [2.0, 4.0]\ncutoff = 4.0\n[solver.initial]\nkind = \"bump\"\namplitude = 2.0\ncenter = 0.5\nhalf_width = 0.2\n";
        let c = ExperimentConfig::from_toml_str(text).unwrap();
        assert_eq!(c.solver.levels, vec![2.0, 4.0]);
        assert!(matches!(c.solver.initial, InitialProfile::Bump { .. }));
        let bad = "[solver]\nlevels = [2.0, 5.0]\ncutoff = 4.0\n";
        assert!(ExperimentConfig::from_toml_str(bad).unwrap_err().to_string().contains("line 2"));
    }

    #[test]
    fn empty_gamma_list_rejected() {
        assert!(matches!(ExperimentConfig::from_toml_str("[sweep]\ngammas = []\n"), Err(Error::Config(_))));
        assert!(sweep_gamma(&ExperimentConfig::default(), &[], None).is_err());
    }
}
