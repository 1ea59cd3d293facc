//! Verification harnesses. Each check runs a fixed, seeded experiment and
//! compares it against an analytic oracle or a pre-registered statistical
//! criterion. Suites group the checks by construction.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::branching::{
    gw_extinction, gw_mean, gw_simulate, mass_decompose, simulate_split_system_with,
    split_equivalence_check, CoefficientRule, DecomposeSpec, GwModel, DEFAULT_SWEEP,
};
use crate::error::{Error, Result};
use crate::kernels::{
    jensen_constants, phi_l1_norm, phi_ratio, phi_unchecked, Domain, JensenConstants,
    TestFunctionParams,
};
use crate::martingale::{centered_params, jensen_chain_check, martingale_diagnostics, martingale_ensemble};
use crate::noise::{next_open_unit, restrict_noise, sample_noise_indexed, uniform_stream, NoiseGrid};
use crate::passage::{first_passage_mc, reflection_tail, BrownianPaths, RuinProblem, SpdeMassPaths};
use crate::quad::adaptive_simpson;
use crate::scaling::{
    scaling_consistency_check_with_noise_exponent, scaling_distribution_check_with_noise_exponent,
    DistributionSeeds, ScalingMap,
};
use crate::solver::{
    mild_solution_step_check, run_trajectory, run_trajectory_indexed, DriftlessNonlinearity,
    FieldState, InitialProfile, SnapshotPlan, SolverConfig,
};
use crate::stats::{proportion_se, Moments};

pub const SUITES: [&str; 6] = ["jensen", "ruin", "scaling", "splitting", "gw", "mild"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Replace a load-bearing ingredient by a wrong one; affected checks must fail.
    pub negative_control: bool,
    /// Overrides the ensemble size of Monte Carlo checks.
    pub paths: Option<usize>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 1,
            negative_control: false,
            paths: None,
        }
    }
}

impl VerifyOptions {
    fn paths(&self, default: usize) -> usize {
        self.paths.unwrap_or(default)
    }

    /// Independent seed per check.
    fn seed_for(&self, tag: &str) -> u64 {
        tag.bytes().fold(self.seed ^ 0xcbf2_9ce4_8422_2325, |h, b| {
            (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// False for quantities that are recorded but not asserted.
    pub asserted: bool,
    pub summary: String,
    pub detail: serde_json::Value,
}

impl Check {
    fn new(name: &str, passed: bool, summary: String, detail: serde_json::Value) -> Self {
        Self {
            name: name.into(),
            passed,
            asserted: true,
            summary,
            detail,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: String,
    pub negative_control: bool,
    pub checks: Vec<Check>,
    pub elapsed_seconds: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed || !c.asserted)
    }
}

/// Runs one suite, or every suite for `"all"`.
pub fn run_suite(name: &str, opts: &VerifyOptions) -> Result<Vec<SuiteReport>> {
    if name == "all" {
        return SUITES.iter().map(|s| run_one(s, opts)).collect();
    }
    Ok(vec![run_one(name, opts)?])
}

fn run_one(name: &str, opts: &VerifyOptions) -> Result<SuiteReport> {
    let start = Instant::now();
    let checks = match name {
        "jensen" => vec![
            check_jensen_fields(opts)?,
            check_constants(opts)?,
            check_phi_audit()?,
            check_l1_norm()?,
            check_martingale(opts)?,
        ],
        "ruin" => vec![check_ruin_oracle(opts)?, check_reflection(opts)?, record_spde_passage(opts)?],
        "scaling" => vec![check_scaling_consistency(opts)?, check_scaling_distribution(opts)?],
        "splitting" => vec![
            check_split_telescoping(opts)?,
            check_split_identity(opts)?,
            check_split_equivalence(opts)?,
            check_decomposition(opts)?,
        ],
        "gw" => vec![check_gw(opts)?],
        "mild" => vec![check_mild(opts)?],
        other => {
            return Err(Error::Config(format!(
                "unknown suite `{other}`; expected one of {}, all",
                SUITES.join(", ")
            )))
        }
    };
    Ok(SuiteReport {
        suite: name.into(),
        negative_control: opts.negative_control,
        checks,
        elapsed_seconds: start.elapsed().as_secs_f64(),
    })
}

fn unit_config(nx: usize, horizon: f64, gamma: f64, profile: &InitialProfile) -> Result<SolverConfig> {
    SolverConfig::standard(
        Domain::new(1.0)?,
        nx,
        0.25,
        horizon,
        DriftlessNonlinearity::power(gamma),
        profile,
    )
}

const SINE: InitialProfile = InitialProfile::Sine { amplitude: 1.0 };

/// Nonnegative test fields: Hölder-extremal profiles `φ^{(a-2)/(2γ)}`, bump
/// mixtures, and rough fields with zero stretches.
fn random_field(
    rng: &mut rand_chacha::ChaCha8Rng,
    kind: usize,
    nx: usize,
    dx: f64,
    t: f64,
    p: &TestFunctionParams,
    c: &JensenConstants,
) -> Vec<f64> {
    let amp = 10f64.powf(6.0 * next_open_unit(rng) - 3.0);
    let nodes = (0..nx).map(|j| (j + 1) as f64 * dx);
    match kind {
        0 | 1 => {
            let e = (c.a - 2.0) / (2.0 * c.gamma);
            // Normalized at the peak and truncated in the tails to stay finite.
            let peak = phi_unchecked(t, p.center, p);
            nodes.map(|x| amp * (phi_unchecked(t, x, p) / peak).max(1e-8).powf(e)).collect()
        }
        2 => {
            let k = 1 + (5.0 * next_open_unit(rng)) as usize;
            let bumps: Vec<(f64, f64, f64)> = (0..k)
                .map(|_| (next_open_unit(rng), 0.01 + 0.2 * next_open_unit(rng), amp * next_open_unit(rng)))
                .collect();
            nodes
                .map(|x| bumps.iter().map(|(c, w, a)| a * (-((x - c) / w).powi(2)).exp()).sum())
                .collect()
        }
        _ => {
            let mut v = 0.0_f64;
            nodes
                .map(|_| {
                    v += next_open_unit(rng) - 0.5;
                    if next_open_unit(rng) < 0.1 {
                        0.0
                    } else {
                        amp * v.abs()
                    }
                })
                .collect()
        }
    }
}

/// Jensen chain on randomized nonnegative fields at `nx = 1024`.
pub fn check_jensen_fields(opts: &VerifyOptions) -> Result<Check> {
    const NX: usize = 1024;
    const PER_GAMMA: usize = 1000;
    let dx = 1.0 / (NX + 1) as f64;
    let inflate = if opts.negative_control { 1.5 } else { 1.0 };
    let mut per_gamma = Vec::new();
    let mut all_ok = true;
    for (gi, gamma) in [1.1, 1.5, 2.0].into_iter().enumerate() {
        let mut consts = jensen_constants(gamma)?;
        consts.c1 *= inflate;
        let seed = opts.seed_for("jensen_fields");
        let results: Vec<(bool, f64, usize)> = (0..PER_GAMMA as u64)
            .into_par_iter()
            .map(|k| {
                let mut rng = uniform_stream(seed, (gi as u64) << 32 | k);
                let horizon = 10f64.powf(-5.0 + 3.0 * next_open_unit(&mut rng));
                let center = 0.3 + 0.4 * next_open_unit(&mut rng);
                let kind = (k % 4) as usize;
                let t = if kind == 0 { 0.0 } else { horizon * next_open_unit(&mut rng) };
                let p = TestFunctionParams::centered(horizon, center)?;
                let values = random_field(&mut rng, kind, NX, dx, t, &p, &consts);
                let chk = jensen_chain_check(&FieldState { time: t, values }, &p, &consts, dx)?;
                let ratio = if chk.lhs > 0.0 { chk.margin / chk.lhs } else { 0.0 };
                Ok((chk.holds(), ratio, kind))
            })
            .collect::<Result<_>>()?;
        let passing = results.iter().filter(|r| r.0).count();
        let worst = results.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
        let failing_by_kind: Vec<usize> = (0..4).map(|k| results.iter().filter(|r| !r.0 && r.2 == k).count()).collect();
        all_ok &= passing == PER_GAMMA;
        per_gamma.push(json!({"gamma": gamma, "fields": PER_GAMMA, "passing": passing, "min_relative_margin": worst,
            "failing_by_kind": failing_by_kind}));
    }
    Ok(Check::new(
        "jensen_chain_fields",
        all_ok,
        format!(
            "margin ≥ -1e-6·lhs on {} of {} fields",
            per_gamma.iter().map(|g| g["passing"].as_u64().unwrap_or(0)).sum::<u64>(),
            3 * PER_GAMMA
        ),
        json!({"nx": NX, "per_gamma": per_gamma, "c1_inflation": inflate}),
    ))
}

/// Constant identities on sampled exponents, with `C(a)` rebuilt as
/// `(8π)^{(1-a)/2} a^{-1/2}`.
pub fn check_constants(opts: &VerifyOptions) -> Result<Check> {
    let mut rng = uniform_stream(opts.seed_for("constants"), 0);
    let mut worst = 0.0_f64;
    for _ in 0..50 {
        let gamma = 1.0 + 3.0 * next_open_unit(&mut rng);
        let c = jensen_constants(gamma)?;
        let a_alt = 1.0 - 1.0 / (2.0 * gamma - 1.0);
        let c_alt = (8.0 * std::f64::consts::PI).powf(0.5 * (1.0 - a_alt)) / a_alt.sqrt();
        let c1_alt = c_alt.powf(1.0 - 2.0 * gamma);
        for err in [
            (c.weight_identity() - 1.0).abs(),
            (c.horizon_exponent() + 0.5).abs(),
            (c.a - a_alt).abs(),
            (c.c_of_a - c_alt).abs() / c_alt,
            (c.c1 - c1_alt).abs() / c1_alt,
        ] {
            worst = worst.max(err);
        }
    }
    Ok(Check::new(
        "constant_identities",
        worst <= 1e-14,
        format!("largest identity defect {worst:.2e} over 50 exponents"),
        json!({"samples": 50, "max_defect": worst, "tolerance": 1e-14}),
    ))
}

/// Infimum of `φ(t,x)/φ(T,x)` over a grid; the exact value is `2^{-1/2}`.
pub fn check_phi_audit() -> Result<Check> {
    let horizon = 1.0;
    let mut inf = f64::INFINITY;
    for i in 0..=200 {
        let t = horizon * i as f64 / 200.0;
        for j in 0..=400 {
            let x = -10.0 + 20.0 * j as f64 / 400.0;
            inf = inf.min(phi_ratio(t, x, horizon)?);
        }
    }
    let target = std::f64::consts::FRAC_1_SQRT_2;
    Ok(Check::new(
        "phi_ratio_infimum",
        (inf - target).abs() <= 1e-9,
        format!("grid infimum {inf:.15} (2^(-1/2) = {target:.15}; a lower bound of √2 does not hold)"),
        json!({"infimum": inf, "expected": target, "stated_bound": std::f64::consts::SQRT_2, "attained_at": {"t": 0.0, "x": 0.0}}),
    ))
}

/// Whole-line `∫ φ^a` closed form against adaptive quadrature.
pub fn check_l1_norm() -> Result<Check> {
    let horizon = 1.0;
    let p = TestFunctionParams::new(horizon)?;
    let mut rows = Vec::new();
    let mut worst = 0.0_f64;
    for a in [0.3, 0.5, 1.0, 1.7] {
        for frac in [0.0, 0.5, 1.0] {
            let t = frac * horizon;
            let q = adaptive_simpson(|x| phi_unchecked(t, x, &p).powf(a), -80.0, 80.0, 1e-13);
            let c = phi_l1_norm(t, horizon, a)?;
            worst = worst.max((q - c).abs());
            rows.push(json!({"a": a, "t_over_T": frac, "closed_form": c, "quadrature": q}));
        }
    }
    Ok(Check::new(
        "phi_l1_norm",
        worst <= 1e-8,
        format!("closed form vs quadrature, max difference {worst:.2e}"),
        json!({"rows": rows, "max_difference": worst}),
    ))
}

/// Supermartingale direction, realized vs predicted quadratic variation and
/// the pathwise Jensen bound on an SPDE ensemble.
pub fn check_martingale(opts: &VerifyOptions) -> Result<Check> {
    let cfg = unit_config(128, 0.05, 1.5, &SINE)?;
    let params = centered_params(cfg.horizon(), 1.0)?;
    let n = opts.paths(1000);
    let ens = martingale_ensemble(&cfg, params, jensen_constants(1.5)?, opts.seed_for("martingale"), n)?;
    let r = martingale_diagnostics(&ens, 5)?;
    let qv_ok = (r.qv_ratio - 1.0).abs() <= 0.1;
    let ok = r.supermartingale_ok() && qv_ok && r.jensen_bound_fraction == 1.0;
    Ok(Check::new(
        "martingale_diagnostics",
        ok,
        format!(
            "drift within 3 SE at {}/5 checkpoints, QV ratio {:.4}, Jensen bound on {:.1}% of paths",
            r.checkpoints.iter().filter(|c| c.supermartingale_ok).count(),
            r.qv_ratio,
            100.0 * r.jensen_bound_fraction
        ),
        serde_json::to_value(&r).unwrap_or_default(),
    ))
}

fn brownian_source(opts: &VerifyOptions, tag: &str) -> Result<BrownianPaths> {
    let seed = opts.seed_for(tag);
    Ok(if opts.negative_control {
        BrownianPaths::new(0.25, seed)?.without_bridge()
    } else {
        BrownianPaths::new(0.01, seed)?
    })
}

/// Bridge-corrected Brownian first passage against `1/(L-1)`.
pub fn check_ruin_oracle(opts: &VerifyOptions) -> Result<Check> {
    let src = brownian_source(opts, "ruin")?;
    let n = opts.paths(100_000);
    let mut rows = Vec::new();
    let mut ok = true;
    for l in [3.0, 5.0, 10.0] {
        let est = first_passage_mc(&src, &RuinProblem::doubling(l)?, n)?;
        ok &= est.z_score() <= 3.0;
        rows.push(json!({"L": l, "estimate": est, "z": est.z_score()}));
    }
    Ok(Check::new(
        "gamblers_ruin",
        ok,
        format!(
            "max |estimate - 1/(L-1)| / SE = {:.2} over L ∈ {{3, 5, 10}}",
            rows.iter().map(|r| r["z"].as_f64().unwrap_or(f64::INFINITY)).fold(0.0, f64::max)
        ),
        json!({"paths": n, "dt": src.dt, "bridge_correction": src.bridge_correction, "rows": rows}),
    ))
}

/// Reflection value below `2c(2πs)^{-1/2}` on random `(c, s)`, and the Monte
/// Carlo supremum distribution against it.
pub fn check_reflection(opts: &VerifyOptions) -> Result<Check> {
    let mut rng = uniform_stream(opts.seed_for("reflection_bound"), 0);
    let mut violations = 0;
    for _ in 0..1000 {
        let c = 10f64.powf(4.0 * next_open_unit(&mut rng) - 2.0);
        let s = 10f64.powf(4.0 * next_open_unit(&mut rng) - 2.0);
        let r = reflection_tail(c, s)?;
        if r.value > r.bound {
            violations += 1;
        }
    }
    let src = brownian_source(opts, "reflection_mc")?;
    let n = opts.paths(100_000);
    let mut rows = Vec::new();
    let mut mc_ok = true;
    for (c, s) in [(0.5, 1.0), (1.0, 1.0), (2.0, 2.0)] {
        let (f, se) = src.sup_below_fraction(c, s, n)?;
        let value = reflection_tail(c, s)?.value;
        let z = if se > 0.0 { (f - value).abs() / se } else { f64::INFINITY };
        mc_ok &= z <= 3.0;
        rows.push(json!({"c": c, "s": s, "analytic": value, "estimate": f, "se": se, "z": z}));
    }
    Ok(Check::new(
        "reflection_bound",
        violations == 0 && mc_ok,
        format!("{violations} bound violations in 1000 draws; Monte Carlo tails within 3 SE: {mc_ok}"),
        json!({"bound_samples": 1000, "violations": violations, "paths": n, "monte_carlo": rows}),
    ))
}

/// First passage of the SPDE mass from 2, recorded against `1/(2(L-1))`.
pub fn record_spde_passage(opts: &VerifyOptions) -> Result<Check> {
    let cfg = unit_config(31, 0.1, 1.5, &SINE)?;
    let params = centered_params(cfg.horizon(), 1.0)?;
    let src = SpdeMassPaths::new(&cfg, params, jensen_constants(1.5)?, opts.seed_for("spde_passage"), 2.0)?;
    let n = opts.paths(400).max(100);
    let mut rows = Vec::new();
    for l in [3.0, 5.0] {
        let est = first_passage_mc(&src, &RuinProblem::doubling(l)?.with_horizon(cfg.horizon())?, n)?;
        rows.push(json!({"L": l, "hit_fraction": est.hit_fraction, "timeout_fraction": est.timeout_fraction,
            "ci": [est.ci_low, est.ci_high], "lower_bound_claim": 1.0 / (2.0 * (l - 1.0))}));
    }
    let mut c = Check::new(
        "spde_mass_passage",
        true,
        "recorded only: discretization error of the SPDE mass path is not quantified".into(),
        json!({"gamma": 1.5, "nx": 31, "paths": n, "initial_mass": src.initial_mass()?, "rows": rows}),
    );
    c.asserted = false;
    Ok(c)
}

fn scaling_exponent(map: &ScalingMap, opts: &VerifyOptions) -> f64 {
    if opts.negative_control {
        2.0 * (map.gamma - 1.0)
    } else {
        map.exponents().noise
    }
}

/// Exact-lattice commutation under noise, identity map, and zero-noise
/// stencil residual shrinking under `(dt, dx) → (dt/4, dx/2)`.
pub fn check_scaling_consistency(opts: &VerifyOptions) -> Result<Check> {
    let map = ScalingMap::new(2.0, 1.5)?;
    let e = scaling_exponent(&map, opts);
    let seed = opts.seed_for("scaling_consistency");
    let cfg = unit_config(31, 0.02, 1.5, &SINE)?;
    let noisy = scaling_consistency_check_with_noise_exponent(&cfg, &map, Some(seed), e)?;
    let ident = scaling_consistency_check_with_noise_exponent(&cfg, &ScalingMap::identity(1.5), Some(seed), 0.0)?;
    let coarse = scaling_consistency_check_with_noise_exponent(&cfg, &map, None, e)?;
    let fine = scaling_consistency_check_with_noise_exponent(&unit_config(63, 0.02, 1.5, &SINE)?, &map, None, e)?;
    let (a, b) = (coarse.stencil_residual.unwrap_or(f64::NAN), fine.stencil_residual.unwrap_or(f64::NAN));
    let shrink = a / b;
    let ok = noisy.exact_lattice_residual <= 1e-12 && ident.exact_lattice_residual == 0.0 && shrink >= 3.0;
    Ok(Check::new(
        "scaling_consistency",
        ok,
        format!(
            "image-lattice residual {:.2e}, identity residual {:.1e}, stencil residual shrink {shrink:.2}×",
            noisy.exact_lattice_residual, ident.exact_lattice_residual
        ),
        json!({"lbar": 2.0, "gamma": 1.5, "noise_exponent": e, "image_lattice": noisy, "identity": ident,
            "stencil_coarse": coarse, "stencil_fine": fine, "shrink": shrink}),
    ))
}

/// Two-ensemble distribution check at `γ = 3/2`, `L̄ = 2`, plus its negative
/// control with the noise exponent `2(γ-1)`, which must be rejected.
pub fn check_scaling_distribution(opts: &VerifyOptions) -> Result<Check> {
    let map = ScalingMap::new(2.0, 1.5)?;
    let cfg = unit_config(63, 0.05, 1.5, &SINE)?;
    let n = opts.paths(1000);
    let seeds = DistributionSeeds {
        source: opts.seed_for("scaling_a"),
        scaled: opts.seed_for("scaling_b"),
    };
    let main = scaling_distribution_check_with_noise_exponent(&cfg, &map, n, seeds, scaling_exponent(&map, opts))?;
    let control = scaling_distribution_check_with_noise_exponent(&cfg, &map, n, seeds, 2.0 * (map.gamma - 1.0))?;
    let ok = main.passed() && !control.passed();
    Ok(Check::new(
        "scaling_distribution",
        ok,
        format!(
            "{}/{} statistics pass at Bonferroni level {:.1e}; wrong-exponent control rejected: {}",
            main.tests.iter().filter(|t| t.pass).count(),
            main.tests.len(),
            main.per_test_alpha,
            !control.passed()
        ),
        json!({"report": main, "negative_control": control}),
    ))
}

fn split_parts(u0: &[f64], weights: &[f64]) -> Vec<Vec<f64>> {
    let mut parts: Vec<Vec<f64>> = weights.iter().map(|w| u0.iter().map(|u| u * w).collect()).collect();
    let last = parts.len() - 1;
    for j in 0..u0.len() {
        let head: f64 = parts[..last].iter().map(|p| p[j]).sum();
        parts[last][j] = (u0[j] - head).max(0.0);
    }
    parts
}

/// Telescoping identity along full split trajectories.
pub fn check_split_telescoping(opts: &VerifyOptions) -> Result<Check> {
    let rule = if opts.negative_control {
        CoefficientRule::OwnPower
    } else {
        CoefficientRule::Telescoping
    };
    let mut worst = 0.0_f64;
    let mut runs = Vec::new();
    for (i, (gamma, weights)) in [(1.5, vec![0.5, 0.5]), (2.0, vec![0.2, 0.3, 0.5]), (2.5, vec![0.1, 0.2, 0.3, 0.4])]
        .into_iter()
        .enumerate()
    {
        let cfg = unit_config(31, 0.05, gamma, &InitialProfile::Sine { amplitude: 2.0 })?;
        let parts = split_parts(&cfg.u0, &weights);
        let base = opts.seed_for("split_telescoping") + 16 * i as u64;
        let seeds: Vec<u64> = (0..weights.len() as u64).map(|k| base + k).collect();
        let tr = simulate_split_system_with(&cfg, &parts, &seeds, 0, rule)?;
        worst = worst.max(tr.max_telescoping_error);
        runs.push(json!({"gamma": gamma, "components": weights.len(), "steps": tr.sum.steps,
            "max_error": tr.max_telescoping_error}));
    }
    Ok(Check::new(
        "split_telescoping",
        worst <= 1e-12,
        format!("largest relative defect {worst:.2e} along three trajectories"),
        json!({"runs": runs, "tolerance": 1e-12}),
    ))
}

/// `n = 1` split system equals the direct solver bit for bit.
pub fn check_split_identity(opts: &VerifyOptions) -> Result<Check> {
    let mut all = true;
    let mut rows = Vec::new();
    for gamma in [1.5, 2.0, 2.5] {
        let cfg = unit_config(31, 0.05, gamma, &InitialProfile::Sine { amplitude: 2.0 })?
            .with_snapshots(SnapshotPlan::Every(1));
        let seed = opts.seed_for("split_identity");
        let direct = run_trajectory(&cfg, seed)?;
        let split = simulate_split_system_with(&cfg, std::slice::from_ref(&cfg.u0), &[seed], 0, CoefficientRule::Telescoping)?;
        let same = split.sum == direct;
        all &= same;
        rows.push(json!({"gamma": gamma, "identical": same, "steps": direct.steps}));
    }
    Ok(Check::new(
        "split_single_component",
        all,
        format!("single-component system identical to the direct solver: {all}"),
        json!({"runs": rows}),
    ))
}

/// Moments of `Σuⁱ` against the direct solver on independent ensembles.
pub fn check_split_equivalence(opts: &VerifyOptions) -> Result<Check> {
    let cfg = unit_config(31, 0.05, 1.5, &SINE)?;
    let n = opts.paths(1000);
    let r = split_equivalence_check(&cfg, 3, n, opts.seed_for("split_a"), opts.seed_for("split_b"), 0.01)?;
    Ok(Check::new(
        "split_sum_equivalence",
        r.passed(),
        format!(
            "{}/{} moment tests pass at Bonferroni level {:.1e}",
            r.tests.iter().filter(|t| t.pass).count(),
            r.tests.len(),
            r.per_test_alpha
        ),
        serde_json::to_value(&r).unwrap_or_default(),
    ))
}

/// Decomposition of random fields: conservation, weighted thresholds, and
/// the reported achievable count on infeasible requests.
pub fn check_decomposition(opts: &VerifyOptions) -> Result<Check> {
    let nx = 399;
    let j = 20.0;
    let spec = DecomposeSpec::new(j, j / (nx + 1) as f64, 1.0);
    let mut rng = uniform_stream(opts.seed_for("decomposition"), 0);
    let (mut feasible, mut worst_sum, mut min_weight, mut infeasible_ok) = (0, 0.0_f64, f64::INFINITY, 0);
    let mut attempts = 0;
    while feasible < 100 && attempts < 10_000 {
        attempts += 1;
        let k = 1 + (6.0 * next_open_unit(&mut rng)) as usize;
        let bumps: Vec<(f64, f64, f64)> = (0..k)
            .map(|_| {
                (
                    j * next_open_unit(&mut rng),
                    0.2 + 3.0 * next_open_unit(&mut rng),
                    40.0 * next_open_unit(&mut rng),
                )
            })
            .collect();
        let f: Vec<f64> = (0..nx)
            .map(|i| {
                let x = (i + 1) as f64 * spec.dx;
                bumps.iter().map(|(c, w, a)| a * (-((x - c) / w).powi(2)).exp()).sum()
            })
            .collect();
        let achievable = match mass_decompose(&f, &spec, usize::MAX) {
            Err(Error::Infeasible { achievable }) => achievable,
            Ok(_) => unreachable!("unbounded request cannot succeed"),
            Err(e) => return Err(e),
        };
        if achievable == 0 {
            continue;
        }
        let n = 1 + (next_open_unit(&mut rng) * achievable as f64) as usize;
        let d = mass_decompose(&f, &spec, n.min(achievable))?;
        for i in 0..nx {
            let total: f64 = d.parts.iter().map(|p| p[i]).sum();
            worst_sum = worst_sum.max((total - f[i]).abs() / f[i].max(1e-300));
        }
        min_weight = d.weighted.iter().copied().fold(min_weight, f64::min);
        if mass_decompose(&f, &spec, achievable + 1) == Err(Error::Infeasible { achievable })
            && mass_decompose(&f, &spec, achievable).is_ok()
        {
            infeasible_ok += 1;
        }
        feasible += 1;
    }
    let tiny = vec![1.0 / j; nx];
    let tiny_ok = mass_decompose(&tiny, &spec, 5) == Err(Error::Infeasible { achievable: 0 });
    let ok = feasible == 100 && worst_sum <= 1e-12 && min_weight >= spec.threshold && infeasible_ok == 100 && tiny_ok;
    Ok(Check::new(
        "mass_decomposition",
        ok,
        format!(
            "{feasible} feasible inputs: sum defect {worst_sum:.1e}, min weighted mass {min_weight:.3}; \
             {infeasible_ok} infeasible requests reported the right count"
        ),
        json!({"feasible_inputs": feasible, "max_sum_defect": worst_sum, "min_weighted_mass": min_weight,
            "threshold": spec.threshold, "infeasible_correct": infeasible_ok, "unit_mass_rejected": tiny_ok}),
    ))
}

/// Critical mean, fixed-point extinction against tree simulation on the
/// default sweep, and survival exactly in the supercritical cases.
pub fn check_gw(opts: &VerifyOptions) -> Result<Check> {
    let mut rng = uniform_stream(opts.seed_for("gw_mean"), 0);
    let critical_exact = (0..100).all(|_| {
        let l = 1.0 + 10f64.powf(6.0 * next_open_unit(&mut rng) - 2.0);
        gw_mean(1.5, l, 1.0).map(|m| m.heuristic == 1.0).unwrap_or(false)
    });
    let n = opts.paths(100_000);
    let seed = opts.seed_for("gw_sweep");
    let mut rows = Vec::new();
    let (mut agree, mut iff) = (true, true);
    for (i, &(g, l, k)) in DEFAULT_SWEEP.iter().enumerate() {
        let model = GwModel::from_levels(g, l, k)?;
        // The control solves the fixed point with p = 1/(L-1).
        let fixed = if opts.negative_control {
            GwModel { p: (2.0 * model.p).min(1.0), ..model }
        } else {
            model
        };
        let q = gw_extinction(&fixed)?;
        let sim = gw_simulate(&model, 50, n, seed.wrapping_add(i as u64))?;
        let s = 1.0 - q;
        let se = proportion_se(s, n as u64);
        let d = (sim.survival_fraction - s).abs();
        let within = if se == 0.0 { d == 0.0 } else { d <= 3.0 * se };
        agree &= within;
        iff &= (s > 0.0) == (model.mean() > 1.0);
        rows.push(json!({"gamma": g, "L": l, "K": k, "p": model.p, "N": model.n_offspring, "mean": model.mean(),
            "extinction": q, "simulated_survival": sim.survival_fraction, "se": se, "within_3se": within,
            "truncated": sim.truncated}));
    }
    Ok(Check::new(
        "galton_watson",
        critical_exact && agree && iff,
        format!("critical mean exactly 1: {critical_exact}; 12-point sweep within 3 SE: {agree}; survival iff mean > 1: {iff}"),
        json!({"trees": n, "generations": 50, "rows": rows}),
    ))
}

/// Refinement levels of the mild cross-check, coarsest first.
const MILD_LEVELS: [usize; 4] = [15, 31, 63, 127];

/// Zero-noise agreement with kernel smoothing, and the mean discrepancy over
/// exactly coupled refinements.
pub fn check_mild(opts: &VerifyOptions) -> Result<Check> {
    // Coarsest lattice: 20 steps of dt = dx²/4 with dx = 1/16.
    let horizon = 20.0 * 0.25 / 256.0;
    let cfgs: Vec<SolverConfig> = MILD_LEVELS
        .iter()
        .map(|&nx| unit_config(nx, horizon, 1.5, &SINE))
        .collect::<Result<_>>()?;
    let zero: Vec<f64> = cfgs[..2]
        .iter()
        .map(|c| {
            let r = mild_solution_step_check(c, &NoiseGrid::zeros(c.lattice)?, c.horizon())?;
            Ok(r.residual)
        })
        .collect::<Result<_>>()?;
    let zero_ratio = zero[0] / zero[1];

    let seeds = opts.paths(128);
    let seed = opts.seed_for("mild");
    let per_seed: Vec<Vec<f64>> = (0..seeds as u64)
        .into_par_iter()
        .map(|s| {
            let finest = cfgs.last().expect("levels");
            let mut grid = sample_noise_indexed(finest.lattice, seed, s)?;
            let mut res = vec![0.0; cfgs.len()];
            for lvl in (0..cfgs.len()).rev() {
                if lvl + 1 < cfgs.len() {
                    grid = restrict_noise(&grid, seed ^ 0x5eed, s * 8 + lvl as u64)?;
                }
                res[lvl] = mild_solution_step_check(&cfgs[lvl], &grid, cfgs[lvl].horizon())?.residual;
            }
            Ok(res)
        })
        .collect::<Result<_>>()?;
    let means: Vec<Moments> = (0..cfgs.len())
        .map(|l| Moments::from_slice(&per_seed.iter().map(|r| r[l]).collect::<Vec<_>>()))
        .collect();
    let decreasing = means.windows(2).all(|w| w[1].mean < w[0].mean);
    let ok = decreasing && zero_ratio >= 3.0;
    Ok(Check::new(
        "mild_cross_check",
        ok,
        format!(
            "mean sup discrepancy {} over {} refinements; zero-noise ratio {zero_ratio:.2}",
            means.iter().map(|m| format!("{:.4}", m.mean)).collect::<Vec<_>>().join(" > "),
            cfgs.len() - 1
        ),
        json!({"nx": MILD_LEVELS, "time": horizon, "coupled_seeds": seeds,
            "mean_discrepancy": means.iter().map(|m| m.mean).collect::<Vec<_>>(),
            "std_error": means.iter().map(|m| m.std_error()).collect::<Vec<_>>(),
            "zero_noise_residual": zero, "zero_noise_ratio": zero_ratio}),
    ))
}

/// Exponents of the monotonicity probe.
pub const MONOTONICITY_GAMMAS: [f64; 4] = [1.0, 1.5, 2.0, 2.5];

/// Initial data of the monotonicity probe.
pub const MONOTONICITY_PROFILE: InitialProfile = InitialProfile::Bump {
    amplitude: 4.0,
    center: 0.5,
    half_width: 0.25,
};

/// Paired-seed cutoff-hit fractions over `gammas` on `[0, 1]` with horizon 1.
/// Each consecutive pair must satisfy `mean difference ≥ -3 SE` of the paired
/// differences.
pub fn check_gamma_monotonicity(opts: &VerifyOptions) -> Result<Check> {
    let n = opts.paths(500);
    let seed = opts.seed_for("gamma_monotonicity");
    let hits: Vec<Vec<bool>> = MONOTONICITY_GAMMAS
        .iter()
        .map(|&g| {
            let cfg = unit_config(63, 1.0, g, &MONOTONICITY_PROFILE)?;
            (0..n as u64)
                .into_par_iter()
                .map(|k| run_trajectory_indexed(&cfg, seed, k).map(|r| r.hit_cutoff()))
                .collect::<Result<Vec<bool>>>()
        })
        .collect::<Result<_>>()?;
    let fractions: Vec<f64> = hits.iter().map(|h| h.iter().filter(|&&b| b).count() as f64 / n as f64).collect();
    let mut ok = true;
    let mut pairs = Vec::new();
    for w in 0..hits.len() - 1 {
        let d: Vec<f64> = hits[w + 1]
            .iter()
            .zip(&hits[w])
            .map(|(&b, &a)| b as u8 as f64 - a as u8 as f64)
            .collect();
        let m = Moments::from_slice(&d);
        let pass = m.mean >= -3.0 * m.std_error();
        ok &= pass;
        pairs.push(json!({"from": MONOTONICITY_GAMMAS[w], "to": MONOTONICITY_GAMMAS[w + 1],
            "mean_difference": m.mean, "paired_se": m.std_error(), "nondecreasing": pass}));
    }
    Ok(Check::new(
        "gamma_monotonicity",
        ok,
        format!(
            "cutoff-hit fractions {} for γ = 1.0, 1.5, 2.0, 2.5",
            fractions.iter().map(|f| format!("{f:.3}")).collect::<Vec<_>>().join(", ")
        ),
        json!({"paths": n, "nx": 63, "horizon": 1.0, "cutoff": 1e6, "profile": MONOTONICITY_PROFILE,
            "fractions": fractions, "pairs": pairs}),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_suite_is_a_config_error() {
        assert!(matches!(run_suite("nope", &VerifyOptions::default()), Err(Error::Config(_))));
    }

    #[test]
    fn cheap_checks_pass() {
        let o = VerifyOptions::default();
        assert!(check_constants(&o).unwrap().passed);
        assert!(check_phi_audit().unwrap().passed);
        assert!(check_l1_norm().unwrap().passed);
    }

    #[test]
    fn seeds_differ_by_tag() {
        let o = VerifyOptions::default();
        assert_ne!(o.seed_for("a"), o.seed_for("b"));
    }
}
