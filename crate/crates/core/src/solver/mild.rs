//! Mild-solution reconstruction: the kernel-convolution form of the equation
//! rebuilt from the same noise and the finite-difference path's `g(u)` values.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{advance, FieldState, SolverConfig};
use crate::error::{Error, Result};
use crate::kernels::dirichlet_kernel;
use crate::noise::NoiseGrid;

/// Sine modes kept per interior node in the stochastic convolution.
const MODES_PER_NODE: usize = 16;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MildCheck {
    pub time: f64,
    /// `sup_x |u_mild - u_fd|`.
    pub residual: f64,
    pub fd_field: Vec<f64>,
    pub mild_field: Vec<f64>,
}

fn steps_for(cfg: &SolverConfig, t_check: f64) -> Result<usize> {
    let dt = cfg.lattice.dt;
    let steps = (t_check / dt).round();
    if t_check < 0.0 || (steps * dt - t_check).abs() > 1e-9 * dt.max(t_check) {
        return Err(Error::Alignment(format!("t = {t_check} is not a multiple of dt = {dt}")));
    }
    let steps = steps as usize;
    if steps > cfg.lattice.nt {
        return Err(Error::Alignment(format!("t = {t_check} lies beyond the lattice horizon")));
    }
    Ok(steps)
}

/// Finite-difference path up to `steps`, returning the `g(u)` rows used.
fn fd_path(cfg: &SolverConfig, noise: &NoiseGrid, steps: usize) -> Result<(FieldState, Vec<Vec<f64>>)> {
    let l = cfg.lattice;
    let mut values = cfg.u0.clone();
    let mut next = vec![0.0; l.nx];
    let mut coeffs = Vec::with_capacity(steps);
    for n in 0..steps {
        let coeff: Vec<f64> = values.iter().map(|&u| cfg.nonlinearity.eval(u)).collect();
        advance(&values, &coeff, noise.row(n), &l, &mut next).ok_or(Error::NumericalFailure {
            time: (n + 1) as f64 * l.dt,
        })?;
        std::mem::swap(&mut values, &mut next);
        coeffs.push(coeff);
    }
    Ok((
        FieldState {
            time: steps as f64 * l.dt,
            values,
        },
        coeffs,
    ))
}

/// Mild-solution field at lattice step `steps` given the `g(u)` rows of a path.
///
/// The deterministic part is the trapezoid convolution of `u0` with the
/// Dirichlet kernel. The stochastic part integrates the kernel exactly over
/// each noise cell (cell-uniform white-noise density) through its sine
/// expansion.
pub fn mild_solution_field(
    cfg: &SolverConfig,
    noise: &NoiseGrid,
    coeffs: &[Vec<f64>],
) -> Result<Vec<f64>> {
    let l = cfg.lattice;
    let steps = coeffs.len();
    if steps == 0 {
        return Ok(cfg.u0.clone());
    }
    if noise.spec.nx != l.nx || noise.spec.nt < steps {
        return Err(Error::Alignment("noise grid does not cover the path".into()));
    }
    let j_len = cfg.domain.length();
    let t = steps as f64 * l.dt;
    let nodes: Vec<f64> = (0..l.nx).map(|j| cfg.node(j)).collect();

    let mut field: Vec<f64> = nodes
        .iter()
        .map(|&x| {
            nodes
                .iter()
                .zip(&cfg.u0)
                .map(|(&y, &u)| dirichlet_kernel(t, x, y, &cfg.domain).map(|g| g * u))
                .sum::<Result<f64>>()
                .map(|s| s * l.dx)
        })
        .collect::<Result<_>>()?;

    let modes = MODES_PER_NODE * (l.nx + 1);
    let freq: Vec<f64> = (1..=modes).map(|k| k as f64 * PI / j_len).collect();
    // sin(w_k x_j), row-major by mode.
    let sines: Vec<f64> = freq
        .iter()
        .flat_map(|&w| nodes.iter().map(move |&x| (w * x).sin()))
        .collect();
    let decay: Vec<f64> = freq.iter().map(|w| (-w * w * l.dt).exp()).collect();
    // (1 - e^{-λ dt})/λ times the cell integral factor 2 sin(w dx/2)/w.
    let gain: Vec<f64> = freq
        .iter()
        .zip(&decay)
        .map(|(w, d)| (1.0 - d) / (w * w) * 2.0 * (0.5 * w * l.dx).sin() / w)
        .collect();
    let mut amplitudes = vec![0.0; modes];
    let mut density = vec![0.0; l.nx];
    let cell = 1.0 / (l.dt * l.dx);
    for (n, coeff) in coeffs.iter().enumerate() {
        for ((d, c), w) in density.iter_mut().zip(coeff).zip(noise.row(n)) {
            *d = c * w * cell;
        }
        for (k, amp) in amplitudes.iter_mut().enumerate() {
            let row = &sines[k * l.nx..(k + 1) * l.nx];
            let projection: f64 = row.iter().zip(&density).map(|(s, d)| s * d).sum();
            *amp = *amp * decay[k] + gain[k] * projection;
        }
    }
    for (k, amp) in amplitudes.iter().enumerate() {
        let row = &sines[k * l.nx..(k + 1) * l.nx];
        for (f, s) in field.iter_mut().zip(row) {
            *f += 2.0 / j_len * amp * s;
        }
    }
    Ok(field)
}

/// Sup-norm discrepancy at `t_check` between the finite-difference field and
/// the mild-solution field rebuilt from the same noise and `g(u)` values.
pub fn mild_solution_step_check(cfg: &SolverConfig, noise: &NoiseGrid, t_check: f64) -> Result<MildCheck> {
    let steps = steps_for(cfg, t_check)?;
    let (state, coeffs) = fd_path(cfg, noise, steps)?;
    let mild = mild_solution_field(cfg, noise, &coeffs)?;
    let residual = state
        .values
        .iter()
        .zip(&mild)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(MildCheck {
        time: state.time,
        residual,
        fd_field: state.values,
        mild_field: mild,
    })
}
