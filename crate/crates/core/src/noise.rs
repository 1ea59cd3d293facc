//! Discrete space-time white noise.
//!
//! Cell `(n, j)` of stream `k` under master seed `s` is a pure function of
//! `(s, k, n, j)`: every stream is a ChaCha8 keystream keyed by `s` on stream
//! id `k`, and row `n` starts at a fixed word offset. Normals come from
//! Box–Muller, which consumes a fixed number of words per pair, so rows can be
//! generated independently, in any order, on any thread.

use std::f64::consts::TAU;
use std::io::{Read, Write};

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Time × space lattice of noise cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeSpec {
    pub nt: usize,
    pub nx: usize,
    pub dt: f64,
    pub dx: f64,
}

impl LatticeSpec {
    pub fn new(nt: usize, nx: usize, dt: f64, dx: f64) -> Result<Self> {
        if nt == 0 || nx == 0 {
            return Err(Error::Domain(format!("lattice needs nt, nx ≥ 1 (got {nt}, {nx})")));
        }
        if !(dt > 0.0 && dt.is_finite() && dx > 0.0 && dx.is_finite()) {
            return Err(Error::Domain(format!("lattice needs dt, dx > 0 (got {dt}, {dx})")));
        }
        Ok(Self { nt, nx, dt, dx })
    }

    pub fn cell_variance(&self) -> f64 {
        self.dt * self.dx
    }

    pub fn cells(&self) -> Result<usize> {
        self.nt
            .checked_mul(self.nx)
            .filter(|&c| c <= isize::MAX as usize / std::mem::size_of::<f64>())
            .ok_or_else(|| Error::Capacity(format!("{} x {} noise cells", self.nt, self.nx)))
    }
}

/// Anything that can hand out rows of `N(0, dt·dx)` increments.
pub trait NoiseSource: Sync {
    fn spec(&self) -> &LatticeSpec;
    /// Fills `out` (length `nx`) with the increments of time row `n`.
    fn fill_row(&self, n: usize, out: &mut [f64]);
}

/// Lazily generated counter-based stream; bit-identical to the grid sampled
/// from the same `(spec, seed, index)`.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    spec: LatticeSpec,
    seed: u64,
    index: u64,
}

impl NoiseStream {
    pub fn new(spec: LatticeSpec, seed: u64, index: u64) -> Self {
        Self { spec, seed, index }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn index(&self) -> u64 {
        self.index
    }
}

impl NoiseSource for NoiseStream {
    fn spec(&self) -> &LatticeSpec {
        &self.spec
    }

    fn fill_row(&self, n: usize, out: &mut [f64]) {
        standard_normal_row(self.seed, self.index, n as u64, out);
        let sd = self.spec.cell_variance().sqrt();
        out.iter_mut().for_each(|v| *v *= sd);
    }
}

/// Noise of variance zero; turns the solver into a deterministic heat flow.
#[derive(Debug, Clone)]
pub struct ZeroNoise {
    spec: LatticeSpec,
}

impl ZeroNoise {
    pub fn new(spec: LatticeSpec) -> Self {
        Self { spec }
    }
}

impl NoiseSource for ZeroNoise {
    fn spec(&self) -> &LatticeSpec {
        &self.spec
    }

    fn fill_row(&self, _n: usize, out: &mut [f64]) {
        out.fill(0.0);
    }
}

/// Materialized `nt × nx` grid of increments, row-major in time.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseGrid {
    pub spec: LatticeSpec,
    pub seed: u64,
    increments: Vec<f64>,
}

impl NoiseSource for NoiseGrid {
    fn spec(&self) -> &LatticeSpec {
        &self.spec
    }

    fn fill_row(&self, n: usize, out: &mut [f64]) {
        out.copy_from_slice(self.row(n));
    }
}

impl NoiseGrid {
    pub fn from_increments(spec: LatticeSpec, seed: u64, increments: Vec<f64>) -> Result<Self> {
        if increments.len() != spec.cells()? {
            return Err(Error::Alignment(format!(
                "{} increments for a {} x {} lattice",
                increments.len(),
                spec.nt,
                spec.nx
            )));
        }
        Ok(Self {
            spec,
            seed,
            increments,
        })
    }

    pub fn zeros(spec: LatticeSpec) -> Result<Self> {
        let cells = spec.cells()?;
        Ok(Self {
            spec,
            seed: 0,
            increments: vec![0.0; cells],
        })
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.increments[n * self.spec.nx..(n + 1) * self.spec.nx]
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// Writes the replay dump: `nt, nx, dt, dx, seed` as little-endian 64-bit
    /// fields followed by the row-major payload of little-endian `f64`s.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&(self.spec.nt as u64).to_le_bytes())?;
        w.write_all(&(self.spec.nx as u64).to_le_bytes())?;
        w.write_all(&self.spec.dt.to_le_bytes())?;
        w.write_all(&self.spec.dx.to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        for v in &self.increments {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut word = [0u8; 8];
        let mut next = |r: &mut R| -> Result<[u8; 8]> {
            r.read_exact(&mut word)?;
            Ok(word)
        };
        let nt = u64::from_le_bytes(next(&mut r)?) as usize;
        let nx = u64::from_le_bytes(next(&mut r)?) as usize;
        let dt = f64::from_le_bytes(next(&mut r)?);
        let dx = f64::from_le_bytes(next(&mut r)?);
        let seed = u64::from_le_bytes(next(&mut r)?);
        let spec = LatticeSpec::new(nt, nx, dt, dx)?;
        let cells = spec.cells()?;
        let mut increments = Vec::with_capacity(cells);
        for _ in 0..cells {
            increments.push(f64::from_le_bytes(next(&mut r)?));
        }
        Self::from_increments(spec, seed, increments)
    }
}

/// Samples stream 0 of `seed` on `spec`.
pub fn sample_noise(spec: LatticeSpec, seed: u64) -> Result<NoiseGrid> {
    sample_noise_indexed(spec, seed, 0)
}

/// Samples stream `index` (e.g. a trajectory index) of `seed` on `spec`.
pub fn sample_noise_indexed(spec: LatticeSpec, seed: u64, index: u64) -> Result<NoiseGrid> {
    let cells = spec.cells()?;
    let mut increments = vec![0.0; cells];
    let stream = NoiseStream::new(spec, seed, index);
    for (n, row) in increments.chunks_mut(spec.nx).enumerate() {
        stream.fill_row(n, row);
    }
    Ok(NoiseGrid {
        spec,
        seed,
        increments,
    })
}

fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(b"shenoise");
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

/// Uniform on `(0, 1]` from the top 53 bits.
#[inline]
fn open_unit(bits: u64) -> f64 {
    ((bits >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Standard normals for row `n` of stream `(seed, index)`.
pub(crate) fn standard_normal_row(seed: u64, index: u64, n: u64, out: &mut [f64]) {
    let pairs = out.len().div_ceil(2) as u128;
    let mut rng = stream_rng(seed, index);
    // Each pair consumes two u64 draws, i.e. four 32-bit words.
    rng.set_word_pos(n as u128 * pairs * 4);
    for chunk in out.chunks_mut(2) {
        let u1 = open_unit(rng.next_u64());
        let u2 = open_unit(rng.next_u64());
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (TAU * u2).sin_cos();
        chunk[0] = r * c;
        if let Some(second) = chunk.get_mut(1) {
            *second = r * s;
        }
    }
}

/// Counter-based uniforms on `(0, 1]` for auxiliary draws (bridge crossings,
/// branching), independent of the noise rows through a distinct key tag.
pub(crate) fn uniform_stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(b"shaux\0\0\0");
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

pub(crate) fn next_open_unit(rng: &mut ChaCha8Rng) -> f64 {
    open_unit(rng.next_u64())
}

pub(crate) fn next_standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1 = open_unit(rng.next_u64());
    let u2 = open_unit(rng.next_u64());
    (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
}

/// Exponents of the noise transformation that accompanies the field rescaling
/// `ṽ(t,x) = L̄⁻¹ u(t L̄^{4(1-γ)}, x L̄^{2(1-γ)})`.
fn scaled_spec(spec: &LatticeSpec, lbar: f64, gamma: f64) -> Result<LatticeSpec> {
    LatticeSpec::new(
        spec.nt,
        spec.nx,
        spec.dt * lbar.powf(4.0 * (gamma - 1.0)),
        spec.dx * lbar.powf(2.0 * (gamma - 1.0)),
    )
}

/// Image of `w` under the scaling map: each scaled cell is the image of one
/// source cell, weighted by `L̄^{3(γ-1)}`, on the lattice
/// `(dt L̄^{4(γ-1)}, dx L̄^{2(γ-1)})`. Cell variances become `dt̃·dx̃`.
pub fn scale_noise(w: &NoiseGrid, lbar: f64, gamma: f64) -> Result<NoiseGrid> {
    scale_noise_with_exponent(w, lbar, gamma, 3.0 * (gamma - 1.0))
}

/// As [`scale_noise`] but with an arbitrary amplitude exponent; only used by
/// negative controls.
pub fn scale_noise_with_exponent(
    w: &NoiseGrid,
    lbar: f64,
    gamma: f64,
    amplitude_exponent: f64,
) -> Result<NoiseGrid> {
    if !(lbar > 0.0 && lbar.is_finite()) {
        return Err(Error::Domain(format!("scale factor must be positive, got {lbar}")));
    }
    let spec = scaled_spec(&w.spec, lbar, gamma)?;
    let factor = lbar.powf(amplitude_exponent);
    Ok(NoiseGrid {
        spec,
        seed: w.seed,
        increments: w.increments.iter().map(|v| v * factor).collect(),
    })
}

/// Aggregates blocks of `time_factor × space_factor` cells into single cells.
/// Blocks must tile the lattice exactly.
pub fn aggregate_noise(w: &NoiseGrid, time_factor: usize, space_factor: usize) -> Result<NoiseGrid> {
    let s = &w.spec;
    if time_factor == 0 || space_factor == 0 || s.nt % time_factor != 0 || s.nx % space_factor != 0 {
        return Err(Error::Alignment(format!(
            "{}x{} blocks do not tile a {} x {} lattice",
            time_factor, space_factor, s.nt, s.nx
        )));
    }
    let spec = LatticeSpec::new(
        s.nt / time_factor,
        s.nx / space_factor,
        s.dt * time_factor as f64,
        s.dx * space_factor as f64,
    )?;
    let mut increments = vec![0.0; spec.cells()?];
    for n in 0..s.nt {
        let row = w.row(n);
        let out = &mut increments[(n / time_factor) * spec.nx..(n / time_factor + 1) * spec.nx];
        for (j, v) in row.iter().enumerate() {
            out[j / space_factor] += v;
        }
    }
    Ok(NoiseGrid {
        spec,
        seed: w.seed,
        increments,
    })
}

/// Restricts `w` to the lattice with twice the spacing and four times the
/// step, whose cells straddle the fine ones. Coarse node `i` sits on fine node
/// `2i+1`; its cell is that fine cell plus the adjacent halves of fine cells
/// `2i` and `2i+2`. A straddled cell `W` splits as `W/2 ± √(dt·dx/4)·Z` with
/// `Z` from auxiliary stream `index` of `aux_seed`, so the result is white
/// noise on the coarse lattice and exactly coupled to `w`.
pub fn restrict_noise(w: &NoiseGrid, aux_seed: u64, index: u64) -> Result<NoiseGrid> {
    let s = &w.spec;
    if s.nx < 3 || s.nx % 2 == 0 || s.nt % 4 != 0 {
        return Err(Error::Alignment(format!(
            "restriction needs odd nx ≥ 3 and nt divisible by 4, got nx = {}, nt = {}",
            s.nx, s.nt
        )));
    }
    let nc = (s.nx - 1) / 2;
    let spec = LatticeSpec::new(s.nt / 4, nc, 4.0 * s.dt, 2.0 * s.dx)?;
    let sigma = (s.dt * s.dx / 4.0).sqrt();
    let mut rng = uniform_stream(aux_seed, index);
    let mut increments = vec![0.0; spec.cells()?];
    for n in 0..s.nt {
        let row = w.row(n);
        let out = &mut increments[(n / 4) * nc..(n / 4 + 1) * nc];
        for (i, o) in out.iter_mut().enumerate() {
            *o += row[2 * i + 1];
        }
        for m in 0..=nc {
            let z = sigma * next_standard_normal(&mut rng);
            let half = 0.5 * row[2 * m];
            // Left half of fine cell 2m feeds coarse node m-1, right half node m.
            if m > 0 {
                out[m - 1] += half + z;
            }
            if m < nc {
                out[m] += half - z;
            }
        }
    }
    Ok(NoiseGrid {
        spec,
        seed: w.seed,
        increments,
    })
}

/// Result of a linear combination of grids.
#[derive(Debug, Clone)]
pub struct CombinedNoise {
    pub grid: NoiseGrid,
    /// `Σ wᵢ²`; the combination is a white noise of the same lattice iff 1.
    pub sum_sq_weights: f64,
}

impl CombinedNoise {
    pub fn is_normalized(&self) -> bool {
        (self.sum_sq_weights - 1.0).abs() < 1e-12
    }
}

/// Cellwise weighted sum of grids sharing one lattice.
pub fn combine_noises(parts: &[(f64, &NoiseGrid)]) -> Result<CombinedNoise> {
    let Some((_, first)) = parts.first() else {
        return Err(Error::Domain("no noise grids to combine".into()));
    };
    let spec = first.spec;
    if let Some((_, bad)) = parts.iter().find(|(_, g)| g.spec != spec) {
        return Err(Error::Alignment(format!(
            "lattice {:?} differs from {:?}",
            bad.spec, spec
        )));
    }
    let mut increments = vec![0.0; first.increments.len()];
    for (weight, grid) in parts {
        for (acc, v) in increments.iter_mut().zip(&grid.increments) {
            *acc += weight * v;
        }
    }
    Ok(CombinedNoise {
        grid: NoiseGrid {
            spec,
            seed: first.seed,
            increments,
        },
        sum_sq_weights: parts.iter().map(|(w, _)| w * w).sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{ks_standard_normal, lag1_correlation, Moments};

    fn spec(nt: usize, nx: usize) -> LatticeSpec {
        LatticeSpec::new(nt, nx, 0.01, 0.1).unwrap()
    }

    #[test]
    fn deterministic_and_row_addressable() {
        let s = spec(20, 7);
        let a = sample_noise(s, 99).unwrap();
        let b = sample_noise(s, 99).unwrap();
        assert_eq!(a, b);
        let stream = NoiseStream::new(s, 99, 0);
        let mut row = vec![0.0; 7];
        for n in (0..20).rev() {
            stream.fill_row(n, &mut row);
            assert_eq!(row.as_slice(), a.row(n));
        }
        assert_ne!(a, sample_noise(s, 100).unwrap());
        assert_ne!(a, sample_noise_indexed(s, 99, 1).unwrap());
    }

    #[test]
    fn invalid_specs() {
        assert!(LatticeSpec::new(0, 3, 0.1, 0.1).is_err());
        assert!(LatticeSpec::new(3, 3, 0.0, 0.1).is_err());
        let huge = LatticeSpec::new(usize::MAX / 2, 4, 0.1, 0.1).unwrap();
        assert!(matches!(sample_noise(huge, 1), Err(Error::Capacity(_))));
    }

    #[test]
    fn variance_and_independence() {
        // 10^6 cells with dt·dx = 0.001.
        let s = LatticeSpec::new(1000, 1000, 0.01, 0.1).unwrap();
        let g = sample_noise(s, 7).unwrap();
        let m = Moments::from_slice(g.increments());
        let tol = 3.0 * (2.0f64 / 1e6).sqrt() * 0.001;
        assert!((m.variance() - 0.001).abs() < tol, "variance {}", m.variance());
        assert!(m.mean.abs() < 3.0 * (0.001f64 / 1e6).sqrt());
        // Lag-1 correlation along space (rows) and along time (columns).
        let space = lag1_correlation(g.increments());
        let column: Vec<f64> = (0..s.nx)
            .flat_map(|j| (0..s.nt).map(move |n| (n, j)))
            .map(|(n, j)| g.row(n)[j])
            .collect();
        let time = lag1_correlation(&column);
        assert!(space.abs() < 3e-3, "space lag-1 {space}");
        assert!(time.abs() < 3e-3, "time lag-1 {time}");
    }

    #[test]
    fn standardized_increments_pass_ks() {
        let s = LatticeSpec::new(1000, 100, 0.02, 0.5).unwrap();
        let g = sample_noise(s, 2024).unwrap();
        let sd = s.cell_variance().sqrt();
        let z: Vec<f64> = g.increments().iter().map(|v| v / sd).collect();
        let (_, p) = ks_standard_normal(&z);
        assert!(p > 0.01, "KS p = {p}");
    }

    #[test]
    fn scaling_identity_and_variance() {
        let s = spec(10, 6);
        let g = sample_noise(s, 5).unwrap();
        assert_eq!(scale_noise(&g, 1.0, 1.7).unwrap(), g);
        let scaled = scale_noise(&g, 2.0, 1.5).unwrap();
        assert!((scaled.spec.dt - 0.04).abs() < 1e-15);
        assert!((scaled.spec.dx - 0.2).abs() < 1e-15);
        // Ensemble variance of one scaled cell against dt̃·dx̃.
        let mut m = Moments::default();
        for seed in 0..20_000 {
            let g = sample_noise(spec(1, 2), seed).unwrap();
            m.push(scale_noise(&g, 2.0, 1.5).unwrap().row(0)[1]);
        }
        let target = 0.04 * 0.2;
        assert!((m.variance() - target).abs() < 3.0 * target * (2.0f64 / 20_000.0).sqrt());
        assert!(scale_noise(&g, 0.0, 1.5).is_err());
    }

    #[test]
    fn scaling_composes_multiplicatively() {
        let g = sample_noise(spec(8, 8), 11).unwrap();
        let twice = scale_noise(&scale_noise(&g, 2.0, 1.5).unwrap(), 3.0, 1.5).unwrap();
        let once = scale_noise(&g, 6.0, 1.5).unwrap();
        assert!((twice.spec.dt - once.spec.dt).abs() <= 4.0 * f64::EPSILON * once.spec.dt);
        for (a, b) in twice.increments().iter().zip(once.increments()) {
            assert!((a - b).abs() <= 4.0 * f64::EPSILON * b.abs());
        }
        // Powers of two with a dyadic exponent compose without rounding.
        let twice = scale_noise(&scale_noise(&g, 2.0, 2.0).unwrap(), 2.0, 2.0).unwrap();
        assert_eq!(twice, scale_noise(&g, 4.0, 2.0).unwrap());
    }

    #[test]
    fn aggregation_preserves_total_variance() {
        let g = sample_noise(spec(8, 6), 3).unwrap();
        let agg = aggregate_noise(&g, 4, 2).unwrap();
        assert_eq!((agg.spec.nt, agg.spec.nx), (2, 3));
        assert!((agg.spec.cell_variance() - 8.0 * g.spec.cell_variance()).abs() < 1e-15);
        let direct: f64 = (0..4).flat_map(|n| g.row(n)[0..2].to_vec()).sum();
        assert!((agg.row(0)[0] - direct).abs() < 1e-15);
        assert!(matches!(aggregate_noise(&g, 3, 2), Err(Error::Alignment(_))));
    }

    #[test]
    fn combinations() {
        let s = spec(40, 50);
        let a = sample_noise(s, 1).unwrap();
        let b = sample_noise(s, 2).unwrap();
        let single = combine_noises(&[(1.0, &a)]).unwrap();
        assert_eq!(single.grid, a);
        assert!(single.is_normalized());
        let mixed = combine_noises(&[(0.6, &a), (0.8, &b)]).unwrap();
        assert!(mixed.is_normalized());
        let var = Moments::from_slice(mixed.grid.increments()).variance();
        let tol = 3.0 * s.cell_variance() * (2.0f64 / 2000.0).sqrt();
        assert!((var - s.cell_variance()).abs() < tol);
        let sum = combine_noises(&[(1.0, &a), (1.0, &b)]).unwrap();
        assert!(!sum.is_normalized());
        let var = Moments::from_slice(sum.grid.increments()).variance();
        assert!((var - 2.0 * s.cell_variance()).abs() < 2.0 * tol);
        let other = sample_noise(spec(40, 49), 3).unwrap();
        assert!(matches!(
            combine_noises(&[(1.0, &a), (1.0, &other)]),
            Err(Error::Alignment(_))
        ));
    }

    #[test]
    fn binary_dump_round_trip() {
        let g = sample_noise(spec(5, 3), 77).unwrap();
        let mut buf = Vec::new();
        g.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 8 * (5 + 15));
        assert_eq!(&buf[0..8], &5u64.to_le_bytes());
        assert_eq!(&buf[32..40], &77u64.to_le_bytes());
        assert_eq!(NoiseGrid::read_binary(buf.as_slice()).unwrap(), g);
        assert!(NoiseGrid::read_binary(&buf[..50]).is_err());
    }

    #[test]
    fn restriction_is_white_and_coupled() {
        let fine = LatticeSpec::new(400, 31, 0.25 / 1024.0, 1.0 / 32.0).unwrap();
        let w = sample_noise(fine, 5).unwrap();
        let c = restrict_noise(&w, 6, 0).unwrap();
        assert_eq!((c.spec.nt, c.spec.nx), (100, 15));
        assert_eq!(c.spec.dt, 4.0 * fine.dt);
        assert_eq!(c.spec.dx, 2.0 * fine.dx);
        let z: Vec<f64> = c.increments().iter().map(|v| v / c.spec.cell_variance().sqrt()).collect();
        let m = Moments::from_slice(&z);
        assert!(m.mean.abs() < 4.0 / (z.len() as f64).sqrt());
        assert!((m.variance() - 1.0).abs() < 0.1, "{}", m.variance());
        assert!(ks_standard_normal(&z).1 > 1e-3);
        // Sums agree up to the two unpaired half-cell splits at the ends.
        let fine_sum: f64 = (0..fine.nt)
            .map(|n| {
                let r = w.row(n);
                r[1..30].iter().sum::<f64>() + 0.5 * (r[0] + r[30])
            })
            .sum();
        let coarse_sum: f64 = c.increments().iter().sum();
        let end_sd = (2.0 * fine.nt as f64 * fine.dt * fine.dx / 4.0).sqrt();
        assert!((fine_sum - coarse_sum).abs() < 6.0 * end_sd, "{fine_sum} {coarse_sum}");
        assert!(restrict_noise(&sample_noise(LatticeSpec::new(8, 30, 0.1, 0.1).unwrap(), 1).unwrap(), 1, 0).is_err());
    }
}
