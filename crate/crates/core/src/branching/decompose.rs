use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::kernels::{phi_unchecked, TestFunctionParams};

/// Geometry and target of a mass decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecomposeSpec {
    /// Length `J̄` of the domain carrying the field.
    pub domain_length: f64,
    /// Interior node spacing; node `j` sits at `(j+1)·dx`.
    pub dx: f64,
    /// Horizon of the weight `φ(0, ·; z, T)`.
    pub horizon: f64,
    /// Weights are evaluated at `x·x_scale`.
    pub x_scale: f64,
    /// Required weighted mass of every part.
    pub threshold: f64,
}

impl DecomposeSpec {
    pub fn new(domain_length: f64, dx: f64, horizon: f64) -> Self {
        Self {
            domain_length,
            dx,
            horizon,
            x_scale: 1.0,
            threshold: 2.0,
        }
    }

    fn validate(&self, nx: usize) -> Result<()> {
        if !(self.domain_length >= 2.0) {
            return domain(format!("centers are clipped to [1, J-1]; need J ≥ 2, got {}", self.domain_length));
        }
        if !(self.dx > 0.0 && self.horizon > 0.0 && self.x_scale > 0.0 && self.threshold > 0.0) {
            return domain("dx, horizon, x_scale and threshold must be positive");
        }
        if ((nx + 1) as f64 * self.dx - self.domain_length).abs() > 1e-9 * self.domain_length {
            return domain(format!("{nx} interior nodes at spacing {} do not span {}", self.dx, self.domain_length));
        }
        Ok(())
    }

    /// `∫ φ(0, x·x_scale; z, T) f(x) dx` over nodes `range`.
    fn weighted(&self, f: &[f64], range: std::ops::Range<usize>, z: f64) -> f64 {
        let p = TestFunctionParams {
            horizon: self.horizon,
            center: z,
        };
        range
            .map(|j| phi_unchecked(0.0, (j + 1) as f64 * self.dx * self.x_scale, &p) * f[j])
            .sum::<f64>()
            * self.dx
    }

    /// Mass centroid of nodes `range`, clipped to `[1, J̄-1]`.
    fn centroid(&self, f: &[f64], range: std::ops::Range<usize>) -> f64 {
        let (mut m, mut mx) = (0.0, 0.0);
        for j in range {
            m += f[j];
            mx += f[j] * (j + 1) as f64 * self.dx;
        }
        let z = if m > 0.0 { mx / m } else { 0.5 * self.domain_length };
        z.clamp(1.0, self.domain_length - 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    /// `fᵢ`, each equal to `f₀` on a contiguous slab and zero elsewhere.
    pub parts: Vec<Vec<f64>>,
    pub centers: Vec<f64>,
    /// `∫ φ(0, x; zᵢ, T) fᵢ dx`.
    pub weighted: Vec<f64>,
    /// Node ranges `[start, end)` of the slabs.
    pub slabs: Vec<(usize, usize)>,
}

/// Greedy left-to-right slabs: a slab closes once its weighted mass about its
/// own clipped centroid reaches the threshold.
fn greedy(f: &[f64], spec: &DecomposeSpec, limit: usize) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    let mut start = 0;
    for end in 1..=f.len() {
        if out.len() == limit {
            break;
        }
        let z = spec.centroid(f, start..end);
        if spec.weighted(f, start..end, z) >= spec.threshold {
            out.push((start, end, z));
            start = end;
        }
    }
    out
}

/// Splits `f0` into `n` nonnegative parts summing to it exactly, each with
/// weighted mass at least `spec.threshold` about its own center.
///
/// Parts are contiguous slabs; the last slab also takes every node right of
/// its core, keeping the core's center unless the centroid of the whole slab
/// also meets the threshold. Fails with [`Error::Infeasible`] carrying the
/// number of slabs the greedy pass can form.
pub fn mass_decompose(f0: &[f64], spec: &DecomposeSpec, n: usize) -> Result<Decomposition> {
    spec.validate(f0.len())?;
    if n == 0 {
        return domain("need at least one part");
    }
    if f0.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
        return domain("field must be finite and nonnegative");
    }
    let slabs = greedy(f0, spec, n);
    if slabs.len() < n {
        let achievable = greedy(f0, spec, usize::MAX).len();
        return Err(Error::Infeasible { achievable });
    }
    let mut out = Decomposition {
        parts: Vec::with_capacity(n),
        centers: Vec::with_capacity(n),
        weighted: Vec::with_capacity(n),
        slabs: Vec::with_capacity(n),
    };
    for (i, &(start, core_end, core_z)) in slabs.iter().enumerate() {
        let end = if i + 1 == n { f0.len() } else { core_end };
        let whole_z = spec.centroid(f0, start..end);
        let whole = spec.weighted(f0, start..end, whole_z);
        let (z, w) = if whole >= spec.threshold {
            (whole_z, whole)
        } else {
            (core_z, spec.weighted(f0, start..end, core_z))
        };
        let mut part = vec![0.0; f0.len()];
        part[start..end].copy_from_slice(&f0[start..end]);
        out.parts.push(part);
        out.centers.push(z);
        out.weighted.push(w);
        out.slabs.push((start, end));
    }
    Ok(out)
}
