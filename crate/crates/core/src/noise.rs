//! Additive noise kernels `h_ε` supported on `[-ε, ε]`.
//!
//! A step of the perturbed chain moves `x` to `y = T(x) - ω` with `ω ~ h_ε`,
//! so the transition density is `p_ε(x, y) = h_ε(T(x) - y)`. Uniform and
//! triangular kernels are symmetric and the sign convention is invisible for
//! them; it only matters for asymmetric tables.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::map_model::PiecewiseMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum KernelShape {
    Uniform,
    Triangular,
    /// Piecewise-constant density on equal bins of `[-ε, ε]`, proportional
    /// to the (positive) weights.
    Table {
        weights: Vec<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum BoundaryMode {
    /// Differences are taken on the circle.
    #[serde(rename = "torus-wrap", alias = "torus")]
    TorusWrap,
    /// Any noise that would leave the domain is an error.
    #[default]
    #[serde(rename = "strict")]
    Strict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelConfig", into = "KernelConfig")]
pub struct NoiseKernel {
    eps: f64,
    shape: KernelShape,
    boundary: BoundaryMode,
}

/// Serialized form: `{ "kind": "uniform", "eps": 0.008333, "boundary": "strict" }`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelConfig {
    #[serde(flatten)]
    pub shape: KernelShape,
    pub eps: f64,
    #[serde(default)]
    pub boundary: BoundaryMode,
}

impl TryFrom<KernelConfig> for NoiseKernel {
    type Error = Error;

    fn try_from(c: KernelConfig) -> Result<Self> {
        NoiseKernel::new(c.eps, c.shape, c.boundary)
    }
}

impl From<NoiseKernel> for KernelConfig {
    fn from(k: NoiseKernel) -> Self {
        KernelConfig {
            shape: k.shape,
            eps: k.eps,
            boundary: k.boundary,
        }
    }
}

impl NoiseKernel {
    pub fn new(eps: f64, shape: KernelShape, boundary: BoundaryMode) -> Result<Self> {
        if !(eps.is_finite() && eps > 0.0) {
            return Err(Error::InvalidKernel(format!(
                "eps must be positive, got {eps}"
            )));
        }
        let shape = match shape {
            KernelShape::Table { weights } => {
                if weights.is_empty() || weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
                    return Err(Error::InvalidKernel(
                        "table weights must be positive and finite".into(),
                    ));
                }
                let total: f64 = weights.iter().sum();
                KernelShape::Table {
                    weights: weights.iter().map(|w| w / total).collect(),
                }
            }
            s => s,
        };
        Ok(Self {
            eps,
            shape,
            boundary,
        })
    }

    pub fn uniform(eps: f64, boundary: BoundaryMode) -> Result<Self> {
        Self::new(eps, KernelShape::Uniform, boundary)
    }

    pub fn triangular(eps: f64, boundary: BoundaryMode) -> Result<Self> {
        Self::new(eps, KernelShape::Triangular, boundary)
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn shape(&self) -> &KernelShape {
        &self.shape
    }

    pub fn boundary(&self) -> BoundaryMode {
        self.boundary
    }

    /// Same shape and boundary handling at a different amplitude.
    pub fn with_eps(&self, eps: f64) -> Result<Self> {
        Self::new(eps, self.shape.clone(), self.boundary)
    }

    /// Density of the standardized kernel on `(-1, 1)`.
    fn unit_density(&self, s: f64) -> f64 {
        if !(s.abs() < 1.0) {
            return 0.0;
        }
        match &self.shape {
            KernelShape::Uniform => 0.5,
            KernelShape::Triangular => 1.0 - s.abs(),
            KernelShape::Table { weights } => {
                let m = weights.len();
                let k = (((s + 1.0) * 0.5 * m as f64) as usize).min(m - 1);
                weights[k] * m as f64 * 0.5
            }
        }
    }

    /// Breakpoints of the standardized density inside `[-1, 1]`.
    fn unit_breakpoints(&self) -> Vec<f64> {
        match &self.shape {
            KernelShape::Uniform => vec![-1.0, 1.0],
            KernelShape::Triangular => vec![-1.0, 0.0, 1.0],
            KernelShape::Table { weights } => {
                let m = weights.len();
                (0..=m).map(|k| -1.0 + 2.0 * k as f64 / m as f64).collect()
            }
        }
    }

    /// `h_ε(u)`; positive exactly on the open ball `|u| < ε`.
    pub fn density(&self, u: f64) -> f64 {
        self.unit_density(u / self.eps) / self.eps
    }

    /// `p_ε(x, y) = h_ε(T(x) - y)`, with the difference taken on the circle
    /// under torus wrapping.
    pub fn transition_density(&self, map: &PiecewiseMap, x: f64, y: f64) -> Result<f64> {
        let d = map.domain();
        if !d.contains(y) {
            return Err(Error::Domain {
                x: y,
                lo: d.lo,
                hi: d.hi,
            });
        }
        let tx = map.eval(x)?;
        let mut diff = tx - y;
        match self.boundary {
            BoundaryMode::Strict => {
                if tx - self.eps < d.lo || tx + self.eps > d.hi {
                    return Err(Error::Boundary(format!(
                        "B_eps(T({x})) = ({}, {}) is not inside [{}, {}]",
                        tx - self.eps,
                        tx + self.eps,
                        d.lo,
                        d.hi
                    )));
                }
            }
            BoundaryMode::TorusWrap => {
                let l = d.len();
                diff = (diff + 0.5 * l).rem_euclid(l) - 0.5 * l;
            }
        }
        Ok(self.density(diff))
    }

    /// Draws a displacement `ω` with density `h_ε`; always `|ω| < ε`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        loop {
            let s = match &self.shape {
                KernelShape::Uniform => 2.0 * rng.random::<f64>() - 1.0,
                KernelShape::Triangular => rng.random::<f64>() - rng.random::<f64>(),
                KernelShape::Table { weights } => {
                    let m = weights.len();
                    let mut u = rng.random::<f64>();
                    let mut k = m - 1;
                    for (i, w) in weights.iter().enumerate() {
                        if u < *w {
                            k = i;
                            break;
                        }
                        u -= w;
                    }
                    -1.0 + (2.0 * (k as f64 + rng.random::<f64>())) / m as f64
                }
            };
            let w = s * self.eps;
            if w.abs() < self.eps {
                return w;
            }
        }
    }

    /// Probability that noise started uniformly in one cell lands in the cell
    /// `offset` cells away, when cells have width `eps / r`:
    /// `(1/h) ∫_{I_j} ∫_{I_{j+offset}} h_ε(u - v) dv du`.
    ///
    /// The integrand is a product of piecewise polynomials, so the integral is
    /// evaluated exactly (closed form for the uniform kernel, Simpson's rule
    /// on polynomial pieces otherwise).
    pub fn cell_transfer(&self, offset: f64, r: f64) -> f64 {
        // Displacement w = (v - u)/h has triangular density centred at offset.
        let lo = (offset - 1.0).max(-r);
        let hi = (offset + 1.0).min(r);
        if hi <= lo {
            return 0.0;
        }
        if let KernelShape::Uniform = self.shape {
            return (tri_cdf(r - offset) - tri_cdf(-r - offset)) / (2.0 * r);
        }
        // g(w) = (1/r) κ(-w/r) is the kernel of u - v = -h·w in cell units.
        let mut pts: Vec<f64> = vec![lo, hi, offset - 1.0, offset, offset + 1.0];
        pts.extend(self.unit_breakpoints().iter().map(|s| -s * r));
        pts.retain(|p| *p >= lo && *p <= hi);
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        let f = |w: f64| tri_pdf(w - offset) * self.unit_density(-w / r) / r;
        let mut total = 0.0;
        for pair in pts.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            if b - a <= 0.0 {
                continue;
            }
            // Evaluate just inside the piece so table jumps resolve correctly.
            let inset = (b - a) * 1e-12;
            let fa = f(a + inset);
            let fm = f(0.5 * (a + b));
            let fb = f(b - inset);
            total += (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        }
        total
    }
}

/// Density of `U₁ - U₂` for independent uniforms on `[0, 1)`.
fn tri_pdf(z: f64) -> f64 {
    (1.0 - z.abs()).max(0.0)
}

/// Distribution function of `U₁ - U₂`.
fn tri_cdf(z: f64) -> f64 {
    if z <= -1.0 {
        0.0
    } else if z <= 0.0 {
        0.5 * (1.0 + z) * (1.0 + z)
    } else if z < 1.0 {
        1.0 - 0.5 * (1.0 - z) * (1.0 - z)
    } else {
        1.0
    }
}
