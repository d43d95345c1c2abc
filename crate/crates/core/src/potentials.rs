//! External traps, two-body kernels and their lattice realizations.

use std::collections::HashMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Lattice, SpectralPlan};
use crate::quadrature::Composite;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sign {
    Attractive,
    Repulsive,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Attractive => -1.0,
            Sign::Repulsive => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExternalKind {
    Zero,
    /// |x|²
    Harmonic,
    /// −depth·e^{−|x|²/width²}
    GaussianWell { depth: f64, width: f64 },
    /// Two Gaussian wells centred at ±separation/2 along axis 0.
    DoubleWell { separation: f64, depth: f64, width: f64 },
    /// W(εx) for a base profile W.
    SlowlyVarying { base: Box<ExternalKind>, eps: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExternalPotential {
    pub kind: ExternalKind,
    pub lambda: f64,
}

fn norm2(x: [f64; 3]) -> f64 {
    x[0] * x[0] + x[1] * x[1] + x[2] * x[2]
}

impl ExternalKind {
    fn validate(&self) -> Result<()> {
        match self {
            ExternalKind::Zero | ExternalKind::Harmonic => Ok(()),
            ExternalKind::GaussianWell { width, .. } | ExternalKind::DoubleWell { width, .. } => {
                if *width > 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!("well width {width} must be positive")))
                }
            }
            ExternalKind::SlowlyVarying { base, eps } => {
                if !(*eps > 0.0) {
                    return Err(Error::InvalidParameter(format!("ε = {eps} must be positive")));
                }
                base.validate()
            }
        }
    }

    pub fn eval(&self, x: [f64; 3]) -> f64 {
        match self {
            ExternalKind::Zero => 0.0,
            ExternalKind::Harmonic => norm2(x),
            ExternalKind::GaussianWell { depth, width } => -depth * (-norm2(x) / (width * width)).exp(),
            ExternalKind::DoubleWell { separation, depth, width } => {
                let s = separation / 2.0;
                let a = [x[0] - s, x[1], x[2]];
                let b = [x[0] + s, x[1], x[2]];
                -depth * ((-norm2(a) / (width * width)).exp() + (-norm2(b) / (width * width)).exp())
            }
            ExternalKind::SlowlyVarying { base, eps } => base.eval([eps * x[0], eps * x[1], eps * x[2]]),
        }
    }

    pub fn gradient(&self, x: [f64; 3]) -> [f64; 3] {
        match self {
            ExternalKind::Zero => [0.0; 3],
            ExternalKind::Harmonic => [2.0 * x[0], 2.0 * x[1], 2.0 * x[2]],
            ExternalKind::GaussianWell { depth, width } => {
                let w2 = width * width;
                let f = 2.0 * depth / w2 * (-norm2(x) / w2).exp();
                [f * x[0], f * x[1], f * x[2]]
            }
            ExternalKind::DoubleWell { separation, depth, width } => {
                let w2 = width * width;
                let s = separation / 2.0;
                let mut g = [0.0; 3];
                for c in [s, -s] {
                    let y = [x[0] - c, x[1], x[2]];
                    let f = 2.0 * depth / w2 * (-norm2(y) / w2).exp();
                    for a in 0..3 {
                        g[a] += f * y[a];
                    }
                }
                g
            }
            ExternalKind::SlowlyVarying { base, eps } => {
                let g = base.gradient([eps * x[0], eps * x[1], eps * x[2]]);
                [eps * g[0], eps * g[1], eps * g[2]]
            }
        }
    }
}

impl ExternalPotential {
    pub fn new(kind: ExternalKind, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0) {
            return Err(Error::InvalidParameter(format!("λ = {lambda} must be nonnegative")));
        }
        kind.validate()?;
        Ok(Self { kind, lambda })
    }

    pub fn zero() -> Self {
        Self { kind: ExternalKind::Zero, lambda: 0.0 }
    }

    pub fn is_zero(&self) -> bool {
        self.lambda == 0.0 || self.kind == ExternalKind::Zero
    }

    /// λV(x) at every lattice site.
    pub fn sample(&self, lat: &Lattice) -> Vec<f64> {
        (0..lat.len()).map(|i| self.lambda * self.kind.eval(lat.position(i))).collect()
    }

    /// True when V depends on |x| only.
    pub fn is_radial(&self) -> bool {
        fn radial(k: &ExternalKind) -> bool {
            match k {
                ExternalKind::DoubleWell { .. } => false,
                ExternalKind::SlowlyVarying { base, .. } => radial(base),
                _ => true,
            }
        }
        self.is_zero() || radial(&self.kind)
    }
}

pub fn sample_v(v: &ExternalPotential, lat: &Lattice) -> Vec<f64> {
    v.sample(lat)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TwoBodyKind {
    /// |x|^{−σ}
    PowerLaw { sigma: f64 },
    /// e^{−μ|x|}/|x|
    Yukawa { mu: f64 },
    /// e^{−|x|²/width²}
    Gaussian { width: f64 },
    /// Local contact interaction.
    Delta,
    /// Φ_s(x) + Φ_ℓ(εx); the component couplings act as relative weights.
    Composite { short: Box<TwoBodyPotential>, long: Box<TwoBodyPotential>, eps: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoBodyPotential {
    #[serde(flatten)]
    pub kind: TwoBodyKind,
    pub sign: Sign,
    pub nu: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KineticKind {
    /// −Δ
    Nonrelativistic,
    /// √(−Δ + m²) − m
    Semirelativistic { mass: f64 },
    /// Nearest-neighbour lattice Laplacian, the hopping operator of a tight-binding chain.
    FiniteDifference,
}

impl KineticKind {
    /// Symbol at wavevector `k` (unused components zero) on a lattice of spacing `h`.
    pub fn symbol(&self, k: [f64; 3], h: f64) -> f64 {
        let k2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
        match *self {
            KineticKind::Nonrelativistic => k2,
            KineticKind::Semirelativistic { mass } => (k2 + mass * mass).sqrt() - mass,
            KineticKind::FiniteDifference => {
                k.iter().map(|ka| (2.0 - 2.0 * (ka * h).cos()) / (h * h)).sum()
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            KineticKind::Semirelativistic { mass } if !(mass > 0.0) => {
                Err(Error::InvalidParameter(format!("mass {mass} must be positive")))
            }
            _ => Ok(()),
        }
    }
}

impl TwoBodyPotential {
    pub fn new(kind: TwoBodyKind, sign: Sign, nu: f64) -> Result<Self> {
        let p = Self { kind, sign, nu };
        p.validate()?;
        Ok(p)
    }

    pub fn power_law(sigma: f64, sign: Sign, nu: f64) -> Result<Self> {
        Self::new(TwoBodyKind::PowerLaw { sigma }, sign, nu)
    }

    pub fn gaussian(width: f64, sign: Sign, nu: f64) -> Result<Self> {
        Self::new(TwoBodyKind::Gaussian { width }, sign, nu)
    }

    pub fn none() -> Self {
        Self { kind: TwoBodyKind::Delta, sign: Sign::Repulsive, nu: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nu >= 0.0) {
            return Err(Error::InvalidParameter(format!("ν = {} must be nonnegative", self.nu)));
        }
        match &self.kind {
            TwoBodyKind::PowerLaw { sigma } if !(*sigma > 0.0 && *sigma < 3.0) => {
                Err(Error::InvalidParameter(format!("σ = {sigma} outside (0, 3)")))
            }
            TwoBodyKind::Yukawa { mu } if !(*mu > 0.0) => {
                Err(Error::InvalidParameter(format!("μ = {mu} must be positive")))
            }
            TwoBodyKind::Gaussian { width } if !(*width > 0.0) => {
                Err(Error::InvalidParameter(format!("width {width} must be positive")))
            }
            TwoBodyKind::Composite { short, long, eps } => {
                if !(*eps > 0.0) {
                    return Err(Error::InvalidParameter(format!("ε = {eps} must be positive")));
                }
                if matches!(short.kind, TwoBodyKind::Delta | TwoBodyKind::Composite { .. })
                    || matches!(long.kind, TwoBodyKind::Delta | TwoBodyKind::Composite { .. })
                {
                    return Err(Error::InvalidParameter(
                        "composite components must be pointwise kernels".into(),
                    ));
                }
                short.validate()?;
                long.validate()
            }
            _ => Ok(()),
        }
    }

    pub fn is_attractive(&self) -> bool {
        self.sign == Sign::Attractive && self.nu > 0.0
    }

    pub fn is_interacting(&self) -> bool {
        self.nu > 0.0
    }

    pub fn sigma(&self) -> Option<f64> {
        match self.kind {
            TwoBodyKind::PowerLaw { sigma } => Some(sigma),
            _ => None,
        }
    }

    /// Signed kernel value Φ(r) (no ν), `None` for the contact kernel.
    pub fn eval(&self, r: f64) -> Option<f64> {
        let s = self.sign.value();
        let v = match &self.kind {
            TwoBodyKind::PowerLaw { sigma } => r.powf(-sigma),
            TwoBodyKind::Yukawa { mu } => (-mu * r).exp() / r,
            TwoBodyKind::Gaussian { width } => (-(r * r) / (width * width)).exp(),
            TwoBodyKind::Delta => return None,
            TwoBodyKind::Composite { short, long, eps } => {
                short.nu * short.eval(r)? + long.nu * long.eval(eps * r)?
            }
        };
        Some(s * v)
    }

    /// Signed radial derivative Φ'(r).
    pub fn eval_derivative(&self, r: f64) -> Option<f64> {
        let s = self.sign.value();
        let v = match &self.kind {
            TwoBodyKind::PowerLaw { sigma } => -sigma * r.powf(-sigma - 1.0),
            TwoBodyKind::Yukawa { mu } => -(-mu * r).exp() * (mu * r + 1.0) / (r * r),
            TwoBodyKind::Gaussian { width } => {
                let w2 = width * width;
                -2.0 * r / w2 * (-(r * r) / w2).exp()
            }
            TwoBodyKind::Delta => return None,
            TwoBodyKind::Composite { short, long, eps } => {
                short.nu * short.eval_derivative(r)? + long.nu * eps * long.eval_derivative(eps * r)?
            }
        };
        Some(s * v)
    }

    fn is_singular(&self) -> bool {
        match &self.kind {
            TwoBodyKind::PowerLaw { .. } | TwoBodyKind::Yukawa { .. } => true,
            TwoBodyKind::Composite { short, long, .. } => short.is_singular() || long.is_singular(),
            _ => false,
        }
    }

    /// Whether the lattice symbol comes from the truncated free-space transform
    /// rather than from real-space samples.
    pub fn uses_analytic_symbol(&self, lat: &Lattice) -> bool {
        lat.d() == 3 && matches!(self.kind, TwoBodyKind::PowerLaw { .. } | TwoBodyKind::Yukawa { .. })
    }
}

/// Subcriticality in three dimensions: power laws need σ < 2.
pub fn is_subcritical(phi: &TwoBodyPotential, d: usize) -> Result<bool> {
    if d != 3 {
        return Err(Error::ClassificationUndefined(d));
    }
    fn sub(p: &TwoBodyPotential) -> bool {
        match &p.kind {
            TwoBodyKind::PowerLaw { sigma } => *sigma < 2.0,
            TwoBodyKind::Yukawa { .. } | TwoBodyKind::Gaussian { .. } => true,
            TwoBodyKind::Delta => false,
            TwoBodyKind::Composite { short, long, .. } => sub(short) && sub(long),
        }
    }
    Ok(sub(phi))
}

/// Signed Fourier symbol Φ̂(k) of the kernel on the lattice (without ν).
///
/// Contact kernels give a constant symbol. In three dimensions power laws and
/// Yukawa use the free-space transform of the kernel truncated at |x| = ℓ, so
/// the periodic convolution is exact for densities whose support diameter is
/// below ℓ. All other kernels are sampled at the sites with |x| < ℓ, the
/// singular origin sample being replaced by Φ(h/2).
pub fn kernel_symbol(phi: &TwoBodyPotential, plan: &SpectralPlan) -> Vec<f64> {
    let lat = *plan.lattice();
    let s = phi.sign.value();
    match &phi.kind {
        TwoBodyKind::Delta => vec![s; lat.len()],
        TwoBodyKind::PowerLaw { sigma } if lat.d() == 3 => {
            radial_symbol(&lat, |k| s * truncated_power_law(*sigma, k, lat.half_width()))
        }
        TwoBodyKind::Yukawa { mu } if lat.d() == 3 => {
            radial_symbol(&lat, |k| s * truncated_yukawa(*mu, k, lat.half_width()))
        }
        _ => plan.symbol_of_samples(&kernel_samples(phi, &lat)),
    }
}

/// Real-space kernel samples used by the sampled symbol.
pub fn kernel_samples(phi: &TwoBodyPotential, lat: &Lattice) -> Vec<f64> {
    let cut = lat.half_width() * (1.0 - 1e-12);
    let r0 = if phi.is_singular() { lat.spacing() / 2.0 } else { 0.0 };
    (0..lat.len())
        .map(|i| {
            let r = norm2(lat.position(i)).sqrt();
            if r >= cut {
                0.0
            } else {
                phi.eval(if r == 0.0 { r0 } else { r }).unwrap_or(0.0)
            }
        })
        .collect()
}

/// Evaluates a function of |k| once per distinct Σm² and scatters it.
fn radial_symbol(lat: &Lattice, f: impl Fn(f64) -> f64) -> Vec<f64> {
    let dk = PI / lat.half_width();
    let mut cache: HashMap<i64, f64> = HashMap::new();
    (0..lat.len())
        .map(|idx| {
            let m = lat.multi_index(idx);
            let s: i64 = (0..lat.d()).map(|a| lat.freq_index(m[a]).pow(2)).sum();
            *cache.entry(s).or_insert_with(|| f(dk * (s as f64).sqrt()))
        })
        .collect()
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        1.0 - x * x / 6.0 + x.powi(4) / 120.0
    } else {
        x.sin() / x
    }
}

/// 4π ∫₀^R r^{2−σ} sinc(kr) dr.
pub fn truncated_power_law(sigma: f64, k: f64, r: f64) -> f64 {
    if (sigma - 1.0).abs() < 1e-15 {
        return if k == 0.0 {
            2.0 * PI * r * r
        } else {
            4.0 * PI * (1.0 - (k * r).cos()) / (k * k)
        };
    }
    // r = R t^q makes the weight t^{q(3−σ)−1}, smooth enough for Gauss–Legendre
    let q = (4.0f64).max((4.0 / (3.0 - sigma)).ceil());
    let beta = q * (3.0 - sigma) - 1.0;
    let panels = 16 + (k * r / 2.0).ceil() as usize;
    let rule = Composite::new(0.0, 1.0, panels, 12);
    let integral = rule.integrate(|t| t.powf(beta) * sinc(k * r * t.powf(q)));
    4.0 * PI * q * r.powf(3.0 - sigma) * integral
}

/// 4π ∫₀^R r e^{−μr} sinc(kr) r dr / r, closed form.
pub fn truncated_yukawa(mu: f64, k: f64, r: f64) -> f64 {
    let e = (-mu * r).exp();
    if k == 0.0 {
        4.0 * PI * (1.0 - e * (1.0 + mu * r)) / (mu * mu)
    } else {
        4.0 * PI / (k * k + mu * mu) * (1.0 - e * ((k * r).cos() + mu / k * (k * r).sin()))
    }
}
