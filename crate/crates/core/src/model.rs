//! A lattice together with trap, kernel and kinetic operator, with the
//! symbols and samples every solver needs precomputed.

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::grid::{Field, Lattice, SpectralPlan};
use crate::potentials::{kernel_symbol, ExternalPotential, KineticKind, TwoBodyPotential};

#[derive(Clone, Debug)]
pub struct Model {
    lattice: Lattice,
    plan: SpectralPlan,
    external: ExternalPotential,
    twobody: TwoBodyPotential,
    kinetic: KineticKind,
    v: Vec<f64>,
    phi_hat: Vec<f64>,
    t_k: Vec<f64>,
}

/// Energy split as H = kinetic + external + interaction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyParts {
    /// ½⟨ψ, Tψ⟩
    pub kinetic: f64,
    /// ½∫λV|ψ|²
    pub external: f64,
    /// ¼ν∫(Φ∗|ψ|²)|ψ|²
    pub interaction: f64,
}

impl EnergyParts {
    pub fn total(&self) -> f64 {
        self.kinetic + self.external + self.interaction
    }
}

impl Model {
    pub fn new(
        lattice: Lattice,
        external: ExternalPotential,
        twobody: TwoBodyPotential,
        kinetic: KineticKind,
    ) -> Result<Self> {
        twobody.validate()?;
        kinetic.validate()?;
        let plan = SpectralPlan::new(lattice);
        let v = external.sample(&lattice);
        let phi_hat = if twobody.nu > 0.0 {
            kernel_symbol(&twobody, &plan).into_iter().map(|s| s * twobody.nu).collect()
        } else {
            vec![0.0; lattice.len()]
        };
        let h = lattice.spacing();
        let t_k = (0..lattice.len()).map(|idx| kinetic.symbol(lattice.wavevector(idx), h)).collect();
        Ok(Self { lattice, plan, external, twobody, kinetic, v, phi_hat, t_k })
    }

    pub fn nonrelativistic(
        lattice: Lattice,
        external: ExternalPotential,
        twobody: TwoBodyPotential,
    ) -> Result<Self> {
        Self::new(lattice, external, twobody, KineticKind::Nonrelativistic)
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }
    pub fn plan(&self) -> &SpectralPlan {
        &self.plan
    }
    pub fn external(&self) -> &ExternalPotential {
        &self.external
    }
    pub fn twobody(&self) -> &TwoBodyPotential {
        &self.twobody
    }
    pub fn kinetic(&self) -> KineticKind {
        self.kinetic
    }
    /// λV at the sites.
    pub fn v(&self) -> &[f64] {
        &self.v
    }
    /// ν·Φ̂ in FFT order.
    pub fn phi_hat(&self) -> &[f64] {
        &self.phi_hat
    }
    /// Kinetic symbol T(k).
    pub fn t_k(&self) -> &[f64] {
        &self.t_k
    }

    pub fn with_twobody(&self, twobody: TwoBodyPotential) -> Result<Self> {
        Self::new(self.lattice, self.external.clone(), twobody, self.kinetic)
    }

    pub fn with_external(&self, external: ExternalPotential) -> Result<Self> {
        Self::new(self.lattice, external, self.twobody.clone(), self.kinetic)
    }

    pub(crate) fn check(&self, f: &Field) -> Result<()> {
        if *f.lattice() != self.lattice {
            return Err(Error::LatticeMismatch);
        }
        Ok(())
    }

    /// ν(Φ∗ρ).
    pub fn mean_field(&self, rho: &[f64]) -> Result<Vec<f64>> {
        if !self.twobody.is_interacting() {
            return Ok(vec![0.0; self.lattice.len()]);
        }
        self.plan.convolve(&self.phi_hat, rho)
    }

    /// λV + ν(Φ∗|ψ|²).
    pub fn effective_potential(&self, psi: &Field) -> Result<Vec<f64>> {
        self.check(psi)?;
        let mut w = self.mean_field(&psi.density())?;
        for (a, b) in w.iter_mut().zip(&self.v) {
            *a += b;
        }
        Ok(w)
    }

    /// Tψ + (λV + νΦ∗|ψ|²)ψ.
    pub fn apply_hamiltonian(&self, psi: &Field) -> Result<Field> {
        let w = self.effective_potential(psi)?;
        Ok(self.apply_linear(psi, &w))
    }

    /// Tψ + wψ for a frozen real potential w.
    pub fn apply_linear(&self, psi: &Field, w: &[f64]) -> Field {
        let mut t = psi.values().to_vec();
        self.plan.apply_multiplier(&mut t, |idx| C64::new(self.t_k[idx], 0.0));
        for ((a, p), wi) in t.iter_mut().zip(psi.values()).zip(w) {
            *a += p * wi;
        }
        Field::from_raw(self.lattice, t)
    }

    /// ½⟨ψ, Tψ⟩ from the raw spectrum of ψ.
    pub(crate) fn kinetic_from_raw(&self, hat: &[C64]) -> f64 {
        let s: f64 = hat.iter().zip(&self.t_k).map(|(z, t)| t * z.norm_sqr()).sum();
        0.5 * s * self.lattice.cell_volume() / self.lattice.len() as f64
    }

    pub fn energy_parts(&self, psi: &Field) -> Result<EnergyParts> {
        self.check(psi)?;
        let mut hat = psi.values().to_vec();
        self.plan.forward_raw(&mut hat);
        let kinetic = self.kinetic_from_raw(&hat);
        let rho = psi.density();
        let w = self.lattice.cell_volume();
        let external = 0.5 * w * rho.iter().zip(&self.v).map(|(r, v)| r * v).sum::<f64>();
        let interaction = if self.twobody.is_interacting() {
            let u = self.mean_field(&rho)?;
            0.25 * w * rho.iter().zip(&u).map(|(r, u)| r * u).sum::<f64>()
        } else {
            0.0
        };
        Ok(EnergyParts { kinetic, external, interaction })
    }
}
