//! Hartree ground states: constrained minimization on the sphere ‖ψ‖₂² = N,
//! the critical soliton at the scaling-critical exponent, the curve E(N) and
//! the identities it obeys.

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, SpectralPlan};
use crate::model::Model;
use crate::observables::{centroid_relative, manifold_distance, periodic_center, polynomial_fit};
use crate::potentials::{KineticKind, TwoBodyKind, TwoBodyPotential};
use crate::propagator::boost;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinimizeConfig {
    /// Stop once ‖Hψ + ωψ‖₂/‖ψ‖₂ falls below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Initial (and largest) descent step; halved whenever the energy rises.
    pub tau: f64,
    /// Seeds the randomized initial guess.
    pub seed: u64,
}

impl Default for MinimizeConfig {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 100_000, tau: 1.0, seed: 0 }
    }
}

impl MinimizeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || !(self.tau > 0.0) || self.max_iter == 0 {
            return Err(Error::InvalidParameter(format!(
                "tol = {}, tau = {}, max_iter = {} must all be positive",
                self.tol, self.tau, self.max_iter
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct GroundState {
    /// Real profile with ∫Q > 0.
    pub q: Field,
    pub charge: f64,
    /// Q solves (T + λV + νΦ∗Q²)Q = −ωQ.
    pub omega: f64,
    pub energy: f64,
    pub residual: f64,
    pub iterations: usize,
    /// Charge fraction in the boundary shell; large values signal a box that is too small.
    pub boundary_mass: f64,
    /// Obtained as a fixed point of the eigen-iteration rather than by descent.
    pub critical_point: bool,
}

/// Hψ together with the quantities derived from it in one pass.
struct Eval {
    h_psi: Vec<C64>,
    charge: f64,
    /// Rayleigh quotient ⟨ψ, Hψ⟩/N, i.e. −ω.
    mu: f64,
    energy: f64,
    residual: f64,
    /// Size of the terms E is assembled from; sets its rounding floor.
    magnitude: f64,
}

fn evaluate(model: &Model, v: &[C64]) -> Result<Eval> {
    let lat = model.lattice();
    let rho: Vec<f64> = v.iter().map(|z| z.norm_sqr()).collect();
    let u = model.mean_field(&rho)?;
    let mut h_psi = v.to_vec();
    let t_k = model.t_k();
    model.plan().apply_multiplier(&mut h_psi, |idx| C64::new(t_k[idx], 0.0));
    for (((h, z), ui), vi) in h_psi.iter_mut().zip(v).zip(&u).zip(model.v()) {
        *h += z * (ui + vi);
    }
    let w = lat.cell_volume();
    let norm2: f64 = rho.iter().sum();
    let charge = norm2 * w;
    let quad: f64 = v.iter().zip(&h_psi).map(|(z, h)| (z.conj() * h).re).sum();
    let mu = quad / norm2;
    let pair: f64 = rho.iter().zip(&u).map(|(r, u)| r * u).sum();
    let energy = 0.5 * quad * w - 0.25 * pair * w;
    let r2: f64 = v.iter().zip(&h_psi).map(|(z, h)| (h - z * mu).norm_sqr()).sum();
    let residual = (r2 / norm2).sqrt();
    if !(energy.is_finite() && residual.is_finite()) {
        return Err(Error::NonFinite("ground-state iteration".into()));
    }
    let magnitude = 0.5 * quad.abs() * w + 0.25 * pair.abs() * w;
    Ok(Eval { h_psi, charge, mu, energy, residual, magnitude })
}

/// Residual with the directions (T + c)∂ⱼψ projected out. Without an external
/// potential the continuum problem is translation invariant; the lattice leaves
/// a tiny Peierls–Nabarro force along the translation modes, and while the
/// preconditioned descent slides along them the residual stays parallel to
/// (T + c)∂ⱼψ with an energy change far below double-precision resolution.
fn residual_mod_translations(model: &Model, v: &[C64], e: &Eval) -> Result<f64> {
    let lat = *model.lattice();
    let mut r: Vec<C64> = e.h_psi.iter().zip(v).map(|(h, z)| h - z * e.mu).collect();
    let mut basis: Vec<Vec<C64>> = Vec::new();
    let c = e.mu.abs().max(1.0 / (lat.half_width() * lat.half_width()));
    let t_k = model.t_k();
    for g in model.plan().gradient(&Field::from_raw(lat, v.to_vec()))? {
        let mut g = g.into_values();
        model.plan().apply_multiplier(&mut g, |idx| C64::new(t_k[idx] + c, 0.0));
        for b in &basis {
            let c: C64 = b.iter().zip(&g).map(|(x, y)| x.conj() * y).sum();
            g.iter_mut().zip(b).for_each(|(y, x)| *y -= c * x);
        }
        let n = g.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if n > 0.0 {
            g.iter_mut().for_each(|z| *z /= n);
            basis.push(g);
        }
    }
    for b in &basis {
        let c: C64 = b.iter().zip(&r).map(|(x, y)| x.conj() * y).sum();
        r.iter_mut().zip(b).for_each(|(y, x)| *y -= c * x);
    }
    let norm2: f64 = v.iter().map(|z| z.norm_sqr()).sum();
    Ok((r.iter().map(|z| z.norm_sqr()).sum::<f64>() / norm2).sqrt())
}

/// The convergence measure: plain residual, or modulo translations when V = 0.
fn convergence_residual(model: &Model, v: &[C64], e: &Eval, tol: f64) -> Result<f64> {
    if model.external().is_zero() && e.residual >= tol && e.residual < 1e4 * tol {
        residual_mod_translations(model, v, e)
    } else {
        Ok(e.residual)
    }
}

fn normalize(v: &mut [C64], cell: f64, n: f64) {
    let s: f64 = v.iter().map(|z| z.norm_sqr()).sum::<f64>() * cell;
    let f = (n / s).sqrt();
    for z in v.iter_mut() {
        *z *= f;
    }
}

/// Positive Gaussian guess with seeded width and, when an external potential
/// pins the state, seeded centre offset. Without one the guess is centred on
/// the origin site: the iteration then keeps the reflection symmetry of the
/// lattice and cannot creep along the Peierls–Nabarro landscape.
pub fn initial_guess(model: &Model, charge: f64, seed: u64) -> Result<Field> {
    let lat = *model.lattice();
    let l = lat.half_width();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = l * rng.random_range(0.12..0.25);
    let mut c = [0.0; 3];
    for ca in c.iter_mut().take(lat.d()) {
        *ca = l * rng.random_range(-0.05..0.05);
    }
    if model.external().is_zero() {
        c = [0.0; 3];
    }
    let f = Field::from_fn(lat, |x| {
        let r2: f64 = (0..3).map(|a| (x[a] - c[a]) * (x[a] - c[a])).sum();
        C64::new((-r2 / (2.0 * width * width)).exp(), 0.0)
    })?;
    let mut v = f.into_values();
    normalize(&mut v, lat.cell_volume(), charge);
    Field::new(lat, v)
}

/// Scaling exponents of kinetic and interaction energy under ψ ↦ s^{d/2}ψ(s·).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalingProbe {
    pub kinetic_exponent: f64,
    pub interaction_exponent: f64,
}

fn interaction_exponent(phi: &TwoBodyPotential, d: usize) -> f64 {
    match &phi.kind {
        TwoBodyKind::PowerLaw { sigma } => *sigma,
        TwoBodyKind::Yukawa { .. } => 1.0,
        TwoBodyKind::Gaussian { .. } => 0.0,
        TwoBodyKind::Delta => d as f64,
        TwoBodyKind::Composite { short, long, .. } => {
            interaction_exponent(short, d).max(interaction_exponent(long, d))
        }
    }
}

/// Refuses attractive models whose interaction energy scales at least as fast as
/// the kinetic energy under concentration: on the constraint sphere the energy is
/// then unbounded below (for all N beyond the critical one when the exponents tie).
pub fn check_scaling_instability(model: &Model) -> Result<ScalingProbe> {
    let kinetic_exponent = match model.kinetic() {
        KineticKind::Semirelativistic { .. } => 1.0,
        KineticKind::Nonrelativistic | KineticKind::FiniteDifference => 2.0,
    };
    let phi = model.twobody();
    let interaction_exponent = interaction_exponent(phi, model.lattice().d());
    let probe = ScalingProbe { kinetic_exponent, interaction_exponent };
    if phi.is_attractive() && interaction_exponent >= kinetic_exponent {
        return Err(Error::UnboundedBelow(format!(
            "interaction scales as s^{interaction_exponent}, kinetic energy only as s^{kinetic_exponent}"
        )));
    }
    Ok(probe)
}

/// Minimizes the Hartree energy at charge `charge` from a seeded guess.
pub fn minimize(model: &Model, charge: f64, cfg: &MinimizeConfig) -> Result<GroundState> {
    let init = initial_guess(model, charge, cfg.seed)?;
    minimize_from(model, charge, &init, cfg)
}

/// Projected, preconditioned gradient descent on the charge sphere,
/// ψ ← ψ − τ(T + c)⁻¹(Hψ − μψ) followed by renormalization, with τ halved whenever
/// the energy rises (or, at the rounding floor, the residual does). Fixed points are exactly the constrained critical points.
pub fn minimize_from(model: &Model, charge: f64, init: &Field, cfg: &MinimizeConfig) -> Result<GroundState> {
    cfg.validate()?;
    model.check(init)?;
    if !(charge > 0.0) {
        return Err(Error::InvalidParameter(format!("charge {charge} must be positive")));
    }
    check_scaling_instability(model)?;
    let lat = *model.lattice();
    let cell = lat.cell_volume();
    let c_floor = 1.0 / (lat.half_width() * lat.half_width());
    let t_k = model.t_k();

    let mut v = init.values().to_vec();
    normalize(&mut v, cell, charge);
    let mut cur = evaluate(model, &v)?;
    let mut tau = cfg.tau;
    let mut it = 0;
    let mut conv = convergence_residual(model, &v, &cur, cfg.tol)?;
    while conv >= cfg.tol {
        if it >= cfg.max_iter {
            return Err(Error::NoConvergence(format!(
                "ground state: residual {conv:.3e} after {it} iterations"
            )));
        }
        it += 1;
        let c = cur.mu.abs().max(c_floor);
        let mut p: Vec<C64> = cur.h_psi.iter().zip(&v).map(|(h, z)| h - z * cur.mu).collect();
        model.plan().apply_multiplier(&mut p, |idx| C64::new(1.0 / (t_k[idx] + c), 0.0));
        loop {
            let mut trial: Vec<C64> = v.iter().zip(&p).map(|(z, d)| z - d * tau).collect();
            normalize(&mut trial, cell, charge);
            let next = evaluate(model, &trial)?;
            // below the rounding floor of E the residual decides
            let noise = 1e-12 * cur.magnitude.max(1e-300);
            let accept = next.energy < cur.energy - noise
                || (next.energy <= cur.energy + noise && next.residual < cur.residual);
            if accept {
                v = trial;
                cur = next;
                conv = convergence_residual(model, &v, &cur, cfg.tol)?;
                tau = (tau * 1.25).min(cfg.tau);
                break;
            }
            tau *= 0.5;
            if tau < 1e-12 * cfg.tau {
                return Err(Error::NoConvergence("ground state: step collapsed".into()));
            }
        }
        if it % 100 == 0 {
            spreading_guard(model, &v)?;
        }
    }
    spreading_guard(model, &v)?;
    finish(model, v, it, false)
}

fn boundary_fraction(model: &Model, v: &[C64]) -> f64 {
    let lat = model.lattice();
    let rho: Vec<f64> = v.iter().map(|z| z.norm_sqr()).collect();
    centroid_relative(lat, &rho, periodic_center(lat, &rho)).1
}

/// A sizeable share of the charge in the boundary shell means the minimizing
/// sequence spreads over the box (a uniform state puts 1 − 0.9^d there).
fn spreading_guard(model: &Model, v: &[C64]) -> Result<()> {
    if !model.external().is_zero() {
        return Ok(());
    }
    let frac = boundary_fraction(model, v);
    if frac > 0.05 {
        return Err(Error::NoGroundState(format!(
            "{:.2}% of the charge sits in the boundary shell; the minimizing sequence spreads",
            100.0 * frac
        )));
    }
    Ok(())
}

/// Global phase fixed so ∫Q > 0, imaginary remainder dropped, data re-evaluated.
fn finish(model: &Model, mut v: Vec<C64>, iterations: usize, critical_point: bool) -> Result<GroundState> {
    let lat = *model.lattice();
    let total: C64 = v.iter().sum();
    if total.norm() > 0.0 {
        let ph = total.conj() / total.norm();
        for z in v.iter_mut() {
            *z *= ph;
        }
    }
    let re: Vec<f64> = v.iter().map(|z| z.re).collect();
    let q = Field::from_real(lat, &re)?;
    let e = evaluate(model, q.values())?;
    let residual = if model.external().is_zero() { residual_mod_translations(model, q.values(), &e)? } else { e.residual };
    let boundary_mass = boundary_fraction(model, q.values());
    Ok(GroundState {
        q,
        charge: e.charge,
        omega: -e.mu,
        energy: e.energy,
        residual,
        iterations,
        boundary_mass,
        critical_point,
    })
}

/// Critical point Q_ω of the trap-free problem at fixed ω by Petviashvili's
/// stabilized fixed-point iteration for (T + ω)Q = −ν(Φ∗Q²)Q. No energy descent
/// is involved, so it also applies where the energy is unbounded below.
pub fn critical_point(model: &Model, omega: f64, cfg: &MinimizeConfig) -> Result<GroundState> {
    cfg.validate()?;
    if !model.external().is_zero() {
        return Err(Error::Inapplicable("the soliton iteration needs λV = 0".into()));
    }
    if !model.twobody().is_attractive() {
        return Err(Error::Inapplicable("the soliton iteration needs an attractive kernel".into()));
    }
    if !(omega > 0.0) {
        return Err(Error::InvalidParameter(format!("ω = {omega} must be positive")));
    }
    let lat = *model.lattice();
    let plan = model.plan();
    let t_k = model.t_k();
    let width = 1.0 / omega.sqrt();
    let mut q: Vec<C64> = Field::from_fn(lat, |x| {
        let r2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
        C64::new((-r2 / (2.0 * width * width)).exp(), 0.0)
    })?
    .into_values();
    let mut it = 0;
    loop {
        let rho: Vec<f64> = q.iter().map(|z| z.norm_sqr()).collect();
        let u = model.mean_field(&rho)?;
        let f: Vec<C64> = q.iter().zip(&u).map(|(z, ui)| -z * ui).collect();
        let mut lq = q.clone();
        plan.apply_multiplier(&mut lq, |idx| C64::new(t_k[idx] + omega, 0.0));
        let num: f64 = q.iter().zip(&lq).map(|(a, b)| (a.conj() * b).re).sum();
        let den: f64 = q.iter().zip(&f).map(|(a, b)| (a.conj() * b).re).sum();
        let qn: f64 = q.iter().map(|z| z.norm_sqr()).sum();
        let r2: f64 = lq.iter().zip(&f).map(|(a, b)| (a - b).norm_sqr()).sum();
        if (r2 / qn).sqrt() < cfg.tol {
            break;
        }
        if !(den > 0.0) || !num.is_finite() {
            return Err(Error::NoConvergence("soliton iteration lost positivity".into()));
        }
        if it >= cfg.max_iter {
            return Err(Error::NoConvergence(format!(
                "soliton iteration: residual {:.3e} after {it} iterations",
                (r2 / qn).sqrt()
            )));
        }
        it += 1;
        let m = (num / den).powf(1.5);
        let mut next = f;
        plan.apply_multiplier(&mut next, |idx| C64::new(m / (t_k[idx] + omega), 0.0));
        q = next;
    }
    finish(model, q, it, true)
}

/// |H[Q]| relative to the kinetic part ½⟨Q, TQ⟩; vanishes for the critical soliton.
pub fn virial_check(model: &Model, gs: &GroundState) -> Result<f64> {
    if !model.twobody().is_interacting() {
        return Err(Error::Inapplicable("ν = 0: H[Q] is purely kinetic plus trap".into()));
    }
    let parts = model.energy_parts(&gs.q)?;
    Ok(parts.total().abs() / parts.kinetic)
}

/// 2·E(1): the one-body ground energy in the normalization of the many-body problem.
pub fn e0(model: &Model, cfg: &MinimizeConfig) -> Result<f64> {
    Ok(2.0 * minimize(model, 1.0, cfg)?.energy)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveSample {
    pub charge: f64,
    pub energy: f64,
    pub omega: f64,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyCurve {
    pub samples: Vec<CurveSample>,
}

impl EnergyCurve {
    pub fn new(samples: Vec<CurveSample>) -> Result<Self> {
        if samples.windows(2).any(|w| !(w[1].charge > w[0].charge)) {
            return Err(Error::InvalidParameter("curve charges must increase strictly".into()));
        }
        Ok(Self { samples })
    }

    pub const CSV_HEADER: &'static str = "N,E,omega,residual";

    pub fn csv_rows(&self) -> Vec<String> {
        self.samples
            .iter()
            .map(|s| format!("{:.16e},{:.16e},{:.16e},{:.16e}", s.charge, s.energy, s.omega, s.residual))
            .collect()
    }

    fn energy_at(&self, n: f64) -> Option<f64> {
        self.samples
            .iter()
            .find(|s| (s.charge - n).abs() <= 1e-9 * n.abs().max(1.0))
            .map(|s| s.energy)
    }
}

/// E(N) on `charges`, each minimization warm-started from the previous profile.
pub fn energy_curve(model: &Model, charges: &[f64], cfg: &MinimizeConfig) -> Result<EnergyCurve> {
    let mut samples = Vec::with_capacity(charges.len());
    let mut prev: Option<GroundState> = None;
    for &n in charges {
        let gs = match &prev {
            None => minimize(model, n, cfg)?,
            Some(p) => minimize_from(model, n, &p.q.scaled(C64::new((n / p.charge).sqrt(), 0.0)), cfg)?,
        };
        samples.push(CurveSample { charge: gs.charge, energy: gs.energy, omega: gs.omega, residual: gs.residual });
        prev = Some(gs);
    }
    EnergyCurve::new(samples)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SubadditivityMargin {
    pub charge: f64,
    pub alpha: f64,
    /// E(N) − E(α) − E(N − α); strict sub-additivity means negative.
    pub margin: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubadditivityReport {
    pub margins: Vec<SubadditivityMargin>,
    pub worst: f64,
}

impl SubadditivityReport {
    pub fn holds(&self) -> bool {
        self.worst < 0.0
    }
}

/// All splittings N = α + (N − α) available among the curve samples.
pub fn check_subadditivity(curve: &EnergyCurve) -> Result<SubadditivityReport> {
    let mut margins = Vec::new();
    for s in &curve.samples {
        for a in &curve.samples {
            if a.charge >= s.charge {
                break;
            }
            if let Some(e_rest) = curve.energy_at(s.charge - a.charge) {
                margins.push(SubadditivityMargin {
                    charge: s.charge,
                    alpha: a.charge,
                    margin: s.energy - a.energy - e_rest,
                });
            }
        }
    }
    if margins.is_empty() {
        return Err(Error::InsufficientData("no sample pair adds up to another sample".into()));
    }
    let worst = margins.iter().map(|m| m.margin).fold(f64::NEG_INFINITY, f64::max);
    Ok(SubadditivityReport { margins, worst })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Concavity {
    Strict,
    Linear,
    Violated,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DualSlopeReport {
    /// (N, E′(N) by finite differences, −ω/2) at interior samples.
    pub slopes: Vec<(f64, f64, f64)>,
    /// max |E′ + ω/2| / |ω/2|.
    pub max_rel_error: f64,
    /// dω/dN > 0 everywhere, i.e. dN/dω > 0.
    pub omega_increasing: bool,
    pub concavity: Concavity,
    /// Sample residuals too large for the comparison to mean anything.
    pub inconclusive: bool,
}

impl DualSlopeReport {
    pub fn consistent(&self, rel_tol: f64) -> bool {
        !self.inconclusive && self.max_rel_error < rel_tol
    }
}

/// Compares E′(N) against −ω(N)/2 and classifies the curvature of E.
pub fn dual_slope_check(curve: &EnergyCurve) -> Result<DualSlopeReport> {
    let s = &curve.samples;
    if s.len() < 4 {
        return Err(Error::InsufficientData(format!("{} curve samples, need at least 4", s.len())));
    }
    let mut slopes = Vec::new();
    let mut max_rel_error: f64 = 0.0;
    let mut second = Vec::new();
    for i in 1..s.len() - 1 {
        let (h1, h2) = (s[i].charge - s[i - 1].charge, s[i + 1].charge - s[i].charge);
        let d1 = -h2 / (h1 * (h1 + h2)) * s[i - 1].energy
            + (h2 - h1) / (h1 * h2) * s[i].energy
            + h1 / (h2 * (h1 + h2)) * s[i + 1].energy;
        let target = -0.5 * s[i].omega;
        max_rel_error = max_rel_error.max((d1 + 0.5 * s[i].omega).abs() / target.abs().max(1e-300));
        slopes.push((s[i].charge, d1, target));
        let d2 = 2.0 * ((s[i + 1].energy - s[i].energy) / h2 - (s[i].energy - s[i - 1].energy) / h1) / (h1 + h2);
        second.push(d2);
    }
    let e_scale = s.iter().map(|x| x.energy.abs()).fold(0.0, f64::max);
    let n_scale = s.last().map(|x| x.charge).unwrap_or(1.0);
    let flat = 1e-9 * e_scale.max(1e-300) / (n_scale * n_scale);
    let concavity = if second.iter().all(|d| d.abs() <= flat) {
        Concavity::Linear
    } else if second.iter().all(|&d| d < 0.0) {
        Concavity::Strict
    } else {
        Concavity::Violated
    };
    let omega_increasing = s.windows(2).all(|w| w[1].omega > w[0].omega);
    let inconclusive = s.iter().any(|x| !(x.residual < 1e-6));
    Ok(DualSlopeReport { slopes, max_rel_error, omega_increasing, concavity, inconclusive })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalingFit {
    /// p in N = C ω^p.
    pub exponent: f64,
    pub prefactor: f64,
}

/// Log-log fit of N against ω over a trap-free curve.
pub fn scaling_exponent(curve: &EnergyCurve) -> Result<ScalingFit> {
    let s = &curve.samples;
    if s.len() < 3 {
        return Err(Error::InsufficientData(format!("{} samples, need at least 3", s.len())));
    }
    if s.iter().any(|x| !(x.omega > 0.0)) {
        return Err(Error::Inapplicable("ω must be positive for a log-log fit".into()));
    }
    let lw: Vec<f64> = s.iter().map(|x| x.omega.ln()).collect();
    let ln: Vec<f64> = s.iter().map(|x| x.charge.ln()).collect();
    let c = polynomial_fit(&lw, &ln, 1)?;
    Ok(ScalingFit { exponent: c[1], prefactor: c[0].exp() })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SymmetryReport {
    /// Relative L² distance of |Q| from its spherical average, inscribed ball only.
    pub radial_deviation: f64,
    /// Largest outward increase of the shell-averaged profile, relative to its maximum.
    pub max_increase: f64,
    /// min |Q| / max |Q| over the lattice.
    pub min_ratio: f64,
}

impl SymmetryReport {
    pub fn monotone(&self, tol: f64) -> bool {
        self.max_increase <= tol
    }
    pub fn positive(&self) -> bool {
        self.min_ratio > 0.0
    }
}

/// Recentres |Q| on a lattice site (spectral shift by the circular centroid) and
/// groups sites by their exact integer radius Σm²; the spread within each group
/// measures the departure from radial symmetry.
pub fn symmetry_check(plan: &SpectralPlan, q: &Field) -> Result<SymmetryReport> {
    let lat = *plan.lattice();
    if *q.lattice() != lat {
        return Err(Error::LatticeMismatch);
    }
    let rho = q.density();
    let c = periodic_center(&lat, &rho);
    let centred = boost(plan, q, [0.0; 3], c.map(|x| -x), 0.0)?;
    let a: Vec<f64> = centred.values().iter().map(|z| z.norm()).collect();
    let n = lat.n();
    let half = (n / 2) as i64;
    let mut groups: std::collections::BTreeMap<i64, (f64, usize)> = Default::default();
    let key = |idx: usize| {
        let m = lat.multi_index(idx);
        (0..lat.d()).map(|ax| (m[ax] as i64 - half).pow(2)).sum::<i64>()
    };
    let inside = |s: i64| s < half * half;
    for (idx, &v) in a.iter().enumerate() {
        let s = key(idx);
        if inside(s) {
            let e = groups.entry(s).or_insert((0.0, 0));
            e.0 += v;
            e.1 += 1;
        }
    }
    let (mut dev, mut tot) = (0.0, 0.0);
    for (idx, &v) in a.iter().enumerate() {
        let s = key(idx);
        if inside(s) {
            let (sum, cnt) = groups[&s];
            dev += (v - sum / cnt as f64).powi(2);
            tot += v * v;
        }
    }
    let profile: Vec<f64> = groups.values().map(|(s, c)| s / *c as f64).collect();
    let peak = profile.iter().cloned().fold(0.0, f64::max).max(1e-300);
    let max_increase = profile.windows(2).map(|w| (w[1] - w[0]).max(0.0)).fold(0.0, f64::max) / peak;
    let raw: Vec<f64> = q.values().iter().map(|z| z.norm()).collect();
    let max = raw.iter().cloned().fold(0.0, f64::max).max(1e-300);
    let min = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(SymmetryReport {
        radial_deviation: (dev / tot.max(1e-300)).sqrt(),
        max_increase,
        min_ratio: min / max,
    })
}

#[derive(Clone, Debug)]
pub struct MultiSeedReport {
    pub energies: Vec<f64>,
    /// Largest manifold distance between any two of the minimizers.
    pub max_distance: f64,
}

/// Minimizes from several seeds; distinct minimizers show up as a large pairwise
/// distance modulo phase and translation.
pub fn multi_seed_report(model: &Model, charge: f64, cfg: &MinimizeConfig, seeds: &[u64]) -> Result<MultiSeedReport> {
    let mut states = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        states.push(minimize(model, charge, &MinimizeConfig { seed, ..cfg.clone() })?);
    }
    let mut max_distance: f64 = 0.0;
    for i in 0..states.len() {
        for j in i + 1..states.len() {
            let d = manifold_distance(model.plan(), &states[i].q, &states[j].q)?;
            max_distance = max_distance.max(d.distance);
        }
    }
    Ok(MultiSeedReport { energies: states.iter().map(|s| s.energy).collect(), max_distance })
}

/// Bisection on N between a charge without and one with a bound state; returns the
/// final bracket (no ground state, ground state).
pub fn charge_threshold(model: &Model, lo: f64, hi: f64, steps: usize, cfg: &MinimizeConfig) -> Result<(f64, f64)> {
    let bound = |n: f64| match minimize(model, n, cfg) {
        Ok(_) => Ok(true),
        Err(Error::NoGroundState(_)) => Ok(false),
        Err(e) => Err(e),
    };
    if bound(lo)? || !bound(hi)? {
        return Err(Error::InvalidParameter(format!("[{lo}, {hi}] does not bracket the threshold")));
    }
    let (mut a, mut b) = (lo, hi);
    for _ in 0..steps {
        let m = 0.5 * (a + b);
        if bound(m)? {
            b = m;
        } else {
            a = m;
        }
    }
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Lattice;
    use crate::observables::energy;
    use crate::potentials::{ExternalKind, ExternalPotential, Sign};
    use crate::propagator::step;
    use nalgebra::DMatrix;

    fn trap(d: usize, n: usize, l: f64) -> Model {
        let lat = Lattice::new(d, n, l).unwrap();
        let v = ExternalPotential::new(ExternalKind::Harmonic, 1.0).unwrap();
        Model::nonrelativistic(lat, v, TwoBodyPotential::none()).unwrap()
    }

    fn newton(n: usize, l: f64, sigma: f64, nu: f64) -> Model {
        let lat = Lattice::new(3, n, l).unwrap();
        let phi = TwoBodyPotential::power_law(sigma, Sign::Attractive, nu).unwrap();
        Model::nonrelativistic(lat, ExternalPotential::zero(), phi).unwrap()
    }

    /// Dense matrix of T + λV on a 1D lattice, built column by column.
    fn dense_linear(model: &Model) -> DMatrix<f64> {
        let len = model.lattice().len();
        let mut m = DMatrix::zeros(len, len);
        for j in 0..len {
            let mut e = vec![C64::new(0.0, 0.0); len];
            e[j] = C64::new(1.0, 0.0);
            let f = Field::new(*model.lattice(), e).unwrap();
            let h = model.apply_linear(&f, model.v());
            for i in 0..len {
                m[(i, j)] = h.values()[i].re;
            }
        }
        m
    }

    #[test]
    fn oscillator_ground_state() {
        let m = trap(1, 64, 8.0);
        let gs = minimize(&m, 1.0, &MinimizeConfig::default()).unwrap();
        assert!(gs.residual < 1e-8);
        assert!((gs.energy - 0.5).abs() < 1e-10, "{}", gs.energy);
        assert!((gs.omega + 1.0).abs() < 1e-10);
        let lat = m.lattice();
        let exact = Field::from_fn(*lat, |x| C64::new(PI_QUARTER * (-x[0] * x[0] / 2.0).exp(), 0.0)).unwrap();
        assert!(gs.q.sub(&exact).unwrap().norm() < 1e-6);
        let eig = dense_linear(&m).symmetric_eigen();
        let lowest = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        let e = e0(&m, &MinimizeConfig::default()).unwrap();
        assert!((e - lowest).abs() < 1e-9, "{e} vs {lowest}");
    }

    const PI_QUARTER: f64 = 0.751_125_544_464_942_5; // π^{-1/4}

    #[test]
    fn oscillator_in_three_dimensions() {
        let m = trap(3, 32, 6.0);
        let gs = minimize(&m, 2.0, &MinimizeConfig::default()).unwrap();
        assert!((gs.energy - 2.0 * 1.5).abs() < 1e-8, "{}", gs.energy);
        assert!((e0(&m, &MinimizeConfig::default()).unwrap() - 3.0).abs() < 1e-8);
    }

    #[test]
    fn attraction_lowers_e0() {
        let lat = Lattice::new(1, 64, 8.0).unwrap();
        let v = ExternalPotential::new(ExternalKind::Harmonic, 1.0).unwrap();
        let phi = TwoBodyPotential::gaussian(1.0, Sign::Attractive, 1.0).unwrap();
        let m = Model::nonrelativistic(lat, v, phi).unwrap();
        assert!(e0(&m, &MinimizeConfig::default()).unwrap() < 1.0);
    }

    #[test]
    fn scaling_guard() {
        assert!(matches!(
            minimize(&newton(16, 8.0, 2.0, 1.0), 1.0, &MinimizeConfig::default()),
            Err(Error::UnboundedBelow(_))
        ));
        let p = check_scaling_instability(&newton(16, 8.0, 1.0, 1.0)).unwrap();
        assert_eq!((p.kinetic_exponent, p.interaction_exponent), (2.0, 1.0));
        let lat3 = Lattice::new(3, 16, 8.0).unwrap();
        let contact = TwoBodyPotential::new(TwoBodyKind::Delta, Sign::Attractive, 1.0).unwrap();
        let m3 = Model::nonrelativistic(lat3, ExternalPotential::zero(), contact.clone()).unwrap();
        assert!(check_scaling_instability(&m3).is_err());
        let lat1 = Lattice::new(1, 16, 8.0).unwrap();
        let m1 = Model::nonrelativistic(lat1, ExternalPotential::zero(), contact).unwrap();
        assert!(check_scaling_instability(&m1).is_ok());
        // repulsion is never unbounded
        let rep = newton(16, 8.0, 2.5, 1.0).with_twobody(TwoBodyPotential::power_law(2.5, Sign::Repulsive, 1.0).unwrap());
        assert!(check_scaling_instability(&rep.unwrap()).is_ok());
    }

    #[test]
    fn newton_ground_state_is_positive_and_radial() {
        let m = newton(64, 10.0, 1.0, 8.0);
        let gs = minimize(&m, 1.0, &MinimizeConfig::default()).unwrap();
        assert!(gs.residual < 1e-8);
        assert!((gs.charge - 1.0).abs() < 1e-10);
        assert!(gs.energy < 0.0 && gs.omega > 0.0);
        assert!((energy(&m, &gs.q).unwrap() - gs.energy).abs() < 1e-10 * gs.energy.abs());
        let qmax = gs.q.values().iter().map(|z| z.re).fold(0.0, f64::max);
        let qmin = gs.q.values().iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
        assert!(qmin >= -1e-8 * qmax);
        let rep = symmetry_check(m.plan(), &gs.q).unwrap();
        assert!(rep.radial_deviation < 1e-6, "{rep:?}");
        assert!(rep.monotone(1e-8), "{rep:?}");
        // translation covariance of the report
        let moved = boost(m.plan(), &gs.q, [0.0; 3], [1.3, -0.7, 0.4], 0.0).unwrap();
        let rep2 = symmetry_check(m.plan(), &moved).unwrap();
        assert!(rep2.radial_deviation < 1e-6, "{rep2:?}");
    }

    #[test]
    fn random_field_is_not_radial() {
        let lat = Lattice::new(3, 16, 4.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let re: Vec<f64> = (0..lat.len()).map(|_| rng.random_range(0.0..1.0)).collect();
        let plan = SpectralPlan::new(lat);
        let rep = symmetry_check(&plan, &Field::from_real(lat, &re).unwrap()).unwrap();
        assert!(rep.radial_deviation > 0.1, "{rep:?}");
    }

    #[test]
    fn rescaling_covariance() {
        let cfg = MinimizeConfig::default();
        let theta = 2.0;
        let a = minimize(&newton(32, 10.0, 1.0, 2.0), theta * 1.0, &cfg).unwrap();
        let b = minimize(&newton(32, 10.0, 1.0, 2.0 * theta), 1.0, &cfg).unwrap();
        assert!((a.energy - theta * b.energy).abs() < 1e-6 * a.energy.abs());
        assert!((a.omega - b.omega).abs() < 1e-6 * a.omega);
        let m = newton(32, 10.0, 1.0, 2.0);
        let d = manifold_distance(m.plan(), &a.q, &b.q.scaled(C64::new(theta.sqrt(), 0.0))).unwrap();
        assert!(d.distance < 1e-6, "{d:?}");
    }

    #[test]
    fn minimize_is_deterministic() {
        let m = newton(16, 10.0, 1.0, 2.0);
        let cfg = MinimizeConfig { seed: 11, ..Default::default() };
        let a = minimize(&m, 1.0, &cfg).unwrap();
        let b = minimize(&m, 1.0, &cfg).unwrap();
        assert_eq!(a.q.values(), b.q.values());
        assert_eq!(a.energy.to_bits(), b.energy.to_bits());
    }

    #[test]
    fn seeds_agree_modulo_symmetries() {
        let m = newton(32, 10.0, 1.0, 2.0);
        let rep = multi_seed_report(&m, 1.0, &MinimizeConfig::default(), &[1, 2, 3]).unwrap();
        assert!(rep.max_distance < 1e-6, "{rep:?}");
        let spread = rep.energies.iter().fold(0.0_f64, |a, e| a.max((e - rep.energies[0]).abs()));
        assert!(spread < 1e-10);
    }

    #[test]
    fn ground_state_is_stationary() {
        let m = newton(32, 10.0, 1.0, 2.0);
        let gs = minimize(&m, 1.0, &MinimizeConfig { tol: 1e-10, ..Default::default() }).unwrap();
        let mut prev = f64::INFINITY;
        for dt in [1e-2, 5e-3] {
            let psi = step(&m, &gs.q, dt).unwrap();
            let back = psi.scaled(C64::from_polar(1.0, -gs.omega * dt));
            let err = back.sub(&gs.q).unwrap().norm() / gs.q.norm();
            assert!(err < 1e-5, "{err}");
            assert!(err < prev);
            prev = err;
        }
    }

    #[test]
    fn curve_properties() {
        let m = newton(32, 10.0, 1.0, 2.0);
        let cfg = MinimizeConfig::default();
        let curve = energy_curve(&m, &[0.8, 1.0, 1.2, 1.6, 2.0], &cfg).unwrap();
        assert!(curve.samples.iter().all(|s| s.energy <= 0.0));
        let e = |n: f64| curve.energy_at(n).unwrap();
        assert!(e(2.0) < 2.0 * e(1.0));
        assert!(e(1.6) < 2.0 * e(0.8));
        let rep = check_subadditivity(&curve).unwrap();
        assert!(rep.holds());
        assert!(rep.margins.iter().any(|m| (m.charge - 1.6).abs() < 1e-9 && (m.alpha - 0.8).abs() < 1e-9));
        // doubling ν at N equals halving nothing: E_ν(2N) = 2 E_{2ν}(N)
        let m2 = newton(32, 10.0, 1.0, 4.0);
        let c2 = energy_curve(&m2, &[0.4, 0.5, 0.6], &cfg).unwrap();
        for (s2, n) in c2.samples.iter().zip([0.8, 1.0, 1.2]) {
            assert!((e(n) - 2.0 * s2.energy).abs() < 1e-6 * e(n).abs());
        }
    }

    fn synthetic(points: &[(f64, f64, f64)]) -> EnergyCurve {
        EnergyCurve::new(
            points
                .iter()
                .map(|&(charge, energy, omega)| CurveSample { charge, energy, omega, residual: 0.0 })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn subadditivity_of_concave_parabola() {
        let c = synthetic(&(1..=6).map(|i| (i as f64, -(i * i) as f64, 0.0)).collect::<Vec<_>>());
        let rep = check_subadditivity(&c).unwrap();
        for m in &rep.margins {
            assert!((m.margin + 2.0 * m.alpha * (m.charge - m.alpha)).abs() < 1e-12);
        }
        assert!(rep.margins.iter().any(|m| m.alpha * 2.0 == m.charge));
        assert!(rep.holds());
        let lone = synthetic(&[(1.0, -1.0, 0.0), (3.0, -9.0, 0.0)]);
        assert!(matches!(check_subadditivity(&lone), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn dual_slope_controls() {
        let ns: Vec<f64> = (1..=8).map(|i| 1.0 + 0.05 * i as f64).collect();
        let good = synthetic(&ns.iter().map(|&n| (n, -n.powi(3), 6.0 * n * n)).collect::<Vec<_>>());
        let r = dual_slope_check(&good).unwrap();
        assert!(r.consistent(0.02), "{r:?}");
        assert!(r.omega_increasing);
        assert_eq!(r.concavity, Concavity::Strict);
        // ω off by a factor two: E′ = −ω/2 fails
        let bad = synthetic(&ns.iter().map(|&n| (n, -n.powi(3), 3.0 * n * n)).collect::<Vec<_>>());
        assert!(!dual_slope_check(&bad).unwrap().consistent(0.02));
        let linear = synthetic(&ns.iter().map(|&n| (n, 1.5 * n, -3.0)).collect::<Vec<_>>());
        let r = dual_slope_check(&linear).unwrap();
        assert_eq!(r.concavity, Concavity::Linear);
        assert!(r.max_rel_error < 1e-12);
        assert!(!r.omega_increasing);
        let noisy = EnergyCurve::new(
            ns.iter().map(|&n| CurveSample { charge: n, energy: -n.powi(3), omega: 6.0 * n * n, residual: 1e-3 }).collect(),
        )
        .unwrap();
        assert!(dual_slope_check(&noisy).unwrap().inconclusive);
        assert!(dual_slope_check(&synthetic(&good_prefix(&ns))).is_err());
    }

    fn good_prefix(ns: &[f64]) -> Vec<(f64, f64, f64)> {
        ns.iter().take(3).map(|&n| (n, -n.powi(3), 6.0 * n * n)).collect()
    }

    #[test]
    fn linear_trap_curve() {
        let m = trap(1, 64, 8.0);
        let curve = energy_curve(&m, &[0.5, 1.0, 1.5, 2.0], &MinimizeConfig::default()).unwrap();
        let r = dual_slope_check(&curve).unwrap();
        assert_eq!(r.concavity, Concavity::Linear);
        assert!(r.max_rel_error < 1e-8);
    }

    #[test]
    fn scaling_fit_recovers_power() {
        let c = synthetic(&[1.0, 2.0, 4.0, 8.0].map(|w: f64| (0.7 * w.sqrt(), 0.0, w)));
        let fit = scaling_exponent(&c).unwrap();
        assert!((fit.exponent - 0.5).abs() < 1e-12);
        assert!((fit.prefactor - 0.7).abs() < 1e-12);
        assert!(scaling_exponent(&synthetic(&[(1.0, 0.0, 1.0), (2.0, 0.0, 2.0)])).is_err());
    }

    #[test]
    fn critical_soliton_has_zero_energy() {
        let m = newton(32, 8.0, 2.0, 1.0);
        let gs = critical_point(&m, 1.0, &MinimizeConfig { tol: 1e-10, ..Default::default() }).unwrap();
        assert!(gs.critical_point);
        assert!(virial_check(&m, &gs).unwrap() < 1e-3);
        // the subcritical minimizer is a strict contrast
        let sub = newton(32, 10.0, 1.0, 2.0);
        let g1 = minimize(&sub, 1.0, &MinimizeConfig::default()).unwrap();
        assert!(g1.energy < 0.0 && virial_check(&sub, &g1).unwrap() > 0.1);
        let free = trap(1, 32, 6.0);
        let g0 = minimize(&free, 1.0, &MinimizeConfig::default()).unwrap();
        assert!(matches!(virial_check(&free, &g0), Err(Error::Inapplicable(_))));
        assert!(critical_point(&free, 1.0, &MinimizeConfig::default()).is_err());
    }

    #[test]
    fn short_range_binding_threshold() {
        let lat = Lattice::new(3, 16, 8.0).unwrap();
        let phi = TwoBodyPotential::gaussian(1.0, Sign::Attractive, 1.0).unwrap();
        let m = Model::nonrelativistic(lat, ExternalPotential::zero(), phi).unwrap();
        let cfg = MinimizeConfig { tol: 1e-7, ..Default::default() };
        assert!(matches!(minimize(&m, 0.5, &cfg), Err(Error::NoGroundState(_))));
        let (a, b) = charge_threshold(&m, 0.5, 60.0, 4, &cfg).unwrap();
        assert!(a < b && b - a <= 60.0 / 16.0 + 1e-12);
    }
}
