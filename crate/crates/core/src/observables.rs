//! Conserved and monitored functionals of ψ, and the distance to the
//! ground-state orbit.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::grid::{same_lattice, Field, Lattice, SpectralPlan};
use crate::model::Model;
use crate::propagator::{evolve_observed, PropagatorConfig, TrajectoryLog};

/// Fraction of the box half width beyond which a site counts as boundary shell.
const SHELL: f64 = 0.9;
pub const BOUNDARY_MASS_WARNING: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct InvariantRecord {
    pub t: f64,
    pub charge: f64,
    pub energy: f64,
    pub momentum: [f64; 3],
    /// Only populated for d = 3.
    pub angular_momentum: Option<[f64; 3]>,
    pub variance: f64,
    /// ∫xρ, unnormalized, unwrapped across the periodic boundary.
    pub centroid: [f64; 3],
    pub grad_norm: f64,
    pub kinetic: f64,
    pub interaction: f64,
    /// Boundary-shell mass divided by the charge.
    pub boundary_mass: f64,
}

impl InvariantRecord {
    pub const CSV_HEADER: &'static str = "t,N,H,Px,Py,Pz,Lx,Ly,Lz,variance,cx,cy,cz,gradnorm";

    pub fn boundary_warning(&self) -> bool {
        self.boundary_mass > BOUNDARY_MASS_WARNING
    }

    /// Normalized centroid ⟨x⟩/N.
    pub fn position(&self) -> [f64; 3] {
        let n = self.charge.max(f64::MIN_POSITIVE);
        [self.centroid[0] / n, self.centroid[1] / n, self.centroid[2] / n]
    }

    /// One CSV row with 17 significant digits; absent components are written as 0.
    pub fn csv_row(&self) -> String {
        let l = self.angular_momentum.unwrap_or([0.0; 3]);
        let vals = [
            self.t,
            self.charge,
            self.energy,
            self.momentum[0],
            self.momentum[1],
            self.momentum[2],
            l[0],
            l[1],
            l[2],
            self.variance,
            self.centroid[0],
            self.centroid[1],
            self.centroid[2],
            self.grad_norm,
        ];
        vals.iter().map(|v| format!("{v:.16e}")).collect::<Vec<_>>().join(",")
    }
}

pub fn write_records_csv<W: Write>(mut w: W, records: &[InvariantRecord]) -> std::io::Result<()> {
    writeln!(w, "{}", InvariantRecord::CSV_HEADER)?;
    for r in records {
        writeln!(w, "{}", r.csv_row())?;
    }
    Ok(())
}

pub fn charge(psi: &Field) -> f64 {
    psi.values().iter().map(|z| z.norm_sqr()).sum::<f64>() * psi.lattice().cell_volume()
}

pub fn energy(model: &Model, psi: &Field) -> Result<f64> {
    Ok(model.energy_parts(psi)?.total())
}

fn raw_spectrum(plan: &SpectralPlan, psi: &Field) -> Vec<C64> {
    let mut hat = psi.values().to_vec();
    plan.forward_raw(&mut hat);
    hat
}

/// Weight turning Σ|raw ψ̂|² into ∫|ψ̂|²dk/(2π)^d.
fn spectral_weight(lat: &Lattice) -> f64 {
    lat.cell_volume() / lat.len() as f64
}

fn momentum_from_raw(plan: &SpectralPlan, hat: &[C64]) -> [f64; 3] {
    let lat = plan.lattice();
    let mut p = [0.0; 3];
    for (idx, z) in hat.iter().enumerate() {
        let a2 = z.norm_sqr();
        for (a, pa) in p.iter_mut().enumerate().take(lat.d()) {
            *pa += plan.k_deriv(idx, a) * a2;
        }
    }
    let w = spectral_weight(lat);
    p.map(|v| v * w)
}

/// P = −i∫ψ̄∇ψ.
pub fn momentum(plan: &SpectralPlan, psi: &Field) -> [f64; 3] {
    momentum_from_raw(plan, &raw_spectrum(plan, psi))
}

/// ‖∇ψ‖₂ = (∫|k|²|ψ̂|²)^{1/2}.
pub fn grad_norm(plan: &SpectralPlan, psi: &Field) -> f64 {
    grad_norm_from_raw(plan, &raw_spectrum(plan, psi))
}

fn grad_norm_from_raw(plan: &SpectralPlan, hat: &[C64]) -> f64 {
    let s: f64 = hat.iter().zip(plan.k2()).map(|(z, k2)| k2 * z.norm_sqr()).sum();
    (s * spectral_weight(plan.lattice())).sqrt()
}

/// Fraction of ‖ψ̂‖² at wavevectors with some |k_a| beyond ⅔ of the Nyquist wavenumber.
pub fn spectral_tail(plan: &SpectralPlan, psi: &Field) -> f64 {
    let lat = plan.lattice();
    let cut = 2.0 / 3.0 * std::f64::consts::PI / lat.spacing();
    let hat = raw_spectrum(plan, psi);
    let (mut tail, mut total) = (0.0, 0.0);
    for (idx, z) in hat.iter().enumerate() {
        let w = z.norm_sqr();
        total += w;
        if lat.wavevector(idx).iter().any(|k| k.abs() > cut) {
            tail += w;
        }
    }
    if total > 0.0 {
        tail / total
    } else {
        0.0
    }
}

/// ‖f‖₂ + ‖∇f‖₂.
pub fn h1_norm(plan: &SpectralPlan, f: &Field) -> f64 {
    f.norm() + grad_norm(plan, f)
}

/// L = −i∫ψ̄(x×∇)ψ, three dimensions only.
pub fn angular_momentum(plan: &SpectralPlan, psi: &Field) -> Result<[f64; 3]> {
    angular_momentum_from_raw(plan, psi, &raw_spectrum(plan, psi))
}

fn angular_momentum_from_raw(plan: &SpectralPlan, psi: &Field, hat: &[C64]) -> Result<[f64; 3]> {
    let lat = plan.lattice();
    if lat.d() != 3 {
        return Err(Error::Inapplicable(format!("angular momentum needs d = 3, got {}", lat.d())));
    }
    let g = plan.gradient_from_raw(hat);
    let mut l = [C64::new(0.0, 0.0); 3];
    for (i, p) in psi.values().iter().enumerate() {
        let x = lat.position(i);
        let pc = p.conj();
        let (g0, g1, g2) = (g[0].values()[i], g[1].values()[i], g[2].values()[i]);
        l[0] += pc * (x[1] * g2 - x[2] * g1);
        l[1] += pc * (x[2] * g0 - x[0] * g2);
        l[2] += pc * (x[0] * g1 - x[1] * g0);
    }
    let w = lat.cell_volume();
    // −i·z, real part
    Ok(l.map(|z| z.im * w))
}

/// ∫|x|²|ψ|² in plain lattice coordinates.
pub fn variance(psi: &Field) -> f64 {
    let lat = psi.lattice();
    psi.values()
        .iter()
        .enumerate()
        .map(|(i, z)| {
            let x = lat.position(i);
            (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) * z.norm_sqr()
        })
        .sum::<f64>()
        * lat.cell_volume()
}

/// ∫xρ in plain lattice coordinates (unnormalized).
pub fn centroid(psi: &Field) -> [f64; 3] {
    let lat = psi.lattice();
    let mut c = [0.0; 3];
    for (i, z) in psi.values().iter().enumerate() {
        let x = lat.position(i);
        let r = z.norm_sqr();
        for a in 0..lat.d() {
            c[a] += x[a] * r;
        }
    }
    c.map(|v| v * lat.cell_volume())
}

/// Circular mean of ρ per axis; a wrap-safe estimate of the normalized centre.
pub fn periodic_center(lat: &Lattice, rho: &[f64]) -> [f64; 3] {
    let mut s = [C64::new(0.0, 0.0); 3];
    let q = PI / lat.half_width();
    for (i, r) in rho.iter().enumerate() {
        let x = lat.position(i);
        for a in 0..lat.d() {
            s[a] += C64::from_polar(*r, q * x[a]);
        }
    }
    let mut c = [0.0; 3];
    for a in 0..lat.d() {
        c[a] = s[a].arg() / q;
    }
    c
}

/// Unwrapped ∫xρ and boundary-shell mass fraction, both measured relative to `reference`.
pub fn centroid_relative(lat: &Lattice, rho: &[f64], reference: [f64; 3]) -> ([f64; 3], f64) {
    let mut c = [0.0; 3];
    let mut mass = 0.0;
    let mut shell = 0.0;
    let edge = SHELL * lat.half_width();
    for (i, r) in rho.iter().enumerate() {
        let x = lat.position(i);
        let mut outside = false;
        for a in 0..lat.d() {
            let y = lat.min_image(x[a] - reference[a]);
            c[a] += (reference[a] + y) * r;
            outside |= y.abs() > edge;
        }
        mass += r;
        if outside {
            shell += r;
        }
    }
    let w = lat.cell_volume();
    let frac = if mass > 0.0 { shell / mass } else { 0.0 };
    (c.map(|v| v * w), frac)
}

/// Every monitored functional at time `t`; `reference` anchors the centroid unwrapping.
pub fn record(model: &Model, psi: &Field, t: f64, reference: Option<[f64; 3]>) -> Result<InvariantRecord> {
    model.check(psi)?;
    let plan = model.plan();
    let lat = model.lattice();
    let hat = raw_spectrum(plan, psi);
    let parts = model.energy_parts(psi)?;
    let rho = psi.density();
    let charge = rho.iter().sum::<f64>() * lat.cell_volume();
    let reference = reference.unwrap_or_else(|| periodic_center(lat, &rho));
    let (centroid, boundary_mass) = centroid_relative(lat, &rho, reference);
    let angular_momentum = if lat.d() == 3 {
        Some(angular_momentum_from_raw(plan, psi, &hat)?)
    } else {
        None
    };
    let rec = InvariantRecord {
        t,
        charge,
        energy: parts.total(),
        momentum: momentum_from_raw(plan, &hat),
        angular_momentum,
        variance: variance(psi),
        centroid,
        grad_norm: grad_norm_from_raw(plan, &hat),
        kinetic: parts.kinetic,
        interaction: parts.interaction,
        boundary_mass,
    };
    if !(rec.energy.is_finite() && rec.charge.is_finite() && rec.grad_norm.is_finite()) {
        return Err(Error::NonFinite(format!("observables at t = {t}")));
    }
    Ok(rec)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrbitDistance {
    /// ‖ψ − e^{iγ}Q(·−y)‖₂ + ‖∇(ψ − e^{iγ}Q(·−y))‖₂ at the optimum.
    pub distance: f64,
    pub shift: [f64; 3],
    pub phase: f64,
}

/// Correlations c₀(y) = ⟨Q(·−y), ψ⟩ and c₁(y) = ⟨∇Q(·−y), ∇ψ⟩ at a continuous shift.
fn correlations_at(plan: &SpectralPlan, cross0: &[C64], cross1: &[C64], y: [f64; 3]) -> (C64, C64) {
    let lat = plan.lattice();
    let phases = plan.shift_phases(y, 1.0);
    let (mut s0, mut s1) = (C64::new(0.0, 0.0), C64::new(0.0, 0.0));
    for idx in 0..lat.len() {
        let m = lat.multi_index(idx);
        let mut e = phases[0][m[0]];
        for a in 1..lat.d() {
            e *= phases[a][m[a]];
        }
        s0 += cross0[idx] * e;
        s1 += cross1[idx] * e;
    }
    let w = spectral_weight(lat);
    (s0 * w, s1 * w)
}

/// inf over phase γ and shift y of ‖ψ − e^{iγ}Q(·−y)‖ in the H¹ norm ‖·‖₂ + ‖∇·‖₂.
///
/// All lattice shifts are scanned at once through FFT cross-correlation, the best
/// one is refined off-grid by parabolic fits of the squared H¹ surrogate, and γ
/// is taken in closed form as the argument of the combined correlation.
pub fn manifold_distance(plan: &SpectralPlan, psi: &Field, q: &Field) -> Result<OrbitDistance> {
    same_lattice(psi, q)?;
    let lat = *plan.lattice();
    let pa = raw_spectrum(plan, psi);
    let qa = raw_spectrum(plan, q);
    let w = spectral_weight(&lat);
    let a0 = pa.iter().chain(&qa).map(|z| z.norm_sqr()).sum::<f64>() * w;
    let a1 = pa
        .iter()
        .zip(&qa)
        .zip(plan.k2())
        .map(|((p, q), k2)| k2 * (p.norm_sqr() + q.norm_sqr()))
        .sum::<f64>()
        * w;
    let cross0: Vec<C64> = qa.iter().zip(&pa).map(|(q, p)| q.conj() * p).collect();
    let cross1: Vec<C64> = cross0.iter().zip(plan.k2()).map(|(c, k2)| c * k2).collect();

    // direct evaluation of (‖ψ − e^{iγ}Q(·−y)‖₂, ‖∇(ψ − e^{iγ}Q(·−y))‖₂), free of cancellation
    let exact_at = |y: [f64; 3], g: f64| -> (f64, f64) {
        let phases = plan.shift_phases(y, -1.0);
        let (mut l2, mut h1) = (0.0, 0.0);
        let rot = C64::from_polar(1.0, g);
        for idx in 0..lat.len() {
            let m = lat.multi_index(idx);
            let mut e = rot;
            for a in 0..lat.d() {
                e *= phases[a][m[a]];
            }
            let diff = (pa[idx] - e * qa[idx]).norm_sqr();
            l2 += diff;
            h1 += diff * plan.k2()[idx];
        }
        ((l2 * w).sqrt(), (h1 * w).sqrt())
    };

    // lattice scan: inverse DFT of the cross spectra gives c(y) at y = j·h
    let mut s0 = cross0.clone();
    let mut s1 = cross1.clone();
    plan.inverse_raw(&mut s0);
    plan.inverse_raw(&mut s1);
    let surrogate: Vec<f64> = s0
        .iter()
        .zip(&s1)
        .map(|(c0, c1)| a0 + a1 - 2.0 * ((c0 + c1) * w).norm())
        .collect();
    let best = (0..lat.len())
        .min_by(|&i, &j| surrogate[i].total_cmp(&surrogate[j]))
        .unwrap_or(0);
    let h = lat.spacing();
    let bm = lat.multi_index(best);
    let mut yg = [0.0; 3];
    for a in 0..lat.d() {
        yg[a] = lat.freq_index(bm[a]) as f64 * h;
    }

    // ‖·‖₂ + ‖∇·‖₂ is minimized by reweighting: with the norms (L*, H*) of the
    // current iterate frozen, L²/L* + H²/H* is a smooth surrogate whose minimizer
    // over (y, γ) is a stationary point of L + H at the fixed point.
    // The phase is then γ = arg(c₀/L* + c₁/H*).
    let phase_at = |y: [f64; 3], wl: f64, wh: f64| {
        let (c0, c1) = correlations_at(plan, &cross0, &cross1, y);
        c0 * wl + c1 * wh
    };
    let refine = |mut y: [f64; 3], wl: f64, wh: f64, step: f64| -> [f64; 3] {
        let f = |y: [f64; 3]| -phase_at(y, wl, wh).norm();
        let mut steps = [step; 3];
        for _ in 0..60 {
            let mut moved: f64 = 0.0;
            for a in 0..lat.d() {
                let s = steps[a];
                let f0 = f(y);
                let mut yp = y;
                yp[a] += s;
                let mut ym = y;
                ym[a] -= s;
                let (fp, fm) = (f(yp), f(ym));
                let curv = fp - 2.0 * f0 + fm;
                let mut delta = 0.0;
                if curv > 0.0 {
                    delta = (0.5 * s * (fm - fp) / curv).clamp(-s, s);
                    let mut yn = y;
                    yn[a] += delta;
                    if f(yn) <= f0 {
                        y = yn;
                    } else {
                        delta = 0.0;
                    }
                }
                steps[a] = (2.0 * delta.abs()).clamp(1e-6 * h, s);
                moved = moved.max(delta.abs());
            }
            if moved < 1e-10 * h {
                break;
            }
        }
        y
    };
    // fixed-point reweighting of the phase alone at a frozen shift
    let settle = |y: [f64; 3], mut wl: f64, mut wh: f64| -> (f64, f64, f64, f64) {
        let mut g = phase_at(y, wl, wh).arg();
        let (mut l, mut hh) = exact_at(y, g);
        for _ in 0..4 {
            if l <= 0.0 || hh <= 0.0 {
                break;
            }
            (wl, wh) = (1.0 / l, 1.0 / hh);
            let gn = phase_at(y, wl, wh).arg();
            let (ln, hn) = exact_at(y, gn);
            if ln + hn >= l + hh {
                break;
            }
            (g, l, hh) = (gn, ln, hn);
        }
        (g, l, hh, l + hh)
    };

    let mut y = refine(yg, 1.0, 1.0, h);
    let (mut phase, mut l, mut hh, mut distance) = settle(y, 1.0, 1.0);
    for _ in 0..4 {
        if l <= 0.0 || hh <= 0.0 {
            break;
        }
        let yn = refine(y, 1.0 / l, 1.0 / hh, 0.1 * h);
        let (gn, ln, hn, dn) = settle(yn, 1.0 / l, 1.0 / hh);
        if dn >= distance {
            break;
        }
        (y, phase, l, hh, distance) = (yn, gn, ln, hn, dn);
    }
    // the lattice optimum can beat the refinement when the fit is poor
    let (pgrid, _, _, dgrid) = settle(yg, 1.0, 1.0);
    if dgrid < distance {
        return Ok(OrbitDistance { distance: dgrid, shift: yg, phase: pgrid });
    }
    Ok(OrbitDistance { distance, shift: y, phase })
}

#[derive(Clone, Debug)]
pub struct StabilityRun {
    pub log: TrajectoryLog,
    /// d(ψ(t)) = inf ‖ψ(t) − e^{iγ}Q(·−y)‖_{H¹} at every record.
    pub distances: Vec<(f64, f64)>,
    pub sup: f64,
}

/// Evolves `psi0` and measures its distance to the orbit of `q` at every record.
pub fn stability_run(model: &Model, psi0: &Field, q: &Field, cfg: &PropagatorConfig) -> Result<StabilityRun> {
    let mut distances = Vec::new();
    let mut failure = None;
    let log = evolve_observed(model, psi0, cfg, |rec, psi| match manifold_distance(model.plan(), psi, q) {
        Ok(d) => distances.push((rec.t, d.distance)),
        Err(e) => failure = Some(e),
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    let sup = distances.iter().map(|d| d.1).fold(0.0, f64::max);
    Ok(StabilityRun { log, distances, sup })
}

/// sup over records of |⟨x⟩(t) − ⟨x⟩(0) − 2P(0)t| for trap-free runs.
pub fn com_inertia_residual(log: &TrajectoryLog, model: &Model) -> Result<f64> {
    if !model.external().is_zero() {
        return Err(Error::Inapplicable("centroid inertia requires λV = 0".into()));
    }
    let Some(first) = log.records.first() else {
        return Err(Error::InsufficientData("empty trajectory".into()));
    };
    let d = model.lattice().d();
    let mut worst: f64 = 0.0;
    for r in &log.records {
        for a in 0..d {
            let pred = first.centroid[a] + 2.0 * first.momentum[a] * (r.t - first.t);
            worst = worst.max((r.centroid[a] - pred).abs());
        }
    }
    Ok(worst)
}

/// Largest mismatch in V″ = 16H₀ + (4−2σ)·ν∫(|x|^{−σ}∗ρ)ρ for an attractive
/// power-law kernel; records must be equally spaced in time.
///
/// Second differences of the variance are compared with the hat-weighted average
/// (f₋ + 10f₀ + f₊)/12 of the right-hand side, which integrates
/// δ²V = ∫(Δ−|s|)V″(t+s)ds to O(Δ⁴), so the record spacing does not mask the
/// integrator error.
pub fn variance_identity_residual(log: &TrajectoryLog, sigma: f64, h0: f64) -> Result<f64> {
    let rec = &log.records;
    if rec.len() < 5 {
        return Err(Error::InsufficientData(format!("{} records, need at least 5", rec.len())));
    }
    let dt = rec[1].t - rec[0].t;
    // interaction energy is −¼ν∫(|x|^{−σ}∗ρ)ρ for the attractive kernel
    let rhs = |r: &InvariantRecord| 16.0 * h0 + (4.0 - 2.0 * sigma) * (-4.0 * r.interaction);
    let mut worst: f64 = 0.0;
    for i in 1..rec.len() - 1 {
        let (a, b) = (rec[i].t - rec[i - 1].t, rec[i + 1].t - rec[i].t);
        if (a - dt).abs() > 1e-9 * dt || (b - dt).abs() > 1e-9 * dt {
            return Err(Error::InsufficientData("records are not equally spaced".into()));
        }
        let second = (rec[i + 1].variance - 2.0 * rec[i].variance + rec[i - 1].variance) / (dt * dt);
        let avg = (rhs(&rec[i - 1]) + 10.0 * rhs(&rec[i]) + rhs(&rec[i + 1])) / 12.0;
        worst = worst.max((second - avg).abs());
    }
    Ok(worst)
}

/// Least-squares polynomial coefficients c₀ + c₁t + c₂t² + …
pub fn polynomial_fit(t: &[f64], y: &[f64], degree: usize) -> Result<Vec<f64>> {
    if t.len() != y.len() || t.len() <= degree {
        return Err(Error::InsufficientData(format!("{} points for degree {degree}", t.len())));
    }
    // centre and scale t for conditioning, then map back
    let t0 = t.iter().sum::<f64>() / t.len() as f64;
    let s = t.iter().map(|v| (v - t0).abs()).fold(0.0, f64::max).max(1e-300);
    let a = DMatrix::from_fn(t.len(), degree + 1, |i, j| ((t[i] - t0) / s).powi(j as i32));
    let b = DVector::from_column_slice(y);
    let svd = a.svd(true, true);
    let c = svd
        .solve(&b, 1e-14)
        .map_err(|e| Error::NoConvergence(format!("polynomial fit: {e}")))?;
    // expand Σ c_j ((t − t0)/s)^j in powers of t
    let mut out = vec![0.0; degree + 1];
    for (j, cj) in c.iter().enumerate() {
        let f = cj / s.powi(j as i32);
        for k in 0..=j {
            out[k] += f * binomial(j, k) * (-t0).powi((j - k) as i32);
        }
    }
    Ok(out)
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::{ExternalKind, ExternalPotential, Sign, TwoBodyPotential};
    use crate::propagator::boost;
    use crate::quadrature::Composite;

    fn free_model(d: usize, n: usize, l: f64) -> Model {
        Model::nonrelativistic(Lattice::new(d, n, l).unwrap(), ExternalPotential::zero(), TwoBodyPotential::none())
            .unwrap()
    }

    fn gauss(lat: Lattice, a: f64, x0: [f64; 3]) -> Field {
        Field::from_fn(lat, |x| {
            let r2: f64 = (0..3).map(|i| (x[i] - x0[i]).powi(2)).sum();
            C64::new((-a * r2).exp(), 0.0)
        })
        .unwrap()
    }

    #[test]
    fn charge_examples() {
        let lat = Lattice::new(3, 32, 8.0).unwrap();
        assert_eq!(charge(&Field::zeros(lat)), 0.0);
        let c = Field::from_fn(lat, |_| C64::new(1.0 / lat.volume().sqrt(), 0.0)).unwrap();
        assert!((charge(&c) - 1.0).abs() < 1e-12);
        assert!((charge(&gauss(lat, 0.5, [0.0; 3])) - PI.powf(1.5)).abs() < 1e-10);
    }

    #[test]
    fn plane_wave_energy() {
        let m = free_model(2, 16, 3.0);
        let lat = *m.lattice();
        let k0 = lat.wavevector(lat.flat_index([3, 14, 0]));
        let f = Field::from_fn(lat, |x| C64::from_polar(1.0 / lat.volume().sqrt(), k0[0] * x[0] + k0[1] * x[1]))
            .unwrap();
        let e = energy(&m, &f).unwrap();
        assert!((e - 0.5 * (k0[0] * k0[0] + k0[1] * k0[1])).abs() < 1e-10);
        assert_eq!(energy(&m, &Field::zeros(lat)).unwrap(), 0.0);
    }

    #[test]
    fn harmonic_gaussian_energy_against_quadrature() {
        // ψ = e^{-a r²}, d=1: ½∫ψ'² + ½λ∫x²ψ², by independent Gauss–Legendre quadrature
        let lat = Lattice::new(1, 128, 10.0).unwrap();
        let lam = 0.7;
        let m = Model::nonrelativistic(
            lat,
            ExternalPotential::new(ExternalKind::Harmonic, lam).unwrap(),
            TwoBodyPotential::none(),
        )
        .unwrap();
        let a = 0.6;
        let psi = gauss(lat, a, [0.0; 3]);
        let rule = Composite::new(-10.0, 10.0, 40, 16);
        let oracle = rule.integrate(|x| {
            let g = (-a * x * x).exp();
            let dg = -2.0 * a * x * g;
            0.5 * dg * dg + 0.5 * lam * x * x * g * g
        });
        assert!((energy(&m, &psi).unwrap() - oracle).abs() < 1e-9);
    }

    #[test]
    fn momentum_examples() {
        let m = free_model(3, 32, 8.0);
        let lat = *m.lattice();
        let g = gauss(lat, 0.5, [0.0; 3]);
        assert!(momentum(m.plan(), &g).iter().all(|p| p.abs() < 1e-14));
        let k0 = [PI / 8.0 * 3.0, -PI / 8.0, 0.0];
        let norm = charge(&g).sqrt();
        let f = Field::from_fn(lat, |x| {
            let r2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
            C64::from_polar((-0.5 * r2).exp() / norm, k0[0] * x[0] + k0[1] * x[1])
        })
        .unwrap();
        let p = momentum(m.plan(), &f);
        for a in 0..3 {
            assert!((p[a] - k0[a]).abs() < 1e-10);
        }
        // global phase leaves P untouched
        let q = momentum(m.plan(), &f.scaled(C64::from_polar(1.0, 0.7)));
        for a in 0..3 {
            assert!((p[a] - q[a]).abs() < 1e-14);
        }
    }

    #[test]
    fn angular_momentum_examples() {
        let m = free_model(3, 32, 8.0);
        let lat = *m.lattice();
        let g = gauss(lat, 0.5, [0.0; 3]);
        assert!(angular_momentum(m.plan(), &g).unwrap().iter().all(|l| l.abs() < 1e-12));
        let vortex = Field::from_fn(lat, |x| {
            let r2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
            C64::new(x[0], x[1]) * (-0.5 * r2).exp()
        })
        .unwrap();
        let l = angular_momentum(m.plan(), &vortex).unwrap();
        assert!((l[2] - charge(&vortex)).abs() < 1e-9);
        assert!(l[0].abs() < 1e-12 && l[1].abs() < 1e-12);
        // boost along an axis through the origin carries no angular momentum
        let b = boost(m.plan(), &g, [PI / 4.0, 0.0, 0.0], [0.0; 3], 0.0).unwrap();
        assert!(angular_momentum(m.plan(), &b).unwrap().iter().all(|l| l.abs() < 1e-10));
        assert!(angular_momentum(free_model(2, 8, 1.0).plan(), &Field::zeros(Lattice::new(2, 8, 1.0).unwrap()))
            .is_err());
    }

    #[test]
    fn moments() {
        let lat = Lattice::new(3, 32, 8.0).unwrap();
        let g = gauss(lat, 0.5, [0.0; 3]);
        assert!(centroid(&g).iter().all(|c| c.abs() < 1e-12));
        let x0 = [1.0, -0.5, 0.25];
        let s = gauss(lat, 0.5, x0);
        let c = centroid(&s);
        let n = charge(&s);
        for a in 0..3 {
            assert!((c[a] - x0[a] * n).abs() < 1e-8);
        }
        // e^{-r²}: ψ² = e^{-2r²}, ∫r² e^{-2r²} = (3/4)·(π/2)^{3/2}
        let lat = Lattice::new(3, 64, 8.0).unwrap();
        let v = variance(&gauss(lat, 1.0, [0.0; 3]));
        assert!((v - 0.75 * (PI / 2.0).powf(1.5)).abs() < 1e-10);
    }

    #[test]
    fn unwrapped_centroid_across_boundary() {
        let lat = Lattice::new(1, 64, 8.0).unwrap();
        let psi = gauss(lat, 2.0, [7.9, 0.0, 0.0]);
        // the image at −8.1 contributes too; a shifted reference reads the bump whole
        let psi = psi.add_scaled(C64::new(1.0, 0.0), &gauss(lat, 2.0, [-8.1, 0.0, 0.0])).unwrap();
        let rho = psi.density();
        let c = periodic_center(&lat, &rho);
        assert!((lat.min_image(c[0] - 7.9)).abs() < 1e-8);
        let (m, shell) = centroid_relative(&lat, &rho, [7.9, 0.0, 0.0]);
        assert!((m[0] / charge(&psi) - 7.9).abs() < 1e-8);
        assert!(shell < 1e-12);
        let (_, shell0) = centroid_relative(&lat, &rho, [0.0; 3]);
        assert!(shell0 > 0.5);
    }

    fn soliton_like(lat: Lattice) -> Field {
        Field::from_fn(lat, |x| {
            let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
            C64::new(r.cosh().powi(-4), 0.0)
        })
        .unwrap()
    }

    #[test]
    fn manifold_distance_on_orbit_is_zero() {
        let m = free_model(2, 64, 8.0);
        let lat = *m.lattice();
        let q = soliton_like(lat);
        assert!(manifold_distance(m.plan(), &q, &q).unwrap().distance < 1e-10);
        let h = lat.spacing();
        let moved = boost(m.plan(), &q, [0.0; 3], [3.0 * h, -5.0 * h, 0.0], 1.1).unwrap();
        let r = manifold_distance(m.plan(), &moved, &q).unwrap();
        assert!(r.distance < 1e-10);
        assert!((r.shift[0] - 3.0 * h).abs() < 1e-8 && (r.shift[1] + 5.0 * h).abs() < 1e-8);
        assert!((C64::from_polar(1.0, r.phase) - C64::from_polar(1.0, 1.1)).norm() < 1e-8);
        // an off-grid shift is found by the refinement
        let off = boost(m.plan(), &q, [0.0; 3], [0.37 * h, 1.61 * h, 0.0], 0.0).unwrap();
        let od = manifold_distance(m.plan(), &off, &q).unwrap();
        assert!(od.distance < 1e-6, "{od:?} {}", h);
    }

    #[test]
    fn manifold_distance_of_small_bump_matches_scan() {
        let m = free_model(1, 64, 8.0);
        let lat = *m.lattice();
        let plan = m.plan();
        let q = soliton_like(lat);
        // bump orthogonal to Q
        let b0 = Field::from_fn(lat, |x| C64::new(x[0] * (-(x[0] - 0.5).powi(2)).exp(), 0.0)).unwrap();
        let proj = q.inner(&b0).unwrap() / q.inner(&q).unwrap();
        let b = b0.add_scaled(-proj, &q).unwrap();
        let b = b.scaled(C64::new(1.0 / b.norm(), 0.0));
        let psi = q.add_scaled(C64::new(0.01, 0.0), &b).unwrap();
        let d = manifold_distance(plan, &psi, &q).unwrap().distance;
        // brute-force scan over shifts and phases
        let mut best = f64::INFINITY;
        for iy in -40..=40 {
            let y = iy as f64 * 0.002;
            for ig in -20..=20 {
                let g = ig as f64 * 0.0005;
                let cand = boost(plan, &q, [0.0; 3], [y, 0.0, 0.0], g).unwrap();
                best = best.min(h1_norm(plan, &psi.sub(&cand).unwrap()));
            }
        }
        assert!(d <= best + 1e-6, "{d} vs {best}");
        assert!(d > 1e-4);
        assert!(d > 0.9 * best, "{d} vs {best}");
    }

    #[test]
    fn poly_fit_recovers_quadratic() {
        let t: Vec<f64> = (0..20).map(|i| 3.0 + 0.1 * i as f64).collect();
        let y: Vec<f64> = t.iter().map(|t| 1.5 - 2.0 * t + 0.25 * t * t).collect();
        let c = polynomial_fit(&t, &y, 2).unwrap();
        assert!((c[0] - 1.5).abs() < 1e-9 && (c[1] + 2.0).abs() < 1e-9 && (c[2] - 0.25).abs() < 1e-10);
    }

    #[test]
    fn csv_row_shape() {
        let m = Model::nonrelativistic(
            Lattice::new(3, 16, 4.0).unwrap(),
            ExternalPotential::zero(),
            TwoBodyPotential::power_law(1.0, Sign::Attractive, 1.0).unwrap(),
        )
        .unwrap();
        let psi = gauss(*m.lattice(), 1.0, [0.0; 3]);
        let r = record(&m, &psi, 0.0, None).unwrap();
        assert_eq!(r.csv_row().split(',').count(), 14);
        assert!(r.interaction < 0.0);
    }
}
