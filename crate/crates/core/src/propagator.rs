//! Strang-split spectral time stepping with invariant logging and blow-up detection.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, SpectralPlan};
use crate::model::Model;
use crate::observables::{record, spectral_tail, InvariantRecord};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropagatorConfig {
    pub dt: f64,
    pub t_end: f64,
    /// Steps between invariant records.
    pub record_every: usize,
    /// Steps between field snapshots, if any.
    pub snapshot_every: Option<usize>,
    /// Blow-up is declared once ‖∇ψ‖ exceeds this multiple of its initial value.
    pub blowup_gradnorm_factor: f64,
    /// Blow-up is also declared once ‖∇ψ‖ has more than doubled and this fraction
    /// of ‖ψ̂‖² sits beyond ⅔ of the Nyquist wavenumber: the collapse has reached
    /// the grid scale, where ‖∇ψ‖ saturates instead of diverging.
    pub blowup_tail_fraction: f64,
    /// Adaptive halving never goes below this step.
    pub dt_floor: f64,
    pub adaptive: bool,
}

impl Default for PropagatorConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_end: 1.0,
            record_every: 10,
            snapshot_every: None,
            blowup_gradnorm_factor: 1e3,
            blowup_tail_fraction: 1e-2,
            dt_floor: 1e-7,
            adaptive: false,
        }
    }
}

impl PropagatorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.dt > 0.0) {
            return bad(format!("dt = {} must be positive", self.dt));
        }
        if !(self.t_end > 0.0) {
            return bad(format!("t_end = {} must be positive", self.t_end));
        }
        if self.record_every == 0 || self.snapshot_every == Some(0) {
            return bad("record/snapshot cadence must be at least one step".into());
        }
        if !(self.blowup_gradnorm_factor > 1.0) {
            return bad(format!("blow-up factor {} must exceed 1", self.blowup_gradnorm_factor));
        }
        if !(self.blowup_tail_fraction > 0.0 && self.blowup_tail_fraction <= 1.0) {
            return bad(format!("tail fraction {} must lie in (0, 1]", self.blowup_tail_fraction));
        }
        if !(self.dt_floor > 0.0 && self.dt_floor <= self.dt) {
            return bad(format!("dt_floor = {} must lie in (0, dt]", self.dt_floor));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Completed,
    BlowupDetected { t: f64 },
    Aborted { t: f64, reason: String },
}

#[derive(Clone, Debug)]
pub struct TrajectoryLog {
    pub records: Vec<InvariantRecord>,
    pub snapshots: Vec<(f64, Field)>,
    pub outcome: Outcome,
    /// Step in use when the run ended (differs from the configured one after halving).
    pub dt_final: f64,
}

impl TrajectoryLog {
    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.t).collect()
    }

    pub fn max_charge_drift(&self) -> f64 {
        let n0 = self.records[0].charge;
        self.records.iter().map(|r| (r.charge - n0).abs() / n0).fold(0.0, f64::max)
    }

    pub fn max_energy_drift(&self) -> f64 {
        let e0 = self.records[0].energy;
        let scale = e0.abs().max(f64::MIN_POSITIVE);
        self.records.iter().map(|r| (r.energy - e0).abs() / scale).fold(0.0, f64::max)
    }

    pub fn max_momentum(&self) -> f64 {
        self.records
            .iter()
            .flat_map(|r| r.momentum.iter().map(|p| p.abs()))
            .fold(0.0, f64::max)
    }
}

/// Precomputed Fourier phases e^{−iT(k)τ}/n^d.
struct KineticPhase {
    tau: f64,
    phase: Vec<C64>,
}

impl KineticPhase {
    fn new(model: &Model, tau: f64) -> Self {
        let s = 1.0 / model.lattice().len() as f64;
        let phase = model.t_k().iter().map(|t| C64::from_polar(s, -t * tau)).collect();
        Self { tau, phase }
    }

    fn apply(&self, plan: &SpectralPlan, v: &mut [C64]) {
        plan.forward_raw(v);
        for (z, p) in v.iter_mut().zip(&self.phase) {
            *z *= p;
        }
        plan.inverse_raw(v);
    }
}

fn potential_substep(model: &Model, v: &mut [C64], tau: f64) -> Result<()> {
    if model.twobody().is_interacting() {
        let rho: Vec<f64> = v.iter().map(|z| z.norm_sqr()).collect();
        let u = model.mean_field(&rho)?;
        for ((z, ui), vi) in v.iter_mut().zip(&u).zip(model.v()) {
            *z *= cis(-(ui + vi) * tau);
        }
    } else {
        for (z, vi) in v.iter_mut().zip(model.v()) {
            *z *= cis(-vi * tau);
        }
    }
    Ok(())
}

/// e^{iθ}; Taylor series for the small angles of a typical substep, libm otherwise.
#[inline]
pub(crate) fn cis(theta: f64) -> C64 {
    if theta.abs() > 0.5 {
        return C64::from_polar(1.0, theta);
    }
    // truncation error below 0.5^18/18! ≈ 6e-22
    let t2 = theta * theta;
    let mut c = 1.0;
    let mut s = 1.0;
    for k in (1..=8).rev() {
        let kf = k as f64;
        c = 1.0 - t2 / ((2.0 * kf - 1.0) * (2.0 * kf)) * c;
        s = 1.0 - t2 / ((2.0 * kf) * (2.0 * kf + 1.0)) * s;
    }
    C64::new(c, theta * s)
}

fn check_finite(v: &[C64]) -> Result<()> {
    if v.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
        return Err(Error::NonFinite("propagation produced NaN/Inf".into()));
    }
    Ok(())
}

/// One Strang step: half kinetic, full potential (exact, |ψ| is frozen), half kinetic.
pub fn step(model: &Model, psi: &Field, dt: f64) -> Result<Field> {
    model.check(psi)?;
    let half = KineticPhase::new(model, dt / 2.0);
    let mut v = psi.values().to_vec();
    half.apply(model.plan(), &mut v);
    potential_substep(model, &mut v, dt)?;
    half.apply(model.plan(), &mut v);
    check_finite(&v)?;
    Ok(Field::from_raw(*model.lattice(), v))
}

/// `steps` Strang steps with the interior half-kinetic pairs fused.
fn advance(model: &Model, v: &mut [C64], steps: usize, half: &KineticPhase, full: &KineticPhase) -> Result<()> {
    debug_assert!((full.tau - 2.0 * half.tau).abs() < 1e-15 * full.tau.max(1.0));
    let plan = model.plan();
    half.apply(plan, v);
    for j in 0..steps {
        potential_substep(model, v, full.tau)?;
        if j + 1 < steps {
            full.apply(plan, v);
        } else {
            half.apply(plan, v);
        }
    }
    check_finite(v)
}

pub fn evolve(model: &Model, psi0: &Field, cfg: &PropagatorConfig) -> Result<TrajectoryLog> {
    evolve_observed(model, psi0, cfg, |_, _| {})
}

/// Like [`evolve`], calling `observer` with every record and the field at that time.
pub fn evolve_observed(
    model: &Model,
    psi0: &Field,
    cfg: &PropagatorConfig,
    mut observer: impl FnMut(&InvariantRecord, &Field),
) -> Result<TrajectoryLog> {
    cfg.validate()?;
    model.check(psi0)?;
    let lat = *model.lattice();
    let first = record(model, psi0, 0.0, None)?;
    if !(first.charge > 0.0) {
        return Err(Error::InvalidParameter("initial datum has zero charge".into()));
    }
    observer(&first, psi0);
    let g0 = first.grad_norm.max(f64::MIN_POSITIVE);
    let mut log = TrajectoryLog {
        records: vec![first],
        snapshots: Vec::new(),
        outcome: Outcome::Completed,
        dt_final: cfg.dt,
    };
    if cfg.snapshot_every.is_some() {
        log.snapshots.push((0.0, psi0.clone()));
    }

    let mut dt = cfg.dt;
    let mut half = KineticPhase::new(model, dt / 2.0);
    let mut full = KineticPhase::new(model, dt);
    let mut v = psi0.values().to_vec();
    let mut t = 0.0;
    // steps since the last record / snapshot
    let (mut since_rec, mut since_snap) = (0usize, 0usize);
    let mut jumps: Vec<f64> = Vec::new();
    let mut last_energy = log.records[0].energy;

    loop {
        let remaining = ((cfg.t_end - t) / dt - 1e-9).ceil().max(0.0) as usize;
        if remaining == 0 {
            break;
        }
        let to_rec = cfg.record_every - since_rec;
        let to_snap = cfg.snapshot_every.map_or(usize::MAX, |s| s - since_snap);
        let steps = remaining.min(to_rec).min(to_snap);
        if let Err(e) = advance(model, &mut v, steps, &half, &full) {
            log.outcome = Outcome::Aborted { t, reason: e.to_string() };
            break;
        }
        t += steps as f64 * dt;
        since_rec += steps;
        since_snap += steps;
        let at_end = steps == remaining;
        let psi = Field::from_raw(lat, v.clone());

        if since_snap == cfg.snapshot_every.unwrap_or(0) {
            log.snapshots.push((t, psi.clone()));
            since_snap = 0;
        }
        if since_rec == cfg.record_every || at_end {
            let reference = log.records.last().map(|r| r.position());
            let rec = match record(model, &psi, t, reference) {
                Ok(r) => r,
                Err(e) => {
                    log.outcome = Outcome::Aborted { t, reason: e.to_string() };
                    break;
                }
            };
            let steps_in_interval = since_rec.max(1) as f64;
            since_rec = 0;
            let growth = rec.grad_norm / g0;
            let jump = (rec.energy - last_energy).abs() / steps_in_interval;
            last_energy = rec.energy;
            observer(&rec, &psi);
            log.records.push(rec);
            if growth > cfg.blowup_gradnorm_factor
                || (growth > 2.0 && spectral_tail(model.plan(), &psi) > cfg.blowup_tail_fraction)
            {
                log.outcome = Outcome::BlowupDetected { t };
                break;
            }
            if cfg.adaptive {
                let median = running_median(&jumps);
                jumps.push(jump);
                let floor = 1e-14 * last_energy.abs().max(1e-300);
                if jumps.len() > 3 && jump > 10.0 * median.max(floor) {
                    if dt / 2.0 >= cfg.dt_floor {
                        dt /= 2.0;
                        half = KineticPhase::new(model, dt / 2.0);
                        full = KineticPhase::new(model, dt);
                        log.dt_final = dt;
                    } else if growth > 2.0 {
                        log.outcome = Outcome::BlowupDetected { t };
                        break;
                    }
                }
            }
        }
        if at_end {
            break;
        }
    }
    Ok(log)
}

fn running_median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s[s.len() / 2]
}

/// e^{i(½v·(x−d)+γ)}ψ(x−d); the translation is spectral, the phase uses the
/// minimum image of x−d so it is continuous across the bulk of a localized ψ.
pub fn boost(plan: &SpectralPlan, psi: &Field, v: [f64; 3], dshift: [f64; 3], gamma: f64) -> Result<Field> {
    let lat = *plan.lattice();
    if *psi.lattice() != lat {
        return Err(Error::LatticeMismatch);
    }
    let mut out = psi.values().to_vec();
    if dshift.iter().any(|&s| s != 0.0) {
        let phases = plan.shift_phases(dshift, -1.0);
        plan.apply_multiplier(&mut out, |idx| {
            let m = lat.multi_index(idx);
            let mut e = C64::new(1.0, 0.0);
            for a in 0..lat.d() {
                e *= phases[a][m[a]];
            }
            e
        });
    }
    if v.iter().any(|&c| c != 0.0) || gamma != 0.0 {
        for (i, z) in out.iter_mut().enumerate() {
            let x = lat.position(i);
            let mut arg = gamma;
            for a in 0..lat.d() {
                arg += 0.5 * v[a] * lat.min_image(x[a] - dshift[a]);
            }
            *z *= C64::from_polar(1.0, arg);
        }
    }
    Field::new(lat, out)
}
