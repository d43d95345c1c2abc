//! Point-particle limit: well-separated solitons in slowly varying potentials
//! against the Newton equations of their centres, and the exact orbit of a
//! soliton in a harmonic trap.
//!
//! Units follow the rest of the crate (boson mass ½, boost phase ½v·x), so a
//! body of charge N at q with velocity v obeys
//!
//! ```text
//! ½ q̈_j = −λε(∇W)(εq_j) − Σ_{i≠j} N_i ∇U(q_j − q_i),   U(x) = ν_ℓ Φ_ℓ(ε|x|),
//! ```
//!
//! with reduced energy Σ_j [¼N_j|v_j|² + λN_j W(εq_j)] + Σ_{i<j} N_iN_j U(q_i − q_j).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, Lattice};
use crate::ground_state::{minimize, GroundState, MinimizeConfig};
use crate::model::Model;
use crate::observables::{charge, periodic_center};
use crate::potentials::{ExternalKind, ExternalPotential, Sign, TwoBodyKind, TwoBodyPotential};
use crate::propagator::{boost, evolve_observed, Outcome, PropagatorConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolitonBody {
    pub charge: f64,
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    #[serde(default)]
    pub phase: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NewtonConfig {
    pub eps: f64,
    /// Profile W; the lattice sees λW(εx).
    pub external: ExternalKind,
    pub lambda: f64,
    /// Φ_s with its coupling.
    pub short: TwoBodyPotential,
    /// Φ_ℓ with its coupling; the lattice sees Φ_ℓ(εx).
    pub long: TwoBodyPotential,
    pub bodies: Vec<SolitonBody>,
    pub horizon: f64,
    /// Upper bound on L_sol/L_ext.
    #[serde(default = "default_scale_ratio")]
    pub max_scale_ratio: f64,
    /// Pair distance below which the reference flags a close encounter.
    #[serde(default)]
    pub softening: f64,
}

fn default_scale_ratio() -> f64 {
    0.1
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

impl NewtonConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.eps > 0.0) {
            return bad(format!("ε = {} must be positive", self.eps));
        }
        if self.bodies.is_empty() {
            return bad("at least one body is required".into());
        }
        if let Some(b) = self.bodies.iter().find(|b| !(b.charge > 0.0)) {
            return bad(format!("body charge {} must be positive", b.charge));
        }
        if !(self.horizon > 0.0) {
            return bad(format!("horizon {} must be positive", self.horizon));
        }
        if !(self.max_scale_ratio > 0.0) || !(self.softening >= 0.0) {
            return bad("scale ratio must be positive and softening nonnegative".into());
        }
        if !self.short.is_attractive() {
            return bad("Φ_s must be attractive".into());
        }
        self.short.validate()?;
        self.long.validate()?;
        if self.long.is_interacting() && matches!(self.long.kind, TwoBodyKind::Delta | TwoBodyKind::Composite { .. }) {
            return bad("Φ_ℓ must be a pointwise kernel".into());
        }
        ExternalPotential::new(self.external.clone(), self.lambda)?;
        Ok(())
    }

    /// λW(εx) as an external potential.
    pub fn external_potential(&self) -> Result<ExternalPotential> {
        let kind = ExternalKind::SlowlyVarying { base: Box::new(self.external.clone()), eps: self.eps };
        ExternalPotential::new(kind, self.lambda)
    }

    /// Φ_s(x) + Φ_ℓ(εx) with the component couplings as weights.
    pub fn twobody(&self) -> Result<TwoBodyPotential> {
        if !self.long.is_interacting() {
            return Ok(self.short.clone());
        }
        let long = TwoBodyPotential { nu: self.long.nu, ..self.long.clone() };
        let kind = TwoBodyKind::Composite { short: Box::new(self.short.clone()), long: Box::new(long), eps: self.eps };
        TwoBodyPotential::new(kind, Sign::Repulsive, 1.0)
    }

    /// The full model on `lat`.
    pub fn model(&self, lat: Lattice) -> Result<Model> {
        Model::nonrelativistic(lat, self.external_potential()?, self.twobody()?)
    }

    /// Φ_s alone, no external potential: the model the bodies' ground states solve.
    pub fn short_model(&self, lat: Lattice) -> Result<Model> {
        Model::nonrelativistic(lat, ExternalPotential::zero(), self.short.clone())
    }

    fn pair_gradient(&self, x: [f64; 3]) -> [f64; 3] {
        let r = dist(x, [0.0; 3]);
        if r == 0.0 || !self.long.is_interacting() {
            return [0.0; 3];
        }
        let g = self.long.nu * self.eps * self.long.eval_derivative(self.eps * r).unwrap_or(0.0) / r;
        [g * x[0], g * x[1], g * x[2]]
    }

    fn pair_energy(&self, r: f64) -> f64 {
        if !self.long.is_interacting() {
            return 0.0;
        }
        self.long.nu * self.long.eval(self.eps * r).unwrap_or(0.0)
    }

    /// q̈_j for every body.
    fn accelerations(&self, q: &[[f64; 3]]) -> Vec<[f64; 3]> {
        let slow = ExternalKind::SlowlyVarying { base: Box::new(self.external.clone()), eps: self.eps };
        (0..q.len())
            .map(|j| {
                let gw = slow.gradient(q[j]);
                let mut f = [-self.lambda * gw[0], -self.lambda * gw[1], -self.lambda * gw[2]];
                for (i, b) in self.bodies.iter().enumerate() {
                    if i == j {
                        continue;
                    }
                    let g = self.pair_gradient([q[j][0] - q[i][0], q[j][1] - q[i][1], q[j][2] - q[i][2]]);
                    for a in 0..3 {
                        f[a] -= b.charge * g[a];
                    }
                }
                [2.0 * f[0], 2.0 * f[1], 2.0 * f[2]]
            })
            .collect()
    }

    pub fn reduced_energy(&self, q: &[[f64; 3]], v: &[[f64; 3]]) -> f64 {
        let slow = ExternalKind::SlowlyVarying { base: Box::new(self.external.clone()), eps: self.eps };
        let mut e = 0.0;
        for (j, b) in self.bodies.iter().enumerate() {
            let v2 = v[j][0] * v[j][0] + v[j][1] * v[j][1] + v[j][2] * v[j][2];
            e += 0.25 * b.charge * v2 + self.lambda * b.charge * slow.eval(q[j]);
            for i in 0..j {
                e += self.bodies[i].charge * b.charge * self.pair_energy(dist(q[i], q[j]));
            }
        }
        e
    }

    /// Σ_j ½N_j v_j.
    pub fn reduced_momentum(&self, v: &[[f64; 3]]) -> [f64; 3] {
        let mut p = [0.0; 3];
        for (b, vj) in self.bodies.iter().zip(v) {
            for a in 0..3 {
                p[a] += 0.5 * b.charge * vj[a];
            }
        }
        p
    }

    pub fn min_separation(&self) -> f64 {
        let mut m = f64::INFINITY;
        for (j, b) in self.bodies.iter().enumerate() {
            for c in &self.bodies[..j] {
                m = m.min(dist(b.position, c.position));
            }
        }
        m
    }
}

/// Characteristic lengths of a prepared configuration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Scales {
    /// max_j ω_j^{−1/2}
    pub l_sol: f64,
    /// 1/(ε sup|∇W|), the supremum taken over the lattice's image under x ↦ εx.
    pub l_ext: f64,
    pub ratio: f64,
    pub min_separation: f64,
}

/// Ground states of Φ_s for every distinct body charge.
pub fn prepare_ground_states(cfg: &NewtonConfig, lat: Lattice, mcfg: &MinimizeConfig) -> Result<Vec<GroundState>> {
    cfg.validate()?;
    let model = cfg.short_model(lat)?;
    let mut cache: BTreeMap<u64, GroundState> = BTreeMap::new();
    let mut out = Vec::with_capacity(cfg.bodies.len());
    for b in &cfg.bodies {
        let key = b.charge.to_bits();
        if !cache.contains_key(&key) {
            cache.insert(key, minimize(&model, b.charge, mcfg)?);
        }
        out.push(cache[&key].clone());
    }
    Ok(out)
}

/// L_sol, L_ext and the separation condition εD ≥ L_sol.
pub fn check_scales(cfg: &NewtonConfig, lat: &Lattice, gs: &[GroundState]) -> Result<Scales> {
    if gs.len() != cfg.bodies.len() {
        return Err(Error::InvalidParameter(format!("{} ground states for {} bodies", gs.len(), cfg.bodies.len())));
    }
    let l_sol = gs
        .iter()
        .map(|g| if g.omega > 0.0 { g.omega.powf(-0.5) } else { f64::INFINITY })
        .fold(0.0, f64::max);
    if !l_sol.is_finite() {
        return Err(Error::NoGroundState("a body has ω ≤ 0, no soliton length".into()));
    }
    let sup = (0..lat.len())
        .map(|i| {
            let x = lat.position(i);
            let g = cfg.external.gradient([cfg.eps * x[0], cfg.eps * x[1], cfg.eps * x[2]]);
            (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt()
        })
        .fold(0.0, f64::max)
        * cfg.lambda;
    let l_ext = if sup > 0.0 { 1.0 / (cfg.eps * sup) } else { f64::INFINITY };
    let ratio = l_sol / l_ext;
    if ratio >= cfg.max_scale_ratio {
        return Err(Error::InvalidParameter(format!(
            "L_sol/L_ext = {ratio:.3e} is not below {}",
            cfg.max_scale_ratio
        )));
    }
    let min_separation = cfg.min_separation();
    if cfg.bodies.len() > 1 && cfg.eps * min_separation < l_sol {
        return Err(Error::InvalidParameter(format!(
            "bodies too close: ε·min|qᵢ−qⱼ| = {:.3e} < L_sol = {l_sol:.3e}",
            cfg.eps * min_separation
        )));
    }
    Ok(Scales { l_sol, l_ext, ratio, min_separation })
}

/// Σ_j boost(Q_{N_j}, v_j, q_j, γ_j) without the overlap check.
pub fn superpose(cfg: &NewtonConfig, model: &Model, gs: &[GroundState]) -> Result<Field> {
    if gs.len() != cfg.bodies.len() {
        return Err(Error::InvalidParameter(format!("{} ground states for {} bodies", gs.len(), cfg.bodies.len())));
    }
    let lat = *model.lattice();
    let mut psi = Field::zeros(lat);
    for (b, g) in cfg.bodies.iter().zip(gs) {
        if *g.q.lattice() != lat {
            return Err(Error::LatticeMismatch);
        }
        // free-space ground states sit wherever the descent left them
        let c = periodic_center(&lat, &g.q.density());
        let centred = boost(model.plan(), &g.q, [0.0; 3], [-c[0], -c[1], -c[2]], 0.0)?;
        let one = boost(model.plan(), &centred, b.velocity, b.position, b.phase)?;
        psi = psi.add_scaled(num_complex::Complex64::new(1.0, 0.0), &one)?;
    }
    Ok(psi)
}

/// [`superpose`], refused when the bodies overlap: the charge must equal ΣN_j to 1e−8.
pub fn build_initial(cfg: &NewtonConfig, model: &Model, gs: &[GroundState]) -> Result<Field> {
    let psi = superpose(cfg, model, gs)?;
    let want: f64 = gs.iter().map(|g| g.charge).sum();
    let got = charge(&psi);
    if (got - want).abs() > 1e-8 * want {
        return Err(Error::InvalidParameter(format!(
            "bodies overlap: charge {got:.12} differs from ΣN_j = {want:.12}"
        )));
    }
    Ok(psi)
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct Tracked {
    pub times: Vec<f64>,
    /// centres[frame][body]
    pub centers: Vec<Vec<[f64; 3]>>,
    pub masses: Vec<Vec<f64>>,
    /// Set once two windows overlapped.
    pub ambiguous: bool,
}

impl Tracked {
    /// Largest relative change of a windowed mass from its first value.
    pub fn max_mass_drift(&self) -> f64 {
        let Some(first) = self.masses.first() else { return 0.0 };
        self.masses
            .iter()
            .flat_map(|m| m.iter().zip(first).map(|(a, b)| (a - b).abs() / b))
            .fold(0.0, f64::max)
    }
}

/// Windowed-centroid tracker fed one frame at a time.
pub struct Tracker {
    lat: Lattice,
    radius: f64,
    velocities: Vec<[f64; 3]>,
    pub tracked: Tracked,
}

impl Tracker {
    pub fn new(lat: Lattice, radius: f64, bodies: &[SolitonBody]) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::InvalidParameter(format!("window radius {radius} must be positive")));
        }
        let mut tracked = Tracked::default();
        tracked.centers.push(bodies.iter().map(|b| b.position).collect());
        Ok(Self { lat, radius, velocities: bodies.iter().map(|b| b.velocity).collect(), tracked })
    }

    /// Soft-edged ball: weight 1 inside 0.75R, cos² taper to 0 at R. The taper
    /// keeps the centroid from jumping as lattice sites cross the rim.
    fn weight(&self, r: f64) -> f64 {
        let inner = 0.75 * self.radius;
        if r <= inner {
            1.0
        } else if r >= self.radius {
            0.0
        } else {
            let s = (r - inner) / (self.radius - inner);
            (0.5 * std::f64::consts::PI * s).cos().powi(2)
        }
    }

    fn window(&self, rho: &[f64], guess: [f64; 3]) -> ([f64; 3], f64) {
        let lat = &self.lat;
        let d = lat.d();
        let mut c = guess;
        let mut mass = 0.0;
        for _ in 0..6 {
            let (mut m, mut s) = (0.0, [0.0; 3]);
            for (i, &r) in rho.iter().enumerate() {
                let x = lat.position(i);
                let mut dx = [0.0; 3];
                for a in 0..d {
                    dx[a] = lat.min_image(x[a] - c[a]);
                }
                let w = self.weight(dist(dx, [0.0; 3]));
                if w == 0.0 {
                    continue;
                }
                m += w * r;
                for a in 0..d {
                    s[a] += w * r * dx[a];
                }
            }
            mass = m * lat.cell_volume();
            if !(m > 0.0) {
                break;
            }
            let step: Vec<f64> = (0..d).map(|a| s[a] / m).collect();
            for a in 0..d {
                c[a] += step[a];
            }
            if step.iter().all(|x| x.abs() < 1e-13 * self.radius) {
                break;
            }
        }
        (c, mass)
    }

    pub fn observe(&mut self, t: f64, psi: &Field) {
        let rho = psi.density();
        let prev = self.tracked.centers.last().cloned().unwrap_or_default();
        let dt = t - self.tracked.times.last().copied().unwrap_or(0.0);
        let mut centers = Vec::with_capacity(prev.len());
        let mut masses = Vec::with_capacity(prev.len());
        for (p, v) in prev.iter().zip(&self.velocities) {
            let guess = [p[0] + v[0] * dt, p[1] + v[1] * dt, p[2] + v[2] * dt];
            let (c, m) = self.window(&rho, guess);
            centers.push(c);
            masses.push(m);
        }
        if !self.tracked.times.is_empty() && dt > 0.0 {
            for (v, (c, p)) in self.velocities.iter_mut().zip(centers.iter().zip(&prev)) {
                *v = [(c[0] - p[0]) / dt, (c[1] - p[1]) / dt, (c[2] - p[2]) / dt];
            }
        }
        for j in 0..centers.len() {
            for i in 0..j {
                if dist(centers[i], centers[j]) < 2.0 * self.radius {
                    self.tracked.ambiguous = true;
                }
            }
        }
        if self.tracked.times.is_empty() {
            self.tracked.centers.clear();
        }
        self.tracked.times.push(t);
        self.tracked.centers.push(centers);
        self.tracked.masses.push(masses);
    }
}

/// Tracks bodies through stored snapshots, which must start at the initial datum.
pub fn track_centers(snapshots: &[(f64, Field)], bodies: &[SolitonBody], radius: f64) -> Result<Tracked> {
    let first = snapshots.first().ok_or_else(|| Error::InvalidParameter("no snapshots".into()))?;
    let mut tr = Tracker::new(*first.1.lattice(), radius, bodies)?;
    for (t, psi) in snapshots {
        tr.observe(*t, psi);
    }
    Ok(tr.tracked)
}

#[derive(Clone, Debug, Serialize)]
pub struct Reference {
    pub times: Vec<f64>,
    pub positions: Vec<Vec<[f64; 3]>>,
    pub velocities: Vec<Vec<[f64; 3]>>,
    /// max |E(t) − E(0)| / max(1, |E(0)|)
    pub energy_drift: f64,
    /// max_t |P(t) − P(0)|
    pub momentum_drift: f64,
    /// First output time at which two bodies were closer than the softening radius.
    pub close_encounter: Option<f64>,
}

type State = Vec<f64>;

fn unpack(y: &[f64], k: usize) -> (Vec<[f64; 3]>, Vec<[f64; 3]>) {
    let q = (0..k).map(|j| [y[6 * j], y[6 * j + 1], y[6 * j + 2]]).collect();
    let v = (0..k).map(|j| [y[6 * j + 3], y[6 * j + 4], y[6 * j + 5]]).collect();
    (q, v)
}

fn rhs(cfg: &NewtonConfig, y: &[f64]) -> State {
    let k = cfg.bodies.len();
    let (q, v) = unpack(y, k);
    let acc = cfg.accelerations(&q);
    let mut out = vec![0.0; y.len()];
    for j in 0..k {
        for a in 0..3 {
            out[6 * j + a] = v[j][a];
            out[6 * j + 3 + a] = acc[j][a];
        }
    }
    out
}

fn rk4(cfg: &NewtonConfig, y: &[f64], h: f64) -> State {
    let lin = |a: &[f64], s: f64, b: &[f64]| a.iter().zip(b).map(|(x, z)| x + s * z).collect::<State>();
    let k1 = rhs(cfg, y);
    let k2 = rhs(cfg, &lin(y, h / 2.0, &k1));
    let k3 = rhs(cfg, &lin(y, h / 2.0, &k2));
    let k4 = rhs(cfg, &lin(y, h, &k3));
    (0..y.len()).map(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect()
}

/// Integrates the Newton equations and samples them at `times` (ascending, from 0).
///
/// Classical RK4 with step-doubling error control.
pub fn newton_ode(cfg: &NewtonConfig, times: &[f64]) -> Result<Reference> {
    cfg.validate()?;
    if times.first().is_none_or(|&t| t != 0.0) || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParameter("output times must ascend from 0".into()));
    }
    let k = cfg.bodies.len();
    let mut y: State = Vec::with_capacity(6 * k);
    for b in &cfg.bodies {
        y.extend_from_slice(&b.position);
        y.extend_from_slice(&b.velocity);
    }
    let (q0, v0) = unpack(&y, k);
    let e0 = cfg.reduced_energy(&q0, &v0);
    let p0 = cfg.reduced_momentum(&v0);
    let tol = 1e-13;
    let mut h = 1e-2 * cfg.horizon.min(times.last().copied().unwrap_or(1.0)).max(1e-6);
    let mut t = 0.0;
    let mut out = Reference {
        times: Vec::with_capacity(times.len()),
        positions: Vec::with_capacity(times.len()),
        velocities: Vec::with_capacity(times.len()),
        energy_drift: 0.0,
        momentum_drift: 0.0,
        close_encounter: None,
    };
    for &target in times {
        while t < target {
            let step = h.min(target - t);
            let full = rk4(cfg, &y, step);
            let halves = rk4(cfg, &rk4(cfg, &y, step / 2.0), step / 2.0);
            let scale = 1.0 + y.iter().map(|x| x.abs()).fold(0.0, f64::max);
            let err = full.iter().zip(&halves).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / 15.0 / scale;
            if err <= tol || step < 1e-12 {
                y = halves;
                t += step;
                if step == h || err < 0.5 * tol {
                    h = step * (0.9 * (tol / err.max(1e-300)).powf(0.2)).clamp(0.2, 2.0);
                }
            } else {
                h = step * (0.9 * (tol / err).powf(0.2)).clamp(0.1, 0.9);
            }
        }
        let (q, v) = unpack(&y, k);
        let e = cfg.reduced_energy(&q, &v);
        out.energy_drift = out.energy_drift.max((e - e0).abs() / e0.abs().max(1.0));
        let p = cfg.reduced_momentum(&v);
        out.momentum_drift = out.momentum_drift.max(dist(p, p0));
        if out.close_encounter.is_none() && cfg.softening > 0.0 {
            let close = (0..k).any(|j| (0..j).any(|i| dist(q[i], q[j]) < cfg.softening));
            if close {
                out.close_encounter = Some(target);
            }
        }
        out.times.push(target);
        out.positions.push(q);
        out.velocities.push(v);
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct DeviationReport {
    pub times: Vec<f64>,
    /// max_j |q̃_j(t) − q_j(t)| per time
    pub deviation: Vec<f64>,
    pub sup: f64,
}

impl DeviationReport {
    /// First time the deviation exceeds `threshold`, if any.
    pub fn validity_horizon(&self, threshold: f64) -> Option<f64> {
        self.times.iter().zip(&self.deviation).find(|(_, d)| **d > threshold).map(|(t, _)| *t)
    }

    /// Sup of the deviation restricted to t ≤ horizon.
    pub fn sup_until(&self, horizon: f64) -> f64 {
        self.times
            .iter()
            .zip(&self.deviation)
            .filter(|(t, _)| **t <= horizon * (1.0 + 1e-12))
            .map(|(_, d)| *d)
            .fold(0.0, f64::max)
    }
}

pub fn compare(tracked: &Tracked, reference: &Reference) -> Result<DeviationReport> {
    if tracked.times.len() != reference.times.len()
        || tracked.times.iter().zip(&reference.times).any(|(a, b)| (a - b).abs() > 1e-9 * b.abs().max(1.0))
    {
        return Err(Error::InvalidParameter("tracked and reference time grids differ".into()));
    }
    let deviation: Vec<f64> = tracked
        .centers
        .iter()
        .zip(&reference.positions)
        .map(|(c, q)| c.iter().zip(q).map(|(a, b)| dist(*a, *b)).fold(0.0, f64::max))
        .collect();
    let sup = deviation.iter().copied().fold(0.0, f64::max);
    Ok(DeviationReport { times: tracked.times.clone(), deviation, sup })
}

#[derive(Clone, Debug, Serialize)]
pub struct NewtonRun {
    pub scales: Scales,
    pub tracked: Tracked,
    pub reference: Reference,
    pub report: DeviationReport,
    pub outcome: Outcome,
    pub charge_drift: f64,
    pub energy_drift: f64,
}

/// Full experiment: ground states, initial datum, PDE with tracking, reference, comparison.
pub fn run(cfg: &NewtonConfig, lat: Lattice, prop: &PropagatorConfig, mcfg: &MinimizeConfig) -> Result<NewtonRun> {
    let gs = prepare_ground_states(cfg, lat, mcfg)?;
    let scales = check_scales(cfg, &lat, &gs)?;
    let model = cfg.model(lat)?;
    let psi0 = build_initial(cfg, &model, &gs)?;
    let prop = PropagatorConfig { t_end: cfg.horizon, snapshot_every: None, ..prop.clone() };
    let mut tracker = Tracker::new(lat, 4.0 * scales.l_sol, &cfg.bodies)?;
    let log = evolve_observed(&model, &psi0, &prop, |rec, psi| tracker.observe(rec.t, psi))?;
    let tracked = tracker.tracked;
    let reference = newton_ode(cfg, &tracked.times)?;
    let report = compare(&tracked, &reference)?;
    Ok(NewtonRun {
        scales,
        charge_drift: log.max_charge_drift(),
        energy_drift: log.max_energy_drift(),
        outcome: log.outcome,
        tracked,
        reference,
        report,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct EpsilonStudy {
    pub eps: [f64; 2],
    pub sup_deviation: [f64; 2],
    /// sup(ε) / sup(ε/2)
    pub ratio: f64,
}

/// Runs `setup(ε)` and `setup(ε/2)`, each over its own horizon, and compares sup deviations.
pub fn epsilon_study(
    setup: impl Fn(f64) -> NewtonConfig,
    eps: f64,
    lat: Lattice,
    prop: &PropagatorConfig,
    mcfg: &MinimizeConfig,
) -> Result<(EpsilonStudy, [NewtonRun; 2])> {
    let a = run(&setup(eps), lat, prop, mcfg)?;
    let b = run(&setup(eps / 2.0), lat, prop, mcfg)?;
    let sup = [a.report.sup, b.report.sup];
    let study = EpsilonStudy { eps: [eps, eps / 2.0], sup_deviation: sup, ratio: sup[0] / sup[1] };
    Ok((study, [a, b]))
}

#[derive(Clone, Debug, Serialize)]
pub struct OrbitReport {
    pub times: Vec<f64>,
    pub centroids: Vec<[f64; 3]>,
    pub sup_deviation: f64,
    /// max_t |E(t) − E(0)| for E = |p_c|² + λ|x_c|²
    pub energy_drift: f64,
    pub boundary_warning: bool,
    pub outcome: Outcome,
}

/// Boosts `q` to centroid x₀ and momentum p₀ and follows it in the harmonic trap
/// λ|x|², against x_c(t) = x₀ cos(2√λ t) + (p₀/√λ) sin(2√λ t).
///
/// The closed form is started from the datum's measured centroid and momentum
/// per particle, so any residual offset of `q` is carried along exactly.
pub fn harmonic_orbit_test(
    model: &Model,
    q: &Field,
    x0: [f64; 3],
    p0: [f64; 3],
    prop: &PropagatorConfig,
) -> Result<OrbitReport> {
    let ext = model.external();
    if ext.kind != ExternalKind::Harmonic || !(ext.lambda > 0.0) {
        return Err(Error::Inapplicable("the exact orbit needs a harmonic trap".into()));
    }
    let lam = ext.lambda;
    let w = 2.0 * lam.sqrt();
    let psi0 = boost(model.plan(), q, [2.0 * p0[0], 2.0 * p0[1], 2.0 * p0[2]], x0, 0.0)?;
    let mut times = Vec::new();
    let mut centroids = Vec::new();
    let mut moms = Vec::new();
    let mut warn = false;
    let log = evolve_observed(model, &psi0, prop, |rec, _| {
        times.push(rec.t);
        centroids.push(rec.position());
        let n = rec.charge;
        moms.push([rec.momentum[0] / n, rec.momentum[1] / n, rec.momentum[2] / n]);
        warn |= rec.boundary_warning();
    })?;
    let (xs, ps) = (centroids[0], moms[0]);
    let mut sup: f64 = 0.0;
    let mut drift: f64 = 0.0;
    let energy = |x: [f64; 3], p: [f64; 3]| {
        (0..3).map(|a| p[a] * p[a] + lam * x[a] * x[a]).sum::<f64>()
    };
    let e0 = energy(xs, ps);
    for ((t, c), p) in times.iter().zip(&centroids).zip(&moms) {
        let (cs, sn) = ((w * t).cos(), (w * t).sin());
        let want: Vec<f64> = (0..3).map(|a| xs[a] * cs + ps[a] / lam.sqrt() * sn).collect();
        let dev = (0..3).map(|a| (c[a] - want[a]).powi(2)).sum::<f64>().sqrt();
        sup = sup.max(dev);
        drift = drift.max((energy(*c, *p) - e0).abs());
    }
    Ok(OrbitReport {
        times,
        centroids,
        sup_deviation: sup,
        energy_drift: drift,
        boundary_warning: warn,
        outcome: log.outcome,
    })
}
