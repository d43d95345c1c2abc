//! Experiment configuration: strict TOML in, validated core types out.

use std::fmt;
use std::ops::Range;

use hartree_core::ground_state::{check_scaling_instability, MinimizeConfig};
use hartree_core::newtonian::{NewtonConfig, SolitonBody};
use hartree_core::potentials::{
    ExternalKind, ExternalPotential, KineticKind, Sign, TwoBodyKind, TwoBodyPotential,
};
use hartree_core::propagator::PropagatorConfig;
use hartree_core::{Lattice, Model};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Subcommand {
    Evolve,
    Groundstate,
    Linearize,
    Newtonian,
    Trapdance,
    Manybody,
    Blowup,
    Stability,
}

impl Subcommand {
    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Evolve => "evolve",
            Subcommand::Groundstate => "groundstate",
            Subcommand::Linearize => "linearize",
            Subcommand::Newtonian => "newtonian",
            Subcommand::Trapdance => "trapdance",
            Subcommand::Manybody => "manybody",
            Subcommand::Blowup => "blowup",
            Subcommand::Stability => "stability",
        }
    }

    /// Subcommands that need a [lattice] table.
    fn needs_lattice(self) -> bool {
        self != Subcommand::Manybody
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSpec {
    pub d: usize,
    pub n: usize,
    pub half_width: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExternalName {
    #[default]
    Zero,
    Harmonic,
    GaussianWell,
    DoubleWell,
}

/// Flat form of an external potential; shape parameters apply per kind.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalSpec {
    pub kind: ExternalName,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub separation: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TwoBodyName {
    None,
    PowerLaw,
    Yukawa,
    Gaussian,
    Delta,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoBodySpec {
    pub kind: TwoBodyName,
    #[serde(default = "attractive")]
    pub sign: Sign,
    #[serde(default)]
    pub nu: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<f64>,
}

impl Default for TwoBodySpec {
    fn default() -> Self {
        Self { kind: TwoBodyName::None, sign: Sign::Attractive, nu: 0.0, sigma: None, mu: None, width: None }
    }
}

fn attractive() -> Sign {
    Sign::Attractive
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KineticName {
    #[default]
    Nonrelativistic,
    Semirelativistic,
    FiniteDifference,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KineticSpec {
    #[serde(default)]
    pub kind: KineticName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mass: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSpec {
    pub dt: f64,
    pub t_end: f64,
    pub record_every: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snapshot_every: Option<usize>,
    pub blowup_gradnorm_factor: f64,
    pub blowup_tail_fraction: f64,
    pub dt_floor: f64,
    pub adaptive: bool,
}

impl Default for RunSpec {
    fn default() -> Self {
        let p = PropagatorConfig::default();
        Self {
            dt: p.dt,
            t_end: p.t_end,
            record_every: p.record_every,
            snapshot_every: p.snapshot_every,
            blowup_gradnorm_factor: p.blowup_gradnorm_factor,
            blowup_tail_fraction: p.blowup_tail_fraction,
            dt_floor: p.dt_floor,
            adaptive: p.adaptive,
        }
    }
}

impl RunSpec {
    pub fn propagator(&self) -> PropagatorConfig {
        PropagatorConfig {
            dt: self.dt,
            t_end: self.t_end,
            record_every: self.record_every,
            snapshot_every: self.snapshot_every,
            blowup_gradnorm_factor: self.blowup_gradnorm_factor,
            blowup_tail_fraction: self.blowup_tail_fraction,
            dt_floor: self.dt_floor,
            adaptive: self.adaptive,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MinimizeSpec {
    pub tol: f64,
    pub max_iter: usize,
    pub tau: f64,
}

impl Default for MinimizeSpec {
    fn default() -> Self {
        let m = MinimizeConfig::default();
        Self { tol: m.tol, max_iter: m.max_iter, tau: m.tau }
    }
}

impl MinimizeSpec {
    pub fn config(&self, seed: u64) -> MinimizeConfig {
        MinimizeConfig { tol: self.tol, max_iter: self.max_iter, tau: self.tau, seed }
    }
}

/// Initial datum for `evolve`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    /// amplitude·e^{−|x−center|²/(2 width²)}, boosted by `velocity`.
    Gaussian {
        #[serde(default = "one")]
        width: f64,
        #[serde(default = "one")]
        amplitude: f64,
        #[serde(default)]
        center: [f64; 3],
        #[serde(default)]
        velocity: [f64; 3],
    },
    /// scale·Q for the ground state of charge `charge` (or the critical point at `omega`).
    GroundState {
        #[serde(default)]
        charge: Option<f64>,
        #[serde(default)]
        omega: Option<f64>,
        #[serde(default = "one")]
        scale: f64,
        #[serde(default)]
        velocity: [f64; 3],
    },
    /// A binary snapshot written by an earlier run.
    Snapshot { path: String },
}

impl Default for InitialSpec {
    fn default() -> Self {
        InitialSpec::Gaussian { width: 1.0, amplitude: 1.0, center: [0.0; 3], velocity: [0.0; 3] }
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GroundstateSpec {
    /// Charge of the exported profile.
    pub charge: f64,
    /// Optional energy curve; an empty list skips it.
    pub charges: Vec<f64>,
    /// Extra seeds for the multi-seed report.
    pub seeds: Vec<u64>,
}

impl Default for GroundstateSpec {
    fn default() -> Self {
        Self { charge: 1.0, charges: Vec::new(), seeds: Vec::new() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinearizeSpec {
    pub charge: f64,
    /// Number of near-zero eigenvalues to report.
    pub count: usize,
    pub lanczos_tol: f64,
}

impl Default for LinearizeSpec {
    fn default() -> Self {
        Self { charge: 1.0, count: 6, lanczos_tol: 1e-9 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BodySpec {
    #[serde(default = "one")]
    pub charge: f64,
    pub position: [f64; 3],
    #[serde(default)]
    pub velocity: [f64; 3],
    #[serde(default)]
    pub phase: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NewtonianSpec {
    pub eps: f64,
    /// Defaults to 1/ε.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default)]
    pub external: ExternalSpec,
    pub short: TwoBodySpec,
    #[serde(default)]
    pub long: TwoBodySpec,
    pub bodies: Vec<BodySpec>,
    #[serde(default = "scale_ratio")]
    pub max_scale_ratio: f64,
    #[serde(default)]
    pub softening: f64,
    /// Also run at ε/2 and report the deviation ratio.
    #[serde(default)]
    pub halve: bool,
}

fn scale_ratio() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrapdanceSpec {
    pub charge: f64,
    pub x0: [f64; 3],
    pub p0: [f64; 3],
    /// Horizon in oscillator periods π/√λ.
    pub periods: f64,
}

impl Default for TrapdanceSpec {
    fn default() -> Self {
        Self { charge: 1.0, x0: [1.0, 0.0, 0.0], p0: [0.0, 0.5, 0.0], periods: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManybodySpec {
    pub sites: usize,
    pub half_width: f64,
    #[serde(default)]
    pub external: ExternalSpec,
    pub twobody: TwoBodySpec,
    pub particles: Vec<usize>,
    #[serde(default = "one")]
    pub t: f64,
    /// φ₀ ∝ e^{−(x−center)²/(2 width²) + i k x}
    #[serde(default)]
    pub center: f64,
    #[serde(default = "one")]
    pub width: f64,
    #[serde(default)]
    pub k: f64,
    #[serde(default = "hartree_dt")]
    pub hartree_dt: f64,
    /// Particle number for the spectral probe; 0 skips it.
    #[serde(default)]
    pub probe_particles: usize,
    #[serde(default = "probe_count")]
    pub probe_count: usize,
}

fn hartree_dt() -> f64 {
    1e-4
}

fn probe_count() -> usize {
    10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlowupSpec {
    /// ω of the critical point Q.
    pub omega: f64,
    /// Runs start from (1+ε)Q for each ε.
    pub eps: Vec<f64>,
}

impl Default for BlowupSpec {
    fn default() -> Self {
        Self { omega: 1.0, eps: vec![0.05, -0.05] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StabilitySpec {
    pub charge: f64,
    /// H¹ size of the smooth random perturbation.
    pub delta: f64,
    /// Velocity of the additionally boosted soliton; zero skips that run.
    pub boost: [f64; 3],
}

impl Default for StabilitySpec {
    fn default() -> Self {
        Self { charge: 1.0, delta: 1e-3, boost: [0.0; 3] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub subcommand: Subcommand,
    #[serde(default)]
    pub seed: u64,
    /// Output directory, relative to $HARTREE_OUT_ROOT when that is set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lattice: Option<LatticeSpec>,
    #[serde(default)]
    pub kinetic: KineticSpec,
    #[serde(default)]
    pub external: ExternalSpec,
    #[serde(default)]
    pub twobody: TwoBodySpec,
    #[serde(default)]
    pub run: RunSpec,
    #[serde(default)]
    pub minimize: MinimizeSpec,
    #[serde(default)]
    pub initial: InitialSpec,
    #[serde(default)]
    pub groundstate: GroundstateSpec,
    #[serde(default)]
    pub linearize: LinearizeSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub newtonian: Option<NewtonianSpec>,
    #[serde(default)]
    pub trapdance: TrapdanceSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manybody: Option<ManybodySpec>,
    #[serde(default)]
    pub blowup: BlowupSpec,
    #[serde(default)]
    pub stability: StabilitySpec,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub struct ConfigErrors(pub Vec<ConfigError>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

fn line_of(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].matches('\n').count() + 1
}

/// Line of `key = …` inside `[section]` (top level when `section` is empty).
fn locate(src: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    let mut header_line = None;
    for (i, raw) in src.lines().enumerate() {
        let line = raw.trim();
        if let Some(h) = line.strip_prefix('[') {
            current = h.trim_start_matches('[').trim_end_matches(']').trim().to_string();
            if current == section {
                header_line = Some(i + 1);
            }
            continue;
        }
        if current == section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    if key.is_empty() {
        header_line
    } else {
        None
    }
}

fn required(table: &toml::Table, section: &str, keys: &[&str], src: &str, errs: &mut Vec<ConfigError>) {
    let Some(t) = table.get(section).and_then(|v| v.as_table()) else {
        return;
    };
    for k in keys {
        if !t.contains_key(*k) {
            errs.push(ConfigError {
                line: locate(src, section, ""),
                message: format!("missing required key `{section}.{k}`"),
            });
        }
    }
}

/// Parses and validates a configuration, reporting every problem found at the
/// first stage that has any (syntax, then missing keys, then types and
/// unknown keys, then semantic checks).
pub fn parse(src: &str) -> Result<ExperimentConfig, ConfigErrors> {
    let table: toml::Table = toml::from_str(src).map_err(|e| ConfigErrors(vec![toml_error(src, &e)]))?;
    let mut errs = Vec::new();
    let sub = table.get("subcommand").and_then(|v| v.as_str());
    if sub.is_none() {
        errs.push(ConfigError { line: None, message: "missing required key `subcommand`".into() });
    }
    let needs_lattice = !matches!(sub, Some("manybody"));
    if needs_lattice && sub.is_some() && !table.contains_key("lattice") {
        errs.push(ConfigError { line: None, message: "missing required table `[lattice]`".into() });
    }
    required(&table, "lattice", &["d", "n", "half_width"], src, &mut errs);
    for s in ["external", "twobody"] {
        required(&table, s, &["kind"], src, &mut errs);
    }
    if sub == Some("newtonian") && !table.contains_key("newtonian") {
        errs.push(ConfigError { line: None, message: "missing required table `[newtonian]`".into() });
    }
    required(&table, "newtonian", &["eps", "short", "bodies"], src, &mut errs);
    if sub == Some("manybody") && !table.contains_key("manybody") {
        errs.push(ConfigError { line: None, message: "missing required table `[manybody]`".into() });
    }
    required(&table, "manybody", &["sites", "half_width", "twobody", "particles"], src, &mut errs);
    if !errs.is_empty() {
        return Err(ConfigErrors(errs));
    }
    let cfg: ExperimentConfig = toml::from_str(src).map_err(|e| ConfigErrors(vec![toml_error(src, &e)]))?;
    let errs = cfg.validate_with(src);
    if errs.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigErrors(errs))
    }
}

fn toml_error(src: &str, e: &toml::de::Error) -> ConfigError {
    let span: Option<Range<usize>> = e.span();
    ConfigError { line: span.map(|s| line_of(src, s.start)), message: e.message().trim().to_string() }
}

pub fn serialize(cfg: &ExperimentConfig) -> String {
    // every field is a plain TOML value, so serialization cannot fail
    toml::to_string(cfg).unwrap_or_default()
}

impl ExternalSpec {
    pub fn build(&self) -> Result<ExternalPotential, String> {
        let need = |v: Option<f64>, name: &str| v.ok_or_else(|| format!("`{name}` is required for this kind"));
        let kind = match self.kind {
            ExternalName::Zero => ExternalKind::Zero,
            ExternalName::Harmonic => ExternalKind::Harmonic,
            ExternalName::GaussianWell => {
                ExternalKind::GaussianWell { depth: need(self.depth, "depth")?, width: need(self.width, "width")? }
            }
            ExternalName::DoubleWell => ExternalKind::DoubleWell {
                separation: need(self.separation, "separation")?,
                depth: need(self.depth, "depth")?,
                width: need(self.width, "width")?,
            },
        };
        ExternalPotential::new(kind, self.lambda).map_err(|e| e.to_string())
    }
}

impl TwoBodySpec {
    pub fn build(&self) -> Result<TwoBodyPotential, String> {
        let need = |v: Option<f64>, name: &str| v.ok_or_else(|| format!("`{name}` is required for this kind"));
        let kind = match self.kind {
            TwoBodyName::None => return Ok(TwoBodyPotential::none()),
            TwoBodyName::PowerLaw => TwoBodyKind::PowerLaw { sigma: need(self.sigma, "sigma")? },
            TwoBodyName::Yukawa => TwoBodyKind::Yukawa { mu: need(self.mu, "mu")? },
            TwoBodyName::Gaussian => TwoBodyKind::Gaussian { width: need(self.width, "width")? },
            TwoBodyName::Delta => TwoBodyKind::Delta,
        };
        TwoBodyPotential::new(kind, self.sign, self.nu).map_err(|e| e.to_string())
    }
}

impl KineticSpec {
    pub fn build(&self) -> Result<KineticKind, String> {
        let k = match self.kind {
            KineticName::Nonrelativistic => KineticKind::Nonrelativistic,
            KineticName::FiniteDifference => KineticKind::FiniteDifference,
            KineticName::Semirelativistic => {
                KineticKind::Semirelativistic { mass: self.mass.ok_or("`mass` is required for this kind")? }
            }
        };
        k.validate().map_err(|e| e.to_string())?;
        Ok(k)
    }
}

impl NewtonianSpec {
    pub fn build(&self) -> Result<NewtonConfig, String> {
        let ext = self.external.build()?;
        let cfg = NewtonConfig {
            eps: self.eps,
            external: ext.kind,
            lambda: ext.lambda,
            short: self.short.build()?,
            long: self.long.build()?,
            bodies: self
                .bodies
                .iter()
                .map(|b| SolitonBody { charge: b.charge, position: b.position, velocity: b.velocity, phase: b.phase })
                .collect(),
            horizon: self.horizon.unwrap_or(1.0 / self.eps),
            max_scale_ratio: self.max_scale_ratio,
            softening: self.softening,
        };
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }
}

impl ExperimentConfig {
    pub fn lattice(&self) -> Result<Lattice, String> {
        let l = self.lattice.as_ref().ok_or("a [lattice] table is required")?;
        Lattice::new(l.d, l.n, l.half_width).map_err(|e| e.to_string())
    }

    /// Semantic checks, without line information.
    pub fn validate(&self) -> Vec<ConfigError> {
        self.validate_with("")
    }

    fn validate_with(&self, src: &str) -> Vec<ConfigError> {
        let mut errs = Vec::new();
        let mut push = |section: &str, key: &str, message: String| {
            let line = locate(src, section, key).or_else(|| locate(src, section, ""));
            errs.push(ConfigError { line, message: if section.is_empty() { message } else { format!("[{section}] {message}") } });
        };
        let sub = self.subcommand;
        let lat = if sub.needs_lattice() {
            match self.lattice() {
                Ok(l) => Some(l),
                Err(e) => {
                    push("lattice", "n", e);
                    None
                }
            }
        } else {
            None
        };
        if let Err(e) = self.external.build() {
            push("external", "kind", e);
        }
        if let Err(e) = self.kinetic.build() {
            push("kinetic", "kind", e);
        }
        let phi = match self.twobody.build() {
            Ok(p) => Some(p),
            Err(e) => {
                push("twobody", "kind", e);
                None
            }
        };
        if sub.needs_lattice() && sub != Subcommand::Newtonian {
            if let Err(e) = self.run.propagator().validate() {
                push("run", "", e.to_string());
            }
            if !(self.minimize.tol > 0.0) || self.minimize.max_iter == 0 || !(self.minimize.tau > 0.0) {
                push("minimize", "tol", "tol, max_iter and tau must be positive".into());
            }
        }
        // the descent refuses models unbounded below on the charge sphere
        let variational = matches!(
            sub,
            Subcommand::Groundstate | Subcommand::Linearize | Subcommand::Trapdance | Subcommand::Stability
        );
        if let (true, Some(phi), Some(lat), Ok(kin)) = (variational, &phi, lat, self.kinetic.build()) {
            // the guard only looks at d, the kinetic kind and the kernel, so a tiny lattice will do
            let probe = Lattice::new(lat.d(), 8, lat.half_width())
                .and_then(|l| Model::new(l, ExternalPotential::zero(), phi.clone(), kin))
                .and_then(|m| check_scaling_instability(&m));
            if let Err(e) = probe {
                let key = if phi.sigma().is_some() { "sigma" } else { "kind" };
                push(
                    "twobody",
                    key,
                    format!("{e}; {} has no minimizer (blowup handles the critical point)", sub.name()),
                );
            }
        }
        match sub {
            Subcommand::Groundstate => {
                if !(self.groundstate.charge > 0.0) || self.groundstate.charges.iter().any(|c| !(*c > 0.0)) {
                    push("groundstate", "charge", "charges must be positive".into());
                }
            }
            Subcommand::Linearize => {
                if !(1..=20).contains(&self.linearize.count) {
                    push("linearize", "count", format!("count {} outside 1..=20", self.linearize.count));
                }
            }
            Subcommand::Newtonian => match &self.newtonian {
                Some(n) => {
                    if let Err(e) = n.build() {
                        push("newtonian", "", e);
                    }
                }
                None => push("", "", "missing required table `[newtonian]`".into()),
            },
            Subcommand::Trapdance => {
                if self.external.kind != ExternalName::Harmonic || !(self.external.lambda > 0.0) {
                    push("external", "kind", "trapdance needs a harmonic trap with λ > 0".into());
                }
                if !(self.trapdance.periods > 0.0) {
                    push("trapdance", "periods", "periods must be positive".into());
                }
            }
            Subcommand::Manybody => match &self.manybody {
                Some(m) => {
                    if let Err(e) = m.twobody.build() {
                        push("manybody.twobody", "kind", e);
                    }
                    if let Err(e) = m.external.build() {
                        push("manybody.external", "kind", e);
                    }
                    if m.particles.is_empty() || m.particles.contains(&0) {
                        push("manybody", "particles", "particle numbers must be positive and non-empty".into());
                    }
                    if m.sites < 2 || !(m.half_width > 0.0) || !(m.width > 0.0) || !(m.hartree_dt > 0.0) || !(m.t >= 0.0) {
                        push("manybody", "sites", "need sites ≥ 2 and positive half_width, width, hartree_dt".into());
                    }
                }
                None => push("", "", "missing required table `[manybody]`".into()),
            },
            Subcommand::Blowup => {
                if !(self.blowup.omega > 0.0) || self.blowup.eps.is_empty() {
                    push("blowup", "omega", "need ω > 0 and at least one ε".into());
                }
            }
            Subcommand::Stability => {
                if !(self.stability.delta >= 0.0) || !(self.stability.charge > 0.0) {
                    push("stability", "delta", "need δ ≥ 0 and a positive charge".into());
                }
            }
            Subcommand::Evolve => {
                if let InitialSpec::GroundState { charge, omega, .. } = &self.initial {
                    if charge.is_some() == omega.is_some() {
                        push("initial", "kind", "ground_state needs exactly one of `charge` or `omega`".into());
                    }
                }
            }
        }
        errs
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "subcommand = \"evolve\"\n[lattice]\nd = 1\nn = 64\nhalf_width = 8.0\n";

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse(MINIMAL).unwrap();
        assert_eq!(c.run, RunSpec::default());
        assert_eq!(c.initial, InitialSpec::default());
        assert_eq!(c.twobody.kind, TwoBodyName::None);
        assert_eq!(c.seed, 0);
    }

    #[test]
    fn round_trip() {
        let src = format!(
            "{MINIMAL}[twobody]\nkind = \"power_law\"\nsigma = 1.0\nnu = 2.0\n[external]\nkind = \"gaussian_well\"\nlambda = 0.5\ndepth = 1.0\nwidth = 2.0\n[run]\ndt = 0.01\nsnapshot_every = 3\n[initial]\nkind = \"ground_state\"\ncharge = 1.5\n"
        );
        let c = parse(&src).unwrap();
        let again = parse(&serialize(&c)).unwrap();
        assert_eq!(c, again);
        assert_eq!(serialize(&c), serialize(&again));
    }

    #[test]
    fn unknown_keys_are_rejected_with_line() {
        let e = parse(&format!("{MINIMAL}[run]\ndt = 0.1\ndtt = 0.2\n")).unwrap_err();
        assert_eq!(e.0.len(), 1);
        assert_eq!(e.0[0].line, Some(8), "{e}");
        assert!(e.0[0].message.contains("dtt"), "{e}");
    }

    #[test]
    fn missing_keys_are_enumerated() {
        let e = parse("subcommand = \"evolve\"\n[lattice]\nd = 3\n[twobody]\nnu = 1.0\n").unwrap_err();
        let msgs: Vec<&str> = e.0.iter().map(|x| x.message.as_str()).collect();
        assert_eq!(msgs.len(), 3, "{msgs:?}");
        assert!(msgs.iter().any(|m| m.contains("lattice.n")));
        assert!(msgs.iter().any(|m| m.contains("lattice.half_width")));
        assert!(msgs.iter().any(|m| m.contains("twobody.kind")));
        assert_eq!(e.0[0].line, Some(2));
    }

    #[test]
    fn syntax_error_has_line() {
        let e = parse("subcommand = \"evolve\"\n[lattice\nd = 3\n").unwrap_err();
        assert_eq!(e.0[0].line, Some(2), "{e}");
    }

    #[test]
    fn critical_groundstate_is_refused() {
        let src = "subcommand = \"groundstate\"\n[lattice]\nd = 3\nn = 16\nhalf_width = 8.0\n[twobody]\nkind = \"power_law\"\nsigma = 2.0\nnu = 1.0\n";
        let e = parse(src).unwrap_err();
        assert_eq!(e.0.len(), 1);
        assert!(e.0[0].message.contains("unbounded below"), "{e}");
        assert!(e.0[0].message.contains("groundstate"), "{e}");
        assert_eq!(e.0[0].line, Some(8));
        // the same kernel is fine for blow-up studies
        assert!(parse(&src.replace("groundstate", "blowup")).is_ok());
    }

    #[test]
    fn semantic_errors_are_collected() {
        let src = "subcommand = \"evolve\"\n[lattice]\nd = 4\nn = 10\nhalf_width = 8.0\n[run]\ndt = -1.0\n[twobody]\nkind = \"gaussian\"\nnu = 1.0\n";
        let e = parse(src).unwrap_err();
        assert_eq!(e.0.len(), 3, "{e}");
    }
}
