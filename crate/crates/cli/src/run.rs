//! Subcommand drivers. Each one writes its data files through [`Output`] and
//! returns an outcome plus a JSON summary for the manifest.

use std::f64::consts::PI;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use hartree_core::ground_state::{
    critical_point, energy_curve, minimize, multi_seed_report, symmetry_check, virial_check, GroundState,
};
use hartree_core::grid::{read_snapshot, write_snapshot};
use hartree_core::lanczos::LanczosConfig;
use hartree_core::linearization::{Block, LinearizedOperator};
use hartree_core::many_body::{conjecture_probe, ground_energy_scaling, mean_field_deviation, Chain, MeanFieldConfig};
use hartree_core::newtonian::{self, epsilon_study, harmonic_orbit_test, NewtonRun};
use hartree_core::observables::{h1_norm, manifold_distance, stability_run, write_records_csv, InvariantRecord};
use hartree_core::propagator::{boost, evolve, Outcome, PropagatorConfig};
use hartree_core::{Field, Model, C64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, InitialSpec, ManybodySpec, Subcommand};
use crate::manifest::Output;
use crate::CliError;

pub struct RunResult {
    pub outcome: Outcome,
    pub summary: Value,
}

fn done(summary: Value) -> Result<RunResult, CliError> {
    Ok(RunResult { outcome: Outcome::Completed, summary })
}

/// Extra inputs that only come from the command line.
#[derive(Default)]
pub struct RunInputs {
    pub groundstate: Option<PathBuf>,
}

pub fn run(cfg: &ExperimentConfig, inputs: &RunInputs, out: &mut Output) -> Result<RunResult, CliError> {
    match cfg.subcommand {
        Subcommand::Evolve => run_evolve(cfg, out),
        Subcommand::Groundstate => run_groundstate(cfg, out),
        Subcommand::Linearize => run_linearize(cfg, inputs, out),
        Subcommand::Newtonian => run_newtonian(cfg, out),
        Subcommand::Trapdance => run_trapdance(cfg, out),
        Subcommand::Manybody => run_manybody(cfg, out),
        Subcommand::Blowup => run_blowup(cfg, out),
        Subcommand::Stability => run_stability(cfg, out),
    }
}

fn invalid(msg: String) -> CliError {
    CliError::Numerical(hartree_core::Error::InvalidParameter(msg))
}

pub fn build_model(cfg: &ExperimentConfig) -> Result<Model, CliError> {
    let lat = cfg.lattice().map_err(invalid)?;
    let ext = cfg.external.build().map_err(invalid)?;
    let phi = cfg.twobody.build().map_err(invalid)?;
    let kin = cfg.kinetic.build().map_err(invalid)?;
    Ok(Model::new(lat, ext, phi, kin)?)
}

fn f(x: f64) -> String {
    format!("{x:.16e}")
}

fn row(xs: &[f64]) -> String {
    xs.iter().map(|x| f(*x)).collect::<Vec<_>>().join(",")
}

fn snapshot_bytes(psi: &Field) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    write_snapshot(&mut buf, psi)?;
    Ok(buf)
}

fn records_bytes(records: &[InvariantRecord]) -> Vec<u8> {
    let mut buf = Vec::new();
    // writing into a Vec cannot fail
    let _ = write_records_csv(&mut buf, records);
    buf
}

fn outcome_json(o: &Outcome) -> Value {
    serde_json::to_value(o).unwrap_or(Value::Null)
}

fn ground_state_json(model: &Model, gs: &GroundState) -> Value {
    json!({
        "charge": gs.charge,
        "energy": gs.energy,
        "omega": gs.omega,
        "residual": gs.residual,
        "iterations": gs.iterations,
        "boundary_mass": gs.boundary_mass,
        "critical_point": gs.critical_point,
        "virial": virial_check(model, gs).ok(),
    })
}

/// Gaussian envelope times a random low-order polynomial, as a complex field.
fn smooth_random(model: &Model, seed: u64) -> Result<Field, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
    Ok(Field::from_fn(*model.lattice(), |x| {
        let g = (-(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) / 4.0).exp();
        C64::new(g * (c[0] + c[1] * x[0] + c[2] * x[1]), g * (c[3] + c[4] * x[2] + c[5] * x[0] * x[1]))
    })?)
}

fn initial_field(cfg: &ExperimentConfig, model: &Model) -> Result<Field, CliError> {
    let lat = *model.lattice();
    let mcfg = cfg.minimize.config(cfg.seed);
    let (psi, v) = match &cfg.initial {
        InitialSpec::Gaussian { width, amplitude, center, velocity } => {
            let psi = Field::from_fn(lat, |x| {
                let r2: f64 = (0..3).map(|a| (x[a] - center[a]).powi(2)).sum();
                C64::new(amplitude * (-r2 / (2.0 * width * width)).exp(), 0.0)
            })?;
            (psi, *velocity)
        }
        InitialSpec::GroundState { charge, omega, scale, velocity } => {
            let gs = match (charge, omega) {
                (Some(n), None) => minimize(model, *n, &mcfg)?,
                (None, Some(w)) => critical_point(model, *w, &mcfg)?,
                _ => return Err(invalid("ground_state needs exactly one of charge or omega".into())),
            };
            (gs.q.scaled(C64::new(*scale, 0.0)), *velocity)
        }
        InitialSpec::Snapshot { path } => {
            let psi = read_field(Path::new(path))?;
            if *psi.lattice() != lat {
                return Err(CliError::Numerical(hartree_core::Error::LatticeMismatch));
            }
            (psi, [0.0; 3])
        }
    };
    if v.iter().any(|c| *c != 0.0) {
        Ok(boost(model.plan(), &psi, v, [0.0; 3], 0.0)?)
    } else {
        Ok(psi)
    }
}

pub fn read_field(path: &Path) -> Result<Field, CliError> {
    let file = fs::File::open(path).map_err(|e| CliError::Io(path.display().to_string(), e))?;
    Ok(read_snapshot(BufReader::new(file))?)
}

fn run_evolve(cfg: &ExperimentConfig, out: &mut Output) -> Result<RunResult, CliError> {
    let model = build_model(cfg)?;
    let psi0 = initial_field(cfg, &model)?;
    let log = evolve(&model, &psi0, &cfg.run.propagator())?;
    out.write("records.csv", &records_bytes(&log.records))?;
    for (k, (_, psi)) in log.snapshots.iter().enumerate() {
        out.write(&format!("snapshot_{k:04}.bin"), &snapshot_bytes(psi)?)?;
    }
    let times: Vec<f64> = log.snapshots.iter().map(|s| s.0).collect();
    println!(
        "evolve: {} records, charge drift {:.3e}, energy drift {:.3e}, outcome {:?}",
        log.records.len(),
        log.max_charge_drift(),
        log.max_energy_drift(),
        log.outcome
    );
    Ok(RunResult {
        summary: json!({
            "records": log.records.len(),
            "snapshot_times": times,
            "max_charge_drift": log.max_charge_drift(),
            "max_energy_drift": log.max_energy_drift(),
            "max_momentum": log.max_momentum(),
            "dt_final": log.dt_final,
        }),
        outcome: log.outcome,
    })
}

fn run_groundstate(cfg: &ExperimentConfig, out: &mut Output) -> Result<RunResult, CliError> {
    let model = build_model(cfg)?;
    let mcfg = cfg.minimize.config(cfg.seed);
    let gs = minimize(&model, cfg.groundstate.charge, &mcfg)?;
    out.write("q.bin", &snapshot_bytes(&gs.q)?)?;
    let charges = if cfg.groundstate.charges.is_empty() { vec![gs.charge] } else { cfg.groundstate.charges.clone() };
    let curve = energy_curve(&model, &charges, &mcfg)?;
    let mut csv = format!("{}\n", hartree_core::ground_state::EnergyCurve::CSV_HEADER);
    for r in curve.csv_rows() {
        csv.push_str(&r);
        csv.push('\n');
    }
    out.write("curve.csv", csv.as_bytes())?;
    let symmetry = symmetry_check(model.plan(), &gs.q).ok().map(|s| {
        json!({ "radial_deviation": s.radial_deviation, "max_increase": s.max_increase, "min_ratio": s.min_ratio })
    });
    let seeds = if cfg.groundstate.seeds.is_empty() {
        None
    } else {
        let r = multi_seed_report(&model, cfg.groundstate.charge, &mcfg, &cfg.groundstate.seeds)?;
        Some(json!({ "seeds": cfg.groundstate.seeds, "energies": r.energies, "max_distance": r.max_distance }))
    };
    let report = json!({
        "ground_state": ground_state_json(&model, &gs),
        "symmetry": symmetry,
        "multi_seed": seeds,
    });
    out.write("report.json", &json_bytes(&report))?;
    println!(
        "groundstate: N = {}, E = {:.10e}, ω = {:.10e}, residual {:.2e} after {} iterations",
        gs.charge, gs.energy, gs.omega, gs.residual, gs.iterations
    );
    done(report)
}

pub fn json_bytes(v: &Value) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).unwrap_or_default();
    s.push('\n');
    s.into_bytes()
}

fn run_linearize(cfg: &ExperimentConfig, inputs: &RunInputs, out: &mut Output) -> Result<RunResult, CliError> {
    let model = build_model(cfg)?;
    let (q, source) = match &inputs.groundstate {
        Some(path) => {
            let q = read_field(path)?;
            if *q.lattice() != *model.lattice() {
                return Err(CliError::Numerical(hartree_core::Error::LatticeMismatch));
            }
            (q, path.display().to_string())
        }
        None => (minimize(&model, cfg.linearize.charge, &cfg.minimize.config(cfg.seed))?.q, "minimize".into()),
    };
    // ω from the Rayleigh quotient of the stationary equation HQ = −ωQ
    let hq = model.apply_hamiltonian(&q)?;
    let omega = -hq.inner(&q)?.re / q.inner(&q)?.re;
    let l = LinearizedOperator::from_profile(&model, &q, omega)?;
    let res = l.null_residuals()?;
    let names = ["iQ", "dQ/dx", "dQ/dy", "dQ/dz"];
    let mut csv = String::from("mode,residual\n");
    for (name, r) in names.iter().zip(&res) {
        csv.push_str(&format!("{name},{}\n", f(*r)));
    }
    out.write("residuals.csv", csv.as_bytes())?;
    let lcfg = LanczosConfig { tol: cfg.linearize.lanczos_tol, seed: cfg.seed, ..Default::default() };
    let spec = l.low_spectrum(cfg.linearize.count, &lcfg)?;
    let mut csv = String::from("index,eigenvalue,block\n");
    for (i, (e, b)) in spec.iter().enumerate() {
        let tag = match b {
            Block::Plus => "plus",
            Block::Minus => "minus",
        };
        csv.push_str(&format!("{i},{},{tag}\n", f(*e)));
    }
    out.write("spectrum.csv", csv.as_bytes())?;
    println!("linearize: ω = {omega:.10e}, max null residual {:.2e}", res.iter().copied().fold(0.0, f64::max));
    done(json!({ "profile": source, "omega": omega, "null_residuals": res, "eigenvalues": spec.iter().map(|s| s.0).collect::<Vec<_>>() }))
}

fn write_newton(out: &mut Output, run: &NewtonRun, suffix: &str) -> Result<(), CliError> {
    let k = run.reference.positions.first().map_or(0, |p| p.len());
    let cols = |prefix: &str| {
        (0..k).flat_map(|j| ["x", "y", "z"].map(|a| format!("{prefix}{a}{j}"))).collect::<Vec<_>>().join(",")
    };
    let mut tracked = format!("t,{},{}\n", cols(""), (0..k).map(|j| format!("mass{j}")).collect::<Vec<_>>().join(","));
    for ((t, c), m) in run.tracked.times.iter().zip(&run.tracked.centers).zip(&run.tracked.masses) {
        let mut v = vec![*t];
        v.extend(c.iter().flatten());
        v.extend(m);
        tracked.push_str(&row(&v));
        tracked.push('\n');
    }
    out.write(&format!("tracked{suffix}.csv"), tracked.as_bytes())?;
    let mut reference = format!("t,{},{}\n", cols(""), cols("v"));
    for ((t, q), v) in run.reference.times.iter().zip(&run.reference.positions).zip(&run.reference.velocities) {
        let mut r = vec![*t];
        r.extend(q.iter().flatten());
        r.extend(v.iter().flatten());
        reference.push_str(&row(&r));
        reference.push('\n');
    }
    out.write(&format!("reference{suffix}.csv"), reference.as_bytes())?;
    let mut dev = String::from("t,deviation\n");
    for (t, d) in run.report.times.iter().zip(&run.report.deviation) {
        dev.push_str(&row(&[*t, *d]));
        dev.push('\n');
    }
    out.write(&format!("deviation{suffix}.csv"), dev.as_bytes())?;
    Ok(())
}

fn newton_json(run: &NewtonRun) -> Value {
    json!({
        "scales": run.scales,
        "sup_deviation": run.report.sup,
        "charge_drift": run.charge_drift,
        "energy_drift": run.energy_drift,
        "reference_energy_drift": run.reference.energy_drift,
        "ambiguous_tracking": run.tracked.ambiguous,
        "outcome": outcome_json(&run.outcome),
    })
}

fn run_newtonian(cfg: &ExperimentConfig, out: &mut Output) -> Result<RunResult, CliError> {
    let spec = cfg.newtonian.as_ref().ok_or_else(|| invalid("missing [newtonian]".into()))?;
    let ncfg = spec.build().map_err(invalid)?;
    let lat = cfg.lattice().map_err(invalid)?;
    let prop = cfg.run.propagator();
    let mcfg = cfg.minimize.config(cfg.seed);
    if spec.halve {
        let setup = |eps: f64| {
            let mut s = spec.clone();
            // positions scale with 1/ε so that εq stays fixed
            let r = spec.eps / eps;
            for b in &mut s.bodies {
                b.position = b.position.map(|x| x * r);
            }
            s.eps = eps;
            s.horizon = spec.horizon.map(|h| h * r);
            s.build().unwrap_or_else(|_| ncfg.clone())
        };
        let (study, runs) = epsilon_study(setup, spec.eps, lat, &prop, &mcfg)?;
        write_newton(out, &runs[0], "")?;
        write_newton(out, &runs[1], "_half")?;
        println!(
            "newtonian: sup deviation {:.4e} (ε = {}), {:.4e} (ε = {}), ratio {:.3}",
            study.sup_deviation[0], study.eps[0], study.sup_deviation[1], study.eps[1], study.ratio
        );
        let outcome = if runs.iter().all(|r| r.outcome == Outcome::Completed) {
            Outcome::Completed
        } else {
            runs.iter().find(|r| r.outcome != Outcome::Completed).map(|r| r.outcome.clone()).unwrap_or(Outcome::Completed)
        };
        return Ok(RunResult {
            outcome,
            summary: json!({ "study": study, "runs": [newton_json(&runs[0]), newton_json(&runs[1])] }),
        });
    }
    let r = newtonian::run(&ncfg, lat, &prop, &mcfg)?;
    write_newton(out, &r, "")?;
    println!("newtonian: sup deviation {:.4e} over horizon {}", r.report.sup, ncfg.horizon);
    Ok(RunResult { outcome: r.outcome.clone(), summary: newton_json(&r) })
}

fn run_trapdance(cfg: &ExperimentConfig, out: &mut Output) -> Result<RunResult, CliError> {
    let model = build_model(cfg)?;
    let td = &cfg.trapdance;
    let gs = minimize(&model, td.charge, &cfg.minimize.config(cfg.seed))?;
    let lam = cfg.external.lambda;
    let t_end = td.periods * PI / lam.sqrt();
    let prop = PropagatorConfig { t_end, snapshot_every: None, ..cfg.run.propagator() };
    let r = harmonic_orbit_test(&model, &gs.q, td.x0, td.p0, &prop)?;
    let mut csv = String::from("t,cx,cy,cz\n");
    for (t, c) in r.times.iter().zip(&r.centroids) {
        csv.push_str(&row(&[*t, c[0], c[1], c[2]]));
        csv.push('\n');
    }
    out.write("orbit.csv", csv.as_bytes())?;
    println!(
        "trapdance: sup |x_c(t) − x_exact(t)| = {:.4e}, drift of |p|² + λ|x|² = {:.4e} over T = {t_end:.6}{}",
        r.sup_deviation,
        r.energy_drift,
        if r.boundary_warning { " (boundary warning)" } else { "" }
    );
    Ok(RunResult {
        summary: json!({
            "ground_state": ground_state_json(&model, &gs),
            "t_end": t_end,
            "sup_deviation": r.sup_deviation,
            "energy_drift": r.energy_drift,
            "boundary_warning": r.boundary_warning,
        }),
        outcome: r.outcome,
    })
}

fn chain_datum(chain: &Chain, m: &ManybodySpec) -> Vec<C64> {
    let h = chain.spacing();
    let mut c: Vec<C64> = (0..m.sites)
        .map(|i| {
            let x = -m.half_width + i as f64 * h;
            C64::from_polar((-(x - m.center).powi(2) / (2.0 * m.width * m.width)).exp(), m.k * x)
        })
        .collect();
    let n = c.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    c.iter_mut().for_each(|z| *z /= n);
    c
}

fn run_manybody(cfg: &ExperimentConfig, out: &mut Output) -> Result<RunResult, CliError> {
    let m = cfg.manybody.as_ref().ok_or_else(|| invalid("missing [manybody]".into()))?;
    let chain = Chain::new(m.sites, m.half_width, m.external.build().map_err(invalid)?, m.twobody.build().map_err(invalid)?)?;
    let c0 = chain_datum(&chain, m);
    let mf = MeanFieldConfig { hartree_dt: m.hartree_dt, ..Default::default() };
    let rows = mean_field_deviation(&chain, &c0, m.t, &m.particles, &mf)?;
    let mut csv = String::from("N,dim,deviation,number_drift\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{},{}\n", r.particles, r.dim, f(r.deviation), f(r.number_drift)));
    }
    out.write("deviation.csv", csv.as_bytes())?;
    let mcfg = cfg.minimize.config(cfg.seed);
    let lcfg = LanczosConfig { seed: cfg.seed, ..Default::default() };
    let table = ground_energy_scaling(&chain, &m.particles, &mcfg, &lcfg)?;
    let mut csv = String::from("N,dim,E0,E0_per_N,gap,trial\n");
    for r in &table.rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.particles,
            r.dim,
            f(r.ground_energy),
            f(r.per_particle),
            f(r.gap),
            f(r.trial)
        ));
    }
    out.write("energies.csv", csv.as_bytes())?;
    let probe = if m.probe_particles > 0 {
        let p = conjecture_probe(&chain, m.probe_particles, m.probe_count, &mcfg, &lcfg)?;
        let mut csv = String::from("index,exact,predicted,gap,below_threshold\n");
        for (i, r) in p.rows.iter().enumerate() {
            csv.push_str(&format!("{i},{},{},{},{}\n", f(r.exact), f(r.predicted), f(r.gap), r.below_threshold));
        }
        out.write("conjecture.csv", csv.as_bytes())?;
        Some(json!({ "particles": p.particles, "threshold": p.threshold, "levels": p.levels }))
    } else {
        None
    };
    println!(
        "manybody: δ_N = [{}], e₀ = {:.10e}",
        rows.iter().map(|r| format!("{:.4e}", r.deviation)).collect::<Vec<_>>().join(", "),
        table.e0
    );
    done(json!({ "e0": table.e0, "deviation": rows, "probe": probe }))
}

fn run_blowup(cfg: &ExperimentConfig, out: &mut Output) -> Result<RunResult, CliError> {
    let model = build_model(cfg)?;
    let q = critical_point(&model, cfg.blowup.omega, &cfg.minimize.config(cfg.seed))?;
    out.write("q.bin", &snapshot_bytes(&q.q)?)?;
    let prop = cfg.run.propagator();
    let mut csv = String::from("eps,charge,status,t_event,max_gradnorm_ratio\n");
    let mut runs = Vec::new();
    let mut event = None;
    for (i, &eps) in cfg.blowup.eps.iter().enumerate() {
        let log = evolve(&model, &q.q.scaled(C64::new(1.0 + eps, 0.0)), &prop)?;
        out.write(&format!("records_{i}.csv"), &records_bytes(&log.records))?;
        let g0 = log.records.first().map_or(1.0, |r| r.grad_norm);
        let ratio = log.records.iter().map(|r| r.grad_norm / g0).fold(0.0, f64::max);
        let (status, t) = match &log.outcome {
            Outcome::Completed => ("completed", f64::NAN),
            Outcome::BlowupDetected { t } => ("blowup_detected", *t),
            Outcome::Aborted { t, .. } => ("aborted", *t),
        };
        let charge = log.records.first().map_or(f64::NAN, |r| r.charge);
        csv.push_str(&format!("{},{},{status},{},{}\n", f(eps), f(charge), f(t), f(ratio)));
        println!("blowup: (1{eps:+})Q → {status}{}", if t.is_nan() { String::new() } else { format!(" at t = {t:.6}") });
        if event.is_none() && log.outcome != Outcome::Completed {
            event = Some(log.outcome.clone());
        }
        runs.push(json!({ "eps": eps, "charge": charge, "outcome": outcome_json(&log.outcome), "max_gradnorm_ratio": ratio }));
    }
    out.write("blowup.csv", csv.as_bytes())?;
    Ok(RunResult {
        outcome: event.unwrap_or(Outcome::Completed),
        summary: json!({ "critical_point": ground_state_json(&model, &q), "runs": runs }),
    })
}

fn run_stability(cfg: &ExperimentConfig, out: &mut Output) -> Result<RunResult, CliError> {
    let model = build_model(cfg)?;
    let st = &cfg.stability;
    let gs = minimize(&model, st.charge, &cfg.minimize.config(cfg.seed))?;
    let plan = model.plan();
    let bump = smooth_random(&model, cfg.seed)?;
    let psi0 = gs.q.add_scaled(C64::new(st.delta / h1_norm(plan, &bump), 0.0), &bump)?;
    let d0 = manifold_distance(plan, &psi0, &gs.q)?.distance;
    let prop = PropagatorConfig { snapshot_every: None, ..cfg.run.propagator() };
    let near = stability_run(&model, &psi0, &gs.q, &prop)?;
    let mut csv = String::from("t,distance\n");
    for (t, d) in &near.distances {
        csv.push_str(&row(&[*t, *d]));
        csv.push('\n');
    }
    out.write("distance.csv", csv.as_bytes())?;
    let mut outcome = near.log.outcome.clone();
    let moving = if st.boost.iter().any(|v| *v != 0.0) {
        let qv = boost(plan, &gs.q, st.boost, [0.0; 3], 0.0)?;
        let r = stability_run(&model, &qv, &qv, &prop)?;
        let mut csv = String::from("t,distance\n");
        for (t, d) in &r.distances {
            csv.push_str(&row(&[*t, *d]));
            csv.push('\n');
        }
        out.write("distance_boosted.csv", csv.as_bytes())?;
        if outcome == Outcome::Completed {
            outcome = r.log.outcome.clone();
        }
        Some(r.sup)
    } else {
        None
    };
    println!("stability: d(ψ₀) = {d0:.4e}, sup_t d(ψ(t)) = {:.4e}", near.sup);
    Ok(RunResult {
        outcome,
        summary: json!({
            "ground_state": ground_state_json(&model, &gs),
            "initial_distance": d0,
            "sup_distance": near.sup,
            "sup_distance_boosted": moving,
        }),
    })
}
