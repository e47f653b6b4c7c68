//! Stage runners behind the subcommands.

use std::path::{Path, PathBuf};

use relaxdamp_core::characteristics::{
    analytic_h_bound, duhamel_residual, exit_check, launch_points, no_damping_radius, trace_family_set,
    verify_h_bound, CharPath, ExitReport, HBound, NoDampingRadius,
};
use relaxdamp_core::damping::{
    cross_norm_discrepancy, default_weight_constants, fit_damping, l2_h2_norms, ckb_norm, slaving_check,
    weight_fn, weighted_energy_series, EnergySeries, Feasibility, NormKind, SlavingReport, WeightFn,
};
use relaxdamp_core::dynamics::{evolve, EvolveParams, Trajectory};
use relaxdamp_core::eigenframe::{damping_rate, frame_along_profile};
use relaxdamp_core::model::{ModelKind, ModelSpec};
use relaxdamp_core::profile::{
    exact_jinxin_profile, residual, solve_profile_on_grid, uniform_grid, ProfileRep, SideFits,
};
use relaxdamp_core::spectral::{dissipativity_certificate, expansion_check, hyperbolicity_scan, Side};
use relaxdamp_core::Error;
use serde::Serialize;
use serde_json::{json, Value};

use crate::artifacts::{num, ArtifactDir};
use crate::config::{Config, ProfileMethod};
use crate::error::{CliError, StageExt};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Profile,
    Check,
    Evolve,
    Verify,
    All,
}

#[derive(Debug)]
pub struct Outcome {
    pub certified: bool,
    pub artifacts: Vec<PathBuf>,
}

const MODEL_SAMPLES: usize = 256;

fn error_value(e: &Error) -> Value {
    json!({"kind": e.kind(), "message": e.to_string()})
}

/// Output directory: the command-line flag wins over the config.
pub fn output_dir(cfg: &Config, flag: Option<&Path>) -> PathBuf {
    match (flag, &cfg.output.dir) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(d)) => PathBuf::from(d),
        (None, None) => PathBuf::from("out"),
    }
}

pub fn run(cmd: Command, cfg: &Config, out_dir: &Path) -> Result<Outcome, CliError> {
    let mut out = ArtifactDir::create(out_dir)?;
    let model = cfg.build_model().stage("model")?;
    let certified = match cmd {
        Command::Profile => {
            let p = profile_stage(cfg, &model)?;
            write_profile(&mut out, cfg, &model, &p)?;
            true
        }
        Command::Check => {
            let p = profile_stage(cfg, &model);
            if let Ok(p) = &p {
                write_profile(&mut out, cfg, &model, p)?;
            }
            check_stage(&mut out, cfg, &model, p)?
        }
        Command::Evolve => {
            let p = dynamics_profile(cfg, &model)?;
            let traj = evolve_stage(cfg, &model, &p)?;
            write_trajectory(&mut out, cfg, &traj)?;
            true
        }
        Command::Verify => {
            let p = dynamics_profile(cfg, &model)?;
            let traj = evolve_stage(cfg, &model, &p)?;
            verify_stage(&mut out, cfg, &model, &p, &traj)?
        }
        Command::All => {
            let p = profile_stage(cfg, &model);
            if let Ok(p) = &p {
                write_profile(&mut out, cfg, &model, p)?;
            }
            let ok = check_stage(&mut out, cfg, &model, p)?;
            if ok {
                let p = dynamics_profile(cfg, &model)?;
                let traj = evolve_stage(cfg, &model, &p)?;
                write_trajectory(&mut out, cfg, &traj)?;
                verify_stage(&mut out, cfg, &model, &p, &traj)?
            } else {
                false
            }
        }
    };
    Ok(Outcome {
        certified,
        artifacts: out.written().to_vec(),
    })
}

fn solve_on(cfg: &Config, model: &ModelSpec, grid: Vec<f64>) -> relaxdamp_core::Result<ProfileRep> {
    match cfg.profile.method {
        ProfileMethod::Shooting => solve_profile_on_grid(model, grid, cfg.profile.tol),
        ProfileMethod::ClosedForm => exact_jinxin_profile(model, grid),
    }
}

pub fn profile_stage(cfg: &Config, model: &ModelSpec) -> Result<ProfileRep, CliError> {
    solve_on(cfg, model, uniform_grid(cfg.profile.half_width, cfg.profile.n)).stage("profile")
}

/// Profile on the grid of spacing `dynamics.dx`.
pub fn dynamics_profile(cfg: &Config, model: &ModelSpec) -> Result<ProfileRep, CliError> {
    let x = cfg.profile.half_width;
    let n = (2.0 * x / cfg.dynamics.dx).round() as usize + 1;
    solve_on(cfg, model, uniform_grid(x, n)).stage("profile")
}

#[derive(Serialize)]
struct DecayEntry {
    k: usize,
    fit: Option<SideFits>,
}

fn write_profile(out: &mut ArtifactDir, cfg: &Config, model: &ModelSpec, p: &ProfileRep) -> Result<(), CliError> {
    let d = p.dim;
    let mut header = vec!["x".to_string()];
    header.extend((1..=d).map(|c| format!("u{c}")));
    header.extend((1..=d).map(|c| format!("du{c}")));
    let rows = (0..p.n()).map(|i| {
        let mut row = vec![num(p.x[i])];
        row.extend(p.value(i).iter().map(|v| num(*v)));
        row.extend(p.deriv(i).iter().map(|v| num(*v)));
        row
    });
    out.write_csv("profile.csv", &header, rows)?;

    let closed_form_error = match exact_jinxin_profile(model, p.x.clone()) {
        Ok(exact) => Some(
            p.values
                .iter()
                .zip(&exact.values)
                .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs())),
        ),
        Err(_) => None,
    };
    let report = json!({
        "model": model_summary(model),
        "method": cfg.profile.method,
        "X": cfg.profile.half_width,
        "n": p.n(),
        "tol": cfg.profile.tol,
        "residual": residual(model, p),
        "endstate_gap": p.endstate_gap(),
        "derivative_consistency": p.derivative_consistency(),
        "closed_form_error": closed_form_error,
        "decay": (0..3).map(|k| DecayEntry { k, fit: p.decay[k] }).collect::<Vec<_>>(),
    });
    out.write_json("profile.json", &report)?;
    Ok(())
}

fn model_summary(model: &ModelSpec) -> Value {
    let kind = match model.kind {
        ModelKind::JinXin { .. } => "jin_xin",
        ModelKind::Custom => "custom",
    };
    json!({
        "name": model.name,
        "kind": kind,
        "params": model.params,
        "dim": model.dim(),
        "u_minus": model.u_minus,
        "u_plus": model.u_plus,
        "shock_speed": model.shock_speed,
    })
}

/// Certifies the structural assumptions; failures are recorded, not raised.
fn check_stage(
    out: &mut ArtifactDir,
    cfg: &Config,
    model: &ModelSpec,
    profile: Result<ProfileRep, CliError>,
) -> Result<bool, CliError> {
    let sc = &cfg.spectral;
    let validation = model.validate(MODEL_SAMPLES, cfg.seed).stage("check")?;

    let (damping, damping_ok) = match damping_rate(model) {
        Ok(r) => (json!({"pass": true, "theta_e": r.theta_e, "e_minus": r.e_minus, "e_plus": r.e_plus}), true),
        Err(e) if e.is_certification_failure() => (json!({"pass": false, "witness": error_value(&e)}), false),
        Err(e) => return Err(CliError::Core { stage: "check", source: e }),
    };

    let diss = dissipativity_certificate(model, sc.xi_max, sc.n_xi, sc.margin).stage("check")?;
    let diss_ok = diss
        .certificate
        .map(|c| c.threshold <= sc.xi_threshold && c.margin >= sc.margin)
        .unwrap_or(false);
    let witness = diss.witness().map(|(side, xi, re)| json!({"side": side, "xi": xi, "max_re": re}));
    let dissipativity = json!({
        "pass": diss_ok,
        "certificate": diss.certificate.map(|c| json!({"threshold": c.threshold, "margin": c.margin})),
        "required_threshold": sc.xi_threshold,
        "required_margin": sc.margin,
        "witness": witness,
        "symmetry_defect": diss.minus.symmetry_defect.max(diss.plus.symmetry_defect),
    });
    let mut spectrum_rows = Vec::new();
    for scan in [&diss.minus, &diss.plus] {
        for (xi, mu) in scan.xi_grid.iter().zip(&scan.spectra) {
            let mut row = vec![scan.side.name().to_string(), num(*xi)];
            for z in mu {
                row.push(num(z.re));
                row.push(num(z.im));
            }
            spectrum_rows.push(row);
        }
    }
    let d = model.dim();
    let mut header = vec!["side".to_string(), "xi".to_string()];
    for j in 1..=d {
        header.push(format!("re{j}"));
        header.push(format!("im{j}"));
    }
    out.write_csv("spectrum.csv", &header, spectrum_rows)?;

    let expansion: Vec<Value> = [Side::Minus, Side::Plus]
        .iter()
        .map(|&side| match expansion_check(model, side, &sc.expansion_xi) {
            Ok(r) => json!({"side": side, "diagonal": r.diagonal, "remainder": r.remainder}),
            Err(e) => json!({"side": side, "error": error_value(&e)}),
        })
        .collect();

    let (hyperbolicity, hyp_ok) = match profile {
        Ok(p) => match hyperbolicity_scan(model, &p, sc.c_min) {
            Ok(r) => {
                if r.pass {
                    write_frames(out, model, &p)?;
                }
                (serde_json::to_value(r).expect("plain data"), r.pass)
            }
            Err(e) if e.is_certification_failure() => (json!({"pass": false, "witness": error_value(&e)}), false),
            Err(e) => return Err(CliError::Core { stage: "check", source: e }),
        },
        Err(CliError::Core { source, .. }) if source.is_certification_failure() => {
            (json!({"pass": false, "profile_error": error_value(&source)}), false)
        }
        Err(e) => return Err(e),
    };

    let certified = damping_ok && diss_ok && hyp_ok;
    let report = json!({
        "model": model_summary(model),
        "model_validation": validation,
        "hyperbolicity": hyperbolicity,
        "source_damping": damping,
        "dissipativity": dissipativity,
        "expansion": expansion,
        "certified": certified,
    });
    out.write_json("assumptions.json", &report)?;
    Ok(certified)
}

fn write_frames(out: &mut ArtifactDir, model: &ModelSpec, p: &ProfileRep) -> Result<(), CliError> {
    let series = frame_along_profile(model, p, 0.0).stage("check")?;
    let d = model.dim();
    let mut header = vec!["x".to_string()];
    header.extend((1..=d).map(|j| format!("lambda{j}")));
    for j in 1..=d {
        header.extend((1..=d).map(|a| format!("l{j}_{a}")));
    }
    for j in 1..=d {
        header.extend((1..=d).map(|a| format!("r{j}_{a}")));
    }
    let rows = series.frames.iter().enumerate().map(|(i, f)| {
        let mut row = vec![num(p.x[i])];
        row.extend(f.lambdas.iter().map(|v| num(*v)));
        for j in 0..d {
            row.extend((0..d).map(|a| num(f.l[(j, a)])));
        }
        for j in 0..d {
            row.extend((0..d).map(|a| num(f.r[(a, j)])));
        }
        row
    });
    out.write_csv("frames.csv", &header, rows)?;
    Ok(())
}

pub fn evolve_stage(cfg: &Config, model: &ModelSpec, profile: &ProfileRep) -> Result<Trajectory, CliError> {
    let d = &cfg.dynamics;
    let params = EvolveParams {
        t_final: d.t_final,
        backend: d.backend,
        cfl: d.cfl,
        n_out: d.n_out,
        eps_budget: d.eps_budget,
    };
    evolve(model, profile, &d.perturbation, &d.shift, &params).stage("evolve")
}

fn write_trajectory(out: &mut ArtifactDir, cfg: &Config, traj: &Trajectory) -> Result<(), CliError> {
    let d = traj.dim;
    let mut header = vec!["t".to_string(), "x".to_string()];
    header.extend((1..=d).map(|c| format!("u{c}")));
    header.extend((1..=d).map(|c| format!("phi{c}")));
    let (ns, ts) = (cfg.output.node_stride, cfg.output.time_stride);
    let mut rows = Vec::new();
    let last = traj.snapshots.len() - 1;
    for (m, s) in traj.snapshots.iter().enumerate() {
        if m % ts != 0 && m != last {
            continue;
        }
        for i in (0..s.n()).step_by(ns) {
            let mut row = vec![num(s.t), num(traj.x[i])];
            row.extend(s.node(&s.u, i).iter().map(|v| num(*v)));
            row.extend(s.node(&s.phi, i).iter().map(|v| num(*v)));
            rows.push(row);
        }
    }
    out.write_csv("trajectory.csv", &header, rows)?;

    let header: Vec<String> = [
        "t", "delta", "delta_dot", "c0", "c1", "c2", "l2", "h1", "h2", "phi_c0", "psi_tilde_c0", "ups_tilde_c0",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let mut rows = Vec::with_capacity(traj.snapshots.len());
    for s in &traj.snapshots {
        let sob = l2_h2_norms(s, traj.dx).stage("evolve")?;
        let sup = |f: &[f64]| f.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let mut row = vec![num(s.t), num(s.delta), num(s.delta_dot)];
        for k in 0..3 {
            row.push(num(ckb_norm(s, k).stage("evolve")?));
        }
        row.extend([sob.l2, sob.h1, sob.h2].map(num));
        row.extend([sup(&s.phi), sup(&s.psi_t), sup(&s.ups_t)].map(num));
        rows.push(row);
    }
    out.write_csv("norms.csv", &header, rows)?;

    let summary = json!({
        "model": traj.model_name,
        "backend": traj.backend,
        "shift": traj.shift,
        "dx": traj.dx,
        "n": traj.x.len(),
        "dt": traj.dt,
        "n_steps": traj.n_steps,
        "cfl": traj.cfl,
        "eps_budget": traj.eps_budget,
        "localised": traj.localised,
        "budget_violation": traj.budget_violation.map(|(t, v)| json!({"t": t, "c1": v})),
        "T": traj.t_final(),
    });
    out.write_json("evolve.json", &summary)?;
    Ok(())
}

/// Everything the verify stage computes.
pub struct Verification {
    pub radius: NoDampingRadius,
    pub h_bound: Result<HBound, Error>,
    pub exit: ExitReport,
    pub duhamel_residual: f64,
    pub norms: Vec<(NormKind, Result<Feasibility, Error>)>,
    pub slaving: Result<SlavingReport, Error>,
    pub weights: Vec<WeightFn>,
    pub energies: Option<EnergySeries>,
    pub theta_e: f64,
    pub paths: Vec<CharPath>,
    pub certified: bool,
}

/// Keeps certification failures as data and raises everything else.
fn certification<T>(r: relaxdamp_core::Result<T>) -> Result<relaxdamp_core::Result<T>, CliError> {
    match r {
        Err(e) if !e.is_certification_failure() => Err(CliError::Core { stage: "verify", source: e }),
        other => Ok(other),
    }
}

pub fn verification(
    cfg: &Config,
    model: &ModelSpec,
    profile: &ProfileRep,
    traj: &Trajectory,
) -> Result<Verification, CliError> {
    let v = &cfg.verify;
    let theta_e = damping_rate(model).stage("verify")?.theta_e;
    let radius = no_damping_radius(model, profile, traj.eps_budget).stage("verify")?;
    let hyp = hyperbolicity_scan(model, profile, cfg.spectral.c_min)
        .and_then(|r| r.into_result())
        .stage("verify")?;
    let span = (2.0 * radius.radius).max(v.launch_span);
    let starts = launch_points(span, profile.half_width(), v.paths_per_family);
    let paths = trace_family_set(traj, &starts).stage("verify")?;
    let analytic = analytic_h_bound(&radius.tail, hyp.min_abs_speed);
    let h_bound = certification(verify_h_bound(&paths, theta_e, Some(analytic)))?;
    let exit = exit_check(&paths, radius.radius, hyp.min_abs_speed, traj.shift.eps_delta()).stage("verify")?;
    let duhamel = paths.iter().map(duhamel_residual).fold(0.0, f64::max);

    let grid = cfg.theta_grid();
    let mut kinds = vec![NormKind::Ckb(v.k)];
    if traj.localised && v.l2 {
        kinds.extend([NormKind::L2, NormKind::H2]);
    }
    let mut norms = Vec::with_capacity(kinds.len());
    for k in kinds {
        norms.push((k, certification(fit_damping(traj, k, &grid, v.c_cap))?));
    }
    let slaving = certification(slaving_check(traj, &grid, v.c_cap))?;

    let (weights, energies) = if traj.localised {
        let (c_big, c_small) = match &v.weights {
            Some(w) => (w.c_big, w.c_small),
            None => default_weight_constants(&radius.tail),
        };
        let weights = (0..traj.dim)
            .map(|j| weight_fn(model, profile, j, c_big, c_small))
            .collect::<relaxdamp_core::Result<Vec<_>>>()
            .stage("verify")?;
        let series = weighted_energy_series(traj, &weights, theta_e, v.energy_slack).stage("verify")?;
        (weights, Some(series))
    } else {
        (Vec::new(), None)
    };

    let certified = h_bound.is_ok() && exit.pass && norms.iter().all(|(_, r)| r.is_ok()) && slaving.is_ok();
    Ok(Verification {
        radius,
        h_bound,
        exit,
        duhamel_residual: duhamel,
        norms,
        slaving,
        weights,
        energies,
        theta_e,
        paths,
        certified,
    })
}

fn feasibility_value(r: &Result<Feasibility, Error>) -> Value {
    match r {
        Ok(f) => {
            let mut v = serde_json::to_value(f).expect("plain data");
            v["feasible"] = json!(true);
            v["feasible_thetas"] = json!(f.feasible_thetas());
            v
        }
        Err(e) => json!({"feasible": false, "error": error_value(e)}),
    }
}

fn verify_stage(
    out: &mut ArtifactDir,
    cfg: &Config,
    model: &ModelSpec,
    profile: &ProfileRep,
    traj: &Trajectory,
) -> Result<bool, CliError> {
    let ver = verification(cfg, model, profile, traj)?;
    write_verification(out, traj, &ver)?;
    Ok(ver.certified)
}

fn write_verification(out: &mut ArtifactDir, traj: &Trajectory, ver: &Verification) -> Result<(), CliError> {
    let header: Vec<String> = ["family", "x0", "s", "x", "h"].iter().map(|s| s.to_string()).collect();
    let mut rows = Vec::new();
    for p in &ver.paths {
        for i in p.output_indices() {
            rows.push(vec![
                (p.family + 1).to_string(),
                num(p.x0),
                num(p.t[i]),
                num(p.x[i]),
                num(p.h[i]),
            ]);
        }
    }
    out.write_csv("characteristics.csv", &header, rows)?;

    let h_bound = match &ver.h_bound {
        Ok(b) => {
            let mut v = serde_json::to_value(b).expect("plain data");
            v["pass"] = json!(true);
            v["relative_change"] = json!(b.relative_change());
            v
        }
        Err(e) => json!({"pass": false, "error": error_value(e)}),
    };
    let report = json!({
        "theta_e": ver.theta_e,
        "no_damping_radius": ver.radius,
        "h_bound": h_bound,
        "exit": ver.exit,
        "duhamel_residual": ver.duhamel_residual,
        "n_paths": ver.paths.len(),
        "certified": ver.h_bound.is_ok() && ver.exit.pass,
    });
    out.write_json("h_bound.json", &report)?;

    let fits: serde_json::Map<String, Value> = ver
        .norms
        .iter()
        .map(|(k, r)| (k.label(), feasibility_value(r)))
        .collect();
    let slaving = match &ver.slaving {
        Ok(s) => json!({"feasible": true, "psi": feasibility_value(&Ok(s.psi.clone())), "ups": feasibility_value(&Ok(s.ups.clone()))}),
        Err(e) => json!({"feasible": false, "error": error_value(e)}),
    };
    let c0 = ver.norms.iter().find(|(k, _)| matches!(k, NormKind::Ckb(_)));
    let l2 = ver.norms.iter().find(|(k, _)| matches!(k, NormKind::L2));
    let cross = match (c0, l2) {
        (Some((_, Ok(a))), Some((_, Ok(b)))) => Some(cross_norm_discrepancy(a, b, ver.theta_e)),
        _ => None,
    };
    let energy = ver.energies.as_ref().map(|e| {
        json!({
            "end_ratio": e.end_ratio(),
            "flagged": e.flagged.iter().map(Vec::len).collect::<Vec<_>>(),
            "bound": (-2.0 * ver.theta_e * traj.t_final()).exp(),
            "weights": ver.weights.iter().map(|w| json!({
                "family": w.family + 1,
                "c_big": w.c_big,
                "c_small": w.c_small,
                "min": w.min(),
                "max": w.max(),
                "residual": w.residual,
            })).collect::<Vec<_>>(),
        })
    });
    let report = json!({
        "theta_e": ver.theta_e,
        "localised": traj.localised,
        "norms": fits,
        "slaving": slaving,
        "cross_norm_discrepancy": cross,
        "energy": energy,
        "certified": ver.certified,
    });
    out.write_json("damping.json", &report)?;

    if let Some(e) = &ver.energies {
        let d = e.energy.len();
        let mut header = vec!["t".to_string()];
        header.extend((1..=d).map(|j| format!("e{j}")));
        header.extend((1..=d).map(|j| format!("de{j}")));
        let rows = (0..e.t.len()).map(|m| {
            let mut row = vec![num(e.t[m])];
            row.extend(e.energy.iter().map(|s| num(s[m])));
            row.extend(e.rate.iter().map(|s| num(s[m])));
            row
        });
        out.write_csv("energies.csv", &header, rows)?;
    }
    Ok(())
}
