//! End-to-end acceptance checks on the default Jin–Xin configuration.
//!
//! Runs without the libtest harness so every criterion prints exactly one
//! `PASS`/`FAIL` line; the process exits non-zero if any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relaxdamp_core::characteristics::{
    exit_check, launch_points, no_damping_radius, trace_family_set, verify_h_bound,
};
use relaxdamp_core::damping::{
    default_weight_constants, fit_damping, slaving_check, theta_grid, weight_fn, weighted_energy_series,
    EnergySlack, NormKind, C_CAP,
};
use relaxdamp_core::dynamics::{
    evolve, Backend, Dynamics, EvolveParams, PerturbationSpec, ShiftSpec, State, Trajectory,
};
use relaxdamp_core::eigenframe::{damping_rate, decompose, endstate_split, frame_along_profile, theta_matrix};
use relaxdamp_core::model::{build_jinxin, ModelSpec};
use relaxdamp_core::poly::Poly;
use relaxdamp_core::profile::{exact_jinxin_profile, residual, solve_profile, uniform_grid, ProfileRep};
use relaxdamp_core::spectral::{dissipativity_certificate, expansion_check, Side};
use relaxdamp_core::Error;

const HALF_WIDTH: f64 = 40.0;
const NODES: usize = 4001;
const HORIZON: f64 = 80.0;
const THETA_E: f64 = 0.125;
const AMPLITUDE: f64 = 1e-2;
const EPS_BUDGET: f64 = 2e-2;

/// Regression guard on the damping constant, fixed after the first verified run.
const C_GUARD: f64 = 50.0;

type Outcome = (bool, String);

fn model() -> ModelSpec {
    build_jinxin(2.0, 1.0, &[0.0, 0.0, 0.5], 1.0, -1.0).unwrap()
}

fn gaussian(direction: Option<Vec<f64>>) -> PerturbationSpec {
    PerturbationSpec::Gaussian {
        amplitude: AMPLITUDE,
        width: 2.0,
        center: 0.0,
        direction,
    }
}

fn params(t_final: f64, backend: Backend, n_out: usize) -> EvolveParams {
    EvolveParams {
        t_final,
        backend,
        cfl: 0.45,
        n_out,
        eps_budget: EPS_BUDGET,
    }
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn sci(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|x| format!("{x:.2e}")).collect();
    format!("[{}]", items.join(", "))
}

fn sup_mat(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, x| a.max(x.abs()))
}

/// The four long runs shared by criteria 7 to 10.
struct Runs {
    u_gauss: Trajectory,
    v_gauss: Trajectory,
    sinusoid: Trajectory,
    offset: Trajectory,
}

impl Runs {
    fn compute(m: &ModelSpec, p: &ProfileRep) -> Runs {
        let run = |pert: PerturbationSpec, shift: ShiftSpec| {
            evolve(m, p, &pert, &shift, &params(HORIZON, Backend::Moc, 200)).unwrap()
        };
        Runs {
            u_gauss: run(gaussian(None), ShiftSpec::Zero),
            v_gauss: run(gaussian(Some(vec![0.0, 1.0])), ShiftSpec::Zero),
            sinusoid: run(
                gaussian(None),
                ShiftSpec::Sinusoid {
                    amplitude: 0.05,
                    frequency: 0.1,
                },
            ),
            offset: run(
                PerturbationSpec::Offset {
                    d_minus: vec![1e-3, 0.0],
                    d_plus: vec![0.0, 0.0],
                    width: 1.0,
                },
                ShiftSpec::Zero,
            ),
        }
    }
}

fn profile_oracle(m: &ModelSpec, p: &ProfileRep) -> Outcome {
    let mut err = 0.0_f64;
    for (i, x) in p.x.iter().enumerate() {
        let u = p.value(i);
        err = err.max((u[0] + (x / 8.0).tanh()).abs()).max((u[1] - 0.5).abs());
    }
    let res = residual(m, p);
    let rate = p.decay[0].map(|f| f.min_rate()).unwrap_or(f64::NAN);
    let pass = err <= 1e-6 && res <= 1e-10 && (rate / 0.25 - 1.0).abs() <= 0.02;
    (pass, format!("sup error {err:.2e}, residual {res:.2e}, decay rate {rate:.4}"))
}

fn eigenframe(m: &ModelSpec, p: &ProfileRep) -> Outcome {
    let series = frame_along_profile(m, p, 0.0).unwrap();
    let (mut diag, mut ident) = (0.0_f64, 0.0_f64);
    for (i, f) in series.frames.iter().enumerate() {
        let a = m.eval_a(p.value(i)).unwrap();
        let lam = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(f.lambdas.clone()));
        diag = diag.max(sup_mat(&(&f.l * &a * &f.r - lam)));
        ident = ident.max(sup_mat(&(&f.l * &f.r - DMatrix::identity(2, 2))));
    }
    // Hand-derived: speeds -2, 2 with right vectors along (1, -2) and (1, 2).
    let f = decompose(&DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 4.0, 0.0]), 0.0).unwrap();
    let along = |j: usize, slope: f64| (f.r[(1, j)] - slope * f.r[(0, j)]).abs();
    let hand = (f.lambdas[0] + 2.0).abs().max((f.lambdas[1] - 2.0).abs()).max(along(0, -2.0)).max(along(1, 2.0));
    let pass = diag <= 1e-10 && ident <= 1e-10 && hand <= 1e-12 && series.frames.len() == NODES;
    (pass, format!("|LAR - Lambda| {diag:.1e}, |LR - I| {ident:.1e}, hand frame {hand:.1e}"))
}

fn source_split(m: &ModelSpec, p: &ProfileRep) -> Outcome {
    // Closed form at u = +-1 with f'(u) = u, a = 2, eps = 1.
    let expected = |u: f64| [-(1.0 + u / 2.0) / 2.0, -(1.0 - u / 2.0) / 2.0];
    let mut e_err = 0.0_f64;
    for (state, u) in [(&m.u_minus, 1.0), (&m.u_plus, -1.0)] {
        let (_, split) = endstate_split(m, state).unwrap();
        for (got, want) in split.e.iter().zip(expected(u)) {
            e_err = e_err.max((got - want).abs());
        }
    }
    let commutator = |frame: &relaxdamp_core::eigenframe::EigenFrame, f: &DMatrix<f64>| {
        let theta = theta_matrix(frame, f).unwrap();
        let lam = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(frame.lambdas.clone()));
        sup_mat(&(&theta * &lam - &lam * &theta - f))
    };
    let series = frame_along_profile(m, p, 0.0).unwrap();
    let mut node_res = 0.0_f64;
    for (i, frame) in series.frames.iter().enumerate() {
        let split = relaxdamp_core::eigenframe::source_split(frame, &m.eval_Q(p.value(i)).unwrap());
        node_res = node_res.max(commutator(frame, &split.f));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let frame = &series.frames[NODES / 2];
    let mut rand_res = 0.0_f64;
    for _ in 0..100 {
        let f = DMatrix::from_fn(2, 2, |j, k| if j == k { 0.0 } else { rng.gen_range(-1.0..1.0) });
        rand_res = rand_res.max(commutator(frame, &f));
    }
    let pass = e_err <= 1e-12 && node_res <= 1e-12 && rand_res <= 1e-12;
    (pass, format!("E error {e_err:.1e}, commutator nodes {node_res:.1e}, random {rand_res:.1e}"))
}

fn dissipativity(m: &ModelSpec) -> Outcome {
    let report = dissipativity_certificate(m, 1000.0, 2000, 0.1).unwrap();
    let cert = report.certificate;
    let cert_ok = cert.is_some_and(|c| c.threshold <= 5.0 && c.margin >= 0.1);
    let xis = [20.0, 40.0, 80.0, 160.0];
    let mut products = Vec::new();
    for side in [Side::Minus, Side::Plus] {
        let r = expansion_check(m, side, &xis).unwrap();
        for pt in &r.points {
            let dev = pt.re.iter().zip(&r.diagonal).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            products.push(pt.xi.abs() * dev);
        }
    }
    let bounded = products.iter().all(|v| v.is_finite() && *v <= 1.0)
        && products.chunks(xis.len()).all(|c| c[c.len() - 1] <= 2.0 * c[0] + 1e-12);
    let sup_char = build_jinxin(0.5, 1.0, &[0.0, 0.0, 0.5], 1.0, -1.0).unwrap();
    let rate_fails = matches!(damping_rate(&sup_char), Err(Error::NotDissipative { .. }));
    let witness = dissipativity_certificate(&sup_char, 1000.0, 2000, 0.1).unwrap().witness();
    let pass = cert_ok && bounded && rate_fails && witness.is_some();
    let worst = products.iter().cloned().fold(0.0, f64::max);
    (
        pass,
        format!(
            "threshold {:.3}, margin {:.3}, max |xi| remainder {worst:.2e}, a=0.5 witness {:?}",
            cert.map_or(f64::NAN, |c| c.threshold),
            cert.map_or(f64::NAN, |c| c.margin),
            witness.map(|(s, xi, re)| (s.name(), xi, re)),
        ),
    )
}

fn equilibrium(m: &ModelSpec, p: &ProfileRep) -> Outcome {
    let dynamics = Dynamics::new(m, p).unwrap();
    let mut worst = 0.0_f64;
    for backend in [Backend::Moc, Backend::Reference] {
        let mut st = State::new(0.0, vec![0.0; 2 * p.n()], 2);
        let dt = dynamics.stable_dt(&st.u, 0.45, &ShiftSpec::Zero).unwrap();
        for _ in 0..10_000 {
            dynamics.step(backend, &mut st, dt, &ShiftSpec::Zero).unwrap();
        }
        worst = worst.max(sup(&st.u));
    }
    (worst <= 1e-13, format!("sup |U| after 1e4 steps {worst:.1e}"))
}

fn cross_validation(m: &ModelSpec) -> Outcome {
    let mut diffs = Vec::new();
    for dx in [0.04, 0.02, 0.01] {
        let n = (2.0 * HALF_WIDTH / dx).round() as usize + 1;
        let p = exact_jinxin_profile(m, uniform_grid(HALF_WIDTH, n)).unwrap();
        let run = |b| evolve(m, &p, &gaussian(None), &ShiftSpec::Zero, &params(10.0, b, 20)).unwrap();
        let (a, b) = (run(Backend::Moc), run(Backend::Reference));
        let d = a
            .snapshots
            .iter()
            .zip(&b.snapshots)
            .flat_map(|(s, r)| s.u.iter().zip(&r.u).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max);
        diffs.push(d);
    }
    let orders: Vec<f64> = diffs.windows(2).map(|w| (w[0] / w[1]).log2()).collect();

    // u_t + 2 u_x = -u/4 has the solution u0(x - 2t) exp(-t/4).
    let advection = ModelSpec::custom(
        "advection",
        1,
        vec![Poly::constant(1, 2.0)],
        vec![Poly::linear(1, 0, -0.25)],
        vec![0.0],
        vec![0.0],
        0.0,
    )
    .unwrap();
    let flat = ProfileRep::constant(uniform_grid(20.0, 4001), &[0.0]).unwrap();
    let traj = evolve(&advection, &flat, &gaussian(None), &ShiftSpec::Zero, &params(1.0, Backend::Moc, 4)).unwrap();
    let last = traj.snapshots.last().unwrap();
    let exact_err = flat
        .x
        .iter()
        .zip(&last.u)
        .map(|(x, u)| {
            let z = (x - 2.0 * last.t) / 2.0;
            (u - AMPLITUDE * (-0.5 * z * z).exp() * (-0.25 * last.t).exp()).abs()
        })
        .fold(0.0, f64::max);
    let pass = orders.iter().all(|o| *o >= 0.9) && exact_err <= 1e-6;
    (
        pass,
        format!("backend gaps {}, orders {orders:.2?}, closed-form error {exact_err:.1e}", sci(&diffs)),
    )
}

fn h_estimate(m: &ModelSpec, p: &ProfileRep, runs: &Runs) -> Outcome {
    let radius = no_damping_radius(m, p, EPS_BUDGET).unwrap().radius;
    let starts = launch_points((2.0 * radius).max(10.0), HALF_WIDTH, 21);
    let mut details = Vec::new();
    let mut pass = true;
    for (name, traj) in [("u", &runs.u_gauss), ("v", &runs.v_gauss), ("sinusoid", &runs.sinusoid)] {
        let paths = trace_family_set(traj, &starts).unwrap();
        let per_family = (0..2).map(|j| paths.iter().filter(|c| c.family == j).count()).min().unwrap();
        let eps_delta = traj.shift.eps_delta();
        let exit = exit_check(&paths, radius, 2.0, eps_delta).unwrap();
        match verify_h_bound(&paths, THETA_E, None) {
            Ok(b) => {
                let ok = per_family >= 20 && b.c_emp.is_finite() && b.relative_change() <= 0.05 && exit.pass;
                pass &= ok;
                details.push(format!(
                    "{name}: C_emp {:.2e} change {:.1e} exit {:.2}/{:.2}",
                    b.c_emp,
                    b.relative_change(),
                    exit.worst_exit,
                    exit.bound
                ));
            }
            Err(e) => {
                pass = false;
                details.push(format!("{name}: {e}"));
            }
        }
    }
    (pass, format!("R {radius:.2}; {}", details.join("; ")))
}

fn c2_fit(traj: &Trajectory, grid: &[f64], kind: NormKind) -> (bool, String) {
    match fit_damping(traj, kind, grid, C_CAP) {
        Ok(f) => {
            let c = f.c_at_least(0.5 * THETA_E);
            let ok = f.theta_max >= 0.5 * THETA_E && c.is_some_and(|c| c <= C_GUARD);
            (ok, format!("{} theta_max {:.3} C {:.3}", kind.label(), f.theta_max, c.unwrap_or(f64::NAN)))
        }
        Err(e) => (false, format!("{}: {e}", kind.label())),
    }
}

fn damping_certification(runs: &Runs) -> Outcome {
    let grid = theta_grid(0.005, 0.5, 100);
    let (a, da) = c2_fit(&runs.u_gauss, &grid, NormKind::Ckb(2));
    let (b, db) = c2_fit(&runs.sinusoid, &grid, NormKind::Ckb(2));
    let mut slaving_ok = true;
    let mut ds = Vec::new();
    for traj in [&runs.u_gauss, &runs.sinusoid] {
        match slaving_check(traj, &grid, C_CAP) {
            Ok(s) => {
                let ok = s.psi.theta_max >= 0.5 * THETA_E && s.ups.theta_max >= 0.5 * THETA_E;
                slaving_ok &= ok;
                ds.push(format!("{:.2}/{:.2}", s.psi.c_at_theta_max, s.ups.c_at_theta_max));
            }
            Err(e) => {
                slaving_ok = false;
                ds.push(e.to_string());
            }
        }
    }
    (
        a && b && slaving_ok,
        format!("delta=0 {da}; sinusoid {db}; slaving C {}", ds.join(", ")),
    )
}

fn l2_damping(m: &ModelSpec, p: &ProfileRep, runs: &Runs) -> Outcome {
    let tail = relaxdamp_core::characteristics::tail_constants(m, p).unwrap();
    let (c_big, c_small) = default_weight_constants(&tail);
    let weights: Vec<_> = (0..2).map(|j| weight_fn(m, p, j, c_big, c_small).unwrap()).collect();
    let res = weights.iter().map(|w| w.residual).fold(0.0, f64::max);
    let energy = weighted_energy_series(&runs.v_gauss, &weights, THETA_E, EnergySlack::default()).unwrap();
    let ratios = energy.end_ratio();
    // Mass in the conserved component moves the shock, so this run is reported, not gated.
    let mass_ratios = weighted_energy_series(&runs.u_gauss, &weights, THETA_E, EnergySlack::default())
        .unwrap()
        .end_ratio();
    let bound = (-THETA_E * HORIZON).exp();
    let grid = theta_grid(0.005, 0.5, 100);
    let (h2, dh) = c2_fit(&runs.v_gauss, &grid, NormKind::H2);
    let pass = res <= 1e-10 && ratios.iter().all(|r| *r <= bound) && h2;
    (
        pass,
        format!(
            "weight residual {res:.1e}, energy ratios {} vs {bound:.2e} (u-direction run {}); {dh}",
            sci(&ratios),
            sci(&mass_ratios)
        ),
    )
}

fn nonlocalised(runs: &Runs) -> Outcome {
    let grid = theta_grid(0.005, 0.5, 100);
    let (ok, d) = c2_fit(&runs.offset, &grid, NormKind::Ckb(2));
    let l2_refused = matches!(fit_damping(&runs.offset, NormKind::L2, &grid, C_CAP), Err(Error::Precondition(_)));
    (ok && !runs.offset.localised && l2_refused, d)
}

fn cli(bin: &str, cmd: &str, config: &str, dir: &Path) -> (i32, String) {
    let cfg = dir.join(format!("{cmd}-{}.json", dir.read_dir().unwrap().count()));
    std::fs::write(&cfg, config).unwrap();
    let out = Command::new(bin)
        .args([cmd, "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join(format!("out-{}", cfg.file_stem().unwrap().to_string_lossy())))
        .output()
        .unwrap();
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn json_reports(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn determinism_and_cli() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_relaxdamp");
    let tmp = tempfile::tempdir().unwrap();
    let small = r#"{"model": {"kind": "jin_xin"}, "profile": {"X": 20, "n": 1001},
        "dynamics": {"dx": 0.04, "T": 10, "n_out": 50}}"#;
    let mut reports = Vec::new();
    for run in 0..2 {
        let out = tmp.path().join(format!("all{run}"));
        let cfg = tmp.path().join("small.json");
        std::fs::write(&cfg, small).unwrap();
        let status = Command::new(bin)
            .args(["all", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap()
            .status;
        reports.push((status.code(), json_reports(&out)));
    }
    let identical = reports[0] == reports[1] && reports[0].1.len() >= 5 && reports[0].0 == Some(0);

    let (ok_code, _) = cli(bin, "check", r#"{"model": {"kind": "jin_xin"}}"#, tmp.path());
    let (sup_code, _) = cli(bin, "check", r#"{"model": {"kind": "jin_xin", "a": 0.5}}"#, tmp.path());
    let (bad_code, stderr) = cli(bin, "check", r#"{"model": {"kind": "jin_xin", "eps": -1}}"#, tmp.path());
    let codes = ok_code == 0 && sup_code == 3 && bad_code == 2 && stderr.contains("model.eps");
    (
        identical && codes,
        format!(
            "{} JSON reports identical: {identical}; exit codes default {ok_code}, a=0.5 {sup_code}, eps=-1 {bad_code}",
            reports[0].1.len()
        ),
    )
}

fn main() {
    let start = Instant::now();
    let m = model();
    let p = solve_profile(&m, HALF_WIDTH, NODES, 1e-8).unwrap();
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut record = |n: usize, name: &'static str, o: Outcome| {
        println!("criterion {n:>2} {} {name}: {}", if o.0 { "PASS" } else { "FAIL" }, o.1);
        results.push((n, name, o));
    };
    record(1, "profile oracle", profile_oracle(&m, &p));
    record(2, "eigenframe", eigenframe(&m, &p));
    record(3, "source split and commutator", source_split(&m, &p));
    record(4, "dissipativity", dissipativity(&m));
    record(5, "equilibrium", equilibrium(&m, &p));
    record(6, "backend cross-validation", cross_validation(&m));
    let runs = Runs::compute(&m, &p);
    record(7, "H-estimate", h_estimate(&m, &p, &runs));
    record(8, "damping certification", damping_certification(&runs));
    record(9, "weighted L2 damping", l2_damping(&m, &p, &runs));
    record(10, "nonlocalised perturbation", nonlocalised(&runs));
    record(11, "determinism and CLI", determinism_and_cli());
    let failed: Vec<usize> = results.iter().filter(|r| !r.2 .0).map(|r| r.0).collect();
    println!("acceptance: {} of 11 passed in {:.0?}", 11 - failed.len(), start.elapsed());
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
