//! Characteristic curves through a stored trajectory, the Duhamel exponent
//! accumulated along them, and the radius outside which the diagonal
//! source damps uniformly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dynamics::{Dynamics, ShiftSpec, Trajectory};
use crate::eigenframe::{damping_rate, endstate_split};
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::profile::ProfileRep;

/// Tracer sub-steps per output interval.
pub const SUBSTEPS: usize = 8;
/// Minimum number of paths per family for the exponent bound.
pub const MIN_PATHS: usize = 10;
/// Relative growth of the exponent bound between horizons that counts as unbounded.
pub const GROWTH_TOL: f64 = 0.05;

const LIPSCHITZ_SAMPLES: usize = 512;
const LIPSCHITZ_SEED: u64 = 0x5eed;

/// One characteristic `X_j(s)` with the fields sampled along it.
#[derive(Debug, Clone, Serialize)]
pub struct CharPath {
    pub family: usize,
    pub x0: f64,
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    /// `lambda_j - delta'` along the path.
    pub speed: Vec<f64>,
    /// Diagonal source entry along the path.
    pub ediag: Vec<f64>,
    /// Forcing of the diagonal equation along the path.
    pub forcing: Vec<f64>,
    /// Characteristic component `Phi_j` along the path.
    pub phi: Vec<f64>,
    /// Running integral of `ediag`; zero at the start.
    pub h: Vec<f64>,
    /// First time the path left the computational grid.
    pub grid_exit: Option<f64>,
    /// Samples per output interval.
    pub substeps: usize,
}

impl CharPath {
    /// Samples at output times.
    pub fn output_indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.t.len()).step_by(self.substeps)
    }

    /// First time `|X| > radius`.
    pub fn exit_time(&self, radius: f64) -> Option<f64> {
        self.x.iter().zip(&self.t).find(|(x, _)| x.abs() > radius).map(|(_, t)| *t)
    }

    /// `sup_{s <= t <= t_max} H(t) - H(s) + theta (t - s)`.
    pub fn h_excess(&self, theta: f64, t_max: f64) -> f64 {
        let mut low = f64::INFINITY;
        let mut best = 0.0_f64;
        for (h, t) in self.h.iter().zip(&self.t) {
            if *t > t_max + 1e-12 {
                break;
            }
            let g = h + theta * t;
            low = low.min(g);
            best = best.max(g - low);
        }
        best
    }
}

/// Time-and-space interpolation of node-major trajectory fields.
struct FieldSampler<'a> {
    traj: &'a Trajectory,
    x0: f64,
    n: usize,
}

impl<'a> FieldSampler<'a> {
    fn new(traj: &'a Trajectory) -> Result<Self> {
        if traj.snapshots.len() < 2 {
            return Err(Error::Precondition("trajectory needs at least two snapshots".into()));
        }
        if traj.x.len() < 4 {
            return Err(Error::Precondition("trajectory grid needs at least four nodes".into()));
        }
        Ok(FieldSampler {
            traj,
            x0: traj.x[0],
            n: traj.x.len(),
        })
    }

    /// Four-point Lagrange value of component `j`; frozen end values off the grid.
    fn space(&self, field: &[f64], j: usize, x: f64) -> f64 {
        let d = self.traj.dim;
        let s = (x - self.x0) / self.traj.dx;
        if s <= 0.0 {
            return field[j];
        }
        let last = self.n - 1;
        if s >= last as f64 {
            return field[last * d + j];
        }
        let start = (s.floor() as usize).saturating_sub(1).min(self.n - 4);
        let t = s - start as f64;
        let w = [
            -(t - 1.0) * (t - 2.0) * (t - 3.0) / 6.0,
            t * (t - 2.0) * (t - 3.0) / 2.0,
            -t * (t - 1.0) * (t - 3.0) / 2.0,
            t * (t - 1.0) * (t - 2.0) / 6.0,
        ];
        (0..4).map(|k| w[k] * field[(start + k) * d + j]).sum()
    }

    /// Linear-in-time blend between the bracketing snapshots.
    fn sample(&self, pick: impl Fn(&crate::dynamics::Snapshot) -> &[f64], j: usize, t: f64, x: f64) -> f64 {
        let snaps = &self.traj.snapshots;
        let m = self.traj.index_at(t).min(snaps.len() - 2);
        let (a, b) = (&snaps[m], &snaps[m + 1]);
        let w = ((t - a.t) / (b.t - a.t)).clamp(0.0, 1.0);
        let va = self.space(pick(a), j, x);
        if w == 0.0 {
            return va;
        }
        (1.0 - w) * va + w * self.space(pick(b), j, x)
    }

    fn speed(&self, shift: &ShiftSpec, j: usize, t: f64, x: f64) -> f64 {
        self.sample(|s| &s.lambda, j, t, x) - shift.rate(t)
    }
}

/// Traces family `j` from `x0` with [`SUBSTEPS`] tracer steps per output interval.
pub fn trace(traj: &Trajectory, j: usize, x0: f64) -> Result<CharPath> {
    trace_with_substeps(traj, j, x0, SUBSTEPS)
}

/// Heun integration of `X' = lambda_j(t, X) - delta'(t)` over the whole horizon.
pub fn trace_with_substeps(traj: &Trajectory, j: usize, x0: f64, substeps: usize) -> Result<CharPath> {
    if j >= traj.dim {
        return Err(Error::invalid("family", format!("{j} >= dimension {}", traj.dim)));
    }
    if substeps == 0 {
        return Err(Error::invalid("substeps", "must be positive"));
    }
    let (lo, hi) = (traj.x[0], traj.x[traj.x.len() - 1]);
    if !(x0 > lo && x0 < hi) {
        return Err(Error::Precondition(format!("start {x0} outside the grid interior")));
    }
    let sampler = FieldSampler::new(traj)?;
    let shift = &traj.shift;
    let snaps = &traj.snapshots;
    let total = (snaps.len() - 1) * substeps + 1;
    let mut path = CharPath {
        family: j,
        x0,
        t: Vec::with_capacity(total),
        x: Vec::with_capacity(total),
        speed: Vec::with_capacity(total),
        ediag: Vec::with_capacity(total),
        forcing: Vec::with_capacity(total),
        phi: Vec::with_capacity(total),
        h: Vec::new(),
        grid_exit: None,
        substeps,
    };
    let record = |path: &mut CharPath, t: f64, x: f64| {
        path.t.push(t);
        path.x.push(x);
        path.speed.push(sampler.speed(shift, j, t, x));
        path.ediag.push(sampler.sample(|s| &s.ediag, j, t, x));
        path.forcing.push(sampler.sample(|s| &s.g, j, t, x));
        path.phi.push(sampler.sample(|s| &s.phi, j, t, x));
        if path.grid_exit.is_none() && !(lo..=hi).contains(&x) {
            path.grid_exit = Some(t);
        }
    };
    record(&mut path, snaps[0].t, x0);
    let mut x = x0;
    for m in 0..snaps.len() - 1 {
        let (ta, tb) = (snaps[m].t, snaps[m + 1].t);
        let h = (tb - ta) / substeps as f64;
        for k in 0..substeps {
            let t = ta + k as f64 * h;
            let t1 = if k + 1 == substeps { tb } else { t + h };
            let k1 = *path.speed.last().expect("recorded start");
            let k2 = sampler.speed(shift, j, t1, x + h * k1);
            x += 0.5 * h * (k1 + k2);
            record(&mut path, t1, x);
        }
    }
    path.h = accumulate_h(&path.t, &path.ediag);
    Ok(path)
}

/// Trapezoidal running integral, starting from zero.
pub fn accumulate_h(t: &[f64], e: &[f64]) -> Vec<f64> {
    let mut h = Vec::with_capacity(t.len());
    let mut acc = 0.0;
    for k in 0..t.len() {
        if k > 0 {
            acc += 0.5 * (t[k] - t[k - 1]) * (e[k] + e[k - 1]);
        }
        h.push(acc);
    }
    h
}

/// Sup over stored output times of `|Phi_j(t, X(t)) - reconstruction|`, where
/// the reconstruction integrates `Phi' = ediag Phi + forcing` along the path.
/// Only samples before the path leaves the grid are compared.
pub fn duhamel_residual(path: &CharPath) -> f64 {
    let mut worst = 0.0_f64;
    let mut integral = 0.0;
    let phi0 = path.phi[0];
    for k in 0..path.t.len() {
        if let Some(exit) = path.grid_exit {
            if path.t[k] >= exit {
                break;
            }
        }
        if k > 0 {
            let dt = path.t[k] - path.t[k - 1];
            let grow = (path.h[k] - path.h[k - 1]).exp();
            integral = grow * integral + 0.5 * dt * (grow * path.forcing[k - 1] + path.forcing[k]);
        }
        if k % path.substeps == 0 {
            let rebuilt = phi0 * path.h[k].exp() + integral;
            worst = worst.max((rebuilt - path.phi[k]).abs());
        }
    }
    worst
}

/// `count` start points spread evenly over `[-span, span]`, kept inside
/// 90% of the grid half-width.
pub fn launch_points(span: f64, half_width: f64, count: usize) -> Vec<f64> {
    let s = span.min(0.9 * half_width);
    if count <= 1 {
        return vec![0.0];
    }
    (0..count)
        .map(|k| -s + 2.0 * s * k as f64 / (count - 1) as f64)
        .collect()
}

pub fn trace_family_set(traj: &Trajectory, starts: &[f64]) -> Result<Vec<CharPath>> {
    let mut paths = Vec::with_capacity(traj.dim * starts.len());
    for j in 0..traj.dim {
        for &x0 in starts {
            paths.push(trace(traj, j, x0)?);
        }
    }
    Ok(paths)
}

#[derive(Debug, Clone, Serialize)]
pub struct FamilyBound {
    pub family: usize,
    pub n_paths: usize,
    /// Empirical constant over `[0, T/2]`.
    pub c_half: f64,
    /// Empirical constant over `[0, T]`.
    pub c_full: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct HBound {
    pub theta_e: f64,
    pub t_final: f64,
    pub families: Vec<FamilyBound>,
    /// Max of `c_full` over families.
    pub c_emp: f64,
    /// Bound assembled from fitted tail constants, for comparison only.
    pub analytic_bound: Option<f64>,
}

impl HBound {
    /// Largest relative change of the empirical constant between horizons.
    pub fn relative_change(&self) -> f64 {
        self.families
            .iter()
            .map(|f| {
                let scale = f.c_half.abs().max(f.c_full.abs());
                if scale < 1e-12 {
                    0.0
                } else {
                    (f.c_full - f.c_half).abs() / scale
                }
            })
            .fold(0.0, f64::max)
    }
}

/// Empirical constant `C` in `H_j(t) - H_j(s) <= -theta (t - s) + C` over
/// all path samples, at the full horizon and at half of it.
pub fn verify_h_bound(paths: &[CharPath], theta_e: f64, analytic_bound: Option<f64>) -> Result<HBound> {
    if !(theta_e >= 0.0) {
        return Err(Error::invalid("theta_e", "must be non-negative"));
    }
    let dim = paths.iter().map(|p| p.family + 1).max().unwrap_or(0);
    let t_final = paths
        .iter()
        .filter_map(|p| p.t.last().copied())
        .fold(0.0, f64::max);
    let mut families = Vec::with_capacity(dim);
    for j in 0..dim {
        let own: Vec<&CharPath> = paths.iter().filter(|p| p.family == j).collect();
        if own.len() < MIN_PATHS {
            return Err(Error::Precondition(format!(
                "family {} has {} paths, need at least {MIN_PATHS}",
                j + 1,
                own.len()
            )));
        }
        let c = |t_max: f64| own.iter().map(|p| p.h_excess(theta_e, t_max)).fold(0.0, f64::max);
        let (c_half, c_full) = (c(0.5 * t_final), c(t_final));
        if c_full > (1.0 + GROWTH_TOL) * c_half + 1e-9 || !c_full.is_finite() {
            return Err(Error::NotBounded {
                c_short: c_half,
                c_long: c_full,
            });
        }
        families.push(FamilyBound {
            family: j + 1,
            n_paths: own.len(),
            c_half,
            c_full,
        });
    }
    let c_emp = families.iter().map(|f| f.c_full).fold(0.0, f64::max);
    Ok(HBound {
        theta_e,
        t_final,
        families,
        c_emp,
        analytic_bound,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ExitReport {
    pub radius: f64,
    /// `2R / (c - eps_delta)` plus one tracer step.
    pub bound: f64,
    pub n_checked: usize,
    /// Latest exit time among checked paths; infinite if one never exits.
    pub worst_exit: f64,
    pub pass: bool,
}

/// Every path launched in `[-R, R]` must leave it within the monotone bound.
pub fn exit_check(paths: &[CharPath], radius: f64, c_nonchar: f64, eps_delta: f64) -> Result<ExitReport> {
    let c = c_nonchar - eps_delta;
    if !(c > 0.0) {
        return Err(Error::Characteristic {
            lambda: c_nonchar,
            c_min: eps_delta,
            x: None,
        });
    }
    let step = paths
        .iter()
        .find(|p| p.t.len() > 1)
        .map(|p| p.t[1] - p.t[0])
        .unwrap_or(0.0);
    let bound = 2.0 * radius / c + step;
    let mut worst = 0.0_f64;
    let mut n = 0;
    for p in paths.iter().filter(|p| p.x0.abs() <= radius) {
        n += 1;
        worst = worst.max(p.exit_time(radius).unwrap_or(f64::INFINITY));
    }
    Ok(ExitReport {
        radius,
        bound,
        n_checked: n,
        worst_exit: worst,
        pass: worst <= bound,
    })
}

/// Constants of the tail term `C_tail e^{-rate |x|}` bounding how far the
/// diagonal source along the profile sits from its endstate value.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TailConstants {
    /// Lipschitz constant of the diagonal source entries over the state box.
    pub c_lip: f64,
    /// Sensitivity of the diagonal source to the profile slope.
    pub c_slope: f64,
    /// Amplitude of `|U - U±|`.
    pub c0: f64,
    /// Amplitude of `|U_x|`.
    pub c1: f64,
    pub c_tail: f64,
    pub rate: f64,
}

/// Max over families of `sum_k |d E_jj / d u_k|`, by central differences at
/// seeded points of the state box. Non-hyperbolic samples are skipped.
pub fn source_lipschitz(model: &ModelSpec) -> Result<f64> {
    let d = model.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(LIPSCHITZ_SEED);
    let mut worst = 0.0_f64;
    let mut used = 0;
    let diag = |u: &[f64]| -> Option<Vec<f64>> { endstate_split(model, u).ok().map(|(_, s)| s.e.iter().copied().collect()) };
    for k in 0..LIPSCHITZ_SAMPLES + 2 {
        let u: Vec<f64> = match k {
            0 => model.u_minus.clone(),
            1 => model.u_plus.clone(),
            _ => model
                .state_box
                .iter()
                .map(|&(lo, hi)| if hi > lo { rng.gen_range(lo..=hi) } else { lo })
                .collect(),
        };
        let mut grad = vec![0.0; d];
        let mut ok = true;
        for c in 0..d {
            let (lo, hi) = model.state_box[c];
            let h = 1e-5 * (hi - lo).max(1.0);
            let (mut up, mut dn) = (u.clone(), u.clone());
            up[c] += h;
            dn[c] -= h;
            match (diag(&up), diag(&dn)) {
                (Some(a), Some(b)) => {
                    for j in 0..d {
                        grad[j] += ((a[j] - b[j]) / (2.0 * h)).abs();
                    }
                }
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            used += 1;
            worst = worst.max(grad.iter().copied().fold(0.0, f64::max));
        }
    }
    if used == 0 {
        return Err(Error::NotStrictlyHyperbolic {
            reason: "no hyperbolic sample in the state box".into(),
            x: None,
        });
    }
    Ok(worst)
}

/// Diagonal source entries `E_jj(Ubar(x))` per node.
fn profile_diagonals(model: &ModelSpec, profile: &ProfileRep) -> Result<Vec<Vec<f64>>> {
    (0..profile.n())
        .map(|i| {
            endstate_split(model, profile.value(i))
                .map(|(_, s)| s.e.iter().copied().collect())
                .map_err(|e| match e {
                    Error::NotStrictlyHyperbolic { reason, .. } => Error::NotStrictlyHyperbolic {
                        reason,
                        x: Some(profile.x[i]),
                    },
                    other => other,
                })
        })
        .collect()
}

/// `C_tail = C_lip c0 + C_slope c1` with rate the slowest fitted tail rate.
pub fn tail_constants(model: &ModelSpec, profile: &ProfileRep) -> Result<TailConstants> {
    let fit0 = profile.decay[0]
        .ok_or_else(|| Error::Precondition("profile has no fitted tail for |U - U±|".into()))?;
    let c_lip = source_lipschitz(model)?;
    let mut c_slope = 0.0_f64;
    if !model.a_is_constant() {
        let dynamics = Dynamics::new(model, profile)?;
        let zero = vec![0.0; profile.values.len()];
        let snap = dynamics.snapshot(0.0, zero, None, &ShiftSpec::Zero)?;
        let plain = profile_diagonals(model, profile)?;
        let d = profile.dim;
        for (i, e) in plain.iter().enumerate() {
            let slope = profile.deriv(i).iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            if slope < 1e-8 {
                continue;
            }
            for j in 0..d {
                c_slope = c_slope.max((snap.ediag[i * d + j] - e[j]).abs() / slope);
            }
        }
    }
    let (c1, rate) = match profile.decay[1] {
        Some(fit1) => (fit1.max_amplitude(), fit0.min_rate().min(fit1.min_rate())),
        None if c_slope == 0.0 => (0.0, fit0.min_rate()),
        None => return Err(Error::Precondition("profile has no fitted tail for |U_x|".into())),
    };
    let c0 = fit0.max_amplitude();
    Ok(TailConstants {
        c_lip,
        c_slope,
        c0,
        c1,
        c_tail: c_lip * c0 + c_slope * c1,
        rate,
    })
}

/// `2 C_tail / (c theta)`, the size of the exponent excess the tail can produce.
pub fn analytic_h_bound(tail: &TailConstants, c_nonchar: f64) -> f64 {
    2.0 * tail.c_tail / (c_nonchar * tail.rate)
}

#[derive(Debug, Clone, Serialize)]
pub struct NoDampingRadius {
    pub radius: f64,
    pub theta_e: f64,
    pub eps_budget: f64,
    pub tail: TailConstants,
}

/// Smallest grid radius `R` with
/// `E_jj(Ubar(x)) + C_tail e^{-rate |x|} + C_lip eps <= -theta_E` for all
/// `|x| >= R` and all families.
pub fn no_damping_radius(model: &ModelSpec, profile: &ProfileRep, eps_budget: f64) -> Result<NoDampingRadius> {
    if !(eps_budget >= 0.0) {
        return Err(Error::invalid("eps_budget", "must be non-negative"));
    }
    let rate = damping_rate(model)?;
    let tail = tail_constants(model, profile)?;
    let diag = profile_diagonals(model, profile)?;
    let emax: Vec<f64> = diag.iter().map(|e| e.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect();
    let far = 2.0 * rate.half_max_entry;
    let radius = radius_from_samples(&profile.x, &emax, far, &tail, eps_budget, rate.theta_e)?;
    Ok(NoDampingRadius {
        radius,
        theta_e: rate.theta_e,
        eps_budget,
        tail,
    })
}

/// Radius search on sampled `max_j E_jj`; `far` is the endstate maximum used
/// to extend the search beyond the grid.
pub fn radius_from_samples(
    x: &[f64],
    emax: &[f64],
    far: f64,
    tail: &TailConstants,
    eps: f64,
    theta_e: f64,
) -> Result<f64> {
    let floor = far + tail.c_lip * eps;
    if floor > -theta_e {
        return Err(Error::EpsilonTooLarge);
    }
    let bad = |k: usize| emax[k] + tail.c_tail * (-tail.rate * x[k].abs()).exp() + tail.c_lip * eps > -theta_e;
    let worst_bad = (0..x.len()).filter(|&k| bad(k)).map(|k| x[k].abs()).fold(None, |m: Option<f64>, v| {
        Some(m.map_or(v, |m| m.max(v)))
    });
    let half = x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    match worst_bad {
        None => Ok(x.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()))),
        Some(r) if r >= half => {
            // the tail term alone decides beyond the grid
            Ok((tail.c_tail / (-theta_e - floor)).ln().max(0.0) / tail.rate)
        }
        Some(r) => Ok(x
            .iter()
            .map(|v| v.abs())
            .filter(|v| *v > r)
            .fold(f64::INFINITY, f64::min)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{Backend, Snapshot};
    use crate::model::build_jinxin;
    use crate::profile::{exact_jinxin_profile, uniform_grid};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    const BURGERS: [f64; 3] = [0.0, 0.0, 0.5];

    /// Single-family trajectory with time-independent fields.
    fn synthetic(
        half: f64,
        n: usize,
        t_final: f64,
        n_out: usize,
        shift: ShiftSpec,
        lambda: impl Fn(f64) -> f64,
        ediag: impl Fn(f64) -> f64,
    ) -> Trajectory {
        let x = uniform_grid(half, n);
        let field = |f: &dyn Fn(f64) -> f64| x.iter().map(|&v| f(v)).collect::<Vec<f64>>();
        let snapshots = (0..=n_out)
            .map(|m| Snapshot {
                t: t_final * m as f64 / n_out as f64,
                dim: 1,
                delta: 0.0,
                delta_dot: 0.0,
                u: vec![0.0; n],
                w: vec![0.0; n],
                y: vec![0.0; n],
                phi: vec![0.0; n],
                psi: vec![0.0; n],
                psi_t: vec![0.0; n],
                ups: vec![0.0; n],
                ups_t: vec![0.0; n],
                ediag: field(&ediag),
                g: vec![0.0; n],
                lambda: field(&lambda),
            })
            .collect();
        Trajectory {
            model_name: "synthetic".into(),
            backend: Backend::Moc,
            shift,
            dx: 2.0 * half / (n - 1) as f64,
            x,
            dim: 1,
            dt: 0.0,
            n_steps: 0,
            cfl: 0.0,
            eps_budget: 1.0,
            localised: true,
            budget_violation: None,
            snapshots,
        }
    }

    #[test]
    fn constant_speed_path_is_linear() {
        let traj = synthetic(20.0, 401, 4.0, 10, ShiftSpec::Zero, |_| 2.0, |_| -1.0);
        let p = trace(&traj, 0, -3.0).unwrap();
        for (t, x) in p.t.iter().zip(&p.x) {
            assert_abs_diff_eq!(*x, -3.0 + 2.0 * t, epsilon = 1e-12);
        }
    }

    #[test]
    fn shift_rate_is_subtracted() {
        let shift = ShiftSpec::Linear { rate: 0.5 };
        let traj = synthetic(20.0, 401, 4.0, 10, shift, |_| 2.0, |_| -1.0);
        let p = trace(&traj, 0, 0.0).unwrap();
        assert_abs_diff_eq!(*p.x.last().unwrap(), 1.5 * 4.0, epsilon = 1e-12);
        assert!(p.speed.iter().all(|s| (s - 1.5).abs() < 1e-12));
    }

    #[test]
    fn constant_source_exponent_is_linear() {
        let traj = synthetic(20.0, 401, 4.0, 10, ShiftSpec::Zero, |_| 1.0, |_| -0.3);
        let p = trace(&traj, 0, 0.0).unwrap();
        assert_eq!(p.h[0], 0.0);
        for (t, h) in p.t.iter().zip(&p.h) {
            assert_abs_diff_eq!(*h, -0.3 * t, epsilon = 1e-10);
        }
    }

    #[test]
    fn uniform_damping_leaves_slack() {
        let theta = 0.2;
        let traj = synthetic(20.0, 401, 4.0, 20, ShiftSpec::Zero, |_| 1.0, |_| -2.0 * theta);
        let starts = launch_points(5.0, 20.0, MIN_PATHS);
        let paths = trace_family_set(&traj, &starts).unwrap();
        let b = verify_h_bound(&paths, theta, None).unwrap();
        assert!(b.c_emp <= 1e-12);
    }

    #[test]
    fn too_few_paths_rejected() {
        let traj = synthetic(20.0, 401, 4.0, 20, ShiftSpec::Zero, |_| 1.0, |_| -1.0);
        let paths = trace_family_set(&traj, &[0.0, 1.0]).unwrap();
        assert!(matches!(verify_h_bound(&paths, 0.1, None), Err(Error::Precondition(_))));
    }

    #[test]
    fn overclaimed_rate_is_unbounded() {
        let traj = synthetic(20.0, 401, 8.0, 20, ShiftSpec::Zero, |_| 1.0, |_| -0.2);
        let paths = trace_family_set(&traj, &launch_points(5.0, 20.0, MIN_PATHS)).unwrap();
        assert!(verify_h_bound(&paths, 0.05, None).is_ok());
        assert!(matches!(
            verify_h_bound(&paths, 0.4, None),
            Err(Error::NotBounded { .. })
        ));
    }

    #[test]
    fn beyond_grid_uses_end_values() {
        let traj = synthetic(5.0, 101, 10.0, 10, ShiftSpec::Zero, |x| 1.0 + 0.1 * x.tanh(), |x| x);
        let p = trace(&traj, 0, 4.0).unwrap();
        let exit = p.grid_exit.expect("path leaves the grid");
        assert!(exit > 0.0 && exit < 2.0);
        let last = p.speed.len() - 1;
        assert_abs_diff_eq!(p.speed[last], 1.0 + 0.1 * 5.0_f64.tanh(), epsilon = 1e-12);
        assert_abs_diff_eq!(p.ediag[last], 5.0, epsilon = 1e-12);
    }

    #[test]
    fn path_refinement_is_second_order() {
        let lam = |x: f64| 1.5 + 0.5 * (0.7 * x).sin();
        let traj = synthetic(40.0, 8001, 8.0, 4, ShiftSpec::Zero, lam, |_| -1.0);
        let end = |s: usize| *trace_with_substeps(&traj, 0, -10.0, s).unwrap().x.last().unwrap();
        let fine = end(512);
        let (e1, e2) = ((end(8) - fine).abs(), (end(16) - fine).abs());
        let order = (e1 / e2).log2();
        assert!(order >= 1.8, "observed order {order}");
    }

    #[test]
    fn duhamel_exact_for_pure_decay() {
        let mut traj = synthetic(20.0, 401, 4.0, 40, ShiftSpec::Zero, |_| 1.0, |_| -0.5);
        for s in &mut traj.snapshots {
            let t = s.t;
            s.phi = traj.x.iter().map(|x| (-(x - t) * (x - t)).exp() * (-0.5 * t).exp()).collect();
        }
        let p = trace(&traj, 0, 0.0).unwrap();
        assert!(duhamel_residual(&p) < 1e-10);
    }

    #[test]
    fn exit_within_monotone_bound() {
        let traj = synthetic(20.0, 401, 10.0, 20, ShiftSpec::Zero, |x| 2.0 + 0.5 * x.sin(), |_| -1.0);
        let paths = trace_family_set(&traj, &launch_points(4.0, 20.0, 21)).unwrap();
        let r = exit_check(&paths, 4.0, 1.5, 0.0).unwrap();
        assert_eq!(r.n_checked, 21);
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn lipschitz_of_jinxin_source() {
        let m = build_jinxin(2.0, 1.0, &BURGERS, 1.0, -1.0).unwrap();
        // diagonal entries are affine in u with slope f''/(2 a eps)
        assert_abs_diff_eq!(source_lipschitz(&m).unwrap(), 0.25, epsilon = 1e-6);
    }

    #[test]
    fn jinxin_radius_is_finite_and_damping_holds_outside() {
        let m = build_jinxin(2.0, 1.0, &BURGERS, 1.0, -1.0).unwrap();
        let p = exact_jinxin_profile(&m, uniform_grid(40.0, 4001)).unwrap();
        let r = no_damping_radius(&m, &p, 1e-2).unwrap();
        assert_abs_diff_eq!(r.theta_e, 0.125, epsilon = 1e-12);
        assert_eq!(r.tail.c_slope, 0.0);
        assert!(r.radius > 1.0 && r.radius < 10.0, "R = {}", r.radius);
        let diag = profile_diagonals(&m, &p).unwrap();
        for (i, e) in diag.iter().enumerate() {
            if p.x[i].abs() >= r.radius {
                assert!(e.iter().all(|v| *v <= -r.theta_e));
            }
        }
    }

    #[test]
    fn huge_budget_has_no_radius() {
        let m = build_jinxin(2.0, 1.0, &BURGERS, 1.0, -1.0).unwrap();
        let p = exact_jinxin_profile(&m, uniform_grid(40.0, 4001)).unwrap();
        assert!(matches!(no_damping_radius(&m, &p, 10.0), Err(Error::EpsilonTooLarge)));
    }

    #[test]
    fn flat_damping_without_tail_has_zero_radius() {
        let x = uniform_grid(10.0, 201);
        let theta = 0.1;
        let emax = vec![-2.0 * theta; x.len()];
        let tail = TailConstants {
            c_lip: 1.0,
            c_slope: 0.0,
            c0: 0.0,
            c1: 0.0,
            c_tail: 0.0,
            rate: 1.0,
        };
        let r = radius_from_samples(&x, &emax, -2.0 * theta, &tail, 1e-3, theta).unwrap();
        assert_eq!(r, 0.0);
    }

    proptest! {
        #[test]
        fn accumulated_exponent_is_monotone_under_damping(
            rates in proptest::collection::vec(0.0f64..2.0, 2..40),
        ) {
            let t: Vec<f64> = (0..rates.len()).map(|k| 0.1 * k as f64).collect();
            let e: Vec<f64> = rates.iter().map(|r| -r).collect();
            let h = accumulate_h(&t, &e);
            prop_assert_eq!(h[0], 0.0);
            for k in 1..h.len() {
                prop_assert!(h[k] <= h[k - 1]);
            }
        }

        #[test]
        fn excess_is_nonnegative_and_monotone_in_horizon(
            e in proptest::collection::vec(-1.0f64..1.0, 5..60),
            theta in 0.0f64..1.0,
        ) {
            let t: Vec<f64> = (0..e.len()).map(|k| 0.25 * k as f64).collect();
            let path = CharPath {
                family: 0,
                x0: 0.0,
                h: accumulate_h(&t, &e),
                speed: vec![1.0; e.len()],
                forcing: vec![0.0; e.len()],
                phi: vec![0.0; e.len()],
                x: t.clone(),
                ediag: e,
                grid_exit: None,
                substeps: 1,
                t: t.clone(),
            };
            let t_end = *t.last().unwrap();
            let half = path.h_excess(theta, 0.5 * t_end);
            let full = path.h_excess(theta, t_end);
            prop_assert!(half >= 0.0);
            prop_assert!(full >= half);
        }
    }
}
