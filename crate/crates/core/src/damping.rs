//! Norms of stored perturbations, feasibility of damping inequalities over
//! a grid of rates, and the weighted L² energies.

use serde::{Deserialize, Serialize};

use crate::characteristics::TailConstants;
use crate::dynamics::{Snapshot, Trajectory};
use crate::eigenframe::decompose;
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::profile::ProfileRep;

/// Default cap on the damping constant.
pub const C_CAP: f64 = 1e3;
/// Nodes skipped at each end by the sup norms, where differencing is one-sided.
pub const EDGE_SKIP: usize = 4;
/// Tolerance of the weight ODE residual.
pub const WEIGHT_RESIDUAL_TOL: f64 = 1e-10;

/// Which norm a damping fit measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    /// `max_{k <= K} sup |d^k U|`, forced by `|U|_{C^0} + |delta'|`.
    Ckb(usize),
    /// Squared `L^2` norm, forced by `|U|^2_{L^2} + |delta'|^2`.
    L2,
    /// Squared `H^2` norm, forced by `|U|^2_{L^2} + |delta'|^2`.
    H2,
}

impl NormKind {
    pub fn label(&self) -> String {
        match self {
            NormKind::Ckb(k) => format!("C{k}"),
            NormKind::L2 => "L2".into(),
            NormKind::H2 => "H2".into(),
        }
    }
}

fn sup_interior(field: &[f64], d: usize) -> f64 {
    let n = field.len() / d;
    if n <= 2 * EDGE_SKIP {
        return field.iter().fold(0.0, |m, v| m.max(v.abs()));
    }
    field[EDGE_SKIP * d..(n - EDGE_SKIP) * d]
        .iter()
        .fold(0.0, |m, v| m.max(v.abs()))
}

/// `max_{k <= K} sup_x |d^k U / dx^k|` over interior nodes.
pub fn ckb_norm(snap: &Snapshot, k: usize) -> Result<f64> {
    if k > 2 {
        return Err(Error::Unsupported(format!("C^K norm for K = {k} > 2")));
    }
    let fields = [&snap.u, &snap.w, &snap.y];
    Ok(fields[..=k]
        .iter()
        .map(|f| sup_interior(f, snap.dim))
        .fold(0.0, f64::max))
}

/// Gregory end-corrected trapezoid weights on `n >= 6` uniform nodes.
pub fn gregory_weights(n: usize, dx: f64) -> Result<Vec<f64>> {
    if n < 6 {
        return Err(Error::Precondition(format!("quadrature needs at least 6 nodes, got {n}")));
    }
    let mut w = vec![dx; n];
    for (k, c) in [3.0 / 8.0, 7.0 / 6.0, 23.0 / 24.0].iter().enumerate() {
        w[k] = c * dx;
        w[n - 1 - k] = c * dx;
    }
    Ok(w)
}

/// `sum_i w_i sum_c field[i, c]^2`.
pub fn squared_integral(field: &[f64], d: usize, weights: &[f64]) -> f64 {
    weights
        .iter()
        .enumerate()
        .map(|(i, w)| w * field[i * d..(i + 1) * d].iter().map(|v| v * v).sum::<f64>())
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SobolevNorms {
    pub l2: f64,
    pub h1: f64,
    pub h2: f64,
}

pub fn l2_h2_norms(snap: &Snapshot, dx: f64) -> Result<SobolevNorms> {
    let w = gregory_weights(snap.n(), dx)?;
    let (a, b, c) = (
        squared_integral(&snap.u, snap.dim, &w),
        squared_integral(&snap.w, snap.dim, &w),
        squared_integral(&snap.y, snap.dim, &w),
    );
    Ok(SobolevNorms {
        l2: a.sqrt(),
        h1: (a + b).sqrt(),
        h2: (a + b + c).sqrt(),
    })
}

/// Norm and forcing series of a trajectory for one norm kind.
pub fn norm_series(traj: &Trajectory, kind: NormKind) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut norm = Vec::with_capacity(traj.snapshots.len());
    let mut forcing = Vec::with_capacity(traj.snapshots.len());
    for s in &traj.snapshots {
        match kind {
            NormKind::Ckb(k) => {
                norm.push(ckb_norm(s, k)?);
                forcing.push(ckb_norm(s, 0)? + s.delta_dot.abs());
            }
            NormKind::L2 | NormKind::H2 => {
                let n = l2_h2_norms(s, traj.dx)?;
                let value = if kind == NormKind::L2 { n.l2 } else { n.h2 };
                norm.push(value * value);
                forcing.push(n.l2 * n.l2 + s.delta_dot * s.delta_dot);
            }
        }
    }
    Ok((norm, forcing))
}

/// Feasibility table of `N(t) <= C e^{-theta t} N_init + C int_0^t e^{-theta(t-s)} F(s) ds`.
#[derive(Debug, Clone, Serialize)]
pub struct Feasibility {
    pub label: String,
    pub theta_grid: Vec<f64>,
    /// Smallest admissible constant per rate.
    pub c_min: Vec<f64>,
    pub c_cap: f64,
    /// Largest feasible rate and its constant.
    pub theta_max: f64,
    pub c_at_theta_max: f64,
    /// Norm and initial term vanish; every rate passes.
    pub degenerate: bool,
}

impl Feasibility {
    pub fn feasible_thetas(&self) -> Vec<f64> {
        self.theta_grid
            .iter()
            .zip(&self.c_min)
            .filter(|(_, c)| **c <= self.c_cap)
            .map(|(t, _)| *t)
            .collect()
    }

    /// Smallest constant among feasible rates at or above `theta`.
    pub fn c_at_least(&self, theta: f64) -> Option<f64> {
        self.theta_grid
            .iter()
            .zip(&self.c_min)
            .filter(|(t, c)| **t >= theta - 1e-12 && **c <= self.c_cap)
            .map(|(_, c)| *c)
            .reduce(f64::min)
    }
}

/// `C_min(theta) = max_m N_m / (e^{-theta t_m} N_init + I_m)` with the
/// Duhamel integral `I` by the recursive trapezoid rule on output times.
pub fn c_min_curve(times: &[f64], norm: &[f64], n_init: f64, forcing: &[f64], theta: f64) -> f64 {
    let mut integral = 0.0;
    let mut worst = 0.0_f64;
    for m in 0..times.len() {
        if m > 0 {
            let dt = times[m] - times[m - 1];
            let decay = (-theta * dt).exp();
            integral = decay * integral + 0.5 * dt * (decay * forcing[m - 1] + forcing[m]);
        }
        let denom = (-theta * times[m]).exp() * n_init + integral;
        if norm[m] == 0.0 {
            continue;
        }
        if denom <= 0.0 {
            return f64::INFINITY;
        }
        worst = worst.max(norm[m] / denom);
    }
    worst
}

pub fn fit_series(
    label: &str,
    times: &[f64],
    norm: &[f64],
    n_init: f64,
    forcing: &[f64],
    theta_grid: &[f64],
    c_cap: f64,
) -> Result<Feasibility> {
    if theta_grid.is_empty() || theta_grid.iter().any(|t| !(*t >= 0.0)) {
        return Err(Error::invalid("verify.theta_grid", "need non-negative rates"));
    }
    if !(c_cap > 0.0) {
        return Err(Error::invalid("verify.c_cap", "must be positive"));
    }
    if times.len() != norm.len() || times.len() != forcing.len() || times.is_empty() {
        return Err(Error::Precondition("series lengths differ".into()));
    }
    let degenerate = n_init == 0.0 && norm.iter().all(|v| *v == 0.0);
    let c_min: Vec<f64> = theta_grid
        .iter()
        .map(|&th| c_min_curve(times, norm, n_init, forcing, th))
        .collect();
    let best = theta_grid
        .iter()
        .zip(&c_min)
        .filter(|(_, c)| **c <= c_cap)
        .fold(None, |acc: Option<(f64, f64)>, (t, c)| match acc {
            Some((bt, _)) if bt >= *t => acc,
            _ => Some((*t, *c)),
        });
    let Some((theta_max, c_at_theta_max)) = best else {
        return Err(Error::EmptyFeasible {
            best_c: c_min.iter().copied().fold(f64::INFINITY, f64::min),
        });
    };
    Ok(Feasibility {
        label: label.to_string(),
        theta_grid: theta_grid.to_vec(),
        c_min,
        c_cap,
        theta_max,
        c_at_theta_max,
        degenerate,
    })
}

/// Damping fit for one norm kind of a trajectory.
pub fn fit_damping(traj: &Trajectory, kind: NormKind, theta_grid: &[f64], c_cap: f64) -> Result<Feasibility> {
    if !traj.localised && !matches!(kind, NormKind::Ckb(_)) {
        return Err(Error::Precondition(
            "nonlocalised perturbations are not square integrable".into(),
        ));
    }
    let (norm, forcing) = norm_series(traj, kind)?;
    fit_series(&kind.label(), &traj.times(), &norm, norm[0], &forcing, theta_grid, c_cap)
}

#[derive(Debug, Clone, Serialize)]
pub struct SlavingReport {
    pub psi: Feasibility,
    pub ups: Feasibility,
}

/// Fits the conjugated derivative variables against `|Phi|_{C^0} + |delta'|`
/// only, with the joint initial size as the initial term.
pub fn slaving_check(traj: &Trajectory, theta_grid: &[f64], c_cap: f64) -> Result<SlavingReport> {
    let d = traj.dim;
    let times = traj.times();
    let sup = |f: &[f64]| sup_interior(f, d);
    let psi: Vec<f64> = traj.snapshots.iter().map(|s| sup(&s.psi_t)).collect();
    let ups: Vec<f64> = traj.snapshots.iter().map(|s| sup(&s.ups_t)).collect();
    let forcing: Vec<f64> = traj
        .snapshots
        .iter()
        .map(|s| sup(&s.phi) + s.delta_dot.abs())
        .collect();
    let s0 = &traj.snapshots[0];
    let init_psi = sup(&s0.phi).max(psi[0]);
    let init_ups = init_psi.max(ups[0]);
    Ok(SlavingReport {
        psi: fit_series("psi_tilde", &times, &psi, init_psi, &forcing, theta_grid, c_cap)?,
        ups: fit_series("ups_tilde", &times, &ups, init_ups, &forcing, theta_grid, c_cap)?,
    })
}

/// Rates in `[0, 2 theta_E]` feasible in `C^0` but not in `L^2`.
pub fn cross_norm_discrepancy(c0: &Feasibility, l2: &Feasibility, theta_e: f64) -> Vec<f64> {
    let l2_ok = l2.feasible_thetas();
    c0.feasible_thetas()
        .into_iter()
        .filter(|t| *t <= 2.0 * theta_e && !l2_ok.iter().any(|u| (u - t).abs() < 1e-12))
        .collect()
}

/// `n` evenly spaced rates on `[lo, hi]`.
pub fn theta_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![lo];
    }
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
}

/// L² weight `alpha_j` on the profile grid.
#[derive(Debug, Clone, Serialize)]
pub struct WeightFn {
    pub family: usize,
    pub alpha: Vec<f64>,
    pub c_big: f64,
    pub c_small: f64,
    /// Max nodal gap between the Gauss and adaptive Simpson integrations.
    pub residual: f64,
}

impl WeightFn {
    pub fn min(&self) -> f64 {
        self.alpha.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.alpha.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Weight constants with margin over the tail: `(4 C_tail, rate / 2)`.
pub fn default_weight_constants(tail: &TailConstants) -> (f64, f64) {
    (4.0 * tail.c_tail, 0.5 * tail.rate)
}

const GAUSS3: [(f64, f64); 3] = [
    (-0.774_596_669_241_483_4, 5.0 / 9.0),
    (0.0, 8.0 / 9.0),
    (0.774_596_669_241_483_4, 5.0 / 9.0),
];

fn gauss(f: &dyn Fn(f64) -> Result<f64>, a: f64, b: f64) -> Result<f64> {
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    let mut s = 0.0;
    for (p, w) in GAUSS3 {
        s += w * f(mid + half * p)?;
    }
    Ok(half * s)
}

fn simpson(f: &dyn Fn(f64) -> Result<f64>, a: f64, b: f64, tol: f64) -> Result<f64> {
    #[allow(clippy::too_many_arguments)]
    fn rec(
        f: &dyn Fn(f64) -> Result<f64>,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: usize,
    ) -> Result<f64> {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm)?, f(rm)?);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            return Ok(left + right + (left + right - whole) / 15.0);
        }
        Ok(rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?
            + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?)
    }
    let (fa, fb, fm) = (f(a)?, f(b)?, f(0.5 * (a + b))?);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 30)
}

/// Solves `alpha' = -(C e^{-c|x|} / lambda_j(Ubar(x))) alpha` from `x = 0`
/// by cell-wise Gauss quadrature, normalised to `max alpha = 1`.
pub fn weight_fn(model: &ModelSpec, profile: &ProfileRep, j: usize, c_big: f64, c_small: f64) -> Result<WeightFn> {
    if !(c_big > 0.0) || !(c_small > 0.0) {
        return Err(Error::invalid("verify.weights", "weight constants must be positive"));
    }
    if j >= profile.dim {
        return Err(Error::invalid("family", format!("{j} >= dimension {}", profile.dim)));
    }
    let constant = model.a_is_constant();
    let lam_const = if constant {
        Some(decompose(&model.a_unchecked(profile.value(0)), 0.0)?.lambdas[j])
    } else {
        None
    };
    let speed = |x: f64| -> Result<f64> {
        let lam = match lam_const {
            Some(l) => l,
            None => {
                let (u, _) = profile.interpolate(x);
                decompose(&model.a_unchecked(&u), 0.0)
                    .map_err(|e| match e {
                        Error::NotStrictlyHyperbolic { reason, .. } => {
                            Error::NotStrictlyHyperbolic { reason, x: Some(x) }
                        }
                        other => other,
                    })?
                    .lambdas[j]
            }
        };
        if lam.abs() < 1e-12 {
            return Err(Error::Characteristic {
                lambda: lam,
                c_min: 1e-12,
                x: Some(x),
            });
        }
        Ok(lam)
    };
    let integrand = |x: f64| -> Result<f64> { Ok(c_big * (-c_small * x.abs()).exp() / speed(x)?) };

    let xs = &profile.x;
    let n = xs.len();
    // antiderivative from the node closest to zero, split at the kink
    let origin = (0..n)
        .min_by(|&a, &b| xs[a].abs().total_cmp(&xs[b].abs()))
        .expect("non-empty grid");
    let cell = |rule: &dyn Fn(f64, f64) -> Result<f64>, a: f64, b: f64| -> Result<f64> {
        if a < 0.0 && b > 0.0 {
            Ok(rule(a, 0.0)? + rule(0.0, b)?)
        } else {
            rule(a, b)
        }
    };
    let gauss_rule = |a: f64, b: f64| gauss(&integrand, a, b);
    let simpson_rule = |a: f64, b: f64| simpson(&integrand, a, b, 1e-15);
    let mut primitive = vec![0.0; n];
    let mut reference = vec![0.0; n];
    let head = cell(&gauss_rule, 0.0_f64.min(xs[origin]), 0.0_f64.max(xs[origin]))?;
    let head_ref = cell(&simpson_rule, 0.0_f64.min(xs[origin]), 0.0_f64.max(xs[origin]))?;
    let sign = if xs[origin] >= 0.0 { 1.0 } else { -1.0 };
    primitive[origin] = sign * head;
    reference[origin] = sign * head_ref;
    for i in origin + 1..n {
        primitive[i] = primitive[i - 1] + cell(&gauss_rule, xs[i - 1], xs[i])?;
        reference[i] = reference[i - 1] + cell(&simpson_rule, xs[i - 1], xs[i])?;
    }
    for i in (0..origin).rev() {
        primitive[i] = primitive[i + 1] - cell(&gauss_rule, xs[i], xs[i + 1])?;
        reference[i] = reference[i + 1] - cell(&simpson_rule, xs[i], xs[i + 1])?;
    }
    let top = primitive.iter().copied().fold(f64::INFINITY, f64::min);
    let top_ref = reference.iter().copied().fold(f64::INFINITY, f64::min);
    let alpha: Vec<f64> = primitive.iter().map(|p| (top - p).exp()).collect();
    let residual = primitive
        .iter()
        .zip(&reference)
        .zip(&alpha)
        .map(|((p, r), a)| (a - (top_ref - r).exp()).abs().max(((p - top) - (r - top_ref)).abs()))
        .fold(0.0, f64::max);
    if residual > WEIGHT_RESIDUAL_TOL {
        return Err(Error::Precondition(format!(
            "weight quadrature residual {residual:.3e} exceeds {WEIGHT_RESIDUAL_TOL:e}"
        )));
    }
    Ok(WeightFn {
        family: j + 1,
        alpha,
        c_big,
        c_small,
        residual,
    })
}

/// Weighted energies `<Phi_j, alpha_j Phi_j>` and their time derivatives.
#[derive(Debug, Clone, Serialize)]
pub struct EnergySeries {
    pub t: Vec<f64>,
    /// Per family.
    pub energy: Vec<Vec<f64>>,
    pub rate: Vec<Vec<f64>>,
    /// Output times where `e' > -2 theta_E e + slack` per family.
    pub flagged: Vec<Vec<f64>>,
}

impl EnergySeries {
    /// `e_j(T) / e_j(0)` per family; zero when the start is zero.
    pub fn end_ratio(&self) -> Vec<f64> {
        self.energy
            .iter()
            .map(|e| {
                let (first, last) = (e[0], *e.last().expect("non-empty series"));
                if first == 0.0 {
                    0.0
                } else {
                    last / first
                }
            })
            .collect()
    }
}

/// Constants of the slack `k_shift |delta'| + k_quad |Phi|^2_{L^2}` in the
/// energy inequality check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergySlack {
    pub k_shift: f64,
    pub k_quad: f64,
}

impl Default for EnergySlack {
    fn default() -> Self {
        EnergySlack {
            k_shift: 1.0,
            k_quad: 1.0,
        }
    }
}

/// Centred differences inside, second-order one-sided at the ends.
pub fn time_derivative(t: &[f64], e: &[f64]) -> Vec<f64> {
    let m = t.len();
    if m < 3 {
        return vec![0.0; m];
    }
    let mut out = vec![0.0; m];
    for k in 1..m - 1 {
        out[k] = (e[k + 1] - e[k - 1]) / (t[k + 1] - t[k - 1]);
    }
    let h = t[1] - t[0];
    out[0] = (-3.0 * e[0] + 4.0 * e[1] - e[2]) / (2.0 * h);
    let h = t[m - 1] - t[m - 2];
    out[m - 1] = (3.0 * e[m - 1] - 4.0 * e[m - 2] + e[m - 3]) / (2.0 * h);
    out
}

pub fn weighted_energy_series(
    traj: &Trajectory,
    weights: &[WeightFn],
    theta_e: f64,
    slack: EnergySlack,
) -> Result<EnergySeries> {
    let d = traj.dim;
    if weights.len() != d || weights.iter().any(|w| w.alpha.len() != traj.x.len()) {
        return Err(Error::Precondition("one weight per family on the trajectory grid is required".into()));
    }
    let quad = gregory_weights(traj.x.len(), traj.dx)?;
    let t = traj.times();
    let mut energy = vec![Vec::with_capacity(t.len()); d];
    let mut phi_sq = Vec::with_capacity(t.len());
    for s in &traj.snapshots {
        phi_sq.push(squared_integral(&s.phi, d, &quad));
        for (j, w) in weights.iter().enumerate() {
            let e: f64 = (0..traj.x.len())
                .map(|i| quad[i] * w.alpha[i] * s.phi[i * d + j] * s.phi[i * d + j])
                .sum();
            energy[j].push(e);
        }
    }
    let rate: Vec<Vec<f64>> = energy.iter().map(|e| time_derivative(&t, e)).collect();
    let flagged = (0..d)
        .map(|j| {
            (0..t.len())
                .filter(|&m| {
                    let s = &traj.snapshots[m];
                    let allowance = slack.k_shift * s.delta_dot.abs() + slack.k_quad * phi_sq[m];
                    rate[j][m] > -2.0 * theta_e * energy[j][m] + allowance
                })
                .map(|m| t[m])
                .collect()
        })
        .collect();
    Ok(EnergySeries {
        t,
        energy,
        rate,
        flagged,
    })
}
