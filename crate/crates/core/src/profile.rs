//! Stationary shock profiles `A(U) U_x = q(U)` connecting `U-` to `U+`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::eigenframe::real_eigen;
use crate::error::{Error, Result};
use crate::model::{ModelKind, ModelSpec};
use crate::ode::Dopri5;

/// Values below this are treated as numerical noise when fitting tails.
pub const NOISE_FLOOR: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayFit {
    /// Envelope amplitude `c_k`; dominates the data on the whole half-line.
    pub amplitude: f64,
    /// Exponential rate `theta_k`.
    pub rate: f64,
}

/// Decay fits of `|d^k/dx^k (U - U±)|` on both sides.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SideFits {
    pub minus: DecayFit,
    pub plus: DecayFit,
}

impl SideFits {
    pub fn min_rate(&self) -> f64 {
        self.minus.rate.min(self.plus.rate)
    }

    pub fn max_amplitude(&self) -> f64 {
        self.minus.amplitude.max(self.plus.amplitude)
    }
}

/// A sampled profile with analytic derivative samples.
///
/// Node-major storage: component `c` of node `i` lives at `i * dim + c`.
#[derive(Debug, Clone)]
pub struct ProfileRep {
    pub x: Vec<f64>,
    pub dim: usize,
    pub values: Vec<f64>,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
    pub d3: Vec<f64>,
    pub u_minus: Vec<f64>,
    pub u_plus: Vec<f64>,
    /// Fits for k = 0, 1, 2; `None` when the tail is below the noise floor.
    pub decay: [Option<SideFits>; 3],
}

/// Uniform grid of `n` points on `[-half_width, half_width]`.
pub fn uniform_grid(half_width: f64, n: usize) -> Vec<f64> {
    let dx = 2.0 * half_width / (n as f64 - 1.0);
    (0..n).map(|i| -half_width + i as f64 * dx).collect()
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 8 {
        return Err(Error::invalid("grid", "need at least 8 points"));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) || grid.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("grid", "must be finite and strictly increasing"));
    }
    Ok(())
}

impl ProfileRep {
    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn value(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn deriv(&self, i: usize) -> &[f64] {
        &self.d1[i * self.dim..(i + 1) * self.dim]
    }

    pub fn half_width(&self) -> f64 {
        self.x[self.n() - 1].max(-self.x[0])
    }

    /// Builds a profile from state samples, filling derivatives by
    /// differentiating the profile equation along the samples.
    pub fn from_states(model: &ModelSpec, grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        check_grid(&grid)?;
        let dim = model.dim();
        if values.len() != grid.len() * dim {
            return Err(Error::invalid("values", "length must be n * dim"));
        }
        let mut d1 = vec![0.0; values.len()];
        let mut d2 = vec![0.0; values.len()];
        let mut d3 = vec![0.0; values.len()];
        for i in 0..grid.len() {
            let u = &values[i * dim..(i + 1) * dim];
            let (a, b, c) = profile_derivatives(model, u)?;
            d1[i * dim..(i + 1) * dim].copy_from_slice(a.as_slice());
            d2[i * dim..(i + 1) * dim].copy_from_slice(b.as_slice());
            d3[i * dim..(i + 1) * dim].copy_from_slice(c.as_slice());
        }
        let mut p = ProfileRep {
            x: grid,
            dim,
            values,
            d1,
            d2,
            d3,
            u_minus: model.u_minus.clone(),
            u_plus: model.u_plus.clone(),
            decay: [None; 3],
        };
        p.refit();
        Ok(p)
    }

    /// A spatially constant profile (all derivatives zero).
    pub fn constant(grid: Vec<f64>, state: &[f64]) -> Result<Self> {
        check_grid(&grid)?;
        let dim = state.len();
        let n = grid.len();
        let values: Vec<f64> = (0..n).flat_map(|_| state.iter().copied()).collect();
        Ok(ProfileRep {
            x: grid,
            dim,
            values,
            d1: vec![0.0; n * dim],
            d2: vec![0.0; n * dim],
            d3: vec![0.0; n * dim],
            u_minus: state.to_vec(),
            u_plus: state.to_vec(),
            decay: [None; 3],
        })
    }

    fn refit(&mut self) {
        for k in 0..3 {
            self.decay[k] = fit_decay(self, k).ok();
        }
    }

    fn locate(&self, x: f64) -> usize {
        let n = self.n();
        if x <= self.x[0] {
            return 0;
        }
        if x >= self.x[n - 1] {
            return n - 2;
        }
        match self.x.binary_search_by(|p| p.partial_cmp(&x).unwrap()) {
            Ok(i) => i.min(n - 2),
            Err(i) => i - 1,
        }
    }

    /// Cubic Hermite interpolation of the profile and its derivative.
    /// Outside the grid the endstate is returned with zero derivative.
    pub fn interpolate(&self, x: f64) -> (Vec<f64>, Vec<f64>) {
        let n = self.n();
        let d = self.dim;
        if x < self.x[0] {
            return (self.value(0).to_vec(), vec![0.0; d]);
        }
        if x > self.x[n - 1] {
            return (self.value(n - 1).to_vec(), vec![0.0; d]);
        }
        let i = self.locate(x);
        let (x0, x1) = (self.x[i], self.x[i + 1]);
        let h = x1 - x0;
        let t = (x - x0) / h;
        let (t2, t3) = (t * t, t * t * t);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        let g00 = (6.0 * t2 - 6.0 * t) / h;
        let g10 = 3.0 * t2 - 4.0 * t + 1.0;
        let g01 = (-6.0 * t2 + 6.0 * t) / h;
        let g11 = 3.0 * t2 - 2.0 * t;
        let mut v = vec![0.0; d];
        let mut dv = vec![0.0; d];
        for c in 0..d {
            let (p0, p1) = (self.values[i * d + c], self.values[(i + 1) * d + c]);
            let (m0, m1) = (self.d1[i * d + c], self.d1[(i + 1) * d + c]);
            v[c] = h00 * p0 + h10 * h * m0 + h01 * p1 + h11 * h * m1;
            dv[c] = g00 * p0 + g10 * m0 + g01 * p1 + g11 * m1;
        }
        (v, dv)
    }

    /// Largest distance of the grid ends from the respective endstates.
    pub fn endstate_gap(&self) -> f64 {
        let n = self.n();
        let left = self.value(0).iter().zip(&self.u_minus).map(|(a, b)| (a - b).abs());
        let right = self.value(n - 1).iter().zip(&self.u_plus).map(|(a, b)| (a - b).abs());
        left.chain(right).fold(0.0, f64::max)
    }

    /// Sup over nodes of the fourth-order finite-difference derivative
    /// minus the stored derivative samples (uniform interior nodes only).
    pub fn derivative_consistency(&self) -> f64 {
        let d = self.dim;
        let mut worst = 0.0_f64;
        for i in 2..self.n().saturating_sub(2) {
            let h = self.x[i + 1] - self.x[i];
            for c in 0..d {
                let v = |j: usize| self.values[j * d + c];
                let fd = (v(i - 2) - 8.0 * v(i - 1) + 8.0 * v(i + 1) - v(i + 2)) / (12.0 * h);
                worst = worst.max((fd - self.d1[i * d + c]).abs());
            }
        }
        worst
    }
}

/// `(U_x, U_xx, U_xxx)` at a point of the profile, by differentiating
/// `A(U) U_x = q(U)` along the orbit.
pub fn profile_derivatives(model: &ModelSpec, u: &[f64]) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>)> {
    let n = model.dim();
    let a = model.a_unchecked(u);
    let lu = a.clone().lu();
    let q = model.q_unchecked(u);
    let ux = lu
        .solve(&q)
        .ok_or_else(|| Error::Precondition("A(U) is singular along the profile".into()))?;
    let qm = model.Q_unchecked(u);
    let mut buf = DMatrix::zeros(n, n);
    // A-dot = sum_k dA/du_k ux_k
    let mut adot = DMatrix::zeros(n, n);
    for k in 0..n {
        model.da_into(u, k, buf.as_mut_slice());
        adot += &buf * ux[k];
    }
    let uxx = lu
        .solve(&(&qm * &ux - &adot * &ux))
        .ok_or_else(|| Error::Precondition("A(U) is singular along the profile".into()))?;
    let mut addot = DMatrix::zeros(n, n);
    let mut qdot = DMatrix::zeros(n, n);
    for k in 0..n {
        model.da_into(u, k, buf.as_mut_slice());
        addot += &buf * uxx[k];
        model.dq_jac_into(u, k, buf.as_mut_slice());
        qdot += &buf * ux[k];
        for m in 0..n {
            model.d2a_into(u, k, m, buf.as_mut_slice());
            addot += &buf * (ux[k] * ux[m]);
        }
    }
    let rhs = &qdot * &ux + &qm * &uxx - &addot * &ux - (&adot * &uxx) * 2.0;
    let uxxx = lu
        .solve(&rhs)
        .ok_or_else(|| Error::Precondition("A(U) is singular along the profile".into()))?;
    Ok((ux, uxx, uxxx))
}

/// Closed-form Jin–Xin profile for a quadratic flux.
///
/// Along the profile `v - s u` is constant and `u` solves the scalar
/// Riccati equation `(a^2 - s^2) eps u_x = c2 (u - u-)(u - u+)`, whose
/// heteroclinic is `u = m - h tanh(k x)` with `m`, `h` the midpoint and
/// half-jump of the endstates and `k = c2 h / ((a^2 - s^2) eps)`.
pub fn exact_jinxin_profile(model: &ModelSpec, grid: Vec<f64>) -> Result<ProfileRep> {
    check_grid(&grid)?;
    let (a, eps, flux) = match &model.kind {
        ModelKind::JinXin { a, eps, flux } => (*a, *eps, flux.clone()),
        ModelKind::Custom => return Err(Error::NotApplicable("model is not Jin–Xin".into())),
    };
    let degree = flux.iter().rposition(|&c| c != 0.0).unwrap_or(0);
    if degree != 2 {
        return Err(Error::NotApplicable("flux is not quadratic".into()));
    }
    let c2 = flux[2];
    let s = model.shock_speed;
    let (um, up) = (model.u_minus[0], model.u_plus[0]);
    if s.abs() >= a {
        return Err(Error::NotApplicable("shock speed reaches the relaxation speed".into()));
    }
    let m = 0.5 * (um + up);
    let h = 0.5 * (um - up);
    let k = c2 * h / ((a * a - s * s) * eps);
    if !(k > 0.0) {
        return Err(Error::NotApplicable("endstates violate the entropy ordering".into()));
    }
    let c = model.u_minus[1] - s * um;
    let n = grid.len();
    let mut values = vec![0.0; 2 * n];
    let mut d1 = vec![0.0; 2 * n];
    let mut d2 = vec![0.0; 2 * n];
    let mut d3 = vec![0.0; 2 * n];
    for (i, &x) in grid.iter().enumerate() {
        let z = k * x;
        let th = z.tanh();
        let sech2 = 1.0 / z.cosh().powi(2);
        let u = m - h * th;
        let u1 = -h * k * sech2;
        let u2 = 2.0 * h * k * k * sech2 * th;
        let u3 = 2.0 * h * k.powi(3) * sech2 * (sech2 - 2.0 * th * th);
        values[2 * i] = u;
        values[2 * i + 1] = s * u + c;
        for (arr, du) in [(&mut d1, u1), (&mut d2, u2), (&mut d3, u3)] {
            arr[2 * i] = du;
            arr[2 * i + 1] = s * du;
        }
    }
    let mut p = ProfileRep {
        x: grid,
        dim: 2,
        values,
        d1,
        d2,
        d3,
        u_minus: model.u_minus.clone(),
        u_plus: model.u_plus.clone(),
        decay: [None; 3],
    };
    p.refit();
    Ok(p)
}

/// Shooting along the one-dimensional unstable manifold of `U-`.
pub fn solve_profile(model: &ModelSpec, half_width: f64, n: usize, tol: f64) -> Result<ProfileRep> {
    if !(half_width > 0.0) {
        return Err(Error::invalid("profile.X", "half-width must be positive"));
    }
    if n < 8 {
        return Err(Error::invalid("profile.n", "need at least 8 grid points"));
    }
    solve_profile_on_grid(model, uniform_grid(half_width, n), tol)
}

const MAX_ARCLENGTH: f64 = 1e4;

pub fn solve_profile_on_grid(model: &ModelSpec, grid: Vec<f64>, tol: f64) -> Result<ProfileRep> {
    check_grid(&grid)?;
    if !(tol > 0.0) {
        return Err(Error::invalid("profile.tol", "must be positive"));
    }
    let dim = model.dim();
    let um = model.u_minus.clone();
    let upl = model.u_plus.clone();
    let a_minus = model.a_unchecked(&um);
    let a_inv = a_minus
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Precondition("A(U-) is singular".into()))?;
    let jac = &a_inv * model.Q_unchecked(&um);
    let scale = 1.0 + jac.amax();
    let eig = real_eigen(&jac);
    let unstable: Vec<_> = eig.iter().filter(|(re, _)| *re > 1e-9 * scale).collect();
    if unstable.is_empty() {
        return Err(Error::NoConnection(
            "linearisation at U- has no unstable direction, so no orbit leaves U-".into(),
        ));
    }
    if unstable.len() > 1 || unstable[0].1.abs() > 1e-9 * scale {
        return Err(Error::NoUnstableDirection(format!(
            "expected exactly one real unstable eigenvalue, found {}",
            unstable.len()
        )));
    }
    let mu = unstable[0].0;
    let mut r = null_vector(&(&jac - DMatrix::identity(dim, dim) * mu));
    let jump = DVector::from_vec(upl.iter().zip(&um).map(|(p, m)| p - m).collect());
    if r.dot(&jump) < 0.0 {
        r = -r;
    }
    let jump_norm = jump.norm();
    // pinned component: the first one, unless it does not jump
    let pin = if jump[0].abs() > 1e-12 * jump_norm {
        0
    } else {
        jump.iamax()
    };
    let mid = 0.5 * (um[pin] + upl[pin]);

    let solver = Dopri5::new(tol / 10.0, tol / 100.0);
    let mut fail: Option<Error> = None;
    let mut rhs = |y: &[f64], out: &mut [f64]| {
        let a = model.a_unchecked(y);
        let q = model.q_unchecked(y);
        match a.lu().solve(&q) {
            Some(v) => out.copy_from_slice(v.as_slice()),
            None => out.iter_mut().for_each(|o| *o = f64::NAN),
        }
    };

    // leave U- and run until the pinned component crosses the midpoint
    let eta = 1e-7 * jump_norm;
    let mut y: Vec<f64> = um.iter().zip(r.iter()).map(|(m, ri)| m + eta * ri).collect();
    let mut h = 0.0;
    let chunk = 0.25;
    let side = |y: &[f64]| (y[pin] - mid) * jump[pin].signum();
    let mut travelled = 0.0;
    while side(&y) < 0.0 {
        let before = y.clone();
        solver
            .advance(&mut rhs, &mut y, chunk, &mut h)
            .map_err(|e| Error::NoConnection(format!("integration from U- failed: {e}")))?;
        travelled += chunk;
        if !model.contains(&y) || travelled > MAX_ARCLENGTH {
            return Err(Error::NoConnection("orbit leaves the state box before the midpoint".into()));
        }
        if side(&y) >= 0.0 {
            // bisection on the sub-span from `before`
            let (mut lo, mut hi) = (0.0, chunk);
            for _ in 0..60 {
                let s = 0.5 * (lo + hi);
                let mut z = before.clone();
                let mut hz = 0.0;
                solver
                    .advance(&mut rhs, &mut z, s, &mut hz)
                    .map_err(Error::NoConnection)?;
                if side(&z) < 0.0 {
                    lo = s;
                } else {
                    hi = s;
                }
            }
            let mut z = before.clone();
            let mut hz = 0.0;
            solver
                .advance(&mut rhs, &mut z, 0.5 * (lo + hi), &mut hz)
                .map_err(Error::NoConnection)?;
            y = z;
            break;
        }
    }
    let pinned = y;

    let n = grid.len();
    let mut values = vec![0.0; n * dim];
    let first_pos = grid.iter().position(|&x| x >= 0.0).unwrap_or(n);
    // forward sweep
    let mut y = pinned.clone();
    let mut xc = 0.0;
    let mut h = 0.0;
    for i in first_pos..n {
        solver
            .advance(&mut rhs, &mut y, grid[i] - xc, &mut h)
            .map_err(|e| Error::NoConnection(format!("forward sweep failed: {e}")))?;
        xc = grid[i];
        if !model.contains(&y) {
            fail = Some(Error::NoConnection(format!("orbit leaves the state box at x = {xc:.3}")));
            break;
        }
        values[i * dim..(i + 1) * dim].copy_from_slice(&y);
    }
    if let Some(e) = fail {
        return Err(e);
    }
    // confirm the orbit actually reaches U+ beyond the grid
    let dist = |y: &[f64]| y.iter().zip(&upl).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let mut travelled = 0.0;
    while dist(&y) > tol {
        solver
            .advance(&mut rhs, &mut y, chunk * 8.0, &mut h)
            .map_err(|e| Error::NoConnection(format!("tail continuation failed: {e}")))?;
        travelled += chunk * 8.0;
        if !model.contains(&y) || travelled > MAX_ARCLENGTH {
            return Err(Error::NoConnection(format!(
                "orbit misses U+ by {:.3e} after arclength {travelled:.0}",
                dist(&y)
            )));
        }
    }
    // backward sweep
    let mut y = pinned;
    let mut xc = 0.0;
    let mut h = 0.0;
    for i in (0..first_pos).rev() {
        solver
            .advance(&mut rhs, &mut y, grid[i] - xc, &mut h)
            .map_err(|e| Error::NoConnection(format!("backward sweep failed: {e}")))?;
        xc = grid[i];
        if !model.contains(&y) {
            return Err(Error::NoConnection(format!("orbit leaves the state box at x = {xc:.3}")));
        }
        values[i * dim..(i + 1) * dim].copy_from_slice(&y);
    }
    ProfileRep::from_states(model, grid, values)
}

fn null_vector(m: &DMatrix<f64>) -> DVector<f64> {
    let svd = m.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let k = svd.singular_values.argmin().0;
    v_t.row(k).transpose()
}

/// Least-squares fit of `log |d^k (U - U±)|` against `|x|` on the outer
/// half of each side, with an amplitude that dominates the data on the
/// whole half-line.
pub fn fit_decay(profile: &ProfileRep, k: usize) -> Result<SideFits> {
    if k > 2 {
        return Err(Error::Unsupported(format!("decay fits for k = {k} > 2")));
    }
    let d = profile.dim;
    let field = match k {
        0 => &profile.values,
        1 => &profile.d1,
        2 => &profile.d2,
        _ => unreachable!(),
    };
    let mag = |i: usize, end: &[f64]| -> f64 {
        (0..d)
            .map(|c| {
                let base = if k == 0 { end[c] } else { 0.0 };
                (field[i * d + c] - base).abs()
            })
            .fold(0.0, f64::max)
    };
    let half = profile.half_width();
    let side = |plus: bool| -> Result<DecayFit> {
        let end = if plus { &profile.u_plus } else { &profile.u_minus };
        let on_side = |x: f64| if plus { x >= 0.0 } else { x <= 0.0 };
        let tail: Vec<(f64, f64)> = (0..profile.n())
            .filter(|&i| on_side(profile.x[i]) && profile.x[i].abs() >= 0.5 * half)
            .map(|i| (profile.x[i].abs(), mag(i, end)))
            .collect();
        let above: Vec<(f64, f64)> = tail.iter().copied().filter(|(_, v)| *v >= NOISE_FLOOR).collect();
        if tail.len() < 2 || above.len() < tail.len() {
            let lower = if above.len() >= 2 {
                ls_rate(&above).0.max(0.0)
            } else {
                0.0
            };
            return Err(Error::TailBelowNoise {
                rate_lower_bound: lower,
            });
        }
        let (rate, _) = ls_rate(&tail);
        if !(rate > 0.0) {
            return Err(Error::Precondition("profile tail does not decay".into()));
        }
        let amplitude = (0..profile.n())
            .filter(|&i| on_side(profile.x[i]))
            .map(|i| mag(i, end) * (rate * profile.x[i].abs()).exp())
            .fold(0.0, f64::max);
        Ok(DecayFit { amplitude, rate })
    };
    Ok(SideFits {
        minus: side(false)?,
        plus: side(true)?,
    })
}

/// Returns `(rate, log amplitude)` of the least-squares line through
/// `(|x|, log v)`.
fn ls_rate(data: &[(f64, f64)]) -> (f64, f64) {
    let n = data.len() as f64;
    let (sx, sy) = data
        .iter()
        .fold((0.0, 0.0), |(a, b), (x, v)| (a + x, b + v.ln()));
    let (mx, my) = (sx / n, sy / n);
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (x, v) in data {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (v.ln() - my);
    }
    let slope = sxy / sxx;
    (-slope, my - slope * mx)
}

/// Sup over nodes of `|A(U) U_x - q(U)|`.
pub fn residual(model: &ModelSpec, profile: &ProfileRep) -> f64 {
    let d = profile.dim;
    let mut worst = 0.0_f64;
    for i in 0..profile.n() {
        let u = profile.value(i);
        let a = model.a_unchecked(u);
        let ux = DVector::from_column_slice(profile.deriv(i));
        let r = a * ux - model.q_unchecked(u);
        worst = worst.max(r.amax());
        debug_assert_eq!(r.len(), d);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_jinxin;

    const BURGERS: [f64; 3] = [0.0, 0.0, 0.5];

    fn default_model() -> ModelSpec {
        build_jinxin(2.0, 1.0, &BURGERS, 1.0, -1.0).unwrap()
    }

    #[test]
    fn exact_profile_satisfies_riccati_identity() {
        let m = default_model();
        let p = exact_jinxin_profile(&m, uniform_grid(40.0, 4001)).unwrap();
        // independent check: u = -tanh(x/8) solves 4 u_x = (u^2 - 1)/2
        for (i, &x) in p.x.iter().enumerate() {
            let u = -(x / 8.0).tanh();
            assert!((p.values[2 * i] - u).abs() < 1e-15);
            assert!((p.values[2 * i + 1] - 0.5).abs() < 1e-15);
            let lhs = 4.0 * p.d1[2 * i];
            let rhs = (u * u - 1.0) / 2.0;
            assert!((lhs - rhs).abs() <= 1e-12);
        }
        assert!(residual(&m, &p) <= 1e-12);
        let mid = p.x.iter().position(|&x| x == 0.0).unwrap();
        assert_eq!(p.values[2 * mid], 0.0);
    }

    #[test]
    fn exact_profile_decay_rate() {
        let m = default_model();
        let p = exact_jinxin_profile(&m, uniform_grid(40.0, 4001)).unwrap();
        for k in 0..2 {
            let fit = fit_decay(&p, k).unwrap();
            for f in [fit.minus, fit.plus] {
                assert!((f.rate - 0.25).abs() <= 0.02 * 0.25, "k={k} rate {}", f.rate);
            }
        }
        let f0 = fit_decay(&p, 0).unwrap();
        // tanh asymptotics: |u - u+| ~ 2 exp(-x/4)
        assert!((f0.plus.amplitude - 2.0).abs() < 0.05);
    }

    #[test]
    fn exact_profile_rejects_non_quadratic_and_entropy_violation() {
        let cubic = build_jinxin(2.0, 1.0, &[0.0, 0.0, 0.5, 0.1], 1.0, -1.0).unwrap();
        assert!(matches!(
            exact_jinxin_profile(&cubic, uniform_grid(10.0, 101)),
            Err(Error::NotApplicable(_))
        ));
        let swapped = build_jinxin(2.0, 1.0, &BURGERS, -1.0, 1.0).unwrap();
        assert!(matches!(
            exact_jinxin_profile(&swapped, uniform_grid(10.0, 101)),
            Err(Error::NotApplicable(_))
        ));
    }

    #[test]
    fn shooting_matches_closed_form() {
        let m = default_model();
        let p = solve_profile(&m, 40.0, 4001, 1e-8).unwrap();
        let exact = exact_jinxin_profile(&m, p.x.clone()).unwrap();
        let err = p
            .values
            .iter()
            .zip(&exact.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-6, "sup error {err:e}");
        assert!(residual(&m, &p) <= 1e-10);
        let mid = p.x.iter().position(|&x| x == 0.0).unwrap();
        assert!(p.values[2 * mid].abs() < 1e-10);
        // strictly decreasing u
        assert!(p.values.chunks(2).collect::<Vec<_>>().windows(2).all(|w| w[1][0] < w[0][0]));
        assert!((0..p.n()).all(|i| m.contains(p.value(i))));
    }

    #[test]
    fn shooting_is_translation_covariant() {
        let m = default_model();
        let p = solve_profile(&m, 40.0, 801, 1e-9).unwrap();
        let shifted: Vec<f64> = p.x.iter().map(|x| x + 0.037).collect();
        let q = solve_profile_on_grid(&m, shifted.clone(), 1e-9).unwrap();
        let exact = exact_jinxin_profile(&m, shifted).unwrap();
        let err = q
            .values
            .iter()
            .zip(&exact.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-8, "{err:e}");
        // un-shifting through the interpolant of the unshifted solve
        for i in (10..q.n() - 10).step_by(37) {
            let (v, _) = p.interpolate(q.x[i]);
            assert!((v[0] - q.values[2 * i]).abs() < 1e-8);
        }
    }

    #[test]
    fn entropy_violating_shock_has_no_connection() {
        let m = build_jinxin(2.0, 1.0, &BURGERS, -1.0, 1.0).unwrap();
        assert!(matches!(solve_profile(&m, 40.0, 401, 1e-8), Err(Error::NoConnection(_))));
    }

    #[test]
    fn residual_detects_corruption() {
        let m = default_model();
        let mut p = exact_jinxin_profile(&m, uniform_grid(40.0, 801)).unwrap();
        assert!(residual(&m, &p) <= 1e-10);
        p.values[2 * 400 + 1] += 1e-3;
        assert!(residual(&m, &p) >= 1e-4);

        let flat = ProfileRep::constant(uniform_grid(5.0, 51), &m.u_minus).unwrap();
        assert!(residual(&m, &flat) <= 1e-14);
        assert!(matches!(fit_decay(&flat, 0), Err(Error::TailBelowNoise { .. })));
    }

    #[test]
    fn chain_rule_derivatives_match_closed_form() {
        let m = default_model();
        let exact = exact_jinxin_profile(&m, uniform_grid(20.0, 201)).unwrap();
        let rebuilt = ProfileRep::from_states(&m, exact.x.clone(), exact.values.clone()).unwrap();
        for (arr_a, arr_b) in [(&exact.d1, &rebuilt.d1), (&exact.d2, &rebuilt.d2), (&exact.d3, &rebuilt.d3)] {
            let err = arr_a.iter().zip(arr_b.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-13, "{err:e}");
        }
    }
}
