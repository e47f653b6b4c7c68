//! Evolution of the shifted perturbation `U(t, x) = V(t, x + delta(t)) - Ubar(x)`
//! of a profile `Ubar`, where `V` solves the full system.
//!
//! The perturbation satisfies
//! `U_t + (A(Ubar + U) - delta') U_x = S(U)` with
//! `S(U) = q(Ubar + U) - q(Ubar) - (A(Ubar + U) - A(Ubar)) Ubar_x + delta' Ubar_x`,
//! so `U = 0` is an exact fixed point when `delta' = 0`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::eigenframe::{decompose, theta_matrix, EigenFrame};
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::profile::ProfileRep;

/// Hard CFL ceiling for both backends.
pub const CFL_LIMIT: f64 = 0.9;
/// Blow-up threshold relative to the smallness budget.
pub const BLOWUP_FACTOR: f64 = 10.0;

/// Prescribed shift `delta(t)` with `delta(0) = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ShiftSpec {
    Zero,
    Linear { rate: f64 },
    Sinusoid { amplitude: f64, frequency: f64 },
}

impl ShiftSpec {
    pub fn delta(&self, t: f64) -> f64 {
        match *self {
            ShiftSpec::Zero => 0.0,
            ShiftSpec::Linear { rate } => rate * t,
            ShiftSpec::Sinusoid { amplitude, frequency } => amplitude * (frequency * t).sin(),
        }
    }

    pub fn rate(&self, t: f64) -> f64 {
        match *self {
            ShiftSpec::Zero => 0.0,
            ShiftSpec::Linear { rate } => rate,
            ShiftSpec::Sinusoid { amplitude, frequency } => amplitude * frequency * (frequency * t).cos(),
        }
    }

    /// Sup of `|delta'|`.
    pub fn eps_delta(&self) -> f64 {
        match *self {
            ShiftSpec::Zero => 0.0,
            ShiftSpec::Linear { rate } => rate.abs(),
            ShiftSpec::Sinusoid { amplitude, frequency } => (amplitude * frequency).abs(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            ShiftSpec::Zero => true,
            ShiftSpec::Linear { rate } => rate.is_finite(),
            ShiftSpec::Sinusoid { amplitude, frequency } => amplitude.is_finite() && frequency.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("dynamics.shift", "parameters must be finite"))
        }
    }
}

/// Initial perturbation `U(0, x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PerturbationSpec {
    Zero,
    /// `amplitude * exp(-(x - center)^2 / (2 width^2)) * direction`.
    Gaussian {
        amplitude: f64,
        width: f64,
        #[serde(default)]
        center: f64,
        /// Defaults to the first unit vector.
        #[serde(default)]
        direction: Option<Vec<f64>>,
    },
    /// Smooth step from `d_minus` to `d_plus`; does not decay at infinity.
    Offset {
        d_minus: Vec<f64>,
        d_plus: Vec<f64>,
        #[serde(default = "default_blend")]
        width: f64,
    },
    /// `Ubar(x + h) - Ubar(x)`.
    ShiftDifference { h: f64 },
}

fn default_blend() -> f64 {
    1.0
}

impl PerturbationSpec {
    pub fn is_localised(&self) -> bool {
        !matches!(self, PerturbationSpec::Offset { .. })
    }

    /// Samples `(U, U_x)` on the profile grid.
    pub fn sample(&self, profile: &ProfileRep) -> Result<(Vec<f64>, Vec<f64>)> {
        let d = profile.dim;
        let n = profile.n();
        let mut u = vec![0.0; n * d];
        let mut w = vec![0.0; n * d];
        match self {
            PerturbationSpec::Zero => {}
            PerturbationSpec::Gaussian {
                amplitude,
                width,
                center,
                direction,
            } => {
                if !(*width > 0.0) || !amplitude.is_finite() || !center.is_finite() {
                    return Err(Error::invalid("dynamics.perturbation", "need finite amplitude and positive width"));
                }
                let dir = match direction {
                    Some(v) if v.len() == d => v.clone(),
                    Some(_) => {
                        return Err(Error::invalid("dynamics.perturbation.direction", format!("expected length {d}")))
                    }
                    None => {
                        let mut e = vec![0.0; d];
                        e[0] = 1.0;
                        e
                    }
                };
                for (i, &x) in profile.x.iter().enumerate() {
                    let z = (x - center) / width;
                    let g = amplitude * (-0.5 * z * z).exp();
                    let gx = -g * z / width;
                    for c in 0..d {
                        u[i * d + c] = g * dir[c];
                        w[i * d + c] = gx * dir[c];
                    }
                }
            }
            PerturbationSpec::Offset { d_minus, d_plus, width } => {
                if d_minus.len() != d || d_plus.len() != d {
                    return Err(Error::invalid("dynamics.perturbation", format!("offsets need length {d}")));
                }
                if !(*width > 0.0) {
                    return Err(Error::invalid("dynamics.perturbation.width", "must be positive"));
                }
                for (i, &x) in profile.x.iter().enumerate() {
                    let th = (x / width).tanh();
                    let sig = 0.5 * (1.0 + th);
                    let dsig = 0.5 * (1.0 - th * th) / width;
                    for c in 0..d {
                        u[i * d + c] = d_minus[c] + (d_plus[c] - d_minus[c]) * sig;
                        w[i * d + c] = (d_plus[c] - d_minus[c]) * dsig;
                    }
                }
            }
            PerturbationSpec::ShiftDifference { h } => {
                for (i, &x) in profile.x.iter().enumerate() {
                    let (v, dv) = profile.interpolate(x + h);
                    for c in 0..d {
                        u[i * d + c] = v[c] - profile.values[i * d + c];
                        w[i * d + c] = dv[c] - profile.d1[i * d + c];
                    }
                }
            }
        }
        Ok((u, w))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Moc,
    Reference,
}

impl Backend {
    pub fn name(&self) -> &'static str {
        match self {
            Backend::Moc => "moc",
            Backend::Reference => "reference",
        }
    }
}

/// Raw evolving state. The far-field states continue the grid on each
/// side and follow the space-homogeneous equation `U_t = S(U)`.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub t: f64,
    pub u: Vec<f64>,
    pub far_left: Vec<f64>,
    pub far_right: Vec<f64>,
}

impl State {
    /// Far-field states are taken from the end nodes.
    pub fn new(t: f64, u: Vec<f64>, dim: usize) -> Self {
        let n = u.len() / dim;
        State {
            t,
            far_left: u[..dim].to_vec(),
            far_right: u[(n - 1) * dim..].to_vec(),
            u,
        }
    }

    /// Grid values padded with `GHOSTS` far-field copies on each side.
    fn extended(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.u.len() + 2 * GHOSTS * self.far_left.len());
        for _ in 0..GHOSTS {
            out.extend_from_slice(&self.far_left);
        }
        out.extend_from_slice(&self.u);
        for _ in 0..GHOSTS {
            out.extend_from_slice(&self.far_right);
        }
        out
    }
}

const GHOSTS: usize = 2;

/// Stored fields at an output time. Node-major, `dim` entries per node.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub t: f64,
    pub dim: usize,
    pub delta: f64,
    pub delta_dot: f64,
    pub u: Vec<f64>,
    /// `U_x`.
    pub w: Vec<f64>,
    /// `U_xx`.
    pub y: Vec<f64>,
    /// `L U`.
    pub phi: Vec<f64>,
    /// `L W`.
    pub psi: Vec<f64>,
    /// `Psi + Theta Phi`.
    pub psi_t: Vec<f64>,
    /// `L Y`.
    pub ups: Vec<f64>,
    /// `Ups + Theta Psi`.
    pub ups_t: Vec<f64>,
    /// Diagonal of the transformed source per family.
    pub ediag: Vec<f64>,
    /// Forcing of the diagonal equations: `Phi_t + D Phi_x = ediag * Phi + g`.
    pub g: Vec<f64>,
    /// Characteristic speeds `lambda_j(Ubar + U)`.
    pub lambda: Vec<f64>,
}

impl Snapshot {
    pub fn n(&self) -> usize {
        self.u.len() / self.dim
    }

    /// Node `i` of a node-major field.
    pub fn node<'s>(&self, field: &'s [f64], i: usize) -> &'s [f64] {
        &field[i * self.dim..(i + 1) * self.dim]
    }
}

/// Frames at every node, flattened: `lam[i*d+j]`, `l[(i*d+j)*d+a]`, `r[(i*d+a)*d+j]`.
struct FrameField {
    lam: Vec<f64>,
    l: Vec<f64>,
    r: Vec<f64>,
}

/// Precomputed profile data and the node-level kernels shared by both
/// backends and the snapshot builder.
pub struct Dynamics<'a> {
    pub model: &'a ModelSpec,
    pub profile: &'a ProfileRep,
    pub dim: usize,
    pub n: usize,
    pub dx: f64,
    x0: f64,
    qbar: Vec<f64>,
    abar_ux: Vec<f64>,
    const_frame: Option<EigenFrame>,
}

fn phi1(z: f64) -> f64 {
    if z.abs() < 1e-5 {
        1.0 + z * (0.5 + z / 6.0)
    } else {
        z.exp_m1() / z
    }
}

/// Four-point Lagrange stencil on a uniform grid; positions beyond the
/// grid collapse to the end node.
#[derive(Clone, Copy)]
struct Stencil {
    start: usize,
    w: [f64; 4],
}

impl<'a> Dynamics<'a> {
    pub fn new(model: &'a ModelSpec, profile: &'a ProfileRep) -> Result<Self> {
        let n = profile.n();
        let dim = model.dim();
        if profile.dim != dim {
            return Err(Error::invalid("profile", "dimension differs from the model"));
        }
        let dx = (profile.x[n - 1] - profile.x[0]) / (n as f64 - 1.0);
        if profile
            .x
            .windows(2)
            .any(|w| ((w[1] - w[0]) - dx).abs() > 1e-9 * dx)
        {
            return Err(Error::invalid("profile", "dynamics needs a uniform grid"));
        }
        let mut qbar = vec![0.0; n * dim];
        let mut abar_ux = vec![0.0; n * dim];
        let mut amat = vec![0.0; dim * dim];
        for i in 0..n {
            let u = profile.value(i);
            model.q_into(u, &mut qbar[i * dim..(i + 1) * dim]);
            model.a_into(u, &mut amat);
            let ux = profile.deriv(i);
            for a in 0..dim {
                abar_ux[i * dim + a] = (0..dim).map(|m| amat[m * dim + a] * ux[m]).sum();
            }
        }
        let const_frame = if model.a_is_constant() {
            Some(decompose(&model.a_unchecked(profile.value(0)), 0.0)?)
        } else {
            None
        };
        Ok(Dynamics {
            model,
            profile,
            dim,
            n,
            dx,
            x0: profile.x[0],
            qbar,
            abar_ux,
            const_frame,
        })
    }

    fn frames(&self, u: &[f64]) -> Result<FrameField> {
        self.frames_mapped(u, 0)
    }

    /// Frames for `u.len() / dim` states, where state `k` sits on profile
    /// node `clamp(k - offset)`.
    fn frames_mapped(&self, u: &[f64], offset: usize) -> Result<FrameField> {
        let d = self.dim;
        let n = u.len() / d;
        let mut f = FrameField {
            lam: vec![0.0; n * d],
            l: vec![0.0; n * d * d],
            r: vec![0.0; n * d * d],
        };
        let mut ut = vec![0.0; d];
        for i in 0..n {
            let owned;
            let node = self.node_of(i, offset);
            let fr = match &self.const_frame {
                Some(fr) => fr,
                None => {
                    self.tilde(node, &u[i * d..(i + 1) * d], &mut ut);
                    owned = decompose(&self.model.a_unchecked(&ut), 0.0).map_err(|e| match e {
                        Error::NotStrictlyHyperbolic { reason, .. } => Error::NotStrictlyHyperbolic {
                            reason,
                            x: Some(self.profile.x[node]),
                        },
                        other => other,
                    })?;
                    &owned
                }
            };
            for j in 0..d {
                f.lam[i * d + j] = fr.lambdas[j];
                for a in 0..d {
                    f.l[(i * d + j) * d + a] = fr.l[(j, a)];
                    f.r[(i * d + a) * d + j] = fr.r[(a, j)];
                }
            }
        }
        Ok(f)
    }

    fn node_of(&self, k: usize, offset: usize) -> usize {
        k.saturating_sub(offset).min(self.n - 1)
    }

    fn tilde(&self, i: usize, u: &[f64], out: &mut [f64]) {
        let ub = self.profile.value(i);
        for c in 0..self.dim {
            out[c] = ub[c] + u[c];
        }
    }

    /// `S(u)` at node `i`.
    fn source(&self, i: usize, u: &[f64], ddot: f64, out: &mut [f64], ut: &mut [f64], amat: &mut [f64]) {
        let d = self.dim;
        self.tilde(i, u, ut);
        self.model.q_into(ut, out);
        let ux = self.profile.deriv(i);
        for c in 0..d {
            out[c] += ddot * ux[c] - self.qbar[i * d + c];
        }
        if self.const_frame.is_none() {
            self.model.a_into(ut, amat);
            for a in 0..d {
                let au: f64 = (0..d).map(|m| amat[m * d + a] * ux[m]).sum();
                out[a] -= au - self.abar_ux[i * d + a];
            }
        }
    }

    /// `Q(ut) - M(ut)` with `M[:, k] = dA/du_k(ut) Ubar_x(i)`, column-major.
    fn linear_coefficient(&self, i: usize, ut: &[f64], out: &mut [f64], buf: &mut [f64]) {
        let d = self.dim;
        self.model.q_jac_into(ut, out);
        if self.const_frame.is_none() {
            let ux = self.profile.deriv(i);
            for k in 0..d {
                self.model.da_into(ut, k, buf);
                for a in 0..d {
                    let v: f64 = (0..d).map(|m| buf[m * d + a] * ux[m]).sum();
                    out[k * d + a] -= v;
                }
            }
        }
    }

    /// Diagonal of `L (Q - M) R` using the frame of node `i`.
    fn ediag_frozen(&self, f: &FrameField, i: usize, coef: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for j in 0..d {
            let mut s = 0.0;
            for a in 0..d {
                let lja = f.l[(i * d + j) * d + a];
                if lja == 0.0 {
                    continue;
                }
                for b in 0..d {
                    s += lja * coef[b * d + a] * f.r[(i * d + b) * d + j];
                }
            }
            out[j] = s;
        }
    }

    /// Stencil on the ghost-extended grid of `n + 2 GHOSTS` points.
    fn stencil(&self, x: f64) -> Stencil {
        let m = self.n + 2 * GHOSTS;
        let s = (x - self.x0) / self.dx + GHOSTS as f64;
        if s <= 0.0 {
            return Stencil {
                start: 0,
                w: [1.0, 0.0, 0.0, 0.0],
            };
        }
        if s >= (m - 1) as f64 {
            return Stencil {
                start: m - 4,
                w: [0.0, 0.0, 0.0, 1.0],
            };
        }
        let k = s.floor() as usize;
        let mut start = k.saturating_sub(1).min(m - 4);
        // feet inside the grid never read ghosts
        if s >= GHOSTS as f64 {
            start = start.max(GHOSTS);
        }
        if s <= (GHOSTS + self.n - 1) as f64 {
            start = start.min(GHOSTS + self.n - 4);
        }
        let t = s - start as f64;
        Stencil {
            start,
            w: [
                -(t - 1.0) * (t - 2.0) * (t - 3.0) / 6.0,
                t * (t - 2.0) * (t - 3.0) / 2.0,
                -t * (t - 1.0) * (t - 3.0) / 2.0,
                t * (t - 1.0) * (t - 2.0) / 6.0,
            ],
        }
    }

    fn apply(st: &Stencil, field: &[f64], stride: usize, c: usize) -> f64 {
        (0..4).map(|k| st.w[k] * field[(st.start + k) * stride + c]).sum()
    }

    fn max_speed(f: &FrameField) -> f64 {
        f.lam.iter().fold(0.0, |m, l| m.max(l.abs()))
    }

    fn check_cfl(&self, f: &FrameField, dt: f64, shift: &ShiftSpec) -> Result<()> {
        let cfl = (Self::max_speed(f) + shift.eps_delta()) * dt / self.dx;
        if cfl > CFL_LIMIT {
            return Err(Error::CflViolation { cfl, limit: CFL_LIMIT });
        }
        Ok(())
    }

    /// Time step for a target CFL number at the current state.
    pub fn stable_dt(&self, u: &[f64], cfl: f64, shift: &ShiftSpec) -> Result<f64> {
        let f = self.frames(u)?;
        let v = Self::max_speed(&f) + shift.eps_delta();
        Ok(cfl * self.dx / v.max(1e-12))
    }

    /// Heun step of `U_t = S(U)` for a far-field state attached to node `i`.
    fn far_field_heun(&self, i: usize, v: &[f64], t: f64, dt: f64, shift: &ShiftSpec) -> Vec<f64> {
        let d = self.dim;
        let mut k1 = vec![0.0; d];
        let mut k2 = vec![0.0; d];
        let mut ut = vec![0.0; d];
        let mut amat = vec![0.0; d * d];
        self.source(i, v, shift.rate(t), &mut k1, &mut ut, &mut amat);
        let vs: Vec<f64> = (0..d).map(|c| v[c] + dt * k1[c]).collect();
        self.source(i, &vs, shift.rate(t + dt), &mut k2, &mut ut, &mut amat);
        (0..d).map(|c| v[c] + 0.5 * dt * (k1[c] + k2[c])).collect()
    }

    /// One step of the characteristic (Duhamel) scheme.
    pub fn step_moc(&self, st: &mut State, dt: f64, shift: &ShiftSpec) -> Result<()> {
        let (n, d) = (self.n, self.dim);
        let t = st.t;
        let u = st.extended();
        let m = n + 2 * GHOSTS;
        let f = self.frames_mapped(&u, GHOSTS)?;
        self.check_cfl(&f, dt, shift)?;
        let (dd_n, dd_h, dd_1) = (shift.rate(t), shift.rate(t + 0.5 * dt), shift.rate(t + dt));

        let mut ut = vec![0.0; d];
        let mut amat = vec![0.0; d * d];
        let mut coef = vec![0.0; d * d];
        let mut s = vec![0.0; d];
        let mut e = vec![0.0; m * d];
        let mut g = vec![0.0; m * d];
        for k in 0..m {
            let node = self.node_of(k, GHOSTS);
            let uk = &u[k * d..(k + 1) * d];
            self.source(node, uk, dd_n, &mut s, &mut ut, &mut amat);
            self.linear_coefficient(node, &ut, &mut coef, &mut amat);
            self.ediag_frozen(&f, k, &coef, &mut e[k * d..(k + 1) * d]);
            for j in 0..d {
                let row = &f.l[(k * d + j) * d..(k * d + j + 1) * d];
                let phi: f64 = row.iter().zip(uk).map(|(a, b)| a * b).sum();
                let ls: f64 = row.iter().zip(&s).map(|(a, b)| a * b).sum();
                g[k * d + j] = ls - e[k * d + j] * phi;
            }
        }

        let mut new_u = vec![0.0; n * d];
        let mut phihat = vec![0.0; d];
        let mut ef = vec![0.0; d];
        let mut gf = vec![0.0; d];
        let mut php = vec![0.0; d];
        let mut up = vec![0.0; d];
        let mut ep = vec![0.0; d];
        for i in 0..n {
            let k = i + GHOSTS;
            let xi = self.x0 + i as f64 * self.dx;
            for j in 0..d {
                let c0 = f.lam[k * d + j] - dd_h;
                let sm = self.stencil(xi - 0.5 * c0 * dt);
                let c_mid = Self::apply(&sm, &f.lam, d, j) - dd_h;
                let sf = self.stencil(xi - c_mid * dt);
                let row = &f.l[(k * d + j) * d..(k * d + j + 1) * d];
                let mut ph = 0.0;
                for a in 0..d {
                    ph += row[a] * Self::apply(&sf, &u, d, a);
                }
                phihat[j] = ph;
                ef[j] = Self::apply(&sf, &e, d, j);
                gf[j] = Self::apply(&sf, &g, d, j);
                php[j] = ph * (dt * ef[j]).exp() + dt * phi1(dt * ef[j]) * gf[j];
            }
            for a in 0..d {
                up[a] = (0..d).map(|j| f.r[(k * d + a) * d + j] * php[j]).sum();
            }
            self.source(i, &up, dd_1, &mut s, &mut ut, &mut amat);
            self.linear_coefficient(i, &ut, &mut coef, &mut amat);
            self.ediag_frozen(&f, k, &coef, &mut ep);
            for j in 0..d {
                let row = &f.l[(k * d + j) * d..(k * d + j + 1) * d];
                let ls: f64 = row.iter().zip(&s).map(|(a, b)| a * b).sum();
                let gp = ls - ep[j] * php[j];
                let h = 0.5 * dt * (ef[j] + ep[j]);
                php[j] = phihat[j] * h.exp() + dt * (0.5 * h).exp() * 0.5 * (gf[j] + gp);
            }
            for a in 0..d {
                new_u[i * d + a] = (0..d).map(|j| f.r[(k * d + a) * d + j] * php[j]).sum();
            }
        }
        st.far_left = self.far_field_heun(0, &st.far_left, t, dt, shift);
        st.far_right = self.far_field_heun(n - 1, &st.far_right, t, dt, shift);
        st.u = new_u;
        st.t = t + dt;
        Ok(())
    }

    /// Right-hand side on `[far_left, u, far_right]`.
    fn rhs_reference(&self, z: &[f64], t: f64, shift: &ShiftSpec) -> Result<(Vec<f64>, FrameField)> {
        let (n, d) = (self.n, self.dim);
        let u = &z[d..(n + 1) * d];
        let f = self.frames(u)?;
        let ddot = shift.rate(t);
        let mut out = vec![0.0; (n + 2) * d];
        let mut ut = vec![0.0; d];
        let mut amat = vec![0.0; d * d];
        let mut s = vec![0.0; d];
        self.source(0, &z[..d], ddot, &mut s, &mut ut, &mut amat);
        out[..d].copy_from_slice(&s);
        self.source(n - 1, &z[(n + 1) * d..], ddot, &mut s, &mut ut, &mut amat);
        out[(n + 1) * d..].copy_from_slice(&s);
        for i in 0..n {
            // node i sits at position i + 1 of z
            let zi = i + 1;
            self.source(i, &z[zi * d..(zi + 1) * d], ddot, &mut s, &mut ut, &mut amat);
            for j in 0..d {
                let dj = f.lam[i * d + j] - ddot;
                let row = &f.l[(i * d + j) * d..(i * d + j + 1) * d];
                let (lo, hi) = if dj > 0.0 { (zi - 1, zi) } else { (zi, zi + 1) };
                let diff: f64 = (0..d).map(|a| row[a] * (z[hi * d + a] - z[lo * d + a])).sum();
                let flux = dj * diff / self.dx;
                for a in 0..d {
                    s[a] -= f.r[(i * d + a) * d + j] * flux;
                }
            }
            out[zi * d..(zi + 1) * d].copy_from_slice(&s);
        }
        Ok((out, f))
    }

    /// One explicit-midpoint step of first-order characteristic upwinding.
    pub fn step_reference(&self, st: &mut State, dt: f64, shift: &ShiftSpec) -> Result<()> {
        let (n, d) = (self.n, self.dim);
        let mut z = Vec::with_capacity((n + 2) * d);
        z.extend_from_slice(&st.far_left);
        z.extend_from_slice(&st.u);
        z.extend_from_slice(&st.far_right);
        let (k1, f) = self.rhs_reference(&z, st.t, shift)?;
        self.check_cfl(&f, dt, shift)?;
        let half: Vec<f64> = z.iter().zip(&k1).map(|(u, k)| u + 0.5 * dt * k).collect();
        let (k2, _) = self.rhs_reference(&half, st.t + 0.5 * dt, shift)?;
        for (u, k) in z.iter_mut().zip(&k2) {
            *u += dt * k;
        }
        st.far_left = z[..d].to_vec();
        st.far_right = z[(n + 1) * d..].to_vec();
        st.u = z[d..(n + 1) * d].to_vec();
        st.t += dt;
        Ok(())
    }

    pub fn step(&self, backend: Backend, st: &mut State, dt: f64, shift: &ShiftSpec) -> Result<()> {
        match backend {
            Backend::Moc => self.step_moc(st, dt, shift),
            Backend::Reference => self.step_reference(st, dt, shift),
        }
    }

    /// Builds the stored fields. `w` is differenced from `u` unless given.
    pub fn snapshot(&self, t: f64, u: Vec<f64>, w: Option<Vec<f64>>, shift: &ShiftSpec) -> Result<Snapshot> {
        let (n, d) = (self.n, self.dim);
        let w = match w {
            Some(w) => w,
            None => fd4(&u, d, self.dx),
        };
        let y = fd4(&w, d, self.dx);
        let f = self.frames(&u)?;
        let ddot = shift.rate(t);
        let constant = self.const_frame.is_some();

        let mut phi = vec![0.0; n * d];
        let mut psi = vec![0.0; n * d];
        let mut ups = vec![0.0; n * d];
        for i in 0..n {
            for j in 0..d {
                let row = &f.l[(i * d + j) * d..(i * d + j + 1) * d];
                for a in 0..d {
                    phi[i * d + j] += row[a] * u[i * d + a];
                    psi[i * d + j] += row[a] * w[i * d + a];
                    ups[i * d + j] += row[a] * y[i * d + a];
                }
            }
        }

        let mut psi_t = psi.clone();
        let mut ups_t = ups.clone();
        let mut ediag = vec![0.0; n * d];
        let mut g = vec![0.0; n * d];
        let mut ut = vec![0.0; d];
        let mut amat = vec![0.0; d * d];
        let mut coef = vec![0.0; d * d];
        let mut s = vec![0.0; d];
        for i in 0..n {
            self.source(i, &u[i * d..(i + 1) * d], ddot, &mut s, &mut ut, &mut amat);
            self.linear_coefficient(i, &ut, &mut coef, &mut amat);
            let lm = DMatrix::from_fn(d, d, |j, a| f.l[(i * d + j) * d + a]);
            let rm = DMatrix::from_fn(d, d, |a, j| f.r[(i * d + a) * d + j]);
            let cm = DMatrix::from_column_slice(d, d, &coef);
            let mut b = &lm * cm * &rm;
            // frame transport (Lambda - delta') L_x R, zero for constant A
            let mut transport = DMatrix::zeros(d, d);
            if !constant {
                let (lo, hi) = (i.saturating_sub(1), (i + 1).min(n - 1));
                let span = (hi - lo) as f64 * self.dx;
                let lx = DMatrix::from_fn(d, d, |j, a| (f.l[(hi * d + j) * d + a] - f.l[(lo * d + j) * d + a]) / span);
                transport = lx * &rm;
                for j in 0..d {
                    let dj = f.lam[i * d + j] - ddot;
                    for k in 0..d {
                        transport[(j, k)] *= dj;
                    }
                }
                b += &transport;
            }
            let mut ftil = b.clone();
            ftil.fill_diagonal(0.0);
            let frame = EigenFrame {
                lambdas: f.lam[i * d..(i + 1) * d].to_vec(),
                l: lm.clone(),
                r: rm,
            };
            let theta = theta_matrix(&frame, &ftil)?;
            let ph = &phi[i * d..(i + 1) * d];
            let ps = &psi[i * d..(i + 1) * d];
            for j in 0..d {
                ediag[i * d + j] = b[(j, j)];
                let ls: f64 = (0..d).map(|a| lm[(j, a)] * s[a]).sum();
                let tr: f64 = (0..d).map(|k| transport[(j, k)] * ph[k]).sum();
                g[i * d + j] = ls + tr - b[(j, j)] * ph[j];
                for k in 0..d {
                    psi_t[i * d + j] += theta[(j, k)] * ph[k];
                    ups_t[i * d + j] += theta[(j, k)] * ps[k];
                }
            }
        }
        Ok(Snapshot {
            t,
            dim: d,
            delta: shift.delta(t),
            delta_dot: ddot,
            u,
            w,
            y,
            phi,
            psi,
            psi_t,
            ups,
            ups_t,
            ediag,
            g,
            lambda: f.lam,
        })
    }

    /// Sup over nodes of `|W - R Psi|` for a snapshot.
    pub fn psi_roundtrip_error(&self, snap: &Snapshot) -> Result<f64> {
        let d = self.dim;
        let f = self.frames(&snap.u)?;
        let mut worst = 0.0_f64;
        for i in 0..self.n {
            for a in 0..d {
                let rec: f64 = (0..d).map(|j| f.r[(i * d + a) * d + j] * snap.psi[i * d + j]).sum();
                worst = worst.max((rec - snap.w[i * d + a]).abs());
            }
        }
        Ok(worst)
    }
}

/// Fourth-order first derivative on a uniform grid, one-sided at the ends.
pub fn fd4(field: &[f64], d: usize, dx: f64) -> Vec<f64> {
    let n = field.len() / d;
    let mut out = vec![0.0; field.len()];
    let h = 12.0 * dx;
    for c in 0..d {
        let v = |i: usize| field[i * d + c];
        for i in 2..n - 2 {
            out[i * d + c] = (v(i - 2) - 8.0 * v(i - 1) + 8.0 * v(i + 1) - v(i + 2)) / h;
        }
        out[c] = (-25.0 * v(0) + 48.0 * v(1) - 36.0 * v(2) + 16.0 * v(3) - 3.0 * v(4)) / h;
        out[d + c] = (-3.0 * v(0) - 10.0 * v(1) + 18.0 * v(2) - 6.0 * v(3) + v(4)) / h;
        let m = n - 1;
        out[m * d + c] = (25.0 * v(m) - 48.0 * v(m - 1) + 36.0 * v(m - 2) - 16.0 * v(m - 3) + 3.0 * v(m - 4)) / h;
        out[(m - 1) * d + c] =
            (3.0 * v(m) + 10.0 * v(m - 1) - 18.0 * v(m - 2) + 6.0 * v(m - 3) - v(m - 4)) / h;
    }
    out
}

fn sup_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvolveParams {
    pub t_final: f64,
    pub backend: Backend,
    pub cfl: f64,
    pub n_out: usize,
    pub eps_budget: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub model_name: String,
    pub backend: Backend,
    pub shift: ShiftSpec,
    pub x: Vec<f64>,
    pub dim: usize,
    pub dx: f64,
    pub dt: f64,
    pub n_steps: usize,
    /// Realised `max (|lambda| + eps_delta) dt / dx`.
    pub cfl: f64,
    pub eps_budget: f64,
    pub localised: bool,
    /// First output time and value at which `|U|_{C^1}` exceeded the budget.
    pub budget_violation: Option<(f64, f64)>,
    pub snapshots: Vec<Snapshot>,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.t).collect()
    }

    pub fn t_final(&self) -> f64 {
        self.snapshots.last().map(|s| s.t).unwrap_or(0.0)
    }

    /// Index of the last output time not beyond `t`.
    pub fn index_at(&self, t: f64) -> usize {
        let k = self.snapshots.partition_point(|s| s.t <= t + 1e-12);
        k.saturating_sub(1)
    }
}

pub fn evolve(
    model: &ModelSpec,
    profile: &ProfileRep,
    pert: &PerturbationSpec,
    shift: &ShiftSpec,
    params: &EvolveParams,
) -> Result<Trajectory> {
    if !(params.t_final > 0.0) {
        return Err(Error::invalid("dynamics.T", "horizon must be positive"));
    }
    if params.n_out == 0 {
        return Err(Error::invalid("dynamics.n_out", "need at least one output interval"));
    }
    if !(params.cfl > 0.0) {
        return Err(Error::invalid("dynamics.cfl", "must be positive"));
    }
    if params.cfl > CFL_LIMIT {
        return Err(Error::CflViolation {
            cfl: params.cfl,
            limit: CFL_LIMIT,
        });
    }
    if !(params.eps_budget > 0.0) {
        return Err(Error::invalid("dynamics.eps_budget", "must be positive"));
    }
    shift.validate()?;
    let dynamics = Dynamics::new(model, profile)?;
    let (u0, w0) = pert.sample(profile)?;
    let c1 = sup_abs(&u0).max(sup_abs(&w0));
    if c1 > params.eps_budget {
        return Err(Error::BudgetExceeded {
            norm: c1,
            budget: params.eps_budget,
        });
    }
    let dt0 = dynamics.stable_dt(&u0, params.cfl, shift)?;
    let interval = params.t_final / params.n_out as f64;
    let per = (interval / dt0).ceil().max(1.0) as usize;
    let dt = interval / per as f64;
    let vmax = {
        let f = dynamics.frames(&u0)?;
        Dynamics::max_speed(&f)
    };

    let mut snapshots = Vec::with_capacity(params.n_out + 1);
    snapshots.push(dynamics.snapshot(0.0, u0.clone(), Some(w0), shift)?);
    let mut budget_violation = None;
    let mut st = State::new(0.0, u0, model.dim());
    let blowup = BLOWUP_FACTOR * params.eps_budget;
    for m in 1..=params.n_out {
        for k in 0..per {
            dynamics.step(params.backend, &mut st, dt, shift)?;
            st.t = ((m - 1) * per + k + 1) as f64 * dt;
            let norm = sup_abs(&st.u);
            if !(norm <= blowup) {
                return Err(Error::BlowUp { t: st.t, norm });
            }
        }
        st.t = m as f64 * interval;
        let snap = dynamics.snapshot(st.t, st.u.clone(), None, shift)?;
        if budget_violation.is_none() {
            let c1 = sup_abs(&snap.u).max(sup_abs(&snap.w));
            if c1 > params.eps_budget {
                budget_violation = Some((st.t, c1));
            }
        }
        snapshots.push(snap);
    }
    Ok(Trajectory {
        model_name: model.name.clone(),
        backend: params.backend,
        shift: *shift,
        x: profile.x.clone(),
        dim: model.dim(),
        dx: dynamics.dx,
        dt,
        n_steps: per * params.n_out,
        cfl: (vmax + shift.eps_delta()) * dt / dynamics.dx,
        eps_budget: params.eps_budget,
        localised: pert.is_localised(),
        budget_violation,
        snapshots,
    })
}
