//! Relaxation systems `U_t + A(U) U_x = q(U)` with polynomial coefficients.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::Poly;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModelKind {
    /// Jin–Xin relaxation `u_t + v_x = 0`, `v_t + a^2 u_x = (f(u) - v)/eps`
    /// written in the frame of the shock.
    JinXin { a: f64, eps: f64, flux: Vec<f64> },
    Custom,
}

/// A relaxation system together with its shock endstates.
///
/// Immutable after construction. Matrices are stored row-major as
/// polynomial entries; all derivatives are formed once at build time.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub name: String,
    pub kind: ModelKind,
    pub params: BTreeMap<String, f64>,
    dim: usize,
    a: Vec<Poly>,
    q: Vec<Poly>,
    q_jac: Vec<Poly>,
    // da[k][i*dim+j] = d A_ij / d u_k
    da: Vec<Vec<Poly>>,
    // d2a[k*dim+m][..] = d^2 A / du_k du_m
    d2a: Vec<Vec<Poly>>,
    // dq_jac[k][..] = d Q / d u_k, from q (never from an overridden Jacobian)
    dq_jac: Vec<Vec<Poly>>,
    a_constant: bool,
    pub state_box: Vec<(f64, f64)>,
    pub shock_speed: f64,
    pub u_minus: Vec<f64>,
    pub u_plus: Vec<f64>,
}

/// Outcome of [`ModelSpec::validate`].
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub n_samples: usize,
    pub max_rel_jacobian_error: f64,
    pub worst_state: Vec<f64>,
    pub coefficients_finite: bool,
}

const JACOBIAN_TOL: f64 = 1e-6;

fn jacobian_of(q: &[Poly], dim: usize) -> Vec<Poly> {
    let mut out = Vec::with_capacity(dim * dim);
    for qi in q {
        for k in 0..dim {
            out.push(qi.derivative(k));
        }
    }
    out
}

/// Axis-aligned bounding box of the endstates, padded by half the
/// endstate distance plus 0.5 per component.
pub fn padded_box(u_minus: &[f64], u_plus: &[f64]) -> Vec<(f64, f64)> {
    let diam = u_minus
        .iter()
        .zip(u_plus)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let pad = 0.5 * diam + 0.5;
    u_minus
        .iter()
        .zip(u_plus)
        .map(|(&a, &b)| (a.min(b) - pad, a.max(b) + pad))
        .collect()
}

impl ModelSpec {
    /// Builds a system from polynomial coefficients. `a` is row-major
    /// `dim x dim`; the source Jacobian is derived in closed form.
    pub fn custom(
        name: &str,
        dim: usize,
        a: Vec<Poly>,
        q: Vec<Poly>,
        u_minus: Vec<f64>,
        u_plus: Vec<f64>,
        shock_speed: f64,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dim", "must be positive"));
        }
        if a.len() != dim * dim {
            return Err(Error::invalid("a", format!("expected {} entries", dim * dim)));
        }
        if q.len() != dim {
            return Err(Error::invalid("q", format!("expected {dim} entries")));
        }
        if u_minus.len() != dim || u_plus.len() != dim {
            return Err(Error::invalid("endstates", format!("expected length {dim}")));
        }
        if a.iter().chain(&q).any(|p| p.nvars() != dim) {
            return Err(Error::invalid("coefficients", "polynomial arity differs from dim"));
        }
        if u_minus.iter().chain(&u_plus).any(|x| !x.is_finite()) {
            return Err(Error::invalid("endstates", "must be finite"));
        }
        let q_jac = jacobian_of(&q, dim);
        let da: Vec<Vec<Poly>> = (0..dim)
            .map(|k| a.iter().map(|p| p.derivative(k)).collect())
            .collect();
        let mut d2a = Vec::with_capacity(dim * dim);
        for k in 0..dim {
            for m in 0..dim {
                d2a.push(da[k].iter().map(|p| p.derivative(m)).collect());
            }
        }
        let dq_jac = (0..dim)
            .map(|k| q_jac.iter().map(|p| p.derivative(k)).collect())
            .collect();
        let a_constant = a.iter().all(Poly::is_constant);
        let state_box = padded_box(&u_minus, &u_plus);
        Ok(ModelSpec {
            name: name.to_string(),
            kind: ModelKind::Custom,
            params: BTreeMap::new(),
            dim,
            a,
            q,
            q_jac,
            da,
            d2a,
            dq_jac,
            a_constant,
            state_box,
            shock_speed,
            u_minus,
            u_plus,
        })
    }

    /// Replaces the closed-form source Jacobian by a hand-supplied one.
    pub fn with_jacobian(mut self, q_jac: Vec<Poly>) -> Result<Self> {
        if q_jac.len() != self.dim * self.dim {
            return Err(Error::invalid("q_jac", "wrong number of entries"));
        }
        self.q_jac = q_jac;
        Ok(self)
    }

    pub fn with_state_box(mut self, state_box: Vec<(f64, f64)>) -> Result<Self> {
        if state_box.len() != self.dim || state_box.iter().any(|(lo, hi)| !(lo <= hi)) {
            return Err(Error::invalid("state_box", "need one ordered interval per component"));
        }
        self.state_box = state_box;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// True when `A` does not depend on the state.
    pub fn a_is_constant(&self) -> bool {
        self.a_constant
    }

    pub fn contains(&self, u: &[f64]) -> bool {
        u.len() == self.dim
            && u.iter()
                .zip(&self.state_box)
                .all(|(x, (lo, hi))| x.is_finite() && *x >= *lo && *x <= *hi)
    }

    fn check(&self, u: &[f64]) -> Result<()> {
        if self.contains(u) {
            Ok(())
        } else {
            Err(Error::OutOfDomain { state: u.to_vec() })
        }
    }

    pub fn eval_a(&self, u: &[f64]) -> Result<DMatrix<f64>> {
        self.check(u)?;
        let mut m = DMatrix::zeros(self.dim, self.dim);
        self.a_into(u, m.as_mut_slice());
        Ok(m)
    }

    pub fn eval_q(&self, u: &[f64]) -> Result<DVector<f64>> {
        self.check(u)?;
        let mut v = DVector::zeros(self.dim);
        self.q_into(u, v.as_mut_slice());
        Ok(v)
    }

    #[allow(non_snake_case)]
    pub fn eval_Q(&self, u: &[f64]) -> Result<DMatrix<f64>> {
        self.check(u)?;
        let mut m = DMatrix::zeros(self.dim, self.dim);
        self.q_jac_into(u, m.as_mut_slice());
        Ok(m)
    }

    // The `_into` evaluators skip the domain check and write column-major
    // (nalgebra layout) into `out`. They are used on hot paths.

    pub fn a_into(&self, u: &[f64], out: &mut [f64]) {
        fill_colmajor(&self.a, self.dim, u, out);
    }

    pub fn q_into(&self, u: &[f64], out: &mut [f64]) {
        for (o, p) in out.iter_mut().zip(&self.q) {
            *o = p.eval(u);
        }
    }

    pub fn q_jac_into(&self, u: &[f64], out: &mut [f64]) {
        fill_colmajor(&self.q_jac, self.dim, u, out);
    }

    /// `dA/du_k` at `u`, column-major.
    pub fn da_into(&self, u: &[f64], k: usize, out: &mut [f64]) {
        fill_colmajor(&self.da[k], self.dim, u, out);
    }

    pub fn d2a_into(&self, u: &[f64], k: usize, m: usize, out: &mut [f64]) {
        fill_colmajor(&self.d2a[k * self.dim + m], self.dim, u, out);
    }

    pub fn dq_jac_into(&self, u: &[f64], k: usize, out: &mut [f64]) {
        fill_colmajor(&self.dq_jac[k], self.dim, u, out);
    }

    pub fn a_unchecked(&self, u: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        self.a_into(u, m.as_mut_slice());
        m
    }

    #[allow(non_snake_case)]
    pub fn Q_unchecked(&self, u: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        self.q_jac_into(u, m.as_mut_slice());
        m
    }

    pub fn q_unchecked(&self, u: &[f64]) -> DVector<f64> {
        let mut v = DVector::zeros(self.dim);
        self.q_into(u, v.as_mut_slice());
        v
    }

    /// Compares the Jacobian against central differences of `q` at the
    /// endstates and `n_samples` seeded points of the state box.
    pub fn validate(&self, n_samples: usize, seed: u64) -> Result<ValidationReport> {
        if n_samples == 0 {
            return Err(Error::Precondition("n_samples must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut points = vec![self.u_minus.clone(), self.u_plus.clone()];
        for _ in 0..n_samples {
            points.push(
                self.state_box
                    .iter()
                    .map(|&(lo, hi)| if hi > lo { rng.gen_range(lo..=hi) } else { lo })
                    .collect(),
            );
        }
        let mut worst = (0.0_f64, points[0].clone());
        let mut finite = true;
        for u in &points {
            let a = self.a_unchecked(u);
            finite &= a.iter().all(|x| x.is_finite());
            let q = self.Q_unchecked(u);
            let fd = fd_jacobian(self, u);
            let err = (&q - &fd).amax();
            let rel = err / (1.0 + q.amax());
            if rel > worst.0 || !rel.is_finite() {
                worst = (rel, u.clone());
            }
        }
        if !(worst.0 <= JACOBIAN_TOL) || !finite {
            return Err(Error::ValidationFailed {
                state: worst.1,
                error: worst.0,
            });
        }
        Ok(ValidationReport {
            n_samples,
            max_rel_jacobian_error: worst.0,
            worst_state: worst.1,
            coefficients_finite: finite,
        })
    }
}

fn fill_colmajor(entries: &[Poly], dim: usize, u: &[f64], out: &mut [f64]) {
    for i in 0..dim {
        for j in 0..dim {
            out[j * dim + i] = entries[i * dim + j].eval(u);
        }
    }
}

/// Central-difference Jacobian of `q` with step `1e-6 (1 + |u_k|)`.
pub fn fd_jacobian(model: &ModelSpec, u: &[f64]) -> DMatrix<f64> {
    let n = model.dim();
    let mut jac = DMatrix::zeros(n, n);
    let mut up = u.to_vec();
    let mut dn = u.to_vec();
    for k in 0..n {
        let h = 1e-6 * (1.0 + u[k].abs());
        up[k] = u[k] + h;
        dn[k] = u[k] - h;
        let qp = model.q_unchecked(&up);
        let qm = model.q_unchecked(&dn);
        for i in 0..n {
            jac[(i, k)] = (qp[i] - qm[i]) / (2.0 * h);
        }
        up[k] = u[k];
        dn[k] = u[k];
    }
    jac
}

/// Evaluates the flux polynomial `f(u) = sum_i c_i u^i`.
pub fn flux_eval(coeffs: &[f64], u: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * u + c)
}

pub fn flux_derivative(coeffs: &[f64], u: f64) -> f64 {
    coeffs
        .iter()
        .enumerate()
        .skip(1)
        .rev()
        .fold(0.0, |acc, (i, &c)| acc * u + i as f64 * c)
}

/// Jin–Xin relaxation of `u_t + f(u)_x = 0` in the frame of the
/// Rankine–Hugoniot shock between `u_minus` and `u_plus`.
pub fn build_jinxin(a: f64, eps: f64, flux: &[f64], u_minus: f64, u_plus: f64) -> Result<ModelSpec> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::invalid("a", "wave speed must be positive"));
    }
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::invalid("eps", "relaxation time must be positive"));
    }
    if flux.is_empty() || flux.iter().any(|c| !c.is_finite()) {
        return Err(Error::invalid("flux", "need finite polynomial coefficients"));
    }
    if !u_minus.is_finite() || !u_plus.is_finite() {
        return Err(Error::invalid("u_minus/u_plus", "must be finite"));
    }
    if u_minus == u_plus {
        return Err(Error::DegenerateShock);
    }
    let s = (flux_eval(flux, u_plus) - flux_eval(flux, u_minus)) / (u_plus - u_minus);
    let a_entries = vec![
        Poly::constant(2, -s),
        Poly::constant(2, 1.0),
        Poly::constant(2, a * a),
        Poly::constant(2, -s),
    ];
    // (f(u) - v) / eps
    let relax = Poly::univariate(2, 0, flux)
        .add(&Poly::linear(2, 1, -1.0))
        .scaled(1.0 / eps);
    let q = vec![Poly::zero(2), relax];
    let um = vec![u_minus, flux_eval(flux, u_minus)];
    let up = vec![u_plus, flux_eval(flux, u_plus)];
    let mut model = ModelSpec::custom("jinxin", 2, a_entries, q, um, up, s)?;
    model.kind = ModelKind::JinXin {
        a,
        eps,
        flux: flux.to_vec(),
    };
    model.params = BTreeMap::from([
        ("a".to_string(), a),
        ("eps".to_string(), eps),
        ("u_minus".to_string(), u_minus),
        ("u_plus".to_string(), u_plus),
    ]);
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BURGERS: [f64; 3] = [0.0, 0.0, 0.5];

    #[test]
    fn jinxin_shock_speed_by_rankine_hugoniot() {
        let m = build_jinxin(2.0, 1.0, &BURGERS, 1.0, -1.0).unwrap();
        assert_eq!(m.shock_speed, 0.0);
        let a = m.eval_a(&[0.3, 0.5]).unwrap();
        assert_eq!(a, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 4.0, 0.0]));

        let m = build_jinxin(1.0, 1.0, &BURGERS, 1.0, 0.0).unwrap();
        // independent numeric evaluation of (f(u+) - f(u-)) / (u+ - u-)
        let f = |u: f64| 0.5 * u * u;
        let oracle = (f(0.0) - f(1.0)) / (0.0 - 1.0);
        assert!((m.shock_speed - oracle).abs() < 1e-15);
        assert!((m.shock_speed - 0.5).abs() < 1e-15);
    }

    #[test]
    fn jinxin_rejects_bad_input() {
        assert_eq!(
            build_jinxin(2.0, 1.0, &BURGERS, 1.0, 1.0).unwrap_err(),
            Error::DegenerateShock
        );
        assert_eq!(
            build_jinxin(0.0, 1.0, &BURGERS, 1.0, -1.0).unwrap_err().kind(),
            "InvalidParam"
        );
        assert_eq!(
            build_jinxin(2.0, -1.0, &BURGERS, 1.0, -1.0).unwrap_err().kind(),
            "InvalidParam"
        );
    }

    #[test]
    fn jinxin_source_and_jacobian() {
        let m = build_jinxin(2.0, 1.0, &BURGERS, 1.0, -1.0).unwrap();
        let q = m.eval_q(&[1.0, 0.5]).unwrap();
        assert_eq!(q.as_slice(), &[0.0, 0.0]);
        let jac = m.eval_Q(&[1.0, 0.5]).unwrap();
        assert_eq!(jac, DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, -1.0]));
        let fd = fd_jacobian(&m, &[1.0, 0.5]);
        assert!((&jac - &fd).amax() < 1e-6);
        for end in [&m.u_minus, &m.u_plus] {
            assert!(m.eval_q(end).unwrap().amax() <= 1e-12);
        }
    }

    #[test]
    fn custom_state_dependent_coefficient() {
        let a = vec![
            Poly::linear(2, 0, 1.0),
            Poly::zero(2),
            Poly::zero(2),
            Poly::constant(2, -1.0),
        ];
        let q = vec![Poly::zero(2), Poly::zero(2)];
        let m = ModelSpec::custom("diag", 2, a, q, vec![1.0, 0.0], vec![0.0, 0.0], 0.0).unwrap();
        assert!(!m.a_is_constant());
        let a = m.eval_a(&[0.5, 0.0]).unwrap();
        assert_eq!(a, DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, -1.0]));
        assert!(matches!(m.eval_a(&[50.0, 0.0]), Err(Error::OutOfDomain { .. })));
    }

    #[test]
    fn state_box_padding() {
        let m = build_jinxin(2.0, 1.0, &BURGERS, 1.0, -1.0).unwrap();
        assert_eq!(m.state_box, vec![(-2.5, 2.5), (-1.0, 2.0)]);
    }

    #[test]
    fn validation_passes_and_catches_defects() {
        let m = build_jinxin(2.0, 1.0, &BURGERS, 1.0, -1.0).unwrap();
        let rep = m.validate(64, 7).unwrap();
        assert!(rep.max_rel_jacobian_error <= 1e-6);

        // hand-coded Jacobian with the wrong sign on the f'(u) entry
        let bad = vec![
            Poly::zero(2),
            Poly::zero(2),
            Poly::linear(2, 0, -1.0),
            Poly::constant(2, -1.0),
        ];
        let broken = m.clone().with_jacobian(bad).unwrap();
        assert!(matches!(broken.validate(16, 7), Err(Error::ValidationFailed { .. })));
        assert!(matches!(m.validate(0, 7), Err(Error::Precondition(_))));
    }

    #[test]
    fn evaluators_are_pure() {
        let m = build_jinxin(2.0, 0.7, &[0.1, -0.3, 0.5, 0.2], 1.0, -1.0).unwrap();
        let u = [0.123456789, 0.987654321];
        let a = m.eval_Q(&u).unwrap();
        let b = m.eval_Q(&u).unwrap();
        assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
