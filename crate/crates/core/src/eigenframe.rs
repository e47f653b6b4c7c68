//! Characteristic frames `L A R = diag(lambda)`, the source split
//! `L Q R = E + F` and the commutator solve `[Theta, Lambda] = F`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::profile::ProfileRep;

/// Eigenvalue separations below this are treated as coincident.
pub const HYPERBOLIC_GAP: f64 = 1e-10;
/// Smallest gap the commutator solve accepts.
pub const GAP_MIN: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct EigenFrame {
    /// Strictly increasing characteristic speeds.
    pub lambdas: Vec<f64>,
    /// Left eigenvectors as rows.
    pub l: DMatrix<f64>,
    /// Right eigenvectors as columns; `l * r = I`.
    pub r: DMatrix<f64>,
}

impl EigenFrame {
    pub fn dim(&self) -> usize {
        self.lambdas.len()
    }

    pub fn min_abs_speed(&self) -> f64 {
        self.lambdas.iter().map(|l| l.abs()).fold(f64::INFINITY, f64::min)
    }

    pub fn min_gap(&self) -> f64 {
        self.lambdas
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }

    fn distance(&self, other: &EigenFrame) -> f64 {
        let dl = self
            .lambdas
            .iter()
            .zip(&other.lambdas)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        dl.max((&self.l - &other.l).amax()).max((&self.r - &other.r).amax())
    }

    fn flip(&mut self, j: usize) {
        self.r.column_mut(j).neg_mut();
        self.l.row_mut(j).neg_mut();
    }
}

/// Eigenvalues of a real matrix as `(re, im)` pairs.
pub fn real_eigen(m: &DMatrix<f64>) -> Vec<(f64, f64)> {
    m.clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| (z.re, z.im))
        .collect()
}

/// Row infinity norm.
pub fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Scales a right eigenvector so its pivot entry is `+1`; the pivot is
/// the first entry within a factor two of the largest magnitude.
fn normalize_right(v: &mut DVector<f64>) {
    let m = v.amax();
    let pivot = v.iter().position(|x| x.abs() >= 0.5 * m * (1.0 - 1e-8)).unwrap_or(0);
    let p = v[pivot];
    *v /= p;
}

pub fn decompose(a: &DMatrix<f64>, c_min: f64) -> Result<EigenFrame> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return Err(Error::invalid("A", "must be a non-empty square matrix"));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("A", "entries must be finite"));
    }
    let scale = 1.0 + inf_norm(a);
    let mut eig = real_eigen(a);
    if let Some((_, im)) = eig.iter().find(|(_, im)| im.abs() > HYPERBOLIC_GAP * scale) {
        return Err(Error::NotStrictlyHyperbolic {
            reason: format!("complex eigenvalue pair with imaginary part {im:.3e}"),
            x: None,
        });
    }
    eig.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap());
    let lambdas: Vec<f64> = eig.iter().map(|p| p.0).collect();
    if let Some(w) = lambdas.windows(2).find(|w| w[1] - w[0] < HYPERBOLIC_GAP * scale) {
        return Err(Error::NotStrictlyHyperbolic {
            reason: format!("eigenvalue gap {:.3e}", w[1] - w[0]),
            x: None,
        });
    }
    if let Some(&lam) = lambdas.iter().find(|l| l.abs() < c_min) {
        return Err(Error::Characteristic {
            lambda: lam,
            c_min,
            x: None,
        });
    }
    let mut r = DMatrix::zeros(n, n);
    for (j, &lam) in lambdas.iter().enumerate() {
        let shifted = a - DMatrix::identity(n, n) * lam;
        let svd = shifted.svd(false, true);
        let v_t = svd.v_t.expect("requested V^T");
        let k = svd.singular_values.argmin().0;
        let mut v = v_t.row(k).transpose();
        normalize_right(&mut v);
        r.set_column(j, &v);
    }
    let l = r.clone().try_inverse().ok_or_else(|| Error::NotStrictlyHyperbolic {
        reason: "eigenvectors are linearly dependent".into(),
        x: None,
    })?;
    Ok(EigenFrame { lambdas, l, r })
}

/// Aligns eigenvector signs with the preceding frame.
pub fn continue_signs(frames: &mut [EigenFrame]) {
    for i in 1..frames.len() {
        let (head, tail) = frames.split_at_mut(i);
        let prev = &head[i - 1];
        let cur = &mut tail[0];
        for j in 0..cur.dim() {
            if prev.r.column(j).dot(&cur.r.column(j)) < 0.0 {
                cur.flip(j);
            }
        }
    }
}

/// Frames at every profile node, with derived aggregate bounds.
#[derive(Debug, Clone)]
pub struct FrameSeries {
    pub frames: Vec<EigenFrame>,
    /// `dL/dx` along the profile (zero for state-independent `A`).
    pub l_x: Vec<DMatrix<f64>>,
    pub c_nonchar: f64,
    pub gap_min: f64,
    /// Sup of `|frame(x_{i+1}) - frame(x_i)| / dx`.
    pub lipschitz: f64,
}

pub fn frame_along_profile(model: &ModelSpec, profile: &ProfileRep, c_min: f64) -> Result<FrameSeries> {
    let n = profile.n();
    let mut frames = Vec::with_capacity(n);
    if model.a_is_constant() {
        let f = decompose(&model.a_unchecked(profile.value(0)), c_min)
            .map_err(|e| with_location(e, profile.x[0]))?;
        frames.resize(n, f);
    } else {
        for i in 0..n {
            let a = model.a_unchecked(profile.value(i));
            frames.push(decompose(&a, c_min).map_err(|e| with_location(e, profile.x[i]))?);
        }
        continue_signs(&mut frames);
    }
    let dim = model.dim();
    let mut l_x = vec![DMatrix::zeros(dim, dim); n];
    if !model.a_is_constant() {
        for i in 0..n {
            let (lo, hi) = (i.saturating_sub(1), (i + 1).min(n - 1));
            l_x[i] = (&frames[hi].l - &frames[lo].l) / (profile.x[hi] - profile.x[lo]);
        }
    }
    let c_nonchar = frames.iter().map(|f| f.min_abs_speed()).fold(f64::INFINITY, f64::min);
    let gap_min = frames.iter().map(|f| f.min_gap()).fold(f64::INFINITY, f64::min);
    let lipschitz = (1..n)
        .map(|i| frames[i].distance(&frames[i - 1]) / (profile.x[i] - profile.x[i - 1]))
        .fold(0.0, f64::max);
    Ok(FrameSeries {
        frames,
        l_x,
        c_nonchar,
        gap_min,
        lipschitz,
    })
}

fn with_location(e: Error, at: f64) -> Error {
    match e {
        Error::NotStrictlyHyperbolic { reason, .. } => Error::NotStrictlyHyperbolic { reason, x: Some(at) },
        Error::Characteristic { lambda, c_min, .. } => Error::Characteristic {
            lambda,
            c_min,
            x: Some(at),
        },
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceSplit {
    /// Diagonal of `L Q R`.
    pub e: DVector<f64>,
    /// Off-diagonal part of `L Q R`.
    pub f: DMatrix<f64>,
    /// Commutator solution; zero until filled by [`theta_matrix`].
    pub theta: DMatrix<f64>,
}

pub fn source_split(frame: &EigenFrame, qmat: &DMatrix<f64>) -> SourceSplit {
    split_matrix(&(&frame.l * qmat * &frame.r))
}

/// Splits a matrix into its diagonal and off-diagonal parts.
pub fn split_matrix(m: &DMatrix<f64>) -> SourceSplit {
    let n = m.nrows();
    let e = m.diagonal();
    let mut f = m.clone();
    f.fill_diagonal(0.0);
    SourceSplit {
        e,
        f,
        theta: DMatrix::zeros(n, n),
    }
}

/// Solves `Theta Lambda - Lambda Theta = F` with zero diagonal.
pub fn theta_matrix(frame: &EigenFrame, f_tilde: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = frame.dim();
    let gap = frame.min_gap();
    if gap < GAP_MIN {
        return Err(Error::GapTooSmall { gap });
    }
    let lam = &frame.lambdas;
    Ok(DMatrix::from_fn(n, n, |j, k| {
        if j == k {
            0.0
        } else {
            f_tilde[(j, k)] / (lam[k] - lam[j])
        }
    }))
}

/// Coefficient of `Phi` in the characteristic system at a state `u`
/// near the profile: `L (Q(u) - M) R + (Lambda - s) L_x R`, where
/// `M[:, k] = dA/du_k * profile_slope`.
pub fn coupling_matrix(
    model: &ModelSpec,
    frame: &EigenFrame,
    l_x: &DMatrix<f64>,
    u: &[f64],
    profile_slope: &[f64],
    shift_speed: f64,
) -> DMatrix<f64> {
    let n = frame.dim();
    let mut m = model.Q_unchecked(u);
    if !model.a_is_constant() {
        let mut buf = DMatrix::zeros(n, n);
        for k in 0..n {
            model.da_into(u, k, buf.as_mut_slice());
            let col = &buf * DVector::from_column_slice(profile_slope);
            let mut target = m.column_mut(k);
            target -= col;
        }
    }
    let mut b = &frame.l * m * &frame.r;
    if l_x.amax() > 0.0 {
        let t = l_x * &frame.r;
        for j in 0..n {
            let d = frame.lambdas[j] - shift_speed;
            for k in 0..n {
                b[(j, k)] += d * t[(j, k)];
            }
        }
    }
    b
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DampingRate {
    /// Positive rate; `exp(-theta_e t)` decays.
    pub theta_e: f64,
    /// Half the largest endstate diagonal entry (negative when dissipative).
    pub half_max_entry: f64,
    pub e_minus: Vec<f64>,
    pub e_plus: Vec<f64>,
}

pub fn endstate_split(model: &ModelSpec, state: &[f64]) -> Result<(EigenFrame, SourceSplit)> {
    let frame = decompose(&model.a_unchecked(state), 0.0)?;
    let split = source_split(&frame, &model.Q_unchecked(state));
    Ok((frame, split))
}

pub fn damping_rate(model: &ModelSpec) -> Result<DampingRate> {
    let (_, minus) = endstate_split(model, &model.u_minus)?;
    let (_, plus) = endstate_split(model, &model.u_plus)?;
    for (side, split) in [("minus", &minus), ("plus", &plus)] {
        if let Some((j, &v)) = split.e.iter().enumerate().find(|(_, v)| **v >= 0.0) {
            return Err(Error::NotDissipative {
                side: side.into(),
                j: j + 1,
                value: v,
            });
        }
    }
    let max = minus.e.iter().chain(plus.e.iter()).copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(DampingRate {
        theta_e: -0.5 * max,
        half_max_entry: 0.5 * max,
        e_minus: minus.e.iter().copied().collect(),
        e_plus: plus.e.iter().copied().collect(),
    })
}
