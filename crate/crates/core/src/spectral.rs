//! Endstate symbol spectra `sigma(i xi A± + Q±)` and the high-frequency
//! dissipativity certificate.

use nalgebra::{Complex, DMatrix};
use serde::Serialize;

use crate::eigenframe::{decompose, endstate_split};
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::profile::ProfileRep;

pub type C64 = Complex<f64>;

pub const XI_MIN: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Minus,
    Plus,
}

impl Side {
    pub fn state<'a>(&self, model: &'a ModelSpec) -> &'a [f64] {
        match self {
            Side::Minus => &model.u_minus,
            Side::Plus => &model.u_plus,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Side::Minus => "minus",
            Side::Plus => "plus",
        }
    }
}

fn eigenvalues_complex(m: DMatrix<C64>) -> Vec<C64> {
    let n = m.nrows();
    if n == 1 {
        return vec![m[(0, 0)]];
    }
    if n == 2 {
        // closed form avoids iterative noise for the common case
        let tr = m[(0, 0)] + m[(1, 1)];
        let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
        let disc = (tr * tr * 0.25 - det).sqrt();
        return vec![tr * 0.5 - disc, tr * 0.5 + disc];
    }
    let schur = m.schur();
    let (_, t) = schur.unpack();
    (0..n).map(|i| t[(i, i)]).collect()
}

fn sort_spectrum(v: &mut [C64]) {
    v.sort_by(|a, b| a.im.partial_cmp(&b.im).unwrap().then(a.re.partial_cmp(&b.re).unwrap()));
}

/// Eigenvalues of `i xi A(U±) + Q(U±)`, sorted by imaginary then real part.
pub fn symbol_spectrum(model: &ModelSpec, side: Side, xi: f64) -> Vec<C64> {
    let u = side.state(model);
    let a = model.a_unchecked(u);
    let q = model.Q_unchecked(u);
    let m = DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| C64::new(q[(i, j)], xi * a[(i, j)]));
    let mut ev = eigenvalues_complex(m);
    sort_spectrum(&mut ev);
    ev
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Certificate {
    /// Frequency threshold beyond which the bound holds on the scan.
    pub threshold: f64,
    /// Realised margin: `max Re mu <= -margin` for scanned `|xi| >= threshold`.
    pub margin: f64,
}

#[derive(Debug, Clone)]
pub struct SpectralScan {
    pub side: Side,
    /// Negative frequencies first, then positive, both log-spaced.
    pub xi_grid: Vec<f64>,
    pub spectra: Vec<Vec<C64>>,
    pub certificate: Option<Certificate>,
    /// Frequency and real part of the worst violation beyond any threshold.
    pub witness: Option<(f64, f64)>,
    /// Largest deviation from conjugate symmetry between `xi` and `-xi`.
    pub symmetry_defect: f64,
}

pub fn log_grid(xi_min: f64, xi_max: f64, n: usize) -> Vec<f64> {
    let (a, b) = (xi_min.ln(), xi_max.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n as f64 - 1.0)).exp())
        .collect()
}

pub fn scan_side(model: &ModelSpec, side: Side, xi_max: f64, n_xi: usize, margin: f64) -> Result<SpectralScan> {
    if !(xi_max > XI_MIN) {
        return Err(Error::invalid("spectral.xi_max", format!("must exceed {XI_MIN}")));
    }
    if n_xi < 100 {
        return Err(Error::invalid("spectral.n_xi", "need at least 100 frequencies"));
    }
    if !(margin > 0.0) {
        return Err(Error::invalid("spectral.margin", "must be positive"));
    }
    let pos = log_grid(XI_MIN, xi_max, n_xi);
    let pos_spec: Vec<Vec<C64>> = pos.iter().map(|&xi| symbol_spectrum(model, side, xi)).collect();
    let neg_spec: Vec<Vec<C64>> = pos.iter().map(|&xi| symbol_spectrum(model, side, -xi)).collect();

    let mut symmetry_defect = 0.0_f64;
    for (p, n) in pos_spec.iter().zip(&neg_spec) {
        let mut conj: Vec<C64> = n.iter().map(|z| z.conj()).collect();
        sort_spectrum(&mut conj);
        for (a, b) in p.iter().zip(&conj) {
            symmetry_defect = symmetry_defect.max((a - b).norm());
        }
    }

    let top: Vec<f64> = pos_spec
        .iter()
        .map(|s| s.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    for i in 1..top.len() {
        if (top[i] - top[i - 1]).abs() > 10.0 * margin {
            return Err(Error::ScanTooCoarse { xi: pos[i] });
        }
    }
    // smallest suffix of the grid on which the bound holds
    let mut start = top.len();
    while start > 0 && top[start - 1] <= -margin {
        start -= 1;
    }
    let (certificate, witness) = if start < top.len() {
        let realised = top[start..].iter().fold(f64::INFINITY, |m, &t| m.min(-t));
        (
            Some(Certificate {
                threshold: pos[start],
                margin: realised,
            }),
            None,
        )
    } else {
        // the bound fails at xi_max; report the worst point in the upper decade
        let lo = pos.iter().position(|&x| x >= 0.1 * xi_max).unwrap_or(0);
        let (i, t) = top[lo..]
            .iter()
            .enumerate()
            .fold((lo, f64::NEG_INFINITY), |acc, (k, &t)| if t > acc.1 { (lo + k, t) } else { acc });
        (None, Some((pos[i], t)))
    };

    let mut xi_grid: Vec<f64> = pos.iter().rev().map(|x| -x).collect();
    xi_grid.extend_from_slice(&pos);
    let mut spectra: Vec<Vec<C64>> = neg_spec.into_iter().rev().collect();
    spectra.extend(pos_spec);
    Ok(SpectralScan {
        side,
        xi_grid,
        spectra,
        certificate,
        witness,
        symmetry_defect,
    })
}

#[derive(Debug, Clone)]
pub struct DissipativityReport {
    pub minus: SpectralScan,
    pub plus: SpectralScan,
    /// Combined certificate: largest threshold, smallest margin.
    pub certificate: Option<Certificate>,
}

impl DissipativityReport {
    pub fn witness(&self) -> Option<(Side, f64, f64)> {
        [&self.minus, &self.plus]
            .iter()
            .find_map(|s| s.witness.map(|(xi, re)| (s.side, xi, re)))
    }
}

pub fn dissipativity_certificate(
    model: &ModelSpec,
    xi_max: f64,
    n_xi: usize,
    margin: f64,
) -> Result<DissipativityReport> {
    let minus = scan_side(model, Side::Minus, xi_max, n_xi, margin)?;
    let plus = scan_side(model, Side::Plus, xi_max, n_xi, margin)?;
    let certificate = match (minus.certificate, plus.certificate) {
        (Some(a), Some(b)) => Some(Certificate {
            threshold: a.threshold.max(b.threshold),
            margin: a.margin.min(b.margin),
        }),
        _ => None,
    };
    Ok(DissipativityReport {
        minus,
        plus,
        certificate,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ExpansionPoint {
    pub xi: f64,
    /// `Re mu_j` for branch `j`.
    pub re: Vec<f64>,
    /// `Im mu_j / xi` for branch `j`.
    pub speed: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExpansionReport {
    pub side: Side,
    pub diagonal: Vec<f64>,
    pub points: Vec<ExpansionPoint>,
    /// Max over the list of `|xi| * |Re mu_j(xi) - E_jj|`.
    pub remainder: f64,
}

/// Pairs the high-frequency branches with the characteristic families
/// and measures the `O(1/xi)` remainder of `Re mu_j -> E_jj`.
pub fn expansion_check(model: &ModelSpec, side: Side, xi_list: &[f64]) -> Result<ExpansionReport> {
    let u = side.state(model);
    let (frame, split) = endstate_split(model, u)?;
    let lam = &frame.lambdas;
    let max_speed = lam.iter().map(|l| l.abs()).fold(0.0, f64::max);
    let gap = frame.min_gap();
    let mut points = Vec::with_capacity(xi_list.len());
    let mut remainder = 0.0_f64;
    for &xi in xi_list {
        if xi.abs() < 10.0 * max_speed {
            return Err(Error::invalid(
                "xi_list",
                format!("|xi| = {xi} is below ten times the largest speed {max_speed}"),
            ));
        }
        let mu = symbol_spectrum(model, side, xi);
        let half_sep = 0.5 * gap * xi.abs();
        let mut used = vec![false; mu.len()];
        let mut re = vec![0.0; lam.len()];
        let mut speed = vec![0.0; lam.len()];
        for (j, &l) in lam.iter().enumerate() {
            let target = l * xi;
            let (k, dist) = mu
                .iter()
                .enumerate()
                .map(|(k, z)| (k, (z.im - target).abs()))
                .fold((0, f64::INFINITY), |acc, p| if p.1 < acc.1 { p } else { acc });
            if used[k] || dist >= half_sep {
                return Err(Error::PairingAmbiguous { xi });
            }
            used[k] = true;
            re[j] = mu[k].re;
            speed[j] = mu[k].im / xi;
            remainder = remainder.max(xi.abs() * (mu[k].re - split.e[j]).abs());
        }
        points.push(ExpansionPoint { xi, re, speed });
    }
    Ok(ExpansionReport {
        side,
        diagonal: split.e.iter().copied().collect(),
        points,
        remainder,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HyperbolicityReport {
    pub min_gap: f64,
    pub min_abs_speed: f64,
    pub c_min: f64,
    /// Position of the slowest characteristic speed.
    pub x_slowest: f64,
    pub pass: bool,
}

impl HyperbolicityReport {
    pub fn into_result(self) -> Result<Self> {
        if self.pass {
            Ok(self)
        } else {
            Err(Error::Characteristic {
                lambda: self.min_abs_speed,
                c_min: self.c_min,
                x: Some(self.x_slowest),
            })
        }
    }
}

/// Decomposes `A` at every profile node; strict hyperbolicity failures
/// are errors, while a speed below `c_min` is reported as `pass = false`.
pub fn hyperbolicity_scan(model: &ModelSpec, profile: &ProfileRep, c_min: f64) -> Result<HyperbolicityReport> {
    let mut min_gap = f64::INFINITY;
    let mut min_abs = f64::INFINITY;
    let mut x_slowest = profile.x[0];
    let nodes: Vec<usize> = if model.a_is_constant() {
        vec![0]
    } else {
        (0..profile.n()).collect()
    };
    for i in nodes {
        let frame = decompose(&model.a_unchecked(profile.value(i)), 0.0).map_err(|e| match e {
            Error::NotStrictlyHyperbolic { reason, .. } => Error::NotStrictlyHyperbolic {
                reason,
                x: Some(profile.x[i]),
            },
            other => other,
        })?;
        min_gap = min_gap.min(frame.min_gap());
        if frame.min_abs_speed() < min_abs {
            min_abs = frame.min_abs_speed();
            x_slowest = profile.x[i];
        }
    }
    Ok(HyperbolicityReport {
        min_gap,
        min_abs_speed: min_abs,
        c_min,
        x_slowest,
        pass: min_abs >= c_min && min_gap > 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eigenframe::damping_rate;
    use crate::model::build_jinxin;
    use crate::poly::Poly;
    use crate::profile::{exact_jinxin_profile, uniform_grid};
    use proptest::prelude::*;

    const BURGERS: [f64; 3] = [0.0, 0.0, 0.5];

    fn jinxin(a: f64) -> ModelSpec {
        build_jinxin(a, 1.0, &BURGERS, 1.0, -1.0).unwrap()
    }

    fn damped_diagonal(q: [f64; 2]) -> ModelSpec {
        let zero = Poly::zero(2);
        let a = vec![zero.clone(), zero.clone(), zero.clone(), zero];
        let src = vec![Poly::linear(2, 0, q[0]), Poly::linear(2, 1, q[1])];
        ModelSpec::custom("diag", 2, a, src, vec![0.0, 0.0], vec![0.0, 0.0], 0.0).unwrap()
    }

    #[test]
    fn zero_frequency_spectrum() {
        let m = jinxin(2.0);
        let s = symbol_spectrum(&m, Side::Plus, 0.0);
        let mut re: Vec<f64> = s.iter().map(|z| z.re).collect();
        re.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((re[0] + 1.0).abs() < 1e-14 && re[1].abs() < 1e-14);
        assert!(s.iter().all(|z| z.im.abs() < 1e-14));
    }

    #[test]
    fn diagonal_source_spectrum_is_frequency_independent() {
        let m = damped_diagonal([-2.0, -5.0]);
        for xi in [0.0, 3.0, -70.0] {
            let mut re: Vec<f64> = symbol_spectrum(&m, Side::Minus, xi).iter().map(|z| z.re).collect();
            re.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert_eq!(re, vec![-5.0, -2.0]);
        }
    }

    #[test]
    fn high_frequency_real_parts_approach_diagonal() {
        let m = jinxin(2.0);
        let mut re: Vec<f64> = symbol_spectrum(&m, Side::Plus, 50.0).iter().map(|z| z.re).collect();
        re.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((re[0] + 0.75).abs() < 0.05 && (re[1] + 0.25).abs() < 0.05);
    }

    #[test]
    fn jinxin_is_certified() {
        let rep = dissipativity_certificate(&jinxin(2.0), 100.0, 400, 0.1).unwrap();
        let c = rep.certificate.expect("certificate");
        assert!(c.margin >= 0.1 && c.threshold <= 5.0, "{c:?}");
        assert!(rep.minus.symmetry_defect <= 1e-12 && rep.plus.symmetry_defect <= 1e-12);
        // consistency with endstate dissipativity
        assert!(damping_rate(&jinxin(2.0)).is_ok());
    }

    #[test]
    fn supercharacteristic_fails_at_high_frequency() {
        let m = jinxin(0.5);
        let rep = dissipativity_certificate(&m, 100.0, 400, 0.1).unwrap();
        assert!(rep.certificate.is_none());
        let (_, xi, re) = rep.witness().unwrap();
        assert!(xi >= 10.0 && (re - 0.5).abs() < 0.05, "{xi} {re}");
        assert!(damping_rate(&m).is_err());
    }

    #[test]
    fn scalar_damping_certificate() {
        let rep = dissipativity_certificate(&damped_diagonal([-1.0, -1.0]), 100.0, 400, 0.1).unwrap();
        let c = rep.certificate.unwrap();
        assert!((c.margin - 1.0).abs() < 1e-14);
        assert!((c.threshold - XI_MIN).abs() < 1e-15);
    }

    #[test]
    fn enlarging_scan_keeps_certificate() {
        let m = jinxin(2.0);
        let small = dissipativity_certificate(&m, 50.0, 200, 0.1).unwrap().certificate.unwrap();
        let large = dissipativity_certificate(&m, 200.0, 800, 0.1).unwrap().certificate.unwrap();
        assert!(large.threshold <= small.threshold * 1.05);
    }

    #[test]
    fn expansion_remainder_is_bounded() {
        let m = jinxin(2.0);
        for side in [Side::Minus, Side::Plus] {
            let rep = expansion_check(&m, side, &[20.0, 40.0, 80.0, 160.0]).unwrap();
            let last = rep.points.last().unwrap();
            assert!((last.speed[0] + 2.0).abs() < 1e-3 && (last.speed[1] - 2.0).abs() < 1e-3);
            for j in 0..2 {
                let dev: Vec<f64> = rep.points.iter().map(|p| (p.re[j] - rep.diagonal[j]).abs()).collect();
                assert!(dev.windows(2).all(|w| w[1] <= w[0] + 1e-15), "{dev:?}");
            }
            assert!(rep.remainder < 1.0);
        }
        let diag = damped_diagonal([-2.0, -5.0]);
        assert!(expansion_check(&diag, Side::Plus, &[10.0]).is_err());
        assert!(expansion_check(&jinxin(2.0), Side::Plus, &[5.0]).is_err());
    }

    #[test]
    fn hyperbolicity_examples() {
        let m = jinxin(2.0);
        let p = exact_jinxin_profile(&m, uniform_grid(10.0, 101)).unwrap();
        let r = hyperbolicity_scan(&m, &p, 0.5).unwrap();
        assert!(r.pass && (r.min_abs_speed - 2.0).abs() < 1e-12 && (r.min_gap - 4.0).abs() < 1e-12);
        let r3 = hyperbolicity_scan(&m, &p, 3.0).unwrap();
        assert!(!r3.pass && (r3.min_abs_speed - 2.0).abs() < 1e-12);
        assert!(matches!(r3.into_result(), Err(Error::Characteristic { .. })));
        // s = a: endstates 3 and 1 with Burgers flux move at speed 2
        let sonic = build_jinxin(2.0, 1.0, &BURGERS, 3.0, 1.0).unwrap();
        let flat = ProfileRep::constant(uniform_grid(1.0, 11), &sonic.u_plus).unwrap();
        let r = hyperbolicity_scan(&sonic, &flat, 0.1).unwrap();
        assert!(!r.pass && r.min_abs_speed < 1e-12);
    }

    proptest! {
        #[test]
        fn spectra_are_conjugate_symmetric(xi in 0.0..200.0f64) {
            let m = jinxin(2.0);
            for side in [Side::Minus, Side::Plus] {
                let p = symbol_spectrum(&m, side, xi);
                let mut n: Vec<C64> = symbol_spectrum(&m, side, -xi).iter().map(|z| z.conj()).collect();
                sort_spectrum(&mut n);
                for (a, b) in p.iter().zip(&n) {
                    prop_assert!((a - b).norm() <= 1e-12 * (1.0 + xi));
                }
            }
        }
    }
}
