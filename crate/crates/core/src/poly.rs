//! Multivariate polynomials with closed-form differentiation.
//!
//! Model coefficients are polynomial in the state so that the source
//! Jacobian and every higher derivative needed along the profile can be
//! formed exactly instead of by differencing.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coef: f64,
    pub powers: Vec<u32>,
}

/// A polynomial in `nvars` real variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Poly {
    nvars: usize,
    terms: Vec<Monomial>,
}

impl Poly {
    pub fn zero(nvars: usize) -> Self {
        Poly {
            nvars,
            terms: Vec::new(),
        }
    }

    pub fn constant(nvars: usize, c: f64) -> Self {
        let mut p = Poly::zero(nvars);
        p.add_term(c, &vec![0; nvars]);
        p
    }

    /// `c * u_k`
    pub fn linear(nvars: usize, k: usize, c: f64) -> Self {
        let mut powers = vec![0; nvars];
        powers[k] = 1;
        let mut p = Poly::zero(nvars);
        p.add_term(c, &powers);
        p
    }

    /// Univariate polynomial `sum_i coeffs[i] * u_k^i` embedded in `nvars` variables.
    pub fn univariate(nvars: usize, k: usize, coeffs: &[f64]) -> Self {
        let mut p = Poly::zero(nvars);
        for (i, &c) in coeffs.iter().enumerate() {
            let mut powers = vec![0; nvars];
            powers[k] = i as u32;
            p.add_term(c, &powers);
        }
        p
    }

    pub fn from_terms(nvars: usize, terms: impl IntoIterator<Item = (f64, Vec<u32>)>) -> Self {
        let mut p = Poly::zero(nvars);
        for (c, powers) in terms {
            assert_eq!(powers.len(), nvars, "monomial arity mismatch");
            p.add_term(c, &powers);
        }
        p
    }

    /// Adds `c * u^powers`, merging with an existing monomial of the same degree.
    pub fn add_term(&mut self, c: f64, powers: &[u32]) {
        if c == 0.0 {
            return;
        }
        if let Some(m) = self.terms.iter_mut().find(|m| m.powers == powers) {
            m.coef += c;
        } else {
            self.terms.push(Monomial {
                coef: c,
                powers: powers.to_vec(),
            });
        }
        self.terms.retain(|m| m.coef != 0.0);
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn terms(&self) -> &[Monomial] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_constant(&self) -> bool {
        self.terms
            .iter()
            .all(|m| m.powers.iter().all(|&p| p == 0))
    }

    pub fn degree(&self) -> u32 {
        self.terms
            .iter()
            .map(|m| m.powers.iter().sum())
            .max()
            .unwrap_or(0)
    }

    pub fn eval(&self, u: &[f64]) -> f64 {
        debug_assert_eq!(u.len(), self.nvars);
        let mut acc = 0.0;
        for m in &self.terms {
            let mut t = m.coef;
            for (x, &p) in u.iter().zip(&m.powers) {
                if p > 0 {
                    t *= x.powi(p as i32);
                }
            }
            acc += t;
        }
        acc
    }

    /// Partial derivative with respect to variable `k`.
    pub fn derivative(&self, k: usize) -> Poly {
        let mut out = Poly::zero(self.nvars);
        for m in &self.terms {
            let p = m.powers[k];
            if p == 0 {
                continue;
            }
            let mut powers = m.powers.clone();
            powers[k] -= 1;
            out.add_term(m.coef * p as f64, &powers);
        }
        out
    }

    pub fn scaled(&self, s: f64) -> Poly {
        let mut out = Poly::zero(self.nvars);
        for m in &self.terms {
            out.add_term(m.coef * s, &m.powers);
        }
        out
    }

    pub fn add(&self, other: &Poly) -> Poly {
        assert_eq!(self.nvars, other.nvars);
        let mut out = self.clone();
        for m in &other.terms {
            out.add_term(m.coef, &m.powers);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_and_derivative() {
        // p = 3 + 2 u0 u1^2 - u0^3
        let p = Poly::from_terms(2, [(3.0, vec![0, 0]), (2.0, vec![1, 2]), (-1.0, vec![3, 0])]);
        let u = [1.5, -0.5];
        assert!((p.eval(&u) - (3.0 + 2.0 * 1.5 * 0.25 - 3.375)).abs() < 1e-15);
        let d0 = p.derivative(0);
        assert!((d0.eval(&u) - (2.0 * 0.25 - 3.0 * 2.25)).abs() < 1e-15);
        let d1 = p.derivative(1);
        assert!((d1.eval(&u) - (4.0 * 1.5 * -0.5)).abs() < 1e-15);
        assert_eq!(p.degree(), 3);
        assert!(!p.is_constant());
        assert!(p.derivative(0).derivative(0).derivative(0).derivative(0).is_zero());
    }

    #[test]
    fn terms_merge_and_cancel() {
        let mut p = Poly::univariate(1, 0, &[1.0, 2.0]);
        p.add_term(-2.0, &[1]);
        assert!(p.is_constant());
        assert_eq!(p.terms().len(), 1);
    }
}
