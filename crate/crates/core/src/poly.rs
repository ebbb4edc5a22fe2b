//! Dense univariate polynomials in the monomial basis.
//!
//! Coefficients are stored lowest degree first, matching the model-file
//! convention. Rate functions, drift/diffusion combinations and test
//! integrands are all exact polynomial algebra until the final pointwise
//! evaluation, so derivatives and antiderivatives here are exact in the
//! coefficients.

use crate::scalar::{real, real_of, Scalar};

#[derive(Clone, Debug, PartialEq)]
pub struct Poly<F> {
    coeffs: Vec<F>,
}

impl<F: Scalar> Poly<F> {
    /// Build from coefficients, lowest degree first. An empty list is the
    /// zero polynomial.
    pub fn new(coeffs: Vec<F>) -> Self {
        if coeffs.is_empty() {
            return Self::zero();
        }
        Poly { coeffs }
    }

    pub fn zero() -> Self {
        Poly {
            coeffs: vec![F::zero()],
        }
    }

    pub fn constant(c: F) -> Self {
        Poly { coeffs: vec![c] }
    }

    pub fn from_f64(coeffs: &[f64]) -> Self {
        Self::new(coeffs.iter().map(|&c| real(c)).collect())
    }

    pub fn coeffs(&self) -> &[F] {
        &self.coeffs
    }

    /// Degree of the stored representation (trailing zero coefficients are
    /// not trimmed; `degree` reflects the highest stored index).
    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| *c == F::zero())
    }

    /// Horner evaluation.
    pub fn eval(&self, z: F) -> F {
        let mut acc = F::zero();
        for &c in self.coeffs.iter().rev() {
            acc = acc * z + c;
        }
        acc
    }

    /// Exact first derivative.
    pub fn derivative(&self) -> Poly<F> {
        if self.coeffs.len() <= 1 {
            return Poly::zero();
        }
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .skip(1)
            .map(|(k, &c)| c * real_of::<F>(k))
            .collect();
        Poly { coeffs }
    }

    /// Exact n-th derivative.
    pub fn derivative_n(&self, n: usize) -> Poly<F> {
        let mut p = self.clone();
        for _ in 0..n {
            p = p.derivative();
        }
        p
    }

    /// Exact antiderivative with zero constant term.
    pub fn antiderivative(&self) -> Poly<F> {
        let mut coeffs = Vec::with_capacity(self.coeffs.len() + 1);
        coeffs.push(F::zero());
        for (k, &c) in self.coeffs.iter().enumerate() {
            coeffs.push(c / real_of::<F>(k + 1));
        }
        Poly { coeffs }
    }

    /// Exact definite integral over `[a, b]`.
    pub fn definite_integral(&self, a: F, b: F) -> F {
        let anti = self.antiderivative();
        anti.eval(b) - anti.eval(a)
    }

    pub fn add(&self, other: &Poly<F>) -> Poly<F> {
        let n = self.coeffs.len().max(other.coeffs.len());
        let mut coeffs = vec![F::zero(); n];
        for (k, &c) in self.coeffs.iter().enumerate() {
            coeffs[k] += c;
        }
        for (k, &c) in other.coeffs.iter().enumerate() {
            coeffs[k] += c;
        }
        Poly { coeffs }
    }

    pub fn sub(&self, other: &Poly<F>) -> Poly<F> {
        self.add(&other.scale(-F::one()))
    }

    pub fn scale(&self, s: F) -> Poly<F> {
        Poly {
            coeffs: self.coeffs.iter().map(|&c| c * s).collect(),
        }
    }

    /// Polynomial product (coefficient convolution).
    pub fn mul(&self, other: &Poly<F>) -> Poly<F> {
        let mut coeffs = vec![F::zero(); self.coeffs.len() + other.coeffs.len() - 1];
        for (i, &a) in self.coeffs.iter().enumerate() {
            for (j, &b) in other.coeffs.iter().enumerate() {
                coeffs[i + j] += a * b;
            }
        }
        Poly { coeffs }
    }

    /// Sup norm of `|p|` over `[lo, hi]` sampled on `n_points` uniform points
    /// (inclusive endpoints). Returns `(max, argmax)`.
    pub fn sup_norm_sampled(&self, lo: F, hi: F, n_points: usize) -> (F, F) {
        debug_assert!(n_points >= 2);
        let mut best = F::zero();
        let mut best_z = lo;
        let step = (hi - lo) / real_of::<F>(n_points - 1);
        for i in 0..n_points {
            let z = lo + step * real_of::<F>(i);
            let v = self.eval(z).abs();
            if v > best {
                best = v;
                best_z = z;
            }
        }
        (best, best_z)
    }
}
