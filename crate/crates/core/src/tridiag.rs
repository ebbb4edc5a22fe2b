//! Tridiagonal matrices: band storage, matvec, Thomas solve, and the shared
//! trapezoidal (Crank-Nicolson) time step used by both the master-equation
//! and the Fokker-Planck integrators.

use crate::scalar::Scalar;

/// Tridiagonal matrix in band form. `sub[i]` is entry `(i+1, i)`, `diag[i]`
/// entry `(i, i)`, `sup[i]` entry `(i, i+1)`.
#[derive(Clone, Debug)]
pub struct TriBand<F> {
    pub sub: Vec<F>,
    pub diag: Vec<F>,
    pub sup: Vec<F>,
}

impl<F: Scalar> TriBand<F> {
    pub fn zeros(n: usize) -> Self {
        assert!(n >= 1);
        TriBand {
            sub: vec![F::zero(); n - 1],
            diag: vec![F::zero(); n],
            sup: vec![F::zero(); n - 1],
        }
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn matvec(&self, x: &[F], out: &mut [F]) {
        let n = self.dim();
        debug_assert_eq!(x.len(), n);
        debug_assert_eq!(out.len(), n);
        if n == 1 {
            out[0] = self.diag[0] * x[0];
            return;
        }
        out[0] = self.diag[0] * x[0] + self.sup[0] * x[1];
        for i in 1..n - 1 {
            out[i] = self.sub[i - 1] * x[i - 1] + self.diag[i] * x[i] + self.sup[i] * x[i + 1];
        }
        out[n - 1] = self.sub[n - 2] * x[n - 2] + self.diag[n - 1] * x[n - 1];
    }

    /// `I - gamma * self`, the implicit side of a trapezoidal step.
    pub fn implicit_matrix(&self, gamma: F) -> TriBand<F> {
        TriBand {
            sub: self.sub.iter().map(|&v| -gamma * v).collect(),
            diag: self.diag.iter().map(|&v| F::one() - gamma * v).collect(),
            sup: self.sup.iter().map(|&v| -gamma * v).collect(),
        }
    }

    /// Thomas factorization without pivoting. Intended for (column) diagonally
    /// dominant systems; near-zero pivots are nudged to keep inverse iteration
    /// on singular operators usable.
    pub fn factor(&self) -> TriFactor<F> {
        let n = self.dim();
        let mut inv_piv = vec![F::zero(); n];
        let sup = self.sup.clone();
        let tiny = F::min_positive_value() / F::epsilon();

        let mut piv = self.diag[0];
        if piv.abs() < tiny {
            piv = if piv >= F::zero() { tiny } else { -tiny };
        }
        inv_piv[0] = F::one() / piv;
        for i in 1..n {
            let w = self.sub[i - 1] * inv_piv[i - 1];
            let mut p = self.diag[i] - w * sup[i - 1];
            if p.abs() < tiny {
                p = if p >= F::zero() { tiny } else { -tiny };
            }
            inv_piv[i] = F::one() / p;
        }
        TriFactor {
            sub: self.sub.clone(),
            sup,
            inv_piv,
        }
    }
}

/// Precomputed Thomas factorization; forward/back substitution per solve.
#[derive(Clone, Debug)]
pub struct TriFactor<F> {
    sub: Vec<F>,
    sup: Vec<F>,
    inv_piv: Vec<F>,
}

impl<F: Scalar> TriFactor<F> {
    pub fn solve_into(&self, rhs: &[F], out: &mut [F]) {
        let n = self.inv_piv.len();
        debug_assert_eq!(rhs.len(), n);
        debug_assert_eq!(out.len(), n);
        // Forward sweep: out holds the transformed rhs.
        out[0] = rhs[0];
        for i in 1..n {
            let w = self.sub[i - 1] * self.inv_piv[i - 1];
            out[i] = rhs[i] - w * out[i - 1];
        }
        // Back substitution.
        out[n - 1] = out[n - 1] * self.inv_piv[n - 1];
        for i in (0..n - 1).rev() {
            out[i] = (out[i] - self.sup[i] * out[i + 1]) * self.inv_piv[i];
        }
    }

    pub fn solve(&self, rhs: &[F]) -> Vec<F> {
        let mut out = vec![F::zero(); rhs.len()];
        self.solve_into(rhs, &mut out);
        out
    }
}

/// One implicit trapezoidal step of `y' = M y`:
/// `(I - h/2 M) y_next = (I + h/2 M) y`.
/// `factor` must be the factorization of `I - h/2 M` for the same `h`.
pub fn trapezoid_step<F: Scalar>(
    m: &TriBand<F>,
    factor: &TriFactor<F>,
    half_h: F,
    y: &[F],
    rhs: &mut [F],
    out: &mut [F],
) {
    m.matvec(y, rhs);
    for i in 0..y.len() {
        rhs[i] = y[i] + half_h * rhs[i];
    }
    factor.solve_into(rhs, out);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_mul(t: &TriBand<f64>, x: &[f64]) -> Vec<f64> {
        let n = t.dim();
        let mut out = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                let a = if i == j {
                    t.diag[i]
                } else if j + 1 == i {
                    t.sub[j]
                } else if i + 1 == j {
                    t.sup[i]
                } else {
                    0.0
                };
                out[i] += a * x[j];
            }
        }
        out
    }

    fn lcg_seq(seed: u64, n: usize) -> Vec<f64> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            })
            .collect()
    }

    #[test]
    fn matvec_matches_dense() {
        let n = 9;
        let t = TriBand {
            sub: lcg_seq(1, n - 1),
            diag: lcg_seq(2, n).iter().map(|v| v + 4.0).collect(),
            sup: lcg_seq(3, n - 1),
        };
        let x = lcg_seq(4, n);
        let mut fast = vec![0.0; n];
        t.matvec(&x, &mut fast);
        let slow = dense_mul(&t, &x);
        for i in 0..n {
            assert!((fast[i] - slow[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn solve_inverts_matvec() {
        for n in [1usize, 2, 3, 17, 64] {
            let t = TriBand {
                sub: lcg_seq(10 + n as u64, n.saturating_sub(1)),
                diag: lcg_seq(20 + n as u64, n).iter().map(|v| v + 5.0).collect(),
                sup: lcg_seq(30 + n as u64, n.saturating_sub(1)),
            };
            let x_true = lcg_seq(40 + n as u64, n);
            let mut b = vec![0.0; n];
            t.matvec(&x_true, &mut b);
            let x = t.factor().solve(&b);
            for i in 0..n {
                assert!(
                    (x[i] - x_true[i]).abs() < 1e-12,
                    "n={n} i={i}: {} vs {}",
                    x[i],
                    x_true[i]
                );
            }
        }
    }

    #[test]
    fn trapezoid_step_is_exact_for_stationary_vector() {
        // M with column sums zero and a known null vector: 2x2 generator.
        let m = TriBand {
            sub: vec![1.0],
            diag: vec![-1.0, -2.0],
            sup: vec![2.0],
        };
        // Null vector of M: M (2, 1)^T = (-2 + 2, 1 - 2)... pick v with Mv = 0:
        // -v0 + 2 v1 = 0 and v0 - 2 v1 = 0 -> v = (2, 1).
        let v = vec![2.0f64, 1.0];
        let h = 0.37;
        let factor = m.implicit_matrix(h / 2.0).factor();
        let mut rhs = vec![0.0; 2];
        let mut out = vec![0.0; 2];
        trapezoid_step(&m, &factor, h / 2.0, &v, &mut rhs, &mut out);
        assert!((out[0] - 2.0).abs() < 1e-14);
        assert!((out[1] - 1.0).abs() < 1e-14);
    }
}
