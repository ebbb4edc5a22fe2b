//! Uniform spatial grids over `[-h, 1+h]` with `h = 1/(2N)`.
//!
//! The PDE comparison depends on lattice points `k/N` being grid nodes
//! *exactly*, so node positions are computed as the single rounded division
//! `(j - r) / (2rN)`. Both `k/N` and its matching node then round to the same
//! f64, making lattice extraction bit-exact rather than interpolated.

use serde::Serialize;

use crate::scalar::{real_of, Scalar};

/// Uniform grid description: `N` lattice intervals, refinement `r` cells per
/// half lattice spacing, `m = 2r(N+1) + 1` nodes spanning `[-h, 1+h]`.
#[derive(Clone, Debug, Serialize)]
pub struct GridSpec<F> {
    n: usize,
    r: usize,
    m: usize,
    x0: F,
    dx: F,
    #[serde(skip)]
    nodes: Vec<F>,
}

impl<F: Scalar> GridSpec<F> {
    pub fn new(n: usize, r: usize) -> Self {
        assert!(n >= 1, "grid needs at least one lattice interval");
        assert!(r >= 1, "refinement factor must be at least 1");
        let m = 2 * r * (n + 1) + 1;
        let denom: F = real_of(2 * r * n);
        let nodes: Vec<F> = (0..m)
            .map(|j| {
                let signed = j as i64 - r as i64;
                F::from_i64(signed).expect("node index fits in scalar") / denom
            })
            .collect();
        let x0 = nodes[0];
        let dx = F::one() / denom;
        GridSpec {
            n,
            r,
            m,
            x0,
            dx,
            nodes,
        }
    }

    /// Lattice size `N` (states run `0..=N`).
    pub fn n(&self) -> usize {
        self.n
    }

    /// Cells per half lattice spacing.
    pub fn r(&self) -> usize {
        self.r
    }

    /// Total node count.
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn x0(&self) -> F {
        self.x0
    }

    pub fn dx(&self) -> F {
        self.dx
    }

    /// Half lattice spacing `h = 1/(2N)`; the grid spans `[-h, 1+h]`.
    pub fn h(&self) -> F {
        real_of::<F>(self.r) * self.dx
    }

    pub fn node(&self, j: usize) -> F {
        self.nodes[j]
    }

    pub fn nodes(&self) -> &[F] {
        &self.nodes
    }

    /// Index of the node coinciding with lattice point `k/N`.
    pub fn lattice_index(&self, k: usize) -> usize {
        self.r * (2 * k + 1)
    }

    /// Midpoint between nodes `j` and `j+1`, computed as one rounded division.
    pub fn interface(&self, j: usize) -> F {
        let num = 2 * (j as i64 - self.r as i64) + 1;
        let denom: F = real_of(4 * self.r * self.n);
        F::from_i64(num).expect("interface index fits in scalar") / denom
    }
}

/// Values of a function on the nodes of a [`GridSpec`].
#[derive(Clone, Debug)]
pub struct GridFunction<F> {
    pub grid: GridSpec<F>,
    pub values: Vec<F>,
}

impl<F: Scalar> GridFunction<F> {
    pub fn new(grid: GridSpec<F>, values: Vec<F>) -> Self {
        assert_eq!(
            grid.m(),
            values.len(),
            "grid function needs one value per node"
        );
        GridFunction { grid, values }
    }
}
