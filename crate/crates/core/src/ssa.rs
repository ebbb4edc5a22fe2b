//! Exact-event stochastic oracle: Gillespie simulation of the lattice jump
//! chain (up rate `a_k = N A(k/N)`, down rate `c_k = N C(k/N)`), snapshotted
//! at requested times as empirical state counts.
//!
//! Determinism contract: path `iuses its own generator seeded by
//! `mix64(seed XOR i)`, so results are bit-identical for a given
//! `(model, config)` regardless of how paths are scheduled across threads
//! (counts are accumulated with integer addition, which commutes).

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::rates::RateModel;
use crate::scalar::{real, real_of, Scalar};

#[derive(Debug, Error)]
pub enum SsaError {
    #[error("initial state {k0} is outside the lattice 0..={n}")]
    InvalidStart { k0: usize, n: usize },
    #[error("initial distribution is invalid: {0}")]
    BadDistribution(String),
    #[error("expected {expected} lattice entries, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("negative propensity at k = {k}: {value:e}")]
    NegativeRate { k: usize, value: f64 },
}

// ---------------------------------------------------------------------------
// Pseudo-random stream
// ---------------------------------------------------------------------------

/// Finalization mix of the splitmix64 generator.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// splitmix64: a tiny counter-based generator with explicit 64-bit state.
/// Statistically solid for Monte-Carlo use and trivially splittable, which
/// is exactly what per-path reproducibility needs.
#[derive(Clone, Debug)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        mix64(self.state)
    }

    /// Uniform on the open interval (0, 1): 53-bit mantissa, offset half an
    /// ulp so 0 and 1 are unreachable (safe under `ln`).
    pub fn uniform_open01(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) / (1u64 << 53) as f64
    }
}

/// The documented stream-splitting rule: path `i` draws from
/// `SplitMix64::new(mix64(seed ^ i))`.
pub fn path_stream(seed: u64, path_index: u64) -> SplitMix64 {
    SplitMix64::new(mix64(seed ^ path_index))
}

// ---------------------------------------------------------------------------
// Configuration and output
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub enum SsaStart<F> {
    /// All paths begin at this lattice state.
    State(usize),
    /// Each path draws its initial state from this distribution over
    /// `0..=N` (length `N+1`, nonnegative, positive total).
    Distribution(Vec<F>),
}

#[derive(Clone, Debug)]
pub struct SsaConfig<F> {
    pub n: usize,
    pub start: SsaStart<F>,
    /// Snapshot times, strictly increasing, first one at or after 0.
    pub times: Vec<F>,
    pub n_paths: usize,
    pub seed: u64,
}

/// State counts over the ensemble at one snapshot time.
#[derive(Clone, Debug, Serialize)]
pub struct EmpiricalDistribution<F> {
    pub n: usize,
    pub t: F,
    /// `counts[k]` paths were in state `k` at time `t`; sums to `n_paths`.
    pub counts: Vec<u64>,
    pub n_paths: usize,
}

impl<F: Scalar> EmpiricalDistribution<F> {
    pub fn probabilities(&self) -> Vec<F> {
        let total: F = real_of(self.n_paths);
        self.counts
            .iter()
            .map(|&c| real_of::<F>(c as usize) / total)
            .collect()
    }
}

/// Total-variation distance `(1/2) sum_k |counts_k / n_paths - p_k|`.
pub fn tv_distance<F: Scalar>(
    emp: &EmpiricalDistribution<F>,
    p: &[F],
) -> Result<F, SsaError> {
    if p.len() != emp.n + 1 {
        return Err(SsaError::LengthMismatch {
            expected: emp.n + 1,
            got: p.len(),
        });
    }
    let total: F = real_of(emp.n_paths);
    let sum = emp
        .counts
        .iter()
        .zip(p)
        .fold(F::zero(), |s, (&c, &pk)| {
            s + (real_of::<F>(c as usize) / total - pk).abs()
        });
    Ok(sum * real(0.5))
}

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

/// Run `n_paths` independent exact-jump simulations and tabulate the state
/// distribution at every snapshot time. Exponential waiting times with the
/// current total propensity; up-jump with probability `a_k / (a_k + c_k)`;
/// a state with zero total propensity is absorbing. The lattice endpoint
/// propensities `a_N` and `c_0` are zero by construction, so paths can
/// never leave `{0..N}`.
pub fn simulate<F: Scalar>(
    model: &RateModel<F>,
    cfg: &SsaConfig<F>,
) -> Result<Vec<EmpiricalDistribution<F>>, SsaError> {
    let n = cfg.n;
    assert!(cfg.n_paths >= 1, "need at least one path");
    assert!(!cfg.times.is_empty(), "need at least one snapshot time");
    assert!(
        cfg.times.windows(2).all(|w| w[0] < w[1]),
        "snapshot times must be strictly increasing"
    );
    assert!(cfg.times[0] >= F::zero());

    // Propensity tables: tiny negative rate values (rounding in A(1) = 0 or
    // C(0) = 0) clamp to zero; genuinely negative rates are rejected.
    let nf: F = real_of(n);
    let floor = real::<F>(-1e-9) * nf;
    let mut up = vec![0.0f64; n + 1];
    let mut down = vec![0.0f64; n + 1];
    for k in 0..=n {
        let z = real_of::<F>(k) / nf;
        let a = nf * model.a().eval(z);
        let c = nf * model.c().eval(z);
        for (slot, v) in [(&mut up[k], a), (&mut down[k], c)] {
            if v < floor {
                return Err(SsaError::NegativeRate {
                    k,
                    value: v.to_f64().unwrap_or(f64::NAN),
                });
            }
            *slot = v.to_f64().unwrap_or(0.0).max(0.0);
        }
    }
    up[n] = 0.0;
    down[0] = 0.0;

    // Initial-state sampler data.
    let start_cdf = match &cfg.start {
        SsaStart::State(k0) => {
            if *k0 > n {
                return Err(SsaError::InvalidStart { k0: *k0, n });
            }
            None
        }
        SsaStart::Distribution(p0) => {
            if p0.len() != n + 1 {
                return Err(SsaError::LengthMismatch {
                    expected: n + 1,
                    got: p0.len(),
                });
            }
            if p0.iter().any(|&v| v < F::zero()) {
                return Err(SsaError::BadDistribution(
                    "negative entry in initial distribution".into(),
                ));
            }
            let total = crate::scalar::total(p0);
            if !(total > F::zero()) {
                return Err(SsaError::BadDistribution(
                    "initial distribution has no mass".into(),
                ));
            }
            let mut cdf = Vec::with_capacity(n + 1);
            let mut acc = 0.0f64;
            for &v in p0 {
                acc += (v / total).to_f64().unwrap_or(0.0);
                cdf.push(acc);
            }
            Some(cdf)
        }
    };

    let times_f64: Vec<f64> = cfg
        .times
        .iter()
        .map(|&t| t.to_f64().expect("snapshot times must be finite"))
        .collect();
    let n_times = times_f64.len();

    let zero_counts = || vec![vec![0u64; n + 1]; n_times];
    let counts: Vec<Vec<u64>> = (0..cfg.n_paths as u64)
        .into_par_iter()
        .fold(zero_counts, |mut acc, path| {
            let mut stream = path_stream(cfg.seed, path);
            let mut k = match (&cfg.start, &start_cdf) {
                (SsaStart::State(k0), _) => *k0,
                (SsaStart::Distribution(_), Some(cdf)) => {
                    let u = stream.uniform_open01();
                    cdf.iter().position(|&c| u <= c).unwrap_or(n)
                }
                _ => unreachable!(),
            };
            let mut t = 0.0f64;
            for (i, &ts) in times_f64.iter().enumerate() {
                // Exponential clocks are memoryless and the state is frozen
                // between events, so restarting the waiting-time draw at a
                // snapshot boundary leaves the law of the path unchanged.
                loop {
                    let total = up[k] + down[k];
                    if total <= 0.0 {
                        break; // absorbing state
                    }
                    let wait = -stream.uniform_open01().ln() / total;
                    if t + wait > ts {
                        break;
                    }
                    t += wait;
                    let u = stream.uniform_open01();
                    if u * total < up[k] {
                        k += 1;
                    } else {
                        k -= 1;
                    }
                }
                t = ts;
                acc[i][k] += 1;
            }
            acc
        })
        .reduce(zero_counts, |mut a, b| {
            for (ra, rb) in a.iter_mut().zip(&b) {
                for (ca, &cb) in ra.iter_mut().zip(rb) {
                    *ca += cb;
                }
            }
            a
        });

    Ok(counts
        .into_iter()
        .zip(cfg.times.iter())
        .map(|(c, &t)| EmpiricalDistribution {
            n,
            t,
            counts: c,
            n_paths: cfg.n_paths,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convergence::fit_order;
    use crate::master::{build_generator, solve_master};
    use crate::rates::ehrenfest;

    #[test]
    fn splitting_rule_is_stable() {
        // Pin the documented mix so the stream derivation can never drift
        // silently: splitmix64 of seed 0 starts 0xE220A8397B1DCDAF.
        let mut s = SplitMix64::new(0);
        assert_eq!(s.next_u64(), 0xE220_A839_7B1D_CDAF);
        let u = SplitMix64::new(1).uniform_open01();
        assert!(u > 0.0 && u < 1.0);
        // Distinct paths get distinct streams from the same seed.
        assert_ne!(
            path_stream(42, 0).next_u64(),
            path_stream(42, 1).next_u64()
        );
    }

    #[test]
    fn pure_death_chain_is_monotone_and_absorbs() {
        // A = 0, C = z: only down-jumps, rate k from state k; state 0 is
        // absorbing. Every path from k0 stays at or below k0, and by t = 50
        // (mean extinction ~ log k0) everything has died out.
        let model = RateModel::new(vec![0.0f64], vec![0.0, 1.0], 0.1, "death").unwrap();
        let cfg = SsaConfig {
            n: 50,
            start: SsaStart::State(30),
            times: vec![0.5, 50.0],
            n_paths: 2000,
            seed: 7,
        };
        let snaps = simulate(&model, &cfg).unwrap();
        for snap in &snaps {
            assert_eq!(snap.counts.iter().sum::<u64>(), 2000);
            assert!(snap.counts[31..].iter().all(|&c| c == 0), "path above k0");
        }
        assert_eq!(snaps[1].counts[0], 2000, "all paths absorbed at 0");

        // Binomial thinning oracle at t = 0.5: mean k0 e^{-t}.
        let mean: f64 = snaps[0]
            .counts
            .iter()
            .enumerate()
            .map(|(k, &c)| k as f64 * c as f64)
            .sum::<f64>()
            / 2000.0;
        let expect = 30.0 * (-0.5f64).exp();
        let sigma = (30.0 * (-0.5f64).exp() * (1.0 - (-0.5f64).exp()) / 2000.0).sqrt();
        assert!(
            (mean - expect).abs() < 4.0 * sigma,
            "mean {mean} vs {expect} (sigma {sigma})"
        );
    }

    #[test]
    fn stationary_mean_matches_the_binomial_law() {
        let cfg = SsaConfig {
            n: 50,
            start: SsaStart::State(0),
            times: vec![20.0],
            n_paths: 20_000,
            seed: 2024,
        };
        let snap = &simulate(&ehrenfest::<f64>(), &cfg).unwrap()[0];
        assert_eq!(snap.counts.iter().sum::<u64>(), 20_000);
        let mean: f64 = snap
            .counts
            .iter()
            .enumerate()
            .map(|(k, &c)| k as f64 * c as f64)
            .sum::<f64>()
            / 20_000.0;
        let sigma = (50.0f64 / 4.0).sqrt() / (20_000.0f64).sqrt();
        assert!(
            (mean - 25.0).abs() < 3.0 * sigma,
            "mean {mean}, sigma {sigma}"
        );
    }

    #[test]
    fn fixed_seed_reproduces_bit_identical_counts() {
        let cfg = SsaConfig {
            n: 20,
            start: SsaStart::State(5),
            times: vec![0.3, 1.0],
            n_paths: 500,
            seed: 99,
        };
        let a = simulate(&ehrenfest::<f64>(), &cfg).unwrap();
        let b = simulate(&ehrenfest::<f64>(), &cfg).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.counts, y.counts);
        }

        // Single path, too (the determinism contract's smallest case).
        let cfg1 = SsaConfig {
            n_paths: 1,
            ..cfg.clone()
        };
        assert_eq!(
            simulate(&ehrenfest::<f64>(), &cfg1).unwrap()[1].counts,
            simulate(&ehrenfest::<f64>(), &cfg1).unwrap()[1].counts
        );
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let cfg = SsaConfig {
            n: 20,
            start: SsaStart::State(10),
            times: vec![1.0],
            n_paths: 4000,
            seed: 5,
        };
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| simulate(&ehrenfest::<f64>(), &cfg).unwrap())
        };
        assert_eq!(run(1)[0].counts, run(4)[0].counts);
    }

    #[test]
    fn distribution_start_and_guards() {
        // Point-mass distribution start: every path begins at its atom.
        let mut p0 = vec![0.0f64; 21];
        p0[20] = 1.0;
        let cfg = SsaConfig {
            n: 20,
            start: SsaStart::Distribution(p0),
            times: vec![1e-9],
            n_paths: 300,
            seed: 1,
        };
        let snap = &simulate(&ehrenfest::<f64>(), &cfg).unwrap()[0];
        // Over a 1e-9 horizon (mean 20 events per unit time) essentially
        // every path is still at its starting state.
        assert!(snap.counts[20] >= 299);

        let bad = SsaConfig {
            n: 20,
            start: SsaStart::State(21),
            times: vec![1.0],
            n_paths: 1,
            seed: 1,
        };
        assert!(matches!(
            simulate(&ehrenfest::<f64>(), &bad),
            Err(SsaError::InvalidStart { k0: 21, n: 20 })
        ));

        let bad = SsaConfig {
            n: 20,
            start: SsaStart::Distribution(vec![1.0; 5]),
            times: vec![1.0],
            n_paths: 1,
            seed: 1,
        };
        assert!(matches!(
            simulate(&ehrenfest::<f64>(), &bad),
            Err(SsaError::LengthMismatch {
                expected: 21,
                got: 5
            })
        ));
    }

    #[test]
    fn tv_distance_pins() {
        let emp = EmpiricalDistribution::<f64> {
            n: 3,
            t: 0.0,
            counts: vec![4, 0, 0, 0],
            n_paths: 4,
        };
        // Identical distributions.
        assert_eq!(tv_distance(&emp, &[1.0, 0.0, 0.0, 0.0]).unwrap(), 0.0);
        // Disjoint supports.
        assert_eq!(tv_distance(&emp, &[0.0, 0.0, 0.0, 1.0]).unwrap(), 1.0);
        assert!(matches!(
            tv_distance(&emp, &[1.0, 0.0]),
            Err(SsaError::LengthMismatch {
                expected: 4,
                got: 2
            })
        ));
    }

    #[test]
    fn tv_error_decays_like_root_paths() {
        // Against the master solution at t = 1; multinomial sampling noise
        // should shrink like n_paths^{-1/2}.
        let n = 20;
        let gen = build_generator(&ehrenfest::<f64>(), n).unwrap();
        let mut p0 = vec![0.0; n + 1];
        p0[5] = 1.0;
        let p = solve_master(&gen, &p0, &[1.0]).unwrap().states[0].clone();

        let points: Vec<(usize, f64)> = [1_000usize, 10_000, 100_000]
            .iter()
            .map(|&paths| {
                let cfg = SsaConfig {
                    n,
                    start: SsaStart::State(5),
                    times: vec![1.0],
                    n_paths: paths,
                    seed: 31,
                };
                let snap = &simulate(&ehrenfest::<f64>(), &cfg).unwrap()[0];
                (paths, tv_distance(snap, &p).unwrap())
            })
            .collect();
        let fit = fit_order(&points).unwrap();
        assert!(
            (fit.slope + 0.5).abs() <= 0.15,
            "slope {} from {:?}",
            fit.slope,
            points
        );
        // And the largest run sits inside the standard multinomial envelope.
        let envelope = 3.0 * ((n as f64 + 1.0) / 100_000.0).sqrt();
        assert!(points[2].1 <= envelope);
    }
}
