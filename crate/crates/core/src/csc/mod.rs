//! Convolutional sparse coding by iterative soft thresholding.
//!
//! For a signal `y` (`b×c×h×w`) and a dictionary of `m` filters stored as a
//! `m×c×s×s` bank `f`, the synthesis operator `F` maps codes `z`
//! (`b×m×h×w`) to signals and the objective is
//!
//! ```text
//! ½‖y − F z‖² + λ‖z‖₁
//! ```
//!
//! With zero-padded correlation as the primitive, `F z = conv2d_adjoint(z, f)`
//! and `Fᵀ r = conv2d_same(r, f)`, so an ISTA step
//! `z ← h(z + (1/L) Fᵀ(y − F z))` needs two convolutions and no matrices.

mod dense;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{config_err, shape_err, Result};
use crate::tensor::{conv2d_adjoint, conv2d_same, FilterBank, Shape, Tensor4};

pub use dense::{build_convolution_matrix, unvectorize, vectorize, DenseMatrix, MAX_DENSE_ENTRIES};

/// Factor applied to the power-iteration estimate of `λ_max(FᵀF)` before it
/// is used as a step size.
pub const LIPSCHITZ_MARGIN: f64 = 1.05;

const POWER_MAX_ITERS: usize = 10_000;
const POWER_SEED: u64 = 0x5eed_c15a;

#[derive(Clone, Debug)]
pub struct CscProblem {
    pub y: Tensor4,
    /// `m×c×s×s`.
    pub filters: FilterBank,
    pub lambda: f64,
    /// Use the one-sided threshold `max(v − θ, 0)` instead of the signed one.
    pub nonnegative: bool,
}

impl CscProblem {
    pub fn new(y: Tensor4, filters: FilterBank, lambda: f64, nonnegative: bool) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(config_err!("lambda must be finite and >= 0, got {lambda}"));
        }
        if filters.in_channels() != y.shape().c {
            return Err(shape_err!(
                "dictionary expects {} signal channels, signal has {}",
                filters.in_channels(),
                y.shape().c
            ));
        }
        Ok(CscProblem {
            y,
            filters,
            lambda,
            nonnegative,
        })
    }

    pub fn num_filters(&self) -> usize {
        self.filters.out_channels()
    }

    pub fn code_shape(&self) -> Shape {
        let s = self.y.shape();
        Shape::new(s.b, self.num_filters(), s.h, s.w)
    }

    /// `F z`.
    pub fn synthesize(&self, z: &Tensor4) -> Result<Tensor4> {
        conv2d_adjoint(z, &self.filters)
    }

    /// `Fᵀ r`.
    pub fn analyze(&self, r: &Tensor4) -> Result<Tensor4> {
        conv2d_same(r, &self.filters)
    }

    fn check_code(&self, z: &Tensor4) -> Result<()> {
        if z.shape() != self.code_shape() {
            return Err(shape_err!(
                "code has shape {} but the problem needs {}",
                z.shape(),
                self.code_shape()
            ));
        }
        Ok(())
    }
}

/// Iterate `z_k` with its objective value.
#[derive(Clone, Debug, PartialEq)]
pub struct CistaState {
    pub z: Tensor4,
    pub iteration: usize,
    pub objective: f64,
}

impl CistaState {
    /// `z = 0` at iteration 0.
    pub fn zero(p: &CscProblem) -> Result<Self> {
        let z = Tensor4::zeros(p.code_shape());
        let objective = csc_objective(p, &z)?;
        Ok(CistaState {
            z,
            iteration: 0,
            objective,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LipschitzEstimate {
    /// Estimate of `λ_max(FᵀF)`.
    pub value: f64,
    pub iterations: usize,
    /// `‖FᵀF v − λ v‖ / ‖v‖` at the final iterate.
    pub residual: f64,
    pub converged: bool,
}

/// `½‖y − F z‖² + λ‖z‖₁`.
pub fn csc_objective(p: &CscProblem, z: &Tensor4) -> Result<f64> {
    p.check_code(z)?;
    let r = p.y.sub(&p.synthesize(z)?)?;
    Ok(0.5 * r.norm_sq() + p.lambda * z.l1_norm())
}

/// Power iteration on `z ↦ Fᵀ(F z)` for codes matching `signal_shape`.
///
/// Stops once the Rayleigh quotient changes by less than `tol` (relative)
/// and the eigen-residual is below `√tol·λ`. The quotient alone can stall
/// while the iterate still mixes two nearly equal top eigenvectors.
pub fn estimate_lipschitz(
    f: &FilterBank,
    signal_shape: Shape,
    tol: f64,
) -> Result<LipschitzEstimate> {
    if !(tol > 0.0) {
        return Err(config_err!("tolerance must be positive, got {tol}"));
    }
    if signal_shape.c != f.in_channels() {
        return Err(shape_err!(
            "dictionary expects {} signal channels, got {}",
            f.in_channels(),
            signal_shape.c
        ));
    }
    let code_shape = Shape::new(
        signal_shape.b,
        f.out_channels(),
        signal_shape.h,
        signal_shape.w,
    );
    let gram = |v: &Tensor4| conv2d_same(&conv2d_adjoint(v, f)?, f);

    let mut rng = ChaCha8Rng::seed_from_u64(POWER_SEED);
    let mut v = Tensor4::random_uniform(code_shape, -1.0, 1.0, &mut rng);
    v = v.scale(1.0 / v.norm());
    let mut estimate = 0.0;
    let mut residual = f64::INFINITY;
    for it in 1..=POWER_MAX_ITERS {
        let av = gram(&v)?;
        let lambda = v.dot(&av)?;
        let mut res = av.clone();
        res.axpy(-lambda, &v)?;
        residual = res.norm();
        let norm = av.norm();
        if norm == 0.0 {
            // FᵀF annihilates the start vector: the operator is zero.
            return Ok(LipschitzEstimate {
                value: 0.0,
                iterations: it,
                residual: 0.0,
                converged: true,
            });
        }
        let change = (lambda - estimate).abs() / lambda.abs().max(f64::MIN_POSITIVE);
        estimate = lambda;
        v = av.scale(1.0 / norm);
        if change < tol && residual <= tol.sqrt() * lambda {
            return Ok(LipschitzEstimate {
                value: estimate,
                iterations: it,
                residual,
                converged: true,
            });
        }
    }
    Ok(LipschitzEstimate {
        value: estimate,
        iterations: POWER_MAX_ITERS,
        residual,
        converged: false,
    })
}

/// Signed soft threshold `sign(v)·max(|v| − θ, 0)`, or `max(v − θ, 0)` when
/// `nonnegative`.
#[inline]
pub fn soft_threshold(v: f64, theta: f64, nonnegative: bool) -> f64 {
    if nonnegative {
        (v - theta).max(0.0)
    } else if v > theta {
        v - theta
    } else if v < -theta {
        v + theta
    } else {
        0.0
    }
}

/// One step `z ← h_{λ/L}(z + (1/L) Fᵀ(y − F z))`. The caller guarantees
/// `lipschitz ≥ λ_max(FᵀF)` if descent is wanted.
pub fn cista_step(p: &CscProblem, state: &CistaState, lipschitz: f64) -> Result<CistaState> {
    p.check_code(&state.z)?;
    let residual = p.y.sub(&p.synthesize(&state.z)?)?;
    let grad = p.analyze(&residual)?;
    let step = 1.0 / lipschitz;
    let theta = p.lambda / lipschitz;
    let z = state.z.zip_map(&grad, |z, g| {
        soft_threshold(z + step * g, theta, p.nonnegative)
    })?;
    let objective = csc_objective(p, &z)?;
    Ok(CistaState {
        z,
        iteration: state.iteration + 1,
        objective,
    })
}

/// Result of [`solve_traced`].
#[derive(Clone, Debug)]
pub struct CscSolution {
    pub state: CistaState,
    pub lipschitz: f64,
    /// Objective after each iteration, starting with `z_1 = h((1/L)Fᵀy)`.
    pub trace: Vec<f64>,
}

/// Run CISTA from `z_1 = h((1/L)Fᵀy)` until the relative objective change
/// drops below `tol` or `max_iters` iterations have run.
pub fn solve(p: &CscProblem, max_iters: usize, tol: f64) -> Result<CistaState> {
    Ok(solve_traced(p, max_iters, tol)?.state)
}

pub fn solve_traced(p: &CscProblem, max_iters: usize, tol: f64) -> Result<CscSolution> {
    if max_iters == 0 {
        return Err(config_err!("max_iters must be >= 1"));
    }
    let estimate = estimate_lipschitz(&p.filters, p.y.shape(), 1e-9)?;
    let lipschitz = LIPSCHITZ_MARGIN * estimate.value;
    if !(lipschitz > 0.0) {
        return Err(config_err!("dictionary is identically zero"));
    }
    // The first step from zero is h((1/L) Fᵀy).
    let mut state = cista_step(p, &CistaState::zero(p)?, lipschitz)?;
    let mut trace = vec![state.objective];
    while state.iteration < max_iters {
        let next = cista_step(p, &state, lipschitz)?;
        let change = (state.objective - next.objective).abs();
        let scale = next.objective.abs();
        state = next;
        trace.push(state.objective);
        if scale == 0.0 || change / scale < tol {
            break;
        }
    }
    Ok(CscSolution {
        state,
        lipschitz,
        trace,
    })
}

/// Per-channel identity bank: `conv2d_same(z, delta_kernel(c, k)) == z`.
pub fn delta_kernel(channels: usize, k: usize) -> Result<FilterBank> {
    FilterBank::delta(channels, k)
}

/// The recurrent form `z ← h(W ⊛ y + S ⊛ z)` of a CISTA step, written in
/// this crate's correlation convention: `W = f / L` (so `W ⊛ y = (1/L)Fᵀy`)
/// and `S = δ − G / L` where `G` (`m×m×(2s−1)×(2s−1)`) composes the
/// synthesis and analysis filters.
///
/// `S ⊛ z` equals `z − (1/L)FᵀF z` only at pixels at least `s/2` away from
/// the border: the composed kernel reads synthesis outputs that the
/// zero-padded two-step form discards.
pub fn recurrent_weights(f: &FilterBank, lipschitz: f64) -> Result<(FilterBank, FilterBank)> {
    let (m, c, s) = (f.out_channels(), f.in_channels(), f.kernel_size());
    let w = FilterBank::new(f.weights().scale(1.0 / lipschitz))?;
    let big = 2 * s - 1;
    let centre = s - 1;
    let mut g = Tensor4::zeros(Shape::new(m, m, big, big));
    for i in 0..m {
        for j in 0..m {
            for ch in 0..c {
                for a0 in 0..s {
                    for a1 in 0..s {
                        let wa = f.at(i, ch, a0, a1);
                        for b0 in 0..s {
                            for b1 in 0..s {
                                let e0 = a0 + centre - b0;
                                let e1 = a1 + centre - b1;
                                let idx = g.index(i, j, e0, e1);
                                g.data_mut()[idx] += wa * f.at(j, ch, b0, b1);
                            }
                        }
                    }
                }
            }
        }
    }
    let delta = FilterBank::delta(m, big)?;
    let mut s_bank = delta.into_tensor();
    s_bank.axpy(-1.0 / lipschitz, &g)?;
    Ok((w, FilterBank::new(s_bank)?))
}
