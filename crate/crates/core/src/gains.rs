//! Consensus gain synthesis for the quadrotor plant.
//!
//! The follower law reads the state error through `g(x)ᵀ P`, so with the
//! identity gain the quadrotor's position errors are invisible to the four
//! actuated channels and nothing converges. A stabilizing `P` must couple
//! position errors into the velocity and body-rate rows. The hover
//! linearization decouples into four chains (x/pitch, y/roll, altitude, yaw);
//! solving one small Riccati equation per chain and reassembling the blocks
//! yields a symmetric positive definite gain whose quadratic Lyapunov
//! function decreases for every grounded-Laplacian eigenvalue above 1/2 once
//! the gain is scaled by the network margin.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::plant::QuadrotorParams;
use crate::topology::GroundedLaplacian;

/// Largest real part over the eigenvalues of a (generally nonsymmetric)
/// matrix.
pub fn spectral_abscissa(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues()
        .iter()
        .fold(f64::NEG_INFINITY, |acc, l| acc.max(l.re))
}

/// Solve `Aᵀ X + X A + Q = 0` for symmetric `X` by vectorizing the Sylvester
/// structure; `A` must be Hurwitz for the solution to be positive definite.
pub fn solve_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n || q.nrows() != n || q.ncols() != n {
        return Err(Error::Dimension("Lyapunov solve needs square same-size inputs".into()));
    }
    let eye = DMatrix::identity(n, n);
    let at = a.transpose();
    let coeff = crate::linalg::kron(&eye, &at) + crate::linalg::kron(&at, &eye);
    let rhs = DVector::from_iterator(n * n, (-q).iter().copied());
    let sol = coeff
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::GainSynthesis("singular Lyapunov operator".into()))?;
    let mut x = DMatrix::from_iterator(n, n, sol.iter().copied());
    // symmetrize against roundoff
    x = 0.5 * (&x + x.transpose());
    Ok(x)
}

/// Solve the continuous Riccati equation `AᵀP + PA − P B Bᵀ P + Q = 0`
/// (unit input weight) by Newton iteration from a stabilizing gain `k0`.
pub fn solve_care(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    k0: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if b.nrows() != n || q.nrows() != n || k0.ncols() != n {
        return Err(Error::Dimension("Riccati solve has inconsistent shapes".into()));
    }
    let mut k = k0.clone();
    if spectral_abscissa(&(a - b * &k)) >= 0.0 {
        return Err(Error::GainSynthesis(
            "initial gain does not stabilize the plant".into(),
        ));
    }
    let mut x_prev: Option<DMatrix<f64>> = None;
    for _ in 0..60 {
        let a_cl = a - b * &k;
        let q_eff = q + k.transpose() * &k;
        let x = solve_lyapunov(&a_cl, &q_eff)?;
        let k_next = b.transpose() * &x;
        let step = (&k_next - &k).norm();
        k = k_next;
        if let Some(prev) = &x_prev {
            if (prev - &x).norm() <= 1e-12 * x.norm().max(1.0) && step <= 1e-10 {
                return Ok(x);
            }
        }
        x_prev = Some(x);
    }
    let x = x_prev.expect("at least one iteration ran");
    let residual =
        (a.transpose() * &x + &x * a - &x * b * b.transpose() * &x + q).norm() / q.norm().max(1.0);
    if residual > 1e-8 {
        return Err(Error::GainSynthesis(format!(
            "Riccati iteration did not converge (relative residual {residual:.3e})"
        )));
    }
    Ok(x)
}

/// Hover linearization `(A, B)` of the gravity-compensated quadrotor.
pub fn hover_linearization(params: &QuadrotorParams) -> (DMatrix<f64>, DMatrix<f64>) {
    let g = params.gravity;
    let mut a = DMatrix::zeros(12, 12);
    for i in 0..3 {
        a[(i, 3 + i)] = 1.0; // position <- velocity
        a[(6 + i, 9 + i)] = 1.0; // attitude <- body rates
    }
    a[(3, 7)] = g; // vx <- pitch
    a[(4, 6)] = -g; // vy <- roll
    let mut b = DMatrix::zeros(12, 4);
    b[(5, 0)] = 1.0 / params.mass;
    b[(9, 1)] = 1.0 / params.inertia[0];
    b[(10, 2)] = 1.0 / params.inertia[1];
    b[(11, 3)] = 1.0 / params.inertia[2];
    (a, b)
}

struct Chain {
    /// indices of the chain states inside the 12-vector
    indices: Vec<usize>,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    q: DMatrix<f64>,
    k0: DMatrix<f64>,
}

fn lateral_chain(
    indices: [usize; 4],
    gravity_sign: f64,
    gravity: f64,
    inertia: f64,
    q: [f64; 4],
) -> Chain {
    let g = gravity_sign * gravity;
    #[rustfmt::skip]
    let a = DMatrix::from_row_slice(4, 4, &[
        0.0, 1.0, 0.0, 0.0,
        0.0, 0.0, g, 0.0,
        0.0, 0.0, 0.0, 1.0,
        0.0, 0.0, 0.0, 0.0,
    ]);
    let beta = 1.0 / inertia;
    let b = DMatrix::from_column_slice(4, 1, &[0.0, 0.0, 0.0, beta]);
    // pole placement at −1 of the g-scaled chain; stabilizing seed only
    let k0 = DMatrix::from_row_slice(
        1,
        4,
        &[
            1.0 / (g * beta),
            4.0 / (g * beta),
            6.0 / beta,
            4.0 / beta,
        ],
    );
    Chain {
        indices: indices.to_vec(),
        a,
        b,
        q: DMatrix::from_diagonal(&DVector::from_row_slice(&q)),
        k0,
    }
}

fn double_integrator_chain(indices: [usize; 2], scale: f64, q: [f64; 2]) -> Chain {
    let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
    let beta = 1.0 / scale;
    let b = DMatrix::from_column_slice(2, 1, &[0.0, beta]);
    let k0 = DMatrix::from_row_slice(1, 2, &[1.0 / beta, 2.0 / beta]);
    Chain {
        indices: indices.to_vec(),
        a,
        b,
        q: DMatrix::from_diagonal(&DVector::from_row_slice(&q)),
        k0,
    }
}

/// State weights of the hover gain synthesis. Position weights set the loop
/// stiffness; attitude and rate weights bound the inner-loop bandwidth so the
/// fixed-step integrator stays well inside its stability region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HoverGainWeights {
    pub lateral: [f64; 4],
    pub vertical: [f64; 2],
    pub yaw: [f64; 2],
}

impl Default for HoverGainWeights {
    fn default() -> Self {
        Self {
            lateral: [400.0, 90.0, 30.0, 0.02],
            vertical: [400.0, 90.0],
            yaw: [16.0, 4.0],
        }
    }
}

/// Consensus gain for the quadrotor from per-chain Riccati solutions,
/// scaled by the grounded-Laplacian margin `max(1, 1.2 / (2 λ_min))`.
pub fn hover_consensus_gain(
    params: &QuadrotorParams,
    grounded: &GroundedLaplacian,
    weights: &HoverGainWeights,
) -> Result<DMatrix<f64>> {
    params.validate()?;
    // state layout: x-chain drives pitch, y-chain drives roll
    let chains = [
        lateral_chain(
            [0, 3, 7, 10],
            1.0,
            params.gravity,
            params.inertia[1],
            weights.lateral,
        ),
        lateral_chain(
            [1, 4, 6, 9],
            -1.0,
            params.gravity,
            params.inertia[0],
            weights.lateral,
        ),
        double_integrator_chain([2, 5], params.mass, weights.vertical),
        double_integrator_chain([8, 11], params.inertia[2], weights.yaw),
    ];

    let mut p = DMatrix::zeros(12, 12);
    for chain in &chains {
        let x = solve_care(&chain.a, &chain.b, &chain.q, &chain.k0)?;
        for (r, &ri) in chain.indices.iter().enumerate() {
            for (c, &ci) in chain.indices.iter().enumerate() {
                p[(ri, ci)] = x[(r, c)];
            }
        }
    }

    let min_eig = grounded.min_eigenvalue()?;
    let margin = (1.2 / (2.0 * min_eig)).max(1.0);
    Ok(p * margin)
}
