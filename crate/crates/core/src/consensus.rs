//! Consensus errors, the follower/leader control laws, their stacked ensemble
//! forms, and the Lyapunov value monitored along closed-loop trajectories.
//!
//! The per-agent consensus error is `e_i = Σ_{j in N_i} (x_i − x_j)` over the
//! communication graph, with the leader participating as an ordinary
//! neighbor. Stacked over followers it can be written with the grounded
//! Laplacian as `e = (L ⊗ I_n) x − b ⊗ x_L`, where `b` marks followers
//! adjacent to the leader; both routes are exposed and must agree.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::formation::FormationSpec;
use crate::linalg;
use crate::plant::ControlAffineModel;
use crate::topology::{GroundedLaplacian, LeaderFollowerGraph};

/// Symmetric positive definite gain used by the control laws.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusGain {
    matrix: DMatrix<f64>,
}

impl ConsensusGain {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if !linalg::is_positive_definite_default(&matrix)? {
            return Err(Error::NotPositiveDefinite(
                "consensus gain must be symmetric positive definite".into(),
            ));
        }
        Ok(Self { matrix })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            matrix: DMatrix::identity(n, n),
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Consensus error of agent `i` given the states of every agent,
/// indexed by graph vertex.
pub fn consensus_error(
    i: usize,
    states: &[DVector<f64>],
    graph: &LeaderFollowerGraph,
) -> Result<DVector<f64>> {
    if states.len() != graph.vertex_count() {
        return Err(Error::Dimension(format!(
            "got {} states for {} vertices",
            states.len(),
            graph.vertex_count()
        )));
    }
    let n = states[i].len();
    let mut e = DVector::zeros(n);
    for &j in graph.neighbors(i) {
        if states[j].len() != n {
            return Err(Error::Dimension(format!(
                "state {j} has length {}, expected {n}",
                states[j].len()
            )));
        }
        e += &states[i] - &states[j];
    }
    Ok(e)
}

/// Follower law `u_i = −g(x_i)ᵀ P (e_i + d_i)`.
pub fn follower_control(
    e_i: &DVector<f64>,
    d_i: &DVector<f64>,
    x_i: &DVector<f64>,
    model: &ControlAffineModel,
    gain: &ConsensusGain,
) -> Result<DVector<f64>> {
    if e_i.len() != gain.dim() || d_i.len() != gain.dim() {
        return Err(Error::Dimension(format!(
            "error/offset length {} does not match gain dimension {}",
            e_i.len(),
            gain.dim()
        )));
    }
    let g = model.control_matrix(x_i)?;
    Ok(-(g.transpose() * gain.matrix() * (e_i + d_i)))
}

/// Leader law: the follower consensus term plus the independent tracking
/// input, summed componentwise.
pub fn leader_control(
    e_l: &DVector<f64>,
    d_l: &DVector<f64>,
    x_l: &DVector<f64>,
    model: &ControlAffineModel,
    gain: &ConsensusGain,
    u_track: &DVector<f64>,
) -> Result<DVector<f64>> {
    if u_track.len() != model.input_dim() {
        return Err(Error::Dimension(format!(
            "tracking input has length {}, plant expects {}",
            u_track.len(),
            model.input_dim()
        )));
    }
    Ok(follower_control(e_l, d_l, x_l, model, gain)? + u_track)
}

/// Stacked follower quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleState {
    /// stacked follower states, length N·n
    pub x: DVector<f64>,
    /// stacked consensus errors, length N·n
    pub e: DVector<f64>,
    /// stacked aggregate offsets, length N·n
    pub d: DVector<f64>,
    pub follower_count: usize,
    pub state_dim: usize,
}

impl EnsembleState {
    /// Gather the follower stacks from per-agent states.
    pub fn gather(
        graph: &LeaderFollowerGraph,
        spec: &FormationSpec,
        states: &[DVector<f64>],
    ) -> Result<Self> {
        let order = graph.follower_order();
        let n = states[graph.leader()].len();
        let count = order.len();
        let mut x = DVector::zeros(count * n);
        let mut e = DVector::zeros(count * n);
        let mut d = DVector::zeros(count * n);
        for (block, &i) in order.iter().enumerate() {
            x.rows_mut(block * n, n).copy_from(&states[i]);
            e.rows_mut(block * n, n)
                .copy_from(&consensus_error(i, states, graph)?);
            d.rows_mut(block * n, n)
                .copy_from(&spec.aggregate_offset(i, graph.neighbors(i))?);
        }
        Ok(Self {
            x,
            e,
            d,
            follower_count: count,
            state_dim: n,
        })
    }
}

/// Block-diagonal stacked control matrix `G(x)` of shape `Nn x Nm`.
pub fn block_diag_control(
    model: &ControlAffineModel,
    x_stack: &DVector<f64>,
    follower_count: usize,
) -> Result<DMatrix<f64>> {
    let n = model.state_dim();
    let m = model.input_dim();
    if x_stack.len() != follower_count * n {
        return Err(Error::Dimension(format!(
            "stacked state length {} does not match {follower_count} agents of dimension {n}",
            x_stack.len()
        )));
    }
    let mut g = DMatrix::zeros(follower_count * n, follower_count * m);
    for i in 0..follower_count {
        let xi = DVector::from(x_stack.rows(i * n, n));
        let gi = model.control_matrix(&xi)?;
        g.view_mut((i * n, i * m), (n, m)).copy_from(&gi);
    }
    Ok(g)
}

/// Stacked control `u = −G(x)ᵀ (I_N ⊗ P)(e + d)`, assembled with the block
/// operators rather than per-agent loops.
pub fn ensemble_control(
    ens: &EnsembleState,
    model: &ControlAffineModel,
    gain: &ConsensusGain,
) -> Result<DVector<f64>> {
    let g = block_diag_control(model, &ens.x, ens.follower_count)?;
    let p_big = linalg::kron(
        &DMatrix::identity(ens.follower_count, ens.follower_count),
        gain.matrix(),
    );
    Ok(-(g.transpose() * p_big * (&ens.e + &ens.d)))
}

/// Stacked consensus error via the grounded Laplacian route:
/// `e = (L ⊗ I_n) x − b ⊗ x_L`.
pub fn ensemble_consensus_error(
    gl: &GroundedLaplacian,
    leader_adjacency: &DVector<f64>,
    x_stack: &DVector<f64>,
    leader_state: &DVector<f64>,
) -> Result<DVector<f64>> {
    let n = leader_state.len();
    let count = gl.follower_count();
    if x_stack.len() != count * n || leader_adjacency.len() != count {
        return Err(Error::Dimension(
            "stacked state or leader adjacency size mismatch".into(),
        ));
    }
    let l_big = linalg::kron(&gl.matrix, &DMatrix::identity(n, n));
    let mut e = l_big * x_stack;
    for i in 0..count {
        if leader_adjacency[i] != 0.0 {
            let mut block = e.rows_mut(i * n, n);
            block -= leader_state * leader_adjacency[i];
        }
    }
    Ok(e)
}

/// Time derivative of the stacked consensus error given the stacked follower
/// state rates and the leader's state rate.
pub fn ensemble_error_rate(
    gl: &GroundedLaplacian,
    leader_adjacency: &DVector<f64>,
    xdot_stack: &DVector<f64>,
    leader_rate: &DVector<f64>,
) -> Result<DVector<f64>> {
    ensemble_consensus_error(gl, leader_adjacency, xdot_stack, leader_rate)
}

/// Lyapunov value `V = ½ (e + d)ᵀ (M ⊗ P)(e + d)`.
pub fn lyapunov_value(
    e: &DVector<f64>,
    d: &DVector<f64>,
    m: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> Result<f64> {
    let z = e + d;
    let weight = linalg::kron(m, p);
    if weight.nrows() != z.len() {
        return Err(Error::Dimension(format!(
            "weight is {}x{} but the stacked error has length {}",
            weight.nrows(),
            weight.ncols(),
            z.len()
        )));
    }
    Ok(lyapunov_quadratic(&z, &weight))
}

/// Quadratic-form evaluation against a precomputed `M ⊗ P`.
pub fn lyapunov_quadratic(z: &DVector<f64>, weight: &DMatrix<f64>) -> f64 {
    0.5 * (z.transpose() * weight * z)[(0, 0)]
}

/// Formation error `d − e`.
pub fn formation_error(e: &DVector<f64>, d: &DVector<f64>) -> DVector<f64> {
    d - e
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar_line_states() -> (LeaderFollowerGraph, Vec<DVector<f64>>) {
        let graph = LeaderFollowerGraph::line(4).unwrap();
        let states = vec![
            nalgebra::dvector![0.0],
            nalgebra::dvector![1.0],
            nalgebra::dvector![2.0],
            nalgebra::dvector![3.0],
        ];
        (graph, states)
    }

    #[test]
    fn consensus_error_zero_at_agreement() {
        let graph = LeaderFollowerGraph::line(3).unwrap();
        let states = vec![nalgebra::dvector![2.0, -1.0]; 3];
        for i in 0..3 {
            assert_eq!(
                consensus_error(i, &states, &graph).unwrap(),
                DVector::zeros(2)
            );
        }
    }

    #[test]
    fn consensus_error_scalar_line() {
        let (graph, states) = scalar_line_states();
        assert_eq!(consensus_error(1, &states, &graph).unwrap()[0], 0.0);
        assert_eq!(consensus_error(3, &states, &graph).unwrap()[0], 1.0);
    }

    #[test]
    fn consensus_error_at_goals_is_minus_aggregate_offset() {
        let graph = LeaderFollowerGraph::line(4).unwrap();
        let spec = FormationSpec::triangular(1.0, 0.8, 0.8, 3).unwrap();
        let states: Vec<DVector<f64>> = spec.goals().to_vec();
        for i in 0..4 {
            let e = consensus_error(i, &states, &graph).unwrap();
            let d = spec.aggregate_offset(i, graph.neighbors(i)).unwrap();
            assert!((e + d).norm() <= 1e-12);
        }
    }

    #[test]
    fn follower_control_fixed_point_and_linearity() {
        let model = plant::single_integrator(2).unwrap();
        let gain = ConsensusGain::identity(2);
        let x = nalgebra::dvector![0.3, -0.7];
        let zero = DVector::zeros(2);
        let u = follower_control(&zero, &zero, &x, &model, &gain).unwrap();
        assert_eq!(u, DVector::zeros(2));

        // with g = I and P = I the law is the negated error
        let e = nalgebra::dvector![0.5, -1.0];
        let u = follower_control(&e, &zero, &x, &model, &gain).unwrap();
        assert_eq!(u, -e.clone());

        // doubling P doubles the input
        let gain2 = ConsensusGain::new(DMatrix::identity(2, 2) * 2.0).unwrap();
        let u2 = follower_control(&e, &zero, &x, &model, &gain2).unwrap();
        assert_eq!(u2, -(e * 2.0));
    }

    #[test]
    fn leader_control_reduces_to_tracking_or_follower() {
        let model = plant::single_integrator(2).unwrap();
        let gain = ConsensusGain::identity(2);
        let x = DVector::zeros(2);
        let zero = DVector::zeros(2);
        let u_track = nalgebra::dvector![0.1, 0.2];
        let u = leader_control(&zero, &zero, &x, &model, &gain, &u_track).unwrap();
        assert_eq!(u, u_track);

        let e = nalgebra::dvector![1.0, 0.0];
        let with_track = leader_control(&e, &zero, &x, &model, &gain, &DVector::zeros(2)).unwrap();
        let as_follower = follower_control(&e, &zero, &x, &model, &gain).unwrap();
        assert_eq!(with_track, as_follower);
    }

    #[test]
    fn ensemble_control_matches_stacked_follower_law() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let graph = LeaderFollowerGraph::line(4).unwrap();
        let model = plant::single_integrator(3).unwrap();
        let spec = FormationSpec::triangular(1.0, 0.8, 0.8, 3).unwrap();
        let gain = ConsensusGain::identity(3);
        for _ in 0..100 {
            let states: Vec<DVector<f64>> = (0..4)
                .map(|_| DVector::from_fn(3, |_, _| rng.gen_range(-2.0..2.0)))
                .collect();
            let ens = EnsembleState::gather(&graph, &spec, &states).unwrap();
            let stacked = ensemble_control(&ens, &model, &gain).unwrap();
            for (block, &i) in graph.follower_order().iter().enumerate() {
                let e_i = consensus_error(i, &states, &graph).unwrap();
                let d_i = spec.aggregate_offset(i, graph.neighbors(i)).unwrap();
                let u_i = follower_control(&e_i, &d_i, &states[i], &model, &gain).unwrap();
                let diff = (DVector::from(stacked.rows(block * 3, 3)) - u_i).norm();
                assert!(diff <= 1e-12, "block {block} differs by {diff}");
            }
        }
    }

    #[test]
    fn ensemble_error_routes_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let graph = LeaderFollowerGraph::line(4).unwrap();
        let spec = FormationSpec::triangular(1.0, 0.8, 0.8, 3).unwrap();
        let gl = graph.grounded_laplacian().unwrap();
        let b = graph.leader_adjacency_vector();
        for _ in 0..50 {
            let states: Vec<DVector<f64>> = (0..4)
                .map(|_| DVector::from_fn(3, |_, _| rng.gen_range(-2.0..2.0)))
                .collect();
            let ens = EnsembleState::gather(&graph, &spec, &states).unwrap();
            let via_laplacian =
                ensemble_consensus_error(&gl, &b, &ens.x, &states[graph.leader()]).unwrap();
            assert!((via_laplacian - &ens.e).norm() <= 1e-12);
        }
    }

    #[test]
    fn ensemble_error_rate_cases() {
        let graph = LeaderFollowerGraph::line(2).unwrap();
        let gl = graph.grounded_laplacian().unwrap();
        let b = graph.leader_adjacency_vector();
        // stationary agents
        let zero = DVector::zeros(3);
        let rate = ensemble_error_rate(&gl, &b, &DVector::zeros(3), &zero).unwrap();
        assert_eq!(rate, DVector::zeros(3));
        // single follower moving at w with a fixed leader: edot = w
        let w = nalgebra::dvector![0.5, -0.25, 1.0];
        let rate = ensemble_error_rate(&gl, &b, &w, &zero).unwrap();
        assert_eq!(rate, w);
    }

    #[test]
    fn lyapunov_value_cases() {
        let m = DMatrix::identity(2, 2);
        let p = DMatrix::identity(3, 3);
        let d = DVector::zeros(6);
        let e = DVector::zeros(6);
        assert_eq!(lyapunov_value(&e, &d, &m, &p).unwrap(), 0.0);

        let mut unit = DVector::zeros(6);
        unit[2] = 1.0;
        assert_relative_eq!(
            lyapunov_value(&unit, &d, &m, &p).unwrap(),
            0.5,
            epsilon = 1e-14
        );
    }

    #[test]
    fn lyapunov_positive_off_origin() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let graph = LeaderFollowerGraph::line(4).unwrap();
        let gl = graph.grounded_laplacian().unwrap();
        let m = gl.inverse_m().unwrap();
        let p = DMatrix::identity(2, 2);
        for _ in 0..50 {
            let e = DVector::from_fn(6, |_, _| rng.gen_range(-1.0..1.0));
            let d = DVector::from_fn(6, |_, _| rng.gen_range(-1.0..1.0));
            let v = lyapunov_value(&e, &d, &m, &p).unwrap();
            if (&e + &d).norm() > 1e-9 {
                assert!(v > 0.0);
            }
        }
    }

    #[test]
    fn formation_error_cases() {
        let d = nalgebra::dvector![1.0, 2.0];
        assert_eq!(formation_error(&d.clone(), &d), DVector::zeros(2));
        assert_eq!(formation_error(&DVector::zeros(2), &d), d);
        // at the goal states e = −d, so the reported quantity is 2d
        assert_eq!(formation_error(&(-d.clone()), &d), d * 2.0);
    }
}
