//! Time-stepped formation-maintenance simulation.
//!
//! Every run is bit-deterministic given its scenario: initial states come
//! from a seeded generator, the step loop is sequential, and all per-agent
//! evaluations happen in a fixed order. Before stepping, the scenario's gain
//! must pass the pairwise certificate unless the caller explicitly overrides
//! the refusal.

use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::certificate;
use crate::consensus::{self, ConsensusGain};
use crate::error::{Error, Result};
use crate::formation::FormationSpec;
use crate::linalg;
use crate::plant::{
    self, quad, ControlAffineModel, QuadrotorParams, QuadrotorState, ThrustFrame,
};
use crate::topology::LeaderFollowerGraph;

/// Lissajous loop reference at a fixed altitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FigureEight {
    pub amplitude: f64,
    pub period: f64,
    pub altitude: f64,
}

impl FigureEight {
    pub fn position(&self, t: f64) -> Vector3<f64> {
        let w = 2.0 * std::f64::consts::PI / self.period;
        Vector3::new(
            self.amplitude * (w * t).sin(),
            0.5 * self.amplitude * (2.0 * w * t).sin(),
            self.altitude,
        )
    }

    pub fn velocity(&self, t: f64) -> Vector3<f64> {
        let w = 2.0 * std::f64::consts::PI / self.period;
        Vector3::new(
            self.amplitude * w * (w * t).cos(),
            self.amplitude * w * (2.0 * w * t).cos(),
            0.0,
        )
    }

    pub fn acceleration(&self, t: f64) -> Vector3<f64> {
        let w = 2.0 * std::f64::consts::PI / self.period;
        Vector3::new(
            -self.amplitude * w * w * (w * t).sin(),
            -2.0 * self.amplitude * w * w * (2.0 * w * t).sin(),
            0.0,
        )
    }
}

/// Reference trajectory assigned to the leader.
#[derive(Debug, Clone, PartialEq)]
pub enum LeaderReference {
    /// hold a fixed state
    Stationary(DVector<f64>),
    FigureEight(FigureEight),
}

/// Reference value, its time derivative, and the translational acceleration
/// used as a feedforward term.
#[derive(Debug, Clone, PartialEq)]
pub struct RefSample {
    pub state: DVector<f64>,
    pub rate: DVector<f64>,
    pub accel: Vector3<f64>,
}

impl LeaderReference {
    pub fn sample(&self, t: f64, n: usize) -> Result<RefSample> {
        match self {
            LeaderReference::Stationary(s) => {
                if s.len() != n {
                    return Err(Error::Dimension(format!(
                        "stationary reference has length {}, expected {n}",
                        s.len()
                    )));
                }
                Ok(RefSample {
                    state: s.clone(),
                    rate: DVector::zeros(n),
                    accel: Vector3::zeros(),
                })
            }
            LeaderReference::FigureEight(f8) => {
                if f8.period <= 0.0 {
                    return Err(Error::Config("figure-eight period must be positive".into()));
                }
                if n < 3 {
                    return Err(Error::Dimension(
                        "figure-eight reference needs at least 3 state components".into(),
                    ));
                }
                let pos = f8.position(t);
                let vel = f8.velocity(t);
                let mut state = DVector::zeros(n);
                let mut rate = DVector::zeros(n);
                for i in 0..3 {
                    state[i] = pos[i];
                    rate[i] = vel[i];
                }
                if n >= 6 {
                    let acc = f8.acceleration(t);
                    for i in 0..3 {
                        state[3 + i] = vel[i];
                        rate[3 + i] = acc[i];
                    }
                }
                Ok(RefSample {
                    state,
                    rate,
                    accel: f8.acceleration(t),
                })
            }
        }
    }
}

/// Gains of the cascaded position/attitude tracking law for the quadrotor
/// leader.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadTrackingGains {
    pub kp_pos: Vector3<f64>,
    pub kd_pos: Vector3<f64>,
    pub kp_att: Vector3<f64>,
    pub kd_att: Vector3<f64>,
    /// commanded roll/pitch clamp, rad
    pub max_tilt: f64,
    pub feedforward: bool,
}

impl Default for QuadTrackingGains {
    fn default() -> Self {
        Self {
            kp_pos: Vector3::new(6.0, 6.0, 6.0),
            kd_pos: Vector3::new(4.0, 4.0, 4.0),
            kp_att: Vector3::new(400.0, 400.0, 400.0),
            kd_att: Vector3::new(40.0, 40.0, 40.0),
            max_tilt: 0.9,
            feedforward: true,
        }
    }
}

/// Independent tracking law driving the leader toward its reference.
#[derive(Debug, Clone, PartialEq)]
pub enum TrackingLaw {
    /// `u = ref_rate + gain (ref − x)`; needs input_dim == state_dim
    IntegratorPd { gain: f64 },
    QuadrotorCascade(QuadTrackingGains),
}

/// Raw-thrust tracking input for the quadrotor: position PD with hover
/// feedforward resolves a desired thrust vector, whose direction sets the
/// commanded attitude for the inner attitude PD loop. Returns the input and
/// whether the tilt command hit its clamp.
pub fn quadrotor_tracking_raw(
    params: &QuadrotorParams,
    gains: &QuadTrackingGains,
    x: &DVector<f64>,
    reference: &RefSample,
) -> Result<(DVector<f64>, bool)> {
    let s = QuadrotorState::from_vector(x)?;
    let ref_pos = Vector3::new(reference.state[0], reference.state[1], reference.state[2]);
    let ref_vel = Vector3::new(reference.state[3], reference.state[4], reference.state[5]);
    let yaw_des = reference.state[quad::YAW];

    let e_p = ref_pos - s.position;
    let e_v = ref_vel - s.velocity;
    let mut a_cmd = gains.kp_pos.component_mul(&e_p) + gains.kd_pos.component_mul(&e_v);
    if gains.feedforward {
        a_cmd += reference.accel;
    }

    let mut force = params.mass * (a_cmd + Vector3::new(0.0, 0.0, params.gravity));
    if force.norm() < 1e-12 {
        force = Vector3::new(0.0, 0.0, params.hover_thrust());
    }
    let dir = force / force.norm();
    // rotate the desired direction into the commanded-yaw frame
    let (sy, cy) = yaw_des.sin_cos();
    let zx = cy * dir.x + sy * dir.y;
    let zy = -sy * dir.x + cy * dir.y;
    let mut roll_des = -zy.clamp(-1.0, 1.0).asin();
    let mut pitch_des = zx.atan2(dir.z);
    let mut saturated = false;
    if roll_des.abs() > gains.max_tilt {
        roll_des = roll_des.signum() * gains.max_tilt;
        saturated = true;
    }
    if pitch_des.abs() > gains.max_tilt {
        pitch_des = pitch_des.signum() * gains.max_tilt;
        saturated = true;
    }

    let thrust = force.dot(&plant::body_z_in_inertial(&s.attitude)).max(0.0);
    let att_err = Vector3::new(roll_des, pitch_des, yaw_des) - s.attitude;
    let ang_accel_cmd =
        gains.kp_att.component_mul(&att_err) - gains.kd_att.component_mul(&s.rates);
    let torque = params.inertia_matrix() * ang_accel_cmd;

    Ok((
        nalgebra::dvector![thrust, torque.x, torque.y, torque.z],
        saturated,
    ))
}

/// Which concrete plant a scenario simulates.
#[derive(Debug, Clone, PartialEq)]
pub enum PlantKind {
    SingleIntegrator { state_dim: usize },
    Quadrotor(QuadrotorParams),
    /// caller-supplied model; tracking must be [`TrackingLaw::IntegratorPd`]
    Custom,
}

impl PlantKind {
    /// Build the plant model simulated by [`run`]. The quadrotor uses
    /// gravity-compensated thrust coordinates, so its open-loop equilibrium
    /// sits at the origin and the tracking law's raw thrust is shifted by the
    /// hover force before entering the loop.
    pub fn build_model(&self) -> Result<ControlAffineModel> {
        match self {
            PlantKind::SingleIntegrator { state_dim } => plant::single_integrator(*state_dim),
            PlantKind::Quadrotor(p) => plant::quadrotor_model(p, ThrustFrame::GravityCompensated),
            PlantKind::Custom => Err(Error::Config(
                "custom plants must supply their model explicitly".into(),
            )),
        }
    }
}

/// Initial condition policy.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialStates {
    /// one state per agent, indexed by graph vertex
    Explicit(Vec<DVector<f64>>),
    /// leader starts on its reference; follower positions are drawn
    /// uniformly within `position_radius` of their goal positions, all other
    /// components zeroed
    RandomAroundGoals { position_radius: f64 },
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub graph: LeaderFollowerGraph,
    pub plant: PlantKind,
    pub model: ControlAffineModel,
    pub formation: FormationSpec,
    pub gain: ConsensusGain,
    pub reference: LeaderReference,
    pub tracking: TrackingLaw,
    pub init: InitialStates,
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    /// run even when the gain certificate fails
    pub allow_uncertified: bool,
}

impl Scenario {
    pub fn from_parts(
        graph: LeaderFollowerGraph,
        plant: PlantKind,
        formation: FormationSpec,
        gain: ConsensusGain,
        reference: LeaderReference,
        tracking: TrackingLaw,
        init: InitialStates,
        dt: f64,
        horizon: f64,
        seed: u64,
    ) -> Result<Self> {
        let model = plant.build_model()?;
        let scenario = Self {
            graph,
            plant,
            model,
            formation,
            gain,
            reference,
            tracking,
            init,
            dt,
            horizon,
            seed,
            allow_uncertified: false,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.model.state_dim();
        if self.formation.agent_count() != self.graph.vertex_count() {
            return Err(Error::Config(format!(
                "formation covers {} agents but the graph has {} vertices",
                self.formation.agent_count(),
                self.graph.vertex_count()
            )));
        }
        if self.formation.state_dim() != n {
            return Err(Error::Config(format!(
                "formation states have dimension {}, plant expects {n}",
                self.formation.state_dim()
            )));
        }
        if self.gain.dim() != n {
            return Err(Error::Config(format!(
                "gain has dimension {}, plant expects {n}",
                self.gain.dim()
            )));
        }
        for &(a, b) in self.formation.edges() {
            if !self.graph.has_edge(a, b) {
                return Err(Error::Config(format!(
                    "formation edge ({a}, {b}) is not a communication edge; \
                     aggregate offsets would be undefined"
                )));
            }
        }
        if matches!(self.tracking, TrackingLaw::IntegratorPd { .. })
            && self.model.input_dim() != n
        {
            return Err(Error::Config(
                "integrator tracking law needs input_dim == state_dim".into(),
            ));
        }
        self.step_count()?;
        Ok(())
    }

    pub fn step_count(&self) -> Result<usize> {
        if !(self.dt > 0.0) || !(self.horizon >= 0.0) {
            return Err(Error::Config(format!(
                "need dt > 0 and horizon >= 0, got dt = {}, horizon = {}",
                self.dt, self.horizon
            )));
        }
        let steps_f = self.horizon / self.dt;
        let steps = steps_f.round();
        if (steps_f - steps).abs() > 1e-6 * steps.max(1.0) {
            return Err(Error::Config(format!(
                "horizon {} is not an integer multiple of dt {}",
                self.horizon, self.dt
            )));
        }
        Ok(steps as usize)
    }

    /// Sampling box for the drift inequality: the componentwise envelope of
    /// the goal states and the initial-state box, inflated by 20% with a
    /// minimum half-width floor.
    pub fn drift_sampling_box(&self) -> Result<certificate::DomainBox> {
        let n = self.model.state_dim();
        let mut lower = DVector::from_element(n, f64::INFINITY);
        let mut upper = DVector::from_element(n, f64::NEG_INFINITY);
        let mut absorb = |v: &DVector<f64>| {
            for i in 0..n {
                lower[i] = lower[i].min(v[i]);
                upper[i] = upper[i].max(v[i]);
            }
        };
        for g in self.formation.goals() {
            absorb(g);
        }
        let ref0 = self.reference.sample(0.0, n)?;
        absorb(&ref0.state);
        if let LeaderReference::FigureEight(f8) = &self.reference {
            let mut extreme = ref0.state.clone();
            extreme[0] = f8.amplitude;
            extreme[1] = 0.5 * f8.amplitude;
            absorb(&extreme);
            extreme[0] = -f8.amplitude;
            extreme[1] = -0.5 * f8.amplitude;
            absorb(&extreme);
        }
        if let InitialStates::RandomAroundGoals { position_radius } = self.init {
            let k = self.formation.metric_dims();
            for g in self.formation.goals() {
                let mut lo = g.clone();
                let mut hi = g.clone();
                for i in 0..k {
                    lo[i] -= position_radius;
                    hi[i] += position_radius;
                }
                absorb(&lo);
                absorb(&hi);
            }
        }
        for i in 0..n {
            let mid = 0.5 * (lower[i] + upper[i]);
            let half = (0.6 * (upper[i] - lower[i])).max(0.5);
            lower[i] = mid - half;
            upper[i] = mid + half;
        }
        certificate::DomainBox::new(lower, upper)
    }

    fn initial_states(&self) -> Result<Vec<DVector<f64>>> {
        let n = self.model.state_dim();
        match &self.init {
            InitialStates::Explicit(states) => {
                if states.len() != self.graph.vertex_count() {
                    return Err(Error::Config(format!(
                        "got {} initial states for {} agents",
                        states.len(),
                        self.graph.vertex_count()
                    )));
                }
                if states.iter().any(|s| s.len() != n) {
                    return Err(Error::Config("initial state dimension mismatch".into()));
                }
                Ok(states.clone())
            }
            InitialStates::RandomAroundGoals { position_radius } => {
                if *position_radius < 0.0 {
                    return Err(Error::Config("position radius must be non-negative".into()));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                let k = self.formation.metric_dims();
                let mut states = Vec::with_capacity(self.graph.vertex_count());
                for v in 0..self.graph.vertex_count() {
                    if v == self.graph.leader() {
                        states.push(self.reference.sample(0.0, n)?.state);
                    } else {
                        let mut x = DVector::zeros(n);
                        let goal = self.formation.goal(v);
                        for i in 0..k {
                            let offset = if *position_radius > 0.0 {
                                rng.gen_range(-position_radius..*position_radius)
                            } else {
                                0.0
                            };
                            x[i] = goal[i] + offset;
                        }
                        states.push(x);
                    }
                }
                Ok(states)
            }
        }
    }
}

/// One recorded instant of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub step: usize,
    pub t: f64,
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    /// consensus error per agent (leader included)
    pub errors: Vec<DVector<f64>>,
    /// |e_i + d_i| per agent
    pub fixed_point_residuals: Vec<f64>,
    /// signed distance residual per formation edge
    pub edge_distance_residuals: Vec<f64>,
    pub lyapunov: f64,
    pub reference: DVector<f64>,
}

/// Full record of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub agent_count: usize,
    pub state_dim: usize,
    pub input_dim: usize,
    pub leader: usize,
    pub formation_edges: Vec<(usize, usize)>,
    /// index of the yaw component, when the plant has one
    pub yaw_index: Option<usize>,
    pub dt: f64,
    pub steps: Vec<TraceStep>,
    /// step whose update failed, when the run aborted
    pub aborted_at: Option<usize>,
    pub abort_reason: Option<String>,
    pub tilt_saturations: usize,
}

impl SimTrace {
    pub fn last(&self) -> Option<&TraceStep> {
        self.steps.last()
    }

    pub fn duration(&self) -> f64 {
        self.steps.last().map(|s| s.t).unwrap_or(0.0)
    }

    pub fn followers(&self) -> Vec<usize> {
        (0..self.agent_count).filter(|&v| v != self.leader).collect()
    }
}

fn tracking_input(
    scenario: &Scenario,
    x_leader: &DVector<f64>,
    reference: &RefSample,
) -> Result<(DVector<f64>, bool)> {
    match (&scenario.tracking, &scenario.plant) {
        (TrackingLaw::IntegratorPd { gain }, _) => {
            let u = &reference.rate + (&reference.state - x_leader) * *gain;
            Ok((u, false))
        }
        (TrackingLaw::QuadrotorCascade(gains), PlantKind::Quadrotor(params)) => {
            let (mut u, saturated) = quadrotor_tracking_raw(params, gains, x_leader, reference)?;
            // shift raw thrust into the plant's gravity-compensated input
            u[0] -= params.hover_thrust();
            Ok((u, saturated))
        }
        (TrackingLaw::QuadrotorCascade(_), _) => Err(Error::Config(
            "quadrotor tracking law requires a quadrotor plant".into(),
        )),
    }
}

/// Execute the formation-maintenance loop and record the full trace.
pub fn run(scenario: &Scenario) -> Result<SimTrace> {
    scenario.validate()?;
    let model = &scenario.model;
    let n = model.state_dim();
    let leader = scenario.graph.leader();

    let report = certificate::pairwise_check(scenario.gain.matrix(), &scenario.formation, model)?;
    if !report.pass && !scenario.allow_uncertified {
        return Err(Error::CertificateRefused(report.reasons.join("; ")));
    }

    let gl = scenario.graph.grounded_laplacian()?;
    let weight = linalg::kron(&gl.inverse_m()?, scenario.gain.matrix());
    let follower_order = gl.follower_order.clone();
    let steps = scenario.step_count()?;

    let mut states = scenario.initial_states()?;
    let mut trace = SimTrace {
        agent_count: scenario.graph.vertex_count(),
        state_dim: n,
        input_dim: model.input_dim(),
        leader,
        formation_edges: scenario.formation.edges().to_vec(),
        yaw_index: match scenario.plant {
            PlantKind::Quadrotor(_) => Some(quad::YAW),
            _ => None,
        },
        dt: scenario.dt,
        steps: Vec::with_capacity(steps + 1),
        aborted_at: None,
        abort_reason: None,
        tilt_saturations: 0,
    };

    let aggregate_offsets: Vec<DVector<f64>> = (0..scenario.graph.vertex_count())
        .map(|i| {
            scenario
                .formation
                .aggregate_offset(i, scenario.graph.neighbors(i))
        })
        .collect::<Result<_>>()?;

    for k in 0..=steps {
        let t = k as f64 * scenario.dt;
        let reference = scenario.reference.sample(t, n)?;

        let mut errors = Vec::with_capacity(states.len());
        for i in 0..states.len() {
            errors.push(consensus::consensus_error(i, &states, &scenario.graph)?);
        }

        let mut inputs = Vec::with_capacity(states.len());
        for i in 0..states.len() {
            let u = if i == leader {
                let (u_track, saturated) = tracking_input(scenario, &states[i], &reference)?;
                if saturated {
                    trace.tilt_saturations += 1;
                }
                consensus::leader_control(
                    &errors[i],
                    &aggregate_offsets[i],
                    &states[i],
                    model,
                    &scenario.gain,
                    &u_track,
                )?
            } else {
                consensus::follower_control(
                    &errors[i],
                    &aggregate_offsets[i],
                    &states[i],
                    model,
                    &scenario.gain,
                )?
            };
            inputs.push(u);
        }

        let mut z = DVector::zeros(follower_order.len() * n);
        for (block, &i) in follower_order.iter().enumerate() {
            z.rows_mut(block * n, n)
                .copy_from(&(&errors[i] + &aggregate_offsets[i]));
        }
        let lyapunov = consensus::lyapunov_quadratic(&z, &weight);

        let fixed_point_residuals: Vec<f64> = (0..states.len())
            .map(|i| (&errors[i] + &aggregate_offsets[i]).norm())
            .collect();
        let edge_distance_residuals: Vec<f64> = scenario
            .formation
            .edges()
            .iter()
            .map(|&(a, b)| {
                scenario
                    .formation
                    .distance_residual(a, b, &states[a], &states[b])
            })
            .collect();

        trace.steps.push(TraceStep {
            step: k,
            t,
            states: states.clone(),
            inputs: inputs.clone(),
            errors,
            fixed_point_residuals,
            edge_distance_residuals,
            lyapunov,
            reference: reference.state.clone(),
        });

        if k == steps {
            break;
        }

        let mut next = Vec::with_capacity(states.len());
        let mut failure: Option<String> = None;
        for i in 0..states.len() {
            match plant::step_rk4(model, &states[i], &inputs[i], scenario.dt) {
                Ok(x) if x.iter().all(|v| v.is_finite()) => next.push(x),
                Ok(_) => {
                    failure = Some(format!("agent {i} produced a non-finite state"));
                    break;
                }
                Err(e) => {
                    failure = Some(format!("agent {i}: {e}"));
                    break;
                }
            }
        }
        if let Some(reason) = failure {
            trace.aborted_at = Some(k);
            trace.abort_reason = Some(reason);
            break;
        }
        states = next;
    }

    Ok(trace)
}

/// Record of the displacement-consensus oracle run.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleRun {
    pub times: Vec<f64>,
    /// per recorded step, one state per agent
    pub states: Vec<Vec<DVector<f64>>>,
    pub goals: Vec<DVector<f64>>,
}

impl OracleRun {
    pub fn displacements(&self, step: usize) -> Vec<DVector<f64>> {
        self.states[step]
            .iter()
            .zip(self.goals.iter())
            .map(|(x, g)| x - g)
            .collect()
    }

    pub fn displacement_spread(&self, step: usize) -> f64 {
        let d = self.displacements(step);
        let mut spread = 0.0_f64;
        for i in 0..d.len() {
            for j in (i + 1)..d.len() {
                spread = spread.max((&d[i] - &d[j]).norm());
            }
        }
        spread
    }

    pub fn terminal_spread(&self) -> f64 {
        self.displacement_spread(self.states.len() - 1)
    }
}

/// Integrate the displacement formation law
/// `xdot_i = −Σ_{j in N_i} (x_i − x_j) − (goal_i − goal_j)` over the
/// formation graph as one coupled system.
pub fn run_integrator_oracle(
    spec: &FormationSpec,
    initial: &[DVector<f64>],
    horizon: f64,
    dt: f64,
) -> Result<OracleRun> {
    let count = spec.agent_count();
    let n = spec.state_dim();
    if initial.len() != count {
        return Err(Error::Config(format!(
            "got {} initial states for {count} agents",
            initial.len()
        )));
    }
    if initial.iter().any(|x| x.len() != n) {
        return Err(Error::Config("oracle initial state dimension mismatch".into()));
    }
    if !(dt > 0.0) || !(horizon >= 0.0) {
        return Err(Error::Config("oracle needs dt > 0 and horizon >= 0".into()));
    }

    let neighbors: Vec<Vec<usize>> = (0..count)
        .map(|i| {
            spec.edges()
                .iter()
                .filter_map(|&(a, b)| {
                    if a == i {
                        Some(b)
                    } else if b == i {
                        Some(a)
                    } else {
                        None
                    }
                })
                .collect()
        })
        .collect();

    let rhs = |stack: &DVector<f64>| -> DVector<f64> {
        let mut out = DVector::zeros(count * n);
        for i in 0..count {
            let xi = stack.rows(i * n, n);
            let mut acc = DVector::zeros(n);
            for &j in &neighbors[i] {
                let xj = stack.rows(j * n, n);
                acc -= xi - xj;
                acc += spec.goal(i) - spec.goal(j);
            }
            out.rows_mut(i * n, n).copy_from(&acc);
        }
        out
    };

    let steps = (horizon / dt).round() as usize;
    let mut stack = DVector::zeros(count * n);
    for (i, x) in initial.iter().enumerate() {
        stack.rows_mut(i * n, n).copy_from(x);
    }

    let mut out = OracleRun {
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        goals: spec.goals().to_vec(),
    };
    let record = |out: &mut OracleRun, k: usize, stack: &DVector<f64>| {
        out.times.push(k as f64 * dt);
        out.states
            .push((0..count).map(|i| DVector::from(stack.rows(i * n, n))).collect());
    };
    record(&mut out, 0, &stack);
    for k in 0..steps {
        let k1 = rhs(&stack);
        let k2 = rhs(&(&stack + &k1 * (dt / 2.0)));
        let k3 = rhs(&(&stack + &k2 * (dt / 2.0)));
        let k4 = rhs(&(&stack + &k3 * dt));
        stack += (k1 + 2.0 * k2 + 2.0 * k3 + k4) * (dt / 6.0);
        record(&mut out, k + 1, &stack);
    }
    Ok(out)
}
