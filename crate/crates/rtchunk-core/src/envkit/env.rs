use crate::flowpolicy::Observation;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Arena constants. Positions live in the box [-1, 1]^2; one tick is one
/// controller step. Values here are recorded defaults, not claims.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    /// Integration step per tick.
    pub dt: f64,
    /// Velocity damping factor applied each tick.
    pub damping: f64,
    pub agent_start: [f64; 2],
    pub start_jitter: [f64; 2],
    /// Target sweeps a horizontal sinusoid with a small vertical bob.
    pub target_center_y: f64,
    pub target_amp_x: f64,
    pub target_amp_y: f64,
    pub target_omega: f64,
    /// Hazard orbits the corridor between start and target.
    pub hazard_center_y: f64,
    pub hazard_amp_x: f64,
    pub hazard_amp_y: f64,
    pub hazard_omega: f64,
    pub goal_radius: f64,
    pub hazard_radius: f64,
    pub max_ticks: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            dt: 0.1,
            damping: 0.15,
            agent_start: [0.0, -0.75],
            start_jitter: [0.10, 0.05],
            target_center_y: 0.55,
            target_amp_x: 0.55,
            target_amp_y: 0.10,
            target_omega: std::f64::consts::TAU / 80.0,
            hazard_center_y: -0.05,
            hazard_amp_x: 0.50,
            hazard_amp_y: 0.08,
            hazard_omega: std::f64::consts::TAU / 55.0,
            goal_radius: 0.075,
            hazard_radius: 0.15,
            max_ticks: 120,
        }
    }
}

/// Full simulator state. Dynamics are deterministic given state and action.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub agent_pos: [f64; 2],
    pub agent_vel: [f64; 2],
    pub target_phase: f64,
    pub hazard_phase: f64,
    pub tick: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Running,
    Success,
    Failure,
}

/// Number of observation features produced by [`Env::observe`].
pub const OBS_DIM: usize = 12;

/// Observation scaling for agent velocity features.
pub const AGENT_VEL_SCALE: f64 = 2.0;

/// Observation scaling for target/hazard per-tick velocity features.
pub const SCENE_VEL_SCALE: f64 = 20.0;

/// Environment action dimension (2D acceleration).
pub const ACTION_DIM: usize = 2;

#[derive(Debug, Clone)]
pub struct Env {
    pub cfg: EnvConfig,
}

impl Env {
    pub fn new(cfg: EnvConfig) -> Self {
        Env { cfg }
    }

    /// Phase-parameterized paths: `(amp_x sin p, center_y + amp_y cos 2p)`.
    /// Advancing the phase by pi mirrors the path across the y axis, which
    /// keeps the whole system reflection-equivariant.
    pub fn target_position(&self, phase: f64) -> [f64; 2] {
        [
            self.cfg.target_amp_x * phase.sin(),
            self.cfg.target_center_y + self.cfg.target_amp_y * (2.0 * phase).cos(),
        ]
    }

    pub fn hazard_position(&self, phase: f64) -> [f64; 2] {
        [
            self.cfg.hazard_amp_x * phase.sin(),
            self.cfg.hazard_center_y + self.cfg.hazard_amp_y * (2.0 * phase).cos(),
        ]
    }

    /// Displacement per tick of the target at the given phase.
    pub fn target_velocity(&self, phase: f64) -> [f64; 2] {
        let w = self.cfg.target_omega;
        [
            self.cfg.target_amp_x * phase.cos() * w,
            -2.0 * self.cfg.target_amp_y * (2.0 * phase).sin() * w,
        ]
    }

    pub fn hazard_velocity(&self, phase: f64) -> [f64; 2] {
        let w = self.cfg.hazard_omega;
        [
            self.cfg.hazard_amp_x * phase.cos() * w,
            -2.0 * self.cfg.hazard_amp_y * (2.0 * phase).sin() * w,
        ]
    }

    pub fn init_state<R: Rng>(&self, rng: &mut R) -> EnvState {
        let jx = rng.gen_range(-self.cfg.start_jitter[0]..=self.cfg.start_jitter[0]);
        let jy = rng.gen_range(-self.cfg.start_jitter[1]..=self.cfg.start_jitter[1]);
        let agent_pos = [self.cfg.agent_start[0] + jx, self.cfg.agent_start[1] + jy];
        let target_phase = rng.gen_range(0.0..std::f64::consts::TAU);
        // Fair starts: never spawn the hazard already on top of the agent.
        let hazard_phase = loop {
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            if dist(agent_pos, self.hazard_position(phase)) > self.cfg.hazard_radius + 0.2 {
                break phase;
            }
        };
        EnvState {
            agent_pos,
            agent_vel: [0.0, 0.0],
            target_phase,
            hazard_phase,
            tick: 0,
        }
    }

    /// Damped double-integrator update; the action is clipped to [-1, 1]^2
    /// and the agent stays inside the arena box.
    pub fn step(&self, state: &EnvState, action: [f64; 2]) -> EnvState {
        let ax = action[0].clamp(-1.0, 1.0);
        let ay = action[1].clamp(-1.0, 1.0);
        let keep = 1.0 - self.cfg.damping;
        let vel = [
            (state.agent_vel[0] + ax * self.cfg.dt) * keep,
            (state.agent_vel[1] + ay * self.cfg.dt) * keep,
        ];
        let pos = [
            (state.agent_pos[0] + vel[0] * self.cfg.dt).clamp(-1.0, 1.0),
            (state.agent_pos[1] + vel[1] * self.cfg.dt).clamp(-1.0, 1.0),
        ];
        EnvState {
            agent_pos: pos,
            agent_vel: vel,
            target_phase: state.target_phase + self.cfg.target_omega,
            hazard_phase: state.hazard_phase + self.cfg.hazard_omega,
            tick: state.tick + 1,
        }
    }

    pub fn status(&self, state: &EnvState) -> Status {
        let hazard = self.hazard_position(state.hazard_phase);
        if dist(state.agent_pos, hazard) <= self.cfg.hazard_radius {
            return Status::Failure;
        }
        let target = self.target_position(state.target_phase);
        if dist(state.agent_pos, target) <= self.cfg.goal_radius {
            return Status::Success;
        }
        if state.tick >= self.cfg.max_ticks {
            return Status::Failure;
        }
        Status::Running
    }

    /// Twelve features: agent position and velocity, target position and
    /// per-tick velocity, hazard position and per-tick velocity. Positions
    /// and phase velocities make the future of the scene fully predictable
    /// from a single observation. Velocities are scaled to O(1) so no
    /// feature starts out under-weighted.
    pub fn observe(&self, state: &EnvState) -> Observation {
        let tp = self.target_position(state.target_phase);
        let tv = self.target_velocity(state.target_phase);
        let hp = self.hazard_position(state.hazard_phase);
        let hv = self.hazard_velocity(state.hazard_phase);
        Observation::new(vec![
            state.agent_pos[0],
            state.agent_pos[1],
            state.agent_vel[0] * AGENT_VEL_SCALE,
            state.agent_vel[1] * AGENT_VEL_SCALE,
            tp[0],
            tp[1],
            tv[0] * SCENE_VEL_SCALE,
            tv[1] * SCENE_VEL_SCALE,
            hp[0],
            hp[1],
            hv[0] * SCENE_VEL_SCALE,
            hv[1] * SCENE_VEL_SCALE,
        ])
    }

    /// Reflection across the y axis: negate x components and shift phases
    /// by pi. `step` and `status` commute with this map.
    pub fn mirror_state(&self, state: &EnvState) -> EnvState {
        EnvState {
            agent_pos: [-state.agent_pos[0], state.agent_pos[1]],
            agent_vel: [-state.agent_vel[0], state.agent_vel[1]],
            target_phase: state.target_phase + std::f64::consts::PI,
            hazard_phase: state.hazard_phase + std::f64::consts::PI,
            tick: state.tick,
        }
    }
}

pub(crate) fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_action_from_rest_keeps_agent_still_while_scene_advances() {
        let env = Env::new(EnvConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s0 = env.init_state(&mut rng);
        let s1 = env.step(&s0, [0.0, 0.0]);
        assert_eq!(s1.agent_pos, s0.agent_pos);
        assert_eq!(s1.agent_vel, [0.0, 0.0]);
        assert_eq!(s1.target_phase, s0.target_phase + env.cfg.target_omega);
        assert_eq!(s1.hazard_phase, s0.hazard_phase + env.cfg.hazard_omega);
        assert_eq!(s1.tick, s0.tick + 1);
    }

    #[test]
    fn constant_acceleration_matches_closed_form_recurrence() {
        let env = Env::new(EnvConfig::default());
        let mut state = EnvState {
            agent_pos: [-0.9, -0.9],
            agent_vel: [0.0, 0.0],
            target_phase: 0.0,
            hazard_phase: 0.0,
            tick: 0,
        };
        let k = 12;
        for _ in 0..k {
            state = env.step(&state, [1.0, 0.0]);
        }
        // Independent evaluation: vel_j = dt * sum_{i=1..j} keep^i,
        // pos_k = start + dt * sum_j vel_j.
        let keep = 1.0 - env.cfg.damping;
        let dt = env.cfg.dt;
        let mut vel = 0.0;
        let mut pos = -0.9;
        for _ in 0..k {
            vel = (vel + dt) * keep;
            pos += vel * dt;
        }
        // Same recurrence written independently as a geometric sum.
        let mut vel_closed = 0.0;
        for i in 1..=k {
            vel_closed += dt * keep.powi(i as i32);
        }
        assert!((vel - vel_closed).abs() < 1e-12);
        assert!((state.agent_vel[0] - vel_closed).abs() < 1e-12);
        assert!((state.agent_pos[0] - pos).abs() < 1e-12);
        assert_eq!(state.agent_vel[1], 0.0);
    }

    #[test]
    fn dynamics_commute_with_mirroring() {
        let env = Env::new(EnvConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let state = EnvState {
                agent_pos: [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
                agent_vel: [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)],
                target_phase: rng.gen_range(0.0..std::f64::consts::TAU),
                hazard_phase: rng.gen_range(0.0..std::f64::consts::TAU),
                tick: 3,
            };
            let action = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let stepped_then_mirrored = env.mirror_state(&env.step(&state, action));
            let mirrored_then_stepped =
                env.step(&env.mirror_state(&state), [-action[0], action[1]]);
            for i in 0..2 {
                assert!(
                    (stepped_then_mirrored.agent_pos[i] - mirrored_then_stepped.agent_pos[i])
                        .abs()
                        < 1e-9
                );
            }
            // Positions of scene objects agree as well.
            let a = env.target_position(stepped_then_mirrored.target_phase);
            let b = env.target_position(mirrored_then_stepped.target_phase);
            assert!((a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn success_predicate_is_mirror_symmetric() {
        let env = Env::new(EnvConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            let target = env.target_position(phase);
            // Place the agent near or on the target.
            let state = EnvState {
                agent_pos: [
                    target[0] + rng.gen_range(-0.2..0.2),
                    target[1] + rng.gen_range(-0.2..0.2),
                ],
                agent_vel: [0.0, 0.0],
                target_phase: phase,
                hazard_phase: rng.gen_range(0.0..std::f64::consts::TAU),
                tick: 5,
            };
            let mirrored = env.mirror_state(&state);
            assert_eq!(env.status(&state), env.status(&mirrored));
        }
    }
}
