use super::env::{dist, Env, EnvState};
use rand::Rng;

/// Per-episode expert personality: which side to detour around the hazard
/// and a mild gain jitter. Randomizing these yields a bimodal demo
/// distribution, which is what makes a generative policy worth training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpertStyle {
    /// +1 detours clockwise around the hazard, -1 counter-clockwise.
    pub side: f64,
    pub gain_scale: f64,
}

impl ExpertStyle {
    pub fn draw<R: Rng>(rng: &mut R) -> Self {
        ExpertStyle {
            side: if rng.gen_bool(0.5) { 1.0 } else { -1.0 },
            gain_scale: rng.gen_range(0.9..1.1),
        }
    }

    pub fn mirrored(&self) -> Self {
        ExpertStyle { side: -self.side, gain_scale: self.gain_scale }
    }
}

/// Interception lead in ticks grows with distance to the target.
const LEAD_MIN: f64 = 4.0;
const LEAD_MAX: f64 = 12.0;
/// How many ticks ahead the hazard is predicted when steering around it.
const HAZARD_LEAD: f64 = 5.0;
/// Hazard influence radius.
const SAFE_RADIUS: f64 = 0.62;

const ATTRACT_GAIN: f64 = 2.8;
const VELOCITY_GAIN: f64 = 1.1;
const REPEL_GAIN: f64 = 8.0;
const TANGENT_GAIN: f64 = 2.6;

/// Potential-field controller: attraction to an intercept point ahead of
/// the moving target, repulsion from the predicted hazard position plus a
/// tangential component on the side fixed by style. Returns an
/// acceleration in [-1, 1]^2.
pub fn expert_action(env: &Env, state: &EnvState, style: &ExpertStyle) -> [f64; 2] {
    let here = env.target_position(state.target_phase);
    let reach = dist(state.agent_pos, here);
    let lead = (reach / 0.05).clamp(LEAD_MIN, LEAD_MAX);
    let aim = env.target_position(state.target_phase + lead * env.cfg.target_omega);
    let mut ax = style.gain_scale * ATTRACT_GAIN * (aim[0] - state.agent_pos[0])
        - VELOCITY_GAIN * state.agent_vel[0];
    let mut ay = style.gain_scale * ATTRACT_GAIN * (aim[1] - state.agent_pos[1])
        - VELOCITY_GAIN * state.agent_vel[1];

    let hazard = env.hazard_position(state.hazard_phase + HAZARD_LEAD * env.cfg.hazard_omega);
    let d = dist(state.agent_pos, hazard);
    if d < SAFE_RADIUS {
        let w = (SAFE_RADIUS - d) / SAFE_RADIUS;
        let (rx, ry) = if d > 1e-9 {
            ((state.agent_pos[0] - hazard[0]) / d, (state.agent_pos[1] - hazard[1]) / d)
        } else {
            (0.0, -1.0)
        };
        ax += REPEL_GAIN * w * w * rx;
        ay += REPEL_GAIN * w * w * ry;
        // Perpendicular detour, side chosen per episode.
        ax += style.side * TANGENT_GAIN * w * -ry;
        ay += style.side * TANGENT_GAIN * w * rx;
    }

    // Direction-preserving saturation into the [-1, 1]^2 action box.
    let peak = ax.abs().max(ay.abs());
    if peak > 1.0 {
        ax /= peak;
        ay /= peak;
    }
    [ax, ay]
}
