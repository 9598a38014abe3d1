use rtchunk_core::envkit::{expert_action, Env, EnvConfig, ExpertStyle, Status};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn find_failures() {
    let env = Env::new(EnvConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(123);
    for ep in 0..512 {
        let ep_seed: u64 = rng.gen();
        let mut ep_rng = ChaCha8Rng::seed_from_u64(ep_seed);
        let mut state = env.init_state(&mut ep_rng);
        let style = ExpertStyle::draw(&mut ep_rng);
        let mut trail = Vec::new();
        loop {
            let action = expert_action(&env, &state, &style);
            state = env.step(&state, action);
            trail.push(state.clone());
            match env.status(&state) {
                Status::Success => break,
                Status::Failure => {
                    let hz = env.hazard_position(state.hazard_phase);
                    let tg = env.target_position(state.target_phase);
                    println!("ep {} seed {} FAIL tick {} side {} agent ({:.2},{:.2}) vel ({:.2},{:.2}) hazard ({:.2},{:.2}) target ({:.2},{:.2})",
                        ep, ep_seed, state.tick, style.side,
                        state.agent_pos[0], state.agent_pos[1],
                        state.agent_vel[0], state.agent_vel[1], hz[0], hz[1], tg[0], tg[1]);
                    // print last few ticks
                    for s in trail.iter().rev().take(6).rev() {
                        let h = env.hazard_position(s.hazard_phase);
                        println!("   t={} agent ({:.3},{:.3}) hazard ({:.3},{:.3}) d={:.3}",
                            s.tick, s.agent_pos[0], s.agent_pos[1], h[0], h[1],
                            ((s.agent_pos[0]-h[0]).powi(2)+(s.agent_pos[1]-h[1]).powi(2)).sqrt());
                    }
                    break;
                }
                Status::Running => {}
            }
        }
    }
}
