use rtchunk_core::envkit::{expert_action, Env, EnvConfig, EnvState, ExpertStyle, Status};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn which_episode_fails() {
    // Mirror the executor test loop: draw style then run_episode over the
    // same rng; here simulate closed-loop directly to classify failures.
    let env = Env::new(EnvConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for ep in 0..64 {
        let style = ExpertStyle::draw(&mut rng);
        // run_episode draws init_state from the same rng stream.
        let mut state = env.init_state(&mut rng);
        let mut last: Option<EnvState> = None;
        loop {
            let a = expert_action(&env, &state, &style);
            state = env.step(&state, a);
            match env.status(&state) {
                Status::Success => break,
                Status::Failure => {
                    let why = if state.tick >= env.cfg.max_ticks { "timeout" } else { "hazard" };
                    println!("ep {} {} at tick {} pos ({:.2},{:.2})", ep, why, state.tick, state.agent_pos[0], state.agent_pos[1]);
                    break;
                }
                Status::Running => {}
            }
            last = Some(state.clone());
        }
        let _ = last;
    }
    println!("done");
}
