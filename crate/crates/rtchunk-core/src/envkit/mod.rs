//! A small dynamic 2D testbed where inference delay genuinely hurts:
//! the agent chases a moving target past a moving hazard, a scripted
//! potential-field expert provides bimodal demonstrations, and episodes
//! are sliced into overlapping action chunks for imitation.

mod dataset;
mod env;
mod expert;

pub use dataset::{
    gen_dataset, read_dataset, write_dataset, Dataset, Demo, GenSummary, NormStats,
};
pub use env::{
    Env, EnvConfig, EnvState, Status, ACTION_DIM, AGENT_VEL_SCALE, OBS_DIM, SCENE_VEL_SCALE,
};
pub use expert::{expert_action, ExpertStyle};
