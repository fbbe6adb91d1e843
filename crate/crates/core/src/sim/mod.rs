//! MiniManip: a deterministic tabletop world with two RGB-D cameras,
//! scripted experts, five-task chains and color palettes as environment splits.

mod expert;
mod render;
mod rollout;
mod task;
mod world;

pub use expert::{expert_action, expert_rollout, CONTACT_HEIGHT, CRUISE_HEIGHT, GRASP_DEPTH, PRESS_HEIGHT};
pub use render::{render_observation, static_pixel_of, GRIPPER_CAMERA_OFFSET, GRIPPER_PIXEL, IMAGE_SIZE, STATIC_CAMERA_HEIGHT, STATIC_PIXEL};
pub use rollout::{
    chain_specs, evaluate_chains, generate_dataset, rollout_chain, sample_chain, ChainResult, ChainSpec, DatasetSpec, ExpertPolicy, Policy,
    RandomPolicy, Step, StepView, TaskPool, Trajectory, CHAIN_LENGTH, DEFAULT_HORIZON,
};
pub use task::{
    candidate_tasks, instruction_vocabulary, paraphrase_bank, paraphrase_instruction, BlockRef, Direction, Family, Size, TaskSpec, LIFT_HEIGHT,
    PUSH_DISTANCE, PUSH_SUCCESS,
};
pub use world::*;

use crate::depth::DepthMap;
use crate::encoders::RgbImage;

/// Two RGB frames and two depth frames (meters): third-person and gripper camera.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub rgb_static: RgbImage,
    pub rgb_gripper: RgbImage,
    pub depth_static: DepthMap,
    pub depth_gripper: DepthMap,
}
