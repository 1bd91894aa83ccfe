//! One JSON-Lines record per simulated scene.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    classify_transition, default_attribute_pool, default_category_pool, generate_questions, generate_scene,
    generate_trajectory, observe, CameraPose, Room, Scene, SceneConfig, SimConstants, SimError, SkippedFamily,
};
use crate::question::{StructuredQuestion, TaskType};
use crate::scene_graph::{FrameObservation, ViewpointTransition};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub min_objects: usize,
    pub max_objects: usize,
    pub n_frames: usize,
    /// Room width and depth are drawn uniformly from these ranges.
    pub width_range: (f64, f64),
    pub depth_range: (f64, f64),
    pub wall_height: f64,
    pub families: Vec<TaskType>,
    pub constants: SimConstants,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            min_objects: 8,
            max_objects: 16,
            n_frames: 16,
            width_range: (6.0, 9.0),
            depth_range: (5.0, 8.0),
            wall_height: 3.0,
            families: TaskType::ALL.to_vec(),
            constants: SimConstants::default(),
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        self.constants.validate()?;
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_string()));
        if self.min_objects == 0 || self.min_objects > self.max_objects {
            return bad("object range must satisfy 1 <= min_objects <= max_objects");
        }
        if self.n_frames == 0 {
            return bad("n_frames must be at least 1");
        }
        let (w, d) = (self.width_range, self.depth_range);
        if !(w.0 > 0.0 && w.0 <= w.1 && d.0 > 0.0 && d.0 <= d.1 && self.wall_height > 0.0) {
            return bad("room ranges must be positive and ordered");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub seed: u64,
    pub scene: Scene,
    pub trajectory: Vec<CameraPose>,
    pub transitions: Vec<ViewpointTransition>,
    pub observations: Vec<FrameObservation>,
    pub questions: Vec<StructuredQuestion>,
    #[serde(default)]
    pub skipped: Vec<SkippedFamily>,
}

fn draw(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// Scene, trajectory, observations, transitions and questions for one seed.
pub fn simulate_scene(seed: u64, config: &DatasetConfig) -> Result<SceneRecord, SimError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x2545_f491_4f6c_dd1d) ^ 0x5eed);
    let room = Room {
        width: (draw(&mut rng, config.width_range) * 10.0).round() / 10.0,
        depth: (draw(&mut rng, config.depth_range) * 10.0).round() / 10.0,
        height: config.wall_height,
    };
    let scene_config = SceneConfig {
        n_objects: rng.gen_range(config.min_objects..=config.max_objects),
        room,
        category_pool: default_category_pool(),
        attribute_pool: default_attribute_pool(),
        max_attempts: 500,
    };
    let constants = &config.constants;
    let scene = generate_scene(seed, &scene_config)?;
    let trajectory = generate_trajectory(&scene, seed, config.n_frames, constants)?;
    let transitions = trajectory
        .windows(2)
        .enumerate()
        .map(|(i, pair)| classify_transition(i, &pair[0], &pair[1], constants))
        .collect::<Result<Vec<_>, _>>()?;
    let observations = trajectory
        .iter()
        .enumerate()
        .map(|(i, pose)| observe(&scene, pose, i, constants))
        .collect();
    let set = generate_questions(&scene, &trajectory, &config.families, seed, constants);
    Ok(SceneRecord {
        seed,
        scene,
        trajectory,
        transitions,
        observations,
        questions: set.questions,
        skipped: set.skipped,
    })
}

/// Scenes for seeds `base_seed, base_seed + 1, ...`.
pub fn simulate_dataset(base_seed: u64, n_scenes: usize, config: &DatasetConfig) -> Result<Vec<SceneRecord>, SimError> {
    (0..n_scenes as u64)
        .map(|i| simulate_scene(base_seed.wrapping_add(i), config))
        .collect()
}
