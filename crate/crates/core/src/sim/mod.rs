//! Synthetic egocentric scenes with exact ground truth.
//!
//! A [`Scene`] is an axis-aligned rectangular room with non-overlapping box
//! objects. A camera walks a discrete trajectory through it; every frame is
//! observed without occlusion, questions for the eight task families are
//! generated, and [`oracle::oracle_answer`] answers them by brute force.

mod camera;
pub mod dataset;
mod observe;
pub mod oracle;
mod questions;
pub mod route;

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use camera::{apply_transition, classify_transition, generate_trajectory, CameraPose};
pub use observe::observe;
pub use questions::{generate_questions, QuestionSet, SkippedFamily};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("could only place {placed} of {requested} objects after {attempts} attempts; use fewer objects or a larger room")]
    PlacementInfeasible {
        placed: usize,
        requested: usize,
        attempts: usize,
    },
    #[error("invalid scene configuration: {0}")]
    InvalidConfig(String),
    #[error("trajectory error: {0}")]
    Trajectory(String),
    #[error("poses are not one motion quantum apart: {0}")]
    Classification(String),
    #[error("question does not belong to this scene: {0}")]
    Provenance(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn distance(self, other: Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Axis-aligned room `[0, width] x [0, depth]`, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Room {
    pub width: f64,
    pub depth: f64,
    pub height: f64,
}

impl Room {
    pub fn area(&self) -> f64 {
        self.width * self.depth
    }

    pub fn contains(&self, p: Point2) -> bool {
        p.x >= 0.0 && p.x <= self.width && p.y >= 0.0 && p.y <= self.depth
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacedObject {
    pub id: String,
    pub category: String,
    pub attributes: BTreeSet<String>,
    pub center: Point2,
    /// Extent along x and y, in meters.
    pub footprint: (f64, f64),
    pub height: f64,
}

impl PlacedObject {
    pub fn bounds(&self) -> Rect {
        Rect::centered(self.center, self.footprint)
    }

    /// Longest of the three box dimensions.
    pub fn longest_dimension(&self) -> f64 {
        self.footprint.0.max(self.footprint.1).max(self.height)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub min: Point2,
    pub max: Point2,
}

impl Rect {
    pub fn centered(center: Point2, (w, d): (f64, f64)) -> Self {
        Rect {
            min: Point2::new(center.x - w / 2.0, center.y - d / 2.0),
            max: Point2::new(center.x + w / 2.0, center.y + d / 2.0),
        }
    }

    /// Positive-area intersection.
    pub fn overlaps(&self, other: &Rect) -> bool {
        self.min.x < other.max.x && other.min.x < self.max.x && self.min.y < other.max.y && other.min.y < self.max.y
    }

    pub fn contains(&self, p: Point2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    pub fn inflate(&self, margin: f64) -> Rect {
        Rect {
            min: Point2::new(self.min.x - margin, self.min.y - margin),
            max: Point2::new(self.max.x + margin, self.max.y + margin),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub room: Room,
    pub placed_objects: Vec<PlacedObject>,
    pub seed: u64,
}

impl Scene {
    pub fn object(&self, id: &str) -> Option<&PlacedObject> {
        self.placed_objects.iter().find(|o| o.id == id)
    }

    /// Checks room positivity, containment and pairwise disjoint footprints.
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.room.width > 0.0 && self.room.depth > 0.0 && self.room.height > 0.0) {
            return Err(SimError::InvalidConfig("room dimensions must be positive".into()));
        }
        let room = Rect {
            min: Point2::new(0.0, 0.0),
            max: Point2::new(self.room.width, self.room.depth),
        };
        for (i, a) in self.placed_objects.iter().enumerate() {
            let ra = a.bounds();
            if !(room.contains(ra.min) && room.contains(ra.max)) {
                return Err(SimError::InvalidConfig(format!("{} extends outside the room", a.id)));
            }
            for b in &self.placed_objects[i + 1..] {
                if ra.overlaps(&b.bounds()) {
                    return Err(SimError::InvalidConfig(format!("{} overlaps {}", a.id, b.id)));
                }
            }
        }
        Ok(())
    }
}

/// Fixed geometric constants of the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConstants {
    /// Translation quantum, meters.
    pub step: f64,
    /// Rotation quantum, radians.
    pub turn_quantum: f64,
    pub fov: f64,
    pub range: f64,
    pub near_threshold: f64,
    /// Occupancy-grid cell for route planning, meters.
    pub grid_cell: f64,
    /// Minimum angular distance, in degrees, between a relative-direction
    /// query and any sector boundary.
    pub direction_margin_deg: f64,
    /// Minimum gap between the best and second-best relative-distance candidate.
    pub distance_margin: f64,
    /// Camera keeps at least this distance from walls and object footprints.
    pub camera_clearance: f64,
}

impl Default for SimConstants {
    fn default() -> Self {
        SimConstants {
            step: 0.5,
            turn_quantum: std::f64::consts::FRAC_PI_2,
            fov: std::f64::consts::FRAC_PI_2,
            range: 4.0,
            near_threshold: 1.0,
            grid_cell: 0.5,
            direction_margin_deg: 10.0,
            distance_margin: 0.15,
            camera_clearance: 0.2,
        }
    }
}

impl SimConstants {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_string()));
        if !(self.step > 0.0) {
            return bad("step must be positive");
        }
        if !(self.turn_quantum > 0.0 && self.turn_quantum <= std::f64::consts::PI) {
            return bad("turn_quantum must be in (0, pi]");
        }
        if !(self.fov > 0.0 && self.fov < std::f64::consts::PI) {
            return bad("fov must be in (0, pi)");
        }
        if !(self.range > 0.0 && self.near_threshold > 0.0 && self.grid_cell > 0.0) {
            return bad("range, near_threshold and grid_cell must be positive");
        }
        if !(self.direction_margin_deg >= 0.0 && self.direction_margin_deg < 45.0) {
            return bad("direction_margin_deg must be in [0, 45)");
        }
        if !(self.distance_margin >= 0.0 && self.camera_clearance >= 0.0) {
            return bad("margins must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategorySpec {
    pub name: String,
    pub footprint_min: (f64, f64),
    pub footprint_max: (f64, f64),
    pub height_min: f64,
    pub height_max: f64,
}

impl CategorySpec {
    fn new(name: &str, footprint_min: (f64, f64), footprint_max: (f64, f64), height: (f64, f64)) -> Self {
        CategorySpec {
            name: name.to_string(),
            footprint_min,
            footprint_max,
            height_min: height.0,
            height_max: height.1,
        }
    }
}

pub fn default_category_pool() -> Vec<CategorySpec> {
    vec![
        CategorySpec::new("chair", (0.45, 0.45), (0.6, 0.6), (0.8, 1.0)),
        CategorySpec::new("table", (0.8, 0.6), (1.6, 1.0), (0.7, 0.8)),
        CategorySpec::new("sofa", (1.6, 0.8), (2.2, 1.0), (0.8, 0.9)),
        CategorySpec::new("lamp", (0.3, 0.3), (0.4, 0.4), (1.2, 1.7)),
        CategorySpec::new("tv", (1.0, 0.2), (1.4, 0.3), (0.6, 0.8)),
        CategorySpec::new("plant", (0.3, 0.3), (0.5, 0.5), (0.5, 1.5)),
        CategorySpec::new("cabinet", (0.8, 0.4), (1.2, 0.6), (0.8, 1.8)),
        CategorySpec::new("stool", (0.35, 0.35), (0.45, 0.45), (0.45, 0.75)),
        CategorySpec::new("bookshelf", (0.8, 0.3), (1.2, 0.4), (1.6, 2.0)),
        CategorySpec::new("refrigerator", (0.6, 0.6), (0.9, 0.75), (1.6, 1.9)),
    ]
}

pub fn default_attribute_pool() -> Vec<String> {
    ["red", "blue", "green", "white", "black", "gray", "brown"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub n_objects: usize,
    pub room: Room,
    pub category_pool: Vec<CategorySpec>,
    pub attribute_pool: Vec<String>,
    /// Rejection-sampling attempts per object.
    pub max_attempts: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            n_objects: 10,
            room: Room {
                width: 6.0,
                depth: 5.0,
                height: 3.0,
            },
            category_pool: default_category_pool(),
            attribute_pool: default_attribute_pool(),
            max_attempts: 500,
        }
    }
}

/// Places `n_objects` non-overlapping boxes by rejection sampling.
/// Deterministic in `seed`.
pub fn generate_scene(seed: u64, config: &SceneConfig) -> Result<Scene, SimError> {
    if config.n_objects == 0 {
        return Err(SimError::InvalidConfig("n_objects must be at least 1".into()));
    }
    let room = config.room;
    if !(room.width > 0.0 && room.depth > 0.0 && room.height > 0.0) {
        return Err(SimError::InvalidConfig("room bounds must be positive".into()));
    }
    if config.category_pool.is_empty() {
        return Err(SimError::InvalidConfig("category pool is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut placed: Vec<PlacedObject> = Vec::with_capacity(config.n_objects);
    let mut per_category: BTreeMap<String, usize> = BTreeMap::new();
    let mut attempts = 0usize;
    for _ in 0..config.n_objects {
        let mut success = None;
        for _ in 0..config.max_attempts {
            attempts += 1;
            let spec = &config.category_pool[rng.gen_range(0..config.category_pool.len())];
            let w = sample(&mut rng, spec.footprint_min.0, spec.footprint_max.0);
            let d = sample(&mut rng, spec.footprint_min.1, spec.footprint_max.1);
            let h = sample(&mut rng, spec.height_min, spec.height_max).min(room.height);
            if w > room.width || d > room.depth {
                continue;
            }
            let center = Point2::new(
                sample(&mut rng, w / 2.0, room.width - w / 2.0),
                sample(&mut rng, d / 2.0, room.depth - d / 2.0),
            );
            let rect = Rect::centered(center, (w, d));
            if placed.iter().any(|o| o.bounds().overlaps(&rect)) {
                continue;
            }
            let attributes = if config.attribute_pool.is_empty() {
                BTreeSet::new()
            } else {
                BTreeSet::from([config.attribute_pool[rng.gen_range(0..config.attribute_pool.len())].clone()])
            };
            success = Some((spec.name.clone(), attributes, center, (w, d), h));
            break;
        }
        let Some((category, attributes, center, footprint, height)) = success else {
            return Err(SimError::PlacementInfeasible {
                placed: placed.len(),
                requested: config.n_objects,
                attempts,
            });
        };
        let n = per_category.entry(category.clone()).or_insert(0);
        *n += 1;
        placed.push(PlacedObject {
            id: format!("{}#{}", category.replace(' ', "_"), n),
            category,
            attributes,
            center,
            footprint,
            height,
        });
    }
    placed.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(Scene {
        room,
        placed_objects: placed,
        seed,
    })
}

fn sample(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut t = theta.rem_euclid(TAU);
    if t > PI {
        t -= TAU;
    }
    t
}
