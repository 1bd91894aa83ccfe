use std::f64::consts::{FRAC_PI_4, PI, TAU};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{wrap_angle, Point2, Rect, Scene, SimConstants, SimError};
use crate::scene_graph::{Rotation, Translation, ViewpointTransition};

const TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub position: Point2,
    /// Radians, counter-clockwise, 0 along +x.
    pub heading: f64,
    pub fov: f64,
    pub range: f64,
}

impl CameraPose {
    pub fn new(position: Point2, heading: f64, constants: &SimConstants) -> Self {
        CameraPose {
            position,
            heading: heading.rem_euclid(TAU),
            fov: constants.fov,
            range: constants.range,
        }
    }
}

fn rotation_angle(rotation: Rotation, quantum: f64) -> f64 {
    match rotation {
        Rotation::TurnAround => PI,
        other => other.quarter_turns() as f64 * quantum,
    }
}

/// Applies a discrete move: translate in the current body frame, then turn.
pub fn apply_transition(pose: &CameraPose, translation: Translation, rotation: Rotation, constants: &SimConstants) -> CameraPose {
    let position = match translation.octant() {
        None => pose.position,
        Some(octant) => {
            let direction = pose.heading + octant as f64 * FRAC_PI_4;
            Point2::new(
                pose.position.x + constants.step * direction.cos(),
                pose.position.y + constants.step * direction.sin(),
            )
        }
    };
    CameraPose {
        position,
        heading: (pose.heading + rotation_angle(rotation, constants.turn_quantum)).rem_euclid(TAU),
        fov: pose.fov,
        range: pose.range,
    }
}

/// Recovers the discrete move between two consecutive poses.
pub fn classify_transition(
    from_frame: usize,
    a: &CameraPose,
    b: &CameraPose,
    constants: &SimConstants,
) -> Result<ViewpointTransition, SimError> {
    let dx = b.position.x - a.position.x;
    let dy = b.position.y - a.position.y;
    let (sin, cos) = a.heading.sin_cos();
    let forward = dx * cos + dy * sin;
    let leftward = -dx * sin + dy * cos;
    let distance = forward.hypot(leftward);

    let translation = if distance < TOLERANCE {
        Translation::None
    } else {
        if (distance - constants.step).abs() > TOLERANCE {
            return Err(SimError::Classification(format!(
                "displacement {distance:.6} m is not one step of {} m",
                constants.step
            )));
        }
        let angle = leftward.atan2(forward);
        let octant = (angle / FRAC_PI_4).round();
        if (angle - octant * FRAC_PI_4).abs() > TOLERANCE {
            return Err(SimError::Classification(format!(
                "displacement bearing {:.3} rad is not a multiple of 45 degrees",
                angle
            )));
        }
        Translation::from_octant(octant as i32)
    };

    let turn = wrap_angle(b.heading - a.heading);
    let rotation = if turn.abs() < TOLERANCE {
        Rotation::None
    } else if (turn.abs() - PI).abs() < TOLERANCE {
        Rotation::TurnAround
    } else if (turn - constants.turn_quantum).abs() < TOLERANCE {
        Rotation::TurnLeft
    } else if (turn + constants.turn_quantum).abs() < TOLERANCE {
        Rotation::TurnRight
    } else {
        return Err(SimError::Classification(format!(
            "heading change {turn:.4} rad is not one turn quantum"
        )));
    };
    Ok(ViewpointTransition::new(from_frame, translation, rotation))
}

fn is_free(scene: &Scene, p: Point2, clearance: f64) -> bool {
    let inner = Rect {
        min: Point2::new(clearance, clearance),
        max: Point2::new(scene.room.width - clearance, scene.room.depth - clearance),
    };
    inner.contains(p) && !scene.placed_objects.iter().any(|o| o.bounds().inflate(clearance).contains(p))
}

/// Random walk of `n_frames` poses, each one discrete move after the last.
pub fn generate_trajectory(
    scene: &Scene,
    seed: u64,
    n_frames: usize,
    constants: &SimConstants,
) -> Result<Vec<CameraPose>, SimError> {
    if n_frames == 0 {
        return Err(SimError::Trajectory("n_frames must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7261_6a65_6374_6f72);
    let clearance = constants.camera_clearance;
    let mut start = None;
    for _ in 0..10_000 {
        let p = Point2::new(
            rng.gen_range(0.0..scene.room.width),
            rng.gen_range(0.0..scene.room.depth),
        );
        if is_free(scene, p, clearance) {
            start = Some(p);
            break;
        }
    }
    let start = start.ok_or_else(|| SimError::Trajectory("no free starting position in the room".into()))?;
    let quarter_count = (TAU / constants.turn_quantum).round().max(1.0) as u32;
    let heading = rng.gen_range(0..quarter_count) as f64 * constants.turn_quantum;
    let mut poses = vec![CameraPose::new(start, heading, constants)];

    let moves: Vec<(Translation, Rotation)> = Translation::ALL
        .iter()
        .flat_map(|&t| Rotation::ALL.iter().map(move |&r| (t, r)))
        .filter(|&(t, r)| !(t == Translation::None && r == Rotation::None))
        .collect();
    while poses.len() < n_frames {
        let current = *poses.last().expect("non-empty");
        let valid: Vec<CameraPose> = moves
            .iter()
            .map(|&(t, r)| apply_transition(&current, t, r, constants))
            .filter(|p| is_free(scene, p.position, clearance))
            .collect();
        // Moving forward keeps the walk exploring instead of spinning in place.
        let forward: Vec<&CameraPose> = valid
            .iter()
            .filter(|p| p.position != current.position)
            .collect();
        let next = if !forward.is_empty() && rng.gen_bool(0.75) {
            **forward.choose(&mut rng).expect("non-empty")
        } else {
            *valid
                .choose(&mut rng)
                .ok_or_else(|| SimError::Trajectory("no valid move from the current pose".into()))?
        };
        poses.push(next);
    }
    Ok(poses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{generate_scene, SceneConfig};

    fn pose(x: f64, y: f64, heading: f64) -> CameraPose {
        CameraPose::new(Point2::new(x, y), heading, &SimConstants::default())
    }

    #[test]
    fn forward_step_moves_along_heading() {
        let c = SimConstants::default();
        let a = pose(1.0, 1.0, 0.0);
        let b = apply_transition(&a, Translation::Forward, Rotation::None, &c);
        assert!((b.position.x - 1.5).abs() < 1e-12);
        assert!((b.position.y - 1.0).abs() < 1e-12);
    }

    #[test]
    fn classification_examples() {
        let c = SimConstants::default();
        let a = pose(2.0, 2.0, 0.0);
        let t = classify_transition(0, &a, &a, &c).unwrap();
        assert_eq!((t.translation, t.rotation), (Translation::None, Rotation::None));

        let fwd = pose(2.5, 2.0, 0.0);
        let t = classify_transition(0, &a, &fwd, &c).unwrap();
        assert_eq!((t.translation, t.rotation), (Translation::Forward, Rotation::None));

        // 0.5 m toward body +90 degrees (left = +y at heading 0), then heading -90 degrees
        let b = pose(2.0, 2.5, -FRAC_PI_2);
        let t = classify_transition(0, &a, &b, &c).unwrap();
        assert_eq!((t.translation, t.rotation), (Translation::Left, Rotation::TurnRight));
        assert_eq!(t.narrative, "I step to the left and turn right.");
    }

    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn classification_rejects_non_quanta() {
        let c = SimConstants::default();
        let a = pose(2.0, 2.0, 0.0);
        assert!(classify_transition(0, &a, &pose(3.0, 2.0, 0.0), &c).is_err());
        assert!(classify_transition(0, &a, &pose(2.0, 2.0, 0.3), &c).is_err());
        let off_axis = pose(2.0 + 0.5 * 0.3f64.cos(), 2.0 + 0.5 * 0.3f64.sin(), 0.0);
        assert!(classify_transition(0, &a, &off_axis, &c).is_err());
    }

    #[test]
    fn every_move_round_trips() {
        let c = SimConstants::default();
        for heading in [0.0, FRAC_PI_2, PI, 3.0 * FRAC_PI_2] {
            let a = pose(3.0, 3.0, heading);
            for t in Translation::ALL {
                for r in Rotation::ALL {
                    let b = apply_transition(&a, t, r, &c);
                    let got = classify_transition(4, &a, &b, &c).unwrap();
                    assert_eq!((got.translation, got.rotation), (t, r));
                    let again = apply_transition(&a, got.translation, got.rotation, &c);
                    assert!((again.position.x - b.position.x).abs() < 1e-9);
                    assert!((again.position.y - b.position.y).abs() < 1e-9);
                    assert!(wrap_angle(again.heading - b.heading).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn sixteen_frame_walk_is_classifiable() {
        let c = SimConstants::default();
        let scene = generate_scene(3, &SceneConfig::default()).unwrap();
        let poses = generate_trajectory(&scene, 3, 16, &c).unwrap();
        assert_eq!(poses.len(), 16);
        for (i, pair) in poses.windows(2).enumerate() {
            let t = classify_transition(i, &pair[0], &pair[1], &c).unwrap();
            let replay = apply_transition(&pair[0], t.translation, t.rotation, &c);
            assert!(replay.position.distance(pair[1].position) < 1e-9);
            assert!(scene.room.contains(pair[1].position));
        }
        let single = generate_trajectory(&scene, 3, 1, &c).unwrap();
        assert_eq!(single.len(), 1);
        assert!(generate_trajectory(&scene, 3, 0, &c).is_err());
    }
}
