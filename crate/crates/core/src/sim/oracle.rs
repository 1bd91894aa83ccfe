//! Brute-force ground truth computed directly from scene geometry.
//!
//! Nothing here goes through observations or scene graphs, so graph-based
//! answers can be checked against it.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::{FRAC_PI_2, PI};

use super::route::{plan_route, OccupancyGrid};
use super::{CameraPose, PlacedObject, Point2, Rect, Scene, SimConstants, SimError};
use crate::question::{Answer, ObjectRef, QuestionVariant, StructuredQuestion, TaskType, OPTION_LETTERS};

pub const TWO_WAY: [&str; 2] = ["left", "right"];
pub const FOUR_WAY: [&str; 4] = ["front-left", "front-right", "back-left", "back-right"];

/// Frames in which each object is visible, by sector test on every pose.
pub fn visible_frames(scene: &Scene, trajectory: &[CameraPose]) -> BTreeMap<String, BTreeSet<usize>> {
    let mut out: BTreeMap<String, BTreeSet<usize>> = BTreeMap::new();
    for (frame, pose) in trajectory.iter().enumerate() {
        let axis = (pose.heading.cos(), pose.heading.sin());
        let half_cos = (pose.fov / 2.0).cos();
        for object in &scene.placed_objects {
            let v = (object.center.x - pose.position.x, object.center.y - pose.position.y);
            let norm = v.0.hypot(v.1);
            if norm > 0.0 && norm <= pose.range && v.0 * axis.0 + v.1 * axis.1 >= norm * half_cos {
                out.entry(object.id.clone()).or_default().insert(frame);
            }
        }
    }
    out
}

pub fn matching<'a>(scene: &'a Scene, reference: &ObjectRef) -> Vec<&'a PlacedObject> {
    scene
        .placed_objects
        .iter()
        .filter(|o| reference.matches_parts(&o.category, &o.attributes))
        .collect()
}

fn unique<'a>(scene: &'a Scene, reference: &ObjectRef) -> Result<&'a PlacedObject, SimError> {
    match matching(scene, reference).as_slice() {
        [one] => Ok(one),
        [] => Err(SimError::Provenance(format!("no `{reference}` in scene {}", scene.seed))),
        many => Err(SimError::Provenance(format!(
            "`{reference}` matches {} objects in scene {}",
            many.len(),
            scene.seed
        ))),
    }
}

/// Signed angle of `query` relative to the ray `standing -> facing`, in (-pi, pi].
pub fn relative_angle(standing: Point2, facing: Point2, query: Point2) -> f64 {
    let ray = (facing.x - standing.x, facing.y - standing.y);
    let to = (query.x - standing.x, query.y - standing.y);
    let cross = ray.0 * to.1 - ray.1 * to.0;
    let dot = ray.0 * to.0 + ray.1 * to.1;
    let angle = cross.atan2(dot);
    if angle == -PI {
        PI
    } else {
        angle
    }
}

/// Half-open sectors: left `(0, pi]`, right `(-pi, 0]`; the four-way scheme
/// splits each side again at +-pi/2 with the same convention.
pub fn direction_label(angle: f64, variant: QuestionVariant) -> &'static str {
    let left = angle > 0.0;
    match variant {
        QuestionVariant::FourWay => match (left, angle.abs() > FRAC_PI_2) {
            (true, false) => "front-left",
            (true, true) => "back-left",
            (false, false) => "front-right",
            (false, true) => "back-right",
        },
        _ => {
            if left {
                "left"
            } else {
                "right"
            }
        }
    }
}

/// Angular distance from `angle` to the nearest sector boundary of the scheme.
pub fn boundary_clearance(angle: f64, variant: QuestionVariant) -> f64 {
    let boundaries: &[f64] = match variant {
        QuestionVariant::FourWay => &[0.0, FRAC_PI_2, -FRAC_PI_2, PI, -PI],
        _ => &[0.0, PI, -PI],
    };
    boundaries.iter().map(|b| (angle - b).abs()).fold(f64::INFINITY, f64::min)
}

pub fn order_label(names: &[String]) -> String {
    names.join(", ")
}

fn letter_for(question: &StructuredQuestion, text: &str) -> Result<Answer, SimError> {
    question
        .option_letter(text)
        .map(Answer::Choice)
        .ok_or_else(|| SimError::Provenance(format!("{}: answer `{text}` is not among the options", question.id)))
}

fn targets<'a>(scene: &'a Scene, question: &StructuredQuestion, n: usize) -> Result<Vec<&'a PlacedObject>, SimError> {
    if question.explicit_targets.len() < n {
        return Err(SimError::Provenance(format!(
            "{}: expected at least {n} targets, found {}",
            question.id,
            question.explicit_targets.len()
        )));
    }
    question.explicit_targets.iter().map(|r| unique(scene, r)).collect()
}

/// Ground-truth answer for `question`, recomputed from scratch.
pub fn oracle_answer(
    scene: &Scene,
    trajectory: &[CameraPose],
    question: &StructuredQuestion,
    constants: &SimConstants,
) -> Result<Answer, SimError> {
    if let Some(seed) = question.scene_seed {
        if seed != scene.seed {
            return Err(SimError::Provenance(format!(
                "{} was generated for scene {seed}, not {}",
                question.id, scene.seed
            )));
        }
    }
    match question.task_type {
        TaskType::ObjectCount => {
            let reference = question
                .explicit_targets
                .first()
                .ok_or_else(|| SimError::Provenance(format!("{}: count without a target", question.id)))?;
            Ok(Answer::numeric(matching(scene, reference).len() as f64, ""))
        }
        TaskType::AbsoluteDistance => {
            let t = targets(scene, question, 2)?;
            Ok(Answer::numeric(t[0].center.distance(t[1].center), "m"))
        }
        TaskType::ObjectSize => {
            let t = targets(scene, question, 1)?;
            Ok(Answer::numeric(t[0].longest_dimension(), "m"))
        }
        TaskType::RoomSize => Ok(Answer::numeric(scene.room.area(), "m²")),
        TaskType::RelativeDistance => {
            let t = targets(scene, question, 3)?;
            let anchor = t[0];
            let farthest = question.variant == Some(QuestionVariant::Farthest);
            let mut best: Option<(f64, usize)> = None;
            for (i, candidate) in t[1..].iter().enumerate() {
                let d = anchor.center.distance(candidate.center);
                let better = match best {
                    None => true,
                    Some((bd, _)) => (farthest && d > bd) || (!farthest && d < bd),
                };
                if better {
                    best = Some((d, i));
                }
            }
            let (_, index) = best.expect("at least two candidates");
            if index >= question.options.len() {
                return Err(SimError::Provenance(format!("{}: fewer options than candidates", question.id)));
            }
            Ok(Answer::Choice(OPTION_LETTERS[index]))
        }
        TaskType::RelativeDirection => {
            let t = targets(scene, question, 3)?;
            let angle = relative_angle(t[0].center, t[1].center, t[2].center);
            let variant = question.variant.unwrap_or(QuestionVariant::TwoWay);
            letter_for(question, direction_label(angle, variant))
        }
        TaskType::RoutePlan => {
            let t = targets(scene, question, 3)?;
            let (start, facing, goal) = (t[0], t[1], t[2]);
            let obstacles: Vec<Rect> = scene
                .placed_objects
                .iter()
                .filter(|o| o.id != start.id && o.id != goal.id)
                .map(PlacedObject::bounds)
                .collect();
            let grid = OccupancyGrid::new(&scene.room, &obstacles, constants.grid_cell);
            let route = plan_route(&grid, start.center, facing.center, goal.center)
                .ok_or_else(|| SimError::Provenance(format!("{}: goal unreachable", question.id)))?;
            letter_for(question, &route.text())
        }
        TaskType::AppearanceOrder => {
            let t = targets(scene, question, 2)?;
            let visible = visible_frames(scene, trajectory);
            let mut keyed = Vec::with_capacity(t.len());
            for (object, reference) in t.iter().zip(&question.explicit_targets) {
                let first = visible
                    .get(&object.id)
                    .and_then(|f| f.first().copied())
                    .ok_or_else(|| SimError::Provenance(format!("{}: {} is never visible", question.id, object.id)))?;
                keyed.push((first, object.id.clone(), reference.display_name()));
            }
            keyed.sort();
            let names: Vec<String> = keyed.into_iter().map(|(_, _, name)| name).collect();
            letter_for(question, &order_label(&names))
        }
    }
}
