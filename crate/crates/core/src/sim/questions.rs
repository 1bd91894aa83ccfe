use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::oracle::{self, boundary_clearance, order_label, relative_angle, visible_frames, FOUR_WAY, TWO_WAY};
use super::route::{plan_route, OccupancyGrid, RouteCommand};
use super::{CameraPose, PlacedObject, Rect, Scene, SimConstants};
use crate::question::{ObjectRef, QuestionVariant, StructuredQuestion, TaskType};

const PER_FAMILY: usize = 2;
const ATTEMPTS: usize = 60;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedFamily {
    pub task_type: TaskType,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QuestionSet {
    pub questions: Vec<StructuredQuestion>,
    pub skipped: Vec<SkippedFamily>,
}

/// Shortest reference that picks out exactly one object in the scene.
fn unique_ref(scene: &Scene, object: &PlacedObject) -> Option<ObjectRef> {
    let bare = ObjectRef::new(&object.category, Vec::<String>::new());
    if oracle::matching(scene, &bare).len() == 1 {
        return Some(bare);
    }
    object
        .attributes
        .iter()
        .map(|a| ObjectRef::new(&object.category, [a.clone()]))
        .find(|r| oracle::matching(scene, r).len() == 1)
}

struct Context<'a> {
    scene: &'a Scene,
    constants: &'a SimConstants,
    visible: BTreeMap<String, BTreeSet<usize>>,
    /// Visible objects that can be named unambiguously.
    named: Vec<(&'a PlacedObject, ObjectRef)>,
}

impl Context<'_> {
    fn first_frame(&self, id: &str) -> Option<usize> {
        self.visible.get(id).and_then(|f| f.first().copied())
    }
}

/// Questions for each requested family, answered by the oracle.
///
/// Families whose requirements the trajectory cannot meet are listed in
/// `skipped` instead. Deterministic in `seed`.
pub fn generate_questions(
    scene: &Scene,
    trajectory: &[CameraPose],
    families: &[TaskType],
    seed: u64,
    constants: &SimConstants,
) -> QuestionSet {
    let visible = visible_frames(scene, trajectory);
    let named = scene
        .placed_objects
        .iter()
        .filter(|o| visible.contains_key(&o.id))
        .filter_map(|o| unique_ref(scene, o).map(|r| (o, r)))
        .collect();
    let ctx = Context {
        scene,
        constants,
        visible,
        named,
    };

    let mut set = QuestionSet::default();
    let mut seen = BTreeSet::new();
    for &family in families {
        if !seen.insert(family) {
            continue;
        }
        let family_seed = seed ^ (family as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        let mut rng = ChaCha8Rng::seed_from_u64(family_seed);
        let mut made: Vec<StructuredQuestion> = Vec::new();
        for _ in 0..ATTEMPTS {
            if made.len() == PER_FAMILY {
                break;
            }
            let Some(mut q) = draft(&ctx, family, &mut rng) else {
                continue;
            };
            if made.iter().any(|m| m.explicit_targets == q.explicit_targets && m.variant == q.variant) {
                continue;
            }
            q.id = format!("{seed}-{family}-{}", made.len());
            q.scene_seed = Some(scene.seed);
            match oracle::oracle_answer(scene, trajectory, &q, constants) {
                Ok(answer) => {
                    q.ground_truth = Some(answer);
                    made.push(q);
                }
                Err(e) => log::debug!("discarding draft {}: {e}", q.id),
            }
        }
        if made.is_empty() {
            set.skipped.push(SkippedFamily {
                task_type: family,
                reason: skip_reason(&ctx, family),
            });
        }
        set.questions.extend(made);
    }
    set
}

fn skip_reason(ctx: &Context<'_>, family: TaskType) -> String {
    let needed = match family {
        TaskType::RoomSize => 0,
        TaskType::ObjectCount | TaskType::ObjectSize => 1,
        TaskType::AbsoluteDistance => 2,
        TaskType::RelativeDistance | TaskType::RelativeDirection | TaskType::RoutePlan | TaskType::AppearanceOrder => 3,
    };
    if ctx.named.len() < needed {
        format!("needs {needed} unambiguously named visible objects, trajectory shows {}", ctx.named.len())
    } else {
        "no layout satisfied the margin and uniqueness requirements".to_string()
    }
}

fn blank(family: TaskType, targets: Vec<ObjectRef>, text: String) -> StructuredQuestion {
    StructuredQuestion {
        id: String::new(),
        task_type: family,
        explicit_targets: targets,
        options: Vec::new(),
        ground_truth: None,
        text,
        variant: None,
        scene_seed: None,
    }
}

fn pick<'a, 'b>(ctx: &'b Context<'a>, rng: &mut ChaCha8Rng, n: usize) -> Option<Vec<&'b (&'a PlacedObject, ObjectRef)>> {
    if ctx.named.len() < n {
        return None;
    }
    Some(ctx.named.choose_multiple(rng, n).collect())
}

fn draft(ctx: &Context<'_>, family: TaskType, rng: &mut ChaCha8Rng) -> Option<StructuredQuestion> {
    match family {
        TaskType::ObjectCount => {
            // every instance must be visible, otherwise the count is not recoverable from the video
            let categories: BTreeSet<&str> = ctx
                .scene
                .placed_objects
                .iter()
                .map(|o| o.category.as_str())
                .filter(|c| {
                    ctx.scene
                        .placed_objects
                        .iter()
                        .filter(|o| o.category == *c)
                        .all(|o| ctx.visible.contains_key(&o.id))
                })
                .collect();
            let categories: Vec<&str> = categories.into_iter().collect();
            let category = *categories.choose(rng)?;
            Some(blank(
                family,
                vec![ObjectRef::new(category, Vec::<String>::new())],
                format!("How many {category} instances are in this room?"),
            ))
        }
        TaskType::AbsoluteDistance => {
            let p = pick(ctx, rng, 2)?;
            let (a, b) = (&p[0].1, &p[1].1);
            Some(blank(
                family,
                vec![a.clone(), b.clone()],
                format!("What is the distance between the {a} and the {b} in meters, measured center to center?"),
            ))
        }
        TaskType::ObjectSize => {
            let p = pick(ctx, rng, 1)?;
            let a = &p[0].1;
            Some(blank(
                family,
                vec![a.clone()],
                format!("What is the longest dimension of the {a} in meters?"),
            ))
        }
        TaskType::RoomSize => Some(blank(
            family,
            Vec::new(),
            "What is the floor area of this room in square meters?".to_string(),
        )),
        TaskType::RelativeDistance => draft_relative_distance(ctx, rng),
        TaskType::RelativeDirection => draft_relative_direction(ctx, rng),
        TaskType::RoutePlan => draft_route(ctx, rng),
        TaskType::AppearanceOrder => draft_appearance(ctx, rng),
    }
}

fn draft_relative_distance(ctx: &Context<'_>, rng: &mut ChaCha8Rng) -> Option<StructuredQuestion> {
    let n_candidates = rng.gen_range(2..=4).min(ctx.named.len().saturating_sub(1));
    if n_candidates < 2 {
        return None;
    }
    let p = pick(ctx, rng, n_candidates + 1)?;
    let anchor = p[0].0;
    let farthest = rng.gen_bool(0.5);
    let mut distances: Vec<f64> = p[1..].iter().map(|(o, _)| anchor.center.distance(o.center)).collect();
    distances.sort_by(|a, b| a.total_cmp(b));
    let gap = if farthest {
        distances[distances.len() - 1] - distances[distances.len() - 2]
    } else {
        distances[1] - distances[0]
    };
    if gap < ctx.constants.distance_margin {
        return None;
    }
    let mut q = blank(
        TaskType::RelativeDistance,
        p.iter().map(|(_, r)| r.clone()).collect(),
        format!(
            "Which of these objects is {} the {}, measured center to center?",
            if farthest { "farthest from" } else { "closest to" },
            p[0].1
        ),
    );
    q.options = p[1..].iter().map(|(_, r)| r.display_name()).collect();
    q.variant = Some(if farthest {
        QuestionVariant::Farthest
    } else {
        QuestionVariant::Closest
    });
    Some(q)
}

fn draft_relative_direction(ctx: &Context<'_>, rng: &mut ChaCha8Rng) -> Option<StructuredQuestion> {
    let p = pick(ctx, rng, 3)?;
    let (standing, facing, query) = (p[0], p[1], p[2]);
    let variant = if rng.gen_bool(0.5) {
        QuestionVariant::TwoWay
    } else {
        QuestionVariant::FourWay
    };
    let angle = relative_angle(standing.0.center, facing.0.center, query.0.center);
    if boundary_clearance(angle, variant) < ctx.constants.direction_margin_deg.to_radians() {
        return None;
    }
    let (choices, ask): (&[&str], &str) = match variant {
        QuestionVariant::FourWay => (&FOUR_WAY, "front-left, front-right, back-left or back-right"),
        _ => (&TWO_WAY, "left or right"),
    };
    let mut options: Vec<String> = choices.iter().map(|s| s.to_string()).collect();
    options.shuffle(rng);
    let mut q = blank(
        TaskType::RelativeDirection,
        vec![standing.1.clone(), facing.1.clone(), query.1.clone()],
        format!(
            "If I am standing by the {} and facing the {}, is the {} to my {ask}?",
            standing.1, facing.1, query.1
        ),
    );
    q.options = options;
    q.variant = Some(variant);
    Some(q)
}

fn mirrored(commands: &[RouteCommand]) -> Vec<RouteCommand> {
    commands
        .iter()
        .map(|c| match c {
            RouteCommand::TurnLeft => RouteCommand::TurnRight,
            RouteCommand::TurnRight => RouteCommand::TurnLeft,
            other => *other,
        })
        .collect()
}

fn route_distractors(commands: &[RouteCommand]) -> Vec<Vec<RouteCommand>> {
    use RouteCommand::*;
    let mut out = vec![mirrored(commands)];
    let mut prefixed_left = vec![TurnLeft];
    prefixed_left.extend_from_slice(commands);
    let mut prefixed_right = vec![TurnRight];
    prefixed_right.extend_from_slice(commands);
    out.push(prefixed_left);
    out.push(prefixed_right);
    if let Some(i) = commands.iter().position(|c| *c != GoStraight) {
        let mut swapped = commands.to_vec();
        swapped[i] = TurnAround;
        out.push(swapped);
        let mut dropped = commands.to_vec();
        dropped.remove(i);
        dropped.dedup();
        out.push(dropped);
    }
    out.push(vec![TurnAround, GoStraight]);
    out.push(vec![GoStraight, TurnLeft, GoStraight]);
    out
}

fn draft_route(ctx: &Context<'_>, rng: &mut ChaCha8Rng) -> Option<StructuredQuestion> {
    let p = pick(ctx, rng, 3)?;
    let (start, facing, goal) = (p[0], p[1], p[2]);
    let obstacles: Vec<Rect> = ctx
        .scene
        .placed_objects
        .iter()
        .filter(|o| o.id != start.0.id && o.id != goal.0.id)
        .map(PlacedObject::bounds)
        .collect();
    let grid = OccupancyGrid::new(&ctx.scene.room, &obstacles, ctx.constants.grid_cell);
    if grid.cell_of(start.0.center) == grid.cell_of(goal.0.center) {
        return None;
    }
    let route = plan_route(&grid, start.0.center, facing.0.center, goal.0.center)?;
    let correct = route.text();
    let mut options = vec![correct.clone()];
    for d in route_distractors(&route.commands) {
        let text = super::route::render_commands(&d);
        if !text.is_empty() && !options.contains(&text) {
            options.push(text);
        }
    }
    let (first, rest) = options.split_at_mut(1);
    rest.shuffle(rng);
    let mut options: Vec<String> = first.iter().chain(rest.iter()).take(4).cloned().collect();
    options.shuffle(rng);
    let mut q = blank(
        TaskType::RoutePlan,
        vec![start.1.clone(), facing.1.clone(), goal.1.clone()],
        format!(
            "I am standing by the {} and facing the {}. Which sequence of moves takes me to the {}?",
            start.1, facing.1, goal.1
        ),
    );
    q.options = options;
    Some(q)
}

fn draft_appearance(ctx: &Context<'_>, rng: &mut ChaCha8Rng) -> Option<StructuredQuestion> {
    let p = pick(ctx, rng, 3)?;
    let mut firsts: Vec<usize> = p.iter().map(|(o, _)| ctx.first_frame(&o.id)).collect::<Option<_>>()?;
    firsts.sort_unstable();
    firsts.dedup();
    if firsts.len() != p.len() {
        return None;
    }
    let names: Vec<String> = p.iter().map(|(_, r)| r.display_name()).collect();
    let mut permutations: Vec<String> = Vec::new();
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                if i != j && j != k && i != k {
                    permutations.push(order_label(&[names[i].clone(), names[j].clone(), names[k].clone()]));
                }
            }
        }
    }
    let mut sorted: Vec<(usize, String)> = p
        .iter()
        .map(|(o, r)| (ctx.first_frame(&o.id).expect("checked"), r.display_name()))
        .collect();
    sorted.sort();
    let correct = order_label(&sorted.into_iter().map(|(_, n)| n).collect::<Vec<_>>());
    permutations.retain(|s| *s != correct);
    permutations.shuffle(rng);
    let mut options = vec![correct];
    options.extend(permutations.into_iter().take(3));
    options.shuffle(rng);
    let mut q = blank(
        TaskType::AppearanceOrder,
        p.iter().map(|(_, r)| r.clone()).collect(),
        format!(
            "In what order do the {}, the {} and the {} first appear in the video?",
            p[0].1, p[1].1, p[2].1
        ),
    );
    q.options = options;
    Some(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::question::Answer;
    use crate::sim::{generate_scene, generate_trajectory, Point2, Room, SceneConfig};

    fn placed(id: &str, category: &str, x: f64, y: f64) -> PlacedObject {
        PlacedObject {
            id: id.into(),
            category: category.into(),
            attributes: BTreeSet::new(),
            center: Point2::new(x, y),
            footprint: (0.4, 0.4),
            height: 0.9,
        }
    }

    #[test]
    fn three_chairs_count_three() {
        let c = SimConstants::default();
        let scene = Scene {
            room: Room {
                width: 6.0,
                depth: 5.0,
                height: 3.0,
            },
            placed_objects: vec![
                placed("chair#1", "chair", 3.0, 1.5),
                placed("chair#2", "chair", 3.5, 2.5),
                placed("chair#3", "chair", 3.0, 3.5),
            ],
            seed: 5,
        };
        let pose = CameraPose::new(Point2::new(0.5, 2.5), 0.0, &c);
        let set = generate_questions(&scene, &[pose], &[TaskType::ObjectCount, TaskType::RoomSize], 1, &c);
        let count = set.questions.iter().find(|q| q.task_type == TaskType::ObjectCount).unwrap();
        assert_eq!(count.ground_truth, Some(Answer::numeric(3.0, "")));
        let room = set.questions.iter().find(|q| q.task_type == TaskType::RoomSize).unwrap();
        assert_eq!(room.ground_truth.as_ref().and_then(Answer::as_number), Some(30.0));
    }

    #[test]
    fn appearance_order_follows_first_visibility() {
        let c = SimConstants::default();
        let scene = Scene {
            room: Room {
                width: 8.0,
                depth: 8.0,
                height: 3.0,
            },
            placed_objects: vec![
                placed("sofa#1", "sofa", 6.0, 4.0),  // ahead of the start pose
                placed("lamp#1", "lamp", 4.0, 7.0),  // visible after the first left turn
                placed("tv#1", "tv", 1.0, 4.0),      // visible only after turning around
            ],
            seed: 2,
        };
        let at = |h: f64| CameraPose::new(Point2::new(4.0, 4.0), h, &c);
        let half = std::f64::consts::FRAC_PI_2;
        let trajectory = vec![at(0.0), at(0.0), at(half), at(half), at(half), at(2.0 * half)];
        let set = generate_questions(&scene, &trajectory, &[TaskType::AppearanceOrder], 11, &c);
        let q = &set.questions[0];
        let letter = q.ground_truth.as_ref().unwrap().as_choice().unwrap();
        let index = (letter as u8 - b'A') as usize;
        assert_eq!(q.options[index], "sofa, lamp, tv");
    }

    #[test]
    fn generated_truths_match_the_oracle_and_are_deterministic() {
        let c = SimConstants::default();
        let config = SceneConfig {
            n_objects: 12,
            room: Room {
                width: 7.0,
                depth: 6.0,
                height: 3.0,
            },
            ..SceneConfig::default()
        };
        for seed in 0..10 {
            let scene = generate_scene(seed, &config).unwrap();
            let trajectory = generate_trajectory(&scene, seed, 16, &c).unwrap();
            let a = generate_questions(&scene, &trajectory, &TaskType::ALL, seed, &c);
            let b = generate_questions(&scene, &trajectory, &TaskType::ALL, seed, &c);
            assert_eq!(a, b);
            for q in &a.questions {
                q.validate().unwrap();
                assert_eq!(q.ground_truth.clone().unwrap(), oracle::oracle_answer(&scene, &trajectory, q, &c).unwrap());
            }
            let covered: BTreeSet<TaskType> = a.questions.iter().map(|q| q.task_type).collect();
            let skipped: BTreeSet<TaskType> = a.skipped.iter().map(|s| s.task_type).collect();
            assert_eq!(covered.len() + skipped.len(), 8);
        }
    }
}
