use super::{wrap_angle, CameraPose, PlacedObject, Scene, SimConstants};
use crate::scene_graph::{FrameObservation, ObjectNode, Predicate, SpatialRelation};

struct Seen<'a> {
    object: &'a PlacedObject,
    bearing: f64,
    depth: f64,
}

/// Structured observation of one frame.
///
/// An object is visible when its center is within range and at most `fov/2`
/// off the heading; there is no occlusion. Pairwise relations are
/// view-relative: larger bearing is `left-of`, smaller depth along the view
/// axis is `in-front-of`, centers within the near threshold are `near`, and
/// of two overlapping footprints the taller box is `above`.
pub fn observe(scene: &Scene, pose: &CameraPose, frame_index: usize, constants: &SimConstants) -> FrameObservation {
    let (sin, cos) = pose.heading.sin_cos();
    let mut seen: Vec<Seen<'_>> = scene
        .placed_objects
        .iter()
        .filter_map(|object| {
            let dx = object.center.x - pose.position.x;
            let dy = object.center.y - pose.position.y;
            let distance = dx.hypot(dy);
            if distance > pose.range || distance == 0.0 {
                return None;
            }
            let bearing = wrap_angle(dy.atan2(dx) - pose.heading);
            (bearing.abs() <= pose.fov / 2.0).then_some(Seen {
                object,
                bearing,
                depth: dx * cos + dy * sin,
            })
        })
        .collect();
    seen.sort_by(|a, b| a.object.id.cmp(&b.object.id));

    let mut relations = Vec::new();
    for (i, a) in seen.iter().enumerate() {
        for b in &seen[i + 1..] {
            let (ia, ib) = (a.object.id.as_str(), b.object.id.as_str());
            let mut push = |s: &str, p: Predicate, o: &str| {
                relations.push(SpatialRelation::intra(s, p, o, frame_index).expect("distinct ids"));
            };
            if a.bearing > b.bearing {
                push(ia, Predicate::LeftOf, ib);
            } else if b.bearing > a.bearing {
                push(ib, Predicate::LeftOf, ia);
            }
            if a.depth < b.depth {
                push(ia, Predicate::InFrontOf, ib);
            } else if b.depth < a.depth {
                push(ib, Predicate::InFrontOf, ia);
            }
            if a.object.center.distance(b.object.center) <= constants.near_threshold {
                push(ia, Predicate::Near, ib);
            }
            if a.object.bounds().overlaps(&b.object.bounds()) {
                if a.object.height > b.object.height {
                    push(ia, Predicate::Above, ib);
                } else if b.object.height > a.object.height {
                    push(ib, Predicate::Above, ia);
                }
            }
        }
    }

    let objects = seen
        .iter()
        .map(|s| ObjectNode::observed(&s.object.id, &s.object.category, s.object.attributes.iter().cloned(), frame_index))
        .collect();
    let mut observation = FrameObservation {
        frame_index,
        objects,
        relations,
        description: String::new(),
    };
    observation.description = observation.describe();
    observation
}
