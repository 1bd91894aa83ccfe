//! Per-frame observations and the global scene graph they merge into.
//!
//! A [`FrameObservation`] is the local relational graph of one frame. A
//! sequence of observations plus the [`ViewpointTransition`]s between them
//! merges into a [`GlobalSceneGraph`]: the union of resolved objects, every
//! intra-frame relation, and the ordered transition chain. Objects seen in
//! several frames become shared anchor nodes, which is what links the
//! relation sets of different frames together.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("frame indices are not contiguous: expected frame {expected}, found {found}")]
    NonContiguousFrames { expected: usize, found: usize },
    #[error("{frames} frames require {expected} transitions, got {got}")]
    TransitionCount {
        frames: usize,
        expected: usize,
        got: usize,
    },
    #[error("transition {index} is invalid: {reason}")]
    InvalidTransition { index: usize, reason: String },
    #[error("relation in frame {frame} references unknown object `{id}`")]
    UnknownRelationEndpoint { frame: usize, id: String },
    #[error("relation endpoint `{0}` is not an object of the graph")]
    DanglingRelation(String),
    #[error("relation relates `{0}` to itself")]
    SelfRelation(String),
    #[error("object `{id}` listed twice in frame {frame}")]
    DuplicateObject { id: String, frame: usize },
    #[error("object `{id}` observed with conflicting category or attributes")]
    ConflictingIdentity { id: String },
    #[error("object `{id}` is malformed: {reason}")]
    MalformedObject { id: String, reason: String },
    #[error("unknown object `{0}`")]
    UnknownObject(String),
}

/// Closed predicate vocabulary for spatial relations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Predicate {
    LeftOf,
    RightOf,
    InFrontOf,
    Behind,
    Above,
    Below,
    Near,
    FarFrom,
    On,
    Inside,
}

impl Predicate {
    pub const ALL: [Predicate; 10] = [
        Predicate::LeftOf,
        Predicate::RightOf,
        Predicate::InFrontOf,
        Predicate::Behind,
        Predicate::Above,
        Predicate::Below,
        Predicate::Near,
        Predicate::FarFrom,
        Predicate::On,
        Predicate::Inside,
    ];

    /// The predicate that holds with subject and object swapped.
    ///
    /// `on` and `inside` have no exact converse in the vocabulary; they map
    /// to the closest statement that is still true (`below`, `near`).
    pub fn inverse(self) -> Predicate {
        match self {
            Predicate::LeftOf => Predicate::RightOf,
            Predicate::RightOf => Predicate::LeftOf,
            Predicate::InFrontOf => Predicate::Behind,
            Predicate::Behind => Predicate::InFrontOf,
            Predicate::Above => Predicate::Below,
            Predicate::Below => Predicate::Above,
            Predicate::Near => Predicate::Near,
            Predicate::FarFrom => Predicate::FarFrom,
            Predicate::On => Predicate::Below,
            Predicate::Inside => Predicate::Near,
        }
    }

    pub fn phrase(self) -> &'static str {
        match self {
            Predicate::LeftOf => "to the left of",
            Predicate::RightOf => "to the right of",
            Predicate::InFrontOf => "in front of",
            Predicate::Behind => "behind",
            Predicate::Above => "above",
            Predicate::Below => "below",
            Predicate::Near => "near",
            Predicate::FarFrom => "far from",
            Predicate::On => "on",
            Predicate::Inside => "inside",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Predicate::LeftOf => "left-of",
            Predicate::RightOf => "right-of",
            Predicate::InFrontOf => "in-front-of",
            Predicate::Behind => "behind",
            Predicate::Above => "above",
            Predicate::Below => "below",
            Predicate::Near => "near",
            Predicate::FarFrom => "far-from",
            Predicate::On => "on",
            Predicate::Inside => "inside",
        }
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectNode {
    pub id: String,
    pub category: String,
    pub attributes: BTreeSet<String>,
    pub first_frame: usize,
    pub frames: BTreeSet<usize>,
}

impl ObjectNode {
    /// A node as seen in a single frame.
    pub fn observed<I, S>(id: &str, category: &str, attributes: I, frame: usize) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ObjectNode {
            id: id.to_string(),
            category: category.to_string(),
            attributes: attributes.into_iter().map(Into::into).collect(),
            first_frame: frame,
            frames: BTreeSet::from([frame]),
        }
    }

    /// Indefinite full mention, e.g. `a wooden table (table#1)`.
    pub fn full_mention(&self) -> String {
        full_mention(&self.category, &self.attributes, &self.id)
    }

    /// Definite short reference, e.g. `the table (table#1)`.
    pub fn short_reference(&self) -> String {
        short_reference(&self.category, &self.id)
    }

    fn identity_key(&self) -> (String, BTreeSet<String>) {
        (self.category.clone(), self.attributes.clone())
    }

    fn check(&self) -> Result<(), GraphError> {
        let malformed = |reason: &str| GraphError::MalformedObject {
            id: self.id.clone(),
            reason: reason.to_string(),
        };
        if self.id.is_empty() {
            return Err(malformed("empty id"));
        }
        match self.frames.first() {
            None => Err(malformed("frames is empty")),
            Some(&first) if first != self.first_frame => Err(malformed("first_frame != min(frames)")),
            Some(_) => Ok(()),
        }
    }
}

fn full_mention(category: &str, attributes: &BTreeSet<String>, id: &str) -> String {
    let mut words: Vec<&str> = attributes.iter().map(String::as_str).collect();
    words.push(category);
    let phrase = words.join(" ");
    let article = match phrase.chars().next() {
        Some(c) if "aeiouAEIOU".contains(c) => "an",
        _ => "a",
    };
    format!("{article} {phrase} ({id})")
}

fn short_reference(category: &str, id: &str) -> String {
    format!("the {category} ({id})")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Provenance {
    IntraFrame { frame: usize },
    InterFrame,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpatialRelation {
    pub subject_id: String,
    pub predicate: Predicate,
    pub object_id: String,
    pub provenance: Provenance,
}

impl SpatialRelation {
    pub fn new(
        subject_id: &str,
        predicate: Predicate,
        object_id: &str,
        provenance: Provenance,
    ) -> Result<Self, GraphError> {
        if subject_id == object_id {
            return Err(GraphError::SelfRelation(subject_id.to_string()));
        }
        Ok(SpatialRelation {
            subject_id: subject_id.to_string(),
            predicate,
            object_id: object_id.to_string(),
            provenance,
        })
    }

    pub fn intra(subject_id: &str, predicate: Predicate, object_id: &str, frame: usize) -> Result<Self, GraphError> {
        Self::new(subject_id, predicate, object_id, Provenance::IntraFrame { frame })
    }

    /// The same fact stated from the object's side.
    pub fn inverted(&self) -> SpatialRelation {
        SpatialRelation {
            subject_id: self.object_id.clone(),
            predicate: self.predicate.inverse(),
            object_id: self.subject_id.clone(),
            provenance: self.provenance,
        }
    }

    /// Restates the relation with `id` as subject; `None` if `id` is not an endpoint.
    pub fn oriented_from(&self, id: &str) -> Option<SpatialRelation> {
        if self.subject_id == id {
            Some(self.clone())
        } else if self.object_id == id {
            Some(self.inverted())
        } else {
            None
        }
    }

    pub fn touches(&self, a: &str, b: &str) -> bool {
        (self.subject_id == a && self.object_id == b) || (self.subject_id == b && self.object_id == a)
    }

    pub fn statement(&self) -> String {
        format!("{} {} {}", self.subject_id, self.predicate, self.object_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Translation {
    None,
    Forward,
    Backward,
    Left,
    Right,
    ForwardLeft,
    ForwardRight,
    BackwardLeft,
    BackwardRight,
}

impl Translation {
    pub const ALL: [Translation; 9] = [
        Translation::None,
        Translation::Forward,
        Translation::ForwardLeft,
        Translation::Left,
        Translation::BackwardLeft,
        Translation::Backward,
        Translation::BackwardRight,
        Translation::Right,
        Translation::ForwardRight,
    ];

    /// Direction of travel in the body frame, counter-clockwise from straight
    /// ahead, in multiples of 45 degrees. `None` for a stationary step.
    pub fn octant(self) -> Option<i32> {
        match self {
            Translation::None => None,
            Translation::Forward => Some(0),
            Translation::ForwardLeft => Some(1),
            Translation::Left => Some(2),
            Translation::BackwardLeft => Some(3),
            Translation::Backward => Some(4),
            Translation::BackwardRight => Some(-3),
            Translation::Right => Some(-2),
            Translation::ForwardRight => Some(-1),
        }
    }

    pub fn from_octant(octant: i32) -> Translation {
        match octant.rem_euclid(8) {
            0 => Translation::Forward,
            1 => Translation::ForwardLeft,
            2 => Translation::Left,
            3 => Translation::BackwardLeft,
            4 => Translation::Backward,
            5 => Translation::BackwardRight,
            6 => Translation::Right,
            _ => Translation::ForwardRight,
        }
    }

    fn phrase(self) -> &'static str {
        match self {
            Translation::None => "",
            Translation::Forward => "move forward",
            Translation::Backward => "step backward",
            Translation::Left => "step to the left",
            Translation::Right => "step to the right",
            Translation::ForwardLeft => "move forward and to the left",
            Translation::ForwardRight => "move forward and to the right",
            Translation::BackwardLeft => "step backward and to the left",
            Translation::BackwardRight => "step backward and to the right",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rotation {
    None,
    TurnLeft,
    TurnRight,
    TurnAround,
}

impl Rotation {
    pub const ALL: [Rotation; 4] = [Rotation::None, Rotation::TurnLeft, Rotation::TurnRight, Rotation::TurnAround];

    /// Heading change in quarter turns, counter-clockwise positive.
    pub fn quarter_turns(self) -> i32 {
        match self {
            Rotation::None => 0,
            Rotation::TurnLeft => 1,
            Rotation::TurnRight => -1,
            Rotation::TurnAround => 2,
        }
    }

    fn phrase(self) -> &'static str {
        match self {
            Rotation::None => "",
            Rotation::TurnLeft => "turn left",
            Rotation::TurnRight => "turn right",
            Rotation::TurnAround => "turn around",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewpointTransition {
    pub from_frame: usize,
    pub to_frame: usize,
    pub translation: Translation,
    pub rotation: Rotation,
    pub narrative: String,
}

impl ViewpointTransition {
    /// Transition out of `from_frame` with a templated first-person narrative.
    pub fn new(from_frame: usize, translation: Translation, rotation: Rotation) -> Self {
        ViewpointTransition {
            from_frame,
            to_frame: from_frame + 1,
            translation,
            rotation,
            narrative: narrate(translation, rotation),
        }
    }

    pub fn is_stay(&self) -> bool {
        self.translation == Translation::None && self.rotation == Rotation::None
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.to_frame != self.from_frame + 1 {
            return Err(format!(
                "to_frame {} does not follow from_frame {}",
                self.to_frame, self.from_frame
            ));
        }
        if !self.is_stay() && self.narrative.trim().is_empty() {
            return Err("a moving transition needs a narrative".to_string());
        }
        Ok(())
    }
}

/// First-person sentence for a discrete move, e.g. "I move forward and turn right."
pub fn narrate(translation: Translation, rotation: Rotation) -> String {
    match (translation.phrase(), rotation.phrase()) {
        ("", "") => "I stay where I am.".to_string(),
        (t, "") => format!("I {t}."),
        ("", r) => format!("I {r}."),
        (t, r) => format!("I {t} and {r}."),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameObservation {
    pub frame_index: usize,
    pub objects: Vec<ObjectNode>,
    pub relations: Vec<SpatialRelation>,
    #[serde(default)]
    pub description: String,
}

impl FrameObservation {
    pub fn validate(&self) -> Result<(), GraphError> {
        let mut ids = BTreeSet::new();
        for object in &self.objects {
            object.check()?;
            if !ids.insert(object.id.as_str()) {
                return Err(GraphError::DuplicateObject {
                    id: object.id.clone(),
                    frame: self.frame_index,
                });
            }
        }
        for relation in &self.relations {
            if relation.subject_id == relation.object_id {
                return Err(GraphError::SelfRelation(relation.subject_id.clone()));
            }
            for id in [&relation.subject_id, &relation.object_id] {
                if !ids.contains(id.as_str()) {
                    return Err(GraphError::UnknownRelationEndpoint {
                        frame: self.frame_index,
                        id: id.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Canonical full description: every object by full mention, relations
    /// by short reference.
    pub fn describe(&self) -> String {
        if self.objects.is_empty() {
            return "I see nothing of note.".to_string();
        }
        let mentions: Vec<String> = self.objects.iter().map(ObjectNode::full_mention).collect();
        let mut text = format!("I see {}.", join_list(&mentions));
        let by_id: BTreeMap<&str, &ObjectNode> = self.objects.iter().map(|o| (o.id.as_str(), o)).collect();
        for relation in &self.relations {
            let (Some(subject), Some(object)) =
                (by_id.get(relation.subject_id.as_str()), by_id.get(relation.object_id.as_str()))
            else {
                continue;
            };
            let sentence = format!(
                " {} is {} {}.",
                subject.short_reference(),
                relation.predicate.phrase(),
                object.short_reference()
            );
            text.push_str(&capitalize_after_space(&sentence));
        }
        text
    }
}

fn join_list(items: &[String]) -> String {
    match items {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {}", init.join(", "), last),
    }
}

fn capitalize_after_space(sentence: &str) -> String {
    let mut out = String::with_capacity(sentence.len());
    let mut done = false;
    for c in sentence.chars() {
        if !done && c.is_alphabetic() {
            out.extend(c.to_uppercase());
            done = true;
        } else {
            out.push(c);
        }
    }
    out
}

/// How observed objects are identified across frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MergeMode {
    /// Observation ids are ground truth (simulator mode).
    #[default]
    PreserveIds,
    /// Objects with equal category and attribute set are one node; same-frame
    /// duplicates are split and matched to existing nodes in listing order.
    ResolveByDescription,
}

#[derive(Serialize, Deserialize)]
struct GraphRecord {
    objects: Vec<ObjectNode>,
    relations: Vec<SpatialRelation>,
    transitions: Vec<ViewpointTransition>,
    frame_count: usize,
}

/// The merged scene: resolved objects, relations, and viewpoint transitions.
///
/// Immutable once built; the adjacency index is derived at construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GraphRecord", into = "GraphRecord")]
pub struct GlobalSceneGraph {
    objects: BTreeMap<String, ObjectNode>,
    relations: Vec<SpatialRelation>,
    transitions: Vec<ViewpointTransition>,
    frame_count: usize,
    adjacency: BTreeMap<String, BTreeSet<String>>,
}

impl TryFrom<GraphRecord> for GlobalSceneGraph {
    type Error = GraphError;

    fn try_from(record: GraphRecord) -> Result<Self, GraphError> {
        GlobalSceneGraph::new(record.objects, record.relations, record.transitions, record.frame_count)
    }
}

impl From<GlobalSceneGraph> for GraphRecord {
    fn from(graph: GlobalSceneGraph) -> Self {
        GraphRecord {
            objects: graph.objects.into_values().collect(),
            relations: graph.relations,
            transitions: graph.transitions,
            frame_count: graph.frame_count,
        }
    }
}

impl GlobalSceneGraph {
    pub fn new(
        objects: Vec<ObjectNode>,
        relations: Vec<SpatialRelation>,
        transitions: Vec<ViewpointTransition>,
        frame_count: usize,
    ) -> Result<Self, GraphError> {
        let mut by_id = BTreeMap::new();
        for object in objects {
            object.check()?;
            if let Some(&last) = object.frames.last() {
                if last >= frame_count {
                    return Err(GraphError::MalformedObject {
                        id: object.id.clone(),
                        reason: format!("frame {last} outside [0, {frame_count})"),
                    });
                }
            }
            let id = object.id.clone();
            if by_id.insert(id.clone(), object).is_some() {
                return Err(GraphError::DuplicateObject { id, frame: 0 });
            }
        }
        let expected = frame_count.saturating_sub(1);
        if transitions.len() != expected {
            return Err(GraphError::TransitionCount {
                frames: frame_count,
                expected,
                got: transitions.len(),
            });
        }
        for (index, transition) in transitions.iter().enumerate() {
            if transition.from_frame != index {
                return Err(GraphError::InvalidTransition {
                    index,
                    reason: format!("from_frame {} out of sequence", transition.from_frame),
                });
            }
            transition
                .validate()
                .map_err(|reason| GraphError::InvalidTransition { index, reason })?;
        }
        let mut adjacency: BTreeMap<String, BTreeSet<String>> =
            by_id.keys().map(|id| (id.clone(), BTreeSet::new())).collect();
        for relation in &relations {
            if relation.subject_id == relation.object_id {
                return Err(GraphError::SelfRelation(relation.subject_id.clone()));
            }
            for id in [&relation.subject_id, &relation.object_id] {
                if !by_id.contains_key(id) {
                    return Err(GraphError::DanglingRelation(id.clone()));
                }
            }
            adjacency
                .get_mut(&relation.subject_id)
                .expect("endpoint checked")
                .insert(relation.object_id.clone());
            adjacency
                .get_mut(&relation.object_id)
                .expect("endpoint checked")
                .insert(relation.subject_id.clone());
        }
        Ok(GlobalSceneGraph {
            objects: by_id,
            relations,
            transitions,
            frame_count,
            adjacency,
        })
    }

    pub fn empty() -> Self {
        GlobalSceneGraph {
            objects: BTreeMap::new(),
            relations: Vec::new(),
            transitions: Vec::new(),
            frame_count: 0,
            adjacency: BTreeMap::new(),
        }
    }

    pub fn objects(&self) -> &BTreeMap<String, ObjectNode> {
        &self.objects
    }

    pub fn object(&self, id: &str) -> Result<&ObjectNode, GraphError> {
        self.objects.get(id).ok_or_else(|| GraphError::UnknownObject(id.to_string()))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.objects.contains_key(id)
    }

    pub fn relations(&self) -> &[SpatialRelation] {
        &self.relations
    }

    pub fn transitions(&self) -> &[ViewpointTransition] {
        &self.transitions
    }

    pub fn frame_count(&self) -> usize {
        self.frame_count
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    /// Objects sharing at least one stored relation with `id`, in either direction.
    pub fn neighborhood(&self, id: &str) -> Result<&BTreeSet<String>, GraphError> {
        self.adjacency.get(id).ok_or_else(|| GraphError::UnknownObject(id.to_string()))
    }

    /// All stored relations between `a` and `b`, each stated with `a` as subject.
    pub fn relations_between(&self, a: &str, b: &str) -> Result<Vec<SpatialRelation>, GraphError> {
        self.object(a)?;
        self.object(b)?;
        Ok(self
            .relations
            .iter()
            .filter(|r| r.touches(a, b))
            .filter_map(|r| r.oriented_from(a))
            .collect())
    }

    /// Splits the graph back into per-frame observations and its transitions.
    /// Only intra-frame relations have a frame to return to.
    pub fn decompose(&self) -> (Vec<FrameObservation>, Vec<ViewpointTransition>) {
        let mut frames: Vec<FrameObservation> = (0..self.frame_count)
            .map(|frame_index| FrameObservation {
                frame_index,
                objects: Vec::new(),
                relations: Vec::new(),
                description: String::new(),
            })
            .collect();
        for node in self.objects.values() {
            for &frame in &node.frames {
                let mut local = node.clone();
                local.first_frame = frame;
                local.frames = BTreeSet::from([frame]);
                frames[frame].objects.push(local);
            }
        }
        for relation in &self.relations {
            if let Provenance::IntraFrame { frame } = relation.provenance {
                if let Some(obs) = frames.get_mut(frame) {
                    obs.relations.push(relation.clone());
                }
            }
        }
        (frames, self.transitions.clone())
    }
}

/// Maps each frame's local object ids to global node ids.
pub fn resolve_identities(
    observations: &[FrameObservation],
    mode: MergeMode,
) -> Result<Vec<BTreeMap<String, String>>, GraphError> {
    let mut maps = Vec::with_capacity(observations.len());
    match mode {
        MergeMode::PreserveIds => {
            let mut seen: BTreeMap<&str, (String, BTreeSet<String>)> = BTreeMap::new();
            for obs in observations {
                let mut map = BTreeMap::new();
                for object in &obs.objects {
                    let key = object.identity_key();
                    match seen.get(object.id.as_str()) {
                        Some(previous) if *previous != key => {
                            return Err(GraphError::ConflictingIdentity { id: object.id.clone() })
                        }
                        Some(_) => {}
                        None => {
                            seen.insert(object.id.as_str(), key);
                        }
                    }
                    map.insert(object.id.clone(), object.id.clone());
                }
                maps.push(map);
            }
        }
        MergeMode::ResolveByDescription => {
            let mut nodes_by_key: BTreeMap<(String, BTreeSet<String>), Vec<String>> = BTreeMap::new();
            let mut per_category: BTreeMap<String, usize> = BTreeMap::new();
            for obs in observations {
                let mut map = BTreeMap::new();
                let mut used: BTreeMap<(String, BTreeSet<String>), usize> = BTreeMap::new();
                for object in &obs.objects {
                    let key = object.identity_key();
                    let slot = used.entry(key.clone()).or_insert(0);
                    let nodes = nodes_by_key.entry(key).or_default();
                    if *slot == nodes.len() {
                        let counter = per_category.entry(object.category.clone()).or_insert(0);
                        *counter += 1;
                        nodes.push(format!("{}#{}", object.category, counter));
                    }
                    map.insert(object.id.clone(), nodes[*slot].clone());
                    *slot += 1;
                }
                maps.push(map);
            }
        }
    }
    Ok(maps)
}

/// Merges ordered frame observations and their transitions into one graph.
pub fn merge_observations(
    observations: &[FrameObservation],
    transitions: &[ViewpointTransition],
    mode: MergeMode,
) -> Result<GlobalSceneGraph, GraphError> {
    for (expected, obs) in observations.iter().enumerate() {
        if obs.frame_index != expected {
            return Err(GraphError::NonContiguousFrames {
                expected,
                found: obs.frame_index,
            });
        }
        obs.validate()?;
    }
    let expected = observations.len().saturating_sub(1);
    if transitions.len() != expected {
        return Err(GraphError::TransitionCount {
            frames: observations.len(),
            expected,
            got: transitions.len(),
        });
    }

    let maps = resolve_identities(observations, mode)?;
    let mut objects: BTreeMap<String, ObjectNode> = BTreeMap::new();
    let mut relations = Vec::new();
    for (obs, map) in observations.iter().zip(&maps) {
        let frame = obs.frame_index;
        for object in &obs.objects {
            let global = &map[&object.id];
            objects
                .entry(global.clone())
                .and_modify(|node| {
                    node.frames.insert(frame);
                })
                .or_insert_with(|| ObjectNode {
                    id: global.clone(),
                    category: object.category.clone(),
                    attributes: object.attributes.clone(),
                    first_frame: frame,
                    frames: BTreeSet::from([frame]),
                });
        }
        for relation in &obs.relations {
            relations.push(SpatialRelation {
                subject_id: map[&relation.subject_id].clone(),
                predicate: relation.predicate,
                object_id: map[&relation.object_id].clone(),
                provenance: Provenance::IntraFrame { frame },
            });
        }
    }
    GlobalSceneGraph::new(
        objects.into_values().collect(),
        relations,
        transitions.to_vec(),
        observations.len(),
    )
}

/// Per-frame descriptions in which objects introduced in an earlier frame are
/// referred to by stable id instead of being described again.
///
/// Empty descriptions are first filled with [`FrameObservation::describe`].
/// Full mentions and short references of local ids are rewritten to global
/// ids; a new object keeps its first full mention, later ones are shortened.
pub fn normalize_narrative(
    graph: &GlobalSceneGraph,
    observations: &[FrameObservation],
    mode: MergeMode,
) -> Result<Vec<String>, GraphError> {
    let maps = resolve_identities(observations, mode)?;
    let mut out = Vec::with_capacity(observations.len());
    for (obs, map) in observations.iter().zip(&maps) {
        let text = if obs.description.trim().is_empty() {
            obs.describe()
        } else {
            obs.description.clone()
        };
        let mut rules = Vec::new();
        for object in &obs.objects {
            let node = graph.object(&map[&object.id])?;
            let is_new = node.first_frame == obs.frame_index;
            let full = if is_new { node.full_mention() } else { node.short_reference() };
            push_rewrites(&mut rules, object.full_mention(), full, node.short_reference());
            push_rewrites(&mut rules, object.short_reference(), node.short_reference(), node.short_reference());
        }
        out.push(rewrite_all(&text, &rules));
    }
    Ok(out)
}

struct Rewrite {
    group: usize,
    pattern: String,
    first: String,
    rest: String,
}

fn capitalized(text: &str) -> String {
    let mut chars = text.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Adds a rewrite rule plus its sentence-initial variant; both share one
/// occurrence counter.
fn push_rewrites(rules: &mut Vec<Rewrite>, pattern: String, first: String, rest: String) {
    let group = rules.last().map_or(0, |r: &Rewrite| r.group + 1);
    rules.push(Rewrite {
        group,
        pattern: capitalized(&pattern),
        first: capitalized(&first),
        rest: capitalized(&rest),
    });
    rules.push(Rewrite { group, pattern, first, rest });
}

/// Simultaneous left-to-right replacement; longest pattern wins at each position.
fn rewrite_all(text: &str, rules: &[Rewrite]) -> String {
    let mut order: Vec<usize> = (0..rules.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(rules[i].pattern.len()));
    let mut hits = vec![0usize; rules.last().map_or(0, |r| r.group + 1)];
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    'scan: while let Some(c) = rest.chars().next() {
        for &i in &order {
            let rule = &rules[i];
            if !rule.pattern.is_empty() && rest.starts_with(rule.pattern.as_str()) {
                out.push_str(if hits[rule.group] == 0 { &rule.first } else { &rule.rest });
                hits[rule.group] += 1;
                rest = &rest[rule.pattern.len()..];
                continue 'scan;
            }
        }
        out.push(c);
        rest = &rest[c.len_utf8()..];
    }
    out
}
