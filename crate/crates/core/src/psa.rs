//! Progressive spatial analysis over a merged scene graph.
//!
//! Targets named in a question are resolved to graph nodes, the candidate
//! set grows through neighborhoods for a fixed number of rounds, and the
//! relations and relational paths among candidates form the task context.
//! [`answer_from_graph`] then answers the question deterministically; metric
//! families additionally need [`SceneAnnotations`].

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::question::{Answer, ObjectRef, QuestionVariant, StructuredQuestion, TaskType, OPTION_LETTERS};
use crate::scene_graph::{GlobalSceneGraph, GraphError, SpatialRelation};
use crate::sim::oracle::{direction_label, order_label, relative_angle};
use crate::sim::route::{plan_route, OccupancyGrid};
use crate::sim::{Point2, Rect, Room, Scene};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PsaError {
    #[error("the scene graph is empty")]
    EmptyGraph,
    #[error("target not found: no object matches `{0}`")]
    TargetNotFound(String),
    #[error("ambiguous target `{reference}`: matches {}", candidates.join(", "))]
    AmbiguousTarget { reference: String, candidates: Vec<String> },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("`{0}` is not in the candidate set")]
    OutsideCandidates(String),
    #[error("invalid analysis config: {0}")]
    InvalidConfig(String),
    #[error("{0} questions cannot be answered without scene annotations")]
    UnsupportedWithoutAnnotations(TaskType),
    #[error("no annotation for object `{0}`")]
    MissingAnnotation(String),
    #[error("question {id}: {reason}")]
    Unanswerable { id: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsaConfig {
    pub rounds: usize,
    pub max_len: usize,
    /// Paths kept per ordered target pair, shortest first.
    pub max_paths_per_pair: usize,
}

impl Default for PsaConfig {
    fn default() -> Self {
        PsaConfig {
            rounds: 2,
            max_len: 4,
            max_paths_per_pair: 16,
        }
    }
}

impl PsaConfig {
    pub fn validate(&self) -> Result<(), PsaError> {
        if self.max_len == 0 {
            return Err(PsaError::InvalidConfig("max_len must be at least 1".into()));
        }
        if self.max_paths_per_pair == 0 {
            return Err(PsaError::InvalidConfig("max_paths_per_pair must be at least 1".into()));
        }
        Ok(())
    }
}

/// Alternating object/relation chain: `objects[i] -relations[i]-> objects[i + 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationPath {
    pub objects: Vec<String>,
    pub relations: Vec<SpatialRelation>,
}

impl RelationPath {
    pub fn len(&self) -> usize {
        self.relations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relations.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskContext {
    pub targets: Vec<String>,
    pub candidates: BTreeSet<String>,
    pub relevant_relations: Vec<SpatialRelation>,
    pub paths: Vec<RelationPath>,
}

impl TaskContext {
    /// Candidates that are not targets: the bridging objects.
    pub fn implicit_objects(&self) -> BTreeSet<String> {
        let targets: BTreeSet<&String> = self.targets.iter().collect();
        self.candidates.iter().filter(|c| !targets.contains(c)).cloned().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectAnnotation {
    pub center: Point2,
    pub footprint: (f64, f64),
    pub height: f64,
}

/// Metric facts about objects that a qualitative graph cannot carry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneAnnotations {
    pub room: Room,
    pub objects: BTreeMap<String, ObjectAnnotation>,
    #[serde(default = "default_grid_cell")]
    pub grid_cell: f64,
}

fn default_grid_cell() -> f64 {
    0.5
}

impl SceneAnnotations {
    pub fn from_scene(scene: &Scene) -> Self {
        SceneAnnotations {
            room: scene.room,
            objects: scene
                .placed_objects
                .iter()
                .map(|o| {
                    (
                        o.id.clone(),
                        ObjectAnnotation {
                            center: o.center,
                            footprint: o.footprint,
                            height: o.height,
                        },
                    )
                })
                .collect(),
            grid_cell: default_grid_cell(),
        }
    }

    fn get(&self, id: &str) -> Result<&ObjectAnnotation, PsaError> {
        self.objects.get(id).ok_or_else(|| PsaError::MissingAnnotation(id.to_string()))
    }
}

fn matches<'g>(graph: &'g GlobalSceneGraph, reference: &ObjectRef) -> Vec<&'g String> {
    graph
        .objects()
        .iter()
        .filter(|(_, node)| reference.matches(node))
        .map(|(id, _)| id)
        .collect()
}

/// Graph ids for the question's explicit targets, in order.
///
/// Each reference must match exactly one node. Counting questions are the
/// exception: their reference names a class, so every match is returned.
pub fn resolve_targets(graph: &GlobalSceneGraph, question: &StructuredQuestion) -> Result<Vec<String>, PsaError> {
    if graph.is_empty() {
        return Err(PsaError::EmptyGraph);
    }
    let mut out = Vec::new();
    for reference in &question.explicit_targets {
        let found = matches(graph, reference);
        match found.as_slice() {
            [] => return Err(PsaError::TargetNotFound(reference.display_name())),
            [one] => out.push((*one).clone()),
            many if question.task_type == TaskType::ObjectCount => out.extend(many.iter().map(|s| (*s).clone())),
            many => {
                return Err(PsaError::AmbiguousTarget {
                    reference: reference.display_name(),
                    candidates: many.iter().map(|s| (*s).clone()).collect(),
                })
            }
        }
    }
    Ok(out)
}

/// Targets plus everything reachable within `rounds` neighborhood hops.
pub fn expand_candidates(graph: &GlobalSceneGraph, targets: &[String], rounds: usize) -> Result<BTreeSet<String>, PsaError> {
    let mut set = BTreeSet::new();
    for t in targets {
        graph.object(t)?;
        set.insert(t.clone());
    }
    let mut frontier: Vec<String> = set.iter().cloned().collect();
    for _ in 0..rounds {
        let mut next = Vec::new();
        for id in &frontier {
            for n in graph.neighborhood(id)? {
                if set.insert(n.clone()) {
                    next.push(n.clone());
                }
            }
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    Ok(set)
}

fn vertex_paths<'g>(
    graph: &'g GlobalSceneGraph,
    src: &'g str,
    dst: &str,
    candidates: &BTreeSet<String>,
    max_len: usize,
) -> Result<Vec<Vec<&'g str>>, PsaError> {
    let mut found = Vec::new();
    let mut stack: Vec<&'g str> = vec![src];
    fn walk<'g>(
        graph: &'g GlobalSceneGraph,
        dst: &str,
        candidates: &BTreeSet<String>,
        max_len: usize,
        stack: &mut Vec<&'g str>,
        found: &mut Vec<Vec<&'g str>>,
    ) -> Result<(), PsaError> {
        let here = *stack.last().expect("non-empty");
        for next in graph.neighborhood(here)? {
            if !candidates.contains(next) || stack.contains(&next.as_str()) {
                continue;
            }
            stack.push(next);
            if next == dst {
                found.push(stack.clone());
            } else if stack.len() <= max_len {
                walk(graph, dst, candidates, max_len, stack, found)?;
            }
            stack.pop();
        }
        Ok(())
    }
    walk(graph, dst, candidates, max_len, &mut stack, &mut found)?;
    found.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    Ok(found)
}

fn materialize(graph: &GlobalSceneGraph, vertices: &[&str]) -> Result<RelationPath, PsaError> {
    let mut relations = Vec::with_capacity(vertices.len().saturating_sub(1));
    for pair in vertices.windows(2) {
        let mut between = graph.relations_between(pair[0], pair[1])?;
        between.sort_by_key(|r| r.predicate);
        relations.push(between.into_iter().next().expect("adjacent nodes share a relation"));
    }
    Ok(RelationPath {
        objects: vertices.iter().map(|s| s.to_string()).collect(),
        relations,
    })
}

fn check_endpoints(graph: &GlobalSceneGraph, ids: [&str; 2], candidates: &BTreeSet<String>) -> Result<(), PsaError> {
    for id in ids {
        graph.object(id)?;
        if !candidates.contains(id) {
            return Err(PsaError::OutsideCandidates(id.to_string()));
        }
    }
    Ok(())
}

/// Every simple path of at most `max_len` relations from `src` to `dst`
/// through candidates, shortest first, ties by vertex ids.
pub fn relation_paths(
    graph: &GlobalSceneGraph,
    src: &str,
    dst: &str,
    candidates: &BTreeSet<String>,
    max_len: usize,
) -> Result<Vec<RelationPath>, PsaError> {
    relation_paths_limited(graph, src, dst, candidates, max_len, usize::MAX)
}

fn relation_paths_limited(
    graph: &GlobalSceneGraph,
    src: &str,
    dst: &str,
    candidates: &BTreeSet<String>,
    max_len: usize,
    limit: usize,
) -> Result<Vec<RelationPath>, PsaError> {
    if max_len == 0 {
        return Err(PsaError::InvalidConfig("max_len must be at least 1".into()));
    }
    check_endpoints(graph, [src, dst], candidates)?;
    if src == dst {
        return Ok(vec![RelationPath {
            objects: vec![src.to_string()],
            relations: Vec::new(),
        }]);
    }
    let src = graph.objects().get_key_value(src).expect("checked").0.as_str();
    vertex_paths(graph, src, dst, candidates, max_len)?
        .iter()
        .take(limit)
        .map(|p| materialize(graph, p))
        .collect()
}

pub fn build_task_context(
    graph: &GlobalSceneGraph,
    question: &StructuredQuestion,
    config: &PsaConfig,
) -> Result<TaskContext, PsaError> {
    config.validate()?;
    let targets = resolve_targets(graph, question)?;
    let candidates = expand_candidates(graph, &targets, config.rounds)?;
    let relevant_relations = graph
        .relations()
        .iter()
        .filter(|r| candidates.contains(&r.subject_id) && candidates.contains(&r.object_id))
        .cloned()
        .collect();
    let mut paths = Vec::new();
    for a in &targets {
        for b in &targets {
            if a != b {
                paths.extend(relation_paths_limited(
                    graph,
                    a,
                    b,
                    &candidates,
                    config.max_len,
                    config.max_paths_per_pair,
                )?);
            }
        }
    }
    Ok(TaskContext {
        targets,
        candidates,
        relevant_relations,
        paths,
    })
}

fn unanswerable(question: &StructuredQuestion, reason: impl Into<String>) -> PsaError {
    PsaError::Unanswerable {
        id: question.id.clone(),
        reason: reason.into(),
    }
}

fn option_answer(question: &StructuredQuestion, text: &str) -> Result<Answer, PsaError> {
    question
        .option_letter(text)
        .map(Answer::Choice)
        .ok_or_else(|| unanswerable(question, format!("derived answer `{text}` is not an option")))
}

fn need<'a>(
    annotations: Option<&'a SceneAnnotations>,
    question: &StructuredQuestion,
) -> Result<&'a SceneAnnotations, PsaError> {
    annotations.ok_or(PsaError::UnsupportedWithoutAnnotations(question.task_type))
}

fn targets_at_least<'c>(context: &'c TaskContext, question: &StructuredQuestion, n: usize) -> Result<&'c [String], PsaError> {
    if context.targets.len() < n {
        return Err(unanswerable(question, format!("needs {n} targets, context has {}", context.targets.len())));
    }
    Ok(&context.targets)
}

/// Deterministic answer from the graph, plus annotations for metric families.
pub fn answer_from_graph(
    graph: &GlobalSceneGraph,
    context: &TaskContext,
    question: &StructuredQuestion,
    annotations: Option<&SceneAnnotations>,
) -> Result<Answer, PsaError> {
    match question.task_type {
        TaskType::ObjectCount => {
            let reference = question
                .explicit_targets
                .first()
                .ok_or_else(|| unanswerable(question, "count without a target"))?;
            Ok(Answer::numeric(matches(graph, reference).len() as f64, ""))
        }
        TaskType::AppearanceOrder => {
            let targets = targets_at_least(context, question, 2)?;
            if targets.len() != question.explicit_targets.len() {
                return Err(unanswerable(question, "targets do not align with references"));
            }
            let mut keyed = Vec::with_capacity(targets.len());
            for (id, reference) in targets.iter().zip(&question.explicit_targets) {
                keyed.push((graph.object(id)?.first_frame, id, reference.display_name()));
            }
            keyed.sort();
            let names: Vec<String> = keyed.into_iter().map(|(_, _, n)| n).collect();
            option_answer(question, &order_label(&names))
        }
        TaskType::RelativeDistance => {
            let ann = need(annotations, question)?;
            let targets = targets_at_least(context, question, 3)?;
            let anchor = ann.get(&targets[0])?.center;
            let farthest = question.variant == Some(QuestionVariant::Farthest);
            let mut scored = Vec::new();
            for (i, id) in targets[1..].iter().enumerate() {
                let d = anchor.distance(ann.get(id)?.center);
                scored.push((if farthest { -d } else { d }, id, i));
            }
            scored.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
            let index = scored[0].2;
            if index >= question.options.len() {
                return Err(unanswerable(question, "fewer options than candidates"));
            }
            Ok(Answer::Choice(OPTION_LETTERS[index]))
        }
        TaskType::RelativeDirection => {
            let ann = need(annotations, question)?;
            let t = targets_at_least(context, question, 3)?;
            let angle = relative_angle(ann.get(&t[0])?.center, ann.get(&t[1])?.center, ann.get(&t[2])?.center);
            let label = direction_label(angle, question.variant.unwrap_or(QuestionVariant::TwoWay));
            option_answer(question, label)
        }
        TaskType::RoutePlan => {
            let ann = need(annotations, question)?;
            let t = targets_at_least(context, question, 3)?;
            let obstacles: Vec<Rect> = ann
                .objects
                .iter()
                .filter(|(id, _)| **id != t[0] && **id != t[2])
                .map(|(_, a)| Rect::centered(a.center, a.footprint))
                .collect();
            let grid = OccupancyGrid::new(&ann.room, &obstacles, ann.grid_cell);
            let route = plan_route(&grid, ann.get(&t[0])?.center, ann.get(&t[1])?.center, ann.get(&t[2])?.center)
                .ok_or_else(|| unanswerable(question, "goal unreachable"))?;
            option_answer(question, &route.text())
        }
        TaskType::AbsoluteDistance => {
            let ann = need(annotations, question)?;
            let t = targets_at_least(context, question, 2)?;
            Ok(Answer::numeric(ann.get(&t[0])?.center.distance(ann.get(&t[1])?.center), "m"))
        }
        TaskType::ObjectSize => {
            let ann = need(annotations, question)?;
            let t = targets_at_least(context, question, 1)?;
            let a = ann.get(&t[0])?;
            Ok(Answer::numeric(a.footprint.0.max(a.footprint.1).max(a.height), "m"))
        }
        TaskType::RoomSize => {
            let ann = need(annotations, question)?;
            Ok(Answer::numeric(ann.room.area(), "m²"))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene_graph::{ObjectNode, Predicate};

    fn chain() -> GlobalSceneGraph {
        let objects = vec![
            ObjectNode::observed("a", "chair", Vec::<String>::new(), 0),
            ObjectNode::observed("b", "table", ["wooden"], 0),
            ObjectNode::observed("c", "lamp", Vec::<String>::new(), 0),
        ];
        let relations = vec![
            SpatialRelation::intra("a", Predicate::Near, "b", 0).unwrap(),
            SpatialRelation::intra("b", Predicate::LeftOf, "c", 0).unwrap(),
        ];
        GlobalSceneGraph::new(objects, relations, vec![], 1).unwrap()
    }

    fn question(task_type: TaskType, refs: &[(&str, &[&str])]) -> StructuredQuestion {
        StructuredQuestion {
            id: "q".into(),
            task_type,
            explicit_targets: refs.iter().map(|(c, a)| ObjectRef::new(c, a.iter().copied())).collect(),
            options: vec![],
            ground_truth: None,
            text: String::new(),
            variant: None,
            scene_seed: None,
        }
    }

    #[test]
    fn resolution_outcomes() {
        let g = chain();
        let q = question(TaskType::ObjectSize, &[("table", &["wooden"])]);
        assert_eq!(resolve_targets(&g, &q).unwrap(), vec!["b".to_string()]);
        let q = question(TaskType::ObjectSize, &[("piano", &[])]);
        assert_eq!(resolve_targets(&g, &q), Err(PsaError::TargetNotFound("piano".into())));

        let twins = GlobalSceneGraph::new(
            vec![
                ObjectNode::observed("chair#1", "chair", Vec::<String>::new(), 0),
                ObjectNode::observed("chair#2", "chair", Vec::<String>::new(), 0),
            ],
            vec![],
            vec![],
            1,
        )
        .unwrap();
        let q = question(TaskType::ObjectSize, &[("chair", &[])]);
        match resolve_targets(&twins, &q) {
            Err(PsaError::AmbiguousTarget { candidates, .. }) => assert_eq!(candidates, vec!["chair#1", "chair#2"]),
            other => panic!("expected ambiguity, got {other:?}"),
        }
        let q = question(TaskType::ObjectCount, &[("chair", &[])]);
        assert_eq!(resolve_targets(&twins, &q).unwrap().len(), 2);
        assert_eq!(resolve_targets(&GlobalSceneGraph::empty(), &q), Err(PsaError::EmptyGraph));
    }

    #[test]
    fn expansion_layers() {
        let g = chain();
        let t = vec!["a".to_string()];
        let ids = |s: BTreeSet<String>| s.into_iter().collect::<Vec<_>>();
        assert_eq!(ids(expand_candidates(&g, &t, 0).unwrap()), vec!["a"]);
        assert_eq!(ids(expand_candidates(&g, &t, 1).unwrap()), vec!["a", "b"]);
        assert_eq!(ids(expand_candidates(&g, &t, 2).unwrap()), vec!["a", "b", "c"]);
        assert!(expand_candidates(&g, &["zz".to_string()], 1).is_err());
    }

    #[test]
    fn paths_on_chain() {
        let g = chain();
        let all: BTreeSet<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let same = relation_paths(&g, "a", "a", &all, 3).unwrap();
        assert_eq!(same.len(), 1);
        assert!(same[0].is_empty());
        let p = relation_paths(&g, "a", "c", &all, 2).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].objects, vec!["a", "b", "c"]);
        assert_eq!(p[0].relations[0].statement(), "a near b");
        assert!(relation_paths(&g, "a", "c", &all, 1).unwrap().is_empty());
        let ab: BTreeSet<String> = ["a", "b"].iter().map(|s| s.to_string()).collect();
        assert_eq!(relation_paths(&g, "a", "c", &ab, 2), Err(PsaError::OutsideCandidates("c".into())));
    }

    #[test]
    fn context_for_count_question() {
        let g = chain();
        let q = question(TaskType::ObjectCount, &[("chair", &[])]);
        let ctx = build_task_context(
            &g,
            &q,
            &PsaConfig {
                rounds: 1,
                ..PsaConfig::default()
            },
        )
        .unwrap();
        assert_eq!(ctx.targets, vec!["a"]);
        assert_eq!(ctx.candidates.iter().collect::<Vec<_>>(), vec!["a", "b"]);
        assert_eq!(ctx.relevant_relations.len(), 1);
        assert!(ctx.paths.is_empty());
        assert_eq!(ctx.implicit_objects().into_iter().collect::<Vec<_>>(), vec!["b"]);
        assert_eq!(answer_from_graph(&g, &ctx, &q, None).unwrap(), Answer::numeric(1.0, ""));
    }

    #[test]
    fn metric_tasks_refuse_without_annotations() {
        let g = chain();
        let q = question(TaskType::AbsoluteDistance, &[("chair", &[]), ("lamp", &[])]);
        let ctx = build_task_context(&g, &q, &PsaConfig::default()).unwrap();
        assert_eq!(ctx.paths.len(), 2);
        assert_eq!(
            answer_from_graph(&g, &ctx, &q, None),
            Err(PsaError::UnsupportedWithoutAnnotations(TaskType::AbsoluteDistance))
        );
    }

    #[test]
    fn appearance_order_sorts_by_first_frame() {
        use crate::scene_graph::{Rotation, Translation, ViewpointTransition};
        let mut x = ObjectNode::observed("x", "sofa", Vec::<String>::new(), 4);
        x.frames.insert(5);
        let objects = vec![
            x,
            ObjectNode::observed("y", "tv", Vec::<String>::new(), 1),
            ObjectNode::observed("z", "plant", Vec::<String>::new(), 7),
        ];
        let transitions = (0..7)
            .map(|i| ViewpointTransition::new(i, Translation::Forward, Rotation::None))
            .collect();
        let g = GlobalSceneGraph::new(objects, vec![], transitions, 8).unwrap();
        let mut q = question(TaskType::AppearanceOrder, &[("sofa", &[]), ("tv", &[]), ("plant", &[])]);
        q.options = vec!["sofa, tv, plant".into(), "tv, sofa, plant".into(), "plant, tv, sofa".into()];
        let ctx = build_task_context(&g, &q, &PsaConfig::default()).unwrap();
        assert_eq!(answer_from_graph(&g, &ctx, &q, None).unwrap(), Answer::Choice('B'));
    }
}
