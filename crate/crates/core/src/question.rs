//! Structured spatial questions and answers shared by the simulator, the PSA
//! engine, the generation pipeline and the evaluation harness.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::scene_graph::ObjectNode;

/// The eight benchmark task families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskType {
    ObjectCount,
    AbsoluteDistance,
    ObjectSize,
    RoomSize,
    RelativeDistance,
    RelativeDirection,
    RoutePlan,
    AppearanceOrder,
}

impl TaskType {
    /// Report column order: four numeric families, then four multiple-choice.
    pub const ALL: [TaskType; 8] = [
        TaskType::ObjectCount,
        TaskType::AbsoluteDistance,
        TaskType::ObjectSize,
        TaskType::RoomSize,
        TaskType::RelativeDistance,
        TaskType::RelativeDirection,
        TaskType::RoutePlan,
        TaskType::AppearanceOrder,
    ];

    pub fn is_numeric(self) -> bool {
        matches!(
            self,
            TaskType::ObjectCount | TaskType::AbsoluteDistance | TaskType::ObjectSize | TaskType::RoomSize
        )
    }

    pub fn is_multiple_choice(self) -> bool {
        !self.is_numeric()
    }

    /// Tasks whose answer depends on metric geometry rather than graph structure alone.
    pub fn needs_annotations(self) -> bool {
        !matches!(self, TaskType::ObjectCount | TaskType::AppearanceOrder)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskType::ObjectCount => "object_count",
            TaskType::AbsoluteDistance => "absolute_distance",
            TaskType::ObjectSize => "object_size",
            TaskType::RoomSize => "room_size",
            TaskType::RelativeDistance => "relative_distance",
            TaskType::RelativeDirection => "relative_direction",
            TaskType::RoutePlan => "route_plan",
            TaskType::AppearanceOrder => "appearance_order",
        }
    }

    /// Short column header used in score tables.
    pub fn column_label(self) -> &'static str {
        match self {
            TaskType::ObjectCount => "Obj. Cnt.",
            TaskType::AbsoluteDistance => "Abs. Dist.",
            TaskType::ObjectSize => "Obj. Size",
            TaskType::RoomSize => "Room Size",
            TaskType::RelativeDistance => "Rel. Dist.",
            TaskType::RelativeDirection => "Rel. Dir.",
            TaskType::RoutePlan => "Route Plan",
            TaskType::AppearanceOrder => "Appr. Order",
        }
    }
}

impl fmt::Display for TaskType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskType::ALL
            .into_iter()
            .find(|t| t.as_str() == s.trim())
            .ok_or_else(|| format!("unknown task type `{s}`"))
    }
}

/// A reference to an object by category and (a subset of) its attributes.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ObjectRef {
    pub category: String,
    #[serde(default)]
    pub attributes: BTreeSet<String>,
}

impl ObjectRef {
    pub fn new<I, S>(category: &str, attributes: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ObjectRef {
            category: category.to_string(),
            attributes: attributes.into_iter().map(Into::into).collect(),
        }
    }

    pub fn matches(&self, node: &ObjectNode) -> bool {
        self.matches_parts(&node.category, &node.attributes)
    }

    pub fn matches_parts(&self, category: &str, attributes: &BTreeSet<String>) -> bool {
        self.category == category && self.attributes.is_subset(attributes)
    }

    /// Human-readable name, e.g. `red chair`.
    pub fn display_name(&self) -> String {
        let mut words: Vec<&str> = self.attributes.iter().map(String::as_str).collect();
        words.push(&self.category);
        words.join(" ")
    }
}

impl fmt::Display for ObjectRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.display_name())
    }
}

/// A question's answer: an option letter or a number with unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Answer {
    Choice(char),
    Numeric { value: f64, unit: String },
}

impl Answer {
    pub fn numeric(value: f64, unit: &str) -> Self {
        Answer::Numeric {
            value,
            unit: unit.to_string(),
        }
    }

    pub fn as_choice(&self) -> Option<char> {
        match self {
            Answer::Choice(c) => Some(*c),
            Answer::Numeric { .. } => None,
        }
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            Answer::Numeric { value, .. } => Some(*value),
            Answer::Choice(_) => None,
        }
    }

    /// Answer text as it would appear between answer tags.
    pub fn render(&self) -> String {
        match self {
            Answer::Choice(c) => c.to_string(),
            Answer::Numeric { value, .. } => format_number(*value),
        }
    }
}

impl fmt::Display for Answer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Answer::Choice(c) => write!(f, "{c}"),
            Answer::Numeric { value, unit } if unit.is_empty() => write!(f, "{}", format_number(*value)),
            Answer::Numeric { value, unit } => write!(f, "{} {unit}", format_number(*value)),
        }
    }
}

/// Numbers are rendered with at most two decimals and no trailing zeros.
pub fn format_number(value: f64) -> String {
    let text = format!("{value:.2}");
    let text = text.trim_end_matches('0').trim_end_matches('.');
    if text == "-0" {
        "0".to_string()
    } else {
        text.to_string()
    }
}

pub const OPTION_LETTERS: [char; 4] = ['A', 'B', 'C', 'D'];

/// Per-family question parameters that the task type alone does not fix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionVariant {
    Closest,
    Farthest,
    TwoWay,
    FourWay,
}

/// A machine-readable spatial question.
///
/// Target conventions per family:
/// - `object_count`: one class reference (every match is counted)
/// - `absolute_distance`: two objects
/// - `object_size`: one object; `room_size`: none
/// - `relative_distance`: anchor followed by the candidates listed in `options`
/// - `relative_direction`: standing-at, facing, query
/// - `route_plan`: start, facing, goal
/// - `appearance_order`: the objects being ordered
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredQuestion {
    pub id: String,
    pub task_type: TaskType,
    pub explicit_targets: Vec<ObjectRef>,
    #[serde(default)]
    pub options: Vec<String>,
    #[serde(default)]
    pub ground_truth: Option<Answer>,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<QuestionVariant>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_seed: Option<u64>,
}

impl StructuredQuestion {
    /// Checks the multiple-choice/numeric consistency of options and ground truth.
    pub fn validate(&self) -> Result<(), String> {
        let mcq = self.task_type.is_multiple_choice();
        if mcq && self.options.is_empty() {
            return Err(format!("{}: multiple-choice question without options", self.id));
        }
        if !mcq && !self.options.is_empty() {
            return Err(format!("{}: numeric question with options", self.id));
        }
        if self.options.len() > OPTION_LETTERS.len() {
            return Err(format!("{}: more than four options", self.id));
        }
        match (&self.ground_truth, mcq) {
            (None, _) => Ok(()),
            (Some(Answer::Choice(c)), true) => {
                let index = OPTION_LETTERS.iter().position(|l| l == c);
                match index {
                    Some(i) if i < self.options.len() => Ok(()),
                    _ => Err(format!("{}: ground truth `{c}` names no option", self.id)),
                }
            }
            (Some(Answer::Numeric { value, .. }), false) if value.is_finite() && *value >= 0.0 => Ok(()),
            (Some(other), _) => Err(format!("{}: ground truth `{other}` does not fit {}", self.id, self.task_type)),
        }
    }

    pub fn option_letter(&self, text: &str) -> Option<char> {
        self.options
            .iter()
            .position(|o| o == text)
            .map(|i| OPTION_LETTERS[i])
    }

    /// Question text followed by lettered options, as shown to a model.
    pub fn prompt_text(&self) -> String {
        let mut out = self.text.clone();
        for (letter, option) in OPTION_LETTERS.iter().zip(&self.options) {
            out.push_str(&format!("\n{letter}. {option}"));
        }
        out
    }
}
