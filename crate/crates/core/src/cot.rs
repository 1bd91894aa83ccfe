//! The structured chain-of-thought output format.
//!
//! ```text
//! document  = ws "<think>" ws summary rpc psa reasoning "</think>" ws "<answer>" answer "</answer>" ws
//! summary   = "## Summary" NL text
//! rpc       = "## Role-Play Caption" NL block { block }
//! block     = ( "[Frame " N "]" | "[Transition " N "->" M "]" ) text
//! psa       = "## Progressive Spatial Analysis" NL
//!             [ "Targets:" list ] [ "Candidates:" list ] { note } [ "Relations:" { "- " text } ]
//! reasoning = "## Reasoning" NL text
//! ```
//!
//! Section headers are whole lines, matched case-insensitively after
//! trimming. Frame and transition numbers are positional: the parser ignores
//! them and the renderer regenerates them. Alternation of RPC blocks and the
//! target/candidate subset rule are reported by [`validate`] as warnings and
//! do not affect [`format_reward`].

use std::collections::BTreeSet;
use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CotErrorKind {
    Tag,
    Section,
    Order,
    Answer,
    Render,
}

impl fmt::Display for CotErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CotErrorKind::Tag => "tag error",
            CotErrorKind::Section => "section error",
            CotErrorKind::Order => "order error",
            CotErrorKind::Answer => "answer error",
            CotErrorKind::Render => "render error",
        })
    }
}

/// A parse or render failure, located at the first offending position
/// (1-based line and column; 0 for render errors).
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind} at {line}:{col}: {message}")]
pub struct CotError {
    pub kind: CotErrorKind,
    pub message: String,
    pub line: usize,
    pub col: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CotMarkers {
    pub think_open: String,
    pub think_close: String,
    pub answer_open: String,
    pub answer_close: String,
    pub summary: String,
    pub rpc: String,
    pub psa: String,
    pub reasoning: String,
}

impl Default for CotMarkers {
    fn default() -> Self {
        CotMarkers {
            think_open: "<think>".into(),
            think_close: "</think>".into(),
            answer_open: "<answer>".into(),
            answer_close: "</answer>".into(),
            summary: "## Summary".into(),
            rpc: "## Role-Play Caption".into(),
            psa: "## Progressive Spatial Analysis".into(),
            reasoning: "## Reasoning".into(),
        }
    }
}

impl CotMarkers {
    fn headers(&self) -> [&str; 4] {
        [&self.summary, &self.rpc, &self.psa, &self.reasoning]
    }

    fn tags(&self) -> [&str; 4] {
        [&self.think_open, &self.think_close, &self.answer_open, &self.answer_close]
    }

    pub fn validate(&self) -> Result<(), String> {
        let all: Vec<&str> = self.tags().into_iter().chain(self.headers()).collect();
        if all.iter().any(|m| m.trim().is_empty()) {
            return Err("markers must be non-empty".into());
        }
        let lowered: BTreeSet<String> = self.headers().iter().map(|h| h.trim().to_lowercase()).collect();
        if lowered.len() != 4 {
            return Err("section headers must be distinct".into());
        }
        let tags: BTreeSet<&str> = self.tags().into_iter().collect();
        if tags.len() != 4 {
            return Err("tags must be distinct".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParseOptions {
    pub markers: CotMarkers,
    /// Accept arbitrary text before the opening think tag and after the
    /// closing answer tag.
    pub lenient: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RpcKind {
    Frame,
    Transition,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RpcBlock {
    pub kind: RpcKind,
    pub text: String,
}

impl RpcBlock {
    pub fn frame(text: &str) -> Self {
        RpcBlock {
            kind: RpcKind::Frame,
            text: text.to_string(),
        }
    }

    pub fn transition(text: &str) -> Self {
        RpcBlock {
            kind: RpcKind::Transition,
            text: text.to_string(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PsaSection {
    pub targets: Vec<String>,
    pub candidates: Vec<String>,
    pub relations: Vec<String>,
    /// Lines that are none of the above, kept in order.
    #[serde(default)]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CotDocument {
    pub summary: String,
    pub rpc_narrative: Vec<RpcBlock>,
    pub psa: PsaSection,
    pub reasoning: String,
    pub answer: String,
}

static FRAME_MARKER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)^\[frame\s*\d*\]").expect("valid regex"));
static TRANSITION_MARKER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^\[transition\s*\d*\s*(?:->\s*\d*)?\]").expect("valid regex"));

fn location(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, col)
}

fn error_at(text: &str, offset: usize, kind: CotErrorKind, message: impl Into<String>) -> CotError {
    let (line, col) = location(text, offset);
    CotError {
        kind,
        message: message.into(),
        line,
        col,
    }
}

fn render_error(message: impl Into<String>) -> CotError {
    CotError {
        kind: CotErrorKind::Render,
        message: message.into(),
        line: 0,
        col: 0,
    }
}

/// Byte offsets and trimmed content of each line of `text[start..end]`.
fn lines_in(text: &str, start: usize, end: usize) -> Vec<(usize, usize, &str)> {
    let mut out = Vec::new();
    let mut pos = start;
    for raw in text[start..end].split_inclusive('\n') {
        let line_end = pos + raw.len();
        out.push((pos, line_end, raw.trim()));
        pos = line_end;
    }
    out
}

pub fn parse(text: &str) -> Result<CotDocument, CotError> {
    parse_with(text, &ParseOptions::default())
}

pub fn parse_with(text: &str, options: &ParseOptions) -> Result<CotDocument, CotError> {
    let m = &options.markers;
    let tags = m.tags();
    let names = ["think-open", "think-close", "answer-open", "answer-close"];
    let mut positions = [0usize; 4];
    for (i, tag) in tags.iter().enumerate() {
        let mut found = text.match_indices(tag);
        match found.next() {
            None => return Err(error_at(text, text.len(), CotErrorKind::Tag, format!("missing {} tag `{tag}`", names[i]))),
            Some((first, _)) => {
                positions[i] = first;
                if let Some((second, _)) = found.next() {
                    return Err(error_at(text, second, CotErrorKind::Tag, format!("duplicated {} tag `{tag}`", names[i])));
                }
            }
        }
    }
    for i in 1..4 {
        if positions[i] < positions[i - 1] + tags[i - 1].len() {
            return Err(error_at(
                text,
                positions[i],
                CotErrorKind::Tag,
                format!("`{}` appears before `{}` is closed or opened", tags[i], tags[i - 1]),
            ));
        }
    }
    let [think_open, think_close, answer_open, answer_close] = positions;
    let leading = &text[..think_open];
    let trailing = &text[answer_close + tags[3].len()..];
    if !options.lenient {
        if !leading.trim().is_empty() {
            let offset = leading.len() - leading.trim_start().len();
            return Err(error_at(text, offset, CotErrorKind::Tag, "text before the think tag"));
        }
        if !trailing.trim().is_empty() {
            let offset = answer_close + tags[3].len() + (trailing.len() - trailing.trim_start().len());
            return Err(error_at(text, offset, CotErrorKind::Tag, "text after the answer tag"));
        }
    }
    let gap = &text[think_close + tags[1].len()..answer_open];
    if !gap.trim().is_empty() {
        let offset = think_close + tags[1].len() + (gap.len() - gap.trim_start().len());
        return Err(error_at(text, offset, CotErrorKind::Tag, "text between the think and answer blocks"));
    }

    let body_start = think_open + tags[0].len();
    let sections = split_sections(text, body_start, think_close, m)?;

    let answer = text[answer_open + tags[2].len()..answer_close].trim();
    if answer.is_empty() {
        return Err(error_at(text, answer_open, CotErrorKind::Answer, "empty answer"));
    }

    let [summary, rpc, psa, reasoning] = sections;
    Ok(CotDocument {
        summary: text[summary.0..summary.1].trim().to_string(),
        rpc_narrative: parse_rpc(text, rpc.0, rpc.1),
        psa: parse_psa(text, psa.0, psa.1),
        reasoning: text[reasoning.0..reasoning.1].trim().to_string(),
        answer: answer.to_string(),
    })
}

/// Body byte ranges of the four sections, in canonical order.
fn split_sections(text: &str, start: usize, end: usize, m: &CotMarkers) -> Result<[(usize, usize); 4], CotError> {
    let headers: Vec<String> = m.headers().iter().map(|h| h.trim().to_lowercase()).collect();
    let titles = ["Summary", "Role-Play Caption", "Progressive Spatial Analysis", "Reasoning"];
    let mut found: Vec<(usize, usize, usize)> = Vec::new(); // (section, line start, line end)
    for (line_start, line_end, line) in lines_in(text, start, end) {
        let lowered = line.to_lowercase();
        if let Some(section) = headers.iter().position(|h| *h == lowered) {
            if found.iter().any(|f| f.0 == section) {
                return Err(error_at(
                    text,
                    line_start,
                    CotErrorKind::Section,
                    format!("duplicated {} section", titles[section]),
                ));
            }
            found.push((section, line_start, line_end));
        } else if found.is_empty() && !line.is_empty() {
            return Err(error_at(text, line_start, CotErrorKind::Section, "text before the first section header"));
        }
    }
    for (section, title) in titles.iter().enumerate() {
        if !found.iter().any(|f| f.0 == section) {
            return Err(error_at(text, end, CotErrorKind::Section, format!("missing {title} section")));
        }
    }
    for (position, f) in found.iter().enumerate() {
        if f.0 != position {
            return Err(error_at(
                text,
                f.1,
                CotErrorKind::Order,
                format!("{} section out of order (expected {})", titles[f.0], titles[position]),
            ));
        }
    }
    let mut ranges = [(0, 0); 4];
    for (i, f) in found.iter().enumerate() {
        let body_end = found.get(i + 1).map_or(end, |next| next.1);
        if text[f.2..body_end].trim().is_empty() {
            return Err(error_at(text, f.1, CotErrorKind::Section, format!("empty {} section", titles[i])));
        }
        ranges[i] = (f.2, body_end);
    }
    Ok(ranges)
}

fn rpc_marker(line: &str) -> Option<(RpcKind, usize)> {
    if let Some(m) = FRAME_MARKER.find(line) {
        return Some((RpcKind::Frame, m.end()));
    }
    TRANSITION_MARKER.find(line).map(|m| (RpcKind::Transition, m.end()))
}

fn parse_rpc(text: &str, start: usize, end: usize) -> Vec<RpcBlock> {
    let mut blocks: Vec<(RpcKind, usize, usize)> = Vec::new(); // kind, text start, text end
    for (line_start, line_end, line) in lines_in(text, start, end) {
        let indent = text[line_start..line_end].len() - text[line_start..line_end].trim_start().len();
        match rpc_marker(line) {
            Some((kind, marker_len)) => {
                if let Some(last) = blocks.last_mut() {
                    last.2 = line_start;
                }
                blocks.push((kind, line_start + indent + marker_len, line_end));
            }
            None if blocks.is_empty() && !line.is_empty() => blocks.push((RpcKind::Frame, line_start, line_end)),
            None => {
                if let Some(last) = blocks.last_mut() {
                    last.2 = line_end;
                }
            }
        }
    }
    blocks
        .into_iter()
        .map(|(kind, s, e)| RpcBlock {
            kind,
            text: text[s..e].trim().to_string(),
        })
        .collect()
}

fn split_list(rest: &str) -> Vec<String> {
    rest.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
}

fn strip_label<'a>(line: &'a str, label: &str) -> Option<&'a str> {
    let head = line.get(..label.len())?;
    head.eq_ignore_ascii_case(label).then(|| &line[label.len()..])
}

fn parse_psa(text: &str, start: usize, end: usize) -> PsaSection {
    let mut psa = PsaSection::default();
    let mut in_relations = false;
    for (_, _, line) in lines_in(text, start, end) {
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = strip_label(line, "targets:") {
            psa.targets.extend(split_list(rest));
        } else if let Some(rest) = strip_label(line, "candidates:") {
            psa.candidates.extend(split_list(rest));
        } else if let Some(rest) = strip_label(line, "relations:") {
            in_relations = true;
            if !rest.trim().is_empty() {
                psa.relations.push(rest.trim().to_string());
            }
        } else if let (true, Some(rest)) = (in_relations, line.strip_prefix('-')) {
            psa.relations.push(rest.trim().to_string());
        } else {
            psa.notes.push(line.to_string());
        }
    }
    psa
}

fn check_free_text(field: &str, value: &str, m: &CotMarkers, single_line: bool) -> Result<(), CotError> {
    if value.trim() != value {
        return Err(render_error(format!("{field} has surrounding whitespace")));
    }
    if single_line && value.contains('\n') {
        return Err(render_error(format!("{field} must be a single line")));
    }
    for tag in m.tags() {
        if value.contains(tag) {
            return Err(render_error(format!("{field} contains the tag `{tag}`")));
        }
    }
    let headers: Vec<String> = m.headers().iter().map(|h| h.trim().to_lowercase()).collect();
    for line in value.lines() {
        if headers.contains(&line.trim().to_lowercase()) {
            return Err(render_error(format!("{field} contains a section header line")));
        }
    }
    Ok(())
}

fn check_block(field: &str, value: &str, m: &CotMarkers) -> Result<(), CotError> {
    check_free_text(field, value, m, false)?;
    if value.is_empty() {
        return Err(render_error(format!("{field} is empty")));
    }
    if value.lines().skip(1).any(|l| rpc_marker(l.trim()).is_some()) || rpc_marker(value).is_some() {
        return Err(render_error(format!("{field} contains a block marker")));
    }
    Ok(())
}

pub fn render(doc: &CotDocument) -> Result<String, CotError> {
    render_with(doc, &CotMarkers::default())
}

/// Canonical text of `doc`; the inverse of [`parse_with`].
pub fn render_with(doc: &CotDocument, m: &CotMarkers) -> Result<String, CotError> {
    if doc.summary.is_empty() || doc.reasoning.is_empty() {
        return Err(render_error("summary and reasoning must be non-empty"));
    }
    if doc.answer.is_empty() {
        return Err(render_error("answer must be non-empty"));
    }
    check_free_text("summary", &doc.summary, m, false)?;
    check_free_text("reasoning", &doc.reasoning, m, false)?;
    check_free_text("answer", &doc.answer, m, false)?;
    if doc.rpc_narrative.is_empty() || doc.rpc_narrative.len() % 2 == 0 {
        return Err(render_error("role-play caption must have an odd number of blocks"));
    }
    for (i, block) in doc.rpc_narrative.iter().enumerate() {
        let expected = if i % 2 == 0 { RpcKind::Frame } else { RpcKind::Transition };
        if block.kind != expected {
            return Err(render_error(format!("caption block {i} breaks frame/transition alternation")));
        }
        check_block(&format!("caption block {i}"), &block.text, m)?;
    }
    let psa = &doc.psa;
    for item in psa.targets.iter().chain(&psa.candidates) {
        if item.is_empty() || item.contains(',') || item.contains('\n') || item.trim() != item {
            return Err(render_error(format!("list item `{item}` must be non-empty, trimmed and comma-free")));
        }
    }
    let normalize = |s: &String| s.trim().to_lowercase();
    let candidates: BTreeSet<String> = psa.candidates.iter().map(normalize).collect();
    if let Some(t) = psa.targets.iter().find(|t| !candidates.contains(&normalize(t))) {
        return Err(render_error(format!("target `{t}` is not among the candidates")));
    }
    for r in &psa.relations {
        check_free_text("relation", r, m, true)?;
        if r.is_empty() {
            return Err(render_error("empty relation statement"));
        }
    }
    for n in &psa.notes {
        check_free_text("note", n, m, true)?;
        let lowered = n.to_lowercase();
        if n.is_empty() || ["targets:", "candidates:", "relations:"].iter().any(|l| lowered.starts_with(l)) {
            return Err(render_error(format!("note `{n}` would be read as a list line")));
        }
    }

    let mut out = String::new();
    out.push_str(&m.think_open);
    out.push('\n');
    out.push_str(&format!("{}\n{}\n\n", m.summary, doc.summary));
    out.push_str(&format!("{}\n", m.rpc));
    let mut frame = 0;
    for block in &doc.rpc_narrative {
        match block.kind {
            RpcKind::Frame => {
                frame += 1;
                out.push_str(&format!("[Frame {frame}] {}\n", block.text));
            }
            RpcKind::Transition => out.push_str(&format!("[Transition {frame}->{}] {}\n", frame + 1, block.text)),
        }
    }
    out.push('\n');
    out.push_str(&format!("{}\n", m.psa));
    out.push_str(&join_labeled("Targets:", &psa.targets));
    out.push_str(&join_labeled("Candidates:", &psa.candidates));
    for n in &psa.notes {
        out.push_str(n);
        out.push('\n');
    }
    out.push_str("Relations:\n");
    for r in &psa.relations {
        out.push_str(&format!("- {r}\n"));
    }
    out.push('\n');
    out.push_str(&format!("{}\n{}\n", m.reasoning, doc.reasoning));
    out.push_str(&m.think_close);
    out.push('\n');
    out.push_str(&format!("{}{}{}", m.answer_open, doc.answer, m.answer_close));
    Ok(out)
}

fn join_labeled(label: &str, items: &[String]) -> String {
    if items.is_empty() {
        format!("{label}\n")
    } else {
        format!("{label} {}\n", items.join(", "))
    }
}

/// Structural problems that do not fail parsing.
pub fn validate(doc: &CotDocument) -> Vec<String> {
    let mut warnings = Vec::new();
    let n = doc.rpc_narrative.len();
    if n % 2 == 0 {
        warnings.push(format!("role-play caption has {n} blocks; expected an odd count"));
    }
    for (i, block) in doc.rpc_narrative.iter().enumerate() {
        let expected = if i % 2 == 0 { RpcKind::Frame } else { RpcKind::Transition };
        if block.kind != expected {
            warnings.push(format!("caption block {} should be a {expected:?} block", i + 1));
        }
        if block.text.is_empty() {
            warnings.push(format!("caption block {} is empty", i + 1));
        }
    }
    let candidates: BTreeSet<String> = doc.psa.candidates.iter().map(|c| c.trim().to_lowercase()).collect();
    for t in &doc.psa.targets {
        if !candidates.contains(&t.trim().to_lowercase()) {
            warnings.push(format!("target `{t}` is missing from the candidates"));
        }
    }
    warnings
}

/// 1 when `text` parses, else 0. Never panics.
pub fn format_reward(text: &str) -> u8 {
    format_reward_with(text, &ParseOptions::default())
}

pub fn format_reward_with(text: &str, options: &ParseOptions) -> u8 {
    u8::from(parse_with(text, options).is_ok())
}

/// [`format_reward`] on raw bytes; invalid UTF-8 scores 0.
pub fn format_reward_bytes(bytes: &[u8]) -> u8 {
    std::str::from_utf8(bytes).map_or(0, format_reward)
}
