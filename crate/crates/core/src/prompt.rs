//! Prompt rendering for pairwise, pointwise and setwise inference.
//!
//! A template file is UTF-8 text split by a line holding only `{examples}`:
//! everything before it is the instruction, everything after it is the block
//! format. The block format is rendered once per in-context example with its
//! gold `{label}` filled in, then once more for the live query with the label
//! slot left empty. Block placeholders are `{query}`, `{passage1}`,
//! `{passage2}` (pairwise), `{passage1}` (pointwise), `{passages}` (setwise)
//! and `{label}`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{Document, Query};
use crate::error::{Error, Result};
use crate::icl::{GoldLabel, IclExample};

pub const EXAMPLES_MARKER: &str = "{examples}";
pub const DEFAULT_TRUNCATION_BUDGET: usize = 2000;
pub const MAX_SET_SIZE: usize = 10;

const PAIRWISE_TEMPLATE: &str = "\
Given a query, which of the following two passages is more relevant to the query? Output only either \"1\" or \"2\".

{examples}
Query: {query}
Passage 1: {passage1}
Passage 2: {passage2}
Output: {label}
";

const POINTWISE_TEMPLATE: &str = "\
Does the passage answer the query? Output only either \"true\" or \"false\".

{examples}
Query: {query}
Passage: {passage1}
Output: {label}
";

const SETWISE_TEMPLATE: &str = "\
Given a query and the following passages, which passage is the most relevant to the query? Output only the passage number.

{examples}
Query: {query}
{passages}
Output: {label}
";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptMode {
    Pairwise,
    Pointwise,
    Setwise,
}

impl fmt::Display for PromptMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PromptMode::Pairwise => "pairwise",
            PromptMode::Pointwise => "pointwise",
            PromptMode::Setwise => "setwise",
        })
    }
}

impl FromStr for PromptMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pairwise" => Ok(PromptMode::Pairwise),
            "pointwise" => Ok(PromptMode::Pointwise),
            "setwise" => Ok(PromptMode::Setwise),
            other => Err(Error::Argument(format!("unknown mode {other:?}"))),
        }
    }
}

impl PromptMode {
    fn required_placeholders(self) -> &'static [&'static str] {
        match self {
            PromptMode::Pairwise => &["query", "passage1", "passage2", "label"],
            PromptMode::Pointwise => &["query", "passage1", "label"],
            PromptMode::Setwise => &["query", "passages", "label"],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    pub mode: PromptMode,
    pub instruction_text: String,
    pub example_block_format: String,
    /// Maximum characters kept from each passage.
    pub truncation_budget: usize,
    /// Maximum characters of the whole prompt, if bounded.
    pub context_budget: Option<usize>,
}

/// Where the text of a rendered prompt came from.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Provenance {
    pub example_query_ids: Vec<String>,
    /// Every passage in order of appearance: example passages, then the live ones.
    pub passage_doc_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedPrompt {
    pub text: String,
    pub answer_tokens: Vec<String>,
    pub provenance: Provenance,
}

impl PromptTemplate {
    pub fn default_for(mode: PromptMode) -> Self {
        let text = match mode {
            PromptMode::Pairwise => PAIRWISE_TEMPLATE,
            PromptMode::Pointwise => POINTWISE_TEMPLATE,
            PromptMode::Setwise => SETWISE_TEMPLATE,
        };
        Self::parse(mode, text).expect("built-in template is valid")
    }

    pub fn parse(mode: PromptMode, text: &str) -> Result<Self> {
        let mut instruction = String::new();
        let mut block = String::new();
        let mut found = false;
        for line in text.split_inclusive('\n') {
            if !found && line.trim() == EXAMPLES_MARKER {
                found = true;
                continue;
            }
            if found {
                block.push_str(line);
            } else {
                instruction.push_str(line);
            }
        }
        if !found {
            return Err(Error::Config(format!(
                "template has no line consisting of {EXAMPLES_MARKER}"
            )));
        }
        let block = block.trim_matches('\n').to_string();
        for name in mode.required_placeholders() {
            if !block.contains(&format!("{{{name}}}")) {
                return Err(Error::Config(format!(
                    "{mode} template block lacks {{{name}}}"
                )));
            }
        }
        Ok(Self {
            mode,
            instruction_text: instruction,
            example_block_format: block,
            truncation_budget: DEFAULT_TRUNCATION_BUDGET,
            context_budget: None,
        })
    }

    pub fn load(mode: PromptMode, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("read template {}", path.display()), e))?;
        Self::parse(mode, &text)
    }

    pub fn with_truncation_budget(mut self, chars: usize) -> Self {
        self.truncation_budget = chars;
        self
    }

    pub fn with_context_budget(mut self, chars: Option<usize>) -> Self {
        self.context_budget = chars;
        self
    }

    /// Candidate continuations for this mode; `set_size` only matters for setwise.
    pub fn answer_tokens(&self, set_size: usize) -> Vec<String> {
        match self.mode {
            PromptMode::Pairwise => vec!["1".into(), "2".into()],
            PromptMode::Pointwise => vec!["true".into(), "false".into()],
            PromptMode::Setwise => (1..=set_size).map(|i| i.to_string()).collect(),
        }
    }

    fn expect_mode(&self, mode: PromptMode) -> Result<()> {
        if self.mode != mode {
            return Err(Error::Argument(format!(
                "template is for {} prompts, not {mode}",
                self.mode
            )));
        }
        Ok(())
    }

    /// Renders with shrinking passage budgets until the context budget holds.
    fn render_within_budget(
        &self,
        build: impl Fn(usize) -> Result<(String, Provenance)>,
        answer_tokens: Vec<String>,
    ) -> Result<RenderedPrompt> {
        let mut budget = self.truncation_budget;
        loop {
            let (text, provenance) = build(budget)?;
            match self.context_budget {
                Some(limit) if text.chars().count() > limit => {
                    let next = budget * 3 / 4;
                    if next == 0 || next == budget {
                        return Err(Error::Render(format!(
                            "prompt cannot fit in {limit} characters"
                        )));
                    }
                    budget = next;
                }
                _ => {
                    return Ok(RenderedPrompt {
                        text,
                        answer_tokens,
                        provenance,
                    })
                }
            }
        }
    }

    fn assemble(&self, example_blocks: Vec<String>, live_block: String) -> String {
        let mut text = self.instruction_text.clone();
        for b in example_blocks {
            text.push_str(&b);
            text.push_str("\n\n");
        }
        text.push_str(&live_block);
        text.trim_end().to_string()
    }
}

/// Cuts `text` to at most `budget` characters, at a whitespace boundary.
pub fn truncate_passage(text: &str, budget: usize) -> Result<String> {
    if text.chars().count() <= budget {
        return Ok(text.to_string());
    }
    let (cut_byte, next_char) = match text.char_indices().nth(budget) {
        Some((b, c)) => (b, c),
        None => return Ok(text.to_string()),
    };
    let prefix = &text[..cut_byte];
    let kept = if next_char.is_whitespace() {
        prefix
    } else {
        match prefix.rfind(char::is_whitespace) {
            Some(i) => &prefix[..i],
            None => "",
        }
    };
    let kept = kept.trim_end();
    if kept.is_empty() {
        return Err(Error::Render(format!(
            "truncation budget {budget} leaves nothing of a {}-character passage",
            text.chars().count()
        )));
    }
    Ok(kept.to_string())
}

/// Replaces `{name}` placeholders in one left-to-right pass, so substituted
/// text is never re-scanned.
fn fill(format: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(format.len() + values.iter().map(|v| v.1.len()).sum::<usize>());
    let mut rest = format;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) => {
                let name = &after[..close];
                match values.iter().find(|(n, _)| *n == name) {
                    Some((_, v)) => out.push_str(v),
                    None => out.push_str(&rest[open..open + close + 2]),
                }
                rest = &after[close + 1..];
            }
            None => {
                out.push_str(&rest[open..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

fn numbered_passages(passages: &[String]) -> String {
    passages
        .iter()
        .enumerate()
        .map(|(i, p)| format!("Passage {}: {p}", i + 1))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Pairwise prompt for `(first, second)` with in-context examples.
pub fn render_pairwise(
    query: &Query,
    first: &Document,
    second: &Document,
    examples: &[IclExample],
    tpl: &PromptTemplate,
) -> Result<RenderedPrompt> {
    tpl.expect_mode(PromptMode::Pairwise)?;
    tpl.render_within_budget(
        |budget| {
            let mut prov = Provenance::default();
            let mut blocks = Vec::with_capacity(examples.len());
            for ex in examples {
                let p1 = truncate_passage(&ex.first_passage.text, budget)?;
                let p2 = truncate_passage(&ex.second_passage.text, budget)?;
                blocks.push(fill(
                    &tpl.example_block_format,
                    &[
                        ("query", &ex.example_query.text),
                        ("passage1", &p1),
                        ("passage2", &p2),
                        ("label", ex.gold_label.as_str()),
                    ],
                ));
                prov.example_query_ids.push(ex.example_query.query_id.clone());
                prov.passage_doc_ids.push(ex.first_passage.doc_id.clone());
                prov.passage_doc_ids.push(ex.second_passage.doc_id.clone());
            }
            let p1 = truncate_passage(&first.text, budget)?;
            let p2 = truncate_passage(&second.text, budget)?;
            let live = fill(
                &tpl.example_block_format,
                &[
                    ("query", &query.text),
                    ("passage1", &p1),
                    ("passage2", &p2),
                    ("label", ""),
                ],
            );
            prov.passage_doc_ids.push(first.doc_id.clone());
            prov.passage_doc_ids.push(second.doc_id.clone());
            Ok((tpl.assemble(blocks, live), prov))
        },
        tpl.answer_tokens(2),
    )
}

/// Pointwise relevance prompt. Each example contributes one block: its first
/// passage, labelled `true` when that passage is the relevant one.
pub fn render_pointwise(
    query: &Query,
    doc: &Document,
    examples: &[IclExample],
    tpl: &PromptTemplate,
) -> Result<RenderedPrompt> {
    tpl.expect_mode(PromptMode::Pointwise)?;
    tpl.render_within_budget(
        |budget| {
            let mut prov = Provenance::default();
            let mut blocks = Vec::with_capacity(examples.len());
            for ex in examples {
                let p = truncate_passage(&ex.first_passage.text, budget)?;
                let label = match ex.gold_label {
                    GoldLabel::First => "true",
                    GoldLabel::Second => "false",
                };
                blocks.push(fill(
                    &tpl.example_block_format,
                    &[("query", &ex.example_query.text), ("passage1", &p), ("label", label)],
                ));
                prov.example_query_ids.push(ex.example_query.query_id.clone());
                prov.passage_doc_ids.push(ex.first_passage.doc_id.clone());
            }
            let p = truncate_passage(&doc.text, budget)?;
            let live = fill(
                &tpl.example_block_format,
                &[("query", &query.text), ("passage1", &p), ("label", "")],
            );
            prov.passage_doc_ids.push(doc.doc_id.clone());
            Ok((tpl.assemble(blocks, live), prov))
        },
        tpl.answer_tokens(1),
    )
}

/// Setwise prompt asking for the most relevant of 2..=10 numbered passages.
/// Examples are shown as two-passage sets.
pub fn render_setwise(
    query: &Query,
    docs: &[&Document],
    examples: &[IclExample],
    tpl: &PromptTemplate,
) -> Result<RenderedPrompt> {
    tpl.expect_mode(PromptMode::Setwise)?;
    if docs.len() < 2 || docs.len() > MAX_SET_SIZE {
        return Err(Error::Argument(format!(
            "setwise prompts take 2..={MAX_SET_SIZE} passages, got {}",
            docs.len()
        )));
    }
    tpl.render_within_budget(
        |budget| {
            let mut prov = Provenance::default();
            let mut blocks = Vec::with_capacity(examples.len());
            for ex in examples {
                let ps = vec![
                    truncate_passage(&ex.first_passage.text, budget)?,
                    truncate_passage(&ex.second_passage.text, budget)?,
                ];
                blocks.push(fill(
                    &tpl.example_block_format,
                    &[
                        ("query", &ex.example_query.text),
                        ("passages", &numbered_passages(&ps)),
                        ("label", ex.gold_label.as_str()),
                    ],
                ));
                prov.example_query_ids.push(ex.example_query.query_id.clone());
                prov.passage_doc_ids.push(ex.first_passage.doc_id.clone());
                prov.passage_doc_ids.push(ex.second_passage.doc_id.clone());
            }
            let ps = docs
                .iter()
                .map(|d| truncate_passage(&d.text, budget))
                .collect::<Result<Vec<_>>>()?;
            let live = fill(
                &tpl.example_block_format,
                &[("query", &query.text), ("passages", &numbered_passages(&ps)), ("label", "")],
            );
            prov.passage_doc_ids.extend(docs.iter().map(|d| d.doc_id.clone()));
            Ok((tpl.assemble(blocks, live), prov))
        },
        tpl.answer_tokens(docs.len()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn q() -> Query {
        Query::new("q1", "is cdg airport in main paris")
    }

    fn example(label: GoldLabel) -> IclExample {
        IclExample {
            example_query: Query::new("t1", "which airport in paris is closest to the city"),
            first_passage: Document::new("p1", "first example passage"),
            second_passage: Document::new("p2", "second example passage"),
            gold_label: label,
            negative_rank: 150,
        }
    }

    fn count_blocks(text: &str) -> usize {
        text.matches("Query: ").count()
    }

    #[test]
    fn zero_shot_has_one_block() {
        let tpl = PromptTemplate::default_for(PromptMode::Pairwise);
        let r = render_pairwise(&q(), &Document::new("a", "alpha"), &Document::new("b", "beta"), &[], &tpl)
            .unwrap();
        assert_eq!(count_blocks(&r.text), 1);
        assert_eq!(r.answer_tokens, ["1", "2"]);
        assert!(r.text.ends_with("Output:"));
        assert!(r.text.contains("Passage 1: alpha\nPassage 2: beta"));
    }

    #[test]
    fn example_block_carries_gold_label() {
        let tpl = PromptTemplate::default_for(PromptMode::Pairwise);
        let r = render_pairwise(
            &q(),
            &Document::new("a", "alpha"),
            &Document::new("b", "beta"),
            &[example(GoldLabel::Second)],
            &tpl,
        )
        .unwrap();
        assert_eq!(count_blocks(&r.text), 2);
        let first_block_end = r.text.find("\n\nQuery: is cdg").unwrap();
        assert!(r.text[..first_block_end].ends_with("Output: 2"));
        assert_eq!(r.provenance.example_query_ids, ["t1"]);
        assert_eq!(r.provenance.passage_doc_ids, ["p1", "p2", "a", "b"]);
    }

    #[test]
    fn rendering_is_deterministic() {
        let tpl = PromptTemplate::default_for(PromptMode::Pairwise);
        let ex = [example(GoldLabel::First), example(GoldLabel::Second)];
        let a = render_pairwise(&q(), &Document::new("a", "x"), &Document::new("b", "y"), &ex, &tpl).unwrap();
        let b = render_pairwise(&q(), &Document::new("a", "x"), &Document::new("b", "y"), &ex, &tpl).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn placeholders_in_passages_are_not_expanded() {
        let tpl = PromptTemplate::default_for(PromptMode::Pairwise);
        let r = render_pairwise(
            &q(),
            &Document::new("a", "{label} {query}"),
            &Document::new("b", "b"),
            &[],
            &tpl,
        )
        .unwrap();
        assert!(r.text.contains("Passage 1: {label} {query}"));
    }

    #[test]
    fn truncation_at_whitespace_and_multibyte() {
        assert_eq!(truncate_passage("hello world again", 11).unwrap(), "hello world");
        assert_eq!(truncate_passage("hello world again", 8).unwrap(), "hello");
        assert_eq!(truncate_passage("short", 100).unwrap(), "short");
        assert_eq!(truncate_passage("", 3).unwrap(), "");
        // multibyte characters are counted as characters, never split
        assert_eq!(truncate_passage("ééé ééé", 5).unwrap(), "ééé");
        assert!(matches!(truncate_passage("unbreakable", 4), Err(Error::Render(_))));
    }

    #[test]
    fn tiny_budget_is_render_error() {
        let tpl = PromptTemplate::default_for(PromptMode::Pairwise).with_truncation_budget(2);
        let err = render_pairwise(&q(), &Document::new("a", "alpha"), &Document::new("b", "b"), &[], &tpl);
        assert!(matches!(err, Err(Error::Render(_))));
    }

    #[test]
    fn context_budget_shrinks_passages() {
        let long = "word ".repeat(400);
        let tpl = PromptTemplate::default_for(PromptMode::Pairwise).with_context_budget(Some(900));
        let r = render_pairwise(&q(), &Document::new("a", &long), &Document::new("b", &long), &[], &tpl).unwrap();
        assert!(r.text.chars().count() <= 900);
        let impossible = PromptTemplate::default_for(PromptMode::Pairwise).with_context_budget(Some(10));
        assert!(render_pairwise(&q(), &Document::new("a", "x y"), &Document::new("b", "z"), &[], &impossible).is_err());
    }

    #[test]
    fn pointwise_zero_shot_and_example() {
        let tpl = PromptTemplate::default_for(PromptMode::Pointwise);
        let r = render_pointwise(&q(), &Document::new("a", "alpha"), &[], &tpl).unwrap();
        assert_eq!(count_blocks(&r.text), 1);
        assert_eq!(r.answer_tokens, ["true", "false"]);
        let r = render_pointwise(&q(), &Document::new("a", "alpha"), &[example(GoldLabel::Second)], &tpl).unwrap();
        assert_eq!(count_blocks(&r.text), 2);
        assert!(r.text.contains("Passage: first example passage\nOutput: false"));
    }

    #[test]
    fn setwise_tokens_and_permutation() {
        let tpl = PromptTemplate::default_for(PromptMode::Setwise);
        let d: Vec<Document> = ["x", "y", "z"].iter().map(|t| Document::new(*t, format!("text {t}"))).collect();
        let r = render_setwise(&q(), &[&d[0], &d[1], &d[2]], &[], &tpl).unwrap();
        assert_eq!(r.answer_tokens, ["1", "2", "3"]);
        assert!(r.text.contains("Passage 1: text x\nPassage 2: text y\nPassage 3: text z"));
        let p = render_setwise(&q(), &[&d[2], &d[0], &d[1]], &[], &tpl).unwrap();
        assert_eq!(p.answer_tokens, r.answer_tokens);
        assert!(p.text.contains("Passage 1: text z\nPassage 2: text x\nPassage 3: text y"));
        assert_eq!(p.provenance.passage_doc_ids, ["z", "x", "y"]);
        assert!(render_setwise(&q(), &[&d[0]], &[], &tpl).is_err());
    }

    #[test]
    fn wrong_mode_rejected() {
        let tpl = PromptTemplate::default_for(PromptMode::Pointwise);
        assert!(render_pairwise(&q(), &Document::new("a", "x"), &Document::new("b", "y"), &[], &tpl).is_err());
    }

    #[test]
    fn custom_template_file() {
        let text = "Pick one.\n{examples}\nQ={query}|A={passage1}|B={passage2}|{label}\n";
        let tpl = PromptTemplate::parse(PromptMode::Pairwise, text).unwrap();
        let r = render_pairwise(&q(), &Document::new("a", "x"), &Document::new("b", "y"), &[example(GoldLabel::First)], &tpl)
            .unwrap();
        assert_eq!(
            r.text,
            "Pick one.\nQ=which airport in paris is closest to the city|A=first example passage|B=second example passage|1\n\nQ=is cdg airport in main paris|A=x|B=y|"
        );
        assert!(PromptTemplate::parse(PromptMode::Pairwise, "no marker {query}").is_err());
        assert!(PromptTemplate::parse(PromptMode::Pairwise, "x\n{examples}\n{query} {passage1}").is_err());
    }

    proptest! {
        #[test]
        fn swapping_passages_only_swaps_slots(a in "[A-F]{2,12}( [A-F]{1,8}){0,4}", b in "[U-Z]{2,12}( [U-Z]{1,8}){0,4}", shots in 0usize..3) {
            let tpl = PromptTemplate::default_for(PromptMode::Pairwise);
            let da = Document::new("a", a.clone());
            let db = Document::new("b", b.clone());
            let ex: Vec<_> = (0..shots).map(|i| example(if i % 2 == 0 { GoldLabel::First } else { GoldLabel::Second })).collect();
            let fwd = render_pairwise(&q(), &da, &db, &ex, &tpl).unwrap().text;
            let bwd = render_pairwise(&q(), &db, &da, &ex, &tpl).unwrap().text;
            let mask = |t: &str, first: &str, second: &str| t.replace(first, "<<P1>>").replace(second, "<<P2>>");
            prop_assert_eq!(mask(&fwd, &a, &b), mask(&bwd, &b, &a));
            prop_assert_ne!(fwd, bwd);
        }

        #[test]
        fn provenance_matches_text(shots in 0usize..4, n in 2usize..6) {
            let tpl = PromptTemplate::default_for(PromptMode::Setwise);
            let docs: Vec<Document> = (0..n).map(|i| Document::new(format!("d{i}"), format!("passage number {i}"))).collect();
            let refs: Vec<&Document> = docs.iter().collect();
            let ex: Vec<_> = (0..shots).map(|_| example(GoldLabel::First)).collect();
            let r = render_setwise(&q(), &refs, &ex, &tpl).unwrap();
            prop_assert_eq!(r.provenance.passage_doc_ids.len(), 2 * shots + n);
            prop_assert_eq!(r.text.matches("Passage ").count(), 2 * shots + n);
            prop_assert_eq!(count_blocks(&r.text), shots + 1);
        }
    }
}
