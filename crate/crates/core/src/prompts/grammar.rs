//! Marker-token grammar for model replies.
//!
//! Replies are scanned for the reserved bracket markers only; everything
//! between blocks is chatter and ignored. A marker that does not fit the
//! grammar is an error, so a damaged reply never parses into something
//! other than what the model wrote.

use std::fmt;

use thiserror::Error;

use super::{Critique, Difficulty, QuestionDraft};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("malformed block at byte {offset}: {reason}")]
    MalformedBlock { offset: usize, reason: String },
    #[error("missing difficulty level(s): {}", list(.0))]
    MissingDifficulty(Vec<Difficulty>),
    #[error("difficulty {0} appears more than once")]
    DuplicateDifficulty(Difficulty),
    #[error("{0} question is empty")]
    EmptyQuestion(Difficulty),
    #[error("missing {0} section")]
    MissingSection(Section),
    #[error("{0} section is empty")]
    EmptySection(Section),
}

fn list(levels: &[Difficulty]) -> String {
    levels
        .iter()
        .map(|d| d.as_str())
        .collect::<Vec<_>>()
        .join(", ")
}

impl ParseError {
    /// Stable name of the error class, used for failure tallies.
    pub fn class(&self) -> &'static str {
        match self {
            ParseError::MalformedBlock { .. } => "MalformedBlock",
            ParseError::MissingDifficulty(_) => "MissingDifficulty",
            ParseError::DuplicateDifficulty(_) => "DuplicateDifficulty",
            ParseError::EmptyQuestion(_) => "EmptyQuestion",
            ParseError::MissingSection(_) => "MissingSection",
            ParseError::EmptySection(_) => "EmptySection",
        }
    }

    fn malformed(offset: usize, reason: impl Into<String>) -> Self {
        ParseError::MalformedBlock {
            offset,
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Section {
    Critique,
    Strength,
    Weakness,
    Suggestion,
}

impl Section {
    fn name(self) -> &'static str {
        match self {
            Section::Critique => "Critique",
            Section::Strength => "Strength",
            Section::Weakness => "Weakness",
            Section::Suggestion => "Suggestion",
        }
    }
}

impl fmt::Display for Section {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

struct Token<K> {
    kind: K,
    start: usize,
    end: usize,
}

/// Finds every occurrence of the given markers. Markers all begin with `[`
/// and contain no other `[`, so candidate positions are exactly the `[`
/// bytes, which are always char boundaries.
fn tokenize<K: Copy>(raw: &str, markers: &[(&str, K)]) -> Vec<Token<K>> {
    let mut out = Vec::new();
    for (pos, _) in raw.match_indices('[') {
        let rest = &raw[pos..];
        if let Some((m, kind)) = markers.iter().find(|(m, _)| rest.starts_with(m)) {
            out.push(Token {
                kind: *kind,
                start: pos,
                end: pos + m.len(),
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum QTok {
    Level(Difficulty),
    Start,
    End,
}

const QUESTION_MARKERS: &[(&str, QTok)] = &[
    ("[Easy]", QTok::Level(Difficulty::Easy)),
    ("[Medium]", QTok::Level(Difficulty::Medium)),
    ("[Hard]", QTok::Level(Difficulty::Hard)),
    ("[Question Start]", QTok::Start),
    ("[Question End]", QTok::End),
];

/// Parses `[Level][Question Start]text[Question End]` blocks. Exactly one
/// block per difficulty is required; drafts come back in reply order with
/// trimmed text.
pub fn parse_question_response(raw: &str) -> Result<Vec<QuestionDraft>, ParseError> {
    let toks = tokenize(raw, QUESTION_MARKERS);
    let mut drafts: Vec<QuestionDraft> = Vec::with_capacity(3);
    let mut i = 0;
    while i < toks.len() {
        let tok = &toks[i];
        match tok.kind {
            QTok::Level(level) => {
                let start = match toks.get(i + 1) {
                    Some(t) if t.kind == QTok::Start => t,
                    _ => {
                        return Err(ParseError::malformed(
                            tok.start,
                            format!("{} is not followed by [Question Start]", level.marker()),
                        ))
                    }
                };
                if !raw[tok.end..start.start].trim().is_empty() {
                    return Err(ParseError::malformed(
                        tok.end,
                        format!("text between {} and [Question Start]", level.marker()),
                    ));
                }
                let end = match toks.get(i + 2) {
                    Some(t) if t.kind == QTok::End => t,
                    Some(t) => {
                        return Err(ParseError::malformed(
                            t.start,
                            "marker inside a question body",
                        ))
                    }
                    None => {
                        return Err(ParseError::malformed(start.start, "unterminated question block"))
                    }
                };
                drafts.push(QuestionDraft::new(level, raw[start.end..end.start].trim()));
                i += 3;
            }
            QTok::Start => {
                return Err(ParseError::malformed(
                    tok.start,
                    "[Question Start] without a difficulty label",
                ))
            }
            QTok::End => return Err(ParseError::malformed(tok.start, "stray [Question End]")),
        }
    }

    if let Some(d) = drafts.iter().find(|d| d.text.is_empty()) {
        return Err(ParseError::EmptyQuestion(d.difficulty));
    }
    for (idx, d) in drafts.iter().enumerate() {
        if drafts[..idx].iter().any(|e| e.difficulty == d.difficulty) {
            return Err(ParseError::DuplicateDifficulty(d.difficulty));
        }
    }
    let missing: Vec<Difficulty> = Difficulty::ALL
        .into_iter()
        .filter(|l| !drafts.iter().any(|d| d.difficulty == *l))
        .collect();
    if !missing.is_empty() {
        return Err(ParseError::MissingDifficulty(missing));
    }
    Ok(drafts)
}

/// Inverse of [`parse_question_response`] for well-formed drafts.
pub fn format_blocks(drafts: &[QuestionDraft]) -> String {
    drafts
        .iter()
        .map(|d| format!("{}[Question Start]{}[Question End]", d.difficulty.marker(), d.text))
        .collect::<Vec<_>>()
        .join("\n\n")
}

const CRITIQUE_MARKERS: &[(&str, (Section, bool))] = &[
    ("[Critique Start]", (Section::Critique, true)),
    ("[Critique End]", (Section::Critique, false)),
    ("[Strength Start]", (Section::Strength, true)),
    ("[Strength End]", (Section::Strength, false)),
    ("[Weakness Start]", (Section::Weakness, true)),
    ("[Weakness End]", (Section::Weakness, false)),
    ("[Suggestion Start]", (Section::Suggestion, true)),
    ("[Suggestion End]", (Section::Suggestion, false)),
];

struct Span {
    kind: Section,
    offset: usize,
    body: (usize, usize),
    children: Vec<Span>,
}

/// Parses the three critique sections. The `[Critique Start]`/`[Critique
/// End]` wrapper is optional. Markers must nest like parentheses; a section
/// body may itself contain balanced markers, which are kept verbatim.
pub fn parse_critique_response(raw: &str) -> Result<Critique, ParseError> {
    struct Open {
        kind: Section,
        offset: usize,
        body_start: usize,
        children: Vec<Span>,
    }

    let mut stack: Vec<Open> = Vec::new();
    let mut top: Vec<Span> = Vec::new();
    for tok in tokenize(raw, CRITIQUE_MARKERS) {
        let (kind, is_start) = tok.kind;
        if is_start {
            stack.push(Open {
                kind,
                offset: tok.start,
                body_start: tok.end,
                children: Vec::new(),
            });
            continue;
        }
        match stack.pop() {
            Some(open) if open.kind == kind => {
                let span = Span {
                    kind,
                    offset: open.offset,
                    body: (open.body_start, tok.start),
                    children: open.children,
                };
                match stack.last_mut() {
                    Some(parent) => parent.children.push(span),
                    None => top.push(span),
                }
            }
            Some(open) => {
                return Err(ParseError::malformed(
                    tok.start,
                    format!("[{kind} End] closes [{} Start]", open.kind),
                ))
            }
            None => return Err(ParseError::malformed(tok.start, format!("stray [{kind} End]"))),
        }
    }
    if let Some(open) = stack.last() {
        return Err(ParseError::malformed(
            open.offset,
            format!("unterminated [{} Start]", open.kind),
        ));
    }

    let wrappers: Vec<&Span> = top.iter().filter(|s| s.kind == Section::Critique).collect();
    if wrappers.len() > 1 {
        return Err(ParseError::malformed(
            wrappers[1].offset,
            "more than one [Critique Start] block",
        ));
    }
    let candidates: Vec<&Span> = top
        .iter()
        .filter(|s| s.kind != Section::Critique)
        .chain(wrappers.iter().flat_map(|w| w.children.iter()))
        .collect();

    let section = |kind: Section| -> Result<String, ParseError> {
        let mut found = candidates.iter().filter(|s| s.kind == kind);
        let span = found.next().ok_or(ParseError::MissingSection(kind))?;
        if let Some(dup) = found.next() {
            return Err(ParseError::malformed(
                dup.offset,
                format!("duplicate [{kind} Start] section"),
            ));
        }
        let body = raw[span.body.0..span.body.1].trim();
        if body.is_empty() {
            return Err(ParseError::EmptySection(kind));
        }
        Ok(body.to_owned())
    };
    Ok(Critique {
        strength: section(Section::Strength)?,
        weakness: section(Section::Weakness)?,
        suggestion: section(Section::Suggestion)?,
    })
}

/// Critique in the reply format the critique template asks for.
pub fn format_critique(c: &Critique) -> String {
    format!(
        "[Critique Start]\n\n[Strength Start]{}[Strength End]\n\n[Weakness Start]{}[Weakness End]\n\n[Suggestion Start]{}[Suggestion End]\n\n[Critique End]",
        c.strength, c.weakness, c.suggestion
    )
}

/// Lenient split of a tag-expansion reply into candidate labels. Accepts
/// comma, ideographic comma, semicolon and newline separators, list bullets,
/// numbering, quotes and a leading "Subtopics:" style prefix.
pub fn parse_tag_list(raw: &str) -> Vec<String> {
    raw.split(|c: char| matches!(c, ',' | '，' | '、' | ';' | '；' | '\n'))
        .filter_map(|item| {
            let mut item = item.trim();
            if let Some(idx) = item.rfind([':', '：']) {
                item = &item[idx + item[idx..].chars().next().map_or(1, char::len_utf8)..];
            }
            let item = item
                .trim_start_matches(|c: char| {
                    c.is_ascii_digit() || matches!(c, '-' | '*' | '•' | '.' | ')' | '(' | '#')
                })
                .trim()
                .trim_matches(|c: char| {
                    matches!(c, '"' | '\'' | '“' | '”' | '‘' | '’' | '「' | '」' | '《' | '》' | '.' | '。')
                })
                .trim();
            (!item.is_empty()).then(|| item.to_owned())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn drafts() -> Vec<QuestionDraft> {
        vec![
            QuestionDraft::new(Difficulty::Easy, "What is a map?"),
            QuestionDraft::new(Difficulty::Medium, "How did medieval maps depict Jerusalem?"),
            QuestionDraft::new(Difficulty::Hard, "Why did Ptolemy's coordinates drift eastward?"),
        ]
    }

    #[test]
    fn well_formed_reply_with_chatter() {
        let raw = format!("Sure! Here are your questions.\n\n{}\n\nHope this helps.", format_blocks(&drafts()));
        assert_eq!(parse_question_response(&raw).unwrap(), drafts());
    }

    #[test]
    fn reply_order_is_preserved() {
        let mut d = drafts();
        d.reverse();
        assert_eq!(parse_question_response(&format_blocks(&d)).unwrap(), d);
    }

    #[test]
    fn newline_between_label_and_start_is_allowed() {
        let raw = "[Easy]\n[Question Start] a b c [Question End]\n[Medium] [Question Start]d e f[Question End][Hard][Question Start]g[Question End]";
        let parsed = parse_question_response(raw).unwrap();
        assert_eq!(parsed[0].text, "a b c");
    }

    #[test]
    fn missing_end_marker_is_malformed() {
        let raw = "[Easy][Question Start]a[Question End][Medium][Question Start]b[Hard][Question Start]c[Question End]";
        assert!(matches!(
            parse_question_response(raw),
            Err(ParseError::MalformedBlock { .. })
        ));
    }

    #[test]
    fn duplicate_hard_without_easy() {
        let raw = "[Hard][Question Start]a[Question End][Medium][Question Start]b[Question End][Hard][Question Start]c[Question End]";
        assert_eq!(
            parse_question_response(raw),
            Err(ParseError::DuplicateDifficulty(Difficulty::Hard))
        );
    }

    #[test]
    fn missing_and_empty_levels() {
        let raw = "[Easy][Question Start]a[Question End][Hard][Question Start]c[Question End]";
        assert_eq!(
            parse_question_response(raw),
            Err(ParseError::MissingDifficulty(vec![Difficulty::Medium]))
        );
        let raw = "[Easy][Question Start]  [Question End][Medium][Question Start]b[Question End][Hard][Question Start]c[Question End]";
        assert_eq!(
            parse_question_response(raw),
            Err(ParseError::EmptyQuestion(Difficulty::Easy))
        );
        assert_eq!(
            parse_question_response("no blocks at all"),
            Err(ParseError::MissingDifficulty(Difficulty::ALL.to_vec()))
        );
    }

    #[test]
    fn stray_markers_are_errors() {
        for raw in [
            "[Question End]",
            "[Question Start]x[Question End]",
            "[Easy] then text [Question Start]x[Question End]",
            "[Easy]",
        ] {
            assert!(
                matches!(parse_question_response(raw), Err(ParseError::MalformedBlock { .. })),
                "{raw}"
            );
        }
    }

    const WORKED_CRITIQUE: &str = r#"[Strength Start]

Strengths:

1.Comprehensive Response:
The model provides an exhaustive overview of the evolution of maps, covering various historical periods, notable examples, and technological
advancements.

2.Structured Formatting:
The use of clear headings, numbered lists, and concise bullet points enhances readability and facilitates easy understanding of complex
information.

3.Engagement Initiator:
The response ends with an interactive element, encouraging user participation and potentially leading to a more in-depth discussion.

4.Honesty About Limitations:
The model transparently acknowledges its limitations as a digital AI assistant, setting clear expectations for the user.

[Strength End]

[Weakness Start]

Weaknesses:

1.Length and Information Overload:
The response is lengthy and packed with numerous examples, which might overwhelm the user. Some points could be elaborated upon in
subsequent interactions rather than all at once.

2.Lack of Visual Enhancement:
Despite discussing maps, the response is text-only. Incorporating images, diagrams, or even suggesting external visual resources could
significantly enhance the user's understanding and engagement.

3.Initial Acknowledgement Could Be Brief:
While honesty about the model's limitations is appreciated, the initial acknowledgement could be more concise to quickly transition to the
more engaging and informative sections.

4.Question Response Mismatch:
The user inquired about the oldest map the model has "seen," which the model addresses by stating its inability to see. However, the model
could more directly address the implicit curiosity about old maps by initially highlighting one or two of the oldest known maps before delving
into the broader evolution.

[Weakness End]

[Suggestion Start]

Suggestions for Improvement:

1.Tiered Information Disclosure:
Initially provide a brief overview of the evolution of maps and highlight 2-3 of the oldest known maps. Offer the user the option to explore
specific eras or types of maps in more detail, facilitating a more interactive and paced information exchange.

2.Incorporate Visual Aids or References:
Suggest reputable online resources or include descriptions that encourage users to visually explore the mentioned maps, enhancing their
understanding of cartographic developments.

3.Refine the Initial Limitation Disclosure:
Condense the initial acknowledgement to a single sentence, swiftly moving the focus to the engaging content (e.g., "As a text-based AI, I'll
guide you through the fascinating evolution of maps, highlighting notable examples and innovations.").

[Suggestion End]
"#;

    #[test]
    fn worked_critique_without_wrapper_parses() {
        let c = parse_critique_response(WORKED_CRITIQUE).unwrap();
        assert!(c.strength.starts_with("Strengths:"));
        assert!(c.weakness.contains("Information Overload"));
        assert!(c.suggestion.ends_with("innovations.\")."));
        assert!(c.is_complete());
    }

    #[test]
    fn critique_round_trip_through_formatter() {
        let c = Critique {
            strength: "clear".into(),
            weakness: "long".into(),
            suggestion: "trim".into(),
        };
        assert_eq!(parse_critique_response(&format_critique(&c)).unwrap(), c);
    }

    #[test]
    fn critique_missing_suggestion() {
        let raw = "[Strength Start]a[Strength End][Weakness Start]b[Weakness End]";
        assert_eq!(
            parse_critique_response(raw),
            Err(ParseError::MissingSection(Section::Suggestion))
        );
    }

    #[test]
    fn critique_balanced_inner_markers_are_kept() {
        let raw = "[Strength Start]good [Weakness Start]quoted[Weakness End] bit[Strength End]\
                   [Weakness Start]b[Weakness End][Suggestion Start]c[Suggestion End]";
        let c = parse_critique_response(raw).unwrap();
        assert_eq!(c.strength, "good [Weakness Start]quoted[Weakness End] bit");
        assert_eq!(c.weakness, "b");
    }

    #[test]
    fn critique_structural_errors() {
        for raw in [
            "[Strength Start]a[Weakness End]",
            "[Strength End]",
            "[Strength Start]a",
            "[Strength Start]a[Strength End][Strength Start]b[Strength End][Weakness Start]b[Weakness End][Suggestion Start]c[Suggestion End]",
            "[Critique Start][Critique End][Critique Start][Critique End]",
        ] {
            assert!(
                matches!(parse_critique_response(raw), Err(ParseError::MalformedBlock { .. })),
                "{raw}"
            );
        }
        assert_eq!(
            parse_critique_response("[Strength Start] [Strength End][Weakness Start]b[Weakness End][Suggestion Start]c[Suggestion End]"),
            Err(ParseError::EmptySection(Section::Strength))
        );
    }

    #[test]
    fn tag_list_is_lenient() {
        assert_eq!(
            parse_tag_list("machine learning, deep learning, natural language processing"),
            vec!["machine learning", "deep learning", "natural language processing"]
        );
        assert_eq!(
            parse_tag_list("Subtopics:\n1. neural networks\n2. \"deep learning frameworks\"\n- language models."),
            vec!["neural networks", "deep learning frameworks", "language models"]
        );
        assert_eq!(parse_tag_list("机器学习、深度学习，自然语言处理"), vec!["机器学习", "深度学习", "自然语言处理"]);
        assert!(parse_tag_list(" , ,\n").is_empty());
    }
}
