//! Prompt templates for the three model interactions (question synthesis,
//! critique, refinement) plus tag expansion, and strict parsers for the
//! bracket-delimited replies.

mod exemplars;
mod grammar;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::Lang;

pub use exemplars::{ExemplarBank, ExemplarBanks};
pub use grammar::{
    format_blocks, format_critique, parse_critique_response, parse_question_response,
    parse_tag_list, ParseError, Section,
};

/// Marker strings that appear verbatim in the rendered prompts. The mock
/// backend uses them to recognise which interaction a request belongs to.
pub mod markers {
    pub const QUESTION_START: &str = "[Question Start]";
    pub const QUESTION_END: &str = "[Question End]";
    /// Format scaffold printed inside the question-synthesis template.
    pub const QUESTION_SCAFFOLD: &str = "[Easy][Question Start]Question[Question End]";
    /// Format scaffold printed inside the critique template.
    pub const CRITIQUE_SCAFFOLD: &str = "[Strength Start]Strength[Strength End]";
    pub const REFINE_ORIGINAL: &str = "[Original Response]";
    pub const EXPAND_COUNT: &str = "[Subtopic Count]";
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PromptError {
    #[error("exemplar list is empty")]
    EmptyExemplars,
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("template `{template}` is missing placeholder {placeholder}")]
    MissingPlaceholder {
        template: &'static str,
        placeholder: &'static str,
    },
    #[error("exemplar bank: {0}")]
    InvalidBank(String),
    #[error("reading {path}: {message}")]
    Io { path: String, message: String },
}

/// The seven chat scenarios a question can be framed in, in their canonical
/// inclusion order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    RolePlaying,
    DailyChat,
    DomainQa,
    GivenMaterialProcessing,
    ResponseFormatControl,
    View,
    Creation,
}

impl TaskKind {
    pub const ALL: [TaskKind; 7] = [
        TaskKind::RolePlaying,
        TaskKind::DailyChat,
        TaskKind::DomainQa,
        TaskKind::GivenMaterialProcessing,
        TaskKind::ResponseFormatControl,
        TaskKind::View,
        TaskKind::Creation,
    ];

    /// Identifier used in files (`role_playing`, `domain_qa`, ...).
    pub fn key(self) -> &'static str {
        match self {
            TaskKind::RolePlaying => "role_playing",
            TaskKind::DailyChat => "daily_chat",
            TaskKind::DomainQa => "domain_qa",
            TaskKind::GivenMaterialProcessing => "given_material_processing",
            TaskKind::ResponseFormatControl => "response_format_control",
            TaskKind::View => "view",
            TaskKind::Creation => "creation",
        }
    }

    pub fn display_name(self, lang: Lang) -> &'static str {
        match (lang, self) {
            (Lang::En, TaskKind::RolePlaying) => "Role Playing",
            (Lang::En, TaskKind::DailyChat) => "Daily Chat",
            (Lang::En, TaskKind::DomainQa) => "Domain QA",
            (Lang::En, TaskKind::GivenMaterialProcessing) => "Given Material Processing",
            (Lang::En, TaskKind::ResponseFormatControl) => "Response Format Control",
            (Lang::En, TaskKind::View) => "View",
            (Lang::En, TaskKind::Creation) => "Creation",
            (Lang::Zh, TaskKind::RolePlaying) => "角色扮演",
            (Lang::Zh, TaskKind::DailyChat) => "日常对话",
            (Lang::Zh, TaskKind::DomainQa) => "领域问答",
            (Lang::Zh, TaskKind::GivenMaterialProcessing) => "给定材料处理",
            (Lang::Zh, TaskKind::ResponseFormatControl) => "回复格式控制",
            (Lang::Zh, TaskKind::View) => "观点",
            (Lang::Zh, TaskKind::Creation) => "创作",
        }
    }

    pub fn description(self, lang: Lang) -> &'static str {
        match (lang, self) {
            (Lang::En, TaskKind::RolePlaying) => "Engage in simulated conversations or behaviors by assuming different roles to explore various perspectives or scenarios.",
            (Lang::En, TaskKind::DailyChat) => "Participate in casual conversations, including greetings, small talk, and sharing everyday experiences.",
            (Lang::En, TaskKind::DomainQa) => "Provide specialized and accurate answers to questions within a specific domain or field.",
            (Lang::En, TaskKind::GivenMaterialProcessing) => "Analyze, process, and summarize given texts, data, or other materials.",
            (Lang::En, TaskKind::ResponseFormatControl) => "Adjust the format, style, and expression of responses according to specified requirements.",
            (Lang::En, TaskKind::View) => "Offer personal opinions, insights, or perspectives on a particular topic.",
            (Lang::En, TaskKind::Creation) => "Generate new content such as articles, stories, poetry, designs, etc.",
            (Lang::Zh, TaskKind::RolePlaying) => "通过扮演不同角色进行模拟对话或行为，以探索不同的视角或情境。",
            (Lang::Zh, TaskKind::DailyChat) => "参与轻松的日常对话，包括问候、闲聊以及分享日常经历。",
            (Lang::Zh, TaskKind::DomainQa) => "针对特定领域或专业内的问题给出专业而准确的回答。",
            (Lang::Zh, TaskKind::GivenMaterialProcessing) => "对给定的文本、数据或其他材料进行分析、处理和总结。",
            (Lang::Zh, TaskKind::ResponseFormatControl) => "按照指定要求调整回复的格式、风格和表达方式。",
            (Lang::Zh, TaskKind::View) => "就特定话题发表个人观点、见解或看法。",
            (Lang::Zh, TaskKind::Creation) => "生成新的内容，例如文章、故事、诗歌、设计等。",
        }
    }

    /// Text substituted for the `[[domain]]` placeholder.
    pub fn domain_text(self, lang: Lang) -> String {
        match lang {
            Lang::En => format!(
                "{} ({})",
                self.display_name(lang),
                self.description(lang).trim_end_matches('.')
            ),
            Lang::Zh => format!(
                "{}（{}）",
                self.display_name(lang),
                self.description(lang).trim_end_matches('。')
            ),
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let wanted: String = s
            .chars()
            .filter(|c| c.is_alphanumeric())
            .collect::<String>()
            .to_lowercase();
        TaskKind::ALL
            .into_iter()
            .find(|t| t.key().replace('_', "") == wanted)
            .ok_or_else(|| format!("unknown task `{s}`"))
    }
}

/// Question difficulty; ordered Easy < Medium < Hard.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    #[serde(alias = "Easy", alias = "EASY")]
    Easy,
    #[serde(alias = "Medium", alias = "MEDIUM")]
    Medium,
    #[serde(alias = "Hard", alias = "HARD")]
    Hard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Medium, Difficulty::Hard];

    /// Label marker as it appears in the reply grammar, e.g. `[Easy]`.
    pub fn marker(self) -> &'static str {
        match self {
            Difficulty::Easy => "[Easy]",
            Difficulty::Medium => "[Medium]",
            Difficulty::Hard => "[Hard]",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Medium => "medium",
            Difficulty::Hard => "hard",
        }
    }
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Difficulty {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "easy" => Ok(Difficulty::Easy),
            "medium" => Ok(Difficulty::Medium),
            "hard" => Ok(Difficulty::Hard),
            other => Err(format!("unknown difficulty `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionDraft {
    pub difficulty: Difficulty,
    pub text: String,
}

impl QuestionDraft {
    pub fn new(difficulty: Difficulty, text: impl Into<String>) -> Self {
        Self {
            difficulty,
            text: text.into(),
        }
    }
}

/// Strength / weakness / suggestion triple written by the model about its
/// own answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Critique {
    pub strength: String,
    pub weakness: String,
    pub suggestion: String,
}

impl Critique {
    pub fn is_complete(&self) -> bool {
        [&self.strength, &self.weakness, &self.suggestion]
            .iter()
            .all(|s| !s.trim().is_empty())
    }
}

/// One language's set of template texts.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    pub question: String,
    pub critique: String,
    pub refine: String,
    pub expand: String,
    pub answer_system: String,
}

const REQUIRED: &[(&str, fn(&TemplateSet) -> &str, &[&str])] = &[
    ("question", |t| &t.question, &["[[domain]]", "[[theme]]", "[example list]"]),
    ("critique", |t| &t.critique, &["[dialogue]"]),
    (
        "refine",
        |t| &t.refine,
        &["[[question]]", "[[response]]", "[[strength]]", "[[weakness]]", "[[suggestion]]"],
    ),
    ("expand", |t| &t.expand, &["[[theme]]", "[[path]]", "[[count]]"]),
];

impl TemplateSet {
    pub fn builtin(lang: Lang) -> Self {
        match lang {
            Lang::En => Self {
                question: include_str!("../../templates/en/question.txt").to_owned(),
                critique: include_str!("../../templates/en/critique.txt").to_owned(),
                refine: include_str!("../../templates/en/refine.txt").to_owned(),
                expand: include_str!("../../templates/en/expand.txt").to_owned(),
                answer_system: include_str!("../../templates/en/answer_system.txt")
                    .trim()
                    .to_owned(),
            },
            Lang::Zh => Self {
                question: include_str!("../../templates/zh/question.txt").to_owned(),
                critique: include_str!("../../templates/zh/critique.txt").to_owned(),
                refine: include_str!("../../templates/zh/refine.txt").to_owned(),
                expand: include_str!("../../templates/zh/expand.txt").to_owned(),
                answer_system: include_str!("../../templates/zh/answer_system.txt")
                    .trim()
                    .to_owned(),
            },
        }
    }

    /// Loads `question.txt`, `critique.txt`, `refine.txt`, `expand.txt` and
    /// `answer_system.txt` from a directory; files that are absent fall back
    /// to the built-in text for `lang`.
    pub fn load_dir(dir: &Path, lang: Lang) -> Result<Self, PromptError> {
        let mut set = Self::builtin(lang);
        let read = |name: &str| -> Result<Option<String>, PromptError> {
            let path = dir.join(name);
            if !path.exists() {
                return Ok(None);
            }
            std::fs::read_to_string(&path).map(Some).map_err(|e| PromptError::Io {
                path: path.display().to_string(),
                message: e.to_string(),
            })
        };
        if let Some(t) = read("question.txt")? {
            set.question = t;
        }
        if let Some(t) = read("critique.txt")? {
            set.critique = t;
        }
        if let Some(t) = read("refine.txt")? {
            set.refine = t;
        }
        if let Some(t) = read("expand.txt")? {
            set.expand = t;
        }
        if let Some(t) = read("answer_system.txt")? {
            set.answer_system = t.trim().to_owned();
        }
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        for (name, get, placeholders) in REQUIRED {
            let text = get(self);
            for p in *placeholders {
                if !text.contains(p) {
                    return Err(PromptError::MissingPlaceholder {
                        template: name,
                        placeholder: p,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Template sets for both languages.
#[derive(Debug, Clone)]
pub struct PromptBook {
    en: TemplateSet,
    zh: TemplateSet,
}

impl Default for PromptBook {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PromptBook {
    pub fn builtin() -> Self {
        Self {
            en: TemplateSet::builtin(Lang::En),
            zh: TemplateSet::builtin(Lang::Zh),
        }
    }

    /// Reads overrides from `<dir>/en/*.txt` and `<dir>/zh/*.txt`.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        Ok(Self {
            en: TemplateSet::load_dir(&dir.join("en"), Lang::En)?,
            zh: TemplateSet::load_dir(&dir.join("zh"), Lang::Zh)?,
        })
    }

    pub fn templates(&self, lang: Lang) -> &TemplateSet {
        match lang {
            Lang::En => &self.en,
            Lang::Zh => &self.zh,
        }
    }

    pub fn answer_system(&self, lang: Lang) -> &str {
        &self.templates(lang).answer_system
    }

    pub fn render_question_prompt(
        &self,
        task: TaskKind,
        theme: &str,
        exemplars: &[QuestionDraft],
        lang: Lang,
    ) -> Result<String, PromptError> {
        if exemplars.is_empty() {
            return Err(PromptError::EmptyExemplars);
        }
        if theme.trim().is_empty() {
            return Err(PromptError::EmptyInput("theme"));
        }
        let domain = task.domain_text(lang);
        let examples = format_blocks(exemplars);
        Ok(substitute(
            &self.templates(lang).question,
            &[
                ("[[domain]]", &domain),
                ("[[theme]]", theme.trim()),
                ("[example list]", &examples),
            ],
        ))
    }

    pub fn render_critique_prompt(
        &self,
        question: &str,
        response: &str,
        lang: Lang,
    ) -> Result<String, PromptError> {
        if question.trim().is_empty() {
            return Err(PromptError::EmptyInput("question"));
        }
        if response.trim().is_empty() {
            return Err(PromptError::EmptyInput("response"));
        }
        let dialogue = format_dialogue(question, response);
        Ok(substitute(
            &self.templates(lang).critique,
            &[("[dialogue]", &dialogue)],
        ))
    }

    pub fn render_refine_prompt(
        &self,
        question: &str,
        original: &str,
        critique: &Critique,
        lang: Lang,
    ) -> Result<String, PromptError> {
        for (name, value) in [
            ("question", question),
            ("original response", original),
            ("critique strength", critique.strength.as_str()),
            ("critique weakness", critique.weakness.as_str()),
            ("critique suggestion", critique.suggestion.as_str()),
        ] {
            if value.trim().is_empty() {
                return Err(PromptError::EmptyInput(name));
            }
        }
        Ok(substitute(
            &self.templates(lang).refine,
            &[
                ("[[question]]", question.trim()),
                ("[[response]]", original.trim()),
                ("[[strength]]", critique.strength.trim()),
                ("[[weakness]]", critique.weakness.trim()),
                ("[[suggestion]]", critique.suggestion.trim()),
            ],
        ))
    }

    /// Prompt asking for up to `count` subtopics of `theme`; `path` is the
    /// root-to-node label chain.
    pub fn render_expand_prompt(
        &self,
        theme: &str,
        path: &[String],
        count: usize,
        lang: Lang,
    ) -> Result<String, PromptError> {
        if theme.trim().is_empty() {
            return Err(PromptError::EmptyInput("theme"));
        }
        let sep = match lang {
            Lang::En => " > ",
            Lang::Zh => " > ",
        };
        let path = if path.is_empty() {
            theme.trim().to_owned()
        } else {
            path.join(sep)
        };
        Ok(substitute(
            &self.templates(lang).expand,
            &[
                ("[[theme]]", theme.trim()),
                ("[[path]]", &path),
                ("[[count]]", &count.to_string()),
            ],
        ))
    }
}

/// Question/response pair as inserted into the critique template.
pub fn format_dialogue(question: &str, response: &str) -> String {
    format!(
        "\n\n[User Question]\n{}\n\n[Model Response]\n{}\n",
        question.trim(),
        response.trim()
    )
}

/// Replaces every placeholder occurrence in one left-to-right pass, so text
/// inserted for one placeholder is never rescanned for another.
fn substitute(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    'scan: while !rest.is_empty() {
        if rest.starts_with('[') {
            for (key, value) in vars {
                if let Some(after) = rest.strip_prefix(key) {
                    out.push_str(value);
                    rest = after;
                    continue 'scan;
                }
            }
        }
        let skip = rest.chars().next().map_or(1, char::len_utf8);
        let next = rest[skip..]
            .find('[')
            .map(|i| i + skip)
            .unwrap_or(rest.len());
        out.push_str(&rest[..next]);
        rest = &rest[next..];
    }
    out
}
