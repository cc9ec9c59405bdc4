//! Deterministic offline backend. Replies are a pure function of the request
//! and always satisfy the reply grammars and the quality filter.

use std::collections::{BTreeMap, VecDeque};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use async_trait::async_trait;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{ChatBackend, ChatRequest, RawReply, TransportError, Usage};
use crate::prompts::{format_blocks, format_critique, markers, Critique, Difficulty, PromptBook, QuestionDraft};
use crate::text::Lang;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    QuestionSynthesis,
    Answer,
    Critique,
    Refine,
    TagExpand,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("request matches no known prompt template")]
pub struct UnknownScenario;

/// First 8 hex digits of the SHA-256 of the final user turn.
pub fn prompt_hash(req: &ChatRequest) -> String {
    hex::encode(&Sha256::digest(req.prompt().as_bytes())[..4])
}

/// Works out which interaction a request belongs to from the markers its
/// prompt carries. Answer requests are recognised by their system message.
pub fn detect_scenario(req: &ChatRequest, answer_systems: &[String]) -> Option<Scenario> {
    if req
        .system()
        .is_some_and(|s| answer_systems.iter().any(|a| a.trim() == s.trim()))
    {
        return Some(Scenario::Answer);
    }
    let prompt = req.prompt();
    if prompt.contains(markers::REFINE_ORIGINAL) {
        Some(Scenario::Refine)
    } else if prompt.contains(markers::CRITIQUE_SCAFFOLD) {
        Some(Scenario::Critique)
    } else if prompt.contains(markers::QUESTION_SCAFFOLD) {
        Some(Scenario::QuestionSynthesis)
    } else if prompt.contains(markers::EXPAND_COUNT) {
        Some(Scenario::TagExpand)
    } else {
        None
    }
}

fn requested_count(prompt: &str) -> usize {
    prompt
        .find(markers::EXPAND_COUNT)
        .map(|i| &prompt[i + markers::EXPAND_COUNT.len()..])
        .and_then(|rest| {
            let digits: String = rest
                .trim_start()
                .chars()
                .take_while(char::is_ascii_digit)
                .collect();
            digits.parse().ok()
        })
        .unwrap_or(5)
}

/// Canned reply for a scenario. Every reply embeds the prompt hash so that
/// distinct prompts give distinct replies.
pub fn reply_for(scenario: Scenario, req: &ChatRequest) -> String {
    let h = prompt_hash(req);
    match scenario {
        Scenario::QuestionSynthesis => {
            let drafts = [
                QuestionDraft::new(
                    Difficulty::Easy,
                    format!("Mock easy question {h}: what is the simplest way to explain this topic to a curious beginner?"),
                ),
                QuestionDraft::new(
                    Difficulty::Medium,
                    format!("Mock medium question {h}: how does this topic show up in everyday practice, and which trade-offs matter most?"),
                ),
                QuestionDraft::new(
                    Difficulty::Hard,
                    format!("Mock hard question {h}: compare two competing views on this topic and argue which one holds up better under scrutiny."),
                ),
            ];
            format!("Here are three questions.\n\n{}\n", format_blocks(&drafts))
        }
        Scenario::Answer => format!(
            "Mock answer {h}: this response addresses the question with a short overview, one concrete example and a brief summary of the key points."
        ),
        Scenario::Critique => format_critique(&Critique {
            strength: format!("Mock strength {h}: the answer is direct and stays on topic throughout."),
            weakness: format!("Mock weakness {h}: it lacks a worked example that grounds the explanation."),
            suggestion: format!("Mock suggestion {h}: add one concrete example and close with a short summary."),
        }),
        Scenario::Refine => format!(
            "REFINED: {h} This improved answer keeps the clear structure of the original, adds a concrete example and closes with a concise summary for the reader."
        ),
        Scenario::TagExpand => (1..=requested_count(req.prompt()))
            .map(|i| format!("topic {h}-{i}"))
            .collect::<Vec<_>>()
            .join(", "),
    }
}

fn builtin_answer_systems() -> Vec<String> {
    let book = PromptBook::builtin();
    Lang::ALL
        .into_iter()
        .map(|l| book.answer_system(l).to_owned())
        .collect()
}

/// Reply to a request built from the bundled templates.
pub fn mock_reply(req: &ChatRequest) -> Result<String, UnknownScenario> {
    let scenario = detect_scenario(req, &builtin_answer_systems()).ok_or(UnknownScenario)?;
    Ok(reply_for(scenario, req))
}

type Responder = dyn Fn(Scenario, &ChatRequest) -> Option<String> + Send + Sync;

/// Instrumented mock backend. Besides the canned replies it can inject
/// delays and scripted transport faults and count what it was asked.
pub struct MockBackend {
    answer_systems: Vec<String>,
    delay: Option<Duration>,
    faults: Mutex<VecDeque<TransportError>>,
    always_fail: Option<TransportError>,
    responder: Option<Arc<Responder>>,
    calls: AtomicU64,
    in_flight: AtomicUsize,
    peak: AtomicUsize,
    by_scenario: Mutex<BTreeMap<Scenario, u64>>,
}

impl Default for MockBackend {
    fn default() -> Self {
        Self::new()
    }
}

struct InFlight<'a>(&'a AtomicUsize);

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}

impl MockBackend {
    pub fn new() -> Self {
        Self {
            answer_systems: builtin_answer_systems(),
            delay: None,
            faults: Mutex::new(VecDeque::new()),
            always_fail: None,
            responder: None,
            calls: AtomicU64::new(0),
            in_flight: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
            by_scenario: Mutex::new(BTreeMap::new()),
        }
    }

    /// Recognise answer requests by the system messages of a custom prompt
    /// book instead of the bundled one.
    pub fn with_prompts(mut self, book: &PromptBook) -> Self {
        self.answer_systems = Lang::ALL
            .into_iter()
            .map(|l| book.answer_system(l).to_owned())
            .collect();
        self
    }

    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = Some(delay);
        self
    }

    /// Errors returned, in order, by the next calls before normal replies
    /// resume.
    pub fn with_faults(self, faults: impl IntoIterator<Item = TransportError>) -> Self {
        self.faults.lock().expect("fault queue lock").extend(faults);
        self
    }

    pub fn always_failing(mut self, err: TransportError) -> Self {
        self.always_fail = Some(err);
        self
    }

    /// Overrides replies; returning `None` falls back to the canned reply.
    pub fn with_responder(
        mut self,
        f: impl Fn(Scenario, &ChatRequest) -> Option<String> + Send + Sync + 'static,
    ) -> Self {
        self.responder = Some(Arc::new(f));
        self
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn peak_in_flight(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }

    pub fn scenario_calls(&self, scenario: Scenario) -> u64 {
        self.by_scenario
            .lock()
            .expect("scenario tally lock")
            .get(&scenario)
            .copied()
            .unwrap_or(0)
    }
}

#[async_trait]
impl ChatBackend for MockBackend {
    fn name(&self) -> &str {
        "mock"
    }

    async fn send(&self, req: &ChatRequest) -> Result<RawReply, TransportError> {
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        let _guard = InFlight(&self.in_flight);
        self.peak.fetch_max(now, Ordering::SeqCst);
        self.calls.fetch_add(1, Ordering::SeqCst);
        if let Some(d) = self.delay {
            tokio::time::sleep(d).await;
        }
        if let Some(err) = &self.always_fail {
            return Err(err.clone());
        }
        if let Some(err) = self.faults.lock().expect("fault queue lock").pop_front() {
            return Err(err);
        }
        let scenario = detect_scenario(req, &self.answer_systems).ok_or_else(|| TransportError::Status {
            status: 400,
            message: UnknownScenario.to_string(),
        })?;
        *self
            .by_scenario
            .lock()
            .expect("scenario tally lock")
            .entry(scenario)
            .or_default() += 1;
        let content = self
            .responder
            .as_ref()
            .and_then(|f| f(scenario, req))
            .unwrap_or_else(|| reply_for(scenario, req));
        let usage = Usage {
            prompt_tokens: req.messages.iter().map(|m| m.content.split_whitespace().count() as u64).sum(),
            completion_tokens: content.split_whitespace().count() as u64,
        };
        Ok(RawReply { content, usage })
    }
}
