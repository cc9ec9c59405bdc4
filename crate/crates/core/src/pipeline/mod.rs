//! The two synthesis stages. Void turns (tag, task) cells into question and
//! answer records; Refine has the model critique and rewrite each answer.

mod filter;
mod records;
mod sampling;

use std::collections::BTreeMap;
use std::time::Instant;

use futures::future::join_all;
use futures::stream::{self, StreamExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::clock::Clock;
use crate::gateway::{ChatMessage, ChatRequest, Gateway};
use crate::prompts::{
    parse_critique_response, parse_question_response, Critique, Difficulty, ExemplarBanks, PromptBook, TaskKind,
};
use crate::text::{proportional_count, Lang};
use crate::wkt::{KnowledgeTree, TagNode, WktError};

pub use filter::{min_words, quality_filter, RejectReason, Verdict, MAX_CHAR_RUN, REPEAT_LIMIT, REPEAT_NGRAM};
pub use records::{record_id, SampleRecord, SchemaViolation, Stage};
pub use sampling::{sample_dataset, sample_indices, task_subset};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    InvalidOption(String),
    #[error("task count {k} is outside 1..=7")]
    OutOfRange { k: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("record {id} has stage {stage}, expected void")]
    StageViolation { id: String, stage: Stage },
    #[error(transparent)]
    Tree(#[from] WktError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthOptions {
    pub seed: u64,
    pub tag_proportion: f64,
    pub tasks: Vec<TaskKind>,
    pub difficulties: Vec<Difficulty>,
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl SynthOptions {
    fn validate(&self) -> Result<(), PipelineError> {
        if self.tasks.is_empty() {
            return Err(PipelineError::InvalidOption("task list is empty".into()));
        }
        if self.difficulties.is_empty() {
            return Err(PipelineError::InvalidOption("difficulty list is empty".into()));
        }
        if !(self.tag_proportion > 0.0 && self.tag_proportion <= 1.0) {
            return Err(PipelineError::InvalidOption(format!(
                "tag proportion {} is outside (0, 1]",
                self.tag_proportion
            )));
        }
        Ok(())
    }

    /// Difficulties in Easy..Hard order without repeats.
    fn levels(&self) -> Vec<Difficulty> {
        Difficulty::ALL
            .into_iter()
            .filter(|d| self.difficulties.contains(d))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineOptions {
    pub rounds: u32,
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

/// Shared services for a run.
pub struct Engine<'a> {
    pub gateway: &'a Gateway,
    pub prompts: &'a PromptBook,
    pub exemplars: &'a ExemplarBanks,
    pub clock: Clock,
}

/// Emitted-record tallies.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub by_stage: BTreeMap<Stage, u64>,
    pub by_lang: BTreeMap<Lang, u64>,
    pub by_task: BTreeMap<TaskKind, u64>,
    pub by_difficulty: BTreeMap<Difficulty, u64>,
}

impl Counts {
    pub fn of(records: &[SampleRecord]) -> Self {
        let mut c = Counts::default();
        for r in records {
            *c.by_stage.entry(r.stage).or_default() += 1;
            *c.by_lang.entry(r.lang).or_default() += 1;
            *c.by_task.entry(r.task).or_default() += 1;
            *c.by_difficulty.entry(r.difficulty).or_default() += 1;
        }
        c
    }
}

/// Sidecar written next to a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub stage: Stage,
    pub config: serde_json::Value,
    pub wkt_version: Option<u64>,
    pub wkt_hash: Option<String>,
    /// Units of work: cells × difficulties for void, input records for refine.
    pub attempted: u64,
    pub emitted: u64,
    /// Drafts parsed before difficulty selection and filtering.
    pub gross_drafts: Option<u64>,
    pub counts: Counts,
    pub failures: BTreeMap<String, u64>,
    pub requests: u64,
    pub duration_ms: u64,
}

impl RunManifest {
    pub fn failed(&self) -> u64 {
        self.failures.values().sum()
    }

    /// Every attempted unit was either emitted or logged as a failure.
    pub fn is_conserved(&self) -> bool {
        self.emitted + self.failed() == self.attempted
            && self.counts.by_task.values().sum::<u64>() == self.emitted
            && self.counts.by_difficulty.values().sum::<u64>() == self.emitted
            && self.counts.by_lang.values().sum::<u64>() == self.emitted
            && self.counts.by_stage.values().sum::<u64>() == self.emitted
    }
}

/// One critique/rewrite round of a multi-round refinement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundEntry {
    pub id: String,
    pub round: u32,
    pub origin_response: String,
    pub critique: Critique,
    pub response: String,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    /// Sorted by id.
    pub records: Vec<SampleRecord>,
    pub manifest: RunManifest,
    /// Per-round history, kept only when more than one round ran.
    pub rounds: Vec<RoundEntry>,
}

/// What a run would do, computed without contacting the backend.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WorkPlan {
    pub stage: Stage,
    pub tags: BTreeMap<Lang, usize>,
    pub tasks: usize,
    pub cells: u64,
    pub units: u64,
    pub requests: u64,
}

pub fn plan_void(tree: &KnowledgeTree, opts: &SynthOptions) -> Result<WorkPlan, PipelineError> {
    opts.validate()?;
    if tree.is_empty() {
        return Err(WktError::EmptyTree.into());
    }
    let tags: BTreeMap<Lang, usize> = Lang::ALL
        .into_iter()
        .map(|l| (l, proportional_count(opts.tag_proportion, tree.count_lang(l))))
        .collect();
    let cells = tags.values().sum::<usize>() as u64 * opts.tasks.len() as u64;
    let levels = opts.levels().len() as u64;
    Ok(WorkPlan {
        stage: Stage::Void,
        tags,
        tasks: opts.tasks.len(),
        cells,
        units: cells * levels,
        requests: cells * (1 + levels),
    })
}

pub fn plan_refine(records: usize, rounds: u32) -> WorkPlan {
    WorkPlan {
        stage: Stage::Refine,
        tags: BTreeMap::new(),
        tasks: 0,
        cells: records as u64,
        units: records as u64,
        requests: records as u64 * 2 * rounds as u64,
    }
}

fn cell_seed(seed: u64, tag: &TagNode, task: TaskKind) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(tag.id.as_str().as_bytes());
    h.update(task.key().as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

fn filter_class(reason: RejectReason) -> String {
    format!("QualityFilter:{reason}")
}

#[derive(Default)]
struct Outcome {
    records: Vec<SampleRecord>,
    failures: Vec<String>,
    drafts: u64,
    rounds: Vec<RoundEntry>,
}

impl Engine<'_> {
    pub async fn synthesize_void(&self, tree: &KnowledgeTree, opts: &SynthOptions) -> Result<RunOutput, PipelineError> {
        opts.validate()?;
        let started = Instant::now();
        let sent_before = self.gateway.requests_sent();
        let tags = tree.sample_tags(opts.tag_proportion, opts.seed)?;
        let mut cells = Vec::with_capacity(tags.len() * opts.tasks.len());
        for tag in &tags {
            let chain = tree.tag_chain(&tag.id)?;
            for &task in &opts.tasks {
                cells.push((tag, chain.clone(), task));
            }
        }
        let levels = opts.levels();
        let attempted = (cells.len() * levels.len()) as u64;

        let outcomes: Vec<Outcome> = stream::iter(cells)
            .map(|(tag, chain, task)| self.void_cell(tag, chain, task, &levels, opts))
            .buffer_unordered(self.gateway.policy().max_concurrency)
            .collect()
            .await;

        let mut records = Vec::new();
        let mut failures: BTreeMap<String, u64> = BTreeMap::new();
        let mut drafts = 0;
        for o in outcomes {
            records.extend(o.records);
            drafts += o.drafts;
            for f in o.failures {
                *failures.entry(f).or_default() += 1;
            }
        }
        records.sort_by(|a, b| a.id.cmp(&b.id));
        let manifest = RunManifest {
            stage: Stage::Void,
            config: serde_json::to_value(opts).expect("options serialize"),
            wkt_version: Some(tree.version()),
            wkt_hash: Some(tree.content_hash()),
            attempted,
            emitted: records.len() as u64,
            gross_drafts: Some(drafts),
            counts: Counts::of(&records),
            failures,
            requests: self.gateway.requests_sent() - sent_before,
            duration_ms: started.elapsed().as_millis() as u64,
        };
        Ok(RunOutput { records, manifest, rounds: Vec::new() })
    }

    async fn void_cell(
        &self,
        tag: &TagNode,
        chain: Vec<String>,
        task: TaskKind,
        levels: &[Difficulty],
        opts: &SynthOptions,
    ) -> Outcome {
        let fail_all = |class: &str| Outcome {
            failures: vec![class.to_owned(); levels.len()],
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cell_seed(opts.seed, tag, task));
        let exemplars = self.exemplars.for_lang(tag.lang).select(task, &mut rng);
        let prompt = match self.prompts.render_question_prompt(task, &tag.label, &exemplars, tag.lang) {
            Ok(p) => p,
            Err(_) => return fail_all("PromptError"),
        };
        let req = ChatRequest::user(prompt, opts.model_id.clone(), opts.temperature, opts.max_tokens);
        let reply = match self.gateway.complete(&req).await {
            Ok(r) => r,
            Err(e) => return fail_all(e.class()),
        };
        let drafts = match parse_question_response(&reply.content) {
            Ok(d) => d,
            Err(e) => return fail_all(e.class()),
        };

        let system = self.prompts.answer_system(tag.lang);
        let answers = levels.iter().map(|&level| {
            let question = drafts
                .iter()
                .find(|d| d.difficulty == level)
                .map(|d| d.text.clone())
                .unwrap_or_default();
            let chain = &chain;
            async move {
                if let Verdict::Reject(r) = quality_filter(&question, level) {
                    return Err(filter_class(r));
                }
                let req = ChatRequest::new(
                    vec![ChatMessage::system(system), ChatMessage::user(question.clone())],
                    opts.model_id.clone(),
                    opts.temperature,
                    opts.max_tokens,
                );
                let response = self.gateway.complete(&req).await.map_err(|e| e.class().to_owned())?;
                let response = response.content.trim().to_owned();
                if let Verdict::Reject(r) = quality_filter(&response, level) {
                    return Err(filter_class(r));
                }
                Ok(SampleRecord {
                    id: record_id(tag.lang, chain, task, level, opts.seed),
                    stage: Stage::Void,
                    lang: tag.lang,
                    tag_chain: chain.clone(),
                    task,
                    difficulty: level,
                    question,
                    response,
                    origin_response: None,
                    critique: None,
                    model_id: opts.model_id.clone(),
                    created_at: self.clock.timestamp(),
                })
            }
        });
        let mut out = Outcome { drafts: drafts.len() as u64, ..Default::default() };
        for result in join_all(answers).await {
            match result {
                Ok(r) => out.records.push(r),
                Err(class) => out.failures.push(class),
            }
        }
        out
    }

    /// Critiques and rewrites every void record. Inputs of any other stage
    /// are rejected before any request is made.
    pub async fn refine(&self, inputs: &[SampleRecord], opts: &RefineOptions) -> Result<RunOutput, PipelineError> {
        if let Some(r) = inputs.iter().find(|r| r.stage != Stage::Void) {
            return Err(PipelineError::StageViolation { id: r.id.clone(), stage: r.stage });
        }
        if opts.rounds == 0 {
            return Err(PipelineError::InvalidOption("rounds must be at least 1".into()));
        }
        let started = Instant::now();
        let sent_before = self.gateway.requests_sent();
        let outcomes: Vec<Outcome> = stream::iter(inputs)
            .map(|r| self.refine_one(r, opts))
            .buffer_unordered(self.gateway.policy().max_concurrency)
            .collect()
            .await;

        let mut records = Vec::new();
        let mut rounds = Vec::new();
        let mut failures: BTreeMap<String, u64> = BTreeMap::new();
        for o in outcomes {
            records.extend(o.records);
            rounds.extend(o.rounds);
            for f in o.failures {
                *failures.entry(f).or_default() += 1;
            }
        }
        records.sort_by(|a, b| a.id.cmp(&b.id));
        rounds.sort_by(|a, b| (&a.id, a.round).cmp(&(&b.id, b.round)));
        if opts.rounds == 1 {
            rounds.clear();
        }
        let manifest = RunManifest {
            stage: Stage::Refine,
            config: serde_json::to_value(opts).expect("options serialize"),
            wkt_version: None,
            wkt_hash: None,
            attempted: inputs.len() as u64,
            emitted: records.len() as u64,
            gross_drafts: None,
            counts: Counts::of(&records),
            failures,
            requests: self.gateway.requests_sent() - sent_before,
            duration_ms: started.elapsed().as_millis() as u64,
        };
        Ok(RunOutput { records, manifest, rounds })
    }

    async fn refine_one(&self, input: &SampleRecord, opts: &RefineOptions) -> Outcome {
        let fail = |class: &str| Outcome {
            failures: vec![class.to_owned()],
            ..Default::default()
        };
        let mut current = input.response.clone();
        let mut history = Vec::new();
        let mut last = None;
        for round in 1..=opts.rounds {
            let prompt = match self.prompts.render_critique_prompt(&input.question, &current, input.lang) {
                Ok(p) => p,
                Err(_) => return fail("PromptError"),
            };
            let req = ChatRequest::user(prompt, opts.model_id.clone(), opts.temperature, opts.max_tokens);
            let reply = match self.gateway.complete(&req).await {
                Ok(r) => r,
                Err(e) => return fail(e.class()),
            };
            let critique = match parse_critique_response(&reply.content) {
                Ok(c) => c,
                Err(e) => return fail(e.class()),
            };
            let prompt = match self.prompts.render_refine_prompt(&input.question, &current, &critique, input.lang) {
                Ok(p) => p,
                Err(_) => return fail("PromptError"),
            };
            let req = ChatRequest::user(prompt, opts.model_id.clone(), opts.temperature, opts.max_tokens);
            let refined = match self.gateway.complete(&req).await {
                Ok(r) => r.content.trim().to_owned(),
                Err(e) => return fail(e.class()),
            };
            if let Verdict::Reject(r) = quality_filter(&refined, input.difficulty) {
                return fail(&filter_class(r));
            }
            history.push(RoundEntry {
                id: input.id.clone(),
                round,
                origin_response: std::mem::replace(&mut current, refined.clone()),
                critique: critique.clone(),
                response: refined,
            });
            last = Some(critique);
        }
        let record = SampleRecord {
            id: input.id.clone(),
            stage: Stage::Refine,
            lang: input.lang,
            tag_chain: input.tag_chain.clone(),
            task: input.task,
            difficulty: input.difficulty,
            question: input.question.clone(),
            response: current,
            origin_response: Some(input.response.clone()),
            critique: last,
            model_id: opts.model_id.clone(),
            created_at: self.clock.timestamp(),
        };
        Outcome { records: vec![record], rounds: history, ..Default::default() }
    }
}
