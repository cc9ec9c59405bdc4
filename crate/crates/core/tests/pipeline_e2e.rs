use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;
use std::sync::Arc;

use condor_core::datastore;
use condor_core::gateway::{BackendPolicy, Gateway, MockBackend, Scenario};
use condor_core::pipeline::{
    plan_refine, plan_void, quality_filter, task_subset, Engine, PipelineError, RefineOptions, RunOutput,
    SampleRecord, Stage, SynthOptions, Verdict,
};
use condor_core::prompts::{Difficulty, ExemplarBanks, PromptBook, TaskKind};
use condor_core::wkt::{KnowledgeTree, RootSpec, SeedChild};
use condor_core::{Clock, Lang};

fn worked(name: &str) -> String {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/worked").join(name);
    std::fs::read_to_string(p).unwrap().trim().to_owned()
}

/// Two roots with four seeded subtopics each: 10 tags, 5 per language.
fn ten_tag_tree() -> KnowledgeTree {
    let spec = |label: &str, lang, kids: [&str; 4]| RootSpec {
        label: label.into(),
        lang,
        children: kids.iter().map(|k| SeedChild::Label((*k).into())).collect(),
    };
    let tree = KnowledgeTree::from_root_specs(
        &[
            spec("Cartography", Lang::En, ["Ancient maps", "Map projections", "Satellite imaging", "Sea charts"]),
            spec("地理", Lang::Zh, ["古代地图", "地图投影", "卫星遥感", "航海图"]),
        ],
        &Clock::epoch(),
    )
    .unwrap();
    assert_eq!(tree.len(), 10);
    tree
}

fn synth_opts(seed: u64) -> SynthOptions {
    SynthOptions {
        seed,
        tag_proportion: 1.0,
        tasks: task_subset(7).unwrap(),
        difficulties: Difficulty::ALL.to_vec(),
        model_id: "mock-model".into(),
        temperature: 0.8,
        max_tokens: 1024,
    }
}

fn refine_opts(rounds: u32) -> RefineOptions {
    RefineOptions { rounds, model_id: "mock-model".into(), temperature: 0.8, max_tokens: 1024 }
}

struct Rig {
    mock: Arc<MockBackend>,
    gateway: Gateway,
    prompts: PromptBook,
    exemplars: ExemplarBanks,
}

impl Rig {
    fn new(mock: MockBackend, concurrency: usize) -> Self {
        let mock = Arc::new(mock);
        let policy = BackendPolicy { max_concurrency: concurrency, backoff_base_ms: 1, ..Default::default() };
        Self {
            gateway: Gateway::new(mock.clone(), policy).unwrap(),
            mock,
            prompts: PromptBook::builtin(),
            exemplars: ExemplarBanks::default(),
        }
    }

    fn engine(&self) -> Engine<'_> {
        Engine { gateway: &self.gateway, prompts: &self.prompts, exemplars: &self.exemplars, clock: Clock::epoch() }
    }

    async fn void(&self, tree: &KnowledgeTree, opts: &SynthOptions) -> RunOutput {
        self.engine().synthesize_void(tree, opts).await.unwrap()
    }

    async fn refine(&self, input: &[SampleRecord], rounds: u32) -> RunOutput {
        self.engine().refine(input, &refine_opts(rounds)).await.unwrap()
    }
}

fn file_hash(records: &[SampleRecord]) -> String {
    let dir = tempfile::tempdir().unwrap();
    datastore::write_records(records, &dir.path().join("d.jsonl")).unwrap().content_hash
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn full_grid_produces_210_void_and_210_refine_records() {
    let tree = ten_tag_tree();
    let rig = Rig::new(MockBackend::new(), 8);
    let void = rig.void(&tree, &synth_opts(42)).await;
    assert_eq!(void.records.len(), 210);
    let m = &void.manifest;
    assert!(m.is_conserved());
    assert_eq!((m.attempted, m.emitted, m.failed()), (210, 210, 0));
    assert_eq!(m.gross_drafts, Some(210));
    assert_eq!(m.requests, 70 * 4);
    assert_eq!(rig.mock.scenario_calls(Scenario::QuestionSynthesis), 70);
    assert_eq!(rig.mock.scenario_calls(Scenario::Answer), 210);
    assert!(m.counts.by_task.values().all(|&c| c == 30));
    assert!(m.counts.by_difficulty.values().all(|&c| c == 70));
    assert_eq!(m.counts.by_lang[&Lang::En], 105);

    let plan = plan_void(&tree, &synth_opts(42)).unwrap();
    assert_eq!((plan.cells, plan.units, plan.requests), (70, 210, m.requests));

    let ids: HashSet<_> = void.records.iter().map(|r| r.id.clone()).collect();
    assert_eq!(ids.len(), 210);
    let mut cells: BTreeMap<(Vec<String>, TaskKind), Vec<Difficulty>> = BTreeMap::new();
    for r in &void.records {
        r.validate().unwrap();
        assert_eq!(r.stage, Stage::Void);
        assert_eq!(quality_filter(&r.question, r.difficulty), Verdict::Accept);
        assert_eq!(quality_filter(&r.response, r.difficulty), Verdict::Accept);
        assert!(r.response.starts_with("Mock answer"));
        cells.entry((r.tag_chain.clone(), r.task)).or_default().push(r.difficulty);
    }
    assert_eq!(cells.len(), 70);
    for levels in cells.values() {
        let distinct: HashSet<_> = levels.iter().collect();
        assert_eq!(distinct.len(), 3);
    }

    let refine = rig.refine(&void.records, 1).await;
    assert_eq!(refine.records.len(), 210);
    assert!(refine.manifest.is_conserved());
    assert_eq!(refine.manifest.requests, plan_refine(210, 1).requests);
    assert!(refine.rounds.is_empty());
    let by_id: BTreeMap<_, _> = void.records.iter().map(|r| (r.id.as_str(), r)).collect();
    for r in &refine.records {
        r.validate().unwrap();
        let origin = by_id[r.id.as_str()];
        assert_eq!(r.origin_response.as_deref(), Some(origin.response.as_str()));
        assert_eq!(r.question, origin.question);
        assert!(r.response.starts_with("REFINED:"));
        assert!(r.critique.as_ref().unwrap().is_complete());
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn output_is_independent_of_concurrency() {
    let tree = ten_tag_tree();
    let a = Rig::new(MockBackend::new(), 1);
    let b = Rig::new(MockBackend::new(), 16);
    let va = a.void(&tree, &synth_opts(7)).await;
    let vb = b.void(&tree, &synth_opts(7)).await;
    assert_eq!(file_hash(&va.records), file_hash(&vb.records));
    let ra = a.refine(&va.records, 1).await;
    let rb = b.refine(&vb.records, 1).await;
    assert_eq!(file_hash(&ra.records), file_hash(&rb.records));

    let other = a.void(&tree, &synth_opts(8)).await;
    assert_ne!(file_hash(&other.records), file_hash(&va.records));
}

#[tokio::test]
async fn single_cell_yields_one_record_per_level() {
    let tree = ten_tag_tree();
    let mut opts = synth_opts(1);
    opts.tasks = task_subset(1).unwrap();
    opts.tag_proportion = 0.1;
    let rig = Rig::new(MockBackend::new(), 4);
    let out = rig.void(&tree, &opts).await;
    // 0.1 of five tags rounds up to one tag per language.
    assert_eq!(out.records.len(), 6);
    assert!(out.records.iter().all(|r| r.task == TaskKind::RolePlaying));
}

#[tokio::test]
async fn difficulty_subset_discards_other_drafts() {
    let tree = ten_tag_tree();
    let mut opts = synth_opts(3);
    opts.difficulties = vec![Difficulty::Hard];
    let rig = Rig::new(MockBackend::new(), 8);
    let out = rig.void(&tree, &opts).await;
    assert_eq!(out.records.len(), 70);
    assert!(out.records.iter().all(|r| r.difficulty == Difficulty::Hard));
    assert_eq!(out.manifest.gross_drafts, Some(210));
    assert_eq!(out.manifest.requests, 70 * 2);
    assert!(out.manifest.is_conserved());
}

#[tokio::test]
async fn malformed_replies_are_tallied_not_fatal() {
    let tree = ten_tag_tree();
    let bad_cell = tree.preorder()[1].label.clone();
    let mock = MockBackend::new().with_responder(move |scenario, req| match scenario {
        Scenario::QuestionSynthesis if req.prompt().contains(&bad_cell) => Some("[Easy][Question Start]only one".into()),
        Scenario::Critique if req.prompt().contains("Mock medium") => {
            Some("[Strength Start]fine[Strength End][Weakness Start]thin[Weakness End]".into())
        }
        _ => None,
    });
    let rig = Rig::new(mock, 8);
    let void = rig.void(&tree, &synth_opts(5)).await;
    let m = &void.manifest;
    assert!(m.is_conserved());
    assert_eq!(m.failures.get("MalformedBlock").copied().unwrap_or(0), 21, "{:?}", m.failures);
    assert_eq!(void.records.len(), 189);

    let refine = rig.refine(&void.records, 1).await;
    let medium = void.records.iter().filter(|r| r.difficulty == Difficulty::Medium).count() as u64;
    assert_eq!(refine.manifest.failures.get("MissingSection"), Some(&medium));
    assert_eq!(refine.records.len() as u64, 189 - medium);
    assert!(refine.manifest.is_conserved());
}

#[tokio::test]
async fn refine_rejects_non_void_input() {
    let tree = ten_tag_tree();
    let rig = Rig::new(MockBackend::new(), 8);
    let void = rig.void(&tree, &synth_opts(5)).await;
    let mut refine = rig.refine(&void.records[..2], 1).await.records;
    refine.extend(void.records[2..4].iter().cloned());
    let calls = rig.mock.calls();
    let err = rig.engine().refine(&refine, &refine_opts(1)).await.unwrap_err();
    assert!(matches!(err, PipelineError::StageViolation { stage: Stage::Refine, .. }));
    assert_eq!(rig.mock.calls(), calls);
}

#[tokio::test]
async fn two_rounds_chain_their_critiques() {
    let tree = ten_tag_tree();
    let rig = Rig::new(MockBackend::new(), 8);
    let mut opts = synth_opts(9);
    opts.tasks = task_subset(2).unwrap();
    let void = rig.void(&tree, &opts).await;
    let out = rig.refine(&void.records, 2).await;
    assert_eq!(out.records.len(), void.records.len());
    assert_eq!(out.rounds.len(), 2 * void.records.len());
    assert_eq!(out.manifest.requests, plan_refine(void.records.len(), 2).requests);
    for r in &out.records {
        let rounds: Vec<_> = out.rounds.iter().filter(|e| e.id == r.id).collect();
        assert_eq!(rounds.len(), 2);
        assert_eq!(Some(&rounds[0].origin_response), r.origin_response.as_ref());
        assert_eq!(rounds[1].origin_response, rounds[0].response);
        assert_eq!(rounds[1].response, r.response);
        assert_eq!(Some(&rounds[1].critique), r.critique.as_ref());
    }
}

#[tokio::test]
async fn worked_example_is_representable_end_to_end() {
    let question = worked("void_question.txt");
    let origin = worked("void_origin_answer.txt");
    let reflection = worked("refine_reflection.txt");
    let refined = worked("refine_refined_answer.txt");
    assert!(refined.contains("As a text-based AI, I'll guide you"));

    let (r1, r2) = (reflection.clone(), refined.clone());
    let mock = MockBackend::new().with_responder(move |scenario, _| match scenario {
        Scenario::Critique => Some(r1.clone()),
        Scenario::Refine => Some(r2.clone()),
        _ => None,
    });
    let rig = Rig::new(mock, 1);
    let input = SampleRecord {
        id: "0".repeat(32),
        stage: Stage::Void,
        lang: Lang::En,
        tag_chain: vec!["Cartography".into(), "Ancient maps".into()],
        task: TaskKind::DailyChat,
        difficulty: Difficulty::Medium,
        question,
        response: origin.clone(),
        origin_response: None,
        critique: None,
        model_id: "mock-model".into(),
        created_at: Clock::epoch().timestamp(),
    };
    input.validate().unwrap();
    let out = rig.refine(&[input], 1).await;
    assert_eq!(out.records.len(), 1, "{:?}", out.manifest.failures);
    let r = &out.records[0];
    assert_eq!(r.response, refined);
    assert_eq!(r.origin_response.as_deref(), Some(origin.as_str()));
    let c = r.critique.as_ref().unwrap();
    assert!(c.strength.contains("Comprehensive Response"));
    assert!(c.is_complete());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("worked.jsonl");
    datastore::write_records(&out.records, &path).unwrap();
    assert_eq!(datastore::read_records(&path).unwrap(), out.records);
}
