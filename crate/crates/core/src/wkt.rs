//! World Knowledge Tree: root themes, model-expanded subtopics and imported
//! trending tags, stored as versioned immutable snapshots.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use futures::stream::{self, StreamExt, TryStreamExt};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::canonical;
use crate::clock::Clock;
use crate::gateway::{ChatRequest, Gateway, GatewayError};
use crate::prompts::{parse_tag_list, PromptBook, PromptError};
use crate::text::{jaccard, label_token_set, normalize_label, proportional_count, Lang};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TagId(String);

impl TagId {
    /// Content address: `t` plus 16 hex digits of SHA-256 over the parent id
    /// (or the language, for roots) and the normalized label.
    fn derive(parent: Option<&TagId>, lang: Lang, normalized: &str) -> Self {
        let mut h = Sha256::new();
        match parent {
            Some(p) => h.update(p.0.as_bytes()),
            None => {
                h.update(b"root:");
                h.update(lang.as_str().as_bytes());
            }
        }
        h.update([0x1f]);
        h.update(normalized.as_bytes());
        TagId(format!("t{}", hex::encode(&h.finalize()[..8])))
    }

    pub fn new(raw: impl Into<String>) -> Self {
        TagId(raw.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for TagId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TagSource {
    Root,
    LlmExpanded,
    ImportedScraped,
}

impl TagSource {
    pub const ALL: [TagSource; 3] = [TagSource::Root, TagSource::LlmExpanded, TagSource::ImportedScraped];

    pub fn as_str(self) -> &'static str {
        match self {
            TagSource::Root => "root",
            TagSource::LlmExpanded => "llm_expanded",
            TagSource::ImportedScraped => "imported_scraped",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagNode {
    pub id: TagId,
    pub label: String,
    pub lang: Lang,
    pub depth: u32,
    pub parent: Option<TagId>,
    pub source: TagSource,
    pub children: Vec<TagId>,
}

/// One line of a scraped-tag file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScrapedTag {
    pub label: String,
    pub lang: Lang,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root_hint: Option<String>,
}

/// One line of a roots file: a root label with optional pre-seeded
/// subtopics, given as strings or nested `{label, children}` objects.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RootSpec {
    pub label: String,
    pub lang: Lang,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<SeedChild>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeedChild {
    Label(String),
    Node {
        label: String,
        #[serde(default)]
        children: Vec<SeedChild>,
    },
}

impl SeedChild {
    fn parts(&self) -> (&str, &[SeedChild]) {
        match self {
            SeedChild::Label(l) => (l, &[]),
            SeedChild::Node { label, children } => (label, children),
        }
    }
}

#[derive(Debug, Error)]
pub enum WktError {
    #[error("no labels given")]
    EmptyInput,
    #[error("duplicate {lang} label `{label}`")]
    DuplicateLabel { label: String, lang: Lang },
    #[error("node {0} not found")]
    NodeNotFound(TagId),
    #[error("fanout must be at least 1")]
    InvalidFanout,
    #[error("root hint `{0}` matches no root")]
    UnknownRootHint(String),
    #[error("tree has no tags")]
    EmptyTree,
    #[error("proportion {0} is outside (0, 1]")]
    InvalidProportion(f64),
    #[error("backend: {0}")]
    Backend(#[from] GatewayError),
    #[error("prompt: {0}")]
    Prompt(#[from] PromptError),
    #[error("invalid tree: {0}")]
    Invalid(String),
}

/// Settings for one expansion request.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpandOptions {
    pub fanout: usize,
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnowledgeTree {
    version: u64,
    created_at: String,
    nodes: BTreeMap<TagId, TagNode>,
    roots: Vec<TagId>,
}

/// Node and edge counts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct TreeCounts {
    pub total: usize,
    pub by_lang: BTreeMap<Lang, usize>,
    pub by_source: BTreeMap<TagSource, usize>,
    pub by_lang_source: BTreeMap<Lang, BTreeMap<TagSource, usize>>,
    pub max_depth: u32,
}

impl KnowledgeTree {
    pub fn build_roots(labels: &[(String, Lang)], clock: &Clock) -> Result<Self, WktError> {
        if labels.is_empty() {
            return Err(WktError::EmptyInput);
        }
        let mut tree = KnowledgeTree {
            version: 1,
            created_at: clock.timestamp(),
            nodes: BTreeMap::new(),
            roots: Vec::new(),
        };
        let mut seen = HashSet::new();
        for (label, lang) in labels {
            let norm = normalize_label(label);
            if norm.is_empty() {
                return Err(WktError::EmptyInput);
            }
            if !seen.insert((*lang, norm.clone())) {
                return Err(WktError::DuplicateLabel { label: label.clone(), lang: *lang });
            }
            let id = TagId::derive(None, *lang, &norm);
            tree.nodes.insert(
                id.clone(),
                TagNode {
                    id: id.clone(),
                    label: label.trim().to_owned(),
                    lang: *lang,
                    depth: 0,
                    parent: None,
                    source: TagSource::Root,
                    children: Vec::new(),
                },
            );
            tree.roots.push(id);
        }
        Ok(tree)
    }

    /// Roots plus any pre-seeded subtopics from a roots file. Seeded children
    /// count as expanded tags.
    pub fn from_root_specs(specs: &[RootSpec], clock: &Clock) -> Result<Self, WktError> {
        let labels: Vec<(String, Lang)> = specs.iter().map(|s| (s.label.clone(), s.lang)).collect();
        let mut tree = Self::build_roots(&labels, clock)?;
        fn seed(tree: &mut KnowledgeTree, parent: &TagId, children: &[SeedChild]) {
            let labels: Vec<String> = children.iter().map(|c| c.parts().0.to_owned()).collect();
            tree.attach(parent, &labels, TagSource::LlmExpanded, usize::MAX);
            for c in children {
                let (label, grand) = c.parts();
                if grand.is_empty() {
                    continue;
                }
                if let Some(id) = tree.child_by_label(parent, label) {
                    seed(tree, &id, grand);
                }
            }
        }
        let roots = tree.roots.clone();
        for (spec, root) in specs.iter().zip(roots) {
            seed(&mut tree, &root, &spec.children);
        }
        Ok(tree)
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn created_at(&self) -> &str {
        &self.created_at
    }

    pub fn roots(&self) -> &[TagId] {
        &self.roots
    }

    pub fn node(&self, id: &TagId) -> Option<&TagNode> {
        self.nodes.get(id)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes in depth-first pre-order, roots in order, children in order.
    pub fn preorder(&self) -> Vec<&TagNode> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack: Vec<&TagId> = self.roots.iter().rev().collect();
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id];
            out.push(node);
            stack.extend(node.children.iter().rev());
        }
        out
    }

    /// Childless nodes in pre-order.
    pub fn leaves(&self) -> Vec<TagId> {
        self.preorder()
            .into_iter()
            .filter(|n| n.children.is_empty())
            .map(|n| n.id.clone())
            .collect()
    }

    pub fn count_lang(&self, lang: Lang) -> usize {
        self.nodes.values().filter(|n| n.lang == lang).count()
    }

    pub fn counts(&self) -> TreeCounts {
        let mut c = TreeCounts { total: self.nodes.len(), ..Default::default() };
        for n in self.nodes.values() {
            *c.by_lang.entry(n.lang).or_default() += 1;
            *c.by_source.entry(n.source).or_default() += 1;
            *c.by_lang_source.entry(n.lang).or_default().entry(n.source).or_default() += 1;
            c.max_depth = c.max_depth.max(n.depth);
        }
        c
    }

    /// Labels from the root down to `id`.
    pub fn tag_chain(&self, id: &TagId) -> Result<Vec<String>, WktError> {
        let mut chain = Vec::new();
        let mut cur = self.nodes.get(id).ok_or_else(|| WktError::NodeNotFound(id.clone()))?;
        loop {
            chain.push(cur.label.clone());
            match &cur.parent {
                Some(p) => cur = &self.nodes[p],
                None => break,
            }
        }
        chain.reverse();
        Ok(chain)
    }

    fn child_by_label(&self, parent: &TagId, label: &str) -> Option<TagId> {
        let norm = normalize_label(label);
        self.nodes[parent]
            .children
            .iter()
            .find(|c| normalize_label(&self.nodes[*c].label) == norm)
            .cloned()
    }

    /// Adds up to `cap` children under `parent`, skipping empty labels and
    /// labels whose normalized form collides with an existing sibling.
    /// Returns the number added.
    fn attach(&mut self, parent: &TagId, labels: &[String], source: TagSource, cap: usize) -> usize {
        self.attach_with_lang(parent, labels, None, source, cap)
    }

    fn attach_with_lang(
        &mut self,
        parent: &TagId,
        labels: &[String],
        lang: Option<Lang>,
        source: TagSource,
        cap: usize,
    ) -> usize {
        let p = &self.nodes[parent];
        let (depth, lang) = (p.depth + 1, lang.unwrap_or(p.lang));
        let mut taken: HashSet<String> = p
            .children
            .iter()
            .map(|c| normalize_label(&self.nodes[c].label))
            .collect();
        let mut new_ids = Vec::new();
        for label in labels {
            if new_ids.len() >= cap {
                break;
            }
            let norm = normalize_label(label);
            if norm.is_empty() || !taken.insert(norm.clone()) {
                continue;
            }
            let id = TagId::derive(Some(parent), lang, &norm);
            self.nodes.insert(
                id.clone(),
                TagNode {
                    id: id.clone(),
                    label: label.trim().to_owned(),
                    lang,
                    depth,
                    parent: Some(parent.clone()),
                    source,
                    children: Vec::new(),
                },
            );
            new_ids.push(id);
        }
        let added = new_ids.len();
        self.nodes.get_mut(parent).expect("parent exists").children.extend(new_ids);
        added
    }

    fn next_version(&self, clock: &Clock) -> Self {
        let mut t = self.clone();
        t.version += 1;
        t.created_at = clock.timestamp();
        t
    }

    /// Request asking the backend for subtopics of `id`.
    pub fn expansion_request(
        &self,
        id: &TagId,
        prompts: &PromptBook,
        opts: &ExpandOptions,
    ) -> Result<ChatRequest, WktError> {
        if opts.fanout == 0 {
            return Err(WktError::InvalidFanout);
        }
        let node = self.nodes.get(id).ok_or_else(|| WktError::NodeNotFound(id.clone()))?;
        let path = self.tag_chain(id)?;
        let prompt = prompts.render_expand_prompt(&node.label, &path, opts.fanout, node.lang)?;
        Ok(ChatRequest::user(prompt, opts.model_id.clone(), opts.temperature, opts.max_tokens))
    }

    /// New version with the subtopics listed in `reply` attached under `id`.
    pub fn apply_expansion(&self, id: &TagId, reply: &str, fanout: usize, clock: &Clock) -> Result<Self, WktError> {
        self.apply_expansions(&[(id.clone(), reply.to_owned())], fanout, clock)
    }

    fn apply_expansions(&self, replies: &[(TagId, String)], fanout: usize, clock: &Clock) -> Result<Self, WktError> {
        if fanout == 0 {
            return Err(WktError::InvalidFanout);
        }
        if let Some((id, _)) = replies.iter().find(|(id, _)| !self.nodes.contains_key(id)) {
            return Err(WktError::NodeNotFound(id.clone()));
        }
        let mut t = self.next_version(clock);
        for (id, reply) in replies {
            t.attach(id, &parse_tag_list(reply), TagSource::LlmExpanded, fanout);
        }
        Ok(t)
    }

    pub async fn expand_node(
        &self,
        id: &TagId,
        gateway: &Gateway,
        prompts: &PromptBook,
        opts: &ExpandOptions,
        clock: &Clock,
    ) -> Result<Self, WktError> {
        self.expand_nodes(std::slice::from_ref(id), gateway, prompts, opts, clock).await
    }

    /// Expands several nodes concurrently and merges the replies, in the
    /// order of `ids`, into a single new version.
    pub async fn expand_nodes(
        &self,
        ids: &[TagId],
        gateway: &Gateway,
        prompts: &PromptBook,
        opts: &ExpandOptions,
        clock: &Clock,
    ) -> Result<Self, WktError> {
        let requests = ids
            .iter()
            .map(|id| Ok((id.clone(), self.expansion_request(id, prompts, opts)?)))
            .collect::<Result<Vec<_>, WktError>>()?;
        let replies: Vec<(TagId, String)> = stream::iter(requests)
            .map(|(id, req)| async move {
                let resp = gateway.complete(&req).await?;
                Ok::<_, WktError>((id, resp.content))
            })
            .buffered(gateway.policy().max_concurrency)
            .try_collect()
            .await?;
        self.apply_expansions(&replies, opts.fanout, clock)
    }

    /// Expands every current leaf, then the leaves that produced, `levels`
    /// times. Each level is one new version.
    pub async fn grow(
        &self,
        levels: u32,
        gateway: &Gateway,
        prompts: &PromptBook,
        opts: &ExpandOptions,
        clock: &Clock,
    ) -> Result<Self, WktError> {
        let mut tree = self.clone();
        let mut frontier = tree.leaves();
        for _ in 0..levels {
            if frontier.is_empty() {
                break;
            }
            let next = tree.expand_nodes(&frontier, gateway, prompts, opts, clock).await?;
            frontier = frontier
                .iter()
                .flat_map(|id| next.nodes[id].children.iter().cloned())
                .collect();
            tree = next;
        }
        Ok(tree)
    }

    /// Attaches scraped tags under a root branch: the hinted root when a hint
    /// is given, otherwise the same-language root with the highest token
    /// overlap (first root wins ties).
    pub fn import_scraped(&self, entries: &[ScrapedTag], clock: &Clock) -> Result<Self, WktError> {
        if self.roots.is_empty() {
            return Err(WktError::EmptyTree);
        }
        let root_keys: Vec<(Lang, String, BTreeSet<String>)> = self
            .roots
            .iter()
            .map(|r| {
                let n = &self.nodes[r];
                (n.lang, normalize_label(&n.label), label_token_set(&n.label))
            })
            .collect();

        let mut targets = Vec::with_capacity(entries.len());
        for e in entries {
            let idx = match &e.root_hint {
                Some(hint) => {
                    let h = normalize_label(hint);
                    let same = root_keys.iter().position(|(l, n, _)| *l == e.lang && *n == h);
                    same.or_else(|| root_keys.iter().position(|(_, n, _)| *n == h))
                        .ok_or_else(|| WktError::UnknownRootHint(hint.clone()))?
                }
                None => {
                    let tokens = label_token_set(&e.label);
                    let pool: Vec<usize> = match (0..root_keys.len()).filter(|&i| root_keys[i].0 == e.lang).collect::<Vec<_>>() {
                        v if v.is_empty() => (0..root_keys.len()).collect(),
                        v => v,
                    };
                    let mut best = pool[0];
                    let mut best_score = jaccard(&tokens, &root_keys[best].2);
                    for &i in &pool[1..] {
                        let s = jaccard(&tokens, &root_keys[i].2);
                        if s > best_score {
                            best = i;
                            best_score = s;
                        }
                    }
                    best
                }
            };
            targets.push(idx);
        }

        let mut t = self.next_version(clock);
        for (e, idx) in entries.iter().zip(targets) {
            let root = self.roots[idx].clone();
            t.attach_with_lang(&root, std::slice::from_ref(&e.label), Some(e.lang), TagSource::ImportedScraped, 1);
        }
        Ok(t)
    }

    /// `⌈p·n⌉` tags per language, drawn without replacement. zh tags come
    /// first, then en; within a language tags keep tree pre-order.
    pub fn sample_tags(&self, proportion: f64, seed: u64) -> Result<Vec<TagNode>, WktError> {
        if !(proportion > 0.0 && proportion <= 1.0) {
            return Err(WktError::InvalidProportion(proportion));
        }
        if self.nodes.is_empty() {
            return Err(WktError::EmptyTree);
        }
        let order = self.preorder();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for lang in Lang::ALL {
            let pool: Vec<&TagNode> = order.iter().copied().filter(|n| n.lang == lang).collect();
            let k = proportional_count(proportion, pool.len());
            let mut picked = index::sample(&mut rng, pool.len(), k).into_vec();
            picked.sort_unstable();
            out.extend(picked.into_iter().map(|i| pool[i].clone()));
        }
        Ok(out)
    }

    /// Checks every structural invariant; used when loading files.
    pub fn validate(&self) -> Result<(), WktError> {
        let bad = |m: String| Err(WktError::Invalid(m));
        let mut seen: HashSet<&TagId> = HashSet::new();
        let mut root_labels = HashSet::new();
        for r in &self.roots {
            let Some(n) = self.nodes.get(r) else {
                return bad(format!("root {r} has no node"));
            };
            if n.parent.is_some() || n.depth != 0 || n.source != TagSource::Root {
                return bad(format!("root {r} must have depth 0, no parent and source root"));
            }
            if !root_labels.insert((n.lang, normalize_label(&n.label))) {
                return bad(format!("duplicate root label `{}`", n.label));
            }
        }
        let mut stack: Vec<&TagId> = self.roots.iter().collect();
        while let Some(id) = stack.pop() {
            if !seen.insert(id) {
                return bad(format!("node {id} is reachable twice"));
            }
            let n = &self.nodes[id];
            if &n.id != id {
                return bad(format!("node keyed {id} carries id {}", n.id));
            }
            let mut labels = HashSet::new();
            for c in &n.children {
                let Some(child) = self.nodes.get(c) else {
                    return bad(format!("node {id} lists missing child {c}"));
                };
                if child.parent.as_ref() != Some(id) {
                    return bad(format!("child {c} does not point back to {id}"));
                }
                if child.depth != n.depth + 1 {
                    return bad(format!("child {c} has depth {} under depth {}", child.depth, n.depth));
                }
                if child.source == TagSource::Root {
                    return bad(format!("non-root node {c} has source root"));
                }
                if !labels.insert(normalize_label(&child.label)) {
                    return bad(format!("duplicate sibling label `{}` under {id}", child.label));
                }
                stack.push(c);
            }
        }
        if seen.len() != self.nodes.len() {
            return bad(format!("{} node(s) are unreachable from the roots", self.nodes.len() - seen.len()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = canonical::to_string_pretty(&TreeFile::from(self)).expect("tree serializes");
        s.push('\n');
        s
    }

    pub fn from_json(raw: &str) -> Result<Self, WktError> {
        let file: TreeFile = serde_json::from_str(raw).map_err(|e| WktError::Invalid(e.to_string()))?;
        let tree = Self::try_from(file)?;
        Ok(tree)
    }

    /// SHA-256 of the canonical serialization.
    pub fn content_hash(&self) -> String {
        canonical::sha256_hex(
            canonical::to_string(&TreeFile::from(self))
                .expect("tree serializes")
                .as_bytes(),
        )
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TreeFile {
    version: u64,
    created_at: String,
    roots: Vec<TagId>,
    nodes: BTreeMap<TagId, NodeFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeFile {
    label: String,
    lang: Lang,
    depth: u32,
    parent: Option<TagId>,
    source: TagSource,
    children: Vec<TagId>,
}

impl From<&KnowledgeTree> for TreeFile {
    fn from(t: &KnowledgeTree) -> Self {
        TreeFile {
            version: t.version,
            created_at: t.created_at.clone(),
            roots: t.roots.clone(),
            nodes: t
                .nodes
                .iter()
                .map(|(id, n)| {
                    (
                        id.clone(),
                        NodeFile {
                            label: n.label.clone(),
                            lang: n.lang,
                            depth: n.depth,
                            parent: n.parent.clone(),
                            source: n.source,
                            children: n.children.clone(),
                        },
                    )
                })
                .collect(),
        }
    }
}

impl TryFrom<TreeFile> for KnowledgeTree {
    type Error = WktError;

    fn try_from(f: TreeFile) -> Result<Self, WktError> {
        if chrono::DateTime::parse_from_rfc3339(&f.created_at).is_err() {
            return Err(WktError::Invalid(format!("created_at `{}` is not RFC 3339", f.created_at)));
        }
        let tree = KnowledgeTree {
            version: f.version,
            created_at: f.created_at,
            roots: f.roots,
            nodes: f
                .nodes
                .into_iter()
                .map(|(id, n)| {
                    (
                        id.clone(),
                        TagNode {
                            id,
                            label: n.label,
                            lang: n.lang,
                            depth: n.depth,
                            parent: n.parent,
                            source: n.source,
                            children: n.children,
                        },
                    )
                })
                .collect(),
        };
        tree.validate()?;
        Ok(tree)
    }
}
