//! The heterogeneous strategy knowledge graph.
//!
//! Nodes are problems, strategies, and categories; edges record observed
//! problem–strategy usage and strategy–category membership. Only train-split
//! problems enter the graph. Strategy instances are deduplicated by
//! normalized text within a source (never across sources, since source
//! identity drives retention and features), and category node features are
//! the mean of their member strategies' features.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Source, Split};
use crate::embedding::EmbeddingTable;
use crate::taxonomy::{Taxonomy, TemplateId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Problem,
    Strategy,
    Category,
}

/// A (kind, id) node reference, unique within a graph.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeRef {
    pub kind: NodeKind,
    pub id: String,
}

impl NodeRef {
    pub fn problem(id: impl Into<String>) -> Self {
        NodeRef {
            kind: NodeKind::Problem,
            id: id.into(),
        }
    }

    pub fn strategy(id: impl Into<String>) -> Self {
        NodeRef {
            kind: NodeKind::Strategy,
            id: id.into(),
        }
    }

    pub fn category(id: impl Into<String>) -> Self {
        NodeRef {
            kind: NodeKind::Category,
            id: id.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Usage,
    Membership,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EdgeRef {
    pub kind: EdgeKind,
    pub from: NodeRef,
    pub to: NodeRef,
}

impl EdgeRef {
    /// Usage edges connect problem↔strategy, membership edges
    /// strategy↔category; anything else violates the schema.
    pub fn type_ok(&self) -> bool {
        match self.kind {
            EdgeKind::Usage => {
                self.from.kind == NodeKind::Problem && self.to.kind == NodeKind::Strategy
            }
            EdgeKind::Membership => {
                self.from.kind == NodeKind::Strategy && self.to.kind == NodeKind::Category
            }
        }
    }
}

/// Metadata kept for each deduplicated strategy node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyNodeMeta {
    pub source: Source,
    pub template_id: TemplateId,
    /// Raw text of the representative (lowest-id) merged instance.
    pub text: String,
    /// Instance ids merged into this node, ascending.
    pub members: Vec<String>,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GraphError {
    #[error("missing embedding for {kind:?} node `{id}`")]
    MissingEmbedding { kind: NodeKind, id: String },
    #[error("edge endpoint {kind:?} `{id}` is not a node in the graph")]
    UnknownEndpoint { kind: NodeKind, id: String },
    #[error("duplicate edge {0:?}")]
    DuplicateEdge(EdgeKind),
    #[error("edge kind {0:?} connects the wrong node kinds")]
    EdgeTypeViolation(EdgeKind),
    #[error("unknown node {kind:?} `{id}`")]
    UnknownNode { kind: NodeKind, id: String },
}

/// Per-(category, template) record of which sources survive retention.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RetentionMap {
    retained: BTreeMap<(String, TemplateId), BTreeSet<Source>>,
}

impl RetentionMap {
    /// Sources retained for a (category, template) pair. Pairs without any
    /// executability evidence keep both sources.
    pub fn retained(&self, category_id: &str, template_id: &str) -> BTreeSet<Source> {
        self.retained
            .get(&(category_id.into(), template_id.into()))
            .cloned()
            .unwrap_or_else(|| BTreeSet::from([Source::Human, Source::Model]))
    }

    pub fn entries(&self) -> impl Iterator<Item = (&(String, TemplateId), &BTreeSet<Source>)> {
        self.retained.iter()
    }
}

/// Immutable heterogeneous graph with undirected adjacency for message
/// passing. Node order is ascending (kind, id) and every index-based view
/// follows that order.
#[derive(Debug, Clone, PartialEq)]
pub struct HeteroGraph {
    nodes: Vec<NodeRef>,
    index: BTreeMap<NodeRef, usize>,
    edges: Vec<EdgeRef>,
    adjacency: Vec<Vec<usize>>,
    features: Vec<Vec<f64>>,
    strategy_meta: BTreeMap<String, StrategyNodeMeta>,
    instance_to_node: BTreeMap<String, String>,
    self_loops: bool,
}

impl HeteroGraph {
    /// Assemble and validate a graph from explicit parts. `build_graph` is
    /// the usual entry point; this constructor also serves checkpoint
    /// reloading. Category nodes are derived from membership edges and their
    /// features recomputed by mean-pooling member strategy features.
    pub fn from_parts(
        problem_ids: Vec<String>,
        strategy_nodes: Vec<(String, StrategyNodeMeta)>,
        instance_to_node: BTreeMap<String, String>,
        edges: Vec<EdgeRef>,
        problem_embeddings: &EmbeddingTable,
        strategy_embeddings: &EmbeddingTable,
        self_loops: bool,
    ) -> Result<Self, GraphError> {
        let mut nodes: Vec<NodeRef> = Vec::new();
        let mut features_by_node: BTreeMap<NodeRef, Vec<f64>> = BTreeMap::new();

        for pid in &problem_ids {
            let node = NodeRef::problem(pid.clone());
            let emb = problem_embeddings
                .get(pid)
                .ok_or_else(|| GraphError::MissingEmbedding {
                    kind: NodeKind::Problem,
                    id: pid.clone(),
                })?;
            features_by_node.insert(node.clone(), emb.values().to_vec());
            nodes.push(node);
        }

        let mut strategy_meta: BTreeMap<String, StrategyNodeMeta> = BTreeMap::new();
        for (sid, meta) in strategy_nodes {
            let node = NodeRef::strategy(sid.clone());
            // The representative instance id doubles as the feature reference.
            let emb = strategy_embeddings
                .get(&sid)
                .ok_or_else(|| GraphError::MissingEmbedding {
                    kind: NodeKind::Strategy,
                    id: sid.clone(),
                })?;
            features_by_node.insert(node.clone(), emb.values().to_vec());
            nodes.push(node);
            strategy_meta.insert(sid, meta);
        }

        // Category nodes exist exactly where membership edges point.
        let mut category_members: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for e in &edges {
            if e.kind == EdgeKind::Membership {
                category_members
                    .entry(e.to.id.clone())
                    .or_default()
                    .push(e.from.id.clone());
            }
        }
        for (cid, members) in &category_members {
            let node = NodeRef::category(cid.clone());
            let mut mean = alloc::vec![0.0; crate::embedding::EMBEDDING_DIM];
            for m in members {
                let f = features_by_node
                    .get(&NodeRef::strategy(m.clone()))
                    .ok_or_else(|| GraphError::UnknownEndpoint {
                        kind: NodeKind::Strategy,
                        id: m.clone(),
                    })?;
                crate::linalg::axpy(&mut mean, f, 1.0);
            }
            for v in &mut mean {
                *v /= members.len() as f64;
            }
            features_by_node.insert(node.clone(), mean);
            nodes.push(node);
        }

        nodes.sort();
        let index: BTreeMap<NodeRef, usize> = nodes
            .iter()
            .cloned()
            .enumerate()
            .map(|(i, n)| (n, i))
            .collect();

        let mut seen_edges: BTreeSet<EdgeRef> = BTreeSet::new();
        let mut adjacency: Vec<Vec<usize>> = alloc::vec![Vec::new(); nodes.len()];
        for e in &edges {
            if !e.type_ok() {
                return Err(GraphError::EdgeTypeViolation(e.kind));
            }
            let from = *index.get(&e.from).ok_or_else(|| GraphError::UnknownEndpoint {
                kind: e.from.kind,
                id: e.from.id.clone(),
            })?;
            let to = *index.get(&e.to).ok_or_else(|| GraphError::UnknownEndpoint {
                kind: e.to.kind,
                id: e.to.id.clone(),
            })?;
            if !seen_edges.insert(e.clone()) {
                return Err(GraphError::DuplicateEdge(e.kind));
            }
            adjacency[from].push(to);
            adjacency[to].push(from);
        }
        for neighbors in &mut adjacency {
            neighbors.sort_unstable();
            neighbors.dedup();
        }

        let mut edges = edges;
        edges.sort();

        let features = nodes
            .iter()
            .map(|n| features_by_node.remove(n).expect("feature for every node"))
            .collect();

        Ok(HeteroGraph {
            nodes,
            index,
            edges,
            adjacency,
            features,
            strategy_meta,
            instance_to_node,
            self_loops,
        })
    }

    pub fn nodes(&self) -> &[NodeRef] {
        &self.nodes
    }

    pub fn edges(&self) -> &[EdgeRef] {
        &self.edges
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node_index(&self, node: &NodeRef) -> Option<usize> {
        self.index.get(node).copied()
    }

    pub fn node_kind(&self, idx: usize) -> NodeKind {
        self.nodes[idx].kind
    }

    pub fn feature(&self, idx: usize) -> &[f64] {
        &self.features[idx]
    }

    /// Neighbor indices excluding the node itself, ascending.
    pub fn neighbor_indices(&self, idx: usize) -> &[usize] {
        &self.adjacency[idx]
    }

    pub fn self_loops(&self) -> bool {
        self.self_loops
    }

    pub fn strategy_meta(&self, node_id: &str) -> Option<&StrategyNodeMeta> {
        self.strategy_meta.get(node_id)
    }

    pub fn strategy_nodes(&self) -> impl Iterator<Item = (&String, &StrategyNodeMeta)> {
        self.strategy_meta.iter()
    }

    /// Strategy node an instance was merged into.
    pub fn node_of_instance(&self, instance_id: &str) -> Option<&String> {
        self.instance_to_node.get(instance_id)
    }

    pub fn instance_map(&self) -> &BTreeMap<String, String> {
        &self.instance_to_node
    }

    pub fn category_ids(&self) -> impl Iterator<Item = &String> {
        self.nodes
            .iter()
            .filter(|n| n.kind == NodeKind::Category)
            .map(|n| &n.id)
    }

    /// Strategy node ids with a membership edge into the category.
    pub fn category_member_ids(&self, category_id: &str) -> Vec<&String> {
        let node = NodeRef::category(category_id);
        let Some(idx) = self.node_index(&node) else {
            return Vec::new();
        };
        self.adjacency[idx]
            .iter()
            .filter(|&&j| self.nodes[j].kind == NodeKind::Strategy)
            .map(|&j| &self.nodes[j].id)
            .collect()
    }
}

/// Collapse whitespace runs and lowercase; the dedup key for strategy text.
pub fn normalize_text(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut last_was_space = true;
    for ch in text.chars() {
        if ch.is_whitespace() {
            if !last_was_space {
                out.push(' ');
                last_was_space = true;
            }
        } else {
            for c in ch.to_lowercase() {
                out.push(c);
            }
            last_was_space = false;
        }
    }
    while out.ends_with(' ') {
        out.pop();
    }
    out
}

/// Build the graph from the train split of a corpus.
///
/// One problem node per train problem; one strategy node per group of
/// instances sharing (source, normalized text); one category node per
/// template with at least one member. Usage edges link each train problem to
/// the nodes of its instances; membership edges link each strategy node to
/// its template. Construction is a pure function of its inputs.
pub fn build_graph(
    corpus: &Corpus,
    problem_embeddings: &EmbeddingTable,
    strategy_embeddings: &EmbeddingTable,
    taxonomy: &Taxonomy,
) -> Result<HeteroGraph, GraphError> {
    let mut train_ids: Vec<String> = corpus
        .problems_in_split(Split::Train)
        .map(|p| p.id.clone())
        .collect();
    train_ids.sort_unstable();
    let train_set: BTreeSet<&str> = train_ids.iter().map(|s| s.as_str()).collect();

    // Group instances of train problems by (source, normalized text);
    // ascending instance id makes the first member the representative.
    let mut instances: Vec<&crate::corpus::StrategyInstance> = corpus
        .strategies()
        .iter()
        .filter(|s| train_set.contains(s.problem_id.as_str()))
        .collect();
    instances.sort_by(|a, b| a.id.cmp(&b.id));

    let mut node_of_key: BTreeMap<(Source, String), String> = BTreeMap::new();
    let mut metas: BTreeMap<String, StrategyNodeMeta> = BTreeMap::new();
    let mut templates_of_node: BTreeMap<String, BTreeSet<TemplateId>> = BTreeMap::new();
    let mut instance_to_node: BTreeMap<String, String> = BTreeMap::new();
    let mut usage: BTreeSet<(String, String)> = BTreeSet::new();

    for inst in &instances {
        debug_assert!(taxonomy.contains(&inst.template_id));
        let key = (inst.source, normalize_text(&inst.text));
        let node_id = node_of_key.entry(key).or_insert_with(|| {
            metas.insert(
                inst.id.clone(),
                StrategyNodeMeta {
                    source: inst.source,
                    template_id: inst.template_id.clone(),
                    text: inst.text.clone(),
                    members: Vec::new(),
                },
            );
            inst.id.clone()
        });
        let meta = metas.get_mut(node_id).expect("meta inserted above");
        meta.members.push(inst.id.clone());
        templates_of_node
            .entry(node_id.clone())
            .or_default()
            .insert(inst.template_id.clone());
        instance_to_node.insert(inst.id.clone(), node_id.clone());
        usage.insert((inst.problem_id.clone(), node_id.clone()));
    }

    let mut edges: Vec<EdgeRef> = Vec::new();
    for (pid, sid) in usage {
        edges.push(EdgeRef {
            kind: EdgeKind::Usage,
            from: NodeRef::problem(pid),
            to: NodeRef::strategy(sid),
        });
    }
    for (sid, templates) in &templates_of_node {
        for t in templates {
            edges.push(EdgeRef {
                kind: EdgeKind::Membership,
                from: NodeRef::strategy(sid.clone()),
                to: NodeRef::category(t.clone()),
            });
        }
    }

    HeteroGraph::from_parts(
        train_ids,
        metas.into_iter().collect(),
        instance_to_node,
        edges,
        problem_embeddings,
        strategy_embeddings,
        true,
    )
}

/// Deterministic neighbor listing for message passing: ascending by
/// (kind, id), with the node itself included when self-loops are enabled.
pub fn neighbors(graph: &HeteroGraph, node: &NodeRef) -> Result<Vec<NodeRef>, GraphError> {
    let idx = graph.node_index(node).ok_or_else(|| GraphError::UnknownNode {
        kind: node.kind,
        id: node.id.clone(),
    })?;
    let mut ids: Vec<usize> = graph.neighbor_indices(idx).to_vec();
    if graph.self_loops() && !ids.contains(&idx) {
        ids.push(idx);
        ids.sort_unstable();
    }
    Ok(ids.into_iter().map(|i| graph.nodes()[i].clone()).collect())
}

/// Source-aware retention per (category, template).
///
/// `exec_scores` maps strategy node ids to posterior mean executability.
/// Where both sources have at least `min_coverage` scored strategies, only
/// the source with the higher mean posterior survives (ties favor human);
/// sparse coverage keeps both sources.
pub fn source_aware_retention(
    graph: &HeteroGraph,
    exec_scores: &BTreeMap<String, f64>,
    min_coverage: usize,
) -> RetentionMap {
    let mut retained: BTreeMap<(String, TemplateId), BTreeSet<Source>> = BTreeMap::new();
    for cid in graph.category_ids() {
        // Group members by their own template so the (category, template)
        // key stays meaningful even for multi-template strategy nodes.
        let mut groups: BTreeMap<TemplateId, Vec<&StrategyNodeMeta>> = BTreeMap::new();
        for sid in graph.category_member_ids(cid) {
            let meta = graph.strategy_meta(sid).expect("member has meta");
            groups.entry(meta.template_id.clone()).or_default().push(meta);
        }
        for (template, members) in groups {
            let mut sums: BTreeMap<Source, (f64, usize)> = BTreeMap::new();
            for meta in &members {
                let node_id = &meta.members[0];
                if let Some(score) = exec_scores.get(node_id) {
                    let entry = sums.entry(meta.source).or_insert((0.0, 0));
                    entry.0 += score;
                    entry.1 += 1;
                }
            }
            let coverage = |s: Source| sums.get(&s).map_or(0, |(_, n)| *n);
            let mean = |s: Source| {
                let (total, n) = sums.get(&s).copied().unwrap_or((0.0, 0));
                if n == 0 {
                    0.0
                } else {
                    total / n as f64
                }
            };
            let keep: BTreeSet<Source> = if coverage(Source::Human) >= min_coverage
                && coverage(Source::Model) >= min_coverage
            {
                if mean(Source::Human) >= mean(Source::Model) {
                    BTreeSet::from([Source::Human])
                } else {
                    BTreeSet::from([Source::Model])
                }
            } else {
                BTreeSet::from([Source::Human, Source::Model])
            };
            retained.insert((cid.clone(), template), keep);
        }
    }
    RetentionMap { retained }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Origin, Problem, StrategyInstance, Subject};
    use crate::embedding::TableKind;
    use crate::taxonomy::Taxonomy;
    use alloc::format;
    use alloc::string::ToString;
    use alloc::vec;

    fn problem(id: &str, split: Split) -> Problem {
        Problem {
            id: id.into(),
            text: format!("problem {id}"),
            subject: Subject::Geometry,
            difficulty: 4,
            origin: Origin::Synthetic,
            split: Some(split),
        }
    }

    fn instance(id: &str, pid: &str, source: Source, template: &str, text: &str) -> StrategyInstance {
        StrategyInstance {
            id: id.into(),
            problem_id: pid.into(),
            source,
            text: text.into(),
            template_id: template.into(),
        }
    }

    fn basis(i: usize) -> Vec<f64> {
        let mut v = vec![0.0; crate::embedding::EMBEDDING_DIM];
        v[i % crate::embedding::EMBEDDING_DIM] = 1.0;
        v
    }

    fn tables(problems: &[&str], strategies: &[&str]) -> (EmbeddingTable, EmbeddingTable) {
        let p = EmbeddingTable::from_entries(
            TableKind::Problem,
            problems.iter().enumerate().map(|(i, id)| ((*id).into(), basis(i))),
        )
        .unwrap();
        let s = EmbeddingTable::from_entries(
            TableKind::Strategy,
            strategies
                .iter()
                .enumerate()
                .map(|(i, id)| ((*id).into(), basis(i + 100))),
        )
        .unwrap();
        (p, s)
    }

    fn corpus(problems: Vec<Problem>, strategies: Vec<StrategyInstance>) -> Corpus {
        Corpus::new(problems, vec![], strategies, vec![], vec![], Taxonomy::canonical()).unwrap()
    }

    #[test]
    fn direct_construction_counts() {
        let c = corpus(
            vec![problem("p1", Split::Train)],
            vec![
                instance("s1", "p1", Source::Human, "angle_chasing", "chase angles"),
                instance("s2", "p1", Source::Human, "angle_chasing", "use inscribed angles"),
            ],
        );
        let (pt, st) = tables(&["p1"], &["s1", "s2"]);
        let g = build_graph(&c, &pt, &st, c.taxonomy()).unwrap();
        assert_eq!(g.node_count(), 1 + 2 + 1);
        let usage = g.edges().iter().filter(|e| e.kind == EdgeKind::Usage).count();
        let membership = g.edges().iter().filter(|e| e.kind == EdgeKind::Membership).count();
        assert_eq!((usage, membership), (2, 2));
    }

    #[test]
    fn identical_normalized_text_same_source_merges() {
        let c = corpus(
            vec![problem("p1", Split::Train), problem("p2", Split::Train)],
            vec![
                instance("s1", "p1", Source::Human, "pigeonhole", "Apply  Pigeonhole"),
                instance("s2", "p2", Source::Human, "pigeonhole", "apply pigeonhole"),
            ],
        );
        let (pt, st) = tables(&["p1", "p2"], &["s1", "s2"]);
        let g = build_graph(&c, &pt, &st, c.taxonomy()).unwrap();
        // Single strategy node with two usage edges, one per problem.
        let strategy_nodes = g.nodes().iter().filter(|n| n.kind == NodeKind::Strategy).count();
        assert_eq!(strategy_nodes, 1);
        let usage = g.edges().iter().filter(|e| e.kind == EdgeKind::Usage).count();
        assert_eq!(usage, 2);
        assert_eq!(g.node_of_instance("s2"), Some(&"s1".into()));
        let meta = g.strategy_meta("s1").unwrap();
        assert_eq!(meta.members, vec!["s1".to_string(), "s2".to_string()]);
    }

    #[test]
    fn same_text_different_source_stays_separate() {
        let c = corpus(
            vec![problem("p1", Split::Train)],
            vec![
                instance("s1", "p1", Source::Human, "pigeonhole", "apply pigeonhole"),
                instance("s2", "p1", Source::Model, "pigeonhole", "apply pigeonhole"),
            ],
        );
        let (pt, st) = tables(&["p1"], &["s1", "s2"]);
        let g = build_graph(&c, &pt, &st, c.taxonomy()).unwrap();
        let strategy_nodes = g.nodes().iter().filter(|n| n.kind == NodeKind::Strategy).count();
        assert_eq!(strategy_nodes, 2);
    }

    #[test]
    fn non_train_problems_are_excluded_entirely() {
        let c = corpus(
            vec![problem("p1", Split::Train), problem("p2", Split::Test)],
            vec![
                instance("s1", "p1", Source::Human, "pigeonhole", "apply pigeonhole"),
                instance("s2", "p2", Source::Human, "bijection", "find a bijection"),
            ],
        );
        let (pt, st) = tables(&["p1", "p2"], &["s1", "s2"]);
        let g = build_graph(&c, &pt, &st, c.taxonomy()).unwrap();
        assert!(g.node_index(&NodeRef::problem("p2")).is_none());
        assert!(g.node_index(&NodeRef::strategy("s2")).is_none());
        assert!(g
            .nodes()
            .iter()
            .filter(|n| n.kind == NodeKind::Problem)
            .all(|n| n.id == "p1"));
    }

    #[test]
    fn missing_embedding_is_an_error() {
        let c = corpus(
            vec![problem("p1", Split::Train)],
            vec![instance("s1", "p1", Source::Human, "pigeonhole", "pigeonhole")],
        );
        let (pt, _) = tables(&["p1"], &[]);
        let st = EmbeddingTable::new(TableKind::Strategy);
        let err = build_graph(&c, &pt, &st, c.taxonomy()).unwrap_err();
        assert_eq!(
            err,
            GraphError::MissingEmbedding {
                kind: NodeKind::Strategy,
                id: "s1".into()
            }
        );
    }

    #[test]
    fn category_feature_is_mean_of_member_features() {
        let c = corpus(
            vec![problem("p1", Split::Train)],
            vec![
                instance("s1", "p1", Source::Human, "pigeonhole", "pigeonhole argument"),
                instance("s2", "p1", Source::Model, "pigeonhole", "holes and pigeons"),
            ],
        );
        let (pt, st) = tables(&["p1"], &["s1", "s2"]);
        let g = build_graph(&c, &pt, &st, c.taxonomy()).unwrap();
        let cat = g.node_index(&NodeRef::category("pigeonhole")).unwrap();
        let s1 = g.node_index(&NodeRef::strategy("s1")).unwrap();
        let s2 = g.node_index(&NodeRef::strategy("s2")).unwrap();
        for d in 0..crate::embedding::EMBEDDING_DIM {
            let mean = (g.feature(s1)[d] + g.feature(s2)[d]) / 2.0;
            assert!((g.feature(cat)[d] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn rebuild_yields_identical_graph() {
        let c = corpus(
            vec![problem("p1", Split::Train), problem("p2", Split::Train)],
            vec![
                instance("s1", "p1", Source::Human, "pigeonhole", "pigeonhole"),
                instance("s2", "p2", Source::Model, "bijection", "bijection"),
            ],
        );
        let (pt, st) = tables(&["p1", "p2"], &["s1", "s2"]);
        let a = build_graph(&c, &pt, &st, c.taxonomy()).unwrap();
        let b = build_graph(&c, &pt, &st, c.taxonomy()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn neighbors_isolated_node_with_self_loops() {
        let c = corpus(vec![problem("p1", Split::Train)], vec![]);
        let (pt, st) = tables(&["p1"], &[]);
        let g = build_graph(&c, &pt, &st, c.taxonomy()).unwrap();
        let n = neighbors(&g, &NodeRef::problem("p1")).unwrap();
        assert_eq!(n, vec![NodeRef::problem("p1")]);
    }

    #[test]
    fn neighbors_of_problem_are_strategies_plus_self() {
        let c = corpus(
            vec![problem("p1", Split::Train)],
            vec![
                instance("s1", "p1", Source::Human, "pigeonhole", "a"),
                instance("s2", "p1", Source::Model, "bijection", "b"),
            ],
        );
        let (pt, st) = tables(&["p1"], &["s1", "s2"]);
        let g = build_graph(&c, &pt, &st, c.taxonomy()).unwrap();
        let n = neighbors(&g, &NodeRef::problem("p1")).unwrap();
        assert_eq!(
            n,
            vec![
                NodeRef::problem("p1"),
                NodeRef::strategy("s1"),
                NodeRef::strategy("s2"),
            ]
        );
    }

    #[test]
    fn neighbors_of_unknown_node_errors() {
        let c = corpus(vec![problem("p1", Split::Train)], vec![]);
        let (pt, st) = tables(&["p1"], &[]);
        let g = build_graph(&c, &pt, &st, c.taxonomy()).unwrap();
        assert!(matches!(
            neighbors(&g, &NodeRef::problem("ghost")),
            Err(GraphError::UnknownNode { .. })
        ));
    }

    fn retention_fixture(human_n: usize, model_n: usize) -> HeteroGraph {
        let mut strategies = Vec::new();
        let mut ids = Vec::new();
        // Spread instances over problems to respect the per-source cap.
        let n_problems = 1 + (human_n.max(model_n) + 4) / 5;
        let problems: Vec<Problem> = (0..n_problems)
            .map(|i| problem(&format!("p{i}"), Split::Train))
            .collect();
        for i in 0..human_n {
            let id = format!("h{i}");
            strategies.push(instance(
                &id,
                &format!("p{}", i / 5),
                Source::Human,
                "pigeonhole",
                &format!("human way {i}"),
            ));
            ids.push(id);
        }
        for i in 0..model_n {
            let id = format!("m{i}");
            strategies.push(instance(
                &id,
                &format!("p{}", i / 5),
                Source::Model,
                "pigeonhole",
                &format!("model way {i}"),
            ));
            ids.push(id);
        }
        let pids: Vec<String> = problems.iter().map(|p| p.id.clone()).collect();
        let pref: Vec<&str> = pids.iter().map(|s| s.as_str()).collect();
        let iref: Vec<&str> = ids.iter().map(|s| s.as_str()).collect();
        let (pt, st) = tables(&pref, &iref);
        let c = corpus(problems, strategies);
        build_graph(&c, &pt, &st, c.taxonomy()).unwrap()
    }

    #[test]
    fn retention_keeps_better_source_at_full_coverage() {
        let g = retention_fixture(5, 5);
        let mut scores = BTreeMap::new();
        for i in 0..5 {
            scores.insert(format!("h{i}"), 0.7);
            scores.insert(format!("m{i}"), 0.4);
        }
        let r = source_aware_retention(&g, &scores, 3);
        assert_eq!(
            r.retained("pigeonhole", "pigeonhole"),
            BTreeSet::from([Source::Human])
        );
    }

    #[test]
    fn retention_keeps_both_under_sparse_coverage() {
        let g = retention_fixture(5, 1);
        let mut scores = BTreeMap::new();
        for i in 0..5 {
            scores.insert(format!("h{i}"), 0.9);
        }
        scores.insert("m0".into(), 0.95);
        let r = source_aware_retention(&g, &scores, 3);
        assert_eq!(
            r.retained("pigeonhole", "pigeonhole"),
            BTreeSet::from([Source::Human, Source::Model])
        );
    }

    #[test]
    fn retention_tie_goes_to_human() {
        let g = retention_fixture(3, 3);
        let mut scores = BTreeMap::new();
        for i in 0..3 {
            scores.insert(format!("h{i}"), 0.6);
            scores.insert(format!("m{i}"), 0.6);
        }
        let r = source_aware_retention(&g, &scores, 3);
        assert_eq!(
            r.retained("pigeonhole", "pigeonhole"),
            BTreeSet::from([Source::Human])
        );
    }

    #[test]
    fn retention_defaults_to_both_without_evidence() {
        let g = retention_fixture(2, 2);
        let r = source_aware_retention(&g, &BTreeMap::new(), 3);
        assert_eq!(
            r.retained("pigeonhole", "pigeonhole"),
            BTreeSet::from([Source::Human, Source::Model])
        );
        // Unknown keys also default to both.
        assert_eq!(
            r.retained("nope", "nope"),
            BTreeSet::from([Source::Human, Source::Model])
        );
    }

    #[test]
    fn normalize_text_collapses_case_and_whitespace() {
        assert_eq!(normalize_text("  Apply\t The  RULE \n"), "apply the rule");
        assert_eq!(normalize_text(""), "");
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arb_graph_corpus() -> impl Strategy<Value = Corpus> {
            let template = prop::sample::select(vec![
                "pigeonhole",
                "bijection",
                "invariant",
                "angle_chasing",
            ]);
            let inst = (template, 0u8..3);
            let per_problem = prop::collection::vec(inst, 1..=4);
            prop::collection::vec((per_problem, prop::bool::ANY), 1..=6).prop_map(|spec| {
                let mut problems = Vec::new();
                let mut strategies = Vec::new();
                for (pi, (insts, is_train)) in spec.into_iter().enumerate() {
                    let pid = format!("p{pi}");
                    problems.push(problem(
                        &pid,
                        if is_train { Split::Train } else { Split::Test },
                    ));
                    for (si, (template, text_variant)) in insts.into_iter().enumerate() {
                        let source = if si % 2 == 0 { Source::Human } else { Source::Model };
                        strategies.push(instance(
                            &format!("s{pi}_{si}"),
                            &pid,
                            source,
                            template,
                            &format!("{template} variant {text_variant}"),
                        ));
                    }
                }
                Corpus::new(
                    problems,
                    vec![],
                    strategies,
                    vec![],
                    vec![],
                    Taxonomy::canonical(),
                )
                .unwrap()
            })
        }

        proptest! {
            #[test]
            fn edge_types_and_train_confinement_hold(c in arb_graph_corpus()) {
                let pids: Vec<&str> = c.problems().iter().map(|p| p.id.as_str()).collect();
                let sids: Vec<&str> = c.strategies().iter().map(|s| s.id.as_str()).collect();
                let (pt, st) = tables(&pids, &sids);
                let g = build_graph(&c, &pt, &st, c.taxonomy()).unwrap();
                for e in g.edges() {
                    prop_assert!(e.type_ok());
                }
                let train: BTreeSet<&str> = c
                    .problems_in_split(Split::Train)
                    .map(|p| p.id.as_str())
                    .collect();
                for n in g.nodes() {
                    if n.kind == NodeKind::Problem {
                        prop_assert!(train.contains(n.id.as_str()));
                    }
                }
                // Adjacency is symmetric and self-free.
                for i in 0..g.node_count() {
                    for &j in g.neighbor_indices(i) {
                        prop_assert!(j != i);
                        prop_assert!(g.neighbor_indices(j).contains(&i));
                    }
                }
            }
        }
    }
}
