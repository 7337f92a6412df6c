//! Heterogeneous-graph data model: typed nodes and relations, meta-path
//! adjacency composition, schema-neighbor sampling and the construction of
//! per-node positive/negative sets from meta-path connection counts.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{HecoError, Result};
use crate::tensor::Matrix;

/// Node features of one type: an explicit matrix, or implicit one-hot id
/// vectors (so an n x n identity never has to be materialized).
#[derive(Debug, Clone)]
pub enum Features {
    Dense(Matrix),
    OneHot(usize),
}

impl Features {
    pub fn num_rows(&self) -> usize {
        match self {
            Features::Dense(m) => m.rows(),
            Features::OneHot(n) => *n,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Features::Dense(m) => m.cols(),
            Features::OneHot(n) => *n,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Relation {
    pub name: String,
    pub src_type: usize,
    pub dst_type: usize,
    pub edges: Vec<(u32, u32)>,
}

/// A heterogeneous information network with one designated target node type.
#[derive(Debug, Clone)]
pub struct HeteroGraph {
    pub type_names: Vec<String>,
    pub type_counts: Vec<usize>,
    pub target_type: usize,
    pub features: Vec<Features>,
    pub relations: Vec<Relation>,
    /// Class ids for target-type nodes, when the dataset is labeled.
    pub labels: Option<Vec<usize>>,
}

impl HeteroGraph {
    pub fn num_types(&self) -> usize {
        self.type_names.len()
    }

    pub fn num_targets(&self) -> usize {
        self.type_counts[self.target_type]
    }

    pub fn type_index(&self, name: &str) -> Result<usize> {
        self.type_names
            .iter()
            .position(|t| t == name)
            .ok_or_else(|| HecoError::Graph(format!("unknown node type '{name}'")))
    }

    pub fn relation_index(&self, name: &str) -> Result<usize> {
        self.relations
            .iter()
            .position(|r| r.name == name)
            .ok_or_else(|| HecoError::Graph(format!("unknown relation '{name}'")))
    }

    /// The network schema: (type names, relation (src, dst) pairs by name).
    pub fn network_schema(&self) -> (Vec<String>, Vec<(String, String, String)>) {
        let rels = self
            .relations
            .iter()
            .map(|r| {
                (
                    r.name.clone(),
                    self.type_names[r.src_type].clone(),
                    self.type_names[r.dst_type].clone(),
                )
            })
            .collect();
        (self.type_names.clone(), rels)
    }

    /// Adjacency lists from `src` nodes to `dst` nodes along one relation,
    /// optionally reversed. Lists are sorted and deduplicated.
    pub fn step_adjacency(&self, relation: usize, reverse: bool) -> Vec<Vec<u32>> {
        let rel = &self.relations[relation];
        let (from_count, flip) = if reverse {
            (self.type_counts[rel.dst_type], true)
        } else {
            (self.type_counts[rel.src_type], false)
        };
        let mut adj = vec![Vec::new(); from_count];
        for &(s, d) in &rel.edges {
            if flip {
                adj[d as usize].push(s);
            } else {
                adj[s as usize].push(d);
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        adj
    }

    /// One-hop neighbors of each target node, per non-target type, following
    /// every relation that links the target type to that type (either
    /// direction). Used by the network-schema view.
    pub fn schema_neighbors(&self) -> BTreeMap<usize, Vec<Vec<u32>>> {
        let n_t = self.num_targets();
        let mut by_type: BTreeMap<usize, Vec<Vec<u32>>> = BTreeMap::new();
        for (ri, rel) in self.relations.iter().enumerate() {
            let other = if rel.src_type == self.target_type && rel.dst_type != self.target_type {
                Some((rel.dst_type, false))
            } else if rel.dst_type == self.target_type && rel.src_type != self.target_type {
                Some((rel.src_type, true))
            } else {
                None
            };
            if let Some((other_type, reverse)) = other {
                let adj = self.step_adjacency(ri, reverse);
                let entry = by_type
                    .entry(other_type)
                    .or_insert_with(|| vec![Vec::new(); n_t]);
                for (i, list) in adj.into_iter().enumerate() {
                    entry[i].extend(list);
                }
            }
        }
        for lists in by_type.values_mut() {
            for list in lists {
                list.sort_unstable();
                list.dedup();
            }
        }
        by_type
    }
}

/// One step of a meta-path: a relation traversed forward or backward.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetaPathStep {
    pub relation: usize,
    pub reverse: bool,
}

/// A typed relation sequence that starts and ends at the target type.
#[derive(Debug, Clone)]
pub struct MetaPath {
    pub name: String,
    pub steps: Vec<MetaPathStep>,
}

impl MetaPath {
    /// Check the chain composes and is anchored at the target type.
    pub fn validate(&self, g: &HeteroGraph) -> Result<()> {
        if self.steps.is_empty() {
            return Err(HecoError::Graph(format!("meta-path '{}' is empty", self.name)));
        }
        let ends = |s: &MetaPathStep| {
            let rel = &g.relations[s.relation];
            if s.reverse {
                (rel.dst_type, rel.src_type)
            } else {
                (rel.src_type, rel.dst_type)
            }
        };
        let mut cur = g.target_type;
        for (k, step) in self.steps.iter().enumerate() {
            if step.relation >= g.relations.len() {
                return Err(HecoError::Graph(format!(
                    "meta-path '{}' step {} references unknown relation",
                    self.name, k
                )));
            }
            let (from, to) = ends(step);
            if from != cur {
                return Err(HecoError::Graph(format!(
                    "meta-path '{}' does not compose at step {}: expected source type '{}', got '{}'",
                    self.name, k, g.type_names[cur], g.type_names[from]
                )));
            }
            cur = to;
        }
        if cur != g.target_type {
            return Err(HecoError::Graph(format!(
                "meta-path '{}' must end at the target type '{}'",
                self.name, g.type_names[g.target_type]
            )));
        }
        Ok(())
    }
}

/// Binarized composed adjacency among target nodes for one meta-path.
/// Self-loops are not stored; the GCN handles the self term separately.
#[derive(Debug, Clone)]
pub struct MetaPathAdjacency {
    pub name: String,
    pub neighbors: Vec<Vec<u32>>,
    pub degrees: Vec<usize>,
}

impl MetaPathAdjacency {
    pub fn contains(&self, i: usize, j: u32) -> bool {
        self.neighbors[i].binary_search(&j).is_ok()
    }
}

/// Boolean composition of the step adjacencies along `p`, binarized, with the
/// diagonal removed.
pub fn compose_metapath_adjacency(g: &HeteroGraph, p: &MetaPath) -> Result<MetaPathAdjacency> {
    p.validate(g)?;
    let steps: Vec<Vec<Vec<u32>>> = p
        .steps
        .iter()
        .map(|s| g.step_adjacency(s.relation, s.reverse))
        .collect();
    let n_t = g.num_targets();
    let mut neighbors = Vec::with_capacity(n_t);
    let mut frontier: Vec<u32> = Vec::new();
    let mut next: Vec<u32> = Vec::new();
    for i in 0..n_t {
        frontier.clear();
        frontier.push(i as u32);
        for adj in &steps {
            next.clear();
            for &u in &frontier {
                next.extend_from_slice(&adj[u as usize]);
            }
            next.sort_unstable();
            next.dedup();
            std::mem::swap(&mut frontier, &mut next);
        }
        let mut reach = frontier.clone();
        reach.retain(|&j| j != i as u32);
        neighbors.push(reach);
    }
    let degrees = neighbors.iter().map(|l| l.len()).collect();
    Ok(MetaPathAdjacency {
        name: p.name.clone(),
        neighbors,
        degrees,
    })
}

/// Number of meta-paths along which j is a neighbor of i. By convention the
/// self pair (i, i) counts zero since adjacencies store no self-loops.
pub fn count_metapath_connections(adjacencies: &[MetaPathAdjacency], i: usize, j: usize) -> usize {
    adjacencies
        .iter()
        .filter(|a| a.contains(i, j as u32))
        .count()
}

/// Per-node positive set P_i (self plus the top-T_pos peers by meta-path
/// connection count) and its complement N_i over the target nodes.
#[derive(Debug, Clone)]
pub struct PosNegSets {
    pub num_targets: usize,
    pub t_pos: usize,
    /// P_i sorted ascending; always contains i.
    pos: Vec<Vec<u32>>,
}

impl PosNegSets {
    pub fn positives(&self, i: usize) -> &[u32] {
        &self.pos[i]
    }

    pub fn is_positive(&self, i: usize, j: u32) -> bool {
        self.pos[i].binary_search(&j).is_ok()
    }

    /// Positive peers of i, excluding i itself.
    pub fn positive_peers(&self, i: usize) -> Vec<u32> {
        self.pos[i].iter().copied().filter(|&j| j != i as u32).collect()
    }

    /// N_i: every target node not in P_i.
    pub fn negatives(&self, i: usize) -> Vec<u32> {
        (0..self.num_targets as u32)
            .filter(|&j| !self.is_positive(i, j))
            .collect()
    }

    /// 0/1 mask with `mask[i][j] = 1` iff j is in P_i.
    pub fn positive_mask(&self) -> Matrix {
        let n = self.num_targets;
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for &j in &self.pos[i] {
                m.set(i, j as usize, 1.0);
            }
        }
        m
    }
}

/// Rank candidates by descending connection count (ties broken by ascending
/// node id) and keep the first T_pos plus the node itself.
pub fn build_positive_negative_sets(
    adjacencies: &[MetaPathAdjacency],
    t_pos: usize,
) -> Result<PosNegSets> {
    if t_pos < 1 {
        return Err(HecoError::Config("T_pos must be >= 1".into()));
    }
    let n = adjacencies
        .first()
        .map(|a| a.neighbors.len())
        .ok_or_else(|| HecoError::Contract("no meta-path adjacencies".into()))?;
    if adjacencies.iter().any(|a| a.neighbors.len() != n) {
        return Err(HecoError::Contract(
            "meta-path adjacencies disagree on target count".into(),
        ));
    }
    let mut pos = Vec::with_capacity(n);
    let mut counts: Vec<usize> = vec![0; n];
    for i in 0..n {
        for c in counts.iter_mut() {
            *c = 0;
        }
        for adj in adjacencies {
            for &j in &adj.neighbors[i] {
                counts[j as usize] += 1;
            }
        }
        let mut ranked: Vec<(usize, u32)> = counts
            .iter()
            .enumerate()
            .filter(|&(j, &c)| c > 0 && j != i)
            .map(|(j, &c)| (c, j as u32))
            .collect();
        ranked.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        let keep = ranked.len().min(t_pos);
        let mut p: Vec<u32> = ranked[..keep].iter().map(|&(_, j)| j).collect();
        p.push(i as u32);
        p.sort_unstable();
        pos.push(p);
    }
    Ok(PosNegSets {
        num_targets: n,
        t_pos,
        pos,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    /// Sample exactly T neighbors (without replacement when more than T are
    /// available, with replacement otherwise).
    Sample(usize),
    /// Keep the full neighbor list.
    All,
}

/// Per neighbor type: how many schema neighbors each target node aggregates.
#[derive(Debug, Clone)]
pub struct SchemaSampleConfig {
    /// Keyed by node-type index.
    pub per_type: BTreeMap<usize, SampleMode>,
}

impl SchemaSampleConfig {
    pub fn all() -> Self {
        SchemaSampleConfig {
            per_type: BTreeMap::new(),
        }
    }

    pub fn mode(&self, type_idx: usize) -> SampleMode {
        self.per_type.get(&type_idx).copied().unwrap_or(SampleMode::All)
    }

    pub fn validate(&self) -> Result<()> {
        for (&t, &mode) in &self.per_type {
            if let SampleMode::Sample(k) = mode {
                if k < 1 {
                    return Err(HecoError::Config(format!(
                        "sampling threshold for type index {t} must be >= 1"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Sampled schema neighbors per (target node, neighbor type). Empty lists mean
/// the node has no neighbors of that type and the type is skipped downstream.
pub type SchemaSamples = BTreeMap<usize, Vec<Vec<u32>>>;

/// Draw this epoch's neighbor multisets. Types iterate in ascending type-index
/// order and nodes in ascending id order, so a fixed RNG yields fixed samples.
pub fn sample_schema_neighbors(
    g: &HeteroGraph,
    cfg: &SchemaSampleConfig,
    rng: &mut impl Rng,
) -> Result<SchemaSamples> {
    cfg.validate()?;
    let neighbors = g.schema_neighbors();
    let mut out: SchemaSamples = BTreeMap::new();
    for (type_idx, lists) in neighbors {
        let mode = cfg.mode(type_idx);
        let sampled = lists
            .iter()
            .map(|list| match mode {
                SampleMode::All => list.clone(),
                SampleMode::Sample(t) => sample_list(list, t, rng),
            })
            .collect();
        out.insert(type_idx, sampled);
    }
    Ok(out)
}

fn sample_list(list: &[u32], t: usize, rng: &mut impl Rng) -> Vec<u32> {
    if list.is_empty() {
        return Vec::new();
    }
    if list.len() > t {
        // Partial Fisher-Yates: t distinct draws.
        let mut pool: Vec<u32> = list.to_vec();
        for k in 0..t {
            let j = rng.gen_range(k..pool.len());
            pool.swap(k, j);
        }
        pool.truncate(t);
        pool
    } else {
        (0..t).map(|_| list[rng.gen_range(0..list.len())]).collect()
    }
}

/// Non-fatal findings from [`validate_graph`].
#[derive(Debug, Clone, Default)]
pub struct Diagnostics {
    pub warnings: Vec<String>,
}

impl Diagnostics {
    pub fn is_clean(&self) -> bool {
        self.warnings.is_empty()
    }
}

/// Check the structural invariants of a graph. Violations (dangling edges,
/// bad feature tables, label range) fail fast; isolated target nodes are
/// reported as warnings.
pub fn validate_graph(g: &HeteroGraph) -> Result<Diagnostics> {
    if g.type_names.len() != g.type_counts.len() || g.type_names.len() != g.features.len() {
        return Err(HecoError::Graph(
            "type name/count/feature tables disagree".into(),
        ));
    }
    if g.target_type >= g.num_types() {
        return Err(HecoError::Graph("target type out of range".into()));
    }
    if g.num_types() + g.relations.len() <= 2 {
        return Err(HecoError::Graph(
            "a HIN needs |node types| + |relation types| > 2".into(),
        ));
    }
    for (t, feats) in g.features.iter().enumerate() {
        if feats.num_rows() != g.type_counts[t] {
            return Err(HecoError::Graph(format!(
                "type '{}' has {} nodes but {} feature rows",
                g.type_names[t],
                g.type_counts[t],
                feats.num_rows()
            )));
        }
        if let Features::Dense(m) = feats {
            if !m.all_finite() {
                return Err(HecoError::Graph(format!(
                    "features of type '{}' contain NaN/Inf",
                    g.type_names[t]
                )));
            }
        }
    }
    for rel in &g.relations {
        if rel.src_type >= g.num_types() || rel.dst_type >= g.num_types() {
            return Err(HecoError::Graph(format!(
                "relation '{}' references an unknown type",
                rel.name
            )));
        }
        for &(s, d) in &rel.edges {
            if s as usize >= g.type_counts[rel.src_type] || d as usize >= g.type_counts[rel.dst_type]
            {
                return Err(HecoError::Graph(format!(
                    "relation '{}' has edge ({}, {}) outside {}x{}",
                    rel.name, s, d, g.type_counts[rel.src_type], g.type_counts[rel.dst_type]
                )));
            }
        }
    }
    if let Some(labels) = &g.labels {
        if labels.len() != g.num_targets() {
            return Err(HecoError::Graph(format!(
                "{} labels for {} target nodes",
                labels.len(),
                g.num_targets()
            )));
        }
    }
    let mut diags = Diagnostics::default();
    let schema = g.schema_neighbors();
    for i in 0..g.num_targets() {
        let isolated = schema.values().all(|lists| lists[i].is_empty());
        if isolated {
            diags
                .warnings
                .push(format!("target node {i} has no schema neighbors of any type"));
        }
    }
    Ok(diags)
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// The toy ACM network: papers P1-P4, authors A1-A3, subjects S1-S2.
    /// PAP links P1-P2-P3 through shared authors; PSP links P1-P2 and P3-P4.
    pub fn toy_acm() -> HeteroGraph {
        let paper_feats = Matrix::from_rows(&[
            vec![1.0, 0.1, 0.0],
            vec![0.9, 0.2, 0.1],
            vec![0.0, 1.0, 0.3],
            vec![0.1, 0.8, 0.5],
        ])
        .unwrap();
        HeteroGraph {
            type_names: vec!["paper".into(), "author".into(), "subject".into()],
            type_counts: vec![4, 3, 2],
            target_type: 0,
            features: vec![
                Features::Dense(paper_feats),
                Features::OneHot(3),
                Features::OneHot(2),
            ],
            relations: vec![
                Relation {
                    name: "pa".into(),
                    src_type: 0,
                    dst_type: 1,
                    edges: vec![(0, 0), (0, 1), (1, 0), (2, 1), (1, 2), (2, 2), (3, 2)],
                },
                Relation {
                    name: "ps".into(),
                    src_type: 0,
                    dst_type: 2,
                    edges: vec![(0, 0), (1, 0), (2, 1), (3, 1)],
                },
            ],
            labels: Some(vec![0, 0, 1, 1]),
        }
    }

    pub fn toy_metapaths(g: &HeteroGraph) -> Vec<MetaPath> {
        let pa = g.relation_index("pa").unwrap();
        let ps = g.relation_index("ps").unwrap();
        vec![
            MetaPath {
                name: "PAP".into(),
                steps: vec![
                    MetaPathStep { relation: pa, reverse: false },
                    MetaPathStep { relation: pa, reverse: true },
                ],
            },
            MetaPath {
                name: "PSP".into(),
                steps: vec![
                    MetaPathStep { relation: ps, reverse: false },
                    MetaPathStep { relation: ps, reverse: true },
                ],
            },
        ]
    }
}
