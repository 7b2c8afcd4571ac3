//! Time-varying attack-defense structures.
//!
//! An arc `(u, v)` means node `u` can wage push-based attacks against `v`;
//! in adjacency terms this is `a_vu = 1`. Arc sets are stored as in-neighbor
//! CSR rows (for each target `v`, its attackers in ascending id order), which
//! is the layout every drift and Jacobian evaluation walks.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::hash::{Hash, Hasher};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::{Arc, RwLock};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::process::{Index, ParamProcess};
use crate::time_floor;

/// A static directed arc set without self-loops or duplicates.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArcSet {
    n: usize,
    offsets: Vec<usize>,
    sources: Vec<u32>,
}

impl ArcSet {
    /// Builds an arc set from `(source, target)` pairs. Self-loops and
    /// duplicates are silently discarded; use [`parse_edge_list`] when counts
    /// of discarded lines matter.
    pub fn from_arcs(n: usize, arcs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut pairs: Vec<(u32, u32)> = Vec::new();
        for (u, v) in arcs {
            if u >= n {
                return Err(Error::IndexOutOfRange { index: u, dim: n });
            }
            if v >= n {
                return Err(Error::IndexOutOfRange { index: v, dim: n });
            }
            if u != v {
                pairs.push((v as u32, u as u32));
            }
        }
        Ok(Self::from_target_source_pairs(n, pairs))
    }

    fn from_target_source_pairs(n: usize, mut pairs: Vec<(u32, u32)>) -> Self {
        pairs.sort_unstable();
        pairs.dedup();
        let mut offsets = vec![0usize; n + 1];
        for &(v, _) in &pairs {
            offsets[v as usize + 1] += 1;
        }
        for k in 0..n {
            offsets[k + 1] += offsets[k];
        }
        let sources = pairs.into_iter().map(|(_, u)| u).collect();
        ArcSet { n, offsets, sources }
    }

    pub fn empty(n: usize) -> Self {
        ArcSet {
            n,
            offsets: vec![0; n + 1],
            sources: Vec::new(),
        }
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    /// Attackers of `v`, ascending.
    pub fn in_neighbors(&self, v: usize) -> &[u32] {
        &self.sources[self.offsets[v]..self.offsets[v + 1]]
    }

    /// Offset of `v`'s first in-arc in the flat arc order.
    pub fn row_start(&self, v: usize) -> usize {
        self.offsets[v]
    }

    pub fn contains(&self, source: usize, target: usize) -> bool {
        if source >= self.n || target >= self.n {
            return false;
        }
        self.in_neighbors(target).binary_search(&(source as u32)).is_ok()
    }

    /// Iterates `(source, target)` pairs in (target, source) order, which is
    /// also the flat index order used for per-arc parameter vectors.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |v| self.in_neighbors(v).iter().map(move |&u| (u as usize, v)))
    }

    /// Out-neighbor lists, each ascending.
    pub fn out_adjacency(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n];
        for (u, v) in self.iter() {
            out[u].push(v);
        }
        out
    }

    /// Stable 64-bit fingerprint of the arc set.
    pub fn fingerprint(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.n.hash(&mut h);
        self.offsets.hash(&mut h);
        self.sources.hash(&mut h);
        h.finish()
    }
}

/// Random arc churn applied at every epoch boundary.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    /// Epoch length in simulated time units.
    pub interval: f64,
    /// Fraction of the current arc count deleted and re-added per boundary.
    pub fraction: f64,
    pub seed: u64,
}

impl Perturbation {
    /// The schedule used in the headline convergence experiments: 2% of
    /// the arcs churned every 10 time units.
    pub fn standard(seed: u64) -> Self {
        Perturbation {
            interval: 10.0,
            fraction: 0.02,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.interval > 0.0 && self.interval.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "perturbation interval must be positive, got {}",
                self.interval
            )));
        }
        if !(0.0..=1.0).contains(&self.fraction) {
            return Err(Error::InvalidArgument(format!(
                "perturbation fraction must lie in [0,1], got {}",
                self.fraction
            )));
        }
        Ok(())
    }

    /// Number of arcs swapped at a boundary for a set of `len` arcs.
    pub fn churn_count(&self, len: usize) -> usize {
        let raw = self.fraction * len as f64;
        // guard against 0.02 * 50 = 1.0000000000000002 style rounding
        (raw - 1e-9).ceil().max(0.0) as usize
    }

    /// Derives epoch `k` (k ≥ 1) from epoch `k - 1`. Deletes `m` uniformly
    /// chosen arcs and adds `m` uniformly chosen arcs absent from `prev`, so
    /// the arc count is preserved.
    fn apply(&self, prev: &ArcSet, k: u64) -> ArcSet {
        let n = prev.n;
        let len = prev.len();
        let m = self.churn_count(len);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(k);

        let m_del = m.min(len);
        let capacity = (n * n.saturating_sub(1)).saturating_sub(len);
        let m_add = m.min(capacity);

        let deleted: HashSet<usize> = index::sample(&mut rng, len, m_del).into_iter().collect();
        let mut pairs: Vec<(u32, u32)> = Vec::with_capacity(len - m_del + m_add);
        for (flat, (u, v)) in prev.iter().enumerate() {
            if !deleted.contains(&flat) {
                pairs.push((v as u32, u as u32));
            }
        }

        let mut added: HashSet<(u32, u32)> = HashSet::with_capacity(m_add);
        if m_add > 0 && capacity <= 4 * m_add {
            let absent: Vec<(u32, u32)> = (0..n)
                .flat_map(|u| (0..n).map(move |v| (u, v)))
                .filter(|&(u, v)| u != v && !prev.contains(u, v))
                .map(|(u, v)| (v as u32, u as u32))
                .collect();
            for i in index::sample(&mut rng, absent.len(), m_add) {
                added.insert(absent[i]);
            }
        } else {
            while added.len() < m_add {
                let u = rng.gen_range(0..n);
                let v = rng.gen_range(0..n);
                if u == v || prev.contains(u, v) {
                    continue;
                }
                added.insert((v as u32, u as u32));
            }
        }
        let mut added: Vec<_> = added.into_iter().collect();
        added.sort_unstable();
        pairs.extend(added);
        ArcSet::from_target_source_pairs(n, pairs)
    }
}

/// Directed node set with a deterministic, lazily materialized sequence of
/// arc epochs. Clones share the epoch cache.
#[derive(Clone, Debug)]
pub struct TemporalGraph {
    n: usize,
    base: Arc<ArcSet>,
    perturbation: Option<Perturbation>,
    epochs: Arc<RwLock<Vec<Arc<ArcSet>>>>,
}

impl TemporalGraph {
    pub fn new(base: ArcSet) -> Self {
        let base = Arc::new(base);
        TemporalGraph {
            n: base.node_count(),
            epochs: Arc::new(RwLock::new(vec![base.clone()])),
            base,
            perturbation: None,
        }
    }

    pub fn from_arcs(n: usize, arcs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        Ok(Self::new(ArcSet::from_arcs(n, arcs)?))
    }

    /// Returns a copy of this graph with the given churn schedule and a
    /// fresh epoch cache.
    pub fn with_perturbation(&self, perturbation: Option<Perturbation>) -> Result<Self> {
        if let Some(p) = &perturbation {
            p.validate()?;
        }
        Ok(TemporalGraph {
            n: self.n,
            base: self.base.clone(),
            perturbation,
            epochs: Arc::new(RwLock::new(vec![self.base.clone()])),
        })
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn base_arcs(&self) -> &Arc<ArcSet> {
        &self.base
    }

    pub fn perturbation(&self) -> Option<&Perturbation> {
        self.perturbation.as_ref()
    }

    pub fn is_static(&self) -> bool {
        match &self.perturbation {
            None => true,
            Some(p) => p.churn_count(self.base.len()) == 0,
        }
    }

    pub fn epoch_index(&self, t: f64) -> usize {
        match &self.perturbation {
            None => 0,
            Some(p) => time_floor(t.max(0.0), p.interval) as usize,
        }
    }

    pub fn epoch_start(&self, k: usize) -> f64 {
        match &self.perturbation {
            None => 0.0,
            Some(p) => k as f64 * p.interval,
        }
    }

    /// Arc set of the k-th epoch, materializing intermediate epochs on first use.
    pub fn epoch(&self, k: usize) -> Arc<ArcSet> {
        if self.perturbation.is_none() {
            return self.base.clone();
        }
        {
            let cache = self.epochs.read().expect("epoch cache poisoned");
            if let Some(a) = cache.get(k) {
                return a.clone();
            }
        }
        let p = self.perturbation.expect("checked above");
        let mut cache = self.epochs.write().expect("epoch cache poisoned");
        while cache.len() <= k {
            let next = p.apply(cache.last().expect("cache holds base"), cache.len() as u64);
            cache.push(Arc::new(next));
        }
        cache[k].clone()
    }

    /// Arc set A(t).
    pub fn arcs_at(&self, t: f64) -> Arc<ArcSet> {
        self.epoch(self.epoch_index(t))
    }

    /// Materialized `(epoch_start, arcs)` list for every epoch intersecting `[0, horizon]`.
    pub fn epochs_until(&self, horizon: f64) -> Vec<(f64, Arc<ArcSet>)> {
        let last = self.epoch_index(horizon.max(0.0));
        (0..=last).map(|k| (self.epoch_start(k), self.epoch(k))).collect()
    }

    /// For each node, the attackers present in any epoch over `[0, horizon]`.
    pub fn in_neighbor_union(&self, horizon: f64) -> Vec<Vec<u32>> {
        let mut sets: Vec<Vec<u32>> = vec![Vec::new(); self.n];
        for (_, arcs) in self.epochs_until(horizon) {
            for (v, set) in sets.iter_mut().enumerate() {
                set.extend_from_slice(arcs.in_neighbors(v));
            }
        }
        for set in &mut sets {
            set.sort_unstable();
            set.dedup();
        }
        sets
    }

    /// For each node, the attackers present in every epoch over `[0, horizon]`.
    pub fn in_neighbor_intersection(&self, horizon: f64) -> Vec<Vec<u32>> {
        let epochs = self.epochs_until(horizon);
        (0..self.n)
            .map(|v| {
                epochs[0]
                    .1
                    .in_neighbors(v)
                    .iter()
                    .copied()
                    .filter(|&u| epochs.iter().all(|(_, a)| a.contains(u as usize, v)))
                    .collect()
            })
            .collect()
    }
}

/// Summary of an edge-list ingestion.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct LoadReport {
    pub node_count: usize,
    pub arc_count: usize,
    pub self_loops_dropped: usize,
    pub duplicates_dropped: usize,
    /// Original identifier of each dense node id.
    #[serde(skip)]
    pub original_ids: Vec<u64>,
}

/// Parses a SNAP-style edge list: `from<ws>to` per line, `#` comments.
/// Node ids are remapped densely in ascending order of the original ids.
pub fn parse_edge_list(reader: impl BufRead) -> Result<(TemporalGraph, LoadReport)> {
    let mut raw: Vec<(u64, u64)> = Vec::new();
    let mut ids: Vec<u64> = Vec::new();
    let mut report = LoadReport::default();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<edge list>", e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut tokens = trimmed.split_whitespace();
        let parse = |tok: Option<&str>| -> Result<u64> {
            let tok = tok.ok_or_else(|| Error::MalformedLine {
                line: lineno + 1,
                reason: "expected two node ids".into(),
            })?;
            tok.parse::<u64>().map_err(|_| Error::MalformedLine {
                line: lineno + 1,
                reason: format!("`{tok}` is not a non-negative integer"),
            })
        };
        let from = parse(tokens.next())?;
        let to = parse(tokens.next())?;
        if tokens.next().is_some() {
            return Err(Error::MalformedLine {
                line: lineno + 1,
                reason: "trailing tokens".into(),
            });
        }
        ids.push(from);
        ids.push(to);
        if from == to {
            report.self_loops_dropped += 1;
        } else {
            raw.push((from, to));
        }
    }
    ids.sort_unstable();
    ids.dedup();
    let dense = |id: u64| ids.binary_search(&id).expect("id registered");
    let mut pairs: Vec<(u32, u32)> = raw.iter().map(|&(u, v)| (dense(v) as u32, dense(u) as u32)).collect();
    let before = pairs.len();
    pairs.sort_unstable();
    pairs.dedup();
    report.duplicates_dropped = before - pairs.len();
    if report.self_loops_dropped > 0 {
        log::warn!("dropped {} self-loop lines", report.self_loops_dropped);
    }
    let arcs = ArcSet::from_target_source_pairs(ids.len(), pairs);
    report.node_count = ids.len();
    report.arc_count = arcs.len();
    report.original_ids = ids;
    Ok((TemporalGraph::new(arcs), report))
}

pub fn load_edge_list(path: impl AsRef<Path>) -> Result<(TemporalGraph, LoadReport)> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_edge_list(BufReader::new(file))
}

#[derive(Serialize)]
struct GraphSidecar<'a> {
    n: usize,
    arc_count: usize,
    perturbation: Option<&'a Perturbation>,
}

/// Writes the base arcs as a tab-separated edge list and a JSON sidecar
/// (`<path>.json`) with `{n, arc_count, perturbation}`.
pub fn write_edge_list(graph: &TemporalGraph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    out.push_str(&format!(
        "# Directed graph: {} nodes, {} arcs\n# FromNodeId\tToNodeId\n",
        graph.node_count(),
        graph.base_arcs().len()
    ));
    let mut arcs: Vec<_> = graph.base_arcs().iter().collect();
    arcs.sort_unstable();
    for (u, v) in arcs {
        out.push_str(&format!("{u}\t{v}\n"));
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))?;

    let sidecar = GraphSidecar {
        n: graph.node_count(),
        arc_count: graph.base_arcs().len(),
        perturbation: graph.perturbation(),
    };
    let mut side_path = path.as_os_str().to_owned();
    side_path.push(".json");
    let side_path = std::path::PathBuf::from(side_path);
    fs::write(&side_path, serde_json::to_string_pretty(&sidecar)?).map_err(|e| Error::io(&side_path, e))?;
    Ok(())
}

/// Directed Erdős–Rényi sample: every ordered pair `(u, v)`, `u != v`, is an
/// arc independently with probability `p`.
pub fn erdos_renyi(n: usize, p: f64, seed: u64) -> Result<TemporalGraph> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!(
            "edge probability must lie in [0,1], got {p}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::new();
    for u in 0..n {
        for v in 0..n {
            if u != v && rng.gen_bool(p) {
                pairs.push((v as u32, u as u32));
            }
        }
    }
    Ok(TemporalGraph::new(ArcSet::from_target_source_pairs(n, pairs)))
}

/// Strongly connected components in topological order of the condensation:
/// arcs between components only go from earlier to later positions, which is
/// the lower-triangular block form of the zero-state Jacobian.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SccDecomposition {
    pub components: Vec<Vec<usize>>,
    /// Distinct `(from_component, to_component)` pairs.
    pub condensation_arcs: Vec<(usize, usize)>,
    /// For each component, the components with an arc into it.
    pub upstream: Vec<Vec<usize>>,
    /// Component index of each node.
    pub component_of: Vec<usize>,
}

impl SccDecomposition {
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn is_strongly_connected(&self) -> bool {
        self.components.len() == 1
    }
}

/// Iterative Tarjan decomposition.
pub fn scc_decompose(arcs: &ArcSet) -> SccDecomposition {
    let n = arcs.node_count();
    let out = arcs.out_adjacency();
    const UNVISITED: usize = usize::MAX;
    let mut index = vec![UNVISITED; n];
    let mut low = vec![0usize; n];
    let mut on_stack = vec![false; n];
    let mut stack: Vec<usize> = Vec::new();
    let mut emitted: Vec<Vec<usize>> = Vec::new();
    let mut counter = 0usize;
    // (node, next out-neighbor position)
    let mut call: Vec<(usize, usize)> = Vec::new();

    for root in 0..n {
        if index[root] != UNVISITED {
            continue;
        }
        call.push((root, 0));
        index[root] = counter;
        low[root] = counter;
        counter += 1;
        stack.push(root);
        on_stack[root] = true;

        while let Some(&mut (v, ref mut pos)) = call.last_mut() {
            if *pos < out[v].len() {
                let w = out[v][*pos];
                *pos += 1;
                if index[w] == UNVISITED {
                    index[w] = counter;
                    low[w] = counter;
                    counter += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
                continue;
            }
            call.pop();
            if let Some(&(parent, _)) = call.last() {
                low[parent] = low[parent].min(low[v]);
            }
            if low[v] == index[v] {
                let mut comp = Vec::new();
                loop {
                    let w = stack.pop().expect("tarjan stack underflow");
                    on_stack[w] = false;
                    comp.push(w);
                    if w == v {
                        break;
                    }
                }
                comp.sort_unstable();
                emitted.push(comp);
            }
        }
    }

    // Tarjan emits sinks first.
    emitted.reverse();
    let mut component_of = vec![0usize; n];
    for (k, comp) in emitted.iter().enumerate() {
        for &v in comp {
            component_of[v] = k;
        }
    }
    let mut condensation: Vec<(usize, usize)> = arcs
        .iter()
        .map(|(u, v)| (component_of[u], component_of[v]))
        .filter(|(a, b)| a != b)
        .collect();
    condensation.sort_unstable();
    condensation.dedup();
    let mut upstream = vec![Vec::new(); emitted.len()];
    for &(j, k) in &condensation {
        upstream[k].push(j);
    }
    SccDecomposition {
        components: emitted,
        condensation_arcs: condensation,
        upstream,
        component_of,
    }
}

/// Time-averaged effective attack weights `M(Γ∘A)`, keyed by `(source, target)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanStructure {
    pub n: usize,
    pub horizon: f64,
    pub weights: BTreeMap<(usize, usize), f64>,
}

impl MeanStructure {
    pub fn weight(&self, source: usize, target: usize) -> f64 {
        self.weights.get(&(source, target)).copied().unwrap_or(0.0)
    }

    /// Arcs of 𝒢(M(Γ)): entries with a weight above `threshold`.
    pub fn support(&self, threshold: f64) -> ArcSet {
        ArcSet::from_arcs(
            self.n,
            self.weights
                .iter()
                .filter(|(_, &w)| w > threshold)
                .map(|(&(u, v), _)| (u, v)),
        )
        .expect("mean structure indices are in range")
    }
}

/// Entrywise left-Riemann average of `γ_vu(t) a_vu(t)` over `[0, horizon]`.
pub fn mean_structure(graph: &TemporalGraph, gamma: &ParamProcess, horizon: f64, dt: f64) -> Result<MeanStructure> {
    if !(horizon > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    let steps = (horizon / dt).round().max(1.0) as usize;
    let h = horizon / steps as f64;
    let mut weights: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for k in 0..steps {
        let t = k as f64 * h;
        let arcs = graph.arcs_at(t);
        for (u, v) in arcs.iter() {
            let g = gamma.eval(t, Index::Arc { target: v, source: u })?;
            *weights.entry((u, v)).or_insert(0.0) += g * h;
        }
    }
    for w in weights.values_mut() {
        *w /= horizon;
    }
    Ok(MeanStructure {
        n: graph.node_count(),
        horizon,
        weights,
    })
}
