//! Sweeps of one or more models over a graph domain.
//!
//! Work is split across graphs with rayon; each worker evaluates in the id
//! space of its own [`CachedEvaluator`] and results are translated to exact
//! values before merging, so every count and maximum is independent of the
//! schedule.

use std::borrow::Cow;
use std::collections::{HashMap, HashSet};
use std::hash::Hash;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cr::{rounds_through, ColorToken};
use crate::error::{LabError, Result};
use crate::gnn::{CachedEvaluator, GnnModel};
use crate::graph::{
    labeled_graph_count, random_graph, star_family, FeaturedGraph, DEFAULT_GRAPH_CAP,
    DEFAULT_STAR_CAP,
};
use crate::rational::{RVec, Rat};

pub const DEFAULT_SAMPLE_CAP: u64 = 1_000_000;

/// Upper limits on enumeration sizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Caps {
    /// Largest `n` for exhaustive labeled-graph enumeration.
    pub graph_n: usize,
    /// Largest composition size for the star family.
    pub star_n: usize,
    pub sample_count: u64,
}

impl Default for Caps {
    fn default() -> Self {
        Caps { graph_n: DEFAULT_GRAPH_CAP, star_n: DEFAULT_STAR_CAP, sample_count: DEFAULT_SAMPLE_CAP }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "kebab-case")]
pub enum GraphDomain {
    /// Every labeled graph on `n` vertices.
    Labeled { n: usize },
    /// The two-level stars `G_K` for all compositions `K` of `parts`, on
    /// `2 parts + 1` vertices.
    StarFamily { parts: usize },
    /// `count` random graphs with edge probability 1/2.
    Sampled { n: usize, count: u64, seed: u64 },
}

impl GraphDomain {
    pub fn vertices(&self) -> usize {
        match *self {
            GraphDomain::Labeled { n } | GraphDomain::Sampled { n, .. } => n,
            GraphDomain::StarFamily { parts } => 2 * parts + 1,
        }
    }

    /// Whether results over this domain are exact rather than lower bounds.
    pub fn is_exhaustive(&self) -> bool {
        !matches!(self, GraphDomain::Sampled { .. })
    }

    pub fn materialize(&self, caps: &Caps) -> Result<DomainGraphs> {
        match *self {
            GraphDomain::Labeled { n } => {
                if n > caps.graph_n {
                    return Err(LabError::CapExceeded {
                        what: format!(
                            "labeled graph enumeration cap (n={n} means {} graphs)",
                            labeled_graph_count(n)
                        ),
                        requested: n as u128,
                        cap: caps.graph_n as u128,
                    });
                }
                Ok(DomainGraphs { domain: self.clone(), stars: Vec::new(), len: labeled_graph_count(n) as u64 })
            }
            GraphDomain::StarFamily { parts } => {
                let stars: Vec<_> = star_family(parts, caps.star_n)
                    .map_err(|e| match e {
                        LabError::CapExceeded { requested, cap, .. } => LabError::CapExceeded {
                            what: format!("star family cap (parts={parts})"),
                            requested,
                            cap,
                        },
                        other => other,
                    })?
                    .into_iter()
                    .map(|(_, g)| g)
                    .collect();
                let len = stars.len() as u64;
                Ok(DomainGraphs { domain: self.clone(), stars, len })
            }
            GraphDomain::Sampled { count, .. } => {
                if count > caps.sample_count {
                    return Err(LabError::CapExceeded {
                        what: "sample count cap".into(),
                        requested: count as u128,
                        cap: caps.sample_count as u128,
                    });
                }
                Ok(DomainGraphs { domain: self.clone(), stars: Vec::new(), len: count })
            }
        }
    }

    pub fn descriptor(&self, graphs: u64) -> DomainDescriptor {
        DomainDescriptor {
            domain: self.clone(),
            vertices: self.vertices(),
            graphs,
            exhaustive: self.is_exhaustive(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainDescriptor {
    #[serde(flatten)]
    pub domain: GraphDomain,
    pub vertices: usize,
    pub graphs: u64,
    pub exhaustive: bool,
}

/// Random access to the graphs of a domain, in a fixed order.
pub struct DomainGraphs {
    domain: GraphDomain,
    stars: Vec<FeaturedGraph>,
    len: u64,
}

fn sample_seed(seed: u64, i: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ i.wrapping_mul(0xbf58_476d_1ce4_e5b9).wrapping_add(i)
}

impl DomainGraphs {
    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn domain(&self) -> &GraphDomain {
        &self.domain
    }

    pub fn descriptor(&self) -> DomainDescriptor {
        self.domain.descriptor(self.len)
    }

    pub fn get(&self, i: u64) -> Cow<'_, FeaturedGraph> {
        match self.domain {
            GraphDomain::Labeled { n } => Cow::Owned(FeaturedGraph::from_mask(n, i)),
            GraphDomain::StarFamily { .. } => Cow::Borrowed(&self.stars[i as usize]),
            GraphDomain::Sampled { n, seed, .. } => {
                let half = Rat::new(1, 2).expect("valid");
                Cow::Owned(random_graph(n, &half, sample_seed(seed, i)).expect("p = 1/2 is valid"))
            }
        }
    }
}

/// First-seen value per key plus the set of keys seen with a second,
/// different value.
#[derive(Clone, Debug)]
pub struct ConflictMap<K, V> {
    first: HashMap<K, V>,
    conflicts: HashSet<K>,
}

impl<K, V> Default for ConflictMap<K, V> {
    fn default() -> Self {
        ConflictMap { first: HashMap::new(), conflicts: HashSet::new() }
    }
}

impl<K: Eq + Hash + Clone, V: Eq> ConflictMap<K, V> {
    pub fn insert(&mut self, key: K, value: V) {
        match self.first.get(&key) {
            Some(existing) => {
                if *existing != value && !self.conflicts.contains(&key) {
                    self.conflicts.insert(key);
                }
            }
            None => {
                self.first.insert(key, value);
            }
        }
    }

    pub fn merge(&mut self, other: ConflictMap<K, V>) {
        for (k, v) in other.first {
            self.insert(k, v);
        }
        self.conflicts.extend(other.conflicts);
    }

    /// Distinct keys.
    pub fn len(&self) -> usize {
        self.first.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first.is_empty()
    }

    /// Keys that map to more than one value.
    pub fn conflicts(&self) -> usize {
        self.conflicts.len()
    }

    pub fn get(&self, key: &K) -> Option<&V> {
        self.first.get(key)
    }

    fn translate<K2, V2>(self, fk: impl Fn(&K) -> K2, fv: impl Fn(&V) -> V2) -> ConflictMap<K2, V2>
    where
        K2: Eq + Hash + Clone,
        V2: Eq,
    {
        let mut out = ConflictMap::default();
        for (k, v) in &self.first {
            out.insert(fk(k), fv(v));
        }
        out.conflicts.extend(self.conflicts.iter().map(fk));
        out
    }
}

/// A maximiser; ties go to the smallest graph index, then vertex.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Best {
    pub bits: u64,
    pub graph: u64,
    pub vertex: usize,
}

impl Best {
    fn better(a: Option<Best>, b: Option<Best>) -> Option<Best> {
        match (a, b) {
            (None, x) | (x, None) => x,
            (Some(a), Some(b)) => {
                let ka = (a.bits, std::cmp::Reverse((a.graph, a.vertex)));
                let kb = (b.bits, std::cmp::Reverse((b.graph, b.vertex)));
                Some(if ka >= kb { a } else { b })
            }
        }
    }
}

/// What a sweep records beyond outputs and `L_N`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SweepOptions {
    /// Trace-to-output maps for the trace-determines-output check.
    pub traces: bool,
    /// CR tokens at the model's depth, mapped to outputs.
    pub cr: bool,
    /// Per-layer MLP inequality audit on every distinct MLP evaluation.
    pub audit: bool,
}

impl SweepOptions {
    pub fn full() -> Self {
        SweepOptions { traces: true, cr: true, audit: false }
    }
}

fn min_rep<K: Eq + Hash, R: Ord + Copy>(into: &mut HashMap<K, R>, key: K, rep: R) {
    into.entry(key).and_modify(|r| *r = (*r).min(rep)).or_insert(rep);
}

/// Results of sweeping one model over a domain, in value space.
#[derive(Clone, Debug, Default)]
pub struct ModelSweep {
    pub graphs: u64,
    pub vertices: u64,
    /// Final vertex value -> first `(graph, vertex)` producing it.
    pub vertex_outputs: HashMap<RVec, (u64, usize)>,
    /// Readout value -> first graph producing it.
    pub graph_outputs: HashMap<RVec, u64>,
    pub traces: ConflictMap<Vec<RVec>, RVec>,
    pub graph_traces: ConflictMap<RVec, RVec>,
    pub cr_vertex: ConflictMap<ColorToken, RVec>,
    pub cr_graph: ConflictMap<ColorToken, RVec>,
    pub ln: Option<Best>,
    pub lgn: Option<Best>,
    pub empty_vertices: u64,
    pub graphs_with_empty: u64,
    pub audit_checks: u64,
    pub audit_violations: u64,
}

impl ModelSweep {
    fn merge(mut self, other: ModelSweep) -> ModelSweep {
        self.graphs += other.graphs;
        self.vertices += other.vertices;
        for (k, r) in other.vertex_outputs {
            min_rep(&mut self.vertex_outputs, k, r);
        }
        for (k, r) in other.graph_outputs {
            min_rep(&mut self.graph_outputs, k, r);
        }
        self.traces.merge(other.traces);
        self.graph_traces.merge(other.graph_traces);
        self.cr_vertex.merge(other.cr_vertex);
        self.cr_graph.merge(other.cr_graph);
        self.ln = Best::better(self.ln, other.ln);
        self.lgn = Best::better(self.lgn, other.lgn);
        self.empty_vertices += other.empty_vertices;
        self.graphs_with_empty += other.graphs_with_empty;
        self.audit_checks += other.audit_checks;
        self.audit_violations += other.audit_violations;
        self
    }

    /// `L_N` over the swept domain; 0 when it has no vertices.
    pub fn l_n(&self) -> u64 {
        self.ln.map_or(0, |b| b.bits)
    }

    pub fn lg_n(&self) -> Option<u64> {
        self.lgn.map(|b| b.bits)
    }
}

struct Chunk<'m> {
    ev: CachedEvaluator<'m>,
    opts: SweepOptions,
    graphs: u64,
    vertices: u64,
    vertex_outputs: HashMap<u32, (u64, usize)>,
    graph_outputs: HashMap<u32, u64>,
    traces: ConflictMap<Vec<u32>, u32>,
    graph_traces: ConflictMap<u32, u32>,
    cr_vertex: ConflictMap<ColorToken, u32>,
    cr_graph: ConflictMap<ColorToken, u32>,
    ln: Option<Best>,
    lgn: Option<Best>,
    empty_vertices: u64,
    graphs_with_empty: u64,
}

impl<'m> Chunk<'m> {
    fn new(model: &'m GnnModel, opts: SweepOptions) -> Self {
        let ev = CachedEvaluator::new(model);
        Chunk {
            ev: if opts.audit { ev.with_audit() } else { ev },
            opts,
            graphs: 0,
            vertices: 0,
            vertex_outputs: HashMap::new(),
            graph_outputs: HashMap::new(),
            traces: ConflictMap::default(),
            graph_traces: ConflictMap::default(),
            cr_vertex: ConflictMap::default(),
            cr_graph: ConflictMap::default(),
            ln: None,
            lgn: None,
            empty_vertices: 0,
            graphs_with_empty: 0,
        }
    }

    fn observe(&mut self, gi: u64, g: &FeaturedGraph, cr: Option<(&[ColorToken], &ColorToken)>) {
        let e = self.ev.eval(g).expect("model validated against the domain");
        self.graphs += 1;
        self.vertices += g.n() as u64;
        let empty = (0..g.n()).filter(|&v| g.degree(v) == 0).count() as u64;
        self.empty_vertices += empty;
        self.graphs_with_empty += u64::from(empty > 0);
        let mut vertex_max = None;
        for (v, trace) in e.traces.into_iter().enumerate() {
            let out = e.finals[v];
            min_rep(&mut self.vertex_outputs, out, (gi, v));
            vertex_max = Best::better(vertex_max, Some(Best { bits: e.trace_bits[v], graph: gi, vertex: v }));
            if self.opts.traces {
                self.traces.insert(trace, out);
            }
            if let Some((tokens, _)) = cr {
                self.cr_vertex.insert(tokens[v].clone(), out);
            }
        }
        self.ln = Best::better(self.ln, vertex_max);
        if let (Some(agg), Some(out)) = (e.readout_agg, e.readout) {
            min_rep(&mut self.graph_outputs, out, gi);
            let bits = vertex_max.map_or(0, |b| b.bits) + self.ev.bitlen(agg);
            self.lgn = Best::better(self.lgn, Some(Best { bits, graph: gi, vertex: 0 }));
            if self.opts.traces {
                self.graph_traces.insert(agg, out);
            }
            if let Some((_, token)) = cr {
                self.cr_graph.insert(token.clone(), out);
            }
        }
    }

    fn finish(self) -> ModelSweep {
        let ev = &self.ev;
        let val = |id: &u32| ev.value(*id).clone();
        let (audit_checks, audit_violations) = ev.audit_counts();
        ModelSweep {
            graphs: self.graphs,
            vertices: self.vertices,
            vertex_outputs: self.vertex_outputs.iter().map(|(k, &r)| (val(k), r)).collect(),
            graph_outputs: self.graph_outputs.iter().map(|(k, &r)| (val(k), r)).collect(),
            traces: self.traces.translate(|k| k.iter().map(val).collect(), val),
            graph_traces: self.graph_traces.translate(val, val),
            cr_vertex: self.cr_vertex.translate(Clone::clone, val),
            cr_graph: self.cr_graph.translate(Clone::clone, val),
            ln: self.ln,
            lgn: self.lgn,
            empty_vertices: self.empty_vertices,
            graphs_with_empty: self.graphs_with_empty,
            audit_checks,
            audit_violations,
        }
    }
}

fn check_input_dims(models: &[GnnModel], graphs: &DomainGraphs) -> Result<()> {
    if graphs.domain().vertices() == 0 {
        return Ok(());
    }
    for m in models {
        if m.input_dim() != 1 {
            return Err(LabError::DimensionMismatch {
                context: "model input on a trivial-feature domain",
                expected: 1,
                got: m.input_dim(),
            });
        }
    }
    Ok(())
}

/// Sweeps every model over the same graphs, computing CR tokens once per
/// graph.
pub fn sweep_models(models: &[GnnModel], graphs: &DomainGraphs, opts: SweepOptions) -> Result<Vec<ModelSweep>> {
    check_input_dims(models, graphs)?;
    let max_depth = models.iter().map(GnnModel::depth).max().unwrap_or(0);
    let empty = || vec![ModelSweep::default(); models.len()];
    let len = usize::try_from(graphs.len()).map_err(|_| LabError::invalid("domain too large to index"))?;
    let result = (0..len)
        .into_par_iter()
        .with_min_len(256)
        .fold(
            || models.iter().map(|m| Chunk::new(m, opts)).collect::<Vec<_>>(),
            |mut chunks, gi| {
                let gi = gi as u64;
                let g = graphs.get(gi);
                let rounds = opts.cr.then(|| rounds_through(&g, max_depth));
                let mut graph_tokens: Vec<Option<ColorToken>> = vec![None; max_depth + 1];
                for chunk in chunks.iter_mut() {
                    let cr = match &rounds {
                        Some(rounds) => {
                            let d = chunk.ev.model().depth();
                            let token = graph_tokens[d].get_or_insert_with(|| ColorToken::multiset(&rounds[d]));
                            Some((rounds[d].as_slice(), &*token))
                        }
                        None => None,
                    };
                    chunk.observe(gi, &g, cr);
                }
                chunks
            },
        )
        .map(|chunks| chunks.into_iter().map(Chunk::finish).collect::<Vec<_>>())
        .reduce(empty, |a, b| a.into_iter().zip(b).map(|(x, y)| x.merge(y)).collect());
    Ok(result)
}

pub fn sweep_model(model: &GnnModel, graphs: &DomainGraphs, opts: SweepOptions) -> Result<ModelSweep> {
    Ok(sweep_models(std::slice::from_ref(model), graphs, opts)?.pop().expect("one model"))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LnReport {
    pub domain: DomainDescriptor,
    pub l_n: u64,
    /// False on sampled domains, where `l_n` is a lower bound.
    pub exact: bool,
    pub argmax_graph: Option<FeaturedGraph>,
    /// 1-based.
    pub argmax_vertex: Option<usize>,
    pub lg_n: Option<u64>,
    pub empty_neighbourhood_vertices: u64,
}

/// `L_N` (and `LG_N` with a readout): the largest trace bit-length over the
/// domain, with the first graph and vertex attaining it.
pub fn measure_ln(model: &GnnModel, domain: &GraphDomain, caps: &Caps) -> Result<LnReport> {
    let graphs = domain.materialize(caps)?;
    let sweep = sweep_model(model, &graphs, SweepOptions::default())?;
    Ok(LnReport {
        domain: graphs.descriptor(),
        l_n: sweep.l_n(),
        exact: domain.is_exhaustive(),
        argmax_graph: sweep.ln.map(|b| graphs.get(b.graph).into_owned()),
        argmax_vertex: sweep.ln.map(|b| b.vertex + 1),
        lg_n: sweep.lg_n(),
        empty_neighbourhood_vertices: sweep.empty_vertices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnn::gnn_eval;

    #[test]
    fn neighbour_sum_ln_on_triangle() {
        let r = measure_ln(&GnnModel::neighbour_sum(), &GraphDomain::Labeled { n: 3 }, &Caps::default()).unwrap();
        assert_eq!(r.l_n, 3);
        let tri = gnn_eval(&GnnModel::neighbour_sum(), &FeaturedGraph::complete(3)).unwrap();
        assert_eq!(tri.trace.trace_bitlen(0).unwrap(), r.l_n);
        // first maximiser in mask order: the path with vertex 1 in the middle
        assert_eq!(r.argmax_graph.unwrap().degree(r.argmax_vertex.unwrap() - 1), 2);
        assert!(r.exact);
        assert_eq!(r.domain.graphs, 8);
    }

    #[test]
    fn single_vertex_sees_empty_neighbourhood() {
        for seed in 0..5 {
            let m = GnnModel::random(seed);
            let r = measure_ln(&m, &GraphDomain::Labeled { n: 1 }, &Caps::default()).unwrap();
            let zeros: u64 = m.layers().iter().map(|l| 2 * l.msg.out_dim() as u64).sum();
            assert_eq!(r.l_n, zeros);
            assert_eq!(r.empty_neighbourhood_vertices, 1);
        }
    }

    #[test]
    fn sampled_is_lower_bound() {
        let m = GnnModel::random(11);
        let caps = Caps::default();
        let ex = measure_ln(&m, &GraphDomain::Labeled { n: 5 }, &caps).unwrap();
        let sa = measure_ln(&m, &GraphDomain::Sampled { n: 5, count: 50, seed: 3 }, &caps).unwrap();
        assert!(sa.l_n <= ex.l_n);
        assert!(!sa.exact);
        assert!(sa.lg_n.unwrap() <= ex.lg_n.unwrap());
    }

    #[test]
    fn caps_refuse() {
        let m = GnnModel::constant(1);
        let err = measure_ln(&m, &GraphDomain::Labeled { n: 30 }, &Caps::default()).unwrap_err();
        assert!(err.to_string().contains("labeled graph enumeration cap"), "{err}");
        assert!(measure_ln(&m, &GraphDomain::StarFamily { parts: 7 }, &Caps::default()).is_err());
        let too_many = GraphDomain::Sampled { n: 4, count: u64::MAX, seed: 0 };
        assert!(measure_ln(&m, &too_many, &Caps::default()).is_err());
    }

    #[test]
    fn sweep_matches_direct_evaluation() {
        let m = GnnModel::random(5);
        let graphs = GraphDomain::Labeled { n: 4 }.materialize(&Caps::default()).unwrap();
        let sweep = sweep_model(&m, &graphs, SweepOptions::full()).unwrap();
        let mut outputs = HashSet::new();
        let mut ln = 0;
        for i in 0..graphs.len() {
            let e = gnn_eval(&m, &graphs.get(i)).unwrap();
            outputs.extend(e.finals.iter().cloned());
            for v in 0..4 {
                ln = ln.max(e.trace.trace_bitlen(v).unwrap());
            }
        }
        assert_eq!(sweep.vertex_outputs.len(), outputs.len());
        assert_eq!(sweep.l_n(), ln);
        assert_eq!(sweep.graphs, 64);
        assert_eq!(sweep.traces.conflicts(), 0);
    }

    #[test]
    fn conflict_map_counts_keys_once() {
        let mut a: ConflictMap<u8, u8> = ConflictMap::default();
        a.insert(1, 1);
        a.insert(1, 2);
        a.insert(1, 3);
        let mut b = ConflictMap::default();
        b.insert(1, 1);
        b.insert(2, 5);
        a.merge(b);
        assert_eq!((a.len(), a.conflicts()), (2, 1));
    }

    #[test]
    fn domain_descriptor_json() {
        let d = GraphDomain::StarFamily { parts: 2 }.descriptor(6);
        let text = serde_json::to_string(&d).unwrap();
        assert_eq!(text, r#"{"generator":"star-family","parts":2,"vertices":5,"graphs":6,"exhaustive":true}"#);
    }
}
