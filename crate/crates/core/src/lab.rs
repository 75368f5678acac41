//! Distinguishing-power experiments: class counting, the trace bound, the
//! CR upper bound, the star-family lower bound and the model-vs-CR
//! comparison.

use std::collections::HashMap;
use std::hash::Hash;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::{binomial, ceil_log2};
use crate::cr::{colors_at, ColorToken};
use crate::error::{LabError, Result};
use crate::gnn::{CachedEvaluator, GnnModel};
use crate::graph::{star_family, CompositionK, FeaturedGraph, StarLayout};
use crate::rational::RVec;
use crate::sweep::{sweep_model, sweep_models, Caps, DomainDescriptor, DomainGraphs, GraphDomain, SweepOptions};

#[derive(Clone, Debug)]
pub enum Evaluator<'a> {
    Model(&'a GnnModel),
    /// Color refinement after `t` rounds.
    Cr { t: usize },
}

impl Evaluator<'_> {
    fn describe(&self) -> String {
        match self {
            Evaluator::Model(m) => format!("model(depth={})", m.depth()),
            Evaluator::Cr { t } => format!("cr(t={t})"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Vertex,
    Graph,
}

/// A class representative: graph index in domain order and, at vertex
/// level, a 1-based vertex.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Representative {
    pub graph: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vertex: Option<usize>,
}

pub const MAX_REPRESENTATIVES: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassCountReport {
    pub domain: DomainDescriptor,
    pub evaluator: String,
    pub level: Level,
    /// Classes at the requested level.
    pub classes: u64,
    pub vertex_classes: u64,
    /// Absent for models without a readout.
    pub graph_classes: Option<u64>,
    /// False on sampled domains, where counts are lower bounds.
    pub exact: bool,
    /// The first classes' earliest members, at the requested level.
    pub witnesses: Vec<Representative>,
}

fn first_reps<K>(reps: &HashMap<K, (u64, usize)>, with_vertex: bool) -> Vec<Representative> {
    let mut all: Vec<_> = reps.values().copied().collect();
    all.sort_unstable();
    all.truncate(MAX_REPRESENTATIVES);
    all.into_iter()
        .map(|(graph, v)| Representative { graph, vertex: with_vertex.then_some(v + 1) })
        .collect()
}

fn min_rep<K: Eq + Hash>(into: &mut HashMap<K, (u64, usize)>, key: K, rep: (u64, usize)) {
    into.entry(key).and_modify(|r| *r = (*r).min(rep)).or_insert(rep);
}

type CrClasses = (HashMap<ColorToken, (u64, usize)>, HashMap<ColorToken, (u64, usize)>);

/// Distinct CR tokens after `t` rounds at vertex and graph level, each with
/// its earliest member.
pub fn cr_classes(graphs: &DomainGraphs, t: usize) -> CrClasses {
    let merge = |mut a: CrClasses, b: CrClasses| {
        for (k, r) in b.0 {
            min_rep(&mut a.0, k, r);
        }
        for (k, r) in b.1 {
            min_rep(&mut a.1, k, r);
        }
        a
    };
    (0..graphs.len() as usize)
        .into_par_iter()
        .fold(
            || (HashMap::new(), HashMap::new()),
            |(mut vs, mut gs): CrClasses, gi| {
                let gi = gi as u64;
                let colors = colors_at(&graphs.get(gi), t);
                min_rep(&mut gs, ColorToken::multiset(&colors), (gi, 0));
                for (v, c) in colors.into_iter().enumerate() {
                    min_rep(&mut vs, c, (gi, v));
                }
                (vs, gs)
            },
        )
        .reduce(|| (HashMap::new(), HashMap::new()), merge)
}

/// Number of equivalence classes an evaluator induces on a domain. Classes
/// are exact vector equality for models and token equality for CR.
pub fn count_classes(evaluator: &Evaluator<'_>, domain: &GraphDomain, level: Level, caps: &Caps) -> Result<ClassCountReport> {
    let graphs = domain.materialize(caps)?;
    let (vertex_classes, graph_classes, witnesses) = match evaluator {
        Evaluator::Model(model) => {
            if level == Level::Graph && model.readout().is_none() {
                return Err(LabError::invalid("graph-level classes need a model with a readout"));
            }
            let sweep = sweep_model(model, &graphs, SweepOptions::default())?;
            let witnesses = match level {
                Level::Vertex => first_reps(&sweep.vertex_outputs, true),
                Level::Graph => {
                    let reps: HashMap<_, _> = sweep.graph_outputs.iter().map(|(k, &g)| (k, (g, 0))).collect();
                    first_reps(&reps, false)
                }
            };
            let graph_classes = model.readout().map(|_| sweep.graph_outputs.len() as u64);
            (sweep.vertex_outputs.len() as u64, graph_classes, witnesses)
        }
        Evaluator::Cr { t } => {
            let (vs, gs) = cr_classes(&graphs, *t);
            let witnesses = match level {
                Level::Vertex => first_reps(&vs, true),
                Level::Graph => first_reps(&gs, false),
            };
            (vs.len() as u64, Some(gs.len() as u64), witnesses)
        }
    };
    let classes = match level {
        Level::Vertex => vertex_classes,
        Level::Graph => graph_classes.expect("checked above"),
    };
    Ok(ClassCountReport {
        domain: graphs.descriptor(),
        evaluator: evaluator.describe(),
        level,
        classes,
        vertex_classes,
        graph_classes,
        exact: domain.is_exhaustive(),
        witnesses,
    })
}

/// `count <= 2^bits`.
pub fn within_pow2(count: u64, bits: u64) -> bool {
    bits >= 64 || count <= 1u64 << bits
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpobserveReport {
    pub n: usize,
    pub graphs: u64,
    pub vertex_classes: u64,
    pub distinct_traces: u64,
    pub l_n: u64,
    /// `vertex_classes <= distinct_traces <= 2^l_n`.
    pub bound_holds: bool,
    /// Trace classes containing vertices with different outputs.
    pub trace_implies_output_violations: u64,
    pub graph_classes: Option<u64>,
    pub distinct_graph_traces: Option<u64>,
    pub lg_n: Option<u64>,
    pub graph_bound_holds: Option<bool>,
    pub graph_trace_violations: Option<u64>,
    pub empty_neighbourhood_vertices: u64,
    pub graphs_with_isolated_vertices: u64,
}

impl ExpobserveReport {
    pub fn passes(&self) -> bool {
        self.bound_holds
            && self.trace_implies_output_violations == 0
            && self.graph_bound_holds != Some(false)
            && self.graph_trace_violations.unwrap_or(0) == 0
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrBoundReport {
    pub n: usize,
    pub depth: usize,
    pub cr_vertex_classes: u64,
    pub model_vertex_classes: u64,
    /// CR classes at the model's depth containing vertices with different
    /// outputs.
    pub vertex_violations: u64,
    pub cr_graph_classes: u64,
    pub model_graph_classes: Option<u64>,
    pub graph_violations: u64,
}

impl CrBoundReport {
    pub fn passes(&self) -> bool {
        self.vertex_violations == 0
            && self.graph_violations == 0
            && self.model_vertex_classes <= self.cr_vertex_classes
            && self.model_graph_classes.is_none_or(|c| c <= self.cr_graph_classes)
    }
}

/// The trace bound and the CR upper bound for several models over every
/// labeled graph on `n` vertices, in one pass.
pub fn expobserve_suite(models: &[GnnModel], n: usize, caps: &Caps) -> Result<Vec<(ExpobserveReport, CrBoundReport)>> {
    let graphs = GraphDomain::Labeled { n }.materialize(caps)?;
    let sweeps = sweep_models(models, &graphs, SweepOptions::full())?;
    Ok(models
        .iter()
        .zip(sweeps)
        .map(|(model, s)| {
            let vertex_classes = s.vertex_outputs.len() as u64;
            let distinct_traces = s.traces.len() as u64;
            let l_n = s.l_n();
            let has_readout = model.readout().is_some();
            let graph_classes = has_readout.then_some(s.graph_outputs.len() as u64);
            let distinct_graph_traces = has_readout.then_some(s.graph_traces.len() as u64);
            let lg_n = s.lg_n();
            let graph_bound_holds = match (graph_classes, distinct_graph_traces, lg_n) {
                (Some(c), Some(d), Some(l)) => Some(c <= d && within_pow2(d, l)),
                _ => None,
            };
            let expo = ExpobserveReport {
                n,
                graphs: s.graphs,
                vertex_classes,
                distinct_traces,
                l_n,
                bound_holds: vertex_classes <= distinct_traces && within_pow2(distinct_traces, l_n),
                trace_implies_output_violations: s.traces.conflicts() as u64,
                graph_classes,
                distinct_graph_traces,
                lg_n,
                graph_bound_holds,
                graph_trace_violations: has_readout.then_some(s.graph_traces.conflicts() as u64),
                empty_neighbourhood_vertices: s.empty_vertices,
                graphs_with_isolated_vertices: s.graphs_with_empty,
            };
            let cr = CrBoundReport {
                n,
                depth: model.depth(),
                cr_vertex_classes: s.cr_vertex.len() as u64,
                model_vertex_classes: vertex_classes,
                vertex_violations: s.cr_vertex.conflicts() as u64,
                cr_graph_classes: s.cr_graph.len() as u64,
                model_graph_classes: graph_classes,
                graph_violations: s.cr_graph.conflicts() as u64,
            };
            (expo, cr)
        })
        .collect())
}

pub fn verify_expobserve(model: &GnnModel, n: usize, caps: &Caps) -> Result<ExpobserveReport> {
    Ok(expobserve_suite(std::slice::from_ref(model), n, caps)?.pop().expect("one model").0)
}

pub fn verify_cr_bound(model: &GnnModel, n: usize, caps: &Caps) -> Result<CrBoundReport> {
    Ok(expobserve_suite(std::slice::from_ref(model), n, caps)?.pop().expect("one model").1)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StarLemmaReport {
    pub n: usize,
    pub family_size: u64,
    /// `C(2n, n)`, the number of compositions of `n` into `n + 1` parts.
    pub compositions_count: u128,
    /// `C(2n - 1, n - 1)`.
    pub lemma_bound: u128,
    pub center_cr2_distinct: bool,
    pub graph_cr2_distinct: bool,
    pub degree_oracle_pass: bool,
    pub center_cr2_classes: u64,
    pub graph_cr2_classes: u64,
}

impl StarLemmaReport {
    pub fn passes(&self) -> bool {
        self.family_size as u128 == self.compositions_count
            && self.family_size as u128 >= self.lemma_bound
            && self.center_cr2_distinct
            && self.graph_cr2_distinct
            && self.degree_oracle_pass
    }
}

fn class_count(tokens: &[ColorToken]) -> u64 {
    tokens.iter().collect::<std::collections::HashSet<_>>().len() as u64
}

fn pairwise_distinct(tokens: &[ColorToken]) -> bool {
    tokens.iter().enumerate().all(|(i, a)| tokens[i + 1..].iter().all(|b| a != b))
}

/// Checks the degree structure of `G_K` directly from the edge set.
fn degree_oracle(k: &CompositionK, g: &FeaturedGraph) -> bool {
    let n = k.n();
    let layout = StarLayout { n };
    if g.n() != 2 * n + 1 || g.degree(StarLayout::CENTER) != n {
        return false;
    }
    let mut outer_degree_counts = vec![0usize; n + 1];
    for i in 1..=n {
        let u = layout.middle(i);
        if !g.has_edge(StarLayout::CENTER, u) {
            return false;
        }
        let d = g.neighbors(u).iter().filter(|&&w| w > n).count();
        outer_degree_counts[d] += 1;
    }
    let mut prefix = 0;
    for j in 1..=n {
        prefix += k.parts()[j - 1];
        if g.degree(layout.outer(j)) != n - prefix {
            return false;
        }
    }
    outer_degree_counts == k.parts()
}

/// Builds the star family for `n` and checks that CR after two rounds
/// separates every pair of centers and every pair of graphs.
pub fn verify_star_lemma(n: usize, caps: &Caps) -> Result<StarLemmaReport> {
    let family = star_family(n, caps.star_n)?;
    let center: Vec<ColorToken> = family.iter().map(|(_, g)| colors_at(g, 2).swap_remove(StarLayout::CENTER)).collect();
    let graph: Vec<ColorToken> = family.iter().map(|(_, g)| ColorToken::multiset(&colors_at(g, 2))).collect();
    Ok(StarLemmaReport {
        n,
        family_size: family.len() as u64,
        compositions_count: binomial(2 * n as u128, n as u128),
        lemma_bound: if n == 0 { 1 } else { binomial(2 * n as u128 - 1, n as u128 - 1) },
        center_cr2_distinct: pairwise_distinct(&center),
        graph_cr2_distinct: pairwise_distinct(&graph),
        degree_oracle_pass: family.iter().all(|(k, g)| degree_oracle(k, g)),
        center_cr2_classes: class_count(&center),
        graph_cr2_classes: class_count(&graph),
    })
}

/// Two star centers that CR after two rounds separates but the model does
/// not.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollisionWitness {
    pub first: CompositionK,
    pub second: CompositionK,
    pub first_token_hash: String,
    pub second_token_hash: String,
    pub output: RVec,
}

/// Earliest pair, by the later member's family position, of star centers
/// with equal model output and different CR tokens.
pub fn collision_witness(model: &GnnModel, parts: usize, caps: &Caps) -> Result<Option<CollisionWitness>> {
    let family = star_family(parts, caps.star_n)?;
    let mut ev = CachedEvaluator::new(model);
    let mut seen: HashMap<RVec, Vec<(usize, ColorToken)>> = HashMap::new();
    for (i, (_, g)) in family.iter().enumerate() {
        let id = ev.eval(g)?.finals[StarLayout::CENTER];
        let out = ev.value(id).clone();
        let token = colors_at(g, 2).swap_remove(StarLayout::CENTER);
        let group = seen.entry(out.clone()).or_default();
        if let Some((j, other)) = group.iter().find(|(_, t)| *t != token) {
            return Ok(Some(CollisionWitness {
                first: family[*j].0.clone(),
                second: family[i].0.clone(),
                first_token_hash: other.digest_hex(),
                second_token_hash: token.digest_hex(),
                output: out,
            }));
        }
        group.push((i, token));
    }
    Ok(None)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub n: usize,
    /// Over all labeled graphs on `n` vertices.
    pub vertex_classes: u64,
    pub vertex_classes_exact: bool,
    /// `C(2m - 1, m - 1)` for `n = 2m + 1`; star family domain.
    pub cr2_star_lower_bound: Option<u128>,
    pub l_n: u64,
    /// `2^l_n` in decimal.
    pub pow2_l_n: String,
    /// `vertex_classes / cr2_star_lower_bound`.
    pub ratio: Option<f64>,
    pub expobserve_bound_holds: bool,
    /// `l_n < ceil(log2 cr2_star_lower_bound)`.
    pub condition_triggered: Option<bool>,
    pub witness: Option<CollisionWitness>,
}

impl CompareRow {
    pub fn hard_failure(&self) -> bool {
        !self.expobserve_bound_holds || (self.condition_triggered == Some(true) && self.witness.is_none())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub rows: Vec<CompareRow>,
}

impl CompareReport {
    pub fn passes(&self) -> bool {
        self.rows.iter().all(|r| !r.hard_failure())
    }
}

fn pow2_decimal(bits: u64) -> String {
    (num_bigint::BigUint::from(1u8) << bits).to_string()
}

/// The model's vertex classes on all graphs of size `n` against the CR
/// lower bound on the star family of the same size, per `n`. Ratios over
/// `n` are a trend only.
pub fn compare_report(model: &GnnModel, n_list: &[usize], caps: &Caps) -> Result<CompareReport> {
    let mut rows = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let graphs = GraphDomain::Labeled { n }.materialize(caps)?;
        let sweep = sweep_model(model, &graphs, SweepOptions::default())?;
        let vertex_classes = sweep.vertex_outputs.len() as u64;
        let l_n = sweep.l_n();
        let m = (n % 2 == 1 && n >= 3).then_some((n - 1) / 2);
        let bound = m.map(|m| binomial(2 * m as u128 - 1, m as u128 - 1));
        let condition = bound.map(|b| (l_n as u128) < ceil_log2(b as u64) as u128);
        let witness = match m {
            Some(m) => collision_witness(model, m, caps)?,
            None => None,
        };
        rows.push(CompareRow {
            n,
            vertex_classes,
            vertex_classes_exact: true,
            cr2_star_lower_bound: bound,
            l_n,
            pow2_l_n: pow2_decimal(l_n),
            ratio: bound.map(|b| vertex_classes as f64 / b as f64),
            expobserve_bound_holds: within_pow2(vertex_classes, l_n),
            condition_triggered: condition,
            witness,
        });
    }
    Ok(CompareReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cr_counts() {
        let caps = Caps::default();
        let r = count_classes(&Evaluator::Cr { t: 2 }, &GraphDomain::StarFamily { parts: 2 }, Level::Graph, &caps).unwrap();
        assert_eq!(r.classes, 6);
        let r = count_classes(&Evaluator::Cr { t: 0 }, &GraphDomain::Labeled { n: 4 }, Level::Vertex, &caps).unwrap();
        assert_eq!(r.classes, 1);
        assert_eq!(r.witnesses, vec![Representative { graph: 0, vertex: Some(1) }]);
    }

    #[test]
    fn constant_model_has_one_class() {
        let caps = Caps::default();
        let m = GnnModel::constant(2);
        for domain in [GraphDomain::Labeled { n: 4 }, GraphDomain::StarFamily { parts: 3 }] {
            for level in [Level::Vertex, Level::Graph] {
                let r = count_classes(&Evaluator::Model(&m), &domain, level, &caps).unwrap();
                assert_eq!(r.classes, 1);
            }
        }
        let e = verify_expobserve(&m, 3, &caps).unwrap();
        assert_eq!((e.vertex_classes, e.distinct_traces), (1, 1));
        assert!(e.passes());
    }

    #[test]
    fn neighbour_sum_expobserve_n4() {
        let e = verify_expobserve(&GnnModel::neighbour_sum(), 4, &Caps::default()).unwrap();
        // final value = degree + 1 in {1, 2, 3, 4}
        assert_eq!(e.vertex_classes, 4);
        assert_eq!(e.graphs, 64);
        assert!(e.passes());
    }

    #[test]
    fn graph_level_needs_readout() {
        let layer = GnnModel::neighbour_sum().layers()[0].clone();
        let m = GnnModel::new(1, vec![layer], None).unwrap();
        let r = count_classes(&Evaluator::Model(&m), &GraphDomain::Labeled { n: 3 }, Level::Graph, &Caps::default());
        assert!(r.is_err());
        let e = verify_expobserve(&m, 3, &Caps::default()).unwrap();
        assert_eq!(e.graph_classes, None);
        assert!(e.passes());
    }

    #[test]
    fn star_lemma_small() {
        let caps = Caps::default();
        let r1 = verify_star_lemma(1, &caps).unwrap();
        assert_eq!((r1.family_size, r1.lemma_bound), (2, 1));
        assert!(r1.passes());
        let r2 = verify_star_lemma(2, &caps).unwrap();
        assert_eq!((r2.family_size, r2.lemma_bound), (6, 3));
        assert!(r2.passes());
        let r4 = verify_star_lemma(4, &caps).unwrap();
        assert_eq!((r4.family_size, r4.lemma_bound), (70, 35));
        assert!(r4.center_cr2_distinct && r4.degree_oracle_pass);
        assert!(verify_star_lemma(7, &caps).is_err());
    }

    #[test]
    fn isomorphic_stars_share_graph_colors() {
        // K and its transpose give isomorphic two-level stars, so graph-level
        // tokens collide from n = 3 on; counts cross-checked with networkx.
        let caps = Caps::default();
        let expected = [(3, 19), (4, 64), (5, 225), (6, 814)];
        for (n, classes) in expected {
            let r = verify_star_lemma(n, &caps).unwrap();
            assert_eq!(r.graph_cr2_classes, classes);
            assert!(!r.graph_cr2_distinct);
            assert_eq!(r.center_cr2_classes, r.family_size);
        }
        let a = crate::graph::star_graph(&CompositionK::new(vec![0, 2, 1, 0]).unwrap());
        let b = crate::graph::star_graph(&CompositionK::new(vec![1, 0, 2, 0]).unwrap());
        assert_eq!(crate::cr::graph_color(&a, 2), crate::cr::graph_color(&b, 2));
        assert_ne!(colors_at(&a, 2)[0], colors_at(&b, 2)[0]);
    }

    #[test]
    fn degree_oracle_rejects_wrong_graph() {
        let k = CompositionK::new(vec![1, 1, 0]).unwrap();
        let other = crate::graph::star_graph(&CompositionK::new(vec![0, 2, 0]).unwrap());
        assert!(!degree_oracle(&k, &other));
        assert!(degree_oracle(&k, &crate::graph::star_graph(&k)));
    }

    #[test]
    fn constant_model_collides_on_stars() {
        let caps = Caps::default();
        let report = compare_report(&GnnModel::constant(1), &[5], &caps).unwrap();
        let row = &report.rows[0];
        assert_eq!(row.cr2_star_lower_bound, Some(3));
        assert_eq!(row.l_n, 2);
        assert_eq!(row.condition_triggered, Some(false));
        let w = row.witness.as_ref().unwrap();
        assert_ne!(w.first_token_hash, w.second_token_hash);
        assert_eq!(w.output, RVec::zeros(1));
        assert!(report.passes());
    }

    #[test]
    fn compare_rows_respect_trace_bound() {
        let report = compare_report(&GnnModel::random(2), &[3, 4, 5], &Caps::default()).unwrap();
        for row in &report.rows {
            assert!(row.expobserve_bound_holds);
        }
        assert_eq!(report.rows[1].cr2_star_lower_bound, None);
    }

    #[test]
    fn within_pow2_edges() {
        assert!(within_pow2(4, 2));
        assert!(!within_pow2(5, 2));
        assert!(within_pow2(u64::MAX, 64));
    }
}
