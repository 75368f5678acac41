//! Message-passing GNN evaluation with aggregation tracing.
//!
//! Layer `t` updates every vertex as
//! `v <- combine_t(v, agg_t{{ msg_t(v, w) : w in N(v) }})`; an optional
//! readout aggregates all final vertex values and applies one more MLP. The
//! sequence of a vertex's aggregation outputs is its trace, and the trace's
//! total bit-length is what `L_N` maximises.

use std::collections::HashMap;
use std::hash::Hash;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::aggregation::Aggregator;
use crate::error::{LabError, Result};
use crate::graph::FeaturedGraph;
use crate::mlp::{MlpLayer, MlpSpec};
use crate::rational::{RVec, Rat};
use crate::sample;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GnnLayer {
    pub msg: MlpSpec,
    pub agg: Aggregator,
    pub combine: MlpSpec,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Readout {
    pub agg: Aggregator,
    pub mlp: MlpSpec,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    #[serde(default = "one")]
    input_dim: usize,
    layers: Vec<GnnLayer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    readout: Option<Readout>,
}

fn one() -> usize {
    1
}

/// An MP-GNN: at least one layer, dimensions chained, optional readout.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ModelFile", into = "ModelFile")]
pub struct GnnModel {
    input_dim: usize,
    layers: Vec<GnnLayer>,
    readout: Option<Readout>,
}

impl TryFrom<ModelFile> for GnnModel {
    type Error = LabError;
    fn try_from(file: ModelFile) -> Result<Self> {
        GnnModel::new(file.input_dim, file.layers, file.readout)
    }
}

impl From<GnnModel> for ModelFile {
    fn from(m: GnnModel) -> Self {
        ModelFile { input_dim: m.input_dim, layers: m.layers, readout: m.readout }
    }
}

impl GnnModel {
    pub fn new(input_dim: usize, layers: Vec<GnnLayer>, readout: Option<Readout>) -> Result<Self> {
        if layers.is_empty() {
            return Err(LabError::invalid("a model needs at least one layer"));
        }
        let mut r = input_dim;
        for layer in &layers {
            let check = |context, expected: usize, got: usize| {
                if expected == got {
                    Ok(())
                } else {
                    Err(LabError::DimensionMismatch { context, expected, got })
                }
            };
            check("message MLP input", 2 * r, layer.msg.in_dim())?;
            // built-in aggregations preserve dimension
            let q = layer.msg.out_dim();
            check("combine MLP input", r + q, layer.combine.in_dim())?;
            r = layer.combine.out_dim();
        }
        if let Some(ro) = &readout {
            if ro.mlp.in_dim() != r {
                return Err(LabError::DimensionMismatch {
                    context: "readout MLP input",
                    expected: r,
                    got: ro.mlp.in_dim(),
                });
            }
        }
        Ok(GnnModel { input_dim, layers, readout })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn layers(&self) -> &[GnnLayer] {
        &self.layers
    }

    pub fn readout(&self) -> Option<&Readout> {
        self.readout.as_ref()
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().combine.out_dim()
    }

    /// Every MLP outputs zero, so every vertex (and graph) gets the same value.
    pub fn constant(depth: usize) -> Self {
        let layers = (0..depth.max(1))
            .map(|_| GnnLayer {
                msg: MlpSpec::zero(2, 1),
                agg: Aggregator::Sum,
                combine: MlpSpec::zero(2, 1),
            })
            .collect();
        let readout = Some(Readout { agg: Aggregator::Sum, mlp: MlpSpec::zero(1, 1) });
        GnnModel::new(1, layers, readout).expect("constant model is well-formed")
    }

    /// One layer: message `(x, y) -> y`, sum aggregation, combine
    /// `(x, a) -> x + a`; readout sums the final values.
    pub fn neighbour_sum() -> Self {
        let combine = MlpSpec::new(vec![MlpLayer::new(
            vec![vec![Rat::one(), Rat::one()]],
            RVec::zeros(1),
        )
        .expect("valid")])
        .expect("valid");
        let layer = GnnLayer {
            msg: MlpSpec::projection(2, 1, 1).expect("valid"),
            agg: Aggregator::Sum,
            combine,
        };
        let readout = Some(Readout { agg: Aggregator::Sum, mlp: MlpSpec::identity(1) });
        GnnModel::new(1, vec![layer], readout).expect("valid")
    }

    /// Depth 1..=3, all dimensions at most 4, MLPs of one or two layers,
    /// weights and biases with numerator and denominator of at most 8 bits,
    /// and a readout.
    pub fn random(seed: u64) -> Self {
        let mut rng = sample::rng(seed);
        let depth = rng.gen_range(1..=3);
        let mut r = 1;
        let mut layers = Vec::with_capacity(depth);
        for _ in 0..depth {
            let p = rng.gen_range(1..=4);
            let r_next = rng.gen_range(1..=4);
            let msg = random_mlp(&mut rng, 2 * r, p);
            let agg = Aggregator::ALL[rng.gen_range(0..3)];
            let combine = random_mlp(&mut rng, r + p, r_next);
            layers.push(GnnLayer { msg, agg, combine });
            r = r_next;
        }
        let out = rng.gen_range(1..=2);
        let readout = Some(Readout {
            agg: Aggregator::ALL[rng.gen_range(0..3)],
            mlp: random_mlp(&mut rng, r, out),
        });
        GnnModel::new(1, layers, readout).expect("random model is well-formed")
    }
}

fn random_mlp(rng: &mut impl Rng, in_dim: usize, out_dim: usize) -> MlpSpec {
    let mut dims = vec![in_dim];
    if rng.gen_bool(0.5) {
        dims.push(rng.gen_range(1..=4));
    }
    dims.push(out_dim);
    let layers = dims
        .windows(2)
        .map(|w| {
            let weights = (0..w[1])
                .map(|_| (0..w[0]).map(|_| sample::rat_with_component_bits(rng, 8)).collect())
                .collect();
            let bias = (0..w[1]).map(|_| sample::rat_with_component_bits(rng, 8)).collect();
            MlpLayer::new(weights, RVec::new(bias)).expect("valid")
        })
        .collect();
    MlpSpec::new(layers).expect("valid")
}

/// Aggregation outputs recorded during one evaluation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalTrace {
    /// `[vertex][layer]`
    pub agg_outputs: Vec<Vec<RVec>>,
    /// Vertices with no neighbours, whose aggregations saw the empty multiset.
    pub empty_neighbourhood: Vec<bool>,
    pub readout_agg: Option<RVec>,
}

impl EvalTrace {
    /// `sum_t <a_t(v)>`.
    pub fn trace_bitlen(&self, v: usize) -> Result<u64> {
        self.agg_outputs
            .get(v)
            .map(|layers| layers.iter().map(RVec::bitlen).sum())
            .ok_or(LabError::UnknownVertex { vertex: v, n: self.agg_outputs.len() })
    }

    /// Largest vertex trace plus the readout aggregation, when present.
    pub fn graph_trace_bitlen(&self) -> Option<u64> {
        let agg = self.readout_agg.as_ref()?;
        let vertex_max = (0..self.agg_outputs.len())
            .map(|v| self.trace_bitlen(v).unwrap())
            .max()
            .unwrap_or(0);
        Some(vertex_max + agg.bitlen())
    }

    pub fn any_empty_neighbourhood(&self) -> bool {
        self.empty_neighbourhood.iter().any(|&e| e)
    }

    /// `graph_id,vertex,layer,agg_output,bitlen` rows; the readout row has
    /// an empty vertex and layer `readout`.
    pub fn csv_rows(&self, graph_id: &str) -> String {
        let mut out = String::new();
        for (v, layers) in self.agg_outputs.iter().enumerate() {
            for (t, a) in layers.iter().enumerate() {
                out.push_str(&format!("{graph_id},{},{},\"{a}\",{}\n", v + 1, t + 1, a.bitlen()));
            }
        }
        if let Some(a) = &self.readout_agg {
            out.push_str(&format!("{graph_id},,readout,\"{a}\",{}\n", a.bitlen()));
        }
        out
    }
}

pub const TRACE_CSV_HEADER: &str = "graph_id,vertex,layer,agg_output,bitlen";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GnnEval {
    pub finals: Vec<RVec>,
    pub trace: EvalTrace,
    pub readout: Option<RVec>,
}

/// Direct layer-by-layer evaluation.
pub fn gnn_eval(model: &GnnModel, g: &FeaturedGraph) -> Result<GnnEval> {
    if g.n() > 0 && g.feature_dim() != model.input_dim {
        return Err(LabError::DimensionMismatch {
            context: "graph features",
            expected: model.input_dim,
            got: g.feature_dim(),
        });
    }
    let mut values: Vec<RVec> = g.features().to_vec();
    let mut agg_outputs = vec![Vec::with_capacity(model.depth()); g.n()];
    for layer in &model.layers {
        let p = layer.msg.out_dim();
        let mut next = Vec::with_capacity(g.n());
        for v in 0..g.n() {
            let messages = g
                .neighbors(v)
                .iter()
                .map(|&w| layer.msg.forward(&values[v].concat(&values[w])))
                .collect::<Result<Vec<_>>>()?;
            let a = layer.agg.aggregate(p, &messages)?;
            next.push(layer.combine.forward(&values[v].concat(&a))?);
            agg_outputs[v].push(a);
        }
        values = next;
    }
    let (readout_agg, readout) = match &model.readout {
        Some(ro) => {
            let a = ro.agg.aggregate(model.output_dim(), &values)?;
            let out = ro.mlp.forward(&a)?;
            (Some(a), Some(out))
        }
        None => (None, None),
    };
    let empty_neighbourhood = (0..g.n()).map(|v| g.degree(v) == 0).collect();
    Ok(GnnEval {
        finals: values,
        trace: EvalTrace { agg_outputs, empty_neighbourhood, readout_agg },
        readout,
    })
}

pub fn trace_bitlen(trace: &EvalTrace, v: usize) -> Result<u64> {
    trace.trace_bitlen(v)
}

/// Assigns dense ids to distinct values.
#[derive(Debug)]
pub struct Interner<T> {
    ids: HashMap<T, u32>,
    values: Vec<T>,
}

impl<T: Clone + Eq + Hash> Default for Interner<T> {
    fn default() -> Self {
        Interner { ids: HashMap::new(), values: Vec::new() }
    }
}

impl<T: Clone + Eq + Hash> Interner<T> {
    pub fn intern(&mut self, value: T) -> u32 {
        if let Some(&id) = self.ids.get(&value) {
            return id;
        }
        let id = self.values.len() as u32;
        self.values.push(value.clone());
        self.ids.insert(value, id);
        id
    }

    pub fn get(&self, id: u32) -> &T {
        &self.values[id as usize]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Evaluation result in the id space of a [`CachedEvaluator`].
#[derive(Clone, Debug, Default)]
pub struct IdEval {
    pub finals: Vec<u32>,
    /// `[vertex][layer]` aggregation output ids.
    pub traces: Vec<Vec<u32>>,
    pub trace_bits: Vec<u64>,
    pub readout_agg: Option<u32>,
    pub readout: Option<u32>,
}

/// Memoising evaluator for repeated evaluation of one model over many
/// graphs. Every MLP and aggregation call is cached by the exact values of
/// its inputs, so results are identical to [`gnn_eval`].
pub struct CachedEvaluator<'m> {
    model: &'m GnnModel,
    values: Interner<RVec>,
    bits: Vec<u64>,
    msg: Vec<HashMap<(u32, u32), u32>>,
    agg: Vec<HashMap<Vec<u32>, u32>>,
    combine: Vec<HashMap<(u32, u32), u32>>,
    readout_agg: HashMap<Vec<u32>, u32>,
    readout_mlp: HashMap<u32, u32>,
    audit: bool,
    audit_checks: u64,
    audit_violations: u64,
    scratch: Vec<u32>,
}

impl<'m> CachedEvaluator<'m> {
    pub fn new(model: &'m GnnModel) -> Self {
        let d = model.depth();
        CachedEvaluator {
            model,
            values: Interner::default(),
            bits: Vec::new(),
            msg: vec![HashMap::new(); d],
            agg: vec![HashMap::new(); d],
            combine: vec![HashMap::new(); d],
            readout_agg: HashMap::new(),
            readout_mlp: HashMap::new(),
            audit: false,
            audit_checks: 0,
            audit_violations: 0,
            scratch: Vec::new(),
        }
    }

    /// Check the per-layer MLP inequality on every distinct MLP evaluation.
    pub fn with_audit(mut self) -> Self {
        self.audit = true;
        self
    }

    /// `(checks, violations)` of the per-layer inequality so far.
    pub fn audit_counts(&self) -> (u64, u64) {
        (self.audit_checks, self.audit_violations)
    }

    pub fn model(&self) -> &'m GnnModel {
        self.model
    }

    pub fn value(&self, id: u32) -> &RVec {
        self.values.get(id)
    }

    pub fn bitlen(&self, id: u32) -> u64 {
        self.bits[id as usize]
    }

    fn intern(&mut self, v: RVec) -> u32 {
        let before = self.values.len();
        let id = self.values.intern(v);
        if self.values.len() > before {
            self.bits.push(self.values.get(id).bitlen());
        }
        id
    }

    fn run_mlp(&mut self, mlp: &MlpSpec, input: &RVec) -> Result<RVec> {
        if self.audit {
            let (out, checks) = mlp.forward_audited(input)?;
            self.audit_checks += checks.len() as u64;
            self.audit_violations += checks.iter().filter(|c| !c.holds).count() as u64;
            Ok(out)
        } else {
            mlp.forward(input)
        }
    }

    fn pair_mlp(&mut self, which: Which, t: usize, a: u32, b: u32) -> Result<u32> {
        let cache = match which {
            Which::Msg => &self.msg[t],
            Which::Combine => &self.combine[t],
        };
        if let Some(&id) = cache.get(&(a, b)) {
            return Ok(id);
        }
        let model = self.model;
        let mlp = match which {
            Which::Msg => &model.layers[t].msg,
            Which::Combine => &model.layers[t].combine,
        };
        let input = self.value(a).concat(self.value(b));
        let out = self.run_mlp(mlp, &input)?;
        let id = self.intern(out);
        match which {
            Which::Msg => self.msg[t].insert((a, b), id),
            Which::Combine => self.combine[t].insert((a, b), id),
        };
        Ok(id)
    }

    fn aggregate(&mut self, t: Option<usize>, ids: &mut Vec<u32>) -> Result<u32> {
        ids.sort_unstable();
        let cache = match t {
            Some(t) => &self.agg[t],
            None => &self.readout_agg,
        };
        if let Some(&id) = cache.get(ids.as_slice()) {
            return Ok(id);
        }
        let (agg, dim) = match t {
            Some(t) => (self.model.layers[t].agg, self.model.layers[t].msg.out_dim()),
            None => (self.model.readout.as_ref().expect("readout").agg, self.model.output_dim()),
        };
        let items: Vec<RVec> = ids.iter().map(|&i| self.value(i).clone()).collect();
        let out = agg.aggregate(dim, &items)?;
        let id = self.intern(out);
        match t {
            Some(t) => self.agg[t].insert(ids.clone(), id),
            None => self.readout_agg.insert(ids.clone(), id),
        };
        Ok(id)
    }

    pub fn eval(&mut self, g: &FeaturedGraph) -> Result<IdEval> {
        if g.n() > 0 && g.feature_dim() != self.model.input_dim {
            return Err(LabError::DimensionMismatch {
                context: "graph features",
                expected: self.model.input_dim,
                got: g.feature_dim(),
            });
        }
        let n = g.n();
        let mut current: Vec<u32> = g.features().iter().map(|f| self.intern(f.clone())).collect();
        let mut traces = vec![Vec::with_capacity(self.model.depth()); n];
        let mut trace_bits = vec![0u64; n];
        let mut scratch = std::mem::take(&mut self.scratch);
        for t in 0..self.model.depth() {
            let mut next = Vec::with_capacity(n);
            for v in 0..n {
                scratch.clear();
                for &w in g.neighbors(v) {
                    let m = self.pair_mlp(Which::Msg, t, current[v], current[w])?;
                    scratch.push(m);
                }
                let a = self.aggregate(Some(t), &mut scratch)?;
                traces[v].push(a);
                trace_bits[v] += self.bitlen(a);
                next.push(self.pair_mlp(Which::Combine, t, current[v], a)?);
            }
            current = next;
        }
        let (readout_agg, readout) = if self.model.readout.is_some() {
            scratch.clear();
            scratch.extend_from_slice(&current);
            let a = self.aggregate(None, &mut scratch)?;
            let out = match self.readout_mlp.get(&a) {
                Some(&id) => id,
                None => {
                    let model = self.model;
                    let input = self.value(a).clone();
                    let value = self.run_mlp(&model.readout.as_ref().unwrap().mlp, &input)?;
                    let id = self.intern(value);
                    self.readout_mlp.insert(a, id);
                    id
                }
            };
            (Some(a), Some(out))
        } else {
            (None, None)
        };
        self.scratch = scratch;
        Ok(IdEval { finals: current, traces, trace_bits, readout_agg, readout })
    }

    /// Resolves an [`IdEval`] to values.
    pub fn resolve(&self, e: &IdEval, g: &FeaturedGraph) -> GnnEval {
        GnnEval {
            finals: e.finals.iter().map(|&i| self.value(i).clone()).collect(),
            trace: EvalTrace {
                agg_outputs: e
                    .traces
                    .iter()
                    .map(|layers| layers.iter().map(|&i| self.value(i).clone()).collect())
                    .collect(),
                empty_neighbourhood: (0..g.n()).map(|v| g.degree(v) == 0).collect(),
                readout_agg: e.readout_agg.map(|i| self.value(i).clone()),
            },
            readout: e.readout.map(|i| self.value(i).clone()),
        }
    }
}

#[derive(Clone, Copy)]
enum Which {
    Msg,
    Combine,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::random_graph;

    #[test]
    fn neighbour_sum_examples() {
        let model = GnnModel::neighbour_sum();
        let tri = gnn_eval(&model, &FeaturedGraph::complete(3)).unwrap();
        assert!(tri.finals.iter().all(|v| *v == RVec::from_ints(&[3])));
        assert_eq!(tri.readout, Some(RVec::from_ints(&[9])));
        for v in 0..3 {
            assert_eq!(tri.trace.trace_bitlen(v).unwrap(), 3);
        }

        let star = gnn_eval(&model, &FeaturedGraph::star(3)).unwrap();
        assert_eq!(star.finals[0], RVec::from_ints(&[4]));
        assert!(star.finals[1..].iter().all(|v| *v == RVec::from_ints(&[2])));
        assert_eq!(star.trace.trace_bitlen(0).unwrap(), 3);
        assert!(star.trace.trace_bitlen(4).is_err());
    }

    #[test]
    fn two_layer_trace_is_additive() {
        let base = GnnModel::neighbour_sum();
        let layer = base.layers()[0].clone();
        let model = GnnModel::new(1, vec![layer.clone(), layer], None).unwrap();
        let g = FeaturedGraph::path(3);
        let e = gnn_eval(&model, &g).unwrap();
        for v in 0..3 {
            let expected: u64 = e.trace.agg_outputs[v].iter().map(RVec::bitlen).sum();
            assert_eq!(e.trace.trace_bitlen(v).unwrap(), expected);
            assert_eq!(e.trace.agg_outputs[v].len(), 2);
        }
        assert_eq!(e.trace.graph_trace_bitlen(), None);
    }

    #[test]
    fn isolated_vertices_flagged() {
        let e = gnn_eval(&GnnModel::neighbour_sum(), &FeaturedGraph::new(2, []).unwrap()).unwrap();
        assert!(e.trace.any_empty_neighbourhood());
        assert_eq!(e.trace.agg_outputs[0][0], RVec::zeros(1));
        assert_eq!(e.finals[0], RVec::ones(1));
    }

    #[test]
    fn dimension_checks() {
        let layer = GnnModel::neighbour_sum().layers()[0].clone();
        assert!(GnnModel::new(2, vec![layer.clone()], None).is_err());
        assert!(GnnModel::new(1, vec![], None).is_err());
        let bad_readout = Readout { agg: Aggregator::Sum, mlp: MlpSpec::identity(2) };
        assert!(GnnModel::new(1, vec![layer], Some(bad_readout)).is_err());
        let g = FeaturedGraph::with_features(1, [], vec![RVec::ones(2)]).unwrap();
        assert!(gnn_eval(&GnnModel::neighbour_sum(), &g).is_err());
    }

    #[test]
    fn cached_matches_direct() {
        let half = Rat::new(1, 2).unwrap();
        for seed in 0..6 {
            let model = GnnModel::random(seed);
            let mut cached = CachedEvaluator::new(&model);
            for gseed in 0..8 {
                let g = random_graph(5, &half, gseed).unwrap();
                let direct = gnn_eval(&model, &g).unwrap();
                let ids = cached.eval(&g).unwrap();
                assert_eq!(cached.resolve(&ids, &g), direct);
                for v in 0..g.n() {
                    assert_eq!(ids.trace_bits[v], direct.trace.trace_bitlen(v).unwrap());
                }
            }
        }
    }

    #[test]
    fn random_models_respect_sampling_limits() {
        for seed in 0..40 {
            let m = GnnModel::random(seed);
            assert!((1..=3).contains(&m.depth()));
            assert!(m.readout().is_some());
            for layer in m.layers() {
                for mlp in [&layer.msg, &layer.combine] {
                    for l in mlp.layers() {
                        assert!(l.out_dim() <= 4);
                        for q in l.weights().iter().flatten().chain(l.bias().entries()) {
                            assert!(q.numer().bits() <= 8 && q.denom().bits() <= 8);
                        }
                    }
                }
            }
        }
        assert_eq!(GnnModel::random(7), GnnModel::random(7));
    }

    #[test]
    fn model_file_round_trip() {
        let m = GnnModel::random(3);
        let text = serde_json::to_string(&m).unwrap();
        let back: GnnModel = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
        let bad = text.replace("\"input_dim\":1", "\"input_dim\":2");
        assert!(serde_json::from_str::<GnnModel>(&bad).is_err());
    }

    #[test]
    fn trace_csv() {
        let e = gnn_eval(&GnnModel::neighbour_sum(), &FeaturedGraph::path(2)).unwrap();
        let csv = e.trace.csv_rows("g");
        assert_eq!(csv, "g,1,1,\"[1]\",2\ng,2,1,\"[1]\",2\ng,,readout,\"[4]\",4\n");
    }
}
