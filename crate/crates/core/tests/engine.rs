use std::collections::HashSet;

use mpgnn_lab::cr::{colors_at, ColorToken};
use mpgnn_lab::gnn::{gnn_eval, CachedEvaluator, GnnModel};
use mpgnn_lab::graph::{enumerate_labeled_graphs, random_graph, FeaturedGraph};
use mpgnn_lab::lab::{count_classes, expobserve_suite, Evaluator, Level};
use mpgnn_lab::rational::{RVec, Rat};
use mpgnn_lab::sample;
use mpgnn_lab::{Caps, GraphDomain};
use proptest::prelude::*;

fn half() -> Rat {
    Rat::new(1, 2).unwrap()
}

#[test]
fn relabeling_permutes_outputs() {
    let mut rng = sample::rng(5);
    for i in 0..1000u64 {
        let model = GnnModel::random(i % 25);
        let g = random_graph(1 + (i % 7) as usize, &half(), i).unwrap();
        let (perm, h) = g.random_permutation(&mut rng);
        let a = gnn_eval(&model, &g).unwrap();
        let b = gnn_eval(&model, &h).unwrap();
        for v in 0..g.n() {
            assert_eq!(a.finals[v], b.finals[perm[v]]);
            assert_eq!(a.trace.agg_outputs[v], b.trace.agg_outputs[perm[v]]);
        }
        let mut fa = a.finals.clone();
        let mut fb = b.finals.clone();
        fa.sort();
        fb.sort();
        assert_eq!(fa, fb);
        assert_eq!(a.readout, b.readout);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn traces_are_deterministic(model_seed in 0u64..200, graph_seed in any::<u64>(), n in 1usize..8) {
        let model = GnnModel::random(model_seed);
        let g = random_graph(n, &half(), graph_seed).unwrap();
        let first = gnn_eval(&model, &g).unwrap();
        prop_assert_eq!(&gnn_eval(&model, &g).unwrap(), &first);
        let mut cached = CachedEvaluator::new(&model);
        let ids = cached.eval(&g).unwrap();
        prop_assert_eq!(&cached.resolve(&ids, &g), &first);
    }
}

#[test]
fn traces_determine_outputs_and_cr_bounds_model() {
    // independent of the sweep machinery: direct evaluation, pairwise maps
    let models: Vec<GnnModel> = (100..103).map(GnnModel::random).collect();
    for model in &models {
        for n in 1..=5 {
            let mut by_trace: std::collections::HashMap<Vec<RVec>, RVec> = Default::default();
            let mut by_token: std::collections::HashMap<ColorToken, RVec> = Default::default();
            for g in enumerate_labeled_graphs(n, 7).unwrap() {
                let e = gnn_eval(model, &g).unwrap();
                let tokens = colors_at(&g, model.depth());
                for v in 0..n {
                    let out = &e.finals[v];
                    assert_eq!(by_trace.entry(e.trace.agg_outputs[v].clone()).or_insert(out.clone()), out);
                    assert_eq!(by_token.entry(tokens[v].clone()).or_insert(out.clone()), out);
                }
            }
        }
    }
}

#[test]
fn suite_matches_direct_counts() {
    let caps = Caps::default();
    let models: Vec<GnnModel> = (0..3).map(GnnModel::random).collect();
    let results = expobserve_suite(&models, 5, &caps).unwrap();
    for (model, (e, c)) in models.iter().zip(&results) {
        let mut outputs = HashSet::new();
        let mut traces = HashSet::new();
        let mut tokens = HashSet::new();
        let mut ln = 0;
        for g in enumerate_labeled_graphs(5, 7).unwrap() {
            let ev = gnn_eval(model, &g).unwrap();
            let cr = colors_at(&g, model.depth());
            for v in 0..5 {
                outputs.insert(ev.finals[v].clone());
                traces.insert(ev.trace.agg_outputs[v].clone());
                tokens.insert(cr[v].clone());
                ln = ln.max(ev.trace.trace_bitlen(v).unwrap());
            }
        }
        assert_eq!(e.vertex_classes, outputs.len() as u64);
        assert_eq!(e.distinct_traces, traces.len() as u64);
        assert_eq!(e.l_n, ln);
        assert_eq!(c.cr_vertex_classes, tokens.len() as u64);
        assert!(e.passes() && c.passes());
    }
}

#[test]
fn class_counts_ignore_relabeling() {
    let caps = Caps::default();
    let mut rng = sample::rng(3);
    let relabeled: Vec<FeaturedGraph> = enumerate_labeled_graphs(4, 7)
        .unwrap()
        .map(|g| g.random_permutation(&mut rng).1)
        .collect();
    for seed in 0..5 {
        let model = GnnModel::random(seed);
        let report = count_classes(&Evaluator::Model(&model), &GraphDomain::Labeled { n: 4 }, Level::Vertex, &caps).unwrap();
        let graph_report = count_classes(&Evaluator::Model(&model), &GraphDomain::Labeled { n: 4 }, Level::Graph, &caps).unwrap();
        let mut vertex = HashSet::new();
        let mut graph = HashSet::new();
        for g in &relabeled {
            let e = gnn_eval(&model, g).unwrap();
            vertex.extend(e.finals);
            graph.insert(e.readout.unwrap());
        }
        assert_eq!(report.classes, vertex.len() as u64);
        assert_eq!(graph_report.classes, graph.len() as u64);
    }
    for t in 0..=3 {
        let report = count_classes(&Evaluator::Cr { t }, &GraphDomain::Labeled { n: 4 }, Level::Vertex, &caps).unwrap();
        let tokens: HashSet<ColorToken> = relabeled.iter().flat_map(|g| colors_at(g, t)).collect();
        assert_eq!(report.classes, tokens.len() as u64);
    }
}

#[test]
fn audit_mode_counts_layer_checks() {
    let model = GnnModel::random(4);
    let mut plain = CachedEvaluator::new(&model);
    let mut audited = CachedEvaluator::new(&model).with_audit();
    let g = FeaturedGraph::cycle(5);
    let a = plain.eval(&g).unwrap();
    let b = audited.eval(&g).unwrap();
    assert_eq!(plain.resolve(&a, &g), audited.resolve(&b, &g));
    let (checks, violations) = audited.audit_counts();
    assert!(checks > 0);
    assert!(violations <= checks);
    assert_eq!(plain.audit_counts(), (0, 0));
}
