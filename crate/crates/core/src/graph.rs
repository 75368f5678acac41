//! Featured undirected graphs, generators and metrics.

use std::collections::{BTreeSet, VecDeque};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use num_bigint::BigInt;

use crate::error::{LabError, Result};
use crate::rational::{RVec, Rat};
use crate::sample;

/// Default largest `n` for exhaustive labeled enumeration.
pub const DEFAULT_GRAPH_CAP: usize = 7;
/// Default largest `n` for the two-level star family.
pub const DEFAULT_STAR_CAP: usize = 6;
/// Largest graph for which the longest simple path is computed.
pub const LONGEST_PATH_CAP: usize = 10;

/// A simple undirected graph on vertices `0..n` with one feature vector per
/// vertex. All features share a dimension.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct FeaturedGraph {
    n: usize,
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
    features: Vec<RVec>,
}

impl FeaturedGraph {
    /// Graph with trivial features (every vertex gets `(1)`).
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        Self::with_features(n, edges, vec![RVec::ones(1); n])
    }

    pub fn with_features(
        n: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        features: Vec<RVec>,
    ) -> Result<Self> {
        if features.len() != n {
            return Err(LabError::DimensionMismatch {
                context: "feature map",
                expected: n,
                got: features.len(),
            });
        }
        if let Some(first) = features.first() {
            if let Some(bad) = features.iter().find(|f| f.dim() != first.dim()) {
                return Err(LabError::DimensionMismatch {
                    context: "feature dimension",
                    expected: first.dim(),
                    got: bad.dim(),
                });
            }
        }
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a >= n || b >= n {
                return Err(LabError::UnknownVertex { vertex: a.max(b), n });
            }
            if a == b {
                return Err(LabError::invalid(format!("self-loop at vertex {a}")));
            }
            if !set.insert((a.min(b), a.max(b))) {
                return Err(LabError::invalid(format!("duplicate edge {a}-{b}")));
            }
        }
        let edges: Vec<_> = set.into_iter().collect();
        let mut adjacency = vec![Vec::new(); n];
        for &(a, b) in &edges {
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        adjacency.iter_mut().for_each(|nbrs| nbrs.sort_unstable());
        Ok(FeaturedGraph { n, edges, adjacency, features })
    }

    /// Graph whose edge set is the binary counter `mask` over the pairs
    /// `(0,1), (0,2), ..., (n-2,n-1)` in lexicographic order.
    pub fn from_mask(n: usize, mask: u64) -> Self {
        let edges = vertex_pairs(n)
            .enumerate()
            .filter(|(bit, _)| mask >> bit & 1 == 1)
            .map(|(_, pair)| pair);
        FeaturedGraph::new(n, edges).expect("mask edges are valid")
    }

    pub fn complete(n: usize) -> Self {
        FeaturedGraph::new(n, vertex_pairs(n)).expect("valid")
    }

    pub fn path(n: usize) -> Self {
        FeaturedGraph::new(n, (1..n).map(|i| (i - 1, i))).expect("valid")
    }

    pub fn cycle(n: usize) -> Self {
        assert!(n >= 3, "cycle needs 3 vertices");
        FeaturedGraph::new(n, (0..n).map(|i| (i, (i + 1) % n))).expect("valid")
    }

    /// Center `0` joined to `leaves` leaves.
    pub fn star(leaves: usize) -> Self {
        FeaturedGraph::new(leaves + 1, (1..=leaves).map(|i| (0, i))).expect("valid")
    }

    /// Vertex-disjoint union, `other` relabeled after `self`.
    pub fn disjoint_union(&self, other: &FeaturedGraph) -> Result<Self> {
        let shift = self.n;
        let edges = self
            .edges
            .iter()
            .copied()
            .chain(other.edges.iter().map(|&(a, b)| (a + shift, b + shift)));
        let features = self.features.iter().chain(&other.features).cloned().collect();
        FeaturedGraph::with_features(self.n + other.n, edges, features)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adjacency[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adjacency[v].len()
    }

    pub fn features(&self) -> &[RVec] {
        &self.features
    }

    pub fn feature(&self, v: usize) -> &RVec {
        &self.features[v]
    }

    pub fn feature_dim(&self) -> usize {
        self.features.first().map_or(1, RVec::dim)
    }

    pub fn has_trivial_features(&self) -> bool {
        self.features.iter().all(|f| *f == RVec::ones(1))
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        a < self.n && self.adjacency[a].binary_search(&b).is_ok()
    }

    /// Relabels vertex `v` as `perm[v]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.n];
        if perm.len() != self.n || perm.iter().any(|&p| p >= self.n || std::mem::replace(&mut seen[p], true)) {
            return Err(LabError::invalid("not a permutation of the vertex set"));
        }
        let mut features = vec![RVec::default(); self.n];
        for (v, f) in self.features.iter().enumerate() {
            features[perm[v]] = f.clone();
        }
        let edges = self.edges.iter().map(|&(a, b)| (perm[a], perm[b]));
        FeaturedGraph::with_features(self.n, edges, features)
    }

    pub fn random_permutation(&self, rng: &mut impl Rng) -> (Vec<usize>, Self) {
        let mut perm: Vec<usize> = (0..self.n).collect();
        perm.shuffle(rng);
        let g = self.permuted(&perm).expect("shuffle is a permutation");
        (perm, g)
    }

    pub fn diameter(&self) -> Diameter {
        let mut longest = 0;
        for s in 0..self.n {
            let dist = self.bfs(s);
            for d in dist {
                match d {
                    Some(d) => longest = longest.max(d),
                    None => return Diameter::Infinite,
                }
            }
        }
        Diameter::Finite(longest)
    }

    fn bfs(&self, source: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.n];
        dist[source] = Some(0);
        let mut queue = VecDeque::from([source]);
        while let Some(v) = queue.pop_front() {
            let d = dist[v].unwrap();
            for &w in &self.adjacency[v] {
                if dist[w].is_none() {
                    dist[w] = Some(d + 1);
                    queue.push_back(w);
                }
            }
        }
        dist
    }

    /// Edge count of the longest simple path in the graph, or `None` above
    /// [`LONGEST_PATH_CAP`] vertices.
    pub fn longest_simple_path(&self) -> Option<usize> {
        if self.n > LONGEST_PATH_CAP {
            return None;
        }
        fn extend(g: &FeaturedGraph, v: usize, visited: &mut Vec<bool>, len: usize, best: &mut usize) {
            *best = (*best).max(len);
            for &w in g.neighbors(v) {
                if !visited[w] {
                    visited[w] = true;
                    extend(g, w, visited, len + 1, best);
                    visited[w] = false;
                }
            }
        }
        let mut best = 0;
        let mut visited = vec![false; self.n];
        for s in 0..self.n {
            visited[s] = true;
            extend(self, s, &mut visited, 0, &mut best);
            visited[s] = false;
        }
        Some(best)
    }

    pub fn diameter_report(&self) -> DiameterReport {
        DiameterReport {
            shortest_path: self.diameter(),
            longest_simple_path: self.longest_simple_path(),
        }
    }
}

/// All pairs `(i, j)` with `i < j < n` in lexicographic order.
pub fn vertex_pairs(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |i| (i + 1..n).map(move |j| (i, j)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Diameter {
    Finite(usize),
    Infinite,
}

/// Both readings of "diameter": the largest shortest-path distance, and the
/// longest simple path (small graphs only).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiameterReport {
    pub shortest_path: Diameter,
    pub longest_simple_path: Option<usize>,
}

/// `2^(n(n-1)/2)`, saturating.
pub fn labeled_graph_count(n: usize) -> u128 {
    let pairs = n * n.saturating_sub(1) / 2;
    if pairs >= 128 {
        u128::MAX
    } else {
        1u128 << pairs
    }
}

/// Every labeled simple graph on `n` vertices exactly once, with trivial
/// features, in edge-mask counter order.
pub fn enumerate_labeled_graphs(n: usize, cap: usize) -> Result<impl Iterator<Item = FeaturedGraph>> {
    if n > cap {
        return Err(LabError::CapExceeded {
            what: format!("labeled graph enumeration at n={n} ({} graphs)", labeled_graph_count(n)),
            requested: n as u128,
            cap: cap as u128,
        });
    }
    let count = labeled_graph_count(n) as u64;
    Ok((0..count).map(move |mask| FeaturedGraph::from_mask(n, mask)))
}

/// `(k_0, ..., k_n)` with `sum k_i = n`: how many middle vertices of the star
/// have each possible number of outer neighbours.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CompositionK(Vec<usize>);

impl CompositionK {
    pub fn new(parts: Vec<usize>) -> Result<Self> {
        let n = parts.len().checked_sub(1).ok_or_else(|| LabError::invalid("empty composition"))?;
        if parts.iter().sum::<usize>() != n {
            return Err(LabError::invalid(format!("parts {parts:?} do not sum to {n}")));
        }
        Ok(CompositionK(parts))
    }

    pub fn n(&self) -> usize {
        self.0.len() - 1
    }

    pub fn parts(&self) -> &[usize] {
        &self.0
    }

    /// `{i repeated k_i times}`, ascending.
    pub fn degree_multiset(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .flat_map(|(i, &k)| std::iter::repeat_n(i, k))
            .collect()
    }
}

/// All compositions of `n` into `n + 1` ordered parts, lexicographically.
pub fn compositions(n: usize) -> Vec<CompositionK> {
    fn fill(prefix: &mut Vec<usize>, slots: usize, remaining: usize, out: &mut Vec<CompositionK>) {
        if slots == 1 {
            prefix.push(remaining);
            out.push(CompositionK(prefix.clone()));
            prefix.pop();
            return;
        }
        for k in 0..=remaining {
            prefix.push(k);
            fill(prefix, slots - 1, remaining - k, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    fill(&mut Vec::with_capacity(n + 1), n + 1, n, &mut out);
    out
}

/// Vertex ids in a two-level star on `2n + 1` vertices.
#[derive(Clone, Copy, Debug)]
pub struct StarLayout {
    pub n: usize,
}

impl StarLayout {
    pub const CENTER: usize = 0;

    /// `u_i`, `i` in `1..=n`.
    pub fn middle(&self, i: usize) -> usize {
        i
    }

    /// `w_j`, `j` in `1..=n`.
    pub fn outer(&self, j: usize) -> usize {
        self.n + j
    }
}

/// The two-level star `G_K`: center joined to every `u_i`, and `u_i` joined
/// to `w_j` iff `i > k_0 + ... + k_{j-1}`. Then exactly `k_d` of the middle
/// vertices have `d` outer neighbours.
pub fn star_graph(k: &CompositionK) -> FeaturedGraph {
    let n = k.n();
    let layout = StarLayout { n };
    let mut edges: Vec<(usize, usize)> = (1..=n).map(|i| (StarLayout::CENTER, layout.middle(i))).collect();
    let mut threshold = 0;
    for j in 1..=n {
        threshold += k.parts()[j - 1];
        edges.extend((threshold + 1..=n).map(|i| (layout.middle(i), layout.outer(j))));
    }
    FeaturedGraph::new(2 * n + 1, edges).expect("star edges are valid")
}

pub fn star_family(n: usize, cap: usize) -> Result<Vec<(CompositionK, FeaturedGraph)>> {
    if n > cap {
        return Err(LabError::CapExceeded {
            what: format!("star family at n={n}"),
            requested: n as u128,
            cap: cap as u128,
        });
    }
    Ok(compositions(n)
        .into_iter()
        .map(|k| {
            let g = star_graph(&k);
            (k, g)
        })
        .collect())
}

/// Each edge independently present with probability `p`, decided exactly
/// against a uniform 64-bit draw.
pub fn random_graph(n: usize, p: &Rat, seed: u64) -> Result<FeaturedGraph> {
    if p.is_negative() || p > &Rat::one() {
        return Err(LabError::invalid(format!("edge probability {p} outside [0, 1]")));
    }
    let mut rng = sample::rng(seed);
    let scale = BigInt::from(1u128 << 64);
    let threshold = p.numer() * &scale;
    let edges: Vec<_> = vertex_pairs(n)
        .filter(|_| BigInt::from(rng.gen::<u64>()) * p.denom() < threshold)
        .collect();
    FeaturedGraph::new(n, edges)
}

#[derive(Serialize, Deserialize)]
struct GraphFile {
    n: usize,
    edges: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    features: Option<Vec<RVec>>,
}

impl Serialize for FeaturedGraph {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        GraphFile {
            n: self.n,
            edges: self.edges.iter().map(|&(a, b)| [a + 1, b + 1]).collect(),
            features: (!self.has_trivial_features()).then(|| self.features.clone()),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for FeaturedGraph {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let file = GraphFile::deserialize(d)?;
        graph_from_one_based(file.n, file.edges.iter().map(|e| (e[0], e[1])), file.features)
            .map_err(serde::de::Error::custom)
    }
}

fn graph_from_one_based(
    n: usize,
    edges: impl IntoIterator<Item = (usize, usize)>,
    features: Option<Vec<RVec>>,
) -> Result<FeaturedGraph> {
    let mut zero_based = Vec::new();
    for (a, b) in edges {
        if a == 0 || b == 0 {
            return Err(LabError::Parse("vertex ids are 1-based".to_string()));
        }
        zero_based.push((a - 1, b - 1));
    }
    let features = features.unwrap_or_else(|| vec![RVec::ones(1); n]);
    FeaturedGraph::with_features(n, zero_based, features)
}

/// Parses either the JSON graph document or the plain `n\ni j\n...` edge list.
pub fn parse_graph(text: &str) -> Result<FeaturedGraph> {
    if text.trim_start().starts_with('{') {
        return serde_json::from_str(text).map_err(|e| LabError::Parse(e.to_string()));
    }
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    let n: usize = lines
        .next()
        .ok_or_else(|| LabError::Parse("empty edge list".to_string()))?
        .parse()
        .map_err(|_| LabError::Parse("first line must be the vertex count".to_string()))?;
    let mut edges = Vec::new();
    for line in lines {
        let ids: Vec<usize> = line
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| LabError::Parse(format!("bad edge line {line:?}"))))
            .collect::<Result<_>>()?;
        match ids[..] {
            [a, b] => edges.push((a, b)),
            _ => return Err(LabError::Parse(format!("bad edge line {line:?}"))),
        }
    }
    graph_from_one_based(n, edges, None)
}

pub fn graph_to_json(g: &FeaturedGraph) -> String {
    serde_json::to_string(g).expect("graph serializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn labeled_enumeration_counts() {
        for (n, count) in [(2, 2), (3, 8), (4, 64)] {
            assert_eq!(enumerate_labeled_graphs(n, DEFAULT_GRAPH_CAP).unwrap().count(), count);
        }
        for n in 0..=5 {
            let all: HashSet<Vec<(usize, usize)>> = enumerate_labeled_graphs(n, DEFAULT_GRAPH_CAP)
                .unwrap()
                .map(|g| g.edges().to_vec())
                .collect();
            assert_eq!(all.len() as u128, labeled_graph_count(n));
        }
    }

    #[test]
    fn enumeration_cap_refusal() {
        let err = enumerate_labeled_graphs(8, 7).err().unwrap();
        assert!(matches!(err, LabError::CapExceeded { requested: 8, cap: 7, .. }));
        assert!(err.to_string().contains("268435456"));
    }

    #[test]
    fn composition_counts() {
        assert_eq!(
            compositions(1),
            vec![CompositionK(vec![0, 1]), CompositionK(vec![1, 0])]
        );
        // brute force over all (n+1)-tuples in [0..n]
        for n in 1..=5usize {
            let mut brute = 0;
            let total = (n + 1).pow((n + 1) as u32);
            for code in 0..total {
                let mut c = code;
                let mut sum = 0;
                for _ in 0..=n {
                    sum += c % (n + 1);
                    c /= n + 1;
                }
                if sum == n {
                    brute += 1;
                }
            }
            assert_eq!(compositions(n).len(), brute);
        }
        assert_eq!(compositions(2).len(), 6);
        assert_eq!(compositions(3).len(), 20);
        let c4 = compositions(4);
        assert!(c4.windows(2).all(|w| w[0] < w[1]));
    }

    fn edge_set(g: &FeaturedGraph) -> Vec<(usize, usize)> {
        g.edges().to_vec()
    }

    #[test]
    fn star_examples() {
        // v=0, u_1=1, u_2=2, w_1=3, w_2=4
        let g = star_graph(&CompositionK::new(vec![0, 2, 0]).unwrap());
        assert_eq!(edge_set(&g), vec![(0, 1), (0, 2), (1, 3), (2, 3)]);
        assert_eq!(g.degree(4), 0);

        let g = star_graph(&CompositionK::new(vec![1, 0, 1]).unwrap());
        assert_eq!(edge_set(&g), vec![(0, 1), (0, 2), (2, 3), (2, 4)]);

        let g = star_graph(&CompositionK::new(vec![0, 1]).unwrap());
        assert_eq!(edge_set(&g), vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn star_degree_oracle() {
        for n in 1..=6 {
            for (k, g) in star_family(n, DEFAULT_STAR_CAP).unwrap() {
                let layout = StarLayout { n };
                // degrees of the u's towards the w side, counted edge by edge
                let mut outer_degrees: Vec<usize> = (1..=n)
                    .map(|i| {
                        (1..=n).filter(|&j| g.has_edge(layout.middle(i), layout.outer(j))).count()
                    })
                    .collect();
                outer_degrees.sort_unstable();
                assert_eq!(outer_degrees, k.degree_multiset(), "K = {:?}", k.parts());
                assert_eq!(g.n(), 2 * n + 1);
            }
        }
    }

    #[test]
    fn star_family_sizes() {
        assert_eq!(star_family(2, 6).unwrap().len(), 6);
        let fam = star_family(1, 6).unwrap();
        assert_eq!(fam.len(), 2);
        assert!(fam.iter().all(|(_, g)| g.n() == 3));
        assert!(star_family(7, 6).is_err());
    }

    #[test]
    fn diameters() {
        assert_eq!(FeaturedGraph::complete(3).diameter(), Diameter::Finite(1));
        assert_eq!(FeaturedGraph::path(3).diameter(), Diameter::Finite(2));
        let with_isolated = FeaturedGraph::new(3, [(0, 1)]).unwrap();
        assert_eq!(with_isolated.diameter(), Diameter::Infinite);
        assert_eq!(FeaturedGraph::complete(4).longest_simple_path(), Some(3));
        assert_eq!(FeaturedGraph::cycle(5).longest_simple_path(), Some(4));
        assert_eq!(FeaturedGraph::path(11).longest_simple_path(), None);
    }

    #[test]
    fn random_graph_extremes() {
        let zero = random_graph(6, &Rat::zero(), 1).unwrap();
        assert!(zero.edges().is_empty());
        let one = random_graph(6, &Rat::one(), 1).unwrap();
        assert_eq!(one.edges().len(), 15);
        let half = Rat::new(1, 2).unwrap();
        assert_eq!(random_graph(7, &half, 42).unwrap(), random_graph(7, &half, 42).unwrap());
        assert!(random_graph(3, &Rat::from_int(2), 0).is_err());
    }

    #[test]
    fn invalid_graphs() {
        assert!(FeaturedGraph::new(3, [(0, 0)]).is_err());
        assert!(FeaturedGraph::new(3, [(0, 1), (1, 0)]).is_err());
        assert!(FeaturedGraph::new(3, [(0, 3)]).is_err());
        assert!(FeaturedGraph::with_features(2, [], vec![RVec::ones(1), RVec::ones(2)]).is_err());
    }

    #[test]
    fn file_formats() {
        let g = parse_graph(r#"{"n": 3, "edges": [[1,2],[2,3]]}"#).unwrap();
        assert_eq!(g, FeaturedGraph::path(3));
        assert_eq!(graph_to_json(&g), r#"{"n":3,"edges":[[1,2],[2,3]]}"#);

        let g2 = parse_graph("3\n1 2\n2 3\n").unwrap();
        assert_eq!(g2, g);

        let featured = parse_graph(r#"{"n":2,"edges":[[1,2]],"features":[["1/2"],["-3"]]}"#).unwrap();
        assert_eq!(featured.feature(1), &RVec::from_ints(&[-3]));
        assert_eq!(parse_graph(&graph_to_json(&featured)).unwrap(), featured);

        assert!(parse_graph(r#"{"n": 2, "edges": [[0,1]]}"#).is_err());
        assert!(parse_graph("2\n1 2 3\n").is_err());
    }

    #[test]
    fn permutation_preserves_structure() {
        let mut rng = sample::rng(4);
        let g = FeaturedGraph::path(5);
        let (perm, h) = g.random_permutation(&mut rng);
        for &(a, b) in g.edges() {
            assert!(h.has_edge(perm[a], perm[b]));
        }
        assert_eq!(h.edges().len(), g.edges().len());
        assert!(g.permuted(&[0, 0, 1, 2, 3]).is_err());
    }
}
