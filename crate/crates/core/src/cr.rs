//! Color refinement with self-contained, cross-graph comparable colors.
//!
//! Round 0 colors a vertex with its feature literal; round `t + 1` colors it
//! with the pair of its round-`t` color and the sorted multiset of its
//! neighbours' round-`t` colors. Colors are canonical strings, so two
//! vertices in any two graphs share a color exactly when refinement cannot
//! tell them apart, with no shared dictionary.

use std::collections::HashMap;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use crate::error::{LabError, Result};
use crate::graph::FeaturedGraph;

/// A canonical color. Equality is decided on the full string; the cached
/// digest only short-circuits mismatches.
#[derive(Clone)]
pub struct ColorToken {
    repr: Arc<str>,
    digest: u64,
}

/// 64-bit FNV-1a; stable across platforms and runs.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

impl ColorToken {
    fn from_string(s: String) -> Self {
        let digest = fnv1a(s.as_bytes());
        ColorToken { repr: s.into(), digest }
    }

    fn initial(g: &FeaturedGraph, v: usize) -> Self {
        Self::from_string(g.feature(v).to_string())
    }

    fn refined(prev: &ColorToken, neighbours: &mut [&ColorToken]) -> Self {
        neighbours.sort_unstable_by(|a, b| a.as_str().cmp(b.as_str()));
        let len = prev.repr.len() + neighbours.iter().map(|t| t.repr.len() + 1).sum::<usize>() + 3;
        let mut s = String::with_capacity(len);
        s.push('(');
        s.push_str(&prev.repr);
        s.push('|');
        for (i, t) in neighbours.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            s.push_str(&t.repr);
        }
        s.push(')');
        Self::from_string(s)
    }

    /// The multiset of `tokens`, as one token.
    pub fn multiset(tokens: &[ColorToken]) -> Self {
        let mut sorted: Vec<&str> = tokens.iter().map(ColorToken::as_str).collect();
        sorted.sort_unstable();
        Self::from_string(format!("{{{}}}", sorted.join(",")))
    }

    pub fn as_str(&self) -> &str {
        &self.repr
    }

    pub fn digest(&self) -> u64 {
        self.digest
    }

    pub fn digest_hex(&self) -> String {
        format!("{:016x}", self.digest)
    }
}

impl PartialEq for ColorToken {
    fn eq(&self, other: &Self) -> bool {
        self.digest == other.digest && self.repr == other.repr
    }
}

impl Eq for ColorToken {}

impl Hash for ColorToken {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.digest.hash(state);
    }
}

impl PartialOrd for ColorToken {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ColorToken {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.repr.cmp(&other.repr)
    }
}

impl fmt::Display for ColorToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.repr)
    }
}

impl fmt::Debug for ColorToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ColorToken({})", self.repr)
    }
}

fn next_round(g: &FeaturedGraph, prev: &[ColorToken]) -> Vec<ColorToken> {
    let mut buf: Vec<&ColorToken> = Vec::new();
    (0..g.n())
        .map(|v| {
            buf.clear();
            buf.extend(g.neighbors(v).iter().map(|&w| &prev[w]));
            ColorToken::refined(&prev[v], &mut buf)
        })
        .collect()
}

/// Colors after exactly `t` rounds, regardless of stabilization.
pub fn colors_at(g: &FeaturedGraph, t: usize) -> Vec<ColorToken> {
    let mut colors: Vec<ColorToken> = (0..g.n()).map(|v| ColorToken::initial(g, v)).collect();
    for _ in 0..t {
        colors = next_round(g, &colors);
    }
    colors
}

/// Rounds `0..=t`, regardless of stabilization.
pub fn rounds_through(g: &FeaturedGraph, t: usize) -> Vec<Vec<ColorToken>> {
    let mut rounds = vec![(0..g.n()).map(|v| ColorToken::initial(g, v)).collect::<Vec<_>>()];
    for _ in 0..t {
        let next = next_round(g, rounds.last().unwrap());
        rounds.push(next);
    }
    rounds
}

/// Class ids numbered by first occurrence, so equal partitions give equal
/// vectors.
pub fn partition_of(colors: &[ColorToken]) -> Vec<usize> {
    let mut ids: HashMap<&ColorToken, usize> = HashMap::new();
    colors
        .iter()
        .map(|c| {
            let next = ids.len();
            *ids.entry(c).or_insert(next)
        })
        .collect()
}

/// Per-round colors of one graph.
#[derive(Clone, Debug)]
pub struct ColorHistory {
    rounds: Vec<Vec<ColorToken>>,
    stable_at: Option<usize>,
}

impl ColorHistory {
    /// Number of computed rounds after round 0.
    pub fn len(&self) -> usize {
        self.rounds.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.len() == 1
    }

    /// First `t` whose partition equals that of `t + 1`, if reached.
    pub fn stable_at(&self) -> Option<usize> {
        self.stable_at
    }

    pub fn round(&self, t: usize) -> Result<&[ColorToken]> {
        self.rounds
            .get(t)
            .map(Vec::as_slice)
            .ok_or(LabError::UnknownIteration { t, len: self.len() })
    }

    pub fn partition(&self, t: usize) -> Result<Vec<usize>> {
        self.round(t).map(partition_of)
    }

    pub fn class_count(&self, t: usize) -> Result<usize> {
        Ok(self.partition(t)?.into_iter().max().map_or(0, |m| m + 1))
    }

    pub fn rounds(&self) -> &[Vec<ColorToken>] {
        &self.rounds
    }

    pub fn vertex_color(&self, v: usize, t: usize) -> Result<&ColorToken> {
        let round = self.round(t)?;
        round.get(v).ok_or(LabError::UnknownVertex { vertex: v, n: round.len() })
    }

    pub fn graph_color(&self, t: usize) -> Result<ColorToken> {
        self.round(t).map(ColorToken::multiset)
    }

    /// `graph_id,vertex,t,token_hash,token` rows (no header).
    pub fn csv_rows(&self, graph_id: &str) -> String {
        let mut out = String::new();
        for (t, round) in self.rounds.iter().enumerate() {
            for (v, tok) in round.iter().enumerate() {
                out.push_str(&format!("{graph_id},{},{t},{},\"{}\"\n", v + 1, tok.digest_hex(), tok));
            }
        }
        out
    }
}

pub const CR_CSV_HEADER: &str = "graph_id,vertex,t,token_hash,token";

/// Refines through `min(t_max, t* + 1)` rounds, where `t*` is the first round
/// whose partition the next round does not split. `t_max` defaults to `|G|`.
pub fn cr_run(g: &FeaturedGraph, t_max: Option<usize>) -> ColorHistory {
    let t_max = t_max.unwrap_or(g.n());
    let mut rounds = vec![(0..g.n()).map(|v| ColorToken::initial(g, v)).collect::<Vec<_>>()];
    let mut stable_at = None;
    while rounds.len() - 1 < t_max {
        let next = next_round(g, rounds.last().unwrap());
        let same = partition_of(rounds.last().unwrap()) == partition_of(&next);
        rounds.push(next);
        if same {
            stable_at = Some(rounds.len() - 2);
            break;
        }
    }
    ColorHistory { rounds, stable_at }
}

/// The color of `v` after `t` rounds.
pub fn vertex_color(g: &FeaturedGraph, v: usize, t: usize) -> Result<ColorToken> {
    if v >= g.n() {
        return Err(LabError::UnknownVertex { vertex: v, n: g.n() });
    }
    Ok(colors_at(g, t).swap_remove(v))
}

/// The multiset of all vertex colors after `t` rounds.
pub fn graph_color(g: &FeaturedGraph, t: usize) -> ColorToken {
    ColorToken::multiset(&colors_at(g, t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{star_graph, CompositionK};

    #[test]
    fn path_splits_by_degree() {
        let h = cr_run(&FeaturedGraph::path(3), Some(1));
        assert_eq!(h.partition(1).unwrap(), vec![0, 1, 0]);
    }

    #[test]
    fn cycle_is_one_class() {
        let h = cr_run(&FeaturedGraph::cycle(5), None);
        for t in 0..=h.len() {
            assert_eq!(h.class_count(t).unwrap(), 1);
        }
        assert_eq!(h.stable_at(), Some(0));
    }

    #[test]
    fn star_stabilises_after_one_round() {
        let h = cr_run(&FeaturedGraph::star(3), None);
        assert_eq!(h.class_count(1).unwrap(), 2);
        assert_eq!(h.class_count(2).unwrap(), 2);
        assert_eq!(h.stable_at(), Some(1));
        assert_eq!(h.len(), 2);
    }

    #[test]
    fn cross_graph_tokens() {
        let two_triangles = FeaturedGraph::complete(3).disjoint_union(&FeaturedGraph::complete(3)).unwrap();
        let c = colors_at(&two_triangles, 3);
        assert!(c.iter().all(|t| t == &c[0]));

        let star = FeaturedGraph::star(3);
        assert_ne!(vertex_color(&star, 0, 1).unwrap(), vertex_color(&star, 1, 1).unwrap());
        assert!(vertex_color(&star, 9, 1).is_err());

        let a = star_graph(&CompositionK::new(vec![0, 2, 0]).unwrap());
        let b = star_graph(&CompositionK::new(vec![1, 0, 1]).unwrap());
        assert_ne!(vertex_color(&a, 0, 2).unwrap(), vertex_color(&b, 0, 2).unwrap());
        assert_ne!(graph_color(&a, 2), graph_color(&b, 2));
    }

    #[test]
    fn hexagon_matches_two_triangles() {
        let c6 = FeaturedGraph::cycle(6);
        let two_c3 = FeaturedGraph::cycle(3).disjoint_union(&FeaturedGraph::cycle(3)).unwrap();
        for t in 0..=6 {
            assert_eq!(graph_color(&c6, t), graph_color(&two_c3, t));
        }
    }

    #[test]
    fn isomorphic_labelings_agree() {
        let g = FeaturedGraph::new(4, [(0, 1), (1, 2), (1, 3)]).unwrap();
        let h = g.permuted(&[3, 2, 0, 1]).unwrap();
        for t in 0..4 {
            assert_eq!(graph_color(&g, t), graph_color(&h, t));
        }
    }

    #[test]
    fn history_bounds() {
        let h = cr_run(&FeaturedGraph::path(4), Some(1));
        assert!(h.round(2).is_err());
        assert!(h.vertex_color(7, 0).is_err());
        assert_eq!(h.stable_at(), None);
    }

    #[test]
    fn csv_export() {
        let h = cr_run(&FeaturedGraph::path(2), Some(1));
        let rows = h.csv_rows("g0");
        let first = rows.lines().next().unwrap();
        assert_eq!(first, format!("g0,1,0,{:016x},\"[1]\"", fnv1a(b"[1]")));
    }
}
