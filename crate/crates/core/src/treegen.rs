//! Random split trees.
//!
//! Trees are stored as flat per-vertex arrays. Vertex ids are assigned in
//! allocation order: a vertex is always allocated before its children, and
//! the children of a vertex occupy a contiguous id range in split-vector
//! coordinate order. Zero-ball children are never stored.

use std::io::Write;
use std::ops::Range;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec::{seeded_rng, SimRng};
use crate::splitvec::SplitParams;

/// Parent sentinel of the root.
pub const NO_PARENT: u32 = u32::MAX;

/// Largest supported number of balls.
pub const MAX_BALLS: u64 = 1 << 31;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BuildMode {
    /// Split `n_u` recursively with multinomial draws.
    #[default]
    RecursiveMultinomial,
    /// Insert balls one at a time, splitting full leaves.
    BallByBall,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BuildOptions {
    pub mode: BuildMode,
    /// Keep the path products `n * prod W` for every vertex.
    pub store_nhat: bool,
}

#[derive(Debug, Clone)]
pub struct SplitTree {
    params: SplitParams,
    n: u64,
    parent: Vec<u32>,
    depth: Vec<u32>,
    child_start: Vec<u32>,
    child_count: Vec<u8>,
    held: Vec<u32>,
    subtree: Vec<u64>,
    nhat: Option<Vec<f64>>,
}

/// Summary statistics of one tree.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TreeStats {
    /// Number of vertices N.
    pub vertices: u64,
    /// Total ball path length (sum of ball depths).
    pub psi: u64,
    /// Total vertex path length (sum of vertex depths).
    pub upsilon: u64,
    pub height: u32,
    pub ball_depth_histogram: Vec<u64>,
    pub vertex_depth_histogram: Vec<u64>,
}

/// One depth-k vertex: id, subtree ball count and path-product estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileEntry {
    pub vertex: u32,
    pub balls: u64,
    pub nhat: Option<f64>,
}

impl SplitTree {
    pub fn params(&self) -> &SplitParams {
        &self.params
    }

    /// Number of balls n.
    pub fn balls(&self) -> u64 {
        self.n
    }

    pub fn vertex_count(&self) -> usize {
        self.parent.len()
    }

    pub fn parent(&self, v: u32) -> Option<u32> {
        let p = self.parent[v as usize];
        (p != NO_PARENT).then_some(p)
    }

    pub fn depth(&self, v: u32) -> u32 {
        self.depth[v as usize]
    }

    pub fn children(&self, v: u32) -> Range<u32> {
        let start = self.child_start[v as usize];
        start..start + self.child_count[v as usize] as u32
    }

    /// Balls held at `v` itself, C(v).
    pub fn held(&self, v: u32) -> u32 {
        self.held[v as usize]
    }

    /// Balls in the subtree rooted at `v`, n_v.
    pub fn subtree_balls(&self, v: u32) -> u64 {
        self.subtree[v as usize]
    }

    pub fn nhat(&self, v: u32) -> Option<f64> {
        self.nhat.as_ref().map(|h| h[v as usize])
    }

    pub fn depths(&self) -> &[u32] {
        &self.depth
    }

    pub fn parents(&self) -> &[u32] {
        &self.parent
    }

    pub fn held_counts(&self) -> &[u32] {
        &self.held
    }

    pub fn height(&self) -> u32 {
        self.depth.iter().copied().max().unwrap_or(0)
    }

    fn alloc(&mut self, parent: u32, depth: u32, balls: u64, nhat: f64) -> Result<u32> {
        let id = self.parent.len();
        if id >= NO_PARENT as usize {
            return Err(Error::Budget("vertex count exceeds u32 index space".into()));
        }
        self.parent.push(parent);
        self.depth.push(depth);
        self.child_start.push(0);
        self.child_count.push(0);
        self.held.push(0);
        self.subtree.push(balls);
        if let Some(h) = self.nhat.as_mut() {
            h.push(nhat);
        }
        Ok(id as u32)
    }

    fn empty(params: SplitParams, n: u64, store_nhat: bool) -> Self {
        SplitTree {
            params,
            n,
            parent: Vec::new(),
            depth: Vec::new(),
            child_start: Vec::new(),
            child_count: Vec::new(),
            held: Vec::new(),
            subtree: Vec::new(),
            nhat: store_nhat.then(Vec::new),
        }
    }

    /// Writes one line per vertex: `id parent depth C n_u`.
    pub fn write_dump<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for v in 0..self.vertex_count() {
            let parent = match self.parent[v] {
                NO_PARENT => "-".to_string(),
                p => p.to_string(),
            };
            writeln!(out, "{v} {parent} {} {} {}", self.depth[v], self.held[v], self.subtree[v])?;
        }
        Ok(())
    }
}

pub(crate) fn check_inputs(params: &SplitParams, n: u64) -> Result<()> {
    SplitParams::new(params.b, params.s, params.s0, params.s1, params.family)?;
    if params.b > u8::MAX as usize {
        return Err(Error::Params(format!("branch factor {} exceeds 255", params.b)));
    }
    if n == 0 {
        return Err(Error::Domain("a split tree needs at least one ball".into()));
    }
    if n > MAX_BALLS {
        return Err(Error::Budget(format!("n = {n} exceeds the supported {MAX_BALLS} balls")));
    }
    Ok(())
}

/// Builds a split tree with `n` balls from a seed.
pub fn build_tree(params: &SplitParams, n: u64, seed: u64, mode: BuildMode) -> Result<SplitTree> {
    let mut rng = seeded_rng(seed);
    build_tree_with(params, n, &mut rng, BuildOptions { mode, store_nhat: true })
}

/// Builds a split tree drawing from `rng`.
pub fn build_tree_with(
    params: &SplitParams,
    n: u64,
    rng: &mut SimRng,
    opts: BuildOptions,
) -> Result<SplitTree> {
    check_inputs(params, n)?;
    match opts.mode {
        BuildMode::RecursiveMultinomial => build_recursive(params, n, rng, opts.store_nhat),
        BuildMode::BallByBall => build_ball_by_ball(params, n, rng, opts.store_nhat),
    }
}

/// Draws `Mult(total, probs)` into `out` via conditional binomials.
pub fn multinomial<R: Rng + ?Sized>(total: u64, probs: &[f64], rng: &mut R, out: &mut [u64]) {
    let mut remaining = total;
    let mut mass_left = 1.0;
    let last = probs.len() - 1;
    for (i, (&p, slot)) in probs.iter().zip(out.iter_mut()).enumerate() {
        if i == last || remaining == 0 {
            *slot = if i == last { remaining } else { 0 };
            remaining -= *slot;
            continue;
        }
        let q = if mass_left > 0.0 { (p / mass_left).clamp(0.0, 1.0) } else { 1.0 };
        let x = if q >= 1.0 {
            remaining
        } else if q <= 0.0 {
            0
        } else {
            Binomial::new(remaining, q).expect("q in (0,1)").sample(rng)
        };
        *slot = x;
        remaining -= x;
        mass_left -= p;
    }
}

fn build_recursive(params: &SplitParams, n: u64, rng: &mut SimRng, store_nhat: bool) -> Result<SplitTree> {
    let b = params.b;
    let (s, s0, s1) = (params.s as u64, params.s0 as u64, params.s1 as u64);
    let mut tree = SplitTree::empty(*params, n, store_nhat);
    let mut split = vec![0.0; b];
    let mut counts = vec![0u64; b];
    let mut stack = vec![tree.alloc(NO_PARENT, 0, n, n as f64)?];
    while let Some(v) = stack.pop() {
        let vi = v as usize;
        let nv = tree.subtree[vi];
        if nv <= s {
            tree.held[vi] = nv as u32;
            continue;
        }
        tree.held[vi] = s0 as u32;
        params.family.sample_into(rng, &mut split);
        multinomial(nv - s0 - b as u64 * s1, &split, rng, &mut counts);
        let start = tree.parent.len() as u32;
        let depth = tree.depth[vi] + 1;
        let base = tree.nhat.as_ref().map_or(0.0, |h| h[vi]);
        for (c, w) in counts.iter().zip(&split) {
            let balls = c + s1;
            if balls > 0 {
                tree.alloc(v, depth, balls, base * w)?;
            }
        }
        let end = tree.parent.len() as u32;
        tree.child_start[vi] = start;
        tree.child_count[vi] = (end - start) as u8;
        stack.extend((start..end).rev());
    }
    Ok(tree)
}

/// Infinite-tree arena used by the insertion construction.
struct InsertionArena {
    b: usize,
    kids: Vec<u32>,
    count: Vec<u64>,
    internal: Vec<bool>,
    split: Vec<f64>,
}

impl InsertionArena {
    fn new_vertex(&mut self, params: &SplitParams, rng: &mut SimRng) -> u32 {
        let id = self.count.len() as u32;
        self.kids.extend(std::iter::repeat_n(NO_PARENT, self.b));
        self.count.push(0);
        self.internal.push(false);
        let start = self.split.len();
        self.split.resize(start + self.b, 0.0);
        params.family.sample_into(rng, &mut self.split[start..]);
        id
    }

    fn child(&mut self, u: u32, i: usize, params: &SplitParams, rng: &mut SimRng) -> u32 {
        let slot = u as usize * self.b + i;
        if self.kids[slot] == NO_PARENT {
            let c = self.new_vertex(params, rng);
            self.kids[slot] = c;
        }
        self.kids[slot]
    }

    fn pick(&self, u: u32, rng: &mut SimRng) -> usize {
        let v = &self.split[u as usize * self.b..(u as usize + 1) * self.b];
        let r: f64 = rng.random();
        let mut acc = 0.0;
        for (i, &p) in v.iter().enumerate() {
            acc += p;
            if r < acc {
                return i;
            }
        }
        // Rounding left r above the cumulative sum: take the last positive coordinate.
        v.iter().rposition(|&p| p > 0.0).unwrap_or(self.b - 1)
    }

    /// `u` holds `k > s` balls: keep `s0`, give `s1` to each child, route the rest.
    fn split(&mut self, u: u32, k: u64, params: &SplitParams, rng: &mut SimRng) {
        let s = params.s as u64;
        let mut work = vec![(u, k)];
        while let Some((u, k)) = work.pop() {
            self.count[u as usize] = params.s0 as u64;
            self.internal[u as usize] = true;
            let mut received = vec![params.s1 as u64; self.b];
            let free = k - params.s0 as u64 - (self.b * params.s1) as u64;
            for _ in 0..free {
                received[self.pick(u, rng)] += 1;
            }
            for (i, &r) in received.iter().enumerate() {
                if r == 0 {
                    continue;
                }
                let c = self.child(u, i, params, rng);
                if r > s {
                    work.push((c, r));
                } else {
                    self.count[c as usize] = r;
                }
            }
        }
    }
}

fn build_ball_by_ball(params: &SplitParams, n: u64, rng: &mut SimRng, store_nhat: bool) -> Result<SplitTree> {
    let b = params.b;
    let s = params.s as u64;
    let mut arena = InsertionArena {
        b,
        kids: Vec::new(),
        count: Vec::new(),
        internal: Vec::new(),
        split: Vec::new(),
    };
    let root = arena.new_vertex(params, rng);
    for _ in 0..n {
        let mut u = root;
        while arena.internal[u as usize] {
            let i = arena.pick(u, rng);
            u = arena.child(u, i, params, rng);
        }
        if arena.count[u as usize] < s {
            arena.count[u as usize] += 1;
        } else {
            arena.split(u, s + 1, params, rng);
        }
    }

    // Subtree totals: every arena child has a larger id than its parent.
    let len = arena.count.len();
    let mut totals = arena.count.clone();
    for u in (0..len).rev() {
        for i in 0..b {
            let c = arena.kids[u * b + i];
            if c != NO_PARENT {
                totals[u] += totals[c as usize];
            }
        }
    }

    // Re-index into the canonical layout.
    let mut tree = SplitTree::empty(*params, n, store_nhat);
    let mut stack = vec![(tree.alloc(NO_PARENT, 0, n, n as f64)?, root)];
    while let Some((v, a)) = stack.pop() {
        let vi = v as usize;
        tree.held[vi] = arena.count[a as usize] as u32;
        let start = tree.parent.len() as u32;
        let base = tree.nhat.as_ref().map_or(0.0, |h| h[vi]);
        let mut pending = Vec::with_capacity(b);
        for i in 0..b {
            let c = arena.kids[a as usize * b + i];
            if c != NO_PARENT && totals[c as usize] > 0 {
                let w = arena.split[a as usize * b + i];
                let id = tree.alloc(v, tree.depth[vi] + 1, totals[c as usize], base * w)?;
                pending.push((id, c));
            }
        }
        tree.child_start[vi] = start;
        tree.child_count[vi] = pending.len() as u8;
        stack.extend(pending.into_iter().rev());
    }
    Ok(tree)
}

/// Computes N, the path lengths, the height and both depth histograms.
pub fn tree_stats(tree: &SplitTree) -> TreeStats {
    let height = tree.height() as usize;
    let mut balls = vec![0u64; height + 1];
    let mut verts = vec![0u64; height + 1];
    for (&d, &c) in tree.depth.iter().zip(&tree.held) {
        balls[d as usize] += c as u64;
        verts[d as usize] += 1;
    }
    let psi = balls.iter().enumerate().map(|(d, &c)| d as u64 * c).sum();
    let upsilon = verts.iter().enumerate().map(|(d, &c)| d as u64 * c).sum();
    TreeStats {
        vertices: tree.vertex_count() as u64,
        psi,
        upsilon,
        height: height as u32,
        ball_depth_histogram: balls,
        vertex_depth_histogram: verts,
    }
}

/// Vertices at depth `k` with their subtree ball counts and path products.
pub fn subtree_profile(tree: &SplitTree, k: u32) -> Vec<ProfileEntry> {
    (0..tree.vertex_count() as u32)
        .filter(|&v| tree.depth(v) == k)
        .map(|v| ProfileEntry { vertex: v, balls: tree.subtree_balls(v), nhat: tree.nhat(v) })
        .collect()
}

/// Samples vertices with probability proportional to the balls they hold.
#[derive(Debug, Clone)]
pub struct BallSampler {
    cumulative: Vec<u64>,
}

impl BallSampler {
    pub fn new(tree: &SplitTree) -> Self {
        let mut acc = 0u64;
        let cumulative = tree
            .held
            .iter()
            .map(|&c| {
                acc += c as u64;
                acc
            })
            .collect();
        BallSampler { cumulative }
    }

    /// Vertex holding a uniformly chosen ball.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        let total = *self.cumulative.last().expect("nonempty tree");
        let r = rng.random_range(0..total);
        self.cumulative.partition_point(|&c| c <= r) as u32
    }
}

/// Depth of a uniformly chosen ball.
pub fn sample_ball_depth<R: Rng + ?Sized>(tree: &SplitTree, rng: &mut R) -> u32 {
    tree.depth(BallSampler::new(tree).sample(rng))
}

/// Last common ancestor of two vertices.
pub fn lca(tree: &SplitTree, mut u: u32, mut v: u32) -> u32 {
    while u != v {
        if tree.depth(u) >= tree.depth(v) {
            u = tree.parent[u as usize];
        } else {
            v = tree.parent[v as usize];
        }
    }
    u
}

/// Depths of two independent uniform balls and of their last common ancestor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BallPair {
    pub first: u32,
    pub second: u32,
    pub depth_first: u32,
    pub depth_second: u32,
    pub lca_depth: u32,
}

pub fn sample_ball_pair<R: Rng + ?Sized>(tree: &SplitTree, sampler: &BallSampler, rng: &mut R) -> BallPair {
    let a = sampler.sample(rng);
    let b = sampler.sample(rng);
    BallPair {
        first: a,
        second: b,
        depth_first: tree.depth(a),
        depth_second: tree.depth(b),
        lca_depth: tree.depth(lca(tree, a, b)),
    }
}

/// Depth of the last common ancestor of two uniformly chosen balls.
pub fn lca_depth<R: Rng + ?Sized>(tree: &SplitTree, rng: &mut R) -> u32 {
    sample_ball_pair(tree, &BallSampler::new(tree), rng).lca_depth
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splitvec::SplitFamily;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn check_invariants(t: &SplitTree) {
        let p = t.params();
        assert_eq!(t.held.iter().map(|&c| c as u64).sum::<u64>(), t.balls());
        assert_eq!(t.subtree_balls(0), t.balls());
        for v in 0..t.vertex_count() as u32 {
            assert!(t.subtree_balls(v) > 0);
            let kids = t.children(v);
            let below: u64 = kids.clone().map(|c| t.subtree_balls(c)).sum();
            assert_eq!(t.subtree_balls(v), t.held(v) as u64 + below);
            for c in kids.clone() {
                assert_eq!(t.parent(c), Some(v));
                assert_eq!(t.depth(c), t.depth(v) + 1);
            }
            if kids.is_empty() {
                assert!(t.held(v) >= 1 && t.held(v) as usize <= p.s, "leaf holds {}", t.held(v));
            } else {
                assert_eq!(t.held(v) as usize, p.s0);
            }
        }
    }

    #[test]
    fn single_ball_and_two_balls() {
        for mode in [BuildMode::RecursiveMultinomial, BuildMode::BallByBall] {
            let t = build_tree(&SplitParams::bst(), 1, 3, mode).unwrap();
            let st = tree_stats(&t);
            assert_eq!((st.vertices, st.psi, st.height), (1, 0, 0));
            assert_eq!(t.held(0), 1);

            let t = build_tree(&SplitParams::bst(), 2, 3, mode).unwrap();
            let st = tree_stats(&t);
            assert_eq!((st.vertices, st.psi, st.upsilon, st.height), (2, 1, 1, 1));
            assert_eq!(t.held(0), 1);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(build_tree(&SplitParams::bst(), 0, 1, BuildMode::default()).is_err());
        assert!(matches!(
            build_tree(&SplitParams::bst(), MAX_BALLS + 1, 1, BuildMode::default()),
            Err(Error::Budget(_))
        ));
        let mut bad = SplitParams::bst();
        bad.s0 = 2;
        assert!(matches!(build_tree(&bad, 10, 1, BuildMode::default()), Err(Error::Params(_))));
    }

    #[test]
    fn invariants_across_families_and_modes() {
        let cases = [
            SplitParams::bst(),
            SplitParams::new(2, 1, 0, 0, SplitFamily::Deterministic(2)).unwrap(),
            SplitParams::new(3, 2, 0, 1, SplitFamily::Spacings(3)).unwrap(),
            SplitParams::new(3, 4, 2, 1, SplitFamily::Dirichlet(3, 0.7)).unwrap(),
            SplitParams::new(4, 3, 1, 0, SplitFamily::Spacings(4)).unwrap(),
        ];
        for (i, p) in cases.iter().enumerate() {
            for mode in [BuildMode::RecursiveMultinomial, BuildMode::BallByBall] {
                let t = build_tree(p, 500, i as u64, mode).unwrap();
                check_invariants(&t);
            }
        }
    }

    #[test]
    fn bst_has_n_vertices() {
        let t = build_tree(&SplitParams::bst(), 10_000, 5, BuildMode::default()).unwrap();
        assert_eq!(tree_stats(&t).vertices, 10_000);
    }

    #[test]
    fn subtree_profile_root_and_deficit() {
        let p = SplitParams::new(3, 2, 1, 0, SplitFamily::Spacings(3)).unwrap();
        let t = build_tree(&p, 5000, 11, BuildMode::default()).unwrap();
        let root = subtree_profile(&t, 0);
        assert_eq!(root.len(), 1);
        assert_eq!((root[0].vertex, root[0].balls), (0, 5000));
        assert_eq!(root[0].nhat, Some(5000.0));
        for k in 0..=t.height() {
            let total: u64 = subtree_profile(&t, k).iter().map(|e| e.balls).sum();
            let cap = (p.s.max(p.s0) as f64) * (p.b as f64).powi(k as i32 + 1);
            assert!(total <= 5000);
            assert!(((5000 - total) as f64) < cap, "k={k}");
        }
        assert!(subtree_profile(&t, t.height() + 1).is_empty());
    }

    #[test]
    fn ball_depths_and_lca() {
        let t = build_tree(&SplitParams::bst(), 1, 1, BuildMode::default()).unwrap();
        let mut rng = seeded_rng(1);
        assert_eq!(sample_ball_depth(&t, &mut rng), 0);
        assert_eq!(lca_depth(&t, &mut rng), 0);

        let t = build_tree(&SplitParams::bst(), 4000, 8, BuildMode::default()).unwrap();
        let sampler = BallSampler::new(&t);
        for _ in 0..2000 {
            let pair = sample_ball_pair(&t, &sampler, &mut rng);
            // Independent route: edges on the path via ancestor sets.
            let mut anc = HashSet::new();
            let mut u = Some(pair.first);
            while let Some(x) = u {
                anc.insert(x);
                u = t.parent(x);
            }
            let mut edges = 0;
            let mut w = pair.second;
            while !anc.contains(&w) {
                w = t.parent(w).unwrap();
                edges += 1;
            }
            edges += t.depth(pair.first) - t.depth(w);
            assert_eq!(pair.depth_first + pair.depth_second - 2 * pair.lca_depth, edges);
        }
    }

    #[test]
    fn dump_has_one_line_per_vertex() {
        let t = build_tree(&SplitParams::bst(), 50, 2, BuildMode::default()).unwrap();
        let mut buf = Vec::new();
        t.write_dump(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 50);
        assert!(text.starts_with("0 - 0 1 50"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn multinomial_conserves(total in 0u64..10_000, seed in any::<u64>(), b in 2usize..6) {
            let mut rng = seeded_rng(seed);
            let probs = crate::splitvec::sample_split_vector(&SplitFamily::Spacings(b), &mut rng);
            let mut out = vec![0; b];
            multinomial(total, &probs, &mut rng, &mut out);
            prop_assert_eq!(out.iter().sum::<u64>(), total);
        }

        #[test]
        fn conservation_property(n in 1u64..400, seed in any::<u64>(), ball_by_ball in any::<bool>()) {
            let mode = if ball_by_ball { BuildMode::BallByBall } else { BuildMode::RecursiveMultinomial };
            let p = SplitParams::new(2, 2, 1, 1, SplitFamily::BinarySearch).unwrap();
            let t = build_tree(&p, n, seed, mode).unwrap();
            check_invariants(&t);
        }
    }
}
