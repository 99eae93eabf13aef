//! Bernoulli bond percolation on split trees.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec::{replica_rng, seeded_rng, Executor, Stream};
use crate::splitvec::SplitParams;
use crate::stats::Moments;
use crate::treegen::{build_tree_with, check_inputs, multinomial, BallSampler, BuildOptions, SplitTree};

/// Supercritical retention probability `1 - c / ln n`.
pub fn percolation_param(n: u64, c: f64) -> Result<f64> {
    if !(c >= 0.0 && c.is_finite()) {
        return Err(Error::Domain(format!("c must be finite and nonnegative, got {c}")));
    }
    let ln_n = (n as f64).ln();
    if n < 2 || ln_n <= c {
        return Err(Error::Domain(format!(
            "need n > e^c for p = 1 - c/ln n in (0, 1]; got n = {n}, c = {c}"
        )));
    }
    Ok(1.0 - c / ln_n)
}

/// Connected components after edge deletion.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterDecomposition {
    /// Cluster id of every vertex; the root's cluster is 0.
    pub cluster_of: Vec<u32>,
    pub cluster_vertices: Vec<u64>,
    pub cluster_balls: Vec<u64>,
    /// Balls in the root cluster.
    pub root_balls: u64,
    /// Vertices in the root cluster.
    pub root_vertices: u64,
    /// Largest ball total among clusters other than the ball-largest one.
    pub second_balls: u64,
    /// Largest vertex total among clusters other than the vertex-largest one.
    pub second_vertices: u64,
    pub retained_edges: u64,
}

impl ClusterDecomposition {
    pub fn cluster_count(&self) -> usize {
        self.cluster_vertices.len()
    }
}

fn second_largest(values: &[u64]) -> u64 {
    let (mut first, mut second) = (0u64, 0u64);
    for &v in values {
        if v > first {
            second = first;
            first = v;
        } else if v > second {
            second = v;
        }
    }
    second
}

/// Percolates `tree`, keeping each edge with probability `p`, using a seed.
pub fn percolate(tree: &SplitTree, p: f64, seed: u64) -> Result<ClusterDecomposition> {
    percolate_with(tree, p, &mut seeded_rng(seed))
}

/// Percolates `tree` drawing from `rng`.
///
/// Vertices are visited in id order, which lists every parent before its
/// children, so one pass decides each edge and assigns cluster ids.
pub fn percolate_with<R: Rng + ?Sized>(tree: &SplitTree, p: f64, rng: &mut R) -> Result<ClusterDecomposition> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("retention probability {p} outside [0, 1]")));
    }
    let n = tree.vertex_count();
    let parents = tree.parents();
    let held = tree.held_counts();
    let mut cluster_of = vec![0u32; n];
    let mut cluster_vertices = vec![1u64];
    let mut cluster_balls = vec![held[0] as u64];
    let mut retained_edges = 0u64;
    for v in 1..n {
        let parent = parents[v] as usize;
        let id = if rng.random_bool(p) {
            retained_edges += 1;
            let id = cluster_of[parent];
            cluster_vertices[id as usize] += 1;
            cluster_balls[id as usize] += held[v] as u64;
            id
        } else {
            cluster_vertices.push(1);
            cluster_balls.push(held[v] as u64);
            (cluster_vertices.len() - 1) as u32
        };
        cluster_of[v] = id;
    }
    Ok(ClusterDecomposition {
        root_balls: cluster_balls[0],
        root_vertices: cluster_vertices[0],
        second_balls: second_largest(&cluster_balls),
        second_vertices: second_largest(&cluster_vertices),
        retained_edges,
        cluster_of,
        cluster_vertices,
        cluster_balls,
    })
}

/// Size of the root cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RootCluster {
    pub balls: u64,
    pub vertices: u64,
}

/// Grows only the root cluster of a percolated split tree.
///
/// Each vertex is split exactly as in the recursive construction, but only
/// children joined to their parent by a retained edge are expanded. The law
/// of the result equals that of the root cluster of [`percolate`] applied to
/// a freshly built tree; nothing is stored.
pub fn root_cluster<R: Rng + ?Sized>(params: &SplitParams, n: u64, p: f64, rng: &mut R) -> Result<RootCluster> {
    check_inputs(params, n)?;
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("retention probability {p} outside [0, 1]")));
    }
    let b = params.b;
    let (s, s0, s1) = (params.s as u64, params.s0 as u64, params.s1 as u64);
    let mut split = vec![0.0; b];
    let mut counts = vec![0u64; b];
    let mut stack = vec![n];
    let mut out = RootCluster { balls: 0, vertices: 0 };
    while let Some(nv) = stack.pop() {
        out.vertices += 1;
        if nv <= s {
            out.balls += nv;
            continue;
        }
        out.balls += s0;
        params.family.sample_into(rng, &mut split);
        multinomial(nv - s0 - b as u64 * s1, &split, rng, &mut counts);
        for &c in &counts {
            let balls = c + s1;
            if balls > 0 && rng.random_bool(p) {
                stack.push(balls);
            }
        }
    }
    Ok(out)
}

/// Both sides of `E[G_hat / n] = E[p^{D(ball)}]` estimated from independent replicas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IdentityCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub lhs_stderr: f64,
    pub rhs_stderr: f64,
    /// `sqrt(lhs_stderr^2 + rhs_stderr^2)`.
    pub stderr: f64,
}

pub fn root_identity_check(
    params: &SplitParams,
    n: u64,
    c: f64,
    replicas: u64,
    seed: u64,
    exec: &Executor,
) -> Result<IdentityCheck> {
    let p = percolation_param(n, c)?;
    if replicas < 2 {
        return Err(Error::Domain("identity check needs at least two replicas".into()));
    }
    let opts = BuildOptions { store_nhat: false, ..BuildOptions::default() };
    let pairs = exec.map(replicas, |i| -> Result<(f64, f64)> {
        let mut tree_rng = replica_rng(seed, Stream::Tree, i);
        let tree = build_tree_with(params, n, &mut tree_rng, opts)?;
        let mut perc_rng = replica_rng(seed, Stream::Percolation, i);
        let lhs = percolate_with(&tree, p, &mut perc_rng)?.root_balls as f64 / n as f64;
        drop(tree);

        let mut ball_rng = replica_rng(seed, Stream::Balls, i);
        let fresh = build_tree_with(params, n, &mut ball_rng, opts)?;
        let depth = fresh.depth(BallSampler::new(&fresh).sample(&mut ball_rng));
        Ok((lhs, p.powi(depth as i32)))
    });
    let mut left = Moments::default();
    let mut right = Moments::default();
    for pair in pairs {
        let (l, r) = pair?;
        left.push(l);
        right.push(r);
    }
    let (ls, rs) = (left.stderr(), right.stderr());
    Ok(IdentityCheck {
        lhs: left.mean(),
        rhs: right.mean(),
        lhs_stderr: ls,
        rhs_stderr: rs,
        stderr: (ls * ls + rs * rs).sqrt(),
    })
}
