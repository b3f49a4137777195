//! Skeleton topology, neighbor-set partitioning and the normalized
//! per-subset adjacency stack consumed by graph convolution.

use std::collections::VecDeque;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Subset labels of the root / centripetal / centrifugal partition.
pub const ROOT_SUBSET: usize = 1;
pub const CENTRIPETAL: usize = 2;
pub const CENTRIFUGAL: usize = 3;

/// Undirected joint graph, constant over time.
#[derive(Debug, Clone)]
pub struct SkeletonGraph {
    joint_count: usize,
    edges: Vec<(usize, usize)>,
    root: usize,
    subsets: usize,
    max_distance: usize,
    hops: Vec<Vec<usize>>,
}

impl SkeletonGraph {
    /// Validates the topology and precomputes all-pairs hop distances.
    ///
    /// Edges are undirected; duplicates are merged. The graph must be
    /// connected.
    pub fn new(
        joint_count: usize,
        edges: &[(usize, usize)],
        root: usize,
        subsets: usize,
        max_distance: usize,
    ) -> Result<Self> {
        if joint_count == 0 {
            return Err(Error::Graph("graph has no joints".into()));
        }
        if subsets == 0 {
            return Err(Error::config("graph.K", "subset count must be at least 1"));
        }
        if max_distance == 0 {
            return Err(Error::config("graph.D", "neighbor distance must be at least 1"));
        }
        if root >= joint_count {
            return Err(Error::Graph(format!(
                "root joint {root} outside 0..{joint_count}"
            )));
        }
        let mut canon: Vec<(usize, usize)> = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            if a >= joint_count || b >= joint_count {
                return Err(Error::Graph(format!(
                    "edge ({a}, {b}) references a joint outside 0..{joint_count}"
                )));
            }
            if a == b {
                return Err(Error::Graph(format!("self-loop on joint {a}")));
            }
            let e = (a.min(b), a.max(b));
            if !canon.contains(&e) {
                canon.push(e);
            }
        }

        let mut adj = vec![Vec::new(); joint_count];
        for &(a, b) in &canon {
            adj[a].push(b);
            adj[b].push(a);
        }
        let hops: Vec<Vec<usize>> = (0..joint_count).map(|s| bfs(&adj, s)).collect();
        let unreached: Vec<usize> = (0..joint_count)
            .filter(|&j| hops[0][j] == usize::MAX)
            .collect();
        if !unreached.is_empty() {
            return Err(Error::Graph(format!(
                "graph is disconnected; joints {unreached:?} are not reachable from joint 0"
            )));
        }

        Ok(SkeletonGraph {
            joint_count,
            edges: canon,
            root,
            subsets,
            max_distance,
            hops,
        })
    }

    pub fn joint_count(&self) -> usize {
        self.joint_count
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn subsets(&self) -> usize {
        self.subsets
    }

    pub fn max_distance(&self) -> usize {
        self.max_distance
    }

    pub fn hop_distance(&self, i: usize, j: usize) -> usize {
        self.hops[i][j]
    }

    /// `N(i) = { j : d(i, j) <= D }`, including `i`, in ascending order.
    pub fn neighbor_sets(&self) -> Vec<Vec<usize>> {
        (0..self.joint_count)
            .map(|i| {
                (0..self.joint_count)
                    .filter(|&j| self.hops[i][j] <= self.max_distance)
                    .collect()
            })
            .collect()
    }

    /// Label in `1..=3` for every `(i, j)` with `j` in `N(i)`.
    ///
    /// `j == i` is the root subset; `j` strictly closer to the root joint
    /// than `i` is centripetal; everything else, ties included, is
    /// centrifugal.
    pub fn label_partition(&self) -> Result<Vec<Vec<(usize, usize)>>> {
        if self.subsets != 3 {
            return Err(Error::config(
                "graph.K",
                format!(
                    "the root/centripetal/centrifugal partition needs K = 3, got {}",
                    self.subsets
                ),
            ));
        }
        let to_root = &self.hops[self.root];
        Ok(self
            .neighbor_sets()
            .into_iter()
            .enumerate()
            .map(|(i, ns)| {
                ns.into_iter()
                    .map(|j| {
                        let label = if j == i {
                            ROOT_SUBSET
                        } else if to_root[j] < to_root[i] {
                            CENTRIPETAL
                        } else {
                            CENTRIFUGAL
                        };
                        (j, label)
                    })
                    .collect()
            })
            .collect())
    }

    pub fn adjacency_stack(&self) -> Result<AdjacencyStack> {
        let labels = self.label_partition()?;
        let n = self.joint_count;
        let mut raw = vec![Tensor::zeros(&[n, n]); self.subsets];
        for (i, row) in labels.iter().enumerate() {
            for &(j, k) in row {
                raw[k - 1].set(i, j, 1.0);
            }
        }
        let normalized = raw.iter().map(|a| Arc::new(normalize(a))).collect();
        Ok(AdjacencyStack { raw, normalized })
    }

    /// Graph whose nodes are the parts of `parts`; two parts are adjacent
    /// when some bone joins them. The root part contains the root joint.
    pub fn part_graph(&self, parts: &PartMap) -> Result<SkeletonGraph> {
        let owner = parts.owners(self.joint_count)?;
        let mut edges = Vec::new();
        for &(a, b) in &self.edges {
            let (pa, pb) = (owner[a], owner[b]);
            if pa != pb {
                edges.push((pa.min(pb), pa.max(pb)));
            }
        }
        SkeletonGraph::new(
            parts.len(),
            &edges,
            owner[self.root],
            self.subsets,
            self.max_distance,
        )
    }

    /// Same topology under the node relabeling `old -> perm[old]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<SkeletonGraph> {
        if perm.len() != self.joint_count {
            return Err(Error::Graph("permutation length differs from joint count".into()));
        }
        let edges: Vec<(usize, usize)> = self.edges.iter().map(|&(a, b)| (perm[a], perm[b])).collect();
        SkeletonGraph::new(
            self.joint_count,
            &edges,
            perm[self.root],
            self.subsets,
            self.max_distance,
        )
    }
}

fn bfs(adj: &[Vec<usize>], source: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; adj.len()];
    dist[source] = 0;
    let mut queue = VecDeque::from([source]);
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    dist
}

/// `D_row^{-1/2} A D_col^{-1/2}` with zero degrees contributing zero.
///
/// For symmetric `A` the row and column degrees coincide. The subset
/// matrices of the directed partition are not symmetric, so the degree of
/// the receiving node is its row sum and the degree of the sending node is
/// its column sum; an empty row or column stays empty.
fn normalize(a: &Tensor) -> Tensor {
    let n = a.rows();
    let row_deg: Vec<f64> = (0..n).map(|i| a.row(i).iter().sum()).collect();
    let col_deg: Vec<f64> = (0..n).map(|j| (0..n).map(|i| a.get(i, j)).sum()).collect();
    let inv_sqrt = |d: f64| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 };
    let mut out = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            let v = a.get(i, j);
            if v != 0.0 {
                out.set(i, j, inv_sqrt(row_deg[i]) * v * inv_sqrt(col_deg[j]));
            }
        }
    }
    out
}

/// The `K` subset adjacency matrices, raw and normalized.
#[derive(Debug, Clone)]
pub struct AdjacencyStack {
    raw: Vec<Tensor>,
    normalized: Vec<Arc<Tensor>>,
}

impl AdjacencyStack {
    pub fn subsets(&self) -> usize {
        self.raw.len()
    }

    pub fn joint_count(&self) -> usize {
        self.raw[0].rows()
    }

    /// Un-normalized 0/1 matrix of subset `k` (zero-based).
    pub fn raw(&self, k: usize) -> &Tensor {
        &self.raw[k]
    }

    pub fn normalized(&self, k: usize) -> &Arc<Tensor> {
        &self.normalized[k]
    }
}

/// Assignment of joints to body parts.
#[derive(Debug, Clone, PartialEq)]
pub struct PartMap {
    parts: Vec<(String, Vec<usize>)>,
}

impl PartMap {
    pub fn new(parts: Vec<(String, Vec<usize>)>) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::config("parts", "part map is empty"));
        }
        if let Some((name, _)) = parts.iter().find(|(_, j)| j.is_empty()) {
            return Err(Error::config("parts", format!("part `{name}` has no joints")));
        }
        Ok(PartMap { parts })
    }

    /// A single part covering joints `0..n`.
    pub fn whole_body(n: usize) -> Self {
        PartMap {
            parts: vec![("body".into(), (0..n).collect())],
        }
    }

    pub fn len(&self) -> usize {
        self.parts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parts.is_empty()
    }

    pub fn parts(&self) -> &[(String, Vec<usize>)] {
        &self.parts
    }

    pub fn max_part_size(&self) -> usize {
        self.parts.iter().map(|(_, j)| j.len()).max().unwrap_or(0)
    }

    /// Part index of every joint; fails unless each joint is in exactly one part.
    pub fn owners(&self, joint_count: usize) -> Result<Vec<usize>> {
        let mut owner = vec![usize::MAX; joint_count];
        for (p, (name, joints)) in self.parts.iter().enumerate() {
            for &j in joints {
                if j >= joint_count {
                    return Err(Error::config(
                        "parts",
                        format!("part `{name}` lists joint {j} outside 0..{joint_count}"),
                    ));
                }
                if owner[j] != usize::MAX {
                    return Err(Error::config(
                        "parts",
                        format!("joint {j} is assigned to more than one part"),
                    ));
                }
                owner[j] = p;
            }
        }
        if let Some(j) = owner.iter().position(|&o| o == usize::MAX) {
            return Err(Error::config("parts", format!("joint {j} belongs to no part")));
        }
        Ok(owner)
    }
}

/// Skeleton layouts shipped with the library.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// Kinect v2 / NTU RGB+D, 25 joints, rooted at the spine-shoulder joint.
    Ntu25,
    /// 15-joint body (torso, neck, head, arms, legs), rooted at the torso.
    Body15,
}

impl Layout {
    pub fn joint_count(self) -> usize {
        match self {
            Layout::Ntu25 => 25,
            Layout::Body15 => 15,
        }
    }

    pub fn edges(self) -> Vec<(usize, usize)> {
        match self {
            // One-based pairs from the Kinect v2 joint map.
            Layout::Ntu25 => [
                (1, 2), (2, 21), (3, 21), (4, 3), (5, 21), (6, 5), (7, 6), (8, 7),
                (9, 21), (10, 9), (11, 10), (12, 11), (13, 1), (14, 13), (15, 14),
                (16, 15), (17, 1), (18, 17), (19, 18), (20, 19), (22, 23), (23, 8),
                (24, 25), (25, 12),
            ]
            .iter()
            .map(|&(a, b)| (a - 1, b - 1))
            .collect(),
            Layout::Body15 => vec![
                (0, 1), (1, 2), (1, 3), (3, 4), (4, 5), (1, 6), (6, 7), (7, 8),
                (0, 9), (9, 10), (10, 11), (0, 12), (12, 13), (13, 14),
            ],
        }
    }

    pub fn root(self) -> usize {
        match self {
            Layout::Ntu25 => 20,
            Layout::Body15 => 0,
        }
    }

    /// Two arms, two legs and the trunk.
    pub fn parts(self) -> PartMap {
        let p = |name: &str, joints: &[usize]| (name.to_string(), joints.to_vec());
        let parts = match self {
            Layout::Ntu25 => vec![
                p("trunk", &[0, 1, 2, 3, 20]),
                p("left_arm", &[4, 5, 6, 7, 21, 22]),
                p("right_arm", &[8, 9, 10, 11, 23, 24]),
                p("left_leg", &[12, 13, 14, 15]),
                p("right_leg", &[16, 17, 18, 19]),
            ],
            Layout::Body15 => vec![
                p("trunk", &[0, 1, 2]),
                p("left_arm", &[3, 4, 5]),
                p("right_arm", &[6, 7, 8]),
                p("left_leg", &[9, 10, 11]),
                p("right_leg", &[12, 13, 14]),
            ],
        };
        PartMap { parts }
    }

    pub fn graph(self) -> SkeletonGraph {
        SkeletonGraph::new(self.joint_count(), &self.edges(), self.root(), 3, 1)
            .expect("built-in layouts are valid")
    }
}
