//! Leader-follower communication graphs and their Laplacian operators.
//!
//! Graphs are undirected, unweighted, static, and checked for connectivity at
//! construction. The leader occupies one designated vertex; deleting its row
//! and column from the graph Laplacian yields the grounded Laplacian over the
//! followers, which is symmetric positive definite for every connected graph.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg;

/// Undirected connected graph with one leader vertex.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeaderFollowerGraph {
    vertex_count: usize,
    edges: Vec<(usize, usize)>,
    leader: usize,
    neighbor_sets: Vec<Vec<usize>>,
}

impl LeaderFollowerGraph {
    /// Build and validate a graph from an edge list.
    pub fn new(vertex_count: usize, edges: &[(usize, usize)], leader: usize) -> Result<Self> {
        if vertex_count < 2 {
            return Err(Error::Graph(format!(
                "need at least 2 vertices, got {vertex_count}"
            )));
        }
        if leader >= vertex_count {
            return Err(Error::Graph(format!(
                "leader index {leader} out of range for {vertex_count} vertices"
            )));
        }
        let mut normalized: Vec<(usize, usize)> = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            if a >= vertex_count || b >= vertex_count {
                return Err(Error::Graph(format!(
                    "edge ({a}, {b}) out of range for {vertex_count} vertices"
                )));
            }
            if a == b {
                return Err(Error::Graph(format!("self-loop on vertex {a}")));
            }
            normalized.push((a.min(b), a.max(b)));
        }
        normalized.sort_unstable();
        let before = normalized.len();
        normalized.dedup();
        if normalized.len() != before {
            return Err(Error::Graph("duplicate edge in edge list".into()));
        }

        let mut neighbor_sets = vec![Vec::new(); vertex_count];
        for &(a, b) in &normalized {
            neighbor_sets[a].push(b);
            neighbor_sets[b].push(a);
        }
        for set in &mut neighbor_sets {
            set.sort_unstable();
        }

        let graph = Self {
            vertex_count,
            edges: normalized,
            leader,
            neighbor_sets,
        };
        if !graph.is_connected() {
            return Err(Error::Graph("graph is not connected".into()));
        }
        Ok(graph)
    }

    /// Path graph `leader — f1 — … — fN` with the leader at vertex 0.
    pub fn line(agent_count: usize) -> Result<Self> {
        if agent_count < 2 {
            return Err(Error::Graph(format!(
                "line graph needs at least 2 agents, got {agent_count}"
            )));
        }
        let edges: Vec<(usize, usize)> = (0..agent_count - 1).map(|i| (i, i + 1)).collect();
        Self::new(agent_count, &edges, 0)
    }

    fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.vertex_count];
        let mut queue = std::collections::VecDeque::new();
        seen[0] = true;
        queue.push_back(0);
        let mut visited = 1;
        while let Some(v) = queue.pop_front() {
            for &w in &self.neighbor_sets[v] {
                if !seen[w] {
                    seen[w] = true;
                    visited += 1;
                    queue.push_back(w);
                }
            }
        }
        visited == self.vertex_count
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    pub fn follower_count(&self) -> usize {
        self.vertex_count - 1
    }

    pub fn leader(&self) -> usize {
        self.leader
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbor_sets[v]
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    /// Follower vertex indices in their fixed (ascending) order.
    pub fn follower_order(&self) -> Vec<usize> {
        (0..self.vertex_count).filter(|&v| v != self.leader).collect()
    }

    /// Dense 0/1 adjacency matrix over all vertices.
    pub fn adjacency(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.vertex_count, self.vertex_count);
        for &(i, j) in &self.edges {
            a[(i, j)] = 1.0;
            a[(j, i)] = 1.0;
        }
        a
    }

    /// Graph Laplacian `diag(degrees) − A`; every row sums to zero.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let mut l = -self.adjacency();
        for v in 0..self.vertex_count {
            l[(v, v)] = self.neighbor_sets[v].len() as f64;
        }
        l
    }

    /// Laplacian restricted to followers by deleting the leader row/column.
    /// Follower degrees keep their leader-edge contributions.
    pub fn grounded_laplacian(&self) -> Result<GroundedLaplacian> {
        let full = self.laplacian();
        let order = self.follower_order();
        let n = order.len();
        let mut m = DMatrix::zeros(n, n);
        for (r, &i) in order.iter().enumerate() {
            for (c, &j) in order.iter().enumerate() {
                m[(r, c)] = full[(i, j)];
            }
        }
        let min_eig = *linalg::symmetric_eigenvalues_sorted(&m)?
            .first()
            .ok_or_else(|| Error::Graph("empty follower set".into()))?;
        if min_eig <= 0.0 {
            return Err(Error::Graph(format!(
                "grounded Laplacian is not positive definite (min eigenvalue {min_eig:.3e}); \
                 is the graph connected?"
            )));
        }
        Ok(GroundedLaplacian {
            matrix: m,
            follower_order: order,
        })
    }

    /// 0/1 vector over followers marking leader adjacency.
    pub fn leader_adjacency_vector(&self) -> DVector<f64> {
        let order = self.follower_order();
        DVector::from_iterator(
            order.len(),
            order
                .iter()
                .map(|&v| if self.has_edge(v, self.leader) { 1.0 } else { 0.0 }),
        )
    }
}

/// Follower-network Laplacian together with the vertex order backing its rows.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundedLaplacian {
    pub matrix: DMatrix<f64>,
    pub follower_order: Vec<usize>,
}

impl GroundedLaplacian {
    pub fn follower_count(&self) -> usize {
        self.follower_order.len()
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        Ok(linalg::symmetric_eigenvalues_sorted(&self.matrix)?[0])
    }

    /// Inverse `M` with `M L = I`, symmetric positive definite.
    pub fn inverse_m(&self) -> Result<DMatrix<f64>> {
        let chol = nalgebra::Cholesky::new(self.matrix.clone()).ok_or_else(|| {
            Error::Certificate("grounded Laplacian failed Cholesky factorization".into())
        })?;
        let m = chol.inverse();
        let n = self.matrix.nrows();
        let residual = (&m * &self.matrix - DMatrix::identity(n, n)).norm();
        if residual > 1e-9 * (n as f64).max(1.0) {
            return Err(Error::Certificate(format!(
                "inverse verification failed: |M L - I| = {residual:.3e}"
            )));
        }
        Ok(m)
    }
}

/// `|2 hᵀ(L ⊗ I_n)k − Σ_i Σ_j A_ij (h_i − h_j)ᵀ(k_i − k_j)|` over all graph
/// vertices, evaluating both sides independently.
pub fn laplacian_quadratic_residual(
    graph: &LeaderFollowerGraph,
    h: &DVector<f64>,
    k: &DVector<f64>,
    n: usize,
) -> Result<f64> {
    let v = graph.vertex_count();
    if h.len() != v * n || k.len() != v * n {
        return Err(Error::Dimension(format!(
            "expected stacked vectors of length {} for {v} vertices with n = {n}, got {} and {}",
            v * n,
            h.len(),
            k.len()
        )));
    }
    let lhs = 2.0
        * (h.transpose() * linalg::kron(&graph.laplacian(), &DMatrix::identity(n, n)) * k)[(0, 0)];
    let adjacency = graph.adjacency();
    let mut rhs = 0.0;
    for i in 0..v {
        for j in 0..v {
            if adjacency[(i, j)] == 0.0 {
                continue;
            }
            let hi = h.rows(i * n, n);
            let hj = h.rows(j * n, n);
            let ki = k.rows(i * n, n);
            let kj = k.rows(j * n, n);
            rhs += adjacency[(i, j)] * (hi - hj).dot(&(ki - kj));
        }
    }
    Ok((lhs - rhs).abs())
}

/// Random connected tree: each new vertex attaches to a uniformly chosen
/// earlier vertex. Leader fixed at vertex 0.
pub fn random_tree<R: Rng>(vertex_count: usize, rng: &mut R) -> Result<LeaderFollowerGraph> {
    if vertex_count < 2 {
        return Err(Error::Graph("random tree needs at least 2 vertices".into()));
    }
    let mut edges = Vec::with_capacity(vertex_count - 1);
    for v in 1..vertex_count {
        let parent = rng.gen_range(0..v);
        edges.push((parent, v));
    }
    LeaderFollowerGraph::new(vertex_count, &edges, 0)
}

/// Random connected graph: a random tree plus up to `extra_edges` additional
/// distinct edges.
pub fn random_connected_graph<R: Rng>(
    vertex_count: usize,
    extra_edges: usize,
    rng: &mut R,
) -> Result<LeaderFollowerGraph> {
    let tree = random_tree(vertex_count, rng)?;
    let mut edges: Vec<(usize, usize)> = tree.edges().to_vec();
    for _ in 0..extra_edges {
        let a = rng.gen_range(0..vertex_count);
        let b = rng.gen_range(0..vertex_count);
        if a == b {
            continue;
        }
        let e = (a.min(b), a.max(b));
        if !edges.contains(&e) {
            edges.push(e);
        }
    }
    LeaderFollowerGraph::new(vertex_count, &edges, 0)
}
