//! Graph representation, spectral filter construction, benchmark graph
//! generation, structural node features, and kNN graphs from embeddings.

use crate::error::{Error, Result};
use crate::Mat;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// Undirected simple graph with optional dense node features.
///
/// Edges are stored once as `(u, v)` with `u < v`, sorted; construction
/// rejects self-loops and out-of-range indices and collapses duplicates.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n: usize,
    edges: Vec<(u32, u32)>,
    features: Option<Mat>,
}

impl Graph {
    /// Builds a graph from an edge iterator. Edge direction is ignored;
    /// duplicates (including reversed duplicates) collapse to one edge.
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("graph must have at least one node"));
        }
        let mut normalized = Vec::new();
        for (u, v) in edges {
            if u == v {
                return Err(Error::invalid(format!("self-loop at node {u}")));
            }
            if u >= n || v >= n {
                return Err(Error::invalid(format!(
                    "edge ({u}, {v}) out of range for {n} nodes"
                )));
            }
            let (a, b) = if u < v { (u, v) } else { (v, u) };
            normalized.push((a as u32, b as u32));
        }
        normalized.sort_unstable();
        normalized.dedup();
        Ok(Graph {
            n,
            edges: normalized,
            features: None,
        })
    }

    /// Attaches a dense feature matrix; its row count must equal `n`.
    pub fn with_features(mut self, features: Mat) -> Result<Self> {
        if features.nrows() != self.n {
            return Err(Error::invalid(format!(
                "feature matrix has {} rows but graph has {} nodes",
                features.nrows(),
                self.n
            )));
        }
        self.features = Some(features);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn features(&self) -> Option<&Mat> {
        self.features.as_ref()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        if u == v {
            return false;
        }
        let key = if u < v {
            (u as u32, v as u32)
        } else {
            (v as u32, u as u32)
        };
        self.edges.binary_search(&key).is_ok()
    }

    /// Dense 0/1 adjacency matrix (no self-loops).
    pub fn adjacency(&self) -> Mat {
        let mut a = Mat::zeros((self.n, self.n));
        for &(u, v) in &self.edges {
            a[[u as usize, v as usize]] = 1.0;
            a[[v as usize, u as usize]] = 1.0;
        }
        a
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0usize; self.n];
        for &(u, v) in &self.edges {
            deg[u as usize] += 1;
            deg[v as usize] += 1;
        }
        deg
    }

    /// Sorted neighbor list per node.
    pub fn adjacency_lists(&self) -> Vec<Vec<u32>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(u, v) in &self.edges {
            adj[u as usize].push(v);
            adj[v as usize].push(u);
        }
        for nbrs in &mut adj {
            nbrs.sort_unstable();
        }
        adj
    }
}

/// The complementary low/high-pass propagation matrices of one graph.
///
/// `a_low_sym + a_high_sym = I` holds by construction: both are built from
/// the same normalized self-loop-augmented Laplacian.
#[derive(Debug, Clone)]
pub struct FilterPair {
    pub a_low_sym: Mat,
    pub a_high_sym: Mat,
}

impl FilterPair {
    /// The plain GCN propagation matrix `I - L_sym` (equivalently
    /// `2 * a_low_sym - I`), used by the single-pass encoder ablation.
    pub fn standard_gcn(&self) -> Mat {
        let n = self.a_low_sym.nrows();
        let mut g = self.a_low_sym.clone();
        g.mapv_inplace(|x| 2.0 * x);
        for i in 0..n {
            g[[i, i]] -= 1.0;
        }
        g
    }
}

/// Self-loop-augmented symmetric normalized Laplacian `I - D^{-1/2} (A+I) D^{-1/2}`
/// with `D = diag(deg) + I`. Eigenvalues lie in `[0, 2]`; exactly symmetric
/// by construction (only the upper triangle is computed, then mirrored).
pub fn normalized_laplacian(g: &Graph) -> Mat {
    let n = g.n();
    let deg = g.degrees();
    let inv_sqrt: Vec<f64> = deg.iter().map(|&d| 1.0 / ((d as f64 + 1.0).sqrt())).collect();
    let mut l = Mat::zeros((n, n));
    // Diagonal: 1 - 1/d_i (self-loop contribution of A+I).
    for i in 0..n {
        l[[i, i]] = 1.0 - inv_sqrt[i] * inv_sqrt[i];
    }
    for &(u, v) in g.edges() {
        let (u, v) = (u as usize, v as usize);
        let w = -inv_sqrt[u] * inv_sqrt[v];
        l[[u, v]] = w;
        l[[v, u]] = w;
    }
    l
}

/// Builds the low-pass filter `I - L/2` and high-pass filter `L/2` from the
/// self-loop-augmented normalized Laplacian of `g`. Frequency responses are
/// `1 - lambda/2` and `lambda/2` respectively.
pub fn filter_matrices(g: &Graph) -> FilterPair {
    let l = normalized_laplacian(g);
    let n = g.n();
    let mut a_low = Mat::zeros((n, n));
    let mut a_high = Mat::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let half = 0.5 * l[[i, j]];
            a_high[[i, j]] = half;
            a_low[[i, j]] = if i == j { 1.0 - half } else { -half };
        }
    }
    FilterPair {
        a_low_sym: a_low,
        a_high_sym: a_high,
    }
}

/// How the edge modification budget of [`perturb_and_permute`] is spent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbMode {
    /// Half deletions (rounded up), half additions (rounded down).
    Mixed,
    /// All modifications are deletions.
    DeleteOnly,
}

/// Perturbation level and RNG seed for benchmark target generation.
#[derive(Debug, Clone, Copy)]
pub struct PerturbationSpec {
    /// Fraction of edges to modify, in `[0, 1]`.
    pub p: f64,
    pub seed: u64,
    pub mode: PerturbMode,
}

impl PerturbationSpec {
    pub fn new(p: f64, seed: u64) -> Self {
        PerturbationSpec {
            p,
            seed,
            mode: PerturbMode::Mixed,
        }
    }
}

/// Generates a perturbed-and-permuted target graph from `g`.
///
/// `floor(p * |E|)` edge slots are modified (deletions of existing edges and
/// additions of absent pairs, split per [`PerturbMode`]), then a uniformly
/// random relabeling is applied. Returns the target graph and the ground
/// truth mapping `perm` with source node `i` corresponding to target node
/// `perm[i]`. Features, if present, ride along through the permutation.
pub fn perturb_and_permute(g: &Graph, spec: &PerturbationSpec) -> Result<(Graph, Vec<usize>)> {
    if !(0.0..=1.0).contains(&spec.p) {
        return Err(Error::invalid(format!(
            "perturbation level {} outside [0, 1]",
            spec.p
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let n = g.n();
    let m_edges = g.num_edges();
    let budget = (spec.p * m_edges as f64).floor() as usize;
    let (n_delete, n_add) = match spec.mode {
        PerturbMode::Mixed => (budget.div_ceil(2), budget / 2),
        PerturbMode::DeleteOnly => (budget, 0),
    };

    // Deletions: partial Fisher-Yates over the edge indices.
    let mut order: Vec<usize> = (0..m_edges).collect();
    for i in 0..n_delete.min(m_edges) {
        let j = rng.random_range(i..m_edges);
        order.swap(i, j);
    }
    let mut deleted = vec![false; m_edges];
    for &idx in order.iter().take(n_delete.min(m_edges)) {
        deleted[idx] = true;
    }

    let mut kept: Vec<(usize, usize)> = g
        .edges()
        .iter()
        .enumerate()
        .filter(|(i, _)| !deleted[*i])
        .map(|(_, &(u, v))| (u as usize, v as usize))
        .collect();

    // Additions: uniformly-chosen pairs absent from the original edge set.
    let total_pairs = n * (n - 1) / 2;
    let absent = total_pairs - m_edges;
    let n_add = if absent == 0 {
        if n_add > 0 {
            log::warn!("graph is complete; skipping {n_add} edge additions");
        }
        0
    } else if n_add > absent {
        log::warn!("only {absent} absent pairs available; clamping additions from {n_add}");
        absent
    } else {
        n_add
    };
    let mut added: Vec<(usize, usize)> = Vec::with_capacity(n_add);
    let mut misses = 0usize;
    while added.len() < n_add {
        let u = rng.random_range(0..n);
        let v = rng.random_range(0..n);
        let pair = if u < v { (u, v) } else { (v, u) };
        if u == v || g.has_edge(u, v) || added.contains(&pair) {
            misses += 1;
            // Dense graphs can starve rejection sampling; fall back to an
            // explicit enumeration of the remaining absent pairs.
            if misses > 1000 + 50 * n_add {
                let mut pool: Vec<(usize, usize)> = Vec::with_capacity(absent - added.len());
                for a in 0..n {
                    for b in (a + 1)..n {
                        if !g.has_edge(a, b) && !added.contains(&(a, b)) {
                            pool.push((a, b));
                        }
                    }
                }
                while added.len() < n_add {
                    let i = rng.random_range(0..pool.len());
                    added.push(pool.swap_remove(i));
                }
                break;
            }
            continue;
        }
        added.push(pair);
    }
    kept.extend(added);

    // Uniform random relabeling; perm[i] is the target index of source i.
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);

    let relabeled = kept.into_iter().map(|(u, v)| (perm[u], perm[v]));
    let mut target = Graph::new(n, relabeled)?;
    if let Some(x) = g.features() {
        let mut moved = Mat::zeros((n, x.ncols()));
        for i in 0..n {
            moved.row_mut(perm[i]).assign(&x.row(i));
        }
        target = target.with_features(moved)?;
    }
    Ok((target, perm))
}

/// The seven structural node statistics, one row per node, before
/// normalization. Column order: degree, clustering coefficient, mean
/// neighbor degree, mean neighbor clustering, edges inside the ego network,
/// edges leaving the ego network, distinct outside neighbors of the ego
/// network. The ego network of `v` is `{v} + N(v)`.
pub fn netsimile_features_raw(g: &Graph) -> Mat {
    let n = g.n();
    let adj = g.adjacency_lists();
    let deg: Vec<f64> = adj.iter().map(|a| a.len() as f64).collect();

    // Triangles through each node (edge count among its neighbors).
    let mut tri = vec![0usize; n];
    for v in 0..n {
        let nbrs = &adj[v];
        let mut count = 0usize;
        for (i, &a) in nbrs.iter().enumerate() {
            for &b in &nbrs[i + 1..] {
                if g.has_edge(a as usize, b as usize) {
                    count += 1;
                }
            }
        }
        tri[v] = count;
    }
    let clust: Vec<f64> = (0..n)
        .map(|v| {
            let d = deg[v];
            if d < 2.0 {
                0.0
            } else {
                2.0 * tri[v] as f64 / (d * (d - 1.0))
            }
        })
        .collect();

    let mut out = Mat::zeros((n, 7));
    let mut in_ego = vec![false; n];
    for v in 0..n {
        let nbrs = &adj[v];
        let d = deg[v];
        let (avg_nbr_deg, avg_nbr_clust) = if nbrs.is_empty() {
            (0.0, 0.0)
        } else {
            let sd: f64 = nbrs.iter().map(|&u| deg[u as usize]).sum();
            let sc: f64 = nbrs.iter().map(|&u| clust[u as usize]).sum();
            (sd / d, sc / d)
        };

        // Ego-network quantities.
        in_ego[v] = true;
        for &u in nbrs {
            in_ego[u as usize] = true;
        }
        let ego_edges = d + tri[v] as f64;
        let degree_sum: f64 = d + nbrs.iter().map(|&u| deg[u as usize]).sum::<f64>();
        let ego_out = degree_sum - 2.0 * ego_edges;
        let mut outside: Vec<u32> = Vec::new();
        for &u in nbrs.iter().chain(std::iter::once(&(v as u32))) {
            for &w in &adj[u as usize] {
                if !in_ego[w as usize] {
                    outside.push(w);
                }
            }
        }
        outside.sort_unstable();
        outside.dedup();
        let ego_nbrs = outside.len() as f64;
        in_ego[v] = false;
        for &u in nbrs {
            in_ego[u as usize] = false;
        }

        out[[v, 0]] = d;
        out[[v, 1]] = clust[v];
        out[[v, 2]] = avg_nbr_deg;
        out[[v, 3]] = avg_nbr_clust;
        out[[v, 4]] = ego_edges;
        out[[v, 5]] = ego_out;
        out[[v, 6]] = ego_nbrs;
    }
    out
}

/// [`netsimile_features_raw`] with per-column z-score normalization
/// (population statistics; zero-variance columns map to all zeros).
pub fn netsimile_features(g: &Graph) -> Mat {
    let mut f = netsimile_features_raw(g);
    let n = f.nrows() as f64;
    for j in 0..f.ncols() {
        let mut col = f.column_mut(j);
        let mean = col.sum() / n;
        let var = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        let sd = var.sqrt();
        if sd < 1e-12 {
            col.fill(0.0);
        } else {
            col.mapv_inplace(|x| (x - mean) / sd);
        }
    }
    f
}

/// Builds an undirected kNN graph over embedding rows: each row is connected
/// to its `k` most cosine-similar other rows (ties broken by lower row
/// index), the union is symmetrized, and the embeddings become node features.
pub fn knn_graph(embeddings: &Mat, k: usize) -> Result<Graph> {
    let m = embeddings.nrows();
    if m == 0 {
        return Err(Error::invalid("empty embedding matrix"));
    }
    if k == 0 || k >= m {
        return Err(Error::invalid(format!(
            "k = {k} must satisfy 1 <= k < {m} (number of rows)"
        )));
    }
    let mut norms = Vec::with_capacity(m);
    for (i, row) in embeddings.rows().into_iter().enumerate() {
        let norm = row.dot(&row).sqrt();
        if norm == 0.0 {
            return Err(Error::invalid(format!(
                "row {i} is all zeros; cosine similarity undefined"
            )));
        }
        norms.push(norm);
    }
    let mut edges = Vec::with_capacity(m * k);
    let mut sims: Vec<(f64, usize)> = Vec::with_capacity(m - 1);
    for i in 0..m {
        sims.clear();
        let ri = embeddings.row(i);
        for j in 0..m {
            if j == i {
                continue;
            }
            let s = ri.dot(&embeddings.row(j)) / (norms[i] * norms[j]);
            sims.push((s, j));
        }
        sims.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for &(_, j) in sims.iter().take(k) {
            edges.push((i, j));
        }
    }
    Graph::new(m, edges)?.with_features(embeddings.clone())
}

/// Averages rows sharing a label. Returns one row per distinct label in
/// sorted label order, alongside that order.
pub fn class_mean_rows(vectors: &Mat, labels: &[String]) -> Result<(Mat, Vec<String>)> {
    if vectors.nrows() == 0 {
        return Err(Error::invalid("empty input matrix"));
    }
    if labels.len() != vectors.nrows() {
        return Err(Error::invalid(format!(
            "{} labels for {} rows",
            labels.len(),
            vectors.nrows()
        )));
    }
    let mut classes: Vec<String> = labels.to_vec();
    classes.sort();
    classes.dedup();
    let index = |l: &String| classes.binary_search(l).expect("label present");
    let mut sums = Mat::zeros((classes.len(), vectors.ncols()));
    let mut counts = vec![0usize; classes.len()];
    for (row, label) in vectors.rows().into_iter().zip(labels) {
        let c = index(label);
        let mut acc = sums.row_mut(c);
        acc += &row;
        counts[c] += 1;
    }
    for (c, &count) in counts.iter().enumerate() {
        let mut row = sums.row_mut(c);
        row.mapv_inplace(|x| x / count as f64);
    }
    Ok((sums, classes))
}

/// Uniform random simple graph with exactly `m` edges (G(n, m) model).
/// Deterministic given the seed; used by the benchmark harness and tests.
pub fn random_gnm_graph(n: usize, m: usize, seed: u64) -> Result<Graph> {
    let total = n * (n - 1) / 2;
    if m > total {
        return Err(Error::invalid(format!(
            "cannot place {m} edges in a {n}-node simple graph (max {total})"
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut chosen = std::collections::HashSet::with_capacity(m * 2);
    let mut edges = Vec::with_capacity(m);
    while edges.len() < m {
        let u = rng.random_range(0..n);
        let v = rng.random_range(0..n);
        if u == v {
            continue;
        }
        let pair = if u < v { (u, v) } else { (v, u) };
        if chosen.insert(pair) {
            edges.push(pair);
        }
    }
    Graph::new(n, edges)
}

/// Ring graph with `n` nodes, node `i` adjacent to `i +/- 1 (mod n)`.
pub fn ring_graph(n: usize) -> Graph {
    assert!(n >= 3, "ring needs at least 3 nodes");
    Graph::new(n, (0..n).map(|i| (i, (i + 1) % n))).expect("ring edges are valid")
}
