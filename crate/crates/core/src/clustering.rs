//! HDBSCAN over a single point-cloud frame.
//!
//! Pipeline: core distances → mutual-reachability graph → Prim MST →
//! single-linkage hierarchy → condensed tree (clusters die below the minimum
//! size) → excess-of-mass selection → epsilon merge → labels.
//!
//! Edges of exactly equal weight are merged as one multi-way hierarchy node,
//! so the cluster tree depends only on the point set, not on input order.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data_model::Point3;

pub const NOISE: i32 = -1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HdbscanParams {
    pub min_cluster_size: usize,
    pub min_samples: usize,
    /// Clusters born at or below this distance (meters) are merged into their parent.
    pub cluster_selection_epsilon: f64,
}

impl HdbscanParams {
    /// `min_samples` defaults to `min_cluster_size`, epsilon to 0.
    pub fn new(min_cluster_size: usize) -> Self {
        Self {
            min_cluster_size,
            min_samples: min_cluster_size,
            cluster_selection_epsilon: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.min_cluster_size < 2 {
            return Err("min_cluster_size must be at least 2".into());
        }
        if self.min_samples < 1 {
            return Err("min_samples must be at least 1".into());
        }
        if !(self.cluster_selection_epsilon >= 0.0) {
            return Err("cluster_selection_epsilon must be non-negative".into());
        }
        Ok(())
    }
}

impl Default for HdbscanParams {
    fn default() -> Self {
        Self::new(5)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClusterLabeling {
    pub labels: Vec<i32>,
    pub cluster_count: usize,
}

impl ClusterLabeling {
    fn all_noise(n: usize) -> Self {
        Self {
            labels: vec![NOISE; n],
            cluster_count: 0,
        }
    }

    /// Point indices of each cluster, in label order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.cluster_count];
        for (i, &l) in self.labels.iter().enumerate() {
            if l >= 0 {
                out[l as usize].push(i);
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MstEdge {
    pub i: usize,
    pub j: usize,
    pub weight: f64,
}

/// Symmetric dense `n × n` distance matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }
}

fn pairwise(points: &[Point3]) -> DistanceMatrix {
    let n = points.len();
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = points[i].dist(points[j]);
            data[i * n + j] = d;
            data[j * n + i] = d;
        }
    }
    DistanceMatrix { n, data }
}

/// Distance from each point to its `min_samples`-th nearest neighbour, the
/// point itself counting as the first. `+∞` when fewer points exist.
pub fn core_distances(points: &[Point3], min_samples: usize) -> Vec<f64> {
    core_from_pairwise(&pairwise(points), min_samples)
}

fn core_from_pairwise(dist: &DistanceMatrix, min_samples: usize) -> Vec<f64> {
    let n = dist.len();
    if min_samples == 0 {
        return vec![0.0; n];
    }
    let k = min_samples - 1;
    let mut row = Vec::with_capacity(n);
    (0..n)
        .map(|i| {
            if k >= n {
                return f64::INFINITY;
            }
            row.clear();
            row.extend((0..n).map(|j| dist.get(i, j)));
            let (_, kth, _) = row.select_nth_unstable_by(k, f64::total_cmp);
            *kth
        })
        .collect()
}

/// `d_mr(a, b) = max(core(a), core(b), ‖a − b‖)`, zero on the diagonal.
pub fn mutual_reachability(points: &[Point3], cores: &[f64]) -> DistanceMatrix {
    mutual_from_pairwise(pairwise(points), cores)
}

fn mutual_from_pairwise(mut dist: DistanceMatrix, cores: &[f64]) -> DistanceMatrix {
    let n = dist.n;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let v = &mut dist.data[i * n + j];
                *v = v.max(cores[i]).max(cores[j]);
            }
        }
    }
    dist
}

/// Prim's algorithm over the dense graph. Among equal weights the edge with
/// the smallest `(min(i,j), max(i,j))` pair wins.
pub fn build_mst(graph: &DistanceMatrix) -> Vec<MstEdge> {
    let n = graph.len();
    if n <= 1 {
        return Vec::new();
    }
    let key = |a: usize, b: usize| (a.min(b), a.max(b));
    let mut in_tree = vec![false; n];
    let mut best_w = vec![f64::INFINITY; n];
    let mut best_from = vec![usize::MAX; n];
    let mut edges = Vec::with_capacity(n - 1);
    in_tree[0] = true;
    for v in 1..n {
        best_w[v] = graph.get(0, v);
        best_from[v] = 0;
    }
    for _ in 1..n {
        let mut pick: Option<usize> = None;
        for v in (0..n).filter(|&v| !in_tree[v]) {
            pick = match pick {
                None => Some(v),
                Some(u) => {
                    let better = best_w[v] < best_w[u]
                        || (best_w[v] == best_w[u] && key(best_from[v], v) < key(best_from[u], u));
                    Some(if better { v } else { u })
                }
            };
        }
        let v = pick.expect("a vertex remains outside the tree");
        in_tree[v] = true;
        let (i, j) = key(best_from[v], v);
        edges.push(MstEdge {
            i,
            j,
            weight: best_w[v],
        });
        for u in (0..n).filter(|&u| !in_tree[u]) {
            let w = graph.get(v, u);
            if w < best_w[u] || (w == best_w[u] && key(v, u) < key(best_from[u], u)) {
                best_w[u] = w;
                best_from[u] = v;
            }
        }
    }
    edges
}

// ---------------------------------------------------------------------------
// Hierarchy
// ---------------------------------------------------------------------------

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Attaches the larger index under the smaller so roots are deterministic.
    fn union(&mut self, a: usize, b: usize) -> usize {
        let (keep, drop) = (a.min(b), a.max(b));
        self.parent[drop] = keep;
        keep
    }
}

/// Single-linkage hierarchy node. Leaves `0..n` are points.
struct HierNode {
    children: Vec<usize>,
    dist: f64,
    size: usize,
}

fn single_linkage(n: usize, mst: &[MstEdge]) -> Vec<HierNode> {
    let mut nodes: Vec<HierNode> = (0..n)
        .map(|_| HierNode {
            children: Vec::new(),
            dist: 0.0,
            size: 1,
        })
        .collect();
    let mut edges = mst.to_vec();
    edges.sort_by(|a, b| a.weight.total_cmp(&b.weight).then((a.i, a.j).cmp(&(b.i, b.j))));
    let mut uf = UnionFind::new(n);
    let mut node_of: Vec<usize> = (0..n).collect();
    let mut k = 0;
    while k < edges.len() {
        let w = edges[k].weight;
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        while k < edges.len() && edges[k].weight == w {
            let ra = uf.find(edges[k].i);
            let rb = uf.find(edges[k].j);
            k += 1;
            if ra == rb {
                continue;
            }
            let ga = groups.remove(&ra).unwrap_or_else(|| vec![node_of[ra]]);
            let gb = groups.remove(&rb).unwrap_or_else(|| vec![node_of[rb]]);
            let root = uf.union(ra, rb);
            let mut merged = ga;
            merged.extend(gb);
            groups.insert(root, merged);
        }
        for (root, mut children) in groups {
            children.sort_unstable();
            let size = children.iter().map(|&c| nodes[c].size).sum();
            node_of[root] = nodes.len();
            nodes.push(HierNode {
                children,
                dist: w,
                size,
            });
        }
    }
    nodes
}

/// Condensed-tree cluster.
struct Cluster {
    parent: Option<usize>,
    birth_dist: f64,
    children: Vec<usize>,
    /// Individual `(λ − λ_birth) · count` contributions, summed sorted.
    contributions: Vec<f64>,
}

impl Cluster {
    fn stability(&self) -> f64 {
        let mut c = self.contributions.clone();
        c.sort_by(f64::total_cmp);
        c.iter().sum()
    }
}

const MIN_DIST: f64 = 1e-12;

fn lambda(d: f64) -> f64 {
    if d.is_infinite() {
        0.0
    } else {
        1.0 / d.max(MIN_DIST)
    }
}

struct CondensedTree {
    clusters: Vec<Cluster>,
    /// Cluster each point fell out of.
    fell_from: Vec<usize>,
}

fn leaves_under(nodes: &[HierNode], root: usize, n: usize, out: &mut Vec<usize>) {
    let mut stack = vec![root];
    while let Some(v) = stack.pop() {
        if v < n {
            out.push(v);
        } else {
            stack.extend(&nodes[v].children);
        }
    }
}

fn condense(nodes: &[HierNode], n: usize, min_cluster_size: usize) -> CondensedTree {
    let mut clusters = vec![Cluster {
        parent: None,
        birth_dist: f64::INFINITY,
        children: Vec::new(),
        contributions: Vec::new(),
    }];
    let mut fell_from = vec![usize::MAX; n];
    let root = nodes.len() - 1;
    // (hierarchy node, condensed cluster it currently belongs to)
    let mut work = vec![(root, 0usize)];
    let mut scratch = Vec::new();
    while let Some((node, cid)) = work.pop() {
        if node < n {
            fell_from[node] = cid;
            continue;
        }
        let h = &nodes[node];
        let lam = lambda(h.dist);
        let lam_birth = lambda(clusters[cid].birth_dist);
        let big: Vec<usize> = h
            .children
            .iter()
            .copied()
            .filter(|&c| nodes[c].size >= min_cluster_size)
            .collect();
        let mut fall_out = |child: usize, clusters: &mut Vec<Cluster>| {
            scratch.clear();
            leaves_under(nodes, child, n, &mut scratch);
            for &p in &scratch {
                fell_from[p] = cid;
            }
            clusters[cid]
                .contributions
                .push((lam - lam_birth) * scratch.len() as f64);
        };
        match big.len() {
            0 => {
                for &c in &h.children {
                    fall_out(c, &mut clusters);
                }
            }
            1 => {
                for &c in h.children.iter().filter(|&&c| c != big[0]) {
                    fall_out(c, &mut clusters);
                }
                work.push((big[0], cid));
            }
            _ => {
                for &c in h.children.iter().filter(|c| !big.contains(c)) {
                    fall_out(c, &mut clusters);
                }
                let split: usize = big.iter().map(|&c| nodes[c].size).sum();
                clusters[cid]
                    .contributions
                    .push((lam - lam_birth) * split as f64);
                for &c in &big {
                    let id = clusters.len();
                    clusters.push(Cluster {
                        parent: Some(cid),
                        birth_dist: h.dist,
                        children: Vec::new(),
                        contributions: Vec::new(),
                    });
                    clusters[cid].children.push(id);
                    work.push((c, id));
                }
            }
        }
    }
    CondensedTree {
        clusters,
        fell_from,
    }
}

/// Excess-of-mass selection; on equal stability the parent (lower id) wins.
fn select_eom(tree: &CondensedTree) -> Vec<bool> {
    let m = tree.clusters.len();
    let mut selected = vec![false; m];
    let mut best = vec![0.0; m];
    // Children always carry larger ids than their parent.
    for c in (0..m).rev() {
        let own = tree.clusters[c].stability();
        let kids = &tree.clusters[c].children;
        if kids.is_empty() {
            selected[c] = true;
            best[c] = own;
            continue;
        }
        let mut sub: Vec<f64> = kids.iter().map(|&k| best[k]).collect();
        sub.sort_by(f64::total_cmp);
        let sub_total: f64 = sub.iter().sum();
        if own >= sub_total {
            selected[c] = true;
            best[c] = own;
            let mut stack = kids.clone();
            while let Some(d) = stack.pop() {
                selected[d] = false;
                stack.extend(&tree.clusters[d].children);
            }
        } else {
            best[c] = sub_total;
        }
    }
    selected
}

fn apply_epsilon(tree: &CondensedTree, selected: &[bool], epsilon: f64) -> Vec<bool> {
    let m = tree.clusters.len();
    let mut out = vec![false; m];
    for c in (0..m).filter(|&c| selected[c]) {
        let mut cur = c;
        while tree.clusters[cur].birth_dist <= epsilon {
            match tree.clusters[cur].parent {
                Some(p) => cur = p,
                None => break,
            }
        }
        out[cur] = true;
    }
    // Keep only the topmost of any nested selections.
    for c in 0..m {
        if out[c] {
            let mut anc = tree.clusters[c].parent;
            while let Some(a) = anc {
                if out[a] {
                    out[c] = false;
                    break;
                }
                anc = tree.clusters[a].parent;
            }
        }
    }
    out
}

/// Clusters one frame. Labels are `-1` for noise and `0..C` otherwise,
/// numbered by first appearance in point order.
pub fn hdbscan(points: &[Point3], params: &HdbscanParams) -> ClusterLabeling {
    let n = points.len();
    if n < params.min_cluster_size.max(2) {
        return ClusterLabeling::all_noise(n);
    }
    let dist = pairwise(points);
    let cores = core_from_pairwise(&dist, params.min_samples);
    if cores.iter().any(|c| c.is_infinite()) {
        return ClusterLabeling::all_noise(n);
    }
    let graph = mutual_from_pairwise(dist, &cores);
    let mst = build_mst(&graph);
    let nodes = single_linkage(n, &mst);
    let tree = condense(&nodes, n, params.min_cluster_size);
    let selected = apply_epsilon(&tree, &select_eom(&tree), params.cluster_selection_epsilon);

    let mut renumber: BTreeMap<usize, i32> = BTreeMap::new();
    let mut labels = Vec::with_capacity(n);
    for p in 0..n {
        let mut cur = Some(tree.fell_from[p]);
        let mut label = NOISE;
        while let Some(c) = cur {
            if selected[c] {
                let next = renumber.len() as i32;
                label = *renumber.entry(c).or_insert(next);
                break;
            }
            cur = tree.clusters[c].parent;
        }
        labels.push(label);
    }
    ClusterLabeling {
        labels,
        cluster_count: renumber.len(),
    }
}

/// Adjusted Rand index between two labelings (noise treated as its own label).
pub fn adjusted_rand_index(a: &[i32], b: &[i32]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    if n < 2 {
        return 1.0;
    }
    let mut table: BTreeMap<(i32, i32), u64> = BTreeMap::new();
    let mut rows: BTreeMap<i32, u64> = BTreeMap::new();
    let mut cols: BTreeMap<i32, u64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let c2 = |v: u64| (v * v.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = table.values().map(|&v| c2(v)).sum();
    let sa: f64 = rows.values().map(|&v| c2(v)).sum();
    let sb: f64 = cols.values().map(|&v| c2(v)).sum();
    let expected = sa * sb / c2(n as u64);
    let max = 0.5 * (sa + sb);
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn line(xs: &[f64]) -> Vec<Point3> {
        xs.iter().map(|&x| Point3::new(x, 0.0, 0.0)).collect()
    }

    #[test]
    fn core_distances_by_hand() {
        assert_eq!(core_distances(&line(&[0.0, 1.0, 10.0]), 2), vec![1.0, 1.0, 9.0]);
        assert_eq!(core_distances(&line(&[5.0]), 2), vec![f64::INFINITY]);
        let same = vec![Point3::new(1.0, 2.0, 3.0); 5];
        assert_eq!(core_distances(&same, 3), vec![0.0; 5]);
    }

    #[test]
    fn mutual_reachability_by_hand() {
        let pts = line(&[0.0, 1.0, 10.0]);
        let mr = mutual_reachability(&pts, &core_distances(&pts, 2));
        assert_eq!(mr.get(0, 1), 1.0);
        assert_eq!(mr.get(1, 2), 9.0);
        assert_eq!(mr.get(0, 2), 10.0);
        assert_eq!(mr.get(2, 2), 0.0);

        let same = vec![Point3::new(1.0, 1.0, 1.0); 4];
        let mr = mutual_reachability(&same, &core_distances(&same, 2));
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(mr.get(i, j), 0.0);
            }
        }
    }

    #[test]
    fn mst_by_hand() {
        let pts = line(&[0.0, 1.0, 10.0]);
        let mst = build_mst(&mutual_reachability(&pts, &core_distances(&pts, 2)));
        assert_eq!(
            mst,
            vec![
                MstEdge { i: 0, j: 1, weight: 1.0 },
                MstEdge { i: 1, j: 2, weight: 9.0 }
            ]
        );
        let one = line(&[3.0]);
        assert!(build_mst(&mutual_reachability(&one, &core_distances(&one, 1))).is_empty());
    }

    /// Minimum spanning-tree weight by trying every (n−1)-edge subset.
    fn brute_force_mst_weight(g: &DistanceMatrix) -> f64 {
        let n = g.len();
        let all: Vec<(usize, usize)> = (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).collect();
        let mut best = f64::INFINITY;
        let m = all.len();
        for mask in 0u32..(1 << m) {
            if mask.count_ones() as usize != n - 1 {
                continue;
            }
            let mut uf = UnionFind::new(n);
            let mut ok = true;
            let mut w = 0.0;
            for (k, &(i, j)) in all.iter().enumerate() {
                if mask & (1 << k) != 0 {
                    let (a, b) = (uf.find(i), uf.find(j));
                    if a == b {
                        ok = false;
                        break;
                    }
                    uf.union(a, b);
                    w += g.get(i, j);
                }
            }
            if ok {
                best = best.min(w);
            }
        }
        best
    }

    #[test]
    fn mst_weight_matches_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for trial in 0..30 {
            let n = 2 + trial % 6;
            let pts: Vec<Point3> = (0..n)
                .map(|_| Point3::new(rng.random_range(0.0..5.0), rng.random_range(0.0..5.0), rng.random_range(0.0..5.0)))
                .collect();
            let ms = 1 + trial % 3;
            let g = mutual_reachability(&pts, &core_distances(&pts, ms.min(n)));
            let mst = build_mst(&g);
            assert_eq!(mst.len(), n - 1);
            let w: f64 = mst.iter().map(|e| e.weight).sum();
            let brute = brute_force_mst_weight(&g);
            assert!((w - brute).abs() < 1e-9, "n={n}: {w} vs {brute}");
        }
    }

    fn blob(rng: &mut ChaCha8Rng, center: Point3, sigma: f64, count: usize) -> Vec<Point3> {
        let normal = Normal::new(0.0, sigma).unwrap();
        (0..count)
            .map(|_| center + Point3::new(normal.sample(rng), normal.sample(rng), normal.sample(rng)))
            .collect()
    }

    #[test]
    fn two_blobs_and_an_outlier() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut pts = blob(&mut rng, Point3::new(0.0, 0.0, 0.0), 0.05, 30);
            pts.extend(blob(&mut rng, Point3::new(10.0, 0.0, 0.0), 0.05, 30));
            pts.push(Point3::new(50.0, 0.0, 0.0));
            let mut truth = vec![0; 30];
            truth.extend(vec![1; 30]);
            truth.push(NOISE);
            let got = hdbscan(&pts, &HdbscanParams::new(5));
            assert_eq!(got.cluster_count, 2, "seed {seed}");
            assert_eq!(got.labels, truth, "seed {seed}");
        }
    }

    #[test]
    fn too_few_points_is_all_noise() {
        let got = hdbscan(&line(&[0.0, 0.1, 0.2]), &HdbscanParams::new(5));
        assert_eq!(got, ClusterLabeling { labels: vec![NOISE; 3], cluster_count: 0 });
        assert_eq!(hdbscan(&[], &HdbscanParams::new(5)).cluster_count, 0);
    }

    #[test]
    fn single_blob_is_one_cluster_without_noise() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let pts = blob(&mut rng, Point3::new(3.0, -2.0, 7.0), 0.1, 20);
            let got = hdbscan(&pts, &HdbscanParams::new(5));
            assert_eq!(got.cluster_count, 1, "seed {seed}");
            assert!(got.labels.iter().all(|&l| l == 0), "seed {seed}");
        }
    }

    #[test]
    fn ari_basics() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[5, 5, 2, 2]), 1.0);
        assert!(adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]) < 0.5);
    }

    fn same_partition(a: &[i32], b: &[i32]) -> bool {
        let mut map: BTreeMap<i32, i32> = BTreeMap::new();
        let mut back: BTreeMap<i32, i32> = BTreeMap::new();
        for (&x, &y) in a.iter().zip(b) {
            if (x == NOISE) != (y == NOISE) {
                return false;
            }
            if *map.entry(x).or_insert(y) != y || *back.entry(y).or_insert(x) != x {
                return false;
            }
        }
        true
    }

    fn cloud() -> impl Strategy<Value = Vec<Point3>> {
        prop::collection::vec(
            (0usize..3, -1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0)
                .prop_map(|(c, x, y, z)| Point3::new(c as f64 * 6.0 + x, y, z)),
            0..40,
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn labeling_invariants(pts in cloud(), mc in 2usize..7) {
            let params = HdbscanParams::new(mc);
            let got = hdbscan(&pts, &params);
            prop_assert_eq!(got.labels.len(), pts.len());
            let mut counts = vec![0usize; got.cluster_count];
            let mut next = 0;
            for &l in &got.labels {
                prop_assert!(l >= NOISE && l < got.cluster_count as i32);
                if l >= 0 {
                    // first-appearance numbering
                    prop_assert!(l <= next);
                    if l == next { next += 1; }
                    counts[l as usize] += 1;
                }
            }
            prop_assert!(counts.iter().all(|&c| c >= mc));
        }

        #[test]
        fn shuffling_points_preserves_partition(pts in cloud(), seed in any::<u64>()) {
            let params = HdbscanParams::new(4);
            let base = hdbscan(&pts, &params);
            let mut order: Vec<usize> = (0..pts.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in (1..order.len()).rev() {
                order.swap(i, rng.random_range(0..=i));
            }
            let shuffled: Vec<Point3> = order.iter().map(|&i| pts[i]).collect();
            let got = hdbscan(&shuffled, &params);
            let mut unshuffled = vec![0; pts.len()];
            for (k, &i) in order.iter().enumerate() {
                unshuffled[i] = got.labels[k];
            }
            prop_assert!(same_partition(&base.labels, &unshuffled));
        }

        #[test]
        fn larger_epsilon_only_coarsens(pts in cloud(), e1 in 0.0f64..3.0, extra in 0.0f64..8.0) {
            let fine = hdbscan(&pts, &HdbscanParams { cluster_selection_epsilon: e1, ..HdbscanParams::new(4) });
            let coarse = hdbscan(&pts, &HdbscanParams { cluster_selection_epsilon: e1 + extra, ..HdbscanParams::new(4) });
            let mut map: BTreeMap<i32, i32> = BTreeMap::new();
            for (&f, &c) in fine.labels.iter().zip(&coarse.labels) {
                if f >= 0 {
                    prop_assert!(c >= 0);
                    prop_assert_eq!(*map.entry(f).or_insert(c), c);
                }
            }
        }
    }
}
