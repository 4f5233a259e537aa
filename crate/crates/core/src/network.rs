//! Network topology and consensus weights.
//!
//! The consensus phase of the distributed test multiplies estimate vectors by
//! a weight matrix `W` that must be supported on the graph, doubly
//! stochastic, and contracting (`R(W - J/L) < 1`). Metropolis weights give a
//! closed-form matrix satisfying all three on any connected graph. The
//! ergodic coefficient of `W` (and of its powers) governs how fast
//! disagreement decays and feeds both the consensus-duration bound and the
//! asymptotic-optimality sufficient conditions.

use std::collections::BTreeSet;

use crate::error::{Error, Result};

/// Undirected, connected sensor network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkGraph {
    sensors: usize,
    edges: BTreeSet<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
}

impl NetworkGraph {
    /// Builds a graph from unordered sensor pairs. Self-loops and
    /// out-of-range endpoints are rejected; duplicates collapse. The graph
    /// must be connected.
    pub fn new(
        sensors: usize,
        edge_list: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        if sensors == 0 {
            return Err(Error::Config("graph needs at least one sensor".into()));
        }
        let mut edges = BTreeSet::new();
        for (a, b) in edge_list {
            if a == b || a >= sensors || b >= sensors {
                return Err(Error::InvalidEdge { from: a, to: b });
            }
            edges.insert((a.min(b), a.max(b)));
        }
        let mut adjacency = vec![Vec::new(); sensors];
        for &(a, b) in &edges {
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        for nbrs in &mut adjacency {
            nbrs.sort_unstable();
        }
        let g = Self {
            sensors,
            edges,
            adjacency,
        };
        if !g.is_connected() {
            return Err(Error::Disconnected);
        }
        Ok(g)
    }

    pub fn sensors(&self) -> usize {
        self.sensors
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn neighbors(&self, sensor: usize) -> &[usize] {
        &self.adjacency[sensor]
    }

    pub fn degree(&self, sensor: usize) -> usize {
        self.adjacency[sensor].len()
    }

    fn is_connected(&self) -> bool {
        self.bfs_distances(0).iter().all(|d| d.is_some())
    }

    fn bfs_distances(&self, root: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.sensors];
        dist[root] = Some(0);
        let mut queue = std::collections::VecDeque::from([root]);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].unwrap();
            for &v in &self.adjacency[u] {
                if dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    fn eccentricity(&self, root: usize) -> usize {
        self.bfs_distances(root)
            .iter()
            .map(|d| d.expect("graph is connected by construction"))
            .max()
            .unwrap_or(0)
    }

    /// Diameter: maximum shortest distance between any pair, by all-pairs BFS.
    pub fn diameter(&self) -> usize {
        (0..self.sensors)
            .map(|root| self.eccentricity(root))
            .max()
            .unwrap_or(0)
    }

    /// Radius: minimum eccentricity over roots. A breadth-first tree rooted
    /// at a center node attains this height, so it is also the minimum
    /// spanning-tree height.
    pub fn radius(&self) -> usize {
        (0..self.sensors)
            .map(|root| self.eccentricity(root))
            .min()
            .unwrap_or(0)
    }

    /// Parses the edge-list text format: a header line `L <count>` followed
    /// by one `a b` pair of 0-based indices per line. `#` starts a comment.
    pub fn from_edge_list_text(text: &str) -> Result<Self> {
        let mut sensors = None;
        let mut edges = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let (a, b) = (parts.next(), parts.next());
            if parts.next().is_some() {
                return Err(Error::Config(format!(
                    "line {}: expected two fields, got more",
                    lineno + 1
                )));
            }
            match (a, b) {
                (Some("L"), Some(count)) if sensors.is_none() => {
                    sensors = Some(count.parse::<usize>().map_err(|e| {
                        Error::Config(format!("line {}: bad sensor count: {e}", lineno + 1))
                    })?);
                }
                (Some(x), Some(y)) if sensors.is_some() => {
                    let parse = |s: &str| {
                        s.parse::<usize>().map_err(|e| {
                            Error::Config(format!("line {}: bad index: {e}", lineno + 1))
                        })
                    };
                    edges.push((parse(x)?, parse(y)?));
                }
                _ => {
                    return Err(Error::Config(format!(
                        "line {}: expected header `L <count>` before edges",
                        lineno + 1
                    )))
                }
            }
        }
        let sensors = sensors.ok_or_else(|| Error::Config("missing `L <count>` header".into()))?;
        Self::new(sensors, edges)
    }

    /// Renders the same edge-list text format that `from_edge_list_text` reads.
    pub fn to_edge_list_text(&self) -> String {
        let mut out = format!("L {}\n", self.sensors);
        for (a, b) in &self.edges {
            out.push_str(&format!("{a} {b}\n"));
        }
        out
    }
}

/// Dense square consensus weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    size: usize,
    w: Vec<f64>,
}

impl WeightMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let size = rows.len();
        if rows.iter().any(|r| r.len() != size) {
            return Err(Error::Config("weight matrix must be square".into()));
        }
        Ok(Self {
            size,
            w: rows.into_iter().flatten().collect(),
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.w[row * self.size + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.w[row * self.size..(row + 1) * self.size]
    }

    /// Dense matrix power by repeated multiplication.
    pub fn pow(&self, exponent: usize) -> WeightMatrix {
        let mut out = WeightMatrix::identity(self.size);
        for _ in 0..exponent {
            out = out.multiply(self);
        }
        out
    }

    fn identity(size: usize) -> WeightMatrix {
        let mut w = vec![0.0; size * size];
        for i in 0..size {
            w[i * size + i] = 1.0;
        }
        WeightMatrix { size, w }
    }

    fn multiply(&self, other: &WeightMatrix) -> WeightMatrix {
        let n = self.size;
        let mut w = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                let a = self.w[i * n + k];
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    w[i * n + j] += a * other.w[k * n + j];
                }
            }
        }
        WeightMatrix { size: n, w }
    }
}

/// Metropolis weights: `w(a, b) = 1 / (1 + max(deg a, deg b))` on edges, the
/// residual on the diagonal, zero elsewhere. Row- and column-stochastic with
/// the exact graph support, and contracting on every connected graph.
pub fn metropolis_weights(g: &NetworkGraph) -> WeightMatrix {
    let n = g.sensors();
    let mut w = vec![0.0; n * n];
    for a in 0..n {
        let mut off_diag = 0.0;
        for &b in g.neighbors(a) {
            let weight = 1.0 / (1.0 + g.degree(a).max(g.degree(b)) as f64);
            w[a * n + b] = weight;
            off_diag += weight;
        }
        w[a * n + a] = 1.0 - off_diag;
    }
    WeightMatrix { size: n, w }
}

/// Constraint report for a weight matrix against its graph.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightReport {
    /// Rows sum to one within 1e-12.
    pub row_ok: bool,
    /// Columns sum to one within 1e-12.
    pub col_ok: bool,
    /// Strictly positive exactly on `neighbors + self`, zero elsewhere.
    pub support_ok: bool,
    /// Spectral radius of `W - J/L` by power iteration.
    pub spectral_radius: f64,
    /// Power iteration converged within tolerance; when false,
    /// `spectral_radius` is the best available estimate.
    pub converged: bool,
}

impl WeightReport {
    pub fn all_ok(&self) -> bool {
        self.row_ok && self.col_ok && self.support_ok && self.spectral_radius < 1.0
    }
}

/// Checks the three consensus-convergence constraints.
pub fn validate_weights(w: &WeightMatrix, g: &NetworkGraph) -> WeightReport {
    let n = w.size();
    assert_eq!(n, g.sensors(), "matrix size must match the graph");
    let tol = 1e-12;

    let row_ok = (0..n).all(|i| ((0..n).map(|j| w.get(i, j)).sum::<f64>() - 1.0).abs() <= tol);
    let col_ok = (0..n).all(|j| ((0..n).map(|i| w.get(i, j)).sum::<f64>() - 1.0).abs() <= tol);
    let support_ok = (0..n).all(|i| {
        (0..n).all(|j| {
            let in_support = i == j || g.neighbors(i).binary_search(&j).is_ok();
            if in_support {
                w.get(i, j) > 0.0
            } else {
                w.get(i, j) == 0.0
            }
        })
    });

    // Deviation from the averaging projector.
    let mut dev = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            dev[i * n + j] = w.get(i, j) - 1.0 / n as f64;
        }
    }
    let (spectral_radius, converged) = spectral_radius_power_iteration(&dev, n, 1e-10, 10_000);

    WeightReport {
        row_ok,
        col_ok,
        support_ok,
        spectral_radius,
        converged,
    }
}

/// Spectral radius estimate by normalized power iteration. The start vector
/// is a fixed pseudo-random pattern so results are reproducible. Returns the
/// estimate and whether it stabilized within `tol` before the iteration cap.
pub fn spectral_radius_power_iteration(
    matrix: &[f64],
    n: usize,
    tol: f64,
    cap: usize,
) -> (f64, bool) {
    assert_eq!(matrix.len(), n * n);
    let mut x: Vec<f64> = (0..n)
        .map(|i| {
            // Small deterministic LCG keeps the start vector generic.
            let mixed = (i as u64)
                .wrapping_mul(6_364_136_223_846_793_005)
                .wrapping_add(1_442_695_040_888_963_407);
            0.5 + (mixed >> 11) as f64 / (1u64 << 53) as f64
        })
        .collect();
    normalize(&mut x);

    let mut estimate = 0.0;
    let mut stable = 0;
    for _ in 0..cap {
        let mut y = vec![0.0; n];
        for i in 0..n {
            let row = &matrix[i * n..(i + 1) * n];
            y[i] = row.iter().zip(&x).map(|(a, b)| a * b).sum();
        }
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-300 {
            return (0.0, true);
        }
        let next = norm; // ||A x|| with ||x|| = 1
        if (next - estimate).abs() <= tol * next.max(1.0) {
            stable += 1;
            if stable >= 3 {
                return (next, true);
            }
        } else {
            stable = 0;
        }
        estimate = next;
        x = y;
        normalize(&mut x);
    }
    (estimate, false)
}

fn normalize(x: &mut [f64]) {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in x.iter_mut() {
            *v /= norm;
        }
    }
}

/// Ergodic coefficient: minimum over row pairs of the overlap
/// `sum_k min(w(i, k), w(j, k))`. One minus this is the worst-case
/// contraction of row disagreement under left multiplication.
pub fn ergodic_coefficient(w: &WeightMatrix) -> f64 {
    let n = w.size();
    if n < 2 {
        return 1.0;
    }
    let mut eta = f64::INFINITY;
    for i in 0..n {
        for j in i + 1..n {
            let overlap: f64 = (0..n).map(|k| w.get(i, k).min(w.get(j, k))).sum();
            eta = eta.min(overlap);
        }
    }
    eta.clamp(0.0, 1.0)
}

/// Evaluation of the three sufficient conditions for the consensus phase not
/// to bottleneck the distributed test, plus the ergodic-coefficient sanity
/// check on connected graphs.
#[derive(Debug, Clone, PartialEq)]
pub struct CctConditionReport {
    /// Left side per hypothesis: `I(i) * |ln(max_j I(j))|`.
    pub lhs: Vec<f64>,
    /// `|ln(1 - eta(W^h))| / h`.
    pub rhs_i: f64,
    /// `|ln(1 - eta(W)^h)| / h`.
    pub rhs_ii: f64,
    /// `|ln(1 - eta(W))|`.
    pub rhs_iii: f64,
    /// Condition holds when every hypothesis' left side is strictly below
    /// the corresponding right side.
    pub holds_i: bool,
    pub holds_ii: bool,
    pub holds_iii: bool,
    pub eta_w: f64,
    pub eta_w_pow_radius: f64,
    pub radius: usize,
    /// `0 < eta(W^h) < 1`. On connected graphs the lower bound always holds;
    /// the upper bound degenerates only under perfect one-shot mixing
    /// (`W = J/L`), where the conditions hold with infinite right sides.
    pub eta_interior: bool,
}

/// Evaluates the sufficient conditions for the given cumulative capabilities.
pub fn check_cct_conditions(
    cumulative: &[f64],
    w: &WeightMatrix,
    g: &NetworkGraph,
) -> CctConditionReport {
    let radius = g.radius().max(1);
    let eta_w = ergodic_coefficient(w);
    let eta_wh = ergodic_coefficient(&w.pow(radius));
    let h = radius as f64;

    let rhs_i = (1.0 - eta_wh).ln().abs() / h;
    let rhs_ii = (1.0 - eta_w.powf(h)).ln().abs() / h;
    let rhs_iii = (1.0 - eta_w).ln().abs();

    let max_i = cumulative.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lhs: Vec<f64> = cumulative.iter().map(|ii| ii * max_i.ln().abs()).collect();
    let all_below = |rhs: f64| lhs.iter().all(|l| *l < rhs);

    CctConditionReport {
        holds_i: all_below(rhs_i),
        holds_ii: all_below(rhs_ii),
        holds_iii: all_below(rhs_iii),
        lhs,
        rhs_i,
        rhs_ii,
        rhs_iii,
        eta_w,
        eta_w_pow_radius: eta_wh,
        radius,
        eta_interior: eta_wh > 0.0 && eta_wh < 1.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn path(n: usize) -> NetworkGraph {
        NetworkGraph::new(n, (0..n - 1).map(|i| (i, i + 1))).unwrap()
    }

    fn ring(n: usize) -> NetworkGraph {
        NetworkGraph::new(n, (0..n).map(|i| (i, (i + 1) % n))).unwrap()
    }

    fn complete(n: usize) -> NetworkGraph {
        let edges = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b)));
        NetworkGraph::new(n, edges).unwrap()
    }

    pub(crate) fn random_connected(
        rng: &mut ChaCha8Rng,
        n: usize,
        extra_edge_prob: f64,
    ) -> NetworkGraph {
        // A random spanning tree plus independent extra edges.
        let mut edges = Vec::new();
        for v in 1..n {
            let parent = rng.random_range(0..v);
            edges.push((parent, v));
        }
        for a in 0..n {
            for b in a + 1..n {
                if rng.random::<f64>() < extra_edge_prob {
                    edges.push((a, b));
                }
            }
        }
        NetworkGraph::new(n, edges).unwrap()
    }

    #[test]
    fn graph_construction_validates_inputs() {
        assert!(matches!(
            NetworkGraph::new(3, [(0, 0)]),
            Err(Error::InvalidEdge { .. })
        ));
        assert!(matches!(
            NetworkGraph::new(3, [(0, 5)]),
            Err(Error::InvalidEdge { .. })
        ));
        assert_eq!(
            NetworkGraph::new(4, [(0, 1), (2, 3)]),
            Err(Error::Disconnected)
        );
        // Duplicate edges collapse.
        let g = NetworkGraph::new(2, [(0, 1), (1, 0)]).unwrap();
        assert_eq!(g.edge_count(), 1);
    }

    #[test]
    fn diameter_examples() {
        assert_eq!(path(3).diameter(), 2);
        assert_eq!(complete(5).diameter(), 1);
        assert_eq!(ring(6).diameter(), 3);
    }

    #[test]
    fn radius_examples() {
        assert_eq!(path(3).radius(), 1);
        assert_eq!(ring(6).radius(), 3);
        // Star on 7 nodes.
        let star = NetworkGraph::new(7, (1..7).map(|v| (0, v))).unwrap();
        assert_eq!(star.radius(), 1);
    }

    #[test]
    fn metropolis_path3_matches_hand_computation() {
        let w = metropolis_weights(&path(3));
        let third = 1.0 / 3.0;
        for (a, b) in [(0, 1), (1, 0), (1, 2), (2, 1)] {
            assert!((w.get(a, b) - third).abs() < 1e-15);
        }
        assert!((w.get(0, 0) - 2.0 * third).abs() < 1e-15);
        assert!((w.get(1, 1) - third).abs() < 1e-15);
        assert!((w.get(2, 2) - 2.0 * third).abs() < 1e-15);
        assert_eq!(w.get(0, 2), 0.0);
    }

    #[test]
    fn metropolis_complete_graph_is_uniform_averaging() {
        let n = 6;
        let w = metropolis_weights(&complete(n));
        for i in 0..n {
            for j in 0..n {
                assert!((w.get(i, j) - 1.0 / n as f64).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn metropolis_validates_on_random_connected_graphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for round in 0..100 {
            let n = 3 + (round % 28);
            let g = random_connected(&mut rng, n, 0.15);
            let w = metropolis_weights(&g);
            let report = validate_weights(&w, &g);
            assert!(report.row_ok && report.col_ok && report.support_ok);
            assert!(
                report.spectral_radius < 1.0,
                "spectral radius {} on {n} nodes",
                report.spectral_radius
            );
        }
    }

    #[test]
    fn validate_weights_flags_wrong_support() {
        let g = path(3);
        let w = WeightMatrix::identity(3);
        let report = validate_weights(&w, &g);
        assert!(!report.support_ok);
        assert!(report.row_ok && report.col_ok);
    }

    #[test]
    fn averaging_projector_has_zero_deviation_radius() {
        let g = complete(4);
        let w = metropolis_weights(&g); // equals J/L on a complete graph
        let report = validate_weights(&w, &g);
        assert!(report.converged);
        assert!(report.spectral_radius.abs() < 1e-12);
    }

    #[test]
    fn path3_deviation_radius_is_two_thirds() {
        // Eigenvalues of the path-3 Metropolis matrix are {1, 2/3, 0}.
        let g = path(3);
        let report = validate_weights(&metropolis_weights(&g), &g);
        assert!(report.converged);
        assert!((report.spectral_radius - 2.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn ergodic_coefficient_examples() {
        let n = 5;
        let uniform = metropolis_weights(&complete(n));
        assert!((ergodic_coefficient(&uniform) - 1.0).abs() < 1e-15);
        assert_eq!(ergodic_coefficient(&WeightMatrix::identity(4)), 0.0);
        // Path-3 Metropolis: the end pair overlaps only at the middle column.
        let w = metropolis_weights(&path(3));
        assert!((ergodic_coefficient(&w) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn matrix_powers_stay_doubly_stochastic() {
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        for _ in 0..20 {
            let g = random_connected(&mut rng, 8, 0.2);
            let w = metropolis_weights(&g);
            let wh = w.pow(g.radius().max(1));
            let n = wh.size();
            for i in 0..n {
                let row: f64 = (0..n).map(|j| wh.get(i, j)).sum();
                let col: f64 = (0..n).map(|j| wh.get(j, i)).sum();
                assert!((row - 1.0).abs() < 1e-10);
                assert!((col - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn ergodic_coefficient_grows_under_mixing_with_the_projector() {
        let mut rng = ChaCha8Rng::seed_from_u64(321);
        for _ in 0..20 {
            // Random row-stochastic matrix.
            let n = 5;
            let mut rows = Vec::new();
            for _ in 0..n {
                let mut row: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
                let sum: f64 = row.iter().sum();
                row.iter_mut().for_each(|v| *v /= sum);
                rows.push(row);
            }
            let w = WeightMatrix::from_rows(rows).unwrap();
            let eta = ergodic_coefficient(&w);
            for alpha in [0.1, 0.3, 0.5, 0.9] {
                let mixed_rows: Vec<Vec<f64>> = (0..n)
                    .map(|i| {
                        (0..n)
                            .map(|j| (1.0 - alpha) * w.get(i, j) + alpha / n as f64)
                            .collect()
                    })
                    .collect();
                let mixed = WeightMatrix::from_rows(mixed_rows).unwrap();
                assert!(ergodic_coefficient(&mixed) >= (1.0 - alpha) * eta - 1e-12);
            }
        }
    }

    #[test]
    fn ergodic_coefficient_of_radius_power_is_interior_on_connected_graphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7_654);
        for round in 0..60 {
            let n = 3 + (round % 20);
            let g = random_connected(&mut rng, n, 0.1);
            let w = metropolis_weights(&g);
            let eta = ergodic_coefficient(&w.pow(g.radius().max(1)));
            assert!(
                eta > 0.0,
                "eta(W^h) must be positive, got {eta} on {n} nodes"
            );
            // On non-complete graphs the power cannot mix perfectly.
            if g.edge_count() < n * (n - 1) / 2 {
                assert!(eta < 1.0, "eta(W^h) = 1 on a non-complete graph");
            }
        }
    }

    #[test]
    fn complete_graph_conditions_hold_trivially() {
        // Metropolis on K4 is exactly the averaging projector (1/4 and the
        // diagonal residual are both representable), so eta = 1 and every
        // right side is infinite.
        let g = complete(4);
        let w = metropolis_weights(&g);
        assert!((ergodic_coefficient(&w) - 1.0).abs() == 0.0);
        let report = check_cct_conditions(&[2.0, 3.0, 2.5], &w, &g);
        assert!(report.rhs_i.is_infinite());
        assert!(report.holds_i && report.holds_ii && report.holds_iii);
        assert!(
            !report.eta_interior,
            "perfect mixing is the degenerate eta = 1 case"
        );
    }

    #[test]
    fn weak_weights_on_a_long_path_fail_for_strong_models() {
        let g = path(8);
        // Identity-dominant weights: tiny positive off-diagonals on edges.
        let n = 8;
        let eps = 1e-3;
        let mut rows = vec![vec![0.0; n]; n];
        for i in 0..n {
            for &j in g.neighbors(i) {
                rows[i][j] = eps;
            }
            rows[i][i] = 1.0 - eps * g.degree(i) as f64;
        }
        let w = WeightMatrix::from_rows(rows).unwrap();
        let report = check_cct_conditions(&[4.0, 5.0, 4.5], &w, &g);
        assert!(!report.holds_i && !report.holds_ii && !report.holds_iii);
    }

    #[test]
    fn condition_implications_on_random_instances() {
        // (ii) is the strongest condition and (iii) sits between (ii) and
        // (i), so both chains must be counterexample-free.
        let mut rng = ChaCha8Rng::seed_from_u64(1_234);
        let (mut seen_ii, mut seen_iii) = (0, 0);
        for round in 0..200 {
            let n = 3 + (round % 12);
            let g = random_connected(&mut rng, n, 0.4);
            let w = metropolis_weights(&g);
            let scale = 0.05 + rng.random::<f64>() * 1.5;
            let cumulative: Vec<f64> = (0..3)
                .map(|_| scale * (0.5 + rng.random::<f64>()))
                .collect();
            let report = check_cct_conditions(&cumulative, &w, &g);
            if report.holds_ii {
                seen_ii += 1;
                assert!(report.holds_i, "(ii) must imply (i): {report:?}");
                assert!(report.holds_iii, "(ii) must imply (iii): {report:?}");
            }
            if report.holds_iii {
                seen_iii += 1;
                assert!(report.holds_i, "(iii) must imply (i): {report:?}");
            }
        }
        assert!(
            seen_ii > 0 && seen_iii > 0,
            "instances never exercised the chain"
        );
    }

    #[test]
    fn edge_list_round_trip() {
        let g = ring(6);
        let text = g.to_edge_list_text();
        let parsed = NetworkGraph::from_edge_list_text(&text).unwrap();
        assert_eq!(g, parsed);
    }

    #[test]
    fn edge_list_parser_rejects_malformed_input() {
        assert!(NetworkGraph::from_edge_list_text("0 1\n").is_err());
        assert!(NetworkGraph::from_edge_list_text("L x\n0 1\n").is_err());
        assert!(NetworkGraph::from_edge_list_text("L 2\n0 1 2\n").is_err());
        let ok = NetworkGraph::from_edge_list_text("# comment\nL 2\n0 1\n").unwrap();
        assert_eq!(ok.sensors(), 2);
    }
}
