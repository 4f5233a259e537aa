//! Maximin action design: for a sensor and a presumed hypothesis, the mixed
//! action distribution maximizing the worst-case expected KL separation from
//! every other hypothesis.
//!
//! The attained value is the sensor's capability for that hypothesis; the
//! decentralized and consensus protocols split their global thresholds in
//! proportion to it. Instances are tiny (a handful of actions, a handful of
//! adversary hypotheses), so the linear program is solved exactly by vertex
//! enumeration rather than through an external solver, and a simplex grid
//! search serves as an independent oracle in tests.

use crate::error::{Error, Result};
use crate::prob::{kl_divergence, ObservationModel};

/// All pairwise divergences `d(i, j, k) = D(p_i^k || p_j^k)` for one sensor.
#[derive(Debug, Clone)]
pub struct DivergenceTable {
    hypotheses: usize,
    actions: usize,
    /// Index: `(i * hypotheses + j) * actions + k`.
    d: Vec<f64>,
}

impl DivergenceTable {
    /// Wraps a raw table, validating shape, non-negativity, finiteness, and a
    /// zero diagonal.
    pub fn from_raw(hypotheses: usize, actions: usize, d: Vec<f64>) -> Result<Self> {
        if hypotheses < 2 || actions == 0 {
            return Err(Error::InvalidDistribution {
                reason: "divergence table needs >= 2 hypotheses and >= 1 action".into(),
            });
        }
        let expected = hypotheses * hypotheses * actions;
        if d.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: d.len(),
            });
        }
        if d.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidDistribution {
                reason: "divergence entries must be finite and non-negative".into(),
            });
        }
        for i in 0..hypotheses {
            for k in 0..actions {
                if d[(i * hypotheses + i) * actions + k] != 0.0 {
                    return Err(Error::InvalidDistribution {
                        reason: format!("diagonal entry d({i}, {i}, {k}) is non-zero"),
                    });
                }
            }
        }
        Ok(Self {
            hypotheses,
            actions,
            d,
        })
    }

    pub fn hypotheses(&self) -> usize {
        self.hypotheses
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.d[(i * self.hypotheses + j) * self.actions + k]
    }

    pub fn max_entry(&self) -> f64 {
        self.d.iter().cloned().fold(0.0, f64::max)
    }
}

/// Divergence table for one sensor of a model. Finiteness is guaranteed by
/// the model's probability floor.
pub fn divergence_table(model: &ObservationModel, sensor: usize) -> DivergenceTable {
    let m = model.hypotheses();
    let k = model.actions();
    let mut d = vec![0.0; m * m * k];
    for i in 0..m {
        for j in 0..m {
            if i == j {
                continue;
            }
            for a in 0..k {
                d[(i * m + j) * k + a] =
                    kl_divergence(model.dist(i, sensor, a), model.dist(j, sensor, a))
                        .expect("model floor guarantees finite divergence");
            }
        }
    }
    DivergenceTable {
        hypotheses: m,
        actions: k,
        d,
    }
}

/// A mixed action distribution together with the maximin value it attains.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionPmf {
    /// Probability per action; lies on the simplex within 1e-9.
    pub q: Vec<f64>,
    /// Attained value `max_q min_{j != i} sum_k q(k) d(i, j, k)`, in nats.
    pub value: f64,
    /// Set when the value is zero: some alternative hypothesis cannot be
    /// separated from `i` at this sensor, and `q` falls back to uniform.
    pub indistinguishable: bool,
}

impl ActionPmf {
    fn uniform(actions: usize) -> Self {
        Self {
            q: vec![1.0 / actions as f64; actions],
            value: 0.0,
            indistinguishable: true,
        }
    }
}

/// Exact maximin over the action simplex for hypothesis `i`:
/// maximize `t` subject to `sum_k q(k) d(i, j, k) >= t` for every `j != i`
/// and `q` on the simplex, by enumerating the vertices of the feasible
/// polyhedron. Among optimal vertices the lexicographically smallest `q`
/// wins, so results are reproducible across platforms.
pub fn solve_maximin(table: &DivergenceTable, i: usize) -> ActionPmf {
    let m = table.hypotheses;
    let k = table.actions;
    assert!(i < m, "hypothesis {i} out of range");
    let others: Vec<usize> = (0..m).filter(|&j| j != i).collect();
    let scale = 1.0 + table.max_entry();
    let ftol = 1e-9 * scale;

    // Inequality rows over variables (q_0..q_{k-1}, t), each read as
    // coeffs . x >= 0. Rows 0..k pin q_a >= 0; the rest are the game
    // constraints sum_k q d - t >= 0.
    let n_vars = k + 1;
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(k + others.len());
    for a in 0..k {
        let mut r = vec![0.0; n_vars];
        r[a] = 1.0;
        rows.push(r);
    }
    for &j in &others {
        let mut r = vec![0.0; n_vars];
        for (a, slot) in r.iter_mut().enumerate().take(k) {
            *slot = table.get(i, j, a);
        }
        r[k] = -1.0;
        rows.push(r);
    }

    let feasible = |x: &[f64]| -> bool {
        if x[..k].iter().any(|&q| q < -ftol) {
            return false;
        }
        rows[k..]
            .iter()
            .all(|r| r.iter().zip(x).map(|(c, v)| c * v).sum::<f64>() >= -ftol)
    };

    let mut best: Option<(f64, Vec<f64>)> = None;
    // A vertex activates the simplex equality plus k of the inequalities.
    for_each_combination(rows.len(), k, &mut |active| {
        let mut a = Vec::with_capacity(n_vars);
        let mut b = Vec::with_capacity(n_vars);
        let mut eq = vec![1.0; n_vars];
        eq[k] = 0.0;
        a.push(eq);
        b.push(1.0);
        for &r in active {
            a.push(rows[r].clone());
            b.push(0.0);
        }
        let Some(x) = solve_dense(a, b) else {
            return;
        };
        if !x.iter().all(|v| v.is_finite()) || !feasible(&x) {
            return;
        }
        let t = x[k];
        let take = match &best {
            None => true,
            Some((bt, _)) if t > bt + ftol => true,
            Some((bt, bq)) if (t - bt).abs() <= ftol => lex_less(&x[..k], bq, ftol),
            Some(_) => false,
        };
        if take {
            let kept = best.as_ref().map_or(t, |(bt, _)| t.max(*bt));
            best = Some((kept, x[..k].to_vec()));
        }
    });

    let (value, mut q) = best.expect("the simplex is non-empty, so some vertex is feasible");
    let value = value.max(0.0);
    if value <= 1e-12 * scale {
        return ActionPmf::uniform(k);
    }

    // Clean up solver noise: clamp tiny negatives, renormalize.
    for v in &mut q {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let sum: f64 = q.iter().sum();
    for v in &mut q {
        *v /= sum;
    }

    let pmf = ActionPmf {
        q,
        value,
        indistinguishable: false,
    };
    assert_weak_duality(table, i, &pmf);
    pmf
}

/// Weak-duality sandwich, checked on every solve: the mixed value is bounded
/// below by the best pure action and above by the adversary's best response
/// ceiling.
fn assert_weak_duality(table: &DivergenceTable, i: usize, pmf: &ActionPmf) {
    let tol = 1e-7 * (1.0 + table.max_entry());
    let lower = (0..table.actions)
        .map(|a| {
            (0..table.hypotheses)
                .filter(|&j| j != i)
                .map(|j| table.get(i, j, a))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(f64::NEG_INFINITY, f64::max);
    let upper = (0..table.hypotheses)
        .filter(|&j| j != i)
        .map(|j| {
            (0..table.actions)
                .map(|a| table.get(i, j, a))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .fold(f64::INFINITY, f64::min);
    assert!(
        pmf.value >= lower - tol && pmf.value <= upper + tol,
        "maximin value {} escapes the duality sandwich [{lower}, {upper}]",
        pmf.value
    );
}

/// Exhaustive grid search over the simplex at the given step, the independent
/// oracle for [`solve_maximin`]. The value is within grid resolution of the
/// true optimum; ties break to the lexicographically smallest grid point.
pub fn brute_force_maximin(table: &DivergenceTable, i: usize, grid_step: f64) -> ActionPmf {
    assert!(
        grid_step > 0.0 && grid_step <= 0.5,
        "grid step {grid_step} outside (0, 0.5]"
    );
    let k = table.actions;
    let n = (1.0 / grid_step).round().max(2.0) as u64;
    let others: Vec<usize> = (0..table.hypotheses).filter(|&j| j != i).collect();

    let mut best_value = f64::NEG_INFINITY;
    let mut best_q: Vec<u64> = Vec::new();
    let mut counts = vec![0u64; k];
    enumerate_compositions(n, k, &mut counts, 0, &mut |counts| {
        let objective = others
            .iter()
            .map(|&j| {
                counts
                    .iter()
                    .enumerate()
                    .map(|(a, &c)| c as f64 * table.get(i, j, a))
                    .sum::<f64>()
                    / n as f64
            })
            .fold(f64::INFINITY, f64::min);
        if objective > best_value + 1e-15
            || (objective >= best_value - 1e-15 && counts < best_q.as_slice())
        {
            best_value = objective;
            best_q = counts.to_vec();
        }
    });

    let value = best_value.max(0.0);
    if value <= 1e-12 * (1.0 + table.max_entry()) {
        return ActionPmf::uniform(k);
    }
    ActionPmf {
        q: best_q.iter().map(|&c| c as f64 / n as f64).collect(),
        value,
        indistinguishable: false,
    }
}

fn enumerate_compositions(
    remaining: u64,
    parts: usize,
    counts: &mut [u64],
    idx: usize,
    f: &mut impl FnMut(&[u64]),
) {
    if idx == parts - 1 {
        counts[idx] = remaining;
        f(counts);
        return;
    }
    for c in 0..=remaining {
        counts[idx] = c;
        enumerate_compositions(remaining - c, parts, counts, idx + 1, f);
    }
}

fn for_each_combination(n: usize, k: usize, f: &mut impl FnMut(&[usize])) {
    if k > n {
        return;
    }
    if k == 0 {
        f(&[]);
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        // Advance the rightmost index that can still move.
        let mut pos = k;
        loop {
            if pos == 0 {
                return;
            }
            pos -= 1;
            if idx[pos] != pos + n - k {
                break;
            }
        }
        idx[pos] += 1;
        for later in pos + 1..k {
            idx[later] = idx[later - 1] + 1;
        }
    }
}

/// Strict lexicographic order with tolerance: `a < b` if at the first entry
/// differing by more than `tol`, `a` is smaller.
fn lex_less(a: &[f64], b: &[f64], tol: f64) -> bool {
    for (x, y) in a.iter().zip(b) {
        if (x - y).abs() > tol {
            return x < y;
        }
    }
    false
}

/// Gaussian elimination with partial pivoting; `None` when near-singular.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let norm = a
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1.0);
    for col in 0..n {
        let pivot = (col..n).max_by(|&r, &s| a[r][col].abs().total_cmp(&a[s][col].abs()))?;
        if a[pivot][col].abs() < 1e-12 * norm {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            if factor == 0.0 {
                continue;
            }
            for c in col..n {
                a[row][c] -= factor * a[col][c];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for col in row + 1..n {
            acc -= a[row][col] * x[col];
        }
        x[row] = acc / a[row][row];
    }
    Some(x)
}

/// Per-(sensor, hypothesis) maximin policies and capabilities, built once at
/// trial setup and read-only afterwards. The per-step action distribution
/// depends only on the current temporary decision, so a lookup suffices.
#[derive(Debug, Clone)]
pub struct PolicyTable {
    sensors: usize,
    hypotheses: usize,
    pmfs: Vec<ActionPmf>,
}

impl PolicyTable {
    pub fn build(model: &ObservationModel) -> Self {
        let mut pmfs = Vec::with_capacity(model.sensors() * model.hypotheses());
        for sensor in 0..model.sensors() {
            let table = divergence_table(model, sensor);
            for hyp in 0..model.hypotheses() {
                pmfs.push(solve_maximin(&table, hyp));
            }
        }
        Self {
            sensors: model.sensors(),
            hypotheses: model.hypotheses(),
            pmfs,
        }
    }

    pub fn sensors(&self) -> usize {
        self.sensors
    }

    pub fn hypotheses(&self) -> usize {
        self.hypotheses
    }

    pub fn pmf(&self, sensor: usize, hyp: usize) -> &ActionPmf {
        &self.pmfs[sensor * self.hypotheses + hyp]
    }

    /// Capability v(hyp, sensor): the maximin value.
    pub fn capability(&self, sensor: usize, hyp: usize) -> f64 {
        self.pmf(sensor, hyp).value
    }
}
