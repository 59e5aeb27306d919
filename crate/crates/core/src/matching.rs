//! Minimum-cost slot/gold assignment and the bipartite matching loss.

use crate::corpus::Span;
use crate::error::{Error, Result};
use crate::nn::{Graph, NodeId};

/// Probability floor applied before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

/// The empty answer: both boundaries at the null anchor.
pub const NULL_SPAN: Span = Span { start: 0, end: 0 };

/// Minimum-cost matching of `min(n, m)` pairs for an `n x m` cost matrix,
/// returned as `(row, col)` pairs sorted by row.
pub fn hungarian(cost: &[Vec<f64>]) -> Result<Vec<(usize, usize)>> {
    let n = cost.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let m = cost[0].len();
    if cost.iter().any(|r| r.len() != m) {
        return Err(Error::Shape("ragged cost matrix".into()));
    }
    if cost.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("cost matrix entry".into()));
    }
    if m == 0 {
        return Ok(Vec::new());
    }
    let transposed = n > m;
    let (rows, cols) = if transposed { (m, n) } else { (n, m) };
    let at = |i: usize, j: usize| if transposed { cost[j][i] } else { cost[i][j] };

    // Shortest augmenting paths with potentials; 1-based with a virtual column 0.
    let mut u = vec![0.0; rows + 1];
    let mut v = vec![0.0; cols + 1];
    let mut owner = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];
    for i in 1..=rows {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=cols {
                if used[j] {
                    continue;
                }
                let cur = at(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=cols {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut pairs: Vec<(usize, usize)> = (1..=cols)
        .filter(|&j| owner[j] != 0)
        .map(|j| {
            let (r, c) = (owner[j] - 1, j - 1);
            if transposed {
                (c, r)
            } else {
                (r, c)
            }
        })
        .collect();
    pairs.sort_unstable();
    Ok(pairs)
}

/// Total cost of `pairs`, summed in row order.
pub fn assignment_cost(cost: &[Vec<f64>], pairs: &[(usize, usize)]) -> f64 {
    pairs.iter().map(|&(r, c)| cost[r][c]).sum()
}

/// Negative log-likelihood of `span` under start/end distributions; the
/// empty span reads both boundaries at position 0.
pub fn span_nll(start: &[f64], end: &[f64], span: Span) -> f64 {
    let (s, e) = boundary_indices(span);
    -start[s].max(PROB_FLOOR).ln() - end[e].max(PROB_FLOOR).ln()
}

/// Start and end positions read for `span` (end is inclusive).
pub fn boundary_indices(span: Span) -> (usize, usize) {
    if span.is_empty() {
        (0, 0)
    } else {
        (span.start, span.end - 1)
    }
}

/// Targets for the slots of one (event, role) group.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// One target per slot; [`NULL_SPAN`] when the slot is unmatched.
    pub targets: Vec<Span>,
    /// Gold spans left over because the group has fewer slots than golds.
    pub dropped: usize,
}

/// Matches slots (given as start/end distributions) to gold spans of the
/// same event and role by minimum total negative log-likelihood.
pub fn optimal_assignment(slots: &[(&[f64], &[f64])], golds: &[Span]) -> Result<Assignment> {
    let mut targets = vec![NULL_SPAN; slots.len()];
    if golds.is_empty() || slots.is_empty() {
        return Ok(Assignment {
            targets,
            dropped: if slots.is_empty() { golds.len() } else { 0 },
        });
    }
    let cost: Vec<Vec<f64>> = slots
        .iter()
        .map(|(s, e)| golds.iter().map(|&g| span_nll(s, e, g)).collect())
        .collect();
    let pairs = hungarian(&cost)?;
    for &(slot, gold) in &pairs {
        targets[slot] = golds[gold];
    }
    Ok(Assignment {
        targets,
        dropped: golds.len() - pairs.len(),
    })
}

/// One slot's distributions and its assigned target.
#[derive(Debug, Clone, Copy)]
pub struct SlotTarget<'a> {
    pub start: &'a [f64],
    pub end: &'a [f64],
    pub target: Span,
}

/// Sum of per-document target NLLs, averaged over documents.
pub fn bipartite_loss(batch: &[Vec<SlotTarget>]) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    let total: f64 = batch
        .iter()
        .map(|doc| doc.iter().map(|t| span_nll(t.start, t.end, t.target)).sum::<f64>())
        .sum();
    total / batch.len() as f64
}

/// Graph form of one slot's target NLL.
pub(crate) fn slot_loss(g: &mut Graph, start: NodeId, end: NodeId, target: Span) -> Result<NodeId> {
    let (s, e) = boundary_indices(target);
    let ls = g.neg_log_pick(start, s, PROB_FLOOR)?;
    let le = g.neg_log_pick(end, e, PROB_FLOOR)?;
    g.sum(&[ls, le])
}
