//! Segment betweenness ("choice") with a metric radius.
//!
//! For every ordered source segment j, destinations k are the segments
//! whose metric network distance (midpoint to midpoint, meters) from j is
//! within the radius. Shortest paths between j and k are then counted under
//! the mode cost — cumulative turn angle in degrees (angular) or junction
//! hops (topological) — on the full graph, and each intermediate segment i
//! receives the fraction of j–k shortest paths that pass through it. Each
//! unordered pair is counted once. The aggregation weight is the floored
//! log: `w = ln(c)` when `c > 1`, else 0.
//!
//! Paths are deliberately not confined to the radius neighborhood: the
//! radius selects *pairs*, not routes. That keeps each pair's contribution
//! independent of the radius, so scores grow monotonically with it.
//!
//! The per-source computation is a two-phase Dijkstra (metric reach, then
//! mode-cost distances with sigma path counting on the shortest-path DAG)
//! followed by a per-destination backward pass that yields each pair's
//! contribution g_jk(i)/g_jk as a single correctly-rounded division of
//! exact path counts (exact while counts stay below 2^53). Contributions
//! are summed in a fixed canonical order — sources ascending inside fixed
//! chunks, destinations ascending, each unordered pair visited once from
//! its lower-indexed end — so results are bit-identical regardless of
//! thread count and bit-comparable against the enumeration reference in
//! [`reference`], which follows the same summation convention.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::network::SegmentGraph;

/// Cost model for counting shortest paths between segment pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChoiceMode {
    /// Path cost is the cumulative turn angle in degrees.
    Angular,
    /// Path cost is the number of junctions crossed.
    Topological,
}

/// Absolute tolerance for treating two path costs as tied.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// Default metric radius for pair selection, meters.
pub const DEFAULT_RADIUS: f64 = 500.0;

/// Per-segment choice scores, indexed like the graph's segment list.
#[derive(Debug, Clone)]
pub struct ChoiceScores {
    /// Raw betweenness c_i.
    pub c: Vec<f64>,
    /// Floored log weight: ln(c_i) if c_i > 1, else 0.
    pub w: Vec<f64>,
    /// Metric radius the scores were computed under.
    pub radius: f64,
    /// Cost model the scores were computed under.
    pub mode: ChoiceMode,
}

/// Computes choice scores for every segment.
///
/// Pairs in different components contribute nothing; isolated segments
/// score 0. `radius` may be `f64::INFINITY` to disable pair filtering.
pub fn choice(graph: &SegmentGraph, radius: f64, mode: ChoiceMode) -> Result<ChoiceScores> {
    if !(radius > 0.0) {
        return Err(Error::domain("choice radius must be positive"));
    }
    let n = graph.len();
    if n == 0 {
        return Ok(ChoiceScores { c: vec![], w: vec![], radius, mode });
    }

    // Fixed chunking makes the reduction order independent of scheduling.
    let partials: Vec<Vec<f64>> = chunk_bounds(n)
        .par_iter()
        .map(|&(start, end)| {
            let mut acc = vec![0.0; n];
            let mut ws = Workspace::new(n);
            for source in start..end {
                accumulate_source(graph, source, radius, mode, &mut ws, &mut acc);
            }
            acc
        })
        .collect();

    let mut c = vec![0.0; n];
    for part in &partials {
        for (ci, pi) in c.iter_mut().zip(part) {
            *ci += pi;
        }
    }
    let w = c.iter().map(|&ci| floored_log(ci)).collect();
    Ok(ChoiceScores { c, w, radius, mode })
}

/// Source ranges for the parallel sweep. Fixed by segment count alone so
/// the summation order (and therefore every last bit of the result) does
/// not depend on the worker pool.
fn chunk_bounds(n: usize) -> Vec<(usize, usize)> {
    let chunk_size = n.div_ceil(64).max(1);
    (0..n)
        .step_by(chunk_size)
        .map(|start| (start, (start + chunk_size).min(n)))
        .collect()
}

/// The aggregation weight for a raw choice value: ln(c) when c > 1, else 0.
pub fn floored_log(c: f64) -> f64 {
    if c > 1.0 {
        c.ln()
    } else {
        0.0
    }
}

/// Min-max rescaling of the weights to 0–100 for reporting. All-equal
/// inputs (including a single segment) map to all zeros.
pub fn normalize_scores(w: &[f64]) -> Vec<f64> {
    let Some((&min, &max)) = w
        .iter()
        .fold(None, |acc: Option<(&f64, &f64)>, x| match acc {
            None => Some((x, x)),
            Some((lo, hi)) => Some((if x < lo { x } else { lo }, if x > hi { x } else { hi })),
        })
    else {
        return vec![];
    };
    let span = max - min;
    if span == 0.0 {
        return vec![0.0; w.len()];
    }
    w.iter().map(|x| 100.0 * (x - min) / span).collect()
}

/// Min-heap entry; costs are finite by construction.
#[derive(PartialEq)]
struct HeapEntry {
    dist: f64,
    node: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // reversed for a min-heap; node id breaks exact cost ties
        other
            .dist
            .partial_cmp(&self.dist)
            .unwrap()
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Scratch buffers reused across sources; only touched entries are reset.
struct Workspace {
    dist_metric: Vec<f64>,
    dist: Vec<f64>,
    settled: Vec<bool>,
    is_target: Vec<bool>,
    sigma: Vec<f64>,
    sigma_back: Vec<f64>,
    in_slice: Vec<bool>,
    pos: Vec<usize>,
    targets: Vec<usize>,
    order: Vec<usize>,
    slice: Vec<usize>,
    touched_metric: Vec<usize>,
    heap: BinaryHeap<HeapEntry>,
}

impl Workspace {
    fn new(n: usize) -> Self {
        Workspace {
            dist_metric: vec![f64::INFINITY; n],
            dist: vec![f64::INFINITY; n],
            settled: vec![false; n],
            is_target: vec![false; n],
            sigma: vec![0.0; n],
            sigma_back: vec![0.0; n],
            in_slice: vec![false; n],
            pos: vec![usize::MAX; n],
            targets: Vec::new(),
            order: Vec::new(),
            slice: Vec::new(),
            touched_metric: Vec::new(),
            heap: BinaryHeap::new(),
        }
    }
}

fn link_cost(angle: f64, mode: ChoiceMode) -> f64 {
    match mode {
        ChoiceMode::Angular => angle,
        ChoiceMode::Topological => 1.0,
    }
}

/// Adds the contributions of every pair (source, k) with k > source and
/// metric distance within the radius into `acc`, destinations in ascending
/// order. Visiting each unordered pair once from its lower-indexed end
/// fixes the summation order completely.
fn accumulate_source(
    graph: &SegmentGraph,
    source: usize,
    radius: f64,
    mode: ChoiceMode,
    ws: &mut Workspace,
    acc: &mut [f64],
) {
    // Phase 1: metric reach — which destinations are in range?
    ws.targets.clear();
    ws.touched_metric.clear();
    ws.heap.clear();
    ws.dist_metric[source] = 0.0;
    ws.touched_metric.push(source);
    ws.heap.push(HeapEntry { dist: 0.0, node: source });
    while let Some(HeapEntry { dist, node }) = ws.heap.pop() {
        if dist > ws.dist_metric[node] {
            continue; // stale entry
        }
        if node > source {
            ws.targets.push(node);
        }
        for link in &graph.links[node] {
            let nd = dist + graph.metric_cost(node, link.to);
            if nd <= radius && nd < ws.dist_metric[link.to] {
                if ws.dist_metric[link.to].is_infinite() {
                    ws.touched_metric.push(link.to);
                }
                ws.dist_metric[link.to] = nd;
                ws.heap.push(HeapEntry { dist: nd, node: link.to });
            }
        }
    }
    for &t in &ws.touched_metric {
        ws.dist_metric[t] = f64::INFINITY;
    }
    if ws.targets.is_empty() {
        return;
    }

    // Phase 2: mode-cost distances on the full graph, stopping once every
    // in-range destination is settled and nothing cheaper remains queued.
    ws.order.clear();
    ws.heap.clear();
    for &t in &ws.targets {
        ws.is_target[t] = true;
    }
    let mut targets_left = ws.targets.len();
    let mut max_target_dist = 0.0f64;
    ws.dist[source] = 0.0;
    ws.heap.push(HeapEntry { dist: 0.0, node: source });
    while let Some(HeapEntry { dist, node }) = ws.heap.pop() {
        if targets_left == 0 && dist > max_target_dist + TIE_TOLERANCE {
            break;
        }
        if ws.settled[node] || dist > ws.dist[node] {
            continue;
        }
        ws.settled[node] = true;
        ws.order.push(node);
        if ws.is_target[node] {
            targets_left -= 1;
            max_target_dist = max_target_dist.max(dist);
        }
        for link in &graph.links[node] {
            let nd = dist + link_cost(link.angle, mode);
            if nd < ws.dist[link.to] {
                ws.dist[link.to] = nd;
                ws.heap.push(HeapEntry { dist: nd, node: link.to });
            }
        }
    }

    // Phase 3: orient the shortest-path DAG by settlement order. For
    // strictly positive costs that is just distance order; inside
    // zero-cost tie clusters (collinear continuations) it is the breadth-
    // first order the search entered the cluster in, which is the
    // direction paths actually flow. The heap breaks equal costs by node
    // id, so the order — and every bit of the result — is deterministic.
    for (rank, &v) in ws.order.iter().enumerate() {
        ws.pos[v] = rank;
    }
    for &v in &ws.order {
        ws.sigma[v] = 0.0;
    }
    ws.sigma[source] = 1.0;
    for i in 0..ws.order.len() {
        let u = ws.order[i];
        for link in &graph.links[u] {
            let v = link.to;
            if !ws.settled[v] || ws.pos[u] >= ws.pos[v] {
                continue;
            }
            if ws.dist[u] + link_cost(link.angle, mode) <= ws.dist[v] + TIE_TOLERANCE {
                ws.sigma[v] += ws.sigma[u];
            }
        }
    }

    // Phase 4: per destination, count paths backward over the slice of the
    // DAG between source and destination. The segment counts g(i) =
    // sigma(i) * sigma_back(i) and the total g = sigma(t) are exact
    // integers (while below 2^53), so each pair contributes one correctly
    // rounded division — the same value the enumeration reference
    // produces, added in the same destination order.
    ws.targets.sort_unstable();
    for ti in 0..ws.targets.len() {
        let t = ws.targets[ti];
        if ws.sigma[t] == 0.0 {
            continue; // unreachable under the mode cost (metric-only link)
        }
        ws.slice.clear();
        ws.slice.push(t);
        ws.in_slice[t] = true;
        let mut head = 0;
        while head < ws.slice.len() {
            let v = ws.slice[head];
            head += 1;
            for link in &graph.links[v] {
                let u = link.to;
                if ws.in_slice[u] || !ws.settled[u] || ws.pos[u] >= ws.pos[v] {
                    continue;
                }
                if ws.sigma[u] > 0.0
                    && ws.dist[u] + link_cost(link.angle, mode) <= ws.dist[v] + TIE_TOLERANCE
                {
                    ws.in_slice[u] = true;
                    ws.slice.push(u);
                }
            }
        }
        // paths from each slice node onward to t, in reverse DAG order
        ws.slice.sort_unstable_by(|&a, &b| ws.pos[b].cmp(&ws.pos[a]));
        for &v in &ws.slice {
            ws.sigma_back[v] = 0.0;
        }
        ws.sigma_back[t] = 1.0;
        for i in 0..ws.slice.len() {
            let v = ws.slice[i];
            if ws.sigma_back[v] == 0.0 {
                continue;
            }
            for link in &graph.links[v] {
                let u = link.to;
                if !ws.in_slice[u] || ws.pos[u] >= ws.pos[v] {
                    continue;
                }
                if ws.dist[u] + link_cost(link.angle, mode) <= ws.dist[v] + TIE_TOLERANCE {
                    ws.sigma_back[u] += ws.sigma_back[v];
                }
            }
        }
        for &i in ws.slice.iter().rev() {
            if i != source && i != t {
                acc[i] += ws.sigma[i] * ws.sigma_back[i] / ws.sigma[t];
            }
            ws.in_slice[i] = false;
        }
    }

    // reset phase-2+ scratch via the settled list
    for &v in &ws.order {
        ws.dist[v] = f64::INFINITY;
        ws.settled[v] = false;
        ws.is_target[v] = false;
        ws.sigma[v] = 0.0;
        ws.pos[v] = usize::MAX;
    }
}

/// Exhaustive-enumeration reference implementation.
///
/// Counts co-minimal simple paths per pair by depth-first search with a
/// lower-bound prune, so it is exact but exponential in the worst case —
/// validation on small graphs only.
pub mod reference {
    use super::*;

    /// Everything the enumeration learns about one source/destination pair.
    pub struct PairEnumeration {
        /// Number of co-minimal paths.
        pub path_count: u64,
        /// Per-segment count of co-minimal paths passing through it
        /// (endpoints excluded), divided by `path_count`.
        pub through_fraction: Vec<f64>,
        /// Mean number of interior segments per co-minimal path.
        pub mean_interior_len: f64,
    }

    /// Enumerates all mode-cost shortest paths between two segments, or
    /// `None` if they are disconnected. `j != k` required.
    pub fn enumerate_pair(
        graph: &SegmentGraph,
        j: usize,
        k: usize,
        mode: ChoiceMode,
    ) -> Option<PairEnumeration> {
        let n = graph.len();
        // exact distances to k give the pruning bound
        let to_k = dijkstra_all(graph, k, mode);
        if to_k[j].is_infinite() {
            return None;
        }
        let best = to_k[j];
        let mut through = vec![0u64; n];
        let mut count = 0u64;
        let mut interior_total = 0u64;
        let mut on_path = vec![false; n];
        let mut stack: Vec<usize> = vec![j];
        on_path[j] = true;
        dfs(
            graph, j, k, 0.0, best, &to_k, mode, &mut on_path, &mut stack, &mut through,
            &mut count, &mut interior_total,
        );
        assert!(count > 0, "distance bound promised a path");
        let through_fraction = through
            .iter()
            .map(|&t| t as f64 / count as f64)
            .collect();
        Some(PairEnumeration {
            path_count: count,
            through_fraction,
            mean_interior_len: interior_total as f64 / count as f64,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn dfs(
        graph: &SegmentGraph,
        node: usize,
        k: usize,
        cost_so_far: f64,
        best: f64,
        to_k: &[f64],
        mode: ChoiceMode,
        on_path: &mut [bool],
        stack: &mut Vec<usize>,
        through: &mut [u64],
        count: &mut u64,
        interior_total: &mut u64,
    ) {
        if node == k {
            *count += 1;
            *interior_total += (stack.len() - 2) as u64;
            for &v in &stack[1..stack.len() - 1] {
                through[v] += 1;
            }
            return;
        }
        for link in &graph.links[node] {
            let v = link.to;
            if on_path[v] {
                continue;
            }
            let nc = cost_so_far + link_cost(link.angle, mode);
            if nc + to_k[v] > best + TIE_TOLERANCE {
                continue; // cannot be co-minimal
            }
            on_path[v] = true;
            stack.push(v);
            dfs(graph, v, k, nc, best, to_k, mode, on_path, stack, through, count, interior_total);
            stack.pop();
            on_path[v] = false;
        }
    }

    fn dijkstra_all(graph: &SegmentGraph, source: usize, mode: ChoiceMode) -> Vec<f64> {
        let mut dist = vec![f64::INFINITY; graph.len()];
        let mut heap = BinaryHeap::new();
        dist[source] = 0.0;
        heap.push(HeapEntry { dist: 0.0, node: source });
        while let Some(HeapEntry { dist: d, node }) = heap.pop() {
            if d > dist[node] {
                continue;
            }
            for link in &graph.links[node] {
                let nd = d + link_cost(link.angle, mode);
                if nd < dist[link.to] {
                    dist[link.to] = nd;
                    heap.push(HeapEntry { dist: nd, node: link.to });
                }
            }
        }
        dist
    }

    /// Metric midpoint-to-midpoint network distances from one segment.
    pub fn metric_distances(graph: &SegmentGraph, source: usize) -> Vec<f64> {
        let mut dist = vec![f64::INFINITY; graph.len()];
        let mut heap = BinaryHeap::new();
        dist[source] = 0.0;
        heap.push(HeapEntry { dist: 0.0, node: source });
        while let Some(HeapEntry { dist: d, node }) = heap.pop() {
            if d > dist[node] {
                continue;
            }
            for link in &graph.links[node] {
                let nd = d + graph.metric_cost(node, link.to);
                if nd < dist[link.to] {
                    dist[link.to] = nd;
                    heap.push(HeapEntry { dist: nd, node: link.to });
                }
            }
        }
        dist
    }

    /// Brute-force choice: enumerate every in-radius pair.
    ///
    /// Pair fractions are added in the same canonical order as
    /// [`super::choice`] (fixed source chunks, then ascending source and
    /// destination), so agreement can be asserted without any tolerance —
    /// identical addends in an identical order round identically.
    pub fn brute_force_choice(graph: &SegmentGraph, radius: f64, mode: ChoiceMode) -> Vec<f64> {
        let n = graph.len();
        let mut c = vec![0.0; n];
        for (start, end) in chunk_bounds(n) {
            let mut part = vec![0.0; n];
            for j in start..end {
                let metric = metric_distances(graph, j);
                for k in (j + 1)..n {
                    if metric[k] > radius {
                        continue;
                    }
                    if let Some(pair) = enumerate_pair(graph, j, k, mode) {
                        for (ci, f) in part.iter_mut().zip(&pair.through_fraction) {
                            *ci += f;
                        }
                    }
                }
            }
            for (ci, pi) in c.iter_mut().zip(&part) {
                *ci += pi;
            }
        }
        c
    }
}
