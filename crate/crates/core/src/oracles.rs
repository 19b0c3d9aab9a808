//! Independent reference implementations used by the test suites.
//!
//! Nothing here is called from production paths; these exist so that the
//! unit and acceptance tests can check the fast implementations against
//! slow, obviously-correct ones.

/// Exact minimum-cost transport between two integer count vectors over the
/// same support, with ground cost 0 on the diagonal and 1 elsewhere,
/// normalized to a distance in [0, 1].
///
/// Masses are made commensurable by cross-scaling (`ca[i] * tb` units vs
/// `cb[j] * ta`), so the solver works on exact integers; the result is the
/// optimal cost divided by total mass.
pub fn transport_emd_counts(ca: &[u64], cb: &[u64]) -> f64 {
    assert_eq!(ca.len(), cb.len());
    let ta: u64 = ca.iter().sum();
    let tb: u64 = cb.iter().sum();
    assert!(ta > 0 && tb > 0);
    let supply: Vec<i64> = ca.iter().map(|&c| (c * tb) as i64).collect();
    let demand: Vec<i64> = cb.iter().map(|&c| (c * ta) as i64).collect();
    let cost = |i: usize, j: usize| -> i64 { i64::from(i != j) };
    let total_cost = min_cost_transport(&supply, &demand, &cost);
    total_cost as f64 / (ta as f64 * tb as f64)
}

/// Successive-shortest-path min-cost flow on the bipartite transportation
/// graph: source -> suppliers -> consumers -> sink.
fn min_cost_transport(
    supply: &[i64],
    demand: &[i64],
    cost: &dyn Fn(usize, usize) -> i64,
) -> i64 {
    let n = supply.len();
    let n_nodes = 2 * n + 2;
    let source = 2 * n;
    let sink = 2 * n + 1;

    #[derive(Clone)]
    struct Edge {
        to: usize,
        cap: i64,
        cost: i64,
        flow: i64,
    }
    let mut edges: Vec<Edge> = Vec::new();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n_nodes];
    let add_edge = |edges: &mut Vec<Edge>,
                    adj: &mut Vec<Vec<usize>>,
                    from: usize,
                    to: usize,
                    cap: i64,
                    cost: i64| {
        adj[from].push(edges.len());
        edges.push(Edge {
            to,
            cap,
            cost,
            flow: 0,
        });
        adj[to].push(edges.len());
        edges.push(Edge {
            to: from,
            cap: 0,
            cost: -cost,
            flow: 0,
        });
    };

    for (i, &s) in supply.iter().enumerate() {
        add_edge(&mut edges, &mut adj, source, i, s, 0);
    }
    for (j, &d) in demand.iter().enumerate() {
        add_edge(&mut edges, &mut adj, n + j, sink, d, 0);
    }
    for i in 0..n {
        for j in 0..n {
            add_edge(&mut edges, &mut adj, i, n + j, i64::MAX / 4, cost(i, j));
        }
    }

    let mut total_cost = 0i64;
    loop {
        // Bellman-Ford shortest path in the residual graph.
        let mut dist = vec![i64::MAX / 2; n_nodes];
        let mut parent_edge = vec![usize::MAX; n_nodes];
        dist[source] = 0;
        for _ in 0..n_nodes {
            let mut changed = false;
            for node in 0..n_nodes {
                if dist[node] >= i64::MAX / 2 {
                    continue;
                }
                for &eid in &adj[node] {
                    let e = &edges[eid];
                    if e.cap - e.flow > 0 && dist[node] + e.cost < dist[e.to] {
                        dist[e.to] = dist[node] + e.cost;
                        parent_edge[e.to] = eid;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        if parent_edge[sink] == usize::MAX {
            break;
        }
        // Maximum pushable flow along the path.
        let mut push = i64::MAX;
        let mut node = sink;
        while node != source {
            let e = &edges[parent_edge[node]];
            push = push.min(e.cap - e.flow);
            node = edges[parent_edge[node] ^ 1].to;
        }
        let mut node = sink;
        while node != source {
            let eid = parent_edge[node];
            edges[eid].flow += push;
            edges[eid ^ 1].flow -= push;
            total_cost += push * edges[eid].cost;
            node = edges[eid ^ 1].to;
        }
    }
    total_cost
}

/// 64-bit FNV-1a over a byte string, written from the published constants.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transport_hand_checked_cases() {
        // Identical counts: zero cost.
        assert_eq!(transport_emd_counts(&[3, 7], &[3, 7]), 0.0);
        // Fully disjoint mass: all of it moves, distance 1.
        assert_eq!(transport_emd_counts(&[5, 0], &[0, 5]), 1.0);
        // (0.8, 0.2) vs (0.5, 0.5): 0.3 of the mass moves.
        let d = transport_emd_counts(&[8, 2], &[5, 5]);
        assert!((d - 0.3).abs() < 1e-12);
    }

    #[test]
    fn fnv_reference_vectors() {
        // Published FNV-1a test vectors.
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }
}
