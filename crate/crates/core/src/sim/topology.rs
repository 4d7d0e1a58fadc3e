//! Overlay graph queries.

use std::collections::VecDeque;

use crate::ids::NodeId;

/// Breadth-first hop counts from `sources` over `adjacency`, following only
/// edges accepted by `usable`. Unreached nodes get `None`.
pub fn hop_distances(
    adjacency: &[Vec<NodeId>],
    sources: &[NodeId],
    usable: impl Fn(NodeId, NodeId) -> bool,
) -> Vec<Option<u32>> {
    let mut dist = vec![None; adjacency.len()];
    let mut queue = VecDeque::new();
    for &s in sources {
        if dist[s.index()].is_none() {
            dist[s.index()] = Some(0);
            queue.push_back(s);
        }
    }
    while let Some(n) = queue.pop_front() {
        let d = dist[n.index()].expect("queued nodes have a distance");
        for &p in &adjacency[n.index()] {
            if dist[p.index()].is_none() && usable(n, p) {
                dist[p.index()] = Some(d + 1);
                queue.push_back(p);
            }
        }
    }
    dist
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ring(n: u32) -> Vec<Vec<NodeId>> {
        (0..n).map(|i| vec![NodeId((i + 1) % n), NodeId((i + n - 1) % n)]).collect()
    }

    #[test]
    fn ring_of_six_farthest_is_three_hops() {
        let d = hop_distances(&ring(6), &[NodeId(0)], |_, _| true);
        assert_eq!(d.iter().map(|x| x.unwrap()).max(), Some(3));
        assert_eq!(d[3], Some(3));
    }

    #[test]
    fn cut_edges_are_not_followed() {
        let d = hop_distances(&ring(4), &[NodeId(0)], |a, b| !(a.0.min(b.0) == 0 && a.0.max(b.0) == 1));
        assert_eq!(d[1], Some(3));
        let blocked = hop_distances(&ring(4), &[NodeId(0)], |_, _| false);
        assert_eq!(blocked, vec![Some(0), None, None, None]);
    }
}
