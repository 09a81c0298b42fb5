use std::collections::VecDeque;

use super::sentence::{validate_heads, Sentence};
use crate::error::Result;

/// Dependency tree restricted to the neighborhood of the subject-object path
/// through their lowest common ancestor. The adjacency is symmetric and has
/// self-loops on kept tokens; pruned tokens have no edges at all.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrunedTree {
    n: usize,
    kept: Vec<bool>,
    adj: Vec<bool>,
}

impl PrunedTree {
    /// The whole dependency tree as an undirected graph with self-loops.
    pub fn full(s: &Sentence) -> Result<Self> {
        validate_heads(&s.heads)?;
        let n = s.len();
        let mut adj = vec![false; n * n];
        for i in 0..n {
            adj[i * n + i] = true;
            if let Some(p) = parent(&s.heads, i) {
                adj[i * n + p] = true;
                adj[p * n + i] = true;
            }
        }
        Ok(Self {
            n,
            kept: vec![true; n],
            adj,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn is_kept(&self, i: usize) -> bool {
        self.kept[i]
    }

    pub fn kept_indices(&self) -> Vec<usize> {
        (0..self.n).filter(|&i| self.kept[i]).collect()
    }

    pub fn adjacent(&self, i: usize, j: usize) -> bool {
        self.adj[i * self.n + j]
    }

    /// Number of neighbors including the self-loop.
    pub fn degree(&self, i: usize) -> usize {
        (0..self.n).filter(|&j| self.adjacent(i, j)).count()
    }

    /// Unordered tree edges `(i, j)` with `i < j`, excluding self-loops.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in i + 1..self.n {
                if self.adjacent(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }
}

fn parent(heads: &[usize], i: usize) -> Option<usize> {
    heads[i].checked_sub(1)
}

pub fn prune_dependency_tree(s: &Sentence, k: usize) -> Result<PrunedTree> {
    let heads = &s.heads;
    validate_heads(heads)?;
    let n = heads.len();

    let mut depth = vec![0usize; n];
    for (i, d) in depth.iter_mut().enumerate() {
        let mut cur = i;
        while let Some(p) = parent(heads, cur) {
            *d += 1;
            cur = p;
        }
    }

    let targets: Vec<usize> = s.subj.indices().chain(s.obj.indices()).collect();

    // Lift the deepest of the current nodes until they all meet.
    let mut frontier = targets.clone();
    loop {
        let first = frontier[0];
        if frontier.iter().all(|&x| x == first) {
            break;
        }
        let deepest = frontier.iter().map(|&x| depth[x]).max().unwrap();
        for x in frontier.iter_mut() {
            if depth[*x] == deepest {
                *x = parent(heads, *x).expect("non-root node has a parent");
            }
        }
    }
    let lca = frontier[0];

    let mut on_path = vec![false; n];
    for &t in &targets {
        let mut cur = t;
        on_path[cur] = true;
        while cur != lca {
            cur = parent(heads, cur).expect("lca is an ancestor");
            on_path[cur] = true;
        }
    }

    let mut neighbors = vec![Vec::new(); n];
    for i in 0..n {
        if let Some(p) = parent(heads, i) {
            neighbors[i].push(p);
            neighbors[p].push(i);
        }
    }
    let mut dist = vec![usize::MAX; n];
    let mut queue = VecDeque::new();
    for i in (0..n).filter(|&i| on_path[i]) {
        dist[i] = 0;
        queue.push_back(i);
    }
    while let Some(u) = queue.pop_front() {
        for &v in &neighbors[u] {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }

    let kept: Vec<bool> = dist.iter().map(|&d| d <= k).collect();
    let mut adj = vec![false; n * n];
    for i in 0..n {
        if !kept[i] {
            continue;
        }
        adj[i * n + i] = true;
        if let Some(p) = parent(heads, i) {
            if kept[p] {
                adj[i * n + p] = true;
                adj[p * n + i] = true;
            }
        }
    }
    Ok(PrunedTree { n, kept, adj })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::sentence::Span;

    fn tree(heads: Vec<usize>, subj: (usize, usize), obj: (usize, usize)) -> Sentence {
        let n = heads.len();
        Sentence {
            id: None,
            tokens: (0..n).map(|i| format!("t{i}")).collect(),
            subj: Span::new(subj.0, subj.1),
            obj: Span::new(obj.0, obj.1),
            subj_type: "PER".into(),
            obj_type: "CITY".into(),
            pos: vec!["NN".into(); n],
            ner: vec!["O".into(); n],
            heads,
            relation: "r".into(),
        }
    }

    #[test]
    fn visited_yesterday() {
        // SUBJ-PER visited OBJ-CITY yesterday
        let s = tree(vec![2, 0, 2, 2], (0, 0), (2, 2));
        let p = prune_dependency_tree(&s, 0).unwrap();
        assert_eq!(p.kept_indices(), vec![0, 1, 2]);
        assert_eq!(p.edges(), vec![(0, 1), (1, 2)]);
        for i in 0..3 {
            assert!(p.adjacent(i, i));
        }
        assert!(!p.adjacent(3, 3));
        assert!(!p.adjacent(1, 3));

        let full = prune_dependency_tree(&s, 1).unwrap();
        assert_eq!(full.kept_indices(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn subject_ancestor_of_object_on_chain() {
        // Chain 0 <- 1 <- 2 <- 3 <- 4 with 0 as the root; subject 1, object 3.
        let s = tree(vec![0, 1, 2, 3, 4], (1, 1), (3, 3));
        let p = prune_dependency_tree(&s, 0).unwrap();
        assert_eq!(p.kept_indices(), vec![1, 2, 3]);
        assert_eq!(p.edges(), vec![(1, 2), (2, 3)]);
    }

    #[test]
    fn large_k_keeps_whole_tree() {
        let s = tree(vec![0, 1, 1, 2, 2, 3, 6], (3, 3), (6, 6));
        let p = prune_dependency_tree(&s, 7).unwrap();
        assert_eq!(p.kept_indices().len(), 7);
        assert_eq!(p.edges().len(), 6);
    }

    #[test]
    fn invalid_tree_is_structural_error() {
        let s = tree(vec![2, 1, 0], (0, 0), (2, 2));
        assert!(matches!(
            prune_dependency_tree(&s, 1),
            Err(crate::Error::Structure(_))
        ));
    }
}
