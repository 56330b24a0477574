//! Strongly connected components and reachability on adjacency lists.

use std::collections::VecDeque;

/// Tarjan's algorithm, iterative so that long chains of cells cannot blow the
/// stack. Components come out in reverse topological order of the
/// condensation (sinks first).
pub fn tarjan_scc(adj: &[Vec<usize>]) -> Vec<Vec<usize>> {
    const UNSEEN: usize = usize::MAX;
    let n = adj.len();
    let mut index = vec![UNSEEN; n];
    let mut low = vec![0usize; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut comps = Vec::new();
    let mut next = 0usize;
    // (node, position in its adjacency list)
    let mut call: Vec<(usize, usize)> = Vec::new();

    for root in 0..n {
        if index[root] != UNSEEN {
            continue;
        }
        call.push((root, 0));
        index[root] = next;
        low[root] = next;
        next += 1;
        stack.push(root);
        on_stack[root] = true;

        while let Some(top) = call.last_mut() {
            let v = top.0;
            if let Some(&w) = adj[v].get(top.1) {
                top.1 += 1;
                if index[w] == UNSEEN {
                    index[w] = next;
                    low[w] = next;
                    next += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
                continue;
            }
            call.pop();
            if let Some(&(parent, _)) = call.last() {
                low[parent] = low[parent].min(low[v]);
            }
            if low[v] == index[v] {
                let mut comp = Vec::new();
                loop {
                    let w = stack.pop().expect("tarjan stack underflow");
                    on_stack[w] = false;
                    comp.push(w);
                    if w == v {
                        break;
                    }
                }
                comp.sort_unstable();
                comps.push(comp);
            }
        }
    }
    comps
}

/// Strongly connected components with no edge leaving them, each sorted,
/// ordered by smallest member.
pub fn closed_classes(adj: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let comps = tarjan_scc(adj);
    let mut owner = vec![0usize; adj.len()];
    for (c, comp) in comps.iter().enumerate() {
        for &v in comp {
            owner[v] = c;
        }
    }
    let mut closed: Vec<Vec<usize>> = comps
        .iter()
        .enumerate()
        .filter(|(c, comp)| comp.iter().all(|&v| adj[v].iter().all(|&w| owner[w] == *c)))
        .map(|(_, comp)| comp.clone())
        .collect();
    closed.sort_by_key(|c| c[0]);
    closed
}

/// Nodes reachable from `sources` by paths of length >= 1.
pub fn reachable_after_one_step(adj: &[Vec<usize>], sources: &[usize]) -> Vec<bool> {
    let mut seen = vec![false; adj.len()];
    let mut queue = VecDeque::new();
    for &s in sources {
        for &w in &adj[s] {
            if !seen[w] {
                seen[w] = true;
                queue.push_back(w);
            }
        }
    }
    while let Some(v) = queue.pop_front() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                queue.push_back(w);
            }
        }
    }
    seen
}

/// Nodes reachable from `sources` by paths of length >= 0.
pub fn reachable(adj: &[Vec<usize>], sources: &[usize]) -> Vec<bool> {
    let mut seen = reachable_after_one_step(adj, sources);
    for &s in sources {
        seen[s] = true;
    }
    seen
}
