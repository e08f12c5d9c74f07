//! Small directed-graph helpers over adjacency lists indexed `0..n`.

/// Strongly connected components (iterative Tarjan).
///
/// Each component is sorted ascending; components are ordered by their
/// smallest member so the output does not depend on traversal order.
pub fn strongly_connected_components(adj: &[Vec<usize>]) -> Vec<Vec<usize>> {
    const UNVISITED: usize = usize::MAX;
    let n = adj.len();
    let mut index = vec![UNVISITED; n];
    let mut low = vec![0usize; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut next_index = 0;
    let mut comps = Vec::new();
    // (vertex, position in its adjacency list)
    let mut call: Vec<(usize, usize)> = Vec::new();

    for root in 0..n {
        if index[root] != UNVISITED {
            continue;
        }
        call.push((root, 0));
        index[root] = next_index;
        low[root] = next_index;
        next_index += 1;
        stack.push(root);
        on_stack[root] = true;

        while let Some(&mut (v, ref mut pos)) = call.last_mut() {
            if *pos < adj[v].len() {
                let w = adj[v][*pos];
                *pos += 1;
                if index[w] == UNVISITED {
                    index[w] = next_index;
                    low[w] = next_index;
                    next_index += 1;
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
    comps.sort_by_key(|c| c[0]);
    comps
}

/// The largest strongly connected component; ties go to the component with
/// the smallest member. Empty for an empty graph.
pub fn largest_scc(adj: &[Vec<usize>]) -> Vec<usize> {
    strongly_connected_components(adj)
        .into_iter()
        .fold(Vec::new(), |best, c| if c.len() > best.len() { c } else { best })
}

/// Adjacency lists of the edges with strictly positive weight.
pub fn positive_adjacency(weights: &[Vec<f64>]) -> Vec<Vec<usize>> {
    weights
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .filter(|(_, &w)| w > 0.0)
                .map(|(j, _)| j)
                .collect()
        })
        .collect()
}

/// Every vertex reachable from `start` (including `start`), ascending.
pub fn reachable_from(adj: &[Vec<usize>], start: &[usize]) -> Vec<usize> {
    let mut seen = vec![false; adj.len()];
    let mut todo: Vec<usize> = Vec::new();
    for &s in start {
        if !seen[s] {
            seen[s] = true;
            todo.push(s);
        }
    }
    while let Some(v) = todo.pop() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                todo.push(w);
            }
        }
    }
    seen.iter()
        .enumerate()
        .filter(|(_, &s)| s)
        .map(|(i, _)| i)
        .collect()
}
