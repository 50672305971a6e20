//! Multifrontal sparse LU with a nested-dissection ordering.
//!
//! Variables without a structural diagonal entry (pressure means, the gauge
//! multiplier) are never chosen by the ordering; each one is eliminated in the
//! front of the lowest common ancestor of its neighbours, where partial
//! pivoting among the fully summed rows finds a nonzero pivot.

use std::collections::HashMap;

use nalgebra::DMatrix;

use super::sparse::CsrMatrix;
use super::SolverError;

/// Target number of variables in a nested-dissection leaf.
const LEAF_SIZE: usize = 48;

#[derive(Debug, Clone)]
struct Node {
    /// Fully summed variables, eliminated here.
    vars: Vec<usize>,
    /// Variables of the contribution block.
    border: Vec<usize>,
    children: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct SymbolicLu {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    /// Postorder: children precede parents.
    nodes: Vec<Node>,
}

impl SymbolicLu {
    pub fn analyze(a: &CsrMatrix) -> Result<Self, SolverError> {
        if a.nrows != a.ncols {
            return Err(SolverError::DimensionMismatch { rows: a.nrows, cols: a.ncols });
        }
        let n = a.nrows;
        let adj = symmetric_adjacency(a);
        let has_diag: Vec<bool> = (0..n).map(|i| a.position(i, i).is_some()).collect();

        // supervariables: pivotable variables with identical closed neighbourhoods
        let mut groups: HashMap<Vec<usize>, usize> = HashMap::new();
        let mut super_of = vec![usize::MAX; n];
        let mut members: Vec<Vec<usize>> = Vec::new();
        for i in 0..n {
            if !has_diag[i] {
                continue;
            }
            let mut key = adj[i].clone();
            key.push(i);
            key.sort_unstable();
            let next = members.len();
            let s = *groups.entry(key).or_insert(next);
            if s == next {
                members.push(Vec::new());
            }
            members[s].push(i);
            super_of[i] = s;
        }
        let ns = members.len();
        let mut sadj: Vec<Vec<usize>> = vec![Vec::new(); ns];
        for s in 0..ns {
            let rep = members[s][0];
            let mut nb: Vec<usize> = adj[rep].iter().filter(|&&j| has_diag[j]).map(|&j| super_of[j]).filter(|&t| t != s).collect();
            nb.sort_unstable();
            nb.dedup();
            sadj[s] = nb;
        }
        let weight: Vec<usize> = members.iter().map(|m| m.len()).collect();

        let mut nd = Dissection::new(&sadj, &weight);
        let all: Vec<usize> = (0..ns).collect();
        let root = if ns > 0 { Some(nd.dissect(all)) } else { None };
        let mut nodes: Vec<Node> = nd
            .nodes
            .into_iter()
            .map(|(sv, children)| Node { vars: sv.iter().flat_map(|&s| members[s].iter().copied()).collect(), border: Vec::new(), children })
            .collect();
        let root = match root {
            Some(r) => r,
            None => {
                nodes.push(Node { vars: Vec::new(), border: Vec::new(), children: Vec::new() });
                nodes.len() - 1
            }
        };
        debug_assert_eq!(root, nodes.len() - 1);

        // parents and depths for LCA queries
        let nn = nodes.len();
        let mut parent = vec![usize::MAX; nn];
        for (i, nd) in nodes.iter().enumerate() {
            for &c in &nd.children {
                parent[c] = i;
            }
        }
        let mut depth = vec![0usize; nn];
        for i in (0..nn).rev() {
            if parent[i] != usize::MAX {
                depth[i] = depth[parent[i]] + 1;
            }
        }
        let lca = |mut x: usize, mut y: usize| {
            while x != y {
                if depth[x] >= depth[y] {
                    x = parent[x];
                } else {
                    y = parent[y];
                }
            }
            x
        };
        let mut node_of = vec![usize::MAX; n];
        for (i, nd) in nodes.iter().enumerate() {
            for &v in &nd.vars {
                node_of[v] = i;
            }
        }
        let mut pending: Vec<usize> = (0..n).filter(|&i| !has_diag[i]).collect();
        loop {
            let mut progress = false;
            let mut rest = Vec::new();
            for &v in &pending {
                let placed: Vec<usize> = adj[v].iter().map(|&j| node_of[j]).filter(|&x| x != usize::MAX).collect();
                if placed.len() < adj[v].len() && placed.is_empty() {
                    rest.push(v);
                    continue;
                }
                let target = placed.into_iter().reduce(&lca).unwrap_or(root);
                node_of[v] = target;
                progress = true;
            }
            // variables whose neighbours are all delayed and unplaced wait one round
            if rest.is_empty() {
                break;
            }
            if !progress {
                for &v in &rest {
                    node_of[v] = root;
                }
                break;
            }
            pending = rest;
        }
        for nd in nodes.iter_mut() {
            nd.vars.clear();
        }
        for v in 0..n {
            nodes[node_of[v]].vars.push(v);
        }

        // symbolic borders
        let mut mark = vec![usize::MAX; n];
        for i in 0..nn {
            let mut border = Vec::new();
            for &v in &nodes[i].vars {
                mark[v] = i;
            }
            let children = nodes[i].children.clone();
            for &c in &children {
                for &v in &nodes[c].border {
                    if node_of[v] > i && mark[v] != i {
                        mark[v] = i;
                        border.push(v);
                    }
                }
            }
            for vi in 0..nodes[i].vars.len() {
                let v = nodes[i].vars[vi];
                for &j in &adj[v] {
                    if node_of[j] > i && mark[j] != i {
                        mark[j] = i;
                        border.push(j);
                    }
                }
            }
            border.sort_unstable_by_key(|&v| (node_of[v], v));
            nodes[i].border = border;
        }
        Ok(SymbolicLu { n, row_ptr: a.row_ptr.clone(), col_idx: a.col_idx.clone(), nodes })
    }

    pub fn matches(&self, a: &CsrMatrix) -> bool {
        a.nrows == self.n && a.ncols == self.n && a.row_ptr == self.row_ptr && a.col_idx == self.col_idx
    }

    /// Number of entries stored in the factors.
    pub fn factor_size(&self) -> usize {
        self.nodes
            .iter()
            .map(|nd| {
                let (p, b) = (nd.vars.len(), nd.border.len());
                p * (p + b) + p * b
            })
            .sum()
    }

    pub fn num_fronts(&self) -> usize {
        self.nodes.len()
    }

    pub fn max_front(&self) -> usize {
        self.nodes.iter().map(|nd| nd.vars.len() + nd.border.len()).max().unwrap_or(0)
    }
}

/// Sorted adjacency of the symmetrised pattern without self loops.
fn symmetric_adjacency(a: &CsrMatrix) -> Vec<Vec<usize>> {
    let n = a.nrows;
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for r in 0..n {
        let (cs, _) = a.row(r);
        for &c in cs {
            if c != r {
                adj[r].push(c);
                adj[c].push(r);
            }
        }
    }
    for l in adj.iter_mut() {
        l.sort_unstable();
        l.dedup();
    }
    adj
}

struct Dissection<'a> {
    adj: &'a [Vec<usize>],
    weight: &'a [usize],
    stamp: Vec<u32>,
    level: Vec<usize>,
    epoch: u32,
    /// (supervariables, children) in creation (post) order.
    nodes: Vec<(Vec<usize>, Vec<usize>)>,
}

impl<'a> Dissection<'a> {
    fn new(adj: &'a [Vec<usize>], weight: &'a [usize]) -> Self {
        let n = adj.len();
        Dissection { adj, weight, stamp: vec![0; n], level: vec![0; n], epoch: 0, nodes: Vec::new() }
    }

    fn push(&mut self, vars: Vec<usize>, children: Vec<usize>) -> usize {
        self.nodes.push((vars, children));
        self.nodes.len() - 1
    }

    fn new_epoch(&mut self, set: &[usize]) -> u32 {
        self.epoch += 2;
        for &v in set {
            self.stamp[v] = self.epoch;
        }
        self.epoch
    }

    /// BFS inside the stamped set from `start`; returns the level sets.
    /// Visited vertices get stamp `epoch + 1`; callers re-stamp as needed.
    fn bfs(&mut self, start: usize, epoch: u32) -> Vec<Vec<usize>> {
        let mut levels = vec![vec![start]];
        self.stamp[start] = epoch + 1;
        self.level[start] = 0;
        loop {
            let mut next = Vec::new();
            let d = levels.len();
            for &v in levels.last().unwrap() {
                for &w in &self.adj[v] {
                    if self.stamp[w] == epoch {
                        self.stamp[w] = epoch + 1;
                        self.level[w] = d;
                        next.push(w);
                    }
                }
            }
            if next.is_empty() {
                break;
            }
            levels.push(next);
        }
        levels
    }

    fn dissect(&mut self, set: Vec<usize>) -> usize {
        let total: usize = set.iter().map(|&v| self.weight[v]).sum();
        if total <= LEAF_SIZE || set.len() <= 2 {
            return self.push(set, Vec::new());
        }
        // connected components
        let epoch = self.new_epoch(&set);
        let first = self.bfs(set[0], epoch);
        let reached: usize = first.iter().map(|l| l.len()).sum();
        if reached < set.len() {
            let mut comps: Vec<Vec<usize>> = vec![first.concat()];
            for &v in &set {
                if self.stamp[v] == epoch {
                    comps.push(self.bfs(v, epoch).concat());
                }
            }
            let children: Vec<usize> = comps.into_iter().map(|c| self.dissect(c)).collect();
            return self.push(Vec::new(), children);
        }
        // pseudo-peripheral start vertex
        let mut start = set[0];
        let mut levels = first;
        let _ = epoch;
        for _ in 0..4 {
            let last = levels.last().unwrap();
            let cand = *last.iter().min_by_key(|&&v| self.adj[v].len()).unwrap();
            let epoch = self.new_epoch(&set);
            let trial = self.bfs(cand, epoch);
            if trial.len() > levels.len() {
                levels = trial;
                start = cand;
            } else {
                break;
            }
        }
        // redo the search from the chosen vertex so stamps and levels match `levels`
        let epoch = self.new_epoch(&set);
        let levels = self.bfs(start, epoch);
        let d = levels.len();
        if d < 3 {
            return self.push(set, Vec::new());
        }
        let lw: Vec<usize> = levels.iter().map(|l| l.iter().map(|&v| self.weight[v]).sum()).collect();
        let mut best = None;
        let mut before = 0usize;
        for i in 0..d {
            let frac = before as f64 / total as f64;
            let after = total - before - lw[i];
            if i > 0 && i + 1 < d && frac >= 0.3 && (after as f64 / total as f64) >= 0.3 {
                let better = match best {
                    None => true,
                    Some((_, w)) => lw[i] < w,
                };
                if better {
                    best = Some((i, lw[i]));
                }
            }
            before += lw[i];
        }
        let s = match best {
            Some((i, _)) => i,
            None => {
                let mut acc = 0;
                let mut s = d / 2;
                for i in 0..d {
                    acc += lw[i];
                    if 2 * acc >= total {
                        s = i;
                        break;
                    }
                }
                s.clamp(1, d - 2)
            }
        };
        let mut left: Vec<usize> = levels[..s].concat();
        let right: Vec<usize> = levels[s + 1..].concat();
        let mut sep = Vec::new();
        for &v in &levels[s] {
            if self.adj[v].iter().any(|&w| self.stamp[w] == epoch + 1 && self.level_of(w) > s) {
                sep.push(v);
            } else {
                left.push(v);
            }
        }
        let a = self.dissect(left);
        let b = self.dissect(right);
        self.push(sep, vec![a, b])
    }

    fn level_of(&self, v: usize) -> usize {
        self.level[v]
    }
}

#[derive(Debug, Clone)]
struct FrontFactor {
    /// Columns of the front for the fully summed variables: unit-lower L11
    /// and U11 in the top block, L21 below.
    panel: DMatrix<f64>,
    /// U12 (`p x b`).
    u12: DMatrix<f64>,
    /// Row interchanges applied in order within the fully summed rows.
    swaps: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct SparseLu {
    factors: Vec<FrontFactor>,
    n: usize,
}

impl SparseLu {
    pub fn factor(sym: &SymbolicLu, a: &CsrMatrix) -> Result<Self, SolverError> {
        if !sym.matches(a) {
            return Err(SolverError::PatternMismatch);
        }
        let n = sym.n;
        let at = a.transpose();
        let mut pos = vec![usize::MAX; n];
        let mut stack: Vec<DMatrix<f64>> = Vec::new();
        let mut factors = Vec::with_capacity(sym.nodes.len());
        for (ni, node) in sym.nodes.iter().enumerate() {
            let p = node.vars.len();
            let b = node.border.len();
            let m = p + b;
            for (i, &v) in node.vars.iter().chain(&node.border).enumerate() {
                pos[v] = i;
            }
            let mut front = DMatrix::<f64>::zeros(m, m);
            for (li, &v) in node.vars.iter().enumerate() {
                let (cs, vs) = a.row(v);
                for (&c, &x) in cs.iter().zip(vs) {
                    let pc = pos[c];
                    if pc != usize::MAX {
                        front[(li, pc)] += x;
                    }
                }
                let (rs, vs) = at.row(v);
                for (&r, &x) in rs.iter().zip(vs) {
                    let pr = pos[r];
                    if pr != usize::MAX && pr >= p {
                        front[(pr, li)] += x;
                    }
                }
            }
            // extend-add children contribution blocks (top of the stack, in order)
            let nch = node.children.len();
            let first = stack.len() - nch;
            for (k, cb) in stack.drain(first..).enumerate() {
                let child = &sym.nodes[node.children[k]];
                let map: Vec<usize> = child.border.iter().map(|&v| pos[v]).collect();
                debug_assert!(map.iter().all(|&x| x != usize::MAX));
                for (cj, &fj) in map.iter().enumerate() {
                    let src = cb.column(cj);
                    let mut dst = front.column_mut(fj);
                    for (ci, &fi) in map.iter().enumerate() {
                        dst[fi] += src[ci];
                    }
                }
            }
            // partial factorisation of the fully summed block
            let mut swaps = Vec::with_capacity(p);
            for c in 0..p {
                let mut piv = c;
                let mut best = front[(c, c)].abs();
                for r in c + 1..p {
                    let v = front[(r, c)].abs();
                    if v > best {
                        best = v;
                        piv = r;
                    }
                }
                if !(best > 0.0) || !best.is_finite() {
                    for &v in node.vars.iter().chain(&node.border) {
                        pos[v] = usize::MAX;
                    }
                    return Err(SolverError::SingularPivot { index: node.vars[c], front: ni });
                }
                if piv != c {
                    front.swap_rows(c, piv);
                }
                swaps.push(piv);
                let d = 1.0 / front[(c, c)];
                for r in c + 1..m {
                    front[(r, c)] *= d;
                }
                // update the remaining panel columns
                for j in c + 1..p {
                    let ucj = front[(c, j)];
                    if ucj != 0.0 {
                        let (lcol, mut tcol) = front.columns_range_pair_mut(c, j);
                        for r in c + 1..m {
                            tcol[r] -= lcol[r] * ucj;
                        }
                    }
                }
            }
            // U12 = L11^{-1} F12
            let mut u12 = front.view((0, p), (p, b)).clone_owned();
            for j in 0..b {
                for c in 0..p {
                    let x = u12[(c, j)];
                    if x != 0.0 {
                        for r in c + 1..p {
                            u12[(r, j)] -= front[(r, c)] * x;
                        }
                    }
                }
            }
            let panel = front.columns(0, p).clone_owned();
            let mut cb = front.view((p, p), (b, b)).clone_owned();
            if p > 0 && b > 0 {
                let l21 = panel.rows(p, b);
                cb.gemm(-1.0, &l21, &u12, 1.0);
            }
            stack.push(cb);
            for &v in node.vars.iter().chain(&node.border) {
                pos[v] = usize::MAX;
            }
            factors.push(FrontFactor { panel, u12, swaps });
        }
        let lu = SparseLu { factors, n };
        Ok(lu)
    }

    pub fn solve_with(&self, sym: &SymbolicLu, rhs: &[f64]) -> Vec<f64> {
        assert_eq!(rhs.len(), self.n);
        let mut x = rhs.to_vec();
        let mut xi = Vec::new();
        for (node, f) in sym.nodes.iter().zip(&self.factors) {
            let p = node.vars.len();
            xi.clear();
            xi.extend(node.vars.iter().map(|&v| x[v]));
            for (c, &r) in f.swaps.iter().enumerate() {
                xi.swap(c, r);
            }
            for c in 0..p {
                let xc = xi[c];
                if xc != 0.0 {
                    let col = f.panel.column(c);
                    for r in c + 1..p {
                        xi[r] -= col[r] * xc;
                    }
                    for (k, &v) in node.border.iter().enumerate() {
                        x[v] -= col[p + k] * xc;
                    }
                }
            }
            for (k, &v) in node.vars.iter().enumerate() {
                x[v] = xi[k];
            }
        }
        for (node, f) in sym.nodes.iter().zip(&self.factors).rev() {
            let p = node.vars.len();
            xi.clear();
            xi.extend(node.vars.iter().map(|&v| x[v]));
            for (k, &v) in node.border.iter().enumerate() {
                let xb = x[v];
                if xb != 0.0 {
                    let col = f.u12.column(k);
                    for r in 0..p {
                        xi[r] -= col[r] * xb;
                    }
                }
            }
            for c in (0..p).rev() {
                xi[c] /= f.panel[(c, c)];
                let xc = xi[c];
                if xc != 0.0 {
                    let col = f.panel.column(c);
                    for r in 0..c {
                        xi[r] -= col[r] * xc;
                    }
                }
            }
            for (k, &v) in node.vars.iter().enumerate() {
                x[v] = xi[k];
            }
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid_laplacian(n: usize) -> CsrMatrix {
        let id = |i: usize, j: usize| i * n + j;
        let mut t = Vec::new();
        for i in 0..n {
            for j in 0..n {
                t.push((id(i, j), id(i, j), 4.0));
                if i > 0 {
                    t.push((id(i, j), id(i - 1, j), -1.0));
                }
                if i + 1 < n {
                    t.push((id(i, j), id(i + 1, j), -1.0));
                }
                if j > 0 {
                    t.push((id(i, j), id(i, j - 1), -1.2));
                }
                if j + 1 < n {
                    t.push((id(i, j), id(i, j + 1), -0.8));
                }
            }
        }
        CsrMatrix::from_triplets(n * n, n * n, &t)
    }

    fn residual(a: &CsrMatrix, x: &[f64], b: &[f64]) -> f64 {
        let ax = a.mul_vec(x);
        let r: f64 = ax.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        r / b.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    #[test]
    fn nonsymmetric_grid() {
        let a = grid_laplacian(30);
        let sym = SymbolicLu::analyze(&a).unwrap();
        assert!(sym.num_fronts() > 1);
        let lu = SparseLu::factor(&sym, &a).unwrap();
        let b: Vec<f64> = (0..a.nrows).map(|i| (i as f64 * 0.37).sin()).collect();
        let x = lu.solve_with(&sym, &b);
        assert!(residual(&a, &x, &b) < 1e-13);
    }

    #[test]
    fn saddle_point_with_zero_diagonal() {
        // [A B^T; B 0] with A a grid operator and B selecting pairs
        let a = grid_laplacian(8);
        let n = a.nrows;
        let m = 10;
        let mut t = Vec::new();
        for r in 0..n {
            let (cs, vs) = a.row(r);
            for (&c, &v) in cs.iter().zip(vs) {
                t.push((r, c, v));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for q in 0..m {
            for _ in 0..3 {
                let j = rng.random_range(0..n);
                let v: f64 = rng.random_range(0.5..1.5);
                t.push((n + q, j, v));
                t.push((j, n + q, v));
            }
        }
        let s = CsrMatrix::from_triplets(n + m, n + m, &t);
        let sym = SymbolicLu::analyze(&s).unwrap();
        let lu = SparseLu::factor(&sym, &s).unwrap();
        let b: Vec<f64> = (0..n + m).map(|i| 1.0 + (i % 7) as f64).collect();
        let x = lu.solve_with(&sym, &b);
        let dense = s.to_dense().lu().solve(&nalgebra::DVector::from_vec(b.clone())).unwrap();
        for i in 0..n + m {
            assert!((x[i] - dense[i]).abs() < 1e-11 * dense.amax());
        }
    }

    #[test]
    fn singular_reports_pivot() {
        let a = CsrMatrix::from_triplets(3, 3, &[(0, 0, 1.0), (1, 1, 0.0), (2, 2, 1.0), (0, 2, 1.0)]);
        let sym = SymbolicLu::analyze(&a).unwrap();
        assert!(matches!(SparseLu::factor(&sym, &a), Err(SolverError::SingularPivot { index: 1, .. })));
    }
}
