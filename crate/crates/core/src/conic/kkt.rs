//! Newton-system solver.
//!
//! The interior-point step needs solutions of
//!
//! ```text
//! [ 0   Aᵀ  ] [dx]   [r1]
//! [ A  −WᵀW ] [dz] = [r2]
//! ```
//!
//! A nonnegative block is *owned* when each of its rows has exactly one
//! nonzero and the touched variables are distinct and touched by no other owned row. For
//! owned rows the pair `(dx_o, dz_O)` is eliminated through `WᵀW` itself
//! (never its inverse), leaving the quasi-definite reduced system
//!
//! ```text
//! [ −(A_Ro T A_Roᵀ + H_R)   A_Ru ] [dz_R]
//! [        A_Ruᵀ             0   ] [dx_u]
//! ```
//!
//! with `T = D⁻¹ WᵀW D⁻¹`. It is factored by an envelope LDLᵀ in reverse
//! Cuthill–McKee order with static and dynamic regularization, and the result is polished by iterative
//! refinement against the unreduced system.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use super::cones::ConeScaling;
use super::{ConicProblem, SparseMatrix};

const NONE: usize = usize::MAX;
const STATIC_REG: f64 = 1e-9;
const DYNAMIC_REG_THRESHOLD: f64 = 1e-13;
const DYNAMIC_REG: f64 = 1e-7;
const REG_RETRIES: usize = 4;
const REG_BOOST: f64 = 100.0;
const REFINE_MAX: usize = 10;
const REFINE_REL_TOL: f64 = 1e-13;

struct OwnedBlock {
    cone: usize,
    rows: Range<usize>,
    vars: Vec<usize>,
    coef: Vec<f64>,
    /// reduced rows with a nonzero on one of `vars`
    touching: Vec<usize>,
    /// `A[touching, vars]`
    a_sub: DMatrix<f64>,
    /// `D⁻¹ WᵀW D⁻¹`
    t: DMatrix<f64>,
}

/// Lower-triangular envelope storage with an in-place LDLᵀ. Indices passed
/// in are original; storage is in the permuted order `perm`.
struct Envelope {
    /// position → original index
    perm: Vec<usize>,
    /// original index → position
    pos: Vec<usize>,
    first: Vec<usize>,
    start: Vec<usize>,
    data: Vec<f64>,
    diag: Vec<f64>,
}

/// Reverse Cuthill–McKee order of an undirected graph.
fn reverse_cuthill_mckee(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let mut order = Vec::with_capacity(n);
    let mut seen = vec![false; n];
    let bfs_last = |root: usize, seen_base: &[bool]| -> usize {
        let mut mark = seen_base.to_vec();
        let mut queue = std::collections::VecDeque::from([root]);
        mark[root] = true;
        let mut last = root;
        while let Some(v) = queue.pop_front() {
            last = v;
            for &w in &adj[v] {
                if !mark[w] {
                    mark[w] = true;
                    queue.push_back(w);
                }
            }
        }
        last
    };
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&v| (adj[v].len(), v));
    for &seed in &by_degree {
        if seen[seed] {
            continue;
        }
        // pseudo-peripheral start
        let mut root = seed;
        for _ in 0..2 {
            root = bfs_last(root, &seen);
        }
        let begin = order.len();
        order.push(root);
        seen[root] = true;
        let mut head = begin;
        while head < order.len() {
            let v = order[head];
            head += 1;
            let mut next: Vec<usize> = adj[v].iter().copied().filter(|&w| !seen[w]).collect();
            next.sort_by_key(|&w| (adj[w].len(), w));
            for w in next {
                if !seen[w] {
                    seen[w] = true;
                    order.push(w);
                }
            }
        }
    }
    order.reverse();
    order
}

impl Envelope {
    /// Identity ordering with a given row envelope.
    #[cfg(test)]
    fn new(first: Vec<usize>) -> Self {
        let n = first.len();
        Self::with_layout((0..n).collect(), first)
    }

    /// Reordered envelope of the symmetric pattern `adj`.
    fn from_pattern(adj: &[Vec<usize>]) -> Self {
        let perm = reverse_cuthill_mckee(adj);
        let mut pos = vec![0; perm.len()];
        for (p, &v) in perm.iter().enumerate() {
            pos[v] = p;
        }
        let first = (0..perm.len())
            .map(|p| {
                adj[perm[p]]
                    .iter()
                    .map(|&w| pos[w])
                    .filter(|&q| q < p)
                    .min()
                    .unwrap_or(p)
            })
            .collect();
        Self::with_layout(perm, first)
    }

    fn with_layout(perm: Vec<usize>, first: Vec<usize>) -> Self {
        let mut start = Vec::with_capacity(first.len() + 1);
        let mut acc = 0;
        for (i, &f) in first.iter().enumerate() {
            start.push(acc);
            acc += i - f + 1;
        }
        start.push(acc);
        let n = first.len();
        let mut pos = vec![0; n];
        for (p, &v) in perm.iter().enumerate() {
            pos[v] = p;
        }
        Envelope {
            perm,
            pos,
            first,
            start,
            data: vec![0.0; acc],
            diag: vec![0.0; n],
        }
    }

    fn len(&self) -> usize {
        self.first.len()
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && j >= self.first[i]);
        self.start[i] + (j - self.first[i])
    }

    /// Adds `v` to entry `(i, j)` of the symmetric matrix.
    #[inline]
    fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = (self.pos[i], self.pos[j]);
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    fn is_finite(&self) -> bool {
        self.diag.iter().all(|d| d.is_finite())
    }

    fn clear(&mut self) {
        self.data.fill(0.0);
    }

    /// In-place LDLᵀ. `signs[i]` is the expected pivot sign of original
    /// index `i`. Returns the number of pivots replaced by the dynamic
    /// regularization.
    fn factor(&mut self, signs: &[f64]) -> usize {
        let n = self.len();
        let mut perturbed = 0;
        let signs: Vec<f64> = self.perm.iter().map(|&v| signs[v]).collect();
        for i in 0..n {
            let fi = self.first[i];
            let si = self.start[i];
            // t_j = l_ij d_j, computed into the row storage
            for j in fi..i {
                let fj = self.first[j];
                let sj = self.start[j];
                let lo = fi.max(fj);
                let mut acc = self.data[si + (j - fi)];
                for k in lo..j {
                    acc -= self.data[si + (k - fi)] * self.data[sj + (k - fj)];
                }
                self.data[si + (j - fi)] = acc;
            }
            let mut d = self.data[si + (i - fi)];
            for j in fi..i {
                let t = self.data[si + (j - fi)];
                let l = t / self.diag[j];
                d -= t * l;
                self.data[si + (j - fi)] = l;
            }
            if d * signs[i] <= DYNAMIC_REG_THRESHOLD || !d.is_finite() {
                perturbed += 1;
                d = signs[i] * DYNAMIC_REG;
            }
            self.diag[i] = d;
            self.data[si + (i - fi)] = 1.0;
        }
        perturbed
    }

    fn solve_in_place(&self, rhs: &mut [f64]) {
        let n = self.len();
        let mut b: Vec<f64> = self.perm.iter().map(|&v| rhs[v]).collect();
        for i in 0..n {
            let fi = self.first[i];
            let si = self.start[i];
            let mut acc = b[i];
            for k in fi..i {
                acc -= self.data[si + (k - fi)] * b[k];
            }
            b[i] = acc;
        }
        for i in 0..n {
            b[i] /= self.diag[i];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let si = self.start[i];
            let bi = b[i];
            for k in fi..i {
                b[k] -= self.data[si + (k - fi)] * bi;
            }
        }
        for (p, &v) in self.perm.iter().enumerate() {
            rhs[v] = b[p];
        }
    }
}

pub(crate) struct KktSolver {
    n: usize,
    m: usize,
    a: SparseMatrix,
    cone_ranges: Vec<Range<usize>>,
    owned: Vec<OwnedBlock>,
    /// per cone, `Some(reduced row range)` for non-owned cones
    cone_reduced: Vec<Option<Range<usize>>>,
    red_rows: Vec<usize>,
    unowned_vars: Vec<usize>,
    /// reduced-row entries on unowned variables: (unowned position, value)
    ar_u: Vec<Vec<(usize, f64)>>,
    wtw: Vec<DMatrix<f64>>,
    env: Envelope,
    signs: Vec<f64>,
}

impl KktSolver {
    pub fn new(problem: &ConicProblem) -> Self {
        let n = problem.num_vars();
        let m = problem.num_rows();
        let a = problem.constraint_matrix.clone();
        let cone_ranges = problem.cone_ranges();

        // Owned cones: one nonzero per row, distinct fresh variables. PSD
        // blocks stay in the reduced system; eliminating them squares the
        // conditioning of the Newton matrix near rank-deficient optima.
        let mut var_owned = vec![false; n];
        let mut row_owned = vec![false; m];
        let mut owned_specs: Vec<(usize, Vec<usize>, Vec<f64>)> = Vec::new();
        for (ci, cone) in problem.cones.iter().enumerate() {
            if matches!(
                cone,
                super::Cone::Zero(_) | super::Cone::SecondOrder(_) | super::Cone::Psd(_)
            ) {
                continue;
            }
            let range = cone_ranges[ci].clone();
            let mut vars = Vec::with_capacity(range.len());
            let mut coef = Vec::with_capacity(range.len());
            let mut ok = true;
            for r in range.clone() {
                if a.row_len(r) != 1 {
                    ok = false;
                    break;
                }
                let (c, v) = a.row(r).next().unwrap();
                if var_owned[c] || vars.contains(&c) {
                    ok = false;
                    break;
                }
                vars.push(c);
                coef.push(v);
            }
            if ok {
                for &v in &vars {
                    var_owned[v] = true;
                }
                for r in range {
                    row_owned[r] = true;
                }
                owned_specs.push((ci, vars, coef));
            }
        }

        let red_rows: Vec<usize> = (0..m).filter(|&r| !row_owned[r]).collect();
        let mut row_to_red = vec![NONE; m];
        for (k, &r) in red_rows.iter().enumerate() {
            row_to_red[r] = k;
        }
        let unowned_vars: Vec<usize> = (0..n).filter(|&j| !var_owned[j]).collect();
        let mut var_to_unowned = vec![NONE; n];
        for (k, &j) in unowned_vars.iter().enumerate() {
            var_to_unowned[j] = k;
        }
        let nr = red_rows.len();
        let nu = unowned_vars.len();

        let mut ar_u = vec![Vec::new(); nr];
        let mut ar_o = vec![Vec::new(); nr];
        for (k, &r) in red_rows.iter().enumerate() {
            for (c, v) in a.row(r) {
                if var_owned[c] {
                    ar_o[k].push((c, v));
                } else {
                    ar_u[k].push((var_to_unowned[c], v));
                }
            }
        }

        // owner lookup for variables
        let mut var_block = vec![(NONE, NONE); n];
        for (b, (_, vars, _)) in owned_specs.iter().enumerate() {
            for (p, &v) in vars.iter().enumerate() {
                var_block[v] = (b, p);
            }
        }
        let mut touching: Vec<Vec<usize>> = vec![Vec::new(); owned_specs.len()];
        for (k, entries) in ar_o.iter().enumerate() {
            for &(c, _) in entries {
                let b = var_block[c].0;
                if touching[b].last() != Some(&k) {
                    touching[b].push(k);
                }
            }
        }
        let owned: Vec<OwnedBlock> = owned_specs
            .into_iter()
            .zip(touching)
            .enumerate()
            .map(|(b, ((cone, vars, coef), touching))| {
                let d = vars.len();
                let mut a_sub = DMatrix::zeros(touching.len(), d);
                for (ti, &k) in touching.iter().enumerate() {
                    for &(c, v) in &ar_o[k] {
                        let (cb, p) = var_block[c];
                        if cb == b {
                            a_sub[(ti, p)] += v;
                        }
                    }
                }
                OwnedBlock {
                    cone,
                    rows: cone_ranges[cone].clone(),
                    vars,
                    coef,
                    touching,
                    a_sub,
                    t: DMatrix::zeros(d, d),
                }
            })
            .collect();

        let mut cone_reduced: Vec<Option<Range<usize>>> = vec![None; problem.cones.len()];
        for (ci, range) in cone_ranges.iter().enumerate() {
            if range.is_empty() || row_owned[range.start] {
                continue;
            }
            let lo = row_to_red[range.start];
            cone_reduced[ci] = Some(lo..lo + range.len());
        }

        // Sparsity pattern of the reduced matrix.
        let total = nr + nu;
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); total];
        let mut link = |i: usize, j: usize| {
            if i != j {
                adj[i].push(j);
                adj[j].push(i);
            }
        };
        for blk in &owned {
            for (a, &ka) in blk.touching.iter().enumerate() {
                for &kb in &blk.touching[..a] {
                    link(ka, kb);
                }
            }
        }
        for (ci, range) in cone_reduced.iter().enumerate() {
            if let Some(range) = range {
                if matches!(
                    problem.cones[ci],
                    super::Cone::SecondOrder(_) | super::Cone::Psd(_)
                ) {
                    for a in range.clone() {
                        for b in range.start..a {
                            link(a, b);
                        }
                    }
                }
            }
        }
        for (k, entries) in ar_u.iter().enumerate() {
            for &(u, _) in entries {
                link(nr + u, k);
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        let env = Envelope::from_pattern(&adj);
        let mut signs = vec![-1.0; nr];
        signs.extend(std::iter::repeat_n(1.0, nu));

        let wtw = problem
            .cones
            .iter()
            .map(|c| DMatrix::zeros(c.dim(), c.dim()))
            .collect();

        KktSolver {
            n,
            m,
            a,
            cone_ranges,
            owned,
            cone_reduced,
            red_rows,
            unowned_vars,
            ar_u,
            wtw,
            env,
            signs,
        }
    }

    /// Size of the factored reduced system.
    #[allow(dead_code)]
    pub fn reduced_dim(&self) -> usize {
        self.env.len()
    }

    /// Assembles and factors for the current scaling. A factorization that
    /// needed dynamic pivot fixes is redone with heavier static
    /// regularization; refinement against the exact system absorbs it.
    pub fn factor(&mut self, scalings: &[ConeScaling]) {
        for (ci, sc) in scalings.iter().enumerate() {
            self.wtw[ci] = sc.wtw();
        }
        let mut boost = 1.0;
        for attempt in 0..=REG_RETRIES {
            let perturbed = self.assemble_and_factor(boost);
            if perturbed == 0 && self.env.is_finite() {
                return;
            }
            log::debug!("KKT factorization perturbed {perturbed} pivots (attempt {attempt})");
            boost *= REG_BOOST;
        }
    }

    fn assemble_and_factor(&mut self, boost: f64) -> usize {
        self.env.clear();
        let nr = self.red_rows.len();
        let mut max_diag: f64 = 0.0;

        for blk in &mut self.owned {
            let h = &self.wtw[blk.cone];
            let d = blk.vars.len();
            let mut t = h.clone();
            for i in 0..d {
                for j in 0..d {
                    t[(i, j)] /= blk.coef[i] * blk.coef[j];
                }
            }
            if !blk.touching.is_empty() {
                let at = &blk.a_sub * &t;
                let k = &at * blk.a_sub.transpose();
                for (a, &ra) in blk.touching.iter().enumerate() {
                    for (b, &rb) in blk.touching.iter().enumerate().take(a + 1) {
                        self.env.add(ra, rb, -k[(a, b)]);
                    }
                    max_diag = max_diag.max(k[(a, a)].abs());
                }
            }
            blk.t = t;
        }
        for (ci, range) in self.cone_reduced.iter().enumerate() {
            let Some(range) = range else { continue };
            let h = &self.wtw[ci];
            for a in 0..range.len() {
                for b in 0..=a {
                    let v = h[(a, b)];
                    if v != 0.0 {
                        self.env.add(range.start + a, range.start + b, -v);
                    }
                }
                max_diag = max_diag.max(h[(a, a)].abs());
            }
        }
        for (k, entries) in self.ar_u.iter().enumerate() {
            for &(u, v) in entries {
                self.env.add(nr + u, k, v);
            }
        }
        let reg = boost * (STATIC_REG + f64::EPSILON * max_diag);
        for i in 0..self.env.len() {
            let s = self.signs[i];
            self.env.add(i, i, s * reg);
        }
        self.env.factor(&self.signs)
    }

    fn solve_once(&self, r1: &[f64], r2: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let nr = self.red_rows.len();
        let mut dx = vec![0.0; self.n];
        let mut dz = vec![0.0; self.m];

        // q = D⁻¹ r2_O + T r1_o per owned block
        let mut q_blocks: Vec<DVector<f64>> = Vec::with_capacity(self.owned.len());
        for blk in &self.owned {
            let d = blk.vars.len();
            let r1o = DVector::from_iterator(d, blk.vars.iter().map(|&v| r1[v]));
            let mut q = &blk.t * r1o;
            for (p, r) in blk.rows.clone().enumerate() {
                q[p] += r2[r] / blk.coef[p];
            }
            q_blocks.push(q);
        }

        let mut rhs = vec![0.0; self.env.len()];
        for (k, &r) in self.red_rows.iter().enumerate() {
            rhs[k] = r2[r];
        }
        for (b, blk) in self.owned.iter().enumerate() {
            let aq = &blk.a_sub * &q_blocks[b];
            for (ti, &k) in blk.touching.iter().enumerate() {
                rhs[k] -= aq[ti];
            }
        }
        for (u, &j) in self.unowned_vars.iter().enumerate() {
            rhs[nr + u] = r1[j];
        }
        self.env.solve_in_place(&mut rhs);

        for (k, &r) in self.red_rows.iter().enumerate() {
            dz[r] = rhs[k];
        }
        for (u, &j) in self.unowned_vars.iter().enumerate() {
            dx[j] = rhs[nr + u];
        }
        for (b, blk) in self.owned.iter().enumerate() {
            let atz =
                DVector::from_iterator(blk.touching.len(), blk.touching.iter().map(|&k| rhs[k]));
            let w = blk.a_sub.transpose() * atz;
            let tw = &blk.t * &w;
            for (p, &v) in blk.vars.iter().enumerate() {
                dx[v] = q_blocks[b][p] - tw[p];
            }
            for (p, r) in blk.rows.clone().enumerate() {
                dz[r] = (r1[blk.vars[p]] - w[p]) / blk.coef[p];
            }
        }
        (dx, dz)
    }

    /// Residual of the unreduced, unregularized system.
    fn residual(&self, r1: &[f64], r2: &[f64], dx: &[f64], dz: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let atz = self.a.tmul_vec(dz);
        let e1: Vec<f64> = (0..self.n).map(|j| r1[j] - atz[j]).collect();
        let ax = self.a.mul_vec(dx);
        let mut e2: Vec<f64> = (0..self.m).map(|i| r2[i] - ax[i]).collect();
        for (ci, range) in self.cone_ranges.iter().enumerate() {
            let h = &self.wtw[ci];
            if h.nrows() == 0 {
                continue;
            }
            let zz = DVector::from_column_slice(&dz[range.clone()]);
            let hz = h * zz;
            for (p, i) in range.clone().enumerate() {
                e2[i] += hz[p];
            }
        }
        (e1, e2)
    }

    /// Solves the Newton system with iterative refinement.
    pub fn solve(&self, r1: &[f64], r2: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (mut dx, mut dz) = self.solve_once(r1, r2);
        let scale = 1.0 + super::norm(r1).max(super::norm(r2));
        let mut prev = f64::INFINITY;
        for _ in 0..REFINE_MAX {
            let (e1, e2) = self.residual(r1, r2, &dx, &dz);
            let err = super::norm(&e1).max(super::norm(&e2));
            if err <= REFINE_REL_TOL * scale || err >= prev {
                break;
            }
            prev = err;
            let (cx, cz) = self.solve_once(&e1, &e2);
            dx.iter_mut().zip(&cx).for_each(|(a, b)| *a += b);
            dz.iter_mut().zip(&cz).for_each(|(a, b)| *a += b);
        }
        (dx, dz)
    }

    /// Multiplies by the dense `WᵀW` block of cone `ci`.
    pub fn apply_wtw(&self, ci: usize, v: &[f64], out: &mut [f64]) {
        let h = &self.wtw[ci];
        for i in 0..out.len() {
            out[i] = (0..v.len()).map(|j| h[(i, j)] * v[j]).sum();
        }
    }
}
