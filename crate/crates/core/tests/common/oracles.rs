//! Independent reference computations. Deliberately naive: plain loops,
//! no shared kernels with the library.
#![allow(dead_code)]

pub fn cos(a: &[f64], b: &[f64]) -> f64 {
    let mut ab = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for i in 0..a.len() {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    (ab / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0)
}

/// DBSCAN by definition: core test, union-find over core pairs, border
/// points to the lowest-indexed core neighbour. Clusters numbered by their
/// lowest core index. `None` is noise.
pub fn dbscan(points: &[Vec<f64>], eps: f64, min_pts: usize) -> Vec<Option<usize>> {
    let n = points.len();
    let near = |i: usize, j: usize| 1.0 - cos(&points[i], &points[j]) <= eps;
    let core: Vec<bool> = (0..n).map(|i| (0..n).filter(|&j| near(i, j)).count() >= min_pts).collect();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut Vec<usize>, x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        p[x] = r;
        r
    }
    for i in 0..n {
        for j in 0..i {
            if core[i] && core[j] && near(i, j) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                let (lo, hi) = (a.min(b), a.max(b));
                parent[hi] = lo;
            }
        }
    }
    let mut root_of = vec![None; n];
    for i in 0..n {
        if core[i] {
            root_of[i] = Some(find(&mut parent, i));
        }
    }
    for i in 0..n {
        if !core[i] {
            root_of[i] = (0..n).find(|&j| core[j] && near(i, j)).and_then(|j| root_of[j]);
        }
    }
    // renumber roots in order of first appearance among core points
    let mut order = Vec::new();
    for i in 0..n {
        if core[i] {
            let r = root_of[i].unwrap();
            if !order.contains(&r) {
                order.push(r);
            }
        }
    }
    root_of.iter().map(|r| r.map(|r| order.iter().position(|&o| o == r).unwrap())).collect()
}

/// Maximum total over all injective row→column maps (rows ≤ cols or the
/// transpose). Returns `(total, pairs sorted by row)`.
pub fn best_assignment(sim: &[Vec<f64>]) -> (f64, Vec<(usize, usize)>) {
    let g = sim.len();
    let t = sim[0].len();
    let k = g.min(t);
    let mut best = (f64::NEG_INFINITY, Vec::new());
    let mut cur = Vec::new();
    fn rec(
        sim: &[Vec<f64>],
        g: usize,
        t: usize,
        k: usize,
        row: usize,
        used: &mut Vec<bool>,
        cur: &mut Vec<(usize, usize)>,
        best: &mut (f64, Vec<(usize, usize)>),
    ) {
        if cur.len() == k {
            let total: f64 = cur.iter().map(|&(i, j)| sim[i][j]).sum();
            if total > best.0 {
                *best = (total, cur.clone());
            }
            return;
        }
        if row == g || g - row < k - cur.len() {
            return;
        }
        // leave this row unmatched (only possible when g > t)
        if g > t {
            rec(sim, g, t, k, row + 1, used, cur, best);
        }
        for j in 0..t {
            if !used[j] {
                used[j] = true;
                cur.push((row, j));
                rec(sim, g, t, k, row + 1, used, cur, best);
                cur.pop();
                used[j] = false;
            }
        }
    }
    let mut used = vec![false; t];
    rec(sim, g, t, k, 0, &mut used, &mut cur, &mut best);
    best
}

/// Row-by-row greedy pick of the best free column.
pub fn greedy_total(sim: &[Vec<f64>]) -> f64 {
    let t = sim[0].len();
    let mut used = vec![false; t];
    let mut total = 0.0;
    for row in sim {
        if let Some(j) = (0..t).filter(|&j| !used[j]).max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap()) {
            used[j] = true;
            total += row[j];
        }
    }
    total
}

/// `1/(N²−N) Σ_i Σ_{j≠i} cos(g_i, t_j)` with `g`, `t` already aligned.
pub fn blend(gen: &[Vec<f64>], tgt: &[Vec<f64>]) -> f64 {
    let n = gen.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += cos(&gen[i], &tgt[j]);
            }
        }
    }
    s / (n * n - n) as f64
}

/// Triple-loop masked attention: `H + λ softmax(QKᵀ/√d + M) V`.
#[allow(clippy::too_many_arguments)]
pub fn attention(
    h: &[Vec<f64>],
    e: &[Vec<f64>],
    wq: &[Vec<f64>],
    wk: &[Vec<f64>],
    wv: &[Vec<f64>],
    mask: &[Vec<f64>],
    lambda: f64,
) -> Vec<Vec<f64>> {
    let dm = h[0].len();
    let d = wq[0].len();
    let proj = |x: &[Vec<f64>], w: &[Vec<f64>], cols: usize| -> Vec<Vec<f64>> {
        x.iter()
            .map(|row| (0..cols).map(|c| (0..dm).map(|k| row[k] * w[k][c]).sum()).collect())
            .collect()
    };
    let q = proj(h, wq, d);
    let k = proj(e, wk, d);
    let v = proj(e, wv, dm);
    let mut out = h.to_vec();
    for i in 0..h.len() {
        let mut logits = Vec::new();
        for j in 0..e.len() {
            let mut s = 0.0;
            for c in 0..d {
                s += q[i][c] * k[j][c];
            }
            logits.push(s / (d as f64).sqrt() + mask[i][j]);
        }
        let open: Vec<usize> = (0..e.len()).filter(|&j| logits[j] > -1e29).collect();
        if open.is_empty() {
            continue;
        }
        let m = open.iter().map(|&j| logits[j]).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = open.iter().map(|&j| (logits[j] - m).exp()).sum();
        for c in 0..dm {
            let mut acc = 0.0;
            for &j in &open {
                acc += (logits[j] - m).exp() / z * v[j][c];
            }
            out[i][c] += lambda * acc;
        }
    }
    out
}

/// InfoNCE without any stabilization.
pub fn info_nce(g: &[f64], r: &[f64], negs: &[Vec<f64>], tau: f64) -> f64 {
    let p = (cos(g, r) / tau).exp();
    let n: f64 = negs.iter().map(|x| (cos(g, x) / tau).exp()).sum();
    -(p / (p + n)).ln()
}

/// Argmax identity by brute force over every centroid, in f64.
pub fn nearest_identity(q: &[f64], centroids: &[(String, Vec<f64>)]) -> (String, f64) {
    let mut best = (String::new(), f64::NEG_INFINITY);
    for (id, c) in centroids {
        let s = cos(q, c);
        if s > best.1 || (s == best.1 && *id < best.0) {
            best = (id.clone(), s);
        }
    }
    best
}
