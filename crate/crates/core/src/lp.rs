//! Dense revised simplex for `min ||w||_1` subject to `sum_i w_i a_i = b`.
//!
//! Each free `w_i` is split as `p_i - q_i`. Any nonsingular set of `r`
//! columns is a feasible starting basis once the sign of each `w_i` selects
//! `p_i` or `q_i`, so no phase one is needed: a well-conditioned crash basis
//! is chosen once per problem by greedy pivoted Gram-Schmidt and reused for
//! every right-hand side. Dantzig pricing with a Harris ratio test is used
//! until the objective stalls, then Bland's rule.

use crate::error::{FdpError, Result};
use std::sync::OnceLock;

const PIVOT_TOL: f64 = 1e-7;
const COST_TOL: f64 = 1e-9;
const REFACTOR_EVERY: usize = 64;

/// Optimal value and a dual certificate `y` with `|a_i . y| <= 1` and
/// `b . y = value`.
#[derive(Debug, Clone)]
pub struct L1Solution {
    pub value: f64,
    pub dual: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Crash {
    cols: Vec<usize>,
    binv: Vec<f64>,
}

/// Column set `a_1..a_M` in `R^r`, stored contiguously.
#[derive(Debug, Clone)]
pub struct L1Problem {
    rows: usize,
    cols: Vec<f64>,
    crash: OnceLock<std::result::Result<Crash, FdpError>>,
}

impl L1Problem {
    pub fn new(rows: usize, cols: Vec<f64>) -> Self {
        assert!(rows > 0 && cols.len() % rows == 0);
        L1Problem { rows, cols, crash: OnceLock::new() }
    }
    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn num_cols(&self) -> usize {
        self.cols.len() / self.rows
    }
    pub fn col(&self, i: usize) -> &[f64] {
        &self.cols[i * self.rows..(i + 1) * self.rows]
    }

    fn crash(&self) -> Result<&Crash> {
        self.crash.get_or_init(|| self.build_crash()).as_ref().map_err(Clone::clone)
    }

    fn build_crash(&self) -> std::result::Result<Crash, FdpError> {
        let r = self.rows;
        let m = self.num_cols();
        let mut resid = self.cols.clone();
        let mut norms: Vec<f64> = (0..m).map(|i| resid[i * r..(i + 1) * r].iter().map(|v| v * v).sum()).collect();
        let scale = norms.iter().fold(0.0f64, |a, &b| a.max(b));
        let mut chosen = Vec::with_capacity(r);
        let mut used = vec![false; m];
        for _ in 0..r {
            let (best, &bn) = norms
                .iter()
                .enumerate()
                .filter(|(i, _)| !used[*i])
                .max_by(|a, b| a.1.total_cmp(b.1))
                .ok_or_else(|| FdpError::Config("fewer columns than rows".into()))?;
            if bn <= 1e-18 * scale.max(1e-300) {
                return Err(FdpError::Config("columns do not span the constraint space".into()));
            }
            used[best] = true;
            chosen.push(best);
            let q: Vec<f64> = resid[best * r..(best + 1) * r].iter().map(|v| v / bn.sqrt()).collect();
            for i in 0..m {
                if used[i] {
                    continue;
                }
                let c = &mut resid[i * r..(i + 1) * r];
                let dot: f64 = c.iter().zip(&q).map(|(a, b)| a * b).sum();
                if dot != 0.0 {
                    c.iter_mut().zip(&q).for_each(|(a, b)| *a -= dot * b);
                    norms[i] = c.iter().map(|v| v * v).sum();
                }
            }
        }
        let binv = invert(r, |k, c| self.col(chosen[c])[k])?;
        Ok(Crash { cols: chosen, binv })
    }

    pub fn solve(&self, b: &[f64]) -> Result<L1Solution> {
        assert_eq!(b.len(), self.rows);
        if b.iter().all(|&v| v == 0.0) {
            return Ok(L1Solution { value: 0.0, dual: vec![0.0; self.rows] });
        }
        let crash = self.crash()?;
        Simplex::new(self, crash, b).run()
    }
}

/// Gauss-Jordan inverse of the `r x r` matrix with entries `entry(row, col)`.
fn invert(r: usize, entry: impl Fn(usize, usize) -> f64) -> Result<Vec<f64>> {
    let mut a = vec![0.0; r * r];
    for k in 0..r {
        for c in 0..r {
            a[k * r + c] = entry(k, c);
        }
    }
    let mut inv = vec![0.0; r * r];
    for i in 0..r {
        inv[i * r + i] = 1.0;
    }
    for c in 0..r {
        let p = (c..r).max_by(|&x, &y| a[x * r + c].abs().total_cmp(&a[y * r + c].abs())).unwrap();
        if a[p * r + c].abs() < 1e-13 {
            return Err(FdpError::Internal("singular basis".into()));
        }
        if p != c {
            for k in 0..r {
                a.swap(p * r + k, c * r + k);
                inv.swap(p * r + k, c * r + k);
            }
        }
        let piv = a[c * r + c];
        for k in 0..r {
            a[c * r + k] /= piv;
            inv[c * r + k] /= piv;
        }
        for i in 0..r {
            if i != c {
                let f = a[i * r + c];
                if f != 0.0 {
                    for k in 0..r {
                        a[i * r + k] -= f * a[c * r + k];
                        inv[i * r + k] -= f * inv[c * r + k];
                    }
                }
            }
        }
    }
    Ok(inv)
}

/// Basis entries are `(column, sign)`: sign `+1` is `p_i`, `-1` is `q_i`.
struct Simplex<'a> {
    prob: &'a L1Problem,
    r: usize,
    b: Vec<f64>,
    basis: Vec<(usize, f64)>,
    binv: Vec<f64>,
    x: Vec<f64>,
    in_basis: Vec<bool>,
}

impl<'a> Simplex<'a> {
    fn new(prob: &'a L1Problem, crash: &Crash, b: &[f64]) -> Self {
        let r = prob.rows;
        let mut binv = crash.binv.clone();
        let mut x: Vec<f64> = (0..r).map(|i| (0..r).map(|k| binv[i * r + k] * b[k]).sum()).collect();
        let mut basis = Vec::with_capacity(r);
        let mut in_basis = vec![false; prob.num_cols()];
        for (i, &c) in crash.cols.iter().enumerate() {
            let s = if x[i] < 0.0 { -1.0 } else { 1.0 };
            if s < 0.0 {
                x[i] = -x[i];
                binv[i * r..(i + 1) * r].iter_mut().for_each(|v| *v = -*v);
            }
            basis.push((c, s));
            in_basis[c] = true;
        }
        Simplex { prob, r, b: b.to_vec(), basis, binv, x, in_basis }
    }

    fn duals(&self) -> Vec<f64> {
        let r = self.r;
        let mut y = vec![0.0; r];
        for i in 0..r {
            for (yk, bk) in y.iter_mut().zip(&self.binv[i * r..(i + 1) * r]) {
                *yk += bk;
            }
        }
        y
    }

    fn refactor(&mut self) -> Result<()> {
        let r = self.r;
        let basis = &self.basis;
        let prob = self.prob;
        self.binv = invert(r, |k, c| basis[c].1 * prob.col(basis[c].0)[k])?;
        for i in 0..r {
            self.x[i] = (0..r).map(|k| self.binv[i * r + k] * self.b[k]).sum::<f64>().max(0.0);
        }
        Ok(())
    }

    fn price(&self, y: &[f64], bland: bool, skip: &[usize]) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64, f64)> = None;
        for i in 0..self.prob.num_cols() {
            if self.in_basis[i] || skip.contains(&i) {
                continue;
            }
            let ay: f64 = self.prob.col(i).iter().zip(y).map(|(a, y)| a * y).sum();
            // reduced costs: p_i -> 1 - ay, q_i -> 1 + ay
            let (rc, s) = if ay > 0.0 { (1.0 - ay, 1.0) } else { (1.0 + ay, -1.0) };
            if rc >= -COST_TOL {
                continue;
            }
            if bland {
                return Some((i, s));
            }
            if best.map_or(true, |(_, _, b)| rc < b) {
                best = Some((i, s, rc));
            }
        }
        best.map(|(i, s, _)| (i, s))
    }

    /// Harris two-pass ratio test.
    fn ratio(&self, d: &[f64], bland: bool) -> Option<usize> {
        let dmax = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let tol = PIVOT_TOL * dmax.max(1.0);
        let slack = 1e-10;
        let mut t_max = f64::INFINITY;
        for i in 0..self.r {
            if d[i] > tol {
                t_max = t_max.min((self.x[i] + slack) / d[i]);
            }
        }
        if !t_max.is_finite() {
            return None;
        }
        let cand: Vec<usize> = (0..self.r).filter(|&i| d[i] > tol && self.x[i] / d[i] <= t_max).collect();
        let dbest = cand.iter().fold(0.0f64, |m, &i| m.max(d[i]));
        if bland {
            cand.into_iter().filter(|&i| d[i] >= 1e-3 * dbest).min_by_key(|&i| self.basis[i].0)
        } else {
            cand.into_iter().max_by(|&a, &b| d[a].total_cmp(&d[b]))
        }
    }

    fn objective(&self) -> f64 {
        self.x.iter().sum()
    }

    fn run(mut self) -> Result<L1Solution> {
        let r = self.r;
        let max_iter = 50 * (r + self.prob.num_cols()) + 1000;
        let mut col = vec![0.0; r];
        let mut since_refactor = 0;
        let mut last_obj = f64::INFINITY;
        let mut stall = 0;
        let mut skip: Vec<usize> = Vec::new();
        for _ in 0..max_iter {
            let bland = stall > 2 * r;
            let y = self.duals();
            let Some((enter, s)) = self.price(&y, bland, &skip) else {
                self.refactor()?;
                let y = self.duals();
                // Re-check after refactorization to catch drift.
                if since_refactor > 0 && self.price(&y, false, &[]).is_some() {
                    since_refactor = 0;
                    skip.clear();
                    continue;
                }
                let value = self.objective();
                return Ok(L1Solution { value, dual: y });
            };
            for (o, a) in col.iter_mut().zip(self.prob.col(enter)) {
                *o = s * a;
            }
            let d: Vec<f64> = (0..r)
                .map(|i| self.binv[i * r..(i + 1) * r].iter().zip(&col).map(|(a, b)| a * b).sum())
                .collect();
            let Some(leave) = self.ratio(&d, bland) else {
                // The objective is bounded below, so a column without a pivot
                // row only has a rounding-level reduced cost.
                skip.push(enter);
                continue;
            };
            skip.clear();
            self.pivot(leave, (enter, s), &d);
            since_refactor += 1;
            if since_refactor >= REFACTOR_EVERY {
                self.refactor()?;
                since_refactor = 0;
            }
            let obj = self.objective();
            if obj < last_obj - 1e-12 * (1.0 + last_obj.abs()) {
                last_obj = obj;
                stall = 0;
            } else {
                stall += 1;
            }
        }
        Err(FdpError::Internal("simplex iteration limit reached".into()))
    }

    fn pivot(&mut self, leave: usize, enter: (usize, f64), d: &[f64]) {
        let r = self.r;
        let piv = d[leave];
        let step = self.x[leave] / piv;
        for i in 0..r {
            if i != leave {
                self.x[i] = (self.x[i] - step * d[i]).max(0.0);
            }
        }
        self.x[leave] = step.max(0.0);
        let lrow: Vec<f64> = self.binv[leave * r..(leave + 1) * r].iter().map(|v| v / piv).collect();
        for i in 0..r {
            if i == leave || d[i] == 0.0 {
                continue;
            }
            let f = d[i];
            for k in 0..r {
                self.binv[i * r + k] -= f * lrow[k];
            }
        }
        self.binv[leave * r..(leave + 1) * r].copy_from_slice(&lrow);
        self.in_basis[self.basis[leave].0] = false;
        self.in_basis[enter.0] = true;
        self.basis[leave] = enter;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_dimensional_cases() {
        // columns (1), (-1), (2): min |w| with sum w_i a_i = 3 is 1.5
        let p = L1Problem::new(1, vec![1.0, -1.0, 2.0]);
        let s = p.solve(&[3.0]).unwrap();
        assert!((s.value - 1.5).abs() < 1e-12);
        assert!((s.dual[0] * 3.0 - 1.5).abs() < 1e-12);
        let s = p.solve(&[-3.0]).unwrap();
        assert!((s.value - 1.5).abs() < 1e-12);
    }

    #[test]
    fn identity_columns_give_l1_norm() {
        let r = 5;
        let mut cols = vec![0.0; r * r];
        for i in 0..r {
            cols[i * r + i] = 1.0;
        }
        let p = L1Problem::new(r, cols);
        let b = [0.5, -2.0, 0.0, 1.0, 3.0];
        let s = p.solve(&b).unwrap();
        assert!((s.value - 6.5).abs() < 1e-12);
        for i in 0..r {
            assert!(s.dual[i].abs() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn random_problems_satisfy_duality() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let r = rng.gen_range(1..8);
            let m = rng.gen_range(r..4 * r + 3);
            let cols: Vec<f64> = (0..r * m).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let p = L1Problem::new(r, cols);
            for _ in 0..3 {
                let b: Vec<f64> = (0..r).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let s = p.solve(&b).unwrap();
                let by: f64 = b.iter().zip(&s.dual).map(|(a, b)| a * b).sum();
                assert!((by - s.value).abs() < 1e-9 * (1.0 + s.value));
                for i in 0..m {
                    let ay: f64 = p.col(i).iter().zip(&s.dual).map(|(a, b)| a * b).sum();
                    assert!(ay.abs() <= 1.0 + 1e-9);
                }
            }
        }
    }

    #[test]
    fn rank_deficiency_is_reported() {
        let p = L1Problem::new(2, vec![1.0, 0.0, 2.0, 0.0]);
        assert!(matches!(p.solve(&[1.0, 1.0]), Err(FdpError::Config(_))));
    }
}
