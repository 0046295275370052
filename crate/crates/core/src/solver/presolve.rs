//! Row normalization and removal of linearly dependent equality rows.

use nalgebra::{DMatrix, DVector};

use super::ipm::RealProblem;

const DEPENDENT_TOL: f64 = 1e-9;
const INCONSISTENT_TOL: f64 = 1e-8;

pub(crate) enum Presolved {
    /// Reduced problem and, per original row, its position in the reduced
    /// problem together with the normalization applied to it.
    Reduced { problem: RealProblem, kept: Vec<Option<usize>>, norms: Vec<f64> },
    /// Combination `t` of original rows with `Σ t_i a_i = 0` and `bᵀt > 0`.
    Inconsistent { ray: DVector<f64> },
}

fn flatten(p: &RealProblem, row: &[(usize, DMatrix<f64>)], offsets: &[usize], len: usize) -> DVector<f64> {
    let mut v = DVector::zeros(len);
    for (k, a) in row {
        let n = p.dims[*k];
        for (idx, val) in a.iter().enumerate() {
            v[offsets[*k] + idx] += *val;
        }
        debug_assert_eq!(a.len(), n * n);
    }
    v
}

pub(crate) fn presolve(p: RealProblem) -> Presolved {
    let m = p.rows.len();
    let mut offsets = Vec::with_capacity(p.dims.len());
    let mut len = 0;
    for &n in &p.dims {
        offsets.push(len);
        len += n * n;
    }
    let b_inf = p.b.amax();

    let mut norms = vec![1.0; m];
    let mut flat = Vec::with_capacity(m);
    for (i, row) in p.rows.iter().enumerate() {
        let v = flatten(&p, row, &offsets, len);
        let n = v.norm();
        norms[i] = if n > 0.0 { n } else { 1.0 };
        flat.push(v / norms[i]);
    }

    let mut q: Vec<DVector<f64>> = Vec::new();
    let mut qb: Vec<f64> = Vec::new();
    let mut qt: Vec<DVector<f64>> = Vec::new();
    let mut kept = vec![None; m];
    let mut n_kept = 0;
    for i in 0..m {
        let mut r = flat[i].clone();
        let mut rb = p.b[i] / norms[i];
        let mut t = DVector::zeros(m);
        t[i] = 1.0 / norms[i];
        for _ in 0..2 {
            for k in 0..q.len() {
                let h = q[k].dot(&r);
                r.axpy(-h, &q[k], 1.0);
                rb -= h * qb[k];
                t.axpy(-h, &qt[k], 1.0);
            }
        }
        let nr = r.norm();
        if nr <= DEPENDENT_TOL {
            if rb.abs() > INCONSISTENT_TOL * (1.0 + b_inf) {
                return Presolved::Inconsistent { ray: t * rb.signum() };
            }
            continue;
        }
        q.push(r / nr);
        qb.push(rb / nr);
        qt.push(t / nr);
        kept[i] = Some(n_kept);
        n_kept += 1;
    }

    let mut rows = Vec::with_capacity(n_kept);
    let mut b = DVector::zeros(n_kept);
    let RealProblem { dims, c, rows: old_rows, b: old_b } = p;
    for (i, row) in old_rows.into_iter().enumerate() {
        if let Some(j) = kept[i] {
            rows.push(row.into_iter().map(|(k, a)| (k, a / norms[i])).collect());
            b[j] = old_b[i] / norms[i];
        }
    }
    Presolved::Reduced { problem: RealProblem { dims, c, rows, b }, kept, norms }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(n: usize, i: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(n, n);
        m[(i, i)] = 1.0;
        m
    }

    #[test]
    fn drops_duplicate_rows() {
        let p = RealProblem {
            dims: vec![2],
            c: vec![DMatrix::zeros(2, 2)],
            rows: vec![vec![(0, unit(2, 0))], vec![(0, unit(2, 0) * 3.0)], vec![(0, unit(2, 1))]],
            b: DVector::from_vec(vec![1.0, 3.0, 0.5]),
        };
        match presolve(p) {
            Presolved::Reduced { problem, kept, .. } => {
                assert_eq!(problem.rows.len(), 2);
                assert_eq!(kept, vec![Some(0), None, Some(1)]);
            }
            Presolved::Inconsistent { .. } => panic!("consistent system flagged"),
        }
    }

    #[test]
    fn flags_inconsistent_rows() {
        let p = RealProblem {
            dims: vec![2],
            c: vec![DMatrix::zeros(2, 2)],
            rows: vec![vec![(0, unit(2, 0))], vec![(0, unit(2, 0) * 2.0)]],
            b: DVector::from_vec(vec![1.0, 3.0]),
        };
        match presolve(p) {
            Presolved::Inconsistent { ray } => {
                assert!(ray[0] * 1.0 + ray[1] * 3.0 > 0.0);
                assert!((ray[0] + 2.0 * ray[1]).abs() < 1e-12);
            }
            Presolved::Reduced { .. } => panic!("inconsistent system accepted"),
        }
    }
}
