//! Symmetric eigendecomposition by cyclic Jacobi rotations.
//!
//! Deterministic: sweeps visit index pairs in a fixed order and there is no
//! pivot search, so the same input always produces bit-identical output.
//! Adequate for the desk-scale matrices this crate works with (tens of
//! models); dense O(n³) per sweep.

use crate::error::{Error, Result};

/// Eigenvalues (descending) and matching eigenvectors of a symmetric
/// matrix. `vectors[k]` is the unit eigenvector for `values[k]`, its
/// largest-magnitude component made positive (first such component on
/// exact ties) so the decomposition is unique up to eigenvalue multiplicity.
pub fn symmetric_eigen(matrix: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = matrix.len();
    if n == 0 {
        return Err(Error::Degenerate("eigendecomposition of an empty matrix".into()));
    }
    for (i, row) in matrix.iter().enumerate() {
        if row.len() != n {
            return Err(Error::Config(format!("matrix row {i} has {} entries, want {n}", row.len())));
        }
        for (j, &v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Config(format!("matrix[{i}][{j}] = {v} is not finite")));
            }
            if (v - matrix[j][i]).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "matrix is not symmetric: [{i}][{j}]={v} vs [{j}][{i}]={}",
                    matrix[j][i]
                )));
            }
        }
    }

    // Work on a copy; accumulate rotations into V (row-major, V[i][j]).
    let mut a: Vec<Vec<f64>> = matrix.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();

    let frob: f64 = a.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
    let tol = 1e-14 * frob.max(1.0);
    const MAX_SWEEPS: usize = 64;

    for _sweep in 0..MAX_SWEEPS {
        let off: f64 = {
            let mut s = 0.0;
            for p in 0..n {
                for q in (p + 1)..n {
                    s += a[p][q] * a[p][q];
                }
            }
            s.sqrt()
        };
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p][q];
                if apq.abs() <= tol / (n * n) as f64 {
                    continue;
                }
                // Rotation angle zeroing a[p][q].
                let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
                let t = {
                    let s = if theta >= 0.0 { 1.0 } else { -1.0 };
                    s / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k][p];
                    let vkq = v[k][q];
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }

    // Extract, order descending by eigenvalue (original column index breaks
    // exact ties), and fix each vector's sign.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j][j].partial_cmp(&a[i][i]).unwrap().then(i.cmp(&j)));

    let mut values = Vec::with_capacity(n);
    let mut vectors = Vec::with_capacity(n);
    for &col in &order {
        values.push(a[col][col]);
        let mut vec_k: Vec<f64> = (0..n).map(|row| v[row][col]).collect();
        let mut lead = 0;
        for (i, &x) in vec_k.iter().enumerate() {
            if x.abs() > vec_k[lead].abs() {
                lead = i;
            }
        }
        if vec_k[lead] < 0.0 {
            for x in &mut vec_k {
                *x = -*x;
            }
        }
        vectors.push(vec_k);
    }
    Ok((values, vectors))
}
