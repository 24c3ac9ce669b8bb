use super::BondGraph;

/// `I - D^{-1/2} A D^{-1/2}` over the bond-present adjacency, row-major.
/// Isolated atoms get a zero row, so each component contributes exactly one
/// zero eigenvalue.
pub fn normalized_laplacian(g: &BondGraph) -> Vec<f64> {
    let n = g.n();
    let deg: Vec<f64> = (0..n).map(|i| g.neighbors(i).count() as f64).collect();
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        if deg[i] > 0.0 {
            l[i * n + i] = 1.0;
        }
        for j in g.neighbors(i) {
            l[i * n + j] = -1.0 / (deg[i] * deg[j]).sqrt();
        }
    }
    l
}

/// Eigenvalues of a symmetric n×n matrix by cyclic Jacobi rotations, ascending.
pub fn jacobi_eigenvalues(matrix: &[f64], n: usize) -> Vec<f64> {
    assert_eq!(matrix.len(), n * n, "matrix must be n×n");
    let mut a = matrix.to_vec();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    eig.sort_by(f64::total_cmp);
    eig
}
