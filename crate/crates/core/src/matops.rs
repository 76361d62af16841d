//! Matrix-calculus operators: vec/vech, Kronecker products, the
//! commutation/diagonal-selector/elimination matrices, Gaussian fourth
//! moments, and Gram-matrix orthonormalization coefficients.

use nalgebra::{DMatrix, DVector};

use crate::error::{GapError, Result};

/// Condition-number ceiling beyond which a Gram matrix is treated as not SPD.
const GRAM_COND_LIMIT: f64 = 1e12;

/// Column-major vectorization of an m x n matrix.
pub fn vec(a: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(a.as_slice())
}

/// Column-major vectorization of the lower triangle (diagonal included).
pub fn vech(a: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(GapError::NotSquare {
            rows: n,
            cols: a.ncols(),
        });
    }
    let mut out = DVector::zeros(n * (n + 1) / 2);
    let mut k = 0;
    for j in 0..n {
        for i in j..n {
            out[k] = a[(i, j)];
            k += 1;
        }
    }
    Ok(out)
}

/// Kronecker product; block (i, j) equals a_ij * b.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ra, ca) = a.shape();
    let (rb, cb) = b.shape();
    let mut out = DMatrix::zeros(ra * rb, ca * cb);
    for i in 0..ra {
        for j in 0..ca {
            let v = a[(i, j)];
            if v == 0.0 {
                continue;
            }
            for p in 0..rb {
                for q in 0..cb {
                    out[(i * rb + p, j * cb + q)] = v * b[(p, q)];
                }
            }
        }
    }
    out
}

/// The commutation, diagonal-selector, and elimination operators for a fixed
/// dimension. All three are index maps; dense matrices are materialized on
/// demand (fine up to moderate dimension, wasteful beyond).
#[derive(Debug, Clone)]
pub struct OperatorMatrices {
    dim: usize,
    /// t_perm[r] = c means row r of T_{D,D} has its 1 in column c.
    t_perm: Vec<usize>,
    /// Columns of vec space corresponding to diagonal entries (R_D selector).
    diag_cols: Vec<usize>,
    /// s_cols[r] = c: row r of S_D has its 1 in column c.
    s_cols: Vec<usize>,
}

/// Build T_{D,D}, R_D, S_D for dimension `dim >= 1`.
pub fn build_operator_matrices(dim: usize) -> OperatorMatrices {
    assert!(dim >= 1, "operator matrices need dim >= 1");
    let d = dim;
    // vec index of entry (i, j): j * d + i. T maps vec(A) -> vec(A^T), so the
    // row for target position (j, i) picks source position (i, j).
    let mut t_perm = vec![0usize; d * d];
    for i in 0..d {
        for j in 0..d {
            t_perm[i * d + j] = j * d + i;
        }
    }
    let diag_cols = (0..d).map(|i| i * d + i).collect();
    let mut s_cols = Vec::with_capacity(d * (d + 1) / 2);
    for j in 0..d {
        for i in j..d {
            s_cols.push(j * d + i);
        }
    }
    OperatorMatrices {
        dim: d,
        t_perm,
        diag_cols,
        s_cols,
    }
}

impl OperatorMatrices {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// vech length D(D+1)/2.
    pub fn vech_len(&self) -> usize {
        self.s_cols.len()
    }

    /// Dense commutation matrix T_{D,D} (a symmetric permutation).
    pub fn t_dense(&self) -> DMatrix<f64> {
        let n = self.dim * self.dim;
        let mut t = DMatrix::zeros(n, n);
        for (r, &c) in self.t_perm.iter().enumerate() {
            t[(r, c)] = 1.0;
        }
        t
    }

    /// Dense diagonal selector R_D with R vec(A) = vec(A o I).
    pub fn r_dense(&self) -> DMatrix<f64> {
        let n = self.dim * self.dim;
        let mut r = DMatrix::zeros(n, n);
        for &c in &self.diag_cols {
            r[(c, c)] = 1.0;
        }
        r
    }

    /// Dense elimination matrix S_D with S vec(A) = vech(A).
    pub fn s_dense(&self) -> DMatrix<f64> {
        let n = self.dim * self.dim;
        let mut s = DMatrix::zeros(self.s_cols.len(), n);
        for (r, &c) in self.s_cols.iter().enumerate() {
            s[(r, c)] = 1.0;
        }
        s
    }

    pub fn apply_t(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(v.len(), |r, _| v[self.t_perm[r]])
    }

    pub fn apply_r(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(v.len());
        for &c in &self.diag_cols {
            out[c] = v[c];
        }
        out
    }

    pub fn apply_s(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.s_cols.len(), |r, _| v[self.s_cols[r]])
    }
}

/// E[(z-mu)(z-mu)^T kron (z-mu)(z-mu)^T] for z ~ N(mu, Sigma):
/// entry ((i,k),(j,l)) is s_ij s_kl + s_ik s_jl + s_il s_jk, the sum of the
/// three pair arrangements of the Gaussian fourth moment.
pub fn isserlis_fourth_moment(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = sigma.nrows();
    require_spd(sigma, "fourth moment")?;
    let mut out = DMatrix::zeros(n * n, n * n);
    for i in 0..n {
        for k in 0..n {
            let row = i * n + k;
            for j in 0..n {
                for l in 0..n {
                    let col = j * n + l;
                    out[(row, col)] = sigma[(i, j)] * sigma[(k, l)]
                        + sigma[(i, k)] * sigma[(j, l)]
                        + sigma[(i, l)] * sigma[(j, k)];
                }
            }
        }
    }
    Ok(out)
}

fn require_spd(m: &DMatrix<f64>, what: &str) -> Result<()> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(GapError::NotSquare {
            rows: n,
            cols: m.ncols(),
        });
    }
    let asym = (m - m.transpose()).abs().max();
    let scale = m.abs().max().max(1e-300);
    if asym > 1e-8 * scale {
        return Err(GapError::NotSpd(format!("{what}: asymmetry {asym:e}")));
    }
    if nalgebra::Cholesky::new(m.clone()).is_none() {
        return Err(GapError::NotSpd(format!("{what}: Cholesky failed")));
    }
    Ok(())
}

/// Lower-triangular coefficients C with C G C^T = I and positive diagonal,
/// computed as the inverse of the Cholesky factor of G. Rejects Grams that
/// are asymmetric, fail Cholesky, or have condition number above 1e12.
pub fn gram_orthonormal_coeffs(gram: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = gram.nrows();
    require_spd(gram, "Gram")?;
    let eigen = gram.clone().symmetric_eigenvalues();
    let max_ev = eigen.max();
    let min_ev = eigen.min();
    if !(min_ev > 0.0) || max_ev / min_ev > GRAM_COND_LIMIT {
        return Err(GapError::NotSpd(format!(
            "Gram condition estimate {:e} exceeds {GRAM_COND_LIMIT:e}",
            max_ev / min_ev.max(f64::MIN_POSITIVE)
        )));
    }
    let chol = nalgebra::Cholesky::new(gram.clone())
        .ok_or_else(|| GapError::NotSpd("Gram: Cholesky failed".into()))?;
    let mut inv = DMatrix::identity(n, n);
    chol.l().solve_lower_triangular_mut(&mut inv);
    Ok(inv)
}

/// Same coefficients through the Gram-Schmidt determinant expansion:
/// C[j, i] = (-1)^{j+i} M_{j,i} / sqrt(D_{j-1} D_j), with D_j the leading
/// principal minors of G and M_{j,i} the minor of the j-th leading principal
/// submatrix with row j and column i removed. Kept as a fidelity reference;
/// the Cholesky route above is the production path.
pub fn gram_orthonormal_coeffs_minor_expansion(gram: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = gram.nrows();
    if gram.ncols() != n {
        return Err(GapError::NotSquare {
            rows: n,
            cols: gram.ncols(),
        });
    }
    let mut leading = Vec::with_capacity(n + 1);
    leading.push(1.0);
    for j in 1..=n {
        let det = gram.view((0, 0), (j, j)).clone_owned().determinant();
        if !(det > 0.0) {
            return Err(GapError::NotSpd(format!(
                "leading principal minor {j} is {det:e}"
            )));
        }
        leading.push(det);
    }
    let mut coeffs = DMatrix::zeros(n, n);
    for j in 1..=n {
        let sub = gram.view((0, 0), (j, j)).clone_owned();
        let norm = (leading[j - 1] * leading[j]).sqrt();
        for i in 1..=j {
            let minor = strike_out(&sub, j - 1, i - 1).determinant();
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            coeffs[(j - 1, i - 1)] = sign * minor / norm;
        }
    }
    Ok(coeffs)
}

fn strike_out(m: &DMatrix<f64>, row: usize, col: usize) -> DMatrix<f64> {
    let n = m.nrows();
    if n == 1 {
        // Empty determinant is 1 by convention.
        return DMatrix::identity(1, 1);
    }
    DMatrix::from_fn(n - 1, n - 1, |i, j| {
        let si = if i < row { i } else { i + 1 };
        let sj = if j < col { j } else { j + 1 };
        m[(si, sj)]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;
    use approx::assert_abs_diff_eq;
    use nalgebra::dmatrix;

    fn random_spd(n: usize, seed: u64) -> DMatrix<f64> {
        let rng = CounterRng::new(seed);
        let m = DMatrix::from_fn(n, n, |i, j| rng.standard_normal((i * n + j) as u64));
        &m * m.transpose() + DMatrix::identity(n, n) * 0.5
    }

    #[test]
    fn vec_is_column_major() {
        assert_eq!(
            vec(&dmatrix![1.0, 2.0; 3.0, 4.0]).as_slice(),
            &[1.0, 3.0, 2.0, 4.0]
        );
        assert_eq!(
            vec(&DMatrix::identity(2, 2)).as_slice(),
            &[1.0, 0.0, 0.0, 1.0]
        );
        assert_eq!(vec(&dmatrix![5.0, 6.0, 7.0]).as_slice(), &[5.0, 6.0, 7.0]);
    }

    #[test]
    fn vech_takes_lower_triangle() {
        assert_eq!(
            vech(&dmatrix![1.0, 2.0; 2.0, 4.0]).unwrap().as_slice(),
            &[1.0, 2.0, 4.0]
        );
        assert_eq!(
            vech(&DMatrix::identity(3, 3)).unwrap().as_slice(),
            &[1.0, 0.0, 0.0, 1.0, 0.0, 1.0]
        );
        assert_eq!(vech(&dmatrix![9.0]).unwrap().as_slice(), &[9.0]);
        assert!(vech(&dmatrix![1.0, 2.0, 3.0; 4.0, 5.0, 6.0]).is_err());
    }

    #[test]
    fn operators_satisfy_their_defining_identities() {
        let ops = build_operator_matrices(2);
        let a = dmatrix![1.0, 2.0; 3.0, 4.0];
        let t = ops.t_dense();
        let r = ops.r_dense();
        let s = ops.s_dense();
        assert_eq!((&t * vec(&a)).as_slice(), vec(&a.transpose()).as_slice());
        assert_eq!((&t * vec(&a)).as_slice(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!((&r * vec(&a)).as_slice(), &[1.0, 0.0, 0.0, 4.0]);
        assert_eq!((&s * vec(&a)).as_slice(), &[1.0, 3.0, 4.0]);
        // Fast apply paths agree with the dense forms.
        assert_eq!(ops.apply_t(&vec(&a)).as_slice(), (&t * vec(&a)).as_slice());
        assert_eq!(ops.apply_r(&vec(&a)).as_slice(), (&r * vec(&a)).as_slice());
        assert_eq!(ops.apply_s(&vec(&a)).as_slice(), (&s * vec(&a)).as_slice());
    }

    #[test]
    fn operator_structure_for_random_dims() {
        for d in 1..=5usize {
            let ops = build_operator_matrices(d);
            let t = ops.t_dense();
            let r = ops.r_dense();
            // T is an involutive permutation, R idempotent.
            assert!((&t * &t - DMatrix::identity(d * d, d * d)).abs().max() == 0.0);
            assert!((&r * &r - &r).abs().max() == 0.0);
            for row in 0..d * d {
                assert_eq!(t.row(row).iter().filter(|&&v| v != 0.0).count(), 1);
            }
            // S vec(A) = vech(A) for a random square matrix.
            let rng = CounterRng::new(d as u64);
            let a = DMatrix::from_fn(d, d, |i, j| rng.standard_normal((i * d + j) as u64));
            assert_eq!(
                (ops.s_dense() * vec(&a)).as_slice(),
                vech(&a).unwrap().as_slice()
            );
        }
    }

    #[test]
    fn kron_basics() {
        let a = dmatrix![1.0, 2.0; 3.0, 4.0];
        let block = kron(&DMatrix::identity(2, 2), &a);
        let expected = dmatrix![
            1.0, 2.0, 0.0, 0.0;
            3.0, 4.0, 0.0, 0.0;
            0.0, 0.0, 1.0, 2.0;
            0.0, 0.0, 3.0, 4.0
        ];
        assert_eq!(block, expected);
        assert_eq!(kron(&dmatrix![2.0], &a), dmatrix![2.0, 4.0; 6.0, 8.0]);
    }

    #[test]
    fn kron_mixed_product_rule() {
        // (A kron B)(C kron D) = (AC) kron (BD) for random 2x2 blocks.
        let rng = CounterRng::new(11);
        let mk =
            |off: u64| DMatrix::from_fn(2, 2, |i, j| rng.standard_normal(off + (i * 2 + j) as u64));
        let (a, b, c, d) = (mk(0), mk(10), mk(20), mk(30));
        let lhs = kron(&a, &b) * kron(&c, &d);
        let rhs = kron(&(&a * &c), &(&b * &d));
        assert_abs_diff_eq!((lhs - rhs).abs().max(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn fourth_moment_small_cases() {
        let m1 = isserlis_fourth_moment(&dmatrix![2.0]).unwrap();
        assert_abs_diff_eq!(m1[(0, 0)], 12.0, epsilon = 1e-12); // 3 sigma^4 with sigma^2 = 2

        let m2 = isserlis_fourth_moment(&DMatrix::identity(2, 2)).unwrap();
        // E[z1^4] at ((0,0),(0,0)) -> row 0, col 0; E[z1^2 z2^2] at ((0,1),(0,1)) -> row 1, col 1.
        assert_abs_diff_eq!(m2[(0, 0)], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m2[(1, 1)], 1.0, epsilon = 1e-12);

        assert!(isserlis_fourth_moment(&dmatrix![1.0, 2.0; 2.0, 1.0]).is_err());
    }

    #[test]
    fn fourth_moment_matches_monte_carlo() {
        // n = 3 random SPD Sigma against a 10^6-sample average, 3 SE bands.
        let n = 3;
        let sigma = random_spd(n, 5);
        let chol = nalgebra::Cholesky::new(sigma.clone()).unwrap();
        let l = chol.l();
        let expected = isserlis_fourth_moment(&sigma).unwrap();

        let rng = CounterRng::new(99);
        let t = 1_000_000usize;
        let dim2 = n * n;
        let mut mean = DMatrix::zeros(dim2, dim2);
        let mut m2 = DMatrix::zeros(dim2, dim2);
        for s in 0..t {
            let xi = DVector::from_fn(n, |i, _| rng.standard_normal((s * n + i) as u64));
            let c = &l * xi;
            let outer = &c * c.transpose();
            let v = vec(&outer);
            let obs = &v * v.transpose();
            mean += &obs;
            m2 += obs.component_mul(&obs);
        }
        mean /= t as f64;
        m2 /= t as f64;
        for i in 0..dim2 {
            for j in 0..dim2 {
                let var = (m2[(i, j)] - mean[(i, j)] * mean[(i, j)]).max(0.0);
                let se = (var / t as f64).sqrt();
                assert!(
                    (mean[(i, j)] - expected[(i, j)]).abs() <= 3.0 * se + 1e-9,
                    "entry ({i},{j}): mc {} vs closed {} (se {se})",
                    mean[(i, j)],
                    expected[(i, j)]
                );
            }
        }
    }

    #[test]
    fn fourth_moment_symmetry_and_outer_identity() {
        // Symmetric, and equals Cov(vec(cc^T)) + vec(Sigma) vec(Sigma)^T reshaped.
        let sigma = random_spd(2, 3);
        let m = isserlis_fourth_moment(&sigma).unwrap();
        assert_abs_diff_eq!((&m - m.transpose()).abs().max(), 0.0, epsilon = 1e-12);
        let v = vec(&sigma);
        let outer = &v * v.transpose();
        // M - vec(Sigma)vec(Sigma)^T equals the two remaining pair arrangements,
        // which is exactly Cov(vec(cc^T)); check positive semidefiniteness.
        let cov = &m - outer;
        let eig = cov.symmetric_eigenvalues();
        assert!(eig.min() > -1e-10);
    }

    #[test]
    fn gram_coeffs_trivial_cases() {
        let c = gram_orthonormal_coeffs(&DMatrix::identity(3, 3)).unwrap();
        assert_abs_diff_eq!(
            (c - DMatrix::identity(3, 3)).abs().max(),
            0.0,
            epsilon = 1e-12
        );
        let c = gram_orthonormal_coeffs(&dmatrix![4.0]).unwrap();
        assert_abs_diff_eq!(c[(0, 0)], 0.5, epsilon = 1e-14);
    }

    #[test]
    fn gram_coeffs_orthonormalize() {
        let g = random_spd(5, 21);
        let c = gram_orthonormal_coeffs(&g).unwrap();
        let should_be_identity = &c * &g * c.transpose();
        assert_abs_diff_eq!(
            (should_be_identity - DMatrix::identity(5, 5)).abs().max(),
            0.0,
            epsilon = 1e-10
        );
    }

    #[test]
    fn minor_expansion_agrees_with_cholesky_route() {
        for n in 1..=10usize {
            let g = random_spd(n, 100 + n as u64);
            let fast = gram_orthonormal_coeffs(&g).unwrap();
            let minors = gram_orthonormal_coeffs_minor_expansion(&g).unwrap();
            assert_abs_diff_eq!((&fast - &minors).abs().max(), 0.0, epsilon = 1e-8);
            let ortho = &minors * &g * minors.transpose();
            assert_abs_diff_eq!(
                (ortho - DMatrix::identity(n, n)).abs().max(),
                0.0,
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn gram_coeffs_reject_bad_inputs() {
        assert!(gram_orthonormal_coeffs(&dmatrix![1.0, 0.9; 0.2, 1.0]).is_err());
        assert!(gram_orthonormal_coeffs(&dmatrix![1.0, 2.0; 2.0, 1.0]).is_err());
        // Condition guard: eigenvalues 1 and ~1e14.
        let mut g = DMatrix::identity(2, 2);
        g[(1, 1)] = 1e14;
        assert!(matches!(
            gram_orthonormal_coeffs(&g),
            Err(GapError::NotSpd(_))
        ));
        assert!(gram_orthonormal_coeffs_minor_expansion(&dmatrix![1.0, 2.0; 2.0, 1.0]).is_err());
    }
}
