//! Dense linear-algebra helpers shared by every module.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenvalue floor used when forming inverse square roots of SPD matrices.
pub const EIGEN_FLOOR: f64 = 1e-12;

pub fn ensure_square(m: &DMatrix<f64>, what: &str) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::invalid(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.nrows() == 0 {
        return Err(Error::invalid(format!("{what} must have dimension >= 1")));
    }
    Ok(m.nrows())
}

pub fn ensure_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if !m[(i, j)].is_finite() {
                return Err(Error::invalid(format!(
                    "{what} entry [{i}][{j}] is not finite ({})",
                    m[(i, j)]
                )));
            }
        }
    }
    Ok(())
}

/// Largest singular value. Zero for empty matrices.
pub fn op_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Singular values in non-increasing order.
pub fn singular_values_desc(m: &DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigendecomposition of the symmetric part of `m`.
pub fn sym_eigen(m: &DMatrix<f64>) -> SymmetricEigen<f64, nalgebra::Dyn> {
    SymmetricEigen::new(symmetrize(m))
}

pub fn sym_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    symmetrize(m).symmetric_eigenvalues()
}

pub fn lambda_min(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).min()
}

pub fn lambda_max(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).max()
}

/// Operator norm of a symmetric matrix, max |lambda|.
pub fn sym_op_norm(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).amax()
}

/// `f(W)` for symmetric `W`, applying `f` to the eigenvalues.
pub fn sym_apply(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let eig = sym_eigen(m);
    let mapped = eig.eigenvalues.map(f);
    let q = &eig.eigenvectors;
    let out = q * DMatrix::from_diagonal(&mapped) * q.transpose();
    symmetrize(&out)
}

/// `W^{-1/2}` for symmetric positive definite `W`.
///
/// Fails when the smallest eigenvalue is not positive; eigenvalues in
/// `(0, EIGEN_FLOOR)` are clamped to the floor.
pub fn inv_sqrt_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = sym_eigen(m);
    let min = eig.eigenvalues.min();
    if !(min > 0.0) {
        return Err(Error::invalid(format!(
            "matrix is not positive definite (lambda_min = {min:e})"
        )));
    }
    let mapped = eig.eigenvalues.map(|l| 1.0 / l.max(EIGEN_FLOOR).sqrt());
    let q = &eig.eigenvectors;
    Ok(symmetrize(&(q * DMatrix::from_diagonal(&mapped) * q.transpose())))
}

/// Moore-Penrose pseudo-inverse of a symmetric PSD matrix.
#[derive(Debug, Clone)]
pub struct SymPinv {
    pub pinv: DMatrix<f64>,
    pub rank: usize,
    /// Eigenvalues at or below this were treated as zero.
    pub threshold: f64,
    /// Orthogonal projector onto the retained eigenspace.
    pub range_projector: DMatrix<f64>,
}

/// Rank-revealing cut: eigenvalues `<= d * eps * lambda_max` are dropped.
pub fn pinv_sym(m: &DMatrix<f64>) -> SymPinv {
    let d = m.nrows();
    let eig = sym_eigen(m);
    let top = eig.eigenvalues.amax();
    let threshold = d as f64 * f64::EPSILON * top;
    let mut rank = 0;
    let mapped = eig.eigenvalues.map(|l| {
        if top > 0.0 && l > threshold {
            rank += 1;
            1.0 / l
        } else {
            0.0
        }
    });
    let kept = mapped.map(|v| if v != 0.0 { 1.0 } else { 0.0 });
    let q = &eig.eigenvectors;
    SymPinv {
        pinv: symmetrize(&(q * DMatrix::from_diagonal(&mapped) * q.transpose())),
        rank,
        threshold,
        range_projector: symmetrize(&(q * DMatrix::from_diagonal(&kept) * q.transpose())),
    }
}

/// Stack vectors as the rows of a matrix with `ncols` columns.
pub fn rows_to_matrix(rows: &[DVector<f64>], ncols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j])
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Build a matrix from row arrays, rejecting ragged or non-finite input.
pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Err(Error::invalid("matrix has no rows"));
    }
    let ncols = rows[0].len();
    if ncols == 0 {
        return Err(Error::invalid("matrix row 0 is empty"));
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != ncols {
            return Err(Error::invalid(format!(
                "matrix row {i} has {} entries, expected {ncols}",
                row.len()
            )));
        }
        for (j, v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::invalid(format!("matrix entry [{i}][{j}] is not finite")));
            }
        }
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

/// Serde adapter: `DMatrix<f64>` as a JSON array of rows.
pub mod serde_rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        super::matrix_to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        super::matrix_from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

/// Serde adapter: `Vec<DVector<f64>>` as a JSON array of rows.
pub mod serde_vecs {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[DVector<f64>], s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<&[f64]> = v.iter().map(|x| x.as_slice()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<DVector<f64>>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        Ok(rows.into_iter().map(DVector::from_vec).collect())
    }
}

pub mod serde_opt_vecs {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Vec<DVector<f64>>>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Option<Vec<&[f64]>> = v
            .as_ref()
            .map(|v| v.iter().map(|x| x.as_slice()).collect());
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> Result<Option<Vec<DVector<f64>>>, D::Error> {
        let rows = Option::<Vec<Vec<f64>>>::deserialize(d)?;
        Ok(rows.map(|r| r.into_iter().map(DVector::from_vec).collect()))
    }
}

pub mod serde_opt_rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Option<DMatrix<f64>>, s: S) -> Result<S::Ok, S::Error> {
        m.as_ref().map(super::matrix_to_rows).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<DMatrix<f64>>, D::Error> {
        match Option::<Vec<Vec<f64>>>::deserialize(d)? {
            Some(rows) => super::matrix_from_rows(&rows)
                .map(Some)
                .map_err(serde::de::Error::custom),
            None => Ok(None),
        }
    }
}
