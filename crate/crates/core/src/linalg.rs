use nalgebra::{DMatrix, SymmetricEigen};

/// Condition number above which inverses fall back to a pseudo-inverse.
pub const CONDITION_LIMIT: f64 = 1e12;

#[derive(Debug, Clone)]
pub(crate) struct Inverse {
    pub matrix: DMatrix<f64>,
    pub condition: f64,
    /// Eigenvalues below the cut-off were dropped.
    pub pseudo: bool,
}

/// Inverse of a symmetric matrix through its eigendecomposition, truncating
/// eigenvalues smaller than `max|λ| / CONDITION_LIMIT`.
pub(crate) fn symmetric_inverse(m: &DMatrix<f64>) -> Inverse {
    let sym = symmetrize(m);
    let eig = SymmetricEigen::new(sym);
    let abs: Vec<f64> = eig.eigenvalues.iter().map(|v| v.abs()).collect();
    let max = abs.iter().cloned().fold(0.0, f64::max);
    let min = abs.iter().cloned().fold(f64::INFINITY, f64::min);
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    let cutoff = max / CONDITION_LIMIT;
    let n = m.nrows();
    let mut out = DMatrix::zeros(n, n);
    let mut pseudo = false;
    for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda.abs() <= cutoff || lambda == 0.0 {
            pseudo = true;
            continue;
        }
        let v = eig.eigenvectors.column(i);
        out += (v * v.transpose()) / lambda;
    }
    Inverse {
        matrix: symmetrize(&out),
        condition,
        pseudo,
    }
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Smallest eigenvalue of a symmetric matrix.
pub(crate) fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}


/// Serde adapter writing a matrix as a list of rows.
pub(crate) mod rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(serde::de::Error::custom("ragged matrix rows"));
        }
        Ok(DMatrix::from_row_iterator(
            nrows,
            ncols,
            rows.into_iter().flatten(),
        ))
    }
}
