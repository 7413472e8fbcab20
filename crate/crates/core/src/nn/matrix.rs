use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Matrix { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Matrix {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }
}

/// `c = alpha * a · bᵀ + beta * c` where `a` is `m×k`, `b` is `n×k`.
pub fn gemm_abt(alpha: f64, a: &Matrix, b: &Matrix, beta: f64, c: &mut Matrix) {
    assert_eq!(a.cols, b.cols);
    assert_eq!((c.rows, c.cols), (a.rows, b.rows));
    let (m, k, n) = (a.rows, a.cols, b.rows);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: slice lengths match the stated shapes and strides.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, alpha,
            a.data.as_ptr(), k as isize, 1,
            b.data.as_ptr(), 1, k as isize,
            beta,
            c.data.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// `c = alpha * a · b + beta * c` where `a` is `m×k`, `b` is `k×n`.
pub fn gemm_ab(alpha: f64, a: &Matrix, b: &Matrix, beta: f64, c: &mut Matrix) {
    assert_eq!(a.cols, b.rows);
    assert_eq!((c.rows, c.cols), (a.rows, b.cols));
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: as above.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, alpha,
            a.data.as_ptr(), k as isize, 1,
            b.data.as_ptr(), n as isize, 1,
            beta,
            c.data.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// `c = alpha * aᵀ · b + beta * c` where `a` is `k×m`, `b` is `k×n`.
pub fn gemm_atb(alpha: f64, a: &Matrix, b: &Matrix, beta: f64, c: &mut Matrix) {
    assert_eq!(a.rows, b.rows);
    assert_eq!((c.rows, c.cols), (a.cols, b.cols));
    let (m, k, n) = (a.cols, a.rows, b.cols);
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    // SAFETY: as above.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, alpha,
            a.data.as_ptr(), 1, m as isize,
            b.data.as_ptr(), n as isize, 1,
            beta,
            c.data.as_mut_ptr(), n as isize, 1,
        );
    }
}

impl Serialize for Matrix {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Matrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(serde::de::Error::custom("ragged matrix rows"));
        }
        Ok(Matrix::from_rows(&rows))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn products_match_hand_values() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]);
        let b = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0]]);
        let mut c = Matrix::zeros(3, 2);
        gemm_abt(1.0, &a, &b, 0.0, &mut c);
        assert_eq!(c.data, vec![1.0, 3.0, 3.0, 7.0, 5.0, 11.0]);
        gemm_ab(1.0, &a, &b, 0.0, &mut c);
        assert_eq!(c.data, vec![3.0, 2.0, 7.0, 4.0, 11.0, 6.0]);
        let mut d = Matrix::zeros(2, 2);
        gemm_atb(1.0, &a, &a, 0.0, &mut d);
        assert_eq!(d.data, vec![35.0, 44.0, 44.0, 56.0]);
    }

    #[test]
    fn serde_is_row_major_nested() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let s = serde_json::to_string(&m).unwrap();
        assert_eq!(s, "[[1.0,2.0],[3.0,4.0]]");
        assert_eq!(serde_json::from_str::<Matrix>(&s).unwrap(), m);
        assert!(serde_json::from_str::<Matrix>("[[1.0],[2.0,3.0]]").is_err());
    }
}
