//! Structured symmetric matrices and the kernels the control variate needs.
//!
//! Three shapes cover every covariance and surrogate curvature in the crate:
//! a plain diagonal, a diagonal plus a rank-`r` factor (`D + F Fᵀ`), and a
//! lower-triangular Cholesky factor `L` standing for `Σ = L Lᵀ`. None of the
//! kernels on the diagonal-plus-low-rank path materialize a `d × d` matrix;
//! matrix-vector products cost `O(d r)` and traces of products cost
//! `O(d (1 + r_b) (1 + r_s))`.

use crate::error::{check_len, Error, Result};

fn all_finite(xs: &[f64]) -> bool {
    xs.iter().all(|x| x.is_finite())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn sq_norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

/// Diagonal matrix stored as its `d` entries.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagMat {
    entries: Vec<f64>,
}

impl DiagMat {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if !all_finite(&entries) {
            return Err(Error::InvalidArgument("diagonal has non-finite entries".into()));
        }
        Ok(Self { entries })
    }

    pub fn zeros(dim: usize) -> Self {
        Self { entries: vec![0.0; dim] }
    }

    pub fn identity(dim: usize) -> Self {
        Self { entries: vec![1.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [f64] {
        &mut self.entries
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("diagonal matvec", x.len(), self.dim())?;
        Ok(self.entries.iter().zip(x).map(|(d, x)| d * x).collect())
    }
}

/// A `d × r` factor stored column-major, so column `a` is the contiguous slice
/// `data[a*d .. (a+1)*d]`. Rank zero is legal and contributes nothing.
#[derive(Clone, Debug, PartialEq)]
pub struct LowRankFactor {
    dim: usize,
    rank: usize,
    data: Vec<f64>,
}

impl LowRankFactor {
    pub fn new(dim: usize, rank: usize, data: Vec<f64>) -> Result<Self> {
        check_len("low-rank factor", data.len(), dim * rank)?;
        if !all_finite(&data) {
            return Err(Error::InvalidArgument("factor has non-finite entries".into()));
        }
        Ok(Self { dim, rank, data })
    }

    pub fn zeros(dim: usize, rank: usize) -> Self {
        Self { dim, rank, data: vec![0.0; dim * rank] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn column(&self, a: usize) -> &[f64] {
        &self.data[a * self.dim..(a + 1) * self.dim]
    }

    pub fn column_mut(&mut self, a: usize) -> &mut [f64] {
        &mut self.data[a * self.dim..(a + 1) * self.dim]
    }

    pub fn get(&self, i: usize, a: usize) -> f64 {
        self.data[a * self.dim + i]
    }

    pub fn columns(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on zero; dim == 0 only happens with an empty factor
        self.data.chunks_exact(self.dim.max(1))
    }

    /// `Fᵀ x`, length `r`.
    pub fn transpose_mul(&self, x: &[f64]) -> Vec<f64> {
        self.columns().map(|col| dot(col, x)).collect()
    }

    /// `F y` accumulated into `out`.
    pub fn mul_add_into(&self, y: &[f64], out: &mut [f64]) {
        for (col, &ya) in self.columns().zip(y) {
            for (o, c) in out.iter_mut().zip(col) {
                *o += c * ya;
            }
        }
    }

    /// Sum over columns of squared entries per row: `Σ_a F_ia²`.
    pub fn row_sq_norms(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for col in self.columns() {
            for (o, c) in out.iter_mut().zip(col) {
                *o += c * c;
            }
        }
        out
    }

    /// `‖Fᵀ G‖²_F` without forming either outer product.
    fn cross_frobenius(&self, other: &LowRankFactor) -> f64 {
        let mut acc = 0.0;
        for u in self.columns() {
            for f in other.columns() {
                let g = dot(u, f);
                acc += g * g;
            }
        }
        acc
    }
}

/// `D + F Fᵀ`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagPlusLowRank {
    diag: DiagMat,
    factor: LowRankFactor,
}

impl DiagPlusLowRank {
    pub fn new(diag: DiagMat, factor: LowRankFactor) -> Result<Self> {
        if diag.dim() != factor.dim() {
            return Err(Error::InvalidArgument(format!(
                "diagonal has dimension {} but factor has {}",
                diag.dim(),
                factor.dim()
            )));
        }
        Ok(Self { diag, factor })
    }

    pub fn zeros(dim: usize, rank: usize) -> Self {
        Self { diag: DiagMat::zeros(dim), factor: LowRankFactor::zeros(dim, rank) }
    }

    pub fn dim(&self) -> usize {
        self.diag.dim()
    }

    pub fn rank(&self) -> usize {
        self.factor.rank()
    }

    pub fn diag(&self) -> &DiagMat {
        &self.diag
    }

    pub fn factor(&self) -> &LowRankFactor {
        &self.factor
    }

    pub fn diag_mut(&mut self) -> &mut DiagMat {
        &mut self.diag
    }

    pub fn factor_mut(&mut self) -> &mut LowRankFactor {
        &mut self.factor
    }

    /// `D x + F (Fᵀ x)`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = self.diag.matvec(x)?;
        let ftx = self.factor.transpose_mul(x);
        self.factor.mul_add_into(&ftx, &mut out);
        Ok(out)
    }

    /// Diagonal entries `d_i + Σ_a F_ia²`.
    pub fn diag_of(&self) -> Vec<f64> {
        let mut out = self.factor.row_sq_norms();
        for (o, d) in out.iter_mut().zip(self.diag.entries()) {
            *o += d;
        }
        out
    }

    /// Pieces of `Σ⁻¹` for a positive-definite `D + F Fᵀ`, via Woodbury:
    /// returns `(diag(Σ⁻¹), Σ⁻¹ F)`. Cost `O(d r²)`.
    pub fn inverse_parts(&self) -> Result<(Vec<f64>, LowRankFactor)> {
        let d = self.dim();
        let r = self.rank();
        let inv_d = self.positive_inverse_diag()?;
        // G = D⁻¹ F
        let mut g = self.factor.clone();
        for a in 0..r {
            for (x, id) in g.column_mut(a).iter_mut().zip(&inv_d) {
                *x *= id;
            }
        }
        let k = capacitance(&self.factor, &g);
        let chol = DenseCholesky::factor(k, r)?;
        // Σ⁻¹ F = D⁻¹ F K⁻¹ (row by row, K symmetric)
        let mut out = LowRankFactor::zeros(d, r);
        let mut row = vec![0.0; r];
        let mut diag = inv_d.clone();
        for i in 0..d {
            for (a, x) in row.iter_mut().enumerate() {
                *x = g.get(i, a);
            }
            let solved = chol.solve(&row);
            for a in 0..r {
                out.column_mut(a)[i] = solved[a];
            }
            diag[i] -= dot(&row, &solved);
        }
        Ok((diag, out))
    }

    fn positive_inverse_diag(&self) -> Result<Vec<f64>> {
        self.diag
            .entries()
            .iter()
            .map(|&x| {
                if x > 0.0 {
                    Ok(1.0 / x)
                } else {
                    Err(Error::Domain(format!("non-positive diagonal entry {x}")))
                }
            })
            .collect()
    }

    /// `log det(D + F Fᵀ) = log det D + log det(I + Fᵀ D⁻¹ F)`.
    pub fn logdet(&self) -> Result<f64> {
        let inv_d = self.positive_inverse_diag()?;
        let logdet_d: f64 = self.diag.entries().iter().map(|x| x.ln()).sum();
        if self.rank() == 0 {
            return Ok(logdet_d);
        }
        let mut g = self.factor.clone();
        for a in 0..self.rank() {
            for (x, id) in g.column_mut(a).iter_mut().zip(&inv_d) {
                *x *= id;
            }
        }
        let k = capacitance(&self.factor, &g);
        let chol = DenseCholesky::factor(k, self.rank())?;
        Ok(logdet_d + chol.logdet())
    }
}

/// `I + Fᵀ G`, row-major `r × r`.
fn capacitance(f: &LowRankFactor, g: &LowRankFactor) -> Vec<f64> {
    let r = f.rank();
    let mut k = vec![0.0; r * r];
    for a in 0..r {
        for b in 0..r {
            k[a * r + b] = dot(f.column(a), g.column(b));
        }
        k[a * r + a] += 1.0;
    }
    k
}

/// Lower-triangular `d × d` matrix, stored densely row-major with zero upper part.
#[derive(Clone, Debug, PartialEq)]
pub struct LowerTriangular {
    dim: usize,
    data: Vec<f64>,
}

impl LowerTriangular {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        check_len("lower-triangular matrix", data.len(), dim * dim)?;
        if !all_finite(&data) {
            return Err(Error::InvalidArgument("triangular matrix has non-finite entries".into()));
        }
        for i in 0..dim {
            for j in i + 1..dim {
                if data[i * dim + j] != 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "entry ({i},{j}) above the diagonal is non-zero"
                    )));
                }
            }
        }
        Ok(Self { dim, data })
    }

    pub fn identity(dim: usize) -> Self {
        let mut data = vec![0.0; dim * dim];
        for i in 0..dim {
            data[i * dim + i] = 1.0;
        }
        Self { dim, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    /// Entries `L_i0 ..= L_ii` of row `i`.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..i * self.dim + i + 1]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// `L x`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("triangular matvec", x.len(), self.dim)?;
        Ok((0..self.dim).map(|i| dot(self.row(i), &x[..=i])).collect())
    }

    /// `Uᵀ L` for one column `u`: returns the row vector of length `d`.
    pub(crate) fn left_mul_column(&self, u: &[f64]) -> Vec<f64> {
        let mut t = vec![0.0; self.dim];
        for (i, ui) in u.iter().enumerate() {
            if *ui == 0.0 {
                continue;
            }
            for (tj, lij) in t.iter_mut().zip(self.row(i)) {
                *tj += ui * lij;
            }
        }
        t
    }

    pub fn logdet_cov(&self) -> Result<f64> {
        let mut acc = 0.0;
        for i in 0..self.dim {
            let lii = self.get(i, i);
            if lii <= 0.0 {
                return Err(Error::Domain(format!("non-positive Cholesky diagonal {lii} at {i}")));
            }
            acc += lii.ln();
        }
        Ok(2.0 * acc)
    }
}

/// A structured matrix. For [`StructuredMatrix::Cholesky`], `matvec` applies `L`
/// itself while `trace_product` and `logdet` treat the value as `Σ = L Lᵀ`.
#[derive(Clone, Debug, PartialEq)]
pub enum StructuredMatrix {
    Diag(DiagMat),
    DiagLowRank(DiagPlusLowRank),
    Cholesky(LowerTriangular),
}

impl StructuredMatrix {
    pub fn dim(&self) -> usize {
        match self {
            StructuredMatrix::Diag(m) => m.dim(),
            StructuredMatrix::DiagLowRank(m) => m.dim(),
            StructuredMatrix::Cholesky(m) => m.dim(),
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            StructuredMatrix::Diag(m) => m.matvec(x),
            StructuredMatrix::DiagLowRank(m) => m.matvec(x),
            StructuredMatrix::Cholesky(m) => m.matvec(x),
        }
    }

    pub fn logdet(&self) -> Result<f64> {
        match self {
            StructuredMatrix::Diag(m) => {
                let mut acc = 0.0;
                for &x in m.entries() {
                    if x <= 0.0 {
                        return Err(Error::Domain(format!("non-positive diagonal entry {x}")));
                    }
                    acc += x.ln();
                }
                Ok(acc)
            }
            StructuredMatrix::DiagLowRank(m) => m.logdet(),
            StructuredMatrix::Cholesky(m) => m.logdet_cov(),
        }
    }

    /// Dense row-major copy of the represented symmetric matrix (`L Lᵀ` for the
    /// Cholesky form). Only meant for diagnostics and tests.
    pub fn to_dense(&self) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; d * d];
        match self {
            StructuredMatrix::Diag(m) => {
                for (i, x) in m.entries().iter().enumerate() {
                    out[i * d + i] = *x;
                }
            }
            StructuredMatrix::DiagLowRank(m) => {
                for (i, x) in m.diag().entries().iter().enumerate() {
                    out[i * d + i] = *x;
                }
                for col in m.factor().columns() {
                    for i in 0..d {
                        for j in 0..d {
                            out[i * d + j] += col[i] * col[j];
                        }
                    }
                }
            }
            StructuredMatrix::Cholesky(l) => {
                for i in 0..d {
                    for j in 0..d {
                        let k = i.min(j) + 1;
                        out[i * d + j] = dot(&l.row(i)[..k], &l.row(j)[..k]);
                    }
                }
            }
        }
        out
    }
}

/// `tr(B Σ)` for a diagonal or diagonal-plus-low-rank `B`.
pub fn trace_product(b: &StructuredMatrix, sigma: &StructuredMatrix) -> Result<f64> {
    if b.dim() != sigma.dim() {
        return Err(Error::InvalidArgument(format!(
            "trace_product: dimensions {} and {} differ",
            b.dim(),
            sigma.dim()
        )));
    }
    let (b_diag, b_factor) = match b {
        StructuredMatrix::Diag(m) => (m.entries(), None),
        StructuredMatrix::DiagLowRank(m) => (m.diag().entries(), Some(m.factor())),
        StructuredMatrix::Cholesky(_) => {
            return Err(Error::InvalidArgument(
                "trace_product: left operand must be diagonal or diagonal-plus-low-rank".into(),
            ))
        }
    };
    let mut acc = 0.0;
    match sigma {
        StructuredMatrix::Diag(s) => {
            acc += dot(b_diag, s.entries());
            if let Some(u) = b_factor {
                acc += dot(&u.row_sq_norms(), s.entries());
            }
        }
        StructuredMatrix::DiagLowRank(s) => {
            acc += dot(b_diag, s.diag().entries());
            acc += dot(b_diag, &s.factor().row_sq_norms());
            if let Some(u) = b_factor {
                acc += dot(&u.row_sq_norms(), s.diag().entries());
                acc += u.cross_frobenius(s.factor());
            }
        }
        StructuredMatrix::Cholesky(l) => {
            for (i, bi) in b_diag.iter().enumerate() {
                acc += bi * sq_norm(l.row(i));
            }
            if let Some(u) = b_factor {
                for col in u.columns() {
                    acc += sq_norm(&l.left_mul_column(col));
                }
            }
        }
    }
    Ok(acc)
}

/// Cholesky factorization of a small dense SPD matrix (the `r × r` capacitance
/// matrices of the Woodbury identities, or dense test targets).
#[derive(Clone, Debug)]
pub struct DenseCholesky {
    n: usize,
    l: Vec<f64>,
}

impl DenseCholesky {
    /// Factors a row-major `n × n` symmetric positive-definite matrix.
    pub fn factor(mut a: Vec<f64>, n: usize) -> Result<Self> {
        check_len("dense cholesky", a.len(), n * n)?;
        for j in 0..n {
            let mut diag = a[j * n + j];
            for k in 0..j {
                diag -= a[j * n + k] * a[j * n + k];
            }
            if !(diag > 0.0) {
                return Err(Error::Domain("matrix is not positive definite".into()));
            }
            let ljj = diag.sqrt();
            a[j * n + j] = ljj;
            for i in j + 1..n {
                let mut s = a[i * n + j];
                for k in 0..j {
                    s -= a[i * n + k] * a[j * n + k];
                }
                a[i * n + j] = s / ljj;
            }
            for k in j + 1..n {
                a[j * n + k] = 0.0;
            }
        }
        Ok(Self { n, l: a })
    }

    pub fn lower(&self) -> &[f64] {
        &self.l
    }

    pub fn logdet(&self) -> f64 {
        2.0 * (0..self.n).map(|i| self.l[i * self.n + i].ln()).sum::<f64>()
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.l[i * n + k] * y[k];
            }
            y[i] = s / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= self.l[k * n + i] * y[k];
            }
            y[i] = s / self.l[i * n + i];
        }
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dlr(diag: Vec<f64>, rank: usize, factor: Vec<f64>) -> DiagPlusLowRank {
        let d = diag.len();
        DiagPlusLowRank::new(DiagMat::new(diag).unwrap(), LowRankFactor::new(d, rank, factor).unwrap())
            .unwrap()
    }

    #[test]
    fn diag_matvec_scales() {
        let m = DiagMat::new(vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(m.matvec(&[1.0, 1.0, 1.0]).unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn rank_one_matvec() {
        let m = dlr(vec![0.0; 3], 1, vec![1.0, 1.0, 1.0]);
        assert_eq!(m.matvec(&[1.0, 0.0, 0.0]).unwrap(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn matvec_dimension_mismatch() {
        let m = dlr(vec![0.0; 3], 1, vec![1.0, 1.0, 1.0]);
        assert!(matches!(m.matvec(&[1.0, 0.0]), Err(Error::InvalidArgument(_))));
        let l = LowerTriangular::identity(2);
        assert!(l.matvec(&[1.0]).is_err());
    }

    #[test]
    fn trace_of_identity_against_diag() {
        let b = StructuredMatrix::Diag(DiagMat::identity(3));
        let s = StructuredMatrix::Diag(DiagMat::new(vec![1.0, 2.0, 3.0]).unwrap());
        assert_eq!(trace_product(&b, &s).unwrap(), 6.0);
    }

    #[test]
    fn trace_of_rank_one_against_identity() {
        let b = StructuredMatrix::DiagLowRank(dlr(vec![0.0; 3], 1, vec![1.0; 3]));
        let s = StructuredMatrix::Diag(DiagMat::identity(3));
        assert_eq!(trace_product(&b, &s).unwrap(), 3.0);
        let s = StructuredMatrix::Cholesky(LowerTriangular::identity(3));
        assert_eq!(trace_product(&b, &s).unwrap(), 3.0);
    }

    #[test]
    fn trace_rejects_cholesky_on_left_and_mismatch() {
        let l = StructuredMatrix::Cholesky(LowerTriangular::identity(2));
        assert!(trace_product(&l, &l).is_err());
        let b = StructuredMatrix::Diag(DiagMat::identity(3));
        let s = StructuredMatrix::Diag(DiagMat::identity(2));
        assert!(trace_product(&b, &s).is_err());
    }

    #[test]
    fn logdet_identities() {
        let m = StructuredMatrix::DiagLowRank(dlr(vec![1.0; 3], 1, vec![0.0; 3]));
        assert_eq!(m.logdet().unwrap(), 0.0);
        let l = StructuredMatrix::Cholesky(LowerTriangular::identity(2));
        assert_eq!(l.logdet().unwrap(), 0.0);
    }

    #[test]
    fn logdet_domain_errors() {
        let m = StructuredMatrix::Diag(DiagMat::new(vec![1.0, 0.0]).unwrap());
        assert!(matches!(m.logdet(), Err(Error::Domain(_))));
        let m = StructuredMatrix::DiagLowRank(dlr(vec![1.0, -1.0], 0, vec![]));
        assert!(matches!(m.logdet(), Err(Error::Domain(_))));
        let l = LowerTriangular::new(2, vec![1.0, 0.0, 3.0, -0.5]).unwrap();
        assert!(matches!(StructuredMatrix::Cholesky(l).logdet(), Err(Error::Domain(_))));
    }

    #[test]
    fn diag_of_examples() {
        assert_eq!(dlr(vec![1.0, 2.0], 1, vec![0.0, 0.0]).diag_of(), vec![1.0, 2.0]);
        assert_eq!(dlr(vec![0.0, 0.0], 1, vec![1.0, 1.0]).diag_of(), vec![1.0, 1.0]);
    }

    #[test]
    fn rank_zero_reduces_to_diagonal() {
        let m = dlr(vec![2.0, 3.0], 0, vec![]);
        assert_eq!(m.matvec(&[1.0, 1.0]).unwrap(), vec![2.0, 3.0]);
        assert_eq!(m.diag_of(), vec![2.0, 3.0]);
        assert!((m.logdet().unwrap() - 6f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn rejects_upper_entries() {
        assert!(LowerTriangular::new(2, vec![1.0, 0.5, 0.0, 1.0]).is_err());
    }

    #[test]
    fn dense_cholesky_solves() {
        let a = vec![4.0, 2.0, 2.0, 3.0];
        let c = DenseCholesky::factor(a, 2).unwrap();
        let x = c.solve(&[2.0, 1.0]);
        assert!((4.0 * x[0] + 2.0 * x[1] - 2.0).abs() < 1e-14);
        assert!((2.0 * x[0] + 3.0 * x[1] - 1.0).abs() < 1e-14);
        assert!((c.logdet() - 8f64.ln()).abs() < 1e-14);
        assert!(DenseCholesky::factor(vec![1.0, 2.0, 2.0, 1.0], 2).is_err());
    }
}
