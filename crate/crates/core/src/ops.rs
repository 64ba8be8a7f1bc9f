//! Dense complex-matrix primitives and PSD-cone utilities.
//!
//! Dimensions here are small (at most ~16), so everything goes through dense
//! Hermitian eigendecompositions and SVDs.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::{Error, Result};

pub type C64 = nalgebra::Complex<f64>;
pub type ComplexMatrix = DMatrix<C64>;

/// Numerical tolerances used throughout the crate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Max-entry deviation `|X - X†|` accepted as Hermitian.
    pub herm: f64,
    /// Most negative eigenvalue accepted as PSD.
    pub psd: f64,
    /// Frobenius distance between trace-normalized operators below which two
    /// operators generate the same ray.
    pub ray: f64,
    /// Singular values below this are treated as zero.
    pub rank: f64,
}

impl Tolerances {
    pub const HERM: f64 = 1e-10;
    pub const PSD: f64 = 1e-9;
    pub const RAY: f64 = 1e-8;
    pub const RANK: f64 = 1e-10;
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            herm: Self::HERM,
            psd: Self::PSD,
            ray: Self::RAY,
            rank: Self::RANK,
        }
    }
}

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn r(re: f64) -> C64 {
    C64::new(re, 0.0)
}

pub fn identity(dim: usize) -> ComplexMatrix {
    ComplexMatrix::identity(dim, dim)
}

pub fn zeros(rows: usize, cols: usize) -> ComplexMatrix {
    ComplexMatrix::zeros(rows, cols)
}

/// Real diagonal matrix.
pub fn diag(values: &[f64]) -> ComplexMatrix {
    ComplexMatrix::from_diagonal(&DVector::from_iterator(
        values.len(),
        values.iter().map(|&v| r(v)),
    ))
}

/// `|i⟩⟨j|` in dimension `dim`.
pub fn ket_bra(dim: usize, i: usize, j: usize) -> ComplexMatrix {
    let mut m = zeros(dim, dim);
    m[(i, j)] = r(1.0);
    m
}

pub fn from_real_rows(rows: &[&[f64]]) -> ComplexMatrix {
    let n = rows.len();
    let m = rows.first().map_or(0, |row| row.len());
    ComplexMatrix::from_fn(n, m, |i, j| r(rows[i][j]))
}

pub fn max_abs_entry(x: &ComplexMatrix) -> f64 {
    x.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

pub fn max_abs_diff(x: &ComplexMatrix, y: &ComplexMatrix) -> f64 {
    debug_assert_eq!(x.shape(), y.shape());
    x.iter()
        .zip(y.iter())
        .fold(0.0, |acc, (a, b)| acc.max((a - b).norm()))
}

pub fn is_finite(x: &ComplexMatrix) -> bool {
    x.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

pub fn frobenius(x: &ComplexMatrix) -> f64 {
    x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Hilbert–Schmidt inner product `Tr(X† Y)`.
pub fn hs_inner(x: &ComplexMatrix, y: &ComplexMatrix) -> C64 {
    x.iter().zip(y.iter()).map(|(a, b)| a.conj() * b).sum()
}

pub fn trace(x: &ComplexMatrix) -> C64 {
    x.diagonal().iter().sum()
}

/// Kronecker product `x ⊗ y`.
pub fn kron(x: &ComplexMatrix, y: &ComplexMatrix) -> ComplexMatrix {
    x.kronecker(y)
}

/// Kronecker product of a list of factors, left to right.
pub fn kron_all<'a>(factors: impl IntoIterator<Item = &'a ComplexMatrix>) -> ComplexMatrix {
    factors
        .into_iter()
        .fold(identity(1), |acc, f| acc.kronecker(f))
}

pub fn hermitian_part(x: &ComplexMatrix) -> ComplexMatrix {
    (x + x.adjoint()).scale(0.5)
}

/// Eigendecomposition of a Hermitian matrix with eigenvalues sorted ascending.
pub fn eigh(x: &ComplexMatrix) -> (Vec<f64>, ComplexMatrix) {
    let n = x.nrows();
    let eig = SymmetricEigen::new(hermitian_part(x));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = ComplexMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    (values, vectors)
}

/// Largest eigenvalue of a Hermitian matrix.
pub fn max_eigenvalue(x: &ComplexMatrix) -> f64 {
    eigh(x).0.last().copied().unwrap_or(0.0)
}

/// Smallest eigenvalue of a Hermitian matrix.
pub fn min_eigenvalue(x: &ComplexMatrix) -> f64 {
    eigh(x).0.first().copied().unwrap_or(0.0)
}

/// `V f(Λ) V†` for a Hermitian input.
pub fn hermitian_fn(x: &ComplexMatrix, f: impl Fn(f64) -> f64) -> ComplexMatrix {
    let (values, vectors) = eigh(x);
    let d = DVector::from_iterator(values.len(), values.iter().map(|&v| r(f(v))));
    &vectors * ComplexMatrix::from_diagonal(&d) * vectors.adjoint()
}

/// Full singular value decomposition `x = U diag(σ) V†`, `σ` descending.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: ComplexMatrix,
    pub singular_values: Vec<f64>,
    pub v: ComplexMatrix,
}

/// Computed with faer; nalgebra's complex SVD loses accuracy on some
/// rank-deficient inputs.
pub fn svd(x: &ComplexMatrix) -> Svd {
    let (m, n) = x.shape();
    if m == 0 || n == 0 {
        return Svd {
            u: identity(m),
            singular_values: Vec::new(),
            v: identity(n),
        };
    }
    let f = faer::Mat::<faer::c64>::from_fn(m, n, |i, j| faer::c64::new(x[(i, j)].re, x[(i, j)].im));
    let s = f.svd().expect("SVD of a finite matrix converges");
    let back = |a: faer::MatRef<'_, faer::c64>| {
        ComplexMatrix::from_fn(a.nrows(), a.ncols(), |i, j| c(a[(i, j)].re, a[(i, j)].im))
    };
    let sigma = s.S().column_vector();
    Svd {
        u: back(s.U()),
        singular_values: (0..m.min(n)).map(|k| sigma[k].re).collect(),
        v: back(s.V()),
    }
}

/// Largest singular value of `x`.
pub fn spectral_norm(x: &ComplexMatrix) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    if x.nrows() == x.ncols() && max_abs_diff(x, &x.adjoint()) == 0.0 {
        let (values, _) = eigh(x);
        return values.iter().fold(0.0, |acc: f64, v| acc.max(v.abs()));
    }
    let gram = x.adjoint() * x;
    max_eigenvalue(&gram).max(0.0).sqrt()
}

/// A Hermitian positive-semidefinite operator.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdOperator {
    matrix: ComplexMatrix,
    tol: f64,
}

impl PsdOperator {
    /// Validates `matrix` with the default tolerances.
    pub fn new(matrix: ComplexMatrix) -> Result<Self> {
        let tol = Tolerances::default();
        Self::with_tolerance(matrix, tol.herm, tol.psd)
    }

    pub fn with_tolerance(matrix: ComplexMatrix, herm: f64, psd: f64) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() || matrix.nrows() == 0 {
            return Err(Error::Dimension(format!(
                "PSD operator must be square and nonempty, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if !is_finite(&matrix) {
            return Err(Error::NonFinite);
        }
        let deviation = max_abs_diff(&matrix, &matrix.adjoint());
        if deviation > herm {
            return Err(Error::NotHermitian { deviation });
        }
        let matrix = hermitian_part(&matrix);
        let min = min_eigenvalue(&matrix);
        if min < -psd {
            return Err(Error::NotPsd {
                min_eigenvalue: min,
            });
        }
        Ok(Self { matrix, tol: psd })
    }

    /// Skips the eigenvalue check; the caller guarantees PSD-ness.
    pub(crate) fn from_trusted(matrix: ComplexMatrix) -> Self {
        Self {
            matrix: hermitian_part(&matrix),
            tol: Tolerances::PSD,
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_trusted(identity(dim))
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.matrix
    }

    pub fn tolerance(&self) -> f64 {
        self.tol
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn trace(&self) -> f64 {
        trace(&self.matrix).re
    }

    pub fn scaled(&self, s: f64) -> Self {
        debug_assert!(s >= 0.0);
        Self::from_trusted(self.matrix.scale(s))
    }

    pub fn is_zero(&self) -> bool {
        max_abs_entry(&self.matrix) == 0.0
    }

    /// Number of eigenvalues above `tol`.
    pub fn rank(&self, tol: f64) -> usize {
        eigh(&self.matrix).0.iter().filter(|&&v| v > tol).count()
    }

    /// Trace-normalized copy.
    pub fn normalized(&self) -> Result<Self> {
        let t = self.trace();
        if t <= 0.0 || self.is_zero() {
            return Err(Error::ZeroOperator);
        }
        Ok(Self::from_trusted(self.matrix.unscale(t)))
    }
}

/// A ray `{λX : λ ≥ 0}` in the PSD cone, stored as its unit-trace point.
#[derive(Debug, Clone, PartialEq)]
pub struct Ray {
    pub representative: PsdOperator,
    pub sources: Vec<usize>,
}

impl Ray {
    pub fn new(op: &PsdOperator, sources: Vec<usize>) -> Result<Self> {
        Ok(Self {
            representative: op.normalized()?,
            sources,
        })
    }
}

/// The unique PSD square root.
pub fn psd_sqrt(p: &PsdOperator) -> PsdOperator {
    PsdOperator::from_trusted(hermitian_fn(p.matrix(), |v| v.max(0.0).sqrt()))
}

/// Polar decomposition `K = U P` with `P = sqrt(K†K)`.
///
/// `U` maps the support of `P` isometrically and acts as the identity on the
/// kernel of `P`.
pub fn polar_decompose(k: &ComplexMatrix) -> Result<(ComplexMatrix, PsdOperator)> {
    if k.nrows() != k.ncols() {
        return Err(Error::Dimension(format!(
            "polar decomposition expects a square operator, got {}x{}",
            k.nrows(),
            k.ncols()
        )));
    }
    let n = k.nrows();
    let Svd {
        u: w,
        singular_values: sigma,
        v,
    } = svd(k);

    let mut p = zeros(n, n);
    let mut u = zeros(n, n);
    let mut support = zeros(n, n);
    for (s, &value) in sigma.iter().enumerate() {
        let vs = v.column(s);
        let outer_v = vs * vs.adjoint();
        p += outer_v.scale(value);
        if value > Tolerances::RANK {
            u += w.column(s) * vs.adjoint();
            support += outer_v;
        }
    }
    u += identity(n) - support;
    Ok((u, PsdOperator::from_trusted(p)))
}

/// Moore–Penrose pseudo-inverse with singular values below `tol_rank`
/// treated as zero.
pub fn pseudo_inverse(x: &ComplexMatrix, tol_rank: f64) -> ComplexMatrix {
    let d = svd(x);
    let mut out = zeros(x.ncols(), x.nrows());
    for (s, &sigma) in d.singular_values.iter().enumerate() {
        if sigma >= tol_rank {
            out += (d.v.column(s) * d.u.column(s).adjoint()).unscale(sigma);
        }
    }
    out
}

/// Frobenius distance between the trace-normalized operators.
pub fn ray_distance(x: &PsdOperator, y: &PsdOperator) -> Result<f64> {
    if x.dim() != y.dim() {
        return Err(Error::Dimension(format!(
            "cannot compare rays of dimension {} and {}",
            x.dim(),
            y.dim()
        )));
    }
    let xn = x.normalized()?;
    let yn = y.normalized()?;
    Ok(frobenius(&(xn.matrix() - yn.matrix())))
}

/// Whether `x` and `y` generate the same ray within `tol_ray`.
pub fn proportional(x: &PsdOperator, y: &PsdOperator, tol_ray: f64) -> Result<bool> {
    Ok(ray_distance(x, y)? <= tol_ray)
}

/// Phase-insensitive proportionality test for general operators:
/// `|⟨X,Y⟩| ≥ (1 - tol)‖X‖_F‖Y‖_F`.
pub fn operators_proportional(x: &ComplexMatrix, y: &ComplexMatrix, tol: f64) -> bool {
    let nx = frobenius(x);
    let ny = frobenius(y);
    if nx == 0.0 || ny == 0.0 {
        return false;
    }
    hs_inner(x, y).norm() >= (1.0 - tol) * nx * ny
}
