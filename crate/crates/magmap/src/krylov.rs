//! Matrix-free linear algebra for the grid-interpolated GP.
//!
//! The training covariance A = dW K_uu dW^T + sigma_y^2 I is never formed;
//! everything works through matrix-vector products:
//!
//! - [`kron_mvm`] multiplies the Kronecker-factored K_uu by a vector in
//!   O(M * (M1 + M2 + M3)) via per-dimension reshaped multiplications.
//! - [`AOperator`] composes sparse interpolation, the Kronecker MVM, and the
//!   noise term into one symmetric positive-definite operator.
//! - [`pcg`] solves A x = b with (optionally Jacobi-preconditioned)
//!   conjugate gradients.
//! - [`lanczos`] tridiagonalizes A with full reorthogonalization, the basis
//!   for the cached variance estimates.
//! - [`TridiagonalLdl`] factors and solves the small tridiagonal systems.

use crate::error::{Error, Result};
use crate::grid::KroneckerKernel;
use crate::interp::SparseDerivativeInterpolation;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};

/// Symmetric linear operator usable by the iterative solvers.
pub trait LinearOp {
    fn dim(&self) -> usize;
    fn apply(&self, v: &[f64]) -> Vec<f64>;
}

/// Dense matrices act as operators; used by oracles and tests.
impl LinearOp for Array2<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.dot(&ArrayView1::from(v)).to_vec()
    }
}

/// (K1 (x) K2 (x) K3) v without forming the product, via one reshaped
/// multiplication per dimension. `v` is indexed like grid nodes,
/// (i1 * M2 + i2) * M3 + i3.
pub fn kron_mvm(k: &KroneckerKernel, v: &[f64]) -> Result<Vec<f64>> {
    let [m1, m2, m3] = k.dims();
    let m = m1 * m2 * m3;
    if v.len() != m {
        return Err(Error::Data(format!(
            "kronecker operand length {} does not match {} = {}x{}x{} nodes",
            v.len(),
            m,
            m1,
            m2,
            m3
        )));
    }
    // contract dimension 3: rows are (i1, i2) pairs
    let v0 = ArrayView2::from_shape((m1 * m2, m3), v).expect("contiguous input");
    let y3 = v0.dot(&k.factors[2].t());
    // contract dimension 2 blockwise per i1
    let mut y2 = Array2::zeros((m1 * m2, m3));
    for i1 in 0..m1 {
        let rows = s![i1 * m2..(i1 + 1) * m2, ..];
        let block = k.factors[1].dot(&y3.slice(rows));
        y2.slice_mut(rows).assign(&block);
    }
    // contract dimension 1: columns are (i2, i3) pairs
    let y2v = ArrayView2::from_shape((m1, m2 * m3), y2.as_slice().expect("standard layout"))
        .expect("contiguous intermediate");
    let y1 = k.factors[0].dot(&y2v);
    let (out, _) = y1.into_raw_vec_and_offset();
    Ok(out)
}

/// The training operator A = dW K_uu dW^T + sigma_y^2 I.
pub struct AOperator<'a> {
    dw: &'a SparseDerivativeInterpolation,
    kuu: &'a KroneckerKernel,
    noise_variance: f64,
}

impl<'a> AOperator<'a> {
    pub fn new(
        dw: &'a SparseDerivativeInterpolation,
        kuu: &'a KroneckerKernel,
        noise_variance: f64,
    ) -> Result<Self> {
        if dw.num_cols != kuu.num_nodes() {
            return Err(Error::Data(format!(
                "interpolation is built over {} nodes but the kernel has {}",
                dw.num_cols,
                kuu.num_nodes()
            )));
        }
        if !(noise_variance.is_finite() && noise_variance > 0.0) {
            return Err(Error::Config(format!(
                "noise variance must be strictly positive, got {noise_variance}"
            )));
        }
        Ok(Self {
            dw,
            kuu,
            noise_variance,
        })
    }

    /// Exact diagonal of A, for Jacobi preconditioning: each row of
    /// dW K_uu dW^T is a quadratic form over one 64-node stencil, which
    /// factors per dimension into 4x4 Toeplitz forms.
    pub fn diagonal(&self) -> Vec<f64> {
        let t4 = [0, 1, 2].map(|d| self.kuu.stencil_toeplitz(d));
        let mut diag = vec![0.0; self.dim()];
        for n in 0..self.dw.num_points {
            let mut q = [[0.0; 3]; 2]; // [weights or derivatives][dim]
            for d in 0..3 {
                let (w, ndw) = self.dw.point_axis_factors(n, d);
                q[0][d] = toeplitz_quadratic_form(&t4[d], &w, &w);
                q[1][d] = toeplitz_quadratic_form(&t4[d], &ndw, &ndw);
            }
            for c in 0..3 {
                let mut prod = 1.0;
                for d in 0..3 {
                    prod *= if c == d { q[1][d] } else { q[0][d] };
                }
                diag[3 * n + c] = prod + self.noise_variance;
            }
        }
        diag
    }
}

/// u^T T v for the 4x4 symmetric Toeplitz matrix with first row `t`.
pub(crate) fn toeplitz_quadratic_form(t: &[f64; 4], u: &[f64; 4], v: &[f64; 4]) -> f64 {
    let mut acc = 0.0;
    for a in 0..4 {
        for b in 0..4 {
            acc += u[a] * t[a.abs_diff(b)] * v[b];
        }
    }
    acc
}

impl LinearOp for AOperator<'_> {
    fn dim(&self) -> usize {
        self.dw.num_rows()
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        let up = self.dw.apply_transpose(v);
        let ku = kron_mvm(self.kuu, &up).expect("dimensions validated at construction");
        let mut out = self.dw.apply(&ku);
        for (o, vi) in out.iter_mut().zip(v) {
            *o += self.noise_variance * vi;
        }
        out
    }
}

/// Outcome of a conjugate-gradient solve.
#[derive(Debug, Clone)]
pub struct PcgSolution {
    pub x: Vec<f64>,
    /// Number of iterations performed.
    pub iterations: usize,
    /// Whether the residual criterion was met within the iteration budget.
    pub converged: bool,
    /// Euclidean residual norms, starting with the initial residual.
    pub residual_norms: Vec<f64>,
}

impl PcgSolution {
    /// Final residual norm relative to the right-hand side.
    pub fn relative_residual(&self) -> f64 {
        let b = self.residual_norms[0];
        if b == 0.0 {
            0.0
        } else {
            self.residual_norms.last().unwrap() / b
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Preconditioned conjugate gradients for symmetric positive-definite
/// operators. Stops when ||b - A x|| <= tol * ||b|| or after `max_iters`
/// iterations (then `converged` is false). `jacobi` is the diagonal of a
/// Jacobi preconditioner; pass None for plain CG. Deterministic.
pub fn pcg<O: LinearOp>(
    op: &O,
    b: &[f64],
    tol: f64,
    max_iters: usize,
    jacobi: Option<&[f64]>,
) -> Result<PcgSolution> {
    let n = op.dim();
    if b.len() != n {
        return Err(Error::Data(format!(
            "right-hand side length {} does not match operator dimension {n}",
            b.len()
        )));
    }
    if let Some(d) = jacobi {
        if d.len() != n || d.iter().any(|&x| !(x.is_finite() && x > 0.0)) {
            return Err(Error::Config(
                "jacobi preconditioner must be a positive diagonal of operator size".into(),
            ));
        }
    }
    let b_norm = norm(b);
    if !b_norm.is_finite() {
        return Err(Error::Numerical("non-finite right-hand side".into()));
    }
    if b_norm == 0.0 {
        return Ok(PcgSolution {
            x: vec![0.0; n],
            iterations: 0,
            converged: true,
            residual_norms: vec![0.0],
        });
    }

    let precond = |r: &[f64]| -> Vec<f64> {
        match jacobi {
            Some(d) => r.iter().zip(d).map(|(ri, di)| ri / di).collect(),
            None => r.to_vec(),
        }
    };

    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut residual_norms = vec![b_norm];
    let mut z = precond(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..max_iters {
        let ap = op.apply(&p);
        let pap = dot(&p, &ap);
        if !pap.is_finite() {
            return Err(Error::Numerical(
                "non-finite curvature in conjugate gradients".into(),
            ));
        }
        if pap <= 0.0 {
            return Err(Error::Numerical(format!(
                "conjugate-gradient breakdown: nonpositive curvature {pap} \
                 (operator not positive definite?)"
            )));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        iterations += 1;
        let rn = norm(&r);
        if !rn.is_finite() {
            return Err(Error::Numerical(
                "non-finite residual in conjugate gradients".into(),
            ));
        }
        residual_norms.push(rn);
        if rn <= tol * b_norm {
            converged = true;
            break;
        }
        z = precond(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        rz = rz_new;
    }

    Ok(PcgSolution {
        x,
        iterations,
        converged,
        residual_norms,
    })
}

/// Lanczos factors A ~ Q T Q^T: `q` has orthonormal columns, `alpha`/`beta`
/// are the tridiagonal's diagonal and off-diagonal.
#[derive(Debug, Clone)]
pub struct LanczosFactors {
    pub q: Array2<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    /// True when an invariant subspace was found before the requested rank;
    /// the factors then have the achieved rank.
    pub breakdown: bool,
}

impl LanczosFactors {
    pub fn rank(&self) -> usize {
        self.alpha.len()
    }

    /// Dense tridiagonal, for small-scale checks.
    pub fn tridiagonal_dense(&self) -> Array2<f64> {
        let t = self.rank();
        let mut m = Array2::zeros((t, t));
        for i in 0..t {
            m[[i, i]] = self.alpha[i];
            if i + 1 < t {
                m[[i, i + 1]] = self.beta[i];
                m[[i + 1, i]] = self.beta[i];
            }
        }
        m
    }
}

/// Lanczos tridiagonalization with full reorthogonalization: every new
/// vector is re-projected against all previous columns (two passes), keeping
/// ||Q^T Q - I||_max at the 1e-8 level at the cost of O(dim * rank^2) work.
///
/// Stops early (with `breakdown` set) when the Krylov space becomes
/// invariant.
pub fn lanczos<O: LinearOp>(op: &O, start: &[f64], rank: usize) -> Result<LanczosFactors> {
    let n = op.dim();
    if start.len() != n {
        return Err(Error::Data(format!(
            "start vector length {} does not match operator dimension {n}",
            start.len()
        )));
    }
    let t_max = rank.min(n);
    if t_max == 0 {
        return Err(Error::Config("lanczos rank must be at least 1".into()));
    }
    let start_norm = norm(start);
    if start_norm == 0.0 || !start_norm.is_finite() {
        return Err(Error::Numerical(
            "lanczos start vector must be nonzero and finite".into(),
        ));
    }

    let mut q = Array2::<f64>::zeros((n, t_max));
    {
        let mut col = q.column_mut(0);
        for (i, v) in start.iter().enumerate() {
            col[i] = v / start_norm;
        }
    }
    let mut alpha = Vec::with_capacity(t_max);
    let mut beta = Vec::with_capacity(t_max.saturating_sub(1));
    let mut breakdown = false;
    // operator scale estimate for the breakdown tolerance
    let mut scale = 0.0f64;

    for j in 0..t_max {
        let qj = q.column(j).to_vec();
        let mut w = Array1::from_vec(op.apply(&qj));
        if j > 0 {
            let b = beta[j - 1];
            let qprev = q.column(j - 1);
            w.zip_mut_with(&qprev, |wi, qi| *wi -= b * qi);
        }
        let aj = w.dot(&q.column(j));
        if !aj.is_finite() {
            return Err(Error::Numerical("non-finite value in lanczos".into()));
        }
        alpha.push(aj);
        w.zip_mut_with(&q.column(j), |wi, qi| *wi -= aj * qi);
        // full reorthogonalization against all previous columns, twice
        let basis = q.slice(s![.., ..=j]);
        for _ in 0..2 {
            let h = basis.t().dot(&w);
            w -= &basis.dot(&h);
        }
        scale = scale.max(aj.abs());
        if j + 1 == t_max {
            break;
        }
        let bj = norm(w.as_slice().unwrap());
        if !bj.is_finite() {
            return Err(Error::Numerical("non-finite value in lanczos".into()));
        }
        scale = scale.max(bj);
        if bj <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
            breakdown = true;
            break;
        }
        beta.push(bj);
        let mut col = q.column_mut(j + 1);
        col.assign(&(&w / bj));
    }

    let t = alpha.len();
    let q = q.slice(s![.., ..t]).to_owned();
    Ok(LanczosFactors {
        q,
        alpha,
        beta,
        breakdown,
    })
}

/// LDL^T factorization of a symmetric tridiagonal matrix, reusable across
/// right-hand sides in O(size) each.
#[derive(Debug, Clone)]
pub struct TridiagonalLdl {
    d: Vec<f64>,
    l: Vec<f64>,
}

impl TridiagonalLdl {
    /// Factor the matrix with diagonal `diag` and off-diagonal `off`.
    /// Fails on singular or indefinite-to-tolerance input, which for a
    /// Lanczos tridiagonal of an SPD operator signals too aggressive a rank
    /// or too little jitter.
    pub fn factor(diag: &[f64], off: &[f64]) -> Result<Self> {
        let t = diag.len();
        if off.len() + 1 != t && !(t == 0 && off.is_empty()) {
            return Err(Error::Data(format!(
                "tridiagonal with {t} diagonal entries needs {} off-diagonal entries, got {}",
                t.saturating_sub(1),
                off.len()
            )));
        }
        let scale = diag
            .iter()
            .chain(off.iter())
            .fold(0.0f64, |m, &v| m.max(v.abs()));
        let tol = 1e-14 * scale.max(f64::MIN_POSITIVE);
        let mut d = Vec::with_capacity(t);
        let mut l = Vec::with_capacity(t.saturating_sub(1));
        for i in 0..t {
            let mut di = diag[i];
            if i > 0 {
                di -= l[i - 1] * l[i - 1] * d[i - 1];
            }
            if !di.is_finite() || di <= tol {
                return Err(Error::Numerical(format!(
                    "tridiagonal factorization pivot {di} at index {i} is not positive; \
                     increase jitter or reduce the lanczos rank"
                )));
            }
            d.push(di);
            if i + 1 < t {
                l.push(off[i] / di);
            }
        }
        Ok(Self { d, l })
    }

    pub fn size(&self) -> usize {
        self.d.len()
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let t = self.d.len();
        assert_eq!(x.len(), t);
        for i in 1..t {
            x[i] -= self.l[i - 1] * x[i - 1];
        }
        for i in 0..t {
            x[i] /= self.d[i];
        }
        for i in (0..t.saturating_sub(1)).rev() {
            x[i] -= self.l[i] * x[i + 1];
        }
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut x = rhs.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

/// One-shot tridiagonal solve; see [`TridiagonalLdl`].
pub fn tridiag_solve(diag: &[f64], off: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let ldl = TridiagonalLdl::factor(diag, off)?;
    if rhs.len() != ldl.size() {
        return Err(Error::Data(format!(
            "right-hand side length {} does not match tridiagonal size {}",
            rhs.len(),
            ldl.size()
        )));
    }
    Ok(ldl.solve(rhs))
}
