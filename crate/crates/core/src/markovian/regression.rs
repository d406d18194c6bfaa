//! Least-squares Monte Carlo estimates of conditional expectations.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub const DEFAULT_RIDGE: f64 = 1e-8;
pub const DEFAULT_CLIP_QUANTILE: f64 = 0.01;
pub const DEFAULT_CONDITION_LIMIT: f64 = 1e12;
/// Minimum ratio of samples to basis functions.
pub const SAMPLES_PER_FUNCTION: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    /// Tensor Legendre polynomials of bounded total degree.
    Polynomial,
    /// Additive hat functions on uniform knots in each coordinate.
    PiecewiseLinear,
}

impl BasisKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "polynomial" => Ok(BasisKind::Polynomial),
            "piecewise_linear" => Ok(BasisKind::PiecewiseLinear),
            other => Err(Error::Config(format!(
                "unknown basis `{other}` (expected polynomial | piecewise_linear)"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BasisKind::Polynomial => "polynomial",
            BasisKind::PiecewiseLinear => "piecewise_linear",
        }
    }
}

/// Basis on the box `[lo, hi]`; inputs are clipped to the box first.
/// `size` is the total degree for polynomials and the knot count for hats.
#[derive(Clone, Debug, PartialEq)]
pub struct RegressionBasis {
    pub kind: BasisKind,
    pub size: usize,
    /// The box spans the `[q, 1 - q]` sample quantiles.
    pub clip_quantile: f64,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// Exponent tuples over the active coordinates (polynomial only).
    exponents: Vec<Vec<u32>>,
    active: Vec<usize>,
}

/// Coordinates whose sample range is below this width are treated as
/// constant.
const DEGENERATE_WIDTH: f64 = 1e-12;

impl RegressionBasis {
    pub fn polynomial(degree: usize) -> Self {
        Self::unfitted(BasisKind::Polynomial, degree)
    }

    pub fn piecewise_linear(knots: usize) -> Self {
        Self::unfitted(BasisKind::PiecewiseLinear, knots)
    }

    pub fn unfitted(kind: BasisKind, size: usize) -> Self {
        Self {
            kind,
            size,
            clip_quantile: DEFAULT_CLIP_QUANTILE,
            lo: Vec::new(),
            hi: Vec::new(),
            exponents: Vec::new(),
            active: Vec::new(),
        }
    }

    /// Sets the box to the per-coordinate `[q, 1 - q]` sample quantiles of
    /// `x` (`n x d`, row-major).
    pub fn fitted_to(&self, x: &[f64], d: usize) -> Result<Self> {
        if d == 0 || !x.len().is_multiple_of(d) || x.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "regression input of length {} is not a multiple of d = {d}",
                x.len()
            )));
        }
        if !(0.0..0.5).contains(&self.clip_quantile) {
            return Err(Error::Config(format!(
                "clip quantile {} must lie in [0, 0.5)",
                self.clip_quantile
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("regression input".into()));
        }
        let n = x.len() / d;
        let k = ((n - 1) as f64 * self.clip_quantile).round() as usize;
        let mut lo = Vec::with_capacity(d);
        let mut hi = Vec::with_capacity(d);
        let mut col = Vec::with_capacity(n);
        for j in 0..d {
            col.clear();
            col.extend(x.iter().skip(j).step_by(d).copied());
            let (_, a, _) = col.select_nth_unstable_by(k, f64::total_cmp);
            lo.push(*a);
            let (_, b, _) = col.select_nth_unstable_by(n - 1 - k, f64::total_cmp);
            hi.push(*b);
        }
        self.with_bounds(lo, hi)
    }

    pub fn with_bounds(&self, lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch {
                context: "basis bounds",
                expected: lo.len(),
                got: hi.len(),
            });
        }
        if self.kind == BasisKind::PiecewiseLinear && self.size < 2 {
            return Err(Error::InvalidArgument("piecewise-linear basis needs >= 2 knots".into()));
        }
        let active: Vec<usize> = (0..lo.len()).filter(|&j| hi[j] - lo[j] > DEGENERATE_WIDTH).collect();
        let exponents = match self.kind {
            BasisKind::Polynomial => total_degree_exponents(active.len(), self.size),
            BasisKind::PiecewiseLinear => Vec::new(),
        };
        Ok(Self {
            kind: self.kind,
            size: self.size,
            clip_quantile: self.clip_quantile,
            lo,
            hi,
            exponents,
            active,
        })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    /// Number of basis functions.
    pub fn len(&self) -> usize {
        match self.kind {
            BasisKind::Polynomial => self.exponents.len(),
            BasisKind::PiecewiseLinear => 1 + self.active.len() * (self.size - 1),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Clipped coordinate mapped to `[-1, 1]` (polynomial) or `[0, 1]`.
    fn scaled(&self, j: usize, v: f64) -> f64 {
        let (a, b) = (self.lo[j], self.hi[j]);
        let u = (v.clamp(a, b) - a) / (b - a);
        match self.kind {
            BasisKind::Polynomial => 2.0 * u - 1.0,
            BasisKind::PiecewiseLinear => u,
        }
    }

    /// Writes the basis functions at `x` into `out` (length [`len`](Self::len)).
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        match self.kind {
            BasisKind::Polynomial => {
                let p = self.size;
                let table: Vec<Vec<f64>> = self
                    .active
                    .iter()
                    .map(|&j| legendre_table(self.scaled(j, x[j]), p))
                    .collect();
                for (o, e) in out.iter_mut().zip(&self.exponents) {
                    *o = e.iter().zip(&table).map(|(&k, t)| t[k as usize]).product();
                }
            }
            BasisKind::PiecewiseLinear => {
                out.fill(0.0);
                out[0] = 1.0;
                let cells = (self.size - 1) as f64;
                for (a, &j) in self.active.iter().enumerate() {
                    let u = self.scaled(j, x[j]) * cells;
                    let k = (u.floor() as usize).min(self.size - 2);
                    let frac = u - k as f64;
                    // hat 0 is dropped in favour of the intercept
                    let base = 1 + a * (self.size - 1);
                    if k >= 1 {
                        out[base + k - 1] = 1.0 - frac;
                    }
                    out[base + k] = frac;
                }
            }
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.eval_into(x, &mut out);
        out
    }
}

fn legendre_table(z: f64, p: usize) -> Vec<f64> {
    let mut t = Vec::with_capacity(p + 1);
    t.push(1.0);
    if p >= 1 {
        t.push(z);
    }
    for k in 2..=p {
        let kf = k as f64;
        let v = ((2.0 * kf - 1.0) * z * t[k - 1] - (kf - 1.0) * t[k - 2]) / kf;
        t.push(v);
    }
    t
}

/// All exponent tuples of length `d` with sum `<= p`, graded order.
fn total_degree_exponents(d: usize, p: usize) -> Vec<Vec<u32>> {
    let mut out = vec![vec![0u32; d]];
    for total in 1..=p {
        let mut cur = vec![0u32; d];
        push_with_sum(&mut out, &mut cur, 0, total as u32);
    }
    out
}

fn push_with_sum(out: &mut Vec<Vec<u32>>, cur: &mut [u32], j: usize, left: u32) {
    if j + 1 == cur.len() {
        cur[j] = left;
        out.push(cur.to_vec());
        cur[j] = 0;
        return;
    }
    if cur.is_empty() {
        return;
    }
    for k in (0..=left).rev() {
        cur[j] = k;
        push_with_sum(out, cur, j + 1, left - k);
    }
    cur[j] = 0;
}

/// Fitted conditional expectation `x -> sum_j c_j phi_j(x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Fit {
    pub basis: RegressionBasis,
    pub coeffs: Vec<f64>,
}

impl Fit {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let phi = self.basis.eval(x);
        phi.iter().zip(&self.coeffs).map(|(a, b)| a * b).sum()
    }

    pub fn constant(basis: RegressionBasis, c: f64) -> Self {
        let mut coeffs = vec![0.0; basis.len()];
        if let Some(first) = coeffs.first_mut() {
            *first = c;
        }
        Self { basis, coeffs }
    }
}

/// Factored normal equations for one design; [`fit`](Self::fit) reuses
/// them for any number of targets.
pub struct LeastSquares {
    basis: RegressionBasis,
    design: DMatrix<f64>,
    chol: Cholesky<f64, nalgebra::Dyn>,
    condition: f64,
}

impl LeastSquares {
    /// `x` is `n x d` row-major; the basis must already carry bounds.
    pub fn new(x: &[f64], basis: &RegressionBasis, ridge: f64, condition_limit: f64) -> Result<Self> {
        let d = basis.dim();
        if d == 0 || !x.len().is_multiple_of(d) {
            return Err(Error::InvalidArgument(
                "basis has no bounds or input length does not match its dimension".into(),
            ));
        }
        let n = x.len() / d;
        let p = basis.len();
        let needed = SAMPLES_PER_FUNCTION * p;
        if n < needed {
            return Err(Error::InsufficientSamples {
                samples: n,
                dim: p,
                needed,
            });
        }
        let mut design = DMatrix::<f64>::zeros(n, p);
        let mut row = vec![0.0; p];
        for (i, xi) in x.chunks_exact(d).enumerate() {
            basis.eval_into(xi, &mut row);
            for (j, &v) in row.iter().enumerate() {
                design[(i, j)] = v;
            }
        }
        let mut gram = design.tr_mul(&design) / n as f64;
        // the intercept is not penalized
        for j in 1..p {
            gram[(j, j)] += ridge;
        }
        let eig = SymmetricEigen::new(gram.clone()).eigenvalues;
        let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        let condition = if min > 0.0 { max / min } else { f64::INFINITY };
        if !(condition <= condition_limit) {
            return Err(Error::IllConditioned {
                cond: condition,
                limit: condition_limit,
            });
        }
        let chol = Cholesky::new(gram).ok_or(Error::IllConditioned {
            cond: condition,
            limit: condition_limit,
        })?;
        Ok(Self {
            basis: basis.clone(),
            design,
            chol,
            condition,
        })
    }

    pub fn samples(&self) -> usize {
        self.design.nrows()
    }

    /// Condition number of the (ridged) Gram matrix.
    pub fn condition(&self) -> f64 {
        self.condition
    }

    pub fn fit(&self, y: &[f64]) -> Result<Fit> {
        let n = self.samples();
        if y.len() != n {
            return Err(Error::DimensionMismatch {
                context: "regression targets",
                expected: n,
                got: y.len(),
            });
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("regression targets".into()));
        }
        let rhs = self.design.tr_mul(&DVector::from_column_slice(y)) / n as f64;
        let c = self.chol.solve(&rhs);
        Ok(Fit {
            basis: self.basis.clone(),
            coeffs: c.iter().copied().collect(),
        })
    }

    /// Fitted values at the design points.
    pub fn predict(&self, fit: &Fit) -> Vec<f64> {
        (&self.design * DVector::from_column_slice(&fit.coeffs))
            .iter()
            .copied()
            .collect()
    }
}

/// Regression estimate of `E[Y | X = x]`, with the basis box set to the
/// sample range.
pub fn condexp_regress(x: &[f64], d: usize, y: &[f64], basis: &RegressionBasis) -> Result<Fit> {
    let b = basis.fitted_to(x, d)?;
    LeastSquares::new(x, &b, DEFAULT_RIDGE, DEFAULT_CONDITION_LIMIT)?.fit(y)
}

/// `Z(x) = E[Y_{n+1} dW | X_n = x] / dt`, one fit per Brownian coordinate.
/// `dw` is `n x d` row-major.
pub fn project_z(ls: &LeastSquares, y_next: &[f64], dw: &[f64], dt: f64) -> Result<Vec<Fit>> {
    let n = ls.samples();
    if y_next.len() != n || !dw.len().is_multiple_of(n) || dw.is_empty() {
        return Err(Error::DimensionMismatch {
            context: "project_z",
            expected: n,
            got: y_next.len(),
        });
    }
    let d = dw.len() / n;
    (0..d)
        .map(|j| {
            let target: Vec<f64> = (0..n).map(|i| y_next[i] * dw[i * d + j] / dt).collect();
            ls.fit(&target)
        })
        .collect()
}

/// `Gamma(x) = E[Y_{n+1} M | X_n = x] / dt` where `M` is the realized
/// compensated integral `sum_j gamma(e_j) - dt int gamma dlambda`.
pub fn project_gamma(ls: &LeastSquares, y_next: &[f64], m_gamma: &[f64], dt: f64) -> Result<Fit> {
    let n = ls.samples();
    if y_next.len() != n || m_gamma.len() != n {
        return Err(Error::DimensionMismatch {
            context: "project_gamma",
            expected: n,
            got: m_gamma.len(),
        });
    }
    let target: Vec<f64> = y_next.iter().zip(m_gamma).map(|(y, m)| y * m / dt).collect();
    ls.fit(&target)
}
