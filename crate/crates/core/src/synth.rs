//! Synthetic replicated fields: stationary Gaussian random fields with
//! exponential covariance, Student-t fields and simple margin transforms.

use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::field::{FieldError, Grid, GridStack};
use crate::rng;

/// Largest grid handled by the dense factorization.
pub const DENSE_LIMIT: usize = 10_000;

/// Give up after this many padding doublings of the circulant torus.
const MAX_PADDING: usize = 32;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthesis spec: {0}")]
    InvalidSpec(String),
    #[error("grid has {cells} cells, over the dense limit of {limit}; use the circulant method")]
    TooLarge { cells: usize, limit: usize },
    #[error("covariance factorization failed: matrix is not positive semi-definite")]
    NotPositiveDefinite,
    #[error("circulant embedding stayed indefinite up to padding factor {0}")]
    EmbeddingFailed(usize),
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Exponential covariance `variance * exp(-h / range)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceSpec {
    pub range: f64,
    pub variance: f64,
}

impl CovarianceSpec {
    pub fn exponential(range: f64) -> Self {
        CovarianceSpec { range, variance: 1.0 }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if !(self.range > 0.0) || self.range.is_nan() {
            return Err(SynthError::InvalidSpec(format!("range must be positive, got {}", self.range)));
        }
        if !(self.variance > 0.0 && self.variance.is_finite()) {
            return Err(SynthError::InvalidSpec(format!("variance must be positive, got {}", self.variance)));
        }
        Ok(())
    }

    #[inline]
    pub fn at(&self, h: f64) -> f64 {
        self.variance * (-h / self.range).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Family {
    Gaussian,
    /// Student-t with the given degrees of freedom.
    Student(f64),
}

impl FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "gaussian" {
            return Ok(Family::Gaussian);
        }
        if let Some(nu) = s.strip_prefix("student:").or_else(|| s.strip_prefix("t:")) {
            return nu.parse().map(Family::Student).map_err(|_| format!("bad degrees of freedom in '{s}'"));
        }
        Err(format!("unknown family '{s}' (expected gaussian or student:<nu>)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarginTransform {
    None,
    /// Probability-integral transform to standard exponential margins.
    Exponential,
    LogGaussian,
}

impl FromStr for MarginTransform {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(MarginTransform::None),
            "exponential" => Ok(MarginTransform::Exponential),
            "log-gaussian" | "log_gaussian" => Ok(MarginTransform::LogGaussian),
            other => Err(format!("unknown margin transform '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FactorMethod {
    /// Dense up to `DENSE_LIMIT` cells, circulant above.
    #[default]
    Auto,
    Dense,
    Circulant,
}

impl FromStr for FactorMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "auto" => Ok(FactorMethod::Auto),
            "dense" => Ok(FactorMethod::Dense),
            "circulant" => Ok(FactorMethod::Circulant),
            other => Err(format!("unknown factorization method '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub grid: Grid,
    pub cov: CovarianceSpec,
    pub m: usize,
    pub family: Family,
    pub margin: MarginTransform,
    pub method: FactorMethod,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        self.grid.validate()?;
        self.cov.validate()?;
        if self.m == 0 {
            return Err(SynthError::InvalidSpec("replicate count must be at least 1".into()));
        }
        if let Family::Student(nu) = self.family {
            if !(nu >= 1.0 && nu.is_finite()) {
                return Err(SynthError::InvalidSpec(format!("degrees of freedom must be >= 1, got {nu}")));
            }
        }
        Ok(())
    }
}

fn center_distance(grid: &Grid, a: usize, b: usize) -> f64 {
    let (ra, ca) = grid.row_col(a);
    let (rb, cb) = grid.row_col(b);
    let hx = (ca as f64 - cb as f64) * grid.dx;
    let hy = (ra as f64 - rb as f64) * grid.dy;
    hx.hypot(hy)
}

pub fn covariance_matrix(grid: &Grid, cov: &CovarianceSpec) -> Result<DMatrix<f64>, SynthError> {
    covariance_matrix_with_limit(grid, cov, DENSE_LIMIT)
}

pub fn covariance_matrix_with_limit(grid: &Grid, cov: &CovarianceSpec, limit: usize) -> Result<DMatrix<f64>, SynthError> {
    cov.validate()?;
    let n = grid.len();
    if n > limit {
        return Err(SynthError::TooLarge { cells: n, limit });
    }
    let mut c = DMatrix::zeros(n, n);
    for i in 0..n {
        c[(i, i)] = cov.variance;
        for j in 0..i {
            let v = cov.at(center_distance(grid, i, j));
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    Ok(c)
}

/// Zero-mean Gaussian field generator with a cached factorization.
pub enum GaussianFieldSampler {
    /// `factor * factor^T` equals the covariance.
    Dense { factor: DMatrix<f64> },
    Circulant(CirculantEmbedding),
}

impl GaussianFieldSampler {
    pub fn new(grid: &Grid, cov: &CovarianceSpec, method: FactorMethod) -> Result<Self, SynthError> {
        let dense = match method {
            FactorMethod::Dense => true,
            FactorMethod::Circulant => false,
            FactorMethod::Auto => grid.len() <= DENSE_LIMIT,
        };
        if dense {
            let c = covariance_matrix(grid, cov)?;
            Ok(GaussianFieldSampler::Dense { factor: dense_factor(c)? })
        } else {
            Ok(GaussianFieldSampler::Circulant(CirculantEmbedding::new(grid, cov)?))
        }
    }

    pub fn len(&self) -> usize {
        match self {
            GaussianFieldSampler::Dense { factor } => factor.nrows(),
            GaussianFieldSampler::Circulant(ce) => ce.nx * ce.ny,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            GaussianFieldSampler::Dense { factor } => {
                let n = factor.nrows();
                let z = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
                (factor * z).iter().copied().collect()
            }
            GaussianFieldSampler::Circulant(ce) => ce.sample(rng),
        }
    }
}

/// Cholesky, falling back to a clipped spectral square root for
/// numerically singular matrices (very long ranges).
fn dense_factor(c: DMatrix<f64>) -> Result<DMatrix<f64>, SynthError> {
    if let Some(ch) = Cholesky::new(c.clone()) {
        return Ok(ch.l());
    }
    let n = c.nrows();
    let eig = SymmetricEigen::new(c);
    let lmax = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let tol = 1e-10 * lmax.max(f64::MIN_POSITIVE) * n as f64;
    if eig.eigenvalues.iter().any(|&l| l < -tol) {
        return Err(SynthError::NotPositiveDefinite);
    }
    let mut factor = eig.eigenvectors;
    for (j, &l) in eig.eigenvalues.iter().enumerate() {
        let s = l.max(0.0).sqrt();
        factor.column_mut(j).scale_mut(s);
    }
    Ok(factor)
}

/// Circulant embedding of the covariance on a periodic torus.
pub struct CirculantEmbedding {
    nx: usize,
    ny: usize,
    mx: usize,
    my: usize,
    /// `sqrt(lambda / (mx * my))` per torus frequency, row-major.
    scale: Vec<f64>,
    row_fft: Arc<dyn Fft<f64>>,
    col_fft: Arc<dyn Fft<f64>>,
}

impl CirculantEmbedding {
    pub fn new(grid: &Grid, cov: &CovarianceSpec) -> Result<Self, SynthError> {
        cov.validate()?;
        let mut planner = FftPlanner::new();
        let mut factor = 2;
        while factor <= MAX_PADDING {
            let (mx, my) = (factor * grid.nx, factor * grid.ny);
            let row_fft = planner.plan_fft_forward(mx);
            let col_fft = planner.plan_fft_forward(my);
            let mut base = vec![Complex::new(0.0, 0.0); mx * my];
            for r in 0..my {
                let hy = r.min(my - r) as f64 * grid.dy;
                for c in 0..mx {
                    let hx = c.min(mx - c) as f64 * grid.dx;
                    base[r * mx + c].re = cov.at(hx.hypot(hy));
                }
            }
            fft2(&mut base, mx, my, &*row_fft, &*col_fft);
            let lmax = base.iter().map(|z| z.re).fold(0.0, f64::max);
            let lmin = base.iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
            if lmin >= -1e-10 * lmax {
                let total = (mx * my) as f64;
                let scale = base.iter().map(|z| (z.re.max(0.0) / total).sqrt()).collect();
                return Ok(CirculantEmbedding { nx: grid.nx, ny: grid.ny, mx, my, scale, row_fft, col_fft });
            }
            factor *= 2;
        }
        Err(SynthError::EmbeddingFailed(MAX_PADDING))
    }

    /// Torus dimensions `(mx, my)`.
    pub fn torus(&self) -> (usize, usize) {
        (self.mx, self.my)
    }

    /// Covariance implied by the embedding at torus lag `(col, row)`.
    pub fn implied_covariance(&self, col: usize, row: usize) -> f64 {
        let total = (self.mx * self.my) as f64;
        let mut buf: Vec<Complex<f64>> = self.scale.iter().map(|&s| Complex::new(s * s * total, 0.0)).collect();
        fft2(&mut buf, self.mx, self.my, &*self.row_fft, &*self.col_fft);
        // the spectrum is real and even, so a forward transform inverts up to 1/N
        buf[row * self.mx + col].re / total
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut buf: Vec<Complex<f64>> = self
            .scale
            .iter()
            .map(|&s| {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                Complex::new(s * re, s * im)
            })
            .collect();
        fft2(&mut buf, self.mx, self.my, &*self.row_fft, &*self.col_fft);
        let mut out = Vec::with_capacity(self.nx * self.ny);
        for r in 0..self.ny {
            out.extend(buf[r * self.mx..r * self.mx + self.nx].iter().map(|z| z.re));
        }
        out
    }
}

fn fft2(data: &mut [Complex<f64>], mx: usize, my: usize, row_fft: &dyn Fft<f64>, col_fft: &dyn Fft<f64>) {
    row_fft.process(data);
    let mut column = vec![Complex::new(0.0, 0.0); my];
    let mut scratch = vec![Complex::new(0.0, 0.0); col_fft.get_inplace_scratch_len()];
    for c in 0..mx {
        for r in 0..my {
            column[r] = data[r * mx + c];
        }
        col_fft.process_with_scratch(&mut column, &mut scratch);
        for r in 0..my {
            data[r * mx + c] = column[r];
        }
    }
}

/// Survival function of the unit-scale field family at `w`.
fn family_survival(family: Family, student: Option<&StudentsT>, w: f64) -> f64 {
    match family {
        Family::Gaussian => 0.5 * erfc(w * std::f64::consts::FRAC_1_SQRT_2),
        Family::Student(_) => student.expect("student distribution").cdf(-w),
    }
}

pub fn simulate(spec: &SynthSpec) -> Result<GridStack, SynthError> {
    spec.validate()?;
    let sampler = GaussianFieldSampler::new(&spec.grid, &spec.cov, spec.method)?;
    let student = match spec.family {
        Family::Student(nu) => Some(StudentsT::new(0.0, 1.0, nu).map_err(|e| SynthError::InvalidSpec(e.to_string()))?),
        Family::Gaussian => None,
    };
    let sd = spec.cov.variance.sqrt();
    let replicates: Vec<Vec<f64>> = (0..spec.m)
        .into_par_iter()
        .map(|j| {
            let mut r = rng::stream(spec.seed, j as u64);
            let mut w = sampler.sample(&mut r);
            if let Family::Student(nu) = spec.family {
                let q: f64 = ChiSquared::new(nu).expect("validated nu").sample(&mut r);
                let scale = (q / nu).sqrt().recip();
                w.iter_mut().for_each(|x| *x *= scale);
            }
            match spec.margin {
                MarginTransform::None => {}
                MarginTransform::Exponential => {
                    for x in w.iter_mut() {
                        *x = -family_survival(spec.family, student.as_ref(), *x / sd).ln();
                    }
                }
                MarginTransform::LogGaussian => w.iter_mut().for_each(|x| *x = x.exp()),
            }
            w
        })
        .collect();
    let values = replicates.concat();
    Ok(GridStack::new(spec.grid, spec.m, values)?)
}
