//! Chebyshev–Legendre product quadrature on the unit sphere.
//!
//! Polar cosines ξ come from a Gauss–Legendre rule, azimuths from an
//! equal-weight Chebyshev rule with `n_azim` angles per quadrant. Weights sum
//! to 4π. Directions are stored in blocks so that the reflection maps are pure
//! index arithmetic:
//!
//! `m = ((hemisphere * 4 + quadrant) * n_polar + p) * n_azim + a`
//!
//! with hemisphere 0 for ξ > 0 and quadrants ordered (+,+), (−,+), (−,−), (+,−)
//! in (μ, η).

use std::f64::consts::PI;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum QuadratureError {
    #[error("quadrature needs at least one polar and one azimuthal angle (got {n_polar}, {n_azim})")]
    ZeroCount { n_polar: usize, n_azim: usize },
    #[error("field has {found} values but the quadrature has {expected} directions")]
    LengthMismatch { expected: usize, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Direction {
    pub mu: f64,
    pub eta: f64,
    pub xi: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureSet {
    pub n_polar: usize,
    pub n_azim: usize,
    pub dirs: Vec<Direction>,
}

/// Gauss–Legendre nodes and weights on [-1, 1], nodes ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let half = n.div_ceil(2);
    for i in 0..half {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            // p1 = P_n(z), p0 = P_{n-1}(z)
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

const QUADRANT_SIGNS: [(f64, f64); 4] = [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)];

/// Builds the product set with `8 * n_polar * n_azim` directions.
pub fn build_quadrature(n_polar: usize, n_azim: usize) -> Result<QuadratureSet, QuadratureError> {
    if n_polar == 0 || n_azim == 0 {
        return Err(QuadratureError::ZeroCount { n_polar, n_azim });
    }
    let (nodes, gl_weights) = gauss_legendre(2 * n_polar);
    // positive half of the Legendre rule, ξ descending
    let polar: Vec<(f64, f64)> = (0..n_polar)
        .map(|p| (nodes[2 * n_polar - 1 - p], gl_weights[2 * n_polar - 1 - p]))
        .collect();
    let dphi = 0.5 * PI / n_azim as f64;
    let azim: Vec<(f64, f64)> = (0..n_azim)
        .map(|a| {
            let phi = (a as f64 + 0.5) * dphi;
            (phi.cos(), phi.sin())
        })
        .collect();
    // each of the 4 * n_azim azimuths carries 2π / (4 n_azim)
    let azim_weight = 2.0 * PI / (4 * n_azim) as f64;

    let mut dirs = Vec::with_capacity(8 * n_polar * n_azim);
    for hemi in 0..2 {
        let zsign = if hemi == 0 { 1.0 } else { -1.0 };
        for &(sx, sy) in &QUADRANT_SIGNS {
            for &(xi, wp) in &polar {
                let sin_theta = (1.0 - xi * xi).sqrt();
                for &(c, s) in &azim {
                    dirs.push(Direction {
                        mu: sx * sin_theta * c,
                        eta: sy * sin_theta * s,
                        xi: zsign * xi,
                        weight: wp * azim_weight,
                    });
                }
            }
        }
    }
    Ok(QuadratureSet {
        n_polar,
        n_azim,
        dirs,
    })
}

impl QuadratureSet {
    pub fn len(&self) -> usize {
        self.dirs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dirs.is_empty()
    }

    pub fn weights(&self) -> impl Iterator<Item = f64> + '_ {
        self.dirs.iter().map(|d| d.weight)
    }

    fn block(&self) -> usize {
        self.n_polar * self.n_azim
    }

    fn split(&self, m: usize) -> (usize, usize, usize) {
        let b = self.block();
        let hemi = m / (4 * b);
        let quadrant = (m / b) % 4;
        (hemi, quadrant, m % b)
    }

    fn join(&self, hemi: usize, quadrant: usize, rest: usize) -> usize {
        (hemi * 4 + quadrant) * self.block() + rest
    }

    /// Index of the direction with μ negated.
    pub fn reflect_x(&self, m: usize) -> usize {
        let (h, q, r) = self.split(m);
        self.join(h, [1, 0, 3, 2][q], r)
    }

    /// Index of the direction with η negated.
    pub fn reflect_y(&self, m: usize) -> usize {
        let (h, q, r) = self.split(m);
        self.join(h, [3, 2, 1, 0][q], r)
    }

    /// Index of −Ω.
    pub fn reverse(&self, m: usize) -> usize {
        let (h, q, r) = self.split(m);
        self.join(1 - h, (q + 2) % 4, r)
    }

    /// Index of the direction with ξ negated. In XY geometry it carries the
    /// same angular flux as `m`.
    pub fn mirror_z(&self, m: usize) -> usize {
        let (h, q, r) = self.split(m);
        self.join(1 - h, q, r)
    }

    /// Number of directions in the ξ > 0 hemisphere (the first half of the set).
    pub fn upper_len(&self) -> usize {
        self.len() / 2
    }
}

/// Σ_m w[m] ψ[m].
pub fn angular_integrate(field: &[f64], quad: &QuadratureSet) -> Result<f64, QuadratureError> {
    if field.len() != quad.len() {
        return Err(QuadratureError::LengthMismatch {
            expected: quad.len(),
            found: field.len(),
        });
    }
    Ok(field.iter().zip(&quad.dirs).map(|(v, d)| d.weight * v).sum())
}
