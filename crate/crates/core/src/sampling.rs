//! Collocation point generation: tensor-product Gauss-Legendre quadrature
//! and uniform Monte-Carlo sampling over axis-aligned boxes in 2D/3D.
//!
//! Gauss sample sets carry quadrature weights that sum to the measure of the
//! sampled region; Monte-Carlo sets carry uniform `1/N` weights, i.e. the
//! average form of the sampled losses.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `(-1, 1)`.
///
/// Nodes are the roots of the degree-`n` Legendre polynomial, found by
/// Newton iteration on the three-term recurrence from cosine initial
/// guesses; they are returned strictly increasing and exactly symmetric
/// about zero. Weights are positive and sum to 2.
pub fn gauss_legendre(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 {
        return Err(Error::config("quadrature order must be at least 1"));
    }
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let half = n / 2;
    for k in 0..half {
        // the (k+1)-th root counted from +1 downwards
        let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut converged = false;
        for _ in 0..100 {
            let (p, dp) = legendre_and_derivative(n, x);
            let delta = p / dp;
            x -= delta;
            if delta.abs() <= 1e-14 {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::non_finite("gauss-legendre newton iteration"));
        }
        let (_, dp) = legendre_and_derivative(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[n - 1 - k] = x;
        nodes[k] = -x;
        weights[n - 1 - k] = w;
        weights[k] = w;
    }
    if n % 2 == 1 {
        let (_, dp) = legendre_and_derivative(n, 0.0);
        nodes[half] = 0.0;
        weights[half] = 2.0 / (dp * dp);
    }
    Ok((nodes, weights))
}

/// `P_n(x)` and `P_n'(x)` via the three-term recurrence.
fn legendre_and_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p_prev = 1.0;
    let mut p = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p_next = ((2.0 * kf - 1.0) * x * p - (kf - 1.0) * p_prev) / kf;
        p_prev = p;
        p = p_next;
    }
    let dp = if (x * x - 1.0).abs() < 1e-300 {
        // endpoints never occur for the interior roots handled here
        0.0
    } else {
        (n as f64) * (x * p - p_prev) / (x * x - 1.0)
    };
    (p, dp)
}

/// Maps `t` in `[-1, 1]` onto the interval `(a, b)`.
#[inline]
pub fn affine_map(interval: (f64, f64), t: f64) -> f64 {
    let (a, b) = interval;
    (a * (1.0 - t) + b * (1.0 + t)) / 2.0
}

/// Weight scale factor accompanying [`affine_map`].
#[inline]
pub fn affine_scale(interval: (f64, f64)) -> f64 {
    (interval.1 - interval.0) / 2.0
}

/// An axis-aligned box domain in 2 or 3 dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxDomain {
    intervals: Vec<(f64, f64)>,
}

impl BoxDomain {
    pub fn new(intervals: Vec<(f64, f64)>) -> Result<Self> {
        if intervals.len() < 2 || intervals.len() > 3 {
            return Err(Error::config("box domain must be 2- or 3-dimensional"));
        }
        for (a, b) in &intervals {
            if !(a < b) || !a.is_finite() || !b.is_finite() {
                return Err(Error::config("box interval must satisfy a < b"));
            }
        }
        Ok(BoxDomain { intervals })
    }

    pub fn unit_square() -> Self {
        BoxDomain::new(vec![(0.0, 1.0), (0.0, 1.0)]).unwrap()
    }

    pub fn unit_cube() -> Self {
        BoxDomain::new(vec![(0.0, 1.0), (0.0, 1.0), (0.0, 1.0)]).unwrap()
    }

    /// The square `(a, b)^2`.
    pub fn square(a: f64, b: f64) -> Result<Self> {
        BoxDomain::new(vec![(a, b), (a, b)])
    }

    pub fn dim(&self) -> usize {
        self.intervals.len()
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    pub fn volume(&self) -> f64 {
        self.intervals.iter().map(|(a, b)| b - a).product()
    }

    /// Total boundary measure: perimeter in 2D, surface area in 3D.
    pub fn surface_measure(&self) -> f64 {
        self.faces().iter().map(|f| f.measure).sum()
    }

    /// The `2 d` faces; each fixes one axis at one endpoint.
    pub fn faces(&self) -> Vec<Face> {
        let d = self.dim();
        let mut faces = Vec::with_capacity(2 * d);
        for axis in 0..d {
            let measure: f64 = (0..d)
                .filter(|k| *k != axis)
                .map(|k| self.intervals[k].1 - self.intervals[k].0)
                .product();
            for side in [Side::Lower, Side::Upper] {
                faces.push(Face {
                    axis,
                    side,
                    measure,
                });
            }
        }
        faces
    }

    /// Identifies the face a boundary point lies on by exact coordinate
    /// comparison with the interval endpoints.
    pub fn face_of(&self, x: &[f64]) -> Option<Face> {
        for face in self.faces() {
            let (a, b) = self.intervals[face.axis];
            let target = match face.side {
                Side::Lower => a,
                Side::Upper => b,
            };
            if x[face.axis] == target {
                return Some(face);
            }
        }
        None
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(&self.intervals)
            .all(|(v, (a, b))| *v >= *a && *v <= *b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Lower,
    Upper,
}

/// One face of a box: the fixed axis, which endpoint it is fixed at, and
/// the face measure (edge length in 2D, face area in 3D).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Face {
    pub axis: usize,
    pub side: Side,
    pub measure: f64,
}

impl Face {
    /// Outward unit normal component along the fixed axis.
    pub fn normal_sign(&self) -> f64 {
        match self.side {
            Side::Lower => -1.0,
            Side::Upper => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    Interior,
    Boundary,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    MonteCarlo,
    Gauss,
}

/// Collocation points with per-point weights.
#[derive(Clone, Debug)]
pub struct SampleSet {
    pub points: Array2<f64>,
    pub weights: Array1<f64>,
    pub region: Region,
    pub scheme: Scheme,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        self.points.row(i).to_slice().expect("row-major")
    }

    pub fn weight_sum(&self) -> f64 {
        self.weights.sum()
    }
}

/// Tensor-product Gauss rule over the box interior: `n_g^d` points, the
/// weight of a point being the product of the scaled 1D weights.
pub fn gauss_interior(domain: &BoxDomain, n_g: usize) -> Result<SampleSet> {
    let d = domain.dim();
    let (nodes, weights) = gauss_legendre(n_g)?;
    let mapped: Vec<(Vec<f64>, Vec<f64>)> = domain
        .intervals()
        .iter()
        .map(|iv| {
            let scale = affine_scale(*iv);
            (
                nodes.iter().map(|t| affine_map(*iv, *t)).collect(),
                weights.iter().map(|w| w * scale).collect(),
            )
        })
        .collect();
    let count = n_g.pow(d as u32);
    let mut points = Array2::zeros((count, d));
    let mut w = Array1::zeros(count);
    let mut idx = vec![0usize; d];
    for row in 0..count {
        let mut weight = 1.0;
        for k in 0..d {
            points[[row, k]] = mapped[k].0[idx[k]];
            weight *= mapped[k].1[idx[k]];
        }
        w[row] = weight;
        // odometer increment, last axis fastest
        for k in (0..d).rev() {
            idx[k] += 1;
            if idx[k] < n_g {
                break;
            }
            idx[k] = 0;
        }
    }
    Ok(SampleSet {
        points,
        weights: w,
        region: Region::Interior,
        scheme: Scheme::Gauss,
    })
}

/// Gauss rule over the box boundary: `n_g` points per edge in 2D, a tensor
/// rule of `n_g^2` points per face in 3D. The fixed coordinate of each point
/// is bit-equal to its interval endpoint.
pub fn gauss_boundary(domain: &BoxDomain, n_g: usize) -> Result<SampleSet> {
    let d = domain.dim();
    let (nodes, weights) = gauss_legendre(n_g)?;
    let per_face = n_g.pow((d - 1) as u32);
    let count = 2 * d * per_face;
    let mut points = Array2::zeros((count, d));
    let mut w = Array1::zeros(count);
    let mut row = 0;
    for face in domain.faces() {
        let (a, b) = domain.intervals()[face.axis];
        let fixed = match face.side {
            Side::Lower => a,
            Side::Upper => b,
        };
        let running: Vec<usize> = (0..d).filter(|k| *k != face.axis).collect();
        let mut idx = vec![0usize; running.len()];
        for _ in 0..per_face {
            points[[row, face.axis]] = fixed;
            let mut weight = 1.0;
            for (slot, &axis) in running.iter().enumerate() {
                let iv = domain.intervals()[axis];
                points[[row, axis]] = affine_map(iv, nodes[idx[slot]]);
                weight *= weights[idx[slot]] * affine_scale(iv);
            }
            w[row] = weight;
            row += 1;
            for slot in (0..running.len()).rev() {
                idx[slot] += 1;
                if idx[slot] < n_g {
                    break;
                }
                idx[slot] = 0;
            }
        }
    }
    Ok(SampleSet {
        points,
        weights: w,
        region: Region::Boundary,
        scheme: Scheme::Gauss,
    })
}

/// `count` i.i.d. uniform interior points with weights `1/count`.
pub fn mc_interior(domain: &BoxDomain, count: usize, seed: u64) -> Result<SampleSet> {
    if count == 0 {
        return Err(Error::config("sample count must be positive"));
    }
    let d = domain.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Array2::zeros((count, d));
    for p in 0..count {
        for (k, (a, b)) in domain.intervals().iter().enumerate() {
            points[[p, k]] = rng.random_range(*a..*b);
        }
    }
    Ok(SampleSet {
        points,
        weights: Array1::from_elem(count, 1.0 / count as f64),
        region: Region::Interior,
        scheme: Scheme::MonteCarlo,
    })
}

/// `count` boundary points uniform with respect to surface measure: a face
/// is chosen proportionally to its measure, then the running coordinates are
/// uniform on it. Weights are `1/count`.
pub fn mc_boundary(domain: &BoxDomain, count: usize, seed: u64) -> Result<SampleSet> {
    if count == 0 {
        return Err(Error::config("sample count must be positive"));
    }
    let d = domain.dim();
    let faces = domain.faces();
    let total: f64 = faces.iter().map(|f| f.measure).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Array2::zeros((count, d));
    for p in 0..count {
        let mut pick = rng.random_range(0.0..total);
        let mut chosen = faces[faces.len() - 1];
        for face in &faces {
            if pick < face.measure {
                chosen = *face;
                break;
            }
            pick -= face.measure;
        }
        let (a, b) = domain.intervals()[chosen.axis];
        points[[p, chosen.axis]] = match chosen.side {
            Side::Lower => a,
            Side::Upper => b,
        };
        for k in 0..d {
            if k != chosen.axis {
                let (a, b) = domain.intervals()[k];
                points[[p, k]] = rng.random_range(a..b);
            }
        }
    }
    Ok(SampleSet {
        points,
        weights: Array1::from_elem(count, 1.0 / count as f64),
        region: Region::Boundary,
        scheme: Scheme::MonteCarlo,
    })
}
