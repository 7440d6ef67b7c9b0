//! Manufactured model problems: domain, exact solution, forcing, boundary
//! data, and potential for the Poisson, p-Laplacian, and eigenvalue
//! benchmarks.
//!
//! Every problem with an exact solution carries it as a jet-valued oracle,
//! so forcings that are unwieldy to derive by hand (the oscillatory-layer
//! examples, the p-Laplacian) are synthesized by applying the differential
//! operator to the exact jets.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::jet::{Jet2, JetField, ScalarField};
use crate::sampling::BoxDomain;

/// Gradient-norm floor applied before fractional powers in the p-Laplacian
/// operator, guarding the critical points of the exact solutions.
pub const GRAD_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PdeKind {
    Poisson,
    PLaplace { p: f64 },
    Eigen,
}

impl PdeKind {
    pub fn p_exponent(&self) -> f64 {
        match self {
            PdeKind::PLaplace { p } => *p,
            _ => 2.0,
        }
    }
}

/// A model problem: box domain, PDE kind, and its data oracles.
#[derive(Clone, Debug)]
pub struct Problem {
    pub name: String,
    pub domain: BoxDomain,
    pub kind: PdeKind,
    /// Exact solution, when manufactured.
    pub exact: Option<JetField>,
    pub forcing: ScalarField,
    /// Dirichlet boundary data.
    pub dirichlet: ScalarField,
    /// Potential term, eigenvalue problems only.
    pub potential: Option<ScalarField>,
    /// The smallest nonzero eigenvalue, eigenvalue problems only.
    pub reference_eigenvalue: Option<f64>,
}

impl Problem {
    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    /// Strong-form residual of a candidate jet at `x`; `None` for the
    /// eigenvalue problems, which have no forcing.
    pub fn strong_residual(&self, jet: &Jet2, x: &[f64]) -> Option<f64> {
        match self.kind {
            PdeKind::Poisson => Some(jet.laplacian() + self.forcing.value(x)),
            PdeKind::PLaplace { p } => Some(p_laplace_operator(jet, p) + self.forcing.value(x)),
            PdeKind::Eigen => None,
        }
    }

    pub fn potential_value(&self, x: &[f64]) -> f64 {
        self.potential.as_ref().map_or(0.0, |v| v.value(x))
    }
}

/// The expanded p-Laplace operator
/// `|grad u|^(p-2) lap u + (p-2) |grad u|^(p-4) grad^T H grad`,
/// with the squared gradient norm floored before fractional powers.
pub fn p_laplace_operator(jet: &Jet2, p: f64) -> f64 {
    let s = jet.grad_norm_sq().max(GRAD_FLOOR);
    s.powf((p - 2.0) / 2.0) * jet.laplacian()
        + (p - 2.0) * s.powf((p - 4.0) / 2.0) * jet.grad_hess_grad()
}

/// Synthesizes the forcing `f` from the exact solution so that the exact
/// solution solves `-L u = f` for the given operator.
pub fn forcing_from_exact(exact: &JetField, kind: PdeKind) -> ScalarField {
    let exact = exact.clone();
    match kind {
        PdeKind::Poisson => ScalarField::new(exact.dim(), move |x| -exact.jet(x).laplacian()),
        PdeKind::PLaplace { p } => {
            ScalarField::new(exact.dim(), move |x| -p_laplace_operator(&exact.jet(x), p))
        }
        PdeKind::Eigen => ScalarField::constant(exact.dim(), 0.0),
    }
}

fn zero_dirichlet(dim: usize) -> ScalarField {
    ScalarField::constant(dim, 0.0)
}

/// Smooth oscillatory solution `sin(k pi x) sin(k pi y)` on the unit square
/// with `f = 2 k^2 pi^2 u`.
pub fn example1(k: u32) -> Problem {
    assert!(k >= 1);
    let kf = f64::from(k);
    let exact = JetField::new(2, move |x| {
        Jet2::coord(x[0], 0, 2).scale(kf * PI).sin() * Jet2::coord(x[1], 1, 2).scale(kf * PI).sin()
    });
    let amp = 2.0 * kf * kf * PI * PI;
    let exact_f = exact.clone();
    let forcing = ScalarField::new(2, move |x| amp * exact_f.value(x));
    Problem {
        name: format!("ex1:k={k}"),
        domain: BoxDomain::unit_square(),
        kind: PdeKind::Poisson,
        exact: Some(exact),
        forcing,
        dirichlet: zero_dirichlet(2),
        potential: None,
        reference_eigenvalue: None,
    }
}

/// Multi-frequency solution `(1/N) sum_l sin(2^l pi x) sin(2^l pi y)`.
pub fn example2(n: u32) -> Problem {
    assert!(n >= 1);
    let freqs: Vec<f64> = (1..=n).map(|l| f64::from(2u32.pow(l)) * PI).collect();
    let scale = 1.0 / f64::from(n);
    let freqs_u = freqs.clone();
    let exact = JetField::new(2, move |x| {
        let mut acc = Jet2::constant(0.0, 2);
        for w in &freqs_u {
            acc = acc
                + Jet2::coord(x[0], 0, 2).scale(*w).sin() * Jet2::coord(x[1], 1, 2).scale(*w).sin();
        }
        acc.scale(scale)
    });
    let forcing = ScalarField::new(2, move |x| {
        let mut acc = 0.0;
        for w in &freqs {
            acc += 2.0 * w * w * (w * x[0]).sin() * (w * x[1]).sin();
        }
        scale * acc
    });
    Problem {
        name: format!("ex2:N={n}"),
        domain: BoxDomain::unit_square(),
        kind: PdeKind::Poisson,
        exact: Some(exact),
        forcing,
        dirichlet: zero_dirichlet(2),
        potential: None,
        reference_eigenvalue: None,
    }
}

/// High-contrast oscillatory interior layer
/// `A x(1-x) y(1-y) sin((x-1/2)(y-1/2)/eps)`; the forcing is synthesized.
pub fn example3(a: f64, eps: f64) -> Problem {
    assert!(a > 0.0 && eps > 0.0);
    let exact = JetField::new(2, move |x| {
        let xv = Jet2::coord(x[0], 0, 2);
        let yv = Jet2::coord(x[1], 1, 2);
        let one = Jet2::constant(1.0, 2);
        let poly = xv * (one - xv) * yv * (one - yv);
        let arg = (xv.shift(-0.5) * yv.shift(-0.5)).scale(1.0 / eps);
        poly.scale(a) * arg.sin()
    });
    let forcing = forcing_from_exact(&exact, PdeKind::Poisson);
    Problem {
        name: format!("ex3:A={a},eps={eps}"),
        domain: BoxDomain::unit_square(),
        kind: PdeKind::Poisson,
        exact: Some(exact),
        forcing,
        dirichlet: zero_dirichlet(2),
        potential: None,
        reference_eigenvalue: None,
    }
}

/// Variants of the three-dimensional examples on the unit cube.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ThreeDimVariant {
    /// `sin(k pi x) sin(k pi y) sin(k pi z)`
    Osc { k: u32 },
    /// `(1/N) sum_l sin(2^l pi x) sin(2^l pi y) sin(2^l pi z)`
    Multi { n: u32 },
    /// `A x(1-x) y(1-y) z(1-z) sin((x-1/2)(y-1/2)(z-1/2)/eps)`
    Layer { a: f64, eps: f64 },
}

pub fn example_3d(variant: ThreeDimVariant) -> Problem {
    match variant {
        ThreeDimVariant::Osc { k } => {
            assert!(k >= 1);
            let kf = f64::from(k);
            let exact = JetField::new(3, move |x| {
                Jet2::coord(x[0], 0, 3).scale(kf * PI).sin()
                    * Jet2::coord(x[1], 1, 3).scale(kf * PI).sin()
                    * Jet2::coord(x[2], 2, 3).scale(kf * PI).sin()
            });
            let amp = 3.0 * kf * kf * PI * PI;
            let exact_f = exact.clone();
            let forcing = ScalarField::new(3, move |x| amp * exact_f.value(x));
            Problem {
                name: format!("3d-osc:k={k}"),
                domain: BoxDomain::unit_cube(),
                kind: PdeKind::Poisson,
                exact: Some(exact),
                forcing,
                dirichlet: zero_dirichlet(3),
                potential: None,
                reference_eigenvalue: None,
            }
        }
        ThreeDimVariant::Multi { n } => {
            assert!(n >= 1);
            let freqs: Vec<f64> = (1..=n).map(|l| f64::from(2u32.pow(l)) * PI).collect();
            let scale = 1.0 / f64::from(n);
            let freqs_u = freqs.clone();
            let exact = JetField::new(3, move |x| {
                let mut acc = Jet2::constant(0.0, 3);
                for w in &freqs_u {
                    acc = acc
                        + Jet2::coord(x[0], 0, 3).scale(*w).sin()
                            * Jet2::coord(x[1], 1, 3).scale(*w).sin()
                            * Jet2::coord(x[2], 2, 3).scale(*w).sin();
                }
                acc.scale(scale)
            });
            let forcing = ScalarField::new(3, move |x| {
                let mut acc = 0.0;
                for w in &freqs {
                    acc +=
                        3.0 * w * w * (w * x[0]).sin() * (w * x[1]).sin() * (w * x[2]).sin();
                }
                scale * acc
            });
            Problem {
                name: format!("3d-multi:N={n}"),
                domain: BoxDomain::unit_cube(),
                kind: PdeKind::Poisson,
                exact: Some(exact),
                forcing,
                dirichlet: zero_dirichlet(3),
                potential: None,
                reference_eigenvalue: None,
            }
        }
        ThreeDimVariant::Layer { a, eps } => {
            assert!(a > 0.0 && eps > 0.0);
            let exact = JetField::new(3, move |x| {
                let xv = Jet2::coord(x[0], 0, 3);
                let yv = Jet2::coord(x[1], 1, 3);
                let zv = Jet2::coord(x[2], 2, 3);
                let one = Jet2::constant(1.0, 3);
                let poly = xv * (one - xv) * yv * (one - yv) * zv * (one - zv);
                let arg =
                    (xv.shift(-0.5) * yv.shift(-0.5) * zv.shift(-0.5)).scale(1.0 / eps);
                poly.scale(a) * arg.sin()
            });
            let forcing = forcing_from_exact(&exact, PdeKind::Poisson);
            Problem {
                name: format!("3d-layer:A={a},eps={eps}"),
                domain: BoxDomain::unit_cube(),
                kind: PdeKind::Poisson,
                exact: Some(exact),
                forcing,
                dirichlet: zero_dirichlet(3),
                potential: None,
                reference_eigenvalue: None,
            }
        }
    }
}

/// p-Laplacian problem with exact solution `sin(2 pi x) sin(2 pi y)` and
/// synthesized forcing.
pub fn p_laplace_example(p: f64) -> Result<Problem> {
    if !(p > 2.0) {
        return Err(Error::config("p-Laplace exponent must exceed 2"));
    }
    let exact = p_laplace_exact();
    let forcing = forcing_from_exact(&exact, PdeKind::PLaplace { p });
    Ok(Problem {
        name: format!("plap:p={p}"),
        domain: BoxDomain::unit_square(),
        kind: PdeKind::PLaplace { p },
        exact: Some(exact),
        forcing,
        dirichlet: zero_dirichlet(2),
        potential: None,
        reference_eigenvalue: None,
    })
}

fn p_laplace_exact() -> JetField {
    JetField::new(2, |x| {
        Jet2::coord(x[0], 0, 2).scale(2.0 * PI).sin() * Jet2::coord(x[1], 1, 2).scale(2.0 * PI).sin()
    })
}

/// Infinite potential well on the unit square; the smallest nonzero
/// eigenvalue is `2 pi^2`.
pub fn eigen_well() -> Problem {
    Problem {
        name: "eig-well".to_string(),
        domain: BoxDomain::unit_square(),
        kind: PdeKind::Eigen,
        exact: None,
        forcing: zero_dirichlet(2),
        dirichlet: zero_dirichlet(2),
        potential: None,
        reference_eigenvalue: Some(2.0 * PI * PI),
    }
}

/// Harmonic oscillator `v(x) = |x|^2` on `(-3, 3)^2`; the smallest nonzero
/// eigenvalue is 2.
pub fn eigen_oscillator() -> Problem {
    Problem {
        name: "eig-osc".to_string(),
        domain: BoxDomain::square(-3.0, 3.0).unwrap(),
        kind: PdeKind::Eigen,
        exact: None,
        forcing: ScalarField::constant(2, 0.0),
        dirichlet: zero_dirichlet(2),
        potential: Some(ScalarField::new(2, |x| x[0] * x[0] + x[1] * x[1])),
        reference_eigenvalue: Some(2.0),
    }
}

/// The canonical problem instances used across the benchmark tables.
pub fn registry() -> Vec<Problem> {
    vec![
        example1(1),
        example1(4),
        example2(4),
        example2(6),
        example3(100.0, 0.01),
        example_3d(ThreeDimVariant::Osc { k: 4 }),
        example_3d(ThreeDimVariant::Multi { n: 2 }),
        example_3d(ThreeDimVariant::Layer { a: 100.0, eps: 0.01 }),
        p_laplace_example(3.0).unwrap(),
        p_laplace_example(5.0).unwrap(),
        eigen_well(),
        eigen_oscillator(),
    ]
}

/// Parses a CLI problem id such as `ex1:k=4`, `ex3:A=100,eps=0.01`,
/// `plap:p=5`, or `eig-well`.
pub fn parse(id: &str) -> Result<Problem> {
    let (name, args) = match id.split_once(':') {
        Some((n, a)) => (n.trim(), a.trim()),
        None => (id.trim(), ""),
    };
    let mut params = std::collections::HashMap::new();
    if !args.is_empty() {
        for part in args.split(',') {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::config(format!("malformed problem parameter `{part}`")))?;
            params.insert(key.trim().to_ascii_lowercase(), value.trim().to_string());
        }
    }
    let get_f64 = |params: &std::collections::HashMap<String, String>, key: &str, default: f64| {
        params
            .get(key)
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| Error::config(format!("invalid value for `{key}`: {v}")))
            })
            .transpose()
            .map(|v| v.unwrap_or(default))
    };
    let get_u32 = |params: &std::collections::HashMap<String, String>, key: &str, default: u32| {
        params
            .get(key)
            .map(|v| {
                v.parse::<u32>()
                    .map_err(|_| Error::config(format!("invalid value for `{key}`: {v}")))
            })
            .transpose()
            .map(|v| v.unwrap_or(default))
    };
    match name {
        "ex1" => Ok(example1(get_u32(&params, "k", 1)?)),
        "ex2" => Ok(example2(get_u32(&params, "n", 6)?)),
        "ex3" => Ok(example3(
            get_f64(&params, "a", 100.0)?,
            get_f64(&params, "eps", 0.01)?,
        )),
        "3d-osc" => Ok(example_3d(ThreeDimVariant::Osc {
            k: get_u32(&params, "k", 4)?,
        })),
        "3d-multi" => Ok(example_3d(ThreeDimVariant::Multi {
            n: get_u32(&params, "n", 2)?,
        })),
        "3d-layer" => Ok(example_3d(ThreeDimVariant::Layer {
            a: get_f64(&params, "a", 100.0)?,
            eps: get_f64(&params, "eps", 0.01)?,
        })),
        "plap" => p_laplace_example(get_f64(&params, "p", 3.0)?),
        "eig-well" => Ok(eigen_well()),
        "eig-osc" => Ok(eigen_oscillator()),
        other => Err(Error::config(format!("unknown problem id `{other}`"))),
    }
}
