//! Shared finite-difference oracles for the integration suites. These stay
//! independent of the jet propagation and reverse accumulation they check:
//! they only ever call the plain scalar `forward` / loss evaluation.

use pdelab::jet::{tri_index, tri_len, Jet2};
use pdelab::net::{Network, ParamVector};

/// Relative error with an absolute floor on the denominator.
pub fn rel_err(actual: f64, reference: f64, floor: f64) -> f64 {
    (actual - reference).abs() / reference.abs().max(floor)
}

/// Second-order central-difference jet of the network value at `x`.
///
/// At the step 1e-4 used throughout, the stencil's own noise floor on
/// second derivatives is a few times 1e-8 in absolute terms; the frozen
/// seeds of the callers keep the compared entries well above it.
pub fn finite_diff_jet(net: &Network, params: &ParamVector, x: &[f64], h: f64) -> Jet2 {
    let d = x.len();
    let f = |x: &[f64]| net.forward(params, x).unwrap();
    let f0 = f(x);
    let mut grad = vec![0.0; d];
    let mut hess = vec![0.0; tri_len(d)];
    for i in 0..d {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[i] += h;
        xm[i] -= h;
        grad[i] = (f(&xp) - f(&xm)) / (2.0 * h);
        hess[tri_index(i, i, d)] = (f(&xp) - 2.0 * f0 + f(&xm)) / (h * h);
    }
    for i in 0..d {
        for j in (i + 1)..d {
            let mut xpp = x.to_vec();
            let mut xpm = x.to_vec();
            let mut xmp = x.to_vec();
            let mut xmm = x.to_vec();
            xpp[i] += h;
            xpp[j] += h;
            xpm[i] += h;
            xpm[j] -= h;
            xmp[i] -= h;
            xmp[j] += h;
            xmm[i] -= h;
            xmm[j] -= h;
            hess[tri_index(i, j, d)] = (f(&xpp) - f(&xpm) - f(&xmp) + f(&xmm)) / (4.0 * h * h);
        }
    }
    Jet2::from_parts(d, f0, &grad, &hess)
}

/// Largest relative deviation between an analytic jet and its
/// finite-difference counterpart over all first and second derivatives.
pub fn max_jet_deviation(analytic: &Jet2, fd: &Jet2, floor: f64) -> f64 {
    let d = analytic.dim();
    let mut worst = 0.0f64;
    for i in 0..d {
        worst = worst.max(rel_err(analytic.gradient()[i], fd.gradient()[i], floor));
    }
    for i in 0..d {
        for j in i..d {
            worst = worst.max(rel_err(analytic.hessian(i, j), fd.hessian(i, j), floor));
        }
    }
    worst
}
