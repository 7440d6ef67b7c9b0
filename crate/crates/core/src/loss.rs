//! Loss formulations and error indicators.
//!
//! Every loss is a weighted reduction of network jets over an interior and a
//! boundary sample set:
//!
//! - PINN: squared strong-form residual plus squared boundary mismatch,
//! - deep Ritz: variational energy `(1/p)|grad U|^p - f U` plus the same
//!   boundary mismatch,
//! - augmented variants add the linear multiplier term
//!   `sum lambda(x) (U - g) w(x)`,
//! - eigenvalue problems use the Rayleigh quotient with a volume
//!   normalization constraint.
//!
//! The same per-point passes that accumulate the terms also produce the
//! cotangent seeds for the network's reverse pass, so one call yields both
//! the loss breakdown and its exact parameter gradient. Reductions use
//! Neumaier-compensated summation so results are reproducible independent of
//! evaluation schedule.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::jet::tri_len;
use crate::net::{jet_from_row, DerivOrder, Network, ParamVector, Tape};
use crate::problems::{PdeKind, Problem, GRAD_FLOOR};
use crate::sampling::{Region, SampleSet};

/// Floor applied to the Rayleigh-quotient denominator before dividing;
/// falling below it means the trained function has collapsed to zero.
pub const RAYLEIGH_DENOM_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Formulation {
    Pinn,
    Ritz,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundaryMode {
    Soft,
    Hard,
    Augmented,
}

/// Loss selector and weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossSpec {
    pub formulation: Formulation,
    pub boundary: BoundaryMode,
    /// Interior term weight `w_I`.
    pub w_interior: f64,
    /// Boundary term weight `w_B`.
    pub w_boundary: f64,
    /// Eigen normalization weight `w_C`.
    pub w_constraint: f64,
    /// p-Laplace exponent; 2 for Poisson problems.
    pub p: f64,
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec {
            formulation: Formulation::Pinn,
            boundary: BoundaryMode::Soft,
            w_interior: 1.0,
            w_boundary: 1.0,
            w_constraint: 1.0,
            p: 2.0,
        }
    }
}

impl LossSpec {
    pub fn validate(&self, problem: &Problem, net: &Network) -> Result<()> {
        if self.w_interior < 0.0 || self.w_boundary < 0.0 || self.w_constraint < 0.0 {
            return Err(Error::config("loss weights must be nonnegative"));
        }
        if self.boundary == BoundaryMode::Hard && net.config().ansatz.is_none() {
            return Err(Error::config(
                "hard boundary constraints require a network ansatz",
            ));
        }
        match problem.kind {
            PdeKind::PLaplace { p } => {
                if (self.p - p).abs() > 1e-12 {
                    return Err(Error::config(format!(
                        "loss exponent p={} does not match the problem's p={p}",
                        self.p
                    )));
                }
            }
            PdeKind::Poisson => {
                if (self.p - 2.0).abs() > 1e-12 {
                    return Err(Error::config("Poisson problems require p = 2"));
                }
            }
            PdeKind::Eigen => {}
        }
        Ok(())
    }

    /// Jet order needed on the interior set.
    pub fn interior_order(&self, kind: PdeKind) -> DerivOrder {
        match (kind, self.formulation) {
            (PdeKind::Eigen, _) => DerivOrder::Gradient,
            (_, Formulation::Pinn) => DerivOrder::Hessian,
            (_, Formulation::Ritz) => DerivOrder::Gradient,
        }
    }
}

/// Lagrange multipliers for the augmented formulations: one per boundary
/// collocation point, plus the volume-constraint multiplier for eigenvalue
/// runs. All start at 1.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiplierState {
    pub lambda_boundary: Vec<f64>,
    pub lambda_constraint: f64,
}

impl MultiplierState {
    pub fn new(n_boundary: usize) -> Self {
        MultiplierState {
            lambda_boundary: vec![1.0; n_boundary],
            lambda_constraint: 1.0,
        }
    }

    fn check(&self, boundary: &SampleSet) -> Result<()> {
        if self.lambda_boundary.len() != boundary.len() {
            return Err(Error::config(format!(
                "multiplier state has {} entries for {} boundary points",
                self.lambda_boundary.len(),
                boundary.len()
            )));
        }
        Ok(())
    }
}

/// Scalar loss value with its per-term decomposition.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    /// Unweighted interior integral; the Rayleigh quotient for eigen runs.
    pub interior_term: f64,
    /// Unweighted boundary mismatch integral.
    pub boundary_term: f64,
    /// Multiplier term `sum lambda (U - g) w`.
    pub augmented_term: f64,
    /// Eigen volume constraint `w_C (int U^2 - 1)^2 + lambda_C (int U^2 - 1)`.
    pub constraint_term: f64,
    /// Rayleigh quotient (the eigenvalue estimate), eigen runs only.
    pub rayleigh: Option<f64>,
    /// `int U^2 - 1` from the same quadrature, eigen runs only.
    pub volume_deficit: f64,
}

/// Values of the problem's data fields on fixed sample sets, computed once
/// per run. The training sets never change, so neither do these.
#[derive(Clone, Debug)]
pub struct FieldCache {
    pub interior_forcing: Vec<f64>,
    pub interior_potential: Vec<f64>,
    pub boundary_data: Vec<f64>,
}

impl FieldCache {
    pub fn new(problem: &Problem, interior: &SampleSet, boundary: &SampleSet) -> Self {
        let interior_forcing = (0..interior.len())
            .map(|i| problem.forcing.value(interior.point(i)))
            .collect();
        let interior_potential = (0..interior.len())
            .map(|i| problem.potential_value(interior.point(i)))
            .collect();
        let boundary_data = (0..boundary.len())
            .map(|i| problem.dirichlet.value(boundary.point(i)))
            .collect();
        FieldCache {
            interior_forcing,
            interior_potential,
            boundary_data,
        }
    }
}

/// Reusable tapes and seed buffers for repeated loss evaluation.
#[derive(Debug, Default)]
pub struct LossScratch {
    tape_interior: Tape,
    tape_boundary: Tape,
    seeds_interior: Array2<f64>,
    seeds_boundary: Array2<f64>,
}

impl LossScratch {
    pub fn new() -> Self {
        LossScratch::default()
    }
}

/// Neumaier-compensated accumulator: reductions are reproducible and
/// accurate independent of summation schedule.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        CompensatedSum::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

fn check_sets(
    problem: &Problem,
    interior: &SampleSet,
    boundary: &SampleSet,
) -> Result<()> {
    let d = problem.dim();
    if interior.dim() != d || boundary.dim() != d {
        return Err(Error::config(
            "sample set dimension does not match the problem domain",
        ));
    }
    if interior.region != Region::Interior || boundary.region != Region::Boundary {
        return Err(Error::config("sample set regions are swapped"));
    }
    Ok(())
}

struct InteriorOut {
    term: f64,
    rayleigh: Option<f64>,
    volume_deficit: f64,
}

/// Accumulates the interior term and, when `seed_scale` is set, writes
/// `d(scaled term)/d(jet channels)` into `seeds`.
fn interior_pass(
    problem: &Problem,
    spec: &LossSpec,
    set: &SampleSet,
    forcing: &[f64],
    potential: &[f64],
    tape: &Tape,
    multipliers: Option<&MultiplierState>,
    mut seeds: Option<(&mut Array2<f64>, f64)>,
) -> Result<InteriorOut> {
    let d = problem.dim();
    let jets = tape.output();
    let n = set.len();
    if let Some((seeds, _)) = seeds.as_mut() {
        seeds.fill(0.0);
    }
    match problem.kind {
        PdeKind::Poisson | PdeKind::PLaplace { .. } => {
            let p = spec.p;
            let alpha = (p - 2.0) / 2.0;
            let beta = (p - 4.0) / 2.0;
            let mut term = CompensatedSum::new();
            match spec.formulation {
                Formulation::Pinn => {
                    let t = tri_len(d);
                    for i in 0..n {
                        let w = set.weights[i];
                        let jet = jet_from_row(
                            jets.row(i).to_slice().expect("row-major"),
                            d,
                            tape.channels(),
                        );
                        let lap = jet.laplacian();
                        let (r, s, q, floored) = if p == 2.0 {
                            (lap + forcing[i], 0.0, 0.0, false)
                        } else {
                            let raw = jet.grad_norm_sq();
                            let floored = raw < GRAD_FLOOR;
                            let s = raw.max(GRAD_FLOOR);
                            let q = jet.grad_hess_grad();
                            (
                                s.powf(alpha) * lap + (p - 2.0) * s.powf(beta) * q + forcing[i],
                                s,
                                q,
                                floored,
                            )
                        };
                        term.add(w * r * r);
                        if let Some((seeds, scale)) = seeds.as_mut() {
                            let factor = 2.0 * r * w * *scale;
                            if p == 2.0 {
                                for k in 0..d {
                                    // diagonal Hessian channels
                                    seeds[[i, 1 + d + crate::jet::tri_index(k, k, d)]] += factor;
                                }
                            } else {
                                let sa = s.powf(alpha);
                                let sb = s.powf(beta);
                                // Hessian channels
                                for a in 0..d {
                                    for b in a..d {
                                        let k = crate::jet::tri_index(a, b, d);
                                        let mut dr = 0.0;
                                        if a == b {
                                            dr += sa;
                                        }
                                        let gg = jet.gradient()[a] * jet.gradient()[b];
                                        dr += (p - 2.0) * sb * if a == b { gg } else { 2.0 * gg };
                                        seeds[[i, 1 + d + k]] += factor * dr;
                                    }
                                }
                                // gradient channels
                                for k in 0..d {
                                    let gk = jet.gradient()[k];
                                    let hg: f64 = (0..d)
                                        .map(|j| jet.hessian(k, j) * jet.gradient()[j])
                                        .sum();
                                    let mut dr = (p - 2.0) * sb * 2.0 * hg;
                                    if !floored {
                                        dr += alpha * s.powf(alpha - 1.0) * 2.0 * gk * lap;
                                        dr += (p - 2.0) * beta * s.powf(beta - 1.0) * 2.0 * gk * q;
                                    }
                                    seeds[[i, 1 + k]] += factor * dr;
                                }
                            }
                        }
                        let _ = t;
                    }
                }
                Formulation::Ritz => {
                    for i in 0..n {
                        let w = set.weights[i];
                        let row = jets.row(i);
                        let u = row[0];
                        let mut s_raw = 0.0;
                        for k in 0..d {
                            s_raw += row[1 + k] * row[1 + k];
                        }
                        let energy = if p == 2.0 {
                            0.5 * s_raw - forcing[i] * u
                        } else {
                            s_raw.powf(p / 2.0) / p - forcing[i] * u
                        };
                        term.add(w * energy);
                        if let Some((seeds, scale)) = seeds.as_mut() {
                            let wf = w * *scale;
                            seeds[[i, 0]] += -forcing[i] * wf;
                            let gfac = if p == 2.0 { 1.0 } else { s_raw.powf(alpha) };
                            for k in 0..d {
                                seeds[[i, 1 + k]] += gfac * row[1 + k] * wf;
                            }
                        }
                    }
                }
            }
            Ok(InteriorOut {
                term: term.value(),
                rayleigh: None,
                volume_deficit: 0.0,
            })
        }
        PdeKind::Eigen => {
            // Rayleigh quotient with volume normalization; global integrals
            // first, then per-point seeds via the quotient rule.
            let mut num = CompensatedSum::new();
            let mut den = CompensatedSum::new();
            for i in 0..n {
                let w = set.weights[i];
                let row = jets.row(i);
                let u = row[0];
                let mut grad_sq = 0.0;
                for k in 0..d {
                    grad_sq += row[1 + k] * row[1 + k];
                }
                num.add(w * (grad_sq + potential[i] * u * u));
                den.add(w * u * u);
            }
            let num = num.value();
            let den = den.value();
            if den < RAYLEIGH_DENOM_FLOOR {
                return Err(Error::non_finite(
                    "rayleigh quotient denominator (trivial solution)",
                ));
            }
            let quotient = num / den;
            let deficit = den - 1.0;
            let lambda_c = multipliers.map_or(0.0, |m| m.lambda_constraint);
            if let Some((seeds, _)) = seeds.as_mut() {
                // d(constraint)/d(den) with both the penalty and multiplier
                let dcon = 2.0 * spec.w_constraint * deficit + lambda_c;
                for i in 0..n {
                    let w = set.weights[i];
                    let row = jets.row(i);
                    let u = row[0];
                    // value channel: potential part of the numerator, the
                    // denominator of the quotient, and the constraint
                    seeds[[i, 0]] = w
                        * (2.0 * potential[i] * u / den - quotient * 2.0 * u / den
                            + dcon * 2.0 * u);
                    for k in 0..d {
                        seeds[[i, 1 + k]] = w * 2.0 * row[1 + k] / den;
                    }
                }
            }
            Ok(InteriorOut {
                term: quotient,
                rayleigh: Some(quotient),
                volume_deficit: deficit,
            })
        }
    }
}

struct BoundaryOut {
    term: f64,
    augmented: f64,
    residuals: Vec<f64>,
}

/// Accumulates the boundary mismatch and multiplier terms; when seeds are
/// requested, `w_scale` multiplies the quadratic part and `with_multipliers`
/// adds the linear multiplier part.
fn boundary_pass(
    set: &SampleSet,
    data: &[f64],
    tape: &Tape,
    multipliers: Option<&MultiplierState>,
    mut seeds: Option<(&mut Array2<f64>, f64, bool)>,
) -> BoundaryOut {
    let jets = tape.output();
    let n = set.len();
    let mut term = CompensatedSum::new();
    let mut aug = CompensatedSum::new();
    let mut residuals = Vec::with_capacity(n);
    if let Some((seeds, _, _)) = seeds.as_mut() {
        seeds.fill(0.0);
    }
    for i in 0..n {
        let w = set.weights[i];
        let r = jets[[i, 0]] - data[i];
        residuals.push(r);
        term.add(w * r * r);
        let lambda = multipliers.map(|m| m.lambda_boundary[i]);
        if let Some(l) = lambda {
            aug.add(w * l * r);
        }
        if let Some((seeds, w_scale, with_mult)) = seeds.as_mut() {
            let mut seed = 2.0 * r * w * *w_scale;
            if *with_mult {
                if let Some(l) = lambda {
                    seed += l * w;
                }
            }
            seeds[[i, 0]] = seed;
        }
    }
    BoundaryOut {
        term: term.value(),
        augmented: aug.value(),
        residuals,
    }
}

/// Full loss evaluation; returns the breakdown and the per-point boundary
/// residuals `U - g` (empty under hard constraints).
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    net: &Network,
    params: &ParamVector,
    interior: &SampleSet,
    boundary: &SampleSet,
    problem: &Problem,
    spec: &LossSpec,
    multipliers: Option<&MultiplierState>,
    fields: &FieldCache,
    scratch: &mut LossScratch,
) -> Result<(LossBreakdown, Vec<f64>)> {
    evaluate_inner(
        net,
        params,
        interior,
        boundary,
        problem,
        spec,
        multipliers,
        fields,
        scratch,
        None,
    )
}

/// Loss and its exact parameter gradient in one fused pass.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_with_grad(
    net: &Network,
    params: &ParamVector,
    interior: &SampleSet,
    boundary: &SampleSet,
    problem: &Problem,
    spec: &LossSpec,
    multipliers: Option<&MultiplierState>,
    fields: &FieldCache,
    scratch: &mut LossScratch,
    grad: &mut ParamVector,
) -> Result<(LossBreakdown, Vec<f64>)> {
    grad.fill(0.0);
    evaluate_inner(
        net,
        params,
        interior,
        boundary,
        problem,
        spec,
        multipliers,
        fields,
        scratch,
        Some(grad),
    )
}

#[allow(clippy::too_many_arguments)]
fn evaluate_inner(
    net: &Network,
    params: &ParamVector,
    interior: &SampleSet,
    boundary: &SampleSet,
    problem: &Problem,
    spec: &LossSpec,
    multipliers: Option<&MultiplierState>,
    fields: &FieldCache,
    scratch: &mut LossScratch,
    mut grad: Option<&mut ParamVector>,
) -> Result<(LossBreakdown, Vec<f64>)> {
    spec.validate(problem, net)?;
    check_sets(problem, interior, boundary)?;
    if spec.boundary == BoundaryMode::Augmented {
        match multipliers {
            Some(m) => m.check(boundary)?,
            None => {
                return Err(Error::config(
                    "augmented boundary handling requires a multiplier state",
                ))
            }
        }
    }
    let eigen = matches!(problem.kind, PdeKind::Eigen);
    let want_grad = grad.is_some();

    let order = spec.interior_order(problem.kind);
    net.forward_tape(params, interior.points.view(), order, &mut scratch.tape_interior)?;
    let c = order.channels(problem.dim());
    if want_grad && scratch.seeds_interior.dim() != (interior.len(), c) {
        scratch.seeds_interior = Array2::zeros((interior.len(), c));
    }
    let interior_scale = if eigen { 1.0 } else { spec.w_interior };
    let mult_for_interior = if eigen { multipliers } else { None };
    let interior_out = interior_pass(
        problem,
        spec,
        interior,
        &fields.interior_forcing,
        &fields.interior_potential,
        &scratch.tape_interior,
        mult_for_interior,
        if want_grad {
            Some((&mut scratch.seeds_interior, interior_scale))
        } else {
            None
        },
    )?;
    if let Some(grad) = grad.as_deref_mut() {
        net.backward(
            params,
            &mut scratch.tape_interior,
            scratch.seeds_interior.view(),
            &mut grad.values,
        )?;
    }

    let mut breakdown = LossBreakdown {
        interior_term: interior_out.term,
        rayleigh: interior_out.rayleigh,
        volume_deficit: interior_out.volume_deficit,
        ..LossBreakdown::default()
    };
    let mut residuals = Vec::new();

    if spec.boundary != BoundaryMode::Hard {
        net.forward_tape(
            params,
            boundary.points.view(),
            DerivOrder::Value,
            &mut scratch.tape_boundary,
        )?;
        if want_grad && scratch.seeds_boundary.dim() != (boundary.len(), 1) {
            scratch.seeds_boundary = Array2::zeros((boundary.len(), 1));
        }
        let with_mult = spec.boundary == BoundaryMode::Augmented;
        let boundary_out = boundary_pass(
            boundary,
            &fields.boundary_data,
            &scratch.tape_boundary,
            if with_mult { multipliers } else { None },
            if want_grad {
                Some((&mut scratch.seeds_boundary, spec.w_boundary, with_mult))
            } else {
                None
            },
        );
        if let Some(grad) = grad.as_deref_mut() {
            net.backward(
                params,
                &mut scratch.tape_boundary,
                scratch.seeds_boundary.view(),
                &mut grad.values,
            )?;
        }
        breakdown.boundary_term = boundary_out.term;
        breakdown.augmented_term = boundary_out.augmented;
        residuals = boundary_out.residuals;
    }

    if eigen {
        let dev = breakdown.volume_deficit;
        let lambda_c = multipliers.map_or(0.0, |m| m.lambda_constraint);
        breakdown.constraint_term = spec.w_constraint * dev * dev + lambda_c * dev;
        breakdown.total = breakdown.interior_term
            + spec.w_boundary * breakdown.boundary_term
            + breakdown.augmented_term
            + breakdown.constraint_term;
    } else {
        breakdown.total = spec.w_interior * breakdown.interior_term
            + spec.w_boundary * breakdown.boundary_term
            + breakdown.augmented_term;
    }
    if !breakdown.total.is_finite() {
        return Err(Error::non_finite("loss total"));
    }
    Ok((breakdown, residuals))
}

/// PINN loss: weighted squared strong-form residual plus squared boundary
/// mismatch. No multiplier term.
pub fn pinn_loss(
    net: &Network,
    params: &ParamVector,
    interior: &SampleSet,
    boundary: &SampleSet,
    problem: &Problem,
    spec: &LossSpec,
) -> Result<LossBreakdown> {
    if matches!(problem.kind, PdeKind::Eigen) {
        return Err(Error::config("pinn loss is undefined for eigen problems"));
    }
    let spec = LossSpec {
        formulation: Formulation::Pinn,
        boundary: if spec.boundary == BoundaryMode::Augmented {
            BoundaryMode::Soft
        } else {
            spec.boundary
        },
        ..*spec
    };
    let fields = FieldCache::new(problem, interior, boundary);
    let mut scratch = LossScratch::new();
    let (breakdown, _) = evaluate(
        net, params, interior, boundary, problem, &spec, None, &fields, &mut scratch,
    )?;
    Ok(breakdown)
}

/// Deep Ritz loss: weighted variational energy plus squared boundary
/// mismatch. No multiplier term.
pub fn ritz_loss(
    net: &Network,
    params: &ParamVector,
    interior: &SampleSet,
    boundary: &SampleSet,
    problem: &Problem,
    spec: &LossSpec,
) -> Result<LossBreakdown> {
    if matches!(problem.kind, PdeKind::Eigen) {
        return Err(Error::config(
            "use rayleigh_loss for eigenvalue problems",
        ));
    }
    let spec = LossSpec {
        formulation: Formulation::Ritz,
        boundary: if spec.boundary == BoundaryMode::Augmented {
            BoundaryMode::Soft
        } else {
            spec.boundary
        },
        ..*spec
    };
    let fields = FieldCache::new(problem, interior, boundary);
    let mut scratch = LossScratch::new();
    let (breakdown, _) = evaluate(
        net, params, interior, boundary, problem, &spec, None, &fields, &mut scratch,
    )?;
    Ok(breakdown)
}

/// The multiplier term `sum lambda(x) (U(x) - g(x)) w(x)` on its own.
pub fn augmented_term(
    net: &Network,
    params: &ParamVector,
    boundary: &SampleSet,
    problem: &Problem,
    multipliers: &MultiplierState,
) -> Result<f64> {
    multipliers.check(boundary)?;
    let jets = net.forward_jets(params, boundary.points.view(), DerivOrder::Value)?;
    let mut acc = CompensatedSum::new();
    for i in 0..boundary.len() {
        let g = problem.dirichlet.value(boundary.point(i));
        acc.add(multipliers.lambda_boundary[i] * (jets[[i, 0]] - g) * boundary.weights[i]);
    }
    Ok(acc.value())
}

/// Rayleigh-quotient loss for eigenvalue problems; `breakdown.rayleigh`
/// carries the eigenvalue estimate.
pub fn rayleigh_loss(
    net: &Network,
    params: &ParamVector,
    interior: &SampleSet,
    boundary: &SampleSet,
    problem: &Problem,
    spec: &LossSpec,
    multipliers: &MultiplierState,
) -> Result<LossBreakdown> {
    if !matches!(problem.kind, PdeKind::Eigen) {
        return Err(Error::config("rayleigh loss requires an eigen problem"));
    }
    let spec = LossSpec {
        boundary: BoundaryMode::Augmented,
        ..*spec
    };
    let fields = FieldCache::new(problem, interior, boundary);
    let mut scratch = LossScratch::new();
    let (breakdown, _) = evaluate(
        net,
        params,
        interior,
        boundary,
        problem,
        &spec,
        Some(multipliers),
        &fields,
        &mut scratch,
    )?;
    Ok(breakdown)
}

/// Strong-form error indicator:
/// `int (lap U + f)^2 + oint (U - g)^2`, both by quadrature.
pub fn indicator_ep(
    net: &Network,
    params: &ParamVector,
    problem: &Problem,
    interior: &SampleSet,
    boundary: &SampleSet,
) -> Result<f64> {
    if matches!(problem.kind, PdeKind::Eigen) {
        return Err(Error::config("indicators are undefined for eigen problems"));
    }
    check_sets(problem, interior, boundary)?;
    let d = problem.dim();
    let jets = net.forward_jets(params, interior.points.view(), DerivOrder::Hessian)?;
    let c = DerivOrder::Hessian.channels(d);
    let mut acc = CompensatedSum::new();
    for i in 0..interior.len() {
        let jet = jet_from_row(jets.row(i).to_slice().expect("row-major"), d, c);
        let r = problem
            .strong_residual(&jet, interior.point(i))
            .expect("non-eigen");
        acc.add(interior.weights[i] * r * r);
    }
    let bjets = net.forward_jets(params, boundary.points.view(), DerivOrder::Value)?;
    for i in 0..boundary.len() {
        let r = bjets[[i, 0]] - problem.dirichlet.value(boundary.point(i));
        acc.add(boundary.weights[i] * r * r);
    }
    Ok(acc.value())
}

/// Weak-form error indicator:
/// `| int (|grad U|^2 - f U) - oint (dU/dn) g | + oint (U - g)^2`,
/// computed from first derivatives only.
pub fn indicator_er(
    net: &Network,
    params: &ParamVector,
    problem: &Problem,
    interior: &SampleSet,
    boundary: &SampleSet,
) -> Result<f64> {
    if matches!(problem.kind, PdeKind::Eigen) {
        return Err(Error::config("indicators are undefined for eigen problems"));
    }
    check_sets(problem, interior, boundary)?;
    let d = problem.dim();
    let jets = net.forward_jets(params, interior.points.view(), DerivOrder::Gradient)?;
    let mut weak = CompensatedSum::new();
    for i in 0..interior.len() {
        let row = jets.row(i);
        let mut grad_sq = 0.0;
        for k in 0..d {
            grad_sq += row[1 + k] * row[1 + k];
        }
        let f = problem.forcing.value(interior.point(i));
        weak.add(interior.weights[i] * (grad_sq - f * row[0]));
    }
    let bjets = net.forward_jets(params, boundary.points.view(), DerivOrder::Gradient)?;
    let mut flux = CompensatedSum::new();
    let mut mismatch = CompensatedSum::new();
    for i in 0..boundary.len() {
        let x = boundary.point(i);
        let face = problem
            .domain
            .face_of(x)
            .ok_or_else(|| Error::config("boundary point not on a face"))?;
        let row = bjets.row(i);
        let du_dn = face.normal_sign() * row[1 + face.axis];
        let g = problem.dirichlet.value(x);
        flux.add(boundary.weights[i] * du_dn * g);
        let r = row[0] - g;
        mismatch.add(boundary.weights[i] * r * r);
    }
    Ok((weak.value() - flux.value()).abs() + mismatch.value())
}

/// Gradients of the unweighted interior and boundary terms, for the
/// gradient-statistics balancing schemes.
#[allow(clippy::too_many_arguments)]
pub fn term_grads(
    net: &Network,
    params: &ParamVector,
    interior: &SampleSet,
    boundary: &SampleSet,
    problem: &Problem,
    spec: &LossSpec,
    fields: &FieldCache,
    scratch: &mut LossScratch,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if matches!(problem.kind, PdeKind::Eigen) {
        return Err(Error::config(
            "per-term gradients are not defined for eigen problems",
        ));
    }
    spec.validate(problem, net)?;
    check_sets(problem, interior, boundary)?;
    let order = spec.interior_order(problem.kind);
    net.forward_tape(params, interior.points.view(), order, &mut scratch.tape_interior)?;
    let c = order.channels(problem.dim());
    if scratch.seeds_interior.dim() != (interior.len(), c) {
        scratch.seeds_interior = Array2::zeros((interior.len(), c));
    }
    interior_pass(
        problem,
        spec,
        interior,
        &fields.interior_forcing,
        &fields.interior_potential,
        &scratch.tape_interior,
        None,
        Some((&mut scratch.seeds_interior, 1.0)),
    )?;
    let mut grad_interior = vec![0.0; params.len()];
    net.backward(
        params,
        &mut scratch.tape_interior,
        scratch.seeds_interior.view(),
        &mut grad_interior,
    )?;

    net.forward_tape(
        params,
        boundary.points.view(),
        DerivOrder::Value,
        &mut scratch.tape_boundary,
    )?;
    if scratch.seeds_boundary.dim() != (boundary.len(), 1) {
        scratch.seeds_boundary = Array2::zeros((boundary.len(), 1));
    }
    boundary_pass(
        boundary,
        &fields.boundary_data,
        &scratch.tape_boundary,
        None,
        Some((&mut scratch.seeds_boundary, 1.0, false)),
    );
    let mut grad_boundary = vec![0.0; params.len()];
    net.backward(
        params,
        &mut scratch.tape_boundary,
        scratch.seeds_boundary.view(),
        &mut grad_boundary,
    )?;
    Ok((grad_interior, grad_boundary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jet::{Jet2, JetField, ScalarField};
    use crate::net::{Activation, NetworkConfig};
    use crate::problems;
    use crate::sampling::{gauss_boundary, gauss_interior, BoxDomain};
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use std::f64::consts::PI;

    /// Independent 1D tensor quadrature of a closed-form integrand over the
    /// unit square, at an order far beyond anything the losses use.
    fn oracle_integrate(f: impl Fn(f64, f64) -> f64) -> f64 {
        let (nodes, weights) = crate::sampling::gauss_legendre(256).unwrap();
        let map = |t: f64| (t + 1.0) / 2.0;
        let mut acc = 0.0;
        for (xi, wi) in nodes.iter().zip(&weights) {
            for (yj, wj) in nodes.iter().zip(&weights) {
                acc += wi * wj * 0.25 * f(map(*xi), map(*yj));
            }
        }
        acc
    }

    /// Network that evaluates to an arbitrary jet field regardless of its
    /// parameters: lift = the field, mask = 0.
    fn realized(field: &JetField) -> (Network, ParamVector) {
        let config = NetworkConfig::new(field.dim(), 1, 1, Activation::Sine)
            .with_ansatz(field.clone(), JetField::constant(field.dim(), 0.0));
        let net = Network::new(config).unwrap();
        let params = ParamVector::zeros(net.layout().clone());
        (net, params)
    }

    /// Network that evaluates to the constant `c` everywhere.
    fn constant_net(dim: usize, c: f64) -> (Network, ParamVector) {
        let config = NetworkConfig::new(dim, 1, 1, Activation::Sine);
        let net = Network::new(config).unwrap();
        let mut params = ParamVector::zeros(net.layout().clone());
        let out = *params.layout.blocks.last().unwrap();
        params.values[out.bias] = c;
        (net, params)
    }

    fn sets_2d(n_g: usize) -> (SampleSet, SampleSet) {
        let domain = BoxDomain::unit_square();
        (
            gauss_interior(&domain, n_g).unwrap(),
            gauss_boundary(&domain, n_g).unwrap(),
        )
    }

    #[test]
    fn pinn_interior_vanishes_for_exact_solution() {
        let problem = problems::example1(1);
        let (net, params) = realized(problem.exact.as_ref().unwrap());
        let (interior, boundary) = sets_2d(64);
        let spec = LossSpec::default();
        let breakdown = pinn_loss(&net, &params, &interior, &boundary, &problem, &spec).unwrap();
        assert!(breakdown.interior_term <= 1e-10, "{}", breakdown.interior_term);
        assert!(breakdown.boundary_term <= 1e-20);
    }

    #[test]
    fn pinn_interior_for_zero_network_matches_quadrature_oracle() {
        // U = 0 leaves the residual equal to f = 2 pi^2 sin sin, whose
        // squared integral is pi^4.
        let problem = problems::example1(1);
        let (net, params) = constant_net(2, 0.0);
        let (interior, boundary) = sets_2d(64);
        let spec = LossSpec::default();
        let breakdown = pinn_loss(&net, &params, &interior, &boundary, &problem, &spec).unwrap();
        let oracle = oracle_integrate(|x, y| {
            let f = 2.0 * PI * PI * (PI * x).sin() * (PI * y).sin();
            f * f
        });
        assert_relative_eq!(oracle, PI.powi(4), max_relative = 1e-12);
        assert_relative_eq!(breakdown.interior_term, oracle, max_relative = 1e-10);
        assert!(breakdown.boundary_term <= 1e-20);
        assert_relative_eq!(breakdown.total, breakdown.interior_term, max_relative = 1e-12);
    }

    #[test]
    fn ritz_energy_of_exact_solution_matches_quadrature_oracle() {
        let problem = problems::example1(1);
        let (net, params) = realized(problem.exact.as_ref().unwrap());
        let (interior, boundary) = sets_2d(64);
        let spec = LossSpec {
            formulation: Formulation::Ritz,
            ..LossSpec::default()
        };
        let breakdown = ritz_loss(&net, &params, &interior, &boundary, &problem, &spec).unwrap();
        let oracle = oracle_integrate(|x, y| {
            let (sx, cx) = (PI * x).sin_cos();
            let (sy, cy) = (PI * y).sin_cos();
            let grad_sq = PI * PI * (cx * sy * cx * sy + sx * cy * sx * cy);
            let f = 2.0 * PI * PI * sx * sy;
            0.5 * grad_sq - f * sx * sy
        });
        // energy of the minimizer is -pi^2/4
        assert_relative_eq!(oracle, -PI * PI / 4.0, max_relative = 1e-12);
        assert_relative_eq!(breakdown.interior_term, oracle, max_relative = 1e-8);
    }

    #[test]
    fn ritz_zero_network_and_nonzero_dirichlet() {
        let domain = BoxDomain::unit_square();
        let problem = Problem {
            name: "const-g".into(),
            domain: domain.clone(),
            kind: PdeKind::Poisson,
            exact: None,
            forcing: ScalarField::constant(2, 0.0),
            dirichlet: ScalarField::constant(2, 1.0),
            potential: None,
            reference_eigenvalue: None,
        };
        let (net, params) = constant_net(2, 0.0);
        let (interior, boundary) = sets_2d(16);
        let spec = LossSpec {
            formulation: Formulation::Ritz,
            ..LossSpec::default()
        };
        let breakdown = ritz_loss(&net, &params, &interior, &boundary, &problem, &spec).unwrap();
        assert_abs_diff_eq!(breakdown.interior_term, 0.0, epsilon = 1e-14);
        // boundary integral of (0 - 1)^2 over the unit-square perimeter
        assert_relative_eq!(breakdown.boundary_term, 4.0, max_relative = 1e-12);
    }

    #[test]
    fn ritz_energy_decreases_toward_the_minimizer() {
        let problem = problems::example1(1);
        let exact = problem.exact.clone().unwrap();
        let (interior, boundary) = sets_2d(32);
        let spec = LossSpec {
            formulation: Formulation::Ritz,
            ..LossSpec::default()
        };
        let mut last = f64::INFINITY;
        for step in 0..=5 {
            let t = step as f64 / 5.0;
            let scaled = {
                let exact = exact.clone();
                JetField::new(2, move |x| exact.jet(x).scale(t))
            };
            let (net, params) = realized(&scaled);
            let breakdown =
                ritz_loss(&net, &params, &interior, &boundary, &problem, &spec).unwrap();
            assert!(
                breakdown.interior_term < last,
                "energy not decreasing at t={t}"
            );
            last = breakdown.interior_term;
        }
    }

    #[test]
    fn augmented_term_cases() {
        let problem = problems::example1(1);
        let (_, boundary) = sets_2d(16);
        let n = boundary.len();

        // constant offset c with unit multipliers integrates to c * perimeter
        let c = 0.7;
        let (net, params) = constant_net(2, c);
        let mult = MultiplierState::new(n);
        let term = augmented_term(&net, &params, &boundary, &problem, &mult).unwrap();
        assert_relative_eq!(term, 4.0 * c, max_relative = 1e-12);

        // zero multipliers kill the term
        let mut zero = MultiplierState::new(n);
        zero.lambda_boundary.iter_mut().for_each(|l| *l = 0.0);
        let term = augmented_term(&net, &params, &boundary, &problem, &zero).unwrap();
        assert_abs_diff_eq!(term, 0.0);

        // an exactly satisfied boundary condition kills it too
        let (net, params) = realized(problem.exact.as_ref().unwrap());
        let term = augmented_term(&net, &params, &boundary, &problem, &mult).unwrap();
        assert_abs_diff_eq!(term, 0.0, epsilon = 1e-13);

        let short = MultiplierState::new(n - 1);
        assert!(augmented_term(&net, &params, &boundary, &problem, &short).is_err());
    }

    #[test]
    fn rayleigh_quotient_of_well_eigenfunction() {
        let problem = problems::eigen_well();
        let eigenfunction = JetField::new(2, |x| {
            (Jet2::coord(x[0], 0, 2).scale(PI).sin() * Jet2::coord(x[1], 1, 2).scale(PI).sin())
                .scale(2.0)
        });
        let (interior, boundary) = sets_2d(64);
        let spec = LossSpec {
            formulation: Formulation::Ritz,
            boundary: BoundaryMode::Augmented,
            w_boundary: 10.0,
            w_constraint: 10.0,
            ..LossSpec::default()
        };
        let mult = MultiplierState::new(boundary.len());
        let (net, params) = realized(&eigenfunction);
        let breakdown =
            rayleigh_loss(&net, &params, &interior, &boundary, &problem, &spec, &mult).unwrap();
        let quotient = breakdown.rayleigh.unwrap();
        assert_relative_eq!(quotient, 2.0 * PI * PI, max_relative = 1e-6);
        // the eigenfunction is normalized: int U^2 = 1
        assert!(breakdown.constraint_term.abs() <= 1e-10);

        // quotient is invariant under scaling
        for c in [0.1, 3.0, 10.0] {
            let scaled = {
                let f = eigenfunction.clone();
                JetField::new(2, move |x| f.jet(x).scale(c))
            };
            let (net, params) = realized(&scaled);
            let b = rayleigh_loss(&net, &params, &interior, &boundary, &problem, &spec, &mult)
                .unwrap();
            assert_relative_eq!(b.rayleigh.unwrap(), quotient, max_relative = 1e-10);
        }
    }

    #[test]
    fn rayleigh_rejects_collapsed_solutions() {
        let problem = problems::eigen_well();
        let (interior, boundary) = sets_2d(16);
        let spec = LossSpec {
            boundary: BoundaryMode::Augmented,
            ..LossSpec::default()
        };
        let mult = MultiplierState::new(boundary.len());
        let (net, params) = constant_net(2, 0.0);
        let err = rayleigh_loss(&net, &params, &interior, &boundary, &problem, &spec, &mult)
            .unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }

    #[test]
    fn indicator_ep_cases() {
        let problem = problems::example1(1);
        let (interior, boundary) = sets_2d(64);
        let (net, params) = realized(problem.exact.as_ref().unwrap());
        let e = indicator_ep(&net, &params, &problem, &interior, &boundary).unwrap();
        assert!(e <= 1e-8, "indicator {e}");

        let (net, params) = constant_net(2, 0.0);
        let e = indicator_ep(&net, &params, &problem, &interior, &boundary).unwrap();
        assert_relative_eq!(e, PI.powi(4), max_relative = 1e-10);
    }

    #[test]
    fn indicator_er_cases() {
        let problem = problems::example1(1);
        let (interior, boundary) = sets_2d(64);
        let (net, params) = realized(problem.exact.as_ref().unwrap());
        let e = indicator_er(&net, &params, &problem, &interior, &boundary).unwrap();
        assert!(e <= 1e-6, "indicator {e}");

        let (net, params) = constant_net(2, 0.0);
        let e = indicator_er(&net, &params, &problem, &interior, &boundary).unwrap();
        assert_abs_diff_eq!(e, 0.0, epsilon = 1e-14);

        // against nonzero boundary data, the zero network leaves the
        // boundary integral of g^2
        let with_g = Problem {
            dirichlet: ScalarField::constant(2, 1.0),
            ..problems::example1(1)
        };
        let e = indicator_er(&net, &params, &with_g, &interior, &boundary).unwrap();
        assert_relative_eq!(e, 4.0, max_relative = 1e-12);
    }

    #[test]
    fn quadrature_consistency_between_orders() {
        // spectral convergence: a smooth network changes the Gauss loss by
        // less than 1e-8 when doubling n_g
        let config = NetworkConfig::new(2, 2, 6, Activation::Sine);
        let net = Network::new(config).unwrap();
        let params = net.init_glorot(3);
        for k in [1, 4] {
            let problem = problems::example1(k);
            for formulation in [Formulation::Pinn, Formulation::Ritz] {
                let spec = LossSpec {
                    formulation,
                    ..LossSpec::default()
                };
                let mut values = Vec::new();
                for n_g in [64, 128] {
                    let (interior, boundary) = sets_2d(n_g);
                    let fields = FieldCache::new(&problem, &interior, &boundary);
                    let mut scratch = LossScratch::new();
                    let (b, _) = evaluate(
                        &net, &params, &interior, &boundary, &problem, &spec, None, &fields,
                        &mut scratch,
                    )
                    .unwrap();
                    values.push(b.total);
                }
                assert!(
                    (values[0] - values[1]).abs() <= 1e-8,
                    "k={k}: {} vs {}",
                    values[0],
                    values[1]
                );
            }
        }
    }

    #[test]
    fn hard_boundary_equals_interior_only() {
        let problem = problems::example1(1);
        let mask = JetField::new(2, |x| {
            let xv = Jet2::coord(x[0], 0, 2);
            let yv = Jet2::coord(x[1], 1, 2);
            let one = Jet2::constant(1.0, 2);
            xv * (one - xv) * yv * (one - yv)
        });
        let config = NetworkConfig::new(2, 2, 6, Activation::Sine)
            .with_ansatz(JetField::constant(2, 0.0), mask);
        let net = Network::new(config).unwrap();
        let params = net.init_glorot(1);
        let (interior, boundary) = sets_2d(32);
        let soft = LossSpec::default();
        let hard = LossSpec {
            boundary: BoundaryMode::Hard,
            ..LossSpec::default()
        };
        let b_soft = pinn_loss(&net, &params, &interior, &boundary, &problem, &soft).unwrap();
        let b_hard = pinn_loss(&net, &params, &interior, &boundary, &problem, &hard).unwrap();
        assert!(b_soft.boundary_term <= 1e-20, "{}", b_soft.boundary_term);
        assert_eq!(b_hard.boundary_term, 0.0);
        assert_eq!(b_hard.total, b_hard.interior_term);
        assert_relative_eq!(
            b_soft.total - b_soft.boundary_term,
            b_hard.total,
            max_relative = 1e-12
        );
    }

    #[test]
    fn p_equals_two_reduces_to_poisson() {
        let poisson = problems::example1(2);
        let plap = Problem {
            kind: PdeKind::PLaplace { p: 2.0 },
            ..poisson.clone()
        };
        let config = NetworkConfig::new(2, 2, 5, Activation::Sine);
        let net = Network::new(config).unwrap();
        let params = net.init_glorot(9);
        let (interior, boundary) = sets_2d(16);
        for formulation in [Formulation::Pinn, Formulation::Ritz] {
            let spec = LossSpec {
                formulation,
                ..LossSpec::default()
            };
            let a = match formulation {
                Formulation::Pinn => {
                    pinn_loss(&net, &params, &interior, &boundary, &poisson, &spec).unwrap()
                }
                Formulation::Ritz => {
                    ritz_loss(&net, &params, &interior, &boundary, &poisson, &spec).unwrap()
                }
            };
            let b = match formulation {
                Formulation::Pinn => {
                    pinn_loss(&net, &params, &interior, &boundary, &plap, &spec).unwrap()
                }
                Formulation::Ritz => {
                    ritz_loss(&net, &params, &interior, &boundary, &plap, &spec).unwrap()
                }
            };
            assert_relative_eq!(a.total, b.total, max_relative = 1e-12);
        }
    }

    #[test]
    fn reductions_are_permutation_invariant() {
        let problem = problems::example1(4);
        let config = NetworkConfig::new(2, 3, 8, Activation::Sine);
        let net = Network::new(config).unwrap();
        let params = net.init_glorot(5);
        let (interior, boundary) = sets_2d(24);
        let spec = LossSpec::default();
        let breakdown = pinn_loss(&net, &params, &interior, &boundary, &problem, &spec).unwrap();

        // reverse the interior point order
        let mut rev_points = interior.points.clone();
        let mut rev_weights = interior.weights.clone();
        let n = interior.len();
        for i in 0..n {
            rev_points.row_mut(i).assign(&interior.points.row(n - 1 - i));
            rev_weights[i] = interior.weights[n - 1 - i];
        }
        let reversed = SampleSet {
            points: rev_points,
            weights: rev_weights,
            region: interior.region,
            scheme: interior.scheme,
        };
        let b2 = pinn_loss(&net, &params, &reversed, &boundary, &problem, &spec).unwrap();
        let denom = breakdown.total.abs().max(1.0);
        assert!(
            (breakdown.total - b2.total).abs() / denom <= 1e-13,
            "{} vs {}",
            breakdown.total,
            b2.total
        );
    }

    fn fd_loss_grad_check(
        net: &Network,
        params: &ParamVector,
        problem: &Problem,
        spec: &LossSpec,
        interior: &SampleSet,
        boundary: &SampleSet,
        multipliers: Option<&MultiplierState>,
    ) {
        let fields = FieldCache::new(problem, interior, boundary);
        let mut scratch = LossScratch::new();
        let mut grad = ParamVector::zeros(params.layout.clone());
        let (b0, _) = evaluate_with_grad(
            net, params, interior, boundary, problem, spec, multipliers, &fields, &mut scratch,
            &mut grad,
        )
        .unwrap();
        assert!(b0.total.is_finite());
        let h = 1e-6;
        for trial in 0..20 {
            let k = (trial * 131 + 17) % params.len();
            let mut pp = params.clone();
            let mut pm = params.clone();
            pp.values[k] += h;
            pm.values[k] -= h;
            let (bp, _) = evaluate(
                net, &pp, interior, boundary, problem, spec, multipliers, &fields, &mut scratch,
            )
            .unwrap();
            let (bm, _) = evaluate(
                net, &pm, interior, boundary, problem, spec, multipliers, &fields, &mut scratch,
            )
            .unwrap();
            let fd = (bp.total - bm.total) / (2.0 * h);
            let denom = fd.abs().max(1e-8);
            assert!(
                (grad.values[k] - fd).abs() / denom <= 1e-5,
                "{}: coordinate {k}: analytic {} vs fd {}",
                problem.name,
                grad.values[k],
                fd
            );
        }
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let config = NetworkConfig::new(2, 3, 5, Activation::Sine);
        let net = Network::new(config).unwrap();
        let params = net.init_glorot(21);
        let (interior, boundary) = sets_2d(8);
        let mult = MultiplierState::new(boundary.len());

        let poisson = problems::example1(1);
        for formulation in [Formulation::Pinn, Formulation::Ritz] {
            for boundary_mode in [BoundaryMode::Soft, BoundaryMode::Augmented] {
                let spec = LossSpec {
                    formulation,
                    boundary: boundary_mode,
                    w_boundary: 10.0,
                    ..LossSpec::default()
                };
                fd_loss_grad_check(
                    &net,
                    &params,
                    &poisson,
                    &spec,
                    &interior,
                    &boundary,
                    (boundary_mode == BoundaryMode::Augmented).then_some(&mult),
                );
            }
        }

        let plap = problems::p_laplace_example(3.0).unwrap();
        for formulation in [Formulation::Pinn, Formulation::Ritz] {
            let spec = LossSpec {
                formulation,
                p: 3.0,
                ..LossSpec::default()
            };
            fd_loss_grad_check(&net, &params, &plap, &spec, &interior, &boundary, None);
        }

        let eigen = problems::eigen_oscillator();
        let domain = BoxDomain::square(-3.0, 3.0).unwrap();
        let interior3 = gauss_interior(&domain, 8).unwrap();
        let boundary3 = gauss_boundary(&domain, 8).unwrap();
        let mult3 = MultiplierState::new(boundary3.len());
        let spec = LossSpec {
            formulation: Formulation::Ritz,
            boundary: BoundaryMode::Augmented,
            w_boundary: 10.0,
            w_constraint: 10.0,
            ..LossSpec::default()
        };
        fd_loss_grad_check(
            &net,
            &params,
            &eigen,
            &spec,
            &interior3,
            &boundary3,
            Some(&mult3),
        );
    }

    #[test]
    fn term_grads_match_finite_differences() {
        let problem = problems::example1(1);
        let config = NetworkConfig::new(2, 2, 5, Activation::Tanh);
        let net = Network::new(config).unwrap();
        let params = net.init_glorot(2);
        let (interior, boundary) = sets_2d(8);
        let spec = LossSpec {
            formulation: Formulation::Ritz,
            ..LossSpec::default()
        };
        let fields = FieldCache::new(&problem, &interior, &boundary);
        let mut scratch = LossScratch::new();
        let (gi, gb) = term_grads(
            &net, &params, &interior, &boundary, &problem, &spec, &fields, &mut scratch,
        )
        .unwrap();
        let eval_terms = |p: &ParamVector| {
            let (b, _) = evaluate(
                &net, p, &interior, &boundary, &problem, &spec, None, &fields, &mut LossScratch::new(),
            )
            .unwrap();
            (b.interior_term, b.boundary_term)
        };
        let h = 1e-6;
        for trial in 0..10 {
            let k = (trial * 53 + 5) % params.len();
            let mut pp = params.clone();
            let mut pm = params.clone();
            pp.values[k] += h;
            pm.values[k] -= h;
            let (ip, bp) = eval_terms(&pp);
            let (im, bm) = eval_terms(&pm);
            let fd_i = (ip - im) / (2.0 * h);
            let fd_b = (bp - bm) / (2.0 * h);
            assert!((gi[k] - fd_i).abs() / fd_i.abs().max(1e-8) <= 1e-5);
            assert!((gb[k] - fd_b).abs() / fd_b.abs().max(1e-8) <= 1e-5);
        }
    }

    #[test]
    fn spec_validation_errors() {
        let problem = problems::example1(1);
        let config = NetworkConfig::new(2, 1, 2, Activation::Sine);
        let net = Network::new(config).unwrap();
        // hard constraints without an ansatz
        let spec = LossSpec {
            boundary: BoundaryMode::Hard,
            ..LossSpec::default()
        };
        assert!(spec.validate(&problem, &net).is_err());
        // exponent mismatch
        let plap = problems::p_laplace_example(4.0).unwrap();
        let spec = LossSpec {
            p: 3.0,
            ..LossSpec::default()
        };
        assert!(spec.validate(&plap, &net).is_err());
        // missing multipliers
        let (interior, boundary) = sets_2d(4);
        let fields = FieldCache::new(&problem, &interior, &boundary);
        let spec = LossSpec {
            boundary: BoundaryMode::Augmented,
            ..LossSpec::default()
        };
        let params = net.init_glorot(0);
        let err = evaluate(
            &net, &params, &interior, &boundary, &problem, &spec, None, &fields,
            &mut LossScratch::new(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
