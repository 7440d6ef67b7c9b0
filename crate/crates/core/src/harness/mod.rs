//! Experiment runner: builds (problem, network, sampler, loss, balance,
//! optimizer) from a declarative config, trains with indicator-based
//! checkpointing, computes relative L2 errors and eigenvalue estimates,
//! sweeps hyperparameter grids over seeds, and probes loss landscapes.

pub mod emit;

use std::f64::consts::PI;
use std::time::Instant;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::balance::{
    grad_norm_update, inverse_dirichlet_update, self_adaptive_update, BalanceScheme,
    BalanceState,
};
use crate::error::{Error, Result};
use crate::jet::{Jet2, JetField};
use crate::loss::{
    evaluate_with_grad, indicator_ep, indicator_er, BoundaryMode, FieldCache, Formulation,
    LossBreakdown, LossScratch, LossSpec, MultiplierState,
};
use crate::net::{
    init_glorot, Activation, DerivOrder, Network, NetworkConfig, ParamVector, RffConfig,
};
use crate::optim::{ascent_step, run_schedule, Schedule, ScheduleKind, TrainProblem};
use crate::problems::{self, PdeKind, Problem};
use crate::sampling::{
    gauss_boundary, gauss_interior, mc_boundary, mc_interior, SampleSet,
};

/// Multiplier ascent rate; deliberately larger than the Adam learning rate
/// (two-scale min-max updates).
pub const MULTIPLIER_ASCENT_RATE: f64 = 1.0;

// ---------------------------------------------------------------------------
// declarative experiment configuration
// ---------------------------------------------------------------------------

fn default_depth() -> usize {
    4
}
fn default_width() -> usize {
    35
}
fn default_ng() -> usize {
    64
}
fn default_lr() -> f64 {
    0.001
}
fn default_epochs() -> usize {
    100_000
}
fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3, 4]
}
fn default_indicator_period() -> usize {
    100
}
fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default = "default_width")]
    pub width: usize,
    #[serde(default)]
    pub activation: ActivationName,
    /// Hard-boundary mask: `"poly"` or `"sin:<k>"`; the lift is zero
    /// (all bundled problems have zero boundary data).
    #[serde(default)]
    pub ansatz: Option<String>,
    #[serde(default)]
    pub rff: Option<RffSection>,
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection {
            depth: default_depth(),
            width: default_width(),
            activation: ActivationName::Sine,
            ansatz: None,
            rff: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum ActivationName {
    #[default]
    Sine,
    Tanh,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RffSection {
    pub m: usize,
    #[serde(default = "one")]
    pub sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    #[serde(default)]
    pub scheme: SchemeName,
    #[serde(default = "default_ng")]
    pub n_g: usize,
    /// Monte-Carlo interior count; defaults to `n_g^d`.
    #[serde(default)]
    pub interior: Option<usize>,
    /// Monte-Carlo boundary count; defaults to `2 d n_g^(d-1)`.
    #[serde(default)]
    pub boundary: Option<usize>,
    /// Base seed for Monte-Carlo draws, mixed with the run seed so every
    /// run resamples its points.
    #[serde(default)]
    pub seed: u64,
}

impl Default for SamplerSection {
    fn default() -> Self {
        SamplerSection {
            scheme: SchemeName::Gauss,
            n_g: default_ng(),
            interior: None,
            boundary: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum SchemeName {
    #[default]
    Gauss,
    Mc,
}

/// A weight that is either fixed or resolved automatically (`"auto"`):
/// the p-Laplace interior weight becomes `1 / int |f|`, everything else 1.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum WeightOption {
    Fixed(f64),
    Auto(AutoTag),
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum AutoTag {
    Auto,
}

impl Default for WeightOption {
    fn default() -> Self {
        WeightOption::Auto(AutoTag::Auto)
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSection {
    #[serde(default)]
    pub formulation: FormulationName,
    #[serde(default)]
    pub boundary: BoundaryName,
    #[serde(default)]
    pub w_i: WeightOption,
    #[serde(default = "one")]
    pub w_b: f64,
    #[serde(default = "one")]
    pub w_c: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        LossSection {
            formulation: FormulationName::Pinn,
            boundary: BoundaryName::Soft,
            w_i: WeightOption::default(),
            w_b: 1.0,
            w_c: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum FormulationName {
    #[default]
    Pinn,
    Ritz,
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryName {
    #[default]
    Soft,
    Hard,
    Augmented,
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BalanceSection {
    #[serde(default)]
    pub scheme: BalanceName,
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum BalanceName {
    #[default]
    Constant,
    /// Self-adaptive pointwise boundary weights.
    Sa,
    /// Inverse-Dirichlet weighting.
    Invdir,
    /// Gradient-norm balancing.
    Gradnorm,
    Augmented,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    #[serde(default)]
    pub kind: OptimizerName,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Hybrid only: epoch at which Adam hands over to L-BFGS.
    #[serde(default)]
    pub switch_epoch: Option<usize>,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        OptimizerSection {
            kind: OptimizerName::Adam,
            lr: default_lr(),
            epochs: default_epochs(),
            switch_epoch: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize, PartialEq, Eq)]
pub enum OptimizerName {
    #[default]
    #[serde(rename = "adam")]
    Adam,
    #[serde(rename = "lbfgs")]
    Lbfgs,
    #[serde(rename = "adam+lbfgs")]
    AdamLbfgs,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// `"ep"` or `"er"`; defaults to EP for PINN and ER for deep Ritz.
    #[serde(default)]
    pub indicator: Option<IndicatorName>,
    #[serde(default = "default_indicator_period")]
    pub indicator_period: usize,
    /// Per-dimension test grid resolution; defaults to 101 in 2D, 51 in 3D.
    #[serde(default)]
    pub test_grid: Option<usize>,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seeds: default_seeds(),
            indicator: None,
            indicator_period: default_indicator_period(),
            test_grid: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum IndicatorName {
    Ep,
    Er,
}

/// Everything needed to reproduce one experiment cell.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Problem id, e.g. `ex1:k=1`, `plap:p=5`, `eig-well`.
    pub problem: String,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub sampler: SamplerSection,
    #[serde(default)]
    pub loss: LossSection,
    #[serde(default)]
    pub balance: BalanceSection,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub run: RunSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::config(format!("config parse: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        problems::parse(&self.problem)?;
        if self.network.ansatz.is_none() && self.loss.boundary == BoundaryName::Hard {
            return Err(Error::config(
                "hard boundary constraints require network.ansatz",
            ));
        }
        match self.balance.scheme {
            BalanceName::Augmented if self.loss.boundary != BoundaryName::Augmented => {
                return Err(Error::config(
                    "balance scheme `augmented` requires loss.boundary = \"augmented\"",
                ));
            }
            BalanceName::Sa | BalanceName::Invdir | BalanceName::Gradnorm
                if self.loss.boundary != BoundaryName::Soft =>
            {
                return Err(Error::config(
                    "adaptive weight schemes require soft boundary handling",
                ));
            }
            _ => {}
        }
        if self.optimizer.kind == OptimizerName::AdamLbfgs && self.optimizer.switch_epoch.is_none()
        {
            return Err(Error::config(
                "adam+lbfgs requires optimizer.switch_epoch",
            ));
        }
        Ok(())
    }

    /// The optimizer schedule with CLI overrides applied.
    pub fn schedule(&self) -> Schedule {
        let kind = match self.optimizer.kind {
            OptimizerName::Adam => ScheduleKind::Adam,
            OptimizerName::Lbfgs => ScheduleKind::Lbfgs,
            OptimizerName::AdamLbfgs => ScheduleKind::AdamThenLbfgs,
        };
        Schedule {
            kind,
            epochs: self.optimizer.epochs,
            switch_epoch: self.optimizer.switch_epoch.unwrap_or(0),
            lr: self.optimizer.lr,
        }
    }
}

/// Builds the hard-boundary mask field for a preset name on the problem
/// domain: `"poly"` for the product of linear edge factors, `"sin:<k>"` for
/// the product of sines with `k` half-periods per axis.
fn ansatz_mask(name: &str, problem: &Problem) -> Result<JetField> {
    let d = problem.dim();
    let intervals: Vec<(f64, f64)> = problem.domain.intervals().to_vec();
    if name == "poly" {
        return Ok(JetField::new(d, move |x| {
            let mut acc = Jet2::constant(1.0, d);
            for (k, (a, b)) in intervals.iter().enumerate() {
                let xv = Jet2::coord(x[k], k, d);
                acc = acc * (xv.shift(-a)) * (Jet2::constant(*b, d) - xv);
            }
            acc
        }));
    }
    if let Some(k) = name.strip_prefix("sin:") {
        let k: f64 = k
            .parse()
            .map_err(|_| Error::config(format!("invalid ansatz frequency `{k}`")))?;
        return Ok(JetField::new(d, move |x| {
            let mut acc = Jet2::constant(1.0, d);
            for (i, (a, b)) in intervals.iter().enumerate() {
                let scale = k * PI / (b - a);
                let xv = Jet2::coord(x[i], i, d).shift(-a).scale(scale);
                acc = acc * xv.sin();
            }
            acc
        }));
    }
    Err(Error::config(format!(
        "unknown ansatz `{name}` (expected `poly` or `sin:<k>`)"
    )))
}

/// Mixes the sampler base seed with the run seed so Monte-Carlo points are
/// redrawn per run but stay reproducible.
fn mc_seed(base: u64, run_seed: u64) -> u64 {
    base ^ run_seed.wrapping_mul(0x9E37_79B9_97F4_A7C5)
}

/// One fully built experiment instance for a specific run seed.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub problem: Problem,
    pub net: Network,
    pub interior: SampleSet,
    pub boundary: SampleSet,
    pub spec: LossSpec,
    pub indicator: Option<IndicatorName>,
    pub run_seed: u64,
}

impl Experiment {
    pub fn build(config: &ExperimentConfig, run_seed: u64) -> Result<Experiment> {
        config.validate()?;
        let problem = problems::parse(&config.problem)?;
        let d = problem.dim();

        let mut net_config = NetworkConfig::new(
            d,
            config.network.depth,
            config.network.width,
            match config.network.activation {
                ActivationName::Sine => Activation::Sine,
                ActivationName::Tanh => Activation::Tanh,
            },
        );
        if let Some(rff) = &config.network.rff {
            net_config = net_config.with_rff(RffConfig {
                m: rff.m,
                sigma: rff.sigma,
                seed: rff.seed,
            });
        }
        if let Some(name) = &config.network.ansatz {
            let mask = ansatz_mask(name, &problem)?;
            // the presets assume zero boundary data; spot-check it
            let check = gauss_boundary(&problem.domain, 10)?;
            for i in 0..check.len() {
                if problem.dirichlet.value(check.point(i)).abs() > 1e-12 {
                    return Err(Error::config(
                        "ansatz presets assume zero Dirichlet data",
                    ));
                }
            }
            net_config = net_config.with_ansatz(JetField::constant(d, 0.0), mask);
        }
        let net = Network::new(net_config)?;

        let n_g = config.sampler.n_g;
        let (interior, boundary) = match config.sampler.scheme {
            SchemeName::Gauss => (
                gauss_interior(&problem.domain, n_g)?,
                gauss_boundary(&problem.domain, n_g)?,
            ),
            SchemeName::Mc => {
                let n_interior = config
                    .sampler
                    .interior
                    .unwrap_or_else(|| n_g.pow(d as u32));
                let n_boundary = config
                    .sampler
                    .boundary
                    .unwrap_or_else(|| 2 * d * n_g.pow((d - 1) as u32));
                let seed = mc_seed(config.sampler.seed, run_seed);
                (
                    mc_interior(&problem.domain, n_interior, seed)?,
                    mc_boundary(&problem.domain, n_boundary, seed.wrapping_add(1))?,
                )
            }
        };

        let w_interior = match config.loss.w_i {
            WeightOption::Fixed(v) => v,
            WeightOption::Auto(_) => match problem.kind {
                // normalize against the growing forcing magnitude
                PdeKind::PLaplace { .. } => {
                    let mut integral = 0.0;
                    for i in 0..interior.len() {
                        integral +=
                            interior.weights[i] * problem.forcing.value(interior.point(i)).abs();
                    }
                    1.0 / integral
                }
                _ => 1.0,
            },
        };
        let spec = LossSpec {
            formulation: match config.loss.formulation {
                FormulationName::Pinn => Formulation::Pinn,
                FormulationName::Ritz => Formulation::Ritz,
            },
            boundary: match config.loss.boundary {
                BoundaryName::Soft => BoundaryMode::Soft,
                BoundaryName::Hard => BoundaryMode::Hard,
                BoundaryName::Augmented => BoundaryMode::Augmented,
            },
            w_interior,
            w_boundary: config.loss.w_b,
            w_constraint: config.loss.w_c,
            p: problem.kind.p_exponent(),
        };
        spec.validate(&problem, &net)?;

        let indicator = match problem.kind {
            PdeKind::Eigen => None,
            _ => Some(config.run.indicator.unwrap_or(match spec.formulation {
                Formulation::Pinn => IndicatorName::Ep,
                Formulation::Ritz => IndicatorName::Er,
            })),
        };

        Ok(Experiment {
            config: config.clone(),
            problem,
            net,
            interior,
            boundary,
            spec,
            indicator,
            run_seed,
        })
    }

    pub fn test_resolution(&self) -> usize {
        self.config
            .run
            .test_grid
            .unwrap_or(if self.problem.dim() == 2 { 101 } else { 51 })
    }
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

/// Outcome of one seeded training run.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub seed: u64,
    /// Relative L2 error of the checkpointed parameters; for eigen runs the
    /// relative eigenvalue error of the trailing-window estimate.
    pub rel_l2: f64,
    /// Relative L2 error of the final-epoch parameters (eigen: same metric).
    pub final_rel_l2: f64,
    pub best_indicator: f64,
    pub best_epoch: usize,
    pub eigen_estimate: Option<f64>,
    pub wall_seconds: f64,
    pub diverged: bool,
    /// Sampled history of (epoch, indicator) pairs; for eigen runs the
    /// Rayleigh quotient is recorded instead.
    pub history: Vec<(usize, f64)>,
}

struct TrainingState<'a> {
    experiment: &'a Experiment,
    boundary_effective: SampleSet,
    spec_now: LossSpec,
    fields: FieldCache,
    scratch: LossScratch,
    grad: ParamVector,
    multipliers: Option<MultiplierState>,
    balance: BalanceState,
    cached_residuals: Vec<f64>,
    cached_breakdown: LossBreakdown,
    best: Option<(f64, usize, ParamVector)>,
    history: Vec<(usize, f64)>,
    quotients: Vec<f64>,
    indicator_period: usize,
}

impl<'a> TrainingState<'a> {
    fn new(experiment: &'a Experiment) -> Self {
        let config = &experiment.config;
        let scheme = match config.balance.scheme {
            BalanceName::Constant => BalanceScheme::Constant,
            BalanceName::Sa => BalanceScheme::SelfAdaptive,
            BalanceName::Invdir => BalanceScheme::InverseDirichlet,
            BalanceName::Gradnorm => BalanceScheme::GradNorm,
            BalanceName::Augmented => BalanceScheme::Augmented,
        };
        let mut balance = BalanceState::new(scheme, experiment.boundary.len());
        balance.w_interior = experiment.spec.w_interior;
        balance.w_boundary = experiment.spec.w_boundary;
        let multipliers = (experiment.spec.boundary == BoundaryMode::Augmented)
            .then(|| MultiplierState::new(experiment.boundary.len()));
        let fields = FieldCache::new(
            &experiment.problem,
            &experiment.interior,
            &experiment.boundary,
        );
        TrainingState {
            experiment,
            boundary_effective: experiment.boundary.clone(),
            spec_now: experiment.spec,
            fields,
            scratch: LossScratch::new(),
            grad: ParamVector::zeros(experiment.net.layout().clone()),
            multipliers,
            balance,
            cached_residuals: Vec::new(),
            cached_breakdown: LossBreakdown::default(),
            best: None,
            history: Vec::new(),
            quotients: Vec::new(),
            indicator_period: config.run.indicator_period.max(1),
        }
    }

    fn eval_inner(&mut self, params: &[f64], cache: bool) -> Result<(f64, Vec<f64>)> {
        let net = &self.experiment.net;
        let params = ParamVector {
            values: params.to_vec(),
            layout: net.layout().clone(),
        };
        let (breakdown, residuals) = evaluate_with_grad(
            net,
            &params,
            &self.experiment.interior,
            &self.boundary_effective,
            &self.experiment.problem,
            &self.spec_now,
            self.multipliers.as_ref(),
            &self.fields,
            &mut self.scratch,
            &mut self.grad,
        )?;
        if cache {
            self.cached_residuals = residuals;
            self.cached_breakdown = breakdown;
        }
        Ok((breakdown.total, self.grad.values.clone()))
    }

    fn indicator_value(&self, params: &ParamVector) -> Result<f64> {
        let e = self.experiment;
        match e.indicator {
            Some(IndicatorName::Ep) => {
                indicator_ep(&e.net, params, &e.problem, &e.interior, &e.boundary)
            }
            Some(IndicatorName::Er) => {
                indicator_er(&e.net, params, &e.problem, &e.interior, &e.boundary)
            }
            None => Err(Error::config("no indicator for this run")),
        }
    }

    fn checkpoint(&mut self, params: &ParamVector, epoch: usize) -> Result<()> {
        if self.experiment.indicator.is_none() {
            return Ok(());
        }
        let value = self.indicator_value(params)?;
        self.history.push((epoch, value));
        let improved = self.best.as_ref().map_or(true, |(b, _, _)| value < *b);
        if improved {
            self.best = Some((value, epoch, params.clone()));
        }
        Ok(())
    }
}

impl TrainProblem for TrainingState<'_> {
    fn eval(&mut self, params: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.eval_inner(params, true)
    }

    fn eval_line(&mut self, params: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.eval_inner(params, false)
    }

    fn post_step(&mut self, params: &[f64], epoch: usize) -> Result<()> {
        let experiment = self.experiment;
        // theta and the multipliers are updated simultaneously: the ascent
        // uses the residuals cached from the pre-update evaluation
        if let Some(multipliers) = self.multipliers.as_mut() {
            ascent_step(
                multipliers,
                &self.cached_residuals,
                self.boundary_effective
                    .weights
                    .as_slice()
                    .expect("contiguous"),
                self.cached_breakdown.volume_deficit,
                MULTIPLIER_ASCENT_RATE,
            )?;
        }
        match self.balance.scheme {
            BalanceScheme::Constant | BalanceScheme::Augmented => {}
            BalanceScheme::SelfAdaptive => {
                self_adaptive_update(&mut self.balance, &self.cached_residuals)?;
                let lambda = &self.balance.pointwise.as_ref().expect("sa weights").lambda;
                for i in 0..self.boundary_effective.len() {
                    self.boundary_effective.weights[i] =
                        experiment.boundary.weights[i] * lambda[i];
                }
            }
            BalanceScheme::InverseDirichlet | BalanceScheme::GradNorm => {
                let params = ParamVector {
                    values: params.to_vec(),
                    layout: experiment.net.layout().clone(),
                };
                let (gi, gb) = crate::loss::term_grads(
                    &experiment.net,
                    &params,
                    &experiment.interior,
                    &self.boundary_effective,
                    &experiment.problem,
                    &self.spec_now,
                    &self.fields,
                    &mut self.scratch,
                )?;
                if self.balance.scheme == BalanceScheme::InverseDirichlet {
                    inverse_dirichlet_update(&mut self.balance, &gi, &gb)?;
                } else {
                    grad_norm_update(&mut self.balance, &[&gi, &gb])?;
                }
                self.spec_now.w_interior = self.balance.w_interior;
                self.spec_now.w_boundary = self.balance.w_boundary;
            }
        }
        if matches!(experiment.problem.kind, PdeKind::Eigen) {
            self.quotients
                .push(self.cached_breakdown.rayleigh.unwrap_or(f64::NAN));
            if epoch % self.indicator_period == 0 {
                self.history
                    .push((epoch, *self.quotients.last().expect("pushed above")));
            }
        } else if epoch % self.indicator_period == 0 {
            let params = ParamVector {
                values: params.to_vec(),
                layout: experiment.net.layout().clone(),
            };
            self.checkpoint(&params, epoch)?;
        }
        Ok(())
    }
}

/// Trains one seed: Glorot init, schedule dispatch, indicator-based
/// checkpointing, and the final error metrics. Returns the result together
/// with the parameters it reports (the best checkpoint when indicators are
/// in play, the final parameters otherwise).
pub fn train(experiment: &Experiment) -> Result<(RunResult, ParamVector)> {
    let start = Instant::now();
    let net = &experiment.net;
    let schedule = experiment.config.schedule();
    let mut params = init_glorot(net.config(), experiment.run_seed)?;

    let mut state = TrainingState::new(experiment);
    state.checkpoint(&params, 0)?;

    let outcome = run_schedule(&schedule, &mut params, &mut state)?;
    let diverged = outcome.diverged.is_some();

    let eigen = matches!(experiment.problem.kind, PdeKind::Eigen);
    let (best_indicator, best_epoch, best_params) = match state.best.take() {
        Some((v, e, p)) => (v, e, p),
        None => (f64::NAN, schedule.epochs, params.clone()),
    };

    let resolution = experiment.test_resolution();
    let (rel, final_rel, eigen_estimate) = if eigen {
        let reference = experiment
            .problem
            .reference_eigenvalue
            .ok_or_else(|| Error::config("eigen problem lacks a reference eigenvalue"))?;
        let window = state.quotients.len().min(10_000);
        let estimate = if window == 0 {
            f64::NAN
        } else {
            let tail = &state.quotients[state.quotients.len() - window..];
            tail.iter().sum::<f64>() / window as f64
        };
        let err = ((estimate - reference) / reference).abs();
        (err, err, Some(estimate))
    } else {
        let rel = relative_l2(net, &best_params, &experiment.problem, resolution)?;
        let final_rel = relative_l2(net, &params, &experiment.problem, resolution)?;
        (rel, final_rel, None)
    };

    let result = RunResult {
        seed: experiment.run_seed,
        rel_l2: rel,
        final_rel_l2: final_rel,
        best_indicator,
        best_epoch,
        eigen_estimate,
        wall_seconds: start.elapsed().as_secs_f64(),
        diverged,
        history: state.history,
    };
    let reported = if eigen { params } else { best_params };
    Ok((result, reported))
}

/// Relative L2 error of the network against the problem's exact solution on
/// a uniform tensor grid (endpoints included).
pub fn relative_l2(
    net: &Network,
    params: &ParamVector,
    problem: &Problem,
    resolution: usize,
) -> Result<f64> {
    let exact = problem
        .exact
        .as_ref()
        .ok_or_else(|| Error::config("relative L2 error requires an exact solution"))?;
    if resolution < 2 {
        return Err(Error::config("test grid needs at least two points per axis"));
    }
    let d = problem.dim();
    let intervals = problem.domain.intervals();
    let mut num = 0.0;
    let mut den = 0.0;
    let total: usize = resolution.pow(d as u32);
    let chunk = 8192usize;
    let mut offset = 0;
    let mut points = Array2::zeros((chunk.min(total), d));
    while offset < total {
        let size = chunk.min(total - offset);
        if points.nrows() != size {
            points = Array2::zeros((size, d));
        }
        for row in 0..size {
            let mut index = offset + row;
            for k in (0..d).rev() {
                let i = index % resolution;
                index /= resolution;
                let (a, b) = intervals[k];
                points[[row, k]] = a + (b - a) * i as f64 / (resolution - 1) as f64;
            }
        }
        let jets = net.forward_jets(params, points.view(), DerivOrder::Value)?;
        for row in 0..size {
            let x = points.row(row);
            let x = x.to_slice().expect("row-major");
            let u_star = exact.value(x);
            let diff = jets[[row, 0]] - u_star;
            num += diff * diff;
            den += u_star * u_star;
        }
        offset += size;
    }
    if den == 0.0 {
        return Err(Error::config("exact solution vanishes on the test grid"));
    }
    Ok((num / den).sqrt())
}

/// Absolute error field `|U - u*|` on the test grid (2D), or on the middle
/// slice of the third axis (3D). Without an exact solution the field is
/// `|U|` itself.
pub fn error_field(
    net: &Network,
    params: &ParamVector,
    problem: &Problem,
    resolution: usize,
) -> Result<Array2<f64>> {
    let d = problem.dim();
    let intervals = problem.domain.intervals();
    let mut field = Array2::zeros((resolution, resolution));
    let mut points = Array2::zeros((resolution * resolution, d));
    let coord = |k: usize, i: usize| {
        let (a, b) = intervals[k];
        a + (b - a) * i as f64 / (resolution - 1) as f64
    };
    for i in 0..resolution {
        for j in 0..resolution {
            let row = i * resolution + j;
            points[[row, 0]] = coord(0, j);
            points[[row, 1]] = coord(1, i);
            if d == 3 {
                let (a, b) = intervals[2];
                points[[row, 2]] = 0.5 * (a + b);
            }
        }
    }
    let jets = net.forward_jets(params, points.view(), DerivOrder::Value)?;
    for i in 0..resolution {
        for j in 0..resolution {
            let row = i * resolution + j;
            let x = points.row(row);
            let x = x.to_slice().expect("row-major");
            let u = jets[[row, 0]];
            field[[i, j]] = match &problem.exact {
                Some(exact) => (u - exact.value(x)).abs(),
                None => u.abs(),
            };
        }
    }
    Ok(field)
}

// ---------------------------------------------------------------------------
// sweeps and reports
// ---------------------------------------------------------------------------

/// One axis of a sweep: a config key and its candidate values, e.g.
/// `wB = [1, 10, 100]`.
#[derive(Clone, Debug)]
pub struct SweepAxis {
    pub key: String,
    pub values: Vec<String>,
}

impl SweepAxis {
    /// Parses `key=v1,v2,...`.
    pub fn parse(text: &str) -> Result<SweepAxis> {
        let (key, values) = text
            .split_once('=')
            .ok_or_else(|| Error::config(format!("malformed axis `{text}`")))?;
        let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).collect();
        if values.is_empty() || values.iter().any(|v| v.is_empty()) {
            return Err(Error::config(format!("axis `{key}` has empty values")));
        }
        Ok(SweepAxis {
            key: key.trim().to_string(),
            values,
        })
    }
}

/// Applies one axis assignment to a config.
pub fn apply_axis(config: &ExperimentConfig, key: &str, value: &str) -> Result<ExperimentConfig> {
    let mut config = config.clone();
    let parse_f64 = |v: &str| {
        v.parse::<f64>()
            .map_err(|_| Error::config(format!("invalid numeric value `{v}` for `{key}`")))
    };
    match key.to_ascii_lowercase().as_str() {
        "wb" | "w_b" => config.loss.w_b = parse_f64(value)?,
        "wi" | "w_i" => {
            config.loss.w_i = if value == "auto" {
                WeightOption::Auto(AutoTag::Auto)
            } else {
                WeightOption::Fixed(parse_f64(value)?)
            }
        }
        "wc" | "w_c" => config.loss.w_c = parse_f64(value)?,
        "ng" | "n_g" => {
            config.sampler.n_g = value
                .parse()
                .map_err(|_| Error::config(format!("invalid n_g `{value}`")))?
        }
        "sampler" => {
            config.sampler.scheme = match value {
                "gauss" => SchemeName::Gauss,
                "mc" => SchemeName::Mc,
                _ => return Err(Error::config(format!("unknown sampler `{value}`"))),
            }
        }
        "formulation" => {
            config.loss.formulation = match value {
                "pinn" => FormulationName::Pinn,
                "ritz" => FormulationName::Ritz,
                _ => return Err(Error::config(format!("unknown formulation `{value}`"))),
            }
        }
        "boundary" => {
            config.loss.boundary = match value {
                "soft" => BoundaryName::Soft,
                "hard" => BoundaryName::Hard,
                "augmented" => BoundaryName::Augmented,
                _ => return Err(Error::config(format!("unknown boundary mode `{value}`"))),
            }
        }
        "activation" => {
            config.network.activation = match value {
                "sine" => ActivationName::Sine,
                "tanh" => ActivationName::Tanh,
                _ => return Err(Error::config(format!("unknown activation `{value}`"))),
            }
        }
        "balance" => {
            config.balance.scheme = match value {
                "constant" => BalanceName::Constant,
                "sa" => BalanceName::Sa,
                "invdir" => BalanceName::Invdir,
                "gradnorm" => BalanceName::Gradnorm,
                "augmented" => BalanceName::Augmented,
                _ => return Err(Error::config(format!("unknown balance scheme `{value}`"))),
            }
        }
        "optimizer" => {
            config.optimizer.kind = match value {
                "adam" => OptimizerName::Adam,
                "lbfgs" => OptimizerName::Lbfgs,
                "adam+lbfgs" => OptimizerName::AdamLbfgs,
                _ => return Err(Error::config(format!("unknown optimizer `{value}`"))),
            }
        }
        "problem" => config.problem = value.to_string(),
        "ansatz" => config.network.ansatz = Some(value.to_string()),
        other => {
            return Err(Error::config(format!(
                "unknown sweep key `{other}` (try wB, wI, wC, nG, sampler, formulation, boundary, activation, balance, optimizer, problem, ansatz)"
            )))
        }
    }
    Ok(config)
}

/// Aggregated statistics of one sweep cell.
#[derive(Clone, Debug)]
pub struct CellReport {
    pub id: String,
    /// `None` when every seed diverged (rendered as `-`).
    pub mean_rel_l2: Option<f64>,
    pub std_rel_l2: Option<f64>,
    pub n_converged: usize,
    pub n_seeds: usize,
    pub wall_mean_s: f64,
    /// Marks the cell with the smallest mean error in the report.
    pub best: bool,
}

#[derive(Clone, Debug, Default)]
pub struct Report {
    pub cells: Vec<CellReport>,
}

/// Aggregates per-seed results into a cell: mean and population standard
/// deviation over the converged seeds only.
pub fn aggregate_cell(id: &str, results: &[RunResult]) -> CellReport {
    let converged: Vec<&RunResult> = results.iter().filter(|r| !r.diverged).collect();
    let n = converged.len();
    let (mean, std) = if n == 0 {
        (None, None)
    } else {
        let mean = converged.iter().map(|r| r.rel_l2).sum::<f64>() / n as f64;
        let var = converged
            .iter()
            .map(|r| (r.rel_l2 - mean) * (r.rel_l2 - mean))
            .sum::<f64>()
            / n as f64;
        (Some(mean), Some(var.sqrt()))
    };
    let wall_mean = if results.is_empty() {
        0.0
    } else {
        results.iter().map(|r| r.wall_seconds).sum::<f64>() / results.len() as f64
    };
    CellReport {
        id: id.to_string(),
        mean_rel_l2: mean,
        std_rel_l2: std,
        n_converged: n,
        n_seeds: results.len(),
        wall_mean_s: wall_mean,
        best: false,
    }
}

fn mark_best(report: &mut Report) {
    let best = report
        .cells
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.mean_rel_l2.map(|m| (i, m)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i);
    if let Some(i) = best {
        report.cells[i].best = true;
    }
}

/// Runs every axis combination over every seed (in parallel) and aggregates
/// a report. Returns the per-cell raw results alongside.
pub fn sweep(
    config: &ExperimentConfig,
    axes: &[SweepAxis],
) -> Result<(Report, Vec<(String, Vec<RunResult>)>)> {
    // cartesian product of axis assignments
    let mut cells: Vec<(String, ExperimentConfig)> = vec![(String::new(), config.clone())];
    for axis in axes {
        let mut next = Vec::with_capacity(cells.len() * axis.values.len());
        for (id, cell_config) in &cells {
            for value in &axis.values {
                let applied = apply_axis(cell_config, &axis.key, value)?;
                let id = if id.is_empty() {
                    format!("{}={}", axis.key, value)
                } else {
                    format!("{id};{}={}", axis.key, value)
                };
                next.push((id, applied));
            }
        }
        cells = next;
    }
    if cells.len() == 1 && cells[0].0.is_empty() {
        cells[0].0 = "run".to_string();
    }

    let jobs: Vec<(usize, u64, ExperimentConfig)> = cells
        .iter()
        .enumerate()
        .flat_map(|(i, (_, c))| c.run.seeds.iter().map(move |s| (i, *s, c.clone())))
        .collect();
    let mut results: Vec<(usize, RunResult)> = jobs
        .into_par_iter()
        .map(|(cell, seed, config)| {
            let experiment = Experiment::build(&config, seed)?;
            let (result, _) = train(&experiment)?;
            Ok::<(usize, RunResult), Error>((cell, result))
        })
        .collect::<Result<Vec<_>>>()?;
    results.sort_by_key(|(cell, r)| (*cell, r.seed));

    let mut per_cell: Vec<(String, Vec<RunResult>)> = cells
        .iter()
        .map(|(id, _)| (id.clone(), Vec::new()))
        .collect();
    for (cell, result) in results {
        per_cell[cell].1.push(result);
    }
    let mut report = Report {
        cells: per_cell
            .iter()
            .map(|(id, results)| aggregate_cell(id, results))
            .collect(),
    };
    mark_best(&mut report);
    Ok((report, per_cell))
}

// ---------------------------------------------------------------------------
// loss landscape
// ---------------------------------------------------------------------------

/// Loss and error values on a 2D slice of parameter space.
#[derive(Clone, Debug)]
pub struct Landscape {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub loss: Array2<f64>,
    /// Relative L2 error of the perturbed network, when the problem has an
    /// exact solution.
    pub rel_l2: Option<Array2<f64>>,
}

/// Gaussian direction, Frobenius-normalized per layer block and rescaled by
/// that block's parameter norm.
fn landscape_direction(params: &ParamVector, seed: u64) -> Vec<f64> {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dir = vec![0.0; params.len()];
    for block in &params.layout.blocks {
        let span = block.span();
        let mut norm_raw = 0.0f64;
        for v in dir[span.clone()].iter_mut() {
            *v = StandardNormal.sample(&mut rng);
            norm_raw += *v * *v;
        }
        let norm_raw = norm_raw.sqrt();
        let theta_norm = params.values[span.clone()]
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        let scale = if norm_raw > 0.0 { theta_norm / norm_raw } else { 0.0 };
        for v in dir[span].iter_mut() {
            *v *= scale;
        }
    }
    dir
}

/// Evaluates the configured loss (and the relative error, when available)
/// on the grid `theta* + alpha zeta + beta gamma` with layer-and-direction
/// normalized random directions.
pub fn loss_landscape(
    experiment: &Experiment,
    best_params: &ParamVector,
    grid: (usize, usize),
    range: f64,
    direction_seed: u64,
) -> Result<Landscape> {
    let zeta = landscape_direction(best_params, direction_seed);
    let gamma = landscape_direction(best_params, direction_seed.wrapping_add(1));
    let fields = FieldCache::new(
        &experiment.problem,
        &experiment.interior,
        &experiment.boundary,
    );
    let multipliers = (experiment.spec.boundary == BoundaryMode::Augmented)
        .then(|| MultiplierState::new(experiment.boundary.len()));
    let (na, nb) = grid;
    let alphas: Vec<f64> = (0..na)
        .map(|i| -range + 2.0 * range * i as f64 / (na.max(2) - 1) as f64)
        .collect();
    let betas: Vec<f64> = (0..nb)
        .map(|i| -range + 2.0 * range * i as f64 / (nb.max(2) - 1) as f64)
        .collect();
    let mut loss = Array2::zeros((na, nb));
    let has_exact = experiment.problem.exact.is_some();
    let mut rel = has_exact.then(|| Array2::zeros((na, nb)));
    let mut scratch = LossScratch::new();
    let mut point = best_params.clone();
    let resolution = experiment.test_resolution();
    for (i, a) in alphas.iter().enumerate() {
        for (j, b) in betas.iter().enumerate() {
            for k in 0..point.len() {
                point.values[k] = best_params.values[k] + a * zeta[k] + b * gamma[k];
            }
            let value = crate::loss::evaluate(
                &experiment.net,
                &point,
                &experiment.interior,
                &experiment.boundary,
                &experiment.problem,
                &experiment.spec,
                multipliers.as_ref(),
                &fields,
                &mut scratch,
            )
            .map(|(breakdown, _)| breakdown.total)
            .unwrap_or(f64::INFINITY);
            loss[[i, j]] = value;
            if let Some(rel) = rel.as_mut() {
                rel[[i, j]] =
                    relative_l2(&experiment.net, &point, &experiment.problem, resolution)
                        .unwrap_or(f64::INFINITY);
            }
        }
    }
    Ok(Landscape {
        alphas,
        betas,
        loss,
        rel_l2: rel,
    })
}
