//! Fully connected networks with sine or tanh activation, evaluated with
//! second-order spatial jets.
//!
//! The forward pass propagates, per collocation point, the channels
//! `(value, d gradient entries, d(d+1)/2 packed Hessian entries)` through
//! every layer. A batch of points is laid out as a `(n_points * channels) x
//! width` matrix so each affine layer is a single GEMM. The reverse pass
//! differentiates scalar functionals of the output jets with respect to the
//! trainable parameters by accumulating cotangents back through the same
//! stored computation.
//!
//! Optional pieces handled here:
//! - random Fourier feature embedding `(sin(Bx); cos(Bx))` with a frozen
//!   Gaussian matrix `B`,
//! - hard-boundary wrapping `lift(x) + mask(x) * U(x; theta)` where the mask
//!   vanishes on the boundary and the lift matches the boundary data.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, ArrayViewMut2};
use rand::distr::Uniform;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

use crate::error::{Error, Result};
use crate::jet::{tri_index, tri_len, Jet2, JetField};

/// Hidden-layer activation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Sine,
    Tanh,
}

impl Activation {
    /// Value and first derivative at `v`.
    #[inline]
    fn eval(self, v: f64) -> (f64, f64) {
        match self {
            Activation::Sine => {
                let (s, c) = v.sin_cos();
                (s, c)
            }
            Activation::Tanh => {
                let t = v.tanh();
                (t, 1.0 - t * t)
            }
        }
    }

    /// Second derivative from the stored `(value, first derivative)` pair.
    #[inline]
    fn second(self, s0: f64, s1: f64) -> f64 {
        match self {
            Activation::Sine => -s0,
            Activation::Tanh => -2.0 * s0 * s1,
        }
    }

    /// Third derivative from the stored `(value, first derivative)` pair.
    #[inline]
    fn third(self, s0: f64, s1: f64) -> f64 {
        match self {
            Activation::Sine => -s1,
            Activation::Tanh => s1 * (6.0 * s0 * s0 - 2.0),
        }
    }
}

/// Random Fourier feature embedding settings. The frequency matrix is
/// sampled once at network construction and is not trainable.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RffConfig {
    /// Number of frequencies; the embedding produces `2m` features.
    pub m: usize,
    /// Standard deviation of the Gaussian frequency entries.
    pub sigma: f64,
    /// Seed for sampling the frequency matrix.
    pub seed: u64,
}

/// Hard-boundary ansatz `lift + mask * U`: `lift` matches the Dirichlet data
/// on the boundary and `mask` vanishes there.
#[derive(Clone, Debug)]
pub struct AnsatzConfig {
    pub lift: JetField,
    pub mask: JetField,
}

/// Architecture description.
#[derive(Clone, Debug)]
pub struct NetworkConfig {
    pub input_dim: usize,
    /// Number of hidden layers.
    pub depth: usize,
    /// Nodes per hidden layer.
    pub width: usize,
    pub activation: Activation,
    pub rff: Option<RffConfig>,
    pub ansatz: Option<AnsatzConfig>,
}

impl NetworkConfig {
    pub fn new(input_dim: usize, depth: usize, width: usize, activation: Activation) -> Self {
        NetworkConfig {
            input_dim,
            depth,
            width,
            activation,
            rff: None,
            ansatz: None,
        }
    }

    pub fn with_rff(mut self, rff: RffConfig) -> Self {
        self.rff = Some(rff);
        self
    }

    pub fn with_ansatz(mut self, lift: JetField, mask: JetField) -> Self {
        self.ansatz = Some(AnsatzConfig { lift, mask });
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim < 2 || self.input_dim > 3 {
            return Err(Error::config("input dimension must be 2 or 3"));
        }
        if self.depth < 1 {
            return Err(Error::config("at least one hidden layer is required"));
        }
        if self.width < 1 {
            return Err(Error::config("hidden layer width must be positive"));
        }
        if let Some(rff) = &self.rff {
            if rff.m == 0 {
                return Err(Error::config("rff feature count must be positive"));
            }
            if !(rff.sigma > 0.0) {
                return Err(Error::config("rff sigma must be positive"));
            }
        }
        if let Some(ansatz) = &self.ansatz {
            if ansatz.lift.dim() != self.input_dim || ansatz.mask.dim() != self.input_dim {
                return Err(Error::config("ansatz field dimension mismatch"));
            }
        }
        Ok(())
    }

    /// Width of the first affine layer's input: the raw coordinates or the
    /// `2m` Fourier features.
    pub fn first_layer_inputs(&self) -> usize {
        match &self.rff {
            Some(rff) => 2 * rff.m,
            None => self.input_dim,
        }
    }

    /// `(fan_in, fan_out)` of every affine layer: hidden layers, then the
    /// linear output layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.depth + 1);
        dims.push((self.first_layer_inputs(), self.width));
        for _ in 1..self.depth {
            dims.push((self.width, self.width));
        }
        dims.push((self.width, 1));
        dims
    }

    pub fn layout(&self) -> ParamLayout {
        let mut blocks = Vec::new();
        let mut offset = 0;
        for (fan_in, fan_out) in self.layer_dims() {
            let weights = offset;
            offset += fan_in * fan_out;
            let bias = offset;
            offset += fan_out;
            blocks.push(LayerBlock {
                weights,
                rows: fan_out,
                cols: fan_in,
                bias,
            });
        }
        ParamLayout {
            blocks,
            total: offset,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }
}

/// One affine layer's slice of the flat parameter vector: a row-major
/// `rows x cols` weight matrix followed by a `rows`-vector of biases.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerBlock {
    pub weights: usize,
    pub rows: usize,
    pub cols: usize,
    pub bias: usize,
}

impl LayerBlock {
    pub fn weight_len(&self) -> usize {
        self.rows * self.cols
    }

    /// Half-open range of this block in the flat vector.
    pub fn span(&self) -> std::ops::Range<usize> {
        self.weights..self.bias + self.rows
    }
}

/// Offsets of every layer block; partitions the flat array exactly.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamLayout {
    pub blocks: Vec<LayerBlock>,
    pub total: usize,
}

/// The flat trainable parameter array together with its layout table.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub layout: ParamLayout,
}

impl ParamVector {
    pub fn zeros(layout: ParamLayout) -> Self {
        ParamVector {
            values: vec![0.0; layout.total],
            layout,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn fill(&mut self, value: f64) {
        self.values.iter_mut().for_each(|v| *v = value);
    }

    fn weight_view(&self, block: &LayerBlock) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape(
            (block.rows, block.cols),
            &self.values[block.weights..block.weights + block.weight_len()],
        )
        .expect("layout invariant")
    }

    fn bias_slice(&self, block: &LayerBlock) -> &[f64] {
        &self.values[block.bias..block.bias + block.rows]
    }
}

/// Glorot-uniform initialization: weights uniform on
/// `[-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))]`, biases zero.
/// Deterministic for a fixed seed.
pub fn init_glorot(config: &NetworkConfig, seed: u64) -> Result<ParamVector> {
    config.validate()?;
    let layout = config.layout();
    let mut params = ParamVector::zeros(layout);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for block in params.layout.blocks.clone() {
        let bound = (6.0 / (block.rows + block.cols) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("valid uniform bounds");
        for w in &mut params.values[block.weights..block.weights + block.weight_len()] {
            *w = rng.sample(dist);
        }
        // biases stay zero
    }
    Ok(params)
}

/// Which jet channels to propagate. Deep Ritz losses need only first
/// derivatives; PINN residuals need the full Hessian.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum DerivOrder {
    Value,
    Gradient,
    Hessian,
}

impl DerivOrder {
    /// Channels per point: value, gradient entries, packed Hessian entries.
    pub fn channels(self, dim: usize) -> usize {
        match self {
            DerivOrder::Value => 1,
            DerivOrder::Gradient => 1 + dim,
            DerivOrder::Hessian => 1 + dim + tri_len(dim),
        }
    }
}

/// Applies the Fourier feature map `(sin(Bx); cos(Bx))` to a single point.
pub fn rff_embed(b: &Array2<f64>, x: &[f64]) -> Result<Vec<f64>> {
    if b.ncols() != x.len() {
        return Err(Error::config(format!(
            "rff matrix has {} columns but the point has dimension {}",
            b.ncols(),
            x.len()
        )));
    }
    let m = b.nrows();
    let mut out = vec![0.0; 2 * m];
    for j in 0..m {
        let arg: f64 = (0..x.len()).map(|i| b[[j, i]] * x[i]).sum();
        let (s, c) = arg.sin_cos();
        out[j] = s;
        out[m + j] = c;
    }
    Ok(out)
}

/// Stored intermediate state of one batched jet forward pass, reused across
/// epochs to avoid reallocation.
#[derive(Debug, Default)]
pub struct Tape {
    n: usize,
    channels: usize,
    dim: usize,
    /// Embedded input jets, `(n * channels) x first_layer_inputs`.
    z0: Array2<f64>,
    /// Pre-activation jets per hidden layer, `(n * channels) x width`.
    pre: Vec<Array2<f64>>,
    /// Post-activation jets per hidden layer, `(n * channels) x width`.
    post: Vec<Array2<f64>>,
    /// Activation values per hidden layer, `n x width`.
    act0: Vec<Array2<f64>>,
    /// Activation first derivatives per hidden layer, `n x width`.
    act1: Vec<Array2<f64>>,
    /// Mask jets per point when an ansatz is configured, `n x channels`.
    mask_jets: Option<Array2<f64>>,
    /// Final (ansatz-wrapped) output jets, `n x channels`.
    out: Array2<f64>,
    /// Ping-pong cotangent buffers for the reverse pass.
    scratch_a: Array2<f64>,
    scratch_b: Array2<f64>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Output jets of the last forward pass, one row of channels per point.
    pub fn output(&self) -> ArrayView2<'_, f64> {
        self.out.view()
    }

    pub fn n_points(&self) -> usize {
        self.n
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Jet of point `p` from the last forward pass (missing channels zero).
    pub fn jet(&self, p: usize) -> Jet2 {
        jet_from_row(
            self.out.row(p).to_slice().expect("row-major"),
            self.dim,
            self.channels,
        )
    }
}

fn ensure_shape(buf: &mut Array2<f64>, rows: usize, cols: usize) {
    if buf.dim() != (rows, cols) {
        *buf = Array2::zeros((rows, cols));
    }
}

/// A network ready for evaluation: validated config, parameter layout, and
/// the frozen Fourier feature matrix when configured.
#[derive(Clone, Debug)]
pub struct Network {
    config: NetworkConfig,
    layout: ParamLayout,
    rff_b: Option<Array2<f64>>,
}

impl Network {
    pub fn new(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let rff_b = match &config.rff {
            Some(rff) => {
                let mut rng = ChaCha8Rng::seed_from_u64(rff.seed);
                let normal = Normal::new(0.0, rff.sigma).expect("valid sigma");
                let mut b = Array2::zeros((rff.m, config.input_dim));
                for v in b.iter_mut() {
                    *v = rng.sample(normal);
                }
                Some(b)
            }
            None => None,
        };
        let layout = config.layout();
        Ok(Network {
            config,
            layout,
            rff_b,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn param_count(&self) -> usize {
        self.layout.total
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    /// The frozen Fourier feature matrix, when the embedding is configured.
    pub fn rff_matrix(&self) -> Option<&Array2<f64>> {
        self.rff_b.as_ref()
    }

    pub fn init_glorot(&self, seed: u64) -> ParamVector {
        init_glorot(&self.config, seed).expect("config validated at construction")
    }

    fn check_params(&self, params: &ParamVector) -> Result<()> {
        if params.len() != self.layout.total {
            return Err(Error::config(format!(
                "parameter vector has {} entries, expected {}",
                params.len(),
                self.layout.total
            )));
        }
        Ok(())
    }

    /// Network value at a single point.
    pub fn forward(&self, params: &ParamVector, x: &[f64]) -> Result<f64> {
        Ok(self.forward_point(params, x, DerivOrder::Value)?.value)
    }

    /// Value, gradient, and Hessian at a single point.
    pub fn forward_jet(&self, params: &ParamVector, x: &[f64]) -> Result<Jet2> {
        self.forward_point(params, x, DerivOrder::Hessian)
    }

    fn forward_point(&self, params: &ParamVector, x: &[f64], order: DerivOrder) -> Result<Jet2> {
        let d = self.config.input_dim;
        if x.len() != d {
            return Err(Error::config("point dimension mismatch"));
        }
        for v in x {
            if !v.is_finite() {
                return Err(Error::non_finite("input point"));
            }
        }
        let points = Array2::from_shape_vec((1, d), x.to_vec()).expect("shape");
        let mut tape = Tape::new();
        self.forward_tape(params, points.view(), order, &mut tape)?;
        Ok(tape.jet(0))
    }

    /// Batched jet evaluation without keeping the tape.
    pub fn forward_jets(
        &self,
        params: &ParamVector,
        points: ArrayView2<'_, f64>,
        order: DerivOrder,
    ) -> Result<Array2<f64>> {
        let mut tape = Tape::new();
        self.forward_tape(params, points, order, &mut tape)?;
        Ok(tape.out)
    }

    /// Batched jet evaluation storing everything needed by
    /// [`Network::backward`]. After the call, `tape.output()` holds one row
    /// of jet channels per point, ansatz-wrapped when configured.
    pub fn forward_tape(
        &self,
        params: &ParamVector,
        points: ArrayView2<'_, f64>,
        order: DerivOrder,
        tape: &mut Tape,
    ) -> Result<()> {
        self.check_params(params)?;
        let d = self.config.input_dim;
        if points.ncols() != d {
            return Err(Error::config("point array has wrong dimension"));
        }
        let n = points.nrows();
        if n == 0 {
            return Err(Error::config("empty point set"));
        }
        let c = order.channels(d);
        let rows = n * c;
        tape.n = n;
        tape.channels = c;
        tape.dim = d;

        self.embed(points, c, &mut tape.z0);

        let depth = self.config.depth;
        tape.pre.resize_with(depth, || Array2::zeros((0, 0)));
        tape.post.resize_with(depth, || Array2::zeros((0, 0)));
        tape.act0.resize_with(depth, || Array2::zeros((0, 0)));
        tape.act1.resize_with(depth, || Array2::zeros((0, 0)));

        for l in 0..depth {
            let block = self.layout.blocks[l];
            let width = block.rows;
            ensure_shape(&mut tape.pre[l], rows, width);
            {
                let w = params.weight_view(&block);
                let pre = &mut tape.pre[l];
                if l == 0 {
                    general_mat_mul(1.0, &tape.z0, &w.t(), 0.0, pre);
                } else {
                    general_mat_mul(1.0, &tape.post[l - 1], &w.t(), 0.0, pre);
                }
            }
            // bias feeds only the value channel
            let bias = params.bias_slice(&block).to_vec();
            let pre = &mut tape.pre[l];
            for p in 0..n {
                let row = p * c;
                for (u, b) in bias.iter().enumerate() {
                    pre[[row, u]] += b;
                }
            }
            ensure_shape(&mut tape.post[l], rows, width);
            ensure_shape(&mut tape.act0[l], n, width);
            ensure_shape(&mut tape.act1[l], n, width);
            self.activation_forward(
                n,
                c,
                width,
                &tape.pre[l],
                &mut tape.post[l],
                &mut tape.act0[l],
                &mut tape.act1[l],
            );
        }

        // linear output layer
        let out_block = self.layout.blocks[depth];
        let w_out = &params.values[out_block.weights..out_block.weights + out_block.weight_len()];
        let b_out = params.values[out_block.bias];
        ensure_shape(&mut tape.out, n, c);
        {
            let last = &tape.post[depth - 1];
            let last_s = last.as_slice().expect("row-major");
            let width = self.config.width;
            let out_s = tape.out.as_slice_mut().expect("row-major");
            for r in 0..rows {
                let mut acc = 0.0;
                let row = &last_s[r * width..(r + 1) * width];
                for (u, z) in row.iter().enumerate() {
                    acc += w_out[u] * z;
                }
                out_s[r] = acc;
            }
            for p in 0..n {
                out_s[p * c] += b_out;
            }
        }

        // hard-boundary wrapping
        if let Some(ansatz) = &self.config.ansatz {
            let mask_jets = tape.mask_jets.get_or_insert_with(|| Array2::zeros((0, 0)));
            ensure_shape(mask_jets, n, c);
            for p in 0..n {
                let x = points.row(p);
                let x = x.to_slice().expect("row-major");
                let lift = ansatz.lift.jet(x);
                let mask = ansatz.mask.jet(x);
                let raw = jet_from_row(tape.out.row(p).to_slice().expect("row-major"), d, c);
                let wrapped = lift + mask * raw;
                write_jet_row(
                    &mask,
                    mask_jets.row_mut(p).into_slice().expect("row-major"),
                    d,
                    c,
                );
                write_jet_row(
                    &wrapped,
                    tape.out.row_mut(p).into_slice().expect("row-major"),
                    d,
                    c,
                );
            }
        } else {
            tape.mask_jets = None;
        }

        if !tape.out.iter().all(|v| v.is_finite()) {
            return Err(Error::non_finite(self.locate_non_finite(tape)));
        }
        Ok(())
    }

    /// Names the first layer whose stored jets contain a non-finite entry.
    fn locate_non_finite(&self, tape: &Tape) -> String {
        if !tape.z0.iter().all(|v| v.is_finite()) {
            return "input embedding".to_string();
        }
        for (l, pre) in tape.pre.iter().enumerate() {
            if !pre.iter().all(|v| v.is_finite()) {
                return format!("hidden layer {l}");
            }
        }
        if tape.mask_jets.is_some() {
            "ansatz wrapping".to_string()
        } else {
            "output layer".to_string()
        }
    }

    fn activation_forward(
        &self,
        n: usize,
        c: usize,
        width: usize,
        pre: &Array2<f64>,
        post: &mut Array2<f64>,
        act0: &mut Array2<f64>,
        act1: &mut Array2<f64>,
    ) {
        let d = self.config.input_dim;
        let act = self.config.activation;
        let pre_s = pre.as_slice().expect("row-major");
        let post_s = post.as_slice_mut().expect("row-major");
        let act0_s = act0.as_slice_mut().expect("row-major");
        let act1_s = act1.as_slice_mut().expect("row-major");
        let t = tri_len(d);
        let pairs = packed_pairs(d);
        for p in 0..n {
            let base = p * c * width;
            let abase = p * width;
            for u in 0..width {
                let (s0, s1) = act.eval(pre_s[base + u]);
                act0_s[abase + u] = s0;
                act1_s[abase + u] = s1;
                post_s[base + u] = s0;
            }
            if c > 1 {
                for i in 0..d {
                    let row = base + (1 + i) * width;
                    for u in 0..width {
                        post_s[row + u] = act1_s[abase + u] * pre_s[row + u];
                    }
                }
            }
            if c > 1 + d {
                for (k, &(i, j)) in pairs.iter().take(t).enumerate() {
                    let row = base + (1 + d + k) * width;
                    let gi = base + (1 + i) * width;
                    let gj = base + (1 + j) * width;
                    for u in 0..width {
                        let s0 = act0_s[abase + u];
                        let s1 = act1_s[abase + u];
                        let s2 = act.second(s0, s1);
                        post_s[row + u] =
                            s1 * pre_s[row + u] + s2 * pre_s[gi + u] * pre_s[gj + u];
                    }
                }
            }
        }
    }

    /// Accumulates `d(sum_p seeds[p] . out_jets[p]) / d(params)` into `grad`.
    ///
    /// `seeds` holds one cotangent row per point with the same channel layout
    /// as the forward output; `tape` must come from a matching
    /// [`Network::forward_tape`] call with the same parameters.
    pub fn backward(
        &self,
        params: &ParamVector,
        tape: &mut Tape,
        seeds: ArrayView2<'_, f64>,
        grad: &mut [f64],
    ) -> Result<()> {
        self.check_params(params)?;
        if grad.len() != self.layout.total {
            return Err(Error::config("gradient buffer has wrong length"));
        }
        let n = tape.n;
        let c = tape.channels;
        let d = self.config.input_dim;
        if seeds.dim() != (n, c) {
            return Err(Error::config("seed array does not match the tape"));
        }
        let rows = n * c;
        let depth = self.config.depth;
        let width = self.config.width;

        // cotangent on the raw network output (before ansatz wrapping)
        ensure_shape(&mut tape.scratch_a, n, c);
        match &tape.mask_jets {
            Some(mask_jets) => {
                let pairs = packed_pairs(d);
                let t = tri_len(d);
                for p in 0..n {
                    let seed = seeds.row(p);
                    let mask = mask_jets.row(p);
                    let mut out = tape.scratch_a.row_mut(p);
                    let gv = mask[0];
                    // value channel
                    let mut acc = seed[0] * gv;
                    if c > 1 {
                        for i in 0..d {
                            acc += seed[1 + i] * mask[1 + i];
                        }
                    }
                    if c > 1 + d {
                        for k in 0..t {
                            acc += seed[1 + d + k] * mask[1 + d + k];
                        }
                    }
                    out[0] = acc;
                    // gradient channels
                    if c > 1 {
                        for i in 0..d {
                            out[1 + i] = seed[1 + i] * gv;
                        }
                        if c > 1 + d {
                            for (k, &(i, j)) in pairs.iter().take(t).enumerate() {
                                let sh = seed[1 + d + k];
                                out[1 + j] += sh * mask[1 + i];
                                out[1 + i] += sh * mask[1 + j];
                            }
                        }
                    }
                    // Hessian channels
                    if c > 1 + d {
                        for k in 0..t {
                            out[1 + d + k] = seed[1 + d + k] * gv;
                        }
                    }
                }
            }
            None => {
                tape.scratch_a.assign(&seeds);
            }
        }

        // output layer: cot is (rows) in flattened point-channel order
        let out_block = self.layout.blocks[depth];
        let w_out =
            params.values[out_block.weights..out_block.weights + out_block.weight_len()].to_vec();
        {
            let cot = tape.scratch_a.as_slice().expect("row-major");
            let last = tape.post[depth - 1].as_slice().expect("row-major");
            let w_grad = &mut grad[out_block.weights..out_block.weights + width];
            for r in 0..rows {
                let cr = cot[r];
                if cr != 0.0 {
                    let row = &last[r * width..(r + 1) * width];
                    for (u, z) in row.iter().enumerate() {
                        w_grad[u] += cr * z;
                    }
                }
            }
            let mut b_acc = 0.0;
            for p in 0..n {
                b_acc += cot[p * c];
            }
            grad[out_block.bias] += b_acc;
        }

        // cotangent entering the last hidden layer's outputs
        ensure_shape(&mut tape.scratch_b, rows, width);
        {
            let cot = tape.scratch_a.as_slice().expect("row-major");
            let zbar = tape.scratch_b.as_slice_mut().expect("row-major");
            for r in 0..rows {
                let cr = cot[r];
                let row = &mut zbar[r * width..(r + 1) * width];
                for (u, w) in w_out.iter().enumerate() {
                    row[u] = cr * w;
                }
            }
        }
        std::mem::swap(&mut tape.scratch_a, &mut tape.scratch_b);

        for l in (0..depth).rev() {
            let block = self.layout.blocks[l];
            // in place: post-activation cotangent -> pre-activation cotangent
            self.activation_backward(
                n,
                c,
                block.rows,
                &tape.pre[l],
                &tape.act0[l],
                &tape.act1[l],
                &mut tape.scratch_a,
            );
            {
                let input = if l == 0 {
                    tape.z0.view()
                } else {
                    tape.post[l - 1].view()
                };
                let mut w_grad = ArrayViewMut2::from_shape(
                    (block.rows, block.cols),
                    &mut grad[block.weights..block.weights + block.weight_len()],
                )
                .expect("layout invariant");
                general_mat_mul(1.0, &tape.scratch_a.t(), &input, 1.0, &mut w_grad);
            }
            {
                let abar = tape.scratch_a.as_slice().expect("row-major");
                let b_grad = &mut grad[block.bias..block.bias + block.rows];
                for p in 0..n {
                    let row = &abar[p * c * block.rows..p * c * block.rows + block.rows];
                    for (u, v) in row.iter().enumerate() {
                        b_grad[u] += v;
                    }
                }
            }
            if l > 0 {
                let w = params.weight_view(&block);
                ensure_shape(&mut tape.scratch_b, rows, block.cols);
                general_mat_mul(1.0, &tape.scratch_a, &w, 0.0, &mut tape.scratch_b);
                std::mem::swap(&mut tape.scratch_a, &mut tape.scratch_b);
            }
        }
        Ok(())
    }

    fn activation_backward(
        &self,
        n: usize,
        c: usize,
        width: usize,
        pre: &Array2<f64>,
        act0: &Array2<f64>,
        act1: &Array2<f64>,
        cot: &mut Array2<f64>,
    ) {
        let d = self.config.input_dim;
        let act = self.config.activation;
        let t = tri_len(d);
        let pairs = packed_pairs(d);
        let pre_s = pre.as_slice().expect("row-major");
        let act0_s = act0.as_slice().expect("row-major");
        let act1_s = act1.as_slice().expect("row-major");
        let cot_s = cot.as_slice_mut().expect("row-major");
        for p in 0..n {
            let base = p * c * width;
            let abase = p * width;
            for u in 0..width {
                let s0 = act0_s[abase + u];
                let s1 = act1_s[abase + u];
                if c == 1 {
                    cot_s[base + u] *= s1;
                    continue;
                }
                let s2 = act.second(s0, s1);
                let zv = cot_s[base + u];
                let mut av = zv * s1;
                for i in 0..d {
                    let gi = pre_s[base + (1 + i) * width + u];
                    av += s2 * cot_s[base + (1 + i) * width + u] * gi;
                }
                if c > 1 + d {
                    let s3 = act.third(s0, s1);
                    for (k, &(i, j)) in pairs.iter().take(t).enumerate() {
                        let zh = cot_s[base + (1 + d + k) * width + u];
                        if zh != 0.0 {
                            let hk = pre_s[base + (1 + d + k) * width + u];
                            let gi = pre_s[base + (1 + i) * width + u];
                            let gj = pre_s[base + (1 + j) * width + u];
                            av += zh * (s2 * hk + s3 * gi * gj);
                        }
                    }
                }
                cot_s[base + u] = av;
                // gradient channels (read Hessian cotangents before they are
                // overwritten below)
                if c > 1 + d {
                    for i in 0..d {
                        let zi = base + (1 + i) * width + u;
                        let mut ag = cot_s[zi] * s1;
                        for (k, &(ik, jk)) in pairs.iter().take(t).enumerate() {
                            let zh = cot_s[base + (1 + d + k) * width + u];
                            if zh != 0.0 {
                                if ik == i {
                                    ag += s2 * zh * pre_s[base + (1 + jk) * width + u];
                                }
                                if jk == i {
                                    ag += s2 * zh * pre_s[base + (1 + ik) * width + u];
                                }
                            }
                        }
                        cot_s[zi] = ag;
                    }
                    for k in 0..t {
                        let zk = base + (1 + d + k) * width + u;
                        cot_s[zk] *= s1;
                    }
                } else {
                    for i in 0..d {
                        let zi = base + (1 + i) * width + u;
                        cot_s[zi] *= s1;
                    }
                }
            }
        }
    }

    fn embed(&self, points: ArrayView2<'_, f64>, c: usize, z0: &mut Array2<f64>) {
        let d = self.config.input_dim;
        let n = points.nrows();
        let f0 = self.config.first_layer_inputs();
        ensure_shape(z0, n * c, f0);
        z0.fill(0.0);
        match &self.rff_b {
            None => {
                for p in 0..n {
                    let base = p * c;
                    for j in 0..d {
                        z0[[base, j]] = points[[p, j]];
                    }
                    if c > 1 {
                        for i in 0..d {
                            z0[[base + 1 + i, i]] = 1.0;
                        }
                    }
                    // second derivatives of the identity embedding are zero
                }
            }
            Some(b) => {
                let m = b.nrows();
                for p in 0..n {
                    let base = p * c;
                    for j in 0..m {
                        let arg: f64 = (0..d).map(|i| b[[j, i]] * points[[p, i]]).sum();
                        let (s, co) = arg.sin_cos();
                        z0[[base, j]] = s;
                        z0[[base, m + j]] = co;
                        if c > 1 {
                            for i in 0..d {
                                z0[[base + 1 + i, j]] = co * b[[j, i]];
                                z0[[base + 1 + i, m + j]] = -s * b[[j, i]];
                            }
                        }
                        if c > 1 + d {
                            for i in 0..d {
                                for i2 in i..d {
                                    let k = tri_index(i, i2, d);
                                    let bij = b[[j, i]] * b[[j, i2]];
                                    z0[[base + 1 + d + k, j]] = -s * bij;
                                    z0[[base + 1 + d + k, m + j]] = -co * bij;
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Evaluates a scalar functional of the output jets and its exact
    /// gradient with respect to every parameter, by reverse accumulation
    /// over the jet-augmented forward computation.
    pub fn grad_params(
        &self,
        params: &ParamVector,
        functional: &dyn JetFunctional,
    ) -> Result<(f64, ParamVector)> {
        let mut tape = Tape::new();
        self.forward_tape(params, functional.points(), functional.order(), &mut tape)?;
        let (value, seeds) = functional.value_and_seeds(tape.output());
        let mut grad = ParamVector::zeros(self.layout.clone());
        self.backward(params, &mut tape, seeds.view(), &mut grad.values)?;
        if !grad.values.iter().all(|g| g.is_finite()) {
            return Err(Error::non_finite("parameter gradient"));
        }
        Ok((value, grad))
    }
}

/// A scalar functional expressed as a smooth reduction of network jets at a
/// fixed set of points.
pub trait JetFunctional {
    fn order(&self) -> DerivOrder;
    fn points(&self) -> ArrayView2<'_, f64>;
    /// The functional value and its partial derivatives with respect to each
    /// jet channel of each point (same `n x channels` layout as `jets`).
    fn value_and_seeds(&self, jets: ArrayView2<'_, f64>) -> (f64, Array2<f64>);
}

/// Packed upper-triangle index pairs for dimensions up to 3.
fn packed_pairs(d: usize) -> &'static [(usize, usize)] {
    const PAIRS2: &[(usize, usize)] = &[(0, 0), (0, 1), (1, 1)];
    const PAIRS3: &[(usize, usize)] = &[(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];
    match d {
        2 => PAIRS2,
        3 => PAIRS3,
        _ => panic!("unsupported dimension"),
    }
}

/// Reads a jet from a row of channel values, zero-filling channels that were
/// not propagated.
pub fn jet_from_row(row: &[f64], dim: usize, channels: usize) -> Jet2 {
    let mut grad = [0.0; 3];
    let mut hess = [0.0; 6];
    if channels > 1 {
        grad[..dim].copy_from_slice(&row[1..1 + dim]);
    }
    if channels > 1 + dim {
        let t = tri_len(dim);
        hess[..t].copy_from_slice(&row[1 + dim..1 + dim + t]);
    }
    Jet2::from_parts(dim, row[0], &grad[..dim], &hess[..tri_len(dim)])
}

/// Writes the first `channels` jet channels into a row.
pub fn write_jet_row(jet: &Jet2, row: &mut [f64], dim: usize, channels: usize) {
    row[0] = jet.value;
    if channels > 1 {
        row[1..1 + dim].copy_from_slice(jet.gradient());
    }
    if channels > 1 + dim {
        let t = tri_len(dim);
        row[1 + dim..1 + dim + t].copy_from_slice(jet.hess_packed());
    }
}
