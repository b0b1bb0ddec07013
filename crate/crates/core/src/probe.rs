//! Camera-metadata conditioning at desk scale.
//!
//! Question side: capture context is serialized into the question text.
//! Visual side: a small stack of dense blocks where selected layers add a
//! learned projection of the normalized metadata to the hidden state,
//! `h ← Block(h) + g(m)`. The stack carries its own backward pass so the
//! mechanism can be checked against finite differences.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::capture::CameraMetadata;
use crate::{Error, Result};

/// Reference point of the log2 metadata normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationRefs {
    pub iso: f64,
    pub exposure_time: f64,
    pub aperture: f64,
}

impl Default for NormalizationRefs {
    fn default() -> Self {
        NormalizationRefs { iso: 100.0, exposure_time: 1.0 / 60.0, aperture: 4.0 }
    }
}

/// `(log2(iso/100), log2(t/(1/60 s)), log2(N/4))` under the default refs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetaVector {
    pub values: [f64; 3],
}

impl MetaVector {
    pub fn from_metadata(m: &CameraMetadata, refs: &NormalizationRefs) -> Result<MetaVector> {
        m.validate()?;
        let values = [
            libm::log2(m.iso / refs.iso),
            libm::log2(m.exposure_time / refs.exposure_time),
            libm::log2(m.aperture / refs.aperture),
        ];
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("metadata does not normalize to finite values".into()));
        }
        Ok(MetaVector { values })
    }
}

/// `x` with `digits` significant digits, fixed notation.
pub fn format_significant(x: f64, digits: usize) -> String {
    let digits = digits.max(1);
    if x == 0.0 || !x.is_finite() {
        return format!("{:.*}", digits - 1, x);
    }
    let mut exp = libm::floor(libm::log10(libm::fabs(x))) as i32;
    let scaled = libm::round(libm::fabs(x) / libm::pow(10.0, (exp - digits as i32 + 1) as f64));
    if scaled >= libm::pow(10.0, digits as f64) {
        exp += 1;
    }
    let decimals = (digits as i32 - 1 - exp).max(0) as usize;
    format!("{:.*}", decimals, x)
}

/// Appends ` [CAMERA iso=<int> exposure=<6 sig. digits>s aperture=f/<2 dp>]`.
/// With conditioning disabled the question is returned unchanged.
pub fn serialize_metadata_question(question: &str, m: &CameraMetadata, enabled: bool) -> String {
    if !enabled {
        return question.into();
    }
    format!(
        "{question} [CAMERA iso={} exposure={}s aperture=f/{:.2}]",
        libm::round(m.iso) as i64,
        format_significant(m.exposure_time, 6),
        m.aperture
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => libm::tanh(x),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output.
    fn slope_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

/// `h ↦ act(W h + b)`, `W` row-major `d × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

/// `m ↦ P m + c`, `P` row-major `d × 3`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Projection {
    pub fn zeros(d: usize) -> Projection {
        Projection { weight: vec![0.0; d * 3], bias: vec![0.0; d] }
    }

    pub fn apply(&self, m: &MetaVector) -> Vec<f64> {
        self.bias
            .iter()
            .enumerate()
            .map(|(i, b)| b + (0..3).map(|k| self.weight[i * 3 + k] * m.values[k]).sum::<f64>())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeStack {
    pub hidden_dim: usize,
    pub blocks: Vec<Block>,
    /// One shared projection, or one per layer.
    pub projections: Vec<Projection>,
    /// `inject[l]` adds `g(m)` after block `l`.
    pub inject: Vec<bool>,
}

/// Default injection set: the last quarter of the layers (at least one).
pub fn default_inject_layers(depth: usize) -> Vec<usize> {
    let count = depth.div_ceil(4).max(1).min(depth);
    (depth - count..depth).collect()
}

impl ProbeStack {
    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.hidden_dim;
        let l = self.blocks.len();
        if d == 0 || l == 0 {
            return Err(Error::InvalidArgument("probe needs depth >= 1 and hidden_dim >= 1".into()));
        }
        if self.inject.len() != l {
            return Err(Error::InvalidArgument("inject mask length must equal depth".into()));
        }
        if !(self.projections.len() == 1 || self.projections.len() == l) {
            return Err(Error::InvalidArgument("expected one shared projection or one per layer".into()));
        }
        let blocks_ok = self.blocks.iter().all(|b| b.weight.len() == d * d && b.bias.len() == d);
        let proj_ok = self.projections.iter().all(|p| p.weight.len() == d * 3 && p.bias.len() == d);
        if !(blocks_ok && proj_ok) {
            return Err(Error::DimensionMismatch { expected: (d, d), found: (0, 0) });
        }
        let finite = self.blocks.iter().flat_map(|b| b.weight.iter().chain(&b.bias)).chain(self.projections.iter().flat_map(|p| p.weight.iter().chain(&p.bias))).all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidArgument("probe weights must be finite".into()));
        }
        Ok(())
    }

    pub fn inject_layers(&self) -> Vec<usize> {
        self.inject.iter().enumerate().filter(|(_, &on)| on).map(|(i, _)| i).collect()
    }

    pub fn set_inject_layers(&mut self, layers: &[usize]) -> Result<()> {
        let mut mask = vec![false; self.depth()];
        for &l in layers {
            *mask.get_mut(l).ok_or_else(|| Error::InvalidArgument(format!("inject layer {l} out of range")))? = true;
        }
        self.inject = mask;
        Ok(())
    }

    pub fn projection_for(&self, layer: usize) -> &Projection {
        if self.projections.len() == 1 {
            &self.projections[0]
        } else {
            &self.projections[layer]
        }
    }

    /// Random stack with weights uniform in `±scale`.
    pub fn random(depth: usize, hidden_dim: usize, inject_layers: &[usize], per_layer_projection: bool, scale: f64, seed: u64) -> Result<ProbeStack> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-scale..=scale)).collect() };
        let blocks = (0..depth)
            .map(|_| Block { weight: draw(hidden_dim * hidden_dim), bias: draw(hidden_dim), activation: Activation::Tanh })
            .collect();
        let n_proj = if per_layer_projection { depth } else { 1 };
        let projections = (0..n_proj).map(|_| Projection { weight: draw(hidden_dim * 3), bias: draw(hidden_dim) }).collect();
        let mut stack = ProbeStack { hidden_dim, blocks, projections, inject: vec![false; depth] };
        stack.set_inject_layers(inject_layers)?;
        stack.validate()?;
        Ok(stack)
    }

    fn parameter_count(&self) -> usize {
        self.blocks.iter().map(|b| b.weight.len() + b.bias.len()).sum::<usize>()
            + self.projections.iter().map(|p| p.weight.len() + p.bias.len()).sum::<usize>()
    }

    /// Parameter `i` in flattening order: per block `W` then `b`, then per
    /// projection `P` then `c`.
    fn parameter_mut(&mut self, mut i: usize) -> &mut f64 {
        for b in &mut self.blocks {
            if i < b.weight.len() {
                return &mut b.weight[i];
            }
            i -= b.weight.len();
            if i < b.bias.len() {
                return &mut b.bias[i];
            }
            i -= b.bias.len();
        }
        for p in &mut self.projections {
            if i < p.weight.len() {
                return &mut p.weight[i];
            }
            i -= p.weight.len();
            if i < p.bias.len() {
                return &mut p.bias[i];
            }
            i -= p.bias.len();
        }
        panic!("parameter index out of range")
    }
}

fn block_apply(b: &Block, h: &[f64]) -> Vec<f64> {
    let d = h.len();
    (0..d)
        .map(|i| {
            let a = b.bias[i] + (0..d).map(|j| b.weight[i * d + j] * h[j]).sum::<f64>();
            b.activation.apply(a)
        })
        .collect()
}

/// Hidden states `h^(0) .. h^(L)` and block outputs `u^(0) .. u^(L-1)`.
struct Trace {
    hidden: Vec<Vec<f64>>,
    block_out: Vec<Vec<f64>>,
}

fn run(stack: &ProbeStack, h0: &[f64], m: &MetaVector, inject: bool) -> Result<Trace> {
    stack.validate()?;
    if h0.len() != stack.hidden_dim {
        return Err(Error::DimensionMismatch { expected: (stack.hidden_dim, 1), found: (h0.len(), 1) });
    }
    let mut hidden = vec![h0.to_vec()];
    let mut block_out = Vec::with_capacity(stack.depth());
    for (l, b) in stack.blocks.iter().enumerate() {
        let u = block_apply(b, &hidden[l]);
        let mut next = u.clone();
        if inject && stack.inject[l] {
            for (x, g) in next.iter_mut().zip(stack.projection_for(l).apply(m)) {
                *x += g;
            }
        }
        block_out.push(u);
        hidden.push(next);
    }
    Ok(Trace { hidden, block_out })
}

/// Runs the stack. With `inject = false` no layer adds `g(m)`.
pub fn forward(stack: &ProbeStack, h0: &[f64], m: &MetaVector, inject: bool) -> Result<Vec<f64>> {
    Ok(run(stack, h0, m, inject)?.hidden.pop().expect("depth >= 1"))
}

/// `sum(out²)` of the conditioned stack.
pub fn loss(stack: &ProbeStack, h0: &[f64], m: &MetaVector) -> Result<f64> {
    Ok(forward(stack, h0, m, true)?.iter().map(|v| v * v).sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    /// Per block: `(dW, db)`.
    pub blocks: Vec<(Vec<f64>, Vec<f64>)>,
    /// Per projection: `(dP, dc)`.
    pub projections: Vec<(Vec<f64>, Vec<f64>)>,
    /// Projection gradient contributed by each layer's injection.
    pub projection_by_layer: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Gradients {
    /// Same flattening order as the stack parameters.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.blocks.iter().chain(&self.projections) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }
}

/// Analytic gradients of `sum(out²)` with injection enabled.
pub fn backward(stack: &ProbeStack, h0: &[f64], m: &MetaVector) -> Result<Gradients> {
    let trace = run(stack, h0, m, true)?;
    let d = stack.hidden_dim;
    let depth = stack.depth();
    let mut delta: Vec<f64> = trace.hidden[depth].iter().map(|v| 2.0 * v).collect();
    let mut blocks = vec![(vec![0.0; d * d], vec![0.0; d]); depth];
    let mut projections = vec![(vec![0.0; d * 3], vec![0.0; d]); stack.projections.len()];
    let mut by_layer = vec![(vec![0.0; d * 3], vec![0.0; d]); depth];
    for l in (0..depth).rev() {
        if stack.inject[l] {
            let (pw, pb) = &mut by_layer[l];
            for i in 0..d {
                for k in 0..3 {
                    pw[i * 3 + k] = delta[i] * m.values[k];
                }
                pb[i] = delta[i];
            }
            let slot = if stack.projections.len() == 1 { 0 } else { l };
            for (acc, v) in projections[slot].0.iter_mut().zip(&by_layer[l].0) {
                *acc += v;
            }
            for (acc, v) in projections[slot].1.iter_mut().zip(&by_layer[l].1) {
                *acc += v;
            }
        }
        let block = &stack.blocks[l];
        let pre: Vec<f64> = (0..d).map(|i| delta[i] * block.activation.slope_from_output(trace.block_out[l][i])).collect();
        let h = &trace.hidden[l];
        let (gw, gb) = &mut blocks[l];
        for i in 0..d {
            for j in 0..d {
                gw[i * d + j] = pre[i] * h[j];
            }
            gb[i] = pre[i];
        }
        delta = (0..d).map(|j| (0..d).map(|i| block.weight[i * d + j] * pre[i]).sum()).collect();
    }
    let grads = Gradients { blocks, projections, projection_by_layer: by_layer };
    if !grads.flatten().iter().all(|v| v.is_finite()) {
        return Err(Error::NonFiniteGradient);
    }
    Ok(grads)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Flattened index of the worst parameter.
    pub worst_parameter: usize,
    pub parameters: usize,
    pub eps: f64,
}

/// Compares [`backward`] with central differences of step `eps`; returns
/// `max |g_a − g_fd| / max(|g_a|, |g_fd|, 1e-12)` over every parameter.
pub fn grad_check(stack: &ProbeStack, h0: &[f64], m: &MetaVector, eps: f64) -> Result<GradCheckReport> {
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::InvalidArgument(format!("eps must be in [1e-7, 1e-3], got {eps}")));
    }
    let analytic = backward(stack, h0, m)?.flatten();
    let mut probe = stack.clone();
    let mut worst = (0.0f64, 0usize);
    for (i, &ga) in analytic.iter().enumerate() {
        let orig = *probe.parameter_mut(i);
        *probe.parameter_mut(i) = orig + eps;
        let up = loss(&probe, h0, m)?;
        *probe.parameter_mut(i) = orig - eps;
        let down = loss(&probe, h0, m)?;
        *probe.parameter_mut(i) = orig;
        let fd = (up - down) / (2.0 * eps);
        if !fd.is_finite() {
            return Err(Error::NonFiniteGradient);
        }
        let rel = libm::fabs(ga - fd) / libm::fabs(ga).max(libm::fabs(fd)).max(1e-12);
        if rel > worst.0 {
            worst = (rel, i);
        }
    }
    Ok(GradCheckReport { max_relative_error: worst.0, worst_parameter: worst.1, parameters: probe.parameter_count(), eps })
}

/// Probe configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    pub depth: usize,
    pub hidden_dim: usize,
    /// Defaults to the last quarter of the layers.
    #[serde(default)]
    pub inject_layers: Option<Vec<usize>>,
    pub seed: u64,
    #[serde(default)]
    pub per_layer_projection: bool,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_scale")]
    pub init_scale: f64,
}

fn default_eps() -> f64 {
    1e-5
}
fn default_scale() -> f64 {
    0.5
}

pub const GRAD_CHECK_THRESHOLD: f64 = 1e-4;

const ISO_STOPS: [f64; 8] = [50.0, 100.0, 200.0, 400.0, 800.0, 1600.0, 3200.0, 6400.0];
const APERTURES: [f64; 8] = [1.4, 1.8, 2.8, 4.0, 5.6, 8.0, 11.0, 16.0];

/// Random metadata drawn from realistic ISO, shutter and aperture ranges.
pub fn random_metadata(rng: &mut impl Rng) -> CameraMetadata {
    CameraMetadata {
        iso: ISO_STOPS[rng.random_range(0..ISO_STOPS.len())],
        exposure_time: 1.0 / rng.random_range(1u32..=8000) as f64,
        aperture: APERTURES[rng.random_range(0..APERTURES.len())],
        device_id: "probe".into(),
        scene_id: None,
        session_id: None,
    }
}

/// Outcome of [`condition_check`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConditionCheck {
    pub grad: GradCheckReport,
    /// Conditioned output with zeroed projections equals the plain output bit for bit.
    pub zero_projection_identity: bool,
    pub passed: bool,
}

/// Builds the configured random stack, draws an input and metadata from the
/// same seed, and runs the gradient and zero-projection checks.
pub fn condition_check(cfg: &ProbeConfig) -> Result<ConditionCheck> {
    let inject = cfg.inject_layers.clone().unwrap_or_else(|| default_inject_layers(cfg.depth));
    let stack = ProbeStack::random(cfg.depth, cfg.hidden_dim, &inject, cfg.per_layer_projection, cfg.init_scale, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9E37_79B9_7F4A_7C15);
    let h0: Vec<f64> = (0..cfg.hidden_dim).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let m = MetaVector::from_metadata(&random_metadata(&mut rng), &NormalizationRefs::default())?;
    let grad = grad_check(&stack, &h0, &m, cfg.eps)?;
    let mut zeroed = stack.clone();
    for p in &mut zeroed.projections {
        *p = Projection::zeros(cfg.hidden_dim);
    }
    let on = forward(&zeroed, &h0, &m, true)?;
    let off = forward(&zeroed, &h0, &m, false)?;
    let zero_projection_identity = on.iter().zip(&off).all(|(a, b)| a.to_bits() == b.to_bits());
    Ok(ConditionCheck { grad, zero_projection_identity, passed: grad.max_relative_error < GRAD_CHECK_THRESHOLD && zero_projection_identity })
}
