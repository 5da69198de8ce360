//! The assembled model: frequency split, per-branch normalization, encoders,
//! Koopman operators, zero-padding, beta-weighted fusion, and the training
//! loss.
//!
//! Branch layout for a window of length L over m channels, with observable
//! width q and n = L - 1:
//!
//!   variant:   x_var -> normalize -> [x | psi(x)] -> K_var -> denormalize
//!   invariant: x_inv -> normalize -> psi_inv       -> K_inv -> pad to m+q
//!   fused:     phi_pred = variant + beta * invariant
//!
//! The training target lifts the raw one-step-ahead slice through the same
//! variant encoder, so gradients reach the encoder from both sides of the
//! residual.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{
    build_encoder_graph, register_encoder, EncoderParams, EncoderVars, InvariantEncoderConfig,
    Mode, VariantEncoderConfig,
};
use crate::error::{Error, Result};
use crate::koopman::{frobenius_grad, operator_norms, Branch, KoopmanOperator};
use crate::mat::Mat;
use crate::scalar::Scalar;
use crate::spectral::{split_invariant_variant, FrequencySelection};
use crate::tape::{Tape, Var};

/// Per-window, per-channel clamp for instance normalization.
pub const EPS_NORM: f64 = 1e-5;

/// Per-window, per-channel statistics over the time axis.
#[derive(Clone, Debug)]
pub struct NormStats<S> {
    pub mu: Vec<S>,
    pub sigma: Vec<S>,
}

impl<S: Scalar> NormStats<S> {
    pub fn identity(m: usize) -> Self {
        NormStats {
            mu: vec![S::zero(); m],
            sigma: vec![S::one(); m],
        }
    }
}

/// Center and scale each channel over the rows; sigma is clamped at
/// `EPS_NORM` and clamped channels normalize to exact zeros.
pub fn instance_normalize<S: Scalar>(x: &Mat<S>) -> (Mat<S>, NormStats<S>) {
    let mu = x.col_mean();
    let raw_std = x.col_std(&mu);
    let eps = S::of(EPS_NORM);
    let sigma: Vec<S> = raw_std.iter().map(|&s| s.max(eps)).collect();
    let mut out = Mat::zeros(x.rows(), x.cols());
    for i in 0..x.rows() {
        let row = x.row(i);
        let dst = out.row_mut(i);
        for (j, ((&v, &m), &s)) in row.iter().zip(&mu).zip(&sigma).enumerate() {
            dst[j] = if s <= eps && raw_std[j] <= eps {
                S::zero()
            } else {
                (v - m) / s
            };
        }
    }
    (out, NormStats { mu, sigma })
}

/// Pad an n x m block on the right with zeros up to `width` columns.
pub fn zero_pad_invariant<S: Scalar>(v: &Mat<S>, width: usize) -> Result<Mat<S>> {
    if width < v.cols() {
        return Err(Error::Shape(format!(
            "pad width {width} smaller than input width {}",
            v.cols()
        )));
    }
    let mut out = Mat::zeros(v.rows(), width);
    for i in 0..v.rows() {
        out.row_mut(i)[..v.cols()].copy_from_slice(v.row(i));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormFlags {
    pub var_norm: bool,
    pub var_denorm: bool,
    pub inv_norm: bool,
    pub inv_denorm: bool,
}

impl Default for NormFlags {
    fn default() -> Self {
        NormFlags {
            var_norm: true,
            var_denorm: true,
            inv_norm: true,
            inv_denorm: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Fraction of spectrum bins treated as dominant.
    pub alpha: f64,
    /// Weight of the time-invariant branch in the fused prediction.
    pub beta: f64,
    /// Regularization coefficient on the operator norms.
    pub lambda: f64,
    /// Lookback window length L.
    #[serde(default = "default_window")]
    pub window: usize,
    /// Channel count m.
    pub m: usize,
    /// Observable width q; also the GRU hidden width of both encoders.
    #[serde(default = "default_q")]
    pub q: usize,
    #[serde(default = "default_hidden1")]
    pub hidden1: usize,
    #[serde(default = "default_hidden2")]
    pub hidden2: usize,
    #[serde(default = "default_layers")]
    pub gru_layers_variant: usize,
    #[serde(default = "default_layers")]
    pub gru_layers_invariant: usize,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    #[serde(default)]
    pub norm_flags: NormFlags,
    /// Squared-Frobenius alternative for the prediction residual.
    #[serde(default)]
    pub squared_koopman: bool,
}

fn default_window() -> usize {
    100
}
fn default_q() -> usize {
    128
}
fn default_hidden1() -> usize {
    100
}
fn default_hidden2() -> usize {
    128
}
fn default_layers() -> usize {
    1
}
fn default_dropout() -> f64 {
    0.01
}

impl ModelConfig {
    pub fn new(m: usize, alpha: f64, beta: f64, lambda: f64) -> Self {
        ModelConfig {
            alpha,
            beta,
            lambda,
            window: default_window(),
            m,
            q: default_q(),
            hidden1: default_hidden1(),
            hidden2: default_hidden2(),
            gru_layers_variant: default_layers(),
            gru_layers_invariant: default_layers(),
            dropout: default_dropout(),
            norm_flags: NormFlags::default(),
            squared_koopman: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!(
                "alpha {} outside [0, 1]",
                self.alpha
            )));
        }
        if self.beta < 0.0 {
            return Err(Error::Config("beta must be >= 0".into()));
        }
        if self.lambda < 0.0 {
            return Err(Error::Config("lambda must be >= 0".into()));
        }
        if self.window < 2 {
            return Err(Error::Config("window must be >= 2".into()));
        }
        if self.m == 0 {
            return Err(Error::Config("m must be positive".into()));
        }
        self.variant_config().validate()?;
        self.invariant_config().validate()
    }

    pub fn variant_config(&self) -> VariantEncoderConfig {
        VariantEncoderConfig {
            input_dim: self.m,
            hidden1: self.hidden1,
            hidden2: self.hidden2,
            gru_hidden: self.q,
            gru_layers: self.gru_layers_variant,
            dropout: self.dropout,
        }
    }

    pub fn invariant_config(&self) -> InvariantEncoderConfig {
        InvariantEncoderConfig {
            input_dim: self.m,
            hidden1: self.hidden1,
            hidden2: self.hidden2,
            gru_hidden: self.q,
            gru_layers: self.gru_layers_invariant,
            dropout: self.dropout,
        }
    }

    /// Observable-sequence width m + q.
    pub fn lifted_dim(&self) -> usize {
        self.m + self.q
    }
}

#[derive(Clone, Debug)]
pub struct ModelState<S> {
    pub variant_params: EncoderParams<S>,
    pub invariant_params: EncoderParams<S>,
    pub k_var: KoopmanOperator<S>,
    pub k_inv: KoopmanOperator<S>,
    pub selection: FrequencySelection<S>,
    pub config: ModelConfig,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput<S> {
    /// n x (m + q) fused observable prediction.
    pub phi_pred: Mat<S>,
    /// n x m next-step measurement prediction (the leading columns).
    pub x_next_pred: Mat<S>,
}

#[derive(Clone, Copy, Debug)]
pub struct LossValue<S> {
    pub total: S,
    pub koopman: S,
    pub reg: S,
}

/// Flattened parameter gradients in the model's canonical visiting order.
#[derive(Clone, Debug)]
pub struct Gradients<S> {
    pub slots: Vec<Mat<S>>,
}

impl<S: Scalar> ModelState<S> {
    pub fn init(config: ModelConfig, selection: FrequencySelection<S>, seed: u64) -> Result<Self> {
        config.validate()?;
        if selection.window_len != config.window {
            return Err(Error::Config(format!(
                "frequency selection fitted at window {} but config specifies {}",
                selection.window_len, config.window
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let variant_params = EncoderParams::init_variant(&config.variant_config(), &mut rng);
        let invariant_params = EncoderParams::init_invariant(&config.invariant_config(), &mut rng);
        let k_var = KoopmanOperator::init(config.lifted_dim(), Branch::Variant, &mut rng);
        let k_inv = KoopmanOperator::init(config.m, Branch::Invariant, &mut rng);
        Ok(ModelState {
            variant_params,
            invariant_params,
            k_var,
            k_inv,
            selection,
            config,
        })
    }

    /// Visit every parameter matrix in canonical order (the same order the
    /// graph registers them).
    pub fn visit_params(&self, f: &mut impl FnMut(String, &Mat<S>)) {
        visit_encoder(&self.variant_params, "variant", f);
        visit_encoder(&self.invariant_params, "invariant", f);
        f("k_var".into(), &self.k_var.matrix);
        f("k_inv".into(), &self.k_inv.matrix);
    }

    pub fn visit_params_mut(&mut self, f: &mut impl FnMut(String, &mut Mat<S>)) {
        visit_encoder_mut(&mut self.variant_params, "variant", f);
        visit_encoder_mut(&mut self.invariant_params, "invariant", f);
        f("k_var".into(), &mut self.k_var.matrix);
        f("k_inv".into(), &mut self.k_inv.matrix);
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit_params(&mut |name, _| names.push(name));
        names
    }

    pub fn param_count(&self) -> usize {
        let mut count = 0;
        self.visit_params(&mut |_, m| count += m.rows() * m.cols());
        count
    }

    fn check_window(&self, window: &Mat<S>) -> Result<()> {
        if window.rows() != self.config.window || window.cols() != self.config.m {
            return Err(Error::Shape(format!(
                "window is {}x{}, model expects {}x{}",
                window.rows(),
                window.cols(),
                self.config.window,
                self.config.m
            )));
        }
        Ok(())
    }

    /// Deterministic eval-mode forward pass on one window.
    pub fn forward(&self, window: &Mat<S>) -> Result<ForwardOutput<S>> {
        self.check_window(window)?;
        let mut tape = Tape::new();
        let vars = register_model(&mut tape, self);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let graph = build_graph(&mut tape, self, &vars, window, false, Mode::Eval, &mut rng)?;
        let phi_pred = tape.value(graph.phi_pred).clone();
        let x_next_pred = phi_pred.slice_cols(0, self.config.m);
        Ok(ForwardOutput {
            phi_pred,
            x_next_pred,
        })
    }

    /// Eval-mode loss on one window.
    pub fn loss(&self, window: &Mat<S>) -> Result<LossValue<S>> {
        let (value, _) =
            self.window_loss(window, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0), false)?;
        Ok(value)
    }

    /// Loss and, optionally, gradients for one window.
    fn window_loss(
        &self,
        window: &Mat<S>,
        mode: Mode,
        rng: &mut ChaCha8Rng,
        with_grad: bool,
    ) -> Result<(LossValue<S>, Option<Gradients<S>>)> {
        self.check_window(window)?;
        let mut tape = Tape::new();
        let vars = register_model(&mut tape, self);
        let graph = build_graph(&mut tape, self, &vars, window, true, mode, rng)?;
        let koop_node = graph
            .koopman
            .expect("target graph always produces the residual");
        let koopman = tape.value(koop_node).get(0, 0);
        let reg = operator_norms(&self.k_var, &self.k_inv);
        let total = koopman + S::of(self.config.lambda) * reg;
        if !total.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite loss: koopman={koopman}, reg={reg}"
            )));
        }
        let value = LossValue {
            total,
            koopman,
            reg,
        };
        if !with_grad {
            return Ok((value, None));
        }
        let store = tape.backward(koop_node);
        let ordered = vars.ordered();
        let mut slots = Vec::with_capacity(ordered.len());
        for &v in &ordered {
            let shape = tape.value(v).shape();
            slots.push(store.get_or_zeros(v, shape.0, shape.1));
        }
        Ok((value, Some(Gradients { slots })))
    }

    /// Mean loss and summed-then-averaged gradients over a batch of windows.
    /// The regularization gradient is added analytically once.
    pub fn batch_loss_grad(
        &self,
        windows: &[Mat<S>],
        mode: Mode,
        step_seed: u64,
    ) -> Result<(LossValue<S>, Gradients<S>)> {
        if windows.is_empty() {
            return Err(Error::Train("empty batch".into()));
        }
        let mut total_koop = S::zero();
        let mut acc: Option<Gradients<S>> = None;
        for (idx, window) in windows.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(step_seed);
            rng.set_stream(idx as u64);
            let (value, grads) = self.window_loss(window, mode, &mut rng, true)?;
            total_koop += value.koopman;
            let grads = grads.expect("with_grad");
            match &mut acc {
                Some(a) => {
                    for (slot, g) in a.slots.iter_mut().zip(&grads.slots) {
                        slot.add_assign(g);
                    }
                }
                None => acc = Some(grads),
            }
        }
        let mut grads = acc.expect("non-empty batch");
        let scale = S::one() / S::of(windows.len() as f64);
        for slot in grads.slots.iter_mut() {
            slot.scale_assign(scale);
        }
        let koopman = total_koop * scale;
        let reg = operator_norms(&self.k_var, &self.k_inv);
        let lambda = S::of(self.config.lambda);
        let total = koopman + lambda * reg;
        if !total.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite batch loss: koopman={koopman}, reg={reg}"
            )));
        }

        // The last two canonical slots are k_var and k_inv.
        let n_slots = grads.slots.len();
        grads.slots[n_slots - 2].add_scaled_assign(lambda, &frobenius_grad(&self.k_var.matrix));
        grads.slots[n_slots - 1].add_scaled_assign(lambda, &frobenius_grad(&self.k_inv.matrix));

        Ok((
            LossValue {
                total,
                koopman,
                reg,
            },
            grads,
        ))
    }

    /// Training-mode batch loss without gradients (used for epoch metrics).
    pub fn batch_loss(
        &self,
        windows: &[Mat<S>],
        mode: Mode,
        step_seed: u64,
    ) -> Result<LossValue<S>> {
        if windows.is_empty() {
            return Err(Error::Train("empty batch".into()));
        }
        let mut total_koop = S::zero();
        for (idx, window) in windows.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(step_seed);
            rng.set_stream(idx as u64);
            let (value, _) = self.window_loss(window, mode, &mut rng, false)?;
            total_koop += value.koopman;
        }
        let koopman = total_koop / S::of(windows.len() as f64);
        let reg = operator_norms(&self.k_var, &self.k_inv);
        let total = koopman + S::of(self.config.lambda) * reg;
        Ok(LossValue {
            total,
            koopman,
            reg,
        })
    }

    /// Apply `update` to every parameter in canonical order; used by the
    /// optimizer.
    pub fn apply_update(&mut self, mut update: impl FnMut(usize, &mut Mat<S>)) {
        let mut idx = 0;
        self.visit_params_mut(&mut |_, m| {
            update(idx, m);
            idx += 1;
        });
    }
}

fn visit_encoder<S: Scalar>(
    p: &EncoderParams<S>,
    prefix: &str,
    f: &mut impl FnMut(String, &Mat<S>),
) {
    f(format!("{prefix}.ff1.weight"), &p.ff1_w);
    f(format!("{prefix}.ff1.bias"), &p.ff1_b);
    f(format!("{prefix}.ff2.weight"), &p.ff2_w);
    f(format!("{prefix}.ff2.bias"), &p.ff2_b);
    for (i, layer) in p.gru.iter().enumerate() {
        f(format!("{prefix}.gru{i}.w_ih"), &layer.w_ih);
        f(format!("{prefix}.gru{i}.w_hh"), &layer.w_hh);
        f(format!("{prefix}.gru{i}.b_ih"), &layer.b_ih);
        f(format!("{prefix}.gru{i}.b_hh"), &layer.b_hh);
    }
    if let Some(w) = &p.out_w {
        f(format!("{prefix}.out.weight"), w);
    }
    if let Some(b) = &p.out_b {
        f(format!("{prefix}.out.bias"), b);
    }
}

fn visit_encoder_mut<S: Scalar>(
    p: &mut EncoderParams<S>,
    prefix: &str,
    f: &mut impl FnMut(String, &mut Mat<S>),
) {
    f(format!("{prefix}.ff1.weight"), &mut p.ff1_w);
    f(format!("{prefix}.ff1.bias"), &mut p.ff1_b);
    f(format!("{prefix}.ff2.weight"), &mut p.ff2_w);
    f(format!("{prefix}.ff2.bias"), &mut p.ff2_b);
    for (i, layer) in p.gru.iter_mut().enumerate() {
        f(format!("{prefix}.gru{i}.w_ih"), &mut layer.w_ih);
        f(format!("{prefix}.gru{i}.w_hh"), &mut layer.w_hh);
        f(format!("{prefix}.gru{i}.b_ih"), &mut layer.b_ih);
        f(format!("{prefix}.gru{i}.b_hh"), &mut layer.b_hh);
    }
    if let Some(w) = &mut p.out_w {
        f(format!("{prefix}.out.weight"), w);
    }
    if let Some(b) = &mut p.out_b {
        f(format!("{prefix}.out.bias"), b);
    }
}

struct ModelVars {
    variant: EncoderVars,
    invariant: EncoderVars,
    k_var: Var,
    k_inv: Var,
}

impl ModelVars {
    /// Same order as `visit_params`.
    fn ordered(&self) -> Vec<Var> {
        let mut out = Vec::new();
        collect_encoder_vars(&self.variant, &mut out);
        collect_encoder_vars(&self.invariant, &mut out);
        out.push(self.k_var);
        out.push(self.k_inv);
        out
    }
}

fn collect_encoder_vars(vars: &EncoderVars, out: &mut Vec<Var>) {
    out.push(vars.ff1_w);
    out.push(vars.ff1_b);
    out.push(vars.ff2_w);
    out.push(vars.ff2_b);
    for layer in &vars.gru {
        out.push(layer.w_ih);
        out.push(layer.w_hh);
        out.push(layer.b_ih);
        out.push(layer.b_hh);
    }
    if let Some(w) = vars.out_w {
        out.push(w);
    }
    if let Some(b) = vars.out_b {
        out.push(b);
    }
}

fn register_model<S: Scalar>(tape: &mut Tape<S>, state: &ModelState<S>) -> ModelVars {
    ModelVars {
        variant: register_encoder(tape, &state.variant_params),
        invariant: register_encoder(tape, &state.invariant_params),
        k_var: tape.param(state.k_var.matrix.clone()),
        k_inv: tape.param(state.k_inv.matrix.clone()),
    }
}

struct GraphOutput {
    phi_pred: Var,
    koopman: Option<Var>,
}

/// Assemble the forward (and optionally the residual) graph for one window.
fn build_graph<S: Scalar>(
    tape: &mut Tape<S>,
    state: &ModelState<S>,
    vars: &ModelVars,
    window: &Mat<S>,
    with_target: bool,
    mode: Mode,
    rng: &mut ChaCha8Rng,
) -> Result<GraphOutput> {
    let cfg = &state.config;
    let n = cfg.window - 1;
    let flags = cfg.norm_flags;

    let (x_inv_full, x_var_full) = split_invariant_variant(window, &state.selection)?;
    let x_var_t = x_var_full.slice_rows(0, n);
    let x_inv_t = x_inv_full.slice_rows(0, n);
    let x_next = window.slice_rows(1, n);

    // Variant branch.
    let (x_var_hat, stats_var) = if flags.var_norm {
        instance_normalize(&x_var_t)
    } else {
        (x_var_t.clone(), NormStats::identity(cfg.m))
    };
    let var_input = tape.constant(x_var_hat);
    let psi = build_encoder_graph(
        tape,
        &vars.variant,
        var_input,
        cfg.q,
        cfg.dropout,
        mode,
        rng,
    );
    let lifted = tape.concat_cols(var_input, psi);
    let advanced = tape.matmul_bt(lifted, vars.k_var);
    let variant_out = if flags.var_denorm {
        tape.affine_cols(advanced, stats_var.sigma.clone(), stats_var.mu.clone())
    } else {
        advanced
    };

    // Invariant branch.
    let (x_inv_hat, stats_inv) = if flags.inv_norm {
        instance_normalize(&x_inv_t)
    } else {
        (x_inv_t.clone(), NormStats::identity(cfg.m))
    };
    let inv_input = tape.constant(x_inv_hat);
    let psi_inv = build_encoder_graph(
        tape,
        &vars.invariant,
        inv_input,
        cfg.q,
        cfg.dropout,
        mode,
        rng,
    );
    let advanced_inv = tape.matmul_bt(psi_inv, vars.k_inv);
    let inv_out = if flags.inv_denorm {
        tape.affine_cols(advanced_inv, stats_inv.sigma.clone(), stats_inv.mu.clone())
    } else {
        advanced_inv
    };
    let padded = tape.pad_cols(inv_out, cfg.q);
    let weighted = tape.scale(padded, S::of(cfg.beta));

    let phi_pred = tape.add(variant_out, weighted);

    let koopman = if with_target {
        // Projection: lift the raw future slice through the shared variant
        // encoder.
        let next_input = tape.constant(x_next);
        let psi_next = build_encoder_graph(
            tape,
            &vars.variant,
            next_input,
            cfg.q,
            cfg.dropout,
            mode,
            rng,
        );
        let phi_next = tape.concat_cols(next_input, psi_next);
        let diff = tape.sub(phi_next, phi_pred);
        let node = if cfg.squared_koopman {
            tape.sum_squares(diff)
        } else {
            tape.frobenius(diff)
        };
        Some(node)
    } else {
        None
    };

    Ok(GraphOutput { phi_pred, koopman })
}
