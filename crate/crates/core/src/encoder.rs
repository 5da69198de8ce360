//! Learned observable functions.
//!
//! Both branches share the same trunk: two per-step feedforward layers with
//! ReLU, then a stacked GRU over the window's time steps. The variant
//! encoder's observable at step i is the top-layer hidden state (so q equals
//! the GRU width); the invariant encoder adds a linear head that matches the
//! output back to the measurement dimension.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct VariantEncoderConfig {
    pub input_dim: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub gru_hidden: usize,
    pub gru_layers: usize,
    pub dropout: f64,
}

impl VariantEncoderConfig {
    pub fn new(input_dim: usize, gru_layers: usize) -> Self {
        VariantEncoderConfig {
            input_dim,
            hidden1: 100,
            hidden2: 128,
            gru_hidden: 128,
            gru_layers,
            dropout: 0.01,
        }
    }

    /// q: the per-step observable width.
    pub fn observable_dim(&self) -> usize {
        self.gru_hidden
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden1 == 0 || self.hidden2 == 0 || self.gru_hidden == 0 {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        if self.gru_layers == 0 {
            return Err(Error::Config("gru_layers must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct InvariantEncoderConfig {
    pub input_dim: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub gru_hidden: usize,
    pub gru_layers: usize,
    pub dropout: f64,
}

impl InvariantEncoderConfig {
    pub fn new(input_dim: usize, gru_layers: usize) -> Self {
        InvariantEncoderConfig {
            input_dim,
            hidden1: 100,
            hidden2: 128,
            gru_hidden: 128,
            gru_layers,
            dropout: 0.01,
        }
    }

    /// Dimension matching: the head maps back to the measurement width.
    pub fn output_dim(&self) -> usize {
        self.input_dim
    }

    pub fn validate(&self) -> Result<()> {
        VariantEncoderConfig {
            input_dim: self.input_dim,
            hidden1: self.hidden1,
            hidden2: self.hidden2,
            gru_hidden: self.gru_hidden,
            gru_layers: self.gru_layers,
            dropout: self.dropout,
        }
        .validate()
    }
}

/// One stacked-GRU layer. Weights are stored input-major so a row state
/// multiplies from the left; gate columns are ordered [reset | update |
/// candidate].
#[derive(Clone, Debug, PartialEq)]
pub struct GruLayerParams<S> {
    pub w_ih: Mat<S>,
    pub w_hh: Mat<S>,
    pub b_ih: Mat<S>,
    pub b_hh: Mat<S>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams<S> {
    pub ff1_w: Mat<S>,
    pub ff1_b: Mat<S>,
    pub ff2_w: Mat<S>,
    pub ff2_b: Mat<S>,
    pub gru: Vec<GruLayerParams<S>>,
    pub out_w: Option<Mat<S>>,
    pub out_b: Option<Mat<S>>,
}

fn uniform_mat<S: Scalar>(rows: usize, cols: usize, bound: f64, rng: &mut ChaCha8Rng) -> Mat<S> {
    let data = (0..rows * cols)
        .map(|_| S::of(rng.random_range(-bound..bound)))
        .collect();
    Mat::from_vec(rows, cols, data)
}

impl<S: Scalar> EncoderParams<S> {
    /// Feedforward weights uniform in ±sqrt(1/fan_in), GRU weights uniform
    /// in ±sqrt(1/hidden), biases zero.
    pub fn init(
        input_dim: usize,
        hidden1: usize,
        hidden2: usize,
        gru_hidden: usize,
        gru_layers: usize,
        output_dim: Option<usize>,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let ff1_w = uniform_mat(input_dim, hidden1, (1.0 / input_dim as f64).sqrt(), rng);
        let ff2_w = uniform_mat(hidden1, hidden2, (1.0 / hidden1 as f64).sqrt(), rng);
        let gru_bound = (1.0 / gru_hidden as f64).sqrt();
        let mut gru = Vec::with_capacity(gru_layers);
        for layer in 0..gru_layers {
            let in_dim = if layer == 0 { hidden2 } else { gru_hidden };
            gru.push(GruLayerParams {
                w_ih: uniform_mat(in_dim, 3 * gru_hidden, gru_bound, rng),
                w_hh: uniform_mat(gru_hidden, 3 * gru_hidden, gru_bound, rng),
                b_ih: Mat::zeros(1, 3 * gru_hidden),
                b_hh: Mat::zeros(1, 3 * gru_hidden),
            });
        }
        let (out_w, out_b) = match output_dim {
            Some(out) => (
                Some(uniform_mat(
                    gru_hidden,
                    out,
                    (1.0 / gru_hidden as f64).sqrt(),
                    rng,
                )),
                Some(Mat::zeros(1, out)),
            ),
            None => (None, None),
        };
        EncoderParams {
            ff1_w,
            ff1_b: Mat::zeros(1, hidden1),
            ff2_w,
            ff2_b: Mat::zeros(1, hidden2),
            gru,
            out_w,
            out_b,
        }
    }

    pub fn init_variant(cfg: &VariantEncoderConfig, rng: &mut ChaCha8Rng) -> Self {
        Self::init(
            cfg.input_dim,
            cfg.hidden1,
            cfg.hidden2,
            cfg.gru_hidden,
            cfg.gru_layers,
            None,
            rng,
        )
    }

    pub fn init_invariant(cfg: &InvariantEncoderConfig, rng: &mut ChaCha8Rng) -> Self {
        Self::init(
            cfg.input_dim,
            cfg.hidden1,
            cfg.hidden2,
            cfg.gru_hidden,
            cfg.gru_layers,
            Some(cfg.output_dim()),
            rng,
        )
    }

    /// Total scalar parameters. Closed form with ff widths h1, h2, GRU width
    /// h over `gru_layers` layers, input m, optional head to `out`:
    ///   m*h1 + h1 + h1*h2 + h2
    /// + sum over layers: (in_l + h) * 3h + 6h, in_0 = h2, in_l = h
    /// + out ? h*out + out : 0
    pub fn param_count(&self) -> usize {
        let mut count = self.ff1_w.rows() * self.ff1_w.cols()
            + self.ff1_b.cols()
            + self.ff2_w.rows() * self.ff2_w.cols()
            + self.ff2_b.cols();
        for layer in &self.gru {
            count += layer.w_ih.rows() * layer.w_ih.cols()
                + layer.w_hh.rows() * layer.w_hh.cols()
                + layer.b_ih.cols()
                + layer.b_hh.cols();
        }
        if let Some(w) = &self.out_w {
            count += w.rows() * w.cols();
        }
        if let Some(b) = &self.out_b {
            count += b.cols();
        }
        count
    }

    pub fn gru_hidden(&self) -> usize {
        self.gru[0].w_hh.rows()
    }
}

/// Per-time-step lifted vectors with the raw measurements occupying the
/// leading columns.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservableSequence<S> {
    pub lifted: Mat<S>,
    pub measurement_dim: usize,
}

impl<S: Scalar> ObservableSequence<S> {
    pub fn measurements(&self) -> Mat<S> {
        self.lifted.slice_cols(0, self.measurement_dim)
    }

    pub fn observables(&self) -> Mat<S> {
        self.lifted.slice_cols(
            self.measurement_dim,
            self.lifted.cols() - self.measurement_dim,
        )
    }
}

/// Stack measurements above encoder outputs: `[x | psi(x)]` row-wise.
pub fn lift<S: Scalar>(x: &Mat<S>, psi: &Mat<S>) -> Result<ObservableSequence<S>> {
    if x.rows() != psi.rows() {
        return Err(Error::Shape(format!(
            "lift row mismatch: measurements {} vs observables {}",
            x.rows(),
            psi.rows()
        )));
    }
    Ok(ObservableSequence {
        lifted: x.concat_cols(psi),
        measurement_dim: x.cols(),
    })
}

// ---------------------------------------------------------------------------
// Tape graph construction

pub(crate) struct GruLayerVars {
    pub(crate) w_ih: Var,
    pub(crate) w_hh: Var,
    pub(crate) b_ih: Var,
    pub(crate) b_hh: Var,
}

pub(crate) struct EncoderVars {
    pub ff1_w: Var,
    pub ff1_b: Var,
    pub ff2_w: Var,
    pub ff2_b: Var,
    pub gru: Vec<GruLayerVars>,
    pub out_w: Option<Var>,
    pub out_b: Option<Var>,
}

pub(crate) fn register_encoder<S: Scalar>(
    tape: &mut Tape<S>,
    params: &EncoderParams<S>,
) -> EncoderVars {
    EncoderVars {
        ff1_w: tape.param(params.ff1_w.clone()),
        ff1_b: tape.param(params.ff1_b.clone()),
        ff2_w: tape.param(params.ff2_w.clone()),
        ff2_b: tape.param(params.ff2_b.clone()),
        gru: params
            .gru
            .iter()
            .map(|l| GruLayerVars {
                w_ih: tape.param(l.w_ih.clone()),
                w_hh: tape.param(l.w_hh.clone()),
                b_ih: tape.param(l.b_ih.clone()),
                b_hh: tape.param(l.b_hh.clone()),
            })
            .collect(),
        out_w: params.out_w.as_ref().map(|w| tape.param(w.clone())),
        out_b: params.out_b.as_ref().map(|b| tape.param(b.clone())),
    }
}

/// One GRU step on the tape. `x` and `h` are single rows.
fn gru_step<S: Scalar>(
    tape: &mut Tape<S>,
    layer: &GruLayerVars,
    x: Var,
    h: Var,
    hidden: usize,
) -> Var {
    let gi_lin = tape.matmul(x, layer.w_ih);
    let gi = tape.add(gi_lin, layer.b_ih);
    let gh_lin = tape.matmul(h, layer.w_hh);
    let gh = tape.add(gh_lin, layer.b_hh);

    let gi_r = tape.slice_cols(gi, 0, hidden);
    let gh_r = tape.slice_cols(gh, 0, hidden);
    let r_pre = tape.add(gi_r, gh_r);
    let r = tape.sigmoid(r_pre);

    let gi_z = tape.slice_cols(gi, hidden, hidden);
    let gh_z = tape.slice_cols(gh, hidden, hidden);
    let z_pre = tape.add(gi_z, gh_z);
    let z = tape.sigmoid(z_pre);

    let gi_n = tape.slice_cols(gi, 2 * hidden, hidden);
    let gh_n = tape.slice_cols(gh, 2 * hidden, hidden);
    let gated = tape.hadamard(r, gh_n);
    let n_pre = tape.add(gi_n, gated);
    let n = tape.tanh(n_pre);

    // h' = (1 - z) .* n + z .* h
    tape.lerp(z, n, h)
}

/// Build the full encoder graph over an n x m input node: feedforward trunk,
/// stacked GRU with inter-layer dropout, optional linear head. Returns the
/// n x (q or out) output node.
pub(crate) fn build_encoder_graph<S: Scalar>(
    tape: &mut Tape<S>,
    vars: &EncoderVars,
    x: Var,
    hidden: usize,
    dropout: f64,
    mode: Mode,
    rng: &mut ChaCha8Rng,
) -> Var {
    let n = tape.value(x).rows();

    let lin1 = tape.matmul(x, vars.ff1_w);
    let lin1b = tape.add_row(lin1, vars.ff1_b);
    let act1 = tape.relu(lin1b);
    let lin2 = tape.matmul(act1, vars.ff2_w);
    let lin2b = tape.add_row(lin2, vars.ff2_b);
    let trunk = tape.relu(lin2b);

    let mut steps: Vec<Var> = (0..n).map(|i| tape.slice_rows(trunk, i, 1)).collect();
    let layer_count = vars.gru.len();
    for (li, layer) in vars.gru.iter().enumerate() {
        let mut h = tape.constant(Mat::zeros(1, hidden));
        let mut outputs = Vec::with_capacity(n);
        for &x_i in &steps {
            h = gru_step(tape, layer, x_i, h, hidden);
            outputs.push(h);
        }
        // Inter-layer dropout only: the top layer's states are the
        // observables and stay intact.
        if li + 1 < layer_count && mode == Mode::Train && dropout > 0.0 {
            let keep = 1.0 - dropout;
            outputs = outputs
                .into_iter()
                .map(|o| {
                    let mask: Vec<S> = (0..hidden)
                        .map(|_| {
                            if rng.random::<f64>() < dropout {
                                S::zero()
                            } else {
                                S::of(1.0 / keep)
                            }
                        })
                        .collect();
                    tape.dropout(o, mask)
                })
                .collect();
        }
        steps = outputs;
    }
    let stacked = tape.stack_rows(&steps);
    match (vars.out_w, vars.out_b) {
        (Some(w), Some(b)) => {
            let lin = tape.matmul(stacked, w);
            tape.add_row(lin, b)
        }
        _ => stacked,
    }
}

fn check_input<S: Scalar>(x: &Mat<S>, expected_dim: usize) -> Result<()> {
    if !x.is_finite() {
        return Err(Error::Numerical(
            "encoder input contains non-finite values".into(),
        ));
    }
    if x.cols() != expected_dim {
        return Err(Error::Shape(format!(
            "encoder input width {} does not match configured input_dim {}",
            x.cols(),
            expected_dim
        )));
    }
    if x.rows() == 0 {
        return Err(Error::Shape("encoder input has no time steps".into()));
    }
    Ok(())
}

fn run_eval<S: Scalar>(params: &EncoderParams<S>, hidden: usize, x: &Mat<S>) -> Mat<S> {
    let mut tape = Tape::new();
    let vars = register_encoder(&mut tape, params);
    let input = tape.constant(x.clone());
    // Dropout is off in eval mode; the rng is never consulted.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = build_encoder_graph(&mut tape, &vars, input, hidden, 0.0, Mode::Eval, &mut rng);
    tape.value(out).clone()
}

/// psi(x) per step: deterministic eval-mode forward.
pub fn encode_variant<S: Scalar>(
    params: &EncoderParams<S>,
    cfg: &VariantEncoderConfig,
    x: &Mat<S>,
) -> Result<Mat<S>> {
    cfg.validate()?;
    check_input(x, cfg.input_dim)?;
    Ok(run_eval(params, cfg.gru_hidden, x))
}

/// Dimension-matched invariant encoding, n x m.
pub fn encode_invariant<S: Scalar>(
    params: &EncoderParams<S>,
    cfg: &InvariantEncoderConfig,
    x: &Mat<S>,
) -> Result<Mat<S>> {
    cfg.validate()?;
    check_input(x, cfg.input_dim)?;
    if params.out_w.is_none() {
        return Err(Error::Config(
            "invariant encoder parameters are missing the output head".into(),
        ));
    }
    Ok(run_eval(params, cfg.gru_hidden, x))
}

/// Training target: the future measurements lifted through the *same*
/// variant encoder, `[x_next | psi(x_next)]`.
pub fn project_future<S: Scalar>(
    variant_params: &EncoderParams<S>,
    cfg: &VariantEncoderConfig,
    x_next: &Mat<S>,
) -> Result<ObservableSequence<S>> {
    let psi = encode_variant(variant_params, cfg, x_next)?;
    lift(x_next, &psi)
}
