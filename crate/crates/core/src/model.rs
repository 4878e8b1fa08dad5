//! Encoder-decoder intent classifier.
//!
//! The encoder is a stack of uni-directional GRU layers whose top-layer hidden
//! states are max-pooled over time into a fixed-length utterance embedding.
//! The decoder is a one-hidden-layer MLP producing intent logits.
//!
//! All vectors on the tape are `[1 × n]` rows, so every affine map is
//! `x · W + b` with `W: [in × out]` and `b: [1 × out]`.

use std::io::{BufRead, Write};

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gradcheck::Objective;
use crate::tape::{ComputeTape, Var};
use crate::tensor::{GradientSet, ParameterSet, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SpeakerId(pub u32);

impl std::fmt::Display for SpeakerId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One labeled feature sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    features: Tensor,
    label: usize,
    speaker: SpeakerId,
}

impl Utterance {
    /// `features` must be `[T × input_dim]` with `T ≥ 1`.
    pub fn new(features: Tensor, label: usize, speaker: SpeakerId) -> Result<Self> {
        features.dims2()?;
        Ok(Utterance {
            features,
            label,
            speaker,
        })
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn label(&self) -> usize {
        self.label
    }

    pub fn speaker(&self) -> SpeakerId {
        self.speaker
    }

    pub fn len(&self) -> usize {
        self.features.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.features.shape()[1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub gru_layers: usize,
    pub hidden_dim: usize,
    pub decoder_hidden: usize,
    pub num_intents: usize,
}

impl ModelConfig {
    /// Two GRU layers of 16 units and a 16-unit decoder.
    pub fn toy(input_dim: usize, num_intents: usize) -> Self {
        ModelConfig {
            input_dim,
            gru_layers: 2,
            hidden_dim: 16,
            decoder_hidden: 16,
            num_intents,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("input_dim", self.input_dim),
            ("gru_layers", self.gru_layers),
            ("hidden_dim", self.hidden_dim),
            ("decoder_hidden", self.decoder_hidden),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Validation(format!("model.{name} must be ≥ 1")));
            }
        }
        if self.num_intents < 2 {
            return Err(Error::Validation("model.num_intents must be ≥ 2".into()));
        }
        Ok(())
    }

    fn layer_input_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_dim
        } else {
            self.hidden_dim
        }
    }

    /// Canonical parameter names and shapes.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let h = self.hidden_dim;
        let mut out = Vec::with_capacity(9 * self.gru_layers + 4);
        for layer in 0..self.gru_layers {
            let input = self.layer_input_dim(layer);
            for gate in ["z", "r", "h"] {
                out.push((format!("gru{layer}.w_{gate}"), vec![input, h]));
                out.push((format!("gru{layer}.u_{gate}"), vec![h, h]));
                out.push((format!("gru{layer}.b_{gate}"), vec![1, h]));
            }
        }
        out.push(("dec.w1".into(), vec![h, self.decoder_hidden]));
        out.push(("dec.b1".into(), vec![1, self.decoder_hidden]));
        out.push(("dec.w2".into(), vec![self.decoder_hidden, self.num_intents]));
        out.push(("dec.b2".into(), vec![1, self.num_intents]));
        out
    }

    /// Parameter set with every tensor zero.
    pub fn zero_params(&self) -> ParameterSet {
        let mut p = ParameterSet::new();
        for (name, shape) in self.param_shapes() {
            p.insert(name, Tensor::zeros(&shape))
                .expect("canonical names are unique");
        }
        p
    }
}

fn is_bias(name: &str) -> bool {
    name.rsplit('.').next().is_some_and(|s| s.starts_with('b'))
}

/// Glorot-uniform weight matrices, zero biases; deterministic in `seed`.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ParameterSet> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParameterSet::new();
    for (name, shape) in config.param_shapes() {
        let tensor = if is_bias(&name) {
            Tensor::zeros(&shape)
        } else {
            let (fan_in, fan_out) = (shape[0], shape[1]);
            let r = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-r, r)
                .map_err(|e| Error::Validation(format!("init range: {e}")))?;
            let data = (0..fan_in * fan_out)
                .map(|_| dist.sample(&mut rng))
                .collect();
            Tensor::new(shape, data)?
        };
        params.insert(name, tensor)?;
    }
    Ok(params)
}

#[derive(Debug, Clone, Copy)]
struct GruVars {
    w: [Var; 3],
    u: [Var; 3],
    b: [Var; 3],
}

#[derive(Debug, Clone, Copy)]
struct DecoderVars {
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
}

/// Model parameters registered on a tape.
#[derive(Debug, Clone)]
pub struct BoundModel {
    config: ModelConfig,
    layers: Vec<GruVars>,
    decoder: DecoderVars,
}

impl BoundModel {
    /// Places `params` on `tape`, as trainable leaves or as constants.
    pub fn bind(
        tape: &mut ComputeTape,
        params: &ParameterSet,
        config: &ModelConfig,
        trainable: bool,
    ) -> Result<Self> {
        config.validate()?;
        let mut vars = Vec::new();
        for (name, shape) in config.param_shapes() {
            let t = params.expect(&name)?;
            if t.shape() != shape.as_slice() {
                return Err(Error::shape("bind", &shape, t.shape()));
            }
            vars.push(if trainable {
                tape.param(name, t.clone())?
            } else {
                tape.constant(t.clone())?
            });
        }
        // Per layer: w_z u_z b_z w_r u_r b_r w_h u_h b_h.
        let layers = vars
            .chunks_exact(9)
            .take(config.gru_layers)
            .map(|v| GruVars {
                w: [v[0], v[3], v[6]],
                u: [v[1], v[4], v[7]],
                b: [v[2], v[5], v[8]],
            })
            .collect();
        let d = &vars[9 * config.gru_layers..];
        let decoder = DecoderVars {
            w1: d[0],
            b1: d[1],
            w2: d[2],
            b2: d[3],
        };
        Ok(BoundModel {
            config: *config,
            layers,
            decoder,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// One GRU update: `h_t = (1 − z) ⊙ h + z ⊙ c`.
    pub fn gru_step(
        &self,
        tape: &mut ComputeTape,
        layer: usize,
        x_t: Var,
        h_prev: Var,
    ) -> Result<Var> {
        let vars = self.layers.get(layer).ok_or(Error::IndexOutOfRange {
            index: layer,
            bound: self.layers.len(),
        })?;
        let gate = |tape: &mut ComputeTape, g: usize, h: Var| -> Result<Var> {
            let xw = tape.matmul(x_t, vars.w[g])?;
            let hu = tape.matmul(h, vars.u[g])?;
            let s = tape.add(xw, hu)?;
            tape.add(s, vars.b[g])
        };
        let z_pre = gate(tape, 0, h_prev)?;
        let z = tape.sigmoid(z_pre)?;
        let r_pre = gate(tape, 1, h_prev)?;
        let r = tape.sigmoid(r_pre)?;
        let rh = tape.hadamard(r, h_prev)?;
        let c_pre = gate(tape, 2, rh)?;
        let c = tape.tanh(c_pre)?;
        let delta = tape.sub(c, h_prev)?;
        let step = tape.hadamard(z, delta)?;
        tape.add(h_prev, step)
    }

    /// Stacked GRU over all time steps of `features: [T × input_dim]`,
    /// then max-pool of the top layer's states: a `[1 × hidden_dim]` node.
    pub fn encode(&self, tape: &mut ComputeTape, features: Var) -> Result<Var> {
        let dims = vec![self.config.hidden_dim; self.config.gru_layers];
        encode_with(tape, features, &dims, |tape, layer, x, h| {
            self.gru_step(tape, layer, x, h)
        })
    }

    /// `W2 · relu(W1 · e + b1) + b2` for a `[1 × hidden_dim]` embedding.
    pub fn classify(&self, tape: &mut ComputeTape, embedding: Var) -> Result<Var> {
        let d = self.decoder;
        let a = tape.matmul(embedding, d.w1)?;
        let a = tape.add(a, d.b1)?;
        let a = tape.relu(a)?;
        let o = tape.matmul(a, d.w2)?;
        tape.add(o, d.b2)
    }

    pub fn logits(&self, tape: &mut ComputeTape, utterance: &Utterance) -> Result<Var> {
        if utterance.input_dim() != self.config.input_dim {
            return Err(Error::shape(
                "logits",
                utterance.features().shape(),
                &[utterance.len(), self.config.input_dim],
            ));
        }
        let x = tape.constant(utterance.features().clone())?;
        let e = self.encode(tape, x)?;
        self.classify(tape, e)
    }

    /// Mean cross-entropy over a batch of utterances.
    pub fn batch_loss(&self, tape: &mut ComputeTape, batch: &[&Utterance]) -> Result<Var> {
        if batch.is_empty() {
            return Err(Error::EmptyInput("batch has no utterances".into()));
        }
        let mut rows = Vec::with_capacity(batch.len());
        let mut labels = Vec::with_capacity(batch.len());
        for u in batch {
            rows.push(self.logits(tape, u)?);
            labels.push(u.label());
        }
        let logits = tape.stack_rows(&rows)?;
        tape.softmax_cross_entropy(logits, &labels)
    }
}

/// Runs a stacked recurrence over the rows of `features` and max-pools the
/// top layer's states over time.
///
/// `hidden_dims[l]` is the state width of layer `l`; every layer starts from
/// a zero state. `step(tape, layer, x_t, h_prev)` computes the next state.
pub fn encode_with<F>(
    tape: &mut ComputeTape,
    features: Var,
    hidden_dims: &[usize],
    mut step: F,
) -> Result<Var>
where
    F: FnMut(&mut ComputeTape, usize, Var, Var) -> Result<Var>,
{
    let (t_len, _) = tape.value(features).dims2()?;
    if t_len == 0 {
        return Err(Error::EmptyInput("utterance with zero time steps".into()));
    }
    if hidden_dims.is_empty() {
        return Err(Error::Validation("encoder needs at least one layer".into()));
    }
    let mut states = hidden_dims
        .iter()
        .map(|&h| tape.constant(Tensor::zeros(&[1, h])))
        .collect::<Result<Vec<_>>>()?;
    let mut top = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let mut x = tape.row(features, t)?;
        for (layer, state) in states.iter_mut().enumerate() {
            *state = step(tape, layer, x, *state)?;
            x = *state;
        }
        top.push(x);
    }
    let seq = tape.stack_rows(&top)?;
    tape.maxpool_time(seq)
}

fn as_row(t: &Tensor) -> Result<Tensor> {
    match t.shape() {
        &[n] => Tensor::matrix(1, n, t.data().to_vec()),
        &[1, _] => Ok(t.clone()),
        other => Err(Error::Validation(format!(
            "expected a vector, got shape {other:?}"
        ))),
    }
}

fn row_to_vector(t: &Tensor) -> Tensor {
    Tensor::from_parts(vec![t.len()], t.data().to_vec())
}

/// One GRU step on plain tensors; returns `h_t` as an `[H]` vector.
pub fn gru_step(
    params: &ParameterSet,
    config: &ModelConfig,
    layer: usize,
    x_t: &Tensor,
    h_prev: &Tensor,
) -> Result<Tensor> {
    let mut tape = ComputeTape::new();
    let model = BoundModel::bind(&mut tape, params, config, false)?;
    let x = tape.constant(as_row(x_t)?)?;
    let h = tape.constant(as_row(h_prev)?)?;
    let expected_in = config.layer_input_dim(layer);
    if tape.value(x).len() != expected_in || tape.value(h).len() != config.hidden_dim {
        return Err(Error::shape(
            "gru_step",
            &[x_t.len(), h_prev.len()],
            &[expected_in, config.hidden_dim],
        ));
    }
    let out = model.gru_step(&mut tape, layer, x, h)?;
    Ok(row_to_vector(tape.value(out)))
}

/// Utterance embedding as an `[hidden_dim]` vector.
pub fn encode(
    params: &ParameterSet,
    config: &ModelConfig,
    utterance: &Utterance,
) -> Result<Tensor> {
    let mut tape = ComputeTape::new();
    let model = BoundModel::bind(&mut tape, params, config, false)?;
    if utterance.input_dim() != config.input_dim {
        return Err(Error::shape(
            "encode",
            utterance.features().shape(),
            &[utterance.len(), config.input_dim],
        ));
    }
    let x = tape.constant(utterance.features().clone())?;
    let e = model.encode(&mut tape, x)?;
    Ok(row_to_vector(tape.value(e)))
}

/// Intent logits for an embedding, as an `[num_intents]` vector.
pub fn classify(params: &ParameterSet, config: &ModelConfig, embedding: &Tensor) -> Result<Tensor> {
    let mut tape = ComputeTape::new();
    let model = BoundModel::bind(&mut tape, params, config, false)?;
    let e = tape.constant(as_row(embedding)?)?;
    if tape.value(e).len() != config.hidden_dim {
        return Err(Error::shape(
            "classify",
            embedding.shape(),
            &[config.hidden_dim],
        ));
    }
    let o = model.classify(&mut tape, e)?;
    Ok(row_to_vector(tape.value(o)))
}

pub fn logits(
    params: &ParameterSet,
    config: &ModelConfig,
    utterance: &Utterance,
) -> Result<Tensor> {
    let mut tape = ComputeTape::new();
    let model = BoundModel::bind(&mut tape, params, config, false)?;
    let o = model.logits(&mut tape, utterance)?;
    Ok(row_to_vector(tape.value(o)))
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn predict(
    params: &ParameterSet,
    config: &ModelConfig,
    utterance: &Utterance,
) -> Result<usize> {
    logits(params, config, utterance).map(|l| argmax(l.data()))
}

/// Predictions for many utterances.
pub fn predict_all<'a, I>(
    params: &ParameterSet,
    config: &ModelConfig,
    utterances: I,
) -> Result<Vec<usize>>
where
    I: IntoIterator<Item = &'a Utterance>,
{
    utterances
        .into_iter()
        .map(|u| predict(params, config, u))
        .collect()
}

/// Mean batch cross-entropy and its gradient with respect to every parameter.
pub fn loss_and_gradients(
    params: &ParameterSet,
    config: &ModelConfig,
    batch: &[&Utterance],
) -> Result<(f64, GradientSet)> {
    let mut tape = ComputeTape::new();
    let model = BoundModel::bind(&mut tape, params, config, true)?;
    let loss = model.batch_loss(&mut tape, batch)?;
    let value = tape.value(loss).data()[0];
    let grads = tape.backward(loss)?;
    Ok((value, grads))
}

pub fn batch_loss(
    params: &ParameterSet,
    config: &ModelConfig,
    batch: &[&Utterance],
) -> Result<f64> {
    let mut tape = ComputeTape::new();
    let model = BoundModel::bind(&mut tape, params, config, false)?;
    let loss = model.batch_loss(&mut tape, batch)?;
    Ok(tape.value(loss).data()[0])
}

/// Full-model batch loss as a gradient-check objective.
#[derive(Debug, Clone)]
pub struct BatchObjective {
    pub config: ModelConfig,
    pub batch: Vec<Utterance>,
}

impl Objective for BatchObjective {
    fn loss(&self, params: &ParameterSet) -> Result<f64> {
        let refs: Vec<&Utterance> = self.batch.iter().collect();
        batch_loss(params, &self.config, &refs)
    }

    fn gradient(&self, params: &ParameterSet) -> Result<GradientSet> {
        let refs: Vec<&Utterance> = self.batch.iter().collect();
        loss_and_gradients(params, &self.config, &refs).map(|(_, g)| g)
    }
}

const HEADER_FIELDS: [&str; 5] = [
    "input_dim",
    "gru_layers",
    "hidden_dim",
    "decoder_hidden",
    "num_intents",
];

/// Writes a one-line text header naming the config, then every parameter
/// value as a little-endian `f64` in canonical order.
pub fn write_params<W: Write>(
    mut out: W,
    config: &ModelConfig,
    params: &ParameterSet,
) -> Result<()> {
    config
        .zero_params()
        .check_compatible(params, "write_params")?;
    let values = [
        config.input_dim,
        config.gru_layers,
        config.hidden_dim,
        config.decoder_hidden,
        config.num_intents,
    ];
    let header: Vec<String> = HEADER_FIELDS
        .iter()
        .zip(values)
        .map(|(k, v)| format!("{k}={v}"))
        .collect();
    writeln!(out, "{}", header.join(" "))?;
    for v in params.flatten() {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_params<R: BufRead>(mut input: R) -> Result<(ModelConfig, ParameterSet)> {
    let mut header = String::new();
    input.read_line(&mut header)?;
    let mut values = [0usize; 5];
    let mut seen = [false; 5];
    for field in header.split_whitespace() {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("bad header field `{field}`")))?;
        let slot = HEADER_FIELDS
            .iter()
            .position(|k| *k == key)
            .ok_or_else(|| Error::Parse(format!("unknown header field `{key}`")))?;
        values[slot] = value
            .parse()
            .map_err(|_| Error::Parse(format!("bad value for `{key}`: `{value}`")))?;
        seen[slot] = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::Parse(format!(
            "header lacks `{}`",
            HEADER_FIELDS[missing]
        )));
    }
    let config = ModelConfig {
        input_dim: values[0],
        gru_layers: values[1],
        hidden_dim: values[2],
        decoder_hidden: values[3],
        num_intents: values[4],
    };
    config.validate()?;
    let template = config.zero_params();
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() != template.num_scalars() * 8 {
        return Err(Error::Parse(format!(
            "expected {} parameter bytes, found {}",
            template.num_scalars() * 8,
            bytes.len()
        )));
    }
    let flat: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok((config, template.unflatten(&flat)?))
}
