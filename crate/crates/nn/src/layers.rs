//! Parameterised layers built on the tape. Each layer only holds [`ParamId`]s;
//! values live in the [`ParamStore`] passed at construction.

use rand::Rng;

use crate::conv::conv_transpose_out_len;
use crate::error::{NnError, Result};
use crate::param::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Fan-in scaled uniform bound, `sqrt(6 / fan_in)`.
pub fn fan_in_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in.max(1) as f64).sqrt()
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub name: String,
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let bound = fan_in_bound(in_channels * kernel * kernel);
        let weight = store.add_uniform(
            format!("{name}.weight"),
            &[out_channels, in_channels, kernel, kernel],
            bound,
            rng,
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_channels]));
        Conv2d {
            name: name.to_string(),
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let w = tape.param(self.weight);
        let b = tape.param(self.bias);
        tape.conv2d(x, w, Some(b), self.stride, self.padding)
            .map_err(|e| e.in_layer(&self.name))
    }
}

#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    pub name: String,
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let bound = fan_in_bound(in_channels * kernel * kernel / stride.pow(2));
        let weight = store.add_uniform(
            format!("{name}.weight"),
            &[in_channels, out_channels, kernel, kernel],
            bound,
            rng,
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_channels]));
        ConvTranspose2d {
            name: name.to_string(),
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    /// Upsamples `x` to exactly `target = (height, width)`, choosing the output
    /// padding that inverts the matching convolution's arithmetic.
    pub fn forward_to(&self, tape: &mut Tape, x: Var, target: (usize, usize)) -> Result<Var> {
        let dims = tape.value(x).dims().to_vec();
        if dims.len() != 3 {
            return Err(NnError::shape(&self.name, format!("expected [C,H,W], got {dims:?}")));
        }
        let pad_for = |input: usize, want: usize| -> Result<usize> {
            let base = conv_transpose_out_len(input, self.kernel, self.stride, self.padding, 0)
                .unwrap_or(0);
            match want.checked_sub(base) {
                Some(op) if op < self.stride => Ok(op),
                _ => Err(NnError::shape(
                    &self.name,
                    format!("cannot upsample {input} to {want} at stride {}", self.stride),
                )),
            }
        };
        let op = (pad_for(dims[1], target.0)?, pad_for(dims[2], target.1)?);
        let w = tape.param(self.weight);
        let b = tape.param(self.bias);
        tape.conv_transpose2d(x, w, Some(b), self.stride, self.padding, op)
            .map_err(|e| e.in_layer(&self.name))
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub name: String,
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        outputs: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.add_uniform(
            format!("{name}.weight"),
            &[outputs, inputs],
            fan_in_bound(inputs),
            rng,
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[outputs]));
        Linear {
            name: name.to_string(),
            weight,
            bias,
            inputs,
            outputs,
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let w = tape.param(self.weight);
        let b = tape.param(self.bias);
        tape.linear(x, w, Some(b)).map_err(|e| e.in_layer(&self.name))
    }
}

/// One direction of an LSTM layer. Gate order in the stacked weights is
/// input, forget, cell candidate, output.
#[derive(Clone, Debug)]
pub struct Lstm {
    pub name: String,
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub hidden: usize,
}

impl Lstm {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let w_input =
            store.add_uniform(format!("{name}.w_input"), &[4 * hidden, inputs], bound, rng);
        let w_hidden =
            store.add_uniform(format!("{name}.w_hidden"), &[4 * hidden, hidden], bound, rng);
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[4 * hidden]));
        Lstm {
            name: name.to_string(),
            w_input,
            w_hidden,
            bias,
            inputs,
            hidden,
        }
    }

    /// Runs the recurrence over `steps`, in reverse order when `reverse` is set.
    /// Outputs are returned aligned with the input positions.
    pub fn run(&self, tape: &mut Tape, steps: &[Var], reverse: bool) -> Result<Vec<Var>> {
        let wi = tape.param(self.w_input);
        let wh = tape.param(self.w_hidden);
        let b = tape.param(self.bias);
        let h = self.hidden;
        let mut outputs: Vec<Option<Var>> = vec![None; steps.len()];
        let mut state: Option<(Var, Var)> = None;
        let order: Vec<usize> = if reverse {
            (0..steps.len()).rev().collect()
        } else {
            (0..steps.len()).collect()
        };
        for t in order {
            let from_input = tape
                .linear(steps[t], wi, Some(b))
                .map_err(|e| e.in_layer(&self.name))?;
            let gates = match state {
                Some((h_prev, _)) => {
                    let from_hidden = tape.linear(h_prev, wh, None)?;
                    tape.add(from_input, from_hidden)?
                }
                None => from_input,
            };
            let i_pre = tape.slice(gates, 0, h)?;
            let f_pre = tape.slice(gates, h, h)?;
            let g_pre = tape.slice(gates, 2 * h, h)?;
            let o_pre = tape.slice(gates, 3 * h, h)?;
            let i = tape.sigmoid(i_pre);
            let g = tape.tanh(g_pre);
            let o = tape.sigmoid(o_pre);
            let ig = tape.mul(i, g)?;
            let c = match state {
                Some((_, c_prev)) => {
                    let f = tape.sigmoid(f_pre);
                    let fc = tape.mul(f, c_prev)?;
                    tape.add(fc, ig)?
                }
                None => ig,
            };
            let tc = tape.tanh(c);
            let h_new = tape.mul(o, tc)?;
            outputs[t] = Some(h_new);
            state = Some((h_new, c));
        }
        Ok(outputs.into_iter().map(|o| o.expect("every step visited")).collect())
    }
}

/// Stacked bidirectional LSTM. Each step's output concatenates the forward
/// and backward hidden states, `2 * hidden` values.
#[derive(Clone, Debug)]
pub struct BiLstm {
    pub layers: Vec<(Lstm, Lstm)>,
    pub inputs: usize,
    pub hidden: usize,
}

impl BiLstm {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        hidden: usize,
        num_layers: usize,
        rng: &mut R,
    ) -> Self {
        let layers = (0..num_layers)
            .map(|l| {
                let width = if l == 0 { inputs } else { 2 * hidden };
                (
                    Lstm::new(store, &format!("{name}.l{l}.fwd"), width, hidden, rng),
                    Lstm::new(store, &format!("{name}.l{l}.bwd"), width, hidden, rng),
                )
            })
            .collect();
        BiLstm {
            layers,
            inputs,
            hidden,
        }
    }

    pub fn forward(&self, tape: &mut Tape, sequence: &[Var]) -> Result<Vec<Var>> {
        if sequence.is_empty() {
            return Err(NnError::InvalidInput("empty sequence".into()));
        }
        for (t, v) in sequence.iter().enumerate() {
            let n = tape.value(*v).len();
            if n != self.inputs {
                return Err(NnError::InvalidInput(format!(
                    "step {t} has {n} features, expected {}",
                    self.inputs
                )));
            }
        }
        let mut current = sequence.to_vec();
        for (fwd, bwd) in &self.layers {
            let f = fwd.run(tape, &current, false)?;
            let b = bwd.run(tape, &current, true)?;
            current = f
                .into_iter()
                .zip(b)
                .map(|(a, b)| tape.concat(&[a, b]))
                .collect::<Result<_>>()?;
        }
        Ok(current)
    }
}
