//! Stacked convolutional LSTM feature extractor.
//!
//! The eight gate convolutions of one layer are stored as a single kernel
//! over `concat(X, H)` with output channels grouped by gate in the order
//! input, forget, cell candidate, output. Peephole weights are full tensors
//! shaped like the cell state and the output gate peeks at the new cell
//! state.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{conv_same, sigmoid, Tape, Tensor, TensorError, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gate {
    Input = 0,
    Forget = 1,
    Cell = 2,
    Output = 3,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FexmConfig {
    pub input_channels: usize,
    /// Hidden channels per layer, first layer first.
    pub hidden: Vec<usize>,
    /// Odd spatial kernel extent shared by all gates.
    pub kernel: usize,
}

impl FexmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.contains(&0) || self.input_channels == 0 {
            return Err(Error::Config(format!(
                "invalid layer channels {:?}",
                self.hidden
            )));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "kernel extent {} must be odd",
                self.kernel
            )));
        }
        Ok(())
    }

    pub fn layers(&self) -> usize {
        self.hidden.len()
    }

    /// Input channels seen by layer `j`.
    pub fn layer_input(&self, j: usize) -> usize {
        if j == 0 {
            self.input_channels
        } else {
            self.hidden[j - 1]
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLstmLayerParams {
    pub input_channels: usize,
    pub hidden_channels: usize,
    /// `[4U, C_in + U, k, k(, k)]`.
    pub kernel: Tensor,
    /// `[4U]`.
    pub bias: Tensor,
    /// Peepholes `W_ci`, `W_cf`, `W_co`, each `[U, grid...]`.
    pub peep_i: Tensor,
    pub peep_f: Tensor,
    pub peep_o: Tensor,
}

impl ConvLstmLayerParams {
    /// Fan-in uniform kernels, zero peepholes, zero biases except `b_f = 1`.
    pub fn init(
        input_channels: usize,
        hidden_channels: usize,
        kernel: usize,
        grid: &[usize],
        rng: &mut impl Rng,
    ) -> Self {
        let u = hidden_channels;
        let cin = input_channels + u;
        let mut kshape = vec![4 * u, cin];
        kshape.extend(std::iter::repeat_n(kernel, grid.len()));
        let taps = kernel.pow(grid.len() as u32);
        let bound = 1.0 / ((cin * taps) as f64).sqrt();
        let kernel = Tensor::from_fn(&kshape, |_| rng.gen_range(-bound..bound));
        let bias = Tensor::from_fn(&[4 * u], |i| {
            if i / u == Gate::Forget as usize {
                1.0
            } else {
                0.0
            }
        });
        let mut sshape = vec![u];
        sshape.extend_from_slice(grid);
        Self {
            input_channels,
            hidden_channels,
            kernel,
            bias,
            peep_i: Tensor::zeros(&sshape),
            peep_f: Tensor::zeros(&sshape),
            peep_o: Tensor::zeros(&sshape),
        }
    }

    /// All-zero parameters with the right shapes.
    pub fn zeros(
        input_channels: usize,
        hidden_channels: usize,
        kernel: usize,
        grid: &[usize],
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = Self::init(input_channels, hidden_channels, kernel, grid, &mut rng);
        p.kernel = Tensor::zeros(p.kernel.shape());
        p.bias = Tensor::zeros(p.bias.shape());
        p
    }

    fn kernel_block(&self, gate: Gate, from_hidden: bool) -> Tensor {
        let u = self.hidden_channels;
        let cin = self.input_channels + u;
        let taps: usize = self.kernel.shape()[2..].iter().product();
        let (c0, cn) = if from_hidden {
            (self.input_channels, u)
        } else {
            (0, self.input_channels)
        };
        let mut shape = vec![u, cn];
        shape.extend_from_slice(&self.kernel.shape()[2..]);
        let src = self.kernel.data();
        let mut out = Vec::with_capacity(u * cn * taps);
        for o in 0..u {
            let row = (gate as usize * u + o) * cin;
            out.extend_from_slice(&src[(row + c0) * taps..(row + c0 + cn) * taps]);
        }
        Tensor::from_vec(shape, out).expect("kernel block shape")
    }

    /// Input-to-gate kernel `W_x*`.
    pub fn w_x(&self, gate: Gate) -> Tensor {
        self.kernel_block(gate, false)
    }

    /// Hidden-to-gate kernel `W_h*`.
    pub fn w_h(&self, gate: Gate) -> Tensor {
        self.kernel_block(gate, true)
    }

    pub fn b(&self, gate: Gate) -> Tensor {
        let u = self.hidden_channels;
        self.bias
            .channel_slice(gate as usize * u, u)
            .expect("bias slice")
    }

    pub fn tensors(&self) -> [&Tensor; 5] {
        [
            &self.kernel,
            &self.bias,
            &self.peep_i,
            &self.peep_f,
            &self.peep_o,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 5] {
        [
            &mut self.kernel,
            &mut self.bias,
            &mut self.peep_i,
            &mut self.peep_f,
            &mut self.peep_o,
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerState {
    pub h: Tensor,
    pub c: Tensor,
}

/// Zero `(H, C)` for every layer.
pub fn init_state(config: &FexmConfig, grid: &[usize]) -> Vec<LayerState> {
    config
        .hidden
        .iter()
        .map(|&u| {
            let mut shape = vec![u];
            shape.extend_from_slice(grid);
            LayerState {
                h: Tensor::zeros(&shape),
                c: Tensor::zeros(&shape),
            }
        })
        .collect()
}

fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.spatial() != b.spatial() {
        return Err(TensorError::Shape {
            op: "concat",
            expected: a.spatial().to_vec(),
            got: b.spatial().to_vec(),
        }
        .into());
    }
    let mut shape = a.shape().to_vec();
    shape[0] += b.channels();
    let mut data = Vec::with_capacity(a.len() + b.len());
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Ok(Tensor::from_vec(shape, data)?)
}

/// One peephole cell update without recording gradients.
pub fn cell_step(
    input: &Tensor,
    state: &LayerState,
    params: &ConvLstmLayerParams,
) -> Result<LayerState> {
    if input.channels() != params.input_channels || state.c.shape() != params.peep_i.shape() {
        return Err(TensorError::Shape {
            op: "cell_step",
            expected: vec![params.input_channels],
            got: vec![input.channels()],
        }
        .into());
    }
    state.h.ensure_same_shape(&state.c, "cell_step")?;
    let z = conv_same(
        &concat_channels(input, &state.h)?,
        &params.kernel,
        &params.bias,
    )?;
    let n = state.c.len();
    let zd = z.data();
    let c_prev = state.c.data();
    let (pi, pf, po) = (
        params.peep_i.data(),
        params.peep_f.data(),
        params.peep_o.data(),
    );
    let mut c = vec![0.0; n];
    let mut h = vec![0.0; n];
    for k in 0..n {
        let i = sigmoid(zd[k] + pi[k] * c_prev[k]);
        let f = sigmoid(zd[n + k] + pf[k] * c_prev[k]);
        let g = zd[2 * n + k].tanh();
        c[k] = f * c_prev[k] + i * g;
        let o = sigmoid(zd[3 * n + k] + po[k] * c[k]);
        h[k] = o * c[k].tanh();
    }
    let shape = state.c.shape().to_vec();
    Ok(LayerState {
        h: Tensor::from_vec(shape.clone(), h)?,
        c: Tensor::from_vec(shape, c)?,
    })
}

/// Runs every layer once; returns the top hidden state and the new states.
pub fn stack_step(
    input: &Tensor,
    states: &[LayerState],
    params: &[ConvLstmLayerParams],
) -> Result<(Tensor, Vec<LayerState>)> {
    if states.len() != params.len() || params.is_empty() {
        return Err(Error::Config(format!(
            "{} states for {} layers",
            states.len(),
            params.len()
        )));
    }
    let mut next = Vec::with_capacity(states.len());
    let mut x = input.clone();
    for (s, p) in states.iter().zip(params) {
        let ns = cell_step(&x, s, p)?;
        x = ns.h.clone();
        next.push(ns);
    }
    Ok((x, next))
}

/// Layer parameters registered on a tape.
#[derive(Clone, Copy, Debug)]
pub struct LayerVars {
    pub kernel: Var,
    pub bias: Var,
    pub peep_i: Var,
    pub peep_f: Var,
    pub peep_o: Var,
    hidden: usize,
}

impl LayerVars {
    pub fn register(tape: &mut Tape, params: &ConvLstmLayerParams) -> Self {
        Self {
            kernel: tape.leaf(params.kernel.clone()),
            bias: tape.leaf(params.bias.clone()),
            peep_i: tape.leaf(params.peep_i.clone()),
            peep_f: tape.leaf(params.peep_f.clone()),
            peep_o: tape.leaf(params.peep_o.clone()),
            hidden: params.hidden_channels,
        }
    }

    pub fn vars(&self) -> [Var; 5] {
        [
            self.kernel,
            self.bias,
            self.peep_i,
            self.peep_f,
            self.peep_o,
        ]
    }
}

#[derive(Clone, Copy, Debug)]
pub struct StateVars {
    pub h: Var,
    pub c: Var,
}

impl StateVars {
    pub fn constant(tape: &mut Tape, state: &LayerState) -> Self {
        Self {
            h: tape.constant(state.h.clone()),
            c: tape.constant(state.c.clone()),
        }
    }
}

/// Differentiable version of [`cell_step`].
pub fn cell_step_tape(
    tape: &mut Tape,
    input: Var,
    state: StateVars,
    p: &LayerVars,
) -> Result<StateVars> {
    let u = p.hidden;
    let xh = tape.concat(&[input, state.h])?;
    let z = tape.conv_same(xh, p.kernel, p.bias)?;
    let zi = tape.slice_channels(z, 0, u)?;
    let zf = tape.slice_channels(z, u, u)?;
    let zc = tape.slice_channels(z, 2 * u, u)?;
    let zo = tape.slice_channels(z, 3 * u, u)?;

    let pic = tape.mul(p.peep_i, state.c)?;
    let ai = tape.add(zi, pic)?;
    let i = tape.sigmoid(ai);
    let pfc = tape.mul(p.peep_f, state.c)?;
    let af = tape.add(zf, pfc)?;
    let f = tape.sigmoid(af);
    let g = tape.tanh(zc);
    let keep = tape.mul(f, state.c)?;
    let write = tape.mul(i, g)?;
    let c = tape.add(keep, write)?;
    let poc = tape.mul(p.peep_o, c)?;
    let ao = tape.add(zo, poc)?;
    let o = tape.sigmoid(ao);
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc)?;
    Ok(StateVars { h, c })
}

/// Differentiable version of [`stack_step`].
pub fn stack_step_tape(
    tape: &mut Tape,
    input: Var,
    states: &[StateVars],
    params: &[LayerVars],
) -> Result<(Var, Vec<StateVars>)> {
    if states.len() != params.len() || params.is_empty() {
        return Err(Error::Config(format!(
            "{} states for {} layers",
            states.len(),
            params.len()
        )));
    }
    let mut next = Vec::with_capacity(states.len());
    let mut x = input;
    for (s, p) in states.iter().zip(params) {
        let ns = cell_step_tape(tape, x, *s, p)?;
        x = ns.h;
        next.push(ns);
    }
    Ok((x, next))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_conventions() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = ConvLstmLayerParams::init(5, 4, 3, &[9, 9], &mut rng);
        assert_eq!(p.kernel.shape(), &[16, 9, 3, 3]);
        let bound = 1.0 / (9.0f64 * 9.0).sqrt();
        assert!(p.kernel.data().iter().all(|v| v.abs() < bound));
        assert_eq!(p.b(Gate::Forget).data(), &[1.0; 4]);
        assert_eq!(p.b(Gate::Input).data(), &[0.0; 4]);
        assert_eq!(p.peep_o.shape(), &[4, 9, 9]);
        assert_eq!(p.w_x(Gate::Cell).shape(), &[4, 5, 3, 3]);
        assert_eq!(p.w_h(Gate::Output).shape(), &[4, 4, 3, 3]);
    }

    #[test]
    fn zero_params_zero_state() {
        let p = ConvLstmLayerParams::zeros(2, 3, 3, &[4, 4]);
        let s = init_state(
            &FexmConfig {
                input_channels: 2,
                hidden: vec![3],
                kernel: 3,
            },
            &[4, 4],
        );
        let x = Tensor::from_fn(&[2, 4, 4], |i| i as f64 * 0.1);
        let out = cell_step(&x, &s[0], &p).unwrap();
        assert!(out.h.data().iter().all(|&v| v == 0.0));
        assert!(out.c.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn saturated_forget_gate_keeps_cell() {
        let mut p = ConvLstmLayerParams::zeros(1, 2, 3, &[3, 3]);
        p.bias.data_mut()[2..4].fill(10.0);
        let s = LayerState {
            h: Tensor::zeros(&[2, 3, 3]),
            c: Tensor::full(&[2, 3, 3], 0.7),
        };
        let out = cell_step(&Tensor::ones(&[1, 3, 3]), &s, &p).unwrap();
        for &c in out.c.data() {
            assert!((c - sigmoid(10.0) * 0.7).abs() < 1e-15);
        }
    }

    #[test]
    fn shape_mismatch_is_error() {
        let p = ConvLstmLayerParams::zeros(2, 3, 3, &[4, 4]);
        let s = LayerState {
            h: Tensor::zeros(&[3, 4, 4]),
            c: Tensor::zeros(&[3, 4, 4]),
        };
        assert!(cell_step(&Tensor::zeros(&[3, 4, 4]), &s, &p).is_err());
        assert!(cell_step(&Tensor::zeros(&[2, 5, 4]), &s, &p).is_err());
    }
}
