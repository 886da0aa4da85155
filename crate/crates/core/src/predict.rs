//! Prediction module (node and element branches) and the full NEP network.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::convlstm::{
    init_state, stack_step, stack_step_tape, ConvLstmLayerParams, FexmConfig, LayerState,
    LayerVars, StateVars,
};
use crate::error::{Error, Result};
use crate::mesh::{element_dims, InputTensor};
use crate::tensor::{conv_valid, Tape, Tensor, Var};

/// Element outputs: effective stress and effective strain.
pub const ELEMENT_OUTPUTS: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct PmParams {
    /// `[K_n, U, 1, 1(, 1)]`.
    pub node_kernel: Tensor,
    pub node_bias: Tensor,
    /// `[K_e, U, 2, 2(, 2)]`.
    pub elem_kernel: Tensor,
    pub elem_bias: Tensor,
}

impl PmParams {
    pub fn init(hidden: usize, ndim: usize, rng: &mut impl Rng) -> Self {
        let mut uniform = |c_out: usize, k: usize| {
            let mut shape = vec![c_out, hidden];
            shape.extend(std::iter::repeat_n(k, ndim));
            let bound = 1.0 / ((hidden * k.pow(ndim as u32)) as f64).sqrt();
            Tensor::from_fn(&shape, |_| rng.gen_range(-bound..bound))
        };
        let node_kernel = uniform(ndim, 1);
        let elem_kernel = uniform(ELEMENT_OUTPUTS, 2);
        Self {
            node_kernel,
            node_bias: Tensor::zeros(&[ndim]),
            elem_kernel,
            elem_bias: Tensor::zeros(&[ELEMENT_OUTPUTS]),
        }
    }

    /// `(tanh(node conv), tanh(element conv))` of the top hidden state.
    pub fn predict(&self, h: &Tensor) -> Result<(Tensor, Tensor)> {
        let yn = conv_valid(h, &self.node_kernel, &self.node_bias)?.map(f64::tanh);
        let ye = conv_valid(h, &self.elem_kernel, &self.elem_bias)?.map(f64::tanh);
        Ok((yn, ye))
    }

    pub fn tensors(&self) -> [&Tensor; 4] {
        [
            &self.node_kernel,
            &self.node_bias,
            &self.elem_kernel,
            &self.elem_bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 4] {
        [
            &mut self.node_kernel,
            &mut self.node_bias,
            &mut self.elem_kernel,
            &mut self.elem_bias,
        ]
    }
}

#[derive(Clone, Copy, Debug)]
pub struct PmVars {
    pub node_kernel: Var,
    pub node_bias: Var,
    pub elem_kernel: Var,
    pub elem_bias: Var,
}

impl PmVars {
    pub fn register(tape: &mut Tape, p: &PmParams) -> Self {
        Self {
            node_kernel: tape.leaf(p.node_kernel.clone()),
            node_bias: tape.leaf(p.node_bias.clone()),
            elem_kernel: tape.leaf(p.elem_kernel.clone()),
            elem_bias: tape.leaf(p.elem_bias.clone()),
        }
    }

    pub fn predict(&self, tape: &mut Tape, h: Var) -> Result<(Var, Var)> {
        let zn = tape.conv_valid(h, self.node_kernel, self.node_bias)?;
        let ze = tape.conv_valid(h, self.elem_kernel, self.elem_bias)?;
        Ok((tape.tanh(zn), tape.tanh(ze)))
    }
}

/// Architecture of the whole network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NepConfig {
    pub node_dims: Vec<usize>,
    pub hidden: Vec<usize>,
    pub kernel: usize,
}

impl NepConfig {
    pub fn dim(&self) -> usize {
        self.node_dims.len()
    }

    pub fn fexm(&self) -> FexmConfig {
        FexmConfig {
            input_channels: InputTensor::channels_for(self.dim()),
            hidden: self.hidden.clone(),
            kernel: self.kernel,
        }
    }

    pub fn validate(&self) -> Result<()> {
        element_dims(&self.node_dims)?;
        self.fexm().validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NepModel {
    pub config: NepConfig,
    pub layers: Vec<ConvLstmLayerParams>,
    pub pm: PmParams,
}

impl NepModel {
    pub fn init(config: NepConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fexm = config.fexm();
        let layers = (0..fexm.layers())
            .map(|j| {
                ConvLstmLayerParams::init(
                    fexm.layer_input(j),
                    fexm.hidden[j],
                    fexm.kernel,
                    &config.node_dims,
                    &mut rng,
                )
            })
            .collect();
        let pm = PmParams::init(*fexm.hidden.last().unwrap(), config.dim(), &mut rng);
        Ok(Self { config, layers, pm })
    }

    /// Every parameter tensor in a fixed order: layer by layer, then the
    /// node and element branches.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = self.layers.iter().flat_map(|l| l.tensors()).collect();
        out.extend(self.pm.tensors());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = self
            .layers
            .iter_mut()
            .flat_map(|l| l.tensors_mut())
            .collect();
        out.extend(self.pm.tensors_mut());
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn init_state(&self) -> Vec<LayerState> {
        init_state(&self.config.fexm(), &self.config.node_dims)
    }

    /// One NEP step on a normalized input: `(Y^n, Y^e, new states)`.
    pub fn forward(
        &self,
        x: &Tensor,
        states: &[LayerState],
    ) -> Result<(Tensor, Tensor, Vec<LayerState>)> {
        let (h, next) = stack_step(x, states, &self.layers)?;
        let (yn, ye) = self.pm.predict(&h)?;
        Ok((yn, ye, next))
    }

    /// Replaces the parameters from a flat list in [`tensors`](Self::tensors) order.
    pub fn set_tensors(&mut self, values: Vec<Tensor>) -> Result<()> {
        let mut slots = self.tensors_mut();
        if values.len() != slots.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, got {}",
                slots.len(),
                values.len()
            )));
        }
        for (slot, v) in slots.iter_mut().zip(values) {
            if slot.shape() != v.shape() {
                return Err(Error::Config(format!(
                    "parameter shape {:?} does not match {:?}",
                    v.shape(),
                    slot.shape()
                )));
            }
            **slot = v;
        }
        Ok(())
    }
}

/// The model's parameters registered as tape leaves.
#[derive(Clone, Debug)]
pub struct NepVars {
    pub layers: Vec<LayerVars>,
    pub pm: PmVars,
}

impl NepVars {
    pub fn register(tape: &mut Tape, model: &NepModel) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| LayerVars::register(tape, l))
                .collect(),
            pm: PmVars::register(tape, &model.pm),
        }
    }

    /// Leaves in the same order as [`NepModel::tensors`].
    pub fn vars(&self) -> Vec<Var> {
        let mut out: Vec<Var> = self.layers.iter().flat_map(|l| l.vars()).collect();
        out.extend([
            self.pm.node_kernel,
            self.pm.node_bias,
            self.pm.elem_kernel,
            self.pm.elem_bias,
        ]);
        out
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        x: Var,
        states: &[StateVars],
    ) -> Result<(Var, Var, Vec<StateVars>)> {
        let (h, next) = stack_step_tape(tape, x, states, &self.layers)?;
        let (yn, ye) = self.pm.predict(tape, h)?;
        Ok((yn, ye, next))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(dims: &[usize]) -> NepConfig {
        NepConfig {
            node_dims: dims.to_vec(),
            hidden: vec![3, 4],
            kernel: 3,
        }
    }

    #[test]
    fn output_shapes_2d_and_3d() {
        for (dims, n_shape, e_shape) in [
            (vec![9, 9], vec![2, 9, 9], vec![2, 8, 8]),
            (vec![9, 9, 3], vec![3, 9, 9, 3], vec![2, 8, 8, 2]),
        ] {
            let m = NepModel::init(cfg(&dims), 3).unwrap();
            let mut xs = vec![m.config.fexm().input_channels];
            xs.extend(&dims);
            let (yn, ye, st) = m.forward(&Tensor::zeros(&xs), &m.init_state()).unwrap();
            assert_eq!(yn.shape(), &n_shape[..]);
            assert_eq!(ye.shape(), &e_shape[..]);
            assert_eq!(st.len(), 2);
        }
    }

    #[test]
    fn init_is_seeded() {
        let a = NepModel::init(cfg(&[5, 5]), 11).unwrap();
        let b = NepModel::init(cfg(&[5, 5]), 11).unwrap();
        let c = NepModel::init(cfg(&[5, 5]), 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn set_tensors_roundtrip_and_checks() {
        let a = NepModel::init(cfg(&[4, 4]), 1).unwrap();
        let mut b = NepModel::init(cfg(&[4, 4]), 2).unwrap();
        b.set_tensors(a.tensors().into_iter().cloned().collect())
            .unwrap();
        assert_eq!(a, b);
        assert!(b.set_tensors(vec![Tensor::zeros(&[1])]).is_err());
    }
}
