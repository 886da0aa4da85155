//! Scheduled-sampling training of the NEP network.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::convlstm::StateVars;
use crate::error::{Error, Result};
use crate::fem::SimulationRecord;
use crate::mesh::{build_input_tensor, NormalizationStats};
use crate::predict::{NepConfig, NepModel, NepVars};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub gamma: f64,
    /// Epochs between decay increments.
    pub k: usize,
    pub beta_p: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_base: f64,
    pub zeta_n: f64,
    pub zeta_e: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.7,
            k: 40,
            beta_p: 0.01,
            epochs: 600,
            batch_size: 32,
            lr_base: 1e-3,
            zeta_n: 1e4,
            zeta_e: 1e4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.gamma > 0.0
            && self.gamma < 1.0
            && self.beta_p > 0.0
            && self.beta_p < 1.0
            && self.k >= 1
            && self.epochs >= 1
            && self.batch_size >= 1
            && self.lr_base > 0.0
            && self.zeta_n >= 0.0
            && self.zeta_e >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid training config {self:?}")))
        }
    }
}

/// Ground-truth probability: `gamma^floor(epoch / k)`, or 0 once that falls
/// below `beta_p`.
pub fn ps_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    let kappa = (epoch / cfg.k) as i32;
    let ps = cfg.gamma.powi(kappa);
    if ps < cfg.beta_p {
        0.0
    } else {
        ps
    }
}

pub fn learning_rate(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr_base * (0.1 + 0.9 * ps_schedule(epoch, cfg))
}

/// Which input steps use the model's own previous coordinates. Step 0 is
/// always ground truth; every later step draws `P_r` in `[0, 1)` and
/// replaces when `P_r > P_s`.
pub fn draw_trace(steps: usize, ps: f64, rng: &mut impl Rng) -> Vec<bool> {
    (0..steps).map(|t| t > 0 && rng.gen::<f64>() > ps).collect()
}

/// Normalized targets of one simulation, shaped like the network outputs.
#[derive(Clone, Debug)]
pub struct Targets {
    pub node: Vec<Tensor>,
    pub element: Vec<Tensor>,
}

pub fn targets(sim: &SimulationRecord, stats: &NormalizationStats) -> Result<Targets> {
    let dims = sim.topology.node_dims().to_vec();
    let edims = sim.topology.element_dims();
    let mut node = Vec::with_capacity(sim.steps());
    let mut element = Vec::with_capacity(sim.steps());
    for f in &sim.frames[1..] {
        let mut ns = vec![dims.len()];
        ns.extend(&dims);
        node.push(Tensor::from_vec(ns, stats.normalize_coords(&f.coords))?);
        let mut es = vec![2];
        es.extend(&edims);
        let mut e = f.stress.clone();
        e.extend_from_slice(&f.strain);
        element.push(Tensor::from_vec(es, stats.normalize_elements(&e))?);
    }
    Ok(Targets { node, element })
}

/// Normalized input for step `t` given physical node coordinates.
fn step_input(
    sim: &SimulationRecord,
    stats: &NormalizationStats,
    coords: &[f64],
    t: usize,
) -> Result<Tensor> {
    let x = build_input_tensor(coords, &sim.load, &sim.topology, t, sim.steps())?;
    Ok(stats.normalize_input(&x))
}

/// Predicted sequences in normalized space plus the teacher-forcing trace.
#[derive(Clone, Debug)]
pub struct Rollout {
    pub node: Vec<Tensor>,
    pub element: Vec<Tensor>,
    pub replaced: Vec<bool>,
}

/// Gradient-free scheduled-sampling rollout over all `T` steps.
pub fn rollout(
    sim: &SimulationRecord,
    model: &NepModel,
    stats: &NormalizationStats,
    ps: f64,
    rng: &mut impl Rng,
) -> Result<Rollout> {
    let replaced = draw_trace(sim.steps(), ps, rng);
    let mut states = model.init_state();
    let mut node: Vec<Tensor> = Vec::with_capacity(sim.steps());
    let mut element = Vec::with_capacity(sim.steps());
    for (t, &use_pred) in replaced.iter().enumerate() {
        let coords = if use_pred {
            stats.denormalize_coords(node[t - 1].data())
        } else {
            sim.frames[t].coords.clone()
        };
        let x = step_input(sim, stats, &coords, t)?;
        let (yn, ye, next) = model.forward(&x, &states)?;
        states = next;
        node.push(yn);
        element.push(ye);
    }
    Ok(Rollout {
        node,
        element,
        replaced,
    })
}

/// Weighted node + element MSE over aligned sequences in normalized space.
pub fn ne_loss(
    pred_n: &[Tensor],
    gt_n: &[Tensor],
    pred_e: &[Tensor],
    gt_e: &[Tensor],
    zeta_n: f64,
    zeta_e: f64,
) -> Result<f64> {
    let term = |p: &[Tensor], g: &[Tensor]| -> Result<f64> {
        if p.len() != g.len() || p.is_empty() {
            return Err(Error::Training(format!(
                "{} predictions for {} targets",
                p.len(),
                g.len()
            )));
        }
        let mut sum = 0.0;
        for (a, b) in p.iter().zip(g) {
            a.ensure_same_shape(b, "ne_loss")?;
            sum += a
                .data()
                .iter()
                .zip(b.data())
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>();
        }
        Ok(sum / (p.len() * p[0].len()) as f64)
    };
    Ok(zeta_n * term(pred_n, gt_n)? + zeta_e * term(pred_e, gt_e)?)
}

/// Loss and parameter gradients of one simulation under a fixed trace.
/// Fed-back coordinates enter the tape as constants.
pub fn sim_loss_and_grads(
    sim: &SimulationRecord,
    targets: &Targets,
    model: &NepModel,
    stats: &NormalizationStats,
    replaced: &[bool],
    cfg: &TrainConfig,
) -> Result<(f64, Vec<Tensor>)> {
    let steps = sim.steps();
    let mut tape = Tape::new();
    let vars = NepVars::register(&mut tape, model);
    let mut states: Vec<StateVars> = model
        .init_state()
        .iter()
        .map(|s| StateVars::constant(&mut tape, s))
        .collect();
    let mut sum_n: Option<Var> = None;
    let mut sum_e: Option<Var> = None;
    let mut prev: Option<Var> = None;
    for t in 0..steps {
        let coords = match (replaced[t], prev) {
            (true, Some(p)) => stats.denormalize_coords(tape.value(p).data()),
            _ => sim.frames[t].coords.clone(),
        };
        let x = tape.constant(step_input(sim, stats, &coords, t)?);
        let (yn, ye, next) = vars.forward(&mut tape, x, &states)?;
        states = next;
        let gn = tape.constant(targets.node[t].clone());
        let ge = tape.constant(targets.element[t].clone());
        let dn = tape.sq_dist(yn, gn)?;
        let de = tape.sq_dist(ye, ge)?;
        sum_n = Some(match sum_n {
            Some(s) => tape.add(s, dn)?,
            None => dn,
        });
        sum_e = Some(match sum_e {
            Some(s) => tape.add(s, de)?,
            None => de,
        });
        prev = Some(yn);
    }
    let (sum_n, sum_e) = (sum_n.unwrap(), sum_e.unwrap());
    let n_vals = (steps * targets.node[0].len()) as f64;
    let e_vals = (steps * targets.element[0].len()) as f64;
    let ln = tape.scale(sum_n, cfg.zeta_n / n_vals);
    let le = tape.scale(sum_e, cfg.zeta_e / e_vals);
    let loss = tape.add(ln, le)?;
    let value = tape.value(loss).item();
    let grads = tape.backward(loss)?;
    Ok((
        value,
        vars.vars().iter().map(|&v| grads.wrt(&tape, v)).collect(),
    ))
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(shapes: &[&Tensor]) -> Self {
        Self {
            m: shapes.iter().map(|t| Tensor::zeros(t.shape())).collect(),
            v: shapes.iter().map(|t| Tensor::zeros(t.shape())).collect(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam update in place.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Training("parameter/gradient count mismatch".into()));
    }
    state.step += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    for (k, p) in params.iter_mut().enumerate() {
        p.ensure_same_shape(&grads[k], "adam_step")?;
        let (m, v) = (state.m[k].data_mut(), state.v[k].data_mut());
        for (((w, &g), mi), vi) in p.data_mut().iter_mut().zip(grads[k].data()).zip(m).zip(v) {
            *mi = b1 * *mi + (1.0 - b1) * g;
            *vi = b2 * *vi + (1.0 - b2) * g * g;
            *w -= lr * (*mi / c1) / ((*vi / c2).sqrt() + state.eps);
        }
    }
    Ok(())
}

/// One row of the training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-simulation loss.
    pub loss: f64,
    pub ps: f64,
    pub lr: f64,
    /// Steps (t > 0) that used the model's own coordinates.
    pub replaced: usize,
    pub draws: usize,
    /// Seconds since training started.
    pub wall_time: f64,
}

/// Runs the full training loop from a freshly initialized model.
pub fn train(
    train_set: &[SimulationRecord],
    stats: &NormalizationStats,
    arch: NepConfig,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(NepModel, Vec<EpochRecord>)> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    let mut model = NepModel::init(arch, cfg.seed)?;
    let all_targets: Vec<Targets> = train_set
        .iter()
        .map(|s| targets(s, stats))
        .collect::<Result<_>>()?;
    let mut adam = AdamState::new(&model.tensors());
    // the stream is offset from the init seed so the two never coincide
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let start = Instant::now();

    for epoch in 0..cfg.epochs {
        let ps = ps_schedule(epoch, cfg);
        let lr = learning_rate(epoch, cfg);
        order.shuffle(&mut rng);
        let (mut loss_sum, mut replaced, mut draws) = (0.0, 0usize, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let traces: Vec<Vec<bool>> = batch
                .iter()
                .map(|&i| draw_trace(train_set[i].steps(), ps, &mut rng))
                .collect();
            let results: Vec<Result<(f64, Vec<Tensor>)>> = batch
                .par_iter()
                .zip(&traces)
                .map(|(&i, trace)| {
                    sim_loss_and_grads(&train_set[i], &all_targets[i], &model, stats, trace, cfg)
                })
                .collect();
            let mut grads: Option<Vec<Tensor>> = None;
            for (r, (&i, trace)) in results.into_iter().zip(batch.iter().zip(&traces)) {
                let (loss, g) = r?;
                if !loss.is_finite() {
                    return Err(Error::Training(format!(
                        "non-finite loss {loss} at epoch {epoch} on simulation {i} (P_s = {ps})"
                    )));
                }
                loss_sum += loss;
                replaced += trace.iter().filter(|&&b| b).count();
                draws += trace.len().saturating_sub(1);
                match grads.as_mut() {
                    None => grads = Some(g),
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| a.add_assign(b)),
                }
            }
            let mut grads = grads.unwrap();
            let inv = 1.0 / batch.len() as f64;
            grads
                .iter_mut()
                .for_each(|g| g.data_mut().iter_mut().for_each(|v| *v *= inv));
            adam_step(&mut model.tensors_mut(), &grads, &mut adam, lr)?;
        }
        let rec = EpochRecord {
            epoch,
            loss: loss_sum / train_set.len() as f64,
            ps,
            lr,
            replaced,
            draws,
            wall_time: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {} loss {:.6e} P_s {:.4} lr {:.2e} replaced {}/{}",
            rec.epoch,
            rec.loss,
            rec.ps,
            rec.lr,
            rec.replaced,
            rec.draws
        );
        on_epoch(&rec);
        history.push(rec);
    }
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_examples() {
        let cfg = TrainConfig::default();
        assert_eq!(ps_schedule(0, &cfg), 1.0);
        assert_eq!(ps_schedule(39, &cfg), 1.0);
        assert!((ps_schedule(80, &cfg) - 0.49).abs() < 1e-15);
        assert!(ps_schedule(519, &cfg) > 0.0);
        assert_eq!(ps_schedule(520, &cfg), 0.0);
        assert!((learning_rate(0, &cfg) - 1e-3).abs() < 1e-18);
        assert!((learning_rate(600, &cfg) - 1e-4).abs() < 1e-18);
    }

    #[test]
    fn trace_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert!(draw_trace(50, 1.0, &mut rng).iter().all(|&b| !b));
        let all = draw_trace(50, 0.0, &mut rng);
        assert!(!all[0] && all[1..].iter().all(|&b| b));
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        let mut p = Tensor::from_fn(&[3], |i| i as f64);
        let mut st = AdamState::new(&[&p]);
        adam_step(
            &mut [&mut p],
            &[Tensor::from_fn(&[3], |i| [2.0, -0.5, 0.0][i])],
            &mut st,
            0.01,
        )
        .unwrap();
        assert!((p.data()[0] - (0.0 - 0.01)).abs() < 1e-9);
        assert!((p.data()[1] - (1.0 + 0.01)).abs() < 1e-9);
        assert_eq!(p.data()[2], 2.0);
    }
}
