use log::{debug, info};
use poster_nn::{Adam, AdamConfig, ParamStore, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{G1Config, G1Model, G2Config, G2Model, Layout, TextBox};
use crate::error::{Error, Result};
use crate::raster::Grid;

/// One `(Â, L̂)` pair.
#[derive(Clone, Debug)]
pub struct G1Example {
    pub smooth: Grid,
    pub distribution: Grid,
}

/// One `(Â, L̂, P̂)` triple.
#[derive(Clone, Debug)]
pub struct G2Example {
    pub smooth: Grid,
    pub distribution: Grid,
    pub layout: Layout,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stops after this many optimizer steps even if epochs remain.
    pub max_steps: Option<usize>,
    pub seed: u64,
}

impl TrainConfig {
    /// The published optimizer regime.
    pub fn published() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            batch_size: 512,
            epochs: 1,
            max_steps: None,
            seed: 0,
        }
    }

    /// Settings that converge on a single CPU in minutes.
    pub fn desk() -> Self {
        TrainConfig {
            learning_rate: 0.002,
            batch_size: 32,
            epochs: 8,
            ..Self::published()
        }
    }

    /// Desk settings for `g2`, which needs a smaller step and more passes
    /// before its context-only estimate beats the perturbed start.
    pub fn desk_refiner() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            epochs: 10,
            ..Self::desk()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::published()
    }
}

/// Iteration count and perturbation radius for the refiner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinementConfig {
    pub iterations: usize,
    pub delta: [f64; 2],
    pub seed: u64,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        RefinementConfig {
            iterations: 5,
            delta: [0.1, 0.1],
            seed: 0,
        }
    }
}

impl RefinementConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("refinement needs at least one iteration".into()));
        }
        if self.delta.iter().any(|d| !(0.0..=0.5).contains(d)) {
            return Err(Error::Config(format!("delta components must lie in [0, 0.5], got {:?}", self.delta)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean loss of each optimizer step's batch.
    pub losses: Vec<f64>,
}

impl TrainReport {
    pub fn steps(&self) -> usize {
        self.losses.len()
    }
}

/// Runs minibatch Adam. `sample_loss` records one example's loss on a tape
/// and returns its value and gradients.
fn run<F>(store: &mut ParamStore, n: usize, config: &TrainConfig, label: &str, mut sample_loss: F) -> Result<TrainReport>
where
    F: FnMut(&ParamStore, usize, &mut ChaCha8Rng) -> Result<(f64, poster_nn::Gradients)>,
{
    config.validate()?;
    if n == 0 {
        return Err(Error::invalid(format!("{label}: training set is empty")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(AdamConfig::with_learning_rate(config.learning_rate), store);
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..n).collect();
    'epochs: for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            if config.max_steps.is_some_and(|m| report.steps() >= m) {
                break 'epochs;
            }
            store.zero_grad();
            let mut total = 0.0;
            for &i in batch {
                let (loss, mut grads) = sample_loss(store, i, &mut rng)?;
                grads.scale(1.0 / batch.len() as f64);
                store.accumulate(&grads);
                total += loss;
            }
            adam.step(store);
            let mean = total / batch.len() as f64;
            if !mean.is_finite() {
                return Err(Error::invalid(format!("{label}: loss diverged at step {}", report.steps())));
            }
            report.losses.push(mean);
            debug!("{label} epoch {epoch} step {} loss {mean:.6}", report.steps());
        }
        if let Some(last) = report.losses.last() {
            info!("{label} epoch {epoch} done, last batch loss {last:.6}");
        }
    }
    Ok(report)
}

impl G1Model {
    /// Minimizes the mean squared pixel error between `g1(Â)` and `L̂`.
    pub fn fit(&mut self, data: &[G1Example], config: &TrainConfig) -> Result<TrainReport> {
        let mut store = std::mem::take(&mut self.store);
        let model = &*self;
        let result = run(&mut store, data.len(), config, "g1", |store, i, _| {
            let ex = &data[i];
            let target = Tensor::new(vec![1, ex.distribution.height, ex.distribution.width], ex.distribution.data.clone())?;
            let mut tape = Tape::new(store);
            let out = model.forward(&mut tape, &ex.smooth)?;
            let loss = tape.mse(out, target)?;
            let value = tape.value(loss).data()[0];
            Ok((value, tape.backward(loss)?))
        });
        self.store = store;
        result
    }
}

/// Fresh `g1` fitted to `data`. The output bias starts at the mean target
/// density; from 0.5 the sigmoid saturates at zero early and stays there.
pub fn train_g1(data: &[G1Example], config: &TrainConfig, model: G1Config) -> Result<(G1Model, TrainReport)> {
    let mut model = G1Model::new(model)?;
    if !data.is_empty() {
        let density = data.iter().map(|e| e.distribution.mean()).sum::<f64>() / data.len() as f64;
        model.set_output_prior(density);
    }
    let report = model.fit(data, config)?;
    Ok((model, report))
}

/// Draws `P⁽⁰⁾ ~ Uniform(P̂ − Δ, P̂ + Δ)` per box, then clamps into the canvas.
pub fn sample_perturbed<R: Rng + ?Sized>(truth: &Layout, delta: [f64; 2], rng: &mut R) -> Layout {
    let boxes = truth
        .boxes
        .iter()
        .map(|b| {
            let dx = if delta[0] > 0.0 { rng.random_range(-delta[0]..=delta[0]) } else { 0.0 };
            let dy = if delta[1] > 0.0 { rng.random_range(-delta[1]..=delta[1]) } else { 0.0 };
            TextBox { x: b.x + dx, y: b.y + dy, ..*b }.clamped()
        })
        .collect();
    Layout { boxes }
}

fn positions_tensor(layout: &Layout) -> Tensor {
    Tensor::vector(layout.boxes.iter().flat_map(|b| [b.x, b.y]).collect())
}

impl G2Model {
    /// Minimizes `mean_i ‖h(concat(Â, L̂), P⁽⁰⁾)_i − p̂_i‖²` over the position
    /// estimates, with fresh perturbations drawn for every visit of a sample.
    pub fn fit(&mut self, data: &[G2Example], config: &TrainConfig, delta: [f64; 2]) -> Result<TrainReport> {
        if delta.iter().any(|d| !(0.0..=0.5).contains(d)) {
            return Err(Error::Config(format!("delta components must lie in [0, 0.5], got {delta:?}")));
        }
        if let Some(i) = data.iter().position(|ex| ex.layout.is_empty()) {
            return Err(Error::invalid(format!("g2 example {i} has no boxes")));
        }
        let inputs = data
            .iter()
            .map(|ex| self.map_input(&ex.smooth, &ex.distribution))
            .collect::<Result<Vec<_>>>()?;
        let mut store = std::mem::take(&mut self.store);
        let model = &*self;
        let result = run(&mut store, data.len(), config, "g2", |store, i, rng| {
            let ex = &data[i];
            let start = sample_perturbed(&ex.layout, delta, rng);
            let mut tape = Tape::new(store);
            let context = model.encode(&mut tape, inputs[i].clone())?;
            let target = positions_tensor(&ex.layout);
            let out = model.positions(&mut tape, context, &start.boxes)?;
            let pred = tape.concat(&out)?;
            // mse averages over 2N coordinates; doubling gives the mean
            // per-box squared norm.
            let mse = tape.mse(pred, target)?;
            let loss = tape.scale(mse, 2.0);
            let value = tape.value(loss).data()[0];
            Ok((value, tape.backward(loss)?))
        });
        self.store = store;
        result
    }
}

pub fn train_g2(data: &[G2Example], config: &TrainConfig, delta: [f64; 2], model: G2Config) -> Result<(G2Model, TrainReport)> {
    let mut model = G2Model::new(model)?;
    let report = model.fit(data, config, delta)?;
    Ok((model, report))
}

/// Mean per-pixel squared error of `g1` over `data`.
pub fn g1_validation_mse(model: &G1Model, data: &[G1Example]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("validation set is empty"));
    }
    let mut total = 0.0;
    for ex in data {
        let pred = model.predict(&crate::smooth_region::SmoothRegionMap(ex.smooth.clone()))?;
        let n = pred.data.len() as f64;
        total += pred.data.iter().zip(&ex.distribution.data).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / n;
    }
    Ok(total / data.len() as f64)
}

/// Per-sample position errors of the refiner on perturbed ground truth.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PositionErrors {
    /// `mean_i ‖p_i⁽⁰⁾ − p̂_i‖` for each sample.
    pub initial: Vec<f64>,
    /// Error after each requested iteration count, indexed like `iterations`.
    pub refined: Vec<Vec<f64>>,
}

/// Perturbs each example's ground truth with `delta` and records the mean
/// box-position error before refinement and after each count in `iterations`.
pub fn g2_position_error(
    model: &G2Model,
    data: &[G2Example],
    delta: [f64; 2],
    iterations: &[usize],
    seed: u64,
) -> Result<PositionErrors> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut errors = PositionErrors {
        initial: Vec::with_capacity(data.len()),
        refined: vec![Vec::with_capacity(data.len()); iterations.len()],
    };
    let max_k = iterations.iter().copied().max().unwrap_or(0);
    for ex in data {
        let start = sample_perturbed(&ex.layout, delta, &mut rng);
        errors.initial.push(start.mean_position_error(&ex.layout));
        let context = model.context(&ex.smooth, &ex.distribution)?;
        let mut layout = start;
        for k in 1..=max_k {
            layout = model.step(&context, &layout)?;
            for (slot, _) in iterations.iter().enumerate().filter(|(_, &want)| want == k) {
                errors.refined[slot].push(layout.mean_position_error(&ex.layout));
            }
        }
        for (slot, _) in iterations.iter().enumerate().filter(|(_, &want)| want == 0) {
            errors.refined[slot].push(*errors.initial.last().expect("pushed above"));
        }
    }
    Ok(errors)
}
