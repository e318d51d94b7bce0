use std::path::Path;

use poster_nn::conv::conv_out_len;
use poster_nn::{BiLstm, Checkpoint, Conv2d, Linear, ParamStore, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Layout, LayoutDistribution, TextBox};
use crate::error::{Error, Result};
use crate::raster::Grid;
use crate::smooth_region::SmoothRegionMap;

/// Per-box features besides the map context: x, y, width, height, attribute one-hot.
const BOX_FEATURES: usize = 7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct G2Config {
    pub map_width: usize,
    pub map_height: usize,
    /// Average-pooling factor applied to the two-channel map before encoding.
    pub pool: usize,
    pub channels: usize,
    pub kernel: usize,
    pub depth: usize,
    pub context_dim: usize,
    pub hidden: usize,
    pub lstm_layers: usize,
    /// Fraction of the way each step moves a box towards the network's
    /// position estimate: `p + relaxation * (h(p) - p)`. 1.0 jumps straight
    /// to the estimate.
    pub relaxation: f64,
    /// Appends normalized x and y coordinate channels to the encoder input.
    pub coord_channels: bool,
    pub seed: u64,
}

impl Default for G2Config {
    fn default() -> Self {
        G2Config {
            map_width: 60,
            map_height: 80,
            pool: 2,
            channels: 64,
            kernel: 5,
            depth: 3,
            context_dim: 64,
            hidden: 200,
            lstm_layers: 2,
            relaxation: 0.5,
            coord_channels: true,
            seed: 2,
        }
    }
}

/// Layout refiner: encodes `concat(A, L)` once into a context vector, then a
/// bidirectional LSTM over the boxes (in text order) predicts each box's new
/// top-left corner. Each refinement step moves the boxes part of the way
/// towards that estimate.
#[derive(Clone, Debug)]
pub struct G2Model {
    pub config: G2Config,
    pub store: ParamStore,
    encoder: Vec<Conv2d>,
    project: Linear,
    sequence: BiLstm,
    head: Linear,
}

impl G2Model {
    pub fn new(config: G2Config) -> Result<Self> {
        if !(config.relaxation > 0.0 && config.relaxation <= 1.0) {
            return Err(Error::Config(format!("relaxation must lie in (0, 1], got {}", config.relaxation)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let (k, pad) = (config.kernel, config.kernel / 2);
        let pool = config.pool.max(1);
        let mut dims = (config.map_height / pool, config.map_width / pool);
        let mut encoder = Vec::new();
        for i in 0..config.depth {
            dims = conv_out_len(dims.0, k, 2, pad)
                .zip(conv_out_len(dims.1, k, 2, pad))
                .ok_or_else(|| Error::Config("map too small for the g2 encoder".into()))?;
            let in_ch = if i == 0 { Self::input_channels(&config) } else { config.channels };
            encoder.push(Conv2d::new(&mut store, &format!("g2.enc{i}"), in_ch, config.channels, k, 2, pad, &mut rng));
        }
        let project = Linear::new(&mut store, "g2.project", config.channels * dims.0 * dims.1, config.context_dim, &mut rng);
        let sequence = BiLstm::new(
            &mut store,
            "g2.lstm",
            config.context_dim + BOX_FEATURES,
            config.hidden,
            config.lstm_layers,
            &mut rng,
        );
        let head = Linear::new(&mut store, "g2.head", 2 * config.hidden, 2, &mut rng);
        Ok(G2Model {
            config,
            store,
            encoder,
            project,
            sequence,
            head,
        })
    }

    pub fn map_dims(&self) -> (usize, usize) {
        (self.config.map_width, self.config.map_height)
    }

    fn input_channels(config: &G2Config) -> usize {
        if config.coord_channels {
            4
        } else {
            2
        }
    }

    /// Pooled input `[C, H/pool, W/pool]`: `A`, `L` and optionally the pixel
    /// centre coordinates in `[0, 1]`.
    pub fn map_input(&self, smooth: &Grid, distribution: &Grid) -> Result<Tensor> {
        for g in [smooth, distribution] {
            if (g.width, g.height) != self.map_dims() {
                return Err(Error::Config(format!(
                    "g2 expects {}x{} maps, got {}x{}",
                    self.config.map_width, self.config.map_height, g.width, g.height
                )));
            }
        }
        let pool = self.config.pool.max(1);
        let (w, h) = (self.config.map_width / pool, self.config.map_height / pool);
        let mut data = smooth.resized(w, h).data;
        data.extend(distribution.resized(w, h).data);
        if self.config.coord_channels {
            data.extend((0..h).flat_map(|_| (0..w).map(|x| (x as f64 + 0.5) / w as f64)));
            data.extend((0..h).flat_map(|y| (0..w).map(move |_| (y as f64 + 0.5) / h as f64)));
        }
        Ok(Tensor::new(vec![Self::input_channels(&self.config), h, w], data)?)
    }

    pub fn encode(&self, tape: &mut Tape, map_input: Tensor) -> Result<Var> {
        let mut x = tape.input(map_input);
        for conv in &self.encoder {
            let y = conv.forward(tape, x)?;
            x = tape.relu(y);
        }
        let c = self.project.forward(tape, x)?;
        Ok(tape.relu(c))
    }

    /// Position estimates `h(p)` on the tape: one `[2]` vector per box.
    pub fn positions(&self, tape: &mut Tape, context: Var, boxes: &[TextBox]) -> Result<Vec<Var>> {
        let mut steps = Vec::with_capacity(boxes.len());
        for b in boxes {
            let p = tape.input(Tensor::vector(vec![b.x, b.y]));
            let mut f = vec![b.width, b.height];
            f.extend(b.attribute.one_hot());
            let feats = tape.input(Tensor::vector(f));
            steps.push(tape.concat(&[context, p, feats])?);
        }
        let hidden = self.sequence.forward(tape, &steps)?;
        hidden
            .into_iter()
            .map(|h| {
                let y = self.head.forward(tape, h)?;
                Ok(tape.sigmoid(y))
            })
            .collect()
    }

    /// Context vector for a fixed `(A, L)` pair, computed without gradients.
    pub fn context(&self, smooth: &Grid, distribution: &Grid) -> Result<Tensor> {
        let input = self.map_input(smooth, distribution)?;
        let mut tape = Tape::new(&self.store);
        let c = self.encode(&mut tape, input)?;
        Ok(tape.value(c).clone())
    }

    /// Applies one refinement step given a precomputed context.
    pub fn step(&self, context: &Tensor, layout: &Layout) -> Result<Layout> {
        let mut tape = Tape::new(&self.store);
        let c = tape.input(context.clone());
        let out = self.positions(&mut tape, c, &layout.boxes)?;
        let boxes = layout
            .boxes
            .iter()
            .zip(out)
            .map(|(b, v)| {
                let h = tape.value(v).data();
                let a = self.config.relaxation;
                TextBox { x: b.x + a * (h[0] - b.x), y: b.y + a * (h[1] - b.y), ..*b }.clamped()
            })
            .collect();
        Ok(Layout { boxes })
    }

    /// `P(k+1) = g2(concat(A, L), P(k))` for `iterations` steps, clamping the
    /// boxes into the canvas after each one.
    pub fn refine(
        &self,
        smooth: &SmoothRegionMap,
        distribution: &LayoutDistribution,
        initial: &Layout,
        iterations: usize,
    ) -> Result<Layout> {
        if iterations == 0 || initial.is_empty() {
            return Ok(initial.clone());
        }
        let context = self.context(smooth, distribution)?;
        let mut layout = initial.clone();
        for _ in 0..iterations {
            layout = self.step(&context, &layout)?;
        }
        Ok(layout)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let meta = serde_json::json!({ "kind": "g2", "config": self.config }).to_string();
        Checkpoint::from_store(meta, &self.store, None).save(path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::missing(path, "g2 checkpoint not found"));
        }
        let ckpt = Checkpoint::load(path)?;
        let meta: serde_json::Value = serde_json::from_str(&ckpt.metadata)?;
        if meta["kind"] != "g2" {
            return Err(Error::load(path, "checkpoint is not a g2 model"));
        }
        let config: G2Config = serde_json::from_value(meta["config"].clone())?;
        let mut model = G2Model::new(config)?;
        ckpt.load_into(&mut model.store)?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::Attribute;

    fn small() -> G2Model {
        G2Model::new(G2Config { channels: 8, hidden: 12, context_dim: 8, ..Default::default() }).unwrap()
    }

    fn sample_layout() -> Layout {
        Layout {
            boxes: vec![
                TextBox { x: 0.1, y: 0.2, width: 0.4, height: 0.08, attribute: Attribute::Title },
                TextBox { x: 0.15, y: 0.35, width: 0.3, height: 0.05, attribute: Attribute::Subtitle },
            ],
        }
    }

    #[test]
    fn paper_sized_layers() {
        let model = G2Model::new(G2Config::default()).unwrap();
        let w = model.store.get(model.encoder[1].weight).value.dims().to_vec();
        assert_eq!(w, vec![64, 64, 5, 5]);
        assert_eq!(model.sequence.hidden, 200);
        assert_eq!(model.sequence.layers.len(), 2);
    }

    #[test]
    fn zero_iterations_is_identity() {
        let model = small();
        let a = SmoothRegionMap(Grid::filled(60, 80, 1.0));
        let l = LayoutDistribution(Grid::filled(60, 80, 0.3));
        let p0 = sample_layout();
        assert_eq!(model.refine(&a, &l, &p0, 0).unwrap(), p0);
    }

    #[test]
    fn iterations_compose() {
        let model = small();
        let a = SmoothRegionMap(Grid::filled(60, 80, 1.0));
        let l = LayoutDistribution(Grid::filled(60, 80, 0.3));
        let p0 = sample_layout();
        let once = model.refine(&a, &l, &p0, 1).unwrap();
        let twice = model.refine(&a, &l, &once, 1).unwrap();
        assert_eq!(twice, model.refine(&a, &l, &p0, 2).unwrap());
        for b in &twice.boxes {
            assert!(b.in_canvas());
        }
    }
}
