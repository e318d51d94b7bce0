use std::path::Path;

use poster_nn::conv::conv_out_len;
use poster_nn::{Checkpoint, Conv2d, ConvTranspose2d, Linear, ParamId, ParamStore, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::LayoutDistribution;
use crate::error::{Error, Result};
use crate::raster::Grid;
use crate::smooth_region::SmoothRegionMap;

/// Negative-side slope of the hidden activations. Plain ReLU let whole runs
/// collapse to an input-independent output.
const LEAK: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct G1Config {
    pub map_width: usize,
    pub map_height: usize,
    /// Kernels per convolution layer.
    pub channels: usize,
    pub kernel: usize,
    /// Number of stride-2 conv layers (mirrored by transposed convs).
    pub depth: usize,
    /// Length of the encoder's output vector.
    pub feature_dim: usize,
    /// Channels of the learnable position-embedding map.
    pub embed_channels: usize,
    pub seed: u64,
}

impl Default for G1Config {
    fn default() -> Self {
        G1Config {
            map_width: 60,
            map_height: 80,
            channels: 16,
            kernel: 9,
            depth: 3,
            feature_dim: 64,
            embed_channels: 4,
            seed: 1,
        }
    }
}

/// Layout-distribution generator: `L = decoder(concat(encoder(A), E))`.
#[derive(Clone, Debug)]
pub struct G1Model {
    pub config: G1Config,
    pub store: ParamStore,
    encoder: Vec<Conv2d>,
    project: Linear,
    embedding: ParamId,
    decoder: Vec<ConvTranspose2d>,
    /// `(height, width)` at the input and after each encoder layer.
    levels: Vec<(usize, usize)>,
}

impl G1Model {
    pub fn new(config: G1Config) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let (k, pad) = (config.kernel, config.kernel / 2);
        let mut levels = vec![(config.map_height, config.map_width)];
        let mut encoder = Vec::new();
        for i in 0..config.depth {
            let (h, w) = *levels.last().expect("non-empty");
            let next = conv_out_len(h, k, 2, pad).zip(conv_out_len(w, k, 2, pad)).ok_or_else(|| {
                Error::Config(format!("map {}x{} too small for depth {}", config.map_width, config.map_height, config.depth))
            })?;
            levels.push(next);
            let in_ch = if i == 0 { 1 } else { config.channels };
            encoder.push(Conv2d::new(&mut store, &format!("g1.enc{i}"), in_ch, config.channels, k, 2, pad, &mut rng));
        }
        let (gh, gw) = *levels.last().expect("non-empty");
        let project = Linear::new(&mut store, "g1.project", config.channels * gh * gw, config.feature_dim, &mut rng);
        let embedding = store.add_uniform("g1.embedding", &[config.embed_channels, gh, gw], 0.1, &mut rng);
        let mut decoder = Vec::new();
        for i in 0..config.depth {
            let in_ch = if i == 0 { config.feature_dim + config.embed_channels } else { config.channels };
            let out_ch = if i + 1 == config.depth { 1 } else { config.channels };
            decoder.push(ConvTranspose2d::new(&mut store, &format!("g1.dec{i}"), in_ch, out_ch, k, 2, pad, &mut rng));
        }
        Ok(G1Model {
            config,
            store,
            encoder,
            project,
            embedding,
            decoder,
            levels,
        })
    }

    pub fn map_dims(&self) -> (usize, usize) {
        (self.config.map_width, self.config.map_height)
    }

    fn check_dims(&self, grid: &Grid) -> Result<()> {
        if (grid.width, grid.height) != self.map_dims() {
            return Err(Error::Config(format!(
                "g1 expects {}x{} maps, got {}x{}",
                self.config.map_width, self.config.map_height, grid.width, grid.height
            )));
        }
        Ok(())
    }

    /// Records the forward pass on `tape`; the result is `[1, H, W]` in `[0, 1]`.
    pub fn forward(&self, tape: &mut Tape, smooth: &Grid) -> Result<Var> {
        self.check_dims(smooth)?;
        let input = Tensor::new(vec![1, smooth.height, smooth.width], smooth.data.clone())?;
        let mut x = tape.input(input);
        for conv in &self.encoder {
            let y = conv.forward(tape, x)?;
            x = tape.leaky_relu(y, LEAK);
        }
        let feature = self.project.forward(tape, x)?;
        let feature = tape.leaky_relu(feature, LEAK);
        let (gh, gw) = *self.levels.last().expect("non-empty");
        let grid = tape.broadcast_spatial(feature, gh, gw)?;
        let embedding = tape.param(self.embedding);
        x = tape.concat(&[grid, embedding])?;
        for (i, dec) in self.decoder.iter().enumerate() {
            let target = self.levels[self.config.depth - 1 - i];
            let y = dec.forward_to(tape, x, target)?;
            x = if i + 1 == self.decoder.len() { tape.sigmoid(y) } else { tape.leaky_relu(y, LEAK) };
        }
        Ok(x)
    }

    pub fn predict(&self, smooth: &SmoothRegionMap) -> Result<LayoutDistribution> {
        let mut tape = Tape::new(&self.store);
        let out = self.forward(&mut tape, smooth)?;
        let data = tape.value(out).data().to_vec();
        Ok(LayoutDistribution(Grid::new(smooth.width, smooth.height, data)?))
    }

    /// Sets the output bias so an all-zero decoder input predicts `prior`.
    pub fn set_output_prior(&mut self, prior: f64) {
        let p = prior.clamp(1e-4, 1.0 - 1e-4);
        let last = self.decoder.last().expect("decoder has layers");
        self.store.get_mut(last.bias).value.fill((p / (1.0 - p)).ln());
    }

    /// Sets the final decoder layer's weights and bias to zero.
    pub fn zero_output_layer(&mut self) {
        let last = self.decoder.last().expect("decoder has layers");
        for id in [last.weight, last.bias] {
            self.store.get_mut(id).value.fill(0.0);
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let meta = serde_json::json!({ "kind": "g1", "config": self.config }).to_string();
        Checkpoint::from_store(meta, &self.store, None).save(path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::missing(path, "g1 checkpoint not found"));
        }
        let ckpt = Checkpoint::load(path)?;
        let meta: serde_json::Value = serde_json::from_str(&ckpt.metadata)?;
        if meta["kind"] != "g1" {
            return Err(Error::load(path, "checkpoint is not a g1 model"));
        }
        let config: G1Config = serde_json::from_value(meta["config"].clone())?;
        let mut model = G1Model::new(config)?;
        ckpt.load_into(&mut model.store)?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_sized_layers() {
        let model = G1Model::new(G1Config::default()).unwrap();
        assert_eq!(model.levels, vec![(80, 60), (40, 30), (20, 15), (10, 8)]);
        let w = model.store.get(model.encoder[1].weight).value.dims().to_vec();
        assert_eq!(w, vec![16, 16, 9, 9]);
        assert_eq!(model.store.get(model.project.weight).value.dims()[0], 64);
    }

    #[test]
    fn zero_logits_give_half() {
        let mut model = G1Model::new(G1Config::default()).unwrap();
        model.zero_output_layer();
        let mut a = Grid::filled(60, 80, 0.0);
        for i in 0..a.data.len() {
            a.data[i] = (i % 7 == 0) as u8 as f64;
        }
        let l = model.predict(&SmoothRegionMap(a)).unwrap();
        assert!(l.data.iter().all(|v| (*v - 0.5).abs() < 1e-12));
    }

    #[test]
    fn outputs_bounded_and_sized() {
        let model = G1Model::new(G1Config { seed: 9, ..Default::default() }).unwrap();
        let a = SmoothRegionMap(Grid::filled(60, 80, 1.0));
        let l = model.predict(&a).unwrap();
        assert_eq!((l.width, l.height), (60, 80));
        assert!(l.data.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
    }

    #[test]
    fn wrong_dims_is_config_error() {
        let model = G1Model::new(G1Config::default()).unwrap();
        let a = SmoothRegionMap(Grid::filled(30, 40, 1.0));
        assert!(matches!(model.predict(&a), Err(Error::Config(_))));
    }
}
