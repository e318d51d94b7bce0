use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use postergen::compose::{generate, layout_for_background, GenerateConfig, Resources};
use postergen::dataset::{build_dataset, load_dataset, SynthConfig};
use postergen::error::{Error, Result};
use postergen::eval::{feature_set, frechet_distance, summarize};
use postergen::layout::{
    train_g1, G1Config, G1Example, G1Model, G2Config, G2Model, Layout, TextElement, TrainConfig,
};
use postergen::raster::{RasterImage, Rgb};
use postergen::retrieval::{build_synthetic_index, retrieve_top_k, EmbeddingIndex, EmbeddingProvider, ToyEmbedder};
use postergen::saliency::{spectral_residual_with, SaliencyConfig};
use postergen::smooth_region::{detect, SmoothRegionConfig};
use postergen::stylizer::{build_library, match_style, synthetic_style_corpus, StyleLibrary, StyleTuple};

#[derive(Parser)]
#[command(name = "text2poster", version, about = "Generate posters from text")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Spectral-residual saliency map as 8-bit grayscale.
    Saliency {
        image: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value_t = 64)]
        working_width: usize,
    },
    /// Smooth-region map and a debug overlay (saliency blue, regions red).
    Regions {
        image: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        map: PathBuf,
        #[arg(long, default_value_t = 60)]
        map_width: usize,
        #[arg(long, default_value_t = 80)]
        map_height: usize,
    },
    /// Writes a synthetic training set.
    Dataset {
        #[arg(short, long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Trains the layout-distribution model.
    TrainG1 {
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Trains the layout refiner.
    TrainG2 {
        #[command(flatten)]
        train: TrainArgs,
        /// Perturbation radius for both coordinates.
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
        /// Fraction of the way each refinement step moves towards the estimate.
        #[arg(long, default_value_t = 0.5)]
        relaxation: f64,
    },
    /// Predicts and refines a layout for an image.
    Layout {
        image: PathBuf,
        texts: PathBuf,
        #[arg(long)]
        g1: PathBuf,
        #[arg(long)]
        g2: PathBuf,
        #[arg(short = 'K', default_value_t = 5)]
        iterations: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Embedding index tools.
    Index {
        #[command(subcommand)]
        command: IndexCommand,
    },
    /// Ranks index images against a text query.
    Retrieve {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        text: String,
        #[arg(short, default_value_t = 5)]
        k: usize,
    },
    /// Style library tools.
    Styles {
        #[command(subcommand)]
        command: StylesCommand,
    },
    /// Fréchet-Layout Distance between two directories of layout JSON files.
    Eval {
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        reference: PathBuf,
    },
    /// Full pipeline: texts in, poster PNG and spec JSON out.
    Generate {
        #[arg(long)]
        texts: PathBuf,
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        g1: PathBuf,
        #[arg(long)]
        g2: PathBuf,
        #[arg(long)]
        styles: PathBuf,
        #[arg(short = 'K', default_value_t = 5)]
        iterations: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        spec: Option<PathBuf>,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory written by `dataset`.
    #[arg(long)]
    data: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    /// Defaults to 8 for g1 and 10 for g2.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Use the published lr 0.05 / batch 512 instead of the desk defaults.
    #[arg(long)]
    published: bool,
}

impl TrainArgs {
    fn config(&self, desk: TrainConfig) -> TrainConfig {
        let base = if self.published {
            TrainConfig::published()
        } else {
            desk
        };
        TrainConfig {
            learning_rate: self.lr.unwrap_or(base.learning_rate),
            batch_size: self.batch.unwrap_or(base.batch_size),
            epochs: self.epochs.unwrap_or(base.epochs),
            seed: self.seed,
            ..base
        }
    }
}

#[derive(Subcommand)]
enum IndexCommand {
    /// Validates a manifest and its data file; optionally re-exports it.
    Build {
        manifest: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Writes synthetic backgrounds with theme-caption embeddings.
    Synth {
        #[arg(short, long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, default_value_t = 256)]
        dim: usize,
    },
}

#[derive(Subcommand)]
enum StylesCommand {
    /// Clusters style tuples (JSON list) or a synthetic corpus into a library.
    Build {
        #[arg(long, conflicts_with = "synthetic")]
        tuples: Option<PathBuf>,
        /// Size of a synthetic corpus to cluster instead of `--tuples`.
        #[arg(long)]
        synthetic: Option<usize>,
        #[arg(short = 'M', default_value_t = 16)]
        clusters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 256)]
        dim: usize,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Picks a text colour and font for a text over a background colour.
    Match {
        #[arg(long)]
        styles: PathBuf,
        #[arg(long)]
        text: String,
        /// Background colour as #rrggbb.
        #[arg(long)]
        background: String,
        #[arg(long, default_value_t = 0.7)]
        weight: f64,
    },
}

fn read_texts(path: &Path) -> Result<Vec<TextElement>> {
    if !path.exists() {
        return Err(Error::MissingResource {
            path: path.to_path_buf(),
            reason: "texts file not found".into(),
        });
    }
    let texts: Vec<TextElement> = serde_json::from_str(&fs::read_to_string(path)?)?;
    if texts.is_empty() {
        return Err(Error::InvalidInput("texts file lists no texts".into()));
    }
    texts
        .into_iter()
        .map(|t| TextElement::new(t.text, t.attribute))
        .collect()
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn read_layouts(dir: &Path) -> Result<Vec<Layout>> {
    if !dir.is_dir() {
        return Err(Error::MissingResource {
            path: dir.to_path_buf(),
            reason: "not a directory".into(),
        });
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut layouts = Vec::new();
    for p in paths {
        let value: serde_json::Value = serde_json::from_str(&fs::read_to_string(&p)?)?;
        if let Some(l) = value.get("layout").or_else(|| value.get("boxes")) {
            if l.get("boxes").is_some() {
                layouts.push(serde_json::from_value(l.clone())?);
            }
        }
    }
    Ok(layouts)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Saliency {
            image,
            output,
            working_width,
        } => {
            let img = RasterImage::load(&image)?;
            let config = SaliencyConfig {
                working_width,
                ..SaliencyConfig::default()
            };
            spectral_residual_with(&img, &config)?.save_png(output)?;
        }
        Command::Regions {
            image,
            output,
            map,
            map_width,
            map_height,
        } => {
            let img = RasterImage::load(&image)?;
            let saliency = spectral_residual_with(&img, &SaliencyConfig::default())?;
            let (regions, smooth) = detect(&saliency.resized(map_width, map_height), &SmoothRegionConfig::default())?;
            smooth.save_png(map)?;
            let (w, h) = (img.width(), img.height());
            let full = smooth.resized(w, h);
            let mut overlay = RasterImage::filled(w, h, Rgb::BLACK);
            for y in 0..h {
                for x in 0..w {
                    overlay.set_pixel(x, y, Rgb::new(full.at(x, y).round(), 0.0, saliency.at(x, y)));
                }
            }
            overlay.save_png(output)?;
            print_json(&json!({ "regions": regions.len(), "coverage": smooth.mean() }))?;
        }
        Command::Dataset { n, seed, out } => {
            let manifest = build_dataset(n, seed, &out, &SynthConfig::default())?;
            print_json(&json!({ "count": manifest.count, "dir": out }))?;
        }
        Command::TrainG1 { train } => {
            let data = load_dataset(&train.data)?;
            let examples: Vec<G1Example> = data
                .train
                .iter()
                .map(|e| G1Example {
                    smooth: e.smooth.clone(),
                    distribution: e.distribution.clone(),
                })
                .collect();
            let (model, report) = train_g1(&examples, &train.config(TrainConfig::desk()), G1Config::default())?;
            model.save(&train.output)?;
            print_json(&json!({ "steps": report.steps(), "final_loss": report.losses.last() }))?;
        }
        Command::TrainG2 {
            train,
            delta,
            relaxation,
        } => {
            let data = load_dataset(&train.data)?;
            let mut model = G2Model::new(G2Config {
                relaxation,
                ..G2Config::default()
            })?;
            let report = model.fit(&data.train, &train.config(TrainConfig::desk_refiner()), [delta, delta])?;
            model.save(&train.output)?;
            print_json(&json!({ "steps": report.steps(), "final_loss": report.losses.last() }))?;
        }
        Command::Layout {
            image,
            texts,
            g1,
            g2,
            iterations,
            seed,
            output,
        } => {
            let texts = read_texts(&texts)?;
            let img = RasterImage::load(&image)?;
            let config = GenerateConfig {
                iterations,
                seed,
                ..GenerateConfig::default()
            };
            let trace = layout_for_background(&img, &texts, &G1Model::load(g1)?, &G2Model::load(g2)?, &config)?;
            let text = serde_json::to_string_pretty(&trace.refined)?;
            match output {
                Some(p) => fs::write(p, text)?,
                None => println!("{text}"),
            }
        }
        Command::Index { command } => match command {
            IndexCommand::Build { manifest, output } => {
                let index = EmbeddingIndex::import(&manifest)?;
                if let Some(out) = output {
                    index.export(out)?;
                }
                print_json(&json!({ "count": index.len(), "dim": index.dim() }))?;
            }
            IndexCommand::Synth { n, seed, out, dim } => {
                let index = build_synthetic_index(n, seed, &out, (300, 400), &ToyEmbedder { dim })?;
                print_json(&json!({ "count": index.len(), "manifest": out.join("index.json") }))?;
            }
        },
        Command::Retrieve { index, text, k } => {
            let index = EmbeddingIndex::import(index)?;
            let query = ToyEmbedder { dim: index.dim() }.embed(&text)?;
            let ranked: Vec<_> = retrieve_top_k(&index, &query, k)?
                .into_iter()
                .map(|(id, score)| json!({ "id": id, "score": score }))
                .collect();
            print_json(&json!(ranked))?;
        }
        Command::Styles { command } => match command {
            StylesCommand::Build {
                tuples,
                synthetic,
                clusters,
                seed,
                dim,
                output,
            } => {
                let tuples: Vec<StyleTuple> = match (tuples, synthetic) {
                    (Some(path), _) => {
                        if !path.exists() {
                            return Err(Error::MissingResource {
                                path,
                                reason: "style tuples not found".into(),
                            });
                        }
                        serde_json::from_str(&fs::read_to_string(&path)?)?
                    }
                    (None, Some(n)) => synthetic_style_corpus(n, seed, &ToyEmbedder { dim })?,
                    (None, None) => return Err(Error::InvalidInput("pass --tuples or --synthetic".into())),
                };
                let library = build_library(&tuples, clusters, seed)?;
                library.save(&output)?;
                print_json(&json!({ "centers": library.centers.len() }))?;
            }
            StylesCommand::Match {
                styles,
                text,
                background,
                weight,
            } => {
                let library = StyleLibrary::load(styles)?;
                let dim = library.centers[0].embedding.len();
                let r = ToyEmbedder { dim }.embed(&text)?;
                let m = match_style(&library, &r, Rgb::from_hex(&background)?, weight)?;
                print_json(&json!({
                    "center": m.center,
                    "text_color": m.text_color.to_hex(),
                    "font": m.font,
                    "contrast_flipped": m.flipped,
                }))?;
            }
        },
        Command::Eval { generated, reference } => {
            let a = feature_set(&read_layouts(&generated)?)?;
            let b = feature_set(&read_layouts(&reference)?)?;
            let d = frechet_distance(&a, &b)?;
            print_json(&json!({
                "metric": "Fréchet-Layout Distance",
                "distance": d,
                "generated": summarize(&a),
                "reference": summarize(&b),
            }))?;
        }
        Command::Generate {
            texts,
            index,
            g1,
            g2,
            styles,
            iterations,
            seed,
            output,
            spec,
        } => {
            let texts = read_texts(&texts)?;
            let resources = Resources::load(index, g1, g2, styles)?;
            let config = GenerateConfig {
                iterations,
                seed,
                ..GenerateConfig::default()
            };
            let (poster, image) = generate(&texts, &resources, &config)?;
            image.save_png(&output)?;
            if let Some(p) = spec {
                fs::write(p, poster.to_json()?)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
