//! Cosine-similarity background retrieval over a flat embedding index.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::random_background;
use crate::error::{Error, Result};
use crate::layout::TextElement;

/// Produces fixed-size embeddings for text.
pub trait EmbeddingProvider: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f32>>;
}

fn norm(v: &[f32]) -> f64 {
    v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt()
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum()
}

pub fn cosine_similarity(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Config(format!("embedding dims differ: {} vs {}", a.len(), b.len())));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::invalid("cosine similarity of a zero vector"));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct IndexEntry {
    pub id: String,
    pub path: PathBuf,
    pub vector: Vec<f32>,
    norm: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingIndex {
    dim: usize,
    entries: Vec<IndexEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexManifest {
    pub version: u32,
    pub dim: usize,
    pub count: usize,
    /// Little-endian f32 row-major matrix, relative to the manifest.
    pub data: String,
    pub ids: Vec<String>,
    /// Image paths, relative to the manifest unless absolute.
    pub paths: Vec<String>,
}

impl EmbeddingIndex {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("embedding dim must be positive".into()));
        }
        Ok(EmbeddingIndex { dim, entries: Vec::new() })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn get(&self, id: &str) -> Option<&IndexEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn push(&mut self, id: impl Into<String>, path: impl Into<PathBuf>, vector: Vec<f32>) -> Result<()> {
        let id = id.into();
        if vector.len() != self.dim {
            return Err(Error::Config(format!("entry {id}: dim {} != index dim {}", vector.len(), self.dim)));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("entry {id}: non-finite value")));
        }
        let n = norm(&vector);
        if n == 0.0 {
            return Err(Error::invalid(format!("entry {id}: zero vector")));
        }
        if self.get(&id).is_some() {
            return Err(Error::invalid(format!("duplicate image id {id}")));
        }
        self.entries.push(IndexEntry {
            id,
            path: path.into(),
            vector,
            norm: n,
        });
        Ok(())
    }

    /// Writes the manifest and, next to it, the binary matrix `<stem>.f32`.
    pub fn export(&self, manifest_path: impl AsRef<Path>) -> Result<()> {
        let manifest_path = manifest_path.as_ref();
        let stem = manifest_path.file_stem().and_then(|s| s.to_str()).unwrap_or("index");
        let data_name = format!("{stem}.f32");
        let dir = manifest_path.parent().unwrap_or(Path::new(""));
        let mut bytes = Vec::with_capacity(self.len() * self.dim * 4);
        for e in &self.entries {
            for v in &e.vector {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        fs::write(dir.join(&data_name), bytes)?;
        let manifest = IndexManifest {
            version: 1,
            dim: self.dim,
            count: self.len(),
            data: data_name,
            ids: self.entries.iter().map(|e| e.id.clone()).collect(),
            paths: self.entries.iter().map(|e| e.path.to_string_lossy().into_owned()).collect(),
        };
        fs::write(manifest_path, serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn import(manifest_path: impl AsRef<Path>) -> Result<Self> {
        let path = manifest_path.as_ref();
        if !path.exists() {
            return Err(Error::missing(path, "index manifest not found"));
        }
        let manifest: IndexManifest =
            serde_json::from_str(&fs::read_to_string(path)?).map_err(|e| Error::load(path, e.to_string()))?;
        if manifest.count == 0 {
            return Err(Error::load(path, "index is empty"));
        }
        if manifest.ids.len() != manifest.count || manifest.paths.len() != manifest.count {
            return Err(Error::load(
                path,
                format!(
                    "count {} but {} ids and {} paths",
                    manifest.count,
                    manifest.ids.len(),
                    manifest.paths.len()
                ),
            ));
        }
        if manifest.dim == 0 {
            return Err(Error::load(path, "dim must be positive"));
        }
        let dir = path.parent().unwrap_or(Path::new(""));
        let data_path = dir.join(&manifest.data);
        if !data_path.exists() {
            return Err(Error::missing(&data_path, "index data file not found"));
        }
        let bytes = fs::read(&data_path)?;
        let row_bytes = manifest.dim * 4;
        let full_rows = bytes.len() / row_bytes;
        if bytes.len() != manifest.count * row_bytes {
            let row = full_rows.min(manifest.count);
            return Err(Error::load(
                &data_path,
                format!(
                    "row {row} ({}) has the wrong length: file holds {} bytes, expected {} rows of {} f32",
                    manifest.ids.get(row).map(String::as_str).unwrap_or("past the last id"),
                    bytes.len(),
                    manifest.count,
                    manifest.dim
                ),
            ));
        }
        let mut index = EmbeddingIndex::new(manifest.dim)?;
        for (row, chunk) in bytes.chunks_exact(row_bytes).enumerate() {
            let vector: Vec<f32> = chunk
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            let id = &manifest.ids[row];
            let image = PathBuf::from(&manifest.paths[row]);
            let image = if image.is_absolute() { image } else { dir.join(image) };
            index
                .push(id.clone(), image, vector)
                .map_err(|e| Error::load(&data_path, format!("row {row} ({id}): {e}")))?;
        }
        Ok(index)
    }
}

fn rank(mut scored: Vec<(usize, f64)>, index: &EmbeddingIndex, k: usize) -> Vec<(String, f64)> {
    scored.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then_with(|| index.entries[a.0].id.cmp(&index.entries[b.0].id))
    });
    scored
        .into_iter()
        .take(k)
        .map(|(i, s)| (index.entries[i].id.clone(), s))
        .collect()
}

fn check_query(index: &EmbeddingIndex, query: &[f32], k: usize) -> Result<f64> {
    if index.is_empty() {
        return Err(Error::invalid("retrieval from an empty index"));
    }
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if query.len() != index.dim {
        return Err(Error::Config(format!("query dim {} != index dim {}", query.len(), index.dim)));
    }
    let n = norm(query);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::invalid("query must be a finite non-zero vector"));
    }
    Ok(n)
}

/// The `k` most cosine-similar entries, best first; ties go to the smaller id.
pub fn retrieve_top_k(index: &EmbeddingIndex, query: &[f32], k: usize) -> Result<Vec<(String, f64)>> {
    let qn = check_query(index, query, k)?;
    let scored = index
        .entries
        .par_iter()
        .enumerate()
        .map(|(i, e)| (i, (dot(query, &e.vector) / (qn * e.norm)).clamp(-1.0, 1.0)))
        .collect();
    Ok(rank(scored, index, k))
}

/// Single-threaded [`retrieve_top_k`].
pub fn retrieve_top_k_sequential(index: &EmbeddingIndex, query: &[f32], k: usize) -> Result<Vec<(String, f64)>> {
    let qn = check_query(index, query, k)?;
    let scored = index
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| (i, (dot(query, &e.vector) / (qn * e.norm)).clamp(-1.0, 1.0)))
        .collect();
    Ok(rank(scored, index, k))
}

/// The retrieval query string: all texts joined by single spaces, in order.
pub fn query_text(texts: &[TextElement]) -> String {
    texts.iter().map(|t| t.text.as_str()).collect::<Vec<_>>().join(" ")
}

fn fnv1a(bytes: &[u8], salt: u64) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ salt;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Hashed character-trigram and word features, L2-normalized. A stand-in for
/// a learned text encoder.
pub fn toy_text_embed(text: &str, dim: usize) -> Result<Vec<f32>> {
    if dim == 0 {
        return Err(Error::Config("embedding dim must be positive".into()));
    }
    let lower = text.to_lowercase();
    let words: Vec<&str> = lower.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).collect();
    if words.is_empty() {
        return Err(Error::invalid("cannot embed text without alphanumeric characters"));
    }
    let mut v = vec![0f64; dim];
    let mut add = |feature: &[u8], weight: f64| {
        let h = fnv1a(feature, 0);
        let sign = if fnv1a(feature, 0x9e37_79b9) & 1 == 0 { 1.0 } else { -1.0 };
        v[(h % dim as u64) as usize] += sign * weight;
    };
    for w in &words {
        add(w.as_bytes(), 1.0);
        let padded: Vec<char> = format!("<{w}>").chars().collect();
        for gram in padded.windows(3) {
            add(gram.iter().collect::<String>().as_bytes(), 0.5);
        }
    }
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        // Every feature cancelled out; fall back to a fixed direction.
        let mut out = vec![0f32; dim];
        out[(fnv1a(lower.as_bytes(), 0) % dim as u64) as usize] = 1.0;
        return Ok(out);
    }
    Ok(v.iter().map(|x| (x / n) as f32).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyEmbedder {
    pub dim: usize,
}

impl Default for ToyEmbedder {
    fn default() -> Self {
        ToyEmbedder { dim: 256 }
    }
}

impl EmbeddingProvider for ToyEmbedder {
    fn name(&self) -> &str {
        "toy-hashed-ngrams-v1"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>> {
        toy_text_embed(text, self.dim)
    }
}

/// Caption themes for synthetic backgrounds.
pub const THEMES: &[&str] = &[
    "summer music festival",
    "wedding day celebration",
    "quarterly business report",
    "coffee shop opening",
    "spring garden fair",
    "jazz night live",
    "city marathon run",
    "modern art exhibition",
    "film screening night",
    "farmers market weekend",
    "ocean beach party",
    "forest hiking tour",
    "book club meeting",
    "charity gala dinner",
    "dance studio classes",
    "tech conference keynote",
];

/// Writes `n` synthetic backgrounds under `dir/images`, embeds a theme
/// caption for each with `provider`, and exports `dir/index.json`.
pub fn build_synthetic_index(
    n: usize,
    seed: u64,
    dir: impl AsRef<Path>,
    canvas: (usize, usize),
    provider: &dyn EmbeddingProvider,
) -> Result<EmbeddingIndex> {
    if n == 0 {
        return Err(Error::invalid("synthetic index needs at least one image"));
    }
    let dir = dir.as_ref();
    fs::create_dir_all(dir.join("images"))?;
    let rows = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            let theme = THEMES[rng.random_range(0..THEMES.len())];
            let (img, _) = random_background(&mut rng, canvas.0, canvas.1);
            let id = format!("img{i:05}");
            let rel = format!("images/{id}.png");
            img.save_png(dir.join(&rel))?;
            Ok((id, rel, provider.embed(theme)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut index = EmbeddingIndex::new(provider.dim())?;
    for (id, rel, v) in rows {
        index.push(id, rel, v)?;
    }
    index.export(dir.join("index.json"))?;
    EmbeddingIndex::import(dir.join("index.json"))
}
