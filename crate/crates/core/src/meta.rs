//! Course meta features: a fixed-length descriptor built from a course's
//! duration, level, language and the three free-text fields.
//!
//! Text goes through a deterministic hashed character-n-gram embedder (a
//! stand-in for pretrained word vectors that needs no model file): each 3 to
//! 5 character gram hashes to one of 2^20 buckets, every bucket owns a seeded
//! random unit vector, tokens average their gram vectors and the text
//! averages its tokens. Real pretrained vectors can be supplied per course
//! through an external override instead.
//!
//! Under the default dims (title 30, short 30, long 58) the vector is
//! 1 + 3 + 2 + 30 + 30 + 58 = 124 wide.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Range;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::datamodel::{CourseMeta, Language, Level};
use crate::error::{CoreError, Result};
use crate::rng::{derive_seed_indexed, fnv1a64, rng_from_seed};

/// Meta vector length under [`MetaConfig::default`].
pub const META_DIM: usize = 124;

pub const N_META_SLICES: usize = 6;

pub const META_SLICE_NAMES: [&str; N_META_SLICES] = [
    "Duration",
    "Level",
    "Language",
    "Title",
    "ShortDescription",
    "LongDescription",
];

const NGRAM_MIN: usize = 3;
const NGRAM_MAX: usize = 5;
const TABLE_SIZE: u64 = 1 << 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaConfig {
    pub title_dim: usize,
    pub short_dim: usize,
    pub long_dim: usize,
    /// Seed for the hashed embedder's bucket vectors.
    pub embed_seed: u64,
}

impl Default for MetaConfig {
    fn default() -> Self {
        MetaConfig {
            title_dim: 30,
            short_dim: 30,
            long_dim: 58,
            embed_seed: 0,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, dim) in [
            ("title", self.title_dim),
            ("short description", self.short_dim),
            ("long description", self.long_dim),
        ] {
            if !(30..=60).contains(&dim) {
                return Err(CoreError::config(alloc::format!(
                    "{name} embedding dim {dim} outside 30..=60 (defaults give a {META_DIM}-dim vector)"
                )));
            }
        }
        Ok(())
    }

    pub fn total_dim(&self) -> usize {
        1 + 3 + 2 + self.title_dim + self.short_dim + self.long_dim
    }

    /// Index ranges of the six named slices, in layout order.
    pub fn slice_ranges(&self) -> [Range<usize>; N_META_SLICES] {
        let mut at = 0;
        let mut next = |len: usize| {
            let r = at..at + len;
            at += len;
            r
        };
        [
            next(1),
            next(3),
            next(2),
            next(self.title_dim),
            next(self.short_dim),
            next(self.long_dim),
        ]
    }
}

/// Duration plus one-hot level and language, pre-normalization.
pub fn encode_categorical(meta: &CourseMeta) -> (f64, [f64; 3], [f64; 2]) {
    let mut level = [0.0; 3];
    level[match meta.level {
        Level::Bachelor => 0,
        Level::Master => 1,
        Level::Propedeutic => 2,
    }] = 1.0;
    let mut language = [0.0; 2];
    language[match meta.language {
        Language::French => 0,
        Language::English => 1,
    }] = 1.0;
    (meta.duration_weeks as f64, level, language)
}

/// Deterministic hashed character-n-gram text embedder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl TextEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        TextEmbedder { dim, seed }
    }

    /// The unit vector owned by one hash bucket.
    fn bucket_vector(&self, bucket: u64) -> Vec<f64> {
        let mut rng = rng_from_seed(derive_seed_indexed(self.seed, "embed-bucket", bucket));
        let mut v: Vec<f64> = (0..self.dim).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let norm = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
        if norm == 0.0 {
            v[0] = 1.0;
        } else {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }

    fn gram_vector(&self, gram: &str) -> Vec<f64> {
        self.bucket_vector(fnv1a64(gram.as_bytes()) % TABLE_SIZE)
    }

    /// Mean of the token's gram vectors; a token shorter than the smallest
    /// gram hashes whole.
    fn token_vector(&self, token: &str) -> Vec<f64> {
        let chars: Vec<char> = token.chars().collect();
        if chars.len() < NGRAM_MIN {
            return self.gram_vector(token);
        }
        let mut sum = alloc::vec![0.0; self.dim];
        let mut count = 0usize;
        for width in NGRAM_MIN..=NGRAM_MAX.min(chars.len()) {
            for window in chars.windows(width) {
                let gram: String = window.iter().collect();
                for (s, g) in sum.iter_mut().zip(self.gram_vector(&gram)) {
                    *s += g;
                }
                count += 1;
            }
        }
        sum.iter_mut().for_each(|x| *x /= count as f64);
        sum
    }

    /// Lowercases, strips punctuation, splits on whitespace and averages the
    /// token vectors. Text with no tokens left embeds to all zeros.
    pub fn embed(&self, text: &str) -> Vec<f64> {
        let cleaned: String = text
            .chars()
            .flat_map(char::to_lowercase)
            .map(|c| if c.is_alphanumeric() { c } else { ' ' })
            .collect();
        let mut sum = alloc::vec![0.0; self.dim];
        let mut count = 0usize;
        for token in cleaned.split_whitespace() {
            for (s, t) in sum.iter_mut().zip(self.token_vector(token)) {
                *s += t;
            }
            count += 1;
        }
        if count > 0 {
            sum.iter_mut().for_each(|x| *x /= count as f64);
        }
        sum
    }
}

/// Pretrained replacement vectors for the three text slices of one course.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CourseVectors {
    pub title: Vec<f64>,
    pub short: Vec<f64>,
    pub long: Vec<f64>,
}

/// Per-course override of the hashed embedder, keyed by course id.
pub type ExternalEmbeddings = BTreeMap<String, CourseVectors>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaVector {
    pub course_id: String,
    pub values: Vec<f64>,
}

/// Builds the unnormalized meta vector for one course. When an override map
/// is given it must cover the course with correctly sized vectors.
pub fn assemble_meta(
    meta: &CourseMeta,
    cfg: &MetaConfig,
    external: Option<&ExternalEmbeddings>,
) -> Result<MetaVector> {
    cfg.validate()?;
    let id = meta.id();
    let (duration, level, language) = encode_categorical(meta);
    let mut values = Vec::with_capacity(cfg.total_dim());
    values.push(duration);
    values.extend_from_slice(&level);
    values.extend_from_slice(&language);
    match external {
        Some(map) => {
            let vecs = map.get(&id).ok_or_else(|| {
                CoreError::data(alloc::format!("external embeddings missing course {id}"))
            })?;
            for (name, vec, want) in [
                ("title", &vecs.title, cfg.title_dim),
                ("short", &vecs.short, cfg.short_dim),
                ("long", &vecs.long, cfg.long_dim),
            ] {
                if vec.len() != want {
                    return Err(CoreError::data(alloc::format!(
                        "external {name} vector for course {id} has {} dims, expected {want}",
                        vec.len()
                    )));
                }
                values.extend_from_slice(vec);
            }
        }
        None => {
            values.extend(TextEmbedder::new(cfg.title_dim, cfg.embed_seed).embed(&meta.title));
            values.extend(
                TextEmbedder::new(cfg.short_dim, cfg.embed_seed).embed(&meta.short_description),
            );
            values.extend(
                TextEmbedder::new(cfg.long_dim, cfg.embed_seed).embed(&meta.long_description),
            );
        }
    }
    debug_assert_eq!(values.len(), cfg.total_dim());
    Ok(MetaVector {
        course_id: id,
        values,
    })
}

/// Per-dimension min and max over the training courses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MetaStats {
    pub fn fit(vectors: &[MetaVector]) -> Result<MetaStats> {
        let dim = match vectors.first() {
            Some(v) => v.values.len(),
            None => {
                return Err(CoreError::data(
                    "cannot fit meta normalization bounds on an empty course set",
                ))
            }
        };
        let mut min = alloc::vec![f64::INFINITY; dim];
        let mut max = alloc::vec![f64::NEG_INFINITY; dim];
        for v in vectors {
            if v.values.len() != dim {
                return Err(CoreError::data(alloc::format!(
                    "meta vector for course {} has {} dims, expected {dim}",
                    v.course_id,
                    v.values.len()
                )));
            }
            for (k, &x) in v.values.iter().enumerate() {
                min[k] = min[k].min(x);
                max[k] = max[k].max(x);
            }
        }
        Ok(MetaStats { min, max })
    }

    /// Min-max maps a vector into the unit cube, clamping transfer values
    /// outside the fitted bounds. Constant dimensions map to zero.
    pub fn normalize(&self, v: &MetaVector) -> Result<MetaVector> {
        if v.values.len() != self.min.len() {
            return Err(CoreError::data(alloc::format!(
                "meta vector for course {} has {} dims, bounds were fitted for {}",
                v.course_id,
                v.values.len(),
                self.min.len()
            )));
        }
        let values = v
            .values
            .iter()
            .enumerate()
            .map(|(k, &x)| {
                let (lo, hi) = (self.min[k], self.max[k]);
                if hi == lo {
                    0.0
                } else {
                    ((x - lo) / (hi - lo)).clamp(0.0, 1.0)
                }
            })
            .collect();
        Ok(MetaVector {
            course_id: v.course_id.clone(),
            values,
        })
    }
}
