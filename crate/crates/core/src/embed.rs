//! Deterministic text-embedding table and a small tanh MLP point encoder with
//! an exact hand-written backward pass.
//!
//! Text embeddings are unit vectors drawn from a Gaussian stream seeded by a
//! stable string hash, so a given (entity, seed, dim) always produces the same
//! vector regardless of vocabulary order. Encoder outputs are L2-normalized
//! rows; normalization uses `v / max(|v|, 1e-12)` and its derivative is
//! handled analytically in the backward pass.

use std::collections::{BTreeMap, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix, Vec3};
use crate::scalar::{mix_seed, stable_hash, Real};
use crate::scene::GlobalScene;

pub const NORM_EPS: f64 = 1e-12;

/// Entity string -> unit embedding of a fixed dimension.
#[derive(Clone, Debug)]
pub struct TextEmbeddingTable<F> {
    dim: usize,
    seed: u64,
    entries: BTreeMap<String, Vec<F>>,
}

/// Unit embedding for one entity; a pure function of (string, seed, dim).
pub fn entity_vector<F: Real>(entity: &str, dim: usize, seed: u64) -> Vec<F> {
    let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(entity) ^ seed);
    let mut v: Vec<F> = (0..dim)
        .map(|_| {
            let g: f64 = StandardNormal.sample(&mut rng);
            F::of(g)
        })
        .collect();
    normalize_in_place(&mut v);
    v
}

/// Build the embedding table for a vocabulary.
pub fn embed_entities<F: Real>(
    vocabulary: &[String],
    dim: usize,
    seed: u64,
) -> TextEmbeddingTable<F> {
    assert!(dim >= 2, "embedding dim must be >= 2");
    let mut table = TextEmbeddingTable {
        dim,
        seed,
        entries: BTreeMap::new(),
    };
    table.extend(vocabulary.iter().map(String::as_str));
    table
}

impl<F: Real> TextEmbeddingTable<F> {
    /// Table over caller-supplied vectors (e.g. embeddings produced by a real
    /// text encoder). Vectors are used as given; callers keep them unit-norm.
    pub fn with_vectors(
        dim: usize,
        seed: u64,
        entries: impl IntoIterator<Item = (String, Vec<F>)>,
    ) -> Self {
        let entries: BTreeMap<String, Vec<F>> = entries.into_iter().collect();
        for v in entries.values() {
            assert_eq!(v.len(), dim, "embedding dimension mismatch");
        }
        Self { dim, seed, entries }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn extend<'a>(&mut self, entities: impl IntoIterator<Item = &'a str>) {
        for e in entities {
            if !self.entries.contains_key(e) {
                self.entries
                    .insert(e.to_string(), entity_vector(e, self.dim, self.seed));
            }
        }
    }

    pub fn vector(&self, entity: &str) -> Option<&[F]> {
        self.entries.get(entity).map(Vec::as_slice)
    }

    /// One embedding row per entity, in the given order.
    pub fn rows(&self, entities: &[String]) -> Result<Matrix<F>> {
        if entities.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        let mut m = Matrix::zeros(entities.len(), self.dim);
        for (i, e) in entities.iter().enumerate() {
            let v = self
                .vector(e)
                .ok_or_else(|| Error::invalid_config("vocabulary", format!("unknown entity `{e}`")))?;
            m.row_mut(i).copy_from_slice(v);
        }
        Ok(m)
    }
}

fn normalize_in_place<F: Real>(v: &mut [F]) {
    let n = dot(v, v).sqrt().max(F::of(NORM_EPS));
    for x in v.iter_mut() {
        *x = *x / n;
    }
}

/// Maps world positions into the encoder's input box: xyz scaled by the room
/// half-extent to roughly [-1, 1], followed by rgb.
#[derive(Clone, Copy, Debug)]
pub struct SceneNormalizer<F> {
    pub center: Vec3<F>,
    pub half_extent: Vec3<F>,
}

impl<F: Real> SceneNormalizer<F> {
    /// Room volume centered at the origin with the given full extent.
    pub fn from_room_extent(extent: Vec3<F>) -> Self {
        Self {
            center: Vec3::zeros(),
            half_extent: clamp_half(extent * F::of(0.5)),
        }
    }

    pub fn from_scene(scene: &GlobalScene<F>) -> Self {
        let (lo, hi) = scene.bounding_box();
        Self {
            center: (lo + hi) * F::of(0.5),
            half_extent: clamp_half((hi - lo) * F::of(0.5)),
        }
    }

    pub fn input_row(&self, position: Vec3<F>, color: [F; 3]) -> [F; 6] {
        let p = position - self.center;
        [
            p.x / self.half_extent.x,
            p.y / self.half_extent.y,
            p.z / self.half_extent.z,
            color[0],
            color[1],
            color[2],
        ]
    }

    pub fn inputs<'a>(
        &self,
        items: impl IntoIterator<Item = (Vec3<F>, [F; 3])> + 'a,
    ) -> Matrix<F> {
        let mut data = Vec::new();
        let mut rows = 0;
        for (p, c) in items {
            data.extend_from_slice(&self.input_row(p, c));
            rows += 1;
        }
        Matrix { rows, cols: 6, data }
    }
}

fn clamp_half<F: Real>(half: Vec3<F>) -> Vec3<F> {
    let floor = F::of(1e-6);
    Vec3::new(half.x.max(floor), half.y.max(floor), half.z.max(floor))
}

/// MLP parameters: tanh hidden layers, linear output, L2-normalized rows.
/// Weights are row-major `out x in` per layer.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams<F> {
    pub layer_sizes: Vec<usize>,
    pub weights: Vec<Vec<F>>,
    pub biases: Vec<Vec<F>>,
    pub seed: u64,
}

/// Per-layer gradient (or moment) buffers shaped like [`EncoderParams`].
#[derive(Clone, Debug)]
pub struct EncoderGradients<F> {
    pub weights: Vec<Vec<F>>,
    pub biases: Vec<Vec<F>>,
}

impl<F: Real> EncoderGradients<F> {
    pub fn zeros_like(params: &EncoderParams<F>) -> Self {
        Self {
            weights: params.weights.iter().map(|w| vec![F::zero(); w.len()]).collect(),
            biases: params.biases.iter().map(|b| vec![F::zero(); b.len()]).collect(),
        }
    }

    pub fn accumulate(&mut self, other: &Self) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    pub fn scale(&mut self, s: F) {
        for w in &mut self.weights {
            for x in w.iter_mut() {
                *x = *x * s;
            }
        }
        for b in &mut self.biases {
            for x in b.iter_mut() {
                *x = *x * s;
            }
        }
    }
}

/// Activations cached by the forward pass; sufficient for an exact backward.
#[derive(Clone, Debug)]
pub struct ForwardCache<F> {
    /// Input to each layer: `layer_inputs[0]` is the batch input,
    /// `layer_inputs[l]` the post-tanh output feeding layer `l`.
    layer_inputs: Vec<Matrix<F>>,
    /// Pre-normalization output rows.
    prenorm: Matrix<F>,
    /// Per-row clamped norms of `prenorm`.
    norms: Vec<F>,
    /// Normalized output rows (the features returned to the caller).
    features: Matrix<F>,
}

impl<F: Real> EncoderParams<F> {
    /// Gaussian init with std 1/sqrt(fan_in), seeded.
    pub fn init(layer_sizes: &[usize], seed: u64) -> Self {
        assert!(layer_sizes.len() >= 2, "need at least input and output sizes");
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x656e_63));
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..layer_sizes.len() - 1 {
            let fan_in = layer_sizes[l];
            let fan_out = layer_sizes[l + 1];
            let std = 1.0 / (fan_in as f64).sqrt();
            let w: Vec<F> = (0..fan_in * fan_out)
                .map(|_| {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    F::of(g * std)
                })
                .collect();
            weights.push(w);
            biases.push(vec![F::zero(); fan_out]);
        }
        Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            seed,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn layer_count(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// Flat parameter view in a fixed order (per layer: weights then bias);
    /// the checkpoint blob and finite-difference probes share this order.
    pub fn flat_get(&self, mut idx: usize) -> F {
        for l in 0..self.layer_count() {
            if idx < self.weights[l].len() {
                return self.weights[l][idx];
            }
            idx -= self.weights[l].len();
            if idx < self.biases[l].len() {
                return self.biases[l][idx];
            }
            idx -= self.biases[l].len();
        }
        panic!("flat index out of range");
    }

    pub fn flat_set(&mut self, mut idx: usize, value: F) {
        for l in 0..self.layer_count() {
            if idx < self.weights[l].len() {
                self.weights[l][idx] = value;
                return;
            }
            idx -= self.weights[l].len();
            if idx < self.biases[l].len() {
                self.biases[l][idx] = value;
                return;
            }
            idx -= self.biases[l].len();
        }
        panic!("flat index out of range");
    }

    pub fn flat_values(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in 0..self.layer_count() {
            out.extend(self.weights[l].iter().map(|w| w.widen()));
            out.extend(self.biases[l].iter().map(|b| b.widen()));
        }
        out
    }

    pub fn set_flat_values(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                values.len()
            )));
        }
        let mut it = values.iter();
        for l in 0..self.layer_count() {
            for w in self.weights[l].iter_mut() {
                *w = F::of(*it.next().unwrap());
            }
            for b in self.biases[l].iter_mut() {
                *b = F::of(*it.next().unwrap());
            }
        }
        Ok(())
    }

    /// Forward pass returning unit-norm feature rows and the cache needed by
    /// [`EncoderParams::backward`].
    pub fn forward(&self, inputs: &Matrix<F>) -> Result<(Matrix<F>, ForwardCache<F>)> {
        if inputs.cols != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "encoder expects {} input columns, got {}",
                self.input_dim(),
                inputs.cols
            )));
        }
        let n = inputs.rows;
        let mut layer_inputs = vec![inputs.clone()];
        let mut current = inputs.clone();
        for l in 0..self.layer_count() {
            let (d_in, d_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let mut next = Matrix::zeros(n, d_out);
            let last = l + 1 == self.layer_count();
            for r in 0..n {
                let x = current.row(r);
                let y = next.row_mut(r);
                for (o, yo) in y.iter_mut().enumerate() {
                    let w = &self.weights[l][o * d_in..(o + 1) * d_in];
                    let z = dot(w, x) + self.biases[l][o];
                    *yo = if last { z } else { z.tanh() };
                }
            }
            if !last {
                layer_inputs.push(next.clone());
            }
            current = next;
        }
        let prenorm = current;
        let mut features = prenorm.clone();
        let mut norms = Vec::with_capacity(n);
        for r in 0..n {
            let row = features.row_mut(r);
            let nrm = dot(row, row).sqrt().max(F::of(NORM_EPS));
            for x in row.iter_mut() {
                *x = *x / nrm;
            }
            norms.push(nrm);
        }
        Ok((
            features.clone(),
            ForwardCache {
                layer_inputs,
                prenorm,
                norms,
                features,
            },
        ))
    }

    /// Features only; the cache is dropped.
    pub fn encode(&self, inputs: &Matrix<F>) -> Result<Matrix<F>> {
        Ok(self.forward(inputs)?.0)
    }

    /// Exact reverse-mode gradients of the forward pass, contracted with
    /// `upstream` = dL/d features.
    pub fn backward(
        &self,
        cache: &ForwardCache<F>,
        upstream: &Matrix<F>,
    ) -> Result<EncoderGradients<F>> {
        let n = cache.prenorm.rows;
        if upstream.rows != n || upstream.cols != self.output_dim() {
            return Err(Error::StaleCache(format!(
                "upstream is {}x{}, cache holds {}x{}",
                upstream.rows,
                upstream.cols,
                n,
                self.output_dim()
            )));
        }
        if cache.layer_inputs.len() != self.layer_count()
            || cache.layer_inputs[0].cols != self.input_dim()
        {
            return Err(Error::StaleCache("cache does not match parameters".into()));
        }

        let mut grads = EncoderGradients::zeros_like(self);

        // Through the row-wise normalization.
        let eps = F::of(NORM_EPS);
        let mut dz = Matrix::zeros(n, self.output_dim());
        for r in 0..n {
            let g = upstream.row(r);
            let f = cache.features.row(r);
            let nrm = cache.norms[r];
            let out = dz.row_mut(r);
            if nrm > eps {
                let fg = dot(f, g);
                for (o, val) in out.iter_mut().enumerate() {
                    *val = (g[o] - f[o] * fg) / nrm;
                }
            } else {
                for (o, val) in out.iter_mut().enumerate() {
                    *val = g[o] / eps;
                }
            }
        }

        // Through the affine/tanh stack.
        for l in (0..self.layer_count()).rev() {
            let (d_in, d_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let a = &cache.layer_inputs[l];
            let mut da: Matrix<F> = Matrix::zeros(n, d_in);
            for r in 0..n {
                let x = a.row(r);
                let dzr = dz.row(r);
                for o in 0..d_out {
                    let gz = dzr[o];
                    if gz == F::zero() {
                        continue;
                    }
                    grads.biases[l][o] += gz;
                    let wrow = &self.weights[l][o * d_in..(o + 1) * d_in];
                    let gw = &mut grads.weights[l][o * d_in..(o + 1) * d_in];
                    let dar = da.row_mut(r);
                    for i in 0..d_in {
                        gw[i] += gz * x[i];
                        dar[i] += gz * wrow[i];
                    }
                }
            }
            if l > 0 {
                // The layer input is tanh(z) of the previous layer.
                let mut prev: Matrix<F> = Matrix::zeros(n, d_in);
                for r in 0..n {
                    let ar = a.row(r);
                    let dar = da.row(r);
                    let pr = prev.row_mut(r);
                    for i in 0..d_in {
                        pr[i] = dar[i] * (F::one() - ar[i] * ar[i]);
                    }
                }
                dz = prev;
            }
        }
        Ok(grads)
    }
}

/// Anything that turns point inputs into unit feature rows. `point_ids`
/// carries stable identity so oracle encoders can look points up; the MLP
/// ignores it.
pub trait Encoder<F: Real> {
    fn feature_dim(&self) -> usize;
    fn encode_with_ids(&self, inputs: &Matrix<F>, point_ids: &[u64]) -> Result<Matrix<F>>;
}

impl<F: Real> Encoder<F> for EncoderParams<F> {
    fn feature_dim(&self) -> usize {
        self.output_dim()
    }

    fn encode_with_ids(&self, inputs: &Matrix<F>, _point_ids: &[u64]) -> Result<Matrix<F>> {
        self.encode(inputs)
    }
}

/// Test/diagnostic encoder that returns a fixed feature row per point id.
#[derive(Clone, Debug)]
pub struct LookupEncoder<F> {
    dim: usize,
    rows: HashMap<u64, Vec<F>>,
}

impl<F: Real> LookupEncoder<F> {
    pub fn new(dim: usize) -> Self {
        Self { dim, rows: HashMap::new() }
    }

    pub fn insert(&mut self, point_id: u64, row: Vec<F>) {
        assert_eq!(row.len(), self.dim);
        self.rows.insert(point_id, row);
    }

    /// Perfect-alignment encoder: every scene point maps to the embedding of
    /// its ground-truth category.
    pub fn from_scene_ground_truth(
        scene: &GlobalScene<F>,
        table: &TextEmbeddingTable<F>,
    ) -> Result<Self> {
        let mut enc = Self::new(table.dim());
        for p in &scene.points {
            let cat = &scene.categories[p.gt_label];
            let v = table
                .vector(cat)
                .ok_or_else(|| Error::invalid_config("vocabulary", format!("unknown entity `{cat}`")))?;
            enc.insert(p.id, v.to_vec());
        }
        Ok(enc)
    }
}

impl<F: Real> Encoder<F> for LookupEncoder<F> {
    fn feature_dim(&self) -> usize {
        self.dim
    }

    fn encode_with_ids(&self, inputs: &Matrix<F>, point_ids: &[u64]) -> Result<Matrix<F>> {
        if inputs.rows != point_ids.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} input rows vs {} point ids",
                inputs.rows,
                point_ids.len()
            )));
        }
        let mut m = Matrix::zeros(point_ids.len(), self.dim);
        for (r, id) in point_ids.iter().enumerate() {
            let row = self
                .rows
                .get(id)
                .ok_or_else(|| Error::ShapeMismatch(format!("no feature row for point {id}")))?;
            m.row_mut(r).copy_from_slice(row);
        }
        Ok(m)
    }
}
