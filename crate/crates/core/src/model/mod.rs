//! The LCDnet computation graph.

mod checkpoint;
mod complexity;
mod manifest;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub use checkpoint::{
    load_checkpoint, load_checkpoint_with, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use complexity::{complexity_report, ComplexityReport, PUBLISHED_GMACS, PUBLISHED_MODEL_MB, PUBLISHED_PARAMS_M};
pub use manifest::{ArchitectureManifest, LayerSpec, LAYER_NAMES};

use crate::error::{Error, Result};
use crate::numerics::{
    check_gradients, concat_channels, conv2d_backward, conv2d_backward_params, conv2d_forward, maxpool2x2,
    maxpool2x2_backward, relu_backward, relu_inplace, split_channels, ConvSpec, GradCheckOptions, GradCheckReport,
    ParamSet, PoolIndices, Scalar, Tensor,
};

/// Standard deviation of the Gaussian weight initialisation.
pub const INIT_STD: f64 = 0.01;

/// Smallest accepted input height/width.
pub const MIN_INPUT_EXTENT: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T: Scalar = f64> {
    pub name: String,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
    pub spec: ConvSpec,
}

/// Ordered layer weights and biases of one network.
///
/// Also used as the container for gradients, which share the layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T: Scalar = f64> {
    manifest: ArchitectureManifest,
    layers: Vec<Layer<T>>,
}

/// Gaussian-initialised parameters for the default architecture.
pub fn init_params(seed: u64) -> ModelParams {
    ModelParams::init(ArchitectureManifest::lcdnet(), seed, INIT_STD)
}

impl ModelParams<f64> {
    /// Weights from `N(0, std^2)` drawn in layer order from a ChaCha8 stream
    /// seeded with `seed`; biases zero.
    pub fn init(manifest: ArchitectureManifest, seed: u64, std: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, std).expect("init std must be finite and non-negative");
        let layers = manifest
            .layers()
            .into_iter()
            .map(|l| Layer {
                name: l.name.to_string(),
                weights: Tensor::from_fn(l.weight_shape().to_vec(), |_| normal.sample(&mut rng))
                    .expect("manifest shapes are non-empty"),
                bias: Tensor::zeros(vec![l.conv.out_channels]).expect("non-empty"),
                spec: l.conv,
            })
            .collect();
        Self { manifest, layers }
    }

    /// All-zero tensors with the layout of `manifest`.
    pub fn zeros(manifest: ArchitectureManifest) -> Self {
        Self::init(manifest, 0, 0.0)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.manifest)
    }

    /// Full backward pass. `grad_out` is the loss gradient with respect to
    /// the density output of the forward pass that produced `cache`.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &Tensor) -> Result<ModelParams> {
        let mut grads = self.zeros_like();
        let [c1, a1, a2, a3, b1, b2, b3, c6] = self.indices();
        let l = &self.layers;

        let g6 = conv2d_backward(grad_out, &cache.concat, &l[c6].weights, &l[c6].spec)?;
        grads.set(c6, &g6.weights, g6.bias.as_ref());
        let g_cat = g6.input.expect("input gradient requested");
        let (g_a3, g_b3) = split_channels(&g_cat, self.manifest.column_out)?;

        let mut column_back = |head: Tensor, acts: &[Tensor; 3], ids: [usize; 3]| -> Result<Tensor> {
            let mut g = head;
            for step in (0..3).rev() {
                g = relu_backward(&g, &acts[step])?;
                let input = if step == 0 { &cache.pooled } else { &acts[step - 1] };
                let idx = ids[step];
                let cg = conv2d_backward(&g, input, &l[idx].weights, &l[idx].spec)?;
                grads.set(idx, &cg.weights, cg.bias.as_ref());
                g = cg.input.expect("input gradient requested");
            }
            Ok(g)
        };
        let mut g_pool = column_back(g_a3, &cache.column_a, [a1, a2, a3])?;
        let g_pool_b = column_back(g_b3, &cache.column_b, [b1, b2, b3])?;
        g_pool.add_assign(&g_pool_b)?;

        let g_c1 = maxpool2x2_backward(&g_pool, &cache.pool_indices)?;
        let g_c1 = relu_backward(&g_c1, &cache.conv1)?;
        let g1 = conv2d_backward_params(&g_c1, &cache.input, &l[c1].weights, &l[c1].spec)?;
        grads.set(c1, &g1.weights, g1.bias.as_ref());
        Ok(grads)
    }

    /// Forward pass that keeps every activation needed by [`Self::backward`].
    pub fn forward_with_cache(&self, image: &Tensor) -> Result<(Tensor, ForwardCache)> {
        let mut acts = Activations::default();
        let out = self.run(image, Some(&mut acts))?;
        let cache = ForwardCache {
            input: image.clone(),
            conv1: acts.conv1.expect("recorded"),
            pool_indices: acts.pool.expect("recorded"),
            pooled: acts.pooled.expect("recorded"),
            column_a: acts.column_a.map(|t| t.expect("recorded")),
            column_b: acts.column_b.map(|t| t.expect("recorded")),
            concat: acts.concat.expect("recorded"),
        };
        Ok((out, cache))
    }

    fn set(&mut self, idx: usize, weights: &Tensor, bias: Option<&Tensor>) {
        let layer = &mut self.layers[idx];
        layer.weights.add_assign(weights).expect("gradient shape matches layer");
        if let Some(b) = bias {
            layer.bias.add_assign(b).expect("gradient shape matches layer");
        }
    }

    /// Adds `other` (same layout) into `self`, tensor by tensor.
    pub fn accumulate(&mut self, other: &ModelParams) -> Result<()> {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.add_assign(&b.weights)?;
            a.bias.add_assign(&b.bias)?;
        }
        Ok(())
    }

    /// Sum of squares of every parameter, for diagnostics.
    pub fn squared_norm(&self) -> f64 {
        self.layers.iter().flat_map(|l| l.weights.data().iter().chain(l.bias.data())).map(|v| v * v).sum()
    }
}

impl<T: Scalar> ModelParams<T> {
    /// Assemble parameters from explicit layers, validating them against
    /// `manifest`.
    pub fn from_layers(manifest: ArchitectureManifest, layers: Vec<Layer<T>>) -> Result<Self> {
        let specs = manifest.layers();
        if specs.len() != layers.len() {
            return Err(Error::dim(format!("manifest has {} layers, got {}", specs.len(), layers.len())));
        }
        for (s, l) in specs.iter().zip(&layers) {
            if s.name != l.name || l.weights.shape() != s.weight_shape() || l.bias.shape() != [s.conv.out_channels] {
                return Err(Error::dim(format!(
                    "layer `{}` ({:?}/{:?}) does not match manifest layer `{}` ({:?})",
                    l.name,
                    l.weights.shape(),
                    l.bias.shape(),
                    s.name,
                    s.weight_shape()
                )));
            }
        }
        Ok(Self { manifest, layers })
    }

    pub fn manifest(&self) -> &ArchitectureManifest {
        &self.manifest
    }

    pub fn manifest_hash(&self) -> u64 {
        self.manifest.hash()
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            manifest: self.manifest,
            layers: self
                .layers
                .iter()
                .map(|l| Layer { name: l.name.clone(), weights: l.weights.cast(), bias: l.bias.cast(), spec: l.spec })
                .collect(),
        }
    }

    /// Predicted density map `(N, 1, ceil(H/2), ceil(W/2))` for an
    /// `(N, 3, H, W)` image batch.
    pub fn forward(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        self.run(image, None)
    }

    fn indices(&self) -> [usize; 8] {
        [0, 1, 2, 3, 4, 5, 6, 7]
    }

    fn conv(&self, idx: usize, input: &Tensor<T>) -> Result<Tensor<T>> {
        let l = &self.layers[idx];
        let mut out = conv2d_forward(input, &l.weights, l.spec.bias.then_some(&l.bias), &l.spec)?;
        if self.manifest.layers()[idx].relu {
            relu_inplace(&mut out);
        }
        Ok(out)
    }

    fn run(&self, image: &Tensor<T>, mut record: Option<&mut Activations<T>>) -> Result<Tensor<T>> {
        let (_, c, h, w) = image.dims4()?;
        if c != self.manifest.in_channels {
            return Err(Error::dim(format!(
                "model expects {} input channels, image has {c}",
                self.manifest.in_channels
            )));
        }
        if h < MIN_INPUT_EXTENT || w < MIN_INPUT_EXTENT {
            return Err(Error::config(format!(
                "input {h}x{w} is smaller than the minimum {MIN_INPUT_EXTENT}x{MIN_INPUT_EXTENT}"
            )));
        }
        let [c1, a1, a2, a3, b1, b2, b3, c6] = self.indices();

        let conv1 = self.conv(c1, image)?;
        let (pooled, pool_idx) = maxpool2x2(&conv1)?;
        let ya1 = self.conv(a1, &pooled)?;
        let ya2 = self.conv(a2, &ya1)?;
        let ya3 = self.conv(a3, &ya2)?;
        let yb1 = self.conv(b1, &pooled)?;
        let yb2 = self.conv(b2, &yb1)?;
        let yb3 = self.conv(b3, &yb2)?;
        let cat = concat_channels(&ya3, &yb3)?;
        let out = self.conv(c6, &cat)?;

        if log::log_enabled!(log::Level::Trace) {
            log::trace!("density output\n{}", out.grid_dump());
        }
        if let Some(rec) = record.as_deref_mut() {
            rec.conv1 = Some(conv1);
            rec.pool = Some(pool_idx);
            rec.pooled = Some(pooled);
            rec.column_a = [Some(ya1), Some(ya2), Some(ya3)];
            rec.column_b = [Some(yb1), Some(yb2), Some(yb3)];
            rec.concat = Some(cat);
        }
        Ok(out)
    }
}

struct Activations<T> {
    conv1: Option<Tensor<T>>,
    pool: Option<PoolIndices>,
    pooled: Option<Tensor<T>>,
    column_a: [Option<Tensor<T>>; 3],
    column_b: [Option<Tensor<T>>; 3],
    concat: Option<Tensor<T>>,
}

impl<T> Default for Activations<T> {
    fn default() -> Self {
        Self {
            conv1: None,
            pool: None,
            pooled: None,
            column_a: [None, None, None],
            column_b: [None, None, None],
            concat: None,
        }
    }
}

/// Post-activation tensors of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Tensor,
    conv1: Tensor,
    pool_indices: PoolIndices,
    pooled: Tensor,
    column_a: [Tensor; 3],
    column_b: [Tensor; 3],
    concat: Tensor,
}

impl ParamSet for ModelParams<f64> {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        self.layers
            .iter()
            .flat_map(|l| [(format!("{}.weight", l.name), &l.weights), (format!("{}.bias", l.name), &l.bias)])
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                let name = l.name.clone();
                [(format!("{name}.weight"), &mut l.weights), (format!("{name}.bias"), &mut l.bias)]
            })
            .collect()
    }
}

/// Axis-aligned rectangle in density-map pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Region {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

/// `(height, width)` of a single-image, single-channel map stored either as
/// `[1, 1, H, W]` or `[H, W]`.
pub fn map_extent<T: Scalar>(map: &Tensor<T>) -> Result<(usize, usize)> {
    match map.shape() {
        [1, 1, h, w] | [h, w] => Ok((*h, *w)),
        other => Err(Error::dim(format!("density map must be [1, 1, H, W] or [H, W], got {other:?}"))),
    }
}

/// Integrated count over `region`, or the whole map. Rows are summed in
/// row-major order.
pub fn count_from_density(map: &Tensor, region: Option<Region>) -> Result<f64> {
    let (h, w) = map_extent(map)?;
    let r = region.unwrap_or(Region { x: 0, y: 0, width: w, height: h });
    if r.x + r.width > w || r.y + r.height > h {
        return Err(Error::Range(format!(
            "region x={} y={} {}x{} exceeds the {w}x{h} map",
            r.x, r.y, r.width, r.height
        )));
    }
    let data = map.data();
    let mut total = 0.0;
    for y in r.y..r.y + r.height {
        for &v in &data[y * w + r.x..y * w + r.x + r.width] {
            total += v;
        }
    }
    Ok(total)
}

/// Finite-difference check of the full model gradient under the pixel-wise
/// squared-error loss.
pub fn grad_check(
    params: &ModelParams,
    input: &Tensor,
    target: &Tensor,
    opts: GradCheckOptions,
) -> Result<GradCheckReport> {
    grad_check_with_backward(params, input, target, opts, |p, x, t| {
        let (pred, cache) = p.forward_with_cache(x)?;
        let (_, grad) = crate::trainer::loss(&pred, t, 1)?;
        p.backward(&cache, &grad)
    })
}

/// [`grad_check`] against an arbitrary backward implementation.
pub fn grad_check_with_backward<F>(
    params: &ModelParams,
    input: &Tensor,
    target: &Tensor,
    opts: GradCheckOptions,
    backward: F,
) -> Result<GradCheckReport>
where
    F: Fn(&ModelParams, &Tensor, &Tensor) -> Result<ModelParams>,
{
    let analytic = backward(params, input, target)?;
    check_gradients(
        params,
        &analytic,
        |p| {
            let pred = p.forward(input)?;
            Ok(crate::trainer::loss(&pred, target, 1)?.0)
        },
        opts,
    )
}
