use super::manifest::ArchitectureManifest;
use crate::error::Result;

/// Published figures for the reference network, shown next to our counts.
pub const PUBLISHED_PARAMS_M: f64 = 0.05;
pub const PUBLISHED_MODEL_MB: f64 = 0.21;
pub const PUBLISHED_GMACS: f64 = 4.85;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ComplexityReport {
    pub param_count: usize,
    /// Multiply-accumulates of every convolution (bias adds excluded).
    pub mac_count: u64,
    pub model_bytes: usize,
    pub input_h: usize,
    pub input_w: usize,
}

impl ComplexityReport {
    pub fn params_millions(&self) -> f64 {
        self.param_count as f64 / 1e6
    }

    pub fn gmacs(&self) -> f64 {
        self.mac_count as f64 / 1e9
    }

    pub fn model_mb(&self) -> f64 {
        self.model_bytes as f64 / 1e6
    }

    /// Multi-line summary with the published numbers alongside.
    pub fn render(&self) -> String {
        format!(
            "input               {}x{}\n\
             parameters          {} ({:.4} M)   published: {PUBLISHED_PARAMS_M} M\n\
             model size          {} bytes ({:.3} MB, f32)   published: {PUBLISHED_MODEL_MB} MB\n\
             MACs                {} ({:.3} GMACs)   published: {PUBLISHED_GMACS} GMACs (input size not published)\n\
             note: the published layer description is ambiguous (3x3 vs 1x3/3x1 column filters, a\n\
             \"128 filter\" final 1x1 layer); this build uses rectangular column filters and a single\n\
             128->1 output convolution, which gives {} parameters rather than 0.05 M.\n",
            self.input_h,
            self.input_w,
            self.param_count,
            self.params_millions(),
            self.model_bytes,
            self.model_mb(),
            self.mac_count,
            self.gmacs(),
            self.param_count,
        )
    }
}

/// Parameter, MAC and size accounting for a 3-channel `input_h x input_w`
/// image. `bytes_per_value` is 4 for an f32 deployment.
pub fn complexity_report(
    manifest: &ArchitectureManifest,
    input_h: usize,
    input_w: usize,
    bytes_per_value: usize,
) -> Result<ComplexityReport> {
    let mut macs = 0u64;
    let layers = manifest.layers();
    let (c1h, c1w) = layers[0].conv.output_extent(input_h, input_w)?;
    // every layer after conv1 sees the pooled resolution (same padding)
    let pooled = (c1h.div_ceil(2), c1w.div_ceil(2));
    for (i, layer) in layers.iter().enumerate() {
        let (h, w) = if i == 0 { (input_h, input_w) } else { pooled };
        let (oh, ow) = layer.conv.output_extent(h, w)?;
        let per_output = (layer.in_channels * layer.conv.kernel_h * layer.conv.kernel_w) as u64;
        macs += (oh * ow * layer.conv.out_channels) as u64 * per_output;
    }
    let param_count = manifest.param_count();
    Ok(ComplexityReport { param_count, mac_count: macs, model_bytes: param_count * bytes_per_value, input_h, input_w })
}
