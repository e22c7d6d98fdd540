use sha2::{Digest, Sha256};

use crate::numerics::ConvSpec;

/// Layer widths of the network. [`ArchitectureManifest::lcdnet`] is the
/// shipped configuration; other widths exist so that checkpoints from a
/// different architecture can be recognised and rejected.
///
/// Graph: `conv1 (5x5) -> relu -> maxpool 2x2`, then two columns reading the
/// pooled features,
///
/// * column A: `1x3 -> 3x1 -> 3x3`
/// * column B: `3x1 -> 1x3 -> 3x3`
///
/// each followed by ReLU, channel concat, and a linear `1x1` conv down to one
/// density channel. All convolutions are stride 1 and same-padded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArchitectureManifest {
    pub in_channels: usize,
    pub conv1_filters: usize,
    pub conv1_kernel: usize,
    pub column_filters: usize,
    pub column_out: usize,
}

/// One convolution of the fixed graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: &'static str,
    pub in_channels: usize,
    pub conv: ConvSpec,
    pub relu: bool,
}

impl LayerSpec {
    pub fn weight_shape(&self) -> [usize; 4] {
        self.conv.weight_shape(self.in_channels)
    }

    pub fn param_count(&self) -> usize {
        self.weight_shape().iter().product::<usize>() + self.conv.out_channels
    }
}

pub const LAYER_NAMES: [&str; 8] = ["conv1", "col_a1", "col_a2", "col_a3", "col_b1", "col_b2", "col_b3", "conv6"];

impl Default for ArchitectureManifest {
    fn default() -> Self {
        Self::lcdnet()
    }
}

impl ArchitectureManifest {
    pub const fn lcdnet() -> Self {
        Self { in_channels: 3, conv1_filters: 64, conv1_kernel: 5, column_filters: 32, column_out: 64 }
    }

    /// Layers in execution (and serialisation) order.
    pub fn layers(&self) -> Vec<LayerSpec> {
        let k = self.conv1_kernel;
        let (c1, cf, co) = (self.conv1_filters, self.column_filters, self.column_out);
        let layer = |name, in_channels, out, kh, kw, relu| LayerSpec {
            name,
            in_channels,
            conv: ConvSpec::same(out, kh, kw),
            relu,
        };
        vec![
            layer("conv1", self.in_channels, c1, k, k, true),
            layer("col_a1", c1, cf, 1, 3, true),
            layer("col_a2", cf, cf, 3, 1, true),
            layer("col_a3", cf, co, 3, 3, true),
            layer("col_b1", c1, cf, 3, 1, true),
            layer("col_b2", cf, cf, 1, 3, true),
            layer("col_b3", cf, co, 3, 3, true),
            layer("conv6", 2 * co, 1, 1, 1, false),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(LayerSpec::param_count).sum()
    }

    /// Canonical text form; the manifest hash is derived from it.
    pub fn describe(&self) -> String {
        let mut s = String::from("lcdnet-v1");
        for l in self.layers() {
            s.push_str(&format!(
                ";{}:{}->{}:{}x{}:{}",
                l.name,
                l.in_channels,
                l.conv.out_channels,
                l.conv.kernel_h,
                l.conv.kernel_w,
                if l.relu { "relu" } else { "linear" }
            ));
        }
        s.push_str(";pool=max2x2@conv1;concat=col_a3+col_b3");
        s
    }

    pub fn hash(&self) -> u64 {
        let digest = Sha256::digest(self.describe().as_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("sha256 is 32 bytes"))
    }
}
