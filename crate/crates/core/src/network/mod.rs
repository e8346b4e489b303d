//! DL-MBIR layer stacks for the 2D, 2.5D and 3D variants.
//!
//! Every variant is `conv+ReLU`, then `depth − 2` blocks of
//! `conv+BN+ReLU`, then a final `conv` producing the residual estimate.
//! The 2D and 2.5D variants feed `window` neighbouring slices in as input
//! channels of a 3×3 convolution; the 3D variant treats the slab as a single
//! volumetric channel convolved with 3×3×3 kernels.

mod checkpoint;
mod forward;

pub use checkpoint::{load_checkpoint, peek_checkpoint, save_checkpoint, CheckpointMeta};
pub use forward::{backward, forward, forward_batch, forward_train, reconstruct, Tape};

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{BatchNormState, BnMode, ConvKernel, Scalar, Tensor};

pub const DEFAULT_DEPTH: usize = 17;
pub const DEFAULT_WIDTH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VariantKind {
    TwoD,
    TwoPointFiveD,
    ThreeD,
}

impl VariantKind {
    pub fn as_str(self) -> &'static str {
        match self {
            VariantKind::TwoD => "2d",
            VariantKind::TwoPointFiveD => "2.5d",
            VariantKind::ThreeD => "3d",
        }
    }

    /// Spelled-out name used in checkpoint manifests.
    pub fn type_name(self) -> &'static str {
        match self {
            VariantKind::TwoD => "TwoD",
            VariantKind::TwoPointFiveD => "TwoPointFiveD",
            VariantKind::ThreeD => "ThreeD",
        }
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VariantKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "2d" | "twod" => Ok(VariantKind::TwoD),
            "2.5d" | "25d" | "twopointfived" => Ok(VariantKind::TwoPointFiveD),
            "3d" | "threed" => Ok(VariantKind::ThreeD),
            other => Err(Error::invalid(format!(
                "unknown variant `{other}` (expected 2d, 2.5d or 3d)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NetworkVariant {
    pub kind: VariantKind,
    /// Number of neighbouring slices consumed per evaluation.
    pub window: usize,
    pub depth: usize,
    pub width: usize,
}

impl NetworkVariant {
    pub fn two_d() -> Self {
        NetworkVariant {
            kind: VariantKind::TwoD,
            window: 1,
            depth: DEFAULT_DEPTH,
            width: DEFAULT_WIDTH,
        }
    }

    pub fn two_point_five_d(window: usize) -> Self {
        NetworkVariant {
            kind: VariantKind::TwoPointFiveD,
            window,
            ..Self::two_d()
        }
    }

    pub fn three_d() -> Self {
        NetworkVariant {
            kind: VariantKind::ThreeD,
            window: 7,
            ..Self::two_d()
        }
    }

    /// Variant of `kind` with the conventional window (7 for 3D, 3 for 2.5D).
    pub fn of_kind(kind: VariantKind, window: Option<usize>) -> Self {
        match kind {
            VariantKind::TwoD => Self::two_d(),
            VariantKind::TwoPointFiveD => Self::two_point_five_d(window.unwrap_or(3)),
            VariantKind::ThreeD => NetworkVariant {
                window: window.unwrap_or(7),
                ..Self::three_d()
            },
        }
    }

    pub fn with_size(mut self, depth: usize, width: usize) -> Self {
        self.depth = depth;
        self.width = width;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.window % 2 == 0 {
            return Err(Error::invalid(format!(
                "window must be a positive odd slice count, got {}",
                self.window
            )));
        }
        match self.kind {
            VariantKind::TwoD if self.window != 1 => {
                return Err(Error::invalid(format!(
                    "2d variant takes a single slice, got window {}",
                    self.window
                )))
            }
            VariantKind::TwoPointFiveD | VariantKind::ThreeD if self.window == 1 => {
                return Err(Error::invalid(format!(
                    "{} variant needs a window of at least 3 slices",
                    self.kind
                )))
            }
            _ => {}
        }
        if self.depth < 3 {
            return Err(Error::invalid(format!(
                "depth must be at least 3 (first, hidden, last), got {}",
                self.depth
            )));
        }
        if self.width == 0 {
            return Err(Error::invalid("width must be positive"));
        }
        Ok(())
    }

    pub fn kernel_extent(&self) -> &'static [usize] {
        match self.kind {
            VariantKind::ThreeD => &[3, 3, 3],
            _ => &[3, 3],
        }
    }

    /// Channels of the first convolution.
    pub fn input_channels(&self) -> usize {
        match self.kind {
            VariantKind::ThreeD => 1,
            _ => self.window,
        }
    }

    /// Slices of residual emitted per evaluation.
    pub fn output_slices(&self) -> usize {
        match self.kind {
            VariantKind::ThreeD => self.window,
            _ => 1,
        }
    }

    /// Per-sample network input shape for an `h × w` slice.
    pub fn input_shape(&self, h: usize, w: usize) -> Vec<usize> {
        match self.kind {
            VariantKind::ThreeD => vec![1, self.window, h, w],
            _ => vec![self.window, h, w],
        }
    }

    /// Per-sample residual shape for an `h × w` slice.
    pub fn output_shape(&self, h: usize, w: usize) -> Vec<usize> {
        match self.kind {
            VariantKind::ThreeD => vec![1, self.window, h, w],
            _ => vec![1, h, w],
        }
    }

    /// `(out, in)` channel signature of every layer, first to last.
    pub fn layer_channels(&self) -> Vec<(usize, usize)> {
        let mut v = Vec::with_capacity(self.depth);
        v.push((self.width, self.input_channels()));
        for _ in 1..self.depth - 1 {
            v.push((self.width, self.width));
        }
        v.push((1, self.width));
        v
    }

    pub fn label(&self) -> String {
        match self.kind {
            VariantKind::TwoD => "2D".to_string(),
            VariantKind::TwoPointFiveD => format!("2.5D(w={})", self.window),
            VariantKind::ThreeD => format!("3D(w={})", self.window),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub conv: ConvKernel<T>,
    pub bn: Option<BatchNormState<T>>,
    pub relu: bool,
}

/// Network parameters θ together with the variant that shapes them.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<T> {
    pub variant: NetworkVariant,
    pub layers: Vec<Layer<T>>,
}

/// He-initialized weights (σ = √(2 / fan_in)), zero biases, BN γ = 1, β = 0.
pub fn build_network<T: Scalar>(variant: NetworkVariant, seed: u64) -> Result<NetworkParams<T>> {
    variant.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let extent = variant.kernel_extent();
    let taps: usize = extent.iter().product();
    let last = variant.depth - 1;
    let layers = variant
        .layer_channels()
        .into_iter()
        .enumerate()
        .map(|(i, (co, ci))| {
            let std = (2.0 / (ci * taps) as f64).sqrt();
            let mut shape = vec![co, ci];
            shape.extend_from_slice(extent);
            let conv = ConvKernel::new(Tensor::randn(&shape, std, &mut rng), Tensor::zeros(&[co]))
                .expect("shapes derived from variant");
            Layer {
                conv,
                bn: (i > 0 && i < last).then(|| BatchNormState::new(co)),
                relu: i < last,
            }
        })
        .collect();
    Ok(NetworkParams { variant, layers })
}

impl<T: Scalar> NetworkParams<T> {
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Trainable tensors in canonical order: per layer weights, bias, then
    /// γ, β when the layer is batch-normalized.
    pub fn trainable(&self) -> Vec<&Tensor<T>> {
        let mut v = Vec::new();
        for l in &self.layers {
            v.push(&l.conv.weights);
            v.push(&l.conv.bias);
            if let Some(bn) = &l.bn {
                v.push(&bn.gamma);
                v.push(&bn.beta);
            }
        }
        v
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = Vec::new();
        for l in &mut self.layers {
            v.push(&mut l.conv.weights);
            v.push(&mut l.conv.bias);
            if let Some(bn) = &mut l.bn {
                v.push(&mut bn.gamma);
                v.push(&mut bn.beta);
            }
        }
        v
    }

    /// Names aligned with [`Self::trainable`], e.g. `layer3.gamma`.
    pub fn trainable_names(&self) -> Vec<String> {
        let mut v = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            v.push(format!("layer{i}.weights"));
            v.push(format!("layer{i}.bias"));
            if l.bn.is_some() {
                v.push(format!("layer{i}.gamma"));
                v.push(format!("layer{i}.beta"));
            }
        }
        v
    }

    pub fn parameter_count(&self) -> usize {
        self.trainable().iter().map(|t| t.len()).sum()
    }

    /// Zero the last convolution so the residual estimate is identically 0.
    pub fn zero_last_layer(&mut self) {
        let last = self.layers.last_mut().expect("depth >= 3");
        last.conv.weights.data_mut().iter_mut().for_each(|v| *v = T::zero());
        last.conv.bias.data_mut().iter_mut().for_each(|v| *v = T::zero());
    }

    pub fn set_bn_mode(&mut self, mode: BnMode) {
        for bn in self.layers.iter_mut().filter_map(|l| l.bn.as_mut()) {
            bn.mode = mode;
        }
    }
}

/// Gradient (or optimizer moment) for every trainable tensor, aligned with
/// [`NetworkParams::trainable`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads<T>(pub Vec<Tensor<T>>);

impl<T: Scalar> ParamGrads<T> {
    pub fn zeros_like(params: &NetworkParams<T>) -> Self {
        ParamGrads(params.trainable().iter().map(|t| Tensor::zeros(t.shape())).collect())
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.add_assign(b)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: T) {
        for t in &mut self.0 {
            t.data_mut().iter_mut().for_each(|v| *v = *v * s);
        }
    }

    pub fn flatten(&self) -> Vec<T> {
        self.0.iter().flat_map(|t| t.data().iter().copied()).collect()
    }
}
