use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{LatentCodeMap, TextureImage};
use crate::error::{Error, Result};
use crate::registry::Registry;
use crate::tensor::{silu, Mat};

/// Produces a latent code map aligned with the input texture.
pub trait TextureEncoder: Send + Sync {
    fn name(&self) -> &'static str;
    /// Output feature dimension for an image with `channels` channels.
    fn dim(&self, channels: usize) -> usize;
    fn encode(&self, image: &TextureImage) -> Result<LatentCodeMap>;
    /// Stable description of everything that influences the output; keys the sidecar cache.
    fn config_key(&self) -> String;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub dim: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig { dim: 8, seed: 7 }
    }
}

fn check_channels(channels: usize) -> Result<()> {
    if matches!(channels, 1 | 3 | 4) {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "unsupported texture channel count {channels} (expected 1, 3 or 4)"
        )))
    }
}

/// Codes are the raw pixel channels.
#[derive(Debug, Clone, Default)]
pub struct IdentityEncoder;

impl TextureEncoder for IdentityEncoder {
    fn name(&self) -> &'static str {
        "identity"
    }

    fn dim(&self, channels: usize) -> usize {
        channels
    }

    fn encode(&self, image: &TextureImage) -> Result<LatentCodeMap> {
        check_channels(image.channels)?;
        Ok(LatentCodeMap {
            width: image.width,
            height: image.height,
            dim: image.channels,
            codes: image.data.clone(),
        })
    }

    fn config_key(&self) -> String {
        "identity".into()
    }
}

/// 3x3 convolution (repeat padding) followed by SiLU, with fixed-seed weights.
///
/// The same weights can be made trainable inside the model, which evaluates the
/// identical `im2col(image) * kernel + bias` expression on the autograd tape.
#[derive(Debug, Clone)]
pub struct ConvEncoder {
    pub channels: usize,
    pub dim: usize,
    pub seed: u64,
    /// `(9 * channels) x dim`
    pub kernel: Mat,
    /// `1 x dim`
    pub bias: Mat,
}

impl ConvEncoder {
    pub fn new(channels: usize, config: &EncoderConfig) -> Result<Self> {
        check_channels(channels)?;
        if config.dim == 0 {
            return Err(Error::Config("encoder dim must be positive".into()));
        }
        let fan_in = 9 * channels;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let kernel = Mat::from_fn(fan_in, config.dim, |_, _| rng.random_range(-bound..bound));
        let bias = Mat::from_fn(1, config.dim, |_, _| rng.random_range(-bound..bound));
        Ok(ConvEncoder {
            channels,
            dim: config.dim,
            seed: config.seed,
            kernel,
            bias,
        })
    }
}

impl TextureEncoder for ConvEncoder {
    fn name(&self) -> &'static str {
        "conv"
    }

    fn dim(&self, _channels: usize) -> usize {
        self.dim
    }

    fn encode(&self, image: &TextureImage) -> Result<LatentCodeMap> {
        if image.channels != self.channels {
            return Err(Error::Config(format!(
                "conv encoder built for {} channels, image has {}",
                self.channels, image.channels
            )));
        }
        let mut pre = im2col(image).matmul(&self.kernel);
        pre.add_row_broadcast(&self.bias);
        let codes = pre.data.iter().map(|&x| silu(x)).collect();
        Ok(LatentCodeMap {
            width: image.width,
            height: image.height,
            dim: self.dim,
            codes,
        })
    }

    fn config_key(&self) -> String {
        format!("conv3x3-silu:c{}:d{}:s{}", self.channels, self.dim, self.seed)
    }
}

/// One row per pixel holding its 3x3 neighbourhood (repeat padding), ordered
/// `(dy, dx, channel)` with `dy, dx` in `-1..=1`.
pub fn im2col(image: &TextureImage) -> Mat {
    let (w, h, c) = (image.width, image.height, image.channels);
    let mut out = Mat::zeros(w * h, 9 * c);
    for y in 0..h {
        for x in 0..w {
            let row = out.row_mut(y * w + x);
            let mut k = 0;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let sx = (x as i64 + dx).rem_euclid(w as i64) as usize;
                    let sy = (y as i64 + dy).rem_euclid(h as i64) as usize;
                    row[k..k + c].copy_from_slice(image.pixel(sx, sy));
                    k += c;
                }
            }
        }
    }
    out
}

/// Registry construction context: the encoder config plus the texture's channel count.
pub type EncoderContext = (EncoderConfig, usize);

pub fn encoder_registry() -> Registry<EncoderContext, dyn TextureEncoder> {
    let mut r: Registry<EncoderContext, dyn TextureEncoder> = Registry::new("texture encoder");
    r.register("identity", |_| Ok(Box::new(IdentityEncoder)));
    r.register("conv", |(cfg, channels)| {
        Ok(Box::new(ConvEncoder::new(*channels, cfg)?))
    });
    r
}
