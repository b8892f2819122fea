//! Gated U-Net that decodes the fused feature map into an RGB image.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::nn::{Conv, GatedBlock};
use crate::autodiff::{Bound, Graph, ParamGroup, Params, Var};
use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UNetConfig {
    /// Encoder widths, finest level first; `widths.len() - 1` downsamples.
    pub widths: Vec<usize>,
    pub width_mult: f64,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl UNetConfig {
    pub fn new(in_channels: usize) -> Self {
        UNetConfig {
            widths: vec![16, 32, 64, 128, 256],
            width_mult: 1.0,
            in_channels,
            out_channels: 3,
        }
    }

    pub fn downsamples(&self) -> usize {
        self.widths.len().saturating_sub(1)
    }

    /// Widths after the multiplier, never below 1.
    pub fn scaled_widths(&self) -> Vec<usize> {
        self.widths
            .iter()
            .map(|&w| ((w as f64 * self.width_mult).round() as usize).max(1))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::invalid("U-Net widths must be non-empty and positive"));
        }
        if !(self.width_mult > 0.0 && self.width_mult.is_finite()) {
            return Err(Error::invalid("U-Net width multiplier must be positive"));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::invalid("U-Net channel counts must be positive"));
        }
        Ok(())
    }

    /// Exact learnable-scalar count.
    pub fn param_count(&self) -> usize {
        let w = self.scaled_widths();
        let mut n = GatedBlock::param_count(self.in_channels, w[0]);
        for i in 1..w.len() {
            n += GatedBlock::param_count(w[i - 1], w[i]);
        }
        for i in (0..w.len() - 1).rev() {
            n += GatedBlock::param_count(w[i + 1] + w[i], w[i]);
        }
        n + Conv::param_count(w[0], self.out_channels, 3)
    }

    /// Padded size for a side of length `n`: a multiple of `2^D`, and at least
    /// `2^(D+1)` so the coarsest level is 2×2 or larger.
    pub fn padded_side(&self, n: usize) -> usize {
        let unit = 1usize << self.downsamples();
        n.div_ceil(unit).max(2) * unit
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UNet {
    pub config: UNetConfig,
    encoder: Vec<GatedBlock>,
    decoder: Vec<GatedBlock>,
    head: Conv,
}

impl UNet {
    pub fn new<T: Real, R: Rng>(params: &mut Params<T>, rng: &mut R, name: &str, config: UNetConfig) -> Result<Self> {
        config.validate()?;
        let g = ParamGroup::Decoder;
        let w = config.scaled_widths();
        let mut encoder = vec![GatedBlock::new(params, rng, &format!("{name}.enc0"), g, config.in_channels, w[0])];
        for i in 1..w.len() {
            encoder.push(GatedBlock::new(params, rng, &format!("{name}.enc{i}"), g, w[i - 1], w[i]));
        }
        let mut decoder = Vec::new();
        for i in (0..w.len() - 1).rev() {
            decoder.push(GatedBlock::new(params, rng, &format!("{name}.dec{i}"), g, w[i + 1] + w[i], w[i]));
        }
        let head = Conv::new(params, rng, &format!("{name}.head"), g, w[0], config.out_channels, 3);
        Ok(UNet { config, encoder, decoder, head })
    }

    pub fn head(&self) -> Conv {
        self.head
    }
}

/// Decodes `[C, H, W]` features to a `[3, H, W]` image in (0, 1). Inputs whose
/// sides are not valid multiples are reflection-padded and the output cropped.
pub fn unet_forward<T: Real>(g: &mut Graph<T>, b: &Bound, net: &UNet, fused: Var) -> Result<Var> {
    let shape = g.shape(fused).to_vec();
    if shape.len() != 3 || shape[0] != net.config.in_channels {
        return Err(Error::shape(format!(
            "U-Net expects [{}, H, W], got {shape:?}",
            net.config.in_channels
        )));
    }
    let (h, w) = (shape[1], shape[2]);
    let (ph, pw) = (net.config.padded_side(h), net.config.padded_side(w));
    let (top, left) = ((ph - h) / 2, (pw - w) / 2);
    let mut x = fused;
    if (ph, pw) != (h, w) {
        x = g.reflect_pad(x, top, ph - h - top, left, pw - w - left)?;
    }
    let mut skips = Vec::with_capacity(net.encoder.len());
    for (i, block) in net.encoder.iter().enumerate() {
        if i > 0 {
            x = g.downsample2(x)?;
        }
        x = block.forward(g, b, x)?;
        skips.push(x);
    }
    skips.pop();
    for block in &net.decoder {
        let up = g.upsample2(x)?;
        let skip = skips.pop().expect("one skip per decoder level");
        let cat = g.concat(&[up, skip], 0)?;
        x = block.forward(g, b, cat)?;
    }
    let y = net.head.forward(g, b, x)?;
    let mut y = g.sigmoid(y);
    if (ph, pw) != (h, w) {
        y = g.crop(y, top, left, h, w)?;
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn build(cfg: UNetConfig, seed: u64) -> (Params<f64>, UNet) {
        let mut p = Params::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = UNet::new(&mut p, &mut rng, "unet", cfg).unwrap();
        (p, net)
    }

    fn input(g: &mut Graph<f64>, c: usize, h: usize, w: usize, seed: u64) -> Var {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = crate::autodiff::nn::uniform_init(&mut rng, vec![c, h, w], 1);
        g.constant(t)
    }

    #[test]
    fn zero_head_gives_half_gray() {
        let cfg = UNetConfig { width_mult: 0.25, ..UNetConfig::new(8) };
        let (mut p, net) = build(cfg, 1);
        p.fill_prefix("unet.head", 0.0);
        let mut g = Graph::new();
        let b = g.bind(&p);
        let x = input(&mut g, 8, 16, 16, 2);
        let y = unet_forward(&mut g, &b, &net, x).unwrap();
        assert_eq!(g.shape(y), &[3, 16, 16]);
        assert!(g.value(y).data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn shapes_and_range() {
        let cfg = UNetConfig { width_mult: 0.125, ..UNetConfig::new(4) };
        assert_eq!(cfg.padded_side(64), 64);
        assert_eq!(cfg.padded_side(64) >> cfg.downsamples(), 4);
        assert_eq!(cfg.padded_side(8), 32);
        assert_eq!(cfg.padded_side(50), 64);
        let (p, net) = build(cfg, 3);
        let mut g = Graph::new();
        let b = g.bind(&p);
        for (h, w) in [(64, 64), (8, 8), (21, 35)] {
            let x = input(&mut g, 4, h, w, 4);
            let y = unet_forward(&mut g, &b, &net, x).unwrap();
            assert_eq!(g.shape(y), &[3, h, w]);
            assert!(g.value(y).data().iter().all(|&v| v > 0.0 && v < 1.0));
        }
        let bad = input(&mut g, 3, 8, 8, 5);
        assert!(unet_forward(&mut g, &b, &net, bad).is_err());
    }

    #[test]
    fn param_count_matches_registry() {
        for mult in [1.0, 0.5, 0.125] {
            let cfg = UNetConfig { width_mult: mult, ..UNetConfig::new(8) };
            let (p, _) = build(cfg.clone(), 6);
            assert_eq!(p.scalar_count(), cfg.param_count());
        }
    }

    #[test]
    fn degenerate_count_by_hand() {
        let cfg = UNetConfig { widths: vec![1, 1], width_mult: 1.0, in_channels: 1, out_channels: 3 };
        // Gated block 1→1: two 3×3 convs (9 + 1 each) + gain + bias = 22.
        // Decoder block 2→1: two convs (18 + 1 each) + 2 = 40. Head 1→3: 27 + 3 = 30.
        assert_eq!(cfg.param_count(), 22 + 22 + 40 + 30);
    }

    #[test]
    fn doubling_widths_quadruples_conv_parameters() {
        let base = UNetConfig { width_mult: 0.5, ..UNetConfig::new(8) };
        let double = UNetConfig { width_mult: 1.0, ..UNetConfig::new(8) };
        let ratio = double.param_count() as f64 / base.param_count() as f64;
        assert!((ratio / 4.0 - 1.0).abs() < 0.05, "ratio {ratio}");
    }

    #[test]
    fn translation_covariance_in_the_interior() {
        let cfg = UNetConfig { widths: vec![4, 6, 8], width_mult: 1.0, in_channels: 2, out_channels: 3 };
        let (p, net) = build(cfg, 7);
        let (h, w, shift) = (96usize, 96usize, 4usize);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut a = vec![0.0; 2 * h * w];
        let mut bb = vec![0.0; 2 * h * w];
        for c in 0..2 {
            for y in 40..56 {
                for x in 40..56 {
                    let v: f64 = rng.random_range(-1.0..1.0);
                    a[(c * h + y) * w + x] = v;
                    bb[(c * h + y + shift) * w + x + shift] = v;
                }
            }
        }
        let mut g = Graph::new();
        let b = g.bind(&p);
        let xa = g.constant(Tensor::new(vec![2, h, w], a).unwrap());
        let xb = g.constant(Tensor::new(vec![2, h, w], bb).unwrap());
        let ya = unet_forward(&mut g, &b, &net, xa).unwrap();
        let yb = unet_forward(&mut g, &b, &net, xb).unwrap();
        let (va, vb) = (g.value(ya).data(), g.value(yb).data());
        let margin = 24;
        for c in 0..3 {
            for y in margin..h - margin - shift {
                for x in margin..w - margin - shift {
                    let d = va[(c * h + y) * w + x] - vb[(c * h + y + shift) * w + x + shift];
                    assert!(d.abs() < 1e-5, "({c},{y},{x}) differs by {d}");
                }
            }
        }
    }
}
