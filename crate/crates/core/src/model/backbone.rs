//! Feature extractor: a small stack of conv–leaky-ReLU–maxpool blocks followed by
//! global average pooling, so the final conv width is the feature
//! dimensionality.
//!
//! The backbone is chosen by an identifier string:
//!
//! - `"desk-cnn"` — three 3×3 conv blocks widening to the feature dim.
//! - `"desk-cnn:c1,c2,...,cn"` — explicit channel widths (≤ 5 blocks); the
//!   last width must equal the configured feature dim.

use ndarray::{Array2, Array4};
use rand::rngs::StdRng;

use crate::error::{Error, Result};
use crate::num::Float;

use super::layers::{
    global_avg_pool, global_avg_pool_backward, maxpool2_backward, maxpool2_forward_cached,
    relu_backward, relu_forward_cached, Conv2d, ConvCache, PoolCache, ReluCache,
};

/// Parsed backbone architecture.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackboneSpec {
    pub channels: Vec<usize>,
}

impl BackboneSpec {
    /// Parses a backbone identifier against the requested feature dim.
    pub fn parse(id: &str, in_channels: usize, feature_dim: usize) -> Result<Self> {
        let channels = if id == "desk-cnn" {
            vec![
                (feature_dim / 4).max(4),
                (feature_dim / 2).max(8),
                feature_dim,
            ]
        } else if let Some(list) = id.strip_prefix("desk-cnn:") {
            let channels: Vec<usize> = list
                .split(',')
                .map(|tok| {
                    tok.trim().parse::<usize>().map_err(|_| {
                        Error::ConfigParse(format!("backbone channel `{tok}` is not an integer"))
                    })
                })
                .collect::<Result<_>>()?;
            if channels.is_empty() || channels.len() > 5 {
                return Err(Error::ConfigParse(format!(
                    "backbone must have 1..=5 conv blocks, got {}",
                    channels.len()
                )));
            }
            if *channels.last().unwrap() != feature_dim {
                return Err(Error::ConfigParse(format!(
                    "last backbone width {} must equal feature_dim {feature_dim}",
                    channels.last().unwrap()
                )));
            }
            channels
        } else {
            return Err(Error::ConfigParse(format!(
                "unknown backbone `{id}` (expected `desk-cnn` or `desk-cnn:c1,...`)"
            )));
        };
        if in_channels == 0 {
            return Err(Error::ConfigParse("input channels must be ≥ 1".into()));
        }
        Ok(Self { channels })
    }
}

/// Conv–leaky-ReLU–maxpool feature extractor ending in global average pooling.
#[derive(Debug, Clone)]
pub struct ConvNet<F: Float> {
    pub blocks: Vec<Conv2d<F>>,
    pub in_channels: usize,
}

/// Backward state of one forward pass through the backbone.
pub struct ConvNetCache<F: Float> {
    block_caches: Vec<(ConvCache<F>, ReluCache, PoolCache)>,
    gap_spatial: (usize, usize),
}

impl<F: Float> ConvNet<F> {
    pub fn new(spec: &BackboneSpec, in_channels: usize, rng: &mut StdRng) -> Self {
        let mut blocks = Vec::with_capacity(spec.channels.len());
        let mut prev = in_channels;
        for &ch in &spec.channels {
            blocks.push(Conv2d::new(prev, ch, 3, 1, rng));
            prev = ch;
        }
        Self { blocks, in_channels }
    }

    /// Output feature dimensionality (the last conv width).
    pub fn feature_dim(&self) -> usize {
        self.blocks.last().map(|b| b.out_ch).unwrap_or(0)
    }

    /// Minimum input spatial extent: each block halves the resolution.
    pub fn min_spatial(&self) -> usize {
        1 << self.blocks.len()
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        let (c, h, w) = (shape[1], shape[2], shape[3]);
        if c != self.in_channels {
            return Err(Error::shape_mismatch(
                "input channels vs backbone",
                &[c],
                &[self.in_channels],
            ));
        }
        let div = self.min_spatial();
        if h % div != 0 || w % div != 0 || h < div || w < div {
            return Err(Error::ConfigParse(format!(
                "input spatial {h}×{w} must be a positive multiple of {div}"
            )));
        }
        Ok(())
    }

    /// Features `h = GAP(blocks(x))`, shape `[B, feature_dim]`, plus cache.
    pub fn forward_cached(&self, x: &Array4<F>) -> Result<(Array2<F>, ConvNetCache<F>)> {
        self.check_input(x.shape())?;
        let mut cur = x.clone();
        let mut block_caches = Vec::with_capacity(self.blocks.len());
        for conv in &self.blocks {
            let (mut y, conv_cache) = conv.forward_cached(&cur);
            let relu_cache = relu_forward_cached(&mut y);
            let (pooled, pool_cache) = maxpool2_forward_cached(&y);
            block_caches.push((conv_cache, relu_cache, pool_cache));
            cur = pooled;
        }
        let gap_spatial = (cur.shape()[2], cur.shape()[3]);
        let features = global_avg_pool(&cur);
        Ok((
            features,
            ConvNetCache {
                block_caches,
                gap_spatial,
            },
        ))
    }

    /// Backward from feature gradients. Accumulates `(dw, db)` per block when
    /// `need_params` and returns the input gradient when `need_input`.
    pub fn backward(
        &self,
        cache: &ConvNetCache<F>,
        d_features: &Array2<F>,
        need_params: bool,
        need_input: bool,
    ) -> (Option<Vec<(Array2<F>, ndarray::Array1<F>)>>, Option<Array4<F>>) {
        let mut dy = global_avg_pool_backward(d_features, cache.gap_spatial);
        let mut param_grads: Vec<(Array2<F>, ndarray::Array1<F>)> = Vec::new();
        for (i, conv) in self.blocks.iter().enumerate().rev() {
            let (conv_cache, relu_cache, pool_cache) = &cache.block_caches[i];
            let mut d_pre_pool = maxpool2_backward(pool_cache, &dy);
            relu_backward(relu_cache, &mut d_pre_pool);
            let need_dx = need_input || i > 0;
            let (params, dx) = conv.backward(conv_cache, &d_pre_pool, need_params, need_dx);
            if let Some(p) = params {
                param_grads.push(p);
            }
            match dx {
                Some(g) => dy = g,
                None => break,
            }
        }
        if need_params {
            param_grads.reverse();
        }
        (
            need_params.then_some(param_grads),
            need_input.then_some(dy),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn parse_default_and_explicit_backbones() {
        let spec = BackboneSpec::parse("desk-cnn", 3, 32).unwrap();
        assert_eq!(spec.channels, vec![8, 16, 32]);
        let spec = BackboneSpec::parse("desk-cnn:4,8", 3, 8).unwrap();
        assert_eq!(spec.channels, vec![4, 8]);
        assert!(BackboneSpec::parse("desk-cnn:4,8", 3, 16).is_err());
        assert!(BackboneSpec::parse("resnet-18", 3, 32).is_err());
    }

    #[test]
    fn forward_shape_and_input_validation() {
        let mut rng = StdRng::seed_from_u64(1);
        let spec = BackboneSpec::parse("desk-cnn:4,8", 1, 8).unwrap();
        let net = ConvNet::<f32>::new(&spec, 1, &mut rng);
        let x = Array4::<f32>::zeros((2, 1, 8, 8));
        let (h, _) = net.forward_cached(&x).unwrap();
        assert_eq!(h.shape(), &[2, 8]);
        let bad = Array4::<f32>::zeros((2, 1, 6, 6));
        assert!(net.forward_cached(&bad).is_err());
    }

    #[test]
    fn backbone_input_gradient_matches_finite_differences() {
        let mut rng = StdRng::seed_from_u64(5);
        let spec = BackboneSpec::parse("desk-cnn:3,4", 2, 4).unwrap();
        let net = ConvNet::<f64>::new(&spec, 2, &mut rng);
        let x = Array4::from_shape_fn((1, 2, 4, 4), |(b, c, i, j)| {
            ((b + c * 3 + i * 7 + j) as f64 * 0.37).sin()
        });
        let (h, cache) = net.forward_cached(&x).unwrap();
        // Objective: sum of features.
        let dh = Array2::ones(h.raw_dim());
        let (_, dx) = net.backward(&cache, &dh, false, true);
        let dx = dx.unwrap();
        for &idx in &[(0, 0, 0, 0), (0, 1, 3, 2), (0, 0, 2, 1)] {
            let mut xp = x.clone();
            xp[[idx.0, idx.1, idx.2, idx.3]] += 1e-6;
            let up = net.forward_cached(&xp).unwrap().0.sum();
            let mut xm = x.clone();
            xm[[idx.0, idx.1, idx.2, idx.3]] -= 1e-6;
            let down = net.forward_cached(&xm).unwrap().0.sum();
            let fd = (up - down) / 2e-6;
            assert!(
                (dx[[idx.0, idx.1, idx.2, idx.3]] - fd).abs() < 1e-6,
                "got {} fd {}",
                dx[[idx.0, idx.1, idx.2, idx.3]],
                fd
            );
        }
    }
}
