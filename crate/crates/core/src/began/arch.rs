use rand::Rng;

use super::config::BeganConfig;
use crate::diffcore::{Element, Init, LayerSpec, NetworkSpec};
use crate::error::Result;

/// Encoder: per level `convs_per_stage` × (3×3 conv + ELU), the first conv
/// of each level widening to base·(level+1); 2×2 average pooling between
/// levels; a trailing linear 1×1 conv; a linear projection to `n_z`.
pub fn encoder_layers(cfg: &BeganConfig) -> Result<Vec<LayerSpec>> {
    cfg.validate()?;
    let schedule = cfg.encoder_schedule();
    let mut layers = Vec::new();
    let mut channels = cfg.image_channels;
    for (level, &width) in schedule.iter().enumerate() {
        if level > 0 {
            layers.push(LayerSpec::AvgPool2x2);
        }
        for _ in 0..cfg.convs_per_stage {
            layers.push(LayerSpec::conv3x3(channels, width));
            layers.push(LayerSpec::Elu);
            channels = width;
        }
    }
    layers.push(LayerSpec::conv1x1(channels, channels));
    let s = cfg.min_resolution();
    let flat = channels * s * s;
    layers.push(LayerSpec::Reshape { shape: vec![flat] });
    layers.push(LayerSpec::dense(flat, cfg.n_z));
    Ok(layers)
}

/// Decoder / generator: linear projection from `n_z` to the smallest
/// feature map, then per level `convs_per_stage` × (3×3 conv + ELU) at
/// constant width with nearest-neighbour upsampling between levels, and a
/// trailing linear 1×1 conv to image channels.
pub fn decoder_layers(cfg: &BeganConfig) -> Result<Vec<LayerSpec>> {
    cfg.validate()?;
    let c = cfg.base_channels;
    let s = cfg.min_resolution();
    let mut layers = vec![
        LayerSpec::dense(cfg.n_z, c * s * s),
        LayerSpec::Reshape {
            shape: vec![c, s, s],
        },
    ];
    for level in 0..cfg.stages {
        if level > 0 {
            layers.push(LayerSpec::UpsampleNn2x);
        }
        for _ in 0..cfg.convs_per_stage {
            layers.push(LayerSpec::conv3x3(c, c));
            layers.push(LayerSpec::Elu);
        }
    }
    layers.push(LayerSpec::conv1x1(c, cfg.image_channels));
    Ok(layers)
}

pub fn build_encoder<T: Element>(
    cfg: &BeganConfig,
    init: Init,
    rng: &mut impl Rng,
) -> Result<NetworkSpec<T>> {
    NetworkSpec::build("enc", cfg.image_shape(), encoder_layers(cfg)?, init, rng)
}

pub fn build_decoder<T: Element>(
    cfg: &BeganConfig,
    init: Init,
    rng: &mut impl Rng,
) -> Result<NetworkSpec<T>> {
    NetworkSpec::build("dec", vec![cfg.n_z], decoder_layers(cfg)?, init, rng)
}

/// The autoencoder discriminator `decoder ∘ encoder`.
pub fn build_discriminator<T: Element>(
    cfg: &BeganConfig,
    init: Init,
    rng: &mut impl Rng,
) -> Result<NetworkSpec<T>> {
    let enc = build_encoder(cfg, init, rng)?;
    let dec = build_decoder(cfg, init, rng)?;
    NetworkSpec::chain("disc", &enc, &dec)
}

/// Generator: decoder architecture with its own parameters.
pub fn build_generator<T: Element>(
    cfg: &BeganConfig,
    init: Init,
    rng: &mut impl Rng,
) -> Result<NetworkSpec<T>> {
    build_decoder(cfg, init, rng)?.renamed("gen")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn conv_widths(layers: &[LayerSpec]) -> Vec<usize> {
        layers
            .iter()
            .filter_map(|l| match *l {
                LayerSpec::Conv3x3 { out_channels, .. } => Some(out_channels),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn full_scale_encoder_schedule() {
        let layers = encoder_layers(&BeganConfig::full_scale()).unwrap();
        let mut widths = conv_widths(&layers);
        widths.dedup();
        assert_eq!(widths, vec![64, 128, 192, 256]);
        // the 1×1 layer and the projection carry no nonlinearity
        let n = layers.len();
        assert!(matches!(layers[n - 3], LayerSpec::Conv1x1 { .. }));
        assert!(matches!(
            layers[n - 1],
            LayerSpec::FullyConnected { out_dim: 64, .. }
        ));
    }

    #[test]
    fn full_scale_decoder_is_constant_width() {
        let layers = decoder_layers(&BeganConfig::full_scale()).unwrap();
        assert!(conv_widths(&layers).iter().all(|&w| w == 64));
        assert!(matches!(
            layers.last().unwrap(),
            LayerSpec::Conv1x1 {
                out_channels: 3,
                ..
            }
        ));
    }

    #[test]
    fn desk_shapes() {
        let cfg = BeganConfig::desk();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let enc = build_encoder::<f32>(&cfg, Init::GlorotUniform, &mut rng).unwrap();
        let dec = build_decoder::<f32>(&cfg, Init::GlorotUniform, &mut rng).unwrap();
        let mut widths = conv_widths(enc.layers());
        widths.dedup();
        assert_eq!(widths, vec![16, 32, 48, 64]);
        assert_eq!(enc.output_shape(), &[16]);
        assert_eq!(dec.output_shape(), &[3, 32, 32]);

        let x = Tensor::<f32>::full(&[3, 32, 32], 0.25);
        let code = enc.predict(&x).unwrap();
        assert_eq!(code.shape(), &[16]);
        assert_eq!(dec.predict(&code).unwrap().shape(), x.shape());

        let disc = build_discriminator::<f32>(&cfg, Init::GlorotUniform, &mut rng).unwrap();
        assert_eq!(disc.output_shape(), &[3, 32, 32]);
        let gen = build_generator::<f32>(&cfg, Init::GlorotUniform, &mut rng).unwrap();
        assert!(gen.params().keys().all(|k| k.starts_with("gen.")));
        assert!(disc.params().keys().all(|k| k.starts_with("disc.")));
    }
}
