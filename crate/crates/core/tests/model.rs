use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spp_core::model::init_decoder;
use spp_core::objective::composite_loss_var;
use spp_core::spp::{self, PatchLayout};
use spp_core::{FrameEmbedding, SppConfig, SppModel, Tensor32, Tensor64, UpsampleMode};
use spp_diffcore::gradcheck::check_gradients;
use spp_diffcore::{ParamStore, Scalar, Tensor};

fn matrix() -> Vec<(&'static str, SppConfig)> {
    let base = SppConfig::default();
    vec![
        ("default", base.clone()),
        ("split-0", SppConfig { cond_split: 0, ..base.clone() }),
        ("split-1", SppConfig { cond_split: 1, ..base.clone() }),
        ("split-all", SppConfig { cond_split: 3, ..base.clone() }),
        (
            "pixel-shuffle",
            SppConfig {
                upsample: UpsampleMode::PixelShuffle,
                ..base.clone()
            },
        ),
        ("tiled", SppConfig { layout: PatchLayout::Tiled, ..base.clone() }),
        (
            "r3",
            SppConfig {
                height: 24,
                width: 48,
                r: 3,
                strides: vec![2, 2],
                cond_split: 1,
                ..base.clone()
            },
        ),
        (
            "r4-wide",
            SppConfig {
                height: 32,
                width: 32,
                r: 4,
                strides: vec![2, 2],
                cond_split: 1,
                ..base.with_width_factor(2.0)
            },
        ),
    ]
}

fn random_embedding<T: Scalar>(cfg: &SppConfig, t: usize, seed: u64) -> FrameEmbedding<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    FrameEmbedding {
        t,
        z: Tensor::uniform(&[cfg.embed_channels, cfg.embed_height(), cfg.embed_width()], -1.0, 1.0, &mut rng),
    }
}

fn patches_of<T: Scalar>(cfg: &SppConfig, frame: &Tensor<T>) -> Vec<Tensor<T>> {
    spp::split_with(frame, cfg.r, cfg.layout).unwrap().patches().to_vec()
}

#[test]
fn trunk_sharing_matches_per_patch_decoding() {
    for (name, cfg) in matrix() {
        cfg.validate().unwrap();
        let (decoder, store) = init_decoder::<f32>(&cfg, 5).unwrap();
        for t in [0, cfg.frames - 1] {
            let emb = random_embedding::<f32>(&cfg, t, 11 + t as u64);
            let frame = decoder.decode_frame(&store, &emb).unwrap();
            assert_eq!(frame.shape(), &[cfg.channels, cfg.height, cfg.width], "{name}");
            let singles: Vec<Tensor32> = (0..cfg.patch_count())
                .map(|i| decoder.decode_single_patch(&store, &emb, i).unwrap())
                .collect();
            for s in &singles {
                assert_eq!(s.shape(), &[cfg.channels, cfg.patch_height(), cfg.patch_width()], "{name}");
            }
            let merged = spp::merge(&spp::PatchSet::new(singles, cfg.r, cfg.layout).unwrap()).unwrap();
            let diff = frame.max_abs_diff(&merged);
            assert!(diff < 1e-6, "{name} t={t}: {diff}");
        }
    }
}

#[test]
fn outputs_lie_in_unit_interval() {
    for (name, cfg) in matrix() {
        let (decoder, mut store) = init_decoder::<f64>(&cfg, 2).unwrap();
        for t in store.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= 25.0);
        }
        let frame = decoder.decode_frame(&store, &random_embedding(&cfg, 0, 4)).unwrap();
        assert!(frame.data().iter().all(|&v| (0.0..=1.0).contains(&v)), "{name}");
    }
}

fn zero_patch_pathway(store: &mut ParamStore<f64>, cfg: &SppConfig) {
    let names: Vec<String> = store
        .iter()
        .map(|(n, _)| n.to_string())
        .filter(|n| {
            (cfg.cond_split..cfg.strides.len())
                .any(|b| n.starts_with(&format!("decoder.block{b}.scale")) || n.starts_with(&format!("decoder.block{b}.shift")))
        })
        .collect();
    assert!(!names.is_empty());
    for n in names {
        let shape = store.get(store.find(&n).unwrap()).shape().to_vec();
        store.set(&n, Tensor64::zeros(&shape)).unwrap();
    }
}

#[test]
fn zeroed_heads_give_identical_patches() {
    let cfg = SppConfig::default();
    let (decoder, mut store) = init_decoder::<f64>(&cfg, 8).unwrap();
    let emb = random_embedding(&cfg, 3, 1);
    let before = patches_of(&cfg, &decoder.decode_frame(&store, &emb).unwrap());
    assert!(before[0].max_abs_diff(&before[1]) > 1e-6);
    zero_patch_pathway(&mut store, &cfg);
    let after = patches_of(&cfg, &decoder.decode_frame(&store, &emb).unwrap());
    for p in &after[1..] {
        assert_eq!(p, &after[0]);
    }
}

#[test]
fn no_patch_conditioning_gives_a_mosaic() {
    let cfg = SppConfig {
        cond_split: 3,
        ..SppConfig::default()
    };
    let (decoder, store) = init_decoder::<f64>(&cfg, 8).unwrap();
    let frame = decoder.decode_frame(&store, &random_embedding(&cfg, 1, 1)).unwrap();
    let patches = patches_of(&cfg, &frame);
    for p in &patches[1..] {
        assert_eq!(p, &patches[0]);
    }
    let up = spp::merge(&spp::PatchSet::new(vec![patches[0].clone(); 4], 2, PatchLayout::Interleaved).unwrap()).unwrap();
    let (h, w) = (cfg.height, cfg.width);
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let v = frame.data()[(c * h + y) * w + x];
                assert_eq!(v, patches[0].data()[(c * h / 2 + y / 2) * w / 2 + x / 2]);
                assert_eq!(v, up.data()[(c * h + y) * w + x]);
            }
        }
    }
}

#[test]
fn index_ranges_checked() {
    let cfg = SppConfig::default();
    let (decoder, store) = init_decoder::<f32>(&cfg, 0).unwrap();
    let emb = random_embedding::<f32>(&cfg, 0, 0);
    assert!(decoder.decode_single_patch(&store, &emb, 4).is_err());
    let late = random_embedding::<f32>(&cfg, cfg.frames, 0);
    assert!(decoder.decode_frame(&store, &late).is_err());
}

#[test]
fn encoder_shape_determinism_and_non_collapse() {
    let cfg = SppConfig {
        height: 32,
        width: 32,
        embed_channels: 8,
        ..SppConfig::for_clip(4, 32, 32, vec![2, 2, 2])
    };
    assert_eq!((cfg.embed_height(), cfg.embed_width()), (2, 2));
    let (model, store) = SppModel::init::<f64>(&cfg, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a = Tensor64::uniform(&[3, 32, 32], 0.0, 1.0, &mut rng);
    let b = Tensor64::uniform(&[3, 32, 32], 0.0, 1.0, &mut rng);
    let za = model.encode(&store, &a, 0).unwrap();
    assert_eq!(za.z.shape(), &[8, 2, 2]);
    assert_eq!(za, model.encode(&store, &a, 0).unwrap());
    let zb = model.encode(&store, &b, 0).unwrap();
    assert!(za.z.max_abs_diff(&zb.z) > 1e-6);
    assert!(model.encode(&store, &Tensor64::zeros(&[3, 16, 32]), 0).unwrap_err().is_config());
}

#[test]
fn parameter_count_matches_store() {
    for (name, cfg) in matrix() {
        let (_, store) = SppModel::init::<f32>(&cfg, 0).unwrap();
        assert_eq!(store.num_scalars(), cfg.param_count().unwrap(), "{name}");
        let (_, dec) = init_decoder::<f32>(&cfg, 0).unwrap();
        assert_eq!(dec.num_scalars(), cfg.decoder_param_count().unwrap(), "{name}");
    }
}

fn micro_config() -> SppConfig {
    SppConfig {
        channels: 3,
        height: 4,
        width: 8,
        frames: 2,
        r: 2,
        strides: vec![2],
        embed_channels: 3,
        encoder_widths: vec![3, 4, 4],
        base_width: 4,
        min_width: 2,
        cond_split: 0,
        pe_levels: 3,
        index_dim: 3,
        ..SppConfig::default()
    }
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    let cfg = micro_config();
    let count = cfg.param_count().unwrap();
    assert!(count <= 2000, "{count}");
    let (model, store) = SppModel::init::<f64>(&cfg, 21).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let frame = Tensor64::uniform(&[3, 4, 8], 0.0, 1.0, &mut rng);
    let target = spp::split(&frame, 2).unwrap();
    let inputs: Vec<Tensor64> = store.iter().map(|(_, t)| t.clone()).collect();
    let report = check_gradients(&inputs, 1e-5, 1e-6, |p| {
        let x = p[0].tape().constant(frame.clone());
        let z = model.encoder.forward(p, x).map_err(to_tensor_err)?;
        let pred = model.decoder.decode_all(p, z, 1).map_err(to_tensor_err)?;
        Ok(composite_loss_var(&target, pred, &cfg).map_err(to_tensor_err)?.0)
    })
    .unwrap();
    assert_eq!(report.checked, count);
    assert!(report.max_rel_err < 1e-3, "{report:?}");
}

fn to_tensor_err(e: spp_core::Error) -> spp_diffcore::Error {
    match e {
        spp_core::Error::Tensor(inner) => inner,
        other => spp_diffcore::Error::Config(other.to_string()),
    }
}
