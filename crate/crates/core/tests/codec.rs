use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spp_core::codec::entropy::PAYLOAD_HEADER_LEN;
use spp_core::codec::{
    bpp, decode_codes, embedding_name, empirical_entropy, encode_codes, quantize_tensor, Bitstream, Checkpoint,
    EntropyCoder,
};
use spp_core::trainer::{evaluate, mean_metrics};
use spp_core::videoio::synth_clip;
use spp_core::{rd_point, Error, SppConfig, SppModel, SynthKind, Tensor32, TrainConfig};
use spp_diffcore::ParamStore;

fn untrained_checkpoint(cfg: &SppConfig, seed: u64) -> Checkpoint {
    let (model, store) = SppModel::init::<f32>(cfg, seed).unwrap();
    let clip = synth_clip::<f32>(SynthKind::BouncingBox, cfg.frames, cfg.height, cfg.width, seed).unwrap();
    let mut params = ParamStore::new();
    for (name, t) in store.iter() {
        params.add(name, t.clone());
    }
    for (t, frame) in clip.frames().iter().enumerate() {
        params.add(embedding_name(t), model.encode(&store, frame, t).unwrap().z);
    }
    Checkpoint {
        config: cfg.clone(),
        train: Some(TrainConfig::default()),
        params,
    }
}

fn small_config() -> SppConfig {
    SppConfig::for_clip(3, 32, 32, vec![2, 2, 2])
}

/// Laplacian-like codes in the 8-bit range.
fn skewed_codes(n: usize, spread: f64, seed: u64) -> Vec<i32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let u: f64 = rng.gen_range(1e-12..1.0);
            let mag = (-spread * u.ln()).round().min(127.0) as i32;
            if rng.gen_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect()
}

#[test]
fn quantize_examples() {
    let q = quantize_tensor("w", &Tensor32::new(&[3], vec![-1.0, 0.0, 1.0]).unwrap(), 8).unwrap();
    assert_eq!(q.scale, 1.0 / 127.0);
    assert_eq!(q.codes, vec![-127, 0, 127]);
    let z = quantize_tensor("z", &Tensor32::zeros(&[2, 3]), 8).unwrap();
    assert_eq!((z.scale, z.codes.as_slice()), (0.0, &[0; 6][..]));
    assert!(z.dequantize().unwrap().data().iter().all(|&v| v == 0.0));
    for bits in [1, 17] {
        assert!(quantize_tensor("w", &Tensor32::zeros(&[1]), bits).unwrap_err().is_config());
    }
}

#[test]
fn quantization_error_is_half_a_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for bits in [2, 4, 8, 12, 16] {
        let w = Tensor32::uniform(&[4096], -0.7, 0.3, &mut rng);
        let q = quantize_tensor("w", &w, bits).unwrap();
        let d = q.dequantize().unwrap();
        let limit = (1i32 << (bits - 1)) - 1;
        assert!(q.codes.iter().all(|c| c.abs() <= limit));
        for (a, b) in w.data().iter().zip(d.data()) {
            let err = (a - b).abs();
            assert!(err <= q.scale / 2.0 + 1e-6 * a.abs(), "bits {bits}: {a} -> {b}, scale {}", q.scale);
        }
    }
}

#[test]
fn repeated_symbol_is_nearly_free() {
    let codes = vec![5; 10_000];
    let payload = encode_codes(&codes, 8, EntropyCoder::Range).unwrap();
    assert!(payload.len() < 100, "{} bytes", payload.len());
    assert_eq!(decode_codes(&payload).unwrap(), (8, codes.clone()));
    let huffman = encode_codes(&codes, 8, EntropyCoder::Huffman).unwrap();
    assert!(huffman.len() <= 10_000 / 8 + 32);
    assert_eq!(decode_codes(&huffman).unwrap(), (8, codes));
}

#[test]
fn range_coder_within_entropy_bound() {
    let cases = [5_000, 20_000, 50_000]
        .into_iter()
        .flat_map(|n| [0.5, 1.5, 3.0, 6.0, 12.0, 30.0].map(|s| (n, s)))
        .filter(|&(n, s)| n >= 20_000 || s <= 12.0);
    for (n, spread) in cases {
        let codes = skewed_codes(n, spread, n as u64);
        let payload = encode_codes(&codes, 8, EntropyCoder::Range).unwrap();
        let h = empirical_entropy(&codes);
        let bound = n as f64 * h + 0.1 * n as f64 + 64.0;
        let bits = 8.0 * (payload.len() - PAYLOAD_HEADER_LEN) as f64;
        assert!(bits <= bound, "n {n}: {bits} > {bound} (H = {h})");
        assert_eq!(decode_codes(&payload).unwrap().1, codes);
    }
}

#[test]
fn payload_never_exceeds_raw_packing_much() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let codes: Vec<i32> = (0..3000).map(|_| rng.gen_range(-127..=127)).collect();
    for coder in [EntropyCoder::Range, EntropyCoder::Huffman] {
        let payload = encode_codes(&codes, 8, coder).unwrap();
        assert!(payload.len() <= 3000 + 16);
        assert_eq!(decode_codes(&payload).unwrap().1, codes);
    }
}

#[test]
fn out_of_range_codes_rejected() {
    assert!(encode_codes(&[128], 8, EntropyCoder::Range).is_err());
    assert!(encode_codes(&[-2], 2, EntropyCoder::Range).is_err());
}

#[test]
fn corrupt_payload_detected() {
    let codes = skewed_codes(4000, 2.0, 3);
    for coder in [EntropyCoder::Range, EntropyCoder::Huffman] {
        let payload = encode_codes(&codes, 8, coder).unwrap();
        for at in [12, payload.len() / 2, payload.len() - 1] {
            let mut bad = payload.clone();
            bad[at] ^= 0x5a;
            assert!(matches!(decode_codes(&bad), Err(Error::Checksum(_))), "{coder:?} at {at}");
        }
        assert!(decode_codes(&payload[..5]).is_err());
    }
}

#[test]
fn checkpoint_round_trip_is_byte_exact() {
    let ckpt = untrained_checkpoint(&small_config(), 1);
    let bytes = ckpt.to_bytes();
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back, ckpt);
    assert_eq!(back.to_bytes(), bytes);
    for ((na, a), (nb, b)) in ckpt.params.iter().zip(back.params.iter()) {
        assert_eq!(na, nb);
        let bits = |t: &Tensor32| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a), bits(b));
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    ckpt.save(&path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
    assert_eq!(Checkpoint::load(&path).unwrap(), ckpt);
}

#[test]
fn corrupt_checkpoint_rejected() {
    let bytes = untrained_checkpoint(&small_config(), 2).to_bytes();
    let mut flipped = bytes.clone();
    let mid = bytes.len() / 2;
    flipped[mid] ^= 1;
    assert!(matches!(Checkpoint::from_bytes(&flipped), Err(Error::Checksum(_))));
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 7]).is_err());
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(Checkpoint::from_bytes(&magic).is_err());
    let missing = tempfile::tempdir().unwrap().path().join("absent.ckpt");
    assert!(matches!(Checkpoint::load(&missing), Err(Error::Io { .. })));
}

#[test]
fn bitstream_round_trip_is_code_exact() {
    let cfg = small_config();
    let ckpt = untrained_checkpoint(&cfg, 3);
    let dir = tempfile::tempdir().unwrap();
    for coder in [EntropyCoder::Range, EntropyCoder::Huffman] {
        for bits in [4, 8, 16] {
            let stream = Bitstream::from_checkpoint(&ckpt, bits, coder).unwrap();
            let names: Vec<&str> = stream.tensors.iter().map(|t| t.name.as_str()).collect();
            assert!(names.iter().all(|n| !n.starts_with("encoder.")));
            assert!(names.contains(&"embed.0000") && names.contains(&"embed.0002"));
            let bytes = stream.to_bytes().unwrap();
            let back = Bitstream::from_bytes(&bytes).unwrap();
            assert_eq!(back, stream);
            let path = dir.path().join(format!("m{bits}{coder:?}.bits"));
            let size = stream.save(&path).unwrap();
            assert_eq!(size, std::fs::metadata(&path).unwrap().len());
            assert_eq!(size, bytes.len() as u64);
            let total = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
            assert_eq!(total, size);
            let decoded = Bitstream::load(&path).unwrap().to_checkpoint().unwrap();
            for q in &stream.tensors {
                let id = decoded.params.find(&q.name).unwrap();
                assert_eq!(decoded.params.get(id), &q.dequantize().unwrap());
            }
            assert_eq!(decoded.decode_scalar_count(), stream.scalar_count());
        }
    }
}

#[test]
fn corrupt_bitstream_rejected() {
    let stream = Bitstream::from_checkpoint(&untrained_checkpoint(&small_config(), 4), 8, EntropyCoder::Range).unwrap();
    let bytes = stream.to_bytes().unwrap();
    let mut bad = bytes.clone();
    let at = bytes.len() - 40;
    bad[at] ^= 0x10;
    assert!(Bitstream::from_bytes(&bad).is_err());
    assert!(Bitstream::from_bytes(&bytes[..bytes.len() - 1]).is_err());
}

#[test]
fn bpp_arithmetic() {
    assert!((bpp(1000, 8, 32, 64) - 0.48828125).abs() < 1e-12);
}

#[test]
fn high_bit_width_is_near_lossless() {
    let cfg = small_config();
    let ckpt = untrained_checkpoint(&cfg, 5);
    let clip = synth_clip::<f32>(SynthKind::BouncingBox, cfg.frames, cfg.height, cfg.width, 5).unwrap();
    let (base, _) = mean_metrics(&evaluate(&ckpt, &clip).unwrap());
    let p16 = rd_point(&ckpt, &clip, 16, EntropyCoder::Range).unwrap();
    let p8 = rd_point(&ckpt, &clip, 8, EntropyCoder::Range).unwrap();
    assert!((p16.psnr - base).abs() < 0.1, "{} vs {base}", p16.psnr);
    assert!(p8.bpp < p16.bpp);
    assert_eq!(p8.param_count, p16.param_count);
    assert_eq!(p8.bpp, bpp(p8.bytes, 3, 32, 32));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn entropy_round_trip(bits in 2u8..=16, seed in any::<u64>(), n in 0usize..600, huffman in any::<bool>()) {
        let max = (1i32 << (bits - 1)) - 1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let codes: Vec<i32> = (0..n).map(|_| rng.gen_range(-max..=max)).collect();
        let coder = if huffman { EntropyCoder::Huffman } else { EntropyCoder::Range };
        let payload = encode_codes(&codes, bits, coder).unwrap();
        prop_assert_eq!(decode_codes(&payload).unwrap(), (bits, codes));
    }
}
