use proptest::prelude::*;

use tritcodec::coder::rans::{decode_chunks, encode_symbols, trit_checksum};
use tritcodec::coder::{quantize_probs, Container};
use tritcodec::crr::CrrRouter;
use tritcodec::pipeline::{encode, Asset, CodecConfig, SyntheticSpec};
use tritcodec::pipeline::synthetic::generate_latents;
use tritcodec::tensor::Dims;

fn triple() -> impl Strategy<Value = [f64; 3]> {
    (1e-9f64..1.0, 1e-9f64..1.0, 1e-9f64..1.0).prop_map(|(a, b, c)| {
        let s = a + b + c;
        [a / s, b / s, c / s]
    })
}

fn stream(seed: u64) -> Vec<u8> {
    let spec = SyntheticSpec::new(Dims::new(2, 8, 8), 0.9, (5.0, 15.0), seed);
    let (y, field) = generate_latents(&spec).unwrap();
    let cfg = CodecConfig { chunk_size: 40, ..CodecConfig::default() };
    encode(&Asset::Latent { y, field }, &cfg, &CrrRouter::default()).unwrap().bytes
}

proptest! {
    #[test]
    fn quantized_frequencies_are_valid(p in triple()) {
        let f = quantize_probs(&p);
        prop_assert!(f.is_valid());
        prop_assert_eq!(f.0.iter().map(|&v| v as u32).sum::<u32>(), 4096);
        prop_assert!(f.0.iter().all(|&v| v >= 1));
    }

    #[test]
    fn rans_round_trips(
        data in prop::collection::vec((0u8..3, triple()), 0..600),
        chunk in 1usize..200,
    ) {
        let trits: Vec<u8> = data.iter().map(|d| d.0).collect();
        let freqs: Vec<_> = data.iter().map(|d| quantize_probs(&d.1)).collect();
        let chunks = encode_symbols(&trits, &freqs, chunk);
        prop_assert_eq!(chunks.iter().map(|c| c.trits as usize).sum::<usize>(), trits.len());
        let refs: Vec<(&[u8], u32, u16)> = chunks.iter().map(|c| (&c.bytes[..], c.trits, c.checksum)).collect();
        let back = decode_chunks(&refs, &freqs, 0).unwrap();
        prop_assert_eq!(back, trits);
    }

    #[test]
    fn corrupted_chunk_is_reported(
        data in prop::collection::vec(0u8..3, 50..300),
        flip in any::<prop::sample::Index>(),
        bit in 0u8..8,
    ) {
        let freqs = vec![quantize_probs(&[0.5, 0.3, 0.2]); data.len()];
        let chunks = encode_symbols(&data, &freqs, data.len());
        let mut bytes = chunks[0].bytes.clone();
        let i = flip.index(bytes.len());
        bytes[i] ^= 1 << bit;
        let r = decode_chunks(&[(&bytes[..], chunks[0].trits, chunks[0].checksum)], &freqs, 7);
        if let Ok(t) = r {
            // A flip can only go unnoticed when the decoded trits still hash to the stored checksum.
            prop_assert_eq!(trit_checksum(&t), chunks[0].checksum);
        }
    }

    #[test]
    fn header_bit_flips_are_rejected(seed in 0u64..4, at in any::<prop::sample::Index>(), bit in 0u8..8) {
        let bytes = stream(seed);
        let c = Container::parse(&bytes).unwrap();
        let mut bad = bytes.clone();
        let i = at.index(c.header_len());
        bad[i] ^= 1 << bit;
        prop_assert!(Container::parse(&bad).is_err());
    }

    #[test]
    fn any_prefix_parses_or_fails_cleanly(seed in 0u64..4, cut in any::<prop::sample::Index>()) {
        let bytes = stream(seed);
        let full = Container::parse(&bytes).unwrap();
        let n = cut.index(bytes.len() + 1);
        match Container::parse(&bytes[..n]) {
            Ok(c) => {
                prop_assert!(n >= full.header_len());
                prop_assert_eq!(c.chunks.len(), full.chunks.len());
                let k = c.complete_chunks();
                prop_assert!(k <= full.chunks.len());
                if k < full.chunks.len() {
                    prop_assert!(full.header_len() + full.offsets()[k] + full.chunks[k].bytes as usize > n);
                }
            }
            Err(_) => prop_assert!(n < full.header_len()),
        }
    }

    #[test]
    fn random_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..400)) {
        let _ = Container::parse(&bytes);
        let mut tagged = b"CTC1\x01".to_vec();
        tagged.extend_from_slice(&bytes);
        let _ = Container::parse(&tagged);
    }
}

#[test]
fn serialize_parse_round_trip() {
    let bytes = stream(9);
    let c = Container::parse(&bytes).unwrap();
    assert_eq!(c.serialize(), bytes);
}
