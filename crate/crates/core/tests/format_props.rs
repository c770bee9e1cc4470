//! Codec properties: encode/decode round trips are bit-exact and decoding
//! arbitrary bytes is total (an error, never a panic or a bogus value).

use graphcpd::formats::{
    read_labels, read_mask, read_sequence, write_labels, write_mask, write_mask_pgm,
    write_sequence,
};
use graphcpd::{ChangeMask, Frame, ImageSequence, Labeling};
use proptest::prelude::*;

fn finite_f32() -> impl Strategy<Value = f32> {
    use proptest::num::f32::{NEGATIVE, NORMAL, POSITIVE, SUBNORMAL, ZERO};
    (POSITIVE | NEGATIVE | NORMAL | SUBNORMAL | ZERO).prop_map(|v| v)
}

fn sequences() -> impl Strategy<Value = ImageSequence> {
    (1usize..=5, 1usize..=5, 1usize..=3, 1usize..=4)
        .prop_flat_map(|(h, w, bands, frames)| {
            prop::collection::vec(finite_f32(), h * w * bands * frames)
                .prop_map(move |values| {
                    let per_frame = h * w * bands;
                    let frames: Vec<Frame> = values
                        .chunks_exact(per_frame)
                        .map(|chunk| Frame::new(h, w, bands, chunk.to_vec()).unwrap())
                        .collect();
                    ImageSequence::new(frames).unwrap()
                })
        })
}

fn labelings() -> impl Strategy<Value = Labeling> {
    (1usize..=8, 1usize..=8)
        .prop_flat_map(|(h, w)| {
            prop::collection::vec(0u32..6, h * w).prop_map(move |raw| {
                // Renumber by first occurrence so labels are contiguous.
                let mut next = 0u32;
                let mut map = std::collections::HashMap::new();
                let labels: Vec<u32> = raw
                    .iter()
                    .map(|&r| *map.entry(r).or_insert_with(|| {
                        let id = next;
                        next += 1;
                        id
                    }))
                    .collect();
                Labeling::new(h, w, labels).unwrap()
            })
        })
}

fn masks() -> impl Strategy<Value = ChangeMask> {
    (1usize..=8, 1usize..=8).prop_flat_map(|(h, w)| {
        prop::collection::vec(0u8..=1, h * w)
            .prop_map(move |flags| ChangeMask::new(h, w, flags).unwrap())
    })
}

proptest! {
    #[test]
    fn sequence_round_trip_is_bit_exact(seq in sequences()) {
        let mut bytes = Vec::new();
        write_sequence(&mut bytes, &seq).unwrap();
        let back = read_sequence(bytes.as_slice()).unwrap();
        prop_assert_eq!(back.len(), seq.len());
        prop_assert_eq!(
            (back.height(), back.width(), back.bands()),
            (seq.height(), seq.width(), seq.bands())
        );
        for t in 0..seq.len() {
            let (a, b) = (seq.frame(t).values(), back.frame(t).values());
            prop_assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        // Encoding is deterministic byte for byte.
        let mut again = Vec::new();
        write_sequence(&mut again, &back).unwrap();
        prop_assert_eq!(bytes, again);
    }

    #[test]
    fn labeling_round_trip_is_exact(labeling in labelings()) {
        let mut bytes = Vec::new();
        write_labels(&mut bytes, &labeling).unwrap();
        let back = read_labels(bytes.as_slice()).unwrap();
        prop_assert_eq!(back.labels(), labeling.labels());
        prop_assert_eq!(
            (back.height(), back.width()),
            (labeling.height(), labeling.width())
        );
    }

    #[test]
    fn mask_round_trip_is_exact(mask in masks()) {
        let mut bytes = Vec::new();
        write_mask(&mut bytes, &mask).unwrap();
        let back = read_mask(bytes.as_slice()).unwrap();
        prop_assert_eq!(back.flags(), mask.flags());
        prop_assert_eq!((back.height(), back.width()), (mask.height(), mask.width()));
    }

    #[test]
    fn pgm_export_emits_the_exact_netpbm_bytes(mask in masks()) {
        let mut bytes = Vec::new();
        write_mask_pgm(&mut bytes, &mask).unwrap();
        let mut expected =
            format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
        expected.extend(mask.flags().iter().map(|&f| f * 255));
        prop_assert_eq!(bytes, expected);
    }

    #[test]
    fn decoding_arbitrary_bytes_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
        let _ = read_sequence(bytes.as_slice());
        let _ = read_labels(bytes.as_slice());
        let _ = read_mask(bytes.as_slice());
    }

    #[test]
    fn decoding_truncations_of_valid_documents_errors_not_panics(
        seq in sequences(),
        cut in 0usize..100,
    ) {
        let mut bytes = Vec::new();
        write_sequence(&mut bytes, &seq).unwrap();
        let cut = cut.min(bytes.len().saturating_sub(1));
        prop_assert!(read_sequence(&bytes[..cut]).is_err());
        // Trailing garbage is rejected too.
        bytes.push(0);
        prop_assert!(read_sequence(bytes.as_slice()).is_err());
    }
}
