use std::path::Path;

use proptest::prelude::*;
use wotf_core::datasets::Image8;
use wotf_core::Grid;
use wotf_probe::formats::{decode_grid, decode_pgm, encode_grid, encode_pgm};

proptest! {
    #[test]
    fn pgm_round_trips(w in 1usize..20, h in 1usize..20, seed in any::<u64>()) {
        let pixels: Vec<u8> = (0..w * h).map(|i| (seed.wrapping_mul(i as u64 + 1) >> 7) as u8).collect();
        let img = Image8::new(w, h, pixels).unwrap();
        prop_assert_eq!(decode_pgm(&encode_pgm(&img), Path::new("p")).unwrap(), img);
    }

    #[test]
    fn grid_round_trips_bit_exactly(r in 1usize..12, c in 1usize..12, vals in proptest::collection::vec(any::<f64>(), 144)) {
        let g = Grid::from_vec(r, c, vals[..r * c].iter().map(|v| if v.is_finite() { *v } else { 0.0 }).collect()).unwrap();
        let back = decode_grid(&encode_grid(&g), Path::new("g")).unwrap();
        prop_assert!(g.as_slice().iter().zip(back.as_slice()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn truncated_grids_are_rejected(cut in 1usize..40) {
        let bytes = encode_grid(&Grid::zeros(2, 2));
        let cut = cut.min(bytes.len());
        prop_assert!(decode_grid(&bytes[..bytes.len() - cut], Path::new("g")).is_err());
    }
}
