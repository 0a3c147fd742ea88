//! Engine-vs-oracle equivalence for the spatial entropy computation.

mod common;

use common::{entropy_map_oracle, hard_histogram_entropy_oracle, random_lattice_frame};
use entrokeys::entropy::{spatial_entropy, HistogramSpec, BINS};
use entrokeys::image_io::PreprocessedFrame;

type F = f64;

#[test]
fn engine_matches_direct_summation_oracle_on_random_frames() {
    for seed in 0..4u64 {
        let frame = PreprocessedFrame::from_frame(random_lattice_frame(16, 16, seed));
        for bandwidth in [1.0 / 4096.0, 1.0 / 512.0] {
            let spec = HistogramSpec::new(bandwidth, 3).unwrap();
            let map = spatial_entropy(&frame, &spec, 1).unwrap();
            let oracle = entropy_map_oracle(&frame, &spec);
            for (i, (&got, &want)) in map.values().iter().zip(&oracle).enumerate() {
                assert!(
                    (got - want).abs() < 1e-9,
                    "seed {seed} B {bandwidth} pixel {i}: {got} vs {want}"
                );
            }
        }
    }
}

#[test]
fn engine_converges_to_hard_histogram_as_bandwidth_shrinks() {
    for seed in [7u64, 8] {
        let frame = PreprocessedFrame::from_frame(random_lattice_frame(16, 16, seed));
        let spec = HistogramSpec::new(1e-4, 3).unwrap();
        let map = spatial_entropy(&frame, &spec, 1).unwrap();
        let oracle = hard_histogram_entropy_oracle(&frame, 3);
        for (i, (&got, &want)) in map.values().iter().zip(&oracle).enumerate() {
            assert!(
                (got - want).abs() < 1e-3,
                "seed {seed} pixel {i}: {got} vs {want}"
            );
        }
    }
}

#[test]
fn engine_matches_oracle_with_wider_regions() {
    let frame = PreprocessedFrame::from_frame(random_lattice_frame(14, 12, 42));
    let spec = HistogramSpec::new(1.0 / 4096.0, 5).unwrap();
    let map = spatial_entropy(&frame, &spec, 2).unwrap();
    let oracle = entropy_map_oracle(&frame, &spec);
    for (&got, &want) in map.values().iter().zip(&oracle) {
        assert!((got - want).abs() < 1e-9);
    }
}

#[test]
fn entropy_bounds_hold_for_arbitrary_offlattice_frames() {
    // Off-lattice values exercise the kernel tails; the range invariant and
    // oracle agreement must still hold.
    let mut frame = random_lattice_frame(12, 12, 3);
    {
        let w = frame.width();
        for y in 0..frame.height() {
            for x in 0..w {
                let base = frame.pixel(x, y);
                frame.set_pixel(
                    x,
                    y,
                    [
                        (base[0] + 0.0007).min(1.0),
                        base[1],
                        (base[2] + 0.4991).min(1.0),
                    ],
                );
            }
        }
    }
    let frame = PreprocessedFrame::from_frame(frame);
    let spec = HistogramSpec::default();
    let map = spatial_entropy(&frame, &spec, 1).unwrap();
    let oracle = entropy_map_oracle(&frame, &spec);
    let max = (BINS as F).ln();
    for (&got, &want) in map.values().iter().zip(&oracle) {
        assert!((0.0..=max).contains(&got));
        assert!((got - want).abs() < 1e-9);
    }
}
