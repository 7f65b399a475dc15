use std::f64::consts::PI;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use specflow::spectral::{
    adaptive_weights, dct2, dct2_chunk, idct2, idct2_chunk, sim, SimKind, SimMode,
};
use specflow::ActionChunk;

/// Direct summation, written independently of the library's matrix.
fn dct_direct(x: &[f64]) -> Vec<f64> {
    let h = x.len() as f64;
    (0..x.len())
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(n, v)| v * ((PI / h) * (n as f64 + 0.5) * k as f64).cos())
                .sum()
        })
        .collect()
}

fn signal(rng: &mut impl Rng, h: usize) -> Vec<f64> {
    (0..h).map(|_| rng.random_range(-1.0..=1.0)).collect()
}

#[test]
fn matches_direct_summation_all_lengths() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for h in 1..=64 {
        for _ in 0..10 {
            let x = signal(&mut rng, h);
            let got = dct2(&x).unwrap();
            let want = dct_direct(&x);
            let err = got
                .iter()
                .zip(&want)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-9, "H={h}: {err}");
        }
    }
}

#[test]
fn impulse_h4() {
    let c = dct2(&[1.0, 0.0, 0.0, 0.0]).unwrap();
    let want = [1.0, 0.9238795, 0.7071068, 0.3826834];
    for (a, b) in c.iter().zip(want) {
        assert!((a - b).abs() < 1e-7);
    }
    let back = idct2(&c).unwrap();
    assert!((back[0] - 1.0).abs() < 1e-12 && back[1..].iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn constant_inverse() {
    let back = idct2(&[8.0 * 0.3, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
    assert!(back.iter().all(|v| (v - 0.3).abs() < 1e-12));
    assert!(dct2(&[]).is_err());
    assert!(idct2(&[]).is_err());
}

#[test]
fn chunk_columns_transform_independently() {
    let impulse =
        ActionChunk::from_columns(&[vec![1.0, 0.0, 0.0, 0.0], vec![1.0, 0.0, 0.0, 0.0]]).unwrap();
    let c = dct2_chunk(&impulse).unwrap();
    let single = dct2(&[1.0, 0.0, 0.0, 0.0]).unwrap();
    for k in 0..4 {
        assert_eq!(c.get(k, 0), single[k]);
        assert_eq!(c.get(k, 1), single[k]);
    }
    let konst = ActionChunk::new(5, 2, vec![0.7; 10]).unwrap();
    let c = dct2_chunk(&konst).unwrap();
    assert!((c.get(0, 0) - 3.5).abs() < 1e-12 && (c.get(0, 1) - 3.5).abs() < 1e-12);
    assert!((1..5).all(|k| c.get(k, 0).abs() < 1e-12 && c.get(k, 1).abs() < 1e-12));
}

#[test]
fn adaptive_weight_examples() {
    // H = 2, D = 1: coefficient differences with norms [0, ln 3].
    let zero = ActionChunk::zeros(2, 1);
    let fr = dct2_chunk(&zero).unwrap();
    // A signal whose k=0 coefficient is 0 and k=1 coefficient is ln 3.
    let c1 = 3f64.ln();
    let x = idct2(&[0.0, c1]).unwrap();
    let fs = dct2_chunk(&ActionChunk::new(2, 1, x.clone()).unwrap()).unwrap();
    let w = adaptive_weights(&fr, &fs).unwrap();
    assert!((w[0] - 0.25).abs() < 1e-12 && (w[1] - 0.75).abs() < 1e-12);
    let s = sim(
        &zero,
        &ActionChunk::new(2, 1, x).unwrap(),
        SimMode::new(SimKind::FreqAdaptive, 1),
    )
    .unwrap();
    assert!((s - 0.75 * c1).abs() < 1e-12);
    assert!((s - 0.8240).abs() < 1e-4);

    let same = adaptive_weights(&fr, &fr).unwrap();
    assert_eq!(same, vec![0.5, 0.5]);
}

#[test]
fn spatial_of_ones() {
    let a = ActionChunk::new(4, 1, vec![1.0; 4]).unwrap();
    let b = ActionChunk::zeros(4, 1);
    assert_eq!(sim(&a, &b, SimMode::new(SimKind::Spatial, 1)).unwrap(), 2.0);
}

#[test]
fn banded_modes_need_valid_cutoff() {
    let a = ActionChunk::zeros(4, 1);
    for kind in [SimKind::FreqLow, SimKind::FreqHigh] {
        assert!(sim(&a, &a, SimMode::new(kind, 0)).is_err());
        assert!(sim(&a, &a, SimMode::new(kind, 4)).is_err());
        assert!(sim(&a, &a, SimMode::new(kind, 3)).is_ok());
    }
}

fn chunk_strategy(h: usize, d: usize) -> impl Strategy<Value = ActionChunk> {
    prop::collection::vec(-1.0f64..1.0, h * d).prop_map(move |v| ActionChunk::new(h, d, v).unwrap())
}

fn pair_strategy() -> impl Strategy<Value = (ActionChunk, ActionChunk)> {
    (2usize..12, 1usize..4).prop_flat_map(|(h, d)| (chunk_strategy(h, d), chunk_strategy(h, d)))
}

proptest! {
    #[test]
    fn round_trip(x in prop::collection::vec(-1.0f64..1.0, 1..64)) {
        let back = idct2(&dct2(&x).unwrap()).unwrap();
        for (a, b) in back.iter().zip(&x) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn energy_bound(x in prop::collection::vec(-1.0f64..1.0, 1..64)) {
        let h = x.len() as f64;
        let e: f64 = dct2(&x).unwrap().iter().map(|c| c * c).sum();
        let n: f64 = x.iter().map(|v| v * v).sum();
        prop_assert!(e <= h * n + 1e-9);
    }

    #[test]
    fn linearity((u, v) in pair_strategy(), alpha in -2.0f64..2.0, beta in -2.0f64..2.0) {
        let mix: Vec<f64> = u.data().iter().zip(v.data()).map(|(a, b)| alpha * a + beta * b).collect();
        let lhs = dct2_chunk(&ActionChunk::new(u.horizon(), u.dims(), mix).unwrap()).unwrap();
        let (cu, cv) = (dct2_chunk(&u).unwrap(), dct2_chunk(&v).unwrap());
        for i in 0..lhs.data().len() {
            prop_assert!((lhs.data()[i] - (alpha * cu.data()[i] + beta * cv.data()[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn chunk_round_trip((u, _v) in pair_strategy()) {
        let back = idct2_chunk(&dct2_chunk(&u).unwrap()).unwrap();
        prop_assert!(back.l2_distance(&u) < 1e-10);
    }

    #[test]
    fn sim_zero_on_identical_and_nonnegative((u, v) in pair_strategy()) {
        let h = u.horizon();
        for kind in SimKind::ALL {
            let mode = SimMode::with_default_split(kind, h);
            prop_assert_eq!(sim(&u, &u, mode).unwrap(), 0.0);
            prop_assert!(sim(&u, &v, mode).unwrap() >= 0.0);
        }
    }

    #[test]
    fn full_mode_negation_invariant((u, v) in pair_strategy()) {
        let neg = |c: &ActionChunk| ActionChunk::new(c.horizon(), c.dims(), c.data().iter().map(|x| -x).collect()).unwrap();
        let mode = SimMode::new(SimKind::FreqFull, 1);
        let a = sim(&u, &v, mode).unwrap();
        let b = sim(&neg(&u), &neg(&v), mode).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn bands_partition_full((u, v) in pair_strategy(), split_frac in 0.0f64..1.0) {
        let h = u.horizon();
        let k = 1 + ((h - 1) as f64 * split_frac) as usize;
        let k = k.min(h - 1);
        let lo = sim(&u, &v, SimMode::new(SimKind::FreqLow, k)).unwrap();
        let hi = sim(&u, &v, SimMode::new(SimKind::FreqHigh, k)).unwrap();
        let full = sim(&u, &v, SimMode::new(SimKind::FreqFull, k)).unwrap();
        prop_assert!((lo * lo + hi * hi - full * full).abs() < 1e-10);
    }

    #[test]
    fn adaptive_weights_normalized_and_shift_invariant((u, v) in pair_strategy(), shift in 0.0f64..3.0) {
        let (fu, fv) = (dct2_chunk(&u).unwrap(), dct2_chunk(&v).unwrap());
        let w = adaptive_weights(&fu, &fv).unwrap();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(w.iter().all(|x| *x > 0.0));
        // Adding `shift` to every distance: compare against a softmax oracle.
        let dist = fu.band_distances(&fv).unwrap();
        let shifted: Vec<f64> = dist.iter().map(|d| (d + shift).exp()).collect();
        let z: f64 = shifted.iter().sum();
        for (a, b) in w.iter().zip(shifted.iter().map(|e| e / z)) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
