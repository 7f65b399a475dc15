use proptest::prelude::*;
use specflow::evalkit::spectrum_report;
use specflow::synthdata::{
    denormalize, encoded_len, expert_chunk, gen_dataset, normalize, read_dataset, write_dataset,
    Dataset, NormStats, Task,
};
use specflow::{ActionChunk, Error};

#[test]
fn generator_examples() {
    let a = expert_chunk(Task::Reach, &[1.0, 0.0], 0, 4).unwrap();
    assert_eq!(a.column(0), vec![0.25, 0.5, 0.75, 1.0]);
    assert_eq!(a.column(1), vec![0.0; 4]);

    let c = expert_chunk(Task::Gripper, &[0.2, 0.3, 0.5], 0, 4).unwrap();
    assert_eq!(c.column(2), vec![-1.0, -1.0, 1.0, 1.0]);

    let g = [0.4, -0.8];
    let m0 = expert_chunk(Task::Bimodal, &g, 0, 16).unwrap();
    let m1 = expert_chunk(Task::Bimodal, &g, 1, 16).unwrap();
    assert_eq!(m0.row(15), &g);
    assert_eq!(m1.row(15), &g);
    // The average path runs through the obstacle at g/2.
    let closest = (0..16)
        .map(|h| {
            let p = [
                (m0.get(h, 0) + m1.get(h, 0)) / 2.0,
                (m0.get(h, 1) + m1.get(h, 1)) / 2.0,
            ];
            (p[0] - g[0] / 2.0).hypot(p[1] - g[1] / 2.0)
        })
        .fold(f64::INFINITY, f64::min);
    assert!(closest < 0.05, "{closest}");

    assert!("walk".parse::<Task>().is_err());
    assert!(gen_dataset(Task::Reach, 0, 1).is_err());
}

#[test]
fn generation_is_deterministic() {
    for task in Task::ALL {
        assert_eq!(
            gen_dataset(task, 50, 9).unwrap(),
            gen_dataset(task, 50, 9).unwrap()
        );
        assert_ne!(
            gen_dataset(task, 50, 9).unwrap(),
            gen_dataset(task, 50, 10).unwrap()
        );
    }
}

#[test]
fn file_round_trip_and_size() {
    let dir = tempfile::tempdir().unwrap();
    for task in Task::ALL {
        let ds = gen_dataset(task, 37, 4).unwrap();
        let p1 = dir.path().join(format!("{}-1.fqpd", task.as_str()));
        let p2 = dir.path().join(format!("{}-2.fqpd", task.as_str()));
        write_dataset(&ds, &p1).unwrap();
        write_dataset(&gen_dataset(task, 37, 4).unwrap(), &p2).unwrap();
        let (b1, b2) = (std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        assert_eq!(b1, b2);
        let (o, d, h) = (task.obs_dim(), task.action_dim(), task.horizon());
        assert_eq!(b1.len(), 32 + 8 + 8 * d + 37 * (4 + 4 * o + 4 * h * d));
        assert_eq!(b1.len(), encoded_len(o, d, h, 37));
        assert_eq!(read_dataset(&p1).unwrap(), ds);
    }
}

#[test]
fn damaged_files_are_rejected() {
    let ds = gen_dataset(Task::Bimodal, 5, 1).unwrap();
    let bytes = ds.to_bytes();
    for cut in [0, 3, 20, 40, bytes.len() - 1] {
        match Dataset::from_bytes(&bytes[..cut]) {
            Err(Error::Format { .. }) => {}
            other => panic!("cut at {cut}: {other:?}"),
        }
    }
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(
        Dataset::from_bytes(&bad),
        Err(Error::Format { offset: 0, .. })
    ));
    let mut bad = bytes.clone();
    bad[4] = 9;
    assert!(matches!(
        Dataset::from_bytes(&bad),
        Err(Error::Format { offset: 4, .. })
    ));
    let mut long = bytes;
    long.push(0);
    assert!(Dataset::from_bytes(&long).is_err());
    assert!(read_dataset("/nonexistent/x.fqpd").is_err());
}

#[test]
fn bimodal_coin_is_fair() {
    for seed in 0..5 {
        let ds = gen_dataset(Task::Bimodal, 1000, seed).unwrap();
        let ones = ds.episodes.iter().filter(|e| e.mode_id == 1).count() as f64;
        let zeros = 1000.0 - ones;
        assert!(
            (ones - zeros).abs() <= 4.0 * 1000f64.sqrt(),
            "seed {seed}: {ones}"
        );
        assert!(ds.episodes.iter().all(|e| e.mode_id <= 1));
    }
    let reach = gen_dataset(Task::Reach, 100, 0).unwrap();
    assert!(reach.episodes.iter().all(|e| e.mode_id == 0));
}

#[test]
fn gripper_dimension_carries_the_high_frequencies() {
    let ds = gen_dataset(Task::Gripper, 500, 2).unwrap();
    let chunks: Vec<ActionChunk> = ds.episodes.iter().map(|e| e.chunk.clone()).collect();
    let rep = spectrum_report(&chunks).unwrap();
    // Unweighted energy outside k = 0, summed over samples.
    let ac = |d: usize| -> f64 {
        chunks
            .iter()
            .map(|c| {
                let f = specflow::spectral::dct2_chunk(c).unwrap();
                (1..c.horizon()).map(|k| f.get(k, d).powi(2)).sum::<f64>()
            })
            .sum()
    };
    assert!(ac(2) >= 5.0 * ac(0), "{} vs {}", ac(2), ac(0));
    assert!(rep.non_stationary[2]);
}

#[test]
fn normalization_examples() {
    let stats = NormStats {
        min: vec![-2.0, 0.0],
        max: vec![2.0, 4.0],
    };
    let at_min = ActionChunk::new(2, 2, vec![-2.0, 0.0, -2.0, 0.0]).unwrap();
    assert!(normalize(&at_min, &stats)
        .unwrap()
        .data()
        .iter()
        .all(|v| *v == -1.0));
    let mid = ActionChunk::new(1, 2, vec![0.0, 2.0]).unwrap();
    assert_eq!(normalize(&mid, &stats).unwrap().data(), &[0.0, 0.0]);
    let flat = NormStats {
        min: vec![1.0, 0.0],
        max: vec![1.0, 4.0],
    };
    assert!(normalize(&mid, &flat).is_err());

    // Constant dimension in data gets a widened range.
    let konst = vec![ActionChunk::new(2, 1, vec![0.5, 0.5]).unwrap()];
    let s = NormStats::from_chunks(&konst).unwrap();
    assert!(s.min[0] < 0.5 && s.max[0] > 0.5);
    assert!((s.max[0] - s.min[0] - 2e-6).abs() < 1e-7);
}

#[test]
fn dataset_chunks_normalize_into_unit_box() {
    for task in Task::ALL {
        let ds = gen_dataset(task, 200, 3).unwrap();
        for e in &ds.episodes {
            let n = normalize(&e.chunk, &ds.norm).unwrap();
            assert!(n.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }
}

proptest! {
    #[test]
    fn normalize_round_trip(
        data in prop::collection::vec(-5.0f64..5.0, 12),
        lo in prop::collection::vec(-3.0f64..0.0, 3),
        width in prop::collection::vec(0.01f64..4.0, 3),
    ) {
        let stats = NormStats { max: lo.iter().zip(&width).map(|(a, w)| a + w).collect(), min: lo };
        let c = ActionChunk::new(4, 3, data).unwrap();
        let back = denormalize(&normalize(&c, &stats).unwrap(), &stats).unwrap();
        for (a, b) in back.data().iter().zip(c.data()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
