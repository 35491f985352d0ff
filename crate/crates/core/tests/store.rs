use psykit_core::corpus::{clean_text, ingest, split, DatasetManifest, MmapStore, RawRecord, SplitSpec, TaskKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashSet;

fn records(n: usize, seed: u64) -> Vec<RawRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let words = rng.random_range(0..12);
            let text = (0..words).map(|_| format!("w{}", rng.random_range(0..500))).collect::<Vec<_>>().join(" ");
            let targets = vec![rng.random_range(-5.0f32..5.0) as f64, rng.random_range(0.0f32..1.0) as f64];
            RawRecord::new(i as u64, text, targets)
        })
        .collect()
}

#[test]
fn random_reads_match_originals_on_10k_store() {
    let recs = records(10_000, 4);
    let dir = tempfile::tempdir().unwrap();
    let manifest = DatasetManifest::new("big", TaskKind::MultiOutputRegression, vec!["a".into(), "b".into()], 4);
    let path = dir.path().join("big.psyd");
    ingest(&recs, &manifest, &path).unwrap();
    let store = MmapStore::open(&path).unwrap();
    assert_eq!(store.len(), 10_000);
    assert_eq!(store.manifest().record_count, 10_000);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let idx: Vec<usize> = (0..1000).map(|_| rng.random_range(0..10_000)).collect();
    let batch = store.read_batch(&idx).unwrap();
    for (&i, r) in idx.iter().zip(&batch) {
        assert_eq!(r.text, clean_text(&recs[i].text));
        let want: Vec<u32> = recs[i].targets.iter().map(|&v| (v as f32).to_bits()).collect();
        let got: Vec<u32> = r.targets_f32().iter().map(|v| v.to_bits()).collect();
        assert_eq!(got, want);
    }
    assert!(store.get(10_000).is_err());
}

#[test]
fn split_is_deterministic_and_partitions_for_20_seeds() {
    for seed in 0..20u64 {
        let n = 100 + (seed as usize * 37) % 900;
        let spec = SplitSpec::new(0.8, 0.1, 0.1, seed);
        let a = split(n, &spec).unwrap();
        assert_eq!(a, split(n, &spec).unwrap());
        let all: Vec<usize> = a.train.iter().chain(&a.val).chain(&a.test).copied().collect();
        assert_eq!(all.len(), n);
        assert_eq!(all.iter().copied().collect::<HashSet<_>>().len(), n);
        assert!(all.iter().all(|&i| i < n));
        assert!((a.train.len() as f64 - 0.8 * n as f64).abs() <= 1.0);
        assert_ne!(a, split(n, &SplitSpec::new(0.8, 0.1, 0.1, seed + 100)).unwrap());
    }
}
