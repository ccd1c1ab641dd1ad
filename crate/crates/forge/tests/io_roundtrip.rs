use std::path::Path;

use forge::embeddings::{read_embeddings, write_embeddings, EmbeddingMatrix};
use forge::index_io::{load_index, save_index};
use forge::pipeline::build_index;
use forge::shard::{list_shards, read_records, read_shard, record_to_line, parse_record, sha256_hex, write_shard_dir};
use forge::synth::{generate, SynthParams};
use forge_core::dedup::{dedup_corpus, DedupParams, MinHasher};
use forge_core::record::SampleRecord;
use proptest::prelude::*;

fn corpus(n: usize) -> Vec<SampleRecord> {
    generate(&SynthParams::new(n, 21)).lines.iter().filter_map(|l| parse_record(l).ok()).collect()
}

#[test]
fn shard_dir_round_trip_and_manifests() {
    let t = tempfile::tempdir().unwrap();
    let recs = corpus(250);
    let manifests = write_shard_dir(t.path(), &recs, "ingest", 100).unwrap();
    assert_eq!(manifests.iter().map(|m| m.record_count).collect::<Vec<_>>().iter().sum::<u64>() as usize, recs.len());
    let shards = list_shards(t.path()).unwrap();
    assert_eq!(shards.len(), manifests.len());
    for (path, m) in shards.iter().zip(&manifests) {
        assert_eq!(sha256_hex(&std::fs::read(path).unwrap()), m.checksum);
    }
    assert_eq!(read_records(&[t.path().to_path_buf()]).unwrap(), recs);

    // a flipped byte fails the manifest check
    let first = &shards[0];
    let mut bytes = std::fs::read(first).unwrap();
    bytes[5] ^= 1;
    std::fs::write(first, bytes).unwrap();
    assert!(read_shard(first).is_err());
}

#[test]
fn saved_index_dedups_like_the_in_memory_one() {
    let t = tempfile::tempdir().unwrap();
    let p = DedupParams::default();
    let recs = corpus(200);
    let (base, probe) = recs.split_at(120);
    let idx = build_index(base, &p, Path::new(".")).unwrap();
    save_index(&idx, t.path()).unwrap();
    let loaded = load_index(t.path()).unwrap();

    let hasher = MinHasher::new(p.num_hashes, p.seed);
    let items: Vec<_> = base
        .iter()
        .chain(probe)
        .map(|r| forge::pipeline::dedup_item(r, 0, &p, &hasher, Path::new(".")).unwrap())
        .collect();
    let a = dedup_corpus(&items, Some(&idx), None, &p).unwrap();
    let b = dedup_corpus(&items, Some(&loaded), None, &p).unwrap();
    assert_eq!(a, b);
    // everything already in the baseline is removed
    assert!(a.kept.iter().all(|&i| i >= base.len()));
}

#[test]
fn embeddings_file_round_trip() {
    let t = tempfile::tempdir().unwrap();
    let m = EmbeddingMatrix {
        dim: 3,
        rows: vec![vec![0.5, -1.0, 2.25], vec![0.0, 1e-9, -3.5]],
        ids: Some(vec!["a".into(), "b".into()]),
    };
    let path = t.path().join("e.bin");
    write_embeddings(&path, &m).unwrap();
    let back = read_embeddings(&path).unwrap();
    assert_eq!(back.dim, 3);
    assert_eq!(back.ids, m.ids);
    for (x, y) in back.rows.iter().flatten().zip(m.rows.iter().flatten()) {
        assert!((x - y).abs() <= 1e-6 * y.abs().max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn record_lines_round_trip(text in "[a-z 加微]{0,40}", url in proptest::option::of("https://[a-z]{1,8}\\.example/[0-9]{1,4}")) {
        let mut r = SampleRecord::text_only("id-1", text);
        r.url = url;
        r.source = "prop".into();
        let back = parse_record(&record_to_line(&r)).unwrap();
        prop_assert_eq!(back, r);
    }
}
