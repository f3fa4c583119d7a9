//! Byte-level layouts and round trips of every on-disk format.

use kernelscope::autoencoder::{decode_model, encode_model, init_model, save_model, load_model};
use kernelscope::classifier::{read_assignments_csv, write_assignments_csv, Assignment, Reason};
use kernelscope::corpus::{
    decode_corpus, encode_corpus, export_csv_writer, import_csv_reader, read_corpus, write_corpus,
    Corpus, FilterRecord,
};
use kernelscope::dogfamily::PatternClass;
use kernelscope::spectrum::{load_labelmap, parse_labelmap, save_labelmap, LabelInterval, LabelMap};
use kernelscope::Error;
use proptest::prelude::*;

fn hand_built_kcp() -> Vec<u8> {
    let mut b = Vec::new();
    b.extend_from_slice(b"KCP1");
    b.extend_from_slice(&3u32.to_le_bytes());
    b.extend_from_slice(&2u64.to_le_bytes());
    b.extend_from_slice(&1u32.to_le_bytes());
    b.extend_from_slice(&2u32.to_le_bytes());
    b.extend_from_slice(b"mx");
    b.extend_from_slice(&4u32.to_le_bytes());
    b.extend_from_slice(&2u64.to_le_bytes());
    for channel in 0..2u32 {
        b.extend_from_slice(&2u32.to_le_bytes());
        b.extend_from_slice(b"mx");
        b.extend_from_slice(&4u32.to_le_bytes());
        b.extend_from_slice(&1u32.to_le_bytes());
        b.extend_from_slice(&channel.to_le_bytes());
        for j in 0..9 {
            b.extend_from_slice(&(j as f32 * 0.5 - channel as f32).to_le_bytes());
        }
    }
    b
}

#[test]
fn kcp1_layout_decodes_and_re_encodes_identically() {
    let bytes = hand_built_kcp();
    let c = decode_corpus(&bytes).unwrap();
    assert_eq!(c.kernel_size(), 3);
    assert_eq!(c.len(), 2);
    let r = &c.records()[1];
    assert_eq!((r.model_id.as_str(), r.layer_index, r.stage_index, r.channel_index), ("mx", 4, 1, 1));
    assert_eq!(r.weights[2], 0.0);
    assert_eq!(c.manifest()["mx"][&4], 2);
    assert_eq!(encode_corpus(&c).unwrap(), bytes);
}

#[test]
fn kcp1_rejections() {
    let bytes = hand_built_kcp();
    let mut bad = bytes.clone();
    bad[3] = b'2';
    assert!(matches!(decode_corpus(&bad), Err(Error::BadMagic { .. })));
    for cut in [6, 10, 30, bytes.len() - 1] {
        assert!(matches!(decode_corpus(&bytes[..cut]), Err(Error::Truncated(_))), "cut {cut}");
    }
    let mut trailing = bytes.clone();
    trailing.push(0);
    assert!(decode_corpus(&trailing).is_err());
    // manifest count disagreeing with the records
    let mut lying = bytes.clone();
    lying[30] = 3;
    assert!(decode_corpus(&lying).is_err());
    // NaN weight
    let mut nan = bytes.clone();
    let at = nan.len() - 4;
    nan[at..].copy_from_slice(&f32::NAN.to_le_bytes());
    assert!(matches!(decode_corpus(&nan), Err(Error::NonFinite { record: 1, entry: 8 })));
    // even kernel size
    let mut even = bytes;
    even[4] = 4;
    assert!(decode_corpus(&even).is_err());
}

#[test]
fn kae1_layout() {
    let m = init_model(3, [4, 3, 2, 2], 9).unwrap();
    let bytes = encode_model(&m);
    assert_eq!(&bytes[..4], b"KAE1");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 3);
    let hidden: Vec<u32> = (0..4)
        .map(|i| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap()))
        .collect();
    assert_eq!(hidden, [4, 3, 2, 2]);
    assert_eq!(f64::from_le_bytes(bytes[24..32].try_into().unwrap()), 0.01);
    // first encoder weight, then the first layer's zero biases after 8×4 weights
    let w0 = f64::from_le_bytes(bytes[32..40].try_into().unwrap());
    assert_eq!(w0, m.encoder()[0].weights[0]);
    let b0 = 32 + 8 * 32;
    assert_eq!(f64::from_le_bytes(bytes[b0..b0 + 8].try_into().unwrap()), 0.0);
    assert_eq!(bytes.len(), 32 + 8 * m.n_params());
}

#[test]
fn files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let c = decode_corpus(&hand_built_kcp()).unwrap();
    let p = dir.path().join("c.kcp");
    write_corpus(&c, &p).unwrap();
    assert_eq!(read_corpus(&p).unwrap(), c);

    let m = init_model(5, [20, 12, 6, 3], 4).unwrap();
    let p = dir.path().join("m.kae");
    save_model(&m, &p).unwrap();
    assert_eq!(load_model(&p).unwrap(), m);

    let map = LabelMap::new(vec![
        LabelInterval { lo: 0.0, hi: 0.25, class: PatternClass::OffCentre },
        LabelInterval { lo: 0.5, hi: 1.0, class: PatternClass::OnDx },
    ])
    .unwrap();
    let p = dir.path().join("l.json");
    save_labelmap(&map, &p).unwrap();
    assert_eq!(load_labelmap(&p).unwrap(), map);
}

#[test]
fn labelmap_json_rejections() {
    assert!(parse_labelmap(r#"[{"lo":0.0,"hi":0.5,"class":"OnCentre"}]"#).is_ok());
    assert!(parse_labelmap(r#"[{"lo":0.0,"hi":0.5,"class":"Blob"}]"#).is_err());
    assert!(parse_labelmap(r#"[{"lo":0.6,"hi":0.5,"class":"OnCentre"}]"#).is_err());
    assert!(parse_labelmap(
        r#"[{"lo":0.0,"hi":0.5,"class":"OnCentre"},{"lo":0.4,"hi":0.8,"class":"OffCentre"}]"#
    )
    .is_err());
    assert!(parse_labelmap(r#"[{"lo":0.0,"hi":1.5,"class":"OnCentre"}]"#).is_err());
}

fn arb_corpus() -> impl Strategy<Value = Corpus> {
    (prop_oneof![Just(3u32), Just(5), Just(7)], 0usize..20).prop_flat_map(|(k, n)| {
        let n_w = (k * k) as usize;
        prop::collection::vec(
            (
                "[a-z]{0,6}",
                0u32..4,
                0u32..3,
                0u32..1000,
                prop::collection::vec(-1e6f32..1e6f32, n_w),
            ),
            n,
        )
        .prop_map(move |rows| {
            let records = rows
                .into_iter()
                .map(|(model_id, layer_index, stage_index, channel_index, weights)| FilterRecord {
                    weights,
                    model_id,
                    layer_index,
                    stage_index,
                    channel_index,
                    kernel_size: k,
                })
                .collect();
            Corpus::new(k, records).unwrap()
        })
    })
}

proptest! {
    #[test]
    fn kcp1_round_trip(c in arb_corpus()) {
        let bytes = encode_corpus(&c).unwrap();
        prop_assert_eq!(decode_corpus(&bytes).unwrap(), c);
    }

    #[test]
    fn csv_round_trip_is_exact(c in arb_corpus()) {
        prop_assume!(!c.is_empty());
        let mut buf = Vec::new();
        export_csv_writer(&c, &mut buf).unwrap();
        prop_assert_eq!(import_csv_reader(buf.as_slice()).unwrap(), c);
    }

    #[test]
    fn kae1_round_trip(seed in any::<u64>(), k in prop_oneof![Just(3u32), Just(5), Just(7)],
                       h in prop::array::uniform4(1usize..12)) {
        let m = init_model(k, h, seed).unwrap();
        prop_assert_eq!(decode_model(&encode_model(&m)).unwrap(), m);
    }

    #[test]
    fn assignment_csv_round_trip(n in 1usize..30, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let records = (0..n)
            .map(|i| FilterRecord {
                weights: vec![0.0; 9],
                model_id: "m".into(),
                layer_index: 0,
                stage_index: 0,
                channel_index: i as u32,
                kernel_size: 3,
            })
            .collect();
        let corpus = Corpus::new(3, records).unwrap();
        let a: Vec<Assignment> = (0..n)
            .map(|i| {
                let class = PatternClass::ALL[rng.random_range(0..PatternClass::ALL.len())];
                Assignment {
                    source_index: i,
                    matched_code: rng.random_bool(0.5).then(|| rng.random()),
                    class,
                    dissimilarity: rng.random_range(0.0..2.0),
                    reason: [Reason::Matched, Reason::AboveThreshold, Reason::Unlabeled, Reason::Degenerate]
                        [rng.random_range(0..4)],
                }
            })
            .collect();
        let mut buf = Vec::new();
        write_assignments_csv(&corpus, &a, &mut buf).unwrap();
        prop_assert_eq!(read_assignments_csv(buf.as_slice()).unwrap(), a);
    }
}
