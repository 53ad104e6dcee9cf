mod common;

use proptest::prelude::*;
use ragcn::ntu::{
    apply_blacklist, load_directory, parse_blacklist, parse_skeleton_bytes, parse_skeleton_text,
    raw_to_samples, to_skeleton_text, Benchmark, NtuError, SampleId, MAX_BODIES,
};
use ragcn::skeleton::{ntu25_graph, Split};

const FIXTURES: [&str; 3] = [
    "S001C001P001R001A001.skeleton",
    "S002C003P008R002A050.skeleton",
    "S017C002P020R001A060.skeleton",
];

fn read(name: &str) -> String {
    std::fs::read_to_string(common::fixture(name)).unwrap()
}

#[test]
fn fixtures_round_trip_bit_exactly() {
    for name in FIXTURES {
        let (id, raw) = parse_skeleton_text(&read(name), name).unwrap();
        assert_eq!(format!("{id}.skeleton"), name);
        let again = parse_skeleton_text(&to_skeleton_text(&raw), name)
            .unwrap()
            .1;
        assert_eq!(raw, again);
        for (a, b) in raw.frames.iter().zip(&again.frames) {
            for (x, y) in a.bodies.iter().zip(&b.bodies) {
                for (p, q) in x.joints.iter().flatten().zip(y.joints.iter().flatten()) {
                    assert_eq!(p.to_bits(), q.to_bits());
                }
            }
        }
    }
}

#[test]
fn body_split_keeps_present_frames_bit_exact() {
    let g = ntu25_graph();
    for name in FIXTURES {
        let (id, raw) = parse_skeleton_text(&read(name), name).unwrap();
        let samples = raw_to_samples(&raw, &id, 8, &g).unwrap();
        assert!(samples.len() <= MAX_BODIES);
        for s in &samples {
            assert_eq!(s.label, id.action as usize - 1);
            assert!(s.sequence.validate().is_ok());
        }
        // Which body each sample came from: the first frame where the
        // coordinates line up.
        for s in &samples {
            let x = &s.sequence;
            let t0 = (0..x.num_real_frames())
                .find(|&t| x.is_valid(t, 0))
                .expect("every kept body appears somewhere");
            let body_id = raw.frames[t0]
                .bodies
                .iter()
                .find(|b| (0..25).all(|v| x.get(0, t0, v) == b.joints[v][0] as f32))
                .map(|b| b.body_id.clone())
                .unwrap();
            for (t, frame) in raw.frames.iter().enumerate().take(x.num_real_frames()) {
                match frame.bodies.iter().find(|b| b.body_id == body_id) {
                    Some(b) => {
                        for v in 0..25 {
                            for c in 0..3 {
                                assert_eq!(
                                    x.get(c, t, v).to_bits(),
                                    (b.joints[v][c] as f32).to_bits()
                                );
                            }
                            assert!(x.is_valid(t, v));
                        }
                    }
                    None => assert!((0..25).all(|v| !x.is_valid(t, v))),
                }
            }
        }
    }
}

#[test]
fn missing_body_frame_is_invalid_and_ghost_body_is_dropped() {
    let g = ntu25_graph();
    let name = FIXTURES[1];
    let (id, raw) = parse_skeleton_text(&read(name), name).unwrap();
    let samples = raw_to_samples(&raw, &id, 5, &g).unwrap();
    assert_eq!(samples.len(), 2);
    assert_eq!(samples[1].sequence.valid_count(), 4 * 25);

    // Three bodies, the third only briefly and nearly still.
    let name = FIXTURES[2];
    let (id, raw) = parse_skeleton_text(&read(name), name).unwrap();
    assert_eq!(raw.frames[1].bodies.len(), 3);
    let samples = raw_to_samples(&raw, &id, 4, &g).unwrap();
    assert_eq!(samples.len(), 2);
    assert!(samples.iter().all(|s| s.sequence.valid_count() == 4 * 25));
}

#[test]
fn blacklist_arithmetic_on_id_list() {
    let ids: Vec<SampleId> = read("ntu60_ids.txt")
        .lines()
        .map(|l| l.parse().unwrap())
        .collect();
    let blacklist = parse_blacklist(&read("ntu60_blacklist.txt")).unwrap();
    assert_eq!(ids.len(), 56880);
    assert_eq!(blacklist.len(), 302);
    assert_eq!(apply_blacklist(&ids, &blacklist).len(), 56578);
}

#[test]
fn directory_loading_applies_blacklist_and_split() {
    let dir = tempfile::tempdir().unwrap();
    for name in FIXTURES {
        std::fs::copy(common::fixture(name), dir.path().join(name)).unwrap();
    }
    std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
    let g = ntu25_graph();
    let all_train =
        load_directory(dir.path(), &[], Benchmark::CrossSetup, Split::Train, 8, &g).unwrap();
    // Setup 2 is the only even one; its file holds two bodies.
    assert_eq!(all_train.samples.len(), 2);
    let bl = [SampleId::from_filename(FIXTURES[1]).unwrap()];
    let none = load_directory(dir.path(), &bl, Benchmark::CrossSetup, Split::Train, 8, &g).unwrap();
    assert!(none.samples.is_empty());
    let eval = load_directory(dir.path(), &bl, Benchmark::CrossSetup, Split::Eval, 8, &g).unwrap();
    assert_eq!(eval.samples.len(), 1 + 2);
}

#[test]
fn ten_thousand_mutations_give_typed_errors_only() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let sources: Vec<Vec<u8>> = FIXTURES.iter().map(|n| read(n).into_bytes()).collect();
    let tokens: [&[u8]; 8] = [
        b"nan",
        b"-",
        b"\n",
        b" ",
        b"99999999999999999999",
        b"1e400",
        b"\xff",
        b"3",
    ];
    let (mut ok, mut failed) = (0, 0);
    for i in 0..10_000 {
        let mut bytes = sources[i % sources.len()].clone();
        for _ in 0..rng.random_range(1..4) {
            let at = rng.random_range(0..bytes.len());
            match rng.random_range(0..5) {
                0 => bytes[at] = rng.random(),
                1 => {
                    bytes.remove(at);
                }
                2 => bytes.truncate(at),
                3 => {
                    let tok = tokens[rng.random_range(0..tokens.len())];
                    bytes.splice(at..at, tok.iter().copied());
                }
                _ => {
                    let len = rng.random_range(0..40).min(bytes.len() - at);
                    let chunk = bytes[at..at + len].to_vec();
                    bytes.splice(at..at, chunk);
                }
            }
            if bytes.is_empty() {
                break;
            }
        }
        let name = FIXTURES[i % FIXTURES.len()];
        match std::panic::catch_unwind(|| parse_skeleton_bytes(&bytes, name)) {
            Ok(Ok(_)) => ok += 1,
            Ok(Err(e)) => {
                failed += 1;
                assert!(!e.to_string().is_empty());
            }
            Err(_) => panic!("parser panicked on mutation {i}"),
        }
    }
    assert_eq!(ok + failed, 10_000);
    assert!(failed > 5_000, "mutations mostly rejected, got {failed}");
}

#[test]
fn bad_names_and_numbers() {
    let text = read(FIXTURES[0]);
    assert!(matches!(
        parse_skeleton_text(&text, "S001C001P001R001.skeleton"),
        Err(NtuError::BadFilename(_))
    ));
    let broken = text.replacen("2.999649", "inf", 1);
    assert!(matches!(
        parse_skeleton_text(&broken, FIXTURES[0]),
        Err(NtuError::InvalidNumber { .. })
    ));
    assert!(matches!(
        parse_skeleton_bytes(b"1\n\xff\n", FIXTURES[0]),
        Err(NtuError::Encoding)
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn arbitrary_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..600)) {
        let _ = parse_skeleton_bytes(&bytes, FIXTURES[0]);
    }

    #[test]
    fn arbitrary_text_never_panics(text in "[0-9 .\\-\\n]{0,400}") {
        let _ = parse_skeleton_text(&text, FIXTURES[0]);
    }

    #[test]
    fn sample_ids_round_trip(s in 1u32..1000, c in 1u32..1000, p in 1u32..1000, r in 1u32..1000, a in 1u32..1000) {
        let id = SampleId { setup: s, camera: c, performer: p, replication: r, action: a };
        prop_assert_eq!(id.to_string().parse::<SampleId>().unwrap(), id);
    }
}
