//! Acceptance run: one PASS/FAIL line per criterion. The training criteria
//! share three seeds of a pretrained one-stream model and its three-stream
//! finetune on the default synthetic set.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use ragcn::autodiff::{Mode, Session, Tensor};
use ragcn::degrade::{apply, Degradation, DegradationSpec, FRAME_LENGTHS};
use ragcn::harness::{
    dump_activations, evaluate, finetune_multistream, pretrain_baseline, run_gradient_suite,
    TrainConfig,
};
use ragcn::model::{stream_prefix, total_loss, ModelConfig, RagcnModel};
use ragcn::ntu::{
    apply_blacklist, parse_blacklist, parse_skeleton_bytes, parse_skeleton_text, to_skeleton_text,
    SampleId,
};
use ragcn::skeleton::{
    build_graph, generate_split, ntu25_graph, Dataset, SequenceTensor, Split, SynthSpec,
};
use ragcn::stgcn::{normalize_adjacency, partition_adjacency, BackboneConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 3] = [0, 1, 2];
const OCCLUSION_SEED: u64 = 99;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let cases = run_gradient_suite(0).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let failed: Vec<String> = cases
        .iter()
        .filter(|c| !c.passed)
        .map(|c| c.to_string())
        .collect();
    ensure(failed.is_empty(), failed.join("; "))?;
    let backbone = cases
        .iter()
        .find(|c| c.name.starts_with("backbone 9x16x5"))
        .ok_or("no backbone case")?;
    let layer = cases.iter().any(|c| c.name.starts_with("stgcn_layer"));
    ensure(layer, "no composite layer case")?;
    ensure(
        elapsed < Duration::from_secs(120),
        format!("took {elapsed:?}"),
    )?;
    Ok(format!(
        "{} cases, backbone {} err {:.2e}, {:.1}s",
        cases.len(),
        backbone.precision,
        backbone.max_rel_error,
        elapsed.as_secs_f64()
    ))
}

fn neighbor_loop_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let n = rng.random_range(2..=6);
        let parents: Vec<usize> = (0..n - 1).map(|_| rng.random_range(0..64)).collect();
        let g = common::tree(&parents, rng.random_range(0..n));
        let d = rng.random_range(1..=3);
        let (c_in, c_out, frames) = (
            rng.random_range(1..=4),
            rng.random_range(1..=4),
            rng.random_range(1..=4),
        );
        let x = common::random_cube(&mut rng, c_in, frames, n);
        let w = common::random_cube(&mut rng, c_out, d + 1, c_in);
        let m = common::random_cube(&mut rng, d + 1, n, n);
        let err = common::max_rel_err(
            &common::neighbor_loop_conv(&g, d, 1e-4, &x, &w, &m),
            &common::library_conv(&g, d, 1e-4, &x, &w, &m),
        );
        worst = worst.max(err);
    }
    ensure(worst < 1e-6, format!("max rel err {worst:.2e}"))?;
    Ok(format!("20 instances, max rel err {worst:.2e}"))
}

fn adjacency_normalisation() -> Outcome {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let edge = partition_adjacency(&build_graph(2, &[(0, 1)], 0).unwrap(), 1);
    ensure(
        normalize_adjacency(&edge[0], 2, 0.0) == [1.0, 0.0, 0.0, 1.0],
        "edge A_0",
    )?;
    ensure(
        normalize_adjacency(&edge[1], 2, 0.0) == [0.0, 1.0, 1.0, 0.0],
        "edge A_1",
    )?;
    let chain = partition_adjacency(&build_graph(3, &[(0, 1), (1, 2)], 1).unwrap(), 2);
    ensure(
        normalize_adjacency(&chain[1], 3, 0.0) == [0.0, h, 0.0, h, 0.0, h, 0.0, h, 0.0],
        "chain A_1",
    )?;
    ensure(
        normalize_adjacency(&chain[2], 3, 0.0) == [0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0],
        "chain A_2",
    )?;
    let empty = normalize_adjacency(&chain[2], 3, 1e-4);
    ensure(empty.iter().all(|x| x.is_finite()), "empty row not finite")?;
    Ok("edge and chain exact, empty rows finite".into())
}

fn mask_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for i in 0..1000 {
        let (frames, joints) = (rng.random_range(1..=16), rng.random_range(1..=25));
        let lo = if i % 2 == 0 { 1e-3 } else { -1.0 };
        let scores: Vec<_> = (0..3)
            .map(|_| common::random_scores(&mut rng, frames, joints, lo, 1.0))
            .collect();
        let delta = rng.random_range(0.01..0.99);
        let delta_hi = rng.random_range(delta..0.999);
        let lambda = 10f64.powf(rng.random_range(-3.0..3.0));
        common::check_mask_algebra(&scores, delta, frames * 4, lambda, delta_hi)
            .map_err(|e| format!("map {i}: {e}"))?;
    }
    Ok("1000 maps: binary, shrinking, disjoint, delta-monotone, scale-invariant".into())
}

fn constant_sequence(frames: usize, joints: usize) -> SequenceTensor {
    common::dense(frames, joints, frames, |c, _, _| 1.0 + c as f32)
}

fn degradation_statistics() -> Outcome {
    let x = constant_sequence(4000, 25);
    let cells = x.valid_count() as f64;
    let random = DegradationSpec::new(Degradation::Random { p: 0.4 }, 7);
    let y = apply(&random, &x).map_err(|e| e.to_string())?;
    let occluded = 1.0 - y.valid_count() as f64 / cells;
    ensure(
        (occluded - 0.4).abs() <= 0.02,
        format!("random fraction {occluded:.4}"),
    )?;

    let jitter = DegradationSpec::new(Degradation::Jitter { p: 0.1, sigma: 0.1 }, 7);
    let y = apply(&jitter, &x).map_err(|e| e.to_string())?;
    let mut moved = 0usize;
    let mut noise = Vec::new();
    for t in 0..x.frames() {
        for v in 0..x.joints() {
            let d: Vec<f64> = (0..3)
                .map(|c| y.get(c, t, v) as f64 - x.get(c, t, v) as f64)
                .collect();
            if d.iter().any(|&e| e != 0.0) {
                moved += 1;
                noise.extend(d);
            }
        }
    }
    let frac = moved as f64 / cells;
    let var = noise.iter().map(|e| e * e).sum::<f64>() / noise.len() as f64;
    ensure(
        (frac - 0.1).abs() <= 0.01,
        format!("jitter fraction {frac:.4}"),
    )?;
    ensure(
        (var - 0.01).abs() <= 0.001,
        format!("jitter variance {var:.5}"),
    )?;

    let small = constant_sequence(64, 25);
    let kinds = [
        Degradation::Frame { length: 30 },
        Degradation::Part { part: 3 },
        Degradation::Block { range: 2 },
        Degradation::Random { p: 0.3 },
        Degradation::Jitter {
            p: 0.2,
            sigma: 0.05,
        },
    ];
    for kind in kinds {
        let spec = DegradationSpec::new(kind, 31);
        let (a, b) = (apply(&spec, &small).unwrap(), apply(&spec, &small).unwrap());
        let bits = |s: &SequenceTensor| s.data().iter().map(|f| f.to_bits()).collect::<Vec<_>>();
        ensure(
            bits(&a) == bits(&b) && a.valid() == b.valid(),
            format!("{kind:?} not deterministic"),
        )?;
    }
    let spec = SynthSpec {
        samples_per_class: 3,
        ..SynthSpec::default()
    };
    ensure(
        generate_split(&spec, Split::Train).unwrap()
            == generate_split(&spec, Split::Train).unwrap(),
        "generator",
    )?;
    Ok(format!(
        "random {occluded:.4}, jitter {frac:.4} var {var:.5}, all deterministic"
    ))
}

fn parser() -> Outcome {
    let names = [
        "S001C001P001R001A001.skeleton",
        "S002C003P008R002A050.skeleton",
        "S017C002P020R001A060.skeleton",
    ];
    let texts: Vec<String> = names
        .iter()
        .map(|n| std::fs::read_to_string(common::fixture(n)).unwrap())
        .collect();
    for (name, text) in names.iter().zip(&texts) {
        let (_, raw) = parse_skeleton_text(text, name).map_err(|e| e.to_string())?;
        let again = parse_skeleton_text(&to_skeleton_text(&raw), name)
            .map_err(|e| e.to_string())?
            .1;
        ensure(raw == again, format!("{name} round trip"))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut rejected = 0;
    for i in 0..10_000 {
        let mut bytes = texts[i % 3].clone().into_bytes();
        for _ in 0..rng.random_range(1..4) {
            if bytes.is_empty() {
                break;
            }
            let at = rng.random_range(0..bytes.len());
            match rng.random_range(0..3) {
                0 => bytes[at] = rng.random(),
                1 => {
                    bytes.remove(at);
                }
                _ => bytes.truncate(at),
            }
        }
        match catch_unwind(|| parse_skeleton_bytes(&bytes, names[i % 3])) {
            Ok(Err(_)) => rejected += 1,
            Ok(Ok(_)) => {}
            Err(_) => return Err(format!("panic on mutation {i}")),
        }
    }
    let ids: Vec<SampleId> = std::fs::read_to_string(common::fixture("ntu60_ids.txt"))
        .unwrap()
        .lines()
        .map(|l| l.parse().unwrap())
        .collect();
    let bl =
        parse_blacklist(&std::fs::read_to_string(common::fixture("ntu60_blacklist.txt")).unwrap())
            .map_err(|e| e.to_string())?;
    let kept = apply_blacklist(&ids, &bl).len();
    ensure(
        ids.len() == 56880 && bl.len() == 302 && kept == 56578,
        format!("{} - {} = {kept}", ids.len(), bl.len()),
    )?;
    Ok(format!(
        "round trips exact, 10000 mutations ({rejected} typed errors, no panic), {} - {} = {kept}",
        ids.len(),
        bl.len()
    ))
}

fn loss_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (n, c) = (8, 5);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
    let mut worst = 0.0f64;
    for streams in 1..=3 {
        let rows: Vec<Vec<f64>> = (0..=streams)
            .map(|_| (0..n * c).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect();
        let mut sess = Session::<f64>::new(Mode::Train, 0);
        let vars: Vec<_> = rows
            .iter()
            .map(|r| {
                sess.tape
                    .leaf(Tensor::new(&[n, c], r.clone()).unwrap(), true)
            })
            .collect();
        let loss =
            total_loss(&mut sess, vars[0], &vars[1..], &labels).map_err(|e| e.to_string())?;
        let got = sess.tape.value(loss).data()[0];
        let want: f64 = rows
            .iter()
            .map(|r| {
                labels
                    .iter()
                    .enumerate()
                    .map(|(i, &l)| common::cross_entropy(&r[i * c..(i + 1) * c], l))
                    .sum::<f64>()
                    / n as f64
            })
            .sum();
        worst = worst.max((got - want).abs());
    }
    ensure(worst < 1e-12, format!("max deviation {worst:.2e}"))?;
    for classes in [4usize, 60] {
        let mut sess = Session::<f64>::new(Mode::Train, 0);
        let a = sess.tape.leaf(Tensor::zeros(&[1, classes]), true);
        let b = sess.tape.leaf(Tensor::zeros(&[1, classes]), true);
        let loss = total_loss(&mut sess, a, &[b], &[0]).map_err(|e| e.to_string())?;
        let v = sess.tape.value(loss).data()[0];
        ensure(
            v == 2.0 * (classes as f64).ln(),
            format!("uniform C={classes}: {v}"),
        )?;
    }
    Ok(format!("max deviation {worst:.1e}, uniform 2 ln C exact"))
}

fn parameter_count() -> Outcome {
    let cfg = ModelConfig::new(BackboneConfig::default(), 1, 60);
    let model = RagcnModel::<f32>::new(cfg, ntu25_graph(), 0).map_err(|e| e.to_string())?;
    let count = model
        .store
        .learnable_count_with_prefix(&format!("{}.", stream_prefix(0)));
    let rel = (count as f64 - 2.03e6).abs() / 2.03e6;
    ensure(rel <= 0.05, format!("{count} is {:.1}% off", rel * 100.0))?;
    Ok(format!(
        "{count} learnable ({:+.2}% of 2.03M)",
        (count as f64 / 2.03e6 - 1.0) * 100.0
    ))
}

struct SeedRun {
    seed: u64,
    pretrain_time: Duration,
    first_losses: Vec<f64>,
    base_clean: f64,
    base_random: Vec<f64>,
    base_frames: Vec<f64>,
    three_random: Vec<f64>,
    three_frames: Vec<f64>,
    union_larger: usize,
    samples: usize,
}

const RANDOM_P: [f64; 7] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6];

fn spec_for(kind: Degradation) -> DegradationSpec {
    match kind {
        Degradation::Random { p: 0.0 } => DegradationSpec::none(),
        k => DegradationSpec::new(k, OCCLUSION_SEED),
    }
}

fn accuracies(model: &RagcnModel<f32>, test: &Dataset) -> (Vec<f64>, Vec<f64>) {
    let random = RANDOM_P
        .iter()
        .map(|&p| evaluate(model, test, &spec_for(Degradation::Random { p })).unwrap())
        .collect();
    let frames = std::iter::once(DegradationSpec::none())
        .chain(
            FRAME_LENGTHS
                .iter()
                .map(|&length| spec_for(Degradation::Frame { length })),
        )
        .map(|s| evaluate(model, test, &s).unwrap())
        .collect();
    (random, frames)
}

fn train_seed(seed: u64, train: &Dataset, test: &Dataset) -> SeedRun {
    let cfg = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let base = pretrain_baseline(&cfg, train).unwrap();
    let pretrain_time = start.elapsed();
    let three_cfg = TrainConfig { streams: 3, ..cfg };
    let three = finetune_multistream(&three_cfg, &base.model, train).unwrap();
    let (base_random, base_frames) = accuracies(&base.model, test);
    let (three_random, three_frames) = accuracies(&three.model, test);
    let dump = dump_activations(&three.model, test, &DegradationSpec::none()).unwrap();
    SeedRun {
        seed,
        pretrain_time,
        first_losses: base.log.iter().take(5).map(|l| l.loss).collect(),
        base_clean: base_random[0],
        base_random,
        base_frames,
        three_random,
        three_frames,
        union_larger: dump
            .iter()
            .filter(|s| s.union_cells > s.first_stream_cells)
            .count(),
        samples: dump.len(),
    }
}

fn mean_curve(rows: impl Iterator<Item = Vec<f64>>) -> Vec<f64> {
    let rows: Vec<Vec<f64>> = rows.collect();
    (0..rows[0].len())
        .map(|i| rows.iter().map(|r| r[i]).sum::<f64>() / rows.len() as f64)
        .collect()
}

fn desk_training(runs: &[SeedRun]) -> Outcome {
    let losses = mean_curve(runs.iter().map(|r| r.first_losses.clone()));
    let clean: Vec<String> = runs
        .iter()
        .map(|r| format!("{:.1}", r.base_clean))
        .collect();
    let slowest = runs.iter().map(|r| r.pretrain_time).max().unwrap();
    ensure(
        runs.iter().all(|r| r.base_clean >= 95.0),
        format!("clean accuracy {clean:?}"),
    )?;
    ensure(
        losses.windows(2).all(|w| w[1] < w[0]),
        format!("mean losses {losses:.3?}"),
    )?;
    ensure(
        slowest < Duration::from_secs(600),
        format!("pretraining took {slowest:?}"),
    )?;
    Ok(format!(
        "clean {clean:?}%, mean losses {losses:.3?}, slowest {:.0}s",
        slowest.as_secs_f64()
    ))
}

fn robustness_trend(runs: &[SeedRun]) -> Outcome {
    let at = RANDOM_P.iter().position(|&p| p == 0.4).unwrap();
    let gaps: Vec<f64> = runs
        .iter()
        .map(|r| r.three_random[at] - r.base_random[at])
        .collect();
    let gap = gaps.iter().sum::<f64>() / gaps.len() as f64;
    let larger: usize = runs.iter().map(|r| r.union_larger).sum();
    let total: usize = runs.iter().map(|r| r.samples).sum();
    let frac = larger as f64 / total as f64;
    let per_seed: Vec<String> = runs
        .iter()
        .map(|r| {
            format!(
                "seed {} {:.1}/{:.1} union {:.2}",
                r.seed,
                r.base_random[at],
                r.three_random[at],
                r.union_larger as f64 / r.samples as f64
            )
        })
        .collect();
    let detail = format!(
        "gap {gap:.1} points, union larger on {:.1}% [{}]",
        frac * 100.0,
        per_seed.join("; ")
    );
    ensure(gap >= 5.0 && frac >= 0.8, detail.clone())?;
    Ok(detail)
}

/// At most one rise, of at most one point.
fn non_increasing(curve: &[f64]) -> bool {
    let rises: Vec<f64> = curve
        .windows(2)
        .map(|w| w[1] - w[0])
        .filter(|&d| d > 0.0)
        .collect();
    rises.is_empty() || (rises.len() == 1 && rises[0] <= 1.0)
}

fn monotone_trend(runs: &[SeedRun]) -> Outcome {
    let curves = [
        (
            "1s frames",
            mean_curve(runs.iter().map(|r| r.base_frames.clone())),
        ),
        (
            "1s random",
            mean_curve(runs.iter().map(|r| r.base_random.clone())),
        ),
        (
            "3s frames",
            mean_curve(runs.iter().map(|r| r.three_frames.clone())),
        ),
        (
            "3s random",
            mean_curve(runs.iter().map(|r| r.three_random.clone())),
        ),
    ];
    let text: Vec<String> = curves.iter().map(|(n, c)| format!("{n} {c:.1?}")).collect();
    ensure(
        curves.iter().all(|(_, c)| non_increasing(c)),
        text.join("; "),
    )?;
    Ok(text.join("; "))
}

fn run(label: &str, f: impl FnOnce() -> Outcome) -> bool {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        Err(e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    match &outcome {
        Ok(detail) => println!("PASS {label}: {detail}"),
        Err(detail) => println!("FAIL {label}: {detail}"),
    }
    outcome.is_ok()
}

fn main() {
    let mut ok = true;
    ok &= run("1 gradient suite", gradient_suite);
    ok &= run("2 neighbor-loop oracle", neighbor_loop_oracle);
    ok &= run("3 adjacency normalisation", adjacency_normalisation);
    ok &= run("4 mask algebra", mask_algebra);
    ok &= run("5 degradation statistics", degradation_statistics);
    ok &= run("6 parser", parser);

    let train = generate_split(&SynthSpec::default(), Split::Train).unwrap();
    let test_spec = SynthSpec {
        samples_per_class: 25,
        seed: 1007,
        ..SynthSpec::default()
    };
    let test = generate_split(&test_spec, Split::Eval).unwrap();
    let runs: Vec<SeedRun> = SEEDS
        .iter()
        .map(|&s| train_seed(s, &train, &test))
        .collect();
    ok &= run("7 desk-scale training", || desk_training(&runs));
    ok &= run("8 robustness trend", || robustness_trend(&runs));
    ok &= run("9 loss identity", loss_identity);
    ok &= run("10 parameter count", parameter_count);
    ok &= run("monotone trend", || monotone_trend(&runs));
    if !ok {
        std::process::exit(1);
    }
}
