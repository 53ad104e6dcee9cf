// Generates the default four-class synthetic set, prints a summary and
// round-trips it through the binary container.
use ragcn::harness::{dataset_sha256, load_dataset, save_dataset};
use ragcn::skeleton::{generate_split, Split, SynthSpec};

const CLASSES: [&str; 4] = [
    "left arm swing",
    "right arm swing",
    "stepping",
    "upper body sway",
];

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = SynthSpec::default();
    let ds = generate_split(&spec, Split::Train)?;
    println!(
        "{} samples, {} classes, {} frames x {} joints",
        ds.samples.len(),
        ds.num_classes,
        spec.frames,
        ds.graph.num_joints()
    );
    for (c, name) in CLASSES.iter().enumerate() {
        let of_class: Vec<_> = ds.samples.iter().filter(|s| s.label == c).collect();
        let frames: Vec<usize> = of_class
            .iter()
            .map(|s| s.sequence.num_real_frames())
            .collect();
        println!(
            "  {c} {name:<16} {:>3} samples, real frames {}..={}",
            of_class.len(),
            frames.iter().min().unwrap(),
            frames.iter().max().unwrap()
        );
    }

    // Most-moving joint of the first sample.
    let x = &ds.samples[0].sequence;
    let spread = |v: usize| {
        let ys: Vec<f32> = (0..x.num_real_frames()).map(|t| x.get(1, t, v)).collect();
        ys.iter().cloned().fold(f32::MIN, f32::max) - ys.iter().cloned().fold(f32::MAX, f32::min)
    };
    let busiest = (0..x.joints())
        .max_by(|&a, &b| spread(a).total_cmp(&spread(b)))
        .unwrap();
    println!(
        "sample {} moves joint {busiest} most (y range {:.3})",
        ds.samples[0].sample_id,
        spread(busiest)
    );

    let path = std::env::temp_dir().join("ragcn-synthetic.bin");
    save_dataset(&path, &ds)?;
    let back = load_dataset(&path)?;
    assert_eq!(back, ds);
    println!(
        "{} -> {}",
        path.display(),
        dataset_sha256(&std::fs::read(&path)?)
    );
    Ok(())
}
