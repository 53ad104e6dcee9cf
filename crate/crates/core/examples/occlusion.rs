// Applies every test-time degradation protocol to one synthetic sample and
// reports how many joint cells stay visible.
use ragcn::degrade::{apply, Degradation, DegradationSpec, FRAME_LENGTHS, PART_NAMES};
use ragcn::skeleton::{generate_split, Split, SynthSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ds = generate_split(
        &SynthSpec {
            samples_per_class: 1,
            ..SynthSpec::default()
        },
        Split::Eval,
    )?;
    let x = &ds.samples[0].sequence;
    println!(
        "{}: {} valid cells",
        ds.samples[0].sample_id,
        x.valid_count()
    );

    let mut protocols: Vec<(String, Degradation)> = Vec::new();
    for length in FRAME_LENGTHS {
        protocols.push((format!("frames {length}"), Degradation::Frame { length }));
    }
    for (i, name) in PART_NAMES.iter().enumerate() {
        protocols.push((format!("part {name}"), Degradation::Part { part: i + 1 }));
    }
    for range in 1..=5 {
        protocols.push((format!("block {range}"), Degradation::Block { range }));
    }
    for p in [0.2, 0.4, 0.6] {
        protocols.push((format!("random {p}"), Degradation::Random { p }));
    }
    for (name, kind) in protocols {
        let y = apply(&DegradationSpec::new(kind, 7), x)?;
        println!("  {name:<20} {:>5} valid", y.valid_count());
    }

    // Jitter keeps every cell but moves a few of them.
    let y = apply(
        &DegradationSpec::new(
            Degradation::Jitter {
                p: 0.1,
                sigma: 0.05,
            },
            7,
        ),
        x,
    )?;
    let moved = (0..x.frames())
        .flat_map(|t| (0..x.joints()).map(move |v| (t, v)))
        .filter(|&(t, v)| x.joint(t, v) != y.joint(t, v))
        .count();
    println!("  jitter p=0.1 s=0.05  {moved:>5} moved");
    Ok(())
}
