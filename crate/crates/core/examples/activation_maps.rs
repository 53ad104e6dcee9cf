// Shows which joints each stream of a three-stream checkpoint activates on a
// few test samples, as a joint-by-frame grid.
// `cargo run --release --example activation_maps -- [seed]`
use ragcn::degrade::DegradationSpec;
use ragcn::harness::{evaluate_with_states, load_checkpoint};
use ragcn::skeleton::{generate_split, Split, SynthSpec, NTU_JOINT_NAMES};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = std::env::args().nth(1).unwrap_or_else(|| "0".into());
    let path = std::env::temp_dir().join(format!("ragcn-3s-seed{seed}.ckpt"));
    let (model, _) = load_checkpoint(&path)
        .map_err(|e| format!("{}: {e}; run the multistream example first", path.display()))?;
    let test = generate_split(
        &SynthSpec {
            samples_per_class: 1,
            seed: 1007,
            ..SynthSpec::default()
        },
        Split::Eval,
    )?;
    let (_, _, states) = evaluate_with_states(&model, &test, &DegradationSpec::none())?;

    for (sample, st) in test.samples.iter().zip(&states) {
        println!(
            "{} label {} classes {:?}",
            sample.sample_id, sample.label, st.classes
        );
        let acts: Vec<_> = (0..st.maps.len()).map(|s| st.activated(s)).collect();
        let frames = acts[0].frames;
        for (v, name) in NTU_JOINT_NAMES.iter().enumerate() {
            // One character per 4 frames: the lowest stream that activated it.
            let row: String = (0..frames)
                .step_by(4)
                .map(|t| match acts.iter().position(|a| a.get(t, v)) {
                    Some(s) => char::from(b'1' + s as u8),
                    None => '.',
                })
                .collect();
            println!("  {name:>15} {row}");
        }
        println!(
            "  union {} cells, stream 1 {}",
            st.union_activated().count(),
            acts[0].count()
        );
    }
    Ok(())
}
