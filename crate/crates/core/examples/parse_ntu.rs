// Parses a `.skeleton` file (the bundled two-body fixture by default) and
// splits it into per-body sequences.
use ragcn::ntu::{parse_skeleton_text, raw_to_samples, Benchmark};
use ragcn::skeleton::ntu25_graph;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args().nth(1).unwrap_or_else(|| {
        concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/tests/fixtures/S002C003P008R002A050.skeleton"
        )
        .into()
    });
    let name = std::path::Path::new(&path)
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or_default()
        .to_string();
    let (id, raw) = parse_skeleton_text(&std::fs::read_to_string(&path)?, &name)?;
    println!("{id}: action {}, {} frames", id.action, raw.frames.len());
    for b in [Benchmark::CrossSubject, Benchmark::CrossView] {
        println!("  {b:?}: {:?}", b.split_of(&id));
    }
    for (t, f) in raw.frames.iter().enumerate() {
        println!("  frame {t}: {} bodies", f.bodies.len());
    }
    for s in raw_to_samples(&raw, &id, 300, &ntu25_graph())? {
        let x = &s.sequence;
        println!(
            "  sample {}: {} real frames, {} valid cells, label {}",
            s.sample_id,
            x.num_real_frames(),
            x.valid_count(),
            s.label
        );
    }
    Ok(())
}
