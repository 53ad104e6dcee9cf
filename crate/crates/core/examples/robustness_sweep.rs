// Prints the accuracy tables of one protocol for the checkpoints written by
// the `multistream` example.
// `cargo run --release --example robustness_sweep -- [frame|part|block|random|jitter] [seed]`
use ragcn::harness::{load_checkpoint, robustness_sweep, Protocol};
use ragcn::skeleton::{generate_split, Split, SynthSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let protocol: Protocol = args.next().unwrap_or_else(|| "random".into()).parse()?;
    let seed = args.next().unwrap_or_else(|| "0".into());

    let dir = std::env::temp_dir();
    let mut models = Vec::new();
    for name in ["1s", "3s"] {
        let path = dir.join(format!("ragcn-{name}-seed{seed}.ckpt"));
        let (model, _) = load_checkpoint(&path)
            .map_err(|e| format!("{}: {e}; run the multistream example first", path.display()))?;
        models.push((name.to_string(), model));
    }
    let test = generate_split(
        &SynthSpec {
            samples_per_class: 25,
            seed: 1007,
            ..SynthSpec::default()
        },
        Split::Eval,
    )?;
    let refs: Vec<_> = models.iter().map(|(n, m)| (n.clone(), m)).collect();
    for table in robustness_sweep(&refs, &test, protocol, 99)? {
        table.write_csv(std::io::stdout())?;
        println!();
    }
    Ok(())
}
