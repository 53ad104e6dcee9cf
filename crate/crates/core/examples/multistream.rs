// Pretrains a baseline, copies it into three streams, finetunes them jointly
// and compares both models on randomly occluded test skeletons.
// `cargo run --release --example multistream -- [epochs] [seed]`
use ragcn::degrade::{Degradation, DegradationSpec};
use ragcn::harness::{
    evaluate, finetune_multistream, pretrain_baseline, save_checkpoint, TrainConfig,
};
use ragcn::skeleton::{generate_split, Split, SynthSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(30);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);

    let train = generate_split(&SynthSpec::default(), Split::Train)?;
    let test = generate_split(
        &SynthSpec {
            samples_per_class: 25,
            seed: 1007,
            ..SynthSpec::default()
        },
        Split::Eval,
    )?;
    let cfg = TrainConfig {
        epochs,
        lr_step: (epochs / 3).max(1),
        seed,
        ..TrainConfig::default()
    };
    let base = pretrain_baseline(&cfg, &train)?;
    let three_cfg = TrainConfig {
        streams: 3,
        ..cfg.clone()
    };
    let three = finetune_multistream(&three_cfg, &base.model, &train)?;

    println!(
        "{:<8} {:>7} {:>7} {:>7} {:>7}",
        "p", "0", "0.2", "0.4", "0.6"
    );
    for (name, model) in [("1s", &base.model), ("3s", &three.model)] {
        let accs: Vec<String> = [0.0, 0.2, 0.4, 0.6]
            .iter()
            .map(|&p| {
                let spec = if p == 0.0 {
                    DegradationSpec::none()
                } else {
                    DegradationSpec::new(Degradation::Random { p }, 99)
                };
                evaluate(model, &test, &spec).map(|a| format!("{a:>7.1}"))
            })
            .collect::<Result<_, _>>()?;
        println!("{name:<8} {}", accs.join(" "));
    }

    let dir = std::env::temp_dir();
    save_checkpoint(
        &dir.join(format!("ragcn-1s-seed{seed}.ckpt")),
        &base.model,
        Some(&cfg),
    )?;
    save_checkpoint(
        &dir.join(format!("ragcn-3s-seed{seed}.ckpt")),
        &three.model,
        Some(&three_cfg),
    )?;
    println!("checkpoints in {}", dir.display());
    Ok(())
}
