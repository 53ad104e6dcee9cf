// Pretrains the one-stream baseline on the synthetic set and reports clean
// test accuracy. `cargo run --release --example train_baseline -- [epochs] [seed]`
use std::time::Instant;

use ragcn::degrade::DegradationSpec;
use ragcn::harness::{evaluate, pretrain_baseline, save_checkpoint, TrainConfig};
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
    let start = Instant::now();
    let out = pretrain_baseline(&cfg, &train)?;
    for l in &out.log {
        println!(
            "epoch {:>2}  lr {:.4}  loss {:.4}  train {:.1}%",
            l.epoch, l.lr, l.loss, l.train_accuracy
        );
    }
    let acc = evaluate(&out.model, &test, &DegradationSpec::none())?;
    println!("test {acc:.1}% after {:.0}s", start.elapsed().as_secs_f64());

    let path = std::env::temp_dir().join(format!("ragcn-1s-seed{seed}.ckpt"));
    save_checkpoint(&path, &out.model, Some(&cfg))?;
    println!("saved {}", path.display());
    Ok(())
}
