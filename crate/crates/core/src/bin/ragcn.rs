use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ragcn::degrade::{apply_to_dataset, DegradationSpec};
use ragcn::harness::{
    dump_activations, evaluate, finetune_multistream, load_checkpoint, load_dataset,
    pretrain_baseline, robustness_sweep, run_gradient_suite, save_checkpoint, save_dataset,
    write_epoch_csv, HarnessError, Protocol, Result, RunManifest, TrainConfig,
};
use ragcn::model::{ActivationKind, EvalClass, ModelError};
use ragcn::ntu::{load_directory, parse_blacklist, Benchmark};
use ragcn::skeleton::{generate_split, ntu25_graph, Split, SynthSpec};

#[derive(Parser)]
#[command(
    name = "ragcn",
    version,
    about = "Multi-stream skeleton action recognition"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic dataset.
    GenData {
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 50)]
        per_class: usize,
        #[arg(long, default_value_t = 64)]
        frames: usize,
        #[arg(long, default_value_t = 0.01)]
        noise: f64,
        /// Shortest sample as a fraction of `--frames`; the rest is padding.
        #[arg(long, default_value_t = 0.8)]
        min_real_fraction: f64,
        #[arg(long)]
        seed: u64,
        /// Tag the set as the evaluation split.
        #[arg(long)]
        eval: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert a directory of `.skeleton` files.
    ParseNtu {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        blacklist: Option<PathBuf>,
        #[arg(long)]
        split: String,
        /// Keep the evaluation side of the split instead of the training side.
        #[arg(long)]
        eval: bool,
        #[arg(long, default_value_t = 300)]
        max_frames: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply one degradation to every sample of a dataset.
    Degrade {
        /// JSON object or path to a JSON file.
        #[arg(long)]
        spec: String,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference checks of every primitive and composite.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a one-stream baseline on clean data.
    Pretrain {
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Build a multi-stream model from a baseline and train it jointly.
    Finetune {
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Top-1 accuracy, optionally under a degradation.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        degrade: Option<String>,
        #[arg(long)]
        dump_activations: Option<PathBuf>,
    },
    /// Accuracy tables across one degradation protocol.
    Sweep {
        /// Checkpoints, as `name=path` or `path`.
        #[arg(long = "ckpt", required = true)]
        ckpts: Vec<String>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        protocol: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output prefix; one CSV per table plus a manifest.
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-sample activated cells of every stream as JSON.
    DumpActivations {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        degrade: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// JSON file with TrainConfig fields; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    pretrained: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch CSV log; defaults to `<out>.csv`.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lr_step: Option<usize>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    streams: Option<usize>,
    #[arg(long)]
    width_divisor: Option<usize>,
    #[arg(long)]
    max_distance: Option<usize>,
    #[arg(long)]
    kernel: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// threshold | softmax-legacy
    #[arg(long)]
    activation: Option<String>,
    /// first-stream | previous-stream
    #[arg(long)]
    eval_class: Option<String>,
    #[arg(long)]
    no_masking: bool,
    #[arg(long)]
    no_input_bn: bool,
    /// Continue the decayed schedule when finetuning instead of restarting.
    #[arg(long)]
    continue_schedule: bool,
    /// Full-size network and the original 60-epoch schedule as the base.
    #[arg(long)]
    full_scale: bool,
}

fn config_err(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Config(e.to_string())
}

fn parse_enum<T: serde::de::DeserializeOwned>(s: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(config_err)
}

impl TrainArgs {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut c = match &self.config {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(config_err)?;
                serde_json::from_str(&text).map_err(config_err)?
            }
            None if self.full_scale => TrainConfig::full_scale(),
            None => TrainConfig::default(),
        };
        c.seed = self.seed;
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f.clone() { c.$f = v; })* };
        }
        set!(
            epochs,
            lr,
            lr_step,
            momentum,
            weight_decay,
            batch_size,
            streams
        );
        set!(width_divisor, max_distance, kernel, delta, dropout, alpha);
        if let Some(d) = &self.data {
            c.dataset = Some(d.clone());
        }
        if let Some(p) = &self.pretrained {
            c.pretrained = Some(p.clone());
        }
        if let Some(a) = &self.activation {
            c.activation = parse_enum::<ActivationKind>(a)?;
        }
        if let Some(e) = &self.eval_class {
            c.eval_class = parse_enum::<EvalClass>(e)?;
        }
        c.masking &= !self.no_masking;
        c.input_bn &= !self.no_input_bn;
        c.restart_schedule &= !self.continue_schedule;
        c.validate()?;
        Ok(c)
    }

    fn log_path(&self) -> PathBuf {
        self.log
            .clone()
            .unwrap_or_else(|| self.out.with_extension("csv"))
    }
}

fn parse_spec(s: Option<&str>) -> Result<DegradationSpec> {
    let Some(s) = s else {
        return Ok(DegradationSpec::none());
    };
    let text = if s.trim_start().starts_with('{') {
        s.to_string()
    } else {
        fs::read_to_string(s).map_err(config_err)?
    };
    let spec: DegradationSpec = serde_json::from_str(&text).map_err(config_err)?;
    spec.validate()?;
    Ok(spec)
}

fn manifest(
    command: &str,
    config: &impl serde::Serialize,
    seeds: Vec<u64>,
    data: &[&Path],
) -> Result<RunManifest> {
    let mut m = RunManifest::new(
        command,
        serde_json::to_value(config).map_err(config_err)?,
        seeds,
    );
    for d in data {
        m.add_dataset(d)?;
    }
    Ok(m)
}

fn train(args: &TrainArgs, finetune: bool) -> Result<()> {
    let cfg = args.resolve()?;
    let data = cfg
        .dataset
        .clone()
        .ok_or_else(|| config_err("--data or config.dataset is required"))?;
    let ds = load_dataset(&data)?;
    let outcome = if finetune {
        let path = cfg
            .pretrained
            .clone()
            .ok_or_else(|| config_err("--pretrained or config.pretrained is required"))?;
        let (baseline, _) = load_checkpoint(&path)?;
        finetune_multistream(&cfg, &baseline, &ds)?
    } else {
        pretrain_baseline(&cfg, &ds)?
    };
    save_checkpoint(&args.out, &outcome.model, Some(&cfg))?;
    write_epoch_csv(fs::File::create(args.log_path())?, &outcome.log)?;
    let verb = if finetune { "finetune" } else { "pretrain" };
    manifest(verb, &cfg, vec![cfg.seed], &[&data])?
        .save(&args.out.with_extension("manifest.json"))?;
    if let Some(last) = outcome.log.last() {
        println!(
            "{verb}: {} epochs, final loss {:.4}, train accuracy {:.1}%",
            outcome.log.len(),
            last.loss,
            last.train_accuracy
        );
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::GenData {
            classes,
            per_class,
            frames,
            noise,
            min_real_fraction,
            seed,
            eval,
            out,
        } => {
            let spec = SynthSpec {
                num_classes: classes,
                samples_per_class: per_class,
                frames,
                noise_std: noise,
                seed,
                min_real_fraction,
            };
            let split = if eval { Split::Eval } else { Split::Train };
            let ds = generate_split(&spec, split).map_err(config_err)?;
            save_dataset(&out, &ds)?;
            println!("{} samples -> {}", ds.samples.len(), out.display());
        }
        Cmd::ParseNtu {
            input,
            blacklist,
            split,
            eval,
            max_frames,
            out,
        } => {
            let bench: Benchmark = split.parse().map_err(config_err)?;
            let bl = match blacklist {
                Some(p) => parse_blacklist(&fs::read_to_string(&p)?)?,
                None => Vec::new(),
            };
            let part = if eval { Split::Eval } else { Split::Train };
            let ds = load_directory(&input, &bl, bench, part, max_frames, &ntu25_graph())?;
            save_dataset(&out, &ds)?;
            println!("{} samples -> {}", ds.samples.len(), out.display());
        }
        Cmd::Degrade { spec, input, out } => {
            let spec = parse_spec(Some(&spec))?;
            let ds = load_dataset(&input)?;
            save_dataset(&out, &apply_to_dataset(&spec, &ds)?)?;
        }
        Cmd::Gradcheck { seed } => {
            let cases = run_gradient_suite(seed).map_err(ModelError::from)?;
            for c in &cases {
                println!("{c}");
            }
            let failed = cases.iter().filter(|c| !c.passed).count();
            println!("{} cases, {failed} failed", cases.len());
            if failed > 0 {
                return Err(HarnessError::NumericalFailure(format!(
                    "{failed} gradient checks failed"
                )));
            }
        }
        Cmd::Pretrain { train: t } => train(&t, false)?,
        Cmd::Finetune { train: t } => train(&t, true)?,
        Cmd::Eval {
            ckpt,
            data,
            degrade,
            dump_activations: dump,
        } => {
            let (model, _) = load_checkpoint(&ckpt)?;
            let ds = load_dataset(&data)?;
            let spec = parse_spec(degrade.as_deref())?;
            println!("top-1 {:.2}%", evaluate(&model, &ds, &spec)?);
            if let Some(path) = dump {
                write_dump(&path, &dump_activations(&model, &ds, &spec)?)?;
            }
        }
        Cmd::DumpActivations {
            ckpt,
            data,
            degrade,
            out,
        } => {
            let (model, _) = load_checkpoint(&ckpt)?;
            let ds = load_dataset(&data)?;
            let spec = parse_spec(degrade.as_deref())?;
            write_dump(&out, &dump_activations(&model, &ds, &spec)?)?;
        }
        Cmd::Sweep {
            ckpts,
            data,
            protocol,
            seed,
            out,
        } => {
            let protocol: Protocol = protocol.parse()?;
            let mut models = Vec::new();
            for c in &ckpts {
                let (name, path) = match c.split_once('=') {
                    Some((n, p)) => (n.to_string(), PathBuf::from(p)),
                    None => {
                        let (m, _) = load_checkpoint(Path::new(c))?;
                        (format!("{}s", m.config.streams), PathBuf::from(c))
                    }
                };
                models.push((name, load_checkpoint(&path)?.0));
            }
            let ds = load_dataset(&data)?;
            let refs: Vec<_> = models.iter().map(|(n, m)| (n.clone(), m)).collect();
            let tables = robustness_sweep(&refs, &ds, protocol, seed)?;
            for (i, t) in tables.iter().enumerate() {
                let path = if tables.len() == 1 {
                    out.with_extension("csv")
                } else {
                    out.with_extension(format!("{i}.csv"))
                };
                t.write_csv(fs::File::create(&path)?)?;
                t.write_csv(std::io::stdout())?;
            }
            let cfg = serde_json::json!({ "protocol": protocol, "checkpoints": ckpts });
            manifest("sweep", &cfg, vec![seed], &[&data])?
                .save(&out.with_extension("manifest.json"))?;
        }
    }
    Ok(())
}

fn write_dump(path: &Path, dump: &impl serde::Serialize) -> Result<()> {
    let json = serde_json::to_string(dump).map_err(|e| HarnessError::Data(e.to_string()))?;
    fs::write(path, json)?;
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
