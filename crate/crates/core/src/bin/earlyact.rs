use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use earlyact::checkpoint;
use earlyact::config::KeyValues;
use earlyact::harness::{self, report, TrainConfig};
use earlyact::synth::{bayes_bound, generate_corpus, write_dump};

#[derive(Parser)]
#[command(name = "earlyact", version, about = "Early action prediction on partially observed clips")]
struct Cli {
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Extra `key=value` overrides, applied after the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory for reports and checkpoints.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for clip-parallel work (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Single thread; identical configs give bitwise-identical outputs.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the corpus and print its accuracy ceilings.
    Gen {
        /// Also write train.bin and test.bin dumps to the output directory.
        #[arg(long)]
        dump: bool,
    },
    /// Train, save `model.ckpt` and evaluate on the test split.
    Train,
    /// Evaluate a checkpoint at every observation ratio.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train full and segment-only models and compare them.
    Ablate,
    /// Vary one setting at a time and evaluate each run.
    Sweep {
        /// Axis as `key=v1|v2|v3`; repeatable.
        #[arg(long = "grid")]
        grid: Vec<String>,
        /// Use the LSTM width / learning rate / decay schedule grid.
        #[arg(long)]
        standard: bool,
    },
    /// Confusion matrix of a checkpoint after `k` segments.
    Confusion {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 2)]
        k: usize,
    },
    /// Finite-difference gradient checks.
    Gradcheck,
    /// Structural invariant checks.
    Selftest,
}

fn load_config(cli: &Cli) -> anyhow::Result<TrainConfig> {
    let mut kv = match &cli.config {
        Some(p) => KeyValues::parse(&std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
        None => KeyValues::default(),
    };
    for o in &cli.overrides {
        kv.assign(o)?;
    }
    if let Some(seed) = cli.seed {
        kv.set("seed", seed.to_string());
    }
    Ok(TrainConfig::from_kv(&kv)?)
}

fn write(out: &Path, name: &str, text: &str) -> anyhow::Result<()> {
    report::write(out, name, text).with_context(|| format!("writing {}", out.join(name).display()))
}

fn print_checks(results: &[harness::CheckResult]) -> ExitCode {
    for r in results {
        println!("{r}");
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    println!("{} checks, {failed} failed", results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let threads = if cli.deterministic { 1 } else { cli.threads };
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    let out = cli.out.clone();
    let started = Instant::now();

    match &cli.command {
        Command::Gradcheck => {
            let results = harness::gradient_suite()?;
            let code = print_checks(&results);
            println!("elapsed {:.1}s", started.elapsed().as_secs_f64());
            return Ok(code);
        }
        Command::Selftest => return Ok(print_checks(&harness::selftest()?)),
        _ => {}
    }

    let cfg = load_config(&cli)?;
    write(&out, "config.resolved", &cfg.resolved())?;
    let segments = cfg.model.segments;
    match &cli.command {
        Command::Gen { dump } => {
            let corpus = generate_corpus(&cfg.corpus)?;
            println!("train clips {}, test clips {}", corpus.train.len(), corpus.test.len());
            for k in 1..=segments {
                println!("ceiling at {k}/{segments}: {:.4}", bayes_bound(&cfg.corpus, k, segments)?);
            }
            if *dump {
                for (name, clips) in [("train.bin", &corpus.train), ("test.bin", &corpus.test)] {
                    let mut f = std::io::BufWriter::new(std::fs::File::create(out.join(name))?);
                    write_dump(&mut f, clips)?;
                }
            }
        }
        Command::Train => {
            let corpus = generate_corpus(&cfg.corpus)?;
            let outcome = harness::train(&cfg, &corpus.train, |e| {
                eprintln!("epoch {:>3}  loss {:.5}  lr {:.2e}  train_acc {:.3}", e.epoch, e.loss, e.lr, e.train_acc);
            })?;
            checkpoint::save(&out.join("model.ckpt"), &outcome.model, cfg.seed)?;
            write(&out, "history.csv", &report::history_csv(&outcome.history))?;
            let table = harness::evaluate(&outcome.model, &corpus.test, segments, cfg.model.mode.as_str())?;
            write(&out, "accuracy.csv", &report::accuracy_csv(&table))?;
            print!("{}", report::accuracy_csv(&table));
        }
        Command::Eval { checkpoint: path } => {
            let loaded = checkpoint::load(path)?;
            let corpus = generate_corpus(&cfg.corpus)?;
            let mode = loaded.model.config.mode;
            let table = harness::evaluate(&loaded.model, &corpus.test, loaded.model.config.segments, mode.as_str())?;
            write(&out, "accuracy.csv", &report::accuracy_csv(&table))?;
            print!("{}", report::accuracy_csv(&table));
        }
        Command::Ablate => {
            let corpus = generate_corpus(&cfg.corpus)?;
            let ab = harness::ablate(&cfg, &corpus, |mode, e| {
                eprintln!("[{}] epoch {:>3}  loss {:.5}", mode.as_str(), e.epoch, e.loss);
            })?;
            write(&out, "accuracy.csv", &report::accuracy_csv(&ab.table))?;
            print!("{}", report::accuracy_csv(&ab.table));
            let spread: Vec<String> = ab.spread.iter().map(|d| format!("{d:+.3}")).collect();
            println!("full - segment_only: {}", spread.join(" "));
        }
        Command::Sweep { grid, standard } => {
            let mut axes = grid.iter().map(|g| harness::parse_grid(g)).collect::<Result<Vec<_>, _>>()?;
            if *standard {
                axes.extend(harness::standard_grid());
            }
            let mut summary = String::from("setting,avg\n");
            let points = harness::sweep(&cfg, &axes, |p| {
                let label = p.label();
                let avg = p.table.average(&label).unwrap_or(f64::NAN);
                eprintln!("{label}: avg {avg:.4}");
            })?;
            for p in &points {
                let dir = out.join(p.label());
                write(&dir, "accuracy.csv", &report::accuracy_csv(&p.table))?;
                write(&dir, "history.csv", &report::history_csv(&p.history))?;
                write(&dir, "config.resolved", &p.config.resolved())?;
                let avg = p.table.average(&p.label()).unwrap_or(f64::NAN);
                summary.push_str(&format!("{},{avg:.prec$}\n", p.label(), prec = report::PRECISION));
            }
            write(&out, "sweep.csv", &summary)?;
            print!("{summary}");
        }
        Command::Confusion { checkpoint: path, k } => {
            let loaded = checkpoint::load(path)?;
            let segs = loaded.model.config.segments;
            if *k == 0 || *k > segs {
                bail!("k must be in 1..={segs}");
            }
            let corpus = generate_corpus(&cfg.corpus)?;
            let m = harness::confusion(&loaded.model, &corpus.test, *k, segs)?;
            write(&out, "confusion.csv", &report::confusion_csv(&m))?;
            for row in &m.counts {
                println!("{}", row.iter().map(|c| format!("{c:>5}")).collect::<String>());
            }
        }
        Command::Gradcheck | Command::Selftest => unreachable!("handled above"),
    }
    eprintln!("done in {:.1}s", started.elapsed().as_secs_f64());
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
