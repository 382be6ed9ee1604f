use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Arg, ArgMatches, Command};
use tslab_core::decoder::FusionMode;
use tslab_harness::{oracle, pipeline, tables, ExperimentConfig};

fn cli() -> Command {
    let mut cmd = Command::new("tslab")
        .about("Strictly monotonic transducer experiments on synthetic data")
        .subcommand_required(true)
        .arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .value_parser(clap::value_parser!(PathBuf))
                .global(true)
                .help("key = value config file; flags override it"),
        );
    for key in ExperimentConfig::KEYS {
        cmd = cmd.arg(Arg::new(*key).long(*key).value_name("VALUE").global(true).hide_short_help(true));
    }
    cmd.subcommand(Command::new("gen-data").about("Generate train/dev utterances and the LM text"))
        .subcommand(Command::new("train-ce").about("Train the CE model (ce.ckpt)"))
        .subcommand(Command::new("gen-nbest").about("Train the external LM and write the CE N-best lists"))
        .subcommand(Command::new("train-seq").about("Fine-tune the CE model with every configured criterion"))
        .subcommand(
            Command::new("decode")
                .about("Decode the dev set with one model and fusion setting")
                .arg(Arg::new("model").long("model").default_value(pipeline::CE))
                .arg(Arg::new("mode").long("mode").default_value("sf"))
                .arg(Arg::new("lambda1").long("lambda1").value_parser(clap::value_parser!(f64)).default_value("0"))
                .arg(Arg::new("lambda2").long("lambda2").value_parser(clap::value_parser!(f64)).default_value("0"))
                .arg(Arg::new("rho").long("rho").value_parser(clap::value_parser!(f64))),
        )
        .subcommand(Command::new("ilm-ppl").about("Zero-encoder ILM perplexities with and without renormalization"))
        .subcommand(Command::new("swap-eval").about("SF WER of every encoder x pred+joint combination"))
        .subcommand(Command::new("tables").about("Evaluate every model and write results.jsonl and tables.txt"))
        .subcommand(Command::new("oracle-check").about("Run the brute-force and finite-difference suite"))
        .subcommand(Command::new("run-pipeline").about("Every phase in order, then the tables"))
}

fn load_config(m: &ArgMatches) -> Result<ExperimentConfig> {
    let mut c = ExperimentConfig::default();
    if let Some(path) = m.get_one::<PathBuf>("config") {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        c.apply_text(&text)?;
    }
    for key in ExperimentConfig::KEYS {
        if let Some(v) = m.get_one::<String>(key) {
            c.set(key, v)?;
        }
    }
    c.validate()?;
    Ok(c)
}

fn print_trace(name: &str, trace: &[f64]) {
    if let Some(last) = trace.last() {
        println!("{name}: {} epochs, final loss {last:.6}", trace.len());
    } else {
        println!("{name}: no epochs");
    }
}

fn main() -> Result<()> {
    let matches = cli().get_matches();
    let (sub, args) = matches.subcommand().expect("subcommand is required");
    let c = load_config(args)?;
    match sub {
        "gen-data" => {
            pipeline::gen_data(&c)?;
            println!("data written to {}", c.work_dir.display());
        }
        "train-ce" => print_trace(pipeline::CE, &pipeline::train_ce_phase(&c)?),
        "gen-nbest" => {
            pipeline::gen_nbest_phase(&c)?;
            println!("N-best lists written to {}", pipeline::WorkDir::new(&c.work_dir).nbest().display());
        }
        "train-seq" => {
            for (name, trace) in pipeline::train_seq_phase(&c)? {
                print_trace(&name, &trace);
            }
        }
        "decode" => {
            let model = args.get_one::<String>("model").expect("has a default");
            let mode = FusionMode::parse(args.get_one::<String>("mode").expect("has a default"))?;
            let l1 = *args.get_one::<f64>("lambda1").expect("has a default");
            let l2 = *args.get_one::<f64>("lambda2").expect("has a default");
            let rho = args.get_one::<f64>("rho").copied();
            let wer = pipeline::decode_phase(&c, model, mode, l1, l2, rho)?;
            println!("{model} {} WER {wer:.2}", mode.name());
        }
        "ilm-ppl" => {
            println!("{:<18}{:>14}{:>16}", "model", "w/ renorm", "w/o renorm");
            for (name, renorm, raw) in pipeline::ilm_ppl_phase(&c)? {
                println!("{name:<18}{renorm:>14.3}{raw:>16.3}");
            }
        }
        "swap-eval" => {
            println!("{:<18}{:<18}{:>10}", "encoder", "pred+joint", "WER");
            for (enc, pj, wer) in pipeline::swap_phase(&c)? {
                println!("{enc:<18}{pj:<18}{wer:>10.2}");
            }
        }
        "tables" => {
            pipeline::evaluate(&c)?;
            let report = tables::experiment_tables(&c)?;
            std::fs::write(pipeline::WorkDir::new(&c.work_dir).tables(), &report)?;
            print!("{report}");
        }
        "oracle-check" => {
            let reports = oracle::run_all();
            for r in &reports {
                println!("{r}");
            }
            if reports.iter().any(|r| !r.passed) {
                bail!("oracle suite failed");
            }
        }
        "run-pipeline" => {
            let records = pipeline::run_pipeline(&c)?;
            if c.table_model {
                for r in &records {
                    println!("{} {} {:e}", r.experiment, r.metric, r.value);
                }
            } else {
                print!("{}", std::fs::read_to_string(pipeline::WorkDir::new(&c.work_dir).tables())?);
            }
        }
        other => bail!("unknown subcommand {other}"),
    }
    Ok(())
}
