use std::path::Path;
use std::process::ExitCode;

use oialr::cli;
use oialr::Error;

const USAGE: &str = "\
usage: oialr <command> [args]

commands:
  train <config.json> [--baseline] [--out DIR] [--seed N]
  analyze <run_dir> [--lag N]
  inspect <ckpt>

environment:
  OIALR_THREADS   cap worker threads (0 or unset = auto)";

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_user_error() { 1u8 } else { 2u8 })
        }
    }
}

fn run(args: &[String]) -> Result<(), Error> {
    cli::init_thread_pool_from_env()?;
    let mut it = args.iter();
    let Some(command) = it.next() else {
        return Err(usage("missing command"));
    };
    let rest: Vec<&String> = it.collect();
    match command.as_str() {
        "train" => {
            let mut config = None;
            let mut baseline = false;
            let mut out = None;
            let mut seed = None;
            let mut i = 0;
            while i < rest.len() {
                match rest[i].as_str() {
                    "--baseline" => baseline = true,
                    "--out" => {
                        out = Some(take_value(&rest, &mut i, "--out")?);
                    }
                    "--seed" => {
                        let v = take_value(&rest, &mut i, "--seed")?;
                        seed = Some(v.parse::<u64>().map_err(|_| {
                            Error::Config(format!("--seed expects an integer, got '{v}'"))
                        })?);
                    }
                    flag if flag.starts_with('-') => {
                        return Err(usage(&format!("unknown flag '{flag}' for train")));
                    }
                    positional => {
                        if config.replace(positional.to_string()).is_some() {
                            return Err(usage("train takes exactly one config path"));
                        }
                    }
                }
                i += 1;
            }
            let config = config.ok_or_else(|| usage("train needs a config path"))?;
            cli::cmd_train(
                Path::new(&config),
                baseline,
                out.as_deref().map(Path::new),
                seed,
            )
        }
        "analyze" => {
            let mut dir = None;
            let mut lag = 5usize;
            let mut i = 0;
            while i < rest.len() {
                match rest[i].as_str() {
                    "--lag" => {
                        let v = take_value(&rest, &mut i, "--lag")?;
                        lag = v.parse().map_err(|_| {
                            Error::Config(format!("--lag expects an integer, got '{v}'"))
                        })?;
                    }
                    flag if flag.starts_with('-') => {
                        return Err(usage(&format!("unknown flag '{flag}' for analyze")));
                    }
                    positional => {
                        if dir.replace(positional.to_string()).is_some() {
                            return Err(usage("analyze takes exactly one run directory"));
                        }
                    }
                }
                i += 1;
            }
            let dir = dir.ok_or_else(|| usage("analyze needs a run directory"))?;
            cli::cmd_analyze(Path::new(&dir), lag)
        }
        "inspect" => match rest.as_slice() {
            [path] => cli::cmd_inspect(Path::new(path.as_str())),
            _ => Err(usage("inspect takes exactly one checkpoint path")),
        },
        "help" | "--help" | "-h" => {
            // A closed pipe while printing help is not an error.
            use std::io::Write;
            let _ = std::io::stdout().write_all(format!("{USAGE}\n").as_bytes());
            Ok(())
        }
        other => Err(usage(&format!("unknown command '{other}'"))),
    }
}

fn take_value(rest: &[&String], i: &mut usize, flag: &str) -> Result<String, Error> {
    *i += 1;
    rest.get(*i)
        .map(|s| s.to_string())
        .ok_or_else(|| Error::Config(format!("{flag} needs a value")))
}

fn usage(msg: &str) -> Error {
    Error::Config(format!("{msg}\n{USAGE}"))
}
