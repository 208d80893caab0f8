//! `crossboot` command-line tool.

mod args;
mod commands;
mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::Parser;

use args::{Cli, Command};
use commands::Outcome;
use manifest::{differing_outputs, Manifest};

fn absolute(path: &Path) -> Result<PathBuf> {
    fs::canonicalize(path).with_context(|| format!("input {} not found", path.display()))
}

/// Makes input paths absolute so a manifest can be replayed from anywhere.
fn resolve_inputs(command: &Command) -> Result<Command> {
    let mut c = command.clone();
    match &mut c {
        Command::Diagnose(a) => a.input.input = absolute(&a.input.input)?,
        Command::Bootstrap(a) => a.input.input = absolute(&a.input.input)?,
        Command::Contrast(a) => a.input.input = absolute(&a.input.input)?,
        Command::Collapse(a) => a.input.input = absolute(&a.input.input)?,
        Command::Simulate(a) => {
            if let Some(mask) = &a.mask {
                a.mask = Some(absolute(mask)?);
            }
        }
        Command::Verify(_) | Command::Run(_) | Command::Replay(_) => {}
    }
    Ok(c)
}

struct RunContext {
    threads: usize,
    shards: usize,
}

/// Runs a command that produces outputs and records its manifest.
fn execute(command: &Command, ctx: &RunContext) -> Result<(Outcome, Option<Manifest>)> {
    let command = resolve_inputs(command)?;
    let outcome = match &command {
        Command::Diagnose(a) => commands::diagnose(a, ctx.shards)?,
        Command::Bootstrap(a) => commands::bootstrap(a, ctx.shards)?,
        Command::Contrast(a) => commands::contrast(a, ctx.shards)?,
        Command::Simulate(a) => commands::simulate(a)?,
        Command::Verify(a) => commands::verify(a)?,
        Command::Collapse(a) => commands::collapse(a)?,
        Command::Run(_) | Command::Replay(_) => bail!("`{}` cannot be nested", command.name()),
    };
    let manifest = match command.out_dir() {
        Some(dir) => {
            let m = Manifest::new(&command, ctx.threads, ctx.shards, &outcome.inputs, &outcome.outputs)?;
            m.write(&dir)?;
            Some(m)
        }
        None => None,
    };
    Ok((outcome, manifest))
}

fn run_config(path: &Path, ctx: &RunContext) -> Result<u8> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let command: Command = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    // relative paths in the file are taken relative to the file itself
    let base = path.parent().unwrap_or(Path::new("."));
    let command = rebase(&command, base);
    Ok(execute(&command, ctx)?.0.status)
}

fn rebase(command: &Command, base: &Path) -> Command {
    let fix = |p: &mut PathBuf| {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    };
    let mut c = command.clone();
    match &mut c {
        Command::Diagnose(a) => {
            fix(&mut a.input.input);
            fix(&mut a.out);
        }
        Command::Bootstrap(a) => {
            fix(&mut a.input.input);
            fix(&mut a.out);
        }
        Command::Contrast(a) => {
            fix(&mut a.input.input);
            fix(&mut a.out);
        }
        Command::Collapse(a) => {
            fix(&mut a.input.input);
            fix(&mut a.out);
        }
        Command::Simulate(a) => {
            fix(&mut a.out);
            if let Some(m) = &mut a.mask {
                fix(m);
            }
        }
        Command::Verify(a) => {
            if let Some(o) = &mut a.out {
                fix(o);
            }
        }
        Command::Run(_) | Command::Replay(_) => {}
    }
    c
}

fn replay(manifest_path: &Path, out: Option<&Path>, ctx: &RunContext) -> Result<u8> {
    let recorded = Manifest::read(manifest_path)?;
    recorded.check_inputs()?;
    let dir = match out {
        Some(d) => d.to_path_buf(),
        None => manifest_path.parent().unwrap_or(Path::new(".")).join("replay"),
    };
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let command = recorded.invocation.redirected(&dir);
    let (outcome, fresh) = execute(&command, ctx)?;
    let fresh = fresh.context("replayed command wrote no manifest")?;
    let differing = differing_outputs(&recorded, &fresh);
    if differing.is_empty() {
        println!("replay reproduced {} output(s) bit-exactly in {}", recorded.outputs.len(), dir.display());
        Ok(outcome.status)
    } else {
        eprintln!("replay differs from {}: {}", manifest_path.display(), differing.join(", "));
        Ok(3)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli.threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())).max(1);
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
        eprintln!("error: cannot start thread pool: {e}");
        return ExitCode::from(1);
    }
    let ctx = RunContext { threads, shards: cli.shards.unwrap_or(threads).max(1) };
    let result = match &cli.command {
        Command::Run(a) => run_config(&a.config, &ctx),
        Command::Replay(a) => replay(&a.manifest, a.out.as_deref(), &ctx),
        other => execute(other, &ctx).map(|(o, _)| o.status),
    };
    match result {
        Ok(0) => ExitCode::SUCCESS,
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
