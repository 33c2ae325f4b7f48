use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use dialect_forge::eval::estimate_llm_calls;
use dialect_forge::executor::RewardPolicy;
use dialect_forge::model::{Dialect, Stage};
use dialect_forge::pipeline::{ModelConfig, PipelineConfig, PipelineError, PrefsStage, Runtime, Severity, StageStatus};

#[derive(Parser)]
#[command(name = "dialect-forge", version, about = "Execution-verified text-to-SQL data synthesis across SQL dialects")]
struct Cli {
    /// Pipeline config file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Re-run stages even if the manifest marks them complete.
    #[arg(long, global = true)]
    force: bool,
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// -v for progress, -vv for debug output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct OutArg {
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run every configured stage, or the listed ones, in order.
    Run {
        #[arg(long, value_delimiter = ',')]
        stages: Vec<Stage>,
        #[command(flatten)]
        out: OutArg,
    },
    /// Translate source-dialect pairs with execution feedback.
    Translate {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        targets: Vec<Dialect>,
        #[arg(long)]
        max_rounds: Option<usize>,
        /// none, identity or command:<argv>
        #[arg(long)]
        prefilter: Option<String>,
        #[command(flatten)]
        out: OutArg,
    },
    /// Draw N candidates per question and split them by execution.
    Sample {
        #[arg(long)]
        n: Option<usize>,
        /// auto, exec-only or exec-and-match
        #[arg(long)]
        reward_policy: Option<String>,
        #[arg(long)]
        dialect: Option<Dialect>,
        /// Scripted model file to use instead of the config's model.
        #[arg(long)]
        model: Option<PathBuf>,
        #[command(flatten)]
        out: OutArg,
    },
    /// Pair best and worst samples into preference records.
    BuildPrefs {
        #[arg(long)]
        worst_of: Option<usize>,
        #[arg(long)]
        cross_product: bool,
        #[command(flatten)]
        out: OutArg,
    },
    /// Score model outputs against a benchmark.
    Evaluate {
        /// Benchmark file or directory of .jsonl files.
        #[arg(long)]
        benchmark: Option<PathBuf>,
        /// JSONL of {id, output}; without it the model answers each item.
        #[arg(long)]
        outputs: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        dialect: Vec<Dialect>,
        /// Also write the text report here.
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        out: OutArg,
    },
    /// Expected model calls for a translation run.
    EstimateCost {
        #[arg(long)]
        q: u64,
        #[arg(long)]
        p_llm: f64,
        #[arg(long, default_value_t = 3)]
        rounds: u32,
        #[arg(long, default_value_t = 0.0)]
        p_prefilter: f64,
    },
    /// Render plot data and summary tables from finished stages.
    Report {
        #[command(flatten)]
        out: OutArg,
    },
    /// Check the config, paths, templates and backends without running.
    Validate,
}

fn abs(p: PathBuf) -> anyhow::Result<PathBuf> {
    std::path::absolute(&p).with_context(|| format!("resolving {}", p.display()))
}

fn load_config(cli: &Cli) -> anyhow::Result<PipelineConfig> {
    let Some(path) = &cli.config else { bail!("--config is required for this command") };
    let mut cfg = PipelineConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    Ok(cfg)
}

fn set_out(cfg: &mut PipelineConfig, out: &OutArg) -> anyhow::Result<()> {
    if let Some(o) = &out.out {
        cfg.output_dir = abs(o.clone())?;
    }
    Ok(())
}

/// Applies command flags; returns the stages to run.
fn apply_flags(cfg: &mut PipelineConfig, cmd: &Cmd) -> anyhow::Result<Option<Vec<Stage>>> {
    Ok(match cmd {
        Cmd::Run { stages, out } => {
            set_out(cfg, out)?;
            (!stages.is_empty()).then(|| stages.clone())
        }
        Cmd::Translate { input, targets, max_rounds, prefilter, out } => {
            set_out(cfg, out)?;
            if cfg.translate.is_none() {
                let Some(i) = input else { bail!("translate needs --input or a [translate] block") };
                cfg.translate = Some(dialect_forge::pipeline::TranslateStage {
                    input: abs(i.clone())?,
                    targets: targets.clone(),
                    max_rounds: 3,
                    prefilter: "none".into(),
                    reward_policy: RewardPolicy::ExecOnly,
                });
            }
            let t = cfg.translate.as_mut().expect("set above");
            if let Some(i) = input {
                t.input = abs(i.clone())?;
            }
            if !targets.is_empty() {
                t.targets = targets.clone();
            }
            if let Some(r) = max_rounds {
                t.max_rounds = *r;
            }
            if let Some(p) = prefilter {
                t.prefilter = p.clone();
            }
            Some(vec![Stage::Translate])
        }
        Cmd::Sample { n, reward_policy, dialect, model, out } => {
            set_out(cfg, out)?;
            let Some(s) = cfg.sample.as_mut() else { bail!("sample needs a [sample] block in the config") };
            if let Some(n) = n {
                s.n = *n;
            }
            if let Some(p) = reward_policy {
                s.reward_policy = p.clone();
            }
            if let Some(d) = dialect {
                s.dialect = *d;
            }
            if let Some(m) = model {
                cfg.model = Some(ModelConfig::Scripted { script: abs(m.clone())? });
            }
            Some(vec![Stage::Sample])
        }
        Cmd::BuildPrefs { worst_of, cross_product, out } => {
            set_out(cfg, out)?;
            let p = cfg.build_prefs.get_or_insert_with(PrefsStage::default);
            if let Some(w) = worst_of {
                p.worst_of = *w;
            }
            p.cross_product |= *cross_product;
            Some(vec![Stage::BuildPrefs])
        }
        Cmd::Evaluate { benchmark, outputs, dialect, out, .. } => {
            set_out(cfg, out)?;
            if cfg.evaluate.is_none() {
                let Some(b) = benchmark else { bail!("evaluate needs --benchmark or an [evaluate] block") };
                cfg.evaluate = Some(dialect_forge::pipeline::EvalStage { benchmark: abs(b.clone())?, dialects: Vec::new(), outputs: None });
            }
            let e = cfg.evaluate.as_mut().expect("set above");
            if let Some(b) = benchmark {
                e.benchmark = abs(b.clone())?;
            }
            if let Some(o) = outputs {
                e.outputs = Some(abs(o.clone())?);
            }
            if !dialect.is_empty() {
                e.dialects = dialect.clone();
            }
            Some(vec![Stage::Evaluate])
        }
        Cmd::Report { out } => {
            set_out(cfg, out)?;
            Some(vec![Stage::Report])
        }
        Cmd::Validate | Cmd::EstimateCost { .. } => None,
    })
}

fn print_status(report: &[(Stage, StageStatus)]) {
    for (stage, st) in report {
        match st {
            StageStatus::Skipped => println!("{:<12} skipped (already complete)", stage.as_str()),
            StageStatus::Ran(c) => {
                let parts: Vec<String> = c.iter().map(|(k, v)| format!("{}={}", k, v)).collect();
                println!("{:<12} done {}", stage.as_str(), parts.join(" "));
            }
        }
    }
}

fn real_main(cli: Cli) -> anyhow::Result<ExitCode> {
    if let Cmd::EstimateCost { q, p_llm, rounds, p_prefilter } = &cli.cmd {
        return Ok(match estimate_llm_calls(*q, *p_llm, *rounds, *p_prefilter) {
            Ok(calls) => {
                println!("{}", calls);
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {}", e);
                ExitCode::from(1)
            }
        });
    }
    let mut cfg = match load_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {:#}", e);
            return Ok(ExitCode::from(1));
        }
    };
    let stages = match apply_flags(&mut cfg, &cli.cmd) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {:#}", e);
            return Ok(ExitCode::from(1));
        }
    };
    let (rt, diags) = Runtime::prepare(cfg);
    let validate = matches!(cli.cmd, Cmd::Validate);
    for d in &diags {
        if validate {
            println!("{}", d);
        } else if d.severity >= Severity::Warning {
            eprintln!("{}", d);
        }
    }
    let Some(rt) = rt else {
        return Ok(ExitCode::from(1));
    };
    if validate {
        return Ok(ExitCode::SUCCESS);
    }
    match rt.run(stages.as_deref(), cli.force) {
        Ok(report) => {
            print_status(&report);
            if let Cmd::Evaluate { report: Some(path), .. } = &cli.cmd {
                copy_report(&rt.cfg.output_dir, path)?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Err(e) => {
            eprintln!("error: {}", e);
            Ok(ExitCode::from(match e {
                PipelineError::Validation(_) => 1,
                PipelineError::Stage { .. } => 2,
            }))
        }
    }
}

fn copy_report(out: &Path, dest: &Path) -> anyhow::Result<()> {
    let src = out.join("eval").join("report.txt");
    std::fs::copy(&src, dest).with_context(|| format!("copying {} to {}", src.display(), dest.display()))?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).format_timestamp(None).init();
    match real_main(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {:#}", e);
            ExitCode::from(2)
        }
    }
}
