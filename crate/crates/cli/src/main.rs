use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command};
use serde_json::{json, Value};

use plab::harness::plot::{column, line_chart};
use plab::harness::{self, read_csv, ResumeOverrides, SweepSpec, TrainConfig, KEYS};
use plab::sgd_analog::{run_quad, LrSchedule, QuadConfig};
use plab::{Error, Result};

fn config_args(cmd: Command) -> Command {
    KEYS.iter().fold(cmd, |cmd, (key, help)| {
        if *key == "seed" {
            return cmd;
        }
        cmd.arg(
            Arg::new(*key)
                .long(*key)
                .value_name("VALUE")
                .help(*help)
                .help_heading("Config keys"),
        )
    })
}

fn seed_arg() -> Arg {
    Arg::new("seed")
        .long("seed")
        .action(ArgAction::Append)
        .value_parser(clap::value_parser!(u64))
        .help("run seed; repeat for several runs")
}

fn cli() -> Command {
    Command::new("plab")
        .about("PPO / PPO-EWMA training runs, sweeps and diagnostics")
        .subcommand_required(true)
        .subcommand(config_args(
            Command::new("train")
                .about("train one run per seed")
                .arg(Arg::new("config").long("config").help("config file"))
                .arg(Arg::new("out").long("out").required(true).help("run directory"))
                .arg(seed_arg()),
        ))
        .subcommand(
            Command::new("resume")
                .about("continue a run from a checkpoint")
                .arg(Arg::new("checkpoint").long("checkpoint").required(true))
                .arg(Arg::new("out").long("out").help("new run directory (default: continue in place)"))
                .arg(Arg::new("com").long("com").value_parser(clap::value_parser!(f64)))
                .arg(Arg::new("clip_eps").long("clip_eps").value_parser(clap::value_parser!(f64)))
                .arg(Arg::new("lr").long("lr").value_parser(clap::value_parser!(f64)))
                .arg(
                    Arg::new("total_env_steps")
                        .long("total_env_steps")
                        .value_parser(clap::value_parser!(u64)),
                ),
        )
        .subcommand(
            Command::new("eval")
                .about("evaluate a checkpoint on held-out levels")
                .arg(Arg::new("checkpoint").long("checkpoint").required(true))
                .arg(Arg::new("eval_levels").long("eval_levels").value_parser(clap::value_parser!(usize)))
                .arg(Arg::new("eval_episodes").long("eval_episodes").value_parser(clap::value_parser!(usize)))
                .arg(Arg::new("eval_seed").long("eval_seed").value_parser(clap::value_parser!(u64))),
        )
        .subcommand(config_args(
            Command::new("sweep")
                .about("grid of runs plus summary.csv")
                .arg(Arg::new("config").long("config").help("sweep file"))
                .arg(Arg::new("out").long("out").required(true))
                .arg(
                    Arg::new("axis")
                        .long("axis")
                        .action(ArgAction::Append)
                        .value_name("KEY=V1,V2")
                        .help("sweep axis; repeatable"),
                )
                .arg(
                    Arg::new("workers")
                        .long("workers")
                        .value_parser(clap::value_parser!(usize))
                        .help("concurrent runs (default: available cores)"),
                )
                .arg(seed_arg()),
        ))
        .subcommand(
            Command::new("sgd-analog")
                .about("noisy gradient descent on a quadratic")
                .arg(Arg::new("dim").long("dim").value_parser(clap::value_parser!(usize)))
                .arg(Arg::new("noise_std").long("noise_std").value_parser(clap::value_parser!(f64)))
                .arg(
                    Arg::new("lr")
                        .long("lr")
                        .help("step size, or a schedule like 0:0.2,5000:0.02"),
                )
                .arg(Arg::new("total_steps").long("total_steps").value_parser(clap::value_parser!(usize)))
                .arg(Arg::new("seed").long("seed").value_parser(clap::value_parser!(u64)))
                .arg(Arg::new("out").long("out").required(true).help("CSV trace")),
        )
        .subcommand(
            Command::new("plot")
                .about("render metrics CSVs to an SVG line chart")
                .arg(Arg::new("csv").long("csv").action(ArgAction::Append).required(true))
                .arg(Arg::new("column").long("column").default_value("solve_rate"))
                .arg(Arg::new("x").long("x").default_value("update"))
                .arg(Arg::new("out").long("out").required(true)),
        )
}

fn build_config(m: &ArgMatches) -> Result<TrainConfig> {
    let mut cfg = match m.get_one::<String>("config") {
        Some(p) => TrainConfig::load(Path::new(p))?,
        None => TrainConfig::default(),
    };
    for (key, _) in KEYS {
        if *key == "seed" {
            continue;
        }
        if let Some(v) = m.get_one::<String>(key) {
            cfg.set(key, v)?;
        }
    }
    Ok(cfg)
}

fn seeds(m: &ArgMatches) -> Vec<u64> {
    m.get_many::<u64>("seed").map(|s| s.copied().collect()).unwrap_or_default()
}

fn summary_json(s: &harness::RunSummary) -> Value {
    json!({
        "run_dir": s.run_dir.display().to_string(),
        "updates": s.updates,
        "env_steps": s.env_steps,
        "final_solve_rate": s.final_solve_rate,
        "final_mean_return": s.final_mean_return,
    })
}

fn cmd_train(m: &ArgMatches) -> Result<Value> {
    let mut cfg = build_config(m)?;
    let out = PathBuf::from(m.get_one::<String>("out").expect("required"));
    let seeds = seeds(m);
    if seeds.len() <= 1 {
        if let Some(&s) = seeds.first() {
            cfg.seed = s;
        }
        return Ok(summary_json(&harness::train(&cfg, &out)?));
    }
    let mut runs = Vec::new();
    for s in seeds {
        cfg.seed = s;
        runs.push(summary_json(&harness::train(&cfg, &out.join(format!("seed{s}")))?));
    }
    Ok(json!({ "runs": runs }))
}

fn cmd_resume(m: &ArgMatches) -> Result<Value> {
    let overrides = ResumeOverrides {
        com: m.get_one::<f64>("com").copied(),
        clip_eps: m.get_one::<f64>("clip_eps").copied(),
        lr: m.get_one::<f64>("lr").copied(),
        total_env_steps: m.get_one::<u64>("total_env_steps").copied(),
    };
    let ck = PathBuf::from(m.get_one::<String>("checkpoint").expect("required"));
    let out = m.get_one::<String>("out").map(PathBuf::from);
    Ok(summary_json(&harness::resume(&ck, &overrides, out.as_deref())?))
}

fn cmd_eval(m: &ArgMatches) -> Result<Value> {
    let ck = PathBuf::from(m.get_one::<String>("checkpoint").expect("required"));
    let out = harness::evaluate_checkpoint(
        &ck,
        m.get_one::<usize>("eval_levels").copied(),
        m.get_one::<usize>("eval_episodes").copied(),
        m.get_one::<u64>("eval_seed").copied(),
    )?;
    Ok(json!({ "solve_rate": out.solve_rate, "mean_return": out.mean_return }))
}

fn cmd_sweep(m: &ArgMatches) -> Result<Value> {
    let mut spec = match m.get_one::<String>("config") {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{p}: {e}")))?;
            SweepSpec::from_text(&text)?
        }
        None => SweepSpec {
            base: TrainConfig::default(),
            axes: Vec::new(),
            seeds: vec![0],
        },
    };
    for (key, _) in KEYS.iter().filter(|(k, _)| *k != "seed") {
        if let Some(v) = m.get_one::<String>(key) {
            spec.base.set(key, v)?;
        }
    }
    for a in m.get_many::<String>("axis").into_iter().flatten() {
        let (k, v) = a
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("axis {a:?} is not KEY=V1,V2")))?;
        spec.axes.push((k.to_string(), harness::sweep::parse_axis_values(v)));
    }
    let s = seeds(m);
    if !s.is_empty() {
        spec.seeds = s;
    }
    let workers = m
        .get_one::<usize>("workers")
        .copied()
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let out = PathBuf::from(m.get_one::<String>("out").expect("required"));
    let rows = harness::sweep(&spec, &out, workers)?;
    Ok(json!({
        "summary": out.join(harness::sweep::SUMMARY_FILE).display().to_string(),
        "runs": rows.len(),
    }))
}

fn cmd_sgd(m: &ArgMatches) -> Result<Value> {
    let mut cfg = QuadConfig::default();
    if let Some(&d) = m.get_one::<usize>("dim") {
        cfg.dim = d;
    }
    if let Some(&s) = m.get_one::<f64>("noise_std") {
        cfg.noise_std = s;
    }
    if let Some(lr) = m.get_one::<String>("lr") {
        cfg.schedule = LrSchedule::parse(lr)?;
    }
    if let Some(&t) = m.get_one::<usize>("total_steps") {
        cfg.total_steps = t;
    }
    if let Some(&s) = m.get_one::<u64>("seed") {
        cfg.seed = s;
    }
    for w in cfg.warnings() {
        eprintln!("{}", json!({ "warning": w }));
    }
    let trace = run_quad(&cfg)?;
    let out = PathBuf::from(m.get_one::<String>("out").expect("required"));
    let mut text = String::from("step,lr,neg_dist\n");
    for (t, d) in trace.neg_dist.iter().enumerate() {
        text.push_str(&format!("{t},{},{d}\n", cfg.schedule.lr_at(t)));
    }
    std::fs::write(&out, text).map_err(|e| Error::Config(format!("{}: {e}", out.display())))?;
    let t = cfg.total_steps;
    let tail = t.saturating_sub(5000).min(t)..t + 1;
    Ok(json!({ "out": out.display().to_string(), "tail_mean_sq_norm": trace.mean_sq_norm(tail) }))
}

fn cmd_plot(m: &ArgMatches) -> Result<Value> {
    let col = m.get_one::<String>("column").expect("default");
    let xcol = m.get_one::<String>("x").expect("default");
    let probe = plab::metrics::MetricsRecord::empty(0, 0);
    for c in [col, xcol] {
        if column(&probe, c).is_none() {
            return Err(Error::InvalidArgument(format!("unknown column {c:?}")));
        }
    }
    let mut series = Vec::new();
    for p in m.get_many::<String>("csv").into_iter().flatten() {
        let rows = read_csv(Path::new(p))?;
        let pts = rows
            .iter()
            .map(|r| (column(r, xcol).expect("checked"), column(r, col).expect("checked")))
            .collect();
        series.push((p.clone(), pts));
    }
    let out = PathBuf::from(m.get_one::<String>("out").expect("required"));
    std::fs::write(&out, line_chart(col, xcol, col, &series))
        .map_err(|e| Error::Config(format!("{}: {e}", out.display())))?;
    Ok(json!({ "out": out.display().to_string(), "series": series.len() }))
}

fn main() -> ExitCode {
    let m = cli().get_matches();
    let res = match m.subcommand() {
        Some(("train", s)) => cmd_train(s),
        Some(("resume", s)) => cmd_resume(s),
        Some(("eval", s)) => cmd_eval(s),
        Some(("sweep", s)) => cmd_sweep(s),
        Some(("sgd-analog", s)) => cmd_sgd(s),
        Some(("plot", s)) => cmd_plot(s),
        _ => unreachable!("subcommand required"),
    };
    match res {
        Ok(v) => {
            println!("{v}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
            ExitCode::FAILURE
        }
    }
}
