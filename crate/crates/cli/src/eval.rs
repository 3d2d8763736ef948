use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use equipomdp::agent::{evaluate, run_episode, EvalMode, PolicyNetwork};
use equipomdp::envs::{env_rng, Env};

use crate::config::{resolve, Overrides, MANIFEST};
use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Checkpoint {
    Best,
    Final,
    Init,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Training run directory (its manifest supplies the configuration)
    pub run: PathBuf,
    #[arg(long, value_enum, default_value = "best")]
    pub checkpoint: Checkpoint,
    /// Write step-by-step text traces of the first episodes to this file
    #[arg(long, value_name = "FILE")]
    pub trace: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub trace_episodes: usize,
    #[command(flatten)]
    pub flags: Overrides,
}

// trace episodes draw from streams far above any training env index
const TRACE_STREAM: usize = 1 << 30;

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

pub fn run(args: &EvalArgs) -> Result<bool, CliError> {
    if args.flags.config.is_some() {
        return Err(CliError::Usage("eval reads its configuration from the run's manifest; drop --config".into()));
    }
    let manifest = args.run.join(MANIFEST);
    let cfg = resolve(Some(&manifest), &args.flags)?;
    let name = match args.checkpoint {
        Checkpoint::Best => "best.ckpt",
        Checkpoint::Final => "final.ckpt",
        Checkpoint::Init => "init.ckpt",
    };
    let path = args.run.join(name);
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
    let (net, store) = PolicyNetwork::from_checkpoint(&cfg.env, &cfg.agent.network, cfg.agent.variant, &text)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let mode = if cfg.agent.greedy_eval {
        EvalMode::Greedy
    } else {
        EvalMode::Sample
    };
    let init = cfg.agent.lstm_init;
    let seed = cfg.agent.seed;
    let result = evaluate(&net, &store, &cfg.env, cfg.agent.eval_episodes, seed, mode, init).map_err(CliError::runtime)?;
    println!(
        "{name} on {}: {} episodes, success rate {:.3}, mean return {:+.4}",
        cfg.env.name(),
        result.episodes,
        result.success_rate,
        result.mean_return
    );
    if let Some(trace_path) = &args.trace {
        let mut out = String::new();
        for i in 0..args.trace_episodes {
            let mut env = Env::new(&cfg.env).map_err(CliError::runtime)?;
            env.reset(&mut env_rng(seed, TRACE_STREAM + i));
            // replay on a copy to recover the hidden state at every step
            let mut replay = env.clone();
            let trace = run_episode(&net, &store, &mut env, mode, init, &mut env_rng(seed, 2 * TRACE_STREAM + i))
                .map_err(CliError::runtime)?;
            let _ = writeln!(
                out,
                "# episode {i}: {}, return {:+.4}, {} steps",
                if trace.success { "success" } else { "failure" },
                trace.total_return,
                trace.actions.len()
            );
            for (t, &a) in trace.actions.iter().enumerate() {
                let probs: Vec<String> = softmax(&trace.logits[t]).iter().map(|p| format!("{p:.3}")).collect();
                let before = replay.describe();
                replay.step(a).map_err(CliError::runtime)?;
                let _ = writeln!(
                    out,
                    "{t:>3}  {before}  action={} probs=[{}] value={:+.4} reward={:+.3}",
                    replay.action_name(a),
                    probs.join(","),
                    trace.values[t],
                    trace.rewards[t]
                );
            }
            let _ = writeln!(out, "end  {}", replay.describe());
        }
        std::fs::write(trace_path, out).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", trace_path.display())))?;
    }
    Ok(true)
}
