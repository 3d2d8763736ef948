use std::fs::File;

use equipomdp::envs::{evaluate_table_policy, export_pomdp, EnvError};
use equipomdp::pomdp::{exact_q, PomdpError};
use serde::Serialize;

use crate::config::{resolve, run_dir, write_manifest, Overrides};
use crate::CliError;

#[derive(Serialize)]
struct Summary {
    env: String,
    states: usize,
    actions: usize,
    observations: usize,
    discount: f64,
    horizon: usize,
    nodes: usize,
    initial_value: f64,
    max_bellman_residual: f64,
    greedy_episodes: usize,
    greedy_success_rate: f64,
    greedy_mean_return: f64,
    greedy_left_table: usize,
}

pub fn run(flags: &Overrides) -> Result<bool, CliError> {
    let mut cfg = resolve(None, flags)?;
    cfg.run.command = Some("oracle".into());
    let (pomdp, _) = export_pomdp(&cfg.env, cfg.pomdp.discount).map_err(|e| match e {
        EnvError::Config(_) => CliError::Usage(e.to_string()),
        other => CliError::runtime(other),
    })?;
    let table = exact_q(&pomdp, cfg.pomdp.horizon, cfg.pomdp.budget).map_err(|e| match e {
        PomdpError::NodeBudget { nodes, budget, depth } => CliError::Runtime(format!(
            "history tree exceeds the node budget: {nodes} nodes reached while expanding depth {depth} of {} (budget {budget}); lower --horizon or raise --budget",
            cfg.pomdp.horizon.saturating_sub(1)
        )),
        other => CliError::runtime(other),
    })?;
    let name = format!("oracle-{}-h{}", cfg.env.name(), cfg.pomdp.horizon);
    let dir = run_dir(&cfg, &name);
    cfg.run.out = Some(dir.clone());
    write_manifest(&dir, &cfg)?;

    let tree = table.tree();
    let na = pomdp.n_actions();
    let path = dir.join("q_table.csv");
    let file = File::create(&path).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", path.display())))?;
    let mut w = csv::Writer::from_writer(file);
    let mut header = vec!["node".to_string(), "depth".into(), "history".into()];
    header.extend((0..na).map(|a| format!("q{a}")));
    header.extend(["v".to_string(), "greedy".into()]);
    w.write_record(&header).map_err(CliError::runtime)?;
    let mut residual: f64 = 0.0;
    for id in tree.ids() {
        residual = residual.max(table.bellman_residual(&pomdp, id));
        let mut rec = vec![id.0.to_string(), tree.depth(id).to_string(), tree.history(id).to_string()];
        rec.extend(table.q(id).iter().map(|q| q.to_string()));
        rec.push(table.v(id).to_string());
        rec.push(table.argmax(id).iter().map(|a| a.to_string()).collect::<Vec<_>>().join("|"));
        w.write_record(&rec).map_err(CliError::runtime)?;
    }
    w.flush().map_err(CliError::runtime)?;

    let eval = evaluate_table_policy(&cfg.env, &table, cfg.pomdp.oracle_episodes, cfg.agent.seed).map_err(CliError::runtime)?;
    // V at the empty history, averaged over the first observation
    let initial_value: f64 = tree.roots().iter().map(|&(_, id)| tree.edge_prob(id) * table.v(id)).sum();
    let summary = Summary {
        env: cfg.env.name().into(),
        states: pomdp.n_states(),
        actions: na,
        observations: pomdp.n_obs(),
        discount: pomdp.discount(),
        horizon: table.horizon(),
        nodes: tree.len(),
        initial_value,
        max_bellman_residual: residual,
        greedy_episodes: eval.episodes,
        greedy_success_rate: eval.success_rate(),
        greedy_mean_return: eval.mean_return,
        greedy_left_table: eval.left_table,
    };
    let path = dir.join("summary.toml");
    std::fs::write(&path, toml::to_string(&summary).map_err(CliError::runtime)?)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    println!(
        "{}: {} history nodes to horizon {}, V0 = {:.6}, max Bellman residual {:.1e}; greedy policy success {:.3} over {} simulated episodes; wrote {}",
        summary.env,
        summary.nodes,
        summary.horizon,
        initial_value,
        residual,
        summary.greedy_success_rate,
        summary.greedy_episodes,
        dir.display()
    );
    Ok(true)
}
