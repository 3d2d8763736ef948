//! Run configuration: built-in defaults, then the `--config` file, then
//! command-line flags. The merged result is what gets written to a run's
//! manifest, so a manifest can be fed back through `--config`.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use equipomdp::agent::{AgentConfig, NetworkConfig, Variant};
use equipomdp::envs::{env_group_binding, CarFlag1dConfig, CarFlag2dConfig, EnvConfig};
use equipomdp::equi_nn::InitMode;
use equipomdp::group::GroupKind;
use equipomdp::pomdp::DEFAULT_NODE_BUDGET;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Environment variable naming the directory under which runs without
/// `--out` are placed.
pub const RUN_ROOT_VAR: &str = "EQUIPOMDP_RUN_ROOT";
pub const DEFAULT_RUN_ROOT: &str = "runs";
pub const MANIFEST: &str = "manifest.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub env: EnvConfig,
    pub group: GroupSection,
    pub agent: AgentConfig,
    pub pomdp: PomdpSection,
    pub verify: VerifySection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            run: RunSection::default(),
            env: EnvConfig::Carflag1d(CarFlag1dConfig::default()),
            group: GroupSection::default(),
            agent: AgentConfig::default(),
            pomdp: PomdpSection::default(),
            verify: VerifySection::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Informational; filled in by the command that wrote the manifest.
    pub command: Option<String>,
    pub out: Option<PathBuf>,
}

/// The symmetry group the equivariant layers are built for. Each domain
/// supports exactly one; naming another is a configuration error.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroupSection {
    /// `"c4"`, `"cN"` or `"reflection"` (alias `"flip"`); empty picks the
    /// domain's group.
    pub name: Option<String>,
}

/// Settings for table exports, exact oracles and the invariance checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PomdpSection {
    pub discount: f64,
    pub horizon: usize,
    pub depth: usize,
    pub budget: usize,
    /// Episodes used to score the oracle's greedy policy in the simulator.
    pub oracle_episodes: usize,
}

impl Default for PomdpSection {
    fn default() -> Self {
        Self {
            discount: 0.99,
            horizon: 6,
            depth: 5,
            budget: DEFAULT_NODE_BUDGET,
            oracle_episodes: 200,
        }
    }
}

/// Sizes of the randomized network equivariance suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    pub networks: usize,
    pub histories: usize,
    pub max_len: usize,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            networks: 100,
            histories: 10,
            max_len: 50,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EnvKind {
    Carflag1d,
    Carflag2d,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    Zero,
    Random,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: equipomdp::agent::AgentError| e.to_string())
}

/// Flags shared by every command that builds a configuration. A flag that is
/// given wins over the config file, which wins over the defaults.
#[derive(Args, Clone, Debug, Default)]
pub struct Overrides {
    /// TOML file with [run], [env], [group], [agent], [pomdp] and [verify] sections
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Domain; switching kind resets the [env] section to that kind's defaults
    #[arg(long, value_enum)]
    pub env: Option<EnvKind>,
    /// CarFlag-2D grid side (odd)
    #[arg(long)]
    pub grid_size: Option<usize>,
    /// CarFlag-1D half length
    #[arg(long)]
    pub half_size: Option<i64>,
    /// Displacement of the information cell from the centre (breaks symmetry when nonzero)
    #[arg(long, allow_hyphen_values = true)]
    pub offset: Option<i64>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Symmetry group for the equivariant layers (c4, reflection)
    #[arg(long)]
    pub group: Option<String>,
    /// Network variant: equi, plain, equi-actor-only, equi-critic-only
    #[arg(long, value_parser = parse_variant)]
    pub agent: Option<Variant>,
    #[arg(long, value_enum)]
    pub lstm_init: Option<InitArg>,
    /// Total environment steps to train for
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub n_envs: Option<usize>,
    #[arg(long)]
    pub n_steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Return discount used by the learner
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub entropy_coef: Option<f64>,
    #[arg(long)]
    pub eval_interval: Option<usize>,
    #[arg(long)]
    pub eval_episodes: Option<usize>,
    /// Evaluate with argmax actions instead of sampling
    #[arg(long)]
    pub greedy_eval: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run directory
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Discount of the exported tables
    #[arg(long)]
    pub discount: Option<f64>,
    /// Planning horizon of the exact oracle
    #[arg(long)]
    pub horizon: Option<usize>,
    /// History depth for the belief check
    #[arg(long)]
    pub depth: Option<usize>,
    /// Maximum history-tree nodes
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub oracle_episodes: Option<usize>,
    /// Random networks in the equivariance suite
    #[arg(long)]
    pub networks: Option<usize>,
    /// Histories per network in the equivariance suite
    #[arg(long)]
    pub histories: Option<usize>,
    /// Longest history in the equivariance suite
    #[arg(long)]
    pub max_len: Option<usize>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("bad config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Usage(m) => CliError::Usage(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }

    /// Applies flags on top of `self`.
    pub fn apply(&mut self, o: &Overrides) -> Result<(), CliError> {
        let env_before = self.env.clone();
        if let Some(kind) = o.env {
            let same = matches!(
                (kind, &self.env),
                (EnvKind::Carflag1d, EnvConfig::Carflag1d(_)) | (EnvKind::Carflag2d, EnvConfig::Carflag2d(_))
            );
            if !same {
                self.env = match kind {
                    EnvKind::Carflag1d => EnvConfig::Carflag1d(CarFlag1dConfig::default()),
                    EnvKind::Carflag2d => EnvConfig::Carflag2d(CarFlag2dConfig::default()),
                };
            }
        }
        match &mut self.env {
            EnvConfig::Carflag1d(c) => {
                if o.grid_size.is_some() {
                    return Err(CliError::Usage("--grid-size applies to carflag2d; use --half-size for carflag1d".into()));
                }
                set(&mut c.half_size, o.half_size);
                set(&mut c.offset, o.offset);
                set(&mut c.max_steps, o.max_steps);
            }
            EnvConfig::Carflag2d(c) => {
                if o.half_size.is_some() {
                    return Err(CliError::Usage("--half-size applies to carflag1d; use --grid-size for carflag2d".into()));
                }
                if let Some(n) = o.grid_size {
                    if n != c.size {
                        c.size = n;
                        // the information region follows the grid
                        c.info_radius = None;
                    }
                }
                set(&mut c.offset, o.offset);
                set(&mut c.max_steps, o.max_steps);
            }
        }
        // spelled-out defaults (as in a manifest) follow the domain
        if self.env != env_before {
            if self.agent.network.encoder == Some(NetworkConfig::default_encoder(&env_before)) {
                self.agent.network.encoder = None;
            }
            let native = env_group_binding(&env_before).ok().map(|(_, s)| group_name(s.group.kind()));
            if self.group.name.is_some() && self.group.name == native {
                self.group.name = None;
            }
        }
        if o.group.is_some() {
            self.group.name = o.group.clone();
        }
        let a = &mut self.agent;
        set(&mut a.variant, o.agent);
        set(
            &mut a.lstm_init,
            o.lstm_init.map(|i| match i {
                InitArg::Zero => InitMode::Zero,
                InitArg::Random => InitMode::Random,
            }),
        );
        set(&mut a.total_steps, o.steps);
        set(&mut a.n_envs, o.n_envs);
        set(&mut a.n_steps, o.n_steps);
        set(&mut a.lr, o.lr);
        set(&mut a.gamma, o.gamma);
        set(&mut a.entropy_coef, o.entropy_coef);
        set(&mut a.eval_interval, o.eval_interval);
        set(&mut a.eval_episodes, o.eval_episodes);
        a.greedy_eval |= o.greedy_eval;
        set(&mut a.seed, o.seed);
        if o.out.is_some() {
            self.run.out = o.out.clone();
        }
        let p = &mut self.pomdp;
        set(&mut p.discount, o.discount);
        set(&mut p.horizon, o.horizon);
        set(&mut p.depth, o.depth);
        set(&mut p.budget, o.budget);
        set(&mut p.oracle_episodes, o.oracle_episodes);
        let v = &mut self.verify;
        set(&mut v.networks, o.networks);
        set(&mut v.histories, o.histories);
        set(&mut v.max_len, o.max_len);
        Ok(())
    }

    /// Validates every section and replaces "pick the default" entries with
    /// the concrete values they stand for, so the manifest is explicit.
    pub fn finalize(&mut self) -> Result<(), CliError> {
        self.env.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        self.agent.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        if !(0.0..1.0).contains(&self.pomdp.discount) {
            return Err(CliError::Usage(format!("pomdp.discount {} is outside [0, 1)", self.pomdp.discount)));
        }
        if self.verify.networks == 0 || self.verify.histories == 0 || self.verify.max_len == 0 {
            return Err(CliError::Usage("verify.networks, verify.histories and verify.max_len must be positive".into()));
        }
        let (_, symmetry) = env_group_binding(&self.env).map_err(|e| CliError::Usage(e.to_string()))?;
        let native = symmetry.group.kind();
        if let Some(name) = &self.group.name {
            let wanted = parse_group(name)?;
            if wanted != native {
                return Err(CliError::Usage(format!(
                    "group `{name}` is not a symmetry of {}: its equivariant layers are built for `{}`{}",
                    self.env.name(),
                    group_name(native),
                    if self.agent.variant == Variant::Plain {
                        ""
                    } else {
                        " (the requested agent is equivariant, so the group must match)"
                    }
                )));
            }
        }
        self.group.name = Some(group_name(native));
        if let EnvConfig::Carflag2d(c) = &mut self.env {
            c.info_radius = Some(c.radius());
        }
        if self.agent.network.encoder.is_none() {
            self.agent.network.encoder = Some(NetworkConfig::default_encoder(&self.env));
        }
        Ok(())
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

pub fn parse_group(name: &str) -> Result<GroupKind, CliError> {
    let lower = name.to_ascii_lowercase();
    match lower.as_str() {
        "reflection" | "flip" => Ok(GroupKind::Reflection),
        _ => lower
            .strip_prefix('c')
            .and_then(|n| n.parse::<usize>().ok())
            .filter(|&n| n >= 1)
            .map(GroupKind::Cyclic)
            .ok_or_else(|| CliError::Usage(format!("unknown group `{name}` (expected c4, cN or reflection)"))),
    }
}

pub fn group_name(kind: GroupKind) -> String {
    match kind {
        GroupKind::Cyclic(n) => format!("c{n}"),
        GroupKind::Reflection => "reflection".into(),
    }
}

/// Defaults, then the config file (if any), then flags; validated.
pub fn resolve(base: Option<&Path>, flags: &Overrides) -> Result<RunConfig, CliError> {
    let mut cfg = match base.or(flags.config.as_deref()) {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.apply(flags)?;
    cfg.finalize()?;
    Ok(cfg)
}

/// `--out`, else `[run] out`, else `$EQUIPOMDP_RUN_ROOT/<name>`.
pub fn run_dir(cfg: &RunConfig, default_name: &str) -> PathBuf {
    cfg.run.out.clone().unwrap_or_else(|| {
        let root = std::env::var_os(RUN_ROOT_VAR).map(PathBuf::from).unwrap_or_else(|| DEFAULT_RUN_ROOT.into());
        root.join(default_name)
    })
}

/// Creates `dir` and writes the effective configuration into it.
pub fn write_manifest(dir: &Path, cfg: &RunConfig) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    let text = format!(
        "# effective configuration of this run; pass it back with --config to repeat it\n{}",
        cfg.to_toml()
    );
    let path = dir.join(MANIFEST);
    std::fs::write(&path, text).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}
