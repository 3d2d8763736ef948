use std::fs::File;
use std::path::Path;

use equipomdp::agent::{train, CurveRow, CURVE_HEADER};
use equipomdp::autodiff::ParamStore;

use crate::config::{resolve, run_dir, write_manifest, Overrides};
use crate::CliError;

pub const CURVE_FILE: &str = "curve.csv";

/// Appends curve rows as they arrive and flushes each one, so an aborted run
/// keeps every evaluation logged before the failure.
struct CurveWriter {
    out: csv::Writer<File>,
    error: Option<String>,
}

impl CurveWriter {
    fn create(path: &Path) -> Result<Self, CliError> {
        let file = File::create(path).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", path.display())))?;
        let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        out.write_record(CURVE_HEADER.split(','))
            .and_then(|_| out.flush().map_err(Into::into))
            .map_err(CliError::runtime)?;
        Ok(Self { out, error: None })
    }

    fn push(&mut self, row: &CurveRow) {
        if self.error.is_some() {
            return;
        }
        let r = self.out.serialize(row).and_then(|_| self.out.flush().map_err(Into::into));
        if let Err(e) = r {
            self.error = Some(format!("writing curve: {e}"));
        }
    }
}

fn write_checkpoint(dir: &Path, name: &str, store: &ParamStore) -> Result<(), CliError> {
    let path = dir.join(name);
    std::fs::write(&path, store.to_checkpoint()).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

pub fn run(flags: &Overrides) -> Result<bool, CliError> {
    let mut cfg = resolve(None, flags)?;
    cfg.run.command = Some("train".into());
    let name = format!("train-{}-{}-s{}", cfg.env.name(), cfg.agent.variant, cfg.agent.seed);
    let dir = run_dir(&cfg, &name);
    cfg.run.out = Some(dir.clone());
    write_manifest(&dir, &cfg)?;
    let mut curve = CurveWriter::create(&dir.join(CURVE_FILE))?;
    let result = train(&cfg.env, &cfg.agent, |row| {
        curve.push(row);
        eprintln!(
            "step {:>8}  episodes {:>6}  success {:.3}  return {:+.3}  entropy {:.3}",
            row.step, row.episodes, row.success_rate, row.mean_return, row.entropy
        );
    });
    if let Some(e) = curve.error {
        return Err(CliError::Runtime(e));
    }
    let out = result.map_err(|e| CliError::Runtime(format!("training failed: {e} (curve so far in {})", dir.display())))?;
    write_checkpoint(&dir, "init.ckpt", &out.initial)?;
    if out.updates > 0 {
        write_checkpoint(&dir, "final.ckpt", &out.store)?;
        write_checkpoint(&dir, "best.ckpt", &out.best)?;
    }
    let last = out.curve.last().map_or("none".to_string(), |r| format!("{:.3}", r.success_rate));
    println!(
        "trained {} on {}: {} env steps, {} updates, final eval success {last}, best {:.3}; run in {}",
        cfg.agent.variant,
        cfg.env.name(),
        out.env_steps,
        out.updates,
        out.best_success,
        dir.display()
    );
    Ok(true)
}
