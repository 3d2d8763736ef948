use equipomdp::agent::{a2c_gradient_check, equivariance_suite, EQUIVARIANCE_TOL, GRADCHECK_TOL};
use equipomdp::autodiff::primitive_gradient_errors;
use equipomdp::envs::{export_pomdp, EnvError};
use equipomdp::pomdp::{check_invariance, verify_lemma1, verify_theorem1, Pomdp, GroupActionBinding};

use crate::config::{resolve, Overrides, RunConfig};
use crate::{CliError, Suite};

fn verdict(passed: bool) -> &'static str {
    if passed {
        "PASS"
    } else {
        "FAIL"
    }
}

/// Table exports only exist for small instances; asking for a larger one is a
/// configuration problem rather than a runtime failure.
fn export(cfg: &RunConfig) -> Result<(Pomdp, GroupActionBinding), CliError> {
    export_pomdp(&cfg.env, cfg.pomdp.discount).map_err(|e| match e {
        EnvError::Config(_) => CliError::Usage(e.to_string()),
        other => CliError::runtime(other),
    })
}

pub fn run(suite: Suite, flags: &Overrides) -> Result<bool, CliError> {
    let cfg = resolve(None, flags)?;
    let passed = match suite {
        Suite::Equivariance => {
            let v = &cfg.verify;
            let report = equivariance_suite(
                &cfg.env,
                &cfg.agent.network,
                cfg.agent.variant,
                cfg.agent.lstm_init,
                v.networks,
                v.histories,
                v.max_len,
                cfg.agent.seed,
            )
            .map_err(CliError::runtime)?;
            let passed = report.passed(EQUIVARIANCE_TOL);
            println!("{report}");
            println!("equivariance: {} (tolerance {EQUIVARIANCE_TOL:e})", verdict(passed));
            passed
        }
        Suite::Invariance => {
            let (pomdp, binding) = export(&cfg)?;
            let report = check_invariance(&pomdp, &binding).map_err(CliError::runtime)?;
            println!("{}", report.summary_line());
            for v in report.violations.iter().take(10) {
                println!("  {v}");
            }
            println!("invariance: {}", verdict(report.passed()));
            report.passed()
        }
        Suite::Lemma1 => {
            let (pomdp, binding) = export(&cfg)?;
            let report = verify_lemma1(&pomdp, &binding, cfg.pomdp.depth, cfg.pomdp.budget).map_err(CliError::runtime)?;
            print!("{report}");
            println!("lemma1: {}", verdict(report.passed()));
            report.passed()
        }
        Suite::Theorem1 => {
            let (pomdp, binding) = export(&cfg)?;
            let report = verify_theorem1(&pomdp, &binding, cfg.pomdp.horizon, cfg.pomdp.budget).map_err(CliError::runtime)?;
            print!("{report}");
            println!("theorem1: {}", verdict(report.passed()));
            report.passed()
        }
        Suite::Gradcheck => {
            let mut passed = true;
            for (name, err) in primitive_gradient_errors().map_err(CliError::runtime)? {
                passed &= err < GRADCHECK_TOL;
                println!("{name:<24} relative error {err:.3e}");
            }
            let err = a2c_gradient_check(&cfg.env, cfg.agent.variant, cfg.agent.lstm_init, 3, 3, cfg.agent.seed)
                .map_err(CliError::runtime)?;
            passed &= err < GRADCHECK_TOL;
            println!("{:<24} relative error {err:.3e}", format!("a2c-loss ({})", cfg.agent.variant));
            println!("gradcheck: {} (tolerance {GRADCHECK_TOL:e})", verdict(passed));
            passed
        }
    };
    Ok(passed)
}
