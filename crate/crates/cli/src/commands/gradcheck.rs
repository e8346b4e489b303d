use dlmbir_core::gradcheck::{run_gradcheck, GradcheckOptions, GRADCHECK_TOLERANCE};

use crate::config::Config;
use crate::error::{CliError, CliResult};
use crate::{overrides, GradcheckArgs};

pub fn run(args: &GradcheckArgs) -> CliResult<()> {
    let flags = overrides(&[], &args.common)?;
    let cfg = Config::resolve(args.common.config.as_deref(), &flags)?;
    let rows = run_gradcheck(GradcheckOptions {
        seed: cfg.seed,
        corrupt_backward: args.corrupt_backward,
    })?;

    println!("{:<12} {:>8} {:>14}  result", "layer", "coords", "max_rel_error");
    for r in &rows {
        println!(
            "{:<12} {:>8} {:>14.3e}  {}",
            r.layer,
            r.coordinates,
            r.max_rel_error,
            if r.passed() { "pass" } else { "FAIL" }
        );
    }
    let failed: Vec<_> = rows.iter().filter(|r| !r.passed()).collect();
    if failed.is_empty() {
        println!("all {} checks below {GRADCHECK_TOLERANCE:e}", rows.len());
        return Ok(());
    }
    let worst = failed
        .iter()
        .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
        .expect("at least one failure");
    let detail = match &worst.worst {
        Some(w) => format!(
            "{} {}[{}]: analytic {:.9e} vs numeric {:.9e} (relative error {:.3e})",
            worst.layer, w.tensor, w.index, w.analytic, w.numeric, worst.max_rel_error
        ),
        None => format!("{} (relative error {:.3e})", worst.layer, worst.max_rel_error),
    };
    Err(CliError::Failure(format!("gradient check failed at {detail}")))
}
