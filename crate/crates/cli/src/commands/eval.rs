use std::path::{Path, PathBuf};

use dlmbir_core::data_sim::{read_volume, VolumeHU};
use dlmbir_core::eval::{emit_report, per_slice_report, Canvas};

use super::{create_dir, parse_bool_flag};
use crate::config::Config;
use crate::error::{CliError, CliResult};
use crate::{overrides, EvalArgs};

fn load(path: &Path) -> CliResult<VolumeHU> {
    Ok(read_volume(path)?.0)
}

fn parse_method(spec: &str) -> CliResult<(String, PathBuf)> {
    match spec.split_once('=') {
        Some((label, path)) if !label.trim().is_empty() && !path.trim().is_empty() => {
            Ok((label.trim().to_string(), PathBuf::from(path.trim())))
        }
        _ => Err(CliError::Failure(format!("--method expects LABEL=PATH, got `{spec}`"))),
    }
}

pub fn run(args: &EvalArgs) -> CliResult<()> {
    let flags = overrides(&[("plots", args.plots.clone())], &args.common)?;
    if let Some(p) = &args.plots {
        parse_bool_flag("--plots", p)?;
    }
    let cfg = Config::resolve(args.common.config.as_deref(), &flags)?;
    let methods = args.methods.iter().map(|m| parse_method(m)).collect::<CliResult<Vec<_>>>()?;

    let reference = load(&args.reference)?;
    let fbp = load(&args.fbp)?;
    let mut volumes = vec![("FBP".to_string(), args.fbp.clone(), fbp.clone())];
    for (label, path) in methods {
        let v = load(&path)?;
        volumes.push((label, path, v));
    }
    for (_, path, v) in &volumes {
        reference.same_dims(v).map_err(|e| {
            CliError::Mismatch(format!("{} vs {}: {e}", path.display(), args.reference.display()))
        })?;
    }

    let labelled: Vec<(&str, &VolumeHU)> = volumes.iter().map(|(l, _, v)| (l.as_str(), v)).collect();
    let report = per_slice_report(&labelled, &reference, &fbp, cfg.hu_window)?;
    create_dir(&cfg.out)?;
    let canvas = cfg.plots.then_some(Canvas {
        width: cfg.plot_width,
        height: cfg.plot_height,
    });
    let written = emit_report(&report, &cfg.out, &args.dataset, canvas)?;

    println!(
        "{:<16} {:>10} {:>10} {:>10} {:>10}",
        "method", "mean_psnr", "vol_psnr", "max_gain", "mean_gain"
    );
    for s in &report.summary {
        println!(
            "{:<16} {:>10.3} {:>10.3} {:>10.3} {:>10.3}",
            s.method, s.mean_psnr_db, s.volume_psnr_db, s.max_improvement_db, s.mean_improvement_db
        );
    }
    for p in written {
        eprintln!("wrote {}", p.display());
    }
    Ok(())
}
