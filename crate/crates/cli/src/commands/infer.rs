use std::path::Path;
use std::time::Instant;

use dlmbir_core::data_sim::{read_volume, write_volume, HuWindow, VolumeHU};
use dlmbir_core::inference::infer_volume_hu;
use dlmbir_core::network::{load_checkpoint, peek_checkpoint, CheckpointMeta};
use dlmbir_core::tensor::{Precision, Scalar};

use crate::config::Config;
use crate::error::{as_mismatch, CliError, CliResult};
use crate::{overrides, InferArgs};

/// Normalization window recorded in a checkpoint, falling back to `default`.
pub(crate) fn checkpoint_window(meta: &CheckpointMeta, default: HuWindow) -> CliResult<HuWindow> {
    let Some((_, v)) = meta.extra.iter().find(|(k, _)| k == "hu_window") else {
        return Ok(default);
    };
    let mut c = Config::default();
    c.set("hu_window", v)
        .map_err(|e| CliError::Failure(format!("checkpoint hu_window: {e}")))?;
    Ok(c.hu_window)
}

fn reconstruct<T: Scalar>(checkpoint: &Path, y: &VolumeHU, default: HuWindow) -> CliResult<VolumeHU> {
    let (params, meta) = load_checkpoint::<T>(checkpoint)?;
    let window = checkpoint_window(&meta, default)?;
    infer_volume_hu(&params, y, window).map_err(as_mismatch)
}

pub fn run(args: &InferArgs) -> CliResult<()> {
    let flags = overrides(&[], &args.common)?;
    let cfg = Config::resolve(args.common.config.as_deref(), &flags)?;
    let (variant, precision, _) = peek_checkpoint(&args.checkpoint)?;
    let (y, _) = read_volume(&args.input)?;

    let start = Instant::now();
    let x = match precision {
        Precision::F32 => reconstruct::<f32>(&args.checkpoint, &y, cfg.hu_window)?,
        Precision::F64 => reconstruct::<f64>(&args.checkpoint, &y, cfg.hu_window)?,
    };
    let elapsed = start.elapsed().as_secs_f64();

    let meta = vec![
        ("source".to_string(), args.input.display().to_string()),
        ("checkpoint".to_string(), args.checkpoint.display().to_string()),
        ("variant".to_string(), variant.label()),
    ];
    write_volume(&args.output, &x, &meta)?;
    println!("{}: {} slices, wall time {elapsed:.3} s", variant.label(), x.slices());
    Ok(())
}
