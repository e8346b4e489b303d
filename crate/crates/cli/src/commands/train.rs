use std::path::Path;

use dlmbir_core::data_sim::{extract_patches, hu_normalize, read_volume, PatchSet, PatchSpec};
use dlmbir_core::network::{build_network, save_checkpoint, CheckpointMeta, NetworkVariant};
use dlmbir_core::tensor::{Precision, Scalar};
use dlmbir_core::trainer::{patch_layout, train_from, write_history};

use super::generate::{derive_seed, MANIFEST};
use super::{create_dir, kv_text, read_kv, resolve, write_text};
use crate::config::Config;
use crate::error::{as_mismatch, CliError, CliResult};
use crate::{overrides, TrainArgs};

pub const FINAL_CHECKPOINT: &str = "model.ckpt";
pub const HISTORY: &str = "history.csv";
pub const TRAIN_MANIFEST: &str = "train_manifest.txt";

pub fn run(args: &TrainArgs) -> CliResult<()> {
    let mut pairs = args.model.pairs();
    pairs.extend([
        ("data", args.data.as_ref().map(|p| p.display().to_string())),
        ("shards", args.shards.map(|v| v.to_string())),
        ("epochs", args.epochs.map(|v| v.to_string())),
        ("batch_size", args.batch_size.map(|v| v.to_string())),
        ("learning_rate", args.learning_rate.map(|v| v.to_string())),
        ("patches", args.patches.map(|v| v.to_string())),
        ("patch_size", args.patch_size.map(|v| v.to_string())),
        ("shard_bn", args.shard_bn.clone()),
        ("checkpoint_every", args.checkpoint_every.map(|v| v.to_string())),
    ]);
    let flags = overrides(&pairs, &args.common)?;
    let cfg = Config::resolve(args.common.config.as_deref(), &flags)?;
    let variant = cfg.network_variant()?;
    cfg.training_config().validate()?;
    match cfg.precision {
        Precision::F32 => train_typed::<f32>(&cfg, variant),
        Precision::F64 => train_typed::<f64>(&cfg, variant),
    }
}

/// Volume ids trained on: `train_volumes` if set, else all but the last.
fn training_volumes(cfg: &Config, available: usize) -> CliResult<Vec<usize>> {
    let ids = match &cfg.train_volumes {
        Some(ids) => ids.clone(),
        None if available > 1 => (0..available - 1).collect(),
        None => vec![0],
    };
    if ids.is_empty() {
        return Err(CliError::Failure("`train_volumes` is empty".into()));
    }
    if let Some(bad) = ids.iter().find(|&&i| i >= available) {
        return Err(CliError::MissingInput(format!(
            "training volume {bad} not in the dataset ({available} volumes)"
        )));
    }
    Ok(ids)
}

fn load_patches<T: Scalar>(cfg: &Config, variant: &NetworkVariant, data: &Path) -> CliResult<(PatchSet<T>, Vec<usize>)> {
    let manifest = read_kv(&data.join(MANIFEST))?;
    let available = (0..).take_while(|i| manifest.contains_key(&format!("volume.{i}.fbp"))).count();
    if available == 0 {
        return Err(CliError::MissingInput(format!("{} lists no volumes", data.join(MANIFEST).display())));
    }
    let ids = training_volumes(cfg, available)?;
    let (window, full_window_target) = patch_layout(variant);
    let per = cfg.patches / ids.len();
    let mut sets = Vec::with_capacity(ids.len());
    for (k, &vid) in ids.iter().enumerate() {
        let entry = |role: &str| -> CliResult<std::path::PathBuf> {
            let key = format!("volume.{vid}.{role}");
            manifest
                .get(&key)
                .map(|p| resolve(data, p))
                .ok_or_else(|| CliError::MissingInput(format!("manifest has no `{key}`")))
        };
        let (fbp_path, gt_path) = (entry("fbp")?, entry("gt")?);
        let (y, _) = read_volume(&fbp_path).map_err(CliError::from)?;
        let (x, _) = read_volume(&gt_path).map_err(CliError::from)?;
        y.same_dims(&x)
            .map_err(|e| CliError::Mismatch(format!("{} vs {}: {e}", fbp_path.display(), gt_path.display())))?;
        let y = hu_normalize::<T>(&y, cfg.hu_window)?.tensor;
        let x = hu_normalize::<T>(&x, cfg.hu_window)?.tensor;
        let count = if k == 0 { cfg.patches - per * (ids.len() - 1) } else { per };
        let spec = PatchSpec {
            patch_size: cfg.patch_size,
            window,
            count,
            augment: cfg.augment,
            seed: derive_seed(cfg.seed, 1000 + vid as u64),
            full_window_target,
            volume_id: vid as u32,
        };
        sets.push(extract_patches(&y, &x, &spec).map_err(as_mismatch)?);
    }
    Ok((PatchSet::concat(&sets)?, ids))
}

fn train_typed<T: Scalar>(cfg: &Config, variant: NetworkVariant) -> CliResult<()> {
    let data = cfg
        .data
        .clone()
        .ok_or_else(|| CliError::MissingInput("no dataset given; pass --data DIR".into()))?;
    let (set, ids) = load_patches::<T>(cfg, &variant, &data)?;
    eprintln!("{} training patches from volumes {ids:?}", set.len());

    create_dir(&cfg.out)?;
    let ckpt_dir = cfg.out.join("checkpoints");
    if cfg.checkpoint_every > 0 {
        create_dir(&ckpt_dir)?;
    }
    let extra: Vec<(String, String)> = cfg.pairs().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    let meta = |step: u64| CheckpointMeta {
        step,
        seed: cfg.seed,
        extra: extra.clone(),
    };

    let params = build_network::<T>(variant, cfg.seed)?;
    let tc = cfg.training_config();
    let outcome = train_from(&set, params, &tc, |step, p| {
        save_checkpoint(p, &meta(step), &ckpt_dir.join(format!("step-{step}.ckpt")))
    })?;
    for r in &outcome.history {
        println!(
            "epoch {} step {} train_loss {:.6e} val_loss {:.6e} val_psnr {:.3} dB",
            r.epoch, r.step, r.train_loss, r.val_loss, r.val_psnr_db
        );
    }
    let steps = outcome.history.last().map_or(0, |r| r.step);
    let model = cfg.out.join(FINAL_CHECKPOINT);
    save_checkpoint(&outcome.params, &meta(steps), &model)?;
    write_history(&cfg.out.join(HISTORY), &outcome.history)?;

    let mut manifest = extra;
    manifest.extend([
        ("checkpoint".to_string(), FINAL_CHECKPOINT.to_string()),
        ("history".to_string(), HISTORY.to_string()),
        ("kind".to_string(), variant.kind.type_name().to_string()),
        ("training_volumes".to_string(), ids.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" ")),
        ("patch_count".to_string(), set.len().to_string()),
        ("train_samples".to_string(), outcome.train_ids.len().to_string()),
        ("val_samples".to_string(), outcome.val_ids.len().to_string()),
        ("steps".to_string(), steps.to_string()),
        ("parameters".to_string(), outcome.params.parameter_count().to_string()),
    ]);
    write_text(&cfg.out.join(TRAIN_MANIFEST), &kv_text(&manifest))?;
    println!("wrote {}", model.display());
    Ok(())
}
