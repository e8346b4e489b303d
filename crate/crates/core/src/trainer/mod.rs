//! Residual-learning training loop: loss, Adam, sharded gradient averaging
//! and the epoch driver with its loss history.

mod adam;
mod loss;
mod shard;

pub use adam::{adam_step, adam_update, AdamState};
pub use loss::{loss, loss_and_grad};
pub use shard::{shard_gradients, ShardOutcome};

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data_sim::{HuWindow, PatchSet, DEFAULT_HU_WINDOW};
use crate::error::{Error, Result};
use crate::eval::{psnr, DEFAULT_MASK_HU};
use crate::network::{build_network, forward_batch, NetworkParams, NetworkVariant, VariantKind};
use crate::tensor::{BnMode, Scalar, Tensor};

/// How batch normalization behaves inside each shard during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShardBn {
    /// Shard-local batch statistics; running averages are the shard mean.
    PerShard,
    /// Running statistics only (they stay at their initial values).
    Frozen,
}

impl ShardBn {
    pub fn mode(self) -> BnMode {
        match self {
            ShardBn::PerShard => BnMode::Train,
            ShardBn::Frozen => BnMode::Infer,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ShardBn::PerShard => "per-shard",
            ShardBn::Frozen => "frozen",
        }
    }
}

impl fmt::Display for ShardBn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ShardBn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-shard" => Ok(ShardBn::PerShard),
            "frozen" => Ok(ShardBn::Frozen),
            _ => Err(Error::invalid(format!("unknown batch-norm mode `{s}` (per-shard|frozen)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    /// Samples per optimizer step, split evenly across `shards`.
    pub batch_size: usize,
    pub shards: usize,
    pub epochs: usize,
    pub seed: u64,
    pub val_fraction: f64,
    pub shard_bn: ShardBn,
    /// Call the checkpoint hook every this many steps (0 disables).
    pub checkpoint_every: usize,
    /// HU window the patches were normalized with; used for validation PSNR.
    pub hu_window: HuWindow,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            batch_size: 32,
            shards: 1,
            epochs: 10,
            seed: 0,
            val_fraction: 0.2,
            shard_bn: ShardBn::PerShard,
            checkpoint_every: 0,
            hu_window: DEFAULT_HU_WINDOW,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::invalid("adam betas must lie in [0, 1)"));
        }
        if !(self.adam_epsilon > 0.0) {
            return Err(Error::invalid("adam epsilon must be positive"));
        }
        if self.shards == 0 || self.batch_size == 0 || self.batch_size % self.shards != 0 {
            return Err(Error::invalid(format!(
                "batch size {} must be a positive multiple of the shard count {}",
                self.batch_size, self.shards
            )));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::invalid(format!(
                "validation fraction must lie in (0, 1), got {}",
                self.val_fraction
            )));
        }
        Ok(())
    }
}

/// One row of training history, written at the end of every epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: u64,
    pub epoch: usize,
    /// Mean mini-batch loss over the epoch.
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_psnr_db: f64,
    pub wall_time_s: f64,
}

pub const HISTORY_HEADER: &str = "step,epoch,train_loss,val_loss,val_psnr_db,wall_time_s";

pub fn history_csv(records: &[LossRecord]) -> String {
    let mut s = format!("{HISTORY_HEADER}\n");
    for r in records {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.step, r.epoch, r.train_loss, r.val_loss, r.val_psnr_db, r.wall_time_s
        ));
    }
    s
}

pub fn write_history(path: &Path, records: &[LossRecord]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, history_csv(records)).map_err(|e| Error::io(path, e))
}

pub fn parse_history(text: &str) -> Result<Vec<LossRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(HISTORY_HEADER) {
        return Err(Error::invalid("history CSV header mismatch"));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::invalid(format!("bad history row `{line}`"));
            if f.len() != 6 {
                return Err(bad());
            }
            let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad());
            Ok(LossRecord {
                step: f[0].parse().map_err(|_| bad())?,
                epoch: f[1].parse().map_err(|_| bad())?,
                train_loss: num(2)?,
                val_loss: num(3)?,
                val_psnr_db: num(4)?,
                wall_time_s: num(5)?,
            })
        })
        .collect()
}

/// Network-shaped `(inputs, targets)` for a patch set: 3D variants gain a
/// unit channel axis, and targets follow the variant's output shape.
pub fn network_tensors<T: Scalar>(
    variant: &NetworkVariant,
    set: &PatchSet<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    check_patches(variant, set)?;
    let (n, p) = (set.len(), set.patch_size());
    let mut ishape = vec![n];
    ishape.extend(variant.input_shape(p, p));
    let mut tshape = vec![n];
    tshape.extend(variant.output_shape(p, p));
    Ok((set.inputs.clone().reshape(&ishape)?, set.targets.clone().reshape(&tshape)?))
}

fn check_patches<T: Scalar>(variant: &NetworkVariant, set: &PatchSet<T>) -> Result<()> {
    variant.validate()?;
    if set.is_empty() {
        return Err(Error::invalid("dataset is empty"));
    }
    if set.window() != variant.window {
        return Err(Error::invalid(format!(
            "patches carry {} slices but the {} network expects {}",
            set.window(),
            variant.label(),
            variant.window
        )));
    }
    let want = variant.output_slices();
    if set.target_slices() != want {
        return Err(Error::invalid(format!(
            "patch targets carry {} slices but the {} network emits {want}",
            set.target_slices(),
            variant.label()
        )));
    }
    Ok(())
}

/// Loss and masked PSNR of `params` on `set`, evaluated in batches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub psnr_db: f64,
}

/// Evaluates in `mode` without touching running statistics.
///
/// PSNR compares x̂ = y − R against x = y − ν on the slices the residual
/// covers, masked on x by the standard HU range. With an empty mask every
/// voxel counts.
pub fn evaluate<T: Scalar>(
    params: &NetworkParams<T>,
    set: &PatchSet<T>,
    mode: BnMode,
    batch_size: usize,
    window: HuWindow,
) -> Result<Evaluation> {
    let (inputs, targets) = network_tensors(&params.variant, set)?;
    let n = set.len();
    let p = set.patch_size();
    let plane = p * p;
    let w = set.window();
    let ts = set.target_slices();
    let (lo, hi) = (
        (DEFAULT_MASK_HU.0 - window.lo) / window.span(),
        (DEFAULT_MASK_HU.1 - window.lo) / window.span(),
    );
    let batch_size = batch_size.max(1);
    let (mut sq_loss, mut sq_mask, mut sq_all) = (0.0, 0.0, 0.0);
    let (mut n_mask, mut n_all) = (0usize, 0usize);
    let in_per = inputs.len() / n;
    let out_per = targets.len() / n;
    for start in (0..n).step_by(batch_size) {
        let m = batch_size.min(n - start);
        let mut ishape = inputs.shape().to_vec();
        ishape[0] = m;
        let x = Tensor::new(ishape, inputs.data()[start * in_per..(start + m) * in_per].to_vec())?;
        let r = forward_batch(params, &x, mode)?;
        let nu = &targets.data()[start * out_per..(start + m) * out_per];
        for s in 0..m {
            let y = &inputs.data()[(start + s) * in_per..(start + s + 1) * in_per];
            // slices of y that line up with the residual
            let first = if ts == w { 0 } else { w / 2 };
            for k in 0..ts {
                for i in 0..plane {
                    let yv = y[(first + k) * plane + i].as_f64();
                    let rv = r.data()[s * out_per + k * plane + i].as_f64();
                    let nv = nu[s * out_per + k * plane + i].as_f64();
                    let d = rv - nv;
                    sq_loss += d * d;
                    let x_ref = yv - nv;
                    sq_all += d * d;
                    n_all += 1;
                    if (lo..=hi).contains(&x_ref) {
                        sq_mask += d * d;
                        n_mask += 1;
                    }
                }
            }
        }
    }
    let mse = if n_mask > 0 { sq_mask / n_mask as f64 } else { sq_all / n_all as f64 };
    Ok(Evaluation {
        loss: sq_loss / (2 * n) as f64,
        psnr_db: psnr(mse),
    })
}

/// Deterministic 80/20-style split: a seeded permutation, the last
/// `round(N · val_fraction)` samples (at least one) become validation.
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::invalid(format!("need at least 2 samples to split, got {n}")));
    }
    let mut ids: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let n_val = ((n as f64 * val_fraction).round() as usize).clamp(1, n - 1);
    let val = ids.split_off(n - n_val);
    Ok((ids, val))
}

fn epoch_order(train: &[usize], seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    let mut order = train.to_vec();
    order.shuffle(&mut rng);
    order
}

/// Everything [`train_from`] produces.
#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub params: NetworkParams<T>,
    pub history: Vec<LossRecord>,
    pub adam: AdamState<T>,
    pub train_ids: Vec<usize>,
    pub val_ids: Vec<usize>,
}

/// Builds a fresh network from `config.seed` and trains it.
pub fn train<T: Scalar>(
    dataset: &PatchSet<T>,
    variant: NetworkVariant,
    config: &TrainingConfig,
) -> Result<TrainOutcome<T>> {
    check_patches(&variant, dataset)?;
    let params = build_network(variant, config.seed)?;
    train_from(dataset, params, config, |_, _| Ok(()))
}

/// Trains `params` on `dataset`. `on_checkpoint(step, params)` runs every
/// `config.checkpoint_every` steps.
///
/// Each epoch visits a seeded permutation of the training split in full
/// mini-batches; a trailing partial batch is skipped. BN parameters are
/// returned in inference mode.
pub fn train_from<T, F>(
    dataset: &PatchSet<T>,
    mut params: NetworkParams<T>,
    config: &TrainingConfig,
    mut on_checkpoint: F,
) -> Result<TrainOutcome<T>>
where
    T: Scalar,
    F: FnMut(u64, &NetworkParams<T>) -> Result<()>,
{
    config.validate()?;
    check_patches(&params.variant, dataset)?;
    let (train_ids, val_ids) = split_indices(dataset.len(), config.val_fraction, config.seed)?;
    if config.epochs > 0 && train_ids.len() < config.batch_size {
        return Err(Error::invalid(format!(
            "training split holds {} samples, fewer than one batch of {}",
            train_ids.len(),
            config.batch_size
        )));
    }
    let val_set = dataset.select(&val_ids)?;
    let mode = config.shard_bn.mode();
    let mut adam = AdamState::new(&params);
    let mut history = Vec::with_capacity(config.epochs);
    let start = Instant::now();
    let mut step = 0u64;

    for epoch in 0..config.epochs {
        let order = epoch_order(&train_ids, config.seed, epoch);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for ids in order.chunks_exact(config.batch_size) {
            let batch = dataset.select(ids)?;
            let (x, v) = network_tensors(&params.variant, &batch)?;
            let out = shard_gradients(&params, &x, &v, config.shards, mode)?;
            adam_step(&mut params, &out.grads, &mut adam, config)?;
            for (layer, bn) in params.layers.iter_mut().zip(out.bn_states) {
                if let (Some(dst), Some(src)) = (layer.bn.as_mut(), bn) {
                    dst.running_mean = src.running_mean;
                    dst.running_var = src.running_var;
                }
            }
            epoch_loss += out.loss;
            batches += 1;
            step += 1;
            if config.checkpoint_every > 0 && step % config.checkpoint_every as u64 == 0 {
                on_checkpoint(step, &params)?;
            }
        }
        let val = evaluate(&params, &val_set, BnMode::Infer, config.batch_size, config.hu_window)?;
        history.push(LossRecord {
            step,
            epoch: epoch + 1,
            train_loss: epoch_loss / batches as f64,
            val_loss: val.loss,
            val_psnr_db: val.psnr_db,
            wall_time_s: start.elapsed().as_secs_f64(),
        });
    }
    params.set_bn_mode(BnMode::Infer);
    Ok(TrainOutcome {
        params,
        history,
        adam,
        train_ids,
        val_ids,
    })
}

/// Patch window and whether targets span it, as `variant` expects.
pub fn patch_layout(variant: &NetworkVariant) -> (usize, bool) {
    (variant.window, variant.kind == VariantKind::ThreeD)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_sim::{extract_patches, generate_phantom_volume, hu_normalize, make_pair, PatchSpec};

    fn dataset(window: usize, full: bool, count: usize, p: usize) -> PatchSet<f64> {
        let (_, gt) = generate_phantom_volume(3, [8, 48, 48]).unwrap();
        let (y, x) = make_pair(&gt, 24, 0.5, 1).unwrap();
        let y = hu_normalize::<f64>(&y, DEFAULT_HU_WINDOW).unwrap().tensor;
        let x = hu_normalize::<f64>(&x, DEFAULT_HU_WINDOW).unwrap().tensor;
        let spec = PatchSpec {
            patch_size: p,
            window,
            count,
            augment: true,
            seed: 4,
            full_window_target: full,
            volume_id: 0,
        };
        extract_patches(&y, &x, &spec).unwrap()
    }

    fn small_cfg() -> TrainingConfig {
        TrainingConfig {
            batch_size: 8,
            epochs: 2,
            seed: 9,
            ..TrainingConfig::default()
        }
    }

    #[test]
    fn zero_epochs_returns_initial_params() {
        let set = dataset(1, false, 40, 8);
        let v = NetworkVariant::two_d().with_size(3, 4);
        let cfg = TrainingConfig { epochs: 0, ..small_cfg() };
        let out = train(&set, v, &cfg).unwrap();
        let mut init = build_network::<f64>(v, cfg.seed).unwrap();
        init.set_bn_mode(BnMode::Infer);
        assert_eq!(out.params, init);
        assert!(out.history.is_empty());
    }

    #[test]
    fn deterministic_history() {
        let set = dataset(3, false, 48, 8);
        let v = NetworkVariant::two_point_five_d(3).with_size(4, 4);
        for shards in [1, 2] {
            let cfg = TrainingConfig { shards, ..small_cfg() };
            let a = train(&set, v, &cfg).unwrap();
            let b = train(&set, v, &cfg).unwrap();
            assert_eq!(a.params, b.params);
            for (x, y) in a.history.iter().zip(&b.history) {
                assert_eq!(x.train_loss.to_bits(), y.train_loss.to_bits());
                assert_eq!(x.val_loss.to_bits(), y.val_loss.to_bits());
            }
        }
    }

    #[test]
    fn mismatched_patches_rejected_before_training() {
        let set = dataset(3, false, 20, 8);
        let v = NetworkVariant::two_d().with_size(3, 4);
        assert!(matches!(train(&set, v, &small_cfg()), Err(Error::InvalidArgument(_))));
        let v3 = NetworkVariant::three_d().with_size(3, 2);
        let set3 = dataset(7, false, 20, 8);
        assert!(train(&set3, v3, &small_cfg()).is_err());
    }

    #[test]
    fn three_d_trains_on_full_window_targets() {
        let set = dataset(7, true, 20, 6);
        let v = NetworkVariant::three_d().with_size(3, 2);
        let out = train(&set, v, &TrainingConfig { epochs: 1, ..small_cfg() }).unwrap();
        assert_eq!(out.history.len(), 1);
        assert!(out.history[0].train_loss.is_finite());
    }

    #[test]
    fn split_is_disjoint_and_covering() {
        let (t, v) = split_indices(50, 0.2, 3).unwrap();
        assert_eq!(v.len(), 10);
        let mut all: Vec<usize> = t.iter().chain(&v).copied().collect();
        all.sort();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
        assert!(split_indices(1, 0.2, 0).is_err());
    }

    #[test]
    fn config_validation() {
        let bad = TrainingConfig { batch_size: 6, shards: 4, ..TrainingConfig::default() };
        assert!(bad.validate().is_err());
        let bad = TrainingConfig { val_fraction: 1.0, ..TrainingConfig::default() };
        assert!(bad.validate().is_err());
        assert!(TrainingConfig::default().validate().is_ok());
    }

    #[test]
    fn checkpoint_hook_fires_on_schedule() {
        let set = dataset(1, false, 40, 8);
        let v = NetworkVariant::two_d().with_size(3, 4);
        let cfg = TrainingConfig { checkpoint_every: 2, ..small_cfg() };
        let mut steps = Vec::new();
        let params = build_network(v, cfg.seed).unwrap();
        let out = train_from(&set, params, &cfg, |s, _| {
            steps.push(s);
            Ok(())
        })
        .unwrap();
        // 32 training samples / batch 8 = 4 steps per epoch
        assert_eq!(out.history.last().unwrap().step, 8);
        assert_eq!(steps, vec![2, 4, 6, 8]);
    }

    #[test]
    fn history_csv_round_trip() {
        let recs = vec![
            LossRecord { step: 4, epoch: 1, train_loss: 0.125, val_loss: 0.1, val_psnr_db: 31.5, wall_time_s: 0.25 },
            LossRecord { step: 8, epoch: 2, train_loss: 1e-3 / 3.0, val_loss: 0.0, val_psnr_db: f64::INFINITY, wall_time_s: 1.0 },
        ];
        let text = history_csv(&recs);
        assert!(text.starts_with("step,epoch,train_loss,val_loss,val_psnr_db,wall_time_s\n"));
        assert_eq!(parse_history(&text).unwrap(), recs);
    }

    #[test]
    fn epoch_end_loss_mostly_decreases() {
        let set = dataset(1, false, 200, 10);
        let v = NetworkVariant::two_d().with_size(4, 8);
        // 160 training samples in batches of 16: the hook fires at epoch ends
        let cfg = TrainingConfig { batch_size: 16, epochs: 3, checkpoint_every: 10, ..small_cfg() };
        let (t, _) = split_indices(set.len(), cfg.val_fraction, cfg.seed).unwrap();
        let train_set = set.select(&t).unwrap();
        let params = build_network::<f64>(v, cfg.seed).unwrap();
        // batch statistics over the whole training split
        let n = train_set.len();
        let mut losses = vec![evaluate(&params, &train_set, BnMode::Train, n, DEFAULT_HU_WINDOW).unwrap().loss];
        train_from(&set, params, &cfg, |_, p| {
            losses.push(evaluate(p, &train_set, BnMode::Train, n, DEFAULT_HU_WINDOW)?.loss);
            Ok(())
        })
        .unwrap();
        assert_eq!(losses.len(), 4);
        let regressions = losses.windows(2).filter(|w| w[1] > w[0]).count();
        let worst = losses.windows(2).map(|w| w[1] / w[0]).fold(0.0, f64::max);
        assert!(regressions <= 1 && worst <= 1.05, "{losses:?}");
    }
}
