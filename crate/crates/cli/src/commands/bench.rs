use std::path::Path;

use dlmbir_core::data_sim::{generate_phantom_volume, hu_normalize, read_volume};
use dlmbir_core::inference::time_inference;
use dlmbir_core::network::{build_network, load_checkpoint, peek_checkpoint, NetworkVariant};
use dlmbir_core::tensor::{Precision, Scalar, Tensor};

use super::generate::derive_seed;
use super::{create_dir, write_text};
use crate::config::Config;
use crate::error::{as_mismatch, CliError, CliResult};
use crate::{overrides, BenchArgs};

pub const BENCH_HEADER: &str = "method,source,mean_s,min_s,repeats,status";

/// Timing slots in report order with their checkpoint file names.
pub const BENCH_FILES: [(&str, &str); 5] = [
    ("2D", "2d.ckpt"),
    ("2.5D(w=3)", "2.5d-w3.ckpt"),
    ("2.5D(w=5)", "2.5d-w5.ckpt"),
    ("2.5D(w=7)", "2.5d-w7.ckpt"),
    ("3D", "3d.ckpt"),
];

fn slot_variant(slot: usize) -> NetworkVariant {
    match slot {
        0 => NetworkVariant::two_d(),
        1..=3 => NetworkVariant::two_point_five_d(2 * slot + 1),
        _ => NetworkVariant::three_d(),
    }
}

struct Row {
    method: &'static str,
    source: String,
    timing: Option<(f64, f64)>,
    status: &'static str,
}

fn time_fresh<T: Scalar>(variant: NetworkVariant, seed: u64, y: &Tensor<f64>, repeats: usize) -> CliResult<(f64, f64)> {
    let params = build_network::<T>(variant, seed)?;
    let t = time_inference(&params, &y.cast::<T>(), repeats).map_err(as_mismatch)?;
    Ok((t.mean_s, t.min_s))
}

fn time_checkpoint<T: Scalar>(path: &Path, y: &Tensor<f64>, repeats: usize) -> CliResult<(f64, f64)> {
    let (params, _) = load_checkpoint::<T>(path)?;
    let t = time_inference(&params, &y.cast::<T>(), repeats).map_err(as_mismatch)?;
    Ok((t.mean_s, t.min_s))
}

pub fn run(args: &BenchArgs) -> CliResult<()> {
    let mut pairs = args.model.pairs();
    pairs.push(("dims", args.dims.clone()));
    pairs.push(("repeats", args.repeats.map(|v| v.to_string())));
    let flags = overrides(&pairs, &args.common)?;
    let cfg = Config::resolve(args.common.config.as_deref(), &flags)?;
    if args.checkpoints.is_none() && !args.init {
        return Err(CliError::Failure("pass --checkpoints DIR or --init".into()));
    }

    let (volume, label) = match &args.volume {
        Some(p) => (read_volume(p)?.0, p.display().to_string()),
        None => {
            let (_, v) = generate_phantom_volume(derive_seed(cfg.seed, 0), cfg.dims)?;
            (v, format!("phantom {:?}", cfg.dims))
        }
    };
    let y = hu_normalize::<f64>(&volume, cfg.hu_window)?.tensor;
    eprintln!("timing on {label}, {} repeats", cfg.repeats);

    let mut rows = Vec::with_capacity(BENCH_FILES.len());
    for (slot, (method, file)) in BENCH_FILES.iter().enumerate() {
        let row = if let Some(dir) = &args.checkpoints {
            let path = dir.join(file);
            if !path.exists() {
                eprintln!("warning: {} not found; skipping {method}", path.display());
                Row { method, source: path.display().to_string(), timing: None, status: "missing" }
            } else {
                let (variant, precision, _) = peek_checkpoint(&path)?;
                let want = slot_variant(slot);
                if (variant.kind, variant.window) != (want.kind, want.window) {
                    return Err(CliError::Mismatch(format!(
                        "{} holds a {} network, expected {method}",
                        path.display(),
                        variant.label()
                    )));
                }
                let timing = match precision {
                    Precision::F32 => time_checkpoint::<f32>(&path, &y, cfg.repeats)?,
                    Precision::F64 => time_checkpoint::<f64>(&path, &y, cfg.repeats)?,
                };
                Row { method, source: path.display().to_string(), timing: Some(timing), status: "ok" }
            }
        } else {
            let variant = slot_variant(slot).with_size(cfg.depth, cfg.width);
            let timing = match cfg.precision {
                Precision::F32 => time_fresh::<f32>(variant, cfg.seed, &y, cfg.repeats)?,
                Precision::F64 => time_fresh::<f64>(variant, cfg.seed, &y, cfg.repeats)?,
            };
            Row { method, source: "init".into(), timing: Some(timing), status: "ok" }
        };
        match row.timing {
            Some((mean, min)) => println!("{:<10} mean {mean:>9.4} s  min {min:>9.4} s", row.method),
            None => println!("{:<10} {}", row.method, row.status),
        }
        rows.push(row);
    }

    let mut csv = format!("{BENCH_HEADER}\n");
    for r in &rows {
        let (mean, min) = r
            .timing
            .map(|(a, b)| (format!("{a:.6}"), format!("{b:.6}")))
            .unwrap_or_default();
        csv.push_str(&format!(
            "{},{},{mean},{min},{},{}\n",
            r.method,
            r.source.replace(',', "_"),
            cfg.repeats,
            r.status
        ));
    }
    create_dir(&cfg.out)?;
    let path = cfg.out.join("bench.csv");
    write_text(&path, &csv)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use dlmbir_core::network::VariantKind;

    #[test]
    fn slots_follow_report_order() {
        let kinds: Vec<_> = (0..5).map(|s| (slot_variant(s).kind, slot_variant(s).window)).collect();
        assert_eq!(
            kinds,
            vec![
                (VariantKind::TwoD, 1),
                (VariantKind::TwoPointFiveD, 3),
                (VariantKind::TwoPointFiveD, 5),
                (VariantKind::TwoPointFiveD, 7),
                (VariantKind::ThreeD, 7),
            ]
        );
    }
}
