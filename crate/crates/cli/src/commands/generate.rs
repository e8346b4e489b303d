use dlmbir_core::data_sim::{generate_phantom_volume, make_pair, write_volume};

use super::{create_dir, kv_text, write_text};
use crate::config::Config;
use crate::error::CliResult;
use crate::{overrides, GenerateArgs};

pub const MANIFEST: &str = "manifest.txt";

/// Independent sub-seed number `stream` of `seed`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer over the combined value
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn run(args: &GenerateArgs) -> CliResult<()> {
    let flags = overrides(
        &[
            ("dims", args.dims.clone()),
            ("volumes", args.volumes.map(|v| v.to_string())),
            ("views", args.views.map(|v| v.to_string())),
            ("noise_sigma", args.noise_sigma.map(|v| v.to_string())),
        ],
        &args.common,
    )?;
    let cfg = Config::resolve(args.common.config.as_deref(), &flags)?;
    generate(&cfg)
}

pub fn generate(cfg: &Config) -> CliResult<()> {
    if cfg.volumes == 0 {
        return Err(crate::CliError::Failure("`volumes` must be at least 1".into()));
    }
    create_dir(&cfg.out)?;
    let mut manifest: Vec<(String, String)> = cfg.pairs().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    for i in 0..cfg.volumes {
        let phantom_seed = derive_seed(cfg.seed, 2 * i as u64);
        let noise_seed = derive_seed(cfg.seed, 2 * i as u64 + 1);
        let (_, mut gt) = generate_phantom_volume(phantom_seed, cfg.dims)?;
        gt.window = cfg.hu_window;
        let (fbp, gt) = make_pair(&gt, cfg.views, cfg.noise_sigma, noise_seed)?;
        let (gt_name, fbp_name) = (format!("vol{i}_gt.vol"), format!("vol{i}_fbp.vol"));
        let meta = |role: &str| {
            vec![
                ("role".to_string(), role.to_string()),
                ("volume".to_string(), i.to_string()),
                ("phantom_seed".to_string(), phantom_seed.to_string()),
                ("noise_seed".to_string(), noise_seed.to_string()),
                ("views".to_string(), cfg.views.to_string()),
                ("noise_sigma".to_string(), cfg.noise_sigma.to_string()),
            ]
        };
        write_volume(&cfg.out.join(&gt_name), &gt, &meta("reference"))?;
        write_volume(&cfg.out.join(&fbp_name), &fbp, &meta("fbp"))?;
        eprintln!("volume {i}: {gt_name} and {fbp_name}");
        manifest.push((format!("volume.{i}.gt"), gt_name));
        manifest.push((format!("volume.{i}.fbp"), fbp_name));
        manifest.push((format!("volume.{i}.phantom_seed"), phantom_seed.to_string()));
        manifest.push((format!("volume.{i}.noise_seed"), noise_seed.to_string()));
    }
    write_text(&cfg.out.join(MANIFEST), &kv_text(&manifest))?;
    println!("wrote {} volume pairs to {}", cfg.volumes, cfg.out.display());
    Ok(())
}
