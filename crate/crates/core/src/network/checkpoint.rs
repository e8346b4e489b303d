use std::path::Path;

use super::{build_network, NetworkParams, NetworkVariant, VariantKind};
use crate::container::{self, Header};
use crate::error::{Error, Result};
use crate::tensor::{BnMode, Precision, Scalar, Tensor};

const MAGIC: &str = "dlmbir-checkpoint 1";

/// Bookkeeping stored alongside the parameters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CheckpointMeta {
    pub step: u64,
    pub seed: u64,
    /// Free-form `meta.<key>` entries (e.g. the effective run configuration).
    pub extra: Vec<(String, String)>,
}

fn shape_str(shape: &[usize]) -> String {
    shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

/// Writes the manifest and a little-endian blob in the parameters' own
/// precision: per layer weights, bias, then γ, β, running mean, running
/// variance for batch-normalized layers.
pub fn save_checkpoint<T: Scalar>(
    params: &NetworkParams<T>,
    meta: &CheckpointMeta,
    path: &Path,
) -> Result<()> {
    let v = &params.variant;
    let mut h = Header::default();
    h.push("kind", v.kind.type_name());
    h.push("window", v.window);
    h.push("depth", v.depth);
    h.push("width", v.width);
    h.push("precision", T::PRECISION);
    h.push("step", meta.step);
    h.push("seed", meta.seed);
    let bn0 = params.layers.iter().find_map(|l| l.bn.as_ref());
    if let Some(bn) = bn0 {
        h.push("bn_momentum", bn.momentum);
        h.push("bn_epsilon", bn.epsilon);
    }
    let mut blob = Vec::new();
    for (i, l) in params.layers.iter().enumerate() {
        h.push(
            format!("layer.{i}"),
            format!(
                "conv {} bias {} bn {}",
                shape_str(l.conv.weights.shape()),
                l.conv.bias.len(),
                if l.bn.is_some() { "yes" } else { "no" }
            ),
        );
        let mut tensors = vec![&l.conv.weights, &l.conv.bias];
        if let Some(bn) = &l.bn {
            tensors.extend([&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var]);
        }
        for t in tensors {
            for &x in t.data() {
                x.write_le(&mut blob);
            }
        }
    }
    for (k, val) in &meta.extra {
        h.push(format!("meta.{k}"), val);
    }
    container::write(path, MAGIC, &h, &blob)
}

fn parse_manifest(h: &Header, path: &Path) -> Result<(NetworkVariant, Precision, CheckpointMeta)> {
    let kind: VariantKind = h
        .get("kind")
        .ok_or_else(|| Error::CorruptHeader {
            path: path.into(),
            reason: "missing key `kind`".into(),
        })?
        .parse()
        .map_err(|e: Error| Error::CorruptHeader {
            path: path.into(),
            reason: e.to_string(),
        })?;
    let precision: Precision = h
        .get("precision")
        .unwrap_or("")
        .parse()
        .map_err(|reason| Error::CorruptHeader {
            path: path.into(),
            reason,
        })?;
    let variant = NetworkVariant {
        kind,
        window: h.require("window", path)?,
        depth: h.require("depth", path)?,
        width: h.require("width", path)?,
    };
    variant.validate().map_err(|e| Error::CorruptHeader {
        path: path.into(),
        reason: e.to_string(),
    })?;
    let meta = CheckpointMeta {
        step: h.require("step", path)?,
        seed: h.require("seed", path)?,
        extra: h
            .with_prefix("meta.")
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect(),
    };
    Ok((variant, precision, meta))
}

/// Reads only the manifest.
pub fn peek_checkpoint(path: &Path) -> Result<(NetworkVariant, Precision, CheckpointMeta)> {
    let (h, _) = container::read(path, MAGIC)?;
    parse_manifest(&h, path)
}

/// Loads a checkpoint written by [`save_checkpoint`]. Every declared layer
/// shape is checked against the variant and the blob length before any
/// parameter is materialized. Batch-norm layers come back in infer mode.
pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<(NetworkParams<T>, CheckpointMeta)> {
    let (h, blob) = container::read(path, MAGIC)?;
    let (variant, precision, meta) = parse_manifest(&h, path)?;
    let mismatch = |reason: String| Error::LayoutMismatch {
        path: path.into(),
        reason,
    };
    if precision != T::PRECISION {
        return Err(mismatch(format!(
            "checkpoint stores {precision}, requested {}",
            T::PRECISION
        )));
    }
    let declared: Vec<(usize, &str)> = {
        let mut v: Vec<(usize, &str)> = h
            .with_prefix("layer.")
            .map(|(k, val)| {
                k.parse::<usize>()
                    .map(|i| (i, val))
                    .map_err(|_| Error::CorruptHeader {
                        path: path.into(),
                        reason: format!("bad layer key `layer.{k}`"),
                    })
            })
            .collect::<Result<_>>()?;
        v.sort_by_key(|&(i, _)| i);
        v
    };
    if declared.len() != variant.depth {
        return Err(mismatch(format!(
            "manifest declares depth {} but lists {} layers",
            variant.depth,
            declared.len()
        )));
    }

    // the skeleton fixes every expected shape; its random values are overwritten
    let mut params = build_network::<T>(variant, 0)?;
    for ((i, text), (pos, layer)) in declared.iter().zip(params.layers.iter().enumerate()) {
        let expected = format!(
            "conv {} bias {} bn {}",
            shape_str(layer.conv.weights.shape()),
            layer.conv.bias.len(),
            if layer.bn.is_some() { "yes" } else { "no" }
        );
        if *i != pos || text.split_whitespace().collect::<Vec<_>>() != expected.split_whitespace().collect::<Vec<_>>() {
            return Err(mismatch(format!(
                "layer {pos}: manifest has `{text}`, variant {} implies `{expected}`",
                variant.label()
            )));
        }
    }
    let scalars: usize = params
        .layers
        .iter()
        .map(|l| l.conv.weights.len() + l.conv.bias.len() + l.bn.as_ref().map_or(0, |b| 4 * b.channels()))
        .sum();
    let width = T::PRECISION.bytes();
    let expected_bytes = scalars * width;
    if blob.len() < expected_bytes {
        return Err(Error::Truncated {
            path: path.into(),
            expected: expected_bytes,
            found: blob.len(),
        });
    }
    if blob.len() > expected_bytes {
        return Err(mismatch(format!(
            "blob has {} trailing bytes beyond the declared layers",
            blob.len() - expected_bytes
        )));
    }

    let momentum: f64 = h.get("bn_momentum").map_or(Ok(crate::tensor::BN_DEFAULT_MOMENTUM), |s| {
        s.parse().map_err(|_| Error::CorruptHeader {
            path: path.into(),
            reason: format!("bad bn_momentum `{s}`"),
        })
    })?;
    let epsilon: f64 = h.get("bn_epsilon").map_or(Ok(crate::tensor::BN_DEFAULT_EPSILON), |s| {
        s.parse().map_err(|_| Error::CorruptHeader {
            path: path.into(),
            reason: format!("bad bn_epsilon `{s}`"),
        })
    })?;

    let mut cursor = blob.chunks_exact(width).map(T::read_le);
    let mut fill = |t: &mut Tensor<T>| {
        for v in t.data_mut() {
            *v = cursor.next().expect("length checked");
        }
    };
    for l in &mut params.layers {
        fill(&mut l.conv.weights);
        fill(&mut l.conv.bias);
        if let Some(bn) = &mut l.bn {
            fill(&mut bn.gamma);
            fill(&mut bn.beta);
            fill(&mut bn.running_mean);
            fill(&mut bn.running_var);
            bn.momentum = momentum;
            bn.epsilon = epsilon;
        }
    }
    params.set_bn_mode(BnMode::Infer);
    Ok((params, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::build_network;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> NetworkParams<f32> {
        let mut p = build_network::<f32>(NetworkVariant::two_point_five_d(5).with_size(4, 3), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for bn in p.layers.iter_mut().filter_map(|l| l.bn.as_mut()) {
            bn.running_mean = Tensor::randn(&[3], 1.0, &mut rng);
            bn.gamma = Tensor::randn(&[3], 1.0, &mut rng);
        }
        p.set_bn_mode(BnMode::Infer);
        p
    }

    fn bits(p: &NetworkParams<f32>) -> Vec<u32> {
        p.layers
            .iter()
            .flat_map(|l| {
                let mut v: Vec<&Tensor<f32>> = vec![&l.conv.weights, &l.conv.bias];
                if let Some(bn) = &l.bn {
                    v.extend([&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var]);
                }
                v.into_iter().flat_map(|t| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>())
            })
            .collect()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let p = sample();
        let meta = CheckpointMeta {
            step: 12,
            seed: 3,
            extra: vec![("lr".into(), "0.001".into())],
        };
        save_checkpoint(&p, &meta, &path).unwrap();
        let (q, m) = load_checkpoint::<f32>(&path).unwrap();
        assert_eq!(bits(&p), bits(&q));
        assert_eq!(p, q);
        assert_eq!(m, meta);
        let (v, prec, _) = peek_checkpoint(&path).unwrap();
        assert_eq!(v, p.variant);
        assert_eq!(prec, Precision::F32);
        assert!(matches!(load_checkpoint::<f64>(&path), Err(Error::LayoutMismatch { .. })));
    }

    #[test]
    fn truncated_blob_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        save_checkpoint(&sample(), &CheckpointMeta::default(), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(load_checkpoint::<f32>(&path), Err(Error::Truncated { .. })));
    }

    #[test]
    fn edited_depth_is_a_layout_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        save_checkpoint(&sample(), &CheckpointMeta::default(), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let at = bytes.windows(10).position(|w| w == b"depth = 4\n").unwrap();
        bytes[at + 8] = b'5';
        let edited = bytes;
        std::fs::write(&path, edited).unwrap();
        assert!(matches!(load_checkpoint::<f32>(&path), Err(Error::LayoutMismatch { .. })));
    }

    #[test]
    fn garbage_manifest_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        std::fs::write(&path, b"dlmbir-checkpoint 1\nkind = 9d\nend_header\n").unwrap();
        assert!(matches!(load_checkpoint::<f32>(&path), Err(Error::CorruptHeader { .. })));
    }
}
