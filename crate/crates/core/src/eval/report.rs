use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::plot::{render_psnr_plot, write_ppm, Canvas};
use super::{masked_mse, masked_mse_slices, psnr, DEFAULT_MASK_HU};
use crate::data_sim::{HuWindow, VolumeHU};
use crate::error::{Error, Result};

pub const ROW_HEADER: &str = "method,slice,psnr_db,mse,masked_voxels";
pub const SUMMARY_HEADER: &str = "method,mean_psnr_db,volume_psnr_db,max_improvement_db,\
mean_improvement_db,min_improvement_db,infinite_slices,scored_slices,norm_lo_hu,norm_hi_hu,mask_lo_hu,mask_hi_hu";

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub method: String,
    pub slice: usize,
    pub psnr_db: f64,
    pub mse: f64,
    pub masked_voxels: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: String,
    /// Mean of the finite per-slice PSNR values.
    pub mean_psnr_db: f64,
    /// PSNR of the masked MSE pooled over the whole volume.
    pub volume_psnr_db: f64,
    pub max_improvement_db: f64,
    pub mean_improvement_db: f64,
    pub min_improvement_db: f64,
    /// Slices whose PSNR is infinite; they are left out of the means.
    pub infinite_slices: usize,
    pub scored_slices: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<MetricRow>,
    pub summary: Vec<MethodSummary>,
    pub window: HuWindow,
    pub mask_hu: (f64, f64),
}

impl MetricsReport {
    pub fn empty(window: HuWindow) -> Self {
        MetricsReport {
            rows: Vec::new(),
            summary: Vec::new(),
            window,
            mask_hu: DEFAULT_MASK_HU,
        }
    }

    pub fn method(&self, label: &str) -> Option<&MethodSummary> {
        self.summary.iter().find(|s| s.method == label)
    }

    pub fn rows_for<'a>(&'a self, label: &'a str) -> impl Iterator<Item = &'a MetricRow> + 'a {
        self.rows.iter().filter(move |r| r.method == label)
    }

    pub fn rows_csv(&self) -> String {
        let mut s = format!("{ROW_HEADER}\n");
        for r in &self.rows {
            writeln!(s, "{},{},{},{:.6e},{}", r.method, r.slice, fmt_db(r.psnr_db), r.mse, r.masked_voxels)
                .expect("write to string");
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        let mut s = format!("{SUMMARY_HEADER}\n");
        for m in &self.summary {
            writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                m.method,
                fmt_db(m.mean_psnr_db),
                fmt_db(m.volume_psnr_db),
                fmt_db(m.max_improvement_db),
                fmt_db(m.mean_improvement_db),
                fmt_db(m.min_improvement_db),
                m.infinite_slices,
                m.scored_slices,
                self.window.lo,
                self.window.hi,
                self.mask_hu.0,
                self.mask_hu.1
            )
            .expect("write to string");
        }
        s
    }
}

fn fmt_db(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.6}")
    }
}

/// Per-slice masked PSNR for each `(label, volume)` against `reference`,
/// with improvements measured against `fbp` on the same masks.
///
/// Slices whose mask is empty are omitted. Rows are ordered by method label
/// then slice.
pub fn per_slice_report(
    methods: &[(&str, &VolumeHU)],
    reference: &VolumeHU,
    fbp: &VolumeHU,
    window: HuWindow,
) -> Result<MetricsReport> {
    let mask = DEFAULT_MASK_HU;
    let check = |label: &str, v: &VolumeHU| {
        reference.same_dims(v).map_err(|e| Error::invalid(format!("{label}: {e}")))
    };
    check("fbp", fbp)?;
    let mut sorted: Vec<(&str, &VolumeHU)> = methods.to_vec();
    sorted.sort_by(|a, b| a.0.cmp(b.0));
    if let Some(w) = sorted.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::invalid(format!("duplicate method label `{}`", w[0].0)));
    }
    for (label, v) in &sorted {
        if label.contains(',') || label.contains('\n') {
            return Err(Error::invalid(format!("method label `{label}` may not contain commas")));
        }
        check(label, v)?;
    }

    let slices = reference.slices();
    let fbp_psnr: Vec<Option<f64>> = (0..slices)
        .map(|z| masked_mse_slices(fbp.slice(z), reference.slice(z), mask, window).ok().map(|m| psnr(m.mse)))
        .collect();

    let mut report = MetricsReport::empty(window);
    for (label, vol) in sorted {
        let mut finite = Vec::new();
        let mut improvements = Vec::new();
        let mut infinite = 0;
        for z in 0..slices {
            let m = match masked_mse_slices(vol.slice(z), reference.slice(z), mask, window) {
                Ok(m) => m,
                Err(Error::EmptyMask { .. }) => continue,
                Err(e) => return Err(e),
            };
            let p = psnr(m.mse);
            if p.is_finite() {
                finite.push(p);
                if let Some(f) = fbp_psnr[z].filter(|f| f.is_finite()) {
                    improvements.push(p - f);
                }
            } else {
                infinite += 1;
            }
            report.rows.push(MetricRow {
                method: label.to_string(),
                slice: z,
                psnr_db: p,
                mse: m.mse,
                masked_voxels: m.count,
            });
        }
        let mean = |v: &[f64]| if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
        let volume_psnr = match masked_mse(vol, reference, mask, window) {
            Ok(m) => psnr(m.mse),
            Err(Error::EmptyMask { .. }) => f64::NAN,
            Err(e) => return Err(e),
        };
        report.summary.push(MethodSummary {
            method: label.to_string(),
            mean_psnr_db: mean(&finite),
            volume_psnr_db: volume_psnr,
            max_improvement_db: improvements.iter().copied().reduce(f64::max).unwrap_or(f64::NAN),
            mean_improvement_db: mean(&improvements),
            min_improvement_db: improvements.iter().copied().reduce(f64::min).unwrap_or(f64::NAN),
            infinite_slices: infinite,
            scored_slices: finite.len() + infinite,
        });
    }
    Ok(report)
}

/// Parses a rows CSV produced by [`MetricsReport::rows_csv`].
pub fn parse_rows(text: &str) -> Result<Vec<MetricRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(ROW_HEADER) {
        return Err(Error::invalid("metrics CSV header mismatch"));
    }
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::invalid(format!("bad metrics row `{line}`"));
            if f.len() != 5 {
                return Err(bad());
            }
            Ok(MetricRow {
                method: f[0].to_string(),
                slice: f[1].parse().map_err(|_| bad())?,
                psnr_db: f[2].parse().map_err(|_| bad())?,
                mse: f[3].parse().map_err(|_| bad())?,
                masked_voxels: f[4].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `<dir>/<dataset>_metrics.csv`, `<dir>/<dataset>_summary.csv` and,
/// when `plot` is given, `<dir>/<dataset>_psnr.ppm`. Returns the paths
/// written.
pub fn emit_report(report: &MetricsReport, dir: &Path, dataset: &str, plot: Option<Canvas>) -> Result<Vec<PathBuf>> {
    let rows = dir.join(format!("{dataset}_metrics.csv"));
    let summary = dir.join(format!("{dataset}_summary.csv"));
    write_text(&rows, &report.rows_csv())?;
    write_text(&summary, &report.summary_csv())?;
    let mut out = vec![rows, summary];
    if let Some(canvas) = plot {
        let img = render_psnr_plot(report, canvas)?;
        let path = dir.join(format!("{dataset}_psnr.ppm"));
        write_ppm(&path, &img)?;
        out.push(path);
    }
    Ok(out)
}
