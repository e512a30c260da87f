//! Analytic parameter and Mult-Adds accounting.
//!
//! One Mult-Add is one multiply-accumulate of a convolution weight. Bias
//! adds, activations, attention products and resizes count zero. Each conv
//! is charged at the grid it executes on: the LR grid before upsampling,
//! the scaled grid after, and `1×1` for globally pooled features.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::nn::{BlockType, Grid, LayerCost, ModelConfig, Pan};

/// HR output resolution, `width × height`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Resolution {
    pub width: usize,
    pub height: usize,
}

impl Resolution {
    pub const HD720: Resolution = Resolution {
        width: 1280,
        height: 720,
    };

    pub fn new(width: usize, height: usize) -> Self {
        Resolution { width, height }
    }

    pub fn pixels(&self) -> u64 {
        (self.width * self.height) as u64
    }
}

impl std::str::FromStr for Resolution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (w, h) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| Error::Config(format!("resolution {s:?} is not WxH")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("resolution {s:?} is not WxH")))
        };
        Ok(Resolution::new(parse(w)?, parse(h)?))
    }
}

impl std::fmt::Display for Resolution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

/// What to do when the HR resolution is not a multiple of the scale.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Indivisible {
    Reject,
    /// Crop to the largest multiple of the scale, as data preparation does.
    Crop,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CostRow {
    pub layer: String,
    /// `(channels, height, width)` of the layer output.
    pub out_shape: (usize, usize, usize),
    pub params: u64,
    pub mult_adds: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CostReport {
    pub rows: Vec<CostRow>,
    /// Effective HR resolution the Mult-Adds were computed at.
    pub hr: Resolution,
    pub total_params: u64,
    pub total_mult_adds: u64,
}

impl CostReport {
    pub fn giga_mult_adds(&self) -> f64 {
        self.total_mult_adds as f64 / 1e9
    }

    /// CSV with header `layer,out_shape,params,mult_adds` and a closing
    /// `total` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,out_shape,params,mult_adds\n");
        for r in &self.rows {
            let (c, h, w) = r.out_shape;
            let _ = writeln!(s, "{},{c}x{h}x{w},{},{}", r.layer, r.params, r.mult_adds);
        }
        let _ = writeln!(s, "total,,{},{}", self.total_params, self.total_mult_adds);
        s
    }
}

pub fn count_params(model: &Pan) -> u64 {
    model.param_count() as u64
}

fn effective_hr(scale: usize, hr: Resolution, policy: Indivisible) -> Result<Resolution> {
    if hr.width % scale == 0 && hr.height % scale == 0 {
        return Ok(hr);
    }
    match policy {
        Indivisible::Reject => Err(Error::Config(format!(
            "HR resolution {hr} is not divisible by scale {scale}"
        ))),
        Indivisible::Crop => {
            let r = Resolution::new(hr.width - hr.width % scale, hr.height - hr.height % scale);
            if r.pixels() == 0 {
                return Err(Error::Config(format!(
                    "HR resolution {hr} is smaller than scale {scale}"
                )));
            }
            Ok(r)
        }
    }
}

fn grid_dims(grid: Grid, lr: Resolution) -> (usize, usize) {
    match grid {
        Grid::Spatial { upscale } => (lr.height * upscale, lr.width * upscale),
        Grid::Pooled => (1, 1),
    }
}

pub fn cost_report(model: &Pan, hr: Resolution, policy: Indivisible) -> Result<CostReport> {
    let scale = model.config.scale;
    let hr = effective_hr(scale, hr, policy)?;
    let lr = Resolution::new(hr.width / scale, hr.height / scale);
    let rows: Vec<CostRow> = model
        .layer_costs()
        .into_iter()
        .map(|l: LayerCost| {
            let (h, w) = grid_dims(l.grid, lr);
            CostRow {
                out_shape: (l.out_channels(), h, w),
                params: l.params() as u64,
                mult_adds: l.macs_per_pixel() * (h * w) as u64,
                layer: l.name,
            }
        })
        .collect();
    let total_params = rows.iter().map(|r| r.params).sum();
    let total_mult_adds = rows.iter().map(|r| r.mult_adds).sum();
    Ok(CostReport {
        rows,
        hr,
        total_params,
        total_mult_adds,
    })
}

/// Total Mult-Adds to produce one HR image; rejects indivisible sizes.
pub fn count_mult_adds(model: &Pan, hr: Resolution) -> Result<u64> {
    Ok(cost_report(model, hr, Indivisible::Reject)?.total_mult_adds)
}

/// One model line of a reproduction table, with the published reference
/// where one exists.
#[derive(Clone, Debug)]
pub struct LedgerEntry {
    pub label: String,
    pub report: CostReport,
    pub reference_params: Option<u64>,
    pub reference_giga_mult_adds: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct LedgerTable {
    pub name: String,
    pub entries: Vec<LedgerEntry>,
}

impl LedgerTable {
    /// Same header as [`CostReport::to_csv`], one row per model.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,out_shape,params,mult_adds\n");
        for e in &self.entries {
            let hr = e.report.hr;
            let _ = writeln!(
                s,
                "{},3x{}x{},{},{}",
                e.label, hr.height, hr.width, e.report.total_params, e.report.total_mult_adds
            );
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{}\n", self.name);
        for e in &self.entries {
            let _ = write!(
                s,
                "  {:<24} params {:>8}  mult-adds {:>7.2}G",
                e.label,
                e.report.total_params,
                e.report.giga_mult_adds()
            );
            if let Some(p) = e.reference_params {
                let rel = (e.report.total_params as f64 - p as f64) / p as f64 * 100.0;
                let _ = write!(s, "  | ref params {p:>8} ({rel:+.2}%)");
            }
            if let Some(g) = e.reference_giga_mult_adds {
                let rel = (e.report.giga_mult_adds() - g) / g * 100.0;
                let _ = write!(s, "  | ref {g:.2}G ({rel:+.2}%)");
            }
            s.push('\n');
        }
        s
    }
}

fn entry(
    label: &str,
    config: ModelConfig,
    params: Option<u64>,
    giga: Option<f64>,
) -> Result<LedgerEntry> {
    let pan = Pan::build(config)?;
    Ok(LedgerEntry {
        label: label.to_string(),
        report: cost_report(&pan, Resolution::HD720, Indivisible::Crop)?,
        reference_params: params,
        reference_giga_mult_adds: giga,
    })
}

/// Attention-type ablation (residual trunks), PA placement ablation, and
/// the per-scale efficiency table, all at 720p output.
pub fn reproduction_ledger() -> Result<Vec<LedgerTable>> {
    let pa = |blocks, up| ModelConfig {
        pa_in_blocks: blocks,
        pa_in_upsampler: up,
        ..ModelConfig::pan(4)
    };
    Ok(vec![
        LedgerTable {
            name: "table1_attention_type".into(),
            entries: vec![
                entry(
                    "RB",
                    ModelConfig::with_blocks(4, BlockType::Rb),
                    Some(272_009),
                    Some(28.16),
                )?,
                entry(
                    "RB-CA",
                    ModelConfig::with_blocks(4, BlockType::RbCa),
                    Some(285_379),
                    Some(28.16),
                )?,
                entry(
                    "RB-SA",
                    ModelConfig::with_blocks(4, BlockType::RbSa),
                    Some(272_427),
                    Some(28.18),
                )?,
                entry(
                    "RB-PA",
                    ModelConfig::with_blocks(4, BlockType::RbPa),
                    Some(285_219),
                    Some(28.90),
                )?,
                entry("SC-PA", ModelConfig::pan(4), Some(272_419), Some(28.16))?,
            ],
        },
        LedgerTable {
            name: "table3_pa_placement".into(),
            entries: vec![
                entry("PA-none", pa(false, false), Some(264_499), None)?,
                entry("PA-scpa", pa(true, false), Some(271_219), None)?,
                entry("PA-upa", pa(false, true), Some(265_699), None)?,
                entry("PA-both", pa(true, true), Some(272_419), None)?,
            ],
        },
        LedgerTable {
            name: "table5_efficiency".into(),
            entries: vec![
                entry("PAN-x2", ModelConfig::pan(2), None, Some(70.5))?,
                entry("PAN-x3", ModelConfig::pan(3), None, Some(39.0))?,
                entry("PAN-x4", ModelConfig::pan(4), None, Some(28.2))?,
            ],
        },
    ])
}

/// Writes `<name>.csv` per table and a combined `ledger.txt`.
pub fn emit_reproduction_ledger(dir: &Path) -> Result<Vec<LedgerTable>> {
    let tables = reproduction_ledger()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut text = String::new();
    for t in &tables {
        write_atomic(&dir.join(format!("{}.csv", t.name)), t.to_csv().as_bytes())?;
        text.push_str(&t.to_text());
    }
    write_atomic(&dir.join("ledger.txt"), text.as_bytes())?;
    Ok(tables)
}
