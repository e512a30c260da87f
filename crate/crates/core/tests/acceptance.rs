//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use pan_core::analysis::{
    cost_report, count_params, emit_reproduction_ledger, Indivisible, Resolution,
};
use pan_core::data::{degrade, Dataset, MANIFEST_FILE};
use pan_core::gradcheck::{gradcheck, GradcheckConfig};
use pan_core::imaging::{psnr, ssim, Channels, ImageBuffer};
use pan_core::ops::resize_bilinear;
use pan_core::train::{run, Checkpoint, Schedule, TrainConfig, Trainer};
use pan_core::{BlockType, Model, ModelConfig, Pan, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn params(cfg: ModelConfig) -> u64 {
    count_params(&Pan::build(cfg).expect("valid config"))
}

fn c1_param_counts() -> Outcome {
    let pa = |blocks, up| ModelConfig {
        pa_in_blocks: blocks,
        pa_in_upsampler: up,
        ..ModelConfig::pan(4)
    };
    let cases = [
        ("PAN x4", ModelConfig::pan(4), 272_419),
        ("no PA", pa(false, false), 264_499),
        ("PA in SC-PA only", pa(true, false), 271_219),
        ("PA in U-PA only", pa(false, true), 265_699),
        ("PAN x2", ModelConfig::pan(2), 261_403),
        ("PAN x3", ModelConfig::pan(3), 261_403),
    ];
    for (label, cfg, want) in cases {
        let got = params(cfg);
        ensure(got == want, || format!("{label}: {got} != {want}"))?;
    }
    Ok("x4 272419; ablations 264499/271219/265699; x2 and x3 261403".into())
}

fn c2_mult_adds() -> Outcome {
    let mut parts = Vec::new();
    for (scale, want) in [(2, 70.5), (3, 39.0), (4, 28.2)] {
        let pan = Pan::build(ModelConfig::pan(scale)).map_err(|e| e.to_string())?;
        let report =
            cost_report(&pan, Resolution::HD720, Indivisible::Crop).map_err(|e| e.to_string())?;
        let got = report.giga_mult_adds();
        let dev = (got - want).abs() / want;
        ensure(dev <= 0.02, || {
            format!("x{scale}: {got:.2}G vs {want}G ({:.2}%)", dev * 100.0)
        })?;
        parts.push(format!(
            "x{scale} {got:.2}G ({:+.2}%)",
            (got - want) / want * 100.0
        ));
    }
    Ok(parts.join(", "))
}

fn c3_ablation_accounting() -> Outcome {
    let refs = [
        (BlockType::Rb, 272_009.0),
        (BlockType::RbCa, 285_379.0),
        (BlockType::RbSa, 272_427.0),
        (BlockType::RbPa, 285_219.0),
    ];
    let mut parts = Vec::new();
    for (bt, want) in refs {
        let got = params(ModelConfig::with_blocks(4, bt)) as f64;
        let dev = (got - want) / want;
        ensure(dev.abs() <= 0.05, || {
            format!("{}: {got} vs {want}", bt.as_str())
        })?;
        parts.push(format!("{} {got} ({:+.3}%)", bt.as_str(), dev * 100.0));
    }
    let rb = params(ModelConfig::with_blocks(4, BlockType::Rb)) as i64;
    let d_scpa = params(ModelConfig::pan(4)) as i64 - rb;
    let d_rbpa = params(ModelConfig::with_blocks(4, BlockType::RbPa)) as i64 - rb;
    ensure(d_scpa > 0 && d_scpa * 10 < d_rbpa, || {
        format!("deltas vs RB: SC-PA {d_scpa:+}, RB-PA {d_rbpa:+}")
    })?;
    parts.push(format!("delta vs RB: SC-PA {d_scpa:+}, RB-PA {d_rbpa:+}"));
    Ok(parts.join("; "))
}

fn c4_gradients() -> Outcome {
    let start = Instant::now();
    let (mut worst32, mut worst64) = (0.0f64, 0.0f64);
    for bt in BlockType::ALL {
        let cfg = GradcheckConfig {
            seed: 3,
            ..GradcheckConfig::tiny(bt)
        };
        let r64 = gradcheck::<f64>(&cfg).map_err(|e| e.to_string())?;
        let r32 = gradcheck::<f32>(&cfg).map_err(|e| e.to_string())?;
        ensure(r64.passed(), || {
            format!(
                "{} f64: {:.3e} at {}",
                bt.as_str(),
                r64.max_rel_err,
                r64.worst
            )
        })?;
        ensure(r32.passed(), || {
            format!(
                "{} f32: {:.3e} at {}",
                bt.as_str(),
                r32.max_rel_err,
                r32.worst
            )
        })?;
        worst64 = worst64.max(r64.max_rel_err);
        worst32 = worst32.max(r32.max_rel_err);
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 120.0, || format!("took {secs:.1}s"))?;
    Ok(format!("5 block types x 200 params, max rel err f32 {worst32:.2e} (< 1e-2), f64 {worst64:.2e} (< 1e-5), {secs:.1}s"))
}

fn c5_skip_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for scale in [2, 3, 4] {
        let mut model = Model::<f32>::new(ModelConfig::pan(scale), 1).map_err(|e| e.to_string())?;
        for name in ["tail.weight", "tail.bias"] {
            model
                .params
                .get_mut(name)
                .ok_or("missing tail param")?
                .tensor
                .fill(0.0);
        }
        let x = Tensor::<f32>::uniform(pan_core::Shape::new(1, 3, 7, 9), 0.0, 1.0, &mut rng);
        let y = model.forward(&x).map_err(|e| e.to_string())?;
        let skip = resize_bilinear(&x, scale).map_err(|e| e.to_string())?;
        let same = y
            .data()
            .iter()
            .zip(skip.data())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        ensure(same, || {
            format!("x{scale}: output differs from bilinear upscale")
        })?;
    }
    Ok("x2/x3/x4 outputs equal bilinear upscale bitwise".into())
}

/// Deterministic 64×64 RGB crop: smooth ramps, sinusoidal texture and a disk.
fn overfit_crop() -> ImageBuffer {
    let mut px = Vec::with_capacity(64 * 64 * 3);
    for y in 0..64 {
        for x in 0..64 {
            let (xf, yf) = (x as f64, y as f64);
            let disk = if (xf - 30.0).powi(2) + (yf - 34.0).powi(2) < 18.0f64.powi(2) {
                0.2
            } else {
                0.0
            };
            let r = 0.5 + 0.3 * (0.21 * xf + 0.07 * yf).sin();
            let g = 0.4 + 0.35 * (0.13 * xf - 0.17 * yf).cos() + disk;
            let b = 0.25 + 0.4 * (xf + yf) / 128.0 + disk;
            for v in [r, g, b] {
                px.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    ImageBuffer::from_u8(64, 64, Channels::Rgb, px).expect("sized above")
}

fn overfit_config() -> TrainConfig {
    TrainConfig {
        scale: 2,
        nf: 16,
        unf: 12,
        num_blocks: 2,
        batch: 1,
        hr_patch: 64,
        augment: false,
        total_iters: 2000,
        cosine_period: 2000,
        schedule: Schedule::Single,
        seed: 7,
        ..TrainConfig::default()
    }
}

/// Final L1 loss and Y-PSNR (dB) of the first reference run, frozen; the
/// regression bound is ±20% of each.
const PINNED_LOSS: f64 = 0.00300;
const PINNED_PSNR: f64 = 41.84;

fn c6_overfit() -> Outcome {
    let start = Instant::now();
    let data = Dataset::from_hr_images(2, vec![("crop".into(), overfit_crop())])
        .map_err(|e| e.to_string())?;
    let mut trainer = Trainer::<f32>::new(overfit_config()).map_err(|e| e.to_string())?;
    let mut loss = f64::NAN;
    let mut loss_at_200 = f64::NAN;
    let mut first = f64::NAN;
    for i in 0..2000 {
        loss = trainer.step(&data).map_err(|e| e.to_string())?.loss;
        if i == 0 {
            first = loss;
        }
        if i == 199 {
            loss_at_200 = loss;
        }
    }
    let score = trainer
        .evaluate(&data.pairs[0])
        .map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let detail = format!(
        "loss {first:.5} -> {loss_at_200:.5} @200 -> {loss:.6} @2000 (pinned {PINNED_LOSS}), PSNR {:.3} dB (pinned {PINNED_PSNR}), SSIM {:.4}, {secs:.0}s",
        score.psnr, score.ssim
    );
    ensure(loss_at_200 < first, || {
        format!("loss did not drop by iteration 200: {detail}")
    })?;
    ensure((loss - PINNED_LOSS).abs() <= 0.2 * PINNED_LOSS, || {
        format!("loss outside ±20% of {PINNED_LOSS}: {detail}")
    })?;
    ensure(
        (score.psnr - PINNED_PSNR).abs() <= 0.2 * PINNED_PSNR,
        || format!("PSNR outside ±20% of {PINNED_PSNR}: {detail}"),
    )?;
    ensure(secs < 600.0, || format!("too slow: {detail}"))?;
    Ok(detail)
}

fn psnr_oracle(a: &[f64], b: &[f64], w: usize, h: usize, shave: usize) -> f64 {
    let mut se = 0.0;
    let mut n = 0.0;
    for y in shave..h - shave {
        for x in shave..w - shave {
            let d = a[y * w + x] - b[y * w + x];
            se += d * d;
            n += 1.0;
        }
    }
    10.0 * (1.0 / (se / n)).log10()
}

/// Direct 2-D Gaussian window at every valid position.
fn ssim_oracle(a: &[f64], b: &[f64], w: usize, h: usize, shave: usize) -> f64 {
    let (win, sigma) = (11usize, 1.5f64);
    let half = (win / 2) as f64;
    let mut kernel = vec![0.0; win * win];
    for i in 0..win {
        for j in 0..win {
            let (dy, dx) = (i as f64 - half, j as f64 - half);
            kernel[i * win + j] = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
        }
    }
    let ksum: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= ksum);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let (x0, y0, x1, y1) = (shave, shave, w - shave, h - shave);
    let mut total = 0.0;
    let mut count = 0.0;
    for oy in y0..=y1 - win {
        for ox in x0..=x1 - win {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..win {
                for j in 0..win {
                    let k = kernel[i * win + j];
                    let (u, v) = (a[(oy + i) * w + ox + j], b[(oy + i) * w + ox + j]);
                    mx += k * u;
                    my += k * v;
                    sxx += k * u * u;
                    syy += k * v * v;
                    sxy += k * u * v;
                }
            }
            let (vx, vy, cov) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
            total += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1.0;
        }
    }
    total / count
}

fn c7_metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst = 0.0f64;
    for trial in 0..5 {
        let (w, h, shave) = (20 + trial * 3, 18 + trial * 2, trial % 3 + 1);
        let a: Vec<f32> = (0..w * h).map(|_| rng.gen::<f32>()).collect();
        let b: Vec<f32> = a
            .iter()
            .map(|v| (v + rng.gen_range(-0.2f32..0.2)).clamp(0.0, 1.0))
            .collect();
        let (ia, ib) = (
            ImageBuffer::from_f32(w, h, Channels::Y, a.clone()).map_err(|e| e.to_string())?,
            ImageBuffer::from_f32(w, h, Channels::Y, b.clone()).map_err(|e| e.to_string())?,
        );
        let (fa, fb): (Vec<f64>, Vec<f64>) = (
            a.iter().map(|&v| v as f64).collect(),
            b.iter().map(|&v| v as f64).collect(),
        );
        let dp = (psnr(&ia, &ib, shave).map_err(|e| e.to_string())?
            - psnr_oracle(&fa, &fb, w, h, shave))
        .abs();
        let ds = (ssim(&ia, &ib, shave).map_err(|e| e.to_string())?
            - ssim_oracle(&fa, &fb, w, h, shave))
        .abs();
        ensure(dp <= 1e-6 && ds <= 1e-6, || {
            format!("trial {trial}: |dPSNR| {dp:.2e}, |dSSIM| {ds:.2e}")
        })?;
        worst = worst.max(dp).max(ds);
        let self_ssim = ssim(&ia, &ia, shave).map_err(|e| e.to_string())?;
        ensure(self_ssim == 1.0, || format!("ssim(x,x) = {self_ssim}"))?;
    }
    let base =
        ImageBuffer::from_f32(16, 16, Channels::Y, vec![0.25; 256]).map_err(|e| e.to_string())?;
    let shifted =
        ImageBuffer::from_f32(16, 16, Channels::Y, vec![0.5; 256]).map_err(|e| e.to_string())?;
    let p = psnr(&base, &shifted, 0).map_err(|e| e.to_string())?;
    // offset d = 1/4 gives PSNR = -20 log10(d) = 10 log10(16)
    ensure(p == 10.0 * 16f64.log10(), || {
        format!("uniform offset PSNR {p}")
    })?;
    Ok(format!(
        "max |impl - oracle| {worst:.1e} over 5 fixtures; ssim(x,x)=1; offset PSNR {p:.4} dB exact"
    ))
}

fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

fn c8_determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = tmp.path();
    let err = |e: pan_core::Error| e.to_string();

    // resume mid-run versus the uninterrupted run
    let data = Dataset::from_hr_images(2, vec![("crop".into(), overfit_crop())]).map_err(err)?;
    let cfg = TrainConfig {
        nf: 8,
        unf: 6,
        batch: 2,
        hr_patch: 16,
        augment: true,
        total_iters: 12,
        ..overfit_config()
    };
    let mut full = Trainer::<f32>::new(cfg.clone()).map_err(err)?;
    run(&mut full, &data, None, &root.join("full"), |_| {}).map_err(err)?;

    let mut first = Trainer::<f32>::new(TrainConfig {
        total_iters: 5,
        ..cfg.clone()
    })
    .map_err(err)?;
    let half = run(&mut first, &data, None, &root.join("split"), |_| {}).map_err(err)?;
    let ck = Checkpoint::<f32>::load(&half.final_checkpoint).map_err(err)?;
    let mut resumed = Trainer::from_checkpoint(&ck).map_err(err)?;
    resumed.config.total_iters = cfg.total_iters;
    run(&mut resumed, &data, None, &root.join("split"), |_| {}).map_err(err)?;
    for f in ["final.bin", "loss.csv"] {
        let a = fs::read(root.join("full").join(f)).map_err(|e| e.to_string())?;
        let b = fs::read(root.join("split").join(f)).map_err(|e| e.to_string())?;
        ensure(a == b, || {
            format!("resumed {f} differs from the uninterrupted run")
        })?;
    }

    // ledgers
    emit_reproduction_ledger(&root.join("ledger1")).map_err(err)?;
    emit_reproduction_ledger(&root.join("ledger2")).map_err(err)?;
    let l1 = tree_bytes(&root.join("ledger1"));
    ensure(
        l1.len() == 4 && l1 == tree_bytes(&root.join("ledger2")),
        || "ledger files differ between runs".into(),
    )?;

    // manifests
    let hr = root.join("hr");
    fs::create_dir_all(&hr).map_err(|e| e.to_string())?;
    overfit_crop().save_png(&hr.join("crop.png")).map_err(err)?;
    overfit_crop()
        .crop(3, 5, 41, 38)
        .map_err(err)?
        .save_png(&hr.join("small.png"))
        .map_err(err)?;
    degrade(&hr, 4, &root.join("d1")).map_err(err)?;
    degrade(&hr, 4, &root.join("d2")).map_err(err)?;
    let (m1, m2) = (
        fs::read(root.join("d1").join(MANIFEST_FILE)),
        fs::read(root.join("d2").join(MANIFEST_FILE)),
    );
    ensure(m1.is_ok() && m1.ok() == m2.ok(), || {
        "manifests differ between runs".into()
    })?;
    Ok(
        "resume at 5/12 matches final.bin and loss.csv bytewise; ledgers and manifests stable"
            .into(),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("1 parameter counts", c1_param_counts),
        ("2 mult-adds at 720p", c2_mult_adds),
        ("3 ablation accounting", c3_ablation_accounting),
        ("4 gradient correctness", c4_gradients),
        ("5 skip-path identity", c5_skip_identity),
        ("6 desk-scale overfit", c6_overfit),
        ("7 metric oracles", c7_metric_oracles),
        ("8 determinism", c8_determinism),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        match check() {
            Ok(detail) => println!("PASS  criterion {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  criterion {name}: {why}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
