//! Dataset preparation (bicubic LR generation, TSV manifests) and seeded
//! patch sampling with dihedral augmentation.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::imaging::{bicubic_resize, ImageBuffer, ResizeFactor};
use crate::io::{read, write_atomic};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

pub const MANIFEST_FILE: &str = "manifest.tsv";
const MANIFEST_HEADER: &str = "hr_path\tlr_path\twidth\theight\thr_sha256\tlr_sha256";

/// One HR/LR pair. Paths are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub hr_path: PathBuf,
    pub lr_path: PathBuf,
    /// HR dimensions.
    pub width: usize,
    pub height: usize,
    pub hr_sha256: String,
    pub lr_sha256: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub scale: usize,
    /// Sorted by `hr_path`.
    pub entries: Vec<ManifestEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

impl DatasetManifest {
    pub fn to_tsv(&self) -> String {
        let mut out = format!("# scale={}\n{MANIFEST_HEADER}\n", self.scale);
        for e in &self.entries {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                e.hr_path.display(),
                e.lr_path.display(),
                e.width,
                e.height,
                e.hr_sha256,
                e.lr_sha256
            ));
        }
        out
    }

    pub fn parse_tsv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let scale = match lines.next() {
            Some((_, l)) => l
                .strip_prefix("# scale=")
                .and_then(|s| s.trim().parse::<usize>().ok())
                .ok_or_else(|| {
                    Error::Data(format!("manifest line 1: expected '# scale=N', got {l:?}"))
                })?,
            None => return Err(Error::Data("empty manifest".into())),
        };
        match lines.next() {
            Some((_, l)) if l == MANIFEST_HEADER => {}
            _ => return Err(Error::Data("manifest line 2: missing column header".into())),
        }
        let mut entries = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |what: &str| Error::Data(format!("manifest line {}: {what}", i + 1));
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 6 {
                return Err(bad(&format!("expected 6 columns, got {}", cols.len())));
            }
            let dim = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| bad(&format!("bad dimension {s:?}")))
            };
            let (width, height) = (dim(cols[2])?, dim(cols[3])?);
            if scale == 0 || width % scale != 0 || height % scale != 0 {
                return Err(bad(&format!(
                    "{width}x{height} is not divisible by scale {scale}"
                )));
            }
            entries.push(ManifestEntry {
                hr_path: cols[0].into(),
                lr_path: cols[1].into(),
                width,
                height,
                hr_sha256: cols[4].to_string(),
                lr_sha256: cols[5].to_string(),
            });
        }
        let mut sorted = entries.clone();
        sorted.sort_by(|a, b| a.hr_path.cmp(&b.hr_path));
        if sorted != entries {
            return Err(Error::Data(
                "manifest entries are not sorted by hr_path".into(),
            ));
        }
        Ok(DatasetManifest { scale, entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = String::from_utf8(read(path)?)
            .map_err(|_| Error::Data(format!("{}: manifest is not UTF-8", path.display())))?;
        Self::parse_tsv(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_tsv().as_bytes())
    }
}

/// Crops `hr` to a multiple of `scale` and produces the 8-bit bicubic
/// (antialiased) LR image.
pub fn degrade_image(hr: &ImageBuffer, scale: usize) -> Result<(ImageBuffer, ImageBuffer)> {
    let (w, h) = (hr.width - hr.width % scale, hr.height - hr.height % scale);
    if w == 0 || h == 0 {
        return Err(Error::Data(format!(
            "{}x{} image is smaller than scale {scale}",
            hr.width, hr.height
        )));
    }
    let hr = hr.crop(0, 0, w, h)?.to_u8();
    let lr = bicubic_resize(&hr, ResizeFactor::down(scale), true)?.to_u8();
    Ok((hr, lr))
}

/// PNG files directly inside `dir`, sorted by path.
pub fn png_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|entry| entry.map(|e| e.path()).map_err(|e| Error::io(dir, e)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    Ok(files)
}

/// Writes cropped HR copies to `out_dir/HR`, LR images to `out_dir/LR` and
/// the manifest to `out_dir/manifest.tsv`.
pub fn degrade(hr_dir: &Path, scale: usize, out_dir: &Path) -> Result<DatasetManifest> {
    if !crate::nn::SUPPORTED_SCALES.contains(&scale) {
        return Err(Error::Unsupported(format!("unsupported scale {scale}")));
    }
    let files = png_files(hr_dir)?;
    if files.is_empty() {
        return Err(Error::Data(format!(
            "no PNG images in {}",
            hr_dir.display()
        )));
    }
    for sub in ["HR", "LR"] {
        let d = out_dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut entries = Vec::with_capacity(files.len());
    for src in &files {
        let name = src.file_name().expect("listed files have names");
        let (hr, lr) = degrade_image(&ImageBuffer::load_png(src)?, scale)
            .map_err(|e| Error::Data(format!("{}: {e}", src.display())))?;
        let hr_rel = Path::new("HR").join(name);
        let lr_rel = Path::new("LR").join(name);
        hr.save_png(&out_dir.join(&hr_rel))?;
        lr.save_png(&out_dir.join(&lr_rel))?;
        entries.push(ManifestEntry {
            hr_sha256: sha256_hex(&read(&out_dir.join(&hr_rel))?),
            lr_sha256: sha256_hex(&read(&out_dir.join(&lr_rel))?),
            hr_path: hr_rel,
            lr_path: lr_rel,
            width: hr.width,
            height: hr.height,
        });
    }
    let manifest = DatasetManifest { scale, entries };
    manifest.save(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// Decoded HR/LR pairs in unit-range f32.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub scale: usize,
    pub pairs: Vec<ImagePair>,
}

#[derive(Clone, Debug)]
pub struct ImagePair {
    pub name: String,
    pub hr: ImageBuffer,
    pub lr: ImageBuffer,
}

impl Dataset {
    /// Loads every pair named by the manifest at `path`, verifying hashes and
    /// dimensions.
    pub fn load(path: &Path) -> Result<Self> {
        let manifest = DatasetManifest::load(path)?;
        let root = path.parent().unwrap_or(Path::new("."));
        let mut pairs = Vec::with_capacity(manifest.entries.len());
        for e in &manifest.entries {
            let load = |rel: &Path, want: &str| -> Result<ImageBuffer> {
                let p = root.join(rel);
                let got = sha256_hex(&read(&p)?);
                if got != want {
                    return Err(Error::Data(format!(
                        "{}: content hash differs from manifest",
                        p.display()
                    )));
                }
                Ok(ImageBuffer::load_png(&p)?.to_f32())
            };
            let hr = load(&e.hr_path, &e.hr_sha256)?;
            let lr = load(&e.lr_path, &e.lr_sha256)?;
            if (hr.width, hr.height) != (e.width, e.height) {
                return Err(Error::Data(format!(
                    "{}: dimensions differ from manifest",
                    e.hr_path.display()
                )));
            }
            if lr.width * manifest.scale != hr.width || lr.height * manifest.scale != hr.height {
                return Err(Error::Data(format!(
                    "{}: LR is {}x{}, expected HR/{}",
                    e.lr_path.display(),
                    lr.width,
                    lr.height,
                    manifest.scale
                )));
            }
            pairs.push(ImagePair {
                name: e.hr_path.display().to_string(),
                hr,
                lr,
            });
        }
        Ok(Dataset {
            scale: manifest.scale,
            pairs,
        })
    }

    /// Degrades in-memory HR images the same way [`degrade`] does.
    pub fn from_hr_images(scale: usize, images: Vec<(String, ImageBuffer)>) -> Result<Self> {
        let pairs = images
            .into_iter()
            .map(|(name, img)| {
                let (hr, lr) = degrade_image(&img, scale)?;
                Ok(ImagePair {
                    name,
                    hr: hr.to_f32(),
                    lr: lr.to_f32(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if pairs.is_empty() {
            return Err(Error::Data("empty dataset".into()));
        }
        Ok(Dataset { scale, pairs })
    }
}

/// Element of the dihedral group of the square: `rot` quarter turns
/// counter-clockwise applied after an optional horizontal flip.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dihedral {
    pub rot: u8,
    pub flip: bool,
}

impl Dihedral {
    pub const IDENTITY: Dihedral = Dihedral {
        rot: 0,
        flip: false,
    };

    pub fn all() -> [Dihedral; 8] {
        std::array::from_fn(|i| Dihedral {
            rot: (i % 4) as u8,
            flip: i >= 4,
        })
    }

    pub fn index(self) -> usize {
        self.rot as usize + if self.flip { 4 } else { 0 }
    }

    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self::all()[rng.gen_range(0..8)]
    }

    /// Source coordinate `(y, x)` that lands at output `(y, x)` in an
    /// `n × n` plane.
    fn source(self, n: usize, mut y: usize, mut x: usize) -> (usize, usize) {
        // undo the rotations, then the flip
        for _ in 0..self.rot {
            (y, x) = (x, n - 1 - y);
        }
        if self.flip {
            x = n - 1 - x;
        }
        (y, x)
    }

    /// Transforms every plane of a square `(n, c, p, p)` tensor.
    pub fn apply<T: Scalar>(self, t: &Tensor<T>) -> Result<Tensor<T>> {
        let s = t.shape();
        if s.h != s.w {
            return Err(Error::dim(
                "dihedral",
                format!("needs square planes, got {s}"),
            ));
        }
        if self == Self::IDENTITY {
            return Ok(t.clone());
        }
        let p = s.w;
        let mut out = Vec::with_capacity(s.numel());
        for n in 0..s.n {
            for c in 0..s.c {
                let src = t.plane(n, c);
                for y in 0..p {
                    for x in 0..p {
                        let (sy, sx) = self.source(p, y, x);
                        out.push(src[sy * p + sx]);
                    }
                }
            }
        }
        Tensor::from_vec(s, out)
    }
}

impl fmt::Display for Dihedral {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}{}", self.rot * 90, if self.flip { "f" } else { "" })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchConfig {
    pub batch: usize,
    pub hr_patch: usize,
    pub augment: bool,
}

/// Where one batch item came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchOrigin {
    pub image: usize,
    /// LR top-left corner.
    pub lr_x: usize,
    pub lr_y: usize,
    /// HR top-left corner; always `scale ×` the LR corner.
    pub hr_x: usize,
    pub hr_y: usize,
    pub transform: Dihedral,
}

impl fmt::Display for PatchOrigin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "image={} lr=({},{}) hr=({},{}) {}",
            self.image, self.lr_x, self.lr_y, self.hr_x, self.hr_y, self.transform
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchBatch<T> {
    /// `(b, 3, p/s, p/s)`
    pub lr: Tensor<T>,
    /// `(b, 3, p, p)`
    pub hr: Tensor<T>,
    pub origins: Vec<PatchOrigin>,
}

fn patch_tensor<T: Scalar>(img: &ImageBuffer, x: usize, y: usize, p: usize) -> Result<Tensor<T>> {
    Ok(img.crop(x, y, p, p)?.to_tensor())
}

/// Draws `batch` aligned LR/HR patches with replacement: image, position and
/// (optionally) dihedral transform are each uniform.
pub fn sample_batch<T: Scalar, R: Rng + ?Sized>(
    data: &Dataset,
    rng: &mut R,
    cfg: &BatchConfig,
) -> Result<PatchBatch<T>> {
    let s = data.scale;
    if cfg.batch == 0 {
        return Err(Error::Config("batch must be positive".into()));
    }
    if cfg.hr_patch == 0 || cfg.hr_patch % s != 0 {
        return Err(Error::Config(format!(
            "hr_patch {} must be a positive multiple of scale {s}",
            cfg.hr_patch
        )));
    }
    if data.pairs.is_empty() {
        return Err(Error::Data("empty dataset".into()));
    }
    let lp = cfg.hr_patch / s;
    let (mut lrs, mut hrs, mut origins) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..cfg.batch {
        let image = rng.gen_range(0..data.pairs.len());
        let pair = &data.pairs[image];
        if pair.lr.width < lp || pair.lr.height < lp {
            return Err(Error::Data(format!(
                "{}: {p}x{p} patch is larger than the {}x{} image",
                pair.name,
                pair.hr.width,
                pair.hr.height,
                p = cfg.hr_patch
            )));
        }
        let lr_x = rng.gen_range(0..=pair.lr.width - lp);
        let lr_y = rng.gen_range(0..=pair.lr.height - lp);
        let transform = if cfg.augment {
            Dihedral::sample(rng)
        } else {
            Dihedral::IDENTITY
        };
        let origin = PatchOrigin {
            image,
            lr_x,
            lr_y,
            hr_x: lr_x * s,
            hr_y: lr_y * s,
            transform,
        };
        lrs.push(transform.apply(&patch_tensor::<T>(&pair.lr, lr_x, lr_y, lp)?)?);
        hrs.push(transform.apply(&patch_tensor::<T>(
            &pair.hr,
            origin.hr_x,
            origin.hr_y,
            cfg.hr_patch,
        )?)?);
        origins.push(origin);
    }
    Ok(PatchBatch {
        lr: Tensor::stack(&lrs)?,
        hr: Tensor::stack(&hrs)?,
        origins,
    })
}

/// Shape of a batch built from `cfg` at `scale`.
pub fn batch_shapes(cfg: &BatchConfig, scale: usize) -> (Shape, Shape) {
    let p = cfg.hr_patch;
    (
        Shape::new(cfg.batch, 3, p / scale, p / scale),
        Shape::new(cfg.batch, 3, p, p),
    )
}
