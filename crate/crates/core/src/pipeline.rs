//! Seed-deterministic dataset synthesis: for each input image, sample a
//! degradation field, blur, embed the kernels and persist everything next to
//! a JSON-lines manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::descriptor::{
    assemble_conditioning, build_descriptor_field, fit_pca, ConditioningTensor, DescriptorField,
    PcaBasis,
};
use crate::error::{Error, Result};
use crate::forward::{apply_forward, sample_degradation_field, DegradationField, MaskSource};
use crate::image::{
    load_rgb, read_pfm, resize_and_center_crop, resize_labels_and_center_crop, save_png, write_pfm,
    ImageTensor,
};
use crate::kernels::{kernel_library, KernelSamplingConfig, UniformRange};
use crate::masks::{load_segmentation, SegmentationMap, PARTITION_TOL};
use crate::seed::{derive_seed, rng_from_seed};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const SNAPSHOT_FILE: &str = "config.json";
pub const BASIS_FILE: &str = "basis.svbp";
pub const DEFAULT_TARGET_SIZE: usize = 512;
pub const DEFAULT_PCA_LIBRARY_SIZE: usize = 20_000;
/// Record index reserved for the PCA training library stream.
pub const LIBRARY_STREAM: u64 = u64::MAX;
pub const THREADS_ENV: &str = "SVBLUR_THREADS";

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "pfm"];

fn default_kernel_size() -> usize {
    crate::kernels::DEFAULT_KERNEL_SIZE
}
fn default_descriptor_dim() -> usize {
    crate::descriptor::DEFAULT_DESCRIPTOR_DIM
}
fn default_regions() -> [usize; 2] {
    [2, 6]
}
fn default_noise() -> [f64; 2] {
    let r = crate::forward::DEFAULT_NOISE_RANGE;
    [r.min, r.max]
}
fn default_smooth_sigma() -> f64 {
    crate::masks::DEFAULT_SMOOTH_SIGMA
}
fn default_workers() -> usize {
    1
}
fn default_target_size() -> usize {
    DEFAULT_TARGET_SIZE
}
fn default_library_size() -> usize {
    DEFAULT_PCA_LIBRARY_SIZE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisConfig {
    pub image_dir: PathBuf,
    /// Label-map PNGs named after the images (`<stem>.png`).
    #[serde(default)]
    pub seg_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    #[serde(default = "default_kernel_size")]
    pub kernel_size: usize,
    #[serde(default = "default_descriptor_dim")]
    pub descriptor_dim: usize,
    /// Inclusive range of synthetic Voronoi region counts.
    #[serde(default = "default_regions")]
    pub regions: [usize; 2],
    #[serde(default = "default_noise")]
    pub noise: [f64; 2],
    #[serde(default = "default_smooth_sigma")]
    pub smooth_sigma: f64,
    #[serde(default)]
    pub kernels: KernelSamplingConfig,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_workers")]
    pub worker_count: usize,
    #[serde(default = "default_target_size")]
    pub target_size: usize,
    /// Precomputed basis. When absent one is fitted on a fresh library.
    #[serde(default)]
    pub basis: Option<PathBuf>,
    #[serde(default = "default_library_size")]
    pub pca_library_size: usize,
}

impl SynthesisConfig {
    pub fn new(image_dir: impl Into<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            image_dir: image_dir.into(),
            seg_dir: None,
            output_dir: output_dir.into(),
            kernel_size: default_kernel_size(),
            descriptor_dim: default_descriptor_dim(),
            regions: default_regions(),
            noise: default_noise(),
            smooth_sigma: default_smooth_sigma(),
            kernels: KernelSamplingConfig::default(),
            master_seed: 0,
            worker_count: default_workers(),
            target_size: default_target_size(),
            basis: None,
            pca_library_size: default_library_size(),
        }
    }

    /// Parses TOML; relative paths are taken relative to `base`.
    pub fn from_toml_str(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.image_dir);
        fix(&mut cfg.output_dir);
        if let Some(p) = cfg.seg_dir.as_mut() {
            fix(p);
        }
        if let Some(p) = cfg.basis.as_mut() {
            fix(p);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.kernel_size;
        if k == 0 || k % 2 == 0 {
            return Err(Error::Config(format!("kernel_size must be odd, got {k}")));
        }
        if self.descriptor_dim == 0 || self.descriptor_dim > k * k {
            return Err(Error::Config(format!(
                "descriptor_dim must lie in [1, {}], got {}",
                k * k,
                self.descriptor_dim
            )));
        }
        let [lo, hi] = self.regions;
        if lo == 0 || lo > hi {
            return Err(Error::Config(format!("region range [{lo}, {hi}] is empty")));
        }
        let [nlo, nhi] = self.noise;
        if !(nlo >= 0.0 && nlo <= nhi && nhi.is_finite()) {
            return Err(Error::Config(format!("noise range [{nlo}, {nhi}] is invalid")));
        }
        if !(self.smooth_sigma >= 0.0) {
            return Err(Error::Config("smooth_sigma must be >= 0".into()));
        }
        if self.target_size < 11 {
            return Err(Error::Config(format!(
                "target_size must be >= 11, got {}",
                self.target_size
            )));
        }
        if self.worker_count == 0 {
            return Err(Error::Config("worker_count must be >= 1".into()));
        }
        if self.basis.is_none() && self.pca_library_size < self.descriptor_dim {
            return Err(Error::Config(format!(
                "pca_library_size {} is smaller than descriptor_dim {}",
                self.pca_library_size, self.descriptor_dim
            )));
        }
        self.kernels.validate()
    }

    fn noise_range(&self) -> UniformRange {
        UniformRange::new(self.noise[0], self.noise[1])
    }

    /// Loads the configured basis, or fits one on a library of
    /// `pca_library_size` kernels (half motion, half defocus).
    pub fn obtain_basis(&self) -> Result<PcaBasis> {
        let (k, d) = (self.kernel_size, self.descriptor_dim);
        if let Some(path) = &self.basis {
            let basis = PcaBasis::load(path)?;
            if basis.kernel_size() != k || basis.dim() != d {
                return Err(Error::Config(format!(
                    "basis {} has k={} d={}, config wants k={k} d={d}",
                    path.display(),
                    basis.kernel_size(),
                    basis.dim()
                )));
            }
            return Ok(basis);
        }
        let n = self.pca_library_size;
        let seed = derive_seed(self.master_seed, LIBRARY_STREAM);
        log::info!("fitting PCA basis on {n} kernels (k={k}, d={d})");
        let library = kernel_library(seed, k, n / 2, n - n / 2, &self.kernels)?;
        fit_pca(&library, d)
    }
}

/// Configuration as recorded next to the manifest. Worker count and
/// filesystem locations are left out so that the snapshot only depends on
/// what determines the artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub kernel_size: usize,
    pub descriptor_dim: usize,
    pub regions: [usize; 2],
    pub noise: [f64; 2],
    pub smooth_sigma: f64,
    pub kernels: KernelSamplingConfig,
    pub master_seed: u64,
    pub target_size: usize,
    pub segmentation_maps: bool,
    pub basis_fitted: bool,
    pub pca_library_size: Option<usize>,
    pub basis: String,
    pub manifest: String,
    pub images: usize,
    pub records: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub index: usize,
    pub id: String,
    pub source: String,
    /// Paths relative to the manifest directory.
    pub clean: String,
    pub blurred: String,
    pub field: String,
    pub descriptor: String,
    pub conditioning: String,
    pub preview: String,
    pub noise_sigma: f64,
    pub seed: u64,
    pub num_regions: usize,
    pub delta_kernels: usize,
}

/// In-memory result of one synthesis step.
#[derive(Debug, Clone)]
pub struct SynthesizedRecord {
    pub clean: ImageTensor,
    pub blurred: ImageTensor,
    pub field: DegradationField,
    pub descriptor: DescriptorField,
    pub conditioning: ConditioningTensor,
}

impl SynthesizedRecord {
    /// Writes the artifacts under `root/records/<id>/`.
    pub fn persist(&self, root: &Path, index: usize, id: &str, source: &str, seed: u64) -> Result<DatasetRecord> {
        let rel = |name: &str| format!("records/{id}/{name}");
        let record = DatasetRecord {
            index,
            id: id.to_string(),
            source: source.to_string(),
            clean: rel("clean.pfm"),
            blurred: rel("blurred.pfm"),
            field: rel("field.svbf"),
            descriptor: rel("descriptor.svbd"),
            conditioning: rel("conditioning.svbd"),
            preview: rel("blurred.png"),
            noise_sigma: self.field.noise_sigma(),
            seed,
            num_regions: self.field.num_regions(),
            delta_kernels: self.field.kernels().iter().filter(|k| k.is_delta()).count(),
        };
        write_pfm(&self.clean, root.join(&record.clean))?;
        write_pfm(&self.blurred, root.join(&record.blurred))?;
        self.field.save(root.join(&record.field))?;
        self.descriptor.save(root.join(&record.descriptor))?;
        self.conditioning.save(root.join(&record.conditioning))?;
        save_png(&self.blurred, root.join(&record.preview))?;
        Ok(record)
    }
}

/// Resize and crop, sample the field (from `seg` when given, otherwise a
/// synthetic Voronoi partition), blur with noise, then build the descriptor
/// field and conditioning tensor. Fully determined by the inputs and
/// `record_seed`.
pub fn synth_record(
    image: &ImageTensor,
    seg: Option<&SegmentationMap>,
    basis: &PcaBasis,
    config: &SynthesisConfig,
    record_seed: u64,
) -> Result<SynthesizedRecord> {
    if image.channels() != 3 {
        return Err(Error::Shape(format!("expected RGB, got {} channels", image.channels())));
    }
    if basis.kernel_size() != config.kernel_size || basis.dim() != config.descriptor_dim {
        return Err(Error::Config("basis does not match kernel_size/descriptor_dim".into()));
    }
    let t = config.target_size;
    let clean = resize_and_center_crop(image, t);
    let resized_seg = match seg {
        Some(s) => {
            if s.height() != image.height() || s.width() != image.width() {
                return Err(Error::Shape(format!(
                    "segmentation is {}x{} but image is {}x{}",
                    s.height(),
                    s.width(),
                    image.height(),
                    image.width()
                )));
            }
            let labels = resize_labels_and_center_crop(s.labels(), s.height(), s.width(), t);
            Some(SegmentationMap::from_raw_labels(t, t, &labels)?)
        }
        None => None,
    };
    let source = match &resized_seg {
        Some(s) => MaskSource::Segmentation(s),
        None => MaskSource::Synthetic {
            height: t,
            width: t,
            min_regions: config.regions[0],
            max_regions: config.regions[1],
        },
    };
    let mut rng = rng_from_seed(record_seed);
    let field = sample_degradation_field(
        &mut rng,
        &source,
        config.smooth_sigma,
        config.kernel_size,
        &config.kernels,
        &config.noise_range(),
    )?;
    let blurred = apply_forward(&clean, &field, &mut rng)?;
    let descriptor = build_descriptor_field(&field, basis)?;
    let conditioning = assemble_conditioning(&blurred, &descriptor)?;
    Ok(SynthesizedRecord {
        clean,
        blurred,
        field,
        descriptor,
        conditioning,
    })
}

/// Image files in `dir`, sorted by file name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ok = path.is_file()
            && path
                .extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        if ok {
            out.push(path);
        }
    }
    out.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(out)
}

fn load_image(path: &Path) -> Result<ImageTensor> {
    let is_pfm = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("pfm"));
    let img = if is_pfm { read_pfm(path)? } else { load_rgb(path)? };
    match img.channels() {
        3 => Ok(img),
        1 => ImageTensor::stack(&[img.clone(), img.clone(), img]),
        c => Err(Error::Shape(format!("{}: {c} channels", path.display()))),
    }
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkippedRecord {
    pub index: usize,
    pub source: String,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct SynthesisSummary {
    pub records: Vec<DatasetRecord>,
    pub skipped: Vec<SkippedRecord>,
    pub manifest_path: PathBuf,
}

fn process_one(
    index: usize,
    path: &Path,
    basis: &PcaBasis,
    config: &SynthesisConfig,
) -> Result<DatasetRecord> {
    let source = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let stem = file_stem(path);
    let image = load_image(path)?;
    let seg = match &config.seg_dir {
        Some(dir) => Some(load_segmentation(dir.join(format!("{stem}.png")))?),
        None => None,
    };
    let seed = derive_seed(config.master_seed, index as u64);
    let rec = synth_record(&image, seg.as_ref(), basis, config, seed)?;
    let id = format!("{index:05}_{stem}");
    rec.persist(&config.output_dir, index, &id, &source, seed)
}

/// Runs [`synth_record`] over every image with `worker_count` threads and
/// writes the manifest (ordered by record index) and the config snapshot.
/// Failing records are logged and skipped.
pub fn synth_dataset(config: &SynthesisConfig) -> Result<SynthesisSummary> {
    config.validate()?;
    let images = list_images(&config.image_dir)?;
    if images.is_empty() {
        return Err(Error::Config(format!(
            "no images found in {}",
            config.image_dir.display()
        )));
    }
    let out = &config.output_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let basis = config.obtain_basis()?;
    basis.save(out.join(BASIS_FILE))?;

    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<DatasetRecord>>>> =
        Mutex::new((0..images.len()).map(|_| None).collect());
    let workers = config.worker_count.min(images.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= images.len() {
                    break;
                }
                let result = process_one(i, &images[i], &basis, config);
                slots.lock().expect("worker panicked")[i] = Some(result);
            });
        }
    });

    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for (index, slot) in slots.into_inner().expect("worker panicked").into_iter().enumerate() {
        match slot.expect("every index is processed") {
            Ok(r) => {
                log::info!("record {} done (sigma {:.4})", r.id, r.noise_sigma);
                records.push(r);
            }
            Err(e) => {
                let source = images[index].display().to_string();
                log::warn!("skipping {source}: {e}");
                skipped.push(SkippedRecord {
                    index,
                    source,
                    reason: e.to_string(),
                });
            }
        }
    }

    let mut manifest = String::new();
    for r in &records {
        manifest.push_str(&serde_json::to_string(r).expect("record serializes"));
        manifest.push('\n');
    }
    let manifest_path = out.join(MANIFEST_FILE);
    fs::write(&manifest_path, manifest).map_err(|e| Error::io(&manifest_path, e))?;

    let snapshot = ConfigSnapshot {
        kernel_size: config.kernel_size,
        descriptor_dim: config.descriptor_dim,
        regions: config.regions,
        noise: config.noise,
        smooth_sigma: config.smooth_sigma,
        kernels: config.kernels.clone(),
        master_seed: config.master_seed,
        target_size: config.target_size,
        segmentation_maps: config.seg_dir.is_some(),
        basis_fitted: config.basis.is_none(),
        pca_library_size: config.basis.is_none().then_some(config.pca_library_size),
        basis: BASIS_FILE.into(),
        manifest: MANIFEST_FILE.into(),
        images: images.len(),
        records: records.len(),
    };
    let snap_path = out.join(SNAPSHOT_FILE);
    let text = serde_json::to_string_pretty(&snapshot).expect("snapshot serializes");
    fs::write(&snap_path, text + "\n").map_err(|e| Error::io(&snap_path, e))?;

    Ok(SynthesisSummary {
        records,
        skipped,
        manifest_path,
    })
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<DatasetRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::format("manifest", format!("line {}: {e}", i + 1)))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecordValidation {
    pub id: String,
    pub passed: bool,
    pub reasons: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub records: Vec<RecordValidation>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.records.iter().all(|r| r.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &RecordValidation> {
        self.records.iter().filter(|r| !r.passed)
    }
}

fn check_record(root: &Path, rec: &DatasetRecord) -> Vec<String> {
    let mut reasons = Vec::new();
    let mut note = |what: &str, e: Error| reasons.push(format!("{what}: {e}"));

    let clean = read_pfm(root.join(&rec.clean)).map_err(|e| note("clean", e)).ok();
    let blurred = read_pfm(root.join(&rec.blurred)).map_err(|e| note("blurred", e)).ok();
    let field = DegradationField::load(root.join(&rec.field)).map_err(|e| note("field", e)).ok();
    let descriptor = DescriptorField::load(root.join(&rec.descriptor))
        .map_err(|e| note("descriptor", e))
        .ok();
    let conditioning = ConditioningTensor::load(root.join(&rec.conditioning))
        .map_err(|e| note("conditioning", e))
        .ok();
    if !root.join(&rec.preview).is_file() {
        reasons.push("preview: missing".into());
    }

    if let (Some(c), Some(b)) = (&clean, &blurred) {
        if !c.same_shape(b) || c.channels() != 3 {
            reasons.push("clean/blurred shape mismatch".into());
        }
    }
    if let Some(f) = &field {
        let masks = f.masks();
        if let Err(e) = masks.check_partition_of_unity() {
            reasons.push(format!(
                "partition of unity violated (max error {:.3e} > {PARTITION_TOL:e}): {e}",
                masks.max_partition_error()
            ));
        }
        for (i, k) in f.kernels().iter().enumerate() {
            if let Err(e) = k.check() {
                reasons.push(format!("kernel {i}: {e}"));
            }
        }
        if f.noise_sigma() != rec.noise_sigma {
            reasons.push(format!(
                "noise_sigma {} differs from manifest {}",
                f.noise_sigma(),
                rec.noise_sigma
            ));
        }
        if f.num_regions() != rec.num_regions {
            reasons.push("region count differs from manifest".into());
        }
        if let Some(b) = &blurred {
            if b.height() != f.height() || b.width() != f.width() {
                reasons.push("field and image sizes differ".into());
            }
        }
        if let Some(d) = &descriptor {
            if d.height() != f.height() || d.width() != f.width() {
                reasons.push("descriptor and field sizes differ".into());
            }
        }
    }
    if let (Some(d), Some(c)) = (&descriptor, &conditioning) {
        if c.channels() != 3 + d.dim() {
            reasons.push(format!(
                "conditioning has {} channels, expected {}",
                c.channels(),
                3 + d.dim()
            ));
        } else if c.height() != d.height() || c.width() != d.width() {
            reasons.push("conditioning and descriptor sizes differ".into());
        }
    }
    if let (Some(b), Some(c)) = (&blurred, &conditioning) {
        if c.height() == b.height() && c.width() == b.width() && c.channels() >= 3 && c.rgb() != *b {
            reasons.push("conditioning RGB differs from blurred image".into());
        }
    }
    reasons
}

/// Re-opens every record and checks formats, dimensions, the partition of
/// unity, kernel invariants and channel counts. Problems are reported per
/// record; only an unreadable manifest is an error.
pub fn validate_manifest(manifest_path: impl AsRef<Path>) -> Result<ValidationReport> {
    let path = manifest_path.as_ref();
    let records = load_manifest(path)?;
    let root = path.parent().unwrap_or(Path::new("."));
    let records = records
        .iter()
        .map(|rec| {
            let reasons = check_record(root, rec);
            RecordValidation {
                id: rec.id.clone(),
                passed: reasons.is_empty(),
                reasons,
            }
        })
        .collect();
    Ok(ValidationReport { records })
}

/// Sizes rayon's global pool from `SVBLUR_THREADS` if set. Returns the
/// thread count applied.
pub fn init_thread_pool_from_env() -> Result<Option<usize>> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(None);
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))?;
    Ok(Some(n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_paths() {
        let cfg = SynthesisConfig::from_toml_str(
            "image_dir = \"imgs\"\noutput_dir = \"/tmp/out\"\n[kernels]\np_identity = 0.02\np_motion = 0.49\np_defocus = 0.49\n",
            Path::new("/base"),
        )
        .unwrap();
        assert_eq!(cfg.image_dir, Path::new("/base/imgs"));
        assert_eq!(cfg.output_dir, Path::new("/tmp/out"));
        assert_eq!(cfg.kernel_size, 33);
        assert_eq!(cfg.descriptor_dim, 128);
        assert_eq!(cfg.target_size, 512);
        assert_eq!(cfg.noise, [0.05, 0.25]);
        assert_eq!(cfg.kernels.p_identity, 0.02);
        assert_eq!(cfg.kernels.num_samples, 600);
    }

    #[test]
    fn config_rejects_bad_values() {
        let base = Path::new("/");
        let bad = [
            "regions = [3, 2]",
            "noise = [0.3, 0.1]",
            "kernel_size = 8",
            "descriptor_dim = 10\nkernel_size = 3",
            "target_size = 10",
            "worker_count = 0",
            "typo_key = 1",
        ];
        for extra in bad {
            let text = format!("image_dir = \"a\"\noutput_dir = \"b\"\n{extra}\n");
            assert!(SynthesisConfig::from_toml_str(&text, base).is_err(), "{extra}");
        }
    }

    #[test]
    fn record_is_deterministic() {
        let mut cfg = SynthesisConfig::new("in", "out");
        cfg.kernel_size = 5;
        cfg.descriptor_dim = 4;
        cfg.target_size = 16;
        cfg.pca_library_size = 40;
        let basis = cfg.obtain_basis().unwrap();
        let img = crate::image::synthetic_scene(3, 20, 24);
        let a = synth_record(&img, None, &basis, &cfg, 11).unwrap();
        let b = synth_record(&img, None, &basis, &cfg, 11).unwrap();
        assert_eq!(a.blurred, b.blurred);
        assert_eq!(a.field.to_svbf_bytes().unwrap(), b.field.to_svbf_bytes().unwrap());
        assert_eq!(a.conditioning.channels(), 7);
        assert_eq!(a.conditioning.rgb(), a.blurred);
    }
}
