//! Dataset manifests, configuration, checkpoints, the template-only attack
//! path and the train/evaluate steps the CLI strings together.

pub mod checkpoint;
pub mod config;
pub mod manifest;
pub mod template_io;

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader, Checkpointable};
pub use config::{AblationToggles, RunConfig};
pub use manifest::{load_manifest, DatasetManifest, ManifestRecord, Split};
pub use template_io::{load_template, save_template};

use crate::adversarial::{
    prepare_samples, train_flp, CriticParams, FlpTrainOutcome, ReconContext, TrainState,
};
use crate::backends::{BackendRegistry, FaceTemplate, ImageTensor, LatentCode, NoiseVector};
use crate::error::{Error, Result};
use crate::eval::report::{verification_records, AblationRow, Record, Report};
use crate::eval::{
    famse, ms_ssim, run_verification, EvalSample, Protocol, VerificationSetup,
};
use crate::flp::{flp_forward, FLPParams};
use crate::nn::{self, derive_seed, gaussian_vec, rng_from_seed};
use crate::semantics::{
    aggregate_semantics, build_bank, default_prompts, load_prompt_file, PromptBank,
    SemanticEmbedding,
};
use crate::taa::{taa_forward, train_taa, TAAParams, TAATrainOutcome};

#[derive(Debug, Clone)]
pub struct AttackOutput {
    pub image: ImageTensor,
    pub latent: LatentCode,
    pub s_hat: SemanticEmbedding,
}

/// Template-only inversion: `generate(flp(n, t, taa(t)))`. Takes no image.
pub fn attack(
    template: &FaceTemplate,
    taa: &TAAParams,
    flp: &FLPParams,
    backends: &BackendRegistry,
    noise_seed: u64,
) -> Result<AttackOutput> {
    if taa.output_dim() != flp.config.regions * flp.config.d_c {
        return Err(Error::DimensionMismatch {
            context: "TAA output vs projector semantic input",
            expected: flp.config.regions * flp.config.d_c,
            got: taa.output_dim(),
        });
    }
    if backends.generator.latent_dim() != flp.config.d_w {
        return Err(Error::DimensionMismatch {
            context: "projector latent vs generator",
            expected: backends.generator.latent_dim(),
            got: flp.config.d_w,
        });
    }
    let s_hat = taa_forward(taa, template)?;
    let noise = NoiseVector::sample(flp.config.d_n, noise_seed);
    let (latent, _) = flp_forward(flp, &noise, template, &s_hat)?;
    let image = backends.generate(&latent)?;
    Ok(AttackOutput {
        image,
        latent,
        s_hat,
    })
}

pub fn save_png(image: &ImageTensor, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = image
        .data()
        .iter()
        .map(|v| (v * 255.0).round() as u8)
        .collect();
    let buf = image::RgbImage::from_raw(image.width() as u32, image.height() as u32, bytes)
        .expect("buffer length matches dimensions");
    buf.save(path)
        .map_err(|e| Error::InvalidImage(format!("{}: {e}", path.display())))
}

pub fn load_png(path: &Path) -> Result<ImageTensor> {
    let img = image::open(path)
        .map_err(|e| Error::InvalidImage(format!("{}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|b| b as f64 / 255.0).collect();
    ImageTensor::new(h as usize, w as usize, data)
}

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub const FILE_NAME: &'static str = ".fti.lock";

    pub fn acquire(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(Self::FILE_NAME);
        let mut f = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::AlreadyExists => Error::Locked(dir.to_path_buf()),
                _ => Error::io(&path, e),
            })?;
        let _ = writeln!(f, "{}", std::process::id());
        Ok(Self { path })
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

/// Append-only JSON-lines metrics log.
pub struct MetricsLog {
    file: File,
    path: PathBuf,
}

#[derive(Serialize)]
struct TaaEpoch {
    phase: &'static str,
    epoch: usize,
    loss: f64,
}

#[derive(Serialize)]
struct FlpStep<'a> {
    phase: &'static str,
    #[serde(flatten)]
    state: &'a TrainState,
}

impl MetricsLog {
    pub fn open(path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self {
            file,
            path: path.to_path_buf(),
        })
    }

    pub fn append<T: Serialize>(&mut self, record: &T) -> Result<()> {
        let mut line = serde_json::to_vec(record)?;
        line.push(b'\n');
        self.file
            .write_all(&line)
            .map_err(|e| Error::io(&self.path, e))
    }
}

/// Deterministic identities rendered by the generator: one base latent per
/// identity, siblings jittered around it.
pub fn synth_identities(
    backends: &BackendRegistry,
    prefix: &str,
    identities: usize,
    per_identity: usize,
    jitter: f64,
    seed: u64,
) -> Result<Vec<EvalSample>> {
    let z_dim = backends.mapping_network.z_dim();
    let mut out = Vec::with_capacity(identities * per_identity);
    for i in 0..identities {
        let name = format!("{prefix}-{i:03}");
        let base = gaussian_vec(&mut rng_from_seed(derive_seed(seed, &name)), z_dim);
        for k in 0..per_identity {
            let eps = gaussian_vec(
                &mut rng_from_seed(derive_seed(seed, &format!("{name}/{k}"))),
                z_dim,
            );
            let z: Vec<f64> = base.iter().zip(&eps).map(|(b, e)| b + jitter * e).collect();
            let w = backends.mapping_network.map(&z)?;
            out.push(EvalSample {
                image: backends.generate(&w)?,
                identity: name.clone(),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub name: String,
    pub train_identities: usize,
    pub test_identities: usize,
    pub test_images_per_identity: usize,
    pub jitter: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            name: "toy".into(),
            train_identities: 8,
            test_identities: 8,
            test_images_per_identity: 3,
            jitter: 0.3,
            seed: 0,
        }
    }
}

/// Writes PNGs and `manifest.jsonl` under `dir`; returns the manifest path.
pub fn write_synth_dataset(
    backends: &BackendRegistry,
    spec: &SynthSpec,
    dir: &Path,
) -> Result<PathBuf> {
    let img_dir = dir.join("images");
    std::fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
    let train = synth_identities(backends, "train", spec.train_identities, 1, 0.0, spec.seed)?;
    let test = synth_identities(
        backends,
        "test",
        spec.test_identities,
        spec.test_images_per_identity,
        spec.jitter,
        spec.seed,
    )?;
    let mut records = Vec::new();
    for (split, samples) in [(Split::Train, &train), (Split::Test, &test)] {
        for (i, s) in samples.iter().enumerate() {
            let rel = format!("images/{}_{i:04}.png", s.identity);
            save_png(&s.image, &dir.join(&rel))?;
            records.push(ManifestRecord {
                image_path: rel,
                identity_id: s.identity.clone(),
                split,
            });
        }
    }
    let manifest = DatasetManifest::new(spec.name.clone(), records)?;
    let path = dir.join("manifest.jsonl");
    manifest.save(&path)?;
    Ok(path)
}

pub fn load_split(manifest: &DatasetManifest, split: Split) -> Result<Vec<EvalSample>> {
    manifest
        .split(split)
        .map(|r| {
            Ok(EvalSample {
                image: load_png(&manifest.resolve(r))?,
                identity: r.identity_id.clone(),
            })
        })
        .collect()
}

/// Prompt bank from the configured prompt file, or the built-in one.
pub fn prompt_bank(cfg: &RunConfig, backends: &BackendRegistry) -> Result<PromptBank> {
    let prompts = match &cfg.prompts {
        Some(p) => load_prompt_file(p)?,
        None => default_prompts(),
    };
    build_bank(&prompts, backends.vl_encoder.as_ref())
}

pub fn run_train_taa(
    cfg: &RunConfig,
    backends: &BackendRegistry,
    bank: &PromptBank,
    images: &[ImageTensor],
    mut log: Option<&mut MetricsLog>,
) -> Result<TAATrainOutcome> {
    let pairs = images
        .iter()
        .map(|img| {
            Ok((
                backends.fr_embed(&cfg.backends.f_loss, img)?,
                aggregate_semantics(img, bank, backends.vl_encoder.as_ref())?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let out = train_taa(&pairs, cfg.dims.taa_hidden, &cfg.taa)?;
    if let Some(log) = log.as_deref_mut() {
        for (epoch, loss) in out.epoch_losses.iter().enumerate() {
            log.append(&TaaEpoch {
                phase: "taa",
                epoch,
                loss: *loss,
            })?;
        }
    }
    Ok(out)
}

pub fn initial_flp(cfg: &RunConfig, regions: usize) -> Result<FLPParams> {
    FLPParams::init(cfg.flp_config(regions), derive_seed(cfg.seed, "flp-init"))
}

pub fn run_train_flp(
    cfg: &RunConfig,
    backends: &BackendRegistry,
    bank: &PromptBank,
    images: &[ImageTensor],
    taa: &TAAParams,
    mut log: Option<&mut MetricsLog>,
) -> Result<FlpTrainOutcome> {
    let ctx = ReconContext {
        backends,
        f_loss: &cfg.backends.f_loss,
        bank,
    };
    let samples = prepare_samples(images, taa, &ctx)?;
    let flp = initial_flp(cfg, bank.region_count())?;
    let critic = CriticParams::init(
        cfg.dims.d_w,
        cfg.dims.critic_hidden,
        derive_seed(cfg.seed, "critic-init"),
    );
    train_flp(
        &samples,
        flp,
        critic,
        &cfg.wgan,
        &cfg.effective_loss_weights(),
        &ctx,
        |s| match log.as_deref_mut() {
            Some(l) => l.append(&FlpStep {
                phase: "flp",
                state: s,
            }),
            None => Ok(()),
        },
    )
}

/// Verification rows for both protocols against every configured target.
pub fn run_evaluation(
    cfg: &RunConfig,
    backends: &BackendRegistry,
    dataset: &str,
    samples: &[EvalSample],
    taa: &TAAParams,
    flp: &FLPParams,
) -> Result<Report> {
    let attack_fn = |t: &FaceTemplate| -> Result<ImageTensor> {
        Ok(attack(t, taa, flp, backends, cfg.eval.noise_seed)?.image)
    };
    let mut report = Report::new();
    for target in &cfg.backends.f_targets {
        for protocol in [Protocol::Type1, Protocol::Type2] {
            let setup = VerificationSetup {
                f_database: &cfg.backends.f_database,
                f_target: target,
                protocol,
                far_levels: &cfg.eval.far_levels,
                impostor_cap: cfg.eval.impostor_cap,
                seed: cfg.seed,
            };
            let out = run_verification(samples, &attack_fn, backends, &setup)?;
            report.records.extend(verification_records(
                &cfg.eval.method,
                dataset,
                &cfg.backends.f_database,
                &cfg.backends.f_loss,
                target,
                &out,
            ));
        }
    }
    Ok(report)
}

/// One ablation-table row: TAR at `eval.ablation_far` on the first target
/// plus reconstruction quality. MS-SSIM is `None` when images are smaller than
/// its scale cascade allows; FAMSE skips pairs without a detected face.
pub fn quality_row(
    cfg: &RunConfig,
    backends: &BackendRegistry,
    samples: &[EvalSample],
    taa: &TAAParams,
    flp: &FLPParams,
    train_loss: Option<f64>,
) -> Result<AblationRow> {
    let target = cfg
        .backends
        .f_targets
        .first()
        .ok_or_else(|| Error::Config("no F_target configured".into()))?;
    let attack_fn = |t: &FaceTemplate| -> Result<ImageTensor> {
        Ok(attack(t, taa, flp, backends, cfg.eval.noise_seed)?.image)
    };
    let tar = |protocol| -> Result<f64> {
        let setup = VerificationSetup {
            f_database: &cfg.backends.f_database,
            f_target: target,
            protocol,
            far_levels: &[cfg.eval.ablation_far],
            impostor_cap: cfg.eval.impostor_cap,
            seed: cfg.seed,
        };
        Ok(run_verification(samples, &attack_fn, backends, &setup)?.points[0].tar)
    };
    let (type1, type2) = (tar(Protocol::Type1)?, tar(Protocol::Type2)?);

    let mut mse = 0.0;
    let mut lpips = 0.0;
    let mut ssim_sum = 0.0;
    let mut ssim_ok = true;
    let mut famse_sum = 0.0;
    let mut famse_n = 0usize;
    for s in samples {
        let t = backends.fr_embed(&cfg.backends.f_database, &s.image)?;
        let recon = attack_fn(&t)?;
        mse += nn::mean_squared_error(s.image.data(), recon.data());
        lpips += backends.perceptual_net.distance(&s.image, &recon)?;
        match ms_ssim(&s.image, &recon) {
            Ok(v) => ssim_sum += v,
            Err(Error::ImageTooSmall { .. }) => ssim_ok = false,
            Err(e) => return Err(e),
        }
        match famse(
            &s.image,
            &recon,
            backends.landmark_detector.as_ref(),
            backends.attribute_encoder.as_ref(),
        ) {
            Ok(v) => {
                famse_sum += v;
                famse_n += 1;
            }
            Err(Error::NoFace) => {}
            Err(e) => return Err(e),
        }
    }
    let n = samples.len() as f64;
    Ok(AblationRow {
        table: cfg.ablation.table().into(),
        variant: cfg.ablation.variant_name(),
        type1: Some(type1),
        type2: Some(type2),
        ms_ssim: ssim_ok.then(|| ssim_sum / n),
        mse: Some(mse / n),
        famse: (famse_n > 0).then(|| famse_sum / famse_n as f64),
        lpips: Some(lpips / n),
        train_loss,
    })
}

/// Mean projector objective over the final epoch of a training history.
pub fn final_epoch_loss(history: &[TrainState]) -> Option<f64> {
    let last = history.last()?.epoch;
    let tail: Vec<f64> = history
        .iter()
        .filter(|s| s.epoch == last)
        .map(|s| s.total)
        .collect();
    Some(tail.iter().sum::<f64>() / tail.len() as f64)
}

/// Trains one projector per toggle set (sharing `taa`) and evaluates each.
pub fn run_ablation(
    cfg: &RunConfig,
    backends: &BackendRegistry,
    bank: &PromptBank,
    train_images: &[ImageTensor],
    test: &[EvalSample],
    taa: &TAAParams,
    variants: &[AblationToggles],
) -> Result<Report> {
    let mut report = Report::new();
    for toggles in variants {
        let vcfg = RunConfig {
            ablation: toggles.clone(),
            ..cfg.clone()
        };
        let trained = run_train_flp(&vcfg, backends, bank, train_images, taa, None)?;
        let row = quality_row(
            &vcfg,
            backends,
            test,
            taa,
            &trained.flp,
            final_epoch_loss(&trained.history),
        )?;
        report.push(Record::Ablation(row));
    }
    Ok(report)
}

/// Files written by [`run_all`], relative to the output directory.
pub const RUN_ALL_FILES: [&str; 7] = [
    "bank.json",
    "taa.ckpt",
    "flp.ckpt",
    "critic.ckpt",
    "metrics.jsonl",
    "report.jsonl",
    "report.md",
];

/// Bank, TAA, projector, critic and evaluation report for one manifest.
pub fn run_all(cfg: &RunConfig, manifest: &DatasetManifest, out_dir: &Path) -> Result<Report> {
    let _lock = OutputLock::acquire(out_dir)?;
    let backends = cfg.build_backends()?;
    let bank = prompt_bank(cfg, &backends)?;
    bank.save_json(&out_dir.join("bank.json"))?;

    let train: Vec<ImageTensor> = load_split(manifest, Split::Train)?
        .into_iter()
        .map(|s| s.image)
        .collect();
    let test = load_split(manifest, Split::Test)?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::Empty("manifest needs both train and test records".into()));
    }
    let metrics_path = out_dir.join("metrics.jsonl");
    if metrics_path.exists() {
        std::fs::remove_file(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    }
    let mut log = MetricsLog::open(&metrics_path)?;
    let taa = run_train_taa(cfg, &backends, &bank, &train, Some(&mut log))?.params;
    save_checkpoint(&taa, cfg.taa.rng_seed, &out_dir.join("taa.ckpt"))?;
    let trained = run_train_flp(cfg, &backends, &bank, &train, &taa, Some(&mut log))?;
    save_checkpoint(&trained.flp, cfg.wgan.rng_seed, &out_dir.join("flp.ckpt"))?;
    save_checkpoint(&trained.critic, cfg.wgan.rng_seed, &out_dir.join("critic.ckpt"))?;

    let mut report = run_evaluation(cfg, &backends, &manifest.dataset_name, &test, &taa, &trained.flp)?;
    report.push(Record::Ablation(quality_row(
        cfg,
        &backends,
        &test,
        &taa,
        &trained.flp,
        final_epoch_loss(&trained.history),
    )?));
    report.save(&out_dir.join("report.jsonl"), &out_dir.join("report.md"))?;
    Ok(report)
}
