use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use fti_core::backends::{FaceTemplate, ImageTensor};
use fti_core::eval::report::{transfer_records, Report};
use fti_core::eval::{transfer_matrix, LeakPair};
use fti_core::flp::FLPParams;
use fti_core::pipeline::{
    self, load_checkpoint, load_manifest, load_template, save_checkpoint, save_png,
    save_template, AblationToggles, MetricsLog, OutputLock, RunConfig, Split, SynthSpec,
};
use fti_core::taa::TAAParams;

#[derive(Parser)]
#[command(name = "fti", version, about = "Face template inversion: train, attack, evaluate")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; keys not given fall back to the profile.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in profile used when no config file is given.
    #[arg(long, global = true, default_value = "defaults")]
    profile: String,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Encode the prompt file into a prompt bank.
    EncodeBank {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the template-to-attribute adapter on the train split.
    TrainTaa {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train the projector and critic on the train split.
    TrainFlp {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        taa: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Reconstruct faces from template files.
    Attack {
        #[arg(long)]
        taa: PathBuf,
        #[arg(long)]
        flp: PathBuf,
        #[arg(long = "template", required = true)]
        templates: Vec<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        noise_seed: u64,
    },
    /// Type-I/II verification and quality metrics on the test split.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        taa: PathBuf,
        #[arg(long)]
        flp: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Type-I TAR for every configured target model.
    Transfer {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        taa: PathBuf,
        #[arg(long)]
        flp: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 1e-3)]
        far: f64,
    },
    /// Train and evaluate every standard ablation variant.
    Ablate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        taa: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Bank, TAA, projector and evaluation in one go.
    RunAll {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Render a synthetic dataset with the stub generator.
    SynthDataset {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 8)]
        train_ids: usize,
        #[arg(long, default_value_t = 8)]
        test_ids: usize,
        #[arg(long, default_value_t = 3)]
        per_id: usize,
    },
    /// Write the template an FR model produces for an image.
    ExtractTemplate {
        #[arg(long)]
        image: PathBuf,
        /// FR model id; defaults to the configured F_database.
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        out: PathBuf,
        /// Write the plain-text format instead of binary.
        #[arg(long)]
        text: bool,
    },
}

fn load_config(c: &Common) -> Result<RunConfig> {
    let cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::profile(&c.profile)?,
    };
    Ok(match c.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn train_images(manifest: &Path) -> Result<(pipeline::DatasetManifest, Vec<ImageTensor>)> {
    let m = load_manifest(manifest)?;
    let imgs: Vec<ImageTensor> = pipeline::load_split(&m, Split::Train)?
        .into_iter()
        .map(|s| s.image)
        .collect();
    if imgs.is_empty() {
        bail!("manifest {} has no train records", manifest.display());
    }
    Ok((m, imgs))
}

fn test_samples(manifest: &Path) -> Result<(pipeline::DatasetManifest, Vec<fti_core::eval::EvalSample>)> {
    let m = load_manifest(manifest)?;
    let s = pipeline::load_split(&m, Split::Test)?;
    if s.is_empty() {
        bail!("manifest {} has no test records", manifest.display());
    }
    Ok((m, s))
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.common)?;
    match cli.command {
        Command::EncodeBank { out } => {
            let backends = cfg.build_backends()?;
            pipeline::prompt_bank(&cfg, &backends)?.save_json(&out)?;
        }
        Command::TrainTaa { manifest, out_dir } => {
            let _lock = OutputLock::acquire(&out_dir)?;
            let backends = cfg.build_backends()?;
            let bank = pipeline::prompt_bank(&cfg, &backends)?;
            let (_, imgs) = train_images(&manifest)?;
            let mut log = MetricsLog::open(&out_dir.join("metrics.jsonl"))?;
            let out = pipeline::run_train_taa(&cfg, &backends, &bank, &imgs, Some(&mut log))?;
            save_checkpoint(&out.params, cfg.taa.rng_seed, &out_dir.join("taa.ckpt"))?;
        }
        Command::TrainFlp {
            manifest,
            taa,
            out_dir,
        } => {
            let _lock = OutputLock::acquire(&out_dir)?;
            let backends = cfg.build_backends()?;
            let bank = pipeline::prompt_bank(&cfg, &backends)?;
            let (taa, _) = load_checkpoint::<TAAParams>(&taa)?;
            let (_, imgs) = train_images(&manifest)?;
            let mut log = MetricsLog::open(&out_dir.join("metrics.jsonl"))?;
            let out = pipeline::run_train_flp(&cfg, &backends, &bank, &imgs, &taa, Some(&mut log))?;
            save_checkpoint(&out.flp, cfg.wgan.rng_seed, &out_dir.join("flp.ckpt"))?;
            save_checkpoint(&out.critic, cfg.wgan.rng_seed, &out_dir.join("critic.ckpt"))?;
        }
        Command::Attack {
            taa,
            flp,
            templates,
            out_dir,
            noise_seed,
        } => {
            let _lock = OutputLock::acquire(&out_dir)?;
            let backends = cfg.build_backends()?;
            let (taa, _) = load_checkpoint::<TAAParams>(&taa)?;
            let (flp, _) = load_checkpoint::<FLPParams>(&flp)?;
            for path in &templates {
                let t: FaceTemplate = load_template(path)?;
                let out = pipeline::attack(&t, &taa, &flp, &backends, noise_seed)
                    .with_context(|| format!("attacking {}", path.display()))?;
                let stem = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "template".into());
                save_png(&out.image, &out_dir.join(format!("{stem}.png")))?;
            }
        }
        Command::Evaluate {
            manifest,
            taa,
            flp,
            out_dir,
        } => {
            let _lock = OutputLock::acquire(&out_dir)?;
            let backends = cfg.build_backends()?;
            let (taa, _) = load_checkpoint::<TAAParams>(&taa)?;
            let (flp, _) = load_checkpoint::<FLPParams>(&flp)?;
            let (m, test) = test_samples(&manifest)?;
            let mut report =
                pipeline::run_evaluation(&cfg, &backends, &m.dataset_name, &test, &taa, &flp)?;
            report.push(fti_core::eval::report::Record::Ablation(pipeline::quality_row(
                &cfg, &backends, &test, &taa, &flp, None,
            )?));
            report.save(&out_dir.join("report.jsonl"), &out_dir.join("report.md"))?;
        }
        Command::Transfer {
            manifest,
            taa,
            flp,
            out_dir,
            far,
        } => {
            let _lock = OutputLock::acquire(&out_dir)?;
            let backends = cfg.build_backends()?;
            let (taa, _) = load_checkpoint::<TAAParams>(&taa)?;
            let (flp, _) = load_checkpoint::<FLPParams>(&flp)?;
            let (m, test) = test_samples(&manifest)?;
            let attack_fn = |t: &FaceTemplate| -> fti_core::Result<ImageTensor> {
                Ok(pipeline::attack(t, &taa, &flp, &backends, cfg.eval.noise_seed)?.image)
            };
            let pairs = [LeakPair {
                f_database: cfg.backends.f_database.clone(),
                f_loss: cfg.backends.f_loss.clone(),
                attack: &attack_fn,
            }];
            let targets: Vec<&str> = cfg.backends.f_targets.iter().map(String::as_str).collect();
            let matrix = transfer_matrix(
                &pairs,
                &targets,
                &[(m.dataset_name.as_str(), test.as_slice())],
                far,
                &backends,
                cfg.eval.impostor_cap,
                cfg.seed,
            )?;
            let report = Report {
                records: transfer_records(&cfg.eval.method, &matrix),
            };
            report.save(&out_dir.join("transfer.jsonl"), &out_dir.join("transfer.md"))?;
        }
        Command::Ablate {
            manifest,
            taa,
            out_dir,
        } => {
            let _lock = OutputLock::acquire(&out_dir)?;
            let backends = cfg.build_backends()?;
            let bank = pipeline::prompt_bank(&cfg, &backends)?;
            let (taa, _) = load_checkpoint::<TAAParams>(&taa)?;
            let (_, imgs) = train_images(&manifest)?;
            let (_, test) = test_samples(&manifest)?;
            let report = pipeline::run_ablation(
                &cfg,
                &backends,
                &bank,
                &imgs,
                &test,
                &taa,
                &AblationToggles::standard_variants(),
            )?;
            report.save(&out_dir.join("ablation.jsonl"), &out_dir.join("ablation.md"))?;
        }
        Command::RunAll { manifest, out_dir } => {
            pipeline::run_all(&cfg, &load_manifest(&manifest)?, &out_dir)?;
        }
        Command::SynthDataset {
            out_dir,
            train_ids,
            test_ids,
            per_id,
        } => {
            let _lock = OutputLock::acquire(&out_dir)?;
            let backends = cfg.build_backends()?;
            let spec = SynthSpec {
                train_identities: train_ids,
                test_identities: test_ids,
                test_images_per_identity: per_id,
                seed: cfg.seed,
                ..Default::default()
            };
            pipeline::write_synth_dataset(&backends, &spec, &out_dir)?;
        }
        Command::ExtractTemplate {
            image,
            model,
            out,
            text,
        } => {
            let backends = cfg.build_backends()?;
            let img = pipeline::load_png(&image)?;
            let id = model.unwrap_or_else(|| cfg.backends.f_database.clone());
            save_template(&backends.fr_embed(&id, &img)?, &out, !text)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let chain: Vec<String> = e.chain().map(ToString::to_string).collect();
            eprintln!("error: {}", chain.join(": "));
            ExitCode::FAILURE
        }
    }
}
