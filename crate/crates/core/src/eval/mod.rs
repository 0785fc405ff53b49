//! Attack evaluation: verification protocols, image-quality metrics, region
//! similarity, transfer matrices and report serialization.

pub mod famse;
pub mod msssim;
pub mod report;
pub mod verification;

pub use famse::{famse, famse_breakdown, FamseBreakdown};
pub use msssim::{ms_ssim, MsSsimConfig};
pub use verification::{
    calibrate_threshold, run_verification, tar_at_far, AttackFn, EvalSample, OperatingPoint,
    Protocol, ScoreSet, VerificationOutcome, VerificationSetup, STANDARD_FARS,
};

use crate::backends::{BackendRegistry, ImageTensor, VisionLanguageEncoder};
use crate::error::{Error, Result};
use crate::nn;
use crate::semantics::SemanticEmbedding;

/// Cosine between the image's VL embedding and each region segment of `s`.
pub fn region_semantic_similarity(
    image: &ImageTensor,
    s: &SemanticEmbedding,
    vl_encoder: &dyn VisionLanguageEncoder,
) -> Result<Vec<(String, f64)>> {
    let r = s.region_order.len();
    if r == 0 || s.values.len() % r != 0 {
        return Err(Error::DimensionMismatch {
            context: "semantic embedding vs region count",
            expected: r.max(1) * vl_encoder.dim(),
            got: s.values.len(),
        });
    }
    let emb = vl_encoder.encode_image(image)?;
    if emb.dim() != s.region_dim() {
        return Err(Error::DimensionMismatch {
            context: "semantic segment vs image embedding",
            expected: emb.dim(),
            got: s.region_dim(),
        });
    }
    Ok(s.region_order
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let c = nn::cosine(&emb.values, s.segment(i)).unwrap_or(0.0);
            (name.clone(), c)
        })
        .collect())
}

/// One leaked/surrogate backbone combination and the attack trained for it.
pub struct LeakPair<'a> {
    pub f_database: String,
    pub f_loss: String,
    pub attack: &'a AttackFn<'a>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferCell {
    pub f_database: String,
    pub f_loss: String,
    pub f_target: String,
    pub dataset: String,
    pub tar: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferMatrix {
    pub far: f64,
    /// Row-major over pairs, then targets, then datasets.
    pub cells: Vec<TransferCell>,
}

impl TransferMatrix {
    pub fn cell(&self, f_database: &str, f_loss: &str, f_target: &str, dataset: &str) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| {
                c.f_database == f_database
                    && c.f_loss == f_loss
                    && c.f_target == f_target
                    && c.dataset == dataset
            })
            .map(|c| c.tar)
    }
}

/// Type-I TAR at `far` for every leak pair, target backbone and dataset.
pub fn transfer_matrix(
    pairs: &[LeakPair<'_>],
    targets: &[&str],
    datasets: &[(&str, &[EvalSample])],
    far: f64,
    backends: &BackendRegistry,
    impostor_cap: usize,
    seed: u64,
) -> Result<TransferMatrix> {
    for id in pairs
        .iter()
        .flat_map(|p| [p.f_database.as_str(), p.f_loss.as_str()])
        .chain(targets.iter().copied())
    {
        backends.fr(id)?;
    }
    let mut cells = Vec::with_capacity(pairs.len() * targets.len() * datasets.len());
    for pair in pairs {
        for &target in targets {
            for &(name, samples) in datasets {
                let setup = VerificationSetup {
                    f_database: &pair.f_database,
                    f_target: target,
                    protocol: Protocol::Type1,
                    far_levels: &[far],
                    impostor_cap,
                    seed,
                };
                let out = run_verification(samples, pair.attack, backends, &setup)?;
                cells.push(TransferCell {
                    f_database: pair.f_database.clone(),
                    f_loss: pair.f_loss.clone(),
                    f_target: target.to_string(),
                    dataset: name.to_string(),
                    tar: out.points[0].tar,
                });
            }
        }
    }
    Ok(TransferMatrix { far, cells })
}
