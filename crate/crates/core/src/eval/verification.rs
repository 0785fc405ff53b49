//! Threshold calibration on impostor scores and TAR at fixed FAR, with
//! Type-I / Type-II attack protocols.

use std::collections::BTreeMap;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::backends::{BackendRegistry, FaceTemplate, ImageTensor};
use crate::error::{Error, Result};
use crate::nn::{self, rng_from_seed};

/// The operating points reported throughout: 1%, 0.1%, 0.01%.
pub const STANDARD_FARS: [f64; 3] = [1e-2, 1e-3, 1e-4];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    /// Reconstruction compared against its own source image.
    Type1,
    /// Reconstruction from a sibling image compared against the enrolled one.
    Type2,
}

impl Protocol {
    pub fn label(&self) -> &'static str {
        match self {
            Protocol::Type1 => "Type-I",
            Protocol::Type2 => "Type-II",
        }
    }

    pub fn from_label(s: &str) -> Result<Self> {
        match s {
            "Type-I" | "type1" => Ok(Protocol::Type1),
            "Type-II" | "type2" => Ok(Protocol::Type2),
            other => Err(Error::Report(format!("unknown protocol '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    pub genuine: Vec<f64>,
    pub impostor: Vec<f64>,
    pub protocol: Protocol,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub far: f64,
    pub threshold: f64,
    pub tar: f64,
}

fn check_far(far: f64) -> Result<()> {
    if far > 0.0 && far <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("FAR target {far} outside (0, 1]")))
    }
}

/// Smallest observed impostor score `tau` with `|{s >= tau}| / N <= far`.
///
/// When even the maximum score is too permissive, returns the next float above
/// the maximum so that no impostor is accepted.
pub fn calibrate_threshold(impostor_scores: &[f64], far_target: f64) -> Result<f64> {
    check_far(far_target)?;
    if impostor_scores.is_empty() {
        return Err(Error::Empty("impostor scores".into()));
    }
    if impostor_scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidVector("non-finite impostor score".into()));
    }
    let mut sorted = impostor_scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let n = sorted.len() as f64;
    let mut best = None;
    let mut i = 0;
    while i < sorted.len() {
        let v = sorted[i];
        // count every score equal to v as accepted
        let mut j = i;
        while j < sorted.len() && sorted[j] == v {
            j += 1;
        }
        if j as f64 / n <= far_target {
            best = Some(v);
            i = j;
        } else {
            break;
        }
    }
    Ok(best.unwrap_or_else(|| sorted[0].next_up()))
}

pub fn accept_rate(scores: &[f64], threshold: f64) -> f64 {
    scores.iter().filter(|&&s| s >= threshold).count() as f64 / scores.len() as f64
}

pub fn tar_at_far(score_set: &ScoreSet, far_levels: &[f64]) -> Result<Vec<OperatingPoint>> {
    if score_set.genuine.is_empty() {
        return Err(Error::Empty("genuine scores".into()));
    }
    far_levels
        .iter()
        .map(|&far| {
            let threshold = calibrate_threshold(&score_set.impostor, far)?;
            Ok(OperatingPoint {
                far,
                threshold,
                tar: accept_rate(&score_set.genuine, threshold),
            })
        })
        .collect()
}

/// One labelled evaluation image.
#[derive(Debug, Clone)]
pub struct EvalSample {
    pub image: ImageTensor,
    pub identity: String,
}

/// Template-only attack: template in, reconstructed image out.
pub type AttackFn<'a> = dyn Fn(&FaceTemplate) -> Result<ImageTensor> + 'a;

#[derive(Debug, Clone)]
pub struct VerificationSetup<'a> {
    pub f_database: &'a str,
    pub f_target: &'a str,
    pub protocol: Protocol,
    pub far_levels: &'a [f64],
    pub impostor_cap: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct VerificationOutcome {
    pub scores: ScoreSet,
    pub points: Vec<OperatingPoint>,
    /// Identities skipped under Type-II for having fewer than two images.
    pub skipped_identities: usize,
}

/// Cross-identity scores between gallery templates, capped with seeded
/// subsampling.
pub fn impostor_scores(
    templates: &[FaceTemplate],
    identities: &[&str],
    cap: usize,
    seed: u64,
) -> Vec<f64> {
    let n = templates.len();
    let mut pairs_total = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            if identities[i] != identities[j] {
                pairs_total += 1;
            }
        }
    }
    let keep: Option<Vec<usize>> = (pairs_total > cap).then(|| {
        let mut rng = rng_from_seed(seed);
        let mut v = index::sample(&mut rng, pairs_total, cap).into_vec();
        v.sort_unstable();
        v
    });
    let mut out = Vec::with_capacity(pairs_total.min(cap));
    let mut k = 0usize;
    let mut next = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            if identities[i] == identities[j] {
                continue;
            }
            let take = match &keep {
                None => true,
                Some(sel) => next < sel.len() && sel[next] == k,
            };
            if take {
                out.push(
                    nn::cosine(&templates[i].values, &templates[j].values).unwrap_or(0.0),
                );
                next += 1;
            }
            k += 1;
        }
    }
    out
}

/// Groups sample indices by identity, preserving first-appearance order.
pub fn identity_groups(samples: &[EvalSample]) -> Vec<(String, Vec<usize>)> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        let g = groups.entry(s.identity.as_str()).or_default();
        if g.is_empty() {
            order.push(s.identity.clone());
        }
        g.push(i);
    }
    order
        .into_iter()
        .map(|id| {
            let idx = groups[id.as_str()].clone();
            (id, idx)
        })
        .collect()
}

/// `(enrolled, probe_source)` index pairs for a protocol.
///
/// Type-I pairs every image with itself. Type-II walks each identity's images
/// in order and pairs image `k` with its successor `k + 1`, giving `n - 1`
/// pairs for an identity with `n` images.
pub fn genuine_pairs(samples: &[EvalSample], protocol: Protocol) -> (Vec<(usize, usize)>, usize) {
    match protocol {
        Protocol::Type1 => ((0..samples.len()).map(|i| (i, i)).collect(), 0),
        Protocol::Type2 => {
            let mut pairs = Vec::new();
            let mut skipped = 0;
            for (_, idx) in identity_groups(samples) {
                if idx.len() < 2 {
                    skipped += 1;
                    continue;
                }
                pairs.extend(idx.windows(2).map(|w| (w[0], w[1])));
            }
            (pairs, skipped)
        }
    }
}

pub fn run_verification(
    samples: &[EvalSample],
    attack: &AttackFn<'_>,
    backends: &BackendRegistry,
    setup: &VerificationSetup<'_>,
) -> Result<VerificationOutcome> {
    if samples.is_empty() {
        return Err(Error::Empty("evaluation dataset".into()));
    }
    let gallery: Vec<FaceTemplate> = samples
        .iter()
        .map(|s| backends.fr_embed(setup.f_target, &s.image))
        .collect::<Result<_>>()?;
    let identities: Vec<&str> = samples.iter().map(|s| s.identity.as_str()).collect();
    let impostor = impostor_scores(&gallery, &identities, setup.impostor_cap, setup.seed);
    if impostor.is_empty() {
        return Err(Error::Empty(
            "impostor pairs (dataset needs at least two identities)".into(),
        ));
    }
    let (pairs, skipped) = genuine_pairs(samples, setup.protocol);
    let mut genuine = Vec::with_capacity(pairs.len());
    for (enrolled, source) in pairs {
        let leaked = backends.fr_embed(setup.f_database, &samples[source].image)?;
        let recon = attack(&leaked)?;
        let probe = backends.fr_embed(setup.f_target, &recon)?;
        genuine.push(nn::cosine(&probe.values, &gallery[enrolled].values).unwrap_or(0.0));
    }
    let scores = ScoreSet {
        genuine,
        impostor,
        protocol: setup.protocol,
    };
    let points = tar_at_far(&scores, setup.far_levels)?;
    Ok(VerificationOutcome {
        scores,
        points,
        skipped_identities: skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_scores_at_ten_percent() {
        let s: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        assert_eq!(calibrate_threshold(&s, 0.10).unwrap(), 1.0);
        assert_eq!(calibrate_threshold(&s, 1.0).unwrap(), 0.1);
        assert_eq!(calibrate_threshold(&s, 0.25).unwrap(), 0.9);
    }

    #[test]
    fn too_strict_far_accepts_nothing() {
        let s = [0.1, 0.5, 0.9];
        let t = calibrate_threshold(&s, 0.01).unwrap();
        assert!(t > 0.9);
        assert_eq!(accept_rate(&s, t), 0.0);
    }

    #[test]
    fn ties_are_counted_together() {
        let s = [0.5, 0.5, 0.5, 0.1];
        // accepting 0.5 lets 3/4 through, so only a threshold above 0.5 works
        let t = calibrate_threshold(&s, 0.5).unwrap();
        assert!(t > 0.5);
        assert_eq!(calibrate_threshold(&s, 0.75).unwrap(), 0.5);
    }

    #[test]
    fn calibration_errors() {
        assert!(matches!(calibrate_threshold(&[], 0.1), Err(Error::Empty(_))));
        assert!(calibrate_threshold(&[0.1], 0.0).is_err());
        assert!(calibrate_threshold(&[0.1], 1.5).is_err());
    }

    #[test]
    fn perfect_separation() {
        let set = ScoreSet {
            genuine: vec![0.99; 50],
            impostor: vec![0.01; 500],
            protocol: Protocol::Type1,
        };
        for p in tar_at_far(&set, &STANDARD_FARS).unwrap() {
            assert_eq!(p.tar, 1.0);
        }
    }

    #[test]
    fn empty_genuine_rejected() {
        let set = ScoreSet {
            genuine: vec![],
            impostor: vec![0.1],
            protocol: Protocol::Type1,
        };
        assert!(matches!(tar_at_far(&set, &[0.1]), Err(Error::Empty(_))));
    }
}
