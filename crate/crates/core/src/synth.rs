//! Deterministic synthetic multi-view packs.
//!
//! Every client owns a direction on the unit sphere of a small latent space.
//! A bona fide frame is that direction plus a per-video offset and per-frame
//! jitter; an attack frame is additionally pushed along a client- and
//! PAIS-specific direction orthogonal to the client centre. Each view sees
//! the latent vector through its own random rotation plus independent view
//! noise, then L2-normalised. Fusing views therefore averages out view noise.
//!
//! Randomness comes from ChaCha20 (`rand_chacha::ChaCha20Rng`) seeded with
//! [`SynthSpec::seed`]; draws happen in a fixed order, so the same spec
//! yields bit-identical packs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{OckrError, Result};
use crate::featurestore::{FeaturePack, FeatureRow, RowMeta, ViewId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewSpec {
    pub region: String,
    pub rep: String,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaisSpec {
    pub name: String,
    /// Multiplies [`SynthSpec::attack_shift`] for this species.
    #[serde(default = "one")]
    pub shift_multiplier: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub seed: u64,
    pub clients: usize,
    pub frames_per_video: usize,
    /// Bona fide videos per client in each of the dev and test splits.
    pub videos_per_client: usize,
    /// Bona fide videos per client in the enrolment split.
    pub enroll_videos: usize,
    /// Attack videos per client and PAIS in each of the dev and test splits.
    pub attack_videos_per_pais: usize,
    pub latent_dim: usize,
    pub views: Vec<ViewSpec>,
    /// Scale of the per-video offset around the client centre.
    pub spread: f64,
    /// Scale of the per-frame jitter around the video.
    pub frame_noise: f64,
    /// Scale of the independent noise added in every view.
    pub view_noise: f64,
    /// Log-scale spread of per-client multipliers on `spread` and `frame_noise`.
    pub client_spread_variation: f64,
    /// Distance attacks are pushed away from the client centre.
    pub attack_shift: f64,
    pub pais: Vec<PaisSpec>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        let mut views = Vec::new();
        for region in ["R1", "R2", "R3", "R4"] {
            for rep in ["N1", "N2", "N3"] {
                views.push(ViewSpec {
                    region: region.into(),
                    rep: rep.into(),
                    dim: 8,
                });
            }
        }
        SynthSpec {
            seed: 0,
            clients: 4,
            frames_per_video: 8,
            videos_per_client: 2,
            enroll_videos: 2,
            attack_videos_per_pais: 1,
            latent_dim: 16,
            views,
            spread: 0.3,
            frame_noise: 0.1,
            view_noise: 0.3,
            client_spread_variation: 0.0,
            attack_shift: 1.0,
            pais: vec![
                PaisSpec {
                    name: "print".into(),
                    shift_multiplier: 1.0,
                },
                PaisSpec {
                    name: "replay".into(),
                    shift_multiplier: 0.8,
                },
            ],
        }
    }
}

/// Enrolment (bona fide only), development and test packs.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthPacks {
    pub enroll: FeaturePack,
    pub dev: FeaturePack,
    pub test: FeaturePack,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(OckrError::Invalid(format!("degenerate synth spec: {msg}")));
        if self.clients == 0 {
            return bad("clients must be positive");
        }
        if self.frames_per_video == 0 || self.videos_per_client == 0 || self.enroll_videos == 0 {
            return bad("frames and video counts must be positive");
        }
        if self.enroll_videos * self.frames_per_video < 2 {
            return bad("each client needs at least two enrolment frames");
        }
        if self.latent_dim < 2 {
            return bad("latent_dim must be at least 2");
        }
        if self.views.is_empty() {
            return bad("at least one view is required");
        }
        if self.views.iter().any(|v| v.dim < 2) {
            return bad("view dims must be at least 2");
        }
        if self.pais.is_empty() {
            return bad("at least one PAIS is required");
        }
        let reals = [
            self.spread,
            self.frame_noise,
            self.view_noise,
            self.client_spread_variation,
            self.attack_shift,
        ];
        if reals.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return bad("spreads, noise levels and shift must be finite and non-negative");
        }
        if self
            .pais
            .iter()
            .any(|p| p.name.is_empty() || !p.shift_multiplier.is_finite())
        {
            return bad("PAIS names must be non-empty with finite multipliers");
        }
        let mut ids: Vec<_> = self.views.iter().map(|v| (&v.region, &v.rep)).collect();
        ids.sort();
        ids.dedup();
        if ids.len() != self.views.len() {
            return bad("duplicate view");
        }
        Ok(())
    }
}

fn gaussian_vec(rng: &mut ChaCha20Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn normalised(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in &mut v {
        *x /= norm;
    }
    v
}

/// Random `dim x latent` map with orthonormal columns (or rows, when
/// `dim < latent`), stored row-major.
fn random_rotation(rng: &mut ChaCha20Rng, dim: usize, latent: usize) -> Vec<Vec<f64>> {
    let (count, len) = if dim >= latent {
        (latent, dim)
    } else {
        (dim, latent)
    };
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v = gaussian_vec(rng, len, 1.0);
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= dot * y;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    if dim >= latent {
        // Columns are the basis vectors.
        (0..dim)
            .map(|r| basis.iter().map(|b| b[r]).collect())
            .collect()
    } else {
        basis
    }
}

struct Client {
    centre: Vec<f64>,
    scale: f64,
    attack_dirs: Vec<Vec<f64>>,
}

struct Sample {
    meta: RowMeta,
    latent: Vec<f64>,
}

pub fn generate(spec: &SynthSpec) -> Result<SynthPacks> {
    spec.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let l = spec.latent_dim;

    let rotations: Vec<Vec<Vec<f64>>> = spec
        .views
        .iter()
        .map(|v| random_rotation(&mut rng, v.dim, l))
        .collect();

    let clients: Vec<Client> = (0..spec.clients)
        .map(|_| {
            let centre = normalised(gaussian_vec(&mut rng, l, 1.0));
            let z: f64 = rng.sample(StandardNormal);
            let scale = (spec.client_spread_variation * z).exp();
            let attack_dirs = spec
                .pais
                .iter()
                .map(|_| {
                    let mut w = gaussian_vec(&mut rng, l, 1.0);
                    let dot: f64 = w.iter().zip(&centre).map(|(a, b)| a * b).sum();
                    for (a, b) in w.iter_mut().zip(&centre) {
                        *a -= dot * b;
                    }
                    normalised(w)
                })
                .collect();
            Client {
                centre,
                scale,
                attack_dirs,
            }
        })
        .collect();

    let inv_sqrt_l = 1.0 / (l as f64).sqrt();
    let video = |rng: &mut ChaCha20Rng,
                 c: &Client,
                 client_id: &str,
                 video_id: String,
                 attack: Option<(usize, &PaisSpec)>|
     -> Vec<Sample> {
        let offset = gaussian_vec(rng, l, spec.spread * c.scale * inv_sqrt_l);
        (0..spec.frames_per_video)
            .map(|f| {
                let jitter = gaussian_vec(rng, l, spec.frame_noise * c.scale * inv_sqrt_l);
                let mut latent: Vec<f64> = c
                    .centre
                    .iter()
                    .zip(&offset)
                    .zip(&jitter)
                    .map(|((a, b), e)| a + b + e)
                    .collect();
                let meta = match attack {
                    Some((p, pais)) => {
                        let shift = spec.attack_shift * pais.shift_multiplier;
                        for (x, w) in latent.iter_mut().zip(&c.attack_dirs[p]) {
                            *x += shift * w;
                        }
                        RowMeta::attack(client_id, video_id.clone(), f as u64, pais.name.clone())
                    }
                    None => RowMeta::bonafide(client_id, video_id.clone(), f as u64),
                };
                Sample { meta, latent }
            })
            .collect()
    };

    let mut splits: Vec<Vec<Sample>> = Vec::with_capacity(3);
    for (split, prefix) in [(0, 'e'), (1, 'd'), (2, 't')] {
        let mut samples = Vec::new();
        for (ci, c) in clients.iter().enumerate() {
            let client_id = format!("c{ci:03}");
            let bona_videos = if split == 0 {
                spec.enroll_videos
            } else {
                spec.videos_per_client
            };
            for v in 0..bona_videos {
                samples.extend(video(
                    &mut rng,
                    c,
                    &client_id,
                    format!("{prefix}{v:03}"),
                    None,
                ));
            }
            if split > 0 {
                for (p, pais) in spec.pais.iter().enumerate() {
                    for v in 0..spec.attack_videos_per_pais {
                        let vid = format!("{prefix}a-{}-{v:03}", pais.name);
                        samples.extend(video(&mut rng, c, &client_id, vid, Some((p, pais))));
                    }
                }
            }
        }
        splits.push(samples);
    }

    // View noise is drawn after all latents so that adding or removing a
    // view does not disturb the latent draws of the others.
    let mut packs = Vec::with_capacity(3);
    for samples in &splits {
        let mut views = Vec::with_capacity(spec.views.len());
        for (vs, rot) in spec.views.iter().zip(&rotations) {
            let noise_scale = spec.view_noise / (vs.dim as f64).sqrt();
            let rows = samples
                .iter()
                .map(|s| {
                    let noise = gaussian_vec(&mut rng, vs.dim, noise_scale);
                    let vector = rot
                        .iter()
                        .zip(&noise)
                        .map(|(r, e)| r.iter().zip(&s.latent).map(|(a, b)| a * b).sum::<f64>() + e)
                        .collect();
                    FeatureRow {
                        meta: s.meta.clone(),
                        vector,
                    }
                })
                .collect();
            views.push((ViewId::new(vs.region.clone(), vs.rep.clone()), rows));
        }
        packs.push(FeaturePack::from_view_rows(views)?);
    }
    let test = packs.pop().expect("three splits");
    let dev = packs.pop().expect("three splits");
    let enroll = packs.pop().expect("three splits");
    Ok(SynthPacks { enroll, dev, test })
}
