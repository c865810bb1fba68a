//! Deterministic synthetic fingerprint generator.
//!
//! Renders a sinusoidal ridge pattern along a smooth random orientation
//! field, places bright pore disks on ridge lines with exact ground-truth
//! coordinates, and adds clamped Gaussian noise. Everything is a pure
//! function of the config (including its seed), so datasets regenerate
//! bit-identically.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::{self, DataError, GrayImage, PoreAnnotations};

/// Pore centers stay this far from the borders, which also keeps the full
/// positive-jitter range of the 7×7 label box inside valid patch centers.
pub const PORE_MARGIN: usize = 11;
/// Minimum pairwise pore distance, so 7×7 truth boxes never overlap.
pub const MIN_PORE_DISTANCE: f64 = 8.0;

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    /// Ridge spacing in pixels (~1200 dpi ridge spacing scaled down).
    pub ridge_period: f64,
    pub pore_count: usize,
    pub pore_radius_min: f64,
    pub pore_radius_max: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            height: 96,
            width: 96,
            ridge_period: 12.0,
            pore_count: 24,
            pore_radius_min: 1.0,
            pore_radius_max: 3.0,
            noise_sigma: 0.01,
            seed: 0,
        }
    }
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("image dims {0}x{1} below the 64x64 minimum")]
    TooSmall(usize, usize),
    #[error("invalid pore radius range [{0}, {1}] (must be within [1, 3])")]
    BadRadiusRange(f64, f64),
    #[error("could not place {requested} pores with {MIN_PORE_DISTANCE} px spacing (placed {placed})")]
    InfeasiblePacking { requested: usize, placed: usize },
    #[error("generated pore at ({0}, {1}) is not a 5x5 local maximum; lower noise_sigma")]
    NotLocalMax(usize, usize),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Smooth phase field: a dominant ridge direction plus a few low-frequency
/// sinusoidal perturbations that bend the ridges.
struct PhaseField {
    base_freq: f64,
    cos0: f64,
    sin0: f64,
    waves: Vec<(f64, f64, f64, f64)>, // (amplitude, u, v, phase)
}

impl PhaseField {
    fn random(rng: &mut impl Rng, period: f64, height: usize, width: usize) -> Self {
        let theta0 = rng.random_range(0.0..PI);
        let min_dim = height.min(width) as f64;
        let waves = (0..3)
            .map(|_| {
                let amp = rng.random_range(0.5..1.5);
                let wavelength = rng.random_range(0.5..1.0) * min_dim;
                let psi = rng.random_range(0.0..2.0 * PI);
                let f = 1.0 / wavelength;
                (amp, f * psi.cos(), f * psi.sin(), rng.random_range(0.0..2.0 * PI))
            })
            .collect();
        Self {
            base_freq: 2.0 * PI / period,
            cos0: theta0.cos(),
            sin0: theta0.sin(),
            waves,
        }
    }

    fn phase(&self, row: f64, col: f64) -> f64 {
        let mut p = self.base_freq * (col * self.cos0 + row * self.sin0);
        for &(amp, u, v, phi) in &self.waves {
            p += amp * (2.0 * PI * (col * u + row * v) + phi).sin();
        }
        p
    }
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    // Box-Muller; one sample per call keeps the stream layout simple
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

/// Generate one fingerprint image with exact pore ground truth.
pub fn generate(config: &SynthConfig) -> Result<(GrayImage, PoreAnnotations), SynthError> {
    let (h, w) = (config.height, config.width);
    if h < 64 || w < 64 {
        return Err(SynthError::TooSmall(h, w));
    }
    if !(1.0..=3.0).contains(&config.pore_radius_min)
        || !(1.0..=3.0).contains(&config.pore_radius_max)
        || config.pore_radius_min > config.pore_radius_max
    {
        return Err(SynthError::BadRadiusRange(
            config.pore_radius_min,
            config.pore_radius_max,
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let field = PhaseField::random(&mut rng, config.ridge_period, h, w);

    // dark ridges (cos = -1 -> 0.25), bright valleys (cos = +1 -> 0.85)
    let mut pixels = vec![0.0f64; h * w];
    for r in 0..h {
        for c in 0..w {
            pixels[r * w + c] = 0.55 + 0.30 * field.phase(r as f64, c as f64).cos();
        }
    }

    // place pores on ridge lines with minimum spacing
    let mut pores: Vec<(usize, usize)> = Vec::with_capacity(config.pore_count);
    let max_attempts = 2000 * config.pore_count.max(1);
    let mut attempts = 0;
    while pores.len() < config.pore_count && attempts < max_attempts {
        attempts += 1;
        let r = rng.random_range(PORE_MARGIN..h - PORE_MARGIN);
        let c = rng.random_range(PORE_MARGIN..w - PORE_MARGIN);
        if field.phase(r as f64, c as f64).cos() > -0.9 {
            continue; // not on a ridge line
        }
        let min_d2 = MIN_PORE_DISTANCE * MIN_PORE_DISTANCE;
        if pores.iter().any(|&(pr, pc)| {
            let dr = pr as f64 - r as f64;
            let dc = pc as f64 - c as f64;
            dr * dr + dc * dc < min_d2
        }) {
            continue;
        }
        pores.push((r, c));
    }
    if pores.len() < config.pore_count {
        return Err(SynthError::InfeasiblePacking {
            requested: config.pore_count,
            placed: pores.len(),
        });
    }

    // bright pore bumps: white dots sitting on dark ridges
    for &(pr, pc) in &pores {
        let radius = rng.random_range(config.pore_radius_min..=config.pore_radius_max);
        let sigma = radius / 1.6;
        let extent = radius.ceil() as i64 + 2;
        for dr in -extent..=extent {
            for dc in -extent..=extent {
                let (r, c) = (pr as i64 + dr, pc as i64 + dc);
                if r < 0 || c < 0 || r >= h as i64 || c >= w as i64 {
                    continue;
                }
                let d2 = (dr * dr + dc * dc) as f64;
                let bump = (-d2 / (2.0 * sigma * sigma)).exp();
                let idx = r as usize * w + c as usize;
                pixels[idx] += (0.95 - pixels[idx]) * bump;
            }
        }
    }

    if config.noise_sigma > 0.0 {
        for p in &mut pixels {
            *p += config.noise_sigma * gaussian(&mut rng);
        }
    }
    for p in &mut pixels {
        *p = p.clamp(0.0, 1.0);
    }

    // every annotation must be the unique 5x5 local maximum
    for &(pr, pc) in &pores {
        let center = pixels[pr * w + pc];
        for dr in -2i64..=2 {
            for dc in -2i64..=2 {
                if dr == 0 && dc == 0 {
                    continue;
                }
                let idx = (pr as i64 + dr) as usize * w + (pc as i64 + dc) as usize;
                if pixels[idx] >= center {
                    return Err(SynthError::NotLocalMax(pr, pc));
                }
            }
        }
    }

    let mut pores = pores;
    pores.sort_unstable();
    Ok((GrayImage::new(h, w, pixels), PoreAnnotations { pores }))
}

/// Write `n_images` generated pairs into `dir` using the `data` module file
/// formats, with zero-padded names so the canonical sort is the generation
/// order. Image i uses seed `template.seed + i`.
pub fn generate_dataset(
    dir: &Path,
    n_images: usize,
    template: &SynthConfig,
) -> Result<(), SynthError> {
    if n_images < 3 {
        return Err(SynthError::InfeasiblePacking {
            requested: n_images,
            placed: 0,
        });
    }
    std::fs::create_dir_all(dir).map_err(DataError::from)?;
    for i in 0..n_images {
        let config = SynthConfig {
            seed: template.seed.wrapping_add(i as u64),
            ..template.clone()
        };
        let (image, annotations) = generate(&config)?;
        data::write_image(&dir.join(format!("img_{i:03}.pgm")), &image)?;
        data::write_annotations(&dir.join(format!("img_{i:03}.txt")), &annotations)?;
    }
    Ok(())
}
