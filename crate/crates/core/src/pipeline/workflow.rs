//! Annotation, generation and interpolation drivers.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::corpus::{
    write_landmark_csv, write_pair_csv, CorpusManifest, ManifestEntry, IMAGE_DIR, LANDMARK_FILE,
    MANIFEST_FILE,
};
use super::io::{create_dir, write_atomic, write_png};
use crate::began::{sample_faces, LatentVector};
use crate::diffcore::{Element, NetworkSpec, Tensor};
use crate::error::{Error, Result};
use crate::inversion::{invert, mirror, InversionConfig, InversionResult};
use crate::lgen::{lgen_forward, LGenModel, LandmarkSet, TrainingPair};

/// Independent per-item seed derived from a run seed (SplitMix64 mix).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn generator_n_z<T: Element>(gen: &NetworkSpec<T>) -> Result<usize> {
    match gen.input_shape() {
        [n] => Ok(*n),
        s => Err(Error::Shape(format!(
            "generator input must be a vector, got {s:?}"
        ))),
    }
}

#[derive(Debug, Clone)]
pub struct Annotation {
    /// Input manifest with latents and final errors filled in.
    pub manifest: CorpusManifest,
    pub pairs: Vec<TrainingPair>,
    pub results: Vec<InversionResult>,
}

/// Inverts every corpus image (`images[i]` belongs to entry `i`) and pairs
/// the recovered latent with the entry's landmarks.
pub fn annotate_images<T: Element>(
    manifest: &CorpusManifest,
    images: &[Tensor<T>],
    gen: &NetworkSpec<T>,
    cfg: &InversionConfig,
    seed: u64,
) -> Result<Annotation> {
    if images.len() != manifest.entries.len() {
        return Err(Error::Argument(format!(
            "{} images for {} manifest entries",
            images.len(),
            manifest.entries.len()
        )));
    }
    if let Some(img) = images.first() {
        if img.shape() != gen.output_shape() {
            return Err(Error::Config(format!(
                "corpus images are {:?}, generator produces {:?}",
                img.shape(),
                gen.output_shape()
            )));
        }
    }
    let results = images
        .par_iter()
        .zip(&manifest.entries)
        .enumerate()
        .map(|(i, (img, entry))| {
            invert(img, gen, cfg, derive_seed(seed, i as u64))
                .map_err(|e| e.context(format!("inverting {}", entry.image)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = manifest.clone();
    let mut pairs = Vec::with_capacity(results.len());
    for (entry, r) in out.entries.iter_mut().zip(&results) {
        entry.latent = Some(r.z_r.clone());
        entry.err_final = Some(r.final_err());
        pairs.push(TrainingPair {
            image_ref: entry.image.clone(),
            z: r.z_r.clone(),
            target: entry.landmarks.clone(),
        });
    }
    Ok(Annotation {
        manifest: out,
        pairs,
        results,
    })
}

/// Loads the manifest's images, annotates them and writes the pair CSV
/// (and, if given, the annotated manifest).
pub fn annotate_corpus<T: Element>(
    manifest: &CorpusManifest,
    root: &Path,
    gen: &NetworkSpec<T>,
    cfg: &InversionConfig,
    seed: u64,
    pairs_out: &Path,
    manifest_out: Option<&Path>,
) -> Result<Annotation> {
    let shape = gen.output_shape();
    if shape.len() != 3 || shape[1] != manifest.image_size || shape[2] != manifest.image_size {
        return Err(Error::Config(format!(
            "manifest images are {0}x{0}, generator produces {shape:?}",
            manifest.image_size
        )));
    }
    let images = manifest.load_images::<T>(root, shape[0])?;
    let ann = annotate_images(manifest, &images, gen, cfg, seed)?;
    write_pair_csv(
        pairs_out,
        &ann.pairs,
        generator_n_z(gen)?,
        manifest.landmark_count,
    )?;
    if let Some(path) = manifest_out {
        ann.manifest.save(path)?;
    }
    Ok(ann)
}

/// Draws `n` latents, renders each through the generator and the landmark
/// network, and writes images, `landmarks.csv` and a manifest recording the
/// exact latents.
pub fn generate_annotated<T: Element, U: Element>(
    gen: &NetworkSpec<T>,
    lgen: &LGenModel<U>,
    n: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<CorpusManifest> {
    let n_z = generator_n_z(gen)?;
    if n_z != lgen.n_z() {
        return Err(Error::Config(format!(
            "generator n_z {n_z} differs from landmark network n_z {}",
            lgen.n_z()
        )));
    }
    let image_size = gen.output_shape().last().copied().unwrap_or(0);
    create_dir(&out_dir.join(IMAGE_DIR))?;
    let (images, latents) = sample_faces(gen, n, seed)?;
    let mut entries = Vec::with_capacity(n);
    for (i, (img, z)) in images.iter().zip(latents).enumerate() {
        let image = format!("{IMAGE_DIR}/gen_{i:05}.png");
        write_png(&out_dir.join(&image), img)?;
        entries.push(ManifestEntry {
            image,
            landmarks: lgen_forward(lgen, &z)?,
            latent: Some(z),
            err_final: None,
        });
    }
    let manifest = CorpusManifest {
        image_size,
        landmark_count: lgen.landmark_count(),
        seed,
        entries,
    };
    write_landmark_csv(
        &out_dir.join(LANDMARK_FILE),
        &manifest.landmark_rows(),
        manifest.landmark_count,
    )?;
    manifest.save(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// `[z_a, z_a + i/(n+1)·(z_b − z_a) for i in 1..=n, z_b]`.
pub fn interpolate_latent(
    z_a: &LatentVector,
    z_b: &LatentVector,
    n_points: usize,
) -> Result<Vec<LatentVector>> {
    if z_a.dim() != z_b.dim() {
        return Err(Error::Shape(format!(
            "latent dims differ: {} vs {}",
            z_a.dim(),
            z_b.dim()
        )));
    }
    let mut out = vec![z_a.clone()];
    let denom = (n_points + 1) as f64;
    for i in 1..=n_points {
        let t = i as f64 / denom;
        let v = z_a
            .values()
            .iter()
            .zip(z_b.values())
            .map(|(a, b)| a + t * (b - a))
            .collect();
        // a convex combination stays in range up to rounding
        out.push(LatentVector::clamped(v)?);
    }
    out.push(z_b.clone());
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessReport {
    pub frames: usize,
    /// Mean landmark displacement between consecutive frames.
    pub step_displacements: Vec<f64>,
    pub mean_displacement: f64,
    pub max_displacement: f64,
    /// `max / mean`; zero for a constant path.
    pub max_over_mean: f64,
    /// Euclidean latent distance between consecutive frames.
    pub latent_steps: Vec<f64>,
    /// Largest deviation of any latent step from the mean step.
    pub latent_spacing_deviation: f64,
    pub err_a: f64,
    pub err_b: f64,
}

#[derive(Debug, Clone)]
pub struct Interpolation<T> {
    pub z_a: LatentVector,
    pub z_b: LatentVector,
    pub latents: Vec<LatentVector>,
    pub images: Vec<Tensor<T>>,
    pub landmarks: Vec<LandmarkSet>,
    pub report: SmoothnessReport,
}

/// Inverts `image` and its mirror, walks the straight latent path between
/// the two codes and renders every point through both networks.
pub fn interpolation_experiment<T: Element, U: Element>(
    image: &Tensor<T>,
    gen: &NetworkSpec<T>,
    lgen: &LGenModel<U>,
    n_points: usize,
    inv_cfg: &InversionConfig,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<Interpolation<T>> {
    let n_z = generator_n_z(gen)?;
    if n_z != lgen.n_z() {
        return Err(Error::Config(format!(
            "generator n_z {n_z} differs from landmark network n_z {}",
            lgen.n_z()
        )));
    }
    let ra =
        invert(image, gen, inv_cfg, seed).map_err(|e| e.context("inverting the input image"))?;
    let rb = invert(&mirror(image), gen, inv_cfg, seed)
        .map_err(|e| e.context("inverting the mirrored image"))?;
    let latents = interpolate_latent(&ra.z_r, &rb.z_r, n_points)?;
    let batch: Vec<Tensor<T>> = latents.iter().map(|z| z.to_tensor()).collect();
    let images = gen.predict(&Tensor::stack(&batch)?)?.unstack();
    let landmarks = latents
        .iter()
        .map(|z| lgen_forward(lgen, z))
        .collect::<Result<Vec<_>>>()?;

    let step_displacements = landmarks
        .windows(2)
        .map(|w| w[0].mean_distance(&w[1]))
        .collect::<Result<Vec<f64>>>()?;
    let mean_displacement =
        step_displacements.iter().sum::<f64>() / step_displacements.len() as f64;
    let max_displacement = step_displacements.iter().cloned().fold(0.0, f64::max);
    let latent_steps: Vec<f64> = latents
        .windows(2)
        .map(|w| {
            w[0].values()
                .iter()
                .zip(w[1].values())
                .map(|(a, b)| (b - a) * (b - a))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let mean_step = latent_steps.iter().sum::<f64>() / latent_steps.len() as f64;
    let report = SmoothnessReport {
        frames: latents.len(),
        max_over_mean: if mean_displacement > 0.0 {
            max_displacement / mean_displacement
        } else {
            0.0
        },
        step_displacements,
        mean_displacement,
        max_displacement,
        latent_spacing_deviation: latent_steps
            .iter()
            .map(|s| (s - mean_step).abs())
            .fold(0.0, f64::max),
        latent_steps,
        err_a: ra.final_err(),
        err_b: rb.final_err(),
    };

    if let Some(dir) = out_dir {
        create_dir(dir)?;
        let mut rows = Vec::with_capacity(images.len());
        for (i, (img, lm)) in images.iter().zip(&landmarks).enumerate() {
            let name = format!("frame_{i:02}.png");
            write_png(&dir.join(&name), img)?;
            rows.push((name, lm.clone()));
        }
        write_landmark_csv(&dir.join(LANDMARK_FILE), &rows, lgen.landmark_count())?;
        let doc = serde_json::json!({
            "z_a": ra.z_r,
            "z_b": rb.z_r,
            "latents": latents,
            "smoothness": report,
        });
        let mut text = serde_json::to_string_pretty(&doc).expect("report serializes");
        text.push('\n');
        write_atomic(&dir.join("report.json"), text.as_bytes())?;
    }
    Ok(Interpolation {
        z_a: ra.z_r,
        z_b: rb.z_r,
        latents,
        images,
        landmarks,
        report,
    })
}
