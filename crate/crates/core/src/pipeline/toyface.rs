//! Procedural toy faces with exact landmark ground truth.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Element, Tensor};
use crate::error::{Error, Result};
use crate::lgen::LandmarkSet;

/// Landmarks per toy face: eyes, nose, mouth corners.
pub const TOY_LANDMARKS: usize = 5;

/// Supersamples per pixel side.
const SUPERSAMPLE: usize = 4;
const EYE_RADIUS: f64 = 0.04;
const MOUTH_HALF_THICKNESS: f64 = 0.02;
/// Head ellipse height relative to its width.
const HEAD_ASPECT: f64 = 1.2;

const BACKGROUND: [f64; 3] = [-0.85, -0.8, -0.7];
const SKIN: [f64; 3] = [0.75, 0.3, 0.05];
const EYE: [f64; 3] = [-0.9, -0.85, -0.5];
const MOUTH: [f64; 3] = [0.55, -0.7, -0.6];

/// Face geometry in normalized image units (y grows downwards).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyFaceParams {
    pub face_center: (f64, f64),
    pub face_radius: f64,
    /// Horizontal distance of each eye from the center.
    pub eye_offset: f64,
    /// Height of the eyes above the center.
    pub eye_height: f64,
    pub mouth_width: f64,
    /// Depth of the mouth below the center.
    pub mouth_drop: f64,
}

type Range = (f64, f64);

impl ToyFaceParams {
    pub const CENTER: Range = (0.3, 0.7);
    pub const RADIUS: Range = (0.2, 0.35);
    pub const EYE_OFFSET: Range = (0.08, 0.16);
    pub const EYE_HEIGHT: Range = (0.1, 0.2);
    pub const MOUTH_WIDTH: Range = (0.1, 0.25);
    pub const MOUTH_DROP: Range = (0.08, 0.18);

    pub fn sample(rng: &mut impl Rng) -> Self {
        let mut u = |(lo, hi): Range| rng.gen_range(lo..=hi);
        ToyFaceParams {
            face_center: (u(Self::CENTER), u(Self::CENTER)),
            face_radius: u(Self::RADIUS),
            eye_offset: u(Self::EYE_OFFSET),
            eye_height: u(Self::EYE_HEIGHT),
            mouth_width: u(Self::MOUTH_WIDTH),
            mouth_drop: u(Self::MOUTH_DROP),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("face_center.x", self.face_center.0, Self::CENTER),
            ("face_center.y", self.face_center.1, Self::CENTER),
            ("face_radius", self.face_radius, Self::RADIUS),
            ("eye_offset", self.eye_offset, Self::EYE_OFFSET),
            ("eye_height", self.eye_height, Self::EYE_HEIGHT),
            ("mouth_width", self.mouth_width, Self::MOUTH_WIDTH),
            ("mouth_drop", self.mouth_drop, Self::MOUTH_DROP),
        ];
        for (name, v, (lo, hi)) in checks {
            if !(lo..=hi).contains(&v) {
                return Err(Error::Argument(format!(
                    "{name} = {v} outside [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }

    /// The same face reflected about the vertical image axis.
    pub fn mirrored(&self) -> Self {
        ToyFaceParams {
            face_center: (1.0 - self.face_center.0, self.face_center.1),
            ..*self
        }
    }

    /// Left eye, right eye, nose, left mouth corner, right mouth corner.
    pub fn landmarks(&self) -> LandmarkSet {
        let (cx, cy) = self.face_center;
        let eye_y = cy - self.eye_height;
        let mouth_y = cy + self.mouth_drop;
        let half = self.mouth_width / 2.0;
        LandmarkSet::new(vec![
            (cx - self.eye_offset, eye_y),
            (cx + self.eye_offset, eye_y),
            (cx, cy),
            (cx - half, mouth_y),
            (cx + half, mouth_y),
        ])
        .expect("parameter ranges keep landmarks inside the image")
    }

    fn color_at(&self, u: f64, v: f64) -> [f64; 3] {
        let (cx, cy) = self.face_center;
        // horizontal distance from the symmetry axis
        let dx = (u - cx).abs();
        let dy = v - cy;
        let r = self.face_radius;
        let mut color = BACKGROUND;
        if (dx / r).powi(2) + (dy / (HEAD_ASPECT * r)).powi(2) <= 1.0 {
            color = SKIN;
        }
        let ex = dx - self.eye_offset;
        let ey = dy + self.eye_height;
        if ex * ex + ey * ey <= EYE_RADIUS * EYE_RADIUS {
            color = EYE;
        }
        let my = dy - self.mouth_drop;
        let mx = (dx - self.mouth_width / 2.0).max(0.0);
        if mx * mx + my * my <= MOUTH_HALF_THICKNESS * MOUTH_HALF_THICKNESS {
            color = MOUTH;
        }
        color
    }
}

/// Renders `params` at `image_size`² as a `[3, S, S]` tensor in [−1, 1]
/// together with its five landmarks.
pub fn make_toy_face<T: Element>(
    params: &ToyFaceParams,
    image_size: usize,
) -> Result<(Tensor<T>, LandmarkSet)> {
    params.validate()?;
    if image_size == 0 {
        return Err(Error::Argument("image_size must be positive".into()));
    }
    let s = image_size;
    let n = SUPERSAMPLE;
    let plane = s * s;
    let mut data = vec![0.0f64; 3 * plane];
    let denom = (2 * n * s) as f64;
    for row in 0..s {
        for col in 0..s {
            let mut acc = [0.0; 3];
            for a in 0..n {
                let v = (2 * (row * n + a) + 1) as f64 / denom;
                for b in 0..n {
                    let u = (2 * (col * n + b) + 1) as f64 / denom;
                    let c = params.color_at(u, v);
                    for ch in 0..3 {
                        acc[ch] += c[ch];
                    }
                }
            }
            for ch in 0..3 {
                data[ch * plane + row * s + col] = acc[ch] / (n * n) as f64;
            }
        }
    }
    Ok((Tensor::from_f64(vec![3, s, s], &data)?, params.landmarks()))
}

/// Reflects landmarks `x → 1 − x`, swapping the left/right members of the
/// eye and mouth pairs.
pub fn mirror_landmarks(l: &LandmarkSet) -> Result<LandmarkSet> {
    let p = l.points();
    if p.len() != TOY_LANDMARKS {
        return Err(Error::Shape(format!(
            "expected {TOY_LANDMARKS} landmarks, got {}",
            p.len()
        )));
    }
    let r = |i: usize| (1.0 - p[i].0, p[i].1);
    LandmarkSet::new(vec![r(1), r(0), r(2), r(4), r(3)])
}
