//! Procedural shape-and-texture dataset.
//!
//! Each class is a (shape, texture) combination rendered over a smooth
//! low-frequency background: shapes carry the silhouette cue, textures carry
//! a high-frequency cue, and position/rotation/color jitter keep raw-pixel
//! linear models from matching template positions. Generation is keyed by
//! named random streams, so datasets are bit-reproducible from the recipe
//! alone and every sample is independent of batch composition.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

use super::{Dataset, Split};

pub const SYNTH_FORMAT: &str = "archsim-synth/1";

const SHAPES: [&str; 4] = ["disk", "square", "triangle", "cross"];
const TEXTURES: [&str; 3] = ["solid", "stripes", "checker"];

/// Fraction of the canvas the shape center may wander from the middle.
const CENTER_JITTER: f32 = 0.10;
const NOISE_STD: f32 = 0.02;

/// Seeded description of a synthetic dataset. Datasets are materialized from
/// recipes on demand; rasters are never persisted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct SynthRecipe {
    pub format: String,
    pub seed: u64,
    pub num_classes: usize,
    pub per_class_train: usize,
    pub per_class_eval: usize,
    pub resolution: usize,
    pub generator_version: u32,
}

impl SynthRecipe {
    pub fn new(
        seed: u64,
        num_classes: usize,
        per_class_train: usize,
        per_class_eval: usize,
        resolution: usize,
    ) -> Self {
        SynthRecipe {
            format: SYNTH_FORMAT.to_string(),
            seed,
            num_classes,
            per_class_train,
            per_class_eval,
            resolution,
            generator_version: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != SYNTH_FORMAT {
            return Err(Error::Format(format!(
                "expected format {SYNTH_FORMAT}, found {}",
                self.format
            )));
        }
        if self.generator_version != 1 {
            return Err(Error::Format(format!(
                "unknown generator version {}",
                self.generator_version
            )));
        }
        if self.num_classes < 2 || self.num_classes > SHAPES.len() * TEXTURES.len() {
            return Err(Error::Config(format!(
                "num_classes must be in [2, {}], got {}",
                SHAPES.len() * TEXTURES.len(),
                self.num_classes
            )));
        }
        if self.per_class_train == 0 || self.per_class_eval == 0 {
            return Err(Error::Config("per-class sample counts must be positive".into()));
        }
        if self.resolution < 16 {
            return Err(Error::Config(format!(
                "resolution must be at least 16, got {}",
                self.resolution
            )));
        }
        Ok(())
    }

    pub fn provenance(&self) -> String {
        format!(
            "synth-v{} seed={} classes={} res={}",
            self.generator_version, self.seed, self.num_classes, self.resolution
        )
    }

    /// Human-readable `shape/texture` name of a class.
    pub fn class_name(&self, class: usize) -> String {
        let shape = SHAPES[class / TEXTURES.len()];
        let texture = TEXTURES[class % TEXTURES.len()];
        format!("{shape}/{texture}")
    }
}

/// Materializes the train and eval splits of a recipe.
pub fn synth_shapes(recipe: &SynthRecipe) -> Result<(Dataset, Dataset)> {
    recipe.validate()?;
    let train = render_split(recipe, Split::Train, recipe.per_class_train);
    let eval = render_split(recipe, Split::Eval, recipe.per_class_eval);
    Ok((train, eval))
}

fn render_split(recipe: &SynthRecipe, split: Split, per_class: usize) -> Dataset {
    let r = recipe.resolution;
    let n = recipe.num_classes * per_class;
    let mut images = vec![0.0f32; n * r * r * 3];
    let mut labels = Vec::with_capacity(n);
    let split_name = match split {
        Split::Train => "train",
        Split::Eval => "eval",
    };
    for class in 0..recipe.num_classes {
        for idx in 0..per_class {
            let sample = class * per_class + idx;
            let mut stream = rng::stream(
                recipe.seed,
                &format!("synth/{split_name}/class{class}"),
                idx as u64,
            );
            render_sample(
                &mut stream,
                class,
                r,
                &mut images[sample * r * r * 3..(sample + 1) * r * r * 3],
            );
            labels.push(class);
        }
    }
    Dataset {
        name: format!("synth-{}-{split_name}", recipe.seed),
        images: Tensor::from_parts(vec![n, r, r, 3], images),
        labels,
        num_classes: recipe.num_classes,
        split,
        provenance: recipe.provenance(),
    }
}

fn render_sample(rng: &mut impl Rng, class: usize, r: usize, out: &mut [f32]) {
    let shape = class / TEXTURES.len();
    let texture = class % TEXTURES.len();
    let rf = r as f32;

    // Low-frequency background wash, identical structure for every class.
    let bg_freq: f32 = rng.gen_range(0.5..1.2);
    let bg_theta: f32 = rng.gen_range(0.0..std::f32::consts::TAU);
    let bg_phase: f32 = rng.gen_range(0.0..std::f32::consts::TAU);
    let (bfx, bfy) = (bg_freq * bg_theta.cos(), bg_freq * bg_theta.sin());

    // Shape placement.
    let cx = rf * (0.5 + rng.gen_range(-CENTER_JITTER..=CENTER_JITTER));
    let cy = rf * (0.5 + rng.gen_range(-CENTER_JITTER..=CENTER_JITTER));
    let radius = rf * rng.gen_range(0.18..0.24);
    let rot: f32 = rng.gen_range(0.0..std::f32::consts::FRAC_PI_2);
    let (rc, rs) = (rot.cos(), rot.sin());

    // Texture parameters.
    let solid_level: f32 = rng.gen_range(0.70..0.95);
    let stripe_freq: f32 = rng.gen_range(6.0..9.0);
    let stripe_dir: f32 = rng.gen_range(0.0..std::f32::consts::PI);
    let stripe_phase: f32 = rng.gen_range(0.0..std::f32::consts::TAU);
    let checker_freq: f32 = rng.gen_range(5.0..7.0);
    let checker_phase_x: f32 = rng.gen_range(0.0..std::f32::consts::TAU);
    let checker_phase_y: f32 = rng.gen_range(0.0..std::f32::consts::TAU);

    // Per-sample channel gains make color uninformative.
    let gains: [f32; 3] = [
        rng.gen_range(0.75..1.0),
        rng.gen_range(0.75..1.0),
        rng.gen_range(0.75..1.0),
    ];
    let bg_phases: [f32; 3] = [
        bg_phase,
        bg_phase + rng.gen_range(0.2..0.8),
        bg_phase + rng.gen_range(1.0..1.6),
    ];

    let (sdc, sds) = (stripe_dir.cos(), stripe_dir.sin());
    let tau = std::f32::consts::TAU;

    for y in 0..r {
        for x in 0..r {
            let xf = x as f32;
            let yf = y as f32;
            // Rotate into the shape frame.
            let dx = xf - cx;
            let dy = yf - cy;
            let sx = dx * rc + dy * rs;
            let sy = -dx * rs + dy * rc;
            let inside = match shape {
                0 => dx * dx + dy * dy <= radius * radius,
                1 => sx.abs().max(sy.abs()) <= radius * 0.9,
                2 => in_triangle(sx, sy, radius * 1.15),
                _ => {
                    (sx.abs() <= radius * 0.38 && sy.abs() <= radius)
                        || (sy.abs() <= radius * 0.38 && sx.abs() <= radius)
                }
            };
            for ch in 0..3 {
                let v = if inside {
                    let t = match texture {
                        0 => solid_level,
                        1 => {
                            0.5 + 0.42
                                * (tau * stripe_freq * (xf * sdc + yf * sds) / rf + stripe_phase)
                                    .sin()
                        }
                        _ => {
                            0.5 + 0.42
                                * (tau * checker_freq * sx / rf + checker_phase_x).sin()
                                * (tau * checker_freq * sy / rf + checker_phase_y).sin()
                        }
                    };
                    t * gains[ch]
                } else {
                    0.45 + 0.18 * (tau * (bfx * xf + bfy * yf) / rf + bg_phases[ch]).sin()
                };
                let noise = gaussian(rng) * NOISE_STD;
                out[(y * r + x) * 3 + ch] = (v + noise).clamp(0.0, 1.0);
            }
        }
    }
}

/// Point-in-equilateral-triangle test (triangle points up, circumradius `cr`).
fn in_triangle(x: f32, y: f32, cr: f32) -> bool {
    // Vertices at angle 90, 210, 330 degrees.
    let v = [
        (0.0f32, -cr),
        (-cr * 0.866_025_4, cr * 0.5),
        (cr * 0.866_025_4, cr * 0.5),
    ];
    let sign = |a: (f32, f32), b: (f32, f32)| (x - b.0) * (a.1 - b.1) - (a.0 - b.0) * (y - b.1);
    let d0 = sign(v[0], v[1]);
    let d1 = sign(v[1], v[2]);
    let d2 = sign(v[2], v[0]);
    let neg = d0 < 0.0 || d1 < 0.0 || d2 < 0.0;
    let pos = d0 > 0.0 || d1 > 0.0 || d2 > 0.0;
    !(neg && pos)
}

/// Box-Muller standard normal draw.
fn gaussian(rng: &mut impl Rng) -> f32 {
    let u1: f32 = rng.gen_range(f32::MIN_POSITIVE..1.0);
    let u2: f32 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f32::consts::TAU * u2).cos()
}
