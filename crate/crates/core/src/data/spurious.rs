//! Synthetic spurious-correlation benchmark: class-determined glyphs
//! composited onto environment backgrounds with a tunable class–environment
//! correlation in the training split.
//!
//! Structure of the generated splits:
//!
//! - `train` — glyph on background, environment aligned with the class with
//!   probability `correlation`.
//! - `val_id`, `test_id` — same composition with the correlation at 0.5.
//! - `spurious_ood` — backgrounds alone: environment features with no
//!   invariant feature at all.
//! - `conventional_ood` — a held-out glyph family on held-out backgrounds.
//! - `fine_grained_ood` (optional) — damaged versions of the known glyphs on
//!   in-distribution backgrounds.

use ndarray::{Array2, Array4};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-split sample counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val_id: usize,
    pub test_id: usize,
    pub spurious_ood: usize,
    pub conventional_ood: usize,
    #[serde(default)]
    pub fine_grained_ood: usize,
}

fn default_correlation() -> f64 {
    0.9
}

fn default_invariant_source() -> String {
    "cross-ring".to_string()
}

fn default_image_size() -> (usize, usize) {
    (32, 32)
}

fn default_env_colors() -> [[f64; 3]; 2] {
    [[0.42, 0.48, 0.55], [0.42, 0.48, 0.55]]
}

fn default_novel_env_colors() -> [[f64; 3]; 2] {
    [[0.55, 0.25, 0.60], [0.38, 0.38, 0.38]]
}

fn default_glyph_color() -> [f64; 3] {
    [0.88, 0.88, 0.88]
}

fn default_background_noise() -> f64 {
    0.05
}

fn default_pixel_noise() -> f64 {
    0.015
}

fn default_occlusion_prob() -> f64 {
    0.35
}

/// Benchmark specification. Two classes, two environments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpuriousSpec {
    /// Fixed at 2: one glyph family per class.
    pub num_classes: usize,
    /// Probability that a training sample's environment matches its class.
    #[serde(default = "default_correlation")]
    pub correlation: f64,
    /// Glyph family identifier; `cross-ring` is the supported family.
    #[serde(default = "default_invariant_source")]
    pub invariant_source: String,
    #[serde(default = "default_image_size")]
    pub image_size: (usize, usize),
    pub counts: SplitCounts,
    /// Base colors of the two in-distribution environments (the stripe
    /// orientation, not the color, is what identifies an environment).
    #[serde(default = "default_env_colors")]
    pub env_colors: [[f64; 3]; 2],
    /// Base colors of the held-out environments used by conventional OOD.
    #[serde(default = "default_novel_env_colors")]
    pub novel_env_colors: [[f64; 3]; 2],
    #[serde(default = "default_glyph_color")]
    pub glyph_color: [f64; 3],
    /// Amplitude of the smooth per-image background field.
    #[serde(default = "default_background_noise")]
    pub background_noise: f64,
    /// Per-pixel Gaussian noise.
    #[serde(default = "default_pixel_noise")]
    pub pixel_noise: f64,
    /// Probability that an ID sample's glyph is half-occluded. Occluded
    /// samples keep the environment informative even for a model that has
    /// learned the glyphs, which is what makes the benchmark spurious rather
    /// than trivially separable.
    #[serde(default = "default_occlusion_prob")]
    pub occlusion_prob: f64,
}

impl SpuriousSpec {
    /// Desk-scale default benchmark.
    pub fn desk_default() -> Self {
        Self {
            num_classes: 2,
            correlation: 0.9,
            invariant_source: default_invariant_source(),
            image_size: (32, 32),
            counts: SplitCounts {
                train: 2000,
                val_id: 500,
                test_id: 1000,
                spurious_ood: 1000,
                conventional_ood: 1000,
                fine_grained_ood: 0,
            },
            env_colors: default_env_colors(),
            novel_env_colors: default_novel_env_colors(),
            glyph_color: default_glyph_color(),
            background_noise: default_background_noise(),
            pixel_noise: default_pixel_noise(),
            occlusion_prob: default_occlusion_prob(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes != 2 {
            return Err(Error::InvalidSpec(format!(
                "num_classes must be 2, got {}",
                self.num_classes
            )));
        }
        if !(0.0..=1.0).contains(&self.correlation) {
            return Err(Error::InvalidSpec(format!(
                "correlation must be in [0, 1], got {}",
                self.correlation
            )));
        }
        if self.invariant_source != "cross-ring" {
            return Err(Error::InvalidSpec(format!(
                "unknown invariant_source `{}`",
                self.invariant_source
            )));
        }
        let (h, w) = self.image_size;
        if h < 16 || w < 16 {
            return Err(Error::InvalidSpec(format!(
                "image_size must be at least 16×16, got {h}×{w}"
            )));
        }
        if !(0.0..=1.0).contains(&self.occlusion_prob) {
            return Err(Error::InvalidSpec(format!(
                "occlusion_prob must be in [0, 1], got {}",
                self.occlusion_prob
            )));
        }
        let c = &self.counts;
        if c.train == 0 || c.val_id == 0 || c.test_id == 0 || c.spurious_ood == 0
            || c.conventional_ood == 0
        {
            return Err(Error::InvalidSpec(
                "all splits except fine_grained_ood need at least one sample".into(),
            ));
        }
        Ok(())
    }

    pub fn total_samples(&self) -> usize {
        let c = &self.counts;
        c.train + c.val_id + c.test_id + c.spurious_ood + c.conventional_ood + c.fine_grained_ood
    }
}

/// Benchmark splits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    ValId,
    TestId,
    SpuriousOod,
    ConventionalOod,
    FineGrainedOod,
}

impl Split {
    pub const ALL: [Split; 6] = [
        Split::Train,
        Split::ValId,
        Split::TestId,
        Split::SpuriousOod,
        Split::ConventionalOod,
        Split::FineGrainedOod,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::ValId => "val_id",
            Split::TestId => "test_id",
            Split::SpuriousOod => "spurious_ood",
            Split::ConventionalOod => "conventional_ood",
            Split::FineGrainedOod => "fine_grained_ood",
        }
    }

    pub fn from_str_tag(s: &str) -> Option<Split> {
        Split::ALL.iter().copied().find(|v| v.as_str() == s)
    }
}

/// One benchmark sample's bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: String,
    pub split: Split,
    /// Row in the image archive.
    pub array_index: usize,
    /// Class label; `None` for OOD splits.
    pub label: Option<usize>,
    /// 0/1 for in-distribution environments, 2/3 for held-out ones.
    pub environment: u8,
    /// Glyph bounding box `(x0, y0, x1, y1)`, exclusive ends; `None` when the
    /// sample carries no glyph.
    pub glyph_bbox: Option<(usize, usize, usize, usize)>,
    /// Whether the glyph was half-occluded at composition time.
    pub occluded: bool,
}

/// Everything needed to reconstruct and audit a generated benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkManifest {
    pub format_version: u32,
    pub seed: u64,
    pub spec: SpuriousSpec,
    pub records: Vec<SampleRecord>,
}

impl BenchmarkManifest {
    pub fn records_of(&self, split: Split) -> impl Iterator<Item = &SampleRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }
}

/// Glyph shapes; the first two are the ID classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Glyph {
    Cross,
    Ring,
    Triangle,
    BrokenCross,
    CutRing,
}

/// Binary glyph mask of side `g`.
pub fn glyph_mask(glyph: Glyph, g: usize) -> Array2<bool> {
    let mut mask = Array2::from_elem((g, g), false);
    let center = (g as f64 - 1.0) / 2.0;
    let thickness = (g as f64 / 3.0).max(2.0);
    let r_out = g as f64 / 2.0 - 0.5;
    let r_in = (r_out - thickness).max(1.0);
    for y in 0..g {
        for x in 0..g {
            let dx = x as f64 - center;
            let dy = y as f64 - center;
            let r = (dx * dx + dy * dy).sqrt();
            let val = match glyph {
                Glyph::Cross => dx.abs() <= thickness / 2.0 || dy.abs() <= thickness / 2.0,
                Glyph::Ring => r <= r_out && r >= r_in,
                Glyph::Triangle => {
                    // Upward triangle: apex at the top row, base at the bottom.
                    let progress = y as f64 / (g as f64 - 1.0);
                    dx.abs() <= progress * (g as f64 / 2.0 - 0.5)
                }
                Glyph::BrokenCross => {
                    dx.abs() <= thickness / 2.0
                        || (dy.abs() <= thickness / 2.0 && dx <= 0.0)
                }
                Glyph::CutRing => {
                    (r <= r_out && r >= r_in) && !(dx > 0.0 && dy.abs() < r_out * 0.45)
                }
            };
            if val {
                mask[[y, x]] = true;
            }
        }
    }
    mask
}

fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

/// Paints a background into `img` (shape `[3, H, W]` in a flat f32 buffer):
/// base color, an environment-specific stripe texture with a random phase,
/// a smooth low-frequency field, and pixel noise. The texture gives each
/// environment structure beyond its mean color, the way real backgrounds do.
fn paint_background(
    buf: &mut [f32],
    h: usize,
    w: usize,
    env: u8,
    color: [f64; 3],
    field_amp: f64,
    pixel_noise: f64,
    rng: &mut StdRng,
) {
    const GRID: usize = 5;
    let mut grid = [[0.0f64; GRID]; GRID];
    for row in grid.iter_mut() {
        for v in row.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
    }
    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let stripe_amp = 0.11;
    let freq = std::f64::consts::TAU / 6.0;
    for y in 0..h {
        let fy = y as f64 / (h - 1).max(1) as f64 * (GRID - 1) as f64;
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(GRID - 1);
        let ty = fy - y0 as f64;
        for x in 0..w {
            let fx = x as f64 / (w - 1).max(1) as f64 * (GRID - 1) as f64;
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(GRID - 1);
            let tx = fx - x0 as f64;
            let top = grid[y0][x0] + (grid[y0][x1] - grid[y0][x0]) * tx;
            let bot = grid[y1][x0] + (grid[y1][x1] - grid[y1][x0]) * tx;
            let field = top + (bot - top) * ty;
            // Stripe orientation identifies the environment: horizontal,
            // diagonal, vertical, anti-diagonal.
            let coord = match env {
                0 => y as f64,
                1 => x as f64,
                2 => (x + y) as f64 * std::f64::consts::FRAC_1_SQRT_2,
                _ => (x as f64 - y as f64) * std::f64::consts::FRAC_1_SQRT_2,
            };
            let stripe = (coord * freq + phase).sin() * stripe_amp;
            for c in 0..3 {
                let noise: f64 = rng.random_range(-1.0..1.0) * pixel_noise;
                let v = clamp01(color[c] + stripe + field_amp * field + noise);
                buf[c * h * w + y * w + x] = v as f32;
            }
        }
    }
}

/// Glyph opacity over the background.
const GLYPH_BLEND: f64 = 1.0;

/// Half-plane occlusion applied to a glyph mask: hides everything on one
/// side of a random axis-aligned cut through the glyph box.
#[derive(Debug, Clone, Copy)]
struct Occlusion {
    vertical_cut: bool,
    keep_low: bool,
    cut: usize,
}

impl Occlusion {
    fn sample(g: usize, rng: &mut StdRng) -> Self {
        Self {
            vertical_cut: rng.random_bool(0.5),
            keep_low: rng.random_bool(0.5),
            cut: rng.random_range(g * 2 / 5..=g * 3 / 5),
        }
    }

    fn visible(&self, y: usize, x: usize) -> bool {
        let coord = if self.vertical_cut { x } else { y };
        if self.keep_low {
            coord < self.cut
        } else {
            coord >= self.cut
        }
    }
}

fn paint_glyph(
    buf: &mut [f32],
    h: usize,
    w: usize,
    mask: &Array2<bool>,
    origin: (usize, usize),
    color: [f64; 3],
    pixel_noise: f64,
    occlusion: Option<Occlusion>,
    rng: &mut StdRng,
) {
    let g = mask.shape()[0];
    let (ox, oy) = origin;
    for y in 0..g {
        for x in 0..g {
            if let Some(occ) = occlusion {
                if !occ.visible(y, x) {
                    continue;
                }
            }
            if mask[[y, x]] {
                for c in 0..3 {
                    let noise: f64 = rng.random_range(-1.0..1.0) * pixel_noise;
                    let idx = c * h * w + (oy + y) * w + (ox + x);
                    let bg = buf[idx] as f64;
                    buf[idx] =
                        clamp01((1.0 - GLYPH_BLEND) * bg + GLYPH_BLEND * (color[c] + noise))
                            as f32;
                }
            }
        }
    }
}

/// Side of the glyph box for a given image size.
pub fn glyph_side(h: usize, w: usize) -> usize {
    ((h.min(w) as f64) * 0.6).round() as usize
}

/// Generates the benchmark: a manifest plus the image archive
/// `[N, 3, H, W]` in `array_index` order. Identical `(spec, seed)` pairs
/// produce identical bytes.
pub fn generate_spurious_benchmark(
    spec: &SpuriousSpec,
    seed: u64,
) -> Result<(BenchmarkManifest, Array4<f32>)> {
    spec.validate()?;
    let (h, w) = spec.image_size;
    let g = glyph_side(h, w);
    let n = spec.total_samples();
    let mut images = Array4::<f32>::zeros((n, 3, h, w));
    let mut records = Vec::with_capacity(n);
    let mut rng = StdRng::seed_from_u64(seed);

    let cross = glyph_mask(Glyph::Cross, g);
    let ring = glyph_mask(Glyph::Ring, g);
    let triangle = glyph_mask(Glyph::Triangle, g);
    let broken = [glyph_mask(Glyph::BrokenCross, g), glyph_mask(Glyph::CutRing, g)];

    let mut index = 0usize;
    let flat = images.as_slice_mut().expect("contiguous archive");
    let img_len = 3 * h * w;

    let emit_id_like = |split: Split,
                            count: usize,
                            correlation: f64,
                            rng: &mut StdRng,
                            records: &mut Vec<SampleRecord>,
                            flat: &mut [f32],
                            index: &mut usize| {
        for i in 0..count {
            let label = i % 2;
            let aligned = rng.random_bool(correlation);
            let env = if aligned { label } else { 1 - label } as u8;
            let ox = rng.random_range(1..=(w - g - 1));
            let oy = rng.random_range(1..=(h - g - 1));
            let occluded = rng.random_bool(spec.occlusion_prob);
            let occlusion = occluded.then(|| Occlusion::sample(g, rng));
            let buf = &mut flat[*index * img_len..(*index + 1) * img_len];
            paint_background(
                buf,
                h,
                w,
                env,
                spec.env_colors[env as usize],
                spec.background_noise,
                spec.pixel_noise,
                rng,
            );
            let mask = if label == 0 { &cross } else { &ring };
            paint_glyph(
                buf,
                h,
                w,
                mask,
                (ox, oy),
                spec.glyph_color,
                spec.pixel_noise,
                occlusion,
                rng,
            );
            records.push(SampleRecord {
                sample_id: format!("{}-{:05}", split.as_str(), i),
                split,
                array_index: *index,
                label: Some(label),
                environment: env,
                glyph_bbox: Some((ox, oy, ox + g, oy + g)),
                occluded,
            });
            *index += 1;
        }
    };

    emit_id_like(
        Split::Train,
        spec.counts.train,
        spec.correlation,
        &mut rng,
        &mut records,
        flat,
        &mut index,
    );
    emit_id_like(
        Split::ValId,
        spec.counts.val_id,
        0.5,
        &mut rng,
        &mut records,
        flat,
        &mut index,
    );
    emit_id_like(
        Split::TestId,
        spec.counts.test_id,
        0.5,
        &mut rng,
        &mut records,
        flat,
        &mut index,
    );

    // Spurious OOD: environments with the invariant feature absent.
    for i in 0..spec.counts.spurious_ood {
        let env = (i % 2) as u8;
        let buf = &mut flat[index * img_len..(index + 1) * img_len];
        paint_background(
            buf,
            h,
            w,
            env,
            spec.env_colors[env as usize],
            spec.background_noise,
            spec.pixel_noise,
            &mut rng,
        );
        records.push(SampleRecord {
            sample_id: format!("spurious_ood-{i:05}"),
            split: Split::SpuriousOod,
            array_index: index,
            label: None,
            environment: env,
            glyph_bbox: None,
            occluded: false,
        });
        index += 1;
    }

    // Conventional OOD: novel glyph family on novel backgrounds.
    for i in 0..spec.counts.conventional_ood {
        let env = (i % 2) as u8;
        let ox = rng.random_range(1..=(w - g - 1));
        let oy = rng.random_range(1..=(h - g - 1));
        let buf = &mut flat[index * img_len..(index + 1) * img_len];
        paint_background(
            buf,
            h,
            w,
            2 + env,
            spec.novel_env_colors[env as usize],
            spec.background_noise,
            spec.pixel_noise,
            &mut rng,
        );
        paint_glyph(
            buf,
            h,
            w,
            &triangle,
            (ox, oy),
            spec.glyph_color,
            spec.pixel_noise,
            None,
            &mut rng,
        );
        records.push(SampleRecord {
            sample_id: format!("conventional_ood-{i:05}"),
            split: Split::ConventionalOod,
            array_index: index,
            label: None,
            environment: 2 + env,
            glyph_bbox: Some((ox, oy, ox + g, oy + g)),
            occluded: false,
        });
        index += 1;
    }

    // Fine-grained OOD: damaged known glyphs on ID environments.
    for i in 0..spec.counts.fine_grained_ood {
        let family = i % 2;
        let env = ((i / 2) % 2) as u8;
        let ox = rng.random_range(1..=(w - g - 1));
        let oy = rng.random_range(1..=(h - g - 1));
        let buf = &mut flat[index * img_len..(index + 1) * img_len];
        paint_background(
            buf,
            h,
            w,
            env,
            spec.env_colors[env as usize],
            spec.background_noise,
            spec.pixel_noise,
            &mut rng,
        );
        paint_glyph(
            buf,
            h,
            w,
            &broken[family],
            (ox, oy),
            spec.glyph_color,
            spec.pixel_noise,
            None,
            &mut rng,
        );
        records.push(SampleRecord {
            sample_id: format!("fine_grained_ood-{i:05}"),
            split: Split::FineGrainedOod,
            array_index: index,
            label: None,
            environment: env,
            glyph_bbox: Some((ox, oy, ox + g, oy + g)),
            occluded: false,
        });
        index += 1;
    }

    let manifest = BenchmarkManifest {
        format_version: 1,
        seed,
        spec: spec.clone(),
        records,
    };
    Ok((manifest, images))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec(correlation: f64) -> SpuriousSpec {
        SpuriousSpec {
            correlation,
            counts: SplitCounts {
                train: 400,
                val_id: 40,
                test_id: 40,
                spurious_ood: 40,
                conventional_ood: 40,
                fine_grained_ood: 8,
            },
            ..SpuriousSpec::desk_default()
        }
    }

    #[test]
    fn generation_is_reproducible() {
        let spec = tiny_spec(0.9);
        let (m1, im1) = generate_spurious_benchmark(&spec, 7).unwrap();
        let (m2, im2) = generate_spurious_benchmark(&spec, 7).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(im1, im2);
        let (m3, _) = generate_spurious_benchmark(&spec, 8).unwrap();
        assert_ne!(m1.records[0].glyph_bbox, m3.records[0].glyph_bbox);
    }

    #[test]
    fn full_correlation_aligns_every_train_sample() {
        let spec = tiny_spec(1.0);
        let (m, _) = generate_spurious_benchmark(&spec, 3).unwrap();
        for r in m.records_of(Split::Train) {
            assert_eq!(r.environment as usize, r.label.unwrap());
        }
    }

    #[test]
    fn aligned_fraction_tracks_correlation() {
        let mut spec = tiny_spec(0.9);
        spec.counts.train = 1000;
        let (m, _) = generate_spurious_benchmark(&spec, 11).unwrap();
        let aligned = m
            .records_of(Split::Train)
            .filter(|r| r.environment as usize == r.label.unwrap())
            .count();
        let frac = aligned as f64 / 1000.0;
        assert!((0.87..=0.93).contains(&frac), "aligned fraction {frac}");
    }

    #[test]
    fn half_correlation_passes_chi_square_independence() {
        let mut spec = tiny_spec(0.5);
        spec.counts.train = 2000;
        let (m, _) = generate_spurious_benchmark(&spec, 5).unwrap();
        // 2×2 contingency table of (class, environment).
        let mut table = [[0.0f64; 2]; 2];
        for r in m.records_of(Split::Train) {
            table[r.label.unwrap()][r.environment as usize] += 1.0;
        }
        let n: f64 = table.iter().flatten().sum();
        let row: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
        let col: Vec<f64> = (0..2).map(|j| table[0][j] + table[1][j]).collect();
        let mut chi2 = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                let expected = row[i] * col[j] / n;
                chi2 += (table[i][j] - expected).powi(2) / expected;
            }
        }
        // Critical value for 1 dof at alpha = 0.01.
        assert!(chi2 < 6.635, "chi2 {chi2}");
    }

    #[test]
    fn split_sample_ids_are_disjoint() {
        let spec = tiny_spec(0.9);
        let (m, _) = generate_spurious_benchmark(&spec, 7).unwrap();
        let mut seen = std::collections::BTreeSet::new();
        for r in &m.records {
            assert!(seen.insert(r.sample_id.clone()), "duplicate {}", r.sample_id);
        }
        assert_eq!(seen.len(), spec.total_samples());
    }

    #[test]
    fn spurious_ood_has_no_glyph_and_matching_background_stats() {
        let spec = tiny_spec(0.9);
        let (m, images) = generate_spurious_benchmark(&spec, 7).unwrap();
        // Mean color per environment: train pixels outside the glyph bbox vs
        // spurious-OOD pixels. Must agree within 2% relative.
        for env in 0..2u8 {
            let mut train_sum = [0.0f64; 3];
            let mut train_n = 0.0f64;
            for r in m.records_of(Split::Train).filter(|r| r.environment == env) {
                let (x0, y0, x1, y1) = r.glyph_bbox.unwrap();
                let img = images.index_axis(ndarray::Axis(0), r.array_index);
                for c in 0..3 {
                    for y in 0..32 {
                        for x in 0..32 {
                            let inside = x >= x0 && x < x1 && y >= y0 && y < y1;
                            if !inside {
                                train_sum[c] += img[[c, y, x]] as f64;
                                if c == 0 {
                                    train_n += 1.0;
                                }
                            }
                        }
                    }
                }
            }
            let mut ood_sum = [0.0f64; 3];
            let mut ood_n = 0.0f64;
            for r in m
                .records_of(Split::SpuriousOod)
                .filter(|r| r.environment == env)
            {
                assert!(r.glyph_bbox.is_none());
                let img = images.index_axis(ndarray::Axis(0), r.array_index);
                for c in 0..3 {
                    ood_sum[c] += img.index_axis(ndarray::Axis(0), c).iter().map(|v| *v as f64).sum::<f64>();
                }
                ood_n += (32 * 32) as f64;
            }
            for c in 0..3 {
                let a = train_sum[c] / train_n;
                let b = ood_sum[c] / ood_n;
                assert!(
                    ((a - b) / b).abs() < 0.02,
                    "env {env} channel {c}: train {a} vs ood {b}"
                );
            }
        }
    }

    /// Template-match oracle: the best-aligned mean contrast between glyph
    /// pixels and surrounding box pixels, maximized over positions.
    fn template_response(img: ndarray::ArrayView3<'_, f32>, mask: &Array2<bool>) -> f64 {
        let g = mask.shape()[0];
        let (h, w) = (img.shape()[1], img.shape()[2]);
        let mut best = f64::NEG_INFINITY;
        for oy in 0..=(h - g) {
            for ox in 0..=(w - g) {
                let mut inside = 0.0;
                let mut inside_n = 0.0;
                let mut outside = 0.0;
                let mut outside_n = 0.0;
                for y in 0..g {
                    for x in 0..g {
                        let lum = (img[[0, oy + y, ox + x]]
                            + img[[1, oy + y, ox + x]]
                            + img[[2, oy + y, ox + x]]) as f64
                            / 3.0;
                        if mask[[y, x]] {
                            inside += lum;
                            inside_n += 1.0;
                        } else {
                            outside += lum;
                            outside_n += 1.0;
                        }
                    }
                }
                let resp = inside / inside_n - outside / outside_n;
                if resp > best {
                    best = resp;
                }
            }
        }
        best
    }

    #[test]
    fn template_match_separates_id_from_spurious_ood() {
        let mut spec = tiny_spec(0.9);
        spec.counts = SplitCounts {
            train: 30,
            val_id: 4,
            test_id: 4,
            spurious_ood: 30,
            conventional_ood: 4,
            fine_grained_ood: 0,
        };
        let (m, images) = generate_spurious_benchmark(&spec, 13).unwrap();
        let g = glyph_side(32, 32);
        let templates = [glyph_mask(Glyph::Cross, g), glyph_mask(Glyph::Ring, g)];
        for r in m.records_of(Split::Train).filter(|r| !r.occluded) {
            let img = images.index_axis(ndarray::Axis(0), r.array_index);
            let resp = template_response(img, &templates[r.label.unwrap()]);
            assert!(resp > 0.15, "train {} response {resp}", r.sample_id);
        }
        for r in m.records_of(Split::SpuriousOod) {
            let img = images.index_axis(ndarray::Axis(0), r.array_index);
            let resp = templates
                .iter()
                .map(|t| template_response(img, t))
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(resp < 0.15, "ood {} response {resp}", r.sample_id);
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = tiny_spec(0.9);
        spec.num_classes = 3;
        assert!(matches!(
            generate_spurious_benchmark(&spec, 0),
            Err(Error::InvalidSpec(_))
        ));
        let mut spec = tiny_spec(1.5);
        spec.num_classes = 2;
        assert!(generate_spurious_benchmark(&spec, 0).is_err());
        let mut spec = tiny_spec(0.9);
        spec.counts.train = 0;
        assert!(generate_spurious_benchmark(&spec, 0).is_err());
    }
}
