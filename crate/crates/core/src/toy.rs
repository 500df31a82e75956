//! Synthetic face-layout masks used as a small stand-in for a face-parsing
//! dataset. Class order follows [`crate::mask::TOY_CLASSES`].

use alloc::vec;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{Error, Result};
use crate::mask::{one_hot_encode, LabelMap, SemanticMask};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ToyConfig {
    pub class_count: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self { class_count: 6, height: 64, width: 64 }
    }
}

const SKIN: u8 = 1;
const EYES: u8 = 2;
const NOSE: u8 = 3;
const MOUTH: u8 = 4;
const HAIR: u8 = 5;
const BROWS: u8 = 6;
const EARS: u8 = 7;
const NECK: u8 = 8;

pub(crate) fn unit(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn uniform(rng: &mut impl RngCore, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * unit(rng)
}

#[derive(Clone, Copy)]
struct Ellipse {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let dx = (x - self.cx) / self.rx;
        let dy = (y - self.cy) / self.ry;
        dx * dx + dy * dy <= 1.0
    }
}

struct Layout {
    skin: Ellipse,
    hair_outer: Ellipse,
    hair_line: f64,
    eyes: [Ellipse; 2],
    brows: [Ellipse; 2],
    nose: Ellipse,
    mouth: Ellipse,
    ears: [Ellipse; 2],
    neck_half_width: f64,
}

impl Layout {
    fn sample(rng: &mut impl RngCore) -> Self {
        let cx = uniform(rng, 0.44, 0.56);
        let cy = uniform(rng, 0.50, 0.58);
        let ax = uniform(rng, 0.22, 0.30);
        let ay = uniform(rng, 0.28, 0.36);
        let skin = Ellipse { cx, cy, rx: ax, ry: ay };

        let thick = uniform(rng, 0.04, 0.10);
        let hair_outer = Ellipse { cx, cy: cy - 0.02, rx: ax + thick, ry: ay + thick };
        let hair_line = cy - ay * uniform(rng, 0.58, 0.72);

        let eye_y = cy - ay * uniform(rng, 0.12, 0.28);
        let eye_dx = ax * uniform(rng, 0.36, 0.50);
        let eye_rx = uniform(rng, 0.04, 0.06);
        let eye_ry = uniform(rng, 0.025, 0.04);
        let eyes = [
            Ellipse { cx: cx - eye_dx, cy: eye_y, rx: eye_rx, ry: eye_ry },
            Ellipse { cx: cx + eye_dx, cy: eye_y, rx: eye_rx, ry: eye_ry },
        ];
        let brow_y = eye_y - eye_ry - uniform(rng, 0.025, 0.04);
        let brow_rx = eye_rx * uniform(rng, 1.1, 1.4);
        let brows = [
            Ellipse { cx: cx - eye_dx, cy: brow_y, rx: brow_rx, ry: 0.015 },
            Ellipse { cx: cx + eye_dx, cy: brow_y, rx: brow_rx, ry: 0.015 },
        ];

        let nose_len = uniform(rng, 0.10, 0.16);
        let nose_top = eye_y + 0.01;
        let nose = Ellipse {
            cx: cx + uniform(rng, -0.012, 0.012),
            cy: nose_top + nose_len / 2.0,
            rx: uniform(rng, 0.025, 0.04),
            ry: nose_len / 2.0,
        };
        let mouth = Ellipse {
            cx: cx + uniform(rng, -0.015, 0.015),
            cy: nose_top + nose_len + uniform(rng, 0.045, 0.075),
            rx: uniform(rng, 0.06, 0.10),
            ry: uniform(rng, 0.02, 0.035),
        };
        let ear_ry = uniform(rng, 0.045, 0.065);
        let ears = [
            Ellipse { cx: cx - ax - 0.01, cy: eye_y + 0.04, rx: 0.03, ry: ear_ry },
            Ellipse { cx: cx + ax + 0.01, cy: eye_y + 0.04, rx: 0.03, ry: ear_ry },
        ];
        Self {
            skin,
            hair_outer,
            hair_line,
            eyes,
            brows,
            nose,
            mouth,
            ears,
            neck_half_width: ax * uniform(rng, 0.45, 0.6),
        }
    }

    fn label(&self, x: f64, y: f64, class_count: usize) -> u8 {
        let has = |class: u8| (class as usize) < class_count;
        let in_skin = self.skin.contains(x, y);
        let mut label = if in_skin { SKIN } else { 0 };
        if self.eyes.iter().any(|e| e.contains(x, y)) {
            label = EYES;
        }
        if self.nose.contains(x, y) {
            label = NOSE;
        }
        if has(MOUTH) && self.mouth.contains(x, y) {
            label = MOUTH;
        }
        if has(HAIR)
            && self.hair_outer.contains(x, y)
            && (y < self.hair_line || (!in_skin && y < self.skin.cy))
        {
            label = HAIR;
        }
        if has(BROWS) && self.brows.iter().any(|e| e.contains(x, y)) {
            label = BROWS;
        }
        if has(EARS) && !in_skin && self.ears.iter().any(|e| e.contains(x, y)) {
            label = EARS;
        }
        if has(NECK)
            && (label == 0 || label == HAIR)
            && y > self.skin.cy
            && (x - self.skin.cx).abs() < self.neck_half_width
        {
            label = NECK;
        }
        label
    }
}

/// Label map of a randomized synthetic face, deterministic in `seed`.
pub fn generate_toy_labels(seed: u64, config: &ToyConfig) -> Result<LabelMap> {
    let ToyConfig { class_count, height, width } = *config;
    if height < 32 || width < 32 {
        return Err(Error::Config("toy masks need height and width of at least 32".into()));
    }
    if height % 16 != 0 || width % 16 != 0 {
        return Err(Error::Config("toy mask size must be a multiple of 16".into()));
    }
    if !(4..=crate::mask::TOY_CLASSES.len()).contains(&class_count) {
        return Err(Error::Config("toy masks support 4 to 9 classes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = Layout::sample(&mut rng);
    let mut labels = vec![0u8; height * width];
    for y in 0..height {
        let fy = (y as f64 + 0.5) / height as f64;
        for x in 0..width {
            let fx = (x as f64 + 0.5) / width as f64;
            labels[y * width + x] = layout.label(fx, fy, class_count);
        }
    }
    LabelMap::new(height, width, class_count, labels)
}

pub fn generate_toy_mask(seed: u64, config: &ToyConfig) -> Result<SemanticMask> {
    one_hot_encode(&generate_toy_labels(seed, config)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_in_seed() {
        let cfg = ToyConfig::default();
        assert_eq!(generate_toy_mask(7, &cfg).unwrap(), generate_toy_mask(7, &cfg).unwrap());
        assert_ne!(generate_toy_mask(7, &cfg).unwrap(), generate_toy_mask(8, &cfg).unwrap());
    }

    #[test]
    fn rejects_small_or_unaligned_sizes() {
        for (h, w) in [(16, 64), (64, 16), (48, 40)] {
            let cfg = ToyConfig { class_count: 6, height: h, width: w };
            assert!(generate_toy_labels(0, &cfg).is_err());
        }
        assert!(generate_toy_labels(0, &ToyConfig { class_count: 3, height: 64, width: 64 }).is_err());
    }

    #[test]
    fn every_class_count_produces_all_classes_somewhere() {
        for c in 4..=9 {
            let cfg = ToyConfig { class_count: c, height: 64, width: 64 };
            let mut seen = vec![false; c];
            for seed in 0..20 {
                for &l in generate_toy_labels(seed, &cfg).unwrap().labels() {
                    seen[l as usize] = true;
                }
            }
            assert!(seen.iter().all(|&s| s), "C={c}: {seen:?}");
        }
    }
}
