//! Class-level latent edits: sampling a class code from the prior,
//! perturbing it, or blending it with another mask's code.
//!
//! All edits act on the codes that enter the recurrent block, and each
//! touches exactly one row.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{Error, Result};
use crate::mask::{ClassPalette, LabelMap};
use crate::model::{reparameterize, ClassEmbeddings, MaskLogits, MaskVae, Mode};
use crate::nn::standard_normal;
use crate::scalar::Scalar;

fn check_class<T>(codes: &ClassEmbeddings<T>, class: usize) -> Result<()> {
    if class >= codes.class_count {
        return Err(Error::UnknownClass(format!("index {class} (have {})", codes.class_count)));
    }
    Ok(())
}

/// Replaces row `class` with a standard-normal draw. With `truncation`,
/// entries are redrawn until `|z| <= truncation`.
pub fn generate_part<T: Scalar>(
    codes: &ClassEmbeddings<T>,
    class: usize,
    truncation: Option<f64>,
    rng: &mut impl RngCore,
) -> Result<ClassEmbeddings<T>> {
    check_class(codes, class)?;
    if let Some(t) = truncation {
        if !(t > 0.0) {
            return Err(Error::EditPlan(format!("truncation must be positive, got {t}")));
        }
    }
    let mut out = codes.clone();
    for v in out.row_mut(class) {
        let mut z: T = standard_normal(rng);
        if let Some(t) = truncation {
            while z.abs().as_f64() > t {
                z = standard_normal(rng);
            }
        }
        *v = z;
    }
    Ok(out)
}

/// Adds `noise_scale · z`, `z ~ N(0, I)`, to row `class`.
pub fn perturb_part<T: Scalar>(
    codes: &ClassEmbeddings<T>,
    class: usize,
    noise_scale: f64,
    rng: &mut impl RngCore,
) -> Result<ClassEmbeddings<T>> {
    check_class(codes, class)?;
    if !(noise_scale >= 0.0) || !noise_scale.is_finite() {
        return Err(Error::EditPlan(format!("noise_scale must be finite and ≥ 0, got {noise_scale}")));
    }
    let mut out = codes.clone();
    if noise_scale == 0.0 {
        return Ok(out);
    }
    let s = T::lit(noise_scale);
    for v in out.row_mut(class) {
        *v += s * standard_normal::<T>(rng);
    }
    Ok(out)
}

/// Row `class` of `source` becomes `alpha · target + (1 - alpha) · source`.
pub fn interpolate_part<T: Scalar>(
    source: &ClassEmbeddings<T>,
    target: &ClassEmbeddings<T>,
    class: usize,
    alpha: f64,
) -> Result<ClassEmbeddings<T>> {
    check_class(source, class)?;
    if source.class_count != target.class_count || source.dim != target.dim {
        return Err(Error::Shape(format!(
            "source codes {}x{} vs target {}x{}",
            source.class_count, source.dim, target.class_count, target.dim
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::EditPlan(format!("alpha must be in [0, 1], got {alpha}")));
    }
    let a = T::lit(alpha);
    let b = T::one() - a;
    let mut out = source.clone();
    for (v, &t) in out.row_mut(class).iter_mut().zip(target.row(class)) {
        *v = a * t + b * *v;
    }
    Ok(out)
}

/// A class named either by palette index or by name.
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(untagged))]
pub enum ClassRef {
    Index(usize),
    Name(String),
}

impl ClassRef {
    pub fn resolve(&self, palette: &ClassPalette) -> Result<usize> {
        match self {
            ClassRef::Index(i) if *i < palette.len() => Ok(*i),
            ClassRef::Index(i) => Err(Error::UnknownClass(format!("index {i}"))),
            ClassRef::Name(n) => palette.index_of(n).ok_or_else(|| Error::UnknownClass(n.clone())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum EditOp {
    Generate,
    Perturb,
    Interpolate,
}

/// One serialized edit, e.g. `{"class": "nose", "op": "perturb", "noise_scale": 0.5, "seed": 3}`.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Edit {
    pub class: ClassRef,
    pub op: EditOp,
    /// Interpolation factor (interpolate only).
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub alpha: Option<f64>,
    /// Perturbation scale (perturb only, default 1).
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub noise_scale: Option<f64>,
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub seed: Option<u64>,
    /// Reference to the mask supplying the target code (interpolate only);
    /// resolved by the caller.
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub target: Option<String>,
    /// Optional truncation of prior samples (generate only).
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub truncation: Option<f64>,
}

impl Edit {
    pub fn generate(class: ClassRef, seed: u64) -> Self {
        Self { class, op: EditOp::Generate, alpha: None, noise_scale: None, seed: Some(seed), target: None, truncation: None }
    }

    pub fn perturb(class: ClassRef, noise_scale: f64, seed: u64) -> Self {
        Self { noise_scale: Some(noise_scale), op: EditOp::Perturb, ..Self::generate(class, seed) }
    }

    pub fn interpolate(class: ClassRef, alpha: f64, target: Option<String>) -> Self {
        Self { class, op: EditOp::Interpolate, alpha: Some(alpha), noise_scale: None, seed: None, target, truncation: None }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EditPlan {
    pub edits: Vec<Edit>,
    /// Seed for edits that carry none of their own.
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub seed: Option<u64>,
}

/// An edit with its class resolved and its parameters checked.
#[derive(Clone, Debug, PartialEq)]
pub struct ResolvedEdit {
    pub class: usize,
    pub op: EditOp,
    pub alpha: f64,
    pub noise_scale: f64,
    pub seed: u64,
    pub target: Option<String>,
    pub truncation: Option<f64>,
}

impl ResolvedEdit {
    /// Generator for this edit: seeded by the edit seed, with the class index
    /// selecting the stream so that different classes never share draws.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.class as u64);
        rng
    }
}

impl EditPlan {
    pub fn new(edits: Vec<Edit>) -> Self {
        Self { edits, seed: None }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    /// Resolves class names and checks parameter ranges; rejects two edits
    /// on the same class.
    pub fn resolve(&self, palette: &ClassPalette) -> Result<Vec<ResolvedEdit>> {
        let mut out: Vec<ResolvedEdit> = Vec::with_capacity(self.edits.len());
        for e in &self.edits {
            let class = e.class.resolve(palette)?;
            if out.iter().any(|r| r.class == class) {
                return Err(Error::EditPlan(format!(
                    "class `{}` edited more than once",
                    palette.name(class).unwrap_or("?")
                )));
            }
            let alpha = match (e.op, e.alpha) {
                (EditOp::Interpolate, Some(a)) if (0.0..=1.0).contains(&a) => a,
                (EditOp::Interpolate, Some(a)) => {
                    return Err(Error::EditPlan(format!("alpha must be in [0, 1], got {a}")))
                }
                (EditOp::Interpolate, None) => return Err(Error::EditPlan("interpolate needs alpha".into())),
                _ => 0.0,
            };
            let noise_scale = e.noise_scale.unwrap_or(1.0);
            if e.op == EditOp::Perturb && !(noise_scale >= 0.0 && noise_scale.is_finite()) {
                return Err(Error::EditPlan(format!("noise_scale must be finite and ≥ 0, got {noise_scale}")));
            }
            if let Some(t) = e.truncation {
                if !(t > 0.0) {
                    return Err(Error::EditPlan(format!("truncation must be positive, got {t}")));
                }
            }
            out.push(ResolvedEdit {
                class,
                op: e.op,
                alpha,
                noise_scale,
                seed: e.seed.or(self.seed).unwrap_or(0),
                target: e.target.clone(),
                truncation: e.truncation,
            });
        }
        Ok(out)
    }
}

/// Applies resolved edits in order. `targets` maps an interpolation target
/// reference to that mask's codes.
pub fn apply_edits<T: Scalar>(
    codes: &ClassEmbeddings<T>,
    edits: &[ResolvedEdit],
    targets: &mut dyn FnMut(Option<&str>) -> Result<ClassEmbeddings<T>>,
) -> Result<ClassEmbeddings<T>> {
    let mut current = codes.clone();
    for e in edits {
        current = match e.op {
            EditOp::Generate => generate_part(&current, e.class, e.truncation, &mut e.rng())?,
            EditOp::Perturb => perturb_part(&current, e.class, e.noise_scale, &mut e.rng())?,
            EditOp::Interpolate => {
                let target = targets(e.target.as_deref())?;
                interpolate_part(&current, &target, e.class, e.alpha)?
            }
        };
    }
    Ok(current)
}

/// Inference-mode codes of a label map.
pub fn embed<T: Scalar>(model: &MaskVae<T>, labels: &LabelMap) -> Result<ClassEmbeddings<T>> {
    let dist = model.encode_labels(labels)?;
    let mut unused = ChaCha8Rng::seed_from_u64(0);
    Ok(reparameterize(&dist, Mode::Infer, &mut unused))
}

/// Edits the codes, then runs a single recurrent → feed-forward → decoder
/// pass. Returns the argmax label map and the logits.
pub fn apply_edit_plan<T: Scalar>(
    model: &MaskVae<T>,
    codes: &ClassEmbeddings<T>,
    plan: &EditPlan,
    palette: &ClassPalette,
    targets: &mut dyn FnMut(Option<&str>) -> Result<ClassEmbeddings<T>>,
) -> Result<(LabelMap, MaskLogits<T>)> {
    if palette.len() != model.config().class_count {
        return Err(Error::Palette(format!(
            "palette has {} classes, model {}",
            palette.len(),
            model.config().class_count
        )));
    }
    let resolved = plan.resolve(palette)?;
    let edited = apply_edits(codes, &resolved, targets)?;
    let logits = model.synthesize(&edited)?;
    Ok((logits.to_labels(), logits))
}

/// Masks for `steps` evenly spaced factors from 0 to 1 inclusive.
pub fn interpolation_sweep<T: Scalar>(
    model: &MaskVae<T>,
    source: &ClassEmbeddings<T>,
    target: &ClassEmbeddings<T>,
    class: usize,
    steps: usize,
) -> Result<Vec<LabelMap>> {
    if steps < 2 {
        return Err(Error::EditPlan(format!("a sweep needs at least 2 steps, got {steps}")));
    }
    let codes = (0..steps)
        .map(|i| interpolate_part(source, target, class, i as f64 / (steps - 1) as f64))
        .collect::<Result<Vec<_>>>()?;
    Ok(model.synthesize_batch(&codes)?.iter().map(MaskLogits::to_labels).collect())
}

/// Pixels whose membership in class `c` differs between two maps, per class.
pub fn changed_pixels_per_class(before: &LabelMap, after: &LabelMap) -> Result<Vec<u64>> {
    if before.labels().len() != after.labels().len() || before.class_count() != after.class_count() {
        return Err(Error::Shape("label maps differ in shape".into()));
    }
    let mut counts = alloc::vec![0u64; before.class_count()];
    for (&a, &b) in before.labels().iter().zip(after.labels()) {
        if a != b {
            counts[a as usize] += 1;
            counts[b as usize] += 1;
        }
    }
    Ok(counts)
}
