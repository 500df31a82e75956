//! Edit pipeline shared by the CLI and the HTTP service.

use semvae_core::latent::{apply_edit_plan, changed_pixels_per_class, embed, EditPlan};
use semvae_core::{ClassEmbeddings, ClassPalette, LabelMap, MaskVae};

use crate::error::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct EditOutcome {
    pub edited: LabelMap,
    pub reconstruction: LabelMap,
    /// Per class, pixels entering or leaving that class relative to the
    /// plain reconstruction.
    pub changed_pixels: Vec<u64>,
}

/// Encodes `labels`, applies `plan`, decodes once. Interpolation targets are
/// looked up through `target`.
pub fn run_edit(
    model: &MaskVae<f32>,
    palette: &ClassPalette,
    labels: &LabelMap,
    plan: &EditPlan,
    target: &mut dyn FnMut(Option<&str>) -> Result<LabelMap>,
) -> Result<EditOutcome> {
    let codes = embed(model, labels)?;
    run_edit_codes(model, palette, &codes, plan, target)
}

pub fn run_edit_codes(
    model: &MaskVae<f32>,
    palette: &ClassPalette,
    codes: &ClassEmbeddings<f32>,
    plan: &EditPlan,
    target: &mut dyn FnMut(Option<&str>) -> Result<LabelMap>,
) -> Result<EditOutcome> {
    let reconstruction = model.synthesize(codes)?.to_labels();
    let mut failure = None;
    let mut resolver = |t: Option<&str>| -> semvae_core::Result<ClassEmbeddings<f32>> {
        let labels = match target(t) {
            Ok(l) => l,
            Err(e) => {
                let msg = e.to_string();
                failure = Some(e);
                return Err(semvae_core::Error::EditPlan(msg));
            }
        };
        embed(model, &labels)
    };
    let result = apply_edit_plan(model, codes, plan, palette, &mut resolver);
    let (edited, _) = match (result, failure) {
        (Ok(r), _) => r,
        (Err(_), Some(e)) => return Err(e),
        (Err(e), None) => return Err(e.into()),
    };
    let changed_pixels = changed_pixels_per_class(&reconstruction, &edited)?;
    Ok(EditOutcome { edited, reconstruction, changed_pixels })
}
