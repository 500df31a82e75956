//! Mask directories: synthetic corpora, CelebAMask-HQ part folders and
//! per-part exports for image synthesis models.

use std::collections::BTreeMap;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use semvae_core::mask::{decompose_partwise, ingest_partwise, one_hot_encode, ClassPalette, PartPlane};
use semvae_core::toy::{generate_toy_labels, ToyConfig};
use semvae_core::LabelMap;

use crate::error::{CliError, Result};
use crate::io::{encode_gray8, load_label_png, load_palette, read_file, save_label_png, save_palette, write_file};

pub const PALETTE_FILE: &str = "palette.tsv";

/// Label maps of a directory in file-name order.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub palette: ClassPalette,
    pub names: Vec<String>,
    pub masks: Vec<LabelMap>,
}

impl Dataset {
    pub fn mask_size(&self) -> Result<usize> {
        let first = self.masks.first().ok_or_else(|| CliError::Usage("dataset has no masks".into()))?;
        if first.height() != first.width() {
            return Err(CliError::Usage(format!("masks must be square, got {}x{}", first.height(), first.width())));
        }
        if let Some(m) = self.masks.iter().find(|m| m.height() != first.height() || m.width() != first.width()) {
            return Err(CliError::Usage(format!(
                "masks differ in size: {}x{} vs {}x{}",
                m.height(),
                m.width(),
                first.height(),
                first.width()
            )));
        }
        Ok(first.height())
    }
}

fn png_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::Usage(format!("directory {} not found", dir.display())),
        _ => CliError::io(dir, e),
    })?;
    let mut files = Vec::new();
    for entry in rd {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Reads `dir/palette.tsv` and every `*.png` label map in `dir`.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let palette_path = dir.join(PALETTE_FILE);
    if !palette_path.exists() {
        return Err(CliError::Usage(format!("{} not found", palette_path.display())));
    }
    let palette = load_palette(&palette_path)?;
    let files = png_files(dir)?;
    let mut names = Vec::with_capacity(files.len());
    let mut masks = Vec::with_capacity(files.len());
    for f in files {
        masks.push(load_label_png(&f, palette.len()).map_err(|e| CliError::Format(format!("{}: {e}", f.display())))?);
        names.push(stem(&f));
    }
    Ok(Dataset { palette, names, masks })
}

/// Seed of the `index`-th mask of a corpus generated with `seed`.
pub fn toy_mask_seed(seed: u64, index: u64) -> u64 {
    (seed << 32) ^ index
}

/// Writes `n` toy masks as `00000.png`, … plus the palette.
pub fn synth_dataset(out: &Path, n: usize, config: &ToyConfig, seed: u64) -> Result<Vec<PathBuf>> {
    let palette = ClassPalette::toy(config.class_count)?;
    save_palette(&palette, &out.join(PALETTE_FILE))?;
    let width = n.saturating_sub(1).to_string().len().max(5);
    let mut paths = Vec::with_capacity(n);
    for i in 0..n {
        let labels = generate_toy_labels(toy_mask_seed(seed, i as u64), config)?;
        let path = out.join(format!("{i:0width$}.png"));
        save_label_png(&labels, &path)?;
        paths.push(path);
    }
    Ok(paths)
}

/// Occupancy plane from a binary part PNG: any non-zero sample in the first
/// channel counts as covered.
pub fn decode_part_png(bytes: &[u8], name: &str) -> Result<PartPlane> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = decoder.read_info().map_err(|e| CliError::Format(format!("png: {e}")))?;
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
    let frame = reader.next_frame(&mut buf).map_err(|e| CliError::Format(format!("png: {e}")))?;
    let channels = frame.color_type.samples();
    let (w, h) = (frame.width as usize, frame.height as usize);
    let occupied = buf[..frame.buffer_size()].chunks_exact(channels).map(|px| px[0] != 0).collect();
    Ok(PartPlane { name: name.to_string(), height: h, width: w, occupied })
}

fn resize_plane(p: &PartPlane, size: usize) -> PartPlane {
    if p.height == size && p.width == size {
        return p.clone();
    }
    let mut occupied = Vec::with_capacity(size * size);
    for y in 0..size {
        let sy = y * p.height / size;
        for x in 0..size {
            occupied.push(p.occupied[sy * p.width + x * p.width / size]);
        }
    }
    PartPlane { name: p.name.clone(), height: size, width: size, occupied }
}

/// Groups `<id>_<part>.png` files by id. Part names may themselves contain
/// underscores, so the id ends at the first one.
pub fn scan_part_files(dir: &Path) -> Result<BTreeMap<String, Vec<(String, PathBuf)>>> {
    let mut groups: BTreeMap<String, Vec<(String, PathBuf)>> = BTreeMap::new();
    for f in png_files(dir)? {
        let s = stem(&f);
        let Some((id, part)) = s.split_once('_') else {
            continue;
        };
        groups.entry(id.to_string()).or_default().push((part.to_string(), f));
    }
    Ok(groups)
}

/// Merges the part files of one image into a label map of `size × size`
/// (nearest-neighbour resampling of each part). Ids without any part file
/// cannot be recovered and are absent from the scan.
pub fn ingest_parts(parts: &[(String, PathBuf)], palette: &ClassPalette, size: usize) -> Result<LabelMap> {
    let mut planes = Vec::with_capacity(parts.len());
    for (name, path) in parts {
        if palette.index_of(name).is_none() {
            return Err(CliError::Usage(format!(
                "{}: unknown part `{name}`; palette has {}",
                path.display(),
                palette.names().join(", ")
            )));
        }
        let plane = decode_part_png(&read_file(path)?, name)?;
        planes.push(resize_plane(&plane, size));
    }
    Ok(ingest_partwise(&planes, palette)?.to_labels())
}

/// Converts a folder of part files into label maps `<out>/<id>.png`.
pub fn ingest_directory(input: &Path, palette: &ClassPalette, size: usize, out: &Path) -> Result<Vec<String>> {
    let groups = scan_part_files(input)?;
    save_palette(palette, &out.join(PALETTE_FILE))?;
    let mut ids = Vec::with_capacity(groups.len());
    for (id, parts) in &groups {
        let labels = ingest_parts(parts, palette, size)?;
        save_label_png(&labels, &out.join(format!("{id}.png")))?;
        ids.push(id.clone());
    }
    Ok(ids)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum SisLayout {
    /// One binary 0/255 PNG per present non-background class, `<id>_<part>.png`.
    PartFiles,
    /// A single label map `<id>.png`.
    LabelMap,
}

pub fn export_sis(labels: &LabelMap, palette: &ClassPalette, layout: SisLayout, id: &str, out: &Path) -> Result<Vec<PathBuf>> {
    match layout {
        SisLayout::LabelMap => {
            let path = out.join(format!("{id}.png"));
            save_label_png(labels, &path)?;
            Ok(vec![path])
        }
        SisLayout::PartFiles => {
            let parts = decompose_partwise(&one_hot_encode(labels)?, palette)?;
            let mut paths = Vec::with_capacity(parts.len());
            for p in parts {
                let data: Vec<u8> = p.occupied.iter().map(|&on| if on { 255 } else { 0 }).collect();
                let path = out.join(format!("{id}_{}.png", p.name));
                write_file(&path, &encode_gray8(p.width, p.height, &data)?)?;
                paths.push(path);
            }
            Ok(paths)
        }
    }
}
