//! Label PNGs, color renders and palette files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Cursor, Read, Write};
use std::path::Path;

use semvae_core::mask::{render_color, ClassPalette, PaletteEntry, RgbImage};
use semvae_core::LabelMap;

use crate::error::{CliError, Result};

/// Decodes an 8-bit grayscale PNG whose pixel values are class indices.
pub fn decode_label_png(bytes: &[u8], class_count: usize) -> Result<LabelMap> {
    let (width, height, data) = decode_gray8(bytes)?;
    Ok(LabelMap::new(height, width, class_count, data)?)
}

/// Raw 8-bit grayscale pixels, without a class-range check.
pub fn decode_gray8(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder.read_info().map_err(|e| CliError::Format(format!("png: {e}")))?;
    let info = reader.info();
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(CliError::Format(format!(
            "label maps must be 8-bit grayscale PNGs, got {:?} at {:?}",
            info.color_type, info.bit_depth
        )));
    }
    let (width, height) = (info.width as usize, info.height as usize);
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(width * height)];
    let frame = reader.next_frame(&mut buf).map_err(|e| CliError::Format(format!("png: {e}")))?;
    buf.truncate(frame.buffer_size());
    Ok((width, height, buf))
}

pub fn load_label_png(path: &Path, class_count: usize) -> Result<LabelMap> {
    decode_label_png(&read_file(path)?, class_count)
}

pub fn encode_gray8(width: usize, height: usize, data: &[u8]) -> Result<Vec<u8>> {
    encode(width, height, png::ColorType::Grayscale, data)
}

pub fn encode_label_png(labels: &LabelMap) -> Result<Vec<u8>> {
    encode_gray8(labels.width(), labels.height(), labels.labels())
}

pub fn save_label_png(labels: &LabelMap, path: &Path) -> Result<()> {
    write_file(path, &encode_label_png(labels)?)
}

pub fn encode_rgb_png(image: &RgbImage) -> Result<Vec<u8>> {
    encode(image.width, image.height, png::ColorType::Rgb, &image.pixels)
}

pub fn save_color_png(labels: &LabelMap, palette: &ClassPalette, path: &Path) -> Result<()> {
    write_file(path, &encode_rgb_png(&render_color(labels, palette)?)?)
}

fn encode(width: usize, height: usize, color: png::ColorType, data: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().map_err(|e| CliError::Format(format!("png: {e}")))?;
        w.write_image_data(data).map_err(|e| CliError::Format(format!("png: {e}")))?;
    }
    Ok(out)
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| CliError::io(path, e))?;
    Ok(buf)
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let mut f = BufWriter::new(File::create(path).map_err(|e| CliError::io(path, e))?);
    f.write_all(bytes).and_then(|_| f.flush()).map_err(|e| CliError::io(path, e))
}

/// `index<TAB>name<TAB>#RRGGBB` per line; blank lines and `#` comments are skipped.
pub fn parse_palette(text: &str) -> Result<ClassPalette> {
    let mut entries = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with("# ") || line == "#" {
            continue;
        }
        let bad = |why: &str| CliError::Format(format!("palette line {}: {why}", n + 1));
        let fields: Vec<&str> = line.split('\t').collect();
        let [index, name, color] = fields[..] else {
            return Err(bad("expected three tab-separated fields"));
        };
        let index = index.trim().parse::<usize>().map_err(|_| bad("index is not an integer"))?;
        let hex = color.trim().strip_prefix('#').ok_or_else(|| bad("color must start with `#`"))?;
        if hex.len() != 6 {
            return Err(bad("color must be #RRGGBB"));
        }
        let v = u32::from_str_radix(hex, 16).map_err(|_| bad("color is not hexadecimal"))?;
        entries.push(PaletteEntry {
            index,
            name: name.trim().to_string(),
            color: [(v >> 16) as u8, (v >> 8) as u8, v as u8],
        });
    }
    Ok(ClassPalette::new(entries)?)
}

pub fn format_palette(palette: &ClassPalette) -> String {
    palette
        .entries()
        .iter()
        .map(|e| format!("{}\t{}\t#{:02X}{:02X}{:02X}\n", e.index, e.name, e.color[0], e.color[1], e.color[2]))
        .collect()
}

pub fn load_palette(path: &Path) -> Result<ClassPalette> {
    let f = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut text = String::new();
    for line in BufReader::new(f).lines() {
        text.push_str(&line.map_err(|e| CliError::io(path, e))?);
        text.push('\n');
    }
    parse_palette(&text)
}

pub fn save_palette(palette: &ClassPalette, path: &Path) -> Result<()> {
    write_file(path, format_palette(palette).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_png_round_trip() {
        let labels = LabelMap::new(2, 3, 4, vec![0, 1, 2, 3, 2, 1]).unwrap();
        let bytes = encode_label_png(&labels).unwrap();
        assert_eq!(decode_label_png(&bytes, 4).unwrap(), labels);
        assert!(decode_label_png(&bytes, 3).is_err());
    }

    #[test]
    fn rgb_png_is_rejected_as_labels() {
        let img = RgbImage { height: 1, width: 2, pixels: vec![0; 6] };
        let bytes = encode_rgb_png(&img).unwrap();
        assert!(matches!(decode_label_png(&bytes, 2), Err(CliError::Format(_))));
    }

    #[test]
    fn palette_text_round_trip() {
        let p = ClassPalette::celebamask_hq();
        let text = format_palette(&p);
        assert!(text.starts_with("0\tbackground\t#000000\n"));
        assert_eq!(parse_palette(&text).unwrap(), p);
        assert!(parse_palette("0\tbg\t000000\n").is_err());
        assert!(parse_palette("1\tbg\t#000000\n").is_err());
    }
}
