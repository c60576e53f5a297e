use std::fs::{self, File};
use std::io::BufReader;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{CameraIntrinsics, ClassProbs, LabelDomain, LabelMap, RgbdFrame};
use crate::error::{Error, Result};

struct RawImage {
    width: usize,
    height: usize,
    color_type: png::ColorType,
    bit_depth: png::BitDepth,
    bytes: Vec<u8>,
}

fn image_err(path: &Path, message: impl ToString) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

fn read_png(path: &Path) -> Result<RawImage> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder.read_info().map_err(|e| image_err(path, e))?;
    let mut bytes = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut bytes).map_err(|e| image_err(path, e))?;
    bytes.truncate(info.buffer_size());
    Ok(RawImage {
        width: info.width as usize,
        height: info.height as usize,
        color_type: info.color_type,
        bit_depth: info.bit_depth,
        bytes,
    })
}

fn write_png(
    path: &Path,
    width: usize,
    height: usize,
    color_type: png::ColorType,
    bit_depth: png::BitDepth,
    bytes: &[u8],
) -> Result<()> {
    let mut buf = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut buf, width as u32, height as u32);
        encoder.set_color(color_type);
        encoder.set_depth(bit_depth);
        let mut writer = encoder.write_header().map_err(|e| image_err(path, e))?;
        writer.write_image_data(bytes).map_err(|e| image_err(path, e))?;
        writer.finish().map_err(|e| image_err(path, e))?;
    }
    write_atomic_bytes(path, &buf)
}

/// Reads an 8-bit RGB color PNG and a 16-bit millimeter depth PNG into a
/// metric frame. Stored zeros become invalid (0.0) pixels.
pub fn load_frame(
    color_path: &Path,
    depth_path: &Path,
    intrinsics: CameraIntrinsics,
) -> Result<RgbdFrame> {
    if !(intrinsics.depth_scale > 0.0) {
        return Err(Error::Invalid(format!(
            "depth_scale must be positive, got {}",
            intrinsics.depth_scale
        )));
    }
    let color = read_png(color_path)?;
    if color.color_type != png::ColorType::Rgb || color.bit_depth != png::BitDepth::Eight {
        return Err(image_err(color_path, "expected 8-bit RGB"));
    }
    let depth = read_png(depth_path)?;
    if depth.color_type != png::ColorType::Grayscale || depth.bit_depth != png::BitDepth::Sixteen {
        return Err(image_err(depth_path, "expected 16-bit grayscale"));
    }
    if (color.width, color.height) != (depth.width, depth.height) {
        return Err(Error::Dimension(format!(
            "color is {}x{} but depth is {}x{}",
            color.width, color.height, depth.width, depth.height
        )));
    }
    let meters = depth
        .bytes
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]) as f64 * intrinsics.depth_scale)
        .collect();
    RgbdFrame::new(color.width, color.height, color.bytes, meters, intrinsics)
}

/// Writes a frame as color + 16-bit depth PNGs, quantizing depth to the
/// intrinsics' depth unit.
pub fn save_frame(frame: &RgbdFrame, color_path: &Path, depth_path: &Path) -> Result<()> {
    write_png(
        color_path,
        frame.width,
        frame.height,
        png::ColorType::Rgb,
        png::BitDepth::Eight,
        &frame.color,
    )?;
    let scale = frame.intrinsics.depth_scale;
    let mut raw = Vec::with_capacity(frame.depth.len() * 2);
    for &d in &frame.depth {
        let units = (d / scale).round();
        if units > u16::MAX as f64 {
            return Err(Error::Invalid(format!(
                "depth {d} m exceeds the 16-bit range at scale {scale}"
            )));
        }
        raw.extend_from_slice(&(units as u16).to_be_bytes());
    }
    write_png(
        depth_path,
        frame.width,
        frame.height,
        png::ColorType::Grayscale,
        png::BitDepth::Sixteen,
        &raw,
    )
}

pub fn load_label_map(path: &Path, domain: LabelDomain) -> Result<LabelMap> {
    let img = read_png(path)?;
    if img.color_type != png::ColorType::Grayscale || img.bit_depth != png::BitDepth::Eight {
        return Err(image_err(path, "expected 8-bit single-channel label image"));
    }
    LabelMap::new(img.width, img.height, img.bytes, domain)
}

pub fn save_label_map(map: &LabelMap, path: &Path) -> Result<()> {
    write_png(
        path,
        map.width,
        map.height,
        png::ColorType::Grayscale,
        png::BitDepth::Eight,
        &map.labels,
    )
}

/// Loads and validates a food/plate annotation pair.
pub fn load_annotation(food_path: &Path, plate_path: &Path) -> Result<(LabelMap, LabelMap)> {
    let food = load_label_map(food_path, LabelDomain::Food)?;
    let plate = load_label_map(plate_path, LabelDomain::Plate)?;
    if (food.width, food.height) != (plate.width, plate.height) {
        return Err(Error::Dimension(format!(
            "food annotation {}x{} vs plate annotation {}x{}",
            food.width, food.height, plate.width, plate.height
        )));
    }
    Ok((food, plate))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

/// Pretty-printed JSON with a trailing newline, written via a temporary
/// file and rename so readers never observe a partial document.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    write_atomic_bytes(path, text.as_bytes())
}

pub fn write_atomic_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(path, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_intrinsics(path: &Path) -> Result<CameraIntrinsics> {
    read_json(path)
}

pub fn save_intrinsics(intr: &CameraIntrinsics, path: &Path) -> Result<()> {
    write_json(path, intr)
}

const PROB_MAGIC: &[u8; 4] = b"PWPM";

/// Dense probability map: a 16-byte header (`PWPM`, then height, width and
/// class count as little-endian u32) followed by H×W×C little-endian f64
/// values, channel-last.
pub fn encode_prob_map(map: &ClassProbs) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * map.data.len());
    out.extend_from_slice(PROB_MAGIC);
    for v in [map.height, map.width, map.classes] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for v in &map.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_prob_map(bytes: &[u8]) -> Result<ClassProbs> {
    if bytes.len() < 16 || &bytes[..4] != PROB_MAGIC {
        return Err(Error::Invalid("not a probability map (bad header)".into()));
    }
    let field = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap()) as usize;
    let (height, width, classes) = (field(1), field(2), field(3));
    let body = &bytes[16..];
    if body.len() != 8 * width * height * classes {
        return Err(Error::Dimension(format!(
            "probability map {width}x{height}x{classes} has {} payload bytes",
            body.len()
        )));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    ClassProbs::new(width, height, classes, data)
}

pub fn save_prob_map(map: &ClassProbs, path: &Path) -> Result<()> {
    write_atomic_bytes(path, &encode_prob_map(map))
}

pub fn load_prob_map(path: &Path) -> Result<ClassProbs> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_prob_map(&bytes)
}
