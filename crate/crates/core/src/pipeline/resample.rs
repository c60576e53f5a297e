//! Integer-factor resampling between capture and network resolution.

use crate::data::{CameraIntrinsics, LabelMap, RgbdFrame};
use crate::error::{Error, Result};

fn factor(from: (usize, usize), to: (usize, usize)) -> Result<usize> {
    let (fw, fh) = from;
    let (tw, th) = to;
    if tw == 0 || th == 0 || fw % tw != 0 || fh % th != 0 || fw / tw != fh / th {
        return Err(Error::Dimension(format!(
            "cannot resample {fw}x{fh} to {tw}x{th} by one integer factor"
        )));
    }
    Ok(fw / tw)
}

/// Block-averages color and valid depth by the integer factor that maps
/// the frame onto `width`×`height`; intrinsics follow the pixel grid.
pub fn downsample_frame(frame: &RgbdFrame, width: usize, height: usize) -> Result<RgbdFrame> {
    let f = factor((frame.width, frame.height), (width, height))?;
    if f == 1 {
        return Ok(frame.clone());
    }
    let mut color = vec![0u8; 3 * width * height];
    let mut depth = vec![0.0; width * height];
    for y in 0..height {
        for x in 0..width {
            let mut rgb = [0u32; 3];
            let (mut dsum, mut dn) = (0.0, 0usize);
            for sy in y * f..(y + 1) * f {
                for sx in x * f..(x + 1) * f {
                    let i = sy * frame.width + sx;
                    for c in 0..3 {
                        rgb[c] += frame.color[3 * i + c] as u32;
                    }
                    if frame.is_valid(i) {
                        dsum += frame.depth[i];
                        dn += 1;
                    }
                }
            }
            let o = y * width + x;
            let n = (f * f) as u32;
            for c in 0..3 {
                color[3 * o + c] = ((rgb[c] + n / 2) / n) as u8;
            }
            if dn > 0 {
                depth[o] = dsum / dn as f64;
            }
        }
    }
    let k = &frame.intrinsics;
    let s = f as f64;
    let intrinsics = CameraIntrinsics {
        fx: k.fx / s,
        fy: k.fy / s,
        cx: (k.cx + 0.5) / s - 0.5,
        cy: (k.cy + 0.5) / s - 0.5,
        depth_scale: k.depth_scale,
    };
    RgbdFrame::new(width, height, color, depth, intrinsics)
}

/// Takes the label at the center of each block.
pub fn downsample_labels(map: &LabelMap, width: usize, height: usize) -> Result<LabelMap> {
    let f = factor((map.width, map.height), (width, height))?;
    let labels = (0..width * height)
        .map(|o| {
            let (x, y) = (o % width, o / width);
            map.labels[(y * f + f / 2) * map.width + x * f + f / 2]
        })
        .collect();
    LabelMap::new(width, height, labels, map.domain)
}

/// Nearest-neighbor upsampling to `width`×`height`.
pub fn upsample_labels(map: &LabelMap, width: usize, height: usize) -> Result<LabelMap> {
    let f = factor((width, height), (map.width, map.height))?;
    let labels = (0..width * height)
        .map(|o| map.labels[(o / width / f) * map.width + (o % width) / f])
        .collect();
    LabelMap::new(width, height, labels, map.domain)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LabelDomain;

    fn frame() -> RgbdFrame {
        let (w, h) = (8, 4);
        let color = (0..3 * w * h).map(|i| (i % 200) as u8).collect();
        let mut depth: Vec<f64> = (0..w * h).map(|i| 0.4 + 0.001 * i as f64).collect();
        depth[0] = 0.0;
        let k = CameraIntrinsics { fx: 10.0, fy: 10.0, cx: 3.5, cy: 1.5, depth_scale: 0.001 };
        RgbdFrame::new(w, h, color, depth, k).unwrap()
    }

    #[test]
    fn block_average_skips_invalid_depth() {
        let f = frame();
        let d = downsample_frame(&f, 4, 2).unwrap();
        // block (0,0) holds pixels 0, 1, 8, 9 with pixel 0 invalid
        let want = (f.depth[1] + f.depth[8] + f.depth[9]) / 3.0;
        assert!((d.depth[0] - want).abs() < 1e-15);
        assert_eq!(d.color[0], ((0 + 3 + 24 + 27 + 2) / 4) as u8);
        // the principal point stays on the optical axis
        assert_eq!((d.intrinsics.cx, d.intrinsics.cy), (1.5, 0.5));
        assert!(downsample_frame(&f, 3, 2).is_err());
    }

    #[test]
    fn labels_round_trip_through_blocks() {
        let small = LabelMap::new(3, 2, vec![1, 2, 3, 4, 5, 6], LabelDomain::Food).unwrap();
        let big = upsample_labels(&small, 12, 8).unwrap();
        assert_eq!(big.labels[0], 1);
        assert_eq!(big.labels[12 * 7 + 11], 6);
        assert_eq!(downsample_labels(&big, 3, 2).unwrap(), small);
    }
}
