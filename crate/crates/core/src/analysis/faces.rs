//! Face boxes and privacy blurring on PPM images.

use crate::media::RgbImage;
use crate::model::FaceBox;

use super::AnalysisError;

pub const BLUR_RADIUS: u32 = 5;
pub const BLUR_PASSES: usize = 3;

/// Clips boxes to the image, dropping any that fall entirely outside.
pub fn clip_boxes(boxes: &[FaceBox], width: u32, height: u32) -> Vec<FaceBox> {
    boxes.iter().filter_map(|b| b.clip(width, height)).collect()
}

/// Three passes of an 11x11 box blur inside each box. Neighbours outside
/// the box clamp to its border, so pixels outside every box are untouched.
pub fn blur_faces(image: &[u8], boxes: &[FaceBox]) -> Result<Vec<u8>, AnalysisError> {
    let (mut img, header_len) = RgbImage::decode_ppm(image)?;
    let boxes = clip_boxes(boxes, img.width, img.height);
    if boxes.is_empty() {
        return Ok(image.to_vec());
    }
    for b in &boxes {
        for _ in 0..BLUR_PASSES {
            box_blur_region(&mut img, b);
        }
    }
    let mut out = image[..header_len].to_vec();
    out.extend_from_slice(&img.pixels);
    out.extend_from_slice(&image[header_len + img.pixels.len()..]);
    Ok(out)
}

fn box_blur_region(img: &mut RgbImage, b: &FaceBox) {
    let (w, h) = (b.w as usize, b.h as usize);
    let r = BLUR_RADIUS as isize;
    let taps = ((2 * r + 1) * (2 * r + 1)) as u32;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    for c in 0..3 {
        let src: Vec<u32> = (0..h)
            .flat_map(|y| (0..w).map(move |x| (x, y)))
            .map(|(x, y)| u32::from(img.pixels[img.offset(b.x + x as u32, b.y + y as u32) + c]))
            .collect();
        // Separable exact sums; clamping per axis equals clamping in 2-D.
        let mut horiz = vec![0u32; w * h];
        for y in 0..h {
            for x in 0..w {
                horiz[y * w + x] = (-r..=r).map(|d| src[y * w + clamp(x as isize + d, w)]).sum();
            }
        }
        for y in 0..h {
            for x in 0..w {
                let sum: u32 = (-r..=r).map(|d| horiz[clamp(y as isize + d, h) * w + x]).sum();
                let o = img.offset(b.x + x as u32, b.y + y as u32) + c;
                img.pixels[o] = ((sum + taps / 2) / taps) as u8;
            }
        }
    }
}

/// Population variance of all channel values inside a box.
pub fn region_variance(img: &RgbImage, b: &FaceBox) -> f64 {
    let vals: Vec<f64> = (b.y..b.y + b.h)
        .flat_map(|y| (b.x..b.x + b.w).map(move |x| (x, y)))
        .flat_map(|(x, y)| img.get(x, y))
        .map(f64::from)
        .collect();
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}
