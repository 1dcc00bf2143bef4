use std::io::{self, Write};

use crate::latents::LatentField;

/// Writes a binary PPM preview: channels 0-2 as RGB (channel 0 repeated
/// when there are fewer), each min-max normalised to 0..=255.
pub fn write_ppm<W: Write>(image: &LatentField, sink: &mut W) -> io::Result<()> {
    let (h, w) = (image.height(), image.width());
    write!(sink, "P6\n{w} {h}\n255\n")?;
    let planes: Vec<(&[f64], f64, f64)> = (0..3)
        .map(|c| {
            let plane = image.channel(if c < image.channels() { c } else { 0 });
            let lo = plane.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = plane.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (plane, lo, hi)
        })
        .collect();
    let mut bytes = Vec::with_capacity(h * w * 3);
    for i in 0..h * w {
        for &(plane, lo, hi) in &planes {
            let v = if hi > lo { (plane[i] - lo) / (hi - lo) } else { 0.5 };
            bytes.push((v * 255.0).round() as u8);
        }
    }
    sink.write_all(&bytes)
}
