//! Binary P6 PPM with maxval 255.

use hgtnet_core::data::Image;

/// Decode a P6 file. Header tokens may be separated by any whitespace and
/// interleaved with `#` comment lines; exactly one whitespace byte separates
/// the maxval from the raster.
pub fn decode(bytes: &[u8]) -> Result<Image, String> {
    let mut pos = 0;
    let mut fields = [0usize; 3];
    let magic = token(bytes, &mut pos)?;
    if magic != b"P6" {
        return Err("not a binary PPM (magic must be P6)".into());
    }
    for (i, name) in ["width", "height", "maxval"].iter().enumerate() {
        let t = token(bytes, &mut pos)?;
        fields[i] = std::str::from_utf8(t)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format!("{name} is not a number"))?;
    }
    let [w, h, maxval] = fields;
    if w == 0 || h == 0 {
        return Err(format!("empty image {w}x{h}"));
    }
    if maxval != 255 {
        return Err(format!("maxval {maxval} unsupported, only 255"));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err("missing whitespace before raster".into()),
    }
    let need = w * h * 3;
    let raster = &bytes[pos..];
    if raster.len() < need {
        return Err(format!("raster holds {} bytes, expected {need}", raster.len()));
    }
    let pixels = raster[..need].iter().map(|&b| b as f64 / 255.0).collect();
    Image::new(h, w, pixels).map_err(|e| e.to_string())
}

fn token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8], String> {
    loop {
        match bytes.get(*pos) {
            None => return Err("header ends early".into()),
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(|b| !b.is_ascii_whitespace() && *b != b'#') {
        *pos += 1;
    }
    Ok(&bytes[start..*pos])
}

/// Encode with each channel value clamped to [0, 1] and rounded to 8 bits.
pub fn encode(img: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.pixels.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}
