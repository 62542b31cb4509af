//! 8-bit image files: binary PPM/PGM and PNG. Values are clamped to
//! `[0, 1]` and quantized on write; reads return a 1- or 3-channel latent.

use std::fs::File;
use std::io::{BufWriter, Read};
use std::path::Path;

use crate::error::{Error, Result};
use crate::latent::Latent;

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Interleaved 8-bit samples (HWC order) of a 1- or 3-channel latent.
pub fn to_bytes(img: &Latent) -> Result<Vec<u8>> {
    let [c, h, w] = img.shape();
    if c != 1 && c != 3 {
        return Err(Error::Image(format!("cannot encode {c}-channel image")));
    }
    let mut out = Vec::with_capacity(c * h * w);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                out.push(quantize(img.get(ch, y, x)));
            }
        }
    }
    Ok(out)
}

fn from_bytes(bytes: &[u8], channels: usize, width: usize, height: usize) -> Result<Latent> {
    if bytes.len() < channels * width * height {
        return Err(Error::Image("truncated pixel data".into()));
    }
    let mut img = Latent::zeros(channels, height, width);
    for y in 0..height {
        for x in 0..width {
            for ch in 0..channels {
                let b = bytes[(y * width + x) * channels + ch];
                img.set(ch, y, x, b as f64 / 255.0);
            }
        }
    }
    Ok(img)
}

pub fn encode_ppm(img: &Latent) -> Result<Vec<u8>> {
    let [c, h, w] = img.shape();
    let magic = if c == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    out.extend(to_bytes(img)?);
    Ok(out)
}

pub fn decode_ppm(data: &[u8]) -> Result<Latent> {
    // Header: magic, width, height, maxval separated by whitespace/comments.
    let mut fields = Vec::new();
    let mut i = 0;
    while fields.len() < 4 {
        while i < data.len() && data[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < data.len() && data[i] == b'#' {
            while i < data.len() && data[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < data.len() && !data[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(Error::Image("truncated PPM header".into()));
        }
        fields.push(String::from_utf8_lossy(&data[start..i]).into_owned());
    }
    i += 1;
    let channels = match fields[0].as_str() {
        "P5" => 1,
        "P6" => 3,
        m => return Err(Error::Image(format!("unsupported PNM magic `{m}`"))),
    };
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Image(format!("bad PPM header field `{s}`")))
    };
    let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval != 255 {
        return Err(Error::Image(format!("only 8-bit PPM supported (maxval {maxval})")));
    }
    from_bytes(data.get(i..).unwrap_or(&[]), channels, w, h)
}

pub fn encode_png(img: &Latent) -> Result<Vec<u8>> {
    let [c, h, w] = img.shape();
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
        enc.set_color(if c == 1 {
            png::ColorType::Grayscale
        } else {
            png::ColorType::Rgb
        });
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| Error::Image(e.to_string()))?;
        writer
            .write_image_data(&to_bytes(img)?)
            .map_err(|e| Error::Image(e.to_string()))?;
    }
    Ok(out)
}

pub fn decode_png(data: &[u8]) -> Result<Latent> {
    let decoder = png::Decoder::new(std::io::Cursor::new(data));
    let mut reader = decoder.read_info().map_err(|e| Error::Image(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Image(e.to_string()))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Image("only 8-bit PNG supported".into()));
    }
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => return Err(Error::Image(format!("unsupported PNG color type {other:?}"))),
    };
    from_bytes(&buf[..info.buffer_size()], channels, info.width as usize, info.height as usize)
}

fn is_png(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

/// Write as PNG when the extension is `.png`, otherwise binary PPM/PGM.
pub fn write_image(path: &Path, img: &Latent) -> Result<()> {
    let bytes = if is_png(path) {
        encode_png(img)?
    } else {
        encode_ppm(img)?
    };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    std::io::Write::write_all(&mut w, &bytes).map_err(|e| Error::io(path, e))
}

pub fn read_image(path: &Path) -> Result<Latent> {
    let mut data = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut data))
        .map_err(|e| Error::io(path, e))?;
    if data.starts_with(b"\x89PNG") {
        decode_png(&data)
    } else {
        decode_ppm(&data)
    }
}

/// Single-channel mask in `[0, 1]`; colour images are averaged.
pub fn read_mask(path: &Path) -> Result<Latent> {
    let img = read_image(path)?;
    if img.channels() == 1 {
        return Ok(img);
    }
    let [_, h, w] = img.shape();
    let mut m = Latent::zeros(1, h, w);
    for y in 0..h {
        for x in 0..w {
            let v = (0..3).map(|c| img.get(c, y, x)).sum::<f64>() / 3.0;
            m.set(0, y, x, v);
        }
    }
    Ok(m)
}
