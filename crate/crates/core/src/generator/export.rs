use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::grid::ImageGrid;
use super::GeneratorError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageFormat {
    /// Binary PGM (`P5`, maxval 255).
    #[default]
    Pgm,
    /// 8-bit grayscale PNG.
    Png,
}

impl ImageFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ImageFormat::Pgm => "pgm",
            ImageFormat::Png => "png",
        }
    }
}

impl FromStr for ImageFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pgm" => Ok(ImageFormat::Pgm),
            "png" => Ok(ImageFormat::Png),
            _ => Err(format!("unknown image format `{s}` (expected pgm or png)")),
        }
    }
}

/// An 8-bit grayscale raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

/// `round(v · 255)` after clamping to `[0, 1]`; halves round up.
pub fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Lays the grid out with 1-pixel white gutters between cells. Annotated
/// cells get their outermost pixel ring set to white.
pub fn render(grid: &ImageGrid) -> Raster {
    let s = grid.side();
    let width = grid.cols() * s + grid.cols().saturating_sub(1);
    let height = grid.rows() * s + grid.rows().saturating_sub(1);
    let mut pixels = vec![255u8; width * height];
    for r in 0..grid.rows() {
        for c in 0..grid.cols() {
            let (y0, x0) = (r * (s + 1), c * (s + 1));
            let cell = grid.cell(r, c);
            let framed = grid.is_annotated(r, c);
            for y in 0..s {
                for x in 0..s {
                    let edge = y == 0 || x == 0 || y + 1 == s || x + 1 == s;
                    pixels[(y0 + y) * width + x0 + x] = if framed && edge {
                        255
                    } else {
                        cell.map_or(0, |img| to_byte(img[y * s + x]))
                    };
                }
            }
        }
    }
    Raster { width, height, pixels }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> GeneratorError + '_ {
    move |source| GeneratorError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_pgm(raster: &Raster, path: &Path) -> Result<(), GeneratorError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    write!(w, "P5\n{} {}\n255\n", raster.width, raster.height).map_err(io_err(path))?;
    w.write_all(&raster.pixels).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn write_png(raster: &Raster, path: &Path) -> Result<(), GeneratorError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), raster.width as u32, raster.height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc.write_header().map_err(|e| GeneratorError::Image(e.to_string()))?;
    w.write_image_data(&raster.pixels)
        .map_err(|e| GeneratorError::Image(e.to_string()))?;
    w.finish().map_err(|e| GeneratorError::Image(e.to_string()))
}

/// Renders and writes a grid in the requested format.
pub fn export_grid(grid: &ImageGrid, path: &Path, format: ImageFormat) -> Result<Raster, GeneratorError> {
    let raster = render(grid);
    match format {
        ImageFormat::Pgm => write_pgm(&raster, path)?,
        ImageFormat::Png => write_png(&raster, path)?,
    }
    Ok(raster)
}

/// Parses a binary PGM with maxval 255 (comments allowed in the header).
pub fn parse_pgm(bytes: &[u8]) -> Result<Raster, GeneratorError> {
    let bad = |why: &str| GeneratorError::Image(format!("invalid PGM: {why}"));
    let mut pos = 0;
    let mut token = || -> Option<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        (start < pos).then(|| String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token().as_deref() != Some("P5") {
        return Err(bad("magic is not P5"));
    }
    let mut num = || token().and_then(|t| t.parse::<usize>().ok());
    let (width, height, maxval) = match (num(), num(), num()) {
        (Some(w), Some(h), Some(m)) => (w, h, m),
        _ => return Err(bad("malformed header")),
    };
    if maxval != 255 {
        return Err(bad("maxval must be 255"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    let data = &bytes[(pos + 1).min(bytes.len())..];
    if data.len() != width * height {
        return Err(bad(&format!("expected {} pixel bytes, found {}", width * height, data.len())));
    }
    Ok(Raster {
        width,
        height,
        pixels: data.to_vec(),
    })
}

pub fn read_pgm(path: &Path) -> Result<Raster, GeneratorError> {
    parse_pgm(&std::fs::read(path).map_err(io_err(path))?)
}

pub fn read_png(path: &Path) -> Result<Raster, GeneratorError> {
    let file = File::open(path).map_err(io_err(path))?;
    let dec = png::Decoder::new(std::io::BufReader::new(file));
    let mut reader = dec.read_info().map_err(|e| GeneratorError::Image(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| GeneratorError::Image(e.to_string()))?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(GeneratorError::Image("expected 8-bit grayscale PNG".into()));
    }
    buf.truncate(info.buffer_size());
    Ok(Raster {
        width: info.width as usize,
        height: info.height as usize,
        pixels: buf,
    })
}

/// Cuts cell `(r, c)` back out of a rendered raster, as values in `[0, 1]`.
pub fn extract_cell(raster: &Raster, side: usize, r: usize, c: usize) -> Vec<f64> {
    let (y0, x0) = (r * (side + 1), c * (side + 1));
    let mut out = Vec::with_capacity(side * side);
    for y in 0..side {
        for x in 0..side {
            out.push(raster.pixels[(y0 + y) * raster.width + x0 + x] as f64 / 255.0);
        }
    }
    out
}
