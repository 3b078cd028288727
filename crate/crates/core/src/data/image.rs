use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};

/// 8-bit RGB raster, row-major, channels interleaved.
#[derive(Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl std::fmt::Debug for Image {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Image({}x{})", self.width, self.height)
    }
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Data(format!("empty image {width}x{height}")));
        }
        if data.len() != width * height * 3 {
            return Err(Error::Data(format!(
                "{} bytes cannot hold a {width}x{height} RGB image",
                data.len()
            )));
        }
        Ok(Image { width, height, data })
    }

    /// Builds an image from interleaved samples with `channels` per pixel;
    /// anything other than 3 is rejected.
    pub fn from_channels(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if channels != 3 {
            return Err(Error::Data(format!("expected 3 color channels, got {channels}")));
        }
        Image::new(width, height, data)
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Image { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn pixels(&self) -> impl Iterator<Item = [u8; 3]> + '_ {
        self.data.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }

    /// Copies the `w`×`h` window whose top-left corner is `(x, y)`.
    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Result<Image> {
        if x + w > self.width || y + h > self.height || w == 0 || h == 0 {
            return Err(Error::InvalidArgument(format!(
                "crop {w}x{h}+{x}+{y} outside {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(w * h * 3);
        for row in y..y + h {
            let start = (row * self.width + x) * 3;
            data.extend_from_slice(&self.data[start..start + w * 3]);
        }
        Ok(Image { width: w, height: h, data })
    }
}

fn png_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Png(format!("{}: {e}", path.display()))
}

/// Reads an 8-bit RGB PNG. Other color types and bit depths are rejected.
pub fn read_png(path: &Path) -> Result<Image> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder.read_info().map_err(|e| png_err(path, e))?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| png_err(path, "image too large"))?];
    let info = reader.next_frame(&mut buf).map_err(|e| png_err(path, e))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(png_err(path, format!("expected 8-bit samples, got {:?}", info.bit_depth)));
    }
    buf.truncate(info.buffer_size());
    let channels = info.color_type.samples();
    Image::from_channels(info.width as usize, info.height as usize, channels, buf)
        .map_err(|e| png_err(path, e))
}

pub fn write_png(path: &Path, image: &Image) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), image.width as u32, image.height as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header().map_err(|e| png_err(path, e))?;
    writer.write_image_data(&image.data).map_err(|e| png_err(path, e))?;
    writer.finish().map_err(|e| png_err(path, e))
}

/// One grid cell cut from a larger raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tile {
    pub grid_x: usize,
    pub grid_y: usize,
    pub image: Image,
}

/// Cuts a non-overlapping `tile`×`tile` grid, row by row. Partial tiles at the
/// right and bottom edges are dropped.
pub fn tile_image(image: &Image, tile: usize) -> Result<Vec<Tile>> {
    if tile == 0 {
        return Err(Error::InvalidArgument("tile size must be positive".into()));
    }
    let (cols, rows) = (image.width / tile, image.height / tile);
    let mut out = Vec::with_capacity(cols * rows);
    for grid_y in 0..rows {
        for grid_x in 0..cols {
            let image = image.crop(grid_x * tile, grid_y * tile, tile, tile)?;
            out.push(Tile { grid_x, grid_y, image });
        }
    }
    Ok(out)
}

/// Source coordinate sampled by output index `i` when resizing `src` samples
/// to `dst`, with pixel centers aligned (not corners).
fn source_coord(i: usize, src: usize, dst: usize) -> (usize, usize, f64) {
    let scale = src as f64 / dst as f64;
    let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
    let lo = s.floor() as usize;
    let hi = (lo + 1).min(src - 1);
    (lo, hi, s - lo as f64)
}

/// Bilinear resize of a `[h, w, c]` interleaved buffer.
pub fn resize_bilinear(src: &[f64], h: usize, w: usize, c: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    assert_eq!(src.len(), h * w * c, "buffer does not match {h}x{w}x{c}");
    let cols: Vec<_> = (0..out_w).map(|x| source_coord(x, w, out_w)).collect();
    let mut out = Vec::with_capacity(out_h * out_w * c);
    for y in 0..out_h {
        let (y0, y1, fy) = source_coord(y, h, out_h);
        for &(x0, x1, fx) in &cols {
            for ch in 0..c {
                let at = |yy: usize, xx: usize| src[(yy * w + xx) * c + ch];
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    out
}

/// Bilinear resize to `out_w`×`out_h`, rounding to the nearest 8-bit value.
pub fn resize_image(image: &Image, out_w: usize, out_h: usize) -> Result<Image> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::InvalidArgument(format!("cannot resize to {out_w}x{out_h}")));
    }
    if (out_w, out_h) == (image.width, image.height) {
        return Ok(image.clone());
    }
    let src: Vec<f64> = image.data.iter().map(|&v| v as f64).collect();
    let out = resize_bilinear(&src, image.height, image.width, 3, out_h, out_w);
    Ok(Image {
        width: out_w,
        height: out_h,
        data: out.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect(),
    })
}

/// Resizes a square tile to `size`×`size`.
pub fn resize_tile(tile: &Image, size: usize) -> Result<Image> {
    if tile.width != tile.height {
        return Err(Error::InvalidArgument(format!("tile {}x{} is not square", tile.width, tile.height)));
    }
    resize_image(tile, size, size)
}
