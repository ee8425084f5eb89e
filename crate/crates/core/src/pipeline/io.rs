use std::fs;
use std::io::Write;
use std::path::Path;

use image::{GrayImage, ImageFormat, RgbImage};

use crate::diffcore::{Element, Tensor};
use crate::error::{Error, Result};

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::Argument(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    let result = fs::File::create(&tmp)
        .and_then(|mut f| {
            f.write_all(bytes)?;
            f.sync_all()
        })
        .and_then(|_| fs::rename(&tmp, path));
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// `p = round(255·(clamp(v, −1, 1) + 1) / 2)`.
pub fn to_pixel(v: f64) -> u8 {
    (255.0 * (v.clamp(-1.0, 1.0) + 1.0) / 2.0).round() as u8
}

pub fn from_pixel(p: u8) -> f64 {
    p as f64 / 255.0 * 2.0 - 1.0
}

/// PNG bytes of a `[C, H, W]` image with C = 1 or 3.
pub fn encode_png<T: Element>(x: &Tensor<T>) -> Result<Vec<u8>> {
    let (c, h, w) = match *x.shape() {
        [c, h, w] if c == 1 || c == 3 => (c, h, w),
        ref s => {
            return Err(Error::Shape(format!(
                "PNG export needs [1|3, H, W], got {s:?}"
            )))
        }
    };
    let d = x.data();
    let plane = h * w;
    let mut buf = Vec::new();
    let mut cursor = std::io::Cursor::new(&mut buf);
    let written = if c == 3 {
        let img = RgbImage::from_fn(w as u32, h as u32, |i, j| {
            let o = j as usize * w + i as usize;
            image::Rgb([0, 1, 2].map(|ch| to_pixel(d[ch * plane + o].as_f64())))
        });
        img.write_to(&mut cursor, ImageFormat::Png)
    } else {
        let img = GrayImage::from_fn(w as u32, h as u32, |i, j| {
            image::Luma([to_pixel(d[j as usize * w + i as usize].as_f64())])
        });
        img.write_to(&mut cursor, ImageFormat::Png)
    };
    written.map_err(|e| Error::Image {
        path: "<memory>".into(),
        msg: e.to_string(),
    })?;
    Ok(buf)
}

pub fn write_png<T: Element>(path: &Path, x: &Tensor<T>) -> Result<()> {
    write_atomic(path, &encode_png(x)?)
}

/// Loads an image as `[channels, H, W]` with values in [−1, 1].
pub fn read_png<T: Element>(path: &Path, channels: usize) -> Result<Tensor<T>> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Image {
            path: path.into(),
            msg: other.to_string(),
        },
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = match channels {
        3 => {
            let rgb = img.to_rgb8();
            (0..3)
                .flat_map(|ch| {
                    rgb.pixels()
                        .map(move |p| from_pixel(p.0[ch]))
                        .collect::<Vec<_>>()
                })
                .collect()
        }
        1 => img
            .to_luma8()
            .pixels()
            .map(|p| from_pixel(p.0[0]))
            .collect(),
        c => return Err(Error::Config(format!("unsupported channel count {c}"))),
    };
    Tensor::from_f64(vec![channels, h, w], &data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pixel_mapping() {
        assert_eq!(to_pixel(-1.0), 0);
        assert_eq!(to_pixel(1.0), 255);
        assert_eq!(to_pixel(5.0), 255);
        assert_eq!(to_pixel(0.0), 128);
        for p in 0..=255u8 {
            assert_eq!(to_pixel(from_pixel(p)), p);
        }
    }

    #[test]
    fn png_roundtrip_and_atomic_write() {
        let dir = tempfile::tempdir().unwrap();
        let vals: Vec<f64> = (0..3 * 4 * 5).map(|i| from_pixel((i * 4) as u8)).collect();
        let x = Tensor::<f64>::from_f64(vec![3, 4, 5], &vals).unwrap();
        let path = dir.path().join("a.png");
        write_png(&path, &x).unwrap();
        let back: Tensor<f64> = read_png(&path, 3).unwrap();
        assert_eq!(back.shape(), &[3, 4, 5]);
        assert_eq!(back, x);
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
        let err = write_atomic(&dir.path().join("missing/x.bin"), b"1").unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
