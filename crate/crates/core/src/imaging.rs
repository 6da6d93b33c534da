//! Screenshot pixels: crop a region and stretch it back to full resolution.

use std::io::Cursor;
use std::path::Path;

use image::imageops::{self, FilterType};
use image::{DynamicImage, ImageFormat, Rgba, RgbaImage};
use thiserror::Error;

use crate::geometry::{CropSpec, ImageDims};

/// Resampling filter for zoomed views.
pub const ZOOM_FILTER: FilterType = FilterType::Triangle;
pub const ZOOM_FILTER_NAME: &str = "bilinear";

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("{path}: {source}")]
    Load {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error("{path}: {source}")]
    Save {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error("encoding view: {0}")]
    Encode(#[source] image::ImageError),
    #[error("crop {crop:?} does not fit image {width}x{height}")]
    CropMismatch { crop: CropSpec, width: u32, height: u32 },
}

/// A screenshot with pixels, or only its size when the backend never looks
/// at pixels (simulation, dry runs).
#[derive(Debug, Clone)]
pub enum Screenshot {
    Raster(RgbaImage),
    Blank(ImageDims),
}

impl Screenshot {
    pub fn load(path: &Path) -> Result<Self, ImagingError> {
        let img = image::open(path).map_err(|source| ImagingError::Load {
            path: path.display().to_string(),
            source,
        })?;
        Ok(Self::Raster(img.to_rgba8()))
    }

    pub fn dims(&self) -> ImageDims {
        match self {
            Self::Raster(img) => ImageDims {
                width: img.width(),
                height: img.height(),
            },
            Self::Blank(d) => *d,
        }
    }

    /// The crop resized back to the full image size.
    pub fn zoomed_view(&self, crop: &CropSpec) -> Result<RgbaImage, ImagingError> {
        let dims = self.dims();
        if crop.source_dims != dims {
            return Err(ImagingError::CropMismatch {
                crop: *crop,
                width: dims.width,
                height: dims.height,
            });
        }
        match self {
            Self::Raster(img) => Ok(zoom(img, crop)),
            Self::Blank(d) => Ok(RgbaImage::from_pixel(d.width, d.height, Rgba([255, 255, 255, 255]))),
        }
    }

    pub fn encode_view_png(&self, crop: &CropSpec) -> Result<Vec<u8>, ImagingError> {
        let view = if crop.is_full_image() {
            match self {
                Self::Raster(img) => img.clone(),
                Self::Blank(_) => self.zoomed_view(crop)?,
            }
        } else {
            self.zoomed_view(crop)?
        };
        encode_png(&view)
    }
}

fn zoom(img: &RgbaImage, crop: &CropSpec) -> RgbaImage {
    let cropped = imageops::crop_imm(img, crop.xmin_c, crop.ymin_c, crop.width(), crop.height()).to_image();
    if cropped.dimensions() == img.dimensions() {
        return cropped;
    }
    imageops::resize(&cropped, img.width(), img.height(), ZOOM_FILTER)
}

pub fn encode_png(img: &RgbaImage) -> Result<Vec<u8>, ImagingError> {
    let mut buf = Cursor::new(Vec::new());
    DynamicImage::ImageRgba8(img.clone())
        .write_to(&mut buf, ImageFormat::Png)
        .map_err(ImagingError::Encode)?;
    Ok(buf.into_inner())
}

pub fn save_png(img: &RgbaImage, path: &Path) -> Result<(), ImagingError> {
    img.save_with_format(path, ImageFormat::Png).map_err(|source| ImagingError::Save {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checker(w: u32, h: u32) -> RgbaImage {
        RgbaImage::from_fn(w, h, |x, y| if (x / 4 + y / 4) % 2 == 0 { Rgba([0, 0, 0, 255]) } else { Rgba([255, 255, 255, 255]) })
    }

    #[test]
    fn zoom_keeps_resolution() {
        let shot = Screenshot::Raster(checker(40, 30));
        let crop = CropSpec::new(8, 4, 28, 19, shot.dims()).unwrap();
        let view = shot.zoomed_view(&crop).unwrap();
        assert_eq!(view.dimensions(), (40, 30));
        assert_eq!(view.get_pixel(0, 0), img_px(&checker(40, 30), 8, 4));
    }

    fn img_px(img: &RgbaImage, x: u32, y: u32) -> &Rgba<u8> {
        img.get_pixel(x, y)
    }

    #[test]
    fn mismatched_crop_rejected() {
        let shot = Screenshot::Blank(ImageDims::new(10, 10).unwrap());
        let crop = ImageDims::new(20, 20).unwrap().full_crop();
        assert!(matches!(shot.zoomed_view(&crop), Err(ImagingError::CropMismatch { .. })));
    }

    #[test]
    fn png_round_trip() {
        let img = checker(12, 9);
        let bytes = encode_png(&img).unwrap();
        let back = image::load_from_memory(&bytes).unwrap().to_rgba8();
        assert_eq!(back, img);
    }

    #[test]
    fn missing_file_reports_path() {
        let err = Screenshot::load(Path::new("/nonexistent/shot.png")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/shot.png"));
    }
}
