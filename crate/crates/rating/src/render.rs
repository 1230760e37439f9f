//! Server-side PNG rendering of slice images and label overlays.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use infarct_core::{ClassId, Grid};
use serde::{Deserialize, Serialize};

/// RGBA colours of the overlay classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlayStyle {
    pub scar: [u8; 4],
    pub mvo: [u8; 4],
}

impl Default for OverlayStyle {
    fn default() -> Self {
        OverlayStyle {
            scar: [0, 0, 255, 160],
            mvo: [255, 165, 0, 200],
        }
    }
}

fn encode(width: usize, height: usize, color: png::ColorType, data: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().expect("in-memory PNG header");
        w.write_image_data(data).expect("in-memory PNG data");
    }
    out
}

/// 8-bit grayscale PNG, min-max scaled; a constant slice renders black.
pub fn grayscale_png(image: &Grid<f32>) -> Vec<u8> {
    let (lo, hi) = image
        .as_slice()
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = hi - lo;
    let data: Vec<u8> = image
        .as_slice()
        .iter()
        .map(|&v| {
            if range > 0.0 {
                ((v - lo) / range * 255.0).round() as u8
            } else {
                0
            }
        })
        .collect();
    encode(
        image.width(),
        image.height(),
        png::ColorType::Grayscale,
        &data,
    )
}

/// RGBA PNG, transparent except scar and MVO pixels.
pub fn overlay_png(labels: &Grid<ClassId>, style: &OverlayStyle) -> Vec<u8> {
    let data: Vec<u8> = labels
        .as_slice()
        .iter()
        .flat_map(|l| match l {
            ClassId::Scar => style.scar,
            ClassId::Mvo => style.mvo,
            _ => [0, 0, 0, 0],
        })
        .collect();
    encode(labels.width(), labels.height(), png::ColorType::Rgba, &data)
}

pub fn to_base64(bytes: &[u8]) -> String {
    STANDARD.encode(bytes)
}
