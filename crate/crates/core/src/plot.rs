//! Scatter plots as standalone SVG documents.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const TRUE_COLOR: &str = "#d62728";
pub const GENERATED_COLOR: &str = "#1f5fbf";

/// Plot layout. Points outside `[-extent, extent]^2` are not drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScatterStyle {
    pub extent: f64,
    pub size_px: u32,
    pub radius_px: f64,
    /// Shade generated points by generator index instead of a single blue.
    pub per_generator_hues: bool,
}

impl Default for ScatterStyle {
    fn default() -> Self {
        ScatterStyle {
            extent: 3.0,
            size_px: 480,
            radius_px: 1.6,
            per_generator_hues: false,
        }
    }
}

/// Blue-family shade for generator `k` of `num`.
fn generator_hue(k: usize, num: usize) -> String {
    if num <= 1 {
        return GENERATED_COLOR.to_string();
    }
    let hue = 190.0 + 80.0 * k as f64 / (num - 1) as f64;
    format!("hsl({hue:.0},70%,45%)")
}

/// Renders true samples in red and generated samples in blue.
///
/// `generator_index`, when given, must have one entry per generated row and
/// is used for per-generator shading.
pub fn scatter_svg(
    true_points: &Tensor<f32>,
    generated: &Tensor<f32>,
    generator_index: Option<&[usize]>,
    style: &ScatterStyle,
) -> Result<String> {
    if true_points.cols() != 2 || generated.cols() != 2 {
        return Err(Error::contract("scatter plots need n x 2 point sets"));
    }
    if let Some(idx) = generator_index {
        if idx.len() != generated.rows() {
            return Err(Error::contract("one generator index per generated point is required"));
        }
    }
    if style.extent.is_nan() || style.extent <= 0.0 || style.size_px == 0 {
        return Err(Error::contract("invalid plot style"));
    }
    let size = style.size_px as f64;
    let scale = size / (2.0 * style.extent);
    let to_px = |x: f32, y: f32| {
        (
            (x as f64 + style.extent) * scale,
            (style.extent - y as f64) * scale,
        )
    };
    let inside = |x: f32, y: f32| {
        let e = style.extent as f32;
        x.is_finite() && y.is_finite() && x.abs() <= e && y.abs() <= e
    };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{0}" height="{0}" viewBox="0 0 {0} {0}">"#,
        style.size_px
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<g fill="{TRUE_COLOR}" fill-opacity="0.6">"#);
    for r in 0..true_points.rows() {
        let (x, y) = (true_points.get(r, 0), true_points.get(r, 1));
        if inside(x, y) {
            let (px, py) = to_px(x, y);
            let _ = writeln!(svg, r#"<circle cx="{px:.2}" cy="{py:.2}" r="{:.2}"/>"#, style.radius_px);
        }
    }
    let _ = writeln!(svg, "</g>");
    let num = generator_index.map_or(1, |idx| idx.iter().max().map_or(1, |m| m + 1));
    let _ = writeln!(svg, r#"<g fill="{GENERATED_COLOR}" fill-opacity="0.8">"#);
    for r in 0..generated.rows() {
        let (x, y) = (generated.get(r, 0), generated.get(r, 1));
        if !inside(x, y) {
            continue;
        }
        let (px, py) = to_px(x, y);
        match generator_index {
            Some(idx) if style.per_generator_hues && num > 1 => {
                let _ = writeln!(
                    svg,
                    r#"<circle cx="{px:.2}" cy="{py:.2}" r="{:.2}" fill="{}"/>"#,
                    style.radius_px,
                    generator_hue(idx[r], num)
                );
            }
            _ => {
                let _ = writeln!(svg, r#"<circle cx="{px:.2}" cy="{py:.2}" r="{:.2}"/>"#, style.radius_px);
            }
        }
    }
    let _ = writeln!(svg, "</g>");
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn write_svg(path: &Path, svg: &str) -> Result<()> {
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}
