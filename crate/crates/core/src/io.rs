//! File formats: annotations, contour results, distance dumps, images, SVG.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::{BufRead, Read, Write};
use std::path::Path;

use crate::constraints::{Annotation, Point2};
use crate::eikonal::DistanceField;
use crate::error::{Error, Result, ValidationIssue};
use crate::evolution::{EvolutionConfig, EvolutionTrace};
use crate::geodesic::ClosedContour;
use crate::lifted_grid::GridSpec;
use crate::metrics::{ModelKind, ModelParams};
use crate::raster::Image;

pub const CONTOUR_SCHEMA: &str = "geokonvex.contour/1";
pub const DUMP_FORMAT: &str = "geokonvex.u/1";
pub const DUMP_LAYOUT: &str = "f64-le, x fastest, then y, then theta";

fn invalid(code: &str, message: impl Into<String>) -> Error {
    Error::Validation(vec![ValidationIssue::new(code, message, None)])
}

/// Parse an annotation document.
pub fn parse_annotation(text: &str) -> Result<Annotation> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| invalid("annotation.json", format!("annotation is not valid JSON: {e}")))?;
    annotation_from_value(value)
}

pub fn annotation_from_value(value: serde_json::Value) -> Result<Annotation> {
    let Some(obj) = value.as_object() else {
        return Err(invalid("annotation.invalid", "annotation must be a JSON object"));
    };
    if !obj.contains_key("source") {
        return Err(invalid("annotation.source.missing", "annotation has no source field"));
    }
    serde_json::from_value(value).map_err(|e| invalid("annotation.invalid", e.to_string()))
}

pub fn annotation_to_json(ann: &Annotation) -> String {
    serde_json::to_string_pretty(ann).expect("annotations serialize")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub total_curvature: f64,
    pub signed_turn: f64,
    pub min_turn: f64,
    pub is_simple: bool,
    pub is_convex: bool,
    pub encloses_z: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jaccard: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileSample {
    pub arc_length: f64,
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStatus {
    pub iterations: usize,
    pub converged: bool,
    pub degraded: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degraded_reason: Option<String>,
}

impl From<&EvolutionTrace> for RunStatus {
    fn from(t: &EvolutionTrace) -> Self {
        RunStatus {
            iterations: t.iterations.len(),
            converged: t.converged,
            degraded: t.degraded,
            degraded_reason: t.degraded_reason.clone(),
        }
    }
}

/// Result document of a segmentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContourFile {
    pub schema: String,
    pub vertices: Vec<Point2>,
    pub diagnostics: DiagnosticsRecord,
    pub turning_angle_profile: Vec<ProfileSample>,
    pub params: EvolutionConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<RunStatus>,
}

impl ContourFile {
    pub fn new(contour: &ClosedContour, params: &EvolutionConfig, status: Option<RunStatus>) -> Self {
        let d = contour.diagnostics;
        ContourFile {
            schema: CONTOUR_SCHEMA.to_string(),
            vertices: contour.vertices.iter().map(|v| Point2::from(*v)).collect(),
            diagnostics: DiagnosticsRecord {
                total_curvature: d.total_curvature,
                signed_turn: d.signed_turn,
                min_turn: d.min_turn,
                is_simple: d.is_simple,
                is_convex: d.is_convex,
                encloses_z: d.encloses_z,
                jaccard: None,
            },
            turning_angle_profile: contour
                .turning_profile
                .iter()
                .map(|[s, e]| ProfileSample { arc_length: *s, eta: *e })
                .collect(),
            params: params.clone(),
            status,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("contour files serialize")
    }
}

/// Metadata line in front of a distance dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DumpHeader {
    pub format: String,
    pub layout: String,
    pub grid: GridSpec,
    pub model: ModelKind,
    pub params: ModelParams,
    pub seed: usize,
    pub target: Option<usize>,
    pub psi_sha256: String,
}

impl DumpHeader {
    pub fn new(
        grid: GridSpec,
        model: ModelKind,
        params: ModelParams,
        seed: usize,
        target: Option<usize>,
        psi: &[f64],
    ) -> Self {
        DumpHeader {
            format: DUMP_FORMAT.into(),
            layout: DUMP_LAYOUT.into(),
            grid,
            model,
            params,
            seed,
            target,
            psi_sha256: psi_hash(psi),
        }
    }
}

/// SHA-256 of the little-endian bytes of `psi`, hex encoded.
pub fn psi_hash(psi: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in psi {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

pub fn write_u_dump<W: Write>(mut w: W, header: &DumpHeader, values: &[f64]) -> Result<()> {
    if values.len() != header.grid.len() {
        return Err(Error::Format(format!("{} values for a grid of {}", values.len(), header.grid.len())));
    }
    serde_json::to_writer(&mut w, header).map_err(|e| Error::Format(e.to_string()))?;
    w.write_all(b"\n")?;
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes)?;
    Ok(())
}

pub fn read_u_dump<R: BufRead>(mut r: R) -> Result<(DumpHeader, Vec<f64>)> {
    let mut line = Vec::new();
    r.read_until(b'\n', &mut line)?;
    let header: DumpHeader =
        serde_json::from_slice(&line).map_err(|e| Error::Format(format!("bad u dump header: {e}")))?;
    if header.format != DUMP_FORMAT {
        return Err(Error::Format(format!("unsupported dump format '{}'", header.format)));
    }
    let grid = GridSpec::new(header.grid.nx, header.grid.ny, header.grid.ntheta, header.grid.hx)?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != grid.len() * 8 {
        return Err(Error::Format(format!(
            "u dump holds {} bytes, header grid needs {}",
            bytes.len(),
            grid.len() * 8
        )));
    }
    if header.seed >= grid.len() || header.target.is_some_and(|t| t >= grid.len()) {
        return Err(Error::Format("seed or target outside the header grid".into()));
    }
    let values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Ok((header, values))
}

/// Distance field rebuilt from a dump. Acceptance order is not stored:
/// finite values are marked accepted with order 0.
pub fn field_from_dump(header: &DumpHeader, values: Vec<f64>) -> DistanceField {
    let accepted_order = values.iter().map(|v| if v.is_finite() { 0 } else { u32::MAX }).collect();
    DistanceField { spec: header.grid, values, accepted_order, seed: header.seed }
}

/// Decode PNG or binary NetPBM bytes into channels in `[0, 1]`.
///
/// Grey images give one channel and colour images three; alpha is dropped.
pub fn decode_image(bytes: &[u8]) -> Result<Image> {
    let img = image::load_from_memory(bytes).map_err(|e| Error::Image(e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w < 2 || h < 2 {
        return Err(Error::Image(format!("image is {w}x{h}, need at least 2x2")));
    }
    if img.color().has_color() {
        let rgb = img.to_rgb8();
        Image::new(w, h, 3, rgb.as_raw().iter().map(|v| *v as f64 / 255.0).collect())
    } else {
        let l = img.to_luma8();
        Image::new(w, h, 1, l.as_raw().iter().map(|v| *v as f64 / 255.0).collect())
    }
}

pub fn load_image(path: &Path) -> Result<Image> {
    decode_image(&std::fs::read(path)?)
}

/// 8-bit PNG encoding (grey for one channel, RGB for three).
pub fn encode_png(img: &Image) -> Result<Vec<u8>> {
    let bytes: Vec<u8> = img.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let color = match img.channels {
        1 => image::ExtendedColorType::L8,
        3 => image::ExtendedColorType::Rgb8,
        c => return Err(Error::Image(format!("cannot encode {c} channels"))),
    };
    let mut out = Vec::new();
    image::ImageEncoder::write_image(
        image::codecs::png::PngEncoder::new(&mut out),
        &bytes,
        img.width as u32,
        img.height as u32,
        color,
    )
    .map_err(|e| Error::Image(e.to_string()))?;
    Ok(out)
}

/// Contour overlay as a standalone SVG document in image pixel coordinates.
pub fn contour_svg(contour: &ClosedContour, width: usize, height: usize) -> String {
    let points: Vec<String> = contour.vertices.iter().map(|v| format!("{},{}", v[0], v[1])).collect();
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n  \
         <polygon points=\"{}\" fill=\"none\" stroke=\"#e0245e\" stroke-width=\"1\"/>\n</svg>\n",
        points.join(" ")
    )
}

/// Vertex list of the first polygon in an SVG produced by [`contour_svg`].
pub fn svg_vertices(svg: &str) -> Result<Vec<[f64; 2]>> {
    let start = svg.find("points=\"").ok_or_else(|| Error::Format("no polygon points".into()))? + 8;
    let end = svg[start..].find('"').ok_or_else(|| Error::Format("unterminated points".into()))? + start;
    svg[start..end]
        .split_whitespace()
        .map(|pair| {
            let (x, y) = pair.split_once(',').ok_or_else(|| Error::Format(format!("bad point '{pair}'")))?;
            let parse = |s: &str| s.parse::<f64>().map_err(|e| Error::Format(e.to_string()));
            Ok([parse(x)?, parse(y)?])
        })
        .collect()
}

/// Read everything from a reader as UTF-8.
pub fn read_text<R: Read>(mut r: R) -> Result<String> {
    let mut s = String::new();
    r.read_to_string(&mut s).map_err(|e| Error::Format(format!("input is not UTF-8 text: {e}")))?;
    Ok(s)
}
