//! ABCD lesion descriptors: asymmetry, border irregularity, color and
//! diameter, assembled into a fixed 33-entry vector.

mod color;
mod shape;

pub use color::{channel_summaries, color_proportions, quantile_sorted, ColorBox, ColorTable, COLOR_COUNT};
pub use shape::{
    border_irregularity, border_pixels, compute_moments, diameter, lengthening, rotate_mask, sai, sai_about,
    ShapeMoments,
};

use crate::imaging::ImagePlane;
use crate::segmentation::BinaryMask;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("mask has no foreground pixels")]
    EmptyMask,
    #[error("degenerate shape: {0}")]
    Degenerate(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("color table: {0}")]
    ColorTable(String),
    #[error("feature csv: {0}")]
    Csv(String),
}

pub type Result<T> = std::result::Result<T, FeatureError>;

pub const ABCD_LEN: usize = 33;

#[derive(Debug, Clone, PartialEq)]
pub struct AbcdVector {
    pub sai_x: f64,
    pub sai_y: f64,
    pub lengthening: f64,
    pub border_irregularity: f64,
    pub colors: [f64; COLOR_COUNT],
    pub summaries: [f64; 21],
    pub diameter_h: f64,
    pub diameter_w: f64,
}

impl AbcdVector {
    /// Column names in vector order.
    pub fn columns() -> Vec<String> {
        let mut cols: Vec<String> = ["sai_x", "sai_y", "lengthening", "border_irregularity"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for c in ["white", "red", "light_brown", "dark_brown", "blue_gray", "black"] {
            cols.push(format!("color_{c}"));
        }
        for ch in ["r", "g", "b"] {
            for stat in ["min", "q1", "median", "q3", "max", "mean", "sd"] {
                cols.push(format!("{ch}_{stat}"));
            }
        }
        cols.push("diameter_h".into());
        cols.push("diameter_w".into());
        cols
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![self.sai_x, self.sai_y, self.lengthening, self.border_irregularity];
        v.extend(self.colors);
        v.extend(self.summaries);
        v.push(self.diameter_h);
        v.push(self.diameter_w);
        v
    }
}

/// ABCD features of one lesion. `img` is the preprocessed original, not a
/// style-transferred image.
pub fn assemble_abcd(img: &ImagePlane, mask: &BinaryMask, table: &ColorTable) -> Result<AbcdVector> {
    color::check_pair(img, mask)?;
    let moments = compute_moments(mask)?;
    let rotated = rotate_mask(mask, -moments.theta)?;
    let (sai_x, sai_y) = sai(&rotated)?;
    let (h, w) = diameter(&rotated)?;
    let colors = color_proportions(img, mask, table)?;
    let summaries = channel_summaries(img, mask)?;
    Ok(AbcdVector {
        sai_x,
        sai_y,
        lengthening: lengthening(&moments)?,
        border_irregularity: border_irregularity(mask)?,
        colors: colors.try_into().expect("table has six colors"),
        summaries: summaries.try_into().expect("21 summaries"),
        diameter_h: h as f64,
        diameter_w: w as f64,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub image_id: String,
    pub label: u8,
    pub values: Vec<f64>,
}

/// CSV with header `image_id,label,<columns>`.
pub fn write_feature_csv(path: &Path, columns: &[String], rows: &[FeatureRow]) -> Result<()> {
    let err = |e: csv::Error| FeatureError::Csv(e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    let mut header = vec!["image_id".to_string(), "label".to_string()];
    header.extend(columns.iter().cloned());
    w.write_record(&header).map_err(err)?;
    for row in rows {
        if row.values.len() != columns.len() {
            return Err(FeatureError::Csv(format!("{} has {} values for {} columns", row.image_id, row.values.len(), columns.len())));
        }
        let mut rec = vec![row.image_id.clone(), row.label.to_string()];
        rec.extend(row.values.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(err)?;
    }
    w.flush().map_err(|e| FeatureError::Csv(e.to_string()))
}

pub fn read_feature_csv(path: &Path) -> Result<(Vec<String>, Vec<FeatureRow>)> {
    let err = |e: csv::Error| FeatureError::Csv(e.to_string());
    let mut r = csv::Reader::from_path(path).map_err(err)?;
    let header: Vec<String> = r.headers().map_err(err)?.iter().map(str::to_string).collect();
    if header.len() < 2 || header[0] != "image_id" || header[1] != "label" {
        return Err(FeatureError::Csv(format!("{}: header must start with image_id,label", path.display())));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(err)?;
        let parse = |s: &str| s.parse::<f64>().map_err(|_| FeatureError::Csv(format!("not a number: {s:?}")));
        let label = rec[1].parse::<u8>().map_err(|_| FeatureError::Csv(format!("bad label {:?}", &rec[1])))?;
        rows.push(FeatureRow {
            image_id: rec[0].to_string(),
            label,
            values: rec.iter().skip(2).map(parse).collect::<Result<_>>()?,
        });
    }
    Ok((header[2..].to_vec(), rows))
}
