use super::{BinaryMask, Result, SegmentationError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PoolingMode {
    #[default]
    Max,
    Average,
}

/// One normalized mask level, row-major `height×width`.
#[derive(Debug, Clone, PartialEq)]
pub struct PyramidLevel {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskPyramid {
    levels: Vec<(String, PyramidLevel)>,
}

impl MaskPyramid {
    pub fn get(&self, layer: &str) -> Option<&PyramidLevel> {
        self.levels.iter().find(|(n, _)| n == layer).map(|(_, l)| l)
    }

    pub fn layers(&self) -> impl Iterator<Item = &str> {
        self.levels.iter().map(|(n, _)| n.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &PyramidLevel)> {
        self.levels.iter().map(|(n, l)| (n.as_str(), l))
    }

    /// Pyramid of an all-foreground canvas: every level is `1/√M`.
    pub fn full(height: usize, width: usize, layers: &[String]) -> Result<Self> {
        build_mask_pyramid(&BinaryMask::from_fn(height, width, |_, _| true), layers, PoolingMode::Max)
    }
}

/// Block index `B` of a `convB_N`, `reluB_N` or `poolB` layer name.
pub fn layer_block(name: &str) -> Result<usize> {
    let unknown = || SegmentationError::UnknownLayer(name.to_string());
    let rest = ["conv", "relu", "pool"]
        .iter()
        .find_map(|p| name.strip_prefix(p))
        .ok_or_else(unknown)?;
    let digits = if name.starts_with("pool") {
        rest
    } else {
        rest.split_once('_').map(|(b, _)| b).ok_or_else(unknown)?
    };
    match digits.parse::<usize>() {
        Ok(b @ 1..=5) => Ok(b),
        _ => Err(unknown()),
    }
}

fn pool(h: usize, w: usize, v: &[f64], mode: PoolingMode) -> (usize, usize, Vec<f64>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(oh * ow);
    for y in 0..oh {
        for x in 0..ow {
            let win = [
                v[2 * y * w + 2 * x],
                v[2 * y * w + 2 * x + 1],
                v[(2 * y + 1) * w + 2 * x],
                v[(2 * y + 1) * w + 2 * x + 1],
            ];
            out.push(match mode {
                PoolingMode::Max => win.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                PoolingMode::Average => win.iter().sum::<f64>() / 4.0,
            });
        }
    }
    (oh, ow, out)
}

/// Pools the mask with the network's own 2×2 cascade (`B − 1` pools for a
/// layer in block `B`) and scales each level to unit sum of squares.
pub fn build_mask_pyramid(mask: &BinaryMask, style_layers: &[String], mode: PoolingMode) -> Result<MaskPyramid> {
    if mask.is_empty() {
        return Err(SegmentationError::EmptyMask);
    }
    let mut cascade = vec![(
        mask.height(),
        mask.width(),
        mask.data().iter().map(|&v| v as f64).collect::<Vec<_>>(),
    )];
    let mut levels = Vec::with_capacity(style_layers.len());
    for name in style_layers {
        let pools = layer_block(name)? - 1;
        while cascade.len() <= pools {
            let (h, w, v) = cascade.last().expect("cascade starts nonempty");
            if *h < 2 || *w < 2 {
                return Err(SegmentationError::TooSmall {
                    mask: (mask.height(), mask.width()),
                    pools,
                });
            }
            let next = pool(*h, *w, v, mode);
            cascade.push(next);
        }
        let (h, w, v) = &cascade[pools];
        let norm = v.iter().map(|t| t * t).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(SegmentationError::EmptyMask);
        }
        levels.push((
            name.clone(),
            PyramidLevel {
                height: *h,
                width: *w,
                values: v.iter().map(|t| t / norm).collect(),
            },
        ));
    }
    Ok(MaskPyramid { levels })
}
