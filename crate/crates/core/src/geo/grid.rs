use std::io::Write;

use super::patches::{BBox, Location, PatchMap, OUTSIDE_LABEL};
use crate::error::{Error, Result};

/// Default cap on the number of cells in a grid.
pub const DEFAULT_MAX_CELLS: u64 = 50_000_000;

/// Raster over the patch map; each cell carries the label of the patch
/// containing its centroid.
#[derive(Debug, Clone)]
pub struct OccupancyGrid {
    pub cell_size: f64,
    pub origin: (f64, f64),
    pub ncols: usize,
    pub nrows: usize,
    labels: Vec<Location>,
    patch_ids: Vec<String>,
    patch_bbox: BBox,
}

impl OccupancyGrid {
    /// Labels a grid covering the patch bounding box plus `margin` meters on every side.
    ///
    /// The margin is rounded up to whole cells so cell edges stay aligned with the
    /// lower-left corner of the patch bounding box.
    pub fn build(map: &PatchMap, cell_size: f64, margin: f64, max_cells: u64) -> Result<Self> {
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(Error::Config(format!("cell_size must be positive, got {cell_size}")));
        }
        if !(margin >= 0.0 && margin.is_finite()) {
            return Err(Error::Config(format!("grid margin must be nonnegative, got {margin}")));
        }
        let bbox = map.bbox();
        let pad = (margin / cell_size).ceil();
        let ncols = (bbox.width() / cell_size).ceil().max(1.0) + 2.0 * pad;
        let nrows = (bbox.height() / cell_size).ceil().max(1.0) + 2.0 * pad;
        let cells = ncols * nrows;
        if cells > max_cells as f64 {
            return Err(Error::GridTooLarge {
                cells: cells.min(u64::MAX as f64) as u64,
                limit: max_cells,
            });
        }
        let (ncols, nrows) = (ncols as usize, nrows as usize);
        let origin = (bbox.xmin - pad * cell_size, bbox.ymin - pad * cell_size);
        let mut labels = Vec::with_capacity(ncols * nrows);
        for r in 0..nrows {
            for c in 0..ncols {
                let centre = (
                    origin.0 + (c as f64 + 0.5) * cell_size,
                    origin.1 + (r as f64 + 0.5) * cell_size,
                );
                labels.push(map.locate(centre));
            }
        }
        Ok(Self {
            cell_size,
            origin,
            ncols,
            nrows,
            labels,
            patch_ids: map.ids(),
            patch_bbox: bbox,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Row-major cell labels.
    pub fn labels(&self) -> &[Location] {
        &self.labels
    }

    pub fn label(&self, col: usize, row: usize) -> Location {
        self.labels[row * self.ncols + col]
    }

    pub fn patch_ids(&self) -> &[String] {
        &self.patch_ids
    }

    pub fn n_patches(&self) -> usize {
        self.patch_ids.len()
    }

    /// Bounding box of the patches (without margin).
    pub fn patch_bbox(&self) -> BBox {
        self.patch_bbox
    }

    pub fn extent(&self) -> BBox {
        BBox {
            xmin: self.origin.0,
            ymin: self.origin.1,
            xmax: self.origin.0 + self.ncols as f64 * self.cell_size,
            ymax: self.origin.1 + self.nrows as f64 * self.cell_size,
        }
    }

    pub fn cell_centre(&self, col: usize, row: usize) -> (f64, f64) {
        (
            self.origin.0 + (col as f64 + 0.5) * self.cell_size,
            self.origin.1 + (row as f64 + 0.5) * self.cell_size,
        )
    }

    /// Cell holding a point, if the point is on the grid.
    pub fn cell_of(&self, (x, y): (f64, f64)) -> Option<(usize, usize)> {
        let c = ((x - self.origin.0) / self.cell_size).floor();
        let r = ((y - self.origin.1) / self.cell_size).floor();
        if c < 0.0 || r < 0.0 || c >= self.ncols as f64 || r >= self.nrows as f64 {
            return None;
        }
        Some((c as usize, r as usize))
    }

    /// Area per patch covered by the cells labeled with it.
    pub fn labeled_area(&self) -> Vec<f64> {
        let mut area = vec![0.0; self.n_patches()];
        let cell = self.cell_size * self.cell_size;
        for l in &self.labels {
            if let Location::Patch(k) = l {
                area[*k] += cell;
            }
        }
        area
    }

    /// Debug export: one CSV line per grid row (south to north), patch ids or `OUTSIDE`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        for r in 0..self.nrows {
            let line: Vec<&str> = (0..self.ncols)
                .map(|c| match self.label(c, r) {
                    Location::Patch(k) => self.patch_ids[k].as_str(),
                    Location::Outside => OUTSIDE_LABEL,
                })
                .collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }
}
