//! Projection, patch polygons and the occupancy raster.

mod grid;
mod patches;
mod utm;

pub use grid::{OccupancyGrid, DEFAULT_MAX_CELLS};
pub use patches::{load_patches, BBox, Location, Patch, PatchMap, Point, OUTSIDE_LABEL};
pub use utm::{central_meridian, latlon_to_utm, utm_to_latlon, UtmProjector, MAX_ABS_LAT};

use crate::error::Result;

/// Builds the occupancy grid with the default cell cap.
pub fn build_grid(map: &PatchMap, cell_size: f64, margin: f64) -> Result<OccupancyGrid> {
    OccupancyGrid::build(map, cell_size, margin, DEFAULT_MAX_CELLS)
}
