use std::collections::BTreeMap;
use std::io::Read;

use serde_json::Value;

use super::utm::latlon_to_utm;
use crate::error::{Error, Result};

/// Planar point in projected meters.
pub type Point = (f64, f64);

/// Axis-aligned bounding box in projected meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl BBox {
    pub fn empty() -> Self {
        Self {
            xmin: f64::INFINITY,
            ymin: f64::INFINITY,
            xmax: f64::NEG_INFINITY,
            ymax: f64::NEG_INFINITY,
        }
    }

    pub fn extend(&mut self, (x, y): Point) {
        self.xmin = self.xmin.min(x);
        self.ymin = self.ymin.min(y);
        self.xmax = self.xmax.max(x);
        self.ymax = self.ymax.max(y);
    }

    pub fn union(&self, other: &BBox) -> BBox {
        BBox {
            xmin: self.xmin.min(other.xmin),
            ymin: self.ymin.min(other.ymin),
            xmax: self.xmax.max(other.xmax),
            ymax: self.ymax.max(other.ymax),
        }
    }

    pub fn contains(&self, (x, y): Point) -> bool {
        x >= self.xmin && x <= self.xmax && y >= self.ymin && y <= self.ymax
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn diagonal(&self) -> f64 {
        self.width().hypot(self.height())
    }
}

/// A census polygon with its resident population.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub id: String,
    /// Closed rings (first vertex repeated at the end). Ring 0 is the outer ring;
    /// any further rings are combined with the even-odd rule.
    pub rings: Vec<Vec<Point>>,
    pub population: u64,
    bbox: BBox,
}

impl Patch {
    /// Builds a patch, closing rings and validating them.
    pub fn new(id: impl Into<String>, rings: Vec<Vec<Point>>, population: u64) -> Result<Self> {
        Self::build(0, id.into(), rings, population)
    }

    fn build(index: usize, id: String, rings: Vec<Vec<Point>>, population: u64) -> Result<Self> {
        let fail = |reason: String| Error::Patch { index, reason };
        if rings.is_empty() {
            return Err(fail(format!("patch `{id}` has no rings")));
        }
        let mut bbox = BBox::empty();
        let mut closed = Vec::with_capacity(rings.len());
        for (r, mut ring) in rings.into_iter().enumerate() {
            if ring.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
                return Err(fail(format!("patch `{id}` ring {r} has non-finite vertices")));
            }
            if ring.first() != ring.last() {
                let first = ring[0];
                ring.push(first);
            }
            if ring.len() < 4 || ring_area(&ring).abs() <= 0.0 {
                return Err(fail(format!("patch `{id}` ring {r} is degenerate")));
            }
            if r == 0 && self_intersects(&ring) {
                return Err(fail(format!("patch `{id}` outer ring self-intersects")));
            }
            ring.iter().for_each(|&p| bbox.extend(p));
            closed.push(ring);
        }
        Ok(Self {
            id,
            rings: closed,
            population,
            bbox,
        })
    }

    pub fn bbox(&self) -> BBox {
        self.bbox
    }

    /// Area from the even-odd ring combination, assuming holes lie inside the outer ring.
    pub fn area(&self) -> f64 {
        let outer = ring_area(&self.rings[0]).abs();
        let holes: f64 = self.rings[1..].iter().map(|r| ring_area(r).abs()).sum();
        outer - holes
    }

    /// Even-odd containment; points on an edge count as contained.
    pub fn contains(&self, p: Point) -> bool {
        if !self.bbox.contains(p) {
            return false;
        }
        if self.rings.iter().any(|r| on_boundary(r, p)) {
            return true;
        }
        self.rings.iter().filter(|r| crossing_parity(r, p)).count() % 2 == 1
    }
}

fn ring_area(ring: &[Point]) -> f64 {
    ring.windows(2)
        .map(|w| w[0].0 * w[1].1 - w[1].0 * w[0].1)
        .sum::<f64>()
        / 2.0
}

fn crossing_parity(ring: &[Point], (x, y): Point) -> bool {
    let mut inside = false;
    for w in ring.windows(2) {
        let ((x1, y1), (x2, y2)) = (w[0], w[1]);
        if (y1 > y) != (y2 > y) {
            let xc = x1 + (y - y1) * (x2 - x1) / (y2 - y1);
            if x < xc {
                inside = !inside;
            }
        }
    }
    inside
}

fn on_boundary(ring: &[Point], (x, y): Point) -> bool {
    ring.windows(2).any(|w| {
        let ((x1, y1), (x2, y2)) = (w[0], w[1]);
        let cross = (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1);
        let len = (x2 - x1).hypot(y2 - y1);
        cross.abs() <= 1e-9 * len.max(1.0)
            && x >= x1.min(x2) - 1e-9
            && x <= x1.max(x2) + 1e-9
            && y >= y1.min(y2) - 1e-9
            && y <= y1.max(y2) + 1e-9
    })
}

fn orient(a: Point, b: Point, c: Point) -> f64 {
    (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
}

fn segments_cross(a: Point, b: Point, c: Point, d: Point) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    let on = |p: Point, q: Point, r: Point| {
        r.0 >= p.0.min(q.0) && r.0 <= p.0.max(q.0) && r.1 >= p.1.min(q.1) && r.1 <= p.1.max(q.1)
    };
    (d1 == 0.0 && on(c, d, a))
        || (d2 == 0.0 && on(c, d, b))
        || (d3 == 0.0 && on(a, b, c))
        || (d4 == 0.0 && on(a, b, d))
}

fn self_intersects(ring: &[Point]) -> bool {
    let m = ring.len() - 1;
    for i in 0..m {
        for j in (i + 1)..m {
            // adjacent edges share a vertex
            if j == i + 1 || (i == 0 && j == m - 1) {
                continue;
            }
            if segments_cross(ring[i], ring[i + 1], ring[j], ring[j + 1]) {
                return true;
            }
        }
    }
    false
}

/// Label for points outside every patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Location {
    Patch(usize),
    Outside,
}

pub const OUTSIDE_LABEL: &str = "OUTSIDE";

/// Patches plus a uniform bucket index for point lookup.
#[derive(Debug, Clone)]
pub struct PatchMap {
    patches: Vec<Patch>,
    by_id: BTreeMap<String, usize>,
    bbox: BBox,
    index: BucketIndex,
}

#[derive(Debug, Clone)]
struct BucketIndex {
    origin: Point,
    size: (f64, f64),
    dims: (usize, usize),
    buckets: Vec<Vec<usize>>,
}

impl BucketIndex {
    fn new(patches: &[Patch], bbox: BBox) -> Self {
        let side = ((patches.len() as f64).sqrt().ceil() as usize * 2).clamp(1, 256);
        let w = bbox.width().max(1e-9) / side as f64;
        let h = bbox.height().max(1e-9) / side as f64;
        let mut buckets = vec![Vec::new(); side * side];
        let clamp = |v: f64| (v.max(0.0) as usize).min(side - 1);
        for (k, p) in patches.iter().enumerate() {
            let b = p.bbox();
            let c0 = clamp(((b.xmin - bbox.xmin) / w).floor());
            let c1 = clamp(((b.xmax - bbox.xmin) / w).floor());
            let r0 = clamp(((b.ymin - bbox.ymin) / h).floor());
            let r1 = clamp(((b.ymax - bbox.ymin) / h).floor());
            for r in r0..=r1 {
                for c in c0..=c1 {
                    buckets[r * side + c].push(k);
                }
            }
        }
        Self {
            origin: (bbox.xmin, bbox.ymin),
            size: (w, h),
            dims: (side, side),
            buckets,
        }
    }

    fn candidates(&self, (x, y): Point) -> &[usize] {
        let c = ((x - self.origin.0) / self.size.0).floor();
        let r = ((y - self.origin.1) / self.size.1).floor();
        // Points on the far edge of the box belong to the last bucket.
        let c = if c >= 0.0 { (c as usize).min(self.dims.0 - 1) } else { return &[] };
        let r = if r >= 0.0 { (r as usize).min(self.dims.1 - 1) } else { return &[] };
        &self.buckets[r * self.dims.0 + c]
    }
}

impl PatchMap {
    pub fn new(patches: Vec<Patch>) -> Result<Self> {
        if patches.is_empty() {
            return Err(Error::Format("patch map has no patches".into()));
        }
        let mut by_id = BTreeMap::new();
        let mut bbox = BBox::empty();
        for (k, p) in patches.iter().enumerate() {
            if by_id.insert(p.id.clone(), k).is_some() {
                return Err(Error::DuplicatePatch(p.id.clone()));
            }
            bbox = bbox.union(&p.bbox());
        }
        let index = BucketIndex::new(&patches, bbox);
        Ok(Self {
            patches,
            by_id,
            bbox,
            index,
        })
    }

    pub fn patches(&self) -> &[Patch] {
        &self.patches
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn bbox(&self) -> BBox {
        self.bbox
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<&Patch> {
        self.index_of(id).map(|k| &self.patches[k])
    }

    pub fn ids(&self) -> Vec<String> {
        self.patches.iter().map(|p| p.id.clone()).collect()
    }

    pub fn label(&self, loc: Location) -> &str {
        match loc {
            Location::Patch(k) => &self.patches[k].id,
            Location::Outside => OUTSIDE_LABEL,
        }
    }

    /// Point-in-patch lookup. Ties (shared edges, overlaps) go to the
    /// lexicographically smallest patch id.
    pub fn locate(&self, p: Point) -> Location {
        if !self.bbox.contains(p) {
            return Location::Outside;
        }
        self.pick(self.index.candidates(p).iter().copied(), p)
    }

    /// Reference lookup scanning every patch.
    pub fn locate_naive(&self, p: Point) -> Location {
        self.pick(0..self.patches.len(), p)
    }

    fn pick(&self, candidates: impl Iterator<Item = usize>, p: Point) -> Location {
        candidates
            .filter(|&k| self.patches[k].contains(p))
            .min_by(|&a, &b| self.patches[a].id.cmp(&self.patches[b].id))
            .map_or(Location::Outside, Location::Patch)
    }
}

/// Loads a GeoJSON `FeatureCollection` of `Polygon`/`MultiPolygon` features.
///
/// Each feature needs `patch_id` and `population` properties. Coordinates are
/// read as lon/lat degrees and projected to `zone`, unless the collection carries
/// a top-level `"projected": true` member, in which case they are taken as meters.
pub fn load_patches<R: Read>(reader: R, zone: u8) -> Result<PatchMap> {
    let doc: Value = serde_json::from_reader(reader)?;
    if doc.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(Error::Format("expected a GeoJSON FeatureCollection".into()));
    }
    let projected = doc.get("projected").and_then(Value::as_bool).unwrap_or(false);
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Format("FeatureCollection without `features`".into()))?;

    let mut patches = Vec::with_capacity(features.len());
    let mut seen = BTreeMap::new();
    for (index, feature) in features.iter().enumerate() {
        let fail = |reason: &str| Error::Patch {
            index,
            reason: reason.to_string(),
        };
        let props = feature
            .get("properties")
            .ok_or_else(|| fail("missing properties"))?;
        let id = match props.get("patch_id") {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Number(n)) => n.to_string(),
            _ => return Err(fail("missing property `patch_id`")),
        };
        let population = props
            .get("population")
            .and_then(Value::as_f64)
            .ok_or_else(|| fail("missing property `population`"))?;
        if population < 0.0 || population.fract() != 0.0 {
            return Err(fail("`population` must be a nonnegative integer"));
        }
        if seen.insert(id.clone(), index).is_some() {
            return Err(Error::DuplicatePatch(id));
        }
        let geometry = feature.get("geometry").ok_or_else(|| fail("missing geometry"))?;
        let coords = geometry
            .get("coordinates")
            .ok_or_else(|| fail("geometry without coordinates"))?;
        let raw_rings: Vec<&Value> = match geometry.get("type").and_then(Value::as_str) {
            Some("Polygon") => coords.as_array().map(|a| a.iter().collect()),
            Some("MultiPolygon") => coords.as_array().map(|polys| {
                polys
                    .iter()
                    .filter_map(Value::as_array)
                    .flat_map(|rings| rings.iter())
                    .collect()
            }),
            _ => return Err(fail("geometry must be Polygon or MultiPolygon")),
        }
        .ok_or_else(|| fail("malformed coordinates"))?;

        let mut rings = Vec::with_capacity(raw_rings.len());
        for ring in raw_rings {
            let verts = ring.as_array().ok_or_else(|| fail("malformed ring"))?;
            let mut out = Vec::with_capacity(verts.len());
            for v in verts {
                let pair = v.as_array().ok_or_else(|| fail("malformed vertex"))?;
                let (a, b) = match (pair.first().and_then(Value::as_f64), pair.get(1).and_then(Value::as_f64)) {
                    (Some(a), Some(b)) => (a, b),
                    _ => return Err(fail("malformed vertex")),
                };
                let pt = if projected {
                    (a, b)
                } else {
                    latlon_to_utm(b, a, zone).map_err(|e| fail(&e.to_string()))?
                };
                out.push(pt);
            }
            rings.push(out);
        }
        patches.push(Patch::build(index, id, rings, population as u64)?);
    }
    PatchMap::new(patches)
}
