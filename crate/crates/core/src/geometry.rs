//! Planar polygon primitives.
//!
//! Coordinates are assumed to be in a projected CRS with metric units; the
//! library never reprojects. A [`Polygon`] is a list of closed rings (the
//! first ring is the exterior, the rest are holes) and a [`Geometry`] is one
//! or more polygons.

use crate::error::{Error, Result};

/// A planar coordinate in meters.
pub type Point = (f64, f64);

/// A closed ring: first vertex equals last, at least 4 vertices.
pub type Ring = Vec<Point>;

/// One polygon: exterior ring followed by any interior rings.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    pub rings: Vec<Ring>,
}

/// Polygon or multipolygon geometry of a geounit.
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    pub polygons: Vec<Polygon>,
}

impl Geometry {
    pub fn from_polygon(rings: Vec<Ring>) -> Self {
        Geometry {
            polygons: vec![Polygon { rings }],
        }
    }

    /// Iterates every ring of every part.
    pub fn rings(&self) -> impl Iterator<Item = &Ring> {
        self.polygons.iter().flat_map(|p| p.rings.iter())
    }

    /// Distinct boundary vertices (the closing duplicate is skipped per ring).
    pub fn vertices(&self) -> impl Iterator<Item = Point> + '_ {
        self.rings().flat_map(|r| r[..r.len() - 1].iter().copied())
    }

    /// Boundary segments of every ring, in ring order.
    pub fn segments(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        self.rings().flat_map(|r| r.windows(2).map(|w| (w[0], w[1])))
    }

    /// Validates ring closure and vertex counts; closes rings whose first and
    /// last vertices coincide within `1e-9` but are not bit-identical.
    pub fn validate(&mut self, id: &str) -> Result<()> {
        if self.polygons.is_empty() {
            return Err(Error::InvalidGeometry {
                id: id.to_string(),
                detail: "empty geometry".to_string(),
            });
        }
        for poly in &mut self.polygons {
            if poly.rings.is_empty() {
                return Err(Error::InvalidGeometry {
                    id: id.to_string(),
                    detail: "polygon without rings".to_string(),
                });
            }
            for ring in &mut poly.rings {
                if ring.len() < 4 {
                    return Err(Error::InvalidGeometry {
                        id: id.to_string(),
                        detail: format!("ring has {} vertices, need at least 4", ring.len()),
                    });
                }
                let first = ring[0];
                let last = *ring.last().unwrap();
                if first != last {
                    let close = (first.0 - last.0).abs() < 1e-9 && (first.1 - last.1).abs() < 1e-9;
                    if close {
                        *ring.last_mut().unwrap() = first;
                    } else {
                        return Err(Error::InvalidGeometry {
                            id: id.to_string(),
                            detail: "ring is not closed".to_string(),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Total boundary length of all rings, in meters.
    pub fn perimeter(&self) -> f64 {
        self.segments()
            .map(|(a, b)| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt())
            .sum()
    }

    /// Area via the shoelace formula: exterior rings minus holes, in m².
    pub fn area(&self) -> f64 {
        self.polygons
            .iter()
            .map(|poly| {
                let mut acc = 0.0;
                for (k, ring) in poly.rings.iter().enumerate() {
                    let a = shoelace(ring).abs();
                    acc += if k == 0 { a } else { -a };
                }
                acc
            })
            .sum::<f64>()
            .max(0.0)
    }
}

fn shoelace(ring: &Ring) -> f64 {
    ring.windows(2)
        .map(|w| w[0].0 * w[1].1 - w[1].0 * w[0].1)
        .sum::<f64>()
        / 2.0
}

/// Quantized coordinate used as a hash key when matching boundary points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct QuantizedPoint(pub i64, pub i64);

/// Snaps a coordinate to the `snap_tolerance` grid. A tolerance of zero keeps
/// exact coordinate bits, so only bit-identical points match.
pub fn quantize(p: Point, snap_tolerance: f64) -> QuantizedPoint {
    if snap_tolerance <= 0.0 {
        QuantizedPoint(p.0.to_bits() as i64, p.1.to_bits() as i64)
    } else {
        QuantizedPoint(
            (p.0 / snap_tolerance).round() as i64,
            (p.1 / snap_tolerance).round() as i64,
        )
    }
}

/// Axis-aligned unit-square ring, used heavily by tests and the synthetic
/// dataset generators.
pub fn square_ring(x0: f64, y0: f64, size: f64) -> Ring {
    vec![
        (x0, y0),
        (x0 + size, y0),
        (x0 + size, y0 + size),
        (x0, y0 + size),
        (x0, y0),
    ]
}
