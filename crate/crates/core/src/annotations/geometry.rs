//! Polygon checks for segmentation outlines.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolygonDefect {
    /// Fewer than three distinct vertices, a repeated consecutive vertex, or
    /// zero area.
    Degenerate,
    SelfIntersection,
    OutOfBounds,
}

/// Absolute shoelace area of a closed vertex ring.
pub fn shoelace_area(points: &[Point]) -> f64 {
    let n = points.len();
    if n < 3 {
        return 0.0;
    }
    let mut twice = 0.0;
    for i in 0..n {
        let (a, b) = (points[i], points[(i + 1) % n]);
        twice += a.x * b.y - b.x * a.y;
    }
    (twice / 2.0).abs()
}

/// Axis-aligned bounding box as COCO `[x, y, width, height]`.
pub fn bounding_box(points: &[Point]) -> [f64; 4] {
    let (mut x0, mut y0) = (f64::INFINITY, f64::INFINITY);
    let (mut x1, mut y1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in points {
        x0 = x0.min(p.x);
        y0 = y0.min(p.y);
        x1 = x1.max(p.x);
        y1 = y1.max(p.y);
    }
    [x0, y0, x1 - x0, y1 - y0]
}

fn orient(a: Point, b: Point, c: Point) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

fn on_segment(a: Point, b: Point, p: Point) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

/// Closed-segment intersection, touching and collinear overlap included.
fn segments_meet(p1: Point, p2: Point, q1: Point, q2: Point) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

/// Pairwise edge test. Adjacent edges may only share their common vertex;
/// a collinear fold back along the previous edge counts as intersecting.
pub fn is_self_intersecting(points: &[Point]) -> bool {
    let n = points.len();
    let edge = |i: usize| (points[i], points[(i + 1) % n]);
    for i in 0..n {
        for j in i + 1..n {
            let (a1, a2) = edge(i);
            let (b1, b2) = edge(j);
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                // shared vertex is a2 == b1 (or b2 == a1 for the wrap pair)
                let (shared, other_a, other_b) = if j == i + 1 { (a2, a1, b2) } else { (a1, a2, b1) };
                if orient(other_a, shared, other_b) == 0.0 {
                    // collinear: overlap iff the far ends lie on the same side
                    let dot = (other_a.x - shared.x) * (other_b.x - shared.x)
                        + (other_a.y - shared.y) * (other_b.y - shared.y);
                    if dot > 0.0 {
                        return true;
                    }
                }
                continue;
            }
            if segments_meet(a1, a2, b1, b2) {
                return true;
            }
        }
    }
    false
}

/// Validates a polygon inside a `width x height` frame and returns its area.
pub fn validate_polygon(points: &[Point], width: u32, height: u32) -> Result<f64, PolygonDefect> {
    if points.len() < 3 {
        return Err(PolygonDefect::Degenerate);
    }
    let (w, h) = (f64::from(width), f64::from(height));
    if points
        .iter()
        .any(|p| !p.x.is_finite() || !p.y.is_finite() || p.x < 0.0 || p.y < 0.0 || p.x > w || p.y > h)
    {
        return Err(PolygonDefect::OutOfBounds);
    }
    let n = points.len();
    if (0..n).any(|i| points[i] == points[(i + 1) % n]) {
        return Err(PolygonDefect::Degenerate);
    }
    if is_self_intersecting(points) {
        return Err(PolygonDefect::SelfIntersection);
    }
    let area = shoelace_area(points);
    if area <= 0.0 {
        return Err(PolygonDefect::Degenerate);
    }
    Ok(area)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poly(coords: &[(f64, f64)]) -> Vec<Point> {
        coords.iter().map(|&(x, y)| Point::new(x, y)).collect()
    }

    #[test]
    fn right_triangle() {
        let t = poly(&[(0.0, 0.0), (10.0, 0.0), (0.0, 10.0)]);
        assert_eq!(validate_polygon(&t, 10, 10), Ok(50.0));
        assert_eq!(bounding_box(&t), [0.0, 0.0, 10.0, 10.0]);
    }

    #[test]
    fn defects() {
        assert_eq!(validate_polygon(&poly(&[(0.0, 0.0), (1.0, 1.0)]), 5, 5), Err(PolygonDefect::Degenerate));
        let bowtie = poly(&[(0.0, 0.0), (4.0, 4.0), (4.0, 0.0), (0.0, 4.0)]);
        assert_eq!(validate_polygon(&bowtie, 5, 5), Err(PolygonDefect::SelfIntersection));
        let negative = poly(&[(-1.0, 0.0), (4.0, 0.0), (0.0, 4.0)]);
        assert_eq!(validate_polygon(&negative, 5, 5), Err(PolygonDefect::OutOfBounds));
        let outside = poly(&[(0.0, 0.0), (6.0, 0.0), (0.0, 4.0)]);
        assert_eq!(validate_polygon(&outside, 5, 5), Err(PolygonDefect::OutOfBounds));
        let line = poly(&[(0.0, 0.0), (1.0, 1.0), (2.0, 2.0)]);
        assert!(validate_polygon(&line, 5, 5).is_err());
        let spike = poly(&[(0.0, 0.0), (4.0, 0.0), (2.0, 0.0), (2.0, 3.0)]);
        assert_eq!(validate_polygon(&spike, 5, 5), Err(PolygonDefect::SelfIntersection));
        let repeated = poly(&[(0.0, 0.0), (4.0, 0.0), (4.0, 0.0), (2.0, 3.0)]);
        assert_eq!(validate_polygon(&repeated, 5, 5), Err(PolygonDefect::Degenerate));
        // vertex touching a non-adjacent edge
        let touch = poly(&[(0.0, 0.0), (4.0, 0.0), (4.0, 4.0), (2.0, 0.0), (0.0, 4.0)]);
        assert_eq!(validate_polygon(&touch, 5, 5), Err(PolygonDefect::SelfIntersection));
    }

    #[test]
    fn concave_is_simple() {
        let arrow = poly(&[(0.0, 0.0), (4.0, 2.0), (0.0, 4.0), (1.0, 2.0)]);
        assert!(!is_self_intersecting(&arrow));
        assert_eq!(validate_polygon(&arrow, 4, 4), Ok(6.0));
    }
}
