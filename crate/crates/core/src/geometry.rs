//! Axis-aligned boxes, points and diagonal 2D Gaussians.

use crate::error::GeometryError;
use serde::{Deserialize, Serialize};

/// A point in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Axis-aligned rectangle `[x1, y1, x2, y2]` in pixel coordinates.
///
/// Always canonical: `x1 <= x2` and `y1 <= y2`. Constructors reorder flipped
/// corners instead of rejecting them, so a policy that emits a flipped box
/// still gets scored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl BBox {
    /// Builds a canonical box from two corners. Fails only on non-finite input.
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, GeometryError> {
        if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite([x1, y1, x2, y2]));
        }
        Ok(Self {
            x1: x1.min(x2),
            y1: y1.min(y2),
            x2: x1.max(x2),
            y2: y1.max(y2),
        })
    }

    pub fn from_array(c: [f64; 4]) -> Result<Self, GeometryError> {
        Self::new(c[0], c[1], c[2], c[3])
    }

    pub fn from_center_size(center: Point2, width: f64, height: f64) -> Result<Self, GeometryError> {
        Self::new(
            center.x - width / 2.0,
            center.y - height / 2.0,
            center.x + width / 2.0,
            center.y + height / 2.0,
        )
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }
    pub fn y1(&self) -> f64 {
        self.y1
    }
    pub fn x2(&self) -> f64 {
        self.x2
    }
    pub fn y2(&self) -> f64 {
        self.y2
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> Point2 {
        center(self)
    }

    pub fn contains(&self, p: &Point2) -> bool {
        contains(self, p)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Result<Self, GeometryError> {
        Self::new(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)
    }

    pub fn scale(&self, k: f64) -> Result<Self, GeometryError> {
        Self::new(self.x1 * k, self.y1 * k, self.x2 * k, self.y2 * k)
    }
}

impl<'de> Deserialize<'de> for BBox {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let c = <[f64; 4]>::deserialize(d)?;
        BBox::from_array(c).map_err(serde::de::Error::custom)
    }
}

/// Diagonal-covariance 2D Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian2 {
    pub mu: Point2,
    pub var_x: f64,
    pub var_y: f64,
}

impl Gaussian2 {
    pub fn sigma_x(&self) -> f64 {
        self.var_x.sqrt()
    }

    pub fn sigma_y(&self) -> f64 {
        self.var_y.sqrt()
    }

    /// Normalized density at `p`.
    pub fn density(&self, p: &Point2) -> f64 {
        let dx = p.x - self.mu.x;
        let dy = p.y - self.mu.y;
        let q = dx * dx / self.var_x + dy * dy / self.var_y;
        (-0.5 * q).exp() / (2.0 * std::f64::consts::PI * (self.var_x * self.var_y).sqrt())
    }
}

pub fn center(b: &BBox) -> Point2 {
    Point2::new((b.x1 + b.x2) / 2.0, (b.y1 + b.y2) / 2.0)
}

/// Closed-interval containment: points on the boundary count as inside.
pub fn contains(b: &BBox, p: &Point2) -> bool {
    b.x1 <= p.x && p.x <= b.x2 && b.y1 <= p.y && p.y <= b.y2
}

/// Intersection over union; zero when the union has zero area.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Standard deviation used for one box extent: `max(alpha * extent, floor)`.
pub fn adaptive_sigma(extent: f64, alpha: f64, sigma_floor: f64) -> f64 {
    (alpha * extent).max(sigma_floor)
}

/// Size-adaptive Gaussian for a box: centered on the box, with per-axis
/// standard deviation proportional to the box extent on that axis.
pub fn gaussian_from_bbox(b: &BBox, alpha: f64, sigma_floor: f64) -> Gaussian2 {
    let sx = adaptive_sigma(b.width(), alpha, sigma_floor);
    let sy = adaptive_sigma(b.height(), alpha, sigma_floor);
    Gaussian2 {
        mu: center(b),
        var_x: sx * sx,
        var_y: sy * sy,
    }
}
