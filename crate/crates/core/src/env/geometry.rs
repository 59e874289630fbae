use serde::{Deserialize, Serialize};

/// Axis-aligned rectangle `[x0, x1) × [y0, y1)` in map pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x0: x, y0: y, x1: x + w, y1: y + h }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    /// Squared distance from a point to the closest point of the rectangle.
    pub fn dist2(&self, x: f64, y: f64) -> f64 {
        let dx = (self.x0 - x).max(0.0).max(x - self.x1);
        let dy = (self.y0 - y).max(0.0).max(y - self.y1);
        dx * dx + dy * dy
    }

    /// True when an open disc overlaps the rectangle's interior.
    pub fn hits_disc(&self, x: f64, y: f64, radius: f64) -> bool {
        self.dist2(x, y) < radius * radius
    }

    pub fn overlaps(&self, other: &Rect) -> bool {
        self.x0 < other.x1 && other.x0 < self.x1 && self.y0 < other.y1 && other.y0 < self.y1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    /// Radians in `[0, 2π)`. Map coordinates are y-down, so increasing heading turns clockwise on screen.
    pub heading: f64,
}

impl Pose {
    pub fn forward(&self) -> (f64, f64) {
        (self.heading.cos(), self.heading.sin())
    }

    /// Unit vector to the agent's right.
    pub fn right(&self) -> (f64, f64) {
        (-self.heading.sin(), self.heading.cos())
    }
}

pub fn wrap_angle(a: f64) -> f64 {
    a.rem_euclid(std::f64::consts::TAU)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disc_rectangle_contact() {
        let r = Rect::new(10.0, 10.0, 20.0, 20.0);
        assert!(r.hits_disc(5.0, 20.0, 6.0));
        assert!(!r.hits_disc(0.0, 20.0, 10.0)); // tangent only
        assert!(!r.hits_disc(0.0, 0.0, 14.0)); // corner at distance ~14.14
        assert!(r.hits_disc(0.0, 0.0, 14.2));
        assert!(r.hits_disc(20.0, 20.0, 0.5));
    }
}
