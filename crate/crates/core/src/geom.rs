//! Integer geometry in database units.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "[i64; 2]", into = "[i64; 2]")]
pub struct Point {
    pub x: i64,
    pub y: i64,
}

impl Point {
    pub const fn new(x: i64, y: i64) -> Self {
        Point { x, y }
    }

    pub fn translate(self, dx: i64, dy: i64) -> Self {
        Point::new(self.x + dx, self.y + dy)
    }

    pub fn manhattan(self, other: Point) -> i64 {
        (self.x - other.x).abs() + (self.y - other.y).abs()
    }

    /// Coordinate along `dir`'s axis.
    pub fn along(self, dir: Direction) -> i64 {
        match dir {
            Direction::Horizontal => self.x,
            Direction::Vertical => self.y,
        }
    }
}

impl From<[i64; 2]> for Point {
    fn from([x, y]: [i64; 2]) -> Self {
        Point { x, y }
    }
}

impl From<Point> for [i64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

/// Closed axis-aligned rectangle; degenerate rectangles model points and
/// zero-width wire center lines.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "[i64; 4]", into = "[i64; 4]")]
pub struct Rect {
    pub x0: i64,
    pub y0: i64,
    pub x1: i64,
    pub y1: i64,
}

impl Rect {
    /// Builds a normalized rectangle from any two corners.
    pub fn new(a: Point, b: Point) -> Self {
        Rect {
            x0: a.x.min(b.x),
            y0: a.y.min(b.y),
            x1: a.x.max(b.x),
            y1: a.y.max(b.y),
        }
    }

    pub fn point(p: Point) -> Self {
        Rect::new(p, p)
    }

    pub fn width(&self) -> i64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> i64 {
        self.y1 - self.y0
    }

    pub fn intersects(&self, other: &Rect) -> bool {
        self.x0 <= other.x1 && other.x0 <= self.x1 && self.y0 <= other.y1 && other.y0 <= self.y1
    }

    pub fn contains(&self, p: Point) -> bool {
        self.x0 <= p.x && p.x <= self.x1 && self.y0 <= p.y && p.y <= self.y1
    }

    pub fn contains_rect(&self, r: &Rect) -> bool {
        self.contains(Point::new(r.x0, r.y0)) && self.contains(Point::new(r.x1, r.y1))
    }

    pub fn intersection(&self, other: &Rect) -> Option<Rect> {
        self.intersects(other).then(|| Rect {
            x0: self.x0.max(other.x0),
            y0: self.y0.max(other.y0),
            x1: self.x1.min(other.x1),
            y1: self.y1.min(other.y1),
        })
    }

    pub fn translate(&self, dx: i64, dy: i64) -> Rect {
        Rect {
            x0: self.x0 + dx,
            y0: self.y0 + dy,
            x1: self.x1 + dx,
            y1: self.y1 + dy,
        }
    }

    pub fn center(&self) -> Point {
        Point::new((self.x0 + self.x1).div_euclid(2), (self.y0 + self.y1).div_euclid(2))
    }
}

impl From<[i64; 4]> for Rect {
    fn from([x0, y0, x1, y1]: [i64; 4]) -> Self {
        Rect::new(Point::new(x0, y0), Point::new(x1, y1))
    }
}

impl From<Rect> for [i64; 4] {
    fn from(r: Rect) -> Self {
        [r.x0, r.y0, r.x1, r.y1]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Horizontal,
    Vertical,
}

impl Direction {
    pub fn other(self) -> Direction {
        match self {
            Direction::Horizontal => Direction::Vertical,
            Direction::Vertical => Direction::Horizontal,
        }
    }
}

/// DEF placement orientation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Orientation {
    #[default]
    N,
    S,
    E,
    W,
    FN,
    FS,
    FE,
    FW,
}

impl Orientation {
    pub const ALL: [Orientation; 8] = [
        Orientation::N,
        Orientation::S,
        Orientation::E,
        Orientation::W,
        Orientation::FN,
        Orientation::FS,
        Orientation::FE,
        Orientation::FW,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Orientation::N => "N",
            Orientation::S => "S",
            Orientation::E => "E",
            Orientation::W => "W",
            Orientation::FN => "FN",
            Orientation::FS => "FS",
            Orientation::FE => "FE",
            Orientation::FW => "FW",
        }
    }

    pub fn parse(s: &str) -> Option<Orientation> {
        Orientation::ALL.into_iter().find(|o| o.name() == s)
    }

    /// Maps a point of a master of size `(w, h)` into placed coordinates
    /// relative to the placement origin (the lower-left corner of the
    /// placed bounding box).
    pub fn apply(self, p: Point, w: i64, h: i64) -> Point {
        let (x, y) = (p.x, p.y);
        let (x, y) = match self {
            Orientation::N => (x, y),
            Orientation::S => (w - x, h - y),
            Orientation::E => (y, w - x),
            Orientation::W => (h - y, x),
            Orientation::FN => (w - x, y),
            Orientation::FS => (x, h - y),
            Orientation::FE => (y, x),
            Orientation::FW => (h - y, w - x),
        };
        Point::new(x, y)
    }
}
