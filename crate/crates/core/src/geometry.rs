//! Boxes, boundary-context regions, overlap, suppression and box regression.

use std::fmt;

use crate::error::{Error, Result};

/// Axis-aligned rectangle in continuous image coordinates, stored as center and size.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        let b = Self { cx, cy, w, h };
        if !(w > 0.0 && h > 0.0) || ![cx, cy, w, h].iter().all(|v| v.is_finite()) {
            return Err(Error::Geometry(format!("invalid box {b:?}")));
        }
        Ok(b)
    }

    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        Self::new((x1 + x2) / 2.0, (y1 + y2) / 2.0, x2 - x1, y2 - y1)
    }

    /// `(x1, y1, x2, y2)`.
    pub fn corners(&self) -> [f64; 4] {
        [
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        ]
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self {
            cx: self.cx + dx,
            cy: self.cy + dy,
            ..*self
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            cx: self.cx * s,
            cy: self.cy * s,
            w: self.w * s,
            h: self.h * s,
        }
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [x1, y1, x2, y2] = self.corners();
        write!(f, "({x1:.2}, {y1:.2}, {x2:.2}, {y2:.2})")
    }
}

/// Context families that can be switched on together.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ContextFamily {
    Sides,
    Vertices,
    Boundary,
}

/// The proposal itself plus the ten boundary-context regions derived from it.
///
/// Declaration order is the sub-network order used for parameters, reports
/// and contribution tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ContextKind {
    Base,
    SideTop,
    SideBottom,
    SideLeft,
    SideRight,
    VertexTL,
    VertexBR,
    VertexTR,
    VertexBL,
    InBoundary,
    OutBoundary,
}

impl ContextKind {
    pub const ALL: [ContextKind; 11] = [
        ContextKind::Base,
        ContextKind::SideTop,
        ContextKind::SideBottom,
        ContextKind::SideLeft,
        ContextKind::SideRight,
        ContextKind::VertexTL,
        ContextKind::VertexBR,
        ContextKind::VertexTR,
        ContextKind::VertexBL,
        ContextKind::InBoundary,
        ContextKind::OutBoundary,
    ];

    pub fn family(self) -> Option<ContextFamily> {
        use ContextKind::*;
        match self {
            Base => None,
            SideTop | SideBottom | SideLeft | SideRight => Some(ContextFamily::Sides),
            VertexTL | VertexTR | VertexBR | VertexBL => Some(ContextFamily::Vertices),
            InBoundary | OutBoundary => Some(ContextFamily::Boundary),
        }
    }

    /// Column name in contribution tables.
    pub fn table_name(self) -> &'static str {
        use ContextKind::*;
        match self {
            Base => "Base",
            SideTop => "Up",
            SideBottom => "Down",
            SideLeft => "Left",
            SideRight => "Right",
            VertexTL => "NW",
            VertexBR => "SE",
            VertexTR => "NE",
            VertexBL => "SW",
            InBoundary => "In",
            OutBoundary => "Out",
        }
    }

    /// Identifier used in parameter names and file names.
    pub fn slug(self) -> &'static str {
        use ContextKind::*;
        match self {
            Base => "base",
            SideTop => "side_top",
            SideBottom => "side_bottom",
            SideLeft => "side_left",
            SideRight => "side_right",
            VertexTL => "vertex_tl",
            VertexBR => "vertex_br",
            VertexTR => "vertex_tr",
            VertexBL => "vertex_bl",
            InBoundary => "in_boundary",
            OutBoundary => "out_boundary",
        }
    }
}

/// Region of `r` that context `kind` looks at. Not clipped to the image.
pub fn generate_context(r: &BBox, kind: ContextKind) -> BBox {
    use ContextKind::*;
    let two_thirds = 2.0 / 3.0;
    let (hw, hh) = (r.w / 2.0, r.h / 2.0);
    let (dx, dy, w, h) = match kind {
        Base => (0.0, 0.0, r.w, r.h),
        SideLeft => (-hw, 0.0, r.w * two_thirds, r.h),
        SideRight => (hw, 0.0, r.w * two_thirds, r.h),
        SideTop => (0.0, -hh, r.w, r.h * two_thirds),
        SideBottom => (0.0, hh, r.w, r.h * two_thirds),
        VertexTL => (-hw, -hh, r.w * two_thirds, r.h * two_thirds),
        VertexTR => (hw, -hh, r.w * two_thirds, r.h * two_thirds),
        VertexBR => (hw, hh, r.w * two_thirds, r.h * two_thirds),
        VertexBL => (-hw, hh, r.w * two_thirds, r.h * two_thirds),
        InBoundary => (0.0, 0.0, r.w / 2.0, r.h / 2.0),
        OutBoundary => (0.0, 0.0, r.w * 2.0, r.h * 2.0),
    };
    BBox {
        cx: r.cx + dx,
        cy: r.cy + dy,
        w,
        h,
    }
}

fn intersection(a: &BBox, b: &BBox) -> f64 {
    let [ax1, ay1, ax2, ay2] = a.corners();
    let [bx1, by1, bx2, by2] = b.corners();
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    iw * ih
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = intersection(a, b);
    if inter <= 0.0 {
        return 0.0;
    }
    (inter / (a.area() + b.area() - inter)).clamp(0.0, 1.0)
}

/// Greedy non-maximum suppression. Returns kept indices in selection order
/// (descending score, equal scores by lower index).
pub fn nms(boxes: &[BBox], scores: &[f64], thresh: f64) -> Vec<usize> {
    assert_eq!(boxes.len(), scores.len(), "nms: boxes and scores differ in length");
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept.iter().all(|&k| iou(&boxes[k], &boxes[i]) <= thresh) {
            kept.push(i);
        }
    }
    kept
}

/// Regression offsets of a box relative to a reference box.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RegressionTarget {
    pub tx: f64,
    pub ty: f64,
    pub tw: f64,
    pub th: f64,
}

impl RegressionTarget {
    pub fn as_array(&self) -> [f64; 4] {
        [self.tx, self.ty, self.tw, self.th]
    }

    pub fn from_array([tx, ty, tw, th]: [f64; 4]) -> Self {
        Self { tx, ty, tw, th }
    }
}

pub fn encode_box(gt: &BBox, anchor: &BBox) -> RegressionTarget {
    RegressionTarget {
        tx: (gt.cx - anchor.cx) / anchor.w,
        ty: (gt.cy - anchor.cy) / anchor.h,
        tw: (gt.w / anchor.w).ln(),
        th: (gt.h / anchor.h).ln(),
    }
}

pub fn decode_box(t: &RegressionTarget, anchor: &BBox) -> BBox {
    BBox {
        cx: anchor.cx + t.tx * anchor.w,
        cy: anchor.cy + t.ty * anchor.h,
        w: anchor.w * t.tw.exp(),
        h: anchor.h * t.th.exp(),
    }
}

/// Clamps corners to `[0, width] x [0, height]`. A box left without area is an error.
pub fn clip_box(b: &BBox, width: u32, height: u32) -> Result<BBox> {
    let [x1, y1, x2, y2] = b.corners();
    let (w, h) = (f64::from(width), f64::from(height));
    let (x1, x2) = (x1.clamp(0.0, w), x2.clamp(0.0, w));
    let (y1, y2) = (y1.clamp(0.0, h), y2.clamp(0.0, h));
    if x2 <= x1 || y2 <= y1 {
        return Err(Error::EmptyBox);
    }
    BBox::from_corners(x1, y1, x2, y2)
}
