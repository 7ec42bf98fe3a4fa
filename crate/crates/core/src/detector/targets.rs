//! Ground-truth assignment to grid slots.

use crate::anchors::{shape_iou, Anchor};
use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, DigitClass};

/// Regression targets for one responsible slot. `x`, `y` are the centre's
/// offsets within its cell, `w`, `h` log-ratios to the anchor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotTarget {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub class: DigitClass,
    /// Area of the assigned box, used to settle collisions.
    pub area: f64,
}

/// Per-slot targets for one image, indexed `(anchor, row, col)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetGrid {
    pub anchors: usize,
    pub rows: usize,
    pub cols: usize,
    pub stride: usize,
    pub slots: Vec<Option<SlotTarget>>,
    /// Boxes dropped because a larger box claimed the same slot.
    pub collisions: usize,
}

impl TargetGrid {
    pub fn index(&self, anchor: usize, row: usize, col: usize) -> usize {
        (anchor * self.rows + row) * self.cols + col
    }

    pub fn get(&self, anchor: usize, row: usize, col: usize) -> Option<&SlotTarget> {
        self.slots[self.index(anchor, row, col)].as_ref()
    }

    pub fn responsible(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }
}

/// Index of the anchor with the highest concentric IoU against `(w, h)`;
/// ties go to the lower index.
pub fn best_anchor(anchors: &[Anchor], w: f64, h: f64) -> usize {
    let mut best = 0;
    let mut best_iou = f64::NEG_INFINITY;
    for (i, a) in anchors.iter().enumerate() {
        let v = shape_iou((w, h), (a.width, a.height));
        if v > best_iou {
            best = i;
            best_iou = v;
        }
    }
    best
}

/// Assigns each box (in network-input pixels) to the cell holding its centre
/// and its best-matching anchor. When two boxes land on the same slot the
/// larger one keeps it and the collision is counted.
pub fn assign_targets(
    boxes: &[(BoundingBox, DigitClass)],
    anchors: &[Anchor],
    rows: usize,
    cols: usize,
    stride: usize,
) -> Result<TargetGrid> {
    if anchors.is_empty() || rows == 0 || cols == 0 || stride == 0 {
        return Err(Error::Argument("empty target grid".into()));
    }
    let mut grid = TargetGrid {
        anchors: anchors.len(),
        rows,
        cols,
        stride,
        slots: vec![None; anchors.len() * rows * cols],
        collisions: 0,
    };
    let s = stride as f64;
    for (bbox, class) in boxes {
        let (cx, cy) = bbox.center();
        let col = ((cx / s).floor().max(0.0) as usize).min(cols - 1);
        let row = ((cy / s).floor().max(0.0) as usize).min(rows - 1);
        let a = best_anchor(anchors, bbox.width(), bbox.height());
        let target = SlotTarget {
            x: (cx / s - col as f64).clamp(0.0, 1.0),
            y: (cy / s - row as f64).clamp(0.0, 1.0),
            w: (bbox.width() / anchors[a].width).ln(),
            h: (bbox.height() / anchors[a].height).ln(),
            class: *class,
            area: bbox.area(),
        };
        let idx = grid.index(a, row, col);
        match &grid.slots[idx] {
            None => grid.slots[idx] = Some(target),
            Some(existing) => {
                grid.collisions += 1;
                if target.area > existing.area {
                    grid.slots[idx] = Some(target);
                }
            }
        }
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn anchors() -> Vec<Anchor> {
        vec![Anchor::new(10.0, 20.0).unwrap(), Anchor::new(30.0, 30.0).unwrap()]
    }

    #[test]
    fn centre_cell_and_offsets() {
        let b = BoundingBox::from_center(40.0, 20.0, 10.0, 20.0).unwrap();
        let g = assign_targets(&[(b, DigitClass::new(7).unwrap())], &anchors(), 2, 4, 32).unwrap();
        let t = g.get(0, 0, 1).unwrap();
        assert_eq!((t.x, t.y, t.w, t.h), (0.25, 0.625, 0.0, 0.0));
        assert_eq!(t.class.value(), 7);
        assert_eq!(g.responsible(), 1);
    }

    #[test]
    fn collision_keeps_larger_box() {
        let small = BoundingBox::from_center(40.0, 20.0, 9.0, 19.0).unwrap();
        let large = BoundingBox::from_center(42.0, 22.0, 11.0, 21.0).unwrap();
        let g = assign_targets(
            &[(large, DigitClass::new(1).unwrap()), (small, DigitClass::new(2).unwrap())],
            &anchors(),
            2,
            4,
            32,
        )
        .unwrap();
        assert_eq!(g.collisions, 1);
        assert_eq!(g.responsible(), 1);
        assert_eq!(g.get(0, 0, 1).unwrap().class.value(), 1);
    }

    #[test]
    fn anchor_choice_by_shape() {
        let b = BoundingBox::from_center(16.0, 16.0, 28.0, 32.0).unwrap();
        let g = assign_targets(&[(b, DigitClass::new(0).unwrap())], &anchors(), 1, 1, 32).unwrap();
        assert!(g.get(1, 0, 0).is_some());
        assert!(assign_targets(&[], &[], 1, 1, 32).is_err());
    }
}
