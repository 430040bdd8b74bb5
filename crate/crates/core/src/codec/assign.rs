use std::cmp::Ordering;

use crate::camera::Box2D;
use crate::overlap::iou_2d;

use super::Anchor;

/// Training role of one anchor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorState {
    Positive(usize),
    Negative,
    Ignore,
}

impl AnchorState {
    pub fn is_positive(&self) -> bool {
        matches!(self, AnchorState::Positive(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssignConfig {
    /// Anchors strictly above this IoU become positive.
    pub positive_iou: f64,
    /// Anchors strictly below this IoU become negative.
    pub negative_iou: f64,
}

impl Default for AssignConfig {
    fn default() -> Self {
        Self {
            positive_iou: 0.5,
            negative_iou: 0.4,
        }
    }
}

fn box_key(b: &Box2D) -> [f64; 4] {
    [b.u_min, b.v_min, b.u_max, b.v_max]
}

fn cmp_keys(a: &[f64; 4], b: &[f64; 4]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Matches every anchor to its best-overlapping ground-truth box.
///
/// IoU ties go to a non-ignored box, then to the lexicographically smallest
/// box, so the outcome does not depend on the order of `gt`.
pub fn assign_ground_truth(anchors: &[Anchor], gt: &[Box2D], ignore: &[bool], cfg: &AssignConfig) -> Vec<AnchorState> {
    debug_assert_eq!(gt.len(), ignore.len());
    anchors
        .iter()
        .map(|a| {
            let ab = a.box2d();
            let mut best: Option<(usize, f64)> = None;
            for (i, g) in gt.iter().enumerate() {
                let iou = iou_2d(&ab, g);
                let better = match best {
                    None => true,
                    Some((j, b)) => {
                        if iou != b {
                            iou > b
                        } else if ignore[i] != ignore[j] {
                            !ignore[i]
                        } else {
                            cmp_keys(&box_key(g), &box_key(&gt[j])).is_lt()
                        }
                    }
                };
                if better {
                    best = Some((i, iou));
                }
            }
            match best {
                None => AnchorState::Negative,
                Some((_, iou)) if iou < cfg.negative_iou => AnchorState::Negative,
                Some((i, iou)) if iou > cfg.positive_iou && !ignore[i] => AnchorState::Positive(i),
                Some(_) => AnchorState::Ignore,
            }
        })
        .collect()
}
