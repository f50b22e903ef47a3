use serde::{Deserialize, Serialize};

use crate::dataset::BoundingBox;

pub const FEATURE_DIM: usize = 4;

/// Relative geometry of an ordered box pair:
/// `(dx / w_s, dy / h_s, ln(w_o / w_s), ln(h_o / h_s))` with centre offsets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairFeatures(pub [f64; FEATURE_DIM]);

pub fn pair_features(subject: &BoundingBox, object: &BoundingBox) -> PairFeatures {
    let (sx, sy) = subject.center();
    let (ox, oy) = object.center();
    PairFeatures([
        (ox - sx) / subject.w,
        (oy - sy) / subject.h,
        (object.w / subject.w).ln(),
        (object.h / subject.h).ln(),
    ])
}
