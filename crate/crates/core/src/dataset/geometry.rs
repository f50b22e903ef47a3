//! Geometric predicate library used to synthesize ground-truth relations.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::BoundingBox;

/// Subject bottom edge must lie within this fraction of the object height
/// from the object's top edge.
pub const ON_VERTICAL_TOLERANCE: f64 = 0.1;
/// Minimum horizontal overlap as a fraction of subject width.
pub const ON_MIN_OVERLAP: f64 = 0.5;
/// Minimum fraction of the object area inside the subject.
pub const WEARING_MIN_COVER: f64 = 0.9;
/// Center separation margin as a fraction of the canvas extent.
pub const ORDER_MARGIN: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometricPredicate {
    On,
    Wearing,
    LeftOf,
    Above,
}

impl GeometricPredicate {
    pub const ALL: [GeometricPredicate; 4] = [Self::On, Self::Wearing, Self::LeftOf, Self::Above];

    pub fn name(self) -> &'static str {
        match self {
            Self::On => "on",
            Self::Wearing => "wearing",
            Self::LeftOf => "left_of",
            Self::Above => "above",
        }
    }
}

impl fmt::Display for GeometricPredicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GeometricPredicate {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("no geometric definition for predicate {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredicateGeometry {
    pub canvas_width: f64,
    pub canvas_height: f64,
}

impl PredicateGeometry {
    pub fn holds(&self, pred: GeometricPredicate, subject: &BoundingBox, object: &BoundingBox) -> bool {
        match pred {
            GeometricPredicate::On => {
                (subject.bottom() - object.y).abs() <= ON_VERTICAL_TOLERANCE * object.h
                    && subject.horizontal_overlap(object) >= ON_MIN_OVERLAP * subject.w
            }
            GeometricPredicate::Wearing => {
                subject.intersection_area(object) >= WEARING_MIN_COVER * object.area()
            }
            GeometricPredicate::LeftOf => {
                subject.center().0 + ORDER_MARGIN * self.canvas_width < object.center().0
            }
            GeometricPredicate::Above => {
                subject.center().1 + ORDER_MARGIN * self.canvas_height < object.center().1
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(x, y, w, h).unwrap()
    }

    const G: PredicateGeometry = PredicateGeometry {
        canvas_width: 100.0,
        canvas_height: 100.0,
    };

    #[test]
    fn on_requires_contact_and_overlap() {
        let horse = b(10.0, 50.0, 40.0, 30.0);
        assert!(G.holds(GeometricPredicate::On, &b(20.0, 20.0, 10.0, 31.0), &horse));
        // floating too high
        assert!(!G.holds(GeometricPredicate::On, &b(20.0, 10.0, 10.0, 30.0), &horse));
        // mostly off the side
        assert!(!G.holds(GeometricPredicate::On, &b(45.0, 20.0, 20.0, 30.0), &horse));
    }

    #[test]
    fn wearing_is_containment() {
        let person = b(0.0, 0.0, 30.0, 80.0);
        assert!(G.holds(GeometricPredicate::Wearing, &person, &b(5.0, 5.0, 10.0, 10.0)));
        assert!(!G.holds(GeometricPredicate::Wearing, &person, &b(25.0, 5.0, 10.0, 10.0)));
    }

    #[test]
    fn ordering_uses_margin() {
        assert!(G.holds(GeometricPredicate::LeftOf, &b(0.0, 0.0, 10.0, 10.0), &b(20.0, 0.0, 10.0, 10.0)));
        assert!(!G.holds(GeometricPredicate::LeftOf, &b(0.0, 0.0, 10.0, 10.0), &b(4.0, 0.0, 10.0, 10.0)));
        assert!(G.holds(GeometricPredicate::Above, &b(0.0, 0.0, 10.0, 10.0), &b(0.0, 20.0, 10.0, 10.0)));
        assert_eq!("left_of".parse::<GeometricPredicate>(), Ok(GeometricPredicate::LeftOf));
        assert!("next_to".parse::<GeometricPredicate>().is_err());
    }
}
