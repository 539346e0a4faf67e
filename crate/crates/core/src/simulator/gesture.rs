use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// The seven output classes, in canonical index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GestureClass {
    NoHand,
    HandUnknown,
    SwipeLeft,
    SwipeRight,
    Rest,
    DoublePinch,
    MovingPinch,
}

pub const NUM_CLASSES: usize = 7;
/// Classes predicted by the second stage (everything except `NoHand`).
pub const NUM_GESTURE_CLASSES: usize = 6;

impl GestureClass {
    pub const ALL: [GestureClass; NUM_CLASSES] = [
        GestureClass::NoHand,
        GestureClass::HandUnknown,
        GestureClass::SwipeLeft,
        GestureClass::SwipeRight,
        GestureClass::Rest,
        GestureClass::DoublePinch,
        GestureClass::MovingPinch,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn code(self) -> &'static str {
        match self {
            GestureClass::NoHand => "nh",
            GestureClass::HandUnknown => "hu",
            GestureClass::SwipeLeft => "sl",
            GestureClass::SwipeRight => "sr",
            GestureClass::Rest => "r",
            GestureClass::DoublePinch => "dp",
            GestureClass::MovingPinch => "mp",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GestureClass::NoHand => "no_hand",
            GestureClass::HandUnknown => "hand_unknown",
            GestureClass::SwipeLeft => "swipe_left",
            GestureClass::SwipeRight => "swipe_right",
            GestureClass::Rest => "rest",
            GestureClass::DoublePinch => "double_pinch",
            GestureClass::MovingPinch => "moving_pinch",
        }
    }

    pub fn has_hand(self) -> bool {
        self != GestureClass::NoHand
    }

    /// Whether the streaming pipeline may report this class as a detection.
    pub fn is_emittable(self) -> bool {
        !matches!(self, GestureClass::NoHand | GestureClass::HandUnknown)
    }
}

impl fmt::Display for GestureClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown gesture class {0:?}")]
pub struct UnknownClass(pub String);

impl FromStr for GestureClass {
    type Err = UnknownClass;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        GestureClass::ALL
            .into_iter()
            .find(|c| c.code() == s || c.name() == s)
            .ok_or_else(|| UnknownClass(s.to_string()))
    }
}
