//! The shipped 40-class indoor vocabulary and room types.
//!
//! Index 0 is always `void`: empty space, and the class that receives the
//! residual probability mass of top-k storage.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const VOID: u16 = 0;

#[derive(Debug, Error, PartialEq)]
#[error("class index {index} outside vocabulary of {len} classes")]
pub struct VocabError {
    pub index: u16,
    pub len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// Stuff surfaces (walls, floors, ceilings); never placed as objects.
    Structure,
    Floor,
    Wall,
    Ceiling,
}

#[derive(Debug, Clone, Copy)]
pub struct ClassSpec {
    pub name: &'static str,
    pub placement: Placement,
    /// Size ranges in meters: length along the supporting wall or x,
    /// depth, height.
    pub size: [(f64, f64); 3],
    pub verb: &'static str,
}

const fn thing(
    name: &'static str,
    placement: Placement,
    size: [(f64, f64); 3],
    verb: &'static str,
) -> ClassSpec {
    ClassSpec { name, placement, size, verb }
}

const fn stuff(name: &'static str) -> ClassSpec {
    ClassSpec { name, placement: Placement::Structure, size: [(0.0, 0.0); 3], verb: "" }
}

use Placement::{Ceiling, Floor, Wall};

pub static CLASSES: [ClassSpec; 40] = [
    stuff("void"),
    stuff("wall"),
    stuff("floor"),
    stuff("ceiling"),
    thing("bed", Floor, [(1.4, 1.8), (1.9, 2.1), (0.5, 0.7)], "make"),
    thing("ottoman", Floor, [(0.5, 0.7), (0.5, 0.7), (0.4, 0.5)], "move"),
    thing("nightstand", Floor, [(0.4, 0.6), (0.4, 0.5), (0.5, 0.7)], "dust"),
    thing("wardrobe", Floor, [(1.0, 1.6), (0.5, 0.6), (1.8, 2.1)], "open"),
    thing("dresser", Floor, [(0.9, 1.4), (0.45, 0.55), (0.8, 1.1)], "dust"),
    thing("mirror", Wall, [(0.5, 1.0), (0.15, 0.25), (0.7, 1.2)], "clean"),
    thing("window", Wall, [(0.8, 1.4), (0.15, 0.25), (0.8, 1.2)], "open"),
    thing("picture", Wall, [(0.5, 1.0), (0.15, 0.25), (0.4, 0.8)], "straighten"),
    thing("lamp", Floor, [(0.4, 0.5), (0.4, 0.5), (1.2, 1.6)], "turn on"),
    thing("chandelier", Ceiling, [(0.5, 0.8), (0.5, 0.8), (0.4, 0.6)], "clean"),
    thing("curtain", Wall, [(0.8, 1.4), (0.15, 0.25), (1.6, 2.0)], "close"),
    thing("sofa", Floor, [(1.8, 2.4), (0.8, 1.0), (0.7, 0.9)], "vacuum"),
    thing("armchair", Floor, [(0.7, 0.9), (0.7, 0.9), (0.8, 1.0)], "move"),
    thing("coffee table", Floor, [(0.8, 1.2), (0.5, 0.7), (0.4, 0.5)], "wipe"),
    thing("television", Wall, [(0.9, 1.4), (0.15, 0.25), (0.5, 0.8)], "turn off"),
    thing("bookshelf", Floor, [(0.8, 1.2), (0.3, 0.4), (1.6, 2.0)], "dust"),
    thing("plant", Floor, [(0.4, 0.6), (0.4, 0.6), (0.8, 1.4)], "water"),
    thing("fireplace", Floor, [(1.2, 1.6), (0.4, 0.5), (1.0, 1.2)], "clean"),
    thing("table", Floor, [(1.2, 1.8), (0.8, 1.0), (0.72, 0.78)], "wipe"),
    thing("chair", Floor, [(0.45, 0.55), (0.45, 0.55), (0.85, 1.0)], "move"),
    thing("desk", Floor, [(1.2, 1.6), (0.6, 0.8), (0.72, 0.78)], "tidy"),
    thing("swivel chair", Floor, [(0.55, 0.65), (0.55, 0.65), (0.9, 1.1)], "move"),
    thing("cabinet", Floor, [(0.6, 1.2), (0.4, 0.6), (0.8, 1.8)], "open"),
    thing("refrigerator", Floor, [(0.7, 0.9), (0.65, 0.75), (1.7, 1.9)], "open"),
    thing("stove", Floor, [(0.6, 0.8), (0.6, 0.65), (0.85, 0.95)], "turn off"),
    thing("sink", Floor, [(0.5, 0.8), (0.45, 0.6), (0.8, 0.9)], "clean"),
    thing("counter", Floor, [(1.2, 2.0), (0.6, 0.65), (0.88, 0.94)], "wipe"),
    thing("trash can", Floor, [(0.4, 0.5), (0.4, 0.5), (0.6, 0.8)], "empty"),
    thing("dishwasher", Floor, [(0.6, 0.65), (0.6, 0.65), (0.82, 0.88)], "empty"),
    thing("toilet", Floor, [(0.4, 0.5), (0.6, 0.75), (0.7, 0.8)], "clean"),
    thing("bathtub", Floor, [(1.5, 1.8), (0.7, 0.8), (0.5, 0.6)], "clean"),
    thing("shower", Floor, [(0.8, 1.0), (0.8, 1.0), (1.9, 2.1)], "clean"),
    thing("towel", Wall, [(0.4, 0.7), (0.15, 0.25), (0.6, 0.9)], "fold"),
    thing("washing machine", Floor, [(0.6, 0.65), (0.6, 0.65), (0.82, 0.9)], "open"),
    thing("clock", Wall, [(0.35, 0.5), (0.15, 0.25), (0.35, 0.5)], "check"),
    thing("stool", Floor, [(0.4, 0.5), (0.4, 0.5), (0.6, 0.75)], "move"),
];

/// Classes that are surfaces rather than countable objects.
pub fn default_stuff_classes() -> Vec<u16> {
    vec![0, 1, 2, 3]
}

pub fn class_names() -> Vec<String> {
    CLASSES.iter().map(|c| c.name.to_string()).collect()
}

pub fn class_index(name: &str) -> Option<u16> {
    CLASSES.iter().position(|c| c.name == name).map(|i| i as u16)
}

pub fn class_spec(index: u16) -> Result<&'static ClassSpec, VocabError> {
    CLASSES.get(index as usize).ok_or(VocabError { index, len: CLASSES.len() })
}

pub const WALL: u16 = 1;
pub const FLOOR: u16 = 2;
pub const CEILING: u16 = 3;

#[derive(Debug, Clone, Copy)]
pub struct RoomType {
    pub name: &'static str,
    pub classes: &'static [&'static str],
}

pub static ROOM_TYPES: [RoomType; 7] = [
    RoomType {
        name: "bedroom",
        classes: &[
            "bed", "nightstand", "wardrobe", "dresser", "mirror", "window", "picture", "lamp",
            "chandelier", "curtain", "armchair", "plant", "clock", "ottoman",
        ],
    },
    RoomType {
        name: "living room",
        classes: &[
            "sofa", "armchair", "coffee table", "television", "bookshelf", "plant", "fireplace",
            "window", "picture", "lamp", "chandelier", "curtain", "clock", "ottoman",
        ],
    },
    RoomType {
        name: "kitchen",
        classes: &[
            "refrigerator", "stove", "sink", "counter", "cabinet", "dishwasher", "table", "chair",
            "window", "clock", "trash can", "stool",
        ],
    },
    RoomType {
        name: "bathroom",
        classes: &[
            "toilet", "bathtub", "shower", "sink", "mirror", "towel", "cabinet", "window",
            "trash can", "washing machine",
        ],
    },
    RoomType {
        name: "office",
        classes: &[
            "desk", "swivel chair", "bookshelf", "cabinet", "lamp", "plant", "window", "picture",
            "clock", "trash can",
        ],
    },
    RoomType {
        name: "dining room",
        classes: &["table", "chair", "cabinet", "chandelier", "window", "picture", "plant", "stool"],
    },
    RoomType {
        name: "hallway",
        classes: &["picture", "plant", "cabinet", "mirror", "clock", "window", "bookshelf"],
    },
];
