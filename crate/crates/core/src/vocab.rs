//! The 80-class object vocabulary and the English forms captions need.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CATEGORIES: [&str; 80] = [
    "person",
    "bicycle",
    "car",
    "motorcycle",
    "airplane",
    "bus",
    "train",
    "truck",
    "boat",
    "traffic light",
    "fire hydrant",
    "stop sign",
    "parking meter",
    "bench",
    "bird",
    "cat",
    "dog",
    "horse",
    "sheep",
    "cow",
    "elephant",
    "bear",
    "zebra",
    "giraffe",
    "backpack",
    "umbrella",
    "handbag",
    "tie",
    "suitcase",
    "frisbee",
    "skis",
    "snowboard",
    "sports ball",
    "kite",
    "baseball bat",
    "baseball glove",
    "skateboard",
    "surfboard",
    "tennis racket",
    "bottle",
    "wine glass",
    "cup",
    "fork",
    "knife",
    "spoon",
    "bowl",
    "banana",
    "apple",
    "sandwich",
    "orange",
    "broccoli",
    "carrot",
    "hot dog",
    "pizza",
    "donut",
    "cake",
    "chair",
    "couch",
    "potted plant",
    "bed",
    "dining table",
    "toilet",
    "tv",
    "laptop",
    "mouse",
    "remote",
    "keyboard",
    "cell phone",
    "microwave",
    "oven",
    "toaster",
    "sink",
    "refrigerator",
    "book",
    "clock",
    "vase",
    "scissors",
    "teddy bear",
    "hair drier",
    "toothbrush",
];

/// A validated member of [`CATEGORIES`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Category(String);

impl Category {
    pub fn new(name: &str) -> Result<Self> {
        if CATEGORIES.contains(&name) {
            Ok(Self(name.to_string()))
        } else {
            Err(Error::UnknownCategory(name.to_string()))
        }
    }

    pub fn from_index(idx: usize) -> Self {
        Self(CATEGORIES[idx].to_string())
    }

    pub fn index(&self) -> usize {
        CATEGORIES
            .iter()
            .position(|c| *c == self.0)
            .expect("validated on construction")
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn plural(&self) -> String {
        plural_of(&self.0)
    }

    /// "a dog", "an elephant".
    pub fn with_article(&self) -> String {
        let article = match self.0.as_bytes()[0] {
            b'a' | b'e' | b'i' | b'o' | b'u' => "an",
            _ => "a",
        };
        format!("{article} {}", self.0)
    }

    pub fn all() -> impl Iterator<Item = Category> {
        (0..CATEGORIES.len()).map(Category::from_index)
    }
}

impl TryFrom<String> for Category {
    type Error = Error;

    fn try_from(value: String) -> Result<Self> {
        Category::new(&value)
    }
}

impl From<Category> for String {
    fn from(c: Category) -> String {
        c.0
    }
}

impl std::fmt::Display for Category {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn plural_of(name: &str) -> String {
    match name {
        "person" => return "people".into(),
        "sheep" | "broccoli" | "skis" | "scissors" => return name.into(),
        "knife" => return "knives".into(),
        "mouse" => return "mice".into(),
        "tv" => return "tvs".into(),
        _ => {}
    }
    if name.ends_with('s') || name.ends_with('x') || name.ends_with("ch") || name.ends_with("sh") {
        format!("{name}es")
    } else {
        format!("{name}s")
    }
}
