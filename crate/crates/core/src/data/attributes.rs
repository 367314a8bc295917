//! The four outfit attribute slots and the caption grammar over them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Attribute slot names, in label order.
pub const SLOTS: [&str; 4] = ["gender", "sleeve", "color", "category"];

pub const GENDERS: [&str; 2] = ["lady", "man"];
pub const SLEEVES: [&str; 3] = ["sleeveless", "short-sleeved", "long-sleeved"];
/// Hues spaced 45° apart, starting at red.
pub const COLORS: [&str; 8] = ["red", "orange", "yellow", "green", "cyan", "blue", "purple", "pink"];
pub const CATEGORIES: [&str; 4] = ["blouse", "t-shirt", "dress", "romper"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Gender {
    Lady,
    Man,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sleeve {
    Sleeveless,
    Short,
    Long,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Color {
    Red,
    Orange,
    Yellow,
    Green,
    Cyan,
    Blue,
    Purple,
    Pink,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Category {
    Blouse,
    TShirt,
    Dress,
    Romper,
}

macro_rules! indexed_enum {
    ($ty:ident, $names:ident, [$($v:ident),+]) => {
        impl $ty {
            pub const ALL: &'static [$ty] = &[$($ty::$v),+];

            pub fn index(self) -> usize {
                self as usize
            }

            pub fn from_index(i: usize) -> Result<Self> {
                Self::ALL.get(i).copied().ok_or_else(|| {
                    Error::validation(format!("{} index {i} out of range", stringify!($ty)))
                })
            }

            pub fn name(self) -> &'static str {
                $names[self as usize]
            }

            pub fn parse(s: &str) -> Result<Self> {
                $names
                    .iter()
                    .position(|n| *n == s)
                    .map(|i| Self::ALL[i])
                    .ok_or_else(|| Error::validation(format!(
                        "unknown {} value {s:?}", stringify!($ty).to_lowercase()
                    )))
            }
        }
    };
}

indexed_enum!(Gender, GENDERS, [Lady, Man]);
indexed_enum!(Sleeve, SLEEVES, [Sleeveless, Short, Long]);
indexed_enum!(Color, COLORS, [Red, Orange, Yellow, Green, Cyan, Blue, Purple, Pink]);
indexed_enum!(Category, CATEGORIES, [Blouse, TShirt, Dress, Romper]);

impl Color {
    /// Hue in degrees.
    pub fn hue(self) -> f32 {
        45.0 * self.index() as f32
    }
}

/// Complete attribute assignment of a synthetic outfit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Attributes {
    pub gender: Gender,
    pub sleeve: Sleeve,
    pub color: Color,
    pub category: Category,
}

impl Attributes {
    pub fn labels(&self) -> Labels {
        Labels([
            self.gender.index(),
            self.sleeve.index(),
            self.color.index(),
            self.category.index(),
        ])
    }

    pub fn from_labels(l: &Labels) -> Result<Self> {
        Ok(Self {
            gender: Gender::from_index(l.0[0])?,
            sleeve: Sleeve::from_index(l.0[1])?,
            color: Color::from_index(l.0[2])?,
            category: Category::from_index(l.0[3])?,
        })
    }

    /// Build from value names; unknown names are validation errors.
    pub fn from_names(gender: &str, sleeve: &str, color: &str, category: &str) -> Result<Self> {
        Ok(Self {
            gender: Gender::parse(gender)?,
            sleeve: Sleeve::parse(sleeve)?,
            color: Color::parse(color)?,
            category: Category::parse(category)?,
        })
    }

    /// Every combination of attribute values.
    pub fn all() -> Vec<Self> {
        let mut out = Vec::new();
        for &gender in Gender::ALL {
            for &sleeve in Sleeve::ALL {
                for &color in Color::ALL {
                    for &category in Category::ALL {
                        out.push(Self { gender, sleeve, color, category });
                    }
                }
            }
        }
        out
    }
}

/// Label indices for the four slots, interpreted through an [`AttributeSchema`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Labels(pub [usize; 4]);

/// Value vocabulary of each slot.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeSchema {
    pub values: [Vec<String>; 4],
}

impl AttributeSchema {
    /// The fixed vocabulary of the synthetic grammar.
    pub fn synthetic() -> Self {
        let own = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        Self {
            values: [own(&GENDERS), own(&SLEEVES), own(&COLORS), own(&CATEGORIES)],
        }
    }

    pub fn cardinalities(&self) -> [usize; 4] {
        [
            self.values[0].len(),
            self.values[1].len(),
            self.values[2].len(),
            self.values[3].len(),
        ]
    }

    pub fn name(&self, slot: usize, label: usize) -> Option<&str> {
        self.values.get(slot)?.get(label).map(String::as_str)
    }

    pub fn label(&self, slot: usize, name: &str) -> Result<usize> {
        self.values[slot]
            .iter()
            .position(|v| v == name)
            .ok_or_else(|| Error::validation(format!("unknown {} value {name:?}", SLOTS[slot])))
    }

    pub fn check(&self, l: &Labels) -> Result<()> {
        for (slot, &v) in l.0.iter().enumerate() {
            if v >= self.values[slot].len() {
                return Err(Error::validation(format!(
                    "{} label {v} outside {} values",
                    SLOTS[slot],
                    self.values[slot].len()
                )));
            }
        }
        Ok(())
    }
}

/// `"the {gender} is wearing a {color} {sleeve} {category}"`.
pub fn caption_of(a: &Attributes) -> String {
    format!(
        "the {} is wearing a {} {} {}",
        a.gender.name(),
        a.color.name(),
        a.sleeve.name(),
        a.category.name()
    )
}

/// Caption for labels under the synthetic schema; out-of-range labels are
/// validation errors.
pub fn caption_of_labels(l: &Labels) -> Result<String> {
    Attributes::from_labels(l).map(|a| caption_of(&a))
}

/// Inverse of [`caption_of`].
pub fn parse_caption(caption: &str) -> Result<Attributes> {
    let words: Vec<&str> = caption.split_whitespace().collect();
    match words.as_slice() {
        ["the", gender, "is", "wearing", "a", color, sleeve, category] => {
            Attributes::from_names(gender, sleeve, color, category)
        }
        _ => Err(Error::validation(format!(
            "caption {caption:?} does not follow the outfit grammar"
        ))),
    }
}
