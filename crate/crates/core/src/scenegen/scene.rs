use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

macro_rules! word_enum {
    ($name:ident { $($var:ident => $word:literal),+ $(,)? }) => {
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $word)] $var),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$var),+];

            pub fn word(self) -> &'static str {
                match self {
                    $($name::$var => $word),+
                }
            }

            pub fn index(self) -> usize {
                Self::ALL.iter().position(|&x| x == self).unwrap()
            }

            pub fn from_word(w: &str) -> Option<Self> {
                Self::ALL.iter().copied().find(|x| x.word() == w)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.word())
            }
        }
    };
}

word_enum!(Shape { Circle => "circle", Square => "square", Triangle => "triangle", Star => "star" });
word_enum!(Color { Red => "red", Blue => "blue", Green => "green", Yellow => "yellow" });
word_enum!(Size { Small => "small", Large => "large" });
word_enum!(Relation {
    Above => "above",
    Below => "below",
    LeftOf => "left-of",
    RightOf => "right-of",
    None => "none",
});

impl Relation {
    /// Words used in captions; empty for `None`.
    pub fn phrase(self) -> &'static [&'static str] {
        match self {
            Relation::Above => &["above"],
            Relation::Below => &["below"],
            Relation::LeftOf => &["to", "the", "left", "of"],
            Relation::RightOf => &["to", "the", "right", "of"],
            Relation::None => &[],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Object {
    pub shape: Shape,
    pub color: Color,
    pub size: Size,
}

impl Object {
    fn random(rng: &mut impl Rng) -> Self {
        Object {
            shape: Shape::ALL[rng.random_range(0..Shape::ALL.len())],
            color: Color::ALL[rng.random_range(0..Color::ALL.len())],
            size: Size::ALL[rng.random_range(0..Size::ALL.len())],
        }
    }
}

/// One to three objects; the relation links the first two.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    pub objects: Vec<Object>,
    pub relation: Relation,
}

pub const MAX_OBJECTS: usize = 3;

impl Scene {
    pub fn new(objects: Vec<Object>, relation: Relation) -> Result<Self> {
        let scene = Scene { objects, relation };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.objects.len();
        if !(1..=MAX_OBJECTS).contains(&n) {
            return Err(Error::Config(format!("scene with {n} objects")));
        }
        if (self.relation == Relation::None) != (n == 1) {
            return Err(Error::Config(format!("relation {} with {n} objects", self.relation)));
        }
        Ok(())
    }

    pub fn random(rng: &mut impl Rng) -> Self {
        let n = rng.random_range(1..=MAX_OBJECTS);
        let objects = (0..n).map(|_| Object::random(rng)).collect();
        let relation = if n == 1 { Relation::None } else { Relation::ALL[rng.random_range(0..4)] };
        Scene { objects, relation }
    }

    pub fn words(&self) -> Vec<&'static str> {
        let mut w = Vec::with_capacity(17);
        for (i, o) in self.objects.iter().enumerate() {
            match i {
                0 => {}
                1 => w.extend_from_slice(self.relation.phrase()),
                _ => w.push("and"),
            }
            w.extend_from_slice(&["a", o.size.word(), o.color.word(), o.shape.word()]);
        }
        w
    }

    pub fn caption(&self) -> String {
        self.words().join(" ")
    }

    /// Caption length in tokens, counting the closing `[SEP]`.
    pub fn token_len(&self) -> usize {
        self.words().len() + 1
    }

    /// Inverse of [`Scene::caption`].
    pub fn parse(caption: &str) -> Result<Self> {
        let bad = || Error::Unparseable(caption.to_string());
        let words: Vec<&str> = caption.split_whitespace().collect();
        let mut rest = &words[..];
        let mut objects = Vec::new();
        let mut relation = Relation::None;
        loop {
            let [a, size, color, shape, tail @ ..] = rest else { return Err(bad()) };
            if *a != "a" {
                return Err(bad());
            }
            objects.push(Object {
                shape: Shape::from_word(shape).ok_or_else(bad)?,
                color: Color::from_word(color).ok_or_else(bad)?,
                size: Size::from_word(size).ok_or_else(bad)?,
            });
            rest = tail;
            if rest.is_empty() {
                break;
            }
            if objects.len() == 1 {
                relation = [Relation::Above, Relation::Below, Relation::LeftOf, Relation::RightOf]
                    .into_iter()
                    .find(|r| rest.starts_with(r.phrase()))
                    .ok_or_else(bad)?;
                rest = &rest[relation.phrase().len()..];
            } else if objects.len() == 2 && rest[0] == "and" {
                rest = &rest[1..];
            } else {
                return Err(bad());
            }
        }
        Scene::new(objects, relation).map_err(|_| bad())
    }
}

impl fmt::Display for Scene {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.caption())
    }
}
