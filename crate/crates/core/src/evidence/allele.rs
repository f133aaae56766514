use std::cmp::Ordering;
use std::fmt;

/// Ordering key of an allele label.
///
/// STR labels such as `31.2` are split into whole repeat units and the
/// partial-repeat suffix, so microvariants sort between their neighbours
/// (`31 < 31.2 < 32`). Labels that are not repeat numbers (amelogenin `X`,
/// `Y`) sort after every numeric label, lexicographically among themselves.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum AlleleKey {
    Repeat { units: u32, partial: u32 },
    Symbol(String),
}

impl Ord for AlleleKey {
    fn cmp(&self, other: &Self) -> Ordering {
        use AlleleKey::*;
        match (self, other) {
            (Repeat { units: u1, partial: p1 }, Repeat { units: u2, partial: p2 }) => {
                (u1, p1).cmp(&(u2, p2))
            }
            (Repeat { .. }, Symbol(_)) => Ordering::Less,
            (Symbol(_), Repeat { .. }) => Ordering::Greater,
            (Symbol(a), Symbol(b)) => a.cmp(b),
        }
    }
}

impl PartialOrd for AlleleKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// An allele label as written in the input files, with its ordering key.
#[derive(Debug, Clone)]
pub struct Allele {
    label: String,
    key: AlleleKey,
}

impl Allele {
    pub fn new(label: &str) -> Self {
        let label = label.trim().to_string();
        let key = parse_key(&label);
        Allele { label, key }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn key(&self) -> &AlleleKey {
        &self.key
    }

    /// True when `self` is exactly one repeat unit shorter than `other`,
    /// i.e. `self` is where `other` stutters to.
    pub fn is_one_unit_below(&self, other: &Allele) -> bool {
        match (&self.key, &other.key) {
            (
                AlleleKey::Repeat { units: u1, partial: p1 },
                AlleleKey::Repeat { units: u2, partial: p2 },
            ) => p1 == p2 && u1 + 1 == *u2,
            _ => false,
        }
    }
}

fn parse_key(label: &str) -> AlleleKey {
    let (whole, frac) = match label.split_once('.') {
        Some((w, f)) => (w, Some(f)),
        None => (label, None),
    };
    let units = whole.parse::<u32>().ok();
    let partial = match frac {
        None => Some(0),
        Some(f) if !f.is_empty() && f.bytes().all(|b| b.is_ascii_digit()) => f.parse::<u32>().ok(),
        Some(_) => None,
    };
    match (units, partial) {
        (Some(units), Some(partial)) if !whole.is_empty() => AlleleKey::Repeat { units, partial },
        _ => AlleleKey::Symbol(label.to_string()),
    }
}

impl PartialEq for Allele {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key
    }
}

impl Eq for Allele {}

impl std::hash::Hash for Allele {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.key.hash(state)
    }
}

impl Ord for Allele {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key.cmp(&other.key)
    }
}

impl PartialOrd for Allele {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Allele {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label)
    }
}

impl From<&str> for Allele {
    fn from(s: &str) -> Self {
        Allele::new(s)
    }
}
