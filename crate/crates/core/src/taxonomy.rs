use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default infrastructure categories, in channel order.
pub const DEFAULT_CATEGORIES: [&str; 7] = [
    "barn",
    "manure_pond",
    "silo",
    "feedlot",
    "silage_storage",
    "dry_lot",
    "equipment_other",
];

/// Output classes, in logit order.
pub const CLASS_NAMES: [&str; 5] = ["swine", "poultry", "dairy", "beef", "negative"];
pub const NUM_CLASSES: usize = CLASS_NAMES.len();
/// Index of the non-livestock class; every lower index is a livestock type.
pub const NEGATIVE_CLASS: usize = 4;

pub fn class_index(name: &str) -> Option<usize> {
    CLASS_NAMES.iter().position(|c| *c == name)
}

/// Which geometric acceptance rule a category is judged by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RuleKind {
    Barn,
    Pond,
    Silo,
    Feedlot,
    Silage,
    Default,
}

impl RuleKind {
    pub fn for_name(name: &str) -> Self {
        match name {
            "barn" => RuleKind::Barn,
            "manure_pond" | "pond" | "lagoon" => RuleKind::Pond,
            "silo" => RuleKind::Silo,
            "feedlot" => RuleKind::Feedlot,
            "silage_storage" | "silage" | "storage" => RuleKind::Silage,
            _ => RuleKind::Default,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InfraCategory {
    pub id: usize,
    pub name: String,
}

/// Ordered category list; ids are dense `0..K`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Taxonomy {
    names: Vec<String>,
}

impl Default for Taxonomy {
    fn default() -> Self {
        Self {
            names: DEFAULT_CATEGORIES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl TryFrom<Vec<String>> for Taxonomy {
    type Error = Error;

    fn try_from(names: Vec<String>) -> Result<Self> {
        Self::new(names)
    }
}

impl From<Taxonomy> for Vec<String> {
    fn from(t: Taxonomy) -> Self {
        t.names
    }
}

impl Taxonomy {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::invalid("taxonomy must name at least one category"));
        }
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(Error::invalid(format!("duplicate category name `{n}`")));
            }
        }
        let t = Self { names };
        if t.first_with_rule(RuleKind::Barn).is_none() || t.first_with_rule(RuleKind::Pond).is_none()
        {
            return Err(Error::invalid(
                "taxonomy must contain a barn and a pond category",
            ));
        }
        Ok(t)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn categories(&self) -> impl Iterator<Item = InfraCategory> + '_ {
        self.names.iter().enumerate().map(|(id, name)| InfraCategory {
            id,
            name: name.clone(),
        })
    }

    pub fn rule(&self, id: usize) -> Result<RuleKind> {
        self.name(id)
            .map(RuleKind::for_name)
            .ok_or(Error::UnknownCategory {
                id,
                count: self.len(),
            })
    }

    pub fn check(&self, id: usize) -> Result<()> {
        self.rule(id).map(|_| ())
    }

    fn first_with_rule(&self, kind: RuleKind) -> Option<usize> {
        self.names.iter().position(|n| RuleKind::for_name(n) == kind)
    }

    pub fn barn(&self) -> usize {
        self.first_with_rule(RuleKind::Barn).expect("validated at construction")
    }

    pub fn pond(&self) -> usize {
        self.first_with_rule(RuleKind::Pond).expect("validated at construction")
    }
}
