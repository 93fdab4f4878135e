//! Event-type label space. Domain types come first, then the reserved
//! sequence labels None/EOS/BOS, so a schema with T types has T+3 labels.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use crate::error::{Error, Result};

pub const NONE_LABEL: &str = "None";
pub const EOS_LABEL: &str = "EOS";
pub const BOS_LABEL: &str = "BOS";

/// Default 21-type schema of the multi-domain food-incident benchmark.
const DEFAULT_TYPES: [&str; 21] = [
    "Additives",
    "Contraband",
    "Harmful-residues",
    "Poor-environment",
    "Recycled-material",
    "Inconsistent-product",
    "Fake",
    "Low-quality",
    "Non-compliant",
    "Poor-packaging",
    "Unreliable-product",
    "Damaged",
    "Steal",
    "Spoiled",
    "Undercooked",
    "Cold",
    "Expired",
    "Thaw",
    "Impurities",
    "Uncomfortable",
    "Abnormalities",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventSchema {
    types: Vec<String>,
}

impl Default for EventSchema {
    fn default() -> Self {
        EventSchema {
            types: DEFAULT_TYPES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl EventSchema {
    pub fn new(types: Vec<String>) -> Result<Self> {
        if types.is_empty() {
            return Err(Error::invalid("schema needs at least one event type"));
        }
        let mut seen = BTreeSet::new();
        for t in &types {
            if t == NONE_LABEL || t == EOS_LABEL || t == BOS_LABEL {
                return Err(Error::invalid(format!(
                    "event type {t:?} collides with a reserved label"
                )));
            }
            if !seen.insert(t.clone()) {
                return Err(Error::invalid(format!("duplicate event type {t:?}")));
            }
        }
        Ok(EventSchema { types })
    }

    pub fn types(&self) -> &[String] {
        &self.types
    }

    pub fn num_types(&self) -> usize {
        self.types.len()
    }

    /// Total label count including None, EOS, BOS.
    pub fn num_labels(&self) -> usize {
        self.types.len() + 3
    }

    pub fn none_id(&self) -> usize {
        self.types.len()
    }

    pub fn eos_id(&self) -> usize {
        self.types.len() + 1
    }

    pub fn bos_id(&self) -> usize {
        self.types.len() + 2
    }

    pub fn type_index(&self, name: &str) -> Option<usize> {
        self.types.iter().position(|t| t == name)
    }

    pub fn is_domain_type(&self, label: usize) -> bool {
        label < self.types.len()
    }

    pub fn label_name(&self, label: usize) -> &str {
        if label < self.types.len() {
            &self.types[label]
        } else if label == self.none_id() {
            NONE_LABEL
        } else if label == self.eos_id() {
            EOS_LABEL
        } else if label == self.bos_id() {
            BOS_LABEL
        } else {
            panic!("label id {label} out of range for schema of {} types", self.types.len())
        }
    }
}
