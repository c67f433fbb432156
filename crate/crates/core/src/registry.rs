//! Name-keyed registries of interchangeable strategies.
//!
//! Each family of alternatives (stimulus designs, alignment scorers,
//! distance metrics, permutation schemes, pipeline stages) is a trait with
//! [`Named`] as a supertrait. Built-in implementations are registered once
//! and selected at runtime by the names that appear in the manifest and on
//! the command line.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

pub trait Named {
    fn name(&self) -> &'static str;
}

pub struct Registry<T: ?Sized> {
    kind: &'static str,
    entries: Vec<Arc<T>>,
}

impl<T: ?Sized + Named> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            entries: Vec::new(),
        }
    }

    /// Adds `item`, replacing any entry with the same name.
    pub fn register(&mut self, item: Arc<T>) -> &mut Self {
        let name = item.name();
        match self.entries.iter_mut().find(|e| e.name() == name) {
            Some(slot) => {
                log::warn!("{} registry: replacing {name:?}", self.kind);
                *slot = item;
            }
            None => self.entries.push(item),
        }
        self
    }

    pub fn with(mut self, item: Arc<T>) -> Self {
        self.register(item);
        self
    }

    pub fn get(&self, name: &str) -> Result<Arc<T>> {
        self.entries
            .iter()
            .find(|e| e.name() == name)
            .cloned()
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown {} {name:?}; registered: {}",
                    self.kind,
                    self.names().join(", ")
                ))
            })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.iter().any(|e| e.name() == name)
    }

    /// Names in registration order.
    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|e| e.name()).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Arc<T>> {
        self.entries.iter()
    }
}

impl<T: ?Sized + Named> fmt::Debug for Registry<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Registry")
            .field("kind", &self.kind)
            .field("entries", &self.names())
            .finish()
    }
}
