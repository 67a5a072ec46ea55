//! Name-keyed registries of interchangeable strategies.
//!
//! Each family (noisers, spelling-candidate rankers, edit selectors) is a
//! trait; a registry maps a stable name to a factory that builds a boxed
//! trait object from the family's context type.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};

pub type Factory<T, C> = fn(&C) -> Result<Box<T>>;

pub struct Registry<T: ?Sized, C> {
    family: &'static str,
    factories: BTreeMap<&'static str, Factory<T, C>>,
}

impl<T: ?Sized, C> Registry<T, C> {
    pub fn new(family: &'static str) -> Self {
        Registry {
            family,
            factories: BTreeMap::new(),
        }
    }

    /// Registers `factory` under `name`, replacing any previous entry.
    pub fn register(&mut self, name: &'static str, factory: Factory<T, C>) -> &mut Self {
        self.factories.insert(name, factory);
        self
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.factories.keys().copied()
    }

    pub fn build(&self, name: &str, ctx: &C) -> Result<Box<T>> {
        match self.factories.get(name) {
            Some(f) => f(ctx),
            None => Err(Error::validation(format!(
                "unknown {} {name:?} (available: {})",
                self.family,
                self.names().collect::<Vec<_>>().join(", ")
            ))),
        }
    }
}

impl<T: ?Sized, C> fmt::Debug for Registry<T, C> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Registry")
            .field("family", &self.family)
            .field("names", &self.factories.keys().collect::<Vec<_>>())
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    trait Greeter {
        fn greet(&self) -> String;
    }

    struct Plain(String);

    impl Greeter for Plain {
        fn greet(&self) -> String {
            format!("hello {}", self.0)
        }
    }

    #[test]
    fn build_by_name() {
        let mut reg: Registry<dyn Greeter, String> = Registry::new("greeter");
        reg.register("plain", |who| Ok(Box::new(Plain(who.clone()))));
        assert!(reg.contains("plain"));
        assert_eq!(
            reg.build("plain", &"bob".into()).unwrap().greet(),
            "hello bob"
        );
        let err = reg.build("fancy", &"bob".into()).err().unwrap().to_string();
        assert!(err.contains("unknown greeter \"fancy\""), "{err}");
        assert!(err.contains("plain"));
    }
}
