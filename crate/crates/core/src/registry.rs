//! Name-keyed registries of interchangeable strategies.
//!
//! Each algorithm family (texture encoders, fixation classifiers, patch samplers,
//! sequence backbones, collapse costs) exposes a trait; concrete variants are
//! registered under a stable name and instantiated at runtime from config or CLI
//! flags.

use crate::error::{Error, Result};

type Factory<C, T> = Box<dyn Fn(&C) -> Result<Box<T>> + Send + Sync>;

pub struct Registry<C, T: ?Sized> {
    family: &'static str,
    entries: Vec<(&'static str, Factory<C, T>)>,
}

impl<C, T: ?Sized> Registry<C, T> {
    pub fn new(family: &'static str) -> Self {
        Registry {
            family,
            entries: Vec::new(),
        }
    }

    /// Registers `name`, replacing an existing entry with the same name.
    pub fn register<F>(&mut self, name: &'static str, factory: F) -> &mut Self
    where
        F: Fn(&C) -> Result<Box<T>> + Send + Sync + 'static,
    {
        self.entries.retain(|(n, _)| *n != name);
        self.entries.push((name, Box::new(factory)));
        self
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|(n, _)| *n).collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.iter().any(|(n, _)| *n == name)
    }

    pub fn create(&self, name: &str, config: &C) -> Result<Box<T>> {
        match self.entries.iter().find(|(n, _)| *n == name) {
            Some((_, f)) => f(config),
            None => Err(Error::UnknownStrategy {
                family: self.family,
                name: name.to_string(),
                known: self.names().join(", "),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    trait Greeter {
        fn greet(&self) -> String;
    }
    struct Hello(String);
    impl Greeter for Hello {
        fn greet(&self) -> String {
            format!("hello {}", self.0)
        }
    }

    #[test]
    fn create_by_name_and_report_unknown() {
        let mut r: Registry<String, dyn Greeter> = Registry::new("greeter");
        r.register("hello", |who: &String| Ok(Box::new(Hello(who.clone()))));
        assert_eq!(r.create("hello", &"mesh".into()).unwrap().greet(), "hello mesh");
        let err = r.create("bye", &String::new()).err().unwrap();
        assert!(err.to_string().contains("known: hello"));
    }
}
