//! Name-keyed registries of interchangeable strategies.
//!
//! Encoders, generator backends and pose backends are each selected at
//! runtime by name (from a config file or a CLI flag). A registry maps the
//! name to a constructor that builds the boxed trait object from a JSON
//! parameter blob.

use std::collections::BTreeMap;

use serde_json::Value;

use crate::error::{Error, Result};

pub type Constructor<T, C> = Box<dyn Fn(&C, &Value) -> Result<Box<T>> + Send + Sync>;

pub struct Registry<T: ?Sized, C = ()> {
    kind: &'static str,
    entries: BTreeMap<String, Constructor<T, C>>,
}

impl<T: ?Sized, C> Registry<T, C> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            entries: BTreeMap::new(),
        }
    }

    /// Registers a constructor, replacing any previous entry with that name.
    pub fn register<F>(&mut self, name: &str, ctor: F)
    where
        F: Fn(&C, &Value) -> Result<Box<T>> + Send + Sync + 'static,
    {
        self.entries.insert(name.to_owned(), Box::new(ctor));
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn build(&self, name: &str, ctx: &C, params: &Value) -> Result<Box<T>> {
        match self.entries.get(name) {
            Some(ctor) => ctor(ctx, params),
            None => Err(Error::UnknownStrategy {
                kind: self.kind,
                name: name.to_owned(),
                known: self.names().join(", "),
            }),
        }
    }
}

/// Reads an optional typed field out of a parameter blob.
pub(crate) fn param<T: serde::de::DeserializeOwned>(
    params: &Value,
    key: &str,
) -> Result<Option<T>> {
    match params.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => serde_json::from_value(v.clone())
            .map(Some)
            .map_err(|e| Error::Config(format!("parameter `{key}`: {e}"))),
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
    fn builds_by_name_and_reports_unknown() {
        let mut reg: Registry<dyn Greeter> = Registry::new("greeter");
        reg.register("hello", |_, p| {
            let who: String = param(p, "who")?.unwrap_or_else(|| "world".into());
            Ok(Box::new(Hello(who)))
        });
        let g = reg.build("hello", &(), &serde_json::json!({"who": "there"})).unwrap();
        assert_eq!(g.greet(), "hello there");
        let g = reg.build("hello", &(), &Value::Null).unwrap();
        assert_eq!(g.greet(), "hello world");

        let err = reg.build("bye", &(), &Value::Null).err().unwrap();
        assert!(err.to_string().contains("registered: hello"), "{err}");
    }
}
