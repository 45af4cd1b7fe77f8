//! Name-keyed factories for interchangeable strategies (generative backends,
//! style embedders) so they can be picked from configuration at runtime.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};

type Factory<T, A> = Box<dyn Fn(&A) -> Result<Arc<T>> + Send + Sync>;

pub struct Registry<T: ?Sized, A = ()> {
    kind: &'static str,
    factories: BTreeMap<String, Factory<T, A>>,
}

impl<T: ?Sized, A> Registry<T, A> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            factories: BTreeMap::new(),
        }
    }

    /// Registers `factory` under `name`, replacing any previous entry.
    pub fn register<F>(&mut self, name: &str, factory: F) -> &mut Self
    where
        F: Fn(&A) -> Result<Arc<T>> + Send + Sync + 'static,
    {
        self.factories.insert(name.to_string(), Box::new(factory));
        self
    }

    pub fn create(&self, name: &str, args: &A) -> Result<Arc<T>> {
        match self.factories.get(name) {
            Some(factory) => factory(args),
            None => Err(Error::UnknownName {
                kind: self.kind,
                name: name.to_string(),
            }),
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    trait Greeter: Send + Sync {
        fn greet(&self) -> String;
    }

    struct Hello(u64);

    impl Greeter for Hello {
        fn greet(&self) -> String {
            format!("hello {}", self.0)
        }
    }

    #[test]
    fn create_by_name() {
        let mut reg: Registry<dyn Greeter, u64> = Registry::new("greeter");
        reg.register("hello", |seed| Ok(Arc::new(Hello(*seed)) as Arc<dyn Greeter>));
        assert_eq!(reg.create("hello", &7).unwrap().greet(), "hello 7");
        assert!(reg.contains("hello"));
        assert_eq!(reg.names().collect::<Vec<_>>(), vec!["hello"]);
        let err = reg.create("nope", &0).err().unwrap();
        assert_eq!(err.to_string(), "unknown greeter `nope`");
    }
}
