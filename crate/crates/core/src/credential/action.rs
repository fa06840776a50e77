use std::collections::BTreeMap;

use super::CredentialError;

pub const APP_DOMAIN: &str = "app_domain";

/// Flat attribute map describing one transaction. Always carries
/// `app_domain`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ActionAttributeSet {
    attrs: BTreeMap<String, String>,
}

impl ActionAttributeSet {
    pub fn new(app_domain: &str) -> Self {
        let mut attrs = BTreeMap::new();
        attrs.insert(APP_DOMAIN.to_string(), app_domain.to_string());
        ActionAttributeSet { attrs }
    }

    pub fn from_map(attrs: BTreeMap<String, String>) -> Result<Self, CredentialError> {
        if !attrs.contains_key(APP_DOMAIN) {
            return Err(CredentialError::MissingAppDomain);
        }
        for name in attrs.keys() {
            if !is_attribute_name(name) {
                return Err(CredentialError::BadAttributeName(name.clone()));
            }
        }
        Ok(ActionAttributeSet { attrs })
    }

    pub fn with(mut self, name: &str, value: impl Into<String>) -> Self {
        self.insert(name, value);
        self
    }

    /// Panics on names that are not identifiers; callers pass literals.
    pub fn insert(&mut self, name: &str, value: impl Into<String>) {
        assert!(is_attribute_name(name), "invalid attribute name `{name}`");
        self.attrs.insert(name.to_string(), value.into());
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.attrs.get(name).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.attrs.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn as_map(&self) -> &BTreeMap<String, String> {
        &self.attrs
    }

    pub fn len(&self) -> usize {
        self.attrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attrs.is_empty()
    }
}

pub fn is_attribute_name(name: &str) -> bool {
    let mut bytes = name.bytes();
    matches!(bytes.next(), Some(b) if b.is_ascii_alphabetic() || b == b'_')
        && bytes.all(|b| b.is_ascii_alphanumeric() || b == b'_')
}
