//! Hooks a service applies to outgoing non-identifier attributes.

use std::fmt;

use crate::store::Attrs;

/// Protection a service applies to its own output attributes before release.
///
/// The identifier attribute is removed before the hook runs, so a hook never
/// sees or produces it.
pub trait Sanitizer: Send + Sync + fmt::Debug {
    fn sanitize(&self, attrs: Attrs) -> Attrs;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct IdentitySanitizer;

impl Sanitizer for IdentitySanitizer {
    fn sanitize(&self, attrs: Attrs) -> Attrs {
        attrs
    }
}

/// Coarsens an ISO date attribute (`YYYY-MM-DD`) to its decade, `1980s`.
#[derive(Clone, Debug)]
pub struct DecadeRedactor {
    pub attr: String,
}

impl DecadeRedactor {
    pub fn new(attr: impl Into<String>) -> Self {
        DecadeRedactor { attr: attr.into() }
    }
}

impl Sanitizer for DecadeRedactor {
    fn sanitize(&self, mut attrs: Attrs) -> Attrs {
        if let Some(v) = attrs.get_mut(&self.attr) {
            let year: Option<u32> = v.get(..4).and_then(|y| y.parse().ok());
            *v = match year {
                Some(y) => format!("{}s", y / 10 * 10),
                None => "redacted".to_string(),
            };
        }
        attrs
    }
}
