use serde::{Deserialize, Serialize};
use std::borrow::Borrow;
use std::fmt;

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }

        impl Borrow<str> for $name {
            fn borrow(&self) -> &str {
                &self.0
            }
        }

        impl AsRef<str> for $name {
            fn as_ref(&self) -> &str {
                &self.0
            }
        }
    };
}

string_id!(NodeId);
string_id!(LinkId);
string_id!(SegmentId);
string_id!(RoutePartId);
string_id!(
    /// Short service code such as `GLOSA` or `IVS_SECTION`.
    ServiceId
);
string_id!(
    /// Any addressable network element: node, link or control segment.
    /// Ids are unique across all three kinds within one network.
    ElementId
);

impl From<&NodeId> for ElementId {
    fn from(id: &NodeId) -> Self {
        Self(id.0.clone())
    }
}

impl From<&LinkId> for ElementId {
    fn from(id: &LinkId) -> Self {
        Self(id.0.clone())
    }
}

impl From<&SegmentId> for ElementId {
    fn from(id: &SegmentId) -> Self {
        Self(id.0.clone())
    }
}

/// Simulated end-user agent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(pub u32);

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "A{}", self.0)
    }
}
