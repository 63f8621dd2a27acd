//! Wire records exchanged between the mediator and data services.
//!
//! One JSON object per line. Ciphertexts are decimal strings, range ends carry
//! explicit inclusivity flags, and absent fields are simply omitted. Unknown
//! fields are ignored on input; an unknown `kind` decodes to
//! [`MessageKind::Unsupported`].

use serde::{Deserialize, Serialize};

use crate::opes::EncryptedId;
use crate::store::{Attrs, IdRange};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MessageKind {
    SelectivityReq,
    SelectivityResp,
    CandidatesReq,
    CandidatesResp,
    InvokeReq,
    InvokeResp,
    ConsentReq,
    ConsentResp,
    Error,
    #[serde(other)]
    Unsupported,
}

impl MessageKind {
    pub fn is_request(self) -> bool {
        matches!(
            self,
            MessageKind::SelectivityReq | MessageKind::CandidatesReq | MessageKind::InvokeReq | MessageKind::ConsentReq
        )
    }
}

/// How a service picks the split point it reports with a selectivity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    /// The `ceil(n/2)`-th held identifier (the default when absent).
    Median,
    /// The ciphertext of the plaintext midpoint of the range, held or not.
    Domain,
}

/// Equality filter used to invoke a root service with a user constant.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Filter {
    pub attr: String,
    pub value: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tuple {
    pub id: EncryptedId,
    pub attrs: Attrs,
}

pub mod codes {
    pub const MALFORMED: &str = "malformed";
    pub const EMPTY_RANGE: &str = "empty_range";
    pub const UNSUPPORTED: &str = "unsupported";
    pub const RATE_LIMITED: &str = "rate_limited";
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolMessage {
    pub id: u64,
    pub kind: MessageKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<IdRange>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mid: Option<EncryptedId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ranges: Option<Vec<IdRange>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tuples: Option<Vec<Tuple>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter: Option<Filter>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<EncryptedId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consented: Option<bool>,
}

impl ProtocolMessage {
    pub fn new(id: u64, kind: MessageKind) -> Self {
        ProtocolMessage {
            id,
            kind,
            range: None,
            k: None,
            count: None,
            mid: None,
            ranges: None,
            tuples: None,
            code: None,
            filter: None,
            split: None,
            target: None,
            consented: None,
        }
    }

    pub fn selectivity(id: u64, range: IdRange) -> Self {
        ProtocolMessage {
            range: Some(range),
            ..Self::new(id, MessageKind::SelectivityReq)
        }
    }

    /// Selectivity request asking for the domain midpoint instead of the median.
    pub fn domain_selectivity(id: u64, range: IdRange) -> Self {
        ProtocolMessage {
            split: Some(SplitMode::Domain),
            ..Self::selectivity(id, range)
        }
    }

    pub fn candidates(id: u64, range: IdRange, k: usize) -> Self {
        ProtocolMessage {
            range: Some(range),
            k: Some(k),
            ..Self::new(id, MessageKind::CandidatesReq)
        }
    }

    pub fn invoke(id: u64, range: IdRange) -> Self {
        ProtocolMessage {
            range: Some(range),
            ..Self::new(id, MessageKind::InvokeReq)
        }
    }

    pub fn invoke_filter(id: u64, attr: &str, value: &str) -> Self {
        ProtocolMessage {
            filter: Some(Filter {
                attr: attr.to_string(),
                value: value.to_string(),
            }),
            ..Self::new(id, MessageKind::InvokeReq)
        }
    }

    pub fn consent(id: u64, target: EncryptedId) -> Self {
        ProtocolMessage {
            target: Some(target),
            ..Self::new(id, MessageKind::ConsentReq)
        }
    }

    pub fn error(id: u64, code: &str) -> Self {
        ProtocolMessage {
            code: Some(code.to_string()),
            ..Self::new(id, MessageKind::Error)
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("messages always serialize")
    }

    pub fn from_line(line: &str) -> serde_json::Result<Self> {
        serde_json::from_str(line)
    }
}
