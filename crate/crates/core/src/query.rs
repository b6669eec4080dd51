use serde::{Deserialize, Serialize};

use crate::corpus::tokenize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "round")]
pub enum QueryRole {
    /// The user's question.
    Original,
    /// A search query raised by the reasoning model in the given round.
    Search(u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub text: String,
    pub role: QueryRole,
}

impl Query {
    pub fn original(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            role: QueryRole::Original,
        }
    }

    pub fn search(text: impl Into<String>, round: u32) -> Self {
        Self {
            text: text.into(),
            role: QueryRole::Search(round),
        }
    }

    pub fn tokens(&self) -> Vec<String> {
        tokenize(&self.text)
    }

    pub fn round(&self) -> u32 {
        match self.role {
            QueryRole::Original => 0,
            QueryRole::Search(n) => n,
        }
    }
}
