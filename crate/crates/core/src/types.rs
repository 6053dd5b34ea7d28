//! Shared domain vocabulary: token ids, token types, request categories and
//! small fixed-size maps keyed by those enums.

use std::fmt;
use std::ops::{Index, IndexMut};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Vocabulary index of a single token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

/// Identifier of a conversation (or of a stateless single-turn request).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SessionId(pub u64);

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Semantic role of a token inside a prompt or generated output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenType {
    SystemPrompt,
    UserQuery,
    ToolOutput,
    Response,
    Cot,
    Decode,
}

impl TokenType {
    pub const ALL: [TokenType; 6] = [
        TokenType::SystemPrompt,
        TokenType::UserQuery,
        TokenType::ToolOutput,
        TokenType::Response,
        TokenType::Cot,
        TokenType::Decode,
    ];

    /// The five prompt-side types whose weights are learned online.
    pub const LEARNED: [TokenType; 5] = [
        TokenType::SystemPrompt,
        TokenType::UserQuery,
        TokenType::ToolOutput,
        TokenType::Response,
        TokenType::Cot,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TokenType::SystemPrompt => "system_prompt",
            TokenType::UserQuery => "user_query",
            TokenType::ToolOutput => "tool_output",
            TokenType::Response => "response",
            TokenType::Cot => "cot",
            TokenType::Decode => "decode",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for TokenType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TokenType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TokenType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown token type `{s}`"))
    }
}

/// Whether a block was produced by prompt processing or by generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    #[default]
    Prefill,
    Decode,
}

/// Request category used by the synthetic workload mixtures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Chat,
    Agent,
    ToolUse,
    Programming,
    DocQa,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::Chat,
        Category::Agent,
        Category::ToolUse,
        Category::Programming,
        Category::DocQa,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Chat => "chat",
            Category::Agent => "agent",
            Category::ToolUse => "tool_use",
            Category::Programming => "programming",
            Category::DocQa => "doc_qa",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Chat and agent sessions are multi-turn; the rest are stateless.
    pub fn is_multi_turn(self) -> bool {
        matches!(self, Category::Chat | Category::Agent)
    }

    pub fn style(self) -> Style {
        match self {
            Category::Agent => Style::Agentic,
            _ => Style::Chat,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown category `{s}`"))
    }
}

/// Multi-turn timing style; each style has its own inter-turn model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Style {
    Chat,
    Agentic,
}

impl Style {
    pub const ALL: [Style; 2] = [Style::Chat, Style::Agentic];

    pub fn as_str(self) -> &'static str {
        match self {
            Style::Chat => "chat",
            Style::Agentic => "agentic",
        }
    }
}

impl FromStr for Style {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "chat" => Ok(Style::Chat),
            "agentic" | "agent" => Ok(Style::Agentic),
            _ => Err(format!("unknown style `{s}`")),
        }
    }
}

/// Dense map from [`TokenType`] to `T`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PerType<T> {
    pub system_prompt: T,
    pub user_query: T,
    pub tool_output: T,
    pub response: T,
    pub cot: T,
    pub decode: T,
}

impl<T> PerType<T> {
    pub fn from_fn(mut f: impl FnMut(TokenType) -> T) -> Self {
        PerType {
            system_prompt: f(TokenType::SystemPrompt),
            user_query: f(TokenType::UserQuery),
            tool_output: f(TokenType::ToolOutput),
            response: f(TokenType::Response),
            cot: f(TokenType::Cot),
            decode: f(TokenType::Decode),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (TokenType, &T)> {
        TokenType::ALL.into_iter().map(move |t| (t, &self[t]))
    }
}

impl<T> Index<TokenType> for PerType<T> {
    type Output = T;

    fn index(&self, t: TokenType) -> &T {
        match t {
            TokenType::SystemPrompt => &self.system_prompt,
            TokenType::UserQuery => &self.user_query,
            TokenType::ToolOutput => &self.tool_output,
            TokenType::Response => &self.response,
            TokenType::Cot => &self.cot,
            TokenType::Decode => &self.decode,
        }
    }
}

impl<T> IndexMut<TokenType> for PerType<T> {
    fn index_mut(&mut self, t: TokenType) -> &mut T {
        match t {
            TokenType::SystemPrompt => &mut self.system_prompt,
            TokenType::UserQuery => &mut self.user_query,
            TokenType::ToolOutput => &mut self.tool_output,
            TokenType::Response => &mut self.response,
            TokenType::Cot => &mut self.cot,
            TokenType::Decode => &mut self.decode,
        }
    }
}

/// Dense map from [`Category`] to `T`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PerCategory<T> {
    pub chat: T,
    pub agent: T,
    pub tool_use: T,
    pub programming: T,
    pub doc_qa: T,
}

impl<T> PerCategory<T> {
    pub fn from_fn(mut f: impl FnMut(Category) -> T) -> Self {
        PerCategory {
            chat: f(Category::Chat),
            agent: f(Category::Agent),
            tool_use: f(Category::ToolUse),
            programming: f(Category::Programming),
            doc_qa: f(Category::DocQa),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (Category, &T)> {
        Category::ALL.into_iter().map(move |c| (c, &self[c]))
    }
}

impl<T> Index<Category> for PerCategory<T> {
    type Output = T;

    fn index(&self, c: Category) -> &T {
        match c {
            Category::Chat => &self.chat,
            Category::Agent => &self.agent,
            Category::ToolUse => &self.tool_use,
            Category::Programming => &self.programming,
            Category::DocQa => &self.doc_qa,
        }
    }
}

impl<T> IndexMut<Category> for PerCategory<T> {
    fn index_mut(&mut self, c: Category) -> &mut T {
        match c {
            Category::Chat => &mut self.chat,
            Category::Agent => &mut self.agent,
            Category::ToolUse => &mut self.tool_use,
            Category::Programming => &mut self.programming,
            Category::DocQa => &mut self.doc_qa,
        }
    }
}

/// Dense map from [`Style`] to `T`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PerStyle<T> {
    pub chat: T,
    pub agentic: T,
}

impl<T> PerStyle<T> {
    pub fn new(chat: T, agentic: T) -> Self {
        PerStyle { chat, agentic }
    }
}

impl<T> Index<Style> for PerStyle<T> {
    type Output = T;

    fn index(&self, s: Style) -> &T {
        match s {
            Style::Chat => &self.chat,
            Style::Agentic => &self.agentic,
        }
    }
}

impl<T> IndexMut<Style> for PerStyle<T> {
    fn index_mut(&mut self, s: Style) -> &mut T {
        match s {
            Style::Chat => &mut self.chat,
            Style::Agentic => &mut self.agentic,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_type_names_round_trip() {
        for t in TokenType::ALL {
            assert_eq!(t.as_str().parse::<TokenType>().unwrap(), t);
        }
        assert!("thoughts".parse::<TokenType>().is_err());
    }

    #[test]
    fn per_type_index_matches_fields() {
        let m = PerType::from_fn(|t| t.index());
        for t in TokenType::ALL {
            assert_eq!(m[t], t.index());
        }
    }

    #[test]
    fn only_chat_and_agent_are_multi_turn() {
        let multi: Vec<_> = Category::ALL.into_iter().filter(|c| c.is_multi_turn()).collect();
        assert_eq!(multi, vec![Category::Chat, Category::Agent]);
        assert_eq!(Category::Agent.style(), Style::Agentic);
    }
}
