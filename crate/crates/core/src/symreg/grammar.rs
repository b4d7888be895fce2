//! Token alphabet and syntactic bookkeeping for expression generation.
//!
//! Sampling works on prefix token sequences. `GenState` tracks how many
//! slots remain open and what the parent/sibling context of the next slot
//! is, and `Grammar::mask` rules out tokens that could not complete a
//! well-formed tree within the length caps — so every finished sequence is
//! valid by construction.

use crate::error::{Error, Result};

/// One vocabulary entry: four binary operators, two unary, the dataset
/// columns, and a fittable constant placeholder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Token {
    Add,
    Sub,
    Mul,
    Div,
    Sin,
    Cos,
    Var(usize),
    Const,
}

impl Token {
    pub fn arity(&self) -> usize {
        match self {
            Token::Add | Token::Sub | Token::Mul | Token::Div => 2,
            Token::Sin | Token::Cos => 1,
            Token::Var(_) | Token::Const => 0,
        }
    }
}

/// The token universe plus length caps for one search.
#[derive(Debug, Clone)]
pub struct Grammar {
    /// Terminal names, indexed by `Token::Var`.
    pub columns: Vec<String>,
    pub max_length: usize,
    pub min_length: usize,
}

impl Grammar {
    pub fn new(columns: Vec<String>, max_length: usize) -> Result<Self> {
        let g = Self {
            columns,
            max_length,
            min_length: 3,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.columns.is_empty() {
            return Err(Error::Config("grammar: at least one terminal required".into()));
        }
        if self.min_length < 3 {
            return Err(Error::Config(format!(
                "grammar: min_length must be >= 3, got {}",
                self.min_length
            )));
        }
        if self.max_length < self.min_length {
            return Err(Error::Config(format!(
                "grammar: max_length {} below min_length {}",
                self.max_length, self.min_length
            )));
        }
        Ok(())
    }

    /// Number of distinct tokens.
    pub fn n_tokens(&self) -> usize {
        self.columns.len() + 7
    }

    /// Token for a vocabulary index.
    pub fn token(&self, index: usize) -> Token {
        match index {
            0 => Token::Add,
            1 => Token::Sub,
            2 => Token::Mul,
            3 => Token::Div,
            4 => Token::Sin,
            5 => Token::Cos,
            i if i < 6 + self.columns.len() => Token::Var(i - 6),
            i if i == 6 + self.columns.len() => Token::Const,
            i => panic!("token index {i} out of range"),
        }
    }

    /// Vocabulary index for a token.
    pub fn index(&self, token: Token) -> usize {
        match token {
            Token::Add => 0,
            Token::Sub => 1,
            Token::Mul => 2,
            Token::Div => 3,
            Token::Sin => 4,
            Token::Cos => 5,
            Token::Var(v) => 6 + v,
            Token::Const => 6 + self.columns.len(),
        }
    }

    /// Display name of a token.
    pub fn name(&self, token: Token) -> String {
        match token {
            Token::Add => "+".to_string(),
            Token::Sub => "-".to_string(),
            Token::Mul => "*".to_string(),
            Token::Div => "/".to_string(),
            Token::Sin => "sin".to_string(),
            Token::Cos => "cos".to_string(),
            Token::Var(v) => self.columns[v].clone(),
            Token::Const => "const".to_string(),
        }
    }

    /// Token for a display name.
    pub fn parse_token(&self, name: &str) -> Result<Token> {
        Ok(match name {
            "+" => Token::Add,
            "-" => Token::Sub,
            "*" => Token::Mul,
            "/" => Token::Div,
            "sin" => Token::Sin,
            "cos" => Token::Cos,
            "const" => Token::Const,
            other => match self.columns.iter().position(|c| c == other) {
                Some(v) => Token::Var(v),
                None => {
                    return Err(Error::Schema(format!(
                        "unknown token '{other}' for this grammar"
                    )))
                }
            },
        })
    }

    /// Which tokens may fill the next slot. `placed` tokens exist so far,
    /// `open` slots await (including this one), `parent` is the operator
    /// owning the slot.
    pub fn mask(&self, placed: usize, open: usize, parent: Option<Token>) -> Vec<bool> {
        (0..self.n_tokens())
            .map(|i| {
                let tok = self.token(i);
                let a = tok.arity();
                // Every open slot still needs at least one token.
                if placed + open + a > self.max_length {
                    return false;
                }
                // A terminal in the last open slot finishes the tree; block
                // finishes shorter than the floor.
                if open == 1 && a == 0 && placed + 1 < self.min_length {
                    return false;
                }
                // No directly nested sin(sin(·)) or cos(cos(·)).
                match (parent, tok) {
                    (Some(Token::Sin), Token::Sin) | (Some(Token::Cos), Token::Cos) => false,
                    _ => true,
                }
            })
            .collect()
    }
}

/// A pending operator during generation: how many children are filled and
/// what the first child's root token was (the sibling feature of the
/// second slot).
struct Frame {
    token: Token,
    filled: usize,
    first_child_root: Option<Token>,
}

/// Context of the slot about to be filled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotContext {
    pub parent: Option<Token>,
    pub sibling: Option<Token>,
    pub depth: usize,
}

/// Incremental prefix-order tree builder.
pub struct GenState {
    pub tokens: Vec<Token>,
    open: usize,
    stack: Vec<Frame>,
}

impl GenState {
    pub fn new() -> Self {
        Self {
            tokens: Vec::new(),
            open: 1,
            stack: Vec::new(),
        }
    }

    pub fn complete(&self) -> bool {
        self.open == 0
    }

    /// Parent/sibling/depth of the next slot.
    pub fn context(&self) -> SlotContext {
        match self.stack.last() {
            None => SlotContext {
                parent: None,
                sibling: None,
                depth: 0,
            },
            Some(f) => SlotContext {
                parent: Some(f.token),
                sibling: if f.filled == 1 { f.first_child_root } else { None },
                depth: self.stack.len(),
            },
        }
    }

    /// Token mask for the next slot.
    pub fn mask(&self, grammar: &Grammar) -> Vec<bool> {
        grammar.mask(self.tokens.len(), self.open, self.context().parent)
    }

    /// Place a token in the next slot.
    pub fn push(&mut self, token: Token) {
        assert!(!self.complete(), "tree already complete");
        self.tokens.push(token);
        self.open = self.open - 1 + token.arity();
        if token.arity() > 0 {
            self.stack.push(Frame {
                token,
                filled: 0,
                first_child_root: None,
            });
            return;
        }
        // A terminal finishes a subtree; propagate completion upward.
        let mut completed = token;
        while let Some(top) = self.stack.last_mut() {
            top.filled += 1;
            if top.filled == 1 {
                top.first_child_root = Some(completed);
            }
            if top.filled == top.token.arity() {
                completed = top.token;
                self.stack.pop();
            } else {
                return;
            }
        }
    }
}
