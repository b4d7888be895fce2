//! Prefix-order expression trees: validation, (de)serialization to token
//! name lists, infix rendering, and subtree extents for the genetic
//! operators.

use crate::error::{Error, Result};

use super::grammar::{Grammar, Token};

/// A complete expression: tokens in prefix order plus one fitted value per
/// `Const` placeholder, in placeholder order.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpressionTree {
    pub tokens: Vec<Token>,
    pub constants: Vec<f64>,
}

impl ExpressionTree {
    /// Build from tokens with all constants initialized to 1.
    pub fn new(tokens: Vec<Token>) -> Self {
        let n_const = tokens.iter().filter(|t| **t == Token::Const).count();
        Self {
            tokens,
            constants: vec![1.0; n_const],
        }
    }

    /// Check prefix completeness, length bounds, and constant bookkeeping.
    pub fn validate(&self, grammar: &Grammar) -> Result<()> {
        let mut open = 1usize;
        for (k, tok) in self.tokens.iter().enumerate() {
            if open == 0 {
                return Err(Error::Schema(format!(
                    "expression: token {k} follows a complete tree"
                )));
            }
            open = open - 1 + tok.arity();
            if let Token::Var(v) = tok {
                if *v >= grammar.columns.len() {
                    return Err(Error::Schema(format!(
                        "expression: variable index {v} out of range"
                    )));
                }
            }
        }
        if open != 0 {
            return Err(Error::Schema(format!(
                "expression: {open} slots left unfilled"
            )));
        }
        if self.tokens.len() < grammar.min_length || self.tokens.len() > grammar.max_length {
            return Err(Error::Schema(format!(
                "expression: length {} outside [{}, {}]",
                self.tokens.len(),
                grammar.min_length,
                grammar.max_length
            )));
        }
        let n_const = self.tokens.iter().filter(|t| **t == Token::Const).count();
        if n_const != self.constants.len() {
            return Err(Error::Schema(format!(
                "expression: {} constant placeholders but {} values",
                n_const,
                self.constants.len()
            )));
        }
        Ok(())
    }

    /// Half-open token range of the subtree rooted at `start`.
    pub fn subtree(&self, start: usize) -> std::ops::Range<usize> {
        let mut open = 1usize;
        let mut end = start;
        while open > 0 {
            open = open - 1 + self.tokens[end].arity();
            end += 1;
        }
        start..end
    }

    /// Token names in prefix order (constants appear as "const").
    pub fn token_names(&self, grammar: &Grammar) -> Vec<String> {
        self.tokens.iter().map(|t| grammar.name(*t)).collect()
    }

    /// Rebuild from prefix token names and constant values.
    pub fn from_token_names(
        names: &[String],
        constants: &[f64],
        grammar: &Grammar,
    ) -> Result<Self> {
        let tokens = names
            .iter()
            .map(|n| grammar.parse_token(n))
            .collect::<Result<Vec<Token>>>()?;
        let tree = Self {
            tokens,
            constants: constants.to_vec(),
        };
        tree.validate(grammar)?;
        Ok(tree)
    }

    /// Fully parenthesized infix rendering with fitted constant values.
    pub fn infix(&self, grammar: &Grammar) -> String {
        fn walk(
            tokens: &[Token],
            constants: &[f64],
            grammar: &Grammar,
            pos: &mut usize,
            const_pos: &mut usize,
        ) -> String {
            let tok = tokens[*pos];
            *pos += 1;
            match tok {
                Token::Add | Token::Sub | Token::Mul | Token::Div => {
                    let op = grammar.name(tok);
                    let left = walk(tokens, constants, grammar, pos, const_pos);
                    let right = walk(tokens, constants, grammar, pos, const_pos);
                    format!("({left} {op} {right})")
                }
                Token::Sin | Token::Cos => {
                    let name = grammar.name(tok);
                    let arg = walk(tokens, constants, grammar, pos, const_pos);
                    format!("{name}({arg})")
                }
                Token::Var(v) => grammar.columns[v].clone(),
                Token::Const => {
                    let v = constants[*const_pos];
                    *const_pos += 1;
                    format!("{v}")
                }
            }
        }
        let mut pos = 0;
        let mut const_pos = 0;
        walk(&self.tokens, &self.constants, grammar, &mut pos, &mut const_pos)
    }
}
