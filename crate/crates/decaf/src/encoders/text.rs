//! Text encoder: embedding lookup plus one self-attention block behind a
//! learned CLS slot.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Session, Var};

use super::trunk::{block_forward, init_block};
use super::QueryFeatures;

#[derive(Debug, Clone)]
pub struct TextModel {
    prefix: String,
    pub vocab: usize,
    pub d_model: usize,
    pub n_heads: usize,
    /// Longest token sequence (excluding the CLS slot).
    pub max_tokens: usize,
}

impl TextModel {
    pub fn new(prefix: impl Into<String>, vocab: usize, d_model: usize, n_heads: usize, max_tokens: usize) -> Self {
        TextModel {
            prefix: prefix.into(),
            vocab,
            d_model,
            n_heads,
            max_tokens,
        }
    }

    pub fn init(&self, ps: &mut ParamStore) {
        let p = &self.prefix;
        let c = self.d_model;
        let emb_limit = (6.0 / (self.vocab + c) as f64).sqrt();
        ps.init_uniform(&format!("{p}.emb"), vec![self.vocab, c], emb_limit);
        ps.init_uniform(&format!("{p}.cls"), vec![1, c], emb_limit);
        let pos_limit = (6.0 / (self.max_tokens + 1 + c) as f64).sqrt();
        ps.init_uniform(&format!("{p}.pos"), vec![self.max_tokens + 1, c], pos_limit);
        init_block(ps, &format!("{p}.block0"), c);
    }

    /// `(cls, tokens)` vars: `[C]` and `[N, C]`.
    pub fn encode_var(&self, s: &mut Session, token_ids: &[usize]) -> Result<(Var, Var)> {
        if token_ids.is_empty() {
            return Err(Error::InvalidArg("query needs at least one token".into()));
        }
        if token_ids.len() > self.max_tokens {
            return Err(Error::InvalidArg(format!(
                "query has {} tokens, model limit is {}",
                token_ids.len(),
                self.max_tokens
            )));
        }
        if let Some(&bad) = token_ids.iter().find(|&&id| id >= self.vocab) {
            return Err(Error::InvalidArg(format!(
                "token id {bad} outside vocabulary of {}",
                self.vocab
            )));
        }
        let p = &self.prefix;
        let n = token_ids.len();
        let c = self.d_model;
        let emb = s.param(&format!("{p}.emb"));
        let idx: Vec<i64> = token_ids
            .iter()
            .flat_map(|&id| (0..c).map(move |j| (id * c + j) as i64))
            .collect();
        let toks = s.reindex_zero(emb, Rc::new(idx), vec![n, c]);
        let cls = s.param(&format!("{p}.cls"));
        let x = s.concat_rows(&[cls, toks]);
        let pos_full = s.param(&format!("{p}.pos"));
        let pos = s.rows_range(pos_full, 0, n + 1);
        let x = s.add(x, pos);
        let x = block_forward(s, &format!("{p}.block0"), x, self.n_heads, None);
        let cls_out = s.row(x, 0);
        let tok_out = s.rows_range(x, 1, n + 1);
        Ok((cls_out, tok_out))
    }

    pub fn encode(&self, ps: &ParamStore, token_ids: &[usize]) -> Result<QueryFeatures> {
        let mut s = Session::new(ps);
        let (cls, toks) = self.encode_var(&mut s, token_ids)?;
        let cls = s.value(cls).clone();
        let tokens = s.value(toks).clone();
        if !cls.is_finite() || !tokens.is_finite() {
            return Err(Error::NonFinite("query features".into()));
        }
        Ok(QueryFeatures { cls, tokens })
    }
}
