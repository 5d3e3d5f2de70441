//! Deterministic simulated judge answering from gold utilities.

use std::collections::HashMap;

use super::{Backend, BackendRequest, BackendResponse, RequestContext};
use crate::analyzer::term_set;
use crate::data::Qrels;
use crate::error::{Error, Result};
use crate::hashing::unit_interval;
use crate::prompt::PromptMode;

const WIN_LOGPROB: f64 = -0.1;
const LOSE_LOGPROB: f64 = -3.0;

#[derive(Debug, Clone, Default)]
pub struct OracleWorld {
    gold: HashMap<String, HashMap<String, f64>>,
    noise_rate: f64,
    seed: u64,
    locality_discount: f64,
    unjudged_utility: Option<f64>,
}

fn check_probability(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Argument(format!("{name} must lie in [0, 1], got {p}")));
    }
    Ok(())
}

fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

impl OracleWorld {
    pub fn new(noise_rate: f64, seed: u64) -> Result<Self> {
        check_probability("noise_rate", noise_rate)?;
        Ok(Self {
            gold: HashMap::new(),
            noise_rate,
            seed,
            locality_discount: 1.0,
            unjudged_utility: None,
        })
    }

    /// Utilities taken from relevance grades.
    pub fn from_qrels(qrels: &Qrels, noise_rate: f64, seed: u64) -> Result<Self> {
        let mut w = Self::new(noise_rate, seed)?;
        for qid in qrels.query_ids() {
            for (doc, grade) in qrels.judged(qid) {
                w.set_gold(qid, doc, f64::from(grade));
            }
        }
        Ok(w)
    }

    /// Multiplies the noise rate by `factor` for prompts whose examples share
    /// at least one analyzed term with the query. `1.0` disables the effect.
    pub fn with_locality_discount(mut self, factor: f64) -> Result<Self> {
        check_probability("locality_discount", factor)?;
        self.locality_discount = factor;
        Ok(self)
    }

    /// Utility for documents without a gold entry; by default they are an error.
    pub fn with_unjudged_utility(mut self, utility: Option<f64>) -> Self {
        self.unjudged_utility = utility;
        self
    }

    pub fn set_gold(&mut self, query_id: &str, doc_id: &str, utility: f64) {
        self.gold
            .entry(query_id.to_string())
            .or_default()
            .insert(doc_id.to_string(), utility);
    }

    pub fn noise_rate(&self) -> f64 {
        self.noise_rate
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn gold(&self, query_id: &str, doc_id: &str) -> Result<f64> {
        self.gold
            .get(query_id)
            .and_then(|m| m.get(doc_id))
            .copied()
            .or(self.unjudged_utility)
            .ok_or_else(|| Error::Oracle(format!("no gold utility for ({query_id}, {doc_id})")))
    }

    pub fn effective_noise(&self, ctx: &RequestContext) -> f64 {
        let q = term_set(&ctx.query_text);
        let local = ctx
            .example_query_texts
            .iter()
            .any(|e| term_set(e).iter().any(|t| q.contains(t)));
        if local {
            self.noise_rate * self.locality_discount
        } else {
            self.noise_rate
        }
    }

    /// Keyed by the query, the unordered document set and the slot order, so
    /// each presentation of a pair gets its own independent draw.
    fn noisy(&self, ctx: &RequestContext) -> bool {
        let noise = self.effective_noise(ctx);
        if noise <= 0.0 {
            return false;
        }
        let mut sorted: Vec<&str> = ctx.doc_ids.iter().map(String::as_str).collect();
        sorted.sort_unstable();
        let seed = self.seed.to_le_bytes();
        let n = (ctx.doc_ids.len() as u64).to_le_bytes();
        let mode = ctx.mode.to_string();
        let mut parts: Vec<&[u8]> = vec![b"oracle", &seed, ctx.query_id.as_bytes(), mode.as_bytes(), &n];
        parts.extend(sorted.iter().map(|s| s.as_bytes()));
        parts.extend(ctx.doc_ids.iter().map(|s| s.as_bytes()));
        unit_interval(&parts) < noise
    }

    fn one_hot(winner: usize, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| if i == winner { WIN_LOGPROB } else { LOSE_LOGPROB })
            .collect()
    }

    pub fn respond(&self, ctx: &RequestContext, n_tokens: usize) -> Result<BackendResponse> {
        let utilities = ctx
            .doc_ids
            .iter()
            .map(|d| self.gold(&ctx.query_id, d))
            .collect::<Result<Vec<_>>>()?;
        let flip = self.noisy(ctx);
        match ctx.mode {
            PromptMode::Pairwise => {
                if utilities.len() != 2 || n_tokens != 2 {
                    return Err(Error::Oracle("pairwise prompts need two passages and two tokens".into()));
                }
                let first_wins = utilities[0] >= utilities[1];
                let winner = if first_wins != flip { 0 } else { 1 };
                Ok(BackendResponse::scored(Self::one_hot(winner, 2)))
            }
            PromptMode::Pointwise => {
                if utilities.len() != 1 || n_tokens != 2 {
                    return Err(Error::Oracle("pointwise prompts need one passage and two tokens".into()));
                }
                let (t, f) = (log_sigmoid(utilities[0]), log_sigmoid(-utilities[0]));
                Ok(BackendResponse::scored(if flip { vec![f, t] } else { vec![t, f] }))
            }
            PromptMode::Setwise => {
                if utilities.len() != n_tokens || n_tokens < 2 {
                    return Err(Error::Oracle("setwise prompts need one token per passage".into()));
                }
                let mut pick = 0;
                for (i, u) in utilities.iter().enumerate().skip(1) {
                    let better = if flip { *u < utilities[pick] } else { *u > utilities[pick] };
                    if better {
                        pick = i;
                    }
                }
                Ok(BackendResponse::scored(Self::one_hot(pick, n_tokens)))
            }
        }
    }
}

impl Backend for OracleWorld {
    fn score_continuations(&self, req: &BackendRequest) -> Result<BackendResponse> {
        let ctx = req
            .context
            .as_ref()
            .ok_or_else(|| Error::Oracle("oracle needs the request context".into()))?;
        self.respond(ctx, req.candidate_tokens.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(q: &str, docs: &[&str], mode: PromptMode) -> RequestContext {
        RequestContext {
            query_id: q.into(),
            query_text: "paris airport".into(),
            doc_ids: docs.iter().map(|d| d.to_string()).collect(),
            example_query_texts: vec![],
            mode,
        }
    }

    fn world(noise: f64) -> OracleWorld {
        let mut w = OracleWorld::new(noise, 7).unwrap();
        w.set_gold("q", "dA", 2.0);
        w.set_gold("q", "dB", 1.0);
        w.set_gold("q", "dC", 1.0);
        w
    }

    #[test]
    fn pairwise_noiseless_is_order_consistent() {
        let w = world(0.0);
        let fwd = w.respond(&ctx("q", &["dA", "dB"], PromptMode::Pairwise), 2).unwrap();
        assert_eq!(fwd.logprobs, Some(vec![WIN_LOGPROB, LOSE_LOGPROB]));
        let bwd = w.respond(&ctx("q", &["dB", "dA"], PromptMode::Pairwise), 2).unwrap();
        assert_eq!(bwd.logprobs, Some(vec![LOSE_LOGPROB, WIN_LOGPROB]));
    }

    #[test]
    fn ties_answer_first() {
        let w = world(0.0);
        for order in [["dB", "dC"], ["dC", "dB"]] {
            let r = w.respond(&ctx("q", &order, PromptMode::Pairwise), 2).unwrap();
            assert_eq!(r.logprob(0), Some(WIN_LOGPROB));
        }
    }

    #[test]
    fn full_noise_inverts() {
        let w = world(1.0);
        let r = w.respond(&ctx("q", &["dA", "dB"], PromptMode::Pairwise), 2).unwrap();
        assert_eq!(r.logprob(1), Some(WIN_LOGPROB));
    }

    #[test]
    fn missing_gold() {
        let w = world(0.0);
        assert!(matches!(
            w.respond(&ctx("q", &["dA", "zz"], PromptMode::Pairwise), 2),
            Err(Error::Oracle(_))
        ));
        let req = BackendRequest::new("p", vec!["1".into(), "2".into()]).unwrap();
        assert!(w.score_continuations(&req).is_err());
        let lenient = w.with_unjudged_utility(Some(0.0));
        assert_eq!(lenient.gold("q", "zz").unwrap(), 0.0);
    }

    #[test]
    fn noise_rate_validated() {
        assert!(OracleWorld::new(1.5, 0).is_err());
        assert!(OracleWorld::new(0.5, 0).unwrap().with_locality_discount(-0.1).is_err());
    }

    #[test]
    fn noise_frequency_and_locality() {
        let mut w = OracleWorld::new(0.3, 11).unwrap().with_locality_discount(0.5).unwrap();
        let n = 4000;
        for i in 0..n {
            w.set_gold("q", &format!("a{i}"), 1.0);
            w.set_gold("q", &format!("b{i}"), 0.0);
        }
        let rate = |examples: Vec<String>| {
            let mut flips = 0;
            for i in 0..n {
                let mut c = ctx("q", &[&format!("a{i}"), &format!("b{i}")], PromptMode::Pairwise);
                c.example_query_texts = examples.clone();
                if w.respond(&c, 2).unwrap().logprob(1) == Some(WIN_LOGPROB) {
                    flips += 1;
                }
            }
            flips as f64 / n as f64
        };
        assert!((rate(vec![]) - 0.3).abs() < 0.03);
        assert!((rate(vec!["weather in berlin".into()]) - 0.3).abs() < 0.03);
        assert!((rate(vec!["cheap airport parking".into()]) - 0.15).abs() < 0.03);
    }

    #[test]
    fn pointwise_and_setwise() {
        let w = world(0.0);
        let r = w.respond(&ctx("q", &["dA"], PromptMode::Pointwise), 2).unwrap();
        let lp = r.logprobs.unwrap();
        assert!(lp[0] > lp[1]);
        assert!(((lp[0].exp() + lp[1].exp()) - 1.0).abs() < 1e-12);
        let r = w.respond(&ctx("q", &["dB", "dA", "dC"], PromptMode::Setwise), 3).unwrap();
        assert_eq!(r.logprob(1), Some(WIN_LOGPROB));
        let r = world(1.0).respond(&ctx("q", &["dB", "dA", "dC"], PromptMode::Setwise), 3).unwrap();
        assert_eq!(r.logprob(0), Some(WIN_LOGPROB));
    }

    #[test]
    fn log_sigmoid_stable() {
        assert!((log_sigmoid(0.0) - 0.5f64.ln()).abs() < 1e-15);
        assert!(log_sigmoid(800.0) == 0.0);
        assert!((log_sigmoid(-800.0) + 800.0).abs() < 1e-9);
    }
}
