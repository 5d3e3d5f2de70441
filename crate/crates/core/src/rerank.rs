//! Order-consistent pairwise preferences, all-pairs aggregation, and the
//! pointwise and setwise alternatives.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};
use std::time::Duration;

use rayon::prelude::*;
use serde::Serialize;

use crate::backend::{Backend, BackendRequest, BackendResponse, RequestContext};
use crate::data::{Corpus, Document, Query, RunEntry, RunList};
use crate::error::{Error, Result};
use crate::icl::IclExample;
use crate::num::Real;
use crate::prompt::{render_pairwise, render_pointwise, render_setwise, PromptMode, PromptTemplate, RenderedPrompt, MAX_SET_SIZE};

/// P(D ≻ D′) stored in half units so sums stay exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Preference {
    Loses = 0,
    Uncertain = 1,
    Wins = 2,
}

impl Preference {
    pub fn half_units(self) -> u64 {
        self as u64
    }

    /// The preference of the other document over this one.
    pub fn complement(self) -> Self {
        match self {
            Preference::Loses => Preference::Wins,
            Preference::Uncertain => Preference::Uncertain,
            Preference::Wins => Preference::Loses,
        }
    }

    pub fn value<T: Real>(self) -> T {
        T::from_count(self as usize) / T::lit(2.0)
    }
}

/// Token index 0 strictly above token index 1 (or the reverse). Equal
/// logprobs and unparseable responses are not a preference.
fn prefers(resp: &BackendResponse, winner: usize, loser: usize) -> bool {
    match (resp.logprob(winner), resp.logprob(loser)) {
        (Some(w), Some(l)) => w > l,
        _ => false,
    }
}

/// Forward prompt shows (D, D′) and should answer "1"; backward shows
/// (D′, D) and should answer "2".
///
/// D loses only when both calls strictly favour D′. Ties and unparseable
/// answers are uncertainty, never a consistent loss, so the same two
/// responses read from D′'s side give exactly the complement.
pub fn preference_from_responses(forward: &BackendResponse, backward: &BackendResponse) -> (Preference, bool, bool) {
    let f = prefers(forward, 0, 1);
    let b = prefers(backward, 1, 0);
    let value = if f && b {
        Preference::Wins
    } else if prefers(forward, 1, 0) && prefers(backward, 0, 1) {
        Preference::Loses
    } else {
        Preference::Uncertain
    };
    (value, f, b)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PreferenceOutcome {
    pub query_id: String,
    pub doc_a: String,
    pub doc_b: String,
    pub value: Preference,
    pub forward_consistent: bool,
    pub backward_consistent: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AggregateScore {
    pub query_id: String,
    pub doc_id: String,
    pub half_units: u64,
}

impl AggregateScore {
    pub fn score<T: Real>(&self) -> T {
        T::from_count(self.half_units as usize) / T::lit(2.0)
    }
}

/// e^t / (e^t + e^f), computed without overflow.
pub fn pointwise_probability<T: Real>(logprob_true: T, logprob_false: T) -> T {
    T::one() / (T::one() + (logprob_false - logprob_true).exp())
}

#[derive(Debug, Default)]
struct Counters {
    calls: AtomicU64,
    cache_hits: AtomicU64,
    unparseable: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CallStats {
    pub calls: u64,
    pub cache_hits: u64,
    pub unparseable: u64,
}

impl CallStats {
    pub fn cache_hit_rate(&self) -> f64 {
        if self.calls == 0 {
            0.0
        } else {
            self.cache_hits as f64 / self.calls as f64
        }
    }
}

/// One query's inference setup: the backend, the template (whose mode picks
/// the inference style) and the in-context examples.
pub struct Judge<'a, B: ?Sized> {
    backend: &'a B,
    template: &'a PromptTemplate,
    examples: &'a [IclExample],
    max_retries: u32,
    timeout: Duration,
    set_size: usize,
    counters: Counters,
}

pub struct AllPairs {
    /// Aligned with the candidate order given.
    pub scores: Vec<AggregateScore>,
    pub outcomes: Vec<PreferenceOutcome>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryRerank {
    /// Full reordered list with emitted scores, best first.
    pub ranked: Vec<(String, f64)>,
    /// Number of unordered pairs compared (pairwise mode).
    pub pairs: usize,
    pub stats: CallStats,
}

impl<'a, B: Backend + ?Sized> Judge<'a, B> {
    pub fn new(backend: &'a B, template: &'a PromptTemplate, examples: &'a [IclExample]) -> Self {
        Self {
            backend,
            template,
            examples,
            max_retries: 3,
            timeout: Duration::from_secs(30),
            set_size: 4,
            counters: Counters::default(),
        }
    }

    pub fn with_limits(mut self, max_retries: u32, timeout: Duration) -> Self {
        self.max_retries = max_retries;
        self.timeout = timeout;
        self
    }

    pub fn with_set_size(mut self, set_size: usize) -> Result<Self> {
        if !(2..=MAX_SET_SIZE).contains(&set_size) {
            return Err(Error::Argument(format!("set size must be in 2..={MAX_SET_SIZE}, got {set_size}")));
        }
        self.set_size = set_size;
        Ok(self)
    }

    pub fn stats(&self) -> CallStats {
        CallStats {
            calls: self.counters.calls.load(AtomicOrdering::Relaxed),
            cache_hits: self.counters.cache_hits.load(AtomicOrdering::Relaxed),
            unparseable: self.counters.unparseable.load(AtomicOrdering::Relaxed),
        }
    }

    fn call(&self, q: &Query, docs: &[&Document], prompt: RenderedPrompt) -> Result<BackendResponse> {
        let ctx = RequestContext {
            query_id: q.query_id.clone(),
            query_text: q.text.clone(),
            doc_ids: docs.iter().map(|d| d.doc_id.clone()).collect(),
            example_query_texts: self.examples.iter().map(|e| e.example_query.text.clone()).collect(),
            mode: self.template.mode,
        };
        let req = BackendRequest::new(prompt.text, prompt.answer_tokens)?
            .with_limits(self.max_retries, self.timeout)
            .with_context(ctx);
        let resp = self.backend.score_continuations(&req)?;
        resp.check_against(&req)?;
        self.counters.calls.fetch_add(1, AtomicOrdering::Relaxed);
        if resp.cached {
            self.counters.cache_hits.fetch_add(1, AtomicOrdering::Relaxed);
        }
        if !resp.is_parseable() {
            self.counters.unparseable.fetch_add(1, AtomicOrdering::Relaxed);
        }
        Ok(resp)
    }

    fn expect_mode(&self, mode: PromptMode) -> Result<()> {
        if self.template.mode != mode {
            return Err(Error::Argument(format!("judge template is {}, not {mode}", self.template.mode)));
        }
        Ok(())
    }

    /// Two calls, one per passage order.
    pub fn pairwise_preference(&self, q: &Query, d: &Document, d_prime: &Document) -> Result<PreferenceOutcome> {
        self.expect_mode(PromptMode::Pairwise)?;
        if d.doc_id == d_prime.doc_id {
            return Err(Error::Argument(format!("cannot compare {} with itself", d.doc_id)));
        }
        let wrap = |source: Error| Error::Comparison {
            query_id: q.query_id.clone(),
            doc_a: d.doc_id.clone(),
            doc_b: d_prime.doc_id.clone(),
            source: Box::new(source),
        };
        let fwd_prompt = render_pairwise(q, d, d_prime, self.examples, self.template).map_err(wrap)?;
        let bwd_prompt = render_pairwise(q, d_prime, d, self.examples, self.template).map_err(wrap)?;
        let fwd = self.call(q, &[d, d_prime], fwd_prompt).map_err(wrap)?;
        let bwd = self.call(q, &[d_prime, d], bwd_prompt).map_err(wrap)?;
        let (value, forward_consistent, backward_consistent) = preference_from_responses(&fwd, &bwd);
        Ok(PreferenceOutcome {
            query_id: q.query_id.clone(),
            doc_a: d.doc_id.clone(),
            doc_b: d_prime.doc_id.clone(),
            value,
            forward_consistent,
            backward_consistent,
        })
    }

    /// Each unordered pair is judged once; D gets P and D′ gets 1 − P.
    pub fn allpairs_scores(&self, q: &Query, candidates: &[&Document]) -> Result<AllPairs> {
        self.expect_mode(PromptMode::Pairwise)?;
        let n = candidates.len();
        if n < 2 {
            return Err(Error::Argument(format!("need at least two candidates, got {n}")));
        }
        let mut seen = HashMap::with_capacity(n);
        for (i, c) in candidates.iter().enumerate() {
            if seen.insert(c.doc_id.as_str(), i).is_some() {
                return Err(Error::Argument(format!("duplicate candidate {}", c.doc_id)));
            }
        }
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        let outcomes = pairs
            .par_iter()
            .map(|&(i, j)| self.pairwise_preference(q, candidates[i], candidates[j]))
            .collect::<Result<Vec<_>>>()?;
        let mut half = vec![0u64; n];
        for (&(i, j), o) in pairs.iter().zip(&outcomes) {
            half[i] += o.value.half_units();
            half[j] += o.value.complement().half_units();
        }
        let scores = candidates
            .iter()
            .zip(half)
            .map(|(c, h)| AggregateScore {
                query_id: q.query_id.clone(),
                doc_id: c.doc_id.clone(),
                half_units: h,
            })
            .collect();
        Ok(AllPairs { scores, outcomes })
    }

    /// One call; an unparseable answer scores 1/2.
    pub fn pointwise_score<T: Real>(&self, q: &Query, d: &Document) -> Result<T> {
        self.expect_mode(PromptMode::Pointwise)?;
        let prompt = render_pointwise(q, d, self.examples, self.template)?;
        let resp = self.call(q, &[d], prompt)?;
        Ok(match (resp.logprob(0), resp.logprob(1)) {
            (Some(t), Some(f)) => pointwise_probability(T::lit(t), T::lit(f)),
            _ => T::lit(0.5),
        })
    }

    /// Index of the locally best passage; an unparseable answer keeps the first.
    fn setwise_pick(&self, q: &Query, window: &[&Document]) -> Result<usize> {
        let prompt = render_setwise(q, window, self.examples, self.template)?;
        let resp = self.call(q, window, prompt)?;
        let Some(lps) = resp.logprobs else { return Ok(0) };
        let mut best = 0;
        for (i, lp) in lps.iter().enumerate().skip(1) {
            if *lp > lps[best] {
                best = i;
            }
        }
        Ok(best)
    }

    /// Bubbles winners of overlapping windows, scanned bottom-up, into each of
    /// the top ten positions. Documents never selected keep their input order.
    pub fn setwise_order<'d>(&self, q: &Query, candidates: &[&'d Document]) -> Result<Vec<&'d Document>> {
        self.expect_mode(PromptMode::Setwise)?;
        let mut order = candidates.to_vec();
        let n = order.len();
        let s = self.set_size;
        for p in 0..MAX_SET_SIZE.min(n.saturating_sub(1)) {
            let mut end = n;
            loop {
                let start = p.max(end.saturating_sub(s));
                if end - start < 2 {
                    break;
                }
                let pick = self.setwise_pick(q, &order[start..end])?;
                order[start..=start + pick].rotate_right(1);
                if start == p {
                    break;
                }
                end = start + 1;
            }
        }
        Ok(order)
    }

    /// Reranks the top `depth` documents of `q` in `run`; the rest follow in
    /// their first-stage order with scores below the reranked block.
    pub fn rerank_query(&self, run: &RunList, q: &Query, corpus: &Corpus, depth: usize) -> Result<QueryRerank> {
        if depth < 2 {
            return Err(Error::Argument(format!("rerank depth must be at least 2, got {depth}")));
        }
        let entries = run
            .get(&q.query_id)
            .ok_or_else(|| Error::Lookup(format!("query {} is not in the run", q.query_id)))?;
        let cut = depth.min(entries.len());
        let (head, tail) = entries.split_at(cut);
        let docs = head
            .iter()
            .map(|e| {
                corpus
                    .get(&e.doc_id)
                    .ok_or_else(|| Error::Lookup(format!("document {} is not in the corpus", e.doc_id)))
            })
            .collect::<Result<Vec<_>>>()?;
        let before = self.stats();
        let mut pairs = 0;
        let block: Vec<(String, f64)> = if head.len() < 2 {
            head.iter().map(|e| (e.doc_id.clone(), e.score)).collect()
        } else {
            match self.template.mode {
                PromptMode::Pairwise => {
                    let all = self.allpairs_scores(q, &docs)?;
                    pairs = all.outcomes.len();
                    order_by_aggregate(head, &all.scores)
                }
                PromptMode::Pointwise => {
                    let probs = docs
                        .par_iter()
                        .map(|d| self.pointwise_score::<f64>(q, d))
                        .collect::<Result<Vec<_>>>()?;
                    order_by_probability(head, &probs)
                }
                PromptMode::Setwise => {
                    let ordered = self.setwise_order(q, &docs)?;
                    let m = ordered.len();
                    ordered
                        .iter()
                        .enumerate()
                        .map(|(i, d)| (d.doc_id.clone(), (m - i) as f64))
                        .collect()
                }
            }
        };
        let floor = block.iter().map(|(_, s)| *s).fold(f64::INFINITY, f64::min);
        let mut ranked = block;
        ranked.extend(
            tail.iter()
                .enumerate()
                .map(|(k, e)| (e.doc_id.clone(), floor - (k + 1) as f64)),
        );
        let after = self.stats();
        Ok(QueryRerank {
            ranked,
            pairs,
            stats: CallStats {
                calls: after.calls - before.calls,
                cache_hits: after.cache_hits - before.cache_hits,
                unparseable: after.unparseable - before.unparseable,
            },
        })
    }

    /// Single-query convenience over [`rerank_query`](Self::rerank_query).
    pub fn rerank(&self, run: &RunList, q: &Query, corpus: &Corpus, depth: usize) -> Result<RunList> {
        let r = self.rerank_query(run, q, corpus, depth)?;
        let mut out = RunList::new();
        out.insert_ranked(&q.query_id, r.ranked)?;
        Ok(out)
    }
}

fn first_stage_tiebreak(a: &RunEntry, b: &RunEntry) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.doc_id.cmp(&b.doc_id))
}

/// Aggregate descending, then first-stage score, then doc id. Emitted scores
/// are the aggregate lowered by j·0.5/(n+1) for the j-th member of a tie
/// group, which keeps them strictly decreasing and above the next group.
fn order_by_aggregate(head: &[RunEntry], scores: &[AggregateScore]) -> Vec<(String, f64)> {
    let n = head.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| {
        scores[b]
            .half_units
            .cmp(&scores[a].half_units)
            .then_with(|| first_stage_tiebreak(&head[a], &head[b]))
    });
    let step = 0.5 / (n + 1) as f64;
    let mut out = Vec::with_capacity(n);
    let mut j = 0usize;
    for (pos, &i) in idx.iter().enumerate() {
        if pos > 0 && scores[idx[pos - 1]].half_units == scores[i].half_units {
            j += 1;
        } else {
            j = 0;
        }
        out.push((head[i].doc_id.clone(), scores[i].score::<f64>() - j as f64 * step));
    }
    out
}

/// Equal probabilities are offset by a fraction of the smallest gap between
/// distinct ones, so the written scores keep the tie order.
fn order_by_probability(head: &[RunEntry], probs: &[f64]) -> Vec<(String, f64)> {
    let n = head.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| {
        crate::num::cmp_desc(probs[a], probs[b]).then_with(|| first_stage_tiebreak(&head[a], &head[b]))
    });
    let gap = idx
        .windows(2)
        .map(|w| probs[w[0]] - probs[w[1]])
        .filter(|d| *d > 0.0)
        .fold(1.0, f64::min);
    let step = gap / (n + 1) as f64;
    let mut out = Vec::with_capacity(n);
    let mut j = 0usize;
    for (pos, &i) in idx.iter().enumerate() {
        if pos > 0 && probs[idx[pos - 1]] == probs[i] {
            j += 1;
        } else {
            j = 0;
        }
        out.push((head[i].doc_id.clone(), probs[i] - j as f64 * step));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::OracleWorld;
    use proptest::prelude::*;

    /// Replays fixed logprobs: `fwd` for prompts whose first passage sorts
    /// lower by id, `bwd` for the other order.
    struct Fixed {
        fwd: Vec<f64>,
        bwd: Vec<f64>,
    }

    impl Backend for Fixed {
        fn score_continuations(&self, req: &BackendRequest) -> Result<BackendResponse> {
            let ids = &req.context.as_ref().unwrap().doc_ids;
            let lp = if ids[0] < ids[1] { &self.fwd } else { &self.bwd };
            Ok(BackendResponse::scored(lp.clone()))
        }
    }

    struct Failing;

    impl Backend for Failing {
        fn score_continuations(&self, _: &BackendRequest) -> Result<BackendResponse> {
            Err(Error::Backend {
                message: "down".into(),
                attempts: 4,
                status: Some(503),
            })
        }
    }

    fn docs(n: usize) -> Vec<Document> {
        (0..n).map(|i| Document::new(format!("d{i}"), format!("passage {i}"))).collect()
    }

    fn q() -> Query {
        Query::new("q", "query text")
    }

    fn pairwise() -> PromptTemplate {
        PromptTemplate::default_for(PromptMode::Pairwise)
    }

    #[test]
    fn preference_cases() {
        let d = docs(2);
        let tpl = pairwise();
        let case = |fwd: Vec<f64>, bwd: Vec<f64>| {
            let b = Fixed { fwd, bwd };
            Judge::new(&b, &tpl, &[]).pairwise_preference(&q(), &d[0], &d[1]).unwrap().value
        };
        assert_eq!(case(vec![-0.1, -2.0], vec![-2.0, -0.1]), Preference::Wins);
        assert_eq!(case(vec![-0.1, -2.0], vec![-0.1, -2.0]), Preference::Uncertain);
        assert_eq!(case(vec![-2.0, -0.1], vec![-0.1, -2.0]), Preference::Loses);
        // ties favour neither side
        assert_eq!(case(vec![-1.0, -1.0], vec![-1.0, -1.0]), Preference::Uncertain);
        assert_eq!(case(vec![-1.0, -1.0], vec![-0.1, -2.0]), Preference::Uncertain);
    }

    #[test]
    fn unparseable_is_inconsistent() {
        let fwd = BackendResponse::unparseable("huh");
        let bwd = BackendResponse::scored(vec![-2.0, -0.1]);
        assert_eq!(preference_from_responses(&fwd, &bwd), (Preference::Uncertain, false, true));
    }

    #[test]
    fn inconsistent_pair_splits_half() {
        let d = docs(2);
        let tpl = pairwise();
        let b = Fixed { fwd: vec![-0.1, -2.0], bwd: vec![-0.1, -2.0] };
        let refs: Vec<&Document> = d.iter().collect();
        let all = Judge::new(&b, &tpl, &[]).allpairs_scores(&q(), &refs).unwrap();
        assert_eq!(all.scores[0].score::<f64>(), 0.5);
        assert_eq!(all.scores[1].score::<f32>(), 0.5);
    }

    #[test]
    fn three_doc_oracle_scores() {
        let d = docs(3);
        let mut w = OracleWorld::new(0.0, 1).unwrap();
        for (i, g) in [3.0, 2.0, 1.0].iter().enumerate() {
            w.set_gold("q", &format!("d{i}"), *g);
        }
        let tpl = pairwise();
        let judge = Judge::new(&w, &tpl, &[]);
        let refs: Vec<&Document> = d.iter().collect();
        let all = judge.allpairs_scores(&q(), &refs).unwrap();
        let s: Vec<f64> = all.scores.iter().map(|a| a.score()).collect();
        assert_eq!(s, [2.0, 1.0, 0.0]);
        assert_eq!(judge.stats().calls, 6);
    }

    #[test]
    fn failing_pair_fails_query() {
        let d = docs(3);
        let tpl = pairwise();
        let refs: Vec<&Document> = d.iter().collect();
        let err = Judge::new(&Failing, &tpl, &[]).allpairs_scores(&q(), &refs).err().unwrap();
        assert!(matches!(err, Error::Comparison { .. }));
        assert!(err.is_backend());
    }

    fn world_run(utilities: &[f64]) -> (OracleWorld, RunList, Corpus) {
        let mut w = OracleWorld::new(0.0, 3).unwrap();
        let mut run = RunList::new();
        let mut scored = Vec::new();
        let d = docs(utilities.len());
        for (i, u) in utilities.iter().enumerate() {
            w.set_gold("q", &d[i].doc_id, *u);
            scored.push((d[i].doc_id.clone(), 100.0 - i as f64));
        }
        run.insert_scored("q", scored).unwrap();
        (w, run, Corpus::from_items(d).unwrap())
    }

    #[test]
    fn reverse_gold_is_reversed_within_depth() {
        let (w, run, corpus) = world_run(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let tpl = pairwise();
        let out = Judge::new(&w, &tpl, &[]).rerank_query(&run, &q(), &corpus, 4).unwrap();
        let ids: Vec<&str> = out.ranked.iter().map(|(d, _)| d.as_str()).collect();
        assert_eq!(ids, ["d3", "d2", "d1", "d0", "d4", "d5"]);
        assert!(out.ranked.windows(2).all(|w| w[0].1 > w[1].1));
        assert_eq!(out.pairs, 6);
        assert_eq!(out.stats.calls, 12);
    }

    #[test]
    fn ties_fall_back_to_first_stage() {
        let (_, run, corpus) = world_run(&[0.0; 4]);
        let tpl = pairwise();
        // every comparison inconsistent: all aggregates equal
        let b = Fixed { fwd: vec![-0.1, -2.0], bwd: vec![-0.1, -2.0] };
        let out = Judge::new(&b, &tpl, &[]).rerank_query(&run, &q(), &corpus, 10).unwrap();
        let ids: Vec<&str> = out.ranked.iter().map(|(d, _)| d.as_str()).collect();
        assert_eq!(ids, ["d0", "d1", "d2", "d3"]);
        assert!(out.ranked.windows(2).all(|w| w[0].1 > w[1].1));
    }

    #[test]
    fn depth_and_lookup_errors() {
        let (w, run, corpus) = world_run(&[1.0, 2.0]);
        let tpl = pairwise();
        let j = Judge::new(&w, &tpl, &[]);
        assert!(matches!(j.rerank_query(&run, &q(), &corpus, 1), Err(Error::Argument(_))));
        assert!(matches!(
            j.rerank_query(&run, &Query::new("nope", "x"), &corpus, 5),
            Err(Error::Lookup(_))
        ));
    }

    #[test]
    fn pointwise_rerank_and_formula() {
        assert_eq!(pointwise_probability(-1.0f64, -1.0), 0.5);
        assert!(pointwise_probability(0.0f32, -10.0) > 0.99);
        let mut w = OracleWorld::new(0.0, 3).unwrap();
        let (_, run, corpus) = world_run(&[0.5, -1.0, 2.0]);
        for (i, u) in [0.5, -1.0, 2.0].iter().enumerate() {
            w.set_gold("q", &format!("d{i}"), *u);
        }
        let tpl = PromptTemplate::default_for(PromptMode::Pointwise);
        let out = Judge::new(&w, &tpl, &[]).rerank_query(&run, &q(), &corpus, 3).unwrap();
        let ids: Vec<&str> = out.ranked.iter().map(|(d, _)| d.as_str()).collect();
        assert_eq!(ids, ["d2", "d0", "d1"]);
        assert_eq!(out.stats.calls, 3);
    }

    #[test]
    fn setwise_two_docs_is_one_forward_call() {
        let (w, run, corpus) = world_run(&[1.0, 2.0]);
        let tpl = PromptTemplate::default_for(PromptMode::Setwise);
        let j = Judge::new(&w, &tpl, &[]).with_set_size(2).unwrap();
        let out = j.rerank_query(&run, &q(), &corpus, 2).unwrap();
        assert_eq!(out.ranked[0].0, "d1");
        assert_eq!(out.stats.calls, 1);
        assert!(Judge::new(&w, &tpl, &[]).with_set_size(11).is_err());
    }

    #[test]
    fn setwise_recovers_top_ten() {
        let utilities: Vec<f64> = (0..25).map(|i| ((i * 7) % 25) as f64).collect();
        let (w, run, corpus) = world_run(&utilities);
        let tpl = PromptTemplate::default_for(PromptMode::Setwise);
        for s in 2..=5 {
            let j = Judge::new(&w, &tpl, &[]).with_set_size(s).unwrap();
            let out = j.rerank_query(&run, &q(), &corpus, 25).unwrap();
            let top: Vec<f64> = out.ranked[..10]
                .iter()
                .map(|(d, _)| w.gold("q", d).unwrap())
                .collect();
            let expected: Vec<f64> = (15..25).rev().map(f64::from).collect();
            assert_eq!(top, expected, "set size {s}");
            assert_eq!(out.ranked.len(), 25);
        }
    }

    proptest! {
        #[test]
        fn conservation_and_permutation(utils in proptest::collection::vec(-5i32..5, 2..12), depth in 2usize..14, noise in 0.0f64..1.0, seed in 0u64..1000) {
            let u: Vec<f64> = utils.iter().map(|&x| f64::from(x)).collect();
            let (_, run, corpus) = world_run(&u);
            let mut w = OracleWorld::new(noise, seed).unwrap();
            for (i, x) in u.iter().enumerate() {
                w.set_gold("q", &format!("d{i}"), *x);
            }
            let tpl = pairwise();
            let judge = Judge::new(&w, &tpl, &[]);
            let n = u.len();
            let d = docs(n);
            let refs: Vec<&Document> = d.iter().collect();
            let all = judge.allpairs_scores(&q(), &refs).unwrap();
            let total: u64 = all.scores.iter().map(|s| s.half_units).sum();
            prop_assert_eq!(total, (n * (n - 1)) as u64);
            prop_assert!(all.scores.iter().all(|s| s.half_units <= 2 * (n as u64 - 1)));

            let out = judge.rerank(&run, &q(), &corpus, depth).unwrap();
            let mut ids: Vec<String> = out.get("q").unwrap().iter().map(|e| e.doc_id.clone()).collect();
            ids.sort();
            let mut expected: Vec<String> = d.iter().map(|x| x.doc_id.clone()).collect();
            expected.sort();
            prop_assert_eq!(ids, expected);
        }
    }
}
