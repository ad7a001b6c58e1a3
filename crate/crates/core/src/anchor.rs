//! Anchor pools, shareability prediction, and offset interpolation.
//!
//! An anchor is a previously seen placeholder sample: its base KV (computed
//! with no external context), its token embeddings, and the key/value
//! deviations observed under each consuming agent's context. New samples are
//! matched against anchors by embedding distance; a low-entropy weight
//! distribution over matching anchors marks the sample as shareable and its
//! KV is interpolated from the stored deviations.

use crate::error::{Error, Result};
use crate::kv::{apply_offset, KvFragment, KvOffset};
use crate::rope::Rope;
use crate::stats::l2_distance;
use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

/// Identifies the consumer of an offset: (agent id, placeholder ordinal).
pub type AgentSlot = (String, usize);

#[derive(Clone, Debug)]
pub struct Anchor {
    pub id: u64,
    pub tokens: Vec<u16>,
    /// Token embeddings, `[len * model_dim]`.
    pub embeddings: Vec<f32>,
    /// Base KV at start position 0, shared with the store via `Arc`.
    pub base: Arc<KvFragment>,
    /// Placeholder deviations keyed by consuming (agent, slot).
    pub placeholder_offsets: BTreeMap<AgentSlot, KvOffset>,
    /// Deviations of the prefix segment following the placeholder.
    pub prefix_offsets: BTreeMap<AgentSlot, KvOffset>,
    pub access_count: u64,
    pub insertion_index: u64,
}

impl Anchor {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Logical bytes held by this anchor: base KV, embeddings, offsets and
    /// token ids.
    pub fn memory_bytes(&self) -> usize {
        let offsets: usize = self
            .placeholder_offsets
            .values()
            .chain(self.prefix_offsets.values())
            .map(KvOffset::tensor_bytes)
            .sum();
        self.base.tensor_bytes() + self.embeddings.len() * 4 + offsets + self.tokens.len() * 2
    }
}

/// Capacity-bounded collection of anchors for one placeholder name.
///
/// Eviction is least-frequently-used with ties broken toward the
/// earliest-added entry.
#[derive(Clone, Debug)]
pub struct AnchorPool {
    pub name: String,
    pub capacity: usize,
    anchors: Vec<Anchor>,
    next_index: u64,
}

/// Material for a new anchor; id and counters are assigned by the pool.
pub struct AnchorSeed {
    pub tokens: Vec<u16>,
    pub embeddings: Vec<f32>,
    pub base: Arc<KvFragment>,
}

impl AnchorPool {
    pub fn new(name: String, capacity: usize) -> Self {
        Self { name, capacity, anchors: Vec::new(), next_index: 0 }
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Anchor> {
        self.anchors.iter()
    }

    pub fn get(&self, id: u64) -> Result<&Anchor> {
        self.anchors.iter().find(|a| a.id == id).ok_or(Error::UnknownAnchor(id))
    }

    pub fn get_mut(&mut self, id: u64) -> Result<&mut Anchor> {
        self.anchors.iter_mut().find(|a| a.id == id).ok_or(Error::UnknownAnchor(id))
    }

    pub fn find_by_tokens(&self, tokens: &[u16]) -> Option<&Anchor> {
        self.anchors.iter().find(|a| a.tokens == tokens)
    }

    pub fn find_id_by_tokens(&self, tokens: &[u16]) -> Option<u64> {
        self.find_by_tokens(tokens).map(|a| a.id)
    }

    /// Append a new anchor; if the pool exceeds capacity, evict the least
    /// frequently accessed anchor (earliest-added on ties) and return its id.
    pub fn insert(&mut self, seed: AnchorSeed) -> (u64, Option<u64>) {
        let id = self.next_index;
        self.next_index += 1;
        self.anchors.push(Anchor {
            id,
            tokens: seed.tokens,
            embeddings: seed.embeddings,
            base: seed.base,
            placeholder_offsets: BTreeMap::new(),
            prefix_offsets: BTreeMap::new(),
            access_count: 0,
            insertion_index: id,
        });
        let mut evicted = None;
        if self.anchors.len() > self.capacity {
            let victim = self
                .anchors
                .iter()
                .enumerate()
                .min_by_key(|(_, a)| (a.access_count, a.insertion_index))
                .map(|(i, _)| i)
                .expect("pool is nonempty");
            evicted = Some(self.anchors.remove(victim).id);
        }
        (id, evicted)
    }

    /// Count one shareable use of each matched anchor.
    pub fn record_access(&mut self, ids: &[u64]) -> Result<()> {
        for &id in ids {
            self.get_mut(id)?.access_count += 1;
        }
        Ok(())
    }

    pub fn memory_bytes(&self) -> usize {
        self.anchors.iter().map(Anchor::memory_bytes).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Shareable,
    NewAnchor,
}

/// Outcome of a shareability query.
#[derive(Clone, Debug)]
pub struct MatchResult {
    pub verdict: Verdict,
    /// Qualifying anchor ids (length-compatible, required offsets present).
    pub matched: Vec<u64>,
    /// Softmax weights per sample position over `matched`, `[len][matched]`.
    pub per_position: Vec<Vec<f32>>,
    /// Softmax of negative mean distance per anchor, `[matched]`.
    pub scalar: Vec<f32>,
    pub entropy: f32,
    pub threshold: f32,
}

impl MatchResult {
    fn new_anchor() -> Self {
        Self {
            verdict: Verdict::NewAnchor,
            matched: Vec::new(),
            per_position: Vec::new(),
            scalar: Vec::new(),
            entropy: 0.0,
            threshold: 0.0,
        }
    }
}

/// A sample to be matched: embeddings of its tokens plus the offsets it
/// needs. `required` is the consuming (agent, slot) when the caller intends
/// to reuse offsets; `None` for pure similarity checks (response sharing).
pub struct ShareQuery<'a> {
    pub embeddings: &'a [f32],
    pub len: usize,
    pub dim: usize,
    pub required: Option<&'a AgentSlot>,
}

fn softmax_neg(dists: &[f64]) -> Vec<f32> {
    let min = dists.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut out: Vec<f64> = dists.iter().map(|d| libm::exp(min - d)).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    out.into_iter().map(|v| v as f32).collect()
}

/// Per-position and scalar softmax weights of a sample over candidate
/// anchors. Candidate embeddings are truncated to the sample's first `len`
/// positions; every candidate must be at least as long as the sample.
pub fn anchor_weights(
    embeddings: &[f32],
    len: usize,
    dim: usize,
    candidates: &[&Anchor],
) -> Result<(Vec<Vec<f32>>, Vec<f32>)> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    debug_assert_eq!(embeddings.len(), len * dim);
    for c in candidates {
        if c.len() < len {
            return Err(Error::LengthMismatch { expected: len, got: c.len() });
        }
    }
    let mut per_position = Vec::with_capacity(len);
    let mut mean_dist = alloc::vec![0.0f64; candidates.len()];
    for i in 0..len {
        let sample_row = &embeddings[i * dim..(i + 1) * dim];
        let dists: Vec<f64> = candidates
            .iter()
            .map(|c| l2_distance(sample_row, &c.embeddings[i * dim..(i + 1) * dim]))
            .collect();
        for (acc, d) in mean_dist.iter_mut().zip(&dists) {
            *acc += d;
        }
        per_position.push(softmax_neg(&dists));
    }
    for acc in &mut mean_dist {
        *acc /= len as f64;
    }
    let scalar = softmax_neg(&mean_dist);
    Ok((per_position, scalar))
}

fn entropy(weights: &[f32]) -> f32 {
    let mut h = 0.0f64;
    for &w in weights {
        if w > 0.0 {
            h -= (w as f64) * libm::log(w as f64);
        }
    }
    h as f32
}

/// Decide whether a sample can reuse anchor deviations.
///
/// The sample is a new anchor when the pool is empty, when it is longer than
/// every stored anchor, when no length-compatible anchor carries the
/// required offsets, or when the weight entropy over qualifying anchors
/// exceeds `gamma * ln(count)`. `gamma == 0` disables sharing entirely,
/// matching the no-cache-sharing baseline.
pub fn predict_shareability(pool: &AnchorPool, query: &ShareQuery<'_>, gamma: f32) -> Result<MatchResult> {
    if !(0.0..=1.0).contains(&gamma) || !gamma.is_finite() {
        return Err(Error::InvalidGamma(gamma));
    }
    if pool.is_empty() || gamma == 0.0 {
        return Ok(MatchResult::new_anchor());
    }
    let max_len = pool.iter().map(Anchor::len).max().unwrap_or(0);
    if query.len > max_len {
        return Ok(MatchResult::new_anchor());
    }
    let qualifying: Vec<&Anchor> = pool
        .iter()
        .filter(|a| {
            a.len() >= query.len
                && match query.required {
                    Some(slot) => {
                        a.placeholder_offsets.contains_key(slot) && a.prefix_offsets.contains_key(slot)
                    }
                    None => true,
                }
        })
        .collect();
    if qualifying.is_empty() {
        return Ok(MatchResult::new_anchor());
    }
    let (per_position, scalar) = anchor_weights(query.embeddings, query.len, query.dim, &qualifying)?;
    let h = entropy(&scalar);
    let threshold = gamma * libm::logf(qualifying.len() as f32);
    let verdict = if h > threshold { Verdict::NewAnchor } else { Verdict::Shareable };
    Ok(MatchResult {
        verdict,
        matched: qualifying.iter().map(|a| a.id).collect(),
        per_position,
        scalar,
        entropy: h,
        threshold,
    })
}

/// Combine matched anchors' placeholder offsets with per-position weights
/// and replay them onto the sample's base KV at `target_start`.
pub fn approximate_placeholder_kv(
    pool: &AnchorPool,
    matched: &MatchResult,
    sample_base: &KvFragment,
    slot: &AgentSlot,
    target_start: i64,
    rope: &Rope,
) -> Result<KvFragment> {
    let combined = combine_offsets(pool, matched, sample_base, slot, OffsetKind::Placeholder)?;
    apply_offset(sample_base, &combined, target_start, rope)
}

/// Combine matched anchors' prefix offsets with scalar weights and replay
/// them onto the prefix segment's base KV at `target_start`.
pub fn approximate_prefix_kv(
    pool: &AnchorPool,
    matched: &MatchResult,
    prefix_base: &KvFragment,
    slot: &AgentSlot,
    target_start: i64,
    rope: &Rope,
) -> Result<KvFragment> {
    let combined = combine_offsets(pool, matched, prefix_base, slot, OffsetKind::Prefix)?;
    apply_offset(prefix_base, &combined, target_start, rope)
}

enum OffsetKind {
    Placeholder,
    Prefix,
}

fn combine_offsets(
    pool: &AnchorPool,
    matched: &MatchResult,
    base: &KvFragment,
    slot: &AgentSlot,
    kind: OffsetKind,
) -> Result<KvOffset> {
    let mut combined = KvOffset::zeros(base.num_layers(), base.width, base.start, base.len);
    for (ai, &id) in matched.matched.iter().enumerate() {
        let anchor = pool.get(id)?;
        let missing = || Error::MissingOffset { anchor: id, agent: slot.0.clone(), slot: slot.1 };
        let stored = match kind {
            OffsetKind::Placeholder => anchor.placeholder_offsets.get(slot).ok_or_else(missing)?,
            OffsetKind::Prefix => anchor.prefix_offsets.get(slot).ok_or_else(missing)?,
        };
        match kind {
            // Placeholder offsets may be longer than the sample; use the
            // first `len` positions with the per-position weight rows.
            OffsetKind::Placeholder => {
                if stored.len < base.len {
                    return Err(Error::LengthMismatch { expected: base.len, got: stored.len });
                }
                for (cl, sl) in combined.layers.iter_mut().zip(&stored.layers) {
                    for i in 0..base.len {
                        let w = matched.per_position[i][ai];
                        let r = i * base.width..(i + 1) * base.width;
                        for (c, s) in cl.keys[r.clone()].iter_mut().zip(&sl.keys[r.clone()]) {
                            *c += w * s;
                        }
                        for (c, s) in cl.values[r.clone()].iter_mut().zip(&sl.values[r]) {
                            *c += w * s;
                        }
                    }
                }
            }
            // Prefix offsets must match the template's prefix length exactly
            // and carry one scalar weight per anchor.
            OffsetKind::Prefix => {
                if stored.len != base.len {
                    return Err(Error::LengthMismatch { expected: base.len, got: stored.len });
                }
                let w = matched.scalar[ai];
                for (cl, sl) in combined.layers.iter_mut().zip(&stored.layers) {
                    for (c, s) in cl.keys.iter_mut().zip(&sl.keys) {
                        *c += w * s;
                    }
                    for (c, s) in cl.values.iter_mut().zip(&sl.values) {
                        *c += w * s;
                    }
                }
            }
        }
    }
    Ok(combined)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kv::LayerKv;
    use alloc::string::ToString;
    use alloc::vec;

    fn frag(len: usize, width: usize, fill: f32) -> Arc<KvFragment> {
        let mut f = KvFragment::empty(1, width, 0);
        f.len = len;
        f.layers[0] = LayerKv { keys: vec![fill; len * width], values: vec![fill; len * width] };
        Arc::new(f)
    }

    fn seed_with_embeddings(emb: Vec<f32>, len: usize, width: usize) -> AnchorSeed {
        AnchorSeed { tokens: vec![0; len], embeddings: emb, base: frag(len, width, 0.1) }
    }

    fn slot() -> AgentSlot {
        ("m".to_string(), 1)
    }

    fn give_offsets(pool: &mut AnchorPool, id: u64, len: usize, width: usize, fill: f32) {
        let a = pool.get_mut(id).unwrap();
        let mut off = KvOffset::zeros(1, width, 0, len);
        off.layers[0].keys.iter_mut().for_each(|x| *x = fill);
        off.layers[0].values.iter_mut().for_each(|x| *x = fill);
        a.placeholder_offsets.insert(slot(), off.clone());
        a.prefix_offsets.insert(slot(), off);
    }

    #[test]
    fn singleton_candidate_gets_weight_one() {
        let mut pool = AnchorPool::new("p".into(), 4);
        let (id, _) = pool.insert(seed_with_embeddings(vec![1.0, 0.0], 1, 2));
        give_offsets(&mut pool, id, 1, 2, 0.0);
        let anchors: Vec<&Anchor> = pool.iter().collect();
        let (pp, sc) = anchor_weights(&[0.5, 0.5], 1, 2, &anchors).unwrap();
        assert_eq!(pp, vec![vec![1.0]]);
        assert_eq!(sc, vec![1.0]);
    }

    #[test]
    fn equidistant_pair_splits_evenly() {
        let mut pool = AnchorPool::new("p".into(), 4);
        pool.insert(seed_with_embeddings(vec![1.0, 0.0], 1, 2));
        pool.insert(seed_with_embeddings(vec![-1.0, 0.0], 1, 2));
        let anchors: Vec<&Anchor> = pool.iter().collect();
        let (pp, sc) = anchor_weights(&[0.0, 0.0], 1, 2, &anchors).unwrap();
        assert!((pp[0][0] - 0.5).abs() < 1e-6 && (pp[0][1] - 0.5).abs() < 1e-6);
        assert!((sc[0] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn distance_gap_saturates_softmax() {
        // sample identical to A, B at distance 12 > 10: hand-computed
        // softmax gives A's weight 1/(1+e^-12) > 0.99.
        let mut pool = AnchorPool::new("p".into(), 4);
        pool.insert(seed_with_embeddings(vec![0.0, 0.0], 1, 2));
        pool.insert(seed_with_embeddings(vec![12.0, 0.0], 1, 2));
        let anchors: Vec<&Anchor> = pool.iter().collect();
        let (pp, _) = anchor_weights(&[0.0, 0.0], 1, 2, &anchors).unwrap();
        assert!(pp[0][0] > 0.99, "got {}", pp[0][0]);
    }

    #[test]
    fn empty_pool_is_new_anchor() {
        let pool = AnchorPool::new("p".into(), 4);
        let q = ShareQuery { embeddings: &[0.0, 0.0], len: 1, dim: 2, required: None };
        let m = predict_shareability(&pool, &q, 0.3).unwrap();
        assert_eq!(m.verdict, Verdict::NewAnchor);
    }

    #[test]
    fn uniform_weights_exceed_threshold() {
        // 4 equidistant anchors: H = ln 4 > 0.3 ln 4.
        let mut pool = AnchorPool::new("p".into(), 8);
        for (x, y) in [(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0)] {
            pool.insert(seed_with_embeddings(vec![x, y], 1, 2));
        }
        let q = ShareQuery { embeddings: &[0.0, 0.0], len: 1, dim: 2, required: None };
        let m = predict_shareability(&pool, &q, 0.3).unwrap();
        assert_eq!(m.verdict, Verdict::NewAnchor);
        assert!((m.entropy - libm::logf(4.0)).abs() < 1e-5);
    }

    #[test]
    fn saturated_match_is_shareable() {
        let mut pool = AnchorPool::new("p".into(), 8);
        pool.insert(seed_with_embeddings(vec![0.0, 0.0], 1, 2));
        pool.insert(seed_with_embeddings(vec![40.0, 0.0], 1, 2));
        let q = ShareQuery { embeddings: &[0.0, 0.0], len: 1, dim: 2, required: None };
        let m = predict_shareability(&pool, &q, 0.3).unwrap();
        assert_eq!(m.verdict, Verdict::Shareable);
        assert!(m.entropy < 1e-6);
    }

    #[test]
    fn longer_than_all_anchors_is_new() {
        let mut pool = AnchorPool::new("p".into(), 8);
        pool.insert(seed_with_embeddings(vec![0.0, 0.0], 1, 2));
        let emb = [0.0, 0.0, 0.0, 0.0];
        let q = ShareQuery { embeddings: &emb, len: 2, dim: 2, required: None };
        assert_eq!(predict_shareability(&pool, &q, 0.9).unwrap().verdict, Verdict::NewAnchor);
    }

    #[test]
    fn gamma_zero_disables_sharing() {
        let mut pool = AnchorPool::new("p".into(), 8);
        pool.insert(seed_with_embeddings(vec![0.0, 0.0], 1, 2));
        let q = ShareQuery { embeddings: &[0.0, 0.0], len: 1, dim: 2, required: None };
        assert_eq!(predict_shareability(&pool, &q, 0.0).unwrap().verdict, Verdict::NewAnchor);
        assert!(predict_shareability(&pool, &q, 1.5).is_err());
    }

    #[test]
    fn missing_required_offsets_excludes_anchor() {
        let mut pool = AnchorPool::new("p".into(), 8);
        pool.insert(seed_with_embeddings(vec![0.0, 0.0], 1, 2));
        let s = slot();
        let q = ShareQuery { embeddings: &[0.0, 0.0], len: 1, dim: 2, required: Some(&s) };
        assert_eq!(predict_shareability(&pool, &q, 0.5).unwrap().verdict, Verdict::NewAnchor);
    }

    #[test]
    fn lfu_eviction_with_insertion_tiebreak() {
        let mut pool = AnchorPool::new("p".into(), 2);
        let (a, _) = pool.insert(seed_with_embeddings(vec![0.0], 1, 1));
        let (b, _) = pool.insert(seed_with_embeddings(vec![1.0], 1, 1));
        pool.record_access(&[a]).unwrap();
        pool.record_access(&[a]).unwrap();
        pool.record_access(&[b]).unwrap();
        let (_, evicted) = pool.insert(seed_with_embeddings(vec![2.0], 1, 1));
        // counts: a=2, b=1, new=0 -> the new anchor itself is evicted
        assert_eq!(evicted, Some(2));
        // equal counts evict the earliest inserted
        let mut pool = AnchorPool::new("q".into(), 2);
        let (a, _) = pool.insert(seed_with_embeddings(vec![0.0], 1, 1));
        let (b, _) = pool.insert(seed_with_embeddings(vec![1.0], 1, 1));
        pool.record_access(&[a, b]).unwrap();
        pool.record_access(&[a, b]).unwrap();
        let (_, evicted) = pool.insert(seed_with_embeddings(vec![2.0], 1, 1));
        assert_eq!(evicted, Some(2));
        pool.record_access(&[a, b]).unwrap_err();
    }

    #[test]
    fn capacity_never_exceeded() {
        let mut pool = AnchorPool::new("p".into(), 20);
        let mut rng = crate::rng::SplitMix64::new(5);
        for i in 0..100 {
            pool.insert(seed_with_embeddings(vec![i as f32], 1, 1));
            assert!(pool.len() <= 20);
            let ids: Vec<u64> = pool.iter().map(|a| a.id).collect();
            if !ids.is_empty() {
                let pick = ids[rng.next_below(ids.len())];
                pool.record_access(&[pick]).unwrap();
            }
        }
    }

    #[test]
    fn weighted_approximation_respects_weights() {
        let rope = Rope::new(2, 10_000.0);
        let mut pool = AnchorPool::new("p".into(), 4);
        let (a, _) = pool.insert(seed_with_embeddings(vec![0.0, 0.0], 1, 2));
        let (b, _) = pool.insert(seed_with_embeddings(vec![50.0, 0.0], 1, 2));
        give_offsets(&mut pool, a, 1, 2, 0.25);
        give_offsets(&mut pool, b, 1, 2, 9.0);
        let s = slot();
        let q = ShareQuery { embeddings: &[0.0, 0.0], len: 1, dim: 2, required: Some(&s) };
        let m = predict_shareability(&pool, &q, 0.5).unwrap();
        assert_eq!(m.verdict, Verdict::Shareable);
        // weight on b is e^-50: the second anchor's offset is ignored to f32
        let base = frag(1, 2, 0.5);
        let out = approximate_placeholder_kv(&pool, &m, &base, &s, 0, &rope).unwrap();
        for k in &out.layers[0].keys {
            assert!((k - 0.75).abs() < 1e-6);
        }
    }

    #[test]
    fn opposite_offsets_cancel() {
        let rope = Rope::new(2, 10_000.0);
        let mut pool = AnchorPool::new("p".into(), 4);
        let (a, _) = pool.insert(seed_with_embeddings(vec![1.0, 0.0], 1, 2));
        let (b, _) = pool.insert(seed_with_embeddings(vec![-1.0, 0.0], 1, 2));
        give_offsets(&mut pool, a, 1, 2, 0.3);
        give_offsets(&mut pool, b, 1, 2, -0.3);
        let s = slot();
        let q = ShareQuery { embeddings: &[0.0, 0.0], len: 1, dim: 2, required: Some(&s) };
        let m = predict_shareability(&pool, &q, 1.0).unwrap();
        let base = frag(1, 2, 0.5);
        let out = approximate_prefix_kv(&pool, &m, &base, &s, 0, &rope).unwrap();
        for k in out.layers[0].keys.iter().chain(&out.layers[0].values) {
            assert!((k - 0.5).abs() < 1e-6);
        }
    }
}
