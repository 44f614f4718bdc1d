//! Face-verification metrics over scored pair lists.
//!
//! A pair is accepted when `score >= threshold` everywhere in this module.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::backbone::EdgeFaceModel;
use crate::error::{Error, Result};
use crate::io::round_sig;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairEntry {
    pub a: String,
    pub b: String,
    pub genuine: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairList {
    pub entries: Vec<PairEntry>,
}

impl PairList {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub genuine: Vec<f64>,
    pub impostor: Vec<f64>,
}

impl ScoreSet {
    pub fn from_labeled(scores: &[f64], genuine: &[bool]) -> Result<Self> {
        check_labeled(scores, genuine)?;
        let mut s = ScoreSet::default();
        for (&x, &g) in scores.iter().zip(genuine) {
            if g {
                s.genuine.push(x);
            } else {
                s.impostor.push(x);
            }
        }
        Ok(s)
    }

    fn validate(&self) -> Result<()> {
        if self.genuine.iter().chain(&self.impostor).any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("scores must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub a: String,
    pub b: String,
    pub genuine: bool,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    pub reference: String,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreOutcome {
    /// Scored pairs in pair-list order; pairs with a rejected side are skipped.
    pub pairs: Vec<ScoredPair>,
    pub rejects: Vec<Reject>,
}

impl ScoreOutcome {
    pub fn scores(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.score).collect()
    }

    pub fn labels(&self) -> Vec<bool> {
        self.pairs.iter().map(|p| p.genuine).collect()
    }

    pub fn score_set(&self) -> ScoreSet {
        ScoreSet::from_labeled(&self.scores(), &self.labels()).expect("lengths agree")
    }
}

/// Cosine similarity in `f64`, clamped to `[-1, 1]`. Zero vectors score 0.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

/// Scores pairs given a precomputed embedding for every resolvable reference.
pub fn score_with_embeddings(pairs: &PairList, embeddings: &HashMap<String, Vec<f32>>) -> Vec<ScoredPair> {
    pairs
        .entries
        .iter()
        .filter_map(|p| {
            let (ea, eb) = (embeddings.get(&p.a)?, embeddings.get(&p.b)?);
            Some(ScoredPair {
                a: p.a.clone(),
                b: p.b.clone(),
                genuine: p.genuine,
                score: cosine(ea, eb),
            })
        })
        .collect()
}

const EMBED_BATCH: usize = 16;

/// Embeds every unique reference once and scores each pair by cosine
/// similarity. References the loader cannot resolve are reported and their
/// pairs skipped.
pub fn score_pairs<L>(model: &EdgeFaceModel, pairs: &PairList, loader: L) -> Result<ScoreOutcome>
where
    L: Fn(&str) -> Result<Tensor>,
{
    let mut order: Vec<&str> = Vec::new();
    let mut seen = HashMap::new();
    for p in &pairs.entries {
        for r in [p.a.as_str(), p.b.as_str()] {
            if seen.insert(r, ()).is_none() {
                order.push(r);
            }
        }
    }
    let side = model.spec.input_side;
    let per = 3 * side * side;
    let mut loaded: Vec<(&str, Tensor)> = Vec::new();
    let mut rejects = Vec::new();
    for r in order {
        match loader(r) {
            Ok(t) if t.len() == per => loaded.push((r, t)),
            Ok(t) => rejects.push(Reject {
                reference: r.to_string(),
                reason: format!("expected {per} values, got shape {:?}", t.shape()),
            }),
            Err(e) => rejects.push(Reject {
                reference: r.to_string(),
                reason: e.to_string(),
            }),
        }
    }
    let mut embeddings = HashMap::new();
    for chunk in loaded.chunks(EMBED_BATCH) {
        let mut data = Vec::with_capacity(chunk.len() * per);
        for (_, t) in chunk {
            data.extend_from_slice(t.data());
        }
        let batch = Tensor::new(vec![chunk.len(), 3, side, side], data)?;
        let out = model.embed(&batch)?;
        let d = model.spec.head_dim;
        for (i, (r, _)) in chunk.iter().enumerate() {
            embeddings.insert(r.to_string(), out.data()[i * d..(i + 1) * d].to_vec());
        }
    }
    Ok(ScoreOutcome {
        pairs: score_with_embeddings(pairs, &embeddings),
        rejects,
    })
}

fn check_labeled(scores: &[f64], genuine: &[bool]) -> Result<()> {
    if scores.len() != genuine.len() {
        return Err(Error::InvalidArgument(format!(
            "{} scores but {} labels",
            scores.len(),
            genuine.len()
        )));
    }
    if scores.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("scores must be finite".into()));
    }
    Ok(())
}

/// Number of correct decisions at `threshold`.
pub fn correct_at(scores: &[f64], genuine: &[bool], threshold: f64) -> usize {
    scores
        .iter()
        .zip(genuine)
        .filter(|&(&s, &g)| (s >= threshold) == g)
        .count()
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Candidate {
    threshold: f64,
    gap: f64,
}

/// Threshold candidates for a labeled set: midpoints between adjacent sorted
/// unique scores (gap = their distance), plus `-inf` (accept all) and
/// `+inf` (reject all), both with gap 0.
fn candidates(scores: &[f64]) -> Vec<Candidate> {
    let mut u = scores.to_vec();
    u.sort_by(f64::total_cmp);
    u.dedup();
    let mut c = Vec::with_capacity(u.len() + 1);
    if !u.is_empty() {
        c.push(Candidate {
            threshold: f64::NEG_INFINITY,
            gap: 0.0,
        });
        for w in u.windows(2) {
            c.push(Candidate {
                threshold: 0.5 * (w[0] + w[1]),
                gap: w[1] - w[0],
            });
        }
        c.push(Candidate {
            threshold: f64::INFINITY,
            gap: 0.0,
        });
    }
    c
}

/// Threshold maximizing correct decisions on a labeled set. Ties go to the
/// candidate with the largest neighbor gap, then to the lowest threshold.
/// The result is infinite when accepting or rejecting everything wins; an
/// empty set yields 0.
pub fn best_threshold(scores: &[f64], genuine: &[bool]) -> f64 {
    let cands = candidates(scores);
    if cands.is_empty() {
        return 0.0;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]));
    // Sweep ascending: at threshold t, accepted = scores >= t.
    let total_genuine = genuine.iter().filter(|&&g| g).count();
    let mut below_genuine = 0usize;
    let mut below_impostor = 0usize;
    let mut k = 0usize;
    let mut best: Option<(usize, Candidate)> = None;
    for c in cands {
        while k < idx.len() && scores[idx[k]] < c.threshold {
            if genuine[idx[k]] {
                below_genuine += 1;
            } else {
                below_impostor += 1;
            }
            k += 1;
        }
        let correct = (total_genuine - below_genuine) + below_impostor;
        let better = match best {
            None => true,
            Some((bc, b)) => correct > bc || (correct == bc && c.gap > b.gap),
        };
        if better {
            best = Some((correct, c));
        }
    }
    best.map(|(_, c)| c.threshold).unwrap_or(0.0)
}

/// Fold boundaries `floor(i * n / k)` for `i = 0..=k`.
pub fn fold_bounds(n: usize, k: usize) -> Vec<usize> {
    (0..=k).map(|i| i * n / k).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KFoldResult {
    pub accuracy: f64,
    pub folds: Vec<f64>,
    /// Threshold selected on the whole set (may be infinite).
    pub best_threshold: f64,
}

/// Verification accuracy with per-fold thresholds tuned on the remaining
/// folds. Folds are contiguous in pair-list order. With `k = 1` there is no
/// held-out data, so the threshold is tuned on the single fold itself.
pub fn kfold_accuracy(scores: &[f64], genuine: &[bool], k: usize) -> Result<KFoldResult> {
    check_labeled(scores, genuine)?;
    let n = scores.len();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("fold count {k} invalid for {n} pairs")));
    }
    let bounds = fold_bounds(n, k);
    let mut folds = Vec::with_capacity(k);
    for i in 0..k {
        let (lo, hi) = (bounds[i], bounds[i + 1]);
        let t = if k == 1 {
            best_threshold(scores, genuine)
        } else {
            let ts: Vec<f64> = scores[..lo].iter().chain(&scores[hi..]).copied().collect();
            let tg: Vec<bool> = genuine[..lo].iter().chain(&genuine[hi..]).copied().collect();
            best_threshold(&ts, &tg)
        };
        let c = correct_at(&scores[lo..hi], &genuine[lo..hi], t);
        folds.push(c as f64 / (hi - lo) as f64);
    }
    let accuracy = folds.iter().sum::<f64>() / k as f64;
    Ok(KFoldResult {
        accuracy,
        folds,
        best_threshold: best_threshold(scores, genuine),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TarAtFar {
    pub far: f64,
    pub threshold: f64,
    pub tar: f64,
    /// `far < 1 / #impostor`: no observed threshold can realize the target,
    /// so the threshold sits just above the largest impostor score.
    pub insufficient_impostors: bool,
}

/// True-accept rate at each false-accept target.
///
/// The threshold is the smallest candidate `t` (every observed score plus
/// the float just above the largest impostor) whose impostor accept rate
/// `#(impostor >= t) / #impostor` does not exceed the target.
pub fn tar_at_far(s: &ScoreSet, far_targets: &[f64]) -> Result<Vec<TarAtFar>> {
    s.validate()?;
    if s.impostor.is_empty() {
        return Err(Error::InvalidArgument("impostor list is empty".into()));
    }
    if s.genuine.is_empty() {
        return Err(Error::InvalidArgument("genuine list is empty".into()));
    }
    if let Some(f) = far_targets.iter().find(|f| !(0.0..=1.0).contains(*f)) {
        return Err(Error::InvalidArgument(format!("far target {f} outside [0, 1]")));
    }
    let mut imp = s.impostor.clone();
    imp.sort_by(f64::total_cmp);
    let mut gen = s.genuine.clone();
    gen.sort_by(f64::total_cmp);
    let max_imp = *imp.last().expect("non-empty");
    let mut cands: Vec<f64> = imp.iter().chain(&gen).copied().collect();
    cands.push(max_imp.next_up());
    cands.sort_by(f64::total_cmp);
    cands.dedup();
    let n_imp = imp.len() as f64;
    let n_gen = gen.len() as f64;
    // count of sorted values >= t
    let at_least = |v: &[f64], t: f64| v.len() - v.partition_point(|&x| x < t);

    let mut out = Vec::with_capacity(far_targets.len());
    for &far in far_targets {
        // The accept rate is non-increasing in t; the feasible candidates
        // form a suffix, and next_up(max impostor) is always feasible.
        let first = cands.partition_point(|&t| at_least(&imp, t) as f64 / n_imp > far);
        let threshold = cands[first];
        out.push(TarAtFar {
            far,
            threshold,
            tar: at_least(&gen, threshold) as f64 / n_gen,
            insufficient_impostors: far < 1.0 / n_imp,
        });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub far: f64,
    pub tar: f64,
}

/// Operating points for every unique score taken as a threshold, from the
/// highest threshold down, preceded by the reject-all point `(0, 0)`.
pub fn roc(s: &ScoreSet) -> Result<Vec<RocPoint>> {
    s.validate()?;
    if s.genuine.is_empty() || s.impostor.is_empty() {
        return Err(Error::InvalidArgument("ROC needs both genuine and impostor scores".into()));
    }
    let mut all: Vec<(f64, bool)> = s
        .genuine
        .iter()
        .map(|&x| (x, true))
        .chain(s.impostor.iter().map(|&x| (x, false)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (n_gen, n_imp) = (s.genuine.len() as f64, s.impostor.len() as f64);
    let mut pts = vec![RocPoint {
        threshold: f64::INFINITY,
        far: 0.0,
        tar: 0.0,
    }];
    let (mut tg, mut ti) = (0usize, 0usize);
    let mut i = 0;
    while i < all.len() {
        let t = all[i].0;
        while i < all.len() && all[i].0 == t {
            if all[i].1 {
                tg += 1;
            } else {
                ti += 1;
            }
            i += 1;
        }
        pts.push(RocPoint {
            threshold: t,
            far: ti as f64 / n_imp,
            tar: tg as f64 / n_gen,
        });
    }
    Ok(pts)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub accuracy: f64,
    pub best_threshold: f64,
    pub folds: Vec<f64>,
    /// `(far, tar)` pairs.
    pub roc: Vec<(f64, f64)>,
    /// Keyed by the target printed in exponent form, e.g. `"1e-4"`.
    pub tar_at_far: BTreeMap<String, f64>,
    pub flags: Vec<String>,
}

pub fn far_key(far: f64) -> String {
    format!("{far:e}")
}

/// Full report for a labeled score list in pair-list order.
pub fn verification_report(scores: &[f64], genuine: &[bool], folds: usize, far_targets: &[f64]) -> Result<VerificationReport> {
    let kf = kfold_accuracy(scores, genuine, folds)?;
    let set = ScoreSet::from_labeled(scores, genuine)?;
    let curve = roc(&set)?;
    let tars = tar_at_far(&set, far_targets)?;
    let mut flags = Vec::new();
    let mut tar_map = BTreeMap::new();
    for t in &tars {
        if t.insufficient_impostors {
            flags.push(format!(
                "insufficient impostors for far={}: {} impostor scores",
                far_key(t.far),
                set.impostor.len()
            ));
        }
        tar_map.insert(far_key(t.far), round_sig(t.tar));
    }
    Ok(VerificationReport {
        accuracy: round_sig(kf.accuracy),
        best_threshold: round_sig(kf.best_threshold),
        folds: kf.folds.iter().map(|&f| round_sig(f)).collect(),
        roc: curve.iter().map(|p| (round_sig(p.far), round_sig(p.tar))).collect(),
        tar_at_far: tar_map,
        flags,
    })
}
