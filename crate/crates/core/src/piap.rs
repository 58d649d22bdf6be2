//! Positioned incremental affinity propagation.
//!
//! Similarities combine embedding cosine with a motion shrinkage that grows
//! with the squared, diagonal-normalized displacement between face centers.
//! The first batch of detections is clustered with plain affinity
//! propagation started from zero messages; later batches extend the
//! responsibility and availability matrices by copying the rows and columns
//! of the most similar previously seen detection and then resume message
//! passing from that warm state.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{Detection, StreamHeader, BASELINE_FPS};

/// Stable identity label handed out by [`StreamClusterer`].
pub type ClusterId = u32;

/// Self-similarity written on the diagonal of the similarity matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Preference {
    /// Median of the off-diagonal similarities.
    Median,
    /// Smallest off-diagonal similarity; yields few clusters.
    Minimum,
    Value(f64),
}

/// Damping of the streaming clusterer. Lower values make message passing
/// oscillate on streams where many same-identity pairs have near-zero
/// similarity.
pub const STREAM_DAMPING: f64 = 0.9;

/// Message settling tolerance of the streaming clusterer. Warm-started
/// steps start from an assignment that already looks stable, so assignment
/// stability alone ends them before new points have found their cluster.
pub const STREAM_MESSAGE_TOL: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApConfig {
    /// Weight on the previous message, in `[0, 1)`.
    pub damping: f64,
    pub max_iters: usize,
    /// Number of consecutive identical assignment vectors that ends the loop.
    pub stable_window: usize,
    /// When set, the loop also waits until no message moved by more than
    /// this fraction of the largest similarity magnitude in the last sweep.
    pub message_tol: Option<f64>,
}

/// Plain batch settings: damping 0.5, 200 sweeps, 10 stable sweeps.
impl Default for ApConfig {
    fn default() -> Self {
        ApConfig {
            damping: 0.5,
            max_iters: 200,
            stable_window: 10,
            message_tol: None,
        }
    }
}

impl ApConfig {
    /// Settings of the streaming clusterer: heavier damping, and a longer
    /// stability window because heavily damped messages drift slowly.
    pub fn streaming() -> Self {
        ApConfig {
            damping: STREAM_DAMPING,
            max_iters: 200,
            stable_window: 15,
            message_tol: Some(STREAM_MESSAGE_TOL),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::Parameter(format!(
                "damping must lie in [0, 1), got {}",
                self.damping
            )));
        }
        if let Some(t) = self.message_tol {
            if !(t > 0.0) {
                return Err(Error::Parameter(format!("message_tol must be positive, got {t}")));
            }
        }
        if self.stable_window == 0 || self.max_iters == 0 {
            return Err(Error::Parameter(
                "max_iters and stable_window must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiapConfig {
    pub ap: ApConfig,
    pub preference: Preference,
    /// Use `-shrk * cos` instead of the default `-shrk * (1 - cos)`.
    pub literal_similarity: bool,
    /// A data-driven preference is lowered to at least this many units of
    /// `kappa * 30 / fps` below zero. Without it a window holding a single
    /// face takes its preference from same-face pairs and splits the face.
    pub preference_floor: Option<f64>,
}

impl PiapConfig {
    fn floor_preference(&self, pref: f64, hdr: &StreamHeader) -> f64 {
        match (self.preference, self.preference_floor) {
            (Preference::Value(_), _) | (_, None) => pref,
            (_, Some(f)) => pref.min(-f * hdr.quality_scale * BASELINE_FPS / hdr.fps),
        }
    }
}

/// Similarity over `dets` as the streaming clusterer builds it: preference
/// from `cfg.preference`, lowered by `cfg.preference_floor`.
pub fn stream_similarity(dets: &[Detection], hdr: &StreamHeader, cfg: &PiapConfig) -> Result<SimilarityMatrix> {
    let s = build_similarity(dets, hdr, cfg.preference, cfg.literal_similarity)?;
    let (n, mut data) = (s.n, s.data);
    if n > 0 {
        let pref = cfg.floor_preference(data[0], hdr);
        for k in 0..n {
            data[k * n + k] = pref;
        }
    }
    SimilarityMatrix::from_vec(n, data)
}

impl Default for PiapConfig {
    fn default() -> Self {
        PiapConfig {
            ap: ApConfig::streaming(),
            preference: Preference::Minimum,
            literal_similarity: false,
            preference_floor: Some(0.5),
        }
    }
}

// ---------------------------------------------------------------------------
// Similarities

fn unit_embedding(embedding: &[f64], index: usize) -> Result<Vec<f64>> {
    let norm = embedding.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::DegenerateEmbedding { index });
    }
    Ok(embedding.iter().map(|v| v / norm).collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Similarity from a precomputed cosine and the two face centers.
fn shrunk_similarity(
    pi: (f64, f64),
    pj: (f64, f64),
    cos: f64,
    hdr: &StreamHeader,
    literal: bool,
) -> f64 {
    let cos = cos.clamp(-1.0, 1.0);
    let (dx, dy) = (pi.0 - pj.0, pi.1 - pj.1);
    let diag = hdr.diagonal();
    let shrk = hdr.quality_scale * (BASELINE_FPS / hdr.fps) * (dx * dx + dy * dy) / (diag * diag);
    let s = if literal {
        -shrk * cos
    } else {
        -shrk * (1.0 - cos)
    };
    // -0.0 from a zero shrinkage reads oddly in dumps.
    s + 0.0
}

/// Pairwise similarity between two detections.
///
/// `s = -kappa * (30 / fps) * (|P_i - P_j| / diag)^2 * (1 - cos(f_i, f_j))`,
/// or `-shrk * cos` when `literal` is set.
pub fn positioned_similarity(
    di: &Detection,
    dj: &Detection,
    hdr: &StreamHeader,
    literal: bool,
) -> Result<f64> {
    if di.embedding.len() != dj.embedding.len() {
        return Err(Error::Input(format!(
            "embedding lengths differ: {} vs {}",
            di.embedding.len(),
            dj.embedding.len()
        )));
    }
    let ui = unit_embedding(&di.embedding, 0)?;
    let uj = unit_embedding(&dj.embedding, 1)?;
    Ok(shrunk_similarity(
        di.center(),
        dj.center(),
        dot(&ui, &uj),
        hdr,
        literal,
    ))
}

/// Dense row-major `n x n` similarity matrix; the diagonal holds the preference.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SimilarityMatrix {
    /// Wrap a row-major buffer. Entries must be finite.
    pub fn from_vec(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::Input(format!(
                "expected {} entries for a {n}x{n} matrix, got {}",
                n * n,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("similarity entries must be finite".into()));
        }
        Ok(SimilarityMatrix { n, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Input("similarity rows must be square".into()));
        }
        Self::from_vec(n, rows.concat())
    }

    /// Build from off-diagonal entries and a preference mode.
    pub fn with_preference(n: usize, mut data: Vec<f64>, preference: Preference) -> Result<Self> {
        let p = match preference {
            Preference::Value(p) => p,
            Preference::Median => median_off_diagonal(n, &data),
            Preference::Minimum => min_off_diagonal(n, &data),
        };
        for k in 0..n {
            data[k * n + k] = p;
        }
        Self::from_vec(n, data)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Diagonal entry of the first point (all diagonals share it when built
    /// through [`build_similarity`]).
    pub fn preference(&self) -> Option<f64> {
        (self.n > 0).then(|| self.data[0])
    }
}

/// Median over all `i != j` entries; 0 when there are none.
pub fn median_off_diagonal(n: usize, data: &[f64]) -> f64 {
    let symmetric = (0..n).all(|i| (0..i).all(|j| data[i * n + j] == data[j * n + i]));
    let mut vals: Vec<f64> = Vec::with_capacity(n * n.saturating_sub(1));
    for i in 0..n {
        let lo = if symmetric { i + 1 } else { 0 };
        for j in lo..n {
            if i != j {
                vals.push(data[i * n + j]);
            }
        }
    }
    median_in_place(&mut vals)
}

/// Minimum over all `i != j` entries; 0 when there are none.
pub fn min_off_diagonal(n: usize, data: &[f64]) -> f64 {
    let mut out = f64::INFINITY;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                out = out.min(data[i * n + j]);
            }
        }
    }
    if out.is_finite() {
        out
    } else {
        0.0
    }
}

fn median_in_place(vals: &mut [f64]) -> f64 {
    let m = vals.len();
    if m == 0 {
        return 0.0;
    }
    let k = m / 2;
    let (left, mid, _) = vals.select_nth_unstable_by(k, f64::total_cmp);
    let upper = *mid;
    if m % 2 == 1 {
        upper
    } else {
        let lower = left.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

/// Pairwise positioned similarities over `dets`, diagonal set by `preference`.
pub fn build_similarity(
    dets: &[Detection],
    hdr: &StreamHeader,
    preference: Preference,
    literal: bool,
) -> Result<SimilarityMatrix> {
    if dets.is_empty() {
        return Err(Error::Input("need at least one detection".into()));
    }
    let units = dets
        .iter()
        .enumerate()
        .map(|(i, d)| {
            if d.embedding.len() != hdr.embedding_dim {
                return Err(Error::Input(format!(
                    "detection {i} has embedding length {}, expected {}",
                    d.embedding.len(),
                    hdr.embedding_dim
                )));
            }
            unit_embedding(&d.embedding, i)
        })
        .collect::<Result<Vec<_>>>()?;
    let n = dets.len();
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..i {
            let s = shrunk_similarity(
                dets[i].center(),
                dets[j].center(),
                dot(&units[i], &units[j]),
                hdr,
                literal,
            );
            data[i * n + j] = s;
            data[j * n + i] = s;
        }
    }
    SimilarityMatrix::with_preference(n, data, preference)
}

/// Σ s(i, c_i): exemplars contribute their preference.
pub fn net_similarity(s: &SimilarityMatrix, assignments: &[usize]) -> f64 {
    assignments
        .iter()
        .enumerate()
        .map(|(i, &c)| s.get(i, c))
        .sum()
}

// ---------------------------------------------------------------------------
// Message passing

/// Responsibility/availability state with the current exemplar assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterState {
    n: usize,
    pub responsibility: Vec<f64>,
    pub availability: Vec<f64>,
    /// `assignments[i]` is the index of the exemplar of point `i`.
    pub assignments: Vec<usize>,
    /// Number of points covered at the last convergence.
    pub converged_len: usize,
    pub damping: f64,
    pub converged: bool,
    /// Sweeps run by the last propagation.
    pub iterations: usize,
}

impl ClusterState {
    pub fn empty(damping: f64) -> Self {
        Self::zeros(0, damping)
    }

    /// All messages zero, every point its own exemplar.
    pub fn zeros(n: usize, damping: f64) -> Self {
        ClusterState {
            n,
            responsibility: vec![0.0; n * n],
            availability: vec![0.0; n * n],
            assignments: (0..n).collect(),
            converged_len: 0,
            damping,
            converged: false,
            iterations: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn r(&self, i: usize, j: usize) -> f64 {
        self.responsibility[i * self.n + j]
    }

    pub fn a(&self, i: usize, j: usize) -> f64 {
        self.availability[i * self.n + j]
    }

    /// Sorted, deduplicated exemplar indices.
    pub fn exemplars(&self) -> Vec<usize> {
        let mut e = self.assignments.clone();
        e.sort_unstable();
        e.dedup();
        e
    }

    pub fn cluster_count(&self) -> usize {
        self.exemplars().len()
    }
}

fn argmax_sum(a: &[f64], b: &[f64]) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (j, (x, y)) in a.iter().zip(b).enumerate() {
        let v = x + y;
        if v > best_v {
            best_v = v;
            best = j;
        }
    }
    best
}

/// Copy of `s` with deterministic noise of relative size 1e-12 added, so
/// that exact ties (a preference equal to some similarity, coincident
/// points) cannot make the messages oscillate between equivalent solutions.
fn break_ties(s: &[f64]) -> Vec<f64> {
    let scale = 1e-12 * s.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    s.iter().map(|v| v + scale * rng.random::<f64>()).collect()
}

/// Run damped message passing from the messages already in `state` until
/// the assignment vector has been identical for `stable_window` sweeps or
/// `max_iters` sweeps have run. One sweep is a full responsibility update
/// followed by a full availability update.
pub fn propagate(s: &SimilarityMatrix, state: &mut ClusterState, cfg: &ApConfig) -> Result<()> {
    cfg.validate()?;
    let n = s.dim();
    if state.n != n {
        return Err(Error::State(format!(
            "state has dimension {}, similarity {n}",
            state.n
        )));
    }
    state.damping = cfg.damping;
    state.iterations = 0;
    if n <= 1 {
        state.assignments = (0..n).collect();
        state.converged = true;
        state.converged_len = n;
        return Ok(());
    }
    let lam = cfg.damping;
    let keep = 1.0 - lam;
    let broken = break_ties(s.as_slice());
    let sd = broken.as_slice();
    let tol = cfg
        .message_tol
        .map(|t| t * sd.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    let r = &mut state.responsibility;
    let a = &mut state.availability;
    let mut colsum = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut current = state.assignments.clone();
    let mut run = 0usize;
    state.converged = false;

    for iter in 0..cfg.max_iters {
        let mut finite = true;
        let mut moved = 0.0f64;
        let mut changed = false;
        // Movement only matters once the assignment could end the loop.
        let track = tol.is_some() && run + 1 >= cfg.stable_window;
        colsum.iter_mut().for_each(|c| *c = 0.0);

        // Responsibilities.
        for i in 0..n {
            let row = i * n;
            let srow = &sd[row..row + n];
            let arow = &a[row..row + n];
            let mut max1 = f64::NEG_INFINITY;
            let mut max2 = f64::NEG_INFINITY;
            let mut idx1 = 0;
            for (j, (sv, av)) in srow.iter().zip(arow).enumerate() {
                let v = sv + av;
                if v > max1 {
                    max2 = max1;
                    max1 = v;
                    idx1 = j;
                } else if v > max2 {
                    max2 = v;
                }
            }
            let rrow = &mut r[row..row + n];
            let at_max = lam * rrow[idx1] + keep * (srow[idx1] - max2);
            if track {
                moved = moved.max((at_max - rrow[idx1]).abs());
                let (lo, hi) = rrow.split_at_mut(idx1);
                let others = lo.iter_mut().zip(srow).chain(hi[1..].iter_mut().zip(&srow[idx1 + 1..]));
                for (rv, sv) in others {
                    let new = lam * *rv + keep * (sv - max1);
                    moved = moved.max((new - *rv).abs());
                    *rv = new;
                }
            } else {
                for (rv, sv) in rrow.iter_mut().zip(srow) {
                    *rv = lam * *rv + keep * (sv - max1);
                }
            }
            rrow[idx1] = at_max;
            diag[i] = rrow[i];
            for (c, rv) in colsum.iter_mut().zip(rrow.iter()) {
                *c += rv.max(0.0);
            }
            let total: f64 = rrow.iter().sum();
            finite &= total.is_finite();
        }

        // Availabilities; column sums were gathered with the responsibilities.
        for j in 0..n {
            colsum[j] += diag[j] - diag[j].max(0.0);
        }
        for i in 0..n {
            let row = i * n;
            let rrow = &r[row..row + n];
            let arow = &mut a[row..row + n];
            let self_avail = lam * arow[i] + keep * (colsum[i] - diag[i]);
            if track {
                moved = moved.max((self_avail - arow[i]).abs());
                for (j, ((av, rv), c)) in arow.iter_mut().zip(rrow).zip(&colsum).enumerate() {
                    let new = lam * *av + keep * (c - rv.max(0.0)).min(0.0);
                    if j != i {
                        moved = moved.max((new - *av).abs());
                    }
                    *av = new;
                }
            } else {
                for ((av, rv), c) in arow.iter_mut().zip(rrow).zip(&colsum) {
                    *av = lam * *av + keep * (c - rv.max(0.0)).min(0.0);
                }
            }
            arow[i] = self_avail;
            let total: f64 = arow.iter().sum();
            finite &= total.is_finite();
            let c = argmax_sum(arow, rrow);
            if c != current[i] {
                changed = true;
                current[i] = c;
            }
        }
        if !finite {
            return Err(Error::Numerical(format!(
                "non-finite message after sweep {}",
                iter + 1
            )));
        }

        // Transient states where some point follows a non-exemplar do not count.
        let consistent = current
            .iter()
            .enumerate()
            .all(|(i, &c)| current[c] == c && (c != i || a[i * n + i] + r[i * n + i] > 0.0));
        run = if !consistent {
            0
        } else if changed || iter == 0 {
            1
        } else {
            run + 1
        };
        state.iterations = iter + 1;
        if run >= cfg.stable_window && tol.is_none_or(|t| moved <= t) {
            state.converged = true;
            break;
        }
    }
    state.assignments = settle_exemplars(s, &current);
    state.converged_len = n;
    Ok(())
}

/// Make the raw argmax assignment self-consistent: points that picked a
/// non-exemplar are moved to their most similar exemplar, so
/// `c[c[i]] == c[i]` holds for every `i`.
fn settle_exemplars(s: &SimilarityMatrix, raw: &[usize]) -> Vec<usize> {
    let n = raw.len();
    let mut exemplars: Vec<usize> = (0..n).filter(|&k| raw[k] == k).collect();
    if exemplars.is_empty() {
        // Fall back to the single point every other point votes for most.
        let mut votes = vec![0usize; n];
        raw.iter().for_each(|&c| votes[c] += 1);
        let best = (0..n).max_by_key(|&k| (votes[k], std::cmp::Reverse(k))).unwrap_or(0);
        exemplars.push(best);
    }
    let is_exemplar = {
        let mut v = vec![false; n];
        exemplars.iter().for_each(|&k| v[k] = true);
        v
    };
    (0..n)
        .map(|i| {
            if is_exemplar[i] {
                i
            } else if is_exemplar[raw[i]] {
                raw[i]
            } else {
                let mut best = exemplars[0];
                for &k in &exemplars[1..] {
                    if s.get(i, k) > s.get(i, best) {
                        best = k;
                    }
                }
                best
            }
        })
        .collect()
}

/// Batch affinity propagation from all-zero messages.
///
/// Hitting `max_iters` is not an error: the returned state has
/// `converged == false` and the caller decides what to do with it.
pub fn ap_batch(s: &SimilarityMatrix, cfg: &ApConfig) -> Result<ClusterState> {
    let mut state = ClusterState::zeros(s.dim(), cfg.damping);
    propagate(s, &mut state, cfg)?;
    Ok(state)
}

/// Grow `prev` (dimension `M`) to `M + n_new` for the similarity matrix
/// `s_new`. A new point copies the responsibility and availability row of
/// its most similar old point; old rows get the column of the new point's
/// most similar old point; the new-new block starts at zero.
pub fn extend_state(prev: &ClusterState, s_new: &SimilarityMatrix, n_new: usize) -> Result<ClusterState> {
    let m = prev.n;
    let n = m + n_new;
    if s_new.dim() != n {
        return Err(Error::State(format!(
            "similarity has dimension {}, expected {m} + {n_new}",
            s_new.dim()
        )));
    }
    if n_new == 0 {
        return Ok(prev.clone());
    }
    let anchor: Vec<usize> = (m..n)
        .map(|i| {
            let row = s_new.row(i);
            let mut best = 0;
            for k in 1..m {
                if row[k] > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect();
    let source = |i: usize| if i < m { Some(i) } else if m > 0 { Some(anchor[i - m]) } else { None };

    let mut r = vec![0.0; n * n];
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i >= m && j >= m {
                continue;
            }
            if let (Some(si), Some(sj)) = (source(i), source(j)) {
                r[i * n + j] = prev.responsibility[si * m + sj];
                a[i * n + j] = prev.availability[si * m + sj];
            }
        }
    }
    let mut assignments = prev.assignments.clone();
    assignments.extend((m..n).map(|i| {
        if m > 0 {
            prev.assignments[anchor[i - m]]
        } else {
            i
        }
    }));
    Ok(ClusterState {
        n,
        responsibility: r,
        availability: a,
        assignments,
        converged_len: prev.converged_len,
        damping: prev.damping,
        converged: false,
        iterations: 0,
    })
}

/// One incremental step over `retained` (the points `prev` was computed
/// on) plus the new `segment` detections.
pub fn piap_step(
    prev: &ClusterState,
    retained: &[Detection],
    segment: &[Detection],
    hdr: &StreamHeader,
    cfg: &PiapConfig,
) -> Result<ClusterState> {
    if prev.dim() != retained.len() {
        return Err(Error::State(format!(
            "state covers {} points but {} were retained",
            prev.dim(),
            retained.len()
        )));
    }
    if retained.is_empty() && segment.is_empty() {
        return Ok(ClusterState::empty(cfg.ap.damping));
    }
    let all: Vec<Detection> = retained.iter().chain(segment).cloned().collect();
    let s = stream_similarity(&all, hdr, cfg)?;
    if prev.is_empty() {
        return ap_batch(&s, &cfg.ap);
    }
    let mut state = extend_state(prev, &s, segment.len())?;
    propagate(&s, &mut state, &cfg.ap)?;
    Ok(state)
}

/// Drop points older than `window` frames (relative to the newest frame in
/// `frames`). Clusters that still have a recent member keep their exemplar
/// as representative; clusters with no recent member are retired.
/// Returns the compacted state and the surviving original indices.
pub fn compact_state(state: &ClusterState, frames: &[u64], window: u64) -> Result<(ClusterState, Vec<usize>)> {
    let n = state.n;
    if frames.len() != n {
        return Err(Error::State(format!(
            "{} frame stamps for a state of dimension {n}",
            frames.len()
        )));
    }
    if window == 0 {
        return Err(Error::Parameter("compaction window must be at least 1".into()));
    }
    let Some(&latest) = frames.iter().max() else {
        return Ok((state.clone(), Vec::new()));
    };
    let cutoff = (latest + 1).saturating_sub(window);
    let mut keep: Vec<bool> = frames.iter().map(|&f| f >= cutoff).collect();
    for i in 0..n {
        if frames[i] >= cutoff {
            keep[state.assignments[i]] = true;
        }
    }
    let kept: Vec<usize> = (0..n).filter(|&i| keep[i]).collect();
    if kept.len() == n {
        return Ok((state.clone(), kept));
    }
    let mut new_index = vec![usize::MAX; n];
    for (k, &i) in kept.iter().enumerate() {
        new_index[i] = k;
    }
    let m = kept.len();
    let mut r = Vec::with_capacity(m * m);
    let mut a = Vec::with_capacity(m * m);
    for &i in &kept {
        for &j in &kept {
            r.push(state.responsibility[i * n + j]);
            a.push(state.availability[i * n + j]);
        }
    }
    let assignments = kept.iter().map(|&i| new_index[state.assignments[i]]).collect();
    Ok((
        ClusterState {
            n: m,
            responsibility: r,
            availability: a,
            assignments,
            converged_len: m,
            damping: state.damping,
            converged: state.converged,
            iterations: state.iterations,
        },
        kept,
    ))
}

// ---------------------------------------------------------------------------
// Streaming driver

#[derive(Debug, Clone)]
struct Member {
    frame: u64,
    center: (f64, f64),
    unit: Vec<f64>,
    label: ClusterId,
}

/// Outcome of one [`StreamClusterer::step`].
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    /// Label of each detection passed to `step`, in input order.
    pub labels: Vec<ClusterId>,
    pub converged: bool,
    pub iterations: usize,
    /// Matrix dimension the step ran on.
    pub dimension: usize,
    pub clusters: usize,
}

/// Owns the cluster state across segments and turns exemplar indices into
/// stable identity labels.
///
/// Labels are frozen once handed out. After each step every cluster
/// inherits the label most of its already-labelled members carry; clusters
/// made only of new points get a fresh label.
#[derive(Debug, Clone)]
pub struct StreamClusterer {
    header: StreamHeader,
    config: PiapConfig,
    members: Vec<Member>,
    /// Similarity over `members`; the diagonal holds the last preference.
    sim: Vec<f64>,
    state: ClusterState,
    next_label: ClusterId,
}

impl StreamClusterer {
    pub fn new(header: StreamHeader, config: PiapConfig) -> Result<Self> {
        header.validate()?;
        config.ap.validate()?;
        Ok(StreamClusterer {
            header,
            config,
            members: Vec::new(),
            sim: Vec::new(),
            state: ClusterState::empty(config.ap.damping),
            next_label: 0,
        })
    }

    pub fn state(&self) -> &ClusterState {
        &self.state
    }

    pub fn config(&self) -> &PiapConfig {
        &self.config
    }

    /// Points currently held in the matrices.
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Frozen label of every retained point, in matrix order.
    pub fn member_labels(&self) -> Vec<ClusterId> {
        self.members.iter().map(|m| m.label).collect()
    }

    pub fn member_frames(&self) -> Vec<u64> {
        self.members.iter().map(|m| m.frame).collect()
    }

    /// Current similarity matrix, diagonal included.
    pub fn similarity(&self) -> SimilarityMatrix {
        SimilarityMatrix {
            n: self.members.len(),
            data: self.sim.clone(),
        }
    }

    /// Cluster a new batch of detections against everything retained.
    pub fn step(&mut self, detections: &[Detection]) -> Result<StepReport> {
        let m = self.members.len();
        let k = detections.len();
        if k == 0 {
            return Ok(StepReport {
                labels: Vec::new(),
                converged: self.state.converged,
                iterations: 0,
                dimension: m,
                clusters: self.state.cluster_count(),
            });
        }
        let n = m + k;
        let mut fresh = Vec::with_capacity(k);
        for (idx, d) in detections.iter().enumerate() {
            if d.embedding.len() != self.header.embedding_dim {
                return Err(Error::Input(format!(
                    "detection at frame {} has embedding length {}, expected {}",
                    d.frame,
                    d.embedding.len(),
                    self.header.embedding_dim
                )));
            }
            fresh.push(Member {
                frame: d.frame,
                center: d.center(),
                unit: unit_embedding(&d.embedding, m + idx)?,
                label: ClusterId::MAX,
            });
        }

        let mut sim = vec![0.0; n * n];
        for i in 0..m {
            sim[i * n..i * n + m].copy_from_slice(&self.sim[i * m..(i + 1) * m]);
        }
        let literal = self.config.literal_similarity;
        for i in m..n {
            let mi = &fresh[i - m];
            for j in 0..i {
                let mj = if j < m { &self.members[j] } else { &fresh[j - m] };
                let s = shrunk_similarity(
                    mi.center,
                    mj.center,
                    dot(&mi.unit, &mj.unit),
                    &self.header,
                    literal,
                );
                sim[i * n + j] = s;
                sim[j * n + i] = s;
            }
        }
        let pref = match self.config.preference {
            Preference::Value(p) => p,
            Preference::Median => {
                let mut upper = Vec::with_capacity(n * (n - 1) / 2);
                for i in 0..n {
                    upper.extend_from_slice(&sim[i * n + i + 1..(i + 1) * n]);
                }
                median_in_place(&mut upper)
            }
            Preference::Minimum => min_off_diagonal(n, &sim),
        };
        let pref = self.config.floor_preference(pref, &self.header);
        for i in 0..n {
            sim[i * n + i] = pref;
        }
        let s = SimilarityMatrix { n, data: sim };

        let mut state = if m == 0 {
            ClusterState::zeros(n, self.config.ap.damping)
        } else {
            extend_state(&self.state, &s, k)?
        };
        propagate(&s, &mut state, &self.config.ap)?;

        self.members.extend(fresh);
        self.sim = s.data;
        self.state = state;
        let cluster_labels = self.label_clusters();
        for i in m..n {
            self.members[i].label = cluster_labels[&self.state.assignments[i]];
        }
        Ok(StepReport {
            labels: self.members[m..].iter().map(|mm| mm.label).collect(),
            converged: self.state.converged,
            iterations: self.state.iterations,
            dimension: n,
            clusters: cluster_labels.len(),
        })
    }

    /// Map each exemplar to a label by majority vote of labelled members.
    fn label_clusters(&mut self) -> BTreeMap<usize, ClusterId> {
        let mut votes: BTreeMap<usize, BTreeMap<ClusterId, usize>> = BTreeMap::new();
        for (i, mm) in self.members.iter().enumerate() {
            let e = self.state.assignments[i];
            let entry = votes.entry(e).or_default();
            if mm.label != ClusterId::MAX {
                *entry.entry(mm.label).or_default() += 1;
            }
        }
        let mut candidates: Vec<(usize, usize, ClusterId)> = votes
            .iter()
            .flat_map(|(&e, v)| v.iter().map(move |(&l, &c)| (c, e, l)))
            .collect();
        // Most votes first; ties go to the lower exemplar index, then label.
        candidates.sort_by(|x, y| y.0.cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
        let mut assigned: BTreeMap<usize, ClusterId> = BTreeMap::new();
        let mut taken = std::collections::BTreeSet::new();
        for (_, e, l) in candidates {
            if assigned.contains_key(&e) || taken.contains(&l) {
                continue;
            }
            assigned.insert(e, l);
            taken.insert(l);
        }
        for &e in votes.keys() {
            assigned.entry(e).or_insert_with(|| {
                let l = self.next_label;
                self.next_label += 1;
                l
            });
        }
        assigned
    }

    /// Drop points older than `window` frames, keeping one representative
    /// per cluster that is still active.
    pub fn compact(&mut self, window: u64) -> Result<()> {
        let frames = self.member_frames();
        let (state, kept) = compact_state(&self.state, &frames, window)?;
        if kept.len() == self.members.len() {
            return Ok(());
        }
        let n = self.members.len();
        let m = kept.len();
        let mut sim = Vec::with_capacity(m * m);
        for &i in &kept {
            for &j in &kept {
                sim.push(self.sim[i * n + j]);
            }
        }
        let mut members = Vec::with_capacity(m);
        for &i in &kept {
            members.push(self.members[i].clone());
        }
        self.members = members;
        self.sim = sim;
        self.state = state;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BoundingBox, DetectionSource};

    fn hdr(width: u32, height: u32) -> StreamHeader {
        StreamHeader::new(30.0, width, height, 2).unwrap()
    }

    fn det_at(frame: u64, cx: f64, cy: f64, emb: Vec<f64>) -> Detection {
        Detection {
            frame,
            bbox: BoundingBox::from_center(cx, cy, 20.0, 20.0),
            confidence: 0.9,
            embedding: emb,
            source: DetectionSource::Detector,
        }
    }

    // 300 x 400 frame has a diagonal of exactly 500.
    #[test]
    fn similarity_zero_at_same_position() {
        let h = hdr(300, 400);
        let a = det_at(0, 50.0, 50.0, vec![1.0, 0.0]);
        let b = det_at(1, 50.0, 50.0, vec![0.0, 1.0]);
        assert_eq!(positioned_similarity(&a, &b, &h, false).unwrap(), 0.0);
        assert_eq!(positioned_similarity(&a, &b, &h, true).unwrap(), 0.0);
    }

    #[test]
    fn similarity_formula_values() {
        let h = hdr(300, 400);
        let a = det_at(0, 0.0, 0.0, vec![1.0, 0.0]);
        let orth = det_at(0, 30.0, 40.0, vec![0.0, 1.0]);
        let anti = det_at(0, 30.0, 40.0, vec![-1.0, 0.0]);
        let s = positioned_similarity(&a, &orth, &h, false).unwrap();
        assert!((s - -0.01).abs() < 1e-15, "{s}");
        let s = positioned_similarity(&a, &anti, &h, false).unwrap();
        assert!((s - -0.02).abs() < 1e-15, "{s}");
        // Literal form rewards anti-correlated embeddings.
        let s = positioned_similarity(&a, &anti, &h, true).unwrap();
        assert!((s - 0.01).abs() < 1e-15, "{s}");
    }

    #[test]
    fn similarity_scales_with_fps_and_kappa() {
        let mut h = hdr(300, 400);
        let a = det_at(0, 0.0, 0.0, vec![1.0, 0.0]);
        let b = det_at(0, 30.0, 40.0, vec![0.0, 1.0]);
        h.fps = 15.0;
        h.quality_scale = 2.0;
        let s = positioned_similarity(&a, &b, &h, false).unwrap();
        assert!((s - -0.04).abs() < 1e-15);
    }

    #[test]
    fn zero_embedding_is_degenerate() {
        let h = hdr(300, 400);
        let a = det_at(0, 0.0, 0.0, vec![0.0, 0.0]);
        let b = det_at(0, 1.0, 1.0, vec![1.0, 0.0]);
        assert!(matches!(
            positioned_similarity(&a, &b, &h, false),
            Err(Error::DegenerateEmbedding { .. })
        ));
    }

    #[test]
    fn build_single_and_pair() {
        let h = hdr(300, 400);
        let one = build_similarity(&[det_at(0, 1.0, 1.0, vec![1.0, 0.0])], &h, Preference::Value(-3.0), false).unwrap();
        assert_eq!(one.as_slice(), &[-3.0]);
        let pair = build_similarity(
            &[det_at(0, 0.0, 0.0, vec![1.0, 0.0]), det_at(0, 30.0, 40.0, vec![0.0, 1.0])],
            &h,
            Preference::Median,
            false,
        )
        .unwrap();
        assert_eq!(pair.get(0, 1), pair.get(1, 0));
        assert_eq!(pair.preference(), Some(pair.get(0, 1)));
    }

    #[test]
    fn build_matches_scalar_pairwise() {
        let h = hdr(640, 480);
        let dets = vec![
            det_at(0, 10.0, 20.0, vec![1.0, 0.2]),
            det_at(0, 300.0, 200.0, vec![0.3, 1.0]),
            det_at(1, 500.0, 50.0, vec![-0.5, 0.7]),
        ];
        let s = build_similarity(&dets, &h, Preference::Value(-1.0), false).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    let expect = positioned_similarity(&dets[i], &dets[j], &h, false).unwrap();
                    assert_eq!(s.get(i, j), expect);
                }
            }
        }
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median_in_place(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median_in_place(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median_in_place(&mut []), 0.0);
        // Asymmetric input uses every off-diagonal entry.
        let data = vec![0.0, 1.0, 2.0, 0.0, 3.0, 4.0, 5.0, 6.0, 0.0];
        assert_eq!(median_off_diagonal(3, &data), 3.0);
    }

    #[test]
    fn single_point_is_own_exemplar() {
        let s = SimilarityMatrix::from_rows(&[vec![-1.0]]).unwrap();
        let st = ap_batch(&s, &ApConfig::default()).unwrap();
        assert_eq!(st.assignments, vec![0]);
        assert!(st.converged);
    }

    #[test]
    fn three_point_example_picks_middle_exemplar() {
        let s = SimilarityMatrix::from_rows(&[
            vec![-5.0, -1.0, -6.0],
            vec![-1.0, -5.0, -4.0],
            vec![-6.0, -4.0, -5.0],
        ])
        .unwrap();
        let st = ap_batch(&s, &ApConfig::default()).unwrap();
        assert!(st.converged);
        assert_eq!(st.assignments, vec![1, 1, 1]);
        assert_eq!(net_similarity(&s, &st.assignments), -10.0);
    }

    #[test]
    fn rejects_bad_damping_and_dims() {
        let s = SimilarityMatrix::from_rows(&[vec![-1.0, -2.0], vec![-2.0, -1.0]]).unwrap();
        let cfg = ApConfig {
            damping: 1.0,
            ..ApConfig::default()
        };
        assert!(ap_batch(&s, &cfg).is_err());
        let mut st = ClusterState::zeros(3, 0.5);
        assert!(matches!(
            propagate(&s, &mut st, &ApConfig::default()),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn non_convergence_is_flagged() {
        let s = SimilarityMatrix::from_rows(&[
            vec![-5.0, -1.0, -6.0],
            vec![-1.0, -5.0, -4.0],
            vec![-6.0, -4.0, -5.0],
        ])
        .unwrap();
        let cfg = ApConfig {
            max_iters: 3,
            ..ApConfig::default()
        };
        let st = ap_batch(&s, &cfg).unwrap();
        assert!(!st.converged);
        assert_eq!(st.iterations, 3);
    }

    fn filled_state(m: usize) -> ClusterState {
        let mut st = ClusterState::zeros(m, 0.5);
        for i in 0..m {
            for j in 0..m {
                st.responsibility[i * m + j] = (10 * i + j) as f64;
                st.availability[i * m + j] = -((10 * i + j) as f64);
            }
        }
        st
    }

    #[test]
    fn extend_with_no_new_points_is_identity() {
        let st = filled_state(2);
        let s = SimilarityMatrix::from_rows(&[vec![-1.0, -2.0], vec![-2.0, -1.0]]).unwrap();
        assert_eq!(extend_state(&st, &s, 0).unwrap(), st);
    }

    #[test]
    fn extend_copies_nearest_old_row() {
        let st = filled_state(2);
        // Point 2 is most similar to old point 0.
        let s = SimilarityMatrix::from_rows(&[
            vec![-1.0, -9.0, -0.5],
            vec![-9.0, -1.0, -7.0],
            vec![-0.5, -7.0, -1.0],
        ])
        .unwrap();
        let ext = extend_state(&st, &s, 1).unwrap();
        assert_eq!(ext.dim(), 3);
        assert_eq!(ext.r(2, 0), st.r(0, 0));
        assert_eq!(ext.r(2, 1), st.r(0, 1));
        assert_eq!(ext.a(2, 1), st.a(0, 1));
        assert_eq!(ext.r(1, 2), st.r(1, 0));
        assert_eq!(ext.r(2, 2), 0.0);
        assert_eq!(ext.a(2, 2), 0.0);
        assert_eq!(ext.r(1, 1), st.r(1, 1));
    }

    #[test]
    fn extend_rejects_wrong_dimension() {
        let st = filled_state(2);
        let s = SimilarityMatrix::from_rows(&[vec![-1.0, -2.0], vec![-2.0, -1.0]]).unwrap();
        assert!(matches!(extend_state(&st, &s, 1), Err(Error::State(_))));
    }

    #[test]
    fn compaction_with_large_window_is_noop() {
        let st = filled_state(3);
        let (c, kept) = compact_state(&st, &[0, 1, 2], 1000).unwrap();
        assert_eq!(c, st);
        assert_eq!(kept, vec![0, 1, 2]);
    }

    #[test]
    fn compaction_keeps_exemplar_of_active_cluster() {
        let mut st = filled_state(4);
        // Points 0, 2 in cluster led by 0; 1, 3 in cluster led by 1.
        st.assignments = vec![0, 1, 0, 1];
        let (c, kept) = compact_state(&st, &[0, 0, 10, 0], 5).unwrap();
        // Point 2 is recent; exemplar 0 stays. Cluster {1, 3} has no recent member.
        assert_eq!(kept, vec![0, 2]);
        assert_eq!(c.assignments, vec![0, 0]);
        assert_eq!(c.r(1, 0), st.r(2, 0));
    }

    #[test]
    fn clusterer_single_detection() {
        let h = hdr(300, 400);
        let mut c = StreamClusterer::new(h, PiapConfig::default()).unwrap();
        let rep = c.step(&[det_at(0, 5.0, 5.0, vec![1.0, 0.0])]).unwrap();
        assert_eq!(rep.labels, vec![0]);
        assert_eq!(rep.clusters, 1);
    }

    #[test]
    fn clusterer_matches_full_rebuild() {
        let h = hdr(640, 480);
        let first = vec![
            det_at(0, 10.0, 10.0, vec![1.0, 0.0]),
            det_at(0, 400.0, 300.0, vec![0.0, 1.0]),
        ];
        let second = vec![
            det_at(1, 12.0, 11.0, vec![1.0, 0.05]),
            det_at(1, 402.0, 301.0, vec![0.05, 1.0]),
        ];
        let mut c = StreamClusterer::new(h, PiapConfig::default()).unwrap();
        c.step(&first).unwrap();
        c.step(&second).unwrap();
        let all: Vec<_> = first.iter().chain(&second).cloned().collect();
        let full = stream_similarity(&all, &h, &PiapConfig::default()).unwrap();
        assert_eq!(c.similarity(), full);
    }
}
