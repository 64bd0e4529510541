//! Cluster-size bookkeeping: belief-propagation marginals on interned
//! trees, the local weight factors and their edge-color counterparts,
//! exact size formulas, empirical profiles, free-energy functionals, and
//! exhaustive partition tables at small n.
//!
//! Sizes are computed three ways that must agree: brute extension
//! counting, the global product of local weights over a message
//! configuration, and the color-factor product. The per-free-tree
//! products multiply to the same number because every frozen variable's
//! vertex factor cancels against the edge factors on its own edges.

use std::collections::HashMap;

use thiserror::Error;

use crate::frozen::{brute_size, free_decompose, FrozenConfig, FrozenError, Frz};
use crate::instance::Instance;
use crate::messages::{
    build_messages, i_dot, i_hat_lit, project_coloring, tree_node, Color, Dot, Hat, MsgConfig,
    MsgError, TreeId, TreeNode, SEP,
};
use crate::solutions::SolutionsError;

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("free cycle through variable {0}")]
    FreeCycle(usize),
    #[error("n = {n} exceeds the exhaustive enumeration guard {limit}")]
    TooLarge { n: usize, limit: usize },
    #[error("profile support violation: {0}")]
    Support(String),
    #[error(transparent)]
    Msg(#[from] MsgError),
    #[error(transparent)]
    Frozen(#[from] FrozenError),
    #[error(transparent)]
    Solutions(#[from] SolutionsError),
}

/// Probability measure on {0,1}.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinaryMeasure {
    pub p0: f64,
    pub p1: f64,
}

impl BinaryMeasure {
    pub fn dirac(b: u8) -> BinaryMeasure {
        BinaryMeasure {
            p0: (b == 0) as u8 as f64,
            p1: (b == 1) as u8 as f64,
        }
    }

    pub fn uniform() -> BinaryMeasure {
        BinaryMeasure { p0: 0.5, p1: 0.5 }
    }

    pub fn get(self, x: u8) -> f64 {
        if x == 0 {
            self.p0
        } else {
            self.p1
        }
    }
}

/// Memoized BP marginals per interned tree, with their normalizers.
///
/// Atoms are Dirac; their normalizer is stored as 1 (it never enters a
/// formula). The separator is uniform with normalizer 2, the value the
/// join recursion assigns it. ⋆ is handled at the message level, not
/// here, since it is not a tree.
#[derive(Debug, Default)]
pub struct MarginalCache {
    dot: HashMap<TreeId, (BinaryMeasure, f64, f64)>,
    hat: HashMap<TreeId, (BinaryMeasure, f64, f64)>,
}

impl MarginalCache {
    pub fn new() -> MarginalCache {
        MarginalCache::default()
    }

    /// ṁ[t] and ż[t] for a dot tree.
    pub fn dot_marginal(&mut self, t: TreeId) -> (BinaryMeasure, f64) {
        let (m, z, _) = self.dot_entry(t);
        (m, z)
    }

    /// ṁ[t] and ln ż[t]; the log stays finite even when ż underflows
    /// (joins over many near-uniform kids shrink geometrically in the
    /// kid count).
    pub fn dot_marginal_ln(&mut self, t: TreeId) -> (BinaryMeasure, f64) {
        let (m, _, ln_z) = self.dot_entry(t);
        (m, ln_z)
    }

    fn dot_entry(&mut self, t: TreeId) -> (BinaryMeasure, f64, f64) {
        if let Some(&r) = self.dot.get(&t) {
            return r;
        }
        let r = match tree_node(t) {
            TreeNode::DotAtom(b) => (BinaryMeasure::dirac(b), 1.0, 0.0),
            TreeNode::DotJoin(kids) => {
                let mut prod = [1.0f64; 2];
                let mut shift = 0.0f64;
                for &c in &kids {
                    let (m, _, _) = self.hat_entry(c);
                    prod[0] *= m.p0;
                    prod[1] *= m.p1;
                    if prod[0].max(prod[1]) < 1e-160 {
                        prod[0] *= 1e160;
                        prod[1] *= 1e160;
                        shift += 160.0 * std::f64::consts::LN_10;
                    }
                }
                let z = prod[0] + prod[1];
                assert!(z > 0.0, "dot normalizer vanished");
                let ln_z = z.ln() - shift;
                (
                    BinaryMeasure {
                        p0: prod[0] / z,
                        p1: prod[1] / z,
                    },
                    if shift == 0.0 { z } else { ln_z.exp() },
                    ln_z,
                )
            }
            other => panic!("dot marginal of a hat tree {other:?}"),
        };
        self.dot.insert(t, r);
        r
    }

    /// m̂[t] and ẑ[t] for a hat tree.
    pub fn hat_marginal(&mut self, t: TreeId) -> (BinaryMeasure, f64) {
        let (m, z, _) = self.hat_entry(t);
        (m, z)
    }

    /// m̂[t] and ln ẑ[t].
    pub fn hat_marginal_ln(&mut self, t: TreeId) -> (BinaryMeasure, f64) {
        let (m, _, ln_z) = self.hat_entry(t);
        (m, ln_z)
    }

    fn hat_entry(&mut self, t: TreeId) -> (BinaryMeasure, f64, f64) {
        if let Some(&r) = self.hat.get(&t) {
            return r;
        }
        let r = match tree_node(t) {
            TreeNode::HatAtom(b) => (BinaryMeasure::dirac(b), 1.0, 0.0),
            TreeNode::Sep => (BinaryMeasure::uniform(), 2.0, std::f64::consts::LN_2),
            TreeNode::HatJoin(kids) => {
                let mut prod = [1.0f64; 2];
                for &c in &kids {
                    let (m, _, _) = self.dot_entry(c);
                    prod[0] *= m.p0;
                    prod[1] *= m.p1;
                }
                // The kid products only lower ẑ below 2, so underflow in
                // them rounds towards the exact value instead of poisoning
                // the normalizer the way it does on the dot side.
                let z = 2.0 - (prod[0] + prod[1]);
                assert!(z > 0.0, "hat normalizer vanished");
                (
                    BinaryMeasure {
                        p0: (1.0 - prod[0]) / z,
                        p1: (1.0 - prod[1]) / z,
                    },
                    z,
                    z.ln(),
                )
            }
            other => panic!("hat marginal of a dot tree {other:?}"),
        };
        self.hat.insert(t, r);
        r
    }

    /// Marginal of a dot message; ⋆ is uniform.
    pub fn dot_msg(&mut self, m: Dot) -> BinaryMeasure {
        match m {
            Dot::Star => BinaryMeasure::uniform(),
            Dot::Tree(t) => self.dot_marginal(t).0,
        }
    }

    /// Marginal of a hat message; ⋆ is uniform.
    pub fn hat_msg(&mut self, m: Hat) -> BinaryMeasure {
        match m {
            Hat::Star => BinaryMeasure::uniform(),
            Hat::Tree(t) => self.hat_marginal(t).0,
        }
    }
}

/// Edge factor φ̄(τ̇,τ̂) = 1 / Σ_x ṁ(x)m̂(x).
pub fn phi_bar(cache: &mut MarginalCache, dot: Dot, hat: Hat) -> f64 {
    let md = cache.dot_msg(dot);
    let mh = cache.hat_msg(hat);
    let s = md.p0 * mh.p0 + md.p1 * mh.p1;
    assert!(s > 0.0, "phi_bar pole: opposing Dirac messages on one edge");
    1.0 / s
}

/// Variable factor φ̇(τ̂₁..τ̂_d) = Σ_x Π m̂ᵢ(x).
pub fn phi_dot(cache: &mut MarginalCache, hats: &[Hat]) -> f64 {
    let mut prod = [1.0f64; 2];
    for &h in hats {
        let m = cache.hat_msg(h);
        prod[0] *= m.p0;
        prod[1] *= m.p1;
    }
    prod[0] + prod[1]
}

/// Clause factor φ̂^lit(τ̇₁..τ̇_k) = 1 − Σ_x Π ṁᵢ(x), on evaluated dots.
pub fn phi_hat_lit(cache: &mut MarginalCache, dots: &[Dot]) -> f64 {
    let mut prod = [1.0f64; 2];
    for &d in dots {
        let m = cache.dot_msg(d);
        prod[0] *= m.p0;
        prod[1] *= m.p1;
    }
    1.0 - (prod[0] + prod[1])
}

fn color_dot(c: Color) -> Dot {
    match c {
        Color::R(_) => panic!("no dot component on a forced edge"),
        Color::B(b) => Dot::Tree(crate::messages::dot_atom(b)),
        Color::F { dot, .. } => Dot::Tree(dot),
    }
}

/// Φ̇: the variable color factor — φ̇ of the hat trees on an all-free
/// neighborhood, 1 on an accepted frozen neighborhood, 0 off-table.
pub fn col_phi_dot(cache: &mut MarginalCache, tuple: &[Color]) -> f64 {
    if !i_dot(tuple) {
        return 0.0;
    }
    if tuple.iter().all(|c| c.is_f()) {
        let hats: Vec<Hat> = tuple
            .iter()
            .map(|&c| match c {
                Color::F { hat, .. } => Hat::Tree(hat),
                _ => unreachable!(),
            })
            .collect();
        phi_dot(cache, &hats)
    } else {
        1.0
    }
}

/// Φ̂^lit: the clause color factor on an evaluated tuple — φ̂^lit of the
/// dot components when no edge is forced, 1 when one is, 0 off-table.
pub fn col_phi_hat_lit(cache: &mut MarginalCache, tuple: &[Color]) -> f64 {
    if !i_hat_lit(tuple) {
        return 0.0;
    }
    if tuple.iter().any(|c| matches!(c, Color::R(_))) {
        1.0
    } else {
        let dots: Vec<Dot> = tuple.iter().map(|&c| color_dot(c)).collect();
        phi_hat_lit(cache, &dots)
    }
}

/// Φ̄: the edge color factor — φ̄ on free edges, 1 otherwise.
pub fn col_phi_bar(cache: &mut MarginalCache, c: Color) -> f64 {
    match c {
        Color::F { dot, hat } => phi_bar(cache, Dot::Tree(dot), Hat::Tree(hat)),
        _ => 1.0,
    }
}

/// Φ̂^m: the maximum of Φ̂^lit over literal patterns — 1 on all-frozen
/// tuples, ẑ[σ̂_j]/φ̄(σ_j) at any free coordinate j (independent of j).
pub fn col_phi_hat_max(cache: &mut MarginalCache, tuple: &[Color]) -> f64 {
    match tuple.iter().find(|c| c.is_f()) {
        None => 1.0,
        Some(&Color::F { dot, hat }) => {
            let (_, z) = cache.hat_marginal(hat);
            z / phi_bar(cache, Dot::Tree(dot), Hat::Tree(hat))
        }
        Some(_) => unreachable!(),
    }
}

/// v̂(σ̲) = 2^{−k} · #{L̲ : the evaluated tuple σ̲⊕L̲ is on the clause table}.
pub fn v_hat(tuple: &[Color]) -> f64 {
    let k = tuple.len();
    assert!(k <= 20, "literal enumeration over 2^{k} patterns");
    let mut hits = 0u64;
    let mut shifted = tuple.to_vec();
    for lits in 0u32..1 << k {
        for (i, s) in shifted.iter_mut().enumerate() {
            *s = tuple[i].xor((lits >> i) as u8 & 1);
        }
        if i_hat_lit(&shifted) {
            hits += 1;
        }
    }
    hits as f64 / (1u64 << k) as f64
}

/// Literal-averaged clause factor Φ̂(σ̲)^λ = Φ̂^m(σ̲)^λ · v̂(σ̲).
pub fn col_phi_hat_avg_pow(cache: &mut MarginalCache, tuple: &[Color], lambda: f64) -> f64 {
    col_phi_hat_max(cache, tuple).powf(lambda) * v_hat(tuple)
}

/// The cluster size of a free-cycle-free frozen configuration, computed
/// from its messages and colors.
#[derive(Debug, Clone)]
pub struct SizeBreakdown {
    /// global product of φ̇, φ̂^lit, φ̄ over all vertices and edges.
    pub global: f64,
    /// product of the color factors Φ̇, Φ̂^lit, Φ̄.
    pub coloring: f64,
    /// per-free-tree weights, aligned with `free_decompose(..).pieces`.
    pub tree_weights: Vec<f64>,
}

/// Evaluated dot on each edge of a clause.
fn clause_dots(inst: &Instance, cfg: &MsgConfig, a: usize) -> Vec<Dot> {
    inst.clause_edges(a)
        .map(|e| cfg.dot[e].xor(inst.literal(e)))
        .collect()
}

/// Size of the cluster of `frz` by dynamic programming on its messages.
///
/// The global product runs over every variable, clause, and edge; the
/// per-tree weights multiply the factors of one free piece, its interior
/// and separating-boundary edges included, and their product equals the
/// global one.
pub fn size_by_messages(
    inst: &Instance,
    frz: &FrozenConfig,
) -> Result<SizeBreakdown, WeightsError> {
    let dec = free_decompose(inst, frz);
    if let Some(p) = dec.pieces.iter().find(|p| p.has_cycle) {
        return Err(WeightsError::FreeCycle(p.vars[0]));
    }
    let cfg = build_messages(inst, frz)?;
    let colors = project_coloring(&cfg)?;
    let mut cache = MarginalCache::new();

    let mut global = 1.0f64;
    for v in 0..inst.n {
        let hats: Vec<Hat> = inst.var_edges(v).map(|e| cfg.hat[e]).collect();
        global *= phi_dot(&mut cache, &hats);
    }
    for a in 0..inst.m {
        global *= phi_hat_lit(&mut cache, &clause_dots(inst, &cfg, a));
    }
    for e in 0..inst.num_edges() {
        global *= phi_bar(&mut cache, cfg.dot[e], cfg.hat[e]);
    }

    let coloring = size_by_colorings_with(inst, &colors, &mut cache);

    let tree_weights = dec
        .pieces
        .iter()
        .map(|piece| {
            let mut w = 1.0f64;
            for &v in &piece.vars {
                let hats: Vec<Hat> = inst.var_edges(v).map(|e| cfg.hat[e]).collect();
                w *= phi_dot(&mut cache, &hats);
                for e in inst.var_edges(v) {
                    w *= phi_bar(&mut cache, cfg.dot[e], cfg.hat[e]);
                }
            }
            for &a in &piece.clauses {
                w *= phi_hat_lit(&mut cache, &clause_dots(inst, &cfg, a));
            }
            w
        })
        .collect();

    Ok(SizeBreakdown {
        global,
        coloring,
        tree_weights,
    })
}

/// The color-factor product of a coloring (cluster size when valid).
pub fn size_by_colorings(inst: &Instance, colors: &[Color]) -> f64 {
    size_by_colorings_with(inst, colors, &mut MarginalCache::new())
}

fn size_by_colorings_with(inst: &Instance, colors: &[Color], cache: &mut MarginalCache) -> f64 {
    let mut prod = 1.0f64;
    for v in 0..inst.n {
        let tuple: Vec<Color> = inst.var_edges(v).map(|e| colors[e]).collect();
        prod *= col_phi_dot(cache, &tuple);
    }
    for a in 0..inst.m {
        let tuple: Vec<Color> = inst
            .clause_edges(a)
            .map(|e| colors[e].xor(inst.literal(e)))
            .collect();
        prod *= col_phi_hat_lit(cache, &tuple);
    }
    for &c in colors {
        prod *= col_phi_bar(cache, c);
    }
    prod
}

/// Number of separator messages among the hats.
pub fn s_hat_count(cfg: &MsgConfig) -> usize {
    cfg.hat
        .iter()
        .filter(|h| matches!(h, Hat::Tree(t) if *t == SEP))
        .count()
}

/// Empirical neighborhood counts of a coloring: variable d-tuples, clause
/// k-tuples (raw and keyed by literal pattern), and edge colors.
#[derive(Debug, Clone)]
pub struct Profile {
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub k: usize,
    pub dot_counts: HashMap<Vec<Color>, u64>,
    pub hat_counts: HashMap<Vec<Color>, u64>,
    pub hat_lit_counts: HashMap<(Vec<u8>, Vec<Color>), u64>,
    pub bar_counts: HashMap<Color, u64>,
}

impl Profile {
    /// Ḣ as a distribution.
    pub fn dot_h(&self) -> HashMap<Vec<Color>, f64> {
        self.dot_counts
            .iter()
            .map(|(t, &c)| (t.clone(), c as f64 / self.n as f64))
            .collect()
    }

    /// Ĥ as a distribution.
    pub fn hat_h(&self) -> HashMap<Vec<Color>, f64> {
        self.hat_counts
            .iter()
            .map(|(t, &c)| (t.clone(), c as f64 / self.m as f64))
            .collect()
    }

    /// H̄ as a distribution.
    pub fn bar_h(&self) -> HashMap<Color, f64> {
        let ne = (self.n * self.d) as f64;
        self.bar_counts
            .iter()
            .map(|(&c, &cnt)| (c, cnt as f64 / ne))
            .collect()
    }

    /// Ĥ^L̲ counts normalized by m/2^k, following the g-vector convention.
    pub fn hat_h_lit(&self) -> HashMap<(Vec<u8>, Vec<Color>), f64> {
        let scale = (1u64 << self.k) as f64 / self.m as f64;
        self.hat_lit_counts
            .iter()
            .map(|(key, &c)| (key.clone(), c as f64 * scale))
            .collect()
    }

    /// The compatibility equation, checked exactly on integer counts:
    /// slot tallies on both sides equal the edge tally for every color.
    pub fn compatibility_ok(&self) -> bool {
        let mut dot_slots: HashMap<Color, u64> = HashMap::new();
        for (t, &c) in &self.dot_counts {
            for &s in t {
                *dot_slots.entry(s).or_insert(0) += c;
            }
        }
        let mut hat_slots: HashMap<Color, u64> = HashMap::new();
        for (t, &c) in &self.hat_counts {
            for &s in t {
                *hat_slots.entry(s).or_insert(0) += c;
            }
        }
        let zero = 0u64;
        self.bar_counts.len() == dot_slots.len()
            && self.bar_counts.len() == hat_slots.len()
            && self.bar_counts.iter().all(|(c, &cnt)| {
                *dot_slots.get(c).unwrap_or(&zero) == cnt
                    && *hat_slots.get(c).unwrap_or(&zero) == cnt
            })
    }

    /// max{H̄(f), H̄(R)} for the simplex truncation test.
    pub fn max_bar_free_or_forced(&self) -> f64 {
        let ne = (self.n * self.d) as f64;
        let mut f = 0u64;
        let mut r = 0u64;
        for (c, &cnt) in &self.bar_counts {
            match c {
                Color::F { .. } => f += cnt,
                Color::R(_) => r += cnt,
                Color::B(_) => {}
            }
        }
        f.max(r) as f64 / ne
    }

    /// Distribution triple for the free-energy functionals.
    pub fn dist(&self) -> ProfileDist {
        ProfileDist {
            d: self.d,
            k: self.k,
            dot: self.dot_h(),
            hat: self.hat_h(),
            bar: self.bar_h(),
        }
    }
}

/// A coloring profile as plain distributions, empirical or theoretical.
#[derive(Debug, Clone)]
pub struct ProfileDist {
    pub d: usize,
    pub k: usize,
    pub dot: HashMap<Vec<Color>, f64>,
    pub hat: HashMap<Vec<Color>, f64>,
    pub bar: HashMap<Color, f64>,
}

/// Empirical profile of a valid coloring.
pub fn profile_of(inst: &Instance, colors: &[Color]) -> Profile {
    let mut p = Profile {
        n: inst.n,
        m: inst.m,
        d: inst.d,
        k: inst.k,
        dot_counts: HashMap::new(),
        hat_counts: HashMap::new(),
        hat_lit_counts: HashMap::new(),
        bar_counts: HashMap::new(),
    };
    for v in 0..inst.n {
        let tuple: Vec<Color> = inst.var_edges(v).map(|e| colors[e]).collect();
        *p.dot_counts.entry(tuple).or_insert(0) += 1;
    }
    for a in 0..inst.m {
        let tuple: Vec<Color> = inst.clause_edges(a).map(|e| colors[e]).collect();
        let lits: Vec<u8> = inst.clause_edges(a).map(|e| inst.literal(e)).collect();
        *p.hat_counts.entry(tuple.clone()).or_insert(0) += 1;
        *p.hat_lit_counts.entry((lits, tuple)).or_insert(0) += 1;
    }
    for &c in colors {
        *p.bar_counts.entry(c).or_insert(0) += 1;
    }
    p
}

/// The Stirling-scale functionals of a profile.
#[derive(Debug, Clone, Copy)]
pub struct FreeEnergy {
    pub sigma: f64,
    pub s: f64,
    pub f: f64,
}

/// Σ(H), s(H), and F_λ(H) = Σ(H) + λ·s(H).
///
/// Conventions: 0·log 0 = 0 throughout, and the v̂/Ĥ ratio is read on
/// supp Ĥ only. Supports must lie inside the weight supports, and every
/// color used by Ḣ or Ĥ must carry H̄ mass.
pub fn free_energy(
    cache: &mut MarginalCache,
    h: &ProfileDist,
    lambda: f64,
) -> Result<FreeEnergy, WeightsError> {
    let ratio = h.d as f64 / h.k as f64;
    let mut used: HashMap<Color, ()> = HashMap::new();

    let mut sigma = 0.0f64;
    let mut s = 0.0f64;
    for (t, &p) in &h.dot {
        if p == 0.0 {
            continue;
        }
        let w = col_phi_dot(cache, t);
        if w <= 0.0 {
            return Err(WeightsError::Support(format!(
                "variable tuple off the table: {t:?}"
            )));
        }
        sigma -= p * p.ln();
        s += p * w.ln();
        used.extend(t.iter().map(|&c| (c, ())));
    }
    for (t, &p) in &h.hat {
        if p == 0.0 {
            continue;
        }
        let vh = v_hat(t);
        if vh <= 0.0 {
            return Err(WeightsError::Support(format!(
                "clause tuple off the table: {t:?}"
            )));
        }
        sigma += ratio * p * (vh / p).ln();
        s += ratio * p * col_phi_hat_max(cache, t).ln();
        used.extend(t.iter().map(|&c| (c, ())));
    }
    for (&c, &p) in &h.bar {
        if p == 0.0 {
            continue;
        }
        sigma += h.d as f64 * p * p.ln();
        s += h.d as f64 * p * col_phi_bar(cache, c).ln();
    }
    for c in used.keys() {
        if h.bar.get(c).copied().unwrap_or(0.0) == 0.0 {
            return Err(WeightsError::Support(format!(
                "color {c:?} missing edge mass"
            )));
        }
    }
    Ok(FreeEnergy {
        sigma,
        s,
        f: sigma + lambda * s,
    })
}

/// Replica-symmetric free energy log 2 + α log(1 − 2^{1−k}).
pub fn f_rs(alpha: f64, k: usize) -> f64 {
    std::f64::consts::LN_2 + alpha * (1.0 - (2.0f64).powi(1 - k as i32)).ln()
}

/// Normalized log-size anchor s∘(C) = s⋆ − log n/(2λ⋆n) − C/n.
pub fn s_circle(s_star: f64, lambda_star: f64, n: usize, c: f64) -> f64 {
    let nf = n as f64;
    s_star - nf.ln() / (2.0 * lambda_star * nf) - c / nf
}

/// Which configurations an exhaustive partition sum runs over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartitionMode {
    /// every valid frozen configuration (3^n branch-and-prune, n ≤ 16).
    AllValid,
    /// coarsening images of the solution set only.
    CoarseningImages,
}

/// One log-size bucket [e^{j·w}, e^{(j+1)·w}).
#[derive(Debug, Clone, Copy)]
pub struct BucketRow {
    pub j: i64,
    /// s = j·w/n, the normalized log-size at the bucket's left edge.
    pub s: f64,
    /// configurations in the bucket passing the truncation indicator.
    pub count: u64,
    pub z_lambda_s: f64,
    /// the free-cycle-free subset.
    pub count_tr: u64,
    pub z_tr_lambda_s: f64,
}

#[derive(Debug, Clone)]
pub struct PartitionTable {
    pub lambda: f64,
    pub trunc: Option<usize>,
    pub width: f64,
    pub mode: PartitionMode,
    /// Σ size^λ over indicator-passing valid configurations.
    pub z_lambda: f64,
    /// the free-cycle-free part of z_lambda.
    pub z_tr_lambda: f64,
    /// additionally all pieces ≤ L variables, when trunc is set.
    pub z_trunc_tr_lambda: Option<f64>,
    pub total_valid: u64,
    pub total_pass: u64,
    pub total_tr: u64,
    pub total_trunc: Option<u64>,
    /// valid configurations whose extension count is zero (excluded).
    pub empty_configs: u64,
    pub buckets: Vec<BucketRow>,
}

impl PartitionTable {
    /// N_s of a bucket: the plain configuration count (λ = 0 weight).
    pub fn n_s(&self, j: i64) -> u64 {
        self.buckets
            .iter()
            .find(|b| b.j == j)
            .map_or(0, |b| b.count)
    }
}

const EXHAUSTIVE_LIMIT: usize = 16;

struct PartitionAccum<'a> {
    inst: &'a Instance,
    lambda: f64,
    trunc: Option<usize>,
    width: f64,
    threshold: f64,
    total_valid: u64,
    total_pass: u64,
    total_tr: u64,
    total_trunc: u64,
    empty_configs: u64,
    z_lambda: f64,
    z_tr_lambda: f64,
    z_trunc_tr_lambda: f64,
    buckets: HashMap<i64, BucketRow>,
}

impl PartitionAccum<'_> {
    fn add(&mut self, frz: &FrozenConfig) -> Result<(), WeightsError> {
        debug_assert!(crate::frozen::validate_frozen(self.inst, frz));
        self.total_valid += 1;
        let size = brute_size(self.inst, frz)?;
        if size == 0 {
            self.empty_configs += 1;
            return Ok(());
        }
        let inst = self.inst;
        let r = frz.count_forcing(inst) as f64 / inst.num_edges() as f64;
        let f = frz.num_free() as f64 / inst.n as f64;
        if r > self.threshold || f > self.threshold {
            return Ok(());
        }
        self.total_pass += 1;
        let wl = (size as f64).powf(self.lambda);
        self.z_lambda += wl;
        let dec = free_decompose(inst, frz);
        let tree_only = !dec.has_free_cycle();
        if tree_only {
            self.total_tr += 1;
            self.z_tr_lambda += wl;
            if let Some(limit) = self.trunc {
                if dec.pieces.iter().all(|p| p.vars.len() <= limit) {
                    self.total_trunc += 1;
                    self.z_trunc_tr_lambda += wl;
                }
            }
        }
        let j = ((size as f64).ln() / self.width).floor() as i64;
        let row = self.buckets.entry(j).or_insert(BucketRow {
            j,
            s: j as f64 * self.width / inst.n as f64,
            count: 0,
            z_lambda_s: 0.0,
            count_tr: 0,
            z_tr_lambda_s: 0.0,
        });
        row.count += 1;
        row.z_lambda_s += wl;
        if tree_only {
            row.count_tr += 1;
            row.z_tr_lambda_s += wl;
        }
        Ok(())
    }
}

/// Exhaustive partition sums with the R/nd ∨ f/n ≤ 7/2^k indicator.
///
/// `AllValid` walks {0,1,f}^V depth-first, pruning on violated clauses,
/// on free variables that become forced, and on frozen variables left
/// unforced once all their clauses are complete, so only valid frozen
/// configurations reach the accumulator. `CoarseningImages` sums over
/// the distinct coarsenings of the solution set instead.
pub fn partition_exhaustive(
    inst: &Instance,
    lambda: f64,
    trunc: Option<usize>,
    width: f64,
    mode: PartitionMode,
) -> Result<PartitionTable, WeightsError> {
    assert!(width > 0.0, "bucket width must be positive");
    let mut acc = PartitionAccum {
        inst,
        lambda,
        trunc,
        width,
        threshold: 7.0 / (1u64 << inst.k) as f64,
        total_valid: 0,
        total_pass: 0,
        total_tr: 0,
        total_trunc: 0,
        empty_configs: 0,
        z_lambda: 0.0,
        z_tr_lambda: 0.0,
        z_trunc_tr_lambda: 0.0,
        buckets: HashMap::new(),
    };
    match mode {
        PartitionMode::AllValid => {
            if inst.n > EXHAUSTIVE_LIMIT {
                return Err(WeightsError::TooLarge {
                    n: inst.n,
                    limit: EXHAUSTIVE_LIMIT,
                });
            }
            let mut dfs = Dfs::new(inst);
            dfs.run(0, &mut acc)?;
        }
        PartitionMode::CoarseningImages => {
            let mut seen: Vec<FrozenConfig> = Vec::new();
            for x in crate::solutions::enumerate_solutions(inst)? {
                let frz = crate::frozen::coarsen(inst, x)?;
                if !seen.contains(&frz) {
                    seen.push(frz);
                }
            }
            for frz in &seen {
                acc.add(frz)?;
            }
        }
    }
    let mut buckets: Vec<BucketRow> = acc.buckets.into_values().collect();
    buckets.sort_by_key(|b| b.j);
    Ok(PartitionTable {
        lambda,
        trunc,
        width,
        mode,
        z_lambda: acc.z_lambda,
        z_tr_lambda: acc.z_tr_lambda,
        z_trunc_tr_lambda: trunc.map(|_| acc.z_trunc_tr_lambda),
        total_valid: acc.total_valid,
        total_pass: acc.total_pass,
        total_tr: acc.total_tr,
        total_trunc: trunc.map(|_| acc.total_trunc),
        empty_configs: acc.empty_configs,
        buckets,
    })
}

/// Depth-first enumeration of valid frozen configurations.
///
/// Forcing can only come from fully frozen clauses, so each clause is
/// inspected once, when its last variable is assigned: a constant
/// evaluation prunes, a one-free-rest-constant pattern would force the
/// free variable and prunes, and unique dissenters bump their variable's
/// forcing tally. A variable's tally is final once every clause touching
/// it is complete, which is where frozen-but-unforced configurations are
/// cut.
struct Dfs<'a> {
    inst: &'a Instance,
    vals: Vec<Frz>,
    /// per clause: slots not yet assigned, evaluated-value counts, frees.
    rem: Vec<u8>,
    n0: Vec<u8>,
    n1: Vec<u8>,
    nf: Vec<u8>,
    forced: Vec<u8>,
    /// clauses whose highest variable is v.
    done_at: Vec<Vec<usize>>,
    /// variables whose forcing tally is final once v is assigned.
    final_at: Vec<Vec<usize>>,
}

impl<'a> Dfs<'a> {
    fn new(inst: &'a Instance) -> Dfs<'a> {
        let mut done_at: Vec<Vec<usize>> = vec![Vec::new(); inst.n];
        let mut last_clause_var = vec![0usize; inst.m];
        for a in 0..inst.m {
            let hi = inst.clause_edges(a).map(|e| inst.v_of(e)).max().unwrap();
            last_clause_var[a] = hi;
            done_at[hi].push(a);
        }
        let mut final_at: Vec<Vec<usize>> = vec![Vec::new(); inst.n];
        for v in 0..inst.n {
            let hi = inst
                .var_edges(v)
                .map(|e| last_clause_var[inst.a_of(e)])
                .max()
                .unwrap();
            final_at[hi].push(v);
        }
        Dfs {
            inst,
            vals: vec![Frz::Free; inst.n],
            rem: vec![inst.k as u8; inst.m],
            n0: vec![0; inst.m],
            n1: vec![0; inst.m],
            nf: vec![0; inst.m],
            forced: vec![0; inst.n],
            done_at,
            final_at,
        }
    }

    fn run(&mut self, v: usize, acc: &mut PartitionAccum) -> Result<(), WeightsError> {
        if v == self.inst.n {
            return acc.add(&FrozenConfig {
                vals: self.vals.clone(),
            });
        }
        for val in [Frz::Zero, Frz::One, Frz::Free] {
            self.vals[v] = val;
            for e in self.inst.var_edges(v) {
                let a = self.inst.a_of(e);
                self.rem[a] -= 1;
                match val.xor(self.inst.literal(e)) {
                    Frz::Zero => self.n0[a] += 1,
                    Frz::One => self.n1[a] += 1,
                    Frz::Free => self.nf[a] += 1,
                }
            }
            let mut bumped: Vec<usize> = Vec::new();
            let ok = self.complete_clauses(v, &mut bumped);
            if ok {
                self.run(v + 1, acc)?;
            }
            for &w in &bumped {
                self.forced[w] -= 1;
            }
            for e in self.inst.var_edges(v) {
                let a = self.inst.a_of(e);
                self.rem[a] += 1;
                match val.xor(self.inst.literal(e)) {
                    Frz::Zero => self.n0[a] -= 1,
                    Frz::One => self.n1[a] -= 1,
                    Frz::Free => self.nf[a] -= 1,
                }
            }
        }
        self.vals[v] = Frz::Free;
        Ok(())
    }

    fn complete_clauses(&mut self, v: usize, bumped: &mut Vec<usize>) -> bool {
        let inst = self.inst;
        for i in 0..self.done_at[v].len() {
            let a = self.done_at[v][i];
            if self.rem[a] != 0 {
                continue;
            }
            let (n0, n1, nf) = (self.n0[a], self.n1[a], self.nf[a]);
            let k = (n0 + n1 + nf) as usize;
            if nf == 0 {
                if n0 == 0 || n1 == 0 {
                    return false;
                }
                for (val, lone) in [(Frz::Zero, n0 == 1), (Frz::One, n1 == 1)] {
                    if lone && k >= 2 {
                        for e in inst.clause_edges(a) {
                            if self.vals[inst.v_of(e)].xor(inst.literal(e)) == val {
                                let w = inst.v_of(e);
                                self.forced[w] += 1;
                                bumped.push(w);
                            }
                        }
                    }
                }
            } else if nf == 1 && (n0 == 0 || n1 == 0) && k >= 2 {
                // the lone free edge would be forcing
                return false;
            }
        }
        for &w in &self.final_at[v] {
            if (self.forced[w] > 0) != !self.vals[w].is_free() {
                return false;
            }
        }
        true
    }
}
