//! Truncated color alphabets and the tilted message recursion on them.
//!
//! Edge colors of size at most `trunc` split into two half alphabets: the
//! variable side `{R0,R1,B0,B1}` plus the dot joins, and the clause side
//! `{R0,R1,B0,B1,S}` plus the hat joins. A weight vector on a half alphabet
//! stands for the full one-sided measure q(σ) = q(σ̇) (or q(σ̂)). Both update
//! directions then close over the half weights: the pair-factor cancellations
//! φ̄·φ̇ = ż and φ̄·φ̂ = ẑ are exact, the clause update averages the literal
//! signs so it only sees the orbit sums Q(x) = q(x) + q(x⊕1), and the size
//! cutoff of an output symbol coincides with the cutoff of the tuples that
//! produce it. The variable side is evaluated in log space: its weights carry
//! (d−1)-fold products that underflow long before they stop mattering.

use std::collections::HashMap;
use std::f64::consts::LN_2;

use serde::Serialize;
use thiserror::Error;

use crate::messages::{
    dot_atom, dot_rule, hat_rule, sep_atom, tree_node, tree_vars, tree_xor, Dot, Hat, TreeId,
    TreeNode, DOT_ATOM_0, DOT_ATOM_1,
};
use crate::util::{ln_multinomial, LogSum};
use crate::weights::MarginalCache;

#[derive(Debug, Error)]
pub enum BpError {
    #[error("alphabet at cutoff {trunc} exceeds {limit} symbols")]
    Explosion { trunc: usize, limit: usize },
    #[error("degrees k = {k}, d = {d} out of range")]
    Parameter { k: usize, d: usize },
    #[error("no fixed point after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("update produced a zero or non-finite normalizer")]
    ZeroNormalizer,
    #[error("weight vector has length {got}, alphabet has {want} symbols")]
    Length { got: usize, want: usize },
}

/// Shared prefix of both half alphabets: R0, R1, B0, B1.
pub const RIGID: usize = 4;

/// Variable-side half symbol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum DotSym {
    R(u8),
    B(u8),
    T(TreeId),
}

/// Clause-side half symbol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum HatSym {
    R(u8),
    B(u8),
    S,
    T(TreeId),
}

/// Cached structure of one variable-side join: its d−1 clause-side kids
/// grouped with multiplicities, the arrangement count, and its marginal.
#[derive(Debug, Clone)]
pub(crate) struct DotTreeInfo {
    pub(crate) vars: u32,
    pub(crate) kids: Vec<(usize, u32)>,
    pub(crate) ln_perm: f64,
    pub(crate) m0: f64,
    pub(crate) ln_z: f64,
}

/// Cached structure of one clause-side join: atom kids (single boundary
/// value), join kids grouped with multiplicities, arrangements, marginal.
#[derive(Debug, Clone)]
pub(crate) struct HatTreeInfo {
    pub(crate) vars: u32,
    pub(crate) atoms: u32,
    pub(crate) atom_val: u8,
    pub(crate) kids: Vec<(usize, u32)>,
    pub(crate) ln_perm: f64,
    pub(crate) m0: f64,
    pub(crate) ln_z: f64,
}

/// Both half alphabets at a size cutoff, with flip involutions and the
/// per-join caches the closed-form updates run on.
#[derive(Debug, Clone)]
pub struct ColorSpace {
    pub k: usize,
    pub d: usize,
    pub trunc: usize,
    pub dots: Vec<DotSym>,
    pub hats: Vec<HatSym>,
    pub dot_flip: Vec<usize>,
    pub hat_flip: Vec<usize>,
    pub(crate) dinfo: Vec<DotTreeInfo>,
    pub(crate) hinfo: Vec<HatTreeInfo>,
    dot_ix: HashMap<TreeId, usize>,
    hat_ix: HashMap<TreeId, usize>,
    pub(crate) dot_layers: Vec<Vec<usize>>,
    pub(crate) hat_layers: Vec<Vec<usize>>,
}

impl ColorSpace {
    /// Index of the separator symbol, present once trees exist.
    pub fn s_index(&self) -> Option<usize> {
        (self.trunc >= 1).then_some(RIGID)
    }

    /// First hat-join index.
    pub fn hat_tree_base(&self) -> usize {
        RIGID + usize::from(self.trunc >= 1)
    }

    pub fn dot_index(&self, t: TreeId) -> Option<usize> {
        self.dot_ix.get(&t).copied()
    }

    pub fn hat_index(&self, t: TreeId) -> Option<usize> {
        if t == sep_atom() {
            return self.s_index();
        }
        self.hat_ix.get(&t).copied()
    }

    /// Variables of the dot join at a symbol index.
    pub fn dot_vars(&self, idx: usize) -> u32 {
        self.dinfo[idx - RIGID].vars
    }

    /// Variables of the clause-side symbol at an index (1 for S).
    pub fn hat_vars(&self, idx: usize) -> u32 {
        if Some(idx) == self.s_index() {
            1
        } else {
            self.hinfo[idx - self.hat_tree_base()].vars
        }
    }

    /// Marginal at 0 of the clause-side symbol (1/2 for S).
    pub(crate) fn hat_m0(&self, idx: usize) -> f64 {
        if Some(idx) == self.s_index() {
            0.5
        } else {
            self.hinfo[idx - self.hat_tree_base()].m0
        }
    }
}

/// Multisets from weight-sorted groups with exact total weight and bounded
/// length; `f` gets (payload, multiplicity) runs and may return false to
/// abort the walk.
fn exact_multisets<T: Copy>(
    groups: &[(u32, &[T])],
    target: u32,
    cap_len: usize,
    f: &mut dyn FnMut(&[(T, u32)]) -> bool,
) -> bool {
    let mut stack: Vec<(T, u32)> = Vec::new();
    rec_multisets(groups, 0, 0, target, cap_len, &mut stack, f)
}

fn rec_multisets<T: Copy>(
    groups: &[(u32, &[T])],
    gi: usize,
    ii: usize,
    target: u32,
    cap_len: usize,
    stack: &mut Vec<(T, u32)>,
    f: &mut dyn FnMut(&[(T, u32)]) -> bool,
) -> bool {
    if target == 0 {
        return f(stack);
    }
    if gi >= groups.len() {
        return true;
    }
    let (w, items) = groups[gi];
    if w > target {
        // groups are sorted by ascending weight
        return true;
    }
    if ii >= items.len() {
        return rec_multisets(groups, gi + 1, 0, target, cap_len, stack, f);
    }
    let max_mult = (target / w).min(cap_len as u32);
    for mult in 1..=max_mult {
        stack.push((items[ii], mult));
        let go = rec_multisets(
            groups,
            gi,
            ii + 1,
            target - mult * w,
            cap_len - mult as usize,
            stack,
            f,
        );
        stack.pop();
        if !go {
            return false;
        }
    }
    rec_multisets(groups, gi, ii + 1, target, cap_len, stack, f)
}

/// Build both half alphabets of size at most `trunc` by alternating the two
/// join rules layer by layer, then cache arrangement counts and marginals.
pub fn enumerate_color_space(k: usize, d: usize, trunc: usize) -> Result<ColorSpace, BpError> {
    if k < 2 || d < 2 {
        return Err(BpError::Parameter { k, d });
    }
    const LIMIT: usize = 20_000;
    let mut dot_ids: Vec<Vec<TreeId>> = vec![Vec::new(); trunc + 1];
    let mut hat_ids: Vec<Vec<TreeId>> = vec![Vec::new(); trunc + 1];
    let mut total = 0usize;
    if trunc >= 1 {
        match dot_rule(&vec![Hat::Tree(sep_atom()); d - 1]) {
            Some(Dot::Tree(t)) => dot_ids[1].push(t),
            _ => unreachable!("separators join"),
        }
        total += 1;
    }
    for v in 2..=trunc {
        // clause-side joins of v variables: kid multisets summing to v−1
        let groups: Vec<(u32, &[TreeId])> = (1..v).map(|w| (w as u32, &dot_ids[w][..])).collect();
        let mut fresh: Vec<TreeId> = Vec::new();
        let mut over = false;
        exact_multisets(&groups, (v - 1) as u32, k - 1, &mut |sel| {
            let kids: Vec<TreeId> = sel
                .iter()
                .flat_map(|&(t, m)| std::iter::repeat(t).take(m as usize))
                .collect();
            let pad = k - 1 - kids.len();
            if pad == 0 {
                let dots: Vec<Dot> = kids.iter().map(|&t| Dot::Tree(t)).collect();
                if let Hat::Tree(t) = hat_rule(&dots) {
                    fresh.push(t);
                }
            } else {
                for b in 0..2u8 {
                    let mut dots: Vec<Dot> = vec![Dot::Tree(dot_atom(b)); pad];
                    dots.extend(kids.iter().map(|&t| Dot::Tree(t)));
                    if let Hat::Tree(t) = hat_rule(&dots) {
                        fresh.push(t);
                    }
                }
            }
            over = total + fresh.len() > LIMIT;
            !over
        });
        if over {
            return Err(BpError::Explosion {
                trunc,
                limit: LIMIT,
            });
        }
        total += fresh.len();
        hat_ids[v] = fresh;
        // variable-side joins of v variables: kid excesses summing to v−1
        let groups: Vec<(u32, &[TreeId])> =
            (2..=v).map(|w| ((w - 1) as u32, &hat_ids[w][..])).collect();
        let mut fresh: Vec<TreeId> = Vec::new();
        exact_multisets(&groups, (v - 1) as u32, d - 1, &mut |sel| {
            let kids: Vec<TreeId> = sel
                .iter()
                .flat_map(|&(t, m)| std::iter::repeat(t).take(m as usize))
                .collect();
            let mut hats: Vec<Hat> = vec![Hat::Tree(sep_atom()); d - 1 - kids.len()];
            hats.extend(kids.iter().map(|&t| Hat::Tree(t)));
            match dot_rule(&hats) {
                Some(Dot::Tree(t)) => fresh.push(t),
                _ => unreachable!("join inputs"),
            }
            over = total + fresh.len() > LIMIT;
            !over
        });
        if over {
            return Err(BpError::Explosion {
                trunc,
                limit: LIMIT,
            });
        }
        total += fresh.len();
        dot_ids[v] = fresh;
    }

    let mut dots = vec![DotSym::R(0), DotSym::R(1), DotSym::B(0), DotSym::B(1)];
    let mut hats = vec![HatSym::R(0), HatSym::R(1), HatSym::B(0), HatSym::B(1)];
    if trunc >= 1 {
        hats.push(HatSym::S);
    }
    let mut dot_layers: Vec<Vec<usize>> = vec![Vec::new(); trunc + 1];
    let mut hat_layers: Vec<Vec<usize>> = vec![Vec::new(); trunc + 1];
    let mut dot_ix: HashMap<TreeId, usize> = HashMap::new();
    let mut hat_ix: HashMap<TreeId, usize> = HashMap::new();
    for v in 1..=trunc {
        for &t in &dot_ids[v] {
            dot_ix.insert(t, dots.len());
            dot_layers[v].push(dots.len());
            dots.push(DotSym::T(t));
        }
        for &t in &hat_ids[v] {
            hat_ix.insert(t, hats.len());
            hat_layers[v].push(hats.len());
            hats.push(HatSym::T(t));
        }
    }
    let dot_flip: Vec<usize> = dots
        .iter()
        .map(|s| match *s {
            DotSym::R(b) => (b ^ 1) as usize,
            DotSym::B(b) => 2 + (b ^ 1) as usize,
            DotSym::T(t) => *dot_ix.get(&tree_xor(t, 1)).expect("flip image in alphabet"),
        })
        .collect();
    let s_idx = RIGID;
    let hat_flip: Vec<usize> = hats
        .iter()
        .map(|s| match *s {
            HatSym::R(b) => (b ^ 1) as usize,
            HatSym::B(b) => 2 + (b ^ 1) as usize,
            HatSym::S => s_idx,
            HatSym::T(t) => *hat_ix.get(&tree_xor(t, 1)).expect("flip image in alphabet"),
        })
        .collect();

    let mut cache = MarginalCache::new();
    let hat_tree_base = RIGID + usize::from(trunc >= 1);
    let mut dinfo = Vec::with_capacity(dots.len() - RIGID);
    for sym in &dots[RIGID..] {
        let DotSym::T(t) = *sym else { unreachable!() };
        let TreeNode::DotJoin(kids) = tree_node(t) else {
            unreachable!()
        };
        let mut groups: Vec<(usize, u32)> = Vec::new();
        for &kid in &kids {
            let hi = if kid == sep_atom() {
                s_idx
            } else {
                hat_ix[&kid]
            };
            match groups.last_mut() {
                Some((h, m)) if *h == hi => *m += 1,
                _ => groups.push((hi, 1)),
            }
        }
        let parts: Vec<usize> = groups.iter().map(|&(_, m)| m as usize).collect();
        let (meas, ln_z) = cache.dot_marginal_ln(t);
        dinfo.push(DotTreeInfo {
            vars: tree_vars(t),
            kids: groups,
            ln_perm: ln_multinomial(d - 1, &parts),
            m0: meas.get(0),
            ln_z,
        });
    }
    let mut hinfo = Vec::with_capacity(hats.len() - hat_tree_base);
    for sym in &hats[hat_tree_base..] {
        let HatSym::T(t) = *sym else { unreachable!() };
        let TreeNode::HatJoin(kids) = tree_node(t) else {
            unreachable!()
        };
        let mut atoms = 0u32;
        let mut atom_val = 0u8;
        let mut groups: Vec<(usize, u32)> = Vec::new();
        for &kid in &kids {
            if kid == DOT_ATOM_0 || kid == DOT_ATOM_1 {
                atoms += 1;
                atom_val = (kid - DOT_ATOM_0) as u8;
                continue;
            }
            let di = dot_ix[&kid];
            match groups.last_mut() {
                Some((h, m)) if *h == di => *m += 1,
                _ => groups.push((di, 1)),
            }
        }
        let mut parts: Vec<usize> = vec![atoms as usize];
        parts.extend(groups.iter().map(|&(_, m)| m as usize));
        let (meas, ln_z) = cache.hat_marginal_ln(t);
        hinfo.push(HatTreeInfo {
            vars: tree_vars(t),
            atoms,
            atom_val,
            kids: groups,
            ln_perm: ln_multinomial(k - 1, &parts),
            m0: meas.get(0),
            ln_z,
        });
    }

    Ok(ColorSpace {
        k,
        d,
        trunc,
        dots,
        hats,
        dot_flip,
        hat_flip,
        dinfo,
        hinfo,
        dot_ix,
        hat_ix,
        dot_layers,
        hat_layers,
    })
}

/// Nonnegative weights on a half alphabet, summing to one.
#[derive(Debug, Clone, Serialize)]
pub struct OneSidedMeasure {
    pub w: Vec<f64>,
}

impl OneSidedMeasure {
    pub fn l1(&self, other: &[f64]) -> f64 {
        l1(&self.w, other)
    }

    /// Largest deviation from flip symmetry.
    pub fn flip_residual(&self, flip: &[usize]) -> f64 {
        self.w
            .iter()
            .enumerate()
            .map(|(i, &x)| (x - self.w[flip[i]]).abs())
            .fold(0.0, f64::max)
    }
}

pub fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Smallest C ≤ 64 with (qR + 2^k·qf)/C ≤ qB and qB·(1 − C·2^{−k}) ≤ qR,
/// in flip-aggregated weights; the upper constraint is vacuous once
/// C ≥ 2^k.
pub fn gamma_certificate(space: &ColorSpace, q: &[f64]) -> Option<u32> {
    let qr = q[0] + q[1];
    let qb = q[2] + q[3];
    let qf: f64 = q[RIGID..].iter().sum();
    let two_k = (2f64).powi(space.k as i32);
    const SLACK: f64 = 1e-12;
    (1..=64u32).find(|&c| {
        let cf = c as f64;
        let lower = qr + two_k * qf <= cf * qb + SLACK;
        let upper = cf >= two_k || qb * (1.0 - cf / two_k) <= qr + SLACK;
        lower && upper
    })
}

/// One full update: clause side then variable side, with both normalizers.
#[derive(Debug, Clone, Serialize)]
pub struct BpStep {
    pub q_hat: Vec<f64>,
    pub q_dot: Vec<f64>,
    pub ln_norm_hat: f64,
    pub ln_norm_dot: f64,
}

pub(crate) fn binom(n: usize, r: usize) -> f64 {
    let r = r.min(n - r);
    let mut c = 1.0f64;
    for i in 0..r {
        c = c * (n - i) as f64 / (i + 1) as f64;
    }
    c
}

/// Ordered tuples of `len` dot joins with at most `cap` variables in total;
/// `f` gets the products of orbit weights and of the two one-point marginals.
pub(crate) fn for_free_tuples(
    space: &ColorSpace,
    qd2: &[f64],
    len: usize,
    cap: u32,
    f: &mut dyn FnMut(f64, f64, f64),
) {
    if (len as u32) > cap {
        return;
    }
    rec_free_tuples(space, qd2, len, cap, 1.0, 1.0, 1.0, f);
}

#[allow(clippy::too_many_arguments)]
fn rec_free_tuples(
    space: &ColorSpace,
    qd2: &[f64],
    left: usize,
    cap: u32,
    pq: f64,
    p0: f64,
    p1: f64,
    f: &mut dyn FnMut(f64, f64, f64),
) {
    if left == 0 {
        f(pq, p0, p1);
        return;
    }
    let max_v = (cap - (left as u32 - 1)).min(space.trunc as u32);
    for v in 1..=max_v {
        for &si in &space.dot_layers[v as usize] {
            let info = &space.dinfo[si - RIGID];
            rec_free_tuples(
                space,
                qd2,
                left - 1,
                cap - v,
                pq * qd2[si],
                p0 * info.m0,
                p1 * (1.0 - info.m0),
                f,
            );
        }
    }
}

/// Clause update in the evaluated frame: unnormalized weights per output
/// symbol, literal average folded in as the uniform 2^{−k}.
pub(crate) fn clause_side(space: &ColorSpace, q: &[f64], lambda: f64) -> Vec<f64> {
    let k = space.k;
    let km1 = (k - 1) as i32;
    let qd2: Vec<f64> = (0..q.len()).map(|i| q[i] + q[space.dot_flip[i]]).collect();
    let qr = qd2[0];
    let qb = qd2[2];
    let qf: f64 = qd2[RIGID..].iter().sum();
    let all = 2.0 * qb + qf;
    let bf = qb + qf;
    let mut u = vec![0.0f64; space.hats.len()];
    // forcing output: a lone forced edge against k−1 same-value others
    let ur = 2.0 * qb.powi(km1);
    u[0] = ur;
    u[1] = ur;
    // non-forcing rigid output: forced elsewhere, or separating, or a piece
    let mut wb = 2.0 * (k - 1) as f64 * qr * qb.powi(km1 - 1)
        + 2.0 * (all.powi(km1) - bf.powi(km1)).max(0.0);
    for m in 2..=(k - 1).min(space.trunc) {
        let mut acc = 0.0;
        for_free_tuples(space, &qd2, m, space.trunc as u32, &mut |pq, p0, p1| {
            acc += ((1.0 - p0).powf(lambda) + (1.0 - p1).powf(lambda)) * pq;
        });
        wb += binom(k - 1, m) * qb.powi(km1 - m as i32) * acc;
    }
    u[2] = wb;
    u[3] = wb;
    if let Some(si) = space.s_index() {
        // separating output: both boundary values among the other edges
        let sep = all.powi(km1) - 2.0 * bf.powi(km1) + qf.powi(km1);
        u[si] = 2f64.powf(1.0 + lambda) * sep.max(0.0);
    }
    // join outputs: the kid multiset pins the rest of the clause
    for (j, info) in space.hinfo.iter().enumerate() {
        let mut w = (info.ln_perm + lambda * info.ln_z).exp() * 2.0 * qb.powi(info.atoms as i32);
        for &(di, mult) in &info.kids {
            w *= qd2[di].powi(mult as i32);
        }
        u[space.hat_tree_base() + j] = w;
    }
    let scale = 2f64.powi(-(k as i32));
    u.iter_mut().for_each(|x| *x *= scale);
    u
}

/// Variable update, log-scale unnormalized weights per output symbol.
pub(crate) fn var_side(space: &ColorSpace, qh: &[f64], lambda: f64) -> Vec<f64> {
    let dm1 = (space.d - 1) as f64;
    let mut ln_u = vec![f64::NEG_INFINITY; space.dots.len()];
    for b in 0..2usize {
        let a = qh[b] + qh[2 + b];
        if a > 0.0 {
            let la = a.ln();
            // forced output: the others forced or quiet, same value
            ln_u[b] = dm1 * la;
            if qh[b] > 0.0 {
                // frozen unforced: subtract the all-quiet tuple
                ln_u[2 + b] = dm1 * la + (-(dm1 * (qh[2 + b].ln() - la)).exp()).ln_1p();
            }
        }
    }
    for (i, info) in space.dinfo.iter().enumerate() {
        let mut s = info.ln_perm + lambda * info.ln_z;
        for &(hi, mult) in &info.kids {
            s += mult as f64 * qh[hi].ln();
        }
        ln_u[RIGID + i] = s;
    }
    ln_u
}

/// One tilted sweep: q̂ from the clause side of q̇, then the next q̇.
pub fn bp_step(space: &ColorSpace, q_dot: &[f64], lambda: f64) -> Result<BpStep, BpError> {
    if q_dot.len() != space.dots.len() {
        return Err(BpError::Length {
            got: q_dot.len(),
            want: space.dots.len(),
        });
    }
    let u = clause_side(space, q_dot, lambda);
    let zh: f64 = u.iter().sum();
    if !(zh > 0.0) || !zh.is_finite() {
        return Err(BpError::ZeroNormalizer);
    }
    let q_hat: Vec<f64> = u.iter().map(|x| x / zh).collect();
    let ln_u = var_side(space, &q_hat, lambda);
    let mut ls = LogSum::new();
    for &x in &ln_u {
        ls.add_ln(x);
    }
    let ln_zd = ls.ln();
    if !ln_zd.is_finite() {
        return Err(BpError::ZeroNormalizer);
    }
    let q_new: Vec<f64> = ln_u.iter().map(|&x| (x - ln_zd).exp()).collect();
    Ok(BpStep {
        q_hat,
        q_dot: q_new,
        ln_norm_hat: zh.ln(),
        ln_norm_dot: ln_zd,
    })
}

/// Flip-symmetric start: most mass split over the rigid symbols, a small
/// share spread over the joins.
pub fn default_guess(space: &ColorSpace) -> Vec<f64> {
    let nt = space.dots.len() - RIGID;
    let eps = if nt > 0 {
        2f64.powi(1 - space.k as i32).min(0.2)
    } else {
        0.0
    };
    let mut q = vec![(1.0 - eps) / 4.0; RIGID];
    q.extend(std::iter::repeat(eps / nt.max(1) as f64).take(nt));
    q
}

/// A converged sweep with its trajectory diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct FixedPoint {
    pub q: OneSidedMeasure,
    pub q_hat: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    /// Successive residual quotients, most recent last (up to 64 kept).
    pub ratios: Vec<f64>,
    /// k ≥ 7: inside the regime where the sweep provably contracts.
    pub proven_contraction: bool,
}

/// Plain iteration of the sweep from `warm` (or the default guess) until the
/// l1 step residual drops below `tol`.
pub fn solve_fixed_point(
    space: &ColorSpace,
    lambda: f64,
    tol: f64,
    max_iter: usize,
    warm: Option<&[f64]>,
) -> Result<FixedPoint, BpError> {
    let mut q = match warm {
        Some(w) => {
            if w.len() != space.dots.len() {
                return Err(BpError::Length {
                    got: w.len(),
                    want: space.dots.len(),
                });
            }
            let z: f64 = w.iter().sum();
            if !(z > 0.0) || !z.is_finite() {
                return Err(BpError::ZeroNormalizer);
            }
            w.iter().map(|x| x / z).collect()
        }
        None => default_guess(space),
    };
    let mut ratios: Vec<f64> = Vec::new();
    let mut prev_res = f64::NAN;
    for it in 1..=max_iter {
        let step = bp_step(space, &q, lambda)?;
        let res = l1(&step.q_dot, &q);
        if !res.is_finite() {
            return Err(BpError::NonConvergence {
                iterations: it,
                residual: res,
            });
        }
        if prev_res.is_finite() && prev_res > 0.0 {
            if ratios.len() == 64 {
                ratios.remove(0);
            }
            ratios.push(res / prev_res);
        }
        q = step.q_dot;
        if res < tol {
            return Ok(FixedPoint {
                q: OneSidedMeasure { w: q },
                q_hat: step.q_hat,
                iterations: it,
                residual: res,
                ratios,
                proven_contraction: space.k >= 7,
            });
        }
        prev_res = res;
    }
    Err(BpError::NonConvergence {
        iterations: max_iter,
        residual: prev_res,
    })
}

struct BarEntry {
    dot: usize,
    hat: usize,
    /// 1/φ̄ for the pair (1 on rigid pairs).
    pinv: f64,
    /// Unnormalized edge mass φ̄^{−λ}·q̇·q̂.
    term: f64,
}

/// Edge-pair support with unnormalized masses, and their sum.
fn bar_support(space: &ColorSpace, qd: &[f64], qh: &[f64], lambda: f64) -> (Vec<BarEntry>, f64) {
    let mut entries: Vec<BarEntry> = (0..RIGID)
        .map(|i| BarEntry {
            dot: i,
            hat: i,
            pinv: 1.0,
            term: qd[i] * qh[i],
        })
        .collect();
    for (ti, info) in space.dinfo.iter().enumerate() {
        let di = RIGID + ti;
        if let Some(si) = space.s_index() {
            entries.push(BarEntry {
                dot: di,
                hat: si,
                pinv: 0.5,
                term: 0.5f64.powf(lambda) * qd[di] * qh[si],
            });
        }
        for (hj, hi) in space.hinfo.iter().enumerate() {
            if info.vars + hi.vars - 1 <= space.trunc as u32 {
                let hidx = space.hat_tree_base() + hj;
                let pinv = info.m0 * hi.m0 + (1.0 - info.m0) * (1.0 - hi.m0);
                entries.push(BarEntry {
                    dot: di,
                    hat: hidx,
                    pinv,
                    term: pinv.powf(lambda) * qd[di] * qh[hidx],
                });
            }
        }
    }
    let z: f64 = entries.iter().map(|e| e.term).sum();
    (entries, z)
}

/// Sum of the tilted weights over all variable tuples, in logs, along with
/// the free-tuple terms (log weight, log factor) for the entropy pieces.
pub(crate) fn var_tuple_sum(space: &ColorSpace, qh: &[f64], lambda: f64) -> (f64, Vec<(f64, f64)>) {
    let d = space.d;
    let dm = d as f64;
    let mut ls = LogSum::new();
    for b in 0..2usize {
        let a = qh[b] + qh[2 + b];
        if qh[b] > 0.0 && a > 0.0 {
            let la = a.ln();
            ls.add_ln(dm * la + (-(dm * (qh[2 + b].ln() - la)).exp()).ln_1p());
        }
    }
    let mut free_terms: Vec<(f64, f64)> = Vec::new();
    if let Some(si) = space.s_index() {
        let ln_qs = qh[si].ln();
        let groups: Vec<(u32, &[usize])> = (2..=space.trunc)
            .map(|v| ((v - 1) as u32, &space.hat_layers[v][..]))
            .collect();
        for target in 0..=(space.trunc - 1) as u32 {
            exact_multisets(&groups, target, d, &mut |sel| {
                let mut cnt = 0usize;
                let mut p0 = 1.0f64;
                let mut p1 = 1.0f64;
                let mut lnq = 0.0f64;
                let mut parts: Vec<usize> = Vec::with_capacity(sel.len() + 1);
                for &(hi, mult) in sel {
                    let info = &space.hinfo[hi - space.hat_tree_base()];
                    cnt += mult as usize;
                    p0 *= info.m0.powi(mult as i32);
                    p1 *= (1.0 - info.m0).powi(mult as i32);
                    lnq += mult as f64 * qh[hi].ln();
                    parts.push(mult as usize);
                }
                let s = d - cnt;
                parts.push(s);
                let ln_phidot = (p0 + p1).ln() - s as f64 * LN_2;
                let mut ln_term = ln_multinomial(d, &parts) + lnq + lambda * ln_phidot;
                if s > 0 {
                    ln_term += s as f64 * ln_qs;
                }
                free_terms.push((ln_term, ln_phidot));
                true
            });
        }
    }
    for &(t, _) in &free_terms {
        ls.add_ln(t);
    }
    (ls.ln(), free_terms)
}

/// Sum of the tilted weights over all clause tuples (evaluated frame,
/// literal-averaged), and the matching Σ w·log Φ̂ accumulator for the
/// entropy piece.
pub(crate) fn clause_tuple_sum(space: &ColorSpace, qd2: &[f64], lambda: f64) -> (f64, f64) {
    let k = space.k;
    let ki = k as i32;
    let qr = qd2[0];
    let qb = qd2[2];
    let qf: f64 = qd2[RIGID..].iter().sum();
    let all = 2.0 * qb + qf;
    let bf = qb + qf;
    let mut z = 2.0 * k as f64 * qr * qb.powi(ki - 1)
        + (all.powi(ki) - 2.0 * bf.powi(ki) + qf.powi(ki)).max(0.0);
    let mut wlog = 0.0f64;
    for m in 2..=(k - 1).min(space.trunc) {
        let mut zm = 0.0f64;
        let mut lm = 0.0f64;
        for_free_tuples(space, qd2, m, space.trunc as u32, &mut |pq, p0, p1| {
            let f0 = 1.0 - p0;
            let f1 = 1.0 - p1;
            let w0 = f0.powf(lambda) * pq;
            let w1 = f1.powf(lambda) * pq;
            zm += w0 + w1;
            lm += w0 * f0.ln() + w1 * f1.ln();
        });
        let c = binom(k, m) * qb.powi(ki - m as i32);
        z += c * zm;
        wlog += c * lm;
    }
    if k <= space.trunc {
        for_free_tuples(space, qd2, k, space.trunc as u32, &mut |pq, p0, p1| {
            let f = 1.0 - p0 - p1;
            if f > 0.0 {
                let w = f.powf(lambda) * pq;
                z += w;
                wlog += w * f.ln();
            }
        });
    }
    let scale = 2f64.powi(-ki);
    (z * scale, wlog * scale)
}

/// The tuple measures induced by a variable-side fixed point: normalizers,
/// entropy and size functionals, and the self-consistency residuals.
#[derive(Debug, Clone, Serialize)]
pub struct OptimalProfile {
    pub lambda: f64,
    pub q_dot: Vec<f64>,
    pub q_hat: Vec<f64>,
    /// Single-update normalizers (clause side, variable side).
    pub ln_norm_hat: f64,
    pub ln_norm_dot: f64,
    /// Tuple sums: variable d-tuples, clause k-tuples, edge pairs.
    pub ln_var_sum: f64,
    pub ln_clause_sum: f64,
    pub ln_edge_sum: f64,
    pub sigma: f64,
    pub s_star: f64,
    pub f_value: f64,
    /// Largest l1 gap between a tuple marginal and the edge measure.
    pub compat_residual: f64,
    /// |log| gaps in var = norm·edge and clause = norm·edge.
    pub identity_var: f64,
    pub identity_clause: f64,
    pub gamma_c: Option<u32>,
    /// Edge measure by half-symbol indices.
    pub bar: Vec<(usize, usize, f64)>,
}

/// Evaluate the tuple measures at q̇ (with q̂ its clause image). The two
/// normalizer identities and the marginal compatibility hold exactly at a
/// fixed point; their residuals measure how far q̇ is from one.
pub fn build_optimal_profile(
    space: &ColorSpace,
    q_dot: &[f64],
    lambda: f64,
) -> Result<OptimalProfile, BpError> {
    if q_dot.len() != space.dots.len() {
        return Err(BpError::Length {
            got: q_dot.len(),
            want: space.dots.len(),
        });
    }
    let u_hat = clause_side(space, q_dot, lambda);
    let z_step_hat: f64 = u_hat.iter().sum();
    if !(z_step_hat > 0.0) || !z_step_hat.is_finite() {
        return Err(BpError::ZeroNormalizer);
    }
    let q_hat: Vec<f64> = u_hat.iter().map(|x| x / z_step_hat).collect();
    let ln_u_dot = var_side(space, &q_hat, lambda);
    let mut ls = LogSum::new();
    for &x in &ln_u_dot {
        ls.add_ln(x);
    }
    let ln_norm_dot = ls.ln();
    if !ln_norm_dot.is_finite() {
        return Err(BpError::ZeroNormalizer);
    }

    let qd2: Vec<f64> = (0..q_dot.len())
        .map(|i| q_dot[i] + q_dot[space.dot_flip[i]])
        .collect();
    let (ln_var_sum, free_terms) = var_tuple_sum(space, &q_hat, lambda);
    let (clause_sum, clause_wlog) = clause_tuple_sum(space, &qd2, lambda);
    let (bar, z_bar) = bar_support(space, q_dot, &q_hat, lambda);
    if !(clause_sum > 0.0) || !(z_bar > 0.0) || !ln_var_sum.is_finite() {
        return Err(BpError::ZeroNormalizer);
    }

    let s_bar: f64 = bar
        .iter()
        .filter(|e| e.pinv < 1.0)
        .map(|e| -(e.term / z_bar) * e.pinv.ln())
        .sum();
    let s_var: f64 = free_terms
        .iter()
        .map(|&(lt, lp)| (lt - ln_var_sum).exp() * lp)
        .sum();
    let s_clause = clause_wlog / clause_sum;
    let dm = space.d as f64;
    let ratio = dm / space.k as f64;
    let s_star = s_var + ratio * s_clause + dm * s_bar;
    let f_value = ln_var_sum + ratio * clause_sum.ln() - dm * z_bar.ln();
    let sigma = f_value - lambda * s_star;

    let mut res_dot = 0.0f64;
    let mut res_hat = 0.0f64;
    for e in &bar {
        let pl = e.pinv.powf(lambda);
        let hbar = e.term / z_bar;
        res_dot += (q_hat[e.hat] * pl * (ln_u_dot[e.dot] - ln_var_sum).exp() - hbar).abs();
        res_hat += (q_dot[e.dot] * pl * u_hat[e.hat] / clause_sum - hbar).abs();
    }
    let identity_var = (ln_var_sum - ln_norm_dot - z_bar.ln()).abs();
    let identity_clause = (clause_sum.ln() - z_step_hat.ln() - z_bar.ln()).abs();

    Ok(OptimalProfile {
        lambda,
        q_dot: q_dot.to_vec(),
        q_hat,
        ln_norm_hat: z_step_hat.ln(),
        ln_norm_dot,
        ln_var_sum,
        ln_clause_sum: clause_sum.ln(),
        ln_edge_sum: z_bar.ln(),
        sigma,
        s_star,
        f_value,
        compat_residual: res_dot.max(res_hat),
        identity_var,
        identity_clause,
        gamma_c: gamma_certificate(space, q_dot),
        bar: bar.iter().map(|e| (e.dot, e.hat, e.term / z_bar)).collect(),
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct LambdaRow {
    pub lambda: f64,
    pub sigma: f64,
    pub s: f64,
    pub f: f64,
    pub residual: f64,
    pub iterations: usize,
}

/// The tilt where the tuple complexity Σ crosses zero.
#[derive(Debug, Clone, Serialize)]
pub struct LambdaStar {
    pub lambda_star: f64,
    pub s_star: f64,
    pub sigma_star: f64,
    pub c_star: f64,
    /// Σ still nonnegative at λ = 1; the crossing sits at the boundary.
    pub boundary: bool,
    pub bracket: (f64, f64),
    pub rows: Vec<LambdaRow>,
}

/// Scan λ over a 64-interval grid (warm-starting each solve from the last),
/// then bisect the last sign change of Σ forty times.
pub fn find_lambda_star(
    space: &ColorSpace,
    tol: f64,
    max_iter: usize,
) -> Result<LambdaStar, BpError> {
    const GRID: usize = 64;
    const BISECT: usize = 40;
    let mut rows = Vec::with_capacity(GRID + 1);
    let mut warm: Option<Vec<f64>> = None;
    let mut solved: Vec<(f64, Vec<f64>, f64, f64)> = Vec::with_capacity(GRID + 1);
    for j in 0..=GRID {
        let lam = j as f64 / GRID as f64;
        let fp = solve_fixed_point(space, lam, tol, max_iter, warm.as_deref())?;
        let prof = build_optimal_profile(space, &fp.q.w, lam)?;
        rows.push(LambdaRow {
            lambda: lam,
            sigma: prof.sigma,
            s: prof.s_star,
            f: prof.f_value,
            residual: fp.residual,
            iterations: fp.iterations,
        });
        warm = Some(fp.q.w.clone());
        solved.push((lam, fp.q.w, prof.sigma, prof.s_star));
    }
    let j_star = (0..=GRID).rev().find(|&j| solved[j].2 >= 0.0);
    let Some(j_star) = j_star else {
        // Σ negative on the whole grid: pinned at zero
        let (_, _, sigma, s) = &solved[0];
        return Ok(LambdaStar {
            lambda_star: 0.0,
            s_star: *s,
            sigma_star: *sigma,
            c_star: f64::INFINITY,
            boundary: false,
            bracket: (0.0, 1.0 / GRID as f64),
            rows,
        });
    };
    if j_star == GRID {
        let (_, _, sigma, s) = &solved[GRID];
        return Ok(LambdaStar {
            lambda_star: 1.0,
            s_star: *s,
            sigma_star: *sigma,
            c_star: 0.5,
            boundary: true,
            bracket: (1.0, 1.0),
            rows,
        });
    }
    let (mut lo, mut q_lo, mut sigma_lo, mut s_lo) = solved[j_star].clone();
    let mut hi = solved[j_star + 1].0;
    for _ in 0..BISECT {
        let mid = 0.5 * (lo + hi);
        let fp = solve_fixed_point(space, mid, tol, max_iter, Some(&q_lo))?;
        let prof = build_optimal_profile(space, &fp.q.w, mid)?;
        if prof.sigma >= 0.0 {
            lo = mid;
            q_lo = fp.q.w;
            sigma_lo = prof.sigma;
            s_lo = prof.s_star;
        } else {
            hi = mid;
        }
    }
    Ok(LambdaStar {
        lambda_star: lo,
        s_star: s_lo,
        sigma_star: sigma_lo,
        c_star: 1.0 / (2.0 * lo),
        boundary: false,
        bracket: (lo, hi),
        rows,
    })
}

/// Diagnostics of the two-copy edge measure built from independent copies.
#[derive(Debug, Clone, Serialize)]
pub struct PairProfile {
    pub lambda: f64,
    pub ln_pair_sum: f64,
    /// |log 𝔷̄₂ − 2 log 𝔷̄|: the pair sum against the square of the single.
    pub product_gap: f64,
    /// l1 gap between the first-copy marginal and the one-copy edge measure.
    pub copy_residual: f64,
    /// Mass of the diagonal σ¹ = σ².
    pub diag_mass: f64,
}

/// Tensorize the edge measure over two copies with independent signs: the
/// clause weight factorizes, so the pair measure is the product measure.
pub fn pair_profile(
    space: &ColorSpace,
    q_dot: &[f64],
    lambda: f64,
) -> Result<PairProfile, BpError> {
    let step = bp_step(space, q_dot, lambda)?;
    let (bar, z_bar) = bar_support(space, q_dot, &step.q_hat, lambda);
    if !(z_bar > 0.0) {
        return Err(BpError::ZeroNormalizer);
    }
    let mut z2 = 0.0f64;
    let mut diag = 0.0f64;
    let mut marg = vec![0.0f64; bar.len()];
    for (i, a) in bar.iter().enumerate() {
        for (j, b) in bar.iter().enumerate() {
            let w = a.term * b.term;
            z2 += w;
            if i == j {
                diag += w;
            }
            marg[i] += w;
        }
    }
    let copy_residual: f64 = bar
        .iter()
        .zip(&marg)
        .map(|(e, &m)| (m / z2 - e.term / z_bar).abs())
        .sum();
    Ok(PairProfile {
        lambda,
        ln_pair_sum: z2.ln(),
        product_gap: (z2.ln() - 2.0 * z_bar.ln()).abs(),
        copy_residual,
        diag_mass: diag / z2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::messages::Color;
    use crate::weights::{col_phi_bar, col_phi_dot, col_phi_hat_avg_pow, free_energy, ProfileDist};
    use itertools::Itertools;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
    }

    /// All full colors of the space: rigid plus in-size (dot, hat) pairs.
    fn full_colors(space: &ColorSpace) -> Vec<Color> {
        let mut out = vec![Color::R(0), Color::R(1), Color::B(0), Color::B(1)];
        for ds in &space.dots {
            let DotSym::T(t) = *ds else { continue };
            for hs in &space.hats {
                match *hs {
                    HatSym::S => out.push(Color::F {
                        dot: t,
                        hat: sep_atom(),
                    }),
                    HatSym::T(h) => {
                        if tree_vars(t) + tree_vars(h) - 1 <= space.trunc as u32 {
                            out.push(Color::F { dot: t, hat: h });
                        }
                    }
                    _ => {}
                }
            }
        }
        out
    }

    fn dot_half(space: &ColorSpace, c: Color) -> usize {
        match c {
            Color::R(b) => b as usize,
            Color::B(b) => 2 + b as usize,
            Color::F { dot, .. } => space.dot_index(dot).unwrap(),
        }
    }

    fn hat_half(space: &ColorSpace, c: Color) -> usize {
        match c {
            Color::R(b) => b as usize,
            Color::B(b) => 2 + b as usize,
            Color::F { hat, .. } => space.hat_index(hat).unwrap(),
        }
    }

    /// Clause update by brute tabulation over full color tuples.
    fn dense_clause_u(space: &ColorSpace, colors: &[Color], q: &[f64], lambda: f64) -> Vec<f64> {
        let mut cache = MarginalCache::new();
        let tails: Vec<Vec<Color>> = (0..space.k - 1)
            .map(|_| colors.to_vec())
            .multi_cartesian_product()
            .collect();
        colors
            .iter()
            .map(|&c| {
                let mut acc = 0.0;
                for tail in &tails {
                    let mut tuple = Vec::with_capacity(space.k);
                    tuple.push(c);
                    tuple.extend_from_slice(tail);
                    let w = col_phi_hat_avg_pow(&mut cache, &tuple, lambda);
                    if w > 0.0 {
                        let qs: f64 = tail.iter().map(|&tc| q[dot_half(space, tc)]).product();
                        acc += w * qs;
                    }
                }
                col_phi_bar(&mut cache, c).powf(lambda) * acc
            })
            .collect()
    }

    /// Variable update by brute tabulation over full color tuples.
    fn dense_var_u(space: &ColorSpace, colors: &[Color], qh: &[f64], lambda: f64) -> Vec<f64> {
        let mut cache = MarginalCache::new();
        let tails: Vec<Vec<Color>> = (0..space.d - 1)
            .map(|_| colors.to_vec())
            .multi_cartesian_product()
            .collect();
        colors
            .iter()
            .map(|&c| {
                let mut acc = 0.0;
                for tail in &tails {
                    let mut tuple = Vec::with_capacity(space.d);
                    tuple.push(c);
                    tuple.extend_from_slice(tail);
                    let w = col_phi_dot(&mut cache, &tuple);
                    if w > 0.0 {
                        let qs: f64 = tail.iter().map(|&tc| qh[hat_half(space, tc)]).product();
                        acc += w.powf(lambda) * qs;
                    }
                }
                col_phi_bar(&mut cache, c).powf(lambda) * acc
            })
            .collect()
    }

    /// Group per-color values by a half projection: assert one-sidedness and
    /// return one representative per half symbol.
    fn half_reps(
        colors: &[Color],
        values: &[f64],
        len: usize,
        proj: impl Fn(Color) -> usize,
    ) -> Vec<f64> {
        let mut rep = vec![f64::NAN; len];
        for (i, &c) in colors.iter().enumerate() {
            let h = proj(c);
            if rep[h].is_nan() {
                rep[h] = values[i];
            } else {
                assert!(
                    close(rep[h], values[i], 1e-11),
                    "one-sidedness fails at {c:?}: {} vs {}",
                    rep[h],
                    values[i]
                );
            }
        }
        assert!(rep.iter().all(|x| x.is_finite()));
        rep
    }

    #[test]
    fn alphabet_counts_depend_only_on_cutoff() {
        for (k, d) in [(3, 3), (8, 96), (7, 35)] {
            let s0 = enumerate_color_space(k, d, 0).unwrap();
            assert_eq!((s0.dots.len(), s0.hats.len()), (4, 4));
            assert!(s0.s_index().is_none());
            let s1 = enumerate_color_space(k, d, 1).unwrap();
            assert_eq!((s1.dots.len(), s1.hats.len()), (5, 5));
            let s3 = enumerate_color_space(k, d, 3).unwrap();
            // k = 3 has one fewer of each: the clause join over two
            // one-variable kids fills all k−1 slots, leaving no atom choice
            let want = if k == 3 { (15, 12) } else { (16, 13) };
            assert_eq!((s3.dots.len(), s3.hats.len()), want);
            for s in [&s0, &s1, &s3] {
                for (i, &j) in s.dot_flip.iter().enumerate() {
                    assert_eq!(s.dot_flip[j], i);
                }
                for (i, &j) in s.hat_flip.iter().enumerate() {
                    assert_eq!(s.hat_flip[j], i);
                }
            }
        }
    }

    #[test]
    fn alphabet_matches_fixpoint_closure() {
        for (k, d, l) in [(3usize, 3usize, 3usize), (4, 5, 3)] {
            let space = enumerate_color_space(k, d, l).unwrap();
            let mut dots: HashSet<TreeId> = HashSet::new();
            let mut hats: HashSet<TreeId> = HashSet::new();
            match dot_rule(&vec![Hat::Tree(sep_atom()); d - 1]) {
                Some(Dot::Tree(t)) => dots.insert(t),
                _ => unreachable!(),
            };
            loop {
                let mut grown = false;
                let dv: Vec<TreeId> = dots.iter().copied().sorted().collect();
                for sz in 1..=k - 1 {
                    for combo in dv.iter().combinations_with_replacement(sz) {
                        let vars: u32 = combo.iter().map(|&&t| tree_vars(t)).sum();
                        if vars > (l - 1) as u32 {
                            continue;
                        }
                        let base: Vec<Dot> = combo.iter().map(|&&t| Dot::Tree(t)).collect();
                        if sz == k - 1 {
                            if let Hat::Tree(t) = hat_rule(&base) {
                                grown |= hats.insert(t);
                            }
                        } else {
                            for b in 0..2u8 {
                                let mut dd = vec![Dot::Tree(dot_atom(b)); k - 1 - sz];
                                dd.extend_from_slice(&base);
                                if let Hat::Tree(t) = hat_rule(&dd) {
                                    grown |= hats.insert(t);
                                }
                            }
                        }
                    }
                }
                let hv: Vec<TreeId> = hats.iter().copied().sorted().collect();
                for sz in 1..=d - 1 {
                    for combo in hv.iter().combinations_with_replacement(sz) {
                        let excess: u32 = combo.iter().map(|&&t| tree_vars(t) - 1).sum();
                        if excess > (l - 1) as u32 {
                            continue;
                        }
                        let mut hh = vec![Hat::Tree(sep_atom()); d - 1 - sz];
                        hh.extend(combo.iter().map(|&&t| Hat::Tree(t)));
                        if let Some(Dot::Tree(t)) = dot_rule(&hh) {
                            grown |= dots.insert(t);
                        }
                    }
                }
                if !grown {
                    break;
                }
            }
            let space_dots: HashSet<TreeId> = space
                .dots
                .iter()
                .filter_map(|s| match s {
                    DotSym::T(t) => Some(*t),
                    _ => None,
                })
                .collect();
            let space_hats: HashSet<TreeId> = space
                .hats
                .iter()
                .filter_map(|s| match s {
                    HatSym::T(t) => Some(*t),
                    _ => None,
                })
                .collect();
            assert_eq!(space_dots, dots);
            assert_eq!(space_hats, hats);
            // rebuilding each join from its stored kids lands on the same id
            for &t in &space_dots {
                let TreeNode::DotJoin(kids) = tree_node(t) else {
                    panic!()
                };
                let hh: Vec<Hat> = kids.iter().map(|&x| Hat::Tree(x)).collect();
                assert_eq!(dot_rule(&hh), Some(Dot::Tree(t)));
            }
            for &t in &space_hats {
                let TreeNode::HatJoin(kids) = tree_node(t) else {
                    panic!()
                };
                let dd: Vec<Dot> = kids.iter().map(|&x| Dot::Tree(x)).collect();
                assert_eq!(hat_rule(&dd), Hat::Tree(t));
            }
        }
    }

    #[test]
    fn enumeration_guards() {
        assert!(matches!(
            enumerate_color_space(1, 3, 2),
            Err(BpError::Parameter { .. })
        ));
        assert!(matches!(
            enumerate_color_space(3, 3, 12),
            Err(BpError::Explosion { .. })
        ));
    }

    #[test]
    fn rigid_step_matches_hand_recursion() {
        let space = enumerate_color_space(5, 7, 0).unwrap();
        let q = [0.3, 0.2, 0.35, 0.15];
        let lambda = 0.7;
        let step = bp_step(&space, &q, lambda).unwrap();
        // clause side by hand: orbit sums qr = q(R0)+q(R1), qb likewise
        let (qr, qb) = (0.5f64, 0.5f64);
        let ur = 2.0 * qb.powi(4);
        let ub = 2.0 * 4.0 * qr * qb.powi(3) + 2.0 * ((2.0 * qb).powi(4) - qb.powi(4));
        let zh = 2.0 * (ur + ub);
        for (i, want) in [ur, ur, ub, ub].iter().enumerate() {
            assert!(close(step.q_hat[i], want / zh, 1e-14));
        }
        // variable side by hand
        let (hr, hb) = (ur / zh, ub / zh);
        let vr = (hr + hb).powi(6);
        let vb = (hr + hb).powi(6) - hb.powi(6);
        let zd = 2.0 * (vr + vb);
        for (i, want) in [vr, vr, vb, vb].iter().enumerate() {
            assert!(close(step.q_dot[i], want / zd, 1e-14));
        }
        assert!(close(step.ln_norm_hat, (zh / 32.0).ln(), 1e-14));
        assert!(close(step.ln_norm_dot, zd.ln(), 1e-14));
    }

    #[test]
    fn step_matches_dense_tabulation() {
        for (k, d) in [(3usize, 3usize), (5, 4)] {
            let space = enumerate_color_space(k, d, 2).unwrap();
            assert_eq!(space.dots.len(), 7);
            assert_eq!(space.hats.len(), 7);
            let colors = full_colors(&space);
            assert_eq!(colors.len(), 9);
            let q = [0.05, 0.1, 0.2, 0.25, 0.16, 0.14, 0.1];
            let lambda = 0.6;
            let step = bp_step(&space, &q, lambda).unwrap();

            let ud = dense_clause_u(&space, &colors, &q, lambda);
            let rep = half_reps(&colors, &ud, space.hats.len(), |c| hat_half(&space, c));
            let z: f64 = rep.iter().sum();
            for (h, &r) in rep.iter().enumerate() {
                assert!(
                    close(r / z, step.q_hat[h], 1e-12),
                    "clause output differs at {:?}",
                    space.hats[h]
                );
            }
            assert!(close(z.ln(), step.ln_norm_hat, 1e-12));

            let uv = dense_var_u(&space, &colors, &step.q_hat, lambda);
            let rep = half_reps(&colors, &uv, space.dots.len(), |c| dot_half(&space, c));
            let z: f64 = rep.iter().sum();
            for (i, &r) in rep.iter().enumerate() {
                assert!(
                    close(r / z, step.q_dot[i], 1e-12),
                    "variable output differs at {:?}",
                    space.dots[i]
                );
            }
            assert!(close(z.ln(), step.ln_norm_dot, 1e-12));
        }
    }

    #[test]
    fn profile_matches_dense_functionals() {
        // small degrees with an interior fixed point, so every tuple class
        // carries weight and the dense sums are enumerable
        let space = enumerate_color_space(3, 5, 2).unwrap();
        let lambda = 0.5;
        let fp = solve_fixed_point(&space, lambda, 1e-13, 20_000, None).unwrap();
        let prof = build_optimal_profile(&space, &fp.q.w, lambda).unwrap();
        assert!(prof.compat_residual < 1e-10);
        assert!(prof.identity_var < 1e-10);
        assert!(prof.identity_clause < 1e-10);

        let colors = full_colors(&space);
        let qd = |c| fp.q.w[dot_half(&space, c)];
        let qh = |c| prof.q_hat[hat_half(&space, c)];
        let mut cache = MarginalCache::new();

        let mut dot_map: HashMap<Vec<Color>, f64> = HashMap::new();
        let mut z_var = 0.0f64;
        for tuple in (0..space.d)
            .map(|_| colors.iter().copied())
            .multi_cartesian_product()
        {
            let w = col_phi_dot(&mut cache, &tuple);
            if w > 0.0 {
                let mass = w.powf(lambda) * tuple.iter().map(|&c| qh(c)).product::<f64>();
                z_var += mass;
                dot_map.insert(tuple, mass);
            }
        }
        let mut hat_map: HashMap<Vec<Color>, f64> = HashMap::new();
        let mut z_clause = 0.0f64;
        for tuple in (0..space.k)
            .map(|_| colors.iter().copied())
            .multi_cartesian_product()
        {
            let w = col_phi_hat_avg_pow(&mut cache, &tuple, lambda);
            if w > 0.0 {
                let mass = w * tuple.iter().map(|&c| qd(c)).product::<f64>();
                z_clause += mass;
                hat_map.insert(tuple, mass);
            }
        }
        let mut bar_map: HashMap<Color, f64> = HashMap::new();
        let mut z_bar = 0.0f64;
        for &c in &colors {
            let mass = col_phi_bar(&mut cache, c).powf(-lambda) * qd(c) * qh(c);
            z_bar += mass;
            bar_map.insert(c, mass);
        }
        assert!(close(z_var.ln(), prof.ln_var_sum, 1e-10));
        assert!(close(z_clause.ln(), prof.ln_clause_sum, 1e-10));
        assert!(close(z_bar.ln(), prof.ln_edge_sum, 1e-10));

        dot_map.values_mut().for_each(|v| *v /= z_var);
        hat_map.values_mut().for_each(|v| *v /= z_clause);
        bar_map.values_mut().for_each(|v| *v /= z_bar);
        let dist = ProfileDist {
            d: space.d,
            k: space.k,
            dot: dot_map,
            hat: hat_map,
            bar: bar_map,
        };
        let fe = free_energy(&mut cache, &dist, lambda).unwrap();
        assert!(
            close(fe.sigma, prof.sigma, 1e-9),
            "{} vs {}",
            fe.sigma,
            prof.sigma
        );
        assert!(
            close(fe.s, prof.s_star, 1e-9),
            "{} vs {}",
            fe.s,
            prof.s_star
        );
        assert!(close(fe.f, prof.f_value, 1e-9));
    }

    #[test]
    fn fixed_points_at_reference_degrees() {
        for (k, d, lambda) in [(7usize, 35usize, 0.5f64), (8, 96, 0.7)] {
            let space = enumerate_color_space(k, d, 3).unwrap();
            let fp = solve_fixed_point(&space, lambda, 1e-11, 4000, None).unwrap();
            assert!(fp.residual < 1e-11);
            assert!(fp.proven_contraction);
            assert!(fp.q.flip_residual(&space.dot_flip) <= 1e-12);
            let hat = OneSidedMeasure {
                w: fp.q_hat.clone(),
            };
            assert!(hat.flip_residual(&space.hat_flip) <= 1e-12);
            for &r in fp.ratios.iter().rev().take(5) {
                assert!(r < 0.9, "late contraction ratio {r} at k={k}");
            }
            // one more sweep stays put
            let step = bp_step(&space, &fp.q.w, lambda).unwrap();
            assert!(l1(&step.q_dot, &fp.q.w) < 2e-11);
            let total: f64 = fp.q.w.iter().sum();
            assert!(close(total, 1.0, 1e-12));

            let prof = build_optimal_profile(&space, &fp.q.w, lambda).unwrap();
            assert!(
                prof.compat_residual < 1e-10,
                "compat {}",
                prof.compat_residual
            );
            assert!(prof.identity_var < 1e-10);
            assert!(prof.identity_clause < 1e-10);
            assert!(prof.gamma_c.is_some());
            assert!(prof.sigma.is_finite() && prof.s_star.is_finite());
            let bar_total: f64 = prof.bar.iter().map(|&(_, _, p)| p).sum();
            assert!(close(bar_total, 1.0, 1e-12));
        }
    }

    #[test]
    fn identities_fail_off_fixed_point() {
        let space = enumerate_color_space(7, 35, 3).unwrap();
        let prof = build_optimal_profile(&space, &default_guess(&space), 0.5).unwrap();
        assert!(prof.identity_var > 1e-6);
        assert!(prof.compat_residual > 1e-6);
    }

    #[test]
    fn nonconvergence_is_reported() {
        let space = enumerate_color_space(7, 35, 3).unwrap();
        match solve_fixed_point(&space, 0.5, 1e-16, 2, None) {
            Err(BpError::NonConvergence { iterations: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn gamma_certificate_small_cases() {
        let space = enumerate_color_space(5, 7, 0).unwrap();
        assert_eq!(gamma_certificate(&space, &[0.25; 4]), Some(1));
        // all mass forced: no C can push it below the unforced weight
        assert_eq!(gamma_certificate(&space, &[0.5, 0.5, 0.0, 0.0]), None);
    }

    #[test]
    fn lambda_star_scan_behaves() {
        let space = enumerate_color_space(7, 301, 2).unwrap();
        let ls = find_lambda_star(&space, 1e-11, 4000).unwrap();
        assert_eq!(ls.rows.len(), 65);
        assert!(ls.rows[0].sigma > -1e-9, "complexity negative at zero tilt");
        if ls.boundary {
            assert_eq!(ls.lambda_star, 1.0);
        } else {
            assert!(ls.bracket.1 - ls.bracket.0 <= 1e-9);
            assert!(ls.sigma_star >= -1e-12);
        }
        if ls.lambda_star > 0.0 {
            assert!(close(ls.c_star * 2.0 * ls.lambda_star, 1.0, 1e-12));
        }
    }

    #[test]
    fn pair_measure_tensorizes() {
        let space = enumerate_color_space(7, 35, 3).unwrap();
        let fp = solve_fixed_point(&space, 0.5, 1e-12, 4000, None).unwrap();
        let pp = pair_profile(&space, &fp.q.w, 0.5).unwrap();
        assert!(pp.copy_residual < 1e-10);
        assert!(pp.product_gap < 1e-12);
        assert!(pp.diag_mass > 0.0 && pp.diag_mass < 1.0);
    }

    #[test]
    fn pair_clause_weight_factorizes_over_copies() {
        // independent sign copies make the two-copy clause weight a product
        let space = enumerate_color_space(3, 3, 2).unwrap();
        let colors = full_colors(&space);
        let lambda = 0.7;
        let mut cache = MarginalCache::new();
        let picks = [
            [colors[0], colors[3], colors[3]],
            [colors[4], colors[5], colors[6]],
            [colors[2], colors[4], colors[8]],
        ];
        for t1 in &picks {
            for t2 in &picks {
                let single1 = col_phi_hat_avg_pow(&mut cache, t1, lambda);
                let single2 = col_phi_hat_avg_pow(&mut cache, t2, lambda);
                let mut pair = 0.0;
                for l1 in 0..1u32 << space.k {
                    for l2 in 0..1u32 << space.k {
                        let f1: Vec<Color> = t1
                            .iter()
                            .enumerate()
                            .map(|(i, &c)| c.xor((l1 >> i & 1) as u8))
                            .collect();
                        let f2: Vec<Color> = t2
                            .iter()
                            .enumerate()
                            .map(|(i, &c)| c.xor((l2 >> i & 1) as u8))
                            .collect();
                        let w1 = crate::weights::col_phi_hat_lit(&mut cache, &f1);
                        let w2 = crate::weights::col_phi_hat_lit(&mut cache, &f2);
                        pair += w1.powf(lambda) * w2.powf(lambda);
                    }
                }
                pair /= 4f64.powi(space.k as i32);
                assert!(close(pair, single1 * single2, 1e-12));
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn step_outputs_are_symmetric_measures(
            ws in proptest::collection::vec(0.02f64..1.0, 7),
            lambda in 0.0f64..1.0,
        ) {
            let space = enumerate_color_space(5, 4, 2).unwrap();
            prop_assert_eq!(space.dots.len(), ws.len());
            let z: f64 = ws.iter().sum();
            let q: Vec<f64> = ws.iter().map(|x| x / z).collect();
            let step = bp_step(&space, &q, lambda).unwrap();
            let sh: f64 = step.q_hat.iter().sum();
            let sd: f64 = step.q_dot.iter().sum();
            prop_assert!(close(sh, 1.0, 1e-12));
            prop_assert!(close(sd, 1.0, 1e-12));
            prop_assert!(step.q_hat.iter().all(|x| x.is_finite() && *x >= 0.0));
            prop_assert!(step.q_dot.iter().all(|x| x.is_finite() && *x >= 0.0));
            // clause output is flip symmetric for any input
            let hat = OneSidedMeasure { w: step.q_hat.clone() };
            prop_assert!(hat.flip_residual(&space.hat_flip) <= 1e-13);
            // and the variable side preserves the symmetry
            let dot = OneSidedMeasure { w: step.q_dot.clone() };
            prop_assert!(dot.flip_residual(&space.dot_flip) <= 1e-13);
        }
    }
}
