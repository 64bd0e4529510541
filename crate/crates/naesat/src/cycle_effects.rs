//! Pair statistics of the tilted edge measure and the cycle corrections
//! built from them.
//!
//! The one-point objects in [`crate::bp_solver`] describe a single edge of
//! an infinite tree. Short cycles perturb that picture, and the size of the
//! perturbation is governed by how fast conditioning decays along a path:
//! condition the variable-tuple measure on one coordinate and read off the
//! distribution of a second one, likewise through a clause, and multiply
//! the resulting transition matrices around the cycle. Concretely:
//!
//! * the pair space `Ω` is the set of full edge colors carrying weight
//!   under the edge measure H̄ — four rigid colors plus the tree pairs
//!   within the size cutoff;
//! * `Ḣ(τ₁,τ₂)` is the joint law of two distinct edge colors at one
//!   variable, `Ĥ^{ℓ₁ℓ₂}(τ₁,τ₂)` the same at one clause, decorated with
//!   the two literals the pinned half-edges carry (tail literals average
//!   out by the flip symmetry of the fixed point);
//! * `Ȧ = Ḣ/H̄` and `Â^{ℓ₁ℓ₂} = Ĥ^{ℓ₁ℓ₂}/H̄` are the row-stochastic
//!   conditionals, and `B = ȦÂ⁰⁰ − 1⊗H̄` deflates the top eigenvalue;
//! * for a literal word ζ of length 2l, `δ(ζ) = Tr[(ȦÂ)^ζ] − 1` is the
//!   multiplicative effect of one cycle decorated by ζ, and
//!   `μ(ζ) = ((k−1)(d−1))^l / (2l·4^l)` its expected count.
//!
//! The matrices are assembled from closed forms in log scale, so the
//! conditionals stay exact ratios even when free-tree masses underflow
//! any linear representation (large `d` drives them below `exp(−10³)`).
//! Explicit small-tree summations cross-check the whole chain against
//! first principles in [`kappa_identity_check`].

use crate::bp_solver::{
    binom, clause_side, clause_tuple_sum, for_free_tuples, var_side, var_tuple_sum, BpError,
    ColorSpace, HatSym, RIGID,
};
use crate::messages::{dot_atom, dot_rule, hat_rule, sep_atom, Color, Dot, Hat};
use crate::util::{ln_multinomial, Dd, LogSum};
use crate::weights::{col_phi_bar, col_phi_dot, col_phi_hat_avg_pow, col_phi_hat_lit, MarginalCache};
use rayon::prelude::*;
use serde::Serialize;
use std::collections::HashMap;
use std::f64::consts::LN_2;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CycleError {
    #[error(transparent)]
    Bp(#[from] BpError),
    #[error("literal word must have positive even length, got {0}")]
    WordLength(usize),
    #[error("literal word entries must be bits, got {0}")]
    WordEntry(u8),
    #[error("tree does not fit the clause/variable fan-out: {0}")]
    Shape(String),
    #[error("explicit summation needs about {0:.1e} terms, over the {1:.1e} limit")]
    TooLarge(f64, f64),
}

type Mat = Vec<Vec<f64>>;

/// Full edge colors with weight under the edge measure, their flip
/// involution, the measure itself, and the symbol-level data every
/// two-point formula draws on.
///
/// Construction resynchronizes the input weights once through both update
/// sides, so the stored `q̇` is exactly the variable image of the stored
/// `q̂` and the marginal identities below hold to rounding rather than to
/// the solver tolerance. Both vectors are symmetrized across the flip.
#[derive(Debug, Clone)]
pub struct PairSpace {
    /// (dot index, hat index) per color; the four rigid colors come first.
    pub pairs: Vec<(usize, usize)>,
    /// Global flip as an involution on pair indices.
    pub flip: Vec<usize>,
    /// The edge measure H̄, normalized.
    pub hbar: Vec<f64>,
    pub lambda: f64,
    ix: HashMap<(usize, usize), usize>,
    ln_hbar: Vec<f64>,
    ln_zbar: f64,
    qd: Vec<f64>,
    ln_qd: Vec<f64>,
    qh: Vec<f64>,
    ln_qh: Vec<f64>,
    ln_var_sum: f64,
    ln_clause_sum: f64,
    ln_norm_dot: f64,
    ln_norm_hat: f64,
}

impl PairSpace {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn index_of(&self, dot: usize, hat: usize) -> Option<usize> {
        self.ix.get(&(dot, hat)).copied()
    }

    /// (ln 𝔷̇, ln 𝔷̂, ln 𝔷̄): the variable-tuple, clause-tuple, and edge sums.
    pub fn ln_sums(&self) -> (f64, f64, f64) {
        (self.ln_var_sum, self.ln_clause_sum, self.ln_zbar)
    }

    /// (ln 𝒵̇, ln 𝒵̂): the one-step update normalizers.
    pub fn ln_norms(&self) -> (f64, f64) {
        (self.ln_norm_dot, self.ln_norm_hat)
    }

    /// The full color a pair index stands for.
    pub fn color(&self, space: &ColorSpace, p: usize) -> Color {
        let (di, hi) = self.pairs[p];
        if p < RIGID {
            match di {
                0 => Color::R(0),
                1 => Color::R(1),
                2 => Color::B(0),
                _ => Color::B(1),
            }
        } else {
            let crate::bp_solver::DotSym::T(dt) = space.dots[di] else {
                unreachable!("tree pair with a rigid dot half")
            };
            let ht = if Some(hi) == space.s_index() {
                sep_atom()
            } else {
                match space.hats[hi] {
                    HatSym::T(t) => t,
                    _ => unreachable!("tree pair with a rigid hat half"),
                }
            };
            Color::F { dot: dt, hat: ht }
        }
    }
}

fn lae(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Build the pair space at a fixed point of [`crate::bp_solver::solve_fixed_point`].
pub fn pair_space(
    space: &ColorSpace,
    q_dot: &[f64],
    lambda: f64,
) -> Result<PairSpace, CycleError> {
    if q_dot.len() != space.dots.len() {
        return Err(BpError::Length {
            got: q_dot.len(),
            want: space.dots.len(),
        }
        .into());
    }
    let mut qs: Vec<f64> = (0..q_dot.len())
        .map(|i| 0.5 * (q_dot[i] + q_dot[space.dot_flip[i]]))
        .collect();
    let total: f64 = qs.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(BpError::ZeroNormalizer.into());
    }
    qs.iter_mut().for_each(|x| *x /= total);

    // Polish to the arithmetic fixed point: the conditional clause kernel
    // only has exact unit row sums when the hat weights are the exact image
    // of the dot weights and vice versa, so a solver-tolerance input would
    // leak its residual into every row.  A few extra rounds reach the
    // rounding floor; keep the iterate with the smallest step.
    let mut best = qs.clone();
    let mut best_step = f64::INFINITY;
    for _ in 0..256 {
        let u = clause_side(space, &qs, lambda);
        let zh: f64 = u.iter().sum();
        if !(zh > 0.0) || !zh.is_finite() {
            break;
        }
        let uh: Vec<f64> = u.iter().map(|&x| x / zh).collect();
        let ln_next = var_side(space, &uh, lambda);
        let mut ls = LogSum::new();
        for &x in &ln_next {
            ls.add_ln(x);
        }
        let lz = ls.ln();
        let mut next: Vec<f64> = ln_next.iter().map(|&x| (x - lz).exp()).collect();
        for i in 0..next.len() {
            let j = space.dot_flip[i];
            if j > i {
                let avg = 0.5 * (next[i] + next[j]);
                next[i] = avg;
                next[j] = avg;
            }
        }
        let step: f64 = next.iter().zip(&qs).map(|(a, b)| (a - b).abs()).sum();
        if !step.is_finite() {
            break;
        }
        qs = next;
        if step < best_step {
            best_step = step;
            best = qs.clone();
            if step == 0.0 {
                break;
            }
        } else if step > 4.0 * best_step {
            break;
        }
    }
    let qs = best;

    // clause image, with join weights re-derived in log scale
    let u = clause_side(space, &qs, lambda);
    let zh: f64 = u.iter().sum();
    if !(zh > 0.0) || !zh.is_finite() {
        return Err(BpError::ZeroNormalizer.into());
    }
    let ln_norm_hat = zh.ln();
    let mut ln_qh = vec![f64::NEG_INFINITY; u.len()];
    for i in 0..RIGID {
        ln_qh[i] = u[i].ln() - ln_norm_hat;
    }
    if let Some(si) = space.s_index() {
        ln_qh[si] = u[si].ln() - ln_norm_hat;
    }
    let ln_qs2: Vec<f64> = qs.iter().map(|&x| (2.0 * x).ln()).collect();
    let ln_qb = (2.0 * qs[2]).ln();
    for (j, info) in space.hinfo.iter().enumerate() {
        let mut s = LN_2 + info.ln_perm + lambda * info.ln_z - space.k as f64 * LN_2
            + info.atoms as f64 * ln_qb;
        for &(di, mult) in &info.kids {
            s += mult as f64 * ln_qs2[di];
        }
        ln_qh[space.hat_tree_base() + j] = s - ln_norm_hat;
    }
    for i in 0..ln_qh.len() {
        let j = space.hat_flip[i];
        if j > i {
            let avg = 0.5 * (ln_qh[i] + ln_qh[j]);
            ln_qh[i] = avg;
            ln_qh[j] = avg;
        }
    }
    let qh: Vec<f64> = ln_qh.iter().map(|&x| x.exp()).collect();

    // variable image of the canonical clause weights
    let ln_u = var_side(space, &qh, lambda);
    let mut ls = LogSum::new();
    for &x in &ln_u {
        ls.add_ln(x);
    }
    let ln_norm_dot = ls.ln();
    if !ln_norm_dot.is_finite() {
        return Err(BpError::ZeroNormalizer.into());
    }
    let mut ln_qd: Vec<f64> = ln_u.iter().map(|&x| x - ln_norm_dot).collect();
    for i in 0..ln_qd.len() {
        let j = space.dot_flip[i];
        if j > i {
            let avg = 0.5 * (ln_qd[i] + ln_qd[j]);
            ln_qd[i] = avg;
            ln_qd[j] = avg;
        }
    }
    let qd: Vec<f64> = ln_qd.iter().map(|&x| x.exp()).collect();

    let (ln_var_sum, _) = var_tuple_sum(space, &qh, lambda);
    let qd2: Vec<f64> = (0..qd.len())
        .map(|i| qd[i] + qd[space.dot_flip[i]])
        .collect();
    let (zc, _) = clause_tuple_sum(space, &qd2, lambda);
    let ln_clause_sum = zc.ln();

    // pair list: rigid colors, then (tree, S), then tree pairs in range
    let mut pairs: Vec<(usize, usize)> = (0..RIGID).map(|i| (i, i)).collect();
    let mut ln_hbar: Vec<f64> = (0..RIGID).map(|i| ln_qd[i] + ln_qh[i]).collect();
    for di in RIGID..space.dots.len() {
        let dv = space.dot_vars(di);
        if let Some(si) = space.s_index() {
            pairs.push((di, si));
            ln_hbar.push(lambda * 0.5f64.ln() + ln_qd[di] + ln_qh[si]);
        }
        for hi in space.hat_tree_base()..space.hats.len() {
            if dv + space.hat_vars(hi) - 1 <= space.trunc as u32 {
                let m0 = space.dinfo[di - RIGID].m0;
                let h0 = space.hat_m0(hi);
                let overlap = m0 * h0 + (1.0 - m0) * (1.0 - h0);
                pairs.push((di, hi));
                ln_hbar.push(lambda * overlap.ln() + ln_qd[di] + ln_qh[hi]);
            }
        }
    }
    let mut ls = LogSum::new();
    for &x in &ln_hbar {
        ls.add_ln(x);
    }
    let ln_zbar = ls.ln();
    let hbar: Vec<f64> = ln_hbar.iter().map(|&x| (x - ln_zbar).exp()).collect();
    let ix: HashMap<(usize, usize), usize> =
        pairs.iter().enumerate().map(|(p, &dh)| (dh, p)).collect();
    let flip: Vec<usize> = pairs
        .iter()
        .map(|&(di, hi)| ix[&(space.dot_flip[di], space.hat_flip[hi])])
        .collect();

    Ok(PairSpace {
        pairs,
        flip,
        hbar,
        lambda,
        ix,
        ln_hbar,
        ln_zbar,
        qd,
        ln_qd,
        qh,
        ln_qh,
        ln_var_sum,
        ln_clause_sum,
        ln_norm_dot,
        ln_norm_hat,
    })
}

/// ln of the unnormalized variable two-point numerators: coordinates 1, 2
/// of a variable tuple pinned, the other d−2 summed. Normalizer 𝔷̇.
fn ln_two_point_var(space: &ColorSpace, ps: &PairSpace) -> Mat {
    let n = ps.len();
    let mut m = vec![vec![f64::NEG_INFINITY; n]; n];
    let dm2 = (space.d - 2) as f64;
    for b in 0..2usize {
        let a = ps.qh[b] + ps.qh[2 + b];
        if !(a > 0.0) {
            continue;
        }
        let la = a.ln();
        let (rr, bb) = (b, 2 + b);
        m[rr][rr] = 2.0 * ps.ln_qh[b] + dm2 * la;
        m[rr][bb] = ps.ln_qh[b] + ps.ln_qh[2 + b] + dm2 * la;
        m[bb][rr] = m[rr][bb];
        // both pinned edges unforced: some other edge must force the value
        let gap = (-(dm2 * (ps.ln_qh[2 + b] - la)).exp()).ln_1p();
        m[bb][bb] = 2.0 * ps.ln_qh[2 + b] + dm2 * la + gap;
    }
    for p1 in RIGID..n {
        let (d1, h1) = ps.pairs[p1];
        let info = &space.dinfo[d1 - RIGID];
        // ln φ̇ over all d hats: the d−1 kids of the dot tree plus the
        // pinned hat itself
        let (mut lp0, mut lp1) = {
            let h0 = space.hat_m0(h1);
            (h0.ln(), (1.0 - h0).ln())
        };
        for &(h, mult) in &info.kids {
            let h0 = space.hat_m0(h);
            lp0 += mult as f64 * h0.ln();
            lp1 += mult as f64 * (1.0 - h0).ln();
        }
        let ln_phidot = lae(lp0, lp1);
        for &(h2, _) in &info.kids {
            // remove one copy of h2 from the kid multiset; the remainder
            // plus the pinned hat rebuilds the second dot tree
            let mut s = ps.ln_qh[h1] + ps.ln_qh[h2] + ps.lambda * ln_phidot;
            let mut parts: Vec<usize> = Vec::with_capacity(info.kids.len());
            let mut hats: Vec<Hat> = Vec::with_capacity(space.d - 1);
            for &(h, mult) in &info.kids {
                let c = if h == h2 { mult - 1 } else { mult };
                s += c as f64 * ps.ln_qh[h];
                if c > 0 {
                    parts.push(c as usize);
                }
                let t = if Some(h) == space.s_index() {
                    sep_atom()
                } else {
                    match space.hats[h] {
                        HatSym::T(t) => t,
                        _ => unreachable!(),
                    }
                };
                for _ in 0..c {
                    hats.push(Hat::Tree(t));
                }
            }
            s += ln_multinomial(space.d - 2, &parts);
            let t1 = if Some(h1) == space.s_index() {
                sep_atom()
            } else {
                match space.hats[h1] {
                    HatSym::T(t) => t,
                    _ => unreachable!(),
                }
            };
            hats.push(Hat::Tree(t1));
            let Some(Dot::Tree(t2)) = dot_rule(&hats) else {
                unreachable!("tree kids never contradict")
            };
            let d2 = space.dot_index(t2).expect("join stays within the cutoff");
            let p2 = ps.ix[&(d2, h2)];
            m[p1][p2] = s;
        }
    }
    m
}

/// ln of the unnormalized clause two-point numerators in the evaluated
/// frame: coordinates 1, 2 pinned, the other k−2 summed together with
/// their literals. Normalizer 𝔷̂.
fn ln_two_point_clause(space: &ColorSpace, ps: &PairSpace) -> Mat {
    let n = ps.len();
    let k = space.k;
    let km2 = k as i32 - 2;
    let lam = ps.lambda;
    let mut m = vec![vec![f64::NEG_INFINITY; n]; n];
    let qbv = [ps.qd[2], ps.qd[3]];
    let bsum = qbv[0] + qbv[1];
    let qf: f64 = ps.qd[RIGID..].iter().sum();
    // piece tails: ordered m-tuples of dot trees under the joint size cap
    let max_m = (k - 2).min(space.trunc);
    let mut gm = [vec![0.0f64; max_m + 1], vec![0.0f64; max_m + 1]];
    for mm in 2..=max_m {
        let (mut g0, mut g1) = (0.0f64, 0.0f64);
        for_free_tuples(space, &ps.qd, mm, space.trunc as u32, &mut |pq, p0, p1| {
            g0 += pq * (1.0 - p0).powf(lam);
            g1 += pq * (1.0 - p1).powf(lam);
        });
        gm[0][mm] = g0;
        gm[1][mm] = g1;
    }
    let sep_missing = |y: usize| {
        // tails inside the separating class that never show value 1−y
        ((bsum + qf).powi(km2) - (qbv[y] + qf).powi(km2)).max(0.0)
    };
    for y in 0..2usize {
        let (ry, by, bo) = (y, 2 + y, 2 + (1 - y));
        // a forced edge pins everything else to the opposite value
        m[ry][bo] = ps.ln_qd[y] + (k - 1) as f64 * ps.ln_qd[bo];
        m[bo][ry] = m[ry][bo];
        let mut cell = f64::NEG_INFINITY;
        if k >= 3 {
            cell = ((k - 2) as f64).ln() + ps.ln_qd[1 - y] + (k - 1) as f64 * ps.ln_qd[by];
        }
        cell = lae(cell, 2.0 * ps.ln_qd[by] + sep_missing(y).ln());
        let mut piece = 0.0f64;
        for mm in 2..=max_m {
            piece += binom(k - 2, mm) * qbv[y].powi(km2 - mm as i32) * gm[y][mm];
        }
        cell = lae(cell, 2.0 * ps.ln_qd[by] + piece.ln());
        m[by][by] = cell;
        m[by][bo] = ps.ln_qd[2] + ps.ln_qd[3] + km2 as f64 * (bsum + qf).ln();
    }
    // separator pairs live in the separating class only
    let miss_both = ((bsum + qf).powi(km2) - (qbv[0] + qf).powi(km2) - (qbv[1] + qf).powi(km2)
        + qf.powi(km2))
    .max(0.0);
    for p1 in RIGID..n {
        let (d1, h1) = ps.pairs[p1];
        if Some(h1) == space.s_index() {
            for y in 0..2usize {
                let c = ps.ln_qd[2 + y] + ps.ln_qd[d1] + sep_missing(y).ln();
                m[2 + y][p1] = c;
                m[p1][2 + y] = c;
            }
            for p2 in RIGID..n {
                let (d2, h2) = ps.pairs[p2];
                if Some(h2) == space.s_index() {
                    m[p1][p2] = ps.ln_qd[d1] + ps.ln_qd[d2] + miss_both.ln();
                }
            }
            continue;
        }
        // join hat: the clause is one piece, every other coordinate known
        let info = &space.hinfo[h1 - space.hat_tree_base()];
        let atoms = info.atoms as usize;
        let b = info.atom_val as usize;
        let marg = |di: usize, v: usize| {
            let m0 = space.dinfo[di - RIGID].m0;
            if v == 0 {
                m0
            } else {
                1.0 - m0
            }
        };
        if atoms >= 1 {
            // against the frozen color the atoms carry
            let mut s = ps.ln_qd[2 + b] + ps.ln_qd[d1] + (atoms - 1) as f64 * ps.ln_qd[2 + b];
            let mut parts: Vec<usize> = Vec::new();
            if atoms > 1 {
                parts.push(atoms - 1);
            }
            let mut pm = marg(d1, b);
            for &(dj, mult) in &info.kids {
                s += mult as f64 * ps.ln_qd[dj];
                parts.push(mult as usize);
                pm *= marg(dj, b).powi(mult as i32);
            }
            s += ln_multinomial(k - 2, &parts) + lam * (1.0 - pm).ln();
            m[2 + b][p1] = s;
            m[p1][2 + b] = s;
        }
        for &(dj, _) in &info.kids {
            // hand the pinned tree over to the kid's side of the pair
            let mut s = ps.ln_qd[d1] + ps.ln_qd[dj] + atoms as f64 * ps.ln_qd[2 + b];
            let mut parts: Vec<usize> = Vec::new();
            if atoms > 0 {
                parts.push(atoms);
            }
            let mut dots: Vec<Dot> = Vec::with_capacity(k - 1);
            for _ in 0..atoms {
                dots.push(Dot::Tree(dot_atom(b as u8)));
            }
            let (mut pm0, mut pm1) = (marg(d1, 0) * marg(dj, 0), marg(d1, 1) * marg(dj, 1));
            for &(dk, mult) in &info.kids {
                let c = if dk == dj { mult - 1 } else { mult };
                s += c as f64 * ps.ln_qd[dk];
                if c > 0 {
                    parts.push(c as usize);
                }
                pm0 *= marg(dk, 0).powi(c as i32);
                pm1 *= marg(dk, 1).powi(c as i32);
                let crate::bp_solver::DotSym::T(t) = space.dots[dk] else {
                    unreachable!()
                };
                for _ in 0..c {
                    dots.push(Dot::Tree(t));
                }
            }
            let crate::bp_solver::DotSym::T(t1) = space.dots[d1] else {
                unreachable!()
            };
            dots.push(Dot::Tree(t1));
            let phat = if atoms > 0 {
                1.0 - if b == 0 { pm0 } else { pm1 }
            } else {
                1.0 - pm0 - pm1
            };
            s += ln_multinomial(k - 2, &parts) + lam * phat.max(0.0).ln();
            let Hat::Tree(t2) = hat_rule(&dots) else {
                unreachable!("a join kid keeps the clause free")
            };
            let h2 = space.hat_index(t2).expect("join stays within the cutoff");
            let p2 = ps.ix[&(dj, h2)];
            m[p1][p2] = s;
        }
    }
    m
}

/// Two-point marginals: the variable pair law and the four literal-decorated
/// clause pair laws, all normalized against the pair space.
#[derive(Debug, Clone)]
pub struct TwoPoint {
    /// Ḣ(τ₁,τ₂): both edges at one variable.
    pub var: Mat,
    /// Ĥ^{ℓ₁ℓ₂}(τ₁,τ₂) indexed by 2ℓ₁+ℓ₂: both edges at one clause.
    pub clause: [Mat; 4],
}

pub fn two_point_marginals(space: &ColorSpace, ps: &PairSpace) -> TwoPoint {
    let lv = ln_two_point_var(space, ps);
    let lc = ln_two_point_clause(space, ps);
    let n = ps.len();
    let var: Mat = lv
        .iter()
        .map(|row| row.iter().map(|&x| (x - ps.ln_var_sum).exp()).collect())
        .collect();
    let clause = std::array::from_fn(|pat| {
        let (l1, l2) = (pat >> 1, pat & 1);
        (0..n)
            .map(|i| {
                let fi = if l1 == 1 { ps.flip[i] } else { i };
                (0..n)
                    .map(|j| {
                        let fj = if l2 == 1 { ps.flip[j] } else { j };
                        (lc[fi][fj] - ps.ln_clause_sum).exp()
                    })
                    .collect()
            })
            .collect()
    });
    TwoPoint { var, clause }
}

/// Row-stochastic conditionals of the two-point laws, and the deflation
/// `B = ȦÂ⁰⁰ − 1⊗H̄`.
#[derive(Debug, Clone)]
pub struct Transfer {
    /// Ȧ(τ₁,τ₂) = Ḣ(τ₁,τ₂)/H̄(τ₁).
    pub a_dot: Mat,
    /// Â^{ℓ₁ℓ₂}(τ₁,τ₂) = Ĥ^{ℓ₁ℓ₂}(τ₁,τ₂)/H̄(τ₁), indexed by 2ℓ₁+ℓ₂.
    pub a_hat: [Mat; 4],
    /// ȦÂ⁰⁰ with the stationary row H̄ subtracted from every row.
    pub b: Mat,
    pub hbar: Vec<f64>,
}

pub fn transfer_matrices(space: &ColorSpace, ps: &PairSpace) -> Transfer {
    let lv = ln_two_point_var(space, ps);
    let lc = ln_two_point_clause(space, ps);
    let n = ps.len();
    let cond = |num: f64, i: usize, extra: f64| {
        if ps.ln_hbar[i] == f64::NEG_INFINITY {
            0.0
        } else {
            (num + extra - ps.ln_hbar[i] + ps.ln_zbar).exp()
        }
    };
    let a_dot: Mat = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| cond(lv[i][j], i, -ps.ln_var_sum))
                .collect()
        })
        .collect();
    let a_hat = std::array::from_fn(|pat| {
        let (l1, l2) = (pat >> 1, pat & 1);
        (0..n)
            .map(|i| {
                let fi = if l1 == 1 { ps.flip[i] } else { i };
                (0..n)
                    .map(|j| {
                        let fj = if l2 == 1 { ps.flip[j] } else { j };
                        cond(lc[fi][fj], i, -ps.ln_clause_sum)
                    })
                    .collect()
            })
            .collect()
    });
    let m = matmul(&a_dot, &a_hat[0]);
    let b: Mat = m
        .iter()
        .map(|row| {
            row.iter()
                .zip(&ps.hbar)
                .map(|(&x, &h)| x - h)
                .collect()
        })
        .collect();
    Transfer {
        a_dot,
        a_hat,
        b,
        hbar: ps.hbar.clone(),
    }
}

pub(crate) fn matmul(a: &Mat, b: &Mat) -> Mat {
    let n = a.len();
    let mut out = vec![vec![0.0f64; n]; n];
    for i in 0..n {
        for (l, &ail) in a[i].iter().enumerate() {
            if ail == 0.0 {
                continue;
            }
            let row = &b[l];
            let orow = &mut out[i];
            for j in 0..n {
                orow[j] += ail * row[j];
            }
        }
    }
    out
}

pub(crate) fn trace(m: &Mat) -> f64 {
    m.iter().enumerate().map(|(i, row)| row[i]).sum()
}

fn matmul_dd(a: &[Vec<Dd>], b: &[Vec<Dd>]) -> Vec<Vec<Dd>> {
    let n = a.len();
    let mut out = vec![vec![Dd::from_f64(0.0); n]; n];
    for i in 0..n {
        for l in 0..n {
            let ail = a[i][l];
            for j in 0..n {
                out[i][j] = out[i][j].add(ail.mul(b[l][j]));
            }
        }
    }
    out
}

fn to_dd(m: &Mat) -> Vec<Vec<Dd>> {
    m.iter()
        .map(|row| row.iter().map(|&x| Dd::from_f64(x)).collect())
        .collect()
}

fn check_word(zeta: &[u8]) -> Result<usize, CycleError> {
    if zeta.is_empty() || zeta.len() % 2 != 0 {
        return Err(CycleError::WordLength(zeta.len()));
    }
    if let Some(&bad) = zeta.iter().find(|&&b| b > 1) {
        return Err(CycleError::WordEntry(bad));
    }
    Ok(zeta.len() / 2)
}

/// The factor pattern of a word: position i of the cycle pairs the literal
/// entering its clause with the literal leaving it, the first clause
/// wrapping around to the last letter.
fn word_patterns(zeta: &[u8], l: usize) -> Vec<usize> {
    (0..l)
        .map(|i| {
            let first = if i == 0 { zeta[2 * l - 1] } else { zeta[2 * i - 1] };
            2 * first as usize + zeta[2 * i] as usize
        })
        .collect()
}

/// δ(ζ) = Tr[Π_i ȦÂ^{(ζ₂ᵢ,ζ₂ᵢ₊₁)}] − 1 with ζ₀ read as ζ₂ₗ.
pub fn delta(tr: &Transfer, zeta: &[u8]) -> Result<f64, CycleError> {
    let l = check_word(zeta)?;
    let mut m: Option<Mat> = None;
    for pat in word_patterns(zeta, l) {
        let step = matmul(&tr.a_dot, &tr.a_hat[pat]);
        m = Some(match m {
            None => step,
            Some(acc) => matmul(&acc, &step),
        });
    }
    Ok(trace(&m.unwrap()) - 1.0)
}

/// δ(ζ) with double-double accumulation throughout the product and trace.
pub fn delta_dd(tr: &Transfer, zeta: &[u8]) -> Result<f64, CycleError> {
    let l = check_word(zeta)?;
    let mut m: Option<Vec<Vec<Dd>>> = None;
    for pat in word_patterns(zeta, l) {
        let step = matmul_dd(&to_dd(&tr.a_dot), &to_dd(&tr.a_hat[pat]));
        m = Some(match m {
            None => step,
            Some(acc) => matmul_dd(&acc, &step),
        });
    }
    let m = m.unwrap();
    let mut t = Dd::from_f64(-1.0);
    for (i, row) in m.iter().enumerate() {
        t = t.add(row[i]);
    }
    Ok(t.to_f64())
}

/// Gaps |Tr[(ȦÂ⁰⁰)^l] − 1 − Tr[B^l]| for l = 1..l_max (capped at 6): the
/// deflation replaces the top eigenvalue 1 by 0 and leaves the rest.
pub fn b_matrix_identity(tr: &Transfer, l_max: usize) -> Vec<(usize, f64)> {
    let l_max = l_max.min(6);
    let m = matmul(&tr.a_dot, &tr.a_hat[0]);
    let mut mp = m.clone();
    let mut bp = tr.b.clone();
    let mut out = Vec::with_capacity(l_max);
    for l in 1..=l_max {
        if l > 1 {
            mp = matmul(&mp, &m);
            bp = matmul(&bp, &tr.b);
        }
        out.push((l, (trace(&mp) - 1.0 - trace(&bp)).abs()));
    }
    out
}

/// μ(ζ): the expected number of cycles of length 2l carrying a fixed
/// literal word, (1/2l)·((k−1)(d−1)/4)^l.
pub fn mu(k: usize, d: usize, zeta_len: usize) -> f64 {
    let l = (zeta_len / 2) as i32;
    (((k - 1) * (d - 1)) as f64 / 4.0).powi(l) / (2 * l) as f64
}

/// One literal word with its weight and cycle effect.
#[derive(Debug, Clone, Serialize)]
pub struct DeltaRow {
    pub zeta: Vec<u8>,
    pub l: usize,
    pub mu: f64,
    pub delta: f64,
    /// μ(ζ)·δ(ζ)², the variance contribution of the word.
    pub weighted: f64,
}

/// δ over every word of half-length up to l_max, in lexicographic order.
pub fn delta_table(
    tr: &Transfer,
    k: usize,
    d: usize,
    l_max: usize,
) -> Result<Vec<DeltaRow>, CycleError> {
    let mut out = Vec::new();
    for l in 1..=l_max {
        let rows: Vec<DeltaRow> = (0u64..1 << (2 * l))
            .into_par_iter()
            .map(|mask| {
                let zeta: Vec<u8> = (0..2 * l)
                    .map(|j| ((mask >> (2 * l - 1 - j)) & 1) as u8)
                    .collect();
                let delta = delta(tr, &zeta)?;
                let mu = mu(k, d, 2 * l);
                Ok(DeltaRow {
                    zeta,
                    l,
                    mu,
                    delta,
                    weighted: mu * delta * delta,
                })
            })
            .collect::<Result<_, CycleError>>()?;
        out.extend(rows);
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct SummabilityRow {
    pub l: usize,
    /// Σ μδ² over the 4^l words of this length.
    pub sum: f64,
    /// Running total over lengths up to l.
    pub partial: f64,
    /// sum^{1/l}: geometric decay certificate when below 1.
    pub root: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summability {
    pub rows: Vec<SummabilityRow>,
}

/// Per-length variance weights Σ_{|ζ|=2l} μ(ζ)δ(ζ)² and their growth rate.
pub fn delta_summability(
    tr: &Transfer,
    k: usize,
    d: usize,
    l_max: usize,
) -> Result<Summability, CycleError> {
    let table = delta_table(tr, k, d, l_max)?;
    let mut rows = Vec::with_capacity(l_max);
    let mut partial = 0.0;
    for l in 1..=l_max {
        let sum: f64 = table
            .iter()
            .filter(|r| r.l == l)
            .map(|r| r.weighted)
            .sum();
        partial += sum;
        rows.push(SummabilityRow {
            l,
            sum,
            partial,
            root: sum.powf(1.0 / l as f64),
        });
    }
    Ok(Summability { rows })
}

/// δ(ζ) across size cutoffs, each with its own alphabet and fixed point.
pub fn delta_convergence(
    k: usize,
    d: usize,
    lambda: f64,
    zeta: &[u8],
    cutoffs: &[usize],
    tol: f64,
    max_iter: usize,
) -> Result<Vec<(usize, f64)>, CycleError> {
    check_word(zeta)?;
    let mut out = Vec::with_capacity(cutoffs.len());
    for &trunc in cutoffs {
        let space = crate::bp_solver::enumerate_color_space(k, d, trunc)?;
        let fp = crate::bp_solver::solve_fixed_point(&space, lambda, tol, max_iter, None)?;
        let ps = pair_space(&space, &fp.q.w, lambda)?;
        let tr = transfer_matrices(&space, &ps);
        out.push((trunc, delta(&tr, zeta)?));
    }
    Ok(out)
}

/// Shape of a subtree hanging off one half-edge: a variable with its d−1
/// other slots, a clause with its k−1 other slots, or a cut (the dangling
/// half-edge keeps the stationary one-sided weight).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TreeSpec {
    Cut,
    Var(Vec<TreeSpec>),
    Clause(Vec<TreeSpec>),
}

impl TreeSpec {
    /// (variables, clauses) inside the subtree.
    pub fn sizes(&self) -> (u32, u32) {
        match self {
            TreeSpec::Cut => (0, 0),
            TreeSpec::Var(kids) => kids.iter().fold((1, 0), |(v, a), k| {
                let (kv, ka) = k.sizes();
                (v + kv, a + ka)
            }),
            TreeSpec::Clause(kids) => kids.iter().fold((0, 1), |(v, a), k| {
                let (kv, ka) = k.sizes();
                (v + kv, a + ka)
            }),
        }
    }

    /// Enumerated tuples of the explicit summation; also validates fan-outs
    /// and alternation. `var_side` is true where a variable may stand.
    fn cost(&self, k: usize, d: usize, p: f64, var_side: bool) -> Result<f64, CycleError> {
        match self {
            TreeSpec::Cut => Ok(0.0),
            TreeSpec::Var(kids) => {
                if !var_side {
                    return Err(CycleError::Shape("variable in a clause slot".into()));
                }
                if kids.len() != d - 1 {
                    return Err(CycleError::Shape(format!(
                        "variable with {} children, expected {}",
                        kids.len(),
                        d - 1
                    )));
                }
                let mut c = p.powi((d - 1) as i32) * p;
                for kid in kids {
                    if matches!(kid, TreeSpec::Var(_)) {
                        return Err(CycleError::Shape("variable below a variable".into()));
                    }
                    c += kid.cost(k, d, p, false)?;
                }
                Ok(c)
            }
            TreeSpec::Clause(kids) => {
                if var_side {
                    return Err(CycleError::Shape("clause in a variable slot".into()));
                }
                if kids.len() != k - 1 {
                    return Err(CycleError::Shape(format!(
                        "clause with {} children, expected {}",
                        kids.len(),
                        k - 1
                    )));
                }
                let mut c = p.powi((k - 1) as i32) * p;
                for kid in kids {
                    if matches!(kid, TreeSpec::Clause(_)) {
                        return Err(CycleError::Shape("clause below a clause".into()));
                    }
                    c += kid.cost(k, d, p, true)?;
                }
                Ok(c)
            }
        }
    }
}

const EXPLICIT_LIMIT: f64 = 4e7;

/// Explicit summation engine over full colors of small trees and cycles.
struct Explicit<'a> {
    space: &'a ColorSpace,
    ps: &'a PairSpace,
    cache: MarginalCache,
    colors: Vec<Color>,
    phi_bar_pow: Vec<f64>,
}

impl<'a> Explicit<'a> {
    fn new(space: &'a ColorSpace, ps: &'a PairSpace) -> Explicit<'a> {
        let mut cache = MarginalCache::new();
        let colors: Vec<Color> = (0..ps.len()).map(|p| ps.color(space, p)).collect();
        let phi_bar_pow = colors
            .iter()
            .map(|&c| col_phi_bar(&mut cache, c).powf(ps.lambda))
            .collect();
        Explicit {
            space,
            ps,
            cache,
            colors,
            phi_bar_pow,
        }
    }

    /// ϰ^∧ of a variable-rooted subtree: per root color, the weight of the
    /// subtree with cut half-edges integrated against the stationary
    /// one-sided weights. Cut at the root is the bare half-edge.
    fn kappa_tree(&mut self, node: &TreeSpec) -> Vec<f64> {
        let n = self.ps.len();
        match node {
            TreeSpec::Cut => (0..n).map(|p| self.ps.qd[self.ps.pairs[p].0]).collect(),
            TreeSpec::Var(kids) => {
                let tables: Vec<Vec<f64>> = kids.iter().map(|kid| self.leaf_hat(kid)).collect();
                let mut out = vec![0.0f64; n];
                let mut tuple = vec![self.colors[0]; self.space.d];
                for (root, o) in out.iter_mut().enumerate() {
                    tuple[0] = self.colors[root];
                    *o = self.sum_var(&tables, &mut tuple, 1, 1.0) * self.phi_bar_pow[root];
                }
                out
            }
            TreeSpec::Clause(kids) => {
                let tables: Vec<Vec<f64>> = kids.iter().map(|kid| self.leaf_dot(kid)).collect();
                let mut out = vec![0.0f64; n];
                let mut tuple = vec![self.colors[0]; self.space.k];
                for (root, o) in out.iter_mut().enumerate() {
                    tuple[0] = self.colors[root];
                    *o = self.sum_clause(&tables, &mut tuple, 1, 1.0) * self.phi_bar_pow[root];
                }
                out
            }
        }
    }

    /// Weight table of a child slot below a variable: q̂ for a cut, the
    /// recursive subtree value for a clause.
    fn leaf_hat(&mut self, kid: &TreeSpec) -> Vec<f64> {
        match kid {
            TreeSpec::Cut => (0..self.ps.len())
                .map(|p| self.ps.qh[self.ps.pairs[p].1])
                .collect(),
            _ => self.kappa_tree(kid),
        }
    }

    /// Weight table below a clause: q̇ for a cut, recursion for a variable.
    fn leaf_dot(&mut self, kid: &TreeSpec) -> Vec<f64> {
        match kid {
            TreeSpec::Cut => (0..self.ps.len())
                .map(|p| self.ps.qd[self.ps.pairs[p].0])
                .collect(),
            _ => self.kappa_tree(kid),
        }
    }

    fn sum_var(&mut self, tables: &[Vec<f64>], tuple: &mut Vec<Color>, at: usize, w: f64) -> f64 {
        if at == tuple.len() {
            let phi = col_phi_dot(&mut self.cache, tuple);
            return if phi > 0.0 {
                w * phi.powf(self.ps.lambda)
            } else {
                0.0
            };
        }
        let mut acc = 0.0;
        for p in 0..self.ps.len() {
            let wp = tables[at - 1][p];
            if wp == 0.0 {
                continue;
            }
            tuple[at] = self.colors[p];
            acc += self.sum_var(tables, tuple, at + 1, w * wp);
        }
        acc
    }

    fn sum_clause(&mut self, tables: &[Vec<f64>], tuple: &mut Vec<Color>, at: usize, w: f64) -> f64 {
        if at == tuple.len() {
            return w * col_phi_hat_avg_pow(&mut self.cache, tuple, self.ps.lambda);
        }
        let mut acc = 0.0;
        for p in 0..self.ps.len() {
            let wp = tables[at - 1][p];
            if wp == 0.0 {
                continue;
            }
            tuple[at] = self.colors[p];
            acc += self.sum_clause(tables, tuple, at + 1, w * wp);
        }
        acc
    }

    /// Variable hop with d−2 cut half-edges: entry (σ,σ') sums the dangling
    /// weights against Φ̇^λ, with the outgoing edge factor φ̄(σ')^λ.
    fn var_hop(&mut self) -> Mat {
        let n = self.ps.len();
        let d = self.space.d;
        let mut out = vec![vec![0.0f64; n]; n];
        let mut tuple = vec![self.colors[0]; d];
        let qh_leaf: Vec<f64> = (0..n).map(|p| self.ps.qh[self.ps.pairs[p].1]).collect();
        let tables: Vec<Vec<f64>> = vec![qh_leaf; d - 2];
        for s in 0..n {
            tuple[0] = self.colors[s];
            for t in 0..n {
                tuple[1] = self.colors[t];
                let mut acc = 0.0;
                acc += self.sum_var_from(&tables, &mut tuple, 2, 1.0);
                out[s][t] = acc * self.phi_bar_pow[t];
            }
        }
        out
    }

    fn sum_var_from(
        &mut self,
        tables: &[Vec<f64>],
        tuple: &mut Vec<Color>,
        at: usize,
        w: f64,
    ) -> f64 {
        if at == tuple.len() {
            let phi = col_phi_dot(&mut self.cache, tuple);
            return if phi > 0.0 {
                w * phi.powf(self.ps.lambda)
            } else {
                0.0
            };
        }
        let mut acc = 0.0;
        for p in 0..self.ps.len() {
            let wp = tables[at - 2][p];
            if wp == 0.0 {
                continue;
            }
            tuple[at] = self.colors[p];
            acc += self.sum_var_from(tables, tuple, at + 1, w * wp);
        }
        acc
    }

    /// Clause hop with the two cycle literals fixed and the k−2 dangling
    /// literals averaged; `None` literals average all k slots instead.
    fn clause_hop(&mut self, lits: Option<(u8, u8)>) -> Mat {
        let n = self.ps.len();
        let k = self.space.k;
        let mut out = vec![vec![0.0f64; n]; n];
        let qd_leaf: Vec<f64> = (0..n).map(|p| self.ps.qd[self.ps.pairs[p].0]).collect();
        let mut tuple = vec![self.colors[0]; k];
        for s in 0..n {
            for t in 0..n {
                let mut acc = 0.0;
                match lits {
                    Some((za, zb)) => {
                        tuple[0] = self.colors[s].xor(za);
                        tuple[1] = self.colors[t].xor(zb);
                        acc = self.sum_clause_lits(&qd_leaf, &mut tuple, 2, 1.0);
                    }
                    None => {
                        tuple[0] = self.colors[s];
                        tuple[1] = self.colors[t];
                        acc += self.sum_clause_avg(&qd_leaf, &mut tuple, 2, 1.0);
                    }
                }
                out[s][t] = acc * self.phi_bar_pow[t];
            }
        }
        out
    }

    fn sum_clause_lits(
        &mut self,
        leaf: &[f64],
        tuple: &mut Vec<Color>,
        at: usize,
        w: f64,
    ) -> f64 {
        if at == tuple.len() {
            return w * self.avg_tail_lits(tuple);
        }
        let mut acc = 0.0;
        for p in 0..self.ps.len() {
            let wp = leaf[p];
            if wp == 0.0 {
                continue;
            }
            tuple[at] = self.colors[p];
            acc += self.sum_clause_lits(leaf, tuple, at + 1, w * wp);
        }
        acc
    }

    /// The first two coordinates carry fixed literals; average the rest.
    fn avg_tail_lits(&mut self, tuple: &mut Vec<Color>) -> f64 {
        let m = tuple.len() - 2;
        let base: Vec<Color> = tuple[2..].to_vec();
        let mut acc = 0.0;
        for mask in 0u32..1 << m {
            for (i, c) in base.iter().enumerate() {
                tuple[2 + i] = c.xor(((mask >> i) & 1) as u8);
            }
            let phi = col_phi_hat_lit(&mut self.cache, tuple);
            if phi > 0.0 {
                acc += phi.powf(self.ps.lambda);
            }
        }
        for (i, c) in base.iter().enumerate() {
            tuple[2 + i] = *c;
        }
        acc / (1u64 << m) as f64
    }

    fn sum_clause_avg(&mut self, leaf: &[f64], tuple: &mut Vec<Color>, at: usize, w: f64) -> f64 {
        if at == tuple.len() {
            return w * col_phi_hat_avg_pow(&mut self.cache, tuple, self.ps.lambda);
        }
        let mut acc = 0.0;
        for p in 0..self.ps.len() {
            let wp = leaf[p];
            if wp == 0.0 {
                continue;
            }
            tuple[at] = self.colors[p];
            acc += self.sum_clause_avg(leaf, tuple, at + 1, w * wp);
        }
        acc
    }
}

/// Explicit-summation cross-checks of the cycle machinery on one small
/// tree and one literal word.
#[derive(Debug, Clone, Serialize)]
pub struct KappaReport {
    /// (variables, clauses) of the subtree checked.
    pub tree_vars: u32,
    pub tree_clauses: u32,
    /// max relative gap of ϰ^∧ against q̇·𝒵̇^v·𝒵̂^a over root colors.
    pub kappa0_gap: f64,
    /// relative gap of the k-fold star against 𝔷̂·𝒵̇^{kv}·𝒵̂^{ka}.
    pub star_gap: f64,
    /// relative gap of the explicit cycle sum against 𝒵̇^t𝒵̂^t·Tr[Π ȦÂ^{ζ}].
    pub cycle_gap: f64,
    /// relative gap of the explicit opened-cycle path against 𝔷̂·𝒵̇^t𝒵̂^t.
    pub link_gap: f64,
    /// gap of ln κ^∧ − ln κ́^∧ assembled from the measured components.
    pub conclusion_gap: f64,
    /// Tr[Π_{i=1..t} ȦÂ^{(ζ₂ᵢ₋₁,ζ₂ᵢ)}] from the transfer matrices.
    pub trace: f64,
}

/// Check the small-tree and cycle identities by explicit summation.
///
/// The subtree identity states ϰ^∧ = q̇·𝒵̇^v𝒵̂^a for any variable-rooted
/// subtree; the star identity multiplies k copies of it through one
/// clause; the cycle identity reduces a decorated cycle with t variables
/// and t clauses (cut immediately at its boundary) to the trace of the
/// transfer product, pairing each clause with its incoming and outgoing
/// literal; the link identity opens the cycle into a path. The closing
/// comparison instantiates the smallest coupling, bare subtrees on both
/// sides, and checks the two assembled clause weights agree.
pub fn kappa_identity_check(
    space: &ColorSpace,
    ps: &PairSpace,
    tr: &Transfer,
    tree: &TreeSpec,
    zeta: &[u8],
) -> Result<KappaReport, CycleError> {
    let t = check_word(zeta)?;
    let p = ps.len() as f64;
    if matches!(tree, TreeSpec::Clause(_)) {
        return Err(CycleError::Shape("subtree must be variable-rooted".into()));
    }
    let cost = tree.cost(space.k, space.d, p, true)?
        + p.powi(space.k as i32)
        + p.powi(space.d as i32)
        + p * p * p.powi(space.k as i32 - 2) * 2f64.powi(space.k as i32 - 2);
    if cost > EXPLICIT_LIMIT {
        return Err(CycleError::TooLarge(cost, EXPLICIT_LIMIT));
    }
    let (v0, a0) = tree.sizes();
    let (ln_zd, ln_zh) = ps.ln_norms();
    let (_, ln_zhat_sum, _) = ps.ln_sums();
    let mut ex = Explicit::new(space, ps);

    // subtree identity
    let kap = ex.kappa_tree(tree);
    let scale = (v0 as f64 * ln_zd + a0 as f64 * ln_zh).exp();
    let mut kappa0_gap = 0.0f64;
    for pidx in 0..ps.len() {
        let want = ps.qd[ps.pairs[pidx].0] * scale;
        let gap = (kap[pidx] - want).abs() / want.max(f64::MIN_POSITIVE);
        kappa0_gap = kappa0_gap.max(gap);
    }

    // star identity: k copies of the subtree through one clause
    let tables: Vec<Vec<f64>> = (0..space.k).map(|_| kap.clone()).collect();
    let mut tuple = vec![ex.colors[0]; space.k];
    let mut star = 0.0;
    for pidx in 0..ps.len() {
        tuple[0] = ex.colors[pidx];
        star += tables[0][pidx] * ex.sum_clause(&tables[1..], &mut tuple, 1, 1.0);
    }
    let star_want =
        (ln_zhat_sum + space.k as f64 * (v0 as f64 * ln_zd + a0 as f64 * ln_zh)).exp();
    let star_gap = (star - star_want).abs() / star_want;

    // cycle identity on the bare cycle with t variables and t clauses
    let vhop = ex.var_hop();
    let mut chain: Option<Mat> = None;
    let mut formula: Option<Mat> = None;
    for i in 0..t {
        let (za, zb) = (zeta[2 * i], zeta[2 * i + 1]);
        let chop = ex.clause_hop(Some((za, zb)));
        let step = matmul(&vhop, &chop);
        chain = Some(match chain {
            None => step,
            Some(acc) => matmul(&acc, &step),
        });
        let fstep = matmul(&tr.a_dot, &tr.a_hat[2 * za as usize + zb as usize]);
        formula = Some(match formula {
            None => fstep,
            Some(acc) => matmul(&acc, &fstep),
        });
    }
    let kappa_cyc = trace(&chain.unwrap());
    let trace_formula = trace(&formula.unwrap());
    let cyc_want = ((t as f64) * (ln_zd + ln_zh)).exp() * trace_formula;
    let cycle_gap = (kappa_cyc - cyc_want).abs() / cyc_want.abs().max(f64::MIN_POSITIVE);

    // link identity: the cycle opened into a path with t variables and
    // t−1 clauses, hung between one slot each of two further clauses whose
    // other k−1 slots are cut
    let chop_avg = ex.clause_hop(None);
    let mut path = vhop.clone();
    for _ in 0..t - 1 {
        path = matmul(&path, &matmul(&chop_avg, &vhop));
    }
    let n = ps.len();
    let qd_leaf: Vec<f64> = (0..n).map(|pp| ps.qd[ps.pairs[pp].0]).collect();
    let mut cap = vec![0.0f64; n];
    let mut tuple = vec![ex.colors[0]; space.k];
    for s in 0..n {
        tuple[0] = ex.colors[s];
        cap[s] = ex.sum_clause_avg(&qd_leaf, &mut tuple, 1, 1.0);
    }
    // the hops put φ̄ on their out edges; the left boundary edge still
    // needs its own factor
    let mut link = 0.0;
    for s in 0..n {
        let ws = cap[s] * ex.phi_bar_pow[s];
        if ws == 0.0 {
            continue;
        }
        for u in 0..n {
            link += ws * path[s][u] * cap[u];
        }
    }
    let link_want = (ln_zhat_sum + t as f64 * (ln_zd + ln_zh)).exp();
    let link_gap = (link - link_want).abs() / link_want;

    // closing comparison with bare subtrees: (κ₀)^{k−1}·κ̃/Tr vs (κ₀)^{k−2}·κ́
    let kappa0_bare = ln_zhat_sum.exp();
    let lhs = (space.k - 1) as f64 * kappa0_bare.ln() + (kappa_cyc / trace_formula).ln();
    let rhs = (space.k - 2) as f64 * kappa0_bare.ln() + link.ln();
    let conclusion_gap = (lhs - rhs).abs();

    Ok(KappaReport {
        tree_vars: v0,
        tree_clauses: a0,
        kappa0_gap,
        star_gap,
        cycle_gap,
        link_gap,
        conclusion_gap,
        trace: trace_formula,
    })
}
