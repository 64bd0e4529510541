//! Message configurations: boundary-labelled trees exchanged along edges,
//! the local closure rules, and the projection onto edge colors.
//!
//! A message is either the symbol ⋆ or an interned tree. Dot messages
//! (variable to clause) are value atoms or joins of hat trees; hat messages
//! (clause to variable) are value atoms, the separator S, or joins of dot
//! trees. Trees are hash-consed into a global table, so structural equality
//! is id equality and sizes are precomputed.
//!
//! The clause-side color table assumes at most one forcing edge per clause,
//! which holds exactly when k ≥ 3; at k = 2 both edges of a fully frozen
//! clause force, and no table row accepts two R colors.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use thiserror::Error;

use crate::frozen::{validate_frozen, FrozenConfig, Frz};
use crate::instance::{EdgeId, Instance};

#[derive(Debug, Error)]
pub enum MsgError {
    #[error("configuration length {got} does not match {want}")]
    Length { got: usize, want: usize },
    #[error("input is not a valid frozen configuration")]
    InvalidFrozen,
    #[error("closure forces both values at edge {0}")]
    Contradiction(EdgeId),
    #[error("star message on free edge {0}: its piece admits no finite tree")]
    StarOnFreeEdge(EdgeId),
}

/// Handle of an interned tree.
pub type TreeId = u32;

pub const DOT_ATOM_0: TreeId = 0;
pub const DOT_ATOM_1: TreeId = 1;
pub const HAT_ATOM_0: TreeId = 2;
pub const HAT_ATOM_1: TreeId = 3;
pub const SEP: TreeId = 4;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum Node {
    DotAtom(u8),
    HatAtom(u8),
    Sep,
    /// join of hat trees at a shared variable root, re-rooted at a clause.
    DotJoin(Box<[TreeId]>),
    /// join of dot trees at a shared clause root, re-rooted at a variable.
    HatJoin(Box<[TreeId]>),
}

/// One level of an interned tree, with children as handles.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TreeNode {
    DotAtom(u8),
    HatAtom(u8),
    Sep,
    DotJoin(Vec<TreeId>),
    HatJoin(Vec<TreeId>),
}

struct Row {
    node: Node,
    vars: u32,
    clauses: u32,
}

#[derive(Default)]
struct Interner {
    rows: Vec<Row>,
    index: HashMap<Node, TreeId>,
    flip: HashMap<TreeId, TreeId>,
}

impl Interner {
    fn new() -> Interner {
        let mut it = Interner::default();
        assert_eq!(it.intern(Node::DotAtom(0)), DOT_ATOM_0);
        assert_eq!(it.intern(Node::DotAtom(1)), DOT_ATOM_1);
        assert_eq!(it.intern(Node::HatAtom(0)), HAT_ATOM_0);
        assert_eq!(it.intern(Node::HatAtom(1)), HAT_ATOM_1);
        assert_eq!(it.intern(Node::Sep), SEP);
        it
    }

    fn intern(&mut self, node: Node) -> TreeId {
        if let Some(&id) = self.index.get(&node) {
            return id;
        }
        // Joins merge the like roots of their children and add one new
        // opposite-type root, hence the ±1 bookkeeping.
        let (vars, clauses) = match &node {
            Node::DotAtom(_) => (0, 1),
            Node::HatAtom(_) | Node::Sep => (1, 0),
            Node::DotJoin(cs) => cs.iter().fold((1u32, 1u32), |(v, a), &c| {
                (
                    v + self.rows[c as usize].vars - 1,
                    a + self.rows[c as usize].clauses,
                )
            }),
            Node::HatJoin(cs) => cs.iter().fold((1u32, 1u32), |(v, a), &c| {
                (
                    v + self.rows[c as usize].vars,
                    a + self.rows[c as usize].clauses - 1,
                )
            }),
        };
        let id = self.rows.len() as TreeId;
        self.rows.push(Row {
            node: node.clone(),
            vars,
            clauses,
        });
        self.index.insert(node, id);
        id
    }

    fn xor1(&mut self, t: TreeId) -> TreeId {
        if let Some(&r) = self.flip.get(&t) {
            return r;
        }
        let r = match self.rows[t as usize].node.clone() {
            Node::DotAtom(b) => self.intern(Node::DotAtom(b ^ 1)),
            Node::HatAtom(b) => self.intern(Node::HatAtom(b ^ 1)),
            Node::Sep => SEP,
            Node::DotJoin(cs) => {
                let mut kids: Vec<TreeId> = cs.iter().map(|&c| self.xor1(c)).collect();
                kids.sort_unstable();
                self.intern(Node::DotJoin(kids.into_boxed_slice()))
            }
            Node::HatJoin(cs) => {
                let mut kids: Vec<TreeId> = cs.iter().map(|&c| self.xor1(c)).collect();
                kids.sort_unstable();
                self.intern(Node::HatJoin(kids.into_boxed_slice()))
            }
        };
        self.flip.insert(t, r);
        self.flip.insert(r, t);
        r
    }

    fn render(&self, t: TreeId, out: &mut String) {
        match &self.rows[t as usize].node {
            Node::DotAtom(b) | Node::HatAtom(b) => out.push(if *b == 0 { '0' } else { '1' }),
            Node::Sep => out.push('S'),
            Node::DotJoin(cs) => {
                out.push('(');
                for (i, &c) in cs.iter().enumerate() {
                    if i > 0 {
                        out.push(' ');
                    }
                    self.render(c, out);
                }
                out.push(')');
            }
            Node::HatJoin(cs) => {
                out.push('[');
                for (i, &c) in cs.iter().enumerate() {
                    if i > 0 {
                        out.push(' ');
                    }
                    self.render(c, out);
                }
                out.push(']');
            }
        }
    }
}

fn with_interner<R>(f: impl FnOnce(&mut Interner) -> R) -> R {
    static INTERNER: OnceLock<Mutex<Interner>> = OnceLock::new();
    let m = INTERNER.get_or_init(|| Mutex::new(Interner::new()));
    f(&mut m.lock().unwrap())
}

pub fn dot_atom(b: u8) -> TreeId {
    DOT_ATOM_0 + (b & 1) as TreeId
}

pub fn hat_atom(b: u8) -> TreeId {
    HAT_ATOM_0 + (b & 1) as TreeId
}

pub fn sep_atom() -> TreeId {
    SEP
}

pub fn tree_node(t: TreeId) -> TreeNode {
    with_interner(|it| match &it.rows[t as usize].node {
        Node::DotAtom(b) => TreeNode::DotAtom(*b),
        Node::HatAtom(b) => TreeNode::HatAtom(*b),
        Node::Sep => TreeNode::Sep,
        Node::DotJoin(cs) => TreeNode::DotJoin(cs.to_vec()),
        Node::HatJoin(cs) => TreeNode::HatJoin(cs.to_vec()),
    })
}

/// Number of variables of the tree.
pub fn tree_vars(t: TreeId) -> u32 {
    with_interner(|it| it.rows[t as usize].vars)
}

/// Number of clauses of the tree.
pub fn tree_clauses(t: TreeId) -> u32 {
    with_interner(|it| it.rows[t as usize].clauses)
}

/// Boolean shift: flips every 0/1 boundary label, fixes S.
pub fn tree_xor(t: TreeId, lit: u8) -> TreeId {
    if lit & 1 == 0 {
        t
    } else {
        with_interner(|it| it.xor1(t))
    }
}

/// Compact text form: atoms as 0/1/S, dot joins (…), hat joins […].
pub fn tree_string(t: TreeId) -> String {
    with_interner(|it| {
        let mut s = String::new();
        it.render(t, &mut s);
        s
    })
}

fn join_dot(mut kids: Vec<TreeId>) -> TreeId {
    kids.sort_unstable();
    with_interner(|it| it.intern(Node::DotJoin(kids.into_boxed_slice())))
}

fn join_hat(mut kids: Vec<TreeId>) -> TreeId {
    kids.sort_unstable();
    with_interner(|it| it.intern(Node::HatJoin(kids.into_boxed_slice())))
}

/// Variable-to-clause message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dot {
    Star,
    Tree(TreeId),
}

/// Clause-to-variable message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Hat {
    Star,
    Tree(TreeId),
}

impl Dot {
    pub fn xor(self, lit: u8) -> Dot {
        match self {
            Dot::Star => Dot::Star,
            Dot::Tree(t) => Dot::Tree(tree_xor(t, lit)),
        }
    }

    /// Value if this is an atom.
    pub fn atom(self) -> Option<u8> {
        match self {
            Dot::Tree(DOT_ATOM_0) => Some(0),
            Dot::Tree(DOT_ATOM_1) => Some(1),
            _ => None,
        }
    }
}

impl Hat {
    pub fn xor(self, lit: u8) -> Hat {
        match self {
            Hat::Star => Hat::Star,
            Hat::Tree(t) => Hat::Tree(tree_xor(t, lit)),
        }
    }

    pub fn atom(self) -> Option<u8> {
        match self {
            Hat::Tree(HAT_ATOM_0) => Some(0),
            Hat::Tree(HAT_ATOM_1) => Some(1),
            _ => None,
        }
    }

    pub fn is_sep(self) -> bool {
        self == Hat::Tree(SEP)
    }
}

/// Variable-side rule: the outgoing dot from the incoming hats on the
/// variable's other edges. `None` is the error value z (opposing atoms).
pub fn dot_rule(hats: &[Hat]) -> Option<Dot> {
    let mut has = [false; 2];
    let mut star = false;
    let mut kids: Vec<TreeId> = Vec::with_capacity(hats.len());
    for &h in hats {
        match h {
            Hat::Star => star = true,
            Hat::Tree(t) if t == HAT_ATOM_0 => has[0] = true,
            Hat::Tree(t) if t == HAT_ATOM_1 => has[1] = true,
            Hat::Tree(t) => kids.push(t),
        }
    }
    if has[0] && has[1] {
        return None;
    }
    if has[0] {
        return Some(Dot::Tree(DOT_ATOM_0));
    }
    if has[1] {
        return Some(Dot::Tree(DOT_ATOM_1));
    }
    if star {
        return Some(Dot::Star);
    }
    Some(Dot::Tree(join_dot(kids)))
}

/// Clause-side rule in the evaluated (literal-free) frame: the outgoing hat
/// from the dots on the clause's other edges. Total; opposing atoms separate.
pub fn hat_rule(dots: &[Dot]) -> Hat {
    let mut has = [false; 2];
    let mut star = false;
    let mut joins = 0usize;
    let mut kids: Vec<TreeId> = Vec::with_capacity(dots.len());
    for &d in dots {
        match d {
            Dot::Star => star = true,
            Dot::Tree(t) if t == DOT_ATOM_0 => {
                has[0] = true;
                kids.push(t);
            }
            Dot::Tree(t) if t == DOT_ATOM_1 => {
                has[1] = true;
                kids.push(t);
            }
            Dot::Tree(t) => {
                joins += 1;
                kids.push(t);
            }
        }
    }
    if has[0] && has[1] {
        return Hat::Tree(SEP);
    }
    if star {
        return Hat::Star;
    }
    if has[1] && joins == 0 {
        return Hat::Tree(HAT_ATOM_0);
    }
    if has[0] && joins == 0 {
        return Hat::Tree(HAT_ATOM_1);
    }
    Hat::Tree(join_hat(kids))
}

/// Messages on every edge, indexed by variable-side edge id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MsgConfig {
    pub dot: Vec<Dot>,
    pub hat: Vec<Hat>,
}

impl MsgConfig {
    pub fn num_edges(&self) -> usize {
        self.dot.len()
    }

    pub fn num_stars(&self) -> usize {
        self.dot.iter().filter(|d| matches!(d, Dot::Star)).count()
            + self.hat.iter().filter(|h| matches!(h, Hat::Star)).count()
    }
}

/// From forced atoms already in place, seed the remaining shortcuts and
/// close: a pinned variable writes its value out of every other edge, a
/// clause that already sees both evaluated values separates its other
/// edges, and the local rules then run to their fixpoint.
fn saturate(
    inst: &Instance,
    dot: &mut [Option<Dot>],
    hat: &mut [Option<Hat>],
) -> Result<(), MsgError> {
    for v in 0..inst.n {
        let mut val: Option<u8> = None;
        for e in inst.var_edges(v) {
            if let Some(b) = hat[e].and_then(Hat::atom) {
                if val.replace(b).is_some_and(|prev| prev != b) {
                    return Err(MsgError::Contradiction(e));
                }
            }
        }
        let Some(b) = val else { continue };
        for e in inst.var_edges(v) {
            let elsewhere = inst
                .var_edges(v)
                .any(|e2| e2 != e && hat[e2].and_then(Hat::atom).is_some());
            if elsewhere && dot[e].is_none() {
                dot[e] = Some(Dot::Tree(dot_atom(b)));
            }
        }
    }
    for a in 0..inst.m {
        let mut seen = [0usize; 2];
        for e in inst.clause_edges(a) {
            if let Some(b) = dot[e].and_then(Dot::atom) {
                seen[(b ^ inst.literal(e)) as usize] += 1;
            }
        }
        if seen[0] == 0 || seen[1] == 0 {
            continue;
        }
        for e in inst.clause_edges(a) {
            if hat[e].is_some() {
                continue;
            }
            // the dissenting pair must avoid e itself
            let b = dot[e]
                .and_then(Dot::atom)
                .map(|b| (b ^ inst.literal(e)) as usize);
            if b.is_none_or(|b| seen[b] > 1) {
                hat[e] = Some(Hat::Tree(SEP));
            }
        }
    }
    close_messages(inst, dot, hat)
}

/// Iterate the local rules until no unset message can be computed, then
/// fill the rest with ⋆. Seeds are never overwritten.
fn close_messages(
    inst: &Instance,
    dot: &mut [Option<Dot>],
    hat: &mut [Option<Hat>],
) -> Result<(), MsgError> {
    let ne = inst.num_edges();
    let mut changed = true;
    while changed {
        changed = false;
        for e in 0..ne {
            if dot[e].is_none() {
                let v = inst.v_of(e);
                let ins: Option<Vec<Hat>> = inst
                    .var_edges(v)
                    .filter(|&e2| e2 != e)
                    .map(|e2| hat[e2])
                    .collect();
                if let Some(ins) = ins {
                    match dot_rule(&ins) {
                        Some(msg) => {
                            dot[e] = Some(msg);
                            changed = true;
                        }
                        None => return Err(MsgError::Contradiction(e)),
                    }
                }
            }
            if hat[e].is_none() {
                let a = inst.a_of(e);
                let ins: Option<Vec<Dot>> = inst
                    .clause_edges(a)
                    .filter(|&e2| e2 != e)
                    .map(|e2| dot[e2].map(|m| m.xor(inst.literal(e2))))
                    .collect();
                if let Some(ins) = ins {
                    hat[e] = Some(hat_rule(&ins).xor(inst.literal(e)));
                    changed = true;
                }
            }
        }
    }
    for e in 0..ne {
        dot[e].get_or_insert(Dot::Star);
        hat[e].get_or_insert(Hat::Star);
    }
    Ok(())
}

/// Message configuration of a valid frozen configuration.
///
/// Seeds forcing atoms, then value atoms out of their variables' other
/// edges, then S where a clause already sees opposing evaluated atoms;
/// closes under the local rules and stars the rest. Assumes d ≥ 2: a
/// degree-one frozen variable has no second edge to carry its value back,
/// and the closure cannot represent it.
pub fn build_messages(inst: &Instance, frz: &FrozenConfig) -> Result<MsgConfig, MsgError> {
    if frz.vals.len() != inst.n {
        return Err(MsgError::Length {
            got: frz.vals.len(),
            want: inst.n,
        });
    }
    if !validate_frozen(inst, frz) {
        return Err(MsgError::InvalidFrozen);
    }
    let ne = inst.num_edges();
    let mut dot: Vec<Option<Dot>> = vec![None; ne];
    let mut hat: Vec<Option<Hat>> = vec![None; ne];
    for e in 0..ne {
        if frz.is_forcing(inst, e) {
            let b = match frz.vals[inst.v_of(e)] {
                Frz::Zero => 0,
                Frz::One => 1,
                Frz::Free => unreachable!("forcing edge at a free variable"),
            };
            hat[e] = Some(Hat::Tree(hat_atom(b)));
        }
    }
    saturate(inst, &mut dot, &mut hat)?;
    Ok(MsgConfig {
        dot: dot.into_iter().map(Option::unwrap).collect(),
        hat: hat.into_iter().map(Option::unwrap).collect(),
    })
}

/// Does every message equal the rule applied to its co-edges?
pub fn check_local_equations(inst: &Instance, cfg: &MsgConfig) -> bool {
    if cfg.dot.len() != inst.num_edges() || cfg.hat.len() != inst.num_edges() {
        return false;
    }
    for e in 0..inst.num_edges() {
        let v = inst.v_of(e);
        let ins: Vec<Hat> = inst
            .var_edges(v)
            .filter(|&e2| e2 != e)
            .map(|e2| cfg.hat[e2])
            .collect();
        if dot_rule(&ins) != Some(cfg.dot[e]) {
            return false;
        }
        let a = inst.a_of(e);
        let ins: Vec<Dot> = inst
            .clause_edges(a)
            .filter(|&e2| e2 != e)
            .map(|e2| cfg.dot[e2].xor(inst.literal(e2)))
            .collect();
        if hat_rule(&ins).xor(inst.literal(e)) != cfg.hat[e] {
            return false;
        }
    }
    true
}

/// Recover the frozen configuration: a variable is pinned by any incident
/// atom (hat first, then dot), otherwise free.
pub fn messages_to_frozen(inst: &Instance, cfg: &MsgConfig) -> FrozenConfig {
    let vals = (0..inst.n)
        .map(|v| {
            for e in inst.var_edges(v) {
                if let Some(b) = cfg.hat[e].atom() {
                    return Frz::from_bit(b);
                }
            }
            for e in inst.var_edges(v) {
                if let Some(b) = cfg.dot[e].atom() {
                    return Frz::from_bit(b);
                }
            }
            Frz::Free
        })
        .collect();
    FrozenConfig { vals }
}

/// Edge color: R = forced edge, B = pinned variable on an unforced edge,
/// F = a pair of joined trees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Color {
    R(u8),
    B(u8),
    F { dot: TreeId, hat: TreeId },
}

impl Color {
    pub fn xor(self, lit: u8) -> Color {
        match self {
            Color::R(b) => Color::R(b ^ (lit & 1)),
            Color::B(b) => Color::B(b ^ (lit & 1)),
            Color::F { dot, hat } => Color::F {
                dot: tree_xor(dot, lit),
                hat: tree_xor(hat, lit),
            },
        }
    }

    pub fn is_f(self) -> bool {
        matches!(self, Color::F { .. })
    }

    /// |σ|: variables of the free tree this edge lies in.
    pub fn size(self) -> Option<u32> {
        match self {
            Color::F { dot, hat } => Some(tree_vars(dot) + tree_vars(hat) - 1),
            _ => None,
        }
    }
}

/// Color of each edge of a message configuration. Fails on ⋆ components
/// outside forced edges, which occur exactly when a free piece has a cycle.
pub fn project_coloring(cfg: &MsgConfig) -> Result<Vec<Color>, MsgError> {
    (0..cfg.num_edges())
        .map(|e| {
            if let Some(b) = cfg.hat[e].atom() {
                return Ok(Color::R(b));
            }
            if let Some(b) = cfg.dot[e].atom() {
                return Ok(Color::B(b));
            }
            match (cfg.dot[e], cfg.hat[e]) {
                (Dot::Tree(dt), Hat::Tree(ht)) => Ok(Color::F { dot: dt, hat: ht }),
                _ => Err(MsgError::StarOnFreeEdge(e)),
            }
        })
        .collect()
}

/// Rebuild the messages a coloring stands for: colors seed their known
/// components and the closure reconstructs the rest (⋆ where it stalls).
pub fn coloring_to_messages(inst: &Instance, colors: &[Color]) -> Result<MsgConfig, MsgError> {
    if colors.len() != inst.num_edges() {
        return Err(MsgError::Length {
            got: colors.len(),
            want: inst.num_edges(),
        });
    }
    let ne = inst.num_edges();
    let mut dot: Vec<Option<Dot>> = vec![None; ne];
    let mut hat: Vec<Option<Hat>> = vec![None; ne];
    for (e, &c) in colors.iter().enumerate() {
        match c {
            Color::R(b) => hat[e] = Some(Hat::Tree(hat_atom(b))),
            Color::B(b) => dot[e] = Some(Dot::Tree(dot_atom(b))),
            Color::F { dot: dt, hat: ht } => {
                dot[e] = Some(Dot::Tree(dt));
                hat[e] = Some(Hat::Tree(ht));
            }
        }
    }
    saturate(inst, &mut dot, &mut hat)?;
    Ok(MsgConfig {
        dot: dot.into_iter().map(Option::unwrap).collect(),
        hat: hat.into_iter().map(Option::unwrap).collect(),
    })
}

/// Variable-side color constraint.
pub fn i_dot(colors: &[Color]) -> bool {
    let mut has_r = [false; 2];
    let mut has_b = [false; 2];
    let mut fs: Vec<(TreeId, TreeId)> = Vec::new();
    for &c in colors {
        match c {
            Color::R(b) => has_r[b as usize] = true,
            Color::B(b) => has_b[b as usize] = true,
            Color::F { dot, hat } => fs.push((dot, hat)),
        }
    }
    for b in 0..2 {
        if has_r[b] && !has_r[b ^ 1] && !has_b[b ^ 1] && fs.is_empty() {
            return true;
        }
    }
    if !fs.is_empty() && fs.len() == colors.len() {
        // all free: each outgoing tree is the join of the others' hats
        return (0..fs.len()).all(|i| {
            let ins: Vec<Hat> = fs
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &(_, h))| Hat::Tree(h))
                .collect();
            dot_rule(&ins) == Some(Dot::Tree(fs[i].0))
        });
    }
    false
}

/// Clause-side color constraint, in the evaluated (literal-free) frame.
pub fn i_hat_lit(colors: &[Color]) -> bool {
    let k = colors.len();
    let mut nr = [0usize; 2];
    let mut nb = [0usize; 2];
    let mut fs: Vec<(usize, TreeId, TreeId)> = Vec::new();
    for (i, &c) in colors.iter().enumerate() {
        match c {
            Color::R(b) => nr[b as usize] += 1,
            Color::B(b) => nb[b as usize] += 1,
            Color::F { dot, hat } => fs.push((i, dot, hat)),
        }
    }
    for b in 0..2 {
        if nr[b] == 1 && nb[b ^ 1] == k - 1 {
            return true;
        }
    }
    if nr[0] + nr[1] > 0 {
        return false;
    }
    if nb[0] >= 1 && nb[1] >= 1 && fs.iter().all(|&(_, _, h)| h == SEP) {
        return true;
    }
    for b in 0..2u8 {
        if nb[(b ^ 1) as usize] == 0 && fs.len() >= 2 {
            // all B share one value; every free tree matches the join of
            // the clause's other dots
            let ok = fs.iter().all(|&(i, _, h)| {
                let ins: Vec<Dot> = colors
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, &c)| match c {
                        Color::B(v) => Dot::Tree(dot_atom(v)),
                        Color::F { dot, .. } => Dot::Tree(dot),
                        Color::R(_) => unreachable!(),
                    })
                    .collect();
                hat_rule(&ins) == Hat::Tree(h)
            });
            if ok {
                return true;
            }
        }
    }
    false
}

/// Do the variable and clause tables accept every vertex neighborhood?
pub fn coloring_valid(inst: &Instance, colors: &[Color]) -> bool {
    if colors.len() != inst.num_edges() {
        return false;
    }
    for v in 0..inst.n {
        let local: Vec<Color> = inst.var_edges(v).map(|e| colors[e]).collect();
        if !i_dot(&local) {
            return false;
        }
    }
    for a in 0..inst.m {
        let local: Vec<Color> = inst
            .clause_edges(a)
            .map(|e| colors[e].xor(inst.literal(e)))
            .collect();
        if !i_hat_lit(&local) {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frozen::{coarsen, free_decompose};
    use crate::instance::Instance;
    use crate::solutions::{enumerate_solutions, is_solution};
    use crate::testutil::{coarsened_configs, corpus, dense_corpus, pendant_tree_fixture};

    fn d0() -> Dot {
        Dot::Tree(DOT_ATOM_0)
    }

    fn d1() -> Dot {
        Dot::Tree(DOT_ATOM_1)
    }

    fn h0() -> Hat {
        Hat::Tree(HAT_ATOM_0)
    }

    fn h1() -> Hat {
        Hat::Tree(HAT_ATOM_1)
    }

    fn hs() -> Hat {
        Hat::Tree(SEP)
    }

    #[test]
    fn variable_rule_cases() {
        assert_eq!(dot_rule(&[h0(), hs()]), Some(d0()));
        assert_eq!(dot_rule(&[h1(), Hat::Star]), Some(d1()));
        assert_eq!(dot_rule(&[h0(), h1()]), None);
        assert_eq!(dot_rule(&[Hat::Star, hs()]), Some(Dot::Star));
        let j = dot_rule(&[hs(), hs()]).unwrap();
        match j {
            Dot::Tree(t) => {
                assert_eq!(tree_node(t), TreeNode::DotJoin(vec![SEP, SEP]));
                assert_eq!(tree_string(t), "(S S)");
            }
            Dot::Star => panic!("expected a join"),
        }
    }

    #[test]
    fn clause_rule_cases() {
        assert_eq!(hat_rule(&[d1(), d1()]), h0());
        assert_eq!(hat_rule(&[d0(), d0(), d0()]), h1());
        assert_eq!(hat_rule(&[d0(), d1()]), hs());
        assert_eq!(hat_rule(&[d0(), d1(), Dot::Star]), hs());
        assert_eq!(hat_rule(&[d0(), Dot::Star]), Hat::Star);
        let dj = dot_rule(&[hs()]).unwrap();
        let Dot::Tree(djt) = dj else { panic!() };
        match hat_rule(&[d0(), dj]) {
            Hat::Tree(t) => {
                assert_eq!(tree_node(t), TreeNode::HatJoin(vec![DOT_ATOM_0, djt]));
            }
            Hat::Star => panic!("expected a join"),
        }
        // an atom beside a join does not collapse to the pure-atom rows
        assert_ne!(hat_rule(&[d1(), dj]), h0());
    }

    #[test]
    fn join_children_are_a_multiset() {
        let a = dot_rule(&[hs(), Hat::Tree(hat_atom(0))]).unwrap();
        assert_eq!(a, d0());
        let x = dot_rule(&[hs()]).unwrap();
        let y = dot_rule(&[hs(), hs()]).unwrap();
        assert_ne!(x, y);
        let (Dot::Tree(xt), Dot::Tree(yt)) = (x, y) else {
            panic!()
        };
        assert_eq!(hat_rule(&[x, y]), hat_rule(&[y, x]));
        assert_eq!(join_hat(vec![xt, yt]), join_hat(vec![yt, xt]));
    }

    #[test]
    fn xor_flips_boundary_labels() {
        assert_eq!(tree_xor(DOT_ATOM_0, 1), DOT_ATOM_1);
        assert_eq!(tree_xor(HAT_ATOM_1, 1), HAT_ATOM_0);
        assert_eq!(tree_xor(SEP, 1), SEP);
        let Dot::Tree(dj) = dot_rule(&[hs()]).unwrap() else {
            panic!()
        };
        let Hat::Tree(hj) = hat_rule(&[d0(), Dot::Tree(dj)]) else {
            panic!()
        };
        let flipped = tree_xor(hj, 1);
        assert_ne!(flipped, hj);
        assert_eq!(tree_xor(flipped, 1), hj);
        assert_eq!(tree_node(flipped), TreeNode::HatJoin(vec![DOT_ATOM_1, dj]));
        assert_eq!(tree_xor(hj, 0), hj);
    }

    #[test]
    fn tree_counts_follow_the_joins() {
        assert_eq!((tree_vars(DOT_ATOM_0), tree_clauses(DOT_ATOM_0)), (0, 1));
        assert_eq!((tree_vars(HAT_ATOM_1), tree_clauses(HAT_ATOM_1)), (1, 0));
        assert_eq!((tree_vars(SEP), tree_clauses(SEP)), (1, 0));
        let Dot::Tree(dj) = dot_rule(&[hs()]).unwrap() else {
            panic!()
        };
        assert_eq!((tree_vars(dj), tree_clauses(dj)), (1, 1));
        let Hat::Tree(hj) = hat_rule(&[d0(), Dot::Tree(dj)]) else {
            panic!()
        };
        assert_eq!((tree_vars(hj), tree_clauses(hj)), (2, 1));
        let Dot::Tree(dj2) = dot_rule(&[Hat::Tree(hj), hs()]).unwrap() else {
            panic!()
        };
        assert_eq!((tree_vars(dj2), tree_clauses(dj2)), (2, 2));
        // xor preserves shape
        assert_eq!(tree_vars(tree_xor(dj2, 1)), 2);
        assert_eq!(tree_clauses(tree_xor(dj2, 1)), 2);
    }

    /// Two variables joined by two parallel clauses, both tuples (0,1):
    /// everything forces, so atoms everywhere and no free trees.
    #[test]
    fn doubled_clause_pair_is_all_atoms() {
        let inst = Instance::new(2, 2, 2, vec![0, 2, 1, 3], vec![0, 1, 0, 1]).unwrap();
        assert!(is_solution(&inst, 0));
        let frz = coarsen(&inst, 0).unwrap();
        assert_eq!(frz.num_free(), 0);
        let cfg = build_messages(&inst, &frz).unwrap();
        assert_eq!(cfg.num_stars(), 0);
        for e in 0..4 {
            assert_eq!(cfg.hat[e].atom(), Some(0));
            assert_eq!(cfg.dot[e].atom(), Some(0));
        }
        assert!(check_local_equations(&inst, &cfg));
        assert_eq!(messages_to_frozen(&inst, &cfg), frz);
        let colors = project_coloring(&cfg).unwrap();
        assert!(colors.iter().all(|&c| c == Color::R(0)));
        assert!(i_dot(&colors[0..2]));
        // with k = 2 both edges force, which no clause row accepts
        assert!(!coloring_valid(&inst, &colors));
    }

    /// Four variables, each forced by exactly one clause, with the forcing
    /// dependencies arranged in cycles: the backward messages stall and
    /// star out, yet the configuration round-trips.
    #[test]
    fn forcing_cycle_stars_round_trip() {
        let inst = Instance::new(
            4,
            3,
            3,
            vec![0, 4, 8, 1, 3, 11, 2, 6, 10, 5, 7, 9],
            vec![0, 1, 0, 0, 1, 0, 0, 1, 0, 0, 1, 0],
        )
        .unwrap();
        assert!(is_solution(&inst, 0));
        let frz = coarsen(&inst, 0).unwrap();
        assert_eq!(frz.num_free(), 0);
        assert!(!free_decompose(&inst, &frz).has_free_cycle());
        let cfg = build_messages(&inst, &frz).unwrap();
        assert!(cfg.num_stars() > 0, "backward messages should stall");
        assert!(check_local_equations(&inst, &cfg));
        assert_eq!(messages_to_frozen(&inst, &cfg), frz);
        let colors = project_coloring(&cfg).unwrap();
        assert!(colors.iter().all(|&c| !c.is_f()));
        assert!(coloring_valid(&inst, &colors));
        assert_eq!(coloring_to_messages(&inst, &colors).unwrap(), cfg);
        // stars only ever face an atom on the other side
        for e in 0..cfg.num_edges() {
            if cfg.dot[e] == Dot::Star {
                assert!(cfg.hat[e].atom().is_some());
            }
            if cfg.hat[e] == Hat::Star {
                assert!(cfg.dot[e].atom().is_some());
            }
        }
    }

    #[test]
    fn corpus_round_trips() {
        let mut free_cycle_configs = 0usize;
        let mut star_free = 0usize;
        for inst in corpus().into_iter().chain(dense_corpus()) {
            for frz in coarsened_configs(&inst) {
                let cfg = build_messages(&inst, &frz).unwrap();
                assert!(check_local_equations(&inst, &cfg), "{frz}");
                assert_eq!(messages_to_frozen(&inst, &cfg), frz, "{frz}");
                if free_decompose(&inst, &frz).has_free_cycle() {
                    free_cycle_configs += 1;
                    assert!(matches!(
                        project_coloring(&cfg),
                        Err(MsgError::StarOnFreeEdge(_))
                    ));
                    continue;
                }
                let colors = project_coloring(&cfg).unwrap();
                assert!(coloring_valid(&inst, &colors), "{frz}");
                assert_eq!(coloring_to_messages(&inst, &colors).unwrap(), cfg, "{frz}");
                for e in 0..cfg.num_edges() {
                    if cfg.dot[e] == Dot::Star {
                        assert!(cfg.hat[e].atom().is_some(), "{frz} edge {e}");
                    }
                    if cfg.hat[e] == Hat::Star {
                        assert!(cfg.dot[e].atom().is_some(), "{frz} edge {e}");
                    }
                }
                if cfg.num_stars() == 0 {
                    star_free += 1;
                }
            }
        }
        assert!(free_cycle_configs > 0, "corpus should exercise free cycles");
        assert!(star_free > 0, "corpus should exercise star-free configs");
    }

    #[test]
    fn free_tree_sizes_match_the_decomposition() {
        let mut f_edges = 0usize;
        let mut cases: Vec<(Instance, FrozenConfig)> = Vec::new();
        for inst in corpus().into_iter().chain(dense_corpus()) {
            for frz in coarsened_configs(&inst) {
                cases.push((inst.clone(), frz));
            }
        }
        let deep = Instance::sample(9, 4, 3, 72).unwrap();
        for frz in coarsened_configs(&deep) {
            cases.push((deep.clone(), frz));
        }
        cases.push(pendant_tree_fixture());
        for (inst, frz) in &cases {
            let dec = free_decompose(inst, frz);
            if dec.has_free_cycle() || frz.num_free() == 0 {
                continue;
            }
            let cfg = build_messages(inst, frz).unwrap();
            let colors = project_coloring(&cfg).unwrap();
            for (e, c) in colors.iter().enumerate() {
                if let Some(sz) = c.size() {
                    let piece =
                        dec.piece_of_var[inst.v_of(e)].expect("free edges sit at free variables");
                    assert_eq!(sz as usize, dec.pieces[piece].vars.len());
                    f_edges += 1;
                }
            }
        }
        assert!(
            f_edges > 15,
            "corpus should exercise free trees, saw {f_edges}"
        );
    }

    /// The hand-built pendant path: one tree piece of three variables whose
    /// boundary is all S, with the expected joined trees on its edges.
    #[test]
    fn pendant_tree_fixture_round_trip() {
        let (inst, frz) = pendant_tree_fixture();
        assert!(crate::frozen::validate_frozen(&inst, &frz));
        assert_eq!(crate::frozen::brute_size(&inst, &frz).unwrap(), 5);
        let dec = free_decompose(&inst, &frz);
        assert_eq!(dec.pieces.len(), 1);
        assert_eq!(dec.pieces[0].vars, vec![18, 19, 20]);
        assert_eq!(dec.pieces[0].clauses.len(), 2);
        assert_eq!(dec.pieces[0].boundary_hat.len(), 8);
        assert_eq!(dec.pieces[0].boundary_dot.len(), 2);
        assert!(!dec.pieces[0].has_cycle);

        let cfg = build_messages(&inst, &frz).unwrap();
        assert!(check_local_equations(&inst, &cfg));
        assert_eq!(messages_to_frozen(&inst, &cfg), frz);
        let colors = project_coloring(&cfg).unwrap();
        assert!(coloring_valid(&inst, &colors));
        assert_eq!(coloring_to_messages(&inst, &colors).unwrap(), cfg);

        let f_edges: Vec<usize> = (0..colors.len()).filter(|&e| colors[e].is_f()).collect();
        let mut tree_edges = dec.pieces[0].edges.clone();
        tree_edges.extend_from_slice(&dec.pieces[0].boundary_hat);
        tree_edges.sort_unstable();
        assert_eq!(f_edges, tree_edges);
        for &e in &f_edges {
            assert_eq!(colors[e].size(), Some(3));
        }
        // leaf edge of the path: a bare join out, the rest of the tree back
        let leaf = dec.pieces[0]
            .edges
            .iter()
            .copied()
            .find(|&e| inst.v_of(e) == 18)
            .unwrap();
        let Dot::Tree(out) = cfg.dot[leaf] else {
            panic!()
        };
        assert_eq!(tree_string(out), "(S S S)");
        let Hat::Tree(back) = cfg.hat[leaf] else {
            panic!()
        };
        assert_eq!(tree_string(back), "[0 (S S [0 (S S S)])]");
        // boundary hats are all S; boundary dots carry the anchors' value
        for &e in &dec.pieces[0].boundary_hat {
            assert!(cfg.hat[e].is_sep());
        }
        for &e in &dec.pieces[0].boundary_dot {
            assert_eq!(cfg.dot[e].atom(), Some(0));
        }
    }

    #[test]
    fn coloring_closure_rejects_opposing_forces() {
        let inst = Instance::new(
            4,
            3,
            3,
            vec![0, 4, 8, 1, 3, 11, 2, 6, 10, 5, 7, 9],
            vec![0, 1, 0, 0, 1, 0, 0, 1, 0, 0, 1, 0],
        )
        .unwrap();
        let mut colors = vec![Color::B(0); 12];
        colors[0] = Color::R(0);
        colors[1] = Color::R(1);
        colors[2] = Color::R(0);
        assert!(matches!(
            coloring_to_messages(&inst, &colors),
            Err(MsgError::Contradiction(_))
        ));
    }

    #[test]
    fn stars_everywhere_reads_as_all_free() {
        let inst = Instance::sample(8, 3, 3, 5).unwrap();
        let cfg = MsgConfig {
            dot: vec![Dot::Star; inst.num_edges()],
            hat: vec![Hat::Star; inst.num_edges()],
        };
        let frz = messages_to_frozen(&inst, &cfg);
        assert_eq!(frz.num_free(), inst.n);
    }

    #[test]
    fn build_rejects_bad_input() {
        let inst = Instance::sample(8, 3, 3, 5).unwrap();
        let sols = enumerate_solutions(&inst).unwrap();
        assert!(!sols.is_empty());
        // a raw solution with no free variables is usually not coarsened
        let raw = FrozenConfig::from_assignment(inst.n, sols[0]);
        let frz = coarsen(&inst, sols[0]).unwrap();
        if frz != raw {
            assert!(matches!(
                build_messages(&inst, &raw),
                Err(MsgError::InvalidFrozen)
            ));
        }
        let short = FrozenConfig {
            vals: vec![Frz::Free; 3],
        };
        assert!(matches!(
            build_messages(&inst, &short),
            Err(MsgError::Length { .. })
        ));
    }

    #[test]
    fn variable_table_hand_cases() {
        let f = |dt, ht| Color::F { dot: dt, hat: ht };
        assert!(i_dot(&[Color::R(0), Color::B(0), Color::B(0)]));
        assert!(i_dot(&[Color::R(1), Color::R(1)]));
        assert!(!i_dot(&[Color::R(0), Color::B(1)]));
        assert!(!i_dot(&[Color::B(0), Color::B(0)]));
        assert!(!i_dot(&[Color::R(0), f(DOT_ATOM_0, SEP)]));
        // two-edge free variable: each dot is the join of the other hat
        let Dot::Tree(j_of_s) = dot_rule(&[hs()]).unwrap() else {
            panic!()
        };
        assert!(i_dot(&[f(j_of_s, SEP), f(j_of_s, SEP)]));
        assert!(!i_dot(&[f(j_of_s, SEP), f(DOT_ATOM_0, SEP)]));
    }

    #[test]
    fn clause_table_hand_cases() {
        let f = |dt, ht| Color::F { dot: dt, hat: ht };
        assert!(i_hat_lit(&[Color::R(0), Color::B(1), Color::B(1)]));
        assert!(i_hat_lit(&[Color::R(1), Color::B(0)]));
        assert!(!i_hat_lit(&[Color::R(0), Color::B(1), Color::B(0)]));
        assert!(!i_hat_lit(&[Color::R(0), Color::R(1), Color::B(1)]));
        assert!(i_hat_lit(&[Color::B(0), Color::B(1), Color::B(1)]));
        // separated clause tolerates free edges only through S
        let Dot::Tree(j1) = dot_rule(&[hs()]).unwrap() else {
            panic!()
        };
        let Dot::Tree(j2) = dot_rule(&[hs(), hs()]).unwrap() else {
            panic!()
        };
        assert!(i_hat_lit(&[Color::B(0), Color::B(1), f(j1, SEP)]));
        let Hat::Tree(hj) = hat_rule(&[d0(), Dot::Tree(j1)]) else {
            panic!()
        };
        assert!(!i_hat_lit(&[Color::B(0), Color::B(1), f(j1, hj)]));
        // unseparated clause: both free hats must be the join of the rest
        let h_for_1 = hat_rule(&[d0(), Dot::Tree(j2)]);
        let h_for_2 = hat_rule(&[d0(), Dot::Tree(j1)]);
        let (Hat::Tree(ht1), Hat::Tree(ht2)) = (h_for_1, h_for_2) else {
            panic!()
        };
        assert!(i_hat_lit(&[Color::B(0), f(j1, ht1), f(j2, ht2)]));
        assert!(!i_hat_lit(&[Color::B(0), f(j1, ht2), f(j2, ht1)]));
        assert!(!i_hat_lit(&[Color::B(0), Color::B(0), f(j1, ht1)]));
    }
}
