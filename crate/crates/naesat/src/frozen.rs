//! Frozen configurations: coarsening, validation, clause classification,
//! free-piece decomposition, and the brute-force size oracle.
//!
//! The three-valued algebra {0,1,f} has f ⊕ b = f; a clause is satisfied
//! unless its evaluated tuple is constant in {0,1}. A variable is frozen
//! (0/1) exactly when some incident edge is forcing: negating that edge's
//! literal would violate its clause.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::instance::{EdgeId, Instance};
use crate::solutions::{is_solution, Assignment};

#[derive(Debug, Error)]
pub enum FrozenError {
    #[error("assignment is not a solution")]
    NotASolution,
    #[error("configuration has {0} free variables, limit 30")]
    TooManyFree(usize),
    #[error("configuration length {got} does not match n = {want}")]
    Length { got: usize, want: usize },
    #[error("invalid symbol {0:?} (want 0, 1 or f)")]
    Symbol(char),
}

/// Three-valued variable state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Frz {
    Zero,
    One,
    Free,
}

impl Frz {
    pub fn from_bit(b: u8) -> Frz {
        if b & 1 == 1 {
            Frz::One
        } else {
            Frz::Zero
        }
    }

    pub fn is_free(self) -> bool {
        self == Frz::Free
    }

    /// Evaluate under xor with a literal; f absorbs.
    pub fn xor(self, lit: u8) -> Frz {
        match self {
            Frz::Free => Frz::Free,
            Frz::Zero => Frz::from_bit(lit),
            Frz::One => Frz::from_bit(lit ^ 1),
        }
    }

    pub fn as_char(self) -> char {
        match self {
            Frz::Zero => '0',
            Frz::One => '1',
            Frz::Free => 'f',
        }
    }
}

/// A {0,1,f}-labelling of the variables.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FrozenConfig {
    pub vals: Vec<Frz>,
}

impl FrozenConfig {
    pub fn from_assignment(n: usize, x: Assignment) -> FrozenConfig {
        FrozenConfig {
            vals: (0..n).map(|v| Frz::from_bit((x >> v) as u8)).collect(),
        }
    }

    pub fn num_free(&self) -> usize {
        self.vals.iter().filter(|v| v.is_free()).count()
    }

    /// Evaluated value L_e ⊕ x_{v(e)} of an edge.
    pub fn eval(&self, inst: &Instance, e: EdgeId) -> Frz {
        self.vals[inst.v_of(e)].xor(inst.literal(e))
    }

    /// Is the clause satisfied (evaluated tuple not constant in {0,1})?
    pub fn clause_ok(&self, inst: &Instance, a: usize) -> bool {
        let mut seen0 = false;
        let mut seen1 = false;
        for e in inst.clause_edges(a) {
            match self.eval(inst, e) {
                Frz::Free => return true,
                Frz::Zero => seen0 = true,
                Frz::One => seen1 = true,
            }
        }
        seen0 && seen1
    }

    /// Is edge e forcing: all other edges of its clause evaluate to the
    /// common complement of e's value?
    pub fn is_forcing(&self, inst: &Instance, e: EdgeId) -> bool {
        let want = match self.eval(inst, e) {
            Frz::Free => return false,
            v => v.xor(1),
        };
        let a = inst.a_of(e);
        inst.clause_edges(a)
            .filter(|&e2| e2 != e)
            .all(|e2| self.eval(inst, e2) == want)
    }

    /// Number of forcing edges R(x̲).
    pub fn count_forcing(&self, inst: &Instance) -> usize {
        (0..inst.num_edges())
            .filter(|&e| self.is_forcing(inst, e))
            .count()
    }
}

impl fmt::Display for FrozenConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.vals {
            write!(f, "{}", v.as_char())?;
        }
        Ok(())
    }
}

impl FromStr for FrozenConfig {
    type Err = FrozenError;

    fn from_str(s: &str) -> Result<FrozenConfig, FrozenError> {
        let vals = s
            .chars()
            .map(|c| match c {
                '0' => Ok(Frz::Zero),
                '1' => Ok(Frz::One),
                'f' => Ok(Frz::Free),
                other => Err(FrozenError::Symbol(other)),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(FrozenConfig { vals })
    }
}

/// Coarsen a solution to its frozen configuration.
///
/// A variable stays frozen only while it still has a forcing edge *and*
/// flipping it would violate some clause; otherwise it is freed. On
/// instances without repeated variable–clause incidences the two
/// conditions coincide and this is the textbook rule ("free v whenever
/// flipping it violates nothing"). With repeated incidences they can
/// differ, and requiring both keeps the output valid (every frozen
/// variable keeps a forcing witness) while still freeing every variable
/// whose flip stays inside the solution cluster.
pub fn coarsen(inst: &Instance, x: Assignment) -> Result<FrozenConfig, FrozenError> {
    let order: Vec<usize> = (0..inst.n).collect();
    coarsen_with_order(inst, x, &order)
}

/// Coarsening with an explicit initial scan order (the result must not
/// depend on it; exposed so tests can check confluence).
pub fn coarsen_with_order(
    inst: &Instance,
    x: Assignment,
    order: &[usize],
) -> Result<FrozenConfig, FrozenError> {
    if !is_solution(inst, x) {
        return Err(FrozenError::NotASolution);
    }
    let mut frz = FrozenConfig::from_assignment(inst.n, x);
    let mut queued = vec![false; inst.n];
    let mut queue: Vec<usize> = Vec::with_capacity(inst.n);
    for &v in order {
        if !queued[v] {
            queued[v] = true;
            queue.push(v);
        }
    }
    while let Some(v) = queue.pop() {
        queued[v] = false;
        if frz.vals[v].is_free() || keeps_frozen(inst, &frz, v) {
            continue;
        }
        frz.vals[v] = Frz::Free;
        for e in inst.var_edges(v) {
            for e2 in inst.clause_edges(inst.a_of(e)) {
                let w = inst.v_of(e2);
                if !frz.vals[w].is_free() && !queued[w] {
                    queued[w] = true;
                    queue.push(w);
                }
            }
        }
    }
    Ok(frz)
}

fn keeps_frozen(inst: &Instance, frz: &FrozenConfig, v: usize) -> bool {
    let has_forcing = inst.var_edges(v).any(|e| frz.is_forcing(inst, e));
    if !has_forcing {
        return false;
    }
    // Does flipping x_v (all its occurrences at once) violate a clause?
    let flipped = frz.vals[v].xor(1);
    inst.var_edges(v).any(|e| {
        let a = inst.a_of(e);
        let mut seen0 = false;
        let mut seen1 = false;
        for e2 in inst.clause_edges(a) {
            let val = if inst.v_of(e2) == v {
                flipped
            } else {
                frz.vals[inst.v_of(e2)]
            };
            match val.xor(inst.literal(e2)) {
                Frz::Free => return false,
                Frz::Zero => seen0 = true,
                Frz::One => seen1 = true,
            }
        }
        !(seen0 && seen1)
    })
}

/// Both defining conditions: no clause violated, and x_v ∈ {0,1} iff v has
/// a forcing edge.
pub fn validate_frozen(inst: &Instance, frz: &FrozenConfig) -> bool {
    if frz.vals.len() != inst.n {
        return false;
    }
    if !(0..inst.m).all(|a| frz.clause_ok(inst, a)) {
        return false;
    }
    (0..inst.n).all(|v| {
        let forced = inst.var_edges(v).any(|e| frz.is_forcing(inst, e));
        forced == !frz.vals[v].is_free()
    })
}

/// Per-clause and per-edge classification of a valid frozen configuration.
#[derive(Debug, Clone)]
pub struct Classification {
    /// per clause: some pair of edges evaluates to 0 and 1.
    pub separating: Vec<bool>,
    /// per edge (variable-side id): forcing flag.
    pub forcing: Vec<bool>,
    /// per clause: number of distinct free neighbor variables.
    pub free_neighbors: Vec<usize>,
    /// non-separating clauses with fewer than two distinct free neighbors.
    /// Empty for every coarsening image of an instance without repeated
    /// variable–clause incidences; repeated incidences can populate it.
    pub pathological: Vec<usize>,
}

impl Classification {
    pub fn num_forcing_edges(&self) -> usize {
        self.forcing.iter().filter(|&&b| b).count()
    }
}

pub fn classify(inst: &Instance, frz: &FrozenConfig) -> Classification {
    let forcing: Vec<bool> = (0..inst.num_edges())
        .map(|e| frz.is_forcing(inst, e))
        .collect();
    let mut separating = vec![false; inst.m];
    let mut free_neighbors = vec![0usize; inst.m];
    let mut pathological = Vec::new();
    for a in 0..inst.m {
        let mut seen0 = false;
        let mut seen1 = false;
        let mut free_vars: Vec<usize> = Vec::new();
        for e in inst.clause_edges(a) {
            match frz.eval(inst, e) {
                Frz::Zero => seen0 = true,
                Frz::One => seen1 = true,
                Frz::Free => free_vars.push(inst.v_of(e)),
            }
        }
        free_vars.sort_unstable();
        free_vars.dedup();
        separating[a] = seen0 && seen1;
        free_neighbors[a] = free_vars.len();
        if !separating[a] {
            // A forcing clause is separating, so a non-separating clause has
            // no forcing edge and (barring repeated incidences) at least two
            // free neighbors.
            debug_assert!(inst.clause_edges(a).all(|e| !forcing[e]));
            if free_vars.len() < 2 {
                pathological.push(a);
            }
        }
    }
    Classification {
        separating,
        forcing,
        free_neighbors,
        pathological,
    }
}

/// One connected component of free variables and non-separating clauses,
/// with its boundary half-edges.
#[derive(Debug, Clone)]
pub struct FreePiece {
    pub vars: Vec<usize>,
    pub clauses: Vec<usize>,
    /// internal full edges (free variable – non-separating clause).
    pub edges: Vec<EdgeId>,
    /// boundary half-edges at the piece's clauses (to frozen variables).
    pub boundary_dot: Vec<EdgeId>,
    /// boundary half-edges at the piece's variables (to separating clauses).
    pub boundary_hat: Vec<EdgeId>,
    pub has_cycle: bool,
}

#[derive(Debug, Clone)]
pub struct FreeDecomposition {
    pub pieces: Vec<FreePiece>,
    /// piece index of each free variable (None for frozen).
    pub piece_of_var: Vec<Option<usize>>,
    pub piece_of_clause: Vec<Option<usize>>,
}

impl FreeDecomposition {
    pub fn has_free_cycle(&self) -> bool {
        self.pieces.iter().any(|p| p.has_cycle)
    }
}

pub fn free_decompose(inst: &Instance, frz: &FrozenConfig) -> FreeDecomposition {
    let class = classify(inst, frz);
    free_decompose_with(inst, frz, &class)
}

pub fn free_decompose_with(
    inst: &Instance,
    frz: &FrozenConfig,
    class: &Classification,
) -> FreeDecomposition {
    let mut piece_of_var: Vec<Option<usize>> = vec![None; inst.n];
    let mut piece_of_clause: Vec<Option<usize>> = vec![None; inst.m];
    let mut pieces: Vec<FreePiece> = Vec::new();
    for v0 in 0..inst.n {
        if !frz.vals[v0].is_free() || piece_of_var[v0].is_some() {
            continue;
        }
        let id = pieces.len();
        let mut piece = FreePiece {
            vars: Vec::new(),
            clauses: Vec::new(),
            edges: Vec::new(),
            boundary_dot: Vec::new(),
            boundary_hat: Vec::new(),
            has_cycle: false,
        };
        piece_of_var[v0] = Some(id);
        let mut stack = vec![v0];
        piece.vars.push(v0);
        while let Some(v) = stack.pop() {
            for e in inst.var_edges(v) {
                let a = inst.a_of(e);
                if class.separating[a] {
                    piece.boundary_hat.push(e);
                    continue;
                }
                piece.edges.push(e);
                if piece_of_clause[a].is_some() {
                    continue;
                }
                piece_of_clause[a] = Some(id);
                piece.clauses.push(a);
                for e2 in inst.clause_edges(a) {
                    let w = inst.v_of(e2);
                    if frz.vals[w].is_free() {
                        if piece_of_var[w].is_none() {
                            piece_of_var[w] = Some(id);
                            piece.vars.push(w);
                            stack.push(w);
                        }
                    } else {
                        piece.boundary_dot.push(e2);
                    }
                }
            }
        }
        piece.vars.sort_unstable();
        piece.clauses.sort_unstable();
        piece.edges.sort_unstable();
        piece.boundary_dot.sort_unstable();
        piece.boundary_hat.sort_unstable();
        piece.has_cycle = piece.edges.len() >= piece.vars.len() + piece.clauses.len();
        pieces.push(piece);
    }
    FreeDecomposition {
        pieces,
        piece_of_var,
        piece_of_clause,
    }
}

/// Exact number of solutions extending the frozen variables. Factorizes
/// over free pieces; clauses without free neighbors are checked once.
pub fn brute_size(inst: &Instance, frz: &FrozenConfig) -> Result<u64, FrozenError> {
    if frz.vals.len() != inst.n {
        return Err(FrozenError::Length {
            got: frz.vals.len(),
            want: inst.n,
        });
    }
    let nf = frz.num_free();
    if nf > 30 {
        return Err(FrozenError::TooManyFree(nf));
    }
    for a in 0..inst.m {
        let all_frozen = inst.clause_edges(a).all(|e| !frz.eval(inst, e).is_free());
        if all_frozen && !frz.clause_ok(inst, a) {
            return Ok(0);
        }
    }
    let dec = free_decompose(inst, frz);
    let mut total: u64 = 1;
    for piece in &dec.pieces {
        total *= piece_extensions(inst, frz, piece);
    }
    Ok(total)
}

fn piece_extensions(inst: &Instance, frz: &FrozenConfig, piece: &FreePiece) -> u64 {
    // Clauses constraining the piece: any clause with a free neighbor in it.
    // Separating clauses are satisfied by their frozen edges alone, so only
    // the piece's own (non-separating) clauses need checking.
    let vars = &piece.vars;
    let mut count = 0u64;
    for bits in 0u64..1 << vars.len() {
        let value = |v: usize| -> Frz {
            match vars.binary_search(&v) {
                Ok(i) => Frz::from_bit((bits >> i) as u8),
                Err(_) => frz.vals[v],
            }
        };
        let ok = piece.clauses.iter().all(|&a| {
            let mut seen0 = false;
            let mut seen1 = false;
            for e in inst.clause_edges(a) {
                match value(inst.v_of(e)).xor(inst.literal(e)) {
                    Frz::Free => return true,
                    Frz::Zero => seen0 = true,
                    Frz::One => seen1 = true,
                }
            }
            seen0 && seen1
        });
        if ok {
            count += 1;
        }
    }
    count
}
