//! Random (d,k)-regular NAE-SAT instances.
//!
//! An instance is a bipartite factor graph on `n` variables of degree `d`
//! and `m = nd/k` clauses of degree `k`, realized as a uniform bijection
//! ("matching") between variable half-edges and clause half-edges, plus an
//! i.i.d. uniform literal bit per clause half-edge. Multi-edges are allowed:
//! the configuration model is taken literally.
//!
//! Edges are addressed everywhere by their variable-side half-edge index
//! `e = v*d + j ∈ [n*d]`; the matched clause half-edge is `a*k + j'`.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("n*d = {nd} is not divisible by k = {k}")]
    Divisibility { nd: usize, k: usize },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("malformed instance JSON: {0}")]
    Parse(String),
    #[error("matching is not a bijection of half-edges")]
    NotBijective,
    #[error("array has wrong length: {field} has {got}, expected {expected}")]
    Shape {
        field: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("literal out of range (must be 0 or 1)")]
    LiteralRange,
}

/// Edge identifier: the variable-side half-edge index `v*d + j`.
pub type EdgeId = usize;

#[derive(Debug, Clone, Serialize)]
pub struct Instance {
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub m: usize,
    /// variable half-edge -> clause half-edge
    matching: Vec<u32>,
    /// literal bit per clause half-edge
    literals: Vec<u8>,
    /// clause half-edge -> variable half-edge (derived)
    #[serde(skip)]
    inverse: Vec<u32>,
}

impl Instance {
    pub fn new(
        n: usize,
        d: usize,
        k: usize,
        matching: Vec<u32>,
        literals: Vec<u8>,
    ) -> Result<Instance, InstanceError> {
        if n == 0 || d == 0 || k == 0 {
            return Err(InstanceError::Parameter("n, d, k must be positive".into()));
        }
        let nd = n * d;
        if nd % k != 0 {
            return Err(InstanceError::Divisibility { nd, k });
        }
        if matching.len() != nd {
            return Err(InstanceError::Shape {
                field: "matching",
                got: matching.len(),
                expected: nd,
            });
        }
        if literals.len() != nd {
            return Err(InstanceError::Shape {
                field: "literals",
                got: literals.len(),
                expected: nd,
            });
        }
        if literals.iter().any(|&b| b > 1) {
            return Err(InstanceError::LiteralRange);
        }
        let mut inverse = vec![u32::MAX; nd];
        for (e, &c) in matching.iter().enumerate() {
            let c = c as usize;
            if c >= nd || inverse[c] != u32::MAX {
                return Err(InstanceError::NotBijective);
            }
            inverse[c] = e as u32;
        }
        Ok(Instance {
            n,
            d,
            k,
            m: nd / k,
            matching,
            literals,
            inverse,
        })
    }

    /// Variable incident to edge `e`.
    #[inline]
    pub fn v_of(&self, e: EdgeId) -> usize {
        e / self.d
    }

    /// Clause incident to edge `e`.
    #[inline]
    pub fn a_of(&self, e: EdgeId) -> usize {
        self.matching[e] as usize / self.k
    }

    /// Clause half-edge matched to edge `e`.
    #[inline]
    pub fn clause_slot(&self, e: EdgeId) -> usize {
        self.matching[e] as usize
    }

    /// Literal bit on edge `e`.
    #[inline]
    pub fn literal(&self, e: EdgeId) -> u8 {
        self.literals[self.matching[e] as usize]
    }

    /// Edges of variable `v` in slot order.
    #[inline]
    pub fn var_edges(&self, v: usize) -> std::ops::Range<EdgeId> {
        v * self.d..(v + 1) * self.d
    }

    /// Edges of clause `a` in clause-slot order.
    pub fn clause_edges(&self, a: usize) -> impl Iterator<Item = EdgeId> + '_ {
        (a * self.k..(a + 1) * self.k).map(move |c| self.inverse[c] as usize)
    }

    pub fn num_edges(&self) -> usize {
        self.n * self.d
    }

    /// Uniform instance from a seeded PRNG; identical seeds give identical
    /// instances byte for byte.
    pub fn sample(n: usize, d: usize, k: usize, seed: u64) -> Result<Instance, InstanceError> {
        if n == 0 || d == 0 || k == 0 {
            return Err(InstanceError::Parameter("n, d, k must be positive".into()));
        }
        let nd = n * d;
        if nd % k != 0 {
            return Err(InstanceError::Divisibility { nd, k });
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut matching: Vec<u32> = (0..nd as u32).collect();
        matching.shuffle(&mut rng);
        let literals: Vec<u8> = (0..nd).map(|_| rng.gen_range(0..2u8)).collect();
        Instance::new(n, d, k, matching, literals)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&SerdeInstance {
            n: self.n,
            d: self.d,
            k: self.k,
            matching: self.matching.clone(),
            literals: self.literals.clone(),
        })
        .expect("instance serialization cannot fail")
    }

    pub fn parse_json(text: &str) -> Result<Instance, InstanceError> {
        let raw: SerdeInstance =
            serde_json::from_str(text).map_err(|e| InstanceError::Parse(e.to_string()))?;
        Instance::new(raw.n, raw.d, raw.k, raw.matching, raw.literals)
    }

    /// Enumerate anchored ζ-cycles up to length `l_max`, returning counts
    /// X(ζ) per literal pattern ζ ∈ {0,1}^{2l}. Patterns with zero count are
    /// omitted.
    pub fn enumerate_zeta_cycles(&self, l_max: usize) -> BTreeMap<Vec<u8>, u64> {
        let mut counts = BTreeMap::new();
        for cyc in self.list_zeta_cycles(l_max) {
            *counts.entry(cyc.zeta).or_insert(0u64) += 1;
        }
        counts
    }

    /// All anchored ζ-cycle locations with l ≤ l_max.
    ///
    /// A location is a cycle a₁, v₁, a₂, v₂, …, a_l, v_l (back to a₁) on
    /// distinct clauses and distinct variables, two distinct half-edges per
    /// vertex, anchored so that a₁ is the smallest clause and its two cycle
    /// slots satisfy e⁰ < e¹. The walk departs each vertex via its e¹
    /// half-edge and lands on the next vertex's e⁰ half-edge.
    pub fn list_zeta_cycles(&self, l_max: usize) -> Vec<ZetaCycle> {
        assert!(l_max >= 1, "l_max must be at least 1");
        let mut out = Vec::new();
        let mut walk = WalkState {
            inst: self,
            clause_used: vec![false; self.m],
            var_used: vec![false; self.n],
            clauses: Vec::new(),
            vars: Vec::new(),
            // per step: (landing clause half-edge e⁰_a, departing e¹_a,
            //            landing variable half-edge e⁰_v, departing e¹_v)
            steps: Vec::new(),
            out: &mut out,
            l_max,
        };
        for a1 in 0..self.m {
            walk.clause_used[a1] = true;
            walk.clauses.push(a1);
            for j0 in 0..self.k {
                // Anchoring: e⁰ < e¹ at a₁.
                for j1 in j0 + 1..self.k {
                    let land = a1 * self.k + j0;
                    let depart = a1 * self.k + j1;
                    walk.extend(land, land, depart);
                }
            }
            walk.clauses.pop();
            walk.clause_used[a1] = false;
        }
        out
    }
}

struct WalkState<'a> {
    inst: &'a Instance,
    clause_used: Vec<bool>,
    var_used: Vec<bool>,
    clauses: Vec<usize>,
    vars: Vec<usize>,
    steps: Vec<(usize, usize, usize, usize)>,
    out: &'a mut Vec<ZetaCycle>,
    l_max: usize,
}

impl WalkState<'_> {
    /// Continue the walk from the current clause. `target` is a₁'s landing
    /// clause half-edge, which the final variable step must hit to close the
    /// cycle; `cl_land`/`cl_depart` are the current clause's slots.
    fn extend(&mut self, target: usize, cl_land: usize, cl_depart: usize) {
        let inst = self.inst;
        let e0_v = inst.inverse[cl_depart] as usize;
        let v = e0_v / inst.d;
        if self.var_used[v] {
            return;
        }
        self.var_used[v] = true;
        self.vars.push(v);
        for j in 0..inst.d {
            let e1_v = v * inst.d + j;
            if e1_v == e0_v {
                continue;
            }
            let next_land = inst.matching[e1_v] as usize;
            let a_next = next_land / inst.k;
            if next_land == target {
                // Close the cycle back to a₁'s landing slot.
                self.steps.push((cl_land, cl_depart, e0_v, e1_v));
                self.emit();
                self.steps.pop();
            }
            // Extend to a new clause if length budget remains.
            if self.clauses.len() < self.l_max
                && a_next > self.clauses[0]
                && !self.clause_used[a_next]
            {
                self.clause_used[a_next] = true;
                self.clauses.push(a_next);
                self.steps.push((cl_land, cl_depart, e0_v, e1_v));
                for j2 in 0..inst.k {
                    let depart2 = a_next * inst.k + j2;
                    if depart2 == next_land {
                        continue;
                    }
                    self.extend(target, next_land, depart2);
                }
                self.steps.pop();
                self.clauses.pop();
                self.clause_used[a_next] = false;
            }
        }
        self.vars.pop();
        self.var_used[v] = false;
    }

    fn emit(&mut self) {
        let inst = self.inst;
        let l = self.clauses.len();
        // ζ_t for t = 1..2l, stored at zeta[t-1]; index 0 wraps to 2l.
        // Clause a_i carries literals ζ_{2(i-1)} on e⁰ and ζ_{2(i-1)+1} on e¹.
        let mut zeta = vec![0u8; 2 * l];
        for (i, &(cl_land, cl_depart, _, _)) in self.steps.iter().enumerate() {
            let t0 = 2 * i; // 1-based text index 2(i-1); 0 wraps to 2l
            let slot0 = if t0 == 0 { 2 * l - 1 } else { t0 - 1 };
            zeta[slot0] = inst.literals[cl_land];
            zeta[2 * i] = inst.literals[cl_depart];
        }
        self.out.push(ZetaCycle {
            l,
            zeta,
            clauses: self.clauses.clone(),
            vars: self.vars.clone(),
            steps: self.steps.clone(),
        });
    }
}

/// One anchored ζ-cycle location.
#[derive(Debug, Clone, Serialize)]
pub struct ZetaCycle {
    pub l: usize,
    /// Literal pattern, zeta[t-1] = ζ_t for t = 1..2l.
    pub zeta: Vec<u8>,
    pub clauses: Vec<usize>,
    pub vars: Vec<usize>,
    /// Per step i: (e⁰_{a_i}, e¹_{a_i}, e⁰_{v_i}, e¹_{v_i}); clause slots are
    /// clause half-edge ids, variable slots are edge ids.
    pub steps: Vec<(usize, usize, usize, usize)>,
}

/// Expected number of ζ-cycles: μ(ζ) = (2l)^{-1} 2^{-2l} (k-1)^l (d-1)^l,
/// the same for every ζ of length l.
pub fn mu(l: usize, k: usize, d: usize) -> f64 {
    assert!(l >= 1 && k >= 1 && d >= 1);
    let num = ((k - 1) as f64).powi(l as i32) * ((d - 1) as f64).powi(l as i32);
    num / (2.0 * l as f64 * 4f64.powi(l as i32))
}

#[derive(Serialize, Deserialize)]
struct SerdeInstance {
    n: usize,
    d: usize,
    k: usize,
    matching: Vec<u32>,
    literals: Vec<u8>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampling_is_deterministic_and_valid() {
        let a = Instance::sample(6, 3, 3, 7).unwrap();
        let b = Instance::sample(6, 3, 3, 7).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        let c = Instance::sample(6, 3, 3, 8).unwrap();
        assert_ne!(a.to_json(), c.to_json());
        // degrees and bijectivity
        assert_eq!(a.m, 6);
        for v in 0..a.n {
            assert_eq!(a.var_edges(v).len(), 3);
        }
        let mut seen = vec![false; a.num_edges()];
        for aa in 0..a.m {
            for e in a.clause_edges(aa) {
                assert!(!seen[e]);
                seen[e] = true;
                assert_eq!(a.a_of(e), aa);
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn divisibility_and_shape_errors() {
        assert!(matches!(
            Instance::sample(5, 3, 4, 0),
            Err(InstanceError::Divisibility { .. })
        ));
        let err = Instance::new(1, 2, 2, vec![0, 1], vec![0]).unwrap_err();
        assert!(matches!(
            err,
            InstanceError::Shape {
                field: "literals",
                ..
            }
        ));
        let err = Instance::new(1, 2, 2, vec![0, 0], vec![0, 1]).unwrap_err();
        assert!(matches!(err, InstanceError::NotBijective));
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let inst = Instance::sample(8, 3, 4, 123).unwrap();
        let text = inst.to_json();
        let back = Instance::parse_json(&text).unwrap();
        assert_eq!(text, back.to_json());
    }

    #[test]
    fn double_edge_instance_has_one_cycle() {
        // n=1, d=2, k=2: both matchings form a double edge.
        for matching in [vec![0u32, 1], vec![1u32, 0]] {
            for lits in [[0u8, 0], [0, 1], [1, 0], [1, 1]] {
                let inst = Instance::new(1, 2, 2, matching.clone(), lits.to_vec()).unwrap();
                let counts = inst.enumerate_zeta_cycles(3);
                let total: u64 = counts.values().sum();
                assert_eq!(total, 1, "exactly one anchored cycle");
                // ζ = (ζ₁, ζ₂) with ζ₁ the literal on e¹ (slot 1) and
                // ζ₂ = ζ₀ the literal on e⁰ (slot 0).
                let zeta = counts.keys().next().unwrap().clone();
                assert_eq!(zeta, vec![lits[1], lits[0]]);
            }
        }
    }

    #[test]
    fn mu_examples() {
        assert!((mu(1, 3, 2) - 0.25).abs() < 1e-15);
        assert!((mu(1, 2, 2) - 0.125).abs() < 1e-15);
        assert!((mu(2, 3, 3) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn cycles_have_distinct_vertices_and_anchoring() {
        let inst = Instance::sample(30, 3, 3, 99).unwrap();
        for cyc in inst.list_zeta_cycles(3) {
            let mut cl = cyc.clauses.clone();
            cl.sort_unstable();
            cl.dedup();
            assert_eq!(cl.len(), cyc.clauses.len(), "distinct clauses");
            let mut vs = cyc.vars.clone();
            vs.sort_unstable();
            vs.dedup();
            assert_eq!(vs.len(), cyc.vars.len(), "distinct variables");
            assert_eq!(
                *cyc.clauses.iter().min().unwrap(),
                cyc.clauses[0],
                "anchor is min clause"
            );
            let (land, depart, _, _) = cyc.steps[0];
            assert!(land < depart, "anchor slot order");
            assert_eq!(cyc.zeta.len(), 2 * cyc.l);
        }
    }
}
