//! Solution sets and their cluster geometry.
//!
//! Assignments are bit-packed (variable `v` at bit `v`). Enumeration walks
//! a Gray code so each step flips one variable and updates per-clause
//! counters incrementally; clusters are the connected components of the
//! solution set under Hamming-distance-1 adjacency.

use std::collections::HashMap;
use std::io::Write;

use thiserror::Error;

use crate::instance::Instance;

#[derive(Debug, Error)]
pub enum SolutionsError {
    #[error("n = {0} exceeds the enumeration guard (30)")]
    TooLarge(usize),
    #[error("assignment word has bits above n")]
    ExtraBits,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Packed assignment: bit v holds x_v.
pub type Assignment = u32;

/// Does `x` satisfy every clause (each clause's literal values non-constant)?
pub fn is_solution(inst: &Instance, x: Assignment) -> bool {
    for a in 0..inst.m {
        let mut ones = 0usize;
        for e in inst.clause_edges(a) {
            let bit = ((x >> inst.v_of(e)) & 1) as u8 ^ inst.literal(e);
            ones += bit as usize;
        }
        if ones == 0 || ones == inst.k {
            return false;
        }
    }
    true
}

/// All solutions in lexicographic order of the bit string x₀x₁…x_{n−1}
/// (variable 0 most significant). Guarded at n ≤ 30.
pub fn enumerate_solutions(inst: &Instance) -> Result<Vec<Assignment>, SolutionsError> {
    if inst.n > 30 {
        return Err(SolutionsError::TooLarge(inst.n));
    }
    let n = inst.n;
    // ones[a] = number of edges of clause a whose literal value is 1.
    let mut ones = vec![0u16; inst.m];
    let mut bad = 0usize; // clauses currently constant
    for a in 0..inst.m {
        let mut c = 0u16;
        for e in inst.clause_edges(a) {
            c += u16::from(inst.literal(e));
        }
        ones[a] = c;
        if c == 0 || c as usize == inst.k {
            bad += 1;
        }
    }
    // flip_effect[v] = clauses of v with multiplicity: flipping v changes
    // each incident clause's ones-count by ±(current edge value flips).
    let mut sols = Vec::new();
    let mut x: Assignment = 0;
    if bad == 0 {
        sols.push(x);
    }
    let total: u64 = 1u64 << n;
    for g in 1..total {
        let v = g.trailing_zeros() as usize; // Gray code flips bit v
        let newbit = ((x >> v) & 1) ^ 1;
        x ^= 1 << v;
        for e in inst.var_edges(v) {
            let a = inst.a_of(e);
            let was = ones[a];
            let delta: i32 = if (newbit as u8) ^ inst.literal(e) == 1 {
                1
            } else {
                -1
            };
            let now = (was as i32 + delta) as u16;
            ones[a] = now;
            let was_bad = was == 0 || was as usize == inst.k;
            let now_bad = now == 0 || now as usize == inst.k;
            match (was_bad, now_bad) {
                (false, true) => bad += 1,
                (true, false) => bad -= 1,
                _ => {}
            }
        }
        if bad == 0 {
            sols.push(x);
        }
    }
    // Lexicographic on x₀x₁…: variable 0 most significant bit.
    sols.sort_unstable_by_key(|&w| w.reverse_bits());
    Ok(sols)
}

/// Connected components of the solution set under single-bit flips.
#[derive(Debug, Clone)]
pub struct ClusterDecomposition {
    /// Solutions in lexicographic order.
    pub solutions: Vec<Assignment>,
    /// cluster id per solution (parallel to `solutions`).
    pub cluster_of: Vec<usize>,
    /// per-cluster member indices into `solutions`, each sorted.
    pub clusters: Vec<Vec<usize>>,
}

impl ClusterDecomposition {
    pub fn sizes(&self) -> Vec<usize> {
        self.clusters.iter().map(|c| c.len()).collect()
    }

    /// Lexicographically smallest member of a cluster.
    pub fn representative(&self, cluster: usize) -> Assignment {
        self.solutions[self.clusters[cluster][0]]
    }
}

pub fn cluster_decompose(inst: &Instance, solutions: &[Assignment]) -> ClusterDecomposition {
    let index: HashMap<Assignment, usize> =
        solutions.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    let mut dsu = Dsu::new(solutions.len());
    for (i, &s) in solutions.iter().enumerate() {
        for v in 0..inst.n {
            if let Some(&j) = index.get(&(s ^ (1 << v))) {
                dsu.union(i, j);
            }
        }
    }
    let mut cluster_ids: HashMap<usize, usize> = HashMap::new();
    let mut cluster_of = vec![0usize; solutions.len()];
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for i in 0..solutions.len() {
        let root = dsu.find(i);
        let id = *cluster_ids.entry(root).or_insert_with(|| {
            clusters.push(Vec::new());
            clusters.len() - 1
        });
        cluster_of[i] = id;
        clusters[id].push(i);
    }
    ClusterDecomposition {
        solutions: solutions.to_vec(),
        cluster_of,
        clusters,
    }
}

/// Overlap ρ(x¹, x²) = n⁻¹ Σ_v y¹_v y²_v with y = 2x − 1.
pub fn overlap(n: usize, x1: Assignment, x2: Assignment) -> f64 {
    let mask: u32 = if n == 32 { u32::MAX } else { (1u32 << n) - 1 };
    let disagreements = ((x1 ^ x2) & mask).count_ones() as f64;
    (n as f64 - 2.0 * disagreements) / n as f64
}

/// Render an assignment as a bit string x₀x₁…x_{n−1}.
pub fn format_assignment(n: usize, x: Assignment) -> String {
    (0..n)
        .map(|v| if (x >> v) & 1 == 1 { '1' } else { '0' })
        .collect()
}

/// Write solutions as CSV: one row per solution with its cluster id.
pub fn write_solutions_csv<W: Write>(
    w: &mut W,
    n: usize,
    dec: &ClusterDecomposition,
) -> Result<(), SolutionsError> {
    writeln!(w, "solution,cluster")?;
    for (i, &s) in dec.solutions.iter().enumerate() {
        writeln!(w, "{},{}", format_assignment(n, s), dec.cluster_of[i])?;
    }
    Ok(())
}

/// Write clusters as CSV: one row per cluster (id, size, representative).
pub fn write_clusters_csv<W: Write>(
    w: &mut W,
    n: usize,
    dec: &ClusterDecomposition,
) -> Result<(), SolutionsError> {
    writeln!(w, "cluster,size,representative")?;
    for (id, members) in dec.clusters.iter().enumerate() {
        writeln!(
            w,
            "{},{},{}",
            id,
            members.len(),
            format_assignment(n, dec.solutions[members[0]])
        )?;
    }
    Ok(())
}

struct Dsu {
    parent: Vec<usize>,
}

impl Dsu {
    fn new(n: usize) -> Dsu {
        Dsu {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra] = rb;
        }
    }
}
