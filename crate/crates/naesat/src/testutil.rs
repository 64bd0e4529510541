//! Shared fixtures for unit tests: small instance corpora and the
//! solution → cluster → coarsening pipeline.

use crate::frozen::{coarsen, FrozenConfig};
use crate::instance::Instance;
use crate::solutions::enumerate_solutions;

/// Sparse densities: coarsening usually frees everything.
pub(crate) fn corpus() -> Vec<Instance> {
    let mut out = Vec::new();
    for seed in 0..10 {
        out.push(Instance::sample(10, 2, 4, seed).unwrap());
        out.push(Instance::sample(9, 2, 3, seed).unwrap());
        out.push(Instance::sample(8, 3, 3, seed).unwrap());
    }
    out
}

/// Densities where coarsening leaves frozen variables behind.
pub(crate) fn dense_corpus() -> Vec<Instance> {
    let mut out = Vec::new();
    for seed in 0..20 {
        out.push(Instance::sample(9, 4, 3, seed).unwrap());
        out.push(Instance::sample(9, 5, 3, seed).unwrap());
        out.push(Instance::sample(8, 6, 3, seed).unwrap());
    }
    out
}

/// Distinct coarsening images of all solutions of an instance.
pub(crate) fn coarsened_configs(inst: &Instance) -> Vec<FrozenConfig> {
    let mut out: Vec<FrozenConfig> = Vec::new();
    for x in enumerate_solutions(inst).unwrap() {
        let frz = coarsen(inst, x).unwrap();
        if !out.contains(&frz) {
            out.push(frz);
        }
    }
    out
}

/// Build an instance from explicit clauses of (variable, literal) pairs.
pub(crate) fn clause_instance(
    n: usize,
    d: usize,
    k: usize,
    clauses: &[Vec<(usize, u8)>],
) -> Instance {
    let mut next = (0..n).map(|v| v * d).collect::<Vec<_>>();
    let mut matching = vec![0u32; n * d];
    let mut literals = vec![0u8; clauses.len() * k];
    for (a, cl) in clauses.iter().enumerate() {
        assert_eq!(cl.len(), k);
        for (s, &(v, lit)) in cl.iter().enumerate() {
            let e = next[v];
            next[v] += 1;
            matching[e] = (a * k + s) as u32;
            literals[a * k + s] = lit;
        }
    }
    Instance::new(n, d, k, matching, literals).unwrap()
}

/// Mutual-forcing trios over vars 0..3·count: at value 0, clause j of a
/// trio forces its j-th member, so all members are frozen with one spare
/// slot each (at d = 4, k = 3).
fn push_trios(clauses: &mut Vec<Vec<(usize, u8)>>, count: usize) {
    for t in 0..count {
        let m = [3 * t, 3 * t + 1, 3 * t + 2];
        for j in 0..3 {
            clauses.push((0..3).map(|s| (m[s], (s == j) as u8)).collect());
        }
    }
}

/// A frozen shell of six mutual-forcing trios with a pendant free path
/// f18 – f19 – f20 hanging on two of the anchors; every other free slot
/// leads to a separating clause. The piece is a tree with 5 extensions.
pub(crate) fn pendant_tree_fixture() -> (Instance, FrozenConfig) {
    let mut clauses: Vec<Vec<(usize, u8)>> = Vec::new();
    push_trios(&mut clauses, 6);
    clauses.push(vec![(18, 0), (19, 0), (0, 0)]);
    clauses.push(vec![(19, 0), (20, 0), (3, 0)]);
    let spare = [1, 2, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17];
    let free_slot = [18, 18, 18, 19, 19, 20, 20, 20];
    for (i, &f) in free_slot.iter().enumerate() {
        clauses.push(vec![(f, 0), (spare[2 * i], 0), (spare[2 * i + 1], 1)]);
    }
    let inst = clause_instance(21, 4, 3, &clauses);
    let frz: FrozenConfig = "000000000000000000fff".parse().unwrap();
    (inst, frz)
}

/// Eight trios plus three isolated free variables, each of whose four
/// edges leads to a separating clause: three one-variable pieces with
/// two extensions apiece.
pub(crate) fn isolated_free_fixture() -> (Instance, FrozenConfig) {
    let mut clauses: Vec<Vec<(usize, u8)>> = Vec::new();
    push_trios(&mut clauses, 8);
    for (i, f) in (24..27).flat_map(|f| (0..4).map(move |_| f)).enumerate() {
        clauses.push(vec![(f, 0), (2 * i, 0), (2 * i + 1, 1)]);
    }
    let inst = clause_instance(27, 4, 3, &clauses);
    let frz: FrozenConfig = "000000000000000000000000fff".parse().unwrap();
    (inst, frz)
}
