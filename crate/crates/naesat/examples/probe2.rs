use std::time::Instant;

use naesat::bp_solver::enumerate_color_space;

fn main() {
    let which = std::env::args().nth(1).unwrap_or_default();
    match which.as_str() {
        "spaces" => {
            for trunc in 1..=6 {
                let t = Instant::now();
                let space = enumerate_color_space(9, 1590, trunc).unwrap();
                println!(
                    "k=9 d=1590 L={trunc}: dots={} hats={} ({:?})",
                    space.dots.len(),
                    space.hats.len(),
                    t.elapsed()
                );
            }
        }
        "conv" => {
            let t = Instant::now();
            let rows = naesat::cycle_effects::delta_convergence(
                9,
                1590,
                0.5,
                &[0, 0],
                &[1, 2, 3, 4, 5],
                1e-12,
                200_000,
            )
            .unwrap();
            println!("conv {:?}: {rows:?}", t.elapsed());
        }
        "poisson" => {
            let t = Instant::now();
            let rep = naesat::experiments::poisson_experiment(200, 4, 4, 2000, 3, 1, None).unwrap();
            println!(
                "poisson {:?}: max|z| = {:.3}, stats = {}",
                t.elapsed(),
                rep.max_abs_z(),
                rep.statistics.len()
            );
        }
        "wlimit" => {
            let t = Instant::now();
            let rep =
                naesat::experiments::w_limit_experiment(7, 35, 0.5, 3, 4, 100_000, 1, None)
                    .unwrap();
            println!("wlimit {:?}: max|z| = {:.3}", t.elapsed(), rep.max_abs_z());
            for s in &rep.statistics {
                println!(
                    "  {}: est={:.6} se={:.2e} target={:?} z={:?}",
                    s.name, s.estimate, s.se, s.target, s.z
                );
            }
        }
        "cyc" => {
            let t = Instant::now();
            let out = naesat::experiments::cycle_moment_experiment(
                &[8, 12, 14],
                3,
                3,
                0.5,
                3,
                naesat::experiments::ZVariant::Tr,
                &[vec![0, 0], vec![0, 1], vec![0, 0, 0, 0]],
                300,
                1,
                None,
            )
            .unwrap();
            println!("cycle-moment {:?}", t.elapsed());
            for r in &out.rows {
                println!(
                    "  n={} zeta={:?}: ratio={:.4} se={:.4} target={:.4}",
                    r.n, r.zeta, r.ratio, r.se, r.target
                );
            }
            for s in out.report.statistics.iter().filter(|s| s.name.starts_with("trend")) {
                println!("  {}: {:.4}", s.name, s.estimate);
            }
        }
        "corpus" => {
            let t = Instant::now();
            for (k, d, ns) in [
                (3usize, 2usize, vec![3usize, 6, 9, 12]),
                (3, 3, vec![3, 5, 8, 11, 14]),
                (4, 3, vec![4, 8, 12]),
            ] {
                let mut checked = 0usize;
                let mut cyclic = 0usize;
                let mut insts = 0usize;
                let mut frozen_configs = 0usize;
                for seed in 0..2000u64 {
                    let n = ns[seed as usize % ns.len()];
                    let inst = naesat::instance::Instance::sample(n, d, k, seed).unwrap();
                    insts += 1;
                    let sols = naesat::solutions::enumerate_solutions(&inst).unwrap();
                    let mut seen: Vec<naesat::frozen::FrozenConfig> = Vec::new();
                    for x in sols {
                        let frz = naesat::frozen::coarsen(&inst, x).unwrap();
                        if !seen.contains(&frz) {
                            seen.push(frz);
                        }
                    }
                    for frz in &seen {
                        if frz.num_free() < n {
                            frozen_configs += 1;
                        }
                        if naesat::frozen::free_decompose(&inst, frz).has_free_cycle() {
                            cyclic += 1;
                        } else {
                            checked += 1;
                            let brute = naesat::frozen::brute_size(&inst, frz).unwrap() as f64;
                            let sizes = naesat::weights::size_by_messages(&inst, frz).unwrap();
                            let trees: f64 = sizes.tree_weights.iter().product();
                            for (label, v) in
                                [("coloring", sizes.coloring), ("trees", trees), ("global", sizes.global)]
                            {
                                if v.round() != brute || (v - brute).abs() > 1e-6 * brute.max(1.0) {
                                    println!(
                                        "  MISMATCH {label} seed={seed} n={n}: brute={brute} got={v}"
                                    );
                                }
                            }
                        }
                    }
                }
                println!(
                    "(k={k},d={d}) {:?}: {insts} instances, {checked} acyclic, {cyclic} cyclic, {frozen_configs} with frozen vars",
                    t.elapsed()
                );
            }
        }
        "kappa" => {
            use naesat::cycle_effects::{
                kappa_identity_check, pair_space, transfer_matrices, TreeSpec,
            };
            let (k, d, trunc, lambda) = (3usize, 5usize, 2usize, 0.5f64);
            let space = enumerate_color_space(k, d, trunc).unwrap();
            let fp = naesat::bp_solver::solve_fixed_point(&space, lambda, 1e-12, 200_000, None)
                .unwrap();
            let ps = pair_space(&space, &fp.q.w, lambda).unwrap();
            let tr = transfer_matrices(&space, &ps);
            let trees = naesat::cycle_effects::enumerate_trees(k, d, 6);
            println!("{} trees with <= 6 vertices", trees.len());
            let t = Instant::now();
            for tree in &trees {
                let rep = kappa_identity_check(&space, &ps, &tr, tree, &[0, 0, 1, 1]);
                match rep {
                    Ok(r) => {
                        let worst = r
                            .kappa0_gap
                            .max(r.star_gap)
                            .max(r.cycle_gap)
                            .max(r.link_gap)
                            .max(r.conclusion_gap);
                        println!(
                            "  vars={} clauses={} worst={:.3e}",
                            r.tree_vars, r.tree_clauses, worst
                        );
                    }
                    Err(e) => println!("  ERR {e}"),
                }
            }
            println!("kappa sweep {:?}", t.elapsed());
        }
        other => eprintln!("unknown probe {other}"),
    }
}
