mod common;

use ctxbai::algorithms::{run_algo, Algo, RunConfig};
use ctxbai::env::{gen_random_instance, GenConstraints, RngStream};
use ctxbai::geometry::{hull_membership, ray_exit};
use ctxbai::optim::{nonsep_objective, nonsep_root, sep_objective, solve_nonsep_weights, SepOptions, SepProblem};
use ctxbai::stopping::{c_g, g_fn, glr_nonsep, glr_sep};
use ctxbai::{ContextMatrix, EmpiricalState, Instance, MeanSpec, Setting};
use proptest::prelude::*;

use common::sup_dist;

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

fn column(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05f64..1.0, k).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.iter().map(|x| x / s).collect()
    })
}

fn matrix(k: usize, n: usize) -> impl Strategy<Value = ContextMatrix> {
    prop::collection::vec(column(k), n).prop_map(move |cols| {
        let rows: Vec<Vec<f64>> = (0..k).map(|j| cols.iter().map(|c| c[j]).collect()).collect();
        ContextMatrix::from_rows(&rows).unwrap()
    })
}

fn sizes() -> impl Strategy<Value = (usize, usize)> {
    (1usize..=4, 2usize..=5)
}

fn separator_instance() -> impl Strategy<Value = Instance> {
    // a single context gives every arm the same reward
    (2usize..=4, 2usize..=5).prop_flat_map(|(k, n)| {
        (matrix(k, n), prop::collection::vec(-3.0f64..3.0, k))
            .prop_filter_map("tied best arm", |(a, mu)| Instance::new(a, MeanSpec::Separator(mu)).ok())
    })
}

fn nonsep_instance() -> impl Strategy<Value = Instance> {
    sizes().prop_flat_map(|(k, n)| {
        (matrix(k, n), prop::collection::vec(prop::collection::vec(-3.0f64..3.0, n), k))
            .prop_filter_map("tied best arm", |(a, rows)| {
                let mu = MeanSpec::non_separator_from_rows(&rows).ok()?;
                Instance::new(a, mu).ok()
            })
    })
}

fn gap_vector() -> impl Strategy<Value = Vec<f64>> {
    (2usize..=8).prop_flat_map(|n| {
        (0..n, prop::collection::vec(0.01f64..3.0, n)).prop_map(|(best, mut g)| {
            g[best] = 0.0;
            g
        })
    })
}

fn post_init_state() -> impl Strategy<Value = (ContextMatrix, EmpiricalState)> {
    (1usize..=3, 2usize..=4).prop_flat_map(|(k, n)| {
        (
            matrix(k, n),
            prop::collection::vec(1u64..60, k * n),
            prop::collection::vec(-2.0f64..2.0, k * n),
        )
            .prop_map(move |(a, counts, means)| {
                let sums = counts.iter().zip(&means).map(|(c, m)| *c as f64 * m).collect();
                (a, EmpiricalState::from_cells(k, n, counts, sums).unwrap())
            })
    })
}

proptest! {
    #![proptest_config(config(128))]

    #[test]
    fn rewards_ignore_context_labels(
        inst in prop_oneof![separator_instance(), nonsep_instance()],
        seed in any::<u64>(),
    ) {
        let mut perm: Vec<usize> = (0..inst.k()).collect();
        let mut rng = RngStream::new(seed, 0);
        for i in (1..perm.len()).rev() {
            perm.swap(i, rand::Rng::random_range(&mut rng, 0..=i));
        }
        let permuted = Instance::new(inst.a().permute_contexts(&perm), inst.mu().permute_contexts(&perm)).unwrap();
        prop_assert!(sup_dist(&permuted.expected_rewards(), &inst.expected_rewards()) <= 1e-12);
        prop_assert_eq!(permuted.best_arm(), inst.best_arm());
    }

    #[test]
    fn gaps_vanish_only_at_the_best_arm(inst in prop_oneof![separator_instance(), nonsep_instance()]) {
        let gaps = inst.gaps();
        for (i, g) in gaps.iter().enumerate() {
            if i == inst.best_arm() {
                prop_assert_eq!(*g, 0.0);
            } else {
                prop_assert!(*g > 0.0);
            }
        }
    }

    #[test]
    fn marginals_hold_after_every_update(
        (k, n) in (1usize..=4, 2usize..=5),
        steps in prop::collection::vec((0usize..5, 0usize..4, -5.0f64..5.0), 1..200),
    ) {
        let mut s = EmpiricalState::new(k, n);
        for (t, &(arm, ctx, y)) in steps.iter().enumerate() {
            let (arm, ctx) = (arm % n, ctx % k);
            let before = s.joint_count(ctx, arm);
            s.record(arm, ctx, y);
            prop_assert_eq!(s.t(), t as u64 + 1);
            prop_assert_eq!(s.joint_count(ctx, arm), before + 1);
            prop_assert!(s.marginals_consistent());
            prop_assert_eq!(s.arm_counts().iter().sum::<u64>(), s.t());
            prop_assert_eq!(s.context_counts().iter().sum::<u64>(), s.t());
        }
        for j in 0..k {
            let row: u64 = (0..n).map(|i| s.joint_count(j, i)).sum();
            prop_assert_eq!(row, s.context_counts()[j]);
        }
    }

    #[test]
    fn nonsep_optimum_equalizes_challengers(gaps in gap_vector()) {
        let w = solve_nonsep_weights(&gaps).unwrap();
        let w = w.as_slice();
        let best = gaps.iter().position(|g| *g == 0.0).unwrap();
        let terms: Vec<f64> = (0..gaps.len())
            .filter(|&i| i != best)
            .map(|i| 0.5 * gaps[i] * gaps[i] * w[best] * w[i] / (w[best] + w[i]))
            .collect();
        let hi = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = terms.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assert!(hi - lo <= 1e-8 * hi.max(1.0), "{terms:?}");
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);

        let root = nonsep_root(&gaps).unwrap();
        let d_min = gaps.iter().filter(|g| **g > 0.0).cloned().fold(f64::INFINITY, f64::min);
        prop_assert!(root.root >= 2.0 / (d_min * d_min));
        prop_assert!(root.root <= (1.0 + ((gaps.len() - 1) as f64).sqrt()) / (d_min * d_min));
    }

    #[test]
    fn nonsep_weights_follow_arm_relabelling(gaps in gap_vector(), seed in any::<u64>()) {
        let n = gaps.len();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut rng = RngStream::new(seed, 1);
        for i in (1..n).rev() {
            perm.swap(i, rand::Rng::random_range(&mut rng, 0..=i));
        }
        let permuted: Vec<f64> = perm.iter().map(|&p| gaps[p]).collect();
        let w = solve_nonsep_weights(&gaps).unwrap();
        let wp = solve_nonsep_weights(&permuted).unwrap();
        for (slot, &p) in perm.iter().enumerate() {
            prop_assert!((wp.as_slice()[slot] - w.as_slice()[p]).abs() <= 1e-12);
        }
    }

    #[test]
    fn nonsep_solver_beats_uniform(gaps in gap_vector()) {
        let w = solve_nonsep_weights(&gaps).unwrap();
        let uniform = vec![1.0 / gaps.len() as f64; gaps.len()];
        prop_assert!(nonsep_objective(w.as_slice(), &gaps) >= nonsep_objective(&uniform, &gaps) - 1e-12);
    }

    #[test]
    fn glr_is_nonnegative_and_scales_with_counts((a, s) in post_init_state(), c in 2u64..20) {
        let (k, n) = (s.k(), s.n());
        let counts: Vec<u64> = (0..k * n).map(|x| s.joint_count(x / n, x % n)).collect();
        let sums: Vec<f64> = {
            let means = match s.empirical_means(Setting::NonSeparator).unwrap() {
                MeanSpec::NonSeparator { means, .. } => means,
                MeanSpec::Separator(_) => unreachable!(),
            };
            counts.iter().zip(&means).map(|(n, m)| (c * n) as f64 * m).collect()
        };
        let scaled = EmpiricalState::from_cells(k, n, counts.iter().map(|x| c * x).collect(), sums).unwrap();
        for glr in [glr_nonsep, glr_sep] {
            let base = glr(&s, &a).unwrap().lambda;
            let big = glr(&scaled, &a).unwrap().lambda;
            prop_assert!(base >= 0.0);
            prop_assert!((big - c as f64 * base).abs() <= 1e-9 * big.max(1.0), "{big} vs {c} * {base}");
        }
    }

    #[test]
    fn ray_exit_balances_and_certifies(
        (a, lambda, origin) in (1usize..=6, 2usize..=6).prop_flat_map(|(k, n)| (matrix(k, n), column(n), column(k))),
    ) {
        let through = a.mix(&lambda);
        prop_assume!(sup_dist(&origin, &through) > 1e-9);
        let r = ray_exit(&origin, &through, &a).unwrap();
        let exit = r.exit_point.as_slice();
        prop_assert!(r.scale >= 1.0);
        for j in 0..a.k() {
            let (lo, hi) = if origin[j] <= exit[j] { (origin[j], exit[j]) } else { (exit[j], origin[j]) };
            prop_assert!(lo - 1e-9 <= through[j] && through[j] <= hi + 1e-9);
        }
        prop_assert!(sup_dist(&a.mix(r.mixture.pi.as_slice()), exit) <= 1e-8);
    }

    #[test]
    fn every_column_is_in_the_hull(a in (1usize..=6, 2usize..=6).prop_flat_map(|(k, n)| matrix(k, n))) {
        for i in 0..a.n() {
            let col = a.column(i);
            let m = hull_membership(&col, &a);
            prop_assert!(m.is_some());
            prop_assert!(sup_dist(&a.mix(m.unwrap().pi.as_slice()), &col) <= 1e-8);
        }
    }

    #[test]
    fn c_g_is_below_every_probe(x in 0.01f64..40.0) {
        let cg = c_g(x);
        for i in 1..10_000 {
            let l = 0.5 + 0.5 * i as f64 / 10_000.0;
            prop_assert!(cg <= (g_fn(l).unwrap() + x) / l + 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(config(24))]

    #[test]
    fn sep_solver_certified_and_beats_uniform((k, n, seed) in (2usize..=4, 2usize..=4, any::<u64>())) {
        let inst = gen_random_instance(&GenConstraints::new(n, k), Setting::Separator, &mut RngStream::new(seed, 0)).unwrap();
        let p = SepProblem::new(inst.a(), &inst.expected_rewards()).unwrap();
        let sol = p.solve(None, SepOptions::default());
        let wz = sol.wz.as_slice();
        prop_assert!(sup_dist(&inst.a().mix(&sol.lambda), wz) <= 1e-8);
        prop_assert!(hull_membership(wz, inst.a()).is_some());
        let uniform = inst.a().mix(&vec![1.0 / n as f64; n]);
        prop_assert!(sol.objective >= sep_objective(&uniform, &inst).unwrap() - 1e-12);
        prop_assert!(sol.upper_bound >= sol.objective);
    }

    #[test]
    fn generated_instances_meet_their_constraints(
        (n, k, seed, sep) in (2usize..=6, 2usize..=4, any::<u64>(), any::<bool>()),
    ) {
        let c = GenConstraints::new(n, k);
        let kind = if sep { Setting::Separator } else { Setting::NonSeparator };
        let inst = gen_random_instance(&c, kind, &mut RngStream::new(seed, 3)).unwrap();
        prop_assert_eq!(inst.setting(), kind);
        prop_assert!(inst.a().a_min() >= c.a_min_floor);
        let (lo, hi) = inst.mean_range();
        prop_assert!(lo >= c.mu_range.0 && hi <= c.mu_range.1);
        let gaps = inst.gaps();
        prop_assert_eq!(inst.best_arm(), 0);
        for i in 1..n {
            let (glo, ghi) = c.gap_bands[i];
            prop_assert!(gaps[i] >= glo - 1e-9 && gaps[i] <= ghi + 1e-9, "arm {i}: {}", gaps[i]);
        }
        let reloaded = Instance::from_json_str(&serde_json::to_string(&inst.to_file()).unwrap(), "mem").unwrap();
        prop_assert_eq!(reloaded, inst);
    }

    #[test]
    fn stopped_runs_exceed_their_threshold((seed, algo) in (any::<u64>(), prop_oneof![Just(Algo::Nsts), Just(Algo::Sts)])) {
        let c = GenConstraints::new(3, 2);
        let inst = gen_random_instance(&c, Setting::Separator, &mut RngStream::new(seed, 5)).unwrap();
        let cfg = RunConfig::new(0.1);
        let r = run_algo(algo, &inst, &cfg, &mut RngStream::new(seed, 6)).unwrap();
        let again = run_algo(algo, &inst, &cfg, &mut RngStream::new(seed, 6)).unwrap();
        prop_assert_eq!(&r, &again);
        prop_assert!(!r.truncated);
        prop_assert!(r.final_lambda > r.final_threshold);
        prop_assert!(r.recommendation.is_some());
        let init_rounds = if algo == Algo::Nsts { 6 } else { 2 };
        prop_assert!(r.tau >= init_rounds);
    }
}
