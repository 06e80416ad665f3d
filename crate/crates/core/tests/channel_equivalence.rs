//! The cascaded-sum channel built from mapped parameters against the direct
//! `G_p diag(h_p)` product of the two links.

use proptest::prelude::*;
use rischan::channel::{cascaded_matrix, cascaded_matrix_from_params, map_cascaded, steer_upa};
use rischan::scenario::{sample_scenario, ScenarioConfig};
use rischan::tensor::{rel_err_matrix, unfold, C64};

fn small_config(l1: usize, l2: usize, m: usize, n1: usize, n2: usize) -> ScenarioConfig {
    ScenarioConfig {
        m,
        n1,
        n2,
        k: 2,
        p: 16,
        q: 6,
        l1,
        l2: vec![l2],
        l2_overestimate: 4,
        ..ScenarioConfig::desk()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cascaded_sum_equals_link_product(
        l1 in 1usize..=4, l2 in 1usize..=4, m in 5usize..=8, n1 in 2usize..=4, n2 in 2usize..=4,
        seed in any::<u64>(), p in 0usize..16,
    ) {
        let cfg = small_config(l1, l2, m, n1, n2);
        let sc = sample_scenario(&cfg, seed);
        let n = (n1 * n2) as f64;
        for ue in &sc.ues {
            // unit-norm steering scale: the Hadamard product of two RIS
            // responses carries an extra 1/N
            let direct = cascaded_matrix(&sc.bs, ue, p, m, n1, n2) * C64::new(n, 0.0);
            let params = cascaded_matrix_from_params(&map_cascaded(&sc.bs, ue), p, m, n1, n2);
            prop_assert!(rel_err_matrix(&direct, &params) < 1e-12);
        }
    }

    #[test]
    fn channel_tensor_slices_match_cascaded_sum(l1 in 1usize..=4, l2 in 1usize..=4, seed in any::<u64>()) {
        let cfg = small_config(l1, l2, 6, 3, 3);
        let sc = sample_scenario(&cfg, seed);
        let c = sc.cascaded(0);
        let t = c.channel_kruskal(cfg.p, cfg.m, cfg.n1, cfg.n2).to_dense();
        // mode-2 unfolding column i + P k holds subcarrier i, RIS element k;
        // the delay factor carries the 1/P steering scale
        let y2 = unfold(&t, 2) * C64::new(cfg.p as f64, 0.0);
        for p in [0, 5, cfg.p - 1] {
            let h = cascaded_matrix_from_params(&c, p, cfg.m, cfg.n1, cfg.n2);
            let slice = rischan::tensor::CMatrix::from_fn(cfg.m, 9, |i, k| y2[(i, p + cfg.p * k)]);
            prop_assert!(rel_err_matrix(&slice, &h) < 1e-12);
        }
    }

    #[test]
    fn hadamard_of_upa_responses_adds_angles(
        n1 in 1usize..=6, n2 in 1usize..=6,
        x1 in -1.0f64..1.0, x2 in -1.0f64..1.0, y1 in -1.0f64..1.0, y2 in -1.0f64..1.0,
    ) {
        let a = steer_upa(n1, n2, x1, x2).component_mul(&steer_upa(n1, n2, y1, y2));
        let b = steer_upa(n1, n2, x1 + y1, x2 + y2) / C64::new((n1 * n2) as f64, 0.0);
        prop_assert!((a - &b).norm() <= 1e-12 * b.norm());
    }
}
