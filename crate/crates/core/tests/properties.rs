mod common;

use gridfactors_core::factors::{base_flows, solve_angles};
use gridfactors_core::grid::{
    build_grounded_system, build_incidence, full_laplacian, grounded_laplacian, pseudo_inverse_check, BusIndex,
};
use gridfactors_core::linalg::ldl_pivots;
use gridfactors_core::multi::{woodbury_update, ModificationSet};
use gridfactors_core::oracle::{random_grid, random_split, rebuild_and_solve, Modification};
use gridfactors_core::single::{lodf_column, updated_inverse, BranchDelta};
use gridfactors_core::topology::{merge_with, split_inverse, TriConfig};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn grid_params() -> impl Strategy<Value = (u64, usize, f64)> {
    (any::<u64>(), 2usize..=25, 1.0f64..4.5)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generated_grids_are_valid((seed, n, d) in grid_params()) {
        let g = random_grid(seed, n, d);
        prop_assert_eq!(g.n_buses(), n);
        prop_assert_eq!(g.components(false).len(), 1);
        prop_assert!(g.injections().sum().abs() <= 1e-12);
        prop_assert!(g.branches().iter().all(|b| (0.5..=2.0).contains(&b.susceptance)));
    }

    #[test]
    fn incidence_and_laplacian((seed, n, d) in grid_params()) {
        let g = random_grid(seed, n, d);
        let inc = build_incidence(&g).unwrap();
        for c in inc.full.column_iter() {
            prop_assert_eq!(c.sum(), 0.0);
        }
        let b = DMatrix::from_diagonal(&g.susceptances());
        let full = &inc.full * b * inc.full.transpose();
        prop_assert!((&full - full_laplacian(&g)).amax() <= 1e-12);
        let index = BusIndex::new(&g);
        let sys = build_grounded_system(&g).unwrap();
        prop_assert!((&inc.reduced * DMatrix::from_diagonal(&g.susceptances()) * inc.reduced.transpose()
            - grounded_laplacian(&g, &index)).amax() <= 1e-12);
        let id = sys.laplacian() * sys.inverse();
        prop_assert!((id - DMatrix::identity(index.len(), index.len())).amax() <= 1e-10);
        prop_assert!(ldl_pivots(sys.laplacian()).iter().all(|&p| p > 0.0));
    }

    #[test]
    fn pseudo_inverse_agrees_up_to_shift((seed, n, d) in grid_params()) {
        let g = random_grid(seed, n, d);
        let sys = build_grounded_system(&g).unwrap();
        let p = g.injections();
        let theta = sys.index().expand(&solve_angles(&sys, &p).unwrap()).unwrap();
        let pinv = pseudo_inverse_check(&g).unwrap();
        let l = full_laplacian(&g);
        prop_assert!((&l * &pinv * &l - &l).amax() <= 1e-9);
        let diff = theta - &pinv * &p;
        let shift = diff.mean();
        prop_assert!(diff.iter().all(|v| (v - shift).abs() < 1e-9));
    }

    #[test]
    fn oracle_satisfies_kcl((seed, n, d) in grid_params()) {
        let g = random_grid(seed, n, d);
        let sol = rebuild_and_solve(&g, &Modification::None).unwrap();
        let state = base_flows(&build_grounded_system(&g).unwrap(), &g).unwrap();
        prop_assert!(state.kcl_residual(&g, &g.injections()) <= 1e-9);
        prop_assert!((sol.flows - state.flows).amax() <= 1e-12);
    }

    #[test]
    fn woodbury_m1_is_sherman_morrison((seed, n, d) in grid_params(), k in any::<prop::sample::Index>(), u in 0.1f64..2.0) {
        let g = random_grid(seed, n, d);
        let sys = build_grounded_system(&g).unwrap();
        let br = &g.branches()[k.index(g.n_branches())];
        let delta = BranchDelta::new(br.id, br.susceptance * u);
        let sm = updated_inverse(&sys, &g, delta).unwrap();
        let wb = woodbury_update(&sys, &g, &ModificationSet::new(vec![delta]).unwrap()).unwrap();
        prop_assert!((sm - wb).amax() <= 1e-12);
    }

    #[test]
    fn lodf_self_entry((seed, n, d) in grid_params()) {
        let g = random_grid(seed, n, d);
        let sys = build_grounded_system(&g).unwrap();
        let bridges = g.bridges();
        for br in g.branches().iter().filter(|b| !bridges.contains(&b.id)) {
            let col = lodf_column(&sys, &g, br.id).unwrap();
            prop_assert_eq!(col[g.branch_position(br.id).unwrap()], -1.0);
        }
    }

    #[test]
    fn split_scalar_positive_and_merge_returns((seed, n, d) in (any::<u64>(), 3usize..=25, 2.0f64..4.5)) {
        let g = random_grid(seed, n, d);
        let Some(spec) = random_split(&g, seed) else { return Ok(()) };
        let sys = build_grounded_system(&g).unwrap();
        let tri = TriConfig::from_system(&sys, &g, std::slice::from_ref(&spec)).unwrap();
        let (value, islands) = tri.bracket().unwrap();
        let connected = tri.grid_open().components(false).len() == 1;
        prop_assert_eq!(islands, !connected);
        if islands {
            return Ok(());
        }
        prop_assert!(value > 0.0);
        let open = split_inverse(&tri).unwrap();
        // Merging the coupler back gives the padded closed inverse.
        let back = merge_with(&open, &tri.couplers()[0].nu, gridfactors_core::grid::BranchId(0)).unwrap();
        prop_assert!((back - tri.closed_inverse()).amax() <= 1e-8 * tri.closed_inverse().amax());
    }

    #[test]
    fn merge_equalizes_angles((seed, n, d) in grid_params(), a in any::<prop::sample::Index>(), b in any::<prop::sample::Index>()) {
        let g = random_grid(seed, n, d);
        let (i, j) = (a.index(n), b.index(n));
        prop_assume!(i != j);
        let sys = build_grounded_system(&g).unwrap();
        let index = sys.index();
        let nu = index.nu(g.buses()[i].id, g.buses()[j].id);
        let merged = merge_with(sys.inverse(), &nu, gridfactors_core::grid::BranchId(0)).unwrap();
        let x: DVector<f64> = gridfactors_core::linalg::inv_times_nu(&merged, &nu);
        prop_assert!(x.amax() <= 1e-10 * merged.amax().max(1.0));
    }
}
