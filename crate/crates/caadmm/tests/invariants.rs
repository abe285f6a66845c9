mod common;

use std::sync::Arc;

use caadmm::admm::{compute_residuals, AdmmSession};
use caadmm::probgen::{generate, Family};
use caadmm::qp::{preprocess, scale_constraints, scale_objective};
use caadmm::rl::{ReplayBuffer, Transition};
use caadmm::{AdmmSettings, QpProblem};
use common::suites::transform;
use common::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn instance(family: usize, seed: u64) -> QpProblem {
    let family = Family::ALL[family % Family::ALL.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, m) = small_size(family, &mut rng);
    generate(family, n, m, seed).unwrap().problem
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| {
            if x.is_infinite() || y.is_infinite() {
                x == y
            } else {
                (x - y).abs() <= tol * (1.0 + x.abs().max(y.abs()))
            }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn rescaling_a_preprocessed_problem_is_a_no_op(family in 0usize..8, seed in any::<u64>()) {
        let pre = preprocess(&instance(family, seed)).unwrap();
        let (p, q, s) = scale_objective(&pre.p, &pre.q);
        prop_assert_eq!(s, 1.0);
        prop_assert_eq!(p, pre.p.clone());
        prop_assert_eq!(q, pre.q.clone());
        let (a, l, u, rows) = scale_constraints(&pre.a, &pre.l, &pre.u);
        prop_assert!(rows.iter().all(|&r| r == 1.0));
        prop_assert_eq!(a, pre.a.clone());
        prop_assert_eq!(l, pre.l.clone());
        prop_assert_eq!(u, pre.u.clone());
    }

    #[test]
    fn preprocessing_removes_positive_rescaling(
        family in 0usize..8,
        seed in any::<u64>(),
        log_c in -3.0f64..3.0,
        log_d in proptest::collection::vec(-3.0f64..3.0, 64),
    ) {
        let prob = instance(family, seed);
        let d: Vec<f64> = (0..prob.m).map(|i| 10f64.powf(log_d[i % log_d.len()])).collect();
        let a = preprocess(&prob).unwrap();
        let b = preprocess(&transform(&prob, 10f64.powf(log_c), &d)).unwrap();
        let dense = |m: &caadmm::SparseMatrix| m.to_dense().concat();
        prop_assert!(close(&dense(&a.p), &dense(&b.p), 1e-12));
        prop_assert!(close(&a.q, &b.q, 1e-12));
        prop_assert!(close(&dense(&a.a), &dense(&b.a), 1e-12));
        prop_assert!(close(&a.l, &b.l, 1e-12));
        prop_assert!(close(&a.u, &b.u, 1e-12));
    }

    #[test]
    fn iterates_stay_in_the_box_and_residuals_match_their_definition(
        family in 0usize..8,
        seed in any::<u64>(),
        log_rho in -2.0f64..2.0,
        steps in 1usize..30,
    ) {
        let pre = Arc::new(preprocess(&instance(family, seed)).unwrap());
        let settings = AdmmSettings { rho_init: 10f64.powf(log_rho), ..AdmmSettings::default() };
        let mut session = AdmmSession::new(pre.clone(), settings, None).unwrap();
        let (p, a) = (pre.p.to_dense(), pre.a.to_dense());
        for _ in 0..steps {
            session.run_iterations(1).unwrap();
            let st = session.state();
            for i in 0..pre.m {
                prop_assert!(st.z[i] >= pre.l[i] && st.z[i] <= pre.u[i]);
            }
            // dense recomputation of Ax − z and Px + q + Aᵀy
            let rp: Vec<f64> = (0..pre.m)
                .map(|i| (0..pre.n).map(|j| a[i][j] * st.x[j]).sum::<f64>() - st.z[i])
                .collect();
            let rd: Vec<f64> = (0..pre.n)
                .map(|j| {
                    (0..pre.n).map(|k| p[j][k] * st.x[k]).sum::<f64>()
                        + pre.q[j]
                        + (0..pre.m).map(|i| a[i][j] * st.y[i]).sum::<f64>()
                })
                .collect();
            prop_assert!(close(&st.r_primal, &rp, 1e-12));
            prop_assert!(close(&st.r_dual, &rd, 1e-12));
            let (rp2, rd2) = compute_residuals(st, &pre);
            prop_assert_eq!(&rp2, &st.r_primal);
            prop_assert_eq!(&rd2, &st.r_dual);
        }
    }

    #[test]
    fn replay_buffer_keeps_the_newest_transitions_in_order(
        capacity in 1usize..20,
        pushes in 0usize..60,
        batch in 1usize..10,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let obs = random_observation(&mut rng, Family::RandomQp, (1, 2), 2);
        let mut buf = ReplayBuffer::new(capacity, seed).unwrap();
        for k in 0..pushes {
            buf.push(Transition {
                obs: obs.clone(),
                action: vec![0.0],
                reward: k as f64,
                next_obs: obs.clone(),
                done: false,
            });
        }
        prop_assert_eq!(buf.len(), pushes.min(capacity));
        let kept: Vec<f64> = buf.iter().map(|t| t.reward).collect();
        let expected: Vec<f64> = (pushes.saturating_sub(capacity)..pushes).map(|k| k as f64).collect();
        prop_assert_eq!(&kept, &expected);
        if pushes == 0 {
            prop_assert!(buf.sample(batch).is_err());
        } else {
            let drawn = buf.sample(batch).unwrap();
            prop_assert_eq!(drawn.len(), batch);
            prop_assert!(drawn.iter().all(|t| expected.contains(&t.reward)));
        }
    }
}
