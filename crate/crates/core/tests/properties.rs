use cookiewalk::branching::{backward_process, DualProcess};
use cookiewalk::regen::{correspondence_pair, cycles, find_regenerations};
use cookiewalk::rng::{replica_env_seed, replica_rng, rng_from};
use cookiewalk::stats;
use cookiewalk::walk::{self, jump_identities, StopRule, WalkConfig};
use cookiewalk::{Environment, Site, StackModel};
use proptest::prelude::*;

fn omega() -> impl Strategy<Value = StackModel> {
    (0.05f64..0.95, 1usize..6).prop_map(|(p, m)| StackModel::omega(p, m))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn jump_identities_hold(model in omega(), n in 0i64..12, seed in any::<u64>()) {
        let cfg = WalkConfig::new(1, StopRule::HitLevel { level: n, axis: 1 })
            .with_jump_counts()
            .with_step_cap(2_000_000);
        let mut env = Environment::new(model, replica_env_seed(seed, 0)).unwrap();
        match walk::run(&mut env, &cfg, &mut replica_rng(seed, 0)) {
            Ok(t) => {
                let r = jump_identities(&t, n).unwrap();
                prop_assert_eq!(r.hitting_time, t.time);
                prop_assert_eq!(t.time % 2, n as u64 % 2);
                prop_assert!(t.time >= n as u64);
            }
            // recurrent or left-transient walks may legitimately run out of steps
            Err(walk::WalkError::StepCapExceeded { .. }) => {}
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        }
    }

    #[test]
    fn local_times_range_and_parity(model in omega(), steps in 1u64..3000, seed in any::<u64>()) {
        let cfg = WalkConfig::steps(1, steps).with_local_times().with_path();
        let mut env = Environment::new(model, replica_env_seed(seed, 1)).unwrap();
        let t = walk::run(&mut env, &cfg, &mut replica_rng(seed, 1)).unwrap();
        prop_assert_eq!(t.total_local_time().unwrap(), steps + 1);
        prop_assert_eq!(t.range as i64, t.sup - t.inf + 1);
        prop_assert_eq!(t.position.coord(1).rem_euclid(2) as u64, steps % 2);
        let lmax = (t.inf..=t.sup).map(|x| t.local_time(&Site::line(x)).unwrap()).max().unwrap();
        prop_assert_eq!(lmax, t.max_local_time);
    }

    #[test]
    fn range_is_visited_sites_in_two_dims(p in 0.0f64..=1.0, steps in 1u64..2000, seed in any::<u64>()) {
        let model = StackModel::Bw { dim: 2, p };
        let cfg = WalkConfig::steps(2, steps).with_local_times();
        let mut env = Environment::new(model, replica_env_seed(seed, 2)).unwrap();
        let t = walk::run(&mut env, &cfg, &mut replica_rng(seed, 2)).unwrap();
        prop_assert_eq!(t.range as usize, t.local_times.as_ref().unwrap().len());
        prop_assert_eq!(t.total_local_time().unwrap(), steps + 1);
    }

    #[test]
    fn reruns_are_identical(model in omega(), seed in any::<u64>()) {
        let cfg = WalkConfig::steps(1, 500).with_path();
        let mut env = Environment::new(model, 0).unwrap();
        env.reset(seed);
        let a = walk::run(&mut env, &cfg, &mut rng_from(seed, &[1])).unwrap();
        env.reset(seed);
        let b = walk::run(&mut env, &cfg, &mut rng_from(seed, &[1])).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn dual_hitting_time_parity(p in 0.55f64..0.95, m in 3usize..7, n in 1u64..40, seed in any::<u64>()) {
        let dual = DualProcess::new(&StackModel::omega(p, m)).unwrap();
        let t = dual.hitting_time(n, &mut rng_from(seed, &[]));
        prop_assert!(t >= n);
        prop_assert_eq!(t % 2, n % 2);
    }

    #[test]
    fn regeneration_cycles_have_parity(seed in any::<u64>()) {
        let cfg = WalkConfig::steps(1, 20_000).with_path();
        let mut env = Environment::new(StackModel::omega(0.8, 5), replica_env_seed(seed, 3)).unwrap();
        let t = walk::run(&mut env, &cfg, &mut replica_rng(seed, 3)).unwrap();
        let taus = find_regenerations(&t, &[1.0], None).unwrap();
        let (_, cyc) = cycles(&t, &[1.0], &taus).unwrap();
        for c in cyc {
            prop_assert!(correspondence_pair(c.duration, c.displacement as i64).is_ok());
        }
    }
}

#[test]
fn backward_vector_starts_at_zero() {
    let cfg = WalkConfig::new(1, StopRule::HitLevel { level: 5, axis: 1 }).with_jump_counts();
    for i in 0..200 {
        let mut env = Environment::new(StackModel::omega(0.8, 2), replica_env_seed(4, i)).unwrap();
        let t = walk::run(&mut env, &cfg, &mut replica_rng(4, i)).unwrap();
        let v = backward_process(&t, 5).unwrap();
        assert_eq!(v.len(), 6);
        // no down-jumps from level n happen before T_n
        assert_eq!(v[0], 0);
    }
}

#[test]
fn dual_and_direct_hitting_times_agree_in_law() {
    let model = StackModel::omega(0.8, 3);
    let n = 4;
    let cfg = WalkConfig::new(1, StopRule::HitLevel { level: n as i64, axis: 1 }).with_step_cap(1 << 32);
    let direct: Vec<f64> = walk::batch(&model, &cfg, 21, 4000, 1).unwrap().iter().map(|r| r.time as f64).collect();
    let dual = DualProcess::new(&model).unwrap();
    let mut rng = rng_from(22, &[]);
    let via_dual: Vec<f64> = (0..4000).map(|_| dual.hitting_time(n, &mut rng) as f64).collect();
    let ks = stats::ks_two_sample(&direct, &via_dual).unwrap();
    assert!(ks.p_value > 0.001, "{ks:?}");
}

#[test]
fn speed_increases_with_cookie_strength() {
    let mut last = 0.0;
    for p in [0.75, 0.85, 0.95] {
        let ends = walk::batch(&StackModel::omega(p, 6), &WalkConfig::steps(1, 20_000), 8, 60, 1).unwrap();
        let v = stats::mean(&ends.iter().map(|r| r.x() as f64 / 20_000.0).collect::<Vec<_>>());
        assert!(v > last, "p = {p}: {v} <= {last}");
        last = v;
    }
}
