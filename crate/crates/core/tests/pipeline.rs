use proptest::prelude::*;

use swmcrt::ci::{invert_combined, CIConfig};
use swmcrt::combine::{combine_result, CombineMethod, Sidedness};
use swmcrt::design::{sample_crossover_times, DesignSpec};
use swmcrt::io::{read_trial_csv, write_trial_csv, TrialFile};
use swmcrt::mcrt::{build_groups, build_schedule, run_mcrts, TestConfig};
use swmcrt::seed::rng_from_seed;
use swmcrt::sim::{gen_outcomes, Variances};

#[test]
fn generated_trial_survives_csv_and_analysis() {
    let mut rng = rng_from_seed(31);
    let data = gen_outcomes(120, 6, &[0.0, 0.5], 0, &Variances::default(), &mut rng).unwrap();
    let file = TrialFile { units: (0..120).map(|i| format!("unit{i}")).collect(), data };
    let mut buf = Vec::new();
    write_trial_csv(&mut buf, &file).unwrap();
    let back = read_trial_csv(buf.as_slice()).unwrap();
    assert_eq!(back, file);

    let cfg = TestConfig { budget: 499, seed: 5, ..Default::default() };
    let r = run_mcrts(&back.data, 1, &cfg).unwrap();
    assert!(!r.tests.is_empty() && r.skipped.is_empty());
    let p = combine_result(&r, CombineMethod::WeightedZ, Sidedness::Greater).unwrap().p;
    assert!(p < 0.01, "p = {p}");

    let ci = invert_combined(&back.data, 1, &CIConfig { budget: 499, seed: 5, ..Default::default() }, CombineMethod::WeightedZ)
        .unwrap();
    assert!(ci.contains(0.5), "{ci:?}");
    assert!(!ci.contains(0.0), "{ci:?}");
}

#[test]
fn same_seed_same_answer() {
    let run = || {
        let mut rng = rng_from_seed(77);
        let data = gen_outcomes(80, 5, &[0.2], 2, &Variances::default(), &mut rng).unwrap();
        let r = run_mcrts(&data, 0, &TestConfig { budget: 199, seed: 3, ..Default::default() }).unwrap();
        combine_result(&r, CombineMethod::Fisher, Sidedness::TwoSided).unwrap().p
    };
    assert_eq!(run().to_bits(), run().to_bits());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // Each treated arm is one time step and each control arm a set of later
    // steps from the same subset, so the pools of any two tests are disjoint
    // or one contains the other.
    #[test]
    fn test_pools_are_nested(n_times in 2usize..10, lag_frac in 0.0f64..1.0, seed in any::<u64>()) {
        let lag = ((n_times - 1) as f64 * lag_frac) as usize;
        let lag = lag.min(n_times - 2);
        let spec = DesignSpec::balanced(n_times * 3, n_times).unwrap();
        let a = sample_crossover_times(&spec, &mut rng_from_seed(seed));
        let schedule = build_schedule(n_times, lag).unwrap();
        let groups = build_groups(&a, &schedule).unwrap();
        for g in &groups {
            prop_assert_eq!(g.outcome_time, g.k + lag);
            prop_assert!(g.treated.iter().all(|&i| a.get(i) == g.k));
            prop_assert!(g.control.iter().all(|&i| a.get(i) > g.k + lag));
        }
        for (i, g) in groups.iter().enumerate() {
            for h in &groups[i + 1..] {
                let (pg, ph) = (g.pool(), h.pool());
                let overlap = pg.intersection(&ph).count();
                prop_assert!(overlap == 0 || overlap == pg.len() || overlap == ph.len());
            }
        }
    }
}
