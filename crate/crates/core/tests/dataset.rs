use gridnse::dataset::*;
use gridnse::estimator::{gn_solve, GnSettings};
use gridnse::grid::PowerSystem;
use gridnse::matpower::{ieee118, ieee30};
use gridnse::measurement::{redundancy, Provenance};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn recipe30() -> (PowerSystem, SampleRecipe) {
    let sys = ieee30();
    let r = SampleRecipe::build(&sys, RecipeSpec::ieee30(1)).unwrap();
    (sys, r)
}

#[test]
fn zero_noise_label_equals_truth() {
    let (sys, mut r) = recipe30();
    r.spec.noise_scale = 0.0;
    for i in 0..10 {
        let s = generate_sample(&sys, &r, &mut sample_rng(1, 0, i)).unwrap();
        assert!(s.label.max_abs_diff(&s.truth) < 1e-8);
        assert!(s.measurements.provenance.iter().all(|p| *p == Provenance::Clean));
    }
}

#[test]
fn consecutive_draws_differ_and_streams_reproduce() {
    let (sys, r) = recipe30();
    let mut rng = sample_rng(2, 0, 0);
    let a = generate_sample(&sys, &r, &mut rng).unwrap();
    let b = generate_sample(&sys, &r, &mut rng).unwrap();
    assert_ne!(a.truth, b.truth);
    let again = generate_sample(&sys, &r, &mut sample_rng(2, 0, 0)).unwrap();
    assert_eq!(a, again);
}

#[test]
fn stored_labels_are_gn_solutions() {
    let (sys, r) = recipe30();
    let ds = generate_dataset(&sys, &r, SplitSizes { train: 4, val: 2, test: 2 }, 5).unwrap();
    for s in ds.train.iter().chain(&ds.val).chain(&ds.test) {
        let (x, _) = gn_solve(&sys, &s.measurements, &GnSettings::default()).unwrap();
        assert!(x.max_abs_diff(&s.label) <= 1e-8);
    }
}

#[test]
fn recipe_counts_for_both_systems() {
    let (sys, r) = recipe30();
    assert_eq!(r.measurement_count(), 122);
    let s = generate_sample(&sys, &r, &mut sample_rng(0, 0, 0)).unwrap();
    assert!((redundancy(&s.measurements, &sys) - 122.0 / 60.0).abs() < 1e-12);
    let sys118 = ieee118();
    let r118 = SampleRecipe::build(&sys118, RecipeSpec::ieee118(1)).unwrap();
    assert_eq!(r118.measurement_count(), 566);
    assert_eq!(r118.pmu_buses.len(), 7);
}

#[test]
fn save_load_round_trip_and_byte_identical_regeneration() {
    let (sys, r) = recipe30();
    let sizes = SplitSizes { train: 5, val: 2, test: 2 };
    let ds = generate_dataset(&sys, &r, sizes, 11).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    save_dataset(&sys, &ds, a.path()).unwrap();
    let ds2 = generate_dataset(&sys, &SampleRecipe::build(&sys, RecipeSpec::ieee30(1)).unwrap(), sizes, 11).unwrap();
    save_dataset(&sys, &ds2, b.path()).unwrap();
    for f in ["manifest.txt", "placement.csv", "train_measurements.csv", "train_labels.csv", "test_truth.csv"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let (_, loaded) = load_dataset(a.path()).unwrap();
    assert_eq!(loaded, ds);
    let manifest = std::fs::read_to_string(a.path().join("manifest.txt")).unwrap();
    assert!(manifest.contains("measurements_per_sample=122"));
}

#[test]
fn tampered_dataset_is_rejected() {
    let (sys, r) = recipe30();
    let ds = generate_dataset(&sys, &r, SplitSizes { train: 2, val: 1, test: 1 }, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&sys, &ds, dir.path()).unwrap();
    let path = dir.path().join("manifest.txt");
    let text = std::fs::read_to_string(&path).unwrap().replace("placement_seed=1", "placement_seed=2");
    std::fs::write(&path, text).unwrap();
    assert!(load_dataset(dir.path()).is_err());
}

#[test]
fn neighborhood_exclusion_touches_pair() {
    let (sys, r) = recipe30();
    let s = generate_sample(&sys, &r, &mut sample_rng(4, 0, 0)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let e = apply_neighborhood_exclusion(&s, &sys, &mut rng).unwrap();
        let Scenario::Neighborhood { pair } = e.scenario else { panic!() };
        assert!(sys.neighbors(pair.0).contains(&pair.1));
        assert_eq!(e.removed.len(), 5);
        for &i in &e.removed {
            let buses = s.measurements.measurements[i].location.buses(&sys);
            assert!(buses.contains(&pair.0) || buses.contains(&pair.1));
        }
        assert_eq!(e.label, s.label);
        assert_eq!(e.truth, s.truth);
        let g = e.graph(&sys, 30).unwrap();
        assert_eq!(g.n_factors(), 122 - 5);
        assert!(g.factors.iter().all(|f| !e.removed.contains(&f.measurement)));
    }
}

#[test]
fn attack_stays_in_one_hop_set() {
    let (sys, r) = recipe30();
    let s = generate_sample(&sys, &r, &mut sample_rng(4, 0, 1)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let a = apply_attack(&s, &sys, 1.0, &mut rng).unwrap();
        let Scenario::Attack { bus, .. } = a.scenario else { panic!() };
        let hood = one_hop_measurements(&sys, &s.measurements, bus);
        assert_eq!(a.attacked.len(), 5);
        assert!(a.attacked.iter().all(|i| hood.contains(i)));
        for i in 0..s.measurements.len() {
            let changed = a.measurements.measurements[i].value != s.measurements.measurements[i].value;
            if changed {
                assert!(a.attacked.contains(&i));
            }
        }
        assert!(a.attacked.iter().all(|&i| a.measurements.provenance[i] == Provenance::Attacked));
        assert_eq!(a.label, s.label);
    }
    let zero = apply_attack(&s, &sys, 0.0, &mut rng).unwrap();
    assert_eq!(zero.measurements, s.measurements);
}

#[test]
fn bad_recipes_are_rejected() {
    let sys = ieee30();
    let mut spec = RecipeSpec::ieee30(1);
    spec.legacy_count = 10_000;
    assert!(SampleRecipe::build(&sys, spec).is_err());
    let mut spec = RecipeSpec::ieee30(1);
    spec.pmu_currents = 1000;
    assert!(SampleRecipe::build(&sys, spec).is_err());
    let mut spec = RecipeSpec::ieee30(1);
    spec.load_min = 2.0;
    assert!(SampleRecipe::build(&sys, spec).is_err());
}
