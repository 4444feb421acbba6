use gradguess_harness::ExperimentConfig;
use proptest::prelude::*;

fn cfg(overrides: &[String]) -> ExperimentConfig {
    ExperimentConfig::from_toml_str("", overrides).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hash_ignores_out_and_threads(seed in 0u64..1000, threads in 0usize..64, out in "[a-z]{1,12}") {
        let a = cfg(&[format!("run.seed={seed}")]);
        let b = cfg(&[format!("run.seed={seed}"), format!("run.threads={threads}"), format!("run.out=\"{out}\"")]);
        prop_assert_eq!(a.run_id(), b.run_id());
    }

    #[test]
    fn override_order_of_distinct_keys_is_irrelevant(lr in 1e-6f64..1.0, width in 1usize..2048, seed in 0u64..1000) {
        let o = [format!("train.lr={lr:e}"), format!("model.width={width}"), format!("run.seed={seed}")];
        let mut r = o.clone();
        r.reverse();
        prop_assert_eq!(cfg(&o).hash(), cfg(&r).hash());
    }

    #[test]
    fn serialized_config_reparses_to_same_hash(lr in 1e-6f64..1.0, depth in 2usize..8, epochs in 1u64..500) {
        let a = cfg(&[format!("train.lr={lr:e}"), format!("model.depth={depth}"), format!("train.epochs={epochs}")]);
        let b = ExperimentConfig::from_toml_str(&a.to_toml(), &[]).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.hash(), b.hash());
    }

    #[test]
    fn seed_enters_the_hash(a in 0u64..1_000_000, b in 0u64..1_000_000) {
        prop_assume!(a != b);
        prop_assert_ne!(cfg(&[format!("run.seed={a}")]).hash(), cfg(&[format!("run.seed={b}")]).hash());
    }
}

#[test]
fn run_id_is_twelve_lowercase_hex() {
    let id = cfg(&[]).run_id();
    assert_eq!(id.len(), 12);
    assert!(id.chars().all(|c| c.is_ascii_hexdigit() && !c.is_ascii_uppercase()));
}

#[test]
fn presets_load_and_validate() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/configs");
    let mut n = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            ExperimentConfig::load(Some(&path), &[]).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert!(n >= 5);
}
