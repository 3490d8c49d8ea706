use dsu::synth::{generate, load, lodo_split, save, SynthConfig, TaskSpec};
use proptest::prelude::*;

fn small(seed: u64) -> SynthConfig {
    SynthConfig {
        samples_per_class: 20,
        seed,
        ..SynthConfig::default()
    }
}

#[test]
fn channel_means_follow_the_style_shift() {
    let cfg = SynthConfig {
        samples_per_class: 2_500,
        seed: 3,
        ..SynthConfig::default()
    };
    let task = TaskSpec::from_config(&cfg).unwrap();
    let data = generate(&task).unwrap();
    let hw = cfg.height * cfg.width;
    for (spec, d) in task.domains.iter().zip(&data.domains) {
        assert_eq!(d.len(), 10_000);
        for ch in 0..cfg.channels {
            let mut sum = 0.0;
            for row in d.x.data().chunks_exact(cfg.channels * hw) {
                sum += row[ch * hw..(ch + 1) * hw].iter().sum::<f64>();
            }
            let count = (d.len() * hw) as f64;
            let mean = sum / count;
            let sd = ((spec.scale[ch] * task.content_noise).powi(2) + spec.noise.powi(2)).sqrt();
            let se = sd / count.sqrt();
            assert!((mean - spec.shift[ch]).abs() <= 3.0 * se, "{} channel {ch}", spec.id);
        }
    }
}

#[test]
fn target_style_lies_outside_the_source_range() {
    for seed in 0..5 {
        let task = TaskSpec::from_config(&small(seed)).unwrap();
        let (sources, target) = task.domains.split_at(task.domains.len() - 1);
        assert_eq!(target[0].id, "target");
        for ch in 0..task.channels {
            let lo = sources.iter().map(|d| d.shift[ch]).fold(f64::INFINITY, f64::min);
            let hi = sources.iter().map(|d| d.shift[ch]).fold(f64::NEG_INFINITY, f64::max);
            assert!(target[0].shift[ch] < lo || target[0].shift[ch] > hi);
        }
    }
}

#[test]
fn saved_data_loads_back_identically() {
    let data = generate(&TaskSpec::from_config(&small(4)).unwrap()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save(&data, dir.path()).unwrap();
    assert_eq!(load(dir.path()).unwrap(), data);
}

#[test]
fn loading_a_missing_directory_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(load(dir.path().join("nothing")).unwrap_err().category(), "io");
}

#[test]
fn unknown_held_out_domain_is_a_config_error() {
    let data = generate(&TaskSpec::from_config(&small(5)).unwrap()).unwrap();
    assert_eq!(lodo_split(&data, "mars").unwrap_err().category(), "config");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn split_partitions_the_domains(seed in 0u64..1_000, sources in 2usize..5, held in 0usize..5) {
        let cfg = SynthConfig { source_domains: sources, ..small(seed) };
        let data = generate(&TaskSpec::from_config(&cfg).unwrap()).unwrap();
        let held = held % data.domains.len();
        let id = data.task.domains[held].id.clone();
        let (train, test) = lodo_split(&data, &id).unwrap();
        let total: usize = data.domains.iter().map(|d| d.len()).sum();
        prop_assert_eq!(train.len() + test.len(), total);
        prop_assert!(test.domains.iter().all(|&d| d == held));
        prop_assert!(train.domains.iter().all(|&d| d != held));
        for k in 0..cfg.classes {
            prop_assert_eq!(test.labels.iter().filter(|&&l| l == k).count(), cfg.samples_per_class);
        }
    }

    #[test]
    fn generation_is_reproducible(seed in 0u64..1_000) {
        let task = TaskSpec::from_config(&small(seed)).unwrap();
        prop_assert_eq!(generate(&task).unwrap(), generate(&task).unwrap());
    }
}
