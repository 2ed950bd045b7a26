mod common;

use nnoodkit::plan::build_plan;
use nnoodkit::tasks::{apply_task, calibrate, pick_other, Task, TaskKind};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tasks() -> Vec<(TaskKind, Task)> {
    let (images, masks) = common::object_dataset(5, 48, 48, 3);
    let plan = build_plan(&images, Some(&masks)).unwrap();
    TaskKind::ALL
        .iter()
        .map(|&kind| {
            let mut rng = ChaCha8Rng::seed_from_u64(17);
            let params = calibrate(kind, &images, Some(&masks), &plan, &mut rng).unwrap();
            (kind, Task::new(params).unwrap())
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn labels_and_support_follow_contract(seed in any::<u64>()) {
        let (images, masks) = common::object_dataset(5, 48, 48, 3);
        for (kind, task) in tasks() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let i = rng.random_range(0..images.len());
            let j = pick_other(&mut rng, images.len(), i);
            let s = apply_task(&task, &images[i], &images[j], Some(&masks[i]), Some(&masks[j]), &mut rng).unwrap();
            if let Err(msg) = common::check_label_contract(kind, &images[i], &s) {
                prop_assert!(false, "{}: {}", kind, msg);
            }
        }
    }
}

#[test]
fn fpi_with_identical_images_is_identity() {
    let (images, _) = common::object_dataset(2, 32, 32, 8);
    let (_, fpi) = tasks()
        .into_iter()
        .find(|(k, _)| *k == TaskKind::Fpi)
        .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let s = apply_task(&fpi, &images[0], &images[0], None, None, &mut rng).unwrap();
    assert_eq!(s.image.data(), images[0].data());
}
