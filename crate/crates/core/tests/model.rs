use std::time::Instant;

use mobilecaps_core::capsnet::primary_capsules;
use mobilecaps_core::nn::Ctx;
use mobilecaps_core::{Model, ModelConfig, Task, Tensor, Variant};

#[test]
fn paper_profile_shapes() {
    let start = Instant::now();
    let model: Model<f32> = Model::new(ModelConfig::paper(Task::Classify { classes: 3 }), 0).unwrap();
    let images = Tensor::full(&[1, 224, 224, 3], 0.5f32).unwrap();
    let mut ctx = Ctx::infer(&model.store);
    let x = ctx.tape.leaf(images.clone());
    let f = model.features(&mut ctx, x).unwrap();
    let fmap = ctx.tape.value(f).clone();
    assert_eq!(fmap.shape(), &[1, 7, 7, 1024]);
    let dim = model.capsule_head().unwrap().primary_dim;
    assert_eq!(primary_capsules(&fmap, dim).unwrap().shape(), &[1, 392, 128]);
    let y = model.predict(&images).unwrap();
    assert_eq!(y.shape(), &[1, 3]);
    assert!(y.data().iter().all(|&l| (0.0..1.0).contains(&l)));
    eprintln!("paper forward in {:?}", start.elapsed());
}

#[test]
fn paper_profile_parameter_budget() {
    let model: Model<f32> = Model::new(ModelConfig::paper(Task::Classify { classes: 3 }), 0).unwrap();
    let count = model.param_count();
    eprintln!("{count:#?}");
    assert!((1_900_000..=2_500_000).contains(&count.total), "{}", count.total);
}

#[test]
fn severity_head_has_one_output() {
    let model: Model<f32> = Model::new(ModelConfig::desk(Task::Severity), 1).unwrap();
    let y = model.predict(&Tensor::full(&[2, 32, 32, 3], 0.3f32).unwrap()).unwrap();
    assert_eq!(y.shape(), &[2, 1]);
}

#[test]
fn every_variant_builds_and_predicts() {
    for v in Variant::ALL {
        let model: Model<f32> = Model::new(ModelConfig::desk(Task::Classify { classes: 3 }).with_variant(v), 2).unwrap();
        let y = model.predict(&Tensor::full(&[3, 32, 32, 3], 0.1f32).unwrap()).unwrap();
        assert_eq!(y.shape(), &[3, 3], "{v:?}");
        assert!(y.all_finite());
    }
}

#[test]
fn same_seed_same_weights() {
    let cfg = ModelConfig::desk(Task::Classify { classes: 3 });
    let a: Model<f32> = Model::new(cfg.clone(), 9).unwrap();
    let b: Model<f32> = Model::new(cfg.clone(), 9).unwrap();
    let c: Model<f32> = Model::new(cfg, 10).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.store, c.store);
}

#[test]
fn rejects_wrong_input_size() {
    let model: Model<f32> = Model::new(ModelConfig::desk(Task::Classify { classes: 3 }), 0).unwrap();
    assert!(model.predict(&Tensor::zeros(&[1, 31, 32, 3]).unwrap()).is_err());
}
