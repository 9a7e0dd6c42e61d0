mod common;

use common::{bitwise_eq, bundle, images, max_abs_diff, schema, tiny_config};
use hisd::inference::{interpolate, BatchStyles, EditPlan, EditSpec, EditStep, InferenceModel, StyleFile, StyleSource};
use hisd::net::StyleCode;
use tch::Tensor;

fn model(seed: u64) -> InferenceModel {
    let cfg = tiny_config();
    let b = bundle(&cfg, seed);
    InferenceModel::from_params(&schema(), &cfg, &b.ema_params).unwrap()
}

fn latent(tag: usize, attribute: usize, seed: u64) -> EditStep {
    EditStep { tag, attribute: Some(attribute), source: StyleSource::Latent { seed } }
}

#[test]
fn single_batch_style_equals_single_step_plan() {
    let m = model(1);
    let x = images(2, 16, 3);
    let out = m.batch_styles(&x, 1, Some(2), 1, BatchStyles::Latent { seed: 9 }).unwrap();
    let plan = EditPlan::new(vec![latent(1, 2, 9)]).unwrap();
    assert!(bitwise_eq(&out[0], &m.apply_plan(&x, &plan).unwrap()));
}

#[test]
fn plan_is_the_manual_composition() {
    let m = model(2);
    let x = images(1, 16, 4);
    let plan = EditPlan::new(vec![latent(0, 1, 5), latent(1, 0, 6)]).unwrap();
    let e = m.encode(&x).unwrap();
    let s0 = m.resolve_style(&latent(0, 1, 5)).unwrap();
    let s1 = m.resolve_style(&latent(1, 0, 6)).unwrap();
    let manual = m.decode(&m.translate(&m.translate(&e, &s0).unwrap(), &s1).unwrap()).unwrap();
    assert!(bitwise_eq(&manual, &m.apply_plan(&x, &plan).unwrap()));
    // Same plan, same bits.
    assert!(bitwise_eq(&manual, &m.apply_plan(&x, &plan).unwrap()));
}

#[test]
fn saturated_masks_reduce_to_reconstruction() {
    let mut m = model(3);
    m.nets.mask_override = Some(1e4);
    let x = images(2, 16, 5);
    let plan = EditPlan::new(vec![latent(0, 0, 1), latent(1, 1, 2)]).unwrap();
    assert!(bitwise_eq(&m.apply_plan(&x, &plan).unwrap(), &m.reconstruct(&x).unwrap()));
}

#[test]
fn seeds_drive_latent_styles() {
    let m = model(4);
    let x = images(1, 16, 6);
    let run = |seed| m.apply_plan(&x, &EditPlan::new(vec![latent(1, 0, seed)]).unwrap()).unwrap();
    assert!(bitwise_eq(&run(1), &run(1)));
    assert!(max_abs_diff(&run(1), &run(2)) > 0.0);
    let outs = m.batch_styles(&x, 1, Some(0), 3, BatchStyles::Latent { seed: 1 }).unwrap();
    assert_eq!(outs.len(), 3);
    assert!(max_abs_diff(&outs[0], &outs[1]) > 0.0);
}

#[test]
fn reference_and_explicit_styles() {
    let m = model(5);
    let x = images(1, 16, 7);
    let r = images(1, 16, 8);
    let from_ref = m.resolve_style(&EditStep { tag: 0, attribute: None, source: StyleSource::Reference(r.shallow_clone()) }).unwrap();
    assert!(bitwise_eq(&from_ref.codes, &m.extract(&r, 0).unwrap().codes));
    let v = Vec::<f32>::try_from(from_ref.codes.flatten(0, -1)).unwrap();
    let explicit = m.resolve_style(&EditStep { tag: 0, attribute: None, source: StyleSource::Explicit(v.clone()) }).unwrap();
    assert!(bitwise_eq(&m.translate(&m.encode(&x).unwrap(), &explicit).unwrap(), &m.translate(&m.encode(&x).unwrap(), &from_ref).unwrap()));
    assert!(m.resolve_style(&EditStep { tag: 0, attribute: None, source: StyleSource::Explicit(v[..3].to_vec()) }).is_err());
    assert!(m.resolve_style(&EditStep { tag: 0, attribute: None, source: StyleSource::Latent { seed: 0 } }).is_err());
    assert!(m.resolve_style(&latent(5, 0, 0)).is_err());
    let refs = [r.shallow_clone()];
    assert!(m.batch_styles(&x, 0, None, 2, BatchStyles::References(&refs)).is_err());
}

#[test]
fn style_files_round_trip_and_check_the_schema() {
    let m = model(6);
    let s = m.extract(&images(1, 16, 9), 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.json");
    m.style_file(&s).unwrap().write(&path).unwrap();
    let back = m.style_from_file(&StyleFile::read(&path).unwrap()).unwrap();
    assert_eq!(back.tag, 1);
    assert!(bitwise_eq(&back.codes, &s.codes));
    let mut foreign = StyleFile::read(&path).unwrap();
    foreign.fingerprint = "other".into();
    assert!(m.style_from_file(&foreign).is_err());
}

#[test]
fn interpolation_endpoints_and_guards() {
    let a = StyleCode::new(1, Tensor::from_slice(&[1f32, 2.0, 3.0]).view([1, 3]));
    let b = StyleCode::new(1, Tensor::from_slice(&[3f32, 2.0, 1.0]).view([1, 3]));
    assert!(bitwise_eq(&interpolate(&a, &b, 0.0).unwrap().codes, &a.codes));
    assert!(bitwise_eq(&interpolate(&a, &b, 1.0).unwrap().codes, &b.codes));
    assert!(interpolate(&a, &b, 1.5).is_err());
    assert!(interpolate(&a, &StyleCode::new(0, b.codes.shallow_clone()), 0.5).is_err());
}

#[test]
fn edit_specs_resolve_against_the_schema() {
    let sch = schema();
    let no_refs = |_: &str| -> hisd::Result<image::RgbImage> { unreachable!() };
    let step = EditSpec::parse("tag=Frame,attr=blue,seed=3").unwrap().resolve(&sch, no_refs).unwrap();
    assert_eq!((step.tag, step.attribute), (1, Some(2)));
    assert!(EditSpec::parse("tag=Frame,attr=purple,seed=3").unwrap().resolve(&sch, no_refs).is_err());
    assert!(EditSpec::parse("tag=Beard,attr=with,seed=3").unwrap().resolve(&sch, no_refs).is_err());
}
