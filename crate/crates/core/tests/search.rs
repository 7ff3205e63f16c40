use polycube_core::diffusion::{ScheduleConfig, TemplateProjectionDenoiser};
use polycube_core::fixtures::fixture_mesh;
use polycube_core::grid::*;
use polycube_core::primitives::*;
use polycube_core::search::*;
use polycube_core::tensor::FRAME_CELL_EDGE;
use polycube_core::verification::VerificationParams;
use polycube_core::Error;

fn single(cell: usize, cat: PrimitiveCategory) -> Labels {
    let mut l = [CellLabel::NULL; CELL_COUNT];
    l[cell - 1] = cat.into();
    l
}

fn with_engine<T>(f: impl FnOnce(&InferenceEngine) -> T) -> T {
    let s = ScheduleConfig::default().build().unwrap();
    let d = TemplateProjectionDenoiser::new(&s).unwrap();
    let lib = TemplateLibrary::with_edge(42, FRAME_CELL_EDGE);
    let engine = InferenceEngine {
        schedule: &s,
        denoiser: &d,
        library: &lib,
        params: VerificationParams::default(),
        seed: 42,
        deterministic: true,
    };
    f(&engine)
}

#[test]
fn auto_single_cube() {
    let mesh = fixture_mesh(&single(1, PrimitiveCategory::Cube)).unwrap();
    let r = with_engine(|e| auto_generate_context(&mesh, &SearchConfig::default(), e)).unwrap();
    assert_eq!(r.input_genus, Some(0));
    assert_eq!(r.funnel.after_genus, 7);
    assert_eq!(r.funnel.after_local_verification, 1);
    assert_eq!(r.verified_contexts.len(), 1);
    assert_eq!(r.verified_contexts[0].labels, single(1, PrimitiveCategory::Cube).to_vec());
    assert!(r.funnel.is_monotone());
}

#[test]
fn auto_thc_split_across_hole() {
    let mesh = fixture_mesh(&single(1, PrimitiveCategory::ThcZ)).unwrap();
    let cfg = SearchConfig { splits: [None, None, Some(vec![0.5, 0.5])], ..SearchConfig::default() };
    let r = with_engine(|e| auto_generate_context(&mesh, &cfg, e)).unwrap();
    assert_eq!(r.subregions.len(), 2);
    assert!(r.subregions.iter().all(|s| s.genus == 1));
    assert_eq!(r.funnel.after_genus, 9);
    let v = &r.verified_contexts;
    assert_eq!(v.len(), 1);
    let thc = CellLabel::from(PrimitiveCategory::ThcZ).value();
    assert_eq!(v[0].labels.iter().filter(|l| l.value() == thc).count(), 2);
}

#[test]
fn repartition_required_for_genus_two_region() {
    let mut labels = [CellLabel::NULL; CELL_COUNT];
    labels[0] = PrimitiveCategory::ThcZ.into();
    labels[1] = PrimitiveCategory::ThcZ.into();
    let mesh = fixture_mesh(&labels).unwrap();
    let cfg = SearchConfig { splits: [Some(vec![1.0]), None, None], ..SearchConfig::default() };
    let err = with_engine(|e| auto_generate_context(&mesh, &cfg, e)).unwrap_err();
    assert!(matches!(err, Error::RepartitionRequired { genus: 2, .. }), "{err}");
}

#[test]
fn user_guided_correct_context() {
    let labels = single(1, PrimitiveCategory::Cube);
    let mesh = fixture_mesh(&labels).unwrap();
    let input = GuidedInput::Contexts(vec![encode_context(&labels)]);
    let r = with_engine(|e| user_guided_infer(&input, &mesh, &SearchConfig::default(), e)).unwrap();
    assert_eq!(r.verified_contexts.len(), 1);
    assert!(r.rejection.is_none());
}

#[test]
fn user_guided_genus_mismatch_blocks_sampling() {
    let mesh = fixture_mesh(&single(1, PrimitiveCategory::Cube)).unwrap();
    let input = GuidedInput::Contexts(vec![encode_context(&single(1, PrimitiveCategory::ThcX))]);
    let r = with_engine(|e| user_guided_infer(&input, &mesh, &SearchConfig::default(), e)).unwrap();
    assert_eq!(r.funnel.after_genus, 0);
    assert!(r.per_candidate.is_empty());
    assert!(r.verified_contexts.is_empty());
    assert!(r.rejection.is_some());
}

#[test]
fn user_guided_stacked_contexts() {
    let mesh = fixture_mesh(&single(1, PrimitiveCategory::Cube)).unwrap();
    let cats = [PrimitiveCategory::Cube, PrimitiveCategory::BhcPosZ, PrimitiveCategory::BhcNegX];
    let input = GuidedInput::Contexts(cats.iter().map(|&c| encode_context(&single(1, c))).collect());
    let r = with_engine(|e| user_guided_infer(&input, &mesh, &SearchConfig::default(), e)).unwrap();
    assert_eq!(r.per_candidate.len(), 3);
    assert_eq!(r.verified_contexts.len(), 1);
    assert!(r.funnel.is_monotone());
}

#[test]
fn user_guided_constraints() {
    let mesh = fixture_mesh(&single(1, PrimitiveCategory::Cube)).unwrap();
    let pc = PartialConstraints::from_json(r#"{"counts": {"Number-Cube": 1, "Number-THC": 0, "Number-BHC": 0}, "placement": {"1": [1]}}"#)
        .unwrap();
    let r = with_engine(|e| user_guided_infer(&GuidedInput::Constraints(pc), &mesh, &SearchConfig::default(), e)).unwrap();
    assert_eq!(r.verified_contexts.len(), 1);
}

#[test]
fn empty_input_is_an_error() {
    let mesh = fixture_mesh(&single(1, PrimitiveCategory::Cube)).unwrap();
    let r = with_engine(|e| user_guided_infer(&GuidedInput::Contexts(vec![]), &mesh, &SearchConfig::default(), e));
    assert!(r.is_err());
}
