use geokonvex::constraints::{Annotation, Point2};
use geokonvex::evolution::EvolutionConfig;
use geokonvex::io::{annotation_to_json, parse_annotation, ContourFile, RunStatus};
use geokonvex::geodesic::{diagnose, ClosedContour};
use geokonvex::appearance::AppearanceKind;
use proptest::prelude::*;
use serde_json::{json, Value};

fn schema(name: &str) -> jsonschema::Validator {
    let path = format!("{}/../../schemas/{name}", env!("CARGO_MANIFEST_DIR"));
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    jsonschema::validator_for(&doc).unwrap()
}

fn fixture(name: &str) -> Value {
    let path = format!("{}/../../fixtures/{name}", env!("CARGO_MANIFEST_DIR"));
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn fixtures_are_schema_valid() {
    let ann = schema("annotation.schema.json");
    let contour = schema("contour.schema.json");
    assert!(ann.is_valid(&fixture("ellipse.json")));
    let edge = fixture("ellipse_edge_only.json");
    if let Err(e) = contour.validate(&edge) {
        panic!("{e}");
    }
}

#[test]
fn annotation_schema_rejects_what_the_parser_rejects() {
    let ann = schema("annotation.schema.json");
    let cases = [
        json!({ "z": { "x": 1, "y": 2 } }),
        json!({ "source": { "x": 1, "y": 2 } }),
        json!({ "source": { "x": 1, "y": 2, "theta": 0 }, "extra": 1 }),
        json!({ "source": { "x": 1, "y": 2, "theta": 0 }, "landmarks": [{ "x": 1 }] }),
        json!({ "source": { "x": 1, "y": 2, "theta": "up" } }),
    ];
    for c in cases {
        assert!(!ann.is_valid(&c), "{c}");
        assert!(parse_annotation(&c.to_string()).is_err(), "{c}");
    }
}

#[test]
fn contour_schema_rules() {
    let contour = schema("contour.schema.json");
    let mut v = fixture("ellipse_edge_only.json");
    v["vertices"] = json!([{ "x": 0, "y": 0 }, { "x": 1, "y": 0 }]);
    assert!(!contour.is_valid(&v));
    let mut v = fixture("ellipse_edge_only.json");
    v["params"]["model"] = json!("elastica");
    assert!(!contour.is_valid(&v));

    let square: Vec<[f64; 2]> = vec![[0.0, 0.0], [4.0, 0.0], [4.0, 4.0], [0.0, 4.0]];
    let c = ClosedContour { diagnostics: diagnose(&square, [2.0, 2.0], 1.0), vertices: square, turning_profile: vec![] };
    let status = RunStatus { iterations: 3, converged: false, degraded: true, degraded_reason: Some("x".into()) };
    let cfg = EvolutionConfig { appearance: AppearanceKind::PiecewiseConstant, ..Default::default() };
    let mut file = ContourFile::new(&c, &cfg, Some(status));
    file.diagnostics.jaccard = Some(0.5);
    let v = serde_json::to_value(&file).unwrap();
    if let Err(e) = contour.validate(&v) {
        panic!("{e}");
    }
}

fn point() -> impl Strategy<Value = Point2> {
    (-1e3..1e3f64, -1e3..1e3f64).prop_map(|(x, y)| Point2::new(x, y))
}

fn annotation() -> impl Strategy<Value = Annotation> {
    (
        (-1e3..1e3f64, -1e3..1e3f64, -10.0..10.0f64),
        prop::option::of(point()),
        prop::collection::vec(prop::collection::vec(point(), 1..5), 0..3),
        prop::collection::vec(prop::collection::vec(point(), 1..5), 0..3),
        prop::collection::vec(point(), 0..4),
    )
        .prop_map(|((x, y, t), z, fg, bg, lm)| {
            let mut a = Annotation::new(x, y, t);
            a.z = z;
            a.fg_scribbles = fg;
            a.bg_scribbles = bg;
            a.landmarks = lm;
            a
        })
}

proptest! {
    #[test]
    fn annotations_round_trip_and_validate(a in annotation()) {
        let text = annotation_to_json(&a);
        prop_assert_eq!(parse_annotation(&text).unwrap(), a);
        let v: Value = serde_json::from_str(&text).unwrap();
        prop_assert!(schema("annotation.schema.json").is_valid(&v));
    }
}
