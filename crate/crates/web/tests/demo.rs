use gsfuse_core::edit::EditVerb;
use gsfuse_web::SceneDemo;
use nalgebra::Vector3;

// the #[wasm_bindgen] wrappers build JsError values, which only exist on wasm
// targets; natively the plain methods are exercised instead

#[test]
fn query_edit_render_cycle() {
    let mut demo = SceneDemo::build(5).unwrap();
    let (w, h) = (demo.width() as usize, demo.height() as usize);
    assert_eq!(demo.labels(), "box\nball");
    let before = demo.render_rgba(0.0, true);
    assert_eq!(before.len(), w * h * 4);

    let summary: serde_json::Value = serde_json::from_str(&demo.run_query(1, f64::NAN).unwrap()).unwrap();
    assert_eq!(summary["strategy"], "adaptive");
    assert!(summary["selected"].as_u64().unwrap() > 0);
    let tinted = demo.render_rgba(0.0, true);
    assert_ne!(before, tinted, "selection highlight changes the image");

    let fixed: serde_json::Value = serde_json::from_str(&demo.run_query(1, 0.6).unwrap()).unwrap();
    assert_eq!(fixed["strategy"], "fixed:0.6");

    let n = demo.primitives();
    let moved: serde_json::Value =
        serde_json::from_str(&demo.edit_selection(&EditVerb::Translate(Vector3::new(0.0, 0.0, 0.3))).unwrap()).unwrap();
    assert_eq!(moved["verb"], "translate");
    assert_eq!(demo.primitives(), n);
    demo.edit_selection(&EditVerb::rotate_axis_angle(Vector3::z(), 0.5)).unwrap();
    demo.edit_selection(&EditVerb::Delete).unwrap();
    assert!(demo.primitives() < n);
    assert!(demo.edit_selection(&EditVerb::Translate(Vector3::x())).is_err(), "empty selection after delete");
}
