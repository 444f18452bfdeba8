//! WebAssembly bindings for a single-page demo. The page builds a map of the
//! synthetic two-object scene, then lets the user query an object, move or
//! delete it, and orbit the camera around the result.

use std::collections::BTreeSet;

use gsfuse_core::camera::look_at;
use gsfuse_core::dataset::{synth_scene, GroundTruthSegmentation, SceneSpec};
use gsfuse_core::edit::{edit_ids, EditVerb};
use gsfuse_core::eval::{label_name, mask_oracle_for};
use gsfuse_core::pipeline::{build_map_from_frames, SceneMap};
use gsfuse_core::query::{adaptive_query, fixed_query, MaskIouOracle, QueryResult};
use gsfuse_core::splat_render::render_primitives;
use gsfuse_core::{CameraIntrinsics, EngineConfig, GaussianId, GaussianPrimitive};
use nalgebra::{Point3, Vector3};
use wasm_bindgen::prelude::*;

const HIGHLIGHT: [f64; 3] = [1.0, 0.35, 0.1];
const BACKGROUND: [f64; 3] = [0.08, 0.08, 0.1];

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct SceneDemo {
    config: EngineConfig,
    map: SceneMap,
    gt: GroundTruthSegmentation,
    oracle: MaskIouOracle,
    intrinsics: CameraIntrinsics,
    orbit: (f64, f64, Point3<f64>),
    selection: BTreeSet<GaussianId>,
}

impl SceneDemo {
    /// Builds the demo natively; the wasm constructor wraps this.
    pub fn build(seed: u64) -> Result<Self, String> {
        let spec = SceneSpec::two_objects();
        let scene = synth_scene(seed, &spec).map_err(|e| e.to_string())?;
        let config = EngineConfig { seed, ..EngineConfig::default() };
        let (map, _) = build_map_from_frames(&scene.frames, &scene.intrinsics, &config).map_err(|e| e.to_string())?;
        let oracle = mask_oracle_for(&map.context(), &scene.ground_truth, config.match_radius());
        Ok(Self {
            config,
            map,
            gt: scene.ground_truth,
            oracle,
            intrinsics: scene.intrinsics,
            orbit: (spec.orbit_radius, spec.orbit_height, spec.target),
            selection: BTreeSet::new(),
        })
    }

    fn summary(&self, result: &QueryResult) -> String {
        serde_json::json!({
            "query": result.query,
            "strategy": result.strategy,
            "selected": self.selection.len(),
            "clusters": result.clusters.iter().map(|c| serde_json::json!({
                "threshold": c.threshold,
                "primitives": c.ids.len(),
                "centroid": c.centroid,
            })).collect::<Vec<_>>(),
        })
        .to_string()
    }

    /// Runs a query for ground-truth label `label`. A `fixed` threshold in
    /// [0, 1] skips the adaptive loop; anything else (e.g. NaN) runs it.
    pub fn run_query(&mut self, label: usize, fixed: f64) -> Result<String, String> {
        let embedding = self.gt.label_embeddings.get(label).ok_or_else(|| format!("no label {label}"))?;
        let name = label_name(&self.gt, label as u32);
        let qc = self.config.query_config();
        let ctx = self.map.context();
        let result = if (0.0..=1.0).contains(&fixed) {
            fixed_query(&ctx, embedding, &name, fixed, &qc)
        } else {
            adaptive_query(&ctx, embedding, &name, &self.oracle, &qc)
        };
        match result {
            Ok(result) => {
                self.selection = result.all_ids().into_iter().collect();
                Ok(self.summary(&result))
            }
            Err(e) => {
                self.selection.clear();
                Err(e.to_string())
            }
        }
    }

    /// Applies `verb` to the current selection.
    pub fn edit_selection(&mut self, verb: &EditVerb) -> Result<String, String> {
        let ids: Vec<GaussianId> = self.selection.iter().copied().collect();
        let report = edit_ids(&mut self.map.gaussians, &mut self.map.grid, &ids, verb).map_err(|e| e.to_string())?;
        if matches!(verb, EditVerb::Delete) {
            self.selection.clear();
        }
        Ok(serde_json::to_string(&report).expect("report serializes"))
    }

    /// RGBA pixels from a camera on the capture orbit at `angle` radians,
    /// with the selection tinted when `highlight` is set.
    pub fn render_rgba(&self, angle: f64, highlight: bool) -> Vec<u8> {
        let (radius, height, target) = self.orbit;
        let eye = Point3::new(radius * angle.cos(), radius * angle.sin(), height);
        let pose = look_at(&eye, &target, &Vector3::z());
        let tinted: Vec<GaussianPrimitive> = self
            .map
            .gaussians
            .iter()
            .map(|p| {
                let mut p = p.clone();
                if highlight && self.selection.contains(&p.id) {
                    p.color = HIGHLIGHT;
                }
                p
            })
            .collect();
        let refs: Vec<&GaussianPrimitive> = tinted.iter().collect();
        let out = render_primitives(&refs, &pose, &self.intrinsics, BACKGROUND);
        out.to_rgb8().chunks(3).flat_map(|c| [c[0], c[1], c[2], 255]).collect()
    }
}

#[wasm_bindgen]
impl SceneDemo {
    /// Synthesizes and maps the scene for `seed`.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32) -> Result<SceneDemo, JsError> {
        Self::build(seed as u64).map_err(js_err)
    }

    pub fn width(&self) -> u32 {
        self.intrinsics.width
    }

    pub fn height(&self) -> u32 {
        self.intrinsics.height
    }

    /// Label names, newline-separated.
    pub fn labels(&self) -> String {
        (0..self.gt.label_count() as u32).map(|l| label_name(&self.gt, l)).collect::<Vec<_>>().join("\n")
    }

    pub fn primitives(&self) -> usize {
        self.map.gaussians.len()
    }

    pub fn query(&mut self, label: usize, fixed: f64) -> Result<String, JsError> {
        self.run_query(label, fixed).map_err(js_err)
    }

    pub fn translate(&mut self, dx: f64, dy: f64, dz: f64) -> Result<String, JsError> {
        self.edit_selection(&EditVerb::Translate(Vector3::new(dx, dy, dz))).map_err(js_err)
    }

    /// Spins the selection about the vertical axis through its centroid.
    pub fn rotate(&mut self, yaw: f64) -> Result<String, JsError> {
        self.edit_selection(&EditVerb::rotate_axis_angle(Vector3::z(), yaw)).map_err(js_err)
    }

    pub fn delete(&mut self) -> Result<String, JsError> {
        self.edit_selection(&EditVerb::Delete).map_err(js_err)
    }

    pub fn render(&self, angle: f64, highlight: bool) -> Vec<u8> {
        self.render_rgba(angle, highlight)
    }
}
