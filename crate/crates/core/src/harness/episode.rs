use super::{AffordanceSource, CodegenKind, HarnessError, RunConfig};
use crate::affordance::{f1_score, predict_affordance_with, AffordanceMap, AffordanceModel, AffordanceRegion, FrameTag, PartPointCloud, SurfaceSpec};
use crate::geometry::{Face, Pt3};
use crate::grounding::{
    backproject, mask_iou, run_chain, GroundingError, HttpTransport, ImageRef, Mask, ProviderKind, Providers, RemoteClient, SceneMeta, Transport,
};
use crate::parallel::{map_slice, Execution};
use crate::program::{
    generate_program, interpret, CodeGenerator, ExecutionTrace, OfflineCodegen, RemoteCodegen, Skill, SkillRuntime, TaskSpec, TerminatedBy,
};
use crate::scene::{build_object_with, render_observation_with, ArticulatedObject, CameraModel, Category, TemplateConfig};
use crate::skills::{compute_grasp, estimate_normal, select_contact, SimHandle};
use nalgebra::{Isometry3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Score threshold for the contact-selection F1 metric.
pub const F1_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FailureStage {
    Grounding,
    Affordance,
    Skill,
    Program,
    None,
}

/// One line of the episode log. IoU and F1 are 0 when the episode failed
/// before they could be measured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub category: Category,
    pub seed: u64,
    pub iou: f64,
    pub f1: f64,
    pub success: bool,
    pub steps: usize,
    pub failure_stage: FailureStage,
    pub error: Option<String>,
    pub trace: Option<ExecutionTrace>,
}

/// Maps world points into the target part's affordance frame: the part's
/// primitive frame rotated so that the annotated face normal is `+z`.
pub fn affordance_frame(obj: &ArticulatedObject, id: u16) -> Option<Isometry3<f64>> {
    let part = obj.part(id).ok()?;
    let normal = part.affordance?.face.normal();
    let z = Vector3::z();
    let rot =
        UnitQuaternion::rotation_between(&normal, &z).unwrap_or_else(|| UnitQuaternion::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI));
    Some(Isometry3::from_parts(Translation3::identity(), rot) * obj.part_pose(id).ok()?.inverse())
}

/// Providers, code generator and optional model shared by every episode.
#[derive(Clone)]
pub struct Pipeline {
    pub cfg: RunConfig,
    pub providers: Providers,
    pub codegen: Arc<dyn CodeGenerator>,
    pub model: Option<Arc<AffordanceModel>>,
}

impl std::fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pipeline").field("cfg", &self.cfg).field("model", &self.model.is_some()).finish()
    }
}

struct Stop {
    stage: FailureStage,
    error: String,
    iou: f64,
    f1: f64,
}

impl Stop {
    fn at(stage: FailureStage, error: impl std::fmt::Display) -> Self {
        Self { stage, error: error.to_string(), iou: 0.0, f1: 0.0 }
    }
}

impl Pipeline {
    pub fn from_config(cfg: RunConfig) -> Result<Self, HarnessError> {
        Self::with_transport(cfg, Arc::new(HttpTransport))
    }

    /// Builds providers over `transport`; loads the model when the config
    /// asks for learned affordance.
    pub fn with_transport(cfg: RunConfig, transport: Arc<dyn Transport>) -> Result<Self, HarnessError> {
        cfg.validate()?;
        let providers = Providers::from_config(&cfg.providers, transport.clone())?;
        let codegen: Arc<dyn CodeGenerator> = match cfg.codegen {
            CodegenKind::Offline => Arc::new(OfflineCodegen),
            CodegenKind::Remote => {
                let endpoint = cfg.providers.endpoint.clone().expect("validated endpoint");
                Arc::new(RemoteCodegen::new(RemoteClient::new(endpoint, cfg.providers.timeout_s, cfg.providers.retries, transport)))
            }
        };
        let model = match cfg.affordance {
            AffordanceSource::GroundTruth => None,
            AffordanceSource::Learned => Some(Arc::new(AffordanceModel::load(&cfg.model)?)),
        };
        Ok(Self { cfg, providers, codegen, model })
    }

    pub fn run_episode(&self, category: Category, seed: u64) -> EpisodeResult {
        self.run_episode_with(&self.providers, category, seed)
    }

    /// Full chain for one seeded object. Every failure is captured in the
    /// result; nothing here panics on provider or program behavior.
    pub fn run_episode_with(&self, providers: &Providers, category: Category, seed: u64) -> EpisodeResult {
        let mut result = EpisodeResult {
            category,
            seed,
            iou: 0.0,
            f1: 0.0,
            success: false,
            steps: 0,
            failure_stage: FailureStage::None,
            error: None,
            trace: None,
        };
        match self.episode(providers, category, seed, &mut result) {
            Ok(trace) => {
                result.success = trace.task_success;
                result.steps = trace.steps_used;
                result.failure_stage = classify(&trace);
                result.error = trace.error.clone();
                result.trace = Some(trace);
            }
            Err(stop) => {
                result.failure_stage = stop.stage;
                result.error = Some(stop.error);
                result.iou = stop.iou;
                result.f1 = stop.f1;
            }
        }
        result
    }

    fn episode(&self, providers: &Providers, category: Category, seed: u64, result: &mut EpisodeResult) -> Result<ExecutionTrace, Stop> {
        use FailureStage::{Affordance, Grounding, Program, Skill};
        let cfg = &self.cfg;
        let obj = build_object_with(TemplateConfig::builtin(), category, seed).map_err(|e| Stop::at(Grounding, e))?;
        let target = obj.target_part().id;
        let camera = CameraModel::for_object(&obj);
        let frame = render_observation_with(&obj, &camera, Execution::Sequential);
        let mut image = ImageRef::new(&frame, SceneMeta::from_object(&obj)).map_err(|e| Stop::at(Grounding, e))?;
        let p = &cfg.providers;
        if [p.describe, p.ground, p.segment].contains(&ProviderKind::Remote) {
            image = image.with_raster();
        }
        let task = TaskSpec::open(category);

        let grounded = run_chain(providers, &image, &task.goal).map_err(|e| Stop::at(Grounding, e))?;
        let truth = Mask::of_part(&frame, target);
        result.iou = mask_iou(&grounded.mask, &truth).map_err(|e| Stop::at(Grounding, e))?;
        let iou = result.iou;
        let stop = |stage, e: &dyn std::fmt::Display| Stop { stage, error: e.to_string(), iou, f1: 0.0 };
        let cloud = backproject(&grounded.mask, &frame).map_err(|e| stop(Grounding, &e))?;

        // the oracle region is fit on the true part's visible points and
        // then evaluated on whatever the grounding chain produced
        let to_aff = affordance_frame(&obj, target).ok_or_else(|| stop(Affordance, &"target part has no affordance annotation"))?;
        let into = |c: &PartPointCloud| PartPointCloud::new(c.points.iter().map(|p| to_aff * p).collect(), FrameTag::Part);
        let true_cloud = backproject(&truth, &frame).map_err(|e: GroundingError| stop(Affordance, &e))?;
        let surface = SurfaceSpec::with_default_tolerance(Face::PosZ);
        let region = AffordanceRegion::fit(&into(&true_cloud), &surface, cfg.radius_factor).map_err(|e| stop(Affordance, &e))?;
        let part_cloud = into(&cloud);
        let labels: Vec<bool> = part_cloud.points.iter().map(|p| region.contains(p)).collect();
        let map = match &self.model {
            None => AffordanceMap::from_labels(&labels),
            Some(model) => predict_affordance_with(model, &part_cloud, Execution::Sequential).map_err(|e| stop(Affordance, &e))?,
        };
        result.f1 = f1_score(&map.threshold(F1_THRESHOLD), &labels).map_err(|e| stop(Affordance, &e))?;
        let f1 = result.f1;
        let stop = |stage, e: &dyn std::fmt::Display| Stop { stage, error: e.to_string(), iou, f1 };
        let (_, contact) = select_contact(&map, &part_cloud, cfg.skill.eps).map_err(|e| stop(Affordance, &e))?;

        let contact: Pt3 = to_aff.inverse() * contact;
        let normal = estimate_normal(&cloud, &contact, cfg.skill.k, &camera.forward()).map_err(|e| stop(Skill, &e))?;
        let grasp = compute_grasp(contact, &normal);

        let (_, program) = generate_program(self.codegen.as_ref(), &task).map_err(|e| stop(Program, &e))?;
        let rt = SkillRuntime::new(cfg.skill, Some(grasp), cfg.budget);
        let mut sim = SimHandle::new(obj);
        Ok(interpret(&program, &rt, &mut sim, interpreter_seed(category, seed)))
    }

    /// Every configured episode, in config order.
    pub fn run_benchmark(&self, exec: Execution) -> Vec<EpisodeResult> {
        self.run_benchmark_with(exec, |_, _| self.providers.clone())
    }

    /// As [`Pipeline::run_benchmark`] with per-episode providers.
    pub fn run_benchmark_with<F>(&self, exec: Execution, providers_for: F) -> Vec<EpisodeResult>
    where
        F: Fn(Category, u64) -> Providers + Sync,
    {
        let jobs = self.cfg.episodes();
        map_slice(exec, &jobs, |&(c, s)| self.run_episode_with(&providers_for(c, s), c, s))
    }
}

fn interpreter_seed(category: Category, seed: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (category as u64 + 1)
}

fn classify(trace: &ExecutionTrace) -> FailureStage {
    if trace.task_success {
        return FailureStage::None;
    }
    if trace.terminated_by == TerminatedBy::Error {
        return if trace.failed_skill.is_some() { FailureStage::Skill } else { FailureStage::Program };
    }
    let grasps: Vec<bool> = trace.calls.iter().filter(|c| c.skill == Skill::Grasp).map(|c| c.success).collect();
    if !grasps.is_empty() && !grasps.contains(&true) {
        FailureStage::Skill
    } else {
        FailureStage::Program
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grounding::{Describer, GroundTruth, ImageRef, Perturbed, Segmenter, Stage, StageFailure};
    use crate::program::{CodegenError, TaskSpec};

    fn pipeline() -> Pipeline {
        Pipeline::from_config(RunConfig { seeds: 2, ..RunConfig::default() }).unwrap()
    }

    #[test]
    fn ground_truth_chain_succeeds() {
        let p = pipeline();
        for c in Category::ALL {
            let r = p.run_episode(c, 0);
            assert!(r.success, "{c}: {r:?}");
            assert_eq!((r.iou, r.f1, r.failure_stage), (1.0, 1.0, FailureStage::None));
            assert!(r.steps > 0 && r.steps <= p.cfg.budget);
        }
    }

    #[test]
    fn affordance_frame_maps_face_to_top() {
        let obj = build_object_with(TemplateConfig::builtin(), Category::Door, 3).unwrap();
        let id = obj.target_part().id;
        let t = affordance_frame(&obj, id).unwrap();
        let part = obj.part(id).unwrap();
        let pose = obj.part_pose(id).unwrap();
        let world_normal = pose.rotation * part.affordance.unwrap().face.normal();
        assert!((t.rotation * world_normal - Vector3::z()).norm() < 1e-12);
        assert!(affordance_frame(&obj, 0).is_none());
    }

    struct Broken;
    impl Describer for Broken {
        fn describe(&self, _: &ImageRef<'_>, _: &str) -> Result<String, GroundingError> {
            Err(GroundingError::stage(Stage::Describe, StageFailure::EmptyDescription))
        }
    }

    #[test]
    fn grounding_failure_is_captured() {
        let p = pipeline();
        let providers = Providers { describer: Arc::new(Broken), ..Providers::ground_truth() };
        let r = p.run_episode_with(&providers, Category::Bottle, 0);
        assert_eq!(r.failure_stage, FailureStage::Grounding);
        assert!(!r.success && r.trace.is_none());
        assert!(r.error.unwrap().contains("describe"));
    }

    struct OtherPart;
    impl Segmenter for OtherPart {
        fn segment(&self, image: &ImageRef<'_>, _: crate::grounding::BBox) -> Result<Mask, GroundingError> {
            Ok(Mask::of_part(image.frame, 0))
        }
    }

    #[test]
    fn wrong_part_fails_in_affordance() {
        let p = pipeline();
        let providers = Providers { segmenter: Arc::new(OtherPart), ..Providers::ground_truth() };
        let r = p.run_episode_with(&providers, Category::Bottle, 1);
        assert_eq!(r.failure_stage, FailureStage::Affordance, "{r:?}");
        assert!(r.iou < 1.0);
    }

    struct NoCode;
    impl CodeGenerator for NoCode {
        fn generate(&self, _: &TaskSpec) -> Result<String, CodegenError> {
            Ok("grasp(part)\nrelease()".into())
        }
    }

    #[test]
    fn weak_program_is_a_program_failure() {
        let p = Pipeline { codegen: Arc::new(NoCode), ..pipeline() };
        let r = p.run_episode(Category::Pen, 0);
        assert_eq!((r.success, r.failure_stage), (false, FailureStage::Program));
        assert_eq!(r.trace.unwrap().terminated_by, TerminatedBy::EndOfProgram);
    }

    #[test]
    fn perturbed_grounding_lowers_iou() {
        let p = pipeline();
        let noisy = Providers {
            describer: Arc::new(GroundTruth),
            grounder: Arc::new(Perturbed { dilation: 0.5 }),
            segmenter: Arc::new(Perturbed { dilation: 0.5 }),
        };
        let r = p.run_episode_with(&noisy, Category::Bottle, 0);
        assert!(r.iou < 1.0, "{r:?}");
    }
}
