//! The planner network and its iterative rollout.
//!
//! Three blocks share one flat parameter vector:
//!
//! * map processing: every quadrangle (its 8 vertex coordinates) goes
//!   through an 8-32-128 encoder, averaged over the four cyclic relabelings
//!   of its vertex list; the per-quad codes are summed and passed through a
//!   128-64-64 output block,
//! * state processing: the goal expressed in the current pose's frame,
//!   `(dx, dy, sin dtheta, cos dtheta)`, through 4-64-256-256-256,
//! * parameter estimation: four 320-128-64-64-1 heads, one per gluing point
//!   component.
//!
//! Map coordinates are taken in the goal's frame and scaled by
//! [`INPUT_SCALE`], so the planner is invariant to rigid motions of the
//! whole task and the current pose can be recovered from the state input.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, DenseLayer, Real};
use crate::geometry::{FreeSpace, Pose2};
use crate::spline::{Chain, FrameR, GluingPointR, PathSpline, SplineError};
use crate::task::TaskInput;

/// Gluing points produced by the network per plan.
pub const ROLLOUT_STEPS: usize = 6;
/// Length scale applied to every metric network input.
pub const INPUT_SCALE: f64 = 25.0;
pub const MAP_CODE: usize = 64;
pub const STATE_CODE: usize = 256;

const MAP_ENCODER: [usize; 3] = [8, 32, 128];
const MAP_HEAD: [usize; 3] = [128, 64, 64];
const STATE_BLOCK: [usize; 5] = [4, 64, 256, 256, 256];
const ESTIMATOR: [usize; 5] = [MAP_CODE + STATE_CODE, 128, 64, 64, 1];

const CHECKPOINT_FORMAT: &str = "kinoplan-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("checkpoint format mismatch: {0}")]
    Format(String),
    #[error("layer `{name}` has shape {got:?}, expected {want:?}")]
    Shape { name: String, got: [usize; 2], want: [usize; 2] },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    map_encoder: Vec<DenseLayer>,
    map_head: Vec<DenseLayer>,
    state: Vec<DenseLayer>,
    heads: Vec<Vec<DenseLayer>>,
    names: Vec<String>,
    total: usize,
}

impl Layout {
    fn standard() -> Self {
        let mut offset = 0;
        let mut names = Vec::new();
        let mut chain = |sizes: &[usize], last: Activation, name: &str, names: &mut Vec<String>| {
            sizes
                .windows(2)
                .enumerate()
                .map(|(i, w)| {
                    let (n_in, n_out) = (w[0], w[1]);
                    let activation = if i + 2 == sizes.len() { last } else { Activation::Tanh };
                    let layer = DenseLayer {
                        weight_offset: offset,
                        bias_offset: offset + n_in * n_out,
                        n_in,
                        n_out,
                        activation,
                    };
                    offset += layer.param_count();
                    names.push(format!("{name}.{i}"));
                    layer
                })
                .collect::<Vec<_>>()
        };
        let map_encoder = chain(&MAP_ENCODER, Activation::Tanh, "map_encoder", &mut names);
        let map_head = chain(&MAP_HEAD, Activation::Tanh, "map_head", &mut names);
        let state = chain(&STATE_BLOCK, Activation::Tanh, "state", &mut names);
        let heads = ["x", "y", "dy", "ddy"]
            .iter()
            .map(|h| chain(&ESTIMATOR, Activation::Identity, &format!("head_{h}"), &mut names))
            .collect();
        Self { map_encoder, map_head, state, heads, names, total: offset }
    }

    fn layers(&self) -> impl Iterator<Item = &DenseLayer> {
        self.map_encoder
            .iter()
            .chain(&self.map_head)
            .chain(&self.state)
            .chain(self.heads.iter().flatten())
    }
}

/// Weights of the three-block planner network.
#[derive(Debug)]
pub struct PlannerModel {
    pub params: Vec<f64>,
    layout: Layout,
    evaluations: AtomicU64,
    segment_solves: AtomicU64,
}

impl Clone for PlannerModel {
    fn clone(&self) -> Self {
        Self::from_params(self.params.clone())
    }
}

impl PartialEq for PlannerModel {
    fn eq(&self, other: &Self) -> bool {
        self.params == other.params
    }
}

impl PlannerModel {
    pub fn param_count() -> usize {
        Layout::standard().total
    }

    /// Glorot-uniform weights and zero biases drawn from `seed`.
    pub fn init(seed: u64) -> Self {
        let layout = Layout::standard();
        let mut params = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in layout.layers() {
            let bound = (6.0 / (l.n_in + l.n_out) as f64).sqrt();
            for w in &mut params[l.weight_offset..l.weight_offset + l.n_in * l.n_out] {
                *w = rng.gen_range(-bound..bound);
            }
        }
        Self::from_params(params)
    }

    pub fn zeros() -> Self {
        Self::from_params(vec![0.0; Layout::standard().total])
    }

    /// Wraps a flat parameter vector. Panics if its length is wrong.
    pub fn from_params(params: Vec<f64>) -> Self {
        let layout = Layout::standard();
        assert_eq!(params.len(), layout.total, "parameter vector length");
        Self { params, layout, evaluations: AtomicU64::new(0), segment_solves: AtomicU64::new(0) }
    }

    /// Number of network evaluations (gluing-point predictions) so far.
    pub fn evaluations(&self) -> u64 {
        self.evaluations.load(Ordering::Relaxed)
    }

    /// Number of spline segment solves performed by rollouts so far.
    pub fn segment_solves(&self) -> u64 {
        self.segment_solves.load(Ordering::Relaxed)
    }

    fn mlp<R: Real>(&self, layers: &[DenseLayer], input: Vec<R>) -> Vec<R> {
        layers.iter().fold(input, |x, l| R::dense(&self.params, l, &x))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let layers = self
            .layout
            .layers()
            .zip(&self.layout.names)
            .map(|(l, name)| LayerRecord {
                name: name.clone(),
                shape: [l.n_out, l.n_in],
                activation: l.activation,
                weights: self.params[l.weight_offset..l.weight_offset + l.n_in * l.n_out].to_vec(),
                bias: self.params[l.bias_offset..l.bias_offset + l.n_out].to_vec(),
            })
            .collect();
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            meta: serde_json::Value::Null,
            layers,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, ModelError> {
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(ModelError::Format(format!("{} v{}", ck.format, ck.version)));
        }
        let layout = Layout::standard();
        if ck.layers.len() != layout.names.len() {
            return Err(ModelError::Format(format!("{} layers, expected {}", ck.layers.len(), layout.names.len())));
        }
        let mut params = vec![0.0; layout.total];
        for ((l, name), rec) in layout.layers().zip(&layout.names).zip(&ck.layers) {
            let want = [l.n_out, l.n_in];
            if &rec.name != name
                || rec.shape != want
                || rec.weights.len() != l.n_in * l.n_out
                || rec.bias.len() != l.n_out
            {
                return Err(ModelError::Shape { name: rec.name.clone(), got: rec.shape, want });
            }
            params[l.weight_offset..l.weight_offset + rec.weights.len()].copy_from_slice(&rec.weights);
            params[l.bias_offset..l.bias_offset + l.n_out].copy_from_slice(&rec.bias);
        }
        Ok(Self::from_params(params))
    }

    pub fn save(&self, path: &std::path::Path, meta: serde_json::Value) -> Result<(), ModelError> {
        let mut ck = self.checkpoint();
        ck.meta = meta;
        std::fs::write(path, serde_json::to_string(&ck)?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ModelError> {
        let ck: Checkpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::from_checkpoint(&ck)
    }
}

/// Serialized weights with per-layer shape headers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    #[serde(default)]
    pub meta: serde_json::Value,
    pub layers: Vec<LayerRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub name: String,
    /// `[n_out, n_in]`.
    pub shape: [usize; 2],
    pub activation: Activation,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Latent code of the free space, with vertices expressed in `reference`.
pub fn encode_map_r<R: Real>(ctx: R, fs: &FreeSpace, reference: &Pose2, model: &PlannerModel) -> Vec<R> {
    let layout = &model.layout;
    let mut pooled: Option<Vec<R>> = None;
    for quad in fs.quads() {
        let local: Vec<[f64; 2]> = quad
            .vertices()
            .iter()
            .map(|&v| {
                let p = reference.to_local(v);
                [p.x / INPUT_SCALE, p.y / INPUT_SCALE]
            })
            .collect();
        let mut code: Option<Vec<R>> = None;
        for k in 0..4 {
            let input: Vec<R> = (0..4).flat_map(|i| local[(i + k) % 4]).map(|c| ctx.lift(c)).collect();
            let out = model.mlp(&layout.map_encoder, input);
            code = Some(match code {
                None => out,
                Some(acc) => acc.into_iter().zip(out).map(|(a, b)| a + b).collect(),
            });
        }
        let code: Vec<R> = code.expect("four rotations").into_iter().map(|c| c * 0.25).collect();
        pooled = Some(match pooled {
            None => code,
            Some(acc) => acc.into_iter().zip(code).map(|(a, b)| a + b).collect(),
        });
    }
    model.mlp(&layout.map_head, pooled.expect("free space is non-empty"))
}

pub fn encode_map(fs: &FreeSpace, reference: &Pose2, model: &PlannerModel) -> Vec<f64> {
    encode_map_r(0.0, fs, reference, model)
}

/// State block input: the goal in the current frame.
pub fn state_features<R: Real>(current: &FrameR<R>, qd: &Pose2) -> [R; 4] {
    let ctx = current.x;
    let (lx, ly) = current.to_local(ctx.lift(qd.x()), ctx.lift(qd.y()));
    let (s, c) = qd.heading.sin_cos();
    // sin/cos of (goal heading - current heading) via angle difference.
    let sin_d = current.cos * s - current.sin * c;
    let cos_d = current.cos * c + current.sin * s;
    [lx / INPUT_SCALE, ly / INPUT_SCALE, sin_d, cos_d]
}

pub fn encode_state_r<R: Real>(current: &FrameR<R>, qd: &Pose2, model: &PlannerModel) -> Vec<R> {
    model.mlp(&model.layout.state, state_features(current, qd).to_vec())
}

pub fn encode_state(qi: &Pose2, qd: &Pose2, model: &PlannerModel) -> Vec<f64> {
    encode_state_r(&FrameR::from_pose(0.0, qi), qd, model)
}

/// Next gluing point from the two codes. The x head is squashed into
/// (0.1, 10.1).
pub fn predict_gluing_point_r<R: Real>(map_code: &[R], state_code: &[R], model: &PlannerModel) -> GluingPointR<R> {
    model.evaluations.fetch_add(1, Ordering::Relaxed);
    let joint: Vec<R> = map_code.iter().chain(state_code).copied().collect();
    let out: Vec<R> = model.layout.heads.iter().map(|h| model.mlp(h, joint.clone())[0]).collect();
    GluingPointR { x: out[0].sigmoid() * 10.0 + 0.1, y: out[1], dy: out[2], ddy: out[3] }
}

pub fn predict_gluing_point(map_code: &[f64], state_code: &[f64], model: &PlannerModel) -> crate::spline::GluingPoint {
    predict_gluing_point_r(map_code, state_code, model).value()
}

/// Result of a differentiable rollout: the chain of network segments, the
/// frame of the last gluing point and, when the goal could be reached, the
/// closing segment appended to the chain.
#[derive(Debug, Clone)]
pub struct Rollout<R> {
    pub chain: Chain<R>,
    pub last_frame: FrameR<R>,
    pub gluing_points: Vec<GluingPointR<R>>,
    pub closed: Result<(), SplineError>,
}

pub fn rollout_r<R: Real>(ctx: R, task: &TaskInput, model: &PlannerModel) -> Result<Rollout<R>, SplineError> {
    let map_code = encode_map_r(ctx, &task.fs, &task.qd, model);
    let mut chain = Chain::start(ctx, &task.q0);
    let mut gluing_points = Vec::with_capacity(ROLLOUT_STEPS);
    for _ in 0..ROLLOUT_STEPS {
        let state_code = encode_state_r(&chain.frame, &task.qd, model);
        let gp = predict_gluing_point_r(&map_code, &state_code, model);
        model.segment_solves.fetch_add(1, Ordering::Relaxed);
        chain.push(&gp)?;
        gluing_points.push(gp);
    }
    let last_frame = chain.frame;
    model.segment_solves.fetch_add(1, Ordering::Relaxed);
    let closed = chain.close(&task.qd);
    Ok(Rollout { chain, last_frame, gluing_points, closed })
}

/// Plans a path with exactly [`ROLLOUT_STEPS`] network evaluations.
pub fn rollout(task: &TaskInput, model: &PlannerModel) -> Result<PathSpline, SplineError> {
    let r = rollout_r(0.0, task, model)?;
    r.closed.clone()?;
    Ok(PathSpline {
        q0: task.q0,
        qd: task.qd,
        gluing_points: r.gluing_points.iter().map(GluingPointR::value).collect(),
        segments: r.chain.segments.iter().map(|s| s.plain()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Quadrangle, Rigid2};

    fn task() -> TaskInput {
        TaskInput {
            fs: FreeSpace::new(vec![
                Quadrangle::rect(-5.0, -4.0, 40.0, 4.0).unwrap(),
                Quadrangle::rect(10.0, 4.0, 14.0, 10.0).unwrap(),
            ])
            .unwrap(),
            q0: Pose2::new(0.0, 0.0, 0.0),
            qd: Pose2::new(30.0, 1.0, 0.1),
        }
    }

    #[test]
    fn layer_sizes() {
        let l = Layout::standard();
        assert_eq!(l.map_encoder.iter().map(|l| l.n_out).collect::<Vec<_>>(), [32, 128]);
        assert_eq!(l.map_head.iter().map(|l| l.n_out).collect::<Vec<_>>(), [64, 64]);
        assert_eq!(l.state.iter().map(|l| l.n_out).collect::<Vec<_>>(), [64, 256, 256, 256]);
        for h in &l.heads {
            assert_eq!(h.iter().map(|l| l.n_out).collect::<Vec<_>>(), [128, 64, 64, 1]);
            assert_eq!(h[3].activation, Activation::Identity);
        }
        assert!(l.layers().filter(|x| x.n_out != 1).all(|x| x.activation == Activation::Tanh));
    }

    #[test]
    fn zero_model_output() {
        let m = PlannerModel::zeros();
        let gp = predict_gluing_point(&vec![0.0; MAP_CODE], &vec![0.0; STATE_CODE], &m);
        assert_eq!(gp.x, 5.1);
        assert_eq!((gp.y, gp.dy, gp.ddy), (0.0, 0.0, 0.0));
    }

    #[test]
    fn identical_pose_state_input() {
        let f = FrameR::from_pose(0.0, &Pose2::new(3.0, -2.0, 0.7));
        let x = state_features(&f, &Pose2::new(3.0, -2.0, 0.7));
        assert!(x[0].abs() < 1e-15 && x[1].abs() < 1e-15 && x[2].abs() < 1e-15 && (x[3] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn state_encoding_rigid_invariant() {
        let m = PlannerModel::init(3);
        let (a, b) = (Pose2::new(1.0, 2.0, 0.3), Pose2::new(9.0, -1.0, -0.4));
        let r = Rigid2::new(1.1, -7.0, 4.0);
        let e1 = encode_state(&a, &b, &m);
        let e2 = encode_state(&r.pose(&a), &r.pose(&b), &m);
        assert!(e1.iter().zip(&e2).all(|(u, v)| (u - v).abs() < 1e-9));
    }

    #[test]
    fn rollout_counts_and_determinism() {
        let m = PlannerModel::init(1);
        let t = task();
        let before = (m.evaluations(), m.segment_solves());
        let p1 = rollout(&t, &m);
        assert_eq!(m.evaluations() - before.0, 6);
        assert_eq!(m.segment_solves() - before.1, 7);
        let p2 = rollout(&t, &m);
        assert_eq!(p1, p2);
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let m = PlannerModel::init(9);
        let s = serde_json::to_string(&m.checkpoint()).unwrap();
        let ck: Checkpoint = serde_json::from_str(&s).unwrap();
        assert_eq!(PlannerModel::from_checkpoint(&ck).unwrap(), m);
        let mut bad = ck.clone();
        bad.layers[0].shape = [31, 8];
        assert!(matches!(PlannerModel::from_checkpoint(&bad), Err(ModelError::Shape { .. })));
    }

    #[test]
    fn x_head_stays_in_range() {
        let mut m = PlannerModel::init(5);
        for p in &mut m.params {
            *p *= 40.0;
        }
        let mc = vec![0.3; MAP_CODE];
        let sc = vec![-0.7; STATE_CODE];
        let gp = predict_gluing_point(&mc, &sc, &m);
        assert!(gp.x > 0.1 && gp.x < 10.1 + 1e-12);
    }
}
