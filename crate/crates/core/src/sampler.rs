//! Masked Metropolis-adjusted Langevin sampling of grasps and the
//! sequential multi-object driver.

use std::sync::Arc;

use nalgebra::{Rotation3, Unit};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::{evaluate, EnergyBreakdown, EnergyWeights, Evaluation, HeldObject, SceneObject, SceneState};
use crate::error::{Error, Result};
use crate::geometry::ConvexHull;
use crate::hand::{rotation_between, GraspConfig, HandSpec, OppositionSpace, OsState, Pose, Side};
use crate::rotation::{matrix_to_rot6d, rot6d_to_matrix};
use crate::seed::{self, ChainRng, Stream};
use crate::validation::{validate_grasp, ObjectVerdict, ValidationParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AcceptanceRule {
    /// `min(1, exp((E - Ê) / T))`.
    Metropolis,
    /// Accept when `Ê / E >= u`.
    EnergyRatio,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerParams {
    pub steps: usize,
    /// Step sizes for the position, rotation and joint blocks.
    pub step_size: [f64; 3],
    /// Probability of redrawing the contact pair after each step.
    pub p_accept: f64,
    /// Temperature at the first and last step; annealed geometrically.
    pub temperature: (f64, f64),
    /// Multiplier on the Langevin noise.
    pub noise: f64,
    /// Penetration weight at the first and last step; ramped linearly.
    pub w_hop: (f64, f64),
    /// Distance (m) the initial palm position sits outside the object's hull.
    pub hull_offset: f64,
    /// Scale steps by a running RMS of the gradient.
    pub precondition: bool,
    pub precondition_decay: f64,
    pub acceptance: AcceptanceRule,
    /// Independent chains per grasp.
    pub chains: usize,
    pub record_trace: bool,
}

impl Default for SamplerParams {
    fn default() -> Self {
        Self {
            steps: 6000,
            step_size: [0.005, 0.02, 0.02],
            p_accept: 0.1,
            temperature: (1.0, 1e-2),
            noise: 1.0,
            w_hop: (5.0, 500.0),
            hull_offset: 0.10,
            precondition: true,
            precondition_decay: 0.98,
            acceptance: AcceptanceRule::Metropolis,
            chains: 64,
            record_trace: false,
        }
    }
}

impl SamplerParams {
    pub fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if self.step_size.iter().any(|s| !(*s > 0.0)) {
            return bad("step sizes must be positive");
        }
        if !(0.0..=1.0).contains(&self.p_accept) {
            return bad("p_accept must lie in [0, 1]");
        }
        if !(self.temperature.0 > 0.0 && self.temperature.1 > 0.0) {
            return bad("temperatures must be positive");
        }
        if !(self.noise >= 0.0) {
            return bad("noise must be nonnegative");
        }
        if !(self.hull_offset > 0.0) {
            return bad("hull offset must be positive");
        }
        if !(self.w_hop.0 >= 0.0 && self.w_hop.1 >= 0.0) {
            return bad("w_hop must be nonnegative");
        }
        if !(0.0..1.0).contains(&self.precondition_decay) {
            return bad("precondition decay must lie in [0, 1)");
        }
        if self.chains == 0 {
            return bad("need at least one chain");
        }
        Ok(())
    }

    pub fn temperature_at(&self, step: usize) -> f64 {
        let (t0, t1) = self.temperature;
        if self.steps <= 1 {
            return t1;
        }
        t0 * (t1 / t0).powf(step as f64 / (self.steps - 1) as f64)
    }

    pub fn weights_at(&self, step: usize) -> EnergyWeights {
        let (a, b) = self.w_hop;
        let f = if self.steps <= 1 {
            1.0
        } else {
            step as f64 / (self.steps - 1) as f64
        };
        EnergyWeights::dataset(a + (b - a) * f)
    }

    pub fn final_weights(&self) -> EnergyWeights {
        EnergyWeights::dataset(self.w_hop.1)
    }
}

pub fn accept<R: Rng + ?Sized>(rule: AcceptanceRule, current: f64, proposed: f64, temperature: f64, rng: &mut R) -> bool {
    let u: f64 = rng.random();
    if !proposed.is_finite() {
        return false;
    }
    match rule {
        AcceptanceRule::Metropolis => proposed <= current || u < ((current - proposed) / temperature).exp(),
        AcceptanceRule::EnergyRatio => {
            if current == 0.0 {
                return true;
            }
            proposed / current >= u
        }
    }
}

/// Masked Langevin proposal with an optional RMS preconditioner.
#[derive(Debug, Clone)]
pub struct MalaKernel {
    pub step: Vec<f64>,
    pub mask: Vec<bool>,
    pub noise: f64,
    decay: Option<f64>,
    second_moment: Option<Vec<f64>>,
}

const PRECONDITION_EPS: f64 = 1e-8;

impl MalaKernel {
    pub fn new(step: Vec<f64>, mask: Vec<bool>, noise: f64, precondition_decay: Option<f64>) -> Self {
        assert_eq!(step.len(), mask.len());
        Self {
            step,
            mask,
            noise,
            decay: precondition_decay,
            second_moment: None,
        }
    }

    /// `x - γ P ∇E + σ ξ` on masked entries; other entries are copied bit-for-bit.
    pub fn propose<R: Rng + ?Sized>(&mut self, x: &[f64], grad: &[f64], temperature: f64, rng: &mut R) -> Vec<f64> {
        let scale: Vec<f64> = match self.decay {
            Some(beta) => {
                let v = self.second_moment.get_or_insert_with(|| grad.iter().map(|g| g * g).collect());
                for (vi, g) in v.iter_mut().zip(grad) {
                    *vi = beta * *vi + (1.0 - beta) * g * g;
                }
                v.iter().map(|vi| 1.0 / (vi.sqrt() + PRECONDITION_EPS)).collect()
            }
            None => vec![1.0; x.len()],
        };
        let mut out = x.to_vec();
        for i in 0..x.len() {
            if !self.mask[i] {
                continue;
            }
            let h = self.step[i] * scale[i];
            let xi: f64 = rng.sample(StandardNormal);
            out[i] = x[i] - h * grad[i] + self.noise * (2.0 * h * temperature).sqrt() * xi;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainStats {
    pub accepted: usize,
    pub rejected: usize,
    pub non_finite: usize,
    pub resamples: usize,
    pub evaluations: usize,
}

/// Energies (at the step's weights) seen by one accept/reject decision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub current: f64,
    /// NaN when the proposal could not be evaluated.
    pub proposed: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone)]
pub struct ChainState {
    pub g: Vec<f64>,
    pub pair: (usize, usize),
    pub eval: Evaluation,
    pub rng: ChainRng,
    pub kernel: MalaKernel,
    /// `(index, value)` of every entry the chain may not change.
    pub frozen: Vec<(usize, f64)>,
    pub stats: ChainStats,
}

impl ChainState {
    pub fn frozen_intact(&self) -> bool {
        self.frozen.iter().all(|&(i, v)| self.g[i].to_bits() == v.to_bits())
    }

    pub fn config(&self) -> GraspConfig {
        GraspConfig::from_slice(&self.g).expect("chain state has full dimension")
    }
}

/// One independent chain's outcome.
#[derive(Debug, Clone)]
pub struct ChainResult {
    pub chain: usize,
    pub g: GraspConfig,
    pub pair: (usize, usize),
    /// At the final weights.
    pub breakdown: EnergyBreakdown,
    pub trace: Option<Vec<f64>>,
    pub stats: ChainStats,
}

/// One contact candidate index from each side, uniformly.
pub fn sample_contact_pair<R: Rng + ?Sized>(os: &OppositionSpace, rng: &mut R) -> Result<(usize, usize)> {
    let a = os.side_indices(Side::A);
    let b = os.side_indices(Side::B);
    if a.is_empty() || b.is_empty() {
        return Err(Error::OneSidedContacts(os.id));
    }
    Ok((a[rng.random_range(0..a.len())], b[rng.random_range(0..b.len())]))
}

/// Initial grasp: palm on the inflated hull facing the hull centroid with a
/// random roll, fingers at rest for the first object and carried over after.
pub fn init_grasp<R: Rng + ?Sized>(
    spec: &HandSpec,
    hull: &ConvexHull,
    offset: f64,
    previous_joints: Option<&[f64]>,
    rng: &mut R,
) -> GraspConfig {
    let (p, inward) = hull.sample_expanded(offset, rng);
    let align = rotation_between(&spec.approach_axis, &inward);
    let roll = Rotation3::from_axis_angle(&Unit::new_normalize(inward), rng.random_range(0.0..std::f64::consts::TAU));
    let r = roll.into_inner() * align;
    let joints = previous_joints.map(|j| j.to_vec()).unwrap_or_else(|| spec.rest_pose.clone());
    GraspConfig::new(p, matrix_to_rot6d(&r), joints)
}

/// Replace the 6D rotation block with the orthonormal columns it maps to.
/// The rotation is unchanged; degenerate blocks are left for evaluation to reject.
fn canonicalize_rotation(g: &mut [f64]) {
    let r: [f64; 6] = g[3..9].try_into().expect("grasp vector has a rotation block");
    if let Ok(m) = rot6d_to_matrix(&r) {
        g[3..9].copy_from_slice(&matrix_to_rot6d(&m));
    }
}

/// Everything fixed while optimizing one grasp.
pub struct GraspProblem<'a> {
    pub scene: &'a SceneState,
    pub os: &'a OppositionSpace,
    /// Joints the grasp may move.
    pub mask: &'a [bool],
    pub params: &'a SamplerParams,
    hull: ConvexHull,
}

impl<'a> GraspProblem<'a> {
    pub fn new(scene: &'a SceneState, os: &'a OppositionSpace, mask: &'a [bool], params: &'a SamplerParams) -> Result<Self> {
        params.check()?;
        if mask.len() != scene.hand.dof() {
            return Err(Error::InvalidParameter(format!(
                "joint mask has {} entries, hand has {} joints",
                mask.len(),
                scene.hand.dof()
            )));
        }
        if !mask.iter().any(|&b| b) {
            return Err(Error::InvalidParameter(format!("opposition space {} has no free joints", os.label)));
        }
        let hull = ConvexHull::new(&scene.target.mesh.vertices)?;
        Ok(Self {
            scene,
            os,
            mask,
            params,
            hull,
        })
    }

    fn evaluate(&self, g: &[f64], pair: (usize, usize)) -> Option<Evaluation> {
        let cfg = GraspConfig::from_slice(g).ok()?;
        evaluate(self.scene, self.os, pair, &cfg, true).ok().filter(|e| e.is_finite())
    }

    /// Initialize a chain from `seed`.
    pub fn init_chain(&self, seed: u64, previous_joints: Option<&[f64]>) -> Result<ChainState> {
        let mut rng = seed::rng(seed);
        let g = init_grasp(&self.scene.hand, &self.hull, self.params.hull_offset, previous_joints, &mut rng).to_vec();
        let pair = sample_contact_pair(self.os, &mut rng)?;
        let eval = self
            .evaluate(&g, pair)
            .ok_or_else(|| Error::InvalidParameter("initial grasp has non-finite energy".into()))?;
        let dim = g.len();
        let mut update = vec![true; 9];
        update.extend(self.mask.iter().copied());
        let [sp, sr, sj] = self.params.step_size;
        let step: Vec<f64> = (0..dim).map(|i| if i < 3 { sp } else if i < 9 { sr } else { sj }).collect();
        let frozen = (0..dim).filter(|&i| !update[i]).map(|i| (i, g[i])).collect();
        let kernel = MalaKernel::new(
            step,
            update,
            self.params.noise,
            self.params.precondition.then_some(self.params.precondition_decay),
        );
        Ok(ChainState {
            g,
            pair,
            eval,
            rng,
            kernel,
            frozen,
            stats: ChainStats {
                evaluations: 1,
                ..Default::default()
            },
        })
    }

    /// One masked Langevin proposal and accept/reject at iteration `t`.
    pub fn mala_step(&self, chain: &mut ChainState, t: usize) -> StepOutcome {
        let w = self.params.weights_at(t);
        let temp = self.params.temperature_at(t);
        let grad = chain.eval.gradient(&w);
        let mut proposal = chain.kernel.propose(&chain.g, &grad, temp, &mut chain.rng);
        canonicalize_rotation(&mut proposal);
        chain.stats.evaluations += 1;
        let next = self.evaluate(&proposal, chain.pair);
        let current = chain.eval.total(&w);
        let proposed = next.as_ref().map_or(f64::NAN, |e| e.total(&w));
        if next.is_none() {
            chain.stats.non_finite += 1;
        }
        let accepted = accept(self.params.acceptance, current, proposed, temp, &mut chain.rng);
        if accepted {
            chain.g = proposal;
            chain.eval = next.expect("accepted proposals are finite");
            chain.stats.accepted += 1;
        } else {
            chain.stats.rejected += 1;
        }
        StepOutcome {
            current,
            proposed,
            accepted,
        }
    }

    /// With probability `p_accept`, redraw the contact pair and re-evaluate.
    pub fn resample_contacts(&self, chain: &mut ChainState, p_accept: f64) -> Result<bool> {
        if !chain.rng.random_bool(p_accept) {
            return Ok(false);
        }
        let pair = sample_contact_pair(self.os, &mut chain.rng)?;
        chain.stats.evaluations += 1;
        chain.stats.resamples += 1;
        if let Some(e) = self.evaluate(&chain.g, pair) {
            chain.pair = pair;
            chain.eval = e;
        }
        Ok(true)
    }

    /// Run a full chain and return its lowest-energy visited state, ranked
    /// at the final weights.
    pub fn run_chain(&self, chain_index: usize, seed: u64, previous_joints: Option<&[f64]>) -> Result<ChainResult> {
        let mut chain = self.init_chain(seed, previous_joints)?;
        let wf = self.params.final_weights();
        let mut best = (chain.eval.total(&wf), chain.g.clone(), chain.pair, chain.eval.terms);
        let mut trace = self.params.record_trace.then(|| vec![best.0]);
        for t in 0..self.params.steps {
            self.mala_step(&mut chain, t);
            self.resample_contacts(&mut chain, self.params.p_accept)?;
            let e = chain.eval.total(&wf);
            if let Some(tr) = trace.as_mut() {
                tr.push(e);
            }
            if e < best.0 {
                best = (e, chain.g.clone(), chain.pair, chain.eval.terms);
            }
        }
        debug_assert!(chain.frozen_intact());
        Ok(ChainResult {
            chain: chain_index,
            g: GraspConfig::from_slice(&best.1)?,
            pair: best.2,
            breakdown: EnergyBreakdown::new(best.3, &wf),
            trace,
            stats: chain.stats,
        })
    }

    /// Run `chains` chains in parallel with seeds derived from `grasp_seed`.
    pub fn run_chains(&self, chains: usize, grasp_seed: u64, previous_joints: Option<&[f64]>) -> Result<Vec<ChainResult>> {
        (0..chains)
            .into_par_iter()
            .map(|c| self.run_chain(c, seed::chain_seed(grasp_seed, c), previous_joints))
            .collect()
    }
}

/// Single-chain convenience wrapper: the grasp, its breakdown and trace.
pub fn optimize_grasp(
    scene: &SceneState,
    os: &OppositionSpace,
    mask: &[bool],
    params: &SamplerParams,
    seed: u64,
    previous_joints: Option<&[f64]>,
) -> Result<ChainResult> {
    GraspProblem::new(scene, os, mask, params)?.run_chain(0, seed, previous_joints)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    AllObjectsDone,
    OsExhausted,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SequenceStep {
    pub os_id: usize,
    pub label: String,
    /// Joints this grasp moved; frozen afterwards.
    pub mask: Vec<bool>,
    pub g: GraspConfig,
    pub pair: (usize, usize),
    pub breakdown: EnergyBreakdown,
    pub chain: usize,
    /// Validation of the chosen chain at selection time.
    pub verdict: ObjectVerdict,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraspSequenceResult {
    pub steps: Vec<SequenceStep>,
    pub termination: Termination,
}

impl GraspSequenceResult {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceParams {
    pub sampler: SamplerParams,
    pub validation: ValidationParams,
}

/// Pick the lowest-energy chain that validates, or the lowest-energy chain.
fn choose_chain(
    results: Vec<ChainResult>,
    scene: &SceneState,
    os: &OppositionSpace,
    mask: &[bool],
    params: &ValidationParams,
) -> Result<(ChainResult, ObjectVerdict)> {
    let mut order: Vec<ChainResult> = results;
    order.sort_by(|a, b| a.breakdown.total.total_cmp(&b.breakdown.total).then(a.chain.cmp(&b.chain)));
    let mut first = None;
    for r in order {
        let v = validate_grasp(&r.g, scene, os, mask, params)?;
        if v.success() {
            return Ok((r, v));
        }
        if first.is_none() {
            first = Some((r, v));
        }
    }
    first.ok_or_else(|| Error::InvalidParameter("no chains were run".into()))
}

/// Grasp `objects` in order, one opposition space per object, holding each
/// grasped object in the hand for the rest of the sequence.
pub fn seqgrasp(hand: &Arc<HandSpec>, objects: &[SceneObject], params: &SequenceParams, sequence_seed: u64) -> Result<GraspSequenceResult> {
    if objects.is_empty() {
        return Err(Error::InvalidParameter("need at least one object".into()));
    }
    if hand.os_catalog.is_empty() {
        return Err(Error::InvalidParameter("hand has no opposition spaces".into()));
    }
    let mut state = OsState::new(hand);
    let mut held: Vec<HeldObject> = Vec::new();
    let mut steps: Vec<SequenceStep> = Vec::new();
    let mut termination = Termination::AllObjectsDone;
    for (n, object) in objects.iter().enumerate() {
        if state.is_exhausted() {
            termination = Termination::OsExhausted;
            break;
        }
        let gseed = seed::grasp_seed(sequence_seed, n);
        let chosen = state.select(&mut seed::rng(seed::stream(gseed, Stream::OsSelect)))?.clone();
        let os = &hand.os_catalog[chosen.id];
        let scene = SceneState {
            hand: hand.clone(),
            target: object.clone(),
            held: held.clone(),
        };
        let previous = steps.last().map(|s| s.g.joints.as_slice());
        let problem = GraspProblem::new(&scene, os, &chosen.mask, &params.sampler)?;
        let results = problem.run_chains(params.sampler.chains, gseed, previous)?;
        let (best, verdict) = choose_chain(results, &scene, os, &chosen.mask, &params.validation)?;
        log::debug!(
            "object {n}: {} chain {} E={:.4} {}",
            os.label,
            best.chain,
            best.breakdown.total,
            if verdict.success() { "valid" } else { "invalid" }
        );
        let base = hand.forward_kinematics(&best.g)?.base;
        held.push(HeldObject {
            object: object.clone(),
            attach: base.inverse().compose(&Pose::identity()),
        });
        steps.push(SequenceStep {
            os_id: chosen.id,
            label: os.label.clone(),
            mask: chosen.mask.clone(),
            g: best.g,
            pair: best.pair,
            breakdown: best.breakdown,
            chain: best.chain,
            verdict,
        });
        state = state.consume(chosen.id)?;
    }
    Ok(GraspSequenceResult { steps, termination })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::TriMesh;
    use crate::hand::builtin;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_scene() -> SceneState {
        let obj = SceneObject::build("ball", TriMesh::icosphere(0.025, 2), 24, 1).unwrap();
        SceneState::new(Arc::new(builtin::toy_gripper()), obj)
    }

    fn quick() -> SamplerParams {
        SamplerParams {
            steps: 50,
            chains: 2,
            ..Default::default()
        }
    }

    #[test]
    fn single_candidate_per_side() {
        let mut os = builtin::toy_gripper().os_catalog[0].clone();
        os.contacts = vec![os.contacts[0], os.contacts[6]];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10 {
            assert_eq!(sample_contact_pair(&os, &mut rng).unwrap(), (0, 1));
        }
        os.contacts.pop();
        assert!(matches!(sample_contact_pair(&os, &mut rng), Err(Error::OneSidedContacts(_))));
    }

    #[test]
    fn contact_pair_uniformity() {
        let os = &builtin::toy_gripper().os_catalog[0];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 10_000;
        let mut counts = [0usize; 12];
        for _ in 0..n {
            let (a, b) = sample_contact_pair(os, &mut rng).unwrap();
            assert_eq!(os.contacts[a].side, Side::A);
            assert_eq!(os.contacts[b].side, Side::B);
            counts[a] += 1;
            counts[b] += 1;
        }
        let p = 1.0 / 6.0;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * p).abs() < 3.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn metropolis_always_accepts_improvements() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let e: f64 = rng.random_range(0.0..10.0);
            let d: f64 = rng.random_range(1e-12..1.0);
            assert!(accept(AcceptanceRule::Metropolis, e, e - d, 1e-3, &mut rng));
        }
        assert!(!accept(AcceptanceRule::Metropolis, 1.0, f64::NAN, 1.0, &mut rng));
        assert!(!accept(AcceptanceRule::Metropolis, 1.0, 1e6, 1e-2, &mut rng));
    }

    #[test]
    fn energy_ratio_rule_as_written() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // doubling the energy is always accepted under the ratio rule
        for _ in 0..100 {
            assert!(accept(AcceptanceRule::EnergyRatio, 1.0, 2.0, 1.0, &mut rng));
        }
    }

    #[test]
    fn schedules() {
        let p = SamplerParams {
            steps: 11,
            ..Default::default()
        };
        assert_eq!(p.weights_at(0).0, [50.0, 50.0, 5.0, 5.0, 1.0, 5.0]);
        assert_eq!(p.weights_at(10).0[2], 500.0);
        assert!((p.weights_at(5).0[2] - 252.5).abs() < 1e-12);
        assert!((p.temperature_at(0) - 1.0).abs() < 1e-15);
        assert!((p.temperature_at(10) - 1e-2).abs() < 1e-15);
        assert!((p.temperature_at(5) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn zero_steps_returns_initialization() {
        let scene = toy_scene();
        let spec = scene.hand.clone();
        let os = &spec.os_catalog[0];
        let params = SamplerParams {
            steps: 0,
            ..quick()
        };
        let mask = os.mask.clone();
        let problem = GraspProblem::new(&scene, os, &mask, &params).unwrap();
        let init = problem.init_chain(42, None).unwrap();
        let r = problem.run_chain(0, 42, None).unwrap();
        assert_eq!(r.g.to_vec(), init.g);
        assert_eq!(r.g.joints, spec.rest_pose);
    }

    #[test]
    fn empty_mask_moves_only_the_base() {
        let scene = toy_scene();
        let os = &scene.hand.os_catalog[0];
        let params = quick();
        let mask = vec![false; 4];
        assert!(GraspProblem::new(&scene, os, &mask, &params).is_err());
        // a kernel with the joint block masked out never touches it
        let mut update = vec![true; 9];
        update.extend([false; 4]);
        let mut k = MalaKernel::new(vec![0.01; 13], update, 1.0, Some(0.9));
        let x: Vec<f64> = (0..13).map(|i| i as f64 * 0.1).collect();
        let g = vec![1.0; 13];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let y = k.propose(&x, &g, 1.0, &mut rng);
            assert!(y[9..].iter().zip(&x[9..]).all(|(a, b)| a.to_bits() == b.to_bits()));
            assert!(y[..9] != x[..9]);
        }
    }

    #[test]
    fn init_faces_object_and_lies_outside() {
        let scene = toy_scene();
        let hull = ConvexHull::new(&scene.target.mesh.vertices).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let g = init_grasp(&scene.hand, &hull, 0.1, None, &mut rng);
            assert!(scene.target.sdf.value(&g.position) > 0.0);
            let r = crate::rotation::rot6d_to_matrix(&g.rotation).unwrap();
            let facing = r * scene.hand.approach_axis;
            assert!(facing.dot(&(-g.position).normalize()) > 0.999);
        }
        let prev = vec![0.1, 0.2, 0.3, 0.4];
        let g = init_grasp(&scene.hand, &hull, 0.1, Some(&prev), &mut rng);
        assert_eq!(g.joints, prev);
    }

    #[test]
    fn resampling_rate() {
        let scene = toy_scene();
        let os = &scene.hand.os_catalog[0];
        let params = quick();
        let mask = os.mask.clone();
        let problem = GraspProblem::new(&scene, os, &mask, &params).unwrap();
        let mut chain = problem.init_chain(6, None).unwrap();
        assert!((0..200).all(|_| !problem.resample_contacts(&mut chain, 0.0).unwrap()));
        assert!((0..200).all(|_| problem.resample_contacts(&mut chain, 1.0).unwrap()));
        let n = 10_000;
        let hits = (0..n).filter(|_| problem.resample_contacts(&mut chain, 0.1).unwrap()).count();
        let sd = (n as f64 * 0.1 * 0.9).sqrt();
        assert!((hits as f64 - 1000.0).abs() < 3.0 * sd, "{hits}");
    }

    #[test]
    fn chain_is_deterministic_and_within_budget() {
        let scene = toy_scene();
        let os = &scene.hand.os_catalog[0];
        let params = SamplerParams {
            record_trace: true,
            ..quick()
        };
        let mask = os.mask.clone();
        let problem = GraspProblem::new(&scene, os, &mask, &params).unwrap();
        let a = problem.run_chain(0, 9, None).unwrap();
        let b = problem.run_chain(0, 9, None).unwrap();
        assert_eq!(a.g, b.g);
        assert_eq!(a.trace, b.trace);
        assert!(a.stats.evaluations <= 2 * params.steps + a.stats.resamples);
        let trace = a.trace.unwrap();
        let min = trace.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(min, a.breakdown.total);
    }

    #[test]
    fn quadratic_toy_mean_converges() {
        let target = [0.3, -0.7];
        let (gamma, temp) = (0.1, 0.05);
        let mut k = MalaKernel::new(vec![gamma; 2], vec![true; 2], 1.0, None);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let energy = |x: &[f64]| 0.5 * ((x[0] - target[0]).powi(2) + (x[1] - target[1]).powi(2));
        let mut x = vec![2.0, 2.0];
        let mut sum = [0.0; 2];
        let n = 20_000;
        let burn = 1_000;
        for t in 0..n + burn {
            let grad = [x[0] - target[0], x[1] - target[1]];
            let y = k.propose(&x, &grad, temp, &mut rng);
            if accept(AcceptanceRule::Metropolis, energy(&x), energy(&y), temp, &mut rng) {
                x = y;
            }
            if t >= burn {
                sum[0] += x[0];
                sum[1] += x[1];
            }
        }
        // stationary sd sqrt(T), autocorrelation time about 1/γ
        let tol = 4.0 * (temp * 2.0 / (gamma * n as f64)).sqrt();
        for a in 0..2 {
            assert!((sum[a] / n as f64 - target[a]).abs() < tol, "{:?}", sum);
        }
    }
}
