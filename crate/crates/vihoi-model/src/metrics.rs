//! Evaluation metric battery: joint position error, contact quality,
//! foot sliding, hand penetration, distribution distance, retrieval
//! precision, and diversity.

use nalgebra::DMatrix;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vihoi_core::math::{mat_vec, sub, transpose, Vec3};
use vihoi_core::mesh::ObjectMesh;
use vihoi_core::motion::{forward_kinematics, MotionSequence};
use vihoi_core::sdf::{unsigned_distance, Sdf};
use vihoi_core::skeleton::{Skeleton, LEFT_FOOT, LEFT_WRIST, RIGHT_FOOT, RIGHT_WRIST};
use vihoi_core::{FOOT_HEIGHT_MAX_M, PENETRATION_TOL_M};

use crate::evaluator::{EvalPair, EvaluatorModel};
use crate::{Error, Result};

pub const RETRIEVAL_BATCH: usize = 32;
pub const DIVERSITY_PAIRS: usize = 300;

/// Mean per-joint position error in centimeters.
pub fn mpjpe(pred: &MotionSequence, gt: &MotionSequence, skel: &Skeleton) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch(pred.len(), gt.len()));
    }
    let a = forward_kinematics(pred, skel)?;
    let b = forward_kinematics(gt, skel)?;
    let (l, j, _) = a.dim();
    let mut total = 0.0;
    for f in 0..l {
        for q in 0..j {
            let dx = a[[f, q, 0]] - b[[f, q, 0]];
            let dy = a[[f, q, 1]] - b[[f, q, 1]];
            let dz = a[[f, q, 2]] - b[[f, q, 2]];
            total += (dx * dx + dy * dy + dz * dz).sqrt();
        }
    }
    Ok(total / (l * j) as f64 * 100.0)
}

fn wrist_positions(seq: &MotionSequence, skel: &Skeleton) -> Result<Vec<[Vec3; 2]>> {
    let pos = forward_kinematics(seq, skel)?;
    Ok((0..seq.len())
        .map(|f| {
            [
                [pos[[f, LEFT_WRIST, 0]], pos[[f, LEFT_WRIST, 1]], pos[[f, LEFT_WRIST, 2]]],
                [pos[[f, RIGHT_WRIST, 0]], pos[[f, RIGHT_WRIST, 1]], pos[[f, RIGHT_WRIST, 2]]],
            ]
        })
        .collect())
}

/// Hand-contact labels implied by the geometry: a hand is in contact when
/// its distance to the posed object surface is at most `threshold` meters.
/// The world-space query is folded into the object's local frame, which is
/// exact because the pose is rigid.
pub fn predicted_contacts(
    seq: &MotionSequence,
    mesh: &ObjectMesh,
    skel: &Skeleton,
    threshold: f64,
) -> Result<Array2<bool>> {
    let wrists = wrist_positions(seq, skel)?;
    let mut out = Array2::from_elem((seq.len(), 2), false);
    for f in 0..seq.len() {
        let rot = seq.obj_rotation(f)?;
        let inv = transpose(&rot);
        let t = seq.obj_translation(f);
        for h in 0..2 {
            let local = mat_vec(&inv, sub(wrists[f][h], t));
            out[[f, h]] = unsigned_distance(mesh, local) <= threshold;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ContactReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Fraction of (frame, hand) slots predicted to be in contact.
    pub contact_pct: f64,
}

/// Precision/recall/F1 of geometric contact against annotated labels.
pub fn contact_metrics(
    pred: &MotionSequence,
    gt_labels: &Array2<bool>,
    mesh: &ObjectMesh,
    skel: &Skeleton,
    threshold: f64,
) -> Result<ContactReport> {
    if gt_labels.nrows() != pred.len() || gt_labels.ncols() != 2 {
        return Err(Error::LengthMismatch(pred.len(), gt_labels.nrows()));
    }
    let predicted = predicted_contacts(pred, mesh, skel, threshold)?;
    Ok(score_contacts(&predicted, gt_labels))
}

/// Confusion-matrix scores with the empty-set conventions: precision is 1
/// with no positive predictions, recall is 1 with no positive labels, and a
/// 0/0 harmonic mean collapses to 0.
pub fn score_contacts(predicted: &Array2<bool>, gt: &Array2<bool>) -> ContactReport {
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    let total = predicted.len();
    for (p, g) in predicted.iter().zip(gt.iter()) {
        match (p, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let precision = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_ == 0 { 1.0 } else { tp as f64 / (tp + fn_) as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    let contact_pct = if total == 0 { 0.0 } else { (tp + fp) as f64 / total as f64 };
    ContactReport { precision, recall, f1, contact_pct }
}

/// Foot sliding in cm per frame: horizontal foot displacement weighted by
/// closeness to the ground, w = clamp(1 - h/h_max, 0, 1), where h is the
/// mean foot height across the step and h_max is 5 cm. Averaged over both
/// feet and all frame transitions.
pub fn foot_sliding(seq: &MotionSequence, skel: &Skeleton) -> Result<f64> {
    let pos = forward_kinematics(seq, skel)?;
    let l = seq.len();
    if l < 2 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for foot in [LEFT_FOOT, RIGHT_FOOT] {
        for f in 0..l - 1 {
            let dx = pos[[f + 1, foot, 0]] - pos[[f, foot, 0]];
            let dz = pos[[f + 1, foot, 2]] - pos[[f, foot, 2]];
            let disp = (dx * dx + dz * dz).sqrt();
            let h = 0.5 * (pos[[f, foot, 1]] + pos[[f + 1, foot, 1]]);
            let w = (1.0 - h / FOOT_HEIGHT_MAX_M).clamp(0.0, 1.0);
            total += w * disp;
        }
    }
    Ok(total / (2 * (l - 1)) as f64 * 100.0)
}

/// Fraction of (frame, hand) pairs whose wrist sits more than `tol` meters
/// inside the posed object. The mesh must be watertight.
pub fn hand_penetration_with_tol(
    seq: &MotionSequence,
    mesh: &ObjectMesh,
    skel: &Skeleton,
    tol: f64,
) -> Result<f64> {
    let sdf = Sdf::new(mesh)?;
    let wrists = wrist_positions(seq, skel)?;
    let mut hits = 0usize;
    for f in 0..seq.len() {
        let rot = seq.obj_rotation(f)?;
        let inv = transpose(&rot);
        let t = seq.obj_translation(f);
        for h in 0..2 {
            let local = mat_vec(&inv, sub(wrists[f][h], t));
            if sdf.signed_distance(local) < -tol {
                hits += 1;
            }
        }
    }
    Ok(hits as f64 / (2 * seq.len()) as f64)
}

pub fn hand_penetration(seq: &MotionSequence, mesh: &ObjectMesh, skel: &Skeleton) -> Result<f64> {
    hand_penetration_with_tol(seq, mesh, skel, PENETRATION_TOL_M)
}

fn mean_and_cov(features: &Array2<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let (n, d) = features.dim();
    if n < 2 {
        return Err(Error::DegenerateCovariance(format!("{n} samples")));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateCovariance("non-finite feature".into()));
    }
    let mut mean = vec![0.0; d];
    for row in features.rows() {
        for (m, v) in mean.iter_mut().zip(row.iter()) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    // Population covariance so that symmetric +/- constructions reproduce a
    // target matrix exactly.
    let mut cov = DMatrix::zeros(d, d);
    for row in features.rows() {
        let dev: Vec<f64> = row.iter().zip(&mean).map(|(v, m)| v - m).collect();
        for i in 0..d {
            for j in i..d {
                cov[(i, j)] += dev[i] * dev[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            cov[(i, j)] /= n as f64;
            cov[(j, i)] = cov[(i, j)];
        }
    }
    // Few samples per dimension leave the covariance rank-deficient; blend
    // toward the isotropic matrix with the same trace.
    if n < 2 * d {
        let gamma = (2 * d - n) as f64 / (2 * d) as f64;
        let target: f64 = cov.trace() / d as f64;
        if !target.is_finite() {
            return Err(Error::DegenerateCovariance("shrinkage target".into()));
        }
        cov *= 1.0 - gamma;
        for i in 0..d {
            cov[(i, i)] += gamma * target;
        }
    }
    Ok((mean, cov))
}

fn sqrtm_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateCovariance("non-finite eigenvalue".into()));
    }
    let mut scaled = eig.eigenvectors.clone();
    for (c, &ev) in eig.eigenvalues.iter().enumerate() {
        let root = ev.max(0.0).sqrt();
        scaled.column_mut(c).scale_mut(root);
    }
    Ok(&scaled * eig.eigenvectors.transpose())
}

/// Frechet distance between the Gaussian fits of two feature sets:
/// ||mu_a - mu_b||^2 + Tr(Sa + Sb - 2 (Sa Sb)^(1/2)).
pub fn fid(features_a: &Array2<f64>, features_b: &Array2<f64>) -> Result<f64> {
    if features_a.ncols() != features_b.ncols() {
        return Err(Error::WidthMismatch { got: features_b.ncols(), want: features_a.ncols() });
    }
    let (mu_a, cov_a) = mean_and_cov(features_a)?;
    let (mu_b, cov_b) = mean_and_cov(features_b)?;
    let mean_term: f64 = mu_a.iter().zip(&mu_b).map(|(a, b)| (a - b) * (a - b)).sum();
    // (Sa Sb)^(1/2) computed through the symmetric product
    // sqrt(Sa) Sb sqrt(Sa), which shares its trace.
    let root_a = sqrtm_psd(&cov_a)?;
    let inner = &root_a * &cov_b * &root_a;
    let cross = sqrtm_psd(&inner)?;
    let value = mean_term + cov_a.trace() + cov_b.trace() - 2.0 * cross.trace();
    if !value.is_finite() {
        return Err(Error::DegenerateCovariance("non-finite distance".into()));
    }
    Ok(value.max(0.0))
}

/// Retrieval precision over matched (text, motion) embedding rows. Rows are
/// shuffled per seed and split into batches of exactly 32; the remainder is
/// dropped. Within a batch, each text ranks every motion by Euclidean
/// distance and top-k counts ranks within the first k.
pub fn r_precision_from_embeddings(
    text_emb: &Array2<f64>,
    motion_emb: &Array2<f64>,
    seed: u64,
) -> Result<(f64, f64, f64)> {
    if text_emb.dim() != motion_emb.dim() {
        return Err(Error::LengthMismatch(text_emb.nrows(), motion_emb.nrows()));
    }
    let n = text_emb.nrows();
    if n < RETRIEVAL_BATCH {
        return Err(Error::TooFewPairs { got: n, need: RETRIEVAL_BATCH });
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let batches = n / RETRIEVAL_BATCH;
    let mut hits = [0usize; 3];
    for b in 0..batches {
        let idx = &order[b * RETRIEVAL_BATCH..(b + 1) * RETRIEVAL_BATCH];
        for &i in idx {
            let own = row_dist2(text_emb, i, motion_emb, i);
            let better =
                idx.iter().filter(|&&j| j != i && row_dist2(text_emb, i, motion_emb, j) < own).count();
            for k in 0..3 {
                if better <= k {
                    hits[k] += 1;
                }
            }
        }
    }
    let total = (batches * RETRIEVAL_BATCH) as f64;
    Ok((hits[0] as f64 / total, hits[1] as f64 / total, hits[2] as f64 / total))
}

fn row_dist2(a: &Array2<f64>, i: usize, b: &Array2<f64>, j: usize) -> f64 {
    a.row(i).iter().zip(b.row(j).iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Embeds pairs with the evaluator and scores retrieval precision.
pub fn r_precision(
    model: &EvaluatorModel,
    pairs: &[EvalPair],
    seed: u64,
) -> Result<(f64, f64, f64)> {
    if pairs.len() < RETRIEVAL_BATCH {
        return Err(Error::TooFewPairs { got: pairs.len(), need: RETRIEVAL_BATCH });
    }
    let motions: Vec<Array2<f64>> = pairs.iter().map(|p| p.motion.clone()).collect();
    let texts: Vec<String> = pairs.iter().map(|p| p.text.clone()).collect();
    let t = embeddings_to_host(&model.embed_text_batch(&texts)?)?;
    let m = embeddings_to_host(&model.embed_motion_batch(&motions)?)?;
    r_precision_from_embeddings(&t, &m, seed)
}

pub fn embeddings_to_host(t: &candle_core::Tensor) -> Result<Array2<f64>> {
    let (n, d) = t.dims2()?;
    let flat = t.to_dtype(candle_core::DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
    Ok(Array2::from_shape_vec((n, d), flat).expect("shape from dims"))
}

/// Mean Euclidean distance over `pairs` random index pairs with distinct
/// endpoints, deterministic per seed.
pub fn diversity(features: &Array2<f64>, pairs: usize, seed: u64) -> Result<f64> {
    let n = features.nrows();
    if n < 2 {
        return Err(Error::Msg(format!("diversity needs at least 2 features, got {n}")));
    }
    if pairs == 0 {
        return Ok(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..pairs {
        let i = rng.gen_range(0..n);
        let mut j = rng.gen_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        total += row_dist2(features, i, features, j).sqrt();
    }
    Ok(total / pairs as f64)
}
