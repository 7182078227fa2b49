//! Evaluation: Fréchet distances on kinetic/geometric motion features,
//! diversity, beat alignment, and music-reconstruction error.
//!
//! Feature layouts are pinned by a data file (`geometric_features.json`) and
//! by the joint order of the skeleton, so numbers are comparable across runs
//! of this codebase — and only across runs of this codebase; the upstream
//! conventions these metrics descend from never standardized the extractors.

use serde::{Deserialize, Serialize};

use crate::audiofeat::{ACOUSTIC_DIMS, FEAT_DIMS, SEMANTIC_DIMS};
use crate::autodiff::Tensor;
use crate::error::{CoreError, Result};
use crate::motion::{self, Skeleton, JOINTS};
use crate::scalar::Scalar;

/// Smoothing and kernel width (frames) shared by beat detection and the
/// alignment score.
pub const BEAT_SIGMA: f64 = 3.0;

pub const KINETIC_DIMS: usize = 3 * JOINTS;
pub const GEOMETRIC_DIMS: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureVariant {
    Kinetic,
    Geometric,
}

// ------------------------------------------------------------- features ----

/// Mean squared joint velocity, per joint per axis, over forward-kinematics
/// positions: 24 x 3 = 72 dims. Motion must have at least 2 frames.
pub fn kinetic_features<S: Scalar>(
    pose: &Tensor<S>,
    skel: &Skeleton<S>,
    fps: f64,
) -> Result<Vec<f64>> {
    let pos = positions_f64(pose, skel)?;
    let t = pos.len() / (3 * JOINTS);
    if t < 2 {
        return Err(CoreError::Invalid(format!(
            "kinetic features need at least 2 frames, got {t}"
        )));
    }
    let mut out = vec![0.0f64; KINETIC_DIMS];
    let w = 3 * JOINTS;
    for i in 0..t - 1 {
        for d in 0..w {
            let v = (pos[(i + 1) * w + d] - pos[i * w + d]) * fps;
            out[d] += v * v;
        }
    }
    let norm = (t - 1) as f64;
    for v in &mut out {
        *v /= norm;
    }
    Ok(out)
}

#[derive(Deserialize)]
struct GeometricSpecFile {
    distances: Vec<[String; 2]>,
    heights: Vec<String>,
}

/// The declared list of inter-joint distances and joint heights whose
/// per-clip mean/std make up the 32-dim geometric vector.
pub struct GeometricSpec {
    pairs: Vec<(usize, usize)>,
    heights: Vec<usize>,
}

impl GeometricSpec {
    pub fn standard<S: Scalar>(skel: &Skeleton<S>) -> Result<GeometricSpec> {
        let raw: GeometricSpecFile =
            serde_json::from_str(include_str!("data/geometric_features.json"))
                .map_err(|e| CoreError::Invalid(format!("geometric feature list: {e}")))?;
        let find = |name: &str| {
            skel.joint_index(name)
                .ok_or_else(|| CoreError::Invalid(format!("unknown joint `{name}` in feature list")))
        };
        let pairs = raw
            .distances
            .iter()
            .map(|[a, b]| Ok((find(a)?, find(b)?)))
            .collect::<Result<Vec<_>>>()?;
        let heights = raw
            .heights
            .iter()
            .map(|n| find(n))
            .collect::<Result<Vec<_>>>()?;
        let spec = GeometricSpec { pairs, heights };
        debug_assert_eq!(2 * (spec.pairs.len() + spec.heights.len()), GEOMETRIC_DIMS);
        Ok(spec)
    }
}

/// Mean and standard deviation over time of each declared distance and
/// height: `[d0_mean, d0_std, ..., h0_mean, h0_std, ...]`, 32 dims.
pub fn geometric_features<S: Scalar>(
    pose: &Tensor<S>,
    skel: &Skeleton<S>,
    spec: &GeometricSpec,
) -> Result<Vec<f64>> {
    let pos = positions_f64(pose, skel)?;
    let w = 3 * JOINTS;
    let t = pos.len() / w;
    if t < 2 {
        return Err(CoreError::Invalid(format!(
            "geometric features need at least 2 frames, got {t}"
        )));
    }
    let mut series = Vec::with_capacity(t);
    let mut out = Vec::with_capacity(GEOMETRIC_DIMS);
    for &(a, b) in &spec.pairs {
        series.clear();
        for i in 0..t {
            let pa = &pos[i * w + 3 * a..i * w + 3 * a + 3];
            let pb = &pos[i * w + 3 * b..i * w + 3 * b + 3];
            let d = ((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2) + (pa[2] - pb[2]).powi(2))
                .sqrt();
            series.push(d);
        }
        let (m, s) = mean_std(&series);
        out.push(m);
        out.push(s);
    }
    for &j in &spec.heights {
        series.clear();
        for i in 0..t {
            series.push(pos[i * w + 3 * j + 1]); // y is up
        }
        let (m, s) = mean_std(&series);
        out.push(m);
        out.push(s);
    }
    Ok(out)
}

pub fn motion_features<S: Scalar>(
    pose: &Tensor<S>,
    variant: FeatureVariant,
    skel: &Skeleton<S>,
    fps: f64,
) -> Result<Vec<f64>> {
    match variant {
        FeatureVariant::Kinetic => kinetic_features(pose, skel, fps),
        FeatureVariant::Geometric => {
            let spec = GeometricSpec::standard(skel)?;
            geometric_features(pose, skel, &spec)
        }
    }
}

fn positions_f64<S: Scalar>(pose: &Tensor<S>, skel: &Skeleton<S>) -> Result<Vec<f64>> {
    let pos = motion::pose_to_positions(pose, skel)?;
    Ok(pos.data().iter().map(|v| v.as_f64()).collect())
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.max(0.0).sqrt())
}

// ------------------------------------------------------ eigensolver, FID ----

/// Cyclic Jacobi eigendecomposition of a symmetric matrix (row-major, n*n).
/// Returns (eigenvalues, eigenvectors) with `vecs[i*n + k]` = component i of
/// eigenvector k, so A = V diag(vals) V^T.
pub fn jacobi_eigh(a: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(a.len(), n * n);
    let mut m = a.to_vec();
    let mut v = vec![0.0f64; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
    for _sweep in 0..60 {
        let off: f64 = (0..n)
            .flat_map(|p| ((p + 1)..n).map(move |q| (p, q)))
            .map(|(p, q)| m[p * n + q] * m[p * n + q])
            .sum();
        if off.sqrt() <= 1e-14 * scale {
            break;
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let (app, aqq) = (m[p * n + p], m[q * n + q]);
                m[p * n + p] = c * c * app - 2.0 * s * c * apq + s * s * aqq;
                m[q * n + q] = s * s * app + 2.0 * s * c * apq + c * c * aqq;
                m[p * n + q] = 0.0;
                m[q * n + p] = 0.0;
                for i in 0..n {
                    if i != p && i != q {
                        let aip = m[i * n + p];
                        let aiq = m[i * n + q];
                        m[i * n + p] = c * aip - s * aiq;
                        m[i * n + q] = s * aip + c * aiq;
                        m[p * n + i] = m[i * n + p];
                        m[q * n + i] = m[i * n + q];
                    }
                }
                for i in 0..n {
                    let vip = v[i * n + p];
                    let viq = v[i * n + q];
                    v[i * n + p] = c * vip - s * viq;
                    v[i * n + q] = s * vip + c * viq;
                }
            }
        }
    }
    let vals = (0..n).map(|i| m[i * n + i]).collect();
    (vals, v)
}

/// Clamp tiny negative eigenvalues of a nominally-PSD matrix to zero;
/// anything below -1e-6 is a real failure.
fn psd_eigenvalues(vals: &[f64], context: &str) -> Result<Vec<f64>> {
    vals.iter()
        .map(|&l| {
            if l < -1e-6 {
                Err(CoreError::Numerical(format!(
                    "{context}: eigenvalue {l:.3e} below the PSD floor"
                )))
            } else {
                Ok(l.max(0.0))
            }
        })
        .collect()
}

fn mat_mul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0f64; n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..n {
                out[i * n + j] += aik * b[k * n + j];
            }
        }
    }
    out
}

/// Mean vector and sample covariance (n-1 denominator) of a feature set.
fn moments(set: &[Vec<f64>], d: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = set.len();
    let mut mu = vec![0.0f64; d];
    for x in set {
        for (m, v) in mu.iter_mut().zip(x) {
            *m += v;
        }
    }
    for m in &mut mu {
        *m /= n as f64;
    }
    let mut cov = vec![0.0f64; d * d];
    for x in set {
        for i in 0..d {
            let di = x[i] - mu[i];
            for j in i..d {
                cov[i * d + j] += di * (x[j] - mu[j]);
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..d {
        for j in i..d {
            cov[i * d + j] /= denom;
            cov[j * d + i] = cov[i * d + j];
        }
    }
    if cov.iter().any(|v| !v.is_finite()) || mu.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::Numerical("covariance is non-finite".into()));
    }
    Ok((mu, cov))
}

/// Fréchet distance between two feature sets:
/// `||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a S_b)^{1/2})`, the cross term
/// evaluated through the symmetric product `S_a^{1/2} S_b S_a^{1/2}`. Sets
/// smaller than the dimensionality get `+1e-4 I` shrinkage on both
/// covariances; the flag reports whether that happened.
pub fn fid(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<(f64, bool)> {
    let d = match (a.first(), b.first()) {
        (Some(x), Some(y)) if x.len() == y.len() => x.len(),
        (Some(x), Some(y)) => {
            return Err(CoreError::Invalid(format!(
                "feature widths differ: {} vs {}",
                x.len(),
                y.len()
            )))
        }
        _ => return Err(CoreError::Invalid("empty feature set".into())),
    };
    if a.len() < 2 || b.len() < 2 {
        return Err(CoreError::Invalid(format!(
            "need at least 2 vectors per set, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|x| x.len() != d) {
        return Err(CoreError::Invalid("ragged feature set".into()));
    }
    let (mu_a, mut cov_a) = moments(a, d)?;
    let (mu_b, mut cov_b) = moments(b, d)?;
    let shrink = a.len() < d || b.len() < d;
    if shrink {
        for i in 0..d {
            cov_a[i * d + i] += 1e-4;
            cov_b[i * d + i] += 1e-4;
        }
    }

    let mean_term: f64 = mu_a
        .iter()
        .zip(&mu_b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();

    // S_a^{1/2} from the eigendecomposition of S_a
    let (vals_a, vecs_a) = jacobi_eigh(&cov_a, d);
    let vals_a = psd_eigenvalues(&vals_a, "covariance A")?;
    let mut sqrt_a = vec![0.0f64; d * d];
    for k in 0..d {
        let sl = vals_a[k].sqrt();
        if sl == 0.0 {
            continue;
        }
        for i in 0..d {
            let vik = vecs_a[i * d + k] * sl;
            if vik == 0.0 {
                continue;
            }
            for j in i..d {
                sqrt_a[i * d + j] += vik * vecs_a[j * d + k];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            sqrt_a[j * d + i] = sqrt_a[i * d + j];
        }
    }

    let inner = mat_mul(&sqrt_a, &mat_mul(&cov_b, &sqrt_a, d), d);
    // symmetrize away the O(eps) asymmetry from the two multiplications
    let mut sym = inner.clone();
    for i in 0..d {
        for j in 0..d {
            sym[i * d + j] = 0.5 * (inner[i * d + j] + inner[j * d + i]);
        }
    }
    let (vals_m, _) = jacobi_eigh(&sym, d);
    let vals_m = psd_eigenvalues(&vals_m, "cross covariance")?;
    let tr_cross: f64 = vals_m.iter().map(|l| l.sqrt()).sum();

    let tr_a: f64 = (0..d).map(|i| cov_a[i * d + i]).sum();
    let tr_b: f64 = (0..d).map(|i| cov_b[i * d + i]).sum();
    let value = (mean_term + tr_a + tr_b - 2.0 * tr_cross).max(0.0);
    Ok((value, shrink))
}

/// Mean Euclidean distance over all unordered pairs.
pub fn diversity(set: &[Vec<f64>]) -> Result<f64> {
    let n = set.len();
    if n < 2 {
        return Err(CoreError::Invalid(format!(
            "diversity needs at least 2 vectors, got {n}"
        )));
    }
    let mut total = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            let d: f64 = set[i]
                .iter()
                .zip(&set[j])
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            total += d.sqrt();
        }
    }
    Ok(total / (n * (n - 1) / 2) as f64)
}

// ----------------------------------------------------------------- beats ----

/// Mean joint speed per interior frame via central differences of the
/// forward-kinematics positions, Gaussian-smoothed, then strict local
/// minima. A pose extremum at frame t makes the central difference vanish
/// exactly there, so constructed beats land on their frame.
pub fn motion_beats<S: Scalar>(pose: &Tensor<S>, skel: &Skeleton<S>) -> Result<Vec<usize>> {
    let pos = positions_f64(pose, skel)?;
    let w = 3 * JOINTS;
    let t = pos.len() / w;
    if t < 5 {
        return Ok(Vec::new());
    }
    // speed[i] belongs to frame i+1
    let mut speed = Vec::with_capacity(t - 2);
    for i in 1..t - 1 {
        let mut acc = 0.0f64;
        for j in 0..JOINTS {
            let mut sq = 0.0;
            for ax in 0..3 {
                let d = pos[(i + 1) * w + 3 * j + ax] - pos[(i - 1) * w + 3 * j + ax];
                sq += d * d;
            }
            acc += sq.sqrt() * 0.5;
        }
        speed.push(acc / JOINTS as f64);
    }
    let smooth = gaussian_smooth(&speed, BEAT_SIGMA);
    let mut beats = Vec::new();
    for i in 1..smooth.len().saturating_sub(1) {
        if smooth[i] < smooth[i - 1] && smooth[i] < smooth[i + 1] {
            beats.push(i + 1); // back to frame index
        }
    }
    Ok(beats)
}

/// Truncated (3 sigma) Gaussian smoothing, renormalized at the edges.
pub fn gaussian_smooth(xs: &[f64], sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let weights: Vec<f64> = (-radius..=radius)
        .map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let wsum: f64 = weights.iter().sum();
    let n = xs.len() as isize;
    // whole-sample reflection at both ends: truncating the kernel instead
    // drags minima near a boundary toward it (or erases them), which loses
    // beats in the first/last half window of a clip
    let reflect = |i: isize| -> usize {
        if n == 1 {
            return 0;
        }
        let p = 2 * (n - 1);
        let j = i.rem_euclid(p);
        (if j >= n { p - j } else { j }) as usize
    };
    (0..n)
        .map(|i| {
            let mut acc = 0.0;
            for (wi, k) in (-radius..=radius).enumerate() {
                acc += weights[wi] * xs[reflect(i + k)];
            }
            acc / wsum
        })
        .collect()
}

/// Beat alignment: mean over music beats of a Gaussian kernel of the
/// distance to the nearest motion beat. Empty motion beats scores 0; empty
/// music beats is an error.
pub fn bas(motion_beats: &[usize], music_beats: &[usize], sigma: f64) -> Result<f64> {
    if music_beats.is_empty() {
        return Err(CoreError::Invalid("no music beats to align against".into()));
    }
    if motion_beats.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0f64;
    for &tm in music_beats {
        let dmin = motion_beats
            .iter()
            .map(|&td| {
                let d = td as f64 - tm as f64;
                d * d
            })
            .fold(f64::INFINITY, f64::min);
        total += (-dmin / (2.0 * sigma * sigma)).exp();
    }
    Ok(total / music_beats.len() as f64)
}

// ------------------------------------------------------------------ MAE ----

/// Mean absolute error between feature tensors over (semantic dims,
/// acoustic dims, all dims).
pub fn mae_report<S: Scalar>(rec: &Tensor<S>, reference: &Tensor<S>) -> Result<(f64, f64, f64)> {
    if rec.shape() != reference.shape() {
        return Err(CoreError::Shape {
            op: "mae_report",
            detail: format!("{:?} vs {:?}", rec.shape(), reference.shape()),
        });
    }
    if rec.cols() != FEAT_DIMS {
        return Err(CoreError::Invalid(format!(
            "expected {FEAT_DIMS}-dim features, got {}",
            rec.cols()
        )));
    }
    let t = rec.rows();
    let (mut es, mut ea) = (0.0f64, 0.0f64);
    for r in 0..t {
        let (a, b) = (rec.row(r), reference.row(r));
        for j in 0..FEAT_DIMS {
            let d = (a[j].as_f64() - b[j].as_f64()).abs();
            if j < SEMANTIC_DIMS {
                es += d;
            } else {
                ea += d;
            }
        }
    }
    let n = t as f64;
    Ok((
        es / (n * SEMANTIC_DIMS as f64),
        ea / (n * ACOUSTIC_DIMS as f64),
        (es + ea) / (n * FEAT_DIMS as f64),
    ))
}

// --------------------------------------------------------------- report ----

/// The eight headline numbers plus whether covariance shrinkage fired.
/// Serialization order is fixed by declaration order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub fid_k: f64,
    pub fid_g: f64,
    pub div_k: f64,
    pub div_g: f64,
    pub bas: f64,
    pub mae_s: f64,
    pub mae_a: f64,
    pub mae_f: f64,
    pub shrinkage: bool,
}

impl MetricReport {
    pub fn csv_header() -> &'static str {
        "fid_k,fid_g,div_k,div_g,bas,mae_s,mae_a,mae_f,shrinkage"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
            self.fid_k,
            self.fid_g,
            self.div_k,
            self.div_g,
            self.bas,
            self.mae_s,
            self.mae_a,
            self.mae_f,
            self.shrinkage
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::POSE_DIMS;
    use crate::rng::stream;
    use rand::Rng;

    fn still_pose_clip(t: usize) -> Tensor<f64> {
        let ident = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        let mut row = vec![0.0; 3];
        for _ in 0..24 {
            row.extend_from_slice(&ident);
        }
        let mut data = Vec::with_capacity(t * POSE_DIMS);
        for _ in 0..t {
            data.extend_from_slice(&row);
        }
        Tensor::from_vec(&[t, POSE_DIMS], data).unwrap()
    }

    #[test]
    fn static_motion_has_zero_kinetic_features() {
        let skel = Skeleton::<f64>::smpl24();
        let k = kinetic_features(&still_pose_clip(6), &skel, 30.0).unwrap();
        assert_eq!(k.len(), KINETIC_DIMS);
        assert!(k.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn translating_motion_spreads_kinetic_energy_evenly() {
        let skel = Skeleton::<f64>::smpl24();
        let mut clip = still_pose_clip(6);
        // root translation +0.1 x per frame: every joint inherits velocity
        for r in 0..6 {
            let row = clip.data_mut();
            row[r * POSE_DIMS] = 0.1 * r as f64;
        }
        let k = kinetic_features(&clip, &skel, 30.0).unwrap();
        let expect = (0.1 * 30.0) * (0.1 * 30.0);
        for j in 0..JOINTS {
            assert!((k[3 * j] - expect).abs() < 1e-9, "x of joint {j}: {}", k[3 * j]);
            assert_eq!(k[3 * j + 1], 0.0);
            assert_eq!(k[3 * j + 2], 0.0);
        }
    }

    #[test]
    fn time_reversal_preserves_kinetic_features() {
        let skel = Skeleton::<f64>::smpl24();
        let mut rng = stream(31, "kin-rev", 0);
        let t = 8;
        let mut data = Vec::new();
        let ident = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        for _ in 0..t {
            for _ in 0..3 {
                data.push(rng.gen::<f64>());
            }
            for _ in 0..24 {
                for b in ident {
                    data.push(b + rng.gen::<f64>() * 0.2);
                }
            }
        }
        let clip = Tensor::from_vec(&[t, POSE_DIMS], data.clone()).unwrap();
        let mut rev_data = Vec::new();
        for r in (0..t).rev() {
            rev_data.extend_from_slice(&data[r * POSE_DIMS..(r + 1) * POSE_DIMS]);
        }
        let rev = Tensor::from_vec(&[t, POSE_DIMS], rev_data).unwrap();
        let a = kinetic_features(&clip, &skel, 30.0).unwrap();
        let b = kinetic_features(&rev, &skel, 30.0).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn geometric_features_have_declared_width_and_sane_values() {
        let skel = Skeleton::<f64>::smpl24();
        let spec = GeometricSpec::standard(&skel).unwrap();
        let g = geometric_features(&still_pose_clip(4), &skel, &spec).unwrap();
        assert_eq!(g.len(), GEOMETRIC_DIMS);
        // static clip: every std is 0, distances positive
        for (i, v) in g.iter().enumerate() {
            if i % 2 == 1 {
                assert!(v.abs() < 1e-12, "std slot {i} = {v}");
            }
            assert!(v.is_finite());
        }
        assert!(g[0] > 0.0, "wrist-to-wrist distance at rest");
    }

    #[test]
    fn jacobi_recovers_known_spectrum() {
        // A = diag(1, 4) rotated by 30 degrees
        let (c, s) = (0.75f64.sqrt(), 0.5f64);
        let a = [
            c * c + 4.0 * s * s,
            c * s * (4.0 - 1.0),
            c * s * (4.0 - 1.0),
            s * s + 4.0 * c * c,
        ];
        let (mut vals, vecs) = jacobi_eigh(&a, 2);
        vals.sort_by(f64::total_cmp);
        assert!((vals[0] - 1.0).abs() < 1e-12);
        assert!((vals[1] - 4.0).abs() < 1e-12);
        // reconstruct
        let (vals, _) = jacobi_eigh(&a, 2);
        let mut rec = [0.0f64; 4];
        for k in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    rec[i * 2 + j] += vecs[i * 2 + k] * vals[k] * vecs[j * 2 + k];
                }
            }
        }
        for (x, y) in rec.iter().zip(&a) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn fid_on_identical_sets_is_zero() {
        let mut rng = stream(32, "fid-same", 0);
        let x: Vec<Vec<f64>> = (0..10)
            .map(|_| (0..4).map(|_| rng.gen::<f64>()).collect())
            .collect();
        let (v, shrink) = fid(&x, &x).unwrap();
        assert!(v < 1e-6, "fid(X,X) = {v}");
        assert!(!shrink);
    }

    #[test]
    fn fid_matches_one_dimensional_closed_form() {
        // exact sample moments: mu=0, var=1 vs mu=1, var=1 -> 1.0
        let h = 1.0 / 2.0f64.sqrt();
        let a = vec![vec![-h], vec![h]];
        let b = vec![vec![1.0 - h], vec![1.0 + h]];
        let (v, _) = fid(&a, &b).unwrap();
        assert!((v - 1.0).abs() < 1e-9, "fid = {v}");
    }

    #[test]
    fn fid_matches_diagonal_closed_form() {
        // independent dims with exact sample moments; closed form is
        // sum_i (mu1_i - mu2_i)^2 + (s1_i - s2_i)^2 for diagonal covariances
        let s2 = 2.0f64.sqrt();
        // 4 points chosen so dim 0 has sd 1 and dim 1 has sd 2, cross-cov 0
        let a = vec![
            vec![1.0, 0.0],
            vec![-1.0, 0.0],
            vec![0.0, 2.0 * s2 / s2],
            vec![0.0, -2.0],
        ];
        // recompute exact moments of `a` instead of trusting construction
        let (mu_a, cov_a) = super::moments(&a, 2).unwrap();
        assert!(cov_a[1].abs() < 1e-12, "cross term {:.3e}", cov_a[1]);
        let shift = [0.5, -1.5];
        let b: Vec<Vec<f64>> = a
            .iter()
            .map(|x| vec![x[0] * 2.0 + shift[0], x[1] * 0.5 + shift[1]])
            .collect();
        let (mu_b, cov_b) = super::moments(&b, 2).unwrap();
        let expect: f64 = (0..2)
            .map(|i| {
                (mu_a[i] - mu_b[i]).powi(2)
                    + (cov_a[i * 2 + i].sqrt() - cov_b[i * 2 + i].sqrt()).powi(2)
            })
            .sum();
        let (v, _) = fid(&a, &b).unwrap();
        assert!((v - expect).abs() < 1e-9, "fid {v} vs closed form {expect}");
    }

    #[test]
    fn fid_is_symmetric_and_shrinks_small_sets() {
        let mut rng = stream(33, "fid-sym", 0);
        let mk = |rng: &mut rand_chacha::ChaCha8Rng, n: usize| -> Vec<Vec<f64>> {
            (0..n)
                .map(|_| (0..5).map(|_| rng.gen::<f64>()).collect())
                .collect()
        };
        let a = mk(&mut rng, 12);
        let b = mk(&mut rng, 12);
        let (ab, s1) = fid(&a, &b).unwrap();
        let (ba, s2) = fid(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-6, "asymmetry {ab} vs {ba}");
        assert!(!s1 && !s2);
        // 3 samples of width 5 -> shrinkage applies
        let small_a = mk(&mut rng, 3);
        let small_b = mk(&mut rng, 3);
        let (_, shrunk) = fid(&small_a, &small_b).unwrap();
        assert!(shrunk);
    }

    #[test]
    fn diversity_matches_brute_force_and_permutation_invariance() {
        let mut rng = stream(34, "div", 0);
        let x: Vec<Vec<f64>> = (0..7)
            .map(|_| (0..3).map(|_| rng.gen::<f64>()).collect())
            .collect();
        let v = diversity(&x).unwrap();
        let mut brute = 0.0;
        let mut pairs = 0usize;
        for i in 0..x.len() {
            for j in 0..x.len() {
                if i < j {
                    brute += x[i]
                        .iter()
                        .zip(&x[j])
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt();
                    pairs += 1;
                }
            }
        }
        assert!((v - brute / pairs as f64).abs() < 1e-12);
        let mut shuffled = x.clone();
        shuffled.reverse();
        shuffled.swap(0, 3);
        assert!((diversity(&shuffled).unwrap() - v).abs() < 1e-12);
        // fixed points
        assert_eq!(diversity(&[vec![1.0], vec![1.0]]).unwrap(), 0.0);
        assert_eq!(diversity(&[vec![0.0], vec![3.0]]).unwrap(), 3.0);
        assert!(diversity(&x[..1]).is_err());
    }

    #[test]
    fn bas_fixed_points() {
        // exact alignment
        assert_eq!(bas(&[10, 20, 30], &[10, 20, 30], 3.0).unwrap(), 1.0);
        // single beat offset by sigma
        let v = bas(&[13], &[10], 3.0).unwrap();
        assert!((v - (-0.5f64).exp()).abs() < 1e-12);
        // no motion beats -> 0; no music beats -> error
        assert_eq!(bas(&[], &[5], 3.0).unwrap(), 0.0);
        assert!(bas(&[5], &[], 3.0).is_err());
        // common shift invariance
        let a = bas(&[7, 19], &[5, 20], 3.0).unwrap();
        let b = bas(&[107, 119], &[105, 120], 3.0).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn motion_beats_land_on_constructed_extrema() {
        let skel = Skeleton::<f64>::smpl24();
        // root bobs: y = 0.05 cos(2 pi t / 15) -> pose extrema (speed zeros)
        // at t = 0, 7.5, 15, ... the integer extrema 0, 15, 30, ... give
        // exact central-difference zeros
        let t = 90;
        let mut clip = still_pose_clip(t);
        for r in 0..t {
            let y = 0.05 * (std::f64::consts::TAU * r as f64 / 15.0).cos();
            clip.data_mut()[r * POSE_DIMS + 1] = y;
        }
        let beats = motion_beats(&clip, &skel).unwrap();
        // interior multiples of 15 must appear (0 is not an interior frame);
        // the half-period minima at 7.5 fall between frames so smoothing
        // may place them at 7 or 8 — only the exact ones are asserted
        for b in [15usize, 30, 45, 60, 75] {
            assert!(beats.contains(&b), "expected beat at {b}, got {beats:?}");
        }
        let music: Vec<usize> = vec![15, 30, 45, 60, 75];
        let score = bas(&beats, &music, BEAT_SIGMA).unwrap();
        assert!(score > 0.999, "constructed alignment scores {score}");
    }

    #[test]
    fn mae_report_splits_and_recombines() {
        let a = Tensor::<f64>::zeros(&[4, FEAT_DIMS]);
        let mut b = Tensor::<f64>::zeros(&[4, FEAT_DIMS]);
        // semantic error 1.0 in dim 0, acoustic error 2.0 in dim 20
        for r in 0..4 {
            b.data_mut()[r * FEAT_DIMS] = 1.0;
            b.data_mut()[r * FEAT_DIMS + 20] = 2.0;
        }
        let (s, ac, f) = mae_report(&a, &b).unwrap();
        assert!((s - 1.0 / 20.0).abs() < 1e-12);
        assert!((ac - 2.0 / 15.0).abs() < 1e-12);
        assert!((f - (20.0 * s + 15.0 * ac) / 35.0).abs() < 1e-12);
        let (zs, za, zf) = mae_report(&a, &a).unwrap();
        assert_eq!((zs, za, zf), (0.0, 0.0, 0.0));
        let short = Tensor::<f64>::zeros(&[3, FEAT_DIMS]);
        assert!(mae_report(&a, &short).is_err());
    }

    #[test]
    fn report_serializes_in_fixed_order() {
        let r = MetricReport {
            fid_k: 1.0,
            fid_g: 2.0,
            div_k: 3.0,
            div_g: 4.0,
            bas: 0.5,
            mae_s: 0.1,
            mae_a: 0.2,
            mae_f: 0.15,
            shrinkage: true,
        };
        let json = serde_json::to_string(&r).unwrap();
        let order = ["fid_k", "fid_g", "div_k", "div_g", "bas", "mae_s", "mae_a", "mae_f"];
        let mut last = 0;
        for key in order {
            let at = json.find(key).unwrap();
            assert!(at > last || last == 0);
            last = at;
        }
        assert_eq!(MetricReport::csv_header().split(',').count(), 9);
        assert_eq!(r.csv_row().split(',').count(), 9);
    }
}
