//! Contrastive objectives over fused features.
//!
//! * segment level: within each video, event segments are pulled toward a
//!   randomly drawn event segment and pushed from the mean over background
//!   segments;
//! * video level: a triplet hinge between a video, its hardest same-category
//!   video and the `K` closest other-category videos;
//! * self-supervised: InfoNCE between synchronized audio and visual rows.
//!
//! Mining and positive sampling happen on the host; losses stay on the
//! autograd graph.

use std::collections::BTreeSet;

use candle_core::{DType, Tensor, D};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn;

/// A loss value together with how many anchors contributed and how many
/// were skipped for lack of positives or negatives.
#[derive(Debug, Clone)]
pub struct ContrastLoss {
    pub loss: Tensor,
    pub anchors: usize,
    pub skipped: usize,
}

/// Per-video segment roles plus the chosen positive for each event anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentPlan {
    pub event: Vec<Vec<bool>>,
    pub positive: Vec<Vec<Option<usize>>>,
}

impl SegmentPlan {
    /// Draws, for every event anchor, one positive uniformly from the other
    /// event segments of the same video. Videos with fewer than two event
    /// segments or no background segment get no positives.
    pub fn sample(event: Vec<Vec<bool>>, rng: &mut ChaCha8Rng) -> Self {
        let positive = event
            .iter()
            .map(|row| {
                let events: Vec<usize> = (0..row.len()).filter(|&t| row[t]).collect();
                let has_bg = row.iter().any(|&e| !e);
                row.iter()
                    .enumerate()
                    .map(|(t, &is_event)| {
                        if !is_event || events.len() < 2 || !has_bg {
                            return None;
                        }
                        let k = rng.random_range(0..events.len() - 1);
                        let others: Vec<usize> = events.iter().copied().filter(|&e| e != t).collect();
                        Some(others[k])
                    })
                    .collect()
            })
            .collect();
        SegmentPlan { event, positive }
    }
}

/// Cosine similarity between all rows of the last two dims: `[..., T, T]`.
pub fn cosine_matrix(x: &Tensor) -> Result<Tensor> {
    let n = nn::l2_normalize(x)?;
    let r = n.rank();
    Ok(n.matmul(&n.transpose(r - 2, r - 1)?.contiguous()?)?)
}

/// Segment-level loss over a batch `f: B×T×d`.
///
/// For anchor `i` with positive `j` and background set `bg`:
/// `−log( e^{s_ij/η} / (e^{s_ij/η} + mean_{k∈bg} e^{s_ik/η}) )`.
/// Terms are averaged over anchors within a video, then over videos that
/// have at least one anchor.
pub fn loss_spsa(f: &Tensor, plan: &SegmentPlan, eta: f64) -> Result<ContrastLoss> {
    let (b, t, _) = f.dims3()?;
    if plan.event.len() != b || plan.event.iter().any(|r| r.len() != t) {
        return Err(Error::DimensionMismatch(format!(
            "segment plan does not match a {b}×{t} batch"
        )));
    }
    let mut pos = vec![0f64; b * t * t];
    let mut neg = vec![0f64; b * t * t];
    let mut weight = vec![0f64; b * t];
    let mut valid_videos = 0usize;
    let mut anchors = 0usize;
    let mut skipped = 0usize;
    let mut per_video = Vec::with_capacity(b);
    for v in 0..b {
        let bg: Vec<usize> = (0..t).filter(|&k| !plan.event[v][k]).collect();
        let chosen: Vec<(usize, usize)> = (0..t)
            .filter_map(|i| plan.positive[v][i].map(|j| (i, j)))
            .filter(|_| !bg.is_empty())
            .collect();
        skipped += plan.event[v].iter().filter(|&&e| e).count() - chosen.len();
        if !chosen.is_empty() {
            valid_videos += 1;
        }
        per_video.push((bg, chosen));
    }
    for (v, (bg, chosen)) in per_video.iter().enumerate() {
        for &(i, j) in chosen {
            let row = (v * t + i) * t;
            pos[row + j] = 1.0;
            for &k in bg {
                neg[row + k] = 1.0 / bg.len() as f64;
            }
            weight[v * t + i] = 1.0 / (chosen.len() * valid_videos) as f64;
            anchors += 1;
        }
    }
    let dtype = f.dtype();
    if anchors == 0 {
        return Ok(ContrastLoss {
            loss: Tensor::zeros((), dtype, f.device())?,
            anchors,
            skipped,
        });
    }
    let pos = nn::tensor_from_f64(pos, &[b, t, t], dtype)?;
    let neg = nn::tensor_from_f64(neg, &[b, t, t], dtype)?;
    let weight = nn::tensor_from_f64(weight, &[b, t], dtype)?;

    let s = (cosine_matrix(f)? / eta)?;
    let m = s.max_keepdim(D::Minus1)?.detach();
    let shifted = s.broadcast_sub(&m)?;
    let s_pos = (&shifted * &pos)?.sum(D::Minus1)?;
    let mean_neg = (shifted.exp()? * &neg)?.sum(D::Minus1)?;
    let denom = (s_pos.exp()? + mean_neg)?;
    let terms = (denom.log()? - s_pos)?;
    let loss = (terms * weight)?.sum_all()?;
    Ok(ContrastLoss { loss, anchors, skipped })
}

/// Hard-mined triplet for one anchor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: Option<usize>,
    pub negatives: Vec<usize>,
}

/// Pairwise Euclidean distances between ℓ2-normalized rows of host data.
pub fn normalized_distances(vectors: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let unit: Vec<Vec<f64>> = vectors
        .iter()
        .map(|v| {
            let n = v.iter().map(|x| x * x).sum::<f64>().max(1e-24).sqrt();
            v.iter().map(|x| x / n).collect()
        })
        .collect();
    unit.iter()
        .map(|a| {
            unit.iter()
                .map(|b| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
                .collect()
        })
        .collect()
}

/// Positive: the same-category video farthest from the anchor. Negatives:
/// the `min(k, available)` closest videos of other categories. Ties go to
/// the lower index.
pub fn mine_video_triplet(dist: &[Vec<f64>], categories: &[usize], anchor: usize, k: usize) -> Triplet {
    let mut positive: Option<usize> = None;
    let mut others = Vec::new();
    for j in 0..categories.len() {
        if j == anchor {
            continue;
        }
        if categories[j] == categories[anchor] {
            if positive.is_none_or(|p| dist[anchor][j] > dist[anchor][p]) {
                positive = Some(j);
            }
        } else {
            others.push(j);
        }
    }
    // stable sort keeps lower indices first among equal distances
    others.sort_by(|&x, &y| dist[anchor][x].total_cmp(&dist[anchor][y]));
    others.truncate(k);
    Triplet {
        anchor,
        positive,
        negatives: others,
    }
}

/// Video-level triplet loss over mean vectors `video: B×d`.
///
/// `mean_a max(0, d(a,p) − mean_k d(a,n_k) + θ)` over anchors that have a
/// positive and at least one negative.
pub fn loss_vpsa(video: &Tensor, categories: &[usize], k: usize, theta: f64) -> Result<ContrastLoss> {
    let (b, _) = video.dims2()?;
    if categories.len() != b {
        return Err(Error::DimensionMismatch(format!(
            "{} category ids for {b} videos",
            categories.len()
        )));
    }
    let host: Vec<Vec<f64>> = video
        .to_dtype(DType::F64)?
        .to_vec2::<f64>()?;
    let dist = normalized_distances(&host);
    let mut select = vec![0f64; b * b];
    let mut active = vec![0f64; b];
    let mut anchors = 0usize;
    for a in 0..b {
        let tr = mine_video_triplet(&dist, categories, a, k);
        let Some(p) = tr.positive else { continue };
        if tr.negatives.is_empty() {
            continue;
        }
        select[a * b + p] += 1.0;
        for &n in &tr.negatives {
            select[a * b + n] -= 1.0 / tr.negatives.len() as f64;
        }
        active[a] = 1.0;
        anchors += 1;
    }
    let dtype = video.dtype();
    let skipped = b - anchors;
    if anchors == 0 {
        return Ok(ContrastLoss {
            loss: Tensor::zeros((), dtype, video.device())?,
            anchors,
            skipped,
        });
    }
    let select = nn::tensor_from_f64(select, &[b, b], dtype)?;
    let active = nn::tensor_from_f64(active, &[b], dtype)?;
    let unit = nn::l2_normalize(video)?;
    let diff = unit.unsqueeze(1)?.broadcast_sub(&unit.unsqueeze(0)?)?;
    let d = diff.sqr()?.sum(D::Minus1)?.maximum(1e-24)?.sqrt()?;
    let gap = (d * select)?.sum(D::Minus1)?;
    let hinge = (gap + theta)?.relu()?;
    let loss = ((hinge * active)?.sum_all()? / anchors as f64)?;
    Ok(ContrastLoss { loss, anchors, skipped })
}

/// Self-supervised InfoNCE between synchronized rows of `a` and `v`
/// (`n×d` each): `mean_i −log( e^{s_ii/η′} / Σ_j e^{s_ij/η′} )`.
pub fn loss_sspsp(a: &Tensor, v: &Tensor, eta_prime: f64) -> Result<Tensor> {
    let a = nn::l2_normalize(a)?;
    let v = nn::l2_normalize(v)?;
    let s = (a.matmul(&v.t()?.contiguous()?)? / eta_prime)?;
    let n = s.dim(0)?;
    let diag = (&a * &v)?.sum(D::Minus1)?.affine(1.0 / eta_prime, 0.0)?;
    let lse = nn::logsumexp_last(&s)?.squeeze(D::Minus1)?;
    Ok(((lse - diag)?.sum_all()? / n as f64)?)
}

/// `|a ∩ b| / |a|`, relative to the reference set `a`.
pub fn cooccurrence_ratio(a: &BTreeSet<usize>, b: &BTreeSet<usize>) -> Result<f64> {
    if a.is_empty() {
        return Err(Error::Data("co-occurrence ratio of an empty label set".into()));
    }
    Ok(a.intersection(b).count() as f64 / a.len() as f64)
}

/// Positives have ratio at least `mu` against the reference; negatives share
/// no label with it. The reference itself is excluded from both.
pub fn select_parsing_contrast_sets(
    sets: &[BTreeSet<usize>],
    reference: usize,
    mu: f64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for (i, s) in sets.iter().enumerate() {
        if i == reference {
            continue;
        }
        let r = cooccurrence_ratio(&sets[reference], s)?;
        if r >= mu {
            positives.push(i);
        } else if r == 0.0 {
            negatives.push(i);
        }
    }
    Ok((positives, negatives))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{gradient_check, scalar};
    use rand::Rng;
    use candle_core::Device;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn t3(b: usize, t: usize, d: usize, data: Vec<f64>) -> Tensor {
        Tensor::from_vec(data, (b, t, d), &Device::Cpu).unwrap()
    }

    fn random(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn cos(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    }

    fn spsa_oracle(f: &[Vec<f64>], plan_event: &[bool], positive: &[Option<usize>], eta: f64) -> f64 {
        let bg: Vec<usize> = (0..f.len()).filter(|&k| !plan_event[k]).collect();
        let mut total = 0.0;
        let mut count = 0;
        for i in 0..f.len() {
            let Some(j) = positive[i] else { continue };
            let num = (cos(&f[i], &f[j]) / eta).exp();
            let neg: f64 = bg.iter().map(|&k| (cos(&f[i], &f[k]) / eta).exp()).sum::<f64>() / bg.len() as f64;
            total += -(num / (num + neg)).ln();
            count += 1;
        }
        total / count as f64
    }

    fn single(event: Vec<bool>, positive: Vec<Option<usize>>) -> SegmentPlan {
        SegmentPlan {
            event: vec![event],
            positive: vec![positive],
        }
    }

    #[test]
    fn spsa_aligned_positive_orthogonal_negative() {
        let f = t3(1, 3, 2, vec![1., 0., 1., 0., 0., 1.]);
        let plan = single(vec![true, true, false], vec![Some(1), Some(0), None]);
        let out = loss_spsa(&f, &plan, 0.1).unwrap();
        let v = scalar(&out.loss).unwrap();
        let expect = -(10f64.exp() / (10f64.exp() + 1.0)).ln();
        assert!((v - expect).abs() < 1e-12);
        assert!((v - 4.54e-5).abs() < 1e-7);
        assert_eq!(out.anchors, 2);
    }

    #[test]
    fn spsa_identical_features_give_log_two() {
        let f = t3(1, 4, 3, [0.3, -0.2, 0.9].repeat(4));
        let plan = single(vec![true, true, true, false], vec![Some(1), Some(2), Some(0), None]);
        let v = scalar(&loss_spsa(&f, &plan, 0.1).unwrap().loss).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn spsa_matches_scalar_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let data = random(10 * 5, &mut rng);
            let event: Vec<bool> = (0..10).map(|t| t % 3 != 0).collect();
            let plan = SegmentPlan::sample(vec![event.clone()], &mut rng);
            let v = scalar(&loss_spsa(&t3(1, 10, 5, data.clone()), &plan, 0.1).unwrap().loss).unwrap();
            let rows: Vec<Vec<f64>> = data.chunks(5).map(|c| c.to_vec()).collect();
            let o = spsa_oracle(&rows, &event, &plan.positive[0], 0.1);
            assert!((v - o).abs() < 1e-8, "{v} vs {o}");
        }
    }

    #[test]
    fn spsa_batch_averages_valid_videos() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let data = random(3 * 6 * 4, &mut rng);
        let event = vec![
            vec![true, true, true, false, false, false],
            vec![true; 6],
            vec![false, true, true, true, true, false],
        ];
        let plan = SegmentPlan::sample(event.clone(), &mut rng);
        let out = loss_spsa(&t3(3, 6, 4, data.clone()), &plan, 0.2).unwrap();
        assert_eq!(out.anchors, 7);
        assert_eq!(out.skipped, 6);
        let rows: Vec<Vec<f64>> = data.chunks(4).map(|c| c.to_vec()).collect();
        let a = spsa_oracle(&rows[0..6], &event[0], &plan.positive[0], 0.2);
        let c = spsa_oracle(&rows[12..18], &event[2], &plan.positive[2], 0.2);
        assert!((scalar(&out.loss).unwrap() - (a + c) / 2.0).abs() < 1e-10);
    }

    #[test]
    fn spsa_skips_degenerate_videos() {
        let f = t3(1, 3, 2, vec![1., 0., 0., 1., 1., 1.]);
        let plan = SegmentPlan::sample(vec![vec![true, false, false]], &mut ChaCha8Rng::seed_from_u64(0));
        let out = loss_spsa(&f, &plan, 0.1).unwrap();
        assert_eq!(out.anchors, 0);
        assert_eq!(scalar(&out.loss).unwrap(), 0.0);
    }

    #[test]
    fn positives_are_other_event_segments() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let event = vec![vec![true, false, true, true, false, true]];
        for _ in 0..50 {
            let plan = SegmentPlan::sample(event.clone(), &mut rng);
            for (i, p) in plan.positive[0].iter().enumerate() {
                match p {
                    Some(j) => assert!(event[0][i] && event[0][*j] && *j != i),
                    None => assert!(!event[0][i]),
                }
            }
        }
    }

    #[test]
    fn vpsa_hand_value() {
        // unit vectors with |a-p| = 1 and |a-n| = 0.5
        let angle = |d: f64| 2.0 * (d / 2.0).asin();
        let (tp, tn) = (angle(1.0), angle(0.5));
        let v = Tensor::from_vec(
            vec![1.0, 0.0, tp.cos(), tp.sin(), tn.cos(), -tn.sin()],
            (3, 2),
            &Device::Cpu,
        )
        .unwrap();
        let cats = [0, 0, 1];
        let dist = normalized_distances(&v.to_vec2::<f64>().unwrap());
        let tr = mine_video_triplet(&dist, &cats, 0, 1);
        assert_eq!(tr.positive, Some(1));
        assert_eq!(tr.negatives, vec![2]);
        let out = loss_vpsa(&v, &cats, 1, 0.6).unwrap();
        // anchor 0 gives 1.1; anchor 1 is checked against the oracle below
        let d12 = dist[1][2];
        let a1 = (1.0 - d12 + 0.6f64).max(0.0);
        let expect = (1.1 + a1) / 2.0;
        assert!((scalar(&out.loss).unwrap() - expect).abs() < 1e-9);
        assert!((1.0 - 0.5 + 0.6f64 - 1.1).abs() < 1e-12);
    }

    #[test]
    fn vpsa_zero_when_margin_met() {
        let v = Tensor::from_vec(vec![1.0, 0.0, 1.0, 0.0, -1.0, 0.0], (3, 2), &Device::Cpu).unwrap();
        let out = loss_vpsa(&v, &[0, 0, 1], 4, 0.6).unwrap();
        assert_eq!(scalar(&out.loss).unwrap(), 0.0);
        assert_eq!(out.anchors, 2);
        assert_eq!(out.skipped, 1);
    }

    #[test]
    fn mining_trivial_cases() {
        let dist = normalized_distances(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(mine_video_triplet(&dist, &[3, 3], 0, 4).positive, Some(1));
        let dist = normalized_distances(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]);
        let tr = mine_video_triplet(&dist, &[0, 1, 2], 0, 4);
        assert_eq!(tr.positive, None);
        assert_eq!(tr.negatives.len(), 2);
    }

    #[test]
    fn mining_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let vecs: Vec<Vec<f64>> = (0..8).map(|_| random(5, &mut rng)).collect();
            let cats: Vec<usize> = (0..8).map(|_| rng.random_range(0..3)).collect();
            let dist = normalized_distances(&vecs);
            for a in 0..8 {
                let tr = mine_video_triplet(&dist, &cats, a, 2);
                let mut best: Option<(f64, usize)> = None;
                for j in 0..8 {
                    if j != a && cats[j] == cats[a] && best.is_none_or(|(d, _)| dist[a][j] > d) {
                        best = Some((dist[a][j], j));
                    }
                }
                assert_eq!(tr.positive, best.map(|b| b.1));
                let mut pairs: Vec<(f64, usize)> =
                    (0..8).filter(|&j| cats[j] != cats[a]).map(|j| (dist[a][j], j)).collect();
                pairs.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
                let expect: Vec<usize> = pairs.iter().take(2).map(|p| p.1).collect();
                assert_eq!(tr.negatives, expect);
            }
        }
    }

    #[test]
    fn sspsp_hand_values() {
        let one = Tensor::from_vec(vec![0.2, 0.7], (1, 2), &Device::Cpu).unwrap();
        assert!(scalar(&loss_sspsp(&one, &one, 0.3).unwrap()).unwrap().abs() < 1e-12);
        let eye = Tensor::eye(4, DType::F64, &Device::Cpu).unwrap();
        let v = scalar(&loss_sspsp(&eye, &eye, 0.3).unwrap()).unwrap();
        let e = (1.0f64 / 0.3).exp();
        assert!((v + (e / (e + 3.0)).ln()).abs() < 1e-12);
    }

    #[test]
    fn sspsp_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let a = random(3 * 6, &mut rng);
        let v = random(3 * 6, &mut rng);
        let got = scalar(
            &loss_sspsp(
                &Tensor::from_vec(a.clone(), (3, 6), &Device::Cpu).unwrap(),
                &Tensor::from_vec(v.clone(), (3, 6), &Device::Cpu).unwrap(),
                0.3,
            )
            .unwrap(),
        )
        .unwrap();
        let (ar, vr): (Vec<&[f64]>, Vec<&[f64]>) = (a.chunks(6).collect(), v.chunks(6).collect());
        let mut total = 0.0;
        for i in 0..3 {
            let den: f64 = (0..3).map(|j| (cos(ar[i], vr[j]) / 0.3).exp()).sum();
            total -= ((cos(ar[i], vr[i]) / 0.3).exp() / den).ln();
        }
        assert!((got - total / 3.0).abs() < 1e-8);
    }

    #[test]
    fn cooccurrence_examples() {
        let s = |v: &[usize]| v.iter().copied().collect::<BTreeSet<usize>>();
        // barking=0, speech=1, music=2, clapping=3
        assert_eq!(cooccurrence_ratio(&s(&[0, 1]), &s(&[1, 2, 3])).unwrap(), 0.5);
        assert_eq!(cooccurrence_ratio(&s(&[1, 2]), &s(&[1, 2])).unwrap(), 1.0);
        assert_eq!(cooccurrence_ratio(&s(&[1, 2]), &s(&[3])).unwrap(), 0.0);
        assert!(cooccurrence_ratio(&s(&[]), &s(&[3])).is_err());
        let sets = vec![s(&[0, 1]), s(&[1, 2, 3]), s(&[0, 1, 4]), s(&[5])];
        let (p, n) = select_parsing_contrast_sets(&sets, 0, 0.6).unwrap();
        assert_eq!(p, vec![2]);
        assert_eq!(n, vec![3]);
        let (p, _) = select_parsing_contrast_sets(&sets, 0, 1.0).unwrap();
        assert_eq!(p, vec![2]);
    }

    #[test]
    fn selection_matches_set_arithmetic() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..20 {
            let sets: Vec<BTreeSet<usize>> = (0..5)
                .map(|_| {
                    let mut s: BTreeSet<usize> = (0..6).filter(|_| rng.random_bool(0.4)).collect();
                    s.insert(rng.random_range(0..6));
                    s
                })
                .collect();
            let (p, n) = select_parsing_contrast_sets(&sets, 0, 0.6).unwrap();
            for j in 1..5 {
                let common = sets[0].iter().filter(|x| sets[j].contains(x)).count();
                let frac = common as f64 / sets[0].len() as f64;
                assert_eq!(p.contains(&j), frac >= 0.6);
                assert_eq!(n.contains(&j), common == 0);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let f = t3(2, 5, 4, random(40, &mut rng));
        let plan = SegmentPlan::sample(
            vec![vec![true, true, false, true, false], vec![false, true, true, true, false]],
            &mut rng,
        );
        let g = gradient_check(|x| Ok(loss_spsa(x, &plan, 0.1)?.loss), &f, 1e-6, 1e-4, 1e-7).unwrap();
        assert!(g.passed, "{g:?}");

        let v = Tensor::from_vec(random(6 * 4, &mut rng), (6, 4), &Device::Cpu).unwrap();
        let cats = [0, 0, 1, 1, 2, 0];
        let g = gradient_check(|x| Ok(loss_vpsa(x, &cats, 2, 0.6)?.loss), &v, 1e-6, 1e-4, 1e-7).unwrap();
        assert!(g.passed, "{g:?}");

        let a = Tensor::from_vec(random(5 * 4, &mut rng), (5, 4), &Device::Cpu).unwrap();
        let vv = Tensor::from_vec(random(5 * 4, &mut rng), (5, 4), &Device::Cpu).unwrap();
        let g = gradient_check(|x| loss_sspsp(x, &vv, 0.3), &a, 1e-6, 1e-4, 1e-7).unwrap();
        assert!(g.passed, "{g:?}");
    }

    fn rotate(data: &[f64], d: usize, angle: f64) -> Vec<f64> {
        // rotation in the plane of the first two coordinates
        data.chunks(d)
            .flat_map(|r| {
                let mut r = r.to_vec();
                let (x, y) = (r[0], r[1]);
                r[0] = angle.cos() * x - angle.sin() * y;
                r[1] = angle.sin() * x + angle.cos() * y;
                r
            })
            .collect()
    }

    proptest! {
        #[test]
        fn losses_invariant_to_common_rotation(
            data in proptest::collection::vec(-1.0f64..1.0, 24),
            angle in 0.0f64..6.28,
        ) {
            let plan = SegmentPlan {
                event: vec![vec![true, true, true, false, true, false]],
                positive: vec![vec![Some(1), Some(4), Some(0), None, Some(2), None]],
            };
            let base = scalar(&loss_spsa(&t3(1, 6, 4, data.clone()), &plan, 0.1).unwrap().loss).unwrap();
            let rot = scalar(&loss_spsa(&t3(1, 6, 4, rotate(&data, 4, angle)), &plan, 0.1).unwrap().loss).unwrap();
            prop_assert!((base - rot).abs() < 1e-8 * base.abs().max(1.0));

            let a = Tensor::from_vec(data[..12].to_vec(), (3, 4), &Device::Cpu).unwrap();
            let v = Tensor::from_vec(data[12..].to_vec(), (3, 4), &Device::Cpu).unwrap();
            let ar = Tensor::from_vec(rotate(&data[..12], 4, angle), (3, 4), &Device::Cpu).unwrap();
            let vr = Tensor::from_vec(rotate(&data[12..], 4, angle), (3, 4), &Device::Cpu).unwrap();
            let x = scalar(&loss_sspsp(&a, &v, 0.3).unwrap()).unwrap();
            let y = scalar(&loss_sspsp(&ar, &vr, 0.3).unwrap()).unwrap();
            prop_assert!((x - y).abs() < 1e-8);
        }

        #[test]
        fn spsa_decreases_as_positive_moves_closer(
            anchor in proptest::collection::vec(0.1f64..1.0, 3),
            other in proptest::collection::vec(-1.0f64..1.0, 3),
            neg in proptest::collection::vec(-1.0f64..1.0, 3),
            step in 0.05f64..0.9,
        ) {
            let mixed: Vec<f64> = other.iter().zip(&anchor).map(|(o, a)| (1.0 - step) * o + step * a).collect();
            prop_assume!(cos(&mixed, &anchor) > cos(&other, &anchor) + 1e-9);
            let plan = SegmentPlan {
                event: vec![vec![true, true, false]],
                positive: vec![vec![Some(1), None, None]],
            };
            let build = |p: &[f64]| t3(1, 3, 3, [anchor.clone(), p.to_vec(), neg.clone()].concat());
            let far = scalar(&loss_spsa(&build(&other), &plan, 0.1).unwrap().loss).unwrap();
            let near = scalar(&loss_spsa(&build(&mixed), &plan, 0.1).unwrap().loss).unwrap();
            prop_assert!(near < far || (far - near).abs() < 1e-15);
        }

        #[test]
        fn vpsa_zero_when_all_margins_met(
            seed in 0u64..1000,
        ) {
            // two tight clusters far apart satisfy every margin
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut data = Vec::new();
            for i in 0..6 {
                let base = if i < 3 { [1.0, 0.0, 0.0] } else { [-1.0, 0.0, 0.0] };
                for b in base {
                    data.push(b + rng.random_range(-0.01..0.01));
                }
            }
            let v = Tensor::from_vec(data, (6, 3), &Device::Cpu).unwrap();
            let out = loss_vpsa(&v, &[0, 0, 0, 1, 1, 1], 4, 0.6).unwrap();
            prop_assert_eq!(scalar(&out.loss).unwrap(), 0.0);
        }

        #[test]
        fn mining_invariant_to_positive_rescaling(
            data in proptest::collection::vec(-1.0f64..1.0, 24),
            scale in 0.01f64..100.0,
        ) {
            let vecs: Vec<Vec<f64>> = data.chunks(4).map(|c| c.to_vec()).collect();
            let scaled: Vec<Vec<f64>> = vecs.iter().map(|v| v.iter().map(|x| x * scale).collect()).collect();
            let cats = [0, 1, 0, 2, 1, 0];
            let (d1, d2) = (normalized_distances(&vecs), normalized_distances(&scaled));
            for a in 0..6 {
                let t1 = mine_video_triplet(&d1, &cats, a, 2);
                let t2 = mine_video_triplet(&d2, &cats, a, 2);
                // near-ties may flip under rounding; compare distances instead of ids
                let pd = |d: &Vec<Vec<f64>>, t: &Triplet| t.positive.map(|p| d[a][p]);
                prop_assert_eq!(t1.positive.is_some(), t2.positive.is_some());
                if let (Some(x), Some(y)) = (pd(&d1, &t1), pd(&d1, &t2)) {
                    prop_assert!((x - y).abs() < 1e-9);
                }
                for (x, y) in t1.negatives.iter().zip(&t2.negatives) {
                    prop_assert!((d1[a][*x] - d1[a][*y]).abs() < 1e-9);
                }
            }
        }
    }
}
