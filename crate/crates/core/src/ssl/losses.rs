use rand::Rng as _;

use crate::error::{HarError, Result};
use crate::nn::{Scalar, Tensor};
use crate::seed::Rng;

fn same_shape<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(HarError::Shape(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Squared Frobenius norm of `target - recon` per window, averaged over
/// the batch, and its gradient w.r.t. `recon`.
pub fn autoencoder_loss<F: Scalar>(target: &Tensor<F>, recon: &Tensor<F>) -> Result<(f64, Tensor<F>)> {
    same_shape(target, recon, "reconstruction shape differs from input")?;
    let n = target.batch().max(1) as f64;
    let mut loss = 0.0;
    let grad = target
        .data()
        .iter()
        .zip(recon.data())
        .map(|(&w, &r)| {
            let d = r.f64() - w.f64();
            loss += d * d;
            F::of(2.0 * d / n)
        })
        .collect();
    Ok((loss / n, Tensor::new(recon.shape().to_vec(), grad)?))
}

/// Squared error over the masked entries (`keep[i] == false`) divided by
/// their count, and its gradient w.r.t. `recon`. Zero when nothing is
/// masked.
pub fn masked_reconstruction_loss<F: Scalar>(
    target: &Tensor<F>,
    recon: &Tensor<F>,
    keep: &[bool],
) -> Result<(f64, Tensor<F>)> {
    same_shape(target, recon, "reconstruction shape differs from input")?;
    if keep.len() != target.len() {
        return Err(HarError::Shape(format!(
            "mask has {} entries for {} values",
            keep.len(),
            target.len()
        )));
    }
    let count = keep.iter().filter(|&&k| !k).count();
    if count == 0 {
        return Ok((0.0, Tensor::zeros(recon.shape().to_vec())));
    }
    let denom = count as f64;
    let mut loss = 0.0;
    let grad = target
        .data()
        .iter()
        .zip(recon.data())
        .zip(keep)
        .map(|((&w, &r), &k)| {
            if k {
                return F::zero();
            }
            let d = r.f64() - w.f64();
            loss += d * d;
            F::of(2.0 * d / denom)
        })
        .collect();
    Ok((loss / denom, Tensor::new(recon.shape().to_vec(), grad)?))
}

pub const COSINE_EPS: f64 = 1e-8;

/// Normalized temperature-scaled cross-entropy over two views `[n, d]`.
///
/// Every row of either view is an anchor; its positive is the row with
/// the same index in the other view, and its negatives are every other
/// row of both views. Similarities are cosines with `COSINE_EPS` added
/// to each norm. Returns the mean over the `2n` anchors and the
/// gradients w.r.t. both views.
pub fn nt_xent_loss<F: Scalar>(
    o1: &Tensor<F>,
    o2: &Tensor<F>,
    tau: f64,
) -> Result<(f64, Tensor<F>, Tensor<F>)> {
    same_shape(o1, o2, "views differ in shape")?;
    let &[n, d] = o1.shape() else {
        return Err(HarError::Shape(format!("embeddings must be [n, d], got {:?}", o1.shape())));
    };
    if !(tau > 0.0) {
        return Err(HarError::InvalidArgument(format!("temperature must be positive, got {tau}")));
    }
    let m = 2 * n;
    let z: Vec<f64> = o1.data().iter().chain(o2.data()).map(|v| v.f64()).collect();
    if z.iter().any(|v| !v.is_finite()) {
        return Err(HarError::Numeric("non-finite embedding".into()));
    }
    let norms: Vec<f64> = z.chunks(d).map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let u: Vec<f64> = z
        .chunks(d)
        .zip(&norms)
        .flat_map(|(r, &nr)| r.iter().map(move |v| v / (nr + COSINE_EPS)))
        .collect();
    let mut sim = vec![0.0; m * m];
    for k in 0..m {
        for l in k..m {
            let s: f64 = u[k * d..(k + 1) * d].iter().zip(&u[l * d..(l + 1) * d]).map(|(a, b)| a * b).sum::<f64>() / tau;
            sim[k * m + l] = s;
            sim[l * m + k] = s;
        }
    }
    // g[k][l] = dL/ds_kl for the ordered entry used by anchor k
    let mut g = vec![0.0; m * m];
    let mut loss = 0.0;
    for k in 0..m {
        let pos = (k + n) % m;
        let row = &sim[k * m..(k + 1) * m];
        let max = (0..m).filter(|&l| l != k).map(|l| row[l]).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = (0..m).filter(|&l| l != k).map(|l| (row[l] - max).exp()).sum();
        loss += max + z.ln() - row[pos];
        for l in (0..m).filter(|&l| l != k) {
            let p = (row[l] - max).exp() / z;
            g[k * m + l] = (p - if l == pos { 1.0 } else { 0.0 }) / m as f64;
        }
    }
    let mut gz = vec![0.0; m * d];
    for k in 0..m {
        let mut gu = vec![0.0; d];
        for l in 0..m {
            let c = (g[k * m + l] + g[l * m + k]) / tau;
            if c != 0.0 {
                for (a, b) in gu.iter_mut().zip(&u[l * d..(l + 1) * d]) {
                    *a += c * b;
                }
            }
        }
        let r = norms[k];
        let zr = &z[k * d..(k + 1) * d];
        let dot: f64 = zr.iter().zip(&gu).map(|(a, b)| a * b).sum();
        let inv = 1.0 / (r + COSINE_EPS);
        let corr = if r > 0.0 { dot / (r * (r + COSINE_EPS) * (r + COSINE_EPS)) } else { 0.0 };
        for j in 0..d {
            gz[k * d + j] = gu[j] * inv - zr[j] * corr;
        }
    }
    let (g1, g2) = gz.split_at(n * d);
    Ok((
        loss / m as f64,
        Tensor::new(vec![n, d], g1.iter().map(|&v| F::of(v)).collect())?,
        Tensor::new(vec![n, d], g2.iter().map(|&v| F::of(v)).collect())?,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskAction {
    Zero,
    Keep,
    /// Copy the original values of timestep `source`.
    Replace { source: usize },
}

/// Masked timesteps of one window and what happens to each.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskPlan {
    pub timesteps: usize,
    pub masked: Vec<(usize, MaskAction)>,
}

pub const MASK_FRACTION: f64 = 0.1;

/// Mask `round(0.1 * T)` distinct timesteps; each is zeroed with
/// probability 0.8, left unchanged with 0.1, or overwritten by another
/// random timestep of the same window with 0.1.
pub fn make_mask_plan(timesteps: usize, rng: &mut Rng) -> MaskPlan {
    let k = ((MASK_FRACTION * timesteps as f64).round() as usize).min(timesteps);
    let chosen = rand::seq::index::sample(rng, timesteps, k).into_vec();
    let masked = chosen
        .into_iter()
        .map(|t| {
            let u: f64 = rng.random();
            let action = if u < 0.8 {
                MaskAction::Zero
            } else if u < 0.9 || timesteps < 2 {
                MaskAction::Keep
            } else {
                let mut s = rng.random_range(0..timesteps - 1);
                if s >= t {
                    s += 1;
                }
                MaskAction::Replace { source: s }
            };
            (t, action)
        })
        .collect();
    MaskPlan { timesteps, masked }
}

impl MaskPlan {
    /// Corrupt one `[C, T]` sample in place.
    pub fn apply<F: Scalar>(&self, sample: &mut [F], channels: usize) {
        let t = self.timesteps;
        let original = sample.to_vec();
        for &(step, action) in &self.masked {
            for c in 0..channels {
                match action {
                    MaskAction::Zero => sample[c * t + step] = F::zero(),
                    MaskAction::Keep => {}
                    MaskAction::Replace { source } => sample[c * t + step] = original[c * t + source],
                }
            }
        }
    }

    /// `true` where the loss ignores the entry, in `[C, T]` order.
    pub fn keep_mask(&self, channels: usize) -> Vec<bool> {
        let t = self.timesteps;
        let mut keep = vec![true; channels * t];
        for &(step, _) in &self.masked {
            for c in 0..channels {
                keep[c * t + step] = false;
            }
        }
        keep
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use proptest::prelude::*;

    fn tensor(shape: Vec<usize>, rng: &mut crate::seed::Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn brute_nt_xent(o1: &[f64], o2: &[f64], n: usize, d: usize, tau: f64) -> f64 {
        let rows: Vec<&[f64]> = o1.chunks(d).chain(o2.chunks(d)).collect();
        let cos = |a: &[f64], b: &[f64]| {
            let na = a.iter().map(|v| v * v).sum::<f64>().sqrt() + COSINE_EPS;
            let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt() + COSINE_EPS;
            a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
        };
        let mut total = 0.0;
        for k in 0..2 * n {
            let pos = (k + n) % (2 * n);
            let mut denom = 0.0;
            for l in 0..2 * n {
                if l != k {
                    denom += (cos(rows[k], rows[l]) / tau).exp();
                }
            }
            total += -((cos(rows[k], rows[pos]) / tau).exp() / denom).ln();
        }
        total / (2 * n) as f64
    }

    #[test]
    fn nt_xent_single_pair_is_zero() {
        let mut rng = seed::rng_from(1);
        let (l, _, _) = nt_xent_loss(&tensor(vec![1, 5], &mut rng), &tensor(vec![1, 5], &mut rng), 0.1).unwrap();
        assert!(l.abs() < 1e-12);
    }

    #[test]
    fn nt_xent_orthonormal_case() {
        let e = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let (l, _, _) = nt_xent_loss(&e, &e, 1.0).unwrap();
        let expected = -(1f64.exp() / (1f64.exp() + 2.0)).ln();
        assert!((l - expected).abs() < 1e-7);
    }

    #[test]
    fn nt_xent_gradient_matches_finite_differences() {
        let mut rng = seed::rng_from(2);
        let (n, d) = (4, 3);
        let a = tensor(vec![n, d], &mut rng);
        let b = tensor(vec![n, d], &mut rng);
        let (_, ga, gb) = nt_xent_loss(&a, &b, 0.5).unwrap();
        let h = 1e-6;
        for (which, g) in [(0, &ga), (1, &gb)] {
            for i in 0..n * d {
                let eval = |delta: f64| {
                    let mut x = a.clone();
                    let mut y = b.clone();
                    if which == 0 {
                        x.data_mut()[i] += delta;
                    } else {
                        y.data_mut()[i] += delta;
                    }
                    nt_xent_loss(&x, &y, 0.5).unwrap().0
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                assert!((fd - g.data()[i]).abs() < 1e-7, "{which}/{i}: {fd} vs {}", g.data()[i]);
            }
        }
    }

    proptest! {
        #[test]
        fn nt_xent_matches_brute_force(n in 1usize..12, d in 1usize..8, tau in 0.05f64..2.0, s in any::<u64>()) {
            let mut rng = seed::rng_from(s);
            let a = tensor(vec![n, d], &mut rng);
            let b = tensor(vec![n, d], &mut rng);
            let (l, _, _) = nt_xent_loss(&a, &b, tau).unwrap();
            prop_assert!((l - brute_nt_xent(a.data(), b.data(), n, d, tau)).abs() < 1e-6);
        }

        #[test]
        fn nt_xent_scale_and_permutation_invariant(n in 2usize..10, s in any::<u64>(), c in 0.1f64..10.0) {
            let d = 4;
            let mut rng = seed::rng_from(s);
            let a = tensor(vec![n, d], &mut rng);
            let b = tensor(vec![n, d], &mut rng);
            let (l, _, _) = nt_xent_loss(&a, &b, 0.1).unwrap();
            let mut scaled = a.clone();
            scaled.data_mut()[..d].iter_mut().for_each(|v| *v *= c);
            let (ls, _, _) = nt_xent_loss(&scaled, &b, 0.1).unwrap();
            prop_assert!((l - ls).abs() < 1e-6);
            let perm: Vec<usize> = (0..n).rev().collect();
            let permute = |t: &Tensor<f64>| {
                let data = perm.iter().flat_map(|&i| t.data()[i * d..(i + 1) * d].to_vec()).collect();
                Tensor::new(vec![n, d], data).unwrap()
            };
            let (lp, _, _) = nt_xent_loss(&permute(&a), &permute(&b), 0.1).unwrap();
            prop_assert!((l - lp).abs() < 1e-9);
        }

        #[test]
        fn masked_loss_ignores_unmasked_targets(s in any::<u64>(), t in 10usize..60) {
            let mut rng = seed::rng_from(s);
            let target = tensor(vec![1, 3, t], &mut rng);
            let recon = tensor(vec![1, 3, t], &mut rng);
            let keep = make_mask_plan(t, &mut rng).keep_mask(3);
            let (l, g) = masked_reconstruction_loss(&target, &recon, &keep).unwrap();
            let mut other = target.clone();
            for (v, &k) in other.data_mut().iter_mut().zip(&keep) {
                if k {
                    *v += 100.0;
                }
            }
            let (l2, _) = masked_reconstruction_loss(&other, &recon, &keep).unwrap();
            prop_assert_eq!(l, l2);
            prop_assert!(g.data().iter().zip(&keep).all(|(&v, &k)| !k || v == 0.0));
        }
    }

    #[test]
    fn masked_loss_nothing_masked_is_zero() {
        let mut rng = seed::rng_from(3);
        let a = tensor(vec![2, 3, 10], &mut rng);
        let b = tensor(vec![2, 3, 10], &mut rng);
        assert_eq!(masked_reconstruction_loss(&a, &b, &[true; 60]).unwrap().0, 0.0);
    }

    #[test]
    fn masked_loss_zero_reconstruction() {
        let mut rng = seed::rng_from(4);
        let w = tensor(vec![2, 3, 8], &mut rng);
        let keep: Vec<bool> = (0..48).map(|i| i % 2 == 0).collect();
        let (l, _) = masked_reconstruction_loss(&w, &Tensor::zeros(vec![2, 3, 8]), &keep).unwrap();
        let mut s = 0.0;
        for i in 0..48 {
            if !keep[i] {
                s += w.data()[i] * w.data()[i];
            }
        }
        assert!((l - s / 24.0).abs() < 1e-12);
    }

    #[test]
    fn autoencoder_loss_definition() {
        let w = Tensor::new(vec![1, 3, 3], vec![1.0, 2.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let (l, _) = autoencoder_loss(&w, &Tensor::zeros(vec![1, 3, 3])).unwrap();
        assert_eq!(l, 9.0);
        assert_eq!(autoencoder_loss(&w, &w).unwrap().0, 0.0);
        assert!(autoencoder_loss(&w, &Tensor::zeros(vec![1, 3, 2])).is_err());
    }

    #[test]
    fn mask_plan_counts() {
        let mut rng = seed::rng_from(5);
        let p = make_mask_plan(100, &mut rng);
        assert_eq!(p.masked.len(), 10);
        let mut steps: Vec<usize> = p.masked.iter().map(|m| m.0).collect();
        steps.sort();
        steps.dedup();
        assert_eq!(steps.len(), 10);
        assert_eq!(make_mask_plan(100, &mut seed::rng_from(5)), p);
        for (t, a) in &p.masked {
            if let MaskAction::Replace { source } = a {
                assert_ne!(source, t);
            }
        }
    }

    #[test]
    fn mask_action_frequencies() {
        let mut rng = seed::rng_from(6);
        let mut counts = [0usize; 3];
        for _ in 0..100_000 {
            for (_, a) in make_mask_plan(100, &mut rng).masked {
                counts[match a {
                    MaskAction::Zero => 0,
                    MaskAction::Keep => 1,
                    MaskAction::Replace { .. } => 2,
                }] += 1;
            }
        }
        let total: usize = counts.iter().sum();
        for (c, p) in counts.iter().zip([0.8, 0.1, 0.1]) {
            assert!((*c as f64 / total as f64 - p).abs() < 0.01);
        }
    }

    #[test]
    fn mask_apply() {
        let plan = MaskPlan {
            timesteps: 4,
            masked: vec![(0, MaskAction::Zero), (1, MaskAction::Replace { source: 3 }), (2, MaskAction::Keep)],
        };
        let mut x = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
        plan.apply(&mut x, 2);
        assert_eq!(x, vec![0.0, 4.0, 3.0, 4.0, 0.0, 8.0, 7.0, 8.0]);
        assert_eq!(plan.keep_mask(2), vec![false, false, false, true, false, false, false, true]);
    }
}
