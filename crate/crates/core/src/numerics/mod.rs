//! Dense tensors, a reverse-mode tape, named parameter sets and a
//! finite-difference gradient checker.

mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{bce_logit, sigmoid, Gradients, Graph, Var};
pub use params::{Param, ParamSet};
pub use tensor::{matmul, scaled_dot_attention, softmax_rows, Tensor};

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::matrix(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn naive_matmul(a: &Tensor, b: &Tensor) -> Vec<f64> {
        let (m, k, n) = (a.rows(), a.cols(), b.cols());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for t in 0..k {
                    out[i * n + j] += a.get(i, t) * b.get(t, j);
                }
            }
        }
        out
    }

    #[test]
    fn matmul_examples() {
        let m = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(matmul(&Tensor::identity(2), &m).unwrap(), m);
        let a = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![3.0], vec![4.0]]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data(), &[11.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(&mut rng, 3, 4);
        let b = random(&mut rng, 4, 2);
        let c = matmul(&a, &b).unwrap();
        for (x, y) in c.data().iter().zip(naive_matmul(&a, &b)) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn softmax_examples() {
        let s = softmax_rows(&Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap()).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = softmax_rows(&Tensor::scalar(7.0)).unwrap();
        assert_eq!(s.data(), &[1.0]);
        // e^1/(1+e^1) evaluated in extended precision: 0.7310585786300048792511592...
        let s = softmax_rows(&Tensor::from_rows(&[vec![1000.0, 1001.0]]).unwrap()).unwrap();
        assert!((s.data()[0] - 0.268_941_421_369_995_1).abs() < 1e-6);
        assert!((s.data()[1] - 0.731_058_578_630_004_9).abs() < 1e-6);
        assert!(softmax_rows(&Tensor::from_rows(&[vec![f64::NAN, 0.0]]).unwrap()).is_err());
    }

    #[test]
    fn attention_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let q = random(&mut rng, 3, 4);
        let k = random(&mut rng, 1, 4);
        let v = random(&mut rng, 1, 4);
        let out = scaled_dot_attention(&q, &k, &v).unwrap();
        for i in 0..3 {
            assert_eq!(out.row(i), v.row(0));
        }

        // direct formula, written out element by element
        let q = random(&mut rng, 2, 4);
        let k = random(&mut rng, 3, 4);
        let v = random(&mut rng, 3, 4);
        let out = scaled_dot_attention(&q, &k, &v).unwrap();
        for i in 0..2 {
            let scores: Vec<f64> = (0..3)
                .map(|j| (0..4).map(|t| q.get(i, t) * k.get(j, t)).sum::<f64>() / 2.0)
                .collect();
            let z: f64 = scores.iter().map(|s| s.exp()).sum();
            for c in 0..4 {
                let want: f64 = (0..3).map(|j| scores[j].exp() / z * v.get(j, c)).sum();
                assert!((out.get(i, c) - want).abs() <= 1e-12);
            }
        }

        let bad = random(&mut rng, 3, 5);
        assert!(scaled_dot_attention(&q, &bad, &v).is_err());
        let short_v = random(&mut rng, 2, 4);
        assert!(scaled_dot_attention(&q, &k, &short_v).is_err());
    }

    #[test]
    fn backward_examples() {
        let mut ps = ParamSet::new();
        ps.insert("x", Tensor::row_vector(vec![1.0, 2.0]).unwrap(), true).unwrap();
        ps.insert("unused", Tensor::row_vector(vec![5.0]).unwrap(), true).unwrap();
        ps.insert("frozen", Tensor::row_vector(vec![1.0, 1.0]).unwrap(), false).unwrap();
        let mut g = Graph::new();
        let x = g.param(&ps, "x").unwrap();
        let fz = g.param(&ps, "frozen").unwrap();
        let sq = g.mul(x, x).unwrap();
        let t = g.mul(sq, fz).unwrap();
        let loss = g.sum(t);
        g.backward(loss, &mut ps).unwrap();
        assert_eq!(ps.get("x").unwrap().grad.as_ref().unwrap().data(), &[2.0, 4.0]);
        assert_eq!(ps.get("unused").unwrap().grad.as_ref().unwrap().data(), &[0.0]);
        assert!(ps.get("frozen").unwrap().grad.is_none());

        let v = g.param(&ps, "x").unwrap();
        assert!(g.backward(v, &mut ps).is_err());
    }

    #[test]
    fn backward_is_bitwise_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut ps = ParamSet::new();
        ps.insert("a", random(&mut rng, 3, 4), true).unwrap();
        ps.insert("b", random(&mut rng, 4, 5), true).unwrap();
        let build = |g: &mut Graph, ps: &ParamSet| {
            let a = g.param(ps, "a").unwrap();
            let b = g.param(ps, "b").unwrap();
            let c = g.matmul(a, b).unwrap();
            let s = g.softmax_rows(c).unwrap();
            let t = g.tanh(s);
            g.sum(t)
        };
        let mut g1 = Graph::new();
        let l1 = build(&mut g1, &ps);
        let mut p1 = ps.clone();
        g1.backward(l1, &mut p1).unwrap();
        let mut g2 = Graph::new();
        let l2 = build(&mut g2, &ps);
        let mut p2 = ps.clone();
        g2.backward(l2, &mut p2).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn grad_check_quadratic_and_empty() {
        let mut ps = ParamSet::new();
        ps.insert("w", Tensor::row_vector(vec![0.3, -1.2, 2.5]).unwrap(), true).unwrap();
        let quad = |g: &mut Graph, ps: &ParamSet| {
            let w = g.param(ps, "w")?;
            let sq = g.mul(w, w)?;
            let s = g.scale(sq, 3.0);
            Ok(g.sum(s))
        };
        let r = grad_check(quad, &ps, 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-9, "{r:?}");
        assert_eq!(r.entries_checked, 3);

        ps.set_trainable("w", false).unwrap();
        let r = grad_check(quad, &ps, 1e-5).unwrap();
        assert!(r.no_trainable_params);
        assert_eq!(r.max_rel_error, 0.0);

        assert!(grad_check(quad, &ps, 0.0).is_err());
    }

    #[test]
    fn grad_check_detects_nondeterminism() {
        let mut ps = ParamSet::new();
        ps.insert("w", Tensor::scalar(1.0), true).unwrap();
        let mut calls = 0.0;
        let f = |g: &mut Graph, ps: &ParamSet| {
            calls += 1.0;
            let w = g.param(ps, "w")?;
            Ok(g.scale(w, calls))
        };
        assert!(matches!(grad_check(f, &ps, 1e-5), Err(crate::Error::Determinism { .. })));
    }

    /// Every op in the vocabulary against central differences on a random instance.
    #[test]
    fn every_op_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut ps = ParamSet::new();
        ps.insert("a", random(&mut rng, 3, 4), true).unwrap();
        ps.insert("b", random(&mut rng, 4, 3), true).unwrap();
        ps.insert("c", random(&mut rng, 3, 4), true).unwrap();
        ps.insert("bias", random(&mut rng, 1, 4), true).unwrap();
        ps.insert("s", Tensor::scalar(0.4), true).unwrap();
        let labels = [1.0, 0.0, 1.0, 1.0];
        let f = |g: &mut Graph, ps: &ParamSet| -> crate::Result<Var> {
            let a = g.param(ps, "a")?;
            let b = g.param(ps, "b")?;
            let c = g.param(ps, "c")?;
            let bias = g.param(ps, "bias")?;
            let s = g.param(ps, "s")?;
            let ab = g.matmul(a, b)?; // 3x3
            let sm = g.softmax_rows(ab)?;
            let ac = g.matmul_bt(a, c)?; // 3x3
            let prod = g.mul(sm, ac)?;
            let tr = g.transpose(prod)?;
            let sub = g.sub(tr, sm)?;
            let added = g.add(sub, ab)?;
            let scaled = g.scale_by(added, s)?;
            let th = g.tanh(scaled);
            let wide = g.matmul(th, c)?; // 3x4
            let biased = g.add_row(wide, bias)?;
            let sg = g.sigmoid(biased);
            let cat = g.concat_rows(&[sg, a])?; // 6x4
            let rows = g.slice_rows(cat, 1, 4)?;
            let cols = g.slice_cols(rows, 1, 2)?;
            let pooled = g.max_pool_rows(biased);
            let att = g.attention(a, c, th)?;
            let m1 = g.mean(cols);
            let m2 = g.mse(pooled, bias)?;
            let m3 = g.bce_with_logits(pooled, &labels)?;
            let m4 = g.sum(att);
            let t1 = g.add(m1, m2)?;
            let t2 = g.add(m3, m4)?;
            let t3 = g.scale(t2, 0.5);
            g.add(t1, t3)
        };
        let r = grad_check(f, &ps, 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn matrix(r: usize, c: usize) -> impl Strategy<Value = Tensor> {
            proptest::collection::vec(-50.0f64..50.0, r * c)
                .prop_map(move |d| Tensor::matrix(r, c, d).unwrap())
        }

        proptest! {
            #[test]
            fn softmax_rows_sum_to_one(t in matrix(4, 7), shift in -100.0f64..100.0) {
                let s = softmax_rows(&t).unwrap();
                for i in 0..4 {
                    let sum: f64 = s.row(i).iter().sum();
                    prop_assert!((sum - 1.0).abs() <= 1e-12);
                }
                let shifted = softmax_rows(&t.map(|x| x + shift)).unwrap();
                prop_assert!(s.max_abs_diff(&shifted) < 1e-12);
            }

            #[test]
            fn attention_is_key_value_permutation_invariant(
                q in matrix(2, 3), k in matrix(4, 3), v in matrix(4, 3), rot in 0usize..4,
            ) {
                let perm: Vec<usize> = (0..4).map(|i| (i + rot) % 4).rev().collect();
                let permute = |t: &Tensor| {
                    Tensor::from_rows(&perm.iter().map(|&i| t.row(i).to_vec()).collect::<Vec<_>>()).unwrap()
                };
                let a = scaled_dot_attention(&q, &k, &v).unwrap();
                let b = scaled_dot_attention(&q, &permute(&k), &permute(&v)).unwrap();
                prop_assert!(a.max_abs_diff(&b) <= 1e-12);
            }

            #[test]
            fn matmul_gradients_match_finite_differences(a in matrix(2, 3), b in matrix(3, 2)) {
                let mut ps = ParamSet::new();
                ps.insert("a", a.map(|x| x / 50.0), true).unwrap();
                ps.insert("b", b.map(|x| x / 50.0), true).unwrap();
                let r = grad_check(|g, ps| {
                    let a = g.param(ps, "a")?;
                    let b = g.param(ps, "b")?;
                    let c = g.matmul(a, b)?;
                    let s = g.softmax_rows(c)?;
                    let t = g.tanh(s);
                    let u = g.mul(t, c)?;
                    Ok(g.sum(u))
                }, &ps, 1e-5).unwrap();
                prop_assert!(r.max_rel_error < 1e-6);
            }
        }
    }
}
