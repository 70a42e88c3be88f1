use nalgebra::{DMatrix, DVector, SymmetricEigen};
use proptest::prelude::*;

use peerfx::blockmat::{BlockDiag, ClassroomBlock};
use peerfx::inference::spearman;
use peerfx::model::{DeltaDims, StructuralDelta};

fn dense(b: &ClassroomBlock) -> DMatrix<f64> {
    let n = b.size;
    let j = DMatrix::from_element(n, n, 1.0 / n as f64);
    (DMatrix::identity(n, n) - &j) * b.p + j * b.q
}

fn coef() -> impl Strategy<Value = f64> {
    prop_oneof![0.05f64..4.0, -4.0f64..-0.05]
}

fn block() -> impl Strategy<Value = ClassroomBlock> {
    (coef(), coef(), 2usize..=8).prop_map(|(p, q, n)| ClassroomBlock::new(p, q, n).unwrap())
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #[test]
    fn compose_and_invert_match_dense(a in block(), pq in (coef(), coef())) {
        let b = ClassroomBlock::new(pq.0, pq.1, a.size).unwrap();
        let prod = dense(&a.compose(&b).unwrap());
        prop_assert!((prod - dense(&a) * dense(&b)).amax() < 1e-12 * 16.0);
        let inv = dense(&a.invert().unwrap()) * dense(&a);
        prop_assert!((inv - DMatrix::identity(a.size, a.size)).amax() < 1e-12);
    }

    #[test]
    fn spectrum_is_p_repeated_and_q(a in block()) {
        let eig = SymmetricEigen::new(dense(&a));
        let mut got: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        got.sort_by(f64::total_cmp);
        let mut want = vec![a.p; a.size - 1];
        want.push(a.q);
        want.sort_by(f64::total_cmp);
        for (g, w) in got.iter().zip(&want) {
            prop_assert!((g - w).abs() < 1e-12 * 8.0, "{got:?} vs {want:?}");
        }
        prop_assert!(close(a.trace(), dense(&a).trace()));
        prop_assert!(close(a.determinant(), dense(&a).determinant()));
    }

    #[test]
    fn block_diag_quad_form_matches_dense(sizes in prop::collection::vec((coef(), coef(), 2usize..=6), 1..5), seed in 0u64..1000) {
        let blocks: Vec<ClassroomBlock> = sizes.iter().map(|&(p, q, n)| ClassroomBlock::new(p, q, n).unwrap()).collect();
        let bd = BlockDiag::new(blocks.clone());
        let n = bd.dim();
        let mut d = DMatrix::zeros(n, n);
        let mut off = 0;
        for b in &blocks {
            d.view_mut((off, off), (b.size, b.size)).copy_from(&dense(b));
            off += b.size;
        }
        let u = DVector::from_fn(n, |i, _| ((i as f64 + 1.0) * (seed as f64 + 0.5)).sin());
        let v = DVector::from_fn(n, |i, _| ((i as f64 + 2.0) * 0.7 + seed as f64).cos());
        let q = bd.quad_form(u.as_slice(), v.as_slice()).unwrap();
        prop_assert!(close(q, u.dot(&(&d * &v))));
        let applied = DVector::from_vec(bd.apply(v.as_slice()).unwrap());
        prop_assert!((applied - &d * &v).amax() < 1e-12 * 8.0);
        prop_assert!(close(bd.trace_of_square(), (&d * &d).trace()));
    }

    #[test]
    fn structural_delta_round_trip(
        vc in prop::collection::vec(-50.0f64..50.0, 0..3),
        w1c in prop::collection::vec(-50.0f64..50.0, 0..3),
        vp in prop::collection::vec(-50.0f64..50.0, 0..3),
        w1p in prop::collection::vec(-50.0f64..50.0, 0..3),
        f1 in 0.2f64..3.0,
        rho in -0.9f64..0.9,
    ) {
        let s = StructuralDelta {
            delta_vc: vc.clone(),
            beta_w1c: w1c.clone(),
            beta_w2c: w1c.iter().map(|x| x * 0.5).collect(),
            delta_vp: vp.clone(),
            beta_w1p: w1p.clone(),
            beta_w2p: w1p.iter().map(|x| x - 1.0).collect(),
        };
        let dims: DeltaDims = s.dims();
        let packed = s.pack(f1, rho);
        prop_assert_eq!(packed.len(), dims.p_x());
        let back = StructuralDelta::unpack(&packed, dims, f1).unwrap();
        for (a, b) in back.pack(f1, rho).iter().zip(&packed) {
            prop_assert!((a - b).abs() < 1e-9 * b.abs().max(1.0));
        }
    }

    #[test]
    fn spearman_invariant_to_monotone_maps(xs in prop::collection::vec(-100.0f64..100.0, 3..40), shift in -5.0f64..5.0) {
        let ys: Vec<f64> = xs.iter().enumerate().map(|(i, x)| x.sin() + 0.1 * i as f64).collect();
        let base = spearman(&xs, &ys);
        let mapped: Vec<f64> = xs.iter().map(|x| (x / 50.0).exp() * 3.0 + shift).collect();
        let cubed: Vec<f64> = ys.iter().map(|y| y.powi(3)).collect();
        match (base, spearman(&mapped, &cubed)) {
            (Ok(a), Ok(b)) => prop_assert!((a - b).abs() < 1e-12),
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "{a:?} vs {b:?}"),
        }
    }
}
