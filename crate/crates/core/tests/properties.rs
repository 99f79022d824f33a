use nalgebra::{DMatrix, DVector};
use proptest::collection::vec;
use proptest::prelude::*;
use twolmm::cls::{nnls, solve_nnls_clipped, solve_simplex_qp, ConstraintKind, LeastSquaresFactor, QpProblem};
use twolmm::datagen::{generate_grf_abundances, hapke_invert, hapke_relative_reflectance, GrfSpec};
use twolmm::endmember::{
    check_sufficiently_scattered, match_endmembers, perspective_project, vca_extract, ProjectionSpec,
};
use twolmm::hsi::{AbundanceMatrix, EndmemberMatrix, HsiImage};
use twolmm::lmm::{unmix_lmm, unmix_slmm};
use twolmm::two_lmm::{LbfgsHistory, TwoLmm, TwoLmmConfig, TwoLmmState};

fn config() -> ProptestConfig {
    ProptestConfig { cases: 32, ..ProptestConfig::default() }
}

fn endmembers(p: usize, k: usize, v: &[f64]) -> EndmemberMatrix {
    EndmemberMatrix::new(DMatrix::from_column_slice(p, k, v)).unwrap()
}

/// Columns of `raw` mapped onto the simplex.
fn simplex_columns(k: usize, n: usize, raw: &[f64]) -> DMatrix<f64> {
    let mut a = DMatrix::from_column_slice(k, n, raw);
    for mut c in a.column_iter_mut() {
        let s = c.sum();
        c /= s;
    }
    a
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(k - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, k - 1);
            out.push(q);
        }
    }
    out
}

fn angle_deg(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot / (na * nb)).clamp(-1.0, 1.0).acos().to_degrees()
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn simplex_qp_is_feasible(e in vec(0.0f64..1.0, 24), x in vec(-0.5f64..1.5, 6)) {
        let e = DMatrix::from_column_slice(6, 4, &e);
        let p = QpProblem::from_least_squares(&e, &DVector::from_vec(x), ConstraintKind::Simplex).unwrap();
        let a = solve_simplex_qp(&p).unwrap();
        prop_assert!(a.iter().all(|&v| v >= 0.0));
        prop_assert!((a.sum() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn interior_simplex_solution_matches_lagrange_form(
        g in vec(-1.0f64..1.0, 9),
        w in vec(0.2f64..1.0, 3),
    ) {
        // G = MᵀM + I is well conditioned; choose c so the optimum is the interior point w/Σw.
        let m = DMatrix::from_column_slice(3, 3, &g);
        let gram = m.tr_mul(&m) + DMatrix::identity(3, 3);
        let target = DVector::from_vec(w.clone()) / w.iter().sum::<f64>();
        let linear = &gram * &target + DVector::from_element(3, 0.3);
        let p = QpProblem::new(gram.clone(), linear.clone(), ConstraintKind::Simplex).unwrap();
        let a = solve_simplex_qp(&p).unwrap();

        let ginv = gram.try_inverse().unwrap();
        let ones = DVector::from_element(3, 1.0);
        let unc = &ginv * &linear;
        let g1 = &ginv * &ones;
        let closed = &unc - &g1 * ((ones.dot(&unc) - 1.0) / ones.dot(&g1));
        prop_assert!(closed.iter().all(|&v| v > 0.0));
        prop_assert!((a - closed).amax() <= 1e-8);
    }

    #[test]
    fn clipped_nnls_with_orthonormal_endmembers_is_projection(
        m in vec(-1.0f64..1.0, 15),
        x in vec(-1.0f64..1.0, 10),
    ) {
        let q = DMatrix::from_column_slice(5, 3, &m).qr().q();
        prop_assume!(LeastSquaresFactor::new(&q).is_ok());
        let x = DMatrix::from_column_slice(5, 2, &x);
        let got = solve_nnls_clipped(&q, &x, f64::INFINITY).unwrap();
        let want = q.tr_mul(&x).map(|v| v.max(0.0));
        prop_assert!((got - want).amax() <= 1e-10);
    }

    #[test]
    fn nnls_satisfies_kkt(a in vec(0.0f64..1.0, 20), b in vec(-1.0f64..1.0, 5)) {
        let a = DMatrix::from_column_slice(5, 4, &a);
        let b = DVector::from_vec(b);
        let x = nnls(&a, &b).unwrap();
        let grad = a.tr_mul(&(&a * &x - &b));
        for i in 0..4 {
            prop_assert!(x[i] >= 0.0);
            prop_assert!(grad[i] >= -1e-9);
            if x[i] > 0.0 {
                prop_assert!(grad[i].abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn lmm_abundances_lie_on_simplex(e in vec(0.05f64..1.0, 18), x in vec(0.0f64..1.0, 30)) {
        let e = endmembers(6, 3, &e);
        let img = HsiImage::new(DMatrix::from_column_slice(6, 5, &x)).unwrap();
        let r = unmix_lmm(&img, &e).unwrap();
        for c in r.abundances.data().column_iter() {
            prop_assert!(c.iter().all(|&v| v >= 0.0));
            prop_assert!((c.sum() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn slmm_is_scale_equivariant(
        e in vec(0.05f64..1.0, 18),
        a in vec(0.05f64..1.0, 15),
        c in 0.1f64..10.0,
    ) {
        let e = endmembers(6, 3, &e);
        let x = e.data() * DMatrix::from_column_slice(3, 5, &a);
        let base = unmix_slmm(&HsiImage::new(x.clone()).unwrap(), &e).unwrap();
        let scaled = unmix_slmm(&HsiImage::new(x * c).unwrap(), &e).unwrap();
        prop_assert!((scaled.abundances.data() - base.abundances.data()).amax() <= 1e-9);
        prop_assert!((scaled.s_x - base.s_x * c).amax() <= 1e-9 * c.max(1.0));
    }

    #[test]
    fn two_lmm_iterates_respect_bounds(
        e in vec(0.05f64..1.0, 24),
        a in vec(0.05f64..1.0, 30),
        s in vec(0.5f64..2.0, 13),
    ) {
        let e = endmembers(8, 3, &e);
        let a_s = DMatrix::from_column_slice(3, 10, &a) * DMatrix::from_diagonal(&DVector::from_column_slice(&s[3..]));
        let x = e.data() * DMatrix::from_diagonal(&DVector::from_column_slice(&s[..3])) * a_s;
        let img = HsiImage::new(x).unwrap();
        let cfg = TwoLmmConfig { max_iter: 40, ..TwoLmmConfig::with_alpha(3.0) };
        let solver = TwoLmm::new(&img, &e, cfg.clone()).unwrap();
        for r in [solver.solve_als(None).unwrap(), solver.solve_lbfgs(None).unwrap()] {
            prop_assert!(r.s_e.iter().all(|&v| v >= cfg.lower && v <= cfg.upper));
            let recombined = r.abundances.data() * DMatrix::from_diagonal(&r.s_x);
            prop_assert!(recombined.iter().all(|&v| v >= 0.0 && v <= cfg.upper * (1.0 + 1e-12)));
            let recomposed = e.data() * DMatrix::from_diagonal(&r.s_e) * &recombined;
            prop_assert!((recomposed - r.reconstruction.data()).amax() <= 1e-10);
            prop_assert!(r.trace.entries.iter().all(|t| t.cost.is_finite()));
        }
    }

    #[test]
    fn cost_is_invariant_under_scale_exchange(
        e in vec(0.05f64..1.0, 12),
        a in vec(0.05f64..1.0, 12),
        x in vec(0.0f64..1.0, 24),
        c in vec(0.5f64..2.0, 3),
    ) {
        // Moving a factor from s_E into the matching row of A_s leaves the cost unchanged.
        let e = endmembers(4, 3, &e);
        let img = HsiImage::new(DMatrix::from_column_slice(4, 6, &x)).unwrap();
        let solver = TwoLmm::new(&img, &e, TwoLmmConfig::with_alpha(10.0)).unwrap();
        let a_s = DMatrix::from_column_slice(3, 4, &a).resize_horizontally(6, 0.3);
        let state = TwoLmmState { a_s: a_s.clone(), s_e: DVector::from_element(3, 1.0) };
        let c = DVector::from_vec(c);
        let moved = TwoLmmState {
            a_s: DMatrix::from_diagonal(&c.map(|v| 1.0 / v)) * a_s,
            s_e: c,
        };
        let (j0, j1) = (solver.cost(&state).unwrap(), solver.cost(&moved).unwrap());
        prop_assert!((j0 - j1).abs() <= 1e-10 * j0.max(1.0));
    }

    #[test]
    fn history_discards_flat_curvature(v in vec(-1.0f64..1.0, 4)) {
        let dz = DVector::from_vec(v);
        prop_assume!(dz.norm() > 1e-3);
        let orth = DVector::from_vec(vec![-dz[1], dz[0], -dz[3], dz[2]]);
        let mut h = LbfgsHistory::new(3);
        prop_assert!(!h.push(dz.clone(), orth));
        prop_assert!(!h.push(dz.clone(), -dz.clone()));
        prop_assert!(h.is_empty());
        prop_assert!(h.push(dz.clone(), dz.clone() * 2.0));
        prop_assert_eq!(h.len(), 1);
    }

    #[test]
    fn projection_is_idempotent_and_scale_free(
        x in vec(0.01f64..1.0, 20),
        c in vec(0.1f64..10.0, 4),
    ) {
        let img = HsiImage::new(DMatrix::from_column_slice(5, 4, &x)).unwrap();
        let spec = ProjectionSpec::mean_spectrum(&img).unwrap();
        let once = perspective_project(&img, &spec).unwrap();
        for col in once.data().column_iter() {
            prop_assert!((col.dot(spec.v()) - 1.0).abs() <= 1e-12);
        }
        let twice = perspective_project(&once, &spec).unwrap();
        prop_assert!((twice.data() - once.data()).amax() <= 1e-12);
        let scaled = img.data() * DMatrix::from_diagonal(&DVector::from_vec(c));
        let scaled = perspective_project(&HsiImage::new(scaled).unwrap(), &spec).unwrap();
        prop_assert!((scaled.data() - once.data()).amax() <= 1e-12);
    }

    #[test]
    fn vca_returns_image_columns(e in vec(0.05f64..1.0, 24), a in vec(0.01f64..1.0, 60), seed in 0u64..100) {
        let e = DMatrix::from_column_slice(8, 3, &e);
        let x = e * simplex_columns(3, 20, &a);
        let img = HsiImage::new(x).unwrap();
        if let Ok(found) = vca_extract(&img, 3, seed) {
            for col in found.data().column_iter() {
                let hit = img.data().column_iter().any(|p| p == col);
                prop_assert!(hit);
            }
        }
    }

    #[test]
    fn matching_finds_the_optimal_assignment(
        est in vec(0.01f64..1.0, 12),
        truth in vec(0.01f64..1.0, 12),
    ) {
        let (est, truth) = (endmembers(4, 3, &est), endmembers(4, 3, &truth));
        let m = match_endmembers(&est, &truth).unwrap();
        let col = |e: &EndmemberMatrix, k: usize| e.data().column(k).iter().copied().collect::<Vec<_>>();
        let best = permutations(3)
            .iter()
            .map(|p| (0..3).map(|k| angle_deg(&col(&est, p[k]), &col(&truth, k))).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        prop_assert!((m.sad.iter().sum::<f64>() - best).abs() <= 1e-9);
    }

    #[test]
    fn scatter_pass_survives_added_columns(extra in vec(0.0f64..1.0, 15), seed in 0u64..50) {
        let grid = DMatrix::from_column_slice(3, 6, &[
            0.75, 0.25, 0.0, 0.25, 0.75, 0.0, 0.75, 0.0, 0.25,
            0.25, 0.0, 0.75, 0.0, 0.75, 0.25, 0.0, 0.25, 0.75,
        ]);
        let base = AbundanceMatrix::normalized(grid.clone()).unwrap();
        let before = check_sufficiently_scattered(&base, 100, seed).unwrap();
        let extra: Vec<f64> = extra.iter().map(|v| v + 1e-3).collect();
        let more = DMatrix::from_columns(
            &grid.column_iter().chain(simplex_columns(3, 5, &extra).column_iter()).collect::<Vec<_>>(),
        );
        let after = check_sufficiently_scattered(&AbundanceMatrix::normalized(more).unwrap(), 100, seed).unwrap();
        prop_assert!(!before.passed() || after.passed());
    }

    #[test]
    fn hapke_inverts(w in 0.0f64..=1.0, mu in 0.05f64..=1.0, mu0 in 0.05f64..=1.0) {
        let y = hapke_relative_reflectance(w, mu, mu0).unwrap();
        prop_assert!((hapke_invert(y, mu, mu0).unwrap() - w).abs() <= 1e-9);
    }

    #[test]
    fn grf_abundances_are_normalized(w in 1usize..12, h in 1usize..12, k in 1usize..5, seed in 0u64..1000) {
        let a = generate_grf_abundances(&GrfSpec::new(w, h, k, seed)).unwrap();
        prop_assert_eq!(a.pixels(), w * h);
        for c in a.data().column_iter() {
            prop_assert!(c.iter().all(|&v| v >= 0.0));
            prop_assert!((c.sum() - 1.0).abs() <= 1e-9);
        }
    }
}
