mod common;

use common::*;
use cuspflow::linear::{CompositeSystem, EndRow, SolverKind};
use cuspflow::ScalarField;
use faer::prelude::Solve;
use faer::Mat;

fn dense(sys: &CompositeSystem) -> Mat<f64> {
    let n = sys.dim();
    let mut m = Mat::zeros(n, n);
    let mut e = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        let col = sys.apply(&e);
        for i in 0..n {
            m[(i, j)] = col[i];
        }
        e[j] = 0.0;
    }
    m
}

fn rhs(sys: &CompositeSystem, a: &std::sync::Arc<cuspflow::ChartAtlas>) -> Vec<f64> {
    let (_, q) = manufactured(a);
    let end = vec![vec![0.3, 0.1, -0.2, 0.0, 0.0, 0.0, 0.0, 0.05, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]];
    sys.rhs(&q, &end, 0.4)
}

#[test]
fn bordered_direct_solve_matches_dense_lu() {
    let a = one_end(24);
    let m = background(&a);
    let sys = CompositeSystem::assemble(&m, &ScalarField::zeros(&a), &[EndRow::ZeroModeSlope], true);
    let b = rhs(&sys, &a);
    let (x, _) = sys.factorize(SolverKind::Direct).unwrap().solve(&b).unwrap();
    let d = dense(&sys);
    let bm = Mat::from_fn(b.len(), 1, |i, _| b[i]);
    let y = d.full_piv_lu().solve(&bm);
    let scale = (0..b.len()).map(|i| y[(i, 0)].abs()).fold(0.0, f64::max);
    for i in 0..b.len() {
        assert!((x[i] - y[(i, 0)]).abs() < 1e-9 * scale, "row {i}: {} vs {}", x[i], y[(i, 0)]);
    }
    let r = sys.apply(&x);
    assert!(r.iter().zip(&b).all(|(p, q)| (p - q).abs() < 1e-9 * (1.0 + q.abs())));
}

#[test]
fn schwarz_matches_direct() {
    let a = one_end(32);
    let m = background(&a);
    let coef = ScalarField::constant(&a, 4.0);
    for rows in [EndRow::Dirichlet, EndRow::ZeroModeSlope, EndRow::Neumann] {
        let sys = CompositeSystem::assemble(&m, &coef, &[rows], false);
        let b = rhs(&sys, &a);
        let (x, _) = sys.factorize(SolverKind::Direct).unwrap().solve(&b).unwrap();
        let (y, stats) = sys.factorize(SolverKind::Schwarz { tol: 1e-12, max_sweeps: 50 }).unwrap().solve(&b).unwrap();
        assert!(stats.sweeps <= 50 && stats.interface_residual <= 1e-12);
        let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(x.iter().zip(&y).all(|(p, q)| (p - q).abs() < 1e-9 * scale), "{rows:?}");
    }
}

#[test]
fn schwarz_refuses_bordered_systems() {
    let a = one_end(24);
    let m = background(&a);
    let sys = CompositeSystem::assemble(&m, &ScalarField::zeros(&a), &[EndRow::ZeroModeSlope], true);
    assert!(sys.factorize(SolverKind::Schwarz { tol: 1e-10, max_sweeps: 50 }).is_err());
}

#[test]
fn constants_are_in_the_kernel_of_laplacian_rows() {
    let a = one_end(32);
    let m = background(&a);
    let sys = CompositeSystem::assemble(&m, &ScalarField::zeros(&a), &[EndRow::ZeroModeSlope], false);
    // exact modal representation: zero mode 1, every other mode 0
    let nt = a.cusps[0].n_theta();
    let mut ones = vec![0.0; sys.dim()];
    ones[..sys.layout.core_nodes.len()].fill(1.0);
    for i in 0..a.cusps[0].n_s {
        ones[sys.layout.cusp(&a, 0, i, 0)] = 1.0;
    }
    assert_eq!(nt, 16);
    let y = sys.apply(&ones);
    // end rows hold the constant's own modes, every other row is zero
    let n_end = a.cusps[0].n_theta();
    let dim = sys.dim();
    let bad: Vec<(usize, f64)> = y[..dim - n_end].iter().copied().enumerate().filter(|(_, v)| v.abs() >= 1e-12).take(5).collect();
    assert!(bad.is_empty(), "{bad:?} core {}", sys.layout.core_nodes.len());
    let (f, mult) = sys.to_field(&ones);
    assert!(mult.is_none());
    assert!(active_sup(&f.zip_map(&ScalarField::constant(&a, 1.0), |p, q| p - q)) < 1e-14);
}
