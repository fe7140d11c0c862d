use super::*;
use crate::geodesics::GeodesicConfig;
use crate::mesh::flat_grid;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DenseMatrix::from_fn(rows, cols, |_, _| rng.random::<f64>() * 2.0 - 1.0)
}

fn check(f: impl for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>, leaves: &[DenseMatrix], tol: f64) {
    let r = grad_check(f, leaves, 1e-6, tol).unwrap();
    assert!(r.passed(), "deviation {:?}", r.per_leaf);
}

#[test]
fn matmul_identity() {
    let tape = Tape::new();
    let x = random(3, 4, 1);
    let out = tape.constant(DenseMatrix::identity(3)).matmul(&tape.leaf(x.clone())).unwrap();
    assert_eq!(*out.value(), x);
}

#[test]
fn row_max_routes_to_argmax() {
    let tape = Tape::new();
    let x = tape.leaf(DenseMatrix::from_rows(&[vec![1.0, 3.0], vec![2.0, 0.0]]).unwrap());
    let m = x.row_max().unwrap();
    assert_eq!(m.value().as_slice(), &[3.0, 2.0]);
    let g = tape.backward(m.sum()).unwrap();
    assert_eq!(g.wrt(x).as_slice(), &[0.0, 1.0, 1.0, 0.0]);
}

#[test]
fn max_ties_go_to_lowest_index() {
    let tape = Tape::new();
    let x = tape.leaf(DenseMatrix::from_rows(&[vec![2.0, 2.0], vec![2.0, 1.0]]).unwrap());
    let g = tape.backward(x.row_max().unwrap().sum()).unwrap();
    assert_eq!(g.wrt(x).as_slice(), &[1.0, 0.0, 1.0, 0.0]);
    let g = tape.backward(x.group_max(2).unwrap().sum()).unwrap();
    assert_eq!(g.wrt(x).as_slice(), &[1.0, 1.0, 0.0, 0.0]);
}

#[test]
fn pairwise_distance_of_two_points() {
    let tape = Tape::new();
    let x = tape.leaf(DenseMatrix::from_rows(&[vec![0.0, 0.0, 0.0], vec![3.0, 4.0, 0.0]]).unwrap());
    assert_eq!(x.pairwise_dist().value().as_slice(), &[0.0, 5.0, 5.0, 0.0]);
}

#[test]
fn shape_errors_name_both_shapes() {
    let tape = Tape::new();
    let a = tape.leaf(DenseMatrix::zeros(2, 3));
    let b = tape.leaf(DenseMatrix::zeros(2, 2));
    let e = a.add(&b).unwrap_err().to_string();
    assert!(e.contains("2x3") && e.contains("2x2"), "{e}");
    assert!(a.matmul(&a).unwrap_err().to_string().contains("2x3 vs 2x3"));
}

#[test]
fn sum_gives_ones_and_half_square_gives_x() {
    let tape = Tape::new();
    let v = random(3, 2, 5);
    let x = tape.leaf(v.clone());
    assert_eq!(tape.backward(x.sum()).unwrap().wrt(x), DenseMatrix::filled(3, 2, 1.0));
    let l = x.mul(&x).unwrap().sum().scale(0.5);
    assert_eq!(tape.backward(l).unwrap().wrt(x), v);
}

#[test]
fn non_scalar_loss_is_rejected() {
    let tape = Tape::new();
    let x = tape.leaf(DenseMatrix::zeros(2, 1));
    assert!(matches!(tape.backward(x).unwrap_err(), Error::Shape(_)));
}

#[test]
fn unused_leaf_gets_zero_and_fanout_accumulates() {
    let tape = Tape::new();
    let x = tape.leaf(DenseMatrix::scalar(3.0));
    let unused = tape.leaf(DenseMatrix::zeros(2, 2));
    let l = x.add(&x).unwrap().add(&x).unwrap();
    let g = tape.backward(l).unwrap();
    assert_eq!(g.wrt(x).item(), 3.0);
    assert_eq!(g.wrt(unused), DenseMatrix::zeros(2, 2));
    assert!(g.get(unused).is_none());
}

#[test]
fn backward_twice_is_bit_identical() {
    let tape = Tape::new();
    let w = tape.leaf(random(4, 3, 2));
    let x = tape.constant(random(5, 4, 3));
    let l = x.matmul(&w).unwrap().tanh().square().sum();
    let (a, b) = (tape.backward(l).unwrap(), tape.backward(l).unwrap());
    assert_eq!(a.wrt(w), b.wrt(w));
}

#[test]
fn grad_check_of_sum_of_squares() {
    let r = grad_check(|_, v| Ok(v[0].square().sum()), &[random(3, 3, 1)], 1e-5, 1e-9).unwrap();
    assert!(r.max_deviation <= 1e-9, "{r:?}");
}

#[test]
fn grad_check_detached_leaf_reports_zero() {
    let r = grad_check(|_, v| Ok(v[0].square().sum()), &[random(2, 2, 1), random(2, 2, 2)], 1e-5, 1e-9).unwrap();
    assert_eq!(r.per_leaf[1], 0.0);
}

#[test]
fn primitives_pass_grad_check() {
    let tol = 1e-6;
    let a = random(3, 4, 10);
    let b = random(3, 4, 11);
    let pos = a.map(|x| x.abs() + 0.5);
    check(|_, v| Ok(v[0].add(&v[1])?.square().sum()), &[a.clone(), b.clone()], tol);
    check(|_, v| Ok(v[0].sub(&v[1])?.square().sum()), &[a.clone(), b.clone()], tol);
    check(|_, v| Ok(v[0].mul(&v[1])?.sum()), &[a.clone(), b.clone()], tol);
    check(|_, v| Ok(v[0].div(&v[1])?.sum()), &[a.clone(), pos.clone()], tol);
    check(|_, v| Ok(v[0].add_row(&v[1])?.square().sum()), &[a.clone(), random(1, 4, 12)], tol);
    check(|_, v| Ok(v[0].scale(-2.5).add_scalar(0.3).square().sum()), &[a.clone()], tol);
    check(|_, v| Ok(v[0].matmul(&v[1])?.square().sum()), &[a.clone(), random(4, 2, 13)], tol);
    check(|_, v| Ok(v[0].transpose().matmul(&v[1])?.square().sum()), &[a.clone(), b.clone()], tol);
    check(|_, v| Ok(Var::concat_cols(&[v[0], v[1]])?.square().mean()), &[a.clone(), random(3, 2, 14)], tol);
    check(|_, v| Ok(Var::concat_rows(&[v[0], v[1]])?.tanh().sum()), &[a.clone(), random(1, 4, 15)], tol);
    check(|_, v| Ok(v[0].slice_cols(1, 2)?.square().sum()), &[a.clone()], tol);
    check(|_, v| Ok(v[0].slice_rows(1, 2)?.square().sum()), &[a.clone()], tol);
    check(|_, v| Ok(v[0].reshape(6, 2)?.matmul(&v[1])?.sum()), &[a.clone(), random(2, 1, 16)], tol);
    check(|_, v| Ok(v[0].row_max()?.square().sum()), &[a.clone()], tol);
    check(|_, v| Ok(v[0].group_max(2)?.square().sum()), &[random(6, 3, 17)], tol);
    check(|_, v| Ok(v[0].elu().square().sum()), &[a.map(|x| if x.abs() < 0.05 { 0.3 } else { x })], tol);
    check(|_, v| Ok(v[0].tanh().sum()), &[a.clone()], tol);
    check(|_, v| Ok(v[0].exp().sum()), &[a.clone()], tol);
    check(|_, v| Ok(v[0].sqrt().sum()), &[pos.clone()], tol);
    check(|_, v| Ok(v[0].square().mean()), &[a.clone()], tol);
    let mask: Vec<bool> = (0..12).map(|i| i % 3 != 1).collect();
    check(move |_, v| Ok(v[0].masked_select(&mask)?.square().sum()), &[a.clone()], tol);
    check(|_, v| Ok(v[0].pairwise_dist().square().sum().add(&v[0].pairwise_dist().sum())?), &[random(5, 3, 18)], tol);
    check(|_, v| Ok(v[0].select_rows(&[2, 0, 2])?.square().sum()), &[a.clone()], tol);
}

#[test]
fn solve_node_identity_and_analytic() {
    let tape = Tape::new();
    let a = tape.leaf(DenseMatrix::identity(3));
    let bv = random(3, 2, 1);
    let b = tape.leaf(bv.clone());
    let x = solve_node(&a, &b).unwrap();
    assert_eq!(*x.value(), bv);
    let w = tape.constant(random(3, 2, 2));
    let g = tape.backward(x.mul(&w).unwrap().sum()).unwrap();
    // A = I: b_bar = x_bar = w, A_bar = -w x^T
    assert_eq!(g.wrt(b), *w.value());
    let expect = w.value().matmul(&bv.transpose()).unwrap().scale(-1.0);
    assert!(g.wrt(a).sub(&expect).max_abs() < 1e-15);

    let tape = Tape::new();
    let a = tape.constant(DenseMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 3.0]]).unwrap());
    let b = tape.constant(DenseMatrix::column(&[3.0, 5.0]));
    let x = solve_node(&a, &b).unwrap();
    assert!((x.value()[(0, 0)] - 0.8).abs() < 1e-14 && (x.value()[(1, 0)] - 1.4).abs() < 1e-14);
}

#[test]
fn solve_node_singular() {
    let tape = Tape::new();
    let a = tape.leaf(DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap());
    let b = tape.leaf(DenseMatrix::column(&[1.0, 1.0]));
    assert!(matches!(solve_node(&a, &b).unwrap_err(), Error::Singular { .. }));
}

#[test]
fn solve_node_matches_finite_differences() {
    let a = random(20, 20, 3).add(&DenseMatrix::identity(20).scale(6.0));
    let b = random(20, 2, 4);
    let w = random(20, 2, 5);
    let r = grad_check(
        move |t, v| {
            let x = solve_node(&v[0], &v[1])?;
            x.mul(&t.constant(w.clone()))?.sum().add(&x.square().sum())
        },
        &[a, b],
        1e-6,
        1e-6,
    )
    .unwrap();
    assert!(r.passed(), "{r:?}");
}

#[test]
fn geodesic_node_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let g = flat_grid(5, 4, 1.0);
    let x = DenseMatrix::from_fn(20, 3, |r, c| g.vertices()[r][c] + 0.05 * (rng.random::<f64>() - 0.5));
    let faces = g.faces().to_vec();
    let w = random(20, 20, 9);
    let cfg = GeodesicConfig::default();
    for output in [GeodesicNodeOutput::AllPairs, GeodesicNodeOutput::Sources(vec![3, 11])] {
        let w = w.clone();
        let faces = faces.clone();
        let r = grad_check(
            move |t, v| {
                let d = geodesic_node(&v[0], &faces, &output, &cfg)?;
                let (k, n) = d.shape();
                let wk = DenseMatrix::from_fn(k, n, |i, j| w[(i, j)]);
                Ok(d.mul(&t.constant(wk))?.sum())
            },
            &[x.clone()],
            1e-6,
            1e-4,
        )
        .unwrap();
        assert!(r.passed(), "{r:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn backward_is_linear(seed in 0u64..10_000, ca in -3.0f64..3.0, cb in -3.0f64..3.0) {
        let xv = random(4, 3, seed);
        let grad = |wa: f64, wb: f64| {
            let tape = Tape::new();
            let x = tape.leaf(xv.clone());
            let f = x.tanh().square().sum();
            let g = x.pairwise_dist().sum();
            let l = f.scale(wa).add(&g.scale(wb)).unwrap();
            tape.backward(l).unwrap().wrt(x)
        };
        let combined = grad(ca, cb);
        let separate = grad(1.0, 0.0).scale(ca).add(&grad(0.0, 1.0).scale(cb));
        prop_assert!(combined.sub(&separate).max_abs() <= 1e-12);
    }
}
