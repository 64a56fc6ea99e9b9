//! Finite-difference verification for every differentiable tape op.

use std::rc::Rc;

use decaf::numerics::{grad_check, GradCheckSettings, ParamStore, Session, Tensor, Var};

fn settings() -> GradCheckSettings {
    GradCheckSettings {
        eps: 1e-5,
        tol: 1e-3,
        coords_per_param: 32,
        seed: 99,
    }
}

fn check(ps: &ParamStore, build: impl Fn(&mut Session) -> Var) {
    let report = grad_check(ps, build, settings());
    assert!(report.pass, "{}", report.summary());
}

fn store_with(shapes: &[(&str, Vec<usize>)]) -> ParamStore {
    let mut ps = ParamStore::new(0xfeed);
    for (name, shape) in shapes {
        ps.init_uniform(name, shape.clone(), 0.9);
    }
    ps
}

#[test]
fn elementwise_ops() {
    let ps = store_with(&[("a", vec![3, 4]), ("b", vec![3, 4])]);
    check(&ps, |s| {
        let a = s.param("a");
        let b = s.param("b");
        let sum = s.add(a, b);
        let diff = s.sub(sum, b);
        let prod = s.mul(diff, b);
        let scaled = s.scale(prod, 0.7);
        let shifted = s.add_scalar(scaled, 0.1);
        s.sum(shifted)
    });
}

#[test]
fn division() {
    let mut ps = ParamStore::new(5);
    ps.init_uniform("a", vec![2, 3], 1.0);
    // keep denominators away from zero
    ps.insert("b", Tensor::matrix(&[vec![1.5, -2.0, 0.8], vec![2.2, 1.1, -1.4]]).unwrap());
    check(&ps, |s| {
        let a = s.param("a");
        let b = s.param("b");
        let q = s.div(a, b);
        s.sum(q)
    });
}

#[test]
fn matmul_and_transpose() {
    let ps = store_with(&[("a", vec![3, 4]), ("b", vec![4, 2])]);
    check(&ps, |s| {
        let a = s.param("a");
        let b = s.param("b");
        let y = s.matmul(a, b);
        let yt = s.transpose(y);
        let sq = s.mul(yt, yt);
        s.sum(sq)
    });
}

#[test]
fn linear_with_bias_and_row_ops() {
    let ps = store_with(&[("x", vec![3, 4]), ("w", vec![4, 5]), ("b", vec![5]), ("g", vec![5])]);
    check(&ps, |s| {
        let x = s.param("x");
        let w = s.param("w");
        let b = s.param("b");
        let gate = s.param("g");
        let y = s.linear(x, w, b);
        let y = s.mul_row(y, gate);
        let sq = s.mul(y, y);
        s.sum(sq)
    });
}

#[test]
fn activations() {
    let ps = store_with(&[("x", vec![2, 6])]);
    check(&ps, |s| {
        let x = s.param("x");
        let a = s.gelu(x);
        let b = s.sigmoid(a);
        let c = s.softplus(b);
        // relu at random nonzero inputs (kink measure-zero at these draws)
        let d = s.relu(c);
        let p = s.pow_scalar(d, 2.0);
        s.sum(p)
    });
}

#[test]
fn softmax_rows_grad() {
    let ps = store_with(&[("x", vec![3, 5]), ("v", vec![3, 5])]);
    check(&ps, |s| {
        let x = s.param("x");
        let v = s.param("v");
        let sm = s.softmax_rows(x);
        let w = s.mul(sm, v);
        s.sum(w)
    });
}

#[test]
fn layer_norm_grad() {
    let ps = store_with(&[("x", vec![4, 6]), ("gamma", vec![6]), ("beta", vec![6]), ("v", vec![4, 6])]);
    check(&ps, |s| {
        let x = s.param("x");
        let gamma = s.param("gamma");
        let beta = s.param("beta");
        let v = s.param("v");
        let y = s.layer_norm(x, gamma, beta, 1e-5);
        let w = s.mul(y, v);
        s.sum(w)
    });
}

#[test]
fn reductions_and_lse() {
    let ps = store_with(&[("x", vec![3, 4]), ("z", vec![6])]);
    check(&ps, |s| {
        let x = s.param("x");
        let z = s.param("z");
        let m = s.mean(x);
        let mr = s.mean_rows(x);
        let mr_sum = s.sum(mr);
        let l = s.lse(z);
        let a = s.add(m, mr_sum);
        s.add(a, l)
    });
}

#[test]
fn structural_ops() {
    let ps = store_with(&[("x", vec![4, 3]), ("y", vec![4, 2])]);
    check(&ps, |s| {
        let x = s.param("x");
        let y = s.param("y");
        let cat = s.concat_cols(&[x, y]);
        let cols = s.col_range(cat, 1, 4);
        let rows = s.rows_range(cols, 1, 4);
        let r0 = s.row(rows, 0);
        let r2 = s.row(rows, 2);
        let stacked = s.stack_rows(&[r0, r2, r0]);
        let sq = s.mul(stacked, stacked);
        s.sum(sq)
    });
}

#[test]
fn reindex_interp_pool() {
    let ps = store_with(&[("x", vec![6, 3])]);
    let idx = Rc::new(vec![-1i64, 0, 4, 9, 17, 2, -1, 5]);
    check(&ps, move |s| {
        let x = s.param("x");
        let g = s.reindex_zero(x, Rc::clone(&idx), vec![2, 4]);
        let gs = s.mul(g, g);
        let a = s.sum(gs);
        let up = s.linear_interp_rows(x, 11);
        let up2 = s.mul(up, up);
        let b = s.sum(up2);
        let down = s.avg_pool_rows(x, 2);
        let c = s.sum(down);
        let ab = s.add(a, b);
        s.add(ab, c)
    });
}

#[test]
fn attention_grad_with_mask() {
    let ps = store_with(&[("q", vec![4, 3]), ("k", vec![4, 3]), ("v", vec![4, 3])]);
    // local window of +/-1 as an additive mask
    let mut mask = Tensor::zeros(vec![4, 4]);
    for i in 0..4usize {
        for j in 0..4usize {
            if i.abs_diff(j) > 1 {
                mask.set2(i, j, -1e9);
            }
        }
    }
    check(&ps, move |s| {
        let q = s.param("q");
        let k = s.param("k");
        let v = s.param("v");
        let y = s.attention(q, k, v, Some(&mask));
        let sq = s.mul(y, y);
        s.sum(sq)
    });
}

#[test]
fn conv1d_composed_from_reindex_matmul() {
    // conv on tape = im2col reindex + matmul; verify the composition.
    let ps = store_with(&[("x", vec![8, 2]), ("w", vec![6, 3]), ("b", vec![3])]);
    let (t_out, idx) = decaf::numerics::ops::conv1d_plan(8, 2, 3, 2, 1);
    check(&ps, move |s| {
        let x = s.param("x");
        let w = s.param("w");
        let b = s.param("b");
        let patches = s.reindex_zero(x, Rc::clone(&idx), vec![t_out, 6]);
        let y = s.linear(patches, w, b);
        let sq = s.mul(y, y);
        s.sum(sq)
    });
}
