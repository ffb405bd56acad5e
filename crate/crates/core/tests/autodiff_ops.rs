use rand::Rng as _;
use vdea::autodiff::{grad_check, Axis, Graph, Tensor, Var};
use vdea::rng::{rng_from, Rng};
use vdea::Result;

fn uniform(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(rows, cols, data).unwrap()
}

/// Contracts an arbitrary-shaped output with fixed random weights so every
/// output entry gets a distinct upstream gradient.
fn project(g: &mut Graph, out: Var, seed: u64) -> Result<Var> {
    let [r, c] = g.shape(out);
    let w = uniform(r, c, -1.0, 1.0, &mut rng_from(seed, &[99]));
    let w = g.constant(w);
    let prod = g.mul(out, w)?;
    g.sum(prod)
}

type Case = (
    &'static str,
    Vec<Tensor>,
    Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>,
);

fn cases(seed: u64) -> Vec<Case> {
    let mut rng = rng_from(seed, &[]);
    let (m, k, n) = (
        rng.random_range(1..4),
        rng.random_range(1..4),
        rng.random_range(1..4),
    );
    let mut u = |r, c| uniform(r, c, -1.5, 1.5, &mut rng);
    let a = u(m, k);
    let b = u(k, n);
    let same = u(m, k);
    let row = u(1, k);
    let col = u(m, 1);
    let other = u(n, k);
    let weights = uniform(n, k, 0.2, 2.0, &mut rng_from(seed, &[1]));
    let positive = uniform(m, k, 0.5, 3.0, &mut rng_from(seed, &[2]));
    let s = seed;
    vec![
        (
            "matmul",
            vec![a.clone(), b],
            Box::new(move |g, v| {
                let o = g.matmul(v[0], v[1])?;
                project(g, o, s)
            }),
        ),
        (
            "transpose",
            vec![a.clone()],
            Box::new(move |g, v| {
                let o = g.transpose(v[0])?;
                project(g, o, s)
            }),
        ),
        (
            "add row broadcast",
            vec![a.clone(), row.clone()],
            Box::new(move |g, v| {
                let o = g.add(v[0], v[1])?;
                project(g, o, s)
            }),
        ),
        (
            "sub column broadcast",
            vec![a.clone(), col.clone()],
            Box::new(move |g, v| {
                let o = g.sub(v[0], v[1])?;
                project(g, o, s)
            }),
        ),
        (
            "mul",
            vec![a.clone(), same.clone()],
            Box::new(move |g, v| {
                let o = g.mul(v[0], v[1])?;
                project(g, o, s)
            }),
        ),
        (
            "div",
            vec![a.clone(), positive.clone()],
            Box::new(move |g, v| {
                let o = g.div(v[0], v[1])?;
                project(g, o, s)
            }),
        ),
        (
            "scale and offset",
            vec![a.clone()],
            Box::new(move |g, v| {
                let o = g.scale(v[0], -2.5)?;
                let o = g.offset(o, 0.3)?;
                project(g, o, s)
            }),
        ),
        (
            "exp",
            vec![a.clone()],
            Box::new(move |g, v| {
                let o = g.exp(v[0])?;
                project(g, o, s)
            }),
        ),
        (
            "log",
            vec![positive.clone()],
            Box::new(move |g, v| {
                let o = g.log(v[0])?;
                project(g, o, s)
            }),
        ),
        (
            "sigmoid",
            vec![a.clone()],
            Box::new(move |g, v| {
                let o = g.sigmoid(v[0])?;
                project(g, o, s)
            }),
        ),
        (
            "tanh",
            vec![a.clone()],
            Box::new(move |g, v| {
                let o = g.tanh(v[0])?;
                project(g, o, s)
            }),
        ),
        (
            "softplus",
            vec![a.clone()],
            Box::new(move |g, v| {
                let o = g.softplus(v[0])?;
                project(g, o, s)
            }),
        ),
        (
            "square",
            vec![a.clone()],
            Box::new(move |g, v| {
                let o = g.square(v[0])?;
                project(g, o, s)
            }),
        ),
        (
            "sqrt",
            vec![positive.clone()],
            Box::new(move |g, v| {
                let o = g.sqrt(v[0])?;
                project(g, o, s)
            }),
        ),
        (
            "clamp",
            vec![a.clone()],
            Box::new(move |g, v| {
                let o = g.clamp(v[0], -10.0, 10.0)?;
                project(g, o, s)
            }),
        ),
        (
            "sum",
            vec![a.clone()],
            Box::new(move |g, v| {
                let o = g.sum(v[0])?;
                project(g, o, s)
            }),
        ),
        (
            "sum over rows",
            vec![a.clone()],
            Box::new(move |g, v| {
                let o = g.sum_axis(v[0], Axis::Rows)?;
                project(g, o, s)
            }),
        ),
        (
            "sum over cols",
            vec![a.clone()],
            Box::new(move |g, v| {
                let o = g.sum_axis(v[0], Axis::Cols)?;
                project(g, o, s)
            }),
        ),
        (
            "mean",
            vec![a.clone()],
            Box::new(move |g, v| {
                let o = g.mean(v[0])?;
                project(g, o, s)
            }),
        ),
        (
            "softmax cols",
            vec![a.clone()],
            Box::new(move |g, v| {
                let o = g.softmax(v[0], Axis::Cols)?;
                project(g, o, s)
            }),
        ),
        (
            "softmax rows",
            vec![a.clone()],
            Box::new(move |g, v| {
                let o = g.softmax(v[0], Axis::Rows)?;
                project(g, o, s)
            }),
        ),
        (
            "log_softmax",
            vec![a.clone()],
            Box::new(move |g, v| {
                let o = g.log_softmax(v[0], Axis::Cols)?;
                project(g, o, s)
            }),
        ),
        (
            "concat",
            vec![a.clone(), same.clone(), col],
            Box::new(move |g, v| {
                let r = g.concat(v[0], v[1], Axis::Rows)?;
                let c = g.concat(v[0], v[2], Axis::Cols)?;
                let r = project(g, r, s)?;
                let c = project(g, c, s + 1)?;
                g.add(r, c)
            }),
        ),
        (
            "slice",
            vec![a.clone()],
            Box::new(move |g, v| {
                let [r, c] = g.shape(v[0]);
                let o = g.slice(v[0], Axis::Rows, r / 2, r)?;
                let o = g.slice(o, Axis::Cols, 0, c.div_ceil(2))?;
                project(g, o, s)
            }),
        ),
        (
            "weighted_sq_dist",
            vec![a.clone(), other, weights],
            Box::new(move |g, v| {
                let o = g.weighted_sq_dist(v[0], v[1], v[2])?;
                project(g, o, s)
            }),
        ),
        (
            "three-layer composition",
            vec![
                a,
                u_fixed(k, 3, seed),
                row_fixed(3, seed),
                u_fixed(3, 2, seed + 5),
            ],
            Box::new(move |g, v| {
                let h = g.matmul(v[0], v[1])?;
                let h = g.add(h, v[2])?;
                let h = g.tanh(h)?;
                let h = g.matmul(h, v[3])?;
                let h = g.sigmoid(h)?;
                let h = g.softplus(h)?;
                project(g, h, s)
            }),
        ),
    ]
}

fn u_fixed(r: usize, c: usize, seed: u64) -> Tensor {
    uniform(
        r,
        c,
        -1.0,
        1.0,
        &mut rng_from(seed, &[r as u64, c as u64, 3]),
    )
}

fn row_fixed(c: usize, seed: u64) -> Tensor {
    uniform(1, c, -1.0, 1.0, &mut rng_from(seed, &[c as u64, 4]))
}

#[test]
fn every_op_matches_central_differences_over_many_seeds() {
    for seed in 0..100 {
        for (name, params, f) in cases(seed) {
            let err = grad_check(|g, v| f(g, v), &params, 1e-5).unwrap();
            assert!(err <= 1e-4, "{name}, seed {seed}: relative error {err}");
        }
    }
}

#[test]
fn backward_is_linear_in_the_loss() {
    let mut rng = rng_from(3, &[]);
    let x0 = uniform(3, 4, -1.0, 1.0, &mut rng);
    let grad_of = |which: u8| {
        let mut g = Graph::new();
        let x = g.param(x0.clone());
        let f1 = {
            let t = g.tanh(x).unwrap();
            g.sum(t).unwrap()
        };
        let f2 = {
            let e = g.exp(x).unwrap();
            g.mean(e).unwrap()
        };
        let loss = match which {
            1 => f1,
            2 => f2,
            _ => g.add(f1, f2).unwrap(),
        };
        g.backward(loss).unwrap().get(x).unwrap().clone()
    };
    let (a, b, both) = (grad_of(1), grad_of(2), grad_of(0));
    for i in 0..both.len() {
        let sum = a.data()[i] + b.data()[i];
        assert!((both.data()[i] - sum).abs() <= 1e-15 * sum.abs().max(1.0));
    }
}

#[test]
fn forward_and_backward_are_deterministic() {
    let run = || {
        let mut rng = rng_from(8, &[]);
        let mut g = Graph::new();
        let x = g.param(uniform(5, 3, -1.0, 1.0, &mut rng));
        let w = g.param(uniform(3, 4, -1.0, 1.0, &mut rng));
        let h = g.matmul(x, w).unwrap();
        let h = g.log_softmax(h, Axis::Cols).unwrap();
        let loss = g.sum(h).unwrap();
        let value = g.value(loss).item();
        let grads = g.backward(loss).unwrap();
        (value.to_bits(), grads.get(w).unwrap().clone())
    };
    let (a, b) = (run(), run());
    assert_eq!(a.0, b.0);
    assert_eq!(
        a.1.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
        b.1.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>()
    );
}
