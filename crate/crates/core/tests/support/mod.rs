//! Shared helpers for the integration test targets: randomized geometry
//! property runners, a finite-difference gradient harness, and
//! independent brute-force oracles for ranking and hierarchy scores.

#![allow(dead_code)]

use std::collections::HashSet;

use eth_core::diff::{NodeId, Tape, Tensor};
use eth_core::geometry::{
    exp_map_zero, log_map_zero, mobius_add, poincare_distance, project_to_ball, Curvature,
    PoincarePoint, TangentVector,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

pub fn rng(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Random vector rescaled to a uniform norm in `(0, max_norm]`.
fn random_vec_with_norm(r: &mut impl Rng, dim: usize, max_norm: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..dim).map(|_| r.gen_range(-1.0..1.0)).collect();
    let n = norm(&raw).max(1e-9);
    let target = r.gen_range(1e-6..max_norm);
    raw.into_iter().map(|x| x / n * target).collect()
}

/// Random interior point at up to `max_frac` of the ball radius.
fn random_point(r: &mut impl Rng, dim: usize, c: Curvature, max_frac: f64) -> PoincarePoint {
    let frac = r.gen_range(0.0..max_frac);
    let coords = random_vec_with_norm(r, dim, (frac * (1.0 / c.get().sqrt())).max(1e-9));
    project_to_ball(coords, c)
}

// ---------------------------------------------------------------------------
// Geometry property runners
// ---------------------------------------------------------------------------

pub mod geom {
    use super::*;

    /// log∘exp returns the argument within 1e−6 relative, for ‖v‖ ≤ 3 and
    /// c ∈ [0.1, 5]; exp∘log likewise for interior points.
    pub fn roundtrip(cases: usize) -> Result<(), String> {
        let mut r = rng(101);
        for i in 0..cases {
            let dim = r.gen_range(1..=8);
            let c = Curvature::new(r.gen_range(0.1..5.0)).unwrap();
            let v = TangentVector::new(random_vec_with_norm(&mut r, dim, 3.0)).unwrap();
            let u = exp_map_zero(&v, c).map_err(|e| e.to_string())?;
            let w = log_map_zero(&u).map_err(|e| e.to_string())?;
            let err = v
                .coords()
                .iter()
                .zip(w.coords())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            let rel = err / norm(v.coords()).max(1e-9);
            if rel > 1e-6 {
                return Err(format!("case {i}: tangent roundtrip error {rel:.3e}"));
            }

            let p = random_point(&mut r, dim, c, 0.9);
            let t = log_map_zero(&p).map_err(|e| e.to_string())?;
            let q = exp_map_zero(&t, c).map_err(|e| e.to_string())?;
            let err = p
                .coords()
                .iter()
                .zip(q.coords())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            let rel = err / norm(p.coords()).max(1e-9);
            if rel > 1e-6 {
                return Err(format!("case {i}: point roundtrip error {rel:.3e}"));
            }
        }
        Ok(())
    }

    /// The origin is a two-sided Möbius identity up to FP rounding.
    pub fn identities(cases: usize) -> Result<(), String> {
        let mut r = rng(102);
        for i in 0..cases {
            let dim = r.gen_range(1..=8);
            let c = Curvature::new(r.gen_range(0.1..5.0)).unwrap();
            let y = random_point(&mut r, dim, c, 0.98);
            let zero = PoincarePoint::origin(dim, c);
            let left = mobius_add(&zero, &y).map_err(|e| e.to_string())?;
            let right = mobius_add(&y, &zero).map_err(|e| e.to_string())?;
            for (got, want) in left
                .coords()
                .iter()
                .chain(right.coords())
                .zip(y.coords().iter().chain(y.coords()))
            {
                if (got - want).abs() > 1e-12 * want.abs().max(1.0) {
                    return Err(format!("case {i}: identity violated: {got} vs {want}"));
                }
            }
        }
        Ok(())
    }

    /// d(x,y) = d(y,x) within 1e−10; d ≥ 0; d(x,x) < 1e−10.
    pub fn symmetry_and_coincidence(cases: usize) -> Result<(), String> {
        let mut r = rng(103);
        for i in 0..cases {
            let dim = r.gen_range(1..=8);
            let c = Curvature::new(r.gen_range(0.1..5.0)).unwrap();
            let x = random_point(&mut r, dim, c, 0.98);
            let y = random_point(&mut r, dim, c, 0.98);
            let dxy = poincare_distance(&x, &y).map_err(|e| e.to_string())?;
            let dyx = poincare_distance(&y, &x).map_err(|e| e.to_string())?;
            if dxy < 0.0 {
                return Err(format!("case {i}: negative distance {dxy}"));
            }
            if (dxy - dyx).abs() > 1e-10 {
                return Err(format!("case {i}: asymmetry {dxy} vs {dyx}"));
            }
            let dxx = poincare_distance(&x, &x).map_err(|e| e.to_string())?;
            if dxx >= 1e-10 {
                return Err(format!("case {i}: self-distance {dxx}"));
            }
        }
        Ok(())
    }

    /// d(x,z) ≤ d(x,y) + d(y,z) + 1e−8.
    pub fn triangle(cases: usize) -> Result<(), String> {
        let mut r = rng(104);
        for i in 0..cases {
            let dim = r.gen_range(1..=8);
            let c = Curvature::new(r.gen_range(0.1..5.0)).unwrap();
            let x = random_point(&mut r, dim, c, 0.95);
            let y = random_point(&mut r, dim, c, 0.95);
            let z = random_point(&mut r, dim, c, 0.95);
            let dxz = poincare_distance(&x, &z).map_err(|e| e.to_string())?;
            let dxy = poincare_distance(&x, &y).map_err(|e| e.to_string())?;
            let dyz = poincare_distance(&y, &z).map_err(|e| e.to_string())?;
            if dxz > dxy + dyz + 1e-8 {
                return Err(format!(
                    "case {i}: triangle violated: {dxz} > {dxy} + {dyz}"
                ));
            }
        }
        Ok(())
    }

    /// At c = 1e−8, Möbius addition approaches vector addition and the
    /// geodesic distance approaches 2‖x−y‖, both within 1e−4 relative.
    pub fn euclidean_limit(cases: usize) -> Result<(), String> {
        let mut r = rng(105);
        let c = Curvature::new(1e-8).unwrap();
        for i in 0..cases {
            let dim = r.gen_range(1..=8);
            let xc = random_vec_with_norm(&mut r, dim, 2.0);
            let yc = random_vec_with_norm(&mut r, dim, 2.0);
            let x = PoincarePoint::new(xc.clone(), c).unwrap();
            let y = PoincarePoint::new(yc.clone(), c).unwrap();

            let sum = mobius_add(&x, &y).map_err(|e| e.to_string())?;
            let want: Vec<f64> = xc.iter().zip(&yc).map(|(a, b)| a + b).collect();
            let err: f64 = sum
                .coords()
                .iter()
                .zip(&want)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            if err / norm(&want).max(1e-6) > 1e-4 {
                return Err(format!("case {i}: mobius far from vector addition"));
            }

            let d = poincare_distance(&x, &y).map_err(|e| e.to_string())?;
            let eu: f64 = xc.iter().zip(&yc).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            if eu > 1e-6 && ((d - 2.0 * eu) / (2.0 * eu)).abs() > 1e-4 {
                return Err(format!("case {i}: distance {d} vs 2×Euclidean {}", 2.0 * eu));
            }
        }
        Ok(())
    }

    /// Every produced point stays inside the guarded ball, including for
    /// adversarial on- and outside-boundary inputs.
    pub fn closure(cases: usize) -> Result<(), String> {
        let mut r = rng(106);
        for i in 0..cases {
            let dim = r.gen_range(1..=8);
            let cv = r.gen_range(0.1..5.0);
            let c = Curvature::new(cv).unwrap();
            let radius = 1.0 / cv.sqrt();
            let contained = |p: &PoincarePoint, what: &str| -> Result<(), String> {
                let sq: f64 = p.coords().iter().map(|x| x * x).sum();
                // A few ulps of slack for the projection rescale.
                let max_sq = (1.0 - eth_core::geometry::BALL_EPS).powi(2) / cv * (1.0 + 1e-12);
                if sq > max_sq {
                    return Err(format!("case {i}: {what} escaped the ball: {sq} > {max_sq}"));
                }
                Ok(())
            };

            for factor in [0.5, 1.0 - 1e-16, 1.0, 1.0 + 1e-12, 2.0, 100.0] {
                let coords = random_vec_with_norm(&mut r, dim, 1.0)
                    .into_iter()
                    .map(|x| x * factor * radius)
                    .collect();
                contained(&project_to_ball(coords, c), "projection")?;
            }

            let huge = TangentVector::new(random_vec_with_norm(&mut r, dim, 50.0)).unwrap();
            contained(&exp_map_zero(&huge, c).map_err(|e| e.to_string())?, "exp map")?;

            let a = random_point(&mut r, dim, c, 0.999999);
            let b = random_point(&mut r, dim, c, 0.999999);
            contained(&mobius_add(&a, &b).map_err(|e| e.to_string())?, "mobius")?;
        }
        Ok(())
    }

    /// Runs every property; returns the first failure.
    pub fn all(cases: usize) -> Result<(), String> {
        roundtrip(cases)?;
        identities(cases)?;
        symmetry_and_coincidence(cases)?;
        triangle(cases)?;
        euclidean_limit(cases)?;
        closure(cases)?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Finite-difference gradient harness
// ---------------------------------------------------------------------------

/// Assembles one case's differentiable graph from its leaf nodes.
pub type BuildFn = Box<dyn Fn(&mut Tape, &[NodeId]) -> eth_core::Result<NodeId>>;

/// A differentiable computation from leaf tensors to a scalar root.
pub struct FdCase {
    pub name: &'static str,
    pub inputs: Vec<Tensor>,
    pub build: BuildFn,
}

/// Reduces any matrix to a scalar through fixed, sign-mixed weights, so
/// every element influences the root with a distinct coefficient.
pub fn scalarize(tape: &mut Tape, a: NodeId) -> eth_core::Result<NodeId> {
    let (r, c) = tape.value(a).shape();
    let weights = Tensor::from_vec(
        r,
        c,
        (0..r * c).map(|i| 0.415 * ((i % 7) as f64) - 0.65).collect(),
    )?;
    let w = tape.constant(weights)?;
    let rd = tape.row_dot(a, w)?;
    tape.mean_rows(rd)
}

fn eval_case(case: &FdCase, inputs: &[Tensor]) -> f64 {
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = inputs
        .iter()
        .map(|t| tape.leaf(t.clone()).unwrap())
        .collect();
    let root = (case.build)(&mut tape, &ids).unwrap();
    tape.value(root).scalar_value()
}

/// Central finite differences vs. reverse-mode gradients on every element
/// of every input, at relative tolerance `tol`.
pub fn fd_check(case: &FdCase, h: f64, tol: f64) -> Result<(), String> {
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = case
        .inputs
        .iter()
        .map(|t| tape.leaf(t.clone()).unwrap())
        .collect();
    let root = (case.build)(&mut tape, &ids).map_err(|e| format!("{}: {e}", case.name))?;
    if !tape.value(root).is_scalar() {
        return Err(format!("{}: root is not scalar", case.name));
    }
    let mut grads = tape
        .backward(root)
        .map_err(|e| format!("{}: backward: {e}", case.name))?;
    let gs: Vec<Option<Tensor>> = ids.iter().map(|&id| grads.take(id)).collect();

    for (k, input) in case.inputs.iter().enumerate() {
        for e in 0..input.data().len() {
            let mut plus = case.inputs.clone();
            plus[k].data_mut()[e] += h;
            let mut minus = case.inputs.clone();
            minus[k].data_mut()[e] -= h;
            let fd = (eval_case(case, &plus) - eval_case(case, &minus)) / (2.0 * h);
            let ad = gs[k].as_ref().map_or(0.0, |g| g.data()[e]);
            let rel = (ad - fd).abs() / ad.abs().max(fd.abs()).max(1e-6);
            if rel > tol {
                return Err(format!(
                    "{}: input {k} element {e}: autodiff {ad} vs finite-diff {fd} (rel {rel:.3e})",
                    case.name
                ));
            }
        }
    }
    Ok(())
}

/// One [`FdCase`] per differentiable tape operation, each probing a
/// smooth neighborhood of the op.
pub fn op_cases() -> Vec<FdCase> {
    let mut r = rng(2024);
    let mut t = |rows: usize, cols: usize, lo: f64, hi: f64| {
        Tensor::from_vec(
            rows,
            cols,
            (0..rows * cols).map(|_| r.gen_range(lo..hi)).collect(),
        )
        .unwrap()
    };

    let mut cases: Vec<FdCase> = Vec::new();
    let mut push = |name: &'static str, inputs: Vec<Tensor>, build: BuildFn| {
        cases.push(FdCase {
            name,
            inputs,
            build,
        });
    };

    push(
        "matmul",
        vec![t(3, 4, -1.0, 1.0), t(4, 2, -1.0, 1.0)],
        Box::new(|tp, ids| {
            let y = tp.matmul(ids[0], ids[1])?;
            scalarize(tp, y)
        }),
    );
    push(
        "transpose",
        vec![t(3, 4, -1.0, 1.0)],
        Box::new(|tp, ids| {
            let y = tp.transpose(ids[0])?;
            scalarize(tp, y)
        }),
    );
    push(
        "add",
        vec![t(3, 3, -1.0, 1.0), t(3, 3, -1.0, 1.0)],
        Box::new(|tp, ids| {
            let y = tp.add(ids[0], ids[1])?;
            scalarize(tp, y)
        }),
    );
    push(
        "sub",
        vec![t(3, 3, -1.0, 1.0), t(3, 3, -1.0, 1.0)],
        Box::new(|tp, ids| {
            let y = tp.sub(ids[0], ids[1])?;
            scalarize(tp, y)
        }),
    );
    push(
        "hadamard",
        vec![t(3, 3, -1.0, 1.0), t(3, 3, -1.0, 1.0)],
        Box::new(|tp, ids| {
            let y = tp.hadamard(ids[0], ids[1])?;
            scalarize(tp, y)
        }),
    );
    push(
        "add_row_vec",
        vec![t(3, 4, -1.0, 1.0), t(1, 4, -1.0, 1.0)],
        Box::new(|tp, ids| {
            let y = tp.add_row_vec(ids[0], ids[1])?;
            scalarize(tp, y)
        }),
    );
    push(
        "add_scalar",
        vec![t(2, 3, -1.0, 1.0), t(1, 1, -1.0, 1.0)],
        Box::new(|tp, ids| {
            let y = tp.add_scalar(ids[0], ids[1])?;
            scalarize(tp, y)
        }),
    );
    push(
        "mul_scalar",
        vec![t(2, 3, -1.0, 1.0), t(1, 1, 0.5, 1.5)],
        Box::new(|tp, ids| {
            let y = tp.mul_scalar(ids[0], ids[1])?;
            scalarize(tp, y)
        }),
    );
    push(
        "mul_col_vec",
        vec![t(3, 4, -1.0, 1.0), t(3, 1, -1.0, 1.0)],
        Box::new(|tp, ids| {
            let y = tp.mul_col_vec(ids[0], ids[1])?;
            scalarize(tp, y)
        }),
    );
    push(
        "scale",
        vec![t(2, 3, -1.0, 1.0)],
        Box::new(|tp, ids| {
            let y = tp.scale(ids[0], -1.7)?;
            scalarize(tp, y)
        }),
    );
    push(
        "add_const",
        vec![t(2, 3, -1.0, 1.0)],
        Box::new(|tp, ids| {
            let y = tp.add_const(ids[0], 0.3)?;
            scalarize(tp, y)
        }),
    );
    push(
        "concat_rows",
        vec![t(3, 2, -1.0, 1.0), t(3, 3, -1.0, 1.0)],
        Box::new(|tp, ids| {
            let y = tp.concat_rows(ids[0], ids[1])?;
            scalarize(tp, y)
        }),
    );
    push(
        "mean_rows",
        vec![t(4, 3, -1.0, 1.0)],
        Box::new(|tp, ids| {
            let y = tp.mean_rows(ids[0])?;
            scalarize(tp, y)
        }),
    );
    push(
        "row_dot",
        vec![t(3, 4, -1.0, 1.0), t(3, 4, -1.0, 1.0)],
        Box::new(|tp, ids| {
            let y = tp.row_dot(ids[0], ids[1])?;
            scalarize(tp, y)
        }),
    );
    push(
        "sqrt_norm",
        vec![t(3, 4, 0.3, 1.0)],
        Box::new(|tp, ids| {
            let y = tp.sqrt_norm(ids[0])?;
            scalarize(tp, y)
        }),
    );
    push(
        "broadcast_col",
        vec![t(3, 1, -1.0, 1.0)],
        Box::new(|tp, ids| {
            let y = tp.broadcast_col(ids[0], 5)?;
            scalarize(tp, y)
        }),
    );
    push(
        "broadcast_row",
        vec![t(1, 4, -1.0, 1.0)],
        Box::new(|tp, ids| {
            let y = tp.broadcast_row(ids[0], 3)?;
            scalarize(tp, y)
        }),
    );
    push(
        "tanh",
        vec![t(3, 3, -2.0, 2.0)],
        Box::new(|tp, ids| {
            let y = tp.tanh(ids[0])?;
            scalarize(tp, y)
        }),
    );
    push(
        "sigmoid",
        vec![t(3, 3, -3.0, 3.0)],
        Box::new(|tp, ids| {
            let y = tp.sigmoid(ids[0])?;
            scalarize(tp, y)
        }),
    );
    {
        // Entries bounded away from the kink at 0.
        let mut vals = t(3, 3, 0.2, 1.5);
        for (i, v) in vals.data_mut().iter_mut().enumerate() {
            if i % 2 == 0 {
                *v = -*v;
            }
        }
        push(
            "relu",
            vec![vals.clone()],
            Box::new(|tp, ids| {
                let y = tp.relu(ids[0])?;
                scalarize(tp, y)
            }),
        );
        push(
            "rrelu_eval",
            vec![vals.clone()],
            Box::new(|tp, ids| {
                let mut rr = rng(7);
                let y = tp.rrelu(ids[0], 0.125, 1.0 / 3.0, false, &mut rr)?;
                scalarize(tp, y)
            }),
        );
        push(
            "rrelu_train",
            vec![vals],
            Box::new(|tp, ids| {
                // Fresh fixed-seed stream per evaluation: identical slopes
                // across the autodiff pass and every FD probe.
                let mut rr = rng(7);
                let y = tp.rrelu(ids[0], 0.125, 1.0 / 3.0, true, &mut rr)?;
                scalarize(tp, y)
            }),
        );
    }
    push(
        "arctanh_clamped",
        vec![t(3, 3, -0.85, 0.85)],
        Box::new(|tp, ids| {
            let y = tp.arctanh_clamped(ids[0])?;
            scalarize(tp, y)
        }),
    );
    push(
        "layer_norm",
        vec![t(3, 5, -1.0, 1.0)],
        Box::new(|tp, ids| {
            let y = tp.layer_norm(ids[0])?;
            scalarize(tp, y)
        }),
    );
    push(
        "softplus",
        vec![t(3, 3, -2.0, 2.0)],
        Box::new(|tp, ids| {
            let y = tp.softplus(ids[0])?;
            scalarize(tp, y)
        }),
    );
    push(
        "sqrt_elem",
        vec![t(3, 3, 0.2, 2.0)],
        Box::new(|tp, ids| {
            let y = tp.sqrt_elem(ids[0])?;
            scalarize(tp, y)
        }),
    );
    push(
        "recip",
        vec![t(3, 3, 0.5, 2.0)],
        Box::new(|tp, ids| {
            let y = tp.recip(ids[0])?;
            scalarize(tp, y)
        }),
    );
    push(
        "exp_map_scale",
        vec![t(4, 1, 0.05, 2.5)],
        Box::new(|tp, ids| {
            let y = tp.exp_map_scale(ids[0])?;
            scalarize(tp, y)
        }),
    );
    push(
        "gather_rows",
        vec![t(5, 3, -1.0, 1.0)],
        Box::new(|tp, ids| {
            let y = tp.gather_rows(ids[0], &[0, 2, 2, 4])?;
            scalarize(tp, y)
        }),
    );
    push(
        "scatter_mean_rows",
        vec![t(4, 3, -1.0, 1.0)],
        Box::new(|tp, ids| {
            let y = tp.scatter_mean_rows(ids[0], &[0, 2, 2, 0], 5)?;
            scalarize(tp, y)
        }),
    );
    push(
        "stack_rows",
        vec![t(2, 3, -1.0, 1.0), t(1, 3, -1.0, 1.0), t(3, 3, -1.0, 1.0)],
        Box::new(|tp, ids| {
            let y = tp.stack_rows(&[ids[0], ids[1], ids[2]])?;
            scalarize(tp, y)
        }),
    );
    push(
        "softmax_cross_entropy",
        vec![t(3, 5, -2.0, 2.0)],
        Box::new(|tp, ids| tp.softmax_cross_entropy(ids[0], &[1, 0, 4])),
    );
    {
        let labels = Tensor::from_vec(
            2,
            4,
            vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0],
        )
        .unwrap();
        push(
            "binary_cross_entropy",
            vec![t(2, 4, -2.0, 2.0)],
            Box::new(move |tp, ids| tp.binary_cross_entropy(ids[0], &labels)),
        );
    }

    cases
}

/// Gradient check of the whole pipeline (history encoding through hybrid
/// loss) on a 6-entity / 2-relation / 2-snapshot instance: perturbs three
/// elements of every parameter tensor and compares central finite
/// differences against the tape gradients at 1e−3 relative tolerance.
pub fn end_to_end_fd() -> Result<(), String> {
    use eth_core::data::{add_inverses, build_snapshots, synth_cycle};
    use eth_core::model::{EthConfig, EthParams, Forward, ForwardMode, LossKind, QueryBatch};
    use eth_core::train::batch_loss;

    let config = EthConfig {
        d: 6,
        w: 4,
        layers: 2,
        m: 2,
        ..EthConfig::default()
    };
    let (vocab, quads) = synth_cycle(6, 2, 2, 2).map_err(|e| e.to_string())?;
    let aug = add_inverses(&quads, &vocab).map_err(|e| e.to_string())?;
    let snaps = build_snapshots(&aug);
    let params = EthParams::init(&config, &vocab, &mut rng(21)).map_err(|e| e.to_string())?;
    let batch = QueryBatch::from_snapshot(&snaps[1], &vocab).map_err(|e| e.to_string())?;

    let loss_of = |p: &EthParams| -> f64 {
        let mut fwd = Forward::new(p, &config, &vocab, ForwardMode::Check).unwrap();
        let history = [&snaps[0]];
        let mut rr = rng(5);
        let out = fwd.score_batch(&history, &batch.queries, &mut rr).unwrap();
        let l = batch_loss(&mut fwd, out.logits, &batch.targets, LossKind::SoftmaxCe).unwrap();
        fwd.tape.value(l).scalar_value()
    };

    let mut fwd = Forward::new(&params, &config, &vocab, ForwardMode::Check).unwrap();
    let history = [&snaps[0]];
    let mut rr = rng(5);
    let out = fwd
        .score_batch(&history, &batch.queries, &mut rr)
        .map_err(|e| e.to_string())?;
    let loss = batch_loss(&mut fwd, out.logits, &batch.targets, LossKind::SoftmaxCe)
        .map_err(|e| e.to_string())?;
    let mut grads = fwd.tape.backward(loss).map_err(|e| e.to_string())?;
    let ordered = fwd.nodes.gradients_in_order(&mut grads);
    drop(fwd);

    let mut names = Vec::new();
    params.for_each(&mut |name, _| names.push(name.to_string()));

    let h = 1e-5;
    let tol = 1e-3;
    for (k, name) in names.iter().enumerate() {
        let len = {
            let mut p = params.clone();
            p.tensors_mut()[k].data().len()
        };
        let mut probes = vec![0, len / 2, len - 1];
        probes.dedup();
        for e in probes {
            let mut plus = params.clone();
            plus.tensors_mut()[k].data_mut()[e] += h;
            let mut minus = params.clone();
            minus.tensors_mut()[k].data_mut()[e] -= h;
            let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
            let ad = ordered[k].as_ref().map_or(0.0, |g| g.data()[e]);
            let rel = (ad - fd).abs() / ad.abs().max(fd.abs()).max(1e-6);
            if rel > tol {
                return Err(format!(
                    "parameter {name} element {e}: autodiff {ad} vs finite-diff {fd} (rel {rel:.3e})"
                ));
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Brute-force oracles
// ---------------------------------------------------------------------------

/// Independent ranking oracle: sort unmasked candidate ids by
/// (score descending, id ascending) and report the gold's position.
pub fn oracle_ranks(scores: &Tensor, golds: &[usize], masks: &[Vec<usize>]) -> Vec<usize> {
    (0..scores.rows())
        .map(|q| {
            let masked: HashSet<usize> = masks[q].iter().copied().collect();
            let mut ids: Vec<usize> = (0..scores.cols()).filter(|a| !masked.contains(a)).collect();
            ids.sort_by(|&a, &b| {
                scores
                    .get(q, b)
                    .partial_cmp(&scores.get(q, a))
                    .unwrap()
                    .then(a.cmp(&b))
            });
            ids.iter().position(|&a| a == golds[q]).unwrap() + 1
        })
        .collect()
}

/// Independent hierarchy-score oracle: Floyd–Warshall transitive closure
/// over an explicit adjacency matrix.
pub fn oracle_khs(n: usize, edges: &[(usize, usize)]) -> f64 {
    let mut reach = vec![vec![false; n]; n];
    for &(s, o) in edges {
        if s != o {
            reach[s][o] = true;
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if reach[i][k] && reach[k][j] {
                    reach[i][j] = true;
                }
            }
        }
    }
    let mut reachable = 0usize;
    let mut symmetric = 0usize;
    for (i, row) in reach.iter().enumerate() {
        for (j, &fwd) in row.iter().enumerate() {
            if i != j && fwd {
                reachable += 1;
                if reach[j][i] {
                    symmetric += 1;
                }
            }
        }
    }
    if reachable == 0 {
        0.0
    } else {
        1.0 - symmetric as f64 / reachable as f64
    }
}
