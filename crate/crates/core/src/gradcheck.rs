//! Finite-difference checks of every tape operation, the photorealism
//! gradient, and whole-generator parameter gradients.
//!
//! Op-level checks seed a random cotangent `u` at the output and compare the
//! tape's vector-Jacobian product with a fourth-order central difference of
//! `⟨u, f(x)⟩` accumulated in f64.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use thiserror::Error;

use crate::image::{ImageBuffer, ImageError};
use crate::losses::{paired_l1_loss, photorealism_loss, LossError};
use crate::matting::{build_matting_laplacian, planar_energy_and_gradient, MattingError, SparseMatrix, DEFAULT_EPS};
use crate::networks::{build_generator, ArchConfig, LayerKind, NetworkError, NetworkParams, Residual, NORM_EPS};
use crate::tensor::{Activation, Tape, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum GradcheckError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Matting(#[from] MattingError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("tape loss {taped} disagrees with the f64 reference forward {reference}")]
    ReferenceMismatch { taped: f64, reference: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerance {
    pub rel: f64,
    pub abs: f64,
}

impl Tolerance {
    /// Op-level tolerance: max(1e-3 relative, 1e-5 absolute).
    pub const OP: Tolerance = Tolerance { rel: 1e-3, abs: 1e-5 };

    pub fn accepts(&self, analytic: f64, numeric: f64) -> bool {
        let err = (analytic - numeric).abs();
        err <= (self.rel * analytic.abs().max(numeric.abs())).max(self.abs)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub checked: usize,
    pub failures: usize,
    pub max_abs_err: f64,
    /// Largest |a − n| / max(|a|, |n|) over entries above the absolute floor.
    pub max_rel_err: f64,
}

impl CheckResult {
    fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            checked: 0,
            failures: 0,
            max_abs_err: 0.0,
            max_rel_err: 0.0,
        }
    }

    fn record(&mut self, analytic: f64, numeric: f64, tol: Tolerance) {
        let err = (analytic - numeric).abs();
        self.checked += 1;
        self.max_abs_err = self.max_abs_err.max(err);
        if err > tol.abs {
            self.max_rel_err = self.max_rel_err.max(err / analytic.abs().max(numeric.abs()));
        }
        if !tol.accepts(analytic, numeric) {
            self.failures += 1;
        }
    }

    pub fn passed(&self) -> bool {
        self.checked > 0 && self.failures == 0
    }

    pub fn summary(&self) -> String {
        format!(
            "{:<28} {} checked={} failures={} max_abs={:.3e} max_rel={:.3e}",
            self.name,
            if self.passed() { "ok  " } else { "FAIL" },
            self.checked,
            self.failures,
            self.max_abs_err,
            self.max_rel_err
        )
    }
}

/// Fourth-order central difference at 0.
fn stencil<E>(h: f64, f: &mut impl FnMut(f64) -> Result<f64, E>) -> Result<f64, E> {
    Ok((-f(2.0 * h)? + 8.0 * f(h)? - 8.0 * f(-h)? + f(-2.0 * h)?) / (12.0 * h))
}

/// Parameter step for whole-network checks. Differences are taken on an f64
/// reference forward, so the step can be small enough to stay inside one
/// linear piece of every ReLU and resolve sharply curved instance norms.
pub const GENERATOR_STEP: f64 = 1e-7;

type Build<'a> = dyn Fn(&mut Tape, &[Var]) -> Result<Var, TensorError> + 'a;

fn forward_value(build: &Build, inputs: &[Tensor], cot: &[f32]) -> Result<f64, TensorError> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t)).collect();
    let out = build(&mut tape, &vars)?;
    Ok(tape
        .value(out)
        .iter()
        .zip(cot)
        .map(|(&y, &u)| y as f64 * u as f64)
        .sum())
}

/// Checks every coordinate of every input of `build`.
pub fn check_op(
    name: &str,
    inputs: &[Tensor],
    build: &Build,
    h: f32,
    tol: Tolerance,
    seed: u64,
) -> Result<CheckResult, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| tape.leaf(&t.clone().with_requires_grad(true)))
        .collect();
    let out = build(&mut tape, &vars)?;
    let cot: Vec<f32> = (0..tape.value(out).len())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    tape.inject_gradient(out, &cot)?;
    tape.propagate();

    let mut result = CheckResult::new(name);
    let mut probe = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let analytic = tape
            .grad(*var)
            .map(<[f32]>::to_vec)
            .unwrap_or_else(|| vec![0.0; inputs[k].numel()]);
        for (i, &a) in analytic.iter().enumerate() {
            let x0 = inputs[k].data()[i];
            let mut at = |dx: f32| -> Result<f64, TensorError> {
                probe[k].data_mut()[i] = x0 + dx;
                forward_value(build, &probe, &cot)
            };
            let (p2, p1, m1, m2) = (at(2.0 * h)?, at(h)?, at(-h)?, at(-2.0 * h)?);
            probe[k].data_mut()[i] = x0;
            let numeric = (-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * h as f64);
            result.record(a as f64, numeric, tol);
        }
    }
    Ok(result)
}

fn randn(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::randn(shape, 0.0, 1.0, rng)
}

/// Random values with |x| ≥ `margin`, keeping a ±2h stencil off the kink at 0.
fn away_from_zero(shape: [usize; 4], margin: f32, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let mag = rng.random_range(margin..1.5);
        if rng.random_bool(0.5) {
            mag
        } else {
            -mag
        }
    })
}

/// Finite-difference checks of every differentiable tape op.
pub fn op_suite(seed: u64) -> Result<Vec<CheckResult>, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tol = Tolerance::OP;
    let mut out = Vec::new();

    // Linear and quadratic ops are reproduced exactly by the stencil at any
    // step, so a large step keeps f32 rounding small.
    let x = randn([2, 3, 8, 8], &mut rng);
    let w = randn([4, 3, 3, 3], &mut rng);
    let b = randn([1, 4, 1, 1], &mut rng);
    for (stride, padding) in [(1, 1), (2, 1), (1, 0)] {
        out.push(check_op(
            &format!("conv2d s{stride} p{padding}"),
            &[x.clone(), w.clone(), b.clone()],
            &|t, v| t.conv2d(v[0], v[1], v[2], stride, padding),
            0.5,
            tol,
            rng.random(),
        )?);
    }
    let xt = randn([2, 3, 4, 4], &mut rng);
    let wt = randn([3, 2, 3, 3], &mut rng);
    let bt = randn([1, 2, 1, 1], &mut rng);
    for (stride, padding, op) in [(2, 1, 1), (1, 1, 0)] {
        out.push(check_op(
            &format!("conv2d_transpose s{stride} op{op}"),
            &[xt.clone(), wt.clone(), bt.clone()],
            &|t, v| t.conv2d_transpose(v[0], v[1], v[2], stride, padding, op),
            0.5,
            tol,
            rng.random(),
        )?);
    }

    let a = randn([1, 2, 4, 4], &mut rng);
    let c = randn([1, 2, 4, 4], &mut rng);
    out.push(check_op(
        "add",
        &[a.clone(), c.clone()],
        &|t, v| t.add(v[0], v[1]),
        0.5,
        tol,
        rng.random(),
    )?);
    out.push(check_op(
        "sub",
        &[a.clone(), c.clone()],
        &|t, v| t.sub(v[0], v[1]),
        0.5,
        tol,
        rng.random(),
    )?);
    out.push(check_op(
        "square",
        std::slice::from_ref(&a),
        &|t, v| Ok(t.square(v[0])),
        0.5,
        tol,
        rng.random(),
    )?);
    out.push(check_op(
        "mean",
        std::slice::from_ref(&a),
        &|t, v| Ok(t.mean(v[0])),
        0.5,
        tol,
        rng.random(),
    )?);
    out.push(check_op(
        "scalar_mul",
        std::slice::from_ref(&a),
        &|t, v| Ok(t.scalar_mul(v[0], -1.7)),
        0.5,
        tol,
        rng.random(),
    )?);
    out.push(check_op(
        "add_scalar",
        std::slice::from_ref(&a),
        &|t, v| Ok(t.add_scalar(v[0], 0.3)),
        0.5,
        tol,
        rng.random(),
    )?);

    // Smooth nonlinear ops.
    out.push(check_op(
        "tanh",
        std::slice::from_ref(&a),
        &|t, v| Ok(t.tanh(v[0])),
        0.02,
        tol,
        rng.random(),
    )?);
    out.push(check_op(
        "instance_norm",
        std::slice::from_ref(&a),
        &|t, v| t.instance_norm(v[0], NORM_EPS),
        0.02,
        tol,
        rng.random(),
    )?);

    out.push(check_op(
        "instance_norm 2x2",
        &[randn([2, 3, 2, 2], &mut rng)],
        &|t, v| t.instance_norm(v[0], NORM_EPS),
        0.005,
        tol,
        rng.random(),
    )?);

    // Piecewise-linear ops, evaluated away from the kink.
    let k = away_from_zero([1, 2, 4, 4], 0.05, &mut rng);
    out.push(check_op(
        "relu",
        std::slice::from_ref(&k),
        &|t, v| Ok(t.relu(v[0])),
        0.01,
        tol,
        rng.random(),
    )?);
    out.push(check_op(
        "leaky_relu",
        std::slice::from_ref(&k),
        &|t, v| Ok(t.leaky_relu(v[0], 0.2)),
        0.01,
        tol,
        rng.random(),
    )?);
    out.push(check_op("abs", &[k], &|t, v| Ok(t.abs(v[0])), 0.01, tol, rng.random())?);

    // A short composite graph reusing one input along several paths.
    out.push(check_op(
        "composite",
        &[
            randn([1, 3, 8, 8], &mut rng),
            Tensor::randn([3, 3, 3, 3], 0.0, 0.3, &mut rng),
            Tensor::zeros([1, 3, 1, 1]),
        ],
        &|t, v| {
            let y = t.conv2d(v[0], v[1], v[2], 1, 1)?;
            let y = t.instance_norm(y, NORM_EPS)?;
            let y = t.tanh(y);
            let y = t.add(y, v[0])?;
            let sq = t.square(y);
            Ok(t.mean(sq))
        },
        0.02,
        tol,
        rng.random(),
    )?);
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdjointResult {
    pub name: String,
    /// |⟨Lx, u⟩ − ⟨x, Lᵀu⟩| / max(|⟨Lx, u⟩|, 1)
    pub rel_err: f64,
}

impl AdjointResult {
    pub fn passed(&self, tol: f64) -> bool {
        self.rel_err <= tol
    }
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

fn adjoint_err(lhs: f64, rhs: f64) -> f64 {
    (lhs - rhs).abs() / lhs.abs().max(1.0)
}

/// ⟨Lx, u⟩ = ⟨x, Lᵀu⟩ for both convolutions (with the backward pass as Lᵀ),
/// and conv2d_transpose(·, W) as the adjoint of conv2d(·, W).
pub fn adjoint_suite(seed: u64) -> Result<Vec<AdjointResult>, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let w = randn([4, 3, 3, 3], &mut rng);
    let x = randn([2, 3, 8, 8], &mut rng);

    for (name, transpose) in [("conv2d backward", false), ("conv2d_transpose backward", true)] {
        let input = if transpose {
            randn([2, 4, 4, 4], &mut rng)
        } else {
            x.clone()
        };
        let zero_b = Tensor::zeros([1, if transpose { 3 } else { 4 }, 1, 1]);
        let mut tape = Tape::new();
        let xv = tape.leaf(&input.clone().with_requires_grad(true));
        let (wv, bv) = (tape.constant(&w), tape.constant(&zero_b));
        let y = if transpose {
            tape.conv2d_transpose(xv, wv, bv, 2, 1, 1)?
        } else {
            tape.conv2d(xv, wv, bv, 2, 1)?
        };
        let u: Vec<f32> = (0..tape.value(y).len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lhs = dot(tape.value(y), &u);
        tape.inject_gradient(y, &u)?;
        tape.propagate();
        let rhs = dot(input.data(), tape.grad(xv).unwrap_or(&[]));
        out.push(AdjointResult {
            name: name.into(),
            rel_err: adjoint_err(lhs, rhs),
        });
    }

    let mut tape = Tape::new();
    let wv = tape.constant(&w);
    let xv = tape.constant(&x);
    let b4 = tape.constant(&Tensor::zeros([1, 4, 1, 1]));
    let b3 = tape.constant(&Tensor::zeros([1, 3, 1, 1]));
    let lx = tape.conv2d(xv, wv, b4, 2, 1)?;
    let u = randn(tape.shape(lx), &mut rng);
    let uv = tape.constant(&u);
    let ltu = tape.conv2d_transpose(uv, wv, b3, 2, 1, 1)?;
    out.push(AdjointResult {
        name: "conv2d vs conv2d_transpose".into(),
        rel_err: adjoint_err(dot(tape.value(lx), u.data()), dot(x.data(), tape.value(ltu))),
    });
    Ok(out)
}

/// Analytic 2MV against central differences of VᵀMV (all in f64) on a
/// random `size`×`size` RGB image.
pub fn photorealism_energy_check(size: usize, seed: u64) -> Result<CheckResult, GradcheckError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let img = ImageBuffer::from_fn(size, size, 3, |_, _, _| rng.random_range(0.0..1.0))?;
    let m = build_matting_laplacian(&img, DEFAULT_EPS, 1)?;
    let v: Vec<f64> = (0..3 * size * size).map(|_| rng.random_range(0.0..1.0)).collect();
    let (_, grad) = planar_energy_and_gradient(&m, &v, 3)?;
    let h = 1e-3;
    let mut probe = v.clone();
    let mut result = CheckResult::new(format!("photorealism {size}x{size}"));
    for i in 0..v.len() {
        probe[i] = v[i] + h;
        let ep = planar_energy_and_gradient(&m, &probe, 3)?.0;
        probe[i] = v[i] - h;
        let em = planar_energy_and_gradient(&m, &probe, 3)?.0;
        probe[i] = v[i];
        result.record(grad[i], (ep - em) / (2.0 * h), Tolerance { rel: 1e-4, abs: 1e-9 });
    }
    Ok(result)
}

/// Loss attached to the generator output in [`generator_check`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GeneratorLoss {
    /// mean |G(x) − target|
    L1,
    /// per-element photorealism energy of G(x) under the input's Laplacian
    Photorealism,
}

struct GeneratorProblem {
    net: NetworkParams,
    input: Tensor,
    target: Tensor,
    laplacian: SparseMatrix,
}

impl GeneratorProblem {
    fn new(size: usize, seed: u64) -> Result<Self, GradcheckError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arch = ArchConfig {
            base_channels: 4,
            num_residual_blocks: 1,
            image_size: size,
        };
        let net = build_generator(arch, &mut rng)?;
        let img = ImageBuffer::from_fn(size, size, 3, |_, _, _| rng.random_range(0.0..1.0))?;
        let laplacian = build_matting_laplacian(&img, DEFAULT_EPS, 1)?;
        let target = Tensor::rand_uniform([1, 3, size, size], -1.0, 1.0, &mut rng);
        Ok(Self {
            net,
            input: img.to_tensor(),
            target,
            laplacian,
        })
    }

    /// Loss of the f64 reference forward with parameters `params`.
    fn loss_value(&self, params: &[Vec<f64>], loss: GeneratorLoss) -> Result<f64, GradcheckError> {
        let input: Vec<f64> = self.input.data().iter().map(|&v| v as f64).collect();
        let (out, _) = reference_forward(&self.net, params, &input, self.input.shape())?;
        Ok(match loss {
            GeneratorLoss::L1 => {
                out.iter()
                    .zip(self.target.data())
                    .map(|(&a, &b)| (a - b as f64).abs())
                    .sum::<f64>()
                    / out.len() as f64
            }
            GeneratorLoss::Photorealism => {
                let v: Vec<f64> = out.iter().map(|&o| (o + 1.0) * 0.5).collect();
                planar_energy_and_gradient(&self.laplacian, &v, 3)?.0 / v.len() as f64
            }
        })
    }
}

fn activate(v: f64, a: Option<Activation>) -> f64 {
    match a {
        None => v,
        Some(Activation::Relu) => v.max(0.0),
        Some(Activation::LeakyRelu(s)) => {
            if v > 0.0 {
                v
            } else {
                s as f64 * v
            }
        }
        Some(Activation::Tanh) => v.tanh(),
    }
}

/// Straightforward f64 forward pass of `net` with parameter values `params`
/// (one vector per tensor, in `net.params()` order). Independent of the tape.
pub fn reference_forward(
    net: &NetworkParams,
    params: &[Vec<f64>],
    input: &[f64],
    shape: [usize; 4],
) -> Result<(Vec<f64>, [usize; 4]), GradcheckError> {
    if params.len() != 2 * net.layers().len() {
        return Err(TensorError::Argument {
            op: "reference_forward",
            detail: format!(
                "expected {} parameter tensors, got {}",
                2 * net.layers().len(),
                params.len()
            ),
        }
        .into());
    }
    let [n, _, mut h, mut w] = shape;
    let mut x = input.to_vec();
    let mut skip: Option<Vec<f64>> = None;
    for (li, l) in net.layers().iter().enumerate() {
        let (wt, bias) = (&params[2 * li], &params[2 * li + 1]);
        let (k, s, p) = (l.kernel, l.stride, l.padding);
        if l.residual == Residual::Open {
            skip = Some(x.clone());
        }
        let (oh, ow) = match l.kind {
            LayerKind::Conv => ((h + 2 * p - k) / s + 1, (w + 2 * p - k) / s + 1),
            LayerKind::ConvTranspose { output_padding } => (
                (h - 1) * s + k + output_padding - 2 * p,
                (w - 1) * s + k + output_padding - 2 * p,
            ),
        };
        let (ci, co) = (l.in_ch, l.out_ch);
        let mut y = vec![0.0f64; n * co * oh * ow];
        for b in 0..n {
            for o in 0..co {
                for v in &mut y[(b * co + o) * oh * ow..(b * co + o + 1) * oh * ow] {
                    *v = bias[o];
                }
            }
            for i in 0..ci {
                for iy in 0..h {
                    for ix in 0..w {
                        let xv = x[((b * ci + i) * h + iy) * w + ix];
                        for o in 0..co {
                            for ky in 0..k {
                                for kx in 0..k {
                                    match l.kind {
                                        // scatter form of y[o, (iy+p-ky)/s, (ix+p-kx)/s] += x·w[o, i]
                                        LayerKind::Conv => {
                                            let (ty, tx) = (iy + p, ix + p);
                                            if ty < ky || tx < kx || (ty - ky) % s != 0 || (tx - kx) % s != 0 {
                                                continue;
                                            }
                                            let (oy, ox) = ((ty - ky) / s, (tx - kx) / s);
                                            if oy < oh && ox < ow {
                                                y[((b * co + o) * oh + oy) * ow + ox] +=
                                                    xv * wt[((o * ci + i) * k + ky) * k + kx];
                                            }
                                        }
                                        LayerKind::ConvTranspose { .. } => {
                                            let (ty, tx) = (iy * s + ky, ix * s + kx);
                                            if ty < p || tx < p || ty - p >= oh || tx - p >= ow {
                                                continue;
                                            }
                                            y[((b * co + o) * oh + ty - p) * ow + tx - p] +=
                                                xv * wt[((i * co + o) * k + ky) * k + kx];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        if l.norm {
            let plane = oh * ow;
            for chunk in y.chunks_mut(plane) {
                let mean = chunk.iter().sum::<f64>() / plane as f64;
                let var = chunk.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / plane as f64;
                let istd = 1.0 / (var + NORM_EPS as f64).sqrt();
                chunk.iter_mut().for_each(|v| *v = (*v - mean) * istd);
            }
        }
        y.iter_mut().for_each(|v| *v = activate(*v, l.activation));
        if l.residual == Residual::Close {
            let sk = skip.take().expect("residual block opened before it closes");
            y.iter_mut().zip(sk).for_each(|(v, s)| *v += s);
        }
        x = y;
        h = oh;
        w = ow;
    }
    let c = net.layers().last().map_or(shape[1], |l| l.out_ch);
    Ok((x, [n, c, h, w]))
}

/// Parameter gradients of a small generator under `loss`, against central
/// differences of the loss recomputed in f64 from the network output.
///
/// For each parameter tensor, the coordinate with the largest analytic
/// gradient and `random_per_tensor` random coordinates are checked. Biases
/// feeding an instance norm have identically zero gradient and are compared
/// against the absolute floor only.
pub fn generator_check(
    loss: GeneratorLoss,
    size: usize,
    random_per_tensor: usize,
    seed: u64,
) -> Result<CheckResult, GradcheckError> {
    let problem = GeneratorProblem::new(size, seed)?;
    let mut tape = Tape::new();
    let bound = problem.net.bind(&mut tape, true);
    let x = tape.constant(&problem.input);
    let out = problem.net.forward(&mut tape, &bound, x)?;
    let value = match loss {
        GeneratorLoss::L1 => {
            let t = tape.constant(&problem.target);
            paired_l1_loss(&mut tape, out, t)?
        }
        GeneratorLoss::Photorealism => photorealism_loss(&mut tape, &[&problem.laplacian], out)?,
    };
    tape.backward(value)?;

    let name = match loss {
        GeneratorLoss::L1 => format!("generator L1 {size}x{size}"),
        GeneratorLoss::Photorealism => format!("generator photorealism {size}x{size}"),
    };
    let mut result = CheckResult::new(name);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let max_grad = bound
        .vars()
        .iter()
        .filter_map(|v| tape.grad(*v))
        .flat_map(|g| g.iter().map(|x| x.abs()))
        .fold(0.0f32, f32::max) as f64;
    let tol = Tolerance {
        rel: 1e-2,
        abs: 1e-4 * max_grad,
    };
    let params: Vec<Vec<f64>> = problem
        .net
        .params()
        .iter()
        .map(|(_, t)| t.data().iter().map(|&v| v as f64).collect())
        .collect();
    let reference = problem.loss_value(&params, loss)?;
    let taped = tape.scalar_value(value) as f64;
    if (reference - taped).abs() > 1e-4 * reference.abs().max(1.0) {
        return Err(GradcheckError::ReferenceMismatch { taped, reference });
    }
    let mut probe = params.clone();
    for (k, var) in bound.vars().iter().enumerate() {
        let grad = tape.grad(*var).map(<[f32]>::to_vec).unwrap_or_default();
        if grad.is_empty() {
            continue;
        }
        let top = (0..grad.len())
            .max_by(|&a, &b| grad[a].abs().total_cmp(&grad[b].abs()))
            .unwrap_or(0);
        let mut coords = vec![top];
        coords.extend((0..random_per_tensor).map(|_| rng.random_range(0..grad.len())));
        for i in coords {
            let x0 = params[k][i];
            let mut at = |dx: f64| -> Result<f64, GradcheckError> {
                probe[k][i] = x0 + dx;
                problem.loss_value(&probe, loss)
            };
            let numeric = stencil(GENERATOR_STEP, &mut at)?;
            probe[k][i] = x0;
            result.record(grad[i] as f64, numeric, tol);
        }
    }
    Ok(result)
}

/// Every suite, as run by the `gradcheck` command.
#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub ops: Vec<CheckResult>,
    pub adjoints: Vec<AdjointResult>,
    pub photorealism: Vec<CheckResult>,
    pub generator: Vec<CheckResult>,
}

pub const ADJOINT_TOL: f64 = 1e-4;

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.ops
            .iter()
            .chain(&self.photorealism)
            .chain(&self.generator)
            .all(CheckResult::passed)
            && self.adjoints.iter().all(|a| a.passed(ADJOINT_TOL))
    }

    pub fn lines(&self) -> Vec<String> {
        let mut lines: Vec<String> = self.ops.iter().map(CheckResult::summary).collect();
        lines.extend(self.adjoints.iter().map(|a| {
            format!(
                "{:<28} {} rel_err={:.3e}",
                a.name,
                if a.passed(ADJOINT_TOL) { "ok  " } else { "FAIL" },
                a.rel_err
            )
        }));
        lines.extend(
            self.photorealism
                .iter()
                .chain(&self.generator)
                .map(CheckResult::summary),
        );
        lines
    }
}

pub fn run_all(seed: u64) -> Result<GradcheckReport, GradcheckError> {
    Ok(GradcheckReport {
        ops: op_suite(seed)?,
        adjoints: adjoint_suite(seed)?,
        photorealism: vec![photorealism_energy_check(6, seed)?],
        generator: vec![
            generator_check(GeneratorLoss::L1, 8, 3, seed)?,
            generator_check(GeneratorLoss::Photorealism, 8, 3, seed)?,
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tolerance_rule() {
        let t = Tolerance::OP;
        assert!(t.accepts(1.0, 1.0009));
        assert!(!t.accepts(1.0, 1.002));
        assert!(t.accepts(0.0, 9e-6));
        assert!(!t.accepts(0.0, 2e-5));
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // scalar_mul's gradient is checked against a function that is really 2x
        let x = Tensor::from_fn([1, 1, 2, 2], |i| i as f32 + 1.0);
        let mut tape = Tape::new();
        let v = tape.leaf(&x.clone().with_requires_grad(true));
        let y = tape.scalar_mul(v, 2.0);
        tape.inject_gradient(y, &[1.0; 4]).unwrap();
        tape.propagate();
        let mut r = CheckResult::new("wrong");
        for &g in tape.grad(v).unwrap() {
            r.record(g as f64, 3.0, Tolerance::OP);
        }
        assert!(!r.passed());
        assert_eq!(r.failures, 4);
    }
}
