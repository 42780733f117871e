//! Adversarial (least squares), cycle, photorealism and paired L1 losses,
//! recorded on a [`Tape`] so they can be differentiated.

use thiserror::Error;

use crate::matting::{planar_energy_and_gradient, MattingError, SparseMatrix};
use crate::tensor::{Tape, TensorError, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("{op}: shapes {a:?} and {b:?} differ")]
    ShapeMismatch {
        op: &'static str,
        a: [usize; 4],
        b: [usize; 4],
    },
    #[error("{op}: expected a Nx1xHxW patch map, got {shape:?}")]
    NotPatchMap { op: &'static str, shape: [usize; 4] },
    #[error("invalid loss weight {name} = {value}")]
    Weight { name: &'static str, value: f32 },
    #[error(transparent)]
    Matting(#[from] MattingError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    /// cycle consistency
    pub lambda1: f32,
    /// photorealism
    pub lambda2: f32,
    /// paired adversarial
    pub lambda3: f32,
    /// paired L1
    pub lambda4: f32,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 10.0,
            lambda2: 2.0,
            lambda3: 9.9,
            lambda4: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        for (name, value) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("lambda4", self.lambda4),
        ] {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(LossError::Weight { name, value });
            }
        }
        Ok(())
    }
}

fn check_patch_map(tape: &Tape, op: &'static str, v: Var) -> Result<(), LossError> {
    let shape = tape.shape(v);
    if shape[1] != 1 || shape.contains(&0) {
        return Err(LossError::NotPatchMap { op, shape });
    }
    Ok(())
}

fn check_same(tape: &Tape, op: &'static str, a: Var, b: Var) -> Result<(), LossError> {
    let (sa, sb) = (tape.shape(a), tape.shape(b));
    if sa != sb {
        return Err(LossError::ShapeMismatch { op, a: sa, b: sb });
    }
    Ok(())
}

fn mean_sq_offset(tape: &mut Tape, v: Var, target: f32) -> Var {
    let shifted = tape.add_scalar(v, -target);
    let sq = tape.square(shifted);
    tape.mean(sq)
}

/// mean((D(real) − 1)²) + mean(D(fake)²). Not halved.
pub fn lsgan_d_loss(tape: &mut Tape, d_real: Var, d_fake: Var) -> Result<Var, LossError> {
    check_patch_map(tape, "lsgan_d_loss", d_real)?;
    check_patch_map(tape, "lsgan_d_loss", d_fake)?;
    let real = mean_sq_offset(tape, d_real, 1.0);
    let fake = mean_sq_offset(tape, d_fake, 0.0);
    Ok(tape.add(real, fake)?)
}

/// mean((D(fake) − 1)²)
pub fn lsgan_g_loss(tape: &mut Tape, d_fake: Var) -> Result<Var, LossError> {
    check_patch_map(tape, "lsgan_g_loss", d_fake)?;
    Ok(mean_sq_offset(tape, d_fake, 1.0))
}

fn mean_abs_diff(tape: &mut Tape, op: &'static str, a: Var, b: Var) -> Result<Var, LossError> {
    check_same(tape, op, a, b)?;
    let d = tape.sub(a, b)?;
    let abs = tape.abs(d);
    Ok(tape.mean(abs))
}

/// Mean absolute difference between an input and its cycle reconstruction.
pub fn cycle_loss(tape: &mut Tape, x: Var, x_reconstructed: Var) -> Result<Var, LossError> {
    mean_abs_diff(tape, "cycle_loss", x, x_reconstructed)
}

pub fn paired_l1_loss(tape: &mut Tape, fake: Var, ground_truth: Var) -> Result<Var, LossError> {
    mean_abs_diff(tape, "paired_l1_loss", fake, ground_truth)
}

/// Σ_c V_cᵀ M V_c with V = (out + 1)/2, divided by the element count C·H·W
/// and averaged over the batch, so its scale matches the other mean-reduced
/// losses regardless of resolution.
///
/// `matrices[n]` is the Laplacian of the original image of batch item `n`;
/// a single matrix is shared by every item. The node's gradient with respect
/// to `out` is 2·M·V_c · ½ / (N·C·H·W).
pub fn photorealism_loss(tape: &mut Tape, matrices: &[&SparseMatrix], out: Var) -> Result<Var, LossError> {
    let [n, c, h, w] = tape.shape(out);
    if matrices.is_empty() || (matrices.len() != 1 && matrices.len() != n) {
        return Err(LossError::Matting(MattingError::Parameter(format!(
            "need 1 or {n} matrices, got {}",
            matrices.len()
        ))));
    }
    let plane = c * h * w;
    let norm = (n * plane) as f64;
    let mut energy = 0.0f64;
    let mut local_grad = vec![0.0f32; n * plane];
    for item in 0..n {
        let m = matrices[if matrices.len() == 1 { 0 } else { item }];
        if m.dim() != h * w {
            return Err(MattingError::Dimension {
                expected: m.dim(),
                got: h * w,
            }
            .into());
        }
        let v: Vec<f64> = tape.value(out)[item * plane..(item + 1) * plane]
            .iter()
            .map(|&o| (o as f64 + 1.0) * 0.5)
            .collect();
        let (e, g) = planar_energy_and_gradient(m, &v, c)?;
        energy += e;
        for (dst, g) in local_grad[item * plane..(item + 1) * plane].iter_mut().zip(g) {
            *dst = (g * 0.5 / norm) as f32;
        }
    }
    Ok(tape.external_scalar(out, (energy / norm) as f32, local_grad)?)
}

/// adv + λ1·cycle + λ2·photo
pub fn compose_unpaired(adv_g: f32, cycle: f32, photo: f32, w: &LossWeights) -> f32 {
    adv_g + w.lambda1 * cycle + w.lambda2 * photo
}

/// λ3·adv + λ4·L1
pub fn compose_paired(adv_g: f32, l1: f32, w: &LossWeights) -> f32 {
    w.lambda3 * adv_g + w.lambda4 * l1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Unpaired,
    Paired,
}

impl Phase {
    pub fn tag(self) -> &'static str {
        match self {
            Phase::Unpaired => "U",
            Phase::Paired => "P",
        }
    }
}

/// Loss terms of one cycle direction. Terms that do not apply to the phase
/// are zero; `total` is the generator objective of that direction.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DirectionReport {
    pub adv_g: f32,
    pub adv_d: f32,
    pub cycle: f32,
    pub photo: f32,
    pub l1: f32,
    pub total: f32,
}

impl DirectionReport {
    pub fn unpaired(adv_g: f32, adv_d: f32, cycle: f32, photo: f32, w: &LossWeights) -> Self {
        Self {
            adv_g,
            adv_d,
            cycle,
            photo,
            l1: 0.0,
            total: compose_unpaired(adv_g, cycle, photo, w),
        }
    }

    pub fn paired(adv_g: f32, adv_d: f32, l1: f32, w: &LossWeights) -> Self {
        Self {
            adv_g,
            adv_d,
            cycle: 0.0,
            photo: 0.0,
            l1,
            total: compose_paired(adv_g, l1, w),
        }
    }

    fn values(&self) -> [f32; 6] {
        [self.adv_g, self.adv_d, self.cycle, self.photo, self.l1, self.total]
    }

    pub fn is_finite(&self) -> bool {
        self.values().iter().all(|v| v.is_finite())
    }
}

/// Per-iteration record: `forward` is the hazy→clean direction (G_Y, D_Y),
/// `backward` the clean→hazy direction (G_X, D_X).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossReport {
    pub phase: Phase,
    pub forward: DirectionReport,
    pub backward: DirectionReport,
}

pub const TERM_NAMES: [&str; 6] = ["adv_g", "adv_d", "cycle", "photo", "l1", "total"];

impl LossReport {
    pub fn total(&self) -> f32 {
        self.forward.total + self.backward.total
    }

    pub fn is_finite(&self) -> bool {
        self.forward.is_finite() && self.backward.is_finite()
    }

    pub fn tsv_header() -> String {
        let mut cols = vec!["iteration".to_string(), "phase".into(), "lr".into()];
        for dir in ["fwd", "bwd"] {
            cols.extend(TERM_NAMES.iter().map(|t| format!("{dir}_{t}")));
        }
        cols.push("total".into());
        cols.join("\t")
    }

    /// One TSV row. Floats use Rust's shortest round-trip formatting.
    pub fn tsv_row(&self, iteration: u64, lr: f32) -> String {
        let mut cols = vec![iteration.to_string(), self.phase.tag().to_string(), lr.to_string()];
        for d in [&self.forward, &self.backward] {
            cols.extend(d.values().iter().map(|v| v.to_string()));
        }
        cols.push(self.total().to_string());
        cols.join("\t")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar(tape: &Tape, v: Var) -> f32 {
        tape.scalar_value(v)
    }

    #[test]
    fn lsgan_values() {
        let mut tape = Tape::new();
        let ones = tape.constant(&Tensor::full([1, 1, 4, 4], 1.0));
        let zeros = tape.constant(&Tensor::full([1, 1, 4, 4], 0.0));
        let half = tape.constant(&Tensor::full([1, 1, 4, 4], 0.5));
        let neg = tape.constant(&Tensor::full([1, 1, 4, 4], -1.0));
        let l = lsgan_d_loss(&mut tape, ones, zeros).unwrap();
        assert_eq!(scalar(&tape, l), 0.0);
        let l = lsgan_d_loss(&mut tape, half, half).unwrap();
        assert!((scalar(&tape, l) - 0.5).abs() < 1e-7);
        for (v, want) in [(ones, 0.0), (zeros, 1.0), (neg, 4.0)] {
            let l = lsgan_g_loss(&mut tape, v).unwrap();
            assert_eq!(scalar(&tape, l), want);
        }
        let img = tape.constant(&Tensor::zeros([1, 3, 4, 4]));
        assert!(matches!(
            lsgan_g_loss(&mut tape, img),
            Err(LossError::NotPatchMap { .. })
        ));
    }

    #[test]
    fn l1_values() {
        let mut tape = Tape::new();
        let a = Tensor::from_fn([1, 3, 4, 4], |i| (i as f32 * 0.37).sin());
        let b = Tensor::from_fn([1, 3, 4, 4], |i| (i as f32 * 0.37).sin() + 0.25);
        let (va, vb) = (tape.constant(&a), tape.constant(&b));
        let same = cycle_loss(&mut tape, va, va).unwrap();
        assert_eq!(scalar(&tape, same), 0.0);
        let l = paired_l1_loss(&mut tape, vb, va).unwrap();
        assert!((scalar(&tape, l) - 0.25).abs() < 1e-6);
        let ab = cycle_loss(&mut tape, va, vb).unwrap();
        let ba = cycle_loss(&mut tape, vb, va).unwrap();
        assert_eq!(scalar(&tape, ab), scalar(&tape, ba));
        let other = tape.constant(&Tensor::zeros([1, 3, 4, 5]));
        assert!(matches!(
            cycle_loss(&mut tape, va, other),
            Err(LossError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn compose_examples() {
        let w = LossWeights {
            lambda1: 10.0,
            lambda2: 1.0,
            ..LossWeights::default()
        };
        assert_eq!(compose_unpaired(0.0, 0.0, 0.0, &w), 0.0);
        assert!((compose_unpaired(1.0, 0.2, 0.05, &w) - 3.05).abs() < 1e-6);
        assert!((compose_paired(1.0, 1.0, &LossWeights::default()) - 10.0).abs() < 1e-6);
        let off = LossWeights {
            lambda3: 0.0,
            lambda4: 0.0,
            ..w
        };
        assert_eq!(compose_paired(3.0, 2.0, &off), 0.0);
    }

    #[test]
    fn weights_reject_negative() {
        assert!(LossWeights::default().validate().is_ok());
        let bad = LossWeights {
            lambda2: -1.0,
            ..LossWeights::default()
        };
        assert!(matches!(bad.validate(), Err(LossError::Weight { name: "lambda2", .. })));
    }

    #[test]
    fn report_tsv_totals() {
        let w = LossWeights::default();
        let r = LossReport {
            phase: Phase::Unpaired,
            forward: DirectionReport::unpaired(0.5, 0.4, 0.1, 0.01, &w),
            backward: DirectionReport::unpaired(0.6, 0.3, 0.2, 0.02, &w),
        };
        assert!((r.forward.total - (0.5 + 1.0 + 0.02)).abs() < 1e-6);
        let row = r.tsv_row(3, 2e-5);
        assert_eq!(row.split('\t').count(), LossReport::tsv_header().split('\t').count());
        assert!(row.starts_with("3\tU\t"));
    }
}
