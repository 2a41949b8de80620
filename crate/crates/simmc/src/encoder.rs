//! The skeleton encoder, masked average pooling, the projection head, and
//! exact reverse-mode gradients for all of them.
//!
//! Per frame: `h = W2 * relu(W1 * s)` (optional biases are off by default;
//! the bias-free totals give 150,272 parameters at K=75, H=256). A masked
//! subsequence is pooled as the plain mean of the surviving frames' `h`
//! vectors; the projection head is a single linear map `z = Wc * v`.
//!
//! Gradients are computed by hand on a [`Tape`] that caches the forward
//! activations of one batch. The ReLU derivative at exactly zero is zero.

use rand::Rng;

use crate::data::SkeletonSequence;
use crate::error::{Error, Result};
use crate::mask::MaskVector;
use crate::mat::Mat;

/// Optional bias vectors (disabled by default; the published model is
/// bias-free).
#[derive(Debug, Clone, PartialEq)]
pub struct BiasParams {
    pub b1: Vec<f64>,
    pub b2: Vec<f64>,
    pub bc: Vec<f64>,
}

/// Learnable weights: `w1` (H x K), `w2` (H x H), projection `wc` (H x H).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub w1: Mat,
    pub w2: Mat,
    pub wc: Mat,
    pub bias: Option<BiasParams>,
}

impl ModelParams {
    /// Uniform init in `[-a, a]` with `a = sqrt(6 / (fan_in + fan_out))` per
    /// matrix. Values are drawn on the `f32` grid so a freshly initialized
    /// model survives the 32-bit checkpoint round trip bit-for-bit. Draw
    /// order: `w1` row-major, then `w2`, then `wc`. Biases start at zero.
    pub fn init(hidden: usize, input: usize, bias: bool, rng: &mut impl Rng) -> Result<Self> {
        if hidden == 0 || input == 0 {
            return Err(Error::InvalidArgument(
                "hidden and input dimensions must be >= 1".into(),
            ));
        }
        let draw = |rows: usize, cols: usize, rng: &mut dyn rand::RngCore| -> Mat {
            let a = (6.0 / (rows + cols) as f64).sqrt() as f32;
            let mut m = Mat::zeros(rows, cols);
            for v in m.data_mut() {
                *v = rng.gen_range(-a..a) as f64;
            }
            m
        };
        Ok(ModelParams {
            w1: draw(hidden, input, rng),
            w2: draw(hidden, hidden, rng),
            wc: draw(hidden, hidden, rng),
            bias: bias.then(|| BiasParams {
                b1: vec![0.0; hidden],
                b2: vec![0.0; hidden],
                bc: vec![0.0; hidden],
            }),
        })
    }

    pub fn zeros(hidden: usize, input: usize, bias: bool) -> Self {
        ModelParams {
            w1: Mat::zeros(hidden, input),
            w2: Mat::zeros(hidden, hidden),
            wc: Mat::zeros(hidden, hidden),
            bias: bias.then(|| BiasParams {
                b1: vec![0.0; hidden],
                b2: vec![0.0; hidden],
                bc: vec![0.0; hidden],
            }),
        }
    }

    /// Embedding dimension H.
    #[inline]
    pub fn hidden_dim(&self) -> usize {
        self.w1.rows()
    }

    /// Per-frame input dimension K.
    #[inline]
    pub fn input_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn has_bias(&self) -> bool {
        self.bias.is_some()
    }

    /// Total learnable parameter count: `H*K + H*H + H*H` (+ `3H` with biases).
    pub fn param_count(&self) -> usize {
        let h = self.hidden_dim();
        let base = h * self.input_dim() + 2 * h * h;
        base + if self.bias.is_some() { 3 * h } else { 0 }
    }

    /// Named views over every parameter tensor, in checkpoint order.
    pub fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        let mut out = vec![
            ("w1", self.w1.data()),
            ("w2", self.w2.data()),
            ("wc", self.wc.data()),
        ];
        if let Some(b) = &self.bias {
            out.push(("b1", b.b1.as_slice()));
            out.push(("b2", b.b2.as_slice()));
            out.push(("bc", b.bc.as_slice()));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let mut out = vec![
            ("w1", self.w1.data_mut()),
            ("w2", self.w2.data_mut()),
            ("wc", self.wc.data_mut()),
        ];
        if let Some(b) = self.bias.as_mut() {
            out.push(("b1", b.b1.as_mut_slice()));
            out.push(("b2", b.b2.as_mut_slice()));
            out.push(("bc", b.bc.as_mut_slice()));
        }
        out
    }
}

/// Parameter-shaped gradient accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: Mat,
    pub w2: Mat,
    pub wc: Mat,
    pub bias: Option<BiasParams>,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        let (h, k) = (params.hidden_dim(), params.input_dim());
        Gradients {
            w1: Mat::zeros(h, k),
            w2: Mat::zeros(h, h),
            wc: Mat::zeros(h, h),
            bias: params.bias.as_ref().map(|_| BiasParams {
                b1: vec![0.0; h],
                b2: vec![0.0; h],
                bc: vec![0.0; h],
            }),
        }
    }

    pub fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        let mut out = vec![
            ("w1", self.w1.data()),
            ("w2", self.w2.data()),
            ("wc", self.wc.data()),
        ];
        if let Some(b) = &self.bias {
            out.push(("b1", b.b1.as_slice()));
            out.push(("b2", b.b2.as_slice()));
            out.push(("bc", b.bc.as_slice()));
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }
}

/// An H-dimensional pooled subsequence representation, tagged with the
/// sequence and sampling it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonInstance {
    pub v: Vec<f64>,
    pub seq_index: usize,
    pub sampling_index: usize,
}

fn check_input(params: &ModelParams, s: &[f64]) -> Result<()> {
    if s.len() != params.input_dim() {
        return Err(Error::InvalidArgument(format!(
            "frame has {} values, encoder expects K={}",
            s.len(),
            params.input_dim()
        )));
    }
    Ok(())
}

/// Encodes one frame: `h = W2 * relu(W1 * s (+ b1)) (+ b2)`.
pub fn encode_frame(params: &ModelParams, s: &[f64]) -> Result<Vec<f64>> {
    check_input(params, s)?;
    let h = params.hidden_dim();
    let mut pre = vec![0.0; h];
    params.w1.matvec(s, &mut pre);
    if let Some(b) = &params.bias {
        for (p, bv) in pre.iter_mut().zip(&b.b1) {
            *p += bv;
        }
    }
    for p in pre.iter_mut() {
        if *p < 0.0 {
            *p = 0.0;
        }
    }
    let mut out = vec![0.0; h];
    params.w2.matvec(&pre, &mut out);
    if let Some(b) = &params.bias {
        for (o, bv) in out.iter_mut().zip(&b.b2) {
            *o += bv;
        }
    }
    Ok(out)
}

/// Masked mean of the surviving rows: `v = (1 / (f - x)) * sum_j m_j h_j`.
pub fn pool_instance(encoded: &[Vec<f64>], mask: &MaskVector) -> Result<Vec<f64>> {
    if encoded.len() != mask.len() {
        return Err(Error::InvalidArgument(format!(
            "mask length {} does not match {} encoded frames",
            mask.len(),
            encoded.len()
        )));
    }
    let kept = mask.kept();
    if kept == 0 {
        return Err(Error::InvalidArgument(
            "mask keeps no frames; pooled denominator would be zero".into(),
        ));
    }
    let h = encoded.first().map(|r| r.len()).unwrap_or(0);
    let mut v = vec![0.0; h];
    for j in mask.kept_indices() {
        for (acc, &x) in v.iter_mut().zip(&encoded[j]) {
            *acc += x;
        }
    }
    let denom = kept as f64;
    for acc in v.iter_mut() {
        *acc /= denom;
    }
    Ok(v)
}

/// Encodes every frame of `seq` and pools under `mask`. Evaluation callers
/// pass the all-ones mask.
pub fn encode_sequence(
    params: &ModelParams,
    seq: &SkeletonSequence,
    mask: &MaskVector,
) -> Result<Vec<f64>> {
    let mut encoded = Vec::with_capacity(seq.len());
    for t in 0..seq.len() {
        encoded.push(encode_frame(params, seq.frames().row(t))?);
    }
    pool_instance(&encoded, mask)
}

/// Projection head: `z = Wc * v (+ bc)`.
pub fn project(params: &ModelParams, v: &[f64]) -> Result<Vec<f64>> {
    if v.len() != params.hidden_dim() {
        return Err(Error::InvalidArgument(format!(
            "projection input has {} values, expected H={}",
            v.len(),
            params.hidden_dim()
        )));
    }
    let mut z = vec![0.0; params.hidden_dim()];
    params.wc.matvec(v, &mut z);
    if let Some(b) = &params.bias {
        for (o, bv) in z.iter_mut().zip(&b.bc) {
            *o += bv;
        }
    }
    Ok(z)
}

struct TapeEntry {
    /// Input frames that survived the mask (copies, in frame order).
    frames: Vec<Vec<f64>>,
    /// Post-ReLU hidden vectors, aligned with `frames`. A stored value of 0
    /// encodes a dead unit, which is exactly the ReLU subgradient rule.
    hidden: Vec<Vec<f64>>,
    inv_kept: f64,
    v: Vec<f64>,
    z: Option<Vec<f64>>,
}

/// Cached forward activations of one batch, consumed by [`Tape::backward`].
pub struct Tape {
    hidden_dim: usize,
    entries: Vec<TapeEntry>,
}

/// Runs the encoder over `(sequence, mask)` pairs, caching activations.
/// Entry order follows the input order. When `with_projection` is set the
/// projection `z = Wc v` is computed and cached as well.
pub fn forward_tape(
    params: &ModelParams,
    items: &[(&SkeletonSequence, &MaskVector)],
    with_projection: bool,
) -> Result<Tape> {
    let h = params.hidden_dim();
    let mut entries = Vec::with_capacity(items.len());
    for (seq, mask) in items {
        if mask.len() != seq.len() {
            return Err(Error::InvalidArgument(format!(
                "mask length {} does not match sequence '{}' length {}",
                mask.len(),
                seq.seq_id(),
                seq.len()
            )));
        }
        check_input(params, seq.frames().row(0))?;
        let kept = mask.kept();
        let mut frames = Vec::with_capacity(kept);
        let mut hidden = Vec::with_capacity(kept);
        let mut v = vec![0.0; h];
        for t in mask.kept_indices() {
            let s = seq.frames().row(t);
            let mut pre = vec![0.0; h];
            params.w1.matvec(s, &mut pre);
            if let Some(b) = &params.bias {
                for (p, bv) in pre.iter_mut().zip(&b.b1) {
                    *p += bv;
                }
            }
            for p in pre.iter_mut() {
                if *p < 0.0 {
                    *p = 0.0;
                }
            }
            let mut out = vec![0.0; h];
            params.w2.matvec(&pre, &mut out);
            if let Some(b) = &params.bias {
                for (o, bv) in out.iter_mut().zip(&b.b2) {
                    *o += bv;
                }
            }
            for (acc, &x) in v.iter_mut().zip(&out) {
                *acc += x;
            }
            frames.push(s.to_vec());
            hidden.push(pre);
        }
        let denom = kept as f64;
        for acc in v.iter_mut() {
            *acc /= denom;
        }
        let z = if with_projection {
            Some(project(params, &v)?)
        } else {
            None
        };
        entries.push(TapeEntry {
            frames,
            hidden,
            inv_kept: 1.0 / denom,
            v,
            z,
        });
    }
    Ok(Tape {
        hidden_dim: h,
        entries,
    })
}

impl Tape {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Pooled instance vector of entry `idx`.
    pub fn instance(&self, idx: usize) -> &[f64] {
        &self.entries[idx].v
    }

    /// Projection of entry `idx`, if the forward pass computed it.
    pub fn projection(&self, idx: usize) -> Option<&[f64]> {
        self.entries[idx].z.as_deref()
    }

    /// Reverse pass. `d_v[i]` is the upstream gradient on instance `i` and
    /// `d_z[i]` (when given) the gradient on its projection; the stop-gradient
    /// cuts of the losses are encoded by zeros in those vectors. Returns
    /// parameter gradients summed over the batch.
    pub fn backward(
        &self,
        params: &ModelParams,
        d_v: &[Vec<f64>],
        d_z: Option<&[Vec<f64>]>,
    ) -> Result<Gradients> {
        if self.entries.is_empty() {
            return Err(Error::State(
                "tape holds no forward activations; run forward_tape first".into(),
            ));
        }
        if d_v.len() != self.entries.len() {
            return Err(Error::InvalidArgument(format!(
                "got {} upstream instance gradients for {} tape entries",
                d_v.len(),
                self.entries.len()
            )));
        }
        if let Some(dz) = d_z {
            if dz.len() != self.entries.len() {
                return Err(Error::InvalidArgument(format!(
                    "got {} upstream projection gradients for {} tape entries",
                    dz.len(),
                    self.entries.len()
                )));
            }
            if self.entries.iter().any(|e| e.z.is_none()) {
                return Err(Error::State(
                    "projection gradients supplied but projections were not cached".into(),
                ));
            }
        }
        let h = self.hidden_dim;
        let mut grads = Gradients::zeros_like(params);
        let mut dv = vec![0.0; h];
        let mut dh = vec![0.0; h];
        let mut dr = vec![0.0; h];
        let mut du = vec![0.0; h];
        for (idx, entry) in self.entries.iter().enumerate() {
            dv.copy_from_slice(&d_v[idx]);
            if let Some(dz_all) = d_z {
                let dz = &dz_all[idx];
                // z = Wc v (+ bc)
                grads.wc.add_outer(dz, &entry.v);
                if let Some(b) = grads.bias.as_mut() {
                    for (acc, &g) in b.bc.iter_mut().zip(dz) {
                        *acc += g;
                    }
                }
                params.wc.matvec_t(dz, &mut dr); // reuse dr as scratch
                for (acc, &g) in dv.iter_mut().zip(&dr) {
                    *acc += g;
                }
            }
            // v = mean of kept h_t: every kept frame sees the same dh.
            for (out, &g) in dh.iter_mut().zip(&dv) {
                *out = g * entry.inv_kept;
            }
            for (s, r) in entry.frames.iter().zip(&entry.hidden) {
                // h = W2 r (+ b2)
                grads.w2.add_outer(&dh, r);
                if let Some(b) = grads.bias.as_mut() {
                    for (acc, &g) in b.b2.iter_mut().zip(&dh) {
                        *acc += g;
                    }
                }
                params.w2.matvec_t(&dh, &mut dr);
                // r = relu(u); derivative is 1 where r > 0, else 0.
                for ((out, &g), &rv) in du.iter_mut().zip(&dr).zip(r) {
                    *out = if rv > 0.0 { g } else { 0.0 };
                }
                grads.w1.add_outer(&du, s);
                if let Some(b) = grads.bias.as_mut() {
                    for (acc, &g) in b.b1.iter_mut().zip(&du) {
                        *acc += g;
                    }
                }
            }
        }
        Ok(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn seq_from(frames: &[Vec<f64>]) -> SkeletonSequence {
        SkeletonSequence::new(
            "t".into(),
            Mat::from_rows(frames),
            None,
            Split::Train,
        )
        .unwrap()
    }

    fn random_vec(rng: &mut StdRng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn identity_weights_apply_relu() {
        let mut p = ModelParams::zeros(2, 2, false);
        p.w1 = Mat::identity(2);
        p.w2 = Mat::identity(2);
        let out = encode_frame(&p, &[-1.0, 2.0]).unwrap();
        assert_eq!(out, vec![0.0, 2.0]);
    }

    #[test]
    fn zero_w1_gives_zero_output() {
        let mut rng = StdRng::seed_from_u64(3);
        let mut p = ModelParams::init(4, 3, false, &mut rng).unwrap();
        p.w1.fill(0.0);
        let out = encode_frame(&p, &[1.0, -5.0, 2.0]).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    // Independent two-loop matrix-multiply oracle.
    #[test]
    fn encode_frame_matches_naive_oracle() {
        let mut rng = StdRng::seed_from_u64(17);
        let (h, k) = (5, 7);
        let p = ModelParams::init(h, k, false, &mut rng).unwrap();
        let s = random_vec(&mut rng, k);
        let got = encode_frame(&p, &s).unwrap();
        let mut pre = vec![0.0; h];
        for r in 0..h {
            for c in 0..k {
                pre[r] += p.w1.at(r, c) * s[c];
            }
        }
        for v in pre.iter_mut() {
            *v = v.max(0.0);
        }
        let mut want = vec![0.0; h];
        for r in 0..h {
            for c in 0..h {
                want[r] += p.w2.at(r, c) * pre[c];
            }
        }
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-15);
        }
    }

    #[test]
    fn encode_frame_rejects_bad_dim() {
        let p = ModelParams::zeros(2, 3, false);
        assert!(encode_frame(&p, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn pooling_constant_rows_returns_the_row() {
        let rows = vec![vec![1.0, -2.0]; 5];
        let mask = MaskVector::new(vec![true, false, true, false, true], 0).unwrap();
        assert_eq!(pool_instance(&rows, &mask).unwrap(), vec![1.0, -2.0]);
    }

    #[test]
    fn pooling_two_kept_basis_rows() {
        let e = |i: usize| -> Vec<f64> {
            let mut v = vec![0.0; 4];
            v[i] = 1.0;
            v
        };
        let rows = vec![e(0), e(1), e(2), e(3)];
        let mask = MaskVector::new(vec![true, true, false, false], 0).unwrap();
        assert_eq!(
            pool_instance(&rows, &mask).unwrap(),
            vec![0.5, 0.5, 0.0, 0.0]
        );
    }

    #[test]
    fn pooling_unmasked_is_plain_mean() {
        let rows = vec![vec![1.0], vec![2.0], vec![6.0]];
        let mask = MaskVector::all_ones(3, 0);
        assert_eq!(pool_instance(&rows, &mask).unwrap(), vec![3.0]);
    }

    // Pool output stays inside the coordinate-wise hull of the kept rows.
    #[test]
    fn pooling_stays_in_convex_hull() {
        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..50 {
            let f = rng.gen_range(2..8);
            let h = rng.gen_range(1..5);
            let rows: Vec<Vec<f64>> = (0..f).map(|_| random_vec(&mut rng, h)).collect();
            let mut bits = vec![false; f];
            let keep = rng.gen_range(1..=f);
            for b in bits.iter_mut().take(keep) {
                *b = true;
            }
            let mask = MaskVector::new(bits, 0).unwrap();
            let v = pool_instance(&rows, &mask).unwrap();
            for d in 0..h {
                let kept: Vec<f64> = mask.kept_indices().map(|j| rows[j][d]).collect();
                let lo = kept.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = kept.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                assert!(v[d] >= lo - 1e-12 && v[d] <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn encode_sequence_equals_composition_exactly() {
        let mut rng = StdRng::seed_from_u64(23);
        let (h, k, f) = (6, 4, 5);
        let p = ModelParams::init(h, k, false, &mut rng).unwrap();
        let frames: Vec<Vec<f64>> = (0..f).map(|_| random_vec(&mut rng, k)).collect();
        let seq = seq_from(&frames);
        let mask = MaskVector::new(vec![true, false, true, true, false], 0).unwrap();
        let direct = encode_sequence(&p, &seq, &mask).unwrap();
        let encoded: Vec<Vec<f64>> = frames
            .iter()
            .map(|s| encode_frame(&p, s).unwrap())
            .collect();
        let composed = pool_instance(&encoded, &mask).unwrap();
        assert_eq!(direct, composed);
    }

    #[test]
    fn projection_identity_zero_and_oracle() {
        let mut rng = StdRng::seed_from_u64(31);
        let mut p = ModelParams::init(3, 2, false, &mut rng).unwrap();
        let v = vec![0.4, -0.2, 1.5];
        p.wc = Mat::identity(3);
        assert_eq!(project(&p, &v).unwrap(), v);
        p.wc.fill(0.0);
        assert_eq!(project(&p, &v).unwrap(), vec![0.0; 3]);
        let q = ModelParams::init(3, 2, false, &mut rng).unwrap();
        let got = project(&q, &v).unwrap();
        for r in 0..3 {
            let want: f64 = (0..3).map(|c| q.wc.at(r, c) * v[c]).sum();
            assert!((got[r] - want).abs() < 1e-15);
        }
    }

    // encode(a*s) = a*encode(s) for a > 0 when the sign pattern is fixed.
    #[test]
    fn positive_homogeneity_without_bias() {
        let mut rng = StdRng::seed_from_u64(37);
        let p = ModelParams::init(4, 3, false, &mut rng).unwrap();
        let s = random_vec(&mut rng, 3);
        let base = encode_frame(&p, &s).unwrap();
        let scaled_in: Vec<f64> = s.iter().map(|v| v * 2.0).collect();
        let scaled = encode_frame(&p, &scaled_in).unwrap();
        for (b, sc) in base.iter().zip(&scaled) {
            assert!((sc - 2.0 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn param_count_matches_published_size() {
        let p = ModelParams::zeros(256, 75, false);
        assert_eq!(p.param_count(), 150_272);
    }

    #[test]
    fn backward_zero_upstream_gives_zero_grads() {
        let mut rng = StdRng::seed_from_u64(41);
        let p = ModelParams::init(3, 2, false, &mut rng).unwrap();
        let seq = seq_from(&[vec![0.3, -0.4], vec![1.0, 0.2]]);
        let mask = MaskVector::all_ones(2, 0);
        let tape = forward_tape(&p, &[(&seq, &mask)], false).unwrap();
        let grads = tape.backward(&p, &[vec![0.0; 3]], None).unwrap();
        assert!(grads.w1.data().iter().all(|&v| v == 0.0));
        assert!(grads.w2.data().iter().all(|&v| v == 0.0));
        assert!(grads.wc.data().iter().all(|&v| v == 0.0));
    }

    // All pre-activations negative: nothing flows through the ReLU, so both
    // w1 and w2 gradients vanish.
    #[test]
    fn dead_relu_blocks_gradient() {
        let mut p = ModelParams::zeros(2, 2, false);
        p.w1 = Mat::from_rows(&[vec![-1.0, 0.0], vec![0.0, -1.0]]);
        p.w2 = Mat::identity(2);
        let seq = seq_from(&[vec![1.0, 2.0]]);
        let mask = MaskVector::all_ones(1, 0);
        let tape = forward_tape(&p, &[(&seq, &mask)], false).unwrap();
        assert!(tape.instance(0).iter().all(|&v| v == 0.0));
        let grads = tape.backward(&p, &[vec![1.0, 1.0]], None).unwrap();
        assert!(grads.w1.data().iter().all(|&v| v == 0.0));
        assert!(grads.w2.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_on_empty_tape_is_state_error() {
        let p = ModelParams::zeros(2, 2, false);
        let tape = Tape {
            hidden_dim: 2,
            entries: vec![],
        };
        match tape.backward(&p, &[], None) {
            Err(Error::State(_)) => {}
            other => panic!("expected state error, got {other:?}"),
        }
    }

    // Central finite differences over a scalar functional of the pooled
    // instance (and projection), elementwise relative error < 1e-4.
    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = StdRng::seed_from_u64(4242);
        let (h, k, f) = (5, 6, 4);
        for bias in [false, true] {
            let mut params = ModelParams::init(h, k, bias, &mut rng).unwrap();
            let frames: Vec<Vec<f64>> = (0..f).map(|_| random_vec(&mut rng, k)).collect();
            let seq = seq_from(&frames);
            let mask = MaskVector::new(vec![true, true, false, true], 0).unwrap();
            // Fixed linear functional: L = a . v + b . z
            let a = random_vec(&mut rng, h);
            let b = random_vec(&mut rng, h);

            let tape = forward_tape(&params, &[(&seq, &mask)], true).unwrap();
            let analytic = tape
                .backward(&params, &[a.clone()], Some(&[b.clone()]))
                .unwrap();

            let loss = |p: &ModelParams| -> f64 {
                let v = encode_sequence(p, &seq, &mask).unwrap();
                let z = project(p, &v).unwrap();
                a.iter().zip(&v).map(|(x, y)| x * y).sum::<f64>()
                    + b.iter().zip(&z).map(|(x, y)| x * y).sum::<f64>()
            };
            let step = 1e-5;
            let names: Vec<&str> = analytic.tensors().iter().map(|(n, _)| *n).collect();
            for name in names {
                let len = analytic
                    .tensors()
                    .iter()
                    .find(|(n, _)| *n == name)
                    .unwrap()
                    .1
                    .len();
                for i in 0..len {
                    let orig = params
                        .tensors()
                        .iter()
                        .find(|(n, _)| *n == name)
                        .unwrap()
                        .1[i];
                    set(&mut params, name, i, orig + step);
                    let plus = loss(&params);
                    set(&mut params, name, i, orig - step);
                    let minus = loss(&params);
                    set(&mut params, name, i, orig);
                    let numeric = (plus - minus) / (2.0 * step);
                    let got = analytic
                        .tensors()
                        .iter()
                        .find(|(n, _)| *n == name)
                        .unwrap()
                        .1[i];
                    let rel = (got - numeric).abs() / (numeric.abs() + 1e-8);
                    assert!(
                        rel < 1e-4,
                        "{name}[{i}]: analytic {got} vs numeric {numeric} (bias={bias})"
                    );
                }
            }
        }
    }

    fn set(params: &mut ModelParams, name: &str, idx: usize, value: f64) {
        for (n, t) in params.tensors_mut() {
            if n == name {
                t[idx] = value;
                return;
            }
        }
        panic!("unknown tensor {name}");
    }
}
