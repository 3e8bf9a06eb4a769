//! Exact statevector simulation of the parametrized circuits.
//!
//! The circuit family is a stack of RY rotation layers interleaved with a
//! controlled-Z ring, closed by one final RY layer, so a circuit on `n`
//! qubits with `L` layers carries `n * (L + 1)` trainable angles. Three
//! encodings feed classical features into the state (angle, amplitude, and
//! the tensor-squared parallel variant) and two readouts extract them
//! (per-qubit Z expectations and computational-basis probabilities,
//! optionally marginalized over a qubit subset).
//!
//! Gradients come from two independent routes: an adjoint-style exact
//! reverse pass through the complex amplitudes ([`pqc_grad_exact`]), and the
//! two-point parameter-shift rule ([`pqc_grad_parameter_shift`]) which
//! serves as an oracle for the former.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hard qubit ceiling; 2^12 amplitudes is the largest state this artifact
/// simulates (the parallel-encoded circuit).
pub const MAX_QUBITS: usize = 12;

/// Norm drift allowed after any gate application.
pub const NORM_TOL: f64 = 1e-12;

/// L2 norm below which an amplitude-encoding input is treated as degenerate.
pub const DEGENERACY_EPS: f64 = 1e-12;

/// Full complex statevector of an `n`-qubit register.
///
/// Qubit 0 maps to the most significant bit of the basis index, so the
/// tensor product `|a> ⊗ |b>` on (n_a + n_b) qubits has amplitude
/// `a_i * b_j` at index `i * 2^n_b + j`.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    n_qubits: usize,
    amps: Vec<Complex64>,
}

impl StateVector {
    /// |0...0> on `n_qubits` qubits.
    pub fn zero_state(n_qubits: usize) -> Result<Self> {
        if n_qubits == 0 || n_qubits > MAX_QUBITS {
            return Err(Error::Shape(format!(
                "qubit count {n_qubits} outside [1, {MAX_QUBITS}]"
            )));
        }
        let mut amps = vec![Complex64::new(0.0, 0.0); 1 << n_qubits];
        amps[0] = Complex64::new(1.0, 0.0);
        Ok(StateVector { n_qubits, amps })
    }

    pub fn from_amplitudes(amps: Vec<Complex64>) -> Result<Self> {
        let len = amps.len();
        if !len.is_power_of_two() || len < 2 {
            return Err(Error::Shape(format!(
                "amplitude count {len} is not a power of two >= 2"
            )));
        }
        let n_qubits = len.trailing_zeros() as usize;
        if n_qubits > MAX_QUBITS {
            return Err(Error::Shape(format!(
                "qubit count {n_qubits} exceeds {MAX_QUBITS}"
            )));
        }
        Ok(StateVector { n_qubits, amps })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    fn mask(&self, qubit: usize) -> usize {
        debug_assert!(qubit < self.n_qubits);
        1 << (self.n_qubits - 1 - qubit)
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    /// RY(theta) = [[cos(t/2), -sin(t/2)], [sin(t/2), cos(t/2)]] on `qubit`.
    pub fn apply_ry(&mut self, qubit: usize, theta: f64) {
        let m = self.mask(qubit);
        let c = (theta / 2.0).cos();
        let s = (theta / 2.0).sin();
        for i in 0..self.amps.len() {
            if i & m == 0 {
                let j = i | m;
                let a0 = self.amps[i];
                let a1 = self.amps[j];
                self.amps[i] = c * a0 - s * a1;
                self.amps[j] = s * a0 + c * a1;
            }
        }
    }

    /// Controlled-Z between `a` and `b` (symmetric).
    pub fn apply_cz(&mut self, a: usize, b: usize) {
        assert_ne!(a, b, "CZ requires distinct qubits");
        let ma = self.mask(a);
        let mb = self.mask(b);
        for (i, amp) in self.amps.iter_mut().enumerate() {
            if i & ma != 0 && i & mb != 0 {
                *amp = -*amp;
            }
        }
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amps.iter().map(|a| a.norm_sqr()).collect()
    }
}

/// How classical features enter the circuit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EncodingKind {
    /// n features -> n qubits, one RY(x_i) per qubit.
    Angle,
    /// 2^n features -> n qubits as L2-normalized real amplitudes.
    Amplitude,
    /// 2^n features -> 2n qubits as |psi> ⊗ |psi|.
    Parallel,
}

impl EncodingKind {
    /// Feature arity required for a circuit of `n_qubits`.
    pub fn n_features(&self, n_qubits: usize) -> usize {
        match self {
            EncodingKind::Angle => n_qubits,
            EncodingKind::Amplitude => 1 << n_qubits,
            EncodingKind::Parallel => {
                assert!(n_qubits % 2 == 0, "parallel encoding needs even qubit count");
                1 << (n_qubits / 2)
            }
        }
    }
}

/// Encoded state plus the degeneracy flag raised by near-zero amplitude inputs.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub state: StateVector,
    pub degenerate: bool,
}

fn check_finite(features: &[f64]) -> Result<()> {
    if let Some(x) = features.iter().find(|x| !x.is_finite()) {
        return Err(Error::Numerical(format!("non-finite encoding feature {x}")));
    }
    Ok(())
}

/// State = ⊗_i RY(x_i)|0>.
pub fn angle_encode(features: &[f64]) -> Result<StateVector> {
    check_finite(features)?;
    let mut state = StateVector::zero_state(features.len())?;
    for (q, &x) in features.iter().enumerate() {
        state.apply_ry(q, x);
    }
    Ok(state)
}

fn normalized(features: &[f64]) -> Result<(Vec<f64>, bool)> {
    check_finite(features)?;
    if !features.len().is_power_of_two() || features.len() < 2 {
        return Err(Error::Shape(format!(
            "amplitude encoding needs a power-of-two feature count, got {}",
            features.len()
        )));
    }
    let norm = features.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm <= DEGENERACY_EPS {
        let mut v = vec![0.0; features.len()];
        v[0] = 1.0;
        return Ok((v, true));
    }
    Ok((features.iter().map(|x| x / norm).collect(), false))
}

/// Amplitudes = features / ||features||; a near-zero input falls back to
/// |0...0> with `degenerate` set.
pub fn amplitude_encode(features: &[f64]) -> Result<Encoded> {
    let (v, degenerate) = normalized(features)?;
    let amps = v.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    Ok(Encoded {
        state: StateVector::from_amplitudes(amps)?,
        degenerate,
    })
}

/// Tensor square |psi> ⊗ |psi> of the amplitude-encoded state, doubling the
/// qubit count.
pub fn parallel_encode(features: &[f64]) -> Result<Encoded> {
    let (v, degenerate) = normalized(features)?;
    let n = v.len();
    let mut amps = Vec::with_capacity(n * n);
    for &a in &v {
        for &b in &v {
            amps.push(Complex64::new(a * b, 0.0));
        }
    }
    Ok(Encoded {
        state: StateVector::from_amplitudes(amps)?,
        degenerate,
    })
}

/// Two-qubit entangler choice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Entangler {
    /// CZ between neighbors on a ring (a single CZ for two qubits).
    #[default]
    CzRing,
    /// No entangling gates; the circuit factorizes per qubit.
    None,
}

/// Trainable ansatz layout: `n_layers` repetitions of (RY layer, entangler)
/// closed by a final RY layer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CircuitSpec {
    pub n_qubits: usize,
    pub n_layers: usize,
    pub entangler: Entangler,
}

impl CircuitSpec {
    pub fn new(n_qubits: usize, n_layers: usize) -> Self {
        CircuitSpec {
            n_qubits,
            n_layers,
            entangler: Entangler::CzRing,
        }
    }

    /// Angle count under the default layout: n_qubits * (n_layers + 1).
    pub fn theta_count(&self) -> usize {
        self.n_qubits * (self.n_layers + 1)
    }

    fn ring_pairs(&self) -> Vec<(usize, usize)> {
        match self.entangler {
            Entangler::None => Vec::new(),
            Entangler::CzRing => match self.n_qubits {
                0 | 1 => Vec::new(),
                2 => vec![(0, 1)],
                n => (0..n).map(|q| (q, (q + 1) % n)).collect(),
            },
        }
    }
}

/// Where a rotation angle comes from, for gradient routing.
#[derive(Clone, Copy, Debug)]
enum AngleSource {
    Theta(usize),
    Feature(usize),
}

#[derive(Clone, Debug)]
enum GateOp {
    Ry {
        qubit: usize,
        angle: f64,
        source: Option<AngleSource>,
    },
    Cz(usize, usize),
}

fn circuit_gates(spec: &CircuitSpec, thetas: &[f64]) -> Result<Vec<GateOp>> {
    if thetas.len() != spec.theta_count() {
        return Err(Error::Shape(format!(
            "expected {} circuit angles, got {}",
            spec.theta_count(),
            thetas.len()
        )));
    }
    if let Some(t) = thetas.iter().find(|t| !t.is_finite()) {
        return Err(Error::Numerical(format!("non-finite circuit angle {t}")));
    }
    let n = spec.n_qubits;
    let mut gates = Vec::new();
    for layer in 0..=spec.n_layers {
        for q in 0..n {
            let k = layer * n + q;
            gates.push(GateOp::Ry {
                qubit: q,
                angle: thetas[k],
                source: Some(AngleSource::Theta(k)),
            });
        }
        if layer < spec.n_layers {
            for (a, b) in spec.ring_pairs() {
                gates.push(GateOp::Cz(a, b));
            }
        }
    }
    Ok(gates)
}

/// Apply the parametrized circuit to `state` in place.
pub fn run_pqc(state: &mut StateVector, spec: &CircuitSpec, thetas: &[f64]) -> Result<()> {
    if state.n_qubits() != spec.n_qubits {
        return Err(Error::Shape(format!(
            "state has {} qubits, circuit expects {}",
            state.n_qubits(),
            spec.n_qubits
        )));
    }
    for gate in circuit_gates(spec, thetas)? {
        match gate {
            GateOp::Ry { qubit, angle, .. } => state.apply_ry(qubit, angle),
            GateOp::Cz(a, b) => state.apply_cz(a, b),
        }
    }
    Ok(())
}

/// Exact <Z_i> for every qubit, in [-1, 1].
pub fn readout_z(state: &StateVector) -> Vec<f64> {
    let n = state.n_qubits();
    let mut out = vec![0.0; n];
    for (i, amp) in state.amplitudes().iter().enumerate() {
        let p = amp.norm_sqr();
        for (q, val) in out.iter_mut().enumerate() {
            let m = 1 << (n - 1 - q);
            *val += if i & m == 0 { p } else { -p };
        }
    }
    out
}

/// Marginal probabilities over `measured` qubits (sum over the rest), in the
/// bit order given by the slice.
pub fn readout_probs(state: &StateVector, measured: &[usize]) -> Result<Vec<f64>> {
    if measured.is_empty() {
        return Err(Error::Shape("empty measurement set".into()));
    }
    let n = state.n_qubits();
    for &q in measured {
        if q >= n {
            return Err(Error::Shape(format!("measured qubit {q} out of range")));
        }
    }
    let m = measured.len();
    let mut out = vec![0.0; 1 << m];
    for (i, amp) in state.amplitudes().iter().enumerate() {
        let mut idx = 0usize;
        for (pos, &q) in measured.iter().enumerate() {
            let bit = (i >> (n - 1 - q)) & 1;
            idx |= bit << (m - 1 - pos);
        }
        out[idx] += amp.norm_sqr();
    }
    Ok(out)
}

/// Classical values extracted after the circuit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReadoutKind {
    /// One <Z_i> per qubit.
    ZExpectations,
    /// Basis probabilities marginalized to the first `measured` qubits.
    Probabilities { measured: usize },
    /// Real parts of all amplitudes. Experimental alternative reading of the
    /// circuit output; not an observable, so parameter shift does not apply.
    RealAmplitudes,
}

impl ReadoutKind {
    pub fn dim(&self, n_qubits: usize) -> usize {
        match self {
            ReadoutKind::ZExpectations => n_qubits,
            ReadoutKind::Probabilities { measured } => 1 << measured,
            ReadoutKind::RealAmplitudes => 1 << n_qubits,
        }
    }

    pub fn values(&self, state: &StateVector) -> Result<Vec<f64>> {
        match self {
            ReadoutKind::ZExpectations => Ok(readout_z(state)),
            ReadoutKind::Probabilities { measured } => {
                let qs: Vec<usize> = (0..*measured).collect();
                readout_probs(state, &qs)
            }
            ReadoutKind::RealAmplitudes => {
                Ok(state.amplitudes().iter().map(|a| a.re).collect())
            }
        }
    }
}

fn encode_with_gates(
    encoding: EncodingKind,
    features: &[f64],
    spec: &CircuitSpec,
) -> Result<(StateVector, Vec<GateOp>, bool)> {
    let expected = encoding.n_features(spec.n_qubits);
    if features.len() != expected {
        return Err(Error::Shape(format!(
            "{encoding:?} encoding on {} qubits needs {expected} features, got {}",
            spec.n_qubits,
            features.len()
        )));
    }
    match encoding {
        EncodingKind::Angle => {
            check_finite(features)?;
            let state = StateVector::zero_state(spec.n_qubits)?;
            let gates = features
                .iter()
                .enumerate()
                .map(|(q, &x)| GateOp::Ry {
                    qubit: q,
                    angle: x,
                    source: Some(AngleSource::Feature(q)),
                })
                .collect();
            Ok((state, gates, false))
        }
        EncodingKind::Amplitude => {
            let enc = amplitude_encode(features)?;
            Ok((enc.state, Vec::new(), enc.degenerate))
        }
        EncodingKind::Parallel => {
            let enc = parallel_encode(features)?;
            Ok((enc.state, Vec::new(), enc.degenerate))
        }
    }
}

/// Full hybrid-block forward pass: encode, run the circuit, read out.
/// Returns the readout values and the degeneracy flag.
pub fn pqc_forward(
    encoding: EncodingKind,
    features: &[f64],
    spec: &CircuitSpec,
    thetas: &[f64],
    readout: &ReadoutKind,
) -> Result<(Vec<f64>, bool)> {
    let (mut state, enc_gates, degenerate) = encode_with_gates(encoding, features, spec)?;
    for gate in &enc_gates {
        if let GateOp::Ry { qubit, angle, .. } = gate {
            state.apply_ry(*qubit, *angle);
        }
    }
    run_pqc(&mut state, spec, thetas)?;
    Ok((readout.values(&state)?, degenerate))
}

/// Gradients of a scalar `sum_i upstream_i * readout_i` with respect to the
/// circuit angles and the encoding input features.
#[derive(Clone, Debug)]
pub struct PqcGradients {
    pub thetas: Vec<f64>,
    pub features: Vec<f64>,
    pub degenerate: bool,
}

/// Diagonal weights w such that the scalar loss is sum_j w_j |psi_j|^2, for
/// the quadratic readouts; `None` for the amplitude readout.
fn diagonal_weights(readout: &ReadoutKind, n_qubits: usize, upstream: &[f64]) -> Option<Vec<f64>> {
    let dim = 1 << n_qubits;
    match readout {
        ReadoutKind::ZExpectations => {
            let mut w = vec![0.0; dim];
            for (j, wj) in w.iter_mut().enumerate() {
                for (q, &u) in upstream.iter().enumerate() {
                    let m = 1 << (n_qubits - 1 - q);
                    *wj += if j & m == 0 { u } else { -u };
                }
            }
            Some(w)
        }
        ReadoutKind::Probabilities { measured } => {
            let shift = n_qubits - measured;
            Some((0..dim).map(|j| upstream[j >> shift]).collect())
        }
        ReadoutKind::RealAmplitudes => None,
    }
}

/// Exact reverse-mode gradients through the complex statevector.
///
/// The adjoint pass keeps two vectors: the forward state, rolled back gate by
/// gate, and the cotangent lambda = dL/dpsi* propagated with the daggered
/// gates; each RY contributes 2 Re(lambda^H (-i/2) Y psi).
pub fn pqc_grad_exact(
    encoding: EncodingKind,
    features: &[f64],
    spec: &CircuitSpec,
    thetas: &[f64],
    readout: &ReadoutKind,
    upstream: &[f64],
) -> Result<PqcGradients> {
    let out_dim = readout.dim(spec.n_qubits);
    if upstream.len() != out_dim {
        return Err(Error::Shape(format!(
            "upstream gradient has length {}, readout dimension is {out_dim}",
            upstream.len()
        )));
    }
    let (psi0, enc_gates, degenerate) = encode_with_gates(encoding, features, spec)?;
    if degenerate {
        // The encoded state is the |0...0> fallback, independent of the
        // input, so the sample contributes no gradient.
        return Ok(PqcGradients {
            thetas: vec![0.0; thetas.len()],
            features: vec![0.0; features.len()],
            degenerate: true,
        });
    }

    let mut gates = enc_gates;
    gates.extend(circuit_gates(spec, thetas)?);

    let mut psi = psi0.clone();
    for gate in &gates {
        match gate {
            GateOp::Ry { qubit, angle, .. } => psi.apply_ry(*qubit, *angle),
            GateOp::Cz(a, b) => psi.apply_cz(*a, *b),
        }
    }

    // Cotangent lambda = dL/dpsi* at the final state.
    let mut lambda = match diagonal_weights(readout, spec.n_qubits, upstream) {
        Some(w) => {
            let amps = psi
                .amplitudes()
                .iter()
                .zip(&w)
                .map(|(a, &wj)| wj * a)
                .collect();
            StateVector::from_amplitudes(amps)?
        }
        None => {
            // L = sum u_j Re(psi_j) => dL/dpsi_j* = u_j / 2.
            let amps = upstream
                .iter()
                .map(|&u| Complex64::new(u / 2.0, 0.0))
                .collect();
            StateVector::from_amplitudes(amps)?
        }
    };

    let mut theta_grads = vec![0.0; thetas.len()];
    let mut feature_grads = vec![0.0; features.len()];

    let n = spec.n_qubits;
    for gate in gates.iter().rev() {
        match gate {
            GateOp::Ry {
                qubit,
                angle,
                source,
            } => {
                if let Some(src) = source {
                    // 2 Re(lambda^H (-i/2) Y psi): with Y psi at the (i0, i1)
                    // pair being (-i psi1, i psi0), the product reduces to
                    // Re(conj(l0) * (-psi1) + conj(l1) * psi0).
                    let m = 1 << (n - 1 - qubit);
                    let la = lambda.amplitudes();
                    let pa = psi.amplitudes();
                    let mut g = 0.0;
                    for i in 0..pa.len() {
                        if i & m == 0 {
                            let j = i | m;
                            g += (la[i].conj() * (-pa[j]) + la[j].conj() * pa[i]).re;
                        }
                    }
                    match src {
                        AngleSource::Theta(k) => theta_grads[*k] += g,
                        AngleSource::Feature(k) => feature_grads[*k] += g,
                    }
                }
                psi.apply_ry(*qubit, -angle);
                lambda.apply_ry(*qubit, -angle);
            }
            GateOp::Cz(a, b) => {
                psi.apply_cz(*a, *b);
                lambda.apply_cz(*a, *b);
            }
        }
    }

    // lambda now holds U^H W U psi0; push it through the encoding Jacobian.
    match encoding {
        EncodingKind::Angle => {}
        EncodingKind::Amplitude => {
            let norm = features.iter().map(|x| x * x).sum::<f64>().sqrt();
            let vhat: Vec<f64> = features.iter().map(|x| x / norm).collect();
            let g: Vec<f64> = lambda.amplitudes().iter().map(|l| 2.0 * l.re).collect();
            let dot: f64 = g.iter().zip(&vhat).map(|(a, b)| a * b).sum();
            for i in 0..features.len() {
                feature_grads[i] = (g[i] - dot * vhat[i]) / norm;
            }
        }
        EncodingKind::Parallel => {
            let norm = features.iter().map(|x| x * x).sum::<f64>().sqrt();
            let vhat: Vec<f64> = features.iter().map(|x| x / norm).collect();
            let half = vhat.len();
            let la = lambda.amplitudes();
            // d(psi0)_{ij} = dvhat_i vhat_j + vhat_i dvhat_j.
            let mut ghat = vec![0.0; half];
            for i in 0..half {
                let mut acc = 0.0;
                for j in 0..half {
                    acc += 2.0 * la[i * half + j].re * vhat[j];
                    acc += 2.0 * la[j * half + i].re * vhat[j];
                }
                ghat[i] = acc;
            }
            let dot: f64 = ghat.iter().zip(&vhat).map(|(a, b)| a * b).sum();
            for i in 0..half {
                feature_grads[i] = (ghat[i] - dot * vhat[i]) / norm;
            }
        }
    }

    Ok(PqcGradients {
        thetas: theta_grads,
        features: feature_grads,
        degenerate: false,
    })
}

/// Two-point parameter-shift gradients with respect to the circuit angles:
/// dL/dtheta = [L(theta + pi/2) - L(theta - pi/2)] / 2.
///
/// Valid for any readout expressible as an expectation value, which covers
/// Z readout and basis-projector probabilities.
pub fn pqc_grad_parameter_shift(
    encoding: EncodingKind,
    features: &[f64],
    spec: &CircuitSpec,
    thetas: &[f64],
    readout: &ReadoutKind,
    upstream: &[f64],
) -> Result<Vec<f64>> {
    if matches!(readout, ReadoutKind::RealAmplitudes) {
        return Err(Error::Config(
            "parameter shift requires an expectation-value readout".into(),
        ));
    }
    let scalar = |angles: &[f64]| -> Result<f64> {
        let (vals, _) = pqc_forward(encoding, features, spec, angles, readout)?;
        Ok(vals.iter().zip(upstream).map(|(v, u)| v * u).sum())
    };
    let mut grads = vec![0.0; thetas.len()];
    let mut shifted = thetas.to_vec();
    for k in 0..thetas.len() {
        let orig = shifted[k];
        shifted[k] = orig + std::f64::consts::FRAC_PI_2;
        let plus = scalar(&shifted)?;
        shifted[k] = orig - std::f64::consts::FRAC_PI_2;
        let minus = scalar(&shifted)?;
        shifted[k] = orig;
        grads[k] = (plus - minus) / 2.0;
    }
    Ok(grads)
}
