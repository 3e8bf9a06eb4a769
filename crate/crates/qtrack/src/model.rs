//! The five GNN architecture variants and their forward pass.
//!
//! Every variant runs InputNet -> EN -> (NN -> EN) x n_iter, 7 block
//! applications at the default n_iter = 3. The Edge Network scores each
//! edge from the concatenated endpoint features; the Node Network
//! aggregates score-weighted neighbor features through the incidence
//! matrices. One shared parameter set serves all EN applications and one
//! all NN applications. Quantum variants replace the middle of each block
//! with encoder MLP -> parametrized circuit -> readout MLP; upgraded
//! variants add the residual update h' = h + block(...) and concatenate the
//! InputNet output into every Node Network input.

use std::collections::BTreeMap;
use std::path::Path;
use std::rc::Rc;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, MlpSpec, PqcSpec, Tape, Var};
use crate::error::{Error, Result};
use crate::graphs::EventGraph;
use crate::quantum::{CircuitSpec, EncodingKind, ReadoutKind};

/// Architecture selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelVariant {
    OriginalCgnn,
    OriginalQgnn,
    UpgradedCgnn,
    UpgradedQgnn,
    ParallelQgnn,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 5] = [
        ModelVariant::OriginalCgnn,
        ModelVariant::OriginalQgnn,
        ModelVariant::UpgradedCgnn,
        ModelVariant::UpgradedQgnn,
        ModelVariant::ParallelQgnn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelVariant::OriginalCgnn => "original_cgnn",
            ModelVariant::OriginalQgnn => "original_qgnn",
            ModelVariant::UpgradedCgnn => "upgraded_cgnn",
            ModelVariant::UpgradedQgnn => "upgraded_qgnn",
            ModelVariant::ParallelQgnn => "parallel_qgnn",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model variant '{s}'")))
    }

    /// Hidden width d: 4 for the original architectures, 64 upgraded.
    pub fn hidden_dim(self) -> usize {
        match self {
            ModelVariant::OriginalCgnn | ModelVariant::OriginalQgnn => 4,
            _ => 64,
        }
    }

    pub fn is_quantum(self) -> bool {
        !matches!(self, ModelVariant::OriginalCgnn | ModelVariant::UpgradedCgnn)
    }

    pub fn architecture(self) -> Architecture {
        Architecture::of(self)
    }
}

/// Block internals: a plain MLP, or encoder MLP -> circuit -> readout MLP.
#[derive(Clone, Debug, PartialEq)]
pub enum BlockKind {
    Classical(MlpSpec),
    Quantum {
        encoder: MlpSpec,
        pqc: PqcSpec,
        /// Rescales circuit outputs before the readout MLP; probabilities
        /// are lifted to O(1) inputs by the readout dimension.
        readout_scale: f64,
        readout: MlpSpec,
    },
}

impl BlockKind {
    pub fn n_classical_params(&self) -> usize {
        match self {
            BlockKind::Classical(mlp) => mlp.n_params(),
            BlockKind::Quantum {
                encoder, readout, ..
            } => encoder.n_params() + readout.n_params(),
        }
    }

    pub fn n_quantum_params(&self) -> usize {
        match self {
            BlockKind::Classical(_) => 0,
            BlockKind::Quantum { pqc, .. } => pqc.circuit.theta_count(),
        }
    }
}

/// Full architecture description for one variant.
#[derive(Clone, Debug, PartialEq)]
pub struct Architecture {
    pub variant: ModelVariant,
    pub hidden_dim: usize,
    pub n_iter: usize,
    pub input_net: MlpSpec,
    pub edge_block: BlockKind,
    pub node_block: BlockKind,
    /// Eq.-(3) residual update in the Node Network.
    pub residual: bool,
    /// Concatenate H(0) into every Node Network input.
    pub initial_residual: bool,
}

fn mlp(widths: &[usize], output: Activation) -> MlpSpec {
    MlpSpec::new(widths.to_vec(), Activation::Tanh, output).expect("static MLP spec")
}

fn quantum_block(
    encoder_widths: &[usize],
    encoding: EncodingKind,
    circuit: CircuitSpec,
    readout_kind: ReadoutKind,
    out_dim: usize,
    out_act: Activation,
) -> BlockKind {
    let encoder_out = match encoding {
        EncodingKind::Angle => Activation::TanhPi,
        _ => Activation::Tanh,
    };
    let readout_dim = readout_kind.dim(circuit.n_qubits);
    let readout_scale = match readout_kind {
        ReadoutKind::Probabilities { .. } => readout_dim as f64,
        _ => 1.0,
    };
    BlockKind::Quantum {
        encoder: mlp(encoder_widths, encoder_out),
        pqc: PqcSpec {
            encoding,
            circuit,
            readout: readout_kind,
        },
        readout_scale,
        readout: mlp(&[readout_dim, out_dim], out_act),
    }
}

impl Architecture {
    pub fn of(variant: ModelVariant) -> Self {
        let d = variant.hidden_dim();
        use Activation::{Sigmoid, Tanh};
        let (input_net, edge_block, node_block) = match variant {
            ModelVariant::OriginalCgnn => (
                mlp(&[3, d], Tanh),
                BlockKind::Classical(mlp(&[2 * d, d, 1], Sigmoid)),
                BlockKind::Classical(mlp(&[3 * d, d, d], Tanh)),
            ),
            ModelVariant::OriginalQgnn => (
                mlp(&[3, d], Tanh),
                quantum_block(
                    &[2 * d, 4],
                    EncodingKind::Angle,
                    CircuitSpec::new(4, 3),
                    ReadoutKind::ZExpectations,
                    1,
                    Sigmoid,
                ),
                quantum_block(
                    &[3 * d, 4],
                    EncodingKind::Angle,
                    CircuitSpec::new(4, 3),
                    ReadoutKind::ZExpectations,
                    d,
                    Tanh,
                ),
            ),
            ModelVariant::UpgradedCgnn => (
                mlp(&[3, d, d], Tanh),
                BlockKind::Classical(mlp(&[2 * d, 64, 64, 1], Sigmoid)),
                BlockKind::Classical(mlp(&[4 * d, 64, 64, d], Tanh)),
            ),
            ModelVariant::UpgradedQgnn => (
                mlp(&[3, d, d], Tanh),
                quantum_block(
                    &[2 * d, 64, 64],
                    EncodingKind::Amplitude,
                    CircuitSpec::new(6, 3),
                    ReadoutKind::Probabilities { measured: 6 },
                    1,
                    Sigmoid,
                ),
                quantum_block(
                    &[4 * d, 64, 64],
                    EncodingKind::Amplitude,
                    CircuitSpec::new(6, 3),
                    ReadoutKind::Probabilities { measured: 6 },
                    d,
                    Tanh,
                ),
            ),
            ModelVariant::ParallelQgnn => (
                mlp(&[3, d, d], Tanh),
                quantum_block(
                    &[2 * d, 64, 64],
                    EncodingKind::Parallel,
                    CircuitSpec::new(12, 3),
                    ReadoutKind::Probabilities { measured: 6 },
                    1,
                    Sigmoid,
                ),
                quantum_block(
                    &[4 * d, 64, 64],
                    EncodingKind::Parallel,
                    CircuitSpec::new(12, 3),
                    ReadoutKind::Probabilities { measured: 6 },
                    d,
                    Tanh,
                ),
            ),
        };
        let upgraded = !matches!(
            variant,
            ModelVariant::OriginalCgnn | ModelVariant::OriginalQgnn
        );
        Architecture {
            variant,
            hidden_dim: d,
            n_iter: 3,
            input_net,
            edge_block,
            node_block,
            residual: upgraded,
            initial_residual: upgraded,
        }
    }
}

/// Per-column divisors normalizing (r [mm], phi [rad], z [mm]) node
/// features to roughly [-1, 1] across the barrel acceptance.
pub const FEATURE_SCALE: [f64; 3] = [1000.0, std::f64::consts::PI, 1100.0];

/// Flat parameter store: key -> dense array. Keys follow
/// `{input_net,edge_net,node_net}.{enc.,ro.}?{w,b}{layer}` plus
/// `edge_net.thetas` / `node_net.thetas` for quantum variants.
#[derive(Clone, Debug, PartialEq)]
pub struct GnnParams {
    pub variant: ModelVariant,
    pub values: BTreeMap<String, Array2<f64>>,
}

fn mlp_keys(prefix: &str, spec: &MlpSpec) -> Vec<(String, String)> {
    (0..spec.n_layers())
        .map(|i| (format!("{prefix}.w{i}"), format!("{prefix}.b{i}")))
        .collect()
}

fn init_mlp(
    prefix: &str,
    spec: &MlpSpec,
    rng: &mut ChaCha8Rng,
    values: &mut BTreeMap<String, Array2<f64>>,
) {
    for ((wk, bk), (w, b)) in mlp_keys(prefix, spec).into_iter().zip(spec.init(rng)) {
        values.insert(wk, w);
        values.insert(bk, b);
    }
}

fn init_block(
    prefix: &str,
    block: &BlockKind,
    rng: &mut ChaCha8Rng,
    values: &mut BTreeMap<String, Array2<f64>>,
) {
    match block {
        BlockKind::Classical(mlp) => init_mlp(prefix, mlp, rng, values),
        BlockKind::Quantum {
            encoder,
            pqc,
            readout,
            ..
        } => {
            init_mlp(&format!("{prefix}.enc"), encoder, rng, values);
            init_mlp(&format!("{prefix}.ro"), readout, rng, values);
            let k = pqc.circuit.theta_count();
            let thetas = Array2::from_shape_fn((1, k), |_| {
                use rand::Rng;
                rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI)
            });
            values.insert(format!("{prefix}.thetas"), thetas);
        }
    }
}

impl GnnParams {
    /// Seeded Glorot initialization of every block.
    pub fn init(variant: ModelVariant, seed: u64) -> Self {
        let arch = variant.architecture();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = BTreeMap::new();
        init_mlp("input_net", &arch.input_net, &mut rng, &mut values);
        init_block("edge_net", &arch.edge_block, &mut rng, &mut values);
        init_block("node_net", &arch.node_block, &mut rng, &mut values);
        GnnParams { variant, values }
    }

    /// (classical, quantum) trainable scalar counts.
    pub fn count(&self) -> (usize, usize) {
        let mut classical = 0;
        let mut quantum = 0;
        for (key, value) in &self.values {
            if key.ends_with(".thetas") {
                quantum += value.len();
            } else {
                classical += value.len();
            }
        }
        (classical, quantum)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        #[derive(Serialize)]
        struct Entry<'a> {
            shape: [usize; 2],
            data: Vec<&'a f64>,
        }
        let params: BTreeMap<&String, Entry> = self
            .values
            .iter()
            .map(|(k, v)| {
                (
                    k,
                    Entry {
                        shape: [v.nrows(), v.ncols()],
                        data: v.iter().collect(),
                    },
                )
            })
            .collect();
        let doc = serde_json::json!({
            "variant": self.variant.name(),
            "params": params,
        });
        let body = serde_json::to_string_pretty(&doc)
            .map_err(|e| Error::Numerical(format!("checkpoint encode: {e}")))?;
        std::fs::write(path, body).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let body = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        #[derive(Deserialize)]
        struct Entry {
            shape: [usize; 2],
            data: Vec<f64>,
        }
        #[derive(Deserialize)]
        struct Doc {
            variant: String,
            params: BTreeMap<String, Entry>,
        }
        let doc: Doc = serde_json::from_str(&body)
            .map_err(|e| Error::Ingest(format!("{}: {e}", path.display())))?;
        let variant = ModelVariant::parse(&doc.variant)?;
        let mut values = BTreeMap::new();
        for (k, e) in doc.params {
            let arr = Array2::from_shape_vec((e.shape[0], e.shape[1]), e.data)
                .map_err(|err| Error::Ingest(format!("{}: key {k}: {err}", path.display())))?;
            values.insert(k, arr);
        }
        let expected = GnnParams::init(variant, 0);
        if expected.values.len() != values.len()
            || expected
                .values
                .iter()
                .any(|(k, v)| values.get(k).map(|a| a.dim()) != Some(v.dim()))
        {
            return Err(Error::Config(format!(
                "{}: checkpoint does not match variant {}",
                path.display(),
                variant.name()
            )));
        }
        Ok(GnnParams { variant, values })
    }
}

/// Trainable parameter counts for a variant: (classical, quantum).
pub fn count_params(variant: ModelVariant) -> (usize, usize) {
    let arch = variant.architecture();
    let classical = arch.input_net.n_params()
        + arch.edge_block.n_classical_params()
        + arch.node_block.n_classical_params();
    let quantum = arch.edge_block.n_quantum_params() + arch.node_block.n_quantum_params();
    (classical, quantum)
}

/// Instrumentation collected during one forward pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ForwardStats {
    /// EN + NN + InputNet applications (InputNet excluded: the 7-block
    /// count of the paper-facing contract covers ENs and NNs only).
    pub block_applications: usize,
    pub circuit_evals: u64,
}

/// Tape handles to every parameter, plus the score output.
pub struct ForwardPass {
    pub scores: Var,
    pub param_vars: BTreeMap<String, Var>,
    pub stats: ForwardStats,
}

fn mlp_layer_vars(
    prefix: &str,
    spec: &MlpSpec,
    vars: &BTreeMap<String, Var>,
) -> Result<Vec<(Var, Var)>> {
    mlp_keys(prefix, spec)
        .into_iter()
        .map(|(wk, bk)| {
            let w = vars
                .get(&wk)
                .ok_or_else(|| Error::Config(format!("missing parameter {wk}")))?;
            let b = vars
                .get(&bk)
                .ok_or_else(|| Error::Config(format!("missing parameter {bk}")))?;
            Ok((*w, *b))
        })
        .collect()
}

fn apply_block(
    tape: &mut Tape,
    prefix: &str,
    block: &BlockKind,
    input: Var,
    vars: &BTreeMap<String, Var>,
) -> Result<Var> {
    match block {
        BlockKind::Classical(mlp) => {
            let layers = mlp_layer_vars(prefix, mlp, vars)?;
            mlp.forward(tape, input, &layers)
        }
        BlockKind::Quantum {
            encoder,
            pqc,
            readout_scale,
            readout,
        } => {
            let enc_layers = mlp_layer_vars(&format!("{prefix}.enc"), encoder, vars)?;
            let encoded = encoder.forward(tape, input, &enc_layers)?;
            let thetas = *vars
                .get(&format!("{prefix}.thetas"))
                .ok_or_else(|| Error::Config(format!("missing {prefix}.thetas")))?;
            let q = tape.pqc(encoded, thetas, Rc::new(pqc.clone()))?;
            let scaled = if *readout_scale != 1.0 {
                tape.scale(q, *readout_scale)
            } else {
                q
            };
            let ro_layers = mlp_layer_vars(&format!("{prefix}.ro"), readout, vars)?;
            readout.forward(tape, scaled, &ro_layers)
        }
    }
}

/// Run the full forward pass on one graph, returning edge scores in (0, 1)
/// as an N_E x 1 tape node. `n_iter` overrides the default of 3 when given.
pub fn gnn_forward(
    tape: &mut Tape,
    graph: &EventGraph,
    params: &GnnParams,
    n_iter: Option<usize>,
) -> Result<ForwardPass> {
    let arch = params.variant.architecture();
    let n_iter = n_iter.unwrap_or(arch.n_iter);

    let param_vars: BTreeMap<String, Var> = params
        .values
        .iter()
        .map(|(k, v)| (k.clone(), tape.leaf(v.clone())))
        .collect();

    let src = Rc::new(graph.src_indices().to_vec());
    let dst = Rc::new(graph.dst_indices().to_vec());
    let n_nodes = graph.n_nodes();
    let mut blocks = 0usize;

    // InputNet, on coordinates scaled to O(1) so tanh layers stay in their
    // active range; raw (r, phi, z) in mm/radians would saturate instantly.
    let mut scaled = graph.x.clone();
    for (col, s) in FEATURE_SCALE.iter().enumerate() {
        scaled.column_mut(col).mapv_inplace(|v| v / s);
    }
    let x = tape.leaf(scaled);
    let input_layers = mlp_layer_vars("input_net", &arch.input_net, &param_vars)?;
    let h0 = arch.input_net.forward(tape, x, &input_layers)?;
    let mut h = h0;

    // Edge Network over current node features.
    let edge_net = |tape: &mut Tape, h: Var, blocks: &mut usize| -> Result<Var> {
        let b_o = tape.gather_rows(h, Rc::clone(&src))?;
        let b_i = tape.gather_rows(h, Rc::clone(&dst))?;
        let b = tape.concat_cols(&[b_o, b_i])?;
        *blocks += 1;
        apply_block(tape, "edge_net", &arch.edge_block, b, &param_vars)
    };

    let mut scores = edge_net(tape, h, &mut blocks)?;

    for _ in 0..n_iter {
        // Node Network: score-weighted neighbor aggregation.
        let b_o = tape.gather_rows(h, Rc::clone(&src))?;
        let b_i = tape.gather_rows(h, Rc::clone(&dst))?;
        let weighted_o = tape.row_scale(b_o, scores)?;
        let weighted_i = tape.row_scale(b_i, scores)?;
        // x''_incoming[j] = sum_k e_k R_i^{jk} b_o^k, and symmetrically.
        let incoming = tape.scatter_rows(weighted_o, Rc::clone(&dst), n_nodes)?;
        let outgoing = tape.scatter_rows(weighted_i, Rc::clone(&src), n_nodes)?;
        let parts: Vec<Var> = if arch.initial_residual {
            vec![outgoing, incoming, h, h0]
        } else {
            vec![outgoing, incoming, h]
        };
        let nn_input = tape.concat_cols(&parts)?;
        blocks += 1;
        let update = apply_block(tape, "node_net", &arch.node_block, nn_input, &param_vars)?;
        h = if arch.residual {
            tape.add(h, update)?
        } else {
            update
        };
        scores = edge_net(tape, h, &mut blocks)?;
    }

    let stats = ForwardStats {
        block_applications: blocks,
        circuit_evals: tape.circuit_evals,
    };
    Ok(ForwardPass {
        scores,
        param_vars,
        stats,
    })
}

/// Convenience: scores as a plain vector (no gradient retained).
pub fn score_graph(graph: &EventGraph, params: &GnnParams) -> Result<Vec<f64>> {
    if graph.n_edges() == 0 {
        return Ok(Vec::new());
    }
    let mut tape = Tape::new();
    let pass = gnn_forward(&mut tape, graph, params, None)?;
    Ok(tape.value(pass.scores).column(0).to_vec())
}
