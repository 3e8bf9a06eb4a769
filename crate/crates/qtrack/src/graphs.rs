//! Selection cuts and directed event-graph construction.
//!
//! Hits surviving the barrel and transverse-momentum cuts become graph
//! nodes; a directed edge (inner layer -> adjacent outer layer) is created
//! whenever the pair passes the phi-slope and z0 windows. Connectivity is
//! held in the sparse incidence matrices R_i (edge -> target node) and R_o
//! (edge -> source node), each column carrying exactly one nonzero entry.

use std::collections::BTreeSet;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{wrap_angle, Event, Hit};

/// Selection and edge-compatibility thresholds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutConfig {
    /// Minimum parent-particle transverse momentum, GeV.
    pub pt_min: f64,
    /// |delta phi / delta r| window, radians per mm.
    pub phi_slope_max: f64,
    /// |z0| window, mm.
    pub z0_max: f64,
    /// Volumes considered part of the barrel.
    pub barrel_volumes: BTreeSet<u32>,
    /// (volume_id, layer_id) pairs in increasing nominal radius; the rank in
    /// this list is the 0-9 layer index.
    pub layer_order: Vec<(u32, u32)>,
}

impl Default for CutConfig {
    /// TrackML public-geometry defaults: barrel volumes {8, 13, 17} and
    /// their ten tracking planes.
    fn default() -> Self {
        CutConfig {
            pt_min: 1.0,
            phi_slope_max: 6e-4,
            z0_max: 100.0,
            barrel_volumes: BTreeSet::from([8, 13, 17]),
            layer_order: vec![
                (8, 2),
                (8, 4),
                (8, 6),
                (8, 8),
                (13, 2),
                (13, 4),
                (13, 6),
                (13, 8),
                (17, 2),
                (17, 4),
            ],
        }
    }
}

impl CutConfig {
    /// Geometry matching [`crate::events::synth_event`] output: one volume,
    /// layer ids 2..=20.
    pub fn for_synth() -> Self {
        CutConfig {
            barrel_volumes: BTreeSet::from([crate::events::SYNTH_VOLUME]),
            layer_order: (0..10)
                .map(|i| (crate::events::SYNTH_VOLUME, 2 * (i as u32 + 1)))
                .collect(),
            ..CutConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.pt_min <= 0.0 || self.phi_slope_max <= 0.0 || self.z0_max <= 0.0 {
            return Err(Error::Config("cut thresholds must be positive".into()));
        }
        if self.layer_order.is_empty() {
            return Err(Error::Config("empty layer order".into()));
        }
        Ok(())
    }

    fn layer_index(&self, volume_id: u32, layer_id: u32) -> Option<usize> {
        self.layer_order
            .iter()
            .position(|&(v, l)| v == volume_id && l == layer_id)
    }
}

/// A hit retained by [`select_hits`], with its barrel layer index.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectedHit {
    pub hit_id: u64,
    pub r: f64,
    pub phi: f64,
    pub z: f64,
    pub layer_index: usize,
    pub particle_id: u64,
}

/// Apply the barrel and pT selection. Noise hits (particle_id = 0) have no
/// parent momentum and are dropped along with the pT cut.
pub fn select_hits(event: &Event, cuts: &CutConfig) -> Vec<SelectedHit> {
    let pt_ok: std::collections::HashMap<u64, bool> = event
        .particles
        .iter()
        .map(|p| (p.particle_id, p.pt() >= cuts.pt_min))
        .collect();
    let mut selected: Vec<SelectedHit> = event
        .hits
        .iter()
        .filter_map(|h: &Hit| {
            if !cuts.barrel_volumes.contains(&h.volume_id) {
                return None;
            }
            let layer_index = cuts.layer_index(h.volume_id, h.layer_id)?;
            if h.particle_id == 0 || !pt_ok.get(&h.particle_id).copied().unwrap_or(false) {
                return None;
            }
            Some(SelectedHit {
                hit_id: h.hit_id,
                r: h.r,
                phi: h.phi,
                z: h.z,
                layer_index,
                particle_id: h.particle_id,
            })
        })
        .collect();
    selected.sort_by(|a, b| (a.layer_index, a.hit_id).cmp(&(b.layer_index, b.hit_id)));
    selected
}

/// Pair observables for an (inner, outer) hit pair:
/// phi_slope = dphi / dr and z0 = z1 - r1 * dz / dr.
pub fn pair_features(inner: &SelectedHit, outer: &SelectedHit) -> Result<(f64, f64)> {
    let dr = outer.r - inner.r;
    if dr <= 0.0 {
        return Err(Error::Config(format!(
            "non-positive delta r {dr}: layer ordering violated"
        )));
    }
    let dphi = wrap_angle(outer.phi - inner.phi);
    let dz = outer.z - inner.z;
    Ok((dphi / dr, inner.z - inner.r * dz / dr))
}

/// Sparse binary node x edge incidence matrix: column k has its single 1 at
/// `node_of_edge[k]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Incidence {
    pub n_nodes: usize,
    pub node_of_edge: Vec<usize>,
}

impl Incidence {
    pub fn n_edges(&self) -> usize {
        self.node_of_edge.len()
    }

    /// Dense materialization, for tests.
    pub fn to_dense(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.n_nodes, self.n_edges()));
        for (k, &j) in self.node_of_edge.iter().enumerate() {
            m[(j, k)] = 1.0;
        }
        m
    }
}

/// Directed event graph: node features, ordered edge list, incidence
/// matrices, and edge truth labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventGraph {
    /// N_V x 3 rows of (r, phi, z).
    pub x: Array2<f64>,
    /// Ordered (src, dst) node pairs, lexicographic.
    pub edges: Vec<(usize, usize)>,
    /// Edge -> target node (incoming).
    pub r_i: Incidence,
    /// Edge -> source node (outgoing).
    pub r_o: Incidence,
    /// Truth label per edge.
    pub y: Vec<f64>,
    /// Barrel layer index per node.
    pub layer_index: Vec<usize>,
    /// Truth particle per node (0 = noise), kept for label audits.
    pub particle_id: Vec<u64>,
}

impl EventGraph {
    pub fn n_nodes(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn src_indices(&self) -> &[usize] {
        &self.r_o.node_of_edge
    }

    pub fn dst_indices(&self) -> &[usize] {
        &self.r_i.node_of_edge
    }
}

/// Build the directed graph over selected hits. Edges connect hits on
/// adjacent layers (inner -> outer) passing both geometric cuts; the edge
/// list is ordered lexicographically by (src, dst) node index so the k-th
/// column of the incidence matrices is well defined.
pub fn build_graph(hits: &[SelectedHit], cuts: &CutConfig) -> Result<EventGraph> {
    cuts.validate()?;
    let n = hits.len();
    let mut x = Array2::zeros((n, 3));
    for (i, h) in hits.iter().enumerate() {
        x[(i, 0)] = h.r;
        x[(i, 1)] = h.phi;
        x[(i, 2)] = h.z;
    }

    let mut edges = Vec::new();
    let mut y = Vec::new();
    for (i, hi) in hits.iter().enumerate() {
        for (j, hj) in hits.iter().enumerate() {
            if hj.layer_index != hi.layer_index + 1 {
                continue;
            }
            let (phi_slope, z0) = pair_features(hi, hj)?;
            if phi_slope.abs() < cuts.phi_slope_max && z0.abs() < cuts.z0_max {
                edges.push((i, j));
                let truth =
                    hi.particle_id != 0 && hi.particle_id == hj.particle_id;
                y.push(if truth { 1.0 } else { 0.0 });
            }
        }
    }
    // The nested scan emits (src ascending, dst ascending) already; keep the
    // sort as the contract.
    let mut order: Vec<usize> = (0..edges.len()).collect();
    order.sort_by_key(|&k| edges[k]);
    let edges: Vec<(usize, usize)> = order.iter().map(|&k| edges[k]).collect();
    let y: Vec<f64> = order.iter().map(|&k| y[k]).collect();

    Ok(EventGraph {
        r_i: Incidence {
            n_nodes: n,
            node_of_edge: edges.iter().map(|&(_, dst)| dst).collect(),
        },
        r_o: Incidence {
            n_nodes: n,
            node_of_edge: edges.iter().map(|&(src, _)| src).collect(),
        },
        x,
        edges,
        y,
        layer_index: hits.iter().map(|h| h.layer_index).collect(),
        particle_id: hits.iter().map(|h| h.particle_id).collect(),
    })
}

/// Node/edge counts and the true-segment fraction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub n_nodes: usize,
    pub n_edges: usize,
    pub truth_fraction: f64,
    /// Set when the graph has no edges and the fraction is reported as 0.
    pub truth_undefined: bool,
}

pub fn graph_stats(graph: &EventGraph) -> GraphStats {
    let n_edges = graph.n_edges();
    if n_edges == 0 {
        return GraphStats {
            n_nodes: graph.n_nodes(),
            n_edges: 0,
            truth_fraction: 0.0,
            truth_undefined: true,
        };
    }
    GraphStats {
        n_nodes: graph.n_nodes(),
        n_edges,
        truth_fraction: graph.y.iter().sum::<f64>() / n_edges as f64,
        truth_undefined: false,
    }
}

/// Mean / standard deviation aggregate over a set of graphs.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct AggregateStats {
    pub n_graphs: usize,
    pub nodes_mean: f64,
    pub nodes_std: f64,
    pub edges_mean: f64,
    pub edges_std: f64,
    pub truth_fraction_mean: f64,
    pub truth_fraction_std: f64,
}

pub fn aggregate_stats(stats: &[GraphStats]) -> AggregateStats {
    let n = stats.len();
    if n == 0 {
        return AggregateStats::default();
    }
    let mean_std = |vals: Vec<f64>| -> (f64, f64) {
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        (mean, var.sqrt())
    };
    let (nm, ns) = mean_std(stats.iter().map(|s| s.n_nodes as f64).collect());
    let (em, es) = mean_std(stats.iter().map(|s| s.n_edges as f64).collect());
    let (tm, ts) = mean_std(stats.iter().map(|s| s.truth_fraction).collect());
    AggregateStats {
        n_graphs: n,
        nodes_mean: nm,
        nodes_std: ns,
        edges_mean: em,
        edges_std: es,
        truth_fraction_mean: tm,
        truth_fraction_std: ts,
    }
}

/// Write the graph as a columnar pair of CSVs: `<stem>-nodes.csv` with
/// (node, r, phi, z, layer_index, particle_id) and `<stem>-edges.csv` with
/// (edge, src, dst, y).
pub fn save_graph(graph: &EventGraph, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
    let dir = dir.as_ref();
    let mut nodes = String::from("node,r,phi,z,layer_index,particle_id\n");
    for i in 0..graph.n_nodes() {
        nodes.push_str(&format!(
            "{},{:.9},{:.9},{:.9},{},{}\n",
            i,
            graph.x[(i, 0)],
            graph.x[(i, 1)],
            graph.x[(i, 2)],
            graph.layer_index[i],
            graph.particle_id[i]
        ));
    }
    let mut edges = String::from("edge,src,dst,y\n");
    for (k, &(src, dst)) in graph.edges.iter().enumerate() {
        edges.push_str(&format!("{},{},{},{}\n", k, src, dst, graph.y[k] as u8));
    }
    let npath = dir.join(format!("{stem}-nodes.csv"));
    std::fs::write(&npath, nodes).map_err(|e| Error::io(npath.display().to_string(), e))?;
    let epath = dir.join(format!("{stem}-edges.csv"));
    std::fs::write(&epath, edges).map_err(|e| Error::io(epath.display().to_string(), e))
}

pub fn load_graph(dir: impl AsRef<Path>, stem: &str) -> Result<EventGraph> {
    let dir = dir.as_ref();
    let npath = dir.join(format!("{stem}-nodes.csv"));
    let epath = dir.join(format!("{stem}-edges.csv"));
    let nodes = std::fs::read_to_string(&npath)
        .map_err(|e| Error::io(npath.display().to_string(), e))?;
    let edges_s = std::fs::read_to_string(&epath)
        .map_err(|e| Error::io(epath.display().to_string(), e))?;

    let mut rows = Vec::new();
    for (ln, line) in nodes.lines().skip(1).enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(Error::Ingest(format!(
                "{} row {}: expected 6 fields",
                npath.display(),
                ln + 2
            )));
        }
        let parse_f = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::Ingest(format!("{}: bad float '{s}'", npath.display())))
        };
        rows.push((
            parse_f(f[1])?,
            parse_f(f[2])?,
            parse_f(f[3])?,
            f[4].parse::<usize>()
                .map_err(|_| Error::Ingest(format!("{}: bad layer '{}'", npath.display(), f[4])))?,
            f[5].parse::<u64>()
                .map_err(|_| Error::Ingest(format!("{}: bad pid '{}'", npath.display(), f[5])))?,
        ));
    }
    let n = rows.len();
    let mut x = Array2::zeros((n, 3));
    let mut layer_index = Vec::with_capacity(n);
    let mut particle_id = Vec::with_capacity(n);
    for (i, (r, phi, z, li, pid)) in rows.into_iter().enumerate() {
        x[(i, 0)] = r;
        x[(i, 1)] = phi;
        x[(i, 2)] = z;
        layer_index.push(li);
        particle_id.push(pid);
    }

    let mut edges = Vec::new();
    let mut y = Vec::new();
    for (ln, line) in edges_s.lines().skip(1).enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(Error::Ingest(format!(
                "{} row {}: expected 4 fields",
                epath.display(),
                ln + 2
            )));
        }
        let src: usize = f[1]
            .parse()
            .map_err(|_| Error::Ingest(format!("{}: bad src '{}'", epath.display(), f[1])))?;
        let dst: usize = f[2]
            .parse()
            .map_err(|_| Error::Ingest(format!("{}: bad dst '{}'", epath.display(), f[2])))?;
        if src >= n || dst >= n {
            return Err(Error::Ingest(format!(
                "{}: edge endpoint out of range",
                epath.display()
            )));
        }
        edges.push((src, dst));
        y.push(
            f[3].parse::<f64>()
                .map_err(|_| Error::Ingest(format!("{}: bad label '{}'", epath.display(), f[3])))?,
        );
    }

    Ok(EventGraph {
        r_i: Incidence {
            n_nodes: n,
            node_of_edge: edges.iter().map(|&(_, d)| d).collect(),
        },
        r_o: Incidence {
            n_nodes: n,
            node_of_edge: edges.iter().map(|&(s, _)| s).collect(),
        },
        x,
        edges,
        y,
        layer_index,
        particle_id,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{synth_event, Particle, SynthConfig, SYNTH_VOLUME};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn hit(hit_id: u64, r: f64, phi: f64, z: f64, layer_id: u32, pid: u64) -> Hit {
        Hit {
            hit_id,
            r,
            phi,
            z,
            volume_id: SYNTH_VOLUME,
            layer_id,
            particle_id: pid,
        }
    }

    fn sel(r: f64, phi: f64, z: f64, layer_index: usize, pid: u64) -> SelectedHit {
        SelectedHit {
            hit_id: 0,
            r,
            phi,
            z,
            layer_index,
            particle_id: pid,
        }
    }

    #[test]
    fn select_hits_applies_pt_cut() {
        let event = Event {
            event_id: 0,
            hits: vec![hit(1, 32.0, 0.0, 0.0, 2, 1), hit(2, 32.0, 1.0, 0.0, 2, 2)],
            particles: vec![
                Particle {
                    particle_id: 1,
                    vertex: [0.0; 3],
                    momentum: [0.9, 0.0, 0.0],
                    charge: 1,
                },
                Particle {
                    particle_id: 2,
                    vertex: [0.0; 3],
                    momentum: [5.0, 0.0, 0.0],
                    charge: 1,
                },
            ],
            pileup_mu: 1,
        };
        let selected = select_hits(&event, &CutConfig::for_synth());
        assert_eq!(selected.len(), 1);
        assert_eq!(selected[0].particle_id, 2);
    }

    #[test]
    fn select_hits_drops_endcap_volumes() {
        let mut h = hit(1, 32.0, 0.0, 0.0, 2, 1);
        h.volume_id = 7; // endcap
        let event = Event {
            event_id: 0,
            hits: vec![h],
            particles: vec![Particle {
                particle_id: 1,
                vertex: [0.0; 3],
                momentum: [5.0, 0.0, 0.0],
                charge: 1,
            }],
            pileup_mu: 1,
        };
        assert!(select_hits(&event, &CutConfig::for_synth()).is_empty());
    }

    #[test]
    fn select_hits_keeps_full_high_pt_track() {
        let config = SynthConfig {
            tracks_per_vertex: (1, 1),
            pt_range: (5.0, 5.0),
            vertex_z_spread: 0.0,
            ..SynthConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let event = synth_event(&config, 1, &mut rng).unwrap();
        let selected = select_hits(&event, &CutConfig::for_synth());
        assert_eq!(selected.len(), event.hits.len());
        // Layer indices assigned 0..9 by increasing radius.
        let indices: Vec<usize> = selected.iter().map(|h| h.layer_index).collect();
        assert_eq!(indices, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn pair_features_line_through_origin() {
        let (slope, z0) =
            pair_features(&sel(100.0, 0.3, 50.0, 0, 1), &sel(200.0, 0.3, 100.0, 1, 1)).unwrap();
        assert_abs_diff_eq!(slope, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(z0, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn pair_features_wraps_phi() {
        use std::f64::consts::PI;
        let (slope, _) = pair_features(
            &sel(100.0, PI - 0.001, 0.0, 0, 1),
            &sel(200.0, -PI + 0.001, 0.0, 1, 1),
        )
        .unwrap();
        assert_abs_diff_eq!(slope * 100.0, 0.002, epsilon = 1e-12);
    }

    #[test]
    fn pair_features_z0_by_substitution() {
        let (_, z0) =
            pair_features(&sel(100.0, 0.0, 10.0, 0, 1), &sel(200.0, 0.0, 20.0, 1, 1)).unwrap();
        assert_abs_diff_eq!(z0, 0.0, epsilon = 1e-12);
        let (_, z0) =
            pair_features(&sel(100.0, 0.0, 10.0, 0, 1), &sel(200.0, 0.0, 30.0, 1, 1)).unwrap();
        assert_abs_diff_eq!(z0, -10.0, epsilon = 1e-12);
    }

    #[test]
    fn pair_features_rejects_non_positive_dr() {
        assert!(
            pair_features(&sel(200.0, 0.0, 0.0, 1, 1), &sel(100.0, 0.0, 0.0, 0, 1)).is_err()
        );
    }

    #[test]
    fn build_graph_single_track_three_layers() {
        let hits = vec![
            sel(32.0, 0.0, 0.0, 0, 7),
            sel(72.0, 0.0, 0.0, 1, 7),
            sel(116.0, 0.0, 0.0, 2, 7),
        ];
        let g = build_graph(&hits, &CutConfig::for_synth()).unwrap();
        assert_eq!(g.n_nodes(), 3);
        assert_eq!(g.n_edges(), 2);
        assert_eq!(g.edges, vec![(0, 1), (1, 2)]);
        // Eq. (1)/(2) placement for edge 0 = (0 -> 1).
        let ro = g.r_o.to_dense();
        let ri = g.r_i.to_dense();
        assert_eq!(ro[(0, 0)], 1.0);
        assert_eq!(ri[(1, 0)], 1.0);
        assert_eq!(ro.column(0).sum(), 1.0);
        assert_eq!(ri.column(0).sum(), 1.0);
        assert_eq!(g.y, vec![1.0, 1.0]);
    }

    #[test]
    fn build_graph_skips_non_adjacent_layers() {
        let hits = vec![sel(32.0, 0.0, 0.0, 0, 7), sel(116.0, 0.0, 0.0, 2, 7)];
        let g = build_graph(&hits, &CutConfig::for_synth()).unwrap();
        assert_eq!(g.n_edges(), 0);
    }

    #[test]
    fn build_graph_separated_tracks_have_pure_truth() {
        // Two straight tracks far apart in phi: only same-track pairs pass.
        let mut hits = Vec::new();
        for li in 0..3usize {
            hits.push(sel(32.0 + 40.0 * li as f64, 0.0, 0.0, li, 1));
            hits.push(sel(32.0 + 40.0 * li as f64, 2.0, 0.0, li, 2));
        }
        let g = build_graph(&hits, &CutConfig::for_synth()).unwrap();
        assert!(g.n_edges() > 0);
        let stats = graph_stats(&g);
        assert_abs_diff_eq!(stats.truth_fraction, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn graph_stats_empty_graph_flags() {
        let g = build_graph(&[], &CutConfig::for_synth()).unwrap();
        let s = graph_stats(&g);
        assert_eq!((s.n_nodes, s.n_edges), (0, 0));
        assert!(s.truth_undefined);
        assert_eq!(s.truth_fraction, 0.0);
    }

    fn random_synth_graph(seed: u64) -> EventGraph {
        let config = SynthConfig {
            noise_hit_fraction: 0.05,
            ..SynthConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let event = synth_event(&config, 6, &mut rng).unwrap();
        let cuts = CutConfig {
            phi_slope_max: 1.2e-3,
            ..CutConfig::for_synth()
        };
        build_graph(&select_hits(&event, &cuts), &cuts).unwrap()
    }

    #[test]
    fn incidence_invariants_on_random_graphs() {
        for seed in 0..20 {
            let g = random_synth_graph(seed);
            // Column sums exactly one, disjoint support per column.
            for k in 0..g.n_edges() {
                let (src, dst) = g.edges[k];
                assert_eq!(g.r_o.node_of_edge[k], src);
                assert_eq!(g.r_i.node_of_edge[k], dst);
                assert_ne!(src, dst, "self loop at edge {k}");
                // Direction invariant.
                assert_eq!(g.layer_index[dst], g.layer_index[src] + 1);
            }
            // Reconstruction invariant.
            let rebuilt: Vec<(usize, usize)> = g
                .r_o
                .node_of_edge
                .iter()
                .zip(&g.r_i.node_of_edge)
                .map(|(&s, &d)| (s, d))
                .collect();
            assert_eq!(rebuilt, g.edges);
            // Truth labels imply shared nonzero particle.
            for (k, &(s, d)) in g.edges.iter().enumerate() {
                if g.y[k] == 1.0 {
                    assert_eq!(g.particle_id[s], g.particle_id[d]);
                    assert_ne!(g.particle_id[s], 0);
                }
            }
        }
    }

    #[test]
    fn cut_monotonicity() {
        let config = SynthConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let event = synth_event(&config, 6, &mut rng).unwrap();
        let tight = CutConfig::for_synth();
        let loose = CutConfig {
            phi_slope_max: tight.phi_slope_max * 3.0,
            z0_max: tight.z0_max * 3.0,
            ..CutConfig::for_synth()
        };
        let hits = select_hits(&event, &tight);
        let g_tight = build_graph(&hits, &tight).unwrap();
        let g_loose = build_graph(&hits, &loose).unwrap();
        let loose_set: std::collections::HashSet<(usize, usize)> =
            g_loose.edges.iter().copied().collect();
        for e in &g_tight.edges {
            assert!(loose_set.contains(e), "loosening removed edge {e:?}");
        }
    }

    #[test]
    fn graph_round_trips_through_csv() {
        let g = random_synth_graph(23);
        let dir = tempfile::tempdir().unwrap();
        save_graph(&g, dir.path(), "event000000001").unwrap();
        let loaded = load_graph(dir.path(), "event000000001").unwrap();
        assert_eq!(loaded.edges, g.edges);
        assert_eq!(loaded.y, g.y);
        assert_eq!(loaded.layer_index, g.layer_index);
        for (a, b) in loaded.x.iter().zip(g.x.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
        assert_eq!(graph_stats(&loaded), graph_stats(&g));
    }
}
