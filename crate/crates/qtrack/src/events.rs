//! Event ingestion and synthesis.
//!
//! Events arrive either from TrackML-format CSV triplets (hits / truth /
//! particles) or from a desk-scale surrogate generator that propagates
//! helical tracks through ten concentric barrel layers in a uniform axial
//! field. Both paths produce the same [`Event`] structure, and synthetic
//! events serialize back to the TrackML schema so downstream stages are
//! source-agnostic.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::f64::consts::{PI, TAU};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One clustered energy deposit in cylindrical coordinates (mm, radians).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub hit_id: u64,
    pub r: f64,
    /// Azimuthal angle in (-pi, pi].
    pub phi: f64,
    pub z: f64,
    pub volume_id: u32,
    pub layer_id: u32,
    /// Ground-truth particle; 0 marks a noise hit.
    pub particle_id: u64,
}

/// Truth particle with production vertex and momentum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub particle_id: u64,
    /// (vx, vy, vz) in mm.
    pub vertex: [f64; 3],
    /// (px, py, pz) in GeV.
    pub momentum: [f64; 3],
    pub charge: i8,
}

impl Particle {
    pub fn pt(&self) -> f64 {
        (self.momentum[0].powi(2) + self.momentum[1].powi(2)).sqrt()
    }
}

/// A collision event: hits, truth particles, and the retained pileup level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub event_id: u64,
    pub hits: Vec<Hit>,
    pub particles: Vec<Particle>,
    /// Number of distinct primary vertices retained.
    pub pileup_mu: usize,
}

/// (x, y, z) -> (r, phi, z) with phi in (-pi, pi].
pub fn to_cylindrical(x: f64, y: f64, z: f64) -> (f64, f64, f64) {
    ((x * x + y * y).sqrt(), y.atan2(x), z)
}

/// (r, phi, z) -> (x, y, z).
pub fn to_cartesian(r: f64, phi: f64, z: f64) -> (f64, f64, f64) {
    (r * phi.cos(), r * phi.sin(), z)
}

/// Wrap an angle difference into (-pi, pi].
pub fn wrap_angle(dphi: f64) -> f64 {
    let mut d = dphi % TAU;
    if d <= -PI {
        d += TAU;
    } else if d > PI {
        d -= TAU;
    }
    d
}

fn vertex_key(v: [f64; 3]) -> [u64; 3] {
    [v[0].to_bits(), v[1].to_bits(), v[2].to_bits()]
}

impl Event {
    /// Distinct primary vertices (exact coordinate equality) with their
    /// particles, in a deterministic order.
    pub fn vertices(&self) -> Vec<([f64; 3], Vec<&Particle>)> {
        let mut groups: BTreeMap<[u64; 3], ([f64; 3], Vec<&Particle>)> = BTreeMap::new();
        for p in &self.particles {
            groups
                .entry(vertex_key(p.vertex))
                .or_insert_with(|| (p.vertex, Vec::new()))
                .1
                .push(p);
        }
        groups.into_values().collect()
    }
}

fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Ingest(format!("{}: {e}", path.display())))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Ingest(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record =
            record.map_err(|e| Error::Ingest(format!("{} row {}: {e}", path.display(), i + 2)))?;
        rows.push(record.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}

fn column(header: &[String], name: &str, path: &Path) -> Result<usize> {
    header.iter().position(|h| h == name).ok_or_else(|| {
        Error::Ingest(format!("{}: missing column '{name}'", path.display()))
    })
}

fn parse<T: std::str::FromStr>(field: &str, path: &Path, row: usize) -> Result<T> {
    field.parse().map_err(|_| {
        Error::Ingest(format!(
            "{} row {}: malformed field '{field}'",
            path.display(),
            row + 2
        ))
    })
}

/// Load one event from a TrackML CSV triplet. Hit Cartesian coordinates are
/// converted to cylindrical; the truth file binds hits to particles (a hit
/// absent from truth keeps particle_id 0, a truth row whose hit is unknown
/// is an error).
pub fn load_trackml_event(
    hits_path: impl AsRef<Path>,
    truth_path: impl AsRef<Path>,
    particles_path: impl AsRef<Path>,
) -> Result<Event> {
    let hits_path = hits_path.as_ref();
    let truth_path = truth_path.as_ref();
    let particles_path = particles_path.as_ref();

    let (hh, hrows) = read_csv(hits_path)?;
    let c_hit = column(&hh, "hit_id", hits_path)?;
    let c_x = column(&hh, "x", hits_path)?;
    let c_y = column(&hh, "y", hits_path)?;
    let c_z = column(&hh, "z", hits_path)?;
    let c_vol = column(&hh, "volume_id", hits_path)?;
    let c_lay = column(&hh, "layer_id", hits_path)?;

    let (th, trows) = read_csv(truth_path)?;
    let t_hit = column(&th, "hit_id", truth_path)?;
    let t_pid = column(&th, "particle_id", truth_path)?;

    let (ph, prows) = read_csv(particles_path)?;
    let p_pid = column(&ph, "particle_id", particles_path)?;
    let p_vx = column(&ph, "vx", particles_path)?;
    let p_vy = column(&ph, "vy", particles_path)?;
    let p_vz = column(&ph, "vz", particles_path)?;
    let p_px = column(&ph, "px", particles_path)?;
    let p_py = column(&ph, "py", particles_path)?;
    let p_pz = column(&ph, "pz", particles_path)?;
    let p_q = column(&ph, "q", particles_path)?;

    let mut truth: HashMap<u64, u64> = HashMap::new();
    for (i, row) in trows.iter().enumerate() {
        let hit_id: u64 = parse(&row[t_hit], truth_path, i)?;
        let pid: u64 = parse(&row[t_pid], truth_path, i)?;
        truth.insert(hit_id, pid);
    }

    let mut hits = Vec::with_capacity(hrows.len());
    let mut seen = HashSet::new();
    for (i, row) in hrows.iter().enumerate() {
        let hit_id: u64 = parse(&row[c_hit], hits_path, i)?;
        let x: f64 = parse(&row[c_x], hits_path, i)?;
        let y: f64 = parse(&row[c_y], hits_path, i)?;
        let z: f64 = parse(&row[c_z], hits_path, i)?;
        let (r, phi, z) = to_cylindrical(x, y, z);
        seen.insert(hit_id);
        hits.push(Hit {
            hit_id,
            r,
            phi,
            z,
            volume_id: parse(&row[c_vol], hits_path, i)?,
            layer_id: parse(&row[c_lay], hits_path, i)?,
            particle_id: truth.get(&hit_id).copied().unwrap_or(0),
        });
    }

    if let Some(orphan) = truth.keys().find(|id| !seen.contains(id)) {
        return Err(Error::Ingest(format!(
            "{}: truth hit_id {orphan} absent from {}",
            truth_path.display(),
            hits_path.display()
        )));
    }

    let mut particles = Vec::with_capacity(prows.len());
    for (i, row) in prows.iter().enumerate() {
        particles.push(Particle {
            particle_id: parse(&row[p_pid], particles_path, i)?,
            vertex: [
                parse(&row[p_vx], particles_path, i)?,
                parse(&row[p_vy], particles_path, i)?,
                parse(&row[p_vz], particles_path, i)?,
            ],
            momentum: [
                parse(&row[p_px], particles_path, i)?,
                parse(&row[p_py], particles_path, i)?,
                parse(&row[p_pz], particles_path, i)?,
            ],
            charge: parse::<f64>(&row[p_q], particles_path, i)?.signum() as i8,
        });
    }

    let mut event = Event {
        event_id: 0,
        hits,
        particles,
        pileup_mu: 0,
    };
    event.pileup_mu = event.vertices().len();
    Ok(event)
}

/// Write an event back out as a TrackML CSV triplet under `dir` with the
/// standard `event%09d-{hits,truth,particles}.csv` names.
pub fn save_trackml_event(event: &Event, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let stem = format!("event{:09}", event.event_id);
    let write = |name: &str, body: String| -> Result<()> {
        let path = dir.join(format!("{stem}-{name}.csv"));
        std::fs::write(&path, body).map_err(|e| Error::io(path.display().to_string(), e))
    };

    let mut hits = String::from("hit_id,x,y,z,volume_id,layer_id,module_id\n");
    let mut truth = String::from("hit_id,particle_id\n");
    for h in &event.hits {
        let (x, y, z) = to_cartesian(h.r, h.phi, h.z);
        hits.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{},{},0\n",
            h.hit_id, x, y, z, h.volume_id, h.layer_id
        ));
        truth.push_str(&format!("{},{}\n", h.hit_id, h.particle_id));
    }
    let mut particles = String::from("particle_id,vx,vy,vz,px,py,pz,q\n");
    for p in &event.particles {
        particles.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.9},{:.9},{:.9},{}\n",
            p.particle_id,
            p.vertex[0],
            p.vertex[1],
            p.vertex[2],
            p.momentum[0],
            p.momentum[1],
            p.momentum[2],
            p.charge
        ));
    }
    write("hits", hits)?;
    write("truth", truth)?;
    write("particles", particles)
}

/// Retain the particles (and their hits) of `mu` randomly chosen primary
/// vertices. Noise hits are dropped: subsampling is defined over vertices,
/// and synthetic noise is reintroduced explicitly at generation time.
///
/// Sampling is a partial Fisher-Yates shuffle over the deterministic vertex
/// order, so for a fixed rng stream the mu=a selection is a prefix of the
/// mu=b selection whenever a <= b.
pub fn subsample_pileup(event: &Event, mu: usize, rng: &mut impl Rng) -> Result<Event> {
    let vertices = event.vertices();
    if mu > vertices.len() {
        return Err(Error::Config(format!(
            "requested mu={mu} but event has {} vertices",
            vertices.len()
        )));
    }
    let mut order: Vec<usize> = (0..vertices.len()).collect();
    for i in 0..mu {
        let j = rng.gen_range(i..order.len());
        order.swap(i, j);
    }
    let kept_particles: HashSet<u64> = order[..mu]
        .iter()
        .flat_map(|&vi| vertices[vi].1.iter().map(|p| p.particle_id))
        .collect();

    Ok(Event {
        event_id: event.event_id,
        hits: event
            .hits
            .iter()
            .filter(|h| h.particle_id != 0 && kept_particles.contains(&h.particle_id))
            .cloned()
            .collect(),
        particles: event
            .particles
            .iter()
            .filter(|p| kept_particles.contains(&p.particle_id))
            .cloned()
            .collect(),
        pileup_mu: mu,
    })
}

/// Synthetic-event generator settings. Units are mm, GeV, Tesla.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Nominal radii of the ten barrel layers, strictly increasing.
    pub layer_radii: Vec<f64>,
    /// Uniform axial field strength.
    pub magnetic_field: f64,
    /// Inclusive (min, max) tracks sampled per vertex.
    pub tracks_per_vertex: (usize, usize),
    /// Gaussian sigma of the vertex z position.
    pub vertex_z_spread: f64,
    /// Uniform transverse-momentum window.
    pub pt_range: (f64, f64),
    /// Target fraction of noise hits among all hits, in [0, 1).
    pub noise_hit_fraction: f64,
    pub seed: u64,
}

/// Volume id stamped on synthetic hits; layer ids follow the TrackML even
/// numbering 2, 4, ..., 20.
pub const SYNTH_VOLUME: u32 = 8;

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            layer_radii: vec![
                32.0, 72.0, 116.0, 172.0, 260.0, 360.0, 500.0, 660.0, 820.0, 1020.0,
            ],
            magnetic_field: 2.0,
            tracks_per_vertex: (2, 4),
            vertex_z_spread: 35.0,
            pt_range: (1.0, 5.0),
            noise_hit_fraction: 0.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layer_radii.len() != 10 {
            return Err(Error::Config(format!(
                "expected 10 layer radii, got {}",
                self.layer_radii.len()
            )));
        }
        if self.layer_radii.windows(2).any(|w| w[0] >= w[1]) || self.layer_radii[0] <= 0.0 {
            return Err(Error::Config("layer radii must be strictly increasing".into()));
        }
        if self.pt_range.0 <= 0.0 || self.pt_range.1 < self.pt_range.0 {
            return Err(Error::Config(format!(
                "invalid pt range {:?}",
                self.pt_range
            )));
        }
        if !(0.0..1.0).contains(&self.noise_hit_fraction) {
            return Err(Error::Config(format!(
                "noise fraction {} outside [0, 1)",
                self.noise_hit_fraction
            )));
        }
        if self.tracks_per_vertex.0 > self.tracks_per_vertex.1 || self.tracks_per_vertex.1 == 0 {
            return Err(Error::Config(format!(
                "invalid tracks per vertex {:?}",
                self.tracks_per_vertex
            )));
        }
        if self.vertex_z_spread < 0.0 || self.magnetic_field < 0.0 {
            return Err(Error::Config("negative field or z spread".into()));
        }
        Ok(())
    }

    pub fn layer_id_of(index: usize) -> u32 {
        2 * (index as u32 + 1)
    }
}

/// Transverse helix radius in mm for pT in GeV, B in Tesla, unit charge.
pub fn helix_radius_mm(pt: f64, field: f64) -> f64 {
    // rho[m] = pT / (0.3 B); fields below ~1 mT are treated as zero further up.
    pt / (0.3 * field) * 1000.0
}

/// Intersection of a helix (or straight ray for negligible field) launched
/// from `(0, 0, vz)` with the cylinder of radius `layer_r`. Returns
/// (phi, z) of the first crossing, or None if the track curls up first.
fn helix_crossing(
    vz: f64,
    pt: f64,
    phi0: f64,
    pz: f64,
    charge: i8,
    field: f64,
    layer_r: f64,
) -> Option<(f64, f64)> {
    const FIELD_EPS: f64 = 1e-3;
    if field.abs() < FIELD_EPS {
        // Straight transverse ray: crosses every radius at constant phi.
        let s = layer_r;
        return Some((wrap_angle(phi0), vz + pz / pt * s));
    }
    let rho = helix_radius_mm(pt, field);
    if 2.0 * rho < layer_r {
        return None;
    }
    // Signed turning direction: positive charge in a +z field bends clockwise.
    let omega: f64 = if (charge as f64) * field > 0.0 { -1.0 } else { 1.0 };
    let alpha0 = phi0 - omega * PI / 2.0;
    let (cx, cy) = (-rho * alpha0.cos(), -rho * alpha0.sin());

    // Circle-circle intersection: |P| = layer_r, |P - c| = rho, |c| = rho.
    let d = rho;
    let a = layer_r * layer_r / (2.0 * d);
    let h2 = layer_r * layer_r - a * a;
    if h2 < 0.0 {
        return None;
    }
    let h = h2.sqrt();
    let (ux, uy) = (cx / d, cy / d);
    let candidates = [
        (a * ux - h * uy, a * uy + h * ux),
        (a * ux + h * uy, a * uy - h * ux),
    ];
    // First crossing along the direction of motion.
    let mut best: Option<(f64, f64, f64)> = None;
    for (px, py) in candidates {
        let alpha = (py - cy).atan2(px - cx);
        let mut dalpha = omega * (alpha - alpha0);
        dalpha = dalpha.rem_euclid(TAU);
        if best.map_or(true, |(bd, _, _)| dalpha < bd) {
            best = Some((dalpha, px, py));
        }
    }
    let (dalpha, px, py) = best?;
    let arc = rho * dalpha;
    Some((py.atan2(px), vz + pz / pt * arc))
}

/// Generate a surrogate event with `mu` primary vertices of helical tracks,
/// plus uniform noise hits controlled by `noise_hit_fraction`.
pub fn synth_event(config: &SynthConfig, mu: usize, rng: &mut impl Rng) -> Result<Event> {
    config.validate()?;
    let z_normal = Normal::new(0.0, config.vertex_z_spread.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Config(format!("vertex spread: {e}")))?;

    let mut hits = Vec::new();
    let mut particles = Vec::new();
    let mut next_hit = 1u64;
    let mut next_particle = 1u64;

    for _ in 0..mu {
        let vz = if config.vertex_z_spread > 0.0 {
            z_normal.sample(rng)
        } else {
            0.0
        };
        let n_tracks = rng.gen_range(config.tracks_per_vertex.0..=config.tracks_per_vertex.1);
        for _ in 0..n_tracks {
            let pt = rng.gen_range(config.pt_range.0..=config.pt_range.1);
            let phi0 = rng.gen_range(-PI..PI);
            let pz = pt * rng.gen_range(-0.5..0.5);
            let charge: i8 = if rng.gen_bool(0.5) { 1 } else { -1 };
            let particle_id = next_particle;
            next_particle += 1;
            particles.push(Particle {
                particle_id,
                vertex: [0.0, 0.0, vz],
                momentum: [pt * phi0.cos(), pt * phi0.sin(), pz],
                charge,
            });
            for (li, &layer_r) in config.layer_radii.iter().enumerate() {
                if let Some((phi, z)) = helix_crossing(
                    vz,
                    pt,
                    phi0,
                    pz,
                    charge,
                    config.magnetic_field,
                    layer_r,
                ) {
                    hits.push(Hit {
                        hit_id: next_hit,
                        r: layer_r,
                        phi,
                        z,
                        volume_id: SYNTH_VOLUME,
                        layer_id: SynthConfig::layer_id_of(li),
                        particle_id,
                    });
                    next_hit += 1;
                }
            }
        }
    }

    if config.noise_hit_fraction > 0.0 {
        let f = config.noise_hit_fraction;
        let n_noise = (f / (1.0 - f) * hits.len() as f64).round() as usize;
        let z_max = config.layer_radii.last().copied().unwrap_or(1000.0);
        for _ in 0..n_noise {
            let li = rng.gen_range(0..config.layer_radii.len());
            hits.push(Hit {
                hit_id: next_hit,
                r: config.layer_radii[li],
                phi: rng.gen_range(-PI..PI),
                z: rng.gen_range(-z_max..z_max),
                volume_id: SYNTH_VOLUME,
                layer_id: SynthConfig::layer_id_of(li),
                particle_id: 0,
            });
            next_hit += 1;
        }
    }

    Ok(Event {
        event_id: 0,
        hits,
        particles,
        pileup_mu: mu,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn write_triplet(dir: &Path) {
        std::fs::write(
            dir.join("hits.csv"),
            "hit_id,x,y,z,volume_id,layer_id,module_id\n\
             1,0.0,10.0,5.0,8,2,1\n\
             2,-1.0,0.0,0.0,8,4,1\n\
             3,5.0,5.0,1.0,13,2,1\n",
        )
        .unwrap();
        std::fs::write(
            dir.join("truth.csv"),
            "hit_id,particle_id\n1,100\n2,100\n",
        )
        .unwrap();
        std::fs::write(
            dir.join("particles.csv"),
            "particle_id,vx,vy,vz,px,py,pz,q\n100,0,0,0,1.0,0.5,0.2,1\n",
        )
        .unwrap();
    }

    #[test]
    fn load_converts_to_cylindrical() {
        let dir = tempfile::tempdir().unwrap();
        write_triplet(dir.path());
        let ev = load_trackml_event(
            dir.path().join("hits.csv"),
            dir.path().join("truth.csv"),
            dir.path().join("particles.csv"),
        )
        .unwrap();
        assert_eq!(ev.hits.len(), 3);
        assert_abs_diff_eq!(ev.hits[0].r, 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ev.hits[0].phi, PI / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ev.hits[0].z, 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ev.hits[1].r, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ev.hits[1].phi, PI, epsilon = 1e-12);
        assert_eq!(ev.hits[0].particle_id, 100);
        // Hit 3 has no truth row: noise.
        assert_eq!(ev.hits[2].particle_id, 0);
    }

    #[test]
    fn load_missing_file_names_path() {
        let err = load_trackml_event("/nonexistent/h.csv", "/nonexistent/t.csv", "/nonexistent/p.csv")
            .unwrap_err();
        assert!(err.to_string().contains("/nonexistent/h.csv"));
    }

    #[test]
    fn load_orphan_truth_hit_errors() {
        let dir = tempfile::tempdir().unwrap();
        write_triplet(dir.path());
        std::fs::write(
            dir.path().join("truth.csv"),
            "hit_id,particle_id\n1,100\n99,100\n",
        )
        .unwrap();
        assert!(load_trackml_event(
            dir.path().join("hits.csv"),
            dir.path().join("truth.csv"),
            dir.path().join("particles.csv"),
        )
        .is_err());
    }

    #[test]
    fn load_malformed_row_reports_row_number() {
        let dir = tempfile::tempdir().unwrap();
        write_triplet(dir.path());
        std::fs::write(
            dir.path().join("hits.csv"),
            "hit_id,x,y,z,volume_id,layer_id,module_id\n1,abc,10.0,5.0,8,2,1\n",
        )
        .unwrap();
        let err = load_trackml_event(
            dir.path().join("hits.csv"),
            dir.path().join("truth.csv"),
            dir.path().join("particles.csv"),
        )
        .unwrap_err();
        assert!(err.to_string().contains("row 2"), "{err}");
    }

    fn three_vertex_event() -> Event {
        // Vertices with 2 / 3 / 4 tracks.
        let mut particles = Vec::new();
        let mut hits = Vec::new();
        let mut pid = 1u64;
        for (vi, n) in [(0usize, 2usize), (1, 3), (2, 4)] {
            for _ in 0..n {
                particles.push(Particle {
                    particle_id: pid,
                    vertex: [0.0, 0.0, vi as f64 * 10.0],
                    momentum: [1.0, 0.0, 0.0],
                    charge: 1,
                });
                hits.push(Hit {
                    hit_id: pid,
                    r: 32.0,
                    phi: 0.0,
                    z: 0.0,
                    volume_id: SYNTH_VOLUME,
                    layer_id: 2,
                    particle_id: pid,
                });
                pid += 1;
            }
        }
        // One noise hit.
        hits.push(Hit {
            hit_id: 999,
            r: 72.0,
            phi: 1.0,
            z: 0.0,
            volume_id: SYNTH_VOLUME,
            layer_id: 4,
            particle_id: 0,
        });
        Event {
            event_id: 7,
            hits,
            particles,
            pileup_mu: 3,
        }
    }

    #[test]
    fn subsample_all_vertices_is_identity_on_particles() {
        let ev = three_vertex_event();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sub = subsample_pileup(&ev, 3, &mut rng).unwrap();
        assert_eq!(sub.particles.len(), ev.particles.len());
        assert_eq!(sub.pileup_mu, 3);
        // Noise hits dropped.
        assert!(sub.hits.iter().all(|h| h.particle_id != 0));
    }

    #[test]
    fn subsample_zero_is_degenerate() {
        let ev = three_vertex_event();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sub = subsample_pileup(&ev, 0, &mut rng).unwrap();
        assert!(sub.particles.is_empty());
        assert!(sub.hits.is_empty());
    }

    #[test]
    fn subsample_two_of_three_vertices_keeps_their_tracks() {
        let ev = three_vertex_event();
        // Try seeds until vertices {0, 2} (2 and 4 tracks) are picked,
        // then hand-check the count.
        for seed in 0..64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sub = subsample_pileup(&ev, 2, &mut rng).unwrap();
            let kept_z: HashSet<u64> = sub
                .particles
                .iter()
                .map(|p| p.vertex[2].to_bits())
                .collect();
            if kept_z == HashSet::from([0.0f64.to_bits(), 20.0f64.to_bits()]) {
                assert_eq!(sub.particles.len(), 6);
                return;
            }
        }
        panic!("vertex pair {{0, 2}} never sampled across 64 seeds");
    }

    #[test]
    fn subsample_exceeding_vertices_errors() {
        let ev = three_vertex_event();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(subsample_pileup(&ev, 4, &mut rng).is_err());
    }

    #[test]
    fn subsample_nested_selection_is_monotone() {
        let ev = three_vertex_event();
        let hits_at = |mu: usize| -> HashSet<u64> {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            subsample_pileup(&ev, mu, &mut rng)
                .unwrap()
                .hits
                .iter()
                .map(|h| h.hit_id)
                .collect()
        };
        let h1 = hits_at(1);
        let h2 = hits_at(2);
        let h3 = hits_at(3);
        assert!(h1.is_subset(&h2) && h2.is_subset(&h3));
    }

    #[test]
    fn synth_zero_field_gives_straight_rays() {
        let config = SynthConfig {
            magnetic_field: 0.0,
            vertex_z_spread: 0.0,
            noise_hit_fraction: 0.0,
            tracks_per_vertex: (1, 1),
            ..SynthConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ev = synth_event(&config, 1, &mut rng).unwrap();
        assert_eq!(ev.hits.len(), 10);
        let phi0 = ev.hits[0].phi;
        for h in &ev.hits {
            assert_abs_diff_eq!(h.phi, phi0, epsilon = 1e-12);
        }
    }

    #[test]
    fn synth_low_pt_track_misses_outer_layers() {
        // 2 rho < r_max: pT such that the helix diameter is below 1020 mm.
        let config = SynthConfig {
            pt_range: (0.25, 0.25),
            tracks_per_vertex: (1, 1),
            vertex_z_spread: 0.0,
            ..SynthConfig::default()
        };
        // rho = 0.25 / 0.6 m = 416.7 mm; 2 rho = 833 mm < 1020 mm.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ev = synth_event(&config, 1, &mut rng).unwrap();
        assert!(ev.hits.len() < 10);
        let reachable = config
            .layer_radii
            .iter()
            .filter(|&&r| 2.0 * helix_radius_mm(0.25, config.magnetic_field) >= r)
            .count();
        assert_eq!(ev.hits.len(), reachable);
    }

    #[test]
    fn synth_is_deterministic_per_seed() {
        let config = SynthConfig {
            noise_hit_fraction: 0.1,
            ..SynthConfig::default()
        };
        let gen = || {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            synth_event(&config, 5, &mut rng).unwrap()
        };
        assert_eq!(gen(), gen());
    }

    #[test]
    fn synth_hits_satisfy_helix_equations() {
        let config = SynthConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ev = synth_event(&config, 4, &mut rng).unwrap();
        let by_id: HashMap<u64, &Particle> =
            ev.particles.iter().map(|p| (p.particle_id, p)).collect();
        for h in &ev.hits {
            let p = by_id[&h.particle_id];
            let pt = p.pt();
            let rho = helix_radius_mm(pt, config.magnetic_field);
            let phi0 = p.momentum[1].atan2(p.momentum[0]);
            let omega: f64 = if (p.charge as f64) * config.magnetic_field > 0.0 {
                -1.0
            } else {
                1.0
            };
            let alpha0 = phi0 - omega * PI / 2.0;
            let (cx, cy) = (-rho * alpha0.cos(), -rho * alpha0.sin());
            let (hx, hy, _) = to_cartesian(h.r, h.phi, h.z);
            let dist = ((hx - cx).powi(2) + (hy - cy).powi(2)).sqrt();
            assert_abs_diff_eq!(dist, rho, epsilon = 1e-6 * rho);
            // Arc-length / z consistency.
            let alpha = (hy - cy).atan2(hx - cx);
            let dalpha = (omega * (alpha - alpha0)).rem_euclid(TAU);
            let z_expected = p.vertex[2] + p.momentum[2] / pt * rho * dalpha;
            assert_abs_diff_eq!(h.z, z_expected, epsilon = 1e-6);
        }
    }

    #[test]
    fn synth_noise_fraction_approximate() {
        let config = SynthConfig {
            noise_hit_fraction: 0.2,
            ..SynthConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let ev = synth_event(&config, 20, &mut rng).unwrap();
        let noise = ev.hits.iter().filter(|h| h.particle_id == 0).count();
        let frac = noise as f64 / ev.hits.len() as f64;
        assert!((frac - 0.2).abs() < 0.02, "noise fraction {frac}");
    }

    #[test]
    fn trackml_round_trip_through_csv() {
        let config = SynthConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let ev = synth_event(&config, 3, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_trackml_event(&ev, dir.path()).unwrap();
        let loaded = load_trackml_event(
            dir.path().join("event000000000-hits.csv"),
            dir.path().join("event000000000-truth.csv"),
            dir.path().join("event000000000-particles.csv"),
        )
        .unwrap();
        assert_eq!(loaded.hits.len(), ev.hits.len());
        for (a, b) in loaded.hits.iter().zip(&ev.hits) {
            assert_abs_diff_eq!(a.r, b.r, epsilon = 1e-3);
            assert_abs_diff_eq!(a.phi, b.phi, epsilon = 1e-5);
            assert_eq!(a.particle_id, b.particle_id);
        }
    }

    proptest! {
        #[test]
        fn cylindrical_round_trip(
            x in -1000.0f64..1000.0,
            y in -1000.0f64..1000.0,
            z in -1000.0f64..1000.0,
        ) {
            prop_assume!(x.abs() > 1e-6 || y.abs() > 1e-6);
            let (r, phi, zc) = to_cylindrical(x, y, z);
            prop_assert!(phi > -PI && phi <= PI);
            let (x2, y2, z2) = to_cartesian(r, phi, zc);
            let scale = (x * x + y * y).sqrt().max(1.0);
            prop_assert!((x - x2).abs() <= 1e-12 * scale);
            prop_assert!((y - y2).abs() <= 1e-12 * scale);
            prop_assert!(z == z2);
        }

        #[test]
        fn wrap_angle_stays_in_range(d in -20.0f64..20.0) {
            let w = wrap_angle(d);
            prop_assert!(w > -PI && w <= PI);
            // Same angle modulo 2 pi.
            prop_assert!(((d - w) / TAU - ((d - w) / TAU).round()).abs() < 1e-9);
        }
    }
}
