//! Bipole network instances on a square region.
//!
//! Each link is a transmitter with its receiver at distance `R` in a random direction.
//! Because `R` is small compared with inter-link distances, a link is collapsed to the
//! transmitter position for every distance computation; the receiver angle is kept only
//! so that an instance can be exported and rendered.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Raw physical parameters, before validation.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<T> {
    pub side_length: T,
    /// Links per unit area.
    pub density: T,
    /// Transmitter-receiver distance `R`.
    pub link_distance: T,
    pub path_loss_alpha: T,
    pub sir_threshold_db: T,
    /// Close-in radius `R_I`: interference from farther links is neglected by the scheduler.
    pub close_in_radius: T,
    pub seed: u64,
}

impl<T: Scalar> Default for NetworkParams<T> {
    /// The evaluation settings: 13 x 13 square, density 0.1, `R = 0.25`, `alpha = 2.5`,
    /// 17 dB threshold, `R_I = 4`.
    fn default() -> Self {
        Self {
            side_length: T::lit(13.0),
            density: T::lit(0.1),
            link_distance: T::lit(0.25),
            path_loss_alpha: T::lit(2.5),
            sir_threshold_db: T::lit(17.0),
            close_in_radius: T::lit(4.0),
            seed: 1,
        }
    }
}

/// Validated network parameters. The SIR threshold is converted to linear scale once here.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig<T> {
    params: NetworkParams<T>,
    sir_threshold_linear: T,
}

impl<T: Scalar> NetworkConfig<T> {
    pub fn new(params: NetworkParams<T>) -> Result<Self> {
        let p = &params;
        let bad = |what: &str| Err(Error::InvalidConfig(what.to_string()));
        if !(p.side_length > T::zero() && p.side_length.is_finite()) {
            return bad("side_length must be positive and finite");
        }
        if !(p.density > T::zero() && p.density.is_finite()) {
            return bad("density must be positive and finite");
        }
        if !(p.link_distance > T::zero() && p.link_distance.is_finite()) {
            return bad("link_distance must be positive and finite");
        }
        if !(p.path_loss_alpha > T::lit(2.0) && p.path_loss_alpha.is_finite()) {
            return bad("path_loss_alpha must exceed 2");
        }
        let linear = T::lit(10.0).powf(p.sir_threshold_db / T::lit(10.0));
        if !(linear > T::zero() && linear.is_finite()) {
            return bad("sir threshold must map to a positive finite linear value");
        }
        if !(p.close_in_radius > p.link_distance && p.close_in_radius.is_finite()) {
            return bad("close_in_radius must exceed link_distance");
        }
        Ok(Self { params, sir_threshold_linear: linear })
    }

    pub fn params(&self) -> &NetworkParams<T> {
        &self.params
    }

    pub fn side_length(&self) -> T {
        self.params.side_length
    }

    pub fn density(&self) -> T {
        self.params.density
    }

    pub fn link_distance(&self) -> T {
        self.params.link_distance
    }

    pub fn path_loss_alpha(&self) -> T {
        self.params.path_loss_alpha
    }

    pub fn sir_threshold_db(&self) -> T {
        self.params.sir_threshold_db
    }

    pub fn sir_threshold_linear(&self) -> T {
        self.sir_threshold_linear
    }

    pub fn close_in_radius(&self) -> T {
        self.params.close_in_radius
    }

    pub fn seed(&self) -> u64 {
        self.params.seed
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.params.seed = seed;
        self
    }

    /// Poisson mean of the link count.
    pub fn expected_links(&self) -> T {
        self.params.density * self.params.side_length * self.params.side_length
    }
}

impl<T: Scalar> Default for NetworkConfig<T> {
    fn default() -> Self {
        Self::new(NetworkParams::default()).expect("default parameters are valid")
    }
}

/// Success probability of a link against a single Rayleigh-faded interferer at distance `r`:
/// `f(r) = 1 / (1 + (R/r)^alpha * T)`.
pub fn gain_factor<T: Scalar>(r: T, config: &NetworkConfig<T>) -> Result<T> {
    if r.is_nan() || r <= T::zero() {
        return Err(Error::NonPositiveDistance(r.as_f64()));
    }
    Ok(gain_factor_unchecked(r, config))
}

#[inline]
fn gain_factor_unchecked<T: Scalar>(r: T, config: &NetworkConfig<T>) -> T {
    let ratio = (config.link_distance() / r).powf(config.path_loss_alpha());
    T::one() / (T::one() + ratio * config.sir_threshold_linear())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point<T> {
    pub x: T,
    pub y: T,
}

impl<T: Scalar> Point<T> {
    pub fn distance(&self, other: &Self) -> T {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// An immutable network instance with every geometry-derived quantity precomputed.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology<T> {
    config: NetworkConfig<T>,
    positions: Vec<Point<T>>,
    rx_angles: Vec<T>,
    distances: Vec<T>,
    gains: Vec<T>,
    adjacency: Vec<bool>,
    neighbours: Vec<Vec<usize>>,
    neighbour_gains: Vec<Vec<T>>,
}

impl<T: Scalar> Topology<T> {
    /// Builds a topology from transmitter positions and receiver directions (radians).
    pub fn from_positions(config: NetworkConfig<T>, positions: Vec<Point<T>>, rx_angles: Vec<T>) -> Result<Self> {
        if positions.len() != rx_angles.len() {
            return Err(Error::InvalidConfig(format!(
                "{} positions but {} receiver angles",
                positions.len(),
                rx_angles.len()
            )));
        }
        if positions.iter().any(|p| !(p.x.is_finite() && p.y.is_finite())) {
            return Err(Error::InvalidConfig("non-finite link coordinate".into()));
        }
        let n = positions.len();
        let mut distances = vec![T::zero(); n * n];
        let mut gains = vec![T::zero(); n * n];
        let mut adjacency = vec![false; n * n];
        let mut neighbours = vec![Vec::new(); n];
        let mut neighbour_gains = vec![Vec::new(); n];
        let radius = config.close_in_radius();
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let r = positions[i].distance(&positions[j]);
                if r.is_nan() || r <= T::zero() {
                    return Err(Error::InvalidConfig(format!("links {i} and {j} coincide")));
                }
                let f = gain_factor_unchecked(r, &config);
                distances[i * n + j] = r;
                gains[i * n + j] = f;
                if r <= radius {
                    adjacency[i * n + j] = true;
                    neighbours[i].push(j);
                    neighbour_gains[i].push(f);
                }
            }
        }
        Ok(Self { config, positions, rx_angles, distances, gains, adjacency, neighbours, neighbour_gains })
    }

    /// Places exactly `n_links` transmitters uniformly on the configured square.
    pub fn uniform<R: Rng + ?Sized>(config: NetworkConfig<T>, n_links: usize, rng: &mut R) -> Self {
        let side = config.side_length();
        let mut positions = Vec::with_capacity(n_links);
        let mut angles = Vec::with_capacity(n_links);
        for _ in 0..n_links {
            let x = T::sample_open01(rng) * side;
            let y = T::sample_open01(rng) * side;
            positions.push(Point { x, y });
            angles.push(T::sample_open01(rng) * T::TAU());
        }
        // Coincident points have probability zero under continuous sampling.
        Self::from_positions(config, positions, angles).expect("continuous samples are distinct")
    }

    pub fn config(&self) -> &NetworkConfig<T> {
        &self.config
    }

    #[inline]
    pub fn n_links(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Point<T>] {
        &self.positions
    }

    pub fn rx_angles(&self) -> &[T] {
        &self.rx_angles
    }

    /// Receiver location of link `i`, for rendering only.
    pub fn receiver(&self, i: usize) -> Point<T> {
        let p = self.positions[i];
        let r = self.config.link_distance();
        let a = self.rx_angles[i];
        Point { x: p.x + r * a.cos(), y: p.y + r * a.sin() }
    }

    #[inline]
    pub fn distance(&self, i: usize, j: usize) -> T {
        self.distances[i * self.n_links() + j]
    }

    /// `f(r_ij)` for any pair `i != j`.
    #[inline]
    pub fn gain(&self, i: usize, j: usize) -> T {
        self.gains[i * self.n_links() + j]
    }

    #[inline]
    pub fn are_neighbours(&self, i: usize, j: usize) -> bool {
        self.adjacency[i * self.n_links() + j]
    }

    /// `N_i`, sorted ascending.
    #[inline]
    pub fn neighbours(&self, i: usize) -> &[usize] {
        &self.neighbours[i]
    }

    /// `f_ij` for `j` in `N_i`, aligned with [`Topology::neighbours`].
    #[inline]
    pub fn neighbour_gains(&self, i: usize) -> &[T] {
        &self.neighbour_gains[i]
    }

    pub fn check_link(&self, i: usize) -> Result<()> {
        if i < self.n_links() {
            Ok(())
        } else {
            Err(Error::UnknownLink { link: i, n_links: self.n_links() })
        }
    }

    /// Stable 64-bit FNV-1a digest of the exported form, used to tag runs.
    pub fn fingerprint(&self) -> u64 {
        let mut buf = Vec::new();
        self.export(&mut buf).expect("writing to memory");
        buf.iter().fold(0xcbf2_9ce4_8422_2325_u64, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
    }

    /// Writes the instance: a `#` header, `key = value` config lines, then one
    /// `id x y rx_angle` line per link. Derived quantities are not written.
    pub fn export<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let p = self.config.params();
        writeln!(w, "# spatial-csma topology v1")?;
        writeln!(w, "side_length = {}", p.side_length)?;
        writeln!(w, "density = {}", p.density)?;
        writeln!(w, "link_distance = {}", p.link_distance)?;
        writeln!(w, "path_loss_alpha = {}", p.path_loss_alpha)?;
        writeln!(w, "sir_threshold_db = {}", p.sir_threshold_db)?;
        writeln!(w, "close_in_radius = {}", p.close_in_radius)?;
        writeln!(w, "seed = {}", p.seed)?;
        writeln!(w, "links = {}", self.n_links())?;
        writeln!(w, "# id x y rx_angle")?;
        for (i, (pos, a)) in self.positions.iter().zip(&self.rx_angles).enumerate() {
            writeln!(w, "{i} {} {} {}", pos.x, pos.y, a)?;
        }
        Ok(())
    }

    pub fn export_string(&self) -> String {
        let mut buf = Vec::new();
        self.export(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("export is ascii")
    }

    /// Reads the format written by [`Topology::export`] and recomputes derived data.
    pub fn import<R: BufRead>(reader: R) -> Result<Self> {
        let mut params = NetworkParams::<T>::default();
        let mut seen = [false; 7];
        let mut declared: Option<usize> = None;
        let mut positions = Vec::new();
        let mut angles = Vec::new();
        for (k, line) in reader.lines().enumerate() {
            let lineno = k + 1;
            let perr = |message: String| Error::Parse { line: lineno, message };
            let line = line.map_err(|e| perr(e.to_string()))?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some((key, value)) = line.split_once('=') {
                let (key, value) = (key.trim(), value.trim());
                let real = |v: &str| v.parse::<T>().map_err(|_| perr(format!("bad number {v:?}")));
                match key {
                    "side_length" => (params.side_length, seen[0]) = (real(value)?, true),
                    "density" => (params.density, seen[1]) = (real(value)?, true),
                    "link_distance" => (params.link_distance, seen[2]) = (real(value)?, true),
                    "path_loss_alpha" => (params.path_loss_alpha, seen[3]) = (real(value)?, true),
                    "sir_threshold_db" => (params.sir_threshold_db, seen[4]) = (real(value)?, true),
                    "close_in_radius" => (params.close_in_radius, seen[5]) = (real(value)?, true),
                    "seed" => {
                        params.seed = value.parse().map_err(|_| perr(format!("bad seed {value:?}")))?;
                        seen[6] = true;
                    }
                    "links" => declared = Some(value.parse().map_err(|_| perr(format!("bad count {value:?}")))?),
                    other => return Err(perr(format!("unknown key {other:?}"))),
                }
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(perr(format!("expected `id x y rx_angle`, got {line:?}")));
            }
            let id: usize = fields[0].parse().map_err(|_| perr(format!("bad id {:?}", fields[0])))?;
            if id != positions.len() {
                return Err(perr(format!("link ids must be consecutive from 0, got {id}")));
            }
            let num = |s: &str| s.parse::<T>().map_err(|_| perr(format!("bad number {s:?}")));
            positions.push(Point { x: num(fields[1])?, y: num(fields[2])? });
            angles.push(num(fields[3])?);
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            let names = [
                "side_length",
                "density",
                "link_distance",
                "path_loss_alpha",
                "sir_threshold_db",
                "close_in_radius",
                "seed",
            ];
            return Err(Error::Parse { line: 0, message: format!("missing key {}", names[missing]) });
        }
        if let Some(n) = declared {
            if n != positions.len() {
                return Err(Error::Parse {
                    line: 0,
                    message: format!("header declares {n} links, found {}", positions.len()),
                });
            }
        }
        Self::from_positions(NetworkConfig::new(params)?, positions, angles)
    }

    /// Human readable neighbour table.
    pub fn describe(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "links: {}", self.n_links());
        let _ = writeln!(s, "conflict edges: {}", build_conflict_graph(self).len());
        for i in 0..self.n_links() {
            let _ = writeln!(s, "{i}: N_i = {:?}", self.neighbours(i));
        }
        s
    }
}

/// Draws a Poisson(density * side^2) number of links with uniform transmitter positions and
/// uniform receiver directions. An empty topology is a legal outcome.
pub fn generate_topology<T: Scalar, R: Rng + ?Sized>(config: &NetworkConfig<T>, rng: &mut R) -> Topology<T> {
    let mean = config.expected_links().as_f64();
    let count = Poisson::new(mean).expect("positive finite mean").sample(rng) as usize;
    Topology::uniform(config.clone(), count, rng)
}

/// Conflict graph of the baseline model: `{i, j}` is an edge iff `r_ij <= R_I`.
/// Edges are returned as `(i, j)` with `i < j`, sorted.
pub fn build_conflict_graph<T: Scalar>(topology: &Topology<T>) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for i in 0..topology.n_links() {
        for &j in topology.neighbours(i) {
            if i < j {
                edges.push((i, j));
            }
        }
    }
    edges
}

/// Links whose status can influence the update probability of `i`:
/// `N_i` together with the neighbours of every `k` in `N_i`, excluding `i` itself.
/// Returned sorted.
pub fn two_hop_closure<T: Scalar>(topology: &Topology<T>, i: usize) -> Vec<usize> {
    let n = topology.n_links();
    let mut mark = vec![false; n];
    for &k in topology.neighbours(i) {
        mark[k] = true;
        for &j in topology.neighbours(k) {
            mark[j] = true;
        }
    }
    mark[i] = false;
    (0..n).filter(|&j| mark[j]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> NetworkConfig<f64> {
        NetworkConfig::default()
    }

    fn line(xs: &[f64]) -> Topology<f64> {
        let pos = xs.iter().map(|&x| Point { x, y: 0.0 }).collect();
        Topology::from_positions(cfg(), pos, vec![0.0; xs.len()]).unwrap()
    }

    #[test]
    fn config_rejects_bad_parameters() {
        let d = NetworkParams::<f64>::default;
        assert!(NetworkConfig::new(NetworkParams { density: 0.0, ..d() }).is_err());
        assert!(NetworkConfig::new(NetworkParams { path_loss_alpha: 2.0, ..d() }).is_err());
        assert!(NetworkConfig::new(NetworkParams { close_in_radius: 0.25, ..d() }).is_err());
        assert!(NetworkConfig::new(NetworkParams { side_length: -1.0, ..d() }).is_err());
        assert!(NetworkConfig::new(NetworkParams { side_length: f64::NAN, ..d() }).is_err());
    }

    #[test]
    fn threshold_converted_once() {
        let c = cfg();
        assert!((c.sir_threshold_linear() - 10f64.powf(1.7)).abs() < 1e-12);
        assert!((c.expected_links() - 16.9).abs() < 1e-12);
    }

    #[test]
    fn gain_factor_reference_values() {
        let c = cfg();
        // 1 / (1 + 0.25^2.5 * 10^1.7), evaluated by hand: 0.25^2.5 = 1/32.
        let t = 10f64.powf(1.7);
        let expected = 1.0 / (1.0 + t / 32.0);
        let f = gain_factor(1.0, &c).unwrap();
        assert!((f - expected).abs() < 1e-15);
        assert!((f - 0.3897).abs() < 5e-5);
        assert!((gain_factor(0.25, &c).unwrap() - 1.0 / (1.0 + t)).abs() < 1e-15);
        assert!((1.0 - gain_factor(0.25e6, &c).unwrap()) < 1e-12);
        assert!(gain_factor(0.0, &c).is_err());
        assert!(gain_factor(-1.0, &c).is_err());
    }

    #[test]
    fn gain_factor_decreases_with_threshold() {
        let lo = cfg();
        let hi = NetworkConfig::new(NetworkParams { sir_threshold_db: 20.0, ..Default::default() }).unwrap();
        for r in [0.3, 1.0, 3.0, 10.0] {
            assert!(gain_factor(r, &hi).unwrap() < gain_factor(r, &lo).unwrap());
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_topology(&cfg(), &mut ChaCha8Rng::seed_from_u64(5));
        let b = generate_topology(&cfg(), &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
    }

    #[test]
    fn poisson_count_has_expected_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let trials = 4000;
        let total: usize = (0..trials).map(|_| generate_topology(&cfg(), &mut rng).n_links()).sum();
        let mean = total as f64 / trials as f64;
        // sd of the mean = sqrt(16.9 / 4000) ~ 0.065
        assert!((mean - 16.9).abs() < 0.26, "mean {mean}");
    }

    #[test]
    fn positions_inside_square() {
        let t = generate_topology(&cfg(), &mut ChaCha8Rng::seed_from_u64(3));
        for p in t.positions() {
            assert!(p.x > 0.0 && p.x < 13.0 && p.y > 0.0 && p.y < 13.0);
        }
        for i in 0..t.n_links() {
            let rx = t.receiver(i);
            assert!((rx.distance(&t.positions()[i]) - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn conflict_edges_threshold_is_closed() {
        let t = line(&[0.0, 4.0, 8.0 + 1e-9]);
        assert_eq!(build_conflict_graph(&t), vec![(0, 1)]);
        let t = line(&[0.0, 2.0]);
        assert_eq!(build_conflict_graph(&t), vec![(0, 1)]);
        let t = line(&[0.0, 4.0 + 1e-9]);
        assert!(build_conflict_graph(&t).is_empty());
    }

    #[test]
    fn two_hop_closure_small_cases() {
        let isolated = line(&[0.0, 10.0]);
        assert!(two_hop_closure(&isolated, 0).is_empty());
        let chain = line(&[0.0, 3.0, 6.0]);
        assert_eq!(two_hop_closure(&chain, 0), vec![1, 2]);
        assert_eq!(two_hop_closure(&chain, 1), vec![0, 2]);
        let clique = line(&[0.0, 1.0, 2.0]);
        assert_eq!(two_hop_closure(&clique, 1), vec![0, 2]);
    }

    #[test]
    fn rejects_coincident_links() {
        let p = vec![Point { x: 1.0, y: 1.0 }, Point { x: 1.0, y: 1.0 }];
        assert!(Topology::from_positions(cfg(), p, vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn import_rejects_garbage() {
        let bad = "side_length = 13\nbogus = 1\n";
        assert!(Topology::<f64>::import(bad.as_bytes()).is_err());
        let missing = "side_length = 13\n0 1 1 0\n";
        assert!(Topology::<f64>::import(missing.as_bytes()).is_err());
    }

    #[test]
    fn export_import_preserves_instance() {
        let t = generate_topology(&cfg(), &mut ChaCha8Rng::seed_from_u64(9));
        let text = t.export_string();
        let back = Topology::<f64>::import(text.as_bytes()).unwrap();
        assert_eq!(t, back);
        assert_eq!(t.fingerprint(), back.fingerprint());
    }
}
