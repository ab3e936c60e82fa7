//! Problem instances, annealing schedules, and the construction of layered
//! classical replica systems from qubit-level Ising problems.
//!
//! A quantum Ising problem over `N` sites is approximated by `K`
//! ferromagnetically ring-coupled classical copies (layers). The effective
//! couplings of one layered system at annealing progress `s` are
//!
//! ```text
//! J_ij^eff = (s * beta / K) * J_ij
//! h_i^eff  = (s * beta / K) * h_i
//! J_perp   = 0.5 * ln(coth(beta * gamma / K))
//! ```
//!
//! and its energy is
//!
//! ```text
//! E = - sum_k sum_(i,j) J_ij^eff s_i^k s_j^k
//!     - sum_k sum_i h_i^eff s_i^k
//!     - J_perp * sum_k sum_i s_i^k s_i^(k+1 mod K)
//! ```
//!
//! The inter-layer sum runs over all `K` directed ring bonds, so for `K = 2`
//! the same layer pair is counted twice.

use std::fmt::Write as _;

use thiserror::Error;

use crate::rng::RngState;

/// Floor for the transverse field so schedules never reach an exactly-zero
/// gamma, which would make the layer coupling undefined.
pub const GAMMA_FLOOR: f64 = 1e-6;

/// Canonical layer count used by every built-in problem size.
pub const CANONICAL_LAYERS: usize = 128;

/// Built-in problem sizes: (qubits, simulation points).
pub const PRESET_POINTS: [(u64, u64); 7] = [
    (8, 27),
    (16, 34),
    (32, 37),
    (48, 57),
    (72, 71),
    (96, 111),
    (128, 129),
];

/// Simulation-point count for a preset qubit count, if one exists.
pub fn preset_points(qubits: u64) -> Option<u64> {
    PRESET_POINTS
        .iter()
        .find(|(q, _)| *q == qubits)
        .map(|(_, p)| *p)
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("coupling ({i}, {j}) out of range for {qubits} qubits")]
    SiteOutOfRange { i: usize, j: usize, qubits: usize },
    #[error("duplicate coupling ({i}, {j})")]
    DuplicateCoupling { i: usize, j: usize },
    #[error("coupling sites must satisfy i < j (got ({i}, {j}))")]
    UnorderedCoupling { i: usize, j: usize },
    #[error("instance must have at least one qubit")]
    EmptyInstance,
    #[error("coupling density must lie in (0, 1] (got {0})")]
    BadDensity(f64),
    #[error("layer count must be at least 2 (got {0})")]
    TooFewLayers(usize),
    #[error("beta * gamma / layers must be positive (got {0})")]
    PerpCouplingDomain(f64),
    #[error("variable count {qubits} x {layers} x {points} overflows")]
    CountOverflow {
        qubits: u64,
        layers: u64,
        points: u64,
    },
    #[error("schedule needs at least one point")]
    EmptySchedule,
    #[error(transparent)]
    Rng(#[from] crate::rng::RngError),
}

/// One pairwise interaction `J_ij` with `i < j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coupling {
    pub i: usize,
    pub j: usize,
    pub value: f64,
}

/// A qubit-level Ising problem: local fields plus pairwise couplings.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    id: String,
    qubit_count: usize,
    fields: Vec<f64>,
    couplings: Vec<Coupling>,
}

impl ProblemInstance {
    pub fn new(
        id: impl Into<String>,
        qubit_count: usize,
        fields: Vec<f64>,
        couplings: Vec<Coupling>,
    ) -> Result<Self, ModelError> {
        if qubit_count == 0 {
            return Err(ModelError::EmptyInstance);
        }
        assert_eq!(fields.len(), qubit_count, "one field per site");
        let mut seen = std::collections::HashSet::new();
        for c in &couplings {
            if c.i >= c.j {
                return Err(ModelError::UnorderedCoupling { i: c.i, j: c.j });
            }
            if c.j >= qubit_count {
                return Err(ModelError::SiteOutOfRange {
                    i: c.i,
                    j: c.j,
                    qubits: qubit_count,
                });
            }
            if !seen.insert((c.i, c.j)) {
                return Err(ModelError::DuplicateCoupling { i: c.i, j: c.j });
            }
        }
        Ok(Self {
            id: id.into(),
            qubit_count,
            fields,
            couplings,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn qubit_count(&self) -> usize {
        self.qubit_count
    }

    pub fn fields(&self) -> &[f64] {
        &self.fields
    }

    pub fn couplings(&self) -> &[Coupling] {
        &self.couplings
    }

    /// Parses the line-oriented instance format.
    ///
    /// `#` starts a comment. The first non-comment line must be `qubits N`;
    /// after that `h i value` sets a local field (default 0) and `J i j value`
    /// adds a coupling with `i < j`.
    pub fn parse(text: &str) -> Result<Self, ModelError> {
        let mut qubits: Option<usize> = None;
        let mut fields: Vec<f64> = Vec::new();
        let mut couplings: Vec<Coupling> = Vec::new();

        for (lineno, raw) in text.lines().enumerate() {
            let line = lineno + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let mut tokens = content.split_whitespace();
            let keyword = tokens.next().expect("non-empty line has a token");
            let parse_err = |message: String| ModelError::Parse { line, message };

            match keyword {
                "qubits" => {
                    if qubits.is_some() {
                        return Err(parse_err("duplicate qubits line".into()));
                    }
                    let n: usize = tokens
                        .next()
                        .ok_or_else(|| parse_err("qubits needs a count".into()))?
                        .parse()
                        .map_err(|e| parse_err(format!("bad qubit count: {e}")))?;
                    if n == 0 {
                        return Err(ModelError::EmptyInstance);
                    }
                    qubits = Some(n);
                    fields = vec![0.0; n];
                }
                "h" => {
                    let n = qubits.ok_or_else(|| parse_err("qubits must come before h".into()))?;
                    let i: usize = tokens
                        .next()
                        .ok_or_else(|| parse_err("h needs a site index".into()))?
                        .parse()
                        .map_err(|e| parse_err(format!("bad site index: {e}")))?;
                    let value: f64 = tokens
                        .next()
                        .ok_or_else(|| parse_err("h needs a value".into()))?
                        .parse()
                        .map_err(|e| parse_err(format!("bad field value: {e}")))?;
                    if i >= n {
                        return Err(parse_err(format!("site {i} out of range for {n} qubits")));
                    }
                    fields[i] = value;
                }
                "J" => {
                    if qubits.is_none() {
                        return Err(parse_err("qubits must come before J".into()));
                    }
                    let i: usize = tokens
                        .next()
                        .ok_or_else(|| parse_err("J needs two site indices".into()))?
                        .parse()
                        .map_err(|e| parse_err(format!("bad site index: {e}")))?;
                    let j: usize = tokens
                        .next()
                        .ok_or_else(|| parse_err("J needs two site indices".into()))?
                        .parse()
                        .map_err(|e| parse_err(format!("bad site index: {e}")))?;
                    let value: f64 = tokens
                        .next()
                        .ok_or_else(|| parse_err("J needs a value".into()))?
                        .parse()
                        .map_err(|e| parse_err(format!("bad coupling value: {e}")))?;
                    couplings.push(Coupling { i, j, value });
                }
                other => {
                    return Err(parse_err(format!("unknown keyword `{other}`")));
                }
            }
            if let Some(extra) = tokens.next() {
                return Err(ModelError::Parse {
                    line,
                    message: format!("trailing token `{extra}`"),
                });
            }
        }

        let qubit_count = qubits.ok_or(ModelError::Parse {
            line: text.lines().count() + 1,
            message: "missing qubits line".into(),
        })?;
        Self::new("parsed", qubit_count, fields, couplings)
    }

    /// Renders the instance back into the text format accepted by
    /// [`ProblemInstance::parse`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "qubits {}", self.qubit_count);
        for (i, h) in self.fields.iter().enumerate() {
            if *h != 0.0 {
                let _ = writeln!(out, "h {i} {h}");
            }
        }
        for c in &self.couplings {
            let _ = writeln!(out, "J {} {} {}", c.i, c.j, c.value);
        }
        out
    }

    /// Generates a random instance, deterministically for fixed arguments.
    ///
    /// Unordered pairs are visited in lexicographic order; per pair one
    /// uniform decides inclusion (`u < density`), and each included pair
    /// draws one more uniform for its sign, `+1` below one half and `-1`
    /// otherwise. All fields are zero. Draws come from a splitmix64 stream
    /// seeded with `coupling_seed`, mapped to `[0, 1)` via the top 53 bits.
    pub fn generate(qubits: usize, coupling_seed: u64, density: f64) -> Result<Self, ModelError> {
        if qubits == 0 {
            return Err(ModelError::EmptyInstance);
        }
        if density.is_nan() || density <= 0.0 || density > 1.0 {
            return Err(ModelError::BadDensity(density));
        }
        let mut stream = SplitMix64::new(coupling_seed);
        let mut couplings = Vec::new();
        for i in 0..qubits {
            for j in (i + 1)..qubits {
                if stream.next_unit() < density {
                    let value = if stream.next_unit() < 0.5 { 1.0 } else { -1.0 };
                    couplings.push(Coupling { i, j, value });
                }
            }
        }
        Self::new(
            format!("gen-q{qubits}-s{coupling_seed}"),
            qubits,
            vec![0.0; qubits],
            couplings,
        )
    }
}

/// One parameter setting along the adiabatic evolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationPoint {
    pub index: usize,
    /// Annealing progress in `[0, 1]`.
    pub s: f64,
    /// Transverse-field strength, nonnegative.
    pub gamma: f64,
    /// Inverse temperature, positive.
    pub beta: f64,
}

/// Ordered simulation points with contiguous indices and increasing `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnealSchedule {
    points: Vec<SimulationPoint>,
}

impl AnnealSchedule {
    pub fn points(&self) -> &[SimulationPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Builds a linear schedule: `s_p = p/(P-1)`, `gamma_p = gamma0*(1-s_p)`
/// floored at [`GAMMA_FLOOR`], constant `beta`. A single-point schedule sits
/// at `s = 0`.
pub fn build_schedule(
    point_count: usize,
    gamma0: f64,
    beta: f64,
) -> Result<AnnealSchedule, ModelError> {
    if point_count == 0 {
        return Err(ModelError::EmptySchedule);
    }
    let points = (0..point_count)
        .map(|p| {
            let s = if point_count > 1 {
                p as f64 / (point_count - 1) as f64
            } else {
                0.0
            };
            SimulationPoint {
                index: p,
                s,
                gamma: (gamma0 * (1.0 - s)).max(GAMMA_FLOOR),
                beta,
            }
        })
        .collect();
    Ok(AnnealSchedule { points })
}

/// One Trotter-decomposed classical replica system at one simulation point.
#[derive(Debug, Clone, PartialEq)]
pub struct LayeredSystem {
    /// Number of replica layers `K`.
    pub layers: usize,
    /// Sites per layer `N`.
    pub sites: usize,
    /// `K x N` spins in `{-1, +1}`, laid out layer-major: `(k, i)` at `k*N + i`.
    pub spins: Vec<i8>,
    /// Effective intra-layer couplings, shared by every layer.
    pub intra_couplings: Vec<Coupling>,
    /// Effective per-site fields, shared by every layer.
    pub intra_fields: Vec<f64>,
    /// Inter-layer same-site ring coupling, always positive.
    pub perp_coupling: f64,
}

impl LayeredSystem {
    pub fn spin(&self, layer: usize, site: usize) -> i8 {
        self.spins[layer * self.sites + site]
    }

    pub fn variable_count(&self) -> usize {
        self.layers * self.sites
    }
}

/// Builds the layered classical system for `instance` at `point`, drawing the
/// initial spin configuration from RNG lane `(chain, thread)`.
pub fn trotterize(
    instance: &ProblemInstance,
    point: &SimulationPoint,
    layers: usize,
    rng: &mut RngState,
    chain: usize,
    thread: usize,
) -> Result<LayeredSystem, ModelError> {
    if layers < 2 {
        return Err(ModelError::TooFewLayers(layers));
    }
    let x = point.beta * point.gamma / layers as f64;
    if x <= 0.0 || x.is_nan() {
        return Err(ModelError::PerpCouplingDomain(x));
    }
    let scale = point.s * point.beta / layers as f64;
    let intra_couplings = instance
        .couplings()
        .iter()
        .map(|c| Coupling {
            i: c.i,
            j: c.j,
            value: scale * c.value,
        })
        .collect();
    let intra_fields = instance.fields().iter().map(|h| scale * h).collect();
    // ln(coth x) written via ln1p for accuracy in both tails; clamped to the
    // smallest positive double where exp(-2x) underflows so the ring stays
    // ferromagnetic for all finite inputs.
    let e = (-2.0 * x).exp();
    let perp_coupling = (0.5 * (e.ln_1p() - (-e).ln_1p())).max(f64::MIN_POSITIVE);

    let n = instance.qubit_count();
    let mut spins = vec![0i8; layers * n];
    for spin in spins.iter_mut() {
        *spin = if rng.next_unit(chain, thread)? < 0.5 {
            1
        } else {
            -1
        };
    }

    Ok(LayeredSystem {
        layers,
        sites: n,
        spins,
        intra_couplings,
        intra_fields,
        perp_coupling,
    })
}

/// Total classical variable count `qubits * layers * points`, with overflow
/// reported instead of wrapped.
pub fn variable_count(qubits: u64, layers: u64, points: u64) -> Result<u64, ModelError> {
    qubits
        .checked_mul(layers)
        .and_then(|v| v.checked_mul(points))
        .ok_or(ModelError::CountOverflow {
            qubits,
            layers,
            points,
        })
}

/// Recomputes the full classical energy of a layered system from scratch.
pub fn total_energy(system: &LayeredSystem) -> f64 {
    let k_count = system.layers;
    let n = system.sites;
    let mut energy = 0.0;
    for k in 0..k_count {
        let layer = &system.spins[k * n..(k + 1) * n];
        for c in &system.intra_couplings {
            energy -= c.value * f64::from(layer[c.i]) * f64::from(layer[c.j]);
        }
        for (i, h) in system.intra_fields.iter().enumerate() {
            energy -= h * f64::from(layer[i]);
        }
        let up = &system.spins[((k + 1) % k_count) * n..((k + 1) % k_count + 1) * n];
        for i in 0..n {
            energy -= system.perp_coupling * f64::from(layer[i]) * f64::from(up[i]);
        }
    }
    energy
}

/// The documented splitmix64 stream behind [`ProblemInstance::generate`].
struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    fn next_unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }
}
