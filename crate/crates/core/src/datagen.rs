//! Training data: exact-solution grids, initial/boundary subsets, Latin
//! hypercube collocation points and measurement noise.

use std::fs;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exact_yo::{eval_general_rw, RwParams};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid domain: {0}")]
    Domain(String),
    #[error("requested {requested} initial/boundary points but only {available} exist")]
    TooManyPoints { requested: usize, available: usize },
    #[error("noise level must be non-negative, got {0}")]
    Noise(f64),
    #[error("malformed training-set file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub x_lo: f64,
    pub x_hi: f64,
    pub t_lo: f64,
    pub t_hi: f64,
    pub nx: usize,
    pub nt: usize,
}

impl Domain {
    pub fn new(x: (f64, f64), t: (f64, f64), nx: usize, nt: usize) -> Result<Self, DataError> {
        let d = Self {
            x_lo: x.0,
            x_hi: x.1,
            t_lo: t.0,
            t_hi: t.1,
            nx,
            nt,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if !(self.x_lo < self.x_hi) || !(self.t_lo < self.t_hi) {
            return Err(DataError::Domain(format!(
                "empty box [{}, {}] x [{}, {}]",
                self.x_lo, self.x_hi, self.t_lo, self.t_hi
            )));
        }
        if self.nx < 2 || self.nt < 2 {
            return Err(DataError::Domain(format!(
                "grid needs at least 2 nodes per axis, got {} x {}",
                self.nx, self.nt
            )));
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        (self.x_hi - self.x_lo) / (self.nx - 1) as f64
    }

    pub fn dt(&self) -> f64 {
        (self.t_hi - self.t_lo) / (self.nt - 1) as f64
    }

    /// Grid abscissae; the last node is pinned to `x_hi`.
    pub fn xs(&self) -> Vec<f64> {
        axis(self.x_lo, self.x_hi, self.nx)
    }

    pub fn ts(&self) -> Vec<f64> {
        axis(self.t_lo, self.t_hi, self.nt)
    }

    pub fn contains(&self, x: f64, t: f64) -> bool {
        (self.x_lo..=self.x_hi).contains(&x) && (self.t_lo..=self.t_hi).contains(&t)
    }
}

fn axis(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let h = (hi - lo) / (n - 1) as f64;
    (0..n)
        .map(|i| if i + 1 == n { hi } else { lo + i as f64 * h })
        .collect()
}

/// A labelled sample `(x, t, u, v, L)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IbPoint {
    pub x: f64,
    pub t: f64,
    pub u: f64,
    pub v: f64,
    pub l: f64,
}

/// Exact field on a uniform grid, stored time-major (`index = it * nx + ix`).
#[derive(Debug, Clone)]
pub struct GridDataset {
    pub domain: Domain,
    pub xs: Vec<f64>,
    pub ts: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub l: Vec<f64>,
}

impl GridDataset {
    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn index(&self, ix: usize, it: usize) -> usize {
        it * self.domain.nx + ix
    }

    pub fn point(&self, ix: usize, it: usize) -> IbPoint {
        let k = self.index(ix, it);
        IbPoint {
            x: self.xs[ix],
            t: self.ts[it],
            u: self.u[k],
            v: self.v[k],
            l: self.l[k],
        }
    }

    /// Nodes on the initial line `t = t_lo` and the two lateral boundaries,
    /// each corner listed once.
    pub fn initial_boundary(&self) -> Vec<IbPoint> {
        let (nx, nt) = (self.domain.nx, self.domain.nt);
        let mut out = Vec::with_capacity(nx + 2 * nt - 2);
        out.extend((0..nx).map(|ix| self.point(ix, 0)));
        for it in 1..nt {
            out.push(self.point(0, it));
            out.push(self.point(nx - 1, it));
        }
        out
    }

    pub fn coordinates(&self) -> Vec<[f64; 2]> {
        let mut out = Vec::with_capacity(self.len());
        for &t in &self.ts {
            out.extend(self.xs.iter().map(|&x| [x, t]));
        }
        out
    }
}

pub fn build_grid(rw: &RwParams, dom: &Domain) -> Result<GridDataset, DataError> {
    dom.validate()?;
    let xs = dom.xs();
    let ts = dom.ts();
    let n = xs.len() * ts.len();
    let (mut u, mut v, mut l) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for &t in &ts {
        for &x in &xs {
            let s = eval_general_rw(rw, x, t);
            u.push(s.u);
            v.push(s.v);
            l.push(s.l);
        }
    }
    Ok(GridDataset {
        domain: *dom,
        xs,
        ts,
        u,
        v,
        l,
    })
}

/// Uniform sample of `n_q` points without replacement.
pub fn subsample_ib(points: &[IbPoint], n_q: usize, seed: u64) -> Result<Vec<IbPoint>, DataError> {
    if n_q > points.len() {
        return Err(DataError::TooManyPoints {
            requested: n_q,
            available: points.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(index::sample(&mut rng, points.len(), n_q)
        .into_iter()
        .map(|i| points[i])
        .collect())
}

fn lhs_axis(rng: &mut ChaCha8Rng, lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let mut strata: Vec<usize> = (0..n).collect();
    strata.shuffle(rng);
    let width = hi - lo;
    strata
        .into_iter()
        .map(|s| {
            // keep offsets off the stratum edges so rounding cannot move a
            // sample into a neighbouring stratum
            let offset: f64 = rng.gen_range(1e-9..1.0 - 1e-9);
            lo + width * (s as f64 + offset) / n as f64
        })
        .collect()
}

/// Latin hypercube sample of `n_f` points: along each axis, exactly one point
/// per equal-width stratum.
pub fn lhs_sample(dom: &Domain, n_f: usize, seed: u64) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs = lhs_axis(&mut rng, dom.x_lo, dom.x_hi, n_f);
    let ts = lhs_axis(&mut rng, dom.t_lo, dom.t_hi, n_f);
    xs.into_iter().zip(ts).map(|(x, t)| [x, t]).collect()
}

/// Stratum index of `value` among `n` equal strata of `[lo, hi]`.
pub fn stratum(value: f64, lo: f64, hi: f64, n: usize) -> usize {
    (((value - lo) / (hi - lo) * n as f64).floor() as usize).min(n - 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet {
    pub domain: Domain,
    pub ib_points: Vec<IbPoint>,
    pub collocation: Vec<[f64; 2]>,
    pub seed: u64,
    pub noise_level: f64,
}

/// Population standard deviation of the `u`, `v`, `L` columns taken together.
pub fn value_std(points: &[IbPoint]) -> f64 {
    let n = (3 * points.len()) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let values = || points.iter().flat_map(|p| [p.u, p.v, p.l]);
    let mean = values().sum::<f64>() / n;
    (values().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Adds `noise * std * N(0, 1)` to every target value; coordinates are kept.
pub fn inject_noise(ts: &TrainingSet, noise: f64, seed: u64) -> Result<TrainingSet, DataError> {
    if !(noise >= 0.0) {
        return Err(DataError::Noise(noise));
    }
    let mut out = ts.clone();
    out.noise_level = noise;
    if noise == 0.0 {
        return Ok(out);
    }
    let sigma = noise * value_std(&ts.ib_points);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in &mut out.ib_points {
        for value in [&mut p.u, &mut p.v, &mut p.l] {
            let z: f64 = rng.sample(StandardNormal);
            *value += sigma * z;
        }
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    domain: Domain,
    seed: u64,
    noise_level: f64,
    n_ib: usize,
    n_collocation: usize,
    ib_file: String,
    collocation_file: String,
}

const MANIFEST_FORMAT: &str = "yo-pinn-training-set-v1";

fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

impl TrainingSet {
    /// Writes `manifest.json`, `ib_points.csv` and `collocation.csv` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), DataError> {
        fs::create_dir_all(dir)?;
        let manifest = Manifest {
            format: MANIFEST_FORMAT.into(),
            domain: self.domain,
            seed: self.seed,
            noise_level: self.noise_level,
            n_ib: self.ib_points.len(),
            n_collocation: self.collocation.len(),
            ib_file: "ib_points.csv".into(),
            collocation_file: "collocation.csv".into(),
        };
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;

        let mut w = csv::Writer::from_path(dir.join(&manifest.ib_file))?;
        w.write_record(["x", "t", "u", "v", "L"])?;
        for p in &self.ib_points {
            w.write_record([p.x, p.t, p.u, p.v, p.l].map(fmt17))?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join(&manifest.collocation_file))?;
        w.write_record(["x", "t"])?;
        for c in &self.collocation {
            w.write_record(c.map(fmt17))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, DataError> {
        let manifest: Manifest =
            serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        if manifest.format != MANIFEST_FORMAT {
            return Err(DataError::Format(format!("format tag {:?}", manifest.format)));
        }
        let ib_points = read_rows::<5>(&dir.join(&manifest.ib_file))?
            .into_iter()
            .map(|[x, t, u, v, l]| IbPoint { x, t, u, v, l })
            .collect::<Vec<_>>();
        let collocation = read_rows::<2>(&dir.join(&manifest.collocation_file))?;
        if ib_points.len() != manifest.n_ib || collocation.len() != manifest.n_collocation {
            return Err(DataError::Format("row counts disagree with manifest".into()));
        }
        Ok(Self {
            domain: manifest.domain,
            ib_points,
            collocation,
            seed: manifest.seed,
            noise_level: manifest.noise_level,
        })
    }
}

fn read_rows<const N: usize>(path: &Path) -> Result<Vec<[f64; N]>, DataError> {
    let mut reader = csv::Reader::from_path(path)?;
    reader
        .records()
        .map(|rec| {
            let rec = rec?;
            if rec.len() != N {
                return Err(DataError::Format(format!("expected {N} columns, got {}", rec.len())));
            }
            let mut row = [0.0; N];
            for (slot, field) in row.iter_mut().zip(rec.iter()) {
                *slot = field
                    .parse()
                    .map_err(|e| DataError::Format(format!("{field:?}: {e}")))?;
            }
            Ok(row)
        })
        .collect()
}
