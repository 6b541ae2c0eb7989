//! Quasi-static multipath channels, their per-sub-channel frequency
//! responses, and maximum-ratio precoding.
//!
//! Every CIR tap is drawn CN(0, 1/L) so that frequency-domain entries have
//! unit variance. The DFT is evaluated directly from the L taps,
//! `H[k] = sum_l h[l] exp(-j 2 pi k l / N)`, without any 1/sqrt(N) factor.

use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::config::Config;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("DFT size {n} is smaller than the channel length {taps}")]
    DftTooShort { n: usize, taps: usize },
    #[error("cannot build a precoder for an all-zero channel")]
    ZeroChannel,
    #[error("dimension mismatch: channel has {channel} entries, precoder {precoder}")]
    DimensionMismatch { channel: usize, precoder: usize },
    #[error("malformed channel dump: {0}")]
    Format(String),
}

/// Channel impulse response, one row of `n_taps` taps per transmit antenna.
#[derive(Debug, Clone, PartialEq)]
pub struct Cir {
    n_tx: usize,
    n_taps: usize,
    taps: Vec<Complex64>,
}

impl Cir {
    pub fn from_rows(rows: Vec<Vec<Complex64>>) -> Self {
        let n_tx = rows.len();
        let n_taps = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == n_taps), "ragged CIR rows");
        Self {
            n_tx,
            n_taps,
            taps: rows.into_iter().flatten().collect(),
        }
    }

    pub fn n_tx(&self) -> usize {
        self.n_tx
    }

    pub fn n_taps(&self) -> usize {
        self.n_taps
    }

    pub fn tap(&self, antenna: usize, l: usize) -> Complex64 {
        self.taps[antenna * self.n_taps + l]
    }

    pub fn row(&self, antenna: usize) -> &[Complex64] {
        &self.taps[antenna * self.n_taps..(antenna + 1) * self.n_taps]
    }
}

fn cn<R: Rng + ?Sized>(rng: &mut R, std_per_dim: f64) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * std_per_dim, im * std_per_dim)
}

/// Draws an `n_tx x n_taps` CIR with i.i.d. CN(0, 1/L) taps.
pub fn generate_cir<R: Rng + ?Sized>(n_tx: usize, n_taps: usize, rng: &mut R) -> Cir {
    let s = (0.5 / n_taps as f64).sqrt();
    let taps = (0..n_tx * n_taps).map(|_| cn(rng, s)).collect();
    Cir { n_tx, n_taps, taps }
}

/// Twiddle factors `exp(-j 2 pi k l / N)` for `k < N`, `l < L`.
#[derive(Debug, Clone)]
pub struct DftTable {
    n: usize,
    n_taps: usize,
    twiddles: Vec<Complex64>,
}

impl DftTable {
    pub fn new(n: usize, n_taps: usize) -> Result<Self, ChannelError> {
        if n < n_taps {
            return Err(ChannelError::DftTooShort { n, taps: n_taps });
        }
        let mut twiddles = Vec::with_capacity(n * n_taps);
        for k in 0..n {
            for l in 0..n_taps {
                // Reduce k*l mod N first so the angle is computed exactly for
                // equivalent indices.
                let m = (k * l) % n;
                twiddles.push(Complex64::from_polar(1.0, -2.0 * PI * m as f64 / n as f64));
            }
        }
        Ok(Self {
            n,
            n_taps,
            twiddles,
        })
    }

    /// Frequency response as `N` vectors of length `n_tx`.
    pub fn apply(&self, cir: &Cir) -> Result<Vec<Vec<Complex64>>, ChannelError> {
        if cir.n_taps > self.n_taps {
            return Err(ChannelError::DftTooShort {
                n: self.n,
                taps: cir.n_taps,
            });
        }
        let mut out = vec![vec![Complex64::new(0.0, 0.0); cir.n_tx]; self.n];
        for (k, entry) in out.iter_mut().enumerate() {
            let tw = &self.twiddles[k * self.n_taps..k * self.n_taps + cir.n_taps];
            for (nu, v) in entry.iter_mut().enumerate() {
                *v = cir.row(nu).iter().zip(tw).map(|(h, w)| h * w).sum();
            }
        }
        Ok(out)
    }
}

pub fn frequency_response(cir: &Cir, n: usize) -> Result<Vec<Vec<Complex64>>, ChannelError> {
    DftTable::new(n, cir.n_taps)?.apply(cir)
}

/// Unit-norm transmit precoding vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Precoder {
    weights: Vec<Complex64>,
}

impl Precoder {
    pub fn weights(&self) -> &[Complex64] {
        &self.weights
    }
}

fn norm_sqr(h: &[Complex64]) -> f64 {
    h.iter().map(Complex64::norm_sqr).sum()
}

/// Maximum-ratio transmission: `conj(h) / ||h||`.
pub fn mrt_precoder(h: &[Complex64]) -> Result<Precoder, ChannelError> {
    let norm = norm_sqr(h).sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(ChannelError::ZeroChannel);
    }
    Ok(Precoder {
        weights: h.iter().map(|x| x.conj() / norm).collect(),
    })
}

/// `|h^T p|^2`.
pub fn effective_gain(h: &[Complex64], p: &Precoder) -> Result<f64, ChannelError> {
    if h.len() != p.weights.len() {
        return Err(ChannelError::DimensionMismatch {
            channel: h.len(),
            precoder: p.weights.len(),
        });
    }
    Ok(h.iter()
        .zip(&p.weights)
        .map(|(a, b)| a * b)
        .sum::<Complex64>()
        .norm_sqr())
}

/// One quasi-static realization of every link, per sub-channel.
///
/// `h_ae[m][k]` and `h_be[m][k]` are the links to eavesdropper `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    pub h_ab: Vec<Vec<Complex64>>,
    pub h_ba: Vec<Vec<Complex64>>,
    pub h_ae: Vec<Vec<Vec<Complex64>>>,
    pub h_be: Vec<Vec<Vec<Complex64>>>,
}

/// Effective per-sub-channel power gains of one [`ChannelSet`].
///
/// Main links use their own MRT precoder, so `ab[k] = ||h_ab[k]||^2`; the
/// eavesdropper gains are projections onto the legitimate precoder.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkGains {
    pub ab: Vec<f64>,
    pub ba: Vec<f64>,
    pub ae: Vec<Vec<f64>>,
    pub be: Vec<Vec<f64>>,
}

impl LinkGains {
    pub fn n_subchannels(&self) -> usize {
        self.ab.len()
    }

    pub fn n_eves(&self) -> usize {
        self.ae.len()
    }
}

fn projected_gains(
    main: &[Vec<Complex64>],
    eves: &[Vec<Vec<Complex64>>],
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut own = Vec::with_capacity(main.len());
    let mut leak = vec![Vec::with_capacity(main.len()); eves.len()];
    for (k, h) in main.iter().enumerate() {
        own.push(norm_sqr(h));
        match mrt_precoder(h) {
            Ok(p) => {
                for (m, eve) in eves.iter().enumerate() {
                    leak[m].push(effective_gain(&eve[k], &p).expect("antenna counts agree"));
                }
            }
            // A null sub-channel carries nothing; treat its leakage as zero.
            Err(_) => leak.iter_mut().for_each(|l| l.push(0.0)),
        }
    }
    (own, leak)
}

impl ChannelSet {
    pub fn n_subchannels(&self) -> usize {
        self.h_ab.len()
    }

    pub fn n_eves(&self) -> usize {
        self.h_ae.len()
    }

    pub fn gains(&self) -> LinkGains {
        let (ab, ae) = projected_gains(&self.h_ab, &self.h_ae);
        let (ba, be) = projected_gains(&self.h_ba, &self.h_be);
        LinkGains { ab, ba, ae, be }
    }

    /// Writes the set as CSV.
    ///
    /// The first line is `# keyassist-channels v1 n=<N> n_tx_alice=<NA>
    /// n_tx_bob=<NB> n_eves=<M>`, then a `link,eve,subchannel,antenna,re,im`
    /// header and one row per complex entry. `link` is one of `ab`, `ba`,
    /// `ae`, `be`; `eve` is empty for the legitimate links. Rows are ordered
    /// link, eve, sub-channel, antenna. Floats are written in shortest
    /// round-trip form.
    pub fn to_csv(&self) -> String {
        let n_a = self.h_ab.first().map_or(0, Vec::len);
        let n_b = self.h_ba.first().map_or(0, Vec::len);
        let mut out = format!(
            "# keyassist-channels v1 n={} n_tx_alice={} n_tx_bob={} n_eves={}\nlink,eve,subchannel,antenna,re,im\n",
            self.n_subchannels(),
            n_a,
            n_b,
            self.n_eves()
        );
        let mut dump = |link: &str, eve: Option<usize>, h: &[Vec<Complex64>]| {
            let eve = eve.map(|m| m.to_string()).unwrap_or_default();
            for (k, v) in h.iter().enumerate() {
                for (a, x) in v.iter().enumerate() {
                    let _ = writeln!(out, "{link},{eve},{k},{a},{:?},{:?}", x.re, x.im);
                }
            }
        };
        dump("ab", None, &self.h_ab);
        dump("ba", None, &self.h_ba);
        for (m, h) in self.h_ae.iter().enumerate() {
            dump("ae", Some(m), h);
        }
        for (m, h) in self.h_be.iter().enumerate() {
            dump("be", Some(m), h);
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, ChannelError> {
        let fmt = |s: &str| ChannelError::Format(s.to_string());
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| fmt("empty input"))?;
        let fields: Vec<&str> = header
            .strip_prefix("# keyassist-channels v1")
            .ok_or_else(|| fmt("missing header"))?
            .split_whitespace()
            .collect();
        let get = |name: &str| -> Result<usize, ChannelError> {
            fields
                .iter()
                .find_map(|f| f.strip_prefix(name).and_then(|r| r.strip_prefix('=')))
                .ok_or_else(|| fmt(&format!("header lacks {name}")))?
                .parse()
                .map_err(|_| fmt(&format!("bad {name}")))
        };
        let (n, n_a, n_b, m) = (get("n")?, get("n_tx_alice")?, get("n_tx_bob")?, get("n_eves")?);
        if lines.next() != Some("link,eve,subchannel,antenna,re,im") {
            return Err(fmt("missing column header"));
        }
        let zero = Complex64::new(0.0, 0.0);
        let mut set = ChannelSet {
            h_ab: vec![vec![zero; n_a]; n],
            h_ba: vec![vec![zero; n_b]; n],
            h_ae: vec![vec![vec![zero; n_a]; n]; m],
            h_be: vec![vec![vec![zero; n_b]; n]; m],
        };
        let mut count = 0;
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 6 {
                return Err(fmt(line));
            }
            let idx = |s: &str| s.parse::<usize>().map_err(|_| fmt(line));
            let val = |s: &str| s.parse::<f64>().map_err(|_| fmt(line));
            let (k, a) = (idx(cols[2])?, idx(cols[3])?);
            let x = Complex64::new(val(cols[4])?, val(cols[5])?);
            let slot = match cols[0] {
                "ab" => set.h_ab.get_mut(k).and_then(|v| v.get_mut(a)),
                "ba" => set.h_ba.get_mut(k).and_then(|v| v.get_mut(a)),
                "ae" => set
                    .h_ae
                    .get_mut(idx(cols[1])?)
                    .and_then(|h| h.get_mut(k))
                    .and_then(|v| v.get_mut(a)),
                "be" => set
                    .h_be
                    .get_mut(idx(cols[1])?)
                    .and_then(|h| h.get_mut(k))
                    .and_then(|v| v.get_mut(a)),
                _ => None,
            };
            *slot.ok_or_else(|| fmt(line))? = x;
            count += 1;
        }
        if count != n * (n_a + n_b) * (1 + m) {
            return Err(fmt("wrong number of entries"));
        }
        Ok(set)
    }
}

/// Draws [`ChannelSet`]s for one configuration, reusing the DFT table.
///
/// CIRs are drawn in a fixed order (A-B, B-A, then A-E_m and B-E_m for each
/// eavesdropper), so a seeded stream always yields the same sequence of sets.
#[derive(Debug, Clone)]
pub struct ChannelSampler {
    table: DftTable,
    n_taps: usize,
    n_tx_alice: usize,
    n_tx_bob: usize,
    n_eves: usize,
}

impl ChannelSampler {
    pub fn new(cfg: &Config) -> Self {
        Self {
            table: DftTable::new(cfg.n_subchannels, cfg.n_taps).expect("validated N >= L"),
            n_taps: cfg.n_taps,
            n_tx_alice: cfg.n_tx_alice,
            n_tx_bob: cfg.n_tx_bob,
            n_eves: cfg.n_eves,
        }
    }

    fn link<R: Rng + ?Sized>(&self, n_tx: usize, rng: &mut R) -> Vec<Vec<Complex64>> {
        let cir = generate_cir(n_tx, self.n_taps, rng);
        self.table.apply(&cir).expect("table sized for n_taps")
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ChannelSet {
        let h_ab = self.link(self.n_tx_alice, rng);
        let h_ba = self.link(self.n_tx_bob, rng);
        let mut h_ae = Vec::with_capacity(self.n_eves);
        let mut h_be = Vec::with_capacity(self.n_eves);
        for _ in 0..self.n_eves {
            h_ae.push(self.link(self.n_tx_alice, rng));
            h_be.push(self.link(self.n_tx_bob, rng));
        }
        ChannelSet {
            h_ab,
            h_ba,
            h_ae,
            h_be,
        }
    }
}
