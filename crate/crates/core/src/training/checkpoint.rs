//! Binary checkpoints.
//!
//! Layout: the 8-byte magic `OCTSPHCK`, a little-endian `u32` format version,
//! then tagged sections, each a 4-byte tag, a `u64` payload length and the
//! payload. Parameters, buffers and optimizer velocity are little-endian `f32`;
//! kernel geometry is `f64`.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kernel::KernelGeometry;
use crate::layers::Parameterized;
use crate::network::Network;
use crate::training::config::RunConfig;
use crate::training::sgd::Sgd;

pub const MAGIC: &[u8; 8] = b"OCTSPHCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    /// Epochs completed.
    pub epoch: u64,
    /// Reference kernel geometry per layer (1..=L).
    pub geometries: Vec<KernelGeometry>,
    pub params: Vec<(String, Vec<f32>)>,
    pub buffers: Vec<(String, Vec<f32>)>,
    pub velocity: Vec<Vec<f32>>,
    pub rng: RngState,
}

fn reference_geometries(config: &RunConfig) -> Result<Vec<KernelGeometry>> {
    (1..=config.network.depth())
        .map(|l| config.network.reference_geometry(l))
        .collect()
}

impl Checkpoint {
    pub fn capture(
        config: &RunConfig,
        net: &mut Network<f32>,
        opt: &Sgd<f32>,
        rng: &ChaCha8Rng,
        epoch: u64,
    ) -> Result<Self> {
        if net.config() != &config.network {
            return Err(Error::CheckpointMismatch("network differs from the run config".into()));
        }
        let mut params = Vec::new();
        net.visit_params(&mut |name, v, _| params.push((name.to_string(), v.to_vec())));
        let mut buffers = Vec::new();
        net.visit_buffers(&mut |name, v| buffers.push((name.to_string(), v.to_vec())));
        Ok(Checkpoint {
            config: config.clone(),
            epoch,
            geometries: reference_geometries(config)?,
            params,
            buffers,
            velocity: opt.velocity().to_vec(),
            rng: RngState::capture(rng),
        })
    }

    /// Rebuilds the network, optimizer and RNG.
    pub fn restore(&self) -> Result<(Network<f32>, Sgd<f32>, ChaCha8Rng)> {
        if reference_geometries(&self.config)? != self.geometries {
            return Err(Error::CheckpointMismatch(
                "stored kernel geometry disagrees with the stored config".into(),
            ));
        }
        let mut net = Network::new(self.config.network.clone(), &mut ChaCha8Rng::seed_from_u64(0))?;
        let mut err = None;
        let mut k = 0;
        net.visit_params(&mut |name, v, _| {
            match self.params.get(k) {
                Some((n, src)) if n == name && src.len() == v.len() => v.copy_from_slice(src),
                _ => {
                    err.get_or_insert(format!("parameter {name}"));
                }
            }
            k += 1;
        });
        if k != self.params.len() {
            err.get_or_insert("parameter count".into());
        }
        let mut k = 0;
        net.visit_buffers(&mut |name, v| {
            match self.buffers.get(k) {
                Some((n, src)) if n == name && src.len() == v.len() => v.copy_from_slice(src),
                _ => {
                    err.get_or_insert(format!("buffer {name}"));
                }
            }
            k += 1;
        });
        if k != self.buffers.len() {
            err.get_or_insert("buffer count".into());
        }
        if !self.velocity.is_empty()
            && (self.velocity.len() != self.params.len()
                || self.velocity.iter().zip(&self.params).any(|(v, (_, p))| v.len() != p.len()))
        {
            err.get_or_insert("optimizer state".into());
        }
        if let Some(what) = err {
            return Err(Error::CheckpointMismatch(format!("{what} does not match the network")));
        }
        let mut opt = Sgd::new(self.config.train.momentum);
        opt.set_velocity(self.velocity.clone());
        Ok((net, opt, self.rng.restore()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());

        section(&mut out, b"CONF", self.config.to_text().as_bytes());
        section(&mut out, b"EPOC", &self.epoch.to_le_bytes());

        let mut w = Writer::default();
        w.u32(self.geometries.len() as u32);
        for g in &self.geometries {
            w.u32(g.n() as u32);
            w.u32(g.p() as u32);
            w.u32(g.q() as u32);
            w.f64(g.rho());
            for edges in [g.theta_edges(), g.phi_edges(), g.r_edges()] {
                w.u32(edges.len() as u32);
                edges.iter().for_each(|&e| w.f64(e));
            }
        }
        section(&mut out, b"GEOM", &w.0);

        for (tag, tensors) in [(b"PARM", &self.params), (b"BUFR", &self.buffers)] {
            let mut w = Writer::default();
            w.u32(tensors.len() as u32);
            for (name, v) in tensors {
                w.u32(name.len() as u32);
                w.0.extend_from_slice(name.as_bytes());
                w.f32s(v);
            }
            section(&mut out, tag, &w.0);
        }

        let mut w = Writer::default();
        w.u32(self.velocity.len() as u32);
        self.velocity.iter().for_each(|v| w.f32s(v));
        section(&mut out, b"OPTM", &w.0);

        let mut w = Writer::default();
        w.0.extend_from_slice(&self.rng.seed);
        w.u64(self.rng.stream);
        w.0.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        section(&mut out, b"RNGS", &w.0);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let mut config = None;
        let mut epoch = None;
        let mut geom_raw = None;
        let mut params = None;
        let mut buffers = None;
        let mut velocity = None;
        let mut rng = None;
        while r.pos < bytes.len() {
            let tag: [u8; 4] = r.take(4)?.try_into().unwrap();
            let len = r.u64()? as usize;
            let mut s = Reader {
                buf: r.take(len)?,
                pos: 0,
            };
            match &tag {
                b"CONF" => {
                    let text = std::str::from_utf8(s.buf)
                        .map_err(|_| Error::Checkpoint("config is not UTF-8".into()))?;
                    config = Some(RunConfig::parse(text)?);
                    s.pos = s.buf.len();
                }
                b"EPOC" => epoch = Some(s.u64()?),
                b"GEOM" => {
                    let count = s.u32()? as usize;
                    let mut gs = Vec::with_capacity(count.min(64));
                    for _ in 0..count {
                        let (n, p, q) = (s.u32()? as usize, s.u32()? as usize, s.u32()? as usize);
                        let rho = s.f64()?;
                        let mut edges = [Vec::new(), Vec::new(), Vec::new()];
                        for e in edges.iter_mut() {
                            let k = s.u32()? as usize;
                            *e = (0..k).map(|_| s.f64()).collect::<Result<_>>()?;
                        }
                        gs.push((n, p, q, rho, edges));
                    }
                    geom_raw = Some(gs);
                }
                b"PARM" | b"BUFR" => {
                    let count = s.u32()? as usize;
                    let mut ts = Vec::with_capacity(count.min(1024));
                    for _ in 0..count {
                        let nlen = s.u32()? as usize;
                        let name = String::from_utf8(s.take(nlen)?.to_vec())
                            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
                        ts.push((name, s.f32s()?));
                    }
                    if &tag == b"PARM" {
                        params = Some(ts);
                    } else {
                        buffers = Some(ts);
                    }
                }
                b"OPTM" => {
                    let count = s.u32()? as usize;
                    velocity = Some((0..count).map(|_| s.f32s()).collect::<Result<Vec<_>>>()?);
                }
                b"RNGS" => {
                    let seed: [u8; 32] = s.take(32)?.try_into().unwrap();
                    let stream = s.u64()?;
                    let word_pos = u128::from_le_bytes(s.take(16)?.try_into().unwrap());
                    rng = Some(RngState { seed, stream, word_pos });
                }
                _ => {
                    return Err(Error::Checkpoint(format!(
                        "unknown section '{}'",
                        String::from_utf8_lossy(&tag)
                    )))
                }
            }
            if s.pos != s.buf.len() {
                return Err(Error::Checkpoint("trailing bytes inside a section".into()));
            }
        }
        let missing = |name: &str| Error::Checkpoint(format!("missing {name} section"));
        let config = config.ok_or_else(|| missing("CONF"))?;
        let geometries = geom_raw
            .ok_or_else(|| missing("GEOM"))?
            .into_iter()
            .map(|(n, p, q, _rho, [t, f, r])| {
                let g = KernelGeometry::from_edges(t, f, r)?;
                if (g.n(), g.p(), g.q()) != (n, p, q) {
                    return Err(Error::Checkpoint("geometry bin counts disagree with edges".into()));
                }
                Ok(g)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Checkpoint {
            config,
            epoch: epoch.ok_or_else(|| missing("EPOC"))?,
            geometries,
            params: params.ok_or_else(|| missing("PARM"))?,
            buffers: buffers.ok_or_else(|| missing("BUFR"))?,
            velocity: velocity.ok_or_else(|| missing("OPTM"))?,
            rng: rng.ok_or_else(|| missing("RNGS"))?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = std::fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Checkpoint::from_bytes(&bytes)
    }
}

fn section(out: &mut Vec<u8>, tag: &[u8; 4], payload: &[u8]) {
    out.extend_from_slice(tag);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32s(&mut self, v: &[f32]) {
        self.u64(v.len() as u64);
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32s(&mut self) -> Result<Vec<f32>> {
        let n = self.u64()? as usize;
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("bad length".into()))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}
