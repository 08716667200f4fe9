//! Model files.
//!
//! Little-endian container: `MSTK`, u32 format version, u8 kind
//! (full/params/codebook), u64 model tag, u8 strategy, u8 sign-head flag,
//! seven u32 dims (input, hidden, latent, output, encoder hidden layers,
//! decoder hidden layers, K). Then, depending on kind, the normalization
//! statistics, the network tensors and the codebook tensors, all as
//! row-major f64.

use std::io::{Read, Write};

use ndarray::{Array1, Array2};
use serde::Serialize;

use super::{Codebook, Dense, Mlp, MlpParams, ModelDims, Quantizer, VqError};
use crate::descriptors::{FeatureTransform, NormStats, DIM};
use crate::frames::FrameStrategy;

pub const MAGIC: &[u8; 4] = b"MSTK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum FileKind {
    Full = 0,
    Params = 1,
    Codebook = 2,
}

impl FileKind {
    fn has_params(self) -> bool {
        self != FileKind::Codebook
    }

    fn has_codebook(self) -> bool {
        self != FileKind::Params
    }
}

fn strategy_byte(s: FrameStrategy) -> u8 {
    match s {
        FrameStrategy::Seq1D => 1,
        FrameStrategy::Topo2D => 2,
        FrameStrategy::Spatial3D => 3,
    }
}

struct Writer<W> {
    inner: W,
}

impl<W: Write> Writer<W> {
    fn u8(&mut self, x: u8) -> std::io::Result<()> {
        self.inner.write_all(&[x])
    }
    fn u32(&mut self, x: usize) -> Result<(), VqError> {
        let v = u32::try_from(x).map_err(|_| VqError::Format(format!("dimension {x} too large")))?;
        Ok(self.inner.write_all(&v.to_le_bytes())?)
    }
    fn u64(&mut self, x: u64) -> std::io::Result<()> {
        self.inner.write_all(&x.to_le_bytes())
    }
    fn f64s<'a>(&mut self, xs: impl IntoIterator<Item = &'a f64>) -> std::io::Result<()> {
        for x in xs {
            self.inner.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }
    fn mlp(&mut self, m: &Mlp<f64>) -> Result<(), VqError> {
        self.u32(m.layers.len())?;
        for l in &m.layers {
            self.u32(l.outputs())?;
            self.u32(l.inputs())?;
            self.f64s(l.weight.iter())?;
            self.f64s(l.bias.iter())?;
        }
        Ok(())
    }
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N], VqError> {
        let mut b = [0u8; N];
        self.inner.read_exact(&mut b).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => VqError::Format("truncated file".into()),
            _ => VqError::Io(e),
        })?;
        Ok(b)
    }
    fn u8(&mut self) -> Result<u8, VqError> {
        Ok(self.bytes::<1>()?[0])
    }
    fn u32(&mut self) -> Result<usize, VqError> {
        Ok(u32::from_le_bytes(self.bytes()?) as usize)
    }
    fn u64(&mut self) -> Result<u64, VqError> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
    fn f64(&mut self) -> Result<f64, VqError> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, VqError> {
        (0..n).map(|_| self.f64()).collect()
    }
    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Array2<f64>, VqError> {
        let data = self.f64s(rows * cols)?;
        Array2::from_shape_vec((rows, cols), data).map_err(|e| VqError::Format(e.to_string()))
    }
    fn mlp(&mut self, widths: &[usize]) -> Result<Mlp<f64>, VqError> {
        let n = self.u32()?;
        if n + 1 != widths.len() {
            return Err(VqError::Format(format!(
                "expected {} layers, found {n}",
                widths.len() - 1
            )));
        }
        let mut layers = Vec::with_capacity(n);
        for w in widths.windows(2) {
            let (out, inp) = (self.u32()?, self.u32()?);
            if (inp, out) != (w[0], w[1]) {
                return Err(VqError::Format(format!(
                    "layer shape {inp}->{out} does not match header {}->{}",
                    w[0], w[1]
                )));
            }
            let weight = self.matrix(out, inp)?;
            let bias = Array1::from(self.f64s(out)?);
            layers.push(Dense { weight, bias });
        }
        Ok(Mlp { layers })
    }
}

struct Header {
    kind: FileKind,
    tag: u64,
    strategy: FrameStrategy,
    dims: ModelDims,
    k: usize,
}

fn write_file<W: Write>(
    out: W,
    kind: FileKind,
    params: &MlpParams<f64>,
    codebook: &Codebook<f64>,
    strategy: FrameStrategy,
) -> Result<(), VqError> {
    let mut w = Writer { inner: out };
    let dims = params.dims();
    w.inner.write_all(MAGIC)?;
    w.u32(FORMAT_VERSION as usize)?;
    w.u8(kind as u8)?;
    let tag = if kind == FileKind::Codebook {
        codebook.model_tag
    } else {
        params.model_tag
    };
    w.u64(tag)?;
    w.u8(strategy_byte(strategy))?;
    w.u8(u8::from(dims.sign_head))?;
    for x in [
        dims.input,
        dims.hidden,
        dims.latent,
        dims.output,
        dims.encoder_hidden_layers,
        dims.decoder_hidden_layers,
        codebook.size(),
    ] {
        w.u32(x)?;
    }
    if kind.has_codebook() {
        let s = &codebook.norm_stats;
        for k in 0..DIM {
            w.u8(s.transforms[k].tag())?;
            w.f64s([&s.mean[k], &s.std[k]])?;
        }
        w.f64s([&s.length_sentinel, &s.angle_sentinel])?;
    }
    if kind.has_params() {
        w.mlp(&params.encoder)?;
        w.mlp(&params.decoder)?;
        if let Some(h) = &params.sign_head {
            w.mlp(h)?;
        }
    }
    if kind.has_codebook() {
        w.f64s(codebook.codes.iter())?;
        w.f64s(codebook.ema_counts.iter())?;
        w.f64s(codebook.ema_sums.iter())?;
    }
    w.inner.flush()?;
    Ok(())
}

fn read_header<R: Read>(r: &mut Reader<R>) -> Result<Header, VqError> {
    if &r.bytes::<4>()? != MAGIC {
        return Err(VqError::Format("bad magic bytes".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION as usize {
        return Err(VqError::Format(format!("unsupported format version {version}")));
    }
    let kind = match r.u8()? {
        0 => FileKind::Full,
        1 => FileKind::Params,
        2 => FileKind::Codebook,
        b => return Err(VqError::Format(format!("unknown file kind {b}"))),
    };
    let tag = r.u64()?;
    let strategy = match r.u8()? {
        1 => FrameStrategy::Seq1D,
        2 => FrameStrategy::Topo2D,
        3 => FrameStrategy::Spatial3D,
        b => return Err(VqError::Format(format!("unknown strategy byte {b}"))),
    };
    let sign_head = match r.u8()? {
        0 => false,
        1 => true,
        b => return Err(VqError::Format(format!("bad sign-head flag {b}"))),
    };
    let mut d = [0usize; 7];
    for x in &mut d {
        *x = r.u32()?;
    }
    let dims = ModelDims {
        input: d[0],
        hidden: d[1],
        latent: d[2],
        output: d[3],
        encoder_hidden_layers: d[4],
        decoder_hidden_layers: d[5],
        sign_head,
    };
    if dims.input != DIM || dims.latent == 0 || d[6] < 2 {
        return Err(VqError::Format(format!("implausible dims {dims:?}, K={}", d[6])));
    }
    Ok(Header {
        kind,
        tag,
        strategy,
        dims,
        k: d[6],
    })
}

/// Parts found in a file; which are present depends on its kind.
pub struct ModelFile {
    pub kind: FileKind,
    pub strategy: FrameStrategy,
    pub params: Option<MlpParams<f64>>,
    pub codebook: Option<Codebook<f64>>,
}

pub fn read_model<R: Read>(input: R) -> Result<ModelFile, VqError> {
    let mut r = Reader { inner: input };
    let h = read_header(&mut r)?;
    let mut stats = None;
    if h.kind.has_codebook() {
        let mut s = NormStats::identity();
        for k in 0..DIM {
            let t = r.u8()?;
            s.transforms[k] = FeatureTransform::from_tag(t)
                .ok_or_else(|| VqError::Format(format!("unknown feature transform {t}")))?;
            s.mean[k] = r.f64()?;
            s.std[k] = r.f64()?;
        }
        s.length_sentinel = r.f64()?;
        s.angle_sentinel = r.f64()?;
        stats = Some(s);
    }
    let mut params = None;
    if h.kind.has_params() {
        let encoder = r.mlp(&h.dims.encoder_widths())?;
        let decoder = r.mlp(&h.dims.decoder_widths())?;
        let sign_head = if h.dims.sign_head {
            Some(r.mlp(&h.dims.sign_widths())?)
        } else {
            None
        };
        params = Some(MlpParams {
            encoder,
            decoder,
            sign_head,
            model_tag: h.tag,
        });
    }
    let mut codebook = None;
    if let Some(norm_stats) = stats {
        let codes = r.matrix(h.k, h.dims.latent)?;
        let ema_counts = Array1::from(r.f64s(h.k)?);
        let ema_sums = r.matrix(h.k, h.dims.latent)?;
        codebook = Some(Codebook {
            codes,
            ema_counts,
            ema_sums,
            norm_stats,
            model_tag: h.tag,
        });
    }
    let mut rest = Vec::new();
    r.inner.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(VqError::Format(format!("{} trailing bytes", rest.len())));
    }
    Ok(ModelFile {
        kind: h.kind,
        strategy: h.strategy,
        params,
        codebook,
    })
}

pub fn write_quantizer<W: Write>(out: W, q: &Quantizer<f64>) -> Result<(), VqError> {
    write_file(out, FileKind::Full, &q.params, &q.codebook, q.strategy)
}

pub fn write_params<W: Write>(out: W, q: &Quantizer<f64>) -> Result<(), VqError> {
    write_file(out, FileKind::Params, &q.params, &q.codebook, q.strategy)
}

pub fn write_codebook<W: Write>(out: W, q: &Quantizer<f64>) -> Result<(), VqError> {
    write_file(out, FileKind::Codebook, &q.params, &q.codebook, q.strategy)
}

pub fn read_quantizer<R: Read>(input: R) -> Result<Quantizer<f64>, VqError> {
    let f = read_model(input)?;
    match (f.params, f.codebook) {
        (Some(p), Some(c)) => Quantizer::new(p, c, f.strategy),
        _ => Err(VqError::Format("not a full model file".into())),
    }
}

/// Joins a params file and a codebook file.
pub fn read_split<R1: Read, R2: Read>(params: R1, codebook: R2) -> Result<Quantizer<f64>, VqError> {
    let p = read_model(params)?;
    let c = read_model(codebook)?;
    if p.strategy != c.strategy {
        return Err(VqError::Format(format!(
            "params use strategy {} but codebook uses {}",
            p.strategy, c.strategy
        )));
    }
    match (p.params, c.codebook) {
        (Some(pp), Some(cc)) => Quantizer::new(pp, cc, p.strategy),
        _ => Err(VqError::Format("expected a params file and a codebook file".into())),
    }
}

/// Inspection view of a model; not read back.
#[derive(Serialize)]
pub struct JsonExport<'a> {
    pub format_version: u32,
    pub model_tag: String,
    pub strategy: FrameStrategy,
    pub dims: ModelDims,
    pub param_count: usize,
    pub params: &'a MlpParams<f64>,
    pub codebook: &'a Codebook<f64>,
}

pub fn export_json<W: Write>(out: W, q: &Quantizer<f64>) -> Result<(), VqError> {
    let view = JsonExport {
        format_version: FORMAT_VERSION,
        model_tag: format!("{:016x}", q.params.model_tag),
        strategy: q.strategy,
        dims: q.params.dims(),
        param_count: q.params.param_count(),
        params: &q.params,
        codebook: &q.codebook,
    };
    serde_json::to_writer_pretty(out, &view).map_err(|e| VqError::Format(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small(tag: u64, sign_head: bool) -> Quantizer<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(tag);
        let dims = ModelDims {
            hidden: 7,
            sign_head,
            ..ModelDims::default()
        };
        let params = MlpParams::init(&dims, tag, &mut rng);
        let codes = Array2::from_shape_fn((6, 5), |_| rng.gen_range(-1.0..1.0));
        let mut cb = Codebook::new(codes, NormStats::identity(), tag).unwrap();
        cb.ema_counts.mapv_inplace(|_| rng.gen::<f64>());
        cb.norm_stats.mean[0] = 0.123456789;
        Quantizer::new(params, cb, FrameStrategy::Spatial3D).unwrap()
    }

    #[test]
    fn full_file_round_trip_is_bit_exact() {
        for head in [true, false] {
            let q = small(9, head);
            let mut buf = Vec::new();
            write_quantizer(&mut buf, &q).unwrap();
            let back = read_quantizer(buf.as_slice()).unwrap();
            assert_eq!(back, q);
            let mut again = Vec::new();
            write_quantizer(&mut again, &back).unwrap();
            assert_eq!(buf, again);
        }
    }

    #[test]
    fn split_files_check_tags() {
        let a = small(1, true);
        let b = small(2, true);
        let (mut pa, mut cb) = (Vec::new(), Vec::new());
        write_params(&mut pa, &a).unwrap();
        write_codebook(&mut cb, &b).unwrap();
        assert!(matches!(
            read_split(pa.as_slice(), cb.as_slice()),
            Err(VqError::VersionMismatch { params: 1, codebook: 2 })
        ));
        let mut ca = Vec::new();
        write_codebook(&mut ca, &a).unwrap();
        assert_eq!(read_split(pa.as_slice(), ca.as_slice()).unwrap(), a);
    }

    #[test]
    fn corrupt_files_rejected() {
        let q = small(3, true);
        let mut buf = Vec::new();
        write_quantizer(&mut buf, &q).unwrap();
        assert!(matches!(read_quantizer(&buf[..buf.len() - 3]), Err(VqError::Format(_))));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_quantizer(bad.as_slice()), Err(VqError::Format(_))));
        let mut long = buf.clone();
        long.push(0);
        assert!(matches!(read_quantizer(long.as_slice()), Err(VqError::Format(_))));
    }

    #[test]
    fn json_export_parses() {
        let q = small(4, true);
        let mut buf = Vec::new();
        export_json(&mut buf, &q).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        assert_eq!(v["strategy"], "Spatial3D");
        assert_eq!(v["model_tag"], "0000000000000004");
    }
}
